//! Deterministic ground-truth world.
//!
//! The simulator owns the hidden dynamics: the learner only sees heightmaps,
//! grasp success and landing positions. Everything is driven by a seeded
//! ChaCha stream, so a (seed, action sequence) pair replays bit for bit.

use std::f64::consts::TAU;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{GraspAction, ThrowParams};
use crate::scene::{ObjectKind, ObjectModel, Pose2D, Vec3, WorkspaceConfig};

const MAX_PLACEMENT_ATTEMPTS: usize = 4000;
/// Attempts at a free spot on the bin floor before stacking.
const MAX_CLEAR_ATTEMPTS: usize = 1000;

/// Mean and standard deviation used to normalize one heightmap channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f32,
    pub std: f32,
}

/// Tunables of the ground-truth world that are not object properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Probability that a geometrically valid grasp still slips.
    pub grasp_failure_prob: f64,
    /// Footprint dilation accepted by the gripper (m).
    pub gripper_half_width: f64,
    /// Tolerance on the jaw axis around perpendicular-to-object-axis (deg).
    pub grasp_angle_tolerance_deg: f64,
    /// Fixed RK4 step for thrown objects (s).
    pub throw_dt: f64,
    pub max_flight_time: f64,
    /// Gap enforced between footprints when dropping objects (m).
    pub placement_clearance: f64,
    pub height_norm: ChannelStats,
    pub intensity_norm: ChannelStats,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            grasp_failure_prob: 0.02,
            gripper_half_width: 0.02,
            grasp_angle_tolerance_deg: 30.0,
            throw_dt: 1e-3,
            max_flight_time: 10.0,
            placement_clearance: 0.0,
            height_norm: ChannelStats { mean: 0.01, std: 0.015 },
            intensity_norm: ChannelStats { mean: 0.15, std: 0.3 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedObject {
    pub id: usize,
    pub model: Arc<ObjectModel>,
    pub pose: Pose2D,
    /// Extra elevation of the resting surface (stacked objects), m.
    pub lift: f64,
}

impl PlacedObject {
    /// World height of the object's top surface above (wx, wy).
    pub fn top_at(&self, wx: f64, wy: f64) -> Option<f64> {
        let (lx, ly) = self.pose.to_local(wx, wy);
        self.model.top_at(lx, ly).map(|z| z + self.model.rest_offset() + self.lift)
    }

    /// True when the footprints intersect (ignoring height).
    pub fn overlaps(&self, other: &PlacedObject, clearance: f64) -> bool {
        self.obbs().any(|a| other.obbs().any(|b| a.overlaps(&b, clearance)))
    }

    fn obbs(&self) -> impl Iterator<Item = Obb> + '_ {
        self.model.primitives.iter().map(move |p| {
            let c = p.center();
            let (hx, hy) = p.footprint_half();
            let (cx, cy) = self.pose.to_world(c.x, c.y);
            Obb { cx, cy, yaw: self.pose.yaw, hx, hy }
        })
    }
}

/// Objects resting in the bin plus the random stream that drives the world.
#[derive(Debug, Clone, PartialEq)]
pub struct BinState {
    pub objects: Vec<PlacedObject>,
    catalog: Vec<Arc<ObjectModel>>,
    per_episode: usize,
    base_seed: u64,
    episode: u64,
    next_id: usize,
    rng: ChaCha8Rng,
}

impl BinState {
    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    /// State holding exactly `objects`, for hand-built scenes.
    pub fn from_objects(objects: Vec<PlacedObject>, seed: u64) -> Self {
        let catalog = objects.iter().map(|o| o.model.clone()).collect();
        let next_id = objects.iter().map(|o| o.id + 1).max().unwrap_or(0);
        let per_episode = objects.len().max(1);
        Self {
            objects,
            catalog,
            per_episode,
            base_seed: seed,
            episode: 0,
            next_id,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Normalized two-channel (height, intensity) top-down image of the bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightmap {
    pub width: usize,
    pub height: usize,
    /// Raw heights (m), row-major, rows along +y.
    pub raw_height: Vec<f32>,
    pub raw_intensity: Vec<f32>,
    /// Channel-major normalized data: height plane then intensity plane.
    pub data: Vec<f32>,
    pub stats: [ChannelStats; 2],
}

impl Heightmap {
    pub const CHANNELS: usize = 2;

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Normalized value an empty cell takes in each channel.
    pub fn background(&self) -> [f32; 2] {
        [(0.0 - self.stats[0].mean) / self.stats[0].std, (0.0 - self.stats[1].mean) / self.stats[1].std]
    }

    pub fn height_at(&self, row: usize, col: usize) -> f32 {
        self.raw_height[row * self.width + col]
    }

    /// Copy holding only the normalized data, for long-lived storage.
    /// The raw channels of the copy are empty.
    pub fn compact(&self) -> Heightmap {
        Heightmap { raw_height: Vec::new(), raw_intensity: Vec::new(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspOutcome {
    pub success: bool,
    pub object_id: Option<usize>,
    pub object: Option<Arc<ObjectModel>>,
    /// Signed distance from the CoM to the grasp point along the object axis (m).
    pub offset: f64,
    /// Grasp point in the object frame (x, y), for histograms.
    pub local_point: Option<[f64; 2]>,
}

impl GraspOutcome {
    pub fn failed() -> Self {
        Self { success: false, object_id: None, object: None, offset: 0.0, local_point: None }
    }

    pub fn kind(&self) -> Option<ObjectKind> {
        self.object.as_ref().map(|o| o.kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThrowOutcome {
    pub landing: Vec3,
    pub in_target_box: bool,
    /// (t, position) samples, when tracing is enabled.
    pub trace: Option<Vec<(f64, Vec3)>>,
}

/// Writes a flight trace as `t,x,y,z` CSV.
pub fn write_trace_csv<W: Write>(trace: &[(f64, Vec3)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,x,y,z")?;
    for (t, p) in trace {
        writeln!(out, "{t:.4},{:.6},{:.6},{:.6}", p.x, p.y, p.z)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Obb {
    cx: f64,
    cy: f64,
    yaw: f64,
    hx: f64,
    hy: f64,
}

impl Obb {
    fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let mut out = [(0.0, 0.0); 4];
        for (i, (sx, sy)) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].into_iter().enumerate() {
            let (lx, ly) = (sx * self.hx, sy * self.hy);
            out[i] = (self.cx + c * lx - s * ly, self.cy + s * lx + c * ly);
        }
        out
    }

    /// Separating-axis test, with `clearance` added to both boxes.
    fn overlaps(&self, other: &Obb, clearance: f64) -> bool {
        let axes = |o: &Obb| {
            let (s, c) = o.yaw.sin_cos();
            [(c, s), (-s, c)]
        };
        let project = |o: &Obb, (ax, ay): (f64, f64)| {
            let (s, c) = o.yaw.sin_cos();
            let center = o.cx * ax + o.cy * ay;
            let extent = (o.hx * (c * ax + s * ay)).abs() + (o.hy * (-s * ax + c * ay)).abs();
            (center, extent)
        };
        for axis in axes(self).into_iter().chain(axes(other)) {
            let (ca, ea) = project(self, axis);
            let (cb, eb) = project(other, axis);
            if (ca - cb).abs() >= ea + eb + clearance {
                return false;
            }
        }
        true
    }
}

/// Ground-truth world: workspace, tunables and the current bin.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub ws: WorkspaceConfig,
    pub params: SimParams,
    pub state: BinState,
}

impl Simulator {
    pub fn new(ws: WorkspaceConfig, params: SimParams, objects: &[ObjectModel], n: usize, seed: u64) -> Result<Self> {
        ws.validate()?;
        let state = spawn_bin(&ws, &params, objects, n, seed)?;
        Ok(Self { ws, params, state })
    }

    pub fn render_heightmap(&self) -> Heightmap {
        render_heightmap(&self.ws, &self.params, &self.state)
    }

    pub fn execute_grasp(&mut self, action: &GraspAction) -> GraspOutcome {
        execute_grasp(&self.ws, &self.params, &mut self.state, action)
    }

    pub fn execute_throw(&self, grasp: &GraspOutcome, params: &ThrowParams, target_box: usize) -> Result<ThrowOutcome> {
        execute_throw(&self.ws, &self.params, grasp, params, target_box, false)
    }

    pub fn reset_if_empty(&mut self) -> Result<bool> {
        reset_if_empty(&self.ws, &self.params, &mut self.state)
    }

    pub fn reset(&mut self) -> Result<()> {
        reset(&self.ws, &self.params, &mut self.state)
    }
}

/// Drops `n` objects drawn uniformly from `objects` at random poses.
///
/// Each object first looks for free floor space by rejection sampling; if
/// none turns up it rests on top of the objects beneath its footprint, so
/// objects never interpenetrate.
pub fn spawn_bin(ws: &WorkspaceConfig, params: &SimParams, objects: &[ObjectModel], n: usize, seed: u64) -> Result<BinState> {
    if n == 0 || objects.is_empty() {
        return Err(Error::Config("spawn_bin needs n >= 1 and at least one object model".into()));
    }
    let catalog: Vec<Arc<ObjectModel>> = objects.iter().cloned().map(Arc::new).collect();
    let mut state = BinState {
        objects: Vec::with_capacity(n),
        catalog,
        per_episode: n,
        base_seed: seed,
        episode: 0,
        next_id: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    fill_bin(ws, params, &mut state)?;
    Ok(state)
}

fn fill_bin(ws: &WorkspaceConfig, params: &SimParams, state: &mut BinState) -> Result<()> {
    let (x0, y0) = (ws.bin_origin[0], ws.bin_origin[1]);
    let (x1, y1) = (x0 + ws.bin_extent[0], y0 + ws.bin_extent[1]);
    for placed in 0..state.per_episode {
        let model = state.catalog[state.rng.gen_range(0..state.catalog.len())].clone();
        let mut clear = None;
        let mut fallback = None;
        for attempt in 0..MAX_PLACEMENT_ATTEMPTS {
            if attempt >= MAX_CLEAR_ATTEMPTS && fallback.is_some() {
                break;
            }
            let pose = Pose2D::new(state.rng.gen_range(x0..x1), state.rng.gen_range(y0..y1), state.rng.gen_range(0.0..TAU));
            let candidate = PlacedObject { id: state.next_id, model: model.clone(), pose, lift: 0.0 };
            let inside = candidate
                .obbs()
                .flat_map(|b| b.corners())
                .all(|(cx, cy)| cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1);
            if !inside {
                continue;
            }
            if !state.objects.iter().any(|other| candidate.overlaps(other, params.placement_clearance)) {
                clear = Some(candidate);
                break;
            }
            fallback.get_or_insert(candidate);
        }
        // No free floor space: the object comes to rest on top of the pile.
        let obj = match (clear, fallback) {
            (Some(obj), _) => obj,
            (None, Some(mut obj)) => {
                obj.lift = support_height(&obj, &state.objects);
                obj
            }
            (None, None) => return Err(Error::BinTooSmall { placed, requested: state.per_episode }),
        };
        state.next_id += 1;
        state.objects.push(obj);
    }
    Ok(())
}

/// Height of the highest object whose footprint `obj` would rest on.
fn support_height(obj: &PlacedObject, below: &[PlacedObject]) -> f64 {
    below
        .iter()
        .filter(|o| obj.overlaps(o, 0.0))
        .map(|o| o.lift + o.model.height())
        .fold(0.0, f64::max)
}

/// Lets objects left hanging by a removed support drop onto what remains.
fn settle(objects: &mut [PlacedObject]) {
    for i in 0..objects.len() {
        if objects[i].lift > 0.0 {
            let (below, rest) = objects.split_at_mut(i);
            rest[0].lift = support_height(&rest[0], below);
        }
    }
}

/// A fresh drop of the same catalog and object count from another seed.
pub fn respawn(ws: &WorkspaceConfig, params: &SimParams, like: &BinState, seed: u64) -> Result<BinState> {
    let mut state = BinState {
        objects: Vec::with_capacity(like.per_episode),
        catalog: like.catalog.clone(),
        per_episode: like.per_episode,
        base_seed: seed,
        episode: 0,
        next_id: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    fill_bin(ws, params, &mut state)?;
    Ok(state)
}

/// Orthographic top-down render: max height per cell, intensity of the topmost object.
pub fn render_heightmap(ws: &WorkspaceConfig, params: &SimParams, state: &BinState) -> Heightmap {
    let (w, h) = (ws.width(), ws.height());
    let mut raw_height = vec![0f32; w * h];
    let mut raw_intensity = vec![0f32; w * h];
    let mut best = vec![f64::NEG_INFINITY; w * h];
    for obj in &state.objects {
        // Restrict to the pixel rectangle covering the object's footprint.
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (cx, cy) in obj.obbs().flat_map(|b| b.corners()) {
            lo_x = lo_x.min(cx);
            lo_y = lo_y.min(cy);
            hi_x = hi_x.max(cx);
            hi_y = hi_y.max(cy);
        }
        let col_range = pixel_span(lo_x - ws.bin_origin[0], hi_x - ws.bin_origin[0], ws.resolution, w);
        let row_range = pixel_span(lo_y - ws.bin_origin[1], hi_y - ws.bin_origin[1], ws.resolution, h);
        for row in row_range.clone() {
            for col in col_range.clone() {
                let (wx, wy) = ws.pixel_center(row, col);
                if let Some(top) = obj.top_at(wx, wy) {
                    let i = row * w + col;
                    if top > best[i] {
                        best[i] = top;
                        raw_height[i] = top.max(0.0) as f32;
                        raw_intensity[i] = obj.model.visual_intensity as f32;
                    }
                }
            }
        }
    }
    let stats = [params.height_norm, params.intensity_norm];
    let mut data = Vec::with_capacity(2 * w * h);
    data.extend(raw_height.iter().map(|&v| (v - stats[0].mean) / stats[0].std));
    data.extend(raw_intensity.iter().map(|&v| (v - stats[1].mean) / stats[1].std));
    Heightmap { width: w, height: h, raw_height, raw_intensity, data, stats }
}

fn pixel_span(lo: f64, hi: f64, res: f64, n: usize) -> std::ops::Range<usize> {
    let a = ((lo / res).floor() - 1.0).max(0.0) as usize;
    let b = (((hi / res).ceil() + 1.0).max(0.0) as usize).min(n);
    a.min(b)..b
}

/// Top-down parallel-jaw grasp at the action's pixel and angle.
///
/// Succeeds when the point is within `gripper_half_width` of a footprint, the
/// jaws close across (not along) elongated objects, and the slip draw passes.
pub fn execute_grasp(ws: &WorkspaceConfig, params: &SimParams, state: &mut BinState, action: &GraspAction) -> GraspOutcome {
    let (wx, wy) = ws.pixel_center(action.row, action.col);
    let angle = action.angle(ws.num_rotations);
    let slip = params.grasp_failure_prob > 0.0 && state.rng.gen::<f64>() < params.grasp_failure_prob;

    let mut chosen: Option<(usize, f64, f64)> = None;
    for (idx, obj) in state.objects.iter().enumerate() {
        let (lx, ly) = obj.pose.to_local(wx, wy);
        let dist = obj.model.footprint_distance(lx, ly);
        if dist > params.gripper_half_width {
            continue;
        }
        let top = obj.top_at(wx, wy).unwrap_or(f64::NEG_INFINITY);
        let better = match chosen {
            None => true,
            Some((_, d, t)) => dist < d || (dist == d && top > t),
        };
        if better {
            chosen = Some((idx, dist, top));
        }
    }
    let Some((idx, _, _)) = chosen else {
        return GraspOutcome::failed();
    };
    let obj = &state.objects[idx];
    if obj.model.is_elongated() && !jaws_across_axis(obj, angle, params.grasp_angle_tolerance_deg) {
        return GraspOutcome::failed();
    }
    if slip {
        return GraspOutcome::failed();
    }

    let obj = state.objects.remove(idx);
    settle(&mut state.objects);
    let (lx, ly) = obj.pose.to_local(wx, wy);
    let (lo, hi) = obj.model.axial_range();
    let offset = ((lx - obj.model.com.x) * obj.model.axis.x + (ly - obj.model.com.y) * obj.model.axis.y).clamp(lo, hi);
    GraspOutcome {
        success: true,
        object_id: Some(obj.id),
        object: Some(obj.model),
        offset,
        local_point: Some([lx, ly]),
    }
}

/// True when the jaw closing direction is within `tol_deg` of perpendicular to the object axis.
pub fn jaws_across_axis(obj: &PlacedObject, jaw_angle: f64, tol_deg: f64) -> bool {
    let axis_yaw = obj.pose.yaw + obj.model.axis.y.atan2(obj.model.axis.x);
    let cos_between = (jaw_angle - axis_yaw).cos().abs();
    cos_between <= tol_deg.to_radians().sin() + 1e-12
}

/// Flies the grasped object under gravity, quadratic drag and the lever effect.
pub fn execute_throw(
    ws: &WorkspaceConfig,
    params: &SimParams,
    grasp: &GraspOutcome,
    throw: &ThrowParams,
    target_box: usize,
    record_trace: bool,
) -> Result<ThrowOutcome> {
    let model = match (&grasp.object, grasp.success) {
        (Some(m), true) => m,
        _ => return Err(Error::Config("execute_throw requires a successful grasp".into())),
    };
    if !(throw.velocity.norm() > 0.0) {
        return Err(Error::Config("release velocity must be non-zero".into()));
    }
    if target_box >= ws.boxes.len() {
        return Err(Error::Config(format!("target box {target_box} out of range")));
    }
    let gain = (1.0 + model.lever_coeff * grasp.offset).max(0.0);
    let landing = fly_with_drag(
        throw.release,
        throw.velocity * gain,
        model.drag_coeff,
        ws.gravity,
        ws.landing_height,
        params.throw_dt,
        params.max_flight_time,
        record_trace,
    )?;
    let in_target_box = ws.in_box(target_box, landing.0);
    Ok(ThrowOutcome { landing: landing.0, in_target_box, trace: landing.1 })
}

/// RK4 integration of `u' = g - β‖u‖u` until the object descends through `plane`.
#[allow(clippy::too_many_arguments)]
pub fn fly_with_drag(
    start: Vec3,
    velocity: Vec3,
    drag: f64,
    gravity: f64,
    plane: f64,
    dt: f64,
    max_time: f64,
    record_trace: bool,
) -> Result<(Vec3, Option<Vec<(f64, Vec3)>>)> {
    let accel = |u: Vec3| Vec3::new(0.0, 0.0, -gravity) - u * (drag * u.norm());
    let mut trace = record_trace.then(|| vec![(0.0, start)]);
    let (mut x, mut u, mut t) = (start, velocity, 0.0);
    while t < max_time {
        let (k1x, k1u) = (u, accel(u));
        let (k2x, k2u) = (u + k1u * (dt / 2.0), accel(u + k1u * (dt / 2.0)));
        let (k3x, k3u) = (u + k2u * (dt / 2.0), accel(u + k2u * (dt / 2.0)));
        let (k4x, k4u) = (u + k3u * dt, accel(u + k3u * dt));
        let nx = x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
        let nu = u + (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (dt / 6.0);
        t += dt;
        if x.z >= plane && nx.z < plane {
            let f = (x.z - plane) / (x.z - nx.z);
            let p = Vec3::new(x.x + f * (nx.x - x.x), x.y + f * (nx.y - x.y), plane);
            if let Some(tr) = trace.as_mut() {
                tr.push((t - dt + f * dt, p));
            }
            return Ok((p, trace));
        }
        x = nx;
        u = nu;
        if let Some(tr) = trace.as_mut() {
            tr.push((t, x));
        }
    }
    Err(Error::FlightTimeout(max_time))
}

/// Refills an empty bin from the next seed in the episode stream.
pub fn reset_if_empty(ws: &WorkspaceConfig, params: &SimParams, state: &mut BinState) -> Result<bool> {
    if !state.objects.is_empty() {
        return Ok(false);
    }
    reset(ws, params, state)?;
    Ok(true)
}

/// Clears the bin and respawns it from the next seed of the episode stream.
pub fn reset(ws: &WorkspaceConfig, params: &SimParams, state: &mut BinState) -> Result<()> {
    state.objects.clear();
    state.episode += 1;
    state.rng = ChaCha8Rng::seed_from_u64(state.base_seed.wrapping_add(state.episode));
    fill_bin(ws, params, state)
}
