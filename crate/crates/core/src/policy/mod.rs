//! Pixel-wise grasp and throw predictions over a stack of rotated heightmaps.
//!
//! Each rotation `k` of the input is pushed through the trunk; the target's
//! conditioning scalar is tiled onto the trunk features as constant channels;
//! the grasp head (sigmoid) and throw head (linear) then produce dense maps
//! that are rotated back into the heightmap frame.

mod network;
mod rotation;

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use network::{ArchConfig, HeadCache, Network, TrunkCache};
pub use rotation::{rotation_angle, RotationSet};

use crate::ballistics;
use crate::error::{Error, Result};
use crate::scene::{Vec3, WorkspaceConfig};
use crate::simulator::Heightmap;
use crate::tensornet::{bce_loss, huber_loss, load_params, save_params, Scalar, Tensor4};

/// Which predictor drives the throw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyVariant {
    /// Ballistic estimate plus a learned residual.
    ResidualPhysics,
    /// Throw head predicts the planar speed directly from the throw distance.
    Regression,
    /// Regression whose throw head is first fitted to the ballistic estimate.
    #[serde(rename = "regression-pop")]
    RegressionPoP,
    /// Ballistic estimate only; no throw head.
    PhysicsOnly,
}

impl PolicyVariant {
    pub const ALL: [PolicyVariant; 4] =
        [PolicyVariant::ResidualPhysics, PolicyVariant::Regression, PolicyVariant::RegressionPoP, PolicyVariant::PhysicsOnly];

    pub fn has_throw_head(self) -> bool {
        self != PolicyVariant::PhysicsOnly
    }

    /// Conditioned on the ballistic speed rather than the throw distance.
    pub fn physics_conditioned(self) -> bool {
        matches!(self, PolicyVariant::ResidualPhysics | PolicyVariant::PhysicsOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyVariant::ResidualPhysics => "residual-physics",
            PolicyVariant::Regression => "regression",
            PolicyVariant::RegressionPoP => "regression-pop",
            PolicyVariant::PhysicsOnly => "physics-only",
        }
    }
}

impl std::fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Top-down grasp at a heightmap pixel with jaw angle from the rotation bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraspAction {
    pub rotation: usize,
    pub row: usize,
    pub col: usize,
}

impl GraspAction {
    /// Jaw closing direction in the world frame (rad).
    pub fn angle(&self, num_rotations: usize) -> f64 {
        rotation_angle(self.rotation, num_rotations)
    }

    /// Index into a rotation-major (R, H, W) map.
    pub fn flat_index(&self, height: usize, width: usize) -> usize {
        (self.rotation * height + self.row) * width + self.col
    }

    pub fn from_flat_index(index: usize, height: usize, width: usize) -> Self {
        let plane = height * width;
        Self { rotation: index / plane, row: index % plane / width, col: index % width }
    }

    /// 3D grasp point: pixel centre at the observed surface height.
    pub fn position(&self, ws: &WorkspaceConfig, hm: &Heightmap) -> Vec3 {
        let (x, y) = ws.pixel_center(self.row, self.col);
        Vec3::new(x, y, hm.height_at(self.row, self.col) as f64)
    }
}

/// Release state handed to the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrowParams {
    pub release: Vec3,
    pub velocity: Vec3,
    pub planar_speed: f64,
}

impl From<ballistics::ReleasePlan> for ThrowParams {
    fn from(p: ballistics::ReleasePlan) -> Self {
        Self { release: p.release, velocity: p.velocity, planar_speed: p.planar_speed }
    }
}

/// Dense predictions in the common heightmap frame, rotation-major (R, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub rotations: usize,
    pub height: usize,
    pub width: usize,
    pub qg: Vec<f64>,
    pub qt: Option<Vec<f64>>,
    pub grasp_conditioning: f64,
    pub throw_conditioning: f64,
}

impl PolicyOutput {
    pub fn grasp_at(&self, a: &GraspAction) -> f64 {
        self.qg[a.flat_index(self.height, self.width)]
    }

    pub fn throw_at(&self, a: &GraspAction) -> Option<f64> {
        self.qt.as_ref().map(|q| q[a.flat_index(self.height, self.width)])
    }

    /// Highest grasp probability; ties go to the lowest flat index.
    pub fn greedy_action(&self) -> GraspAction {
        let mut best = 0;
        for (i, &v) in self.qg.iter().enumerate() {
            if v > self.qg[best] {
                best = i;
            }
        }
        GraspAction::from_flat_index(best, self.height, self.width)
    }
}

/// Scalar tiled onto the trunk features for a throw aimed at `target`:
/// the ballistic planar speed, or the horizontal throw distance for the
/// regression variants.
pub fn conditioning(variant: PolicyVariant, target: Vec3, ws: &WorkspaceConfig) -> Result<f64> {
    if variant.physics_conditioned() {
        Ok(ballistics::solve_release(target, ws)?.planar_speed)
    } else {
        ballistics::throw_distance(target, ws)
    }
}

/// With probability `epsilon`, a uniformly random (rotation, pixel).
pub fn explore_grasp<R: Rng>(epsilon: f64, rotations: usize, height: usize, width: usize, rng: &mut R) -> Option<GraspAction> {
    if rng.gen::<f64>() < epsilon {
        let i = rng.gen_range(0..rotations * height * width);
        Some(GraspAction::from_flat_index(i, height, width))
    } else {
        None
    }
}

/// ε-greedy grasp selection over all rotations and pixels.
pub fn select_action<R: Rng>(out: &PolicyOutput, epsilon: f64, rng: &mut R) -> GraspAction {
    explore_grasp(epsilon, out.rotations, out.height, out.width, rng).unwrap_or_else(|| out.greedy_action())
}

/// Planar speeds at or below zero are replaced by this and flagged.
pub const MIN_PLANAR_SPEED: f64 = 0.1;
/// Exploratory throws draw the speed from this multiple of the ballistic speed.
pub const EXPLORE_SPEED_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposedThrow {
    pub params: ThrowParams,
    /// Ballistic planar speed for the target.
    pub ballistic: f64,
    /// Raw throw-head value at the grasp (residual or absolute speed).
    pub predicted: Option<f64>,
    pub exploratory: bool,
}

/// Release parameters for `target` from the throw-head value at the grasp.
pub fn compose_throw<R: Rng>(
    predicted: Option<f64>,
    target: Vec3,
    variant: PolicyVariant,
    epsilon: f64,
    ws: &WorkspaceConfig,
    rng: &mut R,
) -> Result<ComposedThrow> {
    let ballistic = ballistics::solve_release(target, ws)?.planar_speed;
    let need = || predicted.ok_or(Error::MissingLabel("throw-head prediction"));
    let mut speed = match variant {
        PolicyVariant::PhysicsOnly => ballistic,
        PolicyVariant::ResidualPhysics => ballistic + need()?,
        PolicyVariant::Regression | PolicyVariant::RegressionPoP => need()?,
    };
    let mut exploratory = false;
    if variant.has_throw_head() && rng.gen::<f64>() < epsilon {
        speed = ballistic * rng.gen_range(EXPLORE_SPEED_RANGE.0..EXPLORE_SPEED_RANGE.1);
        exploratory = true;
    }
    if !(speed > 0.0) {
        speed = MIN_PLANAR_SPEED;
        exploratory = true;
    }
    let plan = ballistics::plan_with_speed(target, ws, speed)?;
    Ok(ComposedThrow { params: plan.into(), ballistic, predicted, exploratory })
}

/// Loss of one transition given the predicted values at its action:
/// BCE on the grasp probability plus `y` times Huber on the throw value.
pub fn sample_loss(qg: f64, qt: Option<f64>, y: f64, throw_target: Option<f64>) -> f64 {
    let mut loss = bce_loss(qg, y).0;
    if y > 0.0 {
        if let (Some(q), Some(t)) = (qt, throw_target) {
            loss += y * huber_loss(q, t).0;
        }
    }
    loss
}

/// Everything `loss_and_backward` needs about one stored step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub action: GraspAction,
    pub grasp_conditioning: f64,
    pub throw_conditioning: f64,
    /// Grasp label in {0, 1}.
    pub y: f64,
    /// Throw-head regression target (δ̄ or absolute planar speed).
    pub throw_target: Option<f64>,
    /// False when a successful grasp carries no throw label (the landing was
    /// unreachable for the ballistic model); the throw term is then skipped.
    pub throw_sample: bool,
}

/// Trainable policy over a fixed heightmap size and rotation count.
#[derive(Debug, Clone)]
pub struct Policy<T: Scalar = f32> {
    pub variant: PolicyVariant,
    pub net: Network<T>,
    pub rotations: RotationSet,
    pub cond_norm: ConditioningNorm,
}

/// Affine standardization applied to the conditioning scalar before tiling.
///
/// Raw speeds or distances are several units large and would swamp the
/// visual features they are concatenated with. The constants come from the
/// training box layout and are kept fixed afterwards, so evaluation on other
/// layouts sees the same scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditioningNorm {
    pub offset: f64,
    pub scale: f64,
}

impl Default for ConditioningNorm {
    fn default() -> Self {
        Self { offset: 0.0, scale: 1.0 }
    }
}

impl ConditioningNorm {
    /// Mean and half-range of the conditioning over the workspace's boxes.
    pub fn for_workspace(variant: PolicyVariant, ws: &WorkspaceConfig) -> Result<Self> {
        let values = ws.boxes.iter().map(|&b| conditioning(variant, b, ws)).collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Ok(Self::default());
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        Ok(Self { offset: mean, scale: ((hi - lo) / 2.0).max(0.1) })
    }

    pub fn apply(&self, c: f64) -> f64 {
        (c - self.offset) / self.scale
    }
}

impl<T: Scalar> Policy<T> {
    pub fn new(variant: PolicyVariant, arch: ArchConfig, height: usize, width: usize, num_rotations: usize, seed: u64) -> Result<Self> {
        if num_rotations == 0 || height < 4 || width < 4 {
            return Err(Error::Config(format!("policy needs R >= 1 and at least 4x4 input, got R={num_rotations} {height}x{width}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(arch, Heightmap::CHANNELS, variant.has_throw_head(), &mut rng)?;
        Ok(Self { variant, net, rotations: RotationSet::new(num_rotations, height, width), cond_norm: ConditioningNorm::default() })
    }

    pub fn for_workspace(variant: PolicyVariant, arch: ArchConfig, ws: &WorkspaceConfig, seed: u64) -> Result<Self> {
        let mut policy = Self::new(variant, arch, ws.height(), ws.width(), ws.num_rotations, seed)?;
        policy.cond_norm = ConditioningNorm::for_workspace(variant, ws)?;
        Ok(policy)
    }

    fn tile_value(&self, c: f64) -> T {
        T::cast(self.cond_norm.apply(c))
    }

    pub fn num_rotations(&self) -> usize {
        self.rotations.rotations
    }

    fn check_input(&self, hm: &Heightmap) -> Result<()> {
        if hm.height != self.rotations.height || hm.width != self.rotations.width || hm.data.len() != 2 * hm.pixels() {
            return Err(Error::Shape(format!(
                "heightmap {}x{} does not match policy input {}x{}",
                hm.height, hm.width, self.rotations.height, self.rotations.width
            )));
        }
        Ok(())
    }

    /// Rotated copy of the heightmap for rotation `k`, as a batch of one.
    pub fn rotated_input(&self, hm: &Heightmap, k: usize) -> Result<Tensor4<T>> {
        self.check_input(hm)?;
        let n = hm.pixels();
        let bg = hm.background();
        let mut buf = vec![0f32; n];
        let mut data = Vec::with_capacity(2 * n);
        for c in 0..2 {
            self.rotations.rotate_plane(k, &hm.data[c * n..(c + 1) * n], bg[c], &mut buf);
            data.extend(buf.iter().map(|&v| T::cast(v as f64)));
        }
        Tensor4::from_vec([1, 2, hm.height, hm.width], data)
    }

    /// Grasp probabilities (and throw values, if `throw_conditioning` is given)
    /// for rotation `k`, in the common frame.
    pub fn forward_rotation(
        &self,
        hm: &Heightmap,
        k: usize,
        grasp_conditioning: f64,
        throw_conditioning: Option<f64>,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let trunk = self.net.trunk_forward(self.rotated_input(hm, k)?)?;
        let n = self.rotations.pixels();
        let g = self.net.head_forward(&self.net.grasp, &trunk, self.tile_value(grasp_conditioning))?;
        let probs: Vec<f64> = g.out.data().iter().map(|&z| sigmoid(z.as_f64())).collect();
        let mut qg = vec![0.0; n];
        self.rotations.unrotate_plane(k, &probs, &mut qg);
        let qt = match (&self.net.throw, throw_conditioning) {
            (Some(layers), Some(c)) => {
                let t = self.net.head_forward(layers, &trunk, self.tile_value(c))?;
                let vals: Vec<f64> = t.out.data().iter().map(|v| v.as_f64()).collect();
                let mut qt = vec![0.0; n];
                self.rotations.unrotate_plane(k, &vals, &mut qt);
                Some(qt)
            }
            _ => None,
        };
        Ok((qg, qt))
    }

    /// Full forward pass over all rotations with explicit conditioning values.
    pub fn forward_with(&self, hm: &Heightmap, grasp_conditioning: f64, throw_conditioning: f64) -> Result<PolicyOutput> {
        let throw_cond = self.variant.has_throw_head().then_some(throw_conditioning);
        self.forward_maps(hm, grasp_conditioning, throw_cond)
    }

    /// Grasp maps only; the throw head is skipped and `qt` is `None`.
    pub fn forward_grasp(&self, hm: &Heightmap, grasp_conditioning: f64) -> Result<PolicyOutput> {
        self.forward_maps(hm, grasp_conditioning, None)
    }

    fn forward_maps(&self, hm: &Heightmap, grasp_conditioning: f64, throw_cond: Option<f64>) -> Result<PolicyOutput> {
        let r = self.num_rotations();
        let maps = (0..r)
            .into_par_iter()
            .map(|k| self.forward_rotation(hm, k, grasp_conditioning, throw_cond))
            .collect::<Result<Vec<_>>>()?;
        let mut qg = Vec::with_capacity(r * hm.pixels());
        let mut qt = throw_cond.map(|_| Vec::with_capacity(r * hm.pixels()));
        for (g, t) in maps {
            qg.extend(g);
            if let (Some(all), Some(t)) = (qt.as_mut(), t) {
                all.extend(t);
            }
        }
        Ok(PolicyOutput {
            rotations: r,
            height: hm.height,
            width: hm.width,
            qg,
            qt,
            grasp_conditioning,
            throw_conditioning: throw_cond.unwrap_or(grasp_conditioning),
        })
    }

    /// Full forward pass for a throw aimed at `target`.
    pub fn forward(&self, hm: &Heightmap, target: Vec3, ws: &WorkspaceConfig) -> Result<PolicyOutput> {
        let c = conditioning(self.variant, target, ws)?;
        self.forward_with(hm, c, c)
    }

    /// Grasp probability and throw value at a single action.
    pub fn evaluate_action(&self, hm: &Heightmap, action: &GraspAction, grasp_conditioning: f64, throw_conditioning: f64) -> Result<(f64, Option<f64>)> {
        let throw_cond = self.variant.has_throw_head().then_some(throw_conditioning);
        let (qg, qt) = self.forward_rotation(hm, action.rotation, grasp_conditioning, throw_cond)?;
        let p = action.row * hm.width + action.col;
        Ok((qg[p], qt.map(|q| q[p])))
    }

    /// Accumulates parameter gradients of the single-pixel loss for one
    /// sample and returns the loss. Only the executed (rotation, pixel)
    /// receives output gradient; the throw head contributes only when y > 0.
    pub fn loss_and_backward(&mut self, hm: &Heightmap, s: &LossSample) -> Result<f64> {
        if !(0.0..=1.0).contains(&s.y) {
            return Err(Error::Config(format!("grasp label must lie in [0, 1], got {}", s.y)));
        }
        let train_throw = s.y > 0.0 && s.throw_sample && self.variant.has_throw_head();
        let throw_target = match (train_throw, s.throw_target) {
            (true, None) => return Err(Error::MissingLabel("throw target for a successful grasp")),
            (_, t) => t,
        };
        self.check_action(&s.action)?;
        let k = s.action.rotation;
        let trunk = self.net.trunk_forward(self.rotated_input(hm, k)?)?;
        let u = self.rotations.rotated_index(k, s.action.row * hm.width + s.action.col);

        let g = self.net.head_forward(&self.net.grasp, &trunk, self.tile_value(s.grasp_conditioning))?;
        let z = g.out.data()[u];
        let q = T::one() / (T::one() + (-z).exp());
        let (lg, dq) = bce_loss(q, T::cast(s.y));
        let mut grad = Tensor4::zeros(g.out.dims());
        grad.data_mut()[u] = dq * q * (T::one() - q);
        let mut g_mu = self.net.grasp_backward(&g, &grad)?;
        let mut loss = lg.as_f64();

        if train_throw {
            let target = throw_target.expect("checked above");
            let layers = self.net.throw.as_ref().expect("variant has a throw head");
            let t = self.net.head_forward(layers, &trunk, self.tile_value(s.throw_conditioning))?;
            let (lt, d) = huber_loss(t.out.data()[u], T::cast(target));
            let y = T::cast(s.y);
            let mut grad = Tensor4::zeros(t.out.dims());
            grad.data_mut()[u] = y * d;
            let g_mu_t = self.net.throw_backward(&t, &grad)?;
            for (a, &b) in g_mu.data_mut().iter_mut().zip(g_mu_t.data()) {
                *a += b;
            }
            loss += (y * lt).as_f64();
        }
        self.net.trunk_backward(&trunk, &g_mu)?;
        Ok(loss)
    }

    /// Huber regression of the throw head at one pixel with the trunk frozen.
    /// Only throw-head gradients are accumulated.
    pub fn throw_regression_backward(&mut self, hm: &Heightmap, action: &GraspAction, conditioning: f64, target: f64) -> Result<f64> {
        self.check_action(action)?;
        let layers = self.net.throw.as_ref().ok_or(Error::Config("variant has no throw head".into()))?;
        let trunk = self.net.trunk_forward(self.rotated_input(hm, action.rotation)?)?;
        let t = self.net.head_forward(layers, &trunk, self.tile_value(conditioning))?;
        let u = self.rotations.rotated_index(action.rotation, action.row * hm.width + action.col);
        let (lt, d) = huber_loss(t.out.data()[u], T::cast(target));
        let mut grad = Tensor4::zeros(t.out.dims());
        grad.data_mut()[u] = d;
        self.net.throw_backward(&t, &grad)?;
        Ok(lt.as_f64())
    }

    fn check_action(&self, a: &GraspAction) -> Result<()> {
        if a.rotation >= self.num_rotations() || a.row >= self.rotations.height || a.col >= self.rotations.width {
            return Err(Error::Shape(format!("action {a:?} out of range")));
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        let layers: Vec<_> = self.net.layers().collect();
        save_params(&layers, out)
    }

    pub fn load<R: Read>(&mut self, input: R) -> Result<()> {
        let mut layers: Vec<_> = self.net.layers_mut().collect();
        load_params(&mut layers, input)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::ChannelStats;
    use crate::tensornet::sgd_momentum_step;

    fn heightmap(height: usize, width: usize, seed: u64) -> Heightmap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw_height: Vec<f32> = (0..height * width).map(|_| rng.gen_range(0.0..0.05)).collect();
        let raw_intensity: Vec<f32> = (0..height * width).map(|_| rng.gen_range(0.0..1.0)).collect();
        let stats = [ChannelStats { mean: 0.01, std: 0.015 }, ChannelStats { mean: 0.15, std: 0.3 }];
        let mut data: Vec<f32> = raw_height.iter().map(|v| (v - stats[0].mean) / stats[0].std).collect();
        data.extend(raw_intensity.iter().map(|v| (v - stats[1].mean) / stats[1].std));
        Heightmap { width, height, raw_height, raw_intensity, data, stats }
    }

    fn rotate_180(hm: &Heightmap) -> Heightmap {
        let rev = |v: &[f32]| v.iter().rev().copied().collect::<Vec<_>>();
        let n = hm.pixels();
        let mut data = rev(&hm.data[..n]);
        data.extend(rev(&hm.data[n..]));
        Heightmap { data, raw_height: rev(&hm.raw_height), raw_intensity: rev(&hm.raw_intensity), ..hm.clone() }
    }

    fn tiny_arch() -> ArchConfig {
        ArchConfig { trunk: [3, 3, 4, 4], head: [4, 3, 2], tile: 2, kernel: 3 }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in PolicyVariant::ALL {
            assert_eq!(v.name().parse::<PolicyVariant>().unwrap(), v);
        }
        assert!(!PolicyVariant::PhysicsOnly.has_throw_head());
        assert!("bogus".parse::<PolicyVariant>().is_err());
    }

    #[test]
    fn flat_index_round_trip() {
        let a = GraspAction { rotation: 3, row: 4, col: 5 };
        assert_eq!(GraspAction::from_flat_index(a.flat_index(7, 9), 7, 9), a);
    }

    #[test]
    fn outputs_are_probabilities_and_finite() {
        let hm = heightmap(12, 16, 1);
        let p = Policy::<f32>::new(PolicyVariant::ResidualPhysics, tiny_arch(), 12, 16, 4, 7).unwrap();
        let out = p.forward_with(&hm, 3.0, 3.0).unwrap();
        assert_eq!(out.qg.len(), 4 * 12 * 16);
        assert!(out.qg.iter().all(|&q| q > 0.0 && q < 1.0));
        assert!(out.qt.unwrap().iter().all(|v| v.is_finite()));
        let po = Policy::<f32>::new(PolicyVariant::PhysicsOnly, tiny_arch(), 12, 16, 4, 7).unwrap();
        assert!(po.forward_with(&hm, 3.0, 3.0).unwrap().qt.is_none());
    }

    #[test]
    fn conditioning_is_live() {
        let ws = WorkspaceConfig::default();
        let (near, far) = (ws.boxes[0], ws.boxes[11]);
        for v in PolicyVariant::ALL {
            assert!(conditioning(v, far, &ws).unwrap() > conditioning(v, near, &ws).unwrap());
        }
        let hm = heightmap(12, 16, 2);
        let p = Policy::<f64>::new(PolicyVariant::ResidualPhysics, tiny_arch(), 12, 16, 2, 3).unwrap();
        let a = p.forward_with(&hm, 2.0, 2.0).unwrap();
        let b = p.forward_with(&hm, 4.0, 4.0).unwrap();
        assert_ne!(a.qt, b.qt);
    }

    #[test]
    fn single_rotation_equals_direct_network_application() {
        let hm = heightmap(8, 12, 3);
        let p = Policy::<f64>::new(PolicyVariant::ResidualPhysics, tiny_arch(), 8, 12, 1, 4).unwrap();
        let out = p.forward_with(&hm, 1.5, 2.5).unwrap();
        let x = Tensor4::from_vec([1, 2, 8, 12], hm.data.iter().map(|&v| v as f64).collect()).unwrap();
        let trunk = p.net.trunk_forward(x).unwrap();
        let g = p.net.head_forward(&p.net.grasp, &trunk, 1.5).unwrap();
        let t = p.net.head_forward(p.net.throw.as_ref().unwrap(), &trunk, 2.5).unwrap();
        for i in 0..96 {
            assert!((out.qg[i] - sigmoid(g.out.data()[i])).abs() < 1e-15);
            assert!((out.qt.as_ref().unwrap()[i] - t.out.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn half_turn_of_the_scene_shifts_rotation_index() {
        for (h, w) in [(12, 16), (35, 45), (13, 17)] {
            let r = 8;
            let hm = heightmap(h, w, 5);
            let turned = rotate_180(&hm);
            let p = Policy::<f64>::new(PolicyVariant::ResidualPhysics, tiny_arch(), h, w, r, 6).unwrap();
            let a = p.forward_with(&hm, 3.0, 3.0).unwrap();
            let b = p.forward_with(&turned, 3.0, 3.0).unwrap();
            let n = h * w;
            let mut worst = 0.0f64;
            for k in 0..r {
                for pix in 0..n {
                    let kk = (k + r / 2) % r;
                    let lhs = b.qg[kk * n + pix];
                    let rhs = a.qg[k * n + (n - 1 - pix)];
                    worst = worst.max((lhs - rhs).abs());
                }
            }
            assert!(worst < 1e-4, "{h}x{w}: {worst}");
        }
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = PolicyOutput {
            rotations: 2,
            height: 3,
            width: 4,
            qg: vec![0.5; 24],
            qt: None,
            grasp_conditioning: 0.0,
            throw_conditioning: 0.0,
        };
        assert_eq!(select_action(&out, 0.0, &mut rng), GraspAction { rotation: 0, row: 0, col: 0 });
        out.qg[17] = 0.9;
        let a = select_action(&out, 0.0, &mut rng);
        assert_eq!(a.flat_index(3, 4), 17);
        // A strictly increasing transform keeps the argmax.
        let mut warped = out.clone();
        warped.qg.iter_mut().for_each(|q| *q = (*q * 3.0).exp() - 7.0);
        assert_eq!(select_action(&warped, 0.0, &mut rng), a);
    }

    #[test]
    fn composition_rules() {
        let ws = WorkspaceConfig::default();
        let target = ws.boxes[5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = compose_throw(None, target, PolicyVariant::PhysicsOnly, 0.0, &ws, &mut rng).unwrap();
        let zero = compose_throw(Some(0.0), target, PolicyVariant::ResidualPhysics, 0.0, &ws, &mut rng).unwrap();
        assert_eq!(base.params, zero.params);
        let plus = compose_throw(Some(0.4), target, PolicyVariant::ResidualPhysics, 0.0, &ws, &mut rng).unwrap();
        assert!((plus.params.planar_speed - (base.ballistic + 0.4)).abs() < 1e-12);
        let reg = compose_throw(Some(2.5), target, PolicyVariant::Regression, 0.0, &ws, &mut rng).unwrap();
        assert_eq!(reg.params.planar_speed, 2.5);
        let neg = compose_throw(Some(-1.0), target, PolicyVariant::RegressionPoP, 0.0, &ws, &mut rng).unwrap();
        assert_eq!(neg.params.planar_speed, MIN_PLANAR_SPEED);
        assert!(neg.exploratory);
        assert!(compose_throw(None, target, PolicyVariant::Regression, 0.0, &ws, &mut rng).is_err());
        for _ in 0..100 {
            let e = compose_throw(Some(0.0), target, PolicyVariant::ResidualPhysics, 1.0, &ws, &mut rng).unwrap();
            assert!(e.exploratory);
            let ratio = e.params.planar_speed / e.ballistic;
            assert!((0.5..1.5).contains(&ratio));
            assert!((e.params.velocity.z - e.params.planar_speed).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_label_leaves_throw_head_untouched() {
        let hm = heightmap(8, 8, 4);
        let mut p = Policy::<f64>::new(PolicyVariant::ResidualPhysics, tiny_arch(), 8, 8, 2, 2).unwrap();
        let s = LossSample {
            action: GraspAction { rotation: 1, row: 3, col: 5 },
            grasp_conditioning: 3.0,
            throw_conditioning: 3.0,
            y: 0.0,
            throw_target: None,
            throw_sample: true,
        };
        let (qg, _) = p.evaluate_action(&hm, &s.action, 3.0, 3.0).unwrap();
        let loss = p.loss_and_backward(&hm, &s).unwrap();
        assert!((loss - bce_loss(qg, 0.0).0).abs() < 1e-12);
        assert!(p.net.throw.as_ref().unwrap().iter().all(|l| l.grad_is_zero()));
        assert!(!p.net.grasp.iter().all(|l| l.grad_is_zero()));
    }

    #[test]
    fn exact_throw_prediction_has_zero_throw_loss() {
        let hm = heightmap(8, 8, 4);
        let mut p = Policy::<f64>::new(PolicyVariant::ResidualPhysics, tiny_arch(), 8, 8, 2, 2).unwrap();
        let action = GraspAction { rotation: 0, row: 2, col: 2 };
        let (qg, qt) = p.evaluate_action(&hm, &action, 3.0, 2.0).unwrap();
        let s = LossSample { action, grasp_conditioning: 3.0, throw_conditioning: 2.0, y: 1.0, throw_target: qt, throw_sample: true };
        let loss = p.loss_and_backward(&hm, &s).unwrap();
        assert!((loss - bce_loss(qg, 1.0).0).abs() < 1e-12);
        let missing = LossSample { throw_target: None, ..s };
        assert!(matches!(p.loss_and_backward(&hm, &missing), Err(Error::MissingLabel(_))));
        // An unreachable landing keeps the grasp term only.
        p.net.zero_grad();
        let no_throw = LossSample { throw_sample: false, ..missing };
        assert!((p.loss_and_backward(&hm, &no_throw).unwrap() - bce_loss(qg, 1.0).0).abs() < 1e-12);
        assert!(p.net.throw.as_ref().unwrap().iter().all(|l| l.grad_is_zero()));
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let hm = heightmap(8, 8, 9);
        let mut p = Policy::<f64>::new(PolicyVariant::ResidualPhysics, tiny_arch(), 8, 8, 4, 11).unwrap();
        // Non-zero biases so every unit is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for l in p.net.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(0.0..0.2));
        }
        let s = LossSample {
            action: GraspAction { rotation: 1, row: 5, col: 2 },
            grasp_conditioning: 2.7,
            throw_conditioning: 3.1,
            y: 1.0,
            throw_target: Some(0.3),
            throw_sample: true,
        };
        p.net.zero_grad();
        p.loss_and_backward(&hm, &s).unwrap();
        let analytic: Vec<f64> = p.net.layers().flat_map(|l| l.kernel_grad.iter().chain(&l.bias_grad).copied()).collect();

        let loss_of = |q: &Policy<f64>| {
            let (qg, qt) = q.evaluate_action(&hm, &s.action, s.grasp_conditioning, s.throw_conditioning).unwrap();
            sample_loss(qg, qt, s.y, s.throw_target)
        };
        let h = 1e-5;
        let mut numeric = Vec::with_capacity(analytic.len());
        let n_layers = p.net.layers().count();
        for li in 0..n_layers {
            let sizes = {
                let l = p.net.layers().nth(li).unwrap();
                (l.kernel.len(), l.bias.len())
            };
            for i in 0..sizes.0 + sizes.1 {
                let eval = |delta: f64| {
                    let mut q = p.clone();
                    let l = q.net.layers_mut().nth(li).unwrap();
                    if i < sizes.0 {
                        l.kernel.data_mut()[i] += delta;
                    } else {
                        l.bias[i - sizes.0] += delta;
                    }
                    loss_of(&q)
                };
                numeric.push((eval(h) - eval(-h)) / (2.0 * h));
            }
        }
        let err = crate::tensornet::gradcheck::max_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
        // Gradient reaches every layer.
        assert!(p.net.layers().all(|l| !l.grad_is_zero()));
    }

    #[test]
    fn overfits_a_single_sample() {
        let hm = heightmap(12, 12, 13);
        let mut p = Policy::<f32>::new(PolicyVariant::ResidualPhysics, tiny_arch(), 12, 12, 2, 14).unwrap();
        let s = LossSample {
            action: GraspAction { rotation: 1, row: 6, col: 4 },
            grasp_conditioning: 3.0,
            throw_conditioning: 3.0,
            y: 1.0,
            throw_target: Some(0.5),
            throw_sample: true,
        };
        let cfg = crate::tensornet::SgdConfig { lr: 1e-3, ..Default::default() };
        let mut losses = Vec::new();
        for _ in 0..20 {
            p.net.zero_grad();
            losses.push(p.loss_and_backward(&hm, &s).unwrap());
            for l in p.net.layers_mut() {
                sgd_momentum_step(l, &cfg).unwrap();
            }
        }
        assert!(losses[19] < losses[0], "{losses:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = Policy::<f32>::new(PolicyVariant::Regression, tiny_arch(), 8, 8, 2, 1).unwrap();
        let mut buf = Vec::new();
        p.save(&mut buf).unwrap();
        let mut q = Policy::<f32>::new(PolicyVariant::Regression, tiny_arch(), 8, 8, 2, 99).unwrap();
        assert_ne!(p.net, q.net);
        q.load(buf.as_slice()).unwrap();
        assert_eq!(p.net, q.net);
        let mut po = Policy::<f32>::new(PolicyVariant::PhysicsOnly, tiny_arch(), 8, 8, 2, 1).unwrap();
        assert!(po.load(buf.as_slice()).is_err());
    }
}
