//! Self-supervised trial and error: act, label in hindsight, store, replay.
//!
//! Each step renders the bin, picks a target box round-robin, grasps, throws
//! if the grasp held, records where the object landed and then runs a fixed
//! number of prioritized replay updates. Everything runs serially from seeded
//! streams, so a configuration and seed reproduce the step log exactly.

mod replay;

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use replay::{rank_weights, ReplayBuffer};

use crate::ballistics;
use crate::error::{Error, Result};
use crate::policy::{compose_throw, conditioning, explore_grasp, sample_loss, GraspAction, LossSample, Policy, PolicyVariant};
use crate::scene::{Vec3, WorkspaceConfig};
use crate::simulator::{respawn, GraspOutcome, Heightmap, Simulator, ThrowOutcome};
use crate::tensornet::{sgd_momentum_step, SgdConfig};

/// What makes a grasp count as successful for the grasp head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionMode {
    /// The object was picked up.
    Width,
    /// The object was picked up and then landed in the target box.
    ThrowAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub sgd: SgdConfig,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Rank exponent of prioritized replay.
    pub replay_alpha: f64,
    /// Replay samples per environment step; their gradients form one update.
    pub replay_batch: usize,
    pub replay_capacity: usize,
    pub supervision: SupervisionMode,
    /// Physics pre-training iterations (RegressionPoP only).
    pub pretrain_steps: usize,
    pub pretrain_sgd: SgdConfig,
    /// Respawn the bin after this many consecutive failed grasps (0 never).
    /// A failed grasp leaves the scene untouched, so without this a greedy
    /// policy can repeat the same failing action indefinitely.
    pub max_failed_grasps: usize,
    /// Save a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            sgd: SgdConfig::default(),
            epsilon_start: 0.5,
            epsilon_end: 0.1,
            replay_alpha: 0.7,
            replay_batch: 4,
            replay_capacity: 10_000,
            supervision: SupervisionMode::Width,
            pretrain_steps: 3000,
            // Decay would pull the regressed speed (several m/s) toward zero.
            pretrain_sgd: SgdConfig { lr: 1e-3, weight_decay: 0.0, ..SgdConfig::default() },
            max_failed_grasps: 10,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.epsilon_start) || !eps_ok(self.epsilon_end) || self.epsilon_end > self.epsilon_start {
            return Err(Error::Config("epsilon schedule must satisfy 1 >= start >= end >= 0".into()));
        }
        if !(self.replay_alpha >= 0.0) || self.replay_capacity == 0 {
            return Err(Error::Config("replay needs alpha >= 0 and capacity >= 1".into()));
        }
        if !(self.sgd.lr > 0.0) || !(self.pretrain_sgd.lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// Linear anneal from `epsilon_start` at step 0 to `epsilon_end` at `steps`.
    pub fn epsilon(&self, step: usize) -> f64 {
        if self.steps == 0 {
            return self.epsilon_end;
        }
        let f = (step as f64 / self.steps as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

/// Hindsight labels for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labels {
    pub y: bool,
    pub landing: Option<Vec3>,
    /// Executed planar speed minus the ballistic speed for the actual landing.
    pub residual: Option<f64>,
    /// Ballistic speed for the actual landing, when it is reachable.
    pub landing_speed: Option<f64>,
}

/// Grasp label under `mode` plus the residual label whenever the object was
/// thrown, wherever it landed.
pub fn make_labels(
    grasp: &GraspOutcome,
    throw: Option<(&ThrowOutcome, f64)>,
    ws: &WorkspaceConfig,
    mode: SupervisionMode,
) -> Labels {
    let thrown = throw.filter(|_| grasp.success);
    let y = match mode {
        SupervisionMode::Width => grasp.success,
        SupervisionMode::ThrowAccuracy => thrown.is_some_and(|(t, _)| t.in_target_box),
    };
    let landing = thrown.map(|(t, _)| t.landing);
    let landing_speed = landing.and_then(|p| ballistics::speed_for_landing(p, ws).ok());
    let residual = thrown.zip(landing_speed).map(|((_, v), s)| v - s);
    Labels { y, landing, residual, landing_speed }
}

/// One stored trial.
#[derive(Debug, Clone)]
pub struct Transition {
    pub heightmap: Arc<Heightmap>,
    pub target: Vec3,
    pub action: GraspAction,
    pub grasp_conditioning: f64,
    /// Conditioning for the actual landing (throw head input in replay).
    pub throw_conditioning: f64,
    pub executed_speed: Option<f64>,
    pub y: bool,
    pub landing: Option<Vec3>,
    pub residual: Option<f64>,
    /// Regression target of the throw head for this variant.
    pub throw_target: Option<f64>,
    /// False when the throw label was dropped (unreachable landing).
    pub throw_sample: bool,
    pub step: usize,
    pub priority: f64,
}

impl Transition {
    pub fn loss_sample(&self) -> LossSample {
        LossSample {
            action: self.action,
            grasp_conditioning: self.grasp_conditioning,
            throw_conditioning: self.throw_conditioning,
            y: if self.y { 1.0 } else { 0.0 },
            throw_target: self.throw_target,
            throw_sample: self.throw_sample,
        }
    }
}

/// One row of the step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epsilon: f64,
    pub target_box: usize,
    pub rotation: usize,
    pub row: usize,
    pub col: usize,
    pub explored_grasp: bool,
    pub grasp_success: bool,
    pub object_kind: Option<String>,
    /// Grasp point in the object frame.
    pub grasp_x: Option<f64>,
    pub grasp_y: Option<f64>,
    pub grasp_offset: Option<f64>,
    pub thrown: bool,
    pub throw_success: bool,
    pub explored_throw: bool,
    pub executed_speed: Option<f64>,
    pub ballistic_speed: Option<f64>,
    pub landing_x: Option<f64>,
    pub landing_y: Option<f64>,
    pub residual: Option<f64>,
    /// Mean replay loss of this step's update.
    pub loss: Option<f64>,
}

/// Result of one act-and-observe cycle.
#[derive(Debug, Clone)]
pub struct Trial {
    pub record: StepRecord,
    pub transition: Transition,
    /// The object was thrown but its landing is unreachable for the ballistic
    /// model, so the transition carries no throw label.
    pub throw_dropped: bool,
}

/// Grasps and (if the grasp held) throws toward `target_box` with ε-greedy
/// exploration. Leaves the simulator's bin minus the grasped object.
pub fn run_trial<R: Rng>(
    policy: &Policy<f32>,
    sim: &mut Simulator,
    target_box: usize,
    epsilon: f64,
    mode: SupervisionMode,
    step: usize,
    rng: &mut R,
) -> Result<Trial> {
    let ws = sim.ws.clone();
    let target = *ws.boxes.get(target_box).ok_or_else(|| Error::Config(format!("no box {target_box}")))?;
    let hm = sim.render_heightmap();
    let variant = policy.variant;
    let cond = conditioning(variant, target, &ws)?;

    let explored = explore_grasp(epsilon, policy.num_rotations(), hm.height, hm.width, rng);
    let action = match explored {
        Some(a) => a,
        None => policy.forward_grasp(&hm, cond)?.greedy_action(),
    };
    let (qg, qt) = policy.evaluate_action(&hm, &action, cond, cond)?;
    let grasp = sim.execute_grasp(&action);

    let mut thrown = None;
    let mut composed = None;
    if grasp.success {
        let c = compose_throw(qt, target, variant, epsilon, &ws, rng)?;
        let outcome = sim.execute_throw(&grasp, &c.params, target_box)?;
        thrown = Some(outcome);
        composed = Some(c);
    }
    let executed = composed.map(|c| c.params.planar_speed);
    let labels = make_labels(&grasp, thrown.as_ref().zip(executed), &ws, mode);

    let throw_target = match (variant, labels.residual) {
        (PolicyVariant::ResidualPhysics, r) => r,
        (PolicyVariant::Regression | PolicyVariant::RegressionPoP, Some(_)) => executed,
        _ => None,
    };
    let throw_conditioning = match labels.landing {
        Some(p) => conditioning(variant, p, &ws).ok(),
        None => Some(cond),
    };
    let throw_dropped = labels.landing.is_some() && (labels.landing_speed.is_none() || throw_conditioning.is_none());
    let throw_target = throw_target.filter(|_| !throw_dropped);
    let y = if labels.y { 1.0 } else { 0.0 };
    let transition = Transition {
        heightmap: Arc::new(hm.compact()),
        target,
        action,
        grasp_conditioning: cond,
        throw_conditioning: throw_conditioning.unwrap_or(cond),
        executed_speed: executed,
        y: labels.y,
        landing: labels.landing,
        residual: labels.residual,
        throw_target,
        throw_sample: !throw_dropped,
        step,
        priority: sample_loss(qg, qt.filter(|_| !throw_dropped), y, throw_target),
    };

    let record = StepRecord {
        step,
        epsilon,
        target_box,
        rotation: action.rotation,
        row: action.row,
        col: action.col,
        explored_grasp: explored.is_some(),
        grasp_success: grasp.success,
        object_kind: grasp.kind().map(|k| k.name().to_string()),
        grasp_x: grasp.local_point.map(|p| p[0]),
        grasp_y: grasp.local_point.map(|p| p[1]),
        grasp_offset: grasp.success.then_some(grasp.offset),
        thrown: thrown.is_some(),
        throw_success: thrown.as_ref().is_some_and(|t| t.in_target_box),
        explored_throw: composed.is_some_and(|c| c.exploratory),
        executed_speed: executed,
        ballistic_speed: composed.map(|c| c.ballistic),
        landing_x: labels.landing.map(|p| p.x),
        landing_y: labels.landing.map(|p| p.y),
        residual: labels.residual,
        loss: None,
    };
    Ok(Trial { record, transition, throw_dropped })
}

/// Empties-and-refills or respawns the bin as needed after a grasp.
/// `failures` counts consecutive failed grasps and is reset with the bin.
fn maintain_bin(sim: &mut Simulator, grasped: bool, failures: &mut usize, limit: usize) -> Result<()> {
    *failures = if grasped { 0 } else { *failures + 1 };
    if limit > 0 && *failures >= limit {
        log::debug!("{failures} failed grasps in a row, respawning the bin");
        sim.reset()?;
        *failures = 0;
    } else if sim.reset_if_empty()? {
        *failures = 0;
    }
    Ok(())
}

/// Owns the learner, the world and the replay buffer during training.
#[derive(Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub policy: Policy<f32>,
    pub sim: Simulator,
    pub buffer: ReplayBuffer,
    pub log: Vec<StepRecord>,
    /// Throw labels dropped because the landing was unreachable.
    pub dropped_unreachable: usize,
    pub checkpoint_dir: Option<PathBuf>,
    rng: ChaCha8Rng,
    step: usize,
    failures: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, policy: Policy<f32>, sim: Simulator) -> Result<Self> {
        cfg.validate()?;
        if policy.num_rotations() != sim.ws.num_rotations
            || policy.rotations.height != sim.ws.height()
            || policy.rotations.width != sim.ws.width()
        {
            return Err(Error::Config("policy input does not match the workspace heightmap".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_6e64_6f6d);
        let buffer = ReplayBuffer::new(cfg.replay_capacity);
        Ok(Self { cfg, policy, sim, buffer, log: Vec::new(), dropped_unreachable: 0, checkpoint_dir: None, rng, step: 0, failures: 0 })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One environment step followed by one replay update.
    pub fn step(&mut self) -> Result<&StepRecord> {
        let eps = self.cfg.epsilon(self.step);
        let target_box = self.step % self.sim.ws.boxes.len();
        let trial = run_trial(&self.policy, &mut self.sim, target_box, eps, self.cfg.supervision, self.step, &mut self.rng)?;
        let mut record = trial.record;
        if trial.throw_dropped {
            self.dropped_unreachable += 1;
            log::debug!("step {}: landing unreachable, throw label dropped", self.step);
        }
        self.buffer.push(trial.transition);
        record.loss = self.experience_replay()?;
        maintain_bin(&mut self.sim, record.grasp_success, &mut self.failures, self.cfg.max_failed_grasps)?;
        self.step += 1;
        if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
            if let Some(dir) = &self.checkpoint_dir {
                let path = dir.join(format!("checkpoint_{:06}.bin", self.step));
                self.policy.save(std::io::BufWriter::new(std::fs::File::create(path)?))?;
            }
        }
        self.log.push(record);
        Ok(self.log.last().expect("just pushed"))
    }

    /// Runs steps until `cfg.steps` have been taken.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.cfg.steps {
            self.step()?;
        }
        Ok(())
    }

    /// Samples a batch, accumulates its gradients into one SGD update and
    /// refreshes the sampled priorities. Returns the mean loss, or `None`
    /// for an empty buffer.
    pub fn experience_replay(&mut self) -> Result<Option<f64>> {
        let batch = self.buffer.sample_batch(self.cfg.replay_batch, self.cfg.replay_alpha, &mut self.rng);
        experience_replay(&mut self.policy, &mut self.buffer, &batch, &self.cfg.sgd)
    }
}

/// Gradient step on the given buffer indices; priorities become the losses.
pub fn experience_replay(policy: &mut Policy<f32>, buffer: &mut ReplayBuffer, batch: &[usize], sgd: &SgdConfig) -> Result<Option<f64>> {
    if batch.is_empty() {
        return Ok(None);
    }
    policy.net.zero_grad();
    let mut losses = Vec::with_capacity(batch.len());
    for &i in batch {
        let t = buffer.get(i);
        let hm = t.heightmap.clone();
        losses.push(policy.loss_and_backward(&hm, &t.loss_sample())?);
    }
    for l in policy.net.layers_mut() {
        sgd_momentum_step(l, sgd)?;
    }
    for (&i, &l) in batch.iter().zip(&losses) {
        buffer.set_priority(i, l);
    }
    Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
}

/// Trains `policy` in `sim` for `cfg.steps` steps, including physics
/// pre-training for RegressionPoP.
pub fn run_episode_loop(mut policy: Policy<f32>, mut sim: Simulator, cfg: &TrainConfig) -> Result<(Policy<f32>, Vec<StepRecord>)> {
    if policy.variant == PolicyVariant::RegressionPoP && cfg.pretrain_steps > 0 {
        pretrain_on_physics(&mut policy, &sim, cfg.pretrain_steps, &cfg.pretrain_sgd, cfg.seed)?;
    }
    sim.reset_if_empty()?;
    let mut trainer = Trainer::new(cfg.clone(), policy, sim)?;
    trainer.run()?;
    Ok((trainer.policy, trainer.log))
}

/// Scenes and targets for physics pre-training and its held-out check.
fn physics_sample<R: Rng>(sim: &Simulator, rng: &mut R) -> Result<(Vec3, f64)> {
    let ws = &sim.ws;
    let b = ws.boxes[rng.gen_range(0..ws.boxes.len())];
    let (hx, hy) = (ws.box_opening[0] / 2.0, ws.box_opening[1] / 2.0);
    let p = Vec3::new(b.x + rng.gen_range(-hx..hx), b.y + rng.gen_range(-hy..hy), b.z);
    Ok((p, ballistics::solve_release(p, ws)?.planar_speed))
}

fn random_action<R: Rng>(policy: &Policy<f32>, rng: &mut R) -> GraspAction {
    let r = &policy.rotations;
    GraspAction { rotation: rng.gen_range(0..r.rotations), row: rng.gen_range(0..r.height), col: rng.gen_range(0..r.width) }
}

const SCENES_PER_PRETRAIN: usize = 8;

/// Fits the throw head to the ballistic planar speed at random pixels of
/// random scenes and targets. The trunk and grasp head are left untouched.
/// Returns the mean loss of the final 100 iterations.
pub fn pretrain_on_physics(policy: &mut Policy<f32>, sim: &Simulator, steps: usize, sgd: &SgdConfig, seed: u64) -> Result<f64> {
    if policy.net.throw.is_none() {
        return Err(Error::Config("pre-training needs a throw head".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6574);
    let scenes = (0..SCENES_PER_PRETRAIN.min(steps.max(1)))
        .map(|i| {
            let state = respawn(&sim.ws, &sim.params, &sim.state, seed.wrapping_add(1_000_003 * (i as u64 + 1)))?;
            Ok(crate::simulator::render_heightmap(&sim.ws, &sim.params, &state))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut recent = Vec::with_capacity(100);
    for i in 0..steps {
        let hm = &scenes[rng.gen_range(0..scenes.len())];
        let (p, speed) = physics_sample(sim, &mut rng)?;
        let cond = conditioning(policy.variant, p, &sim.ws)?;
        let action = random_action(policy, &mut rng);
        policy.net.zero_grad();
        let loss = policy.throw_regression_backward(hm, &action, cond, speed)?;
        for l in policy.net.throw.iter_mut().flatten() {
            sgd_momentum_step(l, sgd)?;
        }
        if i + 100 >= steps {
            recent.push(loss);
        }
    }
    Ok(if recent.is_empty() { 0.0 } else { recent.iter().sum::<f64>() / recent.len() as f64 })
}

/// RMS error (m/s) of the throw head against the ballistic speed on fresh
/// scenes, targets and pixels.
pub fn physics_fit_rms(policy: &Policy<f32>, sim: &Simulator, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sq = 0.0;
    for i in 0..samples {
        let state = respawn(&sim.ws, &sim.params, &sim.state, seed.wrapping_add(7919 * (i as u64 + 1)))?;
        let hm = crate::simulator::render_heightmap(&sim.ws, &sim.params, &state);
        let (p, speed) = physics_sample(sim, &mut rng)?;
        let cond = conditioning(policy.variant, p, &sim.ws)?;
        let action = random_action(policy, &mut rng);
        let (_, qt) = policy.evaluate_action(&hm, &action, cond, cond)?;
        let v = qt.ok_or(Error::Config("no throw head".into()))?;
        sq += (v - speed).powi(2);
    }
    Ok((sq / samples.max(1) as f64).sqrt())
}

/// Greedy rollout with frozen parameters. `max_failed_grasps` has the same
/// meaning as in [`TrainConfig`].
pub fn evaluate(
    policy: &Policy<f32>,
    sim: &mut Simulator,
    steps: usize,
    mode: SupervisionMode,
    max_failed_grasps: usize,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
    let mut log = Vec::with_capacity(steps);
    let mut failures = 0;
    for step in 0..steps {
        let target_box = step % sim.ws.boxes.len();
        let trial = run_trial(policy, sim, target_box, 0.0, mode, step, &mut rng)?;
        maintain_bin(sim, trial.record.grasp_success, &mut failures, max_failed_grasps)?;
        log.push(trial.record);
    }
    Ok(log)
}

/// Writes the step log as CSV with a header row.
pub fn write_step_log<W: std::io::Write>(log: &[StepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in log {
        w.serialize(r).map_err(|e| Error::Config(format!("step log: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_step_log<R: std::io::Read>(input: R) -> Result<Vec<StepRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<StepRecord>, _>>()
        .map_err(|e| Error::Config(format!("step log: {e}")))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::policy::ArchConfig;
    use crate::scene::{make_object, make_standard_objects, DynamicsTable, ObjectKind};
    use crate::simulator::{ChannelStats, SimParams};

    pub(crate) fn dummy_transition(step: usize) -> Transition {
        let hm = Heightmap {
            width: 4,
            height: 4,
            raw_height: vec![],
            raw_intensity: vec![],
            data: vec![0.0; 32],
            stats: [ChannelStats { mean: 0.0, std: 1.0 }; 2],
        };
        Transition {
            heightmap: Arc::new(hm),
            target: Vec3::new(1.0, 0.0, 0.0),
            action: GraspAction { rotation: 0, row: 0, col: 0 },
            grasp_conditioning: 3.0,
            throw_conditioning: 3.0,
            executed_speed: None,
            y: false,
            landing: None,
            residual: None,
            throw_target: None,
            throw_sample: true,
            step,
            priority: 0.0,
        }
    }

    fn small_ws() -> WorkspaceConfig {
        WorkspaceConfig { resolution: 0.01, num_rotations: 4, ..Default::default() }
    }

    fn small_arch() -> ArchConfig {
        ArchConfig { trunk: [4, 4, 8, 8], head: [8, 4, 4], tile: 2, kernel: 3 }
    }

    fn setup(variant: PolicyVariant, seed: u64) -> (Policy<f32>, Simulator) {
        let ws = small_ws();
        let sim = Simulator::new(ws.clone(), SimParams::default(), &make_standard_objects(1.0), 12, seed).unwrap();
        (Policy::for_workspace(variant, small_arch(), &ws, seed).unwrap(), sim)
    }

    fn grasp_ok(object: ObjectKind) -> GraspOutcome {
        let m = Arc::new(make_object(object, 1.0, &DynamicsTable::default()));
        GraspOutcome { success: true, object_id: Some(0), object: Some(m), offset: 0.0, local_point: Some([0.0, 0.0]) }
    }

    #[test]
    fn epsilon_schedule_is_linear() {
        let cfg = TrainConfig { steps: 100, ..Default::default() };
        assert_eq!(cfg.epsilon(0), 0.5);
        assert!((cfg.epsilon(100) - 0.1).abs() < 1e-15);
        assert!((cfg.epsilon(50) - 0.3).abs() < 1e-15);
        assert!((1..=100).all(|s| cfg.epsilon(s) <= cfg.epsilon(s - 1)));
    }

    #[test]
    fn labels_follow_supervision_mode() {
        let ws = WorkspaceConfig::default();
        let failed = GraspOutcome::failed();
        let l = make_labels(&failed, None, &ws, SupervisionMode::Width);
        assert!(!l.y && l.residual.is_none());

        let miss = ThrowOutcome { landing: Vec3::new(2.9, 0.9, 0.0), in_target_box: false, trace: None };
        let g = grasp_ok(ObjectKind::Rod);
        let w = make_labels(&g, Some((&miss, 4.0)), &ws, SupervisionMode::Width);
        let t = make_labels(&g, Some((&miss, 4.0)), &ws, SupervisionMode::ThrowAccuracy);
        assert!(w.y);
        assert!(!t.y);
        // Residual is recorded wherever the object lands.
        let expected = 4.0 - ballistics::speed_for_landing(miss.landing, &ws).unwrap();
        assert_eq!(t.residual, Some(expected));
        assert_eq!(w.residual, t.residual);
    }

    #[test]
    fn residual_label_is_executed_minus_landing_speed() {
        let ws = WorkspaceConfig::default();
        // Find a landing whose ballistic speed is 3.6 by bisection on x along y = 0.
        let (mut lo, mut hi) = (0.8, 4.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ballistics::speed_for_landing(Vec3::new(mid, 0.0, 0.0), &ws).unwrap() < 3.6 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let landing = Vec3::new(lo, 0.0, 0.0);
        let out = ThrowOutcome { landing, in_target_box: false, trace: None };
        let l = make_labels(&grasp_ok(ObjectKind::Ball), Some((&out, 4.0)), &ws, SupervisionMode::Width);
        assert!((l.residual.unwrap() - 0.4).abs() < 1e-9);
    }

    #[test]
    fn throw_accuracy_positives_are_width_positives() {
        let ws = WorkspaceConfig::default();
        let hit = ThrowOutcome { landing: ws.boxes[3], in_target_box: true, trace: None };
        let g = grasp_ok(ObjectKind::Cube);
        for (grasp, throw) in [(g.clone(), Some((&hit, 3.0))), (GraspOutcome::failed(), None)] {
            let w = make_labels(&grasp, throw, &ws, SupervisionMode::Width);
            let t = make_labels(&grasp, throw, &ws, SupervisionMode::ThrowAccuracy);
            assert!(!t.y || w.y);
        }
    }

    #[test]
    fn zero_steps_leave_policy_untouched() {
        let (policy, sim) = setup(PolicyVariant::ResidualPhysics, 1);
        let before = policy.net.clone();
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        let (after, log) = run_episode_loop(policy, sim, &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(after.net, before);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig { steps: 50, seed: 3, ..Default::default() };
        let run = || {
            let (policy, sim) = setup(PolicyVariant::ResidualPhysics, 3);
            let (p, log) = run_episode_loop(policy, sim, &cfg).unwrap();
            let mut buf = Vec::new();
            write_step_log(&log, &mut buf).unwrap();
            (p.net, buf)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        let parsed = read_step_log(la.as_slice()).unwrap();
        assert_eq!(parsed.len(), 50);
    }

    #[test]
    fn empty_batch_changes_nothing() {
        let (mut policy, _) = setup(PolicyVariant::ResidualPhysics, 2);
        let before = policy.net.clone();
        let mut buf = ReplayBuffer::new(8);
        assert_eq!(experience_replay(&mut policy, &mut buf, &[], &SgdConfig::default()).unwrap(), None);
        assert_eq!(policy.net, before);
    }

    #[test]
    fn physics_only_replay_has_no_throw_head() {
        let (policy, sim) = setup(PolicyVariant::PhysicsOnly, 4);
        let before = policy.net.clone();
        let cfg = TrainConfig { steps: 5, ..Default::default() };
        let (after, log) = run_episode_loop(policy, sim, &cfg).unwrap();
        assert!(after.net.throw.is_none());
        assert_ne!(after.net.grasp, before.grasp);
        assert!(log.iter().all(|r| !r.explored_throw));
    }

    #[test]
    fn repeated_replay_of_one_sample_reduces_its_loss() {
        let (mut policy, mut sim) = setup(PolicyVariant::ResidualPhysics, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut buf = ReplayBuffer::new(4);
        // First successful grasp gives a sample with both loss terms.
        loop {
            let trial = run_trial(&policy, &mut sim, 0, 1.0, SupervisionMode::Width, 0, &mut rng).unwrap();
            sim.reset_if_empty().unwrap();
            if trial.transition.y && trial.transition.throw_sample {
                buf.push(trial.transition);
                break;
            }
        }
        let sgd = SgdConfig { lr: 1e-4, ..Default::default() };
        let losses: Vec<f64> = (0..20)
            .map(|_| experience_replay(&mut policy, &mut buf, &[0, 0, 0, 0], &sgd).unwrap().unwrap())
            .collect();
        assert!(losses[19] < losses[0], "{losses:?}");
    }

    #[test]
    fn pretraining_fits_ballistic_speed_and_freezes_the_rest() {
        let ws = small_ws();
        let hammer = make_object(ObjectKind::Hammer, 1.0, &DynamicsTable::default());
        let sim = Simulator::new(ws.clone(), SimParams::default(), &[hammer], 12, 9).unwrap();
        let arch = ArchConfig { trunk: [8, 8, 16, 16], head: [16, 8, 4], tile: 4, kernel: 3 };
        let mut policy = Policy::<f32>::for_workspace(PolicyVariant::RegressionPoP, arch, &ws, 9).unwrap();
        let before = policy.net.clone();
        let untrained = physics_fit_rms(&policy, &sim, 50, 77).unwrap();
        let sgd = TrainConfig::default().pretrain_sgd;
        pretrain_on_physics(&mut policy, &sim, 3000, &sgd, 9).unwrap();
        let trained = physics_fit_rms(&policy, &sim, 50, 77).unwrap();
        assert_eq!(policy.net.grasp, before.grasp);
        assert_eq!(policy.net.trunk, before.trunk);
        assert!(trained < 0.2, "held-out RMS {trained} (untrained {untrained})");

        let mut same = before.clone();
        let mut p0 = Policy { net: before.clone(), ..policy.clone() };
        pretrain_on_physics(&mut p0, &sim, 0, &sgd, 9).unwrap();
        same.zero_grad();
        assert_eq!(p0.net, same);
    }
}
