//! Experiment harness: ablation, grasp-supervision study, generalization to
//! unseen boxes and objects, and grasp histograms.
//!
//! Every run is a pure function of its [`ExperimentConfig`] and seed. Results
//! are returned in memory and, when `out_dir` is set, written as CSV/JSON
//! under `<out_dir>/<name>/<variant>/seed_<seed>/`.

mod histogram;
mod metrics;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use histogram::{build_histograms, entropy_bits, export_grasp_histograms, GraspHistogram, HISTOGRAM_CELL};
pub use metrics::{learning_curve, mean_std, KindMetrics, LearningCurves, MetricsReport, CURVE_WINDOW};

use crate::error::{Error, Result};
use crate::policy::{ArchConfig, Policy, PolicyVariant};
use crate::scene::{
    displaced_box_layout, layouts_overlap, make_object, make_standard_objects_with, make_unseen_objects_with,
    train_box_layout, DynamicsTable, ObjectKind, ObjectModel, WorkspaceConfig,
};
use crate::simulator::{SimParams, Simulator};
use crate::trainer::{evaluate, run_episode_loop, write_step_log, StepRecord, SupervisionMode, TrainConfig};

/// Offset added to a run's seed for its evaluation bin stream, so
/// evaluation scenes never replay training scenes.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

/// Which objects populate the bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ObjectSet {
    /// The four training kinds, mixed.
    Seen,
    /// The held-out kinds, mixed.
    Unseen,
    /// A single kind.
    Kind(ObjectKind),
}

impl TryFrom<String> for ObjectSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ObjectSet> for String {
    fn from(s: ObjectSet) -> String {
        s.to_string()
    }
}

impl std::str::FromStr for ObjectSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(Self::Seen),
            "unseen" => Ok(Self::Unseen),
            other => Ok(Self::Kind(other.parse()?)),
        }
    }
}

impl std::fmt::Display for ObjectSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Seen => f.write_str("seen"),
            Self::Unseen => f.write_str("unseen"),
            Self::Kind(k) => f.write_str(k.name()),
        }
    }
}

impl ObjectSet {
    pub fn models(&self, dynamics: &DynamicsTable) -> Vec<ObjectModel> {
        match self {
            Self::Seen => make_standard_objects_with(1.0, dynamics),
            Self::Unseen => make_unseen_objects_with(dynamics),
            Self::Kind(k) => vec![make_object(*k, 1.0, dynamics)],
        }
    }
}

/// Box positions used for training or for the generalization test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxLayout {
    Train,
    DisplacedTest,
}

impl BoxLayout {
    pub fn boxes(self, landing_height: f64) -> Vec<crate::scene::Vec3> {
        match self {
            Self::Train => train_box_layout(landing_height),
            Self::DisplacedTest => displaced_box_layout(landing_height),
        }
    }
}

/// Everything that defines an experiment. Loaded from TOML; every field
/// has a default, so a config file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub variant: PolicyVariant,
    pub objects: ObjectSet,
    /// Layout used for evaluation; training always uses the train layout.
    pub layout: BoxLayout,
    pub objects_per_bin: usize,
    pub eval_steps: usize,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub workspace: WorkspaceConfig,
    pub sim: SimParams,
    pub dynamics: DynamicsTable,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            variant: PolicyVariant::ResidualPhysics,
            objects: ObjectSet::Seen,
            layout: BoxLayout::Train,
            objects_per_bin: 12,
            eval_steps: 1000,
            seeds: vec![0, 1, 2],
            out_dir: None,
            train: TrainConfig::default(),
            arch: ArchConfig::default(),
            workspace: WorkspaceConfig::default(),
            sim: SimParams::default(),
            dynamics: DynamicsTable::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.dynamics.validate()?;
        if self.objects_per_bin == 0 {
            return Err(Error::Config("objects_per_bin must be at least 1".into()));
        }
        let h = self.workspace.landing_height;
        if layouts_overlap(&BoxLayout::Train.boxes(h), &BoxLayout::DisplacedTest.boxes(h), self.workspace.box_opening) {
            return Err(Error::Config("displaced test boxes overlap the training boxes".into()));
        }
        Ok(())
    }

    /// Workspace with the boxes of `layout`.
    pub fn workspace_for(&self, layout: BoxLayout) -> WorkspaceConfig {
        self.workspace.clone().with_boxes(layout.boxes(self.workspace.landing_height))
    }

    pub fn with_variant(&self, variant: PolicyVariant) -> Self {
        Self { variant, ..self.clone() }
    }

    /// Directory for one (variant, seed) run, if outputs are enabled.
    pub fn run_dir(&self, variant: PolicyVariant, seed: u64) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join(&self.name).join(variant.name()).join(format!("seed_{seed}")))
    }

    fn simulator(&self, layout: BoxLayout, objects: ObjectSet, seed: u64) -> Result<Simulator> {
        let models = objects.models(&self.dynamics);
        Simulator::new(self.workspace_for(layout), self.sim.clone(), &models, self.objects_per_bin, seed)
    }

    /// Untrained policy for this config's variant. The conditioning scale
    /// always comes from the training layout.
    pub fn fresh_policy(&self, seed: u64) -> Result<Policy<f32>> {
        Policy::for_workspace(self.variant, self.arch, &self.workspace_for(BoxLayout::Train), seed)
    }
}

/// SHA-256 of the serialized parameters, hex encoded.
pub fn checkpoint_hash(policy: &Policy<f32>) -> Result<String> {
    let mut buf = Vec::new();
    policy.save(&mut buf)?;
    Ok(Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect())
}

/// A trained policy plus its training and evaluation record.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub variant: PolicyVariant,
    pub seed: u64,
    pub policy: Policy<f32>,
    pub train_log: Vec<StepRecord>,
    pub eval: MetricsReport,
    pub eval_log: Vec<StepRecord>,
}

/// Trains `cfg.variant` from `seed` on the train layout.
pub fn train(cfg: &ExperimentConfig, seed: u64) -> Result<(Policy<f32>, Vec<StepRecord>)> {
    let sim = cfg.simulator(BoxLayout::Train, cfg.objects, seed)?;
    let policy = cfg.fresh_policy(seed)?;
    let train = TrainConfig { seed, ..cfg.train.clone() };
    log::info!("training {} seed {seed} for {} steps", cfg.variant, train.steps);
    run_episode_loop(policy, sim, &train)
}

/// Greedy evaluation with frozen parameters, checked by hashing the
/// checkpoint before and after.
pub fn evaluate_policy(
    cfg: &ExperimentConfig,
    policy: &Policy<f32>,
    layout: BoxLayout,
    objects: ObjectSet,
    seed: u64,
) -> Result<(MetricsReport, Vec<StepRecord>)> {
    let before = checkpoint_hash(policy)?;
    let eval_seed = seed.wrapping_add(EVAL_SEED_OFFSET);
    let mut sim = cfg.simulator(layout, objects, eval_seed)?;
    let log = evaluate(policy, &mut sim, cfg.eval_steps, cfg.train.supervision, cfg.train.max_failed_grasps, eval_seed)?;
    if checkpoint_hash(policy)? != before {
        return Err(Error::Checkpoint("parameters changed during evaluation".into()));
    }
    let condition = format!("{objects}/{}", serde_json::to_value(layout).expect("enum").as_str().unwrap_or(""));
    Ok((MetricsReport::from_log(&log, policy.variant, seed, condition), log))
}

/// Trains and evaluates one (variant, seed) and writes its outputs.
pub fn train_and_evaluate(cfg: &ExperimentConfig, seed: u64) -> Result<TrainedRun> {
    let (policy, train_log) = train(cfg, seed)?;
    let (eval, eval_log) = evaluate_policy(cfg, &policy, cfg.layout, cfg.objects, seed)?;
    log::info!(
        "{} seed {seed}: grasp {:.1}% throw {:.1}%",
        cfg.variant,
        eval.grasp_success_pct,
        eval.throw_success_pct
    );
    let run = TrainedRun { variant: cfg.variant, seed, policy, train_log, eval, eval_log };
    if let Some(dir) = cfg.run_dir(cfg.variant, seed) {
        write_run(&dir, &run)?;
    }
    Ok(run)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?)?;
    Ok(())
}

/// Writes the training log, learning curve and checkpoint of one run.
pub fn write_training(dir: &Path, policy: &Policy<f32>, log: &[StepRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_step_log(log, buffered(&dir.join("train_steps.csv"))?)?;
    LearningCurves::from_log(log, CURVE_WINDOW).write_csv(buffered(&dir.join("curve.csv"))?)?;
    policy.save(buffered(&dir.join("checkpoint.bin"))?)?;
    Ok(())
}

/// Writes an evaluation log and its report, named after `tag`.
pub fn write_evaluation(dir: &Path, tag: &str, report: &MetricsReport, log: &[StepRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_step_log(log, buffered(&dir.join(format!("{tag}_steps.csv")))?)?;
    write_json(&dir.join(format!("{tag}.json")), report)
}

fn buffered(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn write_run(dir: &Path, run: &TrainedRun) -> Result<()> {
    write_training(dir, &run.policy, &run.train_log)?;
    write_evaluation(dir, "eval", &run.eval, &run.eval_log)
}

/// Trains one seed and writes its outputs when `out_dir` is set.
pub fn train_run(cfg: &ExperimentConfig, seed: u64) -> Result<(Policy<f32>, Vec<StepRecord>)> {
    let (policy, log) = train(cfg, seed)?;
    if let Some(dir) = cfg.run_dir(cfg.variant, seed) {
        write_training(&dir, &policy, &log)?;
    }
    Ok((policy, log))
}

/// Loads the checkpoint that [`train_run`] or [`train_and_evaluate`] wrote for (variant, seed).
pub fn load_trained(cfg: &ExperimentConfig, variant: PolicyVariant, seed: u64) -> Result<Policy<f32>> {
    let dir = cfg.run_dir(variant, seed).ok_or_else(|| Error::Config("out_dir is not set".into()))?;
    let mut policy = cfg.with_variant(variant).fresh_policy(seed)?;
    policy.load(std::io::BufReader::new(std::fs::File::open(dir.join("checkpoint.bin"))?))?;
    Ok(policy)
}

/// Mean and standard deviation over seeds for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: PolicyVariant,
    pub condition: String,
    pub seeds: usize,
    pub grasp_mean: f64,
    pub grasp_std: f64,
    pub throw_mean: f64,
    pub throw_std: f64,
    pub mean_abs_offset: f64,
}

/// Groups reports by variant (in first-seen order) and averages over seeds.
pub fn summarize(reports: &[MetricsReport]) -> Vec<VariantSummary> {
    let mut order: Vec<PolicyVariant> = Vec::new();
    for r in reports {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    order
        .into_iter()
        .map(|v| {
            let rs: Vec<&MetricsReport> = reports.iter().filter(|r| r.variant == v).collect();
            let (grasp_mean, grasp_std) = mean_std(&rs.iter().map(|r| r.grasp_success_pct).collect::<Vec<_>>());
            let (throw_mean, throw_std) = mean_std(&rs.iter().map(|r| r.throw_success_pct).collect::<Vec<_>>());
            let (mean_abs_offset, _) = mean_std(&rs.iter().map(|r| r.mean_abs_offset).collect::<Vec<_>>());
            VariantSummary {
                variant: v,
                condition: rs[0].condition.clone(),
                seeds: rs.len(),
                grasp_mean,
                grasp_std,
                throw_mean,
                throw_std,
                mean_abs_offset,
            }
        })
        .collect()
}

/// Writes a summary table as CSV.
pub fn write_summary_csv<W: std::io::Write>(rows: &[VariantSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(cfg: &ExperimentConfig, file: &str, reports: &[MetricsReport]) -> Result<()> {
    if let Some(out) = &cfg.out_dir {
        let dir = out.join(&cfg.name);
        std::fs::create_dir_all(&dir)?;
        write_summary_csv(&summarize(reports), std::fs::File::create(dir.join(format!("{file}.csv")))?)?;
        write_json(&dir.join(format!("{file}.json")), &reports)?;
    }
    Ok(())
}

/// Trains and evaluates every config over its seeds.
pub fn run_ablation(cfgs: &[ExperimentConfig]) -> Result<Vec<TrainedRun>> {
    let mut runs = Vec::new();
    for cfg in cfgs {
        for &seed in &cfg.seeds {
            runs.push(train_and_evaluate(cfg, seed)?);
        }
    }
    if let Some(cfg) = cfgs.first() {
        write_summary(cfg, "ablation", &runs.iter().map(|r| r.eval.clone()).collect::<Vec<_>>())?;
    }
    Ok(runs)
}

/// One config per variant, sharing everything else.
pub fn ablation_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    PolicyVariant::ALL.into_iter().map(|v| base.with_variant(v)).collect()
}

/// Evaluates trained (seed, policy) pairs on the displaced box layout
/// without training.
pub fn run_unseen_locations(cfg: &ExperimentConfig, policies: &[(u64, &Policy<f32>)]) -> Result<Vec<MetricsReport>> {
    let reports = policies
        .iter()
        .map(|&(seed, p)| Ok(evaluate_policy(cfg, p, BoxLayout::DisplacedTest, cfg.objects, seed)?.0))
        .collect::<Result<Vec<_>>>()?;
    write_summary(cfg, "unseen_locations", &reports)?;
    Ok(reports)
}

/// Evaluates trained (seed, policy) pairs on the held-out object set.
pub fn run_unseen_objects(cfg: &ExperimentConfig, policies: &[(u64, &Policy<f32>)]) -> Result<Vec<MetricsReport>> {
    let reports = policies
        .iter()
        .map(|&(seed, p)| Ok(evaluate_policy(cfg, p, BoxLayout::Train, ObjectSet::Unseen, seed)?.0))
        .collect::<Result<Vec<_>>>()?;
    write_summary(cfg, "unseen_objects", &reports)?;
    Ok(reports)
}

/// Outcome of training the same variant under both grasp labels.
#[derive(Debug, Clone)]
pub struct SupervisionStudy {
    pub width: Vec<TrainedRun>,
    pub throw_accuracy: Vec<TrainedRun>,
}

/// Histogram of successful evaluation grasps on `kind`, pooled over runs.
pub fn pooled_histogram(runs: &[TrainedRun], kind: ObjectKind, cfg: &ExperimentConfig) -> GraspHistogram {
    let model = make_object(kind, 1.0, &cfg.dynamics);
    let log: Vec<StepRecord> = runs.iter().flat_map(|r| r.eval_log.iter().cloned()).collect();
    build_histograms(&log, &[model], cfg.sim.gripper_half_width, HISTOGRAM_CELL).remove(0)
}

/// Trains `cfg` (ResidualPhysics expected) with width and throw-accuracy
/// grasp labels; `width` may reuse runs that already exist.
pub fn run_supervision_study(cfg: &ExperimentConfig, width: Option<Vec<TrainedRun>>) -> Result<SupervisionStudy> {
    if !matches!(cfg.objects, ObjectSet::Kind(ObjectKind::Rod | ObjectKind::Hammer)) {
        log::warn!("supervision study is meant for a rod or hammer set, got {}", cfg.objects);
    }
    let mode = |m: SupervisionMode, suffix: &str| ExperimentConfig {
        name: format!("{}_{suffix}", cfg.name),
        train: TrainConfig { supervision: m, ..cfg.train.clone() },
        ..cfg.clone()
    };
    let width = match width {
        Some(runs) => runs,
        None => run_ablation(&[mode(SupervisionMode::Width, "width")])?,
    };
    let throw_accuracy = run_ablation(&[mode(SupervisionMode::ThrowAccuracy, "throw_accuracy")])?;
    if let (Some(out), ObjectSet::Kind(kind)) = (&cfg.out_dir, cfg.objects) {
        for (runs, suffix) in [(&width, "width"), (&throw_accuracy, "throw_accuracy")] {
            let log: Vec<StepRecord> = runs.iter().flat_map(|r| r.eval_log.iter().cloned()).collect();
            let models = [make_object(kind, 1.0, &cfg.dynamics)];
            export_grasp_histograms(&log, &models, cfg.sim.gripper_half_width, &out.join(&cfg.name).join(format!("histograms_{suffix}")))?;
        }
    }
    Ok(SupervisionStudy { width, throw_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            objects: ObjectSet::Kind(ObjectKind::Cube),
            objects_per_bin: 4,
            eval_steps: 20,
            seeds: vec![5],
            train: TrainConfig { steps: 30, pretrain_steps: 20, ..Default::default() },
            arch: ArchConfig { trunk: [4, 4, 8, 8], head: [8, 4, 4], tile: 2, kernel: 3 },
            workspace: WorkspaceConfig { resolution: 0.025, num_rotations: 4, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = tiny_config();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_takes_defaults() {
        let cfg = ExperimentConfig::from_toml_str("variant = \"regression-pop\"\nobjects = \"hammer\"\n[train]\nsteps = 7\n").unwrap();
        assert_eq!(cfg.variant, PolicyVariant::RegressionPoP);
        assert_eq!(cfg.objects, ObjectSet::Kind(ObjectKind::Hammer));
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.eval_steps, 1000);
        assert!(ExperimentConfig::from_toml_str("objects = \"anvil\"").is_err());
    }

    #[test]
    fn layouts_do_not_overlap() {
        let ws = WorkspaceConfig::default();
        let train = BoxLayout::Train.boxes(0.0);
        let test = BoxLayout::DisplacedTest.boxes(0.0);
        assert!(!layouts_overlap(&train, &test, ws.box_opening));
        assert_eq!(train.len(), test.len());
    }

    #[test]
    fn evaluation_is_frozen_and_deterministic() {
        let cfg = tiny_config();
        let policy = cfg.fresh_policy(1).unwrap();
        let hash = checkpoint_hash(&policy).unwrap();
        let (a, la) = evaluate_policy(&cfg, &policy, BoxLayout::Train, cfg.objects, 1).unwrap();
        let (b, lb) = evaluate_policy(&cfg, &policy, BoxLayout::Train, cfg.objects, 1).unwrap();
        assert_eq!(checkpoint_hash(&policy).unwrap(), hash);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(la.iter().all(|r| !r.explored_grasp && r.epsilon == 0.0));
    }

    #[test]
    fn same_seeds_give_identical_reports() {
        let cfgs = ablation_configs(&tiny_config());
        let a = run_ablation(&cfgs).unwrap();
        let b = run_ablation(&cfgs).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.eval, y.eval);
            assert_eq!(x.train_log, y.train_log);
        }
        let pairs: Vec<_> = a.iter().map(|r| (r.seed, &r.policy)).collect();
        let unseen = run_unseen_objects(&cfgs[0], &pairs).unwrap();
        assert_eq!(unseen[0].condition, "unseen/train");
        let kinds = unseen.iter().flat_map(|r| r.per_kind.iter().map(|k| k.kind.clone())).collect::<std::collections::BTreeSet<_>>();
        assert!(kinds.len() <= ObjectKind::UNSEEN.len());
    }

    #[test]
    fn outputs_are_written_and_checkpoints_reload() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { out_dir: Some(dir.path().to_path_buf()), ..tiny_config() };
        let run = train_and_evaluate(&cfg, 5).unwrap();
        let run_dir = cfg.run_dir(cfg.variant, 5).unwrap();
        for f in ["train_steps.csv", "eval_steps.csv", "curve.csv", "eval.json", "checkpoint.bin"] {
            assert!(run_dir.join(f).exists(), "{f}");
        }
        let loaded = load_trained(&cfg, cfg.variant, 5).unwrap();
        assert_eq!(checkpoint_hash(&loaded).unwrap(), checkpoint_hash(&run.policy).unwrap());
    }

    #[test]
    fn summary_averages_over_seeds() {
        let mk = |seed, g, t| MetricsReport {
            variant: PolicyVariant::PhysicsOnly,
            seed,
            condition: "c".into(),
            attempts: 10,
            grasps: 0,
            grasp_success_pct: g,
            throws: 0,
            throw_hits: 0,
            throw_success_pct: t,
            mean_abs_offset: 0.0,
            per_kind: vec![],
        };
        let s = summarize(&[mk(0, 50.0, 40.0), mk(1, 70.0, 60.0)]);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].grasp_mean, s[0].throw_mean, s[0].seeds), (60.0, 50.0, 2));
    }
}
