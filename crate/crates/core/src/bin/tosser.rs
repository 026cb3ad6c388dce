use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use tosser::ballistics::solve_release;
use tosser::bench::{
    self, ablation_configs, evaluate_policy, export_grasp_histograms, load_trained, summarize, write_evaluation,
    ExperimentConfig, ObjectSet,
};
use tosser::policy::PolicyVariant;
use tosser::scene::Vec3;
use tosser::trainer::read_step_log;

/// Rayon worker count; unset means one worker per core.
const THREADS_ENV: &str = "TOSSER_THREADS";

#[derive(Parser)]
#[command(name = "tosser", version, about = "Train and evaluate grasp-and-throw policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply to missing fields.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the config's seed list.
    #[arg(short, long)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Training steps (overrides `train.steps`).
    #[arg(long)]
    steps: Option<usize>,
    /// Policy variant (overrides `variant`).
    #[arg(long)]
    variant: Option<PolicyVariant>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        if let Some(steps) = self.steps {
            cfg.train.steps = steps;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured variant for each seed.
    Train(Common),
    /// Evaluate saved checkpoints on the configured objects and layout.
    Eval(Common),
    /// Train and evaluate all four variants.
    Ablation(Common),
    /// Compare width and throw-accuracy grasp labels.
    Supervision(Common),
    /// Evaluate saved checkpoints of all variants on the displaced boxes.
    UnseenLocations(Common),
    /// Evaluate saved checkpoints of all variants on the held-out objects.
    UnseenObjects(Common),
    /// Print the release plan for a landing target.
    Plan {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(allow_hyphen_values = true)]
        x: f64,
        #[arg(allow_hyphen_values = true)]
        y: f64,
        /// Target height; defaults to the landing plane.
        #[arg(long)]
        z: Option<f64>,
    },
    /// Export grasp histograms from a step log.
    Histograms {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Step log CSV written by train or eval.
        #[arg(long)]
        log: PathBuf,
        /// Object set whose kinds get a histogram.
        #[arg(long, default_value = "seen")]
        objects: ObjectSet,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn print_summary(reports: &[bench::MetricsReport]) {
    println!("{:<18} {:>5} {:>10} {:>10}", "variant", "seeds", "grasp %", "throw %");
    for s in summarize(reports) {
        println!(
            "{:<18} {:>5} {:>5.1}±{:<4.1} {:>5.1}±{:<4.1}",
            s.variant.name(),
            s.seeds,
            s.grasp_mean,
            s.grasp_std,
            s.throw_mean,
            s.throw_std
        );
    }
}

fn checkpoints(cfg: &ExperimentConfig) -> Result<Vec<(PolicyVariant, u64, tosser::policy::Policy<f32>)>> {
    let mut out = Vec::new();
    for v in PolicyVariant::ALL {
        for &seed in &cfg.seeds {
            let p = load_trained(cfg, v, seed).with_context(|| format!("checkpoint for {v} seed {seed}"))?;
            out.push((v, seed, p));
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.load()?;
            for &seed in &cfg.seeds {
                let (_, log) = bench::train_run(&cfg, seed)?;
                let grasps = log.iter().filter(|r| r.grasp_success).count();
                let hits = log.iter().filter(|r| r.throw_success).count();
                println!("{} seed {seed}: {} steps, {grasps} grasps, {hits} hits", cfg.variant, log.len());
            }
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let mut reports = Vec::new();
            for &seed in &cfg.seeds {
                let policy = load_trained(&cfg, cfg.variant, seed).with_context(|| format!("checkpoint for {} seed {seed}", cfg.variant))?;
                let (report, log) = evaluate_policy(&cfg, &policy, cfg.layout, cfg.objects, seed)?;
                if let Some(dir) = cfg.run_dir(cfg.variant, seed) {
                    write_evaluation(&dir, "eval", &report, &log)?;
                }
                reports.push(report);
            }
            print_summary(&reports);
        }
        Command::Ablation(c) => {
            let cfg = c.load()?;
            let runs = bench::run_ablation(&ablation_configs(&cfg))?;
            print_summary(&runs.into_iter().map(|r| r.eval).collect::<Vec<_>>());
        }
        Command::Supervision(c) => {
            let cfg = c.load()?;
            let study = bench::run_supervision_study(&cfg, None)?;
            for (label, runs) in [("width", &study.width), ("throw-accuracy", &study.throw_accuracy)] {
                println!("{label}:");
                print_summary(&runs.iter().map(|r| r.eval.clone()).collect::<Vec<_>>());
                if let ObjectSet::Kind(kind) = cfg.objects {
                    println!("  histogram entropy {:.3} bits", bench::pooled_histogram(runs, kind, &cfg).entropy());
                }
            }
        }
        Command::UnseenLocations(c) => {
            let cfg = c.load()?;
            let loaded = checkpoints(&cfg)?;
            let pairs: Vec<_> = loaded.iter().map(|(_, s, p)| (*s, p)).collect();
            print_summary(&bench::run_unseen_locations(&cfg, &pairs)?);
        }
        Command::UnseenObjects(c) => {
            let cfg = c.load()?;
            let loaded = checkpoints(&cfg)?;
            let pairs: Vec<_> = loaded.iter().map(|(_, s, p)| (*s, p)).collect();
            print_summary(&bench::run_unseen_objects(&cfg, &pairs)?);
        }
        Command::Plan { config, x, y, z } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            let ws = &cfg.workspace;
            let plan = solve_release(Vec3::new(x, y, z.unwrap_or(ws.landing_height)), ws)?;
            println!("{}", serde_json::to_string_pretty(&plan)?);
        }
        Command::Histograms { config, log, objects, out } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            let records = read_step_log(std::fs::File::open(&log).with_context(|| log.display().to_string())?)?;
            let models = objects.models(&cfg.dynamics);
            for path in export_grasp_histograms(&records, &models, cfg.sim.gripper_half_width, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(n) = std::env::var(THREADS_ENV) {
        let threads = match n.parse::<usize>() {
            Ok(t) => t,
            Err(_) => {
                eprintln!("error: {THREADS_ENV} must be a non-negative integer, got {n:?}");
                std::process::exit(2);
            }
        };
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
