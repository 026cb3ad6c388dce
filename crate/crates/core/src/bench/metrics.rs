use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::PolicyVariant;
use crate::trainer::StepRecord;

/// Learning-curve window (attempts).
pub const CURVE_WINDOW: usize = 1000;

/// Success rate over the last `window` attempts at every step. Before a full
/// window exists the rate over the first i attempts is weighted by i/window,
/// which is the same as dividing the hit count by `window`.
pub fn learning_curve(successes: &[bool], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut hits = 0usize;
    successes
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            hits += s as usize;
            if i >= window {
                hits -= successes[i - window] as usize;
            }
            hits as f64 / window as f64
        })
        .collect()
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Counts for one object kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindMetrics {
    pub kind: String,
    /// Successful grasps of this kind.
    pub grasps: usize,
    pub throws: usize,
    pub throw_hits: usize,
    pub throw_success_pct: f64,
    /// Mean |s| over successful grasps (m).
    pub mean_abs_offset: f64,
}

/// Evaluation (or training) summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: PolicyVariant,
    pub seed: u64,
    /// Free-form description of the evaluation condition.
    pub condition: String,
    pub attempts: usize,
    pub grasps: usize,
    pub grasp_success_pct: f64,
    pub throws: usize,
    pub throw_hits: usize,
    /// Thrown objects that landed in the intended box.
    pub throw_success_pct: f64,
    /// Mean |s| over successful grasps (m).
    pub mean_abs_offset: f64,
    pub per_kind: Vec<KindMetrics>,
}

impl MetricsReport {
    pub fn from_log(log: &[StepRecord], variant: PolicyVariant, seed: u64, condition: impl Into<String>) -> Self {
        #[derive(Default)]
        struct Acc {
            grasps: usize,
            throws: usize,
            hits: usize,
            offset: f64,
        }
        let mut total = Acc::default();
        let mut kinds: BTreeMap<String, Acc> = BTreeMap::new();
        for r in log.iter().filter(|r| r.grasp_success) {
            let offset = r.grasp_offset.unwrap_or(0.0).abs();
            let kind = kinds.entry(r.object_kind.clone().unwrap_or_default()).or_default();
            for acc in [&mut total, kind] {
                acc.grasps += 1;
                acc.throws += r.thrown as usize;
                acc.hits += r.throw_success as usize;
                acc.offset += offset;
            }
        }
        let mean = |a: &Acc| if a.grasps == 0 { 0.0 } else { a.offset / a.grasps as f64 };
        Self {
            variant,
            seed,
            condition: condition.into(),
            attempts: log.len(),
            grasps: total.grasps,
            grasp_success_pct: pct(total.grasps, log.len()),
            throws: total.throws,
            throw_hits: total.hits,
            throw_success_pct: pct(total.hits, total.throws),
            mean_abs_offset: mean(&total),
            per_kind: kinds
                .into_iter()
                .map(|(kind, a)| KindMetrics {
                    kind,
                    grasps: a.grasps,
                    throws: a.throws,
                    throw_hits: a.hits,
                    throw_success_pct: pct(a.hits, a.throws),
                    mean_abs_offset: mean(&a),
                })
                .collect(),
        }
    }
}

/// Windowed grasp and throw success over a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurves {
    pub window: usize,
    pub grasp: Vec<f64>,
    /// Throw hits per attempt (a failed grasp counts as a failed throw).
    pub throw: Vec<f64>,
}

impl LearningCurves {
    pub fn from_log(log: &[StepRecord], window: usize) -> Self {
        let grasp: Vec<bool> = log.iter().map(|r| r.grasp_success).collect();
        let throw: Vec<bool> = log.iter().map(|r| r.throw_success).collect();
        Self { window, grasp: learning_curve(&grasp, window), throw: learning_curve(&throw, window) }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,grasp_success,throw_success")?;
        for (i, (g, t)) in self.grasp.iter().zip(&self.throw).enumerate() {
            writeln!(out, "{i},{g:.6},{t:.6}")?;
        }
        Ok(())
    }
}

/// Mean and sample standard deviation of `values` (std is 0 for fewer than two).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: usize, grasp: bool, thrown: bool, hit: bool, kind: &str, offset: f64) -> StepRecord {
        StepRecord {
            step,
            epsilon: 0.0,
            target_box: 0,
            rotation: 0,
            row: 0,
            col: 0,
            explored_grasp: false,
            grasp_success: grasp,
            object_kind: grasp.then(|| kind.to_string()),
            grasp_x: None,
            grasp_y: None,
            grasp_offset: grasp.then_some(offset),
            thrown,
            throw_success: hit,
            explored_throw: false,
            executed_speed: None,
            ballistic_speed: None,
            landing_x: None,
            landing_y: None,
            residual: None,
            loss: None,
        }
    }

    #[test]
    fn early_curve_is_weighted_by_progress() {
        let s = [true, false, true, true];
        let c = learning_curve(&s, 10);
        // Window success over the first i attempts, times i / j.
        for (i, v) in c.iter().enumerate() {
            let seen = &s[..=i];
            let rate = seen.iter().filter(|&&x| x).count() as f64 / seen.len() as f64;
            assert_eq!(*v, rate * seen.len() as f64 / 10.0);
        }
    }

    #[test]
    fn full_window_slides() {
        let s: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let c = learning_curve(&s, 5);
        assert_eq!(c.len(), 20);
        assert_eq!(c[4], 0.0);
        assert_eq!(c[12], 3.0 / 5.0);
        assert_eq!(c[19], 1.0);
    }

    #[test]
    fn report_counts_and_breakdown() {
        let log = vec![
            record(0, true, true, true, "hammer", 0.02),
            record(1, false, false, false, "", 0.0),
            record(2, true, true, false, "hammer", -0.04),
            record(3, true, true, true, "rod", 0.0),
        ];
        let r = MetricsReport::from_log(&log, PolicyVariant::ResidualPhysics, 1, "test");
        assert_eq!(r.grasp_success_pct, 75.0);
        assert!((r.throw_success_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_kind.len(), 2);
        let hammer = r.per_kind.iter().find(|k| k.kind == "hammer").unwrap();
        assert_eq!((hammer.grasps, hammer.throw_hits), (2, 1));
        assert!((hammer.mean_abs_offset - 0.03).abs() < 1e-12);
        let all = [r.grasp_success_pct, r.throw_success_pct, hammer.throw_success_pct];
        assert!(all.iter().all(|p| (0.0..=100.0).contains(p)));
    }

    #[test]
    fn empty_log_reports_zeros() {
        let r = MetricsReport::from_log(&[], PolicyVariant::PhysicsOnly, 0, "");
        assert_eq!((r.grasp_success_pct, r.throw_success_pct, r.per_kind.len()), (0.0, 0.0, 0));
    }

    #[test]
    fn curve_length_matches_log() {
        let log: Vec<StepRecord> = (0..37).map(|i| record(i, i % 3 == 0, false, false, "ball", 0.0)).collect();
        let c = LearningCurves::from_log(&log, CURVE_WINDOW);
        assert_eq!((c.grasp.len(), c.throw.len()), (37, 37));
    }
}
