use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scene::{ObjectKind, ObjectModel};
use crate::trainer::StepRecord;

/// Default histogram cell size (m).
pub const HISTOGRAM_CELL: f64 = 0.005;

/// Counts of successful grasp points over one object's silhouette, in the
/// object frame. Row 0 is the smallest local y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspHistogram {
    pub kind: ObjectKind,
    pub cell: f64,
    /// Local (x, y) of the lower-left grid corner.
    pub origin: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    /// Every successful grasp.
    pub grasps: Vec<u32>,
    /// Successful grasps whose throw landed in the target box.
    pub throw_hits: Vec<u32>,
    /// Successful grasps whose throw missed.
    pub throw_misses: Vec<u32>,
    /// Cell holding the centre of mass, as (row, col).
    pub com_cell: (usize, usize),
}

impl GraspHistogram {
    /// Empty grid covering the object's footprint dilated by `dilation`.
    pub fn new(model: &ObjectModel, dilation: f64, cell: f64) -> Self {
        let (lo, hi) = model.bounds();
        let origin = [lo.x - dilation, lo.y - dilation];
        let cols = (((hi.x - lo.x) + 2.0 * dilation) / cell).ceil().max(1.0) as usize;
        let rows = (((hi.y - lo.y) + 2.0 * dilation) / cell).ceil().max(1.0) as usize;
        let mut h = Self {
            kind: model.kind,
            cell,
            origin,
            rows,
            cols,
            grasps: vec![0; rows * cols],
            throw_hits: vec![0; rows * cols],
            throw_misses: vec![0; rows * cols],
            com_cell: (0, 0),
        };
        h.com_cell = h.cell_of(model.com.x, model.com.y).unwrap_or((rows / 2, cols / 2));
        h
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin[0]) / self.cell).floor();
        let r = ((y - self.origin[1]) / self.cell).floor();
        (c >= 0.0 && r >= 0.0 && (c as usize) < self.cols && (r as usize) < self.rows).then(|| (r as usize, c as usize))
    }

    /// Records one successful grasp; returns false if it falls off the grid.
    pub fn add(&mut self, x: f64, y: f64, thrown: bool, hit: bool) -> bool {
        let Some((r, c)) = self.cell_of(x, y) else {
            return false;
        };
        let i = r * self.cols + c;
        self.grasps[i] += 1;
        if thrown {
            if hit {
                self.throw_hits[i] += 1;
            } else {
                self.throw_misses[i] += 1;
            }
        }
        true
    }

    pub fn total(&self) -> u64 {
        self.grasps.iter().map(|&v| v as u64).sum()
    }

    /// Shannon entropy (bits) of the normalized grasp grid; 0 when empty.
    pub fn entropy(&self) -> f64 {
        entropy_bits(&self.grasps)
    }

    fn write_grid<W: std::io::Write>(&self, grid: &[u32], mut out: W) -> std::io::Result<()> {
        for row in grid.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Shannon entropy (bits) of a count vector.
pub fn entropy_bits(counts: &[u32]) -> f64 {
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    if total == 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// One histogram per model, filled from the successful grasps in `log`.
pub fn build_histograms(log: &[StepRecord], models: &[ObjectModel], dilation: f64, cell: f64) -> Vec<GraspHistogram> {
    let mut hists: Vec<GraspHistogram> = models.iter().map(|m| GraspHistogram::new(m, dilation, cell)).collect();
    for r in log.iter().filter(|r| r.grasp_success) {
        let (Some(kind), Some(x), Some(y)) = (&r.object_kind, r.grasp_x, r.grasp_y) else {
            continue;
        };
        if let Some(h) = hists.iter_mut().find(|h| h.kind.name() == kind) {
            if !h.add(x, y, r.thrown, r.throw_success) {
                log::warn!("grasp point ({x:.4}, {y:.4}) outside the {kind} histogram");
            }
        }
    }
    hists
}

/// Histogram metadata written next to the CSV grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct HistogramMeta {
    kind: ObjectKind,
    cell: f64,
    origin: [f64; 2],
    rows: usize,
    cols: usize,
    com_cell: (usize, usize),
    total: u64,
    entropy_bits: f64,
}

/// Writes `<kind>_{grasps,throw_hits,throw_misses}.csv` matrices plus
/// `<kind>_meta.json` into `dir` for every model, and returns the paths.
pub fn export_grasp_histograms(
    log: &[StepRecord],
    models: &[ObjectModel],
    dilation: f64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for h in build_histograms(log, models, dilation, HISTOGRAM_CELL) {
        let name = h.kind.name();
        for (suffix, grid) in [("grasps", &h.grasps), ("throw_hits", &h.throw_hits), ("throw_misses", &h.throw_misses)] {
            let path = dir.join(format!("{name}_{suffix}.csv"));
            h.write_grid(grid, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            paths.push(path);
        }
        let meta = HistogramMeta {
            kind: h.kind,
            cell: h.cell,
            origin: h.origin,
            rows: h.rows,
            cols: h.cols,
            com_cell: h.com_cell,
            total: h.total(),
            entropy_bits: h.entropy(),
        };
        let path = dir.join(format!("{name}_meta.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&meta).expect("plain data serializes"))?;
        paths.push(path);
    }
    Ok(paths)
}
