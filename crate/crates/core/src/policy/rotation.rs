//! Nearest-neighbour rotation of heightmaps and the inverse index maps used to
//! bring per-rotation output maps back into the common (unrotated) frame.

use std::f64::consts::TAU;

/// Angle of rotation bin `k` out of `r`, in radians.
pub fn rotation_angle(k: usize, r: usize) -> f64 {
    k as f64 * TAU / r as f64
}

/// Precomputed index maps for every rotation of an `h x w` image.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSet {
    pub rotations: usize,
    pub height: usize,
    pub width: usize,
    /// Per rotation: source pixel of each rotated pixel, `None` if it falls outside.
    sample: Vec<Vec<Option<u32>>>,
    /// Per rotation: rotated pixel that each common-frame pixel reads from.
    inverse: Vec<Vec<u32>>,
}

impl RotationSet {
    pub fn new(rotations: usize, height: usize, width: usize) -> Self {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let mut sample = Vec::with_capacity(rotations);
        let mut inverse = Vec::with_capacity(rotations);
        let n = height * width;
        // With an even count, rotation k + R/2 is rotation k followed by a
        // point reflection; deriving it that way keeps half-turns exact even
        // where rounding hits a tie.
        let direct = if rotations % 2 == 0 { rotations / 2 } else { rotations };
        for k in 0..direct {
            let (s, c) = rotation_angle(k, rotations).sin_cos();
            let mut fwd = Vec::with_capacity(n);
            let mut inv = Vec::with_capacity(n);
            for row in 0..height {
                for col in 0..width {
                    let (dx, dy) = (col as f64 - cx, row as f64 - cy);
                    // Rotated pixel u reads the original at c + Rot(θ)(u - c).
                    let sx = (cx + c * dx - s * dy).round();
                    let sy = (cy + s * dx + c * dy).round();
                    let inside = sx >= 0.0 && sy >= 0.0 && (sx as usize) < width && (sy as usize) < height;
                    fwd.push(inside.then(|| (sy as usize * width + sx as usize) as u32));
                    // Common pixel p lives at c + Rot(-θ)(p - c) in rotated frame k.
                    let ux = (cx + c * dx + s * dy).round().clamp(0.0, width as f64 - 1.0);
                    let uy = (cy - s * dx + c * dy).round().clamp(0.0, height as f64 - 1.0);
                    inv.push((uy as usize * width + ux as usize) as u32);
                }
            }
            sample.push(fwd);
            inverse.push(inv);
        }
        let last = n as u32 - 1;
        for k in direct..rotations {
            let base = k - direct;
            let fwd = sample[base].iter().map(|s| s.map(|i| last - i)).collect();
            let inv = (0..n).map(|p| inverse[base][n - 1 - p]).collect();
            sample.push(fwd);
            inverse.push(inv);
        }
        Self { rotations, height, width, sample, inverse }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Rotates one channel plane; cells that map outside read `background`.
    pub fn rotate_plane(&self, k: usize, plane: &[f32], background: f32, out: &mut [f32]) {
        for (o, src) in out.iter_mut().zip(&self.sample[k]) {
            *o = src.map_or(background, |i| plane[i as usize]);
        }
    }

    /// Flat rotated-frame index that common pixel `p` of rotation `k` reads.
    pub fn rotated_index(&self, k: usize, p: usize) -> usize {
        self.inverse[k][p] as usize
    }

    /// Maps a rotated-frame output plane back to the common frame.
    pub fn unrotate_plane(&self, k: usize, plane: &[f64], out: &mut [f64]) {
        for (o, &u) in out.iter_mut().zip(&self.inverse[k]) {
            *o = plane[u as usize];
        }
    }
}
