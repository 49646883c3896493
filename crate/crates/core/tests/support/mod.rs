//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod fd;

use styletrf::camera::Ray;
use styletrf::grid::{Aabb, FactorSet, VMGrid};
use styletrf::imaging::RgbImage;

/// Dense voxel values of every component of a factor set, indexed
/// `[component][x][y][z]` with components ordered mode-major.
pub fn densify(set: &FactorSet<f32>, res: [usize; 3]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (m, mode) in set.modes.iter().enumerate() {
        for r in 0..set.rank {
            let mut dense = vec![0.0; res[0] * res[1] * res[2]];
            for x in 0..res[0] {
                for y in 0..res[1] {
                    for z in 0..res[2] {
                        let idx = [x, y, z];
                        let (a, b) = match m {
                            0 => (y, z),
                            1 => (x, z),
                            _ => (x, y),
                        };
                        dense[(x * res[1] + y) * res[2] + z] =
                            mode.vector(r, idx[m]) as f64 * mode.matrix(r, a, b) as f64;
                    }
                }
            }
            out.push(dense);
        }
    }
    out
}

/// Trilinear interpolation of a dense `[x][y][z]` array at world point `p`.
pub fn trilinear(dense: &[f64], res: [usize; 3], aabb: &Aabb, p: [f64; 3]) -> f64 {
    let mut i0 = [0usize; 3];
    let mut t = [0.0; 3];
    for k in 0..3 {
        let g = (p[k] - aabb.min[k]) / (aabb.max[k] - aabb.min[k]) * (res[k] - 1) as f64;
        let g = g.clamp(0.0, (res[k] - 1) as f64);
        i0[k] = (g.floor() as usize).min(res[k] - 2);
        t[k] = g - i0[k] as f64;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let hi = (corner >> k) & 1 == 1;
            idx[k] = i0[k] + hi as usize;
            w *= if hi { t[k] } else { 1.0 - t[k] };
        }
        acc += w * dense[(idx[0] * res[1] + idx[1]) * res[2] + idx[2]];
    }
    acc
}

pub struct DenseGrid {
    pub density: Vec<f64>,
    pub appearance: Vec<Vec<f64>>,
}

pub fn dense_grid(grid: &VMGrid) -> DenseGrid {
    let res = grid.resolution();
    let comps = densify(&grid.density, res);
    let mut density = vec![0.0; comps[0].len()];
    for c in &comps {
        for (d, v) in density.iter_mut().zip(c) {
            *d += v;
        }
    }
    DenseGrid {
        density,
        appearance: densify(&grid.appearance, res),
    }
}

pub fn dense_density(grid: &VMGrid, dense: &DenseGrid, p: [f64; 3]) -> f64 {
    trilinear(&dense.density, grid.resolution(), &grid.aabb, p).max(0.0)
}

pub fn dense_feature(grid: &VMGrid, dense: &DenseGrid, p: [f64; 3]) -> Vec<f64> {
    let coeffs: Vec<f64> = dense
        .appearance
        .iter()
        .map(|c| trilinear(c, grid.resolution(), &grid.aabb, p))
        .collect();
    let k = coeffs.len();
    (0..grid.feature_dim())
        .map(|f| {
            (0..k)
                .map(|j| grid.basis[f * k + j] as f64 * coeffs[j])
                .sum()
        })
        .collect()
}

/// Error-free addition of two doubles.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Double-double accumulator (about 106 significant bits).
#[derive(Clone, Copy, Default)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        let (hi, lo) = two_sum(s, e + self.lo);
        self.hi = hi;
        self.lo = lo;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }

    /// `exp(-self)` using the low word as a first-order correction.
    pub fn exp_neg(&self) -> f64 {
        (-self.hi).exp() * (1.0 - self.lo)
    }
}

pub struct PreciseComposite {
    pub rgb: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    pub weights: Vec<f64>,
}

/// Compositing evaluated from explicit prefix sums of optical thickness,
/// with every accumulation carried in double-double precision.
pub fn precise_composite(
    sigmas: &[f64],
    colors: &[[f64; 3]],
    deltas: &[f64],
    ts: &[f64],
) -> PreciseComposite {
    let mut prefix = DoubleDouble::default();
    let mut rgb = [DoubleDouble::default(); 3];
    let mut opacity = DoubleDouble::default();
    let mut depth = DoubleDouble::default();
    let mut weights = Vec::new();
    for q in 0..sigmas.len() {
        let tau = prefix.exp_neg();
        let alpha = -(-sigmas[q] * deltas[q]).exp_m1();
        let w = tau * alpha;
        weights.push(w);
        for c in 0..3 {
            rgb[c].add(w * colors[q][c]);
        }
        opacity.add(w);
        depth.add(w * ts[q]);
        prefix.add(sigmas[q] * deltas[q]);
    }
    let o = opacity.value();
    PreciseComposite {
        rgb: rgb.map(|d| d.value()),
        opacity: o,
        depth: depth.value() / o.max(1e-10),
        weights,
    }
}

/// First and last inside-box positions found by stepping along the ray.
pub fn march_interval(ray: &Ray, aabb: &Aabb, t_max: f64, step: f64) -> Option<(f64, f64)> {
    let mut first = None;
    let mut last = None;
    let n = (2.0 * t_max / step) as i64;
    for k in 0..=n {
        let t = -t_max + k as f64 * step;
        if aabb.contains(ray.at(t)) {
            first.get_or_insert(t);
            last = Some(t);
        }
    }
    Some((first?, last?))
}

/// Straightforward per-pixel bilinear gather at `p + flow(p)`.
pub fn gather(image: &RgbImage, x: f64, y: f64) -> Option<[f64; 3]> {
    let (w, h) = (image.width as f64, image.height as f64);
    if x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0 {
        return None;
    }
    let x0 = x.floor().min(w - 2.0).max(0.0);
    let y0 = y.floor().min(h - 2.0).max(0.0);
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let mut out = [0.0; 3];
    for (dx, dy, wgt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        if wgt == 0.0 {
            continue;
        }
        let p = image.pixel(x0 + dx, y0 + dy);
        for c in 0..3 {
            out[c] += wgt * p[c];
        }
    }
    Some(out)
}
