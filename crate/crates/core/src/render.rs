//! Volumetric rendering of a [`VMGrid`].
//!
//! Rays are clipped to the grid bounds and `[near, far]`, sampled at segment
//! midpoints (optionally jittered), and composited front to back:
//! `w_q = T_q (1 - exp(-σ_q Δ_q))` with `T_q = exp(-Σ_{p<q} σ_p Δ_p)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Ray};
use crate::error::{Error, Result};
use crate::grid::{Aabb, Stencil, VMGrid};
use crate::imaging::{RgbImage, ScalarImage};
use crate::sh;

/// Guards the depth normalization.
pub const DEPTH_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    pub stratified_jitter: bool,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples_per_ray: 96,
            near: 0.1,
            far: 10.0,
            background: [1.0; 3],
            stratified_jitter: false,
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::contract(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if self.samples_per_ray < 2 {
            return Err(Error::contract("samples_per_ray must be >= 2"));
        }
        Ok(())
    }
}

/// Deterministic per-ray random stream.
pub fn ray_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Unclamped slab-test interval `(t_enter, t_exit)` of a ray and a box.
pub fn ray_aabb_interval(ray: &Ray, aabb: &Aabb) -> Option<(f64, f64)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for axis in 0..3 {
        let o = ray.origin[axis];
        let d = ray.dir[axis];
        if d == 0.0 {
            if o < aabb.min[axis] || o > aabb.max[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut ta = (aabb.min[axis] - o) * inv;
        let mut tb = (aabb.max[axis] - o) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t_enter = t_enter.max(ta);
        t_exit = t_exit.min(tb);
    }
    (t_enter <= t_exit).then_some((t_enter, t_exit))
}

/// Box interval intersected with `[near, far]`; `None` on a miss.
pub fn ray_aabb_clip(ray: &Ray, aabb: &Aabb, near: f64, far: f64) -> Option<(f64, f64)> {
    let (t0, t1) = ray_aabb_interval(ray, aabb)?;
    let (t0, t1) = (t0.max(near), t1.min(far));
    (t0 < t1).then_some((t0, t1))
}

/// Sample distances and segment lengths over `[t0, t1]`.
pub fn sample_layout(
    t0: f64,
    t1: f64,
    n: usize,
    jitter: Option<&mut ChaCha8Rng>,
) -> (Vec<f64>, Vec<f64>) {
    let delta = (t1 - t0) / n as f64;
    let ts = match jitter {
        Some(rng) => (0..n)
            .map(|q| t0 + (q as f64 + rng.gen::<f64>()) * delta)
            .collect(),
        None => (0..n).map(|q| t0 + (q as f64 + 0.5) * delta).collect(),
    };
    (ts, vec![delta; n])
}

/// Result of compositing one ray, before background blending.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub weights: Vec<f64>,
}

/// Front-to-back compositing of per-sample densities and colors.
pub fn composite(
    sigmas: &[f64],
    colors: &[[f64; 3]],
    deltas: &[f64],
    ts: &[f64],
) -> Result<Composite> {
    let q = sigmas.len();
    if q == 0 || colors.len() != q || deltas.len() != q || ts.len() != q {
        return Err(Error::contract(
            "composite needs equal, non-zero sample counts",
        ));
    }
    if sigmas.iter().any(|&s| !(s >= 0.0)) || deltas.iter().any(|&d| !(d >= 0.0)) {
        return Err(Error::contract("densities and segment lengths must be >= 0"));
    }
    Ok(composite_unchecked(sigmas, colors, deltas, ts))
}

pub(crate) fn composite_unchecked(
    sigmas: &[f64],
    colors: &[[f64; 3]],
    deltas: &[f64],
    ts: &[f64],
) -> Composite {
    let mut weights = Vec::with_capacity(sigmas.len());
    let mut optical = 0.0f64;
    let mut rgb = [0.0; 3];
    let mut depth_acc = 0.0;
    let mut opacity = 0.0f64;
    for i in 0..sigmas.len() {
        let s = sigmas[i] * deltas[i];
        let w = if s > 0.0 {
            (-optical).exp() * -(-s).exp_m1()
        } else {
            0.0
        };
        optical += s;
        weights.push(w);
        if w > 0.0 {
            for c in 0..3 {
                rgb[c] += w * colors[i][c];
            }
            depth_acc += w * ts[i];
            opacity += w;
        }
    }
    Composite {
        rgb,
        depth: depth_acc / opacity.max(DEPTH_EPS),
        opacity,
        weights,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayOutput {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

/// Everything the backward pass needs about one rendered ray.
#[derive(Clone, Debug)]
pub struct RayTrace {
    pub ts: Vec<f64>,
    pub deltas: Vec<f64>,
    pub stencils: Vec<Stencil>,
    pub sigmas: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    /// Appearance coefficients per sample, `coeff_dim` each; zero where σ = 0.
    pub coeffs: Vec<f64>,
    pub sh_basis: Vec<f64>,
    pub composite: Composite,
    pub output: RayOutput,
}

impl RayTrace {
    fn miss(background: [f64; 3]) -> Self {
        RayTrace {
            ts: Vec::new(),
            deltas: Vec::new(),
            stencils: Vec::new(),
            sigmas: Vec::new(),
            colors: Vec::new(),
            coeffs: Vec::new(),
            sh_basis: Vec::new(),
            composite: Composite {
                rgb: [0.0; 3],
                depth: 0.0,
                opacity: 0.0,
                weights: Vec::new(),
            },
            output: RayOutput {
                rgb: background,
                depth: 0.0,
                opacity: 0.0,
            },
        }
    }
}

/// Renders one ray and keeps the intermediate values.
pub fn trace_ray(
    grid: &VMGrid,
    ray: &Ray,
    cfg: &RenderConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<RayTrace> {
    let Some((t0, t1)) = ray_aabb_clip(ray, &grid.aabb, cfg.near, cfg.far) else {
        return Ok(RayTrace::miss(cfg.background));
    };
    let n = cfg.samples_per_ray;
    let (ts, deltas) = sample_layout(t0, t1, n, if cfg.stratified_jitter { rng } else { None });

    let degree = grid.shape.sh_degree;
    let mut sh_basis = vec![0.0; sh::basis_len(degree)];
    sh::eval_basis(degree, ray.dir, &mut sh_basis);

    let k = grid.coeff_dim();
    let mut stencils = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut coeffs = vec![0.0; n * k];
    let mut scratch = Vec::with_capacity(3 * grid.shape.density_rank);
    let mut feature = vec![0.0; grid.feature_dim()];
    for (q, &t) in ts.iter().enumerate() {
        let p = grid.aabb.clamp(ray.at(t));
        let st = grid.stencil(p)?;
        let sigma = grid.raw_density_at(&st, &mut scratch).max(0.0);
        let color = if sigma > 0.0 {
            let c = &mut coeffs[q * k..(q + 1) * k];
            grid.appearance_coeffs_at(&st, c);
            grid.apply_basis(c, &mut feature);
            sh::decode_with_basis(&feature, &sh_basis)
        } else {
            [0.0; 3]
        };
        stencils.push(st);
        sigmas.push(sigma);
        colors.push(color);
    }
    let comp = composite_unchecked(&sigmas, &colors, &deltas, &ts);
    let bg = 1.0 - comp.opacity;
    let output = RayOutput {
        rgb: [
            comp.rgb[0] + bg * cfg.background[0],
            comp.rgb[1] + bg * cfg.background[1],
            comp.rgb[2] + bg * cfg.background[2],
        ],
        depth: comp.depth,
        opacity: comp.opacity,
    };
    Ok(RayTrace {
        ts,
        deltas,
        stencils,
        sigmas,
        colors,
        coeffs,
        sh_basis,
        composite: comp,
        output,
    })
}

/// Renders a single ray; `stream` selects the jitter sequence.
pub fn render_ray(grid: &VMGrid, ray: &Ray, cfg: &RenderConfig, stream: u64) -> Result<RayOutput> {
    let mut rng = ray_rng(cfg.seed, stream);
    Ok(trace_ray(grid, ray, cfg, Some(&mut rng))?.output)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    pub depth: ScalarImage,
    pub opacity: ScalarImage,
}

/// Renders every pixel of `camera`; pixel `i` uses jitter stream `i`.
pub fn render_image(grid: &VMGrid, camera: &Camera, cfg: &RenderConfig) -> Result<RenderOutput> {
    cfg.validate()?;
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let rows: Vec<Vec<RayOutput>> = (0..h)
        .into_par_iter()
        .map(|py| {
            (0..w)
                .map(|px| render_ray(grid, &camera.ray(px, py), cfg, (py * w + px) as u64))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = RenderOutput {
        rgb: RgbImage::new(w, h),
        depth: ScalarImage::new(w, h),
        opacity: ScalarImage::new(w, h),
    };
    for (py, row) in rows.iter().enumerate() {
        for (px, o) in row.iter().enumerate() {
            let i = py * w + px;
            out.rgb.set_pixel(px, py, o.rgb);
            out.depth.data[i] = o.depth as f32;
            out.opacity.data[i] = o.opacity as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn ray(origin: [f64; 3], dir: [f64; 3]) -> Ray {
        Ray {
            origin,
            dir: crate::math::normalize(dir),
        }
    }

    #[test]
    fn slab_through_center() {
        let r = ray([-5.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert_eq!(ray_aabb_interval(&r, &Aabb::cube(1.0)), Some((4.0, 6.0)));
        assert_eq!(ray_aabb_clip(&r, &Aabb::cube(1.0), 4.5, 5.5), Some((4.5, 5.5)));
        assert_eq!(ray_aabb_clip(&r, &Aabb::cube(1.0), 7.0, 9.0), None);
    }

    #[test]
    fn parallel_outside_slab_misses() {
        let r = ray([-5.0, 2.0, 0.0], [1.0, 0.0, 0.0]);
        assert_eq!(ray_aabb_interval(&r, &Aabb::cube(1.0)), None);
    }

    #[test]
    fn empty_space_composite() {
        let c = composite(&[0.0; 4], &[[1.0, 0.5, 0.2]; 4], &[0.3; 4], &[1.0, 2.0, 3.0, 4.0])
            .unwrap();
        assert_eq!(c.rgb, [0.0; 3]);
        assert_eq!(c.opacity, 0.0);
        assert!(c.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn half_opacity_sample() {
        let ln2 = std::f64::consts::LN_2;
        let c = composite(&[ln2], &[[1.0, 0.0, 0.0]], &[1.0], &[2.0]).unwrap();
        assert!((c.weights[0] - 0.5).abs() < 1e-15);
        assert!((c.rgb[0] - 0.5).abs() < 1e-15);
        assert!((c.opacity - 0.5).abs() < 1e-15);
        assert_eq!(c.depth, 2.0);
    }

    #[test]
    fn composite_rejects_negative_inputs() {
        assert!(composite(&[-1.0], &[[0.0; 3]], &[1.0], &[0.0]).is_err());
        assert!(composite(&[1.0], &[[0.0; 3]], &[-1.0], &[0.0]).is_err());
        assert!(composite(&[], &[], &[], &[]).is_err());
    }

    #[test]
    fn zero_density_renders_background() {
        let grid = VMGrid::zeros(GridShape::default(), Aabb::cube(1.5)).unwrap();
        let cfg = RenderConfig {
            background: [0.2, 0.4, 0.6],
            ..Default::default()
        };
        let out = render_ray(&grid, &ray([0.0, 0.0, 4.0], [0.0, 0.0, -1.0]), &cfg, 0).unwrap();
        assert_eq!(out.rgb, [0.2, 0.4, 0.6]);
        assert_eq!(out.opacity, 0.0);
    }

    #[test]
    fn saturated_density_shows_decoded_color() {
        let shape = GridShape {
            resolution: [3; 3],
            density_rank: 1,
            appearance_rank: 1,
            sh_degree: 0,
        };
        let mut grid = VMGrid::zeros(shape, Aabb::cube(1.0)).unwrap();
        for s in grid.density.slices_mut() {
            s.fill(100.0);
        }
        // Feature = (2, 0, -2) * coefficient of mode 0 (a constant 1).
        grid.appearance.modes[0].vectors.fill(1.0);
        grid.appearance.modes[0].matrices.fill(1.0);
        grid.basis = vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0];
        let cfg = RenderConfig {
            background: [0.0; 3],
            ..Default::default()
        };
        let out = render_ray(&grid, &ray([0.0, 0.0, 4.0], [0.0, 0.0, -1.0]), &cfg, 0).unwrap();
        let c0 = 0.282_094_791_773_878_14;
        let expect = [
            crate::math::sigmoid(2.0 * c0),
            0.5,
            crate::math::sigmoid(-2.0 * c0),
        ];
        assert!((out.opacity - 1.0).abs() < 1e-12);
        for c in 0..3 {
            assert!((out.rgb[c] - expect[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let grid = VMGrid::random(
            GridShape {
                resolution: [6; 3],
                ..Default::default()
            },
            Aabb::cube(1.0),
            4,
        )
        .unwrap();
        let cam =
            Camera::look_at(7, 5, 6.0, [0.0, -3.0, 0.5], [0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let cfg = RenderConfig {
            stratified_jitter: true,
            seed: 11,
            ..Default::default()
        };
        let a = render_image(&grid, &cam, &cfg).unwrap();
        let b = render_image(&grid, &cam, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
