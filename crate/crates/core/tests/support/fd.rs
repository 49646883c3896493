//! Finite-difference gradient check on a small dense-interior grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styletrf::camera::Ray;
use styletrf::grid::{Aabb, GridShape, ParamGroup, VMGrid};
use styletrf::math::normalize;
use styletrf::optim::{loss_and_grads, GradMask, LossWeights, RayBatch};
use styletrf::render::RenderConfig;

pub const H: f64 = 1e-3;

/// A 4³ grid whose raw density stays well above the activation kink.
/// Entries follow a golden-ratio sequence so no two neighbors nearly tie,
/// keeping every TV absolute value away from its kink.
pub fn test_grid(seed: u64) -> VMGrid {
    let shape = GridShape {
        resolution: [4; 3],
        density_rank: 2,
        appearance_rank: 2,
        sh_degree: 1,
    };
    let mut grid = VMGrid::zeros(shape, Aabb::cube(1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let fill = |s: &mut [f32], lo: f64, span: f64, rng: &mut ChaCha8Rng| {
        for (i, x) in s.iter_mut().enumerate() {
            let base = (phi * i as f64).fract();
            *x = (lo + span * base + rng.gen_range(-0.002..0.002)) as f32;
        }
    };
    for s in grid.density.slices_mut() {
        fill(s, 0.4, 0.5, &mut rng);
    }
    for s in grid.appearance.slices_mut() {
        fill(s, -0.8, 1.6, &mut rng);
    }
    grid.basis
        .iter_mut()
        .for_each(|x| *x = rng.gen_range(-1.0..1.0));
    grid
}

pub fn test_batch(seed: u64) -> RayBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = RayBatch::default();
    for _ in 0..8 {
        let target: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let origin = normalize([
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ])
        .map(|c| 3.0 * c);
        let aim = [
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
        ];
        let dir = normalize([aim[0] - origin[0], aim[1] - origin[1], aim[2] - origin[2]]);
        batch.rays.push(Ray { origin, dir });
        batch.targets.push(target);
    }
    batch
}

pub fn render_cfg() -> RenderConfig {
    RenderConfig {
        samples_per_ray: 24,
        background: [0.9, 0.6, 0.3],
        ..Default::default()
    }
}

/// Smallest absolute neighbor difference in any factor, to keep the TV
/// absolute value away from its kink.
pub fn min_tv_gap(grid: &VMGrid) -> f64 {
    let mut gap = f64::INFINITY;
    for set in [&grid.density, &grid.appearance] {
        for mode in &set.modes {
            let r = mode.rank;
            for i in 0..mode.vec_len - 1 {
                for c in 0..r {
                    gap = gap.min((mode.vector(c, i + 1) - mode.vector(c, i)).abs() as f64);
                }
            }
            for a in 0..mode.mat_rows {
                for b in 0..mode.mat_cols {
                    for c in 0..r {
                        let here = mode.matrix(c, a, b);
                        if a + 1 < mode.mat_rows {
                            gap = gap.min((mode.matrix(c, a + 1, b) - here).abs() as f64);
                        }
                        if b + 1 < mode.mat_cols {
                            gap = gap.min((mode.matrix(c, a, b + 1) - here).abs() as f64);
                        }
                    }
                }
            }
        }
    }
    gap
}

/// Worst relative error per parameter group.
pub fn max_relative_errors(weights: LossWeights) -> [(ParamGroup, f64); 3] {
    let grid = test_grid(3);
    let batch = test_batch(5);
    let cfg = render_cfg();
    assert!(min_tv_gap(&grid) > 2.0 * H, "TV kink too close for FD");
    let (_, grads) = loss_and_grads(&grid, &batch, &cfg, weights, GradMask::ALL).unwrap();
    let loss_of = |g: &VMGrid| {
        loss_and_grads(g, &batch, &cfg, weights, GradMask::ALL)
            .unwrap()
            .0
            .total
    };

    let analytic: Vec<(ParamGroup, Vec<f64>)> = grads
        .slices()
        .into_iter()
        .map(|(g, s)| (g, s.to_vec()))
        .collect();
    let mut worst = [
        (ParamGroup::Density, 0.0f64),
        (ParamGroup::Appearance, 0.0),
        (ParamGroup::Basis, 0.0),
    ];
    let n_slices = analytic.len();
    for si in 0..n_slices {
        for j in 0..analytic[si].1.len() {
            let mut plus = grid.clone();
            let mut minus = grid.clone();
            let p0 = grid.param_slices()[si].1[j];
            let up = (p0 as f64 + H) as f32;
            let down = (p0 as f64 - H) as f32;
            plus.param_slices_mut()[si].1[j] = up;
            minus.param_slices_mut()[si].1[j] = down;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (up as f64 - down as f64);
            let a = analytic[si].1[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            let slot = worst
                .iter_mut()
                .find(|(g, _)| *g == analytic[si].0)
                .unwrap();
            slot.1 = slot.1.max(rel);
        }
    }
    worst
}
