//! Loss, analytic gradients and the coarse-to-fine fitting loop.
//!
//! The reconstruction term is the squared error of rendered colors averaged
//! over rays and channels. Gradients are propagated by hand through the
//! compositing weights, the density activation, the factor interpolation, the
//! feature basis and the spherical-harmonics sigmoid decoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::grid::{Aabb, GridGradients, GridShape, ParamGroup, VMGrid};
use crate::render::{ray_rng, trace_ray, RayTrace, RenderConfig};
use crate::scene::PosedImage;
use crate::sh;

/// Rays per gradient shard. Shards are reduced in index order, so results do
/// not depend on the worker count.
const SHARD_RAYS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsampleStep {
    pub iteration: usize,
    pub resolution: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub rays_per_iter: usize,
    pub lr_init: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Initial grid shape; its resolution is the starting resolution.
    pub grid: GridShape,
    pub upsample_schedule: Vec<UpsampleStep>,
    pub final_resolution: [usize; 3],
    pub tv_weight: f64,
    pub l1_weight: f64,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Cubic resolutions spaced geometrically from `start` (exclusive) to `end`.
pub fn log_spaced_schedule(start: usize, end: usize, iterations: &[usize]) -> Vec<UpsampleStep> {
    let k = iterations.len();
    iterations
        .iter()
        .enumerate()
        .map(|(i, &iteration)| {
            let t = (i + 1) as f64 / k as f64;
            let n = ((start as f64).ln() * (1.0 - t) + (end as f64).ln() * t)
                .exp()
                .round() as usize;
            UpsampleStep {
                iteration,
                resolution: [n; 3],
            }
        })
        .collect()
}

impl TrainConfig {
    /// Laptop-scale defaults: 32³ growing to 64³ over 2000 iterations.
    pub fn desk() -> Self {
        TrainConfig {
            total_iters: 2000,
            rays_per_iter: 1024,
            lr_init: 0.02,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            grid: GridShape {
                resolution: [32; 3],
                ..GridShape::default()
            },
            upsample_schedule: log_spaced_schedule(32, 64, &[250, 500, 750, 1000]),
            final_resolution: [64; 3],
            tv_weight: 0.01,
            l1_weight: 1e-5,
            seed: 0,
            render: RenderConfig {
                stratified_jitter: true,
                ..RenderConfig::default()
            },
        }
    }

    /// Published schedule: 15k iterations of 4096 rays, 128³ upsampled at
    /// iterations 2000..=5000 to `final_res`³ (300 synthetic, 640 real).
    pub fn paper_scale(final_res: usize) -> Self {
        TrainConfig {
            total_iters: 15_000,
            rays_per_iter: 4096,
            grid: GridShape {
                resolution: [128; 3],
                ..GridShape::default()
            },
            upsample_schedule: log_spaced_schedule(128, final_res, &[2000, 3000, 4000, 5000]),
            final_resolution: [final_res; 3],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays_per_iter == 0 {
            return Err(Error::contract("rays_per_iter must be >= 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::contract(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.lr_init > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::contract("lr_init and adam_eps must be positive"));
        }
        if self
            .upsample_schedule
            .windows(2)
            .any(|w| w[0].iteration >= w[1].iteration)
        {
            return Err(Error::contract(
                "upsample schedule iterations must be strictly increasing",
            ));
        }
        let mut res = self.grid.resolution;
        for step in &self.upsample_schedule {
            if (0..3).any(|i| step.resolution[i] < res[i]) {
                return Err(Error::contract("upsample schedule must not shrink the grid"));
            }
            res = step.resolution;
        }
        if res != self.final_resolution {
            return Err(Error::contract(format!(
                "final_resolution {:?} disagrees with the schedule's last resolution {res:?}",
                self.final_resolution
            )));
        }
        self.grid.validate()?;
        self.render.validate()
    }
}

/// Which parameter groups receive gradient updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradMask {
    pub density: bool,
    pub appearance: bool,
    pub basis: bool,
}

impl GradMask {
    pub const ALL: GradMask = GradMask {
        density: true,
        appearance: true,
        basis: true,
    };
    /// Appearance-only fine-tuning.
    pub const FROZEN_DENSITY: GradMask = GradMask {
        density: false,
        appearance: true,
        basis: true,
    };

    pub fn trainable(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Density => self.density,
            ParamGroup::Appearance => self.appearance,
            ParamGroup::Basis => self.basis,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.density || self.appearance || self.basis {
            Ok(())
        } else {
            Err(Error::contract("at least one parameter group must be trainable"))
        }
    }
}

/// Rays with their target colors.
#[derive(Clone, Debug, Default)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub targets: Vec<[f64; 3]>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossWeights {
    pub tv: f64,
    pub l1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub tv: f64,
    pub l1: f64,
}

/// Loss and analytic gradients for one batch. `render.seed` selects the
/// jitter; ray `i` uses jitter stream `i`.
pub fn loss_and_grads(
    grid: &VMGrid,
    batch: &RayBatch,
    render: &RenderConfig,
    weights: LossWeights,
    mask: GradMask,
) -> Result<(LossBreakdown, GridGradients)> {
    mask.validate()?;
    if batch.is_empty() || batch.targets.len() != batch.len() {
        return Err(Error::contract("batch must be non-empty with one target per ray"));
    }
    if batch
        .targets
        .iter()
        .flatten()
        .any(|&v| !(0.0..=1.0).contains(&v))
    {
        return Err(Error::contract("batch targets must lie in [0, 1]"));
    }
    let norm = 1.0 / (3 * batch.len()) as f64;
    let shards: Vec<Result<(f64, GridGradients)>> = (0..batch.len().div_ceil(SHARD_RAYS))
        .into_par_iter()
        .map(|s| {
            let mut grads = GridGradients::zeros_like(grid);
            let mut sq = 0.0;
            let end = ((s + 1) * SHARD_RAYS).min(batch.len());
            for i in s * SHARD_RAYS..end {
                let mut rng = ray_rng(render.seed, i as u64);
                let trace = trace_ray(grid, &batch.rays[i], render, Some(&mut rng))?;
                let target = batch.targets[i];
                let mut d_rgb = [0.0; 3];
                for c in 0..3 {
                    let e = trace.output.rgb[c] - target[c];
                    sq += e * e;
                    d_rgb[c] = 2.0 * e * norm;
                }
                backprop_ray(grid, &trace, d_rgb, render.background, mask, &mut grads);
            }
            Ok((sq, grads))
        })
        .collect();

    let mut grads = GridGradients::zeros_like(grid);
    let mut sq = 0.0;
    for shard in shards {
        let (s, g) = shard?;
        sq += s;
        grads.add_assign(&g);
    }
    let mse = sq * norm;
    let tv = if weights.tv != 0.0 { grid.tv_loss() } else { 0.0 };
    let l1 = if weights.l1 != 0.0 { grid.l1_reg() } else { 0.0 };
    if weights.tv != 0.0 {
        grid.tv_grad(weights.tv, &mut grads);
    }
    if weights.l1 != 0.0 {
        grid.l1_grad(weights.l1, &mut grads);
    }
    grads.apply_mask(|g| mask.trainable(g));
    let breakdown = LossBreakdown {
        total: mse + weights.tv * tv + weights.l1 * l1,
        mse,
        tv,
        l1,
    };
    Ok((breakdown, grads))
}

/// Accumulates `d(loss)/d(params)` for one traced ray given `d(loss)/d(rgb)`.
fn backprop_ray(
    grid: &VMGrid,
    trace: &RayTrace,
    d_rgb: [f64; 3],
    background: [f64; 3],
    mask: GradMask,
    grads: &mut GridGradients,
) {
    let n = trace.sigmas.len();
    if n == 0 {
        return;
    }
    let weights = &trace.composite.weights;
    // Transmittance before each sample, recomputed exactly as in the forward pass.
    let mut trans = Vec::with_capacity(n + 1);
    let mut optical = 0.0f64;
    for q in 0..n {
        trans.push((-optical).exp());
        optical += trace.sigmas[q] * trace.deltas[q];
    }
    let t_final = (-optical).exp();
    trans.push(t_final);

    let k = grid.coeff_dim();
    let f_dim = grid.feature_dim();
    let need_appearance = mask.appearance || mask.basis;
    let mut d_feature = vec![0.0; f_dim];
    let mut d_coeffs = vec![0.0; k];
    let mut d_density = vec![0.0; 3 * grid.shape.density_rank];

    // Radiance arriving from behind sample q (background included).
    let mut behind = [
        t_final * background[0],
        t_final * background[1],
        t_final * background[2],
    ];
    for q in (0..n).rev() {
        if trace.sigmas[q] <= 0.0 {
            continue;
        }
        let w = weights[q];
        let c = trace.colors[q];
        let st = &trace.stencils[q];
        if mask.density {
            let t_next = trans[q + 1];
            let d_s: f64 = (0..3)
                .map(|ch| d_rgb[ch] * (t_next * c[ch] - behind[ch]))
                .sum();
            let d_sigma = d_s * trace.deltas[q];
            if d_sigma != 0.0 {
                d_density.fill(d_sigma);
                grid.density.backprop_components(st, &d_density, &mut grads.density);
            }
        }
        if need_appearance && w > 0.0 {
            let d_c = [w * d_rgb[0], w * d_rgb[1], w * d_rgb[2]];
            sh::backprop_decode(c, d_c, &trace.sh_basis, &mut d_feature);
            let coeffs = &trace.coeffs[q * k..(q + 1) * k];
            if mask.basis {
                for (row, &df) in grads.basis.chunks_exact_mut(k).zip(&d_feature) {
                    if df != 0.0 {
                        row.iter_mut().zip(coeffs).for_each(|(g, &x)| *g += df * x);
                    }
                }
            }
            if mask.appearance {
                d_coeffs.fill(0.0);
                for (row, &df) in grid.basis.chunks_exact(k).zip(&d_feature) {
                    if df != 0.0 {
                        d_coeffs
                            .iter_mut()
                            .zip(row)
                            .for_each(|(d, &b)| *d += df * b as f64);
                    }
                }
                grid.appearance
                    .backprop_components(st, &d_coeffs, &mut grads.appearance);
            }
        }
        for ch in 0..3 {
            behind[ch] += w * c[ch];
        }
    }
}

/// Adam moments shaped like the learnable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(grid: &VMGrid) -> Self {
        let shapes: Vec<usize> = grid.param_slices().iter().map(|(_, s)| s.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Frozen groups are not touched at all.
pub fn adam_step(
    grid: &mut VMGrid,
    grads: &GridGradients,
    state: &mut AdamState,
    params: AdamParams,
    mask: GradMask,
) -> Result<()> {
    let gslices = grads.slices();
    let mut pslices = grid.param_slices_mut();
    if pslices.len() != state.m.len()
        || pslices
            .iter()
            .zip(&gslices)
            .zip(&state.m)
            .any(|(((_, p), (_, g)), m)| p.len() != g.len() || p.len() != m.len())
    {
        return Err(Error::contract("gradients or optimizer state do not match the grid"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - params.beta1.powi(t);
    let bc2 = 1.0 - params.beta2.powi(t);
    for (i, ((group, p), (_, g))) in pslices.iter_mut().zip(&gslices).enumerate() {
        if !mask.trainable(*group) {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = params.beta1 * m[j] + (1.0 - params.beta1) * gj;
            v[j] = params.beta2 * v[j] + (1.0 - params.beta2) * gj * gj;
            if m[j] == 0.0 {
                continue;
            }
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = (p[j] as f64 - params.lr * m_hat / (v_hat.sqrt() + params.eps)) as f32;
        }
    }
    Ok(())
}

/// Every pixel of a set of posed images as a ray with its target.
pub fn ray_pool(views: &[PosedImage]) -> RayBatch {
    let mut pool = RayBatch::default();
    for view in views {
        let cam = &view.camera;
        for py in 0..cam.height {
            for px in 0..cam.width {
                pool.rays.push(cam.ray(px, py));
                pool.targets.push(view.image.pixel(px, py));
            }
        }
    }
    pool
}

/// Draws batches without replacement from a pool reshuffled every epoch.
pub struct RaySampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl RaySampler {
    pub fn new(pool_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..pool_size).collect();
        order.shuffle(&mut rng);
        RaySampler {
            order,
            cursor: 0,
            rng,
        }
    }

    pub fn next_batch(&mut self, pool: &RayBatch, n: usize) -> RayBatch {
        let mut batch = RayBatch {
            rays: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
        };
        for _ in 0..n {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let i = self.order[self.cursor];
            self.cursor += 1;
            batch.rays.push(pool.rays[i]);
            batch.targets.push(pool.targets[i]);
        }
        batch
    }
}

/// Per-iteration record of an optimization run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterStats {
    pub iteration: usize,
    pub loss: f64,
    pub mse: f64,
    pub resolution: [usize; 3],
}

/// Settings of the inner optimization loop shared by fitting and adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfig {
    pub iters: usize,
    pub rays_per_iter: usize,
    pub adam: AdamParams,
    pub weights: LossWeights,
    pub schedule: Vec<UpsampleStep>,
    pub render: RenderConfig,
    pub seed: u64,
}

/// Runs `cfg.iters` Adam iterations on rays drawn from `views`. At every
/// scheduled iteration the grid is upsampled and the optimizer restarted at
/// the initial learning rate.
pub fn optimize(
    mut grid: VMGrid,
    views: &[PosedImage],
    cfg: &LoopConfig,
    mask: GradMask,
    mut on_iter: impl FnMut(&IterStats),
) -> Result<(VMGrid, Vec<IterStats>)> {
    mask.validate()?;
    cfg.render.validate()?;
    if views.is_empty() {
        return Err(Error::contract("optimization needs at least one view"));
    }
    let pool = ray_pool(views);
    let mut sampler = RaySampler::new(pool.len(), cfg.seed);
    let mut state = AdamState::new(&grid);
    let mut history = Vec::with_capacity(cfg.iters);
    let mut schedule = cfg.schedule.iter().peekable();
    for iteration in 0..cfg.iters {
        while let Some(step) = schedule.next_if(|s| s.iteration <= iteration) {
            grid = grid.upsample(step.resolution)?;
            state = AdamState::new(&grid);
        }
        let batch = sampler.next_batch(&pool, cfg.rays_per_iter);
        let render = RenderConfig {
            seed: mix_seed(cfg.seed, iteration as u64),
            ..cfg.render.clone()
        };
        let (loss, grads) = loss_and_grads(&grid, &batch, &render, cfg.weights, mask)?;
        if !loss.total.is_finite() || !grads.all_finite() {
            return Err(Error::Numerical {
                iteration,
                detail: format!("non-finite loss {} or gradient", loss.total),
            });
        }
        adam_step(&mut grid, &grads, &mut state, cfg.adam, mask)?;
        let stats = IterStats {
            iteration,
            loss: loss.total,
            mse: loss.mse,
            resolution: grid.resolution(),
        };
        on_iter(&stats);
        history.push(stats);
    }
    Ok((grid, history))
}

/// SplitMix64 finalizer over a (seed, index) pair.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits a freshly initialized grid to posed images.
pub fn fit(
    views: &[PosedImage],
    aabb: Aabb,
    cfg: &TrainConfig,
    on_iter: impl FnMut(&IterStats),
) -> Result<(VMGrid, Vec<IterStats>)> {
    cfg.validate()?;
    if views.len() < 2 {
        return Err(Error::contract("fitting needs at least two posed images"));
    }
    let grid = VMGrid::random(cfg.grid, aabb, cfg.seed)?;
    let loop_cfg = LoopConfig {
        iters: cfg.total_iters,
        rays_per_iter: cfg.rays_per_iter,
        adam: AdamParams {
            lr: cfg.lr_init,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        },
        weights: LossWeights {
            tv: cfg.tv_weight,
            l1: cfg.l1_weight,
        },
        schedule: cfg.upsample_schedule.clone(),
        render: cfg.render.clone(),
        seed: cfg.seed,
    };
    optimize(grid, views, &loop_cfg, GradMask::ALL, on_iter)
}
