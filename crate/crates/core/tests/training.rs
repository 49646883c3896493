//! End-to-end behavior of the fitting loop on a small synthetic scene.

use styletrf::grid::{GridShape, VMGrid};
use styletrf::optim::{fit, log_spaced_schedule, optimize, GradMask, LoopConfig, TrainConfig};
use styletrf::scene::{make_synthetic, Dataset, SyntheticSceneSpec, ViewSpec};

fn small_dataset() -> Dataset {
    let views = ViewSpec {
        n_train: 4,
        n_test: 1,
        width: 16,
        height: 16,
        ..Default::default()
    };
    make_synthetic(&SyntheticSceneSpec::default(), &views).unwrap().0
}

fn small_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.total_iters = 12;
    cfg.rays_per_iter = 300;
    cfg.grid = GridShape {
        resolution: [8; 3],
        density_rank: 2,
        appearance_rank: 3,
        sh_degree: 1,
    };
    cfg.upsample_schedule = log_spaced_schedule(8, 12, &[4, 8]);
    cfg.final_resolution = [12; 3];
    cfg.render.samples_per_ray = 24;
    cfg
}

fn run_with_threads(threads: usize, data: &Dataset, cfg: &TrainConfig) -> VMGrid {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| fit(&data.train, data.aabb, cfg, |_| {}).unwrap().0)
}

#[test]
fn fit_is_independent_of_worker_count() {
    let data = small_dataset();
    let cfg = small_cfg();
    let one = run_with_threads(1, &data, &cfg);
    assert_eq!(one, run_with_threads(1, &data, &cfg));
    assert_eq!(one, run_with_threads(3, &data, &cfg));
    assert_eq!(one.resolution(), [12; 3]);
}

#[test]
fn zero_iterations_return_the_initial_grid() {
    let data = small_dataset();
    let cfg = TrainConfig {
        total_iters: 0,
        upsample_schedule: vec![],
        final_resolution: [8; 3],
        ..small_cfg()
    };
    let (grid, history) = fit(&data.train, data.aabb, &cfg, |_| {}).unwrap();
    assert!(history.is_empty());
    assert_eq!(grid, VMGrid::random(cfg.grid, data.aabb, cfg.seed).unwrap());
}

#[test]
fn fitting_reduces_the_loss() {
    let data = small_dataset();
    let cfg = TrainConfig {
        total_iters: 60,
        ..small_cfg()
    };
    let (_, history) = fit(&data.train, data.aabb, &cfg, |_| {}).unwrap();
    let head: f64 = history[..5].iter().map(|s| s.mse).sum::<f64>() / 5.0;
    let tail: f64 = history[55..].iter().map(|s| s.mse).sum::<f64>() / 5.0;
    assert!(tail < 0.5 * head, "mse {head} -> {tail}");
}

#[test]
fn frozen_density_survives_a_full_run() {
    let data = small_dataset();
    let cfg = small_cfg();
    let grid = VMGrid::random(cfg.grid, data.aabb, 4).unwrap();
    let loop_cfg = LoopConfig {
        iters: 10,
        rays_per_iter: 200,
        adam: styletrf::optim::AdamParams {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        },
        weights: styletrf::optim::LossWeights { tv: 0.1, l1: 0.1 },
        schedule: vec![],
        render: cfg.render.clone(),
        seed: 1,
    };
    let (out, _) = optimize(grid.clone(), &data.train, &loop_cfg, GradMask::FROZEN_DENSITY, |_| {}).unwrap();
    assert_eq!(out.density, grid.density);
    assert_ne!(out.appearance, grid.appearance);
}

#[test]
fn paper_scale_values_are_expressible() {
    let cfg = TrainConfig::paper_scale(300);
    cfg.validate().unwrap();
    assert_eq!(cfg.total_iters, 15_000);
    assert_eq!(cfg.rays_per_iter, 4096);
    assert_eq!(cfg.lr_init, 0.02);
    assert_eq!(cfg.grid.resolution, [128; 3]);
    assert_eq!(cfg.final_resolution, [300; 3]);
    let real = TrainConfig::paper_scale(640);
    assert_eq!(real.upsample_schedule.last().unwrap().resolution, [640; 3]);
    let text = serde_json::to_string(&real).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), real);
}
