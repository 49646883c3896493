//! Spiral paths, prior directories and adaptation strategies.

use styletrf::camera::Camera;
use styletrf::grid::{Aabb, GridShape, VMGrid};
use styletrf::math::{norm, sub};
use styletrf::optim::LossWeights;
use styletrf::render::{render_image, RenderConfig};
use styletrf::style::{
    adapt, load_priors, render_priors, spiral_trajectory, swap_channels, AdaptConfig,
    PriorManifest, SpiralParams, Strategy, MANIFEST_NAME,
};

fn reference() -> Camera {
    Camera::look_at(16, 16, 18.0, [0.3, -3.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0]).unwrap()
}

#[test]
fn spiral_follows_closed_form_with_bounded_steps() {
    let r = reference();
    let p = SpiralParams {
        n_views: 25,
        radius: 0.6,
        n_turns: 2.5,
        focus_distance: 3.0,
        advance: 0.4,
    };
    let cams = spiral_trajectory(&r, &p).unwrap();
    let right = [r.rotation[0][0], r.rotation[1][0], r.rotation[2][0]];
    let up = [r.rotation[0][1], r.rotation[1][1], r.rotation[2][1]];
    let fwd = r.forward();
    let bound = std::f64::consts::TAU * p.radius * p.n_turns / p.n_views as f64
        + p.advance / p.n_views as f64;
    for (k, cam) in cams.iter().enumerate() {
        let s = k as f64 / p.n_views as f64;
        let theta = std::f64::consts::TAU * p.n_turns * s;
        let want: [f64; 3] = std::array::from_fn(|a| {
            r.position[a]
                + p.radius * theta.cos() * right[a]
                + p.radius * theta.sin() * up[a]
                + p.advance * s * fwd[a]
        });
        assert!(norm(sub(cam.position, want)) < 1e-12);
        if k > 0 {
            assert!(norm(sub(cam.position, cams[k - 1].position)) <= bound + 1e-12);
        }
    }
}

#[test]
fn zero_radius_spiral_stays_at_reference() {
    let r = reference();
    let p = SpiralParams {
        n_views: 5,
        radius: 0.0,
        focus_distance: norm(r.position),
        ..Default::default()
    };
    for cam in spiral_trajectory(&r, &p).unwrap() {
        assert!(norm(sub(cam.position, r.position)) < 1e-12);
        for a in 0..3 {
            for b in 0..3 {
                assert!((cam.rotation[a][b] - r.rotation[a][b]).abs() < 1e-9);
            }
        }
    }
}

fn tiny_grid(seed: u64) -> VMGrid {
    let shape = GridShape {
        resolution: [6; 3],
        density_rank: 2,
        appearance_rank: 2,
        sh_degree: 1,
    };
    let mut grid = VMGrid::random(shape, Aabb::cube(1.0), seed).unwrap();
    for s in grid.density.slices_mut() {
        s.iter_mut().enumerate().for_each(|(i, x)| *x = 1.0 + 0.5 * (i as f32 * 0.61).sin());
    }
    grid
}

fn priors_cfg(iters: usize) -> AdaptConfig {
    AdaptConfig {
        iters,
        rays_per_iter: 128,
        render: RenderConfig {
            samples_per_ray: 32,
            stratified_jitter: true,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn eval_cfg() -> RenderConfig {
    RenderConfig {
        samples_per_ray: 32,
        ..Default::default()
    }
}

#[test]
fn prior_directory_round_trip() {
    let grid = tiny_grid(1);
    let dir = tempfile::tempdir().unwrap();
    let one = render_priors(&grid, &[reference()], &eval_cfg(), dir.path()).unwrap();
    let manifest = PriorManifest::load(&dir.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(manifest.entries.len(), 1);
    let path = dir.path().join("copy.json");
    manifest.save(&path).unwrap();
    assert_eq!(PriorManifest::load(&path).unwrap(), manifest);

    let loaded = load_priors(dir.path(), dir.path()).unwrap();
    assert_eq!(loaded.views[0].camera, one.views[0].camera);
    assert_eq!(loaded.views[0].image, one.views[0].image.quantized());
}

#[test]
fn self_rendered_priors_are_a_fixed_point() {
    let grid = tiny_grid(2);
    let cams = spiral_trajectory(&reference(), &SpiralParams { n_views: 4, radius: 0.3, focus_distance: 3.2, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let priors = render_priors(&grid, &cams, &eval_cfg(), dir.path()).unwrap();
    let cfg = AdaptConfig {
        render: eval_cfg(),
        tv_weight: 0.0,
        l1_weight: 0.0,
        ..priors_cfg(20)
    };
    let (out, hist) = adapt(&grid, &priors, Strategy::S3, &cfg, |_| {}).unwrap();
    assert!(hist[0].loss < 1e-12);
    let drift = out
        .param_slices()
        .iter()
        .zip(grid.param_slices())
        .flat_map(|((_, a), (_, b))| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0f32, f32::max);
    assert!(drift < 1e-3, "drift {drift}");
}

#[test]
fn density_frozen_adaptation_keeps_geometry() {
    let grid = tiny_grid(3);
    let cams = spiral_trajectory(&reference(), &SpiralParams { n_views: 4, radius: 0.3, focus_distance: 3.2, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let priors = render_priors(&grid, &cams, &eval_cfg(), dir.path())
        .unwrap()
        .map_images(|_, img| swap_channels(img));
    let before = priors.clone();
    let (out, hist) = adapt(&grid, &priors, Strategy::S3, &priors_cfg(60), |_| {}).unwrap();
    assert_eq!(priors, before);
    assert_eq!(out.density, grid.density);
    assert!(hist.last().unwrap().mse < hist[0].mse);
    for cam in &cams {
        let a = render_image(&grid, cam, &eval_cfg()).unwrap();
        let b = render_image(&out, cam, &eval_cfg()).unwrap();
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.opacity, b.opacity);
    }
    let (s2, _) = adapt(&grid, &priors, Strategy::S2, &priors_cfg(60), |_| {}).unwrap();
    assert_ne!(s2.density, grid.density);
}

#[test]
fn scratch_strategy_ignores_input_weights() {
    let cams = spiral_trajectory(&reference(), &SpiralParams { n_views: 3, radius: 0.3, focus_distance: 3.2, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let priors = render_priors(&tiny_grid(4), &cams, &eval_cfg(), dir.path()).unwrap();
    let cfg = priors_cfg(5);
    let (a, _) = adapt(&tiny_grid(5), &priors, Strategy::S1, &cfg, |_| {}).unwrap();
    let (b, _) = adapt(&tiny_grid(6), &priors, Strategy::S1, &cfg, |_| {}).unwrap();
    assert_eq!(a, b);
}

#[test]
fn default_adaptation_settings() {
    let cfg = AdaptConfig::default();
    assert_eq!(cfg.iters, 1000);
    assert_eq!(cfg.lr, 0.02);
    assert_eq!(cfg.rays_per_iter, 1024);
    assert_eq!(SpiralParams::default().n_views, 30);
    let w = LossWeights { tv: cfg.tv_weight, l1: cfg.l1_weight };
    assert_eq!(w, LossWeights { tv: 0.01, l1: 1e-5 });
}
