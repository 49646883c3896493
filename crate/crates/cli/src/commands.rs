use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use styletrf::camera::Camera;
use styletrf::checkpoint::{load_checkpoint, save_checkpoint};
use styletrf::consistency::{eval_trajectory, EvalOptions};
use styletrf::grid::VMGrid;
use styletrf::imaging::{frame_name, psnr};
use styletrf::math;
use styletrf::optim::{fit as fit_grid, log_spaced_schedule, IterStats, TrainConfig, UpsampleStep};
use styletrf::render::{render_image, RenderConfig};
use styletrf::scene::{load_dataset, make_synthetic, save_dataset, Dataset, SyntheticTruth};
use styletrf::style::{
    adapt as adapt_grid, depth_rmse, load_priors, spiral_trajectory, swap_channels, toy_stylize,
    PriorEntry, PriorManifest, PriorSet, MANIFEST_NAME,
};
use styletrf::Error;

use crate::config::{load_config, set, AdaptJob, EvalJob, RenderJob, SpiralSettings, Stylizer, SynthConfig};
use crate::error::CliError;
use crate::manifest::{beside, RunManifest};
use crate::{AdaptArgs, EvalArgs, FitArgs, Preset, RenderArgs, SynthArgs};

const TRUTH_DIR: &str = "truth";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e }.into())
}

fn progress(quiet: bool, label: &str, total: usize) -> impl FnMut(&IterStats) + '_ {
    move |s: &IterStats| {
        let step = (total / 20).max(1);
        if !quiet && (s.iteration.is_multiple_of(step) || s.iteration + 1 == total) {
            eprintln!(
                "{label} {:>6}/{total}  loss {:.6}  mse {:.6}  res {:?}",
                s.iteration + 1,
                s.loss,
                s.mse,
                s.resolution
            );
        }
    }
}

/// Sibling directory `<dir>_styled`.
fn styled_sibling(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push("_styled");
    dir.with_file_name(name)
}

pub fn synth(args: SynthArgs, quiet: bool) -> Result<(), CliError> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => load_config(p, "synth")?,
        None => SynthConfig::default(),
    };
    args.flags.apply(&mut cfg)?;
    let mut run = RunManifest::new("synth", &cfg, cfg.scene.seed);
    let (data, truth) = run.timed("generate", || make_synthetic(&cfg.scene, &cfg.views))?;
    run.timed("write", || -> Result<(), CliError> {
        save_dataset(&data, &args.out)?;
        truth.save(&args.out.join(TRUTH_DIR))?;
        Ok(())
    })?;
    if let Some(p) = &args.config {
        run.input("config", p);
    }
    run.output("dataset", &args.out);
    run.output("truth", &args.out.join(TRUTH_DIR));
    run.result("train_views", data.train.len());
    run.result("test_views", data.test.len());
    run.write(&args.out.join("run.json"))?;
    if !quiet {
        eprintln!(
            "wrote {} train and {} test views to {}",
            data.train.len(),
            data.test.len(),
            args.out.display()
        );
    }
    Ok(())
}

fn resolution(values: &[usize], flag: &str) -> Result<[usize; 3], CliError> {
    match values {
        [n] => Ok([*n; 3]),
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(CliError::Usage(format!("--{flag} takes N or X,Y,Z"))),
    }
}

fn parse_schedule(items: &[String]) -> Result<Vec<UpsampleStep>, CliError> {
    items
        .iter()
        .map(|item| {
            let bad = || CliError::Usage(format!("bad upsampling step {item:?}, expected ITER:N or ITER:XxYxZ"));
            let (iter, res) = item.split_once(':').ok_or_else(bad)?;
            let dims: Vec<usize> = res
                .split('x')
                .map(|d| d.trim().parse().map_err(|_| bad()))
                .collect::<Result<_, _>>()?;
            Ok(UpsampleStep {
                iteration: iter.trim().parse().map_err(|_| bad())?,
                resolution: resolution(&dims, "upsample-schedule").map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Log-spaced steps between two resolutions at the given iterations, per axis.
fn respaced(start: [usize; 3], end: [usize; 3], iterations: &[usize]) -> Vec<UpsampleStep> {
    if start == end {
        return Vec::new();
    }
    let axes: Vec<Vec<UpsampleStep>> = (0..3)
        .map(|a| log_spaced_schedule(start[a], end[a], iterations))
        .collect();
    (0..iterations.len())
        .map(|k| UpsampleStep {
            iteration: iterations[k],
            resolution: [axes[0][k].resolution[0], axes[1][k].resolution[0], axes[2][k].resolution[0]],
        })
        .collect()
}

/// Moves the upsampling steps so they keep their relative position when the
/// iteration budget changes.
fn rescale_schedule(cfg: &mut TrainConfig, old_total: usize) {
    if cfg.total_iters == 0 || old_total == 0 {
        cfg.upsample_schedule.clear();
        cfg.final_resolution = cfg.grid.resolution;
        return;
    }
    let mut steps: Vec<UpsampleStep> = Vec::new();
    for step in &cfg.upsample_schedule {
        let iteration = step.iteration * cfg.total_iters / old_total;
        if steps.last().is_some_and(|s| s.iteration == iteration) {
            steps.pop();
        }
        steps.push(UpsampleStep { iteration, ..*step });
    }
    cfg.upsample_schedule = steps;
}

fn fit_config(args: &FitArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(p), _) => load_config(p, "fit")?,
        (None, Some(Preset::Paper)) => {
            let n = match &args.final_resolution {
                Some(v) => resolution(v, "final-resolution")?[0],
                None => 300,
            };
            TrainConfig::paper_scale(n)
        }
        (None, _) => TrainConfig::desk(),
    };
    let default_iters = cfg.total_iters;
    set(&mut cfg.total_iters, &args.iters);
    if args.upsample_schedule.is_none() && cfg.total_iters != default_iters {
        rescale_schedule(&mut cfg, default_iters);
    }
    set(&mut cfg.rays_per_iter, &args.rays);
    set(&mut cfg.lr_init, &args.lr);
    set(&mut cfg.beta1, &args.beta1);
    set(&mut cfg.beta2, &args.beta2);
    set(&mut cfg.adam_eps, &args.adam_eps);
    set(&mut cfg.grid.density_rank, &args.density_rank);
    set(&mut cfg.grid.appearance_rank, &args.appearance_rank);
    set(&mut cfg.grid.sh_degree, &args.sh_degree);
    set(&mut cfg.tv_weight, &args.tv_weight);
    set(&mut cfg.l1_weight, &args.l1_weight);
    set(&mut cfg.seed, &args.seed);
    args.render.apply(&mut cfg.render)?;
    let start = args.resolution.as_deref().map(|v| resolution(v, "resolution")).transpose()?;
    let end = args
        .final_resolution
        .as_deref()
        .map(|v| resolution(v, "final-resolution"))
        .transpose()?;
    set(&mut cfg.grid.resolution, &start);
    set(&mut cfg.final_resolution, &end);
    match &args.upsample_schedule {
        Some(items) => cfg.upsample_schedule = parse_schedule(items)?,
        None if start.is_some() || end.is_some() => {
            let iterations: Vec<usize> = cfg.upsample_schedule.iter().map(|s| s.iteration).collect();
            if iterations.is_empty() && end.is_none() {
                cfg.final_resolution = cfg.grid.resolution;
            }
            cfg.upsample_schedule = respaced(cfg.grid.resolution, cfg.final_resolution, &iterations);
        }
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn eval_render(cfg: &RenderConfig) -> RenderConfig {
    RenderConfig {
        stratified_jitter: false,
        ..cfg.clone()
    }
}

pub fn fit(args: FitArgs, quiet: bool) -> Result<(), CliError> {
    let cfg = fit_config(&args)?;
    if args.dry_run {
        let text = serde_json::to_string_pretty(&cfg).expect("configs serialize");
        let _ = writeln!(std::io::stdout(), "{text}");
        return Ok(());
    }
    let mut run = RunManifest::new("fit", &cfg, cfg.seed);
    let data = run.timed("load", || load_dataset(&args.data))?;
    let (grid, history) = run.timed("optimize", || {
        fit_grid(&data.train, data.aabb, &cfg, progress(quiet, "fit", cfg.total_iters))
    })?;
    run.timed("save", || save_checkpoint(&grid, &args.out))?;
    let scores = run.timed("evaluate", || -> Result<Vec<f64>, CliError> {
        let render = eval_render(&cfg.render);
        data.test
            .iter()
            .map(|v| Ok(psnr(render_image(&grid, &v.camera, &render)?.rgb.mse(&v.image))))
            .collect()
    })?;
    run.input("dataset", &args.data);
    if let Some(p) = &args.config {
        run.input("config", p);
    }
    run.output("checkpoint", &args.out);
    run.result("iterations", history.len());
    run.result("final_loss", history.last().map(|s| s.loss));
    run.result("final_resolution", grid.resolution());
    run.result("test_psnr", &scores);
    if !scores.is_empty() {
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        run.result("mean_test_psnr", mean);
        if !quiet {
            eprintln!("held-out PSNR {mean:.2} dB over {} views", scores.len());
        }
    }
    run.write(&beside(&args.out))
}

fn split<'a>(data: &'a Dataset, name: &str) -> Result<&'a [styletrf::scene::PosedImage], CliError> {
    match name {
        "train" => Ok(&data.train),
        "test" => Ok(&data.test),
        _ => Err(CliError::Usage(format!("unknown split {name:?}, expected train or test"))),
    }
}

/// Depth of the scene center along the camera's view axis.
fn center_depth(camera: &Camera, data: &Dataset) -> f64 {
    let to_center = math::sub(data.aabb.center(), camera.position);
    let along = math::dot(to_center, camera.forward());
    if along > 0.0 {
        along
    } else {
        math::norm(to_center)
    }
}

fn reference_spiral(
    data: &Dataset,
    split_name: &str,
    view: usize,
    trajectory: &SpiralSettings,
) -> Result<Vec<Camera>, CliError> {
    let views = split(data, split_name)?;
    let reference = views
        .get(view)
        .ok_or_else(|| CliError::Usage(format!("split {split_name} has no view {view}")))?
        .camera;
    let params = trajectory.resolve(center_depth(&reference, data));
    Ok(spiral_trajectory(&reference, &params)?)
}

fn manifest_cameras(path: &Path) -> Result<Vec<Camera>, CliError> {
    Ok(PriorManifest::load(path)?
        .entries
        .into_iter()
        .map(|e| e.camera)
        .collect())
}

pub fn render(args: RenderArgs, quiet: bool) -> Result<(), CliError> {
    let mut job: RenderJob = match &args.config {
        Some(p) => load_config(p, "render")?,
        None => RenderJob::default(),
    };
    set(&mut job.split, &args.split);
    set(&mut job.reference_view, &args.view);
    set(&mut job.spiral, &args.spiral);
    args.trajectory.apply(&mut job.trajectory);
    set(&mut job.stylizer, &args.stylizer);
    set(&mut job.stylizer_seed, &args.stylizer_seed);
    args.render.apply(&mut job.render)?;
    job.render.validate()?;

    let mut run = RunManifest::new("render", &job, job.render.seed);
    let grid = run.timed("load", || load_checkpoint(&args.checkpoint))?;
    let cameras = match (&args.cameras, &args.data) {
        (Some(path), _) => {
            run.input("cameras", path);
            manifest_cameras(path)?
        }
        (None, Some(dir)) => {
            run.input("dataset", dir);
            let data = load_dataset(dir)?;
            if job.spiral {
                reference_spiral(&data, &job.split, job.reference_view, &job.trajectory)?
            } else {
                split(&data, &job.split)?.iter().map(|v| v.camera).collect()
            }
        }
        (None, None) => unreachable!("clap requires a camera source"),
    };
    create_dir(&args.out)?;
    let styled_dir = (job.stylizer != Stylizer::None)
        .then(|| args.styled_out.clone().unwrap_or_else(|| styled_sibling(&args.out)));
    if let Some(dir) = &styled_dir {
        create_dir(dir)?;
    }
    let mut manifest = PriorManifest::default();
    run.timed("render", || -> Result<(), CliError> {
        for (i, cam) in cameras.iter().enumerate() {
            let out = render_image(&grid, cam, &job.render)?;
            let name = frame_name(i);
            out.rgb.save_png(&args.out.join(&name))?;
            out.depth.save_raw(&args.out.join(format!("depth_{i:04}.f32")))?;
            out.opacity.save_raw(&args.out.join(format!("opacity_{i:04}.f32")))?;
            if let Some(dir) = &styled_dir {
                let styled = match job.stylizer {
                    Stylizer::Swap => swap_channels(&out.rgb),
                    Stylizer::Toy => toy_stylize(&out.rgb, i, job.stylizer_seed),
                    Stylizer::None => unreachable!(),
                };
                styled.save_png(&dir.join(&name))?;
            }
            manifest.entries.push(PriorEntry { file: name, camera: *cam });
            if !quiet {
                eprintln!("rendered frame {}/{}", i + 1, cameras.len());
            }
        }
        Ok(())
    })?;
    manifest.save(&args.out.join(MANIFEST_NAME))?;
    run.input("checkpoint", &args.checkpoint);
    run.output("frames", &args.out);
    if let Some(dir) = &styled_dir {
        run.output("styled", dir);
    }
    run.result("frames", cameras.len());
    run.write(&args.out.join("run.json"))
}

/// Full-image MSE of `grid` against every prior.
fn prior_mse(grid: &VMGrid, priors: &PriorSet, cfg: &RenderConfig) -> Result<f64, CliError> {
    let mut sum = 0.0;
    for v in &priors.views {
        sum += render_image(grid, &v.camera, cfg)?.rgb.mse(&v.image);
    }
    Ok(sum / priors.views.len() as f64)
}

pub fn adapt(args: AdaptArgs, quiet: bool) -> Result<(), CliError> {
    let mut job: AdaptJob = match &args.config {
        Some(p) => load_config(p, "adapt")?,
        None => AdaptJob::default(),
    };
    set(&mut job.strategy, &args.strategy);
    let a = &mut job.adapt;
    set(&mut a.iters, &args.iters);
    set(&mut a.lr, &args.lr);
    set(&mut a.rays_per_iter, &args.rays);
    set(&mut a.beta1, &args.beta1);
    set(&mut a.beta2, &args.beta2);
    set(&mut a.adam_eps, &args.adam_eps);
    set(&mut a.tv_weight, &args.tv_weight);
    set(&mut a.l1_weight, &args.l1_weight);
    set(&mut a.seed, &args.seed);
    args.render.apply(&mut a.render)?;
    a.render.validate()?;

    let mut run = RunManifest::new("adapt", &job, job.adapt.seed);
    let styled_dir = args.styled.clone().unwrap_or_else(|| styled_sibling(&args.priors));
    let (grid, priors) = run.timed("load", || -> Result<_, CliError> {
        Ok((load_checkpoint(&args.checkpoint)?, load_priors(&args.priors, &styled_dir)?))
    })?;
    let measure = eval_render(&job.adapt.render);
    let before = run.timed("measure", || prior_mse(&grid, &priors, &measure))?;
    let (out, history) = run.timed("optimize", || {
        adapt_grid(
            &grid,
            &priors,
            job.strategy,
            &job.adapt,
            progress(quiet, &format!("adapt {:?}", job.strategy), job.adapt.iters),
        )
    })?;
    run.timed("save", || save_checkpoint(&out, &args.out))?;
    let after = run.timed("measure", || prior_mse(&out, &priors, &measure))?;
    run.input("checkpoint", &args.checkpoint);
    run.input("priors", &args.priors);
    run.input("styled", &styled_dir);
    run.output("checkpoint", &args.out);
    run.result("strategy", job.strategy);
    run.result("iterations", history.len());
    run.result("prior_mse_before", before);
    run.result("prior_mse_after", after);
    run.result("density_unchanged", out.density == grid.density);
    if let Some(dir) = &args.truth {
        let rmse = run.timed("truth", || -> Result<f64, CliError> {
            let data = load_dataset(dir)?;
            let truth = SyntheticTruth::load(&dir.join(TRUTH_DIR))?;
            if data.test.is_empty() || truth.test_depth.len() != data.test.len() {
                return Err(CliError::Usage(format!(
                    "{} has no held-out views with ground truth",
                    dir.display()
                )));
            }
            let mut sum = 0.0;
            for (k, v) in data.test.iter().enumerate() {
                let o = render_image(&out, &v.camera, &measure)?;
                sum += depth_rmse(&o.depth, &truth.test_depth[k], &truth.test_opacity[k])?;
            }
            Ok(sum / data.test.len() as f64)
        })?;
        run.input("truth", dir);
        run.result("depth_rmse", rmse);
        if !quiet {
            eprintln!("depth RMSE vs ground truth {rmse:.4}");
        }
    }
    if !quiet {
        eprintln!("prior MSE {before:.6} -> {after:.6}");
    }
    run.write(&beside(&args.out))
}

pub fn eval(args: EvalArgs, quiet: bool) -> Result<(), CliError> {
    let mut job: EvalJob = match &args.config {
        Some(p) => load_config(p, "eval")?,
        None => EvalJob::default(),
    };
    set(&mut job.split, &args.split);
    set(&mut job.reference_view, &args.view);
    set(&mut job.deltas, &args.deltas);
    args.trajectory.apply(&mut job.trajectory);
    args.render.apply(&mut job.render)?;
    job.render.validate()?;

    let mut run = RunManifest::new("eval", &job, job.render.seed);
    let (real, styled) = run.timed("load", || -> Result<_, CliError> {
        Ok((load_checkpoint(&args.real)?, load_checkpoint(&args.styled)?))
    })?;
    let cameras = match (&args.cameras, &args.data) {
        (Some(path), _) => {
            run.input("cameras", path);
            manifest_cameras(path)?
        }
        (None, Some(dir)) => {
            run.input("dataset", dir);
            reference_spiral(&load_dataset(dir)?, &job.split, job.reference_view, &job.trajectory)?
        }
        (None, None) => unreachable!("clap requires a camera source"),
    };
    let opts = EvalOptions {
        deltas: job.deltas.clone(),
        flow_dir: args.flow_dir.clone(),
        dump_dir: args.dump.clone(),
    };
    let report = run.timed("score", || eval_trajectory(&real, &styled, &cameras, &opts, &job.render))?;
    report.save(&args.out)?;
    run.input("real", &args.real);
    run.input("styled", &args.styled);
    if let Some(d) = &args.flow_dir {
        run.input("flow_dir", d);
    }
    if let Some(d) = &args.dump {
        run.output("dump", d);
    }
    run.output("report", &args.out);
    for d in &report.deltas {
        run.result(&format!("mean_delta_{}", d.delta), d.mean);
        if !quiet {
            eprintln!("delta {}: mean {:.3e} over {} pairs", d.delta, d.mean, d.pairs.len());
        }
    }
    run.write(&beside(&args.out))
}
