//! Stylized-prior generation and appearance adaptation.
//!
//! A prior directory holds `manifest.json` and one PNG per pose. An external
//! stylizer writes images with the same file names into a sibling directory
//! (conventionally `priors_styled/`), which [`load_priors`] pairs back with
//! the poses.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::grid::VMGrid;
use crate::imaging::{frame_name, RgbImage, ScalarImage};
use crate::math;
use crate::optim::{optimize, AdamParams, GradMask, IterStats, LoopConfig, LossWeights};
use crate::render::{render_image, RenderConfig};
use crate::scene::{write_json, PosedImage};

pub const DEFAULT_PRIOR_COUNT: usize = 30;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Fresh grid optimized on the priors alone.
    S1,
    /// Pre-fitted grid, every parameter trainable.
    S2,
    /// Pre-fitted grid with density frozen.
    S3,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::S1, Strategy::S2, Strategy::S3];

    pub fn mask(self) -> GradMask {
        match self {
            Strategy::S1 | Strategy::S2 => GradMask::ALL,
            Strategy::S3 => GradMask::FROZEN_DENSITY,
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Strategy::S1),
            "S2" => Ok(Strategy::S2),
            "S3" => Ok(Strategy::S3),
            _ => Err(Error::contract(format!(
                "unknown strategy {s:?}, expected S1, S2 or S3"
            ))),
        }
    }
}

/// Spiral around the reference view axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralParams {
    pub n_views: usize,
    pub radius: f64,
    pub n_turns: f64,
    /// Distance from the reference camera to the focus point along its view axis.
    pub focus_distance: f64,
    /// Total displacement along the view axis over the whole path.
    pub advance: f64,
}

impl Default for SpiralParams {
    fn default() -> Self {
        SpiralParams {
            n_views: DEFAULT_PRIOR_COUNT,
            radius: 0.5,
            n_turns: 1.0,
            focus_distance: 4.0,
            advance: 0.0,
        }
    }
}

impl SpiralParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::contract("a spiral needs at least one view"));
        }
        let finite = [self.radius, self.n_turns, self.focus_distance, self.advance]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.radius < 0.0 || self.focus_distance <= 0.0 {
            return Err(Error::contract(format!("invalid spiral parameters {self:?}")));
        }
        Ok(())
    }

    /// Camera-frame offset of pose `k`: (right, up, forward) components.
    pub fn offset(&self, k: usize) -> [f64; 3] {
        let s = k as f64 / self.n_views as f64;
        let theta = std::f64::consts::TAU * self.n_turns * s;
        [
            self.radius * theta.cos(),
            self.radius * theta.sin(),
            self.advance * s,
        ]
    }
}

/// Poses on a spiral around the view axis of `reference`, each aimed at the
/// focus point `focus_distance` ahead of it. One view yields the reference.
pub fn spiral_trajectory(reference: &Camera, params: &SpiralParams) -> Result<Vec<Camera>> {
    params.validate()?;
    reference.validate()?;
    if params.n_views == 1 {
        return Ok(vec![*reference]);
    }
    let col = |j: usize| {
        [
            reference.rotation[0][j],
            reference.rotation[1][j],
            reference.rotation[2][j],
        ]
    };
    let (right, up, forward) = (col(0), col(1), reference.forward());
    let focus = math::add(
        reference.position,
        math::scale(forward, params.focus_distance),
    );
    (0..params.n_views)
        .map(|k| {
            let [a, b, c] = params.offset(k);
            let pos = math::add(
                reference.position,
                math::add(
                    math::add(math::scale(right, a), math::scale(up, b)),
                    math::scale(forward, c),
                ),
            );
            let mut cam = Camera::look_at(
                reference.width,
                reference.height,
                reference.focal,
                pos,
                focus,
                up,
            )?;
            cam.cx = reference.cx;
            cam.cy = reference.cy;
            Ok(cam)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub file: String,
    pub camera: Camera,
}

/// Maps prior image file names to their poses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorManifest {
    pub entries: Vec<PriorEntry>,
}

impl PriorManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: PriorManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        for entry in &manifest.entries {
            entry
                .camera
                .validate()
                .map_err(|e| Error::format(path, format!("{}: {e}", entry.file)))?;
        }
        Ok(manifest)
    }
}

/// Posed target images for adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSet {
    pub views: Vec<PosedImage>,
    /// Directory the images were read from, if any.
    pub source: Option<String>,
}

impl PriorSet {
    pub fn new(views: Vec<PosedImage>, source: Option<String>) -> Result<Self> {
        let set = PriorSet { views, source };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .views
            .first()
            .ok_or_else(|| Error::contract("a prior set needs at least one image"))?;
        let (w, h) = (first.image.width, first.image.height);
        for (i, v) in self.views.iter().enumerate() {
            v.camera.validate()?;
            if (v.image.width, v.image.height) != (w, h)
                || (v.camera.width, v.camera.height) != (w, h)
            {
                return Err(Error::contract(format!(
                    "prior {i} is {}x{} (camera {}x{}), expected {w}x{h}",
                    v.image.width, v.image.height, v.camera.width, v.camera.height
                )));
            }
        }
        Ok(())
    }

    /// Applies an image transform to every view, keeping the poses.
    pub fn map_images(&self, mut f: impl FnMut(usize, &RgbImage) -> RgbImage) -> PriorSet {
        PriorSet {
            views: self
                .views
                .iter()
                .enumerate()
                .map(|(i, v)| PosedImage {
                    camera: v.camera,
                    image: f(i, &v.image),
                })
                .collect(),
            source: self.source.clone(),
        }
    }
}

/// Renders one prior per camera into `dir` and writes its manifest.
pub fn render_priors(
    grid: &VMGrid,
    cameras: &[Camera],
    cfg: &RenderConfig,
    dir: &Path,
) -> Result<PriorSet> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = PriorManifest::default();
    let mut views = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let out = render_image(grid, cam, cfg)?;
        let file = frame_name(i);
        out.rgb.save_png(&dir.join(&file))?;
        manifest.entries.push(PriorEntry {
            file,
            camera: *cam,
        });
        views.push(PosedImage {
            camera: *cam,
            image: out.rgb,
        });
    }
    manifest.save(&dir.join(MANIFEST_NAME))?;
    PriorSet::new(views, Some(dir.display().to_string()))
}

/// Pairs the poses in `manifest_dir` with same-named images in `image_dir`.
pub fn load_priors(manifest_dir: &Path, image_dir: &Path) -> Result<PriorSet> {
    let manifest_path = manifest_dir.join(MANIFEST_NAME);
    let manifest = PriorManifest::load(&manifest_path)?;
    if manifest.entries.is_empty() {
        return Err(Error::format(&manifest_path, "manifest lists no priors"));
    }
    let views = manifest
        .entries
        .iter()
        .map(|e| {
            let path = image_dir.join(&e.file);
            let image = RgbImage::load_png(&path)?;
            if (image.width, image.height) != (e.camera.width, e.camera.height) {
                return Err(Error::format(
                    &path,
                    format!(
                        "image is {}x{} but its camera is {}x{}",
                        image.width, image.height, e.camera.width, e.camera.height
                    ),
                ));
            }
            Ok(PosedImage {
                camera: e.camera,
                image,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PriorSet::new(views, Some(image_dir.display().to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub iters: usize,
    pub lr: f64,
    pub rays_per_iter: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub tv_weight: f64,
    pub l1_weight: f64,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            iters: 1000,
            lr: 0.02,
            rays_per_iter: 1024,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            tv_weight: 0.01,
            l1_weight: 1e-5,
            seed: 0,
            render: RenderConfig {
                stratified_jitter: true,
                ..Default::default()
            },
        }
    }
}

/// Fine-tunes `grid` (or, for S1, a fresh grid of the same shape) on the
/// priors.
pub fn adapt(
    grid: &VMGrid,
    priors: &PriorSet,
    strategy: Strategy,
    cfg: &AdaptConfig,
    on_iter: impl FnMut(&IterStats),
) -> Result<(VMGrid, Vec<IterStats>)> {
    priors.validate()?;
    let start = match strategy {
        Strategy::S1 => VMGrid::random(grid.shape, grid.aabb, cfg.seed)?,
        Strategy::S2 | Strategy::S3 => grid.clone(),
    };
    let loop_cfg = LoopConfig {
        iters: cfg.iters,
        rays_per_iter: cfg.rays_per_iter,
        adam: AdamParams {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        },
        weights: LossWeights {
            tv: cfg.tv_weight,
            l1: cfg.l1_weight,
        },
        schedule: Vec::new(),
        render: cfg.render.clone(),
        seed: cfg.seed,
    };
    optimize(start, &priors.views, &loop_cfg, strategy.mask(), on_iter)
}

/// Reorders channels from (r, g, b) to (g, r, b).
pub fn swap_channels(image: &RgbImage) -> RgbImage {
    let mut out = image.clone();
    for px in out.data.chunks_exact_mut(3) {
        px.swap(0, 1);
    }
    out
}

/// Stand-in for an image stylizer: swaps channels and adds a smooth color
/// wave whose phase and direction differ per image, so the styled views
/// disagree with each other the way independently stylized frames do.
pub fn toy_stylize(image: &RgbImage, index: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9));
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let tint: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let freq = 3.0 * std::f64::consts::TAU / image.width.max(image.height) as f64;
    let mut out = swap_channels(image);
    for y in 0..out.height {
        for x in 0..out.width {
            let u = x as f64 * angle.cos() + y as f64 * angle.sin();
            let wave = 0.2 * (freq * u + phase).sin();
            let p = out.pixel(x, y);
            out.set_pixel(
                x,
                y,
                std::array::from_fn(|c| (p[c] + wave * (tint[c] - 0.5) * 2.0).clamp(0.0, 1.0)),
            );
        }
    }
    out
}

/// Depth RMSE over pixels the reference marks as opaque (opacity > 0.5).
pub fn depth_rmse(
    depth: &ScalarImage,
    truth_depth: &ScalarImage,
    truth_opacity: &ScalarImage,
) -> Result<f64> {
    let dims = |i: &ScalarImage| (i.width, i.height);
    if dims(depth) != dims(truth_depth) || dims(depth) != dims(truth_opacity) {
        return Err(Error::contract("depth images differ in size"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&d, &t), &o) in depth
        .data
        .iter()
        .zip(&truth_depth.data)
        .zip(&truth_opacity.data)
    {
        if o > 0.5 {
            sum += (d as f64 - t as f64).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::contract("reference has no opaque pixels"));
    }
    Ok((sum / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::WORLD_UP;

    fn reference() -> Camera {
        Camera::look_at(32, 24, 30.0, [0.0, -4.0, 1.0], [0.0; 3], WORLD_UP).unwrap()
    }

    #[test]
    fn single_view_spiral_is_reference() {
        let p = SpiralParams {
            n_views: 1,
            ..Default::default()
        };
        assert_eq!(spiral_trajectory(&reference(), &p).unwrap(), vec![reference()]);
    }

    #[test]
    fn spiral_poses_aim_at_focus() {
        let r = reference();
        let p = SpiralParams {
            n_views: 7,
            radius: 0.4,
            n_turns: 2.0,
            focus_distance: math::norm(math::sub([0.0; 3], r.position)),
            advance: 0.3,
        };
        for cam in spiral_trajectory(&r, &p).unwrap() {
            let c = cam.project([0.0; 3]).unwrap();
            assert!((c[0] - (r.cx - 0.5)).abs() < 1e-9 && (c[1] - (r.cy - 0.5)).abs() < 1e-9);
            assert_eq!((cam.width, cam.height, cam.focal), (32, 24, 30.0));
        }
    }

    #[test]
    fn zero_spiral_views_rejected() {
        let p = SpiralParams {
            n_views: 0,
            ..Default::default()
        };
        assert!(spiral_trajectory(&reference(), &p).is_err());
    }

    #[test]
    fn strategy_masks() {
        assert_eq!(Strategy::S3.mask(), GradMask::FROZEN_DENSITY);
        assert_eq!(Strategy::S2.mask(), GradMask::ALL);
        assert_eq!("s3".parse::<Strategy>().unwrap(), Strategy::S3);
        assert!("S4".parse::<Strategy>().is_err());
    }

    #[test]
    fn channel_swap() {
        let img = RgbImage::filled(2, 1, [0.1, 0.5, 0.9]);
        assert_eq!(swap_channels(&img).pixel(1, 0), RgbImage::filled(1, 1, [0.5, 0.1, 0.9]).pixel(0, 0));
    }

    #[test]
    fn toy_stylizer_differs_per_image() {
        let img = RgbImage::filled(16, 16, [0.5; 3]);
        assert_ne!(toy_stylize(&img, 0, 1), toy_stylize(&img, 1, 1));
        assert_eq!(toy_stylize(&img, 3, 1), toy_stylize(&img, 3, 1));
    }

    #[test]
    fn empty_prior_set_rejected() {
        assert!(PriorSet::new(vec![], None).is_err());
    }
}
