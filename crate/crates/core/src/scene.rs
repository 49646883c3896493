//! Datasets of posed images and the synthetic primitive scene.
//!
//! On disk a dataset follows the NeRF-synthetic layout:
//!
//! ```text
//! transforms_train.json   {"camera_angle_x": f, "frames": [{"file_path": "./train/r_0",
//!                          "transform_matrix": [[4x4 camera-to-world]]}, ...]}
//! transforms_test.json    same, optional
//! train/r_0.png ...
//! scene.json              optional {"aabb": {"min": [..], "max": [..]}}
//! ```
//!
//! Poses use the Blender convention (camera looks down `-Z`, `+Y` up). A
//! `file_path` without extension refers to a `.png`. Missing `scene.json`
//! means the default bounds `[-1.5, 1.5]^3`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Ray};
use crate::error::{Error, Result};
use crate::grid::Aabb;
use crate::imaging::{RgbImage, ScalarImage};
use crate::math::{self, Vec3};
use crate::render::ray_aabb_clip;

pub const DEFAULT_SCENE_HALF_EXTENT: f64 = 1.5;

#[derive(Clone, Debug, PartialEq)]
pub struct PosedImage {
    pub camera: Camera,
    pub image: RgbImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<PosedImage>,
    pub test: Vec<PosedImage>,
    pub aabb: Aabb,
}

#[derive(Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<FrameEntry>,
}

#[derive(Serialize, Deserialize)]
struct FrameEntry {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    aabb: Aabb,
}

fn resolve_image_path(root: &Path, file_path: &str) -> PathBuf {
    let rel = file_path.trim_start_matches("./");
    let mut path = root.join(rel);
    if path.extension().is_none() {
        path.set_extension("png");
    }
    path
}

fn load_split(root: &Path, split: &str) -> Result<Option<Vec<PosedImage>>> {
    let json_path = root.join(format!("transforms_{split}.json"));
    if !json_path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let file: TransformsFile =
        serde_json::from_str(&text).map_err(|e| Error::format(&json_path, e.to_string()))?;
    if !(file.camera_angle_x > 0.0 && file.camera_angle_x < std::f64::consts::PI) {
        return Err(Error::format(
            &json_path,
            format!("camera_angle_x {} outside (0, pi)", file.camera_angle_x),
        ));
    }
    let mut views = Vec::with_capacity(file.frames.len());
    for (i, frame) in file.frames.iter().enumerate() {
        let img_path = resolve_image_path(root, &frame.file_path);
        let image = RgbImage::load_png(&img_path)?;
        let focal = Camera::focal_from_fov(image.width, file.camera_angle_x);
        let camera = Camera::from_transform_matrix(
            image.width,
            image.height,
            focal,
            &frame.transform_matrix,
        )
        .map_err(|e| Error::format(&json_path, format!("frames[{i}].transform_matrix: {e}")))?;
        views.push(PosedImage { camera, image });
    }
    Ok(Some(views))
}

/// Loads a dataset directory; `transforms_train.json` is required.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let train = load_split(root, "train")?.ok_or_else(|| {
        Error::format(root.join("transforms_train.json"), "missing dataset description")
    })?;
    let test = load_split(root, "test")?.unwrap_or_default();
    let scene_path = root.join("scene.json");
    let aabb = if scene_path.exists() {
        let text = fs::read_to_string(&scene_path).map_err(|e| Error::io(&scene_path, e))?;
        let scene: SceneFile =
            serde_json::from_str(&text).map_err(|e| Error::format(&scene_path, e.to_string()))?;
        scene
            .aabb
            .validate()
            .map_err(|e| Error::format(&scene_path, e.to_string()))?;
        scene.aabb
    } else {
        Aabb::cube(DEFAULT_SCENE_HALF_EXTENT)
    };
    Ok(Dataset { train, test, aabb })
}

fn save_split(root: &Path, split: &str, views: &[PosedImage]) -> Result<()> {
    let Some(first) = views.first() else {
        return Ok(());
    };
    let dir = root.join(split);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut frames = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        let name = format!("r_{i}");
        view.image.save_png(&dir.join(format!("{name}.png")))?;
        frames.push(FrameEntry {
            file_path: format!("./{split}/{name}"),
            transform_matrix: view.camera.transform_matrix(),
        });
    }
    let file = TransformsFile {
        camera_angle_x: first.camera.fov_x(),
        frames,
    };
    write_json(&root.join(format!("transforms_{split}.json")), &file)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    save_split(root, "train", &dataset.train)?;
    save_split(root, "test", &dataset.test)?;
    write_json(&root.join("scene.json"), &SceneFile { aabb: dataset.aabb })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_size: Vec3 },
}

impl Shape {
    /// Entry and exit distances along a ray.
    fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = math::sub(ray.origin, center);
                let b = math::dot(oc, ray.dir);
                let c = math::dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Shape::Box { center, half_size } => {
                let aabb = Aabb {
                    min: math::sub(center, half_size),
                    max: math::add(center, half_size),
                };
                crate::render::ray_aabb_interval(ray, &aabb).filter(|(a, b)| a < b)
            }
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Shape::Sphere { center, radius } => {
                let d = math::sub(p, center);
                math::dot(d, d) <= radius * radius
            }
            Shape::Box { center, half_size } => {
                (0..3).all(|i| (p[i] - center[i]).abs() <= half_size[i])
            }
        }
    }

    fn bounds(&self) -> Aabb {
        match *self {
            Shape::Sphere { center, radius } => Aabb {
                min: math::sub(center, [radius; 3]),
                max: math::add(center, [radius; 3]),
            },
            Shape::Box { center, half_size } => Aabb {
                min: math::sub(center, half_size),
                max: math::add(center, half_size),
            },
        }
    }
}

/// A constant-density, constant-color solid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub rgb: [f64; 3],
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    pub aabb: Aabb,
}

impl Default for SyntheticSceneSpec {
    /// Two spheres and a box in distinct colors over a white background.
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 7,
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere {
                        center: [-0.45, -0.3, -0.05],
                        radius: 0.55,
                    },
                    rgb: [0.85, 0.3, 0.25],
                    density: 12.0,
                },
                Primitive {
                    shape: Shape::Box {
                        center: [0.5, 0.35, -0.15],
                        half_size: [0.35, 0.35, 0.4],
                    },
                    rgb: [0.3, 0.7, 0.35],
                    density: 12.0,
                },
                Primitive {
                    shape: Shape::Sphere {
                        center: [0.05, 0.45, 0.6],
                        radius: 0.35,
                    },
                    rgb: [0.25, 0.4, 0.85],
                    density: 12.0,
                },
            ],
            background: [1.0; 3],
            aabb: Aabb::cube(DEFAULT_SCENE_HALF_EXTENT),
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.aabb.validate()?;
        for (i, p) in self.primitives.iter().enumerate() {
            if !(p.density >= 0.0) {
                return Err(Error::contract(format!("primitive {i} has negative density")));
            }
            let b = p.shape.bounds();
            if !(self.aabb.contains(b.min) && self.aabb.contains(b.max)) {
                return Err(Error::contract(format!("primitive {i} extends outside the aabb")));
            }
        }
        Ok(())
    }

    /// Total density and density-weighted color at a point.
    pub fn density_color(&self, p: Vec3) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut acc = [0.0; 3];
        for prim in &self.primitives {
            if prim.shape.contains(p) {
                sigma += prim.density;
                for c in 0..3 {
                    acc[c] += prim.density * prim.rgb[c];
                }
            }
        }
        if sigma > 0.0 {
            (sigma, [acc[0] / sigma, acc[1] / sigma, acc[2] / sigma])
        } else {
            (0.0, [0.0; 3])
        }
    }
}

/// Camera layout for synthetic views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub width: usize,
    pub height: usize,
    pub camera_distance: f64,
    pub fov_x: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        ViewSpec {
            n_train: 16,
            n_test: 4,
            width: 64,
            height: 64,
            camera_distance: 4.0,
            fov_x: 0.7,
            near: 0.1,
            far: 10.0,
        }
    }
}

/// Exact per-ray rendering result for the synthetic scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticSample {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

/// Closed-form volume rendering through piecewise-constant density.
pub fn analytic_ray(spec: &SyntheticSceneSpec, ray: &Ray, near: f64, far: f64) -> AnalyticSample {
    let miss = AnalyticSample {
        rgb: spec.background,
        depth: 0.0,
        opacity: 0.0,
    };
    let Some((t0, t1)) = ray_aabb_clip(ray, &spec.aabb, near, far) else {
        return miss;
    };
    let mut cuts = vec![t0, t1];
    for prim in &spec.primitives {
        if let Some((a, b)) = prim.shape.intersect(ray) {
            cuts.extend([a, b].into_iter().filter(|&t| t > t0 && t < t1));
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    let mut depth_acc = 0.0;
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let (sigma, color) = spec.density_color(ray.at(0.5 * (a + b)));
        if sigma <= 0.0 {
            continue;
        }
        let decay = (-sigma * len).exp();
        let alpha = -(-sigma * len).exp_m1();
        for c in 0..3 {
            rgb[c] += trans * alpha * color[c];
        }
        // ∫ t σ e^{-σ(t-a)} dt over [a, b].
        depth_acc += trans * (a * alpha + (alpha - sigma * len * decay) / sigma);
        trans *= decay;
    }
    let opacity = 1.0 - trans;
    for c in 0..3 {
        rgb[c] += trans * spec.background[c];
    }
    AnalyticSample {
        rgb,
        depth: depth_acc / opacity.max(crate::render::DEPTH_EPS),
        opacity,
    }
}

/// Renders rgb, depth and opacity for one camera in closed form.
pub fn analytic_render(
    spec: &SyntheticSceneSpec,
    camera: &Camera,
    near: f64,
    far: f64,
) -> (RgbImage, ScalarImage, ScalarImage) {
    let (w, h) = (camera.width, camera.height);
    let mut rgb = RgbImage::new(w, h);
    let mut depth = ScalarImage::new(w, h);
    let mut opacity = ScalarImage::new(w, h);
    for py in 0..h {
        for px in 0..w {
            let s = analytic_ray(spec, &camera.ray(px, py), near, far);
            rgb.set_pixel(px, py, s.rgb);
            depth.data[py * w + px] = s.depth as f32;
            opacity.data[py * w + px] = s.opacity as f32;
        }
    }
    (rgb, depth, opacity)
}

/// Ground truth that accompanies a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    pub train_depth: Vec<ScalarImage>,
    pub test_depth: Vec<ScalarImage>,
    pub train_opacity: Vec<ScalarImage>,
    pub test_opacity: Vec<ScalarImage>,
    pub primitives: Vec<Primitive>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthIndex {
    width: usize,
    height: usize,
    n_train: usize,
    n_test: usize,
    primitives: Vec<Primitive>,
}

/// File name of one ground-truth buffer, `kind` being `depth` or `opacity`.
pub fn truth_file(split: &str, index: usize, kind: &str) -> String {
    format!("{split}_{index:03}_{kind}.f32")
}

impl SyntheticTruth {
    /// Writes `truth.json` plus raw `f32` depth and opacity buffers.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let first = self
            .train_depth
            .first()
            .ok_or_else(|| Error::contract("ground truth without training views"))?;
        for (split, depth, opacity) in [
            ("train", &self.train_depth, &self.train_opacity),
            ("test", &self.test_depth, &self.test_opacity),
        ] {
            for (i, (d, o)) in depth.iter().zip(opacity).enumerate() {
                d.save_raw(&dir.join(truth_file(split, i, "depth")))?;
                o.save_raw(&dir.join(truth_file(split, i, "opacity")))?;
            }
        }
        let index = TruthIndex {
            width: first.width,
            height: first.height,
            n_train: self.train_depth.len(),
            n_test: self.test_depth.len(),
            primitives: self.primitives.clone(),
        };
        write_json(&dir.join("truth.json"), &index)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("truth.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: TruthIndex =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let read = |split: &str, n: usize, kind: &str| {
            (0..n)
                .map(|i| {
                    ScalarImage::load_raw(&dir.join(truth_file(split, i, kind)), index.width, index.height)
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(SyntheticTruth {
            train_depth: read("train", index.n_train, "depth")?,
            test_depth: read("test", index.n_test, "depth")?,
            train_opacity: read("train", index.n_train, "opacity")?,
            test_opacity: read("test", index.n_test, "opacity")?,
            primitives: index.primitives,
        })
    }
}

/// World-space "up" for every synthetic camera.
pub const WORLD_UP: Vec3 = [0.0, 0.0, 1.0];

fn orbit_camera(views: &ViewSpec, target: Vec3, azimuth: f64, elevation: f64) -> Result<Camera> {
    let d = views.camera_distance;
    let pos = [
        target[0] + d * elevation.cos() * azimuth.cos(),
        target[1] + d * elevation.cos() * azimuth.sin(),
        target[2] + d * elevation.sin(),
    ];
    let focal = Camera::focal_from_fov(views.width, views.fov_x);
    Camera::look_at(views.width, views.height, focal, pos, target, WORLD_UP)
}

/// Training cameras follow a golden-angle spiral over elevations -20°..60°;
/// test cameras are seeded random orbit positions in the same band.
pub fn synthetic_cameras(spec: &SyntheticSceneSpec, views: &ViewSpec) -> Result<(Vec<Camera>, Vec<Camera>)> {
    let target = spec.aabb.center();
    let (lo, hi) = ((-20f64).to_radians(), 60f64.to_radians());
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let train = (0..views.n_train)
        .map(|i| {
            let t = (i as f64 + 0.5) / views.n_train as f64;
            let elevation = (lo.sin() + t * (hi.sin() - lo.sin())).asin();
            orbit_camera(views, target, golden * i as f64, elevation)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let test = (0..views.n_test)
        .map(|_| {
            let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
            let elevation = rng.gen_range(lo.sin()..hi.sin()).asin();
            orbit_camera(views, target, azimuth, elevation)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

/// Generates a dataset of analytic renders of the primitive scene.
pub fn make_synthetic(spec: &SyntheticSceneSpec, views: &ViewSpec) -> Result<(Dataset, SyntheticTruth)> {
    spec.validate()?;
    if views.n_train < 2 {
        return Err(Error::contract("a synthetic dataset needs at least two training views"));
    }
    let (train_cams, test_cams) = synthetic_cameras(spec, views)?;
    let render_all = |cams: Vec<Camera>| {
        let mut posed = Vec::new();
        let mut depth = Vec::new();
        let mut opacity = Vec::new();
        for cam in cams {
            let (img, d, o) = analytic_render(spec, &cam, views.near, views.far);
            posed.push(PosedImage { camera: cam, image: img });
            depth.push(d);
            opacity.push(o);
        }
        (posed, depth, opacity)
    };
    let (train, train_depth, train_opacity) = render_all(train_cams);
    let (test, test_depth, test_opacity) = render_all(test_cams);
    Ok((
        Dataset {
            train,
            test,
            aabb: spec.aabb,
        },
        SyntheticTruth {
            train_depth,
            test_depth,
            train_opacity,
            test_opacity,
            primitives: spec.primitives.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_background() {
        let spec = SyntheticSceneSpec {
            primitives: vec![],
            background: [0.1, 0.2, 0.3],
            ..Default::default()
        };
        let views = ViewSpec {
            width: 8,
            height: 8,
            ..Default::default()
        };
        let (ds, truth) = make_synthetic(&spec, &views).unwrap();
        for v in ds.train.iter().chain(&ds.test) {
            for px in v.image.data.chunks_exact(3) {
                assert_eq!(px, [0.1f32, 0.2, 0.3]);
            }
        }
        assert!(truth.test_opacity.iter().all(|o| o.data.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn opaque_sphere_center_pixel() {
        let spec = SyntheticSceneSpec {
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 1.2,
                },
                rgb: [1.0, 0.0, 0.0],
                density: 1e4,
            }],
            ..Default::default()
        };
        let views = ViewSpec {
            width: 9,
            height: 9,
            ..Default::default()
        };
        let (ds, truth) = make_synthetic(&spec, &views).unwrap();
        let c = ds.train[0].image.pixel(4, 4);
        assert!((c[0] - 1.0).abs() < 1e-3 && c[1].abs() < 1e-3 && c[2].abs() < 1e-3);
        // Surface sits 4 - 1.2 from the camera.
        assert!((truth.train_depth[0].get(4, 4) as f64 - 2.8).abs() < 1e-3);
    }

    #[test]
    fn rejects_primitive_outside_bounds() {
        let mut spec = SyntheticSceneSpec::default();
        spec.primitives[0].shape = Shape::Sphere {
            center: [1.4, 0.0, 0.0],
            radius: 0.5,
        };
        assert!(spec.validate().is_err());
        let views = ViewSpec {
            n_train: 1,
            ..Default::default()
        };
        assert!(make_synthetic(&SyntheticSceneSpec::default(), &views).is_err());
    }

    #[test]
    fn focal_from_right_angle_fov() {
        let f = Camera::focal_from_fov(100, std::f64::consts::FRAC_PI_2);
        assert!((f - 50.0).abs() < 1e-12);
    }

    #[test]
    fn minimal_identity_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("train")).unwrap();
        RgbImage::filled(4, 3, [0.5; 3])
            .save_png(&dir.path().join("train/r_0.png"))
            .unwrap();
        fs::write(
            dir.path().join("transforms_train.json"),
            r#"{"camera_angle_x": 1.0, "frames": [{"file_path": "./train/r_0",
               "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        )
        .unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 1);
        assert_eq!(ds.train[0].camera.position, [0.0; 3]);
        assert!(ds.test.is_empty());
        assert_eq!(ds.aabb, Aabb::cube(1.5));
    }

    #[test]
    fn load_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("transforms_train.json"));
        fs::write(dir.path().join("transforms_train.json"), r#"{"frames": []}"#).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("camera_angle_x"), "{err}");
    }
}
