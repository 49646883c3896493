//! Flow-warped temporal consistency of stylized frame sequences.
//!
//! A flow field is defined on the pixels of a target frame `j` and points
//! into a source frame `i`: pixel `p` of `j` sees the content of `i` at
//! `p + flow(p)`. Warping source `i` with it yields an estimate of frame `j`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::grid::VMGrid;
use crate::imaging::{RgbImage, ScalarImage};
use crate::render::{render_image, RenderConfig};
use crate::scene::write_json;

pub const FLO_MAGIC: f32 = 202021.25;
/// Components above this magnitude mark unknown flow in `.flo` files.
pub const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;
const FLO_UNKNOWN_VALUE: f32 = 1e10;
pub const MIN_OVERLAP: f64 = 0.1;
pub const MIN_OPACITY: f32 = 0.5;
pub const DEFAULT_DELTAS: [usize; 2] = [1, 5];

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    /// Row-major `(u, v)` displacements in pixels.
    pub flow: Vec<[f32; 2]>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            flow: vec![[0.0; 2]; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn uniform(width: usize, height: usize, uv: [f32; 2]) -> Self {
        FlowField {
            flow: vec![uv; width * height],
            ..FlowField::zeros(width, height)
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Middlebury `.flo`; invalid pixels are written as unknown flow.
    pub fn save_flo(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(12 + 8 * self.flow.len());
        bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        bytes.extend_from_slice(&(self.width as i32).to_le_bytes());
        bytes.extend_from_slice(&(self.height as i32).to_le_bytes());
        for (uv, &ok) in self.flow.iter().zip(&self.valid) {
            let uv = if ok { *uv } else { [FLO_UNKNOWN_VALUE; 2] };
            bytes.extend_from_slice(&uv[0].to_le_bytes());
            bytes.extend_from_slice(&uv[1].to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_flo(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let word = |i: usize| -> [u8; 4] { bytes[4 * i..4 * i + 4].try_into().expect("4 bytes") };
        if bytes.len() < 12 || f32::from_le_bytes(word(0)) != FLO_MAGIC {
            return Err(Error::format(path, "not a .flo file (bad magic)"));
        }
        let (w, h) = (i32::from_le_bytes(word(1)), i32::from_le_bytes(word(2)));
        if w <= 0 || h <= 0 {
            return Err(Error::format(path, format!("invalid flow size {w}x{h}")));
        }
        let (w, h) = (w as usize, h as usize);
        if bytes.len() != 12 + 8 * w * h {
            return Err(Error::format(
                path,
                format!(
                    "{} bytes do not match a {w}x{h} flow field",
                    bytes.len()
                ),
            ));
        }
        let mut field = FlowField::zeros(w, h);
        for i in 0..w * h {
            let uv = [
                f32::from_le_bytes(word(3 + 2 * i)),
                f32::from_le_bytes(word(4 + 2 * i)),
            ];
            let known = uv
                .iter()
                .all(|c| c.is_finite() && c.abs() <= FLO_UNKNOWN_THRESHOLD);
            field.valid[i] = known;
            field.flow[i] = if known { uv } else { [0.0; 2] };
        }
        Ok(field)
    }
}

/// Flow on the pixels of `from` into `to`, obtained by lifting each pixel
/// with its rendered depth and projecting it into `to`. Pixels with opacity
/// below [`MIN_OPACITY`], non-positive depth, or landing outside `to` are
/// invalid.
pub fn reprojection_flow(
    depth: &ScalarImage,
    opacity: &ScalarImage,
    from: &Camera,
    to: &Camera,
) -> Result<FlowField> {
    let (w, h) = (from.width, from.height);
    if (depth.width, depth.height) != (w, h) || (opacity.width, opacity.height) != (w, h) {
        return Err(Error::contract(format!(
            "depth {}x{} / opacity {}x{} do not match a {w}x{h} camera",
            depth.width, depth.height, opacity.width, opacity.height
        )));
    }
    let mut field = FlowField::zeros(w, h);
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            let d = depth.data[i] as f64;
            let target = (opacity.data[i] >= MIN_OPACITY && d > 0.0 && d.is_finite())
                .then(|| to.project(from.ray(px, py).at(d)))
                .flatten()
                .filter(|q| {
                    (0.0..=(to.width - 1) as f64).contains(&q[0])
                        && (0.0..=(to.height - 1) as f64).contains(&q[1])
                });
            match target {
                Some(q) => field.flow[i] = [(q[0] - px as f64) as f32, (q[1] - py as f64) as f32],
                None => field.valid[i] = false,
            }
        }
    }
    Ok(field)
}

fn bilinear(image: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let cell = |v: f64, n: usize| {
        let i = (v.floor() as usize).min(n.saturating_sub(2));
        (i, (i + 1).min(n - 1), v - i as f64)
    };
    let (x0, x1, fx) = cell(x, image.width);
    let (y0, y1, fy) = cell(y, image.height);
    let lerp = |a: [f64; 3], b: [f64; 3], t: f64| std::array::from_fn(|c| a[c] + t * (b[c] - a[c]));
    let top = lerp(image.pixel(x0, y0), image.pixel(x1, y0), fx);
    let bottom = lerp(image.pixel(x0, y1), image.pixel(x1, y1), fx);
    lerp(top, bottom, fy)
}

/// Backward warp: output pixel `p` samples `image` bilinearly at
/// `p + flow(p)`. Samples outside the image or with invalid flow are
/// masked out and left black.
pub fn warp(image: &RgbImage, flow: &FlowField) -> Result<(RgbImage, Vec<bool>)> {
    if (image.width, image.height) != (flow.width, flow.height) {
        return Err(Error::contract(format!(
            "image is {}x{} but flow is {}x{}",
            image.width, image.height, flow.width, flow.height
        )));
    }
    let (w, h) = (image.width, image.height);
    let mut out = RgbImage::new(w, h);
    let mut mask = vec![false; w * h];
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            if !flow.valid[i] {
                continue;
            }
            let x = px as f64 + flow.flow[i][0] as f64;
            let y = py as f64 + flow.flow[i][1] as f64;
            if !(0.0..=(w - 1) as f64).contains(&x) || !(0.0..=(h - 1) as f64).contains(&y) {
                continue;
            }
            out.set_pixel(px, py, bilinear(image, x, y));
            mask[i] = true;
        }
    }
    Ok((out, mask))
}

/// Per-pair score and the fraction of pixels it was computed over.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    pub metric: f64,
    pub valid_fraction: f64,
}

/// Mean squared difference over valid pixels and all three channels between
/// `source` warped by `flow` and `target`.
pub fn consistency_metric(source: &RgbImage, target: &RgbImage, flow: &FlowField) -> Result<f64> {
    score_pair(source, target, flow).map(|(m, _)| m)
}

fn score_pair(source: &RgbImage, target: &RgbImage, flow: &FlowField) -> Result<(f64, f64)> {
    if (source.width, source.height) != (target.width, target.height) {
        return Err(Error::contract(format!(
            "frames differ in size: {}x{} vs {}x{}",
            source.width, source.height, target.width, target.height
        )));
    }
    let (warped, mask) = warp(source, flow)?;
    let total = mask.len();
    let valid = mask.iter().filter(|&&m| m).count();
    if (valid as f64) < MIN_OVERLAP * total as f64 || valid == 0 {
        return Err(Error::InsufficientOverlap { valid, total });
    }
    let mut sum = 0.0;
    for (k, &ok) in mask.iter().enumerate() {
        if ok {
            for c in 0..3 {
                let d = warped.data[3 * k + c] as f64 - target.data[3 * k + c] as f64;
                sum += d * d;
            }
        }
    }
    Ok((sum / (3 * valid) as f64, valid as f64 / total as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta: usize,
    pub mean: f64,
    pub pairs: Vec<PairScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyReport {
    pub n_frames: usize,
    pub flow_source: String,
    pub deltas: Vec<DeltaReport>,
}

impl ConsistencyReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn mean_for(&self, delta: usize) -> Option<f64> {
        self.deltas.iter().find(|d| d.delta == delta).map(|d| d.mean)
    }
}

/// External flow file for the pair `(i, j)`: defined on frame `j`, pointing
/// into frame `i`.
pub fn flo_name(i: usize, j: usize) -> String {
    format!("flow_{i:04}_{j:04}.flo")
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub deltas: Vec<usize>,
    /// Directory of `.flo` files named by [`flo_name`]; reprojection flow
    /// from the unstyled grid when absent.
    pub flow_dir: Option<PathBuf>,
    /// Receives the scored styled frames and the flows used.
    pub dump_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            deltas: DEFAULT_DELTAS.to_vec(),
            flow_dir: None,
            dump_dir: None,
        }
    }
}

/// Scores every pair `(i, i + delta)` of `frames` for each delta.
pub fn score_frames(
    frames: &[RgbImage],
    deltas: &[usize],
    flow_for: impl Fn(usize, usize) -> Result<FlowField> + Sync,
) -> Result<Vec<DeltaReport>> {
    let max_delta = deltas.iter().copied().max().unwrap_or(0);
    if deltas.is_empty() || deltas.contains(&0) {
        return Err(Error::contract("deltas must be a non-empty list of positive offsets"));
    }
    if frames.len() < max_delta + 1 {
        return Err(Error::contract(format!(
            "{} frames cannot cover a frame offset of {max_delta}",
            frames.len()
        )));
    }
    deltas
        .iter()
        .map(|&delta| {
            let pairs = (0..frames.len() - delta)
                .into_par_iter()
                .map(|i| {
                    let j = i + delta;
                    let flow = flow_for(i, j)?;
                    let (metric, valid_fraction) = score_pair(&frames[i], &frames[j], &flow)?;
                    Ok(PairScore {
                        i,
                        j,
                        metric,
                        valid_fraction,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mean = pairs.iter().map(|p| p.metric).sum::<f64>() / pairs.len() as f64;
            Ok(DeltaReport { delta, mean, pairs })
        })
        .collect()
}

/// Styled frame file written by a dumping evaluation.
pub fn styled_frame_name(index: usize) -> String {
    format!("styled_{index:04}.png")
}

/// Renders both grids along a camera path and scores the styled frames.
/// Styled frames are quantized to 8 bits, as they would be as video frames.
pub fn eval_trajectory(
    grid_real: &VMGrid,
    grid_styled: &VMGrid,
    cameras: &[Camera],
    opts: &EvalOptions,
    cfg: &RenderConfig,
) -> Result<ConsistencyReport> {
    let max_delta = opts.deltas.iter().copied().max().unwrap_or(0);
    if cameras.len() < max_delta + 1 {
        return Err(Error::contract(format!(
            "{} cameras cannot cover a frame offset of {max_delta}",
            cameras.len()
        )));
    }
    let real = match opts.flow_dir {
        Some(_) => Vec::new(),
        None => cameras
            .iter()
            .map(|c| render_image(grid_real, c, cfg))
            .collect::<Result<Vec<_>>>()?,
    };
    let styled = cameras
        .iter()
        .map(|c| render_image(grid_styled, c, cfg).map(|o| o.rgb.quantized()))
        .collect::<Result<Vec<_>>>()?;
    let flow_for = |i: usize, j: usize| match &opts.flow_dir {
        Some(dir) => FlowField::load_flo(&dir.join(flo_name(i, j))),
        None => reprojection_flow(&real[j].depth, &real[j].opacity, &cameras[j], &cameras[i]),
    };
    if let Some(dir) = &opts.dump_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, frame) in styled.iter().enumerate() {
            frame.save_png(&dir.join(styled_frame_name(k)))?;
        }
        for &delta in &opts.deltas {
            for i in 0..cameras.len().saturating_sub(delta) {
                flow_for(i, i + delta)?.save_flo(&dir.join(flo_name(i, i + delta)))?;
            }
        }
    }
    Ok(ConsistencyReport {
        n_frames: cameras.len(),
        flow_source: match &opts.flow_dir {
            Some(d) => d.display().to_string(),
            None => "reprojection".into(),
        },
        deltas: score_frames(&styled, &opts.deltas, flow_for)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, [x as f64 / w as f64, y as f64 / h as f64, 0.5]);
            }
        }
        img
    }

    #[test]
    fn zero_flow_is_identity() {
        let img = ramp(7, 5);
        let (out, mask) = warp(&img, &FlowField::zeros(7, 5)).unwrap();
        assert_eq!(out, img);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn unit_shift_moves_one_column() {
        let img = ramp(6, 4);
        let (out, mask) = warp(&img, &FlowField::uniform(6, 4, [1.0, 0.0])).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(out.pixel(x, y), img.pixel(x + 1, y));
                assert!(mask[y * 6 + x]);
            }
            assert!(!mask[y * 6 + 5]);
        }
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let err = warp(&ramp(4, 4), &FlowField::zeros(3, 4)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn identical_frames_score_zero() {
        let img = ramp(8, 8);
        assert_eq!(consistency_metric(&img, &img, &FlowField::zeros(8, 8)).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_scores_its_square() {
        let a = RgbImage::filled(8, 8, [0.2, 0.4, 0.6]);
        let b = RgbImage::filled(8, 8, [0.3, 0.5, 0.7]);
        let m = consistency_metric(&a, &b, &FlowField::zeros(8, 8)).unwrap();
        assert!((m - 0.01).abs() < 1e-6, "{m}");
    }

    #[test]
    fn tiny_overlap_is_rejected() {
        let img = ramp(10, 10);
        let mut flow = FlowField::zeros(10, 10);
        flow.valid.iter_mut().skip(5).for_each(|v| *v = false);
        assert!(matches!(
            consistency_metric(&img, &img, &flow),
            Err(Error::InsufficientOverlap { valid: 5, total: 100 })
        ));
    }

    #[test]
    fn flo_roundtrip_and_unknown_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.flo");
        let mut flow = FlowField::uniform(3, 2, [0.25, -1.5]);
        flow.valid[4] = false;
        flow.flow[4] = [0.0; 2];
        flow.save_flo(&path).unwrap();
        assert_eq!(FlowField::load_flo(&path).unwrap(), flow);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], &202021.25f32.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 3 * 2 * 8);
    }

    #[test]
    fn truncated_flo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.flo");
        FlowField::zeros(4, 4).save_flo(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(FlowField::load_flo(&path).is_err());
    }

    #[test]
    fn identity_pose_gives_zero_flow() {
        let cam = Camera::look_at(8, 6, 10.0, [0.0, -3.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let mut depth = ScalarImage::new(8, 6);
        depth.data.iter_mut().for_each(|d| *d = 3.0);
        let mut opacity = ScalarImage::new(8, 6);
        opacity.data.iter_mut().for_each(|o| *o = 1.0);
        let flow = reprojection_flow(&depth, &opacity, &cam, &cam).unwrap();
        assert_eq!(flow.valid_count(), 48);
        assert!(flow.flow.iter().all(|uv| uv[0].abs() < 1e-5 && uv[1].abs() < 1e-5));
    }

    #[test]
    fn turning_away_masks_everything() {
        let cam = Camera::look_at(8, 6, 10.0, [0.0, -3.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let away = Camera::look_at(8, 6, 10.0, [0.0, -3.0, 0.0], [5.0, -3.0, 0.0], [0.0, 0.0, 1.0]).unwrap();
        let mut depth = ScalarImage::new(8, 6);
        depth.data.iter_mut().for_each(|d| *d = 3.0);
        let mut opacity = ScalarImage::new(8, 6);
        opacity.data.iter_mut().for_each(|o| *o = 1.0);
        assert_eq!(reprojection_flow(&depth, &opacity, &cam, &away).unwrap().valid_count(), 0);
    }

    #[test]
    fn transparent_pixels_are_invalid() {
        let cam = Camera::look_at(4, 4, 5.0, [0.0, -3.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let mut depth = ScalarImage::new(4, 4);
        depth.data.iter_mut().for_each(|d| *d = 3.0);
        let opacity = ScalarImage::new(4, 4);
        assert_eq!(reprojection_flow(&depth, &opacity, &cam, &cam).unwrap().valid_count(), 0);
    }
}
