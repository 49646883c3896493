//! Real spherical-harmonics decoding of appearance features into RGB.
//!
//! A feature of length `3 * (degree + 1)^2` holds one SH coefficient block per
//! color channel. Each channel is the dot product of its block with the basis
//! evaluated at the view direction, squashed by a sigmoid.

use crate::error::{Error, Result};
use crate::math::{sigmoid, Vec3};

pub const MAX_SH_DEGREE: usize = 3;

const RAW_LIMIT: f64 = 30.0;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for a degree.
pub const fn basis_len(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluates the real SH basis up to `degree` at unit direction `d`.
pub fn eval_basis(degree: usize, d: Vec3, out: &mut [f64]) {
    let [x, y, z] = d;
    out[0] = C0;
    if degree < 1 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = C2[0] * xy;
    out[5] = C2[1] * yz;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * xz;
    out[8] = C2[4] * (xx - yy);
    if degree < 3 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * xy * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

fn check_unit(d: Vec3) -> Result<()> {
    let n = crate::math::norm(d);
    if (n - 1.0).abs() > 1e-6 || !n.is_finite() {
        return Err(Error::contract(format!(
            "view direction must be unit length, |d| = {n}"
        )));
    }
    Ok(())
}

/// Decodes a feature into RGB in `(0, 1)^3`.
pub fn decode_color(feature: &[f64], view_dir: Vec3, degree: usize) -> Result<[f64; 3]> {
    check_unit(view_dir)?;
    if degree > MAX_SH_DEGREE {
        return Err(Error::contract(format!("unsupported sh degree {degree}")));
    }
    let k = basis_len(degree);
    if feature.len() != 3 * k {
        return Err(Error::contract(format!(
            "feature length {} does not match sh degree {degree}",
            feature.len()
        )));
    }
    let mut basis = [0.0; 16];
    eval_basis(degree, view_dir, &mut basis);
    Ok(decode_with_basis(feature, &basis[..k]))
}

/// Decoding against a precomputed basis; no validation.
#[inline]
pub fn decode_with_basis(feature: &[f64], basis: &[f64]) -> [f64; 3] {
    let k = basis.len();
    let mut rgb = [0.0; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let raw: f64 = feature[c * k..(c + 1) * k]
            .iter()
            .zip(basis)
            .map(|(f, b)| f * b)
            .sum();
        // Clamped so the sigmoid never rounds to exactly 0 or 1.
        *out = sigmoid(raw.clamp(-RAW_LIMIT, RAW_LIMIT));
    }
    rgb
}

/// Given decoded `rgb` and `d(loss)/d(rgb)`, writes `d(loss)/d(feature)`.
#[inline]
pub fn backprop_decode(rgb: [f64; 3], d_rgb: [f64; 3], basis: &[f64], d_feature: &mut [f64]) {
    let k = basis.len();
    for c in 0..3 {
        let d_raw = d_rgb[c] * rgb[c] * (1.0 - rgb[c]);
        for (df, b) in d_feature[c * k..(c + 1) * k].iter_mut().zip(basis) {
            *df = d_raw * b;
        }
    }
}
