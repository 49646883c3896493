//! Vector-matrix factored radiance field.
//!
//! A 3D tensor is represented, per axis mode `m`, as a sum over components of
//! `vector_m[r] ⊗ matrix_m[r]`, where the vector runs along axis `m` and the
//! matrix spans the two remaining axes in ascending order. Density sums all
//! components; appearance keeps them separate and maps the concatenated
//! coefficients through a learned linear basis.
//!
//! Storage is component-innermost so a lookup reads contiguous rank blocks:
//! vectors are `[i][r]` and matrices are `[a][b][r]`. Parameters are kept in
//! `f32`; every evaluation is carried out in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Axes spanned by the matrix of each mode; the vector runs along the mode axis.
pub const MATRIX_AXES: [(usize, usize); 3] = [(1, 2), (0, 2), (0, 1)];

/// Relative weight of appearance differences in the total-variation term.
pub const TV_APPEARANCE_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        let aabb = Aabb { min, max };
        aabb.validate()?;
        Ok(aabb)
    }

    pub fn cube(half_extent: f64) -> Self {
        Aabb {
            min: [-half_extent; 3],
            max: [half_extent; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).all(|i| self.min[i] < self.max[i]) {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "aabb min {:?} must be below max {:?}",
                self.min, self.max
            )))
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
            p[2].clamp(self.min[2], self.max[2]),
        ]
    }

    pub fn center(&self) -> Vec3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }
}

/// Shape hyper-parameters of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub resolution: [usize; 3],
    pub density_rank: usize,
    pub appearance_rank: usize,
    pub sh_degree: usize,
}

impl Default for GridShape {
    fn default() -> Self {
        GridShape {
            resolution: [32; 3],
            density_rank: 8,
            appearance_rank: 16,
            sh_degree: 1,
        }
    }
}

impl GridShape {
    pub fn feature_dim(&self) -> usize {
        3 * (self.sh_degree + 1) * (self.sh_degree + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.iter().any(|&n| n < 2) {
            return Err(Error::contract(format!(
                "every resolution component must be >= 2, got {:?}",
                self.resolution
            )));
        }
        if self.density_rank == 0 || self.appearance_rank == 0 {
            return Err(Error::contract("ranks must be >= 1"));
        }
        if self.sh_degree > crate::sh::MAX_SH_DEGREE {
            return Err(Error::contract(format!(
                "sh_degree {} exceeds supported maximum {}",
                self.sh_degree,
                crate::sh::MAX_SH_DEGREE
            )));
        }
        Ok(())
    }
}

/// Vector and matrix factors of one axis mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeFactors<T> {
    pub rank: usize,
    pub vec_len: usize,
    pub mat_rows: usize,
    pub mat_cols: usize,
    /// `[i][r]`, length `vec_len * rank`.
    pub vectors: Vec<T>,
    /// `[a][b][r]`, length `mat_rows * mat_cols * rank`.
    pub matrices: Vec<T>,
}

impl<T: Copy + Default> ModeFactors<T> {
    fn zeros(mode: usize, resolution: [usize; 3], rank: usize) -> Self {
        let (a, b) = MATRIX_AXES[mode];
        let vec_len = resolution[mode];
        let (mat_rows, mat_cols) = (resolution[a], resolution[b]);
        ModeFactors {
            rank,
            vec_len,
            mat_rows,
            mat_cols,
            vectors: vec![T::default(); vec_len * rank],
            matrices: vec![T::default(); mat_rows * mat_cols * rank],
        }
    }

    pub fn vector(&self, r: usize, i: usize) -> T {
        self.vectors[i * self.rank + r]
    }

    pub fn matrix(&self, r: usize, a: usize, b: usize) -> T {
        self.matrices[(a * self.mat_cols + b) * self.rank + r]
    }

    pub fn vector_mut(&mut self, r: usize, i: usize) -> &mut T {
        &mut self.vectors[i * self.rank + r]
    }

    pub fn matrix_mut(&mut self, r: usize, a: usize, b: usize) -> &mut T {
        &mut self.matrices[(a * self.mat_cols + b) * self.rank + r]
    }
}

/// One factored tensor: three modes sharing a rank.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSet<T> {
    pub rank: usize,
    pub modes: [ModeFactors<T>; 3],
}

impl<T: Copy + Default> FactorSet<T> {
    pub fn zeros(resolution: [usize; 3], rank: usize) -> Self {
        FactorSet {
            rank,
            modes: [0, 1, 2].map(|m| ModeFactors::zeros(m, resolution, rank)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.modes
            .iter()
            .map(|m| m.vectors.len() + m.matrices.len())
            .sum()
    }

    /// Flat views in storage order: mode 0 vectors, mode 0 matrices, mode 1 ...
    pub fn slices(&self) -> [&[T]; 6] {
        let [m0, m1, m2] = &self.modes;
        [
            &m0.vectors,
            &m0.matrices,
            &m1.vectors,
            &m1.matrices,
            &m2.vectors,
            &m2.matrices,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; 6] {
        let [m0, m1, m2] = &mut self.modes;
        [
            &mut m0.vectors,
            &mut m0.matrices,
            &mut m1.vectors,
            &mut m1.matrices,
            &mut m2.vectors,
            &mut m2.matrices,
        ]
    }
}

/// Per-axis linear interpolation stencil of a grid-space point.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub index: [usize; 3],
    pub frac: [f64; 3],
}

impl Stencil {
    /// Stencil for continuous grid coordinates (`0..=N-1` per axis).
    pub fn from_grid_coords(g: Vec3, resolution: [usize; 3]) -> Self {
        let mut index = [0; 3];
        let mut frac = [0.0; 3];
        for axis in 0..3 {
            let last = (resolution[axis] - 1) as f64;
            let u = g[axis].clamp(0.0, last);
            let i0 = (u.floor() as usize).min(resolution[axis] - 2);
            index[axis] = i0;
            frac[axis] = u - i0 as f64;
        }
        Stencil { index, frac }
    }
}

impl FactorSet<f32> {
    /// Per-component interpolated values, mode-major: `out[m * rank + r]`.
    pub fn eval_components(&self, st: &Stencil, out: &mut [f64]) {
        let rank = self.rank;
        for (m, mode) in self.modes.iter().enumerate() {
            let (a, b) = MATRIX_AXES[m];
            let (iv, fv) = (st.index[m], st.frac[m]);
            let (ia, fa) = (st.index[a], st.frac[a]);
            let (ib, fb) = (st.index[b], st.frac[b]);
            let v0 = &mode.vectors[iv * rank..(iv + 1) * rank];
            let v1 = &mode.vectors[(iv + 1) * rank..(iv + 2) * rank];
            let cols = mode.mat_cols;
            let base00 = (ia * cols + ib) * rank;
            let base10 = ((ia + 1) * cols + ib) * rank;
            let m00 = &mode.matrices[base00..base00 + rank];
            let m01 = &mode.matrices[base00 + rank..base00 + 2 * rank];
            let m10 = &mode.matrices[base10..base10 + rank];
            let m11 = &mode.matrices[base10 + rank..base10 + 2 * rank];
            let w00 = (1.0 - fa) * (1.0 - fb);
            let w01 = (1.0 - fa) * fb;
            let w10 = fa * (1.0 - fb);
            let w11 = fa * fb;
            let dst = &mut out[m * rank..(m + 1) * rank];
            for r in 0..rank {
                let lin = v0[r] as f64 * (1.0 - fv) + v1[r] as f64 * fv;
                let bil = m00[r] as f64 * w00
                    + m01[r] as f64 * w01
                    + m10[r] as f64 * w10
                    + m11[r] as f64 * w11;
                dst[r] = lin * bil;
            }
        }
    }

    /// Adds `d(loss)/d(factor)` given `d(loss)/d(component)` for every component.
    pub fn backprop_components(&self, st: &Stencil, d_comp: &[f64], grad: &mut FactorSet<f64>) {
        let rank = self.rank;
        for (m, (mode, gmode)) in self.modes.iter().zip(grad.modes.iter_mut()).enumerate() {
            let (a, b) = MATRIX_AXES[m];
            let (iv, fv) = (st.index[m], st.frac[m]);
            let (ia, fa) = (st.index[a], st.frac[a]);
            let (ib, fb) = (st.index[b], st.frac[b]);
            let cols = mode.mat_cols;
            let base00 = (ia * cols + ib) * rank;
            let base01 = base00 + rank;
            let base10 = ((ia + 1) * cols + ib) * rank;
            let base11 = base10 + rank;
            let bv0 = iv * rank;
            let bv1 = (iv + 1) * rank;
            let w00 = (1.0 - fa) * (1.0 - fb);
            let w01 = (1.0 - fa) * fb;
            let w10 = fa * (1.0 - fb);
            let w11 = fa * fb;
            let dsrc = &d_comp[m * rank..(m + 1) * rank];
            for r in 0..rank {
                let d = dsrc[r];
                if d == 0.0 {
                    continue;
                }
                let lin = mode.vectors[bv0 + r] as f64 * (1.0 - fv)
                    + mode.vectors[bv1 + r] as f64 * fv;
                let bil = mode.matrices[base00 + r] as f64 * w00
                    + mode.matrices[base01 + r] as f64 * w01
                    + mode.matrices[base10 + r] as f64 * w10
                    + mode.matrices[base11 + r] as f64 * w11;
                let dv = d * bil;
                gmode.vectors[bv0 + r] += dv * (1.0 - fv);
                gmode.vectors[bv1 + r] += dv * fv;
                let dm = d * lin;
                gmode.matrices[base00 + r] += dm * w00;
                gmode.matrices[base01 + r] += dm * w01;
                gmode.matrices[base10 + r] += dm * w10;
                gmode.matrices[base11 + r] += dm * w11;
            }
        }
    }
}

/// The factored radiance field.
#[derive(Clone, Debug, PartialEq)]
pub struct VMGrid {
    pub shape: GridShape,
    pub aabb: Aabb,
    pub density: FactorSet<f32>,
    pub appearance: FactorSet<f32>,
    /// Row-major `feature_dim x (3 * appearance_rank)`.
    pub basis: Vec<f32>,
}

/// Which group a learnable parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Density,
    Appearance,
    Basis,
}

impl VMGrid {
    /// All-zero grid.
    pub fn zeros(shape: GridShape, aabb: Aabb) -> Result<Self> {
        shape.validate()?;
        aabb.validate()?;
        Ok(VMGrid {
            shape,
            aabb,
            density: FactorSet::zeros(shape.resolution, shape.density_rank),
            appearance: FactorSet::zeros(shape.resolution, shape.appearance_rank),
            basis: vec![0.0; shape.feature_dim() * 3 * shape.appearance_rank],
        })
    }

    /// Seeded initialization: factors uniform in `±0.1/sqrt(rank)`, basis
    /// uniform in `±1/sqrt(fan_in)`.
    pub fn random(shape: GridShape, aabb: Aabb, seed: u64) -> Result<Self> {
        let mut grid = Self::zeros(shape, aabb)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = 0.1 / (shape.density_rank as f64).sqrt();
        for s in grid.density.slices_mut() {
            s.iter_mut()
                .for_each(|x| *x = (rng.gen_range(-1.0..1.0) * ds) as f32);
        }
        let as_ = 0.1 / (shape.appearance_rank as f64).sqrt();
        for s in grid.appearance.slices_mut() {
            s.iter_mut()
                .for_each(|x| *x = (rng.gen_range(-1.0..1.0) * as_) as f32);
        }
        let bs = 1.0 / ((3 * shape.appearance_rank) as f64).sqrt();
        grid.basis
            .iter_mut()
            .for_each(|x| *x = (rng.gen_range(-1.0..1.0) * bs) as f32);
        Ok(grid)
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.shape.resolution
    }

    pub fn feature_dim(&self) -> usize {
        self.shape.feature_dim()
    }

    pub fn coeff_dim(&self) -> usize {
        3 * self.shape.appearance_rank
    }

    /// Total learnable parameter count (density, appearance and basis).
    pub fn param_count(&self) -> usize {
        self.density.param_count() + self.appearance.param_count() + self.basis.len()
    }

    /// Checks every factor against the declared shape.
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.aabb.validate()?;
        let res = self.shape.resolution;
        for (set, rank, name) in [
            (&self.density, self.shape.density_rank, "density"),
            (&self.appearance, self.shape.appearance_rank, "appearance"),
        ] {
            if set.rank != rank {
                return Err(Error::contract(format!("{name} rank mismatch")));
            }
            for (m, mode) in set.modes.iter().enumerate() {
                let (a, b) = MATRIX_AXES[m];
                if mode.rank != rank
                    || mode.vec_len != res[m]
                    || mode.mat_rows != res[a]
                    || mode.mat_cols != res[b]
                    || mode.vectors.len() != res[m] * rank
                    || mode.matrices.len() != res[a] * res[b] * rank
                {
                    return Err(Error::contract(format!(
                        "{name} mode {m} factors do not match resolution {res:?}"
                    )));
                }
            }
        }
        if self.basis.len() != self.feature_dim() * self.coeff_dim() {
            return Err(Error::contract("feature basis has the wrong size"));
        }
        Ok(())
    }

    /// Continuous grid coordinates of a world-space point.
    pub fn grid_coords(&self, p: Vec3) -> Vec3 {
        let res = self.shape.resolution;
        let mut g = [0.0; 3];
        for i in 0..3 {
            let t = (p[i] - self.aabb.min[i]) / (self.aabb.max[i] - self.aabb.min[i]);
            g[i] = t * (res[i] - 1) as f64;
        }
        g
    }

    pub fn stencil(&self, p: Vec3) -> Result<Stencil> {
        if !self.aabb.contains(p) {
            return Err(Error::OutsideBounds { point: p });
        }
        Ok(Stencil::from_grid_coords(
            self.grid_coords(p),
            self.shape.resolution,
        ))
    }

    /// Raw (pre-activation) density at a stencil.
    pub fn raw_density_at(&self, st: &Stencil, scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(3 * self.density.rank, 0.0);
        self.density.eval_components(st, scratch);
        scratch.iter().sum()
    }

    pub fn sample_density(&self, p: Vec3) -> Result<f64> {
        let st = self.stencil(p)?;
        let mut scratch = Vec::new();
        Ok(self.raw_density_at(&st, &mut scratch).max(0.0))
    }

    /// Concatenated appearance coefficients (`3 * appearance_rank`).
    pub fn appearance_coeffs_at(&self, st: &Stencil, coeffs: &mut [f64]) {
        self.appearance.eval_components(st, coeffs);
    }

    /// `feature = basis * coeffs`.
    pub fn apply_basis(&self, coeffs: &[f64], feature: &mut [f64]) {
        let k = coeffs.len();
        for (row, f) in self.basis.chunks_exact(k).zip(feature.iter_mut()) {
            *f = row.iter().zip(coeffs).map(|(&b, &c)| b as f64 * c).sum();
        }
    }

    pub fn sample_feature(&self, p: Vec3) -> Result<Vec<f64>> {
        let st = self.stencil(p)?;
        let mut coeffs = vec![0.0; self.coeff_dim()];
        self.appearance_coeffs_at(&st, &mut coeffs);
        let mut feature = vec![0.0; self.feature_dim()];
        self.apply_basis(&coeffs, &mut feature);
        Ok(feature)
    }

    /// Total-variation regularizer: absolute differences of every pair of
    /// axis-adjacent entries, appearance scaled by 0.1, divided by the total
    /// parameter count.
    pub fn tv_loss(&self) -> f64 {
        let n = self.param_count() as f64;
        (tv_sum(&self.density) + TV_APPEARANCE_WEIGHT * tv_sum(&self.appearance)) / n
    }

    /// Mean absolute value over all density and appearance factor entries.
    pub fn l1_reg(&self) -> f64 {
        let count = self.density.param_count() + self.appearance.param_count();
        let sum: f64 = self
            .density
            .slices()
            .into_iter()
            .chain(self.appearance.slices())
            .flat_map(|s| s.iter())
            .map(|&x| (x as f64).abs())
            .sum();
        sum / count as f64
    }

    /// Adds `weight * d(tv_loss)/d(param)` into `grad`.
    pub fn tv_grad(&self, weight: f64, grad: &mut GridGradients) {
        let n = self.param_count() as f64;
        tv_backprop(&self.density, weight / n, &mut grad.density);
        tv_backprop(
            &self.appearance,
            weight * TV_APPEARANCE_WEIGHT / n,
            &mut grad.appearance,
        );
    }

    /// Adds `weight * d(l1_reg)/d(param)` into `grad`.
    pub fn l1_grad(&self, weight: f64, grad: &mut GridGradients) {
        let count = (self.density.param_count() + self.appearance.param_count()) as f64;
        let w = weight / count;
        for (src, dst) in [
            (&self.density, &mut grad.density),
            (&self.appearance, &mut grad.appearance),
        ] {
            for (s, d) in src.slices().into_iter().zip(dst.slices_mut()) {
                for (&x, g) in s.iter().zip(d.iter_mut()) {
                    *g += w * sign(x as f64);
                }
            }
        }
    }

    /// Resamples every factor to a finer resolution: vectors linearly,
    /// matrices bilinearly. Basis, bounds and ranks are kept.
    pub fn upsample(&self, new_resolution: [usize; 3]) -> Result<VMGrid> {
        let old = self.shape.resolution;
        if (0..3).any(|i| new_resolution[i] < old[i]) {
            return Err(Error::contract(format!(
                "cannot upsample {old:?} to smaller resolution {new_resolution:?}"
            )));
        }
        if new_resolution == old {
            return Ok(self.clone());
        }
        let shape = GridShape {
            resolution: new_resolution,
            ..self.shape
        };
        Ok(VMGrid {
            shape,
            aabb: self.aabb,
            density: resample_set(&self.density, new_resolution),
            appearance: resample_set(&self.appearance, new_resolution),
            basis: self.basis.clone(),
        })
    }

    /// Flat parameter views in canonical order: density (6 slices),
    /// appearance (6 slices), basis.
    pub fn param_slices(&self) -> Vec<(ParamGroup, &[f32])> {
        let mut out: Vec<(ParamGroup, &[f32])> = Vec::with_capacity(13);
        out.extend(self.density.slices().map(|s| (ParamGroup::Density, s)));
        out.extend(self.appearance.slices().map(|s| (ParamGroup::Appearance, s)));
        out.push((ParamGroup::Basis, &self.basis));
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<(ParamGroup, &mut [f32])> {
        let mut out: Vec<(ParamGroup, &mut [f32])> = Vec::with_capacity(13);
        out.extend(
            self.density
                .slices_mut()
                .map(|s| (ParamGroup::Density, s)),
        );
        out.extend(
            self.appearance
                .slices_mut()
                .map(|s| (ParamGroup::Appearance, s)),
        );
        out.push((ParamGroup::Basis, &mut self.basis));
        out
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Visits every axis-adjacent pair `(lo, hi)` of flat indices in a factor set.
fn for_each_adjacent_pair<T>(set: &FactorSet<T>, mut f: impl FnMut(usize, usize, usize)) {
    // `f(slice_index, lo, hi)` with slice indices matching `FactorSet::slices`.
    let rank = set.rank;
    for (m, mode) in set.modes.iter().enumerate() {
        for i in 0..mode.vec_len - 1 {
            for r in 0..rank {
                f(2 * m, i * rank + r, (i + 1) * rank + r);
            }
        }
        let cols = mode.mat_cols;
        for a in 0..mode.mat_rows {
            for b in 0..cols {
                let here = (a * cols + b) * rank;
                for r in 0..rank {
                    if a + 1 < mode.mat_rows {
                        f(2 * m + 1, here + r, here + cols * rank + r);
                    }
                    if b + 1 < cols {
                        f(2 * m + 1, here + r, here + rank + r);
                    }
                }
            }
        }
    }
}

fn tv_sum(set: &FactorSet<f32>) -> f64 {
    let slices = set.slices();
    let mut total = 0.0;
    for_each_adjacent_pair(set, |s, lo, hi| {
        total += (slices[s][hi] as f64 - slices[s][lo] as f64).abs();
    });
    total
}

fn tv_backprop(set: &FactorSet<f32>, weight: f64, grad: &mut FactorSet<f64>) {
    let slices = set.slices();
    let mut gslices = grad.slices_mut();
    for_each_adjacent_pair(set, |s, lo, hi| {
        let d = sign(slices[s][hi] as f64 - slices[s][lo] as f64) * weight;
        gslices[s][hi] += d;
        gslices[s][lo] -= d;
    });
}

/// Linear resampling stencil mapping new index `j` onto the old axis so both
/// end points coincide.
fn resample_stencil(j: usize, n_old: usize, n_new: usize) -> (usize, f64) {
    let u = j as f64 * (n_old - 1) as f64 / (n_new - 1) as f64;
    let i0 = (u.floor() as usize).min(n_old - 2);
    (i0, u - i0 as f64)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn resample_set(set: &FactorSet<f32>, res: [usize; 3]) -> FactorSet<f32> {
    let rank = set.rank;
    let mut out = FactorSet::zeros(res, rank);
    for (src, dst) in set.modes.iter().zip(out.modes.iter_mut()) {
        for j in 0..dst.vec_len {
            let (i0, t) = resample_stencil(j, src.vec_len, dst.vec_len);
            for r in 0..rank {
                let v = lerp(src.vector(r, i0) as f64, src.vector(r, i0 + 1) as f64, t);
                *dst.vector_mut(r, j) = v as f32;
            }
        }
        for ja in 0..dst.mat_rows {
            let (a0, ta) = resample_stencil(ja, src.mat_rows, dst.mat_rows);
            for jb in 0..dst.mat_cols {
                let (b0, tb) = resample_stencil(jb, src.mat_cols, dst.mat_cols);
                for r in 0..rank {
                    let top = lerp(
                        src.matrix(r, a0, b0) as f64,
                        src.matrix(r, a0, b0 + 1) as f64,
                        tb,
                    );
                    let bottom = lerp(
                        src.matrix(r, a0 + 1, b0) as f64,
                        src.matrix(r, a0 + 1, b0 + 1) as f64,
                        tb,
                    );
                    *dst.matrix_mut(r, ja, jb) = lerp(top, bottom, ta) as f32;
                }
            }
        }
    }
    out
}

/// Accumulated partial derivatives, shape-congruent with a [`VMGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridGradients {
    pub density: FactorSet<f64>,
    pub appearance: FactorSet<f64>,
    pub basis: Vec<f64>,
}

impl GridGradients {
    pub fn zeros_like(grid: &VMGrid) -> Self {
        let res = grid.shape.resolution;
        GridGradients {
            density: FactorSet::zeros(res, grid.shape.density_rank),
            appearance: FactorSet::zeros(res, grid.shape.appearance_rank),
            basis: vec![0.0; grid.basis.len()],
        }
    }

    /// Flat views in the same order as [`VMGrid::param_slices`].
    pub fn slices(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = Vec::with_capacity(13);
        out.extend(self.density.slices().map(|s| (ParamGroup::Density, s)));
        out.extend(self.appearance.slices().map(|s| (ParamGroup::Appearance, s)));
        out.push((ParamGroup::Basis, &self.basis));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::with_capacity(13);
        out.extend(
            self.density
                .slices_mut()
                .map(|s| (ParamGroup::Density, s)),
        );
        out.extend(
            self.appearance
                .slices_mut()
                .map(|s| (ParamGroup::Appearance, s)),
        );
        out.push((ParamGroup::Basis, &mut self.basis));
        out
    }

    pub fn add_assign(&mut self, other: &GridGradients) {
        for ((_, dst), (_, src)) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, dst) in self.slices_mut() {
            dst.iter_mut().for_each(|d| *d *= s);
        }
    }

    /// Zeroes every group the mask freezes.
    pub fn apply_mask(&mut self, trainable: impl Fn(ParamGroup) -> bool) {
        for (group, dst) in self.slices_mut() {
            if !trainable(group) {
                dst.iter_mut().for_each(|d| *d = 0.0);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|(_, s)| s.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self, group: ParamGroup) -> f64 {
        self.slices()
            .iter()
            .filter(|(g, _)| *g == group)
            .flat_map(|(_, s)| s.iter())
            .fold(0.0, |acc, x| acc.max(x.abs()))
    }
}
