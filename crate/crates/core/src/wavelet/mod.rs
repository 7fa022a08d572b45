//! Multilevel periodic DWT and a 2-D dual-tree complex wavelet transform,
//! each with its inverse and the exact adjoints of both directions.
//!
//! The adjoints are what the operator's backward pass needs: neither the
//! near-symmetric level-1 bank nor the decimated dual tree is orthogonal, so
//! `adjoint(forward)` is not `inverse`.

mod bank;
pub mod filters;

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use bank::{Pass, Tree, TreeCoeffs};
use filters::FilterBank;

pub use filters::parse_filter_table;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletFamily {
    /// Orthonormal Daubechies-6, periodic extension.
    Db6,
    /// Dual-tree complex transform: near-symmetric (13,19) level 1,
    /// 14-tap q-shift deeper levels.
    Dtcwt,
}

/// Coefficients of either transform.
///
/// Every array holds `batch` interleaved signals: `a[loc * batch + b]`.
///
/// * DWT: one coarse array; per level 1 (1-D) or 3 (2-D: LH, HL, HH)
///   detail arrays.
/// * DTCWT: four real lowpass arrays (trees aa, bb, ab, ba); per level 12
///   detail arrays: for each of LH, HL, HH the (re, im) parts of the two
///   mirrored orientations.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletCoeffs {
    pub family: WaveletFamily,
    pub shape: Vec<usize>,
    pub levels: usize,
    pub batch: usize,
    pub coarse: Vec<Vec<f64>>,
    pub details: Vec<Vec<Vec<f64>>>,
}

impl WaveletCoeffs {
    /// Extent of every subband at `level` (0 = finest).
    pub fn band_shape(&self, level: usize) -> Vec<usize> {
        self.shape.iter().map(|&n| n >> (level + 1)).collect()
    }

    /// Locations per subband at `level`, not counting the batch.
    pub fn band_len(&self, level: usize) -> usize {
        self.band_shape(level).iter().product()
    }

    pub fn zeros_like(&self) -> Self {
        WaveletCoeffs {
            family: self.family,
            shape: self.shape.clone(),
            levels: self.levels,
            batch: self.batch,
            coarse: self.coarse.iter().map(|c| vec![0.0; c.len()]).collect(),
            details: self
                .details
                .iter()
                .map(|l| l.iter().map(|d| vec![0.0; d.len()]).collect())
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.arrays_mut().for_each(|a| a.iter_mut().for_each(|v| *v *= s));
        out
    }

    pub fn arrays(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.coarse.iter().chain(self.details.iter().flatten())
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.coarse.iter_mut().chain(self.details.iter_mut().flatten())
    }

    pub fn energy(&self) -> f64 {
        self.arrays().flatten().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.arrays()
            .zip(other.arrays())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    fn check_layout(&self) -> Result<()> {
        let per_level = match (self.family, self.shape.len()) {
            (WaveletFamily::Db6, 1) => 1,
            (WaveletFamily::Db6, 2) => 3,
            (WaveletFamily::Dtcwt, 2) => 12,
            _ => return Err(invalid(format!("{:?} coefficients with {}-D shape", self.family, self.shape.len()))),
        };
        let n_coarse = if self.family == WaveletFamily::Dtcwt { 4 } else { 1 };
        check_extent(&self.shape, self.levels)?;
        if self.details.len() != self.levels || self.coarse.len() != n_coarse {
            return Err(invalid("coefficient level count does not match `levels`"));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be positive"));
        }
        let coarse_len = self.band_len(self.levels - 1) * self.batch;
        if self.coarse.iter().any(|c| c.len() != coarse_len) {
            return Err(invalid("coarse band has the wrong extent"));
        }
        for (lev, d) in self.details.iter().enumerate() {
            let len = self.band_len(lev) * self.batch;
            if d.len() != per_level || d.iter().any(|a| a.len() != len) {
                return Err(invalid(format!("detail bands at level {lev} have inconsistent shapes")));
            }
        }
        Ok(())
    }
}

fn check_extent(shape: &[usize], levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(invalid("at least one decomposition level is required"));
    }
    if levels >= usize::BITS as usize {
        return Err(invalid(format!("{levels} levels is too many")));
    }
    let block = 1usize << levels;
    for &n in shape {
        if n < block || n % block != 0 {
            return Err(invalid(format!(
                "extent {n} is not a positive multiple of 2^{levels} = {block}"
            )));
        }
    }
    Ok(())
}

struct Banks {
    db6: FilterBank,
    near_sym: [FilterBank; 2],
    /// q-shift filters used by tree a and tree b respectively
    qshift: [FilterBank; 2],
}

fn banks() -> &'static Banks {
    static BANKS: OnceLock<Banks> = OnceLock::new();
    BANKS.get_or_init(|| Banks {
        db6: filters::db6(),
        near_sym: [filters::near_sym_b(0), filters::near_sym_b(1)],
        // tree a (even level-1 phase) takes the "b" q-shift set, which makes
        // tree a + i·tree b approximately analytic
        qshift: [filters::qshift_b(false), filters::qshift_b(true)],
    })
}

fn dwt_tree(ndim: usize, levels: usize) -> Tree<'static> {
    let b = &banks().db6;
    Tree {
        banks: (0..levels).map(|_| vec![b; ndim]).collect(),
    }
}

/// Tree for (x-tree, y-tree); axis 0 is y, axis 1 is x.
fn dual_tree(tree_x: usize, tree_y: usize, levels: usize) -> Tree<'static> {
    let b = banks();
    let pick = |t: usize, lev: usize| if lev == 0 { &b.near_sym[t] } else { &b.qshift[t] };
    Tree {
        banks: (0..levels).map(|lev| vec![pick(tree_y, lev), pick(tree_x, lev)]).collect(),
    }
}

fn check_field(field: &[f64], shape: &[usize], batch: usize) -> Result<()> {
    let n: usize = shape.iter().product::<usize>() * batch;
    if batch == 0 || field.len() != n {
        return Err(invalid(format!(
            "field has {} values, shape {:?} × batch {batch} needs {n}",
            field.len(),
            shape
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- DWT

fn dwt_decompose(field: &[f64], shape: &[usize], levels: usize, batch: usize, pass: Pass) -> Result<WaveletCoeffs> {
    if shape.is_empty() || shape.len() > 2 {
        return Err(invalid("DWT supports 1-D and 2-D fields"));
    }
    check_extent(shape, levels)?;
    check_field(field, shape, batch)?;
    let tc = dwt_tree(shape.len(), levels).decompose(field, shape, batch, pass);
    Ok(WaveletCoeffs {
        family: WaveletFamily::Db6,
        shape: shape.to_vec(),
        levels,
        batch,
        coarse: vec![tc.low],
        details: tc.details,
    })
}

fn dwt_reconstruct(c: &WaveletCoeffs, pass: Pass) -> Result<Vec<f64>> {
    if c.family != WaveletFamily::Db6 {
        return Err(invalid("not DWT coefficients"));
    }
    c.check_layout()?;
    let tc = TreeCoeffs {
        low: c.coarse[0].clone(),
        details: c.details.clone(),
    };
    Ok(dwt_tree(c.shape.len(), c.levels).reconstruct(&tc, &c.shape, c.batch, pass))
}

pub fn dwt_forward(field: &[f64], shape: &[usize], levels: usize) -> Result<WaveletCoeffs> {
    dwt_decompose(field, shape, levels, 1, Pass::Forward)
}

pub fn dwt_inverse(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    dwt_reconstruct(coeffs, Pass::Inverse)
}

/// `Wᵀ c` for the forward DWT.
pub fn dwt_forward_adjoint(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    dwt_reconstruct(coeffs, Pass::ForwardAdjoint)
}

/// `(W⁻¹)ᵀ x` for the inverse DWT.
pub fn dwt_inverse_adjoint(field: &[f64], shape: &[usize], levels: usize) -> Result<WaveletCoeffs> {
    dwt_decompose(field, shape, levels, 1, Pass::InverseAdjoint)
}

// ---------------------------------------------------------------- DTCWT

/// Tree pairs in storage order: (x-tree, y-tree) = aa, bb, ab, ba.
const TREE_PAIRS: [(usize, usize); 4] = [(0, 0), (1, 1), (0, 1), (1, 0)];

/// Orthogonal map from tree subbands (aa, bb, ab, ba) to
/// (re z+, im z+, re z-, im z-).
fn mix(t: [&[f64]; 4]) -> [Vec<f64>; 4] {
    let n = t[0].len();
    let s = FRAC_1_SQRT_2;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let (aa, bb, ab, ba) = (t[0][i], t[1][i], t[2][i], t[3][i]);
        out[0][i] = s * (aa - bb);
        out[1][i] = s * (ab + ba);
        out[2][i] = s * (aa + bb);
        out[3][i] = s * (ba - ab);
    }
    out
}

/// Transpose (= inverse) of [`mix`].
fn unmix(z: [&[f64]; 4]) -> [Vec<f64>; 4] {
    let n = z[0].len();
    let s = FRAC_1_SQRT_2;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let (r1, i1, r2, i2) = (z[0][i], z[1][i], z[2][i], z[3][i]);
        out[0][i] = s * (r1 + r2);
        out[1][i] = s * (r2 - r1);
        out[2][i] = s * (i1 - i2);
        out[3][i] = s * (i1 + i2);
    }
    out
}

fn dtcwt_decompose(field: &[f64], shape: &[usize], levels: usize, batch: usize, pass: Pass, scale: f64) -> Result<WaveletCoeffs> {
    if shape.len() != 2 {
        return Err(invalid("the dual-tree transform is 2-D only"));
    }
    check_extent(shape, levels)?;
    check_field(field, shape, batch)?;
    let trees: Vec<TreeCoeffs> = TREE_PAIRS
        .iter()
        .map(|&(tx, ty)| dual_tree(tx, ty, levels).decompose(field, shape, batch, pass))
        .collect();
    let mut details = Vec::with_capacity(levels);
    for lev in 0..levels {
        let mut sets = Vec::with_capacity(12);
        for band in 0..3 {
            let z = mix([
                &trees[0].details[lev][band],
                &trees[1].details[lev][band],
                &trees[2].details[lev][band],
                &trees[3].details[lev][band],
            ]);
            sets.extend(z);
        }
        details.push(sets);
    }
    let mut c = WaveletCoeffs {
        family: WaveletFamily::Dtcwt,
        shape: shape.to_vec(),
        levels,
        batch,
        coarse: trees.into_iter().map(|t| t.low).collect(),
        details,
    };
    if scale != 1.0 {
        c = c.scaled(scale);
    }
    Ok(c)
}

fn dtcwt_reconstruct(c: &WaveletCoeffs, pass: Pass, scale: f64) -> Result<Vec<f64>> {
    if c.family != WaveletFamily::Dtcwt {
        return Err(invalid("not dual-tree coefficients"));
    }
    c.check_layout()?;
    let mut per_tree: Vec<TreeCoeffs> = (0..4)
        .map(|t| TreeCoeffs {
            low: c.coarse[t].clone(),
            details: Vec::with_capacity(c.levels),
        })
        .collect();
    for lev in 0..c.levels {
        let mut bands: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(3); 4];
        for band in 0..3 {
            let d = &c.details[lev][band * 4..band * 4 + 4];
            let t = unmix([&d[0], &d[1], &d[2], &d[3]]);
            for (k, v) in t.into_iter().enumerate() {
                bands[k].push(v);
            }
        }
        for (k, b) in bands.into_iter().enumerate() {
            per_tree[k].details.push(b);
        }
    }
    let mut out = vec![0.0; c.shape.iter().product::<usize>() * c.batch];
    for (k, &(tx, ty)) in TREE_PAIRS.iter().enumerate() {
        let x = dual_tree(tx, ty, c.levels).reconstruct(&per_tree[k], &c.shape, c.batch, pass);
        for (o, v) in out.iter_mut().zip(x) {
            *o += scale * v;
        }
    }
    Ok(out)
}

pub fn dtcwt_forward(field: &[f64], shape: &[usize], levels: usize) -> Result<WaveletCoeffs> {
    dtcwt_decompose(field, shape, levels, 1, Pass::Forward, 1.0)
}

/// Average of the four tree reconstructions.
pub fn dtcwt_inverse(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    dtcwt_reconstruct(coeffs, Pass::Inverse, 0.25)
}

pub fn dtcwt_forward_adjoint(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    dtcwt_reconstruct(coeffs, Pass::ForwardAdjoint, 1.0)
}

pub fn dtcwt_inverse_adjoint(field: &[f64], shape: &[usize], levels: usize) -> Result<WaveletCoeffs> {
    dtcwt_decompose(field, shape, levels, 1, Pass::InverseAdjoint, 0.25)
}

// ---------------------------------------------------------------- dispatch

pub fn forward(family: WaveletFamily, field: &[f64], shape: &[usize], levels: usize) -> Result<WaveletCoeffs> {
    match family {
        WaveletFamily::Db6 => dwt_forward(field, shape, levels),
        WaveletFamily::Dtcwt => dtcwt_forward(field, shape, levels),
    }
}

/// [`forward`] on `batch` interleaved fields (`field[node * batch + b]`).
pub fn forward_batch(family: WaveletFamily, field: &[f64], shape: &[usize], levels: usize, batch: usize) -> Result<WaveletCoeffs> {
    match family {
        WaveletFamily::Db6 => dwt_decompose(field, shape, levels, batch, Pass::Forward),
        WaveletFamily::Dtcwt => dtcwt_decompose(field, shape, levels, batch, Pass::Forward, 1.0),
    }
}

/// [`inverse_adjoint`] on `batch` interleaved fields.
pub fn inverse_adjoint_batch(family: WaveletFamily, field: &[f64], shape: &[usize], levels: usize, batch: usize) -> Result<WaveletCoeffs> {
    match family {
        WaveletFamily::Db6 => dwt_decompose(field, shape, levels, batch, Pass::InverseAdjoint),
        WaveletFamily::Dtcwt => dtcwt_decompose(field, shape, levels, batch, Pass::InverseAdjoint, 0.25),
    }
}

pub fn inverse(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    match coeffs.family {
        WaveletFamily::Db6 => dwt_inverse(coeffs),
        WaveletFamily::Dtcwt => dtcwt_inverse(coeffs),
    }
}

pub fn forward_adjoint(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    match coeffs.family {
        WaveletFamily::Db6 => dwt_forward_adjoint(coeffs),
        WaveletFamily::Dtcwt => dtcwt_forward_adjoint(coeffs),
    }
}

pub fn inverse_adjoint(family: WaveletFamily, field: &[f64], shape: &[usize], levels: usize) -> Result<WaveletCoeffs> {
    match family {
        WaveletFamily::Db6 => dwt_inverse_adjoint(field, shape, levels),
        WaveletFamily::Dtcwt => dtcwt_inverse_adjoint(field, shape, levels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn coarse_length_halves_per_level() {
        let c = dwt_forward(&rand_vec(64, 0), &[64], 3).unwrap();
        assert_eq!(c.coarse[0].len(), 8);
        assert_eq!(c.details[0][0].len(), 32);
        assert_eq!(c.details[2][0].len(), 8);
    }

    #[test]
    fn too_many_levels_rejected() {
        assert!(dwt_forward(&rand_vec(64, 0), &[64], 7).is_err());
        assert!(dwt_forward(&rand_vec(48, 0), &[48], 5).is_err());
        assert!(dwt_forward(&rand_vec(64, 0), &[64], 0).is_err());
        assert!(dwt_forward(&rand_vec(63, 0), &[64], 2).is_err());
    }

    #[test]
    fn constant_field_has_no_detail() {
        let c = dwt_forward(&vec![3.5; 64 * 64], &[64, 64], 3).unwrap();
        for lev in &c.details {
            for d in lev {
                assert!(d.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn dwt_parseval_and_roundtrip() {
        let x = rand_vec(64 * 64, 1);
        let c = dwt_forward(&x, &[64, 64], 3).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        assert!((c.energy() - ex).abs() < 1e-10);
        let y = dwt_inverse(&c).unwrap();
        assert!(rel_err(&y, &x) < 1e-8);
    }

    #[test]
    fn dwt_inverse_linear() {
        let c = dwt_forward(&rand_vec(64 * 64, 2), &[64, 64], 3).unwrap();
        let zero = dwt_inverse(&c.zeros_like()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let a = dwt_inverse(&c).unwrap();
        let b = dwt_inverse(&c.scaled(2.0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_coeffs_rejected() {
        let mut c = dwt_forward(&rand_vec(64, 3), &[64], 3).unwrap();
        c.details[1][0].pop();
        assert!(dwt_inverse(&c).is_err());
        let mut c = dtcwt_forward(&rand_vec(256, 3), &[16, 16], 2).unwrap();
        c.details[0].pop();
        assert!(dtcwt_inverse(&c).is_err());
    }

    #[test]
    fn dwt_shift_moves_coarse_band_by_one() {
        let n = 64;
        let levels = 3;
        let x = rand_vec(n, 4);
        let shifted: Vec<f64> = (0..n).map(|i| x[(i + n - 8) % n]).collect();
        let a = dwt_forward(&x, &[n], levels).unwrap();
        let b = dwt_forward(&shifted, &[n], levels).unwrap();
        let m = a.coarse[0].len();
        for i in 0..m {
            assert!((b.coarse[0][(i + 1) % m] - a.coarse[0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn dtcwt_roundtrip_and_structure() {
        let x = rand_vec(64 * 64, 5);
        let c = dtcwt_forward(&x, &[64, 64], 3).unwrap();
        assert_eq!(c.coarse.len(), 4);
        assert!(c.details.iter().all(|l| l.len() == 12));
        assert_eq!(c.details[2][0].len(), 64);
        let y = dtcwt_inverse(&c).unwrap();
        assert!(rel_err(&y, &x) < 1e-6);
    }

    #[test]
    fn dtcwt_rejects_1d() {
        assert!(dtcwt_forward(&rand_vec(64, 0), &[64], 2).is_err());
    }

    #[test]
    fn dtcwt_constant_field_oriented_bands_vanish() {
        // the q-shift highpass taps sum to ~1e-6, not exactly zero
        let c = dtcwt_forward(&vec![1.25; 32 * 32], &[32, 32], 3).unwrap();
        let dc = c.coarse[0][0].abs();
        for lev in &c.details {
            for d in lev {
                assert!(d.iter().all(|v| v.abs() < 1e-5 * dc));
            }
        }
    }

    #[test]
    fn adjoint_identities() {
        for family in [WaveletFamily::Db6, WaveletFamily::Dtcwt] {
            let shape = [32, 32];
            let x = rand_vec(32 * 32, 6);
            let y = rand_vec(32 * 32, 7);
            let wx = forward(family, &x, &shape, 2).unwrap();
            let wy = forward(family, &y, &shape, 2).unwrap();
            // <W x, c> = <x, Wᵀ c>
            let wt = forward_adjoint(&wy).unwrap();
            let lhs = wx.dot(&wy);
            let rhs: f64 = x.iter().zip(&wt).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0));
            // <W⁻¹ c, y> = <c, W⁻ᵀ y>
            let inv = inverse(&wx).unwrap();
            let lhs: f64 = inv.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs = wx.dot(&inverse_adjoint(family, &y, &shape, 2).unwrap());
            assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0));
        }
    }
}
