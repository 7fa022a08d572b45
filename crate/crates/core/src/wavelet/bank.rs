//! Periodic two-channel filtering primitives and their exact adjoints, plus
//! the separable multilevel tree built on top of them.
//!
//! Analysis:  `y[n] = Σ_k h[k] x[(2n + phase - k) mod N]`
//! Synthesis: `x[(2n + offset + k) mod N] += g[k] y[n]`

use super::filters::FilterBank;

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// `idx[m * taps + k] = (2m + base0 + sign·k) mod n`
fn tap_table(half: usize, taps: usize, n: usize, base0: isize, sign: isize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(half * taps);
    for m in 0..half {
        let base = 2 * m as isize + base0;
        for k in 0..taps {
            idx.push(wrap(base + sign * k as isize, n));
        }
    }
    idx
}

// The primitives act on a block of `n × inner` values (the filtered axis
// outermost) so that the innermost loop runs over contiguous memory.

/// y[m] = Σ_k f[k] x[idx(m, k)]
fn gather(x: &[f64], f: &[f64], idx: &[usize], inner: usize, y: &mut [f64]) {
    let taps = f.len();
    for (m, ym) in y.chunks_exact_mut(inner).enumerate() {
        ym.iter_mut().for_each(|v| *v = 0.0);
        for (k, &fk) in f.iter().enumerate() {
            let j = idx[m * taps + k];
            let xj = &x[j * inner..(j + 1) * inner];
            for (o, &v) in ym.iter_mut().zip(xj) {
                *o += fk * v;
            }
        }
    }
}

/// x[idx(m, k)] += f[k] y[m]
fn scatter(y: &[f64], f: &[f64], idx: &[usize], inner: usize, x: &mut [f64]) {
    let taps = f.len();
    for (m, ym) in y.chunks_exact(inner).enumerate() {
        for (k, &fk) in f.iter().enumerate() {
            let j = idx[m * taps + k];
            let xj = &mut x[j * inner..(j + 1) * inner];
            for (o, &v) in xj.iter_mut().zip(ym) {
                *o += fk * v;
            }
        }
    }
}

/// Which linear map a pass through the tree evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Pass {
    /// forward transform (decomposition direction)
    Forward,
    /// adjoint of the inverse transform (also decomposition direction)
    InverseAdjoint,
    /// inverse transform (reconstruction direction)
    Inverse,
    /// adjoint of the forward transform (reconstruction direction)
    ForwardAdjoint,
}

/// Filters and tap tables for one split (or merge) of an axis of length n.
fn plan(bank: &FilterBank, pass: Pass, n: usize) -> (&[f64], &[f64], Vec<usize>, Vec<usize>) {
    let half = n / 2;
    match pass {
        Pass::Forward | Pass::ForwardAdjoint => {
            let p = bank.phase as isize;
            (
                &bank.h0,
                &bank.h1,
                tap_table(half, bank.h0.len(), n, p, -1),
                tap_table(half, bank.h1.len(), n, p, -1),
            )
        }
        Pass::Inverse | Pass::InverseAdjoint => {
            let off = bank.synthesis_offset();
            (
                &bank.g0,
                &bank.g1,
                tap_table(half, bank.g0.len(), n, off, 1),
                tap_table(half, bank.g1.len(), n, off, 1),
            )
        }
    }
}

/// Split a row-major array along `axis`; returns (lo, hi) with that axis halved.
pub(crate) fn split_axis(data: &[f64], shape: &[usize], axis: usize, bank: &FilterBank, pass: Pass) -> (Vec<f64>, Vec<f64>) {
    assert!(matches!(pass, Pass::Forward | Pass::InverseAdjoint), "split is a decomposition-direction pass");
    let n = shape[axis];
    let half = n / 2;
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let (f0, f1, i0, i1) = plan(bank, pass, n);
    let mut lo = vec![0.0; outer * half * inner];
    let mut hi = vec![0.0; outer * half * inner];
    for o in 0..outer {
        let x = &data[o * n * inner..(o + 1) * n * inner];
        gather(x, f0, &i0, inner, &mut lo[o * half * inner..(o + 1) * half * inner]);
        gather(x, f1, &i1, inner, &mut hi[o * half * inner..(o + 1) * half * inner]);
    }
    (lo, hi)
}

/// Inverse of [`split_axis`]: `half_shape` is the shape of `lo`/`hi`.
pub(crate) fn merge_axis(lo: &[f64], hi: &[f64], half_shape: &[usize], axis: usize, bank: &FilterBank, pass: Pass) -> Vec<f64> {
    assert!(matches!(pass, Pass::Inverse | Pass::ForwardAdjoint), "merge is a reconstruction-direction pass");
    let half = half_shape[axis];
    let n = 2 * half;
    let inner: usize = half_shape[axis + 1..].iter().product();
    let outer: usize = half_shape[..axis].iter().product();
    let (f0, f1, i0, i1) = plan(bank, pass, n);
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        let x = &mut out[o * n * inner..(o + 1) * n * inner];
        scatter(&lo[o * half * inner..(o + 1) * half * inner], f0, &i0, inner, x);
        scatter(&hi[o * half * inner..(o + 1) * half * inner], f1, &i1, inner, x);
    }
    out
}

/// One separable decomposition tree: per-level, per-axis filter banks.
pub(crate) struct Tree<'a> {
    /// `banks[level][axis]`
    pub banks: Vec<Vec<&'a FilterBank>>,
}

/// Decomposition of a 1-D or 2-D array: lowpass plus per-level detail
/// subbands (1 for 1-D; LH, HL, HH for 2-D).
pub(crate) struct TreeCoeffs {
    pub low: Vec<f64>,
    pub details: Vec<Vec<Vec<f64>>>,
}

impl Tree<'_> {
    /// `x` holds `batch` interleaved signals: `x[node * batch + b]`.
    pub fn decompose(&self, x: &[f64], shape: &[usize], batch: usize, pass: Pass) -> TreeCoeffs {
        let mut low = x.to_vec();
        let mut cur: Vec<usize> = shape.to_vec();
        let mut details = Vec::with_capacity(self.banks.len());
        for banks in &self.banks {
            match cur.len() {
                1 => {
                    let (l, h) = split_axis(&low, &[cur[0], batch], 0, banks[0], pass);
                    cur[0] /= 2;
                    low = l;
                    details.push(vec![h]);
                }
                2 => {
                    let (l0, h0) = split_axis(&low, &[cur[0], cur[1], batch], 0, banks[0], pass);
                    let mid = [cur[0] / 2, cur[1], batch];
                    let (ll, lh) = split_axis(&l0, &mid, 1, banks[1], pass);
                    let (hl, hh) = split_axis(&h0, &mid, 1, banks[1], pass);
                    cur = vec![cur[0] / 2, cur[1] / 2];
                    low = ll;
                    details.push(vec![lh, hl, hh]);
                }
                _ => unreachable!("trees are 1-D or 2-D"),
            }
        }
        TreeCoeffs { low, details }
    }

    pub fn reconstruct(&self, c: &TreeCoeffs, shape: &[usize], batch: usize, pass: Pass) -> Vec<f64> {
        let levels = self.banks.len();
        let mut low = c.low.clone();
        for lev in (0..levels).rev() {
            let banks = &self.banks[lev];
            let div = 1usize << (lev + 1);
            match shape.len() {
                1 => {
                    let half = [shape[0] / div, batch];
                    low = merge_axis(&low, &c.details[lev][0], &half, 0, banks[0], pass);
                }
                2 => {
                    let q = [shape[0] / div, shape[1] / div, batch];
                    let d = &c.details[lev];
                    let l0 = merge_axis(&low, &d[0], &q, 1, banks[1], pass);
                    let h0 = merge_axis(&d[1], &d[2], &q, 1, banks[1], pass);
                    let mid = [q[0], 2 * q[1], batch];
                    low = merge_axis(&l0, &h0, &mid, 0, banks[0], pass);
                }
                _ => unreachable!("trees are 1-D or 2-D"),
            }
        }
        low
    }
}

#[cfg(test)]
mod tests {
    use super::super::filters::{db6, near_sym_b, qshift_b};
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn single_level_perfect_reconstruction() {
        for bank in [db6(), near_sym_b(0), near_sym_b(1), qshift_b(true), qshift_b(false)] {
            let x = rand_vec(32, 1);
            let (lo, hi) = split_axis(&x, &[32], 0, &bank, Pass::Forward);
            let y = merge_axis(&lo, &hi, &[16], 0, &bank, Pass::Inverse);
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "err {err}");
        }
    }

    #[test]
    fn split_merge_adjoint_pairs() {
        let bank = near_sym_b(1);
        let x = rand_vec(24, 2);
        let lo = rand_vec(12, 3);
        let hi = rand_vec(12, 4);
        let (fl, fh) = split_axis(&x, &[24], 0, &bank, Pass::Forward);
        let adj = merge_axis(&lo, &hi, &[12], 0, &bank, Pass::ForwardAdjoint);
        assert!((dot(&fl, &lo) + dot(&fh, &hi) - dot(&x, &adj)).abs() < 1e-12);
        let inv = merge_axis(&lo, &hi, &[12], 0, &bank, Pass::Inverse);
        let (al, ah) = split_axis(&x, &[24], 0, &bank, Pass::InverseAdjoint);
        assert!((dot(&inv, &x) - dot(&lo, &al) - dot(&hi, &ah)).abs() < 1e-12);
    }
}
