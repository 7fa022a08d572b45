//! Random input functions for the four benchmark systems and KLE-based
//! intrinsic-dimension estimation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, FieldSample, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrfKind {
    Rbf,
    SpectralLaplacian,
    SpectralPowerlaw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralBoundary {
    Neumann,
    Periodic,
}

/// Exponent applied to `(λ_k + τ²)` in the power-law spectral sampler, as a
/// function of α. The kernel exponent as written diverges, so the spectral
/// density reading `-(α+1)/2` is used.
pub fn powerlaw_std_exponent(alpha: f64) -> f64 {
    -(alpha + 1.0) / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub kind: GrfKind,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub length_scale: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub alpha_exp: f64,
    #[serde(default)]
    pub laplacian_shift: f64,
    #[serde(default = "default_boundary")]
    pub boundary: SpectralBoundary,
}

fn default_boundary() -> SpectralBoundary {
    SpectralBoundary::Neumann
}

impl GrfSpec {
    /// Initial-condition field of the nerve-impulse example.
    pub fn nagumo() -> Self {
        GrfSpec {
            kind: GrfKind::Rbf,
            sigma: 0.1,
            length_scale: 0.1,
            tau: 0.0,
            alpha_exp: 0.0,
            laplacian_shift: 0.0,
            boundary: SpectralBoundary::Neumann,
        }
    }

    /// `N(0, (-Δ + 9I)^-2)` with zero-Neumann Laplacian.
    pub fn darcy() -> Self {
        GrfSpec {
            kind: GrfKind::SpectralLaplacian,
            sigma: 0.0,
            length_scale: 0.0,
            tau: 3.0,
            alpha_exp: 2.0,
            laplacian_shift: 9.0,
            boundary: SpectralBoundary::Neumann,
        }
    }

    /// Allen–Cahn initial conditions, τ = 15, α = 1, periodic.
    pub fn allen_cahn() -> Self {
        GrfSpec {
            kind: GrfKind::SpectralPowerlaw,
            sigma: 0.0,
            length_scale: 0.0,
            tau: 15.0,
            alpha_exp: 1.0,
            laplacian_shift: 0.0,
            boundary: SpectralBoundary::Periodic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            GrfKind::Rbf => {
                if !(self.sigma >= 0.0) || !(self.length_scale > 0.0) {
                    return Err(invalid("rbf field needs sigma >= 0 and length_scale > 0"));
                }
            }
            GrfKind::SpectralLaplacian => {
                if !(self.laplacian_shift > 0.0) {
                    return Err(invalid("laplacian_shift must be > 0"));
                }
            }
            GrfKind::SpectralPowerlaw => {
                if !(self.tau > 0.0) || !self.alpha_exp.is_finite() {
                    return Err(invalid("power-law field needs tau > 0 and finite alpha"));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic per-sample seed derived from a base seed (splitmix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Evaluate the trigonometric source of the diffusion–reaction example.
pub fn trig_source_value(n: f64, p: f64, w: f64, x: f64) -> f64 {
    n * (PI * x).sin()
        + (1.0 - n) * (PI * x).cos()
        + p * (2.0 * PI * x).sin()
        + (1.0 - p) * (2.0 * PI * x).cos()
        + w * (3.0 * PI * x).sin()
        + (1.0 - w) * (3.0 * PI * x).cos()
}

pub fn sample_trig_source(n: f64, p: f64, w: f64, grid: &Grid) -> Result<FieldSample> {
    for (name, v) in [("n", n), ("p", p), ("w", w)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(format!("{name} = {v} outside [0, 1]")));
        }
    }
    if grid.ndim() != 1 {
        return Err(invalid("trig source needs a 1-D grid"));
    }
    let values = grid
        .coords(0)
        .into_iter()
        .map(|x| trig_source_value(n, p, w, x))
        .collect();
    FieldSample::new(grid.clone(), 1, values, FieldKind::Source, 0)
}

/// Draw `(n, p, w) ~ Unif(0,1)^3` from a seed.
pub fn draw_trig_params(seed: u64) -> [f64; 3] {
    let mut rng = rng_from_seed(seed);
    [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
}

/// Precomputed factor `V sqrt(Λ)` of an RBF covariance on a 1-D grid.
#[derive(Clone, Debug)]
pub struct RbfSampler {
    grid: Grid,
    factor: DMatrix<f64>,
}

impl RbfSampler {
    pub fn new(spec: &GrfSpec, grid: &Grid) -> Result<Self> {
        if spec.kind != GrfKind::Rbf {
            return Err(invalid("RbfSampler needs an rbf spec"));
        }
        spec.validate()?;
        if grid.ndim() != 1 {
            return Err(invalid("rbf sampler works on 1-D grids"));
        }
        let x = grid.coords(0);
        let n = x.len();
        let s2 = spec.sigma * spec.sigma;
        let l2 = spec.length_scale * spec.length_scale;
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let d = x[i] - x[j];
            s2 * (-d * d / (2.0 * l2)).exp()
        });
        let eig = SymmetricEigen::new(cov);
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_ev < -1e-8 * max_ev.max(1e-300) && max_ev > 0.0 {
            return Err(Error::Internal(format!(
                "covariance not positive semidefinite: min eigenvalue {min_ev:e}"
            )));
        }
        let mut factor = eig.eigenvectors;
        for (j, &ev) in eig.eigenvalues.iter().enumerate() {
            let s = ev.max(0.0).sqrt();
            factor.column_mut(j).scale_mut(s);
        }
        Ok(RbfSampler {
            grid: grid.clone(),
            factor,
        })
    }

    /// Number of standard-normal variables behind one draw.
    pub fn dim(&self) -> usize {
        self.factor.ncols()
    }

    /// Field values for a given standard-normal vector.
    pub fn field_from_normals(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.dim() {
            return Err(crate::error::shape(self.dim(), xi.len()));
        }
        Ok((&self.factor * nalgebra::DVector::from_column_slice(xi)).as_slice().to_vec())
    }

    pub fn sample(&self, seed: u64) -> FieldSample {
        let n = self.factor.ncols();
        let mut rng = rng_from_seed(seed);
        let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        FieldSample {
            grid: self.grid.clone(),
            channels: 1,
            values: self.field_from_normals(&xi).expect("dimension matches"),
            kind: FieldKind::InitialCondition,
            seed,
        }
    }
}

pub fn sample_grf_rbf(spec: &GrfSpec, grid: &Grid, seed: u64) -> Result<FieldSample> {
    Ok(RbfSampler::new(spec, grid)?.sample(seed))
}

/// Spectral sampler on a square grid, synthesising the field in the
/// Laplacian eigenbasis (cosine for Neumann, real Fourier for periodic).
#[derive(Clone, Debug)]
pub struct SpectralSampler {
    grid: Grid,
    /// `basis[k * n + j]` = k-th 1-D basis function at node j.
    basis: Vec<f64>,
    /// Per-mode standard deviation, `std[kx * n + ky]`.
    std: Vec<f64>,
    n: usize,
}

impl SpectralSampler {
    pub fn new(spec: &GrfSpec, grid: &Grid) -> Result<Self> {
        spec.validate()?;
        if grid.ndim() != 2 || grid.dims()[0] != grid.dims()[1] {
            return Err(invalid(format!(
                "spectral sampler needs a square 2-D grid, got {:?}",
                grid.dims()
            )));
        }
        let n = grid.dims()[0];
        let (basis, eig) = match spec.boundary {
            SpectralBoundary::Neumann => neumann_basis(grid),
            SpectralBoundary::Periodic => periodic_basis(n),
        };
        let mut std = vec![0.0; n * n];
        for kx in 0..n {
            for ky in 0..n {
                let lam = eig[kx] + eig[ky];
                std[kx * n + ky] = match spec.kind {
                    GrfKind::SpectralLaplacian => 1.0 / (lam + spec.laplacian_shift),
                    GrfKind::SpectralPowerlaw => {
                        let t2 = spec.tau * spec.tau;
                        spec.tau.powf(spec.alpha_exp - 1.0)
                            * (lam + t2).powf(powerlaw_std_exponent(spec.alpha_exp))
                    }
                    GrfKind::Rbf => return Err(invalid("rbf spec passed to spectral sampler")),
                };
            }
        }
        // zero-mean field
        std[0] = 0.0;
        Ok(SpectralSampler {
            grid: grid.clone(),
            basis,
            std,
            n,
        })
    }

    pub fn mode_std(&self, kx: usize, ky: usize) -> f64 {
        self.std[kx * self.n + ky]
    }

    /// Field from explicit mode coefficients `c[kx * n + ky]`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.n;
        // tmp[kx][j] = sum_ky c[kx][ky] * b[ky][j]
        let mut tmp = vec![0.0; n * n];
        for kx in 0..n {
            let row = &mut tmp[kx * n..(kx + 1) * n];
            for ky in 0..n {
                let c = coeffs[kx * n + ky];
                if c == 0.0 {
                    continue;
                }
                let b = &self.basis[ky * n..(ky + 1) * n];
                for j in 0..n {
                    row[j] += c * b[j];
                }
            }
        }
        let mut out = vec![0.0; n * n];
        for kx in 0..n {
            let b = &self.basis[kx * n..(kx + 1) * n];
            let t = &tmp[kx * n..(kx + 1) * n];
            for i in 0..n {
                let bi = b[i];
                if bi == 0.0 {
                    continue;
                }
                let o = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    o[j] += bi * t[j];
                }
            }
        }
        out
    }

    pub fn sample(&self, seed: u64) -> FieldSample {
        let mut rng = rng_from_seed(seed);
        let coeffs: Vec<f64> = self
            .std
            .iter()
            .map(|&s| {
                let z: f64 = rng.sample(StandardNormal);
                s * z
            })
            .collect();
        FieldSample {
            grid: self.grid.clone(),
            channels: 1,
            values: self.synthesize(&coeffs),
            kind: FieldKind::InitialCondition,
            seed,
        }
    }
}

fn neumann_basis(grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let n = grid.dims()[0];
    let x = grid.coords(0);
    let [lo, hi] = grid.bounds()[0];
    let len = hi - lo;
    let mut basis = vec![0.0; n * n];
    let mut eig = vec![0.0; n];
    for k in 0..n {
        let c = if k == 0 { 1.0 } else { 2f64.sqrt() } / len.sqrt();
        let w = PI * k as f64 / len;
        eig[k] = w * w;
        for j in 0..n {
            basis[k * n + j] = c * (w * (x[j] - lo)).cos();
        }
    }
    (basis, eig)
}

/// Real Fourier basis on nodes `j / n` of the unit period:
/// 1, √2 cos(2πkx), √2 sin(2πkx), and the Nyquist cosine for even n.
fn periodic_basis(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut basis = vec![0.0; n * n];
    let mut eig = vec![0.0; n];
    for m in 0..n {
        // m = 0 -> constant; odd m -> cos(k), even m -> sin(k), k = (m+1)/2
        let k = m.div_ceil(2);
        let w = 2.0 * PI * k as f64;
        eig[m] = w * w;
        for j in 0..n {
            let x = j as f64 / n as f64;
            basis[m * n + j] = if m == 0 {
                1.0
            } else if n.is_multiple_of(2) && k == n / 2 {
                // Nyquist: only the cosine survives on the grid
                if m % 2 == 1 {
                    (w * x).cos()
                } else {
                    0.0
                }
            } else if m % 2 == 1 {
                2f64.sqrt() * (w * x).cos()
            } else {
                2f64.sqrt() * (w * x).sin()
            };
        }
    }
    (basis, eig)
}

pub fn sample_grf_spectral(spec: &GrfSpec, grid: &Grid, seed: u64) -> Result<FieldSample> {
    Ok(SpectralSampler::new(spec, grid)?.sample(seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Pushforward {
    /// `hi` where g >= 0, `lo` where g < 0.
    Binary { hi: f64, lo: f64 },
    Exp,
}

impl Default for Pushforward {
    fn default() -> Self {
        Pushforward::Binary { hi: 12.0, lo: 3.0 }
    }
}

pub fn darcy_pushforward(field: &FieldSample, map: Pushforward) -> FieldSample {
    let values = field
        .values
        .iter()
        .map(|&g| match map {
            Pushforward::Binary { hi, lo } => {
                if g >= 0.0 {
                    hi
                } else {
                    lo
                }
            }
            Pushforward::Exp => g.exp(),
        })
        .collect();
    FieldSample {
        grid: field.grid.clone(),
        channels: field.channels,
        values,
        kind: FieldKind::Permeability,
        seed: field.seed,
    }
}

/// Nonnegative empirical covariance eigenvalues, sorted descending.
pub fn kle_spectrum(samples: &[FieldSample]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(invalid("KLE needs at least 2 samples"));
    }
    let p = samples[0].values.len();
    if samples.iter().any(|s| s.values.len() != p || s.grid != samples[0].grid) {
        return Err(invalid("KLE samples must share one grid and channel count"));
    }
    let m = samples.len();
    let mut mean = vec![0.0; p];
    for s in samples {
        for (a, v) in mean.iter_mut().zip(&s.values) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.values.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();
    let denom = (m - 1) as f64;
    let mat = if m <= p {
        // Gram matrix shares the nonzero spectrum with the covariance
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let d: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                g[(i, j)] = d / denom;
                g[(j, i)] = d / denom;
            }
        }
        g
    } else {
        let mut c = DMatrix::zeros(p, p);
        for row in &centered {
            for i in 0..p {
                for j in 0..=i {
                    c[(i, j)] += row[i] * row[j] / denom;
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                c[(j, i)] = c[(i, j)];
            }
        }
        c
    };
    let mut ev: Vec<f64> = SymmetricEigen::new(mat)
        .eigenvalues
        .iter()
        .map(|&e| e.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Smallest m whose leading eigenvalues capture `energy_fraction` of the total.
pub fn intrinsic_dim_from_spectrum(ev: &[f64], energy_fraction: f64) -> Result<usize> {
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(invalid(format!("energy fraction {energy_fraction} outside (0, 1]")));
    }
    let total: f64 = ev.iter().sum();
    if total <= 0.0 {
        return Ok(0);
    }
    let mut acc = 0.0;
    for (i, e) in ev.iter().enumerate() {
        acc += e;
        // relative slack absorbs summation-order rounding at fraction 1
        if acc >= energy_fraction * total * (1.0 - 1e-12) {
            return Ok(i + 1);
        }
    }
    Ok(ev.len())
}

pub fn kle_intrinsic_dim(samples: &[FieldSample], energy_fraction: f64) -> Result<usize> {
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(invalid(format!("energy fraction {energy_fraction} outside (0, 1]")));
    }
    intrinsic_dim_from_spectrum(&kle_spectrum(samples)?, energy_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_source_examples() {
        let g = Grid::unit_1d(3).unwrap();
        let f = sample_trig_source(1.0, 1.0, 1.0, &g).unwrap();
        assert!(f.values[0].abs() < 1e-15);
        let f = sample_trig_source(0.5, 0.5, 0.5, &g).unwrap();
        assert!((f.values[1] + 0.5).abs() < 1e-12);
        let f = sample_trig_source(0.0, 0.0, 0.0, &g).unwrap();
        assert!((f.values[0] - 3.0).abs() < 1e-15);
        assert!(sample_trig_source(1.2, 0.0, 0.0, &g).is_err());
        assert!(sample_trig_source(0.0, -0.1, 0.0, &g).is_err());
    }

    #[test]
    fn trig_source_bounded() {
        for s in 0..200 {
            let [n, p, w] = draw_trig_params(s);
            for i in 0..=100 {
                assert!(trig_source_value(n, p, w, i as f64 / 100.0).abs() <= 6.0);
            }
        }
    }

    #[test]
    fn rbf_zero_sigma_is_zero_field() {
        let mut spec = GrfSpec::nagumo();
        spec.sigma = 0.0;
        let f = sample_grf_rbf(&spec, &Grid::unit_1d(65).unwrap(), 3).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn samplers_are_deterministic() {
        let g = Grid::unit_square(16).unwrap();
        let a = sample_grf_spectral(&GrfSpec::darcy(), &g, 42).unwrap();
        let b = sample_grf_spectral(&GrfSpec::darcy(), &g, 42).unwrap();
        assert_eq!(a.values, b.values);
        let c = sample_grf_spectral(&GrfSpec::darcy(), &g, 43).unwrap();
        assert_ne!(a.values, c.values);
        let g1 = Grid::unit_1d(65).unwrap();
        let a = sample_grf_rbf(&GrfSpec::nagumo(), &g1, 7).unwrap();
        let b = sample_grf_rbf(&GrfSpec::nagumo(), &g1, 7).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn spectral_needs_square_grid() {
        let g = Grid::space_time(8, 9).unwrap();
        assert!(sample_grf_spectral(&GrfSpec::darcy(), &g, 0).is_err());
    }

    #[test]
    fn pushforward_values() {
        let g = Grid::unit_square(4).unwrap();
        let zero = FieldSample::new(g, 1, vec![0.0; 16], FieldKind::InitialCondition, 0).unwrap();
        let a = darcy_pushforward(&zero, Pushforward::default());
        assert!(a.values.iter().all(|&v| v == 12.0));
        let a = darcy_pushforward(&zero, Pushforward::Exp);
        assert!(a.values.iter().all(|&v| v == 1.0));
        let s = sample_grf_spectral(&GrfSpec::darcy(), &Grid::unit_square(16).unwrap(), 5).unwrap();
        let a = darcy_pushforward(&s, Pushforward::default());
        assert!(a.values.iter().all(|&v| v == 12.0 || v == 3.0));
    }

    #[test]
    fn rank_one_samples_have_dim_one() {
        let g = Grid::unit_1d(10).unwrap();
        let base: Vec<f64> = (0..10).map(|i| (i as f64).sin() + 0.3).collect();
        let samples: Vec<FieldSample> = (1..6)
            .map(|k| {
                let v = base.iter().map(|b| b * k as f64).collect();
                FieldSample::new(g.clone(), 1, v, FieldKind::Source, 0).unwrap()
            })
            .collect();
        assert_eq!(kle_intrinsic_dim(&samples, 0.99).unwrap(), 1);
        assert!(kle_intrinsic_dim(&samples[..1], 0.99).is_err());
        assert!(kle_intrinsic_dim(&samples, 0.0).is_err());
    }

    #[test]
    fn kle_spectrum_sorted_and_monotone() {
        let spec = GrfSpec::nagumo();
        let g = Grid::unit_1d(33).unwrap();
        let sampler = RbfSampler::new(&spec, &g).unwrap();
        let samples: Vec<_> = (0..50).map(|s| sampler.sample(s)).collect();
        let ev = kle_spectrum(&samples).unwrap();
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        assert!(ev.iter().all(|&e| e >= 0.0));
        let mut last = 0;
        for f in [0.5, 0.8, 0.9, 0.99, 1.0] {
            let m = intrinsic_dim_from_spectrum(&ev, f).unwrap();
            assert!(m >= last);
            last = m;
        }
    }

    #[test]
    fn seed_derivation_spreads() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(1, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
    }
}
