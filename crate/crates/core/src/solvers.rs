//! Reference numerical solvers for the four systems.
//!
//! * 1-D reaction–diffusion (diffusion–reaction and Nagumo): second-order
//!   IMEX backward differentiation (implicit diffusion on the 3-point
//!   Laplacian, extrapolated explicit reaction and source), zero Dirichlet
//!   boundaries, tridiagonal solves.
//! * Darcy: 5-point finite volumes with harmonic-mean face permeability,
//!   zero Dirichlet boundary, Jacobi-preconditioned conjugate gradients.
//! * Allen–Cahn: periodic 5-point Laplacian, implicit diffusion with
//!   explicit u − u³, conjugate gradients per step.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::grid::{FieldKind, FieldSample, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// internal steps per output interval
    pub substeps: usize,
    /// relative residual tolerance of the iterative linear solves
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            substeps: 64,
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn with_substeps(substeps: usize) -> Self {
        SolverConfig {
            substeps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Thomas algorithm for a tridiagonal system with constant off-diagonals
/// `off` and diagonal `diag`; `rhs` is overwritten with the solution.
fn tridiag_constant(diag: f64, off: f64, rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    if n == 0 {
        return;
    }
    scratch[0] = off / diag;
    rhs[0] /= diag;
    for i in 1..n {
        let m = diag - off * scratch[i - 1];
        scratch[i] = off / m;
        rhs[i] = (rhs[i] - off * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Pointwise reaction term of a 1-D reaction–diffusion equation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reaction {
    /// k u²
    Quadratic { k: f64 },
    /// u (1 − u)(u − α)
    Nagumo { alpha: f64 },
}

impl Reaction {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Reaction::Quadratic { k } => k * u * u,
            Reaction::Nagumo { alpha } => u * (1.0 - u) * (u - alpha),
        }
    }

    /// Bound on |R'(u)| for |u| ≤ m.
    fn lipschitz(&self, m: f64) -> f64 {
        match *self {
            Reaction::Quadratic { k } => 2.0 * k.abs() * m,
            Reaction::Nagumo { alpha } => 3.0 * m * m + 2.0 * (1.0 + alpha).abs() * m + alpha.abs(),
        }
    }
}

/// u_t = D u_xx + R(u) + F(x, t) on [0, 1] × [0, t_end], u = 0 at x ∈ {0, 1}.
pub struct ReactionDiffusion1d<'a> {
    pub nx: usize,
    pub n_out: usize,
    pub t_end: f64,
    pub diffusivity: f64,
    pub reaction: Reaction,
    pub forcing: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    /// expected bound on |u|, used for the explicit-reaction step check
    pub amplitude: f64,
}

impl ReactionDiffusion1d<'_> {
    /// Returns u on the (x, t) grid, row-major [x][t].
    pub fn solve(&self, u0: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        let nx = self.nx;
        if nx < 3 || self.n_out < 2 {
            return Err(invalid("need at least 3 spatial nodes and 2 output times"));
        }
        if u0.len() != nx {
            return Err(shape(nx, u0.len()));
        }
        let steps = (self.n_out - 1) * cfg.substeps;
        let dt = self.t_end / steps as f64;
        let lip = self.reaction.lipschitz(self.amplitude);
        if dt * lip > 0.5 {
            return Err(Error::Config(format!(
                "explicit reaction step unstable: dt·|R'| = {:.3} > 0.5; raise substeps",
                dt * lip
            )));
        }
        let h = 1.0 / (nx - 1) as f64;
        let x: Vec<f64> = (0..nx).map(|i| i as f64 * h).collect();
        let m = nx - 2;
        let c = self.diffusivity / (h * h);
        let mut out = vec![0.0; nx * self.n_out];

        let mut prev: Vec<f64> = u0.to_vec();
        prev[0] = 0.0;
        prev[nx - 1] = 0.0;
        for i in 0..nx {
            out[i * self.n_out] = u0[i];
        }
        let react = |u: &[f64]| -> Vec<f64> { u.iter().map(|&v| self.reaction.eval(v)).collect() };
        let mut older: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut scratch = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for step in 1..=steps {
            let t = step as f64 * dt;
            let r_now = react(&prev);
            let next_interior = match &older {
                None => {
                    // IMEX Euler start: (1/dt − D L) u¹ = u⁰/dt + R⁰ + F¹
                    for j in 0..m {
                        let i = j + 1;
                        rhs[j] = prev[i] / dt + r_now[i] + (self.forcing)(x[i], t);
                    }
                    tridiag_constant(1.0 / dt + 2.0 * c, -c, &mut rhs, &mut scratch);
                    rhs.clone()
                }
                Some((u_old, r_old)) => {
                    // (3/2dt − D L) uⁿ⁺¹ = (4uⁿ − uⁿ⁻¹)/2dt + 2Rⁿ − Rⁿ⁻¹ + Fⁿ⁺¹
                    for j in 0..m {
                        let i = j + 1;
                        rhs[j] = (4.0 * prev[i] - u_old[i]) / (2.0 * dt) + 2.0 * r_now[i] - r_old[i]
                            + (self.forcing)(x[i], t);
                    }
                    tridiag_constant(1.5 / dt + 2.0 * c, -c, &mut rhs, &mut scratch);
                    rhs.clone()
                }
            };
            let mut next = vec![0.0; nx];
            next[1..nx - 1].copy_from_slice(&next_interior);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite state at step {step}")));
            }
            older = Some((prev, r_now));
            prev = next;
            if step % cfg.substeps == 0 {
                let k = step / cfg.substeps;
                for i in 0..nx {
                    out[i * self.n_out + k] = prev[i];
                }
            }
        }
        Ok(out)
    }
}

pub const DIFFUSION_REACTION_NODES: usize = 81;
pub const NAGUMO_NODES: usize = 65;
pub const DARCY_NODES: usize = 64;
pub const ALLEN_CAHN_NODES: usize = 64;
/// Allen–Cahn frames 0..=22.
pub const ALLEN_CAHN_FRAMES: usize = 23;

/// u_t = B u_xx + k u² + f(x) on the 81 × 81 (x, t) grid, u(x, 0) = 0.
pub fn solve_diffusion_reaction(f: &[f64], b: f64, k: f64, cfg: &SolverConfig) -> Result<FieldSample> {
    let n = f.len();
    let src = f.to_vec();
    let h = 1.0 / (n.max(2) - 1) as f64;
    let forcing = move |x: f64, _t: f64| {
        let i = ((x / h).round() as usize).min(n - 1);
        src[i]
    };
    let solver = ReactionDiffusion1d {
        nx: n,
        n_out: n,
        t_end: 1.0,
        diffusivity: b,
        reaction: Reaction::Quadratic { k },
        forcing: &forcing,
        amplitude: 10.0,
    };
    let u = solver.solve(&vec![0.0; n], cfg)?;
    FieldSample::new(Grid::space_time(n, n)?, 1, u, FieldKind::Solution, 0)
}

/// u_t = ε u_xx + u(1 − u)(u − α) on the 65 × 65 (x, t) grid.
pub fn solve_nagumo(u0: &[f64], eps: f64, alpha: f64, cfg: &SolverConfig) -> Result<FieldSample> {
    let n = u0.len();
    let zero = |_: f64, _: f64| 0.0;
    let solver = ReactionDiffusion1d {
        nx: n,
        n_out: n,
        t_end: 1.0,
        diffusivity: eps,
        reaction: Reaction::Nagumo { alpha },
        forcing: &zero,
        amplitude: 1.5,
    };
    let u = solver.solve(u0, cfg)?;
    FieldSample::new(Grid::space_time(n, n)?, 1, u, FieldKind::Solution, 0)
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator.
/// Returns the iteration count.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok(it);
        }
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = dot(&r, &r).sqrt() / bnorm;
    if res <= tol {
        Ok(max_iter)
    } else {
        Err(Error::Numerical(format!(
            "conjugate gradients stalled at relative residual {res:.3e} after {max_iter} iterations"
        )))
    }
}

/// Finite-volume operator −∇·(a∇·) on the interior nodes of an n × n
/// node grid of the unit square, zero Dirichlet boundary.
pub struct DarcyOperator {
    n: usize,
    /// east/north face coefficients (a_face / h²) per interior node
    east: Vec<f64>,
    north: Vec<f64>,
    west: Vec<f64>,
    south: Vec<f64>,
    diag: Vec<f64>,
}

impl DarcyOperator {
    pub fn new(a: &[f64], n: usize) -> Result<Self> {
        if n < 3 || a.len() != n * n {
            return Err(shape(n * n, a.len()));
        }
        if let Some(i) = a.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid(format!("permeability must be positive and finite, a[{i}] = {}", a[i])));
        }
        let h = 1.0 / (n - 1) as f64;
        let inv_h2 = 1.0 / (h * h);
        let harm = |p: f64, q: f64| 2.0 * p * q / (p + q);
        let m = n - 2;
        let mut east = vec![0.0; m * m];
        let mut west = vec![0.0; m * m];
        let mut north = vec![0.0; m * m];
        let mut south = vec![0.0; m * m];
        let mut diag = vec![0.0; m * m];
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let c = a[i * n + j];
                let k = (i - 1) * m + (j - 1);
                south[k] = harm(c, a[(i - 1) * n + j]) * inv_h2;
                north[k] = harm(c, a[(i + 1) * n + j]) * inv_h2;
                west[k] = harm(c, a[i * n + j - 1]) * inv_h2;
                east[k] = harm(c, a[i * n + j + 1]) * inv_h2;
                diag[k] = south[k] + north[k] + west[k] + east[k];
            }
        }
        Ok(DarcyOperator {
            n,
            east,
            north,
            west,
            south,
            diag,
        })
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let m = self.n - 2;
        for i in 0..m {
            for j in 0..m {
                let k = i * m + j;
                let mut v = self.diag[k] * x[k];
                if i > 0 {
                    v -= self.south[k] * x[k - m];
                }
                if i + 1 < m {
                    v -= self.north[k] * x[k + m];
                }
                if j > 0 {
                    v -= self.west[k] * x[k - 1];
                }
                if j + 1 < m {
                    v -= self.east[k] * x[k + 1];
                }
                y[k] = v;
            }
        }
    }

    /// Solve for u on all n × n nodes (boundary = 0) given the source on
    /// all nodes. Returns (u, relative residual).
    pub fn solve(&self, source: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, f64)> {
        cfg.validate()?;
        let n = self.n;
        if source.len() != n * n {
            return Err(shape(n * n, source.len()));
        }
        let m = n - 2;
        let b: Vec<f64> = (0..m * m).map(|k| source[(k / m + 1) * n + k % m + 1]).collect();
        let mut x = vec![0.0; m * m];
        conjugate_gradient(|p, q| self.apply(p, q), &self.diag, &b, &mut x, cfg.tolerance, cfg.max_iterations)?;
        let mut ax = vec![0.0; m * m];
        self.apply(&x, &mut ax);
        let rn = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let mut u = vec![0.0; n * n];
        for k in 0..m * m {
            u[(k / m + 1) * n + k % m + 1] = x[k];
        }
        Ok((u, rn / bn))
    }
}

/// −∇·(a∇u) = f on the unit square, u = 0 on the boundary.
pub fn solve_darcy(a: &[f64], f: f64, n: usize, cfg: &SolverConfig) -> Result<FieldSample> {
    let op = DarcyOperator::new(a, n)?;
    let (u, _) = op.solve(&vec![f; n * n], cfg)?;
    FieldSample::new(Grid::unit_square(n)?, 1, u, FieldKind::Solution, 0)
}

/// Periodic 5-point Laplacian on an n × n grid with spacing h.
fn periodic_laplacian(u: &[f64], n: usize, h: f64, out: &mut [f64]) {
    let c = 1.0 / (h * h);
    for i in 0..n {
        let (im, ip) = ((i + n - 1) % n, (i + 1) % n);
        for j in 0..n {
            let (jm, jp) = ((j + n - 1) % n, (j + 1) % n);
            out[i * n + j] = c * (u[im * n + j] + u[ip * n + j] + u[i * n + jm] + u[i * n + jp] - 4.0 * u[i * n + j]);
        }
    }
}

/// Allen–Cahn u_t = εΔu + u − u³ with period-1 boundary conditions. Returns
/// `n_frames` frames `frame_dt` apart, the first being u₀.
pub fn solve_allen_cahn(u0: &[f64], n: usize, eps: f64, frame_dt: f64, n_frames: usize, cfg: &SolverConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if u0.len() != n * n {
        return Err(shape(n * n, u0.len()));
    }
    if !(eps > 0.0 && frame_dt > 0.0) || n_frames == 0 {
        return Err(invalid("ε, frame spacing and frame count must be positive"));
    }
    let dt = frame_dt / cfg.substeps as f64;
    let amp = u0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    // explicit u − u³ keeps |u| ≤ max(1, |u₀|) when dt (3 amp² − 1) ≤ 1
    if dt * (3.0 * amp * amp - 1.0).max(1.0) > 0.5 {
        return Err(Error::Config(format!("Allen–Cahn step {dt} too large for explicit reaction")));
    }
    let h = 1.0 / n as f64;
    let diag = vec![1.0 + dt * eps * 4.0 / (h * h); n * n];
    let apply = |x: &[f64], y: &mut [f64]| {
        periodic_laplacian(x, n, h, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = xi - dt * eps * *yi;
        }
    };
    let mut frames = Vec::with_capacity(n_frames);
    let mut u = u0.to_vec();
    frames.push(u.clone());
    for _ in 1..n_frames {
        for _ in 0..cfg.substeps {
            let rhs: Vec<f64> = u.iter().map(|&v| v + dt * (v - v * v * v)).collect();
            let mut next = u.clone();
            conjugate_gradient(apply, &diag, &rhs, &mut next, cfg.tolerance, cfg.max_iterations)?;
            u = next;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Allen–Cahn state".into()));
        }
        frames.push(u.clone());
    }
    Ok(frames)
}

/// Discrete Ginzburg–Landau energy Σ h² [(ε/2)|∇u|² + (1 − u²)²/4] with
/// periodic forward differences.
pub fn ginzburg_landau_energy(u: &[f64], n: usize, eps: f64) -> f64 {
    let h = 1.0 / n as f64;
    let mut e = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = u[i * n + j];
            let dx = (u[((i + 1) % n) * n + j] - v) / h;
            let dy = (u[i * n + (j + 1) % n] - v) / h;
            e += 0.5 * eps * (dx * dx + dy * dy) + 0.25 * (1.0 - v * v).powi(2);
        }
    }
    e * h * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense() {
        // [4 -1 0; -1 4 -1; 0 -1 4] x = [3, 2, 3] → x = [1, 1, 1]
        let mut rhs = vec![3.0, 2.0, 3.0];
        let mut s = vec![0.0; 3];
        tridiag_constant(4.0, -1.0, &mut rhs, &mut s);
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_source_zero_solution() {
        let u = solve_diffusion_reaction(&vec![0.0; 81], 0.01, 0.01, &SolverConfig::default()).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dirichlet_boundary_held() {
        let f: Vec<f64> = (0..81).map(|i| 1.0 + (i as f64 * 0.1).sin()).collect();
        let u = solve_diffusion_reaction(&f, 0.01, 0.01, &SolverConfig::default()).unwrap();
        for t in 0..81 {
            assert_eq!(u.values[t], 0.0);
            assert_eq!(u.values[80 * 81 + t], 0.0);
        }
    }

    #[test]
    fn unstable_step_is_config_error() {
        let zero = |_: f64, _: f64| 0.0;
        let stiff = ReactionDiffusion1d {
            nx: 9,
            n_out: 5,
            t_end: 1.0,
            diffusivity: 1.0,
            reaction: Reaction::Quadratic { k: 100.0 },
            forcing: &zero,
            amplitude: 1.0,
        };
        let err = stiff.solve(&[0.0; 9], &SolverConfig::with_substeps(1)).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn darcy_rejects_nonpositive() {
        let mut a = vec![1.0; 64 * 64];
        a[100] = -1.0;
        assert!(solve_darcy(&a, 1.0, 64, &SolverConfig::default()).is_err());
    }

    #[test]
    fn allen_cahn_equilibria() {
        let cfg = SolverConfig::with_substeps(10);
        for c in [0.0, 1.0] {
            let fr = solve_allen_cahn(&vec![c; 16 * 16], 16, 1e-3, 0.05, 4, &cfg).unwrap();
            assert!(fr.iter().flatten().all(|&v| (v - c).abs() < 1e-12));
        }
    }
}
