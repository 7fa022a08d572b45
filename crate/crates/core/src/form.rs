//! First- and second-order reliability methods in standard-normal space.
//!
//! Failure is g(u) < 0. The most probable point is found by the HL-RF
//! iteration with central finite-difference gradients; SORM applies
//! Breitung's asymptotic correction with principal curvatures taken from a
//! finite-difference Hessian projected on the tangent plane at the MPP.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::reliability::{std_normal_cdf, std_normal_quantile};

/// Φ⁻¹(q) for a Unif(0, 1) input; ±∞ at the endpoints.
pub fn uniform_to_standard_normal(q: f64) -> f64 {
    std_normal_quantile(q)
}

pub fn standard_normal_to_uniform(z: f64) -> f64 {
    std_normal_cdf(z)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormOptions {
    pub fd_step: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FormOptions {
    fn default() -> Self {
        FormOptions {
            fd_step: 1e-4,
            tolerance: 1e-6,
            max_iterations: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MppResult {
    pub u_star: Vec<f64>,
    /// ‖u*‖, signed negative when the origin itself fails
    pub beta: f64,
    pub pf: f64,
    pub iterations: usize,
    pub converged: bool,
    pub g_star: f64,
    pub gradient: Vec<f64>,
    pub g_calls: usize,
}

struct Counted<'a> {
    g: &'a dyn Fn(&[f64]) -> Result<f64>,
    calls: usize,
}

impl Counted<'_> {
    fn eval(&mut self, u: &[f64]) -> Result<f64> {
        self.calls += 1;
        let v = (self.g)(u)?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("limit state returned {v} at {u:?}")));
        }
        Ok(v)
    }

    fn gradient(&mut self, u: &[f64], h: f64) -> Result<Vec<f64>> {
        let mut x = u.to_vec();
        let mut grad = vec![0.0; u.len()];
        for i in 0..u.len() {
            x[i] = u[i] + h;
            let p = self.eval(&x)?;
            x[i] = u[i] - h;
            let m = self.eval(&x)?;
            x[i] = u[i];
            grad[i] = (p - m) / (2.0 * h);
        }
        Ok(grad)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// HL-RF search for the most probable point starting at `u0`.
/// Non-convergence is reported in the result, not as an error.
pub fn form_hlrf(g: &dyn Fn(&[f64]) -> Result<f64>, u0: &[f64], opts: &FormOptions) -> Result<MppResult> {
    if u0.is_empty() {
        return Err(invalid("FORM needs at least one random variable"));
    }
    if !(opts.fd_step > 0.0 && opts.tolerance > 0.0) {
        return Err(invalid("FD step and tolerance must be positive"));
    }
    let mut gc = Counted { g, calls: 0 };
    let mut u = u0.to_vec();
    let mut converged = false;
    let mut iterations = 0;
    let (mut gu, mut grad);
    loop {
        gu = gc.eval(&u)?;
        grad = gc.gradient(&u, opts.fd_step)?;
        if iterations == opts.max_iterations {
            break;
        }
        let gn2 = dot(&grad, &grad);
        if gn2 == 0.0 {
            return Err(Error::Numerical("limit-state gradient vanished during HL-RF".into()));
        }
        let s = (dot(&grad, &u) - gu) / gn2;
        let next: Vec<f64> = grad.iter().map(|d| s * d).collect();
        let step: f64 = norm(&next.iter().zip(&u).map(|(a, b)| a - b).collect::<Vec<_>>());
        u = next;
        iterations += 1;
        if step < opts.tolerance {
            converged = true;
            gu = gc.eval(&u)?;
            grad = gc.gradient(&u, opts.fd_step)?;
            break;
        }
    }
    if !converged {
        log::warn!("HL-RF did not converge in {} iterations", opts.max_iterations);
    }
    // β = −∇g·u*/‖∇g‖, which equals ±‖u*‖ at a converged MPP
    let beta = -dot(&grad, &u) / norm(&grad);
    Ok(MppResult {
        pf: std_normal_cdf(-beta),
        beta,
        u_star: u,
        iterations,
        converged,
        g_star: gu,
        gradient: grad,
        g_calls: gc.calls,
    })
}

/// Principal curvatures of the limit-state surface at the MPP.
pub fn principal_curvatures(g: &dyn Fn(&[f64]) -> Result<f64>, mpp: &MppResult, h: f64) -> Result<Vec<f64>> {
    let n = mpp.u_star.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let mut gc = Counted { g, calls: 0 };
    let u = &mpp.u_star;
    let mut hess = DMatrix::<f64>::zeros(n, n);
    let g0 = gc.eval(u)?;
    let mut x = u.to_vec();
    for i in 0..n {
        x[i] = u[i] + h;
        let p = gc.eval(&x)?;
        x[i] = u[i] - h;
        let m = gc.eval(&x)?;
        x[i] = u[i];
        hess[(i, i)] = (p - 2.0 * g0 + m) / (h * h);
        for j in 0..i {
            let mut e = |si: f64, sj: f64| -> Result<f64> {
                x[i] = u[i] + si * h;
                x[j] = u[j] + sj * h;
                let v = gc.eval(&x);
                x[i] = u[i];
                x[j] = u[j];
                v
            };
            let v = (e(1.0, 1.0)? - e(1.0, -1.0)? - e(-1.0, 1.0)? + e(-1.0, -1.0)?) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let gn = norm(&mpp.gradient);
    if gn == 0.0 {
        return Err(Error::Numerical("zero gradient at the MPP".into()));
    }
    // unit normal pointing into the failure domain
    let alpha: Vec<f64> = mpp.gradient.iter().map(|d| -d / gn).collect();
    let basis = tangent_basis(&alpha);
    let t = DMatrix::from_fn(n, n - 1, |r, c| basis[c][r]);
    let k = t.transpose() * hess * &t / gn;
    let eig = SymmetricEigen::new(k);
    let mut out: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    out.sort_by(|a, b| a.total_cmp(b));
    Ok(out)
}

/// Orthonormal basis of the complement of unit vector `alpha`.
fn tangent_basis(alpha: &[f64]) -> Vec<Vec<f64>> {
    let n = alpha.len();
    let skip = (0..n).max_by(|&a, &b| alpha[a].abs().total_cmp(&alpha[b].abs())).unwrap();
    let mut basis: Vec<Vec<f64>> = vec![alpha.to_vec()];
    for i in (0..n).filter(|&i| i != skip) {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        basis.push(v);
    }
    basis.remove(0);
    basis
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SormResult {
    pub beta: f64,
    pub curvatures: Vec<f64>,
    /// None when some βκᵢ ≤ −1 and the correction is undefined
    pub pf: Option<f64>,
    pub pf_form: f64,
}

/// Breitung: P_f = Φ(−β) ∏ (1 + βκᵢ)^(−1/2).
pub fn sorm_breitung(beta: f64, curvatures: &[f64]) -> SormResult {
    let pf_form = std_normal_cdf(-beta);
    let mut factor = 1.0;
    let mut defined = true;
    for &k in curvatures {
        let s = 1.0 + beta * k;
        if s <= 0.0 {
            defined = false;
            break;
        }
        factor /= s.sqrt();
    }
    if !defined {
        log::warn!("Breitung correction undefined: β·κ ≤ −1 for some curvature");
    }
    SormResult {
        beta,
        curvatures: curvatures.to_vec(),
        pf: defined.then_some(pf_form * factor),
        pf_form,
    }
}

/// MPP search followed by the Breitung correction.
pub fn sorm(g: &dyn Fn(&[f64]) -> Result<f64>, u0: &[f64], opts: &FormOptions) -> Result<(MppResult, SormResult)> {
    let mpp = form_hlrf(g, u0, opts)?;
    if !mpp.converged {
        return Err(Error::Numerical("SORM needs a converged MPP".into()));
    }
    let k = principal_curvatures(g, &mpp, opts.fd_step.max(1e-3))?;
    let s = sorm_breitung(mpp.beta, &k);
    Ok((mpp, s))
}
