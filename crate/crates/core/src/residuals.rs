//! PDE residuals, boundary/initial penalties and the physics loss for the
//! four benchmark systems, with the loss gradient w.r.t. the predicted field.
//!
//! Layouts:
//! * diffusion–reaction, Nagumo: one channel on the (x, t) grid, axis 0 = x.
//!   The auxiliary input is f(x) resp. u₀(x), one value per x node.
//! * Darcy: one channel on the (x, y) grid; auxiliary input a(x, y).
//! * Allen–Cahn: `frames` channels on a periodic (x, y) grid holding the
//!   predicted frames; auxiliary input is the last known frame. Residuals
//!   are taken on every transition from the last known frame through the
//!   final prediction.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::gradients::{fd_matrix, NeighborhoodSpec, SpOperator};
use crate::grid::Grid;
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeSystem {
    DiffusionReaction,
    Nagumo,
    Darcy,
    AllenCahn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    #[default]
    StochasticProjection,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSpec {
    pub system: PdeSystem,
    /// diffusion–reaction diffusivity B
    pub diffusivity: f64,
    /// diffusion–reaction reaction rate k
    pub reaction: f64,
    /// Nagumo ε
    pub nagumo_eps: f64,
    /// Nagumo α
    pub nagumo_alpha: f64,
    /// Darcy source f
    pub darcy_source: f64,
    /// Allen–Cahn ε
    pub allen_cahn_eps: f64,
    /// physical time between indexed Allen–Cahn frames
    pub frame_dt: f64,
    /// boundary penalty weight α₁
    pub alpha_bc: f64,
    /// initial-condition penalty weight α₂
    pub alpha_ic: f64,
    /// r_n in units of the largest grid spacing
    pub radius_factor: f64,
    pub scheme: DerivativeScheme,
}

impl Default for PhysicsSpec {
    fn default() -> Self {
        PhysicsSpec {
            system: PdeSystem::DiffusionReaction,
            diffusivity: 0.01,
            reaction: 0.01,
            nagumo_eps: 1.0,
            nagumo_alpha: -0.5,
            darcy_source: 1.0,
            allen_cahn_eps: 1e-3,
            frame_dt: 0.05,
            alpha_bc: 1.0,
            alpha_ic: 1.0,
            radius_factor: 2.5,
            scheme: DerivativeScheme::StochasticProjection,
        }
    }
}

impl PhysicsSpec {
    pub fn for_system(system: PdeSystem) -> Self {
        PhysicsSpec {
            system,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive, got {v}")))
            }
        };
        match self.system {
            PdeSystem::DiffusionReaction => pos("diffusivity", self.diffusivity)?,
            PdeSystem::Nagumo => pos("nagumo_eps", self.nagumo_eps)?,
            PdeSystem::Darcy => {}
            PdeSystem::AllenCahn => {
                pos("allen_cahn_eps", self.allen_cahn_eps)?;
                pos("frame_dt", self.frame_dt)?;
            }
        }
        if !(self.alpha_bc >= 0.0 && self.alpha_ic >= 0.0) {
            return Err(invalid("loss weights must be non-negative"));
        }
        pos("radius_factor", self.radius_factor)
    }
}

/// Loss decomposition for one sample or a batch mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub residual: f64,
    pub boundary: f64,
    pub initial: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.residual.is_finite() && self.boundary.is_finite() && self.initial.is_finite() && self.total.is_finite()
    }

    pub(crate) fn accumulate(&mut self, other: &LossTerms, w: f64) {
        self.residual += w * other.residual;
        self.boundary += w * other.boundary;
        self.initial += w * other.initial;
        self.total += w * other.total;
    }
}

/// Residual and loss evaluator for one system on one grid, with the
/// derivative operators built once.
#[derive(Clone, Debug)]
pub struct Physics {
    spec: PhysicsSpec,
    grid: Grid,
    frames: usize,
    first: Vec<CsrMatrix>,
    /// ∂²/∂x² (1-D systems) or the Laplacian (2-D systems)
    second: CsrMatrix,
    boundary_nodes: Vec<usize>,
    initial_nodes: Vec<usize>,
}

impl Physics {
    /// `frames` is the number of predicted Allen–Cahn frames (ignored
    /// otherwise).
    pub fn new(spec: &PhysicsSpec, grid: &Grid, frames: usize) -> Result<Self> {
        spec.validate()?;
        if grid.ndim() != 2 {
            return Err(invalid("all systems use a 2-D (space–time or space–space) grid"));
        }
        let periodic = spec.system == PdeSystem::AllenCahn;
        if periodic && frames == 0 {
            return Err(invalid("Allen–Cahn needs at least one predicted frame"));
        }
        let first: Vec<CsrMatrix> = match spec.scheme {
            DerivativeScheme::StochasticProjection => {
                let ns = NeighborhoodSpec::scaled(grid, spec.radius_factor);
                let op = SpOperator::with_periodic(grid, ns, &[periodic, periodic])?;
                (0..2).map(|a| op.derivative(a).clone()).collect()
            }
            DerivativeScheme::FiniteDifference => (0..2)
                .map(|a| fd_matrix(grid, a, periodic))
                .collect::<Result<_>>()?,
        };
        let second = match spec.system {
            PdeSystem::DiffusionReaction | PdeSystem::Nagumo => first[0].matmul(&first[0]),
            PdeSystem::Darcy | PdeSystem::AllenCahn => {
                first[0].matmul(&first[0]).add_scaled(&first[1].matmul(&first[1]), 1.0)
            }
        };
        let (boundary_nodes, initial_nodes) = match spec.system {
            PdeSystem::DiffusionReaction | PdeSystem::Nagumo => {
                let nt = grid.dims()[1];
                let b = (0..grid.len()).filter(|&i| grid.is_boundary(i, &[0])).collect();
                let ic = (0..grid.dims()[0]).map(|ix| ix * nt).collect();
                (b, ic)
            }
            PdeSystem::Darcy => ((0..grid.len()).filter(|&i| grid.is_boundary(i, &[0, 1])).collect(), vec![]),
            PdeSystem::AllenCahn => (vec![], vec![]),
        };
        Ok(Physics {
            spec: spec.clone(),
            grid: grid.clone(),
            frames: if periodic { frames } else { 1 },
            first,
            second,
            boundary_nodes,
            initial_nodes,
        })
    }

    pub fn spec(&self) -> &PhysicsSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of output values per sample.
    pub fn output_len(&self) -> usize {
        self.frames * self.grid.len()
    }

    /// Number of auxiliary input values per sample.
    pub fn aux_len(&self) -> usize {
        match self.spec.system {
            PdeSystem::DiffusionReaction | PdeSystem::Nagumo => self.grid.dims()[0],
            PdeSystem::Darcy | PdeSystem::AllenCahn => self.grid.len(),
        }
    }

    fn check(&self, u: &[f64], aux: &[f64]) -> Result<()> {
        if u.len() != self.output_len() {
            return Err(shape(self.output_len(), u.len()));
        }
        if aux.len() != self.aux_len() {
            return Err(shape(self.aux_len(), aux.len()));
        }
        if self.spec.system == PdeSystem::Darcy {
            if let Some(i) = aux.iter().position(|&a| !(a > 0.0)) {
                return Err(invalid(format!("permeability must be positive, a[{i}] = {}", aux[i])));
            }
        }
        Ok(())
    }

    /// Allen–Cahn right-hand side εΔu + u − u³.
    fn ac_rhs(&self, u: &[f64]) -> Vec<f64> {
        let lap = self.second.apply(u);
        u.iter()
            .zip(lap)
            .map(|(&v, l)| self.spec.allen_cahn_eps * l + v - v * v * v)
            .collect()
    }

    /// Pointwise PDE residual (length `output_len`).
    pub fn residual(&self, u: &[f64], aux: &[f64]) -> Result<Vec<f64>> {
        self.check(u, aux)?;
        let s = &self.spec;
        let nt = self.grid.dims()[1];
        Ok(match s.system {
            PdeSystem::DiffusionReaction => {
                let ut = self.first[1].apply(u);
                let uxx = self.second.apply(u);
                (0..u.len())
                    .map(|i| ut[i] - s.diffusivity * uxx[i] - s.reaction * u[i] * u[i] - aux[i / nt])
                    .collect()
            }
            PdeSystem::Nagumo => {
                let ut = self.first[1].apply(u);
                let uxx = self.second.apply(u);
                (0..u.len())
                    .map(|i| {
                        let v = u[i];
                        ut[i] - s.nagumo_eps * uxx[i] - v * (1.0 - v) * (v - s.nagumo_alpha)
                    })
                    .collect()
            }
            PdeSystem::Darcy => {
                let lap = self.second.apply(u);
                let (ux, uy) = (self.first[0].apply(u), self.first[1].apply(u));
                let (ax, ay) = (self.first[0].apply(aux), self.first[1].apply(aux));
                (0..u.len())
                    .map(|i| -aux[i] * lap[i] - ax[i] * ux[i] - ay[i] * uy[i] - s.darcy_source)
                    .collect()
            }
            PdeSystem::AllenCahn => {
                let n = self.grid.len();
                let mut out = Vec::with_capacity(u.len());
                let mut prev = aux.to_vec();
                let mut prev_rhs = self.ac_rhs(&prev);
                for f in 0..self.frames {
                    let cur = &u[f * n..(f + 1) * n];
                    let cur_rhs = self.ac_rhs(cur);
                    for i in 0..n {
                        out.push((cur[i] - prev[i]) / s.frame_dt - 0.5 * (prev_rhs[i] + cur_rhs[i]));
                    }
                    prev = cur.to_vec();
                    prev_rhs = cur_rhs;
                }
                out
            }
        })
    }

    /// Loss terms and ∂loss/∂u for one sample.
    pub fn loss_and_grad(&self, u: &[f64], aux: &[f64]) -> Result<(LossTerms, Vec<f64>)> {
        let r = self.residual(u, aux)?;
        let s = &self.spec;
        let n_r = r.len() as f64;
        let residual = r.iter().map(|v| v * v).sum::<f64>() / n_r;
        // g = ∂(mean r²)/∂r
        let g: Vec<f64> = r.iter().map(|v| 2.0 * v / n_r).collect();
        let mut grad = self.residual_adjoint(u, aux, &g);

        let mut boundary = 0.0;
        if !self.boundary_nodes.is_empty() {
            let nb = self.boundary_nodes.len() as f64;
            for &i in &self.boundary_nodes {
                boundary += u[i] * u[i] / nb;
                grad[i] += s.alpha_bc * 2.0 * u[i] / nb;
            }
        }
        let mut initial = 0.0;
        if !self.initial_nodes.is_empty() {
            let ni = self.initial_nodes.len() as f64;
            for (ix, &i) in self.initial_nodes.iter().enumerate() {
                let target = if s.system == PdeSystem::Nagumo { aux[ix] } else { 0.0 };
                let d = u[i] - target;
                initial += d * d / ni;
                grad[i] += s.alpha_ic * 2.0 * d / ni;
            }
        }
        let terms = LossTerms {
            residual,
            boundary,
            initial,
            total: residual + s.alpha_bc * boundary + s.alpha_ic * initial,
        };
        Ok((terms, grad))
    }

    pub fn loss(&self, u: &[f64], aux: &[f64]) -> Result<LossTerms> {
        Ok(self.loss_and_grad(u, aux)?.0)
    }

    /// `(∂r/∂u)ᵀ g`.
    fn residual_adjoint(&self, u: &[f64], aux: &[f64], g: &[f64]) -> Vec<f64> {
        let s = &self.spec;
        match s.system {
            PdeSystem::DiffusionReaction => {
                let mut out = self.first[1].apply_transpose(g);
                let scaled: Vec<f64> = g.iter().map(|v| -s.diffusivity * v).collect();
                self.second.apply_transpose_add(&scaled, &mut out);
                for i in 0..u.len() {
                    out[i] -= 2.0 * s.reaction * u[i] * g[i];
                }
                out
            }
            PdeSystem::Nagumo => {
                let mut out = self.first[1].apply_transpose(g);
                let scaled: Vec<f64> = g.iter().map(|v| -s.nagumo_eps * v).collect();
                self.second.apply_transpose_add(&scaled, &mut out);
                let a = s.nagumo_alpha;
                for i in 0..u.len() {
                    let v = u[i];
                    let dreact = -3.0 * v * v + 2.0 * (1.0 + a) * v - a;
                    out[i] -= dreact * g[i];
                }
                out
            }
            PdeSystem::Darcy => {
                let ag: Vec<f64> = aux.iter().zip(g).map(|(a, v)| -a * v).collect();
                let mut out = self.second.apply_transpose(&ag);
                for d in &self.first {
                    let da = d.apply(aux);
                    let w: Vec<f64> = da.iter().zip(g).map(|(a, v)| -a * v).collect();
                    d.apply_transpose_add(&w, &mut out);
                }
                out
            }
            PdeSystem::AllenCahn => {
                let n = self.grid.len();
                let eps = s.allen_cahn_eps;
                let mut out = vec![0.0; u.len()];
                for f in 0..self.frames {
                    let gf = &g[f * n..(f + 1) * n];
                    // r_f depends on frame f (and on frame f−1 when f > 0)
                    for (k, sign) in [(f as isize, 1.0), (f as isize - 1, -1.0)] {
                        if k < 0 {
                            continue;
                        }
                        let k = k as usize;
                        let uk = &u[k * n..(k + 1) * n];
                        // ∂r_f/∂u_k = sign/dt − ½ (εL + 1 − 3u²)
                        let mut lap_adj = vec![0.0; n];
                        let eg: Vec<f64> = gf.iter().map(|v| -0.5 * eps * v).collect();
                        self.second.apply_transpose_add(&eg, &mut lap_adj);
                        let dst = &mut out[k * n..(k + 1) * n];
                        for i in 0..n {
                            dst[i] += sign * gf[i] / s.frame_dt - 0.5 * (1.0 - 3.0 * uk[i] * uk[i]) * gf[i] + lap_adj[i];
                        }
                    }
                }
                out
            }
        }
    }

    /// Mean loss over a batch, with per-sample gradients.
    pub fn batch_loss_and_grad(&self, us: &[Vec<f64>], auxs: &[Vec<f64>]) -> Result<(LossTerms, Vec<Vec<f64>>)> {
        if us.len() != auxs.len() || us.is_empty() {
            return Err(shape(us.len(), auxs.len()));
        }
        let w = 1.0 / us.len() as f64;
        let mut mean = LossTerms::default();
        let mut grads = Vec::with_capacity(us.len());
        for (u, a) in us.iter().zip(auxs) {
            let (t, mut g) = self.loss_and_grad(u, a)?;
            mean.accumulate(&t, w);
            g.iter_mut().for_each(|v| *v *= w);
            grads.push(g);
        }
        Ok((mean, grads))
    }
}
