//! Stochastic-projection derivative estimates on structured grids.
//!
//! At a node x̄ with neighbours xᵢ inside radius r_n:
//!
//! ```text
//! G(x̄) = [Σ (u(xᵢ) − u(x̄)) Δxᵢᵀ] · [Σ Δxᵢ Δxᵢᵀ]⁻¹,   Δxᵢ = xᵢ − x̄
//! ```
//!
//! For a fixed grid the estimate is linear in the field, so each axis
//! derivative is precomputed as a sparse matrix. Second derivatives are the
//! composition of two first-derivative passes; the backward pass of any of
//! these is the transpose.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, shape, Error, Result};
use crate::grid::Grid;
use crate::sparse::CsrMatrix;

const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborhoodSpec {
    /// Physical radius r_n.
    pub radius: f64,
    /// Minimum neighbour count N_b.
    pub min_neighbors: usize,
}

impl NeighborhoodSpec {
    /// Radius = `factor` × the largest grid spacing; N_b = ndim + 1.
    pub fn scaled(grid: &Grid, factor: f64) -> Self {
        let h = grid.spacing().iter().cloned().fold(0.0, f64::max);
        NeighborhoodSpec {
            radius: factor * h,
            min_neighbors: grid.ndim() + 1,
        }
    }

    /// The default r_n = 2.5h.
    pub fn default_for(grid: &Grid) -> Self {
        Self::scaled(grid, 2.5)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let h = grid.spacing().iter().cloned().fold(0.0, f64::max);
        if !(self.radius.is_finite() && self.radius >= 1.5 * h * (1.0 - 1e-12)) {
            return Err(invalid(format!(
                "neighbourhood radius {} is below 1.5 × max spacing {h}",
                self.radius
            )));
        }
        if self.min_neighbors < grid.ndim() + 1 {
            return Err(invalid(format!(
                "min_neighbors {} < ndim + 1 = {}",
                self.min_neighbors,
                grid.ndim() + 1
            )));
        }
        Ok(())
    }
}

/// Integer offsets (excluding the origin) whose physical length is ≤ radius.
fn stencil_offsets(spacing: &[f64], radius: f64) -> Vec<Vec<isize>> {
    let reach: Vec<isize> = spacing.iter().map(|h| (radius / h + 1e-9).floor() as isize).collect();
    let r2 = radius * radius * (1.0 + 1e-12);
    let mut out = Vec::new();
    let mut cur = reach.iter().map(|r| -r).collect::<Vec<_>>();
    loop {
        let d2: f64 = cur.iter().zip(spacing).map(|(&o, h)| (o as f64 * h).powi(2)).sum();
        if d2 > 0.0 && d2 <= r2 {
            out.push(cur.clone());
        }
        let mut a = cur.len();
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            if cur[a] < reach[a] {
                cur[a] += 1;
                break;
            }
            cur[a] = -reach[a];
        }
    }
}

/// Neighbour flat indices and displacements for one node.
fn neighbourhood(
    grid: &Grid,
    periodic: &[bool],
    offsets: &[Vec<isize>],
    node: usize,
) -> (Vec<usize>, Vec<Vec<f64>>) {
    let idx = grid.multi_index(node);
    let dims = grid.dims();
    let h = grid.spacing();
    let mut nbrs = Vec::with_capacity(offsets.len());
    let mut disp = Vec::with_capacity(offsets.len());
    'outer: for off in offsets {
        let mut target = Vec::with_capacity(idx.len());
        for a in 0..idx.len() {
            let j = idx[a] as isize + off[a];
            let n = dims[a] as isize;
            if periodic[a] {
                target.push(j.rem_euclid(n) as usize);
            } else if j < 0 || j >= n {
                continue 'outer;
            } else {
                target.push(j as usize);
            }
        }
        nbrs.push(grid.flat_index(&target));
        disp.push(off.iter().zip(h).map(|(&o, h)| o as f64 * h).collect());
    }
    (nbrs, disp)
}

/// Per-neighbour gradient weights `M⁻¹ Δxᵢ`, one vector per neighbour.
fn projection_weights(node: usize, disp: &[Vec<f64>], min_neighbors: usize) -> Result<Vec<Vec<f64>>> {
    let d = disp.first().map_or(0, |v| v.len());
    if disp.len() < min_neighbors {
        return Err(Error::DegenerateGeometry {
            node,
            reason: format!("{} neighbours found, {min_neighbors} required", disp.len()),
        });
    }
    let mut m = DMatrix::<f64>::zeros(d, d);
    for dx in disp {
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] += dx[a] * dx[b];
            }
        }
    }
    let eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::DegenerateGeometry {
            node,
            reason: format!("moment matrix condition number {:.3e}", max / min),
        });
    }
    let v = &eig.eigenvectors;
    let inv = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * v.transpose();
    Ok(disp
        .iter()
        .map(|dx| (0..d).map(|a| (0..d).map(|b| inv[(a, b)] * dx[b]).sum()).collect())
        .collect())
}

fn check_field(field: &[f64], grid: &Grid) -> Result<()> {
    if field.len() != grid.len() {
        return Err(shape(grid.dims(), field.len()));
    }
    Ok(())
}

/// Precomputed first-derivative operators for every axis of a grid.
#[derive(Clone, Debug)]
pub struct SpOperator {
    grid: Grid,
    spec: NeighborhoodSpec,
    periodic: Vec<bool>,
    first: Vec<CsrMatrix>,
}

impl SpOperator {
    pub fn new(grid: &Grid, spec: NeighborhoodSpec) -> Result<Self> {
        Self::with_periodic(grid, spec, &vec![false; grid.ndim()])
    }

    /// `periodic[a]` wraps axis `a`; its nodes are taken as `n` distinct
    /// points with period `n·h`.
    pub fn with_periodic(grid: &Grid, spec: NeighborhoodSpec, periodic: &[bool]) -> Result<Self> {
        spec.validate(grid)?;
        if periodic.len() != grid.ndim() {
            return Err(shape(grid.ndim(), periodic.len()));
        }
        let offsets = stencil_offsets(grid.spacing(), spec.radius);
        for (a, &p) in periodic.iter().enumerate() {
            let reach = offsets.iter().map(|o| o[a].unsigned_abs()).max().unwrap_or(0);
            if p && grid.dims()[a] <= 2 * reach {
                return Err(invalid(format!(
                    "periodic axis {a} has {} nodes, too few for stencil reach {reach}",
                    grid.dims()[a]
                )));
            }
        }
        let d = grid.ndim();
        let mut rows: Vec<Vec<Vec<(usize, f64)>>> = vec![Vec::with_capacity(grid.len()); d];
        for node in 0..grid.len() {
            let (nbrs, disp) = neighbourhood(grid, periodic, &offsets, node);
            let w = projection_weights(node, &disp, spec.min_neighbors)?;
            for (a, axis_rows) in rows.iter_mut().enumerate() {
                let mut row = Vec::with_capacity(nbrs.len() + 1);
                let mut centre = 0.0;
                for (&j, wj) in nbrs.iter().zip(&w) {
                    row.push((j, wj[a]));
                    centre -= wj[a];
                }
                row.push((node, centre));
                axis_rows.push(row);
            }
        }
        let first = rows.into_iter().map(|r| CsrMatrix::from_rows(grid.len(), r)).collect();
        Ok(SpOperator {
            grid: grid.clone(),
            spec,
            periodic: periodic.to_vec(),
            first,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spec(&self) -> NeighborhoodSpec {
        self.spec
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    /// Sparse matrix of ∂/∂x_axis.
    pub fn derivative(&self, axis: usize) -> &CsrMatrix {
        &self.first[axis]
    }

    /// Sparse matrix of ∂²/∂x_axis² (composition of two first derivatives).
    pub fn second_derivative_matrix(&self, axis: usize) -> CsrMatrix {
        self.first[axis].matmul(&self.first[axis])
    }

    /// Sum of second derivatives over `axes`.
    pub fn laplacian_matrix(&self, axes: &[usize]) -> CsrMatrix {
        let mut it = axes.iter();
        let first = it.next().expect("at least one axis");
        let mut acc = self.second_derivative_matrix(*first);
        for &a in it {
            acc = acc.add_scaled(&self.second_derivative_matrix(a), 1.0);
        }
        acc
    }

    pub fn apply_derivative(&self, field: &[f64], axis: usize) -> Result<Vec<f64>> {
        check_field(field, &self.grid)?;
        Ok(self.first[axis].apply(field))
    }

    /// Per-axis derivative fields.
    pub fn gradient_field(&self, field: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_field(field, &self.grid)?;
        Ok(self.first.iter().map(|d| d.apply(field)).collect())
    }

    pub fn second_derivative(&self, field: &[f64], axis: usize) -> Result<Vec<f64>> {
        check_field(field, &self.grid)?;
        Ok(self.first[axis].apply(&self.first[axis].apply(field)))
    }
}

/// Gradient at a single node.
pub fn sp_gradient(field: &[f64], grid: &Grid, node: usize, spec: NeighborhoodSpec) -> Result<Vec<f64>> {
    check_field(field, grid)?;
    spec.validate(grid)?;
    if node >= grid.len() {
        return Err(invalid(format!("node {node} out of range for {} nodes", grid.len())));
    }
    let offsets = stencil_offsets(grid.spacing(), spec.radius);
    let (nbrs, disp) = neighbourhood(grid, &vec![false; grid.ndim()], &offsets, node);
    let w = projection_weights(node, &disp, spec.min_neighbors)?;
    let u0 = field[node];
    let mut g = vec![0.0; grid.ndim()];
    for (&j, wj) in nbrs.iter().zip(&w) {
        for a in 0..g.len() {
            g[a] += (field[j] - u0) * wj[a];
        }
    }
    Ok(g)
}

pub fn sp_gradient_field(field: &[f64], grid: &Grid, spec: NeighborhoodSpec) -> Result<Vec<Vec<f64>>> {
    SpOperator::new(grid, spec)?.gradient_field(field)
}

pub fn sp_second_derivative(field: &[f64], grid: &Grid, axis: usize, spec: NeighborhoodSpec) -> Result<Vec<f64>> {
    if axis >= grid.ndim() {
        return Err(invalid(format!("axis {axis} out of range")));
    }
    SpOperator::new(grid, spec)?.second_derivative(field, axis)
}

/// Finite-difference derivative along `axis`: central in the interior,
/// second-order one-sided at the two ends.
pub fn fd_gradient_oracle(field: &[f64], grid: &Grid, axis: usize) -> Result<Vec<f64>> {
    check_field(field, grid)?;
    if axis >= grid.ndim() {
        return Err(invalid(format!("axis {axis} out of range")));
    }
    let n = grid.dims()[axis];
    if n < 3 {
        return Err(invalid(format!("axis {axis} has {n} nodes, need at least 3")));
    }
    let h = grid.spacing()[axis];
    let stride = grid.strides()[axis];
    let mut out = vec![0.0; field.len()];
    for (node, o) in out.iter_mut().enumerate() {
        let i = (node / stride) % n;
        let at = |k: isize| field[(node as isize + k * stride as isize) as usize];
        *o = if i == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
        } else {
            (at(1) - at(-1)) / (2.0 * h)
        };
    }
    Ok(out)
}

/// Finite-difference derivative along `axis` as a sparse matrix: central
/// differences, with either wrap-around or second-order one-sided ends.
pub fn fd_matrix(grid: &Grid, axis: usize, periodic: bool) -> Result<CsrMatrix> {
    if axis >= grid.ndim() {
        return Err(invalid(format!("axis {axis} out of range")));
    }
    let n = grid.dims()[axis];
    if n < 3 {
        return Err(invalid(format!("axis {axis} has {n} nodes, need at least 3")));
    }
    let h = grid.spacing()[axis];
    let stride = grid.strides()[axis];
    let c = 1.0 / (2.0 * h);
    let rows = (0..grid.len())
        .map(|node| {
            let i = (node / stride) % n;
            let base = node - i * stride;
            let at = |k: usize| base + k * stride;
            if periodic {
                vec![(at((i + 1) % n), c), (at((i + n - 1) % n), -c)]
            } else if i == 0 {
                vec![(at(0), -3.0 * c), (at(1), 4.0 * c), (at(2), -c)]
            } else if i == n - 1 {
                vec![(at(n - 1), 3.0 * c), (at(n - 2), -4.0 * c), (at(n - 3), c)]
            } else {
                vec![(at(i + 1), c), (at(i - 1), -c)]
            }
        })
        .collect();
    Ok(CsrMatrix::from_rows(grid.len(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        grid.node_coords().iter().map(|x| f(x)).collect()
    }

    #[test]
    fn offsets_within_radius() {
        let o = stencil_offsets(&[0.1, 0.1], 0.25);
        // |o| ≤ 2.5 on the integer lattice: 21 points minus the origin
        assert_eq!(o.len(), 20);
    }

    #[test]
    fn affine_exact_everywhere() {
        let g = Grid::unit_square(17).unwrap();
        let u = sample(&g, |x| 2.0 * x[0] + 3.0 * x[1] - 1.0);
        let grad = sp_gradient_field(&u, &g, NeighborhoodSpec::default_for(&g)).unwrap();
        assert!(grad[0].iter().all(|v| (v - 2.0).abs() < 1e-10));
        assert!(grad[1].iter().all(|v| (v - 3.0).abs() < 1e-10));
    }

    #[test]
    fn quadratic_exact_at_symmetric_node() {
        let g = Grid::unit_1d(21).unwrap();
        let u = sample(&g, |x| x[0] * x[0]);
        let d = sp_gradient(&u, &g, 10, NeighborhoodSpec::default_for(&g)).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn collinear_neighbourhood_is_degenerate() {
        // a 2-D grid with one very coarse axis: radius reaches no node off the line
        let g = Grid::new(&[[0.0, 1.0], [0.0, 1.0]], &[2, 101], &[crate::grid::AxisRole::SpaceX, crate::grid::AxisRole::SpaceY]).unwrap();
        let spec = NeighborhoodSpec {
            radius: 0.025,
            min_neighbors: 3,
        };
        // spec.validate rejects it first (radius < 1.5 × max spacing), so bypass via weights
        let offsets = stencil_offsets(g.spacing(), spec.radius);
        let (_, disp) = neighbourhood(&g, &[false, false], &offsets, 50);
        let err = projection_weights(50, &disp, 3).unwrap_err();
        assert_eq!(err.kind(), "degenerate_geometry");
    }

    #[test]
    fn periodic_wrap_has_no_seam() {
        let g = Grid::periodic_unit_square(32).unwrap();
        let op = SpOperator::with_periodic(&g, NeighborhoodSpec::default_for(&g), &[true, true]).unwrap();
        let k = 2.0 * std::f64::consts::PI;
        let u = sample(&g, |x| (k * x[0]).sin());
        let d = op.apply_derivative(&u, 0).unwrap();
        let exact = sample(&g, |x| k * (k * x[0]).cos());
        // same relative error at every node, seam included
        let ratios: Vec<f64> = d
            .iter()
            .zip(&exact)
            .filter(|(_, e)| e.abs() > 1.0)
            .map(|(a, b)| a / b)
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, f64::MIN), |(l, h), &r| (l.min(r), h.max(r)));
        assert!(hi - lo < 1e-10, "ratio spread {}", hi - lo);
        assert!((lo - 1.0).abs() < 0.03);
    }

    #[test]
    fn fd_oracle_exact_for_linear_and_quadratic() {
        let g = Grid::unit_1d(11).unwrap();
        let u = sample(&g, |x| x[0]);
        assert!(fd_gradient_oracle(&u, &g, 0).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let u = sample(&g, |x| x[0] * x[0]);
        let d = fd_gradient_oracle(&u, &g, 0).unwrap();
        for (i, x) in g.coords(0).iter().enumerate() {
            assert!((d[i] - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn fd_matrix_matches_oracle() {
        let g = Grid::space_time(9, 7).unwrap();
        let u = sample(&g, |x| (3.0 * x[0]).sin() * x[1] * x[1]);
        for axis in 0..2 {
            let m = fd_matrix(&g, axis, false).unwrap().apply(&u);
            let o = fd_gradient_oracle(&u, &g, axis).unwrap();
            assert!(m.iter().zip(&o).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn small_radius_rejected() {
        let g = Grid::unit_square(9).unwrap();
        assert!(SpOperator::new(&g, NeighborhoodSpec::scaled(&g, 1.0)).is_err());
    }
}
