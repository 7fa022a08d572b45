//! Structured rectangular grids and sampled fields.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisRole {
    SpaceX,
    SpaceY,
    Time,
}

/// Node-centred tensor-product grid. Axis 0 is the slowest-varying index
/// of the row-major flat layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: Vec<usize>,
    bounds: Vec<[f64; 2]>,
    spacing: Vec<f64>,
    roles: Vec<AxisRole>,
}

impl Grid {
    pub fn new(bounds: &[[f64; 2]], dims: &[usize], roles: &[AxisRole]) -> Result<Self> {
        if bounds.len() != dims.len() || roles.len() != dims.len() {
            return Err(invalid(format!(
                "axis count mismatch: {} bounds, {} dims, {} roles",
                bounds.len(),
                dims.len(),
                roles.len()
            )));
        }
        if dims.is_empty() {
            return Err(invalid("grid needs at least one axis"));
        }
        let mut spacing = Vec::with_capacity(dims.len());
        for (axis, (&[lo, hi], &n)) in bounds.iter().zip(dims).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(invalid(format!("axis {axis}: non-finite bounds [{lo}, {hi}]")));
            }
            if n < 2 {
                return Err(invalid(format!("axis {axis}: need at least 2 nodes, got {n}")));
            }
            if lo >= hi {
                return Err(invalid(format!("axis {axis}: lo {lo} must be < hi {hi}")));
            }
            spacing.push((hi - lo) / (n - 1) as f64);
        }
        Ok(Grid {
            dims: dims.to_vec(),
            bounds: bounds.to_vec(),
            spacing,
            roles: roles.to_vec(),
        })
    }

    /// Unit interval with `n` nodes along a single spatial axis.
    pub fn unit_1d(n: usize) -> Result<Self> {
        Grid::new(&[[0.0, 1.0]], &[n], &[AxisRole::SpaceX])
    }

    /// Unit square, `n × n` nodes, axes (x, y).
    pub fn unit_square(n: usize) -> Result<Self> {
        Grid::new(&[[0.0, 1.0], [0.0, 1.0]], &[n, n], &[AxisRole::SpaceX, AxisRole::SpaceY])
    }

    /// Periodic unit square sampled without the duplicate endpoint:
    /// nodes at `i / n`.
    pub fn periodic_unit_square(n: usize) -> Result<Self> {
        let hi = (n - 1) as f64 / n as f64;
        Grid::new(&[[0.0, hi], [0.0, hi]], &[n, n], &[AxisRole::SpaceX, AxisRole::SpaceY])
    }

    /// Space–time grid on `[0,1] × [0,1]`, axis 0 = x, axis 1 = t.
    pub fn space_time(nx: usize, nt: usize) -> Result<Self> {
        Grid::new(&[[0.0, 1.0], [0.0, 1.0]], &[nx, nt], &[AxisRole::SpaceX, AxisRole::Time])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn roles(&self) -> &[AxisRole] {
        &self.roles
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis_of(&self, role: AxisRole) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }

    /// Node coordinates along one axis; endpoints are reproduced exactly.
    pub fn coords(&self, axis: usize) -> Vec<f64> {
        let n = self.dims[axis];
        let [lo, hi] = self.bounds[axis];
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for a in (0..self.dims.len().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.dims[a + 1];
        }
        s
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for a in (0..self.dims.len()).rev() {
            out[a] = flat % self.dims[a];
            flat /= self.dims[a];
        }
        out
    }

    /// Coordinates of every node, flat row-major order.
    pub fn node_coords(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.ndim()).map(|a| self.coords(a)).collect();
        (0..self.len())
            .map(|f| {
                self.multi_index(f)
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| axes[a][i])
                    .collect()
            })
            .collect()
    }

    /// True for nodes on the outer face of any axis with the given roles.
    pub fn is_boundary(&self, flat: usize, axes: &[usize]) -> bool {
        let idx = self.multi_index(flat);
        axes.iter().any(|&a| idx[a] == 0 || idx[a] == self.dims[a] - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Source,
    InitialCondition,
    Permeability,
    Solution,
}

/// Values of one or more channels on a grid, channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub grid: Grid,
    pub channels: usize,
    pub values: Vec<f64>,
    pub kind: FieldKind,
    pub seed: u64,
}

impl FieldSample {
    pub fn new(grid: Grid, channels: usize, values: Vec<f64>, kind: FieldKind, seed: u64) -> Result<Self> {
        if channels == 0 || values.len() != channels * grid.len() {
            return Err(shape(
                (channels, grid.dims().to_vec()),
                (values.len(), "values"),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite field value at flat index {i}")));
        }
        Ok(FieldSample {
            grid,
            channels,
            values,
            kind,
            seed,
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_81_by_81() {
        let g = Grid::space_time(81, 81).unwrap();
        assert_eq!(g.spacing(), &[0.0125, 0.0125]);
    }

    #[test]
    fn two_nodes_are_endpoints() {
        let g = Grid::unit_1d(2).unwrap();
        assert_eq!(g.coords(0), vec![0.0, 1.0]);
        assert_eq!(g.spacing(), &[1.0]);
    }

    #[test]
    fn node_count_64_squared() {
        let g = Grid::unit_square(64).unwrap();
        assert_eq!(g.len(), 4096);
        assert_eq!(g.coords(1)[63], 1.0);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(Grid::new(&[[0.0, 1.0]], &[1], &[AxisRole::SpaceX]).is_err());
        assert!(Grid::new(&[[0.0, f64::NAN]], &[4], &[AxisRole::SpaceX]).is_err());
        assert!(Grid::new(&[[1.0, 0.0]], &[4], &[AxisRole::SpaceX]).is_err());
    }

    #[test]
    fn flat_and_multi_index_agree() {
        let g = Grid::space_time(5, 7).unwrap();
        for f in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(f)), f);
        }
    }

    #[test]
    fn field_shape_checked() {
        let g = Grid::unit_1d(4).unwrap();
        assert!(FieldSample::new(g.clone(), 1, vec![0.0; 3], FieldKind::Source, 0).is_err());
        assert!(FieldSample::new(g.clone(), 1, vec![0.0, 1.0, f64::INFINITY, 0.0], FieldKind::Source, 0).is_err());
        assert!(FieldSample::new(g, 2, vec![0.0; 8], FieldKind::Source, 0).is_ok());
    }
}
