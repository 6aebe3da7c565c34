use nalgebra::DMatrix;

use crate::chebyshev::NodeGrid;
use crate::manifold::Point;

/// Curve sampled at the collocation nodes: column `k` is the point at `s_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCurve {
    values: DMatrix<f64>,
}

impl DiscreteCurve {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    /// Coordinate-wise linear interpolation from `p` to `q` at the grid nodes.
    pub fn straight_line(p: &Point, q: &Point, grid: &NodeGrid) -> Self {
        assert_eq!(p.dim(), q.dim(), "endpoint dimensions differ");
        let s = grid.nodes();
        let values = DMatrix::from_fn(p.dim(), grid.len(), |i, k| {
            // exact at both ends
            if k == 0 {
                p[i]
            } else if k == grid.degree() {
                q[i]
            } else {
                p[i] + (q[i] - p[i]) * s[k]
            }
        });
        Self { values }
    }

    pub fn constant(p: &Point, nodes: usize) -> Self {
        Self {
            values: DMatrix::from_fn(p.dim(), nodes, |i, _| p[i]),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn node(&self, k: usize) -> Vec<f64> {
        self.values.column(k).iter().copied().collect()
    }

    pub fn is_constant(&self) -> bool {
        (0..self.dim()).all(|i| {
            let first = self.values[(i, 0)];
            self.values.row(i).iter().all(|v| *v == first)
        })
    }
}
