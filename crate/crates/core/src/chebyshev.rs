//! Chebyshev pseudospectral machinery on the unit interval.
//!
//! Everything here works in the curve parameter `s ∈ [0, 1]`. The Chebyshev
//! variable is `z = 2s - 1`, and the Chebyshev-Gauss-Lobatto (CGL) nodes are
//!
//! ```text
//! s_k = (1 - cos(kπ/D)) / 2,   k = 0..=D
//! ```
//!
//! so they ascend from 0 to 1 and cluster at both ends.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// CGL collocation nodes on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrid {
    degree: usize,
    nodes: Vec<f64>,
}

impl NodeGrid {
    pub fn new(degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParameter(
                "polynomial degree must be at least 1".into(),
            ));
        }
        let d = degree as f64;
        let mut nodes = vec![0.0; degree + 1];
        // Near s = 0 the equivalent form sin²(kπ/2D) avoids cancellation.
        // The upper half is mirrored so that s_k + s_{D-k} = 1.
        for (k, node) in nodes.iter_mut().enumerate().take(degree / 2 + 1) {
            *node = if 2 * k == degree {
                0.5
            } else if 4 * k < degree {
                let h = (k as f64 * PI / (2.0 * d)).sin();
                h * h
            } else {
                0.5 * (1.0 - (k as f64 * PI / d).cos())
            };
        }
        for k in degree / 2 + 1..=degree {
            nodes[k] = 1.0 - nodes[degree - k];
        }
        nodes[0] = 0.0;
        nodes[degree] = 1.0;
        Ok(Self { degree, nodes })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of nodes, `D + 1`.
    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// CGL nodes for polynomial degree `degree`.
pub fn cgl_nodes(degree: usize) -> Result<NodeGrid> {
    NodeGrid::new(degree)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOrder {
    First,
    Second,
}

/// Dense spectral differentiation operator acting on node values.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMatrix {
    matrix: DMatrix<f64>,
    order: DiffOrder,
}

impl DiffMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn order(&self) -> DiffOrder {
        self.order
    }

    /// Differentiate a single vector of node values.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.matrix.ncols(), "node count mismatch");
        let n = values.len();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, v) in values.iter().enumerate() {
                acc += self.matrix[(i, j)] * v;
            }
            *o = acc;
        }
        out
    }

    /// Differentiate every row of an `n × (D+1)` array of node values.
    pub fn apply_rows(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        values * self.matrix.transpose()
    }
}

/// First-order CGL differentiation matrix in `s`.
///
/// Off-diagonal entries use the barycentric form
/// `(c_i / c_j) (-1)^{i+j} / (s_i - s_j)` with `c_0 = c_D = 2`, where the node
/// differences come from a product of sines. Each diagonal entry is the
/// negative sum of its row.
pub fn diff_matrix(grid: &NodeGrid) -> DiffMatrix {
    let d = grid.degree();
    let n = d + 1;
    let half_step = PI / (2.0 * d as f64);
    let c = |i: usize| if i == 0 || i == d { 2.0 } else { 1.0 };
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let ds = ((i + j) as f64 * half_step).sin() * ((i as f64 - j as f64) * half_step).sin();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let v = c(i) / c(j) * sign / ds;
            m[(i, j)] = v;
            row_sum += v;
        }
        m[(i, i)] = -row_sum;
    }
    DiffMatrix {
        matrix: m,
        order: DiffOrder::First,
    }
}

/// Second-order operator, formed as the square of [`diff_matrix`].
pub fn second_diff(grid: &NodeGrid) -> DiffMatrix {
    let first = diff_matrix(grid);
    DiffMatrix {
        matrix: &first.matrix * &first.matrix,
        order: DiffOrder::Second,
    }
}

/// Clenshaw-Curtis weights for the CGL nodes on `[0, 1]`.
///
/// Exact for polynomials of degree `≤ D`; the weights sum to one.
pub fn clenshaw_curtis_weights(grid: &NodeGrid) -> Vec<f64> {
    let d = grid.degree();
    let df = d as f64;
    let mut w = vec![0.0; d + 1];
    let end = if d % 2 == 0 {
        1.0 / (df * df - 1.0)
    } else {
        1.0 / (df * df)
    };
    w[0] = end;
    w[d] = end;
    for (k, wk) in w.iter_mut().enumerate().take(d).skip(1) {
        let theta = k as f64 * PI / df;
        let mut v = 1.0;
        if d % 2 == 0 {
            for j in 1..d / 2 {
                let jf = j as f64;
                v -= 2.0 * (2.0 * jf * theta).cos() / (4.0 * jf * jf - 1.0);
            }
            v -= (df * theta).cos() / (df * df - 1.0);
        } else {
            for j in 1..=(d - 1) / 2 {
                let jf = j as f64;
                v -= 2.0 * (2.0 * jf * theta).cos() / (4.0 * jf * jf - 1.0);
            }
        }
        *wk = 2.0 * v / df;
    }
    // [-1, 1] -> [0, 1]
    for wk in &mut w {
        *wk *= 0.5;
    }
    w
}

/// Grid plus the operators a collocation solve needs, built once.
#[derive(Debug, Clone)]
pub struct Collocation {
    pub grid: NodeGrid,
    pub first: DiffMatrix,
    pub second: DiffMatrix,
    pub weights: Vec<f64>,
}

impl Collocation {
    pub fn new(degree: usize) -> Result<Self> {
        let grid = NodeGrid::new(degree)?;
        let first = diff_matrix(&grid);
        let second = DiffMatrix {
            matrix: &first.matrix * &first.matrix,
            order: DiffOrder::Second,
        };
        let weights = clenshaw_curtis_weights(&grid);
        Ok(Self {
            grid,
            first,
            second,
            weights,
        })
    }

    pub fn degree(&self) -> usize {
        self.grid.degree()
    }

    /// Largest eigenvalue modulus of the second-derivative operator
    /// restricted to the interior nodes (Dirichlet conditions at both ends).
    pub fn dirichlet_spectral_radius(&self) -> f64 {
        let m = self.grid.len();
        if m <= 2 {
            return 0.0;
        }
        let interior = self.second.matrix().view((1, 1), (m - 2, m - 2)).into_owned();
        interior
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Clenshaw-Curtis estimate of `∫₀¹ f ds` from node samples.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        assert_eq!(samples.len(), self.weights.len(), "node count mismatch");
        self.weights.iter().zip(samples).map(|(w, f)| w * f).sum()
    }
}

/// Per-coordinate Chebyshev coefficients; row `i` holds `c_{i0}..c_{iD}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevSeries {
    coeffs: DMatrix<f64>,
}

impl ChebyshevSeries {
    pub fn new(coeffs: DMatrix<f64>) -> Self {
        Self { coeffs }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let len = rows.first().map_or(0, Vec::len);
        if n == 0 || len == 0 {
            return Err(Error::InvalidParameter("empty coefficient table".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != len) {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: bad.len(),
            });
        }
        Ok(Self {
            coeffs: DMatrix::from_fn(n, len, |i, j| rows[i][j]),
        })
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.ncols() - 1
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.coeffs.row(i).iter().copied().collect()
    }

    /// Curve point at parameter `s`.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        eval_series(self, s)
    }
}

/// `T_j(z)` for `j = 0..=degree` by the three-term recurrence.
pub fn chebyshev_t(degree: usize, z: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(degree + 1);
    t.push(1.0);
    if degree >= 1 {
        t.push(z);
    }
    for j in 2..=degree {
        let next = 2.0 * z * t[j - 1] - t[j - 2];
        t.push(next);
    }
    t
}

/// Sum of `c_j T_j(2s - 1)` for one coordinate.
pub fn eval_coefficients(coeffs: &[f64], s: f64) -> f64 {
    let z = 2.0 * s - 1.0;
    let (mut prev, mut cur) = (1.0, z);
    let mut acc = 0.0;
    for (j, c) in coeffs.iter().enumerate() {
        let t = match j {
            0 => 1.0,
            1 => z,
            _ => {
                let next = 2.0 * z * cur - prev;
                prev = cur;
                cur = next;
                next
            }
        };
        acc += c * t;
    }
    acc
}

pub fn eval_series(series: &ChebyshevSeries, s: f64) -> Vec<f64> {
    (0..series.dim())
        .map(|i| {
            let row: Vec<f64> = series.coeffs.row(i).iter().copied().collect();
            eval_coefficients(&row, s)
        })
        .collect()
}

/// `V[k][j] = T_j(2 s_k - 1)`.
///
/// On CGL nodes `2 s_k - 1 = -cos(kπ/D)`, so the entries are evaluated as
/// `(-1)^j cos(jkπ/D)` with the angle reduced mod `2π` first.
pub fn vandermonde(grid: &NodeGrid) -> DMatrix<f64> {
    let d = grid.degree();
    let n = d + 1;
    DMatrix::from_fn(n, n, |k, j| {
        let r = (j * k) % (2 * d);
        let c = (r as f64 * PI / d as f64).cos();
        if j % 2 == 0 {
            c
        } else {
            -c
        }
    })
}

/// Node values (`n × (D+1)`) to Chebyshev coefficients by solving `V c = x`.
pub fn nodes_to_coeffs(values: &DMatrix<f64>, grid: &NodeGrid) -> Result<ChebyshevSeries> {
    if values.ncols() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: values.ncols(),
        });
    }
    let lu = vandermonde(grid).lu();
    // Solve for all coordinates at once: V Cᵀ = Xᵀ.
    let coeffs_t = lu
        .solve(&values.transpose())
        .expect("CGL Vandermonde matrix is nonsingular");
    Ok(ChebyshevSeries {
        coeffs: coeffs_t.transpose(),
    })
}

/// Chebyshev coefficients to values at the grid nodes, `x = V c`.
pub fn coeffs_to_nodes(series: &ChebyshevSeries, grid: &NodeGrid) -> Result<DMatrix<f64>> {
    if series.coeffs.ncols() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: series.coeffs.ncols(),
        });
    }
    Ok(&series.coeffs * vandermonde(grid).transpose())
}

/// Basis function of index `j ≥ 2` that vanishes at `s = 0` and `s = 1`:
/// `T_j(z) - T_0` for even `j`, `T_j(z) - T_1(z)` for odd `j`.
pub fn dirichlet_basis(j: usize, s: f64) -> f64 {
    assert!(j >= 2, "Dirichlet basis starts at j = 2");
    let z = 2.0 * s - 1.0;
    let t = chebyshev_t(j, z);
    if j % 2 == 0 {
        t[j] - 1.0
    } else {
        t[j] - z
    }
}

/// `d/ds` of [`dirichlet_basis`], using `T_j' = j U_{j-1}` and `dz/ds = 2`.
pub fn dirichlet_basis_derivative(j: usize, s: f64) -> f64 {
    assert!(j >= 2, "Dirichlet basis starts at j = 2");
    let z = 2.0 * s - 1.0;
    let (mut u_prev, mut u) = (1.0, 2.0 * z); // U_0, U_1
    for _ in 2..j {
        let next = 2.0 * z * u - u_prev;
        u_prev = u;
        u = next;
    }
    let dt_dz = j as f64 * u;
    let shift = if j % 2 == 0 { 0.0 } else { 1.0 };
    2.0 * (dt_dz - shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rejects_zero_degree() {
        assert!(NodeGrid::new(0).is_err());
    }

    #[test]
    fn small_grids() {
        assert_eq!(cgl_nodes(1).unwrap().nodes(), &[0.0, 1.0]);
        let g2 = cgl_nodes(2).unwrap();
        assert_abs_diff_eq!(g2.nodes()[1], 0.5, epsilon = 1e-16);
        let g4 = cgl_nodes(4).unwrap();
        let expect: Vec<f64> = (0..=4)
            .map(|k| 0.5 * (1.0 - (k as f64 * PI / 4.0).cos()))
            .collect();
        assert!(max_abs_diff(g4.nodes(), &expect) < 1e-15);
        assert_abs_diff_eq!(g4.nodes()[1], 0.146_446_609_406_726_2, epsilon = 1e-15);
        assert_abs_diff_eq!(g4.nodes()[3], 0.853_553_390_593_273_8, epsilon = 1e-15);
    }

    #[test]
    fn nodes_symmetric_and_ascending() {
        for d in 1..80 {
            let g = cgl_nodes(d).unwrap();
            let s = g.nodes();
            assert_eq!(s[0], 0.0);
            assert_eq!(s[d], 1.0);
            for k in 0..=d {
                assert!((s[k] + s[d - k] - 1.0).abs() <= 1e-15);
                if k > 0 {
                    assert!(s[k] > s[k - 1]);
                }
            }
        }
    }

    #[test]
    fn first_derivative_of_constant_and_identity() {
        let g = cgl_nodes(9).unwrap();
        let dm = diff_matrix(&g);
        let zero = dm.apply(&vec![3.5; 10]);
        assert!(zero.iter().all(|v| v.abs() < 1e-10));
        let ones = dm.apply(g.nodes());
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn derivative_of_square() {
        let g = cgl_nodes(4).unwrap();
        let sq: Vec<f64> = g.nodes().iter().map(|s| s * s).collect();
        let d1 = diff_matrix(&g).apply(&sq);
        let expect: Vec<f64> = g.nodes().iter().map(|s| 2.0 * s).collect();
        assert!(max_abs_diff(&d1, &expect) < 1e-12);
        let d2 = second_diff(&g).apply(&sq);
        assert!(d2.iter().all(|v| (v - 2.0).abs() < 1e-10));
    }

    #[test]
    fn second_derivative_of_line_and_cube() {
        let g = cgl_nodes(6).unwrap();
        let d2 = second_diff(&g);
        assert_eq!(d2.order(), DiffOrder::Second);
        let line: Vec<f64> = g.nodes().iter().map(|s| 2.0 - 3.0 * s).collect();
        assert!(d2.apply(&line).iter().all(|v| v.abs() < 1e-10));
        let cube: Vec<f64> = g.nodes().iter().map(|s| s * s * s).collect();
        let expect: Vec<f64> = g.nodes().iter().map(|s| 6.0 * s).collect();
        assert!(max_abs_diff(&d2.apply(&cube), &expect) < 1e-10);
    }

    #[test]
    fn clenshaw_curtis_integrates_monomials() {
        for d in 1..=40 {
            let g = cgl_nodes(d).unwrap();
            let w = clenshaw_curtis_weights(&g);
            for m in 0..=d {
                let approx: f64 = w
                    .iter()
                    .zip(g.nodes())
                    .map(|(w, s)| w * s.powi(m as i32))
                    .sum();
                assert_abs_diff_eq!(approx, 1.0 / (m as f64 + 1.0), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn dirichlet_spectrum() {
        // the smallest Dirichlet eigenvalue of d²/ds² on [0, 1] is -π²; the
        // largest grows like D⁴
        let ops = Collocation::new(16).unwrap();
        let m = 15;
        let interior = ops.second.matrix().view((1, 1), (m, m)).into_owned();
        let eig = interior.complex_eigenvalues();
        let smallest = eig.iter().map(|z| z.norm()).fold(f64::MAX, f64::min);
        assert!((smallest - PI * PI).abs() < 1e-8, "{smallest}");
        assert!(eig.iter().all(|z| z.re < 0.0 && z.im.abs() < 1e-6 * z.norm()));
        let rho = ops.dirichlet_spectral_radius();
        let big = Collocation::new(32).unwrap().dirichlet_spectral_radius();
        assert!(big / rho > 10.0 && big / rho < 20.0, "{rho} {big}");
        assert_eq!(Collocation::new(1).unwrap().dirichlet_spectral_radius(), 0.0);
    }

    #[test]
    fn trapezoid_at_degree_one() {
        let w = clenshaw_curtis_weights(&cgl_nodes(1).unwrap());
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn constant_series() {
        let g = cgl_nodes(5).unwrap();
        let mut c = DMatrix::zeros(1, 6);
        c[(0, 0)] = 1.0;
        let vals = coeffs_to_nodes(&ChebyshevSeries::new(c), &g).unwrap();
        assert!(vals.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn identity_series_coefficients() {
        // s = (T_0 + T_1(z)) / 2
        let g = cgl_nodes(6).unwrap();
        let vals = DMatrix::from_row_slice(1, 7, g.nodes());
        let series = nodes_to_coeffs(&vals, &g).unwrap();
        let row = series.row(0);
        assert_abs_diff_eq!(row[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(row[1], 0.5, epsilon = 1e-14);
        assert!(row[2..].iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn vandermonde_matches_recurrence() {
        let g = cgl_nodes(13).unwrap();
        let v = vandermonde(&g);
        for (k, s) in g.nodes().iter().enumerate() {
            let t = chebyshev_t(13, 2.0 * s - 1.0);
            for j in 0..=13 {
                assert_abs_diff_eq!(v[(k, j)], t[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn eval_series_reproduces_node_values() {
        let g = cgl_nodes(10).unwrap();
        let vals = DMatrix::from_fn(2, 11, |i, k| ((i + 1) as f64 * g.nodes()[k]).sin());
        let series = nodes_to_coeffs(&vals, &g).unwrap();
        let back = coeffs_to_nodes(&series, &g).unwrap();
        for (k, s) in g.nodes().iter().enumerate() {
            let p = series.eval(*s);
            for i in 0..2 {
                assert!((p[i] - back[(i, k)]).abs() < 1e-12);
                assert!((p[i] - vals[(i, k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_checks() {
        let g = cgl_nodes(4).unwrap();
        let bad = DMatrix::zeros(2, 4);
        assert!(matches!(
            nodes_to_coeffs(&bad, &g),
            Err(Error::DimensionMismatch { expected: 5, got: 4 })
        ));
        assert!(ChebyshevSeries::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn dirichlet_basis_vanishes_at_ends() {
        for j in 2..20 {
            assert!(dirichlet_basis(j, 0.0).abs() < 1e-12);
            assert!(dirichlet_basis(j, 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_derivative_matches_finite_difference() {
        let h = 1e-6;
        for j in 2..12 {
            for s in [0.0f64, 0.13, 0.5, 0.77, 1.0] {
                let lo = (s - h).max(0.0);
                let hi = (s + h).min(1.0);
                let fd = (dirichlet_basis(j, hi) - dirichlet_basis(j, lo)) / (hi - lo);
                let an = dirichlet_basis_derivative(j, s);
                let scale = 1.0 + an.abs();
                // one-sided at the ends
                let tol = if s == 0.0 || s == 1.0 { 1e-3 } else { 1e-6 } * scale;
                assert!((fd - an).abs() < tol, "j={j} s={s}: {fd} vs {an}");
            }
        }
    }
}
