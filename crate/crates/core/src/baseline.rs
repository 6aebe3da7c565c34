//! Gradient-descent baseline: minimize the Riemannian energy directly over
//! Chebyshev coefficients.
//!
//! Each coordinate is the endpoint-interpolating line plus a combination of
//! Dirichlet basis curves `T_j(2s-1) - (T_0 or T_1)`, `j = 2..=D`, so every
//! iterate hits both endpoints exactly. The energy is estimated with
//! Clenshaw-Curtis quadrature on `N ≥ D+1` CGL nodes, the gradient by
//! central differences, and the step by Armijo backtracking.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::chebyshev::{
    dirichlet_basis, dirichlet_basis_derivative, ChebyshevSeries, Collocation, NodeGrid,
};
use crate::curve::DiscreteCurve;
use crate::error::{Error, Result};
use crate::heatflow::{geodesic_residual, SolveReport};
use crate::manifold::{bilinear, MetricField, Point};

pub const DEFAULT_TOL_GRAD: f64 = 1e-4;
pub const DEFAULT_MAX_ITERS: usize = 200_000;
pub const FD_STEP: f64 = 1e-7;
const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

#[derive(Debug, Clone)]
pub struct GdProblem {
    pub manifold: MetricField,
    pub start: Point,
    pub end: Point,
    pub degree: usize,
    /// Quadrature node count `N`.
    pub nodes: usize,
    pub tol_grad: f64,
    pub max_iters: usize,
}

impl GdProblem {
    pub fn new(manifold: MetricField, start: Point, end: Point, degree: usize, nodes: usize) -> Self {
        Self {
            manifold,
            start,
            end,
            degree,
            nodes,
            tol_grad: DEFAULT_TOL_GRAD,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.manifold.dim();
        for p in [&self.start, &self.end] {
            if p.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: p.dim(),
                });
            }
        }
        if self.degree == 0 {
            return Err(Error::InvalidParameter("degree must be at least 1".into()));
        }
        if self.nodes < self.degree + 1 {
            return Err(Error::InvalidParameter(format!(
                "need N >= D + 1 quadrature nodes, got N = {} for D = {}",
                self.nodes, self.degree
            )));
        }
        if !(self.tol_grad > 0.0) {
            return Err(Error::InvalidParameter("tol_grad must be positive".into()));
        }
        Ok(())
    }

    /// Number of free coefficients, `n (D - 1)`.
    pub fn free_len(&self) -> usize {
        self.manifold.dim() * self.degree.saturating_sub(1)
    }
}

/// Precomputed basis samples for fast energy evaluation.
struct EnergyModel<'a> {
    manifold: &'a MetricField,
    start: &'a Point,
    end: &'a Point,
    ops: Collocation,
    /// `φ_j(s_k)`, rows are nodes, columns `j = 2..=D`.
    basis: DMatrix<f64>,
    basis_der: DMatrix<f64>,
    free_per_coord: usize,
}

impl<'a> EnergyModel<'a> {
    fn new(problem: &'a GdProblem) -> Result<Self> {
        let ops = Collocation::new(problem.nodes - 1)?;
        let free = problem.degree - 1;
        let s = ops.grid.nodes();
        let basis = DMatrix::from_fn(s.len(), free, |k, j| dirichlet_basis(j + 2, s[k]));
        let basis_der =
            DMatrix::from_fn(s.len(), free, |k, j| dirichlet_basis_derivative(j + 2, s[k]));
        Ok(Self {
            manifold: &problem.manifold,
            start: &problem.start,
            end: &problem.end,
            ops,
            basis,
            basis_der,
            free_per_coord: free,
        })
    }

    /// Curve values and derivatives at the quadrature nodes.
    fn sample(&self, coeffs: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.start.dim();
        let s = self.ops.grid.nodes();
        let m = s.len();
        let mut x = DMatrix::zeros(n, m);
        let mut dx = DMatrix::zeros(n, m);
        for i in 0..n {
            let a = &coeffs[i * self.free_per_coord..(i + 1) * self.free_per_coord];
            let (p, q) = (self.start[i], self.end[i]);
            for k in 0..m {
                let mut v = p + (q - p) * s[k];
                let mut d = q - p;
                for (j, aj) in a.iter().enumerate() {
                    v += aj * self.basis[(k, j)];
                    d += aj * self.basis_der[(k, j)];
                }
                x[(i, k)] = v;
                dx[(i, k)] = d;
            }
        }
        // endpoints exactly, independent of roundoff in the basis sums
        for i in 0..n {
            x[(i, 0)] = self.start[i];
            x[(i, m - 1)] = self.end[i];
        }
        (x, dx)
    }

    fn energy(&self, coeffs: &[f64]) -> Result<f64> {
        let (x, dx) = self.sample(coeffs);
        let n = self.start.dim();
        let mut acc = 0.0;
        let mut node = vec![0.0; n];
        let mut vel = vec![0.0; n];
        for (k, w) in self.ops.weights.iter().enumerate() {
            for i in 0..n {
                node[i] = x[(i, k)];
                vel[i] = dx[(i, k)];
            }
            let g = self.manifold.metric_at(&node)?;
            acc += w * bilinear(&g, &vel, &vel);
        }
        Ok(0.5 * acc)
    }

    fn gradient(&self, coeffs: &[f64], grad: &mut [f64]) -> Result<()> {
        let mut probe = coeffs.to_vec();
        for m in 0..coeffs.len() {
            probe[m] = coeffs[m] + FD_STEP;
            let plus = self.energy(&probe)?;
            probe[m] = coeffs[m] - FD_STEP;
            let minus = self.energy(&probe)?;
            probe[m] = coeffs[m];
            grad[m] = (plus - minus) / (2.0 * FD_STEP);
        }
        Ok(())
    }

    fn curve(&self, coeffs: &[f64]) -> DiscreteCurve {
        DiscreteCurve::new(self.sample(coeffs).0)
    }
}

/// Energy of the curve with free coefficients `coeffs` (layout: coordinate
/// major, `j = 2..=D` within a coordinate).
pub fn energy_of_coeffs(problem: &GdProblem, coeffs: &[f64]) -> Result<f64> {
    problem.validate()?;
    if coeffs.len() != problem.free_len() {
        return Err(Error::DimensionMismatch {
            expected: problem.free_len(),
            got: coeffs.len(),
        });
    }
    if problem.start == problem.end && coeffs.iter().all(|c| *c == 0.0) {
        return Ok(0.0);
    }
    EnergyModel::new(problem)?.energy(coeffs)
}

/// Curve of `coeffs` sampled on the `N`-node quadrature grid.
pub fn curve_of_coeffs(problem: &GdProblem, coeffs: &[f64]) -> Result<DiscreteCurve> {
    problem.validate()?;
    if coeffs.len() != problem.free_len() {
        return Err(Error::DimensionMismatch {
            expected: problem.free_len(),
            got: coeffs.len(),
        });
    }
    Ok(EnergyModel::new(problem)?.curve(coeffs))
}

/// Full Chebyshev coefficients (`n × (D+1)`) of the parameterized curve.
pub fn series_of_coeffs(problem: &GdProblem, coeffs: &[f64]) -> ChebyshevSeries {
    let n = problem.manifold.dim();
    let d = problem.degree;
    let free = d.saturating_sub(1);
    let mut c = DMatrix::zeros(n, d + 1);
    for i in 0..n {
        let (p, q) = (problem.start[i], problem.end[i]);
        // p + (q - p) s = (p + q)/2 T_0 + (q - p)/2 T_1
        c[(i, 0)] = 0.5 * (p + q);
        if d >= 1 {
            c[(i, 1)] = 0.5 * (q - p);
        }
        for j in 2..=d {
            let a = coeffs[i * free + j - 2];
            c[(i, j)] += a;
            c[(i, j % 2)] -= a;
        }
    }
    ChebyshevSeries::new(c)
}

/// Steepest descent with Armijo backtracking on the free coefficients.
pub fn solve_gd(problem: &GdProblem) -> Result<SolveReport> {
    problem.validate()?;
    let clock = Instant::now();
    let model = EnergyModel::new(problem)?;
    let len = problem.free_len();
    let mut coeffs = vec![0.0; len];
    let mut energy = model.energy(&coeffs)?;
    let mut trace = vec![(0.0, energy)];
    let mut grad = vec![0.0; len];
    let mut trial = vec![0.0; len];
    let mut step = 1e-2;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < problem.max_iters {
        if len > 0 {
            model.gradient(&coeffs, &mut grad)?;
        }
        let grad_norm = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if grad_norm < problem.tol_grad {
            converged = true;
            break;
        }
        let slope: f64 = grad.iter().map(|g| g * g).sum();
        loop {
            for m in 0..len {
                trial[m] = coeffs[m] - step * grad[m];
            }
            // a trial step that leaves the chart just counts as too long
            let accepted = match model.energy(&trial) {
                Ok(e) if e <= energy - ARMIJO_C * step * slope => Some(e),
                Ok(_) | Err(Error::NonSpd { .. }) => None,
                Err(other) => return Err(other),
            };
            if let Some(e) = accepted {
                energy = e;
                std::mem::swap(&mut coeffs, &mut trial);
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                return Err(Error::LineSearchStalled {
                    iter: iterations,
                    grad_norm,
                });
            }
        }
        iterations += 1;
        trace.push((iterations as f64, energy));
        step *= 2.0;
    }
    if !converged {
        if len > 0 {
            model.gradient(&coeffs, &mut grad)?;
        }
        let grad_norm = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if grad_norm >= problem.tol_grad {
            return Err(Error::MaxIters {
                iters: iterations,
                grad_norm,
            });
        }
    }

    let curve = model.curve(&coeffs);
    let length = problem.manifold.curve_length(&curve, &model.ops)?;
    let geodesic = series_of_coeffs(problem, &coeffs);
    let residual = geodesic_residual(&problem.manifold, &geodesic, &NodeGrid::new(problem.degree)?)?;
    Ok(SolveReport {
        geodesic,
        nodes: curve,
        length,
        energy,
        energy_trace: trace,
        iterations,
        rejected_steps: 0,
        wall_time: clock.elapsed(),
        residual,
        converged: true,
        tau: iterations as f64,
    })
}
