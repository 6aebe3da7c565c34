//! Geodesics by integrating the geometric heat flow in local coordinates,
//!
//! ```text
//! (1/α) ∂_τ x_i = ∂²_s x_i + Σ_jk Γ^i_jk(x) ∂_s x_j ∂_s x_k,
//! ```
//!
//! with the spatial derivatives replaced by CGL differentiation matrices
//! (method of lines). Both endpoints stay pinned for every `τ`, so the
//! node values relax towards a geodesic in the homotopy class of the
//! initial curve.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::chebyshev::{coeffs_to_nodes, nodes_to_coeffs, ChebyshevSeries, Collocation, NodeGrid};
use crate::curve::DiscreteCurve;
use crate::error::{Error, Result};
use crate::manifold::{quadratic_with, MetricField, Point};
use crate::ode::{AdaptiveOptions, DormandPrince, Rk4};

pub const DEFAULT_ALPHA: f64 = 4.0;
pub const DEFAULT_TOL_CONVERGE: f64 = 1e-6;
pub const DEFAULT_ATOL: f64 = 1e-8;
pub const DEFAULT_DTAU: f64 = 1e-4;
/// Absolute tolerance suggested for [`Integrator::Rosenbrock`]; its error
/// estimate is only first order, so explicit-method tolerances waste steps.
pub const DEFAULT_ROSENBROCK_ATOL: f64 = 1e-4;

/// Adaptive steps are capped at `STABLE_STEP_FRACTION / (α ρ)`, with `ρ` the
/// spectral radius of the interior second-derivative block. On the negative
/// real axis the Dormand-Prince stability polynomial is below 0.25 in
/// magnitude at -2.5, so the stiffest modes are damped instead of hovering at
/// the error tolerance.
pub const STABLE_STEP_FRACTION: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCurve {
    /// Linear interpolation in chart coordinates.
    StraightLine,
    /// Piecewise-linear through interior waypoints, breakpoints evenly spaced in `s`.
    Waypoints(Vec<Point>),
    /// Straight line plus `amplitudes[i] · sin(πs)` in coordinate `i`.
    SinePerturbation { amplitudes: Vec<f64> },
    /// Explicit node values (`n × (D+1)`), e.g. a previous solution.
    NodeValues(DMatrix<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    /// Classic RK4 with a fixed step; deterministic step sequence.
    Rk4 { dtau: f64 },
    /// Dormand-Prince 5(4) with step-size control.
    Rk45 { atol: f64, rtol: f64 },
    /// Second-order L-stable Rosenbrock method (ROS2) with step-size
    /// control. Each step factors `I - γ h J`, so it costs far more than an
    /// explicit step, but the step size is set by accuracy rather than by the
    /// `O(D⁴)` stiffness of the second-derivative matrix. Use it for large `D`.
    Rosenbrock { atol: f64, rtol: f64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Self::Rk45 {
            atol: DEFAULT_ATOL,
            rtol: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeatFlowProblem {
    pub manifold: MetricField,
    pub start: Point,
    pub end: Point,
    pub degree: usize,
    pub alpha: f64,
    pub init: InitialCurve,
    /// Convergence when the max-norm node change per unit `τ` drops below this.
    pub tol_converge: f64,
    /// First step attempted by the adaptive integrator.
    pub dtau: f64,
    pub integrator: Integrator,
    pub max_tau: f64,
}

impl HeatFlowProblem {
    pub fn new(manifold: MetricField, start: Point, end: Point, degree: usize) -> Self {
        Self {
            manifold,
            start,
            end,
            degree,
            alpha: DEFAULT_ALPHA,
            init: InitialCurve::StraightLine,
            tol_converge: DEFAULT_TOL_CONVERGE,
            dtau: DEFAULT_DTAU,
            integrator: Integrator::default(),
            max_tau: 100.0 / DEFAULT_ALPHA,
        }
    }

    /// Sets `α` and resets `max_tau` to its default `100/α`.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.max_tau = 100.0 / alpha;
        self
    }

    pub fn with_init(mut self, init: InitialCurve) -> Self {
        self.init = init;
        self
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_tol_converge(mut self, tol: f64) -> Self {
        self.tol_converge = tol;
        self
    }

    pub fn with_max_tau(mut self, max_tau: f64) -> Self {
        self.max_tau = max_tau;
        self
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
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        if self.degree == 0 {
            return Err(Error::InvalidParameter("degree must be at least 1".into()));
        }
        positive("alpha", self.alpha)?;
        positive("tol_converge", self.tol_converge)?;
        positive("dtau", self.dtau)?;
        positive("max_tau", self.max_tau)?;
        match self.integrator {
            Integrator::Rk4 { dtau } => positive("fixed step", dtau)?,
            Integrator::Rk45 { atol, rtol } | Integrator::Rosenbrock { atol, rtol } => {
                positive("atol", atol)?;
                if !(rtol >= 0.0) {
                    return Err(Error::InvalidParameter(format!("rtol must be >= 0, got {rtol}")));
                }
            }
        }
        match &self.init {
            InitialCurve::Waypoints(w) => {
                if let Some(bad) = w.iter().find(|p| p.dim() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: bad.dim(),
                    });
                }
            }
            InitialCurve::NodeValues(x) => {
                if x.nrows() != n || x.ncols() != self.degree + 1 {
                    return Err(Error::InvalidParameter(format!(
                        "initial node values are {}x{}, expected {}x{}",
                        x.nrows(),
                        x.ncols(),
                        n,
                        self.degree + 1
                    )));
                }
            }
            InitialCurve::SinePerturbation { amplitudes } => {
                if amplitudes.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: amplitudes.len(),
                    });
                }
                if amplitudes.iter().any(|a| !a.is_finite()) {
                    return Err(Error::InvalidParameter("sine amplitudes must be finite".into()));
                }
            }
            InitialCurve::StraightLine => {}
        }
        Ok(())
    }

    fn is_trivial(&self) -> bool {
        self.start == self.end && self.init == InitialCurve::StraightLine
    }
}

/// Node values at flow time `tau`; columns 0 and D hold the endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub curve: DiscreteCurve,
    pub tau: f64,
    /// Set when the start state already is the answer (`p = q`).
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub geodesic: ChebyshevSeries,
    /// Final node values on the grid the solve ran on.
    pub nodes: DiscreteCurve,
    pub length: f64,
    pub energy: f64,
    /// `(τ, E)` per accepted step; for gradient descent `τ` is the iteration.
    pub energy_trace: Vec<(f64, f64)>,
    pub iterations: usize,
    pub rejected_steps: usize,
    pub wall_time: Duration,
    pub residual: f64,
    pub converged: bool,
    pub tau: f64,
}

impl SolveReport {
    /// Largest increase of energy between consecutive trace entries (0 if none).
    pub fn max_energy_increase(&self) -> f64 {
        self.energy_trace
            .windows(2)
            .map(|w| w[1].1 - w[0].1)
            .fold(0.0, f64::max)
    }

    pub fn initial_energy(&self) -> f64 {
        self.energy_trace.first().map_or(self.energy, |e| e.1)
    }

    /// Energy never rose by more than `rel · E₀` between accepted steps.
    pub fn energy_monotone(&self, rel: f64) -> bool {
        self.max_energy_increase() <= rel * self.initial_energy()
    }
}

/// Builds the `τ = 0` state. Waypoints pick the homotopy class.
pub fn initial_curve(p: &Point, q: &Point, grid: &NodeGrid, waypoints: Option<&[Point]>) -> FlowState {
    let converged = p == q && waypoints.is_none_or(|w| w.is_empty());
    let curve = match waypoints {
        Some(w) if !w.is_empty() => {
            let mut knots: Vec<&Point> = Vec::with_capacity(w.len() + 2);
            knots.push(p);
            knots.extend(w.iter());
            knots.push(q);
            let segments = (knots.len() - 1) as f64;
            let last = grid.degree();
            let values = DMatrix::from_fn(p.dim(), grid.len(), |i, k| {
                if k == 0 {
                    return p[i];
                }
                if k == last {
                    return q[i];
                }
                let u = grid.nodes()[k] * segments;
                let seg = (u.floor() as usize).min(knots.len() - 2);
                let t = u - seg as f64;
                knots[seg][i] + (knots[seg + 1][i] - knots[seg][i]) * t
            });
            DiscreteCurve::new(values)
        }
        _ => DiscreteCurve::straight_line(p, q, grid),
    };
    FlowState {
        curve,
        tau: 0.0,
        converged,
    }
}

/// Shifts a previous solution onto new endpoints by adding the linear
/// correction `(1-s)(p' - p) + s(q' - q)`.
pub fn warm_start(previous: &DiscreteCurve, grid: &NodeGrid, start: &Point, end: &Point) -> DMatrix<f64> {
    let x = previous.values();
    let last = grid.degree();
    let dp: Vec<f64> = (0..x.nrows()).map(|i| start[i] - x[(i, 0)]).collect();
    let dq: Vec<f64> = (0..x.nrows()).map(|i| end[i] - x[(i, last)]).collect();
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| {
        if k == 0 {
            start[i]
        } else if k == last {
            end[i]
        } else {
            let s = grid.nodes()[k];
            x[(i, k)] + (1.0 - s) * dp[i] + s * dq[i]
        }
    })
}

/// Method-of-lines right-hand side with the collocation operators built once.
pub struct FlowRhs<'a> {
    manifold: &'a MetricField,
    ops: &'a Collocation,
    alpha: f64,
    d1t: DMatrix<f64>,
    d2t: DMatrix<f64>,
    d1x: DMatrix<f64>,
    d2x: DMatrix<f64>,
    velocity: Vec<f64>,
    quad: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> FlowRhs<'a> {
    pub fn new(manifold: &'a MetricField, ops: &'a Collocation, alpha: f64) -> Self {
        let (n, m) = (manifold.dim(), ops.grid.len());
        Self {
            manifold,
            ops,
            alpha,
            d1t: ops.first.matrix().transpose(),
            d2t: ops.second.matrix().transpose(),
            d1x: DMatrix::zeros(n, m),
            d2x: DMatrix::zeros(n, m),
            velocity: vec![0.0; n],
            quad: vec![0.0; n],
            scratch: Vec::with_capacity(n * n),
        }
    }

    /// Writes `∂X/∂τ` for the node-major flat state `x` into `out`.
    /// Boundary entries are exactly zero.
    pub fn eval(&mut self, tau: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.manifold.dim();
        let m = self.ops.grid.len();
        let xm = DMatrixView::from_slice(x, n, m);
        xm.mul_to(&self.d1t, &mut self.d1x);
        xm.mul_to(&self.d2t, &mut self.d2x);
        out[..n].fill(0.0);
        out[(m - 1) * n..].fill(0.0);
        for k in 1..m - 1 {
            let node = &x[k * n..(k + 1) * n];
            self.velocity.copy_from_slice(self.d1x.column(k).as_slice());
            self.manifold
                .christoffel_quadratic_into(node, &self.velocity, &mut self.quad, &mut self.scratch)
                .map_err(|_| Error::ChartExit {
                    node: k,
                    tau,
                    point: node.to_vec(),
                })?;
            for i in 0..n {
                let val = self.alpha * (self.d2x[(i, k)] + self.quad[i]);
                if !val.is_finite() {
                    return Err(Error::NonFinite { tau });
                }
                out[k * n + i] = val;
            }
        }
        Ok(())
    }
}

impl FlowRhs<'_> {
    /// Jacobian of [`FlowRhs::eval`] with respect to the node-major state.
    ///
    /// With `Q(x, v) = Γ(x)(v, v)` and `v_k = Σ_j D₁[k,j] x_j`, the block
    /// coupling interior node `k` to node `j` is
    /// `α (D₂[k,j] I + D₁[k,j] ∂_v Q + δ_kj ∂_x Q)`. `∂_v Q` is exact by
    /// polarization (Q is quadratic in `v`); `∂_x Q` uses central
    /// differences. Rows of the pinned boundary nodes are zero.
    pub fn jacobian(&mut self, tau: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.manifold.dim();
        let m = self.ops.grid.len();
        let xm = DMatrixView::from_slice(x, n, m);
        xm.mul_to(&self.d1t, &mut self.d1x);
        let d1 = self.ops.first.matrix();
        let d2 = self.ops.second.matrix();
        let alpha = self.alpha;
        let mut jac = DMatrix::zeros(n * m, n * m);
        let mut dq_dx = DMatrix::zeros(n, n);
        let mut dq_dv = DMatrix::zeros(n, n);
        for k in 1..m - 1 {
            let node = &x[k * n..(k + 1) * n];
            let v: Vec<f64> = self.d1x.column(k).iter().copied().collect();
            let chart_exit = |p: &[f64]| {
                let point = p.to_vec();
                move |_| Error::ChartExit { node: k, tau, point }
            };
            let q_at = |p: &[f64], w: &[f64]| -> Result<Vec<f64>> {
                let fm = self.manifold.factor(p).map_err(chart_exit(p))?;
                let dg = self.manifold.metric_partials(p).map_err(chart_exit(p))?;
                Ok(quadratic_with(&fm, &dg, w))
            };
            let fm = self.manifold.factor(node).map_err(chart_exit(node))?;
            let dg = self.manifold.metric_partials(node).map_err(chart_exit(node))?;
            let mut w = v.clone();
            for l in 0..n {
                w[l] = v[l] + 1.0;
                let plus = quadratic_with(&fm, &dg, &w);
                w[l] = v[l] - 1.0;
                let minus = quadratic_with(&fm, &dg, &w);
                w[l] = v[l];
                for i in 0..n {
                    dq_dv[(i, l)] = 0.5 * (plus[i] - minus[i]);
                }
            }
            let mut p = node.to_vec();
            for l in 0..n {
                let step = JACOBIAN_FD_STEP * node[l].abs().max(1.0);
                p[l] = node[l] + step;
                let plus = q_at(&p, &v)?;
                p[l] = node[l] - step;
                let minus = q_at(&p, &v)?;
                p[l] = node[l];
                for i in 0..n {
                    dq_dx[(i, l)] = (plus[i] - minus[i]) / (2.0 * step);
                }
            }
            for j in 0..m {
                let (a, b) = (d2[(k, j)], d1[(k, j)]);
                for i in 0..n {
                    for l in 0..n {
                        let mut val = b * dq_dv[(i, l)];
                        if i == l {
                            val += a;
                        }
                        if j == k {
                            val += dq_dx[(i, l)];
                        }
                        jac[(k * n + i, j * n + l)] = alpha * val;
                    }
                }
            }
        }
        Ok(jac)
    }
}

const JACOBIAN_FD_STEP: f64 = 1e-6;

/// `∂X/∂τ` for one state of `problem`.
pub fn rhs(problem: &HeatFlowProblem, state: &FlowState) -> Result<DMatrix<f64>> {
    let ops = Collocation::new(problem.degree)?;
    let x = state.curve.values();
    if x.nrows() != problem.manifold.dim() || x.ncols() != ops.grid.len() {
        return Err(Error::DimensionMismatch {
            expected: ops.grid.len(),
            got: x.ncols(),
        });
    }
    let mut out = vec![0.0; x.len()];
    FlowRhs::new(&problem.manifold, &ops, problem.alpha).eval(state.tau, x.as_slice(), &mut out)?;
    Ok(DMatrix::from_column_slice(x.nrows(), x.ncols(), &out))
}

/// Largest adaptive step that keeps the diffusion part strongly damped.
pub fn stable_step(ops: &Collocation, alpha: f64) -> f64 {
    let rho = ops.dirichlet_spectral_radius();
    if rho > 0.0 {
        STABLE_STEP_FRACTION / (alpha * rho)
    } else {
        f64::INFINITY
    }
}

/// ROS2 (Verwer et al., 1999):
///
/// ```text
/// (I - γ h J) k₁ = F(y)
/// (I - γ h J) k₂ = F(y + h k₁) - 2 k₁
/// y⁺ = y + 3/2 h k₁ + 1/2 h k₂,        γ = 1 + 1/√2
/// ```
///
/// Second order for any `J`, and `y + h k₁` is a first-order companion
/// whose difference drives the step size.
struct Rosenbrock {
    atol: f64,
    rtol: f64,
    h: f64,
    f0: Vec<f64>,
    f1: Vec<f64>,
    trial: Vec<f64>,
}

impl Rosenbrock {
    const GAMMA: f64 = 1.0 + std::f64::consts::FRAC_1_SQRT_2;
    const SAFETY: f64 = 0.9;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 2.0;
    const MIN_STEP: f64 = 1e-14;

    fn new(atol: f64, rtol: f64, h: f64, len: usize) -> Self {
        Self {
            atol,
            rtol,
            h,
            f0: vec![0.0; len],
            f1: vec![0.0; len],
            trial: vec![0.0; len],
        }
    }

    /// One accepted step; returns `(dt, rejected)`.
    fn step(&mut self, flow: &mut FlowRhs, tau: f64, y: &mut [f64]) -> Result<(f64, usize)> {
        let len = y.len();
        flow.eval(tau, y, &mut self.f0)?;
        let jac = flow.jacobian(tau, y)?;
        let mut rejected = 0;
        loop {
            let h = self.h;
            if h < Self::MIN_STEP {
                return Err(Error::StepSizeUnderflow { tau, dtau: h });
            }
            let w = DMatrix::identity(len, len) - &jac * (Self::GAMMA * h);
            let lu = w.lu();
            let k1 = lu
                .solve(&DVector::from_column_slice(&self.f0))
                .ok_or(Error::NonFinite { tau })?;
            for i in 0..len {
                self.trial[i] = y[i] + h * k1[i];
            }
            let stage = flow.eval(tau + h, &self.trial, &mut self.f1);
            let k2 = match stage {
                Ok(()) => {
                    let rhs = DVector::from_fn(len, |i, _| self.f1[i] - 2.0 * k1[i]);
                    lu.solve(&rhs)
                }
                // the trial point left the chart: too long a step
                Err(Error::ChartExit { .. }) | Err(Error::NonFinite { .. }) => None,
                Err(e) => return Err(e),
            };
            let Some(k2) = k2 else {
                self.h *= Self::FAC_MIN;
                rejected += 1;
                continue;
            };
            let mut acc = 0.0;
            for i in 0..len {
                let next = y[i] + h * (1.5 * k1[i] + 0.5 * k2[i]);
                let e = 0.5 * h * (k1[i] + k2[i]);
                let sc = self.atol + self.rtol * y[i].abs().max(next.abs());
                acc += (e / sc) * (e / sc);
                self.trial[i] = next;
            }
            let err = (acc / len as f64).sqrt();
            let fac = if err > 0.0 {
                (Self::SAFETY / err.sqrt()).clamp(Self::FAC_MIN, Self::FAC_MAX)
            } else {
                Self::FAC_MAX
            };
            if err.is_finite() && err <= 1.0 {
                y.copy_from_slice(&self.trial);
                self.h = if rejected > 0 { h * fac.min(1.0) } else { h * fac };
                return Ok((h, rejected));
            }
            self.h = h * if err.is_finite() { fac.min(1.0) } else { Self::FAC_MIN };
            rejected += 1;
        }
    }
}

fn pin(x: &mut [f64], start: &Point, end: &Point) {
    let n = start.dim();
    let m = x.len() / n;
    x[..n].copy_from_slice(start);
    x[(m - 1) * n..].copy_from_slice(end);
}

fn energy_at(manifold: &MetricField, x: &[f64], ops: &Collocation, tau: f64) -> Result<f64> {
    let n = manifold.dim();
    let curve = DiscreteCurve::new(DMatrix::from_column_slice(n, x.len() / n, x));
    manifold.curve_energy(&curve, ops).map_err(|e| match e {
        Error::NonSpd { point } => {
            let node = (0..curve.len())
                .find(|&k| curve.node(k) == point)
                .unwrap_or(0);
            Error::ChartExit { node, tau, point }
        }
        other => other,
    })
}

/// Integrates the flow until the nodes stop moving.
pub fn solve(problem: &HeatFlowProblem) -> Result<SolveReport> {
    problem.validate()?;
    let clock = Instant::now();
    let ops = Collocation::new(problem.degree)?;
    let n = problem.manifold.dim();

    if problem.is_trivial() {
        let curve = DiscreteCurve::constant(&problem.start, ops.grid.len());
        let geodesic = nodes_to_coeffs(curve.values(), &ops.grid)?;
        return Ok(SolveReport {
            geodesic,
            nodes: curve,
            length: 0.0,
            energy: 0.0,
            energy_trace: vec![(0.0, 0.0)],
            iterations: 0,
            rejected_steps: 0,
            wall_time: clock.elapsed(),
            residual: 0.0,
            converged: true,
            tau: 0.0,
        });
    }

    let mut x: Vec<f64> = match &problem.init {
        InitialCurve::StraightLine => {
            initial_curve(&problem.start, &problem.end, &ops.grid, None).curve.into_values()
        }
        InitialCurve::Waypoints(w) => {
            initial_curve(&problem.start, &problem.end, &ops.grid, Some(w)).curve.into_values()
        }
        InitialCurve::SinePerturbation { amplitudes } => {
            let mut line =
                initial_curve(&problem.start, &problem.end, &ops.grid, None).curve.into_values();
            for (k, s) in ops.grid.nodes().iter().enumerate() {
                let bump = (std::f64::consts::PI * s).sin();
                for i in 0..n {
                    line[(i, k)] += amplitudes[i] * bump;
                }
            }
            line
        }
        InitialCurve::NodeValues(v) => v.clone(),
    }
    .as_slice()
    .to_vec();
    pin(&mut x, &problem.start, &problem.end);

    let mut flow = FlowRhs::new(&problem.manifold, &ops, problem.alpha);
    let mut rosenbrock = match problem.integrator {
        Integrator::Rosenbrock { atol, rtol } => Some(Rosenbrock::new(atol, rtol, problem.dtau, x.len())),
        _ => None,
    };

    let mut tau = 0.0;
    let mut trace = vec![(0.0, energy_at(&problem.manifold, &x, &ops, 0.0)?)];
    let mut prev = x.clone();
    let mut iterations = 0;
    let mut rejected_steps = 0;
    let mut rk4 = Rk4::new(x.len());
    let mut dopri = match problem.integrator {
        Integrator::Rk45 { atol, rtol } => Some(DormandPrince::new(
            x.len(),
            AdaptiveOptions {
                atol,
                rtol,
                initial_step: problem.dtau.min(stable_step(&ops, problem.alpha)),
                max_step: stable_step(&ops, problem.alpha),
                ..Default::default()
            },
        )),
        _ => None,
    };

    loop {
        prev.copy_from_slice(&x);
        let dt = match problem.integrator {
            Integrator::Rk45 { .. } => {
                let dp = dopri.as_mut().expect("adaptive stepper");
                let acc = dp.step(&mut |t, y, dy| flow.eval(t, y, dy), tau, &mut x)?;
                rejected_steps += acc.rejected;
                acc.dt
            }
            Integrator::Rk4 { dtau } => {
                rk4.step(&mut |t, y, dy| flow.eval(t, y, dy), tau, &mut x, dtau)?;
                dtau
            }
            Integrator::Rosenbrock { .. } => {
                let stepper = rosenbrock.as_mut().expect("rosenbrock stepper");
                let (dt, rejected) = stepper.step(&mut flow, tau, &mut x)?;
                rejected_steps += rejected;
                dt
            }
        };
        pin(&mut x, &problem.start, &problem.end);
        tau += dt;
        iterations += 1;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { tau });
        }
        let rate = x
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / dt;
        trace.push((tau, energy_at(&problem.manifold, &x, &ops, tau)?));
        if rate < problem.tol_converge {
            break;
        }
        if tau > problem.max_tau {
            return Err(Error::Diverged {
                max_tau: problem.max_tau,
                rate,
            });
        }
    }

    let nodes = DiscreteCurve::new(DMatrix::from_column_slice(n, ops.grid.len(), &x));
    let geodesic = nodes_to_coeffs(nodes.values(), &ops.grid)?;
    let length = problem.manifold.curve_length(&nodes, &ops)?;
    let energy = trace.last().map_or(0.0, |e| e.1);
    let residual = geodesic_residual(&problem.manifold, &geodesic, &ops.grid)?;
    Ok(SolveReport {
        geodesic,
        nodes,
        length,
        energy,
        energy_trace: trace,
        iterations,
        rejected_steps,
        wall_time: clock.elapsed(),
        residual,
        converged: true,
        tau,
    })
}

/// Max over interior nodes of `‖∂²_s x + Γ(∂_s x, ∂_s x)‖₂`, i.e. the flow
/// right-hand side divided by `α`.
pub fn geodesic_residual(manifold: &MetricField, series: &ChebyshevSeries, grid: &NodeGrid) -> Result<f64> {
    let ops = Collocation::new(grid.degree())?;
    let x = coeffs_to_nodes(series, grid)?;
    if x.nrows() != manifold.dim() {
        return Err(Error::DimensionMismatch {
            expected: manifold.dim(),
            got: x.nrows(),
        });
    }
    let mut out = vec![0.0; x.len()];
    FlowRhs::new(manifold, &ops, 1.0)
        .eval(0.0, x.as_slice(), &mut out)
        .map_err(|e| match e {
            Error::ChartExit { point, .. } => Error::NonSpd { point },
            other => other,
        })?;
    let n = manifold.dim();
    Ok(out
        .chunks(n)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max))
}

/// `⟨∂_s c, ∂_s c⟩_g` at every node of `grid`.
pub fn speed_profile(manifold: &MetricField, series: &ChebyshevSeries, grid: &NodeGrid) -> Result<Vec<f64>> {
    let ops = Collocation::new(grid.degree())?;
    let curve = DiscreteCurve::new(coeffs_to_nodes(series, grid)?);
    manifold.speed_squared(&curve, &ops)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::manifold::{euclidean, sphere};

    fn pt(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn straight_initial_curve() {
        let g = NodeGrid::new(2).unwrap();
        let st = initial_curve(&pt(&[0.0, 0.0]), &pt(&[1.0, 1.0]), &g, None);
        let x = st.curve.values();
        assert_eq!(x.column(1).as_slice(), &[0.5, 0.5]);
        assert_eq!(x.column(2).as_slice(), &[1.0, 1.0]);
        assert!(!st.converged);
        let same = initial_curve(&pt(&[0.3]), &pt(&[0.3]), &g, None);
        assert!(same.converged);
        assert!(same.curve.is_constant());
    }

    #[test]
    fn waypoints_are_hit() {
        // D = 2 puts the middle node at s = 1/2, where the single waypoint sits
        let g = NodeGrid::new(2).unwrap();
        let st = initial_curve(&pt(&[0.0, 0.0]), &pt(&[1.0, 0.0]), &g, Some(&[pt(&[0.5, 2.0])]));
        assert_eq!(st.curve.node(1), vec![0.5, 2.0]);
    }

    #[test]
    fn rhs_vanishes_on_euclidean_line() {
        let p = HeatFlowProblem::new(euclidean(2).unwrap(), pt(&[0.0, 1.0]), pt(&[2.0, -3.0]), 9);
        let g = NodeGrid::new(9).unwrap();
        let st = initial_curve(&p.start, &p.end, &g, None);
        let r = rhs(&p, &st).unwrap();
        assert!(r.amax() < 1e-10);
    }

    #[test]
    fn rhs_is_heat_operator_on_flat_line() {
        let d = 16;
        let alpha = 4.0;
        let g = NodeGrid::new(d).unwrap();
        let p = HeatFlowProblem::new(euclidean(1).unwrap(), pt(&[0.0]), pt(&[0.0]), d).with_alpha(alpha);
        let x = DMatrix::from_fn(1, d + 1, |_, k| (PI * g.nodes()[k]).sin());
        let st = FlowState {
            curve: DiscreteCurve::new(x),
            tau: 0.0,
            converged: false,
        };
        let r = rhs(&p, &st).unwrap();
        assert_eq!(r[(0, 0)], 0.0);
        assert_eq!(r[(0, d)], 0.0);
        for k in 1..d {
            let expect = -alpha * PI * PI * (PI * g.nodes()[k]).sin();
            assert_abs_diff_eq!(r[(0, k)], expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn chart_exit_reports_node_and_tau() {
        let p = HeatFlowProblem::new(sphere(1.0).unwrap(), pt(&[0.5, 0.0]), pt(&[0.5, 1.0]), 4);
        let g = NodeGrid::new(4).unwrap();
        let mut st = initial_curve(&p.start, &p.end, &g, None);
        st.curve.values_mut()[(0, 2)] = 0.0;
        st.tau = 0.25;
        match rhs(&p, &st) {
            Err(Error::ChartExit { node, tau, .. }) => {
                assert_eq!(node, 2);
                assert_eq!(tau, 0.25);
            }
            other => panic!("expected chart exit, got {other:?}"),
        }
    }

    #[test]
    fn trivial_problem_returns_without_integration() {
        let p = HeatFlowProblem::new(sphere(1.0).unwrap(), pt(&[1.0, 1.0]), pt(&[1.0, 1.0]), 5);
        let r = solve(&p).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.length, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn euclidean_solve_is_immediate() {
        let p = HeatFlowProblem::new(euclidean(3).unwrap(), pt(&[0.0, 1.0, 2.0]), pt(&[3.0, -1.0, 0.5]), 6);
        let r = solve(&p).unwrap();
        let exact = (9.0f64 + 4.0 + 2.25).sqrt();
        assert!((r.length - exact).abs() < 1e-8);
        assert!(r.iterations <= 2);
    }

    #[test]
    fn boundary_stays_pinned() {
        let p = HeatFlowProblem::new(sphere(1.0).unwrap(), pt(&[PI / 8.0, PI / 8.0]), pt(&[3.0 * PI / 4.0, 2.0 * PI / 3.0]), 7)
            .with_integrator(Integrator::Rk4 { dtau: 5e-4 });
        let r = solve(&p).unwrap();
        assert_eq!(r.nodes.node(0), p.start.coords());
        assert_eq!(r.nodes.node(7), p.end.coords());
    }

    #[test]
    fn fixed_step_is_reproducible() {
        let p = HeatFlowProblem::new(sphere(1.0).unwrap(), pt(&[0.6, 0.1]), pt(&[2.0, 1.2]), 6)
            .with_integrator(Integrator::Rk4 { dtau: 1e-3 });
        let a = solve(&p).unwrap();
        let b = solve(&p).unwrap();
        assert_eq!(a.energy_trace, b.energy_trace);
        assert_eq!(a.geodesic, b.geodesic);
    }

    #[test]
    fn unstable_fixed_step_is_reported() {
        let p = HeatFlowProblem::new(sphere(1.0).unwrap(), pt(&[0.6, 0.1]), pt(&[2.0, 1.2]), 12)
            .with_integrator(Integrator::Rk4 { dtau: 0.05 });
        let err = solve(&p).unwrap_err();
        assert!(
            matches!(err, Error::NonFinite { .. } | Error::ChartExit { .. } | Error::Diverged { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn max_tau_guard() {
        let p = HeatFlowProblem::new(sphere(1.0).unwrap(), pt(&[0.6, 0.1]), pt(&[2.0, 1.2]), 6).with_max_tau(1e-3);
        assert!(matches!(solve(&p), Err(Error::Diverged { .. })));
    }

    #[test]
    fn validation() {
        let base = HeatFlowProblem::new(euclidean(2).unwrap(), pt(&[0.0, 0.0]), pt(&[1.0, 0.0]), 4);
        assert!(solve(&base.clone().with_alpha(0.0)).is_err());
        assert!(solve(&HeatFlowProblem { degree: 0, ..base.clone() }).is_err());
        let wrong = HeatFlowProblem::new(euclidean(2).unwrap(), pt(&[0.0]), pt(&[1.0, 0.0]), 4);
        assert!(matches!(solve(&wrong), Err(Error::DimensionMismatch { .. })));
        let bad_init = base.with_init(InitialCurve::NodeValues(DMatrix::zeros(2, 3)));
        assert!(matches!(solve(&bad_init), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn residual_and_speed_of_euclidean_line() {
        let g = NodeGrid::new(5).unwrap();
        let e = euclidean(2).unwrap();
        let line = DiscreteCurve::straight_line(&pt(&[0.0, 0.0]), &pt(&[1.0, 1.0]), &g);
        let series = nodes_to_coeffs(line.values(), &g).unwrap();
        assert!(geodesic_residual(&e, &series, &g).unwrap() < 1e-10);
        let speed = speed_profile(&e, &series, &g).unwrap();
        assert!(speed.iter().all(|v| (v - 2.0).abs() < 1e-12));
        let constant = DiscreteCurve::constant(&pt(&[0.2, 0.2]), 6);
        let series = nodes_to_coeffs(constant.values(), &g).unwrap();
        assert!(speed_profile(&e, &series, &g).unwrap().iter().all(|v| v.abs() < 1e-24));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = sphere(1.0).unwrap();
        let ops = Collocation::new(6).unwrap();
        let mut x = DiscreteCurve::straight_line(&pt(&[0.6, 0.1]), &pt(&[2.0, 1.2]), &ops.grid).into_values();
        for k in 1..6 {
            x[(1, k)] += 0.2 * (PI * ops.grid.nodes()[k]).sin();
        }
        let x = x.as_slice().to_vec();
        let mut flow = FlowRhs::new(&m, &ops, 3.0);
        let jac = flow.jacobian(0.0, &x).unwrap();
        let len = x.len();
        let (mut fp, mut fm) = (vec![0.0; len], vec![0.0; len]);
        for c in 0..len {
            let mut y = x.clone();
            y[c] += 1e-6;
            flow.eval(0.0, &y, &mut fp).unwrap();
            y[c] -= 2e-6;
            flow.eval(0.0, &y, &mut fm).unwrap();
            for r in 0..len {
                let fd = (fp[r] - fm[r]) / 2e-6;
                assert_abs_diff_eq!(jac[(r, c)], fd, epsilon = 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rosenbrock_is_second_order() {
        // dy/dt = -y², y(0) = 1: y(1) = 1/2; the Jacobian is exact here, but
        // a zero Jacobian must keep the order too
        for exact_jacobian in [true, false] {
            let err_at = |h: f64| {
                let mut y = 1.0f64;
                for _ in 0..(1.0 / h).round() as usize {
                    let j = if exact_jacobian { -2.0 * y } else { 0.0 };
                    let w = 1.0 - Rosenbrock::GAMMA * h * j;
                    let k1 = -y * y / w;
                    let y1 = y + h * k1;
                    let k2 = (-y1 * y1 - 2.0 * k1) / w;
                    y += h * (1.5 * k1 + 0.5 * k2);
                }
                (y - 0.5).abs()
            };
            let ratio = err_at(0.02) / err_at(0.01);
            assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
        }
    }

    #[test]
    fn rosenbrock_agrees_with_explicit() {
        let base = HeatFlowProblem::new(sphere(1.0).unwrap(), pt(&[PI / 8.0, PI / 8.0]), pt(&[3.0 * PI / 4.0, 2.0 * PI / 3.0]), 9);
        let explicit = solve(&base).unwrap();
        let implicit = solve(&base.clone().with_integrator(Integrator::Rosenbrock { atol: 1e-8, rtol: 0.0 })).unwrap();
        assert_abs_diff_eq!(explicit.length, implicit.length, epsilon = 1e-9);
        let diff = (explicit.nodes.values() - implicit.nodes.values()).amax();
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn warm_start_moves_endpoints_linearly() {
        let g = NodeGrid::new(4).unwrap();
        let line = DiscreteCurve::straight_line(&pt(&[0.0]), &pt(&[1.0]), &g);
        let shifted = warm_start(&line, &g, &pt(&[0.5]), &pt(&[1.0]));
        for (k, s) in g.nodes().iter().enumerate() {
            assert_abs_diff_eq!(shifted[(0, k)], 0.5 + 0.5 * s, epsilon = 1e-15);
        }
    }
}
