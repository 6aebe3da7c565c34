//! Riemannian manifolds described in a single coordinate chart.
//!
//! A [`MetricField`] maps chart points to symmetric positive definite
//! matrices `G(x)` and knows how to produce `∂g_ij/∂x_k`, either from
//! analytic closures or by central differences. Christoffel symbols,
//! inner products and the length/energy functionals of sampled curves are
//! built on top of it.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::chebyshev::Collocation;
use crate::curve::DiscreteCurve;
use crate::error::{Error, Result};

/// Default central-difference step for metrics without analytic partials.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Chart coordinates of a point on the manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter("point has no coordinates".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "point has non-finite coordinates: {coords:?}"
            )));
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<[f64; 2]> for Point {
    fn from(c: [f64; 2]) -> Self {
        Self(c.to_vec())
    }
}

/// Components of a tangent vector in the chart basis.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "tangent vector has non-finite components".into(),
            ));
        }
        Ok(Self(components))
    }
}

impl Deref for TangentVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `∂g_ij/∂x_k`, stored with `k` outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricPartials {
    dim: usize,
    data: Vec<f64>,
}

impl MetricPartials {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(k * self.dim + i) * self.dim + j] = v;
    }

    /// Sets `∂g_ij/∂x_k` and its mirror `∂g_ji/∂x_k`.
    pub fn set_sym(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.set(i, j, k, v);
        self.set(j, i, k, v);
    }
}

/// `Γ^i_jk` with index order `[i][j][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelTensor {
    dim: usize,
    data: Vec<f64>,
}

impl ChristoffelTensor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    /// `Σ_jk Γ^i_jk u_j w_k` for every `i`.
    pub fn contract(&self, u: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        acc += self.get(i, j, k) * u[j] * w[k];
                    }
                }
                acc
            })
            .collect()
    }
}

type MetricFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type PartialsFn = dyn Fn(&[f64]) -> MetricPartials + Send + Sync;

#[derive(Clone)]
pub enum PartialsMode {
    Analytic(Arc<PartialsFn>),
    FiniteDifference { step: f64 },
}

impl fmt::Debug for PartialsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Analytic(_) => f.write_str("Analytic"),
            Self::FiniteDifference { step } => write!(f, "FiniteDifference({step:e})"),
        }
    }
}

/// A Riemannian metric in one chart. Cheap to clone and safe to share.
#[derive(Clone)]
pub struct MetricField {
    name: String,
    dim: usize,
    metric: Arc<MetricFn>,
    partials: PartialsMode,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("partials", &self.partials)
            .finish()
    }
}

/// Metric evaluated and factored at one point.
pub(crate) struct FactoredMetric {
    pub(crate) metric: DMatrix<f64>,
    pub(crate) chol: Cholesky<f64, Dyn>,
}

impl MetricField {
    /// User-supplied metric; partials default to central differences.
    pub fn new<F>(name: impl Into<String>, dim: usize, metric: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidParameter("manifold dimension must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            dim,
            metric: Arc::new(metric),
            partials: PartialsMode::FiniteDifference {
                step: DEFAULT_FD_STEP,
            },
        })
    }

    pub fn with_analytic_partials<F>(mut self, partials: F) -> Self
    where
        F: Fn(&[f64]) -> MetricPartials + Send + Sync + 'static,
    {
        self.partials = PartialsMode::Analytic(Arc::new(partials));
        self
    }

    pub fn with_finite_differences(mut self, step: f64) -> Self {
        self.partials = PartialsMode::FiniteDifference { step };
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn partials_mode(&self) -> &PartialsMode {
        &self.partials
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }

    pub(crate) fn factor(&self, p: &[f64]) -> Result<FactoredMetric> {
        self.check_dim(p.len())?;
        let mut metric = (self.metric)(p);
        if metric.nrows() != self.dim || metric.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: metric.nrows(),
            });
        }
        for i in 0..self.dim {
            for j in 0..i {
                let avg = 0.5 * (metric[(i, j)] + metric[(j, i)]);
                metric[(i, j)] = avg;
                metric[(j, i)] = avg;
            }
        }
        let non_spd = || Error::NonSpd { point: p.to_vec() };
        if metric.iter().any(|v| !v.is_finite()) {
            return Err(non_spd());
        }
        let chol = Cholesky::new(metric.clone()).ok_or_else(non_spd)?;
        // pivots at roundoff level relative to the diagonal count as singular
        let scale = metric.diagonal().amax();
        let floor = self.dim as f64 * f64::EPSILON * scale;
        if chol.l_dirty().diagonal().iter().any(|d| !(d * d > floor)) {
            return Err(non_spd());
        }
        Ok(FactoredMetric { metric, chol })
    }

    /// `G(p)`, symmetrized and checked positive definite.
    pub fn metric_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.factor(p).map(|f| f.metric)
    }

    pub fn metric_partials(&self, p: &[f64]) -> Result<MetricPartials> {
        self.check_dim(p.len())?;
        match &self.partials {
            PartialsMode::Analytic(f) => Ok(f(p)),
            PartialsMode::FiniteDifference { step } => self.fd_partials(p, *step),
        }
    }

    /// Central-difference partials regardless of the configured mode.
    pub fn fd_partials(&self, p: &[f64], step: f64) -> Result<MetricPartials> {
        self.check_dim(p.len())?;
        let n = self.dim;
        let mut out = MetricPartials::zeros(n);
        let mut x = p.to_vec();
        for k in 0..n {
            x[k] = p[k] + step;
            let plus = self.metric_at(&x)?;
            x[k] = p[k] - step;
            let minus = self.metric_at(&x)?;
            x[k] = p[k];
            for i in 0..n {
                for j in 0..n {
                    out.set(i, j, k, (plus[(i, j)] - minus[(i, j)]) / (2.0 * step));
                }
            }
        }
        Ok(out)
    }

    /// Christoffel symbols of the second kind at `p`.
    ///
    /// For each lower pair `(j, k)` the first-kind symbols
    /// `½(∂_k g_mj + ∂_j g_mk - ∂_m g_jk)` are solved against `G` with its
    /// Cholesky factor.
    pub fn christoffel(&self, p: &[f64]) -> Result<ChristoffelTensor> {
        let fm = self.factor(p)?;
        let dg = self.metric_partials(p)?;
        let n = self.dim;
        let mut data = vec![0.0; n * n * n];
        for j in 0..n {
            for k in j..n {
                let rhs = DVector::from_fn(n, |m, _| {
                    0.5 * (dg.get(m, j, k) + dg.get(m, k, j) - dg.get(j, k, m))
                });
                let sol = fm.chol.solve(&rhs);
                for i in 0..n {
                    data[(i * n + j) * n + k] = sol[i];
                    data[(i * n + k) * n + j] = sol[i];
                }
            }
        }
        Ok(ChristoffelTensor { dim: n, data })
    }

    /// Same as [`MetricField::christoffel_quadratic`], writing into `out`
    /// and factoring `G` in `scratch` instead of allocating a decomposition.
    /// This is the per-node hot path of the flow right-hand side.
    pub fn christoffel_quadratic_into(
        &self,
        p: &[f64],
        v: &[f64],
        out: &mut [f64],
        scratch: &mut Vec<f64>,
    ) -> Result<()> {
        self.check_dim(p.len())?;
        self.check_dim(v.len())?;
        self.check_dim(out.len())?;
        let n = self.dim;
        let g = (self.metric)(p);
        if g.nrows() != n || g.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: g.nrows(),
            });
        }
        let non_spd = || Error::NonSpd { point: p.to_vec() };
        // lower triangle of the symmetrized metric, overwritten by its factor
        scratch.clear();
        scratch.resize(n * n, 0.0);
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in 0..=i {
                let a = 0.5 * (g[(i, j)] + g[(j, i)]);
                if !a.is_finite() {
                    return Err(non_spd());
                }
                scratch[i * n + j] = a;
            }
            scale = scale.max(scratch[i * n + i].abs());
        }
        let floor = n as f64 * f64::EPSILON * scale;
        for j in 0..n {
            let mut d = scratch[j * n + j];
            for k in 0..j {
                d -= scratch[j * n + k] * scratch[j * n + k];
            }
            if !(d > floor) {
                return Err(non_spd());
            }
            let l = d.sqrt();
            scratch[j * n + j] = l;
            for i in j + 1..n {
                let mut a = scratch[i * n + j];
                for k in 0..j {
                    a -= scratch[i * n + k] * scratch[j * n + k];
                }
                scratch[i * n + j] = a / l;
            }
        }
        let dg = self.metric_partials(p)?;
        for (m, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    acc += (dg.get(m, j, k) - 0.5 * dg.get(j, k, m)) * v[j] * v[k];
                }
            }
            *o = acc;
        }
        for i in 0..n {
            let mut a = out[i];
            for k in 0..i {
                a -= scratch[i * n + k] * out[k];
            }
            out[i] = a / scratch[i * n + i];
        }
        for i in (0..n).rev() {
            let mut a = out[i];
            for k in i + 1..n {
                a -= scratch[k * n + i] * out[k];
            }
            out[i] = a / scratch[i * n + i];
        }
        Ok(())
    }

    /// `Σ_jk Γ^i_jk v_j v_k` at `p`, with a single solve against `G`.
    pub fn christoffel_quadratic(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v.len())?;
        let fm = self.factor(p)?;
        let dg = self.metric_partials(p)?;
        Ok(quadratic_with(&fm, &dg, v))
    }

    /// `⟨u, w⟩_g` at `p`.
    pub fn inner(&self, p: &[f64], u: &[f64], w: &[f64]) -> Result<f64> {
        self.check_dim(u.len())?;
        self.check_dim(w.len())?;
        let g = self.metric_at(p)?;
        Ok(bilinear(&g, u, w))
    }

    /// `⟨∂_s c, ∂_s c⟩_g` at every node.
    pub fn speed_squared(&self, curve: &DiscreteCurve, ops: &Collocation) -> Result<Vec<f64>> {
        self.check_dim(curve.dim())?;
        if curve.len() != ops.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: ops.grid.len(),
                got: curve.len(),
            });
        }
        let deriv = ops.first.apply_rows(curve.values());
        (0..curve.len())
            .map(|k| {
                let x = curve.node(k);
                let v: Vec<f64> = deriv.column(k).iter().copied().collect();
                let g = self.metric_at(&x)?;
                Ok(bilinear(&g, &v, &v))
            })
            .collect()
    }

    /// `½ ∫₀¹ ⟨∂_s c, ∂_s c⟩_g ds` by Clenshaw-Curtis quadrature.
    pub fn curve_energy(&self, curve: &DiscreteCurve, ops: &Collocation) -> Result<f64> {
        if curve.is_constant() {
            return Ok(0.0);
        }
        let speed = self.speed_squared(curve, ops)?;
        Ok(0.5 * ops.integrate(&speed))
    }

    /// `∫₀¹ √⟨∂_s c, ∂_s c⟩_g ds` by Clenshaw-Curtis quadrature.
    pub fn curve_length(&self, curve: &DiscreteCurve, ops: &Collocation) -> Result<f64> {
        if curve.is_constant() {
            return Ok(0.0);
        }
        let speed: Vec<f64> = self
            .speed_squared(curve, ops)?
            .into_iter()
            .map(|v| v.max(0.0).sqrt())
            .collect();
        Ok(ops.integrate(&speed))
    }
}

pub(crate) fn bilinear(g: &DMatrix<f64>, u: &[f64], w: &[f64]) -> f64 {
    let n = u.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += g[(i, j)] * u[i] * w[j];
        }
    }
    acc
}

/// `G⁻¹ (Σ_jk ∂_k g_mj v_j v_k - ½ Σ_jk ∂_m g_jk v_j v_k)`, which equals
/// `Σ_jk Γ^i_jk v_j v_k` after using the symmetry of `v_j v_k`.
pub(crate) fn quadratic_with(fm: &FactoredMetric, dg: &MetricPartials, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let rhs = DVector::from_fn(n, |m, _| {
        let mut acc = 0.0;
        for j in 0..n {
            for k in 0..n {
                acc += (dg.get(m, j, k) - 0.5 * dg.get(j, k, m)) * v[j] * v[k];
            }
        }
        acc
    });
    fm.chol.solve(&rhs).iter().copied().collect()
}

/// Graph `z = f(x, y)` of a height function, with the metric induced by
/// the embedding in R³: `g = I + ∇f ∇fᵀ`.
#[derive(Clone)]
pub struct GraphSurface {
    pub gradient: Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>,
    /// `[[f_xx, f_xy], [f_xy, f_yy]]`; finite differences are used when absent.
    pub hessian: Option<Arc<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>>,
}

pub fn euclidean(dim: usize) -> Result<MetricField> {
    Ok(
        MetricField::new(format!("euclidean{dim}"), dim, move |_| {
            DMatrix::identity(dim, dim)
        })?
        .with_analytic_partials(move |_| MetricPartials::zeros(dim)),
    )
}

/// Round sphere of radius `radius` in polar/azimuthal coordinates `(θ, φ)`.
pub fn sphere(radius: f64) -> Result<MetricField> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sphere radius must be positive, got {radius}"
        )));
    }
    let r2 = radius * radius;
    Ok(MetricField::new("sphere", 2, move |x| {
        let s = x[0].sin();
        DMatrix::from_row_slice(2, 2, &[r2, 0.0, 0.0, r2 * s * s])
    })?
    .with_analytic_partials(move |x| {
        let mut d = MetricPartials::zeros(2);
        d.set(1, 1, 0, 2.0 * r2 * x[0].sin() * x[0].cos());
        d
    }))
}

/// Torus with tube centre radius `a` and tube radius `b`, coordinates `(θ, φ)`.
pub fn torus(a: f64, b: f64) -> Result<MetricField> {
    if !(a > b && b > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "torus needs a > b > 0, got a = {a}, b = {b}"
        )));
    }
    Ok(MetricField::new("torus", 2, move |x| {
        let r = a + b * x[1].cos();
        DMatrix::from_row_slice(2, 2, &[r * r, 0.0, 0.0, b * b])
    })?
    .with_analytic_partials(move |x| {
        let mut d = MetricPartials::zeros(2);
        d.set(0, 0, 1, -2.0 * (a + b * x[1].cos()) * b * x[1].sin());
        d
    }))
}

pub fn graph_surface(name: impl Into<String>, surface: GraphSurface) -> Result<MetricField> {
    let grad = surface.gradient.clone();
    let field = MetricField::new(name, 2, move |x| {
        let [fx, fy] = grad(x[0], x[1]);
        DMatrix::from_row_slice(2, 2, &[1.0 + fx * fx, fx * fy, fx * fy, 1.0 + fy * fy])
    })?;
    Ok(match surface.hessian {
        Some(hess) => {
            let grad = surface.gradient;
            field.with_analytic_partials(move |x| {
                let f = grad(x[0], x[1]);
                let h = hess(x[0], x[1]);
                let mut d = MetricPartials::zeros(2);
                // ∂_k (f_i f_j) = f_ik f_j + f_i f_jk
                for k in 0..2 {
                    for i in 0..2 {
                        for j in i..2 {
                            d.set_sym(i, j, k, h[i][k] * f[j] + f[i] * h[j][k]);
                        }
                    }
                }
                d
            })
        }
        None => field,
    })
}

/// Graph of `f(x, y) = x² - y² + 2 sin(5x) cos(5y)`.
pub fn eggbox() -> Result<MetricField> {
    graph_surface(
        "eggbox",
        GraphSurface {
            gradient: Arc::new(|x, y| {
                [
                    2.0 * x + 10.0 * (5.0 * x).cos() * (5.0 * y).cos(),
                    -2.0 * y - 10.0 * (5.0 * x).sin() * (5.0 * y).sin(),
                ]
            }),
            hessian: Some(Arc::new(|x, y| {
                let ss = 50.0 * (5.0 * x).sin() * (5.0 * y).cos();
                let cs = -50.0 * (5.0 * x).cos() * (5.0 * y).sin();
                [[2.0 - ss, cs], [cs, -2.0 - ss]]
            })),
        },
    )
}

/// File-loadable description of a builtin manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ManifoldSpec {
    Euclidean { dim: usize },
    Sphere { radius: f64 },
    Torus { a: f64, b: f64 },
    Eggbox,
}

impl ManifoldSpec {
    pub fn build(&self) -> Result<MetricField> {
        match *self {
            Self::Euclidean { dim } => euclidean(dim),
            Self::Sphere { radius } => sphere(radius),
            Self::Torus { a, b } => torus(a, b),
            Self::Eggbox => eggbox(),
        }
    }

    /// Short label used in result tables.
    pub fn label(&self) -> String {
        match self {
            Self::Euclidean { dim } => format!("euclidean{dim}"),
            Self::Sphere { radius } => format!("sphere(R={radius})"),
            Self::Torus { a, b } => format!("torus(a={a} b={b})"),
            Self::Eggbox => "eggbox".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6, PI};

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn assert_matrix(m: &DMatrix<f64>, expect: &[f64]) {
        for (a, b) in m.iter().zip(expect) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn metric_examples() {
        assert_matrix(&euclidean(2).unwrap().metric_at(&[3.7, -1.2]).unwrap(), &[1.0, 0.0, 0.0, 1.0]);
        assert_matrix(&sphere(1.0).unwrap().metric_at(&[FRAC_PI_2, 0.0]).unwrap(), &[1.0, 0.0, 0.0, 1.0]);
        assert_matrix(&sphere(2.0).unwrap().metric_at(&[FRAC_PI_2, 1.3]).unwrap(), &[4.0, 0.0, 0.0, 4.0]);
        assert_matrix(&torus(5.0, 3.0).unwrap().metric_at(&[0.0, 0.0]).unwrap(), &[64.0, 0.0, 0.0, 9.0]);
        assert_matrix(&eggbox().unwrap().metric_at(&[0.0, 0.0]).unwrap(), &[101.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn flat_graph_is_euclidean() {
        let flat = graph_surface(
            "flat",
            GraphSurface {
                gradient: Arc::new(|_, _| [0.0, 0.0]),
                hessian: None,
            },
        )
        .unwrap();
        assert_matrix(&flat.metric_at(&[0.3, -2.0]).unwrap(), &[1.0, 0.0, 0.0, 1.0]);
        let ch = flat.christoffel(&[0.3, -2.0]).unwrap();
        assert!(ch.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(sphere(0.0).is_err());
        assert!(sphere(-1.0).is_err());
        assert!(torus(3.0, 5.0).is_err());
        assert!(torus(5.0, 0.0).is_err());
        assert!(euclidean(0).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let m = sphere(1.0).unwrap();
        assert_eq!(
            m.metric_at(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        );
        assert!(m.inner(&[1.0, 0.0], &[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn sphere_pole_is_not_spd() {
        let m = sphere(1.0).unwrap();
        assert!(matches!(m.metric_at(&[0.0, 0.3]), Err(Error::NonSpd { .. })));
        assert!(matches!(m.christoffel(&[PI, 0.3]), Err(Error::NonSpd { .. })));
    }

    #[test]
    fn user_metric_is_symmetrized() {
        let m = MetricField::new("skew", 2, |_| {
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0 + 1e-13, 1.0, 2.0])
        })
        .unwrap();
        let g = m.metric_at(&[0.0, 0.0]).unwrap();
        assert_eq!(g[(0, 1)], g[(1, 0)]);
    }

    #[test]
    fn partial_examples() {
        let e = euclidean(3).unwrap().metric_partials(&[1.0, 2.0, 3.0]).unwrap();
        assert!(e.data.iter().all(|v| *v == 0.0));
        let s = sphere(1.0).unwrap().metric_partials(&[FRAC_PI_4, 0.0]).unwrap();
        assert_abs_diff_eq!(s.get(1, 1, 0), 1.0, epsilon = 1e-15);
        let t = torus(5.0, 3.0).unwrap().metric_partials(&[0.0, FRAC_PI_2]).unwrap();
        assert_abs_diff_eq!(t.get(0, 0, 1), -30.0, epsilon = 1e-12);
    }

    #[test]
    fn christoffel_examples() {
        let e = euclidean(2).unwrap().christoffel(&[0.1, 0.2]).unwrap();
        assert!(e.data.iter().all(|v| *v == 0.0));
        let s = sphere(1.0).unwrap().christoffel(&[FRAC_PI_4, 2.0]).unwrap();
        assert_abs_diff_eq!(s.get(0, 1, 1), -0.5, epsilon = 1e-14);
        // Γ^φ_θφ = cot θ
        assert_abs_diff_eq!(s.get(1, 0, 1), 1.0, epsilon = 1e-14);
        let t = torus(5.0, 3.0).unwrap().christoffel(&[1.1, FRAC_PI_2]).unwrap();
        assert_abs_diff_eq!(t.get(1, 0, 0), 5.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn quadratic_form_matches_full_tensor() {
        for m in [sphere(1.3).unwrap(), torus(5.0, 3.0).unwrap(), eggbox().unwrap()] {
            let p = [0.7, 0.4];
            let v = [0.3, -1.7];
            let full = m.christoffel(&p).unwrap().contract(&v, &v);
            let quick = m.christoffel_quadratic(&p, &v).unwrap();
            for i in 0..2 {
                assert_abs_diff_eq!(full[i], quick[i], epsilon = 1e-10 * (1.0 + full[i].abs()));
            }
        }
    }

    #[test]
    fn in_place_quadratic_matches_factored_path() {
        let mut scratch = Vec::new();
        let wobbly = MetricField::new("wobbly3", 3, |x| {
            DMatrix::from_row_slice(3, 3, &[
                2.0 + x[0].sin(), 0.3 * x[1], 0.1,
                0.3 * x[1], 1.5 + x[2] * x[2], 0.2 * x[0],
                0.1, 0.2 * x[0], 3.0,
            ])
        })
        .unwrap();
        let cases: Vec<(MetricField, Vec<f64>, Vec<f64>)> = vec![
            (sphere(1.3).unwrap(), vec![0.7, 0.4], vec![0.3, -1.7]),
            (torus(5.0, 3.0).unwrap(), vec![2.0, -1.0], vec![1.1, 0.4]),
            (eggbox().unwrap(), vec![0.3, -0.2], vec![-0.5, 2.0]),
            (wobbly, vec![0.2, -0.7, 1.1], vec![0.4, 0.9, -1.3]),
        ];
        for (m, p, v) in cases {
            let expected = m.christoffel_quadratic(&p, &v).unwrap();
            let mut got = vec![0.0; p.len()];
            m.christoffel_quadratic_into(&p, &v, &mut got, &mut scratch).unwrap();
            for (a, b) in got.iter().zip(&expected) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12 * (1.0 + b.abs()));
            }
        }
        let pole = sphere(1.0).unwrap();
        let mut out = [0.0; 2];
        assert!(matches!(
            pole.christoffel_quadratic_into(&[0.0, 0.3], &[1.0, 1.0], &mut out, &mut scratch),
            Err(Error::NonSpd { .. })
        ));
    }

    #[test]
    fn inner_examples() {
        let e = euclidean(2).unwrap();
        assert_eq!(e.inner(&[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        let s = sphere(1.0).unwrap();
        assert_abs_diff_eq!(s.inner(&[FRAC_PI_2, 0.0], &[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(s.inner(&[FRAC_PI_6, 0.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn energy_and_length_of_lines() {
        let ops = Collocation::new(5).unwrap();
        let e = euclidean(2).unwrap();
        let line = DiscreteCurve::straight_line(&[0.0, 0.0].into(), &[1.0, 1.0].into(), &ops.grid);
        assert_abs_diff_eq!(e.curve_energy(&line, &ops).unwrap(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(e.curve_length(&line, &ops).unwrap(), 2f64.sqrt(), epsilon = 1e-13);
        let one = Collocation::new(1).unwrap();
        let line1 = DiscreteCurve::straight_line(&[0.0, 0.0].into(), &[1.0, 1.0].into(), &one.grid);
        assert_abs_diff_eq!(e.curve_energy(&line1, &one).unwrap(), 1.0, epsilon = 1e-14);
        let e1 = euclidean(1).unwrap();
        let c = DiscreteCurve::constant(&Point::new(vec![0.4]).unwrap(), 6);
        assert_eq!(e1.curve_energy(&c, &ops).unwrap(), 0.0);
        assert_eq!(e1.curve_length(&c, &ops).unwrap(), 0.0);
    }

    #[test]
    fn manifold_spec_builds() {
        let spec = ManifoldSpec::Torus { a: 5.0, b: 3.0 };
        assert_eq!(spec.build().unwrap().dim(), 2);
        assert_eq!(ManifoldSpec::Euclidean { dim: 3 }.build().unwrap().dim(), 3);
        assert!(ManifoldSpec::Sphere { radius: -2.0 }.build().is_err());
    }

    fn builtins() -> Vec<MetricField> {
        vec![
            sphere(1.0).unwrap(),
            sphere(0.5).unwrap(),
            torus(5.0, 3.0).unwrap(),
            eggbox().unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn christoffel_lower_symmetry(theta in 0.2f64..2.9, phi in -3.0f64..3.0) {
            for m in builtins() {
                let ch = m.christoffel(&[theta, phi]).unwrap();
                for i in 0..2 { for j in 0..2 { for k in 0..2 {
                    prop_assert_eq!(ch.get(i, j, k), ch.get(i, k, j));
                }}}
            }
        }

        #[test]
        fn analytic_partials_match_finite_differences(theta in 0.2f64..2.9, phi in -3.0f64..3.0) {
            for m in builtins() {
                let p = [theta, phi];
                let an = m.metric_partials(&p).unwrap();
                let fd = m.fd_partials(&p, DEFAULT_FD_STEP).unwrap();
                for i in 0..2 { for j in 0..2 { for k in 0..2 {
                    let (a, f) = (an.get(i, j, k), fd.get(i, j, k));
                    prop_assert!((a - f).abs() <= 1e-5 * (1.0 + a.abs()),
                        "{}: d g_{}{} / dx_{}: {} vs {}", m.name(), i, j, k, a, f);
                }}}
            }
        }

        #[test]
        fn cauchy_schwarz(theta in 0.2f64..2.9, phi in -3.0f64..3.0,
                          u in prop::array::uniform2(-5.0f64..5.0),
                          w in prop::array::uniform2(-5.0f64..5.0)) {
            for m in builtins() {
                let p = [theta, phi];
                let uw = m.inner(&p, &u, &w).unwrap();
                let uu = m.inner(&p, &u, &u).unwrap();
                let ww = m.inner(&p, &w, &w).unwrap();
                prop_assert!(uw * uw <= uu * ww * (1.0 + 1e-12) + 1e-300);
                prop_assert!((uw - m.inner(&p, &w, &u).unwrap()).abs() <= 1e-12 * (1.0 + uw.abs()));
            }
        }
    }
}
