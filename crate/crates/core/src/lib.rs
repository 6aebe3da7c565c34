//! Point-to-point geodesics on Riemannian manifolds.
//!
//! The main solver relaxes a curve with pinned endpoints under the
//! geometric heat flow `∂_τ c = α ∇_s ∂_s c`, discretized with Chebyshev
//! collocation in `s` and an explicit Runge-Kutta integrator in `τ`
//! ([`heatflow`]). A gradient-descent minimizer of the Riemannian energy
//! over Chebyshev coefficients is provided for comparison ([`baseline`]).
//!
//! ```
//! use std::f64::consts::PI;
//! use geoflow::{heatflow, manifold, Point};
//!
//! let sphere = manifold::sphere(1.0).unwrap();
//! let p = Point::new(vec![PI / 8.0, PI / 8.0]).unwrap();
//! let q = Point::new(vec![3.0 * PI / 4.0, 2.0 * PI / 3.0]).unwrap();
//! let report = heatflow::solve(&heatflow::HeatFlowProblem::new(sphere, p, q, 7)).unwrap();
//! assert!((report.length - 2.33).abs() < 0.01);
//! ```

pub mod analysis;
pub mod baseline;
pub mod chebyshev;
pub mod curve;
pub mod error;
pub mod heatflow;
pub mod manifold;
pub mod ode;

pub use chebyshev::{ChebyshevSeries, Collocation, DiffMatrix, NodeGrid};
pub use curve::DiscreteCurve;
pub use error::{Error, Result};
pub use heatflow::{HeatFlowProblem, InitialCurve, Integrator, SolveReport};
pub use manifold::{ManifoldSpec, MetricField, Point, TangentVector};
