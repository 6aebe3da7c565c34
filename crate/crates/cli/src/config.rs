//! Run configuration, loaded from TOML. Unknown keys are rejected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use geoflow::baseline::{DEFAULT_MAX_ITERS, DEFAULT_TOL_GRAD};
use geoflow::heatflow::{DEFAULT_ALPHA, DEFAULT_ATOL, DEFAULT_DTAU, DEFAULT_ROSENBROCK_ATOL, DEFAULT_TOL_CONVERGE};
use geoflow::{InitialCurve, Integrator, ManifoldSpec, Point};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pde,
    Gd,
    Both,
}

impl Method {
    pub fn runs_pde(self) -> bool {
        matches!(self, Self::Pde | Self::Both)
    }

    pub fn runs_gd(self) -> bool {
        matches!(self, Self::Gd | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifold: ManifoldSpec,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// `pde` when absent; `bench` defaults to both methods instead.
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Quadrature nodes for gradient descent; `degree + 4` when absent.
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub bench: Option<BenchSpec>,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    /// CSV destination; `--out` wins.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_degree() -> usize {
    7
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Heat flow stops once the node change per unit τ drops below this.
    pub converge: f64,
    /// Gradient descent stops once the gradient max-norm drops below this.
    pub grad: f64,
    pub atol: f64,
    pub rtol: f64,
    /// First adaptive step.
    pub dtau: f64,
    /// `100 / alpha` when absent.
    pub max_tau: Option<f64>,
    pub max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            converge: DEFAULT_TOL_CONVERGE,
            grad: DEFAULT_TOL_GRAD,
            atol: DEFAULT_ATOL,
            rtol: 0.0,
            dtau: DEFAULT_DTAU,
            max_tau: None,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum IntegratorSpec {
    #[default]
    Rk45,
    Rk4 {
        dtau: f64,
    },
    Rosenbrock {
        #[serde(default = "default_rosenbrock_atol")]
        atol: f64,
        #[serde(default)]
        rtol: f64,
    },
}

fn default_rosenbrock_atol() -> f64 {
    DEFAULT_ROSENBROCK_ATOL
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    Straight,
    Waypoints {
        points: Vec<Vec<f64>>,
    },
    Sine {
        amplitudes: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Alpha,
    Radius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Radius sweep only: arc length of the meridian test geodesic.
    #[serde(default = "default_arc_length")]
    pub arc_length: f64,
    /// Radius sweep only: arc amplitude of the normal sine bump.
    #[serde(default = "default_bump")]
    pub bump: f64,
}

fn default_arc_length() -> f64 {
    1.0
}

fn default_bump() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    Sphere,
    Torus,
    Eggbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    #[serde(default = "default_surfaces")]
    pub surfaces: Vec<Surface>,
    #[serde(default)]
    pub eggbox: EggboxBench,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            surfaces: default_surfaces(),
            eggbox: EggboxBench::default(),
        }
    }
}

fn default_surfaces() -> Vec<Surface> {
    vec![Surface::Sphere, Surface::Torus]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EggboxBench {
    pub degree: usize,
    /// Absolute tolerance of the Rosenbrock integrator used for the egg box.
    pub atol: f64,
    pub gd_degree: usize,
    pub gd_nodes: usize,
    pub gd_max_iters: usize,
}

impl Default for EggboxBench {
    fn default() -> Self {
        Self {
            degree: 500,
            atol: DEFAULT_ROSENBROCK_ATOL,
            gd_degree: 250,
            gd_nodes: 350,
            gd_max_iters: 200,
        }
    }
}

/// Start points for `repeat`: either listed, or `epochs` points moving
/// linearly from `from` towards `target` (the target itself excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub target: Vec<f64>,
    #[serde(default)]
    pub starts: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub from: Option<Vec<f64>>,
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Uniform noise of this half-width added to every start coordinate,
    /// drawn from the run seed.
    #[serde(default)]
    pub jitter: f64,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn point(coords: &[f64], what: &str) -> Result<Point, CliError> {
    Point::new(coords.to_vec()).map_err(|e| invalid(format!("{what}: {e}")))
}

impl RunConfig {
    /// Unit sphere, endpoints (π/8, π/8) → (3π/4, 2π/3), D = 7.
    pub fn sphere_benchmark() -> Self {
        Self::with_endpoints(
            ManifoldSpec::Sphere { radius: 1.0 },
            vec![PI / 8.0, PI / 8.0],
            vec![3.0 * PI / 4.0, 2.0 * PI / 3.0],
            7,
        )
    }

    /// Torus a = 5, b = 3, endpoints (0, 0) → (5π/4, 5π/4), D = 11.
    pub fn torus_benchmark() -> Self {
        Self::with_endpoints(
            ManifoldSpec::Torus { a: 5.0, b: 3.0 },
            vec![0.0, 0.0],
            vec![5.0 * PI / 4.0, 5.0 * PI / 4.0],
            11,
        )
    }

    /// Egg box, endpoints (-1.5, -1.5) → (1.5, 1.5).
    pub fn eggbox_benchmark(degree: usize, atol: f64) -> Self {
        let mut cfg = Self::with_endpoints(ManifoldSpec::Eggbox, vec![-1.5, -1.5], vec![1.5, 1.5], degree);
        cfg.integrator = IntegratorSpec::Rosenbrock { atol, rtol: 0.0 };
        cfg
    }

    fn with_endpoints(manifold: ManifoldSpec, start: Vec<f64>, end: Vec<f64>, degree: usize) -> Self {
        Self {
            manifold,
            start,
            end,
            method: None,
            degree,
            nodes: None,
            alpha: DEFAULT_ALPHA,
            tolerances: Tolerances::default(),
            integrator: IntegratorSpec::default(),
            init: InitSpec::default(),
            sweep: None,
            bench: None,
            schedule: None,
            output: None,
            seed: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn gd_nodes(&self) -> usize {
        self.nodes.unwrap_or(self.degree + 4)
    }

    pub fn start_point(&self) -> Result<Point, CliError> {
        point(&self.start, "start")
    }

    pub fn end_point(&self) -> Result<Point, CliError> {
        point(&self.end, "end")
    }

    pub fn integrator(&self) -> Integrator {
        match self.integrator {
            IntegratorSpec::Rk45 => Integrator::Rk45 {
                atol: self.tolerances.atol,
                rtol: self.tolerances.rtol,
            },
            IntegratorSpec::Rk4 { dtau } => Integrator::Rk4 { dtau },
            IntegratorSpec::Rosenbrock { atol, rtol } => Integrator::Rosenbrock { atol, rtol },
        }
    }

    pub fn initial_curve(&self) -> Result<InitialCurve, CliError> {
        Ok(match &self.init {
            InitSpec::Straight => InitialCurve::StraightLine,
            InitSpec::Waypoints { points } => InitialCurve::Waypoints(
                points
                    .iter()
                    .map(|p| point(p, "waypoint"))
                    .collect::<Result<_, _>>()?,
            ),
            InitSpec::Sine { amplitudes } => InitialCurve::SinePerturbation {
                amplitudes: amplitudes.clone(),
            },
        })
    }

    /// Checks that do not need a solver; problem-level checks happen when
    /// the problems are built.
    pub fn validate(&self) -> Result<(), CliError> {
        let dim = self.manifold.build().map_err(|e| invalid(format!("manifold: {e}")))?.dim();
        for (name, p) in [("start", &self.start), ("end", &self.end)] {
            if p.len() != dim {
                return Err(invalid(format!("{name} has {} coordinates, manifold has {dim}", p.len())));
            }
            point(p, name)?;
        }
        if self.degree == 0 {
            return Err(invalid("degree must be at least 1"));
        }
        if self.gd_nodes() < self.degree + 1 {
            return Err(invalid(format!(
                "nodes = {} must be at least degree + 1 = {}",
                self.gd_nodes(),
                self.degree + 1
            )));
        }
        positive("alpha", self.alpha)?;
        let t = &self.tolerances;
        positive("tolerances.converge", t.converge)?;
        positive("tolerances.grad", t.grad)?;
        positive("tolerances.atol", t.atol)?;
        positive("tolerances.dtau", t.dtau)?;
        if !(t.rtol >= 0.0 && t.rtol.is_finite()) {
            return Err(invalid("tolerances.rtol must be >= 0"));
        }
        if let Some(m) = t.max_tau {
            positive("tolerances.max_tau", m)?;
        }
        if t.max_iters == 0 {
            return Err(invalid("tolerances.max_iters must be positive"));
        }
        match self.integrator {
            IntegratorSpec::Rk4 { dtau } => positive("integrator.dtau", dtau)?,
            IntegratorSpec::Rosenbrock { atol, rtol } => {
                positive("integrator.atol", atol)?;
                if !(rtol >= 0.0 && rtol.is_finite()) {
                    return Err(invalid("integrator.rtol must be >= 0"));
                }
            }
            IntegratorSpec::Rk45 => {}
        }
        match &self.init {
            InitSpec::Waypoints { points } => {
                for p in points {
                    if p.len() != dim {
                        return Err(invalid(format!("waypoint has {} coordinates, manifold has {dim}", p.len())));
                    }
                    point(p, "waypoint")?;
                }
            }
            InitSpec::Sine { amplitudes } => {
                if amplitudes.len() != dim {
                    return Err(invalid(format!(
                        "init.amplitudes has {} entries, manifold has {dim}",
                        amplitudes.len()
                    )));
                }
                if amplitudes.iter().any(|a| !a.is_finite()) {
                    return Err(invalid("init.amplitudes must be finite"));
                }
            }
            InitSpec::Straight => {}
        }
        if let Some(s) = &self.sweep {
            for v in &s.values {
                positive(&format!("sweep value {v}"), *v)?;
            }
            positive("sweep.arc_length", s.arc_length)?;
            if !s.bump.is_finite() {
                return Err(invalid("sweep.bump must be finite"));
            }
        }
        if let Some(b) = &self.bench {
            let e = &b.eggbox;
            if e.degree == 0 || e.gd_degree == 0 || e.gd_nodes < e.gd_degree + 1 || e.gd_max_iters == 0 {
                return Err(invalid("bench.eggbox: need degree >= 1 and gd_nodes >= gd_degree + 1"));
            }
            positive("bench.eggbox.atol", e.atol)?;
        }
        if let Some(s) = &self.schedule {
            if s.target.len() != dim {
                return Err(invalid(format!("schedule.target has {} coordinates, manifold has {dim}", s.target.len())));
            }
            match (&s.starts, &s.from, s.epochs) {
                (Some(starts), None, None) => {
                    if let Some(bad) = starts.iter().find(|p| p.len() != dim) {
                        return Err(invalid(format!("schedule start has {} coordinates, manifold has {dim}", bad.len())));
                    }
                }
                (None, Some(from), Some(_)) => {
                    if from.len() != dim {
                        return Err(invalid(format!("schedule.from has {} coordinates, manifold has {dim}", from.len())));
                    }
                }
                _ => return Err(invalid("schedule needs either `starts`, or `from` together with `epochs`")),
            }
            if !(s.jitter >= 0.0 && s.jitter.is_finite()) {
                return Err(invalid("schedule.jitter must be >= 0"));
            }
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = r#"
        start = [0.39269908169872414, 0.39269908169872414]
        end = [2.356194490192345, 2.0943951023931953]
        degree = 7

        [manifold]
        kind = "sphere"
        radius = 1.0
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml(SPHERE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.alpha, 4.0);
        assert_eq!(cfg.gd_nodes(), 11);
        assert_eq!(cfg.integrator, IntegratorSpec::Rk45);
        assert_eq!(cfg.method, None);
        assert_eq!(cfg.tolerances.converge, 1e-6);
    }

    #[test]
    fn matches_builtin_benchmark() {
        let cfg = RunConfig::from_toml(SPHERE).unwrap();
        let bench = RunConfig::sphere_benchmark();
        for (a, b) in cfg.start.iter().chain(&cfg.end).zip(bench.start.iter().chain(&bench.end)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{SPHERE}\ncolour = 3\n");
        assert!(matches!(RunConfig::from_toml(&bad), Err(CliError::Config(_))));
        let bad_tol = format!("{SPHERE}\n[tolerances]\nconverge = 1e-6\ntypo = 1\n");
        assert!(RunConfig::from_toml(&bad_tol).is_err());
        let bad_manifold = SPHERE.replace("radius = 1.0", "radius = 1.0\nheight = 2.0");
        assert!(RunConfig::from_toml(&bad_manifold).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::sphere_benchmark();
        cfg.start = vec![0.1];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::sphere_benchmark();
        cfg.nodes = Some(5);
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::sphere_benchmark();
        cfg.alpha = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::sphere_benchmark();
        cfg.manifold = ManifoldSpec::Sphere { radius: 0.0 };
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::sphere_benchmark();
        cfg.schedule = Some(ScheduleSpec {
            target: vec![1.0, 1.0],
            starts: None,
            from: Some(vec![0.5, 0.5]),
            epochs: None,
            jitter: 0.0,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tagged_sections_parse() {
        let text = format!(
            "{SPHERE}\n[integrator]\nkind = \"rk4\"\ndtau = 1e-4\n\n[init]\nkind = \"sine\"\namplitudes = [0.1, 0.0]\n"
        );
        let cfg = RunConfig::from_toml(&text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.integrator(), Integrator::Rk4 { dtau: 1e-4 });
        assert_eq!(
            cfg.initial_curve().unwrap(),
            InitialCurve::SinePerturbation {
                amplitudes: vec![0.1, 0.0]
            }
        );
    }
}
