use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use geoflow::analysis::fit_decay_rate;
use geoflow::baseline::{solve_gd, GdProblem};
use geoflow::heatflow::{solve as solve_pde, warm_start, HeatFlowProblem};
use geoflow::{manifold, DiscreteCurve, InitialCurve, MetricField, NodeGrid, Point, SolveReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Method, RunConfig, SweepParameter, SweepSpec, Surface};
use crate::output::{
    rate_header, sibling, write_csv, EpochRow, GeodesicFile, RateRow, ResultRow, TraceRow,
    EPOCH_HEADER, RESULT_HEADER, TRACE_HEADER,
};
use crate::CliError;

fn config_err(e: geoflow::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn heat_problem(cfg: &RunConfig, m: MetricField, start: Point, end: Point) -> Result<HeatFlowProblem, CliError> {
    let mut p = HeatFlowProblem::new(m, start, end, cfg.degree)
        .with_alpha(cfg.alpha)
        .with_init(cfg.initial_curve()?)
        .with_integrator(cfg.integrator())
        .with_tol_converge(cfg.tolerances.converge);
    p.dtau = cfg.tolerances.dtau;
    if let Some(t) = cfg.tolerances.max_tau {
        p.max_tau = t;
    }
    p.validate().map_err(config_err)?;
    Ok(p)
}

fn gd_problem(cfg: &RunConfig, m: MetricField, start: Point, end: Point) -> Result<GdProblem, CliError> {
    let mut p = GdProblem::new(m, start, end, cfg.degree, cfg.gd_nodes());
    p.tol_grad = cfg.tolerances.grad;
    p.max_iters = cfg.tolerances.max_iters;
    p.validate().map_err(config_err)?;
    Ok(p)
}

/// Problems for one config, built (and validated) before anything runs.
enum Job {
    Pde(HeatFlowProblem),
    Gd(GdProblem),
}

impl Job {
    fn method(&self) -> Method {
        match self {
            Self::Pde(_) => Method::Pde,
            Self::Gd(_) => Method::Gd,
        }
    }

    fn degree(&self) -> usize {
        match self {
            Self::Pde(p) => p.degree,
            Self::Gd(p) => p.degree,
        }
    }

    fn nodes(&self) -> Option<usize> {
        match self {
            Self::Pde(_) => None,
            Self::Gd(p) => Some(p.nodes),
        }
    }

    fn run(&self) -> geoflow::Result<SolveReport> {
        match self {
            Self::Pde(p) => solve_pde(p),
            Self::Gd(p) => solve_gd(p),
        }
    }
}

fn jobs(cfg: &RunConfig, method: Method) -> Result<Vec<Job>, CliError> {
    let m = cfg.manifold.build().map_err(config_err)?;
    let (p, q) = (cfg.start_point()?, cfg.end_point()?);
    let mut out = Vec::new();
    if method.runs_pde() {
        out.push(Job::Pde(heat_problem(cfg, m.clone(), p.clone(), q.clone())?));
    }
    if method.runs_gd() {
        out.push(Job::Gd(gd_problem(cfg, m, p, q)?));
    }
    Ok(out)
}

/// Runs one config; on success also returns the geodesic for the file.
fn run_jobs(label: &str, jobs: &[Job]) -> Vec<(ResultRow, Option<GeodesicFile>, Option<geoflow::Error>)> {
    jobs.iter()
        .map(|job| match job.run() {
            Ok(r) => (
                ResultRow::solved(label, job.method(), job.degree(), job.nodes(), &r),
                Some(GeodesicFile::new(label, job.method(), r.length, &r.geodesic)),
                None,
            ),
            Err(e) => (ResultRow::failed(label, job.method(), job.degree(), job.nodes(), &e), None, Some(e)),
        })
        .collect()
}

pub fn solve(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let method = cfg.method.unwrap_or(Method::Pde);
    let jobs = jobs(cfg, method)?;
    let label = cfg.manifold.label();
    let results = run_jobs(&label, &jobs);
    let rows: Vec<ResultRow> = results.iter().map(|r| r.0.clone()).collect();
    write_csv(out, &rows, RESULT_HEADER)?;
    if let Some(out) = out {
        for (row, file, _) in &results {
            if let Some(f) = file {
                f.write(&sibling(out, &row.method, "toml"))?;
            }
        }
    }
    match results.into_iter().find_map(|r| r.2) {
        Some(e) => Err(CliError::Solver(e)),
        None => Ok(()),
    }
}

pub fn bench(cfg: &RunConfig, out: Option<&Path>, eggbox: bool) -> Result<(), CliError> {
    let spec = cfg.bench.clone().unwrap_or_default();
    let mut surfaces = spec.surfaces.clone();
    if eggbox && !surfaces.contains(&Surface::Eggbox) {
        surfaces.push(Surface::Eggbox);
    }
    let method = cfg.method.unwrap_or(Method::Both);
    let e = &spec.eggbox;
    let mut planned = Vec::new();
    for s in surfaces {
        let mut base = match s {
            Surface::Sphere => RunConfig::sphere_benchmark(),
            Surface::Torus => RunConfig::torus_benchmark(),
            Surface::Eggbox => RunConfig::eggbox_benchmark(e.degree, e.atol),
        };
        base.alpha = cfg.alpha;
        base.tolerances = cfg.tolerances.clone();
        if s != Surface::Eggbox {
            base.integrator = cfg.integrator;
        }
        let mut jobs = Vec::new();
        if method.runs_pde() {
            jobs.extend(self::jobs(&base, Method::Pde)?);
        }
        if method.runs_gd() {
            if s == Surface::Eggbox {
                base.degree = e.gd_degree;
                base.nodes = Some(e.gd_nodes);
                base.tolerances.max_iters = e.gd_max_iters;
            }
            jobs.extend(self::jobs(&base, Method::Gd)?);
        }
        planned.push((base.manifold.label(), jobs));
    }
    let mut rows = Vec::new();
    let mut failures = 0;
    for (label, jobs) in &planned {
        for job in jobs {
            let degree = job.degree();
            let row = match job.run() {
                Ok(r) => ResultRow::solved(label, job.method(), degree, job.nodes(), &r),
                Err(err) => {
                    failures += 1;
                    ResultRow::failed(label, job.method(), degree, job.nodes(), &err)
                }
            };
            eprintln!(
                "{} {}: {}",
                row.surface,
                row.method,
                row.length.map_or_else(|| row.error.clone(), |l| format!("length {l:.6}"))
            );
            rows.push(row);
        }
    }
    write_csv(out, &rows, RESULT_HEADER)?;
    if failures > 0 {
        return Err(CliError::PartialFailure(failures));
    }
    Ok(())
}

fn sweep_spec(cfg: &RunConfig, want: SweepParameter) -> Result<&SweepSpec, CliError> {
    match &cfg.sweep {
        Some(s) if s.parameter == want => Ok(s),
        Some(s) => Err(CliError::Config(format!(
            "config sweeps {:?}, but this command sweeps {want:?}",
            s.parameter
        ))),
        None => Err(CliError::Config("this command needs a [sweep] section".into())),
    }
}

fn rate_row(value: f64, report: &SolveReport) -> RateRow {
    match fit_decay_rate(&report.energy_trace) {
        Some(fit) => RateRow {
            value,
            rate: Some(fit.rate),
            r_squared: Some(fit.r_squared),
            samples: fit.samples,
            fit_skipped: false,
        },
        None => RateRow {
            value,
            rate: None,
            r_squared: None,
            samples: 0,
            fit_skipped: true,
        },
    }
}

fn print_rates(name: &str, rows: &[RateRow]) {
    for r in rows {
        match r.rate {
            Some(rate) => eprintln!("{name} = {}: rate {rate:.6} (R² {:.6}, {} samples)", r.value, r.r_squared.unwrap_or(0.0), r.samples),
            None => eprintln!("{name} = {}: fit skipped (too few samples in window)", r.value),
        }
    }
}

pub fn sweep_alpha(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let spec = sweep_spec(cfg, SweepParameter::Alpha)?;
    let problems = spec
        .values
        .iter()
        .map(|&alpha| {
            let mut c = cfg.clone();
            c.alpha = alpha;
            jobs(&c, Method::Pde).map(|mut j| (alpha, j.remove(0)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut traces = Vec::new();
    let mut rates = Vec::new();
    for (alpha, job) in &problems {
        let report = job.run()?;
        traces.extend(report.energy_trace.iter().map(|&(tau, energy)| TraceRow {
            alpha: *alpha,
            tau,
            energy,
        }));
        rates.push(rate_row(*alpha, &report));
    }
    write_csv(out, &traces, TRACE_HEADER)?;
    if let Some(out) = out {
        write_csv(Some(&sibling(out, "rates", "csv")), &rates, &rate_header("alpha"))?;
    }
    print_rates("alpha", &rates);
    Ok(())
}

/// Meridian through the equator point `(π/2, 0)` of a radius-`r` sphere,
/// covering arc length `spec.arc_length`, started from a sine bump of arc
/// amplitude `spec.bump` in the normal (azimuthal) direction. The chart
/// straight line is then the geodesic itself, so the fitted rate measures
/// how curvature slows the decay of a normal perturbation.
pub fn radius_problem(cfg: &RunConfig, spec: &SweepSpec, r: f64) -> Result<HeatFlowProblem, CliError> {
    let half = spec.arc_length / (2.0 * r);
    if half >= FRAC_PI_2 {
        return Err(CliError::Config(format!(
            "arc length {} does not fit on a sphere of radius {r}",
            spec.arc_length
        )));
    }
    let m = manifold::sphere(r).map_err(config_err)?;
    let p = Point::new(vec![FRAC_PI_2 - half, 0.0]).map_err(config_err)?;
    let q = Point::new(vec![FRAC_PI_2 + half, 0.0]).map_err(config_err)?;
    let mut c = cfg.clone();
    c.init = crate::config::InitSpec::Sine {
        amplitudes: vec![0.0, spec.bump / r],
    };
    heat_problem(&c, m, p, q)
}

pub fn sweep_radius(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let spec = sweep_spec(cfg, SweepParameter::Radius)?;
    let problems = spec
        .values
        .iter()
        .map(|&r| radius_problem(cfg, spec, r).map(|p| (r, p)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rates = Vec::new();
    for (r, p) in &problems {
        rates.push(rate_row(*r, &solve_pde(p)?));
    }
    write_csv(out, &rates, &rate_header("radius"))?;
    print_rates("R", &rates);
    let mut by_radius: Vec<&RateRow> = rates.iter().collect();
    by_radius.sort_by(|a, b| b.value.total_cmp(&a.value));
    let fitted: Vec<f64> = by_radius.iter().filter_map(|r| r.rate).collect();
    let monotone = fitted.len() == by_radius.len() && fitted.windows(2).all(|w| w[1] < w[0]);
    eprintln!("rates strictly decreasing as R shrinks: {}", if monotone { "yes" } else { "no" });
    Ok(())
}

fn schedule_starts(cfg: &RunConfig) -> Result<Vec<Vec<f64>>, CliError> {
    let s = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| CliError::Config("repeat needs a [schedule] section".into()))?;
    let mut starts = match (&s.starts, &s.from, s.epochs) {
        (Some(list), _, _) => list.clone(),
        (None, Some(from), Some(epochs)) => (0..epochs)
            .map(|k| {
                let t = k as f64 / epochs as f64;
                from.iter().zip(&s.target).map(|(a, b)| a + t * (b - a)).collect()
            })
            .collect(),
        _ => return Err(CliError::Config("schedule needs `starts` or `from` + `epochs`".into())),
    };
    if s.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for p in &mut starts {
            for c in p.iter_mut() {
                *c += rng.random_range(-s.jitter..=s.jitter);
            }
        }
    }
    Ok(starts)
}

pub fn repeat(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    if cfg.method.unwrap_or(Method::Pde) != Method::Pde {
        return Err(CliError::Config("repeat warm-starts the heat flow and only supports method = pde".into()));
    }
    let starts = schedule_starts(cfg)?;
    let target = Point::new(cfg.schedule.as_ref().map(|s| s.target.clone()).unwrap_or_default())
        .map_err(config_err)?;
    let m = cfg.manifold.build().map_err(config_err)?;
    let problems = starts
        .iter()
        .map(|s| {
            let p = Point::new(s.clone()).map_err(config_err)?;
            heat_problem(cfg, m.clone(), p, target.clone())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let grid = NodeGrid::new(cfg.degree).map_err(config_err)?;
    let mut previous: Option<DiscreteCurve> = None;
    let mut rows = Vec::new();
    let mut failures = 0;
    for (epoch, problem) in problems.into_iter().enumerate() {
        let problem = match &previous {
            Some(prev) => {
                let init = warm_start(prev, &grid, &problem.start, &problem.end);
                problem.with_init(InitialCurve::NodeValues(init))
            }
            None => problem,
        };
        let start = problem.start.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        let row = match solve_pde(&problem) {
            Ok(r) => {
                let row = EpochRow {
                    epoch,
                    start,
                    length: Some(r.length),
                    energy: Some(r.energy),
                    iterations: Some(r.iterations),
                    wall_time_ms: Some(r.wall_time.as_secs_f64() * 1e3),
                    converged: r.converged,
                    error: String::new(),
                };
                previous = Some(r.nodes);
                row
            }
            Err(e) => {
                failures += 1;
                previous = None;
                EpochRow {
                    epoch,
                    start,
                    length: None,
                    energy: None,
                    iterations: None,
                    wall_time_ms: None,
                    converged: false,
                    error: e.to_string(),
                }
            }
        };
        rows.push(row);
    }
    write_csv(out, &rows, EPOCH_HEADER)?;
    if failures > 0 {
        return Err(CliError::PartialFailure(failures));
    }
    Ok(())
}
