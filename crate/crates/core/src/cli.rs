//! Command-line front end.
//!
//! Every command writes into one output directory: snapshots, `manifest.json` and
//! `diagnostics.csv` with one row per enforced check. The exit status is 0 when all
//! checks pass, 1 when a check fails and 2 on error.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::diagnostics::{
    diagnose, l_bound_calibration, pv_extrema_report, DiagnoseOptions, DiagnosticReport, Frame,
};
use crate::elliptic::{solve_dirichlet, EllipticSolver, LinearSolveSettings};
use crate::error::{Error, Result};
use crate::flowmap::{
    integrate_rk4, perp_gradient, picard_iterate, AnalyticVelocity, SeedSet, SteadyVelocity,
};
use crate::geometry::{
    fixed_order_sum, Domain, DomainSpec, Interpolation, ScalarField, Shape, Vec2,
};
use crate::io::{
    emit_plot_data, list_snapshots, parse_config, snapshot_name, write_diagnostics_csv,
    ParsedConfig, PlotData, RunManifest, SnapshotEntry, SnapshotFile, Timing, MANIFEST_NAME,
};
use crate::kernels::bessel_i0;
use crate::scheme::{History, RunConfig, Scheme, TestField};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

const DEFAULT_OUT: &str = "qgfs-out";
const CALIBRATION_TRIALS: usize = 8;

#[derive(Debug, Parser)]
#[command(
    name = "qgfs",
    version,
    about = "Barotropic QG solver with a free-surface boundary closure"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, env = "QGFS_OUT")]
    pub out: Option<PathBuf>,

    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Named initial field: rest, radial, dipole or rotation.
    #[arg(long, global = true)]
    pub field: Option<String>,

    /// Final time; overrides `t_end` for runs and sets the flow time for picard-demo.
    #[arg(long, global = true)]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// One constrained elliptic solve for the initial potential vorticity.
    SolveElliptic,
    /// Time march with the velocity frozen over each step.
    Run,
    /// Windowed fixed-point iteration.
    FixedPoint,
    /// Picard iteration for the flow map of a named field.
    PicardDemo,
    /// Invariant checks on the snapshots in the output directory.
    Diagnose,
    /// Refinement sweeps with observed orders.
    ConvergenceStudy,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveElliptic => "solve-elliptic",
            Command::Run => "run",
            Command::FixedPoint => "fixed-point",
            Command::PicardDemo => "picard-demo",
            Command::Diagnose => "diagnose",
            Command::ConvergenceStudy => "convergence-study",
        }
    }
}

/// Runs the command and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let config = match cli.config.as_deref().map(parse_config).transpose() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_ERROR;
    }
    let mut ctx = Context {
        cli: &cli,
        config,
        out,
        manifest: RunManifest::new(cli.command.name()),
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| ctx.dispatch()),
            Err(e) => Err(Error::InvalidArgument(format!("thread pool: {e}"))),
        },
        None => ctx.dispatch(),
    };
    ctx.finish(result)
}

struct Context<'a> {
    cli: &'a Cli,
    config: Option<ParsedConfig>,
    out: PathBuf,
    manifest: RunManifest,
}

impl Context<'_> {
    fn dispatch(&mut self) -> Result<DiagnosticReport> {
        if let Some(c) = &self.config {
            let echo = c.echo();
            println!("# resolved configuration ({})\n{echo}", c.path.display());
            self.manifest.config = Some(c.run.clone());
            self.manifest.config_echo = Some(echo);
        }
        match self.cli.command {
            Command::SolveElliptic => self.solve_elliptic(),
            Command::Run => self.evolve(false),
            Command::FixedPoint => self.evolve(true),
            Command::PicardDemo => self.picard_demo(),
            Command::Diagnose => self.diagnose(),
            Command::ConvergenceStudy => self.convergence_study(),
        }
    }

    fn finish(mut self, result: Result<DiagnosticReport>) -> i32 {
        let status = match result {
            Ok(report) => {
                let pass = report.all_pass();
                for row in &report.rows {
                    println!(
                        "{:<4} {:<24} value {:.6e} bound {:.6e} {}",
                        if row.pass { "ok" } else { "FAIL" },
                        row.name,
                        row.value,
                        row.bound,
                        row.context
                    );
                }
                // diagnose runs on an existing directory and must not clobber its table.
                let table = match self.cli.command {
                    Command::Diagnose => "diagnose.csv",
                    _ => "diagnostics.csv",
                };
                if let Err(e) = write_diagnostics_csv(&report.rows, &self.out.join(table)) {
                    eprintln!("error: {e}");
                    return EXIT_ERROR;
                }
                self.manifest.outputs.push(table.into());
                self.manifest.diagnostics = report.rows;
                self.manifest.all_pass = Some(pass);
                self.manifest.complete = true;
                if pass {
                    EXIT_PASS
                } else {
                    for row in self.manifest.diagnostics.iter().filter(|r| !r.pass) {
                        eprintln!(
                            "check failed: {} ({}): {:e} > {:e}",
                            row.name, row.context, row.value, row.bound
                        );
                    }
                    EXIT_CHECK_FAILED
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                self.manifest.error = Some(e.to_string());
                EXIT_ERROR
            }
        };
        if self.cli.command != Command::Diagnose {
            if let Err(e) = self.manifest.write(&self.out) {
                eprintln!("error: cannot write manifest: {e}");
                return EXIT_ERROR;
            }
        }
        status
    }

    fn require_config(&self) -> Result<&ParsedConfig> {
        self.config.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("`{}` needs --config", self.cli.command.name()))
        })
    }

    fn time(&mut self, stage: &str, start: Instant) {
        self.manifest.timings.push(Timing {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut run = self.require_config()?.run.clone();
        if let Some(t) = self.cli.t {
            run.t_end = t;
            run.t_window = run.t_window.min(t);
            run.validate()?;
        }
        Ok(run)
    }

    /// Initial potential vorticity from `--field`, `[initial] psi0` or `[initial] q0`.
    fn initial_q(&self, scheme: &Scheme) -> Result<ScalarField> {
        let initial = &self.require_config()?.initial;
        let field = self.cli.field.as_deref().or(initial.psi0.as_deref());
        if let (None, Some(path)) = (field, &initial.q0) {
            let path = self.resolve(path);
            let snap = SnapshotFile::read(&path)?;
            if snap.spec != *scheme.domain().spec() {
                return Err(Error::InvalidArgument(format!(
                    "{} was written on a different grid",
                    path.display()
                )));
            }
            return ScalarField::new(scheme.domain(), snap.q);
        }
        let field = TestField::from_str(field.unwrap_or("rest"))?;
        scheme.initial_pv(&field.psi0(scheme.domain())?)
    }

    /// Paths in the config are relative to the config file.
    fn resolve(&self, path: &str) -> PathBuf {
        let p = PathBuf::from(path);
        match self.config.as_ref().and_then(|c| c.path.parent()) {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        }
    }

    fn write_snapshots(&mut self, history: &History) -> Result<()> {
        for (i, s) in history.snapshots.iter().enumerate() {
            let name = snapshot_name(i);
            SnapshotFile::from_snapshot(s, history.beta).write(&self.out.join(&name))?;
            self.manifest
                .snapshots
                .push(SnapshotEntry { file: name, t: s.t });
        }
        Ok(())
    }

    fn solve_elliptic(&mut self) -> Result<DiagnosticReport> {
        let run = self.run_config()?;
        let start = Instant::now();
        let scheme = Scheme::new(run.clone())?;
        let q = self.initial_q(&scheme)?;
        let stream = scheme.solver().solve_constrained(&q)?;
        self.time("solve", start);
        let u = perp_gradient(&stream.psi);
        let snapshot = crate::scheme::Snapshot {
            t: 0.0,
            q,
            stream,
            u,
        };
        let history = History {
            beta: run.beta,
            snapshots: vec![snapshot],
            windows: Vec::new(),
        };
        self.write_snapshots(&history)?;
        emit_plot_data(
            PlotData::Field(&history.last().stream.psi),
            "field",
            &self.out.join("psi.csv"),
        )?;
        self.manifest.outputs.push("psi.csv".into());
        println!("l = {:.12e}", history.last().stream.l);
        let frames: Vec<Frame> = history.snapshots.iter().map(Frame::from).collect();
        let c_dom = l_bound_calibration(scheme.solver(), CALIBRATION_TRIALS, 0)?.c_dom;
        diagnose(
            &frames,
            DiagnoseOptions {
                forcing_sup: None,
                c_dom: Some(c_dom),
                beta: run.beta,
            },
        )
    }

    fn evolve(&mut self, fixed_point: bool) -> Result<DiagnosticReport> {
        let run = self.run_config()?;
        let scheme = Scheme::new(run.clone())?;
        let q0 = self.initial_q(&scheme)?;
        let start = Instant::now();
        let history = if fixed_point {
            scheme.run_fixed_point(&q0)
        } else {
            scheme.time_march(&q0)
        };
        self.time(self.cli.command.name(), start);
        let history = history?;
        self.manifest.windows = history.windows.clone();
        self.write_snapshots(&history)?;

        let frames: Vec<Frame> = history.snapshots.iter().map(Frame::from).collect();
        let times: Vec<f64> = frames.iter().map(|f| f.t).collect();
        let sup = scheme.forcing().sampled_sup(scheme.domain(), &times);
        let extrema = pv_extrema_report(&frames, sup)?;
        emit_plot_data(
            PlotData::Extrema(&extrema),
            "extrema",
            &self.out.join("extrema.csv"),
        )?;
        emit_plot_data(
            PlotData::Field(&history.last().q),
            "field",
            &self.out.join("q_final.csv"),
        )?;
        self.manifest
            .outputs
            .extend(["extrema.csv".into(), "q_final.csv".into()]);

        let start = Instant::now();
        let c_dom = l_bound_calibration(scheme.solver(), CALIBRATION_TRIALS, 0)?.c_dom;
        let mut report = diagnose(
            &frames,
            DiagnoseOptions {
                // The transport bound is only claimed for the monotone interpolant.
                forcing_sup: (run.interpolation == Interpolation::Bilinear).then_some(sup),
                c_dom: Some(c_dom),
                beta: run.beta,
            },
        )?;
        if fixed_point {
            for w in &history.windows {
                let d = w.distances.last().copied().unwrap_or(0.0);
                report.check_le(
                    "window_converged",
                    d,
                    run.outer_tol,
                    format!("[{}, {}]", w.start, w.end),
                );
            }
        }
        self.time("diagnostics", start);
        Ok(report)
    }

    fn picard_demo(&mut self) -> Result<DiagnosticReport> {
        let field = TestField::from_str(self.cli.field.as_deref().unwrap_or("rotation"))?;
        let t = self.cli.t.unwrap_or(0.4);
        let spec = match &self.config {
            Some(c) => c.run.domain,
            None => DomainSpec::disk(Vec2::ZERO, 1.0, 33, 33),
        };
        let domain = Domain::build(spec)?;
        let seeds = SeedSet::cell_centers(&domain);
        let (dt, k_max, tol) = (0.01f64.min(t), 60, 1e-13);
        let start = Instant::now();
        let (_, trace) = if field == TestField::Rotation {
            // Solid rotation about the domain center, defined on the whole plane.
            let c = domain_center(&domain);
            let u = AnalyticVelocity::new(move |p: Vec2, _| (p - c).perp());
            picard_iterate(&u, &seeds, t, dt, k_max, tol)?
        } else {
            let psi = field.psi0(&domain)?;
            let v = perp_gradient(&psi);
            // Every iterate stays within t sup|u| of its seed, so seeds at least that
            // far from the wall never leave the grid.
            let reach = t * v.max_norm();
            let seeds = seeds_inside(&domain, seeds, reach);
            if seeds.points.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "t = {t} is too long: every seed is within t sup|u| = {reach} of the wall"
                )));
            }
            let u = SteadyVelocity::new(v, Interpolation::Bilinear);
            picard_iterate(&u, &seeds, t, dt, k_max, tol)?
        };
        self.time("picard", start);
        emit_plot_data(
            PlotData::Trace(&trace),
            "trace",
            &self.out.join("trace.csv"),
        )?;
        self.manifest.outputs.push("trace.csv".into());

        let mut report = DiagnosticReport::new();
        let e = trace.envelope();
        let rise = e.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        report.check_le(
            "e_nonincreasing",
            rise,
            0.0,
            format!("{} iterates", e.len()),
        );
        if let Some(ratio) = trace.fitted_ratio() {
            report.check_le(
                "picard_ratio",
                ratio,
                1.0,
                format!("field={} t={t}", field.name()),
            );
        }
        let env = trace.decay_envelope();
        report.check_le(
            "decay_shape",
            env.b,
            env.a,
            "fitted B against A".to_string(),
        );
        Ok(report)
    }

    fn diagnose(&mut self) -> Result<DiagnosticReport> {
        let mut report = DiagnosticReport::new();
        if self.out.join(MANIFEST_NAME).is_file() {
            let listed = RunManifest::read(&self.out)?.check_consistency(&self.out);
            if let Err(e) = &listed {
                eprintln!("{e}");
            }
            report.check_le(
                "manifest_index",
                f64::from(u8::from(listed.is_err())),
                0.0,
                "snapshots listed and present",
            );
        }
        let mut frames = Vec::new();
        let mut domain: Option<Arc<Domain>> = None;
        let mut beta = None;
        for path in list_snapshots(&self.out)? {
            let snap = SnapshotFile::read(&path)?;
            let frame = snap.to_frame(domain.as_ref())?;
            domain.get_or_insert_with(|| frame.q.domain().clone());
            match beta {
                None => beta = Some(snap.beta),
                Some(b) if b != snap.beta => {
                    return Err(Error::InvalidArgument(format!(
                        "{} has beta = {} but earlier snapshots have {b}",
                        path.display(),
                        snap.beta
                    )))
                }
                _ => {}
            }
            frames.push(frame);
        }
        let beta = beta.unwrap_or(1.0);
        let c_dom = match &domain {
            Some(d) => {
                let solver = EllipticSolver::new(d, LinearSolveSettings::default(), beta)?;
                Some(l_bound_calibration(&solver, CALIBRATION_TRIALS, 0)?.c_dom)
            }
            None => None,
        };
        let forcing_sup = match (&self.config, &domain) {
            (Some(c), Some(d)) if c.run.interpolation == Interpolation::Bilinear => {
                let times: Vec<f64> = frames.iter().map(|f| f.t).collect();
                Some(c.run.forcing.build(d)?.sampled_sup(d, &times))
            }
            _ => None,
        };
        report.extend(diagnose(
            &frames,
            DiagnoseOptions {
                forcing_sup,
                c_dom,
                beta,
            },
        )?);
        Ok(report)
    }

    fn convergence_study(&mut self) -> Result<DiagnosticReport> {
        let start = Instant::now();
        let mut rows = Vec::new();
        let mut report = DiagnosticReport::new();

        let settings = LinearSolveSettings {
            tolerance: 1e-12,
            ..LinearSolveSettings::default()
        };
        let pi = std::f64::consts::PI;
        let mut level = Vec::new();
        for n in [33, 65, 129] {
            let d = Domain::build(DomainSpec::rectangle(pi, pi, n, n))?;
            let rhs = ScalarField::from_fn(&d, |p| -3.0 * p.x.sin() * p.y.sin());
            let psi = solve_dirichlet(&d, &rhs, 0.0, &settings)?;
            let exact = ScalarField::from_fn(&d, |p| p.x.sin() * p.y.sin());
            level.push((d.h(), psi.max_abs_difference(&exact)?));
        }
        push_table(&mut rows, &mut report, "elliptic_sine", &level, Some(1.9));

        let oracle = 1.0 / bessel_i0(1.0);
        let mut level = Vec::new();
        for n in [33, 65, 129] {
            let d = Domain::build(DomainSpec::disk(Vec2::ZERO, 1.0, n, n))?;
            let solver = EllipticSolver::new(&d, settings, 0.0)?;
            let psi2 = solver.psi2()?;
            let center = psi2.interpolate(Vec2::ZERO, Interpolation::Bilinear)?;
            level.push((d.h(), (center - oracle).abs()));
        }
        push_table(&mut rows, &mut report, "unit_boundary_center", &level, None);
        let decreasing = level.windows(2).all(|w| w[1].1 < w[0].1);
        report.check_le(
            "unit_boundary_refines",
            f64::from(u8::from(!decreasing)),
            0.0,
            "error decreases with h",
        );

        let seeds: Vec<Vec2> = (0..16)
            .map(|k| {
                let a = k as f64 * 0.4;
                Vec2::new(0.8 * a.cos(), 0.5 * a.sin())
            })
            .collect();
        let quarter = 0.5 * pi;
        let u = AnalyticVelocity::new(|p: Vec2, _| p.perp());
        let mut level = Vec::new();
        for steps in [8, 16, 32] {
            let dt = quarter / steps as f64;
            let flow = integrate_rk4(&u, &seeds, 0.0, quarter, dt)?;
            let err = flow
                .seeds
                .iter()
                .zip(&flow.positions)
                .map(|(a, p)| (*p - a.perp()).norm())
                .fold(0.0, f64::max);
            level.push((dt, err));
        }
        push_table(&mut rows, &mut report, "rk4_rotation", &level, Some(3.8));

        let path = self.out.join("convergence.csv");
        let mut w =
            csv::Writer::from_path(&path).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for r in &rows {
            w.serialize(r)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        w.flush()?;
        self.manifest.outputs.push("convergence.csv".into());
        for r in &rows {
            println!(
                "{:<22} h {:.4e} error {:.4e} order {:.3}",
                r.study, r.h, r.error, r.order
            );
        }
        self.time("convergence-study", start);
        Ok(report)
    }
}

fn domain_center(domain: &Domain) -> Vec2 {
    match domain.shape() {
        Shape::Disk { center, .. } => center,
        Shape::Rectangle { lx, ly } => domain.origin() + Vec2::new(0.5 * lx, 0.5 * ly),
    }
}

fn seeds_inside(domain: &Domain, seeds: SeedSet, margin: f64) -> SeedSet {
    let depth = |p: Vec2| match domain.shape() {
        Shape::Disk { center, radius } => radius - (p - center).norm(),
        Shape::Rectangle { lx, ly } => {
            let d = p - domain.origin();
            d.x.min(lx - d.x).min(d.y).min(ly - d.y)
        }
    };
    let (points, weights): (Vec<Vec2>, Vec<f64>) = seeds
        .points
        .iter()
        .zip(&seeds.weights)
        .filter(|(p, _)| depth(**p) >= margin)
        .map(|(p, w)| (*p, *w))
        .unzip();
    let area = fixed_order_sum(weights.iter().copied());
    SeedSet {
        points,
        weights,
        area,
    }
}

#[derive(Debug, Serialize)]
struct OrderRow {
    study: &'static str,
    h: f64,
    error: f64,
    order: f64,
}

fn push_table(
    rows: &mut Vec<OrderRow>,
    report: &mut DiagnosticReport,
    study: &'static str,
    levels: &[(f64, f64)],
    min_order: Option<f64>,
) {
    for (i, &(h, error)) in levels.iter().enumerate() {
        let order = if i == 0 {
            f64::NAN
        } else {
            let (h0, e0) = levels[i - 1];
            (e0 / error).ln() / (h0 / h).ln()
        };
        if let Some(min) = min_order.filter(|_| i > 0) {
            report.check_ge(format!("{study}_order"), order, min, format!("h={h:.4e}"));
        }
        rows.push(OrderRow {
            study,
            h,
            error,
            order,
        });
    }
}
