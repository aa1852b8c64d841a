//! The window-by-window fixed-point construction for potential vorticity transport
//! and a semi-Lagrangian time marcher assembled from the same pieces.
//!
//! Within a window `[t_s, t_e]` the potential vorticity is stored at sample times
//! `t_s, t_s + dt, ...`. One outer iterate inverts every sample for its
//! streamfunction, builds a velocity linear in time between samples, traces
//! back-trajectories from each grid node and re-evaluates `q` at their feet.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic::{
    boundary_deviation, helmholtz, solve_dirichlet, EllipticSolver, LinearSolveSettings,
    StreamSolution, MASS_TOL_REL,
};
use crate::error::{Error, Result};
use crate::flowmap::{
    step_times, trace_paths, velocity_from_stream, SampledVelocity, VelocityProvider,
};
use crate::geometry::{
    fixed_order_sum, Domain, DomainSpec, Interpolation, ScalarField, Shape, Vec2, VectorField,
};

pub type SpaceTimeFn<T> = Arc<dyn Fn(Vec2, f64) -> T + Send + Sync>;

/// Source term `f` of the transport equation.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Constant(f64),
    /// `f = curl F` by centered differences of `F` with the given step.
    Curl {
        wind: SpaceTimeFn<Vec2>,
        step: f64,
    },
    Scalar(SpaceTimeFn<f64>),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => write!(f, "Zero"),
            Forcing::Constant(c) => write!(f, "Constant({c})"),
            Forcing::Curl { step, .. } => write!(f, "Curl {{ step: {step} }}"),
            Forcing::Scalar(_) => write!(f, "Scalar"),
        }
    }
}

impl Forcing {
    pub fn curl_of(wind: SpaceTimeFn<Vec2>, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "curl step must be positive, got {step}"
            )));
        }
        Ok(Forcing::Curl { wind, step })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero) || matches!(self, Forcing::Constant(c) if *c == 0.0)
    }

    pub fn eval(&self, p: Vec2, t: f64) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::Constant(c) => *c,
            Forcing::Curl { wind, step } => {
                let h = *step;
                let dx = Vec2::new(h, 0.0);
                let dy = Vec2::new(0.0, h);
                (wind(p + dx, t).y - wind(p - dx, t).y) / (2.0 * h)
                    - (wind(p + dy, t).x - wind(p - dy, t).x) / (2.0 * h)
            }
            Forcing::Scalar(f) => f(p, t),
        }
    }

    /// Largest `|f|` over the valid nodes at the given times.
    pub fn sampled_sup(&self, domain: &Domain, times: &[f64]) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::Constant(c) => c.abs(),
            _ => times
                .iter()
                .flat_map(|&t| {
                    domain
                        .valid()
                        .iter()
                        .map(move |&k| self.eval(domain.node(k), t).abs())
                })
                .fold(0.0, f64::max),
        }
    }
}

/// Forcing as it appears in a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ForcingSpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// Zonal wind `F = (A cos(k y), 0)`, so `f = A k sin(k y)`.
    Wind {
        amplitude: f64,
        wavenumber: f64,
    },
}

impl ForcingSpec {
    pub fn build(&self, domain: &Domain) -> Result<Forcing> {
        Ok(match *self {
            ForcingSpec::Zero => Forcing::Zero,
            ForcingSpec::Constant { value } => Forcing::Constant(value),
            ForcingSpec::Wind {
                amplitude,
                wavenumber,
            } => Forcing::curl_of(
                Arc::new(move |p: Vec2, _t| Vec2::new(amplitude * (wavenumber * p.y).cos(), 0.0)),
                domain.h(),
            )?,
        })
    }
}

/// Named initial streamfunctions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestField {
    Rest,
    Radial,
    Dipole,
    Rotation,
}

impl TestField {
    pub const ALL: [TestField; 4] = [
        TestField::Rest,
        TestField::Radial,
        TestField::Dipole,
        TestField::Rotation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestField::Rest => "rest",
            TestField::Radial => "radial",
            TestField::Dipole => "dipole",
            TestField::Rotation => "rotation",
        }
    }

    /// A streamfunction that is constant on the boundary nodes and has zero mean.
    pub fn psi0(self, domain: &Arc<Domain>) -> Result<ScalarField> {
        use std::f64::consts::PI;
        match (self, domain.shape()) {
            (TestField::Rest, _) => Ok(ScalarField::zeros(domain)),
            (TestField::Radial, Shape::Disk { center, radius }) => {
                let k = PI / radius;
                disk_profile(
                    domain,
                    |p| {
                        let r = (p - center).norm();
                        // 0.5 cos(kr): Laplacian -0.5 k (k cos(kr) + sin(kr) / r).
                        let sinc = if r < 1e-8 { k } else { (k * r).sin() / r };
                        -0.5 * k * (k * (k * r).cos() + sinc) - 0.5 * (k * r).cos()
                    },
                    -0.5,
                )
            }
            (TestField::Radial, Shape::Rectangle { lx, ly }) => Ok(profile(
                domain,
                |p| (PI * p.x / lx).sin() * (PI * p.y / ly).sin(),
                0.0,
            )),
            (TestField::Dipole, Shape::Disk { center, radius }) => disk_profile(
                domain,
                |p| {
                    // (1 - |d|^2 / R^2) d_y / R has Laplacian -8 d_y / R^3.
                    let d = p - center;
                    let g = (1.0 - d.dot(d) / (radius * radius)) * d.y / radius;
                    -8.0 * d.y / radius.powi(3) - g
                },
                0.0,
            ),
            (TestField::Dipole, Shape::Rectangle { lx, ly }) => Ok(profile(
                domain,
                |p| (PI * p.x / lx).sin() * (2.0 * PI * p.y / ly).sin(),
                0.0,
            )),
            (TestField::Rotation, Shape::Disk { center, radius }) => disk_profile(
                domain,
                |p| 2.0 - 0.5 * (p - center).dot(p - center),
                0.5 * radius * radius,
            ),
            (TestField::Rotation, Shape::Rectangle { .. }) => Err(Error::InvalidArgument(
                "the rotation field needs a disk domain".into(),
            )),
        }
    }
}

impl FromStr for TestField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestField::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown field `{s}` (expected rest, radial, dipole or rotation)"
                ))
            })
    }
}

/// `g` at interior nodes, `boundary` at boundary nodes, then the quadrature mean removed.
/// On a disk the boundary nodes sit up to a cell off the circle, so sampling a profile
/// and pinning those nodes to the boundary value leaves an `O(h)` jump that the
/// Laplacian turns into `O(1/h)` spikes. Instead the profile is the discrete solution
/// for its analytic `Delta g - g`, which keeps `q0` smooth up to the wall.
fn disk_profile(
    domain: &Arc<Domain>,
    helmholtz_g: impl Fn(Vec2) -> f64,
    boundary: f64,
) -> Result<ScalarField> {
    let settings = LinearSolveSettings {
        tolerance: 1e-13,
        ..LinearSolveSettings::default()
    };
    let rhs = ScalarField::from_fn(domain, helmholtz_g);
    let f = solve_dirichlet(domain, &rhs, boundary, &settings)?;
    let mean = f.mean();
    Ok(f.map(|_, v| v - mean))
}

fn profile(domain: &Arc<Domain>, g: impl Fn(Vec2) -> f64, boundary: f64) -> ScalarField {
    let mut f = ScalarField::from_fn(domain, g);
    for &k in domain.boundary() {
        f.values_mut()[k] = boundary;
    }
    let mean = f.mean();
    f.map(|_, v| v - mean)
}

/// `q0 = Delta_h psi0 - psi0 + beta y` with the solver's stencil. Boundary nodes,
/// where the stencil is unavailable, take the average over the nearest interior nodes.
pub fn initial_pv(psi0: &ScalarField, beta: f64) -> Result<ScalarField> {
    let domain = psi0.domain();
    let scale = psi0.max_abs().max(1.0);
    let l = psi0.get(domain.boundary()[0]);
    let dev = boundary_deviation(psi0, l);
    if dev > 1e-10 * scale {
        return Err(Error::InvalidInitialData(format!(
            "not constant on the boundary (deviation {dev:e})"
        )));
    }
    let mass = psi0.integrate();
    if mass.abs() > MASS_TOL_REL * domain.area() {
        return Err(Error::InvalidInitialData(format!(
            "mean is not zero (integral {mass:e})"
        )));
    }
    let mut q = helmholtz(psi0);
    {
        let v = q.values_mut();
        for &k in domain.interior() {
            v[k] += beta * domain.node(k).y;
        }
    }
    let fill: Vec<(usize, f64)> = domain
        .boundary()
        .iter()
        .map(|&k| (k, nearest_interior_average(domain, q.values(), k)))
        .collect();
    for (k, v) in fill {
        q.values_mut()[k] = v;
    }
    Ok(q)
}

fn nearest_interior_average(domain: &Domain, values: &[f64], k: usize) -> f64 {
    let (i, j) = domain.ij(k);
    let (i, j) = (i as isize, j as isize);
    for ring in 1..=domain.nx().max(domain.ny()) as isize {
        let mut acc = Vec::new();
        for dj in -ring..=ring {
            for di in -ring..=ring {
                if di.abs().max(dj.abs()) != ring {
                    continue;
                }
                let (ii, jj) = (i + di, j + dj);
                if ii < 0 || jj < 0 || ii >= domain.nx() as isize || jj >= domain.ny() as isize {
                    continue;
                }
                let kk = domain.index(ii as usize, jj as usize);
                if domain.unknown_of(kk).is_some() {
                    acc.push(values[kk]);
                }
            }
        }
        if !acc.is_empty() {
            return fixed_order_sum(acc.iter().copied()) / acc.len() as f64;
        }
    }
    values[k]
}

/// `q(x, t) = q_start(X) + int f` along the back-trajectory from `(x, t)` to time
/// `t_start`, trapezoid in time on the trajectory steps. Returns the field and the
/// feet `X`, one per valid node.
pub fn advect_pv<P: VelocityProvider + ?Sized>(
    q_start: &ScalarField,
    velocity: &P,
    forcing: &Forcing,
    t_start: f64,
    t: f64,
    dt: f64,
    order: Interpolation,
) -> Result<(ScalarField, Vec<Vec2>)> {
    let domain = q_start.domain();
    let nodes: Vec<Vec2> = domain.valid().iter().map(|&k| domain.node(k)).collect();
    let paths =
        trace_paths(velocity, &nodes, t, t_start, dt).map_err(Error::stage("trajectories"))?;
    let mut q = ScalarField::zeros(domain);
    let mut feet = Vec::with_capacity(nodes.len());
    for (&k, path) in domain.valid().iter().zip(&paths.paths) {
        let foot = *path.last().expect("paths are never empty");
        let mut value = q_start
            .interpolate(foot, order)
            .map_err(Error::stage("advection"))?;
        if !forcing.is_zero() {
            let samples = path
                .iter()
                .zip(&paths.times)
                .map(|(&p, &s)| forcing.eval(p, s))
                .collect::<Vec<_>>();
            value += fixed_order_sum(
                samples
                    .windows(2)
                    .zip(paths.times.windows(2))
                    .map(|(f, s)| 0.5 * (s[0] - s[1]).abs() * (f[0] + f[1])),
            );
        }
        q.values_mut()[k] = value;
        feet.push(foot);
    }
    q.time = Some(t);
    Ok((q, feet))
}

/// Everything about a run except the initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub t_end: f64,
    pub dt: f64,
    pub t_window: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Outer iterates performed per window even when the tolerance is met earlier.
    pub min_outer: usize,
    pub beta: f64,
    pub forcing: ForcingSpec,
    pub interpolation: Interpolation,
    /// Snapshot every this many samples of cadence `dt`.
    pub output_every: usize,
    pub solver: LinearSolveSettings,
}

impl RunConfig {
    pub fn new(domain: DomainSpec, t_end: f64, dt: f64) -> Self {
        Self {
            domain,
            t_end,
            dt,
            t_window: dt,
            outer_tol: 1e-8,
            max_outer: 50,
            min_outer: 1,
            beta: 1.0,
            forcing: ForcingSpec::Zero,
            interpolation: Interpolation::Bilinear,
            output_every: 1,
            solver: LinearSolveSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.dt > self.t_window {
            return bad(format!(
                "dt = {} exceeds t_window = {}",
                self.dt, self.t_window
            ));
        }
        if !(self.t_window <= self.t_end && self.t_end.is_finite()) {
            return bad(format!(
                "t_window = {} exceeds t_end = {}",
                self.t_window, self.t_end
            ));
        }
        if self.outer_tol.is_nan() || self.outer_tol <= 0.0 {
            return bad(format!(
                "outer_tol must be positive, got {}",
                self.outer_tol
            ));
        }
        if self.max_outer == 0 || self.min_outer > self.max_outer {
            return bad(format!(
                "need 1 <= max_outer and min_outer <= max_outer, got {} and {}",
                self.max_outer, self.min_outer
            ));
        }
        if self.output_every == 0 {
            return bad("output_every must be at least 1".into());
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite".into());
        }
        self.solver.validate()
    }
}

/// One outer iterate's fields on a window.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub n: usize,
    pub times: Vec<f64>,
    pub q: Vec<ScalarField>,
    pub streams: Vec<StreamSolution>,
    pub velocities: Vec<VectorField>,
    /// Back-trajectory feet from the window end that produced `q`.
    pub feet: Option<Vec<Vec2>>,
    /// `|M|^{-1} ||q^n - q^{n-1}||_{L1}` at the window end, one entry per iterate.
    pub distances: Vec<f64>,
    /// Mean displacement between successive back-trajectory feet from the window end.
    pub flow_distances: Vec<f64>,
}

impl SchemeState {
    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("non-empty window")
    }

    pub fn q_end(&self) -> &ScalarField {
        self.q.last().expect("non-empty window")
    }

    pub fn stream_end(&self) -> &StreamSolution {
        self.streams.last().expect("non-empty window")
    }

    /// Successive distance ratios `d_{n+1} / d_n` while `d_n` is above the rounding floor.
    pub fn ratios(&self) -> Vec<f64> {
        distance_ratios(&self.distances)
    }
}

/// Distances at or below this are treated as converged to rounding.
pub const DISTANCE_FLOOR: f64 = 1e-13;

pub fn distance_ratios(distances: &[f64]) -> Vec<f64> {
    distances
        .windows(2)
        .take_while(|w| w[0] > DISTANCE_FLOOR && w[1] > DISTANCE_FLOOR)
        .map(|w| w[1] / w[0])
        .collect()
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub q: ScalarField,
    pub stream: StreamSolution,
    pub u: VectorField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub start: f64,
    pub end: f64,
    pub iterations: usize,
    pub converged: bool,
    pub distances: Vec<f64>,
    pub flow_distances: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct History {
    pub beta: f64,
    pub snapshots: Vec<Snapshot>,
    pub windows: Vec<WindowReport>,
}

impl History {
    pub fn q0(&self) -> &ScalarField {
        &self.snapshots[0].q
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("history holds the initial snapshot")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub t_window: f64,
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

/// Largest window length below which every swept window contracts.
pub fn contraction_threshold(rows: &[ContractionRow]) -> Option<f64> {
    let mut sorted: Vec<&ContractionRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.t_window.total_cmp(&b.t_window));
    sorted
        .iter()
        .take_while(|r| r.max_ratio < 1.0)
        .last()
        .map(|r| r.t_window)
}

#[derive(Debug, Clone, Copy)]
struct Schedule {
    tol: f64,
    min_outer: usize,
    max_outer: usize,
    require_convergence: bool,
}

pub struct Scheme {
    config: RunConfig,
    domain: Arc<Domain>,
    solver: EllipticSolver,
    forcing: Forcing,
}

impl Scheme {
    pub fn new(config: RunConfig) -> Result<Self> {
        let domain = Domain::build(config.domain)?;
        let forcing = config.forcing.build(&domain)?;
        Self::assemble(config, domain, forcing)
    }

    /// Like [`Scheme::new`] with forcing given directly instead of by the config.
    pub fn with_forcing(config: RunConfig, forcing: Forcing) -> Result<Self> {
        let domain = Domain::build(config.domain)?;
        Self::assemble(config, domain, forcing)
    }

    fn assemble(config: RunConfig, domain: Arc<Domain>, forcing: Forcing) -> Result<Self> {
        config.validate()?;
        let solver = EllipticSolver::new(&domain, config.solver, config.beta)?;
        Ok(Self {
            config,
            domain,
            solver,
            forcing,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn solver(&self) -> &EllipticSolver {
        &self.solver
    }

    pub fn forcing(&self) -> &Forcing {
        &self.forcing
    }

    pub fn initial_pv(&self, psi0: &ScalarField) -> Result<ScalarField> {
        if !psi0.domain().same_as(&self.domain) {
            return Err(Error::DomainMismatch);
        }
        initial_pv(psi0, self.config.beta)
    }

    fn solve(&self, q: &ScalarField) -> Result<(StreamSolution, VectorField)> {
        let stream = self
            .solver
            .solve_constrained(q)
            .map_err(Error::stage("elliptic solve"))?;
        let u = velocity_from_stream(&stream);
        Ok((stream, u))
    }

    /// `q^0(t) = q_start` at every sample of `[start, end]`.
    pub fn initial_state(
        &self,
        q_start: &ScalarField,
        start: f64,
        end: f64,
    ) -> Result<SchemeState> {
        if !q_start.domain().same_as(&self.domain) {
            return Err(Error::DomainMismatch);
        }
        let times = step_times(start, end, self.config.dt)?;
        let (stream, u) = self.solve(q_start)?;
        let m = times.len();
        let q = times
            .iter()
            .map(|&t| q_start.clone().with_time(t))
            .collect();
        Ok(SchemeState {
            n: 0,
            times,
            q,
            streams: vec![stream; m],
            velocities: vec![u; m],
            feet: None,
            distances: Vec::new(),
            flow_distances: Vec::new(),
        })
    }

    /// One sweep: velocity from the current iterate, back-trajectories from every node
    /// at every sample time, new potential vorticity from the window-start data.
    pub fn outer_iterate(&self, state: &SchemeState) -> Result<SchemeState> {
        let order = self.config.interpolation;
        let u = SampledVelocity::new(state.times.clone(), state.velocities.clone(), order)?;
        let start = state.start();
        let q_start = &state.q[0];
        let m = state.times.len();
        let mut q = Vec::with_capacity(m);
        let mut streams = Vec::with_capacity(m);
        let mut velocities = Vec::with_capacity(m);
        q.push(q_start.clone());
        streams.push(state.streams[0].clone());
        velocities.push(state.velocities[0].clone());
        let mut feet = Vec::new();
        for &t in &state.times[1..] {
            let (qj, f) = advect_pv(q_start, &u, &self.forcing, start, t, self.config.dt, order)?;
            let (s, v) = self.solve(&qj)?;
            q.push(qj);
            streams.push(s);
            velocities.push(v);
            feet = f;
        }
        let area = self.domain.area();
        let distance = q[m - 1].l1_distance(state.q_end())? / area;
        let mut distances = state.distances.clone();
        distances.push(distance);
        let mut flow_distances = state.flow_distances.clone();
        if let Some(old) = &state.feet {
            let w = self.domain.weights();
            let d = fixed_order_sum(
                self.domain
                    .valid()
                    .iter()
                    .zip(old.iter().zip(&feet))
                    .map(|(&k, (a, b))| w[k] * (*a - *b).norm()),
            ) / area;
            flow_distances.push(d);
        }
        Ok(SchemeState {
            n: state.n + 1,
            times: state.times.clone(),
            q,
            streams,
            velocities,
            feet: Some(feet),
            distances,
            flow_distances,
        })
    }

    fn run_window(
        &self,
        q_start: &ScalarField,
        start: f64,
        end: f64,
        schedule: Schedule,
    ) -> Result<(SchemeState, WindowReport)> {
        let mut state = self.initial_state(q_start, start, end)?;
        let converged = loop {
            state = self.outer_iterate(&state)?;
            let d = *state.distances.last().expect("one iterate done");
            log::debug!(
                "window [{start}, {end}] iterate {}: distance {d:e}",
                state.n
            );
            if d <= schedule.tol && state.n >= schedule.min_outer {
                break true;
            }
            if state.n >= schedule.max_outer {
                if schedule.require_convergence {
                    return Err(Error::WindowNotConverged {
                        start,
                        end,
                        iterations: state.n,
                        distance: d,
                    });
                }
                break d <= schedule.tol;
            }
        };
        let report = WindowReport {
            start,
            end,
            iterations: state.n,
            converged,
            distances: state.distances.clone(),
            flow_distances: state.flow_distances.clone(),
        };
        Ok((state, report))
    }

    fn run_windows(&self, q0: &ScalarField, t_window: f64, schedule: Schedule) -> Result<History> {
        let (stream, u) = self.solve(q0)?;
        let mut snapshots = vec![Snapshot {
            t: 0.0,
            q: q0.clone().with_time(0.0),
            stream,
            u,
        }];
        let mut windows = Vec::new();
        let bounds = step_times(0.0, self.config.t_end, t_window)?;
        let mut q_start = q0.clone();
        let mut sample = 0usize;
        for (w, pair) in bounds.windows(2).enumerate() {
            let (state, report) = self.run_window(&q_start, pair[0], pair[1], schedule)?;
            let last_window = w + 2 == bounds.len();
            let m = state.times.len();
            for j in 1..m {
                sample += 1;
                if sample.is_multiple_of(self.config.output_every) || (last_window && j == m - 1) {
                    snapshots.push(Snapshot {
                        t: state.times[j],
                        q: state.q[j].clone(),
                        stream: state.streams[j].clone(),
                        u: state.velocities[j].clone(),
                    });
                }
            }
            q_start = state.q_end().clone();
            windows.push(report);
        }
        Ok(History {
            beta: self.config.beta,
            snapshots,
            windows,
        })
    }

    /// Windows of length `t_window`, each iterated to `outer_tol`.
    pub fn run_fixed_point(&self, q0: &ScalarField) -> Result<History> {
        self.run_windows(
            q0,
            self.config.t_window,
            Schedule {
                tol: self.config.outer_tol,
                min_outer: self.config.min_outer,
                max_outer: self.config.max_outer,
                require_convergence: true,
            },
        )
    }

    /// Windows of one step with a single outer iterate each, so the velocity is frozen
    /// at the step start.
    pub fn time_march(&self, q0: &ScalarField) -> Result<History> {
        self.run_windows(
            q0,
            self.config.dt,
            Schedule {
                tol: self.config.outer_tol,
                min_outer: 1,
                max_outer: 1,
                require_convergence: false,
            },
        )
    }

    /// A single window `[0, t_w]` for each `t_w`, iterated `iterations` times.
    pub fn contraction_sweep(
        &self,
        q0: &ScalarField,
        windows: &[f64],
        iterations: usize,
    ) -> Result<Vec<ContractionRow>> {
        windows
            .iter()
            .map(|&t_w| {
                let schedule = Schedule {
                    tol: 0.0,
                    min_outer: iterations,
                    max_outer: iterations,
                    require_convergence: false,
                };
                let (state, _) = self.run_window(q0, 0.0, t_w, schedule)?;
                let ratios = state.ratios();
                let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
                Ok(ContractionRow {
                    t_window: t_w,
                    distances: state.distances,
                    ratios,
                    max_ratio,
                })
            })
            .collect()
    }
}

/// `max|q0| + t max|f|`.
pub fn transport_bound(q0: &ScalarField, forcing_sup: f64, t: f64) -> f64 {
    q0.max_abs() + t * forcing_sup
}
