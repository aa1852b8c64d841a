//! Lagrangian flow maps: velocity from a streamfunction, RK4 trajectories, the
//! successive-substitution (Picard) construction and area preservation checks.

use std::sync::Arc;

use rayon::prelude::*;

use crate::elliptic::StreamSolution;
use crate::error::{Error, Result};
use crate::geometry::{fixed_order_sum, Domain, Interpolation, ScalarField, Vec2, VectorField};

/// Velocity as a function of position and time.
pub trait VelocityProvider: Sync {
    fn velocity(&self, p: Vec2, t: f64) -> Result<Vec2>;

    /// Domain the trajectories are confined to, if any.
    fn domain(&self) -> Option<&Arc<Domain>> {
        None
    }
}

/// Closed-form velocity, optionally confined to a domain.
pub struct AnalyticVelocity<F> {
    f: F,
    domain: Option<Arc<Domain>>,
}

impl<F: Fn(Vec2, f64) -> Vec2 + Sync> AnalyticVelocity<F> {
    pub fn new(f: F) -> Self {
        Self { f, domain: None }
    }

    pub fn confined(f: F, domain: &Arc<Domain>) -> Self {
        Self {
            f,
            domain: Some(Arc::clone(domain)),
        }
    }
}

impl<F: Fn(Vec2, f64) -> Vec2 + Sync> VelocityProvider for AnalyticVelocity<F> {
    fn velocity(&self, p: Vec2, t: f64) -> Result<Vec2> {
        let p = match &self.domain {
            Some(d) => d.admit(p)?,
            None => p,
        };
        Ok((self.f)(p, t))
    }

    fn domain(&self) -> Option<&Arc<Domain>> {
        self.domain.as_ref()
    }
}

/// Time-independent gridded velocity.
pub struct SteadyVelocity {
    field: VectorField,
    order: Interpolation,
}

impl SteadyVelocity {
    pub fn new(field: VectorField, order: Interpolation) -> Self {
        Self { field, order }
    }
}

impl VelocityProvider for SteadyVelocity {
    fn velocity(&self, p: Vec2, _t: f64) -> Result<Vec2> {
        self.field.interpolate(p, self.order)
    }

    fn domain(&self) -> Option<&Arc<Domain>> {
        Some(self.field.domain())
    }
}

/// Gridded velocity sampled at increasing times, linear in time between samples and
/// held constant outside the sampled range.
pub struct SampledVelocity {
    times: Vec<f64>,
    fields: Vec<VectorField>,
    order: Interpolation,
}

impl SampledVelocity {
    pub fn new(times: Vec<f64>, fields: Vec<VectorField>, order: Interpolation) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::InvalidArgument(
                "sampled velocity needs one field per sample time".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sample times must increase".into()));
        }
        Ok(Self {
            times,
            fields,
            order,
        })
    }
}

impl VelocityProvider for SampledVelocity {
    fn velocity(&self, p: Vec2, t: f64) -> Result<Vec2> {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.fields[0].interpolate(p, self.order);
        }
        if t >= self.times[n - 1] {
            return self.fields[n - 1].interpolate(p, self.order);
        }
        let j = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let w = (t - t0) / (t1 - t0);
        let a = self.fields[j].interpolate(p, self.order)?;
        if w == 0.0 {
            return Ok(a);
        }
        let b = self.fields[j + 1].interpolate(p, self.order)?;
        Ok(a * (1.0 - w) + b * w)
    }

    fn domain(&self) -> Option<&Arc<Domain>> {
        Some(self.fields[0].domain())
    }
}

/// `u = perp grad psi = (-d psi/dy, d psi/dx)`.
pub fn velocity_from_stream(sol: &StreamSolution) -> VectorField {
    perp_gradient(&sol.psi)
}

/// Perp-gradient by centered differences, second-order one-sided where a centered
/// stencil leaves the valid nodes, first-order one-sided as a last resort.
pub fn perp_gradient(psi: &ScalarField) -> VectorField {
    let domain = psi.domain();
    let (gx, gy) = gradient(psi);
    VectorField {
        u1: ScalarField::new(domain, gy.into_iter().map(|v| -v).collect()).expect("sized"),
        u2: ScalarField::new(domain, gx).expect("sized"),
    }
}

/// Nodal gradient components with the stencils of [`perp_gradient`].
pub fn gradient(psi: &ScalarField) -> (Vec<f64>, Vec<f64>) {
    let domain = psi.domain();
    let (nx, ny) = (domain.nx(), domain.ny());
    let f = psi.values();
    let mut gx = vec![0.0; domain.len()];
    let mut gy = vec![0.0; domain.len()];
    for &k in domain.valid() {
        let (i, j) = domain.ij(k);
        gx[k] = directional(domain, f, k, i, nx, 1, domain.hx());
        gy[k] = directional(domain, f, k, j, ny, nx, domain.hy());
    }
    (gx, gy)
}

fn directional(
    domain: &Domain,
    f: &[f64],
    k: usize,
    pos: usize,
    len: usize,
    stride: usize,
    h: f64,
) -> f64 {
    let ok = |offset: isize| -> bool {
        let p = pos as isize + offset;
        p >= 0
            && p < len as isize
            && domain.is_valid((k as isize + offset * stride as isize) as usize)
    };
    let at = |offset: isize| f[(k as isize + offset * stride as isize) as usize];
    match (ok(-1), ok(1)) {
        (true, true) => (at(1) - at(-1)) / (2.0 * h),
        (false, true) if ok(2) => (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h),
        (false, true) => (at(1) - at(0)) / h,
        (true, false) if ok(-2) => (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h),
        (true, false) => (at(0) - at(-1)) / h,
        (false, false) => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStatus {
    Active,
    ProjectedToBoundary,
}

#[derive(Debug, Clone)]
pub struct TrajectorySet {
    pub seeds: Vec<Vec2>,
    pub positions: Vec<Vec2>,
    pub t0: f64,
    pub time: f64,
    pub dt: f64,
    pub status: Vec<SeedStatus>,
}

/// Trajectories with every intermediate step retained.
#[derive(Debug, Clone)]
pub struct TrajectoryPaths {
    pub times: Vec<f64>,
    /// `paths[seed][step]`.
    pub paths: Vec<Vec<Vec2>>,
    pub status: Vec<SeedStatus>,
}

/// Step times from `t0` to `t1` with nominal step `dt`; the last step may be partial.
pub fn step_times(t0: f64, t1: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need finite times and dt > 0, got t0 = {t0}, t1 = {t1}, dt = {dt}"
        )));
    }
    let span = (t1 - t0).abs();
    if span == 0.0 {
        return Ok(vec![t0]);
    }
    let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    let sign = (t1 - t0).signum();
    let mut times: Vec<f64> = (0..steps).map(|k| t0 + sign * k as f64 * dt).collect();
    times.push(t1);
    Ok(times)
}

// Stage points are pulled back onto the closure of the domain; only the step's end
// point is subject to the escape rule.
fn rk4_step<P: VelocityProvider + ?Sized>(u: &P, p: Vec2, t: f64, h: f64) -> Result<Vec2> {
    let at = |q: Vec2, s: f64| match u.domain() {
        Some(d) if !d.contains(q) => u.velocity(d.project(q), s),
        _ => u.velocity(q, s),
    };
    let k1 = at(p, t)?;
    let k2 = at(p + k1 * (0.5 * h), t + 0.5 * h)?;
    let k3 = at(p + k2 * (0.5 * h), t + 0.5 * h)?;
    let k4 = at(p + k3 * h, t + h)?;
    Ok(p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn confine(domain: Option<&Arc<Domain>>, p: Vec2, seed: usize) -> Result<(Vec2, bool)> {
    match domain {
        None => Ok((p, false)),
        Some(d) => {
            if d.contains(p) {
                Ok((p, false))
            } else {
                d.admit(p)
                    .map(|q| (q, true))
                    .map_err(|_| Error::TrajectoryEscaped {
                        seed,
                        x: p.x,
                        y: p.y,
                    })
            }
        }
    }
}

/// Halvings of a step tried before an overshooting trajectory counts as escaped.
const MAX_SPLITS: u32 = 3;

// One step from t0 to t1. A step whose end lands more than a cell outside is retried
// as two half steps, which keeps near-wall trajectories alive when |u| dt exceeds h.
fn advance<P: VelocityProvider + ?Sized>(
    u: &P,
    domain: Option<&Arc<Domain>>,
    seed: usize,
    p: Vec2,
    t0: f64,
    t1: f64,
    splits: u32,
) -> Result<(Vec2, bool)> {
    let next = rk4_step(u, p, t0, t1 - t0).map_err(|e| match e {
        Error::OutsideDomain { x, y } => Error::TrajectoryEscaped { seed, x, y },
        other => other,
    })?;
    match confine(domain, next, seed) {
        Err(Error::TrajectoryEscaped { .. }) if splits > 0 => {
            let mid = 0.5 * (t0 + t1);
            let (q, a) = advance(u, domain, seed, p, t0, mid, splits - 1)?;
            let (r, b) = advance(u, domain, seed, q, mid, t1, splits - 1)?;
            Ok((r, a || b))
        }
        other => other,
    }
}

fn trace_one<P: VelocityProvider + ?Sized>(
    u: &P,
    seed: usize,
    a: Vec2,
    times: &[f64],
    keep_path: bool,
) -> Result<(Vec<Vec2>, SeedStatus)> {
    let domain = u.domain();
    let mut p = a;
    let mut status = SeedStatus::Active;
    let mut path = Vec::with_capacity(if keep_path { times.len() } else { 1 });
    path.push(p);
    for w in times.windows(2) {
        let (q, projected) = advance(u, domain, seed, p, w[0], w[1], MAX_SPLITS)?;
        if projected {
            status = SeedStatus::ProjectedToBoundary;
        }
        p = q;
        if keep_path {
            path.push(p);
        } else {
            path[0] = p;
        }
    }
    Ok((path, status))
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Classical RK4 for every seed from `t0` to `t1` (either direction).
pub fn integrate_rk4<P: VelocityProvider + ?Sized>(
    u: &P,
    seeds: &[Vec2],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<TrajectorySet> {
    let times = step_times(t0, t1, dt)?;
    let results: Vec<_> = seeds
        .par_iter()
        .enumerate()
        .map(|(s, &a)| trace_one(u, s, a, &times, false))
        .collect();
    let traced = first_error(results)?;
    let (positions, status) = traced.into_iter().map(|(p, st)| (p[0], st)).unzip();
    Ok(TrajectorySet {
        seeds: seeds.to_vec(),
        positions,
        t0,
        time: t1,
        dt,
        status,
    })
}

/// Like [`integrate_rk4`], keeping every step.
pub fn trace_paths<P: VelocityProvider + ?Sized>(
    u: &P,
    seeds: &[Vec2],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<TrajectoryPaths> {
    let times = step_times(t0, t1, dt)?;
    let results: Vec<_> = seeds
        .par_iter()
        .enumerate()
        .map(|(s, &a)| trace_one(u, s, a, &times, true))
        .collect();
    let traced = first_error(results)?;
    let (paths, status) = traced.into_iter().unzip();
    Ok(TrajectoryPaths {
        times,
        paths,
        status,
    })
}

/// Seeds with quadrature weights for the `(1/|M|) int ... da` averages.
#[derive(Debug, Clone)]
pub struct SeedSet {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
    pub area: f64,
}

impl SeedSet {
    /// Centers of grid cells lying inside the domain, weighted by cell area.
    pub fn cell_centers(domain: &Domain) -> Self {
        let (hx, hy) = (domain.hx(), domain.hy());
        let o = domain.origin();
        let mut points = Vec::new();
        for j in 0..domain.ny() - 1 {
            for i in 0..domain.nx() - 1 {
                let p = Vec2::new(o.x + (i as f64 + 0.5) * hx, o.y + (j as f64 + 0.5) * hy);
                if domain.contains(p) {
                    points.push(p);
                }
            }
        }
        let weights = vec![hx * hy; points.len()];
        Self {
            points,
            weights,
            area: domain.area(),
        }
    }

    /// `(1/|M|) sum_a w_a values_a`.
    pub fn average(&self, values: &[f64]) -> f64 {
        fixed_order_sum(self.weights.iter().zip(values).map(|(w, v)| w * v)) / self.area
    }
}

/// Record of a Picard construction. Entry `k - 1` of `rho` belongs to iterate `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardTrace {
    pub rho: Vec<f64>,
    /// Per-seed displacement `|Phi^k_t(a) - Phi^{k-1}_t(a)|` of the last iterate.
    pub delta: Vec<f64>,
}

impl PicardTrace {
    pub fn iterations(&self) -> usize {
        self.rho.len()
    }

    pub fn last_rho(&self) -> f64 {
        self.rho.last().copied().unwrap_or(f64::NAN)
    }

    /// `e^k = sup_{j >= k} rho^j` over the completed iterates.
    pub fn envelope(&self) -> Vec<f64> {
        let mut e = self.rho.clone();
        for k in (0..e.len().saturating_sub(1)).rev() {
            e[k] = e[k].max(e[k + 1]);
        }
        e
    }

    /// Geometric decay ratio from a least-squares fit of `ln rho^k` against `k`,
    /// ignoring iterates at the rounding floor.
    pub fn fitted_ratio(&self) -> Option<f64> {
        let first = *self.rho.first()?;
        let pts: Vec<(f64, f64)> = self
            .rho
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 1e-13 * first && r > 0.0)
            .map(|(k, &r)| ((k + 1) as f64, r.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        Some((sxy / sxx).exp())
    }

    /// Envelope `A (1/2)^k / k^{3/2} + B e^{-k/2}` through the data: `A` matches the
    /// first iterate, `B` is the smallest constant covering every later one.
    pub fn decay_envelope(&self) -> DecayEnvelope {
        let e = self.envelope();
        let shape = |k: f64| 0.5f64.powf(k) / k.powf(1.5);
        let a = e.first().map_or(0.0, |&e1| e1 / shape(1.0));
        let b = e
            .iter()
            .enumerate()
            .map(|(i, &ek)| {
                let k = (i + 1) as f64;
                ((ek - a * shape(k)).max(0.0)) * (0.5 * k).exp()
            })
            .fold(0.0, f64::max);
        DecayEnvelope { a, b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayEnvelope {
    pub a: f64,
    pub b: f64,
}

impl DecayEnvelope {
    pub fn bound(&self, k: usize) -> f64 {
        let k = k as f64;
        self.a * 0.5f64.powf(k) / k.powf(1.5) + self.b * (-0.5 * k).exp()
    }
}

/// Successive substitution `Phi^k_t(a) = a + int_0^t u(Phi^{k-1}_s(a), s) ds` from
/// `Phi^0 = a`, with the time integral by the composite trapezoid rule on steps of
/// `dt`. Stops once `rho^k <= tol`.
pub fn picard_iterate<P: VelocityProvider + ?Sized>(
    u: &P,
    seeds: &SeedSet,
    t: f64,
    dt: f64,
    k_max: usize,
    tol: f64,
) -> Result<(TrajectorySet, PicardTrace)> {
    if k_max == 0 || tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidArgument(
            "picard iteration needs k_max >= 1 and tol >= 0".into(),
        ));
    }
    let times = step_times(0.0, t, dt)?;
    let domain = u.domain();
    let mut paths: Vec<Vec<Vec2>> = seeds.points.iter().map(|&a| vec![a; times.len()]).collect();
    let mut trace = PicardTrace {
        rho: Vec::new(),
        delta: Vec::new(),
    };
    let last = times.len() - 1;
    for _k in 1..=k_max {
        let results: Vec<Result<Vec<Vec2>>> = paths
            .par_iter()
            .enumerate()
            .map(|(s, old)| {
                let a = old[0];
                let vel = old
                    .iter()
                    .zip(&times)
                    .map(|(&p, &tt)| {
                        u.velocity(p, tt).map_err(|e| match e {
                            Error::OutsideDomain { x, y } => {
                                Error::TrajectoryEscaped { seed: s, x, y }
                            }
                            other => other,
                        })
                    })
                    .collect::<Result<Vec<Vec2>>>()?;
                let mut new = Vec::with_capacity(times.len());
                new.push(a);
                let mut acc = Vec2::ZERO;
                for j in 1..times.len() {
                    acc += (vel[j - 1] + vel[j]) * (0.5 * (times[j] - times[j - 1]));
                    let (p, _) = confine(domain, a + acc, s)?;
                    new.push(p);
                }
                Ok(new)
            })
            .collect();
        let new_paths = first_error(results)?;
        let delta: Vec<f64> = new_paths
            .iter()
            .zip(&paths)
            .map(|(n, o)| (n[last] - o[last]).norm())
            .collect();
        let rho = seeds.average(&delta);
        trace.rho.push(rho);
        trace.delta = delta;
        paths = new_paths;
        if rho <= tol {
            let positions = paths.iter().map(|p| p[last]).collect();
            let flow = TrajectorySet {
                seeds: seeds.points.clone(),
                positions,
                t0: 0.0,
                time: t,
                dt,
                status: vec![SeedStatus::Active; seeds.points.len()],
            };
            return Ok((flow, trace));
        }
    }
    Err(Error::PicardNotConverged(Box::new(trace)))
}

/// Polygonal cells over a vertex list; vertices double as trajectory seeds.
#[derive(Debug, Clone)]
pub struct CellMesh {
    pub vertices: Vec<Vec2>,
    pub cells: Vec<Vec<usize>>,
}

impl CellMesh {
    /// `n x n` quadrilaterals covering the box `[lo, hi]`.
    pub fn lattice(lo: Vec2, hi: Vec2, n: usize) -> Self {
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push(Vec2::new(
                    lo.x + (hi.x - lo.x) * i as f64 / n as f64,
                    lo.y + (hi.y - lo.y) * j as f64 / n as f64,
                ));
            }
        }
        let mut cells = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let v = j * (n + 1) + i;
                cells.push(vec![v, v + 1, v + n + 2, v + n + 1]);
            }
        }
        Self { vertices, cells }
    }
}

fn polygon_area(points: &[Vec2], cell: &[usize]) -> f64 {
    let m = cell.len();
    0.5 * (0..m)
        .map(|i| points[cell[i]].cross(points[cell[(i + 1) % m]]))
        .sum::<f64>()
}

/// Advected-to-initial area ratio per cell. `flow` must have been seeded with
/// `mesh.vertices`.
pub fn area_check(mesh: &CellMesh, flow: &TrajectorySet) -> Result<Vec<f64>> {
    if flow.positions.len() != mesh.vertices.len() {
        return Err(Error::InvalidArgument(
            "flow was not seeded with the mesh vertices".into(),
        ));
    }
    mesh.cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            if cell.len() < 3 {
                return Err(Error::InvalidArgument(format!(
                    "cell {c} has fewer than 3 vertices"
                )));
            }
            let a0 = polygon_area(&mesh.vertices, cell);
            let scale = cell
                .iter()
                .map(|&v| (mesh.vertices[v] - mesh.vertices[cell[0]]).norm())
                .fold(0.0, f64::max);
            if a0.abs() <= 1e-12 * scale * scale || a0 == 0.0 {
                return Err(Error::InvalidArgument(format!("cell {c} is degenerate")));
            }
            Ok(polygon_area(&flow.positions, cell) / a0)
        })
        .collect()
}
