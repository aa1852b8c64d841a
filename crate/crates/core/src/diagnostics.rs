//! Executable checks on discrete solutions: weak-form residuals, the uniqueness
//! energy, quasi-Lipschitz and Hölder estimates, the boundary-constant bound and
//! potential vorticity extrema.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{laplacian, EllipticSolver, MASS_TOL_REL};
use crate::error::{Error, Result};
use crate::flowmap::{gradient, perp_gradient};
use crate::geometry::{
    fixed_order_sum, Domain, Interpolation, ScalarField, Shape, Vec2, VectorField,
};
use crate::kernels::chi;
use crate::scheme::{Forcing, Snapshot};

/// One measured quantity and the bound it was held against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    pub context: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub rows: Vec<DiagnosticRow>,
}

impl DiagnosticReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `value <= bound`. NaN never passes.
    pub fn check_le(
        &mut self,
        name: impl Into<String>,
        value: f64,
        bound: f64,
        context: impl Into<String>,
    ) {
        self.rows.push(DiagnosticRow {
            name: name.into(),
            value,
            bound,
            pass: value <= bound,
            context: context.into(),
        });
    }

    /// Records `value >= bound`. NaN never passes.
    pub fn check_ge(
        &mut self,
        name: impl Into<String>,
        value: f64,
        bound: f64,
        context: impl Into<String>,
    ) {
        self.rows.push(DiagnosticRow {
            name: name.into(),
            value,
            bound,
            pass: value >= bound,
            context: context.into(),
        });
    }

    /// True when there is at least one row and every row passed.
    pub fn all_pass(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &DiagnosticRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn extend(&mut self, other: DiagnosticReport) {
        self.rows.extend(other.rows);
    }
}

/// The parts of a snapshot the diagnostics read.
#[derive(Debug, Clone)]
pub struct Frame {
    pub t: f64,
    pub l: f64,
    pub q: ScalarField,
    pub psi: ScalarField,
}

impl From<&Snapshot> for Frame {
    fn from(s: &Snapshot) -> Self {
        Frame {
            t: s.t,
            l: s.stream.l,
            q: s.q.clone(),
            psi: s.stream.psi.clone(),
        }
    }
}

pub type SpatialFn = Arc<dyn Fn(Vec2) -> (f64, Vec2) + Send + Sync>;

/// Spatial factor `gamma` of a separated test function, with its gradient.
#[derive(Clone)]
pub enum Spatial {
    /// `sin(m pi x / lx) sin(n pi y / ly)` on `[0, lx] x [0, ly]`.
    SineProduct {
        m: u32,
        n: u32,
        lx: f64,
        ly: f64,
    },
    /// `(1 - rho^2)^2 * mode` with `rho = |x - c| / R`; mode 0, 1, 2 is 1, x', y'.
    Bubble {
        center: Vec2,
        radius: f64,
        mode: u8,
    },
    Custom(SpatialFn),
}

impl std::fmt::Debug for Spatial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Spatial::SineProduct { m, n, .. } => write!(f, "sin({m}) sin({n})"),
            Spatial::Bubble { mode, .. } => write!(f, "bubble({mode})"),
            Spatial::Custom(_) => write!(f, "custom"),
        }
    }
}

impl Spatial {
    pub fn eval(&self, p: Vec2) -> (f64, Vec2) {
        match self {
            Spatial::SineProduct { m, n, lx, ly } => {
                let (a, b) = (*m as f64 * PI / lx, *n as f64 * PI / ly);
                let (sx, cx) = (a * p.x).sin_cos();
                let (sy, cy) = (b * p.y).sin_cos();
                (sx * sy, Vec2::new(a * cx * sy, b * sx * cy))
            }
            Spatial::Bubble {
                center,
                radius,
                mode,
            } => {
                let d = (p - *center) * (1.0 / radius);
                let s = 1.0 - d.dot(d);
                let bubble = s * s;
                let grad_bubble = d * (-4.0 * s / radius);
                let (m, grad_m) = match mode {
                    0 => (1.0, Vec2::ZERO),
                    1 => (d.x, Vec2::new(1.0 / radius, 0.0)),
                    _ => (d.y, Vec2::new(0.0, 1.0 / radius)),
                };
                (bubble * m, grad_bubble * m + grad_m * bubble)
            }
            Spatial::Custom(f) => f(p),
        }
    }
}

/// Temporal factor `g` with `g(T) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temporal {
    /// `cos(pi t / (2T))`.
    Cosine,
    /// `(1 - t/T)^2`.
    Quadratic,
}

impl Temporal {
    pub fn eval(self, t: f64, t_end: f64) -> (f64, f64) {
        match self {
            Temporal::Cosine => {
                let w = PI / (2.0 * t_end);
                ((w * t).cos(), -w * (w * t).sin())
            }
            Temporal::Quadratic => {
                let s = 1.0 - t / t_end;
                (s * s, -2.0 * s / t_end)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestFunction {
    pub spatial: Spatial,
    pub temporal: Temporal,
}

impl TestFunction {
    pub fn label(&self) -> String {
        format!("{:?} x {:?}", self.spatial, self.temporal)
    }
}

/// Separated test functions `phi = g(t) gamma(x)`.
#[derive(Debug, Clone)]
pub struct TestFunctionBasis {
    pub t_end: f64,
    pub functions: Vec<TestFunction>,
}

impl TestFunctionBasis {
    /// Sine products on a rectangle or bubbles on a disk, each paired with both
    /// temporal factors.
    pub fn standard(domain: &Domain, t_end: f64) -> Self {
        let spatial: Vec<Spatial> = match domain.shape() {
            Shape::Rectangle { lx, ly } => [(1, 1), (1, 2), (2, 1)]
                .into_iter()
                .map(|(m, n)| Spatial::SineProduct { m, n, lx, ly })
                .collect(),
            Shape::Disk { center, radius } => (0..3)
                .map(|mode| Spatial::Bubble {
                    center,
                    radius,
                    mode,
                })
                .collect(),
        };
        let functions = spatial
            .into_iter()
            .flat_map(|s| {
                [Temporal::Cosine, Temporal::Quadratic].map(|temporal| TestFunction {
                    spatial: s.clone(),
                    temporal,
                })
            })
            .collect();
        Self { t_end, functions }
    }

    /// Rejects spatial factors that do not vanish on the true boundary.
    pub fn check_boundary(&self, domain: &Domain) -> Result<()> {
        let scale = domain.diameter();
        for f in &self.functions {
            for p in domain.boundary_samples(256) {
                let v = f.spatial.eval(p).0;
                if v.abs() > 1e-12 * scale.max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "test function {} is {v:e} at boundary point ({}, {})",
                        f.label(),
                        p.x,
                        p.y
                    )));
                }
            }
        }
        Ok(())
    }
}

fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|k| {
            let left = if k > 0 { times[k] - times[k - 1] } else { 0.0 };
            let right = if k + 1 < n {
                times[k + 1] - times[k]
            } else {
                0.0
            };
            0.5 * (left + right)
        })
        .collect()
}

/// Signed residual of the space-time weak form per test function,
///
/// `-int (Dpsi0 - psi0) phi(0) - intint (Dpsi - psi) phi_t
///  - intint (Dpsi + beta y - psi) perp grad psi . grad phi - intint f phi`,
///
/// with interior-node quadrature in space and the trapezoid rule over frame times.
pub fn weak_residual(
    frames: &[Frame],
    beta: f64,
    forcing: &Forcing,
    basis: &TestFunctionBasis,
) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(
            "weak residual needs at least two frames".into(),
        ));
    }
    let domain = Arc::clone(frames[0].psi.domain());
    for f in frames {
        f.psi.check_same_domain(&frames[0].psi)?;
    }
    basis.check_boundary(&domain)?;
    let times: Vec<f64> = frames.iter().map(|f| f.t).collect();
    let tw = trapezoid_weights(&times);
    let w = domain.weights();
    let interior = domain.interior();
    let nodes: Vec<Vec2> = interior.iter().map(|&k| domain.node(k)).collect();

    struct Prepared {
        helm: Vec<f64>,
        pv_flux: Vec<Vec2>,
    }
    let prepared: Vec<Prepared> = frames
        .iter()
        .map(|f| {
            let lap = laplacian(&f.psi);
            let u = perp_gradient(&f.psi);
            let helm = interior
                .iter()
                .map(|&k| lap.get(k) - f.psi.get(k))
                .collect::<Vec<_>>();
            let pv_flux = interior
                .iter()
                .zip(&helm)
                .map(|(&k, h)| u.at(k) * (h + beta * domain.node(k).y))
                .collect();
            Prepared { helm, pv_flux }
        })
        .collect();

    let residuals = basis
        .functions
        .iter()
        .map(|phi| {
            let spatial: Vec<(f64, Vec2)> = nodes.iter().map(|&p| phi.spatial.eval(p)).collect();
            let (g0, _) = phi.temporal.eval(times[0], basis.t_end);
            let initial = -g0
                * fixed_order_sum(
                    interior
                        .iter()
                        .zip(&prepared[0].helm)
                        .zip(&spatial)
                        .map(|((&k, h), s)| w[k] * h * s.0),
                );
            let mut terms = Vec::with_capacity(frames.len());
            for (j, (frame, prep)) in frames.iter().zip(&prepared).enumerate() {
                let (g, dg) = phi.temporal.eval(frame.t, basis.t_end);
                let space = fixed_order_sum(interior.iter().enumerate().map(|(i, &k)| {
                    let (gamma, grad) = spatial[i];
                    let f = forcing.eval(nodes[i], frame.t);
                    w[k] * (-prep.helm[i] * dg * gamma
                        - g * prep.pv_flux[i].dot(grad)
                        - f * g * gamma)
                }));
                terms.push(tw[j] * space);
            }
            initial + fixed_order_sum(terms)
        })
        .collect();
    Ok(residuals)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniquenessEnergy {
    /// `int |grad h#|^2`.
    pub h1_squared: f64,
    /// Boundary value of `h = psi_a - psi_b`.
    pub l_shift: f64,
    /// `(1/|M|) (int h#)^2`.
    pub mean_square_lhs: f64,
    /// `int (h#)^2`.
    pub mean_square_rhs: f64,
}

/// Energy of the difference of two streamfunctions after removing its boundary constant.
pub fn uniqueness_energy(psi_a: &ScalarField, psi_b: &ScalarField) -> Result<UniquenessEnergy> {
    psi_a.check_same_domain(psi_b)?;
    let domain = psi_a.domain();
    let h = psi_a.axpy(-1.0, psi_b)?;
    let boundary = domain.boundary();
    let l_shift = fixed_order_sum(boundary.iter().map(|&k| h.get(k))) / boundary.len() as f64;
    let sharp = h.map(|_, v| v - l_shift);
    let (gx, gy) = gradient(&sharp);
    let w = domain.weights();
    let h1_squared = fixed_order_sum(
        domain
            .valid()
            .iter()
            .map(|&k| w[k] * (gx[k] * gx[k] + gy[k] * gy[k])),
    );
    let integral = sharp.integrate();
    Ok(UniquenessEnergy {
        h1_squared,
        l_shift,
        mean_square_lhs: integral * integral / domain.area(),
        mean_square_rhs: sharp.map(|_, v| v * v).integrate(),
    })
}

/// Random point pairs with separations log-spaced over `[2h, diam]`.
fn sample_pairs(domain: &Domain, samples: usize, seed: u64) -> Result<Vec<(Vec2, Vec2)>> {
    if domain.interior().len() < 4 || samples < 2 {
        return Err(Error::InvalidArgument(
            "pair sampling needs at least four interior nodes and two samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (2.0 * domain.h(), domain.diameter());
    let o = domain.origin();
    let span = Vec2::new(
        (domain.nx() - 1) as f64 * domain.hx(),
        (domain.ny() - 1) as f64 * domain.hy(),
    );
    let mut pairs = Vec::with_capacity(samples);
    for i in 0..samples {
        let delta = lo * (hi / lo).powf(i as f64 / (samples - 1) as f64);
        for _ in 0..1000 {
            let a = o + Vec2::new(rng.gen::<f64>() * span.x, rng.gen::<f64>() * span.y);
            let theta = rng.gen::<f64>() * 2.0 * PI;
            let b = a + Vec2::new(theta.cos(), theta.sin()) * delta;
            if domain.contains(a) && domain.contains(b) {
                pairs.push((a, b));
                break;
            }
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiLipschitz {
    /// `(separation, |u(a) - u(b)| / (chi(separation) max|q - beta y|))`.
    pub ratios: Vec<(f64, f64)>,
    /// Empirical constant: the largest ratio.
    pub constant: f64,
    pub violations: usize,
}

/// Ratios of velocity increments to `chi(|a - b|) max|q - beta y|` over random pairs.
/// Violations count ratios above `bound` when one is supplied.
pub fn quasi_lipschitz_check(
    u: &VectorField,
    q: &ScalarField,
    beta: f64,
    samples: usize,
    seed: u64,
    bound: Option<f64>,
) -> Result<QuasiLipschitz> {
    u.u1.check_same_domain(q)?;
    let domain = q.domain();
    let scale = q.map(|p, v| v - beta * p.y).max_abs();
    let ratios = sample_pairs(domain, samples, seed)?
        .into_iter()
        .map(|(a, b)| {
            let du = (u.interpolate(a, Interpolation::Bilinear)?
                - u.interpolate(b, Interpolation::Bilinear)?)
            .norm();
            let delta = (a - b).norm();
            let ratio = if du == 0.0 {
                0.0
            } else {
                du / (chi(delta)? * scale)
            };
            Ok((delta, ratio))
        })
        .collect::<Result<Vec<_>>>()?;
    let constant = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let violations = bound.map_or(0, |c| ratios.iter().filter(|r| r.1 > c).count());
    Ok(QuasiLipschitz {
        ratios,
        constant,
        violations,
    })
}

/// Largest `|u(a) - u(b)| / |a - b|^gamma` over random pairs.
pub fn holder_seminorm(u: &VectorField, gamma: f64, samples: usize, seed: u64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Hölder exponent must lie in (0, 1), got {gamma}"
        )));
    }
    sample_pairs(u.domain(), samples, seed)?
        .into_iter()
        .map(|(a, b)| {
            let du = (u.interpolate(a, Interpolation::Bilinear)?
                - u.interpolate(b, Interpolation::Bilinear)?)
            .norm();
            Ok(du / (a - b).norm().powf(gamma))
        })
        .try_fold(0.0, |m: f64, r: Result<f64>| Ok(m.max(r?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LBound {
    pub c_dom: f64,
    /// `(l, max|q - beta y|)` per trial.
    pub trials: Vec<(f64, f64)>,
}

impl LBound {
    pub fn bound(&self, q_minus_y_max: f64) -> f64 {
        self.c_dom * (1.0 + q_minus_y_max)
    }
}

/// A smooth random field in continuous coordinates with `max |.| = 1` on the grid.
pub fn random_smooth_field(domain: &Arc<Domain>, rng: &mut ChaCha8Rng) -> ScalarField {
    let diam = domain.diameter();
    let o = domain.origin();
    let constant = rng.gen_range(-1.0..1.0);
    let modes: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.5..3.0) * PI / diam,
                rng.gen_range(0.5..3.0) * PI / diam,
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let f = ScalarField::from_fn(domain, |p| {
        let d = p - o;
        constant
            + modes
                .iter()
                .map(|&(a, kx, ky, phase)| a * (kx * d.x + phase).sin() * (ky * d.y).cos())
                .sum::<f64>()
    });
    let m = f.max_abs();
    f.map(|_, v| v / m)
}

/// `c_dom = 1.5 max |l| / (1 + max|q - beta y|)` over random smooth `q - beta y`
/// normalized to unit maximum.
pub fn l_bound_calibration(solver: &EllipticSolver, trials: usize, seed: u64) -> Result<LBound> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let rhs = random_smooth_field(solver.domain(), &mut rng);
        let sol = solver.solve_constrained_rhs(&rhs)?;
        out.push((sol.l, rhs.max_abs()));
    }
    let worst = out
        .iter()
        .map(|&(l, m)| l.abs() / (1.0 + m))
        .fold(0.0, f64::max);
    Ok(LBound {
        c_dom: 1.5 * worst,
        trials: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremaRow {
    pub t: f64,
    pub min: f64,
    pub max: f64,
    /// `max|q0| + t sup|f|`.
    pub bound: f64,
    /// `max(0, max q - max q0 - t sup f+, min q0 - t sup f- - min q)`.
    pub overshoot: f64,
    /// `||q(t) - q(t_prev)||_{L2}`; zero for the first frame.
    pub l2_step: f64,
}

/// Extrema of `q` per frame against the transport bound.
pub fn pv_extrema_report(frames: &[Frame], forcing_sup: f64) -> Result<Vec<ExtremaRow>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames".into()))?;
    let (min0, max0, abs0) = (first.q.min(), first.q.max(), first.q.max_abs());
    let t0 = first.t;
    let mut rows = Vec::with_capacity(frames.len());
    let mut prev: Option<&ScalarField> = None;
    for f in frames {
        let (min, max) = (f.q.min(), f.q.max());
        let grow = (f.t - t0) * forcing_sup;
        let overshoot = (max - max0 - grow).max(min0 - grow - min).max(0.0);
        let l2_step = match prev {
            Some(p) => f.q.l2_distance(p)?,
            None => 0.0,
        };
        rows.push(ExtremaRow {
            t: f.t,
            min,
            max,
            bound: abs0 + grow,
            overshoot,
            l2_step,
        });
        prev = Some(&f.q);
    }
    Ok(rows)
}

/// Options for [`diagnose`].
#[derive(Debug, Clone, Copy, Default)]
pub struct DiagnoseOptions {
    /// `sup |f|` over the run, when known.
    pub forcing_sup: Option<f64>,
    /// Calibrated constant for the boundary-constant bound, when available.
    pub c_dom: Option<f64>,
    pub beta: f64,
}

/// Invariant checks on a sequence of snapshots.
pub fn diagnose(frames: &[Frame], opts: DiagnoseOptions) -> Result<DiagnosticReport> {
    let mut report = DiagnosticReport::new();
    if frames.is_empty() {
        report.check_le("snapshots_present", 0.0, 1.0, "no snapshots found");
        return Ok(report);
    }
    for f in frames {
        let domain = f.psi.domain();
        let ctx = format!("t={}", f.t);
        report.check_le(
            "mass",
            f.psi.integrate().abs(),
            MASS_TOL_REL * domain.area(),
            ctx.clone(),
        );
        let dev = domain
            .boundary()
            .iter()
            .map(|&k| (f.psi.get(k) - f.l).abs())
            .fold(0.0, f64::max);
        report.check_le("boundary_constant", dev, 0.0, ctx.clone());
        if let Some(c) = opts.c_dom {
            let m = f.q.map(|p, v| v - opts.beta * p.y).max_abs();
            report.check_le("l_bound", f.l.abs(), c * (1.0 + m), ctx.clone());
        }
    }
    if let Some(sup) = opts.forcing_sup {
        for row in pv_extrema_report(frames, sup)? {
            report.check_le("pv_overshoot", row.overshoot, 0.0, format!("t={}", row.t));
        }
    }
    Ok(report)
}
