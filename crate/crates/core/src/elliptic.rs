//! The constrained modified Helmholtz problem
//!
//! ```text
//! (Delta - I) psi = rhs   in M
//!             psi = l     on the boundary (l unknown)
//!        int psi  = 0
//! ```
//!
//! solved by splitting `psi = psi1 + l psi2`, where `psi1` carries the source with
//! zero boundary data and `psi2` solves the homogeneous problem with unit boundary
//! data. `l` then follows from the mass constraint.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmap::velocity_from_stream;
use crate::geometry::{Domain, ScalarField, VectorField};
use crate::linalg::{conjugate_gradient, BandedCholesky, HelmholtzOperator};

/// Mass constraint tolerance relative to the domain area.
pub const MASS_TOL_REL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    #[default]
    #[serde(alias = "conjugate-gradient")]
    Cg,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSolveSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub method: SolveMethod,
}

impl Default for LinearSolveSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50_000,
            method: SolveMethod::Cg,
        }
    }
}

impl LinearSolveSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "linear tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max linear iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Solves `(Delta_h - I) psi = rhs` at interior nodes with `psi = boundary_value` on
/// boundary nodes.
pub fn solve_dirichlet(
    domain: &Arc<Domain>,
    rhs: &ScalarField,
    boundary_value: f64,
    settings: &LinearSolveSettings,
) -> Result<ScalarField> {
    settings.validate()?;
    if !rhs.domain().same_as(domain) {
        return Err(Error::DomainMismatch);
    }
    let op = HelmholtzOperator::new(domain);
    let b = op.assemble_rhs(rhs.values(), boundary_value);
    let x = match settings.method {
        SolveMethod::Cg => {
            let (x, out) =
                conjugate_gradient(&op, &b, settings.tolerance, settings.max_iterations)?;
            log::trace!(
                "cg: {} iterations, relative residual {:e}",
                out.iterations,
                out.relative_residual
            );
            x
        }
        SolveMethod::Direct => BandedCholesky::factor(&op)?.solve(&b),
    };
    Ok(scatter(domain, &x, boundary_value))
}

fn scatter(domain: &Arc<Domain>, interior_values: &[f64], boundary_value: f64) -> ScalarField {
    let mut psi = ScalarField::zeros(domain);
    let v = psi.values_mut();
    for (&k, &x) in domain.interior().iter().zip(interior_values) {
        v[k] = x;
    }
    for &k in domain.boundary() {
        v[k] = boundary_value;
    }
    psi
}

/// 5-point Laplacian at interior nodes; zero elsewhere.
pub fn laplacian(field: &ScalarField) -> ScalarField {
    let domain = field.domain();
    let nx = domain.nx();
    let cx = 1.0 / (domain.hx() * domain.hx());
    let cy = 1.0 / (domain.hy() * domain.hy());
    let f = field.values();
    let mut out = ScalarField::zeros(domain);
    let o = out.values_mut();
    for &k in domain.interior() {
        o[k] = cx * (f[k - 1] - 2.0 * f[k] + f[k + 1]) + cy * (f[k - nx] - 2.0 * f[k] + f[k + nx]);
    }
    out
}

/// `(Delta_h - I) field` at interior nodes; zero elsewhere.
pub fn helmholtz(field: &ScalarField) -> ScalarField {
    let domain = field.domain();
    let mut out = laplacian(field);
    let f = field.values();
    let o = out.values_mut();
    for &k in domain.interior() {
        o[k] -= f[k];
    }
    out
}

/// `l = -int(psi1) / int(psi2)`.
pub fn compute_boundary_constant(psi1: &ScalarField, psi2: &ScalarField) -> Result<f64> {
    psi1.check_same_domain(psi2)?;
    let i2 = psi2.integrate();
    if i2 <= 0.0 || !i2.is_finite() {
        return Err(Error::NonPositivePsi2Integral(i2));
    }
    Ok(-psi1.integrate() / i2)
}

#[derive(Debug, Clone)]
pub struct StreamSolution {
    pub psi: ScalarField,
    pub l: f64,
    pub psi1: ScalarField,
    pub psi2: Arc<ScalarField>,
    pub integral_psi2: f64,
}

impl StreamSolution {
    pub fn domain(&self) -> &Arc<Domain> {
        self.psi.domain()
    }

    /// `|int psi|`.
    pub fn mass_residual(&self) -> f64 {
        self.psi.integrate().abs()
    }

    /// Largest deviation of boundary node values from `l`.
    pub fn boundary_deviation(&self) -> f64 {
        boundary_deviation(&self.psi, self.l)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let domain = self.domain();
        let mass_tol = MASS_TOL_REL * domain.area();
        if self.mass_residual() > mass_tol {
            return Err(Error::InvalidArgument(format!(
                "mass constraint violated: |int psi| = {:e} > {:e}",
                self.mass_residual(),
                mass_tol
            )));
        }
        if self.boundary_deviation() != 0.0 {
            return Err(Error::InvalidArgument(
                "psi is not equal to l on the boundary".into(),
            ));
        }
        if self.integral_psi2 <= 0.0 {
            return Err(Error::NonPositivePsi2Integral(self.integral_psi2));
        }
        let p2 = self.psi2.values();
        if domain
            .interior()
            .iter()
            .any(|&k| !(p2[k] > 0.0 && p2[k] <= 1.0))
        {
            return Err(Error::InvalidArgument(
                "unit-boundary solution leaves (0, 1] in the interior".into(),
            ));
        }
        Ok(())
    }
}

pub fn boundary_deviation(psi: &ScalarField, l: f64) -> f64 {
    psi.domain()
        .boundary()
        .iter()
        .map(|&k| (psi.get(k) - l).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug)]
struct UnitBoundary {
    psi2: Arc<ScalarField>,
    integral: f64,
}

/// Constrained solver bound to one domain. The unit-boundary solution (and, for the
/// direct method, the factorization) is computed once and shared by all solves.
#[derive(Debug)]
pub struct EllipticSolver {
    domain: Arc<Domain>,
    settings: LinearSolveSettings,
    beta: f64,
    unit: Mutex<Option<Arc<UnitBoundary>>>,
    factor: Mutex<Option<Arc<BandedCholesky>>>,
}

impl EllipticSolver {
    pub fn new(domain: &Arc<Domain>, settings: LinearSolveSettings, beta: f64) -> Result<Self> {
        settings.validate()?;
        if !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "beta must be finite, got {beta}"
            )));
        }
        Ok(Self {
            domain: Arc::clone(domain),
            settings,
            beta,
            unit: Mutex::new(None),
            factor: Mutex::new(None),
        })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn settings(&self) -> &LinearSolveSettings {
        &self.settings
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `beta * y` at every valid node.
    pub fn beta_y(&self) -> ScalarField {
        let beta = self.beta;
        ScalarField::from_fn(&self.domain, |p| beta * p.y)
    }

    fn dirichlet(&self, rhs: &ScalarField, g: f64) -> Result<ScalarField> {
        match self.settings.method {
            SolveMethod::Cg => solve_dirichlet(&self.domain, rhs, g, &self.settings),
            SolveMethod::Direct => {
                let factor = {
                    let mut guard = self.factor.lock().expect("factor cache poisoned");
                    match guard.as_ref() {
                        Some(f) => Arc::clone(f),
                        None => {
                            let f = Arc::new(BandedCholesky::factor(&HelmholtzOperator::new(
                                &self.domain,
                            ))?);
                            *guard = Some(Arc::clone(&f));
                            f
                        }
                    }
                };
                let op = HelmholtzOperator::new(&self.domain);
                let x = factor.solve(&op.assemble_rhs(rhs.values(), g));
                Ok(scatter(&self.domain, &x, g))
            }
        }
    }

    fn unit_boundary(&self) -> Result<Arc<UnitBoundary>> {
        let mut guard = self.unit.lock().expect("psi2 cache poisoned");
        if let Some(u) = guard.as_ref() {
            return Ok(Arc::clone(u));
        }
        let psi2 = self.dirichlet(&ScalarField::zeros(&self.domain), 1.0)?;
        let integral = psi2.integrate();
        if integral <= 0.0 {
            return Err(Error::NonPositivePsi2Integral(integral));
        }
        let u = Arc::new(UnitBoundary {
            psi2: Arc::new(psi2),
            integral,
        });
        *guard = Some(Arc::clone(&u));
        Ok(u)
    }

    /// The cached unit-boundary solution `psi2`.
    pub fn psi2(&self) -> Result<Arc<ScalarField>> {
        Ok(Arc::clone(&self.unit_boundary()?.psi2))
    }

    /// Constrained solve with an explicit right-hand side.
    pub fn solve_constrained_rhs(&self, rhs: &ScalarField) -> Result<StreamSolution> {
        if !rhs.domain().same_as(&self.domain) {
            return Err(Error::DomainMismatch);
        }
        let unit = self.unit_boundary()?;
        let psi1 = self.dirichlet(rhs, 0.0)?;
        let l = compute_boundary_constant(&psi1, &unit.psi2)?;
        let mut psi = psi1.axpy(l, &unit.psi2)?;
        // psi1 = 0 and psi2 = 1 on the boundary, so this only removes -0.0 noise.
        for &k in self.domain.boundary() {
            psi.values_mut()[k] = l;
        }
        psi.time = rhs.time;
        Ok(StreamSolution {
            psi,
            l,
            psi1,
            psi2: Arc::clone(&unit.psi2),
            integral_psi2: unit.integral,
        })
    }

    /// Streamfunction of the potential vorticity `q`: right-hand side `q - beta y`.
    pub fn solve_constrained(&self, q: &ScalarField) -> Result<StreamSolution> {
        if !q.domain().same_as(&self.domain) {
            return Err(Error::DomainMismatch);
        }
        let rhs = q.axpy(-1.0, &self.beta_y())?;
        self.solve_constrained_rhs(&rhs)
    }

    /// Tendency of the streamfunction: constrained solve with right-hand side
    /// `curl F - div(u q)`, `u = perp grad psi`, both by centered differences.
    pub fn solve_time_derivative(
        &self,
        stream: &StreamSolution,
        q: &ScalarField,
        wind: &VectorField,
    ) -> Result<StreamSolution> {
        q.check_same_domain(&stream.psi)?;
        q.check_same_domain(&wind.u1)?;
        let u = velocity_from_stream(stream);
        let domain = &self.domain;
        let nx = domain.nx();
        let (hx, hy) = (domain.hx(), domain.hy());
        let (f1, f2) = (wind.u1.values(), wind.u2.values());
        let (u1, u2) = (u.u1.values(), u.u2.values());
        let qv = q.values();
        let mut rhs = ScalarField::zeros(domain);
        let r = rhs.values_mut();
        for &k in domain.interior() {
            let curl =
                (f2[k + 1] - f2[k - 1]) / (2.0 * hx) - (f1[k + nx] - f1[k - nx]) / (2.0 * hy);
            let div = (u1[k + 1] * qv[k + 1] - u1[k - 1] * qv[k - 1]) / (2.0 * hx)
                + (u2[k + nx] * qv[k + nx] - u2[k - nx] * qv[k - nx]) / (2.0 * hy);
            r[k] = curl - div;
        }
        self.solve_constrained_rhs(&rhs)
    }
}

/// Discrete curl `dF2/dx - dF1/dy` at interior nodes.
pub fn curl(field: &VectorField) -> ScalarField {
    let domain = field.domain();
    let nx = domain.nx();
    let (hx, hy) = (domain.hx(), domain.hy());
    let (f1, f2) = (field.u1.values(), field.u2.values());
    let mut out = ScalarField::zeros(domain);
    let o = out.values_mut();
    for &k in domain.interior() {
        o[k] = (f2[k + 1] - f2[k - 1]) / (2.0 * hx) - (f1[k + nx] - f1[k - nx]) / (2.0 * hy);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, Vec2};
    use std::f64::consts::PI;

    fn tight() -> LinearSolveSettings {
        LinearSolveSettings {
            tolerance: 1e-12,
            ..Default::default()
        }
    }

    /// Power series for I0, kept separate from the production Bessel code.
    fn i0_series(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60 {
            term *= (x * x / 4.0) / (k as f64 * k as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn zero_rhs_zero_boundary_gives_zero() {
        let d = Domain::build(DomainSpec::rectangle(PI, PI, 16, 16)).unwrap();
        let psi = solve_dirichlet(&d, &ScalarField::zeros(&d), 0.0, &tight()).unwrap();
        assert_eq!(psi.max_abs(), 0.0);
    }

    #[test]
    fn manufactured_sine_solution() {
        let err = |n| {
            let d = Domain::build(DomainSpec::rectangle(PI, PI, n, n)).unwrap();
            let rhs = ScalarField::from_fn(&d, |p| -3.0 * p.x.sin() * p.y.sin());
            let psi = solve_dirichlet(&d, &rhs, 0.0, &tight()).unwrap();
            let exact = ScalarField::from_fn(&d, |p| p.x.sin() * p.y.sin());
            psi.max_abs_difference(&exact).unwrap()
        };
        let (e1, e2) = (err(17), err(33));
        assert!(e1 < 1e-2);
        assert!((e1 / e2).log2() > 1.9);
    }

    #[test]
    fn disk_unit_boundary_matches_bessel() {
        let d = Domain::build(DomainSpec::disk(Vec2::ZERO, 1.0, 65, 65)).unwrap();
        let solver = EllipticSolver::new(&d, tight(), 1.0).unwrap();
        let psi2 = solver.psi2().unwrap();
        let center = d.index(32, 32);
        let expected = 1.0 / i0_series(1.0);
        assert!((expected - 0.789_848).abs() < 1e-6);
        assert!((psi2.get(center) - expected).abs() <= d.h());
        for &k in d.interior() {
            assert!(psi2.get(k) > 0.0 && psi2.get(k) <= 1.0);
        }
    }

    #[test]
    fn direct_and_cg_agree() {
        let d = Domain::build(DomainSpec::disk(Vec2::ZERO, 1.0, 25, 25)).unwrap();
        let q = ScalarField::from_fn(&d, |p| (2.0 * p.x).sin() + p.y * p.y);
        let a = EllipticSolver::new(&d, tight(), 1.0).unwrap();
        let b = EllipticSolver::new(
            &d,
            LinearSolveSettings {
                method: SolveMethod::Direct,
                ..tight()
            },
            1.0,
        )
        .unwrap();
        let sa = a.solve_constrained(&q).unwrap();
        let sb = b.solve_constrained(&q).unwrap();
        assert!(sa.psi.max_abs_difference(&sb.psi).unwrap() < 1e-10);
        assert!((sa.l - sb.l).abs() < 1e-10);
    }

    #[test]
    fn boundary_constant_edge_cases() {
        let d = Domain::build(DomainSpec::rectangle(1.0, 1.0, 12, 12)).unwrap();
        let psi2 = solve_dirichlet(&d, &ScalarField::zeros(&d), 1.0, &tight()).unwrap();
        assert_eq!(
            compute_boundary_constant(&ScalarField::zeros(&d), &psi2).unwrap(),
            0.0
        );
        assert_eq!(compute_boundary_constant(&psi2, &psi2).unwrap(), -1.0);
        let neg = psi2.map(|_, v| -v);
        assert!(matches!(
            compute_boundary_constant(&psi2, &neg),
            Err(Error::NonPositivePsi2Integral(_))
        ));
    }

    #[test]
    fn rest_state_gives_zero_stream() {
        let d = Domain::build(DomainSpec::disk(Vec2::new(0.5, 2.0), 1.0, 21, 21)).unwrap();
        let solver = EllipticSolver::new(&d, tight(), 1.0).unwrap();
        let sol = solver.solve_constrained(&d.coordinate_field(1)).unwrap();
        assert_eq!(sol.l, 0.0);
        assert_eq!(sol.psi.max_abs(), 0.0);
    }

    #[test]
    fn constrained_invariants_hold() {
        let d = Domain::build(DomainSpec::disk(Vec2::ZERO, 1.0, 33, 33)).unwrap();
        let solver = EllipticSolver::new(&d, LinearSolveSettings::default(), 1.0).unwrap();
        let q = ScalarField::from_fn(&d, |p| (3.0 * p.x).cos() * (p.y + 0.3).exp());
        let sol = solver.solve_constrained(&q).unwrap();
        sol.check_invariants().unwrap();
        let recomposed = sol.psi1.axpy(sol.l, &sol.psi2).unwrap();
        assert!(recomposed.max_abs_difference(&sol.psi).unwrap() <= 1e-8);
    }

    #[test]
    fn negative_rhs_gives_nonnegative_solution() {
        let d = Domain::build(DomainSpec::disk(Vec2::ZERO, 1.0, 29, 29)).unwrap();
        let rhs = ScalarField::from_fn(&d, |p| -(1.0 + (5.0 * p.x).sin().abs()));
        let psi = solve_dirichlet(&d, &rhs, 0.0, &tight()).unwrap();
        assert!(psi.min() >= 0.0);
    }

    #[test]
    fn time_derivative_vanishes_at_rest() {
        let d = Domain::build(DomainSpec::rectangle(PI, PI, 17, 17)).unwrap();
        let solver = EllipticSolver::new(&d, tight(), 1.0).unwrap();
        let q = d.coordinate_field(1);
        let sol = solver.solve_constrained(&q).unwrap();
        let dt = solver
            .solve_time_derivative(&sol, &q, &VectorField::zeros(&d))
            .unwrap();
        assert_eq!(dt.psi.max_abs(), 0.0);
    }

    #[test]
    fn time_derivative_with_pure_forcing_is_a_constrained_solve() {
        let d = Domain::build(DomainSpec::rectangle(PI, PI, 17, 17)).unwrap();
        let solver = EllipticSolver::new(&d, tight(), 1.0).unwrap();
        let q = d.coordinate_field(1);
        let sol = solver.solve_constrained(&q).unwrap();
        let wind = VectorField::from_fn(&d, |p| Vec2::new(-p.y.sin(), p.x * p.y));
        let dt = solver.solve_time_derivative(&sol, &q, &wind).unwrap();
        let direct = solver.solve_constrained_rhs(&curl(&wind)).unwrap();
        assert!(dt.psi.max_abs_difference(&direct.psi).unwrap() < 1e-14);
    }
}
