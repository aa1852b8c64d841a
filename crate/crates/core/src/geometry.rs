//! Computational domain, nodal fields, quadrature and interpolation.
//!
//! Two domain shapes are supported: an axis-aligned rectangle `[0, Lx] x [0, Ly]`
//! whose grid nodes include the edges, and a disk discretized on its bounding
//! square with a staircase (cut-cell) classification. In both cases nodes are
//! classified as interior (carry an unknown of the elliptic problem), boundary
//! (carry the Dirichlet value) or exterior (never read).

use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of nodes per axis.
pub const MIN_RESOLUTION: usize = 8;

/// Sub-samples per axis used to measure the area of a cut cell.
const CUT_CELL_SAMPLES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise rotation by a right angle, `(x, y) -> (-y, x)`.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// z-component of the planar cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Rectangle { lx: f64, ly: f64 },
    Disk { center: Vec2, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub shape: Shape,
    pub nx: usize,
    pub ny: usize,
}

impl DomainSpec {
    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        Self {
            shape: Shape::Rectangle { lx, ly },
            nx,
            ny,
        }
    }

    pub fn disk(center: Vec2, radius: f64, nx: usize, ny: usize) -> Self {
        Self {
            shape: Shape::Disk { center, radius },
            nx,
            ny,
        }
    }

    /// Same shape with the resolution multiplied by `factor` in cell counts.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            shape: self.shape,
            nx: (self.nx - 1) * factor + 1,
            ny: (self.ny - 1) * factor + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

#[derive(Debug)]
pub struct Domain {
    spec: DomainSpec,
    origin: Vec2,
    hx: f64,
    hy: f64,
    kinds: Vec<NodeKind>,
    weights: Vec<f64>,
    area: f64,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    valid: Vec<usize>,
    unknown_of: Vec<usize>,
}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl Domain {
    pub fn build(spec: DomainSpec) -> Result<Arc<Domain>> {
        let DomainSpec { shape, nx, ny } = spec;
        if nx < MIN_RESOLUTION || ny < MIN_RESOLUTION {
            return Err(Error::InvalidDomain(format!(
                "resolution {nx}x{ny} is below the minimum of {MIN_RESOLUTION} nodes per axis"
            )));
        }
        let (origin, hx, hy) = match shape {
            Shape::Rectangle { lx, ly } => {
                if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
                    return Err(Error::InvalidDomain(format!(
                        "rectangle extents must be positive, got {lx} x {ly}"
                    )));
                }
                (Vec2::ZERO, lx / (nx - 1) as f64, ly / (ny - 1) as f64)
            }
            Shape::Disk { center, radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidDomain(format!(
                        "disk radius must be positive, got {radius}"
                    )));
                }
                (
                    Vec2::new(center.x - radius, center.y - radius),
                    2.0 * radius / (nx - 1) as f64,
                    2.0 * radius / (ny - 1) as f64,
                )
            }
        };

        let n = nx * ny;
        let mut kinds = vec![NodeKind::Exterior; n];
        let mut weights = vec![0.0; n];
        match shape {
            Shape::Rectangle { .. } => {
                for j in 0..ny {
                    for i in 0..nx {
                        let edge_i = i == 0 || i == nx - 1;
                        let edge_j = j == 0 || j == ny - 1;
                        kinds[j * nx + i] = if edge_i || edge_j {
                            NodeKind::Boundary
                        } else {
                            NodeKind::Interior
                        };
                        let wi = if edge_i { 0.5 } else { 1.0 };
                        let wj = if edge_j { 0.5 } else { 1.0 };
                        weights[j * nx + i] = wi * wj * hx * hy;
                    }
                }
            }
            Shape::Disk { center, radius } => {
                let inside = |i: isize, j: isize| -> bool {
                    if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                        return false;
                    }
                    let p = Vec2::new(origin.x + i as f64 * hx, origin.y + j as f64 * hy);
                    (p - center).norm() <= radius * (1.0 + 1e-12)
                };
                for j in 0..ny {
                    for i in 0..nx {
                        let (ii, jj) = (i as isize, j as isize);
                        if !inside(ii, jj) {
                            continue;
                        }
                        let all_in = inside(ii - 1, jj)
                            && inside(ii + 1, jj)
                            && inside(ii, jj - 1)
                            && inside(ii, jj + 1);
                        kinds[j * nx + i] = if all_in {
                            NodeKind::Interior
                        } else {
                            NodeKind::Boundary
                        };
                    }
                }
                disk_weights(&mut weights, &kinds, nx, ny, origin, hx, hy, center, radius);
            }
        }

        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut valid = Vec::new();
        let mut unknown_of = vec![usize::MAX; n];
        for (k, kind) in kinds.iter().enumerate() {
            match kind {
                NodeKind::Interior => {
                    unknown_of[k] = interior.len();
                    interior.push(k);
                    valid.push(k);
                }
                NodeKind::Boundary => {
                    boundary.push(k);
                    valid.push(k);
                }
                NodeKind::Exterior => {}
            }
        }
        if interior.is_empty() {
            return Err(Error::InvalidDomain(
                "grid too coarse: no interior node".into(),
            ));
        }
        let area = fixed_order_sum(valid.iter().map(|&k| weights[k]));
        Ok(Arc::new(Domain {
            spec,
            origin,
            hx,
            hy,
            kinds,
            weights,
            area,
            interior,
            boundary,
            valid,
            unknown_of,
        }))
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn shape(&self) -> Shape {
        self.spec.shape
    }

    pub fn nx(&self) -> usize {
        self.spec.nx
    }

    pub fn ny(&self) -> usize {
        self.spec.ny
    }

    pub fn len(&self) -> usize {
        self.spec.nx * self.spec.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Largest grid spacing.
    pub fn h(&self) -> f64 {
        self.hx.max(self.hy)
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn kind(&self, k: usize) -> NodeKind {
        self.kinds[k]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    /// Interior and boundary nodes in index order.
    pub fn valid(&self) -> &[usize] {
        &self.valid
    }

    pub fn is_valid(&self, k: usize) -> bool {
        self.kinds[k] != NodeKind::Exterior
    }

    /// Index of the elliptic unknown attached to node `k`, if interior.
    pub fn unknown_of(&self, k: usize) -> Option<usize> {
        let u = self.unknown_of[k];
        (u != usize::MAX).then_some(u)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.spec.nx + i
    }

    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.spec.nx, k / self.spec.nx)
    }

    pub fn node(&self, k: usize) -> Vec2 {
        let (i, j) = self.ij(k);
        Vec2::new(
            self.origin.x + i as f64 * self.hx,
            self.origin.y + j as f64 * self.hy,
        )
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    /// Diameter of the continuous domain.
    pub fn diameter(&self) -> f64 {
        match self.spec.shape {
            Shape::Rectangle { lx, ly } => lx.hypot(ly),
            Shape::Disk { radius, .. } => 2.0 * radius,
        }
    }

    /// True if `p` lies in the closure of the continuous domain.
    pub fn contains(&self, p: Vec2) -> bool {
        self.distance_outside(p) == 0.0
    }

    /// Distance from `p` to the closure of the continuous domain.
    pub fn distance_outside(&self, p: Vec2) -> f64 {
        match self.spec.shape {
            Shape::Rectangle { lx, ly } => {
                let dx = (-p.x).max(p.x - lx).max(0.0);
                let dy = (-p.y).max(p.y - ly).max(0.0);
                dx.hypot(dy)
            }
            Shape::Disk { center, radius } => ((p - center).norm() - radius).max(0.0),
        }
    }

    /// Nearest point of the closure of the continuous domain.
    pub fn project(&self, p: Vec2) -> Vec2 {
        match self.spec.shape {
            Shape::Rectangle { lx, ly } => Vec2::new(p.x.clamp(0.0, lx), p.y.clamp(0.0, ly)),
            Shape::Disk { center, radius } => {
                let d = p - center;
                let r = d.norm();
                if r <= radius {
                    p
                } else {
                    center + d * (radius / r)
                }
            }
        }
    }

    /// Projects points that left the domain by at most one cell; farther points are errors.
    pub fn admit(&self, p: Vec2) -> Result<Vec2> {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::OutsideDomain { x: p.x, y: p.y });
        }
        let d = self.distance_outside(p);
        if d == 0.0 {
            Ok(p)
        } else if d <= self.h() {
            Ok(self.project(p))
        } else {
            Err(Error::OutsideDomain { x: p.x, y: p.y })
        }
    }

    /// Outward unit normal of the continuous boundary nearest to `p`.
    pub fn outward_normal(&self, p: Vec2) -> Vec2 {
        match self.spec.shape {
            Shape::Disk { center, .. } => {
                let d = p - center;
                let r = d.norm();
                if r == 0.0 {
                    Vec2::new(1.0, 0.0)
                } else {
                    d * (1.0 / r)
                }
            }
            Shape::Rectangle { lx, ly } => {
                let dists = [p.x, lx - p.x, p.y, ly - p.y];
                let normals = [
                    Vec2::new(-1.0, 0.0),
                    Vec2::new(1.0, 0.0),
                    Vec2::new(0.0, -1.0),
                    Vec2::new(0.0, 1.0),
                ];
                let mut best = 0;
                for s in 1..4 {
                    if dists[s] < dists[best] {
                        best = s;
                    }
                }
                normals[best]
            }
        }
    }

    /// Points on the continuous boundary, `count` of them, evenly spaced.
    pub fn boundary_samples(&self, count: usize) -> Vec<Vec2> {
        match self.spec.shape {
            Shape::Disk { center, radius } => (0..count)
                .map(|s| {
                    let a = 2.0 * std::f64::consts::PI * s as f64 / count as f64;
                    center + Vec2::new(a.cos(), a.sin()) * radius
                })
                .collect(),
            Shape::Rectangle { lx, ly } => {
                let per = 2.0 * (lx + ly);
                (0..count)
                    .map(|s| {
                        let mut d = per * s as f64 / count as f64;
                        if d < lx {
                            return Vec2::new(d, 0.0);
                        }
                        d -= lx;
                        if d < ly {
                            return Vec2::new(lx, d);
                        }
                        d -= ly;
                        if d < lx {
                            return Vec2::new(lx - d, ly);
                        }
                        Vec2::new(0.0, ly - (d - lx))
                    })
                    .collect()
            }
        }
    }

    /// Coordinate field: `axis` 0 gives x, 1 gives y.
    pub fn coordinate_field(self: &Arc<Self>, axis: usize) -> ScalarField {
        ScalarField::from_fn(self, |p| if axis == 0 { p.x } else { p.y })
    }

    pub fn same_as(&self, other: &Domain) -> bool {
        std::ptr::eq(self, other) || self == other
    }
}

#[allow(clippy::too_many_arguments)]
fn disk_weights(
    weights: &mut [f64],
    kinds: &[NodeKind],
    nx: usize,
    ny: usize,
    origin: Vec2,
    hx: f64,
    hy: f64,
    center: Vec2,
    radius: f64,
) {
    let mut spill = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let px = origin.x + i as f64 * hx;
            let py = origin.y + j as f64 * hy;
            let a = cell_disk_area(
                px - 0.5 * hx,
                px + 0.5 * hx,
                py - 0.5 * hy,
                py + 0.5 * hy,
                center,
                radius,
            );
            let k = j * nx + i;
            if kinds[k] == NodeKind::Exterior {
                spill[k] = a;
            } else {
                weights[k] = a;
            }
        }
    }
    // Slivers of the disk owned by exterior cells go to the nearest valid node.
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            if spill[k] == 0.0 {
                continue;
            }
            let p = Vec2::new(origin.x + i as f64 * hx, origin.y + j as f64 * hy);
            let mut best: Option<(f64, usize)> = None;
            for dj in -2isize..=2 {
                for di in -2isize..=2 {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                        continue;
                    }
                    let kk = jj as usize * nx + ii as usize;
                    if kinds[kk] == NodeKind::Exterior {
                        continue;
                    }
                    let q = Vec2::new(origin.x + ii as f64 * hx, origin.y + jj as f64 * hy);
                    let d = (q - p).norm();
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, kk));
                    }
                }
            }
            if let Some((_, kk)) = best {
                weights[kk] += spill[k];
            }
        }
    }
}

/// Area of `[x0, x1] x [y0, y1]` intersected with a disk.
fn cell_disk_area(x0: f64, x1: f64, y0: f64, y1: f64, center: Vec2, radius: f64) -> f64 {
    let full = (x1 - x0) * (y1 - y0);
    let r2 = radius * radius;
    let corner_in = |x: f64, y: f64| {
        let d = Vec2::new(x, y) - center;
        d.dot(d) <= r2
    };
    if corner_in(x0, y0) && corner_in(x1, y0) && corner_in(x0, y1) && corner_in(x1, y1) {
        return full;
    }
    let nearest = Vec2::new(center.x.clamp(x0, x1), center.y.clamp(y0, y1));
    if (nearest - center).norm() >= radius {
        return 0.0;
    }
    let n = CUT_CELL_SAMPLES;
    let dx = (x1 - x0) / n as f64;
    let dy = (y1 - y0) / n as f64;
    let mut count = 0usize;
    for b in 0..n {
        for a in 0..n {
            if corner_in(x0 + (a as f64 + 0.5) * dx, y0 + (b as f64 + 0.5) * dy) {
                count += 1;
            }
        }
    }
    full * count as f64 / (n * n) as f64
}

/// Compensated sum in iteration order. Bit-identical for identical input order.
pub fn fixed_order_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Bicubic,
}

/// Nodal scalar values on a [`Domain`]. Exterior entries are stored as zero and never read.
#[derive(Debug, Clone)]
pub struct ScalarField {
    domain: Arc<Domain>,
    values: Vec<f64>,
    pub time: Option<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.domain.same_as(&other.domain) && self.values == other.values && self.time == other.time
    }
}

impl ScalarField {
    pub fn new(domain: &Arc<Domain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, domain has {} nodes",
                values.len(),
                domain.len()
            )));
        }
        Ok(Self {
            domain: Arc::clone(domain),
            values,
            time: None,
        })
    }

    pub fn zeros(domain: &Arc<Domain>) -> Self {
        Self {
            domain: Arc::clone(domain),
            values: vec![0.0; domain.len()],
            time: None,
        }
    }

    pub fn constant(domain: &Arc<Domain>, c: f64) -> Self {
        Self::from_fn(domain, |_| c)
    }

    /// Samples `f` at every valid node.
    pub fn from_fn(domain: &Arc<Domain>, f: impl Fn(Vec2) -> f64) -> Self {
        let mut values = vec![0.0; domain.len()];
        for &k in domain.valid() {
            values[k] = f(domain.node(k));
        }
        Self {
            domain: Arc::clone(domain),
            values,
            time: None,
        }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, k: usize) -> f64 {
        debug_assert!(self.domain.is_valid(k), "read of exterior node {k}");
        self.values[k]
    }

    pub fn check_same_domain(&self, other: &ScalarField) -> Result<()> {
        if self.domain.same_as(&other.domain) {
            Ok(())
        } else {
            Err(Error::DomainMismatch)
        }
    }

    /// Quadrature `sum_k w_k f_k` over valid nodes in a fixed order.
    pub fn integrate(&self) -> f64 {
        let w = self.domain.weights();
        fixed_order_sum(self.domain.valid().iter().map(|&k| w[k] * self.values[k]))
    }

    pub fn mean(&self) -> f64 {
        self.integrate() / self.domain.area()
    }

    pub fn max(&self) -> f64 {
        self.domain
            .valid()
            .iter()
            .map(|&k| self.values[k])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.domain
            .valid()
            .iter()
            .map(|&k| self.values[k])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.domain
            .valid()
            .iter()
            .map(|&k| self.values[k].abs())
            .fold(0.0, f64::max)
    }

    /// Nodewise `self + scale * other` on valid nodes.
    pub fn axpy(&self, scale: f64, other: &ScalarField) -> Result<ScalarField> {
        self.check_same_domain(other)?;
        let mut out = self.clone();
        for &k in self.domain.valid() {
            out.values[k] = self.values[k] + scale * other.values[k];
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(Vec2, f64) -> f64) -> ScalarField {
        let mut out = self.clone();
        for &k in self.domain.valid() {
            out.values[k] = f(self.domain.node(k), self.values[k]);
        }
        out
    }

    /// Area-weighted L1 norm of `self - other`.
    pub fn l1_distance(&self, other: &ScalarField) -> Result<f64> {
        self.check_same_domain(other)?;
        let w = self.domain.weights();
        Ok(fixed_order_sum(
            self.domain
                .valid()
                .iter()
                .map(|&k| w[k] * (self.values[k] - other.values[k]).abs()),
        ))
    }

    /// Area-weighted L2 norm of `self - other`.
    pub fn l2_distance(&self, other: &ScalarField) -> Result<f64> {
        self.check_same_domain(other)?;
        let w = self.domain.weights();
        Ok(fixed_order_sum(self.domain.valid().iter().map(|&k| {
            let d = self.values[k] - other.values[k];
            w[k] * d * d
        }))
        .sqrt())
    }

    pub fn max_abs_difference(&self, other: &ScalarField) -> Result<f64> {
        self.check_same_domain(other)?;
        Ok(self
            .domain
            .valid()
            .iter()
            .map(|&k| (self.values[k] - other.values[k]).abs())
            .fold(0.0, f64::max))
    }

    pub fn interpolate(&self, p: Vec2, order: Interpolation) -> Result<f64> {
        let stencil = Stencil::locate(&self.domain, p)?;
        Ok(match order {
            Interpolation::Bilinear => stencil.bilinear(&self.domain, &self.values),
            Interpolation::Bicubic => stencil
                .bicubic(&self.domain, &self.values)
                .unwrap_or_else(|| stencil.bilinear(&self.domain, &self.values)),
        })
    }
}

/// Two nodal components `(u1, u2)` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub u1: ScalarField,
    pub u2: ScalarField,
}

impl VectorField {
    pub fn new(u1: ScalarField, u2: ScalarField) -> Result<Self> {
        u1.check_same_domain(&u2)?;
        Ok(Self { u1, u2 })
    }

    pub fn zeros(domain: &Arc<Domain>) -> Self {
        Self {
            u1: ScalarField::zeros(domain),
            u2: ScalarField::zeros(domain),
        }
    }

    pub fn from_fn(domain: &Arc<Domain>, f: impl Fn(Vec2) -> Vec2) -> Self {
        Self {
            u1: ScalarField::from_fn(domain, |p| f(p).x),
            u2: ScalarField::from_fn(domain, |p| f(p).y),
        }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        self.u1.domain()
    }

    pub fn at(&self, k: usize) -> Vec2 {
        Vec2::new(self.u1.get(k), self.u2.get(k))
    }

    pub fn max_norm(&self) -> f64 {
        self.domain()
            .valid()
            .iter()
            .map(|&k| self.at(k).norm())
            .fold(0.0, f64::max)
    }

    pub fn interpolate(&self, p: Vec2, order: Interpolation) -> Result<Vec2> {
        let domain = self.domain();
        let stencil = Stencil::locate(domain, p)?;
        let eval = |values: &[f64]| match order {
            Interpolation::Bilinear => stencil.bilinear(domain, values),
            Interpolation::Bicubic => stencil
                .bicubic(domain, values)
                .unwrap_or_else(|| stencil.bilinear(domain, values)),
        };
        Ok(Vec2::new(eval(self.u1.values()), eval(self.u2.values())))
    }

    /// Discrete divergence by centered differences at interior nodes; zero elsewhere.
    pub fn divergence(&self) -> ScalarField {
        let domain = self.domain();
        let mut out = ScalarField::zeros(domain);
        let nx = domain.nx();
        let (hx, hy) = (domain.hx(), domain.hy());
        let a = self.u1.values();
        let b = self.u2.values();
        for &k in domain.interior() {
            out.values[k] =
                (a[k + 1] - a[k - 1]) / (2.0 * hx) + (b[k + nx] - b[k - nx]) / (2.0 * hy);
        }
        out
    }
}

/// Cell containing a point together with its local coordinates.
struct Stencil {
    i: usize,
    j: usize,
    s: f64,
    t: f64,
    p: Vec2,
}

impl Stencil {
    fn locate(domain: &Domain, p: Vec2) -> Result<Self> {
        let p = domain.admit(p)?;
        let (nx, ny) = (domain.nx(), domain.ny());
        let o = domain.origin();
        let fx = ((p.x - o.x) / domain.hx()).clamp(0.0, (nx - 1) as f64);
        let fy = ((p.y - o.y) / domain.hy()).clamp(0.0, (ny - 1) as f64);
        let i = (fx.floor() as usize).min(nx - 2);
        let j = (fy.floor() as usize).min(ny - 2);
        Ok(Self {
            i,
            j,
            s: fx - i as f64,
            t: fy - j as f64,
            p,
        })
    }

    /// Bilinear weights renormalized over valid corners: a convex combination of the
    /// stencil values, falling back to the nearest valid node if no corner is valid.
    fn bilinear(&self, domain: &Domain, values: &[f64]) -> f64 {
        let nx = domain.nx();
        let k00 = self.j * nx + self.i;
        let corners = [
            (k00, (1.0 - self.s) * (1.0 - self.t)),
            (k00 + 1, self.s * (1.0 - self.t)),
            (k00 + nx, (1.0 - self.s) * self.t),
            (k00 + nx + 1, self.s * self.t),
        ];
        if corners.iter().all(|&(k, _)| domain.is_valid(k)) {
            return corners.iter().map(|&(k, w)| w * values[k]).sum();
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for &(k, w) in &corners {
            if domain.is_valid(k) {
                num += w * values[k];
                den += w;
            }
        }
        if den > 1e-12 {
            return num / den;
        }
        values[self.nearest_valid(domain)]
    }

    fn nearest_valid(&self, domain: &Domain) -> usize {
        let (nx, ny) = (domain.nx() as isize, domain.ny() as isize);
        let mut best: Option<(f64, usize)> = None;
        for radius in 1..=3isize {
            for dj in -radius..=radius + 1 {
                for di in -radius..=radius + 1 {
                    let (ii, jj) = (self.i as isize + di, self.j as isize + dj);
                    if ii < 0 || jj < 0 || ii >= nx || jj >= ny {
                        continue;
                    }
                    let k = jj as usize * nx as usize + ii as usize;
                    if !domain.is_valid(k) {
                        continue;
                    }
                    let d = (domain.node(k) - self.p).norm();
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, k));
                    }
                }
            }
            if let Some((_, k)) = best {
                return k;
            }
        }
        // Admitted points are within one cell of the domain, which always has valid nodes nearby.
        domain.valid()[0]
    }

    /// Catmull-Rom bicubic over the 4x4 neighborhood, if all of it is valid.
    fn bicubic(&self, domain: &Domain, values: &[f64]) -> Option<f64> {
        let (nx, ny) = (domain.nx(), domain.ny());
        if self.i == 0 || self.j == 0 || self.i + 2 >= nx || self.j + 2 >= ny {
            return None;
        }
        let wx = catmull_rom(self.s);
        let wy = catmull_rom(self.t);
        let mut acc = 0.0;
        for (b, wyb) in wy.iter().enumerate() {
            let jj = self.j + b - 1;
            let mut row = 0.0;
            for (a, wxa) in wx.iter().enumerate() {
                let k = jj * nx + self.i + a - 1;
                if !domain.is_valid(k) {
                    return None;
                }
                row += wxa * values[k];
            }
            acc += wyb * row;
        }
        Some(acc)
    }
}

fn catmull_rom(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        0.5 * (-s3 + 2.0 * s2 - s),
        0.5 * (3.0 * s3 - 5.0 * s2 + 2.0),
        0.5 * (-3.0 * s3 + 4.0 * s2 + s),
        0.5 * (s3 - s2),
    ]
}
