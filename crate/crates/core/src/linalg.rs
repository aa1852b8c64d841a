//! Sparse symmetric positive-definite machinery for the negated modified Helmholtz
//! operator `I - Delta_h` restricted to interior unknowns.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{fixed_order_sum, Domain};

/// Work is split into chunks of this many rows; partial sums are combined in chunk
/// order so reductions do not depend on the worker count.
const CHUNK: usize = 2048;

/// Matrix-free 5-point `I - Delta_h` on the interior unknowns of a [`Domain`].
pub struct HelmholtzOperator<'a> {
    domain: &'a Domain,
    /// Neighbor unknown indices (usize::MAX for boundary neighbors), order W, E, S, N.
    neighbors: Vec<[usize; 4]>,
    diag: f64,
    cx: f64,
    cy: f64,
}

impl<'a> HelmholtzOperator<'a> {
    pub fn new(domain: &'a Domain) -> Self {
        let nx = domain.nx();
        let neighbors = domain
            .interior()
            .iter()
            .map(|&k| {
                let nb = |kk: usize| domain.unknown_of(kk).unwrap_or(usize::MAX);
                [nb(k - 1), nb(k + 1), nb(k - nx), nb(k + nx)]
            })
            .collect();
        let cx = 1.0 / (domain.hx() * domain.hx());
        let cy = 1.0 / (domain.hy() * domain.hy());
        Self {
            domain,
            neighbors,
            diag: 2.0 * cx + 2.0 * cy + 1.0,
            cx,
            cy,
        }
    }

    pub fn size(&self) -> usize {
        self.neighbors.len()
    }

    pub fn diagonal(&self) -> f64 {
        self.diag
    }

    fn row(&self, r: usize, x: &[f64]) -> f64 {
        let [w, e, s, n] = self.neighbors[r];
        let get = |c: usize| if c == usize::MAX { 0.0 } else { x[c] };
        self.diag * x[r] - self.cx * (get(w) + get(e)) - self.cy * (get(s) + get(n))
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, out)| {
            let base = c * CHUNK;
            for (off, v) in out.iter_mut().enumerate() {
                *v = self.row(base + off, x);
            }
        });
    }

    /// Right-hand side for `(Delta_h - I) psi = rhs` with constant Dirichlet data `g`,
    /// written as `(I - Delta_h) psi_int = -rhs + boundary coupling`.
    pub fn assemble_rhs(&self, rhs: &[f64], g: f64) -> Vec<f64> {
        let interior = self.domain.interior();
        interior
            .iter()
            .enumerate()
            .map(|(r, &k)| {
                let [w, e, s, n] = self.neighbors[r];
                let mut b = -rhs[k];
                if g != 0.0 {
                    let count_x = (w == usize::MAX) as u8 + (e == usize::MAX) as u8;
                    let count_y = (s == usize::MAX) as u8 + (n == usize::MAX) as u8;
                    b += g * (self.cx * count_x as f64 + self.cy * count_y as f64);
                }
                b
            })
            .collect()
    }

    /// Half bandwidth of the operator in unknown ordering.
    pub fn bandwidth(&self) -> usize {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(r, nb)| {
                nb.iter()
                    .filter(|&&c| c != usize::MAX)
                    .map(move |&c| c.abs_diff(r))
            })
            .max()
            .unwrap_or(0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    fixed_order_sum(partials)
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradient from a zero initial guess.
pub fn conjugate_gradient(
    op: &HelmholtzOperator<'_>,
    b: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, CgOutcome)> {
    let n = op.size();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok((
            x,
            CgOutcome {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag = 1.0 / op.diagonal();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().map(|v| v * inv_diag).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iterations {
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        x.par_iter_mut()
            .zip(r.par_iter_mut())
            .zip(p.par_iter().zip(ap.par_iter()))
            .for_each(|((xi, ri), (pi, api))| {
                *xi += alpha * pi;
                *ri -= alpha * api;
            });
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tolerance {
            return Ok((
                x,
                CgOutcome {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        z.par_iter_mut()
            .zip(r.par_iter())
            .for_each(|(zi, ri)| *zi = ri * inv_diag);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut()
            .zip(z.par_iter())
            .for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::SolverDiverged {
        iterations: max_iterations,
        residual: rel,
    })
}

/// Banded Cholesky factor `A = L L^T` stored row-wise with `bw + 1` entries per row.
#[derive(Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// Row r holds L[r][r - bw ..= r].
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(op: &HelmholtzOperator<'_>) -> Result<Self> {
        let n = op.size();
        let bw = op.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        // Fill the lower band of A.
        for r in 0..n {
            l[r * w + bw] = op.diag;
            for (c, coef) in op.neighbors[r].iter().zip([op.cx, op.cx, op.cy, op.cy]) {
                if *c != usize::MAX && *c < r {
                    l[r * w + bw - (r - c)] = -coef;
                }
            }
        }
        for r in 0..n {
            let c0 = r.saturating_sub(bw);
            for c in c0..=r {
                let mut s = l[r * w + bw - (r - c)];
                let k0 = c0.max(c.saturating_sub(bw));
                for k in k0..c {
                    s -= l[r * w + bw - (r - k)] * l[c * w + bw - (c - k)];
                }
                if c == r {
                    if s <= 0.0 {
                        return Err(Error::InvalidArgument(
                            "operator is not positive definite".into(),
                        ));
                    }
                    l[r * w + bw] = s.sqrt();
                } else {
                    l[r * w + bw - (r - c)] = s / l[c * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for r in 0..n {
            let mut s = y[r];
            let lo = r.saturating_sub(bw);
            for (k, yk) in y[lo..r].iter().enumerate().map(|(i, v)| (lo + i, v)) {
                s -= self.l[r * w + bw - (r - k)] * yk;
            }
            y[r] = s / self.l[r * w + bw];
        }
        for r in (0..n).rev() {
            let mut s = y[r];
            let hi = (r + bw + 1).min(n);
            for (k, yk) in y[r + 1..hi].iter().enumerate().map(|(i, v)| (r + 1 + i, v)) {
                s -= self.l[k * w + bw - (k - r)] * yk;
            }
            y[r] = s / self.l[r * w + bw];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, Vec2};

    #[test]
    fn cg_and_cholesky_agree() {
        let d = Domain::build(DomainSpec::disk(Vec2::ZERO, 1.0, 21, 21)).unwrap();
        let op = HelmholtzOperator::new(&d);
        let b: Vec<f64> = (0..op.size())
            .map(|i| ((i * 7) % 11) as f64 - 5.0)
            .collect();
        let (x_cg, out) = conjugate_gradient(&op, &b, 1e-13, 10_000).unwrap();
        assert!(out.relative_residual <= 1e-13);
        let x_ch = BandedCholesky::factor(&op).unwrap().solve(&b);
        for (a, c) in x_cg.iter().zip(&x_ch) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let d = Domain::build(DomainSpec::rectangle(1.0, 1.0, 40, 40)).unwrap();
        let op = HelmholtzOperator::new(&d);
        let b = vec![1.0; op.size()];
        assert!(matches!(
            conjugate_gradient(&op, &b, 1e-14, 3),
            Err(Error::SolverDiverged { iterations: 3, .. })
        ));
    }

    #[test]
    fn operator_is_symmetric() {
        let d = Domain::build(DomainSpec::disk(Vec2::new(0.3, -0.2), 1.5, 17, 19)).unwrap();
        let op = HelmholtzOperator::new(&d);
        let n = op.size();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut ax = vec![0.0; n];
        let mut ay = vec![0.0; n];
        op.apply(&x, &mut ax);
        op.apply(&y, &mut ay);
        assert!((dot(&ax, &y) - dot(&x, &ay)).abs() < 1e-9 * dot(&ax, &y).abs().max(1.0));
    }
}
