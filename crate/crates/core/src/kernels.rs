//! Free-space kernel layer of `Delta - I` and the quasi-Lipschitz modulus.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::Vec2;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Switch between the power series and the large-argument continued fraction.
const SERIES_LIMIT: f64 = 2.0;

/// Log-Lipschitz modulus: `(1 - ln r) r` below one, one above.
pub fn chi(r: f64) -> Result<f64> {
    if r.is_nan() || r < 0.0 {
        return Err(Error::InvalidArgument(format!("chi needs r >= 0, got {r}")));
    }
    Ok(chi_unchecked(r))
}

pub(crate) fn chi_unchecked(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else if r < 1.0 {
        (1.0 - r.ln()) * r
    } else {
        1.0
    }
}

/// Linear majorant `-ln(eps) r + eps` of [`chi`], tangent to it at `r = eps`.
pub fn chi_majorant(r: f64, eps: f64) -> Result<f64> {
    if r.is_nan() || r < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "chi majorant needs r >= 0, got {r}"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "chi majorant needs eps in (0, 1), got {eps}"
        )));
    }
    Ok(-eps.ln() * r + eps)
}

/// Fundamental solution of `Delta - I` in the plane, `-K0(r) / (2 pi)`.
pub fn green_free(r: f64) -> Result<f64> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "green function needs r > 0, got {r}"
        )));
    }
    Ok(-bessel_k0(r) / (2.0 * PI))
}

/// Radial derivative of [`green_free`], `K1(r) / (2 pi)`.
pub fn green_free_derivative(r: f64) -> Result<f64> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "green function needs r > 0, got {r}"
        )));
    }
    Ok(bessel_k1(r) / (2.0 * PI))
}

/// Perp-gradient in `x` of `green_free(|x - y|)`.
pub fn kernel_k(x: Vec2, y: Vec2) -> Result<Vec2> {
    let d = x - y;
    let r = d.norm();
    if r == 0.0 {
        return Err(Error::InvalidArgument("kernel is singular at x = y".into()));
    }
    let g = green_free_derivative(r)?;
    Ok(d.perp() * (g / r))
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * f64::EPSILON * 0.5 {
            return sum;
        }
        k += 1.0;
    }
}

/// Modified Bessel function of the first kind, order one.
pub fn bessel_i1(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + 1.0));
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON * 0.5 {
            return sum;
        }
        k += 1.0;
    }
}

/// Modified Bessel function of the second kind, order zero, for `x > 0`.
pub fn bessel_k0(x: f64) -> f64 {
    if x <= SERIES_LIMIT {
        k0_series(x)
    } else {
        k_large(x).0
    }
}

/// Modified Bessel function of the second kind, order one, for `x > 0`.
pub fn bessel_k1(x: f64) -> f64 {
    if x <= SERIES_LIMIT {
        k1_series(x)
    } else {
        k_large(x).1
    }
}

// K0(x) = -(ln(x/2) + gamma) I0(x) + sum_{k>=1} H_k (x^2/4)^k / (k!)^2
fn k0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut tail = 0.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        harmonic += 1.0 / k;
        let add = term * harmonic;
        tail += add;
        if add < tail * f64::EPSILON * 0.5 {
            break;
        }
        k += 1.0;
    }
    -((0.5 * x).ln() + EULER_GAMMA) * bessel_i0(x) + tail
}

// K1(x) = 1/x + ln(x/2) I1(x)
//         - (x/4) sum_{k>=0} (psi(k+1) + psi(k+2)) (x^2/4)^k / (k! (k+1)!)
fn k1_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut psi_a = -EULER_GAMMA; // digamma(k + 1)
    let mut psi_b = 1.0 - EULER_GAMMA; // digamma(k + 2)
    let mut sum = term * (psi_a + psi_b);
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + 1.0));
        psi_a += 1.0 / k;
        psi_b += 1.0 / (k + 1.0);
        let add = term * (psi_a + psi_b);
        sum += add;
        if add.abs() < sum.abs() * f64::EPSILON * 0.5 {
            break;
        }
        k += 1.0;
    }
    1.0 / x + (0.5 * x).ln() * bessel_i1(x) - 0.25 * x * sum
}

/// `(K0(x), K1(x))` for `x > 2` by Steed's continued fraction for the ratio of
/// confluent hypergeometric functions in the large-argument representation.
fn k_large(x: f64) -> (f64, f64) {
    const MAX_TERMS: usize = 10_000;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..MAX_TERMS {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -c * a / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    h *= a1;
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}
