//! Student's t distribution with fractional degrees of freedom.
//!
//! The CDF goes through the regularized incomplete beta function
//! I_x(a, b) (Lentz's continued fraction), with the log of the front factor
//! assembled from the t parametrization directly so that large-dof cases do
//! not lose precision to cancellation. Absolute CDF error is below 1e-12 for
//! dof up to ~1e4 and degrades gracefully (≈1e-9) at dof ~1e6, where the
//! distribution is indistinguishable from the normal at far coarser scales.
//!
//! The quantile inverts the CDF by bisection plus a Newton polish and is
//! accurate to well under 1e-10 in probability.

use crate::error::{Error, Result};

/// CDF of the t distribution with `dof > 0` degrees of freedom at `x`.
pub fn t_cdf(x: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) || !dof.is_finite() {
        return Err(Error::DomainError { dof });
    }
    if x.is_nan() {
        return Err(Error::NonFinite { context: "t_cdf argument".into() });
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    let x2 = x * x;
    // xx = dof/(dof + x²); its log computed cancellation-free.
    let xx = dof / (dof + x2);
    let ln_xx = -(x2 / dof).ln_1p();
    let ln_1m_xx = x2.ln() - (dof + x2).ln();
    let tail = 0.5 * inc_beta_with_logs(0.5 * dof, 0.5, xx, ln_xx, ln_1m_xx);
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// Density of the t distribution, used for the Newton polish.
pub fn t_pdf(x: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) || !dof.is_finite() {
        return Err(Error::DomainError { dof });
    }
    let ln_pdf = -0.5 * dof.ln() - ln_beta(0.5 * dof, 0.5)
        - 0.5 * (dof + 1.0) * (x * x / dof).ln_1p();
    Ok(ln_pdf.exp())
}

/// Quantile (inverse CDF) of the t distribution: the `x` with CDF(x) = p.
///
/// Bisection brackets the root, then a few Newton steps polish it; the
/// result satisfies |CDF(x) − p| ≤ 1e-10 (usually far better).
pub fn t_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) || !dof.is_finite() {
        return Err(Error::DomainError { dof });
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "quantile level must lie strictly inside (0,1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work on the upper half and mirror.
    let (target, flip) = if p < 0.5 { (1.0 - p, true) } else { (p, false) };

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut guard = 0;
    while t_cdf(hi, dof)? < target {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 2100 {
            return Err(Error::NonFinite { context: "t_quantile bracket".into() });
        }
    }
    // Bisection to a modest width, then Newton with bracket clamping.
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, dof)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-8 * (1.0 + hi.abs()) {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..8 {
        let f = t_cdf(x, dof)? - target;
        if f.abs() <= 1e-13 {
            break;
        }
        let d = t_pdf(x, dof)?;
        if d <= 0.0 || !d.is_finite() {
            break;
        }
        let mut next = x - f / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if f > 0.0 {
            hi = x.min(hi);
        } else {
            lo = x.max(lo);
        }
        x = next;
    }
    Ok(if flip { -x } else { x })
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    inc_beta_with_logs(a, b, x, x.ln(), (-x).ln_1p())
}

/// I_x(a, b) with the logs of x and 1−x supplied by the caller, so that
/// parametrizations with x ≈ 1 keep full precision.
fn inc_beta_with_logs(a: f64, b: f64, x: f64, ln_x: f64, ln_1m_x: f64) -> f64 {
    debug_assert!(x > 0.0 && x < 1.0);
    let ln_front = a * ln_x + b * ln_1m_x - ln_beta(a, b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Lentz's modified continued fraction for the incomplete beta.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    // Convergence near the x ≈ (a+1)/(a+b+2) switch point slows to O(√a)
    // iterations for very large a, hence the generous cap.
    const MAX_ITER: usize = 20_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// ln Γ(z) for z > 0 (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(z: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if z < 0.5 {
        // Reflection for the small-argument side.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * z).sin().ln()
            - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut x = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

/// ln B(a, b), stable when one argument is much larger than the other.
///
/// For a large argument the difference ln Γ(large+small) − ln Γ(large) is
/// evaluated from a Stirling expansion of the difference itself rather than
/// as a difference of two huge logs, which would lose absolute precision.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    let (small, large) = if a <= b { (a, b) } else { (b, a) };
    if large < 40.0 {
        ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
    } else {
        ln_gamma(small) - ln_gamma_diff(large, small)
    }
}

/// ln Γ(a + b) − ln Γ(a) for a ≥ 40, b ≥ 0, computed cancellation-free.
fn ln_gamma_diff(a: f64, b: f64) -> f64 {
    (a - 0.5) * (b / a).ln_1p() + b * (a + b).ln() - b + stirling_tail(a + b)
        - stirling_tail(a)
}

/// The series tail of Stirling's approximation, valid for z ≥ 30.
fn stirling_tail(z: f64) -> f64 {
    let z2 = z * z;
    (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * z2)) / z2) / z2) / z
}
