//! Covariance estimators for OLS coefficients: classical IID and the
//! HC0–HC4 sandwich family, with explicit handling of leverage-one
//! observations, plus the leave-one-out jackknife and the known-σ "true"
//! covariance used as oracles.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::regression::{fit_ols, DesignInfo, RegressionFit};
use crate::specs::{H1Policy, VarianceKind};

/// Observations with h above 1 − H1_TOL are treated as leverage one.
pub const H1_TOL: f64 = 1e-8;

/// A computed covariance with its diagnostics.
#[derive(Clone, Debug)]
pub struct VarianceResult {
    pub vcov: DMatrix<f64>,
    pub se: DVector<f64>,
    /// Applied per-observation adjustment factors; 0 for observations zeroed
    /// out or omitted by the leverage-one policy, 1 everywhere for IID.
    pub alpha: DVector<f64>,
    /// How many observations hit the leverage-one threshold.
    pub h1_count: usize,
    /// Indices dropped from the sandwich under [`H1Policy::OmitObs`].
    pub omitted: Vec<usize>,
}

/// Per-observation meat adjustment factors α_i for a variance kind.
///
/// HC0: 1. HC1: n/(n−K). HC2: 1/(1−hᵢ). HC3: 1/(1−hᵢ)². HC4: 1/(1−hᵢ)^δᵢ
/// with δᵢ = min(4, n·hᵢ/K). IID has no meat; returns ones.
///
/// For HC2–HC4 any hᵢ ≥ 1 is a [`Error::DivisionDomain`] — leverage-one
/// observations must be handled by a policy before calling this.
pub fn alpha_factors(
    kind: VarianceKind,
    leverages: &DVector<f64>,
    n: usize,
    k: usize,
) -> Result<DVector<f64>> {
    let len = leverages.len();
    let check = |needs_h: bool| -> Result<()> {
        if !needs_h {
            return Ok(());
        }
        for (i, &h) in leverages.iter().enumerate() {
            if h >= 1.0 {
                return Err(Error::DivisionDomain { index: i, leverage: h });
            }
        }
        Ok(())
    };
    match kind {
        VarianceKind::Iid | VarianceKind::Hc0 => Ok(DVector::from_element(len, 1.0)),
        VarianceKind::Hc1 => {
            if n <= k {
                return Err(Error::InvalidConfig(format!(
                    "HC1 needs n > K, got n = {n}, K = {k}"
                )));
            }
            Ok(DVector::from_element(len, n as f64 / (n - k) as f64))
        }
        VarianceKind::Hc2 => {
            check(true)?;
            Ok(leverages.map(|h| 1.0 / (1.0 - h)))
        }
        VarianceKind::Hc3 => {
            check(true)?;
            Ok(leverages.map(|h| 1.0 / ((1.0 - h) * (1.0 - h))))
        }
        VarianceKind::Hc4 => {
            check(true)?;
            let (nf, kf) = (n as f64, k as f64);
            Ok(leverages.map(|h| {
                let delta = (nf * h / kf).min(4.0);
                (1.0 - h).powf(-delta)
            }))
        }
    }
}

/// Indices whose leverage reaches the leverage-one threshold.
pub fn leverage_one_indices(leverages: &DVector<f64>) -> Vec<usize> {
    leverages
        .iter()
        .enumerate()
        .filter(|(_, &h)| h > 1.0 - H1_TOL)
        .map(|(i, _)| i)
        .collect()
}

/// The requested covariance estimator for a fitted regression.
///
/// The leverage-one policy only matters for HC2–HC4, where the adjustment
/// 1/(1−h) is undefined at h = 1; it is accepted (and recorded) for the
/// other kinds but has no effect there. Under [`H1Policy::OmitObs`] the
/// bread (XᵀX)⁻¹ is recomputed from the retained rows while α keeps using
/// the original full-design leverages, and HC4's δ keeps the full-sample n
/// and K; coefficients are never refitted.
pub fn hc_vcov(
    fit: &RegressionFit,
    kind: VarianceKind,
    policy: H1Policy,
) -> Result<VarianceResult> {
    let n = fit.n();
    let k = fit.k();
    let h1 = leverage_one_indices(fit.leverages());
    let h1_count = h1.len();

    if kind == VarianceKind::Iid {
        let vcov = fit.xtx_inv() * fit.sigma2_hat();
        return Ok(VarianceResult {
            se: sqrt_diag(&vcov),
            vcov,
            alpha: DVector::from_element(n, 1.0),
            h1_count,
            omitted: Vec::new(),
        });
    }

    let needs_policy = matches!(kind, VarianceKind::Hc2 | VarianceKind::Hc3 | VarianceKind::Hc4);
    let (weights, alpha, omitted, bread) = if !needs_policy || h1.is_empty() {
        let alpha = alpha_factors(kind, fit.leverages(), n, k)?;
        let weights: DVector<f64> =
            DVector::from_fn(n, |i, _| alpha[i] * fit.residuals()[i] * fit.residuals()[i]);
        (weights, alpha, Vec::new(), fit.xtx_inv().clone())
    } else {
        match policy {
            H1Policy::ZeroOut => {
                let mut alpha = DVector::zeros(n);
                for i in 0..n {
                    let h = fit.leverages()[i];
                    if h > 1.0 - H1_TOL {
                        continue;
                    }
                    alpha[i] = single_alpha(kind, h, n, k);
                }
                let weights = DVector::from_fn(n, |i, _| {
                    alpha[i] * fit.residuals()[i] * fit.residuals()[i]
                });
                (weights, alpha, Vec::new(), fit.xtx_inv().clone())
            }
            H1Policy::OmitObs => {
                let kept: Vec<usize> =
                    (0..n).filter(|i| fit.leverages()[*i] <= 1.0 - H1_TOL).collect();
                if kept.is_empty() {
                    return Err(Error::AllOmitted);
                }
                let bread = bread_from_rows(fit.x(), &kept)?;
                let mut alpha = DVector::zeros(n);
                for &i in &kept {
                    alpha[i] = single_alpha(kind, fit.leverages()[i], n, k);
                }
                let weights = DVector::from_fn(n, |i, _| {
                    alpha[i] * fit.residuals()[i] * fit.residuals()[i]
                });
                (weights, alpha, h1.clone(), bread)
            }
        }
    };

    let meat = weighted_cross(fit.x(), &weights);
    let vcov = &bread * meat * &bread;
    Ok(VarianceResult { se: sqrt_diag(&vcov), vcov, alpha, h1_count, omitted })
}

/// Per-observation weights c for coefficient `k` such that the k-th sandwich
/// diagonal is V_kk = Σᵢ cᵢ ε̂ᵢ² for any outcome sharing this design. This is
/// the cheap path when one design is reused across many simulated outcomes;
/// it must agree with [`hc_vcov`]'s diagonal exactly.
///
/// For the homoskedastic kind the identity still holds with the constant
/// cᵢ = (XᵀX)⁻¹_kk / (n−K). For sandwich kinds cᵢ = αᵢ ℓ²_{k,i} with
/// ℓ = X·bread column k, where the bread and αᵢ follow the same leverage-one
/// policy rules as [`hc_vcov`].
pub fn vcov_weight_vector(
    design: &DesignInfo,
    kind: VarianceKind,
    policy: H1Policy,
    k: usize,
) -> Result<DVector<f64>> {
    let n = design.n();
    let nk = design.k();
    if k >= nk {
        return Err(Error::IndexOutOfRange { index: k, n_cols: nk });
    }
    if kind == VarianceKind::Iid {
        let c = design.xtx_inv()[(k, k)] / (n - nk) as f64;
        return Ok(DVector::from_element(n, c));
    }

    let h1 = leverage_one_indices(design.leverages());
    let needs_policy = matches!(kind, VarianceKind::Hc2 | VarianceKind::Hc3 | VarianceKind::Hc4);
    if !needs_policy || h1.is_empty() {
        let alpha = alpha_factors(kind, design.leverages(), n, nk)?;
        let ell = design.weight_matrix().column(k);
        return Ok(DVector::from_fn(n, |i, _| alpha[i] * ell[i] * ell[i]));
    }
    match policy {
        H1Policy::ZeroOut => {
            let ell = design.weight_matrix().column(k);
            Ok(DVector::from_fn(n, |i, _| {
                let h = design.leverages()[i];
                if h > 1.0 - H1_TOL {
                    0.0
                } else {
                    single_alpha(kind, h, n, nk) * ell[i] * ell[i]
                }
            }))
        }
        H1Policy::OmitObs => {
            let kept: Vec<usize> =
                (0..n).filter(|i| design.leverages()[*i] <= 1.0 - H1_TOL).collect();
            if kept.is_empty() {
                return Err(Error::AllOmitted);
            }
            let bread = bread_from_rows(design.x(), &kept)?;
            let ell = design.x() * bread.column(k);
            Ok(DVector::from_fn(n, |i, _| {
                let h = design.leverages()[i];
                if h > 1.0 - H1_TOL {
                    0.0
                } else {
                    single_alpha(kind, h, n, nk) * ell[i] * ell[i]
                }
            }))
        }
    }
}

/// Leave-one-out jackknife covariance Σᵢ (β̂₍ᵢ₎ − β̂)(β̂₍ᵢ₎ − β̂)ᵀ by literal
/// refitting — the brute-force route that HC3 must reproduce.
pub fn jackknife_vcov(data: &Dataset) -> Result<DMatrix<f64>> {
    let full = fit_ols(data)?;
    let n = data.n();
    let k = data.k();
    if n < k + 2 {
        return Err(Error::InvalidConfig(format!(
            "jackknife needs n ≥ K + 2, got n = {n}, K = {k}"
        )));
    }
    if let Some(&i) = leverage_one_indices(full.leverages()).first() {
        return Err(Error::SingularLeaveOneOut { index: i });
    }
    let mut v = DMatrix::zeros(k, k);
    for i in 0..n {
        let y_loo = data.y().clone().remove_row(i);
        let x_loo = data.x().clone().remove_row(i);
        let loo = Dataset::with_names(y_loo, x_loo, data.names().to_vec())
            .and_then(|d| fit_ols(&d))
            .map_err(|_| Error::SingularLeaveOneOut { index: i })?;
        let d = loo.beta_hat() - full.beta_hat();
        v += &d * d.transpose();
    }
    Ok(v)
}

/// The exact sampling covariance of β̂ when the error standard deviations
/// σᵢ are known: (XᵀX)⁻¹ (Σ σᵢ² xᵢxᵢᵀ) (XᵀX)⁻¹.
pub fn true_vcov(x: &DMatrix<f64>, sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
    if sigma.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} sigmas for {} rows",
            sigma.len(),
            x.nrows()
        )));
    }
    if sigma.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::NonFinite { context: "sigma vector".into() });
    }
    let kept: Vec<usize> = (0..x.nrows()).collect();
    let bread = bread_from_rows(x, &kept)?;
    let meat = weighted_cross(x, &sigma.map(|s| s * s));
    Ok(&bread * meat * &bread)
}

fn single_alpha(kind: VarianceKind, h: f64, n: usize, k: usize) -> f64 {
    match kind {
        VarianceKind::Iid | VarianceKind::Hc0 => 1.0,
        VarianceKind::Hc1 => n as f64 / (n - k) as f64,
        VarianceKind::Hc2 => 1.0 / (1.0 - h),
        VarianceKind::Hc3 => 1.0 / ((1.0 - h) * (1.0 - h)),
        VarianceKind::Hc4 => {
            let delta = (n as f64 * h / k as f64).min(4.0);
            (1.0 - h).powf(-delta)
        }
    }
}

/// Xᵀ diag(w) X.
fn weighted_cross(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for i in 0..x.nrows() {
        scaled.row_mut(i).scale_mut(w[i]);
    }
    x.tr_mul(&scaled)
}

/// (Σ_{i∈kept} xᵢxᵢᵀ)⁻¹ via QR of the retained rows.
fn bread_from_rows(x: &DMatrix<f64>, kept: &[usize]) -> Result<DMatrix<f64>> {
    let k = x.ncols();
    if kept.is_empty() {
        return Err(Error::AllOmitted);
    }
    let sub = DMatrix::from_fn(kept.len(), k, |i, j| x[(kept[i], j)]);
    if kept.len() < k {
        return Err(Error::RankDeficient { columns: (0..k).collect() });
    }
    let qr = sub.qr();
    let r = qr.r();
    let max_diag = (0..k).map(|j| r[(j, j)].abs()).fold(0.0_f64, f64::max);
    let suspects: Vec<usize> =
        (0..k).filter(|&j| r[(j, j)].abs() <= 1e-10 * max_diag).collect();
    if !(max_diag > 0.0) || !suspects.is_empty() {
        return Err(Error::RankDeficient { columns: suspects });
    }
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::RankDeficient { columns: Vec::new() })?;
    Ok(&r_inv * r_inv.transpose())
}

fn sqrt_diag(v: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(v.nrows(), (0..v.nrows()).map(|i| v[(i, i)].max(0.0).sqrt()))
}
