//! Restricted wild bootstrap for a single coefficient.
//!
//! The scheme imposes H₀: β_k = 0, so bootstrap outcomes are built from the
//! restricted model's fitted values plus sign-flipped, leverage-adjusted
//! restricted residuals:
//!
//!   y♭ = ŷ_r + √α^θ ∘ e_r ∘ v♭,   v♭ᵢ ∈ {−1, +1},
//!
//! where e_r are the residuals of y on X₋ₖ (identical to the FWL ỹ_k), the
//! θ adjustment uses the restricted design's leverages, and each replication
//! is compared through t♭ = β̂♭_k / √V̂♭_k with an η-type variance on the full
//! design. The p-value is the fraction of replications with |t♭| ≥ |t|.
//!
//! Rademacher signs come from the counter-based stream
//! [`crate::rng::rademacher`]`(seed, replication, observation)`, so results
//! are reproducible and independent of evaluation order.

use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::regression::DesignInfo;
use crate::rng::{self, keyed_uniform};
use crate::specs::WildAdjust;
use crate::variance::H1_TOL;

/// Configuration of one wild-bootstrap run.
#[derive(Clone, Debug)]
pub struct WildSpec {
    /// Adjustment applied to the restricted residuals before sign flips.
    pub theta: WildAdjust,
    /// Variance type for the bootstrap (and original) t statistics.
    pub eta: WildAdjust,
    /// Number of replications.
    pub b: usize,
    pub seed: u64,
}

/// Outcome of a wild-bootstrap test.
#[derive(Clone, Debug, serde::Serialize)]
pub struct WildResult {
    pub p_value: f64,
    /// Original-sample t statistic (η-type standard error).
    pub t_original: f64,
    /// Replications with |t♭| ≥ |t|.
    pub exceed_count: usize,
    pub b: usize,
}

/// Fitted values and residuals of the restricted model (y on X₋ₖ).
#[derive(Clone, Debug)]
pub struct RestrictedFit {
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
}

/// Regresses y on all columns but k. With K = 1 the restricted model is
/// empty: fitted values are zero and the residuals are y itself.
pub fn restricted_fit(data: &Dataset, k: usize) -> Result<RestrictedFit> {
    let design = DesignInfo::new(data.x().clone(), data.names().to_vec())?;
    if k >= design.k() {
        return Err(Error::IndexOutOfRange { index: k, n_cols: design.k() });
    }
    let fitted = design.fitted_without(data.y(), k);
    Ok(RestrictedFit { residuals: data.y() - &fitted, fitted })
}

/// Wild-bootstrap p-value for H₀: β_k = 0.
pub fn wild_pvalue(data: &Dataset, k: usize, spec: &WildSpec) -> Result<WildResult> {
    let design = DesignInfo::new(data.x().clone(), data.names().to_vec())?;
    let machine = WildMachine::new(&design, k, spec.theta, spec.eta, spec.b)?;
    machine.pvalue(&design, data.y(), spec.seed)
}

/// The outcome-independent half of a wild-bootstrap test, reusable across
/// many outcomes on the same design (Monte Carlo hot path): the η-variance
/// weights and the restricted design's leverages.
pub struct WildMachine {
    k: usize,
    theta: WildAdjust,
    b: usize,
    prep: BootPrep,
    h_restricted: DVector<f64>,
    k_restricted: usize,
}

impl WildMachine {
    pub fn new(design: &DesignInfo, k: usize, theta: WildAdjust, eta: WildAdjust, b: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::InvalidConfig("bootstrap needs at least one replication".into()));
        }
        if k >= design.k() {
            return Err(Error::IndexOutOfRange { index: k, n_cols: design.k() });
        }
        Ok(WildMachine {
            k,
            theta,
            b,
            prep: BootPrep::new(design, k, eta),
            h_restricted: restricted_leverages(design, k),
            k_restricted: design.k() - 1,
        })
    }

    /// Run the bootstrap for one outcome. `design` must be the design this
    /// machine was built from.
    pub fn pvalue(&self, design: &DesignInfo, y: &DVector<f64>, seed: u64) -> Result<WildResult> {
        debug_assert_eq!(design.k(), self.k_restricted + 1);
        let n = design.n();

        // Original statistic.
        let (beta, resid) = design.beta_residuals(y);
        let t_orig = self.prep.t_stat(beta[self.k], &resid).ok_or(Error::DegenerateT)?;

        // Restricted model and θ-adjusted residual magnitudes.
        let fitted_r = design.fitted_without(y, self.k);
        let e_r = y - &fitted_r;
        let scaled = self.theta_scaled_residuals(&e_r);

        let t_abs = t_orig.abs();
        let mut exceed = 0usize;
        let mut yb = DVector::zeros(n);
        for b in 0..self.b {
            for i in 0..n {
                yb[i] = fitted_r[i] + scaled[i] * rng::rademacher(seed, b as u64, i as u64);
            }
            let (bb, rb) = design.beta_residuals(&yb);
            if let Some(tb) = self.prep.t_stat(bb[self.k], &rb) {
                if tb.abs() >= t_abs {
                    exceed += 1;
                }
            }
        }
        Ok(WildResult {
            p_value: exceed as f64 / self.b as f64,
            t_original: t_orig,
            exceed_count: exceed,
            b: self.b,
        })
    }

    /// √α^θ ∘ e_r with the adjustment built from the RESTRICTED design's
    /// leverages (K−1 regressors). Rows the restricted model fits exactly
    /// (leverage one) carry zero residual and get zero weight.
    fn theta_scaled_residuals(&self, e_r: &DVector<f64>) -> DVector<f64> {
        let n = e_r.len();
        let k_restricted = self.k_restricted;
        DVector::from_fn(n, |i, _| {
            let h = self.h_restricted[i];
            let alpha = match self.theta {
                WildAdjust::Hc1 => n as f64 / (n - k_restricted) as f64,
                WildAdjust::Hc2 | WildAdjust::Hc3 if h > 1.0 - H1_TOL => 0.0,
                WildAdjust::Hc2 => 1.0 / (1.0 - h),
                WildAdjust::Hc3 => 1.0 / ((1.0 - h) * (1.0 - h)),
            };
            alpha.sqrt() * e_r[i]
        })
    }
}

/// Leverages of the design with column k removed; zero when the restricted
/// model is empty (K = 1).
fn restricted_leverages(design: &DesignInfo, k: usize) -> DVector<f64> {
    let n = design.n();
    if design.k() == 1 {
        return DVector::zeros(n);
    }
    let x_restricted = design.x().clone().remove_column(k);
    let q = x_restricted.qr().q();
    DVector::from_iterator(n, q.row_iter().map(|r| r.norm_squared().min(1.0)))
}

/// Precomputed per-observation weights turning residuals into the k-th
/// sandwich diagonal: V_k = Σᵢ cᵢ ε̂ᵢ² with cᵢ = α^η_i ℓ²_{k,i}. Leverage-one
/// rows are zeroed (ZeroOut policy), matching [`crate::variance::hc_vcov`]
/// on the full design.
struct BootPrep {
    c: DVector<f64>,
}

impl BootPrep {
    fn new(design: &DesignInfo, k: usize, eta: WildAdjust) -> Self {
        let n = design.n();
        let nk = design.k();
        let ell = design.weight_matrix().column(k);
        let c = DVector::from_fn(n, |i, _| {
            let h = design.leverages()[i];
            let alpha = match eta {
                WildAdjust::Hc1 => n as f64 / (n - nk) as f64,
                WildAdjust::Hc2 | WildAdjust::Hc3 if h > 1.0 - H1_TOL => 0.0,
                WildAdjust::Hc2 => 1.0 / (1.0 - h),
                WildAdjust::Hc3 => 1.0 / ((1.0 - h) * (1.0 - h)),
            };
            alpha * ell[i] * ell[i]
        });
        BootPrep { c }
    }

    /// t = β_k/√(Σ cᵢ ε̂ᵢ²), or None when the variance collapses to zero.
    fn t_stat(&self, beta_k: f64, residuals: &DVector<f64>) -> Option<f64> {
        let v: f64 = self
            .c
            .iter()
            .zip(residuals.iter())
            .map(|(c, e)| c * e * e)
            .sum();
        if v > 0.0 && v.is_finite() {
            Some(beta_k / v.sqrt())
        } else {
            None
        }
    }
}

/// Monte Carlo check of the bootstrap p-value's null uniformity.
///
/// Under H₀ the bootstrap p-value is K/B with K ~ Binomial(B, P) and
/// P ~ U[0,1], uniform on the grid {0, 1/B, …, 1}. When (B+1)·level is an
/// integer, the rejection probability at `level` is exactly `level`. This
/// simulates that two-stage draw `m` times and returns the rejection
/// fraction, which converges to `level` with variance ≤ 1/(4m).
pub fn uniformity_rejection_check(b: usize, m: usize, level: f64, seed: u64) -> Result<f64> {
    if b == 0 || m == 0 {
        return Err(Error::EmptyInput { context: "uniformity check".into() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must be in (0,1), got {level}")));
    }
    let exact = (b as f64 + 1.0) * level;
    if (exact - exact.round()).abs() > 1e-9 {
        return Err(Error::InvalidB { b, level });
    }
    use rayon::prelude::*;
    let hits: usize = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let p_true = keyed_uniform(&[seed, 0xD1CE, i]);
            let mut k = 0usize;
            for j in 0..b as u64 {
                if keyed_uniform(&[seed, 0xF1B5, i, j]) < p_true {
                    k += 1;
                }
            }
            usize::from(k as f64 / b as f64 <= level)
        })
        .sum();
    Ok(hits as f64 / m as f64)
}
