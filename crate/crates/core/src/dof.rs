//! Degrees-of-freedom rules and t tests.
//!
//! The Bell–McCaffrey rule approximates the null distribution of the robust
//! t statistic by a t with Satterthwaite degrees of freedom
//! ν = tr(B)²/tr(B²), where B = M·D·M, M = I − H is the residual maker and
//! D = diag(a²ᵢ) holds per-observation weights aᵢ = ℓ_{k,i}·α_i^{1/2} built
//! from ℓ_k, the k-th column of X(XᵀX)⁻¹. Both traces are evaluated from the
//! factored form (thin Q), never from the n×n matrix:
//!
//!   tr(B)  = Σ dᵢ(1−hᵢ)
//!   tr(B²) = Σ dᵢ²(1−2hᵢ) + ‖QᵀDQ‖²_F
//!
//! which costs O(nK²).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::regression::{DesignInfo, RegressionFit};
use crate::specs::{DofRule, H1Policy, InferenceSpec, SpecKind};
pub use crate::student_t::{t_cdf, t_quantile};
use crate::variance::{hc_vcov, leverage_one_indices, H1_TOL};

/// Weighting of the Satterthwaite moment matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwWeight {
    /// aᵢ = ℓ_{k,i} (HC0-style weights).
    Hc0,
    /// aᵢ = ℓ_{k,i}/√(1−hᵢ) (HC2-style weights; the Bell–McCaffrey choice).
    Hc2,
}

/// One coefficient's t test.
#[derive(Clone, Debug, serde::Serialize)]
pub struct TestResult {
    pub estimate: f64,
    pub se: f64,
    pub dof: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

/// Satterthwaite degrees of freedom for coefficient `k`.
///
/// Leverage-one rows are handled by `policy`: `ZeroOut` gives them zero
/// weight in D while keeping the full-design projector; `OmitObs` recomputes
/// the whole construction (projector, leverages, ℓ_k) on the design with
/// those rows removed.
pub fn satterthwaite_dof(
    design: &DesignInfo,
    k: usize,
    weight: SwWeight,
    policy: H1Policy,
) -> Result<f64> {
    if k >= design.k() {
        return Err(Error::IndexOutOfRange { index: k, n_cols: design.k() });
    }
    let h1 = leverage_one_indices(design.leverages());
    if h1.is_empty() || policy == H1Policy::ZeroOut {
        let ell = design.weight_matrix().column(k);
        let d = DVector::from_fn(design.n(), |i, _| {
            let h = design.leverages()[i];
            if h > 1.0 - H1_TOL {
                return 0.0;
            }
            let a = match weight {
                SwWeight::Hc0 => ell[i],
                SwWeight::Hc2 => ell[i] / (1.0 - h).sqrt(),
            };
            a * a
        });
        trace_ratio(design, &d)
    } else {
        let kept: Vec<usize> =
            (0..design.n()).filter(|i| design.leverages()[*i] <= 1.0 - H1_TOL).collect();
        if kept.is_empty() {
            return Err(Error::AllOmitted);
        }
        if kept.len() <= design.k() {
            return Err(Error::RankDeficient { columns: (0..design.k()).collect() });
        }
        let sub = nalgebra::DMatrix::from_fn(kept.len(), design.k(), |i, j| {
            design.x()[(kept[i], j)]
        });
        let reduced = DesignInfo::new(sub, design.names().to_vec())?;
        // The reduced design may in principle contain fresh leverage-one
        // rows; they get zero weight, consistent with the ZeroOut branch.
        satterthwaite_dof(&reduced, k, weight, H1Policy::ZeroOut)
    }
}

fn trace_ratio(design: &DesignInfo, d: &DVector<f64>) -> Result<f64> {
    let q = design.q_thin();
    let h = design.leverages();
    let mut tr_b = 0.0;
    let mut tr_b2 = 0.0;
    for i in 0..d.len() {
        tr_b += d[i] * (1.0 - h[i]);
        tr_b2 += d[i] * d[i] * (1.0 - 2.0 * h[i]);
    }
    // ‖QᵀDQ‖²_F via row-scaled Q.
    let mut dq = q.clone();
    for i in 0..d.len() {
        dq.row_mut(i).scale_mut(d[i]);
    }
    let s = q.tr_mul(&dq);
    tr_b2 += s.norm_squared();
    if !(tr_b2 > 0.0) || !(tr_b > 0.0) {
        return Err(Error::DegenerateB);
    }
    let nu = tr_b * tr_b / tr_b2;
    if !nu.is_finite() || nu <= 0.0 {
        return Err(Error::DegenerateB);
    }
    Ok(nu)
}

/// Degrees of freedom implied by a t-test specification.
pub fn dof_for(spec: &InferenceSpec, design: &DesignInfo, k: usize) -> Result<f64> {
    if k >= design.k() {
        return Err(Error::IndexOutOfRange { index: k, n_cols: design.k() });
    }
    let SpecKind::TTest { dof, .. } = spec.kind else {
        return Err(Error::InvalidConfig(format!(
            "spec '{}' is a bootstrap procedure and has no t dof",
            spec.name
        )));
    };
    let value = match dof {
        DofRule::Classical => (design.n() - design.k()) as f64,
        DofRule::PartialLeverage => design.nk_tilde(k) - 1.0,
        DofRule::BellMcCaffrey => {
            satterthwaite_dof(design, k, SwWeight::Hc2, spec.h1_policy)?
        }
    };
    if !(value > 0.0) {
        return Err(Error::NonPositiveDof { dof: value });
    }
    Ok(value)
}

/// Two-sided t test of H₀: β = 0 given an estimate, its standard error, and
/// degrees of freedom. Also returns the (1−level) confidence interval.
pub fn t_test(estimate: f64, se: f64, dof: f64, level: f64) -> Result<TestResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must be in (0,1), got {level}")));
    }
    if !se.is_finite() || !estimate.is_finite() {
        return Err(Error::NonFinite { context: "t test inputs".into() });
    }
    if se <= 0.0 {
        return Err(Error::ZeroSe);
    }
    if !(dof > 0.0) {
        return Err(Error::DomainError { dof });
    }
    let t_stat = estimate / se;
    let p_value = 2.0 * (1.0 - t_cdf(t_stat.abs(), dof)?);
    let crit = t_quantile(1.0 - level / 2.0, dof)?;
    Ok(TestResult {
        estimate,
        se,
        dof,
        t_stat,
        p_value,
        ci_low: estimate - crit * se,
        ci_high: estimate + crit * se,
        level,
    })
}

/// Rescales a standard error so that a fixed-critical-value test at
/// `dof_old` behaves like one at `dof_new`:
/// se · q_t(1−level/2, dof_new)/q_t(1−level/2, dof_old).
pub fn adjusted_se(se: f64, dof_new: f64, dof_old: f64, level: f64) -> Result<f64> {
    if !(dof_new > 0.0) {
        return Err(Error::NonPositiveDof { dof: dof_new });
    }
    if !(dof_old > 0.0) {
        return Err(Error::NonPositiveDof { dof: dof_old });
    }
    if se < 0.0 || !se.is_finite() {
        return Err(Error::NonFinite { context: "standard error".into() });
    }
    let p = 1.0 - level / 2.0;
    Ok(se * t_quantile(p, dof_new)? / t_quantile(p, dof_old)?)
}

/// Full pipeline for one coefficient of a fitted regression: variance,
/// dof, and t test under a named specification.
pub fn test_coefficient(
    fit: &RegressionFit,
    k: usize,
    spec: &InferenceSpec,
    level: f64,
) -> Result<TestResult> {
    let SpecKind::TTest { variance, .. } = spec.kind else {
        return Err(Error::InvalidConfig(format!(
            "spec '{}' requires the bootstrap driver",
            spec.name
        )));
    };
    if k >= fit.k() {
        return Err(Error::IndexOutOfRange { index: k, n_cols: fit.k() });
    }
    let v = hc_vcov(fit, variance, spec.h1_policy)?;
    let dof = dof_for(spec, fit.design(), k)?;
    t_test(fit.beta_hat()[k], v.se[k], dof, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::regression::fit_ols;
    use crate::specs::VarianceKind;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn intercept_design(n: usize) -> DesignInfo {
        DesignInfo::new(DMatrix::from_element(n, 1, 1.0), vec!["const".into()]).unwrap()
    }

    #[test]
    fn satterthwaite_intercept_only_is_n_minus_one() {
        for &n in &[5usize, 10, 50] {
            let d = intercept_design(n);
            for w in [SwWeight::Hc0, SwWeight::Hc2] {
                let nu = satterthwaite_dof(&d, 0, w, H1Policy::ZeroOut).unwrap();
                assert_relative_eq!(nu, (n - 1) as f64, epsilon = 1e-9);
            }
            // And ñ − 1 matches exactly on the same design.
            assert_relative_eq!(d.nk_tilde(0) - 1.0, (n - 1) as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn dof_rules_on_reference_designs() {
        // Classical: n − K.
        let x = DMatrix::from_fn(20, 3, |i, j| match j {
            0 => 1.0,
            1 => (i as f64 * 0.37).sin(),
            _ => (i as f64 * 0.61).cos(),
        });
        let d = DesignInfo::new(x, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let spec = InferenceSpec::t_test(
            "hc1",
            VarianceKind::Hc1,
            DofRule::Classical,
            H1Policy::ZeroOut,
        );
        assert_relative_eq!(dof_for(&spec, &d, 1).unwrap(), 17.0);

        // Partial leverage: dummy-on-first-of-four design has ñ = 12/7.
        let mut x = DMatrix::from_element(4, 2, 1.0);
        x[(1, 1)] = 0.0;
        x[(2, 1)] = 0.0;
        x[(3, 1)] = 0.0;
        let d = DesignInfo::new(x, vec!["const".into(), "d".into()]).unwrap();
        let spec = InferenceSpec::t_test(
            "hc1-pl",
            VarianceKind::Hc1,
            DofRule::PartialLeverage,
            H1Policy::ZeroOut,
        );
        assert_relative_eq!(dof_for(&spec, &d, 1).unwrap(), 12.0 / 7.0 - 1.0, epsilon = 1e-12);

        // Bell–McCaffrey on intercept-only: n − 1.
        let spec = InferenceSpec::t_test(
            "hc2-bm",
            VarianceKind::Hc2,
            DofRule::BellMcCaffrey,
            H1Policy::ZeroOut,
        );
        assert_relative_eq!(dof_for(&spec, &intercept_design(10), 0).unwrap(), 9.0, epsilon = 1e-9);
    }

    #[test]
    fn partial_leverage_dof_stays_positive_on_small_dummies() {
        for n in 3..=12usize {
            let mut cols = DMatrix::from_element(n, 2, 1.0);
            for i in 1..n {
                cols[(i, 1)] = 0.0;
            }
            let d = DesignInfo::new(cols, vec!["const".into(), "d".into()]).unwrap();
            let spec = InferenceSpec::t_test(
                "hc2-pl",
                VarianceKind::Hc2,
                DofRule::PartialLeverage,
                H1Policy::ZeroOut,
            );
            let dof = dof_for(&spec, &d, 1).unwrap();
            assert!(dof > 0.0, "n = {n}: dof = {dof}");
        }
    }

    #[test]
    fn t_test_closed_forms() {
        // β = 0 ⇒ p = 1 and the CI is symmetric around 0.
        let r = t_test(0.0, 1.0, 5.0, 0.05).unwrap();
        assert_relative_eq!(r.p_value, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.ci_low + r.ci_high, 0.0, epsilon = 1e-12);
        // Cauchy: t = 2, dof = 1 ⇒ p = 1 − 2·atan(2)/π.
        let r = t_test(2.0, 1.0, 1.0, 0.05).unwrap();
        let expect = 1.0 - 2.0 * 2.0_f64.atan() / std::f64::consts::PI;
        assert_relative_eq!(r.p_value, expect, epsilon = 1e-10);
    }

    #[test]
    fn p_value_and_ci_are_dual() {
        let mut stream = crate::rng::KeyedStream::new(&[2024]);
        for _ in 0..1000 {
            let estimate = 4.0 * (stream.next_uniform() - 0.5);
            let se = 0.1 + stream.next_uniform();
            let dof = 0.5 + 40.0 * stream.next_uniform();
            let level = 0.05;
            let r = t_test(estimate, se, dof, level).unwrap();
            let rejected = r.p_value < level;
            let zero_outside = 0.0 < r.ci_low || 0.0 > r.ci_high;
            // Knife-edge cases (p ≈ level) are legitimate either way.
            if (r.p_value - level).abs() > 1e-12 {
                assert_eq!(rejected, zero_outside, "p = {}", r.p_value);
            }
        }
    }

    #[test]
    fn p_decreases_as_dof_grows() {
        let mut last = f64::INFINITY;
        for &dof in &[1.0, 2.0, 5.0, 10.0, 100.0, 1e4] {
            let r = t_test(1.0, 0.5, dof, 0.05).unwrap();
            assert!(r.p_value < last);
            last = r.p_value;
        }
    }

    #[test]
    fn adjusted_se_reference_ratio() {
        // dof 1e6 → 1: the ratio of two-sided 5% critical values, ≈ 6.4829.
        let se = adjusted_se(1.0, 1.0, 1e6, 0.05).unwrap();
        assert!((se - 6.4829).abs() < 2e-3, "{se}");
        // No change when dof stays put.
        assert_relative_eq!(adjusted_se(2.5, 7.0, 7.0, 0.05).unwrap(), 2.5, epsilon = 1e-12);
        // Shrinking dof inflates the se.
        assert!(adjusted_se(1.0, 3.0, 30.0, 0.05).unwrap() > 1.0);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(matches!(t_test(1.0, 0.0, 5.0, 0.05), Err(Error::ZeroSe)));
        assert!(t_test(1.0, 1.0, -1.0, 0.05).is_err());
        assert!(t_test(1.0, 1.0, 5.0, 1.5).is_err());
        assert!(adjusted_se(1.0, 0.0, 5.0, 0.05).is_err());
        let d = intercept_design(5);
        assert!(satterthwaite_dof(&d, 3, SwWeight::Hc2, H1Policy::ZeroOut).is_err());
    }

    #[test]
    fn zeroout_and_omit_both_yield_finite_bm_dof_under_h1() {
        // Numerically leverage-one first row; the design stays invertible
        // after omission.
        let mut x = DMatrix::from_element(6, 2, 1.0);
        x[(1, 1)] = 1e-5;
        for i in 2..6 {
            x[(i, 1)] = 0.0;
        }
        let d = DesignInfo::new(x.clone(), vec!["const".into(), "d".into()]).unwrap();
        assert!(d.leverages()[0] > 1.0 - H1_TOL && d.leverages()[0] < 1.0);
        let zero = satterthwaite_dof(&d, 0, SwWeight::Hc2, H1Policy::ZeroOut).unwrap();
        let omit = satterthwaite_dof(&d, 0, SwWeight::Hc2, H1Policy::OmitObs).unwrap();
        assert!(zero.is_finite() && zero > 0.0);
        assert!(omit.is_finite() && omit > 0.0);

        // An exactly leverage-one row cannot be omitted: the reduced design
        // is singular by construction.
        x[(1, 1)] = 0.0;
        let d = DesignInfo::new(x, vec!["const".into(), "d".into()]).unwrap();
        assert!(satterthwaite_dof(&d, 0, SwWeight::Hc2, H1Policy::ZeroOut).is_ok());
        assert!(matches!(
            satterthwaite_dof(&d, 0, SwWeight::Hc2, H1Policy::OmitObs),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn test_coefficient_composes_the_pipeline() {
        let y = DVector::from_vec(vec![1.2, -0.4, 2.2, 0.3, 1.0, -0.7]);
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { (i as f64).sqrt() });
        let data = Dataset::new(y, x).unwrap();
        let fit = fit_ols(&data).unwrap();
        let spec = InferenceSpec::t_test(
            "hc2-bm",
            VarianceKind::Hc2,
            DofRule::BellMcCaffrey,
            H1Policy::ZeroOut,
        );
        let r = test_coefficient(&fit, 1, &spec, 0.05).unwrap();
        let v = hc_vcov(&fit, VarianceKind::Hc2, H1Policy::ZeroOut).unwrap();
        assert_relative_eq!(r.se, v.se[1], epsilon = 1e-14);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
        assert!(r.ci_low < r.ci_high);
    }
}
