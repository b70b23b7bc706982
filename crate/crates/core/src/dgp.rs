//! Heteroskedastic data-generating-process calibration.
//!
//! Given an original fit, this module builds a small family of candidate
//! error-variance vectors (forest-based and homoskedastic), rescales each so
//! simulated residuals match the original residual spread, scores each by how
//! well pilot-sample residual kurtosis reproduces the original kurtosis, and
//! picks the candidate with the smallest combined distance. The winner is the
//! σ-vector a Monte Carlo study should simulate from when it wants errors
//! "like these residuals".
//!
//! All pilot draws are keyed by `(seed, stage, sample, observation)`, and the
//! same draws are reused for every candidate (common random numbers), so a
//! selection is reproducible bit-for-bit at any thread count and the distance
//! comparison between candidates is not polluted by independent noise.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig};
use crate::regression::{DesignInfo, RegressionFit};
use crate::rng;

/// Which prediction a forest-based σ uses for the training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    /// Average over all trees (uses each row's own target; overfits).
    InSample,
    /// Average over trees whose bootstrap bag excluded the row.
    Oob,
}

/// Identity of a candidate variance model, ordered from most to least
/// heteroskedastic flexibility. Ties in the selection distance are broken
/// toward the later (tamer) candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CandidateId {
    InSample,
    Oob,
    BlendOobHomo,
    Homoskedastic,
}

/// One candidate DGP: a per-observation σ plus its calibration and scoring
/// records. `sigma` is in y-units once [`calibrate_scale`] has run.
#[derive(Debug, Clone)]
pub struct CandidateModel {
    pub id: CandidateId,
    pub sigma: DVector<f64>,
    /// Cumulative multiplicative rescale applied by calibration.
    pub calibration_factor: f64,
    /// Pooled-sd ratio observed on the verification redraw (≈ 1 when the
    /// calibration generalizes).
    pub verification_ratio: Option<f64>,
    /// Mean pilot kurtosis κ̄.
    pub kappa_bar: Option<f64>,
    /// Sd of pilot kurtoses s_κ.
    pub s_kappa: Option<f64>,
    /// |κ̄ − κ°| / s_κ.
    pub delta: Option<f64>,
    /// |κ̄ − κ°| / median s_κ across candidates.
    pub delta_bar: Option<f64>,
    /// d = (δ + δ̄)/2; the selection criterion.
    pub distance: Option<f64>,
}

impl CandidateModel {
    fn new(id: CandidateId, sigma: DVector<f64>) -> Self {
        CandidateModel {
            id,
            sigma,
            calibration_factor: 1.0,
            verification_ratio: None,
            kappa_bar: None,
            s_kappa: None,
            delta: None,
            delta_bar: None,
            distance: None,
        }
    }
}

/// Knobs for [`select_dgp`].
#[derive(Debug, Clone)]
pub struct DgpConfig {
    pub forest: ForestConfig,
    /// Pilot samples per calibration/scoring stage (≥ 100).
    pub m_pilot: usize,
    /// Master seed for pilot draws (independent of `forest.seed`).
    pub seed: u64,
}

impl DgpConfig {
    pub fn default_for(k: usize, seed: u64) -> Self {
        DgpConfig {
            forest: ForestConfig::default_for(k, rng::mix64(seed ^ 0x666F_7265_7374_u64)),
            m_pilot: 500,
            seed,
        }
    }
}

/// Outcome of [`select_dgp`]: every scored candidate plus the winner's index.
#[derive(Debug, Clone)]
pub struct DgpSelection {
    pub candidates: Vec<CandidateModel>,
    pub chosen_index: usize,
    /// Kurtosis of the original residuals the candidates were scored against.
    pub kappa_original: f64,
}

impl DgpSelection {
    pub fn chosen(&self) -> &CandidateModel {
        &self.candidates[self.chosen_index]
    }
}

// Stage separators for pilot draws.
const CAL_SALT: u64 = 0xD6_7CA1_1B01;
const VERIFY_SALT: u64 = 0xD6_7CA1_1B02;
const SCORE_SALT: u64 = 0xD6_7CA1_1B03;

/// Reject targets that are zero up to rounding noise: a perfectly fitting
/// regression carries no variance information to model.
fn residual_scale_check(fit: &RegressionFit) -> Result<()> {
    let max_abs = fit.residuals().iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let y_scale = fit.y().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if max_abs <= 1e-12 * y_scale {
        return Err(Error::DegenerateTarget);
    }
    Ok(())
}

fn population_sd(v: &DVector<f64>) -> f64 {
    let mean = v.mean();
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Per-observation σ from a bagged forest trained on |ε̂| over the design
/// rows. Predictions are leaf averages of |ε̂|, hence nonnegative; anything
/// that underflows toward zero is floored at `1e-6 · sd(ε̂)` so downstream
/// draws stay non-degenerate.
pub fn forest_sigma(fit: &RegressionFit, cfg: &ForestConfig, mode: SigmaMode) -> Result<DVector<f64>> {
    residual_scale_check(fit)?;
    let n = fit.design().n();
    if mode == SigmaMode::Oob && n < 10 {
        return Err(Error::InvalidConfig(format!(
            "out-of-bag predictions need n >= 10, got {n}"
        )));
    }
    let forest = fit_forest(fit.design().x(), &fit.residuals().abs(), cfg)?;
    let raw = match mode {
        SigmaMode::InSample => forest.predict_in_sample(fit.design().x()),
        SigmaMode::Oob => forest.predict_oob(fit.design().x()),
    };
    Ok(apply_floor(raw, fit))
}

fn apply_floor(raw: DVector<f64>, fit: &RegressionFit) -> DVector<f64> {
    let floor = 1e-6 * population_sd(fit.residuals());
    raw.map(|s| s.max(floor))
}

/// The four candidate σ vectors, uncalibrated, ordered from most to least
/// heteroskedastic: forest in-sample, forest out-of-bag, an equal-weight
/// blend of the out-of-bag and homoskedastic vectors, and the constant
/// `sd(ε̂)·√(n/(n−K))`.
pub fn make_candidates(fit: &RegressionFit, cfg: &ForestConfig) -> Result<Vec<CandidateModel>> {
    residual_scale_check(fit)?;
    let n = fit.design().n();
    let k = fit.design().k();
    if n < 10 {
        return Err(Error::InvalidConfig(format!(
            "candidate construction needs n >= 10, got {n}"
        )));
    }
    let forest = fit_forest(fit.design().x(), &fit.residuals().abs(), cfg)?;
    let in_sample = apply_floor(forest.predict_in_sample(fit.design().x()), fit);
    let oob = apply_floor(forest.predict_oob(fit.design().x()), fit);
    let homo_sd = population_sd(fit.residuals()) * (n as f64 / (n - k) as f64).sqrt();
    let homo = DVector::from_element(n, homo_sd);
    let blend = (&oob + &homo) * 0.5;
    Ok(vec![
        CandidateModel::new(CandidateId::InSample, in_sample),
        CandidateModel::new(CandidateId::Oob, oob),
        CandidateModel::new(CandidateId::BlendOobHomo, blend),
        CandidateModel::new(CandidateId::Homoskedastic, homo),
    ])
}

/// Population-moment kurtosis m₄/m₂² (non-excess; normal → 3), computed in
/// two passes around the sample mean.
pub fn kurtosis(v: &[f64]) -> Result<f64> {
    if v.len() < 4 {
        return Err(Error::EmptyInput {
            context: format!("kurtosis needs at least 4 values, got {}", v.len()),
        });
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for x in v {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(m4 / (m2 * m2))
}

/// Simulate one pilot error vector (sample `m`, stage `salt`) and return its
/// OLS residuals through the fixed design. Residuals are linear in the error,
/// so β plays no role.
fn pilot_residuals(sigma: &DVector<f64>, design: &DesignInfo, seed: u64, salt: u64, m: u64) -> DVector<f64> {
    let n = design.n();
    let eps = DVector::from_fn(n, |i, _| {
        sigma[i] * rng::keyed_normal(&[seed, salt, m, i as u64])
    });
    let qte = design.q_thin().tr_mul(&eps);
    &eps - design.q_thin() * qte
}

/// Pooled residual sd across `m_pilot` pilot samples (population variance
/// within each sample, averaged over samples).
fn pilot_pooled_sd(sigma: &DVector<f64>, design: &DesignInfo, m_pilot: usize, seed: u64, salt: u64) -> f64 {
    let n = design.n() as f64;
    let sums: Vec<f64> = (0..m_pilot)
        .into_par_iter()
        .map(|m| {
            let resid = pilot_residuals(sigma, design, seed, salt, m as u64);
            let mean = resid.mean();
            resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
        })
        .collect();
    // Sequential combine in index order keeps the result thread-count
    // independent.
    let total: f64 = sums.iter().sum();
    (total / (m_pilot as f64 * n)).sqrt()
}

fn check_m_pilot(m_pilot: usize) -> Result<()> {
    if m_pilot < 100 {
        return Err(Error::InvalidConfig(format!(
            "pilot stages need m_pilot >= 100, got {m_pilot}"
        )));
    }
    Ok(())
}

/// Rescale a candidate σ so pilot residuals have the same pooled sd as the
/// original residuals, then verify on an independent redraw. Returns the
/// verification ratio (pooled pilot sd / original sd after rescaling); it is
/// also stored on the model.
pub fn calibrate_scale(
    model: &mut CandidateModel,
    fit: &RegressionFit,
    m_pilot: usize,
    seed: u64,
) -> Result<f64> {
    check_m_pilot(m_pilot)?;
    let sd_original = population_sd(fit.residuals());
    if sd_original <= 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let sd_pilot = pilot_pooled_sd(&model.sigma, fit.design(), m_pilot, seed, CAL_SALT);
    if !(sd_pilot > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let factor = sd_original / sd_pilot;
    model.sigma *= factor;
    model.calibration_factor *= factor;
    let sd_verify = pilot_pooled_sd(&model.sigma, fit.design(), m_pilot, seed, VERIFY_SALT);
    let ratio = sd_verify / sd_original;
    model.verification_ratio = Some(ratio);
    Ok(ratio)
}

/// δ, δ̄ and d from the scoring statistics: δ standardizes the kurtosis gap
/// by the candidate's own pilot sd, δ̄ by the median pilot sd across the
/// whole candidate list, and d averages the two. A zero gap is distance zero
/// even when the sd degenerates.
pub fn distance_from(kappa_original: f64, kappa_bar: f64, s_kappa: f64, s_median: f64) -> (f64, f64, f64) {
    let gap = (kappa_bar - kappa_original).abs();
    let ratio = |s: f64| if gap == 0.0 { 0.0 } else { gap / s };
    let delta = ratio(s_kappa);
    let delta_bar = ratio(s_median);
    (delta, delta_bar, 0.5 * delta + 0.5 * delta_bar)
}

/// Score every candidate against the original residual kurtosis κ°: draw
/// `m_pilot` pilot samples per candidate (shared draws), record per-sample
/// residual kurtosis, and fill κ̄, s_κ, δ, δ̄ and d on each model. Returns κ°.
pub fn score_candidates(models: &mut [CandidateModel], fit: &RegressionFit, m_pilot: usize, seed: u64) -> Result<f64> {
    check_m_pilot(m_pilot)?;
    if models.is_empty() {
        return Err(Error::EmptyInput {
            context: "candidate list".to_string(),
        });
    }
    let kappa_original = kurtosis(fit.residuals().as_slice())?;

    for model in models.iter_mut() {
        let kurtoses: Vec<f64> = (0..m_pilot)
            .into_par_iter()
            .map(|m| {
                let resid = pilot_residuals(&model.sigma, fit.design(), seed, SCORE_SALT, m as u64);
                kurtosis(resid.as_slice())
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean = kurtoses.iter().sum::<f64>() / m_pilot as f64;
        let var = kurtoses.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (m_pilot - 1) as f64;
        model.kappa_bar = Some(mean);
        model.s_kappa = Some(var.sqrt());
    }

    let mut sds: Vec<f64> = models.iter().map(|m| m.s_kappa.unwrap()).collect();
    sds.sort_by(|a, b| a.partial_cmp(b).expect("finite pilot sds"));
    let mid = sds.len() / 2;
    let s_median = if sds.len() % 2 == 1 {
        sds[mid]
    } else {
        0.5 * (sds[mid - 1] + sds[mid])
    };

    for model in models.iter_mut() {
        let (delta, delta_bar, d) =
            distance_from(kappa_original, model.kappa_bar.unwrap(), model.s_kappa.unwrap(), s_median);
        model.delta = Some(delta);
        model.delta_bar = Some(delta_bar);
        model.distance = Some(d);
    }
    Ok(kappa_original)
}

/// Index of the scored candidate with the smallest distance; ties go to the
/// later (less heteroskedastic) entry.
pub fn select_index(models: &[CandidateModel]) -> Result<usize> {
    if models.is_empty() {
        return Err(Error::EmptyInput {
            context: "candidate list".to_string(),
        });
    }
    let mut best = 0usize;
    for (i, model) in models.iter().enumerate() {
        let d = model.distance.ok_or_else(|| {
            Error::InvalidConfig(format!("candidate {:?} has not been scored", model.id))
        })?;
        let best_d = models[best].distance.unwrap();
        if d <= best_d {
            best = i;
        }
    }
    Ok(best)
}

/// Full pipeline: build candidates, calibrate each, score them against the
/// original residual kurtosis, and pick the winner.
pub fn select_dgp(fit: &RegressionFit, cfg: &DgpConfig) -> Result<DgpSelection> {
    let mut candidates = make_candidates(fit, &cfg.forest)?;
    for model in candidates.iter_mut() {
        calibrate_scale(model, fit, cfg.m_pilot, cfg.seed)?;
    }
    let kappa_original = score_candidates(&mut candidates, fit, cfg.m_pilot, cfg.seed)?;
    let chosen_index = select_index(&candidates)?;
    Ok(DgpSelection {
        candidates,
        chosen_index,
        kappa_original,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::regression::fit_ols;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn fit_from(y: Vec<f64>, cols: Vec<Vec<f64>>) -> RegressionFit {
        let n = y.len();
        let mut x = DMatrix::zeros(n, cols.len() + 1);
        for i in 0..n {
            x[(i, 0)] = 1.0;
        }
        for (j, col) in cols.iter().enumerate() {
            for i in 0..n {
                x[(i, j + 1)] = col[i];
            }
        }
        let data = Dataset::new(DVector::from_vec(y), x).unwrap();
        fit_ols(&data).unwrap()
    }

    fn two_group_fit(n: usize, sd_low: f64, sd_high: f64, seed: u64) -> (RegressionFit, Vec<f64>) {
        let dummy: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let truth: Vec<f64> = dummy
            .iter()
            .map(|&d| if d == 0.0 { sd_low } else { sd_high })
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| truth[i] * rng::keyed_normal(&[seed, 77, i as u64]))
            .collect();
        (fit_from(y, vec![dummy]), truth)
    }

    #[test]
    fn kurtosis_of_two_point_symmetric_is_one() {
        assert_relative_eq!(kurtosis(&[-1.0, 1.0, -1.0, 1.0]).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn kurtosis_of_large_normal_sample_is_three() {
        let v: Vec<f64> = (0..100_000)
            .map(|i| rng::keyed_normal(&[4242, i as u64]))
            .collect();
        let k = kurtosis(&v).unwrap();
        assert!((k - 3.0).abs() < 0.2, "kurtosis of normal sample was {k}");
    }

    #[test]
    fn kurtosis_of_single_spike_matches_exact_moments() {
        // (0,0,0,1): mean 1/4, m2 = 3/16, m4 = 21/256, so m4/m2^2 = 21/9 = 7/3.
        // Independent oracle: exact rational arithmetic carried through the
        // definition above.
        let by_moments = (21.0 / 256.0) / ((3.0 / 16.0) * (3.0 / 16.0));
        assert_relative_eq!(by_moments, 7.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(kurtosis(&[0.0, 0.0, 0.0, 1.0]).unwrap(), 7.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn kurtosis_rejects_short_and_constant_input() {
        assert!(matches!(
            kurtosis(&[1.0, 2.0, 3.0]),
            Err(Error::EmptyInput { .. })
        ));
        assert!(matches!(
            kurtosis(&[2.0, 2.0, 2.0, 2.0]),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn constant_absolute_residuals_give_constant_sigma() {
        // Intercept-only fit of alternating ±1 has residuals exactly ±1, so
        // the forest target is the constant 1 and every prediction is 1.
        let y: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let data = Dataset::new(
            DVector::from_vec(y),
            DMatrix::from_element(12, 1, 1.0),
        )
        .unwrap();
        let fit = fit_ols(&data).unwrap();
        let cfg = ForestConfig::default_for(1, 3);
        let ins = forest_sigma(&fit, &cfg, SigmaMode::InSample).unwrap();
        let oob = forest_sigma(&fit, &cfg, SigmaMode::Oob).unwrap();
        for i in 0..12 {
            assert_relative_eq!(ins[i], 1.0, epsilon = 1e-12);
            assert_relative_eq!(oob[i], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_fit_is_a_degenerate_target() {
        // y is exactly linear in x: residuals vanish.
        let x1: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let y: Vec<f64> = x1.iter().map(|v| 2.0 + 3.0 * v).collect();
        let fit = fit_from(y, vec![x1]);
        let cfg = ForestConfig::default_for(2, 3);
        assert!(matches!(
            forest_sigma(&fit, &cfg, SigmaMode::InSample),
            Err(Error::DegenerateTarget)
        ));
        assert!(matches!(
            make_candidates(&fit, &cfg),
            Err(Error::DegenerateTarget)
        ));
    }

    #[test]
    fn in_sample_sigma_spreads_at_least_as_much_as_oob_on_noise() {
        // On a pure-noise target the in-sample predictions chase their own
        // row's |residual|, so they should spread more than out-of-bag
        // predictions in the vast majority of runs. Two regressors keep the
        // tree partitions diverse enough that OOB noise averages out.
        let mut wider = 0;
        for run in 0..50u64 {
            let x1: Vec<f64> = (0..100)
                .map(|i| rng::keyed_uniform(&[run, 5, i as u64]) * 2.0)
                .collect();
            let x2: Vec<f64> = (0..100)
                .map(|i| rng::keyed_uniform(&[run, 15, i as u64]) * 2.0)
                .collect();
            let y: Vec<f64> = (0..100)
                .map(|i| rng::keyed_normal(&[run, 6, i as u64]))
                .collect();
            let fit = fit_from(y, vec![x1, x2]);
            let cfg = ForestConfig {
                n_trees: 300,
                min_leaf: 5,
                mtry: 1,
                seed: run,
            };
            let ins = forest_sigma(&fit, &cfg, SigmaMode::InSample).unwrap();
            let oob = forest_sigma(&fit, &cfg, SigmaMode::Oob).unwrap();
            if population_sd(&ins) >= population_sd(&oob) {
                wider += 1;
            }
        }
        assert!(wider >= 40, "in-sample spread won only {wider}/50 runs");
    }

    #[test]
    fn oob_sigma_tracks_two_group_truth_within_a_quarter() {
        // Predictions estimate E|ε̂| = σ·√(2/π) ≈ 0.80σ within each group, so
        // the group-level prediction sits inside 25% of the true σ. Compare
        // at the group level: within a group the prediction is essentially
        // one shared leaf value.
        let (fit, truth) = two_group_fit(400, 1.0, 3.0, 14);
        let cfg = ForestConfig::default_for(2, 17);
        let oob = forest_sigma(&fit, &cfg, SigmaMode::Oob).unwrap();
        for group in [1.0, 3.0] {
            let rows: Vec<usize> = (0..400).filter(|&i| truth[i] == group).collect();
            let mean = rows.iter().map(|&i| oob[i]).sum::<f64>() / rows.len() as f64;
            let rel = (mean - group).abs() / group;
            assert!(
                rel < 0.25,
                "group σ={group}: mean prediction {mean} (rel {rel})"
            );
        }
    }

    #[test]
    fn candidate_list_has_four_members_with_blend_identity() {
        let (fit, _) = two_group_fit(60, 1.0, 2.0, 5);
        let cfg = ForestConfig::default_for(2, 8);
        let candidates = make_candidates(&fit, &cfg).unwrap();
        assert_eq!(candidates.len(), 4);
        assert_eq!(candidates[0].id, CandidateId::InSample);
        assert_eq!(candidates[1].id, CandidateId::Oob);
        assert_eq!(candidates[2].id, CandidateId::BlendOobHomo);
        assert_eq!(candidates[3].id, CandidateId::Homoskedastic);
        let homo = &candidates[3].sigma;
        for i in 1..60 {
            assert_relative_eq!(homo[i], homo[0], epsilon = 1e-14);
        }
        for i in 0..60 {
            assert_relative_eq!(
                candidates[2].sigma[i],
                0.5 * (candidates[1].sigma[i] + homo[i]),
                epsilon = 1e-14
            );
        }
        // Homoskedastic level: sd(resid) * sqrt(n/(n-K)).
        let expect = population_sd(fit.residuals()) * (60.0f64 / 58.0).sqrt();
        assert_relative_eq!(homo[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn distance_formulas_match_hand_arithmetic() {
        let (delta, delta_bar, d) = distance_from(3.0, 4.0, 0.5, 1.0);
        assert_relative_eq!(delta, 2.0, epsilon = 1e-15);
        assert_relative_eq!(delta_bar, 1.0, epsilon = 1e-15);
        assert_relative_eq!(d, 1.5, epsilon = 1e-15);
        // Zero gap is distance zero regardless of the sds.
        let (z1, z2, z3) = distance_from(3.0, 3.0, 0.0, 0.0);
        assert_eq!((z1, z2, z3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn calibration_matches_scale_and_halves_for_doubled_sigma() {
        let (fit, _) = two_group_fit(50, 1.0, 2.0, 31);
        let cfg = ForestConfig::default_for(2, 12);
        let candidates = make_candidates(&fit, &cfg).unwrap();

        // The homoskedastic candidate already matches the residual scale up
        // to the small-sample correction, so its factor is near 1.
        let mut homo = candidates[3].clone();
        let ratio = calibrate_scale(&mut homo, &fit, 400, 7).unwrap();
        assert!((homo.calibration_factor - 1.0).abs() < 0.05);
        assert!((ratio - 1.0).abs() < 0.01, "verification ratio {ratio}");

        // Doubling σ beforehand exactly halves the factor: residuals are
        // linear in the errors and the pilot draws are shared.
        let mut doubled = candidates[3].clone();
        doubled.sigma *= 2.0;
        calibrate_scale(&mut doubled, &fit, 400, 7).unwrap();
        assert_relative_eq!(
            doubled.calibration_factor,
            0.5 * homo.calibration_factor,
            epsilon = 1e-12
        );
        // And the calibrated vectors coincide.
        for i in 0..50 {
            assert_relative_eq!(doubled.sigma[i], homo.sigma[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn recalibration_with_fresh_draws_stays_within_two_percent() {
        let (fit, _) = two_group_fit(50, 1.0, 2.0, 31);
        let cfg = ForestConfig::default_for(2, 12);
        let mut model = make_candidates(&fit, &cfg).unwrap().remove(1);
        calibrate_scale(&mut model, &fit, 400, 7).unwrap();
        let before = model.sigma.clone();
        // A second calibration under a different seed should barely move σ.
        calibrate_scale(&mut model, &fit, 400, 8).unwrap();
        for i in 0..50 {
            assert!((model.sigma[i] / before[i] - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn scoring_fills_stats_and_zero_gap_gives_zero_distance() {
        let (fit, _) = two_group_fit(40, 1.0, 1.0, 2);
        let cfg = ForestConfig::default_for(2, 4);
        let mut candidates = make_candidates(&fit, &cfg).unwrap();
        for model in candidates.iter_mut() {
            calibrate_scale(model, &fit, 200, 11).unwrap();
        }
        let kappa_o = score_candidates(&mut candidates, &fit, 200, 11).unwrap();
        assert_relative_eq!(kappa_o, kurtosis(fit.residuals().as_slice()).unwrap());
        for model in &candidates {
            assert!(model.kappa_bar.is_some());
            assert!(model.s_kappa.unwrap() > 0.0);
            let (d1, d2, d) = (
                model.delta.unwrap(),
                model.delta_bar.unwrap(),
                model.distance.unwrap(),
            );
            assert_relative_eq!(d, 0.5 * d1 + 0.5 * d2, epsilon = 1e-14);
        }
    }

    #[test]
    fn selection_breaks_ties_toward_the_later_candidate() {
        let (fit, _) = two_group_fit(40, 1.0, 1.5, 3);
        let cfg = ForestConfig::default_for(2, 4);
        let base = make_candidates(&fit, &cfg).unwrap().remove(3);
        let mut twins = vec![base.clone(), base];
        for model in twins.iter_mut() {
            calibrate_scale(model, &fit, 200, 5).unwrap();
        }
        score_candidates(&mut twins, &fit, 200, 5).unwrap();
        assert_eq!(twins[0].distance, twins[1].distance);
        assert_eq!(select_index(&twins).unwrap(), 1);
    }

    #[test]
    fn single_candidate_selects_itself() {
        let (fit, _) = two_group_fit(40, 1.0, 2.0, 9);
        let cfg = ForestConfig::default_for(2, 4);
        let mut one = vec![make_candidates(&fit, &cfg).unwrap().remove(1)];
        calibrate_scale(&mut one[0], &fit, 200, 13).unwrap();
        score_candidates(&mut one, &fit, 200, 13).unwrap();
        assert_eq!(select_index(&one).unwrap(), 0);
    }

    #[test]
    fn select_dgp_is_deterministic_and_keeps_sigma_positive() {
        let (fit, _) = two_group_fit(60, 1.0, 3.0, 21);
        let cfg = DgpConfig {
            forest: ForestConfig::default_for(2, 3),
            m_pilot: 150,
            seed: 44,
        };
        let a = select_dgp(&fit, &cfg).unwrap();
        let b = select_dgp(&fit, &cfg).unwrap();
        assert_eq!(a.chosen_index, b.chosen_index);
        assert_eq!(a.chosen().sigma.as_slice(), b.chosen().sigma.as_slice());
        for model in &a.candidates {
            assert!(model.sigma.iter().all(|s| *s > 0.0));
            assert!(model.verification_ratio.is_some());
            assert!(model.distance.is_some());
        }
    }

    #[test]
    fn pre_scaling_every_candidate_does_not_change_the_winner() {
        // Calibration divides any common pre-scale back out (same pilot
        // draws), so distances and the selected index are identical.
        let (fit, _) = two_group_fit(60, 1.0, 3.0, 57);
        let cfg = ForestConfig::default_for(2, 6);
        let mut plain = make_candidates(&fit, &cfg).unwrap();
        let mut scaled = plain.clone();
        for model in scaled.iter_mut() {
            model.sigma *= 3.0;
        }
        for model in plain.iter_mut().chain(scaled.iter_mut()) {
            calibrate_scale(model, &fit, 150, 19).unwrap();
        }
        score_candidates(&mut plain, &fit, 150, 19).unwrap();
        score_candidates(&mut scaled, &fit, 150, 19).unwrap();
        for (p, s) in plain.iter().zip(&scaled) {
            assert_relative_eq!(p.distance.unwrap(), s.distance.unwrap(), epsilon = 1e-10);
        }
        assert_eq!(
            select_index(&plain).unwrap(),
            select_index(&scaled).unwrap()
        );
    }

    #[test]
    fn homoskedastic_data_prefers_tame_candidates() {
        let mut tame_wins = 0;
        for run in 0..20u64 {
            let x1: Vec<f64> = (0..200)
                .map(|i| rng::keyed_uniform(&[run, 301, i as u64]) * 2.0 - 1.0)
                .collect();
            let y: Vec<f64> = (0..200)
                .map(|i| rng::keyed_normal(&[run, 302, i as u64]))
                .collect();
            let fit = fit_from(y, vec![x1]);
            let cfg = DgpConfig {
                forest: ForestConfig::default_for(2, run.wrapping_add(1000)),
                m_pilot: 200,
                seed: run,
            };
            let selection = select_dgp(&fit, &cfg).unwrap();
            if matches!(
                selection.chosen().id,
                CandidateId::BlendOobHomo | CandidateId::Homoskedastic
            ) {
                tame_wins += 1;
            }
        }
        assert!(
            tame_wins >= 14,
            "tame candidates won only {tame_wins}/20 homoskedastic runs"
        );
    }

    #[test]
    fn strong_two_group_heteroskedasticity_prefers_forest_candidates() {
        let mut forest_wins = 0;
        for run in 0..20u64 {
            let (fit, _) = two_group_fit(400, 1.0, 5.0, run.wrapping_add(9000));
            let cfg = DgpConfig {
                forest: ForestConfig::default_for(2, run.wrapping_add(2000)),
                m_pilot: 200,
                seed: run,
            };
            let selection = select_dgp(&fit, &cfg).unwrap();
            if matches!(
                selection.chosen().id,
                CandidateId::InSample | CandidateId::Oob
            ) {
                forest_wins += 1;
            }
        }
        assert!(
            forest_wins >= 14,
            "forest candidates won only {forest_wins}/20 heteroskedastic runs"
        );
    }
}

