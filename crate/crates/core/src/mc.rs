//! Monte Carlo rejection-rate harness.
//!
//! Simulates y = ε with ε_i ~ N(0, σ_i²) over a fixed design, applies every
//! requested inference specification to every selected coefficient, and
//! reports rejection rates π at a nominal level together with their excess
//! max(π−level, 0) and lack max(level−π, 0), plus the sorted rejection-rate
//! curve used for quantile plots.
//!
//! The design is factorized once and reused for all samples; each sample
//! only redraws the outcome. Error draws are keyed by
//! `(base_seed, salt, sample, observation)` and aggregation is integer
//! counting, so a report is bit-identical for a given seed no matter how
//! many worker threads run the samples.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::bootstrap::WildMachine;
use crate::dof::dof_for;
use crate::error::{Error, Result};
use crate::regression::DesignInfo;
use crate::rng;
use crate::specs::{InferenceSpec, SpecKind, WildAdjust};
use crate::student_t::t_cdf;
use crate::variance::vcov_weight_vector;

/// Most coefficients tested per design when no explicit filter is given.
pub const MAX_DEFAULT_COEFFICIENTS: usize = 25;

const DRAW_SALT: u64 = 0x4D43_4452_4157_0001;
const WILD_SALT: u64 = 0x4D43_5749_4C44_0002;
const IDEAL_SALT: u64 = 0x4D43_4944_4541_0003;

/// Configuration of one Monte Carlo run.
#[derive(Debug, Clone)]
pub struct MCConfig {
    /// Monte Carlo samples M.
    pub m_samples: usize,
    /// Nominal significance level.
    pub level: f64,
    /// Specifications to evaluate.
    pub specs: Vec<InferenceSpec>,
    /// Coefficient indices to test; `None` tests the first
    /// [`MAX_DEFAULT_COEFFICIENTS`] columns.
    pub coefficients: Option<Vec<usize>>,
    pub base_seed: u64,
    /// Replications per wild-bootstrap test (only read for bootstrap specs).
    pub wild_b: usize,
}

impl MCConfig {
    pub fn new(specs: Vec<InferenceSpec>, m_samples: usize, base_seed: u64) -> Self {
        MCConfig {
            m_samples,
            level: 0.05,
            specs,
            coefficients: None,
            base_seed,
            wild_b: 99,
        }
    }
}

/// One (specification, coefficient) cell of the report.
#[derive(Debug, Clone, Serialize)]
pub struct MCCell {
    pub spec: String,
    pub coefficient: usize,
    pub coefficient_name: String,
    /// Fraction of non-failed samples with p ≤ level; `None` when the cell
    /// is missing (see `missing_reason`).
    pub rejection_rate: Option<f64>,
    pub excess: Option<f64>,
    pub lack: Option<f64>,
    /// Samples where this cell's test could not be computed (for example a
    /// degenerate bootstrap variance). π is taken over the remaining ones.
    pub failed_samples: usize,
    /// Why the whole cell is missing: a setup error (bad dof, omitted
    /// everything) or every single sample failing. Missing cells stay in the
    /// report; they are excluded from the per-spec averages.
    pub missing_reason: Option<String>,
    pub nk_tilde: f64,
    pub h_max: f64,
    pub n: usize,
    pub k_total: usize,
}

/// A point of the sorted rejection-rate curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub position: f64,
    pub rate: f64,
}

/// Per-specification aggregate over all non-missing cells.
#[derive(Debug, Clone, Serialize)]
pub struct SpecSummary {
    pub spec: String,
    pub avg_excess: Option<f64>,
    pub avg_lack: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

/// Full result of [`run_mc`].
#[derive(Debug, Clone, Serialize)]
pub struct MCReport {
    pub m_samples: usize,
    pub level: f64,
    pub n: usize,
    pub k: usize,
    pub cells: Vec<MCCell>,
    pub summaries: Vec<SpecSummary>,
}

/// Everything needed to evaluate one cell on one simulated sample.
enum CellEval {
    /// t test: V_kk = Σ cᵢ ε̂ᵢ², then t = β̂_k/√V against t(dof).
    TTest { k: usize, c: DVector<f64>, dof: f64 },
    Wild { k: usize, machine: WildMachine, theta: WildAdjust, eta: WildAdjust },
    Missing,
}

/// Run the harness over an already-factorized design.
pub fn run_mc_design(design: &DesignInfo, sigma: &DVector<f64>, cfg: &MCConfig) -> Result<MCReport> {
    let n = design.n();
    let k_total = design.k();
    if cfg.m_samples == 0 {
        return Err(Error::InvalidConfig("Monte Carlo needs at least one sample".into()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "level must lie strictly between 0 and 1, got {}",
            cfg.level
        )));
    }
    if cfg.specs.is_empty() {
        return Err(Error::EmptyInput { context: "specification list".into() });
    }
    if sigma.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} sigmas for {} design rows",
            sigma.len(),
            n
        )));
    }
    if sigma.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::NonFinite { context: "sigma vector".into() });
    }
    let coefficients: Vec<usize> = match &cfg.coefficients {
        Some(list) => {
            for &k in list {
                if k >= k_total {
                    return Err(Error::IndexOutOfRange { index: k, n_cols: k_total });
                }
            }
            list.clone()
        }
        None => (0..k_total.min(MAX_DEFAULT_COEFFICIENTS)).collect(),
    };
    if coefficients.is_empty() {
        return Err(Error::EmptyInput { context: "coefficient list".into() });
    }

    let h_max = design.leverages().iter().fold(f64::NEG_INFINITY, |a, &h| a.max(h));

    // Set up every cell: anything y-independent that fails makes the cell
    // missing up front, with the error as the reason.
    let mut cells = Vec::with_capacity(cfg.specs.len() * coefficients.len());
    let mut evals = Vec::with_capacity(cells.capacity());
    for spec in &cfg.specs {
        for &k in &coefficients {
            let mut reason = None;
            let eval = match spec.kind {
                SpecKind::TTest { variance, .. } => {
                    let built = vcov_weight_vector(design, variance, spec.h1_policy, k)
                        .and_then(|c| Ok(CellEval::TTest { k, c, dof: dof_for(spec, design, k)? }));
                    match built {
                        Ok(eval) => eval,
                        Err(e) => {
                            reason = Some(e.to_string());
                            CellEval::Missing
                        }
                    }
                }
                SpecKind::Wild { theta, eta } => {
                    match WildMachine::new(design, k, theta, eta, cfg.wild_b) {
                        Ok(machine) => CellEval::Wild { k, machine, theta, eta },
                        Err(e) => {
                            reason = Some(e.to_string());
                            CellEval::Missing
                        }
                    }
                }
            };
            evals.push(eval);
            cells.push(MCCell {
                spec: spec.name.clone(),
                coefficient: k,
                coefficient_name: design.names()[k].clone(),
                rejection_rate: None,
                excess: None,
                lack: None,
                failed_samples: 0,
                missing_reason: reason,
                nk_tilde: design.nk_tilde(k),
                h_max,
                n,
                k_total,
            });
        }
    }

    let n_cells = cells.len();
    let zero = || (vec![0u64; n_cells], vec![0u64; n_cells]);
    let (rejects, fails) = (0..cfg.m_samples)
        .into_par_iter()
        .fold(zero, |mut acc, m| {
            let eps = DVector::from_fn(n, |i, _| {
                sigma[i] * rng::keyed_normal(&[cfg.base_seed, DRAW_SALT, m as u64, i as u64])
            });
            let (beta, resid) = design.beta_residuals(&eps);
            for (idx, eval) in evals.iter().enumerate() {
                match eval {
                    CellEval::TTest { k, c, dof } => {
                        let v: f64 = c.iter().zip(resid.iter()).map(|(ci, e)| ci * e * e).sum();
                        let p = if v > 0.0 && v.is_finite() {
                            let t = beta[*k] / v.sqrt();
                            t_cdf(t.abs(), *dof).ok().map(|cdf| 2.0 * (1.0 - cdf))
                        } else {
                            None
                        };
                        match p {
                            Some(p) if p <= cfg.level => acc.0[idx] += 1,
                            Some(_) => {}
                            None => acc.1[idx] += 1,
                        }
                    }
                    CellEval::Wild { k, machine, theta, eta } => {
                        let seed = rng::keyed_u64(&[
                            cfg.base_seed,
                            WILD_SALT,
                            m as u64,
                            *k as u64,
                            wild_digit(*theta),
                            wild_digit(*eta),
                        ]);
                        match machine.pvalue(design, &eps, seed) {
                            Ok(res) if res.p_value <= cfg.level => acc.0[idx] += 1,
                            Ok(_) => {}
                            Err(_) => acc.1[idx] += 1,
                        }
                    }
                    CellEval::Missing => {}
                }
            }
            acc
        })
        .reduce(zero, |mut a, b| {
            for i in 0..n_cells {
                a.0[i] += b.0[i];
                a.1[i] += b.1[i];
            }
            a
        });

    for (idx, cell) in cells.iter_mut().enumerate() {
        if cell.missing_reason.is_some() {
            continue;
        }
        let failed = fails[idx] as usize;
        cell.failed_samples = failed;
        let used = cfg.m_samples - failed;
        if used == 0 {
            cell.missing_reason = Some("every Monte Carlo sample failed".into());
            continue;
        }
        let pi = rejects[idx] as f64 / used as f64;
        let (excess, lack) = excess_lack(pi, cfg.level);
        cell.rejection_rate = Some(pi);
        cell.excess = Some(excess);
        cell.lack = Some(lack);
    }

    let summaries = cfg
        .specs
        .iter()
        .map(|spec| summarize_spec(&spec.name, &cells))
        .collect();

    Ok(MCReport {
        m_samples: cfg.m_samples,
        level: cfg.level,
        n,
        k: k_total,
        cells,
        summaries,
    })
}

/// Run the harness on a raw design matrix (columns named x1..xK).
pub fn run_mc(x: &DMatrix<f64>, sigma: &DVector<f64>, cfg: &MCConfig) -> Result<MCReport> {
    let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    let design = DesignInfo::new(x.clone(), names)?;
    run_mc_design(&design, sigma, cfg)
}

fn wild_digit(w: WildAdjust) -> u64 {
    match w {
        WildAdjust::Hc1 => 1,
        WildAdjust::Hc2 => 2,
        WildAdjust::Hc3 => 3,
    }
}

fn summarize_spec(name: &str, cells: &[MCCell]) -> SpecSummary {
    let rates: Vec<f64> = cells
        .iter()
        .filter(|c| c.spec == name)
        .filter_map(|c| c.rejection_rate)
        .collect();
    if rates.is_empty() {
        return SpecSummary {
            spec: name.to_string(),
            avg_excess: None,
            avg_lack: None,
            curve: Vec::new(),
        };
    }
    let mut excess_sum = 0.0;
    let mut lack_sum = 0.0;
    for cell in cells.iter().filter(|c| c.spec == name) {
        if let (Some(e), Some(l)) = (cell.excess, cell.lack) {
            excess_sum += e;
            lack_sum += l;
        }
    }
    let count = rates.len() as f64;
    SpecSummary {
        spec: name.to_string(),
        avg_excess: Some(excess_sum / count),
        avg_lack: Some(lack_sum / count),
        curve: quantile_curve(&rates).expect("non-empty by construction"),
    }
}

/// Excess and lack of a rejection rate against the nominal level. Exactly
/// one of the two is nonzero unless π equals the level.
pub fn excess_lack(pi: f64, level: f64) -> (f64, f64) {
    ((pi - level).max(0.0), (level - pi).max(0.0))
}

/// The benchmark a perfectly calibrated procedure would produce: simulate
/// `n_situations` cells of `m` uniform p-values each and aggregate average
/// excess and lack the same way [`run_mc`] does. This is the noise floor an
/// estimator's average excess/lack should be compared against.
pub fn ideal_reference(m: usize, level: f64, n_situations: usize, seed: u64) -> (f64, f64) {
    assert!(m >= 1 && n_situations >= 1, "need at least one sample and situation");
    assert!(level > 0.0 && level < 1.0, "level must lie in (0,1)");
    let sums: Vec<(f64, f64)> = (0..n_situations)
        .into_par_iter()
        .map(|s| {
            let mut rejected = 0u64;
            for mm in 0..m {
                let p = rng::keyed_uniform(&[seed, IDEAL_SALT, s as u64, mm as u64]);
                if p <= level {
                    rejected += 1;
                }
            }
            excess_lack(rejected as f64 / m as f64, level)
        })
        .collect();
    let total = sums.iter().fold((0.0, 0.0), |acc, &(e, l)| (acc.0 + e, acc.1 + l));
    (total.0 / n_situations as f64, total.1 / n_situations as f64)
}

/// Rejection rates sorted ascending, tagged with plotting positions
/// (i − 0.5)/count for i = 1..count.
pub fn quantile_curve(rates: &[f64]) -> Result<Vec<CurvePoint>> {
    if rates.is_empty() {
        return Err(Error::EmptyInput { context: "rejection-rate vector".into() });
    }
    let mut sorted = rates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rejection rates"));
    let count = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, rate)| CurvePoint {
            position: (i as f64 + 0.5) / count,
            rate,
        })
        .collect())
}
