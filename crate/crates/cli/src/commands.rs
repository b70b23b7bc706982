//! The four workflows behind the subcommands. Each one loads the CSV,
//! assembles the design, delegates to the library, and serializes a report
//! that embeds `schema_version` and the resolved configuration. Per-cell
//! numerical failures (a collapsed dof rule, a degenerate bootstrap t) are
//! reported inside the table rather than aborting the run; whole-run
//! failures map to exit codes via [`CliError`].

use std::path::{Path, PathBuf};

use robustinfer_core::nalgebra::DVector;
use robustinfer_core::bootstrap::{wild_pvalue, WildSpec};
use robustinfer_core::dgp::{DgpConfig, DgpSelection};
use robustinfer_core::dof::test_coefficient;
use robustinfer_core::mc::{run_mc_design, MCConfig, MCReport};
use robustinfer_core::regression::{cluster_nk_tilde, fit_ols, partial_leverages, DesignInfo};
use robustinfer_core::specs::{self, InferenceSpec, SpecKind};
use robustinfer_core::variance::leverage_one_indices;
use robustinfer_core::H1Policy;
use serde::Serialize;

use crate::ingest::{self, DesignRequest};
use crate::{BootstrapArgs, CalibrateArgs, CliError, FitArgs, FormatArg, McArgs, PolicyArg};

const SCHEMA_VERSION: u32 = 1;

fn policy_name(p: PolicyArg) -> &'static str {
    match p {
        PolicyArg::Zero => "zero",
        PolicyArg::Omit => "omit",
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
            Ok(())
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numeric(format!("serialization failed: {e}")))
}

fn csv_into_string(rows: Vec<Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)
            .map_err(|e| CliError::Data(format!("csv write: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Data(format!("csv write: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(format!("csv write: {e}")))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Parses spec names, or falls back to the full t-test catalog.
fn resolve_t_specs(names: &[String], policy: H1Policy) -> Result<Vec<InferenceSpec>, CliError> {
    if names.is_empty() {
        return Ok(specs::catalog(policy).into_iter().filter(|s| !s.is_bootstrap()).collect());
    }
    names.iter().map(|n| Ok(specs::parse_spec(n, policy)?)).collect()
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FitConfigOut {
    input: String,
    y: String,
    x: Vec<String>,
    expand: Vec<String>,
    no_intercept: bool,
    cluster: Option<String>,
    specs: Vec<String>,
    h1_policy: &'static str,
    level: f64,
}

#[derive(Serialize)]
struct TestBlock {
    spec: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dof: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_stat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct CoefficientBlock {
    name: String,
    estimate: f64,
    /// Effective sample size ñ_k identifying this coefficient.
    nk_tilde: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cluster_nk_tilde: Option<f64>,
    tests: Vec<TestBlock>,
}

#[derive(Serialize)]
struct FitReport {
    schema_version: u32,
    command: &'static str,
    config: FitConfigOut,
    n: usize,
    k: usize,
    h_max: f64,
    h1_count: usize,
    coefficients: Vec<CoefficientBlock>,
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let table = ingest::load_csv(&args.input.input)?;
    let req = DesignRequest {
        x: &args.input.x,
        expand: &args.input.expand,
        no_intercept: args.input.no_intercept,
    };
    let data = ingest::build_dataset(&table, &args.y, &req)?;
    let policy = args.h1_policy.to_policy();
    let spec_list = resolve_t_specs(&args.specs, policy)?;
    if let Some(wb) = spec_list.iter().find(|s| s.is_bootstrap()) {
        return Err(CliError::Config(format!(
            "spec '{}' is a bootstrap procedure; use the bootstrap subcommand",
            wb.name
        )));
    }
    let cluster_labels = match &args.cluster {
        Some(col) => Some(table.raw_column(col)?.to_vec()),
        None => None,
    };

    let fit = fit_ols(&data)?;
    let h_max = fit.leverages().iter().fold(f64::NEG_INFINITY, |a, &h| a.max(h));
    let h1_count = leverage_one_indices(fit.leverages()).len();

    let mut coefficients = Vec::with_capacity(data.k());
    for k in 0..data.k() {
        let cluster_nk = match &cluster_labels {
            Some(labels) => {
                let h_tilde = partial_leverages(fit.design().x_tilde(k))?;
                Some(cluster_nk_tilde(&h_tilde, labels)?)
            }
            None => None,
        };
        let tests = spec_list
            .iter()
            .map(|spec| match test_coefficient(&fit, k, spec, args.level) {
                Ok(r) => TestBlock {
                    spec: spec.name.clone(),
                    se: Some(r.se),
                    dof: Some(r.dof),
                    t_stat: Some(r.t_stat),
                    p_value: Some(r.p_value),
                    ci_low: Some(r.ci_low),
                    ci_high: Some(r.ci_high),
                    error: None,
                },
                Err(e) => TestBlock {
                    spec: spec.name.clone(),
                    se: None,
                    dof: None,
                    t_stat: None,
                    p_value: None,
                    ci_low: None,
                    ci_high: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        coefficients.push(CoefficientBlock {
            name: data.names()[k].clone(),
            estimate: fit.beta_hat()[k],
            nk_tilde: fit.nk_tilde(k),
            cluster_nk_tilde: cluster_nk,
            tests,
        });
    }

    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        command: "fit",
        config: FitConfigOut {
            input: args.input.input.display().to_string(),
            y: args.y.clone(),
            x: args.input.x.clone(),
            expand: args.input.expand.clone(),
            no_intercept: args.input.no_intercept,
            cluster: args.cluster.clone(),
            specs: spec_list.iter().map(|s| s.name.clone()).collect(),
            h1_policy: policy_name(args.h1_policy),
            level: args.level,
        },
        n: data.n(),
        k: data.k(),
        h_max,
        h1_count,
        coefficients,
    };

    let content = match args.output.format {
        FormatArg::Json => to_json(&report)?,
        FormatArg::Csv => {
            let mut rows = vec![vec![
                "coefficient".into(),
                "spec".into(),
                "estimate".into(),
                "se".into(),
                "dof".into(),
                "t_stat".into(),
                "p_value".into(),
                "ci_low".into(),
                "ci_high".into(),
                "nk_tilde".into(),
                "error".into(),
            ]];
            for c in &report.coefficients {
                for t in &c.tests {
                    rows.push(vec![
                        c.name.clone(),
                        t.spec.clone(),
                        c.estimate.to_string(),
                        fmt_opt(t.se),
                        fmt_opt(t.dof),
                        fmt_opt(t.t_stat),
                        fmt_opt(t.p_value),
                        fmt_opt(t.ci_low),
                        fmt_opt(t.ci_high),
                        c.nk_tilde.to_string(),
                        t.error.clone().unwrap_or_default(),
                    ]);
                }
            }
            csv_into_string(rows)?
        }
    };
    emit(&args.output.out, &content)
}

// ---------------------------------------------------------------------------
// bootstrap
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct BootstrapConfigOut {
    input: String,
    y: String,
    x: Vec<String>,
    expand: Vec<String>,
    no_intercept: bool,
    specs: Vec<String>,
    coefficients: Vec<String>,
    b: usize,
    seed: u64,
}

#[derive(Serialize)]
struct BootstrapRow {
    spec: String,
    coefficient: String,
    index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_original: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exceed_count: Option<usize>,
    b: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct BootstrapReport {
    schema_version: u32,
    command: &'static str,
    config: BootstrapConfigOut,
    n: usize,
    k: usize,
    results: Vec<BootstrapRow>,
}

pub fn bootstrap(args: &BootstrapArgs) -> Result<(), CliError> {
    let table = ingest::load_csv(&args.input.input)?;
    let req = DesignRequest {
        x: &args.input.x,
        expand: &args.input.expand,
        no_intercept: args.input.no_intercept,
    };
    let data = ingest::build_dataset(&table, &args.y, &req)?;

    let spec_names: Vec<String> = if args.specs.is_empty() {
        vec!["wb-11".to_string()]
    } else {
        args.specs.clone()
    };
    let mut spec_list = Vec::with_capacity(spec_names.len());
    for name in &spec_names {
        let spec = specs::parse_spec(name, H1Policy::ZeroOut)?;
        let SpecKind::Wild { theta, eta } = spec.kind else {
            return Err(CliError::Config(format!(
                "spec '{name}' is a t test; the bootstrap subcommand accepts wb-θη specs only"
            )));
        };
        spec_list.push((spec.name.clone(), theta, eta));
    }
    let indices = ingest::resolve_coefficients(data.names(), &args.coefficients)?
        .unwrap_or_else(|| (0..data.k()).collect());

    let mut results = Vec::with_capacity(spec_list.len() * indices.len());
    for (name, theta, eta) in &spec_list {
        for &k in &indices {
            let spec = WildSpec { theta: *theta, eta: *eta, b: args.b, seed: args.seed };
            let row = match wild_pvalue(&data, k, &spec) {
                Ok(r) => BootstrapRow {
                    spec: name.clone(),
                    coefficient: data.names()[k].clone(),
                    index: k,
                    p_value: Some(r.p_value),
                    t_original: Some(r.t_original),
                    exceed_count: Some(r.exceed_count),
                    b: r.b,
                    error: None,
                },
                Err(e @ robustinfer_core::Error::DegenerateT) => BootstrapRow {
                    spec: name.clone(),
                    coefficient: data.names()[k].clone(),
                    index: k,
                    p_value: None,
                    t_original: None,
                    exceed_count: None,
                    b: args.b,
                    error: Some(e.to_string()),
                },
                Err(e) => return Err(e.into()),
            };
            results.push(row);
        }
    }

    let report = BootstrapReport {
        schema_version: SCHEMA_VERSION,
        command: "bootstrap",
        config: BootstrapConfigOut {
            input: args.input.input.display().to_string(),
            y: args.y.clone(),
            x: args.input.x.clone(),
            expand: args.input.expand.clone(),
            no_intercept: args.input.no_intercept,
            specs: spec_names,
            coefficients: indices.iter().map(|&k| data.names()[k].clone()).collect(),
            b: args.b,
            seed: args.seed,
        },
        n: data.n(),
        k: data.k(),
        results,
    };

    let content = match args.output.format {
        FormatArg::Json => to_json(&report)?,
        FormatArg::Csv => {
            let mut rows = vec![vec![
                "spec".into(),
                "coefficient".into(),
                "index".into(),
                "p_value".into(),
                "t_original".into(),
                "exceed_count".into(),
                "b".into(),
                "error".into(),
            ]];
            for r in &report.results {
                rows.push(vec![
                    r.spec.clone(),
                    r.coefficient.clone(),
                    r.index.to_string(),
                    fmt_opt(r.p_value),
                    fmt_opt(r.t_original),
                    r.exceed_count.map(|c| c.to_string()).unwrap_or_default(),
                    r.b.to_string(),
                    r.error.clone().unwrap_or_default(),
                ]);
            }
            csv_into_string(rows)?
        }
    };
    emit(&args.output.out, &content)
}

// ---------------------------------------------------------------------------
// calibrate-dgp
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CalibrateConfigOut {
    input: String,
    y: String,
    x: Vec<String>,
    expand: Vec<String>,
    no_intercept: bool,
    seed: u64,
    m_pilot: usize,
    trees: usize,
    min_leaf: usize,
    mtry: usize,
    forest_seed: u64,
}

#[derive(Serialize)]
struct CandidateOut {
    id: robustinfer_core::dgp::CandidateId,
    calibration_factor: f64,
    verification_ratio: Option<f64>,
    kappa_bar: Option<f64>,
    s_kappa: Option<f64>,
    delta: Option<f64>,
    delta_bar: Option<f64>,
    distance: Option<f64>,
}

#[derive(Serialize)]
struct ChosenOut {
    #[serde(flatten)]
    scores: CandidateOut,
    sigma: Vec<f64>,
}

#[derive(Serialize)]
struct CalibrateReport {
    schema_version: u32,
    command: &'static str,
    config: CalibrateConfigOut,
    n: usize,
    k: usize,
    kappa_original: f64,
    chosen: ChosenOut,
    candidates: Vec<CandidateOut>,
}

fn candidate_scores(c: &robustinfer_core::dgp::CandidateModel) -> CandidateOut {
    CandidateOut {
        id: c.id,
        calibration_factor: c.calibration_factor,
        verification_ratio: c.verification_ratio,
        kappa_bar: c.kappa_bar,
        s_kappa: c.s_kappa,
        delta: c.delta,
        delta_bar: c.delta_bar,
        distance: c.distance,
    }
}

pub fn calibrate_dgp(args: &CalibrateArgs) -> Result<(), CliError> {
    let table = ingest::load_csv(&args.input.input)?;
    let req = DesignRequest {
        x: &args.input.x,
        expand: &args.input.expand,
        no_intercept: args.input.no_intercept,
    };
    let data = ingest::build_dataset(&table, &args.y, &req)?;
    let fit = fit_ols(&data)?;

    let mut cfg = DgpConfig::default_for(data.k(), args.seed);
    cfg.m_pilot = args.m_pilot;
    if let Some(trees) = args.trees {
        cfg.forest.n_trees = trees;
    }
    if let Some(min_leaf) = args.min_leaf {
        cfg.forest.min_leaf = min_leaf;
    }
    if let Some(mtry) = args.mtry {
        cfg.forest.mtry = mtry;
    }

    let selection: DgpSelection = robustinfer_core::dgp::select_dgp(&fit, &cfg)?;
    let chosen = selection.chosen();
    let report = CalibrateReport {
        schema_version: SCHEMA_VERSION,
        command: "calibrate-dgp",
        config: CalibrateConfigOut {
            input: args.input.input.display().to_string(),
            y: args.y.clone(),
            x: args.input.x.clone(),
            expand: args.input.expand.clone(),
            no_intercept: args.input.no_intercept,
            seed: args.seed,
            m_pilot: cfg.m_pilot,
            trees: cfg.forest.n_trees,
            min_leaf: cfg.forest.min_leaf,
            mtry: cfg.forest.mtry,
            forest_seed: cfg.forest.seed,
        },
        n: data.n(),
        k: data.k(),
        kappa_original: selection.kappa_original,
        chosen: ChosenOut {
            scores: candidate_scores(chosen),
            sigma: chosen.sigma.iter().copied().collect(),
        },
        candidates: selection.candidates.iter().map(candidate_scores).collect(),
    };
    emit(&args.out, &to_json(&report)?)
}

// ---------------------------------------------------------------------------
// mc
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct ArtifactChosen {
    sigma: Vec<f64>,
}

#[derive(serde::Deserialize)]
struct Artifact {
    chosen: ArtifactChosen,
}

#[derive(Serialize)]
struct McConfigOut {
    input: String,
    x: Vec<String>,
    expand: Vec<String>,
    no_intercept: bool,
    sigma_col: Option<String>,
    dgp: Option<String>,
    specs: Vec<String>,
    h1_policy: &'static str,
    coefficients: Vec<String>,
    level: f64,
    m: usize,
    b: usize,
    seed: u64,
}

#[derive(Serialize)]
struct McOutput {
    schema_version: u32,
    command: &'static str,
    config: McConfigOut,
    #[serde(flatten)]
    report: MCReport,
}

fn mc_cells_csv(report: &MCReport) -> Result<String, CliError> {
    let mut rows = vec![vec![
        "spec".into(),
        "coefficient".into(),
        "coefficient_name".into(),
        "n".into(),
        "k".into(),
        "nk_tilde".into(),
        "h_max".into(),
        "rejection_rate".into(),
        "excess".into(),
        "lack".into(),
        "failed_samples".into(),
        "missing_reason".into(),
    ]];
    for c in &report.cells {
        rows.push(vec![
            c.spec.clone(),
            c.coefficient.to_string(),
            c.coefficient_name.clone(),
            c.n.to_string(),
            c.k_total.to_string(),
            c.nk_tilde.to_string(),
            c.h_max.to_string(),
            fmt_opt(c.rejection_rate),
            fmt_opt(c.excess),
            fmt_opt(c.lack),
            c.failed_samples.to_string(),
            c.missing_reason.clone().unwrap_or_default(),
        ]);
    }
    csv_into_string(rows)
}

fn mc_curve_csv(report: &MCReport) -> Result<String, CliError> {
    let mut rows = vec![vec!["spec".into(), "position".into(), "rate".into()]];
    for s in &report.summaries {
        for p in &s.curve {
            rows.push(vec![s.spec.clone(), p.position.to_string(), p.rate.to_string()]);
        }
    }
    csv_into_string(rows)
}

pub fn mc(args: &McArgs) -> Result<(), CliError> {
    let table = ingest::load_csv(&args.input.input)?;
    let req = DesignRequest {
        x: &args.input.x,
        expand: &args.input.expand,
        no_intercept: args.input.no_intercept,
    };
    let (x, names) = ingest::build_design(&table, &req)?;
    let design = DesignInfo::new(x, names)?;

    let sigma = match (&args.sigma_col, &args.dgp) {
        (Some(col), _) => DVector::from_vec(table.numeric_column(col)?),
        (None, Some(path)) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            let artifact: Artifact = serde_json::from_str(&raw).map_err(|e| {
                CliError::Data(format!("{} is not a calibrate-dgp artifact: {e}", path.display()))
            })?;
            DVector::from_vec(artifact.chosen.sigma)
        }
        (None, None) => DVector::from_element(design.n(), 1.0),
    };

    let policy = args.h1_policy.to_policy();
    let spec_list = resolve_t_specs(&args.specs, policy)?;
    let coefficients = ingest::resolve_coefficients(design.names(), &args.coefficients)?;

    let mut cfg = MCConfig::new(spec_list, args.m, args.seed);
    cfg.level = args.level;
    cfg.coefficients = coefficients;
    cfg.wild_b = args.b;

    let report = run_mc_design(&design, &sigma, &cfg)?;
    let output = McOutput {
        schema_version: SCHEMA_VERSION,
        command: "mc",
        config: McConfigOut {
            input: args.input.input.display().to_string(),
            x: args.input.x.clone(),
            expand: args.input.expand.clone(),
            no_intercept: args.input.no_intercept,
            sigma_col: args.sigma_col.clone(),
            dgp: args.dgp.as_ref().map(|p| p.display().to_string()),
            specs: cfg.specs.iter().map(|s| s.name.clone()).collect(),
            h1_policy: policy_name(args.h1_policy),
            coefficients: match &cfg.coefficients {
                Some(list) => list.iter().map(|&k| design.names()[k].clone()).collect(),
                None => Vec::new(),
            },
            level: args.level,
            m: args.m,
            b: args.b,
            seed: args.seed,
        },
        report,
    };

    match (&args.output.out, args.output.format) {
        (Some(path), _) => {
            std::fs::write(path, to_json(&output)?)?;
            std::fs::write(sibling(path, "cells.csv"), mc_cells_csv(&output.report)?)?;
            std::fs::write(sibling(path, "curve.csv"), mc_curve_csv(&output.report)?)?;
            Ok(())
        }
        (None, FormatArg::Json) => emit(&None, &to_json(&output)?),
        (None, FormatArg::Csv) => emit(&None, &mc_cells_csv(&output.report)?),
    }
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}
