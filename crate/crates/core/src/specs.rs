//! Named inference specifications: which variance estimator, which
//! leverage-one policy, and which degrees-of-freedom rule go together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance estimator family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarianceKind {
    /// Classical homoskedastic σ̂²(XᵀX)⁻¹.
    Iid,
    Hc0,
    Hc1,
    Hc2,
    Hc3,
    Hc4,
}

impl VarianceKind {
    pub fn label(self) -> &'static str {
        match self {
            VarianceKind::Iid => "iid",
            VarianceKind::Hc0 => "hc0",
            VarianceKind::Hc1 => "hc1",
            VarianceKind::Hc2 => "hc2",
            VarianceKind::Hc3 => "hc3",
            VarianceKind::Hc4 => "hc4",
        }
    }
}

/// What to do with observations whose leverage is (numerically) one, where
/// the HC2–HC4 adjustment 1/(1−h) blows up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum H1Policy {
    /// Set the observation's meat contribution α·ε̂² to zero (the
    /// Moore–Penrose convention) and keep the full bread.
    ZeroOut,
    /// Drop the observation from both the meat and the bread (XᵀX)⁻¹.
    /// Leverages and coefficients are NOT recomputed.
    OmitObs,
}

impl H1Policy {
    pub fn label(self) -> &'static str {
        match self {
            H1Policy::ZeroOut => "zero",
            H1Policy::OmitObs => "omit",
        }
    }
}

/// Degrees-of-freedom rule for the t reference distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DofRule {
    /// n − K.
    Classical,
    /// Satterthwaite approximation with HC2 weights (Bell–McCaffrey).
    BellMcCaffrey,
    /// ñ_k − 1, the partial-leverage effective sample size less one.
    PartialLeverage,
}

impl DofRule {
    pub fn label(self) -> &'static str {
        match self {
            DofRule::Classical => "classical",
            DofRule::BellMcCaffrey => "bm",
            DofRule::PartialLeverage => "pl",
        }
    }
}

/// Wild-bootstrap adjustment types for the θ (residual scaling) and η
/// (bootstrap variance) slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WildAdjust {
    Hc1,
    Hc2,
    Hc3,
}

impl WildAdjust {
    pub fn variance_kind(self) -> VarianceKind {
        match self {
            WildAdjust::Hc1 => VarianceKind::Hc1,
            WildAdjust::Hc2 => VarianceKind::Hc2,
            WildAdjust::Hc3 => VarianceKind::Hc3,
        }
    }

    fn digit(self) -> char {
        match self {
            WildAdjust::Hc1 => '1',
            WildAdjust::Hc2 => '2',
            WildAdjust::Hc3 => '3',
        }
    }

    fn from_digit(c: char) -> Option<Self> {
        match c {
            '1' => Some(WildAdjust::Hc1),
            '2' => Some(WildAdjust::Hc2),
            '3' => Some(WildAdjust::Hc3),
            _ => None,
        }
    }
}

/// The test procedure itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecKind {
    /// t test with a plug-in variance and a dof rule.
    TTest { variance: VarianceKind, dof: DofRule },
    /// Restricted wild bootstrap with residual adjustment θ and bootstrap
    /// variance type η.
    Wild { theta: WildAdjust, eta: WildAdjust },
}

/// A named (variance, leverage-one policy, dof) triple — one test procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceSpec {
    pub name: String,
    pub kind: SpecKind,
    pub h1_policy: H1Policy,
}

impl InferenceSpec {
    pub fn t_test(name: &str, variance: VarianceKind, dof: DofRule, policy: H1Policy) -> Self {
        InferenceSpec {
            name: name.to_string(),
            kind: SpecKind::TTest { variance, dof },
            h1_policy: policy,
        }
    }

    pub fn is_bootstrap(&self) -> bool {
        matches!(self.kind, SpecKind::Wild { .. })
    }
}

/// The named catalog: iid, hc0–hc4 with classical dof, hc2-bm, hc1-pl,
/// hc2-pl, and the nine wild-bootstrap combinations wb-θη.
pub fn catalog(policy: H1Policy) -> Vec<InferenceSpec> {
    let mut specs = vec![
        InferenceSpec::t_test("iid", VarianceKind::Iid, DofRule::Classical, policy),
        InferenceSpec::t_test("hc0", VarianceKind::Hc0, DofRule::Classical, policy),
        InferenceSpec::t_test("hc1", VarianceKind::Hc1, DofRule::Classical, policy),
        InferenceSpec::t_test("hc2", VarianceKind::Hc2, DofRule::Classical, policy),
        InferenceSpec::t_test("hc3", VarianceKind::Hc3, DofRule::Classical, policy),
        InferenceSpec::t_test("hc4", VarianceKind::Hc4, DofRule::Classical, policy),
        InferenceSpec::t_test("hc2-bm", VarianceKind::Hc2, DofRule::BellMcCaffrey, policy),
        InferenceSpec::t_test("hc1-pl", VarianceKind::Hc1, DofRule::PartialLeverage, policy),
        InferenceSpec::t_test("hc2-pl", VarianceKind::Hc2, DofRule::PartialLeverage, policy),
    ];
    for theta in [WildAdjust::Hc1, WildAdjust::Hc2, WildAdjust::Hc3] {
        for eta in [WildAdjust::Hc1, WildAdjust::Hc2, WildAdjust::Hc3] {
            specs.push(InferenceSpec {
                name: format!("wb-{}{}", theta.digit(), eta.digit()),
                kind: SpecKind::Wild { theta, eta },
                h1_policy: policy,
            });
        }
    }
    specs
}

/// Looks a spec name up in the catalog.
pub fn parse_spec(name: &str, policy: H1Policy) -> Result<InferenceSpec> {
    let lower = name.to_ascii_lowercase();
    if let Some(rest) = lower.strip_prefix("wb-") {
        let mut chars = rest.chars();
        if let (Some(t), Some(e), None) = (chars.next(), chars.next(), chars.next()) {
            if let (Some(theta), Some(eta)) =
                (WildAdjust::from_digit(t), WildAdjust::from_digit(e))
            {
                return Ok(InferenceSpec {
                    name: lower,
                    kind: SpecKind::Wild { theta, eta },
                    h1_policy: policy,
                });
            }
        }
        return Err(Error::InvalidConfig(format!(
            "unknown bootstrap spec '{name}' (expected wb-θη with θ,η in 1..3)"
        )));
    }
    catalog(policy)
        .into_iter()
        .find(|s| s.name == lower)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown spec name '{name}'")))
}
