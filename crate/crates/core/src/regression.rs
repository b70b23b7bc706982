//! OLS via Householder QR, leverages, and Frisch–Waugh–Lovell machinery.
//!
//! All design-only quantities (thin Q, (XᵀX)⁻¹, leverages, residualized
//! regressors, partial leverages) live in [`DesignInfo`], which is computed
//! once per design and reused across outcome vectors — the Monte Carlo and
//! bootstrap hot paths depend on that split.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Relative singular-value threshold below which a design counts as rank
/// deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Everything about a design matrix that does not depend on the outcome.
#[derive(Clone, Debug)]
pub struct DesignInfo {
    x: DMatrix<f64>,
    names: Vec<String>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
    /// X(XᵀX)⁻¹; column k is the weight vector ℓ_k with β̂_k = ℓ_kᵀ·(Xβ+ε)
    /// projections, used by sandwich diagonals and Satterthwaite weights.
    w: DMatrix<f64>,
    leverages: DVector<f64>,
    /// Thin Q of X with column k removed, per k.
    q_minus: Vec<DMatrix<f64>>,
    x_tilde: Vec<DVector<f64>>,
    partial_leverages: Vec<DVector<f64>>,
    nk_tilde: DVector<f64>,
}

impl DesignInfo {
    /// Factorizes a design: one QR of X, one QR of each X₋ₖ, and a rank
    /// check. Fails with [`Error::RankDeficient`] rather than dropping
    /// columns.
    pub fn new(x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = x.nrows();
        let k = x.ncols();
        if k == 0 || n == 0 {
            return Err(Error::EmptyInput { context: "design matrix".into() });
        }
        if n <= k {
            return Err(Error::InvalidConfig(format!(
                "need more observations than regressors, got n = {n}, K = {k}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "design matrix".into() });
        }
        check_full_rank(&x)?;

        let qr = x.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or_else(|| Error::RankDeficient { columns: suspect_columns(&r) })?;
        // XᵀX = RᵀR, so (XᵀX)⁻¹ = R⁻¹R⁻ᵀ.
        let xtx_inv = &r_inv * r_inv.transpose();
        let w = &x * &xtx_inv;
        let leverages =
            DVector::from_iterator(n, q.row_iter().map(|row| row.norm_squared().min(1.0)));

        let mut q_minus = Vec::with_capacity(k);
        let mut x_tilde = Vec::with_capacity(k);
        let mut pl = Vec::with_capacity(k);
        let mut nk = DVector::zeros(k);
        for j in 0..k {
            let xj = x.column(j).into_owned();
            let qm = thin_q(&x.clone().remove_column(j));
            let xt = residualize(&xj, &qm);
            let h = partial_leverages(&xt)?;
            nk[j] = nk_tilde(&h)?;
            q_minus.push(qm);
            x_tilde.push(xt);
            pl.push(h);
        }

        Ok(DesignInfo {
            x,
            names,
            q,
            r,
            xtx_inv,
            w,
            leverages,
            q_minus,
            x_tilde,
            partial_leverages: pl,
            nk_tilde: nk,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Thin Q factor of the design.
    pub fn q_thin(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn xtx_inv(&self) -> &DMatrix<f64> {
        &self.xtx_inv
    }

    /// X(XᵀX)⁻¹, whose column k is ℓ_k.
    pub fn weight_matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn leverages(&self) -> &DVector<f64> {
        &self.leverages
    }

    pub fn x_tilde(&self, k: usize) -> &DVector<f64> {
        &self.x_tilde[k]
    }

    pub fn partial_leverages(&self, k: usize) -> &DVector<f64> {
        &self.partial_leverages[k]
    }

    pub fn nk_tilde(&self, k: usize) -> f64 {
        self.nk_tilde[k]
    }

    /// Coefficients and residuals for an outcome over this design.
    ///
    /// β̂ = R⁻¹Qᵀy by back substitution; residuals via the projector
    /// y − Q(Qᵀy), which keeps Xᵀε̂ at rounding level.
    pub fn beta_residuals(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let qty = self.q.tr_mul(y);
        let beta = self
            .r
            .solve_upper_triangular(&qty)
            .expect("R verified invertible at construction");
        let residuals = y - &self.q * qty;
        (beta, residuals)
    }

    /// FWL-residualized outcome for coefficient k: y with the other columns
    /// partialled out.
    pub fn y_tilde(&self, y: &DVector<f64>, k: usize) -> DVector<f64> {
        residualize(y, &self.q_minus[k])
    }

    /// Fitted values from the span of X₋ₖ (the restricted model's ŷ).
    pub fn fitted_without(&self, y: &DVector<f64>, k: usize) -> DVector<f64> {
        let qm = &self.q_minus[k];
        qm * qm.tr_mul(y)
    }
}

/// A complete OLS fit: design quantities plus everything that depends on y.
#[derive(Clone, Debug)]
pub struct RegressionFit {
    design: DesignInfo,
    y: DVector<f64>,
    beta_hat: DVector<f64>,
    residuals: DVector<f64>,
    y_tilde: Vec<DVector<f64>>,
}

impl RegressionFit {
    pub fn beta_hat(&self) -> &DVector<f64> {
        &self.beta_hat
    }

    pub fn residuals(&self) -> &DVector<f64> {
        &self.residuals
    }

    pub fn leverages(&self) -> &DVector<f64> {
        self.design.leverages()
    }

    pub fn xtx_inv(&self) -> &DMatrix<f64> {
        self.design.xtx_inv()
    }

    /// The (x̃_k, ỹ_k) pair from the FWL decomposition for coefficient k.
    pub fn fwl(&self, k: usize) -> (&DVector<f64>, &DVector<f64>) {
        (&self.design.x_tilde[k], &self.y_tilde[k])
    }

    pub fn partial_leverages(&self, k: usize) -> &DVector<f64> {
        self.design.partial_leverages(k)
    }

    /// Effective sample size ñ_k = 1/Σᵢ h̃²_{k,i} for coefficient k.
    pub fn nk_tilde(&self, k: usize) -> f64 {
        self.design.nk_tilde(k)
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn k(&self) -> usize {
        self.design.k()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        self.design.x()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        self.design.names()
    }

    pub fn design(&self) -> &DesignInfo {
        &self.design
    }

    /// Classical residual variance σ̂² = Σε̂²/(n−K).
    pub fn sigma2_hat(&self) -> f64 {
        self.residuals.norm_squared() / (self.n() - self.k()) as f64
    }
}

/// Fits OLS by Householder QR. Rank deficiency is an error, never silent
/// column dropping.
pub fn fit_ols(data: &Dataset) -> Result<RegressionFit> {
    let design = DesignInfo::new(data.x().clone(), data.names().to_vec())?;
    fit_with_design(design, data.y().clone())
}

/// Fit over an already-factorized design (the cheap path when the same X is
/// reused with many outcomes).
pub fn fit_with_design(design: DesignInfo, y: DVector<f64>) -> Result<RegressionFit> {
    if y.len() != design.n() {
        return Err(Error::DimensionMismatch(format!(
            "y has {} rows, design has {}",
            y.len(),
            design.n()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "outcome vector".into() });
    }
    let (beta_hat, residuals) = design.beta_residuals(&y);
    let y_tilde = (0..design.k()).map(|k| design.y_tilde(&y, k)).collect();
    Ok(RegressionFit { design, y, beta_hat, residuals, y_tilde })
}

/// The FWL decomposition for coefficient `k`: residualizes x_k and y on all
/// other columns. The short regression of ỹ on x̃ reproduces β̂_k and the
/// full-model residuals.
pub fn fwl_residualize(data: &Dataset, k: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    let kc = data.k();
    if k >= kc {
        return Err(Error::IndexOutOfRange { index: k, n_cols: kc });
    }
    let others = data.x().clone().remove_column(k);
    if others.ncols() > 0 {
        check_full_rank(&others)?;
    }
    let qm = thin_q(&others);
    let x_tilde = residualize(&data.x().column(k).into_owned(), &qm);
    let y_tilde = residualize(data.y(), &qm);
    Ok((x_tilde, y_tilde))
}

/// Partial leverages h̃_{k,i} = x̃²_{k,i} / Σⱼ x̃²_{k,j}.
pub fn partial_leverages(x_tilde: &DVector<f64>) -> Result<DVector<f64>> {
    if x_tilde.is_empty() {
        return Err(Error::EmptyInput { context: "residualized regressor".into() });
    }
    let ss = x_tilde.norm_squared();
    if !(ss > 0.0) || !ss.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(x_tilde.map(|v| v * v / ss))
}

/// Effective sample size ñ = (Σ h̃²)⁻¹; ranges from 1 (all weight on one
/// observation) to n (uniform weights).
pub fn nk_tilde(h_tilde: &DVector<f64>) -> Result<f64> {
    if h_tilde.is_empty() {
        return Err(Error::EmptyInput { context: "partial leverages".into() });
    }
    let s: f64 = h_tilde.iter().map(|h| h * h).sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(1.0 / s)
}

/// Cluster-level effective count G̃ = (Σ_g (Σ_{i∈g} h̃_i)²)⁻¹ for arbitrary
/// cluster labels.
pub fn cluster_nk_tilde<T: Eq + std::hash::Hash>(
    h_tilde: &DVector<f64>,
    labels: &[T],
) -> Result<f64> {
    if labels.len() != h_tilde.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} observations",
            labels.len(),
            h_tilde.len()
        )));
    }
    if h_tilde.is_empty() {
        return Err(Error::EmptyInput { context: "partial leverages".into() });
    }
    let mut sums: std::collections::HashMap<&T, f64> = std::collections::HashMap::new();
    for (i, lab) in labels.iter().enumerate() {
        *sums.entry(lab).or_insert(0.0) += h_tilde[i];
    }
    let s: f64 = sums.values().map(|v| v * v).sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(1.0 / s)
}

fn residualize(v: &DVector<f64>, q_other: &DMatrix<f64>) -> DVector<f64> {
    if q_other.ncols() == 0 {
        return v.clone();
    }
    v - q_other * q_other.tr_mul(v)
}

fn thin_q(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    m.clone().qr().q()
}

fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min < RANK_TOL * max {
        let r = x.clone().qr().r();
        return Err(Error::RankDeficient { columns: suspect_columns(&r) });
    }
    Ok(())
}

/// Columns whose R-factor diagonal collapsed relative to the largest — the
/// most likely members of a collinear set.
fn suspect_columns(r: &DMatrix<f64>) -> Vec<usize> {
    let k = r.ncols().min(r.nrows());
    let max = (0..k).map(|j| r[(j, j)].abs()).fold(0.0_f64, f64::max);
    (0..k).filter(|&j| r[(j, j)].abs() <= 1e-8 * max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dataset(y: Vec<f64>, xcols: Vec<Vec<f64>>) -> Dataset {
        let n = y.len();
        let k = xcols.len();
        let x = DMatrix::from_fn(n, k, |i, j| xcols[j][i]);
        Dataset::new(DVector::from_vec(y), x).unwrap()
    }

    #[test]
    fn intercept_only_fit_is_the_mean() {
        let d = dataset(vec![1.0, 2.0], vec![vec![1.0, 1.0]]);
        let f = fit_ols(&d).unwrap();
        assert_relative_eq!(f.beta_hat()[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(f.residuals()[0], -0.5, epsilon = 1e-12);
        assert_relative_eq!(f.residuals()[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(f.leverages()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(f.leverages()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dummy_design_leverages_match_hat_matrix() {
        // Intercept plus a dummy for observation 1 (n = 4): the dummy row is
        // fitted exactly, h = (1, 1/3, 1/3, 1/3).
        let d = dataset(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![vec![1.0; 4], vec![1.0, 0.0, 0.0, 0.0]],
        );
        let f = fit_ols(&d).unwrap();
        let expect = [1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for i in 0..4 {
            assert_relative_eq!(f.leverages()[i], expect[i], epsilon = 1e-10);
        }
        // Oracle: the hat matrix diagonal computed the naive way.
        let x = d.x();
        let hat = x * (x.transpose() * x).try_inverse().unwrap() * x.transpose();
        for i in 0..4 {
            assert_relative_eq!(f.leverages()[i], hat[(i, i)], epsilon = 1e-10);
        }
    }

    #[test]
    fn leverages_sum_to_k() {
        let d = dataset(
            vec![0.3, -1.0, 2.0, 0.7, 1.1, -0.4],
            vec![
                vec![1.0; 6],
                vec![0.4, -1.2, 0.8, 2.0, -0.3, 0.9],
                vec![1.5, 0.2, -0.7, 0.3, 1.1, -2.0],
            ],
        );
        let f = fit_ols(&d).unwrap();
        assert_relative_eq!(f.leverages().sum(), 3.0, epsilon = 1e-10);
        for &h in f.leverages().iter() {
            assert!((0.0..=1.0).contains(&h));
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_design() {
        let d = dataset(
            vec![2.0, -0.5, 1.0, 3.0, 0.0],
            vec![vec![1.0; 5], vec![0.1, 1.4, -0.6, 2.2, 0.5]],
        );
        let f = fit_ols(&d).unwrap();
        let xte = d.x().tr_mul(f.residuals());
        assert!(xte.amax() < 1e-10 * d.y().norm());
    }

    #[test]
    fn fwl_single_column_is_identity() {
        let d = dataset(vec![1.0, 4.0, -2.0], vec![vec![0.5, 1.0, 2.0]]);
        let (xt, yt) = fwl_residualize(&d, 0).unwrap();
        assert_eq!(xt, d.x().column(0).into_owned());
        assert_eq!(yt, *d.y());
    }

    #[test]
    fn fwl_against_intercept_is_centering() {
        let d = dataset(
            vec![1.0, 2.0, 6.0],
            vec![vec![1.0; 3], vec![2.0, 4.0, 6.0]],
        );
        let (xt, yt) = fwl_residualize(&d, 1).unwrap();
        for (v, e) in xt.iter().zip([-2.0, 0.0, 2.0]) {
            assert_relative_eq!(*v, e, epsilon = 1e-12);
        }
        for (v, e) in yt.iter().zip([-2.0, -1.0, 3.0]) {
            assert_relative_eq!(*v, e, epsilon = 1e-12);
        }
        // Short-regression slope equals the full-model coefficient.
        let slope = xt.dot(&yt) / xt.norm_squared();
        let f = fit_ols(&d).unwrap();
        assert_relative_eq!(slope, f.beta_hat()[1], epsilon = 1e-12);
    }

    #[test]
    fn partial_leverage_dummy_case() {
        let d = dataset(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![vec![1.0; 4], vec![1.0, 0.0, 0.0, 0.0]],
        );
        let f = fit_ols(&d).unwrap();
        let h = f.partial_leverages(1);
        let expect = [0.75, 1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0];
        for i in 0..4 {
            assert_relative_eq!(h[i], expect[i], epsilon = 1e-12);
        }
        assert_relative_eq!(h.sum(), 1.0, epsilon = 1e-12);
        // ñ = 1/(0.75² + 3·(1/12)²) = 1/(0.583…) = 12/7.
        assert_relative_eq!(f.nk_tilde(1), 12.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn nk_tilde_bounds() {
        // Uniform weights: ñ = n.
        let h = DVector::from_element(10, 0.1);
        assert_relative_eq!(nk_tilde(&h).unwrap(), 10.0, epsilon = 1e-12);
        // Full concentration: ñ = 1.
        let mut h = DVector::zeros(10);
        h[3] = 1.0;
        assert_relative_eq!(nk_tilde(&h).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dummy_concentration_is_algebraic() {
        // Dummy on observation 1 plus intercept: h̃₁ = (n−1)/n exactly.
        for n in 2..=50usize {
            let mut dummy = DVector::zeros(n);
            dummy[0] = 1.0;
            let mean = 1.0 / n as f64;
            let x_tilde = dummy.map(|v| v - mean);
            let h = partial_leverages(&x_tilde).unwrap();
            assert_relative_eq!(h[0], (n as f64 - 1.0) / n as f64, epsilon = 1e-12);
            if n >= 3 {
                // Same thing through the full pipeline.
                let mut cols = vec![vec![1.0; n], vec![0.0; n]];
                cols[1][0] = 1.0;
                let d = dataset((0..n).map(|i| i as f64).collect(), cols);
                let f = fit_ols(&d).unwrap();
                assert_relative_eq!(
                    f.partial_leverages(1)[0],
                    (n as f64 - 1.0) / n as f64,
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn cluster_counts_collapse_and_split() {
        let h = DVector::from_element(10, 0.1);
        // Two equal clusters of five: G̃ = 1/(0.5² + 0.5²) = 2.
        let labels: Vec<u32> = (0..10).map(|i| (i < 5) as u32).collect();
        assert_relative_eq!(cluster_nk_tilde(&h, &labels).unwrap(), 2.0, epsilon = 1e-12);
        // Singleton clusters reduce to ñ.
        let singles: Vec<u32> = (0..10).collect();
        assert_relative_eq!(cluster_nk_tilde(&h, &singles).unwrap(), 10.0, epsilon = 1e-12);
        // One big cluster: G̃ = 1.
        let ones = vec![7u32; 10];
        assert_relative_eq!(cluster_nk_tilde(&h, &ones).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficiency_is_an_error_naming_columns() {
        let d = dataset(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![vec![1.0; 4], vec![2.0; 4], vec![0.3, 1.0, -0.5, 0.8]],
        );
        match fit_ols(&d) {
            Err(Error::RankDeficient { columns }) => {
                assert!(!columns.is_empty());
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn index_out_of_range_is_reported() {
        let d = dataset(vec![1.0, 2.0, 3.0], vec![vec![1.0; 3]]);
        assert!(matches!(
            fwl_residualize(&d, 1),
            Err(Error::IndexOutOfRange { index: 1, n_cols: 1 })
        ));
    }

    #[test]
    fn zero_vector_is_rejected() {
        let z = DVector::zeros(5);
        assert!(matches!(partial_leverages(&z), Err(Error::ZeroVector)));
        assert!(matches!(nk_tilde(&z), Err(Error::ZeroVector)));
    }
}
