//! Almost ideal demand system: parameters, shares, Marshallian demand,
//! analytic demand calculus, and seeded sampling of class-constrained draws.
//!
//! Shares follow `w_i = alpha_i + sum_j gamma_ij ln p_j + beta_i ln(I/P)`
//! with the translog index `ln P = alpha . ln p + (ln p)' Gamma (ln p) / 2`;
//! quantities are `x_i = w_i I / p_i`.  The constraints `sum alpha = 1`,
//! `sum beta = 0`, `Gamma = Gamma'` with zero row and column sums (tolerance
//! [`tol::PARAM`]) give adding-up, homogeneity of degree zero and Slutsky
//! symmetry by construction.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;

use crate::tol;

/// A price-income pair at which demand is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPoint {
    pub prices: Vec<f64>,
    pub income: f64,
}

impl BudgetPoint {
    pub fn new(prices: Vec<f64>, income: f64) -> Self {
        Self { prices, income }
    }
}

/// One violated parameter constraint, with the offending magnitude.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    AlphaSum { sum: f64 },
    BetaSum { sum: f64 },
    GammaRowSum { row: usize, sum: f64 },
    GammaColSum { col: usize, sum: f64 },
    GammaAsymmetric { row: usize, col: usize, delta: f64 },
    NonFinite { field: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AlphaSum { sum } => write!(f, "sum of alpha is {sum}, expected 1"),
            Violation::BetaSum { sum } => write!(f, "sum of beta is {sum}, expected 0"),
            Violation::GammaRowSum { row, sum } => {
                write!(f, "row {} of gamma sums to {sum}, expected 0", row + 1)
            }
            Violation::GammaColSum { col, sum } => {
                write!(f, "column {} of gamma sums to {sum}, expected 0", col + 1)
            }
            Violation::GammaAsymmetric { row, col, delta } => write!(
                f,
                "gamma is asymmetric at ({},{}) by {delta}",
                row + 1,
                col + 1
            ),
            Violation::NonFinite { field } => write!(f, "{field} contains a non-finite entry"),
        }
    }
}

/// Parameter validation failure: either a structural shape problem or a list
/// naming every violated constraint.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("parameter shape mismatch: alpha has {alpha} entries, beta has {beta}, gamma is {rows}x{cols}")]
    Shape {
        alpha: usize,
        beta: usize,
        rows: usize,
        cols: usize,
    },
    #[error("parameter vectors are empty")]
    Empty,
    #[error("parameter constraints violated: {}", join_violations(.0))]
    Constraints(Vec<Violation>),
}

fn join_violations(violations: &[Violation]) -> String {
    let parts: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
    parts.join("; ")
}

/// Demand evaluation failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid evaluation point: {0}")]
    InvalidPoint(String),
    #[error("demand undefined at this point: {}", format_shares(.0))]
    UndefinedDemand(Vec<(usize, f64)>),
    #[error("operation unsupported for this oracle: {0}")]
    Unsupported(&'static str),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

fn format_shares(shares: &[(usize, f64)]) -> String {
    let parts: Vec<String> = shares
        .iter()
        .map(|(i, w)| format!("w_{} = {w}", i + 1))
        .collect();
    parts.join(", ")
}

/// A two-group partition of the goods, written 1-based in messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    first: Vec<usize>,
    second: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroupsError {
    #[error("both groups must be nonempty")]
    EmptyGroup,
    #[error("good index {0} is out of range for {1} goods")]
    OutOfRange(usize, usize),
    #[error("good {} appears more than once", .0 + 1)]
    Duplicate(usize),
    #[error("good {} belongs to neither group", .0 + 1)]
    Uncovered(usize),
}

impl Groups {
    /// Builds a partition of `0..goods` from 0-based member lists.
    pub fn new(first: Vec<usize>, second: Vec<usize>, goods: usize) -> Result<Self, GroupsError> {
        if first.is_empty() || second.is_empty() {
            return Err(GroupsError::EmptyGroup);
        }
        let mut seen = vec![false; goods];
        for &i in first.iter().chain(second.iter()) {
            if i >= goods {
                return Err(GroupsError::OutOfRange(i, goods));
            }
            if seen[i] {
                return Err(GroupsError::Duplicate(i));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(GroupsError::Uncovered(missing));
        }
        let mut first = first;
        let mut second = second;
        first.sort_unstable();
        second.sort_unstable();
        Ok(Self { first, second })
    }

    pub fn first(&self) -> &[usize] {
        &self.first
    }

    pub fn second(&self) -> &[usize] {
        &self.second
    }

    pub fn goods(&self) -> usize {
        self.first.len() + self.second.len()
    }

    /// Cross-group index pairs `(i, j)` with `i` in the first group.
    pub fn cross_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(self.first.len() * self.second.len());
        for &i in &self.first {
            for &j in &self.second {
                pairs.push((i, j));
            }
        }
        pairs
    }
}

impl fmt::Display for Groups {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one: Vec<String> = self.first.iter().map(|i| (i + 1).to_string()).collect();
        let two: Vec<String> = self.second.iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{{{}}},{{{}}}", one.join(","), two.join(","))
    }
}

/// Preference class a parameter draw is constrained to.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassTag {
    Unrestricted,
    Homothetic,
    /// Within this demand family the weakly separable members used for
    /// calibration coincide with the homothetic block-diagonal ones, so both
    /// separable tags sample `beta = 0` with zero cross-group `gamma`.
    WeaklySeparable(Groups),
    HomotheticWeaklySeparable(Groups),
}

impl ClassTag {
    pub fn forces_beta_zero(&self) -> bool {
        !matches!(self, ClassTag::Unrestricted)
    }

    pub fn groups(&self) -> Option<&Groups> {
        match self {
            ClassTag::WeaklySeparable(g) | ClassTag::HomotheticWeaklySeparable(g) => Some(g),
            _ => None,
        }
    }
}

impl fmt::Display for ClassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassTag::Unrestricted => write!(f, "unrestricted"),
            ClassTag::Homothetic => write!(f, "homothetic"),
            ClassTag::WeaklySeparable(g) => write!(f, "weakly-separable[{g}]"),
            ClassTag::HomotheticWeaklySeparable(g) => {
                write!(f, "homothetic-weakly-separable[{g}]")
            }
        }
    }
}

/// Demand system parameters satisfying the adding-up, homogeneity and
/// symmetry constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct AidsParams {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: DMatrix<f64>,
}

/// Checks the constraint set and returns every violation found.
pub fn validate_params(
    alpha: &[f64],
    beta: &[f64],
    gamma: &DMatrix<f64>,
) -> Result<(), ParamError> {
    let k = alpha.len();
    if k == 0 {
        return Err(ParamError::Empty);
    }
    if beta.len() != k || gamma.nrows() != k || gamma.ncols() != k {
        return Err(ParamError::Shape {
            alpha: k,
            beta: beta.len(),
            rows: gamma.nrows(),
            cols: gamma.ncols(),
        });
    }

    let mut violations = Vec::new();
    if !alpha.iter().all(|v| v.is_finite()) {
        violations.push(Violation::NonFinite { field: "alpha" });
    }
    if !beta.iter().all(|v| v.is_finite()) {
        violations.push(Violation::NonFinite { field: "beta" });
    }
    if !gamma.iter().all(|v| v.is_finite()) {
        violations.push(Violation::NonFinite { field: "gamma" });
    }
    if !violations.is_empty() {
        return Err(ParamError::Constraints(violations));
    }

    let alpha_sum: f64 = alpha.iter().sum();
    if (alpha_sum - 1.0).abs() > tol::PARAM {
        violations.push(Violation::AlphaSum { sum: alpha_sum });
    }
    let beta_sum: f64 = beta.iter().sum();
    if beta_sum.abs() > tol::PARAM {
        violations.push(Violation::BetaSum { sum: beta_sum });
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let delta = gamma[(i, j)] - gamma[(j, i)];
            if delta.abs() > tol::PARAM {
                violations.push(Violation::GammaAsymmetric {
                    row: i,
                    col: j,
                    delta,
                });
            }
        }
    }
    for i in 0..k {
        let row_sum: f64 = (0..k).map(|j| gamma[(i, j)]).sum();
        if row_sum.abs() > tol::PARAM {
            violations.push(Violation::GammaRowSum { row: i, sum: row_sum });
        }
        let col_sum: f64 = (0..k).map(|j| gamma[(j, i)]).sum();
        if col_sum.abs() > tol::PARAM {
            violations.push(Violation::GammaColSum { col: i, sum: col_sum });
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(ParamError::Constraints(violations))
    }
}

impl AidsParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, gamma: DMatrix<f64>) -> Result<Self, ParamError> {
        validate_params(&alpha, &beta, &gamma)?;
        Ok(Self { alpha, beta, gamma })
    }

    /// Builds parameters from a row-major price-coefficient block, for
    /// callers without a matrix type.
    pub fn from_row_major(
        alpha: Vec<f64>,
        beta: Vec<f64>,
        gamma: &[f64],
    ) -> Result<Self, ParamError> {
        let goods = alpha.len();
        if gamma.len() != goods * goods {
            return Err(ParamError::Shape {
                alpha: goods,
                beta: beta.len(),
                rows: if goods > 0 { gamma.len() / goods } else { 0 },
                cols: goods.min(gamma.len()),
            });
        }
        Self::new(alpha, beta, DMatrix::from_row_slice(goods, goods, gamma))
    }

    pub fn goods(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn is_homothetic(&self) -> bool {
        self.beta.iter().all(|b| b.abs() <= tol::PARAM)
    }

    fn check_point(&self, prices: &[f64], income: f64) -> Result<(), EvalError> {
        if prices.len() != self.goods() {
            return Err(EvalError::InvalidPoint(format!(
                "expected {} prices, got {}",
                self.goods(),
                prices.len()
            )));
        }
        if let Some(i) = prices.iter().position(|p| !p.is_finite() || *p <= 0.0) {
            return Err(EvalError::InvalidPoint(format!(
                "price p_{} = {} must be positive and finite",
                i + 1,
                prices[i]
            )));
        }
        if !income.is_finite() || income <= 0.0 {
            return Err(EvalError::InvalidPoint(format!(
                "income {income} must be positive and finite"
            )));
        }
        Ok(())
    }

    /// Base shares `alpha_i + sum_j gamma_ij ln p_j`, the shares net of the
    /// income term.  These also equal `p_j` times the price gradient of the
    /// log price index.
    fn base_shares(&self, ln_p: &[f64]) -> Vec<f64> {
        let k = self.goods();
        (0..k)
            .map(|i| {
                let mut s = self.alpha[i];
                for j in 0..k {
                    s += self.gamma[(i, j)] * ln_p[j];
                }
                s
            })
            .collect()
    }

    /// Log translog price index `ln P`.
    pub fn ln_price_index(&self, prices: &[f64]) -> Result<f64, EvalError> {
        self.check_point(prices, 1.0)?;
        let ln_p: Vec<f64> = prices.iter().map(|p| p.ln()).collect();
        Ok(self.ln_price_index_from(&ln_p))
    }

    fn ln_price_index_from(&self, ln_p: &[f64]) -> f64 {
        let k = self.goods();
        let mut value = 0.0;
        for i in 0..k {
            value += self.alpha[i] * ln_p[i];
            for j in 0..k {
                value += 0.5 * self.gamma[(i, j)] * ln_p[i] * ln_p[j];
            }
        }
        value
    }

    /// Translog price index `P`.
    pub fn price_index(&self, prices: &[f64]) -> Result<f64, EvalError> {
        Ok(self.ln_price_index(prices)?.exp())
    }

    /// Budget shares at a point, without the range check applied by
    /// [`AidsParams::demand`].
    pub fn shares(&self, prices: &[f64], income: f64) -> Result<Vec<f64>, EvalError> {
        self.check_point(prices, income)?;
        let ln_p: Vec<f64> = prices.iter().map(|p| p.ln()).collect();
        let ln_real = income.ln() - self.ln_price_index_from(&ln_p);
        let base = self.base_shares(&ln_p);
        Ok((0..self.goods())
            .map(|i| base[i] + self.beta[i] * ln_real)
            .collect())
    }

    /// Marshallian demand `x_i = w_i I / p_i`.  Errors when any share falls
    /// outside `[0, 1]`, listing the offending shares.
    pub fn demand(&self, prices: &[f64], income: f64) -> Result<Vec<f64>, EvalError> {
        let shares = self.shares(prices, income)?;
        let bad: Vec<(usize, f64)> = shares
            .iter()
            .enumerate()
            .filter(|(_, w)| **w < 0.0 || **w > 1.0)
            .map(|(i, w)| (i, *w))
            .collect();
        if !bad.is_empty() {
            return Err(EvalError::UndefinedDemand(bad));
        }
        Ok(shares
            .iter()
            .zip(prices)
            .map(|(w, p)| w * income / p)
            .collect())
    }

    /// First income derivatives `dx_i/dI = (w_i + beta_i) / p_i`.
    pub fn income_derivative(&self, prices: &[f64], income: f64) -> Result<Vec<f64>, EvalError> {
        let shares = self.shares(prices, income)?;
        Ok((0..self.goods())
            .map(|i| (shares[i] + self.beta[i]) / prices[i])
            .collect())
    }

    /// Second income derivatives `d2x_i/dI2 = beta_i / (I p_i)`.
    pub fn income_second_derivative(
        &self,
        prices: &[f64],
        income: f64,
    ) -> Result<Vec<f64>, EvalError> {
        self.check_point(prices, income)?;
        Ok((0..self.goods())
            .map(|i| self.beta[i] / (income * prices[i]))
            .collect())
    }

    /// Marshallian price Jacobian `dx_i/dp_j`.
    pub fn price_jacobian(&self, prices: &[f64], income: f64) -> Result<DMatrix<f64>, EvalError> {
        self.check_point(prices, income)?;
        let k = self.goods();
        let ln_p: Vec<f64> = prices.iter().map(|p| p.ln()).collect();
        let base = self.base_shares(&ln_p);
        let ln_real = income.ln() - self.ln_price_index_from(&ln_p);
        let shares: Vec<f64> = (0..k).map(|i| base[i] + self.beta[i] * ln_real).collect();
        let mut jac = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let mut v = self.gamma[(i, j)] - self.beta[i] * base[j];
                if i == j {
                    v -= shares[i];
                }
                jac[(i, j)] = v * income / (prices[i] * prices[j]);
            }
        }
        Ok(jac)
    }

    /// Slutsky substitution matrix in quantity form,
    /// `S_ij = dx_i/dp_j + x_j dx_i/dI`.  Closed form:
    /// `S_ij = (I/(p_i p_j)) (gamma_ij + w_i w_j + beta_i beta_j ln(I/P) - delta_ij w_i)`.
    pub fn slutsky(&self, prices: &[f64], income: f64) -> Result<DMatrix<f64>, EvalError> {
        self.check_point(prices, income)?;
        let k = self.goods();
        let ln_p: Vec<f64> = prices.iter().map(|p| p.ln()).collect();
        let base = self.base_shares(&ln_p);
        let ln_real = income.ln() - self.ln_price_index_from(&ln_p);
        let shares: Vec<f64> = (0..k).map(|i| base[i] + self.beta[i] * ln_real).collect();
        let mut s = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let mut v = self.gamma[(i, j)]
                    + shares[i] * shares[j]
                    + self.beta[i] * self.beta[j] * ln_real;
                if i == j {
                    v -= shares[i];
                }
                s[(i, j)] = v * income / (prices[i] * prices[j]);
            }
        }
        Ok(s)
    }

    /// Slutsky substitution matrix in share form,
    /// `Sw_ij = dw_i/dp_j + x_j dw_i/dI = (gamma_ij + beta_i beta_j ln(I/P)) / p_j`.
    pub fn share_slutsky(&self, prices: &[f64], income: f64) -> Result<DMatrix<f64>, EvalError> {
        self.check_point(prices, income)?;
        let ln_p: Vec<f64> = prices.iter().map(|p| p.ln()).collect();
        let ln_real = income.ln() - self.ln_price_index_from(&ln_p);
        let k = self.goods();
        let mut s = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                s[(i, j)] =
                    (self.gamma[(i, j)] + self.beta[i] * self.beta[j] * ln_real) / prices[j];
            }
        }
        Ok(s)
    }
}

/// How the sampler draws the income-response vector `beta`.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaLaw {
    Zero,
    /// Each coordinate uniform on `[-max, max]`, then demeaned to sum zero.
    Uniform { max: f64 },
    /// Root-mean-square magnitude log-uniform on `[lo, hi]`, applied to a
    /// random zero-sum direction.  The RMS of the result equals the drawn
    /// magnitude exactly, which makes restriction norms of such draws spread
    /// evenly across decades.
    LogUniform { lo: f64, hi: f64 },
}

impl fmt::Display for BetaLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaLaw::Zero => write!(f, "zero"),
            BetaLaw::Uniform { max } => write!(f, "uniform({max})"),
            BetaLaw::LogUniform { lo, hi } => write!(f, "log-uniform({lo},{hi})"),
        }
    }
}

/// How the sampler scales the price-response matrix `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaLaw {
    Zero,
    /// Largest `|gamma_ij|` equals `scale` exactly.
    Fixed { scale: f64 },
    /// Largest `|gamma_ij|` log-uniform on `[lo, hi]`, spreading
    /// price-response magnitudes across decades.
    LogUniform { lo: f64, hi: f64 },
}

impl fmt::Display for GammaLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaLaw::Zero => write!(f, "zero"),
            GammaLaw::Fixed { scale } => write!(f, "fixed({scale})"),
            GammaLaw::LogUniform { lo, hi } => write!(f, "log-uniform({lo},{hi})"),
        }
    }
}

/// Configuration for [`sample_params`].
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub goods: usize,
    pub price_lo: f64,
    pub price_hi: f64,
    pub income: f64,
    pub beta: BetaLaw,
    pub gamma: GammaLaw,
    /// Minimum distance of every probe share from 0 and 1.
    pub share_margin: f64,
    pub max_attempts: usize,
}

impl SamplerConfig {
    pub fn new(goods: usize) -> Self {
        Self {
            goods,
            price_lo: 0.5,
            price_hi: 2.0,
            income: 10.0,
            beta: BetaLaw::Uniform { max: 0.1 },
            gamma: GammaLaw::Fixed { scale: 0.1 },
            share_margin: 0.02,
            max_attempts: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("no admissible draw after {attempts} attempts; last failure: {last}")]
    Exhausted { attempts: usize, last: String },
}

fn check_sampler_config(cfg: &SamplerConfig) -> Result<(), SampleError> {
    if cfg.goods < 2 {
        return Err(SampleError::Config("need at least two goods".into()));
    }
    if !(cfg.price_lo > 0.0 && cfg.price_hi > cfg.price_lo) {
        return Err(SampleError::Config(format!(
            "price box [{}, {}] must be positive and ordered",
            cfg.price_lo, cfg.price_hi
        )));
    }
    if !(cfg.income > 0.0) {
        return Err(SampleError::Config("income must be positive".into()));
    }
    if let BetaLaw::LogUniform { lo, hi } = cfg.beta {
        if !(lo > 0.0 && hi >= lo) {
            return Err(SampleError::Config(format!(
                "log-uniform beta bounds [{lo}, {hi}] must be positive and ordered"
            )));
        }
    }
    if let GammaLaw::LogUniform { lo, hi } = cfg.gamma {
        if !(lo > 0.0 && hi >= lo) {
            return Err(SampleError::Config(format!(
                "log-uniform gamma bounds [{lo}, {hi}] must be positive and ordered"
            )));
        }
    }
    Ok(())
}

fn draw_alpha<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        if sum > 1e-6 {
            return raw.iter().map(|v| v / sum).collect();
        }
    }
}

/// Centers a symmetric matrix so that every row and column sums to zero,
/// either globally or block-by-block for a two-group partition.
pub(crate) fn center_gamma(raw: &DMatrix<f64>, groups: Option<&Groups>) -> DMatrix<f64> {
    let k = raw.nrows();
    let blocks: Vec<Vec<usize>> = match groups {
        None => vec![(0..k).collect()],
        Some(g) => vec![g.first().to_vec(), g.second().to_vec()],
    };
    let mut out = DMatrix::zeros(k, k);
    for block in &blocks {
        let m = block.len();
        if m == 0 {
            continue;
        }
        // P G P with P = I - J/m restricted to the block.
        let mut sub = DMatrix::zeros(m, m);
        for (a, &i) in block.iter().enumerate() {
            for (b, &j) in block.iter().enumerate() {
                sub[(a, b)] = raw[(i, j)];
            }
        }
        let row_means: Vec<f64> = (0..m).map(|a| sub.row(a).sum() / m as f64).collect();
        let total = row_means.iter().sum::<f64>() / m as f64;
        for (a, &i) in block.iter().enumerate() {
            for (b, &j) in block.iter().enumerate() {
                out[(i, j)] = sub[(a, b)] - row_means[a] - row_means[b] + total;
            }
        }
    }
    out
}

fn draw_gamma<R: Rng>(
    k: usize,
    groups: Option<&Groups>,
    law: &GammaLaw,
    attenuation: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    let scale = match law {
        GammaLaw::Zero => return DMatrix::zeros(k, k),
        GammaLaw::Fixed { scale } => scale * attenuation,
        GammaLaw::LogUniform { lo, hi } => {
            let magnitude = if hi > lo {
                (rng.random_range(lo.ln()..hi.ln())).exp()
            } else {
                *lo
            };
            magnitude * attenuation
        }
    };
    let mut raw = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = rng.random_range(-1.0..1.0);
            raw[(i, j)] = v;
            raw[(j, i)] = v;
        }
    }
    let mut centered = center_gamma(&raw, groups);
    let max_abs = centered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs > 1e-12 && scale > 0.0 {
        centered *= scale / max_abs;
    } else if scale == 0.0 {
        centered *= 0.0;
    }
    centered
}

fn draw_beta<R: Rng>(k: usize, law: &BetaLaw, attenuation: f64, rng: &mut R) -> Vec<f64> {
    match law {
        BetaLaw::Zero => vec![0.0; k],
        BetaLaw::Uniform { max } => {
            let raw: Vec<f64> = (0..k)
                .map(|_| rng.random_range(-max..=*max) * attenuation)
                .collect();
            let mean: f64 = raw.iter().sum::<f64>() / k as f64;
            raw.iter().map(|v| v - mean).collect()
        }
        BetaLaw::LogUniform { lo, hi } => {
            let magnitude = if hi > lo {
                (rng.random_range(lo.ln()..hi.ln())).exp() * attenuation
            } else {
                *lo * attenuation
            };
            loop {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mean: f64 = raw.iter().sum::<f64>() / k as f64;
                let dir: Vec<f64> = raw.iter().map(|v| v - mean).collect();
                let rms = (dir.iter().map(|v| v * v).sum::<f64>() / k as f64).sqrt();
                if rms > 1e-9 {
                    return dir.iter().map(|v| v * magnitude / rms).collect();
                }
            }
        }
    }
}

/// Probe points used to screen a draw: the box corners (up to 32), the box
/// center, and 16 interior points drawn from the sampler's own stream.
fn probe_points<R: Rng>(cfg: &SamplerConfig, rng: &mut R) -> Vec<Vec<f64>> {
    let k = cfg.goods;
    let mut points = Vec::new();
    if k <= 5 {
        for mask in 0..(1usize << k) {
            let p: Vec<f64> = (0..k)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        cfg.price_hi
                    } else {
                        cfg.price_lo
                    }
                })
                .collect();
            points.push(p);
        }
    } else {
        for _ in 0..32 {
            let p: Vec<f64> = (0..k)
                .map(|_| {
                    if rng.random_range(0.0..1.0) < 0.5 {
                        cfg.price_lo
                    } else {
                        cfg.price_hi
                    }
                })
                .collect();
            points.push(p);
        }
    }
    let mid = (cfg.price_lo * cfg.price_hi).sqrt();
    points.push(vec![mid; k]);
    let (lo_ln, hi_ln) = (cfg.price_lo.ln(), cfg.price_hi.ln());
    for _ in 0..16 {
        let p: Vec<f64> = (0..k)
            .map(|_| rng.random_range(lo_ln..hi_ln).exp())
            .collect();
        points.push(p);
    }
    points
}

fn admissible_at(params: &AidsParams, prices: &[f64], income: f64, margin: f64) -> Result<(), String> {
    let shares = params
        .shares(prices, income)
        .map_err(|e| format!("share evaluation failed: {e}"))?;
    for (i, w) in shares.iter().enumerate() {
        if *w < margin || *w > 1.0 - margin {
            return Err(format!("share w_{} = {w} outside margin {margin}", i + 1));
        }
    }
    let s = params
        .slutsky(prices, income)
        .map_err(|e| format!("slutsky evaluation failed: {e}"))?;
    let sym = (&s + s.transpose()) * 0.5;
    let max_abs = sym.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eig = sym.symmetric_eigenvalues();
    let max_eig = eig.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    if max_eig > tol::NSD_PROBE * max_abs.max(1.0) {
        return Err(format!("slutsky not negative semidefinite: eigenvalue {max_eig}"));
    }
    Ok(())
}

/// Samples parameters constrained to a preference class by rejection.
///
/// Each attempt draws fresh `alpha`, `gamma` and `beta` and accepts only if
/// every probe point has interior shares (within the configured margin) and a
/// negative semidefinite Slutsky matrix.  The draw scale is attenuated by 0.7
/// after every eighth failed attempt so the loop terminates on hostile
/// configurations.
pub fn sample_params<R: Rng>(
    cfg: &SamplerConfig,
    class: &ClassTag,
    rng: &mut R,
) -> Result<AidsParams, SampleError> {
    check_sampler_config(cfg)?;
    if let Some(groups) = class.groups() {
        if groups.goods() != cfg.goods {
            return Err(SampleError::Config(format!(
                "groups {groups} partition {} goods, sampler has {}",
                groups.goods(),
                cfg.goods
            )));
        }
    }
    let mut last = String::from("no attempts made");
    for attempt in 0..cfg.max_attempts {
        let attenuation = 0.7f64.powi((attempt / 8) as i32);
        let alpha = draw_alpha(cfg.goods, rng);
        let gamma = draw_gamma(cfg.goods, class.groups(), &cfg.gamma, attenuation, rng);
        let beta = if class.forces_beta_zero() {
            vec![0.0; cfg.goods]
        } else {
            draw_beta(cfg.goods, &cfg.beta, attenuation, rng)
        };
        let params = match AidsParams::new(alpha, beta, gamma) {
            Ok(p) => p,
            Err(e) => {
                last = format!("constructed draw failed validation: {e}");
                continue;
            }
        };
        let probes = probe_points(cfg, rng);
        let mut ok = true;
        for prices in &probes {
            if let Err(msg) = admissible_at(&params, prices, cfg.income, cfg.share_margin) {
                last = msg;
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(params);
        }
    }
    Err(SampleError::Exhausted {
        attempts: cfg.max_attempts,
        last,
    })
}
