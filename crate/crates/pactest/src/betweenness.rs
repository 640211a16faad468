//! Betweenness restriction for demand over state-contingent claims.
//!
//! For expected-utility demand, the claim on a state `s` (other than the two
//! reference states) is pinned down by the first two claims and the price
//! ratio `p_s / p_1`: moving through budget points while holding `x_1`, `x_2`
//! and that ratio fixed cannot move `x_s`.  The restriction evaluates the
//! largest response of `x_s` along the directions that keep all three fixed;
//! it vanishes under expected utility and is bounded away from zero for
//! demands that violate betweenness.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::aids::EvalError;
use crate::tol;

/// Budget problem over state-contingent claims: state probabilities, claim
/// prices, and income.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimEconomy {
    pub probs: Vec<f64>,
    pub prices: Vec<f64>,
    pub income: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BetweennessError {
    #[error("invalid economy: {0}")]
    InvalidEconomy(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("degenerate constraint system: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl ClaimEconomy {
    pub fn new(probs: Vec<f64>, prices: Vec<f64>, income: f64) -> Result<Self, BetweennessError> {
        let econ = Self {
            probs,
            prices,
            income,
        };
        econ.validate()?;
        Ok(econ)
    }

    pub fn states(&self) -> usize {
        self.probs.len()
    }

    fn validate(&self) -> Result<(), BetweennessError> {
        if self.probs.len() < 2 {
            return Err(BetweennessError::InvalidEconomy(
                "need at least two states".into(),
            ));
        }
        if self.prices.len() != self.probs.len() {
            return Err(BetweennessError::InvalidEconomy(format!(
                "{} probabilities but {} prices",
                self.probs.len(),
                self.prices.len()
            )));
        }
        if let Some(i) = self.probs.iter().position(|q| !q.is_finite() || *q <= 0.0) {
            return Err(BetweennessError::InvalidEconomy(format!(
                "probability pi_{} = {} must be positive",
                i + 1,
                self.probs[i]
            )));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BetweennessError::InvalidEconomy(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        if let Some(i) = self.prices.iter().position(|p| !p.is_finite() || *p <= 0.0) {
            return Err(BetweennessError::InvalidEconomy(format!(
                "price p_{} = {} must be positive",
                i + 1,
                self.prices[i]
            )));
        }
        if !self.income.is_finite() || self.income <= 0.0 {
            return Err(BetweennessError::InvalidEconomy(format!(
                "income {} must be positive",
                self.income
            )));
        }
        Ok(())
    }

    fn with_coordinates(&self, z: &[f64]) -> Self {
        Self {
            probs: self.probs.clone(),
            prices: z[..self.states()].to_vec(),
            income: z[self.states()],
        }
    }

    fn coordinates(&self) -> Vec<f64> {
        let mut z = self.prices.clone();
        z.push(self.income);
        z
    }
}

/// Demand over state-contingent claims.
pub trait ClaimOracle: Sync {
    fn demand(&self, econ: &ClaimEconomy) -> Result<Vec<f64>, EvalError>;
}

/// Closed-form demand of a CRRA expected-utility maximizer:
/// `x_s = (pi_s / p_s)^{1/rho} I / sum_t p_t (pi_t / p_t)^{1/rho}`.
pub fn crra_eu_demand(econ: &ClaimEconomy, rho: f64) -> Result<Vec<f64>, EvalError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(EvalError::InvalidPoint(format!(
            "relative risk aversion {rho} must be positive"
        )));
    }
    econ.validate()
        .map_err(|e| EvalError::InvalidPoint(e.to_string()))?;
    let weights: Vec<f64> = econ
        .probs
        .iter()
        .zip(&econ.prices)
        .map(|(q, p)| (q / p).powf(1.0 / rho))
        .collect();
    let denom: f64 = weights
        .iter()
        .zip(&econ.prices)
        .map(|(w, p)| w * p)
        .sum();
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(EvalError::Numeric(format!(
            "claim demand denominator {denom}"
        )));
    }
    Ok(weights.iter().map(|w| w * econ.income / denom).collect())
}

/// CRRA expected-utility oracle.
#[derive(Debug, Clone, Copy)]
pub struct CrraEuOracle {
    pub rho: f64,
}

impl ClaimOracle for CrraEuOracle {
    fn demand(&self, econ: &ClaimEconomy) -> Result<Vec<f64>, EvalError> {
        crra_eu_demand(econ, self.rho)
    }
}

/// Expected-utility demand with a betweenness-violating distortion: the claim
/// on `state` is rescaled by `1 + 0.05 sin(3 p_t)` where `t` is the other
/// state whose `|cos(3 p_t)|` is largest (so the distortion has a nonzero
/// price gradient at the evaluation point), then the bundle is pushed back
/// onto the budget line.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedEuOracle {
    pub rho: f64,
    pub state: usize,
}

impl ClaimOracle for PerturbedEuOracle {
    fn demand(&self, econ: &ClaimEconomy) -> Result<Vec<f64>, EvalError> {
        let mut x = crra_eu_demand(econ, self.rho)?;
        if self.state >= econ.states() {
            return Err(EvalError::InvalidPoint(format!(
                "perturbed state {} out of range",
                self.state + 1
            )));
        }
        let driver = econ
            .prices
            .iter()
            .enumerate()
            .filter(|(t, _)| *t != self.state)
            .max_by(|a, b| {
                let fa = (3.0 * a.1).cos().abs();
                let fb = (3.0 * b.1).cos().abs();
                fa.partial_cmp(&fb).expect("prices are finite")
            })
            .map(|(t, _)| t)
            .expect("at least two states");
        x[self.state] *= 1.0 + 0.05 * (3.0 * econ.prices[driver]).sin();
        let spent: f64 = econ.prices.iter().zip(&x).map(|(p, x)| p * x).sum();
        let scale = econ.income / spent;
        for v in x.iter_mut() {
            *v *= scale;
        }
        Ok(x)
    }
}

/// Probability-price ratio `k_s = (pi_1 / pi_s) (p_s / p_1)` against the
/// reference state (index 0).
pub fn k_ratio(econ: &ClaimEconomy, s: usize) -> Result<f64, BetweennessError> {
    econ.validate()?;
    if s == 0 || s >= econ.states() {
        return Err(BetweennessError::InvalidState(format!(
            "state {} must differ from the reference state and be in range",
            s + 1
        )));
    }
    Ok((econ.probs[0] / econ.probs[s]) * (econ.prices[s] / econ.prices[0]))
}

fn fd_step(scale: f64) -> f64 {
    tol::DIRECTION_STEP_REL * (1.0 + scale)
}

fn demand_at(
    oracle: &dyn ClaimOracle,
    econ: &ClaimEconomy,
    z: &[f64],
) -> Result<Vec<f64>, BetweennessError> {
    let shifted = econ.with_coordinates(z);
    shifted.validate()?;
    Ok(oracle.demand(&shifted)?)
}

/// Orthonormal directions in `(p, I)` space along which `x_1`, `x_2` and the
/// price ratio `p_s / p_1` are all fixed to first order.
pub fn constrained_directions(
    oracle: &dyn ClaimOracle,
    econ: &ClaimEconomy,
    s: usize,
) -> Result<Vec<Vec<f64>>, BetweennessError> {
    econ.validate()?;
    let states = econ.states();
    if states < 3 {
        return Err(BetweennessError::InvalidEconomy(
            "betweenness restriction needs at least three states".into(),
        ));
    }
    if s <= 1 || s >= states {
        return Err(BetweennessError::InvalidState(format!(
            "state {} must differ from the two reference states and be in range",
            s + 1
        )));
    }
    let z = econ.coordinates();
    let dim = states + 1;

    // Finite-difference gradients of x_1 and x_2 with respect to (p, I).
    let mut rows = vec![vec![0.0; dim]; 3];
    for j in 0..dim {
        let h = fd_step(z[j].abs());
        let mut hi = z.clone();
        hi[j] += h;
        let mut lo = z.clone();
        lo[j] -= h;
        let x_hi = demand_at(oracle, econ, &hi)?;
        let x_lo = demand_at(oracle, econ, &lo)?;
        rows[0][j] = (x_hi[0] - x_lo[0]) / (2.0 * h);
        rows[1][j] = (x_hi[1] - x_lo[1]) / (2.0 * h);
    }
    // Exact gradient of ln(p_s / p_1).
    rows[2][s] = 1.0 / econ.prices[s];
    rows[2][0] = -1.0 / econ.prices[0];

    for (idx, row) in rows.iter_mut().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-14 {
            return Err(BetweennessError::Degenerate(format!(
                "constraint row {} vanishes",
                idx + 1
            )));
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }

    // Null space of the constraint rows via the Gram matrix spectrum.
    let mut gram: DMatrix<f64> = DMatrix::zeros(dim, dim);
    for row in &rows {
        for a in 0..dim {
            for b in 0..dim {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    let eigen = SymmetricEigen::new(gram);
    let max_eig = eigen
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v: &f64| m.max(v.abs()));
    let mut directions = Vec::new();
    for (idx, lambda) in eigen.eigenvalues.iter().enumerate() {
        if lambda.abs() <= tol::NULL_SPACE_EIG * max_eig.max(1.0) {
            directions.push(eigen.eigenvectors.column(idx).iter().copied().collect());
        }
    }
    if directions.is_empty() {
        return Err(BetweennessError::Degenerate(
            "no null directions found".into(),
        ));
    }
    Ok(directions)
}

/// Betweenness restriction at one economy: the largest absolute directional
/// derivative of `x_s` along the constrained directions.
pub fn r_betweenness(
    oracle: &dyn ClaimOracle,
    econ: &ClaimEconomy,
    s: usize,
) -> Result<f64, BetweennessError> {
    let directions = constrained_directions(oracle, econ, s)?;
    let z = econ.coordinates();
    let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = fd_step(scale);
    let mut worst = 0.0f64;
    for v in &directions {
        let hi: Vec<f64> = z.iter().zip(v).map(|(z, v)| z + h * v).collect();
        let lo: Vec<f64> = z.iter().zip(v).map(|(z, v)| z - h * v).collect();
        let x_hi = demand_at(oracle, econ, &hi)?;
        let x_lo = demand_at(oracle, econ, &lo)?;
        worst = worst.max(((x_hi[s] - x_lo[s]) / (2.0 * h)).abs());
    }
    Ok(worst)
}

/// Root-mean-square of the betweenness restriction over economies.
pub fn betweenness_norm(
    oracle: &dyn ClaimOracle,
    economies: &[ClaimEconomy],
    s: usize,
) -> Result<f64, BetweennessError> {
    if economies.is_empty() {
        return Err(BetweennessError::InvalidEconomy(
            "no economies supplied".into(),
        ));
    }
    let mut sum_sq = 0.0;
    for econ in economies {
        let r = r_betweenness(oracle, econ, s)?;
        sum_sq += r * r;
    }
    Ok((sum_sq / economies.len() as f64).sqrt())
}
