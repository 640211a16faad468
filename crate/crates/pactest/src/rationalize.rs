//! Rationalizing demand for observed datasets.
//!
//! A dataset is tested through the member of the demand family that best
//! explains it: budget shares are regressed on log prices and Stone-deflated
//! log income, and the per-good estimates are projected onto the parameter
//! constraint set (adding-up, zero-sum income responses, symmetric
//! double-centered price terms).  The projected system is a valid demand
//! whose restriction values the engine evaluates at the observed points.

use nalgebra::{DMatrix, DVector};

use crate::aids::{center_gamma, AidsParams, ParamError};
use crate::dataset::Dataset;

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("need at least {need} observations to fit {goods} goods, have {have}")]
    TooFewRows {
        need: usize,
        have: usize,
        goods: usize,
    },
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Fits the rationalizing demand system to a dataset.
pub fn rationalizing_aids(data: &Dataset) -> Result<AidsParams, FitError> {
    let k = data.goods();
    let n = data.len();
    let regressors = k + 2;
    if n < regressors {
        return Err(FitError::TooFewRows {
            need: regressors,
            have: n,
            goods: k,
        });
    }

    // Design matrix: intercept, log prices, Stone-deflated log income.
    let mut design = DMatrix::zeros(n, regressors);
    let mut shares = DMatrix::zeros(n, k);
    for (t, obs) in data.observations().iter().enumerate() {
        let ln_p: Vec<f64> = obs.prices.iter().map(|p| p.ln()).collect();
        let mut stone = 0.0;
        for i in 0..k {
            let w = obs.prices[i] * obs.quantities[i] / obs.income;
            shares[(t, i)] = w;
            stone += w * ln_p[i];
        }
        design[(t, 0)] = 1.0;
        for i in 0..k {
            design[(t, 1 + i)] = ln_p[i];
        }
        design[(t, k + 1)] = obs.income.ln() - stone;
    }

    let svd = design.svd(true, true);
    let mut alpha = vec![0.0; k];
    let mut beta = vec![0.0; k];
    let mut raw_gamma = DMatrix::zeros(k, k);
    for i in 0..k {
        let y = DVector::from_iterator(n, (0..n).map(|t| shares[(t, i)]));
        let coef = svd
            .solve(&y, 1e-12)
            .map_err(|e| FitError::Degenerate(e.to_string()))?;
        alpha[i] = coef[0];
        for j in 0..k {
            raw_gamma[(i, j)] = coef[1 + j];
        }
        beta[i] = coef[k + 1];
    }

    // Projection onto the constraint set.
    let alpha_shift = (1.0 - alpha.iter().sum::<f64>()) / k as f64;
    for a in alpha.iter_mut() {
        *a += alpha_shift;
    }
    let beta_mean = beta.iter().sum::<f64>() / k as f64;
    for b in beta.iter_mut() {
        *b -= beta_mean;
    }
    let sym = (&raw_gamma + raw_gamma.transpose()) * 0.5;
    let gamma = center_gamma(&sym, None);

    Ok(AidsParams::new(alpha, beta, gamma)?)
}
