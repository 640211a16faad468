//! Demand calculus over pluggable oracles: income derivatives, price
//! Jacobians, and Slutsky matrices in quantity and share form.
//!
//! An oracle that exposes AIDS parameters is differentiated in closed form;
//! anything else falls back to central finite differences with the step
//! policy in [`crate::tol`].  First derivatives use a two-point stencil;
//! second income derivatives use a five-point stencil with a wider step so
//! truncation and roundoff are balanced near the 1e-5 relative target.

use nalgebra::DMatrix;

use crate::aids::{AidsParams, BudgetPoint, EvalError};
use crate::tol;

/// A demand system the calculus and test layers can query.
pub trait DemandOracle: Sync {
    fn goods(&self) -> usize;
    fn demand(&self, prices: &[f64], income: f64) -> Result<Vec<f64>, EvalError>;
    /// Closed-form parameters, when the oracle has them.
    fn aids(&self) -> Option<&AidsParams> {
        None
    }
}

impl DemandOracle for AidsParams {
    fn goods(&self) -> usize {
        AidsParams::goods(self)
    }

    fn demand(&self, prices: &[f64], income: f64) -> Result<Vec<f64>, EvalError> {
        AidsParams::demand(self, prices, income)
    }

    fn aids(&self) -> Option<&AidsParams> {
        Some(self)
    }
}

/// Black-box demand oracle built from a closure.
pub struct FnOracle<F> {
    goods: usize,
    f: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>, EvalError> + Sync,
{
    pub fn new(goods: usize, f: F) -> Self {
        Self { goods, f }
    }
}

impl<F> DemandOracle for FnOracle<F>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>, EvalError> + Sync,
{
    fn goods(&self) -> usize {
        self.goods
    }

    fn demand(&self, prices: &[f64], income: f64) -> Result<Vec<f64>, EvalError> {
        (self.f)(prices, income)
    }
}

/// Derivative backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Closed forms when available, finite differences otherwise.
    #[default]
    Auto,
    /// Closed forms only; errors on black-box oracles.
    Analytic,
    FiniteDifference,
}

fn analytic_params<'a>(
    oracle: &'a dyn DemandOracle,
    method: Method,
) -> Result<Option<&'a AidsParams>, EvalError> {
    match method {
        Method::Analytic => oracle
            .aids()
            .map(Some)
            .ok_or(EvalError::Unsupported("closed forms need AIDS parameters")),
        Method::Auto => Ok(oracle.aids()),
        Method::FiniteDifference => Ok(None),
    }
}

/// Budget shares implied by the oracle's demand, `w_i = p_i x_i / I`.
pub fn shares_of(
    oracle: &dyn DemandOracle,
    prices: &[f64],
    income: f64,
) -> Result<Vec<f64>, EvalError> {
    let x = oracle.demand(prices, income)?;
    Ok(x.iter()
        .zip(prices)
        .map(|(x, p)| p * x / income)
        .collect())
}

fn fd_income_first<G>(g: &G, prices: &[f64], income: f64) -> Result<Vec<f64>, EvalError>
where
    G: Fn(&[f64], f64) -> Result<Vec<f64>, EvalError>,
{
    let mut h = (tol::INCOME_STEP_REL * income).max(tol::INCOME_STEP_MIN);
    h = h.min(0.5 * income);
    let hi = g(prices, income + h)?;
    let lo = g(prices, income - h)?;
    Ok(hi
        .iter()
        .zip(&lo)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

fn fd_income_second<G>(g: &G, prices: &[f64], income: f64) -> Result<Vec<f64>, EvalError>
where
    G: Fn(&[f64], f64) -> Result<Vec<f64>, EvalError>,
{
    let mut h = (tol::INCOME2_STEP_REL * income).max(tol::INCOME2_STEP_MIN);
    h = h.min(0.25 * income);
    let p2 = g(prices, income + 2.0 * h)?;
    let p1 = g(prices, income + h)?;
    let z = g(prices, income)?;
    let m1 = g(prices, income - h)?;
    let m2 = g(prices, income - 2.0 * h)?;
    Ok((0..z.len())
        .map(|i| (-p2[i] + 16.0 * p1[i] - 30.0 * z[i] + 16.0 * m1[i] - m2[i]) / (12.0 * h * h))
        .collect())
}

fn fd_price_jacobian<G>(
    g: &G,
    goods: usize,
    prices: &[f64],
    income: f64,
) -> Result<DMatrix<f64>, EvalError>
where
    G: Fn(&[f64], f64) -> Result<Vec<f64>, EvalError>,
{
    let mut jac = DMatrix::zeros(goods, goods);
    let mut work = prices.to_vec();
    for j in 0..goods {
        let h = tol::PRICE_STEP_REL * prices[j];
        work[j] = prices[j] + h;
        let hi = g(&work, income)?;
        work[j] = prices[j] - h;
        let lo = g(&work, income)?;
        work[j] = prices[j];
        for i in 0..goods {
            jac[(i, j)] = (hi[i] - lo[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// First income derivatives `dx/dI`.
pub fn income_derivative(
    oracle: &dyn DemandOracle,
    prices: &[f64],
    income: f64,
    method: Method,
) -> Result<Vec<f64>, EvalError> {
    if let Some(params) = analytic_params(oracle, method)? {
        return params.income_derivative(prices, income);
    }
    fd_income_first(&|p: &[f64], i: f64| oracle.demand(p, i), prices, income)
}

/// Second income derivatives `d2x/dI2`.
pub fn income_second_derivative(
    oracle: &dyn DemandOracle,
    prices: &[f64],
    income: f64,
    method: Method,
) -> Result<Vec<f64>, EvalError> {
    if let Some(params) = analytic_params(oracle, method)? {
        return params.income_second_derivative(prices, income);
    }
    fd_income_second(&|p: &[f64], i: f64| oracle.demand(p, i), prices, income)
}

/// Marshallian price Jacobian `dx_i/dp_j`.
pub fn price_jacobian(
    oracle: &dyn DemandOracle,
    prices: &[f64],
    income: f64,
    method: Method,
) -> Result<DMatrix<f64>, EvalError> {
    if let Some(params) = analytic_params(oracle, method)? {
        return params.price_jacobian(prices, income);
    }
    fd_price_jacobian(
        &|p: &[f64], i: f64| oracle.demand(p, i),
        oracle.goods(),
        prices,
        income,
    )
}

/// Quantity-form Slutsky matrix `S_ij = dx_i/dp_j + x_j dx_i/dI`.
pub fn slutsky(
    oracle: &dyn DemandOracle,
    prices: &[f64],
    income: f64,
    method: Method,
) -> Result<DMatrix<f64>, EvalError> {
    if let Some(params) = analytic_params(oracle, method)? {
        return params.slutsky(prices, income);
    }
    let g = |p: &[f64], i: f64| oracle.demand(p, i);
    let x = oracle.demand(prices, income)?;
    let jac = fd_price_jacobian(&g, oracle.goods(), prices, income)?;
    let di = fd_income_first(&g, prices, income)?;
    let k = oracle.goods();
    let mut s = jac;
    for i in 0..k {
        for j in 0..k {
            s[(i, j)] += di[i] * x[j];
        }
    }
    Ok(s)
}

/// Share-form Slutsky matrix `Sw_ij = dw_i/dp_j + x_j dw_i/dI`.
pub fn share_slutsky(
    oracle: &dyn DemandOracle,
    prices: &[f64],
    income: f64,
    method: Method,
) -> Result<DMatrix<f64>, EvalError> {
    if let Some(params) = analytic_params(oracle, method)? {
        return params.share_slutsky(prices, income);
    }
    let g = |p: &[f64], i: f64| -> Result<Vec<f64>, EvalError> {
        let x = oracle.demand(p, i)?;
        Ok(x.iter().zip(p).map(|(x, p)| p * x / i).collect())
    };
    let x = oracle.demand(prices, income)?;
    let jac = fd_price_jacobian(&g, oracle.goods(), prices, income)?;
    let di = fd_income_first(&g, prices, income)?;
    let k = oracle.goods();
    let mut s = jac;
    for i in 0..k {
        for j in 0..k {
            s[(i, j)] += di[i] * x[j];
        }
    }
    Ok(s)
}

/// Largest share response to income over the probe points, the Lipschitz
/// scale used by the sample-size rule.  Closed form `max_k |beta_k| / I` for
/// AIDS oracles, evaluated at the smallest probe income; finite differences
/// of the share map otherwise.
pub fn income_lipschitz(
    oracle: &dyn DemandOracle,
    points: &[BudgetPoint],
) -> Result<f64, EvalError> {
    if points.is_empty() {
        return Err(EvalError::InvalidPoint("no probe points".into()));
    }
    if let Some(params) = oracle.aids() {
        let beta_max = params.beta().iter().fold(0.0f64, |m, b| m.max(b.abs()));
        let income_min = points.iter().map(|p| p.income).fold(f64::INFINITY, f64::min);
        return Ok(beta_max / income_min);
    }
    let g = |p: &[f64], i: f64| -> Result<Vec<f64>, EvalError> {
        let x = oracle.demand(p, i)?;
        Ok(x.iter().zip(p).map(|(x, p)| p * x / i).collect())
    };
    let mut best = 0.0f64;
    for point in points {
        let dw = fd_income_first(&g, &point.prices, point.income)?;
        for v in dw {
            best = best.max(v.abs());
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn params() -> AidsParams {
        let mut gamma = DMatrix::zeros(3, 3);
        for (i, j, v) in [
            (0, 0, -0.06),
            (0, 1, 0.04),
            (0, 2, 0.02),
            (1, 1, -0.05),
            (1, 2, 0.01),
            (2, 2, -0.03),
        ] {
            gamma[(i, j)] = v;
            gamma[(j, i)] = v;
        }
        AidsParams::new(vec![0.25, 0.45, 0.3], vec![0.05, -0.02, -0.03], gamma).unwrap()
    }

    /// `|fd - analytic| <= rel (|analytic| + scale)` with `scale` the largest
    /// analytic magnitude, so zero entries are held to an absolute bound at
    /// the size of the object.
    fn assert_close(fd: &[f64], an: &[f64], rel: f64, what: &str) {
        let scale = an.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (i, (f, a)) in fd.iter().zip(an).enumerate() {
            assert!(
                (f - a).abs() <= rel * (a.abs() + scale),
                "{what}[{i}]: fd = {f}, analytic = {a}"
            );
        }
    }

    #[test]
    fn income_derivative_fd_matches_closed_form() {
        let p = params();
        let prices = [0.9, 1.4, 1.1];
        let income = 8.0;
        let an = income_derivative(&p, &prices, income, Method::Analytic).unwrap();
        let fd = income_derivative(&p, &prices, income, Method::FiniteDifference).unwrap();
        assert_close(&fd, &an, 1e-7, "dx/dI");
    }

    #[test]
    fn income_second_derivative_fd_matches_closed_form() {
        let p = params();
        let prices = [0.9, 1.4, 1.1];
        let income = 8.0;
        let an = income_second_derivative(&p, &prices, income, Method::Analytic).unwrap();
        let fd = income_second_derivative(&p, &prices, income, Method::FiniteDifference).unwrap();
        assert_close(&fd, &an, 1e-5, "d2x/dI2");
    }

    #[test]
    fn price_jacobian_fd_matches_closed_form() {
        let p = params();
        let prices = [0.9, 1.4, 1.1];
        let income = 8.0;
        let an = price_jacobian(&p, &prices, income, Method::Analytic).unwrap();
        let fd = price_jacobian(&p, &prices, income, Method::FiniteDifference).unwrap();
        assert_close(fd.as_slice(), an.as_slice(), 1e-6, "dx/dp");
    }

    #[test]
    fn slutsky_fd_matches_closed_form_and_is_symmetric() {
        let p = params();
        let prices = [0.9, 1.4, 1.1];
        let income = 8.0;
        let an = slutsky(&p, &prices, income, Method::Analytic).unwrap();
        let fd = slutsky(&p, &prices, income, Method::FiniteDifference).unwrap();
        assert_close(fd.as_slice(), an.as_slice(), 1e-6, "slutsky");
        for i in 0..3 {
            for j in 0..3 {
                assert!((an[(i, j)] - an[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn share_slutsky_fd_matches_closed_form() {
        let p = params();
        let prices = [0.9, 1.4, 1.1];
        let income = 8.0;
        let an = share_slutsky(&p, &prices, income, Method::Analytic).unwrap();
        let fd = share_slutsky(&p, &prices, income, Method::FiniteDifference).unwrap();
        assert_close(fd.as_slice(), an.as_slice(), 1e-6, "share slutsky");
    }

    #[test]
    fn black_box_oracle_uses_finite_differences_under_auto() {
        let p = params();
        let clone = p.clone();
        let oracle = FnOracle::new(3, move |prices: &[f64], income: f64| {
            clone.demand(prices, income)
        });
        let prices = [1.0, 1.2, 0.8];
        let income = 6.0;
        let an = slutsky(&p, &prices, income, Method::Analytic).unwrap();
        let auto = slutsky(&oracle, &prices, income, Method::Auto).unwrap();
        assert_close(auto.as_slice(), an.as_slice(), 1e-6, "black-box slutsky");
    }

    #[test]
    fn analytic_method_on_black_box_is_unsupported() {
        let oracle = FnOracle::new(2, |_: &[f64], _: f64| Ok(vec![1.0, 1.0]));
        let err = income_derivative(&oracle, &[1.0, 1.0], 2.0, Method::Analytic).unwrap_err();
        assert!(matches!(err, EvalError::Unsupported(_)));
    }

    #[test]
    fn income_lipschitz_matches_beta_over_income() {
        let p = params();
        let points = vec![
            BudgetPoint::new(vec![1.0, 1.0, 1.0], 10.0),
            BudgetPoint::new(vec![0.7, 1.3, 1.0], 5.0),
        ];
        let l = income_lipschitz(&p, &points).unwrap();
        assert!((l - 0.05 / 5.0).abs() < 1e-14);
        let clone = p.clone();
        let black = FnOracle::new(3, move |pr: &[f64], i: f64| clone.demand(pr, i));
        let l_fd = income_lipschitz(&black, &points).unwrap();
        assert!((l_fd - l).abs() <= 1e-6 * (1.0 + l));
    }
}
