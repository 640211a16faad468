//! Functional restrictions characterizing preference classes, evaluated
//! pointwise on a demand oracle and aggregated into a root-mean-square
//! restriction norm.
//!
//! A demand lies in a class exactly when the class restriction vanishes at
//! every budget point, so the norm is the distance-from-class statistic the
//! test engine maps through a calibrated gamma table.

use std::fmt;

use crate::aids::{BudgetPoint, EvalError, Groups};
use crate::calculus::{
    income_derivative, income_second_derivative, price_jacobian, share_slutsky, slutsky,
    DemandOracle, Method,
};
use crate::tol;

/// Direction of a claimed cross-price relationship.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Complements,
    Substitutes,
}

/// The restriction to test a demand system against.
#[derive(Debug, Clone, PartialEq)]
pub enum RestrictionKind {
    /// Second income derivatives vanish on homothetic demands.  With
    /// `scaled`, each component is `-I p_k d2x_k/dI2`, the dimensionless
    /// income-response coefficient of the demand system (equal to `-beta_k`
    /// for closed-form oracles, hence independent of the point).
    Homothetic { scaled: bool },
    /// Cross-group Slutsky ratio equals the income-derivative ratio on
    /// weakly separable demands.  Defined for three goods with a singleton
    /// first group: `R = S_ia/S_ib - (dx_a/dI)/(dx_b/dI)` where `i` is the
    /// lone first-group good and `a`, `b` the second group.
    WeakSeparableRatio { groups: Groups },
    /// Cross-group share-form Slutsky terms vanish on homothetic weakly
    /// separable demands: `R` is the mean of `|Sw_ij|` over ordered
    /// cross-group pairs, divided by the number of goods.
    WeakSeparableHomothetic { groups: Groups },
    /// Sign restriction on one cross effect: the Marshallian `dx_i/dp_j`
    /// when `net` is false, the Slutsky `S_ij` when true.  The indicator is
    /// 0 when the sign matches the claim and 1 otherwise; magnitudes at or
    /// below [`tol::SIGN_BOUNDARY`] count as 1 and are annotated as boundary
    /// cases.
    Complementarity {
        i: usize,
        j: usize,
        relation: Relation,
        net: bool,
    },
}

impl RestrictionKind {
    /// Number of components the restriction produces per point.
    pub fn components(&self, goods: usize) -> usize {
        match self {
            RestrictionKind::Homothetic { .. } => goods,
            _ => 1,
        }
    }
}

impl fmt::Display for RestrictionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RestrictionKind::Homothetic { scaled: false } => write!(f, "homothetic"),
            RestrictionKind::Homothetic { scaled: true } => write!(f, "homothetic-scaled"),
            RestrictionKind::WeakSeparableRatio { groups } => {
                write!(f, "weak-separable-ratio[{groups}]")
            }
            RestrictionKind::WeakSeparableHomothetic { groups } => {
                write!(f, "weak-separable-homothetic[{groups}]")
            }
            RestrictionKind::Complementarity {
                i,
                j,
                relation,
                net,
            } => {
                let rel = match relation {
                    Relation::Complements => "complements",
                    Relation::Substitutes => "substitutes",
                };
                let form = if *net { "net" } else { "gross" };
                write!(f, "{form}-{rel}[{},{}]", i + 1, j + 1)
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RestrictionError {
    #[error("singular denominator {what} = {value}")]
    Singular { what: String, value: f64 },
    #[error("restriction not applicable: {0}")]
    InvalidKind(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no evaluation points supplied")]
    NoPoints,
    #[error("all {0} evaluation points were singular or undefined")]
    AllPointsSkipped(usize),
}

/// Restriction values at one point, with a flag for sign-test boundary cases.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEval {
    pub values: Vec<f64>,
    pub boundary: bool,
}

/// Evaluates the restriction at one budget point.
pub fn evaluate(
    oracle: &dyn DemandOracle,
    kind: &RestrictionKind,
    point: &BudgetPoint,
    method: Method,
) -> Result<PointEval, RestrictionError> {
    let prices = &point.prices;
    let income = point.income;
    match kind {
        RestrictionKind::Homothetic { scaled } => {
            let d2 = income_second_derivative(oracle, prices, income, method)?;
            let values = if *scaled {
                d2.iter()
                    .zip(prices)
                    .map(|(d, p)| -income * p * d)
                    .collect()
            } else {
                d2
            };
            Ok(PointEval {
                values,
                boundary: false,
            })
        }
        RestrictionKind::WeakSeparableRatio { groups } => {
            if oracle.goods() != 3 || groups.goods() != 3 || groups.first().len() != 1 {
                return Err(RestrictionError::InvalidKind(
                    "ratio restriction needs three goods with a singleton first group".into(),
                ));
            }
            let i = groups.first()[0];
            let (a, b) = (groups.second()[0], groups.second()[1]);
            let s = slutsky(oracle, prices, income, method)?;
            let d = income_derivative(oracle, prices, income, method)?;
            if s[(i, b)].abs() < tol::SINGULAR_RATIO {
                return Err(RestrictionError::Singular {
                    what: format!("S_{},{}", i + 1, b + 1),
                    value: s[(i, b)],
                });
            }
            if d[b].abs() < tol::SINGULAR_RATIO {
                return Err(RestrictionError::Singular {
                    what: format!("dx_{}/dI", b + 1),
                    value: d[b],
                });
            }
            let r = s[(i, a)] / s[(i, b)] - d[a] / d[b];
            Ok(PointEval {
                values: vec![r],
                boundary: false,
            })
        }
        RestrictionKind::WeakSeparableHomothetic { groups } => {
            if groups.goods() != oracle.goods() {
                return Err(RestrictionError::InvalidKind(format!(
                    "groups {groups} partition {} goods, oracle has {}",
                    groups.goods(),
                    oracle.goods()
                )));
            }
            let sw = share_slutsky(oracle, prices, income, method)?;
            let mut total = 0.0;
            for (i, j) in groups.cross_pairs() {
                total += sw[(i, j)].abs() + sw[(j, i)].abs();
            }
            let r = total / oracle.goods() as f64;
            Ok(PointEval {
                values: vec![r],
                boundary: false,
            })
        }
        RestrictionKind::Complementarity {
            i,
            j,
            relation,
            net,
        } => {
            let k = oracle.goods();
            if *i >= k || *j >= k || i == j {
                return Err(RestrictionError::InvalidKind(format!(
                    "cross pair ({},{}) invalid for {k} goods",
                    i + 1,
                    j + 1
                )));
            }
            let t = if *net {
                slutsky(oracle, prices, income, method)?[(*i, *j)]
            } else {
                price_jacobian(oracle, prices, income, method)?[(*i, *j)]
            };
            if t.abs() <= tol::SIGN_BOUNDARY {
                return Ok(PointEval {
                    values: vec![1.0],
                    boundary: true,
                });
            }
            let satisfied = match relation {
                Relation::Complements => t < 0.0,
                Relation::Substitutes => t > 0.0,
            };
            Ok(PointEval {
                values: vec![if satisfied { 0.0 } else { 1.0 }],
                boundary: false,
            })
        }
    }
}

/// What to do with points where the restriction is singular or demand is
/// undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingularPolicy {
    /// Propagate the first failure.
    Fail,
    /// Skip the point and count it in the report.
    #[default]
    SkipAndCount,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NormOptions {
    pub method: Method,
    pub singular: SingularPolicy,
}

/// Aggregate of restriction values over an evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    /// Root mean square over components and used points.
    pub norm: f64,
    pub points_used: usize,
    pub points_skipped: usize,
    pub boundary_points: usize,
}

/// Root-mean-square restriction norm over a set of points:
/// `sqrt( sum_{k,t} R_k(t)^2 / (components * points) )`.
///
/// Under [`SingularPolicy::SkipAndCount`], singular-ratio points and points
/// with undefined demand are dropped from the average and counted; any other
/// evaluation failure propagates regardless of policy.
pub fn restriction_norm(
    oracle: &dyn DemandOracle,
    kind: &RestrictionKind,
    points: &[BudgetPoint],
    options: NormOptions,
) -> Result<NormReport, RestrictionError> {
    if points.is_empty() {
        return Err(RestrictionError::NoPoints);
    }
    // The scaled homothetic restriction of a closed-form oracle equals
    // `-beta` at every point, so the norm is the RMS of beta for any grid.
    if let (RestrictionKind::Homothetic { scaled: true }, Some(params), true) = (
        kind,
        oracle.aids(),
        options.method != Method::FiniteDifference,
    ) {
        let k = params.goods() as f64;
        let norm = (params.beta().iter().map(|b| b * b).sum::<f64>() / k).sqrt();
        return Ok(NormReport {
            norm,
            points_used: points.len(),
            points_skipped: 0,
            boundary_points: 0,
        });
    }
    let components = kind.components(oracle.goods());
    let mut sum_sq = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut boundary = 0usize;
    for point in points {
        match evaluate(oracle, kind, point, options.method) {
            Ok(eval) => {
                sum_sq += eval.values.iter().map(|v| v * v).sum::<f64>();
                if eval.boundary {
                    boundary += 1;
                }
                used += 1;
            }
            Err(e @ (RestrictionError::Singular { .. }
            | RestrictionError::Eval(EvalError::UndefinedDemand(_)))) => {
                match options.singular {
                    SingularPolicy::Fail => return Err(e),
                    SingularPolicy::SkipAndCount => skipped += 1,
                }
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(RestrictionError::AllPointsSkipped(skipped));
    }
    Ok(NormReport {
        norm: (sum_sq / (components * used) as f64).sqrt(),
        points_used: used,
        points_skipped: skipped,
        boundary_points: boundary,
    })
}
