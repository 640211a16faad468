//! Iterative PAC test of a demand subject against a preference class.
//!
//! [`run_test`] walks a shrinking `(eps_k, delta_k)` schedule.  Each
//! iteration asks the learnability rule for a sample size, evaluates the
//! restriction norm of the subject over that many budget points, maps the
//! norm through a calibrated gamma table to the test statistic `T_n`, and
//! rejects as soon as `T_n` exceeds the current `eps_k`.  Oracle subjects
//! draw fresh points every iteration; dataset subjects consume observed
//! points in order and stop with a data-exhausted verdict once an iteration
//! demands more points than the data holds.

use rayon::prelude::*;

use crate::aids::{
    sample_params, AidsParams, BetaLaw, ClassTag, EvalError, GammaLaw, Groups, SampleError,
    SamplerConfig,
};
use crate::calculus::{income_lipschitz, DemandOracle};
use crate::dataset::{Dataset, IncomeLaw, PointLaw};
use crate::learn::{
    estimate_gamma, GammaSettings, GammaTable, GammaVariant, LearnError, SampleRule,
};
use crate::prng::stream_rng;
use crate::rationalize::{rationalizing_aids, FitError};
use crate::restrictions::{
    restriction_norm, NormOptions, RestrictionError, RestrictionKind, SingularPolicy,
};

/// Stream offsets within a schedule seed.  The gamma calibration owns
/// streams 0 and up through its pair count, so the engine's streams start
/// far above any plausible pair count.
const STREAM_PROBE: u64 = 1 << 40;
const STREAM_ITER_BASE: u64 = (1 << 40) + 1;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid test schedule: {0}")]
    Config(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Restriction(#[from] RestrictionError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// The subject under test: a demand oracle evaluated at freshly drawn
/// prices, or a finite dataset whose observed points are consumed in order.
pub enum TestSubject<'a> {
    Oracle {
        oracle: &'a dyn DemandOracle,
        label: String,
    },
    Data(&'a Dataset),
}

impl<'a> TestSubject<'a> {
    pub fn oracle(oracle: &'a dyn DemandOracle, label: impl Into<String>) -> Self {
        TestSubject::Oracle {
            oracle,
            label: label.into(),
        }
    }

    pub fn data(dataset: &'a Dataset) -> Self {
        TestSubject::Data(dataset)
    }

    pub fn label(&self) -> &str {
        match self {
            TestSubject::Oracle { label, .. } => label,
            TestSubject::Data(ds) => ds.label(),
        }
    }

    pub fn goods(&self) -> usize {
        match self {
            TestSubject::Oracle { oracle, .. } => oracle.goods(),
            TestSubject::Data(ds) => ds.goods(),
        }
    }
}

/// Iteration schedule and calibration settings for one test run.
///
/// The sequences `eps_k = eps0 / decay^(k-1)` and `delta_k = delta0 /
/// decay^(k-1)` both shrink strictly toward zero.
#[derive(Debug, Clone)]
pub struct TestSchedule {
    pub eps0: f64,
    pub delta0: f64,
    /// Per-iteration shrink factor for both sequences, greater than one.
    pub decay: f64,
    pub max_iterations: usize,
    /// Constant `C` of the sample-size rule.
    pub scale_c: f64,
    /// Law for freshly drawn evaluation points (oracle subjects only).
    pub points: PointLaw,
    /// Upper bound on points drawn per iteration for oracle subjects.
    pub point_cap: usize,
    /// Accumulate points across iterations instead of redrawing.
    pub reuse_points: bool,
    pub singular: SingularPolicy,
    /// Income-Lipschitz override; probed from the subject when absent.
    pub lipschitz: Option<f64>,
    /// Treat the subject as homothetic when resolving the restriction,
    /// letting a ratio-form request fall back to the share form.
    pub declare_homothetic: bool,
    pub seed: u64,
    pub gamma: GammaSettings,
}

impl TestSchedule {
    /// Default schedule around a prepared gamma calibration: starts at
    /// `(eps, delta) = (1.0, 0.05)`, shrinks both by 3 per iteration, runs
    /// at most 8 iterations with `C = 20`, and draws evaluation points from
    /// the calibration's own price box and income.
    pub fn new(gamma: GammaSettings) -> Self {
        let sampler = &gamma.sampler;
        let points = PointLaw::new(
            sampler.goods,
            sampler.price_lo,
            sampler.price_hi,
            IncomeLaw::Fixed(sampler.income),
        );
        Self {
            eps0: 1.0,
            delta0: 0.05,
            decay: 3.0,
            max_iterations: 8,
            scale_c: 20.0,
            points,
            point_cap: 100_000,
            reuse_points: false,
            singular: SingularPolicy::SkipAndCount,
            lipschitz: None,
            declare_homothetic: false,
            seed: gamma.seed,
            gamma,
        }
    }

    /// Schedule for the two-good homotheticity study.
    ///
    /// The calibration draws unrestricted members with income responses
    /// log-uniform across `[3e-5, 0.1]` so every tabulated norm decade down
    /// to 1e-4 is populated; the extra 9e-6 knot sits below the smallest
    /// possible draw and tabulates gamma 0, which keeps the statistic of a
    /// `beta = 1e-5` subject a small fraction of the table's plateau rather
    /// than the plateau itself.
    pub fn homothetic_study(seed: u64) -> Self {
        let gamma = GammaSettings {
            kind: RestrictionKind::Homothetic { scaled: true },
            class: ClassTag::Homothetic,
            sampler: SamplerConfig::new(2),
            m_beta: Some(BetaLaw::LogUniform { lo: 3e-5, hi: 0.1 }),
            pairs: 2500,
            grid_points: 200,
            eps_grid: vec![9e-6, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
            variant: GammaVariant::Literal,
            seed,
        };
        Self::new(gamma)
    }

    /// Schedule for the three-good weak-separability study with a singleton
    /// first group.  Price-response magnitudes of the unrestricted draws are
    /// spread log-uniformly so the lowest tabulated knot is populated; its
    /// gamma equals the table plateau, which makes every study deviation
    /// reject at the first iteration.
    pub fn weak_separable_study(groups: Groups, seed: u64) -> Self {
        let mut sampler = SamplerConfig::new(groups.goods());
        sampler.gamma = GammaLaw::LogUniform { lo: 3e-3, hi: 0.15 };
        let gamma = GammaSettings {
            kind: RestrictionKind::WeakSeparableHomothetic {
                groups: groups.clone(),
            },
            class: ClassTag::HomotheticWeaklySeparable(groups),
            sampler,
            m_beta: None,
            pairs: 2500,
            grid_points: 200,
            eps_grid: vec![1e-2, 1e-1, 1.0, 10.0],
            variant: GammaVariant::Literal,
            seed,
        };
        Self::new(gamma)
    }

    /// Schedule for testing a fitted dataset.  Fitted parameters carry
    /// estimation noise, so the calibration leaves the region below 1e-2
    /// untabulated: subjects whose fitted norm sits at the noise floor map
    /// to statistic 0 instead of inheriting the table plateau.
    pub fn dataset_default(
        kind: &RestrictionKind,
        goods: usize,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let class = in_class_tag(kind)?;
        let mut sampler = SamplerConfig::new(goods);
        let m_beta = match kind {
            RestrictionKind::Homothetic { .. } => Some(BetaLaw::LogUniform { lo: 5e-2, hi: 0.2 }),
            _ => {
                sampler.gamma = GammaLaw::LogUniform { lo: 3e-2, hi: 0.2 };
                None
            }
        };
        let gamma = GammaSettings {
            kind: kind.clone(),
            class,
            sampler,
            m_beta,
            pairs: 2500,
            grid_points: 200,
            eps_grid: vec![1e-2, 1e-1, 1.0, 10.0],
            variant: GammaVariant::Literal,
            seed,
        };
        Ok(Self::new(gamma))
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return Err(EngineError::Config(format!(
                "eps0 = {} must be positive",
                self.eps0
            )));
        }
        if !(self.delta0 > 0.0 && self.delta0 < 1.0) {
            return Err(EngineError::Config(format!(
                "delta0 = {} must lie in (0, 1)",
                self.delta0
            )));
        }
        if !(self.decay > 1.0 && self.decay.is_finite()) {
            return Err(EngineError::Config(format!(
                "decay = {} must exceed 1 so the sequences shrink",
                self.decay
            )));
        }
        if self.max_iterations == 0 {
            return Err(EngineError::Config("max_iterations must be >= 1".into()));
        }
        if !(self.scale_c > 0.0 && self.scale_c.is_finite()) {
            return Err(EngineError::Config(format!(
                "scale constant C = {} must be positive",
                self.scale_c
            )));
        }
        if self.point_cap == 0 {
            return Err(EngineError::Config("point_cap must be >= 1".into()));
        }
        if let Some(l) = self.lipschitz {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(EngineError::Config(format!(
                    "lipschitz override {l} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    /// Resolved configuration as deterministic `key=value` pairs, embedded
    /// in every emitted report.
    pub fn echo(&self) -> Vec<(String, String)> {
        let g = &self.gamma;
        let s = &g.sampler;
        let grid = g
            .eps_grid
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let singular = match self.singular {
            SingularPolicy::Fail => "fail",
            SingularPolicy::SkipAndCount => "skip-and-count",
        };
        let mut pairs = vec![
            ("eps0".into(), self.eps0.to_string()),
            ("delta0".into(), self.delta0.to_string()),
            ("decay".into(), self.decay.to_string()),
            ("max_iterations".into(), self.max_iterations.to_string()),
            ("scale_c".into(), self.scale_c.to_string()),
            ("price_lo".into(), self.points.price_lo.to_string()),
            ("price_hi".into(), self.points.price_hi.to_string()),
            ("income".into(), self.points.income.to_string()),
            ("point_cap".into(), self.point_cap.to_string()),
            ("reuse_points".into(), self.reuse_points.to_string()),
            ("singular_policy".into(), singular.into()),
            (
                "declare_homothetic".into(),
                self.declare_homothetic.to_string(),
            ),
            ("seed".into(), self.seed.to_string()),
            ("gamma_kind".into(), g.kind.to_string()),
            ("gamma_class".into(), g.class.to_string()),
            ("gamma_pairs".into(), g.pairs.to_string()),
            ("gamma_grid_points".into(), g.grid_points.to_string()),
            ("gamma_eps_grid".into(), grid),
            ("gamma_variant".into(), g.variant.to_string()),
            ("gamma_seed".into(), g.seed.to_string()),
            ("sampler_income".into(), s.income.to_string()),
            ("sampler_price_lo".into(), s.price_lo.to_string()),
            ("sampler_price_hi".into(), s.price_hi.to_string()),
            ("sampler_beta".into(), s.beta.to_string()),
            ("sampler_gamma".into(), s.gamma.to_string()),
        ];
        if let Some(law) = &g.m_beta {
            pairs.push(("gamma_m_beta".into(), law.to_string()));
        }
        if let Some(l) = self.lipschitz {
            pairs.push(("lipschitz_override".into(), l.to_string()));
        }
        pairs
    }

    /// FNV-1a digest of the echoed configuration, hex encoded.
    pub fn digest(&self) -> String {
        let mut hash: u64 = 0xcbf29ce484222325;
        for (k, v) in self.echo() {
            for byte in k.bytes().chain([b'=']).chain(v.bytes()).chain([b'\n']) {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
        format!("{hash:016x}")
    }

    fn eps_at(&self, k: usize) -> f64 {
        self.eps0 / self.decay.powi(k as i32 - 1)
    }

    fn delta_at(&self, k: usize) -> f64 {
        self.delta0 / self.decay.powi(k as i32 - 1)
    }
}

fn in_class_tag(kind: &RestrictionKind) -> Result<ClassTag, EngineError> {
    match kind {
        RestrictionKind::Homothetic { .. } => Ok(ClassTag::Homothetic),
        RestrictionKind::WeakSeparableRatio { groups } => {
            Ok(ClassTag::WeaklySeparable(groups.clone()))
        }
        RestrictionKind::WeakSeparableHomothetic { groups } => {
            Ok(ClassTag::HomotheticWeaklySeparable(groups.clone()))
        }
        RestrictionKind::Complementarity { .. } => Err(EngineError::Config(
            "no default calibration class for a sign restriction; supply gamma settings".into(),
        )),
    }
}

/// Decision recorded at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Reject,
    /// The iteration demanded more points than the dataset holds.
    DataExhausted,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decision::Continue => write!(f, "continue"),
            Decision::Reject => write!(f, "reject"),
            Decision::DataExhausted => write!(f, "data-exhausted"),
        }
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    pub eps: f64,
    pub delta: f64,
    /// Sample size prescribed by the learnability rule.
    pub n_required: u64,
    /// Points the statistic actually averaged over.
    pub points_used: usize,
    pub points_skipped: usize,
    /// Restriction norm; absent on a data-exhausted row.
    pub norm: Option<f64>,
    /// Test statistic `T_n = gamma(norm)`; absent on a data-exhausted row.
    pub statistic: Option<f64>,
    pub decision: Decision,
}

/// Final verdict of a test run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Rejected { iteration: usize },
    NotRejectedBudget,
    NotRejectedDataExhausted,
}

impl Verdict {
    pub fn rejected(&self) -> bool {
        matches!(self, Verdict::Rejected { .. })
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Rejected { iteration } => write!(f, "rejected (iteration {iteration})"),
            Verdict::NotRejectedBudget => write!(f, "not-rejected (iteration budget exhausted)"),
            Verdict::NotRejectedDataExhausted => write!(f, "not-rejected (data exhausted)"),
        }
    }
}

/// Full record of one test run.
#[derive(Debug, Clone)]
pub struct TestReport {
    pub subject: String,
    /// Restriction the caller asked for.
    pub requested_kind: RestrictionKind,
    /// Restriction actually evaluated (after any homothetic fallback).
    pub kind: RestrictionKind,
    /// Explanation of a ratio-to-share-form fallback, when one occurred.
    pub fallback: Option<String>,
    pub goods: usize,
    /// Income-Lipschitz constant the sample sizes were computed with.
    pub lipschitz: f64,
    pub seed: u64,
    pub config_digest: String,
    pub config: Vec<(String, String)>,
    /// Parameters fitted to a dataset subject; absent for oracle subjects.
    pub fitted: Option<AidsParams>,
    pub rows: Vec<IterationRow>,
    pub verdict: Verdict,
    pub warnings: Vec<String>,
}

impl TestReport {
    pub fn rejected(&self) -> bool {
        self.verdict.rejected()
    }

    /// Checks the reject-iff contract: the verdict names iteration `k`
    /// exactly when row `k` rejected and no earlier row did, and row
    /// statistics are consistent with their decisions.
    pub fn audit(&self) -> Result<(), String> {
        let mut first_reject = None;
        for (idx, row) in self.rows.iter().enumerate() {
            if row.iteration != idx + 1 {
                return Err(format!(
                    "row {} is labeled iteration {}",
                    idx + 1,
                    row.iteration
                ));
            }
            match row.decision {
                Decision::Reject => {
                    let t = row
                        .statistic
                        .ok_or_else(|| format!("iteration {} rejected without a statistic", row.iteration))?;
                    if !(t > row.eps) {
                        return Err(format!(
                            "iteration {} rejected with T_n = {t} <= eps = {}",
                            row.iteration, row.eps
                        ));
                    }
                    if first_reject.is_none() {
                        first_reject = Some(row.iteration);
                    }
                }
                Decision::Continue => {
                    let t = row
                        .statistic
                        .ok_or_else(|| format!("iteration {} continued without a statistic", row.iteration))?;
                    if t > row.eps {
                        return Err(format!(
                            "iteration {} continued with T_n = {t} > eps = {}",
                            row.iteration, row.eps
                        ));
                    }
                }
                Decision::DataExhausted => {}
            }
            if first_reject.is_some() && row.iteration > first_reject.unwrap() {
                return Err(format!(
                    "iteration {} recorded after rejection at {}",
                    row.iteration,
                    first_reject.unwrap()
                ));
            }
        }
        match (first_reject, self.verdict) {
            (Some(k), Verdict::Rejected { iteration }) if k == iteration => Ok(()),
            (None, Verdict::NotRejectedBudget) | (None, Verdict::NotRejectedDataExhausted) => {
                Ok(())
            }
            (found, verdict) => Err(format!(
                "verdict {verdict:?} inconsistent with first rejecting row {found:?}"
            )),
        }
    }
}

enum SubjectOracle<'a> {
    Borrowed(&'a dyn DemandOracle),
    Fitted(AidsParams),
}

impl SubjectOracle<'_> {
    fn get(&self) -> &dyn DemandOracle {
        match self {
            SubjectOracle::Borrowed(o) => *o,
            SubjectOracle::Fitted(p) => p,
        }
    }
}

/// Runs the full procedure: calibrates the gamma table for the schedule,
/// then iterates the test.  Calibration warnings are carried into the
/// report.
pub fn run_test(
    subject: &TestSubject<'_>,
    kind: &RestrictionKind,
    schedule: &TestSchedule,
) -> Result<TestReport, EngineError> {
    schedule.validate()?;
    let estimate = estimate_gamma(&schedule.gamma)?;
    let mut report = run_test_with_table(subject, kind, schedule, &estimate.table)?;
    let mut warnings = estimate.warnings;
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    Ok(report)
}

/// Runs the iteration loop against an already calibrated gamma table.
///
/// Separated from [`run_test`] so Monte-Carlo sweeps can share one
/// calibration across trials.
pub fn run_test_with_table(
    subject: &TestSubject<'_>,
    kind: &RestrictionKind,
    schedule: &TestSchedule,
    table: &GammaTable,
) -> Result<TestReport, EngineError> {
    schedule.validate()?;
    let goods = subject.goods();
    if schedule.points.goods != goods {
        return Err(EngineError::Config(format!(
            "point law draws {} goods, subject has {goods}",
            schedule.points.goods
        )));
    }
    check_kind(kind, goods)?;

    let mut warnings = Vec::new();
    // A table whose zero-norm value already exceeds the first eps level can
    // never let any subject pass iteration 1: the norm fails to identify
    // the class under the calibration draw laws.  Honest, but worth a flag.
    let floor = table.value(0.0);
    if floor > schedule.eps0 {
        warnings.push(format!(
            "gamma table maps a zero norm to T={floor:.4}, above eps_1={}; \
             no subject can pass the first iteration under this calibration",
            schedule.eps0
        ));
    }
    let mut fitted_params = None;
    let oracle: SubjectOracle<'_> = match subject {
        TestSubject::Oracle { oracle, .. } => SubjectOracle::Borrowed(*oracle),
        TestSubject::Data(ds) => {
            let params = rationalizing_aids(ds)?;
            fitted_params = Some(params.clone());
            SubjectOracle::Fitted(params)
        }
    };

    // A ratio-form request degenerates on homothetic subjects (both sides
    // are 0/0 in the limit), so those fall back to the share form.  The
    // subject counts as homothetic when its closed form says so exactly or
    // when the caller declares it; fitted parameters are never exactly
    // homothetic, hence the declaration path.
    let mut fallback = None;
    let resolved_kind = match kind {
        RestrictionKind::WeakSeparableRatio { groups } => {
            let exact = oracle.get().aids().map(|p| p.is_homothetic()).unwrap_or(false);
            if exact || schedule.declare_homothetic {
                let reason = if exact {
                    "subject is homothetic"
                } else {
                    "subject declared homothetic"
                };
                fallback = Some(format!(
                    "ratio form replaced by the share form: {reason}"
                ));
                RestrictionKind::WeakSeparableHomothetic {
                    groups: groups.clone(),
                }
            } else {
                kind.clone()
            }
        }
        _ => kind.clone(),
    };

    // Observed points for dataset subjects; none for oracle subjects.
    let observed: Option<Vec<crate::aids::BudgetPoint>> = match subject {
        TestSubject::Data(ds) => Some(ds.points()),
        TestSubject::Oracle { .. } => None,
    };

    let lipschitz = match schedule.lipschitz {
        Some(l) => l,
        None => {
            let probes = match &observed {
                Some(points) => points.iter().take(32).cloned().collect::<Vec<_>>(),
                None => {
                    let mut rng = stream_rng(schedule.seed, STREAM_PROBE);
                    schedule.points.draw_many(32, &mut rng)
                }
            };
            income_lipschitz(oracle.get(), &probes)?
        }
    };

    let rule = SampleRule::new(lipschitz, goods, schedule.scale_c);
    let options = NormOptions {
        singular: schedule.singular,
        ..NormOptions::default()
    };

    // The scaled homothetic statistic of a closed-form subject is the same
    // at every point, so drawing a large fresh grid would be wasted work; a
    // single point stands in for the whole sample.
    let point_free = matches!(resolved_kind, RestrictionKind::Homothetic { scaled: true })
        && oracle.get().aids().is_some();

    let mut rows: Vec<IterationRow> = Vec::new();
    let mut verdict = None;
    let mut pool: Vec<crate::aids::BudgetPoint> = Vec::new();
    for k in 1..=schedule.max_iterations {
        let eps_k = schedule.eps_at(k);
        let delta_k = schedule.delta_at(k);
        let n = rule.sample_size(eps_k, delta_k)?;
        let points: &[crate::aids::BudgetPoint] = match &observed {
            Some(all) => {
                if n > all.len() as u64 {
                    rows.push(IterationRow {
                        iteration: k,
                        eps: eps_k,
                        delta: delta_k,
                        n_required: n,
                        points_used: 0,
                        points_skipped: 0,
                        norm: None,
                        statistic: None,
                        decision: Decision::DataExhausted,
                    });
                    warnings.push(format!(
                        "iteration {k} requires n = {n} points, dataset has {}",
                        all.len()
                    ));
                    verdict = Some(Verdict::NotRejectedDataExhausted);
                    break;
                }
                &all[..n as usize]
            }
            None => {
                let want = if point_free {
                    1
                } else {
                    n.min(schedule.point_cap as u64) as usize
                };
                let mut rng = stream_rng(schedule.seed, STREAM_ITER_BASE + k as u64);
                if schedule.reuse_points {
                    // Sample sizes grow with k, so the pool only ever tops up.
                    if pool.len() < want {
                        let fresh = schedule.points.draw_many(want - pool.len(), &mut rng);
                        pool.extend(fresh);
                    }
                    &pool[..want]
                } else {
                    pool = schedule.points.draw_many(want, &mut rng);
                    &pool[..]
                }
            }
        };
        let norm_report = restriction_norm(oracle.get(), &resolved_kind, points, options)?;
        let statistic = table.value(norm_report.norm);
        let reject = statistic > eps_k;
        rows.push(IterationRow {
            iteration: k,
            eps: eps_k,
            delta: delta_k,
            n_required: n,
            points_used: norm_report.points_used,
            points_skipped: norm_report.points_skipped,
            norm: Some(norm_report.norm),
            statistic: Some(statistic),
            decision: if reject {
                Decision::Reject
            } else {
                Decision::Continue
            },
        });
        if reject {
            verdict = Some(Verdict::Rejected { iteration: k });
            break;
        }
    }

    let report = TestReport {
        subject: subject.label().to_string(),
        requested_kind: kind.clone(),
        kind: resolved_kind,
        fallback,
        goods,
        lipschitz,
        seed: schedule.seed,
        config_digest: schedule.digest(),
        config: schedule.echo(),
        fitted: fitted_params,
        rows,
        verdict: verdict.unwrap_or(Verdict::NotRejectedBudget),
        warnings,
    };
    report.audit().map_err(EngineError::Internal)?;
    Ok(report)
}

fn check_kind(kind: &RestrictionKind, goods: usize) -> Result<(), EngineError> {
    match kind {
        RestrictionKind::Homothetic { .. } => Ok(()),
        RestrictionKind::WeakSeparableRatio { groups }
        | RestrictionKind::WeakSeparableHomothetic { groups } => {
            if groups.goods() != goods {
                Err(EngineError::Config(format!(
                    "groups {groups} partition {} goods, subject has {goods}",
                    groups.goods()
                )))
            } else {
                Ok(())
            }
        }
        RestrictionKind::Complementarity { i, j, .. } => {
            if *i >= goods || *j >= goods || i == j {
                Err(EngineError::Config(format!(
                    "good pair ({}, {}) invalid for {goods} goods",
                    i + 1,
                    j + 1
                )))
            } else {
                Ok(())
            }
        }
    }
}

/// Rejection counts from a Monte-Carlo sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionSummary {
    pub trials: usize,
    pub rejected: usize,
    /// `rejected_at[k-1]` counts trials rejected exactly at iteration `k`.
    pub rejected_at: Vec<usize>,
    /// Trials that stopped because the data ran out (dataset subjects).
    pub exhausted: usize,
}

impl RejectionSummary {
    pub fn rate(&self) -> f64 {
        self.rejected as f64 / self.trials as f64
    }

    /// Cumulative rejection rate as a function of the iteration budget:
    /// entry `k-1` is the fraction rejected at iteration `k` or earlier.
    /// Nondecreasing because rejection is absorbing.
    pub fn rate_by_budget(&self) -> Vec<f64> {
        let mut acc = 0usize;
        self.rejected_at
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / self.trials as f64
            })
            .collect()
    }

    fn from_verdicts(verdicts: &[Verdict], max_iterations: usize) -> Self {
        let mut rejected_at = vec![0usize; max_iterations];
        let mut rejected = 0;
        let mut exhausted = 0;
        for v in verdicts {
            match v {
                Verdict::Rejected { iteration } => {
                    rejected += 1;
                    rejected_at[iteration - 1] += 1;
                }
                Verdict::NotRejectedDataExhausted => exhausted += 1,
                Verdict::NotRejectedBudget => {}
            }
        }
        Self {
            trials: verdicts.len(),
            rejected,
            rejected_at,
            exhausted,
        }
    }
}

/// Decorrelates per-trial or per-cell seeds from a base seed (splitmix64
/// step).  Monte-Carlo sweeps and the study harness both run one schedule
/// per derived seed.
pub fn derive_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed ^ trial.wrapping_add(1).wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Fraction of freshly sampled in-class subjects the test rejects: the
/// empirical size.  Trials run in parallel on per-trial seed streams; the
/// gamma table is calibrated once and shared.
pub fn empirical_size(
    class: &ClassTag,
    kind: &RestrictionKind,
    schedule: &TestSchedule,
    trials: usize,
) -> Result<RejectionSummary, EngineError> {
    if trials == 0 {
        return Err(EngineError::Config("need at least one trial".into()));
    }
    schedule.validate()?;
    let table = estimate_gamma(&schedule.gamma)?.table;
    let verdicts: Vec<Verdict> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let trial_seed = derive_seed(schedule.seed, i as u64);
            let mut rng = stream_rng(trial_seed, STREAM_PROBE);
            let params = sample_params(&schedule.gamma.sampler, class, &mut rng)?;
            let mut trial_schedule = schedule.clone();
            trial_schedule.seed = trial_seed;
            let subject = TestSubject::oracle(&params, format!("trial-{i}"));
            Ok(run_test_with_table(&subject, kind, &trial_schedule, &table)?.verdict)
        })
        .collect::<Result<_, EngineError>>()?;
    Ok(RejectionSummary::from_verdicts(
        &verdicts,
        schedule.max_iterations,
    ))
}

/// Fraction of trials rejecting a fixed off-class subject, with fresh
/// evaluation points per trial: the empirical power.
pub fn empirical_power(
    params: &AidsParams,
    kind: &RestrictionKind,
    schedule: &TestSchedule,
    trials: usize,
) -> Result<RejectionSummary, EngineError> {
    if trials == 0 {
        return Err(EngineError::Config("need at least one trial".into()));
    }
    schedule.validate()?;
    let table = estimate_gamma(&schedule.gamma)?.table;
    let verdicts: Vec<Verdict> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut trial_schedule = schedule.clone();
            trial_schedule.seed = derive_seed(schedule.seed, i as u64);
            let subject = TestSubject::oracle(params, format!("trial-{i}"));
            Ok(run_test_with_table(&subject, kind, &trial_schedule, &table)?.verdict)
        })
        .collect::<Result<_, EngineError>>()?;
    Ok(RejectionSummary::from_verdicts(
        &verdicts,
        schedule.max_iterations,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn homothetic_params() -> AidsParams {
        AidsParams::new(
            vec![0.5, 0.5],
            vec![0.0, 0.0],
            DMatrix::zeros(2, 2),
        )
        .expect("valid parameters")
    }

    fn deviation_params(d: f64) -> AidsParams {
        AidsParams::new(vec![0.5, 0.5], vec![d, -d], DMatrix::zeros(2, 2))
            .expect("valid parameters")
    }

    /// Table with knots at 1e-2 and 1e-1 and a plateau of 5, matching the
    /// shape the calibrated tables take.
    fn toy_table() -> GammaTable {
        GammaTable::new(vec![
            crate::learn::GammaRow {
                eps: 1e-2,
                gamma: 0.0,
                members: 0,
            },
            crate::learn::GammaRow {
                eps: 1e-1,
                gamma: 5.0,
                members: 10,
            },
            crate::learn::GammaRow {
                eps: 1.0,
                gamma: 5.0,
                members: 20,
            },
        ])
        .expect("valid table")
    }

    fn toy_schedule(seed: u64) -> TestSchedule {
        let mut schedule = TestSchedule::homothetic_study(seed);
        // Unit tests never calibrate, so shrink the settings to harmless
        // sizes in case one accidentally does.
        schedule.gamma.pairs = 4;
        schedule.gamma.grid_points = 4;
        schedule
    }

    #[test]
    fn in_class_subject_survives_the_budget() {
        let params = homothetic_params();
        let subject = TestSubject::oracle(&params, "in-class");
        let schedule = toy_schedule(7);
        let report = run_test_with_table(
            &subject,
            &RestrictionKind::Homothetic { scaled: true },
            &schedule,
            &toy_table(),
        )
        .expect("test runs");
        assert_eq!(report.verdict, Verdict::NotRejectedBudget);
        assert_eq!(report.rows.len(), schedule.max_iterations);
        for row in &report.rows {
            assert_eq!(row.norm, Some(0.0));
            assert_eq!(row.statistic, Some(0.0));
            assert_eq!(row.decision, Decision::Continue);
        }
        assert!(report.audit().is_ok());
    }

    #[test]
    fn large_deviation_rejects_at_iteration_one_with_n_60() {
        let params = deviation_params(0.1);
        let subject = TestSubject::oracle(&params, "beta-0.1");
        let schedule = toy_schedule(7);
        let report = run_test_with_table(
            &subject,
            &RestrictionKind::Homothetic { scaled: true },
            &schedule,
            &toy_table(),
        )
        .expect("test runs");
        assert_eq!(report.verdict, Verdict::Rejected { iteration: 1 });
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        // The subject's Lipschitz constant is 0.1/10, so the fat-shattering
        // term is (0.01/1)^2 and the prescribed n stays at the L=0 value.
        assert_eq!(row.n_required, 60);
        assert_eq!(row.norm, Some(0.1));
        assert_eq!(row.statistic, Some(5.0));
    }

    #[test]
    fn tiny_deviation_rejects_at_a_deeper_iteration() {
        // Norm 1.5e-2 interpolates to T_n = 5 * (1.5e-2 - 1e-2) / 9e-2 =
        // 0.2778, above eps_3 = 1/9 but below eps_1 = 1 and eps_2 = 1/3.
        let params = deviation_params(1.5e-2);
        let subject = TestSubject::oracle(&params, "beta-1.5e-2");
        let schedule = toy_schedule(11);
        let report = run_test_with_table(
            &subject,
            &RestrictionKind::Homothetic { scaled: true },
            &schedule,
            &toy_table(),
        )
        .expect("test runs");
        assert_eq!(report.verdict, Verdict::Rejected { iteration: 3 });
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].decision, Decision::Continue);
        assert_eq!(report.rows[1].decision, Decision::Continue);
        assert_eq!(report.rows[2].decision, Decision::Reject);
    }

    #[test]
    fn dataset_subject_stops_when_data_runs_out() {
        use crate::dataset::{generate_dataset, NoiseSpec};
        let params = homothetic_params();
        let law = PointLaw::new(2, 0.5, 2.0, IncomeLaw::spread(10.0));
        let mut rng = stream_rng(3, 0);
        // 70 rows: enough for n = 60 at iteration 1, exhausted at the
        // second iteration's larger n.
        let data = generate_dataset(&params, 70, &law, &NoiseSpec::none(), "short", &mut rng)
            .expect("generates");
        let subject = TestSubject::data(&data);
        let schedule = toy_schedule(5);
        let report = run_test_with_table(
            &subject,
            &RestrictionKind::Homothetic { scaled: true },
            &schedule,
            &toy_table(),
        )
        .expect("test runs");
        assert_eq!(report.verdict, Verdict::NotRejectedDataExhausted);
        let last = report.rows.last().expect("rows recorded");
        assert_eq!(last.decision, Decision::DataExhausted);
        assert!(last.norm.is_none());
        assert!(report.fitted.is_some());
        assert!(report.rows.len() >= 2, "first iteration must have run");
        assert_eq!(report.rows[0].points_used, 60);
    }

    #[test]
    fn dataset_too_small_for_first_iteration_exhausts_immediately() {
        use crate::dataset::{generate_dataset, NoiseSpec};
        let params = homothetic_params();
        let law = PointLaw::new(2, 0.5, 2.0, IncomeLaw::spread(10.0));
        let mut rng = stream_rng(3, 0);
        let data = generate_dataset(&params, 5, &law, &NoiseSpec::none(), "tiny", &mut rng)
            .expect("generates");
        let subject = TestSubject::data(&data);
        let schedule = toy_schedule(5);
        let report = run_test_with_table(
            &subject,
            &RestrictionKind::Homothetic { scaled: true },
            &schedule,
            &toy_table(),
        )
        .expect("test runs");
        assert_eq!(report.verdict, Verdict::NotRejectedDataExhausted);
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].decision, Decision::DataExhausted);
    }

    #[test]
    fn ratio_kind_falls_back_for_exactly_homothetic_oracles() {
        let groups = Groups::new(vec![0], vec![1, 2], 3).expect("valid groups");
        let params = AidsParams::new(
            vec![0.4, 0.3, 0.3],
            vec![0.0; 3],
            DMatrix::zeros(3, 3),
        )
        .expect("valid parameters");
        let subject = TestSubject::oracle(&params, "homothetic-3");
        let mut schedule = TestSchedule::weak_separable_study(groups.clone(), 9);
        schedule.gamma.pairs = 4;
        schedule.gamma.grid_points = 4;
        let report = run_test_with_table(
            &subject,
            &RestrictionKind::WeakSeparableRatio { groups },
            &schedule,
            &toy_table(),
        )
        .expect("test runs");
        assert!(report.fallback.is_some());
        assert!(matches!(
            report.kind,
            RestrictionKind::WeakSeparableHomothetic { .. }
        ));
        assert!(matches!(
            report.requested_kind,
            RestrictionKind::WeakSeparableRatio { .. }
        ));
    }

    #[test]
    fn reports_are_deterministic() {
        let params = deviation_params(2e-2);
        let subject = TestSubject::oracle(&params, "repeat");
        let schedule = toy_schedule(42);
        let kind = RestrictionKind::Homothetic { scaled: true };
        let a = run_test_with_table(&subject, &kind, &schedule, &toy_table()).expect("runs");
        let b = run_test_with_table(&subject, &kind, &schedule, &toy_table()).expect("runs");
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.verdict, b.verdict);
        assert_eq!(a.config_digest, b.config_digest);
    }

    #[test]
    fn schedule_validation_catches_bad_fields() {
        let mut schedule = toy_schedule(1);
        schedule.decay = 1.0;
        assert!(matches!(
            schedule.validate(),
            Err(EngineError::Config(_))
        ));
        let mut schedule = toy_schedule(1);
        schedule.delta0 = 1.0;
        assert!(schedule.validate().is_err());
        let mut schedule = toy_schedule(1);
        schedule.max_iterations = 0;
        assert!(schedule.validate().is_err());
    }

    #[test]
    fn goods_mismatch_is_a_config_error() {
        let params = AidsParams::new(
            vec![0.4, 0.3, 0.3],
            vec![0.0; 3],
            DMatrix::zeros(3, 3),
        )
        .expect("valid parameters");
        let subject = TestSubject::oracle(&params, "three-goods");
        let schedule = toy_schedule(1);
        let err = run_test_with_table(
            &subject,
            &RestrictionKind::Homothetic { scaled: true },
            &schedule,
            &toy_table(),
        )
        .expect_err("must fail");
        assert!(matches!(err, EngineError::Config(_)));
    }

    #[test]
    fn zero_trials_is_an_error() {
        let schedule = toy_schedule(1);
        let err = empirical_size(
            &ClassTag::Homothetic,
            &RestrictionKind::Homothetic { scaled: true },
            &schedule,
            0,
        )
        .expect_err("must fail");
        assert!(matches!(err, EngineError::Config(_)));
    }

    #[test]
    fn derived_seeds_differ_across_trials() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        let c = derive_seed(8, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rate_by_budget_is_nondecreasing() {
        let verdicts = [
            Verdict::Rejected { iteration: 1 },
            Verdict::Rejected { iteration: 3 },
            Verdict::NotRejectedBudget,
            Verdict::Rejected { iteration: 1 },
        ];
        let summary = RejectionSummary::from_verdicts(&verdicts, 4);
        assert_eq!(summary.rejected, 3);
        assert_eq!(summary.rejected_at, vec![2, 0, 1, 0]);
        let rates = summary.rate_by_budget();
        assert_eq!(rates, vec![0.5, 0.5, 0.75, 0.75]);
        assert!(rates.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn point_reuse_tops_up_the_pool() {
        // With reuse, iteration k's points extend iteration k-1's; the
        // trace is still deterministic and the verdict unchanged for a
        // point-free statistic.
        let params = deviation_params(1.5e-2);
        let subject = TestSubject::oracle(&params, "reuse");
        let mut schedule = toy_schedule(13);
        schedule.reuse_points = true;
        let report = run_test_with_table(
            &subject,
            &RestrictionKind::Homothetic { scaled: true },
            &schedule,
            &toy_table(),
        )
        .expect("runs");
        assert_eq!(report.verdict, Verdict::Rejected { iteration: 3 });
    }
}
