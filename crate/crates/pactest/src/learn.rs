//! Learnability machinery: fat-shattering dimension, the iterative sample
//! size rule, the expected-risk distance between demand systems, and the
//! sampled gamma table translating restriction norms into test statistics.
//!
//! The gamma table is the calibrated link between the geometry of a class
//! (how far a demand is from satisfying its restriction) and the economic
//! size of the violation (how far its choices are from those of some member
//! of the class).  It is estimated by sampling pairs of an in-class demand
//! and an unrestricted demand, recording each unrestricted draw's restriction
//! norm and its choice distance, and tabulating the worst distance among
//! draws within each norm level.

use rand::Rng;
use rayon::prelude::*;

use crate::aids::{BetaLaw, BudgetPoint, ClassTag, EvalError, SampleError, SamplerConfig};
use crate::calculus::DemandOracle;
use crate::dataset::{IncomeLaw, PointLaw};
use crate::prng::stream_rng;
use crate::aids;
use crate::restrictions::{restriction_norm, NormOptions, RestrictionError, RestrictionKind};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Restriction(#[from] RestrictionError),
    #[error("all {0} sampled pairs were dropped; widen the sampler or the point grid")]
    AllPairsDropped(usize),
    #[error("gamma table: {0}")]
    Table(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Fat-shattering dimension bound `(L / eps)^K` for a demand family with
/// income-response scale `L` over `K` goods.
pub fn fat_shattering(lipschitz: f64, goods: usize, eps: f64) -> Result<f64, LearnError> {
    if !(eps > 0.0) {
        return Err(LearnError::Invalid(format!("eps {eps} must be positive")));
    }
    if !(lipschitz >= 0.0) {
        return Err(LearnError::Invalid(format!(
            "lipschitz scale {lipschitz} must be nonnegative"
        )));
    }
    if goods == 0 {
        return Err(LearnError::Invalid("need at least one good".into()));
    }
    Ok((lipschitz / eps).powi(goods as i32))
}

/// Sample-size rule for one test iteration:
/// `n = ceil( C (1/eps^2) ( ln^2(1/eps) fat(eps) + ln(1/delta) ) )`,
/// floored at one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRule {
    pub lipschitz: f64,
    pub goods: usize,
    /// Leading constant `C`.
    pub c: f64,
}

impl SampleRule {
    pub fn new(lipschitz: f64, goods: usize, c: f64) -> Self {
        Self { lipschitz, goods, c }
    }

    pub fn sample_size(&self, eps: f64, delta: f64) -> Result<u64, LearnError> {
        if !(eps > 0.0) {
            return Err(LearnError::Invalid(format!("eps {eps} must be positive")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(LearnError::Invalid(format!(
                "delta {delta} must lie in (0, 1)"
            )));
        }
        if !(self.c > 0.0) {
            return Err(LearnError::Invalid(format!(
                "scale constant {} must be positive",
                self.c
            )));
        }
        let fat = fat_shattering(self.lipschitz, self.goods, eps)?;
        let log_eps = (1.0 / eps).ln();
        let raw = self.c / (eps * eps) * (log_eps * log_eps * fat + (1.0 / delta).ln());
        if !raw.is_finite() {
            return Err(LearnError::Invalid(format!(
                "sample size overflowed at eps = {eps}, delta = {delta}"
            )));
        }
        Ok((raw.ceil() as u64).max(1))
    }
}

/// Convenience wrapper over [`SampleRule::sample_size`].
pub fn sample_size(
    eps: f64,
    delta: f64,
    lipschitz: f64,
    goods: usize,
    c: f64,
) -> Result<u64, LearnError> {
    SampleRule::new(lipschitz, goods, c).sample_size(eps, delta)
}

/// Expected-risk distance between two demand systems over a point grid:
/// the root mean square of quantity differences, averaged over points and
/// goods.  A constant gap `c` in one good out of `K` yields `c / sqrt(K)`.
pub fn erf(
    a: &dyn DemandOracle,
    b: &dyn DemandOracle,
    points: &[BudgetPoint],
) -> Result<f64, LearnError> {
    if points.is_empty() {
        return Err(LearnError::Invalid("no evaluation points".into()));
    }
    if a.goods() != b.goods() {
        return Err(LearnError::Invalid(format!(
            "oracles disagree on goods: {} vs {}",
            a.goods(),
            b.goods()
        )));
    }
    let k = a.goods() as f64;
    let mut sum_sq = 0.0;
    for point in points {
        let xa = a.demand(&point.prices, point.income)?;
        let xb = b.demand(&point.prices, point.income)?;
        sum_sq += xa
            .iter()
            .zip(&xb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok((sum_sq / (points.len() as f64 * k)).sqrt())
}

/// Gamma estimator variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaVariant {
    /// Worst choice distance among unrestricted draws within each norm level.
    #[default]
    Literal,
    /// Same, but each draw's distance is its minimum over every sampled
    /// in-class member rather than its own pair.  Tighter, and quadratic in
    /// the pair count.
    MaxMin,
}

impl std::fmt::Display for GammaVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GammaVariant::Literal => write!(f, "literal"),
            GammaVariant::MaxMin => write!(f, "max-min"),
        }
    }
}

/// Settings for [`estimate_gamma`].
#[derive(Debug, Clone)]
pub struct GammaSettings {
    pub kind: RestrictionKind,
    /// Class the in-class member of each pair is drawn from.
    pub class: ClassTag,
    pub sampler: SamplerConfig,
    /// Income-response law for the unrestricted draws; defaults to the
    /// sampler's own law.
    pub m_beta: Option<BetaLaw>,
    pub pairs: usize,
    /// Shared evaluation grid size for norms and distances.
    pub grid_points: usize,
    /// Norm levels to tabulate, strictly positive.
    pub eps_grid: Vec<f64>,
    pub variant: GammaVariant,
    pub seed: u64,
}

/// One tabulated norm level.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRow {
    pub eps: f64,
    pub gamma: f64,
    /// Number of sampled draws with restriction norm at most `eps`.
    pub members: usize,
}

/// Piecewise-linear map from restriction norms to test statistics.
///
/// Evaluation is flat below the smallest tabulated level and extrapolates
/// linearly above the largest using the last segment's slope.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTable {
    rows: Vec<GammaRow>,
}

impl GammaTable {
    pub fn new(rows: Vec<GammaRow>) -> Result<Self, LearnError> {
        if rows.is_empty() {
            return Err(LearnError::Table("no rows".into()));
        }
        for w in rows.windows(2) {
            if !(w[1].eps > w[0].eps) {
                return Err(LearnError::Table(format!(
                    "eps levels must increase: {} then {}",
                    w[0].eps, w[1].eps
                )));
            }
        }
        // A trailing eps = inf row is allowed: it tabulates the unfiltered
        // maximum distance and evaluates flat, like any last knot.
        for row in &rows {
            if !(row.eps > 0.0) || row.eps.is_nan() || !row.gamma.is_finite() || row.gamma < 0.0 {
                return Err(LearnError::Table(format!(
                    "bad row eps = {}, gamma = {}",
                    row.eps, row.gamma
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[GammaRow] {
        &self.rows
    }

    /// Interpolated statistic for a restriction norm.
    pub fn value(&self, norm: f64) -> f64 {
        let rows = &self.rows;
        let first = &rows[0];
        if norm <= first.eps {
            return first.gamma;
        }
        let last = &rows[rows.len() - 1];
        if norm >= last.eps {
            if rows.len() == 1 {
                return last.gamma;
            }
            let prev = &rows[rows.len() - 2];
            let slope = (last.gamma - prev.gamma) / (last.eps - prev.eps);
            return last.gamma + slope * (norm - last.eps);
        }
        for w in rows.windows(2) {
            if norm <= w[1].eps {
                let t = (norm - w[0].eps) / (w[1].eps - w[0].eps);
                return w[0].gamma + t * (w[1].gamma - w[0].gamma);
            }
        }
        last.gamma
    }

    /// CSV serialization: `eps,gamma,n_pairs_in_A` preceded by any
    /// provenance comments handed in.
    pub fn to_csv_string(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str("eps,gamma,n_pairs_in_A\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.eps, row.gamma, row.members));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self, LearnError> {
        let mut rows = Vec::new();
        let mut saw_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != "eps,gamma,n_pairs_in_A" {
                    return Err(LearnError::Table(format!(
                        "line {}: expected header `eps,gamma,n_pairs_in_A`, found `{line}`",
                        idx + 1
                    )));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(LearnError::Table(format!(
                    "line {}: expected 3 fields, found {}",
                    idx + 1,
                    fields.len()
                )));
            }
            let parse = |f: &str| -> Result<f64, LearnError> {
                f.trim()
                    .parse()
                    .map_err(|e| LearnError::Table(format!("line {}: bad number `{f}`: {e}", idx + 1)))
            };
            rows.push(GammaRow {
                eps: parse(fields[0])?,
                gamma: parse(fields[1])?,
                members: fields[2].trim().parse().map_err(|e| {
                    LearnError::Table(format!("line {}: bad count `{}`: {e}", idx + 1, fields[2]))
                })?,
            });
        }
        GammaTable::new(rows)
    }

    pub fn write_csv(
        &self,
        path: impl AsRef<std::path::Path>,
        comments: &[String],
    ) -> Result<(), LearnError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string(comments)).map_err(|source| LearnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<Self, LearnError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LearnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text)
    }
}

/// Result of a gamma calibration run.
#[derive(Debug, Clone)]
pub struct GammaEstimate {
    pub table: GammaTable,
    pub warnings: Vec<String>,
    /// Pairs dropped because a draw was undefined somewhere on the grid.
    pub dropped_pairs: usize,
}

struct PairSample {
    in_class: aids::AidsParams,
    norm: f64,
    distance: f64,
    unrestricted: aids::AidsParams,
}

/// Estimates the gamma table for a restriction.
///
/// Each pair draws an in-class member and an unrestricted member from the
/// same stream, measures the unrestricted draw's restriction norm and its
/// choice distance to the in-class draw over a shared point grid, and the
/// rows tabulate `gamma(eps) = max { distance : norm <= eps }`.  Levels with
/// no qualifying draw report gamma 0 with a warning.  Rows are nondecreasing
/// in `eps` by construction.
pub fn estimate_gamma(settings: &GammaSettings) -> Result<GammaEstimate, LearnError> {
    if settings.pairs == 0 {
        return Err(LearnError::Invalid("need at least one pair".into()));
    }
    if settings.grid_points == 0 {
        return Err(LearnError::Invalid("need at least one grid point".into()));
    }
    if settings.eps_grid.is_empty() {
        return Err(LearnError::Invalid("eps grid is empty".into()));
    }
    let mut eps_grid = settings.eps_grid.clone();
    if eps_grid.iter().any(|e| e.is_nan()) {
        return Err(LearnError::Invalid("eps levels must not be NaN".into()));
    }
    eps_grid.sort_by(|a, b| a.partial_cmp(b).expect("NaN ruled out above"));
    eps_grid.dedup();
    // Positive levels only; a single +inf level tabulates the unfiltered
    // maximum distance.
    if eps_grid[0] <= 0.0 {
        return Err(LearnError::Invalid("eps levels must be positive".into()));
    }

    let law = PointLaw::new(
        settings.sampler.goods,
        settings.sampler.price_lo,
        settings.sampler.price_hi,
        IncomeLaw::Fixed(settings.sampler.income),
    );
    let mut grid_rng = stream_rng(settings.seed, 0);
    let grid = law.draw_many(settings.grid_points, &mut grid_rng);

    let mut m_sampler = settings.sampler.clone();
    if let Some(law) = &settings.m_beta {
        m_sampler.beta = law.clone();
    }
    let norm_options = NormOptions::default();

    let results: Vec<Result<PairSample, String>> = (0..settings.pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(settings.seed, 1 + i as u64);
            let in_class = aids::sample_params(&settings.sampler, &settings.class, &mut rng)
                .map_err(|e| format!("pair {i}: in-class draw failed: {e}"))?;
            let unrestricted =
                aids::sample_params(&m_sampler, &ClassTag::Unrestricted, &mut rng)
                    .map_err(|e| format!("pair {i}: unrestricted draw failed: {e}"))?;
            let norm = restriction_norm(&unrestricted, &settings.kind, &grid, norm_options)
                .map_err(|e| format!("pair {i}: norm failed: {e}"))?
                .norm;
            let distance = erf(&in_class, &unrestricted, &grid)
                .map_err(|e| format!("pair {i}: distance failed: {e}"))?;
            Ok(PairSample {
                in_class,
                norm,
                distance,
                unrestricted,
            })
        })
        .collect();

    let mut pairs = Vec::with_capacity(settings.pairs);
    let mut warnings = Vec::new();
    let mut dropped = 0usize;
    for result in results {
        match result {
            Ok(p) => pairs.push(p),
            Err(msg) => {
                dropped += 1;
                if warnings.len() < 8 {
                    warnings.push(msg);
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(LearnError::AllPairsDropped(settings.pairs));
    }
    if dropped > 0 {
        warnings.push(format!("{dropped} of {} pairs dropped", settings.pairs));
    }

    // MaxMin replaces each draw's own-pair distance with its minimum over
    // every sampled in-class member.
    let distances: Vec<f64> = match settings.variant {
        GammaVariant::Literal => pairs.iter().map(|p| p.distance).collect(),
        GammaVariant::MaxMin => {
            let max_eps = *eps_grid.last().expect("nonempty grid");
            pairs
                .par_iter()
                .map(|p| {
                    if p.norm > max_eps {
                        return Ok(p.distance);
                    }
                    let mut best = p.distance;
                    for other in &pairs {
                        let d = erf(&other.in_class, &p.unrestricted, &grid)?;
                        best = best.min(d);
                    }
                    Ok(best)
                })
                .collect::<Result<Vec<f64>, LearnError>>()?
        }
    };

    let mut rows = Vec::with_capacity(eps_grid.len());
    for &eps in &eps_grid {
        let mut gamma = 0.0f64;
        let mut members = 0usize;
        for (pair, distance) in pairs.iter().zip(&distances) {
            if pair.norm <= eps {
                members += 1;
                gamma = gamma.max(*distance);
            }
        }
        if members == 0 {
            warnings.push(format!(
                "eps = {eps}: no sampled draw within this norm level; gamma set to 0"
            ));
        }
        rows.push(GammaRow {
            eps,
            gamma,
            members,
        });
    }
    Ok(GammaEstimate {
        table: GammaTable::new(rows)?,
        warnings,
        dropped_pairs: dropped,
    })
}

/// Draws evaluation points for callers that need a grid matching the gamma
/// calibration's law (prices uniform on the sampler box, fixed income).
pub fn calibration_grid<R: Rng>(
    sampler: &SamplerConfig,
    n: usize,
    rng: &mut R,
) -> Vec<BudgetPoint> {
    let law = PointLaw::new(
        sampler.goods,
        sampler.price_lo,
        sampler.price_hi,
        IncomeLaw::Fixed(sampler.income),
    );
    law.draw_many(n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aids::AidsParams;
    use crate::calculus::FnOracle;
    use nalgebra::DMatrix;

    #[test]
    fn fat_shattering_frozen_value() {
        // (2 / 0.5)^3 = 64.
        assert_eq!(fat_shattering(2.0, 3, 0.5).unwrap(), 64.0);
        assert_eq!(fat_shattering(0.0, 2, 1.0).unwrap(), 0.0);
        assert!(fat_shattering(1.0, 2, 0.0).is_err());
    }

    #[test]
    fn first_round_sample_size_is_sixty() {
        // eps = 1 kills the fat term; n = ceil(20 ln 20) = 60 regardless of
        // the Lipschitz scale.
        for lipschitz in [0.0, 1e-5, 0.1] {
            let n = sample_size(1.0, 0.05, lipschitz, 2, 20.0).unwrap();
            assert_eq!(n, 60);
        }
    }

    #[test]
    fn shrunk_round_sample_size_frozen() {
        // One shrink step (eps, delta) / 3 with a small Lipschitz scale:
        // n = ceil(180 (ln^2 3 (3 L)^2 + ln 60)) = 737.
        let n = sample_size(1.0 / 3.0, 0.05 / 3.0, 1e-4, 2, 20.0).unwrap();
        assert_eq!(n, 737);
    }

    #[test]
    fn sample_size_floors_at_one() {
        let n = sample_size(1.0, 0.99, 0.0, 2, 20.0).unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn sample_size_monotone_in_tolerances_below_one() {
        let rule = SampleRule::new(0.05, 2, 20.0);
        let eps_grid = [1.0, 0.7, 0.4, 0.2, 0.1];
        let deltas = [0.05, 0.02, 0.01];
        for &delta in &deltas {
            let mut prev = 0;
            for &eps in &eps_grid {
                let n = rule.sample_size(eps, delta).unwrap();
                assert!(n >= prev, "eps = {eps}, delta = {delta}: {n} < {prev}");
                prev = n;
            }
        }
    }

    fn cobb_douglas(a: f64) -> AidsParams {
        AidsParams::new(vec![a, 1.0 - a], vec![0.0, 0.0], DMatrix::zeros(2, 2)).unwrap()
    }

    fn unit_grid() -> Vec<BudgetPoint> {
        vec![
            BudgetPoint::new(vec![1.0, 1.0], 10.0),
            BudgetPoint::new(vec![0.8, 1.6], 8.0),
            BudgetPoint::new(vec![1.9, 0.6], 12.0),
        ]
    }

    #[test]
    fn erf_is_zero_on_identical_oracles() {
        let a = cobb_douglas(0.4);
        assert_eq!(erf(&a, &a.clone(), &unit_grid()).unwrap(), 0.0);
    }

    #[test]
    fn erf_constant_offset_frozen_value() {
        // Shift good 1 by 0.3 everywhere: distance is 0.3 / sqrt(2).
        let a = cobb_douglas(0.4);
        let base = a.clone();
        let shifted = FnOracle::new(2, move |p: &[f64], income: f64| {
            let mut x = base.demand(p, income)?;
            x[0] += 0.3;
            Ok(x)
        });
        let d = erf(&a, &shifted, &unit_grid()).unwrap();
        assert!((d - 0.3 / 2.0f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn erf_satisfies_the_triangle_inequality() {
        let a = cobb_douglas(0.3);
        let b = cobb_douglas(0.5);
        let c = cobb_douglas(0.8);
        let grid = unit_grid();
        let ab = erf(&a, &b, &grid).unwrap();
        let bc = erf(&b, &c, &grid).unwrap();
        let ac = erf(&a, &c, &grid).unwrap();
        assert!(ac <= ab + bc + 1e-15);
    }

    #[test]
    fn gamma_table_interpolates_and_extrapolates() {
        let table = GammaTable::new(vec![
            GammaRow {
                eps: 0.1,
                gamma: 1.0,
                members: 3,
            },
            GammaRow {
                eps: 1.0,
                gamma: 4.0,
                members: 9,
            },
        ])
        .unwrap();
        assert_eq!(table.value(0.05), 1.0, "flat below the smallest level");
        assert_eq!(table.value(0.1), 1.0);
        assert!((table.value(0.55) - 2.5).abs() < 1e-12);
        assert_eq!(table.value(1.0), 4.0);
        // Linear extrapolation with the last slope (10/3 per unit).
        assert!((table.value(1.3) - 5.0).abs() < 1e-12);
        let single = GammaTable::new(vec![GammaRow {
            eps: 0.5,
            gamma: 2.0,
            members: 1,
        }])
        .unwrap();
        assert_eq!(single.value(10.0), 2.0);
    }

    #[test]
    fn gamma_table_csv_round_trip() {
        let table = GammaTable::new(vec![
            GammaRow {
                eps: 0.01,
                gamma: 0.0,
                members: 0,
            },
            GammaRow {
                eps: 0.1,
                gamma: 3.25,
                members: 17,
            },
        ])
        .unwrap();
        let text = table.to_csv_string(&["seed=7".into()]);
        assert!(text.starts_with("# seed=7\neps,gamma,n_pairs_in_A\n"));
        let back = GammaTable::from_csv_str(&text).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn gamma_table_rejects_unsorted_rows() {
        let err = GammaTable::new(vec![
            GammaRow {
                eps: 1.0,
                gamma: 1.0,
                members: 1,
            },
            GammaRow {
                eps: 0.5,
                gamma: 2.0,
                members: 2,
            },
        ])
        .unwrap_err();
        assert!(matches!(err, LearnError::Table(_)));
    }

    fn small_settings() -> GammaSettings {
        let mut sampler = SamplerConfig::new(2);
        sampler.beta = BetaLaw::LogUniform { lo: 1e-3, hi: 0.05 };
        GammaSettings {
            kind: RestrictionKind::Homothetic { scaled: true },
            class: ClassTag::Homothetic,
            sampler,
            m_beta: None,
            pairs: 40,
            grid_points: 30,
            eps_grid: vec![1e-4, 1e-2, 1e-1, 1.0],
            variant: GammaVariant::Literal,
            seed: 11,
        }
    }

    #[test]
    fn estimated_gamma_is_nondecreasing_with_nested_membership() {
        let estimate = estimate_gamma(&small_settings()).unwrap();
        let rows = estimate.table.rows();
        assert_eq!(rows.len(), 4);
        for w in rows.windows(2) {
            assert!(w[1].gamma >= w[0].gamma);
            assert!(w[1].members >= w[0].members);
        }
        // The beta law keeps every norm above 1e-4, so that level is empty.
        assert_eq!(rows[0].members, 0);
        assert_eq!(rows[0].gamma, 0.0);
        assert!(rows[3].members > 0);
        assert!(rows[3].gamma > 0.0);
    }

    #[test]
    fn estimate_gamma_is_deterministic() {
        let a = estimate_gamma(&small_settings()).unwrap();
        let b = estimate_gamma(&small_settings()).unwrap();
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn maxmin_variant_never_exceeds_literal() {
        let mut settings = small_settings();
        settings.pairs = 20;
        let literal = estimate_gamma(&settings).unwrap();
        settings.variant = GammaVariant::MaxMin;
        let maxmin = estimate_gamma(&settings).unwrap();
        for (l, m) in literal.table.rows().iter().zip(maxmin.table.rows()) {
            assert!(m.gamma <= l.gamma + 1e-15);
        }
    }
}
