//! Command-line harness behind the `pactest` binary: the simulation
//! studies, dataset testing, and gamma tabulation.
//!
//! Configuration is declarative: a flat `key=value` text file plus
//! same-named command-line flags, with flags winning.  Every output file
//! embeds the fully resolved configuration and seeds, and nothing
//! run-dependent beyond them, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::aids::{AidsParams, BetaLaw, ClassTag, GammaLaw, Groups, SamplerConfig};
use crate::dataset::{generate_dataset, Dataset, IncomeLaw, NoiseSpec, PointLaw};
use crate::engine::{
    derive_seed, run_test_with_table, EngineError, TestSchedule, TestSubject,
};
use crate::learn::{estimate_gamma, GammaSettings, GammaTable, GammaVariant, SampleRule};
use crate::prng::stream_rng;
use crate::report::{self, StudyCell};
use crate::restrictions::{Relation, RestrictionKind};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PACTEST_OUT_DIR";

/// Stream offset for dataset generation, clear of the engine's streams.
const STREAM_DATASET: u64 = 1 << 41;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Data(#[from] crate::dataset::DataError),
    #[error(transparent)]
    Generate(#[from] crate::dataset::GenerateError),
    #[error(transparent)]
    Learn(#[from] crate::learn::LearnError),
    #[error(transparent)]
    Report(#[from] crate::report::ReportError),
    #[error("failed to read config {path}: {source}")]
    ConfigIo {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to create output directory {path}: {source}")]
    OutDir {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Parser, Debug)]
#[command(
    name = "pactest",
    version,
    about = "PAC tests of consumer-choice data against preference classes"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation study and emit Tables-1/2-shaped reports
    Simulate(SimulateArgs),
    /// Test a dataset CSV against a preference class
    Test(TestArgs),
    /// Tabulate a gamma calibration table
    Gamma(GammaArgs),
}

/// Flags shared by all subcommands.  Each flag overrides the same-named
/// key of the `--config` file.
#[derive(Args, Debug, Default, Clone)]
struct CommonArgs {
    /// Flat key=value config file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $PACTEST_OUT_DIR, else current directory)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Base seed for every stochastic quantity
    #[arg(long)]
    seed: Option<u64>,
    /// First iteration's eps
    #[arg(long)]
    eps0: Option<f64>,
    /// First iteration's delta
    #[arg(long)]
    delta0: Option<f64>,
    /// Per-iteration shrink factor for eps and delta
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Constant C of the sample-size rule
    #[arg(long)]
    scale_c: Option<f64>,
    /// Income for calibration and fresh evaluation points
    #[arg(long)]
    income: Option<f64>,
    #[arg(long)]
    price_lo: Option<f64>,
    #[arg(long)]
    price_hi: Option<f64>,
    /// Cap on freshly drawn points per iteration
    #[arg(long)]
    point_cap: Option<usize>,
    /// Preference pairs sampled by the gamma calibration
    #[arg(long)]
    pairs: Option<usize>,
    /// Evaluation grid size for the gamma calibration
    #[arg(long)]
    grid_points: Option<usize>,
    /// Gamma estimator variant: literal | max-min
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Study to run: homotheticity | weak-separability
    #[arg(long)]
    study: Option<String>,
    /// Comma-separated deviation grid (default 1e-1,1e-2,1e-3,1e-4,1e-5)
    #[arg(long)]
    grid: Option<String>,
    /// Group partition for weak separability, 1-based (default "1;2,3")
    #[arg(long)]
    groups: Option<String>,
    /// Also write one generated dataset CSV per grid cell
    #[arg(long)]
    emit_datasets: bool,
    /// Rows per emitted dataset
    #[arg(long)]
    dataset_rows: Option<usize>,
    /// Noise on emitted quantities: none | uniform | truncated-gaussian
    #[arg(long)]
    noise_family: Option<String>,
    #[arg(long)]
    noise_variance: Option<f64>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset CSV path
    #[arg(long)]
    data: Option<PathBuf>,
    /// Restriction kind: homothetic | weak-separable |
    /// weak-separable-homothetic | gross-complements | net-complements |
    /// gross-substitutes | net-substitutes
    #[arg(long)]
    kind: Option<String>,
    /// Group partition, 1-based, e.g. "1;2,3"
    #[arg(long)]
    groups: Option<String>,
    /// Good pair for sign restrictions, 1-based, e.g. "1,2"
    #[arg(long)]
    pair: Option<String>,
    /// Resolve a ratio-form request as if the subject were homothetic
    #[arg(long)]
    assume_homothetic: bool,
    /// Precomputed gamma table CSV; skips calibration
    #[arg(long)]
    gamma_table: Option<PathBuf>,
    /// Report CSV path (default: test_report.csv in the output directory)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GammaArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Restriction kind (same names as `test`)
    #[arg(long)]
    kind: Option<String>,
    /// In-class family: homothetic | weakly-separable |
    /// homothetic-weakly-separable | unrestricted
    #[arg(long)]
    class: Option<String>,
    /// Number of goods (default: from --groups, else 2)
    #[arg(long)]
    goods: Option<usize>,
    #[arg(long)]
    groups: Option<String>,
    #[arg(long)]
    pair: Option<String>,
    /// Comma-separated eps levels; "inf" is allowed as the last level
    #[arg(long)]
    eps_grid: Option<String>,
    /// Income-response law for unrestricted draws:
    /// zero | uniform:MAX | log-uniform:LO,HI
    #[arg(long)]
    m_beta: Option<String>,
    /// Income-response law for in-class draws where the class allows it
    #[arg(long)]
    beta_law: Option<String>,
    /// Price-response magnitude law: zero | fixed:S | log-uniform:LO,HI
    #[arg(long)]
    gamma_law: Option<String>,
    /// Output CSV path (default: gamma_table.csv in the output directory)
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Merges a config file with flags (flags win) and records every resolved
/// harness-level key for the output headers.
struct Resolver {
    cfg: BTreeMap<String, String>,
    echo: Vec<(String, String)>,
}

impl Resolver {
    fn load(path: Option<&Path>) -> Result<Self, HarnessError> {
        let mut cfg = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|source| HarnessError::ConfigIo {
                path: path.display().to_string(),
                source,
            })?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    HarnessError::Usage(format!(
                        "config line {}: expected key=value, found `{line}`",
                        idx + 1
                    ))
                })?;
                cfg.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self {
            cfg,
            echo: Vec::new(),
        })
    }

    fn raw(&mut self, key: &str, flag: Option<String>) -> Option<String> {
        let file_value = self.cfg.remove(key);
        flag.or(file_value)
    }

    fn parse_one<T: FromStr>(key: &str, s: &str) -> Result<T, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        s.parse()
            .map_err(|e| HarnessError::Usage(format!("key `{key}`: bad value `{s}`: {e}")))
    }

    /// Resolves flag > config > default without recording; used for fields
    /// the schedule echoes itself.
    fn pick<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            self.cfg.remove(key);
            return Ok(v);
        }
        match self.cfg.remove(key) {
            Some(s) => Self::parse_one(key, &s),
            None => Ok(default),
        }
    }

    /// Optional variant of [`Resolver::pick`]: no default, `None` when
    /// neither the flag nor the file sets the key.
    fn pick_opt<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            self.cfg.remove(key);
            return Ok(Some(v));
        }
        match self.cfg.remove(key) {
            Some(s) => Self::parse_one(key, &s).map(Some),
            None => Ok(None),
        }
    }

    /// Like [`Resolver::pick`] but records the resolved value.
    fn value<T: FromStr + ToString>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.pick(key, flag, default)?;
        self.echo.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    fn opt_string(&mut self, key: &str, flag: Option<String>) -> Option<String> {
        let v = self.raw(key, flag);
        if let Some(v) = &v {
            self.echo.push((key.to_string(), v.clone()));
        }
        v
    }

    fn flag_bool(&mut self, key: &str, flag: bool) -> Result<bool, HarnessError> {
        let v = if flag {
            self.cfg.remove(key);
            true
        } else {
            match self.cfg.remove(key) {
                Some(s) => Self::parse_one(key, &s)?,
                None => false,
            }
        };
        self.echo.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    /// Output directory: flag > config > environment > current directory.
    fn out_dir(&mut self, flag: Option<PathBuf>) -> Result<PathBuf, HarnessError> {
        let dir = flag
            .or_else(|| self.cfg.remove("out-dir").map(PathBuf::from))
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|source| HarnessError::OutDir {
            path: dir.display().to_string(),
            source,
        })?;
        self.echo
            .push(("out-dir".to_string(), dir.display().to_string()));
        Ok(dir)
    }

    /// Rejects leftover config keys so typos surface instead of being
    /// silently ignored.
    fn finish(self) -> Result<Vec<(String, String)>, HarnessError> {
        if let Some(key) = self.cfg.keys().next() {
            return Err(HarnessError::Usage(format!("unknown config key `{key}`")));
        }
        Ok(self.echo)
    }
}

/// Two-good homotheticity-study DGP: equal base shares, no price terms,
/// income responses `(d, -d)`.
pub fn homothetic_dgp(d: f64) -> AidsParams {
    AidsParams::new(vec![0.5, 0.5], vec![d, -d], DMatrix::zeros(2, 2))
        .expect("deviation parameters satisfy the constraints by construction")
}

/// Weak-separability-study DGP for a singleton first group: homothetic with
/// cross-group price responses of size `d` and the diagonal adjusted to keep
/// zero row sums.
pub fn separable_dgp(d: f64, groups: &Groups) -> Result<AidsParams, HarnessError> {
    if groups.first().len() != 1 {
        return Err(HarnessError::Usage(format!(
            "the weak-separability study needs a singleton first group, got {groups}"
        )));
    }
    let k = groups.goods();
    let lead = groups.first()[0];
    let mut gamma = DMatrix::zeros(k, k);
    for &j in groups.second() {
        gamma[(lead, j)] = d;
        gamma[(j, lead)] = d;
        gamma[(j, j)] = -d;
    }
    gamma[(lead, lead)] = -((k - 1) as f64) * d;
    AidsParams::new(vec![1.0 / k as f64; k], vec![0.0; k], gamma).map_err(|e| {
        HarnessError::Usage(format!("deviation {d} produces invalid parameters: {e}"))
    })
}

/// The canonical three-good partition `{1},{2,3}` both studies and the
/// docs use.
pub fn default_groups() -> Groups {
    Groups::new(vec![0], vec![1, 2], 3).expect("static partition is valid")
}

fn parse_groups(s: &str, goods: usize) -> Result<Groups, HarnessError> {
    let (first, second) = s.split_once(';').ok_or_else(|| {
        HarnessError::Usage(format!(
            "groups `{s}`: expected two 1-based lists split by `;`, e.g. \"1;2,3\""
        ))
    })?;
    let parse_list = |part: &str| -> Result<Vec<usize>, HarnessError> {
        part.split(',')
            .map(|tok| {
                let idx: usize = tok.trim().parse().map_err(|e| {
                    HarnessError::Usage(format!("groups `{s}`: bad index `{tok}`: {e}"))
                })?;
                if idx == 0 {
                    return Err(HarnessError::Usage(format!(
                        "groups `{s}`: indices are 1-based"
                    )));
                }
                Ok(idx - 1)
            })
            .collect()
    };
    Groups::new(parse_list(first)?, parse_list(second)?, goods)
        .map_err(|e| HarnessError::Usage(format!("groups `{s}`: {e}")))
}

fn parse_pair(s: &str, goods: usize) -> Result<(usize, usize), HarnessError> {
    let err = || {
        HarnessError::Usage(format!(
            "pair `{s}`: expected two distinct 1-based goods, e.g. \"1,2\""
        ))
    };
    let (a, b) = s.split_once(',').ok_or_else(err)?;
    let i: usize = a.trim().parse().map_err(|_| err())?;
    let j: usize = b.trim().parse().map_err(|_| err())?;
    if i == 0 || j == 0 || i == j || i > goods || j > goods {
        return Err(HarnessError::Usage(format!(
            "pair `{s}` invalid for {goods} goods"
        )));
    }
    Ok((i - 1, j - 1))
}

fn parse_kind(
    s: &str,
    groups: Option<&Groups>,
    pair: Option<(usize, usize)>,
) -> Result<RestrictionKind, HarnessError> {
    let need_groups = || {
        groups.cloned().ok_or_else(|| {
            HarnessError::Usage(format!("kind `{s}` requires --groups, e.g. \"1;2,3\""))
        })
    };
    let need_pair = || {
        pair.ok_or_else(|| {
            HarnessError::Usage(format!("kind `{s}` requires --pair, e.g. \"1,2\""))
        })
    };
    let sign = |relation: Relation, net: bool| -> Result<RestrictionKind, HarnessError> {
        let (i, j) = need_pair()?;
        Ok(RestrictionKind::Complementarity {
            i,
            j,
            relation,
            net,
        })
    };
    match s {
        "homothetic" => Ok(RestrictionKind::Homothetic { scaled: true }),
        "weak-separable" => Ok(RestrictionKind::WeakSeparableRatio {
            groups: need_groups()?,
        }),
        "weak-separable-homothetic" => Ok(RestrictionKind::WeakSeparableHomothetic {
            groups: need_groups()?,
        }),
        "gross-complements" => sign(Relation::Complements, false),
        "net-complements" => sign(Relation::Complements, true),
        "gross-substitutes" => sign(Relation::Substitutes, false),
        "net-substitutes" => sign(Relation::Substitutes, true),
        other => Err(HarnessError::Usage(format!(
            "unknown kind `{other}`; expected homothetic, weak-separable, \
             weak-separable-homothetic, or a sign restriction \
             (gross-complements, net-complements, gross-substitutes, net-substitutes)"
        ))),
    }
}

fn parse_class(s: &str, groups: Option<&Groups>) -> Result<ClassTag, HarnessError> {
    let need_groups = || {
        groups.cloned().ok_or_else(|| {
            HarnessError::Usage(format!("class `{s}` requires --groups, e.g. \"1;2,3\""))
        })
    };
    match s {
        "unrestricted" => Ok(ClassTag::Unrestricted),
        "homothetic" => Ok(ClassTag::Homothetic),
        "weakly-separable" => Ok(ClassTag::WeaklySeparable(need_groups()?)),
        "homothetic-weakly-separable" => {
            Ok(ClassTag::HomotheticWeaklySeparable(need_groups()?))
        }
        other => Err(HarnessError::Usage(format!(
            "unknown class `{other}`; expected unrestricted, homothetic, \
             weakly-separable, or homothetic-weakly-separable"
        ))),
    }
}

fn parse_beta_law(s: &str) -> Result<BetaLaw, HarnessError> {
    if s == "zero" {
        return Ok(BetaLaw::Zero);
    }
    if let Some(max) = s.strip_prefix("uniform:") {
        let max: f64 = Resolver::parse_one("beta law", max)?;
        return Ok(BetaLaw::Uniform { max });
    }
    if let Some(range) = s.strip_prefix("log-uniform:") {
        if let Some((lo, hi)) = range.split_once(',') {
            return Ok(BetaLaw::LogUniform {
                lo: Resolver::parse_one("beta law", lo.trim())?,
                hi: Resolver::parse_one("beta law", hi.trim())?,
            });
        }
    }
    Err(HarnessError::Usage(format!(
        "bad income-response law `{s}`; expected zero, uniform:MAX, or log-uniform:LO,HI"
    )))
}

fn parse_gamma_law(s: &str) -> Result<GammaLaw, HarnessError> {
    if s == "zero" {
        return Ok(GammaLaw::Zero);
    }
    if let Some(scale) = s.strip_prefix("fixed:") {
        let scale: f64 = Resolver::parse_one("gamma law", scale)?;
        return Ok(GammaLaw::Fixed { scale });
    }
    if let Some(range) = s.strip_prefix("log-uniform:") {
        if let Some((lo, hi)) = range.split_once(',') {
            return Ok(GammaLaw::LogUniform {
                lo: Resolver::parse_one("gamma law", lo.trim())?,
                hi: Resolver::parse_one("gamma law", hi.trim())?,
            });
        }
    }
    Err(HarnessError::Usage(format!(
        "bad price-response law `{s}`; expected zero, fixed:S, or log-uniform:LO,HI"
    )))
}

fn parse_variant(s: &str) -> Result<GammaVariant, HarnessError> {
    match s {
        "literal" => Ok(GammaVariant::Literal),
        "max-min" => Ok(GammaVariant::MaxMin),
        other => Err(HarnessError::Usage(format!(
            "unknown variant `{other}`; expected literal or max-min"
        ))),
    }
}

fn parse_noise(family: &str, variance: f64) -> Result<NoiseSpec, HarnessError> {
    match family {
        "none" => Ok(NoiseSpec::none()),
        "uniform" => Ok(NoiseSpec::uniform(variance)),
        "truncated-gaussian" => Ok(NoiseSpec::truncated_gaussian(variance)),
        other => Err(HarnessError::Usage(format!(
            "unknown noise family `{other}`; expected none, uniform, or truncated-gaussian"
        ))),
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Applies the shared schedule overrides.  These fields appear in the
/// schedule's own echo, so the resolver does not record them again.
fn apply_common(
    schedule: &mut TestSchedule,
    r: &mut Resolver,
    args: &CommonArgs,
) -> Result<(), HarnessError> {
    schedule.eps0 = r.pick("eps0", args.eps0, schedule.eps0)?;
    schedule.delta0 = r.pick("delta0", args.delta0, schedule.delta0)?;
    schedule.decay = r.pick("decay", args.decay, schedule.decay)?;
    schedule.max_iterations =
        r.pick("max-iterations", args.max_iterations, schedule.max_iterations)?;
    schedule.scale_c = r.pick("scale-c", args.scale_c, schedule.scale_c)?;
    schedule.point_cap = r.pick("point-cap", args.point_cap, schedule.point_cap)?;
    schedule.gamma.pairs = r.pick("pairs", args.pairs, schedule.gamma.pairs)?;
    schedule.gamma.grid_points =
        r.pick("grid-points", args.grid_points, schedule.gamma.grid_points)?;
    if let Some(v) = r.pick_opt("variant", args.variant.clone())? {
        schedule.gamma.variant = parse_variant(&v)?;
    }
    let income = r.pick("income", args.income, schedule.gamma.sampler.income)?;
    let price_lo = r.pick("price-lo", args.price_lo, schedule.gamma.sampler.price_lo)?;
    let price_hi = r.pick("price-hi", args.price_hi, schedule.gamma.sampler.price_hi)?;
    schedule.gamma.sampler.income = income;
    schedule.gamma.sampler.price_lo = price_lo;
    schedule.gamma.sampler.price_hi = price_hi;
    schedule.points = PointLaw::new(
        schedule.points.goods,
        price_lo,
        price_hi,
        IncomeLaw::Fixed(income),
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32, HarnessError> {
    let mut r = Resolver::load(args.common.config.as_deref())?;
    let study = r.value("study", args.study.clone(), "homotheticity".to_string())?;
    if study != "homotheticity" && study != "weak-separability" {
        return Err(HarnessError::Usage(format!(
            "unknown study `{study}`; expected homotheticity or weak-separability"
        )));
    }
    let grid_str = r.value(
        "grid",
        args.grid.clone(),
        "1e-1,1e-2,1e-3,1e-4,1e-5".to_string(),
    )?;
    let labels: Vec<String> = grid_str
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if labels.is_empty() {
        return Err(HarnessError::Usage("empty deviation grid".into()));
    }
    let deviations: Vec<f64> = labels
        .iter()
        .map(|s| {
            let d: f64 = Resolver::parse_one("grid", s)?;
            if !(d.is_finite() && d >= 0.0) {
                return Err(HarnessError::Usage(format!(
                    "grid deviation `{s}` must be finite and nonnegative"
                )));
            }
            Ok(d)
        })
        .collect::<Result<_, _>>()?;
    let seed = r.pick("seed", args.common.seed, 1u64)?;
    let out_dir = r.out_dir(args.common.out_dir.clone())?;

    let groups = if study == "weak-separability" {
        let spec = r.value("groups", args.groups.clone(), "1;2,3".to_string())?;
        let goods = spec.matches(',').count() + 2;
        Some(parse_groups(&spec, goods)?)
    } else {
        if let Some(spec) = args.groups.clone().or_else(|| r.cfg.remove("groups")) {
            return Err(HarnessError::Usage(format!(
                "groups `{spec}` only apply to the weak-separability study"
            )));
        }
        None
    };

    let emit_datasets = r.flag_bool("emit-datasets", args.emit_datasets)?;
    let dataset_rows = r.value("dataset-rows", args.dataset_rows, 100usize)?;
    let noise_family = r.value("noise-family", args.noise_family.clone(), "none".to_string())?;
    let noise_variance = r.value("noise-variance", args.noise_variance, 1e-4)?;
    let noise = parse_noise(&noise_family, noise_variance)?;
    if dataset_rows == 0 && emit_datasets {
        return Err(HarnessError::Usage("dataset-rows must be >= 1".into()));
    }

    let mut schedule = match &groups {
        None => TestSchedule::homothetic_study(seed),
        Some(g) => TestSchedule::weak_separable_study(g.clone(), seed),
    };
    apply_common(&mut schedule, &mut r, &args.common)?;
    schedule.validate()?;
    let harness_pairs = r.finish()?;

    let kind = match &groups {
        None => RestrictionKind::Homothetic { scaled: true },
        Some(g) => RestrictionKind::WeakSeparableHomothetic { groups: g.clone() },
    };
    let param_name = if groups.is_none() { "beta" } else { "gamma_1j" };

    let estimate = estimate_gamma(&schedule.gamma)?;

    let cells: Vec<StudyCell> = labels
        .par_iter()
        .zip(&deviations)
        .enumerate()
        .map(|(idx, (label, &d))| -> Result<StudyCell, HarnessError> {
            let params = match &groups {
                None => homothetic_dgp(d),
                Some(g) => separable_dgp(d, g)?,
            };
            let mut cell_schedule = schedule.clone();
            cell_schedule.seed = derive_seed(seed, idx as u64);
            let subject = TestSubject::oracle(&params, format!("{param_name}={label}"));
            let report = run_test_with_table(&subject, &kind, &cell_schedule, &estimate.table)?;
            Ok(StudyCell {
                label: label.clone(),
                report,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut footnotes: Vec<String> = Vec::new();
    if groups.is_none() && deviations.iter().any(|&d| d == 1e-5) {
        // The final column's published reference row does not reproduce
        // under the sample-size rule; print both it and the computed rows.
        let lipschitz = 1e-5 / schedule.gamma.sampler.income;
        let rule = SampleRule::new(lipschitz, 2, schedule.scale_c);
        let n_ref = rule.sample_size(0.33, 0.016)?;
        let eps2 = schedule.eps0 / schedule.decay;
        let delta2 = schedule.delta0 / schedule.decay;
        let n2 = rule.sample_size(eps2, delta2)?;
        footnotes.push("reference row (final column): eps=0.33 delta=0.016 n=100".to_string());
        footnotes.push(format!(
            "the sample-size rule gives n={n_ref} at (0.33, 0.016) and n={n2} at this \
             schedule's iteration-2 arguments (eps={eps2:.4}, delta={delta2:.4}); the \
             reference row's n=100 does not reproduce under it"
        ));
    }
    for w in &estimate.warnings {
        footnotes.push(format!("calibration: {w}"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for cell in &cells {
        for w in &cell.report.warnings {
            if seen.insert(w.clone()) {
                footnotes.push(format!("cells: {w}"));
            }
        }
    }

    let file_stem = study.replace('-', "_");
    let title = format!("{study} study ({kind} restriction)");
    let table_text = report::study_table_text(&title, param_name, &cells, &footnotes);

    let mut header = harness_pairs.clone();
    header.extend(schedule.echo());
    header.push(("config-digest".into(), schedule.digest()));
    let cells_csv = report::study_csv(&header, &cells);

    let table_path = out_dir.join(format!("{file_stem}_table.txt"));
    report::write_string(&table_path, &table_text)?;
    let csv_path = out_dir.join(format!("{file_stem}_cells.csv"));
    report::write_string(&csv_path, &cells_csv)?;
    let gamma_comments: Vec<String> = header
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .chain(estimate.warnings.iter().map(|w| format!("warning={w}")))
        .collect();
    let gamma_path = out_dir.join(format!("{file_stem}_gamma.csv"));
    estimate
        .table
        .write_csv(&gamma_path, &gamma_comments)?;

    if emit_datasets {
        let income = schedule.gamma.sampler.income;
        let law = PointLaw::new(
            schedule.points.goods,
            schedule.points.price_lo,
            schedule.points.price_hi,
            IncomeLaw::spread(income),
        );
        for (idx, (label, &d)) in labels.iter().zip(&deviations).enumerate() {
            let params = match &groups {
                None => homothetic_dgp(d),
                Some(g) => separable_dgp(d, g)?,
            };
            let mut rng = stream_rng(derive_seed(seed, idx as u64), STREAM_DATASET);
            let dataset_label = format!("{study}:{param_name}={label}");
            let data = generate_dataset(&params, dataset_rows, &law, &noise, dataset_label, &mut rng)?;
            let path = out_dir.join(format!("dataset_{file_stem}_{}.csv", sanitize(label)));
            data.write_csv(&path)?;
        }
    }

    print!("{table_text}");
    println!("table: {}", table_path.display());
    println!("cells: {}", csv_path.display());
    println!("gamma: {}", gamma_path.display());
    Ok(0)
}

fn cmd_test(args: TestArgs) -> Result<i32, HarnessError> {
    let mut r = Resolver::load(args.common.config.as_deref())?;
    let data_path = r
        .opt_string("data", args.data.clone().map(|p| p.display().to_string()))
        .ok_or_else(|| HarnessError::Usage("missing --data <csv>".into()))?;
    let data = Dataset::read_csv(&data_path)?;
    let goods = data.goods();

    let kind_str = r
        .opt_string("kind", args.kind.clone())
        .ok_or_else(|| HarnessError::Usage("missing --kind".into()))?;
    let groups = match r.opt_string("groups", args.groups.clone()) {
        Some(spec) => Some(parse_groups(&spec, goods)?),
        None => None,
    };
    let pair = match r.opt_string("pair", args.pair.clone()) {
        Some(spec) => Some(parse_pair(&spec, goods)?),
        None => None,
    };
    let kind = parse_kind(&kind_str, groups.as_ref(), pair)?;
    let seed = r.pick("seed", args.common.seed, 1u64)?;
    let out_dir = r.out_dir(args.common.out_dir.clone())?;
    let assume_homothetic = r.flag_bool("assume-homothetic", args.assume_homothetic)?;
    let gamma_table_path = r.opt_string(
        "gamma-table",
        args.gamma_table.clone().map(|p| p.display().to_string()),
    );
    let out_path = match args.out.clone().or_else(|| r.cfg.remove("out").map(PathBuf::from)) {
        Some(p) => p,
        None => out_dir.join("test_report.csv"),
    };

    let mut schedule = match TestSchedule::dataset_default(&kind, goods, seed) {
        Ok(s) => s,
        // Sign restrictions have no class to calibrate against; they run
        // only with a supplied table.
        Err(_) if gamma_table_path.is_some() => {
            let settings = GammaSettings {
                kind: kind.clone(),
                class: ClassTag::Unrestricted,
                sampler: SamplerConfig::new(goods),
                m_beta: None,
                pairs: 1,
                grid_points: 1,
                eps_grid: vec![1.0],
                variant: GammaVariant::Literal,
                seed,
            };
            TestSchedule::new(settings)
        }
        Err(e) => return Err(e.into()),
    };

    // Calibration defaults follow the data: its mean income and observed
    // price range, so distances are measured on the dataset's own scale.
    let points = data.points();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for p in &points {
        for &price in &p.prices {
            lo = lo.min(price);
            hi = hi.max(price);
        }
    }
    if !(hi > lo) {
        lo *= 0.9;
        hi = hi * 1.1 + 1e-9;
    }
    schedule.gamma.sampler.income = data.mean_income();
    schedule.gamma.sampler.price_lo = lo;
    schedule.gamma.sampler.price_hi = hi;
    schedule.points = PointLaw::new(goods, lo, hi, IncomeLaw::Fixed(data.mean_income()));
    apply_common(&mut schedule, &mut r, &args.common)?;
    schedule.declare_homothetic = assume_homothetic;
    schedule.validate()?;
    let harness_pairs = r.finish()?;

    let (table, cal_warnings) = match &gamma_table_path {
        Some(path) => (GammaTable::read_csv(path)?, Vec::new()),
        None => {
            let estimate = estimate_gamma(&schedule.gamma)?;
            (estimate.table, estimate.warnings)
        }
    };

    let subject = TestSubject::data(&data);
    let mut report = run_test_with_table(&subject, &kind, &schedule, &table)?;
    let mut warnings = cal_warnings;
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    report.config.extend(harness_pairs);

    report::write_report_csv(&report, &out_path)?;

    println!("subject: {}", report.subject);
    println!("kind: {}", report.kind);
    if let Some(note) = &report.fallback {
        println!("fallback: {note}");
    }
    for row in &report.rows {
        match (row.norm, row.statistic) {
            (Some(norm), Some(t)) => println!(
                "iteration {}: eps={} delta={} n={} norm={norm:.6e} T_n={t:.6} -> {}",
                row.iteration, row.eps, row.delta, row.n_required, row.decision
            ),
            _ => println!(
                "iteration {}: eps={} delta={} n={} -> {} (dataset has {} rows)",
                row.iteration,
                row.eps,
                row.delta,
                row.n_required,
                row.decision,
                data.len()
            ),
        }
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!("verdict: {}", report.verdict);
    println!("report: {}", out_path.display());
    Ok(if report.rejected() { 2 } else { 0 })
}

fn cmd_gamma(args: GammaArgs) -> Result<i32, HarnessError> {
    let mut r = Resolver::load(args.common.config.as_deref())?;
    let kind_str = r
        .opt_string("kind", args.kind.clone())
        .ok_or_else(|| HarnessError::Usage("missing --kind".into()))?;
    let groups_spec = r.opt_string("groups", args.groups.clone());
    let goods = match (r.pick("goods", args.goods, 0usize)?, &groups_spec) {
        (0, Some(spec)) => spec.matches(',').count() + 2,
        (0, None) => 2,
        (g, _) => g,
    };
    r.echo.push(("goods".into(), goods.to_string()));
    let groups = match &groups_spec {
        Some(spec) => Some(parse_groups(spec, goods)?),
        None => None,
    };
    let pair = match r.opt_string("pair", args.pair.clone()) {
        Some(spec) => Some(parse_pair(&spec, goods)?),
        None => None,
    };
    let kind = parse_kind(&kind_str, groups.as_ref(), pair)?;
    let default_class = match &kind {
        RestrictionKind::Homothetic { .. } => Some("homothetic"),
        RestrictionKind::WeakSeparableRatio { .. } => Some("weakly-separable"),
        RestrictionKind::WeakSeparableHomothetic { .. } => {
            Some("homothetic-weakly-separable")
        }
        RestrictionKind::Complementarity { .. } => None,
    };
    let class_str = match r.opt_string("class", args.class.clone()) {
        Some(s) => s,
        None => default_class
            .ok_or_else(|| {
                HarnessError::Usage("--class is required for sign restrictions".into())
            })?
            .to_string(),
    };
    let class = parse_class(&class_str, groups.as_ref())?;
    let seed = r.value("seed", args.common.seed, 1u64)?;
    let out_dir = r.out_dir(args.common.out_dir.clone())?;
    let out_path = match args.out.clone().or_else(|| r.cfg.remove("out").map(PathBuf::from)) {
        Some(p) => p,
        None => out_dir.join("gamma_table.csv"),
    };

    let eps_grid_str = r.value(
        "eps-grid",
        args.eps_grid.clone(),
        "1e-2,1e-1,1,10".to_string(),
    )?;
    let eps_grid: Vec<f64> = eps_grid_str
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            if tok == "inf" {
                Ok(f64::INFINITY)
            } else {
                Resolver::parse_one::<f64>("eps-grid", tok)
            }
        })
        .collect::<Result<_, _>>()?;

    let mut sampler = SamplerConfig::new(goods);
    sampler.income = r.value("income", args.common.income, sampler.income)?;
    sampler.price_lo = r.value("price-lo", args.common.price_lo, sampler.price_lo)?;
    sampler.price_hi = r.value("price-hi", args.common.price_hi, sampler.price_hi)?;
    if let Some(spec) = r.opt_string("beta-law", args.beta_law.clone()) {
        sampler.beta = parse_beta_law(&spec)?;
    }
    if let Some(spec) = r.opt_string("gamma-law", args.gamma_law.clone()) {
        sampler.gamma = parse_gamma_law(&spec)?;
    }
    let m_beta = match r.opt_string("m-beta", args.m_beta.clone()) {
        Some(spec) => Some(parse_beta_law(&spec)?),
        None => None,
    };
    let pairs = r.value("pairs", args.common.pairs, 2000usize)?;
    let grid_points = r.value("grid-points", args.common.grid_points, 200usize)?;
    let variant = match r.opt_string("variant", args.common.variant.clone()) {
        Some(s) => parse_variant(&s)?,
        None => GammaVariant::Literal,
    };
    // Schedule-only flags are meaningless here; surface them as errors.
    let pairs_echo = r.finish()?;

    let settings = GammaSettings {
        kind: kind.clone(),
        class,
        sampler,
        m_beta,
        pairs,
        grid_points,
        eps_grid,
        variant,
        seed,
    };
    let estimate = estimate_gamma(&settings)?;
    let comments: Vec<String> = pairs_echo
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .chain([format!("resolved-kind={kind}")])
        .chain(estimate.warnings.iter().map(|w| format!("warning={w}")))
        .collect();
    estimate.table.write_csv(&out_path, &comments)?;

    for row in estimate.table.rows() {
        println!("eps={} gamma={} members={}", row.eps, row.gamma, row.members);
    }
    for w in &estimate.warnings {
        println!("warning: {w}");
    }
    println!("table: {}", out_path.display());
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Test(args) => cmd_test(args),
        Command::Gamma(args) => cmd_gamma(args),
    }
}

/// Parses the process arguments and runs the requested command.  Returns
/// the process exit code: 0 success (or "not rejected" for `test`), 2
/// "rejected", 1 error or inconclusive.
pub fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_parse_one_based_partitions() {
        let g = parse_groups("1;2,3", 3).expect("parses");
        assert_eq!(g.first(), &[0]);
        assert_eq!(g.second(), &[1, 2]);
        assert!(parse_groups("0;1,2", 3).is_err(), "indices are 1-based");
        assert!(parse_groups("1,2", 3).is_err(), "needs a semicolon");
        assert!(parse_groups("1;2", 3).is_err(), "must cover all goods");
    }

    #[test]
    fn kind_parsing_requires_the_right_arguments() {
        assert!(matches!(
            parse_kind("homothetic", None, None),
            Ok(RestrictionKind::Homothetic { scaled: true })
        ));
        assert!(parse_kind("weak-separable", None, None).is_err());
        let groups = default_groups();
        assert!(parse_kind("weak-separable", Some(&groups), None).is_ok());
        assert!(parse_kind("gross-complements", None, None).is_err());
        assert!(matches!(
            parse_kind("net-substitutes", None, Some((0, 1))),
            Ok(RestrictionKind::Complementarity {
                relation: Relation::Substitutes,
                net: true,
                ..
            })
        ));
        assert!(parse_kind("garp", None, None).is_err());
    }

    #[test]
    fn law_strings_round_trip() {
        assert_eq!(parse_beta_law("zero").expect("parses"), BetaLaw::Zero);
        assert_eq!(
            parse_beta_law("uniform:0.1").expect("parses"),
            BetaLaw::Uniform { max: 0.1 }
        );
        assert_eq!(
            parse_beta_law("log-uniform:3e-5,0.1").expect("parses"),
            BetaLaw::LogUniform { lo: 3e-5, hi: 0.1 }
        );
        assert!(parse_beta_law("normal:1").is_err());
        assert_eq!(
            parse_gamma_law("fixed:0.1").expect("parses"),
            GammaLaw::Fixed { scale: 0.1 }
        );
        assert_eq!(
            parse_gamma_law("log-uniform:3e-3,0.15").expect("parses"),
            GammaLaw::LogUniform { lo: 3e-3, hi: 0.15 }
        );
    }

    #[test]
    fn separable_dgp_builds_valid_parameters_for_any_singleton_lead() {
        let groups = default_groups();
        let params = separable_dgp(0.1, &groups).expect("valid");
        assert_eq!(params.gamma()[(0, 1)], 0.1);
        assert_eq!(params.gamma()[(0, 0)], -0.2);
        let wide = Groups::new(vec![1], vec![0, 2, 3], 4).expect("valid groups");
        let params = separable_dgp(0.05, &wide).expect("valid");
        assert_eq!(params.gamma()[(1, 0)], 0.05);
        assert_eq!(params.gamma()[(1, 1)], -3.0 * 0.05);
        let nonsingleton = Groups::new(vec![0, 1], vec![2], 3).expect("valid groups");
        assert!(separable_dgp(0.1, &nonsingleton).is_err());
    }

    #[test]
    fn resolver_merges_flags_over_config_over_defaults() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed=7\npairs=9\n# comment\n\n").expect("write");
        let mut r = Resolver::load(Some(&path)).expect("loads");
        // Flag wins over the file.
        assert_eq!(r.pick("seed", Some(11u64), 1).expect("resolves"), 11);
        // File wins over the default.
        assert_eq!(r.pick("pairs", None::<usize>, 2000).expect("resolves"), 9);
        // Default applies when neither is present.
        assert_eq!(r.pick("grid-points", None::<usize>, 200).expect("resolves"), 200);
        assert!(r.finish().is_ok());
    }

    #[test]
    fn resolver_rejects_unknown_and_malformed_keys() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "no-such-key=1\n").expect("write");
        let r = Resolver::load(Some(&path)).expect("loads");
        let err = r.finish().expect_err("must fail");
        assert!(err.to_string().contains("no-such-key"));
        std::fs::write(&path, "just a line\n").expect("write");
        assert!(Resolver::load(Some(&path)).is_err());
    }

    #[test]
    fn noise_and_variant_strings_parse() {
        assert!(parse_noise("none", 0.0).is_ok());
        assert!(parse_noise("uniform", 1e-4).is_ok());
        assert!(parse_noise("truncated-gaussian", 1e-4).is_ok());
        assert!(parse_noise("poisson", 1e-4).is_err());
        assert!(matches!(parse_variant("literal"), Ok(GammaVariant::Literal)));
        assert!(matches!(parse_variant("max-min"), Ok(GammaVariant::MaxMin)));
        assert!(parse_variant("exact").is_err());
    }

    #[test]
    fn sanitize_keeps_filenames_portable() {
        assert_eq!(sanitize("1e-1"), "1e-1");
        assert_eq!(sanitize("a/b c"), "a_b_c");
    }
}
