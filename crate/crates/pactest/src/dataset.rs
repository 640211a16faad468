//! Observed budget problems: the dataset container, simulated data with
//! optional measurement noise, and the CSV exchange format
//! `t,p_1,...,p_K,x_1,...,x_K,income`.
//!
//! Floats are written with the shortest representation that round-trips, so a
//! write/read cycle reproduces every field exactly.  Lines starting with `#`
//! carry provenance (`# key=value`) and are skipped on ingestion.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::aids::{AidsParams, BudgetPoint, EvalError};
use crate::tol;

/// One observed budget problem: prices, chosen bundle, income.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: usize,
    pub prices: Vec<f64>,
    pub quantities: Vec<f64>,
    pub income: f64,
}

impl Observation {
    fn validate(&self, goods: usize) -> Result<(), String> {
        if self.prices.len() != goods || self.quantities.len() != goods {
            return Err(format!(
                "expected {} goods, found {} prices and {} quantities",
                goods,
                self.prices.len(),
                self.quantities.len()
            ));
        }
        if let Some(i) = self.prices.iter().position(|p| !p.is_finite() || *p <= 0.0) {
            return Err(format!("price p_{} = {} must be positive", i + 1, self.prices[i]));
        }
        if let Some(i) = self
            .quantities
            .iter()
            .position(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(format!(
                "quantity x_{} = {} must be nonnegative",
                i + 1,
                self.quantities[i]
            ));
        }
        if !self.income.is_finite() || self.income <= 0.0 {
            return Err(format!("income {} must be positive", self.income));
        }
        let spent: f64 = self
            .prices
            .iter()
            .zip(&self.quantities)
            .map(|(p, x)| p * x)
            .sum();
        if spent > self.income * (1.0 + tol::BUDGET_SLACK) {
            return Err(format!(
                "bundle costs {spent}, exceeding income {} beyond slack",
                self.income
            ));
        }
        Ok(())
    }
}

/// Dataset ingestion or validation failure.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("header mismatch: {0}")]
    Header(String),
    #[error("observation {t}: {msg}")]
    Observation { t: usize, msg: String },
    #[error("dataset has no observations")]
    Empty,
}

/// A labeled sequence of observations over a fixed set of goods.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    label: String,
    goods: usize,
    observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(
        label: impl Into<String>,
        goods: usize,
        observations: Vec<Observation>,
    ) -> Result<Self, DataError> {
        if observations.is_empty() {
            return Err(DataError::Empty);
        }
        for obs in &observations {
            obs.validate(goods)
                .map_err(|msg| DataError::Observation { t: obs.t, msg })?;
        }
        Ok(Self {
            label: label.into(),
            goods,
            observations,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn goods(&self) -> usize {
        self.goods
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn points(&self) -> Vec<BudgetPoint> {
        self.observations
            .iter()
            .map(|o| BudgetPoint::new(o.prices.clone(), o.income))
            .collect()
    }

    pub fn mean_income(&self) -> f64 {
        self.observations.iter().map(|o| o.income).sum::<f64>() / self.len() as f64
    }

    pub fn min_income(&self) -> f64 {
        self.observations
            .iter()
            .map(|o| o.income)
            .fold(f64::INFINITY, f64::min)
    }

    /// Serializes to CSV with a `# label=` provenance comment.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# label={}", self.label);
        let mut header = String::from("t");
        for i in 1..=self.goods {
            let _ = write!(header, ",p_{i}");
        }
        for i in 1..=self.goods {
            let _ = write!(header, ",x_{i}");
        }
        header.push_str(",income");
        out.push_str(&header);
        out.push('\n');
        for obs in &self.observations {
            let _ = write!(out, "{}", obs.t);
            for p in &obs.prices {
                let _ = write!(out, ",{p}");
            }
            for x in &obs.quantities {
                let _ = write!(out, ",{x}");
            }
            let _ = writeln!(out, ",{}", obs.income);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Parses CSV text.  `fallback_label` applies when no `# label=` comment
    /// is present.  Parse errors carry 1-based file line numbers.
    pub fn from_csv_str(text: &str, fallback_label: &str) -> Result<Self, DataError> {
        let mut label: Option<String> = None;
        let mut header: Option<(usize, Vec<String>)> = None;
        let mut observations = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(value) = comment.strip_prefix("label=") {
                    label.get_or_insert_with(|| value.trim().to_string());
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            match &header {
                None => {
                    let goods = expected_goods(fields.len()).ok_or_else(|| DataError::Header(
                        format!("{} columns do not fit t,p_1..p_K,x_1..x_K,income", fields.len()),
                    ))?;
                    let expected = expected_header(goods);
                    let found: Vec<String> = fields.iter().map(|f| f.trim().to_string()).collect();
                    if found != expected {
                        return Err(DataError::Header(format!(
                            "expected `{}`, found `{}`",
                            expected.join(","),
                            found.join(",")
                        )));
                    }
                    header = Some((goods, found));
                }
                Some((goods, _)) => {
                    let goods = *goods;
                    if fields.len() != 2 * goods + 2 {
                        return Err(DataError::Parse {
                            line: line_no,
                            msg: format!(
                                "expected {} fields, found {}",
                                2 * goods + 2,
                                fields.len()
                            ),
                        });
                    }
                    let t: usize = fields[0].trim().parse().map_err(|e| DataError::Parse {
                        line: line_no,
                        msg: format!("bad index `{}`: {e}", fields[0]),
                    })?;
                    let parse_f64 = |field: &str| -> Result<f64, DataError> {
                        field.trim().parse().map_err(|e| DataError::Parse {
                            line: line_no,
                            msg: format!("bad number `{field}`: {e}"),
                        })
                    };
                    let mut prices = Vec::with_capacity(goods);
                    for field in &fields[1..=goods] {
                        prices.push(parse_f64(field)?);
                    }
                    let mut quantities = Vec::with_capacity(goods);
                    for field in &fields[goods + 1..=2 * goods] {
                        quantities.push(parse_f64(field)?);
                    }
                    let income = parse_f64(fields[2 * goods + 1])?;
                    observations.push(Observation {
                        t,
                        prices,
                        quantities,
                        income,
                    });
                }
            }
        }
        let (goods, _) = header.ok_or(DataError::Empty)?;
        Dataset::new(label.unwrap_or_else(|| fallback_label.to_string()), goods, observations)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text, &format!("ingested:{}", path.display()))
    }
}

fn expected_goods(columns: usize) -> Option<usize> {
    // columns = 2K + 2
    if columns >= 4 && columns % 2 == 0 {
        Some((columns - 2) / 2)
    } else {
        None
    }
}

fn expected_header(goods: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 1..=goods {
        h.push(format!("p_{i}"));
    }
    for i in 1..=goods {
        h.push(format!("x_{i}"));
    }
    h.push("income".to_string());
    h
}

/// Income component of the point law.
#[derive(Debug, Clone, PartialEq)]
pub enum IncomeLaw {
    Fixed(f64),
    /// Log-uniform on `[lo, hi]`; generated datasets use this so the income
    /// response of the demand system is identified from the data.
    LogUniform { lo: f64, hi: f64 },
}

impl std::fmt::Display for IncomeLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IncomeLaw::Fixed(v) => write!(f, "fixed({v})"),
            IncomeLaw::LogUniform { lo, hi } => write!(f, "log-uniform({lo},{hi})"),
        }
    }
}

impl IncomeLaw {
    /// Spread `[base/2, 2 base]` around a reference income.
    pub fn spread(base: f64) -> Self {
        IncomeLaw::LogUniform {
            lo: base / 2.0,
            hi: base * 2.0,
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            IncomeLaw::Fixed(v) => *v,
            IncomeLaw::LogUniform { lo, .. } => *lo,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            IncomeLaw::Fixed(v) => *v,
            IncomeLaw::LogUniform { lo, hi } => {
                if hi > lo {
                    rng.random_range(lo.ln()..hi.ln()).exp()
                } else {
                    *lo
                }
            }
        }
    }
}

/// Law for drawing evaluation points: prices i.i.d. uniform on the box,
/// income from its own law.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLaw {
    pub goods: usize,
    pub price_lo: f64,
    pub price_hi: f64,
    pub income: IncomeLaw,
}

impl PointLaw {
    pub fn new(goods: usize, price_lo: f64, price_hi: f64, income: IncomeLaw) -> Self {
        Self {
            goods,
            price_lo,
            price_hi,
            income,
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> BudgetPoint {
        let prices: Vec<f64> = (0..self.goods)
            .map(|_| rng.random_range(self.price_lo..=self.price_hi))
            .collect();
        BudgetPoint::new(prices, self.income.draw(rng))
    }

    pub fn draw_many<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<BudgetPoint> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

/// Measurement noise family applied to quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    None,
    Uniform,
    TruncatedGaussian,
}

/// Noise specification: family plus a variance bound.  Uniform noise uses
/// half-width `sqrt(3 V)` so its variance equals the bound; the Gaussian is
/// truncated at two standard deviations, keeping mean zero and variance below
/// the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub variance: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            family: NoiseFamily::None,
            variance: 0.0,
        }
    }

    pub fn uniform(variance: f64) -> Self {
        Self {
            family: NoiseFamily::Uniform,
            variance,
        }
    }

    pub fn truncated_gaussian(variance: f64) -> Self {
        Self {
            family: NoiseFamily::TruncatedGaussian,
            variance,
        }
    }

    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.family {
            NoiseFamily::None => 0.0,
            NoiseFamily::Uniform => {
                let a = (3.0 * self.variance).sqrt();
                if a > 0.0 {
                    rng.random_range(-a..=a)
                } else {
                    0.0
                }
            }
            NoiseFamily::TruncatedGaussian => {
                let sigma = self.variance.sqrt();
                if sigma == 0.0 {
                    return 0.0;
                }
                let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
                loop {
                    let z = normal.sample(rng);
                    if z.abs() <= 2.0 * sigma {
                        return z;
                    }
                }
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("demand undefined after {attempts} attempts at observation {t}: {last}")]
    UndefinedRegion {
        t: usize,
        attempts: usize,
        last: String,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Simulates `n` observations from a demand system.  Points where demand is
/// undefined are redrawn, up to a bounded number of attempts per observation.
/// Noisy bundles are clipped at zero and rescaled back onto the budget line,
/// so every observation satisfies the budget identity exactly.
pub fn generate_dataset<R: Rng>(
    params: &AidsParams,
    n: usize,
    law: &PointLaw,
    noise: &NoiseSpec,
    label: impl Into<String>,
    rng: &mut R,
) -> Result<Dataset, GenerateError> {
    if n == 0 {
        return Err(GenerateError::Config("need at least one observation".into()));
    }
    if law.goods != params.goods() {
        return Err(GenerateError::Config(format!(
            "point law has {} goods, parameters have {}",
            law.goods,
            params.goods()
        )));
    }
    const MAX_ATTEMPTS: usize = 100;
    let mut observations = Vec::with_capacity(n);
    for t in 1..=n {
        let mut last = String::new();
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let point = law.draw(rng);
            match params.demand(&point.prices, point.income) {
                Ok(x) => {
                    found = Some((point, x));
                    break;
                }
                Err(e @ EvalError::UndefinedDemand(_)) => {
                    last = e.to_string();
                }
                Err(e) => return Err(GenerateError::Eval(e)),
            }
        }
        let Some((point, mut quantities)) = found else {
            return Err(GenerateError::UndefinedRegion {
                t,
                attempts: MAX_ATTEMPTS,
                last,
            });
        };
        if noise.family != NoiseFamily::None {
            for q in quantities.iter_mut() {
                *q = (*q + noise.draw(rng)).max(0.0);
            }
            let spent: f64 = point
                .prices
                .iter()
                .zip(&quantities)
                .map(|(p, x)| p * x)
                .sum();
            if spent <= 0.0 {
                return Err(GenerateError::Config(
                    "noise variance too large: a noisy bundle collapsed to zero".into(),
                ));
            }
            let scale = point.income / spent;
            for q in quantities.iter_mut() {
                *q *= scale;
            }
        }
        observations.push(Observation {
            t,
            prices: point.prices,
            quantities,
            income: point.income,
        });
    }
    Ok(Dataset::new(label, params.goods(), observations)?)
}
