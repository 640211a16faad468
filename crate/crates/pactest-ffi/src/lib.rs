//! C ABI for the pactest library.
//!
//! Conventions: constructors return a [`PacStatus`] and write an owned
//! handle through an out pointer; each handle is released exactly once with
//! its matching `pac_*_free`, which tolerates null.  On any failure the
//! call leaves a thread-local message readable through [`pac_last_error`]
//! until the next failure on the same thread.  Strings cross the boundary
//! as NUL-terminated UTF-8, matrices as row-major `goods * goods` buffers,
//! and indices are 0-based.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use pactest::aids::{sample_params, AidsParams, ClassTag, Groups, SamplerConfig};
use pactest::dataset::{generate_dataset, Dataset, IncomeLaw, NoiseSpec, PointLaw};
use pactest::engine::{
    run_test_with_table, Decision, EngineError, TestReport, TestSchedule, TestSubject,
};
use pactest::learn::{estimate_gamma, GammaSettings, GammaTable, GammaVariant};
use pactest::prng::stream_rng;
use pactest::restrictions::{Relation, RestrictionKind};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

/// Outcome of a call.  Anything other than `Ok` leaves a message in
/// `pac_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument failed validation; the message names it.
    InvalidArgument = 2,
    /// A file could not be read, written, or parsed.
    Io = 3,
    /// Evaluation, sampling, or calibration failed numerically.
    Numeric = 4,
}

/// Preference class for parameter sampling.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacClass {
    Unrestricted = 0,
    Homothetic = 1,
    /// Requires a first group; cross-group price coefficients are zero.
    WeaklySeparable = 2,
    /// Requires a first group; additionally forces income effects to zero.
    HomotheticWeaklySeparable = 3,
}

/// Restriction family to test against.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacKind {
    /// Scaled second income derivatives vanish.
    Homothetic = 0,
    /// Cross-group Slutsky ratio equals the income-derivative ratio.
    /// Requires a first group.
    WeakSeparable = 1,
    /// Cross-group share-form Slutsky terms vanish.  Requires a first group.
    WeakSeparableHomothetic = 2,
    /// Marshallian cross effect `dx_i/dp_j` is negative.  Requires a pair.
    GrossComplements = 3,
    /// Slutsky cross effect `S_ij` is negative.  Requires a pair.
    NetComplements = 4,
    /// Marshallian cross effect is positive.  Requires a pair.
    GrossSubstitutes = 5,
    /// Slutsky cross effect is positive.  Requires a pair.
    NetSubstitutes = 6,
}

/// Per-iteration decision of the test engine.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacDecision {
    Continue = 0,
    Reject = 1,
    /// A dataset subject ran out of observations for the prescribed sample.
    DataExhausted = 2,
}

/// Restriction request: the kind plus whichever arguments it needs.
/// Zero-initialize and fill only the relevant fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PacRestriction {
    pub kind: PacKind,
    /// 0-based goods of the first group; weak-separability kinds only.
    pub first_group: *const usize,
    pub first_len: usize,
    /// 0-based goods of the tested cross effect; sign kinds only.
    pub pair_i: usize,
    pub pair_j: usize,
}

/// Test schedule overrides.  A zero field keeps the library default, so a
/// zero-initialized struct runs the standard schedule: `eps` and `delta`
/// start at (1.0, 0.05) and shrink by 3 per iteration over at most 8
/// iterations, the calibration draws 2500 pairs over a 200-point grid, and
/// dataset subjects take income and the price box from the data.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PacSchedule {
    pub eps0: f64,
    pub delta0: f64,
    /// Factor both tolerances shrink by per iteration.
    pub decay: f64,
    pub max_iterations: usize,
    /// Constant `C` of the sample-size rule.
    pub scale_c: f64,
    /// Upper bound on evaluation points drawn per iteration.
    pub point_cap: usize,
    /// Calibration pairs drawn when no gamma table is supplied.
    pub pairs: usize,
    /// Evaluation grid size of the calibration distance.
    pub grid_points: usize,
    /// Calibration income; dataset subjects default to the data's mean.
    pub income: f64,
    /// Calibration price box; dataset subjects default to the data's range.
    pub price_lo: f64,
    pub price_hi: f64,
    /// Seed of the run; 0 uses the default seed 1.
    pub seed: u64,
    /// Let a ratio-form request fall back to the share form.
    pub assume_homothetic: bool,
}

/// One row of a report's iteration trace.  `norm` and `statistic` are NaN
/// on a data-exhausted row.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PacIterationRow {
    pub iteration: usize,
    pub eps: f64,
    pub delta: f64,
    pub n_required: u64,
    pub points_used: usize,
    pub points_skipped: usize,
    pub norm: f64,
    pub statistic: f64,
    pub decision: PacDecision,
}

/// Demand-system parameters.
pub struct PacParams(AidsParams);

/// A labeled sequence of budget observations.
pub struct PacDataset(Dataset);

/// Record of one test run.
pub struct PacReport(TestReport);

fn fail(status: PacStatus, msg: impl std::fmt::Display) -> PacStatus {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).unwrap_or_default());
    status
}

macro_rules! ffi_try {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

unsafe fn in_ref<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, PacStatus> {
    if ptr.is_null() {
        return Err(fail(PacStatus::NullPointer, format!("{name} is null")));
    }
    Ok(&*ptr)
}

unsafe fn out_ref<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, PacStatus> {
    if ptr.is_null() {
        return Err(fail(PacStatus::NullPointer, format!("{name} is null")));
    }
    Ok(&mut *ptr)
}

unsafe fn in_slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], PacStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(PacStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_slice<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], PacStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(fail(PacStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn in_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, PacStatus> {
    if ptr.is_null() {
        return Err(fail(PacStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(PacStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

fn build_groups(first: &[usize], goods: usize) -> Result<Groups, PacStatus> {
    let chosen: std::collections::BTreeSet<usize> = first.iter().copied().collect();
    if chosen.len() != first.len() {
        return Err(fail(PacStatus::InvalidArgument, "first_group repeats an index"));
    }
    let second: Vec<usize> = (0..goods).filter(|g| !chosen.contains(g)).collect();
    Groups::new(first.to_vec(), second, goods)
        .map_err(|e| fail(PacStatus::InvalidArgument, e))
}

unsafe fn build_kind(r: &PacRestriction, goods: usize) -> Result<RestrictionKind, PacStatus> {
    let groups = |r: &PacRestriction| -> Result<Groups, PacStatus> {
        let first = in_slice(r.first_group, r.first_len, "first_group")?;
        if first.is_empty() {
            return Err(fail(
                PacStatus::InvalidArgument,
                "this kind needs a non-empty first_group",
            ));
        }
        build_groups(first, goods)
    };
    let pair = |r: &PacRestriction| -> Result<(usize, usize), PacStatus> {
        if r.pair_i >= goods || r.pair_j >= goods || r.pair_i == r.pair_j {
            return Err(fail(
                PacStatus::InvalidArgument,
                format!(
                    "pair ({}, {}) must name two distinct goods below {goods}",
                    r.pair_i, r.pair_j
                ),
            ));
        }
        Ok((r.pair_i, r.pair_j))
    };
    Ok(match r.kind {
        PacKind::Homothetic => RestrictionKind::Homothetic { scaled: true },
        PacKind::WeakSeparable => RestrictionKind::WeakSeparableRatio { groups: groups(r)? },
        PacKind::WeakSeparableHomothetic => {
            RestrictionKind::WeakSeparableHomothetic { groups: groups(r)? }
        }
        PacKind::GrossComplements | PacKind::NetComplements => {
            let (i, j) = pair(r)?;
            RestrictionKind::Complementarity {
                i,
                j,
                relation: Relation::Complements,
                net: r.kind == PacKind::NetComplements,
            }
        }
        PacKind::GrossSubstitutes | PacKind::NetSubstitutes => {
            let (i, j) = pair(r)?;
            RestrictionKind::Complementarity {
                i,
                j,
                relation: Relation::Substitutes,
                net: r.kind == PacKind::NetSubstitutes,
            }
        }
    })
}

fn engine_status(e: &EngineError) -> PacStatus {
    match e {
        EngineError::Config(_) => PacStatus::InvalidArgument,
        _ => PacStatus::Numeric,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread, empty if none.  The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pac_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds demand parameters from `alpha` and `beta` (length `goods`) and a
/// row-major `goods * goods` price-coefficient block, validating the adding-
/// up, homogeneity, and symmetry constraints.
///
/// # Safety
/// `alpha`, `beta`, and `gamma` must point to buffers of the stated lengths;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pac_params_new(
    goods: usize,
    alpha: *const f64,
    beta: *const f64,
    gamma: *const f64,
    out: *mut *mut PacParams,
) -> PacStatus {
    let out = ffi_try!(out_ref(out, "out"));
    let alpha = ffi_try!(in_slice(alpha, goods, "alpha"));
    let beta = ffi_try!(in_slice(beta, goods, "beta"));
    let gamma = ffi_try!(in_slice(gamma, goods * goods, "gamma"));
    match AidsParams::from_row_major(alpha.to_vec(), beta.to_vec(), gamma) {
        Ok(p) => {
            *out = Box::into_raw(Box::new(PacParams(p)));
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::InvalidArgument, e),
    }
}

/// Draws random parameters from the given class.  `first_group` and
/// `first_len` describe the first group for the separable classes and are
/// ignored otherwise.  Equal seeds give equal draws.
///
/// # Safety
/// `first_group` must point to `first_len` indices when the class requires a
/// group; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pac_params_sample(
    goods: usize,
    class: PacClass,
    first_group: *const usize,
    first_len: usize,
    seed: u64,
    out: *mut *mut PacParams,
) -> PacStatus {
    let out = ffi_try!(out_ref(out, "out"));
    let tag = match class {
        PacClass::Unrestricted => ClassTag::Unrestricted,
        PacClass::Homothetic => ClassTag::Homothetic,
        PacClass::WeaklySeparable | PacClass::HomotheticWeaklySeparable => {
            let first = ffi_try!(in_slice(first_group, first_len, "first_group"));
            if first.is_empty() {
                return fail(
                    PacStatus::InvalidArgument,
                    "this class needs a non-empty first_group",
                );
            }
            let groups = ffi_try!(build_groups(first, goods));
            if class == PacClass::WeaklySeparable {
                ClassTag::WeaklySeparable(groups)
            } else {
                ClassTag::HomotheticWeaklySeparable(groups)
            }
        }
    };
    let cfg = SamplerConfig::new(goods);
    match sample_params(&cfg, &tag, &mut stream_rng(seed, 0)) {
        Ok(p) => {
            *out = Box::into_raw(Box::new(PacParams(p)));
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::Numeric, e),
    }
}

/// Number of goods, 0 for a null handle.
///
/// # Safety
/// `params` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pac_params_goods(params: *const PacParams) -> usize {
    params.as_ref().map_or(0, |p| p.0.goods())
}

/// Whether all income-effect coefficients are zero.
///
/// # Safety
/// `params` must be a live handle or null (null reads as false).
#[no_mangle]
pub unsafe extern "C" fn pac_params_is_homothetic(params: *const PacParams) -> bool {
    params.as_ref().is_some_and(|p| p.0.is_homothetic())
}

/// Copies parameters out.  Each destination may be null to skip it; `alpha`
/// and `beta` receive `goods` values, `gamma` a row-major `goods * goods`
/// block.
///
/// # Safety
/// Non-null destinations must have the stated capacity.
#[no_mangle]
pub unsafe extern "C" fn pac_params_read(
    params: *const PacParams,
    alpha: *mut f64,
    beta: *mut f64,
    gamma: *mut f64,
) -> PacStatus {
    let p = ffi_try!(in_ref(params, "params"));
    let goods = p.0.goods();
    if !alpha.is_null() {
        std::slice::from_raw_parts_mut(alpha, goods).copy_from_slice(p.0.alpha());
    }
    if !beta.is_null() {
        std::slice::from_raw_parts_mut(beta, goods).copy_from_slice(p.0.beta());
    }
    if !gamma.is_null() {
        let dst = std::slice::from_raw_parts_mut(gamma, goods * goods);
        for i in 0..goods {
            for j in 0..goods {
                dst[i * goods + j] = p.0.gamma()[(i, j)];
            }
        }
    }
    PacStatus::Ok
}

/// Releases a parameter handle; null is ignored.
///
/// # Safety
/// `params` must be a handle from this library, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn pac_params_free(params: *mut PacParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Marshallian demand at a budget: writes `goods` quantities to `out`.
///
/// # Safety
/// `prices` and `out` must hold `goods` values; `params` must be live.
#[no_mangle]
pub unsafe extern "C" fn pac_demand(
    params: *const PacParams,
    prices: *const f64,
    income: f64,
    out: *mut f64,
) -> PacStatus {
    let p = ffi_try!(in_ref(params, "params"));
    let prices = ffi_try!(in_slice(prices, p.0.goods(), "prices"));
    let out = ffi_try!(out_slice(out, p.0.goods(), "out"));
    match p.0.demand(prices, income) {
        Ok(x) => {
            out.copy_from_slice(&x);
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::Numeric, e),
    }
}

/// Budget shares at a budget: writes `goods` shares to `out`.
///
/// # Safety
/// `prices` and `out` must hold `goods` values; `params` must be live.
#[no_mangle]
pub unsafe extern "C" fn pac_shares(
    params: *const PacParams,
    prices: *const f64,
    income: f64,
    out: *mut f64,
) -> PacStatus {
    let p = ffi_try!(in_ref(params, "params"));
    let prices = ffi_try!(in_slice(prices, p.0.goods(), "prices"));
    let out = ffi_try!(out_slice(out, p.0.goods(), "out"));
    match p.0.shares(prices, income) {
        Ok(w) => {
            out.copy_from_slice(&w);
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::Numeric, e),
    }
}

/// Translog price index at a price vector.
///
/// # Safety
/// `prices` must hold `goods` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pac_price_index(
    params: *const PacParams,
    prices: *const f64,
    out: *mut f64,
) -> PacStatus {
    let p = ffi_try!(in_ref(params, "params"));
    let prices = ffi_try!(in_slice(prices, p.0.goods(), "prices"));
    let out = ffi_try!(out_ref(out, "out"));
    match p.0.price_index(prices) {
        Ok(v) => {
            *out = v;
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::Numeric, e),
    }
}

/// Income derivative of demand: writes `goods` values to `out`.
///
/// # Safety
/// `prices` and `out` must hold `goods` values; `params` must be live.
#[no_mangle]
pub unsafe extern "C" fn pac_income_derivative(
    params: *const PacParams,
    prices: *const f64,
    income: f64,
    out: *mut f64,
) -> PacStatus {
    let p = ffi_try!(in_ref(params, "params"));
    let prices = ffi_try!(in_slice(prices, p.0.goods(), "prices"));
    let out = ffi_try!(out_slice(out, p.0.goods(), "out"));
    match p.0.income_derivative(prices, income) {
        Ok(d) => {
            out.copy_from_slice(&d);
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::Numeric, e),
    }
}

/// Slutsky substitution matrix at a budget, written row-major to `out`
/// (`goods * goods` values).
///
/// # Safety
/// `prices` must hold `goods` values and `out` `goods * goods`; `params`
/// must be live.
#[no_mangle]
pub unsafe extern "C" fn pac_slutsky(
    params: *const PacParams,
    prices: *const f64,
    income: f64,
    out: *mut f64,
) -> PacStatus {
    let p = ffi_try!(in_ref(params, "params"));
    let goods = p.0.goods();
    let prices = ffi_try!(in_slice(prices, goods, "prices"));
    let out = ffi_try!(out_slice(out, goods * goods, "out"));
    match p.0.slutsky(prices, income) {
        Ok(s) => {
            for i in 0..goods {
                for j in 0..goods {
                    out[i * goods + j] = s[(i, j)];
                }
            }
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::Numeric, e),
    }
}

/// Sample size prescribed by the learnability rule at accuracy `eps`,
/// confidence `delta`, income-Lipschitz constant `lipschitz`, dimension
/// `goods`, and scale constant `c`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pac_sample_size(
    eps: f64,
    delta: f64,
    lipschitz: f64,
    goods: usize,
    c: f64,
    out: *mut u64,
) -> PacStatus {
    let out = ffi_try!(out_ref(out, "out"));
    match pactest::learn::sample_size(eps, delta, lipschitz, goods, c) {
        Ok(n) => {
            *out = n;
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::InvalidArgument, e),
    }
}

/// Simulates `n` observations from the parameters: prices uniform on
/// `[price_lo, price_hi]`, incomes log-uniform within a factor of two of
/// `income`, quantities perturbed by uniform noise of the given variance
/// (0 disables noise).  Equal seeds give equal datasets.
///
/// # Safety
/// `label` must be a NUL-terminated string; `out` must be valid; `params`
/// must be live.
#[no_mangle]
pub unsafe extern "C" fn pac_dataset_generate(
    params: *const PacParams,
    n: usize,
    price_lo: f64,
    price_hi: f64,
    income: f64,
    noise_variance: f64,
    label: *const c_char,
    seed: u64,
    out: *mut *mut PacDataset,
) -> PacStatus {
    let out = ffi_try!(out_ref(out, "out"));
    let p = ffi_try!(in_ref(params, "params"));
    let label = ffi_try!(in_str(label, "label"));
    if !(income > 0.0) {
        return fail(PacStatus::InvalidArgument, format!("income {income} must be positive"));
    }
    let law = PointLaw::new(p.0.goods(), price_lo, price_hi, IncomeLaw::spread(income));
    let noise = if noise_variance == 0.0 {
        NoiseSpec::none()
    } else {
        NoiseSpec::uniform(noise_variance)
    };
    let mut rng = stream_rng(seed, 0);
    match generate_dataset(&p.0, n, &law, &noise, label, &mut rng) {
        Ok(d) => {
            *out = Box::into_raw(Box::new(PacDataset(d)));
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::InvalidArgument, e),
    }
}

/// Reads a dataset from CSV (`t,p_1..p_K,x_1..x_K,income`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pac_dataset_read_csv(
    path: *const c_char,
    out: *mut *mut PacDataset,
) -> PacStatus {
    let out = ffi_try!(out_ref(out, "out"));
    let path = ffi_try!(in_str(path, "path"));
    match Dataset::read_csv(path) {
        Ok(d) => {
            *out = Box::into_raw(Box::new(PacDataset(d)));
            PacStatus::Ok
        }
        Err(e) => fail(PacStatus::Io, e),
    }
}

/// Writes a dataset to CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string; `dataset` must be live.
#[no_mangle]
pub unsafe extern "C" fn pac_dataset_write_csv(
    dataset: *const PacDataset,
    path: *const c_char,
) -> PacStatus {
    let d = ffi_try!(in_ref(dataset, "dataset"));
    let path = ffi_try!(in_str(path, "path"));
    match d.0.write_csv(path) {
        Ok(()) => PacStatus::Ok,
        Err(e) => fail(PacStatus::Io, e),
    }
}

/// Number of observations, 0 for a null handle.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pac_dataset_len(dataset: *const PacDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Number of goods, 0 for a null handle.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pac_dataset_goods(dataset: *const PacDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.goods())
}

/// Copies observation `t` out.  `prices` and `quantities` may be null to
/// skip them and otherwise receive `goods` values; `income` may be null.
///
/// # Safety
/// Non-null destinations must have the stated capacity; `dataset` must be
/// live.
#[no_mangle]
pub unsafe extern "C" fn pac_dataset_observation(
    dataset: *const PacDataset,
    t: usize,
    prices: *mut f64,
    quantities: *mut f64,
    income: *mut f64,
) -> PacStatus {
    let d = ffi_try!(in_ref(dataset, "dataset"));
    let Some(obs) = d.0.observations().get(t) else {
        return fail(
            PacStatus::InvalidArgument,
            format!("observation {t} out of range ({} rows)", d.0.len()),
        );
    };
    if !prices.is_null() {
        std::slice::from_raw_parts_mut(prices, d.0.goods()).copy_from_slice(&obs.prices);
    }
    if !quantities.is_null() {
        std::slice::from_raw_parts_mut(quantities, d.0.goods()).copy_from_slice(&obs.quantities);
    }
    if !income.is_null() {
        *income = obs.income;
    }
    PacStatus::Ok
}

/// Releases a dataset handle; null is ignored.
///
/// # Safety
/// `dataset` must be a handle from this library, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn pac_dataset_free(dataset: *mut PacDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fills a schedule with the library defaults (every field zero except
/// `eps0 = 1.0`, `delta0 = 0.05`, `decay = 3.0`, `max_iterations = 8`,
/// `scale_c = 20.0`, `point_cap = 100000`, `pairs = 2500`,
/// `grid_points = 200`, `seed = 1`).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pac_schedule_default(out: *mut PacSchedule) -> PacStatus {
    let out = ffi_try!(out_ref(out, "out"));
    *out = PacSchedule {
        eps0: 1.0,
        delta0: 0.05,
        decay: 3.0,
        max_iterations: 8,
        scale_c: 20.0,
        point_cap: 100_000,
        pairs: 2500,
        grid_points: 200,
        income: 0.0,
        price_lo: 0.0,
        price_hi: 0.0,
        seed: 1,
        assume_homothetic: false,
    };
    PacStatus::Ok
}

struct RunPrep {
    schedule: TestSchedule,
    table: GammaTable,
    warnings: Vec<String>,
}

/// Builds the schedule and gamma table for a run: library defaults, then
/// data-derived income and price box for dataset subjects, then caller
/// overrides, then either the supplied table or a fresh calibration.
unsafe fn prepare(
    goods: usize,
    kind: &RestrictionKind,
    schedule: *const PacSchedule,
    gamma_table_path: *const c_char,
    data: Option<&Dataset>,
) -> Result<RunPrep, PacStatus> {
    let user = if schedule.is_null() { None } else { Some(&*schedule) };
    let seed = user.map(|s| s.seed).filter(|&s| s != 0).unwrap_or(1);

    let mut sched = match TestSchedule::dataset_default(kind, goods, seed) {
        Ok(s) => s,
        // Sign restrictions have no class to calibrate against; they run
        // only with a supplied table.
        Err(_) if !gamma_table_path.is_null() => TestSchedule::new(GammaSettings {
            kind: kind.clone(),
            class: ClassTag::Unrestricted,
            sampler: SamplerConfig::new(goods),
            m_beta: None,
            pairs: 1,
            grid_points: 1,
            eps_grid: vec![1.0],
            variant: GammaVariant::Literal,
            seed,
        }),
        Err(e) => {
            return Err(fail(
                PacStatus::InvalidArgument,
                format!("{e}; supply gamma_table_path to test this kind"),
            ))
        }
    };

    if let Some(d) = data {
        // Calibration defaults follow the data: its mean income and observed
        // price range, so distances are measured on the dataset's own scale.
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for obs in d.observations() {
            for &price in &obs.prices {
                lo = lo.min(price);
                hi = hi.max(price);
            }
        }
        if !(hi > lo) {
            lo *= 0.9;
            hi = hi * 1.1 + 1e-9;
        }
        sched.gamma.sampler.income = d.mean_income();
        sched.gamma.sampler.price_lo = lo;
        sched.gamma.sampler.price_hi = hi;
    }

    if let Some(u) = user {
        if u.eps0 > 0.0 {
            sched.eps0 = u.eps0;
        }
        if u.delta0 > 0.0 {
            sched.delta0 = u.delta0;
        }
        if u.decay > 0.0 {
            sched.decay = u.decay;
        }
        if u.max_iterations > 0 {
            sched.max_iterations = u.max_iterations;
        }
        if u.scale_c > 0.0 {
            sched.scale_c = u.scale_c;
        }
        if u.point_cap > 0 {
            sched.point_cap = u.point_cap;
        }
        if u.pairs > 0 {
            sched.gamma.pairs = u.pairs;
        }
        if u.grid_points > 0 {
            sched.gamma.grid_points = u.grid_points;
        }
        if u.income > 0.0 {
            sched.gamma.sampler.income = u.income;
        }
        if u.price_lo > 0.0 {
            sched.gamma.sampler.price_lo = u.price_lo;
        }
        if u.price_hi > 0.0 {
            sched.gamma.sampler.price_hi = u.price_hi;
        }
        sched.declare_homothetic = u.assume_homothetic;
    }

    let sampler = &sched.gamma.sampler;
    sched.points = PointLaw::new(
        goods,
        sampler.price_lo,
        sampler.price_hi,
        IncomeLaw::Fixed(sampler.income),
    );
    sched
        .validate()
        .map_err(|e| fail(PacStatus::InvalidArgument, e))?;

    let (table, warnings) = if gamma_table_path.is_null() {
        let estimate = estimate_gamma(&sched.gamma).map_err(|e| fail(PacStatus::Numeric, e))?;
        (estimate.table, estimate.warnings)
    } else {
        let path = in_str(gamma_table_path, "gamma_table_path")?;
        let table = GammaTable::read_csv(path).map_err(|e| fail(PacStatus::Io, e))?;
        (table, Vec::new())
    };
    Ok(RunPrep {
        schedule: sched,
        table,
        warnings,
    })
}

fn finish_run(
    mut report: TestReport,
    mut warnings: Vec<String>,
    out: &mut *mut PacReport,
) -> PacStatus {
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    *out = Box::into_raw(Box::new(PacReport(report)));
    PacStatus::Ok
}

/// Runs the iterative PAC test of a dataset against a restriction.
/// `schedule` may be null for the defaults; `gamma_table_path` may be null
/// to calibrate in place (required non-null for sign kinds).  A rejection
/// is a regular `Ok` outcome, reported through the handle.
///
/// # Safety
/// `data` and `restriction` must be live; `out` must be valid;
/// `gamma_table_path` must be NUL-terminated when non-null.
#[no_mangle]
pub unsafe extern "C" fn pac_test_dataset(
    data: *const PacDataset,
    restriction: *const PacRestriction,
    schedule: *const PacSchedule,
    gamma_table_path: *const c_char,
    out: *mut *mut PacReport,
) -> PacStatus {
    let out = ffi_try!(out_ref(out, "out"));
    let d = ffi_try!(in_ref(data, "data"));
    let r = ffi_try!(in_ref(restriction, "restriction"));
    let kind = ffi_try!(build_kind(r, d.0.goods()));
    let prep = ffi_try!(prepare(d.0.goods(), &kind, schedule, gamma_table_path, Some(&d.0)));
    let subject = TestSubject::data(&d.0);
    match run_test_with_table(&subject, &kind, &prep.schedule, &prep.table) {
        Ok(report) => finish_run(report, prep.warnings, out),
        Err(e) => fail(engine_status(&e), e),
    }
}

/// Runs the iterative PAC test of a closed-form demand system against a
/// restriction, drawing evaluation points from the schedule's price box.
/// Arguments follow [`pac_test_dataset`].
///
/// # Safety
/// `params` and `restriction` must be live; `label` must be NUL-terminated;
/// `out` must be valid; `gamma_table_path` must be NUL-terminated when
/// non-null.
#[no_mangle]
pub unsafe extern "C" fn pac_test_params(
    params: *const PacParams,
    label: *const c_char,
    restriction: *const PacRestriction,
    schedule: *const PacSchedule,
    gamma_table_path: *const c_char,
    out: *mut *mut PacReport,
) -> PacStatus {
    let out = ffi_try!(out_ref(out, "out"));
    let p = ffi_try!(in_ref(params, "params"));
    let label = ffi_try!(in_str(label, "label"));
    let r = ffi_try!(in_ref(restriction, "restriction"));
    let kind = ffi_try!(build_kind(r, p.0.goods()));
    let prep = ffi_try!(prepare(p.0.goods(), &kind, schedule, gamma_table_path, None));
    let subject = TestSubject::oracle(&p.0, label);
    match run_test_with_table(&subject, &kind, &prep.schedule, &prep.table) {
        Ok(report) => finish_run(report, prep.warnings, out),
        Err(e) => fail(engine_status(&e), e),
    }
}

/// Whether the run rejected the restriction.
///
/// # Safety
/// `report` must be a live handle or null (null reads as false).
#[no_mangle]
pub unsafe extern "C" fn pac_report_rejected(report: *const PacReport) -> bool {
    report.as_ref().is_some_and(|r| r.0.rejected())
}

/// 1-based iteration the run rejected at, 0 when it did not reject.
///
/// # Safety
/// `report` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pac_report_rejected_iteration(report: *const PacReport) -> usize {
    report.as_ref().map_or(0, |r| match r.0.verdict {
        pactest::engine::Verdict::Rejected { iteration } => iteration,
        _ => 0,
    })
}

/// Number of iteration rows in the trace, 0 for a null handle.
///
/// # Safety
/// `report` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pac_report_len(report: *const PacReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.rows.len())
}

/// Copies iteration row `idx` (0-based) out.
///
/// # Safety
/// `report` must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pac_report_row(
    report: *const PacReport,
    idx: usize,
    out: *mut PacIterationRow,
) -> PacStatus {
    let r = ffi_try!(in_ref(report, "report"));
    let out = ffi_try!(out_ref(out, "out"));
    let Some(row) = r.0.rows.get(idx) else {
        return fail(
            PacStatus::InvalidArgument,
            format!("row {idx} out of range ({} rows)", r.0.rows.len()),
        );
    };
    *out = PacIterationRow {
        iteration: row.iteration,
        eps: row.eps,
        delta: row.delta,
        n_required: row.n_required,
        points_used: row.points_used,
        points_skipped: row.points_skipped,
        norm: row.norm.unwrap_or(f64::NAN),
        statistic: row.statistic.unwrap_or(f64::NAN),
        decision: match row.decision {
            Decision::Continue => PacDecision::Continue,
            Decision::Reject => PacDecision::Reject,
            Decision::DataExhausted => PacDecision::DataExhausted,
        },
    };
    PacStatus::Ok
}

/// Number of warnings attached to the run.
///
/// # Safety
/// `report` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pac_report_warning_count(report: *const PacReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.warnings.len())
}

/// Copies warning `idx` into `buf` as a NUL-terminated string, truncating
/// to `cap` bytes.  Returns the full length including the NUL, or 0 when
/// `idx` is out of range.  `buf` may be null to query the length.
///
/// # Safety
/// `buf` must have capacity `cap` when non-null; `report` must be live or
/// null.
#[no_mangle]
pub unsafe extern "C" fn pac_report_warning(
    report: *const PacReport,
    idx: usize,
    buf: *mut c_char,
    cap: usize,
) -> usize {
    let Some(r) = report.as_ref() else { return 0 };
    let Some(text) = r.0.warnings.get(idx) else { return 0 };
    let bytes = text.as_bytes();
    if !buf.is_null() && cap > 0 {
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
    }
    bytes.len() + 1
}

/// Writes the full report (config header, iteration trace, verdict) to CSV.
///
/// # Safety
/// `path` must be NUL-terminated; `report` must be live.
#[no_mangle]
pub unsafe extern "C" fn pac_report_write_csv(
    report: *const PacReport,
    path: *const c_char,
) -> PacStatus {
    let r = ffi_try!(in_ref(report, "report"));
    let path = ffi_try!(in_str(path, "path"));
    match pactest::report::write_report_csv(&r.0, path) {
        Ok(()) => PacStatus::Ok,
        Err(e) => fail(PacStatus::Io, e),
    }
}

/// Releases a report handle; null is ignored.
///
/// # Safety
/// `report` must be a handle from this library, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn pac_report_free(report: *mut PacReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
