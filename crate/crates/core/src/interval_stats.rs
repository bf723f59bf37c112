//! Binomial confidence intervals and the partial order used to compare them.
//!
//! Two estimators are provided: a normal-approximation (Wilson-form) interval
//! for well-populated counts, and exact tail-equation bounds found by
//! bisection for small samples. [`interval_for`] picks between them using
//! the usual `min(y, n - y) >= 5` rule and consults the precomputed
//! [`ExactTable`] before solving anything.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Bound equality tolerance used by [`compare`].
pub const EQUALITY_TOLERANCE: f64 = 1e-9;

/// Width below which bisection stops. Well inside the 1e-7 root tolerance.
const BISECTION_WIDTH: f64 = 1e-12;

/// Smallest `min(y, n - y)` for which the normal approximation is trusted.
pub const MIN_EXPECTED_COUNT: u64 = 5;

static BUILTIN_TABLE_TEXT: &str = include_str!("../data/exact_table.txt");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("exact bounds need a per-tail alpha in (0, 0.5], got {0}")]
    ExactAlpha(f64),
    #[error("invalid trial counts: {y} successes out of {n} trials")]
    InvalidCounts { y: u64, n: u64 },
    #[error("insufficient data: the reference event has no occurrences")]
    InsufficientData,
    #[error("intervals at different alpha levels cannot be compared ({0} vs {1})")]
    AlphaMismatch(f64, f64),
    #[error("invalid probability interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("table line {line}: {msg}")]
    TableParse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// How an interval was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Approximate,
    Exact,
    /// A point value with no sampling uncertainty attached.
    Degenerate,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Approximate => "approx",
            Method::Exact => "exact",
            Method::Degenerate => "degenerate",
        })
    }
}

/// A closed subinterval of [0, 1] tagged with the alpha level it was built at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbInterval {
    lo: f64,
    hi: f64,
    alpha: f64,
    method: Method,
}

impl ProbInterval {
    pub fn new(lo: f64, hi: f64, alpha: f64, method: Method) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(StatsError::InvalidInterval { lo, hi });
        }
        check_alpha(alpha)?;
        Ok(Self { lo, hi, alpha, method })
    }

    /// A known probability, carried at alpha = 1.
    pub fn point(p: f64) -> Result<Self> {
        Self::new(p, p, 1.0, Method::Degenerate)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }

    /// True when `other` lies inside `self`, allowing for rounding noise.
    pub fn encloses(&self, other: &ProbInterval, tol: f64) -> bool {
        self.lo <= other.lo + tol && other.hi <= self.hi + tol
    }
}

/// Prints `[lo,hi]` at four decimals, or at full precision with `{:#}`.
impl fmt::Display for ProbInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if f.alternate() {
            write!(f, "[{},{}]", self.lo, self.hi)
        } else {
            write!(f, "[{:.4},{:.4}]", self.lo, self.hi)
        }
    }
}

/// `y` successes observed in `n` Bernoulli trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialCounts {
    n: u64,
    y: u64,
}

impl TrialCounts {
    pub fn new(y: u64, n: u64) -> Result<Self> {
        if y > n {
            return Err(StatsError::InvalidCounts { y, n });
        }
        Ok(Self { n, y })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn y(&self) -> u64 {
        self.y
    }

    pub fn failures(&self) -> u64 {
        self.n - self.y
    }

    pub fn point_estimate(&self) -> Option<f64> {
        (self.n > 0).then(|| self.y as f64 / self.n as f64)
    }

    fn require_trials(self) -> Result<Self> {
        if self.n == 0 {
            Err(StatsError::InsufficientData)
        } else {
            Ok(self)
        }
    }
}

impl fmt::Display for TrialCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} y={}", self.n, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparison {
    Less,
    Greater,
    Equal,
    Incomparable,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidAlpha(alpha))
    }
}

/// Two-sided standard normal critical value: `P[Z < z] = 1 - alpha / 2`.
pub fn z_quantile(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(0.0);
    }
    Ok(Normal::standard().inverse_cdf(1.0 - alpha / 2.0))
}

/// Normal-approximation interval for `y` successes in `n` trials.
pub fn approx_interval(counts: TrialCounts, alpha: f64) -> Result<ProbInterval> {
    let counts = counts.require_trials()?;
    let z = z_quantile(alpha)?;
    let (n, y) = (counts.n as f64, counts.y as f64);
    let z2 = z * z;
    let centre = y + z2 / 2.0;
    let half = z * (y * (n - y) / n + z2 / 4.0).sqrt();
    let denom = n + z2;
    // at y = 0 and y = n the bounds are exactly 0 and 1; rounding can miss them
    let lo = if counts.y == 0 { 0.0 } else { ((centre - half) / denom).clamp(0.0, 1.0) };
    let hi = if counts.y == counts.n { 1.0 } else { ((centre + half) / denom).clamp(0.0, 1.0) };
    ProbInterval::new(lo, hi, alpha, Method::Approximate)
}

/// Exact bounds: each tail of the binomial carries mass `alpha`.
///
/// The lower bound solves `P[X >= y; p] = alpha` and the upper bound solves
/// `P[X <= y; p] = alpha`. At `y = 0` the lower bound is 0 and at `y = n`
/// the upper bound is 1. The result is therefore a `1 - 2 * alpha` central
/// interval in textbook terms.
pub fn exact_interval(counts: TrialCounts, alpha: f64) -> Result<ProbInterval> {
    let counts = counts.require_trials()?;
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(StatsError::ExactAlpha(alpha));
    }
    let (n, y) = (counts.n, counts.y);
    // Upper tail rises with p, lower tail falls with p.
    let lo = if y == 0 { 0.0 } else { bisect(|p| upper_tail(n, y, p) - alpha, true) };
    let hi = if y == n { 1.0 } else { bisect(|p| lower_tail(n, y, p) - alpha, false) };
    ProbInterval::new(lo, hi, alpha, Method::Exact)
}

/// Whether the normal approximation is acceptable for these counts.
pub fn approximation_valid(counts: TrialCounts) -> bool {
    counts.n > 0 && counts.y.min(counts.failures()) >= MIN_EXPECTED_COUNT
}

/// Approximate interval when the counts support it, exact bounds otherwise.
pub fn interval_for(counts: TrialCounts, alpha: f64) -> Result<ProbInterval> {
    let counts = counts.require_trials()?;
    if approximation_valid(counts) {
        return approx_interval(counts, alpha);
    }
    if let Some(hit) = ExactTable::builtin().lookup(counts, alpha) {
        return Ok(hit);
    }
    exact_interval(counts, alpha)
}

/// Orders intervals by strict separation; overlapping intervals are incomparable.
pub fn compare(a: &ProbInterval, b: &ProbInterval) -> Result<Comparison> {
    if (a.alpha - b.alpha).abs() > 1e-12 {
        return Err(StatsError::AlphaMismatch(a.alpha, b.alpha));
    }
    let same = (a.lo - b.lo).abs() <= EQUALITY_TOLERANCE && (a.hi - b.hi).abs() <= EQUALITY_TOLERANCE;
    Ok(if same {
        Comparison::Equal
    } else if a.hi < b.lo {
        Comparison::Less
    } else if b.hi < a.lo {
        Comparison::Greater
    } else {
        Comparison::Incomparable
    })
}

/// `P[X >= y]` for `X ~ Binomial(n, p)`.
pub fn upper_tail(n: u64, y: u64, p: f64) -> f64 {
    if y == 0 {
        return 1.0;
    }
    sum_pmf(n, y..=n, p)
}

/// `P[X <= y]` for `X ~ Binomial(n, p)`.
pub fn lower_tail(n: u64, y: u64, p: f64) -> f64 {
    if y >= n {
        return 1.0;
    }
    sum_pmf(n, 0..=y, p)
}

fn sum_pmf(n: u64, range: std::ops::RangeInclusive<u64>, p: f64) -> f64 {
    if p <= 0.0 {
        return if range.contains(&0) { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if range.contains(&n) { 1.0 } else { 0.0 };
    }
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    // ln C(n, i), built up incrementally from ln C(n, 0) = 0.
    let mut ln_choose = 0.0;
    let mut total = 0.0;
    for i in 0..=*range.end() {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= *range.start() {
            total += (ln_choose + i as f64 * ln_p + (n - i) as f64 * ln_q).exp();
        }
    }
    total.min(1.0)
}

/// Root of a monotone function on [0, 1].
fn bisect(f: impl Fn(f64) -> f64, increasing: bool) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let value = f(mid);
        if (value < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Alpha levels are keyed in millionths so `0.05` parsed from text and
/// `0.05` written in code land in the same slot.
fn alpha_key(alpha: f64) -> u64 {
    (alpha * 1e6).round() as u64
}

/// Precomputed exact bounds, one row per `(n, y, alpha)`.
///
/// Text form: `n y alpha lo hi` per line with bounds at six decimals; blank
/// lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactTable {
    rows: HashMap<(u64, u64, u64), (f64, f64)>,
}

impl ExactTable {
    pub fn generate(n_max: u64, alphas: &[f64]) -> Result<Self> {
        let mut rows = HashMap::new();
        for &alpha in alphas {
            for n in 1..=n_max {
                for y in 0..=n {
                    let iv = exact_interval(TrialCounts::new(y, n)?, alpha)?;
                    rows.insert((n, y, alpha_key(alpha)), (round6(iv.lo), round6(iv.hi)));
                }
            }
        }
        Ok(Self { rows })
    }

    /// The table compiled into the crate (n up to 40, alpha 0.05 and 0.01).
    pub fn builtin() -> &'static ExactTable {
        static TABLE: OnceLock<ExactTable> = OnceLock::new();
        TABLE.get_or_init(|| BUILTIN_TABLE_TEXT.parse().expect("builtin exact table is well formed"))
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN_TABLE_TEXT
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn lookup(&self, counts: TrialCounts, alpha: f64) -> Option<ProbInterval> {
        let &(lo, hi) = self.rows.get(&(counts.n, counts.y, alpha_key(alpha)))?;
        ProbInterval::new(lo, hi, alpha, Method::Exact).ok()
    }

    /// Rows sorted by alpha (descending), then n, then y.
    pub fn render(&self) -> String {
        let mut keys: Vec<_> = self.rows.keys().copied().collect();
        keys.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut out = String::from("# exact binomial bounds, per-tail alpha\n# n y alpha lo hi\n");
        for key in keys {
            let (lo, hi) = self.rows[&key];
            let alpha = key.2 as f64 / 1e6;
            out.push_str(&format!("{} {} {} {:.6} {:.6}\n", key.0, key.1, alpha, lo, hi));
        }
        out
    }
}

impl FromStr for ExactTable {
    type Err = StatsError;

    fn from_str(text: &str) -> Result<Self> {
        let mut rows = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| StatsError::TableParse { line: idx + 1, msg: msg.to_string() };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(err("expected `n y alpha lo hi`"));
            }
            let n: u64 = fields[0].parse().map_err(|_| err("bad n"))?;
            let y: u64 = fields[1].parse().map_err(|_| err("bad y"))?;
            let alpha: f64 = fields[2].parse().map_err(|_| err("bad alpha"))?;
            let lo: f64 = fields[3].parse().map_err(|_| err("bad lower bound"))?;
            let hi: f64 = fields[4].parse().map_err(|_| err("bad upper bound"))?;
            if y > n || n == 0 || !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
                return Err(err("row out of range"));
            }
            check_alpha(alpha).map_err(|_| err("alpha out of range"))?;
            rows.insert((n, y, alpha_key(alpha)), (lo, hi));
        }
        Ok(Self { rows })
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}
