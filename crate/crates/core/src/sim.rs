//! Seeded Monte Carlo studies of the QQ estimators and the normality test.
//!
//! Seven studies cover the questions the estimators raise in practice:
//!
//! * `A-profile`: which plotting-position offset makes the QQ slope the best
//!   estimator of the normal sd.
//! * `B-efficiency`: QQ slope versus the sample standard deviation.
//! * `C-censoring`: precision lost to left censoring, against the fitted
//!   efficiency models.
//! * `D-winsor`: effective sample size lost to winsorizing.
//! * `E-boxcox`: the max-QQr Box-Cox power versus the pseudolikelihood one.
//! * `F-calibrate`: refits the normality-test null models from fresh draws
//!   and measures the test's size against the shipped coefficients.
//! * `G-power`: power of the normality test against increasing right skew.
//!
//! Every study is deterministic given its [`StudyConfig`] (seed included):
//! replicate `rep` of grid cell `cell` always draws from the substream
//! `(cell << 32) | rep`, and reductions run in a fixed order, so reports are
//! bit-identical across runs and thread counts. Where a study compares
//! settings (offsets, censor fractions, winsor counts, shift powers), all
//! settings of a replicate reuse one sample, so contrasts are paired and
//! their Monte Carlo error is computed from the paired differences.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::RngStream;
use crate::normtest::{test_normality, CalibrationCoefficients, TestVariant};
use crate::qqfit::{
    censored_efficiency_limit, censored_efficiency_mean, censored_efficiency_sd, fit_censored,
    fit_full, fit_winsorized, Sample,
};
use crate::scores::PlottingPosition;
use crate::shapefit::{fit_boxcox_pl, fit_boxcox_qqr, DEFAULT_LAMBDA_RANGE};

// ──────────────────────────────────────────────────────────────────────────
// Configuration
// ──────────────────────────────────────────────────────────────────────────

/// The available studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StudyId {
    #[serde(rename = "A-profile")]
    ScoreProfile,
    #[serde(rename = "B-efficiency")]
    SlopeEfficiency,
    #[serde(rename = "C-censoring")]
    Censoring,
    #[serde(rename = "D-winsor")]
    Winsor,
    #[serde(rename = "E-boxcox")]
    Boxcox,
    #[serde(rename = "F-calibrate")]
    Calibrate,
    #[serde(rename = "G-power")]
    Power,
}

impl StudyId {
    pub const ALL: [StudyId; 7] = [
        StudyId::ScoreProfile,
        StudyId::SlopeEfficiency,
        StudyId::Censoring,
        StudyId::Winsor,
        StudyId::Boxcox,
        StudyId::Calibrate,
        StudyId::Power,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StudyId::ScoreProfile => "A-profile",
            StudyId::SlopeEfficiency => "B-efficiency",
            StudyId::Censoring => "C-censoring",
            StudyId::Winsor => "D-winsor",
            StudyId::Boxcox => "E-boxcox",
            StudyId::Calibrate => "F-calibrate",
            StudyId::Power => "G-power",
        }
    }
}

impl std::fmt::Display for StudyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StudyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StudyId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter {
                name: "study".into(),
                reason: format!(
                    "unknown study {s:?}; expected one of {}",
                    StudyId::ALL.map(StudyId::as_str).join(", ")
                ),
            })
    }
}

/// Full description of one study run. Optional fields fall back to
/// per-study defaults (see [`StudyConfig::default_for`]); reports echo the
/// config with all defaults filled in, so a report can be reproduced from
/// its own echo alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study: StudyId,
    /// Monte Carlo replicates per grid cell; at least 100.
    pub replicates: usize,
    pub sample_sizes: Vec<usize>,
    pub seed: RngStream,
    /// `A-profile`: plotting-position offsets to profile, within [0, 0.9].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<f64>>,
    /// `C-censoring` and the censored arm of `F-calibrate`: fractions
    /// censored (k/n), each in (0, 0.5].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censor_fractions: Option<Vec<f64>>,
    /// `D-winsor`: per-tail winsor counts, each in 1..=5. A w = 0 baseline
    /// cell is always added.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winsor_counts: Option<Vec<usize>>,
    /// `E-boxcox`: true powers to generate from; subset of {-2, -1.75, ..., 2}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    /// `G-power`: skewing powers, each in [1, 2].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_powers: Option<Vec<f64>>,
    /// `F-calibrate`: which test variants to calibrate; censored variants
    /// run over `censor_fractions`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<TestVariant>>,
    /// `F-calibrate` and `G-power`: test size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl StudyConfig {
    /// The desk-scale default configuration for a study.
    pub fn default_for(study: StudyId) -> StudyConfig {
        let replicates = match study {
            StudyId::ScoreProfile => 5_000,
            StudyId::SlopeEfficiency | StudyId::Censoring => 10_000,
            StudyId::Winsor => 20_000,
            StudyId::Boxcox => 2_000,
            StudyId::Calibrate => 2_000,
            StudyId::Power => 5_000,
        };
        let sample_sizes = match study {
            StudyId::SlopeEfficiency => vec![30, 60, 120, 240],
            StudyId::Censoring => vec![60, 120, 240],
            StudyId::Winsor => vec![80, 120, 160, 200, 240],
            StudyId::Calibrate => {
                vec![60, 80, 100, 120, 160, 200, 240, 320, 400, 480, 640, 840, 1080]
            }
            _ => vec![120],
        };
        StudyConfig {
            study,
            replicates,
            sample_sizes,
            seed: RngStream::new(1),
            offsets: match study {
                StudyId::ScoreProfile => {
                    // 0, 0.05, ..., 0.9 plus the classic 0.375 compromise.
                    let mut grid: Vec<f64> = (0..=18).map(|i| i as f64 * 0.05).collect();
                    grid.push(0.375);
                    grid.sort_by(|a, b| a.total_cmp(b));
                    Some(grid)
                }
                _ => None,
            },
            censor_fractions: match study {
                StudyId::Censoring => Some((1..=10).map(|i| i as f64 * 0.05).collect()),
                _ => None,
            },
            winsor_counts: match study {
                StudyId::Winsor => Some(vec![1, 2, 3, 4, 5]),
                _ => None,
            },
            lambda_grid: match study {
                StudyId::Boxcox => Some((-4..=4).map(|i| i as f64 * 0.5).collect()),
                _ => None,
            },
            shift_powers: match study {
                StudyId::Power => Some((10..=20).map(|i| i as f64 / 10.0).collect()),
                _ => None,
            },
            variants: match study {
                StudyId::Calibrate => Some(vec![
                    TestVariant::Full,
                    TestVariant::Winsorized,
                    TestVariant::Boxcox,
                    TestVariant::BoxcoxWinsorized,
                ]),
                _ => None,
            },
            alpha: match study {
                StudyId::Calibrate | StudyId::Power => Some(0.05),
                _ => None,
            },
        }
    }

    /// Fill unset fields with the study defaults and validate everything.
    pub fn normalized(&self) -> Result<StudyConfig> {
        let defaults = StudyConfig::default_for(self.study);
        let cfg = StudyConfig {
            study: self.study,
            replicates: self.replicates,
            sample_sizes: self.sample_sizes.clone(),
            seed: self.seed,
            offsets: self.offsets.clone().or(defaults.offsets),
            censor_fractions: self.censor_fractions.clone().or(defaults.censor_fractions),
            winsor_counts: self.winsor_counts.clone().or(defaults.winsor_counts),
            lambda_grid: self.lambda_grid.clone().or(defaults.lambda_grid),
            shift_powers: self.shift_powers.clone().or(defaults.shift_powers),
            variants: self.variants.clone().or(defaults.variants),
            alpha: self.alpha.or(defaults.alpha),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: String| {
            Err(Error::InvalidParameter { name: name.into(), reason })
        };
        if self.replicates < 100 {
            return bad("replicates", format!("{} is below the minimum 100", self.replicates));
        }
        if self.sample_sizes.is_empty() {
            return bad("sample_sizes", "no sample sizes given".into());
        }
        for &n in &self.sample_sizes {
            if n < 20 {
                return bad("sample_sizes", format!("sample size {n} is below the minimum 20"));
            }
        }
        if let Some(offsets) = &self.offsets {
            if offsets.is_empty() {
                return bad("offsets", "empty offset grid".into());
            }
            for &c in offsets {
                if !(0.0..=0.9).contains(&c) {
                    return bad("offsets", format!("offset {c} outside [0, 0.9]"));
                }
            }
        }
        if let Some(fractions) = &self.censor_fractions {
            for &f in fractions {
                if !(f > 0.0 && f <= 0.5) {
                    return bad("censor_fractions", format!("fraction {f} outside (0, 0.5]"));
                }
            }
        }
        if let Some(counts) = &self.winsor_counts {
            for &w in counts {
                if !(1..=5).contains(&w) {
                    return bad("winsor_counts", format!("count {w} outside 1..=5"));
                }
            }
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return bad("lambda_grid", "empty lambda grid".into());
            }
            for &l in grid {
                let quarters = l / 0.25;
                if !(-2.0..=2.0).contains(&l) || (quarters - quarters.round()).abs() > 1e-9 {
                    return bad(
                        "lambda_grid",
                        format!("{l} is not in the supported grid {{-2, -1.75, ..., 2}}"),
                    );
                }
            }
        }
        if let Some(shifts) = &self.shift_powers {
            if shifts.is_empty() {
                return bad("shift_powers", "empty shift grid".into());
            }
            for &a in shifts {
                if !(1.0..=2.0).contains(&a) {
                    return bad("shift_powers", format!("shift power {a} outside [1, 2]"));
                }
            }
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 0.0 && alpha < 1.0) {
                return bad("alpha", format!("{alpha} outside (0, 1)"));
            }
        }
        Ok(())
    }
}

// ──────────────────────────────────────────────────────────────────────────
// Report types
// ──────────────────────────────────────────────────────────────────────────

/// One reported quantity: the value, its Monte Carlo standard error when the
/// quantity is an estimate, and a published reference where one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

impl Stat {
    fn new(name: &str, value: f64, mc_se: Option<f64>, reference: Option<f64>) -> Stat {
        Stat { name: name.into(), value, mc_se, reference }
    }
}

/// One grid cell of a study: named coordinates plus its statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Free-text qualifier for cells that are not plain grid points
    /// (refitted models, summaries); empty for ordinary cells.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    pub coords: Vec<(String, f64)>,
    pub stats: Vec<Stat>,
}

impl Cell {
    fn grid(coords: Vec<(String, f64)>, stats: Vec<Stat>) -> Cell {
        Cell { label: String::new(), coords, stats }
    }

    /// The first stat with this name, if present.
    pub fn stat(&self, name: &str) -> Option<&Stat> {
        self.stats.iter().find(|s| s.name == name)
    }

    /// The coordinate value under this name, if present.
    pub fn coord(&self, name: &str) -> Option<f64> {
        self.coords.iter().find(|(k, _)| k == name).map(|&(_, v)| v)
    }
}

/// A named pass/fail comparison with explicit inclusive bounds. These drive
/// the strict mode of the command-line runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrictCheck {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

impl StrictCheck {
    fn new(name: String, value: f64, lo: f64, hi: f64) -> StrictCheck {
        let pass = value.is_finite() && value >= lo && value <= hi;
        StrictCheck { name, value, lo, hi, pass }
    }
}

/// The result of one study: the effective config, every grid cell's
/// statistics, the strict checks, and free-text notes on the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    /// Generator family behind the seed, for provenance.
    pub algorithm_id: String,
    /// Wall-clock seconds; the only field allowed to differ between
    /// identical runs.
    pub runtime_seconds: f64,
    pub cells: Vec<Cell>,
    pub checks: Vec<StrictCheck>,
    pub notes: Vec<String>,
}

impl StudyReport {
    pub fn passes_strict(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// The first cell whose label and coordinates match.
    pub fn cell(&self, label: &str, coords: &[(&str, f64)]) -> Option<&Cell> {
        self.cells.iter().find(|c| {
            c.label == label
                && coords.iter().all(|&(k, v)| c.coord(k).is_some_and(|x| (x - v).abs() < 1e-9))
        })
    }
}

/// Externally computed per-replicate p-values to merge into the power
/// study's report as a comparison arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalArm {
    pub label: String,
    /// (replicate id, p-value) pairs.
    pub pvalues: Vec<(u64, f64)>,
}

// ──────────────────────────────────────────────────────────────────────────
// Summary statistics with Monte Carlo errors
// ──────────────────────────────────────────────────────────────────────────

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn mean_se(xs: &[f64]) -> f64 {
    sample_sd(xs) / (xs.len() as f64).sqrt()
}

/// Sample sd with a delta-method standard error from the fourth central
/// moment: Var(s^2) is about (m4 - m2^2)/R, and SE(s) = SE(s^2)/(2s).
fn sd_with_se(xs: &[f64]) -> (f64, f64) {
    let r = xs.len() as f64;
    let m = mean(xs);
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in xs {
        let d = x - m;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= r;
    m4 /= r;
    let s = (m2 * r / (r - 1.0)).sqrt();
    let var_s2 = ((m4 - m2 * m2) / r).max(0.0);
    let se = if s > 0.0 { var_s2.sqrt() / (2.0 * s) } else { 0.0 };
    (s, se)
}

/// Root-mean-square error about a known target, with the delta-method SE
/// from the spread of the per-replicate squared errors.
fn rmse_with_se(xs: &[f64], target: f64) -> (f64, f64) {
    let sq: Vec<f64> = xs.iter().map(|x| (x - target) * (x - target)).collect();
    let rmse = mean(&sq).sqrt();
    let se = if rmse > 0.0 { mean_se(&sq) / (2.0 * rmse) } else { 0.0 };
    (rmse, se)
}

/// Ratio of the means of two paired per-replicate series, with the
/// delta-method SE that credits the pairing: sd(a_i - ratio * b_i) shrinks
/// as the series correlate.
fn paired_mean_ratio(num: &[f64], den: &[f64]) -> (f64, f64) {
    let r = num.len() as f64;
    let ratio = mean(num) / mean(den);
    let resid: Vec<f64> = num.iter().zip(den).map(|(a, b)| a - ratio * b).collect();
    let se = sample_sd(&resid) / r.sqrt() / mean(den).abs();
    (ratio, se)
}

/// Variance ratio Var(num)/Var(den) for paired estimates, as the paired
/// mean ratio of squared deviations.
fn paired_variance_ratio(num: &[f64], den: &[f64]) -> (f64, f64) {
    let (ma, mb) = (mean(num), mean(den));
    let u: Vec<f64> = num.iter().map(|x| (x - ma) * (x - ma)).collect();
    let v: Vec<f64> = den.iter().map(|x| (x - mb) * (x - mb)).collect();
    paired_mean_ratio(&u, &v)
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Straight-line least squares with per-point Monte Carlo errors propagated
/// through the OLS weights into coefficient errors.
struct LineRefit {
    intercept: f64,
    slope: f64,
    intercept_se: f64,
    slope_se: f64,
    resid_sd: f64,
    r_squared: f64,
}

fn refit_line(x: &[f64], y: &[f64], y_se: &[f64]) -> LineRefit {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (mut slope_var, mut int_var, mut ss_res) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let c = (x[i] - mx) / sxx;
        slope_var += c * c * y_se[i] * y_se[i];
        let a = 1.0 / n - mx * c;
        int_var += a * a * y_se[i] * y_se[i];
        let e = y[i] - intercept - slope * x[i];
        ss_res += e * e;
    }
    let dof = (x.len() as f64 - 2.0).max(1.0);
    LineRefit {
        intercept,
        slope,
        intercept_se: int_var.sqrt(),
        slope_se: slope_var.sqrt(),
        resid_sd: (ss_res / dof).sqrt(),
        r_squared: if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 },
    }
}

/// Least squares over the four-term design {1, L, f, f L}, with propagated
/// coefficient errors. Returns None when the design is singular.
struct BilinearRefit {
    coeffs: [f64; 4],
    ses: [f64; 4],
    resid_sd: f64,
    r_squared: f64,
}

fn refit_bilinear(rows: &[[f64; 4]], y: &[f64], y_se: &[f64]) -> Option<BilinearRefit> {
    let mut xtx = [[0.0; 4]; 4];
    let mut xty = [0.0; 4];
    for (row, &yi) in rows.iter().zip(y) {
        for i in 0..4 {
            for j in 0..4 {
                xtx[i][j] += row[i] * row[j];
            }
            xty[i] += row[i] * yi;
        }
    }
    let inv = invert4(xtx)?;
    let mut coeffs = [0.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            coeffs[i] += inv[i][j] * xty[j];
        }
    }
    let mut ses = [0.0; 4];
    for (row, &se) in rows.iter().zip(y_se) {
        for i in 0..4 {
            let mut w = 0.0;
            for j in 0..4 {
                w += inv[i][j] * row[j];
            }
            ses[i] += w * w * se * se;
        }
    }
    for s in &mut ses {
        *s = s.sqrt();
    }
    let my = mean(y);
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (row, &yi) in rows.iter().zip(y) {
        let pred: f64 = (0..4).map(|i| coeffs[i] * row[i]).sum();
        ss_res += (yi - pred) * (yi - pred);
        ss_tot += (yi - my) * (yi - my);
    }
    let dof = (rows.len() as f64 - 4.0).max(1.0);
    Some(BilinearRefit {
        coeffs,
        ses,
        resid_sd: (ss_res / dof).sqrt(),
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    })
}

/// Gauss-Jordan inverse of a 4x4 matrix with partial pivoting.
fn invert4(m: [[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut a = m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..4 {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..4 {
            if i != col {
                let factor = a[i][col];
                for j in 0..4 {
                    a[i][j] -= factor * a[col][j];
                    inv[i][j] -= factor * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

// ──────────────────────────────────────────────────────────────────────────
// Draw helpers
// ──────────────────────────────────────────────────────────────────────────

/// A normal draw conditioned on positivity by per-draw rejection. Used where
/// a positive variable is raised to fractional powers; the conditioning
/// discards about 3e-5 of N(1, 0.25^2) mass.
fn positive_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let x = mean + sd * z;
        if x > 0.0 {
            return x;
        }
    }
}

fn substream_for(seed: RngStream, cell: usize, rep: usize) -> RngStream {
    seed.substream(((cell as u64) << 32) | rep as u64)
}

/// Tolerance bounds per the reporting rule: the stated tolerance or three
/// Monte Carlo standard errors, whichever is wider.
fn tol_bounds(reference: f64, stated: f64, mc_se: f64) -> (f64, f64) {
    let half = stated.max(3.0 * mc_se);
    (reference - half, reference + half)
}

const RNG_NOTE: &str = "RNG: chacha8 streams; replicate r of cell c draws from substream (c << 32) | r, so runs are reproducible and thread-order independent.";

/// The 97.5% point multiplier used throughout the studies. The studies keep
/// the rounded two-digit value because the efficiency models and the 1.71
/// limit-error constant were derived with it.
const STUDY_Z: f64 = 1.96;

// ──────────────────────────────────────────────────────────────────────────
// Study A: plotting-position profile
// ──────────────────────────────────────────────────────────────────────────

/// Profile the MSE of the QQ slope (as an estimator of the normal sd)
/// across symmetric plotting-position offsets. Efficiency is min grid MSE
/// over cell MSE, so the best grid point scores 1.
pub fn run_score_profile(config: &StudyConfig) -> Result<StudyReport> {
    let cfg = config.normalized()?;
    let start = Instant::now();
    let offsets = cfg.offsets.clone().expect("normalized");
    let positions = offsets
        .iter()
        .map(|&c| PlottingPosition::new(c))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut checks = Vec::new();
    for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
        let sq_errors: Vec<Vec<f64>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| -> Result<Vec<f64>> {
                let sample = Sample::new(substream_for(cfg.seed, ni, rep).standard_normal(n))?;
                positions
                    .iter()
                    .map(|pos| {
                        let e = fit_full(&sample, pos)?.slope - 1.0;
                        Ok(e * e)
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        let per_offset: Vec<Vec<f64>> = (0..offsets.len())
            .map(|j| sq_errors.iter().map(|row| row[j]).collect())
            .collect();
        let mses: Vec<f64> = per_offset.iter().map(|v| mean(v)).collect();
        let best = argmin(&mses);

        for (j, &c) in offsets.iter().enumerate() {
            let (eff, eff_se) = paired_mean_ratio(&per_offset[best], &per_offset[j]);
            cells.push(Cell::grid(
                vec![("n".into(), n as f64), ("offset".into(), c)],
                vec![
                    Stat::new("slope_mse", mses[j], Some(mean_se(&per_offset[j])), None),
                    Stat::new("efficiency", eff, Some(eff_se), None),
                ],
            ));
        }

        checks.push(StrictCheck::new(
            format!("argmax_offset_n{n}"),
            offsets[best],
            0.40,
            0.55,
        ));
        let at = |target: f64| offsets.iter().position(|&c| (c - target).abs() < 1e-9);
        if let Some(j) = at(0.5) {
            checks.push(StrictCheck::new(
                format!("efficiency_shortfall_at_0.5_n{n}"),
                1.0 - mses[best] / mses[j],
                0.0,
                0.005,
            ));
        }
        if let Some(j) = at(0.0) {
            checks.push(StrictCheck::new(
                format!("weibull_shortfall_n{n}"),
                1.0 - mses[best] / mses[j],
                0.02,
                1.0,
            ));
        }
    }

    Ok(StudyReport {
        config: cfg,
        algorithm_id: RngStream::ALGORITHM_ID.into(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        cells,
        checks,
        notes: vec![
            RNG_NOTE.into(),
            "All offsets of a replicate are fit on the same sample, so efficiencies are paired ratios.".into(),
        ],
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Study B: slope versus sample sd
// ──────────────────────────────────────────────────────────────────────────

struct B1Row {
    n: usize,
    s_mean: f64,
    slope_mean: f64,
    s_sd: f64,
    slope_sd: f64,
    s_rmse: f64,
    slope_rmse: f64,
    efficiency: f64,
}

/// Published comparison of the sample sd and the QQ slope on standard
/// normal samples (100,000 replicates per row in the original).
const B1_REFERENCE: [B1Row; 4] = [
    B1Row { n: 30, s_mean: 0.9919, slope_mean: 0.9793, s_sd: 0.1305, slope_sd: 0.1292, s_rmse: 0.1308, slope_rmse: 0.1309, efficiency: 99.86 },
    B1Row { n: 60, s_mean: 0.9958, slope_mean: 0.9883, s_sd: 0.0920, slope_sd: 0.0915, s_rmse: 0.0921, slope_rmse: 0.0922, efficiency: 99.70 },
    B1Row { n: 120, s_mean: 0.9982, slope_mean: 0.9939, s_sd: 0.0646, slope_sd: 0.0645, s_rmse: 0.0647, slope_rmse: 0.0648, efficiency: 99.61 },
    B1Row { n: 240, s_mean: 0.9991, slope_mean: 0.9967, s_sd: 0.0455, slope_sd: 0.0455, s_rmse: 0.0455, slope_rmse: 0.0456, efficiency: 99.89 },
];

/// Compare the QQ slope with the sample standard deviation as estimators of
/// the normal sd. Efficiency is 100 times the squared RMSE ratio of the
/// sample sd to the slope, so 100 means parity.
pub fn run_slope_efficiency(config: &StudyConfig) -> Result<StudyReport> {
    let cfg = config.normalized()?;
    let start = Instant::now();
    let hazen = PlottingPosition::hazen();

    let mut cells = Vec::new();
    let mut checks = Vec::new();
    let mut efficiencies = Vec::new();
    for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| -> Result<(f64, f64)> {
                let sample = Sample::new(substream_for(cfg.seed, ni, rep).standard_normal(n))?;
                let s = sample_sd(sample.sorted());
                let slope = fit_full(&sample, &hazen)?.slope;
                Ok((s, slope))
            })
            .collect::<Result<Vec<_>>>()?;
        let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let slope: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let s_sq: Vec<f64> = s.iter().map(|x| (x - 1.0) * (x - 1.0)).collect();
        let slope_sq: Vec<f64> = slope.iter().map(|x| (x - 1.0) * (x - 1.0)).collect();

        let reference = B1_REFERENCE.iter().find(|row| row.n == n);
        let (s_sd_v, s_sd_se) = sd_with_se(&s);
        let (slope_sd_v, slope_sd_se) = sd_with_se(&slope);
        let (s_rmse, s_rmse_se) = rmse_with_se(&s, 1.0);
        let (slope_rmse, slope_rmse_se) = rmse_with_se(&slope, 1.0);
        let (eff, eff_se) = paired_mean_ratio(&s_sq, &slope_sq);
        let (eff, eff_se) = (eff * 100.0, eff_se * 100.0);
        efficiencies.push(eff);

        cells.push(Cell::grid(
            vec![("n".into(), n as f64)],
            vec![
                Stat::new("s_mean", mean(&s), Some(mean_se(&s)), reference.map(|r| r.s_mean)),
                Stat::new("s_sd", s_sd_v, Some(s_sd_se), reference.map(|r| r.s_sd)),
                Stat::new("s_rmse", s_rmse, Some(s_rmse_se), reference.map(|r| r.s_rmse)),
                Stat::new("slope_mean", mean(&slope), Some(mean_se(&slope)), reference.map(|r| r.slope_mean)),
                Stat::new("slope_sd", slope_sd_v, Some(slope_sd_se), reference.map(|r| r.slope_sd)),
                Stat::new("slope_rmse", slope_rmse, Some(slope_rmse_se), reference.map(|r| r.slope_rmse)),
                Stat::new("efficiency", eff, Some(eff_se), reference.map(|r| r.efficiency)),
            ],
        ));

        if n == 120 {
            checks.push(StrictCheck::new("slope_mean_n120".into(), mean(&slope), 0.9909, 0.9969));
            checks.push(StrictCheck::new("slope_sd_n120".into(), slope_sd_v, 0.0625, 0.0665));
            checks.push(StrictCheck::new("efficiency_n120".into(), eff, 99.1, 100.1));
        }
    }
    let min_eff = efficiencies.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(StrictCheck::new("min_efficiency".into(), min_eff, 99.0, 101.0));

    Ok(StudyReport {
        config: cfg,
        algorithm_id: RngStream::ALGORITHM_ID.into(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        cells,
        checks,
        notes: vec![
            RNG_NOTE.into(),
            "Both estimators are computed on the same samples; the efficiency is a paired MSE ratio times 100.".into(),
        ],
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Study C: censoring
// ──────────────────────────────────────────────────────────────────────────

/// Measure efficiency lost to left censoring: the variance of each full-fit
/// estimator (mean, sd, upper limit) over the variance of its censored-fit
/// counterpart on the same samples, next to the fitted efficiency models.
pub fn run_censoring_study(config: &StudyConfig) -> Result<StudyReport> {
    let cfg = config.normalized()?;
    let start = Instant::now();
    let hazen = PlottingPosition::hazen();
    let fractions = cfg.censor_fractions.clone().expect("normalized");

    // (estimator index, name, model reference as a function of k and n)
    let estimators: [(usize, &str, fn(usize, usize) -> f64); 3] = [
        (0, "mean_efficiency", |k, n| censored_efficiency_mean(k, n)),
        (1, "sd_efficiency", |k, n| censored_efficiency_sd(1.0 - k as f64 / n as f64)),
        (2, "limit_efficiency", |k, n| censored_efficiency_limit(1.0 - k as f64 / n as f64)),
    ];

    let mut cells = Vec::new();
    let mut checks = Vec::new();
    // efficiencies[estimator][f index][n index] for the flatness check
    let mut efficiencies = vec![vec![vec![f64::NAN; cfg.sample_sizes.len()]; fractions.len()]; 3];
    let mut min_limit_minus_sd = f64::INFINITY;

    for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
        let ks: Vec<usize> = fractions.iter().map(|&f| (f * n as f64).round() as usize).collect();
        for (&f, &k) in fractions.iter().zip(&ks) {
            if k == 0 || 2 * k > n {
                return Err(Error::InvalidCensoring {
                    k,
                    n,
                    reason: format!("fraction {f} rounds to an unusable censored count"),
                });
            }
        }
        let rows: Vec<([f64; 3], Vec<[f64; 3]>)> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| -> Result<([f64; 3], Vec<[f64; 3]>)> {
                let sample = Sample::new(substream_for(cfg.seed, ni, rep).standard_normal(n))?;
                let full = fit_full(&sample, &hazen)?;
                let full_est =
                    [full.intercept, full.slope, full.intercept + STUDY_Z * full.slope];
                let censored = ks
                    .iter()
                    .map(|&k| {
                        let fit = fit_censored(&sample, k, &hazen)?;
                        Ok([fit.intercept, fit.slope, fit.intercept + STUDY_Z * fit.slope])
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((full_est, censored))
            })
            .collect::<Result<Vec<_>>>()?;

        for (fi, &k) in ks.iter().enumerate() {
            let f_censored = k as f64 / n as f64;
            let mut stats = Vec::new();
            let mut cell_eff = [0.0; 3];
            for &(ei, name, model) in &estimators {
                let full: Vec<f64> = rows.iter().map(|r| r.0[ei]).collect();
                let cens: Vec<f64> = rows.iter().map(|r| r.1[fi][ei]).collect();
                let (eff, se) = paired_variance_ratio(&full, &cens);
                efficiencies[ei][fi][ni] = eff;
                cell_eff[ei] = eff;
                stats.push(Stat::new(name, eff, Some(se), Some(model(k, n))));
                if n == 120 {
                    checks.push(StrictCheck::new(
                        format!("{name}_n120_f{f_censored:.2}"),
                        eff,
                        model(k, n) - 0.05,
                        model(k, n) + 0.05,
                    ));
                }
            }
            min_limit_minus_sd = min_limit_minus_sd.min(cell_eff[2] - cell_eff[1]);
            stats.push(Stat::new("censored_count", k as f64, None, None));
            cells.push(Cell::grid(
                vec![("n".into(), n as f64), ("censored_fraction".into(), f_censored)],
                stats,
            ));
        }
    }

    if cfg.sample_sizes.len() >= 2 {
        let mut max_spread = 0.0_f64;
        for per_est in &efficiencies {
            for per_f in per_est {
                let lo = per_f.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = per_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                max_spread = max_spread.max(hi - lo);
            }
        }
        checks.push(StrictCheck::new(
            "max_efficiency_spread_across_n".into(),
            max_spread,
            0.0,
            0.05,
        ));
    }
    checks.push(StrictCheck::new(
        "min_limit_minus_sd_efficiency".into(),
        min_limit_minus_sd,
        0.0,
        1.0,
    ));

    Ok(StudyReport {
        config: cfg,
        algorithm_id: RngStream::ALGORITHM_ID.into(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        cells,
        checks,
        notes: vec![
            RNG_NOTE.into(),
            "Efficiency is Var(full-fit estimator) / Var(censored-fit estimator) on the same samples; values below 1 mean censoring costs precision.".into(),
            format!("The upper limit is intercept + {STUDY_Z} * slope, matching the derivation of the efficiency models."),
        ],
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Study D: winsorizing
// ──────────────────────────────────────────────────────────────────────────

/// Implied-sample-size cost of winsorizing. For each (n, w) cell the sd of
/// each estimator across replicates is inverted into an implied effective
/// sample size (mean: (1/sd)^2, sd: 1/(2 sd^2), limit: (1.71/sd)^2) and
/// reported as the loss n minus n_eff, with a per-n regression of loss on w.
pub fn run_winsor_study(config: &StudyConfig) -> Result<StudyReport> {
    let cfg = config.normalized()?;
    let start = Instant::now();
    let hazen = PlottingPosition::hazen();
    let mut w_list = cfg.winsor_counts.clone().expect("normalized");
    w_list.push(0);
    w_list.sort_unstable();
    w_list.dedup();

    const LIMIT_SE_FACTOR: f64 = 1.71;
    let estimators: [(usize, &str, f64, fn(usize) -> f64); 3] = [
        (0, "mean", 1.0, |_| 0.0),
        (1, "sd", 0.5_f64.sqrt(), |w| 5.0 * w as f64),
        (2, "limit", LIMIT_SE_FACTOR, |w| 3.5 * w as f64),
    ];

    let mut cells = Vec::new();
    let mut checks = Vec::new();
    for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
        if let Some(&w_max) = w_list.last() {
            if n < 2 * w_max + 10 {
                return Err(Error::InvalidWinsorization {
                    w: w_max,
                    n,
                    reason: "fewer than 10 observations would remain in the regression".into(),
                });
            }
        }
        let rows: Vec<Vec<[f64; 3]>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| -> Result<Vec<[f64; 3]>> {
                let sample = Sample::new(substream_for(cfg.seed, ni, rep).standard_normal(n))?;
                w_list
                    .iter()
                    .map(|&w| {
                        let fit = fit_winsorized(&sample, w, &hazen)?;
                        Ok([fit.intercept, fit.slope, fit.intercept + STUDY_Z * fit.slope])
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;

        // losses[estimator] = per-w (loss, loss_se)
        let mut losses: [Vec<(f64, f64)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (wi, &w) in w_list.iter().enumerate() {
            let mut stats = Vec::new();
            for &(ei, name, factor, model) in &estimators {
                let est: Vec<f64> = rows.iter().map(|r| r[wi][ei]).collect();
                let (sd, sd_se) = sd_with_se(&est);
                let n_eff = (factor / sd) * (factor / sd);
                let loss = n as f64 - n_eff;
                let loss_se = 2.0 * n_eff * sd_se / sd;
                losses[ei].push((loss, loss_se));
                stats.push(Stat::new(&format!("{name}_estimate_sd"), sd, Some(sd_se), None));
                stats.push(Stat::new(&format!("{name}_n_eff"), n_eff, Some(loss_se), None));
                stats.push(Stat::new(
                    &format!("{name}_loss"),
                    loss,
                    Some(loss_se),
                    Some(model(w)),
                ));
            }
            cells.push(Cell::grid(
                vec![("n".into(), n as f64), ("w".into(), w as f64)],
                stats,
            ));
        }

        let w_x: Vec<f64> = w_list.iter().map(|&w| w as f64).collect();
        let mut slope_stats = Vec::new();
        for &(ei, name, _, _) in &estimators {
            let y: Vec<f64> = losses[ei].iter().map(|&(l, _)| l).collect();
            let y_se: Vec<f64> = losses[ei].iter().map(|&(_, se)| se).collect();
            let fit = refit_line(&w_x, &y, &y_se);
            let reference = match ei {
                0 => 0.0,
                1 => 5.0,
                _ => 3.5,
            };
            slope_stats.push(Stat::new(
                &format!("{name}_loss_slope"),
                fit.slope,
                Some(fit.slope_se),
                Some(reference),
            ));
            let (lo, hi) = match ei {
                0 => (-1.5, 1.5),
                1 => (3.5, 6.5),
                _ => (2.0, 5.0),
            };
            checks.push(StrictCheck::new(format!("{name}_loss_slope_n{n}"), fit.slope, lo, hi));
        }
        cells.push(Cell {
            label: "loss regression".into(),
            coords: vec![("n".into(), n as f64)],
            stats: slope_stats,
        });
    }

    Ok(StudyReport {
        config: cfg,
        algorithm_id: RngStream::ALGORITHM_ID.into(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        cells,
        checks,
        notes: vec![
            RNG_NOTE.into(),
            "A w = 0 baseline cell is always included; all w settings of a replicate reuse one sample.".into(),
            "Loss regressions treat the per-w losses as independent, which overstates the slope error slightly because shared samples correlate the cells.".into(),
        ],
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Study E: Box-Cox estimators
// ──────────────────────────────────────────────────────────────────────────

struct E1Row {
    lambda: f64,
    qq_bias: f64,
    pl_bias: f64,
    qq_sd: f64,
    pl_sd: f64,
    qq_rmse: f64,
    pl_rmse: f64,
    efficiency: f64,
}

/// Published comparison of the max-QQr and pseudolikelihood power
/// estimators (10,000 replicates per row in the original).
const E1_REFERENCE: [E1Row; 9] = [
    E1Row { lambda: -2.0, qq_bias: 0.014, pl_bias: 0.073, qq_sd: 0.592, pl_sd: 0.564, qq_rmse: 0.592, pl_rmse: 0.568, efficiency: 92.0 },
    E1Row { lambda: -1.5, qq_bias: 0.011, pl_bias: 0.056, qq_sd: 0.440, pl_sd: 0.419, qq_rmse: 0.440, pl_rmse: 0.422, efficiency: 92.0 },
    E1Row { lambda: -1.0, qq_bias: 0.012, pl_bias: 0.042, qq_sd: 0.293, pl_sd: 0.279, qq_rmse: 0.293, pl_rmse: 0.282, efficiency: 92.6 },
    E1Row { lambda: -0.5, qq_bias: 0.005, pl_bias: 0.020, qq_sd: 0.146, pl_sd: 0.139, qq_rmse: 0.146, pl_rmse: 0.140, efficiency: 92.1 },
    E1Row { lambda: 0.0, qq_bias: -0.004, pl_bias: -0.004, qq_sd: 0.315, pl_sd: 0.306, qq_rmse: 0.315, pl_rmse: 0.306, efficiency: 94.4 },
    E1Row { lambda: 0.5, qq_bias: -0.003, pl_bias: -0.017, qq_sd: 0.148, pl_sd: 0.140, qq_rmse: 0.148, pl_rmse: 0.141, efficiency: 91.4 },
    E1Row { lambda: 1.0, qq_bias: -0.009, pl_bias: -0.039, qq_sd: 0.294, pl_sd: 0.279, qq_rmse: 0.294, pl_rmse: 0.282, efficiency: 91.8 },
    E1Row { lambda: 1.5, qq_bias: -0.013, pl_bias: -0.058, qq_sd: 0.451, pl_sd: 0.429, qq_rmse: 0.452, pl_rmse: 0.433, efficiency: 91.8 },
    E1Row { lambda: 2.0, qq_bias: -0.012, pl_bias: -0.071, qq_sd: 0.585, pl_sd: 0.556, qq_rmse: 0.585, pl_rmse: 0.561, efficiency: 91.7 },
];

/// Compare the max-QQr and pseudolikelihood Box-Cox power estimators on
/// samples of a positive N(1, 0.25^2) variable raised to 1/lambda (exp at
/// lambda = 0). Efficiency is 100 times the MSE ratio of PL to QQ.
pub fn run_boxcox_study(config: &StudyConfig) -> Result<StudyReport> {
    let cfg = config.normalized()?;
    let start = Instant::now();
    let lambdas = cfg.lambda_grid.clone().expect("normalized");
    let n = cfg.sample_sizes[0];

    let mut cells = Vec::new();
    let mut checks = Vec::new();
    let mut eff_acc = Vec::new();
    let mut corr_acc = Vec::new();
    for (ci, &lambda) in lambdas.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| -> Result<(f64, f64)> {
                let mut rng = substream_for(cfg.seed, ci, rep).rng();
                let x: Vec<f64> = (0..n)
                    .map(|_| {
                        let z = positive_normal(&mut rng, 1.0, 0.25);
                        if lambda == 0.0 {
                            z.exp()
                        } else {
                            z.powf(1.0 / lambda)
                        }
                    })
                    .collect();
                let sample = Sample::new(x)?;
                let qq = fit_boxcox_qqr(&sample, DEFAULT_LAMBDA_RANGE)?.lambda_hat;
                let pl = fit_boxcox_pl(&sample, DEFAULT_LAMBDA_RANGE)?.lambda_hat;
                Ok((qq, pl))
            })
            .collect::<Result<Vec<_>>>()?;
        let qq: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let pl: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let qq_sq: Vec<f64> = qq.iter().map(|x| (x - lambda) * (x - lambda)).collect();
        let pl_sq: Vec<f64> = pl.iter().map(|x| (x - lambda) * (x - lambda)).collect();

        let reference = E1_REFERENCE.iter().find(|row| (row.lambda - lambda).abs() < 1e-9);
        let (qq_sd_v, qq_sd_se) = sd_with_se(&qq);
        let (pl_sd_v, pl_sd_se) = sd_with_se(&pl);
        let (qq_rmse, qq_rmse_se) = rmse_with_se(&qq, lambda);
        let (pl_rmse, pl_rmse_se) = rmse_with_se(&pl, lambda);
        let (eff, eff_se) = paired_mean_ratio(&pl_sq, &qq_sq);
        let (eff, eff_se) = (eff * 100.0, eff_se * 100.0);
        let corr = pearson(&qq, &pl);
        let corr_se = (1.0 - corr * corr) / ((cfg.replicates as f64 - 3.0).sqrt());
        eff_acc.push((eff, eff_se));
        corr_acc.push((corr, corr_se));

        let qq_bias = mean(&qq) - lambda;
        let pl_bias = mean(&pl) - lambda;
        cells.push(Cell::grid(
            vec![("lambda".into(), lambda)],
            vec![
                Stat::new("qq_bias", qq_bias, Some(mean_se(&qq)), reference.map(|r| r.qq_bias)),
                Stat::new("qq_sd", qq_sd_v, Some(qq_sd_se), reference.map(|r| r.qq_sd)),
                Stat::new("qq_rmse", qq_rmse, Some(qq_rmse_se), reference.map(|r| r.qq_rmse)),
                Stat::new("pl_bias", pl_bias, Some(mean_se(&pl)), reference.map(|r| r.pl_bias)),
                Stat::new("pl_sd", pl_sd_v, Some(pl_sd_se), reference.map(|r| r.pl_sd)),
                Stat::new("pl_rmse", pl_rmse, Some(pl_rmse_se), reference.map(|r| r.pl_rmse)),
                Stat::new("efficiency", eff, Some(eff_se), reference.map(|r| r.efficiency)),
                Stat::new("qq_pl_correlation", corr, Some(corr_se), None),
            ],
        ));

        if let Some(row) = reference {
            let (lo, hi) = tol_bounds(row.efficiency, 4.0, eff_se);
            checks.push(StrictCheck::new(
                format!("efficiency_at_lambda_{lambda:+.2}"),
                eff,
                lo,
                hi,
            ));
        }
        if lambda.abs() >= 0.5 {
            // The max-QQr power should carry less bias; allow MC slack.
            let diff: Vec<f64> = qq.iter().zip(&pl).map(|(a, b)| a - b).collect();
            let slack = 3.0 * mean_se(&diff);
            checks.push(StrictCheck::new(
                format!("bias_advantage_at_lambda_{lambda:+.2}"),
                qq_bias.abs() - pl_bias.abs(),
                -10.0,
                slack,
            ));
        }
    }

    let avg_eff = mean(&eff_acc.iter().map(|&(e, _)| e).collect::<Vec<_>>());
    let avg_eff_se =
        eff_acc.iter().map(|&(_, se)| se * se).sum::<f64>().sqrt() / eff_acc.len() as f64;
    let avg_corr = mean(&corr_acc.iter().map(|&(c, _)| c).collect::<Vec<_>>());
    cells.push(Cell {
        label: "grid summary".into(),
        coords: Vec::new(),
        stats: vec![
            Stat::new("average_efficiency", avg_eff, Some(avg_eff_se), Some(92.2)),
            Stat::new("average_qq_pl_correlation", avg_corr, None, Some(0.9957)),
        ],
    });
    checks.push(StrictCheck::new("average_qq_pl_correlation".into(), avg_corr, 0.98, 1.0));

    Ok(StudyReport {
        config: cfg,
        algorithm_id: RngStream::ALGORITHM_ID.into(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        cells,
        checks,
        notes: vec![
            RNG_NOTE.into(),
            format!("Samples are N(1, 0.25^2) draws conditioned positive, raised to 1/lambda (exp at 0), n = {n}; both estimators search the same default power range."),
        ],
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Study F: normality-test calibration
// ──────────────────────────────────────────────────────────────────────────

struct F1Ref {
    intercept: f64,
    per_ln_n: f64,
    resid_sd: f64,
    r_squared: f64,
}

fn f1_reference(variant: TestVariant, for_sd: bool) -> F1Ref {
    match (variant, for_sd) {
        (TestVariant::Full, false) => F1Ref { intercept: 1.992, per_ln_n: -1.802, resid_sd: 0.0164, r_squared: 0.9999 },
        (TestVariant::Winsorized, false) => F1Ref { intercept: 3.12, per_ln_n: -2.115, resid_sd: 0.0173, r_squared: 0.9999 },
        (TestVariant::Boxcox, false) => F1Ref { intercept: 1.405, per_ln_n: -1.782, resid_sd: 0.0196, r_squared: 0.9998 },
        (TestVariant::BoxcoxWinsorized, false) => F1Ref { intercept: 2.809, per_ln_n: -2.164, resid_sd: 0.0172, r_squared: 0.9999 },
        (TestVariant::Full, true) => F1Ref { intercept: 0.6717, per_ln_n: 0.02561, resid_sd: 0.0040, r_squared: 0.9668 },
        (TestVariant::Winsorized, true) => F1Ref { intercept: 0.4413, per_ln_n: 0.08462, resid_sd: 0.0064, r_squared: 0.9922 },
        (TestVariant::Boxcox, true) => F1Ref { intercept: 0.5941, per_ln_n: 0.03245, resid_sd: 0.0041, r_squared: 0.9780 },
        (TestVariant::BoxcoxWinsorized, true) => F1Ref { intercept: 0.4288, per_ln_n: 0.07453, resid_sd: 0.0073, r_squared: 0.9867 },
        _ => unreachable!("censored variants use the bilinear references"),
    }
}

struct F2Ref {
    coeffs: [f64; 4],
    resid_sd: f64,
    r_squared: f64,
}

fn f2_reference(variant: TestVariant, for_sd: bool) -> F2Ref {
    match (variant, for_sd) {
        (TestVariant::CensoredOriginal, false) => F2Ref { coeffs: [2.256, -1.923, -0.7297, 0.6353], resid_sd: 0.0295, r_squared: 0.9996 },
        (TestVariant::CensoredBoxcox, false) => F2Ref { coeffs: [1.796, -1.937, -1.331, 0.7059], resid_sd: 0.0411, r_squared: 0.9992 },
        (TestVariant::CensoredOriginal, true) => F2Ref { coeffs: [0.598, 0.05197, 0.2236, -0.01872], resid_sd: 0.0091, r_squared: 0.9529 },
        (TestVariant::CensoredBoxcox, true) => F2Ref { coeffs: [0.475, 0.06489, 0.3955, -0.06081], resid_sd: 0.0210, r_squared: 0.7803 },
        _ => unreachable!("uncensored variants use the straight-line references"),
    }
}

/// Null-model mean and sd from the shipped coefficients for any variant.
fn published_null_model(variant: TestVariant, n: usize, f: f64) -> (f64, f64) {
    let c = CalibrationCoefficients::published();
    match variant {
        TestVariant::Full => (c.full_mean.at(n), c.full_sd.at(n)),
        TestVariant::Winsorized => (c.winsorized_mean.at(n), c.winsorized_sd.at(n)),
        TestVariant::Boxcox => (c.boxcox_mean.at(n), c.boxcox_sd.at(n)),
        TestVariant::BoxcoxWinsorized => {
            (c.boxcox_winsorized_mean.at(n), c.boxcox_winsorized_sd.at(n))
        }
        TestVariant::CensoredOriginal => {
            (c.censored_original_mean.at(n, f), c.censored_original_sd.at(n, f))
        }
        TestVariant::CensoredBoxcox => {
            (c.censored_boxcox_mean.at(n, f), c.censored_boxcox_sd.at(n, f))
        }
    }
}

/// Calibrate the normality test's null models from fresh simulations: per
/// (variant, n [, censored fraction]) cell, the mean and sd of the
/// transformed correlation Y and the test's size against the shipped
/// coefficients; then refit the null models and report them next to the
/// published ones. Box-Cox variants run on the exp of each normal sample,
/// matching how the published models were calibrated.
pub fn run_calibration(config: &StudyConfig) -> Result<StudyReport> {
    let cfg = config.normalized()?;
    let start = Instant::now();
    let variants = cfg.variants.clone().expect("normalized");
    let uncensored: Vec<TestVariant> =
        variants.iter().copied().filter(|v| !v.is_censored()).collect();
    let censored: Vec<TestVariant> =
        variants.iter().copied().filter(|v| v.is_censored()).collect();
    let fractions: Vec<f64> = if censored.is_empty() {
        Vec::new()
    } else {
        cfg.censor_fractions
            .clone()
            .unwrap_or_else(|| (1..=10).map(|i| i as f64 * 0.05).collect())
    };
    let alpha = cfg.alpha.expect("normalized");
    let needs_exp = variants.iter().any(|v| {
        matches!(
            v,
            TestVariant::Boxcox | TestVariant::BoxcoxWinsorized | TestVariant::CensoredBoxcox
        )
    });

    // per (n, variant) and per (n, variant, f): (y values, reject count)
    let mut cells = Vec::new();
    let mut checks = Vec::new();
    // For refits: per uncensored variant, per n: (L, y_mean, y_mean_se, y_sd, y_sd_se)
    let mut refit_points: Vec<Vec<(f64, f64, f64, f64, f64)>> =
        vec![Vec::new(); uncensored.len()];
    // For bilinear refits: per censored variant: rows of ([1, L, f, fL], ...)
    let mut bilinear_points: Vec<Vec<([f64; 4], f64, f64, f64, f64)>> =
        vec![Vec::new(); censored.len()];

    for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
        let ks: Vec<usize> = fractions.iter().map(|&f| (f * n as f64).round() as usize).collect();
        type FRow = (Vec<(f64, bool)>, Vec<Vec<(f64, bool)>>);
        let rows: Vec<FRow> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| -> Result<FRow> {
                let draws = substream_for(cfg.seed, ni, rep).standard_normal(n);
                let exp_sample = if needs_exp {
                    Some(Sample::new(draws.iter().map(|z| z.exp()).collect::<Vec<_>>())?)
                } else {
                    None
                };
                let sample = Sample::new(draws)?;
                let pick = |v: TestVariant| -> &Sample {
                    match v {
                        TestVariant::Boxcox
                        | TestVariant::BoxcoxWinsorized
                        | TestVariant::CensoredBoxcox => exp_sample.as_ref().expect("prepared"),
                        _ => &sample,
                    }
                };
                let u = uncensored
                    .iter()
                    .map(|&v| {
                        let t = test_normality(pick(v), 0, v, alpha)?;
                        Ok((t.y, t.reject))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let c = censored
                    .iter()
                    .map(|&v| {
                        ks.iter()
                            .map(|&k| {
                                let t = test_normality(pick(v), k, v, alpha)?;
                                Ok((t.y, t.reject))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((u, c))
            })
            .collect::<Result<Vec<_>>>()?;

        let ell = ((n as f64) + 30.0).ln();
        let mut summarize = |ys: Vec<f64>,
                             rejects: usize,
                             variant: TestVariant,
                             f: f64|
         -> (Vec<Stat>, f64, f64, f64, f64) {
            let y_mean = mean(&ys);
            let y_mean_se = mean_se(&ys);
            let (y_sd, y_sd_se) = sd_with_se(&ys);
            let rate = rejects as f64 / ys.len() as f64;
            let (model_mean, model_sd) = published_null_model(variant, n, f);
            let stats = vec![
                Stat::new("y_mean", y_mean, Some(y_mean_se), Some(model_mean)),
                Stat::new("y_sd", y_sd, Some(y_sd_se), Some(model_sd)),
                Stat::new(
                    "rejection_rate",
                    rate,
                    Some(binomial_se(rate, ys.len())),
                    Some(alpha),
                ),
            ];
            (stats, y_mean, y_mean_se, y_sd, y_sd_se)
        };

        for (vi, &variant) in uncensored.iter().enumerate() {
            let ys: Vec<f64> = rows.iter().map(|r| r.0[vi].0).collect();
            let rejects = rows.iter().filter(|r| r.0[vi].1).count();
            let rate = rejects as f64 / ys.len() as f64;
            let (stats, y_mean, y_mean_se, y_sd, y_sd_se) =
                summarize(ys, rejects, variant, 0.0);
            refit_points[vi].push((ell, y_mean, y_mean_se, y_sd, y_sd_se));
            cells.push(Cell {
                label: variant.as_str().into(),
                coords: vec![("n".into(), n as f64)],
                stats,
            });
            let (lo, hi) = tol_bounds(alpha, 0.015, binomial_se(alpha, cfg.replicates));
            checks.push(StrictCheck::new(
                format!("size_{variant}_n{n}"),
                rate,
                lo.max(0.0),
                hi,
            ));
        }

        for (vi, &variant) in censored.iter().enumerate() {
            for (fi, &k) in ks.iter().enumerate() {
                let f_censored = k as f64 / n as f64;
                let ys: Vec<f64> = rows.iter().map(|r| r.1[vi][fi].0).collect();
                let rejects = rows.iter().filter(|r| r.1[vi][fi].1).count();
                let rate = rejects as f64 / ys.len() as f64;
                let (stats, y_mean, y_mean_se, y_sd, y_sd_se) =
                    summarize(ys, rejects, variant, f_censored);
                bilinear_points[vi].push((
                    [1.0, ell, f_censored, f_censored * ell],
                    y_mean,
                    y_mean_se,
                    y_sd,
                    y_sd_se,
                ));
                cells.push(Cell {
                    label: variant.as_str().into(),
                    coords: vec![
                        ("n".into(), n as f64),
                        ("censored_fraction".into(), f_censored),
                    ],
                    stats,
                });
                let (lo, hi) = tol_bounds(alpha, 0.02, binomial_se(alpha, cfg.replicates));
                checks.push(StrictCheck::new(
                    format!("size_{variant}_n{n}_f{f_censored:.2}"),
                    rate,
                    lo.max(0.0),
                    hi,
                ));
            }
        }
    }

    // Straight-line refits of the uncensored null models.
    if cfg.sample_sizes.len() >= 3 {
        for (vi, &variant) in uncensored.iter().enumerate() {
            let pts = &refit_points[vi];
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            for (for_sd, which) in [(false, "mean"), (true, "sd")] {
                let y: Vec<f64> = pts.iter().map(|p| if for_sd { p.3 } else { p.1 }).collect();
                let y_se: Vec<f64> = pts.iter().map(|p| if for_sd { p.4 } else { p.2 }).collect();
                let fit = refit_line(&x, &y, &y_se);
                let reference = f1_reference(variant, for_sd);
                cells.push(Cell {
                    label: format!("refit {variant} {which} model"),
                    coords: Vec::new(),
                    stats: vec![
                        Stat::new("intercept", fit.intercept, Some(fit.intercept_se), Some(reference.intercept)),
                        Stat::new("per_ln_n", fit.slope, Some(fit.slope_se), Some(reference.per_ln_n)),
                        Stat::new("resid_sd", fit.resid_sd, None, Some(reference.resid_sd)),
                        Stat::new("r_squared", fit.r_squared, None, Some(reference.r_squared)),
                    ],
                });
                if !for_sd {
                    let (lo, hi) = tol_bounds(reference.per_ln_n, 0.05, fit.slope_se);
                    checks.push(StrictCheck::new(
                        format!("refit_{variant}_mean_slope"),
                        fit.slope,
                        lo,
                        hi,
                    ));
                    if variant == TestVariant::Full
                        && cfg.sample_sizes.len() >= 5
                        && cfg.replicates >= 2_000
                    {
                        checks.push(StrictCheck::new(
                            "refit_full_mean_r_squared".into(),
                            fit.r_squared,
                            0.999,
                            1.0,
                        ));
                    }
                }
            }
        }
    }

    // Bilinear refits of the censored null models.
    let distinct_f = fractions.len();
    if cfg.sample_sizes.len() >= 2 && distinct_f >= 2 {
        for (vi, &variant) in censored.iter().enumerate() {
            let pts = &bilinear_points[vi];
            if pts.len() < 5 {
                continue;
            }
            let rows: Vec<[f64; 4]> = pts.iter().map(|p| p.0).collect();
            for (for_sd, which) in [(false, "mean"), (true, "sd")] {
                let y: Vec<f64> = pts.iter().map(|p| if for_sd { p.3 } else { p.1 }).collect();
                let y_se: Vec<f64> = pts.iter().map(|p| if for_sd { p.4 } else { p.2 }).collect();
                let Some(fit) = refit_bilinear(&rows, &y, &y_se) else { continue };
                let reference = f2_reference(variant, for_sd);
                let names = ["intercept", "per_ln_n", "per_f", "per_f_ln_n"];
                let mut stats: Vec<Stat> = (0..4)
                    .map(|i| {
                        Stat::new(
                            names[i],
                            fit.coeffs[i],
                            Some(fit.ses[i]),
                            Some(reference.coeffs[i]),
                        )
                    })
                    .collect();
                stats.push(Stat::new("resid_sd", fit.resid_sd, None, Some(reference.resid_sd)));
                stats.push(Stat::new("r_squared", fit.r_squared, None, Some(reference.r_squared)));
                cells.push(Cell {
                    label: format!("refit {variant} {which} model"),
                    coords: Vec::new(),
                    stats,
                });
            }
        }
    }

    Ok(StudyReport {
        config: cfg,
        algorithm_id: RngStream::ALGORITHM_ID.into(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        cells,
        checks,
        notes: vec![
            RNG_NOTE.into(),
            "All variants of a replicate share one normal sample; Box-Cox variants analyze its exp, as the shipped models were calibrated.".into(),
            "Rejection rates use the shipped coefficients, so they measure the size of the test as shipped, not of the refit.".into(),
        ],
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Study G: power against right skew
// ──────────────────────────────────────────────────────────────────────────

/// Power of the full-variant normality test against increasing right skew:
/// N(3, 1) samples raised to each shift power in turn through the signed
/// power map x -> sign(x) |x|^a, which leaves the shift 1 column exactly
/// normal (the true null) and matches the plain power on the positive mass,
/// which is all but 0.13% of N(3, 1). One base sample per replicate feeds
/// every shift, so the power curve is paired and its monotonicity is judged
/// on common samples.
pub fn run_power_study(
    config: &StudyConfig,
    external: Option<&ExternalArm>,
) -> Result<StudyReport> {
    let cfg = config.normalized()?;
    let start = Instant::now();
    let shifts = cfg.shift_powers.clone().expect("normalized");
    let n = cfg.sample_sizes[0];
    let alpha = cfg.alpha.expect("normalized");

    if let Some(arm) = external {
        for &(id, p) in &arm.pvalues {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter {
                    name: "external p-values".into(),
                    reason: format!("replicate {id} has p = {p}, outside [0, 1]"),
                });
            }
        }
    }

    let rejects: Vec<Vec<bool>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| -> Result<Vec<bool>> {
            let base: Vec<f64> = substream_for(cfg.seed, 0, rep)
                .standard_normal(n)
                .into_iter()
                .map(|z| 3.0 + z)
                .collect();
            shifts
                .iter()
                .map(|&a| {
                    let x: Vec<f64> =
                        base.iter().map(|z| z.signum() * z.abs().powf(a)).collect();
                    Ok(test_normality(&Sample::new(x)?, 0, TestVariant::Full, alpha)?.reject)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut checks = Vec::new();
    let mut rates = Vec::new();
    for (si, &a) in shifts.iter().enumerate() {
        let count = rejects.iter().filter(|row| row[si]).count();
        let rate = count as f64 / cfg.replicates as f64;
        rates.push(rate);
        let reference = if (a - 1.0).abs() < 1e-9 { Some(alpha) } else { None };
        cells.push(Cell::grid(
            vec![("n".into(), n as f64), ("shift".into(), a)],
            vec![Stat::new(
                "rejection_rate",
                rate,
                Some(binomial_se(rate, cfg.replicates)),
                reference,
            )],
        ));
    }

    if let Some(si) = shifts.iter().position(|&a| (a - 1.0).abs() < 1e-9) {
        let (lo, hi) = tol_bounds(alpha, 0.015, binomial_se(alpha, cfg.replicates));
        checks.push(StrictCheck::new(
            "size_at_shift_1".into(),
            rates[si],
            lo.max(0.0),
            hi,
        ));
    }
    let mut ordered: Vec<(f64, f64)> = shifts.iter().copied().zip(rates.iter().copied()).collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
    let violation = ordered
        .windows(2)
        .map(|w| (w[0].1 - w[1].1).max(0.0))
        .fold(0.0_f64, f64::max);
    checks.push(StrictCheck::new("max_monotonicity_violation".into(), violation, 0.0, 0.0));

    if let Some(arm) = external {
        let rate = arm.pvalues.iter().filter(|&&(_, p)| p < alpha).count() as f64
            / arm.pvalues.len().max(1) as f64;
        cells.push(Cell {
            label: format!("external arm: {}", arm.label),
            coords: Vec::new(),
            stats: vec![
                Stat::new(
                    "rejection_rate",
                    rate,
                    Some(binomial_se(rate, arm.pvalues.len().max(1))),
                    None,
                ),
                Stat::new("pvalue_count", arm.pvalues.len() as f64, None, None),
            ],
        });
    }

    Ok(StudyReport {
        config: cfg,
        algorithm_id: RngStream::ALGORITHM_ID.into(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        cells,
        checks,
        notes: vec![
            RNG_NOTE.into(),
            format!("Each replicate draws one N(3, 1) base sample of size {n} and maps it through sign(x) |x|^a for every shift power a, so the shift 1 column is the exact null and rejection rates across shifts are paired."),
            "An external arm, when provided, is summarized as supplied; its p-values are not recomputed.".into(),
        ],
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Dispatcher
// ──────────────────────────────────────────────────────────────────────────

/// Run whichever study the config names.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    match config.study {
        StudyId::ScoreProfile => run_score_profile(config),
        StudyId::SlopeEfficiency => run_slope_efficiency(config),
        StudyId::Censoring => run_censoring_study(config),
        StudyId::Winsor => run_winsor_study(config),
        StudyId::Boxcox => run_boxcox_study(config),
        StudyId::Calibrate => run_calibration(config),
        StudyId::Power => run_power_study(config, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(study: StudyId, replicates: usize) -> StudyConfig {
        StudyConfig { replicates, seed: RngStream::new(900), ..StudyConfig::default_for(study) }
    }

    #[test]
    fn study_ids_round_trip_through_names() {
        for id in StudyId::ALL {
            let parsed: StudyId = id.as_str().parse().unwrap();
            assert_eq!(parsed, id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.as_str()));
        }
        assert!("H-unknown".parse::<StudyId>().is_err());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = StudyConfig::default_for(StudyId::SlopeEfficiency);
        c.replicates = 50;
        assert!(c.normalized().is_err());

        let mut c = StudyConfig::default_for(StudyId::ScoreProfile);
        c.offsets = Some(vec![0.95]);
        assert!(c.normalized().is_err());

        let mut c = StudyConfig::default_for(StudyId::Boxcox);
        c.lambda_grid = Some(vec![0.3]);
        assert!(c.normalized().is_err());

        let mut c = StudyConfig::default_for(StudyId::Power);
        c.shift_powers = Some(vec![2.5]);
        assert!(c.normalized().is_err());

        let mut c = StudyConfig::default_for(StudyId::Censoring);
        c.censor_fractions = Some(vec![0.6]);
        assert!(c.normalized().is_err());
    }

    #[test]
    fn reports_are_bit_identical_across_runs_and_thread_counts() {
        let mut config = small(StudyId::Censoring, 200);
        config.sample_sizes = vec![60];
        config.censor_fractions = Some(vec![0.3]);
        let a = run_study(&config).unwrap();
        let b = run_study(&config).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.checks, b.checks);
        assert_eq!(a.config, b.config);

        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| run_study(&config)).unwrap();
        assert_eq!(a.cells, c.cells);
        assert_eq!(a.checks, c.checks);
    }

    #[test]
    fn score_profile_efficiencies_peak_inside_the_grid() {
        let mut config = small(StudyId::ScoreProfile, 400);
        config.offsets = Some(vec![0.0, 0.25, 0.5, 0.75]);
        let report = run_score_profile(&config).unwrap();
        assert_eq!(report.cells.len(), 4);
        let best = report
            .cells
            .iter()
            .map(|c| c.stat("efficiency").unwrap().value)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best - 1.0).abs() < 1e-12, "best efficiency must be exactly 1");
        for cell in &report.cells {
            let eff = cell.stat("efficiency").unwrap();
            assert!(eff.value > 0.0 && eff.value <= 1.0 + 1e-12);
            assert!(eff.mc_se.is_some(), "efficiency must carry an MC error");
        }
        // Weibull scoring should trail the best offset even at this scale.
        let weibull = report.cell("", &[("offset", 0.0)]).unwrap();
        assert!(weibull.stat("efficiency").unwrap().value < 0.99);
    }

    #[test]
    fn slope_efficiency_tracks_the_published_shape() {
        let mut config = small(StudyId::SlopeEfficiency, 2_000);
        config.sample_sizes = vec![120];
        let report = run_slope_efficiency(&config).unwrap();
        let cell = report.cell("", &[("n", 120.0)]).unwrap();
        let slope_mean = cell.stat("slope_mean").unwrap().value;
        let eff = cell.stat("efficiency").unwrap();
        assert!((slope_mean - 0.9939).abs() < 0.006, "slope mean {slope_mean}");
        assert!((eff.value - 99.6).abs() < 2.0, "efficiency {}", eff.value);
        assert!(eff.mc_se.unwrap() < 0.5);
        assert_eq!(cell.stat("s_mean").unwrap().reference, Some(0.9982));
    }

    #[test]
    fn censoring_efficiencies_match_the_models_loosely() {
        let mut config = small(StudyId::Censoring, 1_500);
        config.sample_sizes = vec![120];
        config.censor_fractions = Some(vec![0.5]);
        let report = run_censoring_study(&config).unwrap();
        let cell = report.cell("", &[("n", 120.0), ("censored_fraction", 0.5)]).unwrap();
        let sd_eff = cell.stat("sd_efficiency").unwrap();
        assert!((sd_eff.value - 0.3265).abs() < 0.1, "sd efficiency {}", sd_eff.value);
        assert_eq!(sd_eff.reference, Some(censored_efficiency_sd(0.5)));
        let limit_eff = cell.stat("limit_efficiency").unwrap().value;
        assert!(limit_eff > sd_eff.value, "limit must be hurt less than sd");
        assert!(report.checks.iter().any(|c| c.name.starts_with("sd_efficiency_n120")));
    }

    #[test]
    fn winsor_losses_grow_with_w() {
        let mut config = small(StudyId::Winsor, 3_000);
        config.sample_sizes = vec![120];
        let report = run_winsor_study(&config).unwrap();
        let regression = report.cell("loss regression", &[("n", 120.0)]).unwrap();
        let limit_slope = regression.stat("limit_loss_slope").unwrap().value;
        let sd_slope = regression.stat("sd_loss_slope").unwrap().value;
        let mean_slope = regression.stat("mean_loss_slope").unwrap().value;
        assert!((0.5..8.0).contains(&limit_slope), "limit slope {limit_slope}");
        assert!((2.0..9.0).contains(&sd_slope), "sd slope {sd_slope}");
        assert!(mean_slope.abs() < 3.0, "mean slope {mean_slope}");
        // The w = 0 baseline cell must exist and show near-zero loss.
        let base = report.cell("", &[("n", 120.0), ("w", 0.0)]).unwrap();
        assert!(base.stat("limit_loss").unwrap().value.abs() < 8.0);
    }

    #[test]
    fn boxcox_study_reports_paired_efficiency() {
        let mut config = small(StudyId::Boxcox, 150);
        config.lambda_grid = Some(vec![0.0, 1.0]);
        let report = run_boxcox_study(&config).unwrap();
        for lambda in [0.0, 1.0] {
            let cell = report.cell("", &[("lambda", lambda)]).unwrap();
            let eff = cell.stat("efficiency").unwrap();
            assert!((60.0..130.0).contains(&eff.value), "efficiency {}", eff.value);
            assert!(eff.mc_se.is_some());
            let corr = cell.stat("qq_pl_correlation").unwrap().value;
            assert!(corr > 0.9, "correlation {corr}");
            assert!(cell.stat("qq_bias").unwrap().value.abs() < 0.2);
        }
        let summary = report.cell("grid summary", &[]).unwrap();
        assert_eq!(summary.stat("average_qq_pl_correlation").unwrap().reference, Some(0.9957));
    }

    #[test]
    fn calibration_matches_published_models_loosely() {
        let mut config = small(StudyId::Calibrate, 400);
        config.sample_sizes = vec![60, 120, 240];
        config.variants = Some(vec![TestVariant::Full, TestVariant::Winsorized]);
        let report = run_calibration(&config).unwrap();
        let cell = report
            .cells
            .iter()
            .find(|c| c.label == "full" && c.coord("n") == Some(120.0))
            .unwrap();
        let y_mean = cell.stat("y_mean").unwrap();
        assert!(
            (y_mean.value - y_mean.reference.unwrap()).abs() < 0.15,
            "mean Y {} vs model {}",
            y_mean.value,
            y_mean.reference.unwrap()
        );
        let rate = cell.stat("rejection_rate").unwrap().value;
        assert!((0.0..0.13).contains(&rate), "size {rate}");
        let refit = report.cell("refit full mean model", &[]).unwrap();
        let slope = refit.stat("per_ln_n").unwrap();
        assert!((slope.value - (-1.802)).abs() < 0.5, "refit slope {}", slope.value);
        assert!(slope.mc_se.is_some());
    }

    #[test]
    fn calibration_censored_arm_reports_sizes() {
        let mut config = small(StudyId::Calibrate, 300);
        config.sample_sizes = vec![60, 120];
        config.variants = Some(vec![TestVariant::CensoredOriginal]);
        config.censor_fractions = Some(vec![0.1, 0.3, 0.5]);
        let report = run_calibration(&config).unwrap();
        let cell = report
            .cells
            .iter()
            .find(|c| {
                c.label == "censored-original"
                    && c.coord("n") == Some(120.0)
                    && c.coord("censored_fraction") == Some(0.3)
            })
            .unwrap();
        let rate = cell.stat("rejection_rate").unwrap().value;
        assert!((0.0..0.15).contains(&rate), "censored size {rate}");
        assert!(report.cell("refit censored-original mean model", &[]).is_some());
    }

    #[test]
    fn power_rises_with_shift_and_merges_external_arms() {
        let mut config = small(StudyId::Power, 300);
        config.shift_powers = Some(vec![1.0, 1.5, 2.0]);
        let external = ExternalArm {
            label: "external test".into(),
            pvalues: (0..300).map(|i| (i as u64, if i % 4 == 0 { 0.01 } else { 0.5 })).collect(),
        };
        let report = run_power_study(&config, Some(&external)).unwrap();
        let rate_at = |shift: f64| {
            report
                .cell("", &[("shift", shift)])
                .unwrap()
                .stat("rejection_rate")
                .unwrap()
                .value
        };
        assert!(rate_at(1.0) < 0.15, "size {}", rate_at(1.0));
        assert!(rate_at(2.0) >= rate_at(1.0), "power should not fall with shift");
        let arm = report.cell("external arm: external test", &[]).unwrap();
        assert!((arm.stat("rejection_rate").unwrap().value - 0.25).abs() < 1e-12);

        let bad = ExternalArm { label: "bad".into(), pvalues: vec![(0, 1.5)] };
        assert!(run_power_study(&config, Some(&bad)).is_err());
    }

    #[test]
    fn every_ratio_statistic_carries_an_mc_error() {
        let mut config = small(StudyId::SlopeEfficiency, 300);
        config.sample_sizes = vec![60];
        let report = run_slope_efficiency(&config).unwrap();
        for cell in &report.cells {
            for stat in &cell.stats {
                if stat.name.contains("efficiency") {
                    assert!(stat.mc_se.is_some(), "{} lacks an MC error", stat.name);
                }
            }
        }
    }

    #[test]
    fn report_json_round_trips() {
        let mut config = small(StudyId::Power, 150);
        config.shift_powers = Some(vec![1.0, 2.0]);
        let report = run_study(&config).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: StudyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
        assert!(!json.contains("NaN"), "reports must serialize finite numbers only");
    }

    #[test]
    fn normalized_config_echo_reproduces_the_run() {
        let config = StudyConfig {
            study: StudyId::Power,
            replicates: 150,
            sample_sizes: vec![60],
            seed: RngStream::new(4),
            offsets: None,
            censor_fractions: None,
            winsor_counts: None,
            lambda_grid: None,
            shift_powers: Some(vec![1.0, 1.4]),
            variants: None,
            alpha: None,
        };
        let first = run_study(&config).unwrap();
        assert_eq!(first.config.alpha, Some(0.05));
        let second = run_study(&first.config).unwrap();
        assert_eq!(first.cells, second.cells);
    }
}
