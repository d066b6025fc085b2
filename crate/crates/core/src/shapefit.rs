//! Shape estimation by maximizing QQ linearity.
//!
//! Pick a one-parameter family (Box-Cox powers of the data, or Student-t
//! reference scores), sweep the parameter, and keep the value whose QQ plot
//! is straightest. A pseudolikelihood alternative is provided for the
//! Box-Cox case so the two estimators can be compared head to head.
//!
//! Searches run a coarse grid first, then golden-section refinement inside
//! the best bracket. Ties on the grid resolve toward the null model: the
//! power closest to 1 (no transform), or the largest tail index (closest to
//! normal).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::student_t_inv_cdf;
use crate::qqfit::{
    fit_censored, fit_full, fit_winsorized, qq_regression, QQFit, Sample,
};
use crate::scores::{normal_scores, t_scores, PlottingPosition};

// ──────────────────────────────────────────────────────────────────────────
// Box-Cox transform
// ──────────────────────────────────────────────────────────────────────────

/// Box-Cox power transform: (x^λ − 1)/λ, with the λ → 0 limit ln x.
///
/// Evaluated as expm1(λ·ln x)/λ, which is exact in the same places the
/// naive form is and stays accurate for |λ| near zero where x^λ − 1 would
/// cancel catastrophically.
pub fn boxcox_transform(x: &[f64], lambda: f64) -> Result<Vec<f64>> {
    for (index, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if v <= 0.0 {
            return Err(Error::NonPositive { index, value: v });
        }
    }
    Ok(x.iter().map(|&v| boxcox_one(v.ln(), lambda)).collect())
}

/// Transform a single value given its natural log.
#[inline]
fn boxcox_one(ln_x: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        ln_x
    } else {
        (lambda * ln_x).exp_m1() / lambda
    }
}

// ──────────────────────────────────────────────────────────────────────────
// Search machinery
// ──────────────────────────────────────────────────────────────────────────

/// How to resolve ties between grid points with equal objective.
#[derive(Clone, Copy)]
enum TieRule {
    /// Prefer the candidate nearest this value (exact distance ties go to
    /// the larger candidate).
    Nearest(f64),
    Largest,
}

impl TieRule {
    fn better(&self, candidate: f64, incumbent: f64) -> bool {
        match *self {
            TieRule::Nearest(target) => {
                let dc = (candidate - target).abs();
                let di = (incumbent - target).abs();
                dc < di || (dc == di && candidate > incumbent)
            }
            TieRule::Largest => candidate > incumbent,
        }
    }
}

struct SearchResult {
    best_x: f64,
    trace: Vec<(f64, f64)>,
    /// The objective was flat across the whole grid; `best_x` fell back to
    /// the tie rule's preferred point.
    flat: bool,
}

const FLAT_TOL: f64 = 1.0e-12;
const REFINE_TOL: f64 = 1.0e-4;

/// Evaluate `objective` on `grid`, pick the best cell under `tie`, then
/// golden-section the bracket around it down to width 1e-4. The returned
/// optimum is the best point ever evaluated, so refining a grid can never
/// report a worse objective than the grid itself.
fn grid_then_golden(
    grid: &[f64],
    tie: TieRule,
    mut objective: impl FnMut(f64) -> Result<f64>,
) -> Result<SearchResult> {
    assert!(!grid.is_empty());
    let mut trace = Vec::with_capacity(grid.len() + 32);
    for &x in grid {
        trace.push((x, objective(x)?));
    }

    let obj_max = trace.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let obj_min = trace.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let flat_band = FLAT_TOL * obj_max.abs().max(1.0);
    if obj_max - obj_min <= flat_band {
        // Nothing to choose between; hand back the tie rule's favorite.
        let mut best = grid[0];
        for &x in &grid[1..] {
            if tie.better(x, best) {
                best = x;
            }
        }
        return Ok(SearchResult {
            best_x: best,
            trace,
            flat: true,
        });
    }

    let mut best_i = 0;
    for (i, &(x, obj)) in trace.iter().enumerate() {
        let (bx, bobj) = trace[best_i];
        if obj > bobj + flat_band || (obj >= bobj - flat_band && tie.better(x, bx)) {
            best_i = i;
        }
    }
    let (mut best_x, mut best_obj) = trace[best_i];

    // Golden-section refinement of the surrounding bracket.
    let mut lo = grid[best_i.saturating_sub(1)];
    let mut hi = grid[(best_i + 1).min(grid.len() - 1)];
    const INV_PHI: f64 = 0.6180339887498949;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    trace.push((c, fc));
    trace.push((d, fd));
    while hi - lo > REFINE_TOL {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = objective(c)?;
            trace.push((c, fc));
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = objective(d)?;
            trace.push((d, fd));
        }
    }
    for &(x, obj) in &trace {
        if obj > best_obj {
            best_x = x;
            best_obj = obj;
        }
    }
    Ok(SearchResult {
        best_x,
        trace,
        flat: false,
    })
}

fn validate_interval(name: &'static str, range: (f64, f64)) -> Result<()> {
    if !(range.0.is_finite() && range.1.is_finite() && range.0 < range.1) {
        return Err(Error::InvalidParameter {
            name: name.into(),
            reason: format!("[{}, {}] is not a finite, nonempty interval", range.0, range.1),
        });
    }
    Ok(())
}

fn step_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut x = lo;
    while x < hi - 1.0e-9 {
        grid.push(x);
        x += step;
    }
    grid.push(hi);
    grid
}

fn log_spaced_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    let mut grid: Vec<f64> = (0..points)
        .map(|j| lo * (ratio * j as f64 / (points - 1) as f64).exp())
        .collect();
    // Pin the endpoints exactly; exp/ln round-tripping can land a hair
    // outside the declared interval.
    grid[0] = lo;
    grid[points - 1] = hi;
    grid
}

// ──────────────────────────────────────────────────────────────────────────
// Box-Cox fitting
// ──────────────────────────────────────────────────────────────────────────

/// Which objective chose the power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxCoxMethod {
    MaxQqr,
    Pseudolikelihood,
}

/// Result of a Box-Cox power search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxFit {
    pub lambda_hat: f64,
    pub method: BoxCoxMethod,
    /// QQ correlation of the transformed data at the chosen power. For the
    /// max-QQr method this is also the search objective at its maximum.
    pub qqr_at_opt: f64,
    /// Full QQ fit of the transformed data at `lambda_hat`.
    pub fit_at_opt: QQFit,
    /// Every (λ, objective) pair evaluated: the coarse grid in ascending
    /// order, then refinement points in evaluation order. The objective is
    /// QQr for max-QQr and the profile log-likelihood for pseudolikelihood.
    pub search_trace: Vec<(f64, f64)>,
    /// The objective was flat over the whole grid, so `lambda_hat` is the
    /// no-transform default rather than a real preference.
    pub no_preference: bool,
}

/// Which observations enter the regression; mirrors the fit variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Window {
    Full,
    CensorBelow(usize),
    Winsor(usize),
}

const LAMBDA_GRID_STEP: f64 = 0.25;
pub const DEFAULT_LAMBDA_RANGE: (f64, f64) = (-3.0, 3.0);

/// Shared core of the QQr-objective Box-Cox fits.
fn fit_boxcox_qqr_window(
    sample: &Sample,
    lambda_range: (f64, f64),
    window: Window,
) -> Result<BoxCoxFit> {
    validate_interval("lambda_range", lambda_range)?;
    let n = sample.n();
    if n < 10 {
        return Err(Error::TooFewObservations { n, min: 10 });
    }
    let sorted = sample.sorted();
    // Positivity check up front so the error indexes the offending value
    // (index within the sorted sample) instead of surfacing mid-search.
    if sorted[0] <= 0.0 {
        return Err(Error::NonPositive {
            index: 0,
            value: sorted[0],
        });
    }
    let (from, to) = match window {
        Window::Full => (0, n),
        Window::CensorBelow(k) => (k, n),
        Window::Winsor(w) => (w, n - w),
    };
    // The transform is monotone increasing for every λ, so transforming the
    // sorted sample keeps it sorted and the window indices keep their ranks.
    let ln_sorted: Vec<f64> = sorted.iter().map(|v| v.ln()).collect();
    let scores = normal_scores(n, &PlottingPosition::hazen())?;
    let mut buf = vec![0.0; to - from];

    let grid = step_grid(lambda_range.0, lambda_range.1, LAMBDA_GRID_STEP);
    let no_transform_default = 1.0_f64.clamp(lambda_range.0, lambda_range.1);
    let outcome = grid_then_golden(&grid, TieRule::Nearest(no_transform_default), |lambda| {
        for (slot, lnx) in buf.iter_mut().zip(&ln_sorted[from..to]) {
            *slot = boxcox_one(*lnx, lambda);
        }
        qq_regression(&scores[from..to], &buf).map(|(_, _, r)| r)
    })?;

    let lambda_hat = if outcome.flat {
        no_transform_default
    } else {
        outcome.best_x
    };
    let transformed = Sample::new(boxcox_transform(sorted, lambda_hat)?)?;
    let fit_at_opt = match window {
        Window::Full => fit_full(&transformed, &PlottingPosition::hazen())?,
        Window::CensorBelow(k) => fit_censored(&transformed, k, &PlottingPosition::hazen())?,
        Window::Winsor(w) => fit_winsorized(&transformed, w, &PlottingPosition::hazen())?,
    };
    Ok(BoxCoxFit {
        lambda_hat,
        method: BoxCoxMethod::MaxQqr,
        qqr_at_opt: fit_at_opt.r,
        fit_at_opt,
        search_trace: outcome.trace,
        no_preference: outcome.flat,
    })
}

/// Box-Cox power chosen by maximizing the QQ correlation of the transformed
/// data against Hazen normal scores.
pub fn fit_boxcox_qqr(sample: &Sample, lambda_range: (f64, f64)) -> Result<BoxCoxFit> {
    fit_boxcox_qqr_window(sample, lambda_range, Window::Full)
}

/// Max-QQr Box-Cox fit with the `k` smallest observations censored: each
/// trial power transforms the data, then the censored QQ regression scores
/// the linearity. Backs the censored Box-Cox normality-test variant.
pub fn fit_boxcox_qqr_censored(
    sample: &Sample,
    k: usize,
    lambda_range: (f64, f64),
) -> Result<BoxCoxFit> {
    if k == 0 {
        return fit_boxcox_qqr(sample, lambda_range);
    }
    let n = sample.n();
    if k + 3 > n {
        return Err(Error::InvalidCensoring {
            k,
            n,
            reason: format!(
                "only {} observations would remain; at least 3 are needed",
                n.saturating_sub(k)
            ),
        });
    }
    fit_boxcox_qqr_window(sample, lambda_range, Window::CensorBelow(k))
}

/// Max-QQr Box-Cox fit scored on the winsorized QQ regression (the `w`
/// smallest and largest observations sit out). Backs the winsorized Box-Cox
/// normality-test variant.
pub fn fit_boxcox_qqr_winsorized(
    sample: &Sample,
    w: usize,
    lambda_range: (f64, f64),
) -> Result<BoxCoxFit> {
    if w == 0 {
        return fit_boxcox_qqr(sample, lambda_range);
    }
    let n = sample.n();
    if n as i64 - 2 * (w as i64) < 10 {
        return Err(Error::InvalidWinsorization {
            w,
            n,
            reason: "fewer than 10 observations would remain".into(),
        });
    }
    fit_boxcox_qqr_window(sample, lambda_range, Window::Winsor(w))
}

/// Box-Cox power chosen by maximizing the profile log-likelihood
/// ℓ(λ) = −(n/2)·ln(σ̂²(λ)) + (λ−1)·Σ ln xᵢ, the conventional competitor
/// to the QQr objective. Uncensored samples only.
pub fn fit_boxcox_pl(sample: &Sample, lambda_range: (f64, f64)) -> Result<BoxCoxFit> {
    validate_interval("lambda_range", lambda_range)?;
    let n = sample.n();
    if n < 10 {
        return Err(Error::TooFewObservations { n, min: 10 });
    }
    let sorted = sample.sorted();
    if sorted[0] <= 0.0 {
        return Err(Error::NonPositive {
            index: 0,
            value: sorted[0],
        });
    }
    let ln_sorted: Vec<f64> = sorted.iter().map(|v| v.ln()).collect();
    let sum_ln: f64 = ln_sorted.iter().sum();
    let nf = n as f64;
    let mut buf = vec![0.0; n];

    let grid = step_grid(lambda_range.0, lambda_range.1, LAMBDA_GRID_STEP);
    let no_transform_default = 1.0_f64.clamp(lambda_range.0, lambda_range.1);
    let outcome = grid_then_golden(&grid, TieRule::Nearest(no_transform_default), |lambda| {
        for (slot, lnx) in buf.iter_mut().zip(&ln_sorted) {
            *slot = boxcox_one(*lnx, lambda);
        }
        let mean = buf.iter().sum::<f64>() / nf;
        let var_ml = buf.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / nf;
        if var_ml == 0.0 {
            return Err(Error::ZeroVariance);
        }
        Ok(-0.5 * nf * var_ml.ln() + (lambda - 1.0) * sum_ln)
    })?;

    let lambda_hat = if outcome.flat {
        no_transform_default
    } else {
        outcome.best_x
    };
    let transformed = Sample::new(boxcox_transform(sorted, lambda_hat)?)?;
    let fit_at_opt = fit_full(&transformed, &PlottingPosition::hazen())?;
    Ok(BoxCoxFit {
        lambda_hat,
        method: BoxCoxMethod::Pseudolikelihood,
        qqr_at_opt: fit_at_opt.r,
        fit_at_opt,
        search_trace: outcome.trace,
        no_preference: outcome.flat,
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Student-t tail-weight fitting
// ──────────────────────────────────────────────────────────────────────────

/// Result of the Student-t tail-weight search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TFit {
    pub nu_hat: f64,
    pub qqr_at_opt: f64,
    /// Intercept of the QQ line at the optimum: the location estimate.
    pub mu_hat: f64,
    /// Slope of the QQ line at the optimum. This is the t model's scale
    /// multiplier, not the standard deviation (for small ν the two differ
    /// substantially).
    pub sigma_hat: f64,
    /// mu_hat + sigma_hat · t-quantile(0.975, nu_hat).
    pub upper_limit: f64,
    pub search_trace: Vec<(f64, f64)>,
}

pub const DEFAULT_NU_RANGE: (f64, f64) = (1.0, 200.0);
const NU_GRID_POINTS: usize = 40;

/// Fit a Student-t reference shape by line search on ν, maximizing the QQ
/// correlation of the sample against t scores.
///
/// `integer_only` restricts candidates to whole numbers (no refinement);
/// otherwise a 40-point logarithmic grid over `nu_range` is refined by
/// golden section. Near-normal data push the estimate to the upper bound,
/// since normality is the ν → ∞ limit.
pub fn fit_t_nu(sample: &Sample, nu_range: (f64, f64), integer_only: bool) -> Result<TFit> {
    validate_interval("nu_range", nu_range)?;
    if nu_range.0 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "nu_range".into(),
            reason: format!("lower bound must be positive, got {}", nu_range.0),
        });
    }
    let n = sample.n();
    if n < 10 {
        return Err(Error::TooFewObservations { n, min: 10 });
    }
    let sorted = sample.sorted();
    let pos = PlottingPosition::hazen();
    let eval = |nu: f64| -> Result<f64> {
        let scores = t_scores(n, nu, &pos)?;
        qq_regression(&scores, sorted).map(|(_, _, r)| r)
    };

    let outcome = if integer_only {
        let lo = nu_range.0.ceil().max(1.0) as u64;
        let hi = nu_range.1.floor() as u64;
        if lo > hi {
            return Err(Error::InvalidParameter {
                name: "nu_range".into(),
                reason: "contains no integers".into(),
            });
        }
        let grid: Vec<f64> = (lo..=hi).map(|v| v as f64).collect();
        let mut trace = Vec::with_capacity(grid.len());
        for &x in &grid {
            trace.push((x, eval(x)?));
        }
        let mut best = trace[0];
        for &(x, obj) in &trace[1..] {
            // Largest ν wins ties: iterate ascending and take >=.
            if obj >= best.1 {
                best = (x, obj);
            }
        }
        SearchResult {
            best_x: best.0,
            trace,
            flat: false,
        }
    } else {
        let grid = log_spaced_grid(nu_range.0, nu_range.1, NU_GRID_POINTS);
        grid_then_golden(&grid, TieRule::Largest, eval)?
    };

    let nu_hat = outcome.best_x;
    let scores = t_scores(n, nu_hat, &pos)?;
    let (mu_hat, sigma_hat, qqr_at_opt) = qq_regression(&scores, sorted)?;
    let upper_limit = mu_hat + sigma_hat * student_t_inv_cdf(0.975, nu_hat)?;
    Ok(TFit {
        nu_hat,
        qqr_at_opt,
        mu_hat,
        sigma_hat,
        upper_limit,
        search_trace: outcome.trace,
    })
}
