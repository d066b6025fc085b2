//! The QQ line fit: ordinary least squares of an ordered sample on its
//! distributional scores.
//!
//! With normal scores the fitted intercept estimates the mean, the slope
//! estimates the standard deviation, and the correlation of the plotted
//! points measures how normal the sample looks. Two robust variants blank
//! out part of the sample while keeping every remaining observation at its
//! original rank: a left-censored fit for detection-limit data and a
//! winsorized fit that drops both tails from the regression.
//!
//! Standard errors come from effective-sample-size models rather than the
//! usual regression formulas, because order statistics are correlated and
//! the blanked variants discard information unevenly: censoring mostly
//! costs scale precision, winsorizing costs both tails of the reference
//! interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::{normal_scores, PlottingPosition};

// ──────────────────────────────────────────────────────────────────────────
// Samples and the raw regression
// ──────────────────────────────────────────────────────────────────────────

/// A validated sample, held in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    sorted: Vec<f64>,
}

impl Sample {
    /// Validates and sorts. Rejects empty input and non-finite values;
    /// a NaN that slipped into an order-statistic method would silently
    /// scramble the ranks, so it is refused up front.
    pub fn new(values: impl Into<Vec<f64>>) -> Result<Self> {
        let mut v: Vec<f64> = values.into();
        if v.is_empty() {
            return Err(Error::EmptySample);
        }
        for (index, x) in v.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite { index });
            }
        }
        v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { sorted: v })
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    /// The observations in ascending order.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn is_constant(&self) -> bool {
        self.sorted[0] == self.sorted[self.sorted.len() - 1]
    }
}

/// Least-squares line of `y` on `x` plus their correlation, as
/// `(intercept, slope, r)`.
///
/// This is the one place the crate actually runs a regression; every fit
/// below funnels into it with some choice of score/ordinate pairs.
pub fn qq_regression(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter {
            name: "regression input".into(),
            reason: format!("{} scores vs {} ordinates", x.len(), y.len()),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewObservations { n, min: 3 });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidParameter {
            name: "scores".into(),
            reason: "score values are all equal".into(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok((intercept, slope, r))
}

// ──────────────────────────────────────────────────────────────────────────
// Fit results
// ──────────────────────────────────────────────────────────────────────────

/// Conditions worth surfacing without failing the fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitFlags {
    /// The fitted slope came out nonpositive. Cannot happen when ordered
    /// data meet increasing scores, but `qq_regression` accepts arbitrary
    /// pairs and downstream consumers deserve the signal rather than a
    /// silently clamped value.
    pub nonpositive_slope: bool,
    /// More than half the sample was blanked as censored. The fit is
    /// returned, but the effective-sample-size models are extrapolating
    /// outside the range they were built on.
    pub heavy_censoring: bool,
}

/// Result of regressing an ordered sample on normal scores.
///
/// `intercept` and `slope` estimate the location and scale of the reference
/// shape; with normal scores those are the mean and standard deviation. The
/// three `n_eff_*` fields are the effective sample sizes behind the standard
/// errors of the location, the scale, and an upper reference limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QQFit {
    pub n: usize,
    /// Observations blanked from the lower tail as censored.
    pub censored_below: usize,
    /// Observations dropped from each tail by winsorizing.
    pub winsorized_per_tail: usize,
    pub intercept: f64,
    pub slope: f64,
    /// Correlation between the ordered sample and its scores.
    pub r: f64,
    pub n_eff_mean: f64,
    pub n_eff_sd: f64,
    pub n_eff_limit: f64,
    pub se_mean: f64,
    pub se_sd: f64,
    pub flags: FitFlags,
}

/// A two-sided reference interval `intercept ± z·slope` with standard
/// errors for both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInterval {
    pub z: f64,
    pub lower: f64,
    pub upper: f64,
    pub se_lower: f64,
    pub se_upper: f64,
}

impl QQFit {
    fn from_parts(
        n: usize,
        censored_below: usize,
        winsorized_per_tail: usize,
        intercept: f64,
        slope: f64,
        r: f64,
        n_eff_mean: f64,
        n_eff_sd: f64,
        n_eff_limit: f64,
    ) -> Self {
        let scale = slope.abs();
        QQFit {
            n,
            censored_below,
            winsorized_per_tail,
            intercept,
            slope,
            r,
            n_eff_mean,
            n_eff_sd,
            n_eff_limit,
            se_mean: scale / n_eff_mean.sqrt(),
            se_sd: scale / (2.0 * n_eff_sd).sqrt(),
            flags: FitFlags {
                nonpositive_slope: slope <= 0.0,
                heavy_censoring: 2 * censored_below > n,
            },
        }
    }

    /// Reference interval at normal deviate `z`, e.g. `z = 1.959964` for
    /// central 95% coverage.
    ///
    /// Both ends get the same standard error `slope·sqrt((1 + z²/2)/n_eff)`:
    /// with symmetric scores the two limits are mirror-image statistics of
    /// the same fit, so nothing distinguishes their sampling variability.
    pub fn reference_interval(&self, z: f64) -> Result<ReferenceInterval> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "z".into(),
                reason: format!("normal deviate must be positive and finite, got {z}"),
            });
        }
        let se = self.slope.abs() * ((1.0 + 0.5 * z * z) / self.n_eff_limit).sqrt();
        Ok(ReferenceInterval {
            z,
            lower: self.intercept - z * self.slope,
            upper: self.intercept + z * self.slope,
            se_lower: se,
            se_upper: se,
        })
    }
}

// ──────────────────────────────────────────────────────────────────────────
// Effective-sample-size models
// ──────────────────────────────────────────────────────────────────────────

/// Fraction of mean-estimation information kept when the lowest `k` of `n`
/// observations are censored.
pub fn censored_efficiency_mean(k: usize, n: usize) -> f64 {
    1.0 - 1.5 * (k as f64 / n as f64).powf(1.7)
}

/// Fraction of scale-estimation information kept, as a function of the
/// uncensored fraction `f`.
pub fn censored_efficiency_sd(f: f64) -> f64 {
    (2.5 - 1.5 * f).powi(-2)
}

/// Fraction of upper-reference-limit information kept, as a function of the
/// uncensored fraction `f`.
pub fn censored_efficiency_limit(f: f64) -> f64 {
    (1.38 - 0.37 * f).powi(-2)
}

// ──────────────────────────────────────────────────────────────────────────
// The fits
// ──────────────────────────────────────────────────────────────────────────

/// Full-sample QQ fit against normal scores.
pub fn fit_full(sample: &Sample, pos: &PlottingPosition) -> Result<QQFit> {
    fit_censored(sample, 0, pos)
}

/// QQ fit with the `k` smallest observations treated as censored.
///
/// The censored values and their scores are blanked out as pairs: every
/// surviving observation keeps its full-sample rank, so the scores are
/// those of ranks k+1..=n out of n, not a fresh score vector of length
/// n - k. With `k = 0` this is exactly the full fit.
pub fn fit_censored(sample: &Sample, k: usize, pos: &PlottingPosition) -> Result<QQFit> {
    let n = sample.n();
    let used = n.checked_sub(k).ok_or_else(|| Error::InvalidCensoring {
        k,
        n,
        reason: "more censored values than observations".into(),
    })?;
    if used < 3 {
        // Distinguish "the sample is just too small" from "censoring ate it".
        if k == 0 {
            return Err(Error::TooFewObservations { n, min: 3 });
        }
        return Err(Error::InvalidCensoring {
            k,
            n,
            reason: format!("only {used} observations would remain; at least 3 are needed"),
        });
    }
    let scores = normal_scores(n, pos)?;
    let (intercept, slope, r) = qq_regression(&scores[k..], &sample.sorted()[k..])?;

    let nf = n as f64;
    let (ne_mean, ne_sd, ne_limit) = if k == 0 {
        (nf, nf, nf)
    } else {
        let f = 1.0 - k as f64 / nf;
        (
            nf * censored_efficiency_mean(k, n),
            nf * censored_efficiency_sd(f),
            nf * censored_efficiency_limit(f),
        )
    };
    Ok(QQFit::from_parts(
        n, k, 0, intercept, slope, r, ne_mean, ne_sd, ne_limit,
    ))
}

/// QQ fit with the `w` smallest and `w` largest observations dropped from
/// the regression.
///
/// The interior observations keep their full-sample ranks, exactly as in
/// the censored fit. Information loss is modeled as costing nothing for the
/// mean, 5 observations per trimmed pair for the scale, and 3.5 for the
/// upper limit.
pub fn fit_winsorized(sample: &Sample, w: usize, pos: &PlottingPosition) -> Result<QQFit> {
    let n = sample.n();
    if w == 0 {
        return fit_full(sample, pos);
    }
    let kept = n as i64 - 2 * w as i64;
    if kept < 10 {
        return Err(Error::InvalidWinsorization {
            w,
            n,
            reason: format!("only {} observations would remain; at least 10 are needed", kept.max(0)),
        });
    }
    if n as i64 - 5 * (w as i64) < 1 {
        return Err(Error::InvalidWinsorization {
            w,
            n,
            reason: "effective sample size for the scale would be nonpositive".into(),
        });
    }
    let scores = normal_scores(n, pos)?;
    let (intercept, slope, r) = qq_regression(&scores[w..n - w], &sample.sorted()[w..n - w])?;
    let nf = n as f64;
    let wf = w as f64;
    Ok(QQFit::from_parts(
        n,
        0,
        w,
        intercept,
        slope,
        r,
        nf,
        nf - 5.0 * wf,
        nf - 3.5 * wf,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE10: [f64; 10] = [2.1, -0.3, 0.7, 1.15, -1.8, 0.05, 3.2, -0.6, 1.0, 0.4];

    fn hazen() -> PlottingPosition {
        PlottingPosition::hazen()
    }

    // Reference numbers below were computed independently with 40-digit
    // arithmetic on the same sample.

    #[test]
    fn full_fit_matches_reference_regression() {
        let s = Sample::new(SAMPLE10.as_slice()).unwrap();
        let fit = fit_full(&s, &hazen()).unwrap();
        assert!((fit.intercept - 0.59).abs() < 1e-14);
        assert!((fit.slope - 1.4099317815189899).abs() < 1e-13);
        assert!((fit.r - 0.99029040769609390).abs() < 1e-13);
        assert_eq!(fit.n, 10);
        assert_eq!((fit.n_eff_mean, fit.n_eff_sd, fit.n_eff_limit), (10.0, 10.0, 10.0));
        assert!(!fit.flags.nonpositive_slope);
        assert!(!fit.flags.heavy_censoring);
    }

    #[test]
    fn full_fit_intercept_is_the_sample_mean() {
        // Symmetric scores average to zero, so the intercept must equal the
        // plain mean up to rounding.
        let s = Sample::new(vec![5.0, 7.5, 3.25, 9.0, 4.0, 6.125, 8.5]).unwrap();
        let fit = fit_full(&s, &hazen()).unwrap();
        let mean = s.sorted().iter().sum::<f64>() / 7.0;
        assert!((fit.intercept - mean).abs() < 1e-12);
    }

    #[test]
    fn censored_fit_matches_reference_regression() {
        let s = Sample::new(SAMPLE10.as_slice()).unwrap();
        let fit = fit_censored(&s, 3, &hazen()).unwrap();
        assert!((fit.intercept - 0.49893425755546939).abs() < 1e-13);
        assert!((fit.slope - 1.5219904517735715).abs() < 1e-13);
        assert!((fit.r - 0.98462293896247098).abs() < 1e-13);
        assert_eq!(fit.censored_below, 3);
    }

    #[test]
    fn winsorized_fit_matches_reference_regression() {
        let mut vals = SAMPLE10.to_vec();
        vals.extend([0.0, 0.2]); // need n - 2w >= 10
        let s = Sample::new(SAMPLE10.as_slice()).unwrap();
        // The frozen reference uses n = 10, w = 2, which keeps only 6
        // points; bypass the interior-count rule through qq_regression to
        // check the arithmetic, then test the public path at larger n.
        let scores = normal_scores(10, &hazen()).unwrap();
        let (inter, slope, r) = qq_regression(&scores[2..8], &s.sorted()[2..8]).unwrap();
        assert!((inter - 0.5).abs() < 1e-14);
        assert!((slope - 1.1157663797631716).abs() < 1e-13);
        assert!((r - 0.99253594051628713).abs() < 1e-13);

        let s = Sample::new(vals).unwrap();
        let fit = fit_winsorized(&s, 1, &hazen()).unwrap();
        assert_eq!(fit.winsorized_per_tail, 1);
        assert_eq!(fit.n, 12);
        assert_eq!(fit.n_eff_mean, 12.0);
        assert_eq!(fit.n_eff_sd, 7.0);
        assert_eq!(fit.n_eff_limit, 8.5);
    }

    #[test]
    fn exact_lines_are_recovered_through_every_variant() {
        let pos = hazen();
        let scores = normal_scores(24, &pos).unwrap();
        let vals: Vec<f64> = scores.iter().map(|t| 3.0 + 2.0 * t).collect();
        let s = Sample::new(vals).unwrap();
        for fit in [
            fit_full(&s, &pos).unwrap(),
            fit_censored(&s, 6, &pos).unwrap(),
            fit_winsorized(&s, 2, &pos).unwrap(),
        ] {
            assert!((fit.intercept - 3.0).abs() < 1e-12, "{fit:?}");
            assert!((fit.slope - 2.0).abs() < 1e-12);
            assert!((fit.r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_censoring_and_zero_winsorizing_are_the_full_fit() {
        let s = Sample::new(SAMPLE10.as_slice()).unwrap();
        let full = fit_full(&s, &hazen()).unwrap();
        assert_eq!(full, fit_censored(&s, 0, &hazen()).unwrap());
        assert_eq!(full, fit_winsorized(&s, 0, &hazen()).unwrap());
    }

    #[test]
    fn censored_efficiency_models_match_reference_values() {
        // (f, mean, sd, limit), computed independently from the model
        // formulas at full precision.
        let cases = [
            (1.0, 1.0, 1.0, 0.98029604940692089),
            (0.9, 0.97007106527546681, 0.75614366729678639, 0.91223480194014098),
            (0.7, 0.80626977088752960, 0.47562425683709869, 0.79577222134245182),
            (0.5, 0.53832084499565639, 0.32653061224489796, 0.70026785245356349),
        ];
        let n = 1000usize;
        for (f, e_mean, e_sd, e_limit) in cases {
            let k = ((1.0 - f) * n as f64).round() as usize;
            assert!((censored_efficiency_mean(k, n) - e_mean).abs() < 1e-14);
            assert!((censored_efficiency_sd(f) - e_sd).abs() < 1e-14);
            assert!((censored_efficiency_limit(f) - e_limit).abs() < 1e-14);
        }
    }

    #[test]
    fn standard_errors_follow_the_effective_sample_sizes() {
        let s = Sample::new(SAMPLE10.as_slice()).unwrap();
        let fit = fit_full(&s, &hazen()).unwrap();
        assert!((fit.se_mean - fit.slope / 10.0_f64.sqrt()).abs() < 1e-15);
        assert!((fit.se_sd - fit.slope / 20.0_f64.sqrt()).abs() < 1e-15);

        let ri = fit.reference_interval(1.959964).unwrap();
        assert!((ri.lower - (fit.intercept - 1.959964 * fit.slope)).abs() < 1e-12);
        assert!((ri.upper - (fit.intercept + 1.959964 * fit.slope)).abs() < 1e-12);
        let want_se = fit.slope * ((1.0 + 0.5 * 1.959964 * 1.959964) / 10.0_f64).sqrt();
        assert_eq!(ri.se_upper, ri.se_lower);
        assert!((ri.se_upper - want_se).abs() < 1e-15);
        // The classical shorthand multiplier for 95% coverage.
        assert!(((1.0 + 0.5 * 1.96_f64 * 1.96).sqrt() - 1.71).abs() < 0.0015);

        assert!(fit.reference_interval(0.0).is_err());
        assert!(fit.reference_interval(f64::NAN).is_err());
    }

    #[test]
    fn affine_changes_of_the_sample_move_the_fit_the_same_way() {
        let pos = hazen();
        let s = Sample::new(SAMPLE10.as_slice()).unwrap();
        let base = fit_full(&s, &pos).unwrap();
        let moved: Vec<f64> = SAMPLE10.iter().map(|x| -4.0 + 2.5 * x).collect();
        let m = fit_full(&Sample::new(moved).unwrap(), &pos).unwrap();
        assert!((m.intercept - (-4.0 + 2.5 * base.intercept)).abs() < 1e-12);
        assert!((m.slope - 2.5 * base.slope).abs() < 1e-12);
        assert!((m.r - base.r).abs() < 1e-14);
    }

    #[test]
    fn heavy_censoring_is_flagged_not_rejected() {
        let vals: Vec<f64> = (0..120).map(|i| i as f64 * 0.01).collect();
        let s = Sample::new(vals).unwrap();
        let fit = fit_censored(&s, 61, &hazen()).unwrap();
        assert!(fit.flags.heavy_censoring);
        let fit = fit_censored(&s, 60, &hazen()).unwrap();
        assert!(!fit.flags.heavy_censoring);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(matches!(Sample::new(Vec::<f64>::new()), Err(Error::EmptySample)));
        assert!(matches!(
            Sample::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(matches!(
            Sample::new(vec![1.0, f64::INFINITY, 2.0]),
            Err(Error::NonFinite { index: 1 })
        ));

        let tiny = Sample::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            fit_full(&tiny, &hazen()),
            Err(Error::TooFewObservations { .. })
        ));

        let s = Sample::new(SAMPLE10.as_slice()).unwrap();
        assert!(matches!(fit_censored(&s, 8, &hazen()), Err(Error::InvalidCensoring { .. })));
        assert!(matches!(fit_censored(&s, 11, &hazen()), Err(Error::InvalidCensoring { .. })));
        assert!(matches!(
            fit_winsorized(&s, 1, &hazen()),
            Err(Error::InvalidWinsorization { .. })
        ));

        let flat = Sample::new(vec![2.0; 12]).unwrap();
        assert!(matches!(fit_full(&flat, &hazen()), Err(Error::ZeroVariance)));
    }

    #[test]
    fn regression_flags_a_nonpositive_slope() {
        // Decreasing ordinates against increasing scores; impossible from
        // the sorted-sample entry points, reachable through the raw API.
        let x = [-1.0, 0.0, 1.0];
        let y = [5.0, 3.0, 1.0];
        let (_, slope, r) = qq_regression(&x, &y).unwrap();
        assert!(slope < 0.0);
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_sorts_and_reports_shape() {
        let s = Sample::new(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.sorted(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.n(), 3);
        assert!(!s.is_constant());
        assert!(Sample::new(vec![1.0, 1.0]).unwrap().is_constant());
    }
}
