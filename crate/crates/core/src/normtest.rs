//! A calibrated normality test built on the QQ correlation.
//!
//! The raw correlation r is squashed toward normality with a power
//! transform, Y = ((1−r)^(−0.1) − 1)/(−0.1), then standardized by models of
//! the null mean and sd of Y fitted over sample sizes 60..=1080:
//! mean = A + B·ln(n+30), sd = D + E·ln(n+30), with a bilinear extension in
//! the censored fraction f for censored fits. Small r means a bent QQ plot,
//! which maps to large Z, so the p-value is the one-sided upper tail.
//!
//! Six variants cover the ways r can be computed: the full sample, a
//! winsorized fit (2.5% per tail), a Box-Cox fit (transform first, then
//! correlate), their combination, and censored counterparts of the plain
//! and Box-Cox versions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::std_normal_cdf;
use crate::qqfit::{fit_censored, fit_full, fit_winsorized, Sample};
use crate::scores::PlottingPosition;
use crate::shapefit::{
    fit_boxcox_qqr, fit_boxcox_qqr_censored, fit_boxcox_qqr_winsorized, DEFAULT_LAMBDA_RANGE,
};

// ──────────────────────────────────────────────────────────────────────────
// The Z transform of r
// ──────────────────────────────────────────────────────────────────────────

/// Power used to transform 1 − r toward normality.
pub const Z_TRANSFORM_POWER: f64 = -0.1;

/// Transform a QQ correlation to the raw test scale:
/// Y = ((1−r)^(−0.1) − 1)/(−0.1). Strictly decreasing in r.
///
/// `r = 1` has no finite image; callers clamp (see [`R_CLAMP`]) before
/// calling, and this function refuses r outside [−1, 1).
pub fn z_transform(r: f64) -> Result<f64> {
    if !(r >= -1.0 && r < 1.0) {
        return Err(Error::InvalidParameter {
            name: "r".into(),
            reason: format!("correlation {r} outside [-1, 1); r = 1 must be clamped first"),
        });
    }
    Ok(((1.0 - r).powf(Z_TRANSFORM_POWER) - 1.0) / Z_TRANSFORM_POWER)
}

/// Inverse of [`z_transform`]: r = 1 − (1 + λY)^(1/λ) with λ = −0.1.
pub fn z_transform_inverse(y: f64) -> f64 {
    1.0 - (1.0 + Z_TRANSFORM_POWER * y).powf(1.0 / Z_TRANSFORM_POWER)
}

/// Correlations at or above this are treated as exactly linear and clamped
/// here, where Y is still finite and p lands at its correct limit of 1.
pub const R_CLAMP: f64 = 1.0 - 1.0e-15;

// ──────────────────────────────────────────────────────────────────────────
// Calibration coefficients
// ──────────────────────────────────────────────────────────────────────────

/// Null-distribution model linear in L = ln(n+30).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub per_ln_n: f64,
}

impl LinearModel {
    pub fn at(&self, n: usize) -> f64 {
        self.intercept + self.per_ln_n * ((n as f64) + 30.0).ln()
    }
}

/// Null-distribution model over {1, L, f, f·L} with L = ln(n+30) and f the
/// censored fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilinearModel {
    pub intercept: f64,
    pub per_ln_n: f64,
    pub per_f: f64,
    pub per_f_ln_n: f64,
}

impl BilinearModel {
    pub fn at(&self, n: usize, f: f64) -> f64 {
        let l = ((n as f64) + 30.0).ln();
        self.intercept + self.per_ln_n * l + self.per_f * f + self.per_f_ln_n * f * l
    }
}

/// The full set of null-model coefficients the test standardizes against.
///
/// `provenance` distinguishes the built-in published set from any
/// recalibrated replacement a caller supplies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCoefficients {
    pub provenance: String,
    pub full_mean: LinearModel,
    pub full_sd: LinearModel,
    pub winsorized_mean: LinearModel,
    pub winsorized_sd: LinearModel,
    pub boxcox_mean: LinearModel,
    pub boxcox_sd: LinearModel,
    pub boxcox_winsorized_mean: LinearModel,
    pub boxcox_winsorized_sd: LinearModel,
    pub censored_original_mean: BilinearModel,
    pub censored_original_sd: BilinearModel,
    pub censored_boxcox_mean: BilinearModel,
    pub censored_boxcox_sd: BilinearModel,
}

const PUBLISHED: CalibrationCoefficients = CalibrationCoefficients {
    provenance: String::new(), // filled by `published()`; const strings can't allocate
    full_mean: LinearModel { intercept: 1.992, per_ln_n: -1.802 },
    full_sd: LinearModel { intercept: 0.6717, per_ln_n: 0.02561 },
    winsorized_mean: LinearModel { intercept: 3.12, per_ln_n: -2.115 },
    winsorized_sd: LinearModel { intercept: 0.4413, per_ln_n: 0.08462 },
    boxcox_mean: LinearModel { intercept: 1.405, per_ln_n: -1.782 },
    boxcox_sd: LinearModel { intercept: 0.5941, per_ln_n: 0.03245 },
    boxcox_winsorized_mean: LinearModel { intercept: 2.809, per_ln_n: -2.164 },
    boxcox_winsorized_sd: LinearModel { intercept: 0.4288, per_ln_n: 0.07453 },
    censored_original_mean: BilinearModel {
        intercept: 2.256,
        per_ln_n: -1.923,
        per_f: -0.7297,
        per_f_ln_n: 0.6353,
    },
    censored_original_sd: BilinearModel {
        intercept: 0.598,
        per_ln_n: 0.05197,
        per_f: 0.2236,
        per_f_ln_n: -0.01872,
    },
    censored_boxcox_mean: BilinearModel {
        intercept: 1.796,
        per_ln_n: -1.937,
        per_f: -1.331,
        per_f_ln_n: 0.7059,
    },
    censored_boxcox_sd: BilinearModel {
        intercept: 0.475,
        per_ln_n: 0.06489,
        per_f: 0.3955,
        per_f_ln_n: -0.06081,
    },
};

impl CalibrationCoefficients {
    /// The built-in coefficient set, as published.
    pub fn published() -> Self {
        CalibrationCoefficients {
            provenance: "published calibration tables".into(),
            ..PUBLISHED
        }
    }
}

impl Default for CalibrationCoefficients {
    fn default() -> Self {
        Self::published()
    }
}

/// Sample sizes the null models were calibrated over. Outside this range
/// the test still runs but flags the extrapolation.
pub const CALIBRATED_N: std::ops::RangeInclusive<usize> = 60..=1080;

// ──────────────────────────────────────────────────────────────────────────
// Variants and standardization
// ──────────────────────────────────────────────────────────────────────────

/// How the correlation is computed before testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestVariant {
    Full,
    Winsorized,
    Boxcox,
    BoxcoxWinsorized,
    CensoredOriginal,
    CensoredBoxcox,
}

impl TestVariant {
    pub fn is_censored(self) -> bool {
        matches!(self, TestVariant::CensoredOriginal | TestVariant::CensoredBoxcox)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestVariant::Full => "full",
            TestVariant::Winsorized => "winsorized",
            TestVariant::Boxcox => "boxcox",
            TestVariant::BoxcoxWinsorized => "boxcox-winsorized",
            TestVariant::CensoredOriginal => "censored-original",
            TestVariant::CensoredBoxcox => "censored-boxcox",
        }
    }
}

impl std::fmt::Display for TestVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Standardize a transformed correlation against the null model:
/// Z = (Y − mean_model(n, f)) / sd_model(n, f).
///
/// `f` is the censored fraction and only read by the censored variants.
/// A censored variant with f = 0 uses the corresponding uncensored model
/// (the bilinear fit at f = 0 disagrees slightly with the model calibrated
/// specifically on uncensored data, and the latter is authoritative there).
pub fn standardize(
    y: f64,
    n: usize,
    variant: TestVariant,
    f: f64,
    coeffs: &CalibrationCoefficients,
) -> Result<f64> {
    if n < 10 {
        return Err(Error::TooFewObservations { n, min: 10 });
    }
    let (mean, sd) = match variant {
        TestVariant::Full => (coeffs.full_mean.at(n), coeffs.full_sd.at(n)),
        TestVariant::Winsorized => (coeffs.winsorized_mean.at(n), coeffs.winsorized_sd.at(n)),
        TestVariant::Boxcox => (coeffs.boxcox_mean.at(n), coeffs.boxcox_sd.at(n)),
        TestVariant::BoxcoxWinsorized => (
            coeffs.boxcox_winsorized_mean.at(n),
            coeffs.boxcox_winsorized_sd.at(n),
        ),
        TestVariant::CensoredOriginal | TestVariant::CensoredBoxcox => {
            if !(0.0..=0.5).contains(&f) {
                return Err(Error::InvalidCensoring {
                    k: (f * n as f64).round().max(0.0) as usize,
                    n,
                    reason: format!(
                        "censored fraction {f} outside the calibrated range [0, 0.5]"
                    ),
                });
            }
            if f == 0.0 {
                match variant {
                    TestVariant::CensoredOriginal => {
                        (coeffs.full_mean.at(n), coeffs.full_sd.at(n))
                    }
                    _ => (coeffs.boxcox_mean.at(n), coeffs.boxcox_sd.at(n)),
                }
            } else {
                match variant {
                    TestVariant::CensoredOriginal => (
                        coeffs.censored_original_mean.at(n, f),
                        coeffs.censored_original_sd.at(n, f),
                    ),
                    _ => (
                        coeffs.censored_boxcox_mean.at(n, f),
                        coeffs.censored_boxcox_sd.at(n, f),
                    ),
                }
            }
        }
    };
    Ok((y - mean) / sd)
}

// ──────────────────────────────────────────────────────────────────────────
// The test
// ──────────────────────────────────────────────────────────────────────────

/// Outcome of the QQ-correlation normality test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityTest {
    pub variant: TestVariant,
    pub n: usize,
    /// Censored count the correlation was computed with.
    pub censored_below: usize,
    /// Censored fraction, `censored_below / n`.
    pub f: f64,
    /// Winsorized count per tail (derived from n for winsorized variants).
    pub winsorized_per_tail: usize,
    /// The QQ correlation, after clamping at [`R_CLAMP`] if needed.
    pub r: f64,
    /// Raw transform of r.
    pub y: f64,
    /// Standardized statistic; standard normal under the null.
    pub z: f64,
    /// One-sided upper-tail p-value, 1 − Φ(Z).
    pub p: f64,
    pub alpha: f64,
    /// True when p < alpha.
    pub reject: bool,
    /// Present when n is outside the calibrated range 60..=1080.
    pub calibration_warning: Option<String>,
}

/// Round-half-up winsorizing count for 2.5% per tail.
pub fn winsor_count(n: usize) -> usize {
    (0.025 * n as f64 + 0.5).floor() as usize
}

/// Run the normality test.
///
/// `censored_below` is the number of left-censored observations; it must be
/// 0 for the uncensored variants. Censored variants accept k = 0 and fall
/// back to the uncensored null models in that case. Box-Cox variants pick
/// their power by maximizing the variant's own QQ correlation over the
/// default search range, then test the transformed data.
pub fn test_normality(
    sample: &Sample,
    censored_below: usize,
    variant: TestVariant,
    alpha: f64,
) -> Result<NormalityTest> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha".into(),
            reason: format!("significance level {alpha} outside (0, 1)"),
        });
    }
    let n = sample.n();
    if n < 10 {
        return Err(Error::TooFewObservations { n, min: 10 });
    }
    if censored_below > 0 && !variant.is_censored() {
        return Err(Error::InvalidParameter {
            name: "variant".into(),
            reason: format!(
                "{variant} cannot be used with censored input; choose a censored variant"
            ),
        });
    }
    let f = censored_below as f64 / n as f64;
    if variant.is_censored() && f > 0.5 {
        return Err(Error::InvalidCensoring {
            k: censored_below,
            n,
            reason: format!("censored fraction {f:.3} above the calibrated maximum 0.5"),
        });
    }

    let pos = PlottingPosition::hazen();
    let mut winsorized_per_tail = 0;
    let r_raw = match variant {
        TestVariant::Full => fit_full(sample, &pos)?.r,
        TestVariant::Winsorized => {
            winsorized_per_tail = winsor_count(n);
            fit_winsorized(sample, winsorized_per_tail, &pos)?.r
        }
        TestVariant::Boxcox => fit_boxcox_qqr(sample, DEFAULT_LAMBDA_RANGE)?.qqr_at_opt,
        TestVariant::BoxcoxWinsorized => {
            winsorized_per_tail = winsor_count(n);
            fit_boxcox_qqr_winsorized(sample, winsorized_per_tail, DEFAULT_LAMBDA_RANGE)?
                .qqr_at_opt
        }
        TestVariant::CensoredOriginal => fit_censored(sample, censored_below, &pos)?.r,
        TestVariant::CensoredBoxcox => {
            fit_boxcox_qqr_censored(sample, censored_below, DEFAULT_LAMBDA_RANGE)?.qqr_at_opt
        }
    };

    let r = r_raw.min(R_CLAMP);
    let y = z_transform(r)?;
    let z = standardize(y, n, variant, f, &CalibrationCoefficients::published())?;
    let p = (1.0 - std_normal_cdf(z)).clamp(0.0, 1.0);
    let calibration_warning = if CALIBRATED_N.contains(&n) {
        None
    } else {
        Some(format!(
            "n = {n} is outside the calibrated range {}..={}; Z and p extrapolate the null models",
            CALIBRATED_N.start(),
            CALIBRATED_N.end()
        ))
    };
    Ok(NormalityTest {
        variant,
        n,
        censored_below,
        f,
        winsorized_per_tail,
        r,
        y,
        z,
        p,
        alpha,
        reject: p < alpha,
        calibration_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::RngStream;
    use crate::scores::normal_scores;

    #[test]
    fn z_transform_matches_reference_and_inverts() {
        assert_eq!(z_transform(0.0).unwrap(), 0.0);
        // ((0.01)^(-0.1) - 1)/(-0.1), computed independently.
        assert!((z_transform(0.99).unwrap() - (-5.8489319246111349)).abs() < 1e-13);
        for r in [-1.0, -0.5, 0.0, 0.3, 0.9, 0.999, 1.0 - 1.0e-9] {
            let y = z_transform(r).unwrap();
            let back = z_transform_inverse(y);
            assert!((back - r).abs() < 1e-12, "round trip at r = {r}: {back}");
        }
        assert!(z_transform(1.0).is_err());
        assert!(z_transform(-1.5).is_err());
        assert!(z_transform(f64::NAN).is_err());
    }

    #[test]
    fn z_transform_grows_as_r_falls() {
        let mut prev = z_transform(0.9999).unwrap();
        for r in [0.999, 0.99, 0.9, 0.5, 0.0, -0.5, -1.0] {
            let y = z_transform(r).unwrap();
            assert!(y > prev, "Y must increase as r decreases");
            prev = y;
        }
    }

    #[test]
    fn published_models_reproduce_worked_standardizations() {
        let c = CalibrationCoefficients::published();
        // n = 120, full variant. Reference: 1.992 - 1.802·ln(150) and
        // 0.6717 + 0.02561·ln(150), evaluated at full precision.
        assert!((c.full_mean.at(120) - (-7.0371647999614529)).abs() < 1e-12);
        assert!((c.full_sd.at(120) - 0.80002236988180511).abs() < 1e-12);
        // Spot-check against the rounded published presentation too.
        assert!((c.full_mean.at(120) - (-7.037)).abs() < 1e-3);
        assert!((c.full_sd.at(120) - 0.800).abs() < 1e-3);
        // n = 120, censored-original at f = 0.25.
        assert!((c.censored_original_mean.at(120, 0.25) - (-6.7660625199622620)).abs() < 1e-12);
        assert!((c.censored_original_sd.at(120, 0.25) - 0.89085294305781193).abs() < 1e-12);
        assert!((c.censored_original_mean.at(120, 0.25) - (-6.766)).abs() < 1e-3);
        assert!((c.censored_original_sd.at(120, 0.25) - 0.891).abs() < 1e-3);
    }

    #[test]
    fn standardize_is_the_identity_at_the_model_mean() {
        let c = CalibrationCoefficients::published();
        for variant in [
            TestVariant::Full,
            TestVariant::Winsorized,
            TestVariant::Boxcox,
            TestVariant::BoxcoxWinsorized,
        ] {
            for n in [60, 120, 480] {
                let mean = match variant {
                    TestVariant::Full => c.full_mean.at(n),
                    TestVariant::Winsorized => c.winsorized_mean.at(n),
                    TestVariant::Boxcox => c.boxcox_mean.at(n),
                    _ => c.boxcox_winsorized_mean.at(n),
                };
                let z = standardize(mean, n, variant, 0.0, &c).unwrap();
                assert!(z.abs() < 1e-12, "variant {variant}, n {n}: z = {z}");
            }
        }
        let mean = c.censored_original_mean.at(120, 0.3);
        let z = standardize(mean, 120, TestVariant::CensoredOriginal, 0.3, &c).unwrap();
        assert!(z.abs() < 1e-12);
    }

    #[test]
    fn censored_variant_at_zero_f_uses_the_uncensored_model() {
        let c = CalibrationCoefficients::published();
        let y = -7.0;
        let a = standardize(y, 120, TestVariant::CensoredOriginal, 0.0, &c).unwrap();
        let b = standardize(y, 120, TestVariant::Full, 0.0, &c).unwrap();
        assert_eq!(a, b);
        let a = standardize(y, 120, TestVariant::CensoredBoxcox, 0.0, &c).unwrap();
        let b = standardize(y, 120, TestVariant::Boxcox, 0.0, &c).unwrap();
        assert_eq!(a, b);
        assert!(standardize(y, 120, TestVariant::CensoredOriginal, 0.6, &c).is_err());
    }

    #[test]
    fn perfectly_linear_sample_does_not_reject() {
        let scores = normal_scores(60, &PlottingPosition::hazen()).unwrap();
        let s = Sample::new(scores.iter().map(|t| 5.0 + 2.0 * t).collect::<Vec<_>>()).unwrap();
        let t = test_normality(&s, 0, TestVariant::Full, 0.05).unwrap();
        assert_eq!(t.r, R_CLAMP);
        assert!(t.p > 0.999, "p = {}", t.p);
        assert!(!t.reject);
    }

    #[test]
    fn normal_sample_passes_and_skewed_sample_fails() {
        let draws = RngStream::new(40).standard_normal(120);
        let s = Sample::new(draws.clone()).unwrap();
        let ok = test_normality(&s, 0, TestVariant::Full, 0.05).unwrap();
        assert!(ok.p > 0.05, "normal sample rejected: p = {}", ok.p);
        assert!(ok.calibration_warning.is_none());

        // Strong right skew: cube of a shifted normal.
        let skewed: Vec<f64> = draws.iter().map(|z| (3.0 + z.max(-2.9)).powi(3)).collect();
        let bad = test_normality(&Sample::new(skewed).unwrap(), 0, TestVariant::Full, 0.05).unwrap();
        assert!(bad.reject, "skewed sample passed: p = {}", bad.p);
        assert!(bad.z > ok.z);
    }

    #[test]
    fn boxcox_variant_unbends_lognormal_data() {
        let draws = RngStream::new(41).standard_normal(120);
        let lognormal: Vec<f64> = draws.iter().map(|z| z.exp()).collect();
        let s = Sample::new(lognormal).unwrap();
        let plain = test_normality(&s, 0, TestVariant::Full, 0.05).unwrap();
        let bc = test_normality(&s, 0, TestVariant::Boxcox, 0.05).unwrap();
        assert!(plain.reject, "lognormal passed the plain test");
        assert!(!bc.reject, "Box-Cox variant still rejected: p = {}", bc.p);
    }

    #[test]
    fn censored_variants_run_and_validate() {
        let s = Sample::new(RngStream::new(42).standard_normal(120)).unwrap();
        let t = test_normality(&s, 36, TestVariant::CensoredOriginal, 0.05).unwrap();
        assert_eq!(t.censored_below, 36);
        assert!((t.f - 0.3).abs() < 1e-12);
        assert!(t.p > 0.01);

        // k = 0 through the censored path equals the full-variant numbers.
        let a = test_normality(&s, 0, TestVariant::CensoredOriginal, 0.05).unwrap();
        let b = test_normality(&s, 0, TestVariant::Full, 0.05).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.p, b.p);

        assert!(matches!(
            test_normality(&s, 72, TestVariant::CensoredOriginal, 0.05),
            Err(Error::InvalidCensoring { .. })
        ));
        assert!(matches!(
            test_normality(&s, 5, TestVariant::Full, 0.05),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn winsor_count_rounds_half_up() {
        assert_eq!(winsor_count(60), 2); // 1.5 rounds up
        assert_eq!(winsor_count(120), 3);
        assert_eq!(winsor_count(480), 12);
        assert_eq!(winsor_count(100), 3); // 2.5 rounds up
        assert_eq!(winsor_count(19), 0);
    }

    #[test]
    fn location_scale_changes_leave_the_test_alone() {
        let s = Sample::new(RngStream::new(43).standard_normal(80)).unwrap();
        let moved =
            Sample::new(s.sorted().iter().map(|v| 100.0 + 7.0 * v).collect::<Vec<_>>()).unwrap();
        let a = test_normality(&s, 0, TestVariant::Full, 0.05).unwrap();
        let b = test_normality(&moved, 0, TestVariant::Full, 0.05).unwrap();
        assert!((a.r - b.r).abs() < 1e-12);
        assert!((a.z - b.z).abs() < 1e-10);
        assert!((a.p - b.p).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_n_warns() {
        let s = Sample::new(RngStream::new(44).standard_normal(30)).unwrap();
        let t = test_normality(&s, 0, TestVariant::Full, 0.05).unwrap();
        assert!(t.calibration_warning.is_some());
        let s = Sample::new(RngStream::new(44).standard_normal(2000)).unwrap();
        let t = test_normality(&s, 0, TestVariant::Full, 0.05).unwrap();
        assert!(t.calibration_warning.is_some());
    }

    #[test]
    fn p_falls_as_r_falls() {
        // Drive standardize directly across descending r at fixed n.
        let c = CalibrationCoefficients::published();
        let mut prev_p = f64::INFINITY;
        for r in [0.9999, 0.999, 0.995, 0.99, 0.98, 0.95] {
            let y = z_transform(r).unwrap();
            let z = standardize(y, 120, TestVariant::Full, 0.0, &c).unwrap();
            let p = 1.0 - std_normal_cdf(z);
            assert!(p < prev_p, "p must fall as r falls");
            prev_p = p;
        }
    }

    #[test]
    fn alpha_validation() {
        let s = Sample::new(RngStream::new(45).standard_normal(60)).unwrap();
        assert!(test_normality(&s, 0, TestVariant::Full, 0.0).is_err());
        assert!(test_normality(&s, 0, TestVariant::Full, 1.0).is_err());
    }
}
