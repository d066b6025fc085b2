//! Probability primitives: normal and Student-t distribution functions and a
//! seedable, stream-splittable random source.
//!
//! The distribution functions are self-contained rational approximations
//! chosen for accuracy well past what the rest of the crate needs: the normal
//! CDF is good to a few ulps, its inverse round-trips through the CDF to
//! better than 1e-10 in probability, and the t inverse is resolved to about
//! 1e-12 in quantile space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ──────────────────────────────────────────────────────────────────────────
// Error function (Cody-style rational approximations)
// ──────────────────────────────────────────────────────────────────────────

const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const INV_SQRT_PI: f64 = 5.6418958354775628695e-1;

/// erf on the central interval |x| <= 0.46875.
fn erf_small(x: f64) -> f64 {
    let z = x * x;
    let mut num = ERF_A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + ERF_A[i]) * z;
        den = (den + ERF_B[i]) * z;
    }
    x * (num + ERF_A[3]) / (den + ERF_B[3])
}

/// exp(-y^2) split so the argument of each exp stays small in error terms.
fn exp_neg_sq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// erfc(y) for 0.46875 < y <= 4.
fn erfc_mid(y: f64) -> f64 {
    let mut num = ERF_C[8] * y;
    let mut den = y;
    for i in 0..7 {
        num = (num + ERF_C[i]) * y;
        den = (den + ERF_D[i]) * y;
    }
    exp_neg_sq(y) * (num + ERF_C[7]) / (den + ERF_D[7])
}

/// erfc(y) for y > 4.
fn erfc_large(y: f64) -> f64 {
    // erfc underflows to zero a little past 26.5; the cutoff avoids
    // 0 * inf when exp(-y^2) has already flushed to zero.
    if y >= 26.6 {
        return 0.0;
    }
    let z = 1.0 / (y * y);
    let mut num = ERF_P[5] * z;
    let mut den = z;
    for i in 0..4 {
        num = (num + ERF_P[i]) * z;
        den = (den + ERF_Q[i]) * z;
    }
    let tail = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
    exp_neg_sq(y) * (INV_SQRT_PI - tail) / y
}

/// Error function, accurate to a few ulps over the whole real line.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        erf_small(x)
    } else {
        let res = 1.0 - if y <= 4.0 { erfc_mid(y) } else { erfc_large(y) };
        if x < 0.0 {
            -res
        } else {
            res
        }
    }
}

/// Complementary error function; keeps full relative accuracy in the
/// right tail where 1 - erf(x) would lose everything to cancellation.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let res = if y <= 0.46875 {
        1.0 - erf_small(x.abs())
    } else if y <= 4.0 {
        erfc_mid(y)
    } else {
        erfc_large(y)
    };
    if x < 0.0 {
        2.0 - res
    } else {
        res
    }
}

// ──────────────────────────────────────────────────────────────────────────
// Standard normal CDF and inverse
// ──────────────────────────────────────────────────────────────────────────

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const SQRT_2PI: f64 = 2.5066282746310005024;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

// Rational approximation minimax coefficients for the inverse normal CDF
// (Acklam). Three regions: two tails and a center, each good to about
// 1.15e-9 relative on its own; a Halley step against the CDF above then
// pushes the result to full double accuracy.
const NORM_INV_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const NORM_INV_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const NORM_INV_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const NORM_INV_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

fn norm_inv_tail(q: f64) -> f64 {
    // q = sqrt(-2 ln p_tail); valid for the lower tail, negate for upper.
    (((((NORM_INV_C[0] * q + NORM_INV_C[1]) * q + NORM_INV_C[2]) * q + NORM_INV_C[3]) * q
        + NORM_INV_C[4])
        * q
        + NORM_INV_C[5])
        / ((((NORM_INV_D[0] * q + NORM_INV_D[1]) * q + NORM_INV_D[2]) * q + NORM_INV_D[3]) * q
            + 1.0)
}

/// Inverse standard normal CDF.
///
/// Errors if `p` is not strictly inside (0, 1); the endpoints have no
/// finite quantile and silently saturating would corrupt downstream fits.
pub fn std_normal_inv_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability { p });
    }
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        norm_inv_tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((NORM_INV_A[0] * r + NORM_INV_A[1]) * r + NORM_INV_A[2]) * r + NORM_INV_A[3]) * r
            + NORM_INV_A[4])
            * r
            + NORM_INV_A[5])
            * q
            / (((((NORM_INV_B[0] * r + NORM_INV_B[1]) * r + NORM_INV_B[2]) * r + NORM_INV_B[3])
                * r
                + NORM_INV_B[4])
                * r
                + 1.0)
    } else {
        -norm_inv_tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    // One Halley step against the high-accuracy CDF. Skipped only where
    // exp(x^2/2) would overflow, far outside any probability this crate
    // ever produces.
    if x * x < 1400.0 {
        let e = std_normal_cdf(x) - p;
        let u = e * SQRT_2PI * (0.5 * x * x).exp();
        Ok(x - u / (1.0 + 0.5 * x * u))
    } else {
        Ok(x)
    }
}

// ──────────────────────────────────────────────────────────────────────────
// Log-gamma and the regularized incomplete beta
// ──────────────────────────────────────────────────────────────────────────

// Lanczos g = 7, nine terms.
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];
const LN_SQRT_2PI: f64 = 0.91893853320467274178;

/// Natural log of the gamma function for positive arguments.
pub fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // Reflection keeps the Lanczos sum on its accurate half-line.
        std::f64::consts::PI.ln() - (std::f64::consts::PI * z).sin().abs().ln() - ln_gamma(1.0 - z)
    } else {
        let z = z - 1.0;
        let mut acc = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (z + i as f64);
        }
        let t = z + 7.5;
        LN_SQRT_2PI + (z + 0.5) * t.ln() - t + acc.ln()
    }
}

const BETA_CF_MAX_ITER: usize = 10_000;
const BETA_CF_EPS: f64 = 1.0e-15;
const BETA_CF_FPMIN: f64 = 1.0e-300;

/// Continued fraction for the incomplete beta (modified Lentz iteration).
fn beta_cont_frac(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < BETA_CF_FPMIN {
        d = BETA_CF_FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < BETA_CF_FPMIN {
            d = BETA_CF_FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < BETA_CF_FPMIN {
            c = BETA_CF_FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < BETA_CF_FPMIN {
            d = BETA_CF_FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < BETA_CF_FPMIN {
            c = BETA_CF_FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_CF_EPS {
            return Ok(h);
        }
    }
    Err(Error::NoConvergence {
        what: "incomplete beta continued fraction",
        iterations: BETA_CF_MAX_ITER,
    })
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "beta shape".into(),
            reason: format!("a = {a}, b = {b} must be positive and finite"),
        });
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter {
            name: "beta argument".into(),
            reason: format!("x = {x} must lie in [0, 1]"),
        });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    let front = ln_front.exp();
    // The continued fraction converges fast only on one side of the mean;
    // use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) to stay on that side.
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cont_frac(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cont_frac(b, a, 1.0 - x)? / b)
    }
}

// ──────────────────────────────────────────────────────────────────────────
// Student-t distribution
// ──────────────────────────────────────────────────────────────────────────

fn check_df(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidDegreesOfFreedom { nu });
    }
    Ok(())
}

/// Student-t CDF with `nu` degrees of freedom (any positive real `nu`).
pub fn student_t_cdf(t: f64, nu: f64) -> Result<f64> {
    check_df(nu)?;
    if !t.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    if t == 0.0 {
        return Ok(0.5);
    }
    let x = nu / (nu + t * t);
    let ib = reg_inc_beta(0.5 * nu, 0.5, x)?;
    Ok(if t > 0.0 { 1.0 - 0.5 * ib } else { 0.5 * ib })
}

/// Student-t density.
pub fn student_t_pdf(t: f64, nu: f64) -> Result<f64> {
    check_df(nu)?;
    let ln_norm = ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln();
    Ok((ln_norm - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()).exp())
}

// Above this the continued fraction grinds (its iteration count grows with
// nu) while the asymptotic expansion below is already accurate to ~1e-13,
// so the inverse switches strategy here.
const T_INV_EXPANSION_MIN_DF: f64 = 1000.0;

/// Large-`nu` expansion of the t quantile around the normal quantile `z`
/// (Cornish-Fisher form; error is O(nu^-5)).
fn t_inv_large_df(z: f64, nu: f64) -> f64 {
    let z2 = z * z;
    let g1 = z * (z2 + 1.0) / 4.0;
    let g2 = z * ((5.0 * z2 + 16.0) * z2 + 3.0) / 96.0;
    let g3 = z * (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) / 384.0;
    let g4 = z * ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) / 92160.0;
    z + g1 / nu + g2 / (nu * nu) + g3 / (nu * nu * nu) + g4 / (nu * nu * nu * nu)
}

/// Inverse Student-t CDF.
///
/// Exact symmetry around p = 0.5 is enforced structurally: the quantile for
/// p < 0.5 is computed as the negated quantile of 1 - p.
pub fn student_t_inv_cdf(p: f64, nu: f64) -> Result<f64> {
    check_df(nu)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability { p });
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return Ok(-student_t_inv_cdf(1.0 - p, nu)?);
    }
    let z = std_normal_inv_cdf(p)?;
    if nu >= T_INV_EXPANSION_MIN_DF {
        return Ok(t_inv_large_df(z, nu));
    }

    // Bracket the root of F(t) - p, then polish with safeguarded Newton.
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while student_t_cdf(hi, nu)? < p {
        hi *= 2.0;
        if hi > 1.0e300 {
            return Err(Error::NoConvergence {
                what: "t quantile bracketing",
                iterations: 1000,
            });
        }
    }
    let guess = t_inv_large_df(z, nu);
    let mut t = if guess > lo && guess < hi {
        guess
    } else {
        0.5 * (lo + hi)
    };
    for _ in 0..200 {
        let f = student_t_cdf(t, nu)? - p;
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if f.abs() < 1.0e-15 {
            return Ok(t);
        }
        let dens = student_t_pdf(t, nu)?;
        let newton = t - f / dens;
        let next = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1.0e-13 * (1.0 + t.abs()) {
            return Ok(next);
        }
        t = next;
    }
    Err(Error::NoConvergence {
        what: "t quantile root finding",
        iterations: 200,
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Seedable random streams
// ──────────────────────────────────────────────────────────────────────────

/// A named position in a family of independent random sequences.
///
/// ChaCha8 exposes 2^64 independent streams per seed, so simulation code can
/// hand every (grid cell, replicate) pair its own stream and draw from it in
/// any order, on any number of threads, and still reproduce bit-identical
/// samples. The generator is re-created from `(seed, stream)` on each use;
/// no hidden state survives between calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    /// Identifier for the generator family; recorded in simulation reports
    /// so a result can name exactly how its noise was produced.
    pub const ALGORITHM_ID: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// The same seed, pointed at an independent stream.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: index,
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// `count` standard normal draws from the start of this stream.
    pub fn standard_normal(&self, count: usize) -> Vec<f64> {
        use rand::Rng;
        let mut rng = self.rng();
        (0..count)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect()
    }
}

// ──────────────────────────────────────────────────────────────────────────
// Tests
// ──────────────────────────────────────────────────────────────────────────
