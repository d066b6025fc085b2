//! Distributional scores: the x-coordinates of a QQ plot.
//!
//! The score for rank i out of n is the reference-distribution quantile at a
//! plotting position p_i = (i - c) / (n + 1 - 2c). Only symmetric positions
//! are representable: an asymmetric choice would shift every score and bias
//! the fitted intercept, so the offset c is a single number by construction.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::kernel::{std_normal_inv_cdf, student_t_inv_cdf};

/// Symmetric plotting-position rule p_i = (i - c) / (n + 1 - 2c).
///
/// `c = 0.5` places each rank at the midpoint of its probability cell and is
/// the default everywhere in this crate; `c = 0` is the classical i/(n+1)
/// rule. Any c in [0, 1) keeps every p_i strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlottingPosition {
    offset: f64,
}

impl PlottingPosition {
    pub fn new(offset: f64) -> Result<Self> {
        if !(offset >= 0.0 && offset < 1.0) {
            return Err(Error::InvalidOffset { offset });
        }
        Ok(Self { offset })
    }

    /// Midpoint rule, c = 0.5.
    pub fn hazen() -> Self {
        Self { offset: 0.5 }
    }

    /// Expected-CDF rule i / (n + 1), c = 0.
    pub fn weibull() -> Self {
        Self { offset: 0.0 }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Plotting position for 1-based rank `i` in a sample of `n`.
    pub fn probability(&self, i: usize, n: usize) -> f64 {
        debug_assert!(i >= 1 && i <= n);
        (i as f64 - self.offset) / (n as f64 + 1.0 - 2.0 * self.offset)
    }

    pub fn probabilities(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|i| self.probability(i, n)).collect()
    }
}

impl Default for PlottingPosition {
    fn default() -> Self {
        Self::hazen()
    }
}

/// Builds a score vector from any quantile function, mirroring the lower
/// half onto the upper so antisymmetry is exact in floating point: the
/// positions satisfy p_i + p_{n+1-i} = 1 algebraically, and computing both
/// tails independently would let rounding break that.
fn symmetric_scores(
    n: usize,
    pos: &PlottingPosition,
    quantile: impl Fn(f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut scores = vec![0.0; n];
    for i in 1..=(n / 2) {
        let v = quantile(pos.probability(i, n))?;
        scores[i - 1] = v;
        scores[n - i] = -v;
    }
    // For odd n the middle position is exactly 1/2, score exactly zero,
    // which the initialization already provides.
    Ok(scores)
}

/// Standard normal scores for ranks 1..=n.
pub fn normal_scores(n: usize, pos: &PlottingPosition) -> Result<Vec<f64>> {
    symmetric_scores(n, pos, std_normal_inv_cdf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct TScoreKey {
    n: usize,
    nu_bits: u64,
    offset_bits: u64,
}

// Shape search evaluates score vectors for dozens of nearby nu values and
// simulation studies repeat that thousands of times with identical keys, so
// t scores are worth caching. The map is capped rather than evicted: the
// reachable key set in any one process is small and stable.
static T_SCORE_CACHE: OnceLock<Mutex<HashMap<TScoreKey, Arc<[f64]>>>> = OnceLock::new();
const T_SCORE_CACHE_CAP: usize = 4096;

/// Student-t scores for ranks 1..=n with `nu` degrees of freedom.
pub fn t_scores(n: usize, nu: f64, pos: &PlottingPosition) -> Result<Vec<f64>> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidDegreesOfFreedom { nu });
    }
    let key = TScoreKey {
        n,
        nu_bits: nu.to_bits(),
        offset_bits: pos.offset.to_bits(),
    };
    let cache = T_SCORE_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return Ok(hit.to_vec());
    }
    let scores = symmetric_scores(n, pos, |p| student_t_inv_cdf(p, nu))?;
    let mut map = cache.lock().unwrap();
    if map.len() < T_SCORE_CACHE_CAP {
        map.insert(key, Arc::from(scores.as_slice()));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hazen_positions_are_cell_midpoints() {
        let pos = PlottingPosition::hazen();
        let got = pos.probabilities(5);
        let want = [0.1, 0.3, 0.5, 0.7, 0.9];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15, "got {got:?}");
        }
    }

    #[test]
    fn weibull_positions_divide_the_unit_interval_evenly() {
        let pos = PlottingPosition::weibull();
        let got = pos.probabilities(4);
        let want = [0.2, 0.4, 0.6, 0.8];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15, "got {got:?}");
        }
    }

    #[test]
    fn offset_validation() {
        assert!(PlottingPosition::new(0.0).is_ok());
        assert!(PlottingPosition::new(0.9).is_ok());
        for bad in [1.0, -0.1, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                PlottingPosition::new(bad),
                Err(Error::InvalidOffset { .. })
            ));
        }
    }

    #[test]
    fn normal_scores_match_known_quantiles() {
        let s = normal_scores(5, &PlottingPosition::hazen()).unwrap();
        // p_1 = 0.1, and PhiInv(0.1) = -PhiInv(0.9).
        assert!((s[0] + 1.2815515655446005).abs() < 1e-14);
        assert_eq!(s[2], 0.0, "middle score must be exactly zero");
        assert!((s[1] + 0.5244005127080407).abs() < 1e-12);
    }

    #[test]
    fn scores_are_exactly_antisymmetric_and_increasing() {
        for n in [1, 2, 5, 10, 11, 120] {
            let s = normal_scores(n, &PlottingPosition::hazen()).unwrap();
            for i in 0..n {
                assert_eq!(s[i], -s[n - 1 - i], "mirror broken at n={n}, i={i}");
            }
            for i in 1..n {
                assert!(s[i] > s[i - 1], "not strictly increasing at n={n}");
            }
        }
    }

    #[test]
    fn t_scores_match_closed_forms_and_cache_consistently() {
        // nu = 1 has the closed form tan(pi (p - 1/2)); at n = 3 the top
        // position is 5/6, giving tan(pi/3).
        let s = t_scores(3, 1.0, &PlottingPosition::hazen()).unwrap();
        assert!((s[2] - 1.7320508075688773).abs() < 1e-12);
        assert_eq!(s[1], 0.0);

        let again = t_scores(3, 1.0, &PlottingPosition::hazen()).unwrap();
        assert_eq!(s, again, "cached result must replay bit-identically");
    }

    #[test]
    fn t_scores_approach_normal_scores_for_huge_nu() {
        let pos = PlottingPosition::hazen();
        let t = t_scores(40, 1.0e6, &pos).unwrap();
        let z = normal_scores(40, &pos).unwrap();
        for (a, b) in t.iter().zip(&z) {
            assert!((a - b).abs() < 1e-3, "t={a}, z={b}");
        }
    }

    #[test]
    fn t_scores_spread_wider_for_smaller_nu() {
        let pos = PlottingPosition::hazen();
        let heavy = t_scores(21, 2.0, &pos).unwrap();
        let light = t_scores(21, 50.0, &pos).unwrap();
        assert!(heavy[20] > light[20]);
        assert!(heavy[0] < light[0]);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(matches!(
            normal_scores(0, &PlottingPosition::hazen()),
            Err(Error::EmptySample)
        ));
        assert!(t_scores(5, 0.0, &PlottingPosition::hazen()).is_err());
        assert!(t_scores(5, f64::NAN, &PlottingPosition::hazen()).is_err());
    }
}
