//! Summary statistics over evaluation and training logs.

use nsgrl_core::env::RewardConfig;
use serde::{Deserialize, Serialize};

/// Fraction of gaps inside `[delta_over, delta_under]`; 0 for an empty list.
pub fn in_band_accuracy(gaps: &[f64], band: &RewardConfig) -> f64 {
    fraction(gaps, |f| band.in_band(f))
}

pub fn over_fraction(gaps: &[f64], band: &RewardConfig) -> f64 {
    fraction(gaps, |f| f < band.delta_over)
}

pub fn under_fraction(gaps: &[f64], band: &RewardConfig) -> f64 {
    fraction(gaps, |f| f > band.delta_under)
}

fn fraction(gaps: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    if gaps.is_empty() {
        return 0.0;
    }
    gaps.iter().filter(|&&f| pred(f)).count() as f64 / gaps.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub gap: f64,
    pub p: f64,
}

/// Empirical CDF at each distinct gap value.
pub fn gap_cdf(gaps: &[f64]) -> Vec<CdfPoint> {
    let mut sorted: Vec<f64> = gaps.iter().copied().filter(|g| g.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::new();
    for (i, g) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.gap == *g => last.p = p,
            _ => out.push(CdfPoint { gap: *g, p }),
        }
    }
    out
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median; the mean of the two central values for even lengths.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Mean of the last `k` values (all of them if fewer).
pub fn tail_mean(v: &[f64], k: usize) -> f64 {
    mean(&v[v.len().saturating_sub(k)..])
}

/// Trailing moving average with a window of `w` (shorter at the start).
pub fn trailing_average(v: &[f64], w: usize) -> Vec<f64> {
    (0..v.len()).map(|i| mean(&v[(i + 1).saturating_sub(w)..=i])).collect()
}

pub const SMOOTHING_WINDOW: usize = 5;

/// `initial + 0.9 * (final - initial)` on the smoothed reference curve.
pub fn ninety_percent_threshold(reference: &[f64]) -> f64 {
    let smooth = trailing_average(reference, SMOOTHING_WINDOW);
    let first = mean(&reference[..reference.len().min(SMOOTHING_WINDOW)]);
    let last = *smooth.last().expect("non-empty reward curve");
    first + 0.9 * (last - first)
}

/// First episode (1-based) whose smoothed reward reaches `threshold`;
/// `len + 1` if it never does.
pub fn episodes_to_threshold(rewards: &[f64], threshold: f64) -> usize {
    trailing_average(rewards, SMOOTHING_WINDOW)
        .iter()
        .position(|&r| r >= threshold)
        .map(|i| i + 1)
        .unwrap_or(rewards.len() + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_hand_count() {
        let band = RewardConfig::default();
        let gaps = [0.0, 1.0, 3.0, -4.0, 2.0];
        assert_eq!(in_band_accuracy(&gaps, &band), 0.6);
        assert_eq!(over_fraction(&gaps, &band), 0.2);
        assert_eq!(under_fraction(&gaps, &band), 0.2);
        assert_eq!(in_band_accuracy(&[-2.0, 2.0], &band), 1.0);
    }

    #[test]
    fn cdf_shape() {
        let c = gap_cdf(&[3.0, -1.0, 3.0, 0.5]);
        assert_eq!(c, vec![CdfPoint { gap: -1.0, p: 0.25 }, CdfPoint { gap: 0.5, p: 0.5 }, CdfPoint { gap: 3.0, p: 1.0 }]);
        assert!(gap_cdf(&[]).is_empty());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn threshold_crossing() {
        let r = [-10.0, -10.0, -10.0, -10.0, -10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let t = ninety_percent_threshold(&r);
        assert!((t + 1.0).abs() < 1e-12);
        assert_eq!(episodes_to_threshold(&r, t), 10);
        assert_eq!(episodes_to_threshold(&[-10.0; 4], t), 5);
    }
}
