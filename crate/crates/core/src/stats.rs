//! Small statistics helpers used by metrics, suites and factorial analysis.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("no samples")]
    Empty,
    #[error("percentile must be in (0, 100], got {0}")]
    BadPercentile(f64),
    #[error("need at least two samples for a confidence interval")]
    TooFewSamples,
}

/// Nearest-rank percentile: the sorted sample at 1-based index
/// `ceil(q / 100 * n)`.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(StatsError::BadPercentile(q));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Unbiased sample standard deviation.
pub fn std_dev(samples: &[f64]) -> f64 {
    let m = mean(samples);
    let ss: f64 = samples.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (samples.len() as f64 - 1.0)).sqrt()
}

/// Population coefficient of variation (std / mean).
pub fn coefficient_of_variation(samples: &[f64]) -> f64 {
    let m = mean(samples);
    let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / samples.len() as f64;
    var.sqrt() / m
}

/// Two-sided Student t quantile: `P(T <= t) = p` with `dof` degrees of freedom.
pub fn t_quantile(p: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof)
        .expect("degrees of freedom are positive")
        .inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
}

impl ConfidenceInterval {
    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.low() <= other.high() && other.low() <= self.high()
    }

    /// Entirely below `other`.
    pub fn below(&self, other: &Self) -> bool {
        self.high() < other.low()
    }
}

/// Mean with a t-based confidence interval at `level` (e.g. 0.95).
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<ConfidenceInterval, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples);
    }
    let n = samples.len() as f64;
    let t = t_quantile(0.5 + level / 2.0, n - 1.0);
    Ok(ConfidenceInterval {
        mean: mean(samples),
        half_width: t * std_dev(samples) / n.sqrt(),
    })
}

/// Inverse of the standard normal CDF, by Acklam's rational approximation
/// (relative error below 1.2e-9 over the whole domain).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Ranks starting at 1, ties receiving the average of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired samples required");
    pearson(&ranks(x), &ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::Normal;

    #[test]
    fn nearest_rank_examples() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&xs, 90.0).unwrap(), 9.0);
        assert_eq!(percentile(&xs, 100.0).unwrap(), 10.0);
        assert_eq!(percentile(&xs, 0.1).unwrap(), 1.0);
        assert_eq!(percentile(&[4.2], 37.0).unwrap(), 4.2);
        assert_eq!(percentile(&[5.0, 1.0, 3.0], 50.0).unwrap(), 3.0);
        assert_eq!(percentile(&[], 50.0), Err(StatsError::Empty));
        assert_eq!(percentile(&xs, 0.0), Err(StatsError::BadPercentile(0.0)));
        assert_eq!(percentile(&xs, 101.0), Err(StatsError::BadPercentile(101.0)));
    }

    #[test]
    fn normal_quantile_matches_reference() {
        let reference = Normal::new(0.0, 1.0).unwrap();
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let err = (normal_quantile(p) - reference.inverse_cdf(p)).abs();
            assert!(err < 1e-8, "p={p} err={err}");
        }
        for p in [1e-10, 1e-6, 1e-3, 1.0 - 1e-6] {
            let err = (normal_quantile(p) - reference.inverse_cdf(p)).abs();
            assert!(err < 1e-8, "p={p} err={err}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn t_interval_known_value() {
        // n = 10, t_{0.975, 9} = 2.262157.
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let ci = confidence_interval(&xs, 0.95).unwrap();
        assert!((ci.mean - 5.5).abs() < 1e-12);
        let expected = 2.262157162740992 * std_dev(&xs) / 10f64.sqrt();
        assert!((ci.half_width - expected).abs() < 1e-9);
        assert!(confidence_interval(&[1.0], 0.95).is_err());
    }

    #[test]
    fn interval_relations() {
        let a = ConfidenceInterval { mean: 1.0, half_width: 0.5 };
        let b = ConfidenceInterval { mean: 2.0, half_width: 0.4 };
        let c = ConfidenceInterval { mean: 1.4, half_width: 0.2 };
        assert!(a.below(&b) && !b.below(&a));
        assert!(a.overlaps(&c) && !a.overlaps(&b));
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // Ties get average ranks.
        assert_eq!(ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn cv_of_constant_is_zero() {
        assert_eq!(coefficient_of_variation(&[3.0, 3.0, 3.0]), 0.0);
    }
}
