//! Small numerical kernels shared by the estimators: deterministic
//! reductions, summary statistics and least-squares fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PAIRWISE_LEAF: usize = 32;

/// Neumaier-compensated sum of a short slice.
fn compensated(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Pairwise-tree sum with compensated leaves. The tree shape depends only
/// on the slice length, so the result is independent of how the values were
/// produced (thread count, chunking).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_LEAF {
        return compensated(values);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Sample mean and its standard error (sample standard deviation / sqrt(n)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl MeanEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return MeanEstimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                count,
            };
        }
        let mean = mean(values);
        if count == 1 {
            return MeanEstimate {
                mean,
                std_error: 0.0,
                count,
            };
        }
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&dev) / (count - 1) as f64;
        MeanEstimate {
            mean,
            std_error: (var / count as f64).sqrt(),
            count,
        }
    }

    /// |mean - target| measured in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target).abs() / self.std_error
        }
    }
}

/// Dot product with four independent accumulators; the summation order is
/// fixed for a given length.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Result of a straight-line fit `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope implied by the weights (or residuals when unweighted).
    pub slope_std_error: f64,
    pub points: usize,
}

/// Least squares with optional per-point weights (inverse variances).
pub fn fit_line(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LineFit> {
    if x.len() != y.len() || weights.is_some_and(|w| w.len() != x.len()) {
        return Err(Error::Report("fit inputs have mismatched lengths".into()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Report(format!("line fit needs at least 2 points, got {n}")));
    }
    let ones = vec![1.0; n];
    let w = weights.unwrap_or(&ones);
    let sw: f64 = w.iter().sum();
    let xbar = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ybar = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xbar) * (a - xbar)).sum();
    if !(sxx > 1e-300) {
        return Err(Error::Report("degenerate fit: no spread in abscissa".into()));
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), c)| c * (a - xbar) * (b - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let slope_std_error = if weights.is_some() {
        (1.0 / sxx).sqrt()
    } else if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - intercept - slope * a;
                r * r
            })
            .sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_std_error,
        points: n,
    })
}

/// Log-log slope of `values` against `abscissa` (both positive).
pub fn log_log_slope(abscissa: &[f64], values: &[f64]) -> Result<f64> {
    let x: Vec<f64> = abscissa.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Report("log-log fit needs positive finite values".into()));
    }
    Ok(fit_line(&x, &y, None)?.slope)
}

/// Ratio between consecutive panels of the graded mesh.
const GRADING: f64 = 0.2;

fn legendre_rule() -> &'static gauss_quad::GaussLegendre {
    use std::num::NonZeroUsize;
    use std::sync::OnceLock;
    static RULE: OnceLock<gauss_quad::GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| gauss_quad::GaussLegendre::new(NonZeroUsize::new(16).expect("nonzero")))
}

/// Integral of a function with possible integrable algebraic singularities
/// at either endpoint: 16-point Gauss-Legendre on panels graded
/// geometrically toward both ends. Nodes never touch the endpoints.
pub fn integrate_singular<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let rule = legendre_rule();
    let half = 0.5 * (b - a);
    let floor = |end: f64| {
        if end == 0.0 {
            1e-30 * half
        } else {
            1e-13 * end.abs()
        }
    };
    let mut parts = Vec::with_capacity(64);
    for (end, dir, limit) in [(a, 1.0, floor(a)), (b, -1.0, floor(b))] {
        let mut outer = half;
        while outer * GRADING >= limit {
            let inner = outer * GRADING;
            let (lo, hi) = if dir > 0.0 {
                (end + inner, end + outer)
            } else {
                (end - outer, end - inner)
            };
            parts.push(rule.integrate(lo, hi, &f));
            outer = inner;
        }
        let (lo, hi) = if dir > 0.0 {
            (end, end + outer)
        } else {
            (end - outer, end)
        };
        parts.push(rule.integrate(lo, hi, &f));
    }
    pairwise_sum(&parts)
}

/// Composite Gauss-Legendre over `panels` equal sub-intervals.
pub fn integrate_smooth<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let rule = legendre_rule();
    let width = (b - a) / panels as f64;
    let parts: Vec<f64> = (0..panels)
        .map(|k| {
            let lo = a + k as f64 * width;
            rule.integrate(lo, lo + width, &f)
        })
        .collect();
    pairwise_sum(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_is_accurate_on_cancelling_input() {
        let mut v = vec![1e16, 1.0, -1e16];
        v.extend(std::iter::repeat_n(1.0, 100));
        assert_eq!(pairwise_sum(&v), 101.0);
    }

    #[test]
    fn weighted_fit_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = fit_line(&x, &y, Some(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fit_is_an_error() {
        assert!(fit_line(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0], None).is_err());
    }

    #[test]
    fn singular_integral_of_inverse_sqrt() {
        let v = integrate_singular(|x| 1.0 / x.sqrt(), 0.0, 1.0);
        assert!((v - 2.0).abs() < 1e-10, "{v}");
        let beta = integrate_singular(|x| (x * (1.0 - x)).powf(-0.4), 0.0, 1.0);
        assert!((beta - 2.415_344_208_002_472).abs() < 1e-8, "{beta}");
        let shifted = integrate_singular(|x| (0.5 - x).powf(-0.4), 0.2, 0.5);
        assert!((shifted - 0.3f64.powf(0.6) / 0.6).abs() < 1e-9, "{shifted}");
    }

    #[test]
    fn smooth_integral_of_polynomial() {
        let v = integrate_smooth(|x| x * x * x, 0.0, 2.0, 3);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mean_estimate_standard_error() {
        let est = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(est.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((est.std_error - sd / 2.0).abs() < 1e-15);
    }
}
