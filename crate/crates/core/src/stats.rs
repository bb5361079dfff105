//! Small statistics helpers: means with standard errors, linear fits, rank
//! correlation and Student-t quantiles.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Mean and standard error `sd/√n` (sample standard deviation).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Student-t quantile; falls back to the normal quantile for huge `dof`.
pub fn t_quantile(p: f64, dof: f64) -> f64 {
    if dof > 1e6 {
        return normal_quantile(p);
    }
    StudentsT::new(0.0, 1.0, dof).expect("valid dof").inverse_cdf(p)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Weighted least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub dof: f64,
}

impl LineFit {
    /// One-sided lower confidence bound on the slope.
    pub fn slope_lower(&self, level: f64) -> f64 {
        self.slope - t_quantile(level, self.dof.max(1.0)) * self.slope_se
    }

    /// One-sided upper confidence bound on the slope.
    pub fn slope_upper(&self, level: f64) -> f64 {
        self.slope + t_quantile(level, self.dof.max(1.0)) * self.slope_se
    }
}

/// Ordinary least squares with residual-based standard errors.
pub fn ols(x: &[f64], y: &[f64]) -> LineFit {
    let w = vec![1.0; x.len()];
    fit(x, y, &w, true)
}

/// Weighted least squares with known variances `1/w`; standard errors come
/// from the weights, not from the residuals.
pub fn wls(x: &[f64], y: &[f64], w: &[f64]) -> LineFit {
    fit(x, y, w, false)
}

fn fit(x: &[f64], y: &[f64], w: &[f64], residual_scale: bool) -> LineFit {
    assert!(x.len() == y.len() && x.len() == w.len() && x.len() >= 2, "need at least two points");
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm) * (a - xm)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let n = x.len() as f64;
    let dof = n - 2.0;
    let scale = if residual_scale {
        if dof > 0.0 {
            let rss: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (c - intercept - slope * a).powi(2)).sum();
            rss / dof
        } else {
            0.0
        }
    } else {
        1.0
    };
    let slope_se = (scale / sxx).sqrt();
    let intercept_se = (scale * (1.0 / sw + xm * xm / sxx)).sqrt();
    let dof = if residual_scale { dof } else { f64::INFINITY };
    LineFit { slope, intercept, slope_se, intercept_se, dof }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    let (mx, _) = mean_se(&rx);
    let (my, _) = mean_se(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_and_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_relative_eq!(se, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-15);
        assert_eq!(mean_se(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = ols(&x, &y);
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-14);
        assert_relative_eq!(f.intercept, 2.0, epsilon = 1e-14);
        assert!(f.slope_se < 1e-12);
    }

    #[test]
    fn weighted_errors_from_weights() {
        let x = [0.0, 1.0];
        let y = [0.0, 1.0];
        let f = wls(&x, &y, &[1.0, 1.0]);
        // two unit-variance points one apart: var(slope) = 2
        assert_relative_eq!(f.slope_se, 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn quantiles() {
        assert_relative_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-9);
        assert_relative_eq!(t_quantile(0.95, 10.0), 1.8124611228107335, epsilon = 1e-6);
    }

    #[test]
    fn rank_correlation() {
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[9.0, 4.0, 1.0]), -1.0, epsilon = 1e-15);
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]), 0.8, epsilon = 1e-12);
        assert_relative_eq!(spearman(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]), 1.0, epsilon = 1e-12);
    }
}
