//! Means, standard errors, line fits and goodness-of-fit distances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// A Monte Carlo estimate with its normal-approximation standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
    pub replicas: usize,
}

impl EstimateWithError {
    pub fn scalar(value: f64, std_error: f64, replicas: usize) -> Self {
        EstimateWithError {
            value: vec![value],
            std_error: vec![std_error],
            replicas,
        }
    }

    /// First component; the whole value for scalar estimates.
    pub fn v(&self) -> f64 {
        self.value[0]
    }

    pub fn se(&self) -> f64 {
        self.std_error[0]
    }

    /// Largest `|self - other| / sqrt(se_self^2 + se_other^2)` over components.
    pub fn max_z_distance(&self, other: &EstimateWithError) -> f64 {
        self.value
            .iter()
            .zip(&other.value)
            .zip(self.std_error.iter().zip(&other.std_error))
            .map(|((a, b), (sa, sb))| {
                let diff = (a - b).abs();
                let s = (sa * sa + sb * sb).sqrt();
                if diff == 0.0 {
                    0.0
                } else {
                    diff / s
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

/// Componentwise mean and standard error over vector samples.
pub fn vector_mean_se(samples: &[Vec<f64>]) -> EstimateWithError {
    let d = samples.first().map_or(0, |s| s.len());
    let mut value = Vec::with_capacity(d);
    let mut std_error = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let (m, se) = mean_se(&col);
        value.push(m);
        std_error.push(se);
    }
    EstimateWithError {
        value,
        std_error,
        replicas: samples.len(),
    }
}

/// One point of a scan over horizons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub n: u64,
    pub value: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    pub fitted_exponent: Option<f64>,
    pub exponent_se: Option<f64>,
    /// Set when the fit is undefined (all values zero, too few usable points).
    pub degenerate: bool,
    pub note: Option<String>,
}

impl ScanResult {
    /// Scan with a log-log exponent fit; degenerate when fewer than three
    /// points carry a positive value.
    pub fn with_exponent_fit(points: Vec<ScanPoint>) -> Result<Self> {
        let usable: Vec<ScanPoint> = points.iter().copied().filter(|p| p.value > 0.0).collect();
        if usable.len() < 3 {
            let note = if points.iter().all(|p| p.value == 0.0) {
                "all values are zero"
            } else {
                "fewer than three positive values"
            };
            return Ok(ScanResult {
                points,
                fitted_exponent: None,
                exponent_se: None,
                degenerate: true,
                note: Some(note.into()),
            });
        }
        let (e, se) = fit_exponent(&usable)?;
        Ok(ScanResult {
            points,
            fitted_exponent: Some(e),
            exponent_se: Some(se),
            degenerate: false,
            note: None,
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "value", "se"])?;
        for p in &self.points {
            w.write_record(&[p.n.to_string(), fmt_f64(p.value), fmt_f64(p.se)])?;
        }
        w.flush().map_err(|e| Error::io("<scan csv>", e))?;
        Ok(())
    }
}

/// Shortest round-trip formatting, locale-free.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Weighted least squares for `y = a + b x`. The slope SE uses the residual
/// scale, so a perfect fit reports zero.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    let k = x.len();
    if k < 3 || y.len() != k || w.len() != k {
        return Err(Error::Fit(format!("need at least 3 points, got {k}")));
    }
    if w.iter().any(|&wi| !(wi.is_finite() && wi > 0.0)) {
        return Err(Error::Fit("weights must be positive and finite".into()));
    }
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm) * (a - xm)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (a - xm) * (c - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| {
            let r = c - intercept - slope * a;
            b * r * r
        })
        .sum();
    let s2 = rss / (k - 2) as f64;
    Ok(LineFit {
        slope,
        intercept,
        slope_se: (s2 / sxx).sqrt(),
    })
}

/// Weighted least-squares slope of `log(value)` against `log(n)`.
///
/// Weights are `(value / se)^2`, the inverse variance of `log(value)`; when any
/// point has a zero or missing SE the fit is unweighted.
pub fn fit_exponent(points: &[ScanPoint]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    if points.windows(2).any(|w| w[0].n >= w[1].n) {
        return Err(Error::Fit("n must be strictly increasing".into()));
    }
    if let Some(p) = points.iter().find(|p| !(p.value > 0.0)) {
        return Err(Error::Fit(format!("nonpositive value {} at n = {}", p.value, p.n)));
    }
    if points.iter().any(|p| p.n == 0) {
        return Err(Error::Fit("n = 0 has no logarithm".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.value.ln()).collect();
    let weighted = points.iter().all(|p| p.se.is_finite() && p.se > 0.0);
    let w: Vec<f64> = if weighted {
        points.iter().map(|p| (p.value / p.se).powi(2)).collect()
    } else {
        vec![1.0; points.len()]
    };
    let fit = weighted_line_fit(&x, &y, &w)?;
    Ok((fit.slope, fit.slope_se))
}

/// Kolmogorov-Smirnov distance between a sample and the normal law with the
/// sample's own mean and standard deviation.
pub fn ks_distance_fitted_normal(sample: &[f64]) -> f64 {
    let n = sample.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return f64::NAN;
    }
    let normal = Normal::new(mean, var.sqrt()).expect("positive standard deviation");
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < n {
        // handle ties: the empirical CDF jumps once per distinct value
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let f = normal.cdf(sorted[i]);
        d = d.max(f - i as f64 / nf).max((j + 1) as f64 / nf - f);
        i = j + 1;
    }
    d
}

/// Maps `f` over `0..count` in parallel and returns the results in index order.
pub fn par_replicas<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Splits `total` into `parts` nearly equal sizes, larger parts first.
pub fn split_evenly(total: u64, parts: usize) -> Vec<u64> {
    let parts = parts.max(1) as u64;
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + u64::from(i < extra)).collect()
}
