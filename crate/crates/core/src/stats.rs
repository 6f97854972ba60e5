//! Monte Carlo estimates and small regression helpers.

use std::fmt;

use crate::sum::NeumaierSum;

/// How an [`Estimate`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMethod {
    Exact,
    Quadrature,
    MonteCarlo,
    Mcmc,
    Jackknife,
}

impl fmt::Display for EstimateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EstimateMethod::Exact => "exact",
            EstimateMethod::Quadrature => "quadrature",
            EstimateMethod::MonteCarlo => "monte-carlo",
            EstimateMethod::Mcmc => "mcmc",
            EstimateMethod::Jackknife => "jackknife",
        };
        f.write_str(s)
    }
}

/// A value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub method: EstimateMethod,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            n_samples: 1,
            method: EstimateMethod::Exact,
        }
    }

    /// Sample mean and standard error of the mean of i.i.d. draws.
    ///
    /// The reduction is sequential, so the result is a pure function of the
    /// slice contents and order.
    pub fn from_samples(samples: &[f64], method: EstimateMethod) -> Self {
        let n = samples.len();
        assert!(n > 0, "estimate from an empty sample");
        let mean = samples.iter().copied().collect::<NeumaierSum>().value() / n as f64;
        let stderr = if n > 1 {
            let ss: NeumaierSum = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
            (ss.value() / ((n - 1) as f64 * n as f64)).sqrt()
        } else {
            0.0
        };
        Self {
            value: mean,
            stderr,
            n_samples: n,
            method,
        }
    }

    /// `|self - other| <= k * combined stderr + tol`.
    pub fn agrees_with(&self, other: f64, k: f64, tol: f64) -> bool {
        (self.value - other).abs() <= k * self.stderr + tol
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6e} ± {:.2e} (n={}, {})", self.value, self.stderr, self.n_samples, self.method)
    }
}

/// Straight-line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    /// Reduced chi-square (residual variance for unweighted fits).
    pub chi2_per_dof: f64,
}

/// Ordinary least squares. The slope error comes from the residual scatter.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let w = vec![1.0; x.len()];
    let mut fit = weighted_fit_raw(x, y, &w);
    let dof = x.len().saturating_sub(2);
    let scale = if dof > 0 { fit.chi2_per_dof } else { 0.0 };
    fit.slope_stderr *= scale.sqrt();
    fit.intercept_stderr *= scale.sqrt();
    fit
}

/// Weighted least squares with per-point standard deviations `sigma`.
///
/// Parameter errors are the formal ones, inflated by `sqrt(chi2/dof)` when the
/// scatter exceeds what the error bars allow.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> LinearFit {
    assert_eq!(x.len(), sigma.len());
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s).max(f64::MIN_POSITIVE)).collect();
    let mut fit = weighted_fit_raw(x, y, &w);
    let inflate = fit.chi2_per_dof.max(1.0).sqrt();
    fit.slope_stderr *= inflate;
    fit.intercept_stderr *= inflate;
    fit
}

fn weighted_fit_raw(x: &[f64], y: &[f64], w: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "need at least two points for a line");
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - xm) * (x - xm)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (x - xm) * (y - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let chi2: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| {
            let r = y - intercept - slope * x;
            w * r * r
        })
        .sum();
    let dof = x.len().saturating_sub(2);
    LinearFit {
        slope,
        intercept,
        slope_stderr: (1.0 / sxx).sqrt(),
        intercept_stderr: (1.0 / sw + xm * xm / sxx).sqrt(),
        chi2_per_dof: if dof > 0 { chi2 / dof as f64 } else { 0.0 },
    }
}

/// Jackknife standard error from leave-one-out replicates.
pub fn jackknife_stderr(replicates: &[f64]) -> f64 {
    let n = replicates.len();
    if n < 2 {
        return 0.0;
    }
    let mean = replicates.iter().sum::<f64>() / n as f64;
    let ss: f64 = replicates.iter().map(|r| (r - mean) * (r - mean)).sum();
    ((n - 1) as f64 / n as f64 * ss).sqrt()
}
