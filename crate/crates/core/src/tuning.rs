//! Data-driven choice of the regularisation weight, penalty scale and subspace dimension.

use std::fmt;
use std::str::FromStr;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionConfig, Detector, FixedKResult};
use crate::error::{Error, Result};
use crate::series::TimeSeriesMatrix;

/// Consistency constant of the MAD for a Gaussian scale.
pub const MAD_CONSISTENCY: f64 = 1.4826;

/// Lower end of the regression window as a fraction of `tau_max`.
pub const SLOPE_WINDOW_FRACTION: f64 = 0.6;

pub const DEFAULT_TAU_MAX: usize = 15;
pub const DEFAULT_INIT_FRACTION: f64 = 0.2;

/// Minimum consecutive-eigenvalue ratio above which a dimension estimate is flagged.
pub const LOW_CONFIDENCE_RATIO: f64 = 0.5;

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Robust noise standard deviation from the MAD of first differences pooled over
/// all variables. Differencing doubles the noise variance, hence the `1/√2`.
pub fn estimate_noise_scale(x: &TimeSeriesMatrix) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::invalid(
            "need at least two time points to difference",
        ));
    }
    let v = x.values();
    let mut diffs: Vec<f64> = (1..x.len())
        .flat_map(|t| (0..x.dim()).map(move |r| v[(r, t)] - v[(r, t - 1)]))
        .collect();
    let center = median(&mut diffs);
    let mut dev: Vec<f64> = diffs.iter().map(|d| (d - center).abs()).collect();
    let mad = median(&mut dev);
    if mad == 0.0 {
        return Err(Error::DegenerateScale);
    }
    Ok(MAD_CONSISTENCY * mad / std::f64::consts::SQRT_2)
}

/// `λ = σ̂ / 2`.
pub fn estimate_lambda(x: &TimeSeriesMatrix) -> Result<f64> {
    estimate_noise_scale(x).map(|s| s / 2.0)
}

/// Regressor used by the slope heuristic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyShape {
    /// `τ · ln n`: the total penalty of `τ` changes under the acceptance rule.
    PerChange,
    /// `ln(n / τ)`. Flat for small `τ`, so the fitted slope is usually
    /// non-negative and `μ` collapses to zero.
    LogRatio,
    /// `τ · ln(n / τ)`.
    #[default]
    TauLogRatio,
}

impl PenaltyShape {
    pub fn regressor(self, tau: usize, n: usize) -> f64 {
        let (tau, n) = (tau as f64, n as f64);
        match self {
            PenaltyShape::PerChange => tau * n.ln(),
            PenaltyShape::LogRatio => (n / tau).ln(),
            PenaltyShape::TauLogRatio => tau * (n / tau).ln(),
        }
    }
}

impl fmt::Display for PenaltyShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyShape::PerChange => "per-change",
            PenaltyShape::LogRatio => "log-ratio",
            PenaltyShape::TauLogRatio => "tau-log-ratio",
        })
    }
}

impl FromStr for PenaltyShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-change" => Ok(Self::PerChange),
            "log-ratio" => Ok(Self::LogRatio),
            "tau-log-ratio" => Ok(Self::TauLogRatio),
            other => Err(Error::invalid(format!("unknown penalty shape {other:?}"))),
        }
    }
}

/// Least-squares fit of the loss curve against the penalty shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// `max(0, −2 · slope)`
    pub mu_hat: f64,
    pub slope: f64,
    pub intercept: f64,
    /// `(τ, L(τ))` pairs used in the regression.
    pub points: Vec<(usize, f64)>,
    pub shape: PenaltyShape,
}

/// Ordinary least squares of `L(τ)` on `shape.regressor(τ, n)`.
pub fn fit_slope(points: &[(usize, f64)], n: usize, shape: PenaltyShape) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::invalid("slope regression needs at least two points"));
    }
    if points.iter().any(|&(tau, _)| tau == 0) {
        return Err(Error::invalid("slope regression needs tau >= 1"));
    }
    let xs: Vec<f64> = points.iter().map(|&(t, _)| shape.regressor(t, n)).collect();
    let m = points.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / m;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / m;
    let (sxy, sxx) = xs
        .iter()
        .zip(points)
        .fold((0.0, 0.0), |(sxy, sxx), (&x, &(_, y))| {
            (
                sxy + (x - x_mean) * (y - y_mean),
                sxx + (x - x_mean).powi(2),
            )
        });
    if sxx == 0.0 {
        return Err(Error::invalid(
            "slope regression needs distinct change counts",
        ));
    }
    let slope = sxy / sxx;
    Ok(SlopeFit {
        mu_hat: (-2.0 * slope).max(0.0),
        slope,
        intercept: y_mean - slope * x_mean,
        points: points.to_vec(),
        shape,
    })
}

/// Regression window `[⌈0.6 τ_max⌉, τ_max]`.
pub fn slope_window(tau_max: usize) -> (usize, usize) {
    (
        (SLOPE_WINDOW_FRACTION * tau_max as f64).ceil() as usize,
        tau_max,
    )
}

/// Slope-heuristic penalty scale from an unpenalised greedy run up to `tau_max` changes.
pub fn slope_heuristic_mu(
    x: &TimeSeriesMatrix,
    tau_max: usize,
    cfg: &DetectionConfig,
) -> Result<SlopeFit> {
    let detector = Detector::new(x, *cfg)?;
    slope_heuristic(&detector, tau_max, PenaltyShape::default()).map(|(fit, _)| fit)
}

/// As [`slope_heuristic_mu`] on an existing detector, also returning the greedy run.
pub fn slope_heuristic(
    detector: &Detector<'_>,
    tau_max: usize,
    shape: PenaltyShape,
) -> Result<(SlopeFit, FixedKResult)> {
    if tau_max < 5 {
        return Err(Error::invalid(format!(
            "tau_max must be at least 5, got {tau_max}"
        )));
    }
    let run = detector.detect_fixed_k(tau_max)?;
    let (lo, hi) = slope_window(tau_max);
    let found = run.loss_curve.len() - 1;
    if found < lo + 1 {
        return Err(Error::InsufficientSplits {
            found,
            needed: lo + 1,
        });
    }
    let points: Vec<(usize, f64)> = (lo..=hi.min(found))
        .map(|tau| (tau, run.loss_curve[tau]))
        .collect();
    let fit = fit_slope(&points, detector.data().len(), shape)?;
    Ok((fit, run))
}

/// `L(τ) + μ τ ln n` for every point of a loss curve.
pub fn penalized_curve(loss_curve: &[f64], n: usize, mu: f64) -> Vec<f64> {
    let ln_n = (n as f64).ln();
    loss_curve
        .iter()
        .enumerate()
        .map(|(tau, l)| l + mu * tau as f64 * ln_n)
        .collect()
}

/// Eigenvalue-ratio estimate of the subspace dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimEstimate {
    pub d_hat: usize,
    /// Sample covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// `ratios[i - 1] = λ_{i+1} / λ_i` for the searched `i`.
    pub ratios: Vec<f64>,
    /// Minimum ratio exceeds [`LOW_CONFIDENCE_RATIO`].
    pub low_confidence: bool,
    /// The search stopped early at a zero eigenvalue.
    pub rank_deficient: bool,
}

pub fn default_d_max(p: usize) -> usize {
    (p - 1).min(p / 2).max(1)
}

/// Pick `d` minimising `λ_{i+1} / λ_i` over `i = 1..=d_max` (ties to the smallest `i`).
/// Ratios are only formed over strictly positive denominators.
pub fn select_dim(eigenvalues: &[f64], d_max: usize) -> Result<DimEstimate> {
    if d_max == 0 || d_max >= eigenvalues.len() {
        return Err(Error::invalid(format!(
            "d_max must be in 1..{}, got {d_max}",
            eigenvalues.len()
        )));
    }
    let top = eigenvalues[0];
    if top.is_nan() || top <= 0.0 {
        return Err(Error::RankDeficient("sample covariance is zero".into()));
    }
    let floor = top * 1e-13;
    let mut ratios = Vec::with_capacity(d_max);
    let mut rank_deficient = false;
    for i in 0..d_max {
        if eigenvalues[i] <= floor {
            rank_deficient = true;
            break;
        }
        ratios.push(eigenvalues[i + 1].max(0.0) / eigenvalues[i]);
    }
    let (best, min_ratio) =
        ratios
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) },
            );
    Ok(DimEstimate {
        d_hat: best + 1,
        eigenvalues: eigenvalues.to_vec(),
        ratios,
        low_confidence: min_ratio > LOW_CONFIDENCE_RATIO,
        rank_deficient,
    })
}

/// Eigenvalue-ratio dimension estimate on the first `⌈init_fraction · n⌉` columns.
pub fn estimate_dim(x: &TimeSeriesMatrix, init_fraction: f64, d_max: usize) -> Result<DimEstimate> {
    if !(init_fraction > 0.0 && init_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "init_fraction must be in (0, 1], got {init_fraction}"
        )));
    }
    let p = x.dim();
    if d_max == 0 || d_max >= p {
        return Err(Error::invalid(format!(
            "d_max must be in 1..{p}, got {d_max}"
        )));
    }
    let m = ((init_fraction * x.len() as f64).ceil() as usize).min(x.len());
    if m < 2 {
        return Err(Error::invalid(
            "initial portion needs at least two time points",
        ));
    }
    if m < p {
        log::warn!(
            "initial portion has {m} points for {p} variables; covariance is rank deficient"
        );
    }
    let mut head = x.segment(0..m).into_owned();
    for mut row in head.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let cov = (&head * head.transpose()) / (m as f64 - 1.0);
    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    select_dim(&eig, d_max)
}
