//! End-to-end detection: dimension, regularisation and penalty selection followed
//! by segmentation, plus the serialisable run configuration and result document.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::detection::{DetectionConfig, Detector, ScanProfile, SegmentationResult};
use crate::error::{Error, Result};
use crate::factorization::SolverOptions;
use crate::io::{load_csv, standardize, CsvOptions};
use crate::series::TimeSeriesMatrix;
use crate::tuning::{
    default_d_max, estimate_dim, estimate_lambda, penalized_curve, slope_heuristic, DimEstimate,
    PenaltyShape, SlopeFit, DEFAULT_INIT_FRACTION, DEFAULT_TAU_MAX,
};

/// Knobs shared by every pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub msl: usize,
    pub grid_mode: bool,
    pub refine_window: usize,
    pub tau_max: usize,
    pub penalty_shape: PenaltyShape,
    pub init_fraction: f64,
    /// Upper end of the dimension search; `None` uses `min(p − 1, ⌊p/2⌋)`.
    pub d_max: Option<usize>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        let solver = SolverOptions::default();
        Self {
            msl: DetectionConfig::DEFAULT_MSL,
            grid_mode: false,
            refine_window: DetectionConfig::DEFAULT_REFINE_WINDOW,
            tau_max: DEFAULT_TAU_MAX,
            penalty_shape: PenaltyShape::default(),
            init_fraction: DEFAULT_INIT_FRACTION,
            d_max: None,
            max_iters: solver.max_iters,
            rel_tol: solver.rel_tol,
            seed: 0,
        }
    }
}

impl PipelineOptions {
    pub fn detection_config(&self, d: usize, lambda: f64) -> DetectionConfig {
        DetectionConfig {
            d,
            lambda,
            mu: 0.0,
            msl: self.msl,
            grid_mode: self.grid_mode,
            refine_window: self.refine_window,
            solver: SolverOptions {
                max_iters: self.max_iters,
                rel_tol: self.rel_tol,
                seed: self.seed,
            },
        }
    }
}

/// What ends the segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Stopping {
    /// Binary segmentation with a fixed penalty scale.
    Mu(f64),
    /// Greedy segmentation into exactly this many changes.
    KnownK(usize),
    /// Binary segmentation with the slope-heuristic penalty scale.
    Auto,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub d: usize,
    pub dim_estimate: Option<DimEstimate>,
    pub lambda: f64,
    pub lambda_estimated: bool,
    pub mu: Option<f64>,
    pub slope_fit: Option<SlopeFit>,
    /// Unpenalised total fit loss after `0, 1, …` greedy changes, when computed.
    pub loss_curve: Vec<f64>,
    pub segmentation: SegmentationResult,
    /// The greedy run could not place all requested changes.
    pub exhausted: bool,
    pub warnings: Vec<String>,
}

/// Tuning values without running the final segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub d: usize,
    pub lambda: f64,
    pub mu: Option<f64>,
    pub dim_estimate: Option<DimEstimate>,
    pub slope_fit: Option<SlopeFit>,
    pub loss_curve: Vec<f64>,
    pub warnings: Vec<String>,
}

fn resolve_dim(
    x: &TimeSeriesMatrix,
    d: Option<usize>,
    opts: &PipelineOptions,
) -> Result<(usize, Option<DimEstimate>)> {
    match d {
        Some(d) => Ok((d, None)),
        None => {
            if x.dim() < 2 {
                return Ok((1, None));
            }
            let d_max = opts.d_max.unwrap_or_else(|| default_d_max(x.dim()));
            let est = estimate_dim(x, opts.init_fraction, d_max)
                .map_err(|e| e.at_stage("dimension estimate"))?;
            Ok((est.d_hat, Some(est)))
        }
    }
}

fn resolve_lambda(
    x: &TimeSeriesMatrix,
    lambda: Option<f64>,
    warnings: &mut Vec<String>,
) -> Result<(f64, bool)> {
    match lambda {
        Some(l) => Ok((l, false)),
        None => match estimate_lambda(x) {
            Ok(l) => Ok((l, true)),
            Err(Error::DegenerateScale) => {
                let msg = "noise scale is zero, falling back to lambda = 0".to_string();
                log::warn!("{msg}");
                warnings.push(msg);
                Ok((0.0, true))
            }
            Err(e) => Err(e.at_stage("lambda estimate")),
        },
    }
}

/// Slope-heuristic `μ`. When too few splits lower the loss to fill the
/// regression window, `μ = 0` is used so that only those splits can be accepted.
fn calibrate(
    detector: &Detector<'_>,
    opts: &PipelineOptions,
    warnings: &mut Vec<String>,
) -> Result<(f64, Option<SlopeFit>, Vec<f64>)> {
    match slope_heuristic(detector, opts.tau_max, opts.penalty_shape) {
        Ok((fit, run)) => Ok((fit.mu_hat, Some(fit), run.loss_curve)),
        Err(Error::InsufficientSplits { found, needed }) => {
            let msg = format!(
                "only {found} splits reduce the loss ({needed} needed for the slope heuristic), using mu = 0"
            );
            log::warn!("{msg}");
            warnings.push(msg);
            let run = detector
                .detect_fixed_k(opts.tau_max)
                .map_err(|e| e.at_stage("slope heuristic"))?;
            Ok((0.0, None, run.loss_curve))
        }
        Err(e) => Err(e.at_stage("slope heuristic")),
    }
}

/// Estimate `d`, `λ` and `μ` as requested without the final segmentation.
pub fn tune(
    x: &TimeSeriesMatrix,
    d: Option<usize>,
    lambda: Option<f64>,
    stopping: Stopping,
    opts: &PipelineOptions,
) -> Result<Tuned> {
    let mut warnings = Vec::new();
    let (d, dim_estimate) = resolve_dim(x, d, opts)?;
    let (lambda, _) = resolve_lambda(x, lambda, &mut warnings)?;
    let (mu, slope_fit, loss_curve) = match stopping {
        Stopping::Mu(mu) => (Some(mu), None, Vec::new()),
        Stopping::KnownK(_) => (None, None, Vec::new()),
        Stopping::Auto => {
            let detector = Detector::new(x, opts.detection_config(d, lambda))
                .map_err(|e| e.at_stage("configuration"))?;
            let (mu, fit, curve) = calibrate(&detector, opts, &mut warnings)?;
            (Some(mu), fit, curve)
        }
    };
    Ok(Tuned {
        d,
        lambda,
        mu,
        dim_estimate,
        slope_fit,
        loss_curve,
        warnings,
    })
}

/// Full pipeline: `d` → `λ` → stopping rule → segmentation.
pub fn run_pipeline(
    x: &TimeSeriesMatrix,
    d: Option<usize>,
    lambda: Option<f64>,
    stopping: Stopping,
    opts: &PipelineOptions,
) -> Result<PipelineOutcome> {
    let mut warnings = Vec::new();
    let (d, dim_estimate) = resolve_dim(x, d, opts)?;
    let (lambda, lambda_estimated) = resolve_lambda(x, lambda, &mut warnings)?;
    let mut detector = Detector::new(x, opts.detection_config(d, lambda))
        .map_err(|e| e.at_stage("configuration"))?;

    let (mu, slope_fit, loss_curve, segmentation, exhausted) = match stopping {
        Stopping::Mu(mu) => {
            detector
                .set_mu(mu)
                .map_err(|e| e.at_stage("configuration"))?;
            let seg = detector.detect().map_err(|e| e.at_stage("detection"))?;
            (Some(mu), None, Vec::new(), seg, false)
        }
        Stopping::KnownK(k) => {
            let run = detector
                .detect_fixed_k(k)
                .map_err(|e| e.at_stage("detection"))?;
            if run.exhausted {
                let msg = format!(
                    "only {} of {k} change-points could be placed",
                    run.loss_curve.len() - 1
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            (None, None, run.loss_curve, run.segmentation, run.exhausted)
        }
        Stopping::Auto => {
            let (mu, fit, curve) = calibrate(&detector, opts, &mut warnings)?;
            detector
                .set_mu(mu)
                .map_err(|e| e.at_stage("configuration"))?;
            let seg = detector.detect().map_err(|e| e.at_stage("detection"))?;
            (Some(mu), fit, curve, seg, false)
        }
    };
    Ok(PipelineOutcome {
        d,
        dim_estimate,
        lambda,
        lambda_estimated,
        mu,
        slope_fit,
        loss_curve,
        segmentation,
        exhausted,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// Everything needed to reproduce a `detect` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub csv: CsvOptions,
    pub standardize: bool,
    pub d: Option<usize>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub known_k: Option<usize>,
    pub options: PipelineOptions,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            csv: CsvOptions::default(),
            standardize: false,
            d: None,
            lambda: None,
            mu: None,
            known_k: None,
            options: PipelineOptions::default(),
            output: None,
            format: OutputFormat::Json,
        }
    }

    pub fn stopping(&self) -> Result<Stopping> {
        match (self.mu, self.known_k) {
            (Some(_), Some(_)) => Err(Error::invalid(
                "a fixed penalty and a known number of changes cannot both be given",
            )),
            (Some(mu), None) => Ok(Stopping::Mu(mu)),
            (None, Some(k)) => Ok(Stopping::KnownK(k)),
            (None, None) => Ok(Stopping::Auto),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stopping()?;
        if self.options.msl == 0 {
            return Err(Error::invalid("minimum segment length must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    /// 1-based first time index.
    pub first: usize,
    /// 1-based last time index.
    pub last: usize,
    pub dim: usize,
    pub fit: f64,
    pub nuclear: f64,
    pub regularized_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// Number of change-points.
    pub k: usize,
    pub loss: f64,
    /// `loss + μ k ln n`, absent when no penalty scale applies.
    pub penalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub lambda_estimated: bool,
    pub warnings: Vec<String>,
}

/// Serialisable outcome of a `detect` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    /// 1-based index of the last time point of each segment but the final one.
    pub changepoints: Vec<usize>,
    pub lambda: f64,
    pub mu: Option<f64>,
    pub d: usize,
    pub segments: Vec<SegmentSummary>,
    pub loss_curve: Vec<LossPoint>,
    pub scan_profiles: Vec<ScanProfile>,
    pub detection_order: Vec<usize>,
    pub dim_estimate: Option<DimEstimate>,
    pub slope_fit: Option<SlopeFit>,
    pub provenance: Provenance,
    pub config: RunConfig,
}

impl ResultDocument {
    pub fn from_outcome(x: &TimeSeriesMatrix, outcome: PipelineOutcome, config: RunConfig) -> Self {
        let n = x.len();
        let seg = &outcome.segmentation;
        let segments = seg
            .segments(n)
            .into_iter()
            .zip(&seg.segment_losses)
            .map(|((s, e), loss)| SegmentSummary {
                first: s + 1,
                last: e,
                dim: outcome.d,
                fit: loss.fit,
                nuclear: loss.nuclear,
                regularized_total: loss.regularized_total,
            })
            .collect();
        let penalized = outcome
            .mu
            .map(|mu| penalized_curve(&outcome.loss_curve, n, mu));
        let loss_curve = outcome
            .loss_curve
            .iter()
            .enumerate()
            .map(|(k, &loss)| LossPoint {
                k,
                loss,
                penalized: penalized.as_ref().map(|p| p[k]),
            })
            .collect();
        Self {
            changepoints: seg.changepoints.clone(),
            lambda: outcome.lambda,
            mu: outcome.mu,
            d: outcome.d,
            segments,
            loss_curve,
            scan_profiles: seg.scan_profiles.clone(),
            detection_order: seg.detection_order.clone(),
            dim_estimate: outcome.dim_estimate,
            slope_fit: outcome.slope_fit,
            provenance: Provenance {
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: config.options.seed,
                n,
                p: x.dim(),
                lambda_estimated: outcome.lambda_estimated,
                warnings: outcome.warnings,
            },
            config,
        }
    }
}

/// Load, optionally standardise, tune and segment.
pub fn run_detect(cfg: &RunConfig) -> Result<ResultDocument> {
    cfg.validate()?;
    let x = load_csv(&cfg.input, &cfg.csv).map_err(|e| e.at_stage("load"))?;
    let (x, constant_rows) = if cfg.standardize {
        standardize(&x).map_err(|e| e.at_stage("standardize"))?
    } else {
        (x, Vec::new())
    };
    let mut outcome = run_pipeline(&x, cfg.d, cfg.lambda, cfg.stopping()?, &cfg.options)?;
    if !constant_rows.is_empty() {
        outcome.warnings.insert(
            0,
            format!("constant variables left unscaled: {constant_rows:?}"),
        );
    }
    Ok(ResultDocument::from_outcome(&x, outcome, cfg.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{generate, Scenario, SyntheticSpec};

    #[test]
    fn stopping_is_exclusive() {
        let mut cfg = RunConfig::new("x.csv");
        assert_eq!(cfg.stopping().unwrap(), Stopping::Auto);
        cfg.known_k = Some(3);
        assert_eq!(cfg.stopping().unwrap(), Stopping::KnownK(3));
        cfg.mu = Some(1.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn known_k_recovers_benchmark_changes() {
        let spec = SyntheticSpec::benchmark(20, 2, Scenario::A, 21);
        let (x, truth) = generate(&spec).unwrap();
        let opts = PipelineOptions {
            grid_mode: true,
            ..Default::default()
        };
        let out = run_pipeline(&x, Some(2), None, Stopping::KnownK(4), &opts).unwrap();
        assert_eq!(out.segmentation.changepoints.len(), 4);
        for (a, b) in out
            .segmentation
            .changepoints
            .iter()
            .zip(&truth.changepoints)
        {
            assert!(a.abs_diff(*b) <= 3, "{a} vs {b}");
        }
        assert_eq!(out.loss_curve.len(), 5);
    }

    #[test]
    fn estimated_dimension_is_used() {
        let spec = SyntheticSpec::benchmark(20, 3, Scenario::A, 2);
        let (x, _) = generate(&spec).unwrap();
        let tuned = tune(
            &x,
            None,
            None,
            Stopping::Mu(1.0),
            &PipelineOptions::default(),
        )
        .unwrap();
        assert_eq!(tuned.d, 3);
        assert!(tuned.lambda > 0.0);
        assert_eq!(tuned.mu, Some(1.0));
    }
}
