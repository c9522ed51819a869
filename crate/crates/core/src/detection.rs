//! Split scan and binary segmentation.
//!
//! Index conventions: segments are 0-based half-open column ranges
//! `[start, end)`. A split `k` puts columns `[start, k)` on the left and
//! `[k, end)` on the right, so `k` is also the 1-based index of the last
//! time point of the left segment, which is how change-points are reported.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{factorize_view, SegmentLoss, SolverOptions};
use crate::seed;
use crate::series::TimeSeriesMatrix;

/// Parameters of the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Subspace dimension.
    pub d: usize,
    /// Nuclear-norm weight.
    pub lambda: f64,
    /// Penalty scale, one accepted change costs `mu * ln(n)`.
    pub mu: f64,
    /// Minimum segment length.
    pub msl: usize,
    /// Evaluate a logarithmic grid of candidates and refine locally.
    pub grid_mode: bool,
    /// Half-width of the refinement window used in grid mode.
    pub refine_window: usize,
    pub solver: SolverOptions,
}

impl DetectionConfig {
    pub const DEFAULT_MSL: usize = 30;
    pub const DEFAULT_REFINE_WINDOW: usize = 10;

    pub fn new(d: usize, lambda: f64) -> Self {
        Self {
            d,
            lambda,
            mu: 0.0,
            msl: Self::DEFAULT_MSL,
            grid_mode: false,
            refine_window: Self::DEFAULT_REFINE_WINDOW,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_mu(self, mu: f64) -> Self {
        Self { mu, ..self }
    }

    pub fn with_msl(self, msl: usize) -> Self {
        Self { msl, ..self }
    }

    pub fn with_grid(self, grid_mode: bool) -> Self {
        Self { grid_mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("subspace dimension must be at least 1"));
        }
        if self.msl < self.d {
            return Err(Error::invalid(format!(
                "minimum segment length {} is smaller than the subspace dimension {}",
                self.msl, self.d
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("invalid lambda {}", self.lambda)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!("invalid mu {}", self.mu)));
        }
        if self.grid_mode && self.refine_window == 0 {
            return Err(Error::invalid(
                "refine window must be at least 1 in grid mode",
            ));
        }
        self.solver.validate()
    }
}

/// Statistics evaluated while searching one segment for a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanProfile {
    pub start: usize,
    pub end: usize,
    /// Recursion depth of the segment (0 for the whole series).
    pub level: usize,
    pub candidates: Vec<usize>,
    pub statistics: Vec<f64>,
}

/// Minimiser of the scan statistic on a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub tau: usize,
    pub statistic: f64,
    pub left: SegmentLoss,
    pub right: SegmentLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Sorted change-points.
    pub changepoints: Vec<usize>,
    /// Orthonormal `p × d` basis of each segment.
    pub segment_bases: Vec<DMatrix<f64>>,
    pub segment_losses: Vec<SegmentLoss>,
    /// Sum of segment fits plus `mu * ln(n)` per change-point.
    pub total_penalized_loss: f64,
    /// Change-points in the order they were found.
    pub detection_order: Vec<usize>,
    pub scan_profiles: Vec<ScanProfile>,
}

impl SegmentationResult {
    /// Segment boundaries as half-open ranges.
    pub fn segments(&self, n: usize) -> Vec<(usize, usize)> {
        segment_ranges(&self.changepoints, n)
    }
}

/// Greedy segmentation with a fixed number of changes.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedKResult {
    pub segmentation: SegmentationResult,
    /// Total fit loss after `0, 1, …, found` changes.
    pub loss_curve: Vec<f64>,
    /// Set when admissible loss-reducing splits ran out before the requested count.
    pub exhausted: bool,
}

/// Returns true when the split reduces the unregularised loss by more than `mu * ln(n_total)`.
pub fn accept_change(
    fit_left: f64,
    fit_right: f64,
    fit_full: f64,
    n_total: usize,
    mu: f64,
) -> bool {
    fit_left + fit_right + mu * (n_total as f64).ln() < fit_full
}

/// Binary segmentation with the penalised acceptance rule.
pub fn detect(x: &TimeSeriesMatrix, cfg: &DetectionConfig) -> Result<SegmentationResult> {
    Detector::new(x, *cfg)?.detect()
}

/// Greedy segmentation into (at most) `k` changes without a penalty.
pub fn detect_fixed_k(
    x: &TimeSeriesMatrix,
    cfg: &DetectionConfig,
    k: usize,
) -> Result<FixedKResult> {
    Detector::new(x, *cfg)?.detect_fixed_k(k)
}

/// `T(k)` on `[start, end)`.
pub fn scan_statistic(
    x: &TimeSeriesMatrix,
    start: usize,
    end: usize,
    k: usize,
    cfg: &DetectionConfig,
) -> Result<f64> {
    Detector::new(x, *cfg)?.scan_statistic(start, end, k)
}

/// Minimiser of `T(k)` over the admissible candidates of `[start, end)`, if any.
pub fn best_split(
    x: &TimeSeriesMatrix,
    start: usize,
    end: usize,
    cfg: &DetectionConfig,
) -> Result<Option<Split>> {
    Ok(Detector::new(x, *cfg)?
        .best_split(start, end, 0)?
        .map(|(split, _)| split))
}

/// Minimiser of `T(k)` within `window` of `coarse_tau`, clipped to the admissible range.
pub fn refine(
    x: &TimeSeriesMatrix,
    coarse_tau: usize,
    window: usize,
    start: usize,
    end: usize,
    cfg: &DetectionConfig,
) -> Result<usize> {
    Detector::new(x, *cfg)?.refine(coarse_tau, window, start, end)
}

/// Half-open segment ranges induced by sorted change-points.
pub fn segment_ranges(changepoints: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut bounds = Vec::with_capacity(changepoints.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(changepoints);
    bounds.push(n);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Detector bound to one series. Segment losses are memoised so that
/// overlapping scans (and repeated runs with different penalties) reuse work.
pub struct Detector<'a> {
    data: &'a TimeSeriesMatrix,
    config: DetectionConfig,
    cache: Mutex<HashMap<(usize, usize), SegmentLoss>>,
}

impl<'a> Detector<'a> {
    pub fn new(data: &'a TimeSeriesMatrix, config: DetectionConfig) -> Result<Self> {
        config.validate()?;
        if config.d > data.dim() {
            return Err(Error::dimension(format!(
                "subspace dimension {} exceeds the number of variables {}",
                config.d,
                data.dim()
            )));
        }
        Ok(Self {
            data,
            config,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &DetectionConfig {
        &self.config
    }

    pub fn data(&self) -> &TimeSeriesMatrix {
        self.data
    }

    /// Change the penalty scale. Cached losses do not depend on it and are kept.
    pub fn set_mu(&mut self, mu: f64) -> Result<()> {
        let config = self.config.with_mu(mu);
        config.validate()?;
        self.config = config;
        Ok(())
    }

    fn segment_seed(&self, start: usize, end: usize) -> u64 {
        seed::derive(self.config.solver.seed, &[start as u64, end as u64])
    }

    fn solver_for(&self, start: usize, end: usize) -> SolverOptions {
        self.config.solver.with_seed(self.segment_seed(start, end))
    }

    /// Regularised loss of the factorisation of `[start, end)`.
    pub fn segment_loss(&self, start: usize, end: usize) -> Result<SegmentLoss> {
        if start >= end || end > self.data.len() {
            return Err(Error::dimension(format!(
                "segment [{start}, {end}) out of bounds for series of length {}",
                self.data.len()
            )));
        }
        if let Some(hit) = self.cache.lock().unwrap().get(&(start, end)) {
            return Ok(*hit);
        }
        let loss = factorize_view(
            self.data.segment(start..end),
            self.config.d,
            self.config.lambda,
            &self.solver_for(start, end),
        )?
        .segment_loss();
        self.cache.lock().unwrap().insert((start, end), loss);
        Ok(loss)
    }

    /// Orthonormal basis of the factorisation of `[start, end)`.
    pub fn segment_basis(&self, start: usize, end: usize) -> Result<DMatrix<f64>> {
        let result = factorize_view(
            self.data.segment(start..end),
            self.config.d,
            self.config.lambda,
            &self.solver_for(start, end),
        )?;
        Ok(result.basis())
    }

    /// Admissible split range `[lo, hi]` for a segment, if non-empty.
    pub fn admissible(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let msl = self.config.msl;
        let lo = start + msl;
        let hi = end.checked_sub(msl)?;
        (end > start && lo <= hi).then_some((lo, hi))
    }

    fn check_candidate(&self, start: usize, end: usize, k: usize) -> Result<()> {
        match self.admissible(start, end) {
            Some((lo, hi)) if (lo..=hi).contains(&k) && end <= self.data.len() => Ok(()),
            _ => Err(Error::CandidateOutOfRange {
                k,
                start,
                end,
                msl: self.config.msl,
            }),
        }
    }

    fn split_at(&self, start: usize, end: usize, k: usize) -> Result<Split> {
        self.check_candidate(start, end, k)?;
        let left = self.segment_loss(start, k)?;
        let right = self.segment_loss(k, end)?;
        Ok(Split {
            tau: k,
            statistic: left.regularized_total + right.regularized_total,
            left,
            right,
        })
    }

    pub fn scan_statistic(&self, start: usize, end: usize, k: usize) -> Result<f64> {
        self.split_at(start, end, k).map(|s| s.statistic)
    }

    fn evaluate(
        &self,
        start: usize,
        end: usize,
        candidates: &[usize],
        seen: &mut BTreeMap<usize, Split>,
    ) -> Result<()> {
        let fresh: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|k| !seen.contains_key(k))
            .collect();
        let splits = fresh
            .par_iter()
            .map(|&k| self.split_at(start, end, k))
            .collect::<Result<Vec<_>>>()?;
        for split in splits {
            seen.insert(split.tau, split);
        }
        Ok(())
    }

    /// Smallest-index minimiser among the candidates in `range` that have been evaluated.
    fn argmin_in(seen: &BTreeMap<usize, Split>, lo: usize, hi: usize) -> Option<Split> {
        seen.range(lo..=hi)
            .map(|(_, s)| *s)
            .fold(None, |best: Option<Split>, s| match best {
                Some(b) if b.statistic <= s.statistic => Some(b),
                _ => Some(s),
            })
    }

    fn refine_into(
        &self,
        coarse_tau: usize,
        window: usize,
        start: usize,
        end: usize,
        seen: &mut BTreeMap<usize, Split>,
    ) -> Result<(Split, usize, usize)> {
        self.check_candidate(start, end, coarse_tau)?;
        let (lo, hi) = self.admissible(start, end).expect("checked above");
        let from = coarse_tau.saturating_sub(window).max(lo);
        let to = (coarse_tau + window).min(hi);
        let candidates: Vec<usize> = (from..=to).collect();
        self.evaluate(start, end, &candidates, seen)?;
        let best = Self::argmin_in(seen, from, to).expect("window contains coarse_tau");
        Ok((best, from, to))
    }

    pub fn refine(
        &self,
        coarse_tau: usize,
        window: usize,
        start: usize,
        end: usize,
    ) -> Result<usize> {
        let mut seen = BTreeMap::new();
        self.refine_into(coarse_tau, window, start, end, &mut seen)
            .map(|(best, _, _)| best.tau)
    }

    /// Grid candidates: `max(3, ⌈ln len⌉)` evenly spaced admissible points.
    pub fn grid_candidates(&self, start: usize, end: usize) -> Vec<usize> {
        let Some((lo, hi)) = self.admissible(start, end) else {
            return Vec::new();
        };
        let count = ((end - start) as f64).ln().ceil().max(3.0) as usize;
        let span = hi - lo;
        if span < count {
            return (lo..=hi).collect();
        }
        let mut grid: Vec<usize> = (0..count)
            .map(|i| lo + ((i * span) as f64 / (count - 1) as f64).round() as usize)
            .collect();
        grid.dedup();
        grid
    }

    /// Best split of `[start, end)` and the profile of evaluated statistics.
    pub fn best_split(
        &self,
        start: usize,
        end: usize,
        level: usize,
    ) -> Result<Option<(Split, ScanProfile)>> {
        let Some((lo, hi)) = self.admissible(start, end) else {
            return Ok(None);
        };
        if end > self.data.len() {
            return Err(Error::dimension(format!(
                "segment [{start}, {end}) out of bounds for series of length {}",
                self.data.len()
            )));
        }
        let mut seen = BTreeMap::new();
        let best = if self.config.grid_mode {
            self.evaluate(start, end, &self.grid_candidates(start, end), &mut seen)?;
            let mut best = Self::argmin_in(&seen, lo, hi).expect("grid is non-empty");
            // Walk the window along while the minimiser sits on its unclipped edge.
            let window = self.config.refine_window;
            loop {
                let (next, from, to) = self.refine_into(best.tau, window, start, end, &mut seen)?;
                let on_edge = (next.tau == from && from > lo) || (next.tau == to && to < hi);
                let moved = next.tau != best.tau;
                best = next;
                if !(moved && on_edge) {
                    break;
                }
            }
            best
        } else {
            let all: Vec<usize> = (lo..=hi).collect();
            self.evaluate(start, end, &all, &mut seen)?;
            Self::argmin_in(&seen, lo, hi).expect("admissible range is non-empty")
        };
        let profile = ScanProfile {
            start,
            end,
            level,
            candidates: seen.keys().copied().collect(),
            statistics: seen.values().map(|s| s.statistic).collect(),
        };
        Ok(Some((best, profile)))
    }

    /// Binary segmentation: split a segment at its best candidate whenever the
    /// penalised acceptance rule holds, then recurse on both halves.
    pub fn detect(&self) -> Result<SegmentationResult> {
        let n = self.data.len();
        let mut found = Vec::new();
        let mut profiles = Vec::new();
        let mut stack = vec![(0, n, 0)];
        while let Some((start, end, level)) = stack.pop() {
            let Some((split, profile)) = self.best_split(start, end, level)? else {
                continue;
            };
            profiles.push(profile);
            let full = self.segment_loss(start, end)?;
            if accept_change(split.left.fit, split.right.fit, full.fit, n, self.config.mu) {
                found.push(split.tau);
                stack.push((split.tau, end, level + 1));
                stack.push((start, split.tau, level + 1));
            }
        }
        self.assemble(found, profiles)
    }

    /// Greedy segmentation: repeatedly split the segment whose best split gives
    /// the largest strict decrease of total fit loss, up to `k` changes.
    pub fn detect_fixed_k(&self, k: usize) -> Result<FixedKResult> {
        if k == 0 {
            return Err(Error::invalid("number of changes must be at least 1"));
        }
        let n = self.data.len();
        let mut profiles = Vec::new();
        let mut open: Vec<OpenSegment> = Vec::new();
        let root = self.open_segment(0, n, 0, &mut profiles)?;
        let mut total_fit = root.full.fit;
        open.push(root);

        let mut loss_curve = vec![total_fit];
        let mut found = Vec::new();
        while found.len() < k {
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, seg)| seg.gain().map(|g| (i, g, seg.start)))
                .filter(|&(_, g, _)| g > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
            let Some((idx, _, _)) = pick else {
                break;
            };
            let seg = open.swap_remove(idx);
            let split = seg.split.expect("picked segments have a split");
            found.push(split.tau);
            let left = self.open_segment(seg.start, split.tau, seg.level + 1, &mut profiles)?;
            let right = self.open_segment(split.tau, seg.end, seg.level + 1, &mut profiles)?;
            total_fit = total_fit - seg.full.fit + left.full.fit + right.full.fit;
            open.push(left);
            open.push(right);
            loss_curve.push(total_fit);
        }
        let exhausted = found.len() < k;
        Ok(FixedKResult {
            segmentation: self.assemble(found, profiles)?,
            loss_curve,
            exhausted,
        })
    }

    fn open_segment(
        &self,
        start: usize,
        end: usize,
        level: usize,
        profiles: &mut Vec<ScanProfile>,
    ) -> Result<OpenSegment> {
        let full = self.segment_loss(start, end)?;
        let split = match self.best_split(start, end, level)? {
            Some((split, profile)) => {
                profiles.push(profile);
                Some(split)
            }
            None => None,
        };
        Ok(OpenSegment {
            start,
            end,
            level,
            full,
            split,
        })
    }

    fn assemble(
        &self,
        order: Vec<usize>,
        scan_profiles: Vec<ScanProfile>,
    ) -> Result<SegmentationResult> {
        let n = self.data.len();
        let mut changepoints = order.clone();
        changepoints.sort_unstable();
        let ranges = segment_ranges(&changepoints, n);
        let segment_losses = ranges
            .iter()
            .map(|&(s, e)| self.segment_loss(s, e))
            .collect::<Result<Vec<_>>>()?;
        let segment_bases = ranges
            .par_iter()
            .map(|&(s, e)| self.segment_basis(s, e))
            .collect::<Result<Vec<_>>>()?;
        let total_fit: f64 = segment_losses.iter().map(|l| l.fit).sum();
        Ok(SegmentationResult {
            total_penalized_loss: total_fit
                + self.config.mu * (n as f64).ln() * changepoints.len() as f64,
            changepoints,
            segment_bases,
            segment_losses,
            detection_order: order,
            scan_profiles,
        })
    }
}

struct OpenSegment {
    start: usize,
    end: usize,
    level: usize,
    full: SegmentLoss,
    split: Option<Split>,
}

impl OpenSegment {
    fn gain(&self) -> Option<f64> {
        self.split
            .map(|s| self.full.fit - (s.left.fit + s.right.fit))
    }
}
