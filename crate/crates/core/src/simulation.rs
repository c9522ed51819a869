//! Synthetic piecewise-subspace series with known change-points.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::series::TimeSeriesMatrix;

/// Noise scenario of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// IID Gaussian noise, variance 0.005.
    A,
    /// Per-coordinate AR(1) noise with stationary variance 0.005.
    B,
    /// IID Gaussian noise, variance 0.05.
    C,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::A, Scenario::B, Scenario::C];

    pub fn default_variance(self) -> f64 {
        match self {
            Scenario::A | Scenario::B => 0.005,
            Scenario::C => 0.05,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::A => "A",
            Scenario::B => "B",
            Scenario::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Scenario::A),
            "B" | "b" => Ok(Scenario::B),
            "C" | "c" => Ok(Scenario::C),
            other => Err(Error::invalid(format!(
                "unknown scenario {other:?}, expected A, B or C"
            ))),
        }
    }
}

/// How the target distance between consecutive bases is interpreted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceReading {
    /// `d − ‖Z_iᵀ Z_{i+1}‖_F² = Δ²` (chordal distance).
    #[default]
    Squared,
    /// `d − ‖Z_iᵀ Z_{i+1}‖_F = Δ²`. Only feasible when `d − √d ≤ Δ² ≤ d`.
    Unsquared,
}

pub const DEFAULT_AR_COEFFICIENT: f64 = 0.7;

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub p: usize,
    pub d: usize,
    pub n: usize,
    /// Sorted change-points, each the 1-based index of the last point of a segment.
    pub changepoints: Vec<usize>,
    pub delta: f64,
    pub scenario: Scenario,
    /// Marginal noise variance; zero gives noiseless data.
    pub noise_variance: f64,
    /// AR coefficient, only used by scenario B.
    pub ar_coefficient: f64,
    pub seed: u64,
    #[serde(default)]
    pub distance_reading: DistanceReading,
}

impl SyntheticSpec {
    /// Benchmark layout: `n = 500`, changes at 100, 200, 300, 400 and `Δ = √d / 2`.
    pub fn benchmark(p: usize, d: usize, scenario: Scenario, seed: u64) -> Self {
        Self {
            p,
            d,
            n: 500,
            changepoints: vec![100, 200, 300, 400],
            delta: (d as f64).sqrt() / 2.0,
            scenario,
            noise_variance: scenario.default_variance(),
            ar_coefficient: DEFAULT_AR_COEFFICIENT,
            seed,
            distance_reading: DistanceReading::Squared,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.noise_variance.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d >= self.p {
            return Err(Error::invalid(format!(
                "need 1 <= d < p, got d = {}, p = {}",
                self.d, self.p
            )));
        }
        if self.n == 0 {
            return Err(Error::invalid("series length must be positive"));
        }
        if self.changepoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("change-points must be strictly increasing"));
        }
        if self.changepoints.iter().any(|&c| c == 0 || c >= self.n) {
            return Err(Error::invalid(format!(
                "change-points must lie in (0, {})",
                self.n
            )));
        }
        let max_delta = (self.d as f64).sqrt();
        if !(self.delta >= 0.0 && self.delta <= max_delta * (1.0 + 1e-12)) {
            return Err(Error::invalid(format!(
                "delta {} outside [0, sqrt(d) = {max_delta}]",
                self.delta
            )));
        }
        if !self.changepoints.is_empty() && self.delta > 0.0 && self.p < 2 * self.d {
            return Err(Error::invalid(format!(
                "rotating a {}-dimensional subspace needs p >= 2d, got p = {}",
                self.d, self.p
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid(
                "noise variance must be finite and non-negative",
            ));
        }
        if self.scenario == Scenario::B
            && (self.ar_coefficient.is_nan() || self.ar_coefficient.abs() >= 1.0)
        {
            return Err(Error::invalid("AR coefficient must satisfy |phi| < 1"));
        }
        Ok(())
    }
}

/// True labels and bases of a generated series.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub changepoints: Vec<usize>,
    /// Segment id of every time point.
    pub labels: Vec<usize>,
    pub bases: Vec<DMatrix<f64>>,
    pub sigma: f64,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Orthonormalise columns with the sign convention `diag(R) > 0`, which makes the
/// result Haar distributed when the input is Gaussian.
fn haar_orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    let (mut q, r) = m.qr().unpack();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random `p × d` matrix with orthonormal columns.
pub fn random_basis(p: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if d == 0 || d > p {
        return Err(Error::dimension(format!(
            "need 1 <= d <= p, got d = {d}, p = {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(haar_orthonormalize(gaussian_matrix(p, d, &mut rng)))
}

/// `d − ‖Z₁ᵀ Z₂‖_F²`
pub fn subspace_distance_sq(z1: &DMatrix<f64>, z2: &DMatrix<f64>) -> f64 {
    z1.ncols() as f64 - z1.tr_mul(z2).norm_squared()
}

/// Rotate every column of `z` by the same angle toward a random orthonormal set in
/// the orthogonal complement of `span(z)`, so that `d − ‖Zᵀ Z'‖_F² = Δ²`.
pub fn rotate_basis(z: &DMatrix<f64>, delta: f64, seed: u64) -> Result<DMatrix<f64>> {
    rotate_basis_with(z, delta, seed, DistanceReading::Squared)
}

pub fn rotate_basis_with(
    z: &DMatrix<f64>,
    delta: f64,
    seed: u64,
    reading: DistanceReading,
) -> Result<DMatrix<f64>> {
    let (p, d) = z.shape();
    let df = d as f64;
    if !(delta >= 0.0 && delta <= df.sqrt() * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!(
            "delta {delta} outside [0, sqrt(d) = {}]",
            df.sqrt()
        )));
    }
    let cos = match reading {
        DistanceReading::Squared => (1.0 - delta * delta / df).max(0.0).sqrt(),
        DistanceReading::Unsquared => {
            let c = (df - delta * delta) / df.sqrt();
            if !(0.0..=1.0 + 1e-12).contains(&c) {
                return Err(Error::invalid(format!(
                    "delta {delta} is infeasible under the unsquared distance for d = {d}"
                )));
            }
            c.min(1.0)
        }
    };
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    if sin == 0.0 {
        return Ok(z.clone());
    }
    if p < 2 * d {
        return Err(Error::dimension(format!(
            "no room for a {d}-dimensional complement in R^{p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = gaussian_matrix(p, d, &mut rng);
    // Two projection passes keep the complement numerically orthogonal to z.
    for _ in 0..2 {
        let proj = z * z.tr_mul(&w);
        w -= proj;
    }
    let u = haar_orthonormalize(w);
    Ok(z * cos + u * sin)
}

/// Generate a series `x_t = Z_{i(t)} s_t + ε_t` and its ground truth.
pub fn generate(spec: &SyntheticSpec) -> Result<(TimeSeriesMatrix, GroundTruth)> {
    spec.validate()?;
    let (p, d, n) = (spec.p, spec.d, spec.n);

    let mut bases = Vec::with_capacity(spec.changepoints.len() + 1);
    bases.push(random_basis(p, d, seed::derive(spec.seed, &[1, 0]))?);
    for i in 1..=spec.changepoints.len() {
        let prev = &bases[i - 1];
        let next = rotate_basis_with(
            prev,
            spec.delta,
            seed::derive(spec.seed, &[1, i as u64]),
            spec.distance_reading,
        )?;
        bases.push(next);
    }

    let mut labels = Vec::with_capacity(n);
    let mut segment = 0;
    for t in 1..=n {
        labels.push(segment);
        if spec.changepoints.get(segment) == Some(&t) {
            segment += 1;
        }
    }

    let mut signal_rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &[2]));
    let signal = gaussian_matrix(d, n, &mut signal_rng);
    let mut x = DMatrix::zeros(p, n);
    for t in 0..n {
        x.column_mut(t)
            .copy_from(&(&bases[labels[t]] * signal.column(t)));
    }

    x += noise(spec)?;
    let truth = GroundTruth {
        changepoints: spec.changepoints.clone(),
        labels,
        bases,
        sigma: spec.sigma(),
    };
    Ok((TimeSeriesMatrix::new(x)?, truth))
}

/// Noise matrix for the scenario of `spec`.
pub fn noise(spec: &SyntheticSpec) -> Result<DMatrix<f64>> {
    let (p, n) = (spec.p, spec.n);
    let sigma = spec.sigma();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &[3]));
    let mut eps = gaussian_matrix(p, n, &mut rng);
    match spec.scenario {
        Scenario::A | Scenario::C => eps *= sigma,
        Scenario::B => {
            let phi = spec.ar_coefficient;
            let innovation_sd = sigma * (1.0 - phi * phi).sqrt();
            for r in 0..p {
                let mut prev = eps[(r, 0)] * sigma;
                eps[(r, 0)] = prev;
                for t in 1..n {
                    prev = phi * prev + innovation_sd * eps[(r, t)];
                    eps[(r, t)] = prev;
                }
            }
        }
    }
    Ok(eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram_error(z: &DMatrix<f64>) -> f64 {
        (z.tr_mul(z) - DMatrix::identity(z.ncols(), z.ncols()))
            .abs()
            .max()
    }

    #[test]
    fn random_basis_is_orthonormal() {
        for (p, d, seed) in [(20, 2, 0), (62, 5, 1), (7, 7, 2), (100, 15, 3)] {
            let z = random_basis(p, d, seed).unwrap();
            assert!(gram_error(&z) < 1e-12);
            for col in z.column_iter() {
                assert!((col.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert_ne!(
            random_basis(20, 2, 1).unwrap(),
            random_basis(20, 2, 2).unwrap()
        );
        assert!(random_basis(3, 4, 0).is_err());
    }

    #[test]
    fn rotation_hits_target_distance() {
        let z = random_basis(20, 4, 9).unwrap();
        assert_eq!(rotate_basis(&z, 0.0, 1).unwrap(), z);

        let far = rotate_basis(&z, 2.0, 1).unwrap();
        assert!(z.tr_mul(&far).norm() < 1e-12);
        assert!(gram_error(&far) < 1e-12);

        let mid = rotate_basis(&z, 1.0, 1).unwrap();
        assert!((subspace_distance_sq(&z, &mid) - 1.0).abs() < 1e-8);
        assert!(gram_error(&mid) < 1e-12);
    }

    #[test]
    fn rotation_needs_room() {
        let z = random_basis(5, 3, 0).unwrap();
        assert!(rotate_basis(&z, 1.0, 0).is_err());
        assert!(rotate_basis(&z, 3.0, 0).is_err());
    }

    #[test]
    fn unsquared_reading() {
        let z = random_basis(10, 1, 0).unwrap();
        let r = rotate_basis_with(&z, 0.5, 3, DistanceReading::Unsquared).unwrap();
        assert!((1.0 - z.tr_mul(&r).norm() - 0.25).abs() < 1e-12);
        let z = random_basis(20, 4, 0).unwrap();
        assert!(rotate_basis_with(&z, 1.0, 3, DistanceReading::Unsquared).is_err());
    }

    #[test]
    fn labels_follow_changepoints() {
        let mut spec = SyntheticSpec::benchmark(20, 2, Scenario::A, 4);
        spec.n = 10;
        spec.changepoints = vec![3, 7];
        let (x, truth) = generate(&spec).unwrap();
        assert_eq!(x.len(), 10);
        assert_eq!(truth.labels, vec![0, 0, 0, 1, 1, 1, 1, 2, 2, 2]);
        assert_eq!(truth.bases.len(), 3);
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = SyntheticSpec::benchmark(20, 2, Scenario::B, 17);
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate(&SyntheticSpec { seed: 18, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scenario_a_noise_variance() {
        let mut spec = SyntheticSpec::benchmark(20, 2, Scenario::A, 5);
        spec.n = 1000;
        let eps = noise(&spec).unwrap();
        let m = eps.mean();
        let var = eps.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (eps.len() - 1) as f64;
        assert!((0.0045..=0.0055).contains(&var), "variance {var}");
    }

    #[test]
    fn scenario_b_autocorrelation_and_stationary_start() {
        let mut spec = SyntheticSpec::benchmark(400, 2, Scenario::B, 6);
        spec.n = 10_000;
        spec.p = 1;
        spec.d = 1;
        spec.changepoints.clear();
        let eps = noise(&spec).unwrap();
        let row: Vec<f64> = eps.row(0).iter().copied().collect();
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let c0: f64 = row.iter().map(|v| (v - m).powi(2)).sum();
        let c1: f64 = row.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let acf = c1 / c0;
        assert!((0.65..=0.75).contains(&acf), "acf {acf}");

        let mut spec = SyntheticSpec::benchmark(4000, 2, Scenario::B, 7);
        spec.changepoints.clear();
        let eps = noise(&spec).unwrap();
        let first = eps.column(0);
        let var = first.norm_squared() / first.len() as f64;
        assert!((0.0045..=0.0055).contains(&var), "initial variance {var}");
    }

    #[test]
    fn noiseless_segments_have_rank_d() {
        let mut spec = SyntheticSpec::benchmark(20, 3, Scenario::A, 8);
        spec.noise_variance = 0.0;
        let (x, _) = generate(&spec).unwrap();
        let seg = x.segment(100..200).into_owned();
        let mut sv: Vec<f64> = seg.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[3] < 1e-10 * sv[0]);
        assert!(sv[2] > 1e-3 * sv[0]);
    }

    #[test]
    fn spec_validation() {
        let ok = SyntheticSpec::benchmark(20, 2, Scenario::A, 0);
        assert!(ok.validate().is_ok());
        let too_far = SyntheticSpec {
            delta: 2.0,
            ..ok.clone()
        };
        assert!(too_far.validate().is_err());
        let unsorted = SyntheticSpec {
            changepoints: vec![200, 100],
            ..ok.clone()
        };
        assert!(unsorted.validate().is_err());
        let outside = SyntheticSpec {
            changepoints: vec![500],
            ..ok
        };
        assert!(outside.validate().is_err());
        assert!("D".parse::<Scenario>().is_err());
        assert_eq!("b".parse::<Scenario>().unwrap(), Scenario::B);
    }
}
