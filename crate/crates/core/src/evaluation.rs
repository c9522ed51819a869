//! Segmentation scoring and the replication benchmark.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{run_pipeline, PipelineOptions, Stopping};
use crate::seed;
use crate::simulation::{generate, Scenario, SyntheticSpec};

/// Segment id of every time point: label `i` covers `(τ_i, τ_{i+1}]` with `τ_0 = 0`
/// and `τ_{K+1} = n`.
pub fn labels_from_changepoints(changepoints: &[usize], n: usize) -> Result<Vec<usize>> {
    if changepoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("change-points must be strictly increasing"));
    }
    if let Some(&bad) = changepoints.iter().find(|&&c| c == 0 || c >= n) {
        return Err(Error::invalid(format!(
            "change-point {bad} outside (0, {n})"
        )));
    }
    let mut labels = vec![0; n];
    for (i, &c) in changepoints.iter().enumerate() {
        labels[c..].iter_mut().for_each(|l| *l = i + 1);
    }
    Ok(labels)
}

/// Homogeneity, completeness and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let q = c as f64 / total;
            -q * q.ln()
        })
        .sum()
}

/// V-measure scores from the contingency table of two labelings (natural logs).
pub fn v_measure_scores(truth: &[usize], predicted: &[usize]) -> Result<VMeasure> {
    if truth.len() != predicted.len() {
        return Err(Error::dimension(format!(
            "label vectors differ in length: {} vs {}",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("label vectors are empty"));
    }
    let total = truth.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut classes: HashMap<usize, usize> = HashMap::new();
    let mut clusters: HashMap<usize, usize> = HashMap::new();
    for (&c, &k) in truth.iter().zip(predicted) {
        *joint.entry((c, k)).or_default() += 1;
        *classes.entry(c).or_default() += 1;
        *clusters.entry(k).or_default() += 1;
    }
    let h_c = entropy(classes.values().copied(), total);
    let h_k = entropy(clusters.values().copied(), total);
    let (mut h_c_given_k, mut h_k_given_c) = (0.0, 0.0);
    for (&(c, k), &n_ck) in &joint {
        let q = n_ck as f64 / total;
        h_c_given_k -= q * (n_ck as f64 / clusters[&k] as f64).ln();
        h_k_given_c -= q * (n_ck as f64 / classes[&c] as f64).ln();
    }
    let homogeneity = if h_c == 0.0 {
        1.0
    } else {
        1.0 - h_c_given_k / h_c
    };
    let completeness = if h_k == 0.0 {
        1.0
    } else {
        1.0 - h_k_given_c / h_k
    };
    let v_measure = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(VMeasure {
        homogeneity,
        completeness,
        v_measure,
    })
}

pub fn v_measure(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    v_measure_scores(truth, predicted).map(|s| s.v_measure)
}

/// One `(p, d, scenario)` cell of the benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub p: usize,
    pub d: usize,
    pub scenario: Scenario,
}

impl std::str::FromStr for BenchmarkCell {
    type Err = Error;

    /// Parses `P:D:S`, e.g. `20:2:A`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [p, d, scenario] = parts[..] else {
            return Err(Error::invalid(format!(
                "cell {s:?} is not of the form P:D:S"
            )));
        };
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("cell {s:?}: {e}")))
        };
        Ok(Self {
            p: parse(p)?,
            d: parse(d)?,
            scenario: scenario.parse()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub replications: usize,
    pub base_seed: u64,
    pub pipeline: PipelineOptions,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            replications: 100,
            base_seed: 0,
            pipeline: PipelineOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub changepoints: Vec<usize>,
    pub v_measure: f64,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub p: usize,
    pub d: usize,
    pub scenario: Scenario,
    pub replications: usize,
    /// Replications detecting exactly the true number of change-points.
    pub tnc_count: usize,
    /// Mean V-measure over all replications (failed ones count as zero).
    pub mean_vm: f64,
    /// Mean absolute location error over replications with the true count.
    pub localization: Option<f64>,
    pub failures: usize,
    pub runs: Vec<ReplicationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub base_seed: u64,
    pub rows: Vec<BenchmarkRow>,
}

/// Seed of replication `index` of `cell`.
pub fn replication_seed(base_seed: u64, cell: &BenchmarkCell, index: usize) -> u64 {
    seed::derive(
        base_seed,
        &[
            cell.p as u64,
            cell.d as u64,
            cell.scenario as u64,
            index as u64,
        ],
    )
}

/// Generate, detect and score a single replication.
pub fn run_replication(
    cell: &BenchmarkCell,
    index: usize,
    base_seed: u64,
    pipeline: &PipelineOptions,
) -> ReplicationRecord {
    let seed = replication_seed(base_seed, cell, index);
    let spec = SyntheticSpec::benchmark(cell.p, cell.d, cell.scenario, seed);
    let outcome = generate(&spec).and_then(|(x, truth)| {
        let opts = PipelineOptions {
            seed,
            ..pipeline.clone()
        };
        let out = run_pipeline(&x, Some(cell.d), None, Stopping::Auto, &opts)?;
        let predicted = labels_from_changepoints(&out.segmentation.changepoints, x.len())?;
        let vm = v_measure(&truth.labels, &predicted)?;
        Ok((out, vm))
    });
    match outcome {
        Ok((out, vm)) => ReplicationRecord {
            index,
            seed,
            changepoints: out.segmentation.changepoints,
            v_measure: vm,
            lambda: Some(out.lambda),
            mu: out.mu,
            error: None,
        },
        Err(e) => ReplicationRecord {
            index,
            seed,
            changepoints: Vec::new(),
            v_measure: 0.0,
            lambda: None,
            mu: None,
            error: Some(e.to_string()),
        },
    }
}

/// Aggregate replication records of one cell against the true change-points.
pub fn summarize(
    cell: &BenchmarkCell,
    truth: &[usize],
    runs: Vec<ReplicationRecord>,
) -> BenchmarkRow {
    let replications = runs.len();
    let failures = runs.iter().filter(|r| r.error.is_some()).count();
    let correct: Vec<&ReplicationRecord> = runs
        .iter()
        .filter(|r| r.error.is_none() && r.changepoints.len() == truth.len())
        .collect();
    let localization = (!correct.is_empty() && !truth.is_empty()).then(|| {
        let total: f64 = correct
            .iter()
            .map(|r| {
                r.changepoints
                    .iter()
                    .zip(truth)
                    .map(|(&a, &b)| a.abs_diff(b) as f64)
                    .sum::<f64>()
                    / truth.len() as f64
            })
            .sum();
        total / correct.len() as f64
    });
    let mean_vm = if replications == 0 {
        0.0
    } else {
        runs.iter().map(|r| r.v_measure).sum::<f64>() / replications as f64
    };
    BenchmarkRow {
        p: cell.p,
        d: cell.d,
        scenario: cell.scenario,
        replications,
        tnc_count: correct.len(),
        mean_vm,
        localization,
        failures,
        runs,
    }
}

/// `(p, d)` pairs of the standard benchmark grid.
pub const STANDARD_DIMS: [(usize, usize); 9] = [
    (20, 2),
    (20, 4),
    (20, 6),
    (50, 4),
    (50, 7),
    (50, 10),
    (100, 5),
    (100, 10),
    (100, 15),
];

/// Every standard `(p, d)` pair crossed with `scenarios`.
pub fn standard_cells(scenarios: &[Scenario]) -> Vec<BenchmarkCell> {
    STANDARD_DIMS
        .iter()
        .flat_map(|&(p, d)| {
            scenarios
                .iter()
                .map(move |&scenario| BenchmarkCell { p, d, scenario })
        })
        .collect()
}

impl BenchmarkReport {
    /// One row per `(p, d)`, TNC and mean VM columns per scenario.
    pub fn table_csv(&self) -> Result<Vec<u8>> {
        let mut dims: Vec<(usize, usize)> = Vec::new();
        let mut scenarios: Vec<Scenario> = Vec::new();
        for row in &self.rows {
            if !dims.contains(&(row.p, row.d)) {
                dims.push((row.p, row.d));
            }
            if !scenarios.contains(&row.scenario) {
                scenarios.push(row.scenario);
            }
        }
        scenarios.sort();

        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["p".to_string(), "d".to_string(), "replications".to_string()];
        for s in &scenarios {
            header.push(format!("{s}_tnc"));
            header.push(format!("{s}_vm"));
        }
        wtr.write_record(&header)?;
        for (p, d) in dims {
            let cells: Vec<Option<&BenchmarkRow>> = scenarios
                .iter()
                .map(|&s| {
                    self.rows
                        .iter()
                        .find(|r| r.p == p && r.d == d && r.scenario == s)
                })
                .collect();
            let reps = cells
                .iter()
                .flatten()
                .map(|r| r.replications)
                .max()
                .unwrap_or(0);
            let mut record = vec![p.to_string(), d.to_string(), reps.to_string()];
            for cell in cells {
                match cell {
                    Some(r) => {
                        record.push(r.tnc_count.to_string());
                        record.push(format!("{:?}", r.mean_vm));
                    }
                    None => record.extend([String::new(), String::new()]),
                }
            }
            wtr.write_record(&record)?;
        }
        wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Run every cell for `options.replications` replications.
pub fn run_benchmark(
    cells: &[BenchmarkCell],
    options: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    if options.replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    for cell in cells {
        SyntheticSpec::benchmark(cell.p, cell.d, cell.scenario, 0).validate()?;
    }
    let rows = cells
        .iter()
        .map(|cell| {
            let truth = SyntheticSpec::benchmark(cell.p, cell.d, cell.scenario, 0).changepoints;
            let runs: Vec<ReplicationRecord> = (0..options.replications)
                .into_par_iter()
                .map(|i| run_replication(cell, i, options.base_seed, &options.pipeline))
                .collect();
            summarize(cell, &truth, runs)
        })
        .collect();
    Ok(BenchmarkReport {
        base_seed: options.base_seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_examples() {
        assert_eq!(labels_from_changepoints(&[], 4).unwrap(), vec![0, 0, 0, 0]);
        assert_eq!(labels_from_changepoints(&[2], 4).unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(
            labels_from_changepoints(&[1, 3], 4).unwrap(),
            vec![0, 1, 1, 2]
        );
        assert!(labels_from_changepoints(&[3, 1], 4).is_err());
        assert!(labels_from_changepoints(&[4], 4).is_err());
        assert!(labels_from_changepoints(&[0], 4).is_err());
    }

    #[test]
    fn v_measure_examples() {
        assert_eq!(v_measure(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(v_measure(&[0, 0, 1, 1], &[5, 5, 9, 9]).unwrap(), 1.0);

        let s = v_measure_scores(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!(s.homogeneity, 0.0);
        assert_eq!(s.v_measure, 0.0);

        let s = v_measure_scores(&[0, 0, 1, 1], &[0, 1, 2, 3]).unwrap();
        assert!((s.homogeneity - 1.0).abs() < 1e-12);
        assert!((s.completeness - 0.5).abs() < 1e-12);
        assert!((s.v_measure - 2.0 / 3.0).abs() < 1e-12);

        assert_eq!(v_measure(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert!(v_measure(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn table_layout() {
        let row = |p, d, scenario, tnc| BenchmarkRow {
            p,
            d,
            scenario,
            replications: 10,
            tnc_count: tnc,
            mean_vm: 0.5,
            localization: None,
            failures: 0,
            runs: Vec::new(),
        };
        let report = BenchmarkReport {
            base_seed: 0,
            rows: vec![
                row(20, 2, Scenario::C, 7),
                row(20, 2, Scenario::A, 9),
                row(50, 4, Scenario::A, 10),
            ],
        };
        let text = String::from_utf8(report.table_csv().unwrap()).unwrap();
        assert_eq!(
            text,
            "p,d,replications,A_tnc,A_vm,C_tnc,C_vm\n20,2,10,9,0.5,7,0.5\n50,4,10,10,0.5,,\n"
        );
        assert_eq!(standard_cells(&[Scenario::A, Scenario::B]).len(), 18);
    }

    #[test]
    fn cell_parsing() {
        let c: BenchmarkCell = "50:4:B".parse().unwrap();
        assert_eq!((c.p, c.d, c.scenario), (50, 4, Scenario::B));
        assert!("50:4".parse::<BenchmarkCell>().is_err());
        assert!("50:4:Z".parse::<BenchmarkCell>().is_err());
    }

    #[test]
    fn summary_counts() {
        let cell = BenchmarkCell {
            p: 20,
            d: 2,
            scenario: Scenario::A,
        };
        let rec = |cps: Vec<usize>, vm: f64| ReplicationRecord {
            index: 0,
            seed: 0,
            changepoints: cps,
            v_measure: vm,
            lambda: None,
            mu: None,
            error: None,
        };
        let row = summarize(
            &cell,
            &[100, 200],
            vec![
                rec(vec![101, 200], 0.9),
                rec(vec![100], 0.5),
                rec(vec![99, 203], 0.7),
            ],
        );
        assert_eq!(row.tnc_count, 2);
        assert!((row.mean_vm - 0.7).abs() < 1e-12);
        assert!((row.localization.unwrap() - 1.25).abs() < 1e-12);
    }
}
