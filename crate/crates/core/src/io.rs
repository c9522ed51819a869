//! File formats: CSV series (one row per time point), JSON documents, atomic writes.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeriesMatrix;
use crate::simulation::{GroundTruth, Scenario, SyntheticSpec};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub has_header: bool,
    /// 0-based index of a column to drop (e.g. a timestamp).
    pub time_column: Option<usize>,
}

/// Read a rectangular numeric CSV with rows as time points into a `p × n` series.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<TimeSeriesMatrix> {
    let file = File::open(path.as_ref())?;
    read_csv(file, options)
}

pub fn read_csv<R: std::io::Read>(reader: R, options: &CsvOptions) -> Result<TimeSeriesMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for record in rdr.records() {
        let record = record?;
        let line = record
            .position()
            .map_or(rows.len() + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    row: line,
                    column: record.len(),
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            if options.time_column == Some(j) {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line,
                column: j + 1,
                message: format!("{field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("{field:?} is not finite"),
                });
            }
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::invalid("no numeric data in CSV input"));
    }
    TimeSeriesMatrix::from_observations(&rows)
}

/// Centre each variable and scale it to unit sample standard deviation.
/// Constant variables are only centred; their indices are returned.
pub fn standardize(x: &TimeSeriesMatrix) -> Result<(TimeSeriesMatrix, Vec<usize>)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid(
            "standardising needs at least two time points",
        ));
    }
    let mut values = x.values().clone();
    let mut constant = Vec::new();
    for (r, mut row) in values.row_iter_mut().enumerate() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
        let sd = (row.norm_squared() / (n as f64 - 1.0)).sqrt();
        if sd <= 1e-14 * mean.abs().max(1.0) {
            log::warn!("variable {r} is constant; centred but not scaled");
            row.fill(0.0);
            constant.push(r);
        } else {
            row /= sd;
        }
    }
    Ok((TimeSeriesMatrix::new(values)?, constant))
}

/// Write `bytes` to a temporary file next to `path` and rename it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Serialise a series as CSV, one row per time point, with round-trip precision.
pub fn matrix_to_csv(x: &DMatrix<f64>) -> Result<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    for col in x.column_iter() {
        wtr.write_record(col.iter().map(|v| format!("{v:?}")))?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Ground-truth file written next to a simulated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub changepoints: Vec<usize>,
    pub delta: f64,
    pub scenario: Scenario,
    pub sigma: f64,
    pub seed: u64,
    pub labels: Vec<usize>,
}

impl TruthDocument {
    pub fn new(spec: &SyntheticSpec, truth: &GroundTruth) -> Self {
        Self {
            n: spec.n,
            p: spec.p,
            d: spec.d,
            changepoints: truth.changepoints.clone(),
            delta: spec.delta,
            scenario: spec.scenario,
            sigma: truth.sigma,
            seed: spec.seed,
            labels: truth.labels.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, options: &CsvOptions) -> Result<TimeSeriesMatrix> {
        read_csv(text.as_bytes(), options)
    }

    #[test]
    fn rows_are_time_points() {
        let x = parse("1,2\n3,4\n5,6\n", &CsvOptions::default()).unwrap();
        assert_eq!((x.dim(), x.len()), (2, 3));
        assert_eq!(x.values()[(0, 2)], 5.0);
    }

    #[test]
    fn header_and_time_column_dropped() {
        let opts = CsvOptions {
            has_header: true,
            time_column: Some(0),
        };
        let x = parse("t,a,b\n0.0,1,2\n0.1,3,4\n", &opts).unwrap();
        assert_eq!((x.dim(), x.len()), (2, 2));
        assert_eq!(x.values()[(1, 1)], 4.0);
    }

    #[test]
    fn bad_cell_names_its_position() {
        let err = parse("1,2\n1,2\n1,2\n1,2\n1,abc\n", &CsvOptions::default()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (5, 2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ragged_and_empty_inputs_fail() {
        assert!(matches!(
            parse("1,2\n3\n", &CsvOptions::default()),
            Err(Error::Parse { row: 2, .. })
        ));
        assert!(parse("", &CsvOptions::default()).is_err());
        assert!(parse("nan,1\n", &CsvOptions::default()).is_err());
    }

    #[test]
    fn standardize_examples() {
        let x =
            TimeSeriesMatrix::from_observations(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]])
                .unwrap();
        let (z, constant) = standardize(&x).unwrap();
        assert_eq!(constant, vec![1]);
        let row: Vec<f64> = z.values().row(0).iter().copied().collect();
        for (a, b) in row.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(z.values().row(1).iter().all(|&v| v == 0.0));

        let (again, _) = standardize(&z).unwrap();
        assert!((again.values() - z.values()).abs().max() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = DMatrix::from_fn(3, 4, |r, c| (r as f64 + 0.1).powf(c as f64 + 0.3) / 7.0);
        let bytes = matrix_to_csv(&m).unwrap();
        let back = read_csv(bytes.as_slice(), &CsvOptions::default()).unwrap();
        assert_eq!(back.values(), &m);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
    }
}
