//! Input data: CSV ingestion with min-max normalization, client sampling
//! and synthetic generators on `[-1, 1]`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numeric columns mapped affinely onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub column_names: Vec<String>,
    /// Normalized values, one vector per column, all of equal length.
    pub columns: Vec<Vec<f64>>,
    /// Original `(min, max)` of each column.
    pub normalization: Vec<(f64, f64)>,
    /// Rows skipped because a selected column was missing.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0 || self.columns.is_empty()
    }

    /// Factor that converts an error on the normalized scale of `column`
    /// back to original units.
    pub fn scale(&self, column: usize) -> f64 {
        let (lo, hi) = self.normalization[column];
        (hi - lo) / 2.0
    }

    /// Every normalized value of every column.
    pub fn all_values(&self) -> Vec<f64> {
        self.columns.iter().flatten().copied().collect()
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim().to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null" | "?")
}

/// Reads the named columns of a headed CSV file. Rows with a missing value
/// in any selected column are dropped; anything else that fails to parse
/// is an error.
pub fn ingest_csv(path: impl AsRef<Path>, columns: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let columns: Vec<String> = if columns.is_empty() {
        headers.iter().map(str::to_string).collect()
    } else {
        columns.to_vec()
    };
    let positions = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h.trim() == c)
                .ok_or_else(|| Error::Data(format!("{}: no column named {c:?}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut raw = vec![Vec::new(); columns.len()];
    let mut dropped = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let fields: Vec<&str> = positions.iter().map(|&p| record.get(p).unwrap_or("")).collect();
        if fields.iter().any(|f| is_missing(f)) {
            dropped += 1;
            continue;
        }
        for (k, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: column {:?} row {} is not numeric: {f:?}",
                    path.display(),
                    columns[k],
                    line + 1
                ))
            })?;
            raw[k].push(v);
        }
    }
    if raw.first().map_or(true, Vec::is_empty) {
        return Err(Error::Data(format!("{}: no complete rows", path.display())));
    }
    let mut normalization = Vec::with_capacity(raw.len());
    let mut normalized = Vec::with_capacity(raw.len());
    for (name, col) in columns.iter().zip(raw) {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::Data(format!("column {name:?} has zero range")));
        }
        normalized.push(
            col.iter()
                .map(|v| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
                .collect(),
        );
        normalization.push((lo, hi));
    }
    Ok(Dataset {
        name: path
            .file_stem()
            .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned()),
        column_names: columns,
        columns: normalized,
        normalization,
        dropped_rows: dropped,
    })
}

/// `m` client values: each client takes a uniformly random row and, within
/// it, a uniformly random column.
pub fn sample_clients<R: Rng + ?Sized>(dataset: &Dataset, m: usize, rng: &mut R) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot sample from an empty dataset".into()));
    }
    let rows = dataset.rows();
    let cols = dataset.columns.len();
    Ok((0..m)
        .map(|_| {
            let r = rng.gen_range(0..rows);
            let c = if cols == 1 { 0 } else { rng.gen_range(0..cols) };
            dataset.columns[c][r]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticDist {
    Uniform,
    /// Normal restricted to `[-1, 1]` by rejection.
    TruncatedGaussian { mu: f64, sigma: f64 },
    /// Equal mixture of truncated normals at `-center` and `center`.
    Bimodal { center: f64, sigma: f64 },
}

impl SyntheticDist {
    pub fn bimodal() -> Self {
        SyntheticDist::Bimodal { center: 0.5, sigma: 0.15 }
    }

    pub fn label(&self) -> String {
        match self {
            SyntheticDist::Uniform => "uniform".into(),
            SyntheticDist::TruncatedGaussian { mu, sigma } => format!("truncated-gaussian({mu},{sigma})"),
            SyntheticDist::Bimodal { center, sigma } => format!("bimodal({center},{sigma})"),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SyntheticDist::Uniform => true,
            SyntheticDist::TruncatedGaussian { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
            SyntheticDist::Bimodal { center, sigma } => {
                center.is_finite() && sigma > 0.0 && sigma.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameters(format!("bad synthetic distribution {self:?}")))
        }
    }
}

/// Draws from `N(mu, sigma)` until a value lands in `[-1, 1]`.
fn truncated_normal<R: Rng + ?Sized>(normal: &Normal<f64>, rng: &mut R) -> Result<f64> {
    for _ in 0..1_000_000 {
        let v = normal.sample(rng);
        if (-1.0..=1.0).contains(&v) {
            return Ok(v);
        }
    }
    Err(Error::InvalidParameters(
        "truncated normal has negligible mass on [-1, 1]".into(),
    ))
}

/// `m` independent draws on `[-1, 1]`.
pub fn synthetic<R: Rng + ?Sized>(dist: SyntheticDist, m: usize, rng: &mut R) -> Result<Vec<f64>> {
    dist.validate()?;
    let normal = |mu: f64, sigma: f64| Normal::new(mu, sigma).map_err(|e| Error::InvalidParameters(e.to_string()));
    match dist {
        SyntheticDist::Uniform => Ok((0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect()),
        SyntheticDist::TruncatedGaussian { mu, sigma } => {
            let n = normal(mu, sigma)?;
            (0..m).map(|_| truncated_normal(&n, rng)).collect()
        }
        SyntheticDist::Bimodal { center, sigma } => {
            let left = normal(-center, sigma)?;
            let right = normal(center, sigma)?;
            (0..m)
                .map(|_| truncated_normal(if rng.gen::<bool>() { &right } else { &left }, rng))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn min_max_normalization() {
        let f = csv_file("a,b\n0,1\n5,2\n10,3\n");
        let ds = ingest_csv(f.path(), &["a".to_string()]).unwrap();
        assert_eq!(ds.columns[0], vec![-1.0, 0.0, 1.0]);
        assert_eq!(ds.normalization[0], (0.0, 10.0));
        assert_eq!(ds.scale(0), 5.0);
    }

    #[test]
    fn missing_rows_are_dropped_and_counted() {
        let f = csv_file("a,b\n0,1\n,2\n10,3\n");
        let ds = ingest_csv(f.path(), &["a".to_string(), "b".to_string()]).unwrap();
        assert_eq!(ds.dropped_rows, 1);
        assert_eq!(ds.rows(), 2);
    }

    #[test]
    fn bad_columns_are_errors() {
        let f = csv_file("a,b\n1,x\n2,3\n");
        assert!(ingest_csv(f.path(), &["b".to_string()]).is_err());
        let f = csv_file("a\n4\n4\n");
        let err = ingest_csv(f.path(), &["a".to_string()]).unwrap_err();
        assert!(err.to_string().contains("zero range"));
        assert!(ingest_csv("/nonexistent/file.csv", &[]).is_err());
    }

    #[test]
    fn column_choice_is_balanced() {
        let ds = Dataset {
            name: "t".into(),
            column_names: vec!["a".into(), "b".into()],
            columns: vec![vec![-1.0; 10], vec![1.0; 10]],
            normalization: vec![(0.0, 1.0); 2],
            dropped_rows: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 1_000_000;
        let xs = sample_clients(&ds, m, &mut rng).unwrap();
        let share = xs.iter().filter(|&&x| x > 0.0).count() as f64 / m as f64;
        assert!((share - 0.5).abs() < 0.002);
        let mut again = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(xs, sample_clients(&ds, m, &mut again).unwrap());
    }

    #[test]
    fn synthetic_draws_stay_in_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs = synthetic(SyntheticDist::Uniform, 1_000_000, &mut rng).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.004);
        for dist in [
            SyntheticDist::TruncatedGaussian { mu: 0.3, sigma: 0.2 },
            SyntheticDist::bimodal(),
        ] {
            let xs = synthetic(dist, 10_000, &mut rng).unwrap();
            assert!(xs.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
        let a = synthetic(SyntheticDist::bimodal(), 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = synthetic(SyntheticDist::bimodal(), 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(synthetic(SyntheticDist::TruncatedGaussian { mu: 0.0, sigma: -1.0 }, 1, &mut rng).is_err());
    }
}
