use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_csv, render_csv, write_once, Provenance};
use crate::rng::RngState;

/// A finite collection of joint states `u = (f, g)`, one per row:
/// the first `dim_f` columns hold `f`, the remaining `dim_g` hold `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim_f: usize,
    dim_g: usize,
    points: Array2<f64>,
    pub label: String,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(dim_f: usize, dim_g: usize, points: Array2<f64>, label: impl Into<String>, seed: u64) -> Result<Self> {
        if dim_f == 0 || dim_g == 0 {
            return Err(Error::InvalidArgument("field dimensions must be positive".into()));
        }
        if points.ncols() != dim_f + dim_g {
            return Err(Error::ShapeMismatch(format!(
                "sample rows have {} columns, expected {}",
                points.ncols(),
                dim_f + dim_g
            )));
        }
        Ok(Self {
            dim_f,
            dim_g,
            points: points.as_standard_layout().into_owned(),
            label: label.into(),
            seed,
        })
    }

    pub fn from_fields(f: ArrayView2<f64>, g: ArrayView2<f64>, label: impl Into<String>, seed: u64) -> Result<Self> {
        let points = ndarray::concatenate(Axis(1), &[f, g]).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(f.ncols(), g.ncols(), points, label, seed)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim_f + self.dim_g
    }

    pub fn dim_f(&self) -> usize {
        self.dim_f
    }

    pub fn dim_g(&self) -> usize {
        self.dim_g
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn f(&self) -> ArrayView2<'_, f64> {
        self.points.slice(s![.., ..self.dim_f])
    }

    pub fn g(&self) -> ArrayView2<'_, f64> {
        self.points.slice(s![.., self.dim_f..])
    }

    pub fn count_non_finite(&self) -> usize {
        self.points
            .rows()
            .into_iter()
            .filter(|r| r.iter().any(|x| !x.is_finite()))
            .count()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            dim_f: self.dim_f,
            dim_g: self.dim_g,
            points: self.points.select(Axis(0), indices),
            label: self.label.clone(),
            seed: self.seed,
        }
    }

    /// `k` rows chosen without replacement, in a seed-determined order.
    /// Sets of equal length subsampled with the same seed keep the same row indices.
    pub fn subsample(&self, k: usize, seed: u64) -> Self {
        if k >= self.len() {
            return self.clone();
        }
        self.select(&subsample_indices(self.len(), k, seed))
    }

    pub fn column_means(&self) -> Vec<f64> {
        self.points.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
    }

    fn column_names(&self) -> Vec<String> {
        let name = |p: &str, d: usize, i: usize| if d == 1 { p.to_owned() } else { format!("{p}{i}") };
        (0..self.dim_f)
            .map(|i| name("f", self.dim_f, i))
            .chain((0..self.dim_g).map(|i| name("g", self.dim_g, i)))
            .collect()
    }

    pub fn to_csv(&self, provenance: &Provenance) -> Result<Vec<u8>> {
        let names = self.column_names();
        let header: Vec<&str> = names.iter().map(String::as_str).collect();
        let prov = Provenance::new()
            .with("label", &self.label)
            .with("seed", self.seed)
            .extend(provenance);
        render_csv(
            &prov,
            &header,
            self.points
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>()),
        )
    }

    pub fn write_csv(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        write_once(path, &self.to_csv(provenance)?)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let doc = read_csv(path)?;
        let dim_f = doc.header.iter().filter(|h| h.starts_with('f')).count();
        let dim_g = doc.header.iter().filter(|h| h.starts_with('g')).count();
        if dim_f == 0 || dim_g == 0 || dim_f + dim_g != doc.header.len() {
            return Err(doc.parse_error(1, format!("unexpected sample header {:?}", doc.header)));
        }
        if doc.rows.is_empty() {
            return Err(doc.parse_error(1, "no samples"));
        }
        let mut data = Vec::with_capacity(doc.rows.len() * (dim_f + dim_g));
        for (line, row) in &doc.rows {
            if row.len() != dim_f + dim_g {
                return Err(doc.parse_error(*line, format!("expected {} fields, got {}", dim_f + dim_g, row.len())));
            }
            for field in row {
                data.push(doc.parse_f64(*line, field)?);
            }
        }
        let label = doc.provenance.get("label").unwrap_or_default().to_owned();
        let seed = doc.provenance.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
        let points = Array2::from_shape_vec((doc.rows.len(), dim_f + dim_g), data)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(dim_f, dim_g, points, label, seed)
    }
}

pub fn subsample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = RngState::new(seed);
    // partial Fisher–Yates: the first k slots are a uniform k-subset
    for i in 0..k.min(n) {
        let j = i + rng.index(n - i);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = SampleSet::new(1, 1, array![[0.1, -2.0], [1e-9, 3.25]], "demo", 9).unwrap();
        s.write_csv(&path, &Provenance::new().with("paradigm", "gencp"))
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\nf,g\n"));
        let back = SampleSet::read_csv(&path).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "# x=1\nf,g\n1,2\n3,oops\n").unwrap();
        match SampleSet::read_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subsample_is_deterministic_and_shared() {
        let a = subsample_indices(100, 10, 3);
        assert_eq!(a, subsample_indices(100, 10, 3));
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(SampleSet::new(1, 1, Array2::zeros((3, 3)), "x", 0).is_err());
        assert!(SampleSet::new(0, 2, Array2::zeros((3, 2)), "x", 0).is_err());
    }
}
