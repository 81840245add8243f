//! Labelled datasets for the finite-sum classification objective.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CboError, Result};
use crate::rng::{Lane, SeedSpec, SHARED_PARTICLE};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    pub name: String,
    /// Generating direction for synthetic data.
    pub hidden_direction: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<u8>, name: impl Into<String>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(CboError::Empty("dataset has no rows".into()));
        }
        if features.ncols() == 0 {
            return Err(CboError::Dataset("dataset has no feature columns".into()));
        }
        if features.nrows() != labels.len() {
            return Err(CboError::Shape(format!("{} feature rows vs {} labels", features.nrows(), labels.len())));
        }
        if labels.iter().any(|&b| b > 1) {
            return Err(CboError::Dataset("labels must be 0 or 1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(CboError::Dataset("non-finite feature value".into()));
        }
        Ok(Self { features, labels, name: name.into(), hidden_direction: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.features.row(j)
    }

    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&j| self.labels[j]).collect();
        let mut out = Dataset::new(features, labels, name)?;
        out.hidden_direction = self.hidden_direction.clone();
        Ok(out)
    }

    /// Writes the dataset as CSV with feature columns `x1..xd` and a `label`
    /// column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim()).map(|s| format!("x{s}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, b) in self.features.rows().into_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(b.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Name("label".into())
    }
}

/// Reads a headed, comma-separated file. Every column other than the label
/// column must be numeric. Labels that are not all `0`/`1` are treated as
/// categories and mapped to 0 and 1 in lexicographic order.
pub fn load_dataset(path: &Path, label_column: &LabelColumn) -> Result<Dataset> {
    if !path.exists() {
        return Err(CboError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset file {} not found", path.display()),
        )));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = match label_column {
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Index(i) => return Err(CboError::Dataset(format!("label column {i} out of range"))),
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CboError::Dataset(format!("no column named {name:?}")))?,
    };
    let d = headers.len() - 1;
    let mut flat = Vec::new();
    let mut raw_labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(CboError::Dataset(format!("row {} has {} fields, expected {}", line + 1, record.len(), headers.len())));
        }
        for (c, field) in record.iter().enumerate() {
            if c == label_idx {
                raw_labels.push(field.to_string());
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| CboError::Dataset(format!("row {}, column {c}: non-numeric feature {field:?}", line + 1)))?;
                flat.push(v);
            }
        }
    }
    let labels = map_labels(&raw_labels)?;
    let m = labels.len();
    let features = Array2::from_shape_vec((m, d), flat).map_err(|e| CboError::Shape(e.to_string()))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(features, labels, name)
}

fn map_labels(raw: &[String]) -> Result<Vec<u8>> {
    let numeric: Option<Vec<u8>> = raw
        .iter()
        .map(|s| match s.parse::<f64>() {
            Ok(0.0) => Some(0),
            Ok(1.0) => Some(1),
            _ => None,
        })
        .collect();
    if let Some(labels) = numeric {
        return Ok(labels);
    }
    let classes: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    if classes.len() > 2 {
        return Err(CboError::Dataset(format!("expected a binary label, found {} classes", classes.len())));
    }
    let classes: Vec<&str> = classes.into_iter().collect();
    Ok(raw.iter().map(|s| if s == classes[0] { 0 } else { 1 }).collect())
}

/// Uniform random split into `train_size` and `M - train_size` instances,
/// each keeping the original row order.
pub fn split_dataset(dataset: &Dataset, train_size: usize, seed: SeedSpec) -> Result<(Dataset, Dataset)> {
    let m = dataset.len();
    if train_size == 0 || train_size >= m {
        return Err(CboError::Dataset(format!("train_size must lie in [1, {}), got {train_size}", m)));
    }
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = seed.at(SHARED_PARTICLE, 0, Lane::Split).rng();
    order.shuffle(&mut rng);
    let (train, test) = order.split_at_mut(train_size);
    train.sort_unstable();
    test.sort_unstable();
    Ok((
        dataset.select(train, format!("{}-train", dataset.name))?,
        dataset.select(test, format!("{}-test", dataset.name))?,
    ))
}

/// Features uniform on `[-1, 1]^d`; labels `1{w.a >= 0}` for a hidden unit
/// vector `w`, each flipped independently with probability `flip_prob`.
pub fn synthetic_dataset(m: usize, d: usize, flip_prob: f64, seed: SeedSpec) -> Result<Dataset> {
    if m == 0 || d == 0 {
        return Err(CboError::Dataset("synthetic dataset needs m, d >= 1".into()));
    }
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(CboError::Dataset(format!("flip probability {flip_prob} outside [0, 1]")));
    }
    let mut wrng = seed.at(SHARED_PARTICLE, 0, Lane::Synthetic).rng();
    let mut w: Vec<f64> = (0..d).map(|_| wrng.sample(StandardNormal)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);

    let mut features = Array2::zeros((m, d));
    let mut labels = Vec::with_capacity(m);
    for (j, mut row) in features.rows_mut().into_iter().enumerate() {
        let mut rng = seed.at(j as u64, 0, Lane::Synthetic).rng();
        for v in row.iter_mut() {
            *v = rng.random_range(-1.0..=1.0);
        }
        let score: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
        let clean = u8::from(score >= 0.0);
        let flip = rng.random::<f64>() < flip_prob;
        labels.push(if flip { 1 - clean } else { clean });
    }
    let mut out = Dataset::new(features, labels, "synthetic")?;
    out.hidden_direction = Some(w);
    Ok(out)
}

/// Fraction of instances with `1{x.a_j >= 0} == b_j`. The threshold matches
/// `sigmoid(x.a_j) >= 1/2`.
pub fn accuracy(x: &[f64], dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(CboError::Empty("accuracy on an empty dataset".into()));
    }
    if x.len() != dataset.dim() {
        return Err(CboError::Shape(format!("parameter length {} vs feature dim {}", x.len(), dataset.dim())));
    }
    let correct = dataset
        .features
        .rows()
        .into_iter()
        .zip(&dataset.labels)
        .filter(|(row, &b)| {
            let z: f64 = row.iter().zip(x).map(|(a, w)| a * w).sum();
            u8::from(z >= 0.0) == b
        })
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;
    use std::io::Write;

    fn seed(s: u64) -> SeedSpec {
        SeedSpec::new(s, StreamId::new(0, 0, 0, Lane::Split))
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_toy_file() {
        let f = write("a,b,label\n1.0,2.0,0\n3,4,1\n-1,0.5,1\n");
        let ds = load_dataset(f.path(), &LabelColumn::default()).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.labels(), &[0, 1, 1]);
        assert_eq!(ds.feature_row(1).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn categorical_labels_map_lexicographically() {
        let f = write("Class,area\nOsmancik,1\nCammeo,2\n");
        let ds = load_dataset(f.path(), &LabelColumn::Index(0)).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.dim(), 1);
    }

    #[test]
    fn three_classes_rejected() {
        let f = write("x,label\n1,a\n2,b\n3,c\n");
        assert!(matches!(load_dataset(f.path(), &LabelColumn::default()), Err(CboError::Dataset(_))));
    }

    #[test]
    fn non_numeric_feature_and_missing_file_rejected() {
        let f = write("x,label\nabc,1\n");
        assert!(load_dataset(f.path(), &LabelColumn::default()).is_err());
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/rice.csv"), &LabelColumn::default()),
            Err(CboError::Io(_))
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = synthetic_dataset(3810, 7, 0.0, seed(1)).unwrap();
        let (train, test) = split_dataset(&ds, 2857, seed(9)).unwrap();
        assert_eq!((train.len(), test.len()), (2857, 953));
        let (train2, test2) = split_dataset(&ds, 2857, seed(9)).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);

        let (_, single) = split_dataset(&ds, 3809, seed(9)).unwrap();
        assert_eq!(single.len(), 1);
        assert!(split_dataset(&ds, 0, seed(9)).is_err());
        assert!(split_dataset(&ds, 3810, seed(9)).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let features = Array2::from_shape_fn((20, 1), |(j, _)| j as f64);
        let ds = Dataset::new(features, vec![0; 20], "ids").unwrap();
        let (a, b) = split_dataset(&ds, 13, seed(3)).unwrap();
        let mut ids: Vec<f64> = a.features().iter().chain(b.features().iter()).copied().collect();
        ids.sort_by(f64::total_cmp);
        assert_eq!(ids, (0..20).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn separable_synthetic_is_perfectly_classified() {
        let ds = synthetic_dataset(500, 4, 0.0, seed(5)).unwrap();
        let w = ds.hidden_direction.clone().unwrap();
        assert_eq!(accuracy(&w, &ds).unwrap(), 1.0);
        let single = synthetic_dataset(1, 3, 0.0, seed(5)).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn flipped_synthetic_bayes_accuracy() {
        let ds = synthetic_dataset(10_000, 5, 0.1, seed(11)).unwrap();
        let w = ds.hidden_direction.clone().unwrap();
        let acc = accuracy(&w, &ds).unwrap();
        assert!((acc - 0.9).abs() <= 0.01, "{acc}");
    }

    #[test]
    fn zero_parameter_predicts_label_one() {
        let ds = synthetic_dataset(300, 3, 0.2, seed(2)).unwrap();
        let ones = ds.labels().iter().filter(|&&b| b == 1).count() as f64 / 300.0;
        assert_eq!(accuracy(&[0.0; 3], &ds).unwrap(), ones);
    }

    #[test]
    fn accuracy_matches_per_instance_loop() {
        let ds = synthetic_dataset(200, 3, 0.3, seed(4)).unwrap();
        let x = [0.3, -1.2, 0.7];
        let mut correct = 0;
        for j in 0..ds.len() {
            let a = ds.feature_row(j);
            let z = x[0] * a[0] + x[1] * a[1] + x[2] * a[2];
            let sig = 1.0 / (1.0 + (-z).exp());
            if (sig >= 0.5) == (ds.labels()[j] == 1) {
                correct += 1;
            }
        }
        assert_eq!(accuracy(&x, &ds).unwrap(), correct as f64 / 200.0);
    }
}
