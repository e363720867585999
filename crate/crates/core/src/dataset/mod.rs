//! Datasets: synthetic Gaussian blobs, IDX (MNIST) files, CSV export, and
//! IID / Dirichlet non-IID partitioning.

mod idx;
mod partition;

pub use idx::{load_idx, read_idx, write_idx, IdxError};
pub use partition::{
    assign, label_histogram, partition, Assignment, Partition, PartitionError, PartitionPlan,
};

use crate::model::Matrix;
use crate::seed::rng_from;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("features have {features} rows but there are {labels} labels")]
    RowMismatch { features: usize, labels: usize },
    #[error("label {label} at row {row} is not below num_classes {classes}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("num_classes must be at least 1")]
    NoClasses,
    #[error("invalid blob parameters: {0}")]
    BadBlobParams(&'static str),
}

/// Labeled examples. Row `i` of `features` has label `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DatasetError> {
        if num_classes == 0 {
            return Err(DatasetError::NoClasses);
        }
        if features.rows != labels.len() {
            return Err(DatasetError::RowMismatch {
                features: features.rows,
                labels: labels.len(),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(DatasetError::LabelOutOfRange {
                row,
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols
    }

    /// Copies the given rows (in the given order, repeats allowed).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let d = self.features.cols;
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(self.features.row(r));
        }
        Dataset {
            name: self.name.clone(),
            features: Matrix::new(rows.len(), d, data),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        label_histogram(&self.labels, self.num_classes)
    }

    /// Writes `f0..f{d-1},label` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[r].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> csv::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// `per_class` Gaussian samples (std `spread` per coordinate) around each of
/// `num_classes` centers placed evenly on a circle of radius 5 in the first
/// two coordinates. Rows are class-interleaved.
pub fn generate_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(DatasetError::BadBlobParams("counts must be at least 1"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(DatasetError::BadBlobParams("spread must be positive"));
    }
    const RADIUS: f64 = 5.0;
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / num_classes as f64;
            let mut c = vec![0.0; dim];
            c[0] = RADIUS * angle.cos();
            if dim > 1 {
                c[1] = RADIUS * angle.sin();
            }
            c
        })
        .collect();
    let noise = Normal::new(0.0, spread).expect("positive spread");
    let mut rng = rng_from(seed);
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for (k, center) in centers.iter().enumerate() {
            for &c in center {
                data.push(c + noise.sample(&mut rng));
            }
            labels.push(k);
        }
    }
    Dataset::new(
        format!("blobs{num_classes}x{per_class}"),
        Matrix::new(n, dim, data),
        labels,
        num_classes,
    )
}

/// Seeded three-way split into (train, validation, test) by fractions of the
/// total. Train gets the remainder.
pub fn split_train_val_test(
    data: &Dataset,
    validation_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> (Dataset, Dataset, Dataset) {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    let n_test = (test_fraction * n as f64).floor() as usize;
    let n_val = (validation_fraction * n as f64).floor() as usize;
    let test = data.subset(&order[..n_test]);
    let val = data.subset(&order[n_test..n_test + n_val]);
    let train = data.subset(&order[n_test + n_val..]);
    (train, val, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evaluate, init_model, mlp_shapes, train_local, TrainSpec};

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let a = generate_blobs(3, 100, 2, 0.5, 11).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.class_counts(), vec![100, 100, 100]);
        assert_eq!(a, generate_blobs(3, 100, 2, 0.5, 11).unwrap());
        assert!(generate_blobs(3, 0, 2, 0.5, 1).is_err());
        assert!(generate_blobs(3, 10, 2, 0.0, 1).is_err());
    }

    #[test]
    fn tight_blobs_are_learnable() {
        let data = generate_blobs(3, 100, 2, 0.1, 21).unwrap();
        let (train, _, test) = split_train_val_test(&data, 0.0, 0.2, 4);
        let model = init_model(&mlp_shapes(2, &[16], 3), 8).unwrap();
        let spec = TrainSpec {
            local_epochs: 20,
            batch_size: 16,
            learning_rate: 0.1,
            seed: 2,
        };
        let trained = train_local(&model, &train, &spec).unwrap();
        let acc = evaluate(&trained, &test).unwrap();
        assert!(acc >= 0.95, "{acc}");
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let err = Dataset::new("x", Matrix::zeros(2, 1), vec![0, 3], 3).unwrap_err();
        assert!(matches!(err, DatasetError::LabelOutOfRange { row: 1, .. }));
        assert!(Dataset::new("x", Matrix::zeros(2, 1), vec![0], 3).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let d = Dataset::new(
            "x",
            Matrix::new(2, 2, vec![0.5, 1.0, -2.0, 3.25]),
            vec![1, 0],
            2,
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "f0,f1,label\n0.5,1,1\n-2,3.25,0\n"
        );
    }

    #[test]
    fn split_covers_everything_once() {
        let data = generate_blobs(2, 50, 2, 1.0, 1).unwrap();
        let (tr, va, te) = split_train_val_test(&data, 0.1, 0.2, 9);
        assert_eq!((tr.len(), va.len(), te.len()), (70, 10, 20));
    }
}
