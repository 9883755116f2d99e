//! Datasets: CSV loading and emission, synthetic Gaussian data, label
//! encodings and the straight-line input interpolation used when probing the
//! predictive distribution between two training points.
//!
//! CSV layout is one example per row, features first then labels, comma
//! separated, no quoting. An optional header row is detected by the first row
//! not parsing as numbers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand_distr::{Bernoulli, Distribution, StandardNormal};

use crate::rng::StreamKey;
use crate::{Error, Result};

/// Variance floor applied during per-feature standardization.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `|D| × n₀`
    pub inputs: Array2<f64>,
    /// `|D| × k`
    pub labels: Array2<f64>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != labels.nrows() {
            return Err(Error::Shape(format!(
                "{} input rows but {} label rows",
                inputs.nrows(),
                labels.nrows()
            )));
        }
        if inputs.ncols() == 0 || labels.ncols() == 0 {
            return Err(Error::Shape(
                "input and label dimensions must be positive".into(),
            ));
        }
        if inputs.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "dataset entries must be finite".into(),
            ));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.labels.ncols()
    }

    /// Rows `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
        }
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs.slice(s![..n, ..]).to_owned(),
            labels: self.labels.slice(s![..n, ..]).to_owned(),
        }
    }

    /// True when every label row is a single ±1 entry (binary regression mode).
    pub fn is_binary_regression(&self) -> bool {
        self.output_dim() == 1 && self.labels.iter().all(|&v| v == 1.0 || v == -1.0)
    }

    /// Writes the dataset in the CSV layout read by [`load_csv`]. Values are
    /// printed in shortest round-trip form, so re-loading is bit-exact.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (x, y) in self.inputs.rows().into_iter().zip(self.labels.rows()) {
            let fields: Vec<String> = x.iter().chain(y.iter()).map(|v| v.to_string()).collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads `path` as rows of `input_dim` features followed by `output_dim`
/// labels. With `normalize`, each feature column is standardized to zero mean
/// and unit variance over the file.
pub fn load_csv(
    path: impl AsRef<Path>,
    input_dim: usize,
    output_dim: usize,
    normalize: bool,
) -> Result<Dataset> {
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::InvalidArgument(
            "input_dim and output_dim must be positive".into(),
        ));
    }
    let width = input_dim + output_dim;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .quoting(false)
        .from_path(path)?;

    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = idx + 1;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, &str>> = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| f))
            .collect();
        if idx == 0 && parsed.iter().any(|p| p.is_err()) {
            // header row
            continue;
        }
        if record.len() != width {
            return Err(Error::Format {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for p in parsed {
            match p {
                Ok(v) if v.is_finite() => values.push(v),
                Ok(v) => {
                    return Err(Error::Parse {
                        line,
                        field: v.to_string(),
                    })
                }
                Err(f) => {
                    return Err(Error::Parse {
                        line,
                        field: f.to_string(),
                    })
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Format {
            line: 0,
            message: "no data rows".into(),
        });
    }
    let all = Array2::from_shape_vec((rows, width), values).expect("row widths checked");
    let mut inputs = all.slice(s![.., ..input_dim]).to_owned();
    let labels = all.slice(s![.., input_dim..]).to_owned();
    if normalize {
        standardize_columns(&mut inputs);
    }
    Dataset::new(inputs, labels)
}

/// Zero mean, unit (population) variance per column, with variance floored
/// at [`VARIANCE_FLOOR`].
pub fn standardize_columns(x: &mut Array2<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.max(VARIANCE_FLOOR).sqrt();
        col.mapv_inplace(|v| (v - mean) / sd);
    }
}

/// `count` i.i.d. standard-normal inputs in `input_dim` dimensions with fair
/// ±1 labels, drawn row by row from one seeded stream.
pub fn synth_gaussian(input_dim: usize, count: usize, seed: u64) -> Result<Dataset> {
    if input_dim == 0 || count == 0 {
        return Err(Error::InvalidArgument(
            "input_dim and count must be positive".into(),
        ));
    }
    let mut rng = StreamKey::new(seed).rng();
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let mut inputs = Array2::zeros((count, input_dim));
    let mut labels = Array2::zeros((count, 1));
    for i in 0..count {
        for j in 0..input_dim {
            inputs[[i, j]] = StandardNormal.sample(&mut rng);
        }
        labels[[i, 0]] = if coin.sample(&mut rng) { 1.0 } else { -1.0 };
    }
    Dataset::new(inputs, labels)
}

/// Standard-normal inputs with uniformly drawn class indices in `0..classes`.
pub fn synth_gaussian_classes(
    input_dim: usize,
    count: usize,
    classes: usize,
    seed: u64,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if input_dim == 0 || count == 0 || classes < 2 {
        return Err(Error::InvalidArgument(
            "need input_dim >= 1, count >= 1, classes >= 2".into(),
        ));
    }
    use rand::Rng;
    let mut rng = StreamKey::new(seed).rng();
    let mut inputs = Array2::zeros((count, input_dim));
    let mut cls = Vec::with_capacity(count);
    for i in 0..count {
        for j in 0..input_dim {
            inputs[[i, j]] = StandardNormal.sample(&mut rng);
        }
        cls.push(rng.gen_range(0..classes));
    }
    Ok((inputs, cls))
}

/// Binary classes as regression targets: class 0 → −1, class 1 → +1.
pub fn signed_labels(classes: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(
        (classes.len(), 1),
        |(i, _)| if classes[i] == 0 { -1.0 } else { 1.0 },
    )
}

/// One-hot rows with entries in {0, 1}; the cross-entropy encoding.
pub fn one_hot(classes: &[usize], k: usize) -> Array2<f64> {
    Array2::from_shape_fn(
        (classes.len(), k),
        |(i, c)| if classes[i] == c { 1.0 } else { 0.0 },
    )
}

/// One-hot rows shifted by `−1/k` so every target row sums to zero; the
/// multi-class squared-loss encoding.
pub fn centered_one_hot(classes: &[usize], k: usize) -> Array2<f64> {
    one_hot(classes, k) - 1.0 / k as f64
}

/// `α` values uniformly spaced on `[0, 1]`, inclusive.
pub fn alpha_grid(num_alphas: usize) -> Vec<f64> {
    (0..num_alphas)
        .map(|i| i as f64 / (num_alphas - 1) as f64)
        .collect()
}

/// Rows `α·x1 + (1−α)·x2` for `α` on [`alpha_grid`]; the first row is `x2`
/// and the last is `x1`.
pub fn interpolate_line(
    x1: ArrayView1<'_, f64>,
    x2: ArrayView1<'_, f64>,
    num_alphas: usize,
) -> Result<Array2<f64>> {
    if x1.len() != x2.len() {
        return Err(Error::Shape(format!(
            "endpoints have dimensions {} and {}",
            x1.len(),
            x2.len()
        )));
    }
    if num_alphas < 2 {
        return Err(Error::InvalidArgument("num_alphas must be >= 2".into()));
    }
    let mut out = Array2::zeros((num_alphas, x1.len()));
    for (mut row, a) in out.rows_mut().into_iter().zip(alpha_grid(num_alphas)) {
        let line: Array1<f64> = if a == 0.0 {
            x2.to_owned()
        } else if a == 1.0 {
            x1.to_owned()
        } else {
            &x1 * a + &x2 * (1.0 - a)
        };
        row.assign(&line);
    }
    Ok(out)
}
