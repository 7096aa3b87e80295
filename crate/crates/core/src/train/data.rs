//! Desk-scale classification datasets with reproducible splits and shuffles.

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TrainError;

const DATA_STREAM: u64 = 1;
const SHUFFLE_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Isotropic Gaussian blobs around seeded class means of norm `separation`.
    GaussianMixture {
        classes: usize,
        dims: usize,
        samples: usize,
        separation: f64,
        noise: f64,
    },
    /// Numeric features with one label column; labels may be any strings.
    Csv {
        path: PathBuf,
        label_column: String,
        has_header: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub train_frac: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            source: DataSource::GaussianMixture {
                classes: 2,
                dims: 16,
                samples: 1000,
                separation: 3.0,
                noise: 1.0,
            },
            train_frac: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: usize,
    pub classes: usize,
    pub train_x: Vec<f64>,
    pub train_y: Vec<usize>,
    pub eval_x: Vec<f64>,
    pub eval_y: Vec<usize>,
}

impl Dataset {
    pub fn train_len(&self) -> usize {
        self.train_y.len()
    }

    /// Shuffled mini-batches of training indices for one epoch.
    pub fn batches(&self, epoch: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.train_len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SHUFFLE_STREAM_BASE + epoch as u64);
        order.shuffle(&mut rng);
        order
            .chunks(batch_size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.dims);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(&self.train_x[i * self.dims..][..self.dims]);
            y.push(self.train_y[i]);
        }
        (x, y)
    }
}

pub fn make_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset, TrainError> {
    if !(spec.train_frac > 0.0 && spec.train_frac < 1.0) {
        return Err(TrainError::Data(format!(
            "train_frac must be in (0, 1), got {}",
            spec.train_frac
        )));
    }
    let (dims, classes, x, y) = match &spec.source {
        DataSource::GaussianMixture {
            classes,
            dims,
            samples,
            separation,
            noise,
        } => gaussian_mixture(*classes, *dims, *samples, *separation, *noise, seed)?,
        DataSource::Csv {
            path,
            label_column,
            has_header,
        } => read_csv(path, label_column, *has_header)?,
    };

    let mut counts = vec![0usize; classes];
    for &label in &y {
        counts[label] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(TrainError::Data(format!("class {c} has no examples")));
    }

    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM + 1);
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * spec.train_frac).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(TrainError::Data(format!(
            "{n} examples cannot be split with train_frac {}",
            spec.train_frac
        )));
    }
    let pick = |ids: &[usize]| {
        let mut xs = Vec::with_capacity(ids.len() * dims);
        let mut ys = Vec::with_capacity(ids.len());
        for &i in ids {
            xs.extend_from_slice(&x[i * dims..][..dims]);
            ys.push(y[i]);
        }
        (xs, ys)
    };
    let (train_x, train_y) = pick(&order[..n_train]);
    let (eval_x, eval_y) = pick(&order[n_train..]);
    Ok(Dataset {
        dims,
        classes,
        train_x,
        train_y,
        eval_x,
        eval_y,
    })
}

type RawData = (usize, usize, Vec<f64>, Vec<usize>);

fn gaussian_mixture(
    classes: usize,
    dims: usize,
    samples: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<RawData, TrainError> {
    if classes < 2 || dims == 0 {
        return Err(TrainError::Data(format!(
            "need at least 2 classes and 1 dim, got {classes} classes, {dims} dims"
        )));
    }
    if samples < classes {
        return Err(TrainError::Data(format!(
            "{samples} samples leave some of the {classes} classes empty"
        )));
    }
    if !(noise >= 0.0 && separation > 0.0) {
        return Err(TrainError::Data(format!(
            "noise must be >= 0 and separation > 0 (got {noise}, {separation})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|a| separation * a / norm).collect()
        })
        .collect();
    let mut x = Vec::with_capacity(samples * dims);
    let mut y = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % classes;
        for mean in &means[c] {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.push(mean + noise * z);
        }
        y.push(c);
    }
    Ok((dims, classes, x, y))
}

fn read_csv(
    path: &std::path::Path,
    label_column: &str,
    has_header: bool,
) -> Result<RawData, TrainError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;

    let label_idx = if has_header {
        let headers = reader
            .headers()
            .map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
        match headers.iter().position(|h| h == label_column) {
            Some(i) => i,
            None => label_column.parse::<usize>().map_err(|_| {
                TrainError::Data(format!("label column {label_column:?} not in header"))
            })?,
        }
    } else {
        label_column.parse::<usize>().map_err(|_| {
            TrainError::Data(format!(
                "label column must be an index without a header, got {label_column:?}"
            ))
        })?
    };

    let mut width = None;
    let mut x = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // 1-based data row, not counting the header
        let row = i + 1;
        let record = record.map_err(|e| TrainError::Data(format!("row {row}: {e}")))?;
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(TrainError::Data(format!(
                "row {row}: expected {w} fields, found {}",
                record.len()
            )));
        }
        if label_idx >= w {
            return Err(TrainError::Data(format!(
                "label column {label_idx} out of range for {w} fields"
            )));
        }
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                if field.is_empty() {
                    return Err(TrainError::Data(format!("row {row}: missing label")));
                }
                raw_labels.push(field.to_string());
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    TrainError::Data(format!("row {row}, column {j}: not a number: {field:?}"))
                })?;
                x.push(v);
            }
        }
    }
    let width = width.ok_or_else(|| TrainError::Data("CSV has no data rows".into()))?;
    let dims = width - 1;
    if dims == 0 {
        return Err(TrainError::Data("CSV has no feature columns".into()));
    }
    let classes: Vec<&String> = raw_labels.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(TrainError::Data(format!(
            "need at least 2 classes, found {}",
            classes.len()
        )));
    }
    let y = raw_labels
        .iter()
        .map(|l| classes.binary_search(&l).expect("label present"))
        .collect();
    Ok((dims, classes.len(), x, y))
}
