//! Flat `key=value` run configuration for training jobs.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Every key is listed in [`KEYS`] with its default. Unknown or repeated keys
//! are errors.

use std::path::PathBuf;

use thiserror::Error;

use crate::htsr::LambdaMinPolicy;
use crate::scheduler::{Assignment, Metric};
use crate::train::{Activation, ConvBlock, DataSource, InitScheme, TrainRun};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown key {key} (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("key {key} set twice (line {line})")]
    Duplicate { key: String, line: usize },
    #[error("invalid value {value:?} for key {key}: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
}

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "RNG seed for data, initialization and shuffling"),
    ("total_epochs", "200", "schedule length T used by cosine annealing"),
    ("epochs", "total_epochs", "epochs actually run (<= total_epochs)"),
    ("eta0", "0.1", "initial global learning rate"),
    ("s1", "0.5", "minimum learning-rate scaling ratio"),
    ("s2", "1.5", "maximum learning-rate scaling ratio"),
    ("assignment", "tempbalance", "tempbalance | sqrt | log2 | step | lars | global_only"),
    ("metric", "alpha_hill", "alpha_hill | spectral_norm | alpha_weighted"),
    ("start_epoch", "0", "epochs before this use the global rate only"),
    ("update_interval_iters", "epoch", "steps between scheduling boundaries, or `epoch`"),
    ("exclude_first_last", "true", "first and last layers ride the global rate"),
    ("lars_eps", "1e-8", "denominator floor of the LARS trust ratio"),
    ("policy", "median", "lambda_min policy: median | ks | fixfinger"),
    ("bins", "100", "histogram bins for the fixfinger policy"),
    ("lambda_sr", "0", "spectral-norm regularization strength"),
    ("momentum", "0.9", "SGD momentum"),
    ("weight_decay", "5e-4", "SGD weight decay"),
    ("batch_size", "128", "mini-batch size"),
    ("hidden", "64,64,32", "hidden widths of the dense stack"),
    ("activation", "relu", "relu | tanh"),
    ("init", "kaiming", "kaiming | xavier"),
    ("conv", "", "conv stem blocks OUTxINxKHxKW separated by `;` (empty: none)"),
    ("input_shape", "", "CxHxW of each example; required with a conv stem"),
    ("data", "gaussian", "gaussian | csv"),
    ("classes", "2", "gaussian: number of classes"),
    ("dims", "16", "gaussian: feature dimension"),
    ("samples", "1000", "gaussian: total examples"),
    ("separation", "3", "gaussian: norm of each class mean"),
    ("noise", "1", "gaussian: per-coordinate noise std"),
    ("csv_path", "", "csv: path to the data file"),
    ("label_column", "label", "csv: label column name (or index)"),
    ("csv_header", "true", "csv: whether the first row is a header"),
    ("train_frac", "0.8", "fraction of examples used for training"),
    ("telemetry_timing", "false", "write wall-clock columns into the telemetry CSV"),
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub run: TrainRun,
    pub telemetry_timing: bool,
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| invalid(key, value, e.to_string()))
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

fn dims_x(key: &str, value: &str, want: usize) -> Result<Vec<usize>, ConfigError> {
    let parts: Vec<usize> = value
        .split('x')
        .map(|p| num::<usize>(key, p.trim()))
        .collect::<Result<_, _>>()?;
    if parts.len() != want || parts.contains(&0) {
        return Err(invalid(key, value, format!("expected {want} positive sizes")));
    }
    Ok(parts)
}

pub fn parse_assignment(value: &str) -> Option<Assignment> {
    Some(match value {
        "tempbalance" | "tb" => Assignment::TempBalanceLinear,
        "sqrt" => Assignment::Sqrt,
        "log2" => Assignment::Log2,
        "step" => Assignment::Step,
        "lars" => Assignment::Lars,
        "global_only" | "cal" => Assignment::GlobalOnly,
        _ => return None,
    })
}

pub fn parse_metric(value: &str) -> Option<Metric> {
    Some(match value {
        "alpha_hill" => Metric::AlphaHill,
        "spectral_norm" => Metric::SpectralNorm,
        "alpha_weighted" => Metric::AlphaWeighted,
        _ => return None,
    })
}

/// Builds a policy from its name; `bins` only matters for fixfinger.
pub fn parse_policy(value: &str, bins: usize) -> Option<LambdaMinPolicy> {
    Some(match value {
        "median" => LambdaMinPolicy::Median,
        "ks" | "goodness_of_fit" => LambdaMinPolicy::GoodnessOfFit,
        "fixfinger" | "fix_finger" => LambdaMinPolicy::FixFinger {
            histogram_bins: bins,
        },
        _ => return None,
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            if !KEYS.iter().any(|(k, _, _)| *k == key) {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line,
                });
            }
            if pairs.iter().any(|(k, _, _)| k == key) {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    line,
                });
            }
            pairs.push((key.to_string(), value.trim().to_string(), line));
        }
        Self::from_pairs(pairs.iter().map(|(k, v, _)| (k.as_str(), v.as_str())))
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut epochs = None;
        let mut policy_name = "median".to_string();
        let mut bins = LambdaMinPolicy::DEFAULT_BINS;
        let mut data_kind = "gaussian".to_string();
        let (mut classes, mut dims, mut samples) = (2usize, 16usize, 1000usize);
        let (mut separation, mut noise) = (3.0f64, 1.0f64);
        let mut csv_path = String::new();
        let mut label_column = "label".to_string();
        let mut csv_header = true;

        let run = &mut cfg.run;
        for (key, value) in pairs {
            match key {
                "seed" => run.seed = num(key, value)?,
                "total_epochs" => run.schedule.total_epochs = num(key, value)?,
                "epochs" => epochs = Some(num(key, value)?),
                "eta0" => run.schedule.eta0 = num(key, value)?,
                "s1" => run.schedule.s1 = num(key, value)?,
                "s2" => run.schedule.s2 = num(key, value)?,
                "assignment" => {
                    run.schedule.assignment = parse_assignment(value)
                        .ok_or_else(|| invalid(key, value, "unknown assignment"))?
                }
                "metric" => {
                    run.schedule.metric =
                        parse_metric(value).ok_or_else(|| invalid(key, value, "unknown metric"))?
                }
                "start_epoch" => run.schedule.start_epoch = num(key, value)?,
                "update_interval_iters" => {
                    run.schedule.update_interval_iters = match value {
                        "epoch" | "" => None,
                        v => {
                            let n: usize = num(key, v)?;
                            if n == 0 {
                                return Err(invalid(key, value, "must be positive"));
                            }
                            Some(n)
                        }
                    }
                }
                "exclude_first_last" => run.schedule.exclude_first_last = boolean(key, value)?,
                "lars_eps" => run.schedule.lars_eps = num(key, value)?,
                "policy" => policy_name = value.to_string(),
                "bins" => bins = num(key, value)?,
                "lambda_sr" => run.lambda_sr = num(key, value)?,
                "momentum" => run.momentum = num(key, value)?,
                "weight_decay" => run.weight_decay = num(key, value)?,
                "batch_size" => run.batch_size = num(key, value)?,
                "hidden" => {
                    run.model.hidden = value
                        .split(',')
                        .map(|w| num::<usize>(key, w.trim()))
                        .collect::<Result<_, _>>()?;
                    if run.model.hidden.contains(&0) {
                        return Err(invalid(key, value, "widths must be positive"));
                    }
                }
                "activation" => {
                    run.model.activation = match value {
                        "relu" => Activation::Relu,
                        "tanh" => Activation::Tanh,
                        _ => return Err(invalid(key, value, "expected relu or tanh")),
                    }
                }
                "init" => {
                    run.model.init = match value {
                        "kaiming" => InitScheme::KaimingNormal,
                        "xavier" => InitScheme::XavierUniform,
                        _ => return Err(invalid(key, value, "expected kaiming or xavier")),
                    }
                }
                "conv" => {
                    run.model.conv = value
                        .split(';')
                        .map(str::trim)
                        .filter(|b| !b.is_empty())
                        .map(|b| {
                            let d = dims_x(key, b, 4)?;
                            Ok(ConvBlock {
                                out_channels: d[0],
                                in_channels: d[1],
                                kh: d[2],
                                kw: d[3],
                            })
                        })
                        .collect::<Result<_, ConfigError>>()?;
                }
                "input_shape" => {
                    run.model.input_shape = if value.is_empty() {
                        None
                    } else {
                        let d = dims_x(key, value, 3)?;
                        Some((d[0], d[1], d[2]))
                    }
                }
                "data" => data_kind = value.to_string(),
                "classes" => classes = num(key, value)?,
                "dims" => dims = num(key, value)?,
                "samples" => samples = num(key, value)?,
                "separation" => separation = num(key, value)?,
                "noise" => noise = num(key, value)?,
                "csv_path" => csv_path = value.to_string(),
                "label_column" => label_column = value.to_string(),
                "csv_header" => csv_header = boolean(key, value)?,
                "train_frac" => run.data.train_frac = num(key, value)?,
                "telemetry_timing" => cfg.telemetry_timing = boolean(key, value)?,
                other => {
                    return Err(ConfigError::UnknownKey {
                        key: other.to_string(),
                        line: 0,
                    })
                }
            }
        }

        let run = &mut cfg.run;
        run.epochs = epochs.unwrap_or(run.schedule.total_epochs);
        if bins < 2 {
            return Err(invalid("bins", &bins.to_string(), "need at least 2 bins"));
        }
        run.policy = parse_policy(&policy_name, bins)
            .ok_or_else(|| invalid("policy", &policy_name, "expected median, ks or fixfinger"))?;
        run.data.source = match data_kind.as_str() {
            "gaussian" => DataSource::GaussianMixture {
                classes,
                dims,
                samples,
                separation,
                noise,
            },
            "csv" => {
                if csv_path.is_empty() {
                    return Err(invalid("csv_path", "", "required when data=csv"));
                }
                DataSource::Csv {
                    path: PathBuf::from(csv_path),
                    label_column,
                    has_header: csv_header,
                }
            }
            other => return Err(invalid("data", other, "expected gaussian or csv")),
        };
        run.schedule
            .validate()
            .map_err(|e| invalid("schedule", "", e.to_string()))?;
        if run.epochs > run.schedule.total_epochs {
            return Err(invalid(
                "epochs",
                &run.epochs.to_string(),
                format!("exceeds total_epochs {}", run.schedule.total_epochs),
            ));
        }
        Ok(cfg)
    }

    /// Markdown table of every key with its default.
    pub fn key_reference() -> String {
        let mut out = String::from("| key | default | meaning |\n|---|---|---|\n");
        for (k, d, m) in KEYS {
            out.push_str(&format!("| `{k}` | `{d}` | {m} |\n"));
        }
        out
    }
}
