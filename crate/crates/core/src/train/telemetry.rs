//! Per-epoch training telemetry and its CSV form.

use std::io::{self, Write};

pub const TELEMETRY_HEADER: &str =
    "epoch,layer,alpha_hill,spectral_norm,lr,grad_l2,train_loss,eval_acc,analysis_sec,epoch_sec";
pub const EPOCH_ROW_LAYER: &str = "_epoch_";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub epoch: usize,
    pub layer: String,
    /// `None` when the layer's spectrum could not be fitted.
    pub alpha_hill: Option<f64>,
    pub spectral_norm: Option<f64>,
    pub lr: f64,
    /// Mean L2 norm of the layer's gradient over the epoch's steps.
    pub grad_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Global base rate `η_t`.
    pub eta_t: f64,
    pub train_loss: f64,
    pub eval_acc: f64,
    pub analysis_sec: f64,
    pub epoch_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTelemetry {
    pub layers: Vec<LayerRow>,
    pub epochs: Vec<EpochRow>,
}

impl TrainTelemetry {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty() && self.epochs.is_empty()
    }

    pub fn rows_for_epoch(&self, epoch: usize) -> impl Iterator<Item = &LayerRow> {
        self.layers.iter().filter(move |r| r.epoch == epoch)
    }

    pub fn total_analysis_sec(&self) -> f64 {
        self.epochs.iter().map(|e| e.analysis_sec).sum()
    }

    pub fn total_epoch_sec(&self) -> f64 {
        self.epochs.iter().map(|e| e.epoch_sec).sum()
    }

    /// Spectral-analysis time as a percentage of total epoch time.
    pub fn analysis_overhead_pct(&self) -> f64 {
        let total = self.total_epoch_sec();
        if total > 0.0 {
            100.0 * self.total_analysis_sec() / total
        } else {
            0.0
        }
    }

    /// Writes the CSV. Wall-clock columns are left empty unless
    /// `include_timing`, which keeps the default output reproducible.
    pub fn write_csv<W: Write>(&self, mut out: W, include_timing: bool) -> io::Result<()> {
        writeln!(out, "{TELEMETRY_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            for r in self.rows_for_epoch(e.epoch) {
                writeln!(
                    out,
                    "{},{},{},{},{},{},,,,",
                    r.epoch,
                    r.layer,
                    opt(r.alpha_hill),
                    opt(r.spectral_norm),
                    r.lr,
                    r.grad_l2
                )?;
            }
            let (a, t) = if include_timing {
                (e.analysis_sec.to_string(), e.epoch_sec.to_string())
            } else {
                (String::new(), String::new())
            };
            writeln!(
                out,
                "{},{EPOCH_ROW_LAYER},,,{},,{},{},{a},{t}",
                e.epoch, e.eta_t, e.train_loss, e.eval_acc
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, include_timing: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, include_timing)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}
