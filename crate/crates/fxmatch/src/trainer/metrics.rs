//! Tabular training metrics with a fixed CSV schema.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One logged aggregate. Unused columns stay empty in the CSV so VAE and
/// end-to-end runs share one schema.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: usize,
    pub split: Split,
    pub loss: f64,
    pub recon: Option<f64>,
    pub kl: Option<f64>,
    pub kl_weight: Option<f64>,
    pub mrstft: Option<f64>,
    pub mae: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,split,loss,recon,kl,kl_weight,mrstft,mae,lr\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.step,
                r.split.as_str(),
                r.loss,
                opt(r.recon),
                opt(r.kl),
                opt(r.kl_weight),
                opt(r.mrstft),
                opt(r.mae),
                r.lr
            )
            .expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn split_rows(&self, split: Split) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// (epoch, loss) of the lowest validation loss.
    pub fn best_val(&self) -> Option<(usize, f64)> {
        self.split_rows(Split::Val)
            .map(|r| (r.epoch, r.loss))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_schema_and_empty_columns() {
        let mut log = MetricLog::new();
        log.push(MetricRow {
            epoch: 0,
            step: 12,
            split: Split::Train,
            loss: 1.5,
            recon: Some(1.25),
            kl: Some(0.5),
            kl_weight: Some(0.5),
            mrstft: None,
            mae: None,
            lr: 5e-4,
        });
        log.push(MetricRow {
            epoch: 0,
            step: 12,
            split: Split::Val,
            loss: 2.0,
            recon: None,
            kl: None,
            kl_weight: None,
            mrstft: Some(1.9),
            mae: Some(0.001),
            lr: 1e-3,
        });
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,step,split,loss,recon,kl,kl_weight,mrstft,mae,lr"
        );
        assert_eq!(lines.next().unwrap(), "0,12,train,1.5,1.25,0.5,0.5,,,0.0005");
        assert_eq!(lines.next().unwrap(), "0,12,val,2,,,,1.9,0.001,0.001");
    }

    #[test]
    fn best_val_finds_minimum() {
        let mut log = MetricLog::new();
        for (epoch, loss) in [(0usize, 3.0), (1, 1.5), (2, 2.0)] {
            log.push(MetricRow {
                epoch,
                step: epoch,
                split: Split::Val,
                loss,
                recon: None,
                kl: None,
                kl_weight: None,
                mrstft: None,
                mae: None,
                lr: 1e-3,
            });
        }
        assert_eq!(log.best_val(), Some((1, 1.5)));
    }
}
