//! Per-epoch run records and their CSV form.

use std::fmt;
use std::io::Write;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageTag {
    Pretrain,
    Customize,
    Distill,
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageTag::Pretrain => "pretrain",
            StageTag::Customize => "FC",
            StageTag::Distill => "KD",
        })
    }
}

/// One epoch. Customization rows carry their cross-entropy in `total`
/// and leave the student components empty.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub stage: StageTag,
    pub l_l: Option<f64>,
    pub l_u: Option<f64>,
    pub l_ft: Option<f64>,
    pub l_ftilde: Option<f64>,
    pub l_pred: Option<f64>,
    pub total: Option<f64>,
    pub train_acc: Option<f64>,
    pub eval_acc: Option<f64>,
    pub cka_fs_ft: Option<f64>,
    pub cka_fs_ftilde: Option<f64>,
}

impl LogRow {
    pub fn new(epoch: usize, stage: StageTag) -> Self {
        LogRow {
            epoch,
            stage,
            l_l: None,
            l_u: None,
            l_ft: None,
            l_ftilde: None,
            l_pred: None,
            total: None,
            train_acc: None,
            eval_acc: None,
            cka_fs_ft: None,
            cka_fs_ftilde: None,
        }
    }
}

pub const CSV_HEADER: [&str; 12] = [
    "epoch",
    "stage",
    "l_l",
    "l_u",
    "l_ft",
    "l_ftilde",
    "l_pred",
    "total",
    "train_acc",
    "eval_acc",
    "cka_fs_ft",
    "cka_fs_ftilde",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<LogRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.17e}")).unwrap_or_default()
}

impl MetricsLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.rows.extend(other.rows);
    }

    /// Stage tags in order, pretraining excluded.
    pub fn stage_sequence(&self) -> Vec<StageTag> {
        self.rows
            .iter()
            .map(|r| r.stage)
            .filter(|s| *s != StageTag::Pretrain)
            .collect()
    }

    pub fn last_eval_acc(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.eval_acc)
    }

    pub fn last_cka_fs_ftilde(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.cka_fs_ftilde)
    }

    pub fn last_cka_fs_ft(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.cka_fs_ft)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for r in &self.rows {
            wr.write_record([
                r.epoch.to_string(),
                r.stage.to_string(),
                cell(r.l_l),
                cell(r.l_u),
                cell(r.l_ft),
                cell(r.l_ftilde),
                cell(r.l_pred),
                cell(r.total),
                cell(r.train_acc),
                cell(r.eval_acc),
                cell(r.cka_fs_ft),
                cell(r.cka_fs_ftilde),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_empty_cells() {
        let mut log = MetricsLog::default();
        let mut r = LogRow::new(1, StageTag::Distill);
        r.l_l = Some(0.5);
        log.push(r);
        let text = log.to_csv_string();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "1,KD,5.00000000000000000e-1,,,,,,,,,"
        );
    }
}
