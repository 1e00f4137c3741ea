//! Run reports: a stable line-oriented text schema, written once per
//! experiment and read back by the comparison table.

use std::path::Path;

use crate::error::{Error, Result};

pub const REPORT_SCHEMA: &str = "groupaffect-report-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// Mean training loss over the epoch's batches; absent for baselines.
    pub train_loss: Option<f64>,
    pub train_acc: f64,
    pub holdout_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config_echo: Vec<(String, String)>,
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose checkpoint was kept (highest hold-out accuracy,
    /// earliest on ties).
    pub best_epoch: usize,
    pub best_holdout_acc: f64,
    pub final_eval_acc: f64,
    /// confusion[true][predicted], class order Positive, Neutral, Negative.
    pub confusion: [[usize; 3]; 3],
    /// None means redacted (deterministic mode writes byte-stable reports).
    pub wall_clock_secs: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "-".into(),
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "-" || s == "redacted" {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|e| Error::Run(format!("bad float `{s}` in report: {e}")))
    }
}

impl RunReport {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config_echo
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("schema {REPORT_SCHEMA}\n"));
        for (k, v) in &self.config_echo {
            out.push_str(&format!("config {k} = {v}\n"));
        }
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!(
                "epoch {} loss={} train_acc={:.6} holdout_acc={:.6}\n",
                i + 1,
                fmt_opt(e.train_loss),
                e.train_acc,
                e.holdout_acc
            ));
        }
        out.push_str(&format!("best_epoch {}\n", self.best_epoch));
        out.push_str(&format!("best_holdout_acc {:.6}\n", self.best_holdout_acc));
        out.push_str(&format!("final_eval_acc {:.6}\n", self.final_eval_acc));
        out.push_str("confusion");
        for row in &self.confusion {
            for v in row {
                out.push_str(&format!(" {v}"));
            }
        }
        out.push('\n');
        out.push_str(&format!(
            "wall_clock_secs {}\n",
            match self.wall_clock_secs {
                Some(v) => format!("{v:.3}"),
                None => "redacted".into(),
            }
        ));
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn from_text(text: &str) -> Result<RunReport> {
        let mut lines = text.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Run("empty report".into()))?;
        if first != format!("schema {REPORT_SCHEMA}") {
            return Err(Error::Run(format!(
                "unsupported report schema line `{first}`"
            )));
        }
        let mut report = RunReport {
            config_echo: Vec::new(),
            epochs: Vec::new(),
            best_epoch: 0,
            best_holdout_acc: 0.0,
            final_eval_acc: 0.0,
            confusion: [[0; 3]; 3],
            wall_clock_secs: None,
        };
        let bad = |line: &str| Error::Run(format!("malformed report line `{line}`"));
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (head, rest) = line.split_once(' ').ok_or_else(|| bad(line))?;
            match head {
                "config" => {
                    let (k, v) = rest.split_once(" = ").ok_or_else(|| bad(line))?;
                    report.config_echo.push((k.to_string(), v.to_string()));
                }
                "epoch" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    if parts.len() != 4 {
                        return Err(bad(line));
                    }
                    let strip = |s: &str, prefix: &str| -> Result<String> {
                        s.strip_prefix(prefix)
                            .map(str::to_string)
                            .ok_or_else(|| bad(line))
                    };
                    report.epochs.push(EpochStats {
                        train_loss: parse_opt(&strip(parts[1], "loss=")?)?,
                        train_acc: strip(parts[2], "train_acc=")?
                            .parse()
                            .map_err(|_| bad(line))?,
                        holdout_acc: strip(parts[3], "holdout_acc=")?
                            .parse()
                            .map_err(|_| bad(line))?,
                    });
                }
                "best_epoch" => report.best_epoch = rest.parse().map_err(|_| bad(line))?,
                "best_holdout_acc" => {
                    report.best_holdout_acc = rest.parse().map_err(|_| bad(line))?
                }
                "final_eval_acc" => {
                    report.final_eval_acc = rest.parse().map_err(|_| bad(line))?
                }
                "confusion" => {
                    let vals: Vec<usize> = rest
                        .split(' ')
                        .map(|v| v.parse().map_err(|_| bad(line)))
                        .collect::<Result<_>>()?;
                    if vals.len() != 9 {
                        return Err(bad(line));
                    }
                    for (i, v) in vals.into_iter().enumerate() {
                        report.confusion[i / 3][i % 3] = v;
                    }
                }
                "wall_clock_secs" => report.wall_clock_secs = parse_opt(rest)?,
                _ => return Err(bad(line)),
            }
        }
        Ok(report)
    }

    pub fn read_from(path: &Path) -> Result<RunReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Accuracy pair shown in comparison tables: training accuracy of the
    /// selected epoch and the final evaluation accuracy.
    pub fn table_accuracies(&self) -> (Option<f64>, f64) {
        let train = self
            .epochs
            .get(self.best_epoch.saturating_sub(1))
            .map(|e| e.train_acc);
        (train, self.final_eval_acc)
    }
}
