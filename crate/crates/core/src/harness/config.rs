//! Experiment configuration: a flat `key = value` text file.
//!
//! ```text
//! # comment
//! manifest = data/train.jsonl
//! kernel = gaussian            # linear | gaussian | normalized | raw
//! model.kind = 3convnn         # 3convnn | alexnet | baseline-avg | baseline-rf
//! model.input_hw = 64
//! optimizer.kind = adam
//! epochs = 100
//! seed.data = 1
//! ```
//!
//! Unknown keys are rejected. Every field has a spelled-out default except
//! `manifest`, `kernel` and `model.kind`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::heatmap::KernelKind;
use crate::models::ModelKind;
use crate::nn::optim::{AdamSpec, OptimizerSpec, SgdSpec};

/// What the model consumes: a rendered heatmap kernel or the raw pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Kernel(KernelKind),
    Raw,
}

impl InputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::Kernel(k) => k.as_str(),
            InputKind::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<InputKind> {
        if s == "raw" {
            Ok(InputKind::Raw)
        } else {
            Ok(InputKind::Kernel(s.parse()?))
        }
    }
}

/// Which predictor the experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSel {
    Network(ModelKind),
    BaselineAvg,
    BaselineRf,
}

impl ModelSel {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelSel::Network(k) => k.as_str(),
            ModelSel::BaselineAvg => "baseline-avg",
            ModelSel::BaselineRf => "baseline-rf",
        }
    }

    pub fn parse(s: &str) -> Result<ModelSel> {
        match s {
            "baseline-avg" => Ok(ModelSel::BaselineAvg),
            "baseline-rf" => Ok(ModelSel::BaselineRf),
            other => Ok(ModelSel::Network(other.parse()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub manifest: PathBuf,
    pub eval_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub input: InputKind,
    pub model: ModelSel,
    pub input_hw: usize,
    pub width_mult: f64,
    pub optimizer: OptimizerSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub seed_data: u64,
    pub seed_init: u64,
    pub seed_augment: u64,
    pub trees: usize,
    pub stop_at_train_acc: Option<f64>,
    pub deterministic: bool,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_kv(&text)
    }

    pub fn from_str_kv(text: &str) -> Result<ExperimentConfig> {
        let mut map = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = match raw_line.split_once('#') {
                Some((before, _)) => before,
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw_line}`", i + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<ExperimentConfig> {
        fn take(map: &mut BTreeMap<String, String>, key: &str) -> Option<String> {
            map.remove(key)
        }
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| {
                Error::Config(format!("key `{key}`: cannot parse `{v}`: {e}"))
            })
        }

        let manifest = take(&mut map, "manifest")
            .ok_or_else(|| Error::Config("missing required key `manifest`".into()))?;
        let input = InputKind::parse(
            &take(&mut map, "kernel")
                .ok_or_else(|| Error::Config("missing required key `kernel`".into()))?,
        )?;
        let model = ModelSel::parse(
            &take(&mut map, "model.kind")
                .ok_or_else(|| Error::Config("missing required key `model.kind`".into()))?,
        )?;

        let input_hw = match take(&mut map, "model.input_hw") {
            Some(v) => parse::<usize>("model.input_hw", &v)?,
            None => match model {
                ModelSel::Network(kind) => kind.default_input_hw(),
                _ => 0,
            },
        };
        let width_mult = match take(&mut map, "model.width_mult") {
            Some(v) => parse::<f64>("model.width_mult", &v)?,
            None => 1.0,
        };

        let opt_kind = take(&mut map, "optimizer.kind").unwrap_or_else(|| "adam".into());
        let optimizer = match opt_kind.as_str() {
            "adam" => {
                let mut a = AdamSpec::default();
                if let Some(v) = take(&mut map, "optimizer.lr") {
                    a.lr = parse("optimizer.lr", &v)?;
                }
                if let Some(v) = take(&mut map, "optimizer.beta1") {
                    a.beta1 = parse("optimizer.beta1", &v)?;
                }
                if let Some(v) = take(&mut map, "optimizer.beta2") {
                    a.beta2 = parse("optimizer.beta2", &v)?;
                }
                if let Some(v) = take(&mut map, "optimizer.eps") {
                    a.eps = parse("optimizer.eps", &v)?;
                }
                OptimizerSpec::Adam(a)
            }
            "sgd" => {
                let mut s = SgdSpec::default();
                if let Some(v) = take(&mut map, "optimizer.lr") {
                    s.lr = parse("optimizer.lr", &v)?;
                }
                if let Some(v) = take(&mut map, "optimizer.momentum") {
                    s.momentum = parse("optimizer.momentum", &v)?;
                }
                if let Some(v) = take(&mut map, "optimizer.weight_decay") {
                    s.weight_decay = parse("optimizer.weight_decay", &v)?;
                }
                OptimizerSpec::Sgd(s)
            }
            other => {
                return Err(Error::Config(format!(
                    "optimizer.kind must be adam or sgd, got `{other}`"
                )))
            }
        };

        let cfg = ExperimentConfig {
            name: take(&mut map, "name").unwrap_or_else(|| "run".into()),
            manifest: PathBuf::from(manifest),
            eval_manifest: take(&mut map, "eval_manifest").map(PathBuf::from),
            out_dir: PathBuf::from(take(&mut map, "out_dir").unwrap_or_else(|| ".".into())),
            input,
            model,
            input_hw,
            width_mult,
            optimizer,
            epochs: match take(&mut map, "epochs") {
                Some(v) => parse("epochs", &v)?,
                None => 100,
            },
            batch_size: match take(&mut map, "batch_size") {
                Some(v) => parse("batch_size", &v)?,
                None => 32,
            },
            holdout_fraction: match take(&mut map, "holdout_fraction") {
                Some(v) => parse("holdout_fraction", &v)?,
                None => 0.10,
            },
            seed_data: match take(&mut map, "seed.data") {
                Some(v) => parse("seed.data", &v)?,
                None => 0,
            },
            seed_init: match take(&mut map, "seed.init") {
                Some(v) => parse("seed.init", &v)?,
                None => 1,
            },
            seed_augment: match take(&mut map, "seed.augment") {
                Some(v) => parse("seed.augment", &v)?,
                None => 2,
            },
            trees: match take(&mut map, "trees") {
                Some(v) => parse("trees", &v)?,
                None => 15,
            },
            stop_at_train_acc: match take(&mut map, "stop_at_train_acc") {
                Some(v) => Some(parse("stop_at_train_acc", &v)?),
                None => None,
            },
            deterministic: match take(&mut map, "deterministic") {
                Some(v) => parse("deterministic", &v)?,
                None => false,
            },
        };
        if let Some(key) = map.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(
                "holdout_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let ModelSel::Network(kind) = self.model {
            // Validates dims against the layer stack.
            crate::models::build(kind, self.input_hw, self.width_mult)
                .map_err(|e| Error::Config(format!("model/input mismatch: {e}")))?;
        }
        if let Some(th) = self.stop_at_train_acc {
            if !(0.0..=1.0).contains(&th) {
                return Err(Error::Config("stop_at_train_acc must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Canonical key-value echo embedded in reports; keys sorted.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("name".into(), self.name.clone()),
            ("manifest".into(), self.manifest.display().to_string()),
            ("out_dir".into(), self.out_dir.display().to_string()),
            ("kernel".into(), self.input.as_str().into()),
            ("model.kind".into(), self.model.as_str().into()),
            ("model.input_hw".into(), self.input_hw.to_string()),
            ("model.width_mult".into(), format!("{}", self.width_mult)),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            (
                "holdout_fraction".into(),
                format!("{}", self.holdout_fraction),
            ),
            ("seed.data".into(), self.seed_data.to_string()),
            ("seed.init".into(), self.seed_init.to_string()),
            ("seed.augment".into(), self.seed_augment.to_string()),
            ("trees".into(), self.trees.to_string()),
            ("deterministic".into(), self.deterministic.to_string()),
        ];
        if let Some(ev) = &self.eval_manifest {
            kv.push(("eval_manifest".into(), ev.display().to_string()));
        }
        if let Some(th) = self.stop_at_train_acc {
            kv.push(("stop_at_train_acc".into(), format!("{th}")));
        }
        match &self.optimizer {
            OptimizerSpec::Adam(a) => {
                kv.push(("optimizer.kind".into(), "adam".into()));
                kv.push(("optimizer.lr".into(), format!("{}", a.lr)));
                kv.push(("optimizer.beta1".into(), format!("{}", a.beta1)));
                kv.push(("optimizer.beta2".into(), format!("{}", a.beta2)));
                kv.push(("optimizer.eps".into(), format!("{}", a.eps)));
            }
            OptimizerSpec::Sgd(s) => {
                kv.push(("optimizer.kind".into(), "sgd".into()));
                kv.push(("optimizer.lr".into(), format!("{}", s.lr)));
                kv.push(("optimizer.momentum".into(), format!("{}", s.momentum)));
                kv.push(("optimizer.weight_decay".into(), format!("{}", s.weight_decay)));
            }
        }
        kv.sort();
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
manifest = data.jsonl
kernel = gaussian
model.kind = 3convnn
model.input_hw = 64
";

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_str_kv(MINIMAL).unwrap();
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.holdout_fraction, 0.10);
        assert_eq!(cfg.input, InputKind::Kernel(crate::heatmap::KernelKind::Gaussian));
        assert!(matches!(cfg.optimizer, OptimizerSpec::Adam(_)));
        assert_eq!(cfg.trees, 15);
        assert!(!cfg.deterministic);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = format!("# leading comment\n\n{MINIMAL}\nepochs = 5 # trailing\n");
        let cfg = ExperimentConfig::from_str_kv(&text).unwrap();
        assert_eq!(cfg.epochs, 5);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(ExperimentConfig::from_str_kv(&text).is_err());
    }

    #[test]
    fn missing_required_key_rejected() {
        assert!(ExperimentConfig::from_str_kv("kernel = raw\nmodel.kind = 3convnn\n").is_err());
    }

    #[test]
    fn sgd_keys_parse() {
        let text = format!(
            "{MINIMAL}optimizer.kind = sgd\noptimizer.lr = 0.01\noptimizer.momentum = 0.9\noptimizer.weight_decay = 0.0005\n"
        );
        let cfg = ExperimentConfig::from_str_kv(&text).unwrap();
        match cfg.optimizer {
            OptimizerSpec::Sgd(s) => {
                assert_eq!(s.lr, 0.01);
                assert_eq!(s.momentum, 0.9);
                assert_eq!(s.weight_decay, 5e-4);
            }
            other => panic!("expected sgd, got {other:?}"),
        }
    }

    #[test]
    fn model_input_mismatch_rejected() {
        let text = "manifest = m\nkernel = raw\nmodel.kind = 3convnn\nmodel.input_hw = 4\n";
        assert!(ExperimentConfig::from_str_kv(text).is_err());
    }

    #[test]
    fn echo_is_sorted_and_deterministic() {
        let cfg = ExperimentConfig::from_str_kv(MINIMAL).unwrap();
        let echo = cfg.echo();
        let mut sorted = echo.clone();
        sorted.sort();
        assert_eq!(echo, sorted);
        assert_eq!(echo, cfg.echo());
    }
}
