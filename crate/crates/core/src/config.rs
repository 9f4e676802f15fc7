//! Run configuration from flat `key = value` files with command-line overrides.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments of
//! the same key win, so applying file entries and then flag entries gives
//! flags precedence over the file and the file over defaults.

use std::path::{Path, PathBuf};

use crate::adversary::{OptimizerKind, PerturbationConfig, TrainRecipe};
use crate::error::{Error, Result};
use crate::experiment::ModelShape;
use crate::model::TaskKind;

/// Every key accepted in a config file.
pub const KEYS: [&str; 29] = [
    "task",
    "seed",
    "train",
    "dev",
    "unlabeled",
    "augment",
    "out",
    "hidden_dim",
    "max_seq_len",
    "encoder_blocks",
    "at",
    "vat",
    "vat_unlabeled",
    "nel",
    "da",
    "nel_on_clean",
    "batch_size",
    "unlabeled_batch_size",
    "epochs",
    "learning_rate",
    "optimizer",
    "warmup",
    "epsilon",
    "xi",
    "weight_at",
    "weight_vat",
    "weight_vat_unlabeled",
    "weight_nel",
    "max_answer_len",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    pub shape: ModelShape,
    pub recipe: TrainRecipe,
    /// Perturbation size; `finish` fills in the task default when unset.
    pub epsilon: Option<f64>,
    pub max_answer_len: usize,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub augment: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::Seu,
            shape: ModelShape::default(),
            recipe: TrainRecipe::default(),
            epsilon: None,
            max_answer_len: crate::decoder::DEFAULT_MAX_ANSWER_LEN,
            train: None,
            dev: None,
            unlabeled: None,
            augment: None,
            out: None,
        }
    }
}

/// Parses `key = value` lines, keeping their order.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!("line {}: expected key = value", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::InvalidConfig(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{v}'")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected true or false, got '{v}'"))),
    }
}

pub fn parse_task(v: &str) -> Result<TaskKind> {
    match v {
        "se" => Ok(TaskKind::Se),
        "seu" => Ok(TaskKind::Seu),
        "mc" => Ok(TaskKind::Mc),
        _ => Err(Error::InvalidConfig(format!("task: expected se, seu or mc, got '{v}'"))),
    }
}

impl RunConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let r = &mut self.recipe;
        match key {
            "task" => self.task = parse_task(v)?,
            "seed" => r.seed = num(key, v)?,
            "train" => self.train = Some(v.into()),
            "dev" => self.dev = Some(v.into()),
            "unlabeled" => self.unlabeled = Some(v.into()),
            "augment" => self.augment = Some(v.into()),
            "out" => self.out = Some(v.into()),
            "hidden_dim" => self.shape.hidden_dim = num(key, v)?,
            "max_seq_len" => self.shape.max_seq_len = num(key, v)?,
            "encoder_blocks" => self.shape.num_encoder_blocks = num(key, v)?,
            "at" => r.at = flag(key, v)?,
            "vat" => r.vat = flag(key, v)?,
            "vat_unlabeled" => r.vat_unlabeled = flag(key, v)?,
            "nel" => r.nel = flag(key, v)?,
            "da" => r.da = flag(key, v)?,
            "nel_on_clean" => r.nel_on_clean = flag(key, v)?,
            "batch_size" => r.labeled_batch_size = num(key, v)?,
            "unlabeled_batch_size" => r.unlabeled_batch_size = num(key, v)?,
            "epochs" => r.epochs = num(key, v)?,
            "learning_rate" => r.learning_rate = num(key, v)?,
            "optimizer" => r.optimizer = OptimizerKind::parse(v)?,
            "warmup" => r.warmup = if v == "none" { None } else { Some(num(key, v)?) },
            "epsilon" => self.epsilon = Some(num(key, v)?),
            "xi" => r.perturbation.xi = num(key, v)?,
            "weight_at" => r.weights.at = num(key, v)?,
            "weight_vat" => r.weights.vat = num(key, v)?,
            "weight_vat_unlabeled" => r.weights.vat_unlabeled = num(key, v)?,
            "weight_nel" => r.weights.nel = num(key, v)?,
            "max_answer_len" => self.max_answer_len = num(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, entries: &[(String, String)]) -> Result<()> {
        entries.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_entries(&text)
    }

    /// Resolves task-dependent defaults and checks the result.
    pub fn finish(mut self) -> Result<Self> {
        let base = if self.task == TaskKind::Mc {
            PerturbationConfig::choice()
        } else {
            PerturbationConfig::span()
        };
        let epsilon = self.epsilon.unwrap_or(base.epsilon);
        self.epsilon = Some(epsilon);
        self.recipe.perturbation.epsilon = epsilon;
        if self.recipe.vat_unlabeled && self.unlabeled.is_none() {
            return Err(Error::InvalidConfig("vat_unlabeled needs an unlabeled file".into()));
        }
        if self.recipe.da && self.augment.is_none() {
            return Err(Error::InvalidConfig("da needs an augment file".into()));
        }
        if self.task == TaskKind::Mc && (self.recipe.nel || self.recipe.vat_unlabeled) {
            return Err(Error::InvalidConfig("nel and vat_unlabeled apply to span tasks only".into()));
        }
        if self.max_answer_len == 0 {
            return Err(Error::InvalidConfig("max_answer_len must be at least 1".into()));
        }
        self.recipe.validate()?;
        Ok(self)
    }

    /// `key = value` lines that reproduce this configuration.
    pub fn to_text(&self) -> String {
        let r = &self.recipe;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut lines = vec![
            ("task", self.task.as_str().to_string()),
            ("seed", r.seed.to_string()),
            ("hidden_dim", self.shape.hidden_dim.to_string()),
            ("max_seq_len", self.shape.max_seq_len.to_string()),
            ("encoder_blocks", self.shape.num_encoder_blocks.to_string()),
            ("at", r.at.to_string()),
            ("vat", r.vat.to_string()),
            ("vat_unlabeled", r.vat_unlabeled.to_string()),
            ("nel", r.nel.to_string()),
            ("da", r.da.to_string()),
            ("nel_on_clean", r.nel_on_clean.to_string()),
            ("batch_size", r.labeled_batch_size.to_string()),
            ("unlabeled_batch_size", r.unlabeled_batch_size.to_string()),
            ("epochs", r.epochs.to_string()),
            ("learning_rate", r.learning_rate.to_string()),
            ("optimizer", r.optimizer.as_str().to_string()),
            ("warmup", r.warmup.map_or("none".into(), |w| w.to_string())),
            ("epsilon", r.perturbation.epsilon.to_string()),
            ("xi", r.perturbation.xi.to_string()),
            ("weight_at", r.weights.at.to_string()),
            ("weight_vat", r.weights.vat.to_string()),
            ("weight_vat_unlabeled", r.weights.vat_unlabeled.to_string()),
            ("weight_nel", r.weights.nel.to_string()),
            ("max_answer_len", self.max_answer_len.to_string()),
        ];
        for (k, p) in [("train", &self.train), ("dev", &self.dev), ("unlabeled", &self.unlabeled), ("augment", &self.augment), ("out", &self.out)] {
            if let Some(p) = path(p) {
                lines.push((k, p));
            }
        }
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let e = parse_entries("# run\n\ntask = mc\n  epochs=4  \n").unwrap();
        assert_eq!(e, vec![("task".into(), "mc".into()), ("epochs".into(), "4".into())]);
        assert!(parse_entries("no equals sign").is_err());
        assert!(parse_entries(" = 3").is_err());
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let mut c = RunConfig::default();
        c.apply(&parse_entries("epochs = 7\nlearning_rate = 0.5\nat = true").unwrap()).unwrap();
        c.apply(&[("epochs".into(), "2".into())]).unwrap();
        let c = c.finish().unwrap();
        assert_eq!(c.recipe.epochs, 2);
        assert_eq!(c.recipe.learning_rate, 0.5);
        assert!(c.recipe.at);
        assert_eq!(c.recipe.labeled_batch_size, TrainRecipe::default().labeled_batch_size);
    }

    #[test]
    fn epsilon_defaults_by_task() {
        let mut c = RunConfig::default();
        c.set("task", "mc").unwrap();
        assert_eq!(c.clone().finish().unwrap().recipe.perturbation.epsilon, 1e-3);
        c.set("task", "seu").unwrap();
        assert_eq!(c.clone().finish().unwrap().recipe.perturbation.epsilon, 1e-2);
        c.set("epsilon", "0.5").unwrap();
        assert_eq!(c.finish().unwrap().recipe.perturbation.epsilon, 0.5);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("epochs", "x").is_err());
        assert!(c.set("at", "maybe").is_err());
        assert!(c.set("task", "qa").is_err());
        c.set("vat_unlabeled", "true").unwrap();
        assert!(matches!(c.finish(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply(&parse_entries("task = se\nvat = true\nwarmup = 0.1\noptimizer = adam\ntrain = t.json").unwrap()).unwrap();
        let c = c.finish().unwrap();
        let mut d = RunConfig::default();
        d.apply(&parse_entries(&c.to_text()).unwrap()).unwrap();
        assert_eq!(d.finish().unwrap(), c);
        assert_eq!(KEYS.len(), parse_entries(&c.to_text()).unwrap().len() + 4);
    }
}
