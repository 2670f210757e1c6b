//! Effective run configuration: defaults, then a `key=value` file, then
//! command-line flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use retinotopic::data::DatasetName;
use retinotopic::training::{Augmentations, TrainConfig};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub dataset: DatasetName,
    /// Resolved later from the environment when unset.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Use only the first `n` training / test examples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    /// Batches between progress lines on stderr.
    pub log_every: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::Mnist,
            data_dir: None,
            out_dir: PathBuf::from("runs/latest"),
            train_limit: None,
            test_limit: None,
            threads: None,
            log_every: 50,
            train: TrainConfig::default(),
        }
    }
}

/// Keys accepted in config files and their flag spellings.
pub const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "out_dir",
    "train_limit",
    "test_limit",
    "threads",
    "log_every",
    "batch_size",
    "epochs",
    "lr",
    "lr_decay",
    "lr_decay_every",
    "optimizer",
    "momentum",
    "beta1",
    "beta2",
    "adam_eps",
    "weight_decay",
    "clip_norm",
    "lambda_greedy",
    "greedy_only_epochs",
    "saccades",
    "seed",
    "augment",
    "patch",
    "r_min",
    "r_max",
    "init_margin",
    "phi_readout",
    "eval_center",
    "deterministic",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

/// `none`/`off`/empty disables the entry.
fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match value {
        "" | "none" | "off" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

/// `none`, `full`, or a comma list drawn from
/// `flip, zoom, hue, saturation, brightness, contrast`.
pub fn parse_augment(value: &str) -> Result<Augmentations> {
    match value {
        "none" | "off" | "" => return Ok(Augmentations::none()),
        "full" | "all" => return Ok(Augmentations::full()),
        _ => {}
    }
    let full = Augmentations::full();
    let mut aug = Augmentations::none();
    for item in value.split(',').map(str::trim) {
        match item {
            "flip" => aug.flip = true,
            "zoom" => aug.zoom = full.zoom,
            "hue" => aug.hue = full.hue,
            "saturation" => aug.saturation = full.saturation,
            "brightness" => aug.brightness = full.brightness,
            "contrast" => aug.contrast = full.contrast,
            other => bail!("augment: unknown entry {other:?}"),
        }
    }
    Ok(aug)
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = value.parse().map_err(|e| anyhow!("dataset: {e}"))?,
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "train_limit" => self.train_limit = parse_opt(key, value)?,
            "test_limit" => self.test_limit = parse_opt(key, value)?,
            "threads" => self.threads = parse_opt(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "lr_decay" => t.lr_decay = parse(key, value)?,
            "lr_decay_every" => t.lr_decay_every = parse(key, value)?,
            "optimizer" => t.optimizer = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "clip_norm" => t.clip_norm = parse_opt(key, value)?,
            "lambda_greedy" => t.lambda_greedy = parse(key, value)?,
            "greedy_only_epochs" => t.greedy_only_epochs = parse(key, value)?,
            "saccades" => t.saccades = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "augment" => t.augment = parse_augment(value)?,
            "patch" => t.patch = parse(key, value)?,
            "r_min" => t.r_min = parse(key, value)?,
            "r_max" => t.r_max = parse_opt(key, value)?,
            "init_margin" => t.init_margin = parse(key, value)?,
            "phi_readout" => t.phi_readout = parse(key, value)?,
            "eval_center" => t.eval_center = parse(key, value)?,
            "deterministic" => t.deterministic = parse_bool(key, value)?,
            _ => bail!(
                "unknown config key {key:?}; known keys: {}",
                KEYS.join(", ")
            ),
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key=value, got {line:?}", n + 1))?;
            self.set(k.trim(), v.trim())
                .with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Defaults, overlaid by `file`, overlaid by `flags`.
    pub fn resolve(file: Option<&Path>, flags: &[(&'static str, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for (k, v) in flags {
            cfg.set(k, v)
                .with_context(|| format!("flag --{}", k.replace('_', "-")))?;
        }
        cfg.train.validate().map_err(|e| anyhow!(e))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\nepochs = 3\nlr=0.01 # trailing\nsaccades=2\n",
        )
        .unwrap();
        let cfg = RunConfig::resolve(Some(&path), &[("epochs", "7".into())]).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.saccades, 2);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg
            .apply_text("epochs=1\nlearning_rate=3\n", "f")
            .unwrap_err();
        assert!(format!("{err:#}").contains("learning_rate"));
        assert!(cfg.apply_text("no equals sign", "f").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let samples = [
            ("dataset", "fashion_mnist"),
            ("augment", "flip,zoom"),
            ("optimizer", "sgd_momentum"),
            ("phi_readout", "linear"),
            ("eval_center", "random"),
            ("deterministic", "true"),
            ("clip_norm", "none"),
            ("r_max", "40"),
            ("lr_decay", "0.5"),
            ("data_dir", "/tmp"),
            ("out_dir", "/tmp/x"),
        ];
        for key in KEYS {
            let mut cfg = RunConfig::default();
            let value = samples
                .iter()
                .find(|(k, _)| k == key)
                .map_or("1", |(_, v)| v);
            cfg.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn shipped_recipes_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["mnist", "fashion_mnist", "cifar10"] {
            let cfg = RunConfig::resolve(Some(&dir.join(format!("{name}.cfg"))), &[]).unwrap();
            assert_eq!(cfg.dataset.to_string(), name);
            assert_eq!(cfg.train.saccades, 4);
        }
    }

    #[test]
    fn augment_lists() {
        let a = parse_augment("flip,contrast").unwrap();
        assert!(a.flip && a.contrast.is_some() && a.zoom.is_none());
        assert_eq!(parse_augment("full").unwrap(), Augmentations::full());
        assert!(parse_augment("blur").is_err());
    }
}
