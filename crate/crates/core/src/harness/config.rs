//! Declarative experiment configuration.
//!
//! A config file is TOML. It may name a built-in `profile`; the file's own keys
//! are then merged over the profile table by table. The merged result is
//! checked as a whole and every problem is reported at once.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_cifar10, load_mnist_idx, Augmentation, Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::nn::{models, LayerSpec, LrSchedule, Network, SgdConfig};
use crate::pruning::{KeepRatio, PruneMode, PruneSchedule, RankingConfig, TrainData, TrainOptions};

/// Environment variable consulted for the dataset root when neither the
/// command line nor the config names one.
pub const DATA_ROOT_ENV: &str = "SCREENPRUNE_DATA";

/// Built-in profiles: `(name, toml)`.
pub const PROFILES: &[(&str, &str)] = &[
    ("lenet_mnist", include_str!("../../profiles/lenet_mnist.toml")),
    ("lenet_mnist_desk", include_str!("../../profiles/lenet_mnist_desk.toml")),
    ("cifar_cls", include_str!("../../profiles/cifar_cls.toml")),
    ("cifar_cls_desk", include_str!("../../profiles/cifar_cls_desk.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sgd: SgdConfig,
    pub lr: LrSchedule,
    pub prune: PruneConfig,
    pub ranking: RankingConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Data root; relative paths are taken from the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Subdirectory of the root holding the files.
    pub dir: String,
    /// MNIST: `[images, labels]`. CIFAR-10: batch files.
    pub train_files: Vec<String>,
    pub test_files: Vec<String>,
    /// Use only the first N training samples (0 = all).
    #[serde(default)]
    pub train_subset: usize,
    #[serde(default)]
    pub test_subset: usize,
    /// Fraction of the training files held out as a validation split.
    #[serde(default)]
    pub validation_fraction: f64,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    #[serde(default)]
    pub augmentation: Augmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    #[serde(rename = "lenet_300_100")]
    Lenet300100,
    SmallBnCnn,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: ModelName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    /// Weight-initialization seed; defaults to `train.seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    /// Constant learning rate after the last prune event; absent = keep the schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_tune_lr: Option<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    None,
    Wls,
    Cls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub method: PruneMethod,
    #[serde(default = "default_mode")]
    pub mode: PruneMode,
    /// Kept fraction at the end of the schedule, global or one per group.
    #[serde(default = "default_ratio")]
    pub ratio: KeepRatio,
    #[serde(default = "default_decay")]
    pub decay_rate: f64,
    /// Epoch of the final iterative prune event; defaults to `train.epochs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Epoch of the one-shot prune event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
}

fn default_mode() -> PruneMode {
    PruneMode::IterativeLogistic
}

fn default_ratio() -> KeepRatio {
    KeepRatio::Global(0.5)
}

fn default_decay() -> f64 {
    4.0
}

fn default_warmup() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub ratio: Option<f64>,
    pub data_root: Option<PathBuf>,
}

/// Deep-merges `over` into `base`. A table whose `kind` changes is replaced
/// wholesale, since its other keys belong to the old variant.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if o.get("kind").is_none_or(|kind| b.get("kind") == Some(kind)) => {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn profile_table(name: &str) -> Option<toml::Table> {
    PROFILES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| text.parse().expect("built-in profiles are valid TOML"))
}

impl ExperimentConfig {
    /// A built-in profile with its defaults untouched.
    pub fn profile(name: &str) -> Result<Self> {
        let table = profile_table(name).ok_or_else(|| unknown_profile(name))?;
        let mut cfg = Self::from_table(table)?;
        cfg.profile = Some(name.to_string());
        Ok(cfg)
    }

    /// Parses TOML text, merging it over its named profile. Structural problems
    /// (unknown keys, wrong types, missing fields) are all listed in one error.
    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::Config(vec![format!("{e}")]))?;
        let mut table = match user.get("profile") {
            Some(toml::Value::String(name)) => profile_table(name).ok_or_else(|| unknown_profile(name))?,
            Some(_) => return Err(Error::Config(vec!["profile: expected a profile name".into()])),
            None => toml::Table::new(),
        };
        merge(&mut table, user);
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let mut unknown = Vec::new();
        let parsed: std::result::Result<Self, _> =
            serde_ignored::deserialize(toml::Value::Table(table), |path| unknown.push(format!("{path}: unknown key")));
        match parsed {
            Ok(cfg) if unknown.is_empty() => Ok(cfg),
            Ok(_) => Err(Error::Config(unknown)),
            Err(e) => {
                unknown.push(e.to_string().trim().to_string());
                Err(Error::Config(unknown))
            }
        }
    }

    /// Reads, merges, applies overrides, resolves the data root and validates.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(root) = &cfg.dataset.root {
            if root.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.dataset.root = Some(base.join(root));
            }
        }
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.output {
            self.output.dir = dir.clone();
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(alpha) = o.alpha {
            self.ranking.alpha = alpha;
        }
        if let Some(r) = o.ratio {
            self.prune.ratio = KeepRatio::Global(r);
        }
        if let Some(root) = &o.data_root {
            self.dataset.root = Some(root.clone());
        }
    }

    /// Directory holding the dataset files.
    pub fn data_dir(&self) -> PathBuf {
        let root = self
            .dataset
            .root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));
        root.join(&self.dataset.dir)
    }

    /// Every semantic problem with the config, including missing dataset files.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let t = &self.train;
        if t.epochs == 0 {
            p.push("train.epochs must be at least 1".into());
        }
        if t.batch_size == 0 {
            p.push("train.batch_size must be at least 1".into());
        }
        if t.eval_batch_size == 0 {
            p.push("train.eval_batch_size must be at least 1".into());
        }
        if let Some(lr) = t.fine_tune_lr {
            if !(lr > 0.0) {
                p.push("train.fine_tune_lr must be > 0".into());
            }
        }
        if let Err(e) = self.sgd.validate() {
            p.push(e);
        }
        if let Err(e) = self.lr.validate() {
            p.push(format!("lr: {e}"));
        }
        if let Err(e) = self.ranking.validate() {
            p.push(e);
        }

        let d = &self.dataset;
        let channels = match d.kind {
            DatasetKind::Mnist => {
                if d.train_files.len() != 2 || d.test_files.len() != 2 {
                    p.push("dataset: mnist needs train_files and test_files as [images, labels]".into());
                }
                1
            }
            DatasetKind::Cifar10 => {
                if d.train_files.is_empty() || d.test_files.is_empty() {
                    p.push("dataset: cifar10 needs at least one train and one test batch file".into());
                }
                3
            }
        };
        if d.mean.len() != channels || d.std.len() != channels {
            p.push(format!("dataset.mean and dataset.std need {channels} values"));
        }
        if d.std.iter().any(|&s| !(s > 0.0)) {
            p.push("dataset.std values must be > 0".into());
        }
        if !(0.0..1.0).contains(&d.validation_fraction) {
            p.push("dataset.validation_fraction must lie in [0, 1)".into());
        }
        let dir = self.data_dir();
        for f in d.train_files.iter().chain(&d.test_files) {
            let path = dir.join(f);
            if !path.is_file() {
                p.push(format!("dataset file not found: {}", path.display()));
            }
        }

        let specs = match self.model_specs() {
            Ok((shape, specs)) => {
                let want: Vec<usize> = match d.kind {
                    DatasetKind::Mnist => vec![1, 28, 28],
                    DatasetKind::Cifar10 => vec![3, 32, 32],
                };
                if shape != want {
                    p.push(format!("model input shape {shape:?} does not match the dataset's {want:?}"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                match Network::from_specs(&shape, &specs, &mut rng) {
                    Ok(net) if net.output_size() != 10 => {
                        p.push(format!("model has {} outputs; the dataset has 10 classes", net.output_size()))
                    }
                    Ok(_) => {}
                    Err(e) => p.push(format!("model: {e}")),
                }
                Some(specs)
            }
            Err(e) => {
                p.push(e);
                None
            }
        };

        let pr = &self.prune;
        if pr.method != PruneMethod::None {
            for r in pr.ratio.values() {
                if !(r > 0.0 && r < 1.0) {
                    p.push(format!("prune.ratio {r} must lie in (0, 1)"));
                }
            }
            if !(pr.decay_rate > 0.0) {
                p.push("prune.decay_rate must be > 0".into());
            }
            match pr.mode {
                PruneMode::IterativeLogistic => {
                    let h = pr.horizon.unwrap_or(t.epochs);
                    if h == 0 || h > t.epochs {
                        p.push(format!("prune.horizon must lie in 1..={}", t.epochs));
                    }
                    if pr.warmup >= h {
                        p.push("prune.warmup must be smaller than the horizon".into());
                    }
                }
                PruneMode::OneShot => match pr.epoch {
                    Some(e) if e >= 1 && e <= t.epochs => {}
                    _ => p.push(format!("prune.epoch is required for one_shot and must lie in 1..={}", t.epochs)),
                },
            }
            if let Some(specs) = &specs {
                let dense = specs.iter().filter(|s| matches!(s, LayerSpec::Dense { .. })).count();
                let bn = specs.iter().filter(|s| matches!(s, LayerSpec::BatchNorm2d)).count();
                let groups = match (pr.method, pr.mode) {
                    (PruneMethod::Wls, _) => dense,
                    (PruneMethod::Cls, PruneMode::OneShot) => 1,
                    _ => bn,
                };
                if pr.method == PruneMethod::Cls && bn == 0 {
                    p.push("prune.method = cls needs a model with batch-norm layers".into());
                }
                if let KeepRatio::PerGroup(rs) = &pr.ratio {
                    if rs.len() != groups {
                        p.push(format!("prune.ratio lists {} values for {groups} prune groups", rs.len()));
                    }
                }
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn model_specs(&self) -> std::result::Result<(Vec<usize>, Vec<LayerSpec>), String> {
        match self.model.name {
            ModelName::Lenet300100 => Ok(models::lenet_300_100()),
            ModelName::SmallBnCnn => Ok(models::small_bn_cnn()),
            ModelName::Custom => match (&self.model.input_shape, &self.model.layers) {
                (Some(s), Some(l)) if !l.is_empty() => Ok((s.clone(), l.clone())),
                _ => Err("model.name = custom needs model.input_shape and a non-empty model.layers".into()),
            },
        }
    }

    /// Freshly initialized network.
    pub fn build_network(&self) -> Result<Network> {
        let (shape, specs) = self.model_specs().map_err(|e| Error::Config(vec![e]))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.model.init_seed.unwrap_or(self.train.seed));
        Network::from_specs(&shape, &specs, &mut rng)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            eval_batch_size: self.train.eval_batch_size,
            seed: self.train.seed,
            augmentation: self.dataset.augmentation,
            sgd: self.sgd.clone(),
            lr: self.lr.clone(),
            fine_tune_lr: self.train.fine_tune_lr,
        }
    }

    /// The prune schedule, or `None` when pruning is disabled.
    pub fn schedule(&self) -> Result<Option<PruneSchedule>> {
        let pr = &self.prune;
        if pr.method == PruneMethod::None {
            return Ok(None);
        }
        let s = match pr.mode {
            PruneMode::IterativeLogistic => PruneSchedule::iterative(
                pr.ratio.clone(),
                pr.decay_rate,
                pr.horizon.unwrap_or(self.train.epochs),
                pr.warmup,
            )?,
            PruneMode::OneShot => {
                let epoch = pr.epoch.ok_or_else(|| Error::Config(vec!["prune.epoch is required for one_shot".into()]))?;
                PruneSchedule::one_shot(pr.ratio.clone(), epoch)?
            }
        };
        Ok(Some(s))
    }

    fn normalization(&self) -> Normalization {
        Normalization { mean: self.dataset.mean.clone(), std: self.dataset.std.clone() }
    }

    fn load_split(&self, files: &[String], split: Split) -> Result<Dataset> {
        let dir = self.data_dir();
        let norm = self.normalization();
        match self.dataset.kind {
            DatasetKind::Mnist => load_mnist_idx(dir.join(&files[0]), dir.join(&files[1]), split, &norm),
            DatasetKind::Cifar10 => {
                let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
                load_cifar10(&paths, split, &norm)
            }
        }
    }

    pub fn load_test(&self) -> Result<Dataset> {
        Ok(self.load_split(&self.dataset.test_files, Split::Test)?.head(self.dataset.test_subset))
    }

    pub fn load_data(&self) -> Result<TrainData> {
        let full = self.load_split(&self.dataset.train_files, Split::Train)?.head(self.dataset.train_subset);
        let (train, validation) = if self.dataset.validation_fraction > 0.0 {
            let (a, b) = full.split_tail(self.dataset.validation_fraction);
            (a, Some(b))
        } else {
            (full, None)
        };
        Ok(TrainData { train, test: self.load_test()?, validation })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// SHA-256 over the resolved config, ignoring where outputs and data live.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        c.dataset.root = None;
        c.profile = None;
        let json = serde_json::to_string(&c).expect("config serializes to JSON");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn unknown_profile(name: &str) -> Error {
    let names: Vec<&str> = PROFILES.iter().map(|(n, _)| *n).collect();
    Error::Config(vec![format!("unknown profile {name:?}; available: {}", names.join(", "))])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_profile_parses() {
        for (name, _) in PROFILES {
            let cfg = ExperimentConfig::profile(name).unwrap();
            assert!(cfg.model_specs().is_ok(), "{name}");
            cfg.schedule().unwrap().unwrap();
        }
    }

    #[test]
    fn reported_hyperparameters_are_profile_defaults() {
        let l = ExperimentConfig::profile("lenet_mnist").unwrap();
        assert_eq!((l.train.epochs, l.train.batch_size), (80, 128));
        assert_eq!(l.sgd.learning_rate, 0.1);
        assert_eq!(l.sgd.weight_decay, 1e-4);
        assert_eq!(l.sgd.momentum, 0.9);
        assert!(l.sgd.nesterov);
        assert_eq!(l.lr.lr_at(9), 0.1);
        assert_eq!(l.lr.lr_at(10), 0.05);

        let c = ExperimentConfig::profile("cifar_cls").unwrap();
        assert_eq!(c.train.batch_size, 64);
        assert!((c.lr.lr_at(80) - 0.01).abs() < 1e-9);
        assert!((c.lr.lr_at(120) - 0.001).abs() < 1e-9);
    }

    #[test]
    fn file_keys_override_profile() {
        let cfg = ExperimentConfig::parse(
            r#"
            profile = "lenet_mnist_desk"
            [train]
            epochs = 3
            [ranking]
            alpha = 1.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.ranking.alpha, 1.0);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = ExperimentConfig::parse(
            r#"
            profile = "lenet_mnist_desk"
            [train]
            epoch = 3
            [sgd]
            lr = 0.2
            "#,
        )
        .unwrap_err();
        let Error::Config(items) = err else { panic!("{err}") };
        assert_eq!(items.len(), 2, "{items:?}");
        assert!(items.iter().any(|i| i.contains("train.epoch")));
        assert!(items.iter().any(|i| i.contains("sgd.lr")));
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut cfg = ExperimentConfig::profile("lenet_mnist_desk").unwrap();
        cfg.dataset.root = Some(PathBuf::from("/nonexistent"));
        cfg.ranking.alpha = 0.0;
        cfg.prune.ratio = KeepRatio::PerGroup(vec![0.5, 1.5]);
        cfg.train.batch_size = 0;
        let p = cfg.problems();
        assert!(p.iter().any(|s| s.contains("alpha")), "{p:?}");
        assert!(p.iter().any(|s| s.contains("1.5")), "{p:?}");
        assert!(p.iter().any(|s| s.contains("2 values for 3")), "{p:?}");
        assert!(p.iter().any(|s| s.contains("batch_size")), "{p:?}");
        assert_eq!(p.iter().filter(|s| s.contains("not found")).count(), 4, "{p:?}");
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ExperimentConfig::profile("lenet_mnist_desk").unwrap();
        cfg.apply(&Overrides {
            output: Some("out".into()),
            seed: Some(9),
            alpha: Some(0.8),
            ratio: Some(0.1),
            data_root: Some("/d".into()),
        });
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.ranking.alpha, 0.8);
        assert_eq!(cfg.prune.ratio, KeepRatio::Global(0.1));
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
        assert_eq!(cfg.data_dir(), PathBuf::from("/d/mnist"));
    }

    #[test]
    fn changing_a_variant_drops_its_old_keys() {
        let cfg = ExperimentConfig::parse(
            r#"
            profile = "lenet_mnist_desk"
            [lr]
            kind = "constant"
            initial_lr = 0.01
            "#,
        )
        .unwrap();
        assert_eq!(cfg.lr, LrSchedule::Constant { initial_lr: 0.01 });
    }

    #[test]
    fn digest_ignores_output_location_only() {
        let a = ExperimentConfig::profile("lenet_mnist_desk").unwrap();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        b.train.seed += 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let a = ExperimentConfig::profile("cifar_cls_desk").unwrap();
        assert_eq!(ExperimentConfig::parse(&a.to_toml()).unwrap(), a);
    }
}
