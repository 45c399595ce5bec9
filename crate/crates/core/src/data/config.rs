//! Run configuration: a flat `key = value` text format whose keys are the
//! field names of [`RunConfig`].

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::{load_idx, synth_blobs, Dataset, Split, Standardizer};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Afd,
    Dml,
    L1,
    L1Kd,
    L1KdOffline,
    KdEnsemble,
    Vanilla,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Afd,
        Method::Dml,
        Method::L1,
        Method::L1Kd,
        Method::L1KdOffline,
        Method::KdEnsemble,
        Method::Vanilla,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Afd => "afd",
            Method::Dml => "dml",
            Method::L1 => "l1",
            Method::L1Kd => "l1_kd",
            Method::L1KdOffline => "l1_kd_offline",
            Method::KdEnsemble => "kd_ensemble",
            Method::Vanilla => "vanilla",
        }
    }

    /// Methods that align feature maps across edges.
    pub fn uses_features(self) -> bool {
        matches!(self, Method::Afd | Method::L1 | Method::L1Kd | Method::L1KdOffline)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown method `{s}` (one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synth,
    Idx,
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synth" => Ok(DataSource::Synth),
            "idx" => Ok(DataSource::Idx),
            _ => Err(Error::Config(format!("unknown dataset `{s}` (synth or idx)"))),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::Synth => "synth",
            DataSource::Idx => "idx",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    /// One spec per network, or a single spec shared by all.
    pub archs: Vec<String>,
    pub nets: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Seed of the synthetic data; defaults to `seed`.
    pub data_seed: Option<u64>,

    pub lr_logit: f64,
    pub momentum: f64,
    pub weight_decay_logit: f64,
    pub milestones_logit: Vec<usize>,
    pub lr_adv: f64,
    pub weight_decay_adv: f64,
    pub adv_beta1: f64,
    pub adv_beta2: f64,
    pub milestones_adv: Vec<usize>,
    pub lr_factor: f64,
    /// `false` drops the adversarial phase of `afd` (logit-only ablation).
    pub adversarial: bool,
    pub disc_width: usize,

    pub dataset: DataSource,
    pub synth_classes: usize,
    pub synth_train_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_image_size: usize,
    pub synth_noise: f64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,

    pub out_dir: PathBuf,
    /// Checkpoint of a single-network run used as the frozen teacher of
    /// `l1_kd_offline`.
    pub teacher_checkpoint: Option<PathBuf>,
    /// Extra checkpoint every this many epochs (0: milestones and end only).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Afd,
            archs: vec!["tiny-a".into()],
            nets: 2,
            temperature: 3.0,
            epochs: 20,
            batch_size: 128,
            seed: 0,
            data_seed: None,
            lr_logit: 0.1,
            momentum: 0.9,
            weight_decay_logit: 1e-4,
            milestones_logit: vec![10, 15],
            lr_adv: 2e-5,
            weight_decay_adv: 0.1,
            adv_beta1: 0.9,
            adv_beta2: 0.999,
            milestones_adv: vec![5, 10],
            lr_factor: 0.1,
            adversarial: true,
            disc_width: 32,
            dataset: DataSource::Synth,
            synth_classes: 6,
            synth_train_per_class: 400,
            synth_test_per_class: 100,
            synth_image_size: 28,
            synth_noise: 0.35,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            out_dir: PathBuf::from("runs/afd"),
            teacher_checkpoint: None,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}` = `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub const KEYS: [&'static str; 33] = [
        "method",
        "archs",
        "nets",
        "temperature",
        "epochs",
        "batch_size",
        "seed",
        "data_seed",
        "lr_logit",
        "momentum",
        "weight_decay_logit",
        "milestones_logit",
        "lr_adv",
        "weight_decay_adv",
        "adv_beta1",
        "adv_beta2",
        "milestones_adv",
        "lr_factor",
        "adversarial",
        "disc_width",
        "dataset",
        "synth_classes",
        "synth_train_per_class",
        "synth_test_per_class",
        "synth_image_size",
        "synth_noise",
        "train_images",
        "train_labels",
        "test_images",
        "test_labels",
        "out_dir",
        "teacher_checkpoint",
        "checkpoint_every",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "method" => self.method = value.parse()?,
            "archs" => {
                self.archs = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "nets" => self.nets = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data_seed" => {
                self.data_seed = if value.is_empty() { None } else { Some(parse(key, value)?) }
            }
            "lr_logit" => self.lr_logit = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay_logit" => self.weight_decay_logit = parse(key, value)?,
            "milestones_logit" => self.milestones_logit = parse_list(key, value)?,
            "lr_adv" => self.lr_adv = parse(key, value)?,
            "weight_decay_adv" => self.weight_decay_adv = parse(key, value)?,
            "adv_beta1" => self.adv_beta1 = parse(key, value)?,
            "adv_beta2" => self.adv_beta2 = parse(key, value)?,
            "milestones_adv" => self.milestones_adv = parse_list(key, value)?,
            "lr_factor" => self.lr_factor = parse(key, value)?,
            "adversarial" => self.adversarial = parse(key, value)?,
            "disc_width" => self.disc_width = parse(key, value)?,
            "dataset" => self.dataset = value.parse()?,
            "synth_classes" => self.synth_classes = parse(key, value)?,
            "synth_train_per_class" => self.synth_train_per_class = parse(key, value)?,
            "synth_test_per_class" => self.synth_test_per_class = parse(key, value)?,
            "synth_image_size" => self.synth_image_size = parse(key, value)?,
            "synth_noise" => self.synth_noise = parse(key, value)?,
            "train_images" => self.train_images = opt_path(value),
            "train_labels" => self.train_labels = opt_path(value),
            "test_images" => self.test_images = opt_path(value),
            "test_labels" => self.test_labels = opt_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "teacher_checkpoint" => self.teacher_checkpoint = opt_path(value),
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Every field as `key = value` lines, parseable by [`RunConfig::from_text`].
    pub fn to_text(&self) -> String {
        let fields: Vec<(&str, String)> = vec![
            ("method", self.method.to_string()),
            ("archs", self.archs.join(",")),
            ("nets", self.nets.to_string()),
            ("temperature", self.temperature.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("data_seed", self.data_seed.map(|s| s.to_string()).unwrap_or_default()),
            ("lr_logit", self.lr_logit.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay_logit", self.weight_decay_logit.to_string()),
            ("milestones_logit", join(&self.milestones_logit)),
            ("lr_adv", self.lr_adv.to_string()),
            ("weight_decay_adv", self.weight_decay_adv.to_string()),
            ("adv_beta1", self.adv_beta1.to_string()),
            ("adv_beta2", self.adv_beta2.to_string()),
            ("milestones_adv", join(&self.milestones_adv)),
            ("lr_factor", self.lr_factor.to_string()),
            ("adversarial", self.adversarial.to_string()),
            ("disc_width", self.disc_width.to_string()),
            ("dataset", self.dataset.to_string()),
            ("synth_classes", self.synth_classes.to_string()),
            ("synth_train_per_class", self.synth_train_per_class.to_string()),
            ("synth_test_per_class", self.synth_test_per_class.to_string()),
            ("synth_image_size", self.synth_image_size.to_string()),
            ("synth_noise", self.synth_noise.to_string()),
            ("train_images", show_path(&self.train_images)),
            ("train_labels", show_path(&self.train_labels)),
            ("test_images", show_path(&self.test_images)),
            ("test_labels", show_path(&self.test_labels)),
            ("out_dir", self.out_dir.display().to_string()),
            ("teacher_checkpoint", show_path(&self.teacher_checkpoint)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        fields.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Architecture spec of network `k`.
    pub fn arch(&self, k: usize) -> &str {
        if self.archs.len() == 1 {
            &self.archs[0]
        } else {
            &self.archs[k]
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Checks every field without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.nets == 0 {
            return bad("nets must be at least 1".into());
        }
        let min_nets = if self.method == Method::Vanilla { 1 } else { 2 };
        if self.nets < min_nets {
            return bad(format!(
                "method {} needs at least {min_nets} networks, got {}",
                self.method, self.nets
            ));
        }
        if self.method == Method::L1KdOffline {
            if self.nets != 2 {
                return bad("l1_kd_offline trains one student against one teacher (nets = 2)".into());
            }
            if self.teacher_checkpoint.is_none() {
                return bad("l1_kd_offline requires teacher_checkpoint".into());
            }
        }
        if self.archs.is_empty() || (self.archs.len() != 1 && self.archs.len() != self.nets) {
            return bad(format!(
                "archs lists {} specs for {} networks",
                self.archs.len(),
                self.nets
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        for (name, v) in [
            ("lr_logit", self.lr_logit),
            ("lr_adv", self.lr_adv),
            ("momentum", self.momentum),
            ("weight_decay_logit", self.weight_decay_logit),
            ("weight_decay_adv", self.weight_decay_adv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [("adv_beta1", self.adv_beta1), ("adv_beta2", self.adv_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1), got {v}"));
            }
        }
        if !(self.lr_factor > 0.0 && self.lr_factor.is_finite()) {
            return bad(format!("lr_factor must be positive, got {}", self.lr_factor));
        }
        for (name, m) in [
            ("milestones_logit", &self.milestones_logit),
            ("milestones_adv", &self.milestones_adv),
        ] {
            if m.windows(2).any(|w| w[0] > w[1]) {
                return bad(format!("{name} must be ascending: {m:?}"));
            }
        }
        if self.disc_width == 0 {
            return bad("disc_width must be at least 1".into());
        }
        match self.dataset {
            DataSource::Synth => {
                if self.synth_train_per_class == 0 || self.synth_test_per_class == 0 {
                    return bad("synthetic split sizes must be positive".into());
                }
                if !(self.synth_noise >= 0.0 && self.synth_noise.is_finite()) {
                    return bad(format!("synth_noise must be non-negative, got {}", self.synth_noise));
                }
            }
            DataSource::Idx => {
                for (name, p) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    if p.is_none() {
                        return bad(format!("dataset = idx requires {name}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Raw (unstandardized) train and test splits.
    pub fn load_raw(&self) -> Result<(Dataset, Dataset)> {
        match self.dataset {
            DataSource::Synth => {
                let seed = self.data_seed();
                let gen = |per_class, label, split| {
                    synth_blobs(
                        self.synth_classes,
                        per_class,
                        self.synth_image_size,
                        self.synth_noise,
                        rng::derive_seed(seed, label, 0),
                        split,
                    )
                };
                Ok((
                    gen(self.synth_train_per_class, "data-train", Split::Train)?,
                    gen(self.synth_test_per_class, "data-test", Split::Test)?,
                ))
            }
            DataSource::Idx => {
                let path = |p: &Option<PathBuf>| p.clone().expect("validated");
                let train = load_idx(path(&self.train_images), path(&self.train_labels), Split::Train)?;
                let test = load_idx(path(&self.test_images), path(&self.test_labels), Split::Test)?;
                if train.input_shape() != test.input_shape() {
                    return Err(Error::Data(format!(
                        "train images {:?} and test images {:?} differ in shape",
                        train.shape(),
                        test.shape()
                    )));
                }
                let classes = train.num_classes().max(test.num_classes());
                Ok((train.with_classes(classes)?, test.with_classes(classes)?))
            }
        }
    }

    /// Train and test splits standardized with train-split statistics.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset, Standardizer)> {
        let (mut train, mut test) = self.load_raw()?;
        let st = Standardizer::fit(&train);
        train.standardize(&st)?;
        test.standardize(&st)?;
        Ok((train, test, st))
    }
}
