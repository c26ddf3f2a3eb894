//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use defectnet::data::AugmentParams;
use defectnet::train::TrainConfig;
use defectnet::{ArchSpec, HeadSpec, LABELS};

/// Every key with its default, in the order `run.meta` lists them.
pub const KEYS: [(&str, &str); 21] = [
    ("arch", "paper-vgg16"),
    ("blocks", ""),
    ("head", "gap"),
    ("fc_widths", "4096,4096"),
    ("input_size", "224"),
    ("freeze_blocks", "0"),
    ("epochs", "50"),
    ("batch_size", "32"),
    ("steps_per_epoch", "250"),
    ("learning_rate", "0.001"),
    ("momentum", "0.9"),
    ("seed", "0"),
    ("rotation_max_deg", "20"),
    ("shift_max_frac", "0.1"),
    ("hflip", "true"),
    ("vflip", "true"),
    ("train_dir", "data/train"),
    ("val_dir", ""),
    ("val_fraction", "0.2"),
    ("pretrained", ""),
    ("output_dir", "run"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Preset name, or `custom` to use `blocks`.
    pub arch: String,
    pub blocks: String,
    pub head: HeadSpec,
    pub input_size: usize,
    pub freeze_blocks: usize,
    pub train: TrainConfig,
    pub augment: AugmentParams,
    pub train_dir: PathBuf,
    /// Separate validation tree; when absent the training tree is split.
    pub val_dir: Option<PathBuf>,
    pub val_fraction: f64,
    /// Archive whose convolution stack initialises the model.
    pub pretrained: Option<PathBuf>,
    pub output_dir: PathBuf,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

fn parse_widths(v: &str) -> Result<Vec<usize>, String> {
    v.split(',')
        .map(|w| parse_num::<usize>("fc_widths", w.trim()))
        .collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_str("").expect("defaults parse")
    }
}

impl RunConfig {
    /// Parses config text. Relative paths are kept as written.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, String> {
        let mut values: Vec<(&str, String)> = KEYS.iter().map(|&(k, v)| (k, v.to_string())).collect();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`, got {raw:?}", i + 1))?;
            let key = key.trim();
            let slot = values
                .iter_mut()
                .find(|(k, _)| *k == key)
                .ok_or_else(|| format!("line {}: unknown key {key:?}", i + 1))?;
            slot.1 = value.trim().to_string();
        }
        let get = |k: &str| values.iter().find(|(key, _)| *key == k).map(|(_, v)| v.as_str()).unwrap();
        let opt_path = |k: &str| Some(get(k)).filter(|v| !v.is_empty()).map(PathBuf::from);

        let head = match get("head") {
            "gap" => HeadSpec::Gap,
            "fc" => HeadSpec::Fc(parse_widths(get("fc_widths"))?),
            other => return Err(format!("head: expected gap or fc, got {other:?}")),
        };
        let cfg = Self {
            arch: get("arch").to_string(),
            blocks: get("blocks").to_string(),
            head,
            input_size: parse_num("input_size", get("input_size"))?,
            freeze_blocks: parse_num("freeze_blocks", get("freeze_blocks"))?,
            train: TrainConfig {
                epochs: parse_num("epochs", get("epochs"))?,
                batch_size: parse_num("batch_size", get("batch_size"))?,
                steps_per_epoch: parse_num("steps_per_epoch", get("steps_per_epoch"))?,
                learning_rate: parse_num("learning_rate", get("learning_rate"))?,
                momentum: parse_num("momentum", get("momentum"))?,
                seed: parse_num("seed", get("seed"))?,
            },
            augment: AugmentParams {
                rotation_max_deg: parse_num("rotation_max_deg", get("rotation_max_deg"))?,
                shift_max_frac: parse_num("shift_max_frac", get("shift_max_frac"))?,
                allow_hflip: parse_bool("hflip", get("hflip"))?,
                allow_vflip: parse_bool("vflip", get("vflip"))?,
                rng_seed: parse_num("seed", get("seed"))?,
            },
            train_dir: PathBuf::from(get("train_dir")),
            val_dir: opt_path("val_dir"),
            val_fraction: parse_num("val_fraction", get("val_fraction"))?,
            pretrained: opt_path("pretrained"),
            output_dir: PathBuf::from(get("output_dir")),
        };
        cfg.train.validate().map_err(|e| e.to_string())?;
        cfg.augment.validate().map_err(|e| e.to_string())?;
        cfg.arch_spec()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.train_dir);
        fix(&mut cfg.output_dir);
        cfg.val_dir.as_mut().map(fix);
        cfg.pretrained.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn arch_spec(&self) -> Result<ArchSpec, String> {
        let classes = LABELS.len();
        let spec = if self.arch == "custom" {
            let blocks = ArchSpec::parse_blocks(&self.blocks).map_err(|e| e.to_string())?;
            ArchSpec::new(blocks, self.head.clone(), classes, self.input_size)
        } else {
            if !self.blocks.is_empty() {
                return Err(format!("blocks is only used with arch = custom, not {:?}", self.arch));
            }
            ArchSpec::preset(&self.arch, self.head.clone(), classes).and_then(|mut s| {
                s.input_size = self.input_size;
                s.validate().map(|_| s)
            })
        }
        .map_err(|e| e.to_string())?;
        if self.freeze_blocks > spec.blocks.len() {
            return Err(format!(
                "freeze_blocks = {} exceeds the {} blocks of the architecture",
                self.freeze_blocks,
                spec.blocks.len()
            ));
        }
        Ok(spec)
    }

    /// Fully resolved `key = value` lines.
    pub fn render(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let fc = match &self.head {
            HeadSpec::Fc(w) => w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            HeadSpec::Gap => KEYS[3].1.to_string(),
        };
        let t = &self.train;
        let a = &self.augment;
        let rows: [(&str, String); 21] = [
            ("arch", self.arch.clone()),
            ("blocks", self.blocks.clone()),
            ("head", self.head.name().to_string()),
            ("fc_widths", fc),
            ("input_size", self.input_size.to_string()),
            ("freeze_blocks", self.freeze_blocks.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("steps_per_epoch", t.steps_per_epoch.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("momentum", t.momentum.to_string()),
            ("seed", t.seed.to_string()),
            ("rotation_max_deg", a.rotation_max_deg.to_string()),
            ("shift_max_frac", a.shift_max_frac.to_string()),
            ("hflip", a.allow_hflip.to_string()),
            ("vflip", a.allow_vflip.to_string()),
            ("train_dir", self.train_dir.display().to_string()),
            ("val_dir", opt(&self.val_dir)),
            ("val_fraction", self.val_fraction.to_string()),
            ("pretrained", opt(&self.pretrained)),
            ("output_dir", self.output_dir.display().to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
