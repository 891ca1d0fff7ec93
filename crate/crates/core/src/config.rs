//! Flat `key = value` configuration with documented defaults.
//!
//! Every accepted key is listed in [`KEYS`]; unknown keys are rejected both
//! in files and in `--set` overrides. [`Config::echo`] renders the full,
//! sorted key set and is what checkpoints store and model ids hash.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Text,
    Choice(&'static [&'static str]),
    IntList,
}

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub doc: &'static str,
}

const CLIP_MODES: &[&str] = &["route_to_kth", "detach_clipped"];
const FGSM_SCOPES: &[&str] = &["both", "input_only"];
const NORMS: &[&str] = &["l1", "l2"];
const BD_FITS: &[&str] = &["cubic", "pchip"];

macro_rules! key {
    ($k:expr, $d:expr, $kind:expr, $doc:expr) => {
        KeySpec {
            key: $k,
            default: $d,
            kind: $kind,
            doc: $doc,
        }
    };
}

pub const KEYS: &[KeySpec] = &[
    key!("seed", "0", Kind::Int, "master seed for initialization, noise and sampling"),
    key!("data.path", "", Kind::Text, "frame directory (or directory of clip directories); empty = synthetic moving shapes"),
    key!("data.crop", "64", Kind::Int, "training crop size in pixels"),
    key!("data.gop", "10", Kind::Int, "GoP size for sequence coding"),
    key!("data.max_frames", "100", Kind::Int, "frames loaded per sequence"),
    key!("data.seed", "0", Kind::Int, "seed of the synthetic corpus and crop sampler"),
    key!("data.synthetic_shapes", "2", Kind::Int, "moving rectangles per synthetic clip"),
    key!("data.synthetic_speed", "3.0", Kind::Float, "maximum synthetic shape speed (pixels/frame)"),
    key!("codec.h", "4", Kind::Int, "ensemble members per decoder"),
    key!("codec.latent_channels_mv", "64", Kind::Int, "MV latent channels"),
    key!("codec.latent_channels_res", "96", Kind::Int, "residual latent channels"),
    key!("codec.hidden_channels", "128", Kind::Int, "auto-encoder hidden width"),
    key!("codec.backbone_channels", "64", Kind::Int, "ensemble decoder backbone output channels"),
    key!("codec.branch_channels", "32", Kind::Int, "ensemble branch hidden channels"),
    key!("codec.motion_channels", "32", Kind::Int, "motion network width per pyramid level"),
    key!("codec.motion_levels", "3", Kind::Int, "motion network pyramid levels"),
    key!("codec.refine_channels", "64", Kind::Int, "refine network width"),
    key!("codec.tail_mass", "1e-9", Kind::Float, "entropy model tail mass / likelihood floor"),
    key!("loss.k", "1", Kind::Int, "rank of the clipping member in the ensemble-aware loss"),
    key!("loss.clip_mode", "route_to_kth", Kind::Choice(CLIP_MODES), "gradient semantics of clipped members"),
    key!("loss.lambda", "1024", Kind::Float, "rate-distortion trade-off"),
    key!("fgsm.enabled", "true", Kind::Bool, "adversarial perturbation of the current frame"),
    key!("fgsm.epsilon", "0.0156862745", Kind::Float, "perturbation magnitude (4/255)"),
    key!("fgsm.scope", "both", Kind::Choice(FGSM_SCOPES), "perturb input and target, or input only"),
    key!("train.warmup_steps", "2000", Kind::Int, "inter-coding warm-up steps"),
    key!("train.total_steps", "20000", Kind::Int, "total optimizer steps"),
    key!("train.lr_initial", "1e-4", Kind::Float, "learning rate before decay"),
    key!("train.lr_decayed", "1e-5", Kind::Float, "learning rate after decay"),
    key!("train.lr_decay_step", "18000", Kind::Int, "step at which the learning rate drops"),
    key!("train.motion_loss_weight", "0", Kind::Float, "weight of the warp MSE of the raw estimated flow during warm-up (scaled by lambda)"),
    key!("train.batch", "8", Kind::Int, "clips per optimizer step"),
    key!("train.weight_decay", "1e-4", Kind::Float, "decoupled weight decay"),
    key!("train.grad_clip", "1.0", Kind::Float, "global gradient-norm clip"),
    key!("train.checkpoint_every", "5000", Kind::Int, "checkpoint period in steps (0 = final only)"),
    key!("train.log_every", "100", Kind::Int, "metrics log period in steps"),
    key!("train.out_dir", "runs/default", Kind::Text, "directory for checkpoints and metrics"),
    key!("viz.norm", "l2", Kind::Choice(NORMS), "aleatoric map norm"),
    key!("viz.gap_threshold", "0.1", Kind::Float, "minimum quantization gap that gets perturbed"),
    key!("viz.fraction", "0.2", Kind::Float, "perturbation as a fraction of the gap"),
    key!("eval.bd_fit", "cubic", Kind::Choice(BD_FITS), "BD-rate interpolation"),
    key!("ablate.h_values", "1,2,4", Kind::IntList, "ensemble sizes in the ablation grid"),
    key!("ablate.k_values", "", Kind::IntList, "k values (empty = 1..h)"),
    key!("ablate.fgsm", "false", Kind::Bool, "also train the FGSM-enabled variant of every cell"),
];

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

fn validate(spec: &KeySpec, value: &str) -> Result<()> {
    let bad = |what: &str| Err(Error::Config(format!("{}: expected {what}, got {value:?}", spec.key)));
    match spec.kind {
        Kind::Int => {
            if value.parse::<i64>().is_err() {
                return bad("an integer");
            }
        }
        Kind::Float => {
            if !value.parse::<f64>().map(f64::is_finite).unwrap_or(false) {
                return bad("a finite number");
            }
        }
        Kind::Bool => {
            if parse_bool(value).is_none() {
                return bad("true/false");
            }
        }
        Kind::Text => {}
        Kind::Choice(options) => {
            if !options.contains(&value) {
                return bad(&format!("one of {options:?}"));
            }
        }
        Kind::IntList => {
            if parse_list(value).is_none() {
                return bad("a comma-separated list of integers");
            }
        }
    }
    Ok(())
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "on" | "yes" => Some(true),
        "false" | "0" | "off" | "no" => Some(false),
        _ => None,
    }
}

fn parse_list(v: &str) -> Option<Vec<usize>> {
    if v.trim().is_empty() {
        return Some(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|k| (k.key.to_string(), k.default.to_string()))
                .collect(),
        }
    }
}

impl Config {
    /// Defaults overridden by the `key = value` lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
            };
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = spec(key).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        validate(spec, value)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` override strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Result<Self> {
        self.set(key, &value.to_string())?;
        Ok(self)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("config key {key:?} is not declared"))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer")))
    }

    pub fn f32(&self, key: &str) -> Result<f32> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key}: expected a number")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        parse_bool(self.get(key)).ok_or_else(|| Error::Config(format!("{key}: expected true/false")))
    }

    pub fn list(&self, key: &str) -> Result<Vec<usize>> {
        parse_list(self.get(key)).ok_or_else(|| Error::Config(format!("{key}: expected an integer list")))
    }

    /// Canonical `key=value` listing of every key, sorted.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    /// Human-readable list of keys, defaults and descriptions.
    pub fn help() -> String {
        let mut s = String::from("configuration keys (key = default: description):\n");
        for k in KEYS {
            s.push_str(&format!("  {} = {}: {}\n", k.key, k.default, k.doc));
        }
        s
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.echo())
    }
}
