//! Flat `key = value` run configuration.
//!
//! Layers, later wins: built-in defaults, `--config FILE`, `--set KEY=VALUE`,
//! dedicated flags, `LUMINA_THREADS`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lumina_core::model::Variant;
use lumina_core::synth::{Effect, SynthConfig};
use lumina_core::training::TrainConfig;

use crate::error::CliError;

/// `(key, description)` for every accepted key, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for synthesis, folds, initialization and batching"),
    ("data", "dataset directory holding manifest.csv"),
    ("out", "run directory (default runs/<cmd>-<timestamp>-s<seed>)"),
    ("checkpoint", "model checkpoint read by attribute"),
    ("network_lookup", "CSV roi_index,roi_name,network_name used to label edges"),
    ("subject", "subject id for spectra, or to restrict attribute to one subject"),
    ("d_in", "regional mixer output width"),
    ("d_out", "GCN layer width (must equal d_in)"),
    ("d_hidden", "classifier hidden width"),
    ("n_layers", "number of graph layers"),
    ("dilations", "comma-separated mixer dilations"),
    ("kernel_size", "mixer kernel width (odd)"),
    ("bipolar_relu", "split connectivity into positive and negative graphs"),
    ("dual_laplacian", "use both smoothing and difference priors"),
    ("neurograph_block", "multi-stream blocks with view attention"),
    ("dropout", "reserved; only 0 is accepted"),
    ("normalization", "reserved; only none is accepted"),
    ("lr", "AdamW learning rate"),
    ("weight_decay", "AdamW decoupled weight decay"),
    ("beta1", "AdamW first-moment decay"),
    ("beta2", "AdamW second-moment decay"),
    ("eps", "AdamW denominator epsilon"),
    ("epochs", "training epochs per fold"),
    ("batch_size", "subjects per step, 0 for full batch"),
    ("k_folds", "cross-validation folds"),
    ("fold", "held-out fold used by train"),
    ("threads", "worker threads, 0 for sequential"),
    ("ig_steps", "integrated-gradients Riemann steps (>= 16)"),
    ("top_fraction", "fraction of unique edges kept in the edge report"),
    ("target", "attributed class: true, 0 or 1"),
    ("synth_subjects", "synthetic cohort size (even)"),
    ("synth_rois", "synthetic ROI count"),
    ("synth_timepoints", "synthetic time points per subject"),
    ("synth_effect", "planted effect: sign or magnitude"),
    ("synth_sites", "number of synthetic sites"),
    ("synth_noise", "synthetic noise level"),
    ("gradcheck_rois", "ROI count of the gradcheck subject"),
    ("gradcheck_timepoints", "time points of the gradcheck subject"),
    ("gradcheck_coords", "parameter coordinates probed by gradcheck"),
    ("gradcheck_step", "central-difference step"),
    ("gradcheck_tolerance", "largest accepted relative error"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKey {
    True,
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub network_lookup: Option<PathBuf>,
    pub subject: Option<String>,
    pub fold: usize,
    pub ig_steps: usize,
    pub top_fraction: f64,
    pub target: TargetKey,
    pub synth: SynthConfig,
    pub gradcheck_rois: usize,
    pub gradcheck_timepoints: usize,
    pub gradcheck_coords: usize,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
    pub dropout: f64,
    pub normalization: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: None,
            out: None,
            checkpoint: None,
            network_lookup: None,
            subject: None,
            fold: 0,
            ig_steps: 64,
            top_fraction: 0.01,
            target: TargetKey::True,
            synth: SynthConfig::default(),
            gradcheck_rois: 8,
            gradcheck_timepoints: 20,
            gradcheck_coords: 64,
            gradcheck_step: 1e-6,
            gradcheck_tolerance: 1e-4,
            dropout: 0.0,
            normalization: "none".into(),
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn boolean(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "seed" => {
                t.seed = num(key, value)?;
                self.synth.seed = t.seed;
            }
            "data" => self.data = path(value),
            "out" => self.out = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "network_lookup" => self.network_lookup = path(value),
            "subject" => self.subject = (!value.is_empty()).then(|| value.to_owned()),
            "d_in" => t.hp.d_in = num(key, value)?,
            "d_out" => t.hp.d_out = num(key, value)?,
            "d_hidden" => t.hp.d_hidden = num(key, value)?,
            "n_layers" => t.hp.n_layers = num(key, value)?,
            "dilations" => {
                t.hp.dilations = value
                    .split(',')
                    .map(|d| num(key, d.trim()))
                    .collect::<Result<_, _>>()?
            }
            "kernel_size" => t.hp.kernel_size = num(key, value)?,
            "bipolar_relu" => t.switches.bipolar_relu = boolean(key, value)?,
            "dual_laplacian" => t.switches.dual_laplacian = boolean(key, value)?,
            "neurograph_block" => t.switches.neurograph_block = boolean(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "normalization" => self.normalization = value.to_owned(),
            "lr" => t.optimizer.lr = num(key, value)?,
            "weight_decay" => t.optimizer.weight_decay = num(key, value)?,
            "beta1" => t.optimizer.beta1 = num(key, value)?,
            "beta2" => t.optimizer.beta2 = num(key, value)?,
            "eps" => t.optimizer.eps = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "k_folds" => t.k_folds = num(key, value)?,
            "fold" => self.fold = num(key, value)?,
            "threads" => t.threads = num(key, value)?,
            "ig_steps" => self.ig_steps = num(key, value)?,
            "top_fraction" => self.top_fraction = num(key, value)?,
            "target" => {
                self.target = match value {
                    "true" => TargetKey::True,
                    "0" | "1" => TargetKey::Class(num(key, value)?),
                    _ => return Err(CliError::Config(format!("target: expected true, 0 or 1, got {value:?}"))),
                }
            }
            "synth_subjects" => self.synth.n_subjects = num(key, value)?,
            "synth_rois" => self.synth.n_rois = num(key, value)?,
            "synth_timepoints" => self.synth.n_timepoints = num(key, value)?,
            "synth_effect" => {
                self.synth.effect = Effect::parse(value).map_err(|e| CliError::Config(format!("{key}: {e}")))?
            }
            "synth_sites" => self.synth.n_sites = num(key, value)?,
            "synth_noise" => self.synth.noise = num(key, value)?,
            "gradcheck_rois" => self.gradcheck_rois = num(key, value)?,
            "gradcheck_timepoints" => self.gradcheck_timepoints = num(key, value)?,
            "gradcheck_coords" => self.gradcheck_coords = num(key, value)?,
            "gradcheck_step" => self.gradcheck_step = num(key, value)?,
            "gradcheck_tolerance" => self.gradcheck_tolerance = num(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "seed" => t.seed.to_string(),
            "data" => show_path(&self.data),
            "out" => show_path(&self.out),
            "checkpoint" => show_path(&self.checkpoint),
            "network_lookup" => show_path(&self.network_lookup),
            "subject" => self.subject.clone().unwrap_or_default(),
            "d_in" => t.hp.d_in.to_string(),
            "d_out" => t.hp.d_out.to_string(),
            "d_hidden" => t.hp.d_hidden.to_string(),
            "n_layers" => t.hp.n_layers.to_string(),
            "dilations" => t.hp.dilations.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            "kernel_size" => t.hp.kernel_size.to_string(),
            "bipolar_relu" => t.switches.bipolar_relu.to_string(),
            "dual_laplacian" => t.switches.dual_laplacian.to_string(),
            "neurograph_block" => t.switches.neurograph_block.to_string(),
            "dropout" => self.dropout.to_string(),
            "normalization" => self.normalization.clone(),
            "lr" => t.optimizer.lr.to_string(),
            "weight_decay" => t.optimizer.weight_decay.to_string(),
            "beta1" => t.optimizer.beta1.to_string(),
            "beta2" => t.optimizer.beta2.to_string(),
            "eps" => t.optimizer.eps.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "k_folds" => t.k_folds.to_string(),
            "fold" => self.fold.to_string(),
            "threads" => t.threads.to_string(),
            "ig_steps" => self.ig_steps.to_string(),
            "top_fraction" => self.top_fraction.to_string(),
            "target" => match self.target {
                TargetKey::True => "true".into(),
                TargetKey::Class(c) => c.to_string(),
            },
            "synth_subjects" => self.synth.n_subjects.to_string(),
            "synth_rois" => self.synth.n_rois.to_string(),
            "synth_timepoints" => self.synth.n_timepoints.to_string(),
            "synth_effect" => self.synth.effect.to_string(),
            "synth_sites" => self.synth.n_sites.to_string(),
            "synth_noise" => self.synth.noise.to_string(),
            "gradcheck_rois" => self.gradcheck_rois.to_string(),
            "gradcheck_timepoints" => self.gradcheck_timepoints.to_string(),
            "gradcheck_coords" => self.gradcheck_coords.to_string(),
            "gradcheck_step" => self.gradcheck_step.to_string(),
            "gradcheck_tolerance" => self.gradcheck_tolerance.to_string(),
            _ => unreachable!("every key in KEYS is handled"),
        }
    }

    /// Apply a `key = value` document. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("{origin}:{}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, file: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(file)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", file.display())))?;
        self.apply_text(&text, &file.display().to_string())
    }

    /// `KEY=VALUE` from the command line.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn apply_variant(&mut self, variant: Variant) {
        self.train.switches = variant.switches();
    }

    /// Every key with its effective value; parses back to the same config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key));
        }
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.fold >= self.train.k_folds {
            return Err(CliError::Config(format!(
                "fold {} out of range for k_folds = {}",
                self.fold, self.train.k_folds
            )));
        }
        if self.dropout != 0.0 || self.normalization != "none" {
            return Err(CliError::Config("dropout and normalization are reserved keys; use 0 and none".into()));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(CliError::Config("top_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Key reference appended to `--help`.
pub fn help_text() -> String {
    let defaults = RunConfig::default();
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (--config FILE with `key = value` lines, or --set key=value):\n");
    for (key, doc) in KEYS {
        let value = defaults.get(key);
        let shown = if value.is_empty() { "unset".to_owned() } else { value };
        let _ = writeln!(s, "  {key:<width$}  {doc} [default: {shown}]");
    }
    s.push_str("\nEnvironment:\n  LUMINA_THREADS  overrides `threads` (0 = sequential)\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips_defaults() {
        let cfg = RunConfig::default();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.echo(), "echo").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn echo_round_trips_every_key_changed() {
        let mut cfg = RunConfig::default();
        for line in [
            "seed = 17",
            "data = some/dir",
            "out = runs/x",
            "checkpoint = a.ckpt",
            "network_lookup = nets.csv",
            "subject = sub-0003",
            "d_in = 12",
            "d_out = 12",
            "d_hidden = 5",
            "n_layers = 1",
            "dilations = 1, 3",
            "kernel_size = 5",
            "bipolar_relu = false",
            "dual_laplacian = false",
            "neurograph_block = false",
            "dropout = 0.5",
            "normalization = layer",
            "lr = 0.001",
            "weight_decay = 0",
            "beta1 = 0.8",
            "beta2 = 0.99",
            "eps = 1e-10",
            "epochs = 3",
            "batch_size = 4",
            "k_folds = 3",
            "fold = 2",
            "threads = 2",
            "ig_steps = 20",
            "top_fraction = 0.1",
            "target = 1",
            "synth_subjects = 12",
            "synth_rois = 9",
            "synth_timepoints = 30",
            "synth_effect = magnitude",
            "synth_sites = 3",
            "synth_noise = 0.5",
            "gradcheck_rois = 5",
            "gradcheck_timepoints = 11",
            "gradcheck_coords = 8",
            "gradcheck_step = 0.00001",
            "gradcheck_tolerance = 0.001",
        ] {
            cfg.apply_text(line, "t").unwrap();
        }
        for (key, _) in KEYS {
            assert_ne!(cfg.get(key), RunConfig::default().get(key), "{key} untouched");
        }
        let mut back = RunConfig::default();
        back.apply_text(&cfg.echo(), "echo").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.echo(), cfg.echo());
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = RunConfig::default().apply_text("# c\nepochs = 3\nlearning_rate = 1\n", "f.cfg").unwrap_err();
        assert_eq!(err.class(), "ConfigError");
        assert!(err.message().contains("f.cfg:3"), "{}", err.message());
    }

    #[test]
    fn malformed_values_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("epochs", "-1").is_err());
        assert!(cfg.set("bipolar_relu", "yes").is_err());
        assert!(cfg.set("target", "2").is_err());
        assert!(cfg.apply_assignment("epochs").is_err());
        assert!(cfg.apply_text("no equals sign", "t").is_err());
    }

    #[test]
    fn seed_feeds_synthesis() {
        let mut cfg = RunConfig::default();
        cfg.set("seed", "9").unwrap();
        assert_eq!(cfg.synth.seed, 9);
    }

    #[test]
    fn help_lists_every_key() {
        let help = help_text();
        for (key, _) in KEYS {
            assert!(help.contains(&format!("  {key} ")), "{key}");
        }
    }

    #[test]
    fn reserved_keys_only_take_inert_values() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.set("dropout", "0.1").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("normalization", "batch").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fold_range_checked() {
        let mut cfg = RunConfig::default();
        cfg.set("fold", "5").unwrap();
        assert!(cfg.validate().is_err());
    }
}
