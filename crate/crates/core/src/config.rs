//! Flat JSON experiment configuration, presets and `--key value` overrides.
//!
//! Layers are applied in order: defaults, preset, config file, command-line
//! overrides. Every key is checked against the known set, so typos fail
//! loudly instead of silently falling back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::nn::KlDirection;
use crate::strategies::{AnnealSchedule, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synth,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Dirichlet,
    Pathological,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    FedAvg,
    FedProx,
    PFedSd,
    FedCkd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub synth_classes: usize,
    pub synth_per_class: usize,
    pub synth_dim: usize,
    pub synth_spread: f64,
    pub idx_images: Option<String>,
    pub idx_labels: Option<String>,

    pub partition: PartitionKind,
    pub alpha: f64,
    /// Classes per client for the pathological partition.
    pub classes_per_client: usize,
    pub test_fraction: f64,

    pub n_clients: usize,
    pub participation_rate: f64,
    pub rounds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,

    pub strategy: StrategyChoice,
    pub mu: f64,
    pub lambda0: f64,
    pub tau: f64,
    pub gamma: f64,
    pub annealing: bool,
    pub global_teacher: bool,
    pub historical_teacher: bool,
    pub kl_direction: KlDirection,
    pub tau_squared: bool,
    /// Aggregate with `|D_k|/|D|` over all clients instead of renormalizing
    /// over the round's participants.
    pub literal_weights: bool,

    pub master_seed: u64,
    pub repeats: usize,
    pub output_dir: Option<String>,
    /// Worker threads for client updates; 0 uses the rayon default.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synth,
            synth_classes: 10,
            synth_per_class: 200,
            synth_dim: 32,
            synth_spread: 1.0,
            idx_images: None,
            idx_labels: None,
            partition: PartitionKind::Dirichlet,
            alpha: 0.1,
            classes_per_client: 2,
            test_fraction: 0.2,
            n_clients: 20,
            participation_rate: 1.0,
            rounds: 50,
            epochs: 5,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            hidden: vec![64],
            strategy: StrategyChoice::FedCkd,
            mu: 0.01,
            lambda0: 0.5,
            tau: 3.0,
            gamma: 0.99,
            annealing: true,
            global_teacher: true,
            historical_teacher: true,
            kl_direction: KlDirection::TeacherStudent,
            tau_squared: false,
            literal_weights: false,
            master_seed: 0,
            repeats: 1,
            output_dir: None,
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        fn range(key: &str, ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, msg()))
            }
        }
        range("participation_rate", self.participation_rate > 0.0 && self.participation_rate <= 1.0, || {
            format!("must be in (0,1], got {}", self.participation_rate)
        })?;
        range("batch_size", self.batch_size >= 1, || "must be >= 1".into())?;
        range("tau", self.tau > 0.0 && self.tau.is_finite(), || format!("must be > 0, got {}", self.tau))?;
        range("gamma", self.gamma > 0.0 && self.gamma <= 1.0, || {
            format!("must be in (0,1], got {}", self.gamma)
        })?;
        range("lambda0", self.lambda0 >= 0.0 && self.lambda0.is_finite(), || {
            format!("must be >= 0, got {}", self.lambda0)
        })?;
        range("mu", self.mu >= 0.0 && self.mu.is_finite(), || format!("must be >= 0, got {}", self.mu))?;
        range("lr", self.lr >= 0.0 && self.lr.is_finite(), || format!("must be >= 0, got {}", self.lr))?;
        range("momentum", (0.0..1.0).contains(&self.momentum), || {
            format!("must be in [0,1), got {}", self.momentum)
        })?;
        range("weight_decay", self.weight_decay >= 0.0, || {
            format!("must be >= 0, got {}", self.weight_decay)
        })?;
        range("test_fraction", self.test_fraction > 0.0 && self.test_fraction < 1.0, || {
            format!("must be in (0,1), got {}", self.test_fraction)
        })?;
        range("alpha", self.alpha > 0.0 && self.alpha.is_finite(), || format!("must be > 0, got {}", self.alpha))?;
        range("n_clients", self.n_clients >= 1, || "must be >= 1".into())?;
        range("n_clients", self.partition != PartitionKind::Dirichlet || self.n_clients >= 2, || {
            "dirichlet partition needs >= 2 clients".into()
        })?;
        range("classes_per_client", self.classes_per_client >= 1, || "must be >= 1".into())?;
        range("repeats", self.repeats >= 1, || "must be >= 1".into())?;
        range("hidden", !self.hidden.contains(&0), || "layer widths must be >= 1".into())?;
        if self.dataset == DatasetKind::Synth {
            range("synth_classes", self.synth_classes >= 1, || "must be >= 1".into())?;
            range("synth_per_class", self.synth_per_class >= 1, || "must be >= 1".into())?;
            range("synth_dim", self.synth_dim >= 1, || "must be >= 1".into())?;
            range("synth_spread", self.synth_spread > 0.0, || "must be > 0".into())?;
        } else {
            range("idx_images", self.idx_images.is_some(), || "required for dataset=idx".into())?;
            range("idx_labels", self.idx_labels.is_some(), || "required for dataset=idx".into())?;
        }
        Ok(())
    }

    pub fn strategy_kind(&self) -> StrategyKind {
        match self.strategy {
            StrategyChoice::FedAvg => StrategyKind::FedAvg,
            StrategyChoice::FedProx => StrategyKind::FedProx { mu: self.mu },
            StrategyChoice::PFedSd => StrategyKind::PFedSd {
                lambda: self.lambda0,
                tau: self.tau,
            },
            StrategyChoice::FedCkd => StrategyKind::FedCkd {
                schedule: AnnealSchedule {
                    lambda0: self.lambda0,
                    gamma: self.gamma,
                    enabled: self.annealing,
                },
                tau: self.tau,
                global_teacher: self.global_teacher,
                historical_teacher: self.historical_teacher,
            },
        }
    }

    /// The settings that determine a single run's results: `output_dir` and
    /// `threads` are dropped and `repeats` pinned to 1. Feeding this back as a
    /// config file replays the run.
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let map = v.as_object_mut().expect("struct serializes to an object");
        map.remove("output_dir");
        map.remove("threads");
        map.insert("repeats".into(), Value::from(1));
        v
    }
}

/// Built-in configurations. Paper-scale presets run on synthetic data unless
/// IDX paths are supplied.
pub const PRESETS: &[(&str, &str)] = &[
    ("paper-n20-practical", "n=20, r=1.0, T=50, Dirichlet alpha=0.1"),
    ("paper-n20-pathological", "n=20, r=1.0, T=50, s=2 classes per client"),
    ("paper-n100-practical", "n=100, r=0.1, T=100, Dirichlet alpha=0.1"),
    ("paper-cifar100-n20-practical", "n=20, r=1.0, T=50, alpha=0.1, 100 classes"),
    ("desk-synth-heterogeneous", "10 clients, alpha=0.1, 30 rounds, synthetic blobs"),
    ("desk-synth-iid", "10 clients, alpha=1000, 30 rounds, synthetic blobs"),
];

pub fn preset(name: &str) -> Result<Map<String, Value>> {
    let v = match name {
        "paper-n20-practical" => serde_json::json!({
            "n_clients": 20, "participation_rate": 1.0, "rounds": 50,
            "partition": "dirichlet", "alpha": 0.1,
        }),
        "paper-n20-pathological" => serde_json::json!({
            "n_clients": 20, "participation_rate": 1.0, "rounds": 50,
            "partition": "pathological", "classes_per_client": 2,
        }),
        "paper-n100-practical" => serde_json::json!({
            "n_clients": 100, "participation_rate": 0.1, "rounds": 100,
            "partition": "dirichlet", "alpha": 0.1,
        }),
        "paper-cifar100-n20-practical" => serde_json::json!({
            "n_clients": 20, "participation_rate": 1.0, "rounds": 50,
            "partition": "dirichlet", "alpha": 0.1,
            "synth_classes": 100, "synth_per_class": 60, "synth_dim": 128,
        }),
        "desk-synth-heterogeneous" => desk_synth(0.1),
        "desk-synth-iid" => desk_synth(1000.0),
        other => {
            return Err(Error::config(
                "preset",
                format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.iter().map(|p| p.0).collect::<Vec<_>>().join(", ")
                ),
            ))
        }
    };
    Ok(match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    })
}

fn desk_synth(alpha: f64) -> Value {
    serde_json::json!({
        "dataset": "synth",
        "synth_classes": 10, "synth_per_class": 200, "synth_dim": 32, "synth_spread": 1.0,
        "partition": "dirichlet", "alpha": alpha,
        "n_clients": 10, "participation_rate": 1.0, "rounds": 30,
        "epochs": 5, "batch_size": 64, "hidden": [64],
    })
}

/// Applies `updates` on top of `base`, rejecting unknown keys and values of
/// the wrong type. Errors name the offending key.
fn merge(base: &mut Map<String, Value>, updates: Map<String, Value>) -> Result<()> {
    for (key, value) in updates {
        if !base.contains_key(&key) {
            return Err(Error::config(key, "unknown key"));
        }
        let mut probe = base.clone();
        probe.insert(key.clone(), value.clone());
        if let Err(e) = serde_json::from_value::<ExperimentConfig>(Value::Object(probe)) {
            return Err(Error::config(key, e.to_string()));
        }
        base.insert(key, value);
    }
    Ok(())
}

/// Interprets a raw flag value: string-typed keys take it verbatim,
/// everything else is parsed as JSON.
fn override_value(base: &Map<String, Value>, key: &str, raw: &str) -> Value {
    match base.get(key) {
        Some(Value::String(_)) | Some(Value::Null) => Value::String(raw.to_string()),
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    }
}

fn normalize_key(key: &str) -> String {
    key.trim_start_matches("--").replace('-', "_")
}

/// Builds a validated config from an optional preset, an optional flat JSON
/// file and `(key, value)` overrides, in increasing precedence.
pub fn parse_config(
    file: Option<&Path>,
    preset_name: Option<&str>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let mut map = match serde_json::to_value(ExperimentConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config serializes to an object"),
    };
    if let Some(name) = preset_name {
        merge(&mut map, preset(name)?)?;
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        match parsed {
            Value::Object(m) => merge(&mut map, m)?,
            _ => return Err(Error::config("<file>", "config must be a flat JSON object")),
        }
    }
    for (key, raw) in overrides {
        let key = normalize_key(key);
        let value = override_value(&map, &key, raw);
        let mut one = Map::new();
        one.insert(key, value);
        merge(&mut map, one)?;
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(Value::Object(map)).map_err(|e| Error::config("<config>", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
