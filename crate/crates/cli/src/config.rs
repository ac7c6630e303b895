//! The JSON config file: one section per pipeline stage. A file is merged
//! key-by-key over a preset, so it only needs the keys it changes; unknown
//! keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sto_core::derivatives::DerivativeKind;
use sto_core::pipeline::{ExperimentConfig, PrepConfig, ValidationMode, Variant, Widths};
use sto_core::synth::SynthConfig;
use sto_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub synth: SynthConfig,
    pub prep: PrepConfig,
    pub experiment: ExperimentConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig { synth: SynthConfig::default(), prep: PrepConfig::default(), experiment: full_experiment() }
    }
}

fn all_variants() -> Vec<Variant> {
    let mut v = vec![Variant::Sto, Variant::StoDiagnet];
    v.extend(DerivativeKind::ALL.iter().map(|&k| Variant::StvOnly { channels: vec![k] }));
    v.extend([Variant::StrOnly, Variant::FcMlp, Variant::Diagnet, Variant::Conv1d]);
    v
}

fn full_experiment() -> ExperimentConfig {
    ExperimentConfig { variants: all_variants(), ..ExperimentConfig::default() }
}

impl CliConfig {
    /// Small cohort, narrow networks and few epochs: a smoke run that
    /// finishes in a few minutes on one core.
    pub fn quick() -> Self {
        CliConfig {
            synth: SynthConfig {
                n_subjects_per_class: 16,
                extents: [12, 12, 12],
                n_timepoints: 48,
                t_range: Some((40, 48)),
                n_blocks: 8,
                effect_size: 1.0,
                ..SynthConfig::default()
            },
            prep: PrepConfig { grid: [8, 8, 8], ..PrepConfig::default() },
            experiment: ExperimentConfig {
                variants: all_variants(),
                proportions: vec![1.0, 0.5],
                folds: 3,
                lr: 1e-3,
                max_epochs: 30,
                eval_every: 5,
                validation: ValidationMode::Carve { fraction: 0.25 },
                widths: Widths::Mini,
                ..ExperimentConfig::default()
            },
        }
    }

    /// `preset` with the file at `path` merged over it.
    pub fn load(preset: CliConfig, path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(preset);
        };
        let text = std::fs::read_to_string(path)?;
        let overlay: Value = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let mut base = serde_json::to_value(&preset)?;
        merge(&mut base, overlay);
        let cfg: CliConfig = serde_json::from_value(base).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.prep.derivatives.validate()?;
        self.experiment.validate()
    }
}

/// Objects merge recursively; anything else in `overlay` replaces `base`.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

pub fn parse_derivative(s: &str) -> Result<DerivativeKind> {
    DerivativeKind::ALL
        .into_iter()
        .find(|k| k.label().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::InvalidConfig(format!("unknown derivative '{s}' (expected reho, dc, lfcd or vmhc)")))
}

/// `sto`, `sto-diagnet`, `stv-only:reho+dc`, `str`, `fc-mlp`, `diagnet`, `conv1d`.
pub fn parse_variant(s: &str) -> Result<Variant> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let v = match (name.to_ascii_lowercase().as_str(), arg) {
        ("sto", None) => Variant::Sto,
        ("sto-diagnet", None) => Variant::StoDiagnet,
        ("stv-only", Some(chs)) => Variant::StvOnly { channels: chs.split('+').map(parse_derivative).collect::<Result<_>>()? },
        ("stv-only", None) => Variant::StvOnly { channels: DerivativeKind::ALL.to_vec() },
        ("str", None) => Variant::StrOnly,
        ("fc-mlp", None) => Variant::FcMlp,
        ("diagnet", None) => Variant::Diagnet,
        ("conv1d", None) => Variant::Conv1d,
        _ => return Err(Error::InvalidConfig(format!("unknown variant '{s}'"))),
    };
    Ok(v)
}
