//! Experiment configuration: a flat `key = value` text format plus the
//! assembled [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::meta::{OptimizerKind, OuterScope, TrainConfig, TrainMode};
use crate::objective::FilterMode;
use crate::synth::SyntheticSpec;

/// Where the graph comes from: a quadruple file or the drift generator.
#[derive(Clone, Debug)]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Which prediction directions the evaluation pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Directions {
    Both,
    ObjectOnly,
    SubjectOnly,
}

impl FromStr for Directions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Directions> {
        match s {
            "both" => Ok(Directions::Both),
            "object" => Ok(Directions::ObjectOnly),
            "subject" => Ok(Directions::SubjectOnly),
            other => Err(Error::Config(format!("unknown directions `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub filter: FilterMode,
    pub directions: Directions,
    /// Shots used at meta-test; defaults to the training shots.
    pub shots: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> EvalOptions {
        EvalOptions {
            filter: FilterMode::TimeAware,
            directions: Directions::Both,
            shots: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub train: TrainConfig,
    pub ratios: [f64; 4],
    pub mode: TrainMode,
    pub eval: EvalOptions,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let kv = parse_kv(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::from_kv(&kv, base)
    }

    /// Assemble a config from parsed keys. Unknown keys are rejected so
    /// typos fail loudly. Relative paths resolve against `base`.
    pub fn from_kv(kv: &BTreeMap<String, String>, base: &Path) -> Result<ExperimentConfig> {
        let mut seen: BTreeMap<&str, bool> = BTreeMap::new();
        let get = |key: &'static str, seen: &mut BTreeMap<&str, bool>| -> Option<String> {
            seen.insert(key, true);
            kv.get(key).cloned()
        };

        macro_rules! parse_into {
            ($field:expr, $key:literal, $seen:expr) => {
                if let Some(raw) = get($key, $seen) {
                    $field = raw.parse().map_err(|_| {
                        Error::Config(format!("invalid value `{raw}` for {}", $key))
                    })?;
                }
            };
        }

        let mut train = TrainConfig::default();
        parse_into!(train.eta, "eta", &mut seen);
        parse_into!(train.beta, "beta", &mut seen);
        parse_into!(train.pretrain_lr, "pretrain_lr", &mut seen);
        parse_into!(train.gamma, "gamma", &mut seen);
        parse_into!(train.shots, "shots", &mut seen);
        parse_into!(train.intervals, "intervals", &mut seen);
        parse_into!(train.budget, "budget", &mut seen);
        parse_into!(train.time_bound, "time_bound", &mut seen);
        parse_into!(train.dim, "dim", &mut seen);
        parse_into!(train.layers, "layers", &mut seen);
        parse_into!(train.confidence, "confidence", &mut seen);
        parse_into!(train.kl_variance, "kl_variance", &mut seen);
        parse_into!(train.negatives, "negatives", &mut seen);
        parse_into!(train.epochs, "epochs", &mut seen);
        parse_into!(train.pretrain_epochs, "pretrain_epochs", &mut seen);
        parse_into!(train.batch_size, "batch_size", &mut seen);
        parse_into!(train.inner_steps, "inner_steps", &mut seen);
        parse_into!(train.seed, "seed", &mut seen);
        parse_into!(train.task_fraction, "task_fraction", &mut seen);
        parse_into!(train.clip_norm, "clip_norm", &mut seen);
        if let Some(raw) = get("optimizer", &mut seen) {
            train.optimizer = OptimizerKind::from_str(&raw)?;
        }
        if let Some(raw) = get("outer_scope", &mut seen) {
            train.outer_scope = OuterScope::from_str(&raw)?;
        }
        if let Some(raw) = get("filter_negatives", &mut seen) {
            train.filter_negatives = parse_bool("filter_negatives", &raw)?;
        }

        let data_path = get("data_path", &mut seen);
        let synth_keys = [
            "synth_blocks",
            "synth_entities_per_block",
            "synth_relations",
            "synth_event_rate",
            "synth_horizon",
            "synth_drift_period",
            "synth_arrival_rate",
            "synth_seed",
        ];
        let has_synth = synth_keys.iter().any(|k| kv.contains_key(*k));
        let source = match (data_path, has_synth) {
            (Some(_), true) => {
                return Err(Error::Config(
                    "data_path and synth_* keys are mutually exclusive".into(),
                ))
            }
            (Some(path), false) => {
                let resolved = base.join(path);
                if !resolved.is_file() {
                    return Err(Error::Config(format!(
                        "data_path {} does not exist",
                        resolved.display()
                    )));
                }
                DataSource::File(resolved)
            }
            (None, _) => {
                let mut spec = SyntheticSpec {
                    blocks: 2,
                    entities_per_block: 30,
                    relations: 2,
                    event_rate: 0.4,
                    horizon: 100,
                    drift_period: 25,
                    arrival_rate: 0.4,
                    seed: train.seed,
                };
                parse_into!(spec.blocks, "synth_blocks", &mut seen);
                parse_into!(spec.entities_per_block, "synth_entities_per_block", &mut seen);
                parse_into!(spec.relations, "synth_relations", &mut seen);
                parse_into!(spec.event_rate, "synth_event_rate", &mut seen);
                parse_into!(spec.horizon, "synth_horizon", &mut seen);
                parse_into!(spec.drift_period, "synth_drift_period", &mut seen);
                parse_into!(spec.arrival_rate, "synth_arrival_rate", &mut seen);
                parse_into!(spec.seed, "synth_seed", &mut seen);
                spec.validate()?;
                DataSource::Synthetic(spec)
            }
        };

        let mut ratios = [0.4, 0.25, 0.1, 0.25];
        if let Some(raw) = get("ratios", &mut seen) {
            let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(Error::Config("ratios needs 4 comma-separated values".into()));
            }
            for (slot, part) in ratios.iter_mut().zip(&parts) {
                *slot = part
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid ratio `{part}`")))?;
            }
        }

        let mode = match get("mode", &mut seen) {
            Some(raw) => TrainMode::from_str(&raw)?,
            None => TrainMode::Full,
        };

        let mut eval = EvalOptions::default();
        if let Some(raw) = get("filter", &mut seen) {
            eval.filter = match raw.as_str() {
                "aware" => FilterMode::TimeAware,
                "agnostic" => FilterMode::TimeAgnostic,
                "raw" => FilterMode::Raw,
                other => return Err(Error::Config(format!("unknown filter `{other}`"))),
            };
        }
        if let Some(raw) = get("directions", &mut seen) {
            eval.directions = Directions::from_str(&raw)?;
        }
        if let Some(raw) = get("eval_shots", &mut seen) {
            eval.shots = Some(raw.parse().map_err(|_| {
                Error::Config(format!("invalid value `{raw}` for eval_shots"))
            })?);
        }

        let out_dir = base.join(get("out_dir", &mut seen).unwrap_or_else(|| "out".into()));

        for key in kv.keys() {
            if !seen.contains_key(key.as_str()) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
        }

        train.validate()?;
        Ok(ExperimentConfig {
            source,
            train,
            ratios,
            mode,
            eval,
            out_dir,
        })
    }
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("invalid boolean `{other}` for {key}"))),
    }
}

/// Parse `key = value` lines. `#` starts a comment; blank lines are
/// skipped; duplicate keys are an error.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_config() {
        let text = "\
# demo experiment
seed = 7
dim = 16
mode = static_maml
synth_blocks = 2
synth_horizon = 50
synth_drift_period = 10
ratios = 0.4, 0.25, 0.1, 0.25
out_dir = results
";
        let kv = parse_kv(text).unwrap();
        let cfg = ExperimentConfig::from_kv(&kv, Path::new("/tmp")).unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.dim, 16);
        assert_eq!(cfg.mode, TrainMode::StaticMaml);
        assert!(matches!(cfg.source, DataSource::Synthetic(ref s) if s.horizon == 50));
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/results"));
    }

    #[test]
    fn unknown_key_rejected() {
        let kv = parse_kv("dimension = 4\n").unwrap();
        assert!(matches!(
            ExperimentConfig::from_kv(&kv, Path::new(".")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_equals_is_parse_error_with_line() {
        match parse_kv("seed = 1\nbroken line\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(parse_kv("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn data_and_synth_are_exclusive() {
        let kv = parse_kv("data_path = x.tsv\nsynth_blocks = 2\n").unwrap();
        assert!(ExperimentConfig::from_kv(&kv, Path::new(".")).is_err());
    }

    #[test]
    fn missing_data_file_rejected() {
        let kv = parse_kv("data_path = definitely_missing.tsv\n").unwrap();
        assert!(ExperimentConfig::from_kv(&kv, Path::new("/tmp")).is_err());
    }

    #[test]
    fn synthetic_seed_defaults_to_train_seed() {
        let kv = parse_kv("seed = 42\nsynth_blocks = 2\n").unwrap();
        let cfg = ExperimentConfig::from_kv(&kv, Path::new(".")).unwrap();
        match cfg.source {
            DataSource::Synthetic(spec) => assert_eq!(spec.seed, 42),
            _ => panic!("expected synthetic source"),
        }
    }
}
