//! End-to-end experiment pipelines: ingest/generate, split, train, adapt,
//! evaluate, and emit artifacts.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DataSource, Directions, EvalOptions, ExperimentConfig};
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::kgstore::{
    build_task, chronological_split, GraphAccess, Role, SplitAssignment, TemporalKG,
};
use crate::meta::{self, MetaState, TrainConfig, TrainMode};
use crate::objective::{aggregate_metrics, rank_query, MetricsReport, RankedQuery, Slot};
use crate::synth::generate_synthetic;

/// Shots available at meta-test: a fixed count or a per-entity draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShotSpec {
    Fixed(usize),
    Random { lo: usize, hi: usize },
}

impl ShotSpec {
    pub fn label(&self) -> String {
        match self {
            ShotSpec::Fixed(k) => format!("{k}"),
            ShotSpec::Random { lo, hi } => format!("random{lo}-{hi}"),
        }
    }
}

impl std::str::FromStr for ShotSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<ShotSpec> {
        if s.eq_ignore_ascii_case("r") {
            return Ok(ShotSpec::Random { lo: 1, hi: 5 });
        }
        s.parse::<usize>()
            .map(ShotSpec::Fixed)
            .map_err(|_| Error::Config(format!("invalid shot spec `{s}`")))
    }
}

const CTX_EVAL_SHOTS: u64 = 7;

/// Load the graph named by the experiment source.
pub fn load_graph(source: &DataSource) -> Result<TemporalKG> {
    match source {
        DataSource::File(path) => {
            let file = fs::File::open(path)?;
            TemporalKG::ingest_tsv(BufReader::new(file))
        }
        DataSource::Synthetic(spec) => generate_synthetic(spec),
    }
}

/// Adapt to every eligible meta-test entity and rank all of its query
/// facts, both directions, in the filtered setting.
pub fn evaluate(
    kg: &TemporalKG,
    graph: &dyn GraphAccess,
    phi: &ModelParams,
    split: &SplitAssignment,
    config: &TrainConfig,
    eval: &EvalOptions,
    shots: ShotSpec,
) -> Result<(MetricsReport, Vec<RankedQuery>)> {
    let mut ranked = Vec::new();
    let settings = config.encode_settings();
    for entity in split.entities_with_role(Role::MetaTest) {
        let k = match shots {
            ShotSpec::Fixed(k) => k,
            ShotSpec::Random { lo, hi } => {
                let mut rng = ChaCha8Rng::seed_from_u64(meta::mix_seed(&[
                    config.seed,
                    CTX_EVAL_SHOTS,
                    entity as u64,
                ]));
                rng.gen_range(lo..=hi)
            }
        };
        let task = match build_task(kg, entity, k, config.intervals) {
            Ok(task) => task,
            Err(Error::TaskConstruction { .. }) => continue,
            Err(other) => return Err(other),
        };
        let adapted = meta::meta_test_adapt(phi, graph, entity, &task.support, config)?;
        for (idx, interval) in task.query_intervals.iter().enumerate() {
            for fact in interval {
                let slots: &[Slot] = match eval.directions {
                    Directions::Both => &[Slot::Object, Slot::Subject],
                    Directions::ObjectOnly => &[Slot::Object],
                    Directions::SubjectOnly => &[Slot::Subject],
                };
                for &slot in slots {
                    ranked.push(rank_query(
                        graph,
                        &adapted,
                        settings,
                        fact,
                        slot,
                        eval.filter,
                        idx + 1,
                    )?);
                }
            }
        }
    }
    let report = aggregate_metrics(&ranked)?;
    Ok((report, ranked))
}

/// Mean of the per-query uniform-ranking reciprocal-rank expectation,
/// `H_n / n` with `n` the filtered candidate count.
pub fn uniform_baseline(ranked: &[RankedQuery]) -> f64 {
    let total: f64 = ranked
        .iter()
        .map(|r| crate::objective::uniform_mrr_expectation(r.candidate_count))
        .sum();
    total / ranked.len() as f64
}

/// Everything one experiment run leaves on disk.
#[derive(Debug)]
pub struct RunArtifacts {
    pub metrics: MetricsReport,
    pub state: MetaState,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct OutputTracker {
    files: Vec<PathBuf>,
}

impl OutputTracker {
    fn write(&mut self, path: PathBuf, contents: &[u8]) -> Result<()> {
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn discard_all(&mut self) {
        for path in self.files.drain(..) {
            let _ = fs::remove_file(path);
        }
    }
}

/// Run the full pipeline: load or generate the graph, split it, pretrain,
/// meta-train in the configured mode, adapt to every meta-test entity,
/// rank, and write `metrics.json`, `metrics.csv`, `train_log.jsonl`,
/// `checkpoint.json`, and `split.txt` into the output directory. Partial
/// outputs are removed when any stage fails.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    fs::create_dir_all(&config.out_dir)?;
    let mut tracker = OutputTracker { files: Vec::new() };
    match run_experiment_inner(config, &mut tracker) {
        Ok(artifacts) => Ok(artifacts),
        Err(e) => {
            tracker.discard_all();
            Err(e)
        }
    }
}

fn run_experiment_inner(
    config: &ExperimentConfig,
    tracker: &mut OutputTracker,
) -> Result<RunArtifacts> {
    let stage = |name: &'static str| move |e: Error| e.in_stage(name);

    let kg = load_graph(&config.source).map_err(stage("ingest"))?;
    let split = chronological_split(&kg, config.ratios).map_err(stage("split"))?;

    let state = meta::meta_train(&kg, &kg, &split, &config.train, config.mode)
        .map_err(stage("meta_train"))?;

    let shots = ShotSpec::Fixed(config.eval.shots.unwrap_or(config.train.shots));
    let (metrics, _) = evaluate(&kg, &kg, &state.phi, &split, &config.train, &config.eval, shots)
        .map_err(stage("eval"))?;

    write_artifacts(config, &kg, &split, &state, &metrics, tracker).map_err(stage("emit"))?;
    Ok(RunArtifacts {
        metrics,
        state,
        out_dir: config.out_dir.clone(),
        files: tracker.files.clone(),
    })
}

fn write_artifacts(
    config: &ExperimentConfig,
    kg: &TemporalKG,
    split: &SplitAssignment,
    state: &MetaState,
    metrics: &MetricsReport,
    tracker: &mut OutputTracker,
) -> Result<()> {
    let dir = &config.out_dir;

    let mut json = serde_json::to_string_pretty(metrics)?;
    json.push('\n');
    tracker.write(dir.join("metrics.json"), json.as_bytes())?;

    let mut csv = Vec::new();
    metrics.write_csv(&mut csv)?;
    tracker.write(dir.join("metrics.csv"), &csv)?;

    let mut log = String::new();
    for record in &state.log {
        writeln!(log, "{}", serde_json::to_string(record)?)
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    tracker.write(dir.join("train_log.jsonl"), log.as_bytes())?;

    let mut checkpoint = Vec::new();
    state.phi.save_checkpoint(&mut checkpoint)?;
    tracker.write(dir.join("checkpoint.json"), &checkpoint)?;

    let mut manifest = Vec::new();
    split.write_manifest(kg, &mut manifest)?;
    tracker.write(dir.join("split.txt"), &manifest)?;
    Ok(())
}

/// One ablation-table line.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub mode: TrainMode,
    pub seed: u64,
    pub metrics: MetricsReport,
    /// Mean parameter drift per outer pass, from the training log.
    pub mean_drift: f64,
}

#[derive(Clone, Debug, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub intervals: usize,
}

impl AblationTable {
    pub fn mean_mrr(&self, mode: TrainMode) -> f64 {
        let rows: Vec<&AblationRow> = self.rows.iter().filter(|r| r.mode == mode).collect();
        rows.iter().map(|r| r.metrics.mrr).sum::<f64>() / rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,seed,mrr,hits1,hits3,hits10,query_count");
        for m in 1..=self.intervals {
            let _ = write!(out, ",mrr_interval_{m}");
        }
        out.push('\n');
        let mut write_row = |mode: &str, seed: String, m: &MetricsReport| {
            let _ = write!(
                out,
                "{mode},{seed},{},{},{},{},{}",
                m.mrr, m.hits1, m.hits3, m.hits10, m.query_count
            );
            for idx in 1..=self.intervals {
                match m.per_interval.get(&idx) {
                    Some(im) => {
                        let _ = write!(out, ",{}", im.mrr);
                    }
                    None => out.push_str(","),
                }
            }
            out.push('\n');
        };
        for row in &self.rows {
            write_row(row.mode.as_str(), row.seed.to_string(), &row.metrics);
        }
        for mode in TrainMode::all() {
            let rows: Vec<&AblationRow> = self.rows.iter().filter(|r| r.mode == mode).collect();
            if rows.is_empty() {
                continue;
            }
            let n = rows.len() as f64;
            let mean = MetricsReport {
                mrr: rows.iter().map(|r| r.metrics.mrr).sum::<f64>() / n,
                hits1: rows.iter().map(|r| r.metrics.hits1).sum::<f64>() / n,
                hits3: rows.iter().map(|r| r.metrics.hits3).sum::<f64>() / n,
                hits10: rows.iter().map(|r| r.metrics.hits10).sum::<f64>() / n,
                query_count: rows.iter().map(|r| r.metrics.query_count).sum(),
                per_interval: {
                    let mut merged = std::collections::BTreeMap::new();
                    for idx in 1..=self.intervals {
                        let vals: Vec<&crate::objective::IntervalMetrics> = rows
                            .iter()
                            .filter_map(|r| r.metrics.per_interval.get(&idx))
                            .collect();
                        if vals.is_empty() {
                            continue;
                        }
                        let k = vals.len() as f64;
                        merged.insert(
                            idx,
                            crate::objective::IntervalMetrics {
                                mrr: vals.iter().map(|v| v.mrr).sum::<f64>() / k,
                                hits1: vals.iter().map(|v| v.hits1).sum::<f64>() / k,
                                hits3: vals.iter().map(|v| v.hits3).sum::<f64>() / k,
                                hits10: vals.iter().map(|v| v.hits10).sum::<f64>() / k,
                                query_count: vals.iter().map(|v| v.query_count).sum(),
                            },
                        );
                    }
                    merged
                },
            };
            write_row(mode.as_str(), "mean".into(), &mean);
        }
        out
    }
}

/// Run every training mode on identical data and seeds; one row per
/// (mode, seed) plus a means row per mode.
pub fn run_ablation_suite(config: &ExperimentConfig, seeds: &[u64]) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut table = AblationTable {
        rows: Vec::new(),
        intervals: config.train.intervals,
    };
    for &seed in seeds {
        let kg = {
            let mut source = config.source.clone();
            if let DataSource::Synthetic(ref mut spec) = source {
                spec.seed = seed;
            }
            load_graph(&source)?
        };
        let split = chronological_split(&kg, config.ratios)?;
        let train = TrainConfig {
            seed,
            ..config.train.clone()
        };
        // The background initialization is mode-independent; train it once
        // per seed and branch the meta phase from it.
        let (phi0, pretrain_losses) = meta::pretrain_background(&kg, &kg, &split, &train)?;
        for mode in TrainMode::all() {
            let state = meta::meta_train_from(
                phi0.clone(),
                &kg,
                &kg,
                &split,
                &train,
                mode,
                pretrain_losses.clone(),
            )?;
            let shots = ShotSpec::Fixed(config.eval.shots.unwrap_or(train.shots));
            let (metrics, _) = evaluate(&kg, &kg, &state.phi, &split, &train, &config.eval, shots)?;
            let mean_drift = if state.log.is_empty() {
                0.0
            } else {
                state.log.iter().map(|r| r.drift).sum::<f64>() / state.log.len() as f64
            };
            table.rows.push(AblationRow {
                mode,
                seed,
                metrics,
                mean_drift,
            });
        }
    }
    Ok(table)
}

/// Train once with the configured shots, then adapt and evaluate at each
/// test-time shot count. Returns CSV with one row per test-shot spec.
pub fn run_cross_shot(config: &ExperimentConfig, test_shots: &[ShotSpec]) -> Result<String> {
    if test_shots.is_empty() {
        return Err(Error::Config("cross-shot needs at least one shot spec".into()));
    }
    let kg = load_graph(&config.source)?;
    let split = chronological_split(&kg, config.ratios)?;
    let state = meta::meta_train(&kg, &kg, &split, &config.train, config.mode)?;

    let mut out = String::from("train_shots,test_shots,mrr,hits1,hits3,hits10,query_count\n");
    for &spec in test_shots {
        let (metrics, _) =
            evaluate(&kg, &kg, &state.phi, &split, &config.train, &config.eval, spec)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            config.train.shots,
            spec.label(),
            metrics.mrr,
            metrics.hits1,
            metrics.hits3,
            metrics.hits10,
            metrics.query_count
        );
    }
    Ok(out)
}

/// Write a graph as TSV to `path` (helper for the `synth` CLI command).
pub fn write_graph_tsv(kg: &TemporalKG, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    kg.write_tsv(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}
