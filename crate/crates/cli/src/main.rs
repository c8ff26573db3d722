//! Experiment runner for few-shot temporal KG reasoning.

use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tkgr_core::config::{DataSource, ExperimentConfig};
use tkgr_core::encoder::ModelParams;
use tkgr_core::kgstore::{chronological_split, TemporalKG};
use tkgr_core::meta::{self, TrainMode};
use tkgr_core::pipeline::{self, ShotSpec};

#[derive(Parser)]
#[command(name = "tkgr", version, about = "Few-shot temporal knowledge graph reasoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (flat `key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the training mode.
    #[arg(long)]
    mode: Option<String>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::from_path(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.train.seed = seed;
            if let DataSource::Synthetic(ref mut spec) = config.source {
                spec.seed = seed;
            }
        }
        if let Some(ref mode) = self.mode {
            config.mode = TrainMode::from_str(mode)?;
        }
        if let Some(ref out) = self.out {
            config.out_dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a quadruple TSV and print its statistics.
    Ingest {
        /// Path to a `subject<TAB>relation<TAB>object<TAB>timestamp` file.
        #[arg(long)]
        data: PathBuf,
    },
    /// Chronologically split a dataset and write the entity-role manifest.
    Split {
        #[arg(long)]
        data: PathBuf,
        /// Four comma-separated fractions summing to 1.
        #[arg(long, default_value = "0.4,0.25,0.1,0.25")]
        ratios: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate the synthetic drift benchmark graph as TSV.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the full pipeline: train, adapt, evaluate, emit artifacts.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Adapt a trained checkpoint to one entity's few-shot support set.
    Adapt {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Entity name to adapt to.
        #[arg(long)]
        entity: String,
    },
    /// Evaluate a trained checkpoint on the meta-test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run all four training modes on identical data and seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated seeds, one full suite per seed.
        #[arg(long, default_value = "0")]
        seeds: String,
    },
    /// Train once, then evaluate across test-time shot counts.
    CrossShot {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated shot counts; `R` draws 1..=5 per entity.
        #[arg(long, default_value = "1,3,5,R")]
        test_shots: String,
    },
}

fn load_kg(path: &PathBuf) -> Result<TemporalKG> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(TemporalKG::ingest_tsv(BufReader::new(file))?)
}

fn parse_ratios(raw: &str) -> Result<[f64; 4]> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        bail!("ratios needs exactly 4 comma-separated values");
    }
    let mut ratios = [0.0; 4];
    for (slot, part) in ratios.iter_mut().zip(&parts) {
        *slot = part.parse().with_context(|| format!("invalid ratio `{part}`"))?;
    }
    Ok(ratios)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { data } => {
            let kg = load_kg(&data)?;
            let span = kg
                .time_span()
                .map(|(lo, hi)| format!("{lo}..{hi}"))
                .unwrap_or_else(|| "empty".into());
            println!("entities:   {}", kg.num_entities());
            println!("relations:  {}", kg.num_relations());
            println!("quadruples: {}", kg.num_quadruples());
            println!("time span:  {span}");
        }
        Command::Split { data, ratios, out } => {
            let kg = load_kg(&data)?;
            let split = chronological_split(&kg, parse_ratios(&ratios)?)?;
            fs::create_dir_all(&out)?;
            let path = out.join("split.txt");
            let mut buf = Vec::new();
            split.write_manifest(&kg, &mut buf)?;
            fs::write(&path, buf)?;
            let counts = split.counts();
            println!(
                "boundaries: t1={} t2={} t3={}",
                split.boundaries.0, split.boundaries.1, split.boundaries.2
            );
            println!(
                "roles: background={} meta-train={} meta-validation={} meta-test={}",
                counts[0], counts[1], counts[2], counts[3]
            );
            println!("wrote {}", path.display());
        }
        Command::Synth { config } => {
            let config = config.load()?;
            let DataSource::Synthetic(ref spec) = config.source else {
                bail!("synth requires a config with synth_* keys (no data_path)");
            };
            let kg = tkgr_core::synth::generate_synthetic(spec)?;
            fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("synthetic.tsv");
            pipeline::write_graph_tsv(&kg, &path)?;
            println!(
                "wrote {} ({} entities, {} quadruples)",
                path.display(),
                kg.num_entities(),
                kg.num_quadruples()
            );
        }
        Command::Train { config } => {
            let config = config.load()?;
            let artifacts = pipeline::run_experiment(&config)?;
            println!(
                "mode={} mrr={:.4} hits@1={:.4} hits@3={:.4} hits@10={:.4} queries={}",
                config.mode.as_str(),
                artifacts.metrics.mrr,
                artifacts.metrics.hits1,
                artifacts.metrics.hits3,
                artifacts.metrics.hits10,
                artifacts.metrics.query_count
            );
            println!("artifacts in {}", artifacts.out_dir.display());
        }
        Command::Adapt {
            config,
            checkpoint,
            entity,
        } => {
            let config = config.load()?;
            let kg = pipeline::load_graph(&config.source)?;
            let phi = ModelParams::load_checkpoint(BufReader::new(fs::File::open(&checkpoint)?))?;
            let Some(id) = kg.entity_id(&entity) else {
                bail!("entity `{entity}` not found in the dataset");
            };
            let shots = config.eval.shots.unwrap_or(config.train.shots);
            let task = tkgr_core::kgstore::build_task(&kg, id, shots, config.train.intervals)?;
            let adapted = meta::meta_test_adapt(&phi, &kg, id, &task.support, &config.train)?;
            fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join(format!("adapted_{entity}.json"));
            let mut buf = Vec::new();
            adapted.save_checkpoint(&mut buf)?;
            fs::write(&path, buf)?;
            println!("adapted to `{entity}` on {} support facts", task.support.len());
            println!("wrote {}", path.display());
        }
        Command::Eval { config, checkpoint } => {
            let config = config.load()?;
            let kg = pipeline::load_graph(&config.source)?;
            let split = chronological_split(&kg, config.ratios)?;
            let phi = ModelParams::load_checkpoint(BufReader::new(fs::File::open(&checkpoint)?))?;
            let shots = ShotSpec::Fixed(config.eval.shots.unwrap_or(config.train.shots));
            let (metrics, _) =
                pipeline::evaluate(&kg, &kg, &phi, &split, &config.train, &config.eval, shots)?;
            fs::create_dir_all(&config.out_dir)?;
            let mut json = serde_json::to_string_pretty(&metrics)?;
            json.push('\n');
            fs::write(config.out_dir.join("metrics.json"), &json)?;
            let mut csv = Vec::new();
            metrics.write_csv(&mut csv)?;
            fs::write(config.out_dir.join("metrics.csv"), &csv)?;
            println!("{json}");
        }
        Command::Ablate { config, seeds } => {
            let config = config.load()?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| s.trim().parse().with_context(|| format!("invalid seed `{s}`")))
                .collect::<Result<_>>()?;
            let table = pipeline::run_ablation_suite(&config, &seeds)?;
            let csv = table.to_csv();
            fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("ablation.csv");
            fs::write(&path, &csv)?;
            print!("{csv}");
            println!("wrote {}", path.display());
        }
        Command::CrossShot { config, test_shots } => {
            let config = config.load()?;
            let specs: Vec<ShotSpec> = test_shots
                .split(',')
                .map(|s| ShotSpec::from_str(s.trim()))
                .collect::<tkgr_core::Result<_>>()?;
            let csv = pipeline::run_cross_shot(&config, &specs)?;
            fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("cross_shot.csv");
            fs::write(&path, &csv)?;
            print!("{csv}");
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
