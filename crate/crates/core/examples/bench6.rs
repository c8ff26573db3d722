//! Drift-benchmark driver: run the four training modes over a seed list
//! and print the qualitative-claim checks per seed.
//!
//! Usage: cargo run --example bench6 -- seeds=0,1,2 [key=value ...]

use std::collections::BTreeMap;
use std::path::Path;

use tkgr_core::config::{DataSource, ExperimentConfig};
use tkgr_core::meta::TrainMode;
use tkgr_core::pipeline::{self, AblationRow, ShotSpec};

fn main() {
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("args are key=value");
        kv.insert(k.to_string(), v.to_string());
    }
    let seeds: Vec<u64> = kv
        .remove("seeds")
        .unwrap_or_else(|| "0".into())
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    let config = ExperimentConfig::from_kv(&kv, Path::new(".")).expect("config");

    let mut rows: Vec<AblationRow> = Vec::new();
    let mut uniform_sum = 0.0;
    for &seed in &seeds {
        let mut cfg = config.clone();
        cfg.train.seed = seed;
        if let DataSource::Synthetic(ref mut spec) = cfg.source {
            spec.seed = seed;
        }
        let table = pipeline::run_ablation_suite(&cfg, &[seed]).expect("ablation");
        for row in &table.rows {
            let per: Vec<String> = row
                .metrics
                .per_interval
                .iter()
                .map(|(i, m)| format!("m{i}={:.4}", m.mrr))
                .collect();
            println!(
                "seed {seed} {:<14} mrr={:.4} drift={:.5} {}",
                row.mode.as_str(),
                row.metrics.mrr,
                row.mean_drift,
                per.join(" ")
            );
        }
        // Uniform expectation from the candidate counts of any mode's run.
        let kg = pipeline::load_graph(&cfg.source).unwrap();
        let split = tkgr_core::kgstore::chronological_split(&kg, cfg.ratios).unwrap();
        let state =
            tkgr_core::meta::meta_train(&kg, &kg, &split, &cfg.train, TrainMode::FinetuneOnly)
                .unwrap();
        let (_, ranked) = pipeline::evaluate(
            &kg,
            &kg,
            &state.phi,
            &split,
            &cfg.train,
            &cfg.eval,
            ShotSpec::Fixed(cfg.train.shots),
        )
        .unwrap();
        uniform_sum += pipeline::uniform_baseline(&ranked);
        rows.extend(table.rows);
    }

    let uniform = uniform_sum / seeds.len() as f64;
    let mean = |mode: TrainMode| -> f64 {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.metrics.mrr)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let full = mean(TrainMode::Full);
    let finetune = mean(TrainMode::FinetuneOnly);
    println!("(a) full {:.4} vs 3x uniform {:.4} -> {}", full, 3.0 * uniform, full >= 3.0 * uniform);
    println!(
        "(b) full/finetune {:.3} -> {}",
        full / finetune,
        full >= 1.2 * finetune
    );

    let mut widening = 0;
    for &seed in &seeds {
        let get = |mode: TrainMode| -> Vec<f64> {
            let row = rows.iter().find(|r| r.mode == mode && r.seed == seed).unwrap();
            (1..=3)
                .map(|m| row.metrics.per_interval.get(&m).map_or(0.0, |im| im.mrr))
                .collect()
        };
        let f = get(TrainMode::Full);
        let s = get(TrainMode::StaticMaml);
        let gaps: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a - b).collect();
        let ok = gaps.windows(2).all(|w| w[1] >= w[0]);
        if ok {
            widening += 1;
        }
        println!("(c) seed {seed} gaps {:.4} {:.4} {:.4} -> {ok}", gaps[0], gaps[1], gaps[2]);
    }
    println!("(c) widening on {widening}/{}", seeds.len());

    let mut d_ok = true;
    for &seed in &seeds {
        let drift = |mode: TrainMode| -> f64 {
            rows.iter()
                .find(|r| r.mode == mode && r.seed == seed)
                .unwrap()
                .mean_drift
        };
        let ok = drift(TrainMode::Full) <= drift(TrainMode::NoRegularizer);
        if !ok {
            d_ok = false;
        }
        println!(
            "(d) seed {seed} drift full {:.5} vs no_reg {:.5} -> {ok}",
            drift(TrainMode::Full),
            drift(TrainMode::NoRegularizer)
        );
    }
    println!("(d) all -> {d_ok}");
}
