//! Diagnostic runner: prints pretraining loss trajectories, a ranking
//! sanity check on background facts, and the meta-test metrics, for tuning
//! benchmark hyperparameters.
//!
//! Usage: cargo run --example calibrate -- [key=value ...]

use std::collections::BTreeMap;
use std::path::Path;

use tkgr_core::config::{DataSource, ExperimentConfig};
use tkgr_core::encoder::{encode_entity, score_values};
use tkgr_core::kgstore::chronological_split;
use tkgr_core::synth;
use tkgr_core::meta::{self, TrainMode};
use tkgr_core::objective::{aggregate_metrics, rank_query, Slot};
use tkgr_core::pipeline::{self, ShotSpec};

fn main() {
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("args are key=value");
        kv.insert(k.to_string(), v.to_string());
    }
    let modes: Vec<TrainMode> = kv
        .remove("modes")
        .map(|m| {
            m.split('+')
                .map(|s| s.parse().expect("mode"))
                .collect::<Vec<_>>()
        })
        .unwrap_or_else(|| vec![TrainMode::Full, TrainMode::FinetuneOnly]);
    let config = ExperimentConfig::from_kv(&kv, Path::new(".")).expect("config");

    let kg = pipeline::load_graph(&config.source).expect("load");
    let split = chronological_split(&kg, config.ratios).expect("split");
    let counts = split.counts();
    println!(
        "graph: {} entities, {} quads, span {:?}; roles bg={} mtrain={} mval={} mtest={}",
        kg.num_entities(),
        kg.num_quadruples(),
        kg.time_span().unwrap(),
        counts[0],
        counts[1],
        counts[2],
        counts[3]
    );

    let (phi0, losses) = meta::pretrain_background(&kg, &kg, &split, &config.train).expect("pretrain");
    println!(
        "pretrain loss: first={:.4} mid={:.4} last={:.4}",
        losses.first().unwrap_or(&f64::NAN),
        losses.get(losses.len() / 2).unwrap_or(&f64::NAN),
        losses.last().unwrap_or(&f64::NAN)
    );

    // Sanity: rank background facts near the end of the background period
    // with the pretrained parameters (no adaptation involved).
    let t1 = split.boundaries.0;
    let mut ranked = Vec::new();
    for q in kg.quadruples().iter().filter(|q| {
        q.time > t1.saturating_sub(10) && q.time <= t1
    }) {
        for slot in [Slot::Object, Slot::Subject] {
            ranked.push(
                rank_query(
                    &kg,
                    &phi0,
                    config.train.encode_settings(),
                    q,
                    slot,
                    config.eval.filter,
                    1,
                )
                .expect("rank"),
            );
        }
        if ranked.len() >= 200 {
            break;
        }
    }
    if !ranked.is_empty() {
        let report = aggregate_metrics(&ranked).unwrap();
        let base = pipeline::uniform_baseline(&ranked);
        println!(
            "background ranking: mrr={:.4} hits10={:.4} over {} queries (uniform {:.4})",
            report.mrr, report.hits10, report.query_count, base
        );
    }

    for &mode in &modes {
        let state =
            meta::meta_train_from(phi0.clone(), &kg, &kg, &split, &config.train, mode, losses.clone())
                .expect("meta_train");
        if let Some(first) = state.log.first() {
            let last = state.log.last().unwrap();
            println!(
                "  [{}] meta loss first={:.4} last={:.4} drift last={:.5}",
                mode.as_str(),
                first.emp_loss,
                last.emp_loss,
                last.drift
            );
            let epochs: Vec<usize> = {
                let max = state.log.iter().map(|r| r.epoch).max().unwrap();
                vec![0, max / 2, max]
            };
            for e in epochs {
                let per: Vec<String> = state
                    .log
                    .iter()
                    .filter(|r| r.epoch == e)
                    .map(|r| format!("m{}={:.3}(d{:.4})", r.interval, r.emp_loss, r.drift))
                    .collect();
                println!("      epoch {e}: {}", per.join(" "));
            }
        }
        let (metrics, ranked) = pipeline::evaluate(
            &kg,
            &kg,
            &state.phi,
            &split,
            &config.train,
            &config.eval,
            ShotSpec::Fixed(config.train.shots),
        )
        .expect("evaluate");
        let base = pipeline::uniform_baseline(&ranked);
        print!(
            "  [{}] meta-test mrr={:.4} (uniform {:.4}, ratio {:.2}) hits10={:.4} n={}",
            mode.as_str(),
            metrics.mrr,
            base,
            metrics.mrr / base,
            metrics.hits10,
            metrics.query_count
        );
        let per: Vec<String> = metrics
            .per_interval
            .iter()
            .map(|(i, m)| format!("m{i}={:.4}", m.mrr))
            .collect();
        println!(" per-interval {}", per.join(" "));

        // Error anatomy on object-slot queries: does the best-scoring
        // candidate at least sit in the rule-correct block, and how does
        // the true entity's rank distribute?
        if let DataSource::Synthetic(ref spec) = config.source {
            let (_, meta_info) = synth::generate_synthetic_with_meta(spec).expect("meta");
            let mut top_block_right = 0usize;
            let mut true_in_top3 = 0usize;
            let mut n = 0usize;
            let tc = &config.train;
            for e in split.entities_with_role(tkgr_core::kgstore::Role::MetaTest) {
                let task = match tkgr_core::kgstore::build_task(&kg, e, tc.shots, tc.intervals) {
                    Ok(t) => t,
                    Err(_) => continue,
                };
                let adapted =
                    meta::meta_test_adapt(&state.phi, &kg, e, &task.support, tc).expect("adapt");
                for fact in task.query_intervals.iter().flatten() {
                    let rel: usize = kg.relation_name(fact.relation)[1..].parse().unwrap();
                    let want_block = synth::expected_block_after(&meta_info, &kg, fact.subject, rel, fact.time)
                        .unwrap();
                    let h_s = encode_entity(&kg, &adapted, fact.subject, fact.time, tc.layers, tc.budget, tc.time_bound).unwrap();
                    let h_r = adapted.relation_row(fact.relation).to_vec();
                    let mut best = (f64::NEG_INFINITY, 0u32);
                    let mut true_score = f64::NEG_INFINITY;
                    let mut scores = Vec::new();
                    for cand in 0..kg.num_entities() as u32 {
                        let h_o = encode_entity(&kg, &adapted, cand, fact.time, tc.layers, tc.budget, tc.time_bound).unwrap();
                        let sc = score_values(&h_s, &h_r, &h_o);
                        scores.push(sc);
                        if cand == fact.object { true_score = sc; }
                        if sc > best.0 { best = (sc, cand); }
                    }
                    let rank = 1 + scores.iter().enumerate().filter(|(c, &s)| *c as u32 != fact.object && s >= true_score).count();
                    if rank <= 3 { true_in_top3 += 1; }
                    let top_block = meta_info.block_of(kg.entity_name(best.1)).unwrap();
                    if top_block == want_block { top_block_right += 1; }
                    n += 1;
                    if n >= 60 { break; }
                }
                if n >= 60 { break; }
            }
            if n > 0 {
                println!(
                    "      anatomy[{}]: top-candidate in correct block {}/{}, true in top3 {}/{}",
                    mode.as_str(), top_block_right, n, true_in_top3, n
                );
            }
        }
    }
}
