//! Synthetic temporal KG generator with controlled distribution drift.
//!
//! Entities are partitioned into blocks. Relation `i` connects a subject's
//! block to a target block under a rotation that advances every
//! `drift_period` timestamps, so the correct object block for the same
//! subject flips as time passes. Within the target block the object is the
//! entity whose slot index sits a small offset ahead of the subject's slot,
//! which keeps the task learnable: entities that share a slot family
//! interact with each other across every phase of the rotation.
//!
//! New entities arrive over time (their first event marks their arrival)
//! and generate facts under whatever rotation phase is active.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgstore::{EntityId, Quad, TemporalKG, Timestamp};

/// Offsets 1..=SLOT_WINDOW (clamped to the block size) are eligible object
/// slots, so each query has a handful of rule-consistent candidates.
const SLOT_WINDOW: usize = 3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub blocks: usize,
    pub entities_per_block: usize,
    pub relations: usize,
    /// Expected events per active entity per timestep.
    pub event_rate: f64,
    /// Timestamps run 0..horizon.
    pub horizon: u64,
    /// The block rotation advances every this many timestamps.
    pub drift_period: u64,
    /// Expected new-entity arrivals per timestep.
    pub arrival_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.entities_per_block == 0 || self.relations == 0 {
            return Err(Error::Config(
                "blocks, entities per block, and relations must be >= 1".into(),
            ));
        }
        if self.horizon == 0 || self.drift_period == 0 {
            return Err(Error::Config("horizon and drift period must be >= 1".into()));
        }
        if self.drift_period > self.horizon {
            return Err(Error::Config(
                "drift period must not exceed the time horizon".into(),
            ));
        }
        if self.event_rate < 0.0 || self.arrival_rate < 0.0 {
            return Err(Error::Config("rates must be non-negative".into()));
        }
        Ok(())
    }
}

/// Block/slot assignment of every generated entity, for rule audits.
#[derive(Clone, Debug)]
pub struct SynthMeta {
    pub spec: SyntheticSpec,
    block_by_name: HashMap<String, usize>,
    slot_by_name: HashMap<String, usize>,
}

impl SynthMeta {
    pub fn block_of(&self, name: &str) -> Option<usize> {
        self.block_by_name.get(name).copied()
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.slot_by_name.get(name).copied()
    }

    /// Rotation phase active at `t`.
    pub fn phase(&self, t: Timestamp) -> u64 {
        t / self.spec.drift_period
    }

    /// Block that relation `relation` points to from `subject_block` at `t`.
    pub fn target_block(&self, subject_block: usize, relation: usize, t: Timestamp) -> usize {
        let shift = 1 + relation as u64 + self.phase(t);
        ((subject_block as u64 + shift) % self.spec.blocks as u64) as usize
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let limit = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit || k > 10_000 {
            return k;
        }
        k += 1;
    }
}

/// Deterministically generate the drift benchmark graph for `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TemporalKG> {
    generate_synthetic_with_meta(spec).map(|(kg, _)| kg)
}

/// Generator variant that also returns the block/slot assignment used, so
/// audits can re-check every event against the rotation rule.
pub fn generate_synthetic_with_meta(spec: &SyntheticSpec) -> Result<(TemporalKG, SynthMeta)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let epb = spec.entities_per_block;
    let initial = spec.blocks * epb;

    // (name, block, slot); index < initial means a founding entity.
    let mut entities: Vec<(String, usize, usize)> = (0..initial)
        .map(|i| (format!("e{i}"), i / epb, i % epb))
        .collect();
    // Activation time of each entity: founders are active from t=0.
    let mut active_from: Vec<u64> = vec![0; initial];
    let mut meta = SynthMeta {
        spec: spec.clone(),
        block_by_name: HashMap::new(),
        slot_by_name: HashMap::new(),
    };

    let offset_window = SLOT_WINDOW.min(epb.saturating_sub(1)).max(1);
    let mut records: Vec<(String, String, String, Timestamp)> = Vec::new();

    let emit = |rng: &mut ChaCha8Rng,
                records: &mut Vec<(String, String, String, Timestamp)>,
                entities: &[(String, usize, usize)],
                subject: usize,
                t: u64| {
        let (ref name, block, slot) = entities[subject];
        let relation = rng.gen_range(0..spec.relations);
        let shift = 1 + relation as u64 + t / spec.drift_period;
        let target_block = ((block as u64 + shift) % spec.blocks as u64) as usize;
        let offset = rng.gen_range(1..=offset_window);
        let target_slot = (slot + offset) % epb;
        let object = target_block * epb + target_slot;
        records.push((
            name.clone(),
            format!("r{relation}"),
            entities[object].0.clone(),
            t,
        ));
    };

    let mut arrivals = 0usize;
    for t in 0..spec.horizon {
        // New entities join, each announcing itself with one event.
        for _ in 0..poisson(&mut rng, spec.arrival_rate) {
            let block = rng.gen_range(0..spec.blocks);
            let slot = rng.gen_range(0..epb);
            let name = format!("n{arrivals}");
            arrivals += 1;
            entities.push((name, block, slot));
            active_from.push(t);
            emit(&mut rng, &mut records, &entities, entities.len() - 1, t);
        }
        // Active entities emit events at the configured rate.
        for subject in 0..entities.len() {
            if active_from[subject] > t {
                continue;
            }
            for _ in 0..poisson(&mut rng, spec.event_rate) {
                emit(&mut rng, &mut records, &entities, subject, t);
            }
        }
    }

    for (name, block, slot) in &entities {
        meta.block_by_name.insert(name.clone(), *block);
        meta.slot_by_name.insert(name.clone(), *slot);
    }
    let kg = TemporalKG::from_records(records)?;
    Ok((kg, meta))
}

/// Check every generated event against the rotation rule: the object must
/// sit in the block the active phase prescribes for (subject block,
/// relation), at a slot within the offset window.
pub fn audit_rule_consistency(kg: &TemporalKG, meta: &SynthMeta) -> Result<()> {
    let epb = meta.spec.entities_per_block;
    let offset_window = SLOT_WINDOW.min(epb.saturating_sub(1)).max(1);
    for quad in kg.quadruples() {
        let s_name = kg.entity_name(quad.subject);
        let o_name = kg.entity_name(quad.object);
        let relation: usize = kg
            .relation_name(quad.relation)
            .trim_start_matches('r')
            .parse()
            .map_err(|_| Error::InvalidArgument("unexpected relation name".into()))?;
        let s_block = meta
            .block_of(s_name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown entity {s_name}")))?;
        let o_block = meta
            .block_of(o_name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown entity {o_name}")))?;
        let expected_block = meta.target_block(s_block, relation, quad.time);
        if o_block != expected_block {
            return Err(Error::InvalidArgument(format!(
                "event {s_name} -r{relation}-> {o_name} at t={} lands in block {o_block}, rule says {expected_block}",
                quad.time
            )));
        }
        let s_slot = meta.slot_of(s_name).unwrap();
        let o_slot = meta.slot_of(o_name).unwrap();
        let offset = (o_slot + epb - s_slot) % epb;
        if epb > 1 && !(1..=offset_window).contains(&offset) {
            return Err(Error::InvalidArgument(format!(
                "event {s_name} -> {o_name}: slot offset {offset} outside 1..={offset_window}"
            )));
        }
    }
    Ok(())
}

/// The object block every fact of `subject` must target at/after `t` under
/// relation `relation`, for drift-direction checks in tests.
pub fn expected_block_after(
    meta: &SynthMeta,
    kg: &TemporalKG,
    subject: EntityId,
    relation: usize,
    t: Timestamp,
) -> Option<usize> {
    let name = kg.entity_name(subject);
    let block = meta.block_of(name)?;
    Some(meta.target_block(block, relation, t))
}

/// All facts where `entity` is the subject under one relation.
pub fn facts_with_relation(kg: &TemporalKG, entity: EntityId, relation: u32) -> Vec<Quad> {
    kg.facts_of(entity)
        .iter()
        .map(|&i| kg.quadruples()[i as usize])
        .filter(|q| q.subject == entity && q.relation == relation)
        .collect()
}
