//! The temporal encoder: Fourier time encoding, attention over sampled
//! temporal neighbors, aggregation into time-aware entity representations,
//! and the translation-based quadruple score.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgstore::{EntityId, GraphAccess, Quad, RelationId, Timestamp};
use crate::numkernel::{NodeId, Tape, Tensor};
use crate::sampler::{self, NeighborSet};

/// Identifies one trainable parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamKey {
    Entity(EntityId),
    Relation(RelationId),
    Transform,
    Attention,
}

impl ParamKey {
    pub fn label(&self) -> String {
        match self {
            ParamKey::Entity(e) => format!("entity[{e}]"),
            ParamKey::Relation(r) => format!("relation[{r}]"),
            ParamKey::Transform => "transform".into(),
            ParamKey::Attention => "attention".into(),
        }
    }
}

/// Sparse gradient accumulator keyed by parameter block.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    blocks: BTreeMap<ParamKey, Vec<f64>>,
}

impl ParamGrads {
    pub fn new() -> ParamGrads {
        ParamGrads::default()
    }

    pub fn accumulate(&mut self, key: ParamKey, grad: &[f64]) {
        match self.blocks.get_mut(&key) {
            Some(slot) => {
                for (d, &g) in slot.iter_mut().zip(grad) {
                    *d += g;
                }
            }
            None => {
                self.blocks.insert(key, grad.to_vec());
            }
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (key, grad) in &other.blocks {
            self.accumulate(*key, grad);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for grad in self.blocks.values_mut() {
            for g in grad.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn get(&self, key: &ParamKey) -> Option<&[f64]> {
        self.blocks.get(key).map(|v| v.as_slice())
    }

    pub fn remove(&mut self, key: &ParamKey) -> Option<Vec<f64>> {
        self.blocks.remove(key)
    }

    pub fn retain(&mut self, keep: impl Fn(&ParamKey) -> bool) {
        self.blocks.retain(|key, _| keep(key));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Vec<f64>)> {
        self.blocks.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks
            .values()
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum()
    }

    /// Error naming the first parameter block holding a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        for (key, grad) in &self.blocks {
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { block: key.label() });
            }
        }
        Ok(())
    }
}

/// All trainable state: entity/relation embedding tables, the aggregation
/// transform, the attention vector, and the fixed time-encoding basis.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    entity: Vec<f64>,
    relation: Vec<f64>,
    transform: Vec<f64>,
    attention: Vec<f64>,
    time_freq: Vec<f64>,
    time_phase: Vec<f64>,
    seed: u64,
}

impl ModelParams {
    /// Seeded random initialization. Embeddings are N(0, 1/sqrt(d));
    /// time-encoding frequencies are log-spaced over [1e-9, 1] with a small
    /// seeded jitter and are not trained.
    pub fn init(num_entities: usize, num_relations: usize, dim: usize, seed: u64) -> Result<ModelParams> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (dim as f64).sqrt();
        let gauss = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    // Box-Muller from two uniforms.
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect()
        };
        let entity = gauss(num_entities * dim, &mut rng);
        let relation = gauss(num_relations * dim, &mut rng);
        let transform = gauss(dim * dim, &mut rng);
        let attention = gauss(4 * dim, &mut rng);

        let mut time_freq = Vec::with_capacity(dim);
        let denom = (dim.saturating_sub(1)).max(1) as f64;
        for i in 0..dim {
            let base = 10f64.powf(-9.0 * i as f64 / denom);
            let jitter: f64 = 1.0 + 0.05 * rng.gen_range(-1.0..1.0);
            time_freq.push(base * jitter);
        }
        let time_phase = (0..dim)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();

        Ok(ModelParams {
            dim,
            num_entities,
            num_relations,
            entity,
            relation,
            transform,
            attention,
            time_freq,
            time_phase,
            seed,
        })
    }

    /// Construct from explicit values; shapes are validated.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dim: usize,
        entity: Vec<f64>,
        relation: Vec<f64>,
        transform: Vec<f64>,
        attention: Vec<f64>,
        time_freq: Vec<f64>,
        time_phase: Vec<f64>,
        seed: u64,
    ) -> Result<ModelParams> {
        if dim == 0
            || entity.len() % dim != 0
            || relation.len() % dim != 0
            || transform.len() != dim * dim
            || attention.len() != 4 * dim
            || time_freq.len() != dim
            || time_phase.len() != dim
        {
            return Err(Error::ShapeMismatch {
                op: "model params",
                detail: format!(
                    "dim {dim}: entity {}, relation {}, transform {}, attention {}, freq {}, phase {}",
                    entity.len(),
                    relation.len(),
                    transform.len(),
                    attention.len(),
                    time_freq.len(),
                    time_phase.len()
                ),
            });
        }
        let all_finite = entity
            .iter()
            .chain(&relation)
            .chain(&transform)
            .chain(&attention)
            .chain(&time_freq)
            .chain(&time_phase)
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::NonFinite { op: "model params" });
        }
        Ok(ModelParams {
            dim,
            num_entities: entity.len() / dim,
            num_relations: relation.len() / dim,
            entity,
            relation,
            transform,
            attention,
            time_freq,
            time_phase,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entity_row(&self, e: EntityId) -> &[f64] {
        let i = e as usize * self.dim;
        &self.entity[i..i + self.dim]
    }

    pub fn relation_row(&self, r: RelationId) -> &[f64] {
        let i = r as usize * self.dim;
        &self.relation[i..i + self.dim]
    }

    pub fn transform(&self) -> &[f64] {
        &self.transform
    }

    pub fn attention(&self) -> &[f64] {
        &self.attention
    }

    pub fn time_freq(&self) -> &[f64] {
        &self.time_freq
    }

    pub fn time_phase(&self) -> &[f64] {
        &self.time_phase
    }

    pub fn set_entity_row(&mut self, e: EntityId, row: &[f64]) {
        let i = e as usize * self.dim;
        self.entity[i..i + self.dim].copy_from_slice(row);
    }

    pub fn set_time_basis(&mut self, freq: Vec<f64>, phase: Vec<f64>) -> Result<()> {
        if freq.len() != self.dim || phase.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "time basis",
                detail: format!("expected {} entries", self.dim),
            });
        }
        self.time_freq = freq;
        self.time_phase = phase;
        Ok(())
    }

    pub fn zero_entity_row(&mut self, e: EntityId) {
        let i = e as usize * self.dim;
        self.entity[i..i + self.dim].fill(0.0);
    }

    pub fn entity_row_is_zero(&self, e: EntityId) -> bool {
        self.entity_row(e).iter().all(|&x| x == 0.0)
    }

    /// Grow the entity table to hold `n` rows, zero-filling new rows.
    pub fn ensure_entity_capacity(&mut self, n: usize) {
        if n > self.num_entities {
            self.entity.resize(n * self.dim, 0.0);
            self.num_entities = n;
        }
    }

    pub fn block(&self, key: &ParamKey) -> &[f64] {
        match key {
            ParamKey::Entity(e) => self.entity_row(*e),
            ParamKey::Relation(r) => self.relation_row(*r),
            ParamKey::Transform => &self.transform,
            ParamKey::Attention => &self.attention,
        }
    }

    fn block_mut(&mut self, key: &ParamKey) -> &mut [f64] {
        match key {
            ParamKey::Entity(e) => {
                let i = *e as usize * self.dim;
                &mut self.entity[i..i + self.dim]
            }
            ParamKey::Relation(r) => {
                let i = *r as usize * self.dim;
                &mut self.relation[i..i + self.dim]
            }
            ParamKey::Transform => &mut self.transform,
            ParamKey::Attention => &mut self.attention,
        }
    }

    /// In-place gradient-descent step over the blocks present in `grads`.
    /// A zero learning rate leaves the parameters bit-identical.
    pub fn apply_step(&mut self, grads: &ParamGrads, lr: f64) {
        if lr == 0.0 {
            return;
        }
        for (key, grad) in grads.iter() {
            let block = self.block_mut(key);
            for (p, &g) in block.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
    }

    /// Number of trainable scalars.
    pub fn flat_len(&self) -> usize {
        (self.num_entities + self.num_relations) * self.dim + self.dim * self.dim + 4 * self.dim
    }

    /// Canonical flattening: entity rows, relation rows, transform, then
    /// attention. The time basis is not trainable and not included.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.flat_len());
        flat.extend_from_slice(&self.entity);
        flat.extend_from_slice(&self.relation);
        flat.extend_from_slice(&self.transform);
        flat.extend_from_slice(&self.attention);
        flat
    }

    /// Rebuild parameters from a flat vector, keeping shapes and the time
    /// basis of `self`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ModelParams> {
        if flat.len() != self.flat_len() {
            return Err(Error::ShapeMismatch {
                op: "with_flat",
                detail: format!("expected {} values, got {}", self.flat_len(), flat.len()),
            });
        }
        let mut out = self.clone();
        let ne = self.num_entities * self.dim;
        let nr = self.num_relations * self.dim;
        let nt = self.dim * self.dim;
        out.entity.copy_from_slice(&flat[..ne]);
        out.relation.copy_from_slice(&flat[ne..ne + nr]);
        out.transform.copy_from_slice(&flat[ne + nr..ne + nr + nt]);
        out.attention.copy_from_slice(&flat[ne + nr + nt..]);
        Ok(out)
    }

    /// Gradient map flattened in the canonical order; absent blocks are 0.
    pub fn grads_to_flat(&self, grads: &ParamGrads) -> Vec<f64> {
        let mut flat = vec![0.0; self.flat_len()];
        let ne = self.num_entities * self.dim;
        let nr = self.num_relations * self.dim;
        let nt = self.dim * self.dim;
        for (key, grad) in grads.iter() {
            let offset = match key {
                ParamKey::Entity(e) => *e as usize * self.dim,
                ParamKey::Relation(r) => ne + *r as usize * self.dim,
                ParamKey::Transform => ne + nr,
                ParamKey::Attention => ne + nr + nt,
            };
            for (i, &g) in grad.iter().enumerate() {
                flat[offset + i] += g;
            }
        }
        flat
    }

    /// Squared Euclidean distance between two parameter snapshots of
    /// identical shapes.
    pub fn distance_sq(&self, other: &ModelParams) -> Result<f64> {
        if self.dim != other.dim
            || self.num_entities != other.num_entities
            || self.num_relations != other.num_relations
        {
            return Err(Error::ShapeMismatch {
                op: "param distance",
                detail: format!(
                    "{} entities dim {} vs {} entities dim {}",
                    self.num_entities, self.dim, other.num_entities, other.dim
                ),
            });
        }
        let dist =
            |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
        Ok(dist(&self.entity, &other.entity)
            + dist(&self.relation, &other.relation)
            + dist(&self.transform, &other.transform)
            + dist(&self.attention, &other.attention))
    }

    /// Difference `self - other` expressed as a per-block map, skipping
    /// identical blocks.
    pub fn delta_from(&self, other: &ModelParams) -> ParamGrads {
        let mut delta = ParamGrads::new();
        let mut keys: Vec<ParamKey> = Vec::new();
        for e in 0..self.num_entities {
            keys.push(ParamKey::Entity(e as EntityId));
        }
        for r in 0..self.num_relations {
            keys.push(ParamKey::Relation(r as RelationId));
        }
        keys.push(ParamKey::Transform);
        keys.push(ParamKey::Attention);
        for key in keys {
            let a = self.block(&key);
            let b = other.block(&key);
            if a != b {
                let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                delta.accumulate(key, &diff);
            }
        }
        delta
    }

    pub fn save_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim: self.dim,
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            seed: self.seed,
            entity: self.entity.clone(),
            relation: self.relation.clone(),
            transform: self.transform.clone(),
            attention: self.attention.clone(),
            time_freq: self.time_freq.clone(),
            time_phase: self.time_phase.clone(),
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn load_checkpoint<R: Read>(r: R) -> Result<ModelParams> {
        let file: CheckpointFile = serde_json::from_reader(r)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        if file.entity.len() != file.num_entities * file.dim
            || file.relation.len() != file.num_relations * file.dim
        {
            return Err(Error::Config(
                "checkpoint table sizes disagree with header".into(),
            ));
        }
        ModelParams::from_parts(
            file.dim,
            file.entity,
            file.relation,
            file.transform,
            file.attention,
            file.time_freq,
            file.time_phase,
            file.seed,
        )
    }
}

const CHECKPOINT_FORMAT: &str = "tkgr-params";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    seed: u64,
    entity: Vec<f64>,
    relation: Vec<f64>,
    transform: Vec<f64>,
    attention: Vec<f64>,
    time_freq: Vec<f64>,
    time_phase: Vec<f64>,
}

/// Fourier time encoding: `phi(dt)_i = sqrt(1/d) * cos(freq_i * dt + phase_i)`.
/// Negative deltas are rejected, they would mean reading the future.
pub fn time_encode(delta: i64, params: &ModelParams) -> Result<Vec<f64>> {
    if delta < 0 {
        return Err(Error::InvalidArgument(format!(
            "time delta must be non-negative, got {delta}"
        )));
    }
    let scale = (1.0 / params.dim as f64).sqrt();
    Ok(params
        .time_freq
        .iter()
        .zip(&params.time_phase)
        .map(|(&w, &p)| scale * (w * delta as f64 + p).cos())
        .collect())
}

/// Translation score `-(|| h_s + h_r - h_o ||^2)` on plain values.
pub fn score_values(h_s: &[f64], h_r: &[f64], h_o: &[f64]) -> f64 {
    -h_s.iter()
        .zip(h_r)
        .zip(h_o)
        .map(|((&a, &b), &c)| {
            let d = a + b - c;
            d * d
        })
        .sum::<f64>()
}

/// How deep to aggregate and how wide to sample when encoding.
#[derive(Clone, Copy, Debug)]
pub struct EncodeSettings {
    pub layers: usize,
    pub budget: usize,
    pub time_bound: u64,
}

/// One taped forward pass over a parameter snapshot and a graph view.
///
/// Parameter rows become tape leaves lazily and are shared across every use
/// inside the session, so gradients accumulate per block. Encodings are
/// memoized per (entity, time, layer); the optional mask hides the fact
/// currently being scored from the sampler.
pub struct Forward<'a> {
    pub tape: Tape,
    params: &'a ModelParams,
    graph: &'a dyn GraphAccess,
    settings: EncodeSettings,
    mask: Option<Quad>,
    leaves: BTreeMap<ParamKey, NodeId>,
    memo: HashMap<(EntityId, Timestamp, usize), NodeId>,
}

impl<'a> Forward<'a> {
    pub fn new(
        params: &'a ModelParams,
        graph: &'a dyn GraphAccess,
        settings: EncodeSettings,
        mask: Option<Quad>,
    ) -> Forward<'a> {
        Forward {
            tape: Tape::new(),
            params,
            graph,
            settings,
            mask,
            leaves: BTreeMap::new(),
            memo: HashMap::new(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn param_leaf(&mut self, key: ParamKey) -> Result<NodeId> {
        if let Some(&id) = self.leaves.get(&key) {
            return Ok(id);
        }
        let tensor = match key {
            ParamKey::Transform => Tensor::matrix(
                self.params.dim,
                self.params.dim,
                self.params.transform.clone(),
            )?,
            _ => Tensor::vector(self.params.block(&key).to_vec())?,
        };
        let id = self.tape.leaf(tensor);
        self.leaves.insert(key, id);
        Ok(id)
    }

    /// Per-event attention weights: softmax over
    /// `a . (target || neighbor_i || relation_i || phi(t - t_i))`.
    pub fn attention_weights(
        &mut self,
        target_repr: NodeId,
        neighbors: &NeighborSet,
        layer_reprs: &[NodeId],
        t: Timestamp,
    ) -> Result<NodeId> {
        if neighbors.is_empty() {
            return Err(Error::InvalidArgument(
                "attention over an empty neighbor set".into(),
            ));
        }
        if layer_reprs.len() != neighbors.len() {
            return Err(Error::ShapeMismatch {
                op: "attention",
                detail: format!(
                    "{} representations for {} events",
                    layer_reprs.len(),
                    neighbors.len()
                ),
            });
        }
        let attn = self.param_leaf(ParamKey::Attention)?;
        let mut scores = Vec::with_capacity(neighbors.len());
        for (ev, &repr) in neighbors.events.iter().zip(layer_reprs) {
            let rel = self.param_leaf(ParamKey::Relation(ev.relation))?;
            let phi = time_encode((t - ev.time) as i64, self.params)?;
            let phi = self.tape.constant(Tensor::vector(phi)?);
            let joint = self.tape.concat(&[target_repr, repr, rel, phi])?;
            let q = self.tape.dot(attn, joint)?;
            scores.push(q);
        }
        let q_vec = self.tape.concat(&scores)?;
        self.tape.softmax(q_vec)
    }

    /// Time-aware representation of `entity` at `t` using the configured
    /// number of aggregation layers.
    pub fn encode(&mut self, entity: EntityId, t: Timestamp) -> Result<NodeId> {
        self.encode_layer(entity, t, self.settings.layers)
    }

    fn encode_layer(&mut self, entity: EntityId, t: Timestamp, layer: usize) -> Result<NodeId> {
        if entity as usize >= self.params.num_entities {
            return Err(Error::UnknownEntity(entity));
        }
        if layer == 0 {
            return self.param_leaf(ParamKey::Entity(entity));
        }
        if let Some(&id) = self.memo.get(&(entity, t, layer)) {
            return Ok(id);
        }
        let neighbors = sampler::sample_with_mask(
            self.graph,
            entity,
            t,
            self.settings.budget,
            self.settings.time_bound,
            self.mask.as_ref(),
        )?;
        let id = if neighbors.is_empty() {
            // No qualifying history: fall back to the base embedding row.
            self.param_leaf(ParamKey::Entity(entity))?
        } else {
            let target_prev = self.encode_layer(entity, t, layer - 1)?;
            let mut reprs = Vec::with_capacity(neighbors.len());
            for ev in &neighbors.events {
                reprs.push(self.encode_layer(ev.entity, ev.time, layer - 1)?);
            }
            let alpha = self.attention_weights(target_prev, &neighbors, &reprs, t)?;
            let transform = self.param_leaf(ParamKey::Transform)?;
            let mut agg: Option<NodeId> = None;
            for (i, &repr) in reprs.iter().enumerate() {
                let projected = self.tape.vecmat(repr, transform)?;
                let weight = self.tape.slice(alpha, i, 1)?;
                let term = self.tape.mul_broadcast(projected, weight)?;
                agg = Some(match agg {
                    Some(acc) => self.tape.add(acc, term)?,
                    None => term,
                });
            }
            self.tape.relu(agg.expect("non-empty neighbor set"))?
        };
        self.memo.insert((entity, t, layer), id);
        Ok(id)
    }

    /// Taped translation score between two encoded endpoints.
    pub fn score(
        &mut self,
        subject_repr: NodeId,
        relation: RelationId,
        object_repr: NodeId,
    ) -> Result<NodeId> {
        let rel = self.param_leaf(ParamKey::Relation(relation))?;
        let translated = self.tape.add(subject_repr, rel)?;
        let diff = self.tape.sub(translated, object_repr)?;
        let sq = self.tape.mul(diff, diff)?;
        let norm = self.tape.sum(sq)?;
        self.tape.scale_const(norm, -1.0)
    }

    /// Hinge terms `max(gamma - s_pos + s_neg, 0)` summed over negatives.
    pub fn hinge(&mut self, pos_score: NodeId, neg_scores: &[NodeId], gamma: f64) -> Result<NodeId> {
        if gamma <= 0.0 {
            return Err(Error::Config(format!("margin must be > 0, got {gamma}")));
        }
        if neg_scores.is_empty() {
            return Err(Error::InvalidArgument(
                "hinge needs at least one negative".into(),
            ));
        }
        let gamma_node = self.tape.constant(Tensor::scalar(gamma)?);
        let mut total: Option<NodeId> = None;
        for &neg in neg_scores {
            let shifted = self.tape.add(gamma_node, neg)?;
            let margin = self.tape.sub(shifted, pos_score)?;
            let term = self.tape.relu(margin)?;
            total = Some(match total {
                Some(acc) => self.tape.add(acc, term)?,
                None => term,
            });
        }
        Ok(total.expect("at least one negative"))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.tape.value(id)
    }

    /// Reverse pass from `root`, accumulating leaf gradients into `grads`
    /// keyed by parameter block.
    pub fn backward_into(&self, root: NodeId, grads: &mut ParamGrads) -> Result<()> {
        let node_grads = self.tape.backward(root)?;
        for (&key, &leaf) in &self.leaves {
            let g = node_grads.data(leaf);
            if g.iter().any(|&x| x != 0.0) {
                grads.accumulate(key, g);
            }
        }
        Ok(())
    }
}

/// Convenience wrapper matching the operation-level contract: encode one
/// entity at one time and return the representation values.
pub fn encode_entity(
    graph: &dyn GraphAccess,
    params: &ModelParams,
    entity: EntityId,
    t: Timestamp,
    layers: usize,
    budget: usize,
    time_bound: u64,
) -> Result<Vec<f64>> {
    if layers == 0 {
        return Err(Error::InvalidArgument("layer count must be >= 1".into()));
    }
    let mut fwd = Forward::new(
        params,
        graph,
        EncodeSettings {
            layers,
            budget,
            time_bound,
        },
        None,
    );
    let id = fwd.encode(entity, t)?;
    Ok(fwd.value(id).data().to_vec())
}
