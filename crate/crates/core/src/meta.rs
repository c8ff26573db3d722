//! Bi-level meta training: background pretraining, per-entity inner
//! adaptation, the temporal adaptation regularizer, interval-by-interval
//! outer updates, ablation modes, and meta-test adaptation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodeSettings, ModelParams, ParamGrads};
use crate::error::{Error, Result};
use crate::kgstore::{
    build_task_in_window, EntityId, GraphAccess, Quad, Role, SplitAssignment, TemporalKG,
};
use crate::kgstore::FewShotTask;
use crate::objective::{BatchLoss, CorruptionRule};

/// Every training hyperparameter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Inner-loop learning rate.
    pub eta: f64,
    /// Outer-loop learning rate.
    pub beta: f64,
    /// Background pretraining learning rate (always moment-based).
    pub pretrain_lr: f64,
    /// Hinge margin.
    pub gamma: f64,
    /// Shots per task (K).
    pub shots: usize,
    /// Query intervals per task (M).
    pub intervals: usize,
    /// Neighbor budget (b).
    pub budget: usize,
    /// Recency bound for sampling.
    pub time_bound: u64,
    /// Embedding dimension (d).
    pub dim: usize,
    /// Aggregation layers (L).
    pub layers: usize,
    /// Bound confidence, in (0, 1).
    pub confidence: f64,
    /// Variance of the point-mass Gaussians in the KL term.
    pub kl_variance: f64,
    /// Negatives per positive.
    pub negatives: usize,
    /// Meta-training epochs.
    pub epochs: usize,
    /// Background pretraining epochs.
    pub pretrain_epochs: usize,
    /// Tasks per outer update.
    pub batch_size: usize,
    /// Inner gradient steps (the adaptation itself is one step by default).
    pub inner_steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Clip outer/pretraining gradients to this global norm (0 disables).
    pub clip_norm: f64,
    /// Which parameter blocks the outer update may move.
    pub outer_scope: OuterScope,
    /// Reject training negatives that form facts present in the graph.
    pub filter_negatives: bool,
    /// Fraction of eligible meta-training entities kept as tasks.
    pub task_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            eta: 1e-4,
            beta: 1e-4,
            pretrain_lr: 1e-3,
            gamma: 0.5,
            shots: 3,
            intervals: 3,
            budget: 16,
            time_bound: 100,
            dim: 128,
            layers: 1,
            confidence: 0.1,
            kl_variance: 1.0,
            negatives: 10,
            epochs: 50,
            pretrain_epochs: 20,
            batch_size: 20,
            inner_steps: 1,
            seed: 0,
            optimizer: OptimizerKind::Moment,
            clip_norm: 10.0,
            outer_scope: OuterScope::All,
            filter_negatives: false,
            task_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta < 0.0 || self.beta < 0.0 || self.pretrain_lr < 0.0 {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Config("margin must be > 0".into()));
        }
        if self.kl_variance <= 0.0 {
            return Err(Error::Config("KL variance must be > 0".into()));
        }
        if !(0.0 < self.confidence && self.confidence < 1.0) {
            return Err(Error::Config("confidence must lie in (0, 1)".into()));
        }
        let counts = [
            self.shots,
            self.intervals,
            self.budget,
            self.dim,
            self.layers,
            self.negatives,
            self.batch_size,
            self.inner_steps,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config(
                "shots, intervals, budget, dim, layers, negatives, batch size, and inner steps must be >= 1"
                    .into(),
            ));
        }
        if !(0.0 < self.task_fraction && self.task_fraction <= 1.0) {
            return Err(Error::Config("task fraction must lie in (0, 1]".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("clip norm must be >= 0".into()));
        }
        Ok(())
    }

    pub fn encode_settings(&self) -> EncodeSettings {
        EncodeSettings {
            layers: self.layers,
            budget: self.budget,
            time_bound: self.time_bound,
        }
    }
}

/// Parameter blocks eligible for the outer update. Embedding rows hold
/// static content and can only memorize the training period's rotation
/// phase; restricting the outer loop to the sampling/aggregation strategy
/// keeps the meta signal on the parameters that generalize across time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OuterScope {
    /// Every trainable block.
    All,
    /// Everything except entity embedding rows.
    FreezeEmbeddings,
    /// Only the aggregation transform and the attention vector.
    Strategy,
}

impl OuterScope {
    fn keeps(&self, key: &crate::encoder::ParamKey) -> bool {
        use crate::encoder::ParamKey;
        match self {
            OuterScope::All => true,
            OuterScope::FreezeEmbeddings => !matches!(key, ParamKey::Entity(_)),
            OuterScope::Strategy => {
                matches!(key, ParamKey::Transform | ParamKey::Attention)
            }
        }
    }
}

impl std::str::FromStr for OuterScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<OuterScope> {
        match s {
            "all" => Ok(OuterScope::All),
            "freeze_embeddings" => Ok(OuterScope::FreezeEmbeddings),
            "strategy" => Ok(OuterScope::Strategy),
            other => Err(Error::Config(format!("unknown outer scope `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// Plain gradient descent (the update rule of the outer step).
    Descent,
    /// Adaptive-moment variant, the default for training quality.
    Moment,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<OptimizerKind> {
        match s {
            "descent" => Ok(OptimizerKind::Descent),
            "moment" => Ok(OptimizerKind::Moment),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Parameter update rule with optional first/second moment state.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    clip_norm: f64,
    steps: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Optimizer {
        Optimizer {
            kind,
            lr,
            clip_norm: 0.0,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_clip_norm(mut self, clip_norm: f64) -> Optimizer {
        self.clip_norm = clip_norm;
        self
    }

    /// Apply one update. A zero learning rate is an exact no-op.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &ParamGrads) -> Result<()> {
        if self.lr == 0.0 {
            return Ok(());
        }
        let mut clipped;
        let grads = if self.clip_norm > 0.0 {
            let norm = grads.norm_sq().sqrt();
            if norm > self.clip_norm {
                clipped = grads.clone();
                clipped.scale(self.clip_norm / norm);
                &clipped
            } else {
                grads
            }
        } else {
            grads
        };
        match self.kind {
            OptimizerKind::Descent => {
                params.apply_step(grads, self.lr);
            }
            OptimizerKind::Moment => {
                let flat_grad = params.grads_to_flat(grads);
                let n = flat_grad.len();
                if self.m.len() != n {
                    self.m = vec![0.0; n];
                    self.v = vec![0.0; n];
                }
                self.steps += 1;
                let bias1 = 1.0 - ADAM_BETA1.powi(self.steps as i32);
                let bias2 = 1.0 - ADAM_BETA2.powi(self.steps as i32);
                let mut flat = params.to_flat();
                for i in 0..n {
                    let g = flat_grad[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / bias1;
                    let v_hat = self.v[i] / bias2;
                    flat[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
                *params = params.with_flat(&flat)?;
            }
        }
        Ok(())
    }
}

/// Training regime: the full interval-progressive loop or one of its
/// ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    Full,
    StaticMaml,
    NoRegularizer,
    FinetuneOnly,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Full => "full",
            TrainMode::StaticMaml => "static_maml",
            TrainMode::NoRegularizer => "no_regularizer",
            TrainMode::FinetuneOnly => "finetune_only",
        }
    }

    pub fn all() -> [TrainMode; 4] {
        [
            TrainMode::FinetuneOnly,
            TrainMode::StaticMaml,
            TrainMode::NoRegularizer,
            TrainMode::Full,
        ]
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<TrainMode> {
        match s {
            "full" => Ok(TrainMode::Full),
            "static_maml" => Ok(TrainMode::StaticMaml),
            "no_regularizer" => Ok(TrainMode::NoRegularizer),
            "finetune_only" => Ok(TrainMode::FinetuneOnly),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

/// One training-log record per (epoch, interval) outer pass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub interval: usize,
    pub emp_loss: f64,
    pub kl: f64,
    pub penalty: f64,
    pub drift: f64,
    pub query_count: usize,
}

/// Global parameters plus the training log.
#[derive(Clone, Debug)]
pub struct MetaState {
    pub phi: ModelParams,
    pub interval_index: usize,
    pub log: Vec<TrainLogRecord>,
    pub pretrain_losses: Vec<f64>,
}

// Seed-derivation tags; composed with splitmix so iteration order never
// influences sampled negatives.
const CTX_PRETRAIN_SHUFFLE: u64 = 1;
const CTX_PRETRAIN_NEG: u64 = 2;
const CTX_SUPPORT: u64 = 3;
const CTX_QUERY: u64 = 4;
const CTX_TASK_SUBSAMPLE: u64 = 5;
const CTX_META_TEST: u64 = 6;

pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        h = h.rotate_left(21) ^ z;
    }
    h
}

fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

struct LossOutcome {
    total: f64,
    grads: ParamGrads,
    kink_margin: f64,
    scored_times: Option<(u64, u64)>,
}

fn loss_over_facts(
    params: &ModelParams,
    graph: &dyn GraphAccess,
    entity: EntityId,
    facts: &[Quad],
    config: &TrainConfig,
    seed: u64,
    compute_grads: bool,
    pool: Option<&[EntityId]>,
) -> Result<LossOutcome> {
    let mut batch = BatchLoss::new(
        params,
        graph,
        config.encode_settings(),
        config.gamma,
        config.negatives,
        config.filter_negatives,
        compute_grads,
    );
    if let Some(pool) = pool {
        batch = batch.with_negative_pool(pool);
    }
    for (i, fact) in facts.iter().enumerate() {
        let mut rng = rng_for(&[seed, i as u64]);
        batch.add_fact(fact, CorruptionRule::OppositeOf(entity), &mut rng)?;
    }
    Ok(LossOutcome {
        total: batch.total,
        grads: batch.grads,
        kink_margin: batch.min_kink_margin,
        scored_times: batch.scored_times,
    })
}

struct AdaptOutcome {
    params: ModelParams,
    kink_margin: f64,
}

fn adapt_on_facts(
    phi: &ModelParams,
    graph: &dyn GraphAccess,
    entity: EntityId,
    support: &[Quad],
    config: &TrainConfig,
    seed: u64,
    pool: Option<&[EntityId]>,
) -> Result<AdaptOutcome> {
    let mut adapted = phi.clone();
    let mut kink_margin = f64::INFINITY;
    for step in 0..config.inner_steps {
        let out = loss_over_facts(
            &adapted,
            graph,
            entity,
            support,
            config,
            mix_seed(&[seed, step as u64]),
            true,
            pool,
        )?;
        out.grads.check_finite()?;
        kink_margin = kink_margin.min(out.kink_margin);
        adapted.apply_step(&out.grads, config.eta);
    }
    Ok(AdaptOutcome {
        params: adapted,
        kink_margin,
    })
}

/// Warm-start a fresh entity's embedding row from the mean of its
/// support-set counterparts, then run the inner adaptation. An entity is
/// fresh when its row is absent from the table or still zeroed, i.e. it
/// was invisible during background training.
fn adapt_to_entity(
    phi: &ModelParams,
    graph: &dyn GraphAccess,
    entity: EntityId,
    support: &[Quad],
    config: &TrainConfig,
    seed: u64,
    pool: Option<&[EntityId]>,
) -> Result<AdaptOutcome> {
    let fresh = entity as usize >= phi.num_entities() || phi.entity_row_is_zero(entity);
    if !fresh {
        return adapt_on_facts(phi, graph, entity, support, config, seed, pool);
    }
    let mut warmed = phi.clone();
    warmed.ensure_entity_capacity(entity as usize + 1);
    let mut mean = vec![0.0; warmed.dim()];
    let mut count = 0usize;
    for fact in support {
        let counterpart = if fact.subject == entity {
            fact.object
        } else {
            fact.subject
        };
        if (counterpart as usize) < warmed.num_entities() && counterpart != entity {
            for (m, &x) in mean.iter_mut().zip(warmed.entity_row(counterpart)) {
                *m += x;
            }
            count += 1;
        }
    }
    if count > 0 {
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
    }
    warmed.set_entity_row(entity, &mean);
    adapt_on_facts(&warmed, graph, entity, support, config, seed, pool)
}

/// One inner-loop adaptation: a single (configurable) gradient step on the
/// support-set hinge loss. The global parameters are never modified.
pub fn inner_adapt(
    phi: &ModelParams,
    graph: &dyn GraphAccess,
    task: &FewShotTask,
    config: &TrainConfig,
) -> Result<ModelParams> {
    inner_adapt_seeded(phi, graph, task, config, config.seed, 0, 0)
}

/// Inner adaptation with an explicit seeding context so different epochs
/// and intervals draw fresh negatives deterministically.
pub fn inner_adapt_seeded(
    phi: &ModelParams,
    graph: &dyn GraphAccess,
    task: &FewShotTask,
    config: &TrainConfig,
    seed: u64,
    epoch: usize,
    interval: usize,
) -> Result<ModelParams> {
    if task.support.is_empty() {
        return Err(Error::InvalidArgument("task support set is empty".into()));
    }
    let seed = mix_seed(&[
        seed,
        CTX_SUPPORT,
        task.entity as u64,
        epoch as u64,
        interval as u64,
    ]);
    adapt_on_facts(phi, graph, task.entity, &task.support, config, seed, None).map(|o| o.params)
}

/// KL divergence between equal-variance isotropic Gaussians centered at the
/// two parameter vectors: `||phi_new - phi_old||^2 / (2 sigma^2)`.
pub fn kl_point_gaussian(
    phi_new: &ModelParams,
    phi_old: &ModelParams,
    kl_variance: f64,
) -> Result<f64> {
    if kl_variance <= 0.0 {
        return Err(Error::Config("KL variance must be > 0".into()));
    }
    Ok(phi_new.distance_sq(phi_old)? / (2.0 * kl_variance))
}

/// Empirical loss plus the generalization-bound penalty:
/// `emp + sqrt((kl + ln(|D| / delta)) / (2 |D| - 1))`.
pub fn temporal_regularizer(emp_loss: f64, kl: f64, d_size: usize, delta: f64) -> Result<f64> {
    Ok(emp_loss + regularizer_penalty(kl, d_size, delta)?)
}

/// The square-root penalty term on its own.
pub fn regularizer_penalty(kl: f64, d_size: usize, delta: f64) -> Result<f64> {
    if d_size == 0 {
        return Err(Error::InvalidArgument(
            "regularizer needs at least one query in the interval".into(),
        ));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::Config(format!("confidence must lie in (0, 1), got {delta}")));
    }
    if kl < 0.0 {
        return Err(Error::InvalidArgument(format!("KL must be >= 0, got {kl}")));
    }
    let d = d_size as f64;
    Ok(((kl + (d / delta).ln()) / (2.0 * d - 1.0)).sqrt())
}

/// Everything one outer pass produces before the parameter update.
pub struct OuterOutcome {
    pub grad: ParamGrads,
    pub emp_loss: f64,
    /// Mean adaptation KL of the batch, a diagnostic of inner drift.
    pub kl: f64,
    /// Bound penalty evaluated at the pre-update point (zero KL).
    pub penalty: f64,
    pub regularizer: f64,
    pub query_count: usize,
    pub tasks_used: usize,
    /// Min/max timestamps of the scored query facts, for interval audits.
    pub scored_times: Option<(u64, u64)>,
    pub kink_margin: f64,
}

/// First-order outer gradient for query interval `m` (1-based) over a task
/// batch, starting from `phi` (the parameters learned through interval
/// `m - 1`).
///
/// Per task: adapt on the support set, take the query-interval hinge
/// gradient at the adapted parameters (inner Jacobian treated as identity),
/// and pool. The bound penalty is evaluated at the pre-update parameters,
/// where the posterior and prior coincide: its KL vanishes and its
/// closed-form gradient `delta / (2 sigma^2 (2|D| - 1) sqrt(.))` is zero,
/// so the penalty stabilizes the reported objective without steering the
/// update away from the empirical term.
pub fn outer_gradient(
    phi: &ModelParams,
    graph: &dyn GraphAccess,
    tasks: &[FewShotTask],
    interval: usize,
    config: &TrainConfig,
    with_penalty: bool,
    epoch: usize,
    negative_pool: Option<&[EntityId]>,
) -> Result<OuterOutcome> {
    if interval == 0 {
        return Err(Error::InvalidArgument("interval index is 1-based".into()));
    }
    let query_count: usize = tasks
        .iter()
        .map(|t| t.query_intervals.get(interval - 1).map_or(0, |q| q.len()))
        .sum();
    if query_count == 0 {
        return Ok(OuterOutcome {
            grad: ParamGrads::new(),
            emp_loss: 0.0,
            kl: 0.0,
            penalty: 0.0,
            regularizer: 0.0,
            query_count: 0,
            tasks_used: 0,
            scored_times: None,
            kink_margin: f64::INFINITY,
        });
    }

    let mut grad = ParamGrads::new();
    let mut delta_sum = ParamGrads::new();
    let mut emp_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut tasks_used = 0usize;
    let mut scored_times: Option<(u64, u64)> = None;
    let mut kink_margin = f64::INFINITY;

    for task in tasks {
        let queries = match task.query_intervals.get(interval - 1) {
            Some(q) if !q.is_empty() => q,
            _ => continue,
        };
        let support_seed = mix_seed(&[
            config.seed,
            CTX_SUPPORT,
            task.entity as u64,
            epoch as u64,
            interval as u64,
        ]);
        let inner = adapt_to_entity(
            phi,
            graph,
            task.entity,
            &task.support,
            config,
            support_seed,
            negative_pool,
        )?;
        let adapted = inner.params;
        kink_margin = kink_margin.min(inner.kink_margin);
        let mut out = loss_over_facts(
            &adapted,
            graph,
            task.entity,
            queries,
            config,
            mix_seed(&[
                config.seed,
                CTX_QUERY,
                task.entity as u64,
                epoch as u64,
                interval as u64,
            ]),
            true,
            negative_pool,
        )?;
        out.grads.check_finite()?;
        // The simulated entity's own row is task-specific state, not
        // shared knowledge: keep it out of the outer update and the KL.
        out.grads.remove(&crate::encoder::ParamKey::Entity(task.entity));
        emp_sum += out.total;
        grad.add_assign(&out.grads);
        let mut delta = adapted.delta_from(phi);
        delta.remove(&crate::encoder::ParamKey::Entity(task.entity));
        // The posterior the outer step produces only moves blocks inside
        // the update scope; measure the adaptation KL over that subspace.
        delta.retain(|key| config.outer_scope.keeps(key));
        kl_sum += delta.norm_sq() / (2.0 * config.kl_variance);
        delta_sum.add_assign(&delta);
        tasks_used += 1;
        kink_margin = kink_margin.min(out.kink_margin);
        if let Some((lo, hi)) = out.scored_times {
            scored_times = Some(match scored_times {
                None => (lo, hi),
                Some((l, h)) => (l.min(lo), h.max(hi)),
            });
        }
    }

    let d = query_count as f64;
    let emp_loss = emp_sum / d;
    grad.scale(1.0 / d);
    grad.retain(|key| config.outer_scope.keeps(key));
    let _ = delta_sum;
    let kl = kl_sum / tasks_used as f64;
    // Pre-update evaluation point: posterior equals prior, KL = 0.
    let penalty = regularizer_penalty(0.0, query_count, config.confidence)?;

    Ok(OuterOutcome {
        grad,
        emp_loss,
        kl,
        penalty: if with_penalty { penalty } else { 0.0 },
        regularizer: emp_loss + if with_penalty { penalty } else { 0.0 },
        query_count,
        tasks_used,
        scored_times,
        kink_margin,
    })
}

/// One outer update over a task batch: compute the first-order gradient and
/// step the global parameters. When every task's interval is empty the
/// update is skipped and the state is returned unchanged.
#[allow(clippy::too_many_arguments)]
pub fn outer_step(
    state: &mut MetaState,
    graph: &dyn GraphAccess,
    tasks: &[FewShotTask],
    interval: usize,
    config: &TrainConfig,
    with_penalty: bool,
    epoch: usize,
    optimizer: &mut Optimizer,
    negative_pool: Option<&[EntityId]>,
) -> Result<OuterOutcome> {
    let outcome = outer_gradient(
        &state.phi,
        graph,
        tasks,
        interval,
        config,
        with_penalty,
        epoch,
        negative_pool,
    )?;
    if outcome.query_count == 0 {
        log::warn!("interval {interval}: no query facts in batch, skipping update");
        return Ok(outcome);
    }
    optimizer.apply(&mut state.phi, &outcome.grad)?;
    state.interval_index = interval;
    Ok(outcome)
}

/// Standard (non-meta) training over every fact observable in the
/// background period. Returns the initial parameters and per-epoch losses.
pub fn pretrain_background(
    kg: &TemporalKG,
    graph: &dyn GraphAccess,
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<f64>)> {
    config.validate()?;
    let cutoff = split.boundaries.0;
    let facts: Vec<(usize, Quad)> = kg
        .quadruples()
        .iter()
        .enumerate()
        .filter(|(_, q)| q.time <= cutoff)
        .map(|(i, q)| (i, *q))
        .collect();
    if facts.is_empty() {
        return Err(Error::InvalidArgument(
            "background split holds no facts".into(),
        ));
    }

    let mut params = ModelParams::init(kg.num_entities(), kg.num_relations(), config.dim, config.seed)?;
    // Entities unseen during background training keep zeroed rows: the
    // zero marks them as fresh, so task adaptation warm-starts them from
    // their support counterparts (simulated and real new entities alike).
    for (e, role) in split.roles().iter().enumerate() {
        if !matches!(role, Role::Background) {
            params.zero_entity_row(e as EntityId);
        }
    }
    let pool = background_pool(kg, split);

    let mut optimizer = Optimizer::new(OptimizerKind::Moment, config.pretrain_lr).with_clip_norm(config.clip_norm);
    let mut epoch_losses = Vec::with_capacity(config.pretrain_epochs);
    for epoch in 0..config.pretrain_epochs {
        let mut order: Vec<usize> = (0..facts.len()).collect();
        order.shuffle(&mut rng_for(&[config.seed, CTX_PRETRAIN_SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = BatchLoss::new(
                &params,
                graph,
                config.encode_settings(),
                config.gamma,
                config.negatives,
                config.filter_negatives,
                true,
            )
            .with_negative_pool(&pool);
            for &i in chunk {
                let (storage_idx, fact) = facts[i];
                let mut rng = rng_for(&[
                    config.seed,
                    CTX_PRETRAIN_NEG,
                    epoch as u64,
                    storage_idx as u64,
                ]);
                batch.add_fact(&fact, CorruptionRule::Alternate(storage_idx), &mut rng)?;
            }
            epoch_loss += batch.total;
            let mut grads = batch.grads;
            grads.check_finite()?;
            grads.scale(1.0 / chunk.len() as f64);
            optimizer.apply(&mut params, &grads)?;
        }
        epoch_losses.push(epoch_loss / facts.len() as f64);
    }
    Ok((params, epoch_losses))
}

/// Entities visible during the background period; training-time negative
/// corruption draws from this pool so facts never get corrupted with
/// entities that do not exist yet.
pub fn background_pool(kg: &TemporalKG, split: &SplitAssignment) -> Vec<EntityId> {
    let cutoff = split.boundaries.0;
    (0..kg.num_entities() as EntityId)
        .filter(|&e| kg.first_seen(e) <= cutoff)
        .collect()
}

/// Simulated new-entity tasks for meta training: meta-train entities with
/// more than K facts inside their own period.
pub fn training_tasks(
    kg: &TemporalKG,
    split: &SplitAssignment,
    config: &TrainConfig,
    intervals: usize,
) -> Result<Vec<FewShotTask>> {
    let window_hi = split.boundaries.1;
    let mut tasks = Vec::new();
    for e in split.entities_with_role(Role::MetaTrain) {
        match build_task_in_window(kg, e, config.shots, intervals, Some(window_hi)) {
            Ok(task) => tasks.push(task),
            Err(Error::TaskConstruction { .. }) => continue,
            Err(other) => return Err(other),
        }
    }
    if config.task_fraction < 1.0 && tasks.len() > 1 {
        let keep = ((tasks.len() as f64 * config.task_fraction).ceil() as usize).max(1);
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        order.shuffle(&mut rng_for(&[config.seed, CTX_TASK_SUBSAMPLE]));
        let mut kept: Vec<usize> = order.into_iter().take(keep).collect();
        kept.sort_unstable();
        tasks = kept.into_iter().map(|i| tasks[i].clone()).collect();
    }
    Ok(tasks)
}

/// Meta training from an explicit starting point.
pub fn meta_train_from(
    phi0: ModelParams,
    kg: &TemporalKG,
    graph: &dyn GraphAccess,
    split: &SplitAssignment,
    config: &TrainConfig,
    mode: TrainMode,
    pretrain_losses: Vec<f64>,
) -> Result<MetaState> {
    config.validate()?;
    let mut state = MetaState {
        phi: phi0,
        interval_index: 0,
        log: Vec::new(),
        pretrain_losses,
    };
    if mode == TrainMode::FinetuneOnly {
        return Ok(state);
    }

    let intervals = if mode == TrainMode::StaticMaml {
        1
    } else {
        config.intervals
    };
    let tasks = training_tasks(kg, split, config, intervals)?;
    if tasks.is_empty() {
        return Err(Error::InvalidArgument(
            "no meta-training entity has enough facts for a task".into(),
        ));
    }
    let with_penalty = mode == TrainMode::Full;
    let mut optimizer = Optimizer::new(config.optimizer, config.beta).with_clip_norm(config.clip_norm);
    let pool = background_pool(kg, split);

    for epoch in 0..config.epochs {
        for m in 1..=intervals {
            let phi_before = state.phi.clone();
            let mut emp = 0.0;
            let mut kl = 0.0;
            let mut penalty = 0.0;
            let mut query_count = 0usize;
            let mut batches = 0usize;
            for batch in tasks.chunks(config.batch_size) {
                let outcome = outer_step(
                    &mut state,
                    graph,
                    batch,
                    m,
                    config,
                    with_penalty,
                    epoch,
                    &mut optimizer,
                    Some(&pool),
                )?;
                if outcome.query_count == 0 {
                    continue;
                }
                emp += outcome.emp_loss;
                kl += outcome.kl;
                penalty += outcome.penalty;
                query_count += outcome.query_count;
                batches += 1;
            }
            let denom = batches.max(1) as f64;
            let drift_sq = state.phi.distance_sq(&phi_before)?;
            // Posterior-vs-prior divergence of this interval's update.
            let transition_kl = drift_sq / (2.0 * config.kl_variance);
            let _ = kl;
            state.log.push(TrainLogRecord {
                epoch,
                interval: m,
                emp_loss: emp / denom,
                kl: transition_kl,
                penalty: penalty / denom,
                drift: drift_sq.sqrt(),
                query_count,
            });
            state.interval_index = m;
        }
    }
    Ok(state)
}

/// Full training pipeline for one mode: pretrain on the background period,
/// then run the mode's meta loop.
pub fn meta_train(
    kg: &TemporalKG,
    graph: &dyn GraphAccess,
    split: &SplitAssignment,
    config: &TrainConfig,
    mode: TrainMode,
) -> Result<MetaState> {
    let (phi0, pretrain_losses) = pretrain_background(kg, graph, split, config)?;
    meta_train_from(phi0, kg, graph, split, config, mode, pretrain_losses)
}

/// Adapt the global parameters to one (possibly never-seen) entity at meta
/// test: warm-start its embedding row from the mean of its support-set
/// counterparts when the row is absent or untouched, then run the inner
/// adaptation on the support facts. The global parameters are untouched.
pub fn meta_test_adapt(
    phi: &ModelParams,
    graph: &dyn GraphAccess,
    entity: EntityId,
    support: &[Quad],
    config: &TrainConfig,
) -> Result<ModelParams> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("meta-test support set is empty".into()));
    }
    let seed = mix_seed(&[config.seed, CTX_META_TEST, entity as u64]);
    adapt_to_entity(phi, graph, entity, support, config, seed, None).map(|o| o.params)
}
