//! Negative sampling, the hinge ranking loss, and filtered ranking
//! evaluation (MRR, Hits@{1,3,10}).

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodeSettings, Forward, ModelParams, ParamGrads};
use crate::error::{Error, Result};
use crate::kgstore::{EntityId, GraphAccess, Quad, Timestamp};

/// Which endpoint of a quadruple gets replaced or predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Subject,
    Object,
}

impl Slot {
    pub fn opposite(self) -> Slot {
        match self {
            Slot::Subject => Slot::Object,
            Slot::Object => Slot::Subject,
        }
    }
}

fn with_slot(q: &Quad, slot: Slot, entity: EntityId) -> Quad {
    let mut out = *q;
    match slot {
        Slot::Subject => out.subject = entity,
        Slot::Object => out.object = entity,
    }
    out
}

fn slot_entity(q: &Quad, slot: Slot) -> EntityId {
    match slot {
        Slot::Subject => q.subject,
        Slot::Object => q.object,
    }
}

/// Corrupt the endpoint opposite the task's new entity. If the entity sits
/// on both sides (a self-loop) the object is corrupted.
pub fn sample_negatives(
    graph: &dyn GraphAccess,
    positive: &Quad,
    new_entity: EntityId,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Quad>> {
    let slot = if positive.subject == new_entity {
        Slot::Object
    } else if positive.object == new_entity {
        Slot::Subject
    } else {
        return Err(Error::InvalidArgument(format!(
            "entity {new_entity} is not an endpoint of the positive fact"
        )));
    };
    sample_negatives_slot(graph, positive, slot, n, rng, false, None)
}

/// Replace the entity in `slot` with uniform draws over the vocabulary
/// (or an explicit candidate pool), redrawing when the corruption
/// reproduces the positive fact. Sampling is with replacement and
/// deterministic given the generator state. With `filter` set, draws that
/// form a fact present in the graph are also rejected (best effort,
/// falling back to an unfiltered draw).
pub fn sample_negatives_slot(
    graph: &dyn GraphAccess,
    positive: &Quad,
    slot: Slot,
    n: usize,
    rng: &mut ChaCha8Rng,
    filter: bool,
    pool: Option<&[EntityId]>,
) -> Result<Vec<Quad>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one negative".into()));
    }
    let vocab = pool.map_or(graph.entity_count(), |p| p.len());
    if vocab < 2 {
        return Err(Error::InvalidArgument(
            "negative sampling needs a vocabulary of at least 2 entities".into(),
        ));
    }
    let truth = slot_entity(positive, slot);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = None;
        for attempt in 0..1000 {
            let idx = rng.gen_range(0..vocab);
            let cand = pool.map_or(idx as EntityId, |p| p[idx]);
            if cand == truth {
                continue;
            }
            let corrupted = with_slot(positive, slot, cand);
            if filter && attempt < 990 && graph.contains_fact(&corrupted) {
                continue;
            }
            pick = Some(corrupted);
            break;
        }
        out.push(pick.ok_or_else(|| {
            Error::InvalidArgument("exhausted attempts drawing a negative".into())
        })?);
    }
    Ok(out)
}

/// Summed hinge loss over per-positive groups of negative scores:
/// `sum_i sum_j max(gamma - pos_i + neg_ij, 0)`.
pub fn hinge_loss(pos_scores: &[f64], neg_scores: &[Vec<f64>], gamma: f64) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::Config(format!("margin must be > 0, got {gamma}")));
    }
    if pos_scores.len() != neg_scores.len() {
        return Err(Error::ShapeMismatch {
            op: "hinge_loss",
            detail: format!(
                "{} positives vs {} negative groups",
                pos_scores.len(),
                neg_scores.len()
            ),
        });
    }
    if neg_scores.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidArgument(
            "every positive needs at least one negative".into(),
        ));
    }
    Ok(pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(&p, negs)| negs.iter().map(|&n| (gamma - p + n).max(0.0)).sum::<f64>())
        .sum())
}

/// Taped hinge loss over a set of facts, one tape per scored fact.
///
/// Each fact is scored with itself masked from the graph view, so the
/// encoder predicts from surrounding history rather than from the fact
/// being scored. Negatives share the positive's mask and tape.
pub struct BatchLoss<'a> {
    params: &'a ModelParams,
    graph: &'a dyn GraphAccess,
    settings: EncodeSettings,
    gamma: f64,
    negatives: usize,
    filter_negatives: bool,
    compute_grads: bool,
    negative_pool: Option<&'a [EntityId]>,
    pub total: f64,
    pub grads: ParamGrads,
    pub groups: usize,
    pub min_kink_margin: f64,
    /// Combined ReLU sign pattern across all scored groups.
    pub relu_fingerprint: u64,
    pub scored_times: Option<(Timestamp, Timestamp)>,
}

/// How the corrupted endpoint is chosen for a fact group.
#[derive(Clone, Copy, Debug)]
pub enum CorruptionRule {
    /// Corrupt the endpoint opposite this entity.
    OppositeOf(EntityId),
    /// Alternate object/subject corruption by group parity.
    Alternate(usize),
}

impl<'a> BatchLoss<'a> {
    pub fn new(
        params: &'a ModelParams,
        graph: &'a dyn GraphAccess,
        settings: EncodeSettings,
        gamma: f64,
        negatives: usize,
        filter_negatives: bool,
        compute_grads: bool,
    ) -> BatchLoss<'a> {
        BatchLoss {
            params,
            graph,
            settings,
            gamma,
            negatives,
            filter_negatives,
            compute_grads,
            negative_pool: None,
            total: 0.0,
            grads: ParamGrads::new(),
            groups: 0,
            min_kink_margin: f64::INFINITY,
            relu_fingerprint: 0xcbf29ce484222325,
            scored_times: None,
        }
    }

    /// Restrict corrupted endpoints to an explicit candidate pool, e.g.
    /// the entities already visible during the training period.
    pub fn with_negative_pool(mut self, pool: &'a [EntityId]) -> BatchLoss<'a> {
        self.negative_pool = Some(pool);
        self
    }

    /// Score one positive fact against its sampled negatives and accumulate
    /// the hinge terms (and gradients when enabled).
    pub fn add_fact(&mut self, fact: &Quad, rule: CorruptionRule, rng: &mut ChaCha8Rng) -> Result<()> {
        let negatives = match rule {
            CorruptionRule::OppositeOf(entity) => {
                let slot = if fact.subject == entity {
                    Slot::Object
                } else if fact.object == entity {
                    Slot::Subject
                } else {
                    return Err(Error::InvalidArgument(format!(
                        "entity {entity} is not an endpoint of the scored fact"
                    )));
                };
                sample_negatives_slot(
                    self.graph,
                    fact,
                    slot,
                    self.negatives,
                    rng,
                    self.filter_negatives,
                    self.negative_pool,
                )?
            }
            CorruptionRule::Alternate(index) => {
                let slot = if index % 2 == 0 { Slot::Object } else { Slot::Subject };
                sample_negatives_slot(
                    self.graph,
                    fact,
                    slot,
                    self.negatives,
                    rng,
                    self.filter_negatives,
                    self.negative_pool,
                )?
            }
        };

        let mut fwd = Forward::new(self.params, self.graph, self.settings, Some(*fact));
        let h_s = fwd.encode(fact.subject, fact.time)?;
        let h_o = fwd.encode(fact.object, fact.time)?;
        let pos = fwd.score(h_s, fact.relation, h_o)?;
        let mut neg_nodes = Vec::with_capacity(negatives.len());
        for neg in &negatives {
            let hn_s = fwd.encode(neg.subject, neg.time)?;
            let hn_o = fwd.encode(neg.object, neg.time)?;
            neg_nodes.push(fwd.score(hn_s, neg.relation, hn_o)?);
        }
        let loss = fwd.hinge(pos, &neg_nodes, self.gamma)?;
        self.total += fwd.value(loss).as_scalar()?;
        self.groups += 1;
        self.min_kink_margin = self.min_kink_margin.min(fwd.tape.relu_kink_margin());
        self.relu_fingerprint = self
            .relu_fingerprint
            .rotate_left(13)
            .wrapping_mul(0x100000001b3)
            ^ fwd.tape.relu_sign_fingerprint();
        self.scored_times = Some(match self.scored_times {
            None => (fact.time, fact.time),
            Some((lo, hi)) => (lo.min(fact.time), hi.max(fact.time)),
        });
        if self.compute_grads {
            fwd.backward_into(loss, &mut self.grads)?;
        }
        Ok(())
    }
}

/// One evaluated query with its filtered rank.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankedQuery {
    pub query: Quad,
    pub masked: Slot,
    pub true_entity: EntityId,
    /// 1-based filtered rank; ties are broken against the true entity.
    pub rank: usize,
    /// Number of scored candidates after filtering, true entity included.
    pub candidate_count: usize,
    /// Query-interval index the fact belongs to (1-based), 0 when unknown.
    pub interval: usize,
}

/// Filtering convention for ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMode {
    /// Remove candidates forming a known quadruple at the query timestamp.
    TimeAware,
    /// Remove candidates forming a known (s, r, o) triple at any time.
    TimeAgnostic,
    /// No filtering (debug output).
    Raw,
}

/// Rank the true entity of `query` in the masked slot against every
/// vocabulary entity, in the filtered setting. Candidates scoring equal to
/// the true entity count against it (pessimistic ties).
pub fn rank_query(
    graph: &dyn GraphAccess,
    params: &ModelParams,
    settings: EncodeSettings,
    query: &Quad,
    masked: Slot,
    filter: FilterMode,
    interval: usize,
) -> Result<RankedQuery> {
    let true_entity = slot_entity(query, masked);
    if (true_entity as usize) >= graph.entity_count()
        || graph.entity_count() > params.num_entities()
    {
        return Err(Error::UnknownEntity(true_entity));
    }

    let mut fwd = Forward::new(params, graph, settings, Some(*query));
    let fixed = slot_entity(query, masked.opposite());
    let fixed_repr = fwd.encode(fixed, query.time)?;

    let score_candidate = |fwd: &mut Forward, cand: EntityId| -> Result<f64> {
        let cand_repr = fwd.encode(cand, query.time)?;
        let node = match masked {
            Slot::Object => fwd.score(fixed_repr, query.relation, cand_repr)?,
            Slot::Subject => fwd.score(cand_repr, query.relation, fixed_repr)?,
        };
        fwd.value(node).as_scalar()
    };

    let true_score = score_candidate(&mut fwd, true_entity)?;
    let mut rank = 1usize;
    let mut candidate_count = 1usize;
    for cand in 0..graph.entity_count() as EntityId {
        if cand == true_entity {
            continue;
        }
        let completed = with_slot(query, masked, cand);
        let known = match filter {
            FilterMode::TimeAware => graph.contains_fact(&completed),
            FilterMode::TimeAgnostic => {
                graph.contains_triple(completed.subject, completed.relation, completed.object)
            }
            FilterMode::Raw => false,
        };
        if known {
            continue;
        }
        candidate_count += 1;
        if score_candidate(&mut fwd, cand)? >= true_score {
            rank += 1;
        }
    }

    Ok(RankedQuery {
        query: *query,
        masked,
        true_entity,
        rank,
        candidate_count,
        interval,
    })
}

/// Rank position of a true score within candidate scores under the
/// pessimistic tie rule. Exposed for property tests.
pub fn rank_from_scores(true_score: f64, others: &[f64]) -> usize {
    1 + others.iter().filter(|&&s| s >= true_score).count()
}

/// Aggregated ranking metrics.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub query_count: usize,
    /// Keyed by 1-based query-interval index.
    pub per_interval: BTreeMap<usize, IntervalMetrics>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IntervalMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub query_count: usize,
}

impl MetricsReport {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.hits1),
            3 => Some(self.hits3),
            10 => Some(self.hits10),
            _ => None,
        }
    }

    /// Header plus one row per scope, suitable for tabulation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "scope,mrr,hits1,hits3,hits10,query_count")?;
        writeln!(
            w,
            "overall,{},{},{},{},{}",
            self.mrr, self.hits1, self.hits3, self.hits10, self.query_count
        )?;
        for (idx, m) in &self.per_interval {
            writeln!(
                w,
                "interval_{idx},{},{},{},{},{}",
                m.mrr, m.hits1, m.hits3, m.hits10, m.query_count
            )?;
        }
        Ok(())
    }
}

fn summarize(ranks: &[usize]) -> (f64, f64, f64, f64) {
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    (mrr, frac(1), frac(3), frac(10))
}

/// Mean reciprocal rank and hit fractions over ranked queries, with a
/// per-interval breakdown.
pub fn aggregate_metrics(ranked: &[RankedQuery]) -> Result<MetricsReport> {
    if ranked.is_empty() {
        return Err(Error::InvalidArgument("no ranked queries to aggregate".into()));
    }
    let all: Vec<usize> = ranked.iter().map(|r| r.rank).collect();
    let (mrr, hits1, hits3, hits10) = summarize(&all);

    let mut by_interval: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in ranked {
        by_interval.entry(r.interval).or_default().push(r.rank);
    }
    let per_interval = by_interval
        .into_iter()
        .map(|(idx, ranks)| {
            let (mrr, hits1, hits3, hits10) = summarize(&ranks);
            (
                idx,
                IntervalMetrics {
                    mrr,
                    hits1,
                    hits3,
                    hits10,
                    query_count: ranks.len(),
                },
            )
        })
        .collect();

    Ok(MetricsReport {
        mrr,
        hits1,
        hits3,
        hits10,
        query_count: ranked.len(),
        per_interval,
    })
}

/// Expected reciprocal rank when the true entity is placed uniformly among
/// `n` candidates: `H_n / n`.
pub fn uniform_mrr_expectation(candidates: usize) -> f64 {
    let h: f64 = (1..=candidates).map(|k| 1.0 / k as f64).sum();
    h / candidates as f64
}
