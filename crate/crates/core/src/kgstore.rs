//! Temporal knowledge-graph storage, ingestion, chronological splitting,
//! new-entity detection, and few-shot task construction.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;
pub type Timestamp = u64;

/// One timestamped fact (subject, relation, object, time).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quad {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub time: Timestamp,
}

/// Role of the indexed entity within the underlying fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactSide {
    Subject,
    Object,
}

/// One adjacency entry: the indexed entity interacted with `counterpart`
/// through `relation` at `time`, playing the `side` role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdjEvent {
    pub counterpart: EntityId,
    pub relation: RelationId,
    pub time: Timestamp,
    pub side: FactSide,
    /// Position of the fact in the original input, for stable tie order.
    pub input_order: u32,
}

impl AdjEvent {
    /// Reconstruct the stored quadruple this entry came from.
    pub fn as_quad(&self, indexed: EntityId) -> Quad {
        match self.side {
            FactSide::Subject => Quad {
                subject: indexed,
                relation: self.relation,
                object: self.counterpart,
                time: self.time,
            },
            FactSide::Object => Quad {
                subject: self.counterpart,
                relation: self.relation,
                object: indexed,
                time: self.time,
            },
        }
    }
}

/// Read access used by the sampler and encoder. Implemented by
/// [`TemporalKG`] and by test doubles that audit what the model reads.
pub trait GraphAccess: Sync {
    fn entity_count(&self) -> usize;
    fn relation_count(&self) -> usize;
    /// Events of `entity` with timestamp in `(t - dt, t]`. An event at
    /// exactly `t` always qualifies, including when `dt == 0`. The slice is
    /// sorted ascending by (time, input order).
    fn events_in_window(&self, entity: EntityId, t: Timestamp, dt: u64) -> &[AdjEvent];
    /// Exact-quadruple membership (timestamp included).
    fn contains_fact(&self, quad: &Quad) -> bool;
    /// Membership ignoring the timestamp.
    fn contains_triple(&self, subject: EntityId, relation: RelationId, object: EntityId) -> bool;
}

/// Immutable temporal knowledge graph.
///
/// Vocabularies assign dense integer ids in first-appearance order of the
/// input. Quadruples and per-entity adjacency are sorted non-decreasing by
/// timestamp with input order breaking ties; exact duplicates are retained.
#[derive(Clone, Debug)]
pub struct TemporalKG {
    entity_names: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    quads: Vec<Quad>,
    input_order: Vec<u32>,
    adjacency: Vec<Vec<AdjEvent>>,
    entity_facts: Vec<Vec<u32>>,
    fact_set: HashSet<Quad>,
    triple_set: HashSet<(EntityId, RelationId, EntityId)>,
    first_seen: Vec<Timestamp>,
}

impl TemporalKG {
    /// Parse tab-separated quadruple records: `subject<TAB>relation<TAB>
    /// object<TAB>timestamp`. Lines starting with `#` and empty lines are
    /// ignored. An empty source yields a valid empty graph.
    pub fn ingest_tsv<R: BufRead>(source: R) -> Result<TemporalKG> {
        let mut raw: Vec<(String, String, String, Timestamp)> = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let time: Timestamp = fields[3].trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("timestamp `{}` is not a non-negative integer", fields[3]),
            })?;
            raw.push((
                fields[0].to_string(),
                fields[1].to_string(),
                fields[2].to_string(),
                time,
            ));
        }
        Self::from_records(raw)
    }

    /// Build a graph from already-tokenized records, preserving input order
    /// for id assignment and tie-breaking.
    pub fn from_records(records: Vec<(String, String, String, Timestamp)>) -> Result<TemporalKG> {
        let mut entity_names = Vec::new();
        let mut entity_index = HashMap::new();
        let mut relation_names = Vec::new();
        let mut relation_index = HashMap::new();

        let intern_entity = |name: String,
                                 names: &mut Vec<String>,
                                 index: &mut HashMap<String, EntityId>|
         -> EntityId {
            if let Some(&id) = index.get(&name) {
                return id;
            }
            let id = names.len() as EntityId;
            index.insert(name.clone(), id);
            names.push(name);
            id
        };

        let mut quads = Vec::with_capacity(records.len());
        for (order, (s, r, o, t)) in records.into_iter().enumerate() {
            let subject = intern_entity(s, &mut entity_names, &mut entity_index);
            let object = intern_entity(o, &mut entity_names, &mut entity_index);
            let relation = if let Some(&id) = relation_index.get(&r) {
                id
            } else {
                let id = relation_names.len() as RelationId;
                relation_index.insert(r.clone(), id);
                relation_names.push(r);
                id
            };
            quads.push((
                Quad {
                    subject,
                    relation,
                    object,
                    time: t,
                },
                order as u32,
            ));
        }

        quads.sort_by_key(|(q, order)| (q.time, *order));

        let n_entities = entity_names.len();
        let mut adjacency: Vec<Vec<AdjEvent>> = vec![Vec::new(); n_entities];
        let mut entity_facts: Vec<Vec<u32>> = vec![Vec::new(); n_entities];
        let mut fact_set = HashSet::with_capacity(quads.len());
        let mut triple_set = HashSet::with_capacity(quads.len());
        let mut first_seen = vec![Timestamp::MAX; n_entities];

        for (i, (q, order)) in quads.iter().enumerate() {
            adjacency[q.subject as usize].push(AdjEvent {
                counterpart: q.object,
                relation: q.relation,
                time: q.time,
                side: FactSide::Subject,
                input_order: *order,
            });
            adjacency[q.object as usize].push(AdjEvent {
                counterpart: q.subject,
                relation: q.relation,
                time: q.time,
                side: FactSide::Object,
                input_order: *order,
            });
            entity_facts[q.subject as usize].push(i as u32);
            if q.object != q.subject {
                entity_facts[q.object as usize].push(i as u32);
            }
            fact_set.insert(*q);
            triple_set.insert((q.subject, q.relation, q.object));
            first_seen[q.subject as usize] = first_seen[q.subject as usize].min(q.time);
            first_seen[q.object as usize] = first_seen[q.object as usize].min(q.time);
        }
        // Quads are already (time, input order) sorted, so per-entity lists
        // built in that scan order are sorted too.

        let (quads, input_order): (Vec<Quad>, Vec<u32>) = quads.into_iter().unzip();
        Ok(TemporalKG {
            entity_names,
            entity_index,
            relation_names,
            relation_index,
            quads,
            input_order,
            adjacency,
            entity_facts,
            fact_set,
            triple_set,
            first_seen,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn num_quadruples(&self) -> usize {
        self.quads.len()
    }

    pub fn quadruples(&self) -> &[Quad] {
        &self.quads
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id as usize]
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn adjacency_of(&self, entity: EntityId) -> &[AdjEvent] {
        &self.adjacency[entity as usize]
    }

    /// Indices into `quadruples()` of every fact mentioning `entity`, in
    /// chronological (then input) order. A self-loop appears once.
    pub fn facts_of(&self, entity: EntityId) -> &[u32] {
        &self.entity_facts[entity as usize]
    }

    /// Earliest event timestamp of `entity`.
    pub fn first_seen(&self, entity: EntityId) -> Timestamp {
        self.first_seen[entity as usize]
    }

    pub fn time_span(&self) -> Option<(Timestamp, Timestamp)> {
        if self.quads.is_empty() {
            None
        } else {
            Some((self.quads[0].time, self.quads[self.quads.len() - 1].time))
        }
    }

    /// Serialize as TSV in original input order; re-ingesting reproduces
    /// ids, counts, and adjacency exactly.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut by_input: Vec<usize> = (0..self.quads.len()).collect();
        by_input.sort_by_key(|&i| self.input_order[i]);
        for i in by_input {
            let q = &self.quads[i];
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                self.entity_names[q.subject as usize],
                self.relation_names[q.relation as usize],
                self.entity_names[q.object as usize],
                q.time
            )?;
        }
        Ok(())
    }
}

impl GraphAccess for TemporalKG {
    fn entity_count(&self) -> usize {
        self.num_entities()
    }

    fn relation_count(&self) -> usize {
        self.num_relations()
    }

    fn events_in_window(&self, entity: EntityId, t: Timestamp, dt: u64) -> &[AdjEvent] {
        let events = &self.adjacency[entity as usize];
        // Over integer timestamps `(t - dt, t]` with the at-t rule is the
        // same window as `(t - max(dt, 1), t]`.
        let dt = dt.max(1);
        let lo_excl = t.saturating_sub(dt);
        let unbounded_below = dt > t;
        let start = if unbounded_below {
            0
        } else {
            events.partition_point(|e| e.time <= lo_excl)
        };
        let end = events.partition_point(|e| e.time <= t);
        &events[start..end]
    }

    fn contains_fact(&self, quad: &Quad) -> bool {
        self.fact_set.contains(quad)
    }

    fn contains_triple(&self, subject: EntityId, relation: RelationId, object: EntityId) -> bool {
        self.triple_set.contains(&(subject, relation, object))
    }
}

/// Period an entity belongs to, determined by its first appearance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Background,
    MetaTrain,
    MetaValidation,
    MetaTest,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Background => "background",
            Role::MetaTrain => "meta-train",
            Role::MetaValidation => "meta-validation",
            Role::MetaTest => "meta-test",
        }
    }
}

/// Chronological split of the time axis into four periods.
#[derive(Clone, Debug)]
pub struct SplitAssignment {
    /// Cut points (t1, t2, t3): periods are [t_min, t1], (t1, t2],
    /// (t2, t3], (t3, t_max]. Degenerate ratios may collapse cuts.
    pub boundaries: (Timestamp, Timestamp, Timestamp),
    roles: Vec<Role>,
}

impl SplitAssignment {
    pub fn role(&self, entity: EntityId) -> Role {
        self.roles[entity as usize]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn entities_with_role(&self, role: Role) -> Vec<EntityId> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, &r)| r == role)
            .map(|(i, _)| i as EntityId)
            .collect()
    }

    pub fn counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for r in &self.roles {
            let i = match r {
                Role::Background => 0,
                Role::MetaTrain => 1,
                Role::MetaValidation => 2,
                Role::MetaTest => 3,
            };
            counts[i] += 1;
        }
        counts
    }

    /// Write the split manifest: one `entity name<TAB>role` line per entity.
    pub fn write_manifest<W: Write>(&self, kg: &TemporalKG, mut w: W) -> Result<()> {
        for (i, role) in self.roles.iter().enumerate() {
            writeln!(w, "{}\t{}", kg.entity_name(i as EntityId), role.as_str())?;
        }
        Ok(())
    }
}

/// Cut the observed time span at cumulative ratio points and assign each
/// entity the role of the period containing its earliest event. Boundary
/// events belong to the earlier period.
pub fn chronological_split(kg: &TemporalKG, ratios: [f64; 4]) -> Result<SplitAssignment> {
    let (t_min, t_max) = kg.time_span().ok_or(Error::EmptyGraph)?;
    if t_min == t_max {
        return Err(Error::DegenerateSpan(t_min));
    }
    if ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::InvalidArgument("split ratios must be non-negative".into()));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }

    let span = (t_max - t_min) as f64;
    let cut = |cum: f64| -> Timestamp { t_min + (cum * span + 1e-9).floor() as Timestamp };
    let t1 = cut(ratios[0]);
    let t2 = cut(ratios[0] + ratios[1]);
    let t3 = cut(ratios[0] + ratios[1] + ratios[2]);

    let roles = (0..kg.num_entities())
        .map(|e| {
            let first = kg.first_seen(e as EntityId);
            if first <= t1 {
                Role::Background
            } else if first <= t2 {
                Role::MetaTrain
            } else if first <= t3 {
                Role::MetaValidation
            } else {
                Role::MetaTest
            }
        })
        .collect();

    Ok(SplitAssignment {
        boundaries: (t1, t2, t3),
        roles,
    })
}

/// Entities whose earliest event lies in the half-open window `(t_lo, t_hi]`.
pub fn new_entities(kg: &TemporalKG, t_lo: Timestamp, t_hi: Timestamp) -> Result<BTreeSet<EntityId>> {
    if t_lo >= t_hi {
        return Err(Error::InvalidArgument(format!(
            "window must satisfy t_lo < t_hi, got ({t_lo}, {t_hi}]"
        )));
    }
    Ok((0..kg.num_entities() as EntityId)
        .filter(|&e| {
            let first = kg.first_seen(e);
            first > t_lo && first <= t_hi
        })
        .collect())
}

/// One new entity's few-shot episode: the first `K` facts as support and
/// the remaining facts partitioned into `M` equal-width time intervals.
#[derive(Clone, Debug)]
pub struct FewShotTask {
    pub entity: EntityId,
    pub support: Vec<Quad>,
    pub query_intervals: Vec<Vec<Quad>>,
    /// `M + 1` delimiting values over the query span; fractional because the
    /// span rarely divides evenly.
    pub interval_bounds: Vec<f64>,
}

impl FewShotTask {
    pub fn query_count(&self) -> usize {
        self.query_intervals.iter().map(|q| q.len()).sum()
    }
}

/// Build the few-shot task for `entity` from all of its facts.
pub fn build_task(kg: &TemporalKG, entity: EntityId, shots: usize, intervals: usize) -> Result<FewShotTask> {
    build_task_in_window(kg, entity, shots, intervals, None)
}

/// Same as [`build_task`] but considering only facts with timestamp at or
/// below `window_hi`. Used to keep simulated meta-training tasks inside
/// their own period.
pub fn build_task_in_window(
    kg: &TemporalKG,
    entity: EntityId,
    shots: usize,
    intervals: usize,
    window_hi: Option<Timestamp>,
) -> Result<FewShotTask> {
    if entity as usize >= kg.num_entities() {
        return Err(Error::UnknownEntity(entity));
    }
    if intervals == 0 {
        return Err(Error::InvalidArgument("interval count must be >= 1".into()));
    }
    let facts: Vec<Quad> = kg
        .facts_of(entity)
        .iter()
        .map(|&i| kg.quadruples()[i as usize])
        .filter(|q| window_hi.map(|hi| q.time <= hi).unwrap_or(true))
        .collect();
    if facts.len() <= shots {
        return Err(Error::TaskConstruction {
            entity,
            available: facts.len(),
            shots,
        });
    }

    let support = facts[..shots].to_vec();
    let queries = &facts[shots..];
    let lo = queries[0].time;
    let hi = queries[queries.len() - 1].time;
    let span = hi - lo;

    let mut query_intervals: Vec<Vec<Quad>> = vec![Vec::new(); intervals];
    for q in queries {
        let idx = if span == 0 {
            0
        } else {
            // Exact integer arithmetic: interval j covers times with
            // (t - lo) * M / span == j, with t == hi clamped into the last.
            let scaled = (q.time - lo) as u128 * intervals as u128 / span as u128;
            (scaled as usize).min(intervals - 1)
        };
        query_intervals[idx].push(*q);
    }

    let interval_bounds = (0..=intervals)
        .map(|j| lo as f64 + span as f64 * j as f64 / intervals as f64)
        .collect();

    Ok(FewShotTask {
        entity,
        support,
        query_intervals,
        interval_bounds,
    })
}
