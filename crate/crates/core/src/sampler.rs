//! Budgeted, time-bounded breadth-first sampling of multi-hop temporal
//! neighbors.
//!
//! The search dequeues an entity, scans its events inside the recency
//! window `(t - dt, t]` most-recent-first, appends each counterpart's
//! event tuple, and enqueues every counterpart at most once. It stops as
//! soon as the budget is reached or the queue empties, so truncation keeps
//! the freshest facts of the earliest hops.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::kgstore::{EntityId, GraphAccess, Quad, RelationId, Timestamp};

/// One sampled temporal neighbor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeighborEvent {
    pub entity: EntityId,
    pub relation: RelationId,
    pub time: Timestamp,
    pub hop: u32,
}

/// The sampled neighborhood of `target` at `query_time`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSet {
    pub target: EntityId,
    pub query_time: Timestamp,
    pub events: Vec<NeighborEvent>,
}

impl NeighborSet {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }
}

/// Sample up to `budget` multi-hop temporal neighbors of `entity` at time
/// `t`, considering only events within the recency bound `dt`.
pub fn sample_temporal_neighbors(
    graph: &dyn GraphAccess,
    entity: EntityId,
    t: Timestamp,
    budget: usize,
    dt: u64,
) -> Result<NeighborSet> {
    sample_with_mask(graph, entity, t, budget, dt, None)
}

/// Sampler variant that hides one quadruple from the graph. Loss
/// construction and ranking mask the fact being scored so the encoder
/// never conditions on its own prediction target.
pub fn sample_with_mask(
    graph: &dyn GraphAccess,
    entity: EntityId,
    t: Timestamp,
    budget: usize,
    dt: u64,
    mask: Option<&Quad>,
) -> Result<NeighborSet> {
    if entity as usize >= graph.entity_count() {
        return Err(Error::UnknownEntity(entity));
    }
    let mut events = Vec::new();
    if budget == 0 {
        return Ok(NeighborSet {
            target: entity,
            query_time: t,
            events,
        });
    }

    let mut visited = vec![false; graph.entity_count()];
    visited[entity as usize] = true;
    let mut queue: VecDeque<(EntityId, u32)> = VecDeque::new();
    queue.push_back((entity, 0));

    'bfs: while let Some((current, hop)) = queue.pop_front() {
        for ev in graph.events_in_window(current, t, dt).iter().rev() {
            if let Some(masked) = mask {
                if ev.as_quad(current) == *masked {
                    continue;
                }
            }
            // The target's own tuple never enters its neighborhood.
            if ev.counterpart == entity {
                continue;
            }
            events.push(NeighborEvent {
                entity: ev.counterpart,
                relation: ev.relation,
                time: ev.time,
                hop: hop + 1,
            });
            if !visited[ev.counterpart as usize] {
                visited[ev.counterpart as usize] = true;
                queue.push_back((ev.counterpart, hop + 1));
            }
            if events.len() == budget {
                break 'bfs;
            }
        }
    }

    Ok(NeighborSet {
        target: entity,
        query_time: t,
        events,
    })
}
