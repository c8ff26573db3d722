//! Access-logging graph wrapper for leakage and causality audits.

use std::sync::Mutex;

use crate::kgstore::{AdjEvent, EntityId, GraphAccess, Quad, RelationId, Timestamp};

/// One recorded window query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowQuery {
    pub entity: EntityId,
    pub upto: Timestamp,
    pub time_bound: u64,
}

/// Wraps a graph and records every window the model asks for. Used by tests
/// to assert that encoding at time `t` never requests anything newer than
/// `t`, and that training stages never look past their period boundary.
pub struct RecordingGraph<'a> {
    inner: &'a dyn GraphAccess,
    queries: Mutex<Vec<WindowQuery>>,
}

impl<'a> RecordingGraph<'a> {
    pub fn new(inner: &'a dyn GraphAccess) -> RecordingGraph<'a> {
        RecordingGraph {
            inner,
            queries: Mutex::new(Vec::new()),
        }
    }

    pub fn queries(&self) -> Vec<WindowQuery> {
        self.queries.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.queries.lock().unwrap().clear();
    }

    /// Largest `upto` timestamp requested so far, if any.
    pub fn max_requested_time(&self) -> Option<Timestamp> {
        self.queries.lock().unwrap().iter().map(|q| q.upto).max()
    }
}

impl GraphAccess for RecordingGraph<'_> {
    fn entity_count(&self) -> usize {
        self.inner.entity_count()
    }

    fn relation_count(&self) -> usize {
        self.inner.relation_count()
    }

    fn events_in_window(&self, entity: EntityId, t: Timestamp, dt: u64) -> &[AdjEvent] {
        self.queries.lock().unwrap().push(WindowQuery {
            entity,
            upto: t,
            time_bound: dt,
        });
        self.inner.events_in_window(entity, t, dt)
    }

    fn contains_fact(&self, quad: &Quad) -> bool {
        self.inner.contains_fact(quad)
    }

    fn contains_triple(&self, subject: EntityId, relation: RelationId, object: EntityId) -> bool {
        self.inner.contains_triple(subject, relation, object)
    }
}
