//! Time-stamped event queue driving a simulation.
//!
//! Events pop ordered by `(timestamp, kind, insertion order)`, with unplugs
//! before plugins before recomputes at equal timestamps so a freed EVSE can
//! host a same-period arrival.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::SessionEv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Plugin { session: Box<SessionEv> },
    Unplug { session_id: String },
    /// Forces a scheduling pass with no hardware change; used for periodic
    /// re-solves.
    Recompute,
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Unplug { .. } => 0,
            EventKind::Plugin { .. } => 1,
            EventKind::Recompute => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn plugin(timestamp: u32, session: SessionEv) -> Self {
        Event {
            timestamp,
            kind: EventKind::Plugin {
                session: Box::new(session),
            },
        }
    }

    pub fn unplug(timestamp: u32, session_id: impl Into<String>) -> Self {
        Event {
            timestamp,
            kind: EventKind::Unplug {
                session_id: session_id.into(),
            },
        }
    }

    pub fn recompute(timestamp: u32) -> Self {
        Event {
            timestamp,
            kind: EventKind::Recompute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct QueueKey {
    timestamp: u32,
    rank: u8,
    seq: u64,
}

#[derive(Debug, Clone)]
struct Entry {
    key: QueueKey,
    event: Event,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // reversed so the BinaryHeap pops the smallest key first
    fn cmp(&self, other: &Self) -> Ordering {
        let mine = (self.key.timestamp, self.key.rank, self.key.seq);
        let theirs = (other.key.timestamp, other.key.rank, other.key.seq);
        theirs.cmp(&mine)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Entry>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue::default()
    }

    pub fn from_events(events: impl IntoIterator<Item = Event>) -> Self {
        let mut queue = EventQueue::new();
        for event in events {
            queue.enqueue(event);
        }
        queue
    }

    pub fn enqueue(&mut self, event: Event) {
        let key = QueueKey {
            timestamp: event.timestamp,
            rank: event.kind.rank(),
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.heap.push(Entry { key, event });
    }

    /// Removes and returns every event with `timestamp <= now`, in order.
    pub fn pop_due(&mut self, now: u32) -> Vec<Event> {
        let mut due = Vec::new();
        while let Some(entry) = self.heap.peek() {
            if entry.key.timestamp > now {
                break;
            }
            due.push(self.heap.pop().unwrap().event);
        }
        due
    }

    pub fn peek_timestamp(&self) -> Option<u32> {
        self.heap.peek().map(|e| e.key.timestamp)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// True when anything other than a recompute is still pending. Periodic
    /// recomputes re-arm only while this holds, so the queue drains.
    pub fn has_pending_work(&self) -> bool {
        self.heap
            .iter()
            .any(|e| !matches!(e.event.kind, EventKind::Recompute))
    }

    /// Snapshot of all pending events in pop order, without consuming them.
    pub fn sorted_events(&self) -> Vec<Event> {
        let mut entries: Vec<&Entry> = self.heap.iter().collect();
        entries.sort_by(|a, b| {
            (a.key.timestamp, a.key.rank, a.key.seq).cmp(&(b.key.timestamp, b.key.rank, b.key.seq))
        });
        entries.iter().map(|e| e.event.clone()).collect()
    }

    /// Serializes pending events as JSON lines, one event per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for event in self.sorted_events() {
            out.push_str(&serde_json::to_string(&event)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut queue = EventQueue::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(line).map_err(|e| {
                Error::Scenario(format!("bad event on line {}: {e}", lineno + 1))
            })?;
            queue.enqueue(event);
        }
        Ok(queue)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::Battery;
    use proptest::prelude::*;

    fn session(id: &str) -> SessionEv {
        SessionEv {
            session_id: id.into(),
            station_id: Some("a".into()),
            arrival: 0,
            departure_actual: 10,
            departure_estimated: 10,
            requested_amp_periods: 32.0,
            delivered_amp_periods: 0.0,
            battery: Battery::ideal(32.0, 0.0, 32.0),
        }
    }

    #[test]
    fn unplug_pops_before_plugin_at_same_timestamp() {
        let mut q = EventQueue::new();
        q.enqueue(Event::plugin(5, session("p")));
        q.enqueue(Event::unplug(5, "u"));
        let due = q.pop_due(5);
        assert!(matches!(due[0].kind, EventKind::Unplug { .. }));
        assert!(matches!(due[1].kind, EventKind::Plugin { .. }));
    }

    #[test]
    fn timestamp_order() {
        let mut q = EventQueue::new();
        q.enqueue(Event::plugin(3, session("x")));
        q.enqueue(Event::plugin(1, session("y")));
        let due = q.pop_due(10);
        assert_eq!(due[0].timestamp, 1);
        assert_eq!(due[1].timestamp, 3);
    }

    #[test]
    fn stable_for_equal_keys() {
        let mut q = EventQueue::new();
        q.enqueue(Event::plugin(2, session("first")));
        q.enqueue(Event::plugin(2, session("second")));
        let due = q.pop_due(2);
        let ids: Vec<&str> = due
            .iter()
            .map(|e| match &e.kind {
                EventKind::Plugin { session } => session.session_id.as_str(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(ids, vec!["first", "second"]);
    }

    #[test]
    fn pop_due_leaves_future_events() {
        let mut q = EventQueue::new();
        for t in [1, 2, 5] {
            q.enqueue(Event::recompute(t));
        }
        let due = q.pop_due(2);
        assert_eq!(due.len(), 2);
        assert_eq!(q.len(), 1);
        assert_eq!(q.peek_timestamp(), Some(5));
        assert!(q.pop_due(0).is_empty());
    }

    #[test]
    fn empty_queue_pops_nothing() {
        let mut q = EventQueue::new();
        assert!(q.pop_due(1000).is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut q = EventQueue::new();
        q.enqueue(Event::plugin(3, session("s1")));
        q.enqueue(Event::unplug(9, "s1"));
        q.enqueue(Event::recompute(0));
        let text = q.to_jsonl().unwrap();
        let restored = EventQueue::from_jsonl(&text).unwrap();
        assert_eq!(restored.sorted_events(), q.sorted_events());
    }

    proptest! {
        #[test]
        fn popped_multiset_matches_enqueued(times in proptest::collection::vec(0u32..50, 0..40)) {
            let mut q = EventQueue::new();
            for (i, t) in times.iter().enumerate() {
                match i % 3 {
                    0 => q.enqueue(Event::recompute(*t)),
                    1 => q.enqueue(Event::unplug(*t, format!("s{i}"))),
                    _ => q.enqueue(Event::plugin(*t, session(&format!("s{i}")))),
                }
            }
            let mut popped = Vec::new();
            let mut now = 0;
            while !q.is_empty() {
                popped.extend(q.pop_due(now));
                now += 1;
            }
            prop_assert_eq!(popped.len(), times.len());
            // order respects the (timestamp, rank) key
            for pair in popped.windows(2) {
                let a = (pair[0].timestamp, match &pair[0].kind {
                    EventKind::Unplug { .. } => 0,
                    EventKind::Plugin { .. } => 1,
                    EventKind::Recompute => 2,
                });
                let b = (pair[1].timestamp, match &pair[1].kind {
                    EventKind::Unplug { .. } => 0,
                    EventKind::Plugin { .. } => 1,
                    EventKind::Recompute => 2,
                });
                prop_assert!(a <= b);
            }
        }
    }
}
