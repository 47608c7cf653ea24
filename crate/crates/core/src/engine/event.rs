use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::types::Seconds;

/// What happens at an event; payloads index into engine tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// A client issues its next request.
    Arrival { client: usize },
    /// A message reaches the far end of its current hop.
    Delivery { message: usize },
    /// Projected completion on a computer; stale if the generation moved on.
    Completion { computer: usize, generation: u64 },
    /// A delayed message starts its first hop.
    Send { message: usize },
    /// Dispatcher processing overhead elapsed for a transaction.
    DispatchReady { txn: usize },
    LoadSample,
    /// A roaming client moves to another attachment point.
    Roam { client: usize },
    WarmupEnd,
    Teardown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: Seconds,
    pub sequence: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we pop the earliest.
        other
            .time
            .total_cmp(&self.time)
            .then(other.sequence.cmp(&self.sequence))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-ordered event queue; equal times pop in scheduling order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_sequence: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: Seconds, kind: EventKind) {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Event { time, sequence, kind });
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_by_time_then_sequence() {
        let mut q = EventQueue::new();
        q.push(2.0, EventKind::LoadSample);
        q.push(1.0, EventKind::Teardown);
        q.push(1.0, EventKind::WarmupEnd);
        q.push(0.5, EventKind::Arrival { client: 3 });
        let kinds: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::Arrival { client: 3 },
                EventKind::Teardown,
                EventKind::WarmupEnd,
                EventKind::LoadSample
            ]
        );
    }
}
