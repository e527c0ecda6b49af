use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::EngineError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventKind {
    LoopTick,
    ReallocationTick,
    Arrival(String),
    Departure(String),
    MigrationDone(u64),
}

impl EventKind {
    pub(crate) fn code(&self) -> u8 {
        match self {
            EventKind::LoopTick => 0,
            EventKind::ReallocationTick => 1,
            EventKind::Arrival(_) => 2,
            EventKind::Departure(_) => 3,
            EventKind::MigrationDone(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time_ms: u64,
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Debug, PartialEq, Eq)]
struct Keyed(Event);

impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.time_ms, self.0.seq).cmp(&(other.0.time_ms, other.0.seq))
    }
}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Message pump ordered by `(time_ms, seq)`; `seq` is assigned at push, so
/// events at the same instant pop in push order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Keyed>>,
    next_seq: u64,
    clock_ms: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Time of the most recently popped event.
    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn push(&mut self, time_ms: u64, kind: EventKind) -> Result<u64, EngineError> {
        if time_ms < self.clock_ms {
            return Err(EngineError::EventInPast {
                time_ms,
                clock_ms: self.clock_ms,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Keyed(Event { time_ms, seq, kind })));
        Ok(seq)
    }

    pub fn pop(&mut self) -> Option<Event> {
        let Reverse(Keyed(ev)) = self.heap.pop()?;
        self.clock_ms = ev.time_ms;
        Some(ev)
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(Keyed(e))| e.time_ms)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
