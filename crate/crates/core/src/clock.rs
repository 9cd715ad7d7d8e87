//! Virtual time. Events are ordered by `(time, sequence)` so that replays are
//! bit-for-bit deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Simulated milliseconds.
pub type SimTime = u64;

struct Pending<E> {
    time: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<E> Eq for Pending<E> {}

impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Pending<E> {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

pub struct SimClock<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Pending<E>>,
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> SimClock<E> {
    pub fn new() -> Self {
        SimClock { now: 0, next_seq: 0, queue: BinaryHeap::new() }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Schedules `event` at `time`. Times in the past are clamped to `now`.
    pub fn schedule(&mut self, time: SimTime, event: E) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Pending { time: time.max(self.now), seq, event });
        seq
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|p| p.time)
    }

    /// Pops the lowest `(time, seq)` event and moves the clock to its time.
    /// `None` means the simulation has run out of work.
    pub fn advance_to_next_event(&mut self) -> Option<(SimTime, E)> {
        let p = self.queue.pop()?;
        debug_assert!(p.time >= self.now);
        self.now = p.time;
        Some((p.time, p.event))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_insertion_order() {
        let mut c = SimClock::new();
        c.schedule(5, "second");
        c.schedule(5, "third");
        c.schedule(3, "first");
        assert_eq!(c.advance_to_next_event(), Some((3, "first")));
        assert_eq!(c.advance_to_next_event(), Some((5, "second")));
        assert_eq!(c.advance_to_next_event(), Some((5, "third")));
        assert_eq!(c.now(), 5);
        assert_eq!(c.advance_to_next_event(), None);
    }

    #[test]
    fn single_event_at_zero() {
        let mut c = SimClock::new();
        c.schedule(0, ());
        assert_eq!(c.advance_to_next_event(), Some((0, ())));
        assert_eq!(c.now(), 0);
    }

    #[test]
    fn earlier_time_first() {
        let mut c = SimClock::new();
        c.schedule(7, 'b');
        c.schedule(3, 'a');
        assert_eq!(c.advance_to_next_event().unwrap().1, 'a');
        assert_eq!(c.advance_to_next_event().unwrap().1, 'b');
    }

    #[test]
    fn past_times_clamp_to_now() {
        let mut c = SimClock::new();
        c.schedule(10, 1);
        c.advance_to_next_event();
        c.schedule(2, 2);
        assert_eq!(c.advance_to_next_event(), Some((10, 2)));
    }
}
