//! Discrete-event scheduler.
//!
//! Events are ordered by `(fire_time, seq)` where `seq` is a monotone
//! insertion counter, so two events scheduled for the same instant fire in
//! the order they were scheduled. Cancellation is lazy: the payload is
//! removed from the pending map and the stale heap key is skipped on pop.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::NodeId;

/// Simulated time in integer microseconds since simulation start.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    /// Elapsed time since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> Duration {
        Duration::from_micros(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0 + duration_micros(rhs))
    }
}

impl Sub for SimTime {
    type Output = Duration;

    fn sub(self, rhs: SimTime) -> Duration {
        self.since(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Converts a duration to whole microseconds. Sub-microsecond parts are
/// truncated; the simulator never schedules below 1 µs resolution.
pub fn duration_micros(d: Duration) -> u64 {
    u64::try_from(d.as_micros()).unwrap_or(u64::MAX)
}

/// Fractional milliseconds (config units) to a duration, rounded to 1 µs.
pub fn millis(ms: f64) -> Duration {
    Duration::from_micros((ms.max(0.0) * 1_000.0).round() as u64)
}

/// Handle returned by [`Engine::schedule`]; doubles as the event's `seq`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId(u64);

impl EventId {
    pub fn seq(self) -> u64 {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct SimEvent<P> {
    pub fire_time: SimTime,
    pub id: EventId,
    pub target: NodeId,
    pub payload: P,
}

/// Short static name of an event payload, used in fault diagnostics.
pub trait EventKind {
    fn kind(&self) -> &'static str;
}

impl EventKind for &'static str {
    fn kind(&self) -> &'static str {
        self
    }
}

impl EventKind for () {
    fn kind(&self) -> &'static str {
        "unit"
    }
}

/// A handler failure; aborts the run with the offending event named.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("simulation fault at {time} in event #{seq} ({event}) on {target}: {reason}")]
pub struct SimFault {
    pub time: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub event: &'static str,
    pub reason: String,
}

/// Error type a handler returns; the engine wraps it into a [`SimFault`].
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{0}")]
pub struct HandlerError(pub String);

pub struct Engine<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    pending: HashMap<u64, SimEvent<P>>,
    fired: u64,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            pending: HashMap::new(),
            fired: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Total events fired over the engine's lifetime.
    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn schedule(&mut self, payload: P, target: NodeId, delay: Duration) -> EventId {
        self.schedule_at(self.now + delay, target, payload)
    }

    /// Schedules at an absolute time. Times in the past are clamped to `now`.
    pub fn schedule_at(&mut self, at: SimTime, target: NodeId, payload: P) -> EventId {
        let fire_time = at.max(self.now);
        let seq = self.next_seq;
        self.next_seq += 1;
        let id = EventId(seq);
        self.heap.push(Reverse((fire_time, seq)));
        self.pending.insert(
            seq,
            SimEvent {
                fire_time,
                id,
                target,
                payload,
            },
        );
        id
    }

    /// Returns `true` iff the event was still pending. A cancelled event never fires.
    pub fn cancel(&mut self, id: EventId) -> bool {
        self.pending.remove(&id.0).is_some()
    }

    pub fn is_pending(&self, id: EventId) -> bool {
        self.pending.contains_key(&id.0)
    }

    /// Pops the next live event with `fire_time <= t_end` and advances `now` to it.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<SimEvent<P>> {
        while let Some(Reverse((time, seq))) = self.heap.peek().copied() {
            if time > t_end {
                return None;
            }
            self.heap.pop();
            if let Some(ev) = self.pending.remove(&seq) {
                self.now = time;
                self.fired += 1;
                return Some(ev);
            }
        }
        None
    }

    /// Fires every event with `fire_time <= t_end` in `(fire_time, seq)` order,
    /// including events the handler schedules inside the window, then sets
    /// `now` to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<u64, SimFault>
    where
        F: FnMut(&mut Engine<P>, SimEvent<P>) -> Result<(), HandlerError>,
        P: EventKind,
    {
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            count += 1;
            let (time, seq, target) = (ev.fire_time, ev.id.0, ev.target);
            let label = ev.payload.kind();
            handler(self, ev).map_err(|e| SimFault {
                time,
                seq,
                target,
                event: label,
                reason: e.0,
            })?;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        Ok(count)
    }
}

/// Independent random sub-streams for each stochastic process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    ControlLoss,
    DataLoss,
    Shadowing,
}

impl Stream {
    fn salt(self) -> u64 {
        match self {
            Stream::ControlLoss => 0x636f_6e74_726f_6c00,
            Stream::DataLoss => 0x6461_7461_6c6f_7373,
            Stream::Shadowing => 0x7368_6164_6f77_0000,
        }
    }
}

/// Seeded random streams. Draws on one stream never perturb another.
///
/// Shadowing is counter-based: a sample is a pure function of
/// `(seed, link key, time slot)` so two schemes that measure at different
/// instants or different rates still see identical fading for the same slot.
#[derive(Clone, Debug)]
pub struct RandomStreams {
    seed: u64,
    control: ChaCha8Rng,
    data: ChaCha8Rng,
}

impl RandomStreams {
    pub fn new(seed: u64) -> Self {
        RandomStreams {
            seed,
            control: Self::rng_for(seed, Stream::ControlLoss),
            data: Self::rng_for(seed, Stream::DataLoss),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed ^ stream.salt())
    }

    fn stream_mut(&mut self, stream: Stream) -> &mut ChaCha8Rng {
        match stream {
            Stream::ControlLoss => &mut self.control,
            Stream::DataLoss => &mut self.data,
            Stream::Shadowing => panic!("shadowing is counter-based; use shadowing_db"),
        }
    }

    /// Uniform draw in [0, 1) from the given sequential stream.
    pub fn uniform(&mut self, stream: Stream) -> f64 {
        // 53 random bits mapped into [0, 1)
        (self.stream_mut(stream).next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Bernoulli trial; `p <= 0` and `p >= 1` are decided without consuming a draw.
    pub fn lost(&mut self, stream: Stream, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.uniform(stream) < p
        }
    }

    /// Zero-mean normal shadowing sample for a link key and time slot.
    pub fn shadowing_db(&self, link_key: u64, slot: u64, sigma_db: f64) -> f64 {
        if sigma_db <= 0.0 {
            return 0.0;
        }
        let mut rng = Self::rng_for(self.seed, Stream::Shadowing);
        rng.set_stream(link_key);
        // each slot owns a disjoint 64-word window of the keystream
        rng.set_word_pos(u128::from(slot) * 64);
        let normal = Normal::new(0.0, sigma_db).expect("sigma is finite and positive");
        normal.sample(&mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn drain(engine: &mut Engine<&'static str>, until: SimTime) -> Vec<(u64, &'static str)> {
        let mut out = Vec::new();
        engine
            .run_until(until, |_, ev| {
                out.push((ev.fire_time.as_micros(), ev.payload));
                Ok(())
            })
            .unwrap();
        out
    }

    #[test]
    fn zero_delay_fires_after_already_queued_events_at_same_time() {
        let mut e = Engine::new();
        e.schedule("first", n(0), Duration::ZERO);
        e.schedule("second", n(1), Duration::ZERO);
        assert_eq!(
            drain(&mut e, SimTime::ZERO),
            vec![(0, "first"), (0, "second")]
        );
    }

    #[test]
    fn same_time_ties_break_by_insertion() {
        let mut e = Engine::new();
        e.schedule("e1", n(0), Duration::from_micros(100));
        e.schedule("e2", n(0), Duration::from_micros(100));
        assert_eq!(
            drain(&mut e, SimTime::from_millis(1)),
            vec![(100, "e1"), (100, "e2")]
        );
    }

    #[test]
    fn single_timer_fires_exactly_at_delay() {
        let mut e = Engine::new();
        e.schedule("timer", n(2), Duration::from_micros(25_000));
        assert_eq!(
            drain(&mut e, SimTime::from_millis(100)),
            vec![(25_000, "timer")]
        );
        assert_eq!(e.now(), SimTime::from_millis(100));
    }

    #[test]
    fn cancel_semantics() {
        let mut e = Engine::new();
        let a = e.schedule("a", n(0), Duration::from_millis(1));
        assert!(e.cancel(a));
        assert!(drain(&mut e, SimTime::from_millis(5)).is_empty());

        let b = e.schedule("b", n(0), Duration::from_millis(1));
        drain(&mut e, SimTime::from_millis(10));
        assert!(!e.cancel(b), "fired events cannot be cancelled");
        assert!(!e.cancel(EventId(9_999)));
    }

    #[test]
    fn cancelling_middle_of_three() {
        let mut e = Engine::new();
        e.schedule("t1", n(0), Duration::from_millis(1));
        let mid = e.schedule("t2", n(0), Duration::from_millis(2));
        e.schedule("t3", n(0), Duration::from_millis(3));
        assert!(e.cancel(mid));
        let fired = drain(&mut e, SimTime::from_millis(10));
        assert_eq!(fired, vec![(1_000, "t1"), (3_000, "t3")]);
    }

    #[test]
    fn run_until_on_empty_queue_advances_clock() {
        let mut e: Engine<&str> = Engine::new();
        let n = e
            .run_until(SimTime::from_millis(1_000), |_, _| Ok(()))
            .unwrap();
        assert_eq!(n, 0);
        assert_eq!(e.now(), SimTime::from_millis(1_000));
    }

    #[test]
    fn run_until_counts_only_events_in_window() {
        let mut e = Engine::new();
        for ms in [1, 2, 3, 4, 5, 20, 30] {
            e.schedule("x", n(0), Duration::from_millis(ms));
        }
        let fired = e
            .run_until(SimTime::from_millis(10), |_, _| Ok(()))
            .unwrap();
        assert_eq!(fired, 5);
        assert_eq!(e.pending_len(), 2);
    }

    #[test]
    fn handler_scheduling_inside_window_also_fires() {
        let mut e = Engine::new();
        e.schedule("start", n(0), Duration::from_millis(1));
        let mut seen = Vec::new();
        let fired = e
            .run_until(SimTime::from_millis(10), |eng, ev| {
                seen.push((ev.fire_time.as_micros(), ev.payload));
                if ev.payload == "start" {
                    eng.schedule("cascade", n(0), Duration::from_millis(2));
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(fired, 2);
        assert_eq!(seen, vec![(1_000, "start"), (3_000, "cascade")]);
    }

    #[test]
    fn handler_error_names_event() {
        let mut e = Engine::new();
        e.schedule("boom", n(7), Duration::from_millis(4));
        let err = e
            .run_until(SimTime::from_millis(10), |_, _| {
                Err(HandlerError("bad state".into()))
            })
            .unwrap_err();
        assert_eq!(err.time, SimTime::from_millis(4));
        assert!(err.to_string().contains("boom"));
        assert!(err.to_string().contains("bad state"));
    }

    #[test]
    fn streams_are_independent_of_interleaving() {
        let mut a = RandomStreams::new(42);
        let mut b = RandomStreams::new(42);
        let ctrl_a: Vec<f64> = (0..16).map(|_| a.uniform(Stream::ControlLoss)).collect();
        let mut ctrl_b = Vec::new();
        for _ in 0..16 {
            b.uniform(Stream::DataLoss);
            ctrl_b.push(b.uniform(Stream::ControlLoss));
        }
        assert_eq!(ctrl_a, ctrl_b);
    }

    #[test]
    fn shadowing_is_a_function_of_key_and_slot() {
        let s = RandomStreams::new(7);
        let x = s.shadowing_db(3, 1_000, 4.0);
        assert_eq!(x, s.shadowing_db(3, 1_000, 4.0));
        assert_ne!(x, s.shadowing_db(4, 1_000, 4.0));
        assert_ne!(x, s.shadowing_db(3, 1_001, 4.0));
        assert_eq!(s.shadowing_db(3, 1_000, 0.0), 0.0);
    }

    #[test]
    fn boundary_probabilities_consume_no_draws() {
        let mut a = RandomStreams::new(1);
        let mut b = RandomStreams::new(1);
        assert!(!a.lost(Stream::ControlLoss, 0.0));
        assert!(a.lost(Stream::ControlLoss, 1.0));
        assert_eq!(
            a.uniform(Stream::ControlLoss),
            b.uniform(Stream::ControlLoss)
        );
    }
}
