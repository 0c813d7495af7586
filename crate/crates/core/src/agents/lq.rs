//! Scan history and the better-AP decision.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::net::{Bssid, LinkQuality};

/// Thresholds for the handoff trigger.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqParams {
    pub threshold_dbm: f64,
    pub margin_db: f64,
    pub alpha: f64,
    pub depth: usize,
}

impl Default for LqParams {
    fn default() -> Self {
        LqParams {
            threshold_dbm: -75.0,
            margin_db: 5.0,
            alpha: 0.5,
            depth: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanSample {
    pub bssid: Bssid,
    pub at: SimTime,
    pub lq: LinkQuality,
}

/// Most recent samples per BSSID, bounded to `depth`.
#[derive(Clone, Debug, Default)]
pub struct ScanHistory {
    depth: usize,
    alpha: f64,
    samples: BTreeMap<Bssid, VecDeque<(SimTime, f64)>>,
}

impl ScanHistory {
    pub fn new(params: &LqParams) -> Self {
        ScanHistory {
            depth: params.depth.max(1),
            alpha: params.alpha,
            samples: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, sample: &ScanSample) {
        let ring = self.samples.entry(sample.bssid).or_default();
        if ring.len() == self.depth {
            ring.pop_front();
        }
        ring.push_back((sample.at, sample.lq.rssi_dbm));
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self, bssid: Bssid) -> usize {
        self.samples.get(&bssid).map_or(0, VecDeque::len)
    }

    pub fn last_seen(&self, bssid: Bssid) -> Option<SimTime> {
        self.samples.get(&bssid)?.back().map(|s| s.0)
    }

    /// EWMA over the ring, oldest first, seeded with the oldest sample.
    pub fn smoothed(&self, bssid: Bssid) -> Option<f64> {
        let ring = self.samples.get(&bssid)?;
        let mut it = ring.iter().map(|s| s.1);
        let first = it.next()?;
        Some(it.fold(first, |acc, x| self.alpha * x + (1.0 - self.alpha) * acc))
    }

    /// Smoothed LQ of every BSSID heard within `max_age` of `now`.
    pub fn fresh_candidates(&self, now: SimTime, max_age: Duration) -> Vec<(Bssid, f64)> {
        self.samples
            .iter()
            .filter(|(_, ring)| ring.back().is_some_and(|(t, _)| now.since(*t) <= max_age))
            .filter_map(|(b, _)| self.smoothed(*b).map(|lq| (*b, lq)))
            .collect()
    }
}

/// Returns the best candidate iff the current link is below the threshold
/// and the candidate beats it by at least the margin. Ties keep the first
/// candidate in the given order.
pub fn find_better_ap(
    current_lq: f64,
    candidates: &[(Bssid, f64)],
    params: &LqParams,
) -> Option<Bssid> {
    if current_lq >= params.threshold_dbm {
        return None;
    }
    let (best, best_lq) =
        candidates
            .iter()
            .copied()
            .fold(None::<(Bssid, f64)>, |acc, c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            })?;
    (best_lq >= current_lq + params.margin_db).then_some(best)
}

/// History-driven variant: excludes the current AP and any BSSID the caller
/// rules out, and ignores candidates not heard within `max_age`.
pub fn find_better_ap_in_history(
    history: &ScanHistory,
    current: Bssid,
    params: &LqParams,
    now: SimTime,
    max_age: Duration,
    excluded: impl Fn(Bssid) -> bool,
) -> Option<Bssid> {
    let current_lq = history.smoothed(current)?;
    let candidates: Vec<_> = history
        .fresh_candidates(now, max_age)
        .into_iter()
        .filter(|(b, _)| *b != current && !excluded(*b))
        .collect();
    find_better_ap(current_lq, &candidates, params)
}
