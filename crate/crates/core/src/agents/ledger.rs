//! Bandwidth admission at an edge AP.
//!
//! The effective bandwidth is the monitored path capacity minus every live
//! commitment. A commitment starts `Pending` with an expiry timer; it either
//! becomes `InUse` when the handoff completes through this AP or is freed
//! when the timer fires. In-use reservations are released when the mobile
//! node dissociates.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::engine::{EventId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CommitState {
    Pending { expiry: SimTime, timer: EventId },
    InUse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Commitment {
    pub amount_kbps: u64,
    /// Effective bandwidth reported in the offer that created this commitment.
    pub offered_kbps: u64,
    pub state: CommitState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BandwidthLedger {
    monitored_kbps: u64,
    commitments: BTreeMap<Ipv4Addr, Commitment>,
}

impl BandwidthLedger {
    pub fn new(monitored_kbps: u64) -> Self {
        BandwidthLedger {
            monitored_kbps,
            commitments: BTreeMap::new(),
        }
    }

    pub fn monitored(&self) -> u64 {
        self.monitored_kbps
    }

    pub fn committed(&self) -> u64 {
        self.commitments.values().map(|c| c.amount_kbps).sum()
    }

    pub fn effective(&self) -> u64 {
        self.monitored_kbps.saturating_sub(self.committed())
    }

    /// Strict admission test: effective bandwidth must exceed the request.
    pub fn admits(&self, requested_kbps: u64) -> bool {
        self.effective() > requested_kbps
    }

    pub fn get(&self, vip: Ipv4Addr) -> Option<&Commitment> {
        self.commitments.get(&vip)
    }

    pub fn commitments(&self) -> impl Iterator<Item = (&Ipv4Addr, &Commitment)> {
        self.commitments.iter()
    }

    pub fn pending_count(&self) -> usize {
        self.commitments
            .values()
            .filter(|c| matches!(c.state, CommitState::Pending { .. }))
            .count()
    }

    /// Records a pending commitment; returns the effective bandwidth before it.
    /// Callers check [`admits`](Self::admits) first.
    pub fn commit(
        &mut self,
        vip: Ipv4Addr,
        amount_kbps: u64,
        expiry: SimTime,
        timer: EventId,
    ) -> u64 {
        let offered = self.effective();
        debug_assert!(offered > amount_kbps, "commit without admission");
        self.commitments.insert(
            vip,
            Commitment {
                amount_kbps,
                offered_kbps: offered,
                state: CommitState::Pending { expiry, timer },
            },
        );
        offered
    }

    /// Re-arms a pending commitment; returns the timer it replaces.
    pub fn refresh(&mut self, vip: Ipv4Addr, expiry: SimTime, timer: EventId) -> Option<EventId> {
        match self.commitments.get_mut(&vip) {
            Some(c) => match c.state {
                CommitState::Pending { timer: old, .. } => {
                    c.state = CommitState::Pending { expiry, timer };
                    Some(old)
                }
                CommitState::InUse => None,
            },
            None => None,
        }
    }

    /// Pending → in-use. Returns the expiry timer the caller must cancel.
    pub fn consume(&mut self, vip: Ipv4Addr) -> Option<EventId> {
        let c = self.commitments.get_mut(&vip)?;
        match c.state {
            CommitState::Pending { timer, .. } => {
                c.state = CommitState::InUse;
                Some(timer)
            }
            CommitState::InUse => None,
        }
    }

    /// Frees a pending commitment on timeout. In-use reservations are kept.
    pub fn expire(&mut self, vip: Ipv4Addr) -> bool {
        if matches!(
            self.commitments.get(&vip).map(|c| c.state),
            Some(CommitState::Pending { .. })
        ) {
            self.commitments.remove(&vip);
            true
        } else {
            false
        }
    }

    /// Releases an in-use reservation when its mobile node leaves.
    pub fn release(&mut self, vip: Ipv4Addr) -> bool {
        if matches!(
            self.commitments.get(&vip).map(|c| c.state),
            Some(CommitState::InUse)
        ) {
            self.commitments.remove(&vip);
            true
        } else {
            false
        }
    }

    /// Installs an in-use reservation directly (initial attachment).
    pub fn install_in_use(&mut self, vip: Ipv4Addr, amount_kbps: u64) {
        let offered = self.effective();
        self.commitments.insert(
            vip,
            Commitment {
                amount_kbps,
                offered_kbps: offered,
                state: CommitState::InUse,
            },
        );
    }
}
