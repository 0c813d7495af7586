use std::time::Duration;

use super::{MacAddr, NodeId, RadioId};
use crate::engine::{RandomStreams, Stream};

/// Where a handoff control datagram is addressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlDest {
    /// Unicast between infrastructure nodes over the backhaul.
    Node(NodeId),
    /// Link-scoped broadcast from a mobile-node radio; reaches the AP that
    /// radio is associated with.
    Broadcast(RadioId),
    /// Unicast over an association to the peer radio with this MAC: from a
    /// mobile node to its AP's BSSID, or from an AP to a client radio.
    Link(MacAddr),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlKind {
    Broadcast,
    Unicast,
}

/// Unreliable datagram channel for handoff messages.
///
/// Delivery delay is per-hop latency plus the receiving agent's processing
/// time; loss is one Bernoulli draw per message on the control-loss stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlChannel {
    pub air_hop: Duration,
    pub backhaul_hop: Duration,
    pub processing: Duration,
    pub broadcast_loss: f64,
    pub unicast_loss: f64,
}

impl ControlChannel {
    pub fn delivery_delay(&self, air_hops: u32, backhaul_hops: u32) -> Duration {
        self.air_hop * air_hops + self.backhaul_hop * backhaul_hops + self.processing
    }

    pub fn dropped(&self, rng: &mut RandomStreams, kind: ControlKind) -> bool {
        let p = match kind {
            ControlKind::Broadcast => self.broadcast_loss,
            ControlKind::Unicast => self.unicast_loss,
        };
        rng.lost(Stream::ControlLoss, p)
    }
}
