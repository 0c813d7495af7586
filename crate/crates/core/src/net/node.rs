use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{Bssid, ForwardingState, MacAddr, NodeId, Position};
use crate::agents::BandwidthLedger;

/// Index of a radio within its mobile node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RadioId(pub u8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadioRole {
    /// Associated and carrying data.
    Primary,
    /// Scanning; temporarily associates to a candidate during a handoff.
    Secondary,
}

#[derive(Clone, Debug)]
pub struct Radio {
    pub id: RadioId,
    pub mac: MacAddr,
    /// Auto-configured address, never seen outside the mobile node.
    pub private_ip: Ipv4Addr,
    pub role: RadioRole,
    pub association: Option<Bssid>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApRole {
    /// Accepts mobile-node associations and terminates a gateway tunnel.
    Edge,
    /// Backhaul only.
    Core,
}

#[derive(Debug)]
pub struct ApNode {
    pub id: NodeId,
    pub hostname: String,
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub role: ApRole,
    pub position: Position,
    pub channel: u8,
    pub fwd: ForwardingState,
    /// MACs of currently associated client radios.
    pub clients: BTreeSet<MacAddr>,
    /// Present on edge APs only.
    pub ledger: Option<BandwidthLedger>,
}

impl ApNode {
    pub fn bssid(&self) -> Bssid {
        self.mac
    }

    pub fn is_edge(&self) -> bool {
        self.role == ApRole::Edge
    }
}

#[derive(Debug)]
pub struct GatewayNode {
    pub id: NodeId,
    pub hostname: String,
    pub ip: Ipv4Addr,
    pub fwd: ForwardingState,
}

#[derive(Debug)]
pub struct MobileNode {
    pub id: NodeId,
    pub name: String,
    pub vip: Ipv4Addr,
    pub radios: Vec<Radio>,
    pub fwd: ForwardingState,
}

impl MobileNode {
    /// Builds a mobile node with `radio_count` radios; radio 0 starts primary.
    pub fn new(id: NodeId, name: &str, vip: Ipv4Addr, radio_count: u8) -> Self {
        let radios: Vec<Radio> = (0..radio_count)
            .map(|i| Radio {
                id: RadioId(i),
                mac: MacAddr::local(0x10 + id.0 as u8, i + 1),
                private_ip: Ipv4Addr::new(192, 168, id.0 as u8, i + 1),
                role: if i == 0 {
                    RadioRole::Primary
                } else {
                    RadioRole::Secondary
                },
                association: None,
            })
            .collect();
        let mut fwd = ForwardingState::new(radios[0].private_ip);
        for r in &radios[1..] {
            fwd.add_local(r.private_ip);
        }
        fwd.add_local(vip);
        fwd.set_snat(vip);
        MobileNode {
            id,
            name: name.to_string(),
            vip,
            radios,
            fwd,
        }
    }

    pub fn radio(&self, id: RadioId) -> &Radio {
        &self.radios[usize::from(id.0)]
    }

    pub fn radio_mut(&mut self, id: RadioId) -> &mut Radio {
        &mut self.radios[usize::from(id.0)]
    }

    pub fn radio_by_mac(&self, mac: MacAddr) -> Option<&Radio> {
        self.radios.iter().find(|r| r.mac == mac)
    }

    pub fn primary(&self) -> Option<&Radio> {
        self.radios.iter().find(|r| r.role == RadioRole::Primary)
    }

    /// The scanning radio; `None` on single-radio nodes.
    pub fn secondary(&self) -> Option<&Radio> {
        self.radios.iter().find(|r| r.role == RadioRole::Secondary)
    }

    pub fn primary_count(&self) -> usize {
        self.radios
            .iter()
            .filter(|r| r.role == RadioRole::Primary)
            .count()
    }

    pub fn macs(&self) -> Vec<MacAddr> {
        self.radios.iter().map(|r| r.mac).collect()
    }

    pub fn any_associated(&self) -> bool {
        self.radios.iter().any(|r| r.association.is_some())
    }

    /// Makes `new_primary` the primary radio and every other radio secondary.
    pub fn promote(&mut self, new_primary: RadioId) {
        for r in &mut self.radios {
            r.role = if r.id == new_primary {
                RadioRole::Primary
            } else {
                RadioRole::Secondary
            };
        }
    }
}
