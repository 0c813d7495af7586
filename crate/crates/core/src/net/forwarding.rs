use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{MacAddr, NodeId, Prefix, RadioId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TunnelId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Interface {
    /// One of the mobile node's radios.
    Radio(RadioId),
    /// An edge AP's client-facing radio.
    ApRadio,
    /// Point-to-point backhaul link towards the given neighbor.
    Backhaul(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NextHop {
    Local,
    /// Emit on `iface`; `via` is the router to resolve, `None` for on-link.
    Link {
        iface: Interface,
        via: Option<Ipv4Addr>,
    },
    Tunnel(TunnelId),
}

/// Whether an entry was configured at startup or installed by a handoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryOrigin {
    Static,
    Handoff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Route {
    pub prefix: Prefix,
    pub next_hop: NextHop,
    pub origin: EntryOrigin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArpEntry {
    pub mac: MacAddr,
    pub origin: EntryOrigin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Outbound,
    Inbound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TunnelHeader {
    pub tunnel: TunnelId,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPacket {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub payload_id: u64,
    pub direction: Direction,
    pub encap: Option<TunnelHeader>,
}

impl DataPacket {
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, payload_id: u64, direction: Direction) -> Self {
        DataPacket {
            src,
            dst,
            payload_id,
            direction,
            encap: None,
        }
    }

    /// Address the packet is currently routed on: outer header when tunneled.
    pub fn routing_dst(&self) -> Ipv4Addr {
        self.encap.map_or(self.dst, |h| h.dst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    NoRoute,
    NoArp,
    NotAssociated,
    OutOfRange,
    ChannelLoss,
    UnknownTunnel,
    /// No reply within the reply timeout and no explicit drop recorded.
    Timeout,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DropReason::NoRoute => "no-route",
            DropReason::NoArp => "no-arp",
            DropReason::NotAssociated => "not-associated",
            DropReason::OutOfRange => "out-of-range",
            DropReason::ChannelLoss => "channel-loss",
            DropReason::UnknownTunnel => "unknown-tunnel",
            DropReason::Timeout => "timeout",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ForwardAction {
    DeliverLocal(DataPacket),
    Emit {
        iface: Interface,
        dst_mac: Option<MacAddr>,
        packet: DataPacket,
    },
    /// The packet now carries an outer tunnel header and must be routed again.
    Encapsulate(DataPacket),
    /// The inner packet, outer header stripped; must be routed again.
    Decapsulate(DataPacket),
    Drop {
        reason: DropReason,
        packet: DataPacket,
    },
}

/// Per-node route table, ARP cache, tunnel table and SNAT rule.
#[derive(Clone, Debug, Default)]
pub struct ForwardingState {
    routes: BTreeMap<Prefix, Route>,
    arp: BTreeMap<Ipv4Addr, ArpEntry>,
    tunnels: BTreeMap<String, TunnelId>,
    tunnel_endpoints: BTreeMap<TunnelId, Ipv4Addr>,
    local: BTreeSet<Ipv4Addr>,
    /// Source address used for tunnel outer headers.
    own_ip: Option<Ipv4Addr>,
    snat: Option<Ipv4Addr>,
}

impl ForwardingState {
    pub fn new(own_ip: Ipv4Addr) -> Self {
        let mut s = ForwardingState {
            own_ip: Some(own_ip),
            ..Default::default()
        };
        s.local.insert(own_ip);
        s
    }

    pub fn add_local(&mut self, ip: Ipv4Addr) {
        self.local.insert(ip);
    }

    pub fn is_local(&self, ip: Ipv4Addr) -> bool {
        self.local.contains(&ip)
    }

    /// Installs or atomically replaces the route for `prefix`.
    pub fn set_route(&mut self, prefix: Prefix, next_hop: NextHop, origin: EntryOrigin) {
        self.routes.insert(
            prefix,
            Route {
                prefix,
                next_hop,
                origin,
            },
        );
    }

    pub fn remove_route(&mut self, prefix: Prefix) -> Option<Route> {
        self.routes.remove(&prefix)
    }

    pub fn route(&self, prefix: Prefix) -> Option<&Route> {
        self.routes.get(&prefix)
    }

    pub fn routes(&self) -> impl Iterator<Item = &Route> {
        self.routes.values()
    }

    /// Longest-prefix match.
    pub fn lookup(&self, dst: Ipv4Addr) -> Option<&Route> {
        self.routes
            .values()
            .filter(|r| r.prefix.contains(dst))
            .max_by_key(|r| r.prefix.len)
    }

    pub fn set_arp(&mut self, ip: Ipv4Addr, mac: MacAddr, origin: EntryOrigin) {
        self.arp.insert(ip, ArpEntry { mac, origin });
    }

    pub fn remove_arp(&mut self, ip: Ipv4Addr) -> Option<ArpEntry> {
        self.arp.remove(&ip)
    }

    pub fn arp(&self, ip: Ipv4Addr) -> Option<&ArpEntry> {
        self.arp.get(&ip)
    }

    pub fn arp_len(&self) -> usize {
        self.arp.len()
    }

    /// Registers a pre-configured tunnel to an edge AP.
    pub fn add_tunnel(&mut self, hostname: &str, endpoint: Ipv4Addr) -> TunnelId {
        if let Some(id) = self.tunnels.get(hostname) {
            return *id;
        }
        let id = TunnelId(self.tunnels.len() as u32);
        self.tunnels.insert(hostname.to_string(), id);
        self.tunnel_endpoints.insert(id, endpoint);
        id
    }

    pub fn tunnel_for(&self, hostname: &str) -> Option<TunnelId> {
        self.tunnels.get(hostname).copied()
    }

    pub fn tunnel_endpoint(&self, id: TunnelId) -> Option<Ipv4Addr> {
        self.tunnel_endpoints.get(&id).copied()
    }

    pub fn tunnel_count(&self) -> usize {
        self.tunnels.len()
    }

    pub fn set_snat(&mut self, vip: Ipv4Addr) {
        self.snat = Some(vip);
    }

    pub fn snat(&self) -> Option<Ipv4Addr> {
        self.snat
    }

    /// Removes every handoff-installed route and ARP entry that refers to
    /// `ip` or to one of `macs`. Returns the number of entries removed.
    pub fn purge_handoff_state(&mut self, ip: Ipv4Addr, macs: &[MacAddr]) -> usize {
        let before = self.routes.len() + self.arp.len();
        self.routes
            .retain(|p, r| !(r.origin == EntryOrigin::Handoff && p.addr == ip && p.len == 32));
        self.arp.retain(|k, e| {
            !(e.origin == EntryOrigin::Handoff && (*k == ip || macs.contains(&e.mac)))
        });
        before - (self.routes.len() + self.arp.len())
    }

    /// Whether any route or ARP entry refers to `ip` or one of `macs`.
    pub fn references(&self, ip: Ipv4Addr, macs: &[MacAddr]) -> bool {
        self.routes
            .values()
            .any(|r| r.prefix.len == 32 && r.prefix.addr == ip)
            || self
                .arp
                .iter()
                .any(|(k, e)| *k == ip || macs.contains(&e.mac))
    }
}

/// One forwarding decision at a node.
///
/// Tunneled packets are routed on the outer destination and decapsulated at
/// the endpoint. Tunnel routes encapsulate. Link routes resolve the next-hop
/// MAC through the ARP cache on radio interfaces; backhaul links are
/// point-to-point. Outbound packets are source-rewritten when the node
/// holds a SNAT rule.
pub fn forward_packet(state: &ForwardingState, mut packet: DataPacket) -> ForwardAction {
    if let Some(outer) = packet.encap {
        if state.is_local(outer.dst) {
            packet.encap = None;
            return ForwardAction::Decapsulate(packet);
        }
    } else if state.is_local(packet.dst) {
        return ForwardAction::DeliverLocal(packet);
    }

    let dst = packet.routing_dst();
    let Some(route) = state.lookup(dst) else {
        return ForwardAction::Drop {
            reason: DropReason::NoRoute,
            packet,
        };
    };

    match route.next_hop {
        NextHop::Local => ForwardAction::DeliverLocal(packet),
        NextHop::Tunnel(id) => {
            let (Some(endpoint), Some(src), None) =
                (state.tunnel_endpoint(id), state.own_ip, packet.encap)
            else {
                return ForwardAction::Drop {
                    reason: DropReason::UnknownTunnel,
                    packet,
                };
            };
            packet.encap = Some(TunnelHeader {
                tunnel: id,
                src,
                dst: endpoint,
            });
            ForwardAction::Encapsulate(packet)
        }
        NextHop::Link { iface, via } => {
            if let (Some(vip), Direction::Outbound) = (state.snat, packet.direction) {
                packet.src = vip;
            }
            match iface {
                Interface::Backhaul(_) => ForwardAction::Emit {
                    iface,
                    dst_mac: None,
                    packet,
                },
                Interface::Radio(_) | Interface::ApRadio => match state.arp(via.unwrap_or(dst)) {
                    Some(entry) => ForwardAction::Emit {
                        iface,
                        dst_mac: Some(entry.mac),
                        packet,
                    },
                    None => ForwardAction::Drop {
                        reason: DropReason::NoArp,
                        packet,
                    },
                },
            }
        }
    }
}
