//! Network model: identifiers, radio propagation, node state, the control
//! channel and the data-plane forwarding tables.

mod control;
mod forwarding;
mod node;
mod propagation;

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use control::{ControlChannel, ControlDest, ControlKind};
pub use forwarding::{
    forward_packet, ArpEntry, DataPacket, Direction, DropReason, EntryOrigin, ForwardAction,
    ForwardingState, Interface, NextHop, Route, TunnelHeader, TunnelId,
};
pub use node::{ApNode, ApRole, GatewayNode, MobileNode, Radio, RadioId, RadioRole};
pub use propagation::{compute_rssi, LinkQuality, Position, PropagationParams};

/// Simulation-wide node identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

/// An AP's radio MAC doubles as its BSSID.
pub type Bssid = MacAddr;

impl MacAddr {
    /// Locally administered unicast address built from two role bytes.
    pub const fn local(kind: u8, index: u8) -> Self {
        MacAddr([0x02, 0x00, 0x00, 0x00, kind, index])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid MAC address '{0}'")]
pub struct ParseMacError(String);

impl FromStr for MacAddr {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for byte in &mut out {
            let part = parts.next().ok_or_else(|| ParseMacError(s.to_string()))?;
            if part.len() != 2 {
                return Err(ParseMacError(s.to_string()));
            }
            *byte = u8::from_str_radix(part, 16).map_err(|_| ParseMacError(s.to_string()))?;
        }
        if parts.next().is_some() {
            return Err(ParseMacError(s.to_string()));
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// IPv4 prefix used for longest-prefix-match routing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Prefix {
    pub addr: Ipv4Addr,
    pub len: u8,
}

impl Prefix {
    pub fn new(addr: Ipv4Addr, len: u8) -> Self {
        assert!(len <= 32, "prefix length {len} out of range");
        Prefix {
            addr: Ipv4Addr::from(u32::from(addr) & Self::mask(len)),
            len,
        }
    }

    pub fn host(addr: Ipv4Addr) -> Self {
        Prefix::new(addr, 32)
    }

    pub fn default_route() -> Self {
        Prefix::new(Ipv4Addr::UNSPECIFIED, 0)
    }

    fn mask(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(len))
        }
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & Self::mask(self.len) == u32::from(self.addr)
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_display_and_parse() {
        let mac = MacAddr::local(1, 2);
        assert_eq!(mac.to_string(), "02:00:00:00:01:02");
        assert_eq!("02:00:00:00:01:02".parse::<MacAddr>().unwrap(), mac);
        assert!("02:00:00:00:01".parse::<MacAddr>().is_err());
        assert!("02:00:00:00:01:zz".parse::<MacAddr>().is_err());
    }

    #[test]
    fn prefix_matching() {
        let p = Prefix::new(Ipv4Addr::new(10, 0, 1, 77), 24);
        assert_eq!(p.addr, Ipv4Addr::new(10, 0, 1, 0));
        assert!(p.contains(Ipv4Addr::new(10, 0, 1, 3)));
        assert!(!p.contains(Ipv4Addr::new(10, 0, 2, 3)));
        assert!(Prefix::default_route().contains(Ipv4Addr::new(1, 2, 3, 4)));
        assert!(Prefix::host(Ipv4Addr::new(10, 1, 0, 1)).contains(Ipv4Addr::new(10, 1, 0, 1)));
    }
}
