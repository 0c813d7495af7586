use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::net::MacAddr;

/// The five handoff control messages. Field sets are exactly those the
/// protocol defines for each message; `floating_ip` is always the mobile
/// node's virtual address.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "message", deny_unknown_fields)]
pub enum HandoffMessage {
    /// Broadcast on the secondary radio right after it associates.
    #[serde(rename = "REQUEST-ROUTE")]
    RequestRoute {
        requested_bandwidth: u64,
        radio2_mac: MacAddr,
        floating_ip: Ipv4Addr,
    },
    #[serde(rename = "OFFER-ROUTE")]
    OfferRoute {
        available_bandwidth: u64,
        ap_ip: Ipv4Addr,
        ap_mac: MacAddr,
    },
    #[serde(rename = "SWITCH-ROUTE/MN-B")]
    SwitchRouteMnToB { floating_ip: Ipv4Addr },
    #[serde(rename = "SWITCH-ROUTE/B-G")]
    SwitchRouteBToG {
        floating_ip: Ipv4Addr,
        ap_hostname: String,
    },
    #[serde(rename = "SWITCH-ROUTE-OK")]
    SwitchRouteOk {
        floating_ip: Ipv4Addr,
        ap_hostname: String,
    },
}

impl HandoffMessage {
    pub fn name(&self) -> &'static str {
        match self {
            HandoffMessage::RequestRoute { .. } => "REQUEST-ROUTE",
            HandoffMessage::OfferRoute { .. } => "OFFER-ROUTE",
            HandoffMessage::SwitchRouteMnToB { .. } | HandoffMessage::SwitchRouteBToG { .. } => {
                "SWITCH-ROUTE"
            }
            HandoffMessage::SwitchRouteOk { .. } => "SWITCH-ROUTE-OK",
        }
    }

    /// `(field, value)` pairs in declaration order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        match self {
            HandoffMessage::RequestRoute {
                requested_bandwidth,
                radio2_mac,
                floating_ip,
            } => vec![
                ("requested_bandwidth", requested_bandwidth.to_string()),
                ("radio2_mac", radio2_mac.to_string()),
                ("floating_ip", floating_ip.to_string()),
            ],
            HandoffMessage::OfferRoute {
                available_bandwidth,
                ap_ip,
                ap_mac,
            } => vec![
                ("available_bandwidth", available_bandwidth.to_string()),
                ("ap_ip", ap_ip.to_string()),
                ("ap_mac", ap_mac.to_string()),
            ],
            HandoffMessage::SwitchRouteMnToB { floating_ip } => {
                vec![("floating_ip", floating_ip.to_string())]
            }
            HandoffMessage::SwitchRouteBToG {
                floating_ip,
                ap_hostname,
            }
            | HandoffMessage::SwitchRouteOk {
                floating_ip,
                ap_hostname,
            } => vec![
                ("floating_ip", floating_ip.to_string()),
                ("ap_hostname", ap_hostname.clone()),
            ],
        }
    }

    pub fn floating_ip(&self) -> Option<Ipv4Addr> {
        match self {
            HandoffMessage::RequestRoute { floating_ip, .. }
            | HandoffMessage::SwitchRouteMnToB { floating_ip }
            | HandoffMessage::SwitchRouteBToG { floating_ip, .. }
            | HandoffMessage::SwitchRouteOk { floating_ip, .. } => Some(*floating_ip),
            HandoffMessage::OfferRoute { .. } => None,
        }
    }

    /// Whether the message travels as a link-layer broadcast.
    pub fn is_broadcast(&self) -> bool {
        matches!(self, HandoffMessage::RequestRoute { .. })
    }

    /// One trace line: `t=<µs> <FROM>-><TO> <VARIANT> {field=value,...}`.
    pub fn trace_line(&self, at: SimTime, from: &str, to: &str) -> String {
        let fields = self
            .fields()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "t={} {from}->{to} {} {{{fields}}}",
            at.as_micros(),
            self.name()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vip() -> Ipv4Addr {
        Ipv4Addr::new(10, 1, 0, 1)
    }

    #[test]
    fn trace_line_format() {
        let m = HandoffMessage::RequestRoute {
            requested_bandwidth: 2000,
            radio2_mac: MacAddr::local(0x10, 2),
            floating_ip: vip(),
        };
        assert_eq!(
            m.trace_line(SimTime::from_micros(29_750_000), "MN", "*"),
            "t=29750000 MN->* REQUEST-ROUTE {requested_bandwidth=2000,radio2_mac=02:00:00:00:10:02,floating_ip=10.1.0.1}"
        );
        let ok = HandoffMessage::SwitchRouteOk {
            floating_ip: vip(),
            ap_hostname: "B".into(),
        };
        assert_eq!(
            ok.trace_line(SimTime::from_micros(5), "G", "B"),
            "t=5 G->B SWITCH-ROUTE-OK {floating_ip=10.1.0.1,ap_hostname=B}"
        );
    }

    #[test]
    fn json_roundtrip_and_unknown_field_rejected() {
        let m = HandoffMessage::SwitchRouteBToG {
            floating_ip: vip(),
            ap_hostname: "B".into(),
        };
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<HandoffMessage>(&s).unwrap(), m);
        let bad = r#"{"message":"SWITCH-ROUTE/MN-B","floating_ip":"10.1.0.1","extra":1}"#;
        assert!(serde_json::from_str::<HandoffMessage>(bad).is_err());
    }
}
