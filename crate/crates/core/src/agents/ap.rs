//! Edge-AP handoff agent: bandwidth admission, pre-installed ARP/route for
//! the arriving mobile node, and relaying of the route-switch exchange.

use std::net::Ipv4Addr;

use super::{AgentCtx, AgentTimer, CommitState, HandoffMessage, HandoffParams};
use crate::net::{ApNode, ControlDest, EntryOrigin, Interface, NextHop, NodeId, Prefix};

/// Handles REQUEST-ROUTE. Admits iff effective bandwidth strictly exceeds the
/// request; on admission commits, pre-installs the VIP's ARP entry and host
/// route, and replies OFFER-ROUTE. Denial is silent. A repeat request from a
/// VIP with a live commitment re-arms the timer and repeats the same offer.
pub fn ap_on_request_route(
    ap: &mut ApNode,
    msg: &HandoffMessage,
    params: &HandoffParams,
    ctx: &mut dyn AgentCtx,
) -> Option<HandoffMessage> {
    let HandoffMessage::RequestRoute {
        requested_bandwidth,
        radio2_mac,
        floating_ip,
    } = *msg
    else {
        return None;
    };
    let ledger = ap.ledger.as_mut()?;
    let expiry = ctx.now() + params.commitment_timeout();

    let offered = match ledger.get(floating_ip).copied() {
        Some(existing) => {
            if let CommitState::Pending { .. } = existing.state {
                let timer = ctx.set_timer(
                    ap.id,
                    AgentTimer::CommitmentExpiry(floating_ip),
                    params.commitment_timeout(),
                );
                if let Some(old) = ledger.refresh(floating_ip, expiry, timer) {
                    ctx.cancel_timer(old);
                }
            }
            existing.offered_kbps
        }
        None => {
            if !ledger.admits(requested_bandwidth) {
                return None;
            }
            let timer = ctx.set_timer(
                ap.id,
                AgentTimer::CommitmentExpiry(floating_ip),
                params.commitment_timeout(),
            );
            ledger.commit(floating_ip, requested_bandwidth, expiry, timer)
        }
    };

    // CREATE-ARP-ENTRY(MN) and CREATE-ROUTE(MN)
    ap.fwd
        .set_arp(floating_ip, radio2_mac, EntryOrigin::Handoff);
    ap.fwd.set_route(
        Prefix::host(floating_ip),
        NextHop::Link {
            iface: Interface::ApRadio,
            via: None,
        },
        EntryOrigin::Handoff,
    );

    let offer = HandoffMessage::OfferRoute {
        available_bandwidth: offered,
        ap_ip: ap.ip,
        ap_mac: ap.mac,
    };
    ctx.send(ap.id, ControlDest::Link(radio2_mac), offer.clone());
    Some(offer)
}

/// Frees a pending commitment whose handoff never completed, together with
/// the ARP entry and route pre-installed for it.
pub fn ap_on_commitment_timeout(ap: &mut ApNode, floating_ip: Ipv4Addr) -> bool {
    let Some(ledger) = ap.ledger.as_mut() else {
        return false;
    };
    if !ledger.expire(floating_ip) {
        return false;
    }
    ap.fwd.purge_handoff_state(floating_ip, &[]);
    true
}

/// Relays SWITCH-ROUTE from the mobile node to the gateway, adding this AP's
/// hostname. Dropped when no commitment exists for the VIP.
pub fn ap_relay_switch_route(
    ap: &ApNode,
    msg: &HandoffMessage,
    gateway: NodeId,
    ctx: &mut dyn AgentCtx,
) -> Option<HandoffMessage> {
    let HandoffMessage::SwitchRouteMnToB { floating_ip } = *msg else {
        return None;
    };
    ap.ledger.as_ref()?.get(floating_ip)?;
    let relay = HandoffMessage::SwitchRouteBToG {
        floating_ip,
        ap_hostname: ap.hostname.clone(),
    };
    ctx.send(ap.id, ControlDest::Node(gateway), relay.clone());
    Some(relay)
}

/// Relays SWITCH-ROUTE-OK to the mobile node and marks its commitment
/// consumed. Dropped when the mobile node is no longer associated here.
pub fn ap_relay_switch_route_ok(
    ap: &mut ApNode,
    msg: &HandoffMessage,
    ctx: &mut dyn AgentCtx,
) -> bool {
    let HandoffMessage::SwitchRouteOk { floating_ip, .. } = msg else {
        return false;
    };
    let Some(mac) = ap.fwd.arp(*floating_ip).map(|e| e.mac) else {
        return false;
    };
    if !ap.clients.contains(&mac) {
        return false;
    }
    if let Some(timer) = ap.ledger.as_mut().and_then(|l| l.consume(*floating_ip)) {
        ctx.cancel_timer(timer);
    }
    ctx.send(ap.id, ControlDest::Link(mac), msg.clone());
    true
}
