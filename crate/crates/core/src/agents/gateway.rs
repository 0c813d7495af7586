use thiserror::Error;

use super::{AgentCtx, HandoffMessage};
use crate::net::{ControlDest, EntryOrigin, GatewayNode, NextHop, NodeId, Prefix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("no pre-configured tunnel for edge AP '{0}'")]
    UnknownTunnel(String),
}

/// SWITCH-ROUTE(MN,B): points the VIP's host route at B's tunnel, replacing
/// the previous entry in one step, and answers SWITCH-ROUTE-OK to `from`.
pub fn gw_on_switch_route(
    gw: &mut GatewayNode,
    msg: &HandoffMessage,
    from: NodeId,
    ctx: &mut dyn AgentCtx,
) -> Result<Option<HandoffMessage>, GatewayError> {
    let HandoffMessage::SwitchRouteBToG {
        floating_ip,
        ap_hostname,
    } = msg
    else {
        return Ok(None);
    };
    let tunnel = gw
        .fwd
        .tunnel_for(ap_hostname)
        .ok_or_else(|| GatewayError::UnknownTunnel(ap_hostname.clone()))?;
    gw.fwd.set_route(
        Prefix::host(*floating_ip),
        NextHop::Tunnel(tunnel),
        EntryOrigin::Handoff,
    );
    ctx.note_gateway_switch(*floating_ip);
    let ok = HandoffMessage::SwitchRouteOk {
        floating_ip: *floating_ip,
        ap_hostname: ap_hostname.clone(),
    };
    ctx.send(gw.id, ControlDest::Node(from), ok.clone());
    Ok(Some(ok))
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;
    use crate::agents::testing::TestCtx;
    use crate::net::ForwardingState;

    fn gateway() -> GatewayNode {
        let ip = Ipv4Addr::new(10, 0, 0, 1);
        let mut fwd = ForwardingState::new(ip);
        fwd.add_tunnel("A", Ipv4Addr::new(10, 0, 1, 1));
        fwd.add_tunnel("B", Ipv4Addr::new(10, 0, 1, 2));
        GatewayNode {
            id: NodeId(0),
            hostname: "G".into(),
            ip,
            fwd,
        }
    }

    fn switch(vip: Ipv4Addr, host: &str) -> HandoffMessage {
        HandoffMessage::SwitchRouteBToG {
            floating_ip: vip,
            ap_hostname: host.into(),
        }
    }

    #[test]
    fn switch_points_vip_at_tunnel_and_replies() {
        let mut gw = gateway();
        let vip = Ipv4Addr::new(10, 1, 0, 1);
        let mut ctx = TestCtx::new();
        let ok = gw_on_switch_route(&mut gw, &switch(vip, "A"), NodeId(1), &mut ctx).unwrap();
        assert!(matches!(ok, Some(HandoffMessage::SwitchRouteOk { .. })));
        let t_a = gw.fwd.tunnel_for("A").unwrap();
        assert_eq!(gw.fwd.lookup(vip).unwrap().next_hop, NextHop::Tunnel(t_a));

        gw_on_switch_route(&mut gw, &switch(vip, "B"), NodeId(2), &mut ctx).unwrap();
        let t_b = gw.fwd.tunnel_for("B").unwrap();
        assert_eq!(gw.fwd.lookup(vip).unwrap().next_hop, NextHop::Tunnel(t_b));
        // idempotent repeat still answers
        let again = gw_on_switch_route(&mut gw, &switch(vip, "B"), NodeId(2), &mut ctx).unwrap();
        assert!(again.is_some());
        assert_eq!(gw.fwd.tunnel_count(), 2);
        assert_eq!(ctx.sent().len(), 3);
    }

    #[test]
    fn independent_routes_per_vip() {
        let mut gw = gateway();
        let mut ctx = TestCtx::new();
        let v1 = Ipv4Addr::new(10, 1, 0, 1);
        let v2 = Ipv4Addr::new(10, 1, 0, 2);
        gw_on_switch_route(&mut gw, &switch(v1, "A"), NodeId(1), &mut ctx).unwrap();
        gw_on_switch_route(&mut gw, &switch(v2, "B"), NodeId(2), &mut ctx).unwrap();
        assert_ne!(
            gw.fwd.lookup(v1).unwrap().next_hop,
            gw.fwd.lookup(v2).unwrap().next_hop
        );
    }

    #[test]
    fn unknown_hostname_is_a_fault() {
        let mut gw = gateway();
        let mut ctx = TestCtx::new();
        let err = gw_on_switch_route(
            &mut gw,
            &switch(Ipv4Addr::new(10, 1, 0, 1), "Z"),
            NodeId(1),
            &mut ctx,
        );
        assert_eq!(err, Err(GatewayError::UnknownTunnel("Z".into())));
    }
}
