//! Mobile-node handoff agent for the dual-radio make-before-break scheme.
//!
//! Sequence driven from the mobile node's side:
//!
//! 1. every scan dwell, feed samples into the history and evaluate the
//!    better-AP rule against the primary's AP;
//! 2. associate the secondary radio with the candidate;
//! 3. broadcast REQUEST-ROUTE on it, re-sending on the retry timer;
//! 4. on an adequate OFFER-ROUTE, pre-install the AP's ARP entry and host
//!    route on the secondary radio and send SWITCH-ROUTE;
//! 5. on SWITCH-ROUTE-OK, move the default route to the secondary radio,
//!    swap roles, and only then dissociate the old primary.
//!
//! Any failure before step 5 abandons the attempt: the secondary radio is
//! released and the primary keeps carrying traffic.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use super::{
    find_better_ap_in_history, AgentCtx, AgentTimer, HandoffMessage, HandoffParams, HandoffRecord,
    LqParams, MobileAgent, Outcome, ScanHistory, ScanSample,
};
use crate::engine::{EventId, SimTime};
use crate::net::{
    Bssid, ControlDest, EntryOrigin, Interface, MacAddr, MobileNode, NextHop, Prefix, RadioId,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    /// No primary association yet.
    Idle,
    Scanning,
    Associating,
    AwaitOffer,
    AwaitSwitchOk,
    /// Default route moved; waiting for the old radio to dissociate.
    Finalizing,
}

#[derive(Clone, Debug)]
pub struct MnHandoffState {
    pub phase: Phase,
    pub candidate: Option<Bssid>,
    pub retry_count: u32,
    pub retry_timer: Option<EventId>,
    pub ok_timer: Option<EventId>,
    pub scan_history: ScanHistory,
    pub lq: LqParams,
    /// Radio carrying the in-flight handoff.
    handoff_radio: Option<RadioId>,
    old_radio: Option<RadioId>,
    /// `(ap_ip, ap_mac)` from the accepted offer.
    offer: Option<(Ipv4Addr, MacAddr)>,
    holddown: BTreeMap<Bssid, SimTime>,
}

impl MnHandoffState {
    pub fn new(lq: LqParams) -> Self {
        MnHandoffState {
            phase: Phase::Idle,
            candidate: None,
            retry_count: 0,
            retry_timer: None,
            ok_timer: None,
            scan_history: ScanHistory::new(&lq),
            lq,
            handoff_radio: None,
            old_radio: None,
            offer: None,
            holddown: BTreeMap::new(),
        }
    }

    fn in_holddown(&self, bssid: Bssid, now: SimTime) -> bool {
        self.holddown.get(&bssid).is_some_and(|until| now < *until)
    }
}

pub struct MnAgent {
    state: MnHandoffState,
    params: HandoffParams,
    /// Candidates not heard within this window are ignored.
    candidate_max_age: Duration,
    current: Option<HandoffRecord>,
    records: Vec<HandoffRecord>,
    early_release: bool,
}

impl MnAgent {
    pub fn new(params: HandoffParams, candidate_max_age: Duration) -> Self {
        MnAgent {
            state: MnHandoffState::new(params.lq()),
            params,
            candidate_max_age,
            current: None,
            records: Vec::new(),
            early_release: false,
        }
    }

    /// Fault injection: release the old radio as soon as SWITCH-ROUTE is
    /// sent rather than after SWITCH-ROUTE-OK, breaking make-before-break.
    pub fn with_early_release(mut self, on: bool) -> Self {
        self.early_release = on;
        self
    }

    /// Marks the primary radio as attached; scanning starts.
    pub fn attached(&mut self) {
        self.state.phase = Phase::Scanning;
    }

    pub fn state(&self) -> &MnHandoffState {
        &self.state
    }

    fn begin_handoff(
        &mut self,
        mn: &MobileNode,
        current: Option<Bssid>,
        candidate: Bssid,
        ctx: &mut dyn AgentCtx,
    ) {
        let Some(secondary) = mn.secondary().map(|r| r.id) else {
            return;
        };
        self.current = Some(HandoffRecord::started(
            &mn.name,
            current.map(|b| ctx.ap_name(b)),
            ctx.ap_name(candidate),
            ctx.now(),
        ));
        let s = &mut self.state;
        s.phase = Phase::Associating;
        s.candidate = Some(candidate);
        s.handoff_radio = Some(secondary);
        s.retry_count = 0;
        s.offer = None;
        ctx.associate(mn.id, secondary, candidate);
    }

    fn send_request(&mut self, mn: &MobileNode, ctx: &mut dyn AgentCtx) {
        let Some(radio) = self.state.handoff_radio else {
            return;
        };
        let msg = HandoffMessage::RequestRoute {
            requested_bandwidth: self.params.requested_bandwidth_kbps,
            radio2_mac: mn.radio(radio).mac,
            floating_ip: mn.vip,
        };
        ctx.send(mn.id, ControlDest::Broadcast(radio), msg);
        self.state.retry_timer =
            Some(ctx.set_timer(mn.id, AgentTimer::RequestRetry, self.params.retry_timeout()));
    }

    fn cancel_timers(&mut self, ctx: &mut dyn AgentCtx) {
        for t in [self.state.retry_timer.take(), self.state.ok_timer.take()]
            .into_iter()
            .flatten()
        {
            ctx.cancel_timer(t);
        }
    }

    fn abandon(&mut self, mn: &mut MobileNode, reason: &str, ctx: &mut dyn AgentCtx) {
        self.cancel_timers(ctx);
        let now = ctx.now();
        if let Some(mut rec) = self.current.take() {
            rec.outcome = Outcome::Abandoned;
            rec.retries = self.state.retry_count;
            rec.abandon_reason = Some(reason.to_string());
            self.records.push(rec);
        }
        if let Some(c) = self.state.candidate.take() {
            self.state
                .holddown
                .insert(c, now + self.params.abandon_holddown());
        }
        if let Some((ap_ip, _)) = self.state.offer.take() {
            mn.fwd.remove_arp(ap_ip);
            mn.fwd.remove_route(Prefix::host(ap_ip));
        }
        self.state.phase = Phase::Scanning;
        match self.state.handoff_radio.take() {
            Some(r) if mn.radio(r).association.is_some() => ctx.dissociate(mn.id, r),
            _ => ctx.resume_scan(mn.id),
        }
    }

    fn on_offer(
        &mut self,
        mn: &mut MobileNode,
        available: u64,
        ap_ip: Ipv4Addr,
        ap_mac: MacAddr,
        ctx: &mut dyn AgentCtx,
    ) {
        if self.state.phase != Phase::AwaitOffer || self.state.candidate != Some(ap_mac) {
            return;
        }
        if let Some(t) = self.state.retry_timer.take() {
            ctx.cancel_timer(t);
        }
        if available < self.params.requested_bandwidth_kbps {
            self.abandon(mn, "insufficient-bandwidth", ctx);
            return;
        }
        let Some(radio) = self.state.handoff_radio else {
            return;
        };
        // CREATE-ARP-ENTRY(B) and CREATE-ROUTE(B)
        mn.fwd.set_arp(ap_ip, ap_mac, EntryOrigin::Handoff);
        mn.fwd.set_route(
            Prefix::host(ap_ip),
            NextHop::Link {
                iface: Interface::Radio(radio),
                via: None,
            },
            EntryOrigin::Handoff,
        );
        self.state.offer = Some((ap_ip, ap_mac));
        ctx.send(
            mn.id,
            ControlDest::Link(ap_mac),
            HandoffMessage::SwitchRouteMnToB {
                floating_ip: mn.vip,
            },
        );
        self.state.ok_timer = Some(ctx.set_timer(
            mn.id,
            AgentTimer::SwitchOkTimeout,
            self.params.switch_ok_timeout(),
        ));
        self.state.phase = Phase::AwaitSwitchOk;
        if self.early_release {
            if let Some(old) = mn.primary().filter(|r| r.association.is_some()) {
                ctx.dissociate(mn.id, old.id);
            }
        }
    }

    fn on_switch_ok(&mut self, mn: &mut MobileNode, floating_ip: Ipv4Addr, ctx: &mut dyn AgentCtx) {
        if self.state.phase != Phase::AwaitSwitchOk || floating_ip != mn.vip {
            return;
        }
        let (Some(new_radio), Some((ap_ip, _))) = (self.state.handoff_radio, self.state.offer)
        else {
            return;
        };
        if let Some(t) = self.state.ok_timer.take() {
            ctx.cancel_timer(t);
        }
        // SWITCH-ROUTE(DEFAULT, B)
        mn.fwd.set_route(
            Prefix::default_route(),
            NextHop::Link {
                iface: Interface::Radio(new_radio),
                via: Some(ap_ip),
            },
            EntryOrigin::Handoff,
        );
        let now = ctx.now();
        if let Some(rec) = self.current.as_mut() {
            rec.t_default_route_switched = Some(now);
            rec.t_route_switched_gateway = ctx.gateway_switch_time(mn.vip);
            rec.retries = self.state.retry_count;
        }
        let old = mn.primary().map(|r| r.id);
        mn.promote(new_radio);
        self.state.phase = Phase::Finalizing;
        self.state.old_radio = old;
        match old {
            Some(r) if mn.radio(r).association.is_some() => ctx.dissociate(mn.id, r),
            _ => self.complete(now, ctx, mn),
        }
    }

    fn complete(&mut self, now: SimTime, ctx: &mut dyn AgentCtx, mn: &MobileNode) {
        if let Some(mut rec) = self.current.take() {
            rec.t_dissociated = Some(now);
            rec.outcome = Outcome::Completed;
            self.records.push(rec);
        }
        let s = &mut self.state;
        s.phase = Phase::Scanning;
        s.candidate = None;
        s.handoff_radio = None;
        s.old_radio = None;
        s.offer = None;
        ctx.resume_scan(mn.id);
    }
}

impl MobileAgent for MnAgent {
    fn scan_radio(&self, mn: &MobileNode) -> Option<RadioId> {
        match self.state.phase {
            Phase::Idle | Phase::Scanning => mn
                .secondary()
                .filter(|r| r.association.is_none())
                .map(|r| r.id),
            _ => None,
        }
    }

    fn on_scan(
        &mut self,
        mn: &mut MobileNode,
        samples: &[ScanSample],
        _sweep_done: bool,
        ctx: &mut dyn AgentCtx,
    ) {
        for s in samples {
            self.state.scan_history.push(s);
        }
        if self.state.phase != Phase::Scanning {
            return;
        }
        let Some(current) = mn.primary().and_then(|r| r.association) else {
            return;
        };
        let now = ctx.now();
        let state = &self.state;
        let pick = find_better_ap_in_history(
            &state.scan_history,
            current,
            &state.lq,
            now,
            self.candidate_max_age,
            |b| state.in_holddown(b, now),
        );
        if let Some(candidate) = pick {
            self.begin_handoff(mn, Some(current), candidate, ctx);
        }
    }

    fn on_association(
        &mut self,
        mn: &mut MobileNode,
        radio: RadioId,
        bssid: Bssid,
        ok: bool,
        ctx: &mut dyn AgentCtx,
    ) {
        if self.state.phase != Phase::Associating
            || self.state.handoff_radio != Some(radio)
            || self.state.candidate != Some(bssid)
        {
            return;
        }
        if !ok {
            self.abandon(mn, "association-failed", ctx);
            return;
        }
        if let Some(rec) = self.current.as_mut() {
            rec.t_associated = Some(ctx.now());
        }
        self.state.phase = Phase::AwaitOffer;
        self.send_request(mn, ctx);
    }

    fn on_dissociated(&mut self, mn: &mut MobileNode, radio: RadioId, ctx: &mut dyn AgentCtx) {
        match self.state.phase {
            Phase::Finalizing if self.state.old_radio == Some(radio) => {
                let now = ctx.now();
                self.complete(now, ctx, mn);
            }
            Phase::Scanning => ctx.resume_scan(mn.id),
            _ => {}
        }
    }

    fn on_message(&mut self, mn: &mut MobileNode, msg: &HandoffMessage, ctx: &mut dyn AgentCtx) {
        match *msg {
            HandoffMessage::OfferRoute {
                available_bandwidth,
                ap_ip,
                ap_mac,
            } => self.on_offer(mn, available_bandwidth, ap_ip, ap_mac, ctx),
            HandoffMessage::SwitchRouteOk { floating_ip, .. } => {
                self.on_switch_ok(mn, floating_ip, ctx)
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, mn: &mut MobileNode, timer: AgentTimer, ctx: &mut dyn AgentCtx) {
        match timer {
            AgentTimer::RequestRetry if self.state.phase == Phase::AwaitOffer => {
                self.state.retry_timer = None;
                if self.state.retry_count < self.params.max_retries {
                    self.state.retry_count += 1;
                    if let Some(rec) = self.current.as_mut() {
                        rec.retries = self.state.retry_count;
                    }
                    self.send_request(mn, ctx);
                } else {
                    self.abandon(mn, "no-offer", ctx);
                }
            }
            AgentTimer::SwitchOkTimeout if self.state.phase == Phase::AwaitSwitchOk => {
                self.state.ok_timer = None;
                self.abandon(mn, "switch-ok-timeout", ctx);
            }
            _ => {}
        }
    }

    fn phase(&self) -> Phase {
        self.state.phase
    }

    fn records(&self) -> &[HandoffRecord] {
        &self.records
    }

    fn finish(&mut self) -> Vec<HandoffRecord> {
        let mut out = std::mem::take(&mut self.records);
        out.extend(self.current.take());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::testing::{Effect, TestCtx};
    use crate::net::{LinkQuality, NodeId};

    const VIP: Ipv4Addr = Ipv4Addr::new(10, 1, 0, 1);
    const B_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 1, 2);

    fn ap_a() -> Bssid {
        MacAddr::local(0, 1)
    }
    fn ap_b() -> Bssid {
        MacAddr::local(0, 2)
    }

    fn setup() -> (MobileNode, MnAgent, TestCtx) {
        let mut mn = MobileNode::new(NodeId(9), "MN", VIP, 2);
        mn.radios[0].association = Some(ap_a());
        let mut agent = MnAgent::new(HandoffParams::default(), Duration::from_millis(500));
        agent.attached();
        (mn, agent, TestCtx::new())
    }

    fn samples(at: SimTime, a: f64, b: f64) -> Vec<ScanSample> {
        vec![
            ScanSample {
                bssid: ap_a(),
                at,
                lq: LinkQuality::sample(a, -95.0),
            },
            ScanSample {
                bssid: ap_b(),
                at,
                lq: LinkQuality::sample(b, -95.0),
            },
        ]
    }

    /// Drives a handoff up to AwaitOffer; returns the radio used.
    fn to_await_offer(mn: &mut MobileNode, agent: &mut MnAgent, ctx: &mut TestCtx) -> RadioId {
        agent.on_scan(mn, &samples(ctx.now, -80.0, -70.0), false, ctx);
        assert_eq!(agent.phase(), Phase::Associating);
        assert_eq!(
            ctx.effects.last(),
            Some(&Effect::Associate(RadioId(1), ap_b()))
        );
        ctx.advance(Duration::from_millis(15));
        mn.radios[1].association = Some(ap_b());
        agent.on_association(mn, RadioId(1), ap_b(), true, ctx);
        assert_eq!(agent.phase(), Phase::AwaitOffer);
        RadioId(1)
    }

    fn offer(kbps: u64) -> HandoffMessage {
        HandoffMessage::OfferRoute {
            available_bandwidth: kbps,
            ap_ip: B_IP,
            ap_mac: ap_b(),
        }
    }

    fn ok() -> HandoffMessage {
        HandoffMessage::SwitchRouteOk {
            floating_ip: VIP,
            ap_hostname: "B".into(),
        }
    }

    #[test]
    fn nominal_cycle_is_make_before_break() {
        let (mut mn, mut agent, mut ctx) = setup();
        to_await_offer(&mut mn, &mut agent, &mut ctx);
        let req = ctx.sent().last().cloned().cloned().unwrap();
        assert_eq!(
            req,
            HandoffMessage::RequestRoute {
                requested_bandwidth: 2_000,
                radio2_mac: mn.radios[1].mac,
                floating_ip: VIP
            }
        );
        assert!(matches!(
            ctx.effects.last(),
            Some(Effect::Send(_, ControlDest::Broadcast(RadioId(1)), _))
        ));

        ctx.advance(Duration::from_millis(8));
        agent.on_message(&mut mn, &offer(8_000), &mut ctx);
        assert_eq!(agent.phase(), Phase::AwaitSwitchOk);
        assert_eq!(mn.fwd.arp(B_IP).unwrap().mac, ap_b());
        assert!(matches!(
            ctx.effects.last(),
            Some(Effect::Send(_, ControlDest::Link(m), HandoffMessage::SwitchRouteMnToB { .. })) if *m == ap_b()
        ));

        ctx.advance(Duration::from_millis(12));
        ctx.gw_switch.insert(VIP, ctx.now);
        ctx.advance(Duration::from_millis(12));
        agent.on_message(&mut mn, &ok(), &mut ctx);
        assert_eq!(agent.phase(), Phase::Finalizing);
        assert_eq!(mn.primary().unwrap().id, RadioId(1));
        assert_eq!(mn.primary_count(), 1);
        // old radio still associated until dissociation completes
        assert_eq!(mn.radios[0].association, Some(ap_a()));
        assert_eq!(ctx.effects.last(), Some(&Effect::Dissociate(RadioId(0))));
        let default = mn.fwd.route(Prefix::default_route()).unwrap();
        assert_eq!(
            default.next_hop,
            NextHop::Link {
                iface: Interface::Radio(RadioId(1)),
                via: Some(B_IP)
            }
        );

        ctx.advance(Duration::from_millis(8));
        mn.radios[0].association = None;
        agent.on_dissociated(&mut mn, RadioId(0), &mut ctx);
        assert_eq!(agent.phase(), Phase::Scanning);
        let rec = &agent.records()[0];
        assert_eq!(rec.outcome, Outcome::Completed);
        assert!(rec.is_ordered());
        assert_eq!(ctx.now - rec.t_trigger, Duration::from_millis(55));
        assert_eq!(ctx.live_timers(), 0);
    }

    #[test]
    fn association_failure_abandons_silently() {
        let (mut mn, mut agent, mut ctx) = setup();
        agent.on_scan(
            &mut mn,
            &samples(SimTime::ZERO, -80.0, -70.0),
            false,
            &mut ctx,
        );
        agent.on_association(&mut mn, RadioId(1), ap_b(), false, &mut ctx);
        assert_eq!(agent.phase(), Phase::Scanning);
        assert!(ctx.sent().is_empty());
        assert_eq!(agent.records()[0].outcome, Outcome::Abandoned);
        assert_eq!(ctx.effects.last(), Some(&Effect::ResumeScan));
    }

    #[test]
    fn retries_then_abandons() {
        let (mut mn, mut agent, mut ctx) = setup();
        to_await_offer(&mut mn, &mut agent, &mut ctx);
        for i in 1..=5 {
            ctx.advance(Duration::from_millis(25));
            agent.on_timer(&mut mn, AgentTimer::RequestRetry, &mut ctx);
            assert_eq!(agent.state().retry_count, i);
            assert_eq!(agent.phase(), Phase::AwaitOffer);
        }
        assert_eq!(ctx.sent().len(), 6);
        ctx.advance(Duration::from_millis(25));
        agent.on_timer(&mut mn, AgentTimer::RequestRetry, &mut ctx);
        assert_eq!(agent.phase(), Phase::Scanning);
        assert_eq!(ctx.effects.last(), Some(&Effect::Dissociate(RadioId(1))));
        let rec = &agent.records()[0];
        assert_eq!((rec.outcome, rec.retries), (Outcome::Abandoned, 5));
    }

    #[test]
    fn one_retry_then_offer_completes_with_one_retry() {
        let (mut mn, mut agent, mut ctx) = setup();
        to_await_offer(&mut mn, &mut agent, &mut ctx);
        ctx.advance(Duration::from_millis(25));
        agent.on_timer(&mut mn, AgentTimer::RequestRetry, &mut ctx);
        ctx.advance(Duration::from_millis(8));
        agent.on_message(&mut mn, &offer(8_000), &mut ctx);
        assert_eq!(agent.phase(), Phase::AwaitSwitchOk);
        agent.on_message(&mut mn, &ok(), &mut ctx);
        mn.radios[0].association = None;
        agent.on_dissociated(&mut mn, RadioId(0), &mut ctx);
        assert_eq!(agent.records()[0].retries, 1);
    }

    #[test]
    fn insufficient_offer_abandons_and_keeps_primary() {
        let (mut mn, mut agent, mut ctx) = setup();
        to_await_offer(&mut mn, &mut agent, &mut ctx);
        agent.on_message(&mut mn, &offer(1_000), &mut ctx);
        assert_eq!(agent.phase(), Phase::Scanning);
        assert_eq!(mn.primary().unwrap().id, RadioId(0));
        assert_eq!(mn.radios[0].association, Some(ap_a()));
        assert_eq!(ctx.effects.last(), Some(&Effect::Dissociate(RadioId(1))));
        assert!(!ctx
            .sent()
            .iter()
            .any(|m| matches!(m, HandoffMessage::SwitchRouteMnToB { .. })));
        // the rejected candidate is held down
        mn.radios[1].association = None;
        agent.on_dissociated(&mut mn, RadioId(1), &mut ctx);
        agent.on_scan(&mut mn, &samples(ctx.now, -80.0, -70.0), false, &mut ctx);
        assert_eq!(agent.phase(), Phase::Scanning);
    }

    #[test]
    fn late_or_duplicate_messages_are_ignored() {
        let (mut mn, mut agent, mut ctx) = setup();
        agent.on_message(&mut mn, &offer(8_000), &mut ctx);
        agent.on_message(&mut mn, &ok(), &mut ctx);
        assert_eq!(agent.phase(), Phase::Scanning);
        to_await_offer(&mut mn, &mut agent, &mut ctx);
        agent.on_message(&mut mn, &offer(8_000), &mut ctx);
        let sent = ctx.sent().len();
        agent.on_message(&mut mn, &offer(8_000), &mut ctx);
        assert_eq!(ctx.sent().len(), sent);
        assert_eq!(agent.phase(), Phase::AwaitSwitchOk);
    }

    #[test]
    fn ok_timeout_abandons() {
        let (mut mn, mut agent, mut ctx) = setup();
        to_await_offer(&mut mn, &mut agent, &mut ctx);
        agent.on_message(&mut mn, &offer(8_000), &mut ctx);
        ctx.advance(Duration::from_millis(100));
        agent.on_timer(&mut mn, AgentTimer::SwitchOkTimeout, &mut ctx);
        assert_eq!(agent.phase(), Phase::Scanning);
        assert_eq!(
            agent.records()[0].abandon_reason.as_deref(),
            Some("switch-ok-timeout")
        );
        assert!(mn.fwd.arp(B_IP).is_none());
        assert_eq!(mn.primary().unwrap().id, RadioId(0));
    }

    #[test]
    fn no_trigger_above_threshold() {
        let (mut mn, mut agent, mut ctx) = setup();
        agent.on_scan(
            &mut mn,
            &samples(SimTime::ZERO, -60.0, -40.0),
            false,
            &mut ctx,
        );
        assert_eq!(agent.phase(), Phase::Scanning);
        assert!(ctx.effects.is_empty());
    }
}
