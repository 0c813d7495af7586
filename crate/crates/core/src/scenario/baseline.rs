//! Single-radio break-before-make reference scheme.
//!
//! Uses the same trigger rule on the same scan cadence as the dual-radio
//! agent, then dissociates, sweeps every channel, associates with the best
//! AP heard and runs the same route-switch exchange on that one radio.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use crate::agents::{
    find_better_ap_in_history, AgentCtx, AgentTimer, HandoffMessage, HandoffParams, HandoffRecord,
    MobileAgent, Outcome, Phase, ScanHistory, ScanSample,
};
use crate::engine::{EventId, SimTime};
use crate::net::{
    Bssid, ControlDest, EntryOrigin, Interface, MacAddr, MobileNode, NextHop, Prefix, RadioId,
};

const RADIO: RadioId = RadioId(0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Monitoring,
    Leaving,
    Sweeping,
    Associating,
    AwaitOffer,
    AwaitSwitchOk,
}

pub struct BaselineAgent {
    params: HandoffParams,
    candidate_max_age: Duration,
    channel_count: usize,
    step: Step,
    history: ScanHistory,
    /// Best RSSI per BSSID heard during the current sweep.
    sweep: BTreeMap<Bssid, f64>,
    sweep_ticks: usize,
    candidate: Option<Bssid>,
    offer: Option<(Ipv4Addr, MacAddr)>,
    retry_count: u32,
    retry_timer: Option<EventId>,
    ok_timer: Option<EventId>,
    holddown: BTreeMap<Bssid, SimTime>,
    current: Option<HandoffRecord>,
    records: Vec<HandoffRecord>,
}

impl BaselineAgent {
    pub fn new(params: HandoffParams, candidate_max_age: Duration, channel_count: usize) -> Self {
        BaselineAgent {
            history: ScanHistory::new(&params.lq()),
            params,
            candidate_max_age,
            channel_count: channel_count.max(1),
            step: Step::Monitoring,
            sweep: BTreeMap::new(),
            sweep_ticks: 0,
            candidate: None,
            offer: None,
            retry_count: 0,
            retry_timer: None,
            ok_timer: None,
            holddown: BTreeMap::new(),
            current: None,
            records: Vec::new(),
        }
    }

    fn start_sweep(&mut self, mn: &MobileNode, ctx: &mut dyn AgentCtx) {
        self.step = Step::Sweeping;
        self.sweep.clear();
        self.sweep_ticks = 0;
        self.candidate = None;
        ctx.resume_scan(mn.id);
    }

    fn send_request(&mut self, mn: &MobileNode, ctx: &mut dyn AgentCtx) {
        let msg = HandoffMessage::RequestRoute {
            requested_bandwidth: self.params.requested_bandwidth_kbps,
            radio2_mac: mn.radio(RADIO).mac,
            floating_ip: mn.vip,
        };
        ctx.send(mn.id, ControlDest::Broadcast(RADIO), msg);
        self.retry_timer =
            Some(ctx.set_timer(mn.id, AgentTimer::RequestRetry, self.params.retry_timeout()));
    }

    /// The attempt with the current candidate failed; leave it and sweep again.
    fn retry_elsewhere(&mut self, mn: &mut MobileNode, reason: &str, ctx: &mut dyn AgentCtx) {
        for t in [self.retry_timer.take(), self.ok_timer.take()]
            .into_iter()
            .flatten()
        {
            ctx.cancel_timer(t);
        }
        if let Some(rec) = self.current.as_mut() {
            rec.retries = self.retry_count;
            rec.abandon_reason = Some(reason.to_string());
        }
        if let Some(c) = self.candidate.take() {
            self.holddown
                .insert(c, ctx.now() + self.params.abandon_holddown());
        }
        if let Some((ap_ip, _)) = self.offer.take() {
            mn.fwd.remove_arp(ap_ip);
            mn.fwd.remove_route(Prefix::host(ap_ip));
        }
        if mn.radio(RADIO).association.is_some() {
            self.step = Step::Leaving;
            ctx.dissociate(mn.id, RADIO);
        } else {
            self.start_sweep(mn, ctx);
        }
    }

    fn in_holddown(&self, b: Bssid, now: SimTime) -> bool {
        self.holddown.get(&b).is_some_and(|until| now < *until)
    }
}

impl MobileAgent for BaselineAgent {
    fn scan_radio(&self, _mn: &MobileNode) -> Option<RadioId> {
        matches!(self.step, Step::Monitoring | Step::Sweeping).then_some(RADIO)
    }

    fn on_scan(
        &mut self,
        mn: &mut MobileNode,
        samples: &[ScanSample],
        _sweep_done: bool,
        ctx: &mut dyn AgentCtx,
    ) {
        let now = ctx.now();
        match self.step {
            Step::Monitoring => {
                for s in samples {
                    self.history.push(s);
                }
                let Some(current) = mn.radio(RADIO).association else {
                    return;
                };
                let pick = find_better_ap_in_history(
                    &self.history,
                    current,
                    &self.params.lq(),
                    now,
                    self.candidate_max_age,
                    |b| self.in_holddown(b, now),
                );
                if pick.is_some() {
                    self.current = Some(HandoffRecord::started(
                        &mn.name,
                        Some(ctx.ap_name(current)),
                        String::new(),
                        now,
                    ));
                    self.step = Step::Leaving;
                    ctx.dissociate(mn.id, RADIO);
                }
            }
            Step::Sweeping => {
                for s in samples {
                    self.history.push(s);
                    if !self.in_holddown(s.bssid, now) {
                        let best = self.sweep.entry(s.bssid).or_insert(f64::NEG_INFINITY);
                        *best = best.max(s.lq.rssi_dbm);
                    }
                }
                self.sweep_ticks += 1;
                if self.sweep_ticks < self.channel_count {
                    return;
                }
                let best = self
                    .sweep
                    .iter()
                    .fold(None::<(Bssid, f64)>, |acc, (b, r)| match acc {
                        Some(a) if a.1 >= *r => Some(a),
                        _ => Some((*b, *r)),
                    });
                match best {
                    Some((bssid, _)) => {
                        self.step = Step::Associating;
                        self.candidate = Some(bssid);
                        if let Some(rec) = self.current.as_mut() {
                            rec.new_ap = ctx.ap_name(bssid);
                        }
                        ctx.associate(mn.id, RADIO, bssid);
                    }
                    None => {
                        self.sweep.clear();
                        self.sweep_ticks = 0;
                    }
                }
            }
            _ => {}
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
        if self.step != Step::Associating || radio != RADIO || self.candidate != Some(bssid) {
            return;
        }
        if !ok {
            self.candidate = None;
            self.start_sweep(mn, ctx);
            return;
        }
        if let Some(rec) = self.current.as_mut() {
            rec.t_associated = Some(ctx.now());
        }
        self.retry_count = 0;
        self.step = Step::AwaitOffer;
        self.send_request(mn, ctx);
    }

    fn on_dissociated(&mut self, mn: &mut MobileNode, radio: RadioId, ctx: &mut dyn AgentCtx) {
        if radio != RADIO {
            return;
        }
        if self.step == Step::Leaving {
            if let Some(rec) = self.current.as_mut() {
                rec.t_dissociated.get_or_insert(ctx.now());
            }
            self.start_sweep(mn, ctx);
        }
    }

    fn on_message(&mut self, mn: &mut MobileNode, msg: &HandoffMessage, ctx: &mut dyn AgentCtx) {
        match *msg {
            HandoffMessage::OfferRoute {
                available_bandwidth,
                ap_ip,
                ap_mac,
            } if self.step == Step::AwaitOffer && self.candidate == Some(ap_mac) => {
                if let Some(t) = self.retry_timer.take() {
                    ctx.cancel_timer(t);
                }
                if available_bandwidth < self.params.requested_bandwidth_kbps {
                    self.retry_elsewhere(mn, "insufficient-bandwidth", ctx);
                    return;
                }
                mn.fwd.set_arp(ap_ip, ap_mac, EntryOrigin::Handoff);
                mn.fwd.set_route(
                    Prefix::host(ap_ip),
                    NextHop::Link {
                        iface: Interface::Radio(RADIO),
                        via: None,
                    },
                    EntryOrigin::Handoff,
                );
                self.offer = Some((ap_ip, ap_mac));
                ctx.send(
                    mn.id,
                    ControlDest::Link(ap_mac),
                    HandoffMessage::SwitchRouteMnToB {
                        floating_ip: mn.vip,
                    },
                );
                self.ok_timer = Some(ctx.set_timer(
                    mn.id,
                    AgentTimer::SwitchOkTimeout,
                    self.params.switch_ok_timeout(),
                ));
                self.step = Step::AwaitSwitchOk;
            }
            HandoffMessage::SwitchRouteOk { floating_ip, .. }
                if self.step == Step::AwaitSwitchOk && floating_ip == mn.vip =>
            {
                let Some((ap_ip, _)) = self.offer.take() else {
                    return;
                };
                if let Some(t) = self.ok_timer.take() {
                    ctx.cancel_timer(t);
                }
                mn.fwd.set_route(
                    Prefix::default_route(),
                    NextHop::Link {
                        iface: Interface::Radio(RADIO),
                        via: Some(ap_ip),
                    },
                    EntryOrigin::Handoff,
                );
                let now = ctx.now();
                if let Some(mut rec) = self.current.take() {
                    rec.t_default_route_switched = Some(now);
                    rec.t_route_switched_gateway = ctx.gateway_switch_time(mn.vip);
                    rec.retries = self.retry_count;
                    rec.outcome = Outcome::Completed;
                    rec.abandon_reason = None;
                    self.records.push(rec);
                }
                self.candidate = None;
                self.step = Step::Monitoring;
                ctx.resume_scan(mn.id);
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, mn: &mut MobileNode, timer: AgentTimer, ctx: &mut dyn AgentCtx) {
        match timer {
            AgentTimer::RequestRetry if self.step == Step::AwaitOffer => {
                self.retry_timer = None;
                if self.retry_count < self.params.max_retries {
                    self.retry_count += 1;
                    self.send_request(mn, ctx);
                } else {
                    self.retry_elsewhere(mn, "no-offer", ctx);
                }
            }
            AgentTimer::SwitchOkTimeout if self.step == Step::AwaitSwitchOk => {
                self.ok_timer = None;
                self.retry_elsewhere(mn, "switch-ok-timeout", ctx);
            }
            _ => {}
        }
    }

    fn phase(&self) -> Phase {
        match self.step {
            Step::Monitoring => Phase::Scanning,
            Step::Leaving | Step::Sweeping => Phase::Idle,
            Step::Associating => Phase::Associating,
            Step::AwaitOffer => Phase::AwaitOffer,
            Step::AwaitSwitchOk => Phase::AwaitSwitchOk,
        }
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

    fn ap(i: u8) -> Bssid {
        MacAddr::local(0, i)
    }

    fn sample(b: Bssid, at: SimTime, rssi: f64) -> ScanSample {
        ScanSample {
            bssid: b,
            at,
            lq: LinkQuality::sample(rssi, -95.0),
        }
    }

    #[test]
    fn trigger_breaks_before_sweeping() {
        let mut mn = MobileNode::new(NodeId(3), "MN", VIP, 1);
        mn.radios[0].association = Some(ap(1));
        let mut agent = BaselineAgent::new(HandoffParams::default(), Duration::from_millis(500), 2);
        let mut ctx = TestCtx::new();
        agent.on_scan(
            &mut mn,
            &[sample(ap(1), ctx.now, -80.0), sample(ap(2), ctx.now, -70.0)],
            false,
            &mut ctx,
        );
        assert_eq!(ctx.effects, vec![Effect::Dissociate(RADIO)]);
        assert_eq!(agent.scan_radio(&mn), None);

        ctx.advance(Duration::from_millis(8));
        mn.radios[0].association = None;
        agent.on_dissociated(&mut mn, RADIO, &mut ctx);
        assert_eq!(agent.scan_radio(&mn), Some(RADIO));

        agent.on_scan(&mut mn, &[sample(ap(2), ctx.now, -70.0)], false, &mut ctx);
        assert!(
            !matches!(ctx.effects.last(), Some(Effect::Associate(..))),
            "sweep not finished"
        );
        agent.on_scan(&mut mn, &[], true, &mut ctx);
        assert_eq!(ctx.effects.last(), Some(&Effect::Associate(RADIO, ap(2))));
        assert_eq!(agent.records().len(), 0);
    }
}
