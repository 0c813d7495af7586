//! The simulated network: nodes, radio and backhaul links, traffic source
//! and sink, and the event handlers that tie agents to the scheduler.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use super::config::{ScenarioConfig, Topology};
use super::mobility::Trajectory;
use super::{RunOptions, Scheme};
use crate::agents::{
    ap_on_commitment_timeout, ap_on_request_route, ap_relay_switch_route, ap_relay_switch_route_ok,
    gw_on_switch_route, AgentCtx, AgentTimer, BandwidthLedger, CommitState, HandoffMessage,
    MobileAgent, ScanSample,
};
use crate::engine::{
    millis, Engine, EventId, EventKind, HandlerError, RandomStreams, SimTime, Stream,
};
use crate::net::{
    compute_rssi, forward_packet, ApNode, ApRole, Bssid, ControlChannel, ControlDest, ControlKind,
    DataPacket, Direction, DropReason, EntryOrigin, ForwardAction, ForwardingState, GatewayNode,
    Interface, LinkQuality, MacAddr, MobileNode, NextHop, NodeId, Position, Prefix, RadioId,
};

/// Resolved control delivery: target, air hops, backhaul hops, loss class,
/// and the association an air hop uses.
type Route = (NodeId, u32, u32, ControlKind, Option<(RadioId, Bssid)>);

/// Violations kept per run; later ones are only counted.
const MAX_VIOLATIONS: usize = 100;

#[derive(Clone, Debug)]
pub(crate) enum Event {
    ScanTick,
    AssociationDone {
        radio: RadioId,
        bssid: Bssid,
    },
    DissociationDone {
        radio: RadioId,
    },
    /// A control message arriving at the event target. Air-hop messages
    /// carry the association they travelled over; they are dropped if it no
    /// longer exists on arrival.
    Control {
        from: NodeId,
        msg: HandoffMessage,
        link: Option<(RadioId, Bssid)>,
    },
    Timer(AgentTimer),
    TrafficTick(u64),
    Packet(DataPacket),
    Monitor,
}

impl EventKind for Event {
    fn kind(&self) -> &'static str {
        match self {
            Event::ScanTick => "scan-tick",
            Event::AssociationDone { .. } => "association-done",
            Event::DissociationDone { .. } => "dissociation-done",
            Event::Control { .. } => "control",
            Event::Timer(_) => "timer",
            Event::TrafficTick(_) => "traffic-tick",
            Event::Packet(_) => "packet",
            Event::Monitor => "monitor",
        }
    }
}

enum Command {
    Send {
        from: NodeId,
        dest: ControlDest,
        msg: HandoffMessage,
    },
    Associate {
        radio: RadioId,
        bssid: Bssid,
    },
    Dissociate {
        radio: RadioId,
    },
    ResumeScan,
}

/// [`AgentCtx`] backed by the scheduler. Timers are armed immediately;
/// everything else is queued and applied once the agent returns.
struct Ctx<'a> {
    engine: &'a mut Engine<Event>,
    outbox: &'a mut Vec<Command>,
    ap_names: &'a BTreeMap<Bssid, String>,
    gw_switch: &'a mut BTreeMap<Ipv4Addr, SimTime>,
}

impl AgentCtx for Ctx<'_> {
    fn now(&self) -> SimTime {
        self.engine.now()
    }

    fn send(&mut self, from: NodeId, dest: ControlDest, msg: HandoffMessage) {
        self.outbox.push(Command::Send { from, dest, msg });
    }

    fn set_timer(&mut self, owner: NodeId, timer: AgentTimer, delay: Duration) -> EventId {
        self.engine.schedule(Event::Timer(timer), owner, delay)
    }

    fn cancel_timer(&mut self, id: EventId) -> bool {
        self.engine.cancel(id)
    }

    fn associate(&mut self, _mn: NodeId, radio: RadioId, bssid: Bssid) {
        self.outbox.push(Command::Associate { radio, bssid });
    }

    fn dissociate(&mut self, _mn: NodeId, radio: RadioId) {
        self.outbox.push(Command::Dissociate { radio });
    }

    fn resume_scan(&mut self, _mn: NodeId) {
        self.outbox.push(Command::ResumeScan);
    }

    fn ap_name(&self, bssid: Bssid) -> String {
        self.ap_names
            .get(&bssid)
            .cloned()
            .unwrap_or_else(|| bssid.to_string())
    }

    fn gateway_switch_time(&self, vip: Ipv4Addr) -> Option<SimTime> {
        self.gw_switch.get(&vip).copied()
    }

    fn note_gateway_switch(&mut self, vip: Ipv4Addr) {
        let now = self.engine.now();
        self.gw_switch.insert(vip, now);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NodeRef {
    Gateway,
    Ap(usize),
    Mobile,
}

struct Timing {
    association: Duration,
    dissociation: Duration,
    data_air: Duration,
    data_backhaul: Duration,
    scan_dwell: Duration,
    monitor: Duration,
    interval: Duration,
    reply_timeout: Duration,
}

/// Per-packet outcome of the echo flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketRecord {
    pub seq: u64,
    pub t_sent: SimTime,
    pub t_replied: Option<SimTime>,
    /// Set iff the packet counts as lost.
    pub drop_reason: Option<DropReason>,
}

pub(crate) struct World<'a> {
    cfg: &'a ScenarioConfig,
    topo: &'a Topology,
    scheme: Scheme,
    rng: RandomStreams,
    trajectory: Trajectory,
    timing: Timing,
    control: ControlChannel,

    pub gateway: GatewayNode,
    pub aps: Vec<ApNode>,
    pub mn: MobileNode,
    agent: Box<dyn MobileAgent>,

    ap_names: BTreeMap<Bssid, String>,
    gw_switch: BTreeMap<Ipv4Addr, SimTime>,
    outbox: Vec<Command>,

    scan_timer: Option<EventId>,
    channel_idx: usize,

    sent: Vec<Option<SimTime>>,
    replied: Vec<Option<SimTime>>,
    dropped: Vec<Option<DropReason>>,
    /// Echo replies whose destination was not the VIP.
    vip_mismatches: u64,

    violations: Vec<String>,
    violation_count: u64,
    trace: Option<Vec<String>>,
}

impl<'a> World<'a> {
    pub fn new(
        cfg: &'a ScenarioConfig,
        topo: &'a Topology,
        scheme: Scheme,
        seed: u64,
        agent: Box<dyn MobileAgent>,
        opts: &RunOptions,
    ) -> Self {
        let d = &cfg.delays;
        let p = &cfg.propagation;
        let timing = Timing {
            association: millis(d.association_ms),
            dissociation: millis(d.dissociation_ms),
            data_air: millis(d.data_air_ms),
            data_backhaul: millis(d.data_backhaul_ms),
            scan_dwell: millis(d.scan_dwell_ms),
            monitor: millis(d.monitor_interval_ms),
            interval: millis(cfg.traffic.interval_ms),
            reply_timeout: millis(cfg.traffic.reply_timeout_ms),
        };
        let control = ControlChannel {
            air_hop: millis(d.control_air_ms),
            backhaul_hop: millis(d.control_backhaul_ms),
            processing: millis(d.processing_ms),
            broadcast_loss: p.broadcast_loss,
            unicast_loss: p.unicast_loss,
        };

        let gateway = build_gateway(topo);
        let aps = build_aps(topo);
        let radios = match scheme {
            Scheme::Dual => 2,
            Scheme::Baseline => 1,
        };
        let mn = MobileNode::new(topo.mobile_id(), &topo.mobile_name, topo.vip, radios);
        let ap_names = aps
            .iter()
            .map(|a| (a.bssid(), a.hostname.clone()))
            .collect();
        let n = cfg.traffic.packet_count as usize;

        World {
            cfg,
            topo,
            scheme,
            rng: RandomStreams::new(seed),
            trajectory: Trajectory::new(&cfg.mobility.waypoints, cfg.mobility.speed_kmph),
            timing,
            control,
            gateway,
            aps,
            mn,
            agent,
            ap_names,
            gw_switch: BTreeMap::new(),
            outbox: Vec::new(),
            scan_timer: None,
            channel_idx: 0,
            sent: vec![None; n],
            replied: vec![None; n],
            dropped: vec![None; n],
            vip_mismatches: 0,
            violations: Vec::new(),
            violation_count: 0,
            trace: opts.trace.then(Vec::new),
        }
    }

    fn node_ref(&self, id: NodeId) -> Option<NodeRef> {
        let i = id.0 as usize;
        if id == self.topo.gateway_id() {
            Some(NodeRef::Gateway)
        } else if id == self.mn.id {
            Some(NodeRef::Mobile)
        } else if (1..=self.aps.len()).contains(&i) {
            Some(NodeRef::Ap(i - 1))
        } else {
            None
        }
    }

    fn node_name(&self, id: NodeId) -> &str {
        match self.node_ref(id) {
            Some(NodeRef::Gateway) => &self.gateway.hostname,
            Some(NodeRef::Ap(i)) => &self.aps[i].hostname,
            Some(NodeRef::Mobile) => &self.mn.name,
            None => "?",
        }
    }

    fn ap_by_bssid(&self, bssid: Bssid) -> Option<usize> {
        self.aps.iter().position(|a| a.bssid() == bssid)
    }

    fn mn_position(&self, t: SimTime) -> Position {
        self.trajectory.position_at(t)
    }

    fn slot(&self, t: SimTime) -> u64 {
        t.as_micros() / self.timing.scan_dwell.as_micros().max(1) as u64
    }

    /// RSSI between AP `i` and the mobile node at `t`, shadowing included.
    fn rssi(&self, i: usize, t: SimTime) -> f64 {
        let p = &self.cfg.propagation;
        let shadow = self
            .rng
            .shadowing_db(i as u64, self.slot(t), p.shadowing_sigma_db);
        compute_rssi(self.aps[i].position, self.mn_position(t), p, shadow)
    }

    fn mean_rssi(&self, i: usize, t: SimTime) -> f64 {
        compute_rssi(
            self.aps[i].position,
            self.mn_position(t),
            &self.cfg.propagation,
            0.0,
        )
    }

    fn in_range(&self, i: usize, t: SimTime) -> bool {
        self.rssi(i, t) >= self.cfg.propagation.rx_sensitivity_dbm
    }

    fn violation(&mut self, t: SimTime, what: String) {
        self.violation_count += 1;
        if self.violations.len() < MAX_VIOLATIONS {
            self.violations.push(format!("t={} {what}", t.as_micros()));
        }
    }

    /// Installs the initial attachment to the strongest edge AP at t = 0 and
    /// schedules the first scan, traffic and monitor events.
    pub fn start(&mut self, eng: &mut Engine<Event>) -> Result<(), String> {
        let t0 = SimTime::ZERO;
        let best = (0..self.aps.len())
            .filter(|&i| self.aps[i].is_edge() && self.in_range(i, t0))
            .max_by(|&a, &b| self.rssi(a, t0).total_cmp(&self.rssi(b, t0)))
            .ok_or_else(|| "mobile node starts outside every edge AP's coverage".to_string())?;

        let vip = self.mn.vip;
        let radio = RadioId(0);
        let mac = self.mn.radio(radio).mac;
        let requested = self.cfg.handoff.requested_bandwidth_kbps;
        let ap = &mut self.aps[best];
        self.mn.radio_mut(radio).association = Some(ap.bssid());
        ap.clients.insert(mac);
        ap.fwd.set_arp(vip, mac, EntryOrigin::Handoff);
        ap.fwd.set_route(
            Prefix::host(vip),
            NextHop::Link {
                iface: Interface::ApRadio,
                via: None,
            },
            EntryOrigin::Handoff,
        );
        if let Some(ledger) = ap.ledger.as_mut() {
            ledger.install_in_use(vip, requested);
        }
        let tunnel = self
            .gateway
            .fwd
            .tunnel_for(&ap.hostname)
            .ok_or_else(|| format!("no tunnel for edge AP '{}'", ap.hostname))?;
        self.gateway.fwd.set_route(
            Prefix::host(vip),
            NextHop::Tunnel(tunnel),
            EntryOrigin::Handoff,
        );
        let (ap_ip, ap_mac) = (ap.ip, ap.mac);
        self.mn.fwd.set_arp(ap_ip, ap_mac, EntryOrigin::Handoff);
        self.mn.fwd.set_route(
            Prefix::host(ap_ip),
            NextHop::Link {
                iface: Interface::Radio(radio),
                via: None,
            },
            EntryOrigin::Handoff,
        );
        self.mn.fwd.set_route(
            Prefix::default_route(),
            NextHop::Link {
                iface: Interface::Radio(radio),
                via: Some(ap_ip),
            },
            EntryOrigin::Handoff,
        );

        let mn_id = self.mn.id;
        self.scan_timer = Some(eng.schedule(Event::ScanTick, mn_id, self.timing.scan_dwell));
        eng.schedule_at(t0, mn_id, Event::TrafficTick(0));
        eng.schedule_at(t0, mn_id, Event::Monitor);
        Ok(())
    }

    pub fn handle(
        &mut self,
        eng: &mut Engine<Event>,
        target: NodeId,
        event: Event,
    ) -> Result<(), HandlerError> {
        match event {
            Event::ScanTick => self.on_scan_tick(eng),
            Event::AssociationDone { radio, bssid } => self.on_association_done(eng, radio, bssid),
            Event::DissociationDone { radio } => self.on_dissociation_done(eng, radio),
            Event::Control { from, msg, link } => self.on_control(eng, target, from, msg, link)?,
            Event::Timer(timer) => self.on_timer(eng, target, timer),
            Event::TrafficTick(seq) => self.on_traffic_tick(eng, seq),
            Event::Packet(packet) => self.route_packet(eng, target, packet),
            Event::Monitor => self.on_monitor(eng),
        }
        self.flush(eng);
        Ok(())
    }

    /// Runs `f` against the mobile agent with a scheduler-backed context.
    fn with_agent<F>(&mut self, eng: &mut Engine<Event>, f: F)
    where
        F: FnOnce(&mut dyn MobileAgent, &mut MobileNode, &mut dyn AgentCtx),
    {
        let mut ctx = Ctx {
            engine: eng,
            outbox: &mut self.outbox,
            ap_names: &self.ap_names,
            gw_switch: &mut self.gw_switch,
        };
        f(self.agent.as_mut(), &mut self.mn, &mut ctx);
    }

    fn flush(&mut self, eng: &mut Engine<Event>) {
        for cmd in std::mem::take(&mut self.outbox) {
            match cmd {
                Command::Send { from, dest, msg } => self.transmit_control(eng, from, dest, msg),
                Command::Associate { radio, bssid } => {
                    eng.schedule(
                        Event::AssociationDone { radio, bssid },
                        self.mn.id,
                        self.timing.association,
                    );
                }
                Command::Dissociate { radio } => {
                    eng.schedule(
                        Event::DissociationDone { radio },
                        self.mn.id,
                        self.timing.dissociation,
                    );
                }
                Command::ResumeScan => self.resume_scan(eng),
            }
        }
    }

    fn resume_scan(&mut self, eng: &mut Engine<Event>) {
        if self.scan_timer.is_some_and(|t| eng.is_pending(t)) {
            return;
        }
        self.scan_timer = Some(eng.schedule(Event::ScanTick, self.mn.id, self.timing.scan_dwell));
    }

    fn transmit_control(
        &mut self,
        eng: &mut Engine<Event>,
        from: NodeId,
        dest: ControlDest,
        msg: HandoffMessage,
    ) {
        let now = eng.now();
        let mn_id = self.mn.id;
        let resolved: Option<Route> = match dest {
            ControlDest::Node(to) => self
                .topo
                .hops(from, to)
                .map(|h| (to, 0, h, ControlKind::Unicast, None)),
            ControlDest::Broadcast(radio) if from == mn_id => {
                self.mn.radio(radio).association.and_then(|b| {
                    self.ap_by_bssid(b).map(|i| {
                        (
                            self.topo.ap_id(i),
                            1,
                            0,
                            ControlKind::Broadcast,
                            Some((radio, b)),
                        )
                    })
                })
            }
            ControlDest::Link(bssid) if from == mn_id => self
                .mn
                .radios
                .iter()
                .find(|r| r.association == Some(bssid))
                .and_then(|r| {
                    self.ap_by_bssid(bssid).map(|i| {
                        (
                            self.topo.ap_id(i),
                            1,
                            0,
                            ControlKind::Unicast,
                            Some((r.id, bssid)),
                        )
                    })
                }),
            ControlDest::Link(mac) => match self.node_ref(from) {
                Some(NodeRef::Ap(i)) => {
                    let bssid = self.aps[i].bssid();
                    self.mn
                        .radio_by_mac(mac)
                        .filter(|r| r.association == Some(bssid))
                        .map(|r| (mn_id, 1, 0, ControlKind::Unicast, Some((r.id, bssid))))
                }
                _ => None,
            },
            ControlDest::Broadcast(_) => None,
        };

        if self.trace.is_some() {
            let to = match (dest, resolved) {
                (ControlDest::Broadcast(_), _) => "*".to_string(),
                (_, Some((to, ..))) => self.node_name(to).to_string(),
                (ControlDest::Link(mac), None) => mac.to_string(),
                (ControlDest::Node(n), None) => self.node_name(n).to_string(),
            };
            let line = msg.trace_line(now, self.node_name(from), &to);
            if let Some(t) = self.trace.as_mut() {
                t.push(line);
            }
        }

        let Some((to, air, backhaul, kind, link)) = resolved else {
            return;
        };
        if self.control.dropped(&mut self.rng, kind) {
            return;
        }
        let delay = self.control.delivery_delay(air, backhaul);
        eng.schedule(Event::Control { from, msg, link }, to, delay);
    }

    fn on_scan_tick(&mut self, eng: &mut Engine<Event>) {
        self.scan_timer = None;
        if self.agent.scan_radio(&self.mn).is_none() {
            return;
        }
        let now = eng.now();
        let channels = &self.cfg.propagation.channels;
        let channel = channels[self.channel_idx];
        self.channel_idx = (self.channel_idx + 1) % channels.len();
        let sweep_done = self.channel_idx == 0;
        let current = self.mn.primary().and_then(|r| r.association);
        let sens = self.cfg.propagation.rx_sensitivity_dbm;
        let noise = self.cfg.propagation.noise_floor_dbm;
        let samples: Vec<ScanSample> = (0..self.aps.len())
            .filter(|&i| self.aps[i].is_edge() && self.aps[i].channel == channel)
            .filter_map(|i| {
                let rssi = self.rssi(i, now);
                let bssid = self.aps[i].bssid();
                (rssi >= sens || current == Some(bssid)).then(|| ScanSample {
                    bssid,
                    at: now,
                    lq: LinkQuality::sample(rssi, noise),
                })
            })
            .collect();
        self.with_agent(eng, |agent, mn, ctx| {
            agent.on_scan(mn, &samples, sweep_done, ctx)
        });
        if self.agent.scan_radio(&self.mn).is_some() {
            self.resume_scan(eng);
        }
    }

    fn on_association_done(&mut self, eng: &mut Engine<Event>, radio: RadioId, bssid: Bssid) {
        let now = eng.now();
        let Some(i) = self.ap_by_bssid(bssid) else {
            return;
        };
        if let Some(old) = self.mn.radio(radio).association.filter(|b| *b != bssid) {
            self.detach(now, radio, old);
        }
        let ok = self.aps[i].is_edge() && self.in_range(i, now);
        if ok {
            let mac = self.mn.radio(radio).mac;
            self.mn.radio_mut(radio).association = Some(bssid);
            self.aps[i].clients.insert(mac);
        }
        self.with_agent(eng, |agent, mn, ctx| {
            agent.on_association(mn, radio, bssid, ok, ctx)
        });
    }

    fn on_dissociation_done(&mut self, eng: &mut Engine<Event>, radio: RadioId) {
        let now = eng.now();
        if let Some(bssid) = self.mn.radio(radio).association {
            self.detach(now, radio, bssid);
        }
        self.with_agent(eng, |agent, mn, ctx| agent.on_dissociated(mn, radio, ctx));
    }

    /// Tears down one association on both ends and checks that the AP no
    /// longer references the mobile node.
    fn detach(&mut self, now: SimTime, radio: RadioId, bssid: Bssid) {
        let vip = self.mn.vip;
        let mac = self.mn.radio(radio).mac;
        self.mn.radio_mut(radio).association = None;
        let Some(i) = self.ap_by_bssid(bssid) else {
            return;
        };
        let ap = &mut self.aps[i];
        ap.clients.remove(&mac);
        let other_here = self.mn.radios.iter().any(|r| r.association == Some(bssid));
        if !other_here {
            ap.fwd.purge_handoff_state(vip, &[mac]);
            if let Some(ledger) = ap.ledger.as_mut() {
                ledger.release(vip);
            }
        }
        let ap_ip = ap.ip;
        let stale = !other_here && ap.fwd.references(vip, &[mac]);
        let name = ap.hostname.clone();
        if !other_here {
            self.mn.fwd.remove_arp(ap_ip);
            self.mn.fwd.remove_route(Prefix::host(ap_ip));
        }
        if stale {
            self.violation(
                now,
                format!("cleanup: {name} still references {vip} after dissociation"),
            );
        }
    }

    fn on_control(
        &mut self,
        eng: &mut Engine<Event>,
        target: NodeId,
        from: NodeId,
        msg: HandoffMessage,
        link: Option<(RadioId, Bssid)>,
    ) -> Result<(), HandlerError> {
        if let Some((radio, bssid)) = link {
            if self.mn.radio(radio).association != Some(bssid) {
                return Ok(());
            }
        }
        let gateway_id = self.topo.gateway_id();
        let params = &self.cfg.handoff;
        let node = self.node_ref(target);
        let mut ctx = Ctx {
            engine: eng,
            outbox: &mut self.outbox,
            ap_names: &self.ap_names,
            gw_switch: &mut self.gw_switch,
        };
        match node {
            Some(NodeRef::Ap(i)) => {
                let ap = &mut self.aps[i];
                match msg {
                    HandoffMessage::RequestRoute { .. } => {
                        ap_on_request_route(ap, &msg, params, &mut ctx);
                    }
                    HandoffMessage::SwitchRouteMnToB { .. } => {
                        ap_relay_switch_route(ap, &msg, gateway_id, &mut ctx);
                    }
                    HandoffMessage::SwitchRouteOk { .. } => {
                        ap_relay_switch_route_ok(ap, &msg, &mut ctx);
                    }
                    _ => {}
                }
            }
            Some(NodeRef::Gateway) => {
                gw_on_switch_route(&mut self.gateway, &msg, from, &mut ctx)
                    .map_err(|e| HandlerError(e.to_string()))?;
            }
            Some(NodeRef::Mobile) => {
                self.agent.on_message(&mut self.mn, &msg, &mut ctx);
            }
            None => {
                return Err(HandlerError(format!(
                    "control message to unknown node {target}"
                )))
            }
        }
        Ok(())
    }

    fn on_timer(&mut self, eng: &mut Engine<Event>, target: NodeId, timer: AgentTimer) {
        match (self.node_ref(target), timer) {
            (Some(NodeRef::Ap(i)), AgentTimer::CommitmentExpiry(vip)) => {
                ap_on_commitment_timeout(&mut self.aps[i], vip);
            }
            (Some(NodeRef::Mobile), t) => {
                self.with_agent(eng, |agent, mn, ctx| agent.on_timer(mn, t, ctx));
            }
            _ => {}
        }
    }

    fn on_traffic_tick(&mut self, eng: &mut Engine<Event>, seq: u64) {
        let now = eng.now();
        self.sent[seq as usize] = Some(now);
        let src = self.mn.primary().unwrap_or(&self.mn.radios[0]).private_ip;
        let packet = DataPacket::new(src, self.gateway.ip, seq, Direction::Outbound);
        let mn_id = self.mn.id;
        self.route_packet(eng, mn_id, packet);
        let next = seq + 1;
        if next < self.cfg.traffic.packet_count {
            let at = SimTime::ZERO + self.timing.interval * next as u32;
            eng.schedule_at(at, mn_id, Event::TrafficTick(next));
        }
    }

    fn fwd(&self, node: NodeRef) -> &ForwardingState {
        match node {
            NodeRef::Gateway => &self.gateway.fwd,
            NodeRef::Ap(i) => &self.aps[i].fwd,
            NodeRef::Mobile => &self.mn.fwd,
        }
    }

    fn drop_packet(&mut self, packet: &DataPacket, reason: DropReason) {
        if let Some(slot) = self.dropped.get_mut(packet.payload_id as usize) {
            slot.get_or_insert(reason);
        }
    }

    fn route_packet(&mut self, eng: &mut Engine<Event>, at: NodeId, mut packet: DataPacket) {
        let Some(node) = self.node_ref(at) else {
            return;
        };
        loop {
            match forward_packet(self.fwd(node), packet) {
                ForwardAction::DeliverLocal(p) => {
                    match (node, p.direction) {
                        (NodeRef::Gateway, Direction::Outbound) => {
                            if p.src != self.mn.vip {
                                self.vip_mismatches += 1;
                            }
                            packet = DataPacket::new(
                                self.gateway.ip,
                                p.src,
                                p.payload_id,
                                Direction::Inbound,
                            );
                            continue;
                        }
                        (NodeRef::Mobile, Direction::Inbound) => {
                            if p.dst != self.mn.vip {
                                self.vip_mismatches += 1;
                            }
                            if let Some(slot) = self.replied.get_mut(p.payload_id as usize) {
                                slot.get_or_insert(eng.now());
                            }
                        }
                        _ => {}
                    }
                    return;
                }
                ForwardAction::Encapsulate(p) | ForwardAction::Decapsulate(p) => packet = p,
                ForwardAction::Emit {
                    iface,
                    dst_mac,
                    packet,
                } => {
                    self.emit(eng, node, iface, dst_mac, packet);
                    return;
                }
                ForwardAction::Drop { reason, packet } => {
                    self.drop_packet(&packet, reason);
                    return;
                }
            }
        }
    }

    fn emit(
        &mut self,
        eng: &mut Engine<Event>,
        node: NodeRef,
        iface: Interface,
        dst_mac: Option<MacAddr>,
        packet: DataPacket,
    ) {
        let now = eng.now();
        let (to, delay) = match (node, iface) {
            (_, Interface::Backhaul(next)) => (next, self.timing.data_backhaul),
            (NodeRef::Ap(i), Interface::ApRadio) => {
                let bssid = self.aps[i].bssid();
                let associated = dst_mac
                    .and_then(|m| self.mn.radio_by_mac(m))
                    .is_some_and(|r| r.association == Some(bssid));
                if !associated {
                    return self.drop_packet(&packet, DropReason::NotAssociated);
                }
                if !self.in_range(i, now) {
                    return self.drop_packet(&packet, DropReason::OutOfRange);
                }
                (self.mn.id, self.timing.data_air)
            }
            (NodeRef::Mobile, Interface::Radio(r)) => {
                let assoc = self.mn.radio(r).association;
                let Some(i) = assoc
                    .filter(|b| Some(*b) == dst_mac)
                    .and_then(|b| self.ap_by_bssid(b))
                else {
                    return self.drop_packet(&packet, DropReason::NotAssociated);
                };
                if !self.in_range(i, now) {
                    return self.drop_packet(&packet, DropReason::OutOfRange);
                }
                (self.topo.ap_id(i), self.timing.data_air)
            }
            _ => return self.drop_packet(&packet, DropReason::NoRoute),
        };
        if self
            .rng
            .lost(Stream::DataLoss, self.cfg.propagation.data_loss)
        {
            return self.drop_packet(&packet, DropReason::ChannelLoss);
        }
        eng.schedule(Event::Packet(packet), to, delay);
    }

    fn on_monitor(&mut self, eng: &mut Engine<Event>) {
        let now = eng.now();
        if self.mn.primary_count() != 1 {
            let n = self.mn.primary_count();
            self.violation(
                now,
                format!("expected exactly one primary radio, found {n}"),
            );
        }
        if self.scheme == Scheme::Dual && !self.mn.any_associated() {
            let covered = (0..self.aps.len()).any(|i| {
                self.aps[i].is_edge()
                    && self.mean_rssi(i, now) >= self.cfg.propagation.rx_sensitivity_dbm
            });
            if covered {
                self.violation(
                    now,
                    "coverage: no radio associated while an edge AP is in range".into(),
                );
            }
        }
        let over: Vec<String> = self
            .aps
            .iter()
            .filter_map(|ap| {
                let l = ap.ledger.as_ref()?;
                (l.committed() > l.monitored()).then(|| {
                    format!(
                        "ledger: {} committed {} > {} kbps",
                        ap.hostname,
                        l.committed(),
                        l.monitored()
                    )
                })
            })
            .collect();
        for msg in over {
            self.violation(now, msg);
        }
        eng.schedule(Event::Monitor, self.mn.id, self.timing.monitor);
    }

    /// End-of-run checks and collection of results.
    pub fn finish(mut self, eng: &Engine<Event>) -> WorldOutput {
        let now = eng.now();
        let mut end_violations = Vec::new();
        for ap in &self.aps {
            let Some(ledger) = &ap.ledger else { continue };
            for (vip, c) in ledger.commitments() {
                match c.state {
                    CommitState::InUse => {
                        let attached = self
                            .mn
                            .radios
                            .iter()
                            .any(|r| r.association == Some(ap.bssid()) && *vip == self.mn.vip);
                        if !attached {
                            end_violations.push(format!(
                                "ledger: {} holds in-use bandwidth for detached {vip}",
                                ap.hostname
                            ));
                        }
                    }
                    CommitState::Pending { timer, .. } => {
                        if !eng.is_pending(timer) {
                            end_violations.push(format!(
                                "ledger: {} pending commitment for {vip} has no live timer",
                                ap.hostname
                            ));
                        }
                    }
                }
            }
        }
        let edge = self.aps.iter().filter(|a| a.is_edge()).count();
        if self.gateway.fwd.tunnel_count() != edge {
            end_violations.push(format!(
                "tunnels: gateway has {} tunnels for {edge} edge APs",
                self.gateway.fwd.tunnel_count()
            ));
        }
        if self.vip_mismatches > 0 {
            end_violations.push(format!(
                "vip: {} echo packets carried a non-VIP address",
                self.vip_mismatches
            ));
        }
        for v in end_violations {
            self.violation(now, v);
        }

        let records = self.agent.finish();
        for r in &records {
            let ordered = match self.scheme {
                Scheme::Dual => r.is_ordered(),
                Scheme::Baseline => r.is_ordered_break_first(),
            };
            if r.outcome == crate::agents::Outcome::Completed && !ordered {
                let msg = format!(
                    "timeline out of order for handoff triggered at {}",
                    r.t_trigger.as_micros()
                );
                self.violation(now, msg);
            }
        }

        let timeout = self.timing.reply_timeout;
        let packets = (0..self.sent.len())
            .filter_map(|i| {
                let t_sent = self.sent[i]?;
                let t_replied = self.replied[i];
                let in_time = t_replied.is_some_and(|r| r - t_sent <= timeout);
                let drop_reason =
                    (!in_time).then(|| self.dropped[i].unwrap_or(DropReason::Timeout));
                Some(PacketRecord {
                    seq: i as u64,
                    t_sent,
                    t_replied,
                    drop_reason,
                })
            })
            .collect();

        WorldOutput {
            records,
            packets,
            violations: self.violations,
            violation_count: self.violation_count,
            trace: self.trace,
        }
    }
}

pub(crate) struct WorldOutput {
    pub records: Vec<crate::agents::HandoffRecord>,
    pub packets: Vec<PacketRecord>,
    pub violations: Vec<String>,
    pub violation_count: u64,
    pub trace: Option<Vec<String>>,
}

fn build_gateway(topo: &Topology) -> GatewayNode {
    let ip = topo.gateway_ip();
    let mut fwd = ForwardingState::new(ip);
    let g = topo.gateway_id();
    for (i, ap) in topo.aps.iter().enumerate() {
        let id = topo.ap_id(i);
        if let Some(next) = topo.next_hop(g, id) {
            fwd.set_route(
                Prefix::host(topo.ap_ip(i)),
                NextHop::Link {
                    iface: Interface::Backhaul(next),
                    via: None,
                },
                EntryOrigin::Static,
            );
        }
        if ap.role == ApRole::Edge {
            fwd.add_tunnel(&ap.hostname, topo.ap_ip(i));
        }
    }
    GatewayNode {
        id: g,
        hostname: topo.gateway.hostname.clone(),
        ip,
        fwd,
    }
}

fn build_aps(topo: &Topology) -> Vec<ApNode> {
    let infra: Vec<(NodeId, Ipv4Addr)> = std::iter::once((topo.gateway_id(), topo.gateway_ip()))
        .chain((0..topo.aps.len()).map(|i| (topo.ap_id(i), topo.ap_ip(i))))
        .collect();
    topo.aps
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let id = topo.ap_id(i);
            let ip = topo.ap_ip(i);
            let mut fwd = ForwardingState::new(ip);
            for &(other, other_ip) in &infra {
                if other == id {
                    continue;
                }
                if let Some(next) = topo.next_hop(id, other) {
                    fwd.set_route(
                        Prefix::host(other_ip),
                        NextHop::Link {
                            iface: Interface::Backhaul(next),
                            via: None,
                        },
                        EntryOrigin::Static,
                    );
                }
            }
            ApNode {
                id,
                hostname: cfg.hostname.clone(),
                ip,
                mac: MacAddr::local(0, i as u8 + 1),
                role: cfg.role,
                position: cfg.position,
                channel: cfg.channel,
                fwd,
                clients: Default::default(),
                ledger: (cfg.role == ApRole::Edge)
                    .then(|| BandwidthLedger::new(cfg.path_capacity_kbps)),
            }
        })
        .collect()
}
