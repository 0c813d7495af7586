//! Handoff agents for the mobile node, edge APs and the gateway.
//!
//! Agents are state machines driven by the event loop. They never touch the
//! scheduler directly except through [`AgentCtx`], which queues outgoing
//! messages and radio operations and arms cancellable timers.

mod ap;
mod gateway;
mod ledger;
mod lq;
mod message;
mod mn;
mod record;

use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::{millis, EventId, SimTime};
use crate::net::{Bssid, ControlDest, MobileNode, NodeId, RadioId};

pub use ap::{
    ap_on_commitment_timeout, ap_on_request_route, ap_relay_switch_route, ap_relay_switch_route_ok,
};
pub use gateway::{gw_on_switch_route, GatewayError};
pub use ledger::{BandwidthLedger, CommitState, Commitment};
pub use lq::{find_better_ap, find_better_ap_in_history, LqParams, ScanHistory, ScanSample};
pub use message::HandoffMessage;
pub use mn::{MnAgent, MnHandoffState, Phase};
pub use record::{exchange_latency, handoff_latency, HandoffRecord, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentTimer {
    RequestRetry,
    SwitchOkTimeout,
    CommitmentExpiry(Ipv4Addr),
}

/// Side effects available to an agent.
pub trait AgentCtx {
    fn now(&self) -> SimTime;
    fn send(&mut self, from: NodeId, dest: ControlDest, msg: HandoffMessage);
    fn set_timer(&mut self, owner: NodeId, timer: AgentTimer, delay: Duration) -> EventId;
    fn cancel_timer(&mut self, id: EventId) -> bool;
    /// Starts association; the outcome arrives via [`MobileAgent::on_association`].
    fn associate(&mut self, mn: NodeId, radio: RadioId, bssid: Bssid);
    /// Starts dissociation; completion arrives via [`MobileAgent::on_dissociated`].
    fn dissociate(&mut self, mn: NodeId, radio: RadioId);
    fn resume_scan(&mut self, mn: NodeId);
    fn ap_name(&self, bssid: Bssid) -> String;
    fn gateway_switch_time(&self, vip: Ipv4Addr) -> Option<SimTime>;
    fn note_gateway_switch(&mut self, vip: Ipv4Addr);
}

/// Mobile-node side of a handoff scheme.
pub trait MobileAgent: Send {
    /// Radio that should be scanning now, if any.
    fn scan_radio(&self, mn: &MobileNode) -> Option<RadioId>;
    /// A scan dwell finished; `sweep_done` marks the end of a full channel sweep.
    fn on_scan(
        &mut self,
        mn: &mut MobileNode,
        samples: &[ScanSample],
        sweep_done: bool,
        ctx: &mut dyn AgentCtx,
    );
    fn on_association(
        &mut self,
        mn: &mut MobileNode,
        radio: RadioId,
        bssid: Bssid,
        ok: bool,
        ctx: &mut dyn AgentCtx,
    );
    fn on_dissociated(&mut self, mn: &mut MobileNode, radio: RadioId, ctx: &mut dyn AgentCtx);
    fn on_message(&mut self, mn: &mut MobileNode, msg: &HandoffMessage, ctx: &mut dyn AgentCtx);
    fn on_timer(&mut self, mn: &mut MobileNode, timer: AgentTimer, ctx: &mut dyn AgentCtx);
    fn phase(&self) -> Phase;
    fn records(&self) -> &[HandoffRecord];
    /// Closes any in-flight record at end of run and returns all records.
    fn finish(&mut self) -> Vec<HandoffRecord>;
}

/// Handoff thresholds, bandwidth request and protocol timers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandoffParams {
    pub lq_threshold_dbm: f64,
    pub lq_margin_db: f64,
    pub ewma_alpha: f64,
    pub history_depth: usize,
    /// Also the minimum the mobile node accepts in an offer.
    pub requested_bandwidth_kbps: u64,
    pub request_retry_timeout_ms: f64,
    pub max_retries: u32,
    pub switch_ok_timeout_ms: f64,
    pub commitment_timeout_ms: f64,
    /// After an abandoned attempt, the same candidate is skipped this long.
    pub abandon_holddown_ms: f64,
}

impl Default for HandoffParams {
    fn default() -> Self {
        HandoffParams {
            lq_threshold_dbm: -75.0,
            lq_margin_db: 5.0,
            ewma_alpha: 0.5,
            history_depth: 5,
            requested_bandwidth_kbps: 2_000,
            request_retry_timeout_ms: 25.0,
            max_retries: 5,
            switch_ok_timeout_ms: 100.0,
            commitment_timeout_ms: 2_000.0,
            abandon_holddown_ms: 500.0,
        }
    }
}

impl HandoffParams {
    pub fn lq(&self) -> LqParams {
        LqParams {
            threshold_dbm: self.lq_threshold_dbm,
            margin_db: self.lq_margin_db,
            alpha: self.ewma_alpha,
            depth: self.history_depth,
        }
    }

    pub fn retry_timeout(&self) -> Duration {
        millis(self.request_retry_timeout_ms)
    }

    pub fn switch_ok_timeout(&self) -> Duration {
        millis(self.switch_ok_timeout_ms)
    }

    pub fn commitment_timeout(&self) -> Duration {
        millis(self.commitment_timeout_ms)
    }

    pub fn abandon_holddown(&self) -> Duration {
        millis(self.abandon_holddown_ms)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(format!(
                "handoff.ewma_alpha must be in (0, 1] (got {})",
                self.ewma_alpha
            ));
        }
        if self.history_depth == 0 {
            return Err("handoff.history_depth must be >= 1".into());
        }
        for (name, v) in [
            ("request_retry_timeout_ms", self.request_retry_timeout_ms),
            ("switch_ok_timeout_ms", self.switch_ok_timeout_ms),
            ("commitment_timeout_ms", self.commitment_timeout_ms),
            ("abandon_holddown_ms", self.abandon_holddown_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("handoff.{name} must be a non-negative number"));
            }
        }
        if self.lq_margin_db.is_nan() || self.lq_margin_db < 0.0 {
            return Err("handoff.lq_margin_db must be >= 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! Recording context for driving agents without a scheduler.

    use std::collections::BTreeMap;

    use super::*;
    use crate::engine::Engine;

    #[derive(Debug, Clone, PartialEq)]
    pub enum Effect {
        Send(NodeId, ControlDest, HandoffMessage),
        Associate(RadioId, Bssid),
        Dissociate(RadioId),
        ResumeScan,
    }

    pub struct TestCtx {
        pub now: SimTime,
        pub engine: Engine<(NodeId, AgentTimer)>,
        pub effects: Vec<Effect>,
        pub gw_switch: BTreeMap<Ipv4Addr, SimTime>,
    }

    impl TestCtx {
        pub fn new() -> Self {
            TestCtx {
                now: SimTime::ZERO,
                engine: Engine::new(),
                effects: Vec::new(),
                gw_switch: BTreeMap::new(),
            }
        }

        pub fn sent(&self) -> Vec<&HandoffMessage> {
            self.effects
                .iter()
                .filter_map(|e| match e {
                    Effect::Send(_, _, m) => Some(m),
                    _ => None,
                })
                .collect()
        }

        pub fn live_timers(&self) -> usize {
            self.engine.pending_len()
        }

        pub fn advance(&mut self, d: Duration) {
            self.now = self.now + d;
        }
    }

    impl AgentCtx for TestCtx {
        fn now(&self) -> SimTime {
            self.now
        }
        fn send(&mut self, from: NodeId, dest: ControlDest, msg: HandoffMessage) {
            self.effects.push(Effect::Send(from, dest, msg));
        }
        fn set_timer(&mut self, owner: NodeId, timer: AgentTimer, delay: Duration) -> EventId {
            self.engine
                .schedule_at(self.now + delay, owner, (owner, timer))
        }
        fn cancel_timer(&mut self, id: EventId) -> bool {
            self.engine.cancel(id)
        }
        fn associate(&mut self, _mn: NodeId, radio: RadioId, bssid: Bssid) {
            self.effects.push(Effect::Associate(radio, bssid));
        }
        fn dissociate(&mut self, _mn: NodeId, radio: RadioId) {
            self.effects.push(Effect::Dissociate(radio));
        }
        fn resume_scan(&mut self, _mn: NodeId) {
            self.effects.push(Effect::ResumeScan);
        }
        fn ap_name(&self, bssid: Bssid) -> String {
            format!("ap-{}", bssid.0[5])
        }
        fn gateway_switch_time(&self, vip: Ipv4Addr) -> Option<SimTime> {
            self.gw_switch.get(&vip).copied()
        }
        fn note_gateway_switch(&mut self, vip: Ipv4Addr) {
            self.gw_switch.insert(vip, self.now);
        }
    }
}
