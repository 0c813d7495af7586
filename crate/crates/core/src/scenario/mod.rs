//! Scenario loading and single or batched simulation runs.

mod baseline;
mod config;
mod mobility;
mod world;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use baseline::BaselineAgent;
pub use config::{
    ApConfig, ConfigError, DelayConfig, GatewayConfig, MobilityConfig, ScenarioConfig, Topology,
    TopologyConfig, TrafficProfile,
};
pub use mobility::Trajectory;
pub use world::PacketRecord;

use crate::agents::{exchange_latency, handoff_latency, MnAgent, MobileAgent, Outcome};
use crate::engine::{duration_micros, millis, Engine, HandlerError, SimFault, SimTime};
use crate::metrics::{LossRecord, RunReport};
use world::World;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Two radios, make-before-break.
    Dual,
    /// One radio, break-before-make.
    Baseline,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Dual => "dual",
            Scheme::Baseline => "baseline",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dual" => Ok(Scheme::Dual),
            "baseline" => Ok(Scheme::Baseline),
            other => Err(format!(
                "unknown scheme '{other}' (expected dual or baseline)"
            )),
        }
    }
}

/// A validated configuration ready to run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub topology: Topology,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        let topology = config.validate()?;
        Ok(Scenario { config, topology })
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Self::new(ScenarioConfig::from_json(text)?)
    }

    /// Candidates older than one full sweep plus one dwell are stale.
    pub fn candidate_max_age(&self) -> Duration {
        let dwell = millis(self.config.delays.scan_dwell_ms);
        dwell * (self.config.propagation.channels.len() as u32 + 1)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Index of the run within a batch; echoed in the report.
    pub run: usize,
    /// Collect one line per control message.
    pub trace: bool,
    /// Fault injection: the dual-radio agent releases the old radio as soon
    /// as it sends SWITCH-ROUTE instead of after SWITCH-ROUTE-OK.
    pub early_release: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub packets: Vec<PacketRecord>,
    pub trace: Option<Vec<String>>,
}

pub fn make_agent(scenario: &Scenario, scheme: Scheme, opts: &RunOptions) -> Box<dyn MobileAgent> {
    let params = scenario.config.handoff.clone();
    let max_age = scenario.candidate_max_age();
    match scheme {
        Scheme::Dual => {
            let mut agent = MnAgent::new(params, max_age).with_early_release(opts.early_release);
            agent.attached();
            Box::new(agent)
        }
        Scheme::Baseline => Box::new(BaselineAgent::new(
            params,
            max_age,
            scenario.config.propagation.channels.len(),
        )),
    }
}

/// Runs one simulation. The same `(scenario, scheme, seed)` always yields
/// the same report.
pub fn run_scenario(
    scenario: &Scenario,
    scheme: Scheme,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput, SimFault> {
    let cfg = &scenario.config;
    let agent = make_agent(scenario, scheme, opts);
    let mut world = World::new(cfg, &scenario.topology, scheme, seed, agent, opts);
    let mut engine = Engine::new();
    world.start(&mut engine).map_err(|reason| SimFault {
        time: SimTime::ZERO,
        seq: 0,
        target: scenario.topology.mobile_id(),
        event: "start",
        reason,
    })?;
    let t_end = SimTime::ZERO + cfg.duration();
    engine.run_until(t_end, |eng, ev| -> Result<(), HandlerError> {
        world.handle(eng, ev.target, ev.payload)
    })?;
    let events = engine.fired();
    let out = world.finish(&engine);

    let completed = out
        .records
        .iter()
        .filter(|r| r.outcome == Outcome::Completed);
    let latencies_us = completed
        .clone()
        .filter_map(handoff_latency)
        .map(duration_micros)
        .collect();
    let exchange_us = completed
        .filter_map(exchange_latency)
        .map(duration_micros)
        .collect();
    let mut loss_reasons = BTreeMap::new();
    let mut losses = Vec::new();
    for p in &out.packets {
        if let Some(reason) = p.drop_reason {
            *loss_reasons.entry(reason).or_insert(0u64) += 1;
            losses.push(LossRecord {
                seq: p.seq,
                t_sent: p.t_sent,
                reason,
            });
        }
    }
    let report = RunReport {
        run: opts.run,
        seed,
        scheme,
        handoffs: out.records,
        latencies_us,
        exchange_latencies_us: exchange_us,
        sent: out.packets.len() as u64,
        lost: losses.len() as u64,
        loss_reasons,
        losses,
        violations: out.violations,
        violation_count: out.violation_count,
        events,
        config: cfg.clone(),
    };
    Ok(RunOutput {
        report,
        packets: out.packets,
        trace: out.trace,
    })
}

/// Runs `runs` independent simulations with seeds `base_seed + i` in
/// parallel. Results are in run order regardless of scheduling.
pub fn run_batch(
    scenario: &Scenario,
    scheme: Scheme,
    base_seed: u64,
    runs: usize,
    opts: &RunOptions,
) -> Result<Vec<RunOutput>, SimFault> {
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let o = RunOptions {
                run: i,
                ..opts.clone()
            };
            run_scenario(scenario, scheme, base_seed.wrapping_add(i as u64), &o)
        })
        .collect()
}
