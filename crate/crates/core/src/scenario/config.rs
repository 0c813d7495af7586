//! Scenario configuration: JSON schema, defaults, and validation into a
//! resolved [`Topology`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::HandoffParams;
use crate::engine::millis;
use crate::net::{ApRole, NodeId, Position, PropagationParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub hostname: String,
    #[serde(default)]
    pub links: Vec<String>,
}

fn default_capacity() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApConfig {
    pub hostname: String,
    pub role: ApRole,
    pub position: Position,
    pub channel: u8,
    /// Backhaul neighbours by hostname. Links are undirected.
    #[serde(default)]
    pub links: Vec<String>,
    /// Monitored path capacity toward the gateway (edge APs).
    #[serde(default = "default_capacity")]
    pub path_capacity_kbps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub gateway: Option<GatewayConfig>,
    pub aps: Vec<ApConfig>,
    pub mobile_name: String,
    pub vip: Ipv4Addr,
}

impl Default for TopologyConfig {
    /// Two edge APs on a straight road, joined through one core AP to the
    /// gateway.
    fn default() -> Self {
        let ap = |name: &str, role, x, ch, links: &[&str]| ApConfig {
            hostname: name.into(),
            role,
            position: Position(x, 10.0),
            channel: ch,
            links: links.iter().map(|s| s.to_string()).collect(),
            path_capacity_kbps: default_capacity(),
        };
        TopologyConfig {
            gateway: Some(GatewayConfig {
                hostname: "G".into(),
                links: vec!["C".into()],
            }),
            aps: vec![
                ap("A", ApRole::Edge, 150.0, 1, &["C"]),
                ap("B", ApRole::Edge, 450.0, 6, &["C"]),
                ap("C", ApRole::Core, 300.0, 11, &[]),
            ],
            mobile_name: "MN".into(),
            vip: Ipv4Addr::new(10, 1, 0, 1),
        }
    }
}

/// Link and processing delays in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayConfig {
    pub association_ms: f64,
    pub dissociation_ms: f64,
    pub control_air_ms: f64,
    pub control_backhaul_ms: f64,
    /// Added once per control message at the receiving agent.
    pub processing_ms: f64,
    pub data_air_ms: f64,
    pub data_backhaul_ms: f64,
    pub scan_dwell_ms: f64,
    /// Sampling period of the invariant monitor.
    pub monitor_interval_ms: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig {
            association_ms: 15.0,
            dissociation_ms: 8.0,
            control_air_ms: 2.0,
            control_backhaul_ms: 3.0,
            processing_ms: 2.0,
            data_air_ms: 1.0,
            data_backhaul_ms: 2.0,
            scan_dwell_ms: 10.0,
            monitor_interval_ms: 10.0,
        }
    }
}

impl DelayConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("association_ms", self.association_ms),
            ("dissociation_ms", self.dissociation_ms),
            ("control_air_ms", self.control_air_ms),
            ("control_backhaul_ms", self.control_backhaul_ms),
            ("processing_ms", self.processing_ms),
            ("data_air_ms", self.data_air_ms),
            ("data_backhaul_ms", self.data_backhaul_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(
                    format!("delays.{name}"),
                    "must be a non-negative number",
                ));
            }
        }
        for (name, v) in [
            ("scan_dwell_ms", self.scan_dwell_ms),
            ("monitor_interval_ms", self.monitor_interval_ms),
        ] {
            if !(millis(v) > Duration::ZERO && v.is_finite()) {
                return Err(invalid(format!("delays.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    /// Piecewise-linear path; the node parks at the last point.
    pub waypoints: Vec<Position>,
    pub speed_kmph: f64,
}

impl Default for MobilityConfig {
    /// Back and forth through the overlap zone between the two edge APs.
    fn default() -> Self {
        let lo = Position(200.0, 0.0);
        let hi = Position(400.0, 0.0);
        MobilityConfig {
            waypoints: vec![lo, hi, lo, hi, lo, hi, lo],
            speed_kmph: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficProfile {
    pub packet_count: u64,
    pub interval_ms: f64,
    pub reply_timeout_ms: f64,
    pub payload: String,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        TrafficProfile {
            packet_count: 10_000,
            interval_ms: 10.0,
            reply_timeout_ms: 500.0,
            payload: "echo".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: TopologyConfig,
    pub propagation: PropagationParams,
    pub delays: DelayConfig,
    pub handoff: HandoffParams,
    pub mobility: MobilityConfig,
    pub traffic: TrafficProfile,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            topology: TopologyConfig::default(),
            propagation: PropagationParams::default(),
            delays: DelayConfig::default(),
            handoff: HandoffParams::default(),
            mobility: MobilityConfig::default(),
            traffic: TrafficProfile::default(),
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// End of the simulated window: last send plus one reply timeout.
    pub fn duration(&self) -> Duration {
        let last = self.traffic.packet_count.saturating_sub(1);
        millis(self.traffic.interval_ms) * last as u32 + millis(self.traffic.reply_timeout_ms)
    }

    pub fn validate(&self) -> Result<Topology, ConfigError> {
        self.propagation
            .validate()
            .map_err(|r| invalid(field_of(&r, "propagation"), r))?;
        self.handoff
            .validate()
            .map_err(|r| invalid(field_of(&r, "handoff"), r))?;
        self.delays.validate()?;

        let m = &self.mobility;
        if m.waypoints.is_empty() {
            return Err(invalid(
                "mobility.waypoints",
                "at least one waypoint is required",
            ));
        }
        if !(m.speed_kmph > 0.0 && m.speed_kmph.is_finite()) {
            return Err(invalid("mobility.speed_kmph", "must be positive"));
        }
        let t = &self.traffic;
        if t.packet_count == 0 || t.packet_count > u64::from(u32::MAX) {
            return Err(invalid(
                "traffic.packet_count",
                "must be between 1 and 2^32 - 1",
            ));
        }
        if !(millis(t.interval_ms) > Duration::ZERO) {
            return Err(invalid("traffic.interval_ms", "must be positive"));
        }
        if !(t.reply_timeout_ms >= 0.0 && t.reply_timeout_ms.is_finite()) {
            return Err(invalid(
                "traffic.reply_timeout_ms",
                "must be a non-negative number",
            ));
        }
        Topology::resolve(&self.topology, &self.propagation.channels)
    }
}

/// Validation messages from nested sections start with the dotted field path.
fn field_of(reason: &str, section: &str) -> String {
    reason
        .split_whitespace()
        .next()
        .filter(|w| w.starts_with(section))
        .unwrap_or(section)
        .to_string()
}

/// Validated topology with static backhaul routing.
///
/// Node ids: the gateway is 0, AP `i` is `i + 1`, the mobile node follows
/// the last AP.
#[derive(Clone, Debug)]
pub struct Topology {
    pub gateway: GatewayConfig,
    pub aps: Vec<ApConfig>,
    pub mobile_name: String,
    pub vip: Ipv4Addr,
    /// `next_hop[a][b]`: neighbour of `a` on a shortest path to `b`.
    next_hop: Vec<Vec<Option<usize>>>,
    hops: Vec<Vec<Option<u32>>>,
}

impl Topology {
    pub fn resolve(cfg: &TopologyConfig, channels: &[u8]) -> Result<Topology, ConfigError> {
        let gateway = cfg
            .gateway
            .clone()
            .ok_or_else(|| invalid("topology.gateway", "a gateway is required"))?;
        if cfg.aps.len() > 250 {
            return Err(invalid("topology.aps", "at most 250 APs are supported"));
        }
        if !cfg.aps.iter().any(|a| a.role == ApRole::Edge) {
            return Err(invalid("topology.aps", "at least one edge AP is required"));
        }
        if cfg.mobile_name.is_empty() {
            return Err(invalid("topology.mobile_name", "must not be empty"));
        }

        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        index.insert(&gateway.hostname, 0);
        for (i, ap) in cfg.aps.iter().enumerate() {
            if index.insert(&ap.hostname, i + 1).is_some() || ap.hostname == cfg.mobile_name {
                return Err(invalid(
                    format!("topology.aps[{i}].hostname"),
                    format!("duplicate hostname '{}'", ap.hostname),
                ));
            }
            if ap.role == ApRole::Edge && !channels.contains(&ap.channel) {
                return Err(invalid(
                    format!("topology.aps[{i}].channel"),
                    format!("channel {} is not in propagation.channels", ap.channel),
                ));
            }
        }

        let n = cfg.aps.len() + 1;
        let mut adj = vec![BTreeSet::new(); n];
        let mut link = |a: usize, name: &str, field: String| -> Result<(), ConfigError> {
            let b = *index
                .get(name)
                .ok_or_else(|| invalid(field.clone(), format!("unknown link target '{name}'")))?;
            if a == b {
                return Err(invalid(field, "a node cannot link to itself"));
            }
            adj[a].insert(b);
            adj[b].insert(a);
            Ok(())
        };
        for name in &gateway.links {
            link(0, name, "topology.gateway.links".into())?;
        }
        for (i, ap) in cfg.aps.iter().enumerate() {
            for name in &ap.links {
                link(i + 1, name, format!("topology.aps[{i}].links"))?;
            }
        }

        let mut next_hop = vec![vec![None; n]; n];
        let mut hops = vec![vec![None; n]; n];
        for (dst, (nh_col, hop_col)) in bfs_all(&adj).into_iter().enumerate() {
            for src in 0..n {
                next_hop[src][dst] = nh_col[src];
                hops[src][dst] = hop_col[src];
            }
        }
        for (i, ap) in cfg.aps.iter().enumerate() {
            if ap.role == ApRole::Edge && hops[i + 1][0].is_none() {
                return Err(invalid(
                    format!("topology.aps[{i}].links"),
                    format!(
                        "edge AP '{}' has no backhaul path to the gateway",
                        ap.hostname
                    ),
                ));
            }
        }

        Ok(Topology {
            gateway,
            aps: cfg.aps.clone(),
            mobile_name: cfg.mobile_name.clone(),
            vip: cfg.vip,
            next_hop,
            hops,
        })
    }

    pub fn gateway_id(&self) -> NodeId {
        NodeId(0)
    }

    pub fn ap_id(&self, index: usize) -> NodeId {
        NodeId(index as u32 + 1)
    }

    pub fn mobile_id(&self) -> NodeId {
        NodeId(self.aps.len() as u32 + 1)
    }

    pub fn gateway_ip(&self) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 0, 1)
    }

    pub fn ap_ip(&self, index: usize) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 1, index as u8 + 1)
    }

    /// Infrastructure node ids reachable from `from`, with the next hop.
    pub fn next_hop(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        self.next_hop
            .get(from.0 as usize)?
            .get(to.0 as usize)?
            .map(|i| NodeId(i as u32))
    }

    pub fn hops(&self, from: NodeId, to: NodeId) -> Option<u32> {
        *self.hops.get(from.0 as usize)?.get(to.0 as usize)?
    }
}

/// For every destination, each node's next hop toward it and hop count.
#[allow(clippy::type_complexity)]
fn bfs_all(adj: &[BTreeSet<usize>]) -> Vec<(Vec<Option<usize>>, Vec<Option<u32>>)> {
    (0..adj.len())
        .map(|dst| {
            let mut nh = vec![None; adj.len()];
            let mut dist = vec![None; adj.len()];
            dist[dst] = Some(0);
            let mut queue = VecDeque::from([dst]);
            while let Some(u) = queue.pop_front() {
                let d = dist[u].unwrap_or(0);
                for &v in &adj[u] {
                    if dist[v].is_none() {
                        dist[v] = Some(d + 1);
                        nh[v] = Some(u);
                        queue.push_back(v);
                    }
                }
            }
            (nh, dist)
        })
        .collect()
}
