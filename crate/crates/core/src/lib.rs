//! Deterministic discrete-event simulator for dual-radio make-before-break
//! handoff in multi-hop infrastructure-mode 802.11 networks.
//!
//! * [`engine`]: event queue, simulated clock, seeded random streams.
//! * [`net`]: radios, propagation, forwarding state and the control channel.
//! * [`agents`]: mobile-node, edge-AP and gateway handoff agents.
//! * [`scenario`]: configuration, topology, mobility and simulation runs.
//! * [`metrics`]: latency and loss statistics, CSV and JSON output.

pub mod agents;
pub mod engine;
pub mod metrics;
pub mod net;
pub mod scenario;
