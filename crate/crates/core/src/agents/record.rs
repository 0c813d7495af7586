use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    InProgress,
    Completed,
    Abandoned,
}

/// Timeline of one handoff attempt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandoffRecord {
    pub mn: String,
    pub old_ap: Option<String>,
    pub new_ap: String,
    pub t_trigger: SimTime,
    pub t_associated: Option<SimTime>,
    pub t_route_switched_gateway: Option<SimTime>,
    pub t_default_route_switched: Option<SimTime>,
    pub t_dissociated: Option<SimTime>,
    pub retries: u32,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abandon_reason: Option<String>,
}

impl HandoffRecord {
    pub fn started(mn: &str, old_ap: Option<String>, new_ap: String, t_trigger: SimTime) -> Self {
        HandoffRecord {
            mn: mn.to_string(),
            old_ap,
            new_ap,
            t_trigger,
            t_associated: None,
            t_route_switched_gateway: None,
            t_default_route_switched: None,
            t_dissociated: None,
            retries: 0,
            outcome: Outcome::InProgress,
            abandon_reason: None,
        }
    }

    /// Instant the handoff cycle ended: the later of the default-route switch
    /// and the old radio's dissociation.
    pub fn t_completed(&self) -> Option<SimTime> {
        match (self.t_default_route_switched, self.t_dissociated) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    /// Timestamps in protocol order for completed records.
    pub fn is_ordered(&self) -> bool {
        let steps = [
            Some(self.t_trigger),
            self.t_associated,
            self.t_route_switched_gateway,
            self.t_default_route_switched,
            self.t_dissociated,
        ];
        if steps.iter().any(Option::is_none) {
            return false;
        }
        steps.windows(2).all(|w| w[0] <= w[1])
    }

    /// Break-before-make order: the old link is released before the new
    /// association starts.
    pub fn is_ordered_break_first(&self) -> bool {
        let steps = [
            Some(self.t_trigger),
            self.t_dissociated,
            self.t_associated,
            self.t_route_switched_gateway,
            self.t_default_route_switched,
        ];
        if steps.iter().any(Option::is_none) {
            return false;
        }
        steps.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Trigger decision to end of the cycle; `None` unless completed.
pub fn handoff_latency(record: &HandoffRecord) -> Option<Duration> {
    if record.outcome != Outcome::Completed {
        return None;
    }
    Some(record.t_completed()? - record.t_trigger)
}

/// Association to default-route switch: the control exchange alone.
pub fn exchange_latency(record: &HandoffRecord) -> Option<Duration> {
    if record.outcome != Outcome::Completed {
        return None;
    }
    Some(record.t_default_route_switched? - record.t_associated?)
}
