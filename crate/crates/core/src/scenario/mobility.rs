use crate::engine::SimTime;
use crate::net::Position;

/// Constant-speed traversal of a waypoint list, starting at t = 0.
#[derive(Clone, Debug)]
pub struct Trajectory {
    waypoints: Vec<Position>,
    /// Cumulative path length at each waypoint.
    cumulative: Vec<f64>,
    speed_mps: f64,
}

impl Trajectory {
    pub fn new(waypoints: &[Position], speed_kmph: f64) -> Self {
        let mut cumulative = Vec::with_capacity(waypoints.len());
        let mut total = 0.0;
        for (i, w) in waypoints.iter().enumerate() {
            if i > 0 {
                total += waypoints[i - 1].distance(*w);
            }
            cumulative.push(total);
        }
        Trajectory {
            waypoints: waypoints.to_vec(),
            cumulative,
            speed_mps: speed_kmph / 3.6,
        }
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn position_at(&self, t: SimTime) -> Position {
        let s = self.speed_mps * t.as_secs_f64();
        let i = self.cumulative.partition_point(|c| *c <= s);
        if i == 0 {
            return self.waypoints[0];
        }
        if i >= self.waypoints.len() {
            return self.waypoints[self.waypoints.len() - 1];
        }
        let (a, b) = (self.waypoints[i - 1], self.waypoints[i]);
        let seg = self.cumulative[i] - self.cumulative[i - 1];
        let f = (s - self.cumulative[i - 1]) / seg;
        Position(a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
    }
}
