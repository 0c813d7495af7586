use serde::{Deserialize, Serialize};

/// Planar position in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position(pub f64, pub f64);

impl Position {
    pub fn distance(self, other: Position) -> f64 {
        (self.0 - other.0).hypot(self.1 - other.1)
    }
}

/// Radio channel parameters: log-distance path loss with optional
/// log-normal shadowing, the scan channel plan, and per-class loss rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationParams {
    pub tx_power_dbm: f64,
    /// Path loss at the 1 m reference distance.
    pub ref_loss_db: f64,
    pub path_loss_exponent: f64,
    pub noise_floor_dbm: f64,
    pub shadowing_sigma_db: f64,
    pub rx_sensitivity_dbm: f64,
    /// Channels swept by the scanning radio, in order.
    pub channels: Vec<u8>,
    /// Loss probability for broadcast control frames.
    pub broadcast_loss: f64,
    /// Loss probability for unicast control messages.
    pub unicast_loss: f64,
    /// Per-hop loss probability for data packets.
    pub data_loss: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            tx_power_dbm: 20.0,
            ref_loss_db: 40.0,
            path_loss_exponent: 3.0,
            noise_floor_dbm: -95.0,
            shadowing_sigma_db: 0.0,
            rx_sensitivity_dbm: -90.0,
            channels: (1..=11).collect(),
            broadcast_loss: 0.0,
            unicast_loss: 0.0,
            data_loss: 0.0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.path_loss_exponent.is_nan() || self.path_loss_exponent < 2.0 {
            return Err(format!(
                "propagation.path_loss_exponent must be >= 2 (got {})",
                self.path_loss_exponent
            ));
        }
        if self.rx_sensitivity_dbm.is_nan()
            || self.rx_sensitivity_dbm >= self.tx_power_dbm - self.ref_loss_db
        {
            return Err(format!(
                "propagation.rx_sensitivity_dbm must be below tx_power_dbm - ref_loss_db ({} >= {})",
                self.rx_sensitivity_dbm,
                self.tx_power_dbm - self.ref_loss_db
            ));
        }
        if self.shadowing_sigma_db.is_nan() || self.shadowing_sigma_db < 0.0 {
            return Err("propagation.shadowing_sigma_db must be >= 0".into());
        }
        if self.channels.is_empty() {
            return Err("propagation.channels must not be empty".into());
        }
        for (name, p) in [
            ("broadcast_loss", self.broadcast_loss),
            ("unicast_loss", self.unicast_loss),
            ("data_loss", self.data_loss),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!(
                    "propagation.{name} must be within [0, 1] (got {p})"
                ));
            }
        }
        Ok(())
    }

    /// Distance at which the mean received power equals `rssi_dbm`.
    pub fn range_for(&self, rssi_dbm: f64) -> f64 {
        let budget = self.tx_power_dbm - self.ref_loss_db - rssi_dbm;
        10f64
            .powf(budget / (10.0 * self.path_loss_exponent))
            .max(1.0)
    }

    pub fn coverage_radius(&self) -> f64 {
        self.range_for(self.rx_sensitivity_dbm)
    }
}

/// Received power in dBm. Distances below the 1 m reference are clamped.
pub fn compute_rssi(
    tx: Position,
    rx: Position,
    params: &PropagationParams,
    shadowing_db: f64,
) -> f64 {
    let d = tx.distance(rx).max(1.0);
    params.tx_power_dbm - params.ref_loss_db - 10.0 * params.path_loss_exponent * d.log10()
        + shadowing_db
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkQuality {
    pub rssi_dbm: f64,
    pub snr_db: f64,
    /// Smoothed score; equal to the raw RSSI for a single sample.
    pub lq_score: f64,
}

impl LinkQuality {
    pub fn sample(rssi_dbm: f64, noise_floor_dbm: f64) -> Self {
        LinkQuality {
            rssi_dbm,
            snr_db: rssi_dbm - noise_floor_dbm,
            lq_score: rssi_dbm,
        }
    }
}
