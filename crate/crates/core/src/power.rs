//! Sink power draw as a function of audio bitrate.
//!
//! Three costs scale with the stream: receiving it over the radio, decoding
//! it, and driving the analog output. The first two grow with bitrate, the
//! last is flat.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("invalid power model: {0}")]
    InvalidModel(&'static str),
    #[error("timestamps must increase: row {index} at {time_s} s follows {previous_s} s")]
    NonMonotoneTime { index: usize, time_s: f64, previous_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerModel {
    pub p_receive_base_mw: f64,
    pub alpha_receive_mw_per_kbps: f64,
    pub p_decode_base_mw: f64,
    pub alpha_decode_mw_per_kbps: f64,
    pub p_output_mw: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            p_receive_base_mw: 30.0,
            alpha_receive_mw_per_kbps: 0.10,
            p_decode_base_mw: 20.0,
            alpha_decode_mw_per_kbps: 0.15,
            p_output_mw: 30.0,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), PowerError> {
        let all = [
            self.p_receive_base_mw,
            self.alpha_receive_mw_per_kbps,
            self.p_decode_base_mw,
            self.alpha_decode_mw_per_kbps,
            self.p_output_mw,
        ];
        if all.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(PowerError::InvalidModel("coefficients must be finite and >= 0"));
        }
        if self.alpha_receive_mw_per_kbps + self.alpha_decode_mw_per_kbps <= 0.0 {
            return Err(PowerError::InvalidModel("at least one per-kbps slope must be > 0"));
        }
        Ok(())
    }

    pub fn base_mw(&self) -> f64 {
        self.p_receive_base_mw + self.p_decode_base_mw + self.p_output_mw
    }

    pub fn slope_mw_per_kbps(&self) -> f64 {
        self.alpha_receive_mw_per_kbps + self.alpha_decode_mw_per_kbps
    }
}

pub fn power_mw(bitrate_bps: f64, model: &PowerModel) -> f64 {
    model.base_mw() + model.slope_mw_per_kbps() * bitrate_bps.max(0.0) / 1000.0
}

/// Energy of a (time_s, bitrate_bps) series, holding each row's bitrate until
/// the next row. The last row closes the series and contributes nothing.
pub fn scenario_energy_j(rows: &[(f64, f64)], model: &PowerModel) -> Result<f64, PowerError> {
    for (i, w) in rows.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return Err(PowerError::NonMonotoneTime {
                index: i + 1,
                time_s: w[1].0,
                previous_s: w[0].0,
            });
        }
    }
    Ok(rows
        .windows(2)
        .map(|w| power_mw(w[0].1, model) / 1000.0 * (w[1].0 - w[0].0))
        .sum())
}
