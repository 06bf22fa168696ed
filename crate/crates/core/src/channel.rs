//! Radio channel: log-distance path loss with optional log-normal shadowing,
//! and the SNR to bit-error-rate curve used by every receiver in the piconet.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest BER the receiver model will report.
pub const BER_FLOOR: f64 = 1e-8;
/// A receiver that only guesses gets half the bits right.
pub const BER_CEILING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("distance {distance_m} m is below the reference distance {ref_distance_m} m")]
    BelowReference { distance_m: f64, ref_distance_m: f64 },
    #[error("invalid channel config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub ref_distance_m: f64,
    /// Path loss at `ref_distance_m`.
    pub ref_loss_db: f64,
    pub path_loss_exponent: f64,
    pub shadowing_sigma_db: f64,
    pub noise_floor_dbm: f64,
    /// Seed for the shadowing stream. Mixed with the scenario seed by the harness.
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            ref_distance_m: 1.0,
            ref_loss_db: 40.0,
            path_loss_exponent: 2.7,
            shadowing_sigma_db: 0.0,
            noise_floor_dbm: -72.0,
            rng_seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.ref_distance_m > 0.0) || !self.ref_distance_m.is_finite() {
            return Err(ChannelError::InvalidConfig("ref_distance_m must be > 0"));
        }
        if !(self.path_loss_exponent > 0.0) || !self.path_loss_exponent.is_finite() {
            return Err(ChannelError::InvalidConfig("path_loss_exponent must be > 0"));
        }
        if !(self.shadowing_sigma_db >= 0.0) || !self.shadowing_sigma_db.is_finite() {
            return Err(ChannelError::InvalidConfig("shadowing_sigma_db must be >= 0"));
        }
        if !self.ref_loss_db.is_finite() || !self.noise_floor_dbm.is_finite() {
            return Err(ChannelError::InvalidConfig("ref_loss_db and noise_floor_dbm must be finite"));
        }
        Ok(())
    }

    /// Distance at which the noiseless path loss equals `loss_db`.
    pub fn distance_for_loss(&self, loss_db: f64) -> f64 {
        self.ref_distance_m * 10f64.powf((loss_db - self.ref_loss_db) / (10.0 * self.path_loss_exponent))
    }
}

/// One received-power observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxSample {
    pub rx_power_dbm: f64,
    pub snr_db: f64,
    pub ber: f64,
}

/// Log-distance path loss plus an additive noise term (dB).
pub fn path_loss_db(distance_m: f64, cfg: &ChannelConfig, noise_db: f64) -> Result<f64, ChannelError> {
    if !(distance_m >= cfg.ref_distance_m) {
        return Err(ChannelError::BelowReference {
            distance_m,
            ref_distance_m: cfg.ref_distance_m,
        });
    }
    Ok(cfg.ref_loss_db + 10.0 * cfg.path_loss_exponent * (distance_m / cfg.ref_distance_m).log10() + noise_db)
}

/// Noncoherent binary FSK: `0.5 * exp(-snr / 2)` on the linear SNR, clamped to
/// `[BER_FLOOR, BER_CEILING]`.
pub fn ber_from_snr(snr_db: f64) -> f64 {
    if snr_db.is_nan() {
        return BER_CEILING;
    }
    let snr = 10f64.powf(snr_db / 10.0);
    (0.5 * (-snr / 2.0).exp()).clamp(BER_FLOOR, BER_CEILING)
}

fn sample_from_rx(rx_power_dbm: f64, cfg: &ChannelConfig) -> RxSample {
    let snr_db = rx_power_dbm - cfg.noise_floor_dbm;
    RxSample {
        rx_power_dbm,
        snr_db,
        ber: ber_from_snr(snr_db),
    }
}

/// Received sample with an explicit shadowing term. `rx_sample` draws the term itself.
pub fn rx_sample_with_noise(
    tx_power_dbm: f64,
    distance_m: f64,
    cfg: &ChannelConfig,
    noise_db: f64,
) -> Result<RxSample, ChannelError> {
    let loss = path_loss_db(distance_m, cfg, noise_db)?;
    Ok(sample_from_rx(tx_power_dbm - loss, cfg))
}

/// A channel instance owning its shadowing RNG stream.
#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
    shadowing: Option<Normal<f64>>,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Result<Self, ChannelError> {
        cfg.validate()?;
        let shadowing = if cfg.shadowing_sigma_db > 0.0 {
            Some(Normal::new(0.0, cfg.shadowing_sigma_db).expect("sigma validated"))
        } else {
            None
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
            shadowing,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    /// Draws one shadowing term (0 when sigma is 0) and returns the received sample.
    pub fn rx_sample(&mut self, tx_power_dbm: f64, distance_m: f64) -> Result<RxSample, ChannelError> {
        // Reject before drawing so a bad call does not advance the stream.
        path_loss_db(distance_m, &self.cfg, 0.0)?;
        let noise = match &self.shadowing {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        };
        rx_sample_with_noise(tx_power_dbm, distance_m, &self.cfg, noise)
    }

    /// The noiseless (median) sample; does not touch the RNG.
    pub fn median_sample(&self, tx_power_dbm: f64, distance_m: f64) -> Result<RxSample, ChannelError> {
        rx_sample_with_noise(tx_power_dbm, distance_m, &self.cfg, 0.0)
    }
}
