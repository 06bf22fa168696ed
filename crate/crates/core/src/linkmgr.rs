//! Link Manager view of an ACL connection.
//!
//! RSSI is reported relative to the golden receiver power range (GRPR): zero
//! inside the range, a signed whole-dB offset outside it. Link quality is an
//! 8-bit figure derived from the running average BER of received packets. The
//! power-control loop asks the peer to step its transmit power toward the GRPR,
//! which is what pins connection RSSI at zero over most of the usable range.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelConfig, ChannelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("GRPR lower bound {lower} dBm must be below upper bound {upper} dBm")]
    InvalidGrpr { lower: f64, upper: f64 },
    #[error("average BER {0} outside [0, 0.5]")]
    BerOutOfRange(f64),
    #[error("invalid link manager config: {0}")]
    InvalidConfig(&'static str),
}

/// Golden receiver power range, dBm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grpr {
    lower_dbm: f64,
    upper_dbm: f64,
}

impl Grpr {
    pub fn new(lower_dbm: f64, upper_dbm: f64) -> Result<Self, LinkError> {
        if !(lower_dbm < upper_dbm) {
            return Err(LinkError::InvalidGrpr {
                lower: lower_dbm,
                upper: upper_dbm,
            });
        }
        Ok(Self { lower_dbm, upper_dbm })
    }

    pub fn lower_dbm(&self) -> f64 {
        self.lower_dbm
    }

    pub fn upper_dbm(&self) -> f64 {
        self.upper_dbm
    }

    pub fn contains(&self, rx_power_dbm: f64) -> bool {
        (self.lower_dbm..=self.upper_dbm).contains(&rx_power_dbm)
    }
}

impl Default for Grpr {
    fn default() -> Self {
        Self {
            lower_dbm: -56.0,
            upper_dbm: -26.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rssi(i8);

impl Rssi {
    pub const fn new(value: i8) -> Self {
        Self(value)
    }

    pub const fn value(self) -> i8 {
        self.0
    }
}

impl fmt::Display for Rssi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Larger is better; 255 is a clean link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkQuality(u8);

impl LinkQuality {
    pub const MAX: LinkQuality = LinkQuality(255);
    pub const MIN: LinkQuality = LinkQuality(0);

    pub const fn new(value: u8) -> Self {
        Self(value)
    }

    pub const fn value(self) -> u8 {
        self.0
    }
}

impl fmt::Display for LinkQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// RSSI relative to the GRPR, rounded half away from zero and saturated to i8.
pub fn compute_rssi(rx_power_dbm: f64, grpr: &Grpr) -> Rssi {
    if rx_power_dbm.is_nan() {
        return Rssi(i8::MIN);
    }
    if grpr.contains(rx_power_dbm) {
        Rssi(0)
    } else if rx_power_dbm > grpr.upper_dbm {
        Rssi((rx_power_dbm - grpr.upper_dbm).round().clamp(1.0, 127.0) as i8)
    } else {
        Rssi((rx_power_dbm - grpr.lower_dbm).round().clamp(-128.0, -1.0) as i8)
    }
}

/// Log-linear BER to LQ map: 255 at or below `ber_lo`, 0 at or above `ber_hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqMapping {
    ber_lo: f64,
    ber_hi: f64,
}

impl LqMapping {
    pub fn new(ber_lo: f64, ber_hi: f64) -> Result<Self, LinkError> {
        if !(ber_lo > 0.0 && ber_lo < ber_hi && ber_hi <= 0.5) {
            return Err(LinkError::InvalidConfig("need 0 < ber_lo < ber_hi <= 0.5"));
        }
        Ok(Self { ber_lo, ber_hi })
    }

    pub fn ber_lo(&self) -> f64 {
        self.ber_lo
    }

    pub fn ber_hi(&self) -> f64 {
        self.ber_hi
    }

    pub fn lq(&self, avg_ber: f64) -> Result<LinkQuality, LinkError> {
        if !(0.0..=0.5).contains(&avg_ber) {
            return Err(LinkError::BerOutOfRange(avg_ber));
        }
        if avg_ber <= self.ber_lo {
            return Ok(LinkQuality::MAX);
        }
        if avg_ber >= self.ber_hi {
            return Ok(LinkQuality::MIN);
        }
        let span = self.ber_hi.log10() - self.ber_lo.log10();
        let frac = (self.ber_hi.log10() - avg_ber.log10()) / span;
        Ok(LinkQuality((255.0 * frac).round().clamp(0.0, 255.0) as u8))
    }

    /// Average BER that maps to a given (real-valued) LQ level.
    pub fn ber_for_lq(&self, lq: f64) -> f64 {
        let span = self.ber_hi.log10() - self.ber_lo.log10();
        10f64.powf(self.ber_hi.log10() - lq / 255.0 * span)
    }
}

impl Default for LqMapping {
    fn default() -> Self {
        Self {
            ber_lo: 1e-6,
            ber_hi: 1e-1,
        }
    }
}

/// `compute_lq` with the default mapping.
pub fn compute_lq(avg_ber: f64) -> Result<LinkQuality, LinkError> {
    LqMapping::default().lq(avg_ber)
}

/// Sliding window over the last `capacity` per-packet BER values.
#[derive(Debug, Clone)]
pub struct BerWindow {
    values: VecDeque<f64>,
    capacity: usize,
    sum: f64,
    since_resync: usize,
}

impl BerWindow {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            values: VecDeque::with_capacity(capacity),
            capacity,
            sum: 0.0,
            since_resync: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Pushes one packet's BER and returns the updated mean.
    pub fn update(&mut self, ber: f64) -> f64 {
        if self.values.len() == self.capacity {
            if let Some(old) = self.values.pop_front() {
                self.sum -= old;
            }
        }
        self.values.push_back(ber);
        self.sum += ber;
        self.since_resync += 1;
        // Running sums drift; rebuild once per full turn of the window.
        if self.since_resync >= self.capacity {
            self.sum = self.values.iter().sum();
            self.since_resync = 0;
        }
        self.mean().unwrap_or(0.0)
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some((self.sum / self.values.len() as f64).clamp(0.0, 0.5))
        }
    }
}

/// Free-function form of [`BerWindow::update`].
pub fn update_average_ber(window: &mut BerWindow, new_ber: f64) -> f64 {
    window.update(new_ber)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerControlState {
    pub tx_power_dbm: f64,
    pub min_tx_dbm: f64,
    pub max_tx_dbm: f64,
    pub step_db: f64,
    pub enabled: bool,
}

impl PowerControlState {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.step_db > 0.0) {
            return Err(LinkError::InvalidConfig("power step must be > 0"));
        }
        if !(self.min_tx_dbm <= self.tx_power_dbm && self.tx_power_dbm <= self.max_tx_dbm) {
            return Err(LinkError::InvalidConfig("tx power outside [min_tx, max_tx]"));
        }
        Ok(())
    }
}

/// One Link Manager power request in response to the peer's RSSI.
pub fn power_control_step(rssi: Rssi, state: PowerControlState) -> PowerControlState {
    if !state.enabled {
        return state;
    }
    let tx = match rssi.value() {
        v if v > 0 => (state.tx_power_dbm - state.step_db).max(state.min_tx_dbm),
        v if v < 0 => (state.tx_power_dbm + state.step_db).min(state.max_tx_dbm),
        _ => state.tx_power_dbm,
    };
    PowerControlState {
        tx_power_dbm: tx,
        ..state
    }
}

/// Result of running the power-control loop at a fixed distance with no shadowing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettledLoop {
    pub state: PowerControlState,
    pub rssi: Rssi,
    /// Steps that changed the TX power before the fixed point was reached.
    pub iterations: usize,
}

/// Iterates `power_control_step` on the noiseless channel until TX stops moving.
pub fn settle_power_control(
    distance_m: f64,
    channel: &ChannelConfig,
    grpr: &Grpr,
    mut state: PowerControlState,
    max_iterations: usize,
) -> Result<SettledLoop, ChannelError> {
    let mut iterations = 0;
    loop {
        let rx = channel::rx_sample_with_noise(state.tx_power_dbm, distance_m, channel, 0.0)?;
        let rssi = compute_rssi(rx.rx_power_dbm, grpr);
        let next = power_control_step(rssi, state);
        if next.tx_power_dbm == state.tx_power_dbm || iterations >= max_iterations {
            return Ok(SettledLoop { state, rssi, iterations });
        }
        state = next;
        iterations += 1;
    }
}

/// A host-visible reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkMetricSample {
    pub time_us: u64,
    pub rssi: Rssi,
    pub lq: LinkQuality,
    pub delivered: u32,
    pub attempted: u32,
}

impl LinkMetricSample {
    /// `None` when nothing was attempted in the sample window.
    pub fn delivery_ratio(&self) -> Option<f64> {
        (self.attempted > 0).then(|| self.delivered as f64 / self.attempted as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkManagerConfig {
    pub grpr_lower_dbm: f64,
    pub grpr_upper_dbm: f64,
    pub ber_lo: f64,
    pub ber_hi: f64,
    pub ber_window: usize,
    pub power_step_db: f64,
    pub power_interval_ms: u64,
    pub min_tx_dbm: f64,
    pub max_tx_dbm: f64,
}

impl Default for LinkManagerConfig {
    fn default() -> Self {
        Self {
            grpr_lower_dbm: -56.0,
            grpr_upper_dbm: -26.0,
            ber_lo: 1e-6,
            ber_hi: 1e-1,
            ber_window: 100,
            power_step_db: 2.0,
            power_interval_ms: 100,
            min_tx_dbm: -20.0,
            // Class II ceiling.
            max_tx_dbm: 4.0,
        }
    }
}

impl LinkManagerConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        self.grpr()?;
        self.lq_mapping()?;
        if self.ber_window == 0 {
            return Err(LinkError::InvalidConfig("ber_window must be >= 1"));
        }
        if self.power_interval_ms == 0 {
            return Err(LinkError::InvalidConfig("power_interval_ms must be > 0"));
        }
        self.initial_power_state(true).validate()
    }

    pub fn grpr(&self) -> Result<Grpr, LinkError> {
        Grpr::new(self.grpr_lower_dbm, self.grpr_upper_dbm)
    }

    pub fn lq_mapping(&self) -> Result<LqMapping, LinkError> {
        LqMapping::new(self.ber_lo, self.ber_hi)
    }

    /// Connections start at full power.
    pub fn initial_power_state(&self, enabled: bool) -> PowerControlState {
        PowerControlState {
            tx_power_dbm: self.max_tx_dbm,
            min_tx_dbm: self.min_tx_dbm,
            max_tx_dbm: self.max_tx_dbm,
            step_db: self.power_step_db,
            enabled,
        }
    }
}

/// Per-connection Link Manager state owned by the simulation loop.
#[derive(Debug, Clone)]
pub struct LinkManager {
    grpr: Grpr,
    mapping: LqMapping,
    window: BerWindow,
    power: PowerControlState,
}

impl LinkManager {
    pub fn new(cfg: &LinkManagerConfig, power_control: bool) -> Result<Self, LinkError> {
        cfg.validate()?;
        Ok(Self {
            grpr: cfg.grpr()?,
            mapping: cfg.lq_mapping()?,
            window: BerWindow::new(cfg.ber_window),
            power: cfg.initial_power_state(power_control),
        })
    }

    pub fn grpr(&self) -> &Grpr {
        &self.grpr
    }

    pub fn power(&self) -> &PowerControlState {
        &self.power
    }

    pub fn tx_power_dbm(&self) -> f64 {
        self.power.tx_power_dbm
    }

    pub fn rssi(&self, rx_power_dbm: f64) -> Rssi {
        compute_rssi(rx_power_dbm, &self.grpr)
    }

    /// Feeds one received packet's BER into the running average.
    pub fn record_packet(&mut self, ber: f64) {
        self.window.update(ber.clamp(0.0, 0.5));
    }

    pub fn average_ber(&self) -> Option<f64> {
        self.window.mean()
    }

    /// `None` until the first packet has been seen.
    pub fn link_quality(&self) -> Option<LinkQuality> {
        self.window
            .mean()
            .map(|b| self.mapping.lq(b).expect("window mean is clamped to [0, 0.5]"))
    }

    /// One power-control evaluation given the current RX power at the peer.
    pub fn power_control_tick(&mut self, rx_power_dbm: f64) -> Rssi {
        let rssi = self.rssi(rx_power_dbm);
        self.power = power_control_step(rssi, self.power);
        rssi
    }
}
