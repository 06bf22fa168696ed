//! Proximity trend from smoothed Link Quality, and the bitrate controller it drives.
//!
//! Only LQ feeds the estimator; RSSI is pinned by power control over most of
//! the usable range and says nothing about distance. Rising LQ means the sink
//! is getting closer, falling LQ means it is moving away.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linkmgr::LinkMetricSample;
use crate::streaming::{StreamConfig, StreamEndpoints, StreamError};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdaptationError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("session is not streaming and no warning is raised")]
    NotCheckpointable,
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("checkpoint encoding: {0}")]
    Encoding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Trend {
    Approaching,
    Receding,
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProximityEstimate {
    pub smoothed_lq: f64,
    pub trend: Trend,
    /// Samples currently in the smoothing window.
    pub confidence: usize,
}

/// Controller parameters.
///
/// Thresholds are given per boundary between adjacent rungs: index `b`
/// separates rung `b` from rung `b + 1`. The controller climbs across
/// boundary `b` when smoothed LQ reaches `up_thresholds[b]` and falls back
/// when it drops to `down_thresholds[b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub window: usize,
    pub deadband: f64,
    pub up_thresholds: Vec<f64>,
    pub down_thresholds: Vec<f64>,
    pub decision_interval_ms: u64,
    pub warn_lq: f64,
    pub warn_windows: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            window: 25,
            deadband: 4.0,
            up_thresholds: vec![125.0, 150.0, 175.0, 200.0, 225.0],
            down_thresholds: vec![110.0, 135.0, 160.0, 185.0, 210.0],
            decision_interval_ms: 500,
            warn_lq: 120.0,
            warn_windows: 4,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self, rungs: usize) -> Result<(), AdaptationError> {
        let bad = |m: &str| Err(AdaptationError::InvalidConfig(m.to_string()));
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if !(self.deadband >= 0.0) {
            return bad("deadband must be >= 0");
        }
        if self.decision_interval_ms == 0 {
            return bad("decision_interval_ms must be > 0");
        }
        if self.warn_windows == 0 {
            return bad("warn_windows must be >= 1");
        }
        let boundaries = rungs.saturating_sub(1);
        if self.up_thresholds.len() != boundaries || self.down_thresholds.len() != boundaries {
            return Err(AdaptationError::InvalidConfig(format!(
                "need {boundaries} up and down thresholds for {rungs} rungs, got {} and {}",
                self.up_thresholds.len(),
                self.down_thresholds.len()
            )));
        }
        for (b, (&up, &down)) in self.up_thresholds.iter().zip(&self.down_thresholds).enumerate() {
            if !(down < up) {
                return Err(AdaptationError::InvalidConfig(format!(
                    "boundary {b}: down threshold {down} must be below up threshold {up}"
                )));
            }
        }
        if self.up_thresholds.windows(2).any(|w| w[0] >= w[1])
            || self.down_thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("thresholds must increase with the rung");
        }
        Ok(())
    }

    pub fn decision_interval(&self) -> SimTime {
        SimTime::from_millis(self.decision_interval_ms)
    }
}

/// Sliding mean over the last `window` LQ readings. Sums are integer, so the
/// mean is exact.
#[derive(Debug, Clone)]
pub struct LqSmoother {
    values: VecDeque<u8>,
    window: usize,
    sum: u64,
}

impl LqSmoother {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self {
            values: VecDeque::with_capacity(window),
            window,
            sum: 0,
        }
    }

    pub fn push(&mut self, lq: u8) -> f64 {
        if self.values.len() == self.window {
            self.sum -= self.values.pop_front().unwrap_or(0) as u64;
        }
        self.values.push_back(lq);
        self.sum += lq as u64;
        self.mean().unwrap_or(0.0)
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.sum as f64 / self.values.len() as f64)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn classify(delta: f64, deadband: f64) -> Trend {
    if delta > deadband {
        Trend::Approaching
    } else if delta < -deadband {
        Trend::Receding
    } else {
        Trend::Stationary
    }
}

/// Smoothed LQ over the last `cfg.window` samples; the trend compares it with
/// the smoothed value at the previous decision. `None` for an empty slice.
pub fn estimate_proximity(
    samples: &[LinkMetricSample],
    previous_smoothed: Option<f64>,
    cfg: &ControllerConfig,
) -> Option<ProximityEstimate> {
    if samples.is_empty() {
        return None;
    }
    let tail = &samples[samples.len().saturating_sub(cfg.window.max(1))..];
    let smoothed = tail.iter().map(|s| s.lq.value() as f64).sum::<f64>() / tail.len() as f64;
    Some(ProximityEstimate {
        smoothed_lq: smoothed,
        trend: previous_smoothed.map_or(Trend::Stationary, |p| classify(smoothed - p, cfg.deadband)),
        confidence: tail.len(),
    })
}

/// One decision: at most one rung up or down.
pub fn select_bitrate(estimate: &ProximityEstimate, current_rung: usize, cfg: &ControllerConfig) -> usize {
    let top = cfg.up_thresholds.len();
    let current = current_rung.min(top);
    if current < top && estimate.smoothed_lq >= cfg.up_thresholds[current] {
        current + 1
    } else if current > 0 && estimate.smoothed_lq <= cfg.down_thresholds[current - 1] {
        current - 1
    } else {
        current
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Warning {
    None,
    Warning,
}

fn window_is_bad(smoothed_lq: f64, sample: &LinkMetricSample, cfg: &ControllerConfig) -> bool {
    smoothed_lq < cfg.warn_lq || sample.delivery_ratio() == Some(0.0)
}

/// Stateless form: looks at the last `warn_windows` samples, each judged with
/// the smoothed LQ as of that sample.
pub fn check_disconnection_warning(samples: &[LinkMetricSample], cfg: &ControllerConfig) -> Warning {
    if samples.len() < cfg.warn_windows {
        return Warning::None;
    }
    let first = samples.len() - cfg.warn_windows;
    let mut smoother = LqSmoother::new(cfg.window);
    let mut bad = 0;
    for (i, s) in samples.iter().enumerate() {
        let m = smoother.push(s.lq.value());
        if i >= first && window_is_bad(m, s, cfg) {
            bad += 1;
        }
    }
    if bad == cfg.warn_windows {
        Warning::Warning
    } else {
        Warning::None
    }
}

/// Counts consecutive bad sample windows.
#[derive(Debug, Clone, Default)]
pub struct DisconnectionMonitor {
    consecutive: usize,
}

impl DisconnectionMonitor {
    pub fn update(&mut self, smoothed_lq: f64, sample: &LinkMetricSample, cfg: &ControllerConfig) -> Warning {
        if window_is_bad(smoothed_lq, sample, cfg) {
            self.consecutive += 1;
        } else {
            self.consecutive = 0;
        }
        if self.consecutive >= cfg.warn_windows {
            Warning::Warning
        } else {
            Warning::None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub estimate: ProximityEstimate,
    pub rung: usize,
    pub changed: bool,
}

/// Stateful controller fed one sample per metric window.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    smoother: LqSmoother,
    previous_smoothed: Option<f64>,
    rung: usize,
    monitor: DisconnectionMonitor,
    warning: Warning,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, rungs: usize, initial_rung: usize) -> Result<Self, AdaptationError> {
        cfg.validate(rungs)?;
        if initial_rung >= rungs {
            return Err(AdaptationError::InvalidConfig("initial rung past the ladder".into()));
        }
        Ok(Self {
            smoother: LqSmoother::new(cfg.window),
            cfg,
            previous_smoothed: None,
            rung: initial_rung,
            monitor: DisconnectionMonitor::default(),
            warning: Warning::None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn rung(&self) -> usize {
        self.rung
    }

    pub fn warning(&self) -> Warning {
        self.warning
    }

    pub fn smoothed_lq(&self) -> Option<f64> {
        self.smoother.mean()
    }

    pub fn on_sample(&mut self, sample: &LinkMetricSample) -> Warning {
        let m = self.smoother.push(sample.lq.value());
        self.warning = self.monitor.update(m, sample, &self.cfg);
        self.warning
    }

    /// `None` until the first sample arrives.
    pub fn decide(&mut self) -> Option<Decision> {
        let smoothed = self.smoother.mean()?;
        let estimate = ProximityEstimate {
            smoothed_lq: smoothed,
            trend: self
                .previous_smoothed
                .map_or(Trend::Stationary, |p| classify(smoothed - p, self.cfg.deadband)),
            confidence: self.smoother.len(),
        };
        self.previous_smoothed = Some(smoothed);
        let next = select_bitrate(&estimate, self.rung, &self.cfg);
        let changed = next != self.rung;
        self.rung = next;
        Some(Decision {
            estimate,
            rung: next,
            changed,
        })
    }
}

/// Enough to pick playback back up where it stopped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SavedSession {
    pub position_ms: u64,
    pub rung: usize,
    pub bitrate_bps: u32,
    pub next_seq: u64,
}

impl SavedSession {
    pub fn to_json(&self) -> Result<String, AdaptationError> {
        serde_json::to_string(self).map_err(|e| AdaptationError::Encoding(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, AdaptationError> {
        serde_json::from_str(s).map_err(|e| AdaptationError::Encoding(e.to_string()))
    }

    /// Re-establishes a STREAMING session at the saved offset; the first frame
    /// is due at `now`.
    pub fn resume(&self, cfg: &StreamConfig, now: SimTime) -> Result<StreamEndpoints, AdaptationError> {
        Ok(StreamEndpoints::resume(cfg, self.bitrate_bps, self.next_seq, now)?)
    }
}

pub fn session_checkpoint(session: &StreamEndpoints, warning: Warning) -> Result<SavedSession, AdaptationError> {
    let (Some(bitrate), Some(rung)) = (session.bitrate(), session.rung()) else {
        return Err(AdaptationError::NotCheckpointable);
    };
    if !session.is_streaming() && warning != Warning::Warning {
        return Err(AdaptationError::NotCheckpointable);
    }
    Ok(SavedSession {
        position_ms: session.position_ms(),
        rung,
        bitrate_bps: bitrate,
        next_seq: session.next_seq(),
    })
}
