//! Inquiry procedure timeline and connectionless (inquiry-response) RSSI.
//!
//! The inquirer hops every half slot. In a TX slot it sends on two
//! frequencies back to back, and in the following slot it listens on the same
//! two. A train covers 16 frequencies in 16 slots (10 ms), is repeated
//! `train_repetitions` times, then the inquirer switches to the other train.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Channel, ChannelError};
use crate::linkmgr::{compute_rssi, Grpr, Rssi};
use crate::time::{SimTime, SLOT};
use crate::transport::delivery_probability_bits;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InquiryError {
    #[error("invalid inquiry config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InquiryConfig {
    pub num_frequencies: u32,
    pub train_size: u32,
    pub hop_period_ns: u64,
    pub train_repetitions: u32,
    pub train_switches: u32,
    /// Length of an inquiry response (FHS) on air.
    pub response_bits: u32,
}

impl Default for InquiryConfig {
    fn default() -> Self {
        Self {
            num_frequencies: 32,
            train_size: 16,
            hop_period_ns: 312_500,
            train_repetitions: 256,
            train_switches: 4,
            response_bits: 366,
        }
    }
}

impl InquiryConfig {
    pub fn validate(&self) -> Result<(), InquiryError> {
        if self.train_size == 0 || !self.train_size.is_multiple_of(2) {
            return Err(InquiryError::InvalidConfig("train_size must be a positive even number"));
        }
        if self.num_frequencies != 2 * self.train_size {
            return Err(InquiryError::InvalidConfig("num_frequencies must be 2 * train_size"));
        }
        if 2 * self.hop_period_ns != SLOT.as_nanos() {
            return Err(InquiryError::InvalidConfig("hop period must be half a slot"));
        }
        if self.train_repetitions == 0 || self.train_switches == 0 {
            return Err(InquiryError::InvalidConfig("repetitions and switches must be >= 1"));
        }
        Ok(())
    }

    /// Duration of one pass through a train.
    pub fn train_duration(&self) -> SimTime {
        SLOT * self.train_size as u64
    }

    pub fn total_duration(&self) -> SimTime {
        self.train_duration() * (self.train_switches as u64 * self.train_repetitions as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Train {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HopKind {
    Tx,
    Listen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InquiryEvent {
    pub time: SimTime,
    pub kind: HopKind,
    pub frequency: u8,
    pub train: Train,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InquiryTimeline {
    pub events: Vec<InquiryEvent>,
    pub duration: SimTime,
}

impl InquiryTimeline {
    pub fn count(&self, kind: HopKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

/// Lazily walks the hop sequence.
pub fn timeline_events(cfg: &InquiryConfig) -> impl Iterator<Item = InquiryEvent> + '_ {
    let hop = SimTime::from_nanos(cfg.hop_period_ns);
    let passes = cfg.train_switches as u64 * cfg.train_repetitions as u64;
    let slots_per_pass = cfg.train_size as u64;
    (0..passes).flat_map(move |pass| {
        // Train A for the first block of repetitions, then B, and so on.
        let train = if (pass / cfg.train_repetitions as u64).is_multiple_of(2) {
            Train::A
        } else {
            Train::B
        };
        let base_freq = match train {
            Train::A => 0,
            Train::B => cfg.train_size,
        };
        let pass_start = cfg.train_duration() * pass;
        (0..slots_per_pass).flat_map(move |slot| {
            let kind = if slot % 2 == 0 { HopKind::Tx } else { HopKind::Listen };
            // A TX slot and the LISTEN slot after it cover the same pair.
            let pair = (slot / 2) as u32;
            let slot_start = pass_start + SLOT * slot;
            (0..2u32).map(move |half| InquiryEvent {
                time: slot_start + hop * half as u64,
                kind,
                frequency: (base_freq + 2 * pair + half) as u8,
                train,
            })
        })
    })
}

pub fn build_timeline(cfg: &InquiryConfig) -> Result<InquiryTimeline, InquiryError> {
    cfg.validate()?;
    Ok(InquiryTimeline {
        events: timeline_events(cfg).collect(),
        duration: cfg.total_duration(),
    })
}

/// One inquiry response heard by the inquirer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InquiryResponse {
    pub time: SimTime,
    pub rssi: Rssi,
    pub rx_power_dbm: f64,
}

/// Probability that a given LISTEN hop yields a delivered response at the
/// noiseless channel BER `ber`.
pub fn response_probability(cfg: &InquiryConfig, ber: f64) -> f64 {
    delivery_probability_bits(ber, cfg.response_bits as u64) / cfg.num_frequencies as f64
}

/// Runs one full inquiry against a scanner at `distance_m` transmitting at
/// `tx_power_dbm`. No power control applies: there is no connection yet.
///
/// An empty result means every response was missed or corrupted, i.e. the
/// device is out of range.
pub fn inquiry_rssi_scan<R: Rng + ?Sized>(
    distance_m: f64,
    tx_power_dbm: f64,
    cfg: &InquiryConfig,
    grpr: &Grpr,
    channel: &mut Channel,
    rng: &mut R,
) -> Result<Vec<InquiryResponse>, InquiryError> {
    cfg.validate()?;
    let match_p = 1.0 / cfg.num_frequencies as f64;
    let mut out = Vec::new();
    for ev in timeline_events(cfg).filter(|e| e.kind == HopKind::Listen) {
        if !rng.random_bool(match_p) {
            continue;
        }
        let rx = channel.rx_sample(tx_power_dbm, distance_m)?;
        let p = delivery_probability_bits(rx.ber, cfg.response_bits as u64);
        if rng.random_bool(p) {
            out.push(InquiryResponse {
                time: ev.time,
                rssi: compute_rssi(rx.rx_power_dbm, grpr),
                rx_power_dbm: rx.rx_power_dbm,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_timeline_lasts_ten_point_two_four_seconds() {
        let t = build_timeline(&InquiryConfig::default()).unwrap();
        assert_eq!(t.duration, SimTime::from_micros(10_240_000));
        assert_eq!(t.events.len(), 32_768);
        assert_eq!(t.count(HopKind::Tx), 16_384);
        assert_eq!(t.count(HopKind::Listen), 16_384);
        let last = t.events.last().unwrap();
        assert_eq!(last.time + SimTime::from_nanos(312_500), t.duration);
    }

    #[test]
    fn single_train_pass_is_ten_ms() {
        let cfg = InquiryConfig {
            train_repetitions: 1,
            train_switches: 1,
            ..Default::default()
        };
        let t = build_timeline(&cfg).unwrap();
        assert_eq!(t.duration, SimTime::from_micros(10_000));
        // 8 TX slots of two hops cover all 16 train frequencies once.
        let mut tx: Vec<u8> = t.events.iter().filter(|e| e.kind == HopKind::Tx).map(|e| e.frequency).collect();
        tx.sort_unstable();
        assert_eq!(tx, (0..16).collect::<Vec<u8>>());
    }

    #[test]
    fn hops_are_half_slot_apart_and_alternate() {
        let t = build_timeline(&InquiryConfig::default()).unwrap();
        for w in t.events.windows(2) {
            assert_eq!(w[1].time - w[0].time, SimTime::from_nanos(312_500));
        }
        for pair in t.events.chunks(4) {
            assert_eq!(pair[0].kind, HopKind::Tx);
            assert_eq!(pair[1].kind, HopKind::Tx);
            assert_eq!(pair[2].kind, HopKind::Listen);
            assert_eq!(pair[3].kind, HopKind::Listen);
            assert_eq!(pair[0].frequency, pair[2].frequency);
            assert_eq!(pair[1].frequency, pair[3].frequency);
        }
    }

    #[test]
    fn trains_switch_after_repetitions() {
        let cfg = InquiryConfig::default();
        let t = build_timeline(&cfg).unwrap();
        let per_block = (cfg.train_repetitions * cfg.train_size * 2) as usize;
        let trains: Vec<Train> = t.events.chunks(per_block).map(|c| c[0].train).collect();
        assert_eq!(trains, vec![Train::A, Train::B, Train::A, Train::B]);
        assert!(t.events[per_block].frequency >= 16);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            InquiryConfig { num_frequencies: 30, ..Default::default() },
            InquiryConfig { hop_period_ns: 625_000, ..Default::default() },
            InquiryConfig { train_repetitions: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(build_timeline(&cfg).is_err());
        }
    }

    #[test]
    fn in_range_responses_report_zero() {
        let ch_cfg = ChannelConfig::default();
        let mut ch = Channel::new(ch_cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // 4 dBm at 2 m is about -44 dBm, inside the default GRPR.
        let r = inquiry_rssi_scan(2.0, 4.0, &InquiryConfig::default(), &Grpr::default(), &mut ch, &mut rng).unwrap();
        assert!(!r.is_empty());
        assert!(r.iter().all(|s| s.rssi.value() == 0));
        assert!(r.iter().all(|s| s.time < InquiryConfig::default().total_duration()));
    }

    #[test]
    fn nearer_scans_never_read_lower() {
        let cfg = InquiryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ch = Channel::new(ChannelConfig::default()).unwrap();
        let near = inquiry_rssi_scan(6.0, 4.0, &cfg, &Grpr::default(), &mut ch, &mut rng).unwrap();
        let far = inquiry_rssi_scan(7.5, 4.0, &cfg, &Grpr::default(), &mut ch, &mut rng).unwrap();
        assert!(!near.is_empty() && !far.is_empty());
        let min_near = near.iter().map(|s| s.rssi).min().unwrap();
        let max_far = far.iter().map(|s| s.rssi).max().unwrap();
        assert!(min_near >= max_far);
        assert!(max_far.value() < 0);
    }

    #[test]
    fn far_away_yields_no_responses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ch = Channel::new(ChannelConfig::default()).unwrap();
        let r = inquiry_rssi_scan(60.0, 4.0, &InquiryConfig::default(), &Grpr::default(), &mut ch, &mut rng).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn mean_response_count_matches_model() {
        let cfg = InquiryConfig::default();
        let ch_cfg = ChannelConfig::default();
        let d = 7.0;
        let ber = crate::channel::rx_sample_with_noise(4.0, d, &ch_cfg, 0.0).unwrap().ber;
        // Independent oracle: each LISTEN hop is a Bernoulli trial.
        let listens = (cfg.train_switches * cfg.train_repetitions * cfg.train_size) as f64;
        let p = (1.0 - ber).powi(cfg.response_bits as i32) / cfg.num_frequencies as f64;
        let expected = listens * p;
        let seeds = 200;
        let counts: Vec<f64> = (0..seeds)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mut ch = Channel::new(ch_cfg.clone()).unwrap();
                inquiry_rssi_scan(d, 4.0, &cfg, &Grpr::default(), &mut ch, &mut rng).unwrap().len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / seeds as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
        let se = (var / seeds as f64).sqrt();
        assert!((mean - expected).abs() <= 3.0 * se, "mean {mean} expected {expected} se {se}");
    }
}
