//! Scenario runner: reads a scenario, drives the simulation, emits a trace.

pub mod figures;
pub mod scenario;
pub mod sim;
pub mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adaptation::AdaptationError;
use crate::channel::{Channel, ChannelError};
use crate::inquiry::{inquiry_rssi_scan, InquiryError};
use crate::linkmgr::{settle_power_control, LinkError};
use crate::power::{power_mw, PowerError};
use crate::streaming::StreamError;
use crate::time::SimTime;
use crate::transport::{rtt_probe, RttProbe, TransportError};

pub use figures::{builtin_figures, figure, FIGURE_NAMES};
pub use scenario::{Mode, Scenario, SweepConfig, Toggles, Trajectory};
pub use sim::{simulate_stream, SampleRecord, StreamRun};
pub use trace::{ScenarioTrace, TraceRow};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Adaptation(#[from] AdaptationError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Inquiry(#[from] InquiryError),
}

/// Runs any scenario mode. Identical scenarios give identical traces.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioTrace, HarnessError> {
    s.validate()?;
    match s.mode {
        Mode::Stream => run_stream(s),
        Mode::ConnectedSweep => run_connected_sweep(s),
        Mode::InquirySweep => run_inquiry_sweep(s),
        Mode::RttSweep => run_rtt_sweep(s),
        Mode::PowerTable => Ok(power_table(s)),
    }
}

fn stream_row(r: &SampleRecord) -> TraceRow {
    TraceRow {
        rssi: Some(r.rssi.value()),
        lq: r.lq.map(|q| q.value()),
        bitrate_kbps: Some(r.bitrate_bps as f64 / 1000.0),
        goodput_kbps: Some(r.goodput_bps / 1000.0),
        power_mw: Some(r.power_mw),
        warning: r.warning,
        ..TraceRow::at(r.time.as_secs_f64(), r.distance_m)
    }
}

pub fn run_stream(s: &Scenario) -> Result<ScenarioTrace, HarnessError> {
    if s.duration() == SimTime::ZERO {
        return Ok(ScenarioTrace::default());
    }
    let run = simulate_stream(s, &s.trajectory(), s.duration(), s.seed)?;
    Ok(ScenarioTrace {
        rows: run.samples.iter().map(stream_row).collect(),
    })
}

/// One connection per sweep distance. Each row is the last sample of its
/// dwell, with goodput averaged over the whole dwell.
pub fn connected_sweep_runs(s: &Scenario) -> Result<Vec<StreamRun>, HarnessError> {
    let dwell = SimTime::from_secs_f64(s.sweep.dwell_s);
    s.sweep
        .distances_m
        .iter()
        .enumerate()
        .map(|(i, &d)| simulate_stream(s, &Trajectory::stationary(d), dwell, scenario::mix(s.seed, i as u64)))
        .collect()
}

fn run_connected_sweep(s: &Scenario) -> Result<ScenarioTrace, HarnessError> {
    let runs = connected_sweep_runs(s)?;
    let rows = runs
        .iter()
        .enumerate()
        .filter_map(|(i, run)| {
            let last = run.samples.last()?;
            let mean_goodput = run.samples.iter().map(|r| r.goodput_bps).sum::<f64>() / run.samples.len() as f64;
            Some(TraceRow {
                time_s: (i + 1) as f64 * s.sweep.dwell_s,
                goodput_kbps: Some(mean_goodput / 1000.0),
                warning: run.first_warning.is_some(),
                ..stream_row(last)
            })
        })
        .collect();
    Ok(ScenarioTrace { rows })
}

/// Median of the RSSI values heard during one inquiry at each distance.
/// An empty cell means nothing was heard.
fn run_inquiry_sweep(s: &Scenario) -> Result<ScenarioTrace, HarnessError> {
    let mut rows = Vec::with_capacity(s.sweep.distances_m.len());
    let span = s.inquiry.total_duration().as_secs_f64();
    let grpr = s.link.grpr()?;
    for (i, &d) in s.sweep.distances_m.iter().enumerate() {
        let mut channel = Channel::new(s.seeded_channel(i as u64))?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario::mix(s.seed, 0x1_0000 + i as u64));
        let heard = inquiry_rssi_scan(d, s.link.max_tx_dbm, &s.inquiry, &grpr, &mut channel, &mut rng)?;
        let mut values: Vec<i8> = heard.iter().map(|r| r.rssi.value()).collect();
        values.sort_unstable();
        rows.push(TraceRow {
            rssi: values.get(values.len() / 2).copied(),
            ..TraceRow::at((i + 1) as f64 * span, d)
        });
    }
    Ok(ScenarioTrace { rows })
}

/// Mean RTT and its standard error at one distance, over probes that did not
/// time out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttPoint {
    pub distance_m: f64,
    pub mean_ms: Option<f64>,
    pub std_err_ms: Option<f64>,
    pub completed: usize,
    pub timeouts: usize,
    pub rssi: i8,
    pub ber: f64,
}

/// Probes are sent over a settled connection; shadowing is drawn per probe.
pub fn rtt_points(s: &Scenario) -> Result<Vec<RttPoint>, HarnessError> {
    let grpr = s.link.grpr()?;
    let probe = RttProbe {
        mtu_bytes: s.transport.mtu_bytes,
        fec: s.toggles.fec,
        retry_limit: s.transport.retry_limit,
        piconet_load: s.toggles.piconet_load,
        pairing: s.transport.pairing(),
    };
    let mut out = Vec::new();
    for (i, &d) in s.sweep.distances_m.iter().enumerate() {
        let settled = settle_power_control(
            d,
            &s.channel,
            &grpr,
            s.link.initial_power_state(s.toggles.power_control),
            1000,
        )?;
        let tx = settled.state.tx_power_dbm;
        let mut channel = Channel::new(s.seeded_channel(i as u64))?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario::mix(s.seed, 0x2_0000 + i as u64));
        let mut rtts = Vec::with_capacity(s.sweep.probes);
        let mut timeouts = 0;
        for _ in 0..s.sweep.probes {
            let out_ber = channel.rx_sample(tx, d)?.ber;
            let in_ber = channel.rx_sample(tx, d)?.ber;
            match rtt_probe(&probe, out_ber, in_ber, &mut rng) {
                Ok(r) => rtts.push(r.rtt.as_millis_f64()),
                Err(TransportError::ProbeTimeout { .. }) => timeouts += 1,
                Err(e) => return Err(e.into()),
            }
        }
        let n = rtts.len();
        let mean = (n > 0).then(|| rtts.iter().sum::<f64>() / n as f64);
        let se = mean.filter(|_| n > 1).map(|m| {
            let var = rtts.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        out.push(RttPoint {
            distance_m: d,
            mean_ms: mean,
            std_err_ms: se,
            completed: n,
            timeouts,
            rssi: settled.rssi.value(),
            ber: channel.median_sample(tx, d)?.ber,
        });
    }
    Ok(out)
}

fn run_rtt_sweep(s: &Scenario) -> Result<ScenarioTrace, HarnessError> {
    let mapping = s.link.lq_mapping()?;
    let rows = rtt_points(s)?
        .iter()
        .enumerate()
        .map(|(i, p)| TraceRow {
            rssi: Some(p.rssi),
            lq: mapping.lq(p.ber).ok().map(|q| q.value()),
            rtt_ms: p.mean_ms,
            ..TraceRow::at((i + 1) as f64 * s.sweep.dwell_s, p.distance_m)
        })
        .collect();
    Ok(ScenarioTrace { rows })
}

/// One row per ladder rung; `time_s` is the rung index.
fn power_table(s: &Scenario) -> ScenarioTrace {
    let d = s.trajectory.first().map_or(s.channel.ref_distance_m, |p| p[1]);
    let rows = s
        .stream
        .ladder_bps
        .iter()
        .enumerate()
        .map(|(i, &b)| TraceRow {
            bitrate_kbps: Some(b as f64 / 1000.0),
            power_mw: Some(power_mw(b as f64, &s.power)),
            ..TraceRow::at(i as f64, d)
        })
        .collect();
    ScenarioTrace { rows }
}

/// Controller decisions as `time_s,smoothed_lq,trend,rung,warning` rows.
pub fn decisions_csv(run: &StreamRun) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("time_s,smoothed_lq,trend,rung,warning\n");
    for d in &run.decisions {
        let trend = match d.decision.estimate.trend {
            crate::adaptation::Trend::Approaching => "APPROACHING",
            crate::adaptation::Trend::Receding => "RECEDING",
            crate::adaptation::Trend::Stationary => "STATIONARY",
        };
        let _ = writeln!(
            out,
            "{:.3},{:.3},{},{},{}",
            d.time.as_secs_f64(),
            d.decision.estimate.smoothed_lq,
            trend,
            d.decision.rung,
            u8::from(d.warning)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_duration_is_header_only() {
        let s = Scenario {
            duration_s: 0.0,
            trajectory: vec![],
            ..Scenario::default()
        };
        assert_eq!(run_scenario(&s).unwrap().to_csv(), format!("{}\n", trace::HEADER));
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = Scenario {
            duration_s: 5.0,
            trajectory: vec![[0.0, 6.0], [5.0, 9.0]],
            channel: crate::channel::ChannelConfig {
                shadowing_sigma_db: 3.0,
                ..Default::default()
            },
            ..Scenario::default()
        };
        let a = run_scenario(&s).unwrap().to_csv();
        let b = run_scenario(&s).unwrap().to_csv();
        assert_eq!(a, b);
        let other = run_scenario(&Scenario { seed: 99, ..s }).unwrap().to_csv();
        assert_ne!(a, other);
    }

    #[test]
    fn invalid_scenario_fails_before_running() {
        let s = Scenario {
            sample_rate_hz: 0.0,
            ..Scenario::default()
        };
        assert!(matches!(run_scenario(&s), Err(HarnessError::Scenario(_))));
    }

    #[test]
    fn walking_away_never_raises_the_bitrate() {
        let s = Scenario {
            duration_s: 12.0,
            // From the reference distance out to 30 ft.
            trajectory: vec![[0.0, 1.0], [10.0, 30.0 * trace::METERS_PER_FOOT]],
            ..Scenario::default()
        };
        let rates: Vec<f64> = run_scenario(&s).unwrap().rows.iter().filter_map(|r| r.bitrate_kbps).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
        assert!(rates.last() < rates.first());
    }

    #[test]
    fn power_table_rows() {
        let s = Scenario {
            mode: Mode::PowerTable,
            ..Scenario::default()
        };
        let t = run_scenario(&s).unwrap();
        assert_eq!(t.rows.len(), 6);
        assert!(t.is_time_ordered());
    }
}
