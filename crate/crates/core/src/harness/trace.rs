//! CSV trace written by every scenario.
//!
//! Columns, in order:
//!
//! | column | unit | empty when |
//! |---|---|---|
//! | `time_s` | s | never |
//! | `distance_ft` | ft | never |
//! | `rssi` | dB relative to the GRPR | no reading (inquiry heard nothing, power table) |
//! | `lq` | 0..=255 | no packet seen yet, or not a connected mode |
//! | `rtt_ms` | ms | not an RTT sweep, or every probe timed out |
//! | `bitrate_kbps` | kbit/s | not a streaming mode |
//! | `goodput_kbps` | kbit/s | not a streaming mode |
//! | `power_mw` | mW | not a streaming mode or power table |
//! | `warning_flag` | 0/1 | never |
//!
//! Fields are comma separated with `.` decimals and LF line endings.

use std::fmt::Write as _;
use std::io;

pub const METERS_PER_FOOT: f64 = 0.3048;

pub const HEADER: &str = "time_s,distance_ft,rssi,lq,rtt_ms,bitrate_kbps,goodput_kbps,power_mw,warning_flag";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time_s: f64,
    pub distance_m: f64,
    pub rssi: Option<i8>,
    pub lq: Option<u8>,
    pub rtt_ms: Option<f64>,
    pub bitrate_kbps: Option<f64>,
    pub goodput_kbps: Option<f64>,
    pub power_mw: Option<f64>,
    pub warning: bool,
}

impl TraceRow {
    pub fn at(time_s: f64, distance_m: f64) -> Self {
        Self {
            time_s,
            distance_m,
            rssi: None,
            lq: None,
            rtt_ms: None,
            bitrate_kbps: None,
            goodput_kbps: None,
            power_mw: None,
            warning: false,
        }
    }

    pub fn distance_ft(&self) -> f64 {
        self.distance_m / METERS_PER_FOOT
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioTrace {
    pub rows: Vec<TraceRow>,
}

fn opt_f(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, "{v:.3}");
    }
}

impl ScenarioTrace {
    pub fn is_time_ordered(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].time_s > w[0].time_s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:.3},{:.3},", r.time_s, r.distance_ft());
            if let Some(v) = r.rssi {
                let _ = write!(out, "{v}");
            }
            out.push(',');
            if let Some(v) = r.lq {
                let _ = write!(out, "{v}");
            }
            out.push(',');
            opt_f(&mut out, r.rtt_ms);
            out.push(',');
            opt_f(&mut out, r.bitrate_kbps);
            out.push(',');
            opt_f(&mut out, r.goodput_kbps);
            out.push(',');
            opt_f(&mut out, r.power_mw);
            out.push(',');
            out.push(if r.warning { '1' } else { '0' });
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    /// (time_s, bitrate_bps) pairs for energy integration. Rows without a
    /// bitrate are skipped.
    pub fn bitrate_series(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.bitrate_kbps.map(|b| (r.time_s, b * 1000.0)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_when_empty() {
        assert_eq!(ScenarioTrace::default().to_csv(), format!("{HEADER}\n"));
    }

    #[test]
    fn fixed_columns_and_empty_fields() {
        let mut r = TraceRow::at(0.1, 3.048);
        r.rssi = Some(-4);
        r.lq = Some(200);
        r.bitrate_kbps = Some(320.0);
        r.warning = true;
        let csv = ScenarioTrace { rows: vec![r] }.to_csv();
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line, "0.100,10.000,-4,200,,320.000,,,1");
        let cols = HEADER.split(',').count();
        assert!(csv.lines().all(|l| l.split(',').count() == cols));
        assert!(!csv.contains('\r'));
    }
}
