//! Scenario files.
//!
//! A scenario is a TOML document. Top-level keys select the run; each module
//! has its own table with the same field names as its config struct. Any
//! omitted key takes its default.
//!
//! ```toml
//! name = "walk"
//! mode = "stream"            # stream | connected-sweep | inquiry-sweep | rtt-sweep | power-table
//! seed = 7
//! duration_s = 30.0
//! sample_rate_hz = 10.0
//! trajectory = [[0.0, 1.0], [20.0, 21.0]]   # (time_s, distance_m), linearly interpolated
//!
//! [toggles]
//! power_control = true
//! adaptation = true
//! fec = false
//! piconet_load = 0.0
//!
//! [sweep]                     # used by the *-sweep modes
//! distances_m = [1.0, 2.0, 3.0]
//! dwell_s = 5.0
//! probes = 200
//!
//! [channel]                   # also [link], [transport], [stream], [controller], [power], [inquiry]
//! shadowing_sigma_db = 2.0
//! ```

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adaptation::ControllerConfig;
use crate::channel::ChannelConfig;
use crate::inquiry::InquiryConfig;
use crate::linkmgr::LinkManagerConfig;
use crate::power::PowerModel;
use crate::streaming::StreamConfig;
use crate::time::SimTime;
use crate::transport::TransportConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Streams along the trajectory with the full event loop.
    Stream,
    /// One fresh connection per distance, streaming for `dwell_s`.
    ConnectedSweep,
    /// One full inquiry per distance; no connection, no power control.
    InquirySweep,
    /// MTU echo probes per distance.
    RttSweep,
    /// Power draw at each ladder rung.
    PowerTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub power_control: bool,
    pub adaptation: bool,
    pub fec: bool,
    /// Chance that a slot pair is taken by another piconet member.
    pub piconet_load: f64,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            power_control: true,
            adaptation: true,
            fec: false,
            piconet_load: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub distances_m: Vec<f64>,
    pub dwell_s: f64,
    pub probes: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            distances_m: Vec::new(),
            dwell_s: 5.0,
            probes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub trajectory: Vec<[f64; 2]>,
    pub toggles: Toggles,
    pub sweep: SweepConfig,
    pub channel: ChannelConfig,
    pub link: LinkManagerConfig,
    pub transport: TransportConfig,
    pub stream: StreamConfig,
    pub controller: ControllerConfig,
    pub power: PowerModel,
    pub inquiry: InquiryConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            mode: Mode::Stream,
            seed: 1,
            duration_s: 10.0,
            sample_rate_hz: 10.0,
            trajectory: vec![[0.0, 1.0]],
            toggles: Toggles::default(),
            sweep: SweepConfig::default(),
            channel: ChannelConfig::default(),
            link: LinkManagerConfig::default(),
            transport: TransportConfig::default(),
            stream: StreamConfig::default(),
            controller: ControllerConfig::default(),
            power: PowerModel::default(),
            inquiry: InquiryConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Scenario(msg.into())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    /// Sets a dotted key such as `controller.warn_lq` from its text form.
    /// The value is read as TOML when it parses, otherwise as a string.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, HarnessError> {
        let mut doc: toml::Value = toml::Value::try_from(self).map_err(|e| HarnessError::Parse(e.to_string()))?;
        let parsed = parse_value(value);
        let mut parts = key.split('.').peekable();
        let mut node = &mut doc;
        while let Some(part) = parts.next() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| invalid(format!("`{key}`: `{part}` is not inside a table")))?;
            if parts.peek().is_none() {
                if !table.contains_key(part) {
                    return Err(invalid(format!("unknown parameter `{key}`")));
                }
                table.insert(part.to_string(), parsed);
                break;
            }
            node = table
                .get_mut(part)
                .ok_or_else(|| invalid(format!("unknown parameter `{key}`")))?;
        }
        let s: Scenario = doc.try_into().map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.channel.validate()?;
        self.link.validate()?;
        self.transport.validate()?;
        self.stream.validate()?;
        self.controller.validate(self.stream.ladder_bps.len())?;
        self.power.validate()?;
        self.inquiry.validate()?;
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s must be finite and >= 0"));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(invalid("sample_rate_hz must be > 0"));
        }
        if !(0.0..1.0).contains(&self.toggles.piconet_load) {
            return Err(invalid("piconet_load must be in [0, 1)"));
        }
        let min_d = self.channel.ref_distance_m;
        for w in self.trajectory.windows(2) {
            if !(w[1][0] > w[0][0]) {
                return Err(invalid("trajectory waypoints must be strictly time-sorted"));
            }
        }
        if self.trajectory.iter().any(|p| !p[0].is_finite() || !(p[1] >= min_d) || !p[1].is_finite()) {
            return Err(invalid(format!("trajectory distances must be >= {min_d} m")));
        }
        if self.mode == Mode::Stream && self.duration_s > 0.0 && self.trajectory.is_empty() {
            return Err(invalid("a stream run needs at least one trajectory waypoint"));
        }
        let sweeping = matches!(self.mode, Mode::ConnectedSweep | Mode::InquirySweep | Mode::RttSweep);
        if sweeping {
            if self.sweep.distances_m.iter().any(|d| !(*d >= min_d) || !d.is_finite()) {
                return Err(invalid(format!("sweep distances must be >= {min_d} m")));
            }
            if !(self.sweep.dwell_s > 0.0) {
                return Err(invalid("sweep.dwell_s must be > 0"));
            }
        }
        if self.mode == Mode::RttSweep && self.sweep.probes == 0 {
            return Err(invalid("sweep.probes must be >= 1"));
        }
        Ok(())
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    pub fn sample_period(&self) -> SimTime {
        SimTime::from_secs_f64(1.0 / self.sample_rate_hz)
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::new(self.trajectory.clone())
    }

    /// Channel config whose shadowing stream also depends on the scenario seed.
    pub fn seeded_channel(&self, salt: u64) -> ChannelConfig {
        ChannelConfig {
            rng_seed: mix(mix(self.seed, self.channel.rng_seed), salt),
            ..self.channel.clone()
        }
    }
}

fn parse_value(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.to_string())),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// SplitMix64 finaliser over `a + golden * (b + 1)`; decorrelates derived seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(b.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Piecewise-linear distance over time; held flat outside the waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn stationary(distance_m: f64) -> Self {
        Self::new(vec![[0.0, distance_m]])
    }

    pub fn distance_at(&self, t_s: f64) -> f64 {
        let p = &self.points;
        match p.len() {
            0 => f64::NAN,
            1 => p[0][1],
            _ => {
                if t_s <= p[0][0] {
                    return p[0][1];
                }
                let i = p.partition_point(|w| w[0] <= t_s);
                if i >= p.len() {
                    return p[p.len() - 1][1];
                }
                let (a, b) = (p[i - 1], p[i]);
                a[1] + (b[1] - a[1]) * (t_s - a[0]) / (b[0] - a[0])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_between_waypoints() {
        let t = Trajectory::new(vec![[0.0, 1.0], [10.0, 11.0], [20.0, 1.0]]);
        assert_eq!(t.distance_at(-1.0), 1.0);
        assert_eq!(t.distance_at(5.0), 6.0);
        assert_eq!(t.distance_at(10.0), 11.0);
        assert_eq!(t.distance_at(15.0), 6.0);
        assert_eq!(t.distance_at(99.0), 1.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Scenario::default();
        let text = s.to_toml().unwrap();
        assert_eq!(Scenario::from_toml(&text).unwrap(), s);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let s = Scenario::from_toml("name = \"x\"\nseed = 3\n[channel]\nshadowing_sigma_db = 2.0\n").unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.channel.shadowing_sigma_db, 2.0);
        assert_eq!(s.channel.path_loss_exponent, 2.7);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Scenario::from_toml("bogus = 1").is_err());
        assert!(Scenario::from_toml("trajectory = [[0.0, 0.5]]").is_err());
        assert!(Scenario::from_toml("trajectory = [[1.0, 2.0], [1.0, 3.0]]").is_err());
        assert!(Scenario::from_toml("[controller]\nwarn_windows = 0").is_err());
        assert!(Scenario::from_toml("mode = \"teleport\"").is_err());
    }

    #[test]
    fn dotted_override() {
        let s = Scenario::default();
        let o = s.with_override("controller.warn_lq", "90").unwrap();
        assert_eq!(o.controller.warn_lq, 90.0);
        let o = s.with_override("toggles.fec", "true").unwrap();
        assert!(o.toggles.fec);
        let o = s.with_override("name", "renamed").unwrap();
        assert_eq!(o.name, "renamed");
        assert!(s.with_override("controller.nope", "1").is_err());
        assert!(s.with_override("toggles.piconet_load", "2.0").is_err());
    }

    #[test]
    fn seed_mixing_separates_streams() {
        let s = Scenario::default();
        assert_ne!(s.seeded_channel(0).rng_seed, s.seeded_channel(1).rng_seed);
        let other = Scenario { seed: 2, ..Scenario::default() };
        assert_ne!(s.seeded_channel(0).rng_seed, other.seeded_channel(0).rng_seed);
    }
}
