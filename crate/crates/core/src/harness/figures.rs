//! Built-in scenarios, one per measured figure plus a controller demo.

use super::scenario::{Mode, Scenario, SweepConfig, Toggles};
use super::trace::METERS_PER_FOOT;
use crate::channel::ChannelConfig;

pub const FIGURE_NAMES: [&str; 7] = ["fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "adaptive-walk"];

fn grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step).round() as usize;
    (0..=n).map(|i| from + step * i as f64).collect()
}

fn sweep(distances_m: Vec<f64>, dwell_s: f64) -> SweepConfig {
    SweepConfig {
        distances_m,
        dwell_s,
        ..SweepConfig::default()
    }
}

fn base(name: &str, mode: Mode) -> Scenario {
    Scenario {
        name: name.into(),
        mode,
        ..Scenario::default()
    }
}

fn with_sigma(sigma: f64) -> ChannelConfig {
    ChannelConfig {
        shadowing_sigma_db: sigma,
        ..ChannelConfig::default()
    }
}

pub fn figure(name: &str) -> Option<Scenario> {
    let s = match name {
        // Inquiry responses are heard without a connection, so no power control.
        "fig3" => Scenario {
            sweep: sweep(grid(1.0, 12.0, 0.5), 10.24),
            toggles: Toggles {
                power_control: false,
                adaptation: false,
                ..Toggles::default()
            },
            ..base("fig3", Mode::InquirySweep)
        },
        "fig4" => Scenario {
            sweep: sweep(grid(1.0, 10.0, 0.5), 3.0),
            toggles: Toggles {
                adaptation: false,
                ..Toggles::default()
            },
            ..base("fig4", Mode::ConnectedSweep)
        },
        // The echo only slows down once TX power is maxed out and errors set in.
        "fig5" => Scenario {
            sweep: SweepConfig {
                probes: 200,
                ..sweep(grid(22.0, 26.0, 1.0).into_iter().map(|ft| ft * METERS_PER_FOOT).collect(), 1.0)
            },
            ..base("fig5", Mode::RttSweep)
        },
        "fig6" => Scenario {
            sweep: sweep(grid(1.0, 12.0, 0.5), 10.24),
            channel: with_sigma(4.0),
            toggles: Toggles {
                power_control: false,
                adaptation: false,
                ..Toggles::default()
            },
            ..base("fig6", Mode::InquirySweep)
        },
        "fig7" => Scenario {
            sweep: sweep(grid(1.0, 14.0, 0.5), 3.0),
            toggles: Toggles {
                adaptation: false,
                ..Toggles::default()
            },
            ..base("fig7", Mode::ConnectedSweep)
        },
        "fig8" => base("fig8", Mode::PowerTable),
        // Out to where the link degrades but holds, and back.
        "adaptive-walk" => Scenario {
            duration_s: 60.0,
            trajectory: vec![[0.0, 1.0], [5.0, 1.0], [30.0, 8.0], [55.0, 1.0]],
            ..base("adaptive-walk", Mode::Stream)
        },
        _ => return None,
    };
    Some(s)
}

pub fn builtin_figures() -> Vec<Scenario> {
    FIGURE_NAMES.iter().map(|n| figure(n).expect("every listed figure exists")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_figures_are_valid() {
        for s in builtin_figures() {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
        assert!(figure("fig9").is_none());
    }
}
