//! Discrete-event loop for one streaming connection.
//!
//! The SRC is the piconet master and sends audio over ACL; the SNK measures
//! every packet, reports RSSI/LQ, and asks the SRC to step its TX power.
//! The controller runs at the SRC on those reports.
//!
//! Shadowing is drawn once per metric sample and held until the next one.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scenario::{mix, Scenario, Trajectory};
use super::HarnessError;
use crate::adaptation::{Controller, Decision, Warning};
use crate::channel::{rx_sample_with_noise, ChannelConfig, RxSample};
use crate::linkmgr::{LinkManager, LinkMetricSample, LinkQuality, Rssi};
use crate::power::power_mw;
use crate::streaming::{AudioFrame, FrameEventKind, Reconfiguration, StreamEndpoints, StreamLog};
use crate::time::SimTime;
use crate::transport::{retransmission_packet_type, segment, select_packet_type, AclLink, AclPacket, AttemptOutcome, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    SignallingComplete,
    FrameDue,
    AttemptStart,
    AttemptEnd,
    PowerControlTick,
    Sample,
    Decision,
}

/// Ordered by time, then by scheduling order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    event: Event,
}

#[derive(Debug)]
struct Pending {
    frame: AudioFrame,
    remaining: usize,
    retransmitting: bool,
}

#[derive(Debug, Clone)]
struct InFlight {
    bytes: usize,
    outcome: Result<AttemptOutcome, TransportError>,
}

/// What the host sees once per sample period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub time: SimTime,
    pub distance_m: f64,
    pub tx_power_dbm: f64,
    pub rx_power_dbm: f64,
    pub rssi: Rssi,
    pub lq: Option<LinkQuality>,
    pub smoothed_lq: Option<f64>,
    /// ACL attempts in the window; after a link loss, frames that could not be sent.
    pub attempted: u32,
    pub delivered: u32,
    pub bitrate_bps: u32,
    pub rung: Option<usize>,
    pub goodput_bps: f64,
    pub power_mw: f64,
    pub warning: bool,
}

impl SampleRecord {
    pub fn delivery_ratio(&self) -> Option<f64> {
        (self.attempted > 0).then(|| self.delivered as f64 / self.attempted as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRecord {
    pub time: SimTime,
    pub decision: Decision,
    pub warning: bool,
}

#[derive(Debug, Clone, Default)]
pub struct StreamRun {
    pub samples: Vec<SampleRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub log: StreamLog,
    pub link_loss: Option<SimTime>,
    pub first_warning: Option<SimTime>,
    pub events_processed: u64,
}

impl StreamRun {
    pub fn reconfigurations(&self) -> &[Reconfiguration] {
        &self.log.reconfigurations
    }

    /// Rung after every decision, starting with the configured one.
    pub fn rung_sequence(&self) -> Vec<usize> {
        self.samples.iter().filter_map(|s| s.rung).collect()
    }
}

struct Sim<'a> {
    s: &'a Scenario,
    traj: &'a Trajectory,
    channel: ChannelConfig,
    end: SimTime,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,

    shadow_rng: ChaCha8Rng,
    shadowing: Option<Normal<f64>>,
    shadow_db: f64,
    link_rng: ChaCha8Rng,

    lm: LinkManager,
    link: AclLink,
    ends: StreamEndpoints,
    ctl: Controller,
    frames: VecDeque<Pending>,
    in_flight: Option<InFlight>,
    busy: bool,
    lost_at: Option<SimTime>,
    frozen_lq: Option<LinkQuality>,
    frame_period: SimTime,

    win_attempted: u32,
    win_delivered: u32,
    win_bits: u64,

    out: StreamRun,
}

/// Runs one streaming connection along `traj` for `duration`.
pub fn simulate_stream(s: &Scenario, traj: &Trajectory, duration: SimTime, seed: u64) -> Result<StreamRun, HarnessError> {
    s.validate()?;
    let channel = ChannelConfig {
        rng_seed: mix(seed, s.channel.rng_seed),
        ..s.channel.clone()
    };
    let ends = StreamEndpoints::new(&s.stream)?;
    let rungs = ends.ladder().len();
    let start_rung = s.stream.start_rung();
    let shadowing = (channel.shadowing_sigma_db > 0.0)
        .then(|| Normal::new(0.0, channel.shadowing_sigma_db).expect("sigma validated"));
    let mut sim = Sim {
        s,
        traj,
        end: duration,
        queue: BinaryHeap::new(),
        next_seq: 0,
        shadow_rng: ChaCha8Rng::seed_from_u64(channel.rng_seed),
        shadowing,
        shadow_db: 0.0,
        link_rng: ChaCha8Rng::seed_from_u64(mix(seed, 0x5eed)),
        lm: LinkManager::new(&s.link, s.toggles.power_control)?,
        link: AclLink::new(s.transport.retry_limit, s.toggles.piconet_load),
        ends,
        ctl: Controller::new(s.controller.clone(), rungs, start_rung)?,
        frames: VecDeque::new(),
        in_flight: None,
        busy: false,
        lost_at: None,
        frozen_lq: None,
        frame_period: s.stream.frame_duration(),
        win_attempted: 0,
        win_delivered: 0,
        win_bits: 0,
        out: StreamRun::default(),
        channel,
    };
    sim.run(start_rung)?;
    Ok(sim.out)
}

impl Sim<'_> {
    fn schedule(&mut self, time: SimTime, event: Event) {
        if time > self.end {
            return;
        }
        self.queue.push(Reverse(Scheduled {
            time,
            seq: self.next_seq,
            event,
        }));
        self.next_seq += 1;
    }

    fn redraw_shadow(&mut self) {
        self.shadow_db = match &self.shadowing {
            Some(n) => n.sample(&mut self.shadow_rng),
            None => 0.0,
        };
    }

    fn rx_at(&self, t: SimTime) -> Result<RxSample, HarnessError> {
        let d = self.traj.distance_at(t.as_secs_f64());
        Ok(rx_sample_with_noise(self.lm.tx_power_dbm(), d, &self.channel, self.shadow_db)?)
    }

    fn run(&mut self, start_rung: usize) -> Result<(), HarnessError> {
        let bitrate = self.ends.ladder().bitrate(start_rung).expect("validated rung");
        self.ends.configure(bitrate)?;
        self.redraw_shadow();
        self.schedule(SimTime::from_millis(self.s.stream.signalling_ms), Event::SignallingComplete);
        self.schedule(SimTime::ZERO, Event::PowerControlTick);
        let period = self.s.sample_period();
        self.schedule(period, Event::Sample);
        self.schedule(self.s.controller.decision_interval(), Event::Decision);

        while let Some(Reverse(ev)) = self.queue.pop() {
            self.out.events_processed += 1;
            let t = ev.time;
            match ev.event {
                Event::SignallingComplete => {
                    self.ends.complete_signalling()?;
                    self.ends.start_stream(t)?;
                    self.schedule(t, Event::FrameDue);
                }
                Event::FrameDue => self.on_frame_due(t)?,
                Event::AttemptStart => self.on_attempt_start(t)?,
                Event::AttemptEnd => self.on_attempt_end(t),
                Event::PowerControlTick => {
                    if self.lost_at.is_none() {
                        let rx = self.rx_at(t)?;
                        self.lm.power_control_tick(rx.rx_power_dbm);
                    }
                    self.schedule(t + SimTime::from_millis(self.s.link.power_interval_ms), Event::PowerControlTick);
                }
                Event::Sample => {
                    self.on_sample(t, period)?;
                    self.schedule(t + period, Event::Sample);
                }
                Event::Decision => {
                    self.on_decision(t)?;
                    self.schedule(t + self.s.controller.decision_interval(), Event::Decision);
                }
            }
        }
        Ok(())
    }

    fn on_frame_due(&mut self, t: SimTime) -> Result<(), HarnessError> {
        self.schedule(t + self.frame_period, Event::FrameDue);
        if self.lost_at.is_some() {
            // The sink keeps waiting for audio that cannot arrive.
            self.win_attempted += 1;
            return Ok(());
        }
        let frame = self.ends.next_frame()?;
        if self.frames.len() >= self.s.stream.max_queue_frames {
            self.out.log.record(t, &frame, FrameEventKind::Lost);
        } else {
            self.frames.push_back(Pending {
                frame,
                remaining: frame.air_bytes,
                retransmitting: false,
            });
        }
        if !self.busy {
            self.busy = true;
            self.schedule(t.next_master_slot(), Event::AttemptStart);
        }
        Ok(())
    }

    fn on_attempt_start(&mut self, t: SimTime) -> Result<(), HarnessError> {
        if self.lost_at.is_some() || self.frames.is_empty() {
            self.busy = false;
            return Ok(());
        }
        let head = self.frames.front().expect("checked non-empty");
        let pick = if head.retransmitting {
            retransmission_packet_type
        } else {
            select_packet_type
        };
        let kind = pick(
            self.s.transport.packet_selection,
            self.s.toggles.fec,
            self.lm.average_ber(),
            self.s.transport.min_delivery,
        );
        let start = t + crate::time::SLOT * (2 * self.link.stolen_pairs(&mut self.link_rng));
        let bytes = head.remaining.min(kind.capacity_bytes());
        let mut pkt: AclPacket = segment(bytes, kind).remove(0);
        pkt.is_retransmission = head.retransmitting;
        let rx = self.rx_at(start)?;
        self.lm.record_packet(rx.ber);
        self.win_attempted += 1;
        let outcome = self.link.attempt(&pkt, rx.ber, &mut self.link_rng);
        self.in_flight = Some(InFlight { bytes, outcome });
        self.schedule(start + pkt.kind().exchange_time(), Event::AttemptEnd);
        Ok(())
    }

    fn on_attempt_end(&mut self, t: SimTime) {
        let Some(f) = self.in_flight.take() else {
            return;
        };
        match f.outcome {
            Ok(AttemptOutcome::Delivered) => {
                self.win_delivered += 1;
                let head = self.frames.front_mut().expect("in-flight frame is queued");
                head.remaining -= f.bytes;
                head.retransmitting = false;
                if head.remaining == 0 {
                    let done = self.frames.pop_front().expect("head exists");
                    self.win_bits += done.frame.payload_bytes as u64 * 8;
                    self.out.log.record(t, &done.frame, FrameEventKind::Delivered);
                }
            }
            Ok(AttemptOutcome::Lost) => {
                if let Some(head) = self.frames.front_mut() {
                    head.retransmitting = true;
                }
            }
            Err(_) => {
                self.lost_at = Some(t);
                self.out.link_loss = Some(t);
                self.frozen_lq = self.lm.link_quality();
                for p in self.frames.drain(..) {
                    self.out.log.record(t, &p.frame, FrameEventKind::Lost);
                }
                let _ = self.ends.close();
            }
        }
        if self.lost_at.is_none() && !self.frames.is_empty() {
            self.schedule(t, Event::AttemptStart);
        } else {
            self.busy = false;
        }
    }

    fn on_sample(&mut self, t: SimTime, period: SimTime) -> Result<(), HarnessError> {
        let d = self.traj.distance_at(t.as_secs_f64());
        let rx = self.rx_at(t)?;
        let rssi = self.lm.rssi(rx.rx_power_dbm);
        let lq = if self.lost_at.is_some() {
            self.frozen_lq
        } else {
            self.lm.link_quality()
        };
        let metric = LinkMetricSample {
            time_us: t.as_micros(),
            rssi,
            lq: lq.unwrap_or(LinkQuality::MIN),
            delivered: self.win_delivered,
            attempted: self.win_attempted,
        };
        if lq.is_some() {
            self.ctl.on_sample(&metric);
        }
        let warning = self.ctl.warning() == Warning::Warning;
        if warning && self.out.first_warning.is_none() {
            self.out.first_warning = Some(t);
        }
        let bitrate = if self.lost_at.is_some() {
            0
        } else {
            self.ends.bitrate().unwrap_or(0)
        };
        self.out.samples.push(SampleRecord {
            time: t,
            distance_m: d,
            tx_power_dbm: self.lm.tx_power_dbm(),
            rx_power_dbm: rx.rx_power_dbm,
            rssi,
            lq,
            smoothed_lq: self.ctl.smoothed_lq(),
            attempted: self.win_attempted,
            delivered: self.win_delivered,
            bitrate_bps: bitrate,
            rung: self.lost_at.is_none().then(|| self.ends.rung()).flatten(),
            goodput_bps: self.win_bits as f64 / period.as_secs_f64(),
            power_mw: power_mw(bitrate as f64, &self.s.power),
            warning,
        });
        self.win_attempted = 0;
        self.win_delivered = 0;
        self.win_bits = 0;
        self.redraw_shadow();
        Ok(())
    }

    fn on_decision(&mut self, t: SimTime) -> Result<(), HarnessError> {
        if !self.s.toggles.adaptation || self.lost_at.is_some() || !self.ends.is_streaming() {
            return Ok(());
        }
        let Some(decision) = self.ctl.decide() else {
            return Ok(());
        };
        if decision.changed {
            let bitrate = self.ends.ladder().bitrate(decision.rung).expect("controller stays on the ladder");
            if let Some(r) = self.ends.reconfigure_bitrate(t, bitrate)? {
                self.out.log.reconfigurations.push(r);
            }
        }
        self.out.decisions.push(DecisionRecord {
            time: t,
            decision,
            warning: self.ctl.warning() == Warning::Warning,
        });
        Ok(())
    }
}
