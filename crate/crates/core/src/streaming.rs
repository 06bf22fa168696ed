//! A2DP/GAVDP-style streaming session and audio frame scheduling.
//!
//! Sessions move IDLE -> CONFIGURED -> OPEN -> STREAMING and leave STREAMING
//! either back to OPEN (suspend) or to CLOSED. Audio frames only flow while
//! both endpoints are STREAMING. Frames are opaque payloads sized exactly from
//! the negotiated bitrate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;
use crate::transport::MAX_EFFECTIVE_BPS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StreamError {
    #[error("bitrate {0} bps is not on the ladder")]
    InvalidBitrate(u32),
    #[error("cannot {action} while {state}")]
    InvalidState { state: StreamState, action: StreamAction },
    #[error("invalid bitrate ladder: {0}")]
    InvalidLadder(&'static str),
    #[error("invalid stream config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamState {
    Idle,
    Configured,
    Open,
    Streaming,
    Closed,
}

impl StreamState {
    pub const ALL: [StreamState; 5] = [
        StreamState::Idle,
        StreamState::Configured,
        StreamState::Open,
        StreamState::Streaming,
        StreamState::Closed,
    ];
}

impl fmt::Display for StreamState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StreamState::Idle => "IDLE",
            StreamState::Configured => "CONFIGURED",
            StreamState::Open => "OPEN",
            StreamState::Streaming => "STREAMING",
            StreamState::Closed => "CLOSED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamAction {
    Configure,
    SignallingComplete,
    Start,
    Suspend,
    Close,
}

impl StreamAction {
    pub const ALL: [StreamAction; 5] = [
        StreamAction::Configure,
        StreamAction::SignallingComplete,
        StreamAction::Start,
        StreamAction::Suspend,
        StreamAction::Close,
    ];
}

impl fmt::Display for StreamAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StreamAction::Configure => "configure",
            StreamAction::SignallingComplete => "complete signalling",
            StreamAction::Start => "start streaming",
            StreamAction::Suspend => "suspend",
            StreamAction::Close => "close",
        };
        f.write_str(s)
    }
}

/// The complete transition table.
pub fn transition(state: StreamState, action: StreamAction) -> Result<StreamState, StreamError> {
    use StreamAction as A;
    use StreamState as S;
    match (state, action) {
        (S::Idle, A::Configure) => Ok(S::Configured),
        (S::Configured, A::SignallingComplete) => Ok(S::Open),
        (S::Open, A::Start) => Ok(S::Streaming),
        (S::Streaming, A::Suspend) => Ok(S::Open),
        (S::Streaming, A::Close) => Ok(S::Closed),
        (state, action) => Err(StreamError::InvalidState { state, action }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Src,
    Snk,
}

/// Selectable audio bitrates, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitrateLadder {
    rungs: Vec<u32>,
}

impl BitrateLadder {
    pub fn new(rungs: Vec<u32>, overhead: f64) -> Result<Self, StreamError> {
        if rungs.is_empty() {
            return Err(StreamError::InvalidLadder("ladder is empty"));
        }
        if rungs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StreamError::InvalidLadder("rungs must be strictly increasing"));
        }
        if rungs[0] == 0 {
            return Err(StreamError::InvalidLadder("rungs must be positive"));
        }
        if !(overhead >= 1.0) {
            return Err(StreamError::InvalidLadder("framing overhead must be >= 1"));
        }
        if *rungs.last().unwrap() as f64 * overhead > MAX_EFFECTIVE_BPS {
            return Err(StreamError::InvalidLadder("top rung exceeds the ACL throughput cap"));
        }
        Ok(Self { rungs })
    }

    pub fn rungs(&self) -> &[u32] {
        &self.rungs
    }

    pub fn len(&self) -> usize {
        self.rungs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rungs.is_empty()
    }

    pub fn top(&self) -> usize {
        self.rungs.len() - 1
    }

    pub fn bitrate(&self, rung: usize) -> Option<u32> {
        self.rungs.get(rung).copied()
    }

    pub fn position(&self, bitrate: u32) -> Option<usize> {
        self.rungs.iter().position(|&r| r == bitrate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub ladder_bps: Vec<u32>,
    pub frame_ms: u32,
    pub overhead: f64,
    /// Rung the session is configured at; the top rung when unset.
    pub initial_rung: Option<usize>,
    /// SRC-side buffer; frames arriving to a full queue are dropped.
    pub max_queue_frames: usize,
    /// Fixed latency of the capability/configuration exchange.
    pub signalling_ms: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            ladder_bps: vec![64_000, 96_000, 128_000, 192_000, 256_000, 320_000],
            frame_ms: 20,
            overhead: 1.10,
            initial_rung: None,
            max_queue_frames: 10,
            signalling_ms: 30,
        }
    }
}

impl StreamConfig {
    pub fn ladder(&self) -> Result<BitrateLadder, StreamError> {
        BitrateLadder::new(self.ladder_bps.clone(), self.overhead)
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        let ladder = self.ladder()?;
        if self.frame_ms == 0 {
            return Err(StreamError::InvalidConfig("frame_ms must be > 0"));
        }
        if self.max_queue_frames == 0 {
            return Err(StreamError::InvalidConfig("max_queue_frames must be >= 1"));
        }
        if let Some(r) = self.initial_rung {
            if r >= ladder.len() {
                return Err(StreamError::InvalidConfig("initial_rung is past the top of the ladder"));
            }
        }
        Ok(())
    }

    pub fn start_rung(&self) -> usize {
        self.initial_rung.unwrap_or(self.ladder_bps.len().saturating_sub(1))
    }

    pub fn frame_duration(&self) -> SimTime {
        SimTime::from_millis(self.frame_ms as u64)
    }
}

/// Audio payload bytes in one frame at `bitrate`.
pub fn frame_payload_bytes(bitrate: u32, frame_ms: u32) -> usize {
    (bitrate as u64 * frame_ms as u64 / 8_000) as usize
}

/// Bytes on air for a payload; tolerates float error so 800 * 1.1 is 880.
pub fn air_bytes(payload_bytes: usize, overhead: f64) -> usize {
    (payload_bytes as f64 * overhead - 1e-6).ceil().max(payload_bytes as f64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AudioFrame {
    pub seq: u64,
    pub created: SimTime,
    pub duration_ms: u32,
    pub bitrate: u32,
    pub payload_bytes: usize,
    /// Payload plus framing/signalling overhead, as put on the ACL link.
    pub air_bytes: usize,
}

/// One endpoint's view of the session.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSession {
    role: Role,
    state: StreamState,
    ladder: BitrateLadder,
    negotiated_bitrate: Option<u32>,
}

impl StreamSession {
    pub fn new(role: Role, ladder: BitrateLadder) -> Self {
        Self {
            role,
            state: StreamState::Idle,
            ladder,
            negotiated_bitrate: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn state(&self) -> StreamState {
        self.state
    }

    pub fn ladder(&self) -> &BitrateLadder {
        &self.ladder
    }

    pub fn negotiated_bitrate(&self) -> Option<u32> {
        self.negotiated_bitrate
    }

    fn apply(&mut self, action: StreamAction) -> Result<(), StreamError> {
        self.state = transition(self.state, action)?;
        Ok(())
    }

    pub fn configure(&mut self, bitrate: u32) -> Result<(), StreamError> {
        if self.ladder.position(bitrate).is_none() {
            return Err(StreamError::InvalidBitrate(bitrate));
        }
        self.apply(StreamAction::Configure)?;
        self.negotiated_bitrate = Some(bitrate);
        Ok(())
    }

    pub fn signalling_complete(&mut self) -> Result<(), StreamError> {
        self.apply(StreamAction::SignallingComplete)
    }

    pub fn start(&mut self) -> Result<(), StreamError> {
        self.apply(StreamAction::Start)
    }

    pub fn suspend(&mut self) -> Result<(), StreamError> {
        self.apply(StreamAction::Suspend)
    }

    pub fn close(&mut self) -> Result<(), StreamError> {
        self.apply(StreamAction::Close)
    }

    /// Returns whether the bitrate actually changed.
    pub fn reconfigure_bitrate(&mut self, bitrate: u32) -> Result<bool, StreamError> {
        if self.ladder.position(bitrate).is_none() {
            return Err(StreamError::InvalidBitrate(bitrate));
        }
        if self.state != StreamState::Streaming {
            return Err(StreamError::InvalidState {
                state: self.state,
                action: StreamAction::Configure,
            });
        }
        let changed = self.negotiated_bitrate != Some(bitrate);
        self.negotiated_bitrate = Some(bitrate);
        Ok(changed)
    }
}

/// In-band bitrate change record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reconfiguration {
    pub time: SimTime,
    pub from_bps: u32,
    pub to_bps: u32,
}

/// SRC and SNK sessions plus the SRC frame clock.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEndpoints {
    pub src: StreamSession,
    pub snk: StreamSession,
    frame_ms: u32,
    overhead: f64,
    next_seq: u64,
    next_due: SimTime,
}

impl StreamEndpoints {
    pub fn new(cfg: &StreamConfig) -> Result<Self, StreamError> {
        cfg.validate()?;
        let ladder = cfg.ladder()?;
        Ok(Self {
            src: StreamSession::new(Role::Src, ladder.clone()),
            snk: StreamSession::new(Role::Snk, ladder),
            frame_ms: cfg.frame_ms,
            overhead: cfg.overhead,
            next_seq: 0,
            next_due: SimTime::ZERO,
        })
    }

    pub fn state(&self) -> StreamState {
        self.src.state()
    }

    pub fn ladder(&self) -> &BitrateLadder {
        self.src.ladder()
    }

    pub fn bitrate(&self) -> Option<u32> {
        self.src.negotiated_bitrate()
    }

    pub fn rung(&self) -> Option<usize> {
        self.bitrate().and_then(|b| self.ladder().position(b))
    }

    pub fn frame_ms(&self) -> u32 {
        self.frame_ms
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn next_due(&self) -> SimTime {
        self.next_due
    }

    /// Playback offset reached by the SRC, ms.
    pub fn position_ms(&self) -> u64 {
        self.next_seq * self.frame_ms as u64
    }

    pub fn is_streaming(&self) -> bool {
        self.src.state() == StreamState::Streaming && self.snk.state() == StreamState::Streaming
    }

    /// Both endpoints select `bitrate`; CONFIGURED until signalling completes.
    pub fn configure(&mut self, bitrate: u32) -> Result<(), StreamError> {
        let (src, snk) = (self.src.clone(), self.snk.clone());
        let r = self.src.configure(bitrate).and_then(|_| self.snk.configure(bitrate));
        if r.is_err() {
            self.src = src;
            self.snk = snk;
        }
        r
    }

    pub fn complete_signalling(&mut self) -> Result<(), StreamError> {
        self.both(StreamSession::signalling_complete)
    }

    /// OPEN -> STREAMING on both sides; the first frame is due at `now`.
    pub fn start_stream(&mut self, now: SimTime) -> Result<(), StreamError> {
        self.both(StreamSession::start)?;
        self.next_due = now;
        Ok(())
    }

    pub fn suspend(&mut self) -> Result<(), StreamError> {
        self.both(StreamSession::suspend)
    }

    pub fn close(&mut self) -> Result<(), StreamError> {
        self.both(StreamSession::close)
    }

    fn both(&mut self, f: fn(&mut StreamSession) -> Result<(), StreamError>) -> Result<(), StreamError> {
        let (src, snk) = (self.src.clone(), self.snk.clone());
        let r = f(&mut self.src).and_then(|_| f(&mut self.snk));
        if r.is_err() {
            self.src = src;
            self.snk = snk;
        }
        r
    }

    /// Switches both endpoints to `bitrate` without tearing the stream down.
    /// `Ok(None)` when the rate is unchanged.
    pub fn reconfigure_bitrate(&mut self, now: SimTime, bitrate: u32) -> Result<Option<Reconfiguration>, StreamError> {
        let from = self.bitrate().unwrap_or(0);
        let changed = self.src.reconfigure_bitrate(bitrate)?;
        self.snk.reconfigure_bitrate(bitrate)?;
        Ok(changed.then_some(Reconfiguration {
            time: now,
            from_bps: from,
            to_bps: bitrate,
        }))
    }

    /// Emits the frame due now and advances the frame clock by one duration.
    pub fn next_frame(&mut self) -> Result<AudioFrame, StreamError> {
        if !self.is_streaming() {
            return Err(StreamError::InvalidState {
                state: self.state(),
                action: StreamAction::Start,
            });
        }
        let bitrate = self.bitrate().expect("streaming implies a negotiated bitrate");
        let payload = frame_payload_bytes(bitrate, self.frame_ms);
        let frame = AudioFrame {
            seq: self.next_seq,
            created: self.next_due,
            duration_ms: self.frame_ms,
            bitrate,
            payload_bytes: payload,
            air_bytes: air_bytes(payload, self.overhead),
        };
        self.next_seq += 1;
        self.next_due += SimTime::from_millis(self.frame_ms as u64);
        Ok(frame)
    }

    /// Rebuilds a STREAMING session at a saved position.
    pub fn resume(cfg: &StreamConfig, bitrate: u32, next_seq: u64, now: SimTime) -> Result<Self, StreamError> {
        let mut s = Self::new(cfg)?;
        s.configure(bitrate)?;
        s.complete_signalling()?;
        s.start_stream(now)?;
        s.next_seq = next_seq;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameEventKind {
    Delivered,
    /// Dropped at the SRC buffer or stranded by a link loss.
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameEvent {
    pub time: SimTime,
    pub seq: u64,
    pub payload_bytes: usize,
    pub kind: FrameEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryReport {
    pub delivered_frames: u64,
    pub lost_frames: u64,
    pub goodput_bps: f64,
}

/// Frame outcomes and reconfigurations in time order.
#[derive(Debug, Clone, Default)]
pub struct StreamLog {
    pub frames: Vec<FrameEvent>,
    pub reconfigurations: Vec<Reconfiguration>,
}

impl StreamLog {
    pub fn record(&mut self, time: SimTime, frame: &AudioFrame, kind: FrameEventKind) {
        self.frames.push(FrameEvent {
            time,
            seq: frame.seq,
            payload_bytes: frame.payload_bytes,
            kind,
        });
    }

    /// Outcomes whose event time falls in `[from, to)`.
    pub fn delivery_report(&self, from: SimTime, to: SimTime) -> DeliveryReport {
        let mut delivered_frames = 0;
        let mut lost_frames = 0;
        let mut bits = 0u64;
        for ev in self.frames.iter().filter(|e| e.time >= from && e.time < to) {
            match ev.kind {
                FrameEventKind::Delivered => {
                    delivered_frames += 1;
                    bits += ev.payload_bytes as u64 * 8;
                }
                FrameEventKind::Lost => lost_frames += 1,
            }
        }
        let window = (to.saturating_sub(from)).as_secs_f64();
        DeliveryReport {
            delivered_frames,
            lost_frames,
            goodput_bps: if window > 0.0 { bits as f64 / window } else { 0.0 },
        }
    }

    /// Sequence numbers as seen by the SNK.
    pub fn delivered_seqs(&self) -> impl Iterator<Item = u64> + '_ {
        self.frames.iter().filter(|e| e.kind == FrameEventKind::Delivered).map(|e| e.seq)
    }
}
