//! Slotted TDD ACL transport.
//!
//! Every exchange starts on an even (master) slot: a 1/3/5-slot packet in one
//! direction followed by a one-slot reply (ACK, NULL or POLL) in the other, so
//! an attempt always occupies a whole number of slot pairs. Failed packets are
//! retransmitted in the next free slot pair; `retry_limit` consecutive failures
//! take the link down.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{SimTime, SLOT};

/// The ACL effective bit-rate ceiling.
pub const MAX_EFFECTIVE_BPS: f64 = 721_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("link lost after {failures} consecutive failed transmissions")]
    LinkLoss { failures: u32 },
    #[error("RTT probe timed out after {failures} consecutive failures")]
    ProbeTimeout { failures: u32 },
    #[error("payload of {payload} bytes exceeds {kind:?} capacity of {capacity} bytes")]
    PayloadTooLarge {
        kind: PacketType,
        payload: usize,
        capacity: usize,
    },
    #[error("schedule duration must be positive")]
    EmptyDuration,
    #[error("invalid transport config: {0}")]
    InvalidConfig(&'static str),
}

/// Baseband ACL packet types. DM types carry a (15,10) shortened Hamming code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PacketType {
    Dm1,
    Dh1,
    Dm3,
    Dh3,
    Dm5,
    Dh5,
}

impl PacketType {
    pub const ALL: [PacketType; 6] = [
        PacketType::Dm1,
        PacketType::Dh1,
        PacketType::Dm3,
        PacketType::Dh3,
        PacketType::Dm5,
        PacketType::Dh5,
    ];

    pub const fn slots(self) -> u64 {
        match self {
            PacketType::Dm1 | PacketType::Dh1 => 1,
            PacketType::Dm3 | PacketType::Dh3 => 3,
            PacketType::Dm5 | PacketType::Dh5 => 5,
        }
    }

    pub const fn fec(self) -> bool {
        matches!(self, PacketType::Dm1 | PacketType::Dm3 | PacketType::Dm5)
    }

    pub const fn capacity_bytes(self) -> usize {
        match self {
            PacketType::Dm1 => 17,
            PacketType::Dh1 => 27,
            PacketType::Dm3 => 121,
            PacketType::Dh3 => 183,
            PacketType::Dm5 => 224,
            PacketType::Dh5 => 339,
        }
    }

    const fn payload_header_bytes(self) -> usize {
        if self.slots() == 1 {
            1
        } else {
            2
        }
    }

    /// Bits checked by the receiver: payload header, payload and CRC.
    pub const fn protected_bits(self, payload_bytes: usize) -> u64 {
        ((self.payload_header_bytes() + payload_bytes + 2) * 8) as u64
    }

    /// Slots occupied by one attempt including the reply slot.
    pub const fn exchange_slots(self) -> u64 {
        self.slots() + 1
    }

    pub fn exchange_time(self) -> SimTime {
        SLOT * self.exchange_slots()
    }

    /// Largest type with the given slot count and FEC class.
    pub fn family(fec: bool, slots: u64) -> PacketType {
        match (fec, slots) {
            (true, 1) => PacketType::Dm1,
            (true, 3) => PacketType::Dm3,
            (true, _) => PacketType::Dm5,
            (false, 1) => PacketType::Dh1,
            (false, 3) => PacketType::Dh3,
            (false, _) => PacketType::Dh5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AclPacket {
    kind: PacketType,
    payload_bytes: usize,
    pub is_retransmission: bool,
}

impl AclPacket {
    pub fn new(kind: PacketType, payload_bytes: usize) -> Result<Self, TransportError> {
        if payload_bytes > kind.capacity_bytes() {
            return Err(TransportError::PayloadTooLarge {
                kind,
                payload: payload_bytes,
                capacity: kind.capacity_bytes(),
            });
        }
        Ok(Self {
            kind,
            payload_bytes,
            is_retransmission: false,
        })
    }

    pub fn full(kind: PacketType) -> Self {
        Self {
            kind,
            payload_bytes: kind.capacity_bytes(),
            is_retransmission: false,
        }
    }

    pub fn kind(&self) -> PacketType {
        self.kind
    }

    pub fn slots(&self) -> u64 {
        self.kind.slots()
    }

    pub fn fec(&self) -> bool {
        self.kind.fec()
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_bytes
    }

    pub fn payload_bits(&self) -> u64 {
        self.payload_bytes as u64 * 8
    }

    pub fn delivery_probability(&self, ber: f64) -> f64 {
        delivery_probability(self.kind, self.payload_bytes, ber)
    }
}

/// `(1 - ber)^bits`.
pub fn delivery_probability_bits(ber: f64, bits: u64) -> f64 {
    let ber = ber.clamp(0.0, 1.0);
    if ber >= 1.0 {
        return if bits == 0 { 1.0 } else { 0.0 };
    }
    (bits as f64 * (-ber).ln_1p()).exp()
}

/// Probability that a (15,10) block survives: at most one of 15 bits flipped.
pub fn hamming_block_success(ber: f64) -> f64 {
    let ber = ber.clamp(0.0, 1.0);
    let q = 1.0 - ber;
    q.powi(15) + 15.0 * ber * q.powi(14)
}

pub fn delivery_probability(kind: PacketType, payload_bytes: usize, ber: f64) -> f64 {
    let bits = kind.protected_bits(payload_bytes);
    if kind.fec() {
        let blocks = bits.div_ceil(10);
        hamming_block_success(ber).powf(blocks as f64)
    } else {
        delivery_probability_bits(ber, bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PacketSelection {
    /// Always the 5-slot type of the configured FEC class.
    Fixed,
    /// Pick the type with the best expected goodput per slot among those that
    /// still meet `min_delivery` at the current average BER. Bytes whose last
    /// attempt failed are resent on DM1 until the next acknowledgement.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub retry_limit: u32,
    pub auth_delay_us: u64,
    pub paired: bool,
    pub mtu_bytes: usize,
    pub rate_cap_bps: f64,
    pub packet_selection: PacketSelection,
    pub min_delivery: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            retry_limit: 8,
            auth_delay_us: 50_000,
            paired: true,
            mtu_bytes: 672,
            rate_cap_bps: MAX_EFFECTIVE_BPS,
            packet_selection: PacketSelection::Adaptive,
            min_delivery: 0.8,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if self.retry_limit == 0 {
            return Err(TransportError::InvalidConfig("retry_limit must be >= 1"));
        }
        if self.mtu_bytes == 0 {
            return Err(TransportError::InvalidConfig("mtu_bytes must be >= 1"));
        }
        if !(self.rate_cap_bps > 0.0 && self.rate_cap_bps <= MAX_EFFECTIVE_BPS) {
            return Err(TransportError::InvalidConfig("rate_cap_bps must be in (0, 721000]"));
        }
        if !(0.0..=1.0).contains(&self.min_delivery) {
            return Err(TransportError::InvalidConfig("min_delivery must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn pairing(&self) -> PairingState {
        PairingState {
            paired: self.paired,
            auth_delay: SimTime::from_micros(self.auth_delay_us),
        }
    }
}

/// Chooses the packet type for the next segment.
pub fn select_packet_type(selection: PacketSelection, fec: bool, avg_ber: Option<f64>, min_delivery: f64) -> PacketType {
    let fixed = PacketType::family(fec, 5);
    let ber = match (selection, avg_ber) {
        (PacketSelection::Fixed, _) | (_, None) => return fixed,
        (PacketSelection::Adaptive, Some(b)) => b,
    };
    let candidates = PacketType::ALL.into_iter().filter(|k| !fec || k.fec());
    let scored: Vec<(PacketType, f64, f64)> = candidates
        .map(|k| {
            let p = delivery_probability(k, k.capacity_bytes(), ber);
            let per_slot = k.capacity_bytes() as f64 * p / k.exchange_slots() as f64;
            (k, p, per_slot)
        })
        .collect();
    let best_ok = scored
        .iter()
        .filter(|(_, p, _)| *p >= min_delivery)
        .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.cmp(&a.0)));
    match best_ok {
        Some((k, _, _)) => *k,
        None => scored.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|s| s.0).unwrap_or(fixed),
    }
}

/// Packet type for bytes whose previous attempt was not acknowledged.
///
/// The average BER lags a sudden fade, so adaptive selection does not trust
/// it for a retransmission and drops to the most robust type instead.
pub fn retransmission_packet_type(selection: PacketSelection, fec: bool, avg_ber: Option<f64>, min_delivery: f64) -> PacketType {
    match selection {
        PacketSelection::Fixed => select_packet_type(selection, fec, avg_ber, min_delivery),
        PacketSelection::Adaptive => PacketType::Dm1,
    }
}

/// Splits `bytes` into packets of `kind`'s class; the tail uses the smallest
/// type of the same class that fits.
pub fn segment(bytes: usize, kind: PacketType) -> Vec<AclPacket> {
    let cap = kind.capacity_bytes();
    let mut out = Vec::with_capacity(bytes.div_ceil(cap).max(1));
    let mut left = bytes;
    while left > 0 {
        let take = left.min(cap);
        let tail_kind = [1, 3, 5]
            .into_iter()
            .map(|s| PacketType::family(kind.fec(), s))
            .find(|k| k.slots() <= kind.slots() && k.capacity_bytes() >= take)
            .unwrap_or(kind);
        out.push(AclPacket::new(tail_kind, take).expect("segment fits by construction"));
        left -= take;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairingState {
    pub paired: bool,
    pub auth_delay: SimTime,
}

impl PairingState {
    /// Extra delay an unpaired exchange pays before the echo is accepted.
    pub fn delay(&self) -> SimTime {
        if self.paired {
            SimTime::ZERO
        } else {
            self.auth_delay
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptOutcome {
    Delivered,
    Lost,
}

/// Connection-level retransmission state.
#[derive(Debug, Clone)]
pub struct AclLink {
    retry_limit: u32,
    consecutive_failures: u32,
    lost: bool,
    piconet_load: f64,
    attempts: u64,
    retransmissions: u64,
}

impl AclLink {
    pub fn new(retry_limit: u32, piconet_load: f64) -> Self {
        Self {
            retry_limit: retry_limit.max(1),
            consecutive_failures: 0,
            lost: false,
            piconet_load: piconet_load.clamp(0.0, 0.95),
            attempts: 0,
            retransmissions: 0,
        }
    }

    pub fn is_lost(&self) -> bool {
        self.lost
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    pub fn retransmissions(&self) -> u64 {
        self.retransmissions
    }

    pub fn piconet_load(&self) -> f64 {
        self.piconet_load
    }

    /// Slot pairs handed to other piconet members before our next exchange.
    pub fn stolen_pairs<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let mut n = 0;
        while self.piconet_load > 0.0 && rng.random_bool(self.piconet_load) {
            n += 1;
        }
        n
    }

    /// One transmission of `pkt` at channel BER `ber`.
    pub fn attempt<R: Rng + ?Sized>(
        &mut self,
        pkt: &AclPacket,
        ber: f64,
        rng: &mut R,
    ) -> Result<AttemptOutcome, TransportError> {
        if self.lost {
            return Err(TransportError::LinkLoss {
                failures: self.consecutive_failures,
            });
        }
        self.attempts += 1;
        if pkt.is_retransmission {
            self.retransmissions += 1;
        }
        if rng.random_bool(pkt.delivery_probability(ber).clamp(0.0, 1.0)) {
            self.consecutive_failures = 0;
            Ok(AttemptOutcome::Delivered)
        } else {
            self.consecutive_failures += 1;
            if self.consecutive_failures >= self.retry_limit {
                self.lost = true;
                return Err(TransportError::LinkLoss {
                    failures: self.consecutive_failures,
                });
            }
            Ok(AttemptOutcome::Lost)
        }
    }

    /// Sends `pkt` until it is acknowledged. `ber` gives the channel BER for
    /// the n-th attempt.
    pub fn transmit<R: Rng + ?Sized>(
        &mut self,
        pkt: AclPacket,
        mut ber: impl FnMut(u32) -> f64,
        rng: &mut R,
    ) -> Result<TransmitReport, TransportError> {
        let mut pkt = pkt;
        let mut elapsed = SimTime::ZERO;
        let mut n = 0u32;
        loop {
            elapsed += SLOT * (2 * self.stolen_pairs(rng));
            elapsed += pkt.kind().exchange_time();
            let outcome = self.attempt(&pkt, ber(n), rng)?;
            n += 1;
            if outcome == AttemptOutcome::Delivered {
                return Ok(TransmitReport { attempts: n, elapsed });
            }
            pkt.is_retransmission = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransmitReport {
    pub attempts: u32,
    /// Slot-aligned time from the first attempt's start to the last reply slot's end.
    pub elapsed: SimTime,
}

impl TransmitReport {
    pub fn retransmissions(&self) -> u32 {
        self.attempts.saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sender {
    Master,
    Slave,
}

/// One occupied stretch of the TDD channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotUse {
    pub sender: Sender,
    pub start_slot: u64,
    pub slots: u64,
}

/// A completed payload-carrying exchange in a schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRecord {
    pub end: SimTime,
    pub payload_bits: u64,
    pub delivered: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Schedule {
    pub records: Vec<ScheduleRecord>,
    pub slot_log: Vec<SlotUse>,
    pub duration: SimTime,
    pub link_lost: bool,
}

/// Delivered payload bits whose exchange completed within `duration`, per second.
pub fn effective_throughput(records: &[ScheduleRecord], duration: SimTime) -> Result<f64, TransportError> {
    if duration == SimTime::ZERO {
        return Err(TransportError::EmptyDuration);
    }
    let bits: u64 = records
        .iter()
        .filter(|r| r.delivered && r.end <= duration)
        .map(|r| r.payload_bits)
        .sum();
    Ok(bits as f64 / duration.as_secs_f64())
}

/// Master streams full `kind` packets back to back for `duration`.
///
/// New packets are admitted only while the cumulative payload stays under
/// `rate_cap_bps` at the packet's completion time; otherwise the master
/// spends the pair on a POLL/NULL exchange.
pub fn saturating_schedule<R: Rng + ?Sized>(
    kind: PacketType,
    duration: SimTime,
    ber: f64,
    cfg: &TransportConfig,
    rng: &mut R,
) -> Schedule {
    let mut link = AclLink::new(cfg.retry_limit, 0.0);
    let mut sched = Schedule {
        duration,
        ..Default::default()
    };
    let pkt_bits = AclPacket::full(kind).payload_bits();
    let mut admitted_bits: u64 = 0;
    let mut pending: Option<AclPacket> = None;
    let mut t = SimTime::ZERO;
    loop {
        let end = t + kind.exchange_time();
        let pkt = match pending.take() {
            Some(p) => p,
            None => {
                let allowed = (admitted_bits + pkt_bits) as f64 <= cfg.rate_cap_bps * end.as_secs_f64();
                if !allowed {
                    let idle_end = t + SLOT * 2;
                    if idle_end > duration {
                        break;
                    }
                    sched.slot_log.push(SlotUse { sender: Sender::Master, start_slot: t.slot_index(), slots: 1 });
                    sched.slot_log.push(SlotUse { sender: Sender::Slave, start_slot: t.slot_index() + 1, slots: 1 });
                    t = idle_end;
                    continue;
                }
                admitted_bits += pkt_bits;
                AclPacket::full(kind)
            }
        };
        if end > duration {
            break;
        }
        sched.slot_log.push(SlotUse { sender: Sender::Master, start_slot: t.slot_index(), slots: kind.slots() });
        sched.slot_log.push(SlotUse {
            sender: Sender::Slave,
            start_slot: t.slot_index() + kind.slots(),
            slots: 1,
        });
        match link.attempt(&pkt, ber, rng) {
            Ok(AttemptOutcome::Delivered) => sched.records.push(ScheduleRecord {
                end,
                payload_bits: pkt.payload_bits(),
                delivered: true,
            }),
            Ok(AttemptOutcome::Lost) => {
                pending = Some(AclPacket {
                    is_retransmission: true,
                    ..pkt
                });
            }
            Err(_) => {
                sched.link_lost = true;
                break;
            }
        }
        t = end;
    }
    sched
}

/// Parameters of one MTU echo probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttProbe {
    pub mtu_bytes: usize,
    pub fec: bool,
    pub retry_limit: u32,
    pub piconet_load: f64,
    pub pairing: PairingState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RttReport {
    pub rtt: SimTime,
    pub retransmissions: u32,
}

/// Sends an MTU-sized packet and waits for the immediate echo.
///
/// Each direction is segmented into 5-slot packets (DM5 with FEC, DH5
/// without); every attempt costs its slots plus the reply slot.
pub fn rtt_probe<R: Rng + ?Sized>(
    probe: &RttProbe,
    ber_out: f64,
    ber_in: f64,
    rng: &mut R,
) -> Result<RttReport, TransportError> {
    let kind = PacketType::family(probe.fec, 5);
    let mut link = AclLink::new(probe.retry_limit, probe.piconet_load);
    let mut rtt = SimTime::ZERO;
    let mut retransmissions = 0;
    for ber in [ber_out, ber_in] {
        for pkt in segment(probe.mtu_bytes, kind) {
            let report = link.transmit(pkt, |_| ber, rng).map_err(|e| match e {
                TransportError::LinkLoss { failures } => TransportError::ProbeTimeout { failures },
                other => other,
            })?;
            rtt += report.elapsed;
            retransmissions += report.retransmissions();
        }
    }
    Ok(RttReport {
        rtt: rtt + probe.pairing.delay(),
        retransmissions,
    })
}
