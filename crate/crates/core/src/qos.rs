//! DiffServ per-hop behavior on one link direction: classification, EF
//! policing and a two-class strict-priority output queue.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::forwarding::DropReason;
use crate::packet::{PacketRecord, TrafficClass, EF_DSCP};

/// Per-link settings. The DiffServ fields only matter when `qos_enabled`;
/// otherwise the link is a single FIFO of `be_queue_cap_packets`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhbConfig {
    pub ef_rate_bps: u64,
    pub ef_priority: u8,
    pub be_rate_bps: u64,
    pub link_rate_bps: u64,
    pub link_delay_us: u64,
    pub ef_bucket_burst_bits: u64,
    pub be_queue_cap_packets: usize,
    pub ef_queue_cap_packets: usize,
    pub qos_enabled: bool,
}

/// Largest datagram the canned experiments send.
pub const MAX_PACKET_BITS: u64 = 12_000;

impl Default for PhbConfig {
    fn default() -> Self {
        PhbConfig {
            ef_rate_bps: 220_000,
            ef_priority: 1,
            be_rate_bps: 1_780_000,
            link_rate_bps: 2_000_000,
            link_delay_us: 50_000,
            ef_bucket_burst_bits: 2 * MAX_PACKET_BITS,
            be_queue_cap_packets: 100,
            ef_queue_cap_packets: 50,
            qos_enabled: true,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PhbError {
    #[error("`{0}` must be positive")]
    NotPositive(&'static str),
    #[error("ef_rate_bps + be_rate_bps = {sum} exceeds link_rate_bps = {link}")]
    Oversubscribed { sum: u64, link: u64 },
}

impl PhbConfig {
    /// A plain link without DiffServ.
    pub fn plain(link_rate_bps: u64, link_delay_us: u64) -> Self {
        PhbConfig {
            link_rate_bps,
            link_delay_us,
            qos_enabled: false,
            ..PhbConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PhbError> {
        if self.link_rate_bps == 0 {
            return Err(PhbError::NotPositive("link_rate_bps"));
        }
        if self.be_queue_cap_packets == 0 {
            return Err(PhbError::NotPositive("be_queue_cap_packets"));
        }
        if !self.qos_enabled {
            return Ok(());
        }
        let positive = [
            ("ef_rate_bps", self.ef_rate_bps),
            ("be_rate_bps", self.be_rate_bps),
            ("ef_bucket_burst_bits", self.ef_bucket_burst_bits),
            ("ef_queue_cap_packets", self.ef_queue_cap_packets as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(PhbError::NotPositive(name));
            }
        }
        let sum = self.ef_rate_bps + self.be_rate_bps;
        if sum > self.link_rate_bps {
            return Err(PhbError::Oversubscribed {
                sum,
                link: self.link_rate_bps,
            });
        }
        Ok(())
    }

    /// Time to clock `bits` onto the link, rounded up to whole microseconds.
    pub fn serialization_us(&self, bits: u64) -> u64 {
        let num = u128::from(bits) * 1_000_000;
        let rate = u128::from(self.link_rate_bps);
        num.div_ceil(rate) as u64
    }
}

/// Class of a packet. The top label's class bits win over the TOS byte so
/// core routers never look inside the payload.
pub fn classify(packet: &PacketRecord, ef_dscp: u8) -> TrafficClass {
    match packet.top() {
        Some(top) => TrafficClass::from_class_bits(top.class_bits),
        None => TrafficClass::from_tos(packet.tos, ef_dscp),
    }
}

/// TOS byte a sender writes for `class` with the default EF codepoint.
pub fn mark(class: TrafficClass) -> u8 {
    match class {
        TrafficClass::Ef => EF_DSCP << 2,
        TrafficClass::Be => 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoliceResult {
    Conform,
    Exceed,
}

/// Tokens are kept in micro-bits so refill is exact integer arithmetic:
/// one microsecond at `rate_bps` adds `rate_bps` micro-bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBucket {
    rate_bps: u64,
    burst_bits: u64,
    tokens_ubits: u128,
    last_update_us: u64,
}

const MICRO: u128 = 1_000_000;

impl TokenBucket {
    /// Starts full.
    pub fn new(rate_bps: u64, burst_bits: u64) -> Self {
        TokenBucket {
            rate_bps,
            burst_bits,
            tokens_ubits: u128::from(burst_bits) * MICRO,
            last_update_us: 0,
        }
    }

    /// Starts empty at `now_us`.
    pub fn empty_at(rate_bps: u64, burst_bits: u64, now_us: u64) -> Self {
        TokenBucket {
            rate_bps,
            burst_bits,
            tokens_ubits: 0,
            last_update_us: now_us,
        }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    pub fn burst_bits(&self) -> u64 {
        self.burst_bits
    }

    pub fn tokens_bits(&self) -> f64 {
        self.tokens_ubits as f64 / MICRO as f64
    }

    pub fn last_update_us(&self) -> u64 {
        self.last_update_us
    }

    pub fn within_bounds(&self) -> bool {
        self.tokens_ubits <= u128::from(self.burst_bits) * MICRO
    }

    fn refill(&mut self, now_us: u64) {
        // a stale timestamp refills nothing
        let elapsed = now_us.saturating_sub(self.last_update_us);
        let cap = u128::from(self.burst_bits) * MICRO;
        let added = u128::from(elapsed) * u128::from(self.rate_bps);
        self.tokens_ubits = (self.tokens_ubits + added).min(cap);
        self.last_update_us = self.last_update_us.max(now_us);
    }

    pub fn police(&mut self, bits: u64, now_us: u64) -> PoliceResult {
        self.refill(now_us);
        let need = u128::from(bits) * MICRO;
        if self.tokens_ubits >= need {
            self.tokens_ubits -= need;
            PoliceResult::Conform
        } else {
            PoliceResult::Exceed
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueuedPacket {
    pub packet: PacketRecord,
    pub enqueued_at_us: u64,
}

#[derive(Clone, Debug)]
pub struct ClassQueue {
    pub class: TrafficClass,
    fifo: VecDeque<QueuedPacket>,
    cap: usize,
    pub drops: u64,
}

impl ClassQueue {
    pub fn new(class: TrafficClass, cap: usize) -> Self {
        ClassQueue {
            class,
            fifo: VecDeque::new(),
            cap,
            drops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    fn push(&mut self, item: QueuedPacket) -> Result<(), QueuedPacket> {
        if self.fifo.len() >= self.cap {
            self.drops += 1;
            return Err(item);
        }
        self.fifo.push_back(item);
        Ok(())
    }

    fn pop(&mut self) -> Option<QueuedPacket> {
        self.fifo.pop_front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedPacket> {
        self.fifo.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnqueueResult {
    Queued,
    Dropped(DropReason, Box<PacketRecord>),
}

/// Output side of one link direction.
#[derive(Clone, Debug)]
pub struct LinkState {
    pub phb: PhbConfig,
    pub ef_bucket: TokenBucket,
    pub ef: ClassQueue,
    pub be: ClassQueue,
    pub ef_dscp: u8,
}

impl LinkState {
    pub fn new(phb: PhbConfig, ef_dscp: u8) -> Self {
        LinkState {
            phb,
            ef_bucket: TokenBucket::new(phb.ef_rate_bps, phb.ef_bucket_burst_bits),
            ef: ClassQueue::new(TrafficClass::Ef, phb.ef_queue_cap_packets),
            be: ClassQueue::new(TrafficClass::Be, phb.be_queue_cap_packets),
            ef_dscp,
        }
    }

    pub fn queued(&self) -> usize {
        self.ef.len() + self.be.len()
    }

    /// Polices EF (when DiffServ is on) and appends to the class queue.
    pub fn enqueue(&mut self, packet: PacketRecord, now_us: u64) -> EnqueueResult {
        let item = QueuedPacket {
            packet,
            enqueued_at_us: now_us,
        };
        if !self.phb.qos_enabled {
            return match self.be.push(item) {
                Ok(()) => EnqueueResult::Queued,
                Err(q) => EnqueueResult::Dropped(DropReason::QueueFull, Box::new(q.packet)),
            };
        }
        let class = classify(&item.packet, self.ef_dscp);
        let queue = match class {
            TrafficClass::Ef => {
                let bits = item.packet.wire_bits();
                if self.ef_bucket.police(bits, now_us) == PoliceResult::Exceed {
                    return EnqueueResult::Dropped(DropReason::Policed, Box::new(item.packet));
                }
                &mut self.ef
            }
            TrafficClass::Be => &mut self.be,
        };
        match queue.push(item) {
            Ok(()) => EnqueueResult::Queued,
            Err(q) => EnqueueResult::Dropped(DropReason::QueueFull, Box::new(q.packet)),
        }
    }

    /// Next packet for an idle transmitter: EF first whenever it is waiting.
    pub fn dequeue_next(&mut self) -> Option<QueuedPacket> {
        if self.phb.qos_enabled {
            if let Some(p) = self.ef.pop() {
                return Some(p);
            }
        }
        self.be.pop()
    }
}
