//! The simulated packet: IP header fields, an MPLS label stack and the
//! bookkeeping the engine attaches to it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the label field in the shim header.
pub const LABEL_LIMIT: u32 = 1 << 20;
pub const CLASS_LIMIT: u8 = 8;
/// 20-byte IPv4 header, no options.
pub const IP_HEADER_BITS: u64 = 160;
pub const SHIM_BITS: u64 = 32;
pub const DEFAULT_IP_TTL: u8 = 64;
/// DiffServ codepoint for Expedited Forwarding.
pub const EF_DSCP: u8 = 46;
/// TOS byte carrying [`EF_DSCP`].
pub const EF_TOS: u8 = EF_DSCP << 2;
/// Label class bits treated as EF when a stack is present.
pub const EF_CLASS_BITS: u8 = 5;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum PacketError {
    #[error("label {0} does not fit in 20 bits")]
    LabelOutOfRange(u32),
    #[error("class bits {0} do not fit in 3 bits")]
    ClassOutOfRange(u8),
    #[error("ttl {0} outside [1, 255]")]
    TtlOutOfRange(u8),
    #[error("label stack is empty")]
    EmptyStack,
    #[error("label ttl expired")]
    TtlExpired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrafficClass {
    #[serde(rename = "EF")]
    Ef,
    #[serde(rename = "BE")]
    Be,
}

impl TrafficClass {
    /// EF iff the DSCP (upper six bits of the TOS byte) equals `ef_dscp`.
    pub fn from_tos(tos: u8, ef_dscp: u8) -> Self {
        if tos >> 2 == ef_dscp {
            TrafficClass::Ef
        } else {
            TrafficClass::Be
        }
    }

    pub fn from_class_bits(bits: u8) -> Self {
        if bits == EF_CLASS_BITS {
            TrafficClass::Ef
        } else {
            TrafficClass::Be
        }
    }

    /// Class bits written into a pushed label.
    pub fn class_bits(self) -> u8 {
        match self {
            TrafficClass::Ef => EF_CLASS_BITS,
            TrafficClass::Be => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrafficClass::Ef => "EF",
            TrafficClass::Be => "BE",
        }
    }
}

/// One 32-bit MPLS shim entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabelStackEntry {
    pub label: u32,
    pub class_bits: u8,
    pub bottom_of_stack: bool,
    pub ttl: u8,
}

impl LabelStackEntry {
    pub fn new(label: u32, class_bits: u8, bottom_of_stack: bool, ttl: u8) -> Result<Self, PacketError> {
        check_label(label)?;
        if class_bits >= CLASS_LIMIT {
            return Err(PacketError::ClassOutOfRange(class_bits));
        }
        Ok(LabelStackEntry {
            label,
            class_bits,
            bottom_of_stack,
            ttl,
        })
    }
}

pub fn check_label(label: u32) -> Result<(), PacketError> {
    if label >= LABEL_LIMIT {
        Err(PacketError::LabelOutOfRange(label))
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PacketRecord {
    pub packet_id: u64,
    pub src_addr: u32,
    pub dst_addr: u32,
    pub tos: u8,
    pub ip_ttl: u8,
    pub payload_bits: u64,
    /// Top of stack first.
    label_stack: Vec<LabelStackEntry>,
    pub traffic_class: TrafficClass,
    pub created_at_us: u64,
    pub tunnel_wrapped: bool,
    /// Payload size before encapsulation, restored by the far tunnel end.
    pub inner_payload_bits: Option<u64>,
    /// Generator that produced the packet.
    pub flow_id: u32,
    pub is_echo_reply: bool,
    /// Time spent waiting in output queues, summed over hops.
    pub queue_wait_us: u64,
}

impl PacketRecord {
    /// A fresh unlabeled packet. `payload_bits` below 8 is raised to 8.
    pub fn new(packet_id: u64, src_addr: u32, dst_addr: u32, tos: u8, payload_bits: u64) -> Self {
        PacketRecord {
            packet_id,
            src_addr,
            dst_addr,
            tos,
            ip_ttl: DEFAULT_IP_TTL,
            payload_bits: payload_bits.max(8),
            label_stack: Vec::new(),
            traffic_class: TrafficClass::from_tos(tos, EF_DSCP),
            created_at_us: 0,
            tunnel_wrapped: false,
            inner_payload_bits: None,
            flow_id: 0,
            is_echo_reply: false,
            queue_wait_us: 0,
        }
    }

    pub fn labels(&self) -> &[LabelStackEntry] {
        &self.label_stack
    }

    pub fn stack_depth(&self) -> usize {
        self.label_stack.len()
    }

    pub fn top(&self) -> Option<&LabelStackEntry> {
        self.label_stack.first()
    }

    /// IP datagram size: payload plus the fixed IP header.
    pub fn ip_bits(&self) -> u64 {
        self.payload_bits + IP_HEADER_BITS
    }

    /// Bits serialized on the wire. An encapsulated payload already carries
    /// the tunnel header, so it is not added again here.
    pub fn wire_bits(&self) -> u64 {
        self.ip_bits() + SHIM_BITS * self.label_stack.len() as u64
    }

    pub fn push_label(&mut self, label: u32, class_bits: u8, ttl: u8) -> Result<(), PacketError> {
        if ttl == 0 {
            return Err(PacketError::TtlOutOfRange(ttl));
        }
        let bottom = self.label_stack.is_empty();
        let entry = LabelStackEntry::new(label, class_bits, bottom, ttl)?;
        self.label_stack.insert(0, entry);
        Ok(())
    }

    pub fn pop_label(&mut self) -> Result<LabelStackEntry, PacketError> {
        if self.label_stack.is_empty() {
            return Err(PacketError::EmptyStack);
        }
        Ok(self.label_stack.remove(0))
    }

    /// Replaces the top label and decrements its TTL. On expiry the stack is
    /// left untouched and the caller drops the packet.
    pub fn swap_label(&mut self, new_label: u32) -> Result<(), PacketError> {
        check_label(new_label)?;
        let top = self.label_stack.first_mut().ok_or(PacketError::EmptyStack)?;
        if top.ttl <= 1 {
            return Err(PacketError::TtlExpired);
        }
        top.label = new_label;
        top.ttl -= 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pkt() -> PacketRecord {
        PacketRecord::new(1, 0x0a000001, 0x0a000a01, 0, 8000)
    }

    fn entry(label: u32, class_bits: u8, bos: bool, ttl: u8) -> LabelStackEntry {
        LabelStackEntry {
            label,
            class_bits,
            bottom_of_stack: bos,
            ttl,
        }
    }

    #[test]
    fn first_push_is_bottom_of_stack() {
        let mut p = pkt();
        p.push_label(100, 5, 64).unwrap();
        assert_eq!(p.labels(), &[entry(100, 5, true, 64)]);
    }

    #[test]
    fn second_push_keeps_s_on_deepest() {
        let mut p = pkt();
        p.push_label(100, 5, 64).unwrap();
        p.push_label(200, 0, 64).unwrap();
        assert_eq!(p.labels(), &[entry(200, 0, false, 64), entry(100, 5, true, 64)]);
    }

    #[test]
    fn push_rejects_out_of_range_fields() {
        let mut p = pkt();
        assert_eq!(
            p.push_label(LABEL_LIMIT, 0, 64),
            Err(PacketError::LabelOutOfRange(LABEL_LIMIT))
        );
        assert_eq!(p.push_label(1, 8, 64), Err(PacketError::ClassOutOfRange(8)));
        assert_eq!(p.push_label(1, 0, 0), Err(PacketError::TtlOutOfRange(0)));
        assert_eq!(p.stack_depth(), 0);
    }

    #[test]
    fn pop_returns_top() {
        let mut p = pkt();
        p.push_label(100, 5, 64).unwrap();
        p.push_label(200, 0, 64).unwrap();
        assert_eq!(p.pop_label(), Ok(entry(200, 0, false, 64)));
        assert_eq!(p.labels(), &[entry(100, 5, true, 64)]);
        assert_eq!(p.pop_label(), Ok(entry(100, 5, true, 64)));
        assert!(p.labels().is_empty());
        assert_eq!(p.pop_label(), Err(PacketError::EmptyStack));
    }

    #[test]
    fn swap_preserves_class_and_s() {
        let mut p = pkt();
        p.push_label(100, 5, 64).unwrap();
        p.swap_label(300).unwrap();
        assert_eq!(p.top(), Some(&entry(300, 5, true, 63)));
    }

    #[test]
    fn swap_errors() {
        let mut p = pkt();
        assert_eq!(p.swap_label(300), Err(PacketError::EmptyStack));
        p.push_label(100, 5, 1).unwrap();
        assert_eq!(p.swap_label(300), Err(PacketError::TtlExpired));
        assert_eq!(p.top().unwrap().label, 100);
    }

    #[test]
    fn wire_size_counts_shims() {
        let mut p = pkt();
        let before = p.wire_bits();
        assert_eq!(before, 8000 + IP_HEADER_BITS);
        p.push_label(16, 0, 64).unwrap();
        assert_eq!(p.wire_bits(), before + 32);
    }

    #[test]
    fn ef_tos_classifies_as_ef() {
        assert_eq!(EF_TOS, 0xB8);
        assert_eq!(TrafficClass::from_tos(EF_TOS, EF_DSCP), TrafficClass::Ef);
        assert_eq!(TrafficClass::from_tos(0, EF_DSCP), TrafficClass::Be);
        // ECN bits do not change the class
        assert_eq!(TrafficClass::from_tos(EF_TOS | 1, EF_DSCP), TrafficClass::Ef);
    }

    #[derive(Clone, Debug)]
    enum Op {
        Push(u32, u8, u8),
        Pop,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..LABEL_LIMIT, 0u8..8, 1u8..=255).prop_map(|(l, c, t)| Op::Push(l, c, t)),
            Just(Op::Pop),
        ]
    }

    proptest! {
        #[test]
        fn bottom_of_stack_only_on_deepest(ops in prop::collection::vec(op(), 0..64)) {
            let mut p = pkt();
            for op in ops {
                let before = p.wire_bits();
                match op {
                    Op::Push(l, c, t) => {
                        p.push_label(l, c, t).unwrap();
                        prop_assert_eq!(p.wire_bits(), before + 32);
                    }
                    Op::Pop => { let _ = p.pop_label(); }
                }
                let n = p.labels().len();
                for (i, e) in p.labels().iter().enumerate() {
                    prop_assert_eq!(e.bottom_of_stack, i + 1 == n);
                }
            }
        }

        #[test]
        fn pop_undoes_push(
            depth in 0usize..4,
            label in 0..LABEL_LIMIT,
            class in 0u8..8,
            ttl in 1u8..=255,
        ) {
            let mut p = pkt();
            for i in 0..depth {
                p.push_label(16 + i as u32, 0, 64).unwrap();
            }
            let original = p.clone();
            p.push_label(label, class, ttl).unwrap();
            let popped = p.pop_label().unwrap();
            prop_assert_eq!(popped.label, label);
            prop_assert_eq!(p, original);
        }
    }
}
