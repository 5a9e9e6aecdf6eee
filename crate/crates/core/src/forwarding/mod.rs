//! The two rival forwarding paths: IP longest-prefix routing and MPLS label
//! switching. Both return a decision together with the modeled time the node
//! spends making it.

mod fib;
mod label_table;

pub use fib::{Fib, FibLookup, RouteEntry};
pub use label_table::{FtnEntry, IlmKey, LabelOp, Lib, LibError, NhlfeEntry};

use serde::{Deserialize, Serialize};

use crate::ids::{IfaceId, NextHop, NodeId};
use crate::packet::{PacketError, PacketRecord};
use crate::prefix::Prefix;

/// Modeled per-decision processing time. Lookup costs reproduce the shape of
/// the two structures (trie depth vs. flat index); the per-kbit terms model
/// the work each path does on the packet body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LookupCostModel {
    pub ip_cost_per_trie_node_us: f64,
    pub mpls_lookup_us: f64,
    pub edge_label_op_us: f64,
    pub per_hop_fixed_us: f64,
    pub ip_cost_per_kbit_us: f64,
    pub mpls_cost_per_kbit_us: f64,
}

impl Default for LookupCostModel {
    fn default() -> Self {
        LookupCostModel {
            ip_cost_per_trie_node_us: 0.5,
            mpls_lookup_us: 320.0,
            edge_label_op_us: 10.0,
            per_hop_fixed_us: 5.0,
            ip_cost_per_kbit_us: 600.0,
            mpls_cost_per_kbit_us: 140.0,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("cost model field `{field}` must be finite and non-negative, got {value}")]
pub struct CostModelError {
    pub field: &'static str,
    pub value: f64,
}

impl LookupCostModel {
    pub fn validate(&self) -> Result<(), CostModelError> {
        let fields = [
            ("ip_cost_per_trie_node_us", self.ip_cost_per_trie_node_us),
            ("mpls_lookup_us", self.mpls_lookup_us),
            ("edge_label_op_us", self.edge_label_op_us),
            ("per_hop_fixed_us", self.per_hop_fixed_us),
            ("ip_cost_per_kbit_us", self.ip_cost_per_kbit_us),
            ("mpls_cost_per_kbit_us", self.mpls_cost_per_kbit_us),
        ];
        for (field, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(CostModelError { field, value });
            }
        }
        Ok(())
    }

    pub fn ip_lookup_us(&self, nodes_visited: u32) -> f64 {
        self.ip_cost_per_trie_node_us * f64::from(nodes_visited)
    }

    /// Transit IP decision: trie walk, fixed cost and body handling.
    pub fn ip_hop_us(&self, nodes_visited: u32, wire_bits: u64) -> f64 {
        self.ip_lookup_us(nodes_visited) + self.per_hop_fixed_us + self.ip_cost_per_kbit_us * wire_bits as f64 / 1000.0
    }

    /// Label swap at a core router.
    pub fn mpls_core_us(&self, wire_bits: u64) -> f64 {
        self.mpls_lookup_us + self.per_hop_fixed_us + self.mpls_cost_per_kbit_us * wire_bits as f64 / 1000.0
    }

    /// Push or pop at an edge router.
    pub fn mpls_edge_us(&self, wire_bits: u64) -> f64 {
        self.mpls_core_us(wire_bits) + self.edge_label_op_us
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TtlExpired,
    NoRoute,
    NoBinding,
    Policed,
    QueueFull,
    Malformed,
}

impl DropReason {
    pub const ALL: [DropReason; 6] = [
        DropReason::TtlExpired,
        DropReason::NoRoute,
        DropReason::NoBinding,
        DropReason::Policed,
        DropReason::QueueFull,
        DropReason::Malformed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::TtlExpired => "ttl_expired",
            DropReason::NoRoute => "no_route",
            DropReason::NoBinding => "no_binding",
            DropReason::Policed => "policed",
            DropReason::QueueFull => "queue_full",
            DropReason::Malformed => "malformed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ForwardDecision {
    Deliver,
    Relay { next: NextHop, node_delay_us: f64 },
    Drop(DropReason),
}

/// How the packet reached the deciding node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hop {
    /// Generated here. No TTL decrement, no processing delay.
    Originate,
    Transit(IfaceId),
}

/// Forwarding state of one node.
#[derive(Clone, Debug)]
pub struct ForwardingNode {
    pub id: NodeId,
    pub local: Option<Prefix>,
    pub fib: Fib,
    pub lib: Lib,
}

impl ForwardingNode {
    pub fn new(id: NodeId, local: Option<Prefix>) -> Self {
        ForwardingNode {
            id,
            local,
            fib: Fib::new(),
            lib: Lib::new(),
        }
    }

    pub fn is_local(&self, addr: u32) -> bool {
        self.local.is_some_and(|p| p.contains(addr))
    }
}

fn decrement_ip_ttl(packet: &mut PacketRecord, hop: Hop) -> Result<(), DropReason> {
    if let Hop::Transit(_) = hop {
        if packet.ip_ttl <= 1 {
            return Err(DropReason::TtlExpired);
        }
        packet.ip_ttl -= 1;
    }
    Ok(())
}

/// Classic routing: longest-prefix match on the destination address.
pub fn forward_ip(
    node: &ForwardingNode,
    packet: &mut PacketRecord,
    hop: Hop,
    cost: &LookupCostModel,
) -> ForwardDecision {
    if packet.stack_depth() > 0 {
        // a plain router cannot see past the shim
        return ForwardDecision::Drop(DropReason::NoBinding);
    }
    if node.is_local(packet.dst_addr) {
        return ForwardDecision::Deliver;
    }
    if let Err(reason) = decrement_ip_ttl(packet, hop) {
        return ForwardDecision::Drop(reason);
    }
    let hit = node.fib.lookup(packet.dst_addr);
    let Some(route) = hit.route else {
        return ForwardDecision::Drop(DropReason::NoRoute);
    };
    let node_delay_us = match hop {
        Hop::Originate => 0.0,
        Hop::Transit(_) => cost.ip_hop_us(hit.nodes_visited, packet.wire_bits()),
    };
    ForwardDecision::Relay {
        next: route.next,
        node_delay_us,
    }
}

fn transit_delay(hop: Hop, us: f64) -> f64 {
    match hop {
        Hop::Originate => 0.0,
        Hop::Transit(_) => us,
    }
}

/// Label switching. Unlabeled packets are classified into a FEC and pushed
/// at ingress; labeled packets are switched on the incoming label map.
pub fn forward_mpls(
    node: &ForwardingNode,
    packet: &mut PacketRecord,
    hop: Hop,
    cost: &LookupCostModel,
) -> ForwardDecision {
    let arriving_bits = packet.wire_bits();
    if packet.stack_depth() == 0 {
        if node.is_local(packet.dst_addr) {
            return ForwardDecision::Deliver;
        }
        let Some((_, ftn)) = node.lib.classify(packet.dst_addr) else {
            return forward_ip(node, packet, hop, cost);
        };
        let ftn = *ftn;
        if let Err(reason) = decrement_ip_ttl(packet, hop) {
            return ForwardDecision::Drop(reason);
        }
        if let FtnEntry::Push { label, .. } = ftn {
            let class_bits = packet.traffic_class.class_bits();
            if packet.push_label(label, class_bits, packet.ip_ttl).is_err() {
                return ForwardDecision::Drop(DropReason::Malformed);
            }
        }
        return ForwardDecision::Relay {
            next: ftn.next(),
            node_delay_us: transit_delay(hop, cost.mpls_edge_us(arriving_bits)),
        };
    }

    let Hop::Transit(in_iface) = hop else {
        return ForwardDecision::Drop(DropReason::NoBinding);
    };
    switch_label(node, packet, in_iface, arriving_bits, cost)
}

fn switch_label(
    node: &ForwardingNode,
    packet: &mut PacketRecord,
    in_iface: IfaceId,
    arriving_bits: u64,
    cost: &LookupCostModel,
) -> ForwardDecision {
    let Some(top) = packet.top().copied() else {
        return ForwardDecision::Drop(DropReason::Malformed);
    };
    let key = IlmKey {
        in_iface,
        label: top.label,
    };
    let entry = match node.lib.lookup(key) {
        Ok(Some(e)) => *e,
        Ok(None) => return ForwardDecision::Drop(DropReason::NoBinding),
        Err(_) => return ForwardDecision::Drop(DropReason::Malformed),
    };
    match entry.op {
        LabelOp::Swap(new_label) => {
            let Some(next) = entry.next else {
                return ForwardDecision::Drop(DropReason::Malformed);
            };
            match packet.swap_label(new_label) {
                Ok(()) => ForwardDecision::Relay {
                    next,
                    node_delay_us: cost.mpls_core_us(arriving_bits),
                },
                Err(PacketError::TtlExpired) => ForwardDecision::Drop(DropReason::TtlExpired),
                Err(_) => ForwardDecision::Drop(DropReason::Malformed),
            }
        }
        LabelOp::PushAdditional(new_label) => {
            let Some(next) = entry.next else {
                return ForwardDecision::Drop(DropReason::Malformed);
            };
            if top.ttl <= 1 {
                return ForwardDecision::Drop(DropReason::TtlExpired);
            }
            if packet.push_label(new_label, top.class_bits, top.ttl - 1).is_err() {
                return ForwardDecision::Drop(DropReason::Malformed);
            }
            ForwardDecision::Relay {
                next,
                node_delay_us: cost.mpls_edge_us(arriving_bits),
            }
        }
        LabelOp::Pop => {
            if top.ttl <= 1 {
                return ForwardDecision::Drop(DropReason::TtlExpired);
            }
            let remaining_ttl = top.ttl - 1;
            // stack was checked non-empty above
            let _ = packet.pop_label();
            if packet.stack_depth() == 0 {
                packet.ip_ttl = packet.ip_ttl.min(remaining_ttl);
            }
            match entry.next {
                Some(next) => ForwardDecision::Relay {
                    next,
                    node_delay_us: cost.mpls_edge_us(arriving_bits),
                },
                None if packet.stack_depth() > 0 => switch_label(node, packet, in_iface, arriving_bits, cost),
                None if node.is_local(packet.dst_addr) => ForwardDecision::Deliver,
                None => forward_ip(node, packet, Hop::Transit(in_iface), cost),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{EF_TOS, LABEL_LIMIT};

    fn hop(n: usize, i: u32) -> NextHop {
        NextHop {
            node: NodeId(n),
            iface: IfaceId(i),
        }
    }

    fn packet_to(dst: u32) -> PacketRecord {
        PacketRecord::new(1, 0x0a00_0001, dst, 0, 4000)
    }

    fn router_with_route(dst: &str) -> ForwardingNode {
        let mut node = ForwardingNode::new(NodeId(1), Some("10.0.1.0/24".parse().unwrap()));
        node.fib.insert(RouteEntry {
            prefix: dst.parse().unwrap(),
            next: hop(2, 1),
        });
        node
    }

    #[test]
    fn ip_ttl_one_at_relay_is_dropped() {
        let node = router_with_route("10.0.9.0/24");
        let mut p = packet_to(0x0a00_0901);
        p.ip_ttl = 1;
        let d = forward_ip(&node, &mut p, Hop::Transit(IfaceId(0)), &LookupCostModel::default());
        assert_eq!(d, ForwardDecision::Drop(DropReason::TtlExpired));
    }

    #[test]
    fn ip_local_delivery() {
        let node = router_with_route("10.0.9.0/24");
        let mut p = packet_to(0x0a00_0101);
        let d = forward_ip(&node, &mut p, Hop::Transit(IfaceId(0)), &LookupCostModel::default());
        assert_eq!(d, ForwardDecision::Deliver);
    }

    #[test]
    fn ip_no_route() {
        let node = router_with_route("10.0.9.0/24");
        let mut p = packet_to(0x0b00_0001);
        let d = forward_ip(&node, &mut p, Hop::Transit(IfaceId(0)), &LookupCostModel::default());
        assert_eq!(d, ForwardDecision::Drop(DropReason::NoRoute));
    }

    fn fixed_costs() -> LookupCostModel {
        LookupCostModel {
            ip_cost_per_trie_node_us: 0.5,
            mpls_lookup_us: 360.0,
            edge_label_op_us: 20.0,
            per_hop_fixed_us: 5.0,
            ip_cost_per_kbit_us: 500.0,
            mpls_cost_per_kbit_us: 90.0,
        }
    }

    #[test]
    fn ip_relay_cost_is_trie_plus_fixed_plus_body() {
        let cost = fixed_costs();
        let node = router_with_route("10.0.9.0/24");
        let mut p = packet_to(0x0a00_0901);
        let d = forward_ip(&node, &mut p, Hop::Transit(IfaceId(0)), &cost);
        // /24 route: root + 24 levels
        let expected = 0.5 * 25.0 + 5.0 + 500.0 * 4.160;
        match d {
            ForwardDecision::Relay { next, node_delay_us } => {
                assert_eq!(next, hop(2, 1));
                assert!((node_delay_us - expected).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.ip_ttl, 63);
    }

    #[test]
    fn origination_is_free_and_keeps_ttl() {
        let node = router_with_route("10.0.9.0/24");
        let mut p = packet_to(0x0a00_0901);
        let d = forward_ip(&node, &mut p, Hop::Originate, &LookupCostModel::default());
        assert_eq!(
            d,
            ForwardDecision::Relay {
                next: hop(2, 1),
                node_delay_us: 0.0
            }
        );
        assert_eq!(p.ip_ttl, 64);
    }

    #[test]
    fn mpls_ingress_pushes_with_class_and_ttl() {
        let cost = fixed_costs();
        let mut node = ForwardingNode::new(NodeId(1), None);
        node.lib
            .bind_fec(
                "10.0.9.0/24".parse().unwrap(),
                FtnEntry::Push {
                    label: 16,
                    next: hop(2, 1),
                },
            )
            .unwrap();
        let mut p = PacketRecord::new(1, 1, 0x0a00_0901, EF_TOS, 4000);
        let d = forward_mpls(&node, &mut p, Hop::Transit(IfaceId(0)), &cost);
        let top = *p.top().unwrap();
        assert_eq!(
            (top.label, top.class_bits, top.ttl, top.bottom_of_stack),
            (16, 5, 63, true)
        );
        match d {
            ForwardDecision::Relay { node_delay_us, .. } => {
                let expected = 360.0 + 20.0 + 5.0 + 90.0 * 4.160;
                assert!((node_delay_us - expected).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mpls_core_without_binding_drops() {
        let node = ForwardingNode::new(NodeId(3), None);
        let mut p = packet_to(0x0a00_0901);
        p.push_label(99, 0, 64).unwrap();
        let d = forward_mpls(&node, &mut p, Hop::Transit(IfaceId(0)), &LookupCostModel::default());
        assert_eq!(d, ForwardDecision::Drop(DropReason::NoBinding));
    }

    #[test]
    fn mpls_swap_and_pop() {
        let cost = LookupCostModel::default();
        let mut node = ForwardingNode::new(NodeId(3), None);
        node.lib
            .install(
                IlmKey {
                    in_iface: IfaceId(0),
                    label: 20,
                },
                NhlfeEntry {
                    op: LabelOp::Swap(21),
                    next: Some(hop(4, 1)),
                },
            )
            .unwrap();
        node.lib
            .install(
                IlmKey {
                    in_iface: IfaceId(0),
                    label: 30,
                },
                NhlfeEntry {
                    op: LabelOp::Pop,
                    next: Some(hop(5, 1)),
                },
            )
            .unwrap();
        let mut p = packet_to(0x0a00_0901);
        p.push_label(20, 0, 10).unwrap();
        let d = forward_mpls(&node, &mut p, Hop::Transit(IfaceId(0)), &cost);
        assert!(matches!(d, ForwardDecision::Relay { next, .. } if next == hop(4, 1)));
        assert_eq!(p.top().unwrap().label, 21);
        assert_eq!(p.top().unwrap().ttl, 9);

        let mut q = packet_to(0x0a00_0901);
        q.push_label(30, 0, 10).unwrap();
        let d = forward_mpls(&node, &mut q, Hop::Transit(IfaceId(0)), &cost);
        assert!(matches!(d, ForwardDecision::Relay { next, .. } if next == hop(5, 1)));
        assert_eq!(q.stack_depth(), 0);
        assert_eq!(q.ip_ttl, 9);
    }

    #[test]
    fn mpls_pop_to_local_delivers() {
        let mut node = ForwardingNode::new(NodeId(3), Some("10.0.9.0/24".parse().unwrap()));
        node.lib
            .install(
                IlmKey {
                    in_iface: IfaceId(1),
                    label: 16,
                },
                NhlfeEntry {
                    op: LabelOp::Pop,
                    next: None,
                },
            )
            .unwrap();
        let mut p = packet_to(0x0a00_0901);
        p.push_label(16, 0, 64).unwrap();
        let d = forward_mpls(&node, &mut p, Hop::Transit(IfaceId(1)), &LookupCostModel::default());
        assert_eq!(d, ForwardDecision::Deliver);
    }

    #[test]
    fn mpls_malformed_label_is_dropped() {
        let node = ForwardingNode::new(NodeId(3), None);
        let mut p = packet_to(1);
        p.push_label(LABEL_LIMIT - 1, 0, 64).unwrap();
        let d = forward_mpls(&node, &mut p, Hop::Transit(IfaceId(0)), &LookupCostModel::default());
        assert_eq!(d, ForwardDecision::Drop(DropReason::NoBinding));
    }

    #[test]
    fn ilm_cost_is_independent_of_table_size() {
        let cost = LookupCostModel::default();
        let mut small = ForwardingNode::new(NodeId(0), None);
        let mut large = ForwardingNode::new(NodeId(0), None);
        for (node, n) in [(&mut small, 1u32), (&mut large, 50_000)] {
            for l in 0..n {
                node.lib
                    .install(
                        IlmKey {
                            in_iface: IfaceId(0),
                            label: 16 + l,
                        },
                        NhlfeEntry {
                            op: LabelOp::Swap(16 + l),
                            next: Some(hop(1, 0)),
                        },
                    )
                    .unwrap();
            }
        }
        let run = |node: &ForwardingNode| {
            let mut p = packet_to(1);
            p.push_label(16, 0, 64).unwrap();
            match forward_mpls(node, &mut p, Hop::Transit(IfaceId(0)), &cost) {
                ForwardDecision::Relay { node_delay_us, .. } => node_delay_us,
                other => panic!("{other:?}"),
            }
        };
        assert_eq!(run(&small).to_bits(), run(&large).to_bits());
    }

    #[test]
    fn negative_cost_rejected() {
        let cost = LookupCostModel {
            edge_label_op_us: -1.0,
            ..LookupCostModel::default()
        };
        assert_eq!(cost.validate().unwrap_err().field, "edge_label_op_us");
    }
}
