#![allow(clippy::needless_range_loop)]

use lspsim_core::control::{NodeRole, Topology};
use lspsim_core::forwarding::{ForwardDecision, Hop, LookupCostModel};
use lspsim_core::packet::PacketRecord;
use lspsim_core::qos::PhbConfig;
use lspsim_core::sim::{trace_path, Network, NodeMode};
use lspsim_core::{NodeId, Prefix};
use proptest::prelude::*;

#[derive(Clone, Debug)]
struct Shape {
    roles: Vec<bool>,
    parents: Vec<usize>,
    extra: Vec<(usize, usize)>,
    hosts: Vec<usize>,
}

fn shape() -> impl Strategy<Value = Shape> {
    (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<prop::sample::Index>(), n - 1),
            prop::collection::vec((0..n, 0..n), 0..=n),
            prop::collection::vec(0..n, 1..=4),
        )
            .prop_map(|(roles, parents, extra, hosts)| Shape {
                parents: parents.iter().enumerate().map(|(i, ix)| ix.index(i + 1)).collect(),
                roles,
                extra,
                hosts,
            })
    })
}

fn prefix(i: usize) -> Prefix {
    Prefix::new(0x0a00_0000 | ((i as u32) << 8), 24).unwrap()
}

fn build(s: &Shape) -> Topology {
    let link = PhbConfig::plain(100_000_000, 100);
    let mut t = Topology::new();
    let n = s.roles.len();
    for (i, &edge) in s.roles.iter().enumerate() {
        let role = if edge {
            NodeRole::EdgeRouter
        } else {
            NodeRole::CoreRouter
        };
        t.add_node(format!("R{i}"), role, Some(prefix(i))).unwrap();
    }
    for (i, &p) in s.parents.iter().enumerate() {
        t.add_link(NodeId(i + 1), NodeId(p), link).unwrap();
    }
    for &(a, b) in &s.extra {
        let dup = t
            .links()
            .iter()
            .any(|l| (l.a.0, l.b.0) == (a, b) || (l.a.0, l.b.0) == (b, a));
        if a != b && !dup {
            t.add_link(NodeId(a), NodeId(b), link).unwrap();
        }
    }
    for (h, &r) in s.hosts.iter().enumerate() {
        let id = t
            .add_node(format!("H{h}"), NodeRole::Host, Some(prefix(n + h)))
            .unwrap();
        t.add_link(id, NodeId(r), link).unwrap();
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn label_path_equals_routed_path(s in shape()) {
        let t = build(&s);
        let cost = LookupCostModel::default();
        let ip = Network::build(t.clone(), NodeMode::IpRouting, None, &[]).unwrap();
        let mpls = Network::build(t.clone(), NodeMode::MplsSwitching, None, &[]).unwrap();
        for src in 0..t.node_count() {
            let hops = t.hop_distances(NodeId(src));
            for dst in 0..t.node_count() {
                if src == dst {
                    continue;
                }
                let addr = ip.host_addr(NodeId(dst));
                let a = trace_path(&ip, &cost, NodeId(src), addr, 0).unwrap();
                let b = trace_path(&mpls, &cost, NodeId(src), addr, 0).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.last(), Some(&NodeId(dst)));
                prop_assert_eq!(Some(a.len() as u32 - 1), hops[dst]);
            }
        }
    }

    #[test]
    fn decisions_never_raise_a_ttl(s in shape(), ttl in 1u8..=64) {
        let t = build(&s);
        let cost = LookupCostModel::default();
        let net = Network::build(t.clone(), NodeMode::MplsSwitching, None, &[]).unwrap();
        let src = NodeId(t.node_count() - 1);
        for dst in 0..t.node_count() - 1 {
            let mut p = PacketRecord::new(0, net.host_addr(src), net.host_addr(NodeId(dst)), 0, 512);
            p.ip_ttl = ttl;
            let (mut node, mut hop) = (src, Hop::Originate);
            let mut last = (p.ip_ttl, u8::MAX);
            loop {
                let d = net.decide(node, &mut p, hop, &cost);
                let label_ttl = p.top().map_or(u8::MAX, |e| e.ttl);
                prop_assert!(p.ip_ttl <= last.0);
                // a push copies the IP TTL, never more than it was
                prop_assert!(label_ttl <= last.1.min(last.0) || label_ttl == u8::MAX);
                last = (p.ip_ttl, label_ttl);
                match d {
                    ForwardDecision::Relay { next, .. } => {
                        let port = net.topology.port(node, next.iface).unwrap();
                        hop = Hop::Transit(port.peer_iface);
                        node = port.peer;
                    }
                    _ => break,
                }
            }
        }
    }
}
