//! Grid search for the lookup cost constants.
//!
//! RTTs come from an unloaded walk of the forwarding decisions, without the
//! event engine: on an idle network a ping's round trip is the sum of node
//! delays, serialization and propagation along the path and back.

use lspsim_core::forwarding::{ForwardDecision, Hop, LookupCostModel};
use lspsim_core::metrics::{fmt_f64, Table};
use lspsim_core::packet::PacketRecord;
use lspsim_core::sim::{Network, NodeMode};
use lspsim_core::NodeId;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{hash_json, SyntheticRoutes};
use crate::result::{Check, ExperimentResult};
use crate::scenario::{add_synthetic_routes, chain, left_prefix, right_prefix};

/// One-way time of an unloaded packet, or `None` if it is dropped. The
/// packet is left as delivered.
pub fn unloaded_one_way(net: &Network, cost: &LookupCostModel, src: NodeId, packet: &mut PacketRecord) -> Option<u64> {
    let mut t = 0u64;
    let mut node = src;
    let mut hop = Hop::Originate;
    for _ in 0..=256 {
        match net.decide(node, packet, hop, cost) {
            ForwardDecision::Deliver => return Some(t),
            ForwardDecision::Drop(_) => return None,
            ForwardDecision::Relay { next, node_delay_us } => {
                t += node_delay_us.round() as u64;
                let port = net.topology.port(node, next.iface)?;
                let phb = &net.topology.links()[port.link].phb;
                t += phb.serialization_us(packet.wire_bits()) + phb.link_delay_us;
                hop = Hop::Transit(port.peer_iface);
                node = port.peer;
            }
        }
    }
    None
}

/// Round trip of one unloaded ping from `src` to `dst`.
pub fn unloaded_rtt(
    net: &Network,
    cost: &LookupCostModel,
    src: NodeId,
    dst: NodeId,
    payload_bits: u64,
    tos: u8,
) -> Option<u64> {
    let (a, c) = (net.host_addr(src), net.host_addr(dst));
    let mut req = PacketRecord::new(0, a, c, tos, payload_bits);
    let there = unloaded_one_way(net, cost, src, &mut req)?;
    let mut rep = PacketRecord::new(1, c, a, tos, req.payload_bits);
    let back = unloaded_one_way(net, cost, dst, &mut rep)?;
    Some(there + back)
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationParams {
    pub mpls_lookup_us: Vec<f64>,
    pub edge_label_op_us: Vec<f64>,
    pub ip_cost_per_kbit_us: Vec<f64>,
    pub mpls_cost_per_kbit_us: Vec<f64>,
    /// Held fixed during the search.
    pub base: LookupCostModel,
    pub e1_gateways: Vec<usize>,
    pub e1_small_bits: u64,
    pub e1_large_bits: Vec<u64>,
    pub e1_target: f64,
    pub e1_band: (f64, f64),
    pub e2_gateways: usize,
    pub e2_routes: usize,
    pub e2_payload_bits: u64,
    pub e2_target: f64,
    pub e2_band: (f64, f64),
    pub route_seed: u64,
    pub keep: usize,
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            mpls_lookup_us: steps(0.0, 600.0, 40.0),
            edge_label_op_us: steps(10.0, 100.0, 10.0),
            ip_cost_per_kbit_us: steps(300.0, 700.0, 50.0),
            mpls_cost_per_kbit_us: steps(50.0, 150.0, 10.0),
            base: LookupCostModel::default(),
            e1_gateways: (1..=9).collect(),
            e1_small_bits: 512,
            e1_large_bits: vec![4096, 12000],
            e1_target: 0.33,
            e1_band: (0.25, 0.45),
            e2_gateways: 9,
            e2_routes: 50_000,
            e2_payload_bits: 8000,
            e2_target: 3.0,
            e2_band: (2.25, 3.75),
            route_seed: 1,
            keep: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Candidate {
    pub cost: LookupCostModel,
    pub e1_large_min: f64,
    pub e1_large_max: f64,
    pub e1_large_mean: f64,
    pub e1_small_margin_us: f64,
    pub e2_ratio: f64,
    pub feasible: bool,
    pub score: f64,
}

struct Case {
    nets: [Network; 2],
    src: NodeId,
    dst: NodeId,
}

fn case(gateways: usize, routes: Option<(usize, u64)>) -> Case {
    let build = |mode| {
        let topo = chain(gateways, crate::lan_link());
        let mut net = if routes.is_some() {
            Network::build(topo, mode, Some(&[left_prefix(), right_prefix()]), &[])
        } else {
            Network::build(topo, mode, None, &[])
        }
        .expect("no pins");
        if let Some((count, seed)) = routes {
            let toward = Some(NodeId(net.topology.node_count() - 1));
            add_synthetic_routes(
                &mut net,
                &SyntheticRoutes {
                    count,
                    min_len: 24,
                    max_len: 24,
                    seed,
                    toward,
                },
            );
        }
        net
    };
    let nets = [build(NodeMode::IpRouting), build(NodeMode::MplsSwitching)];
    let dst = NodeId(nets[0].topology.node_count() - 1);
    Case {
        nets,
        src: NodeId(0),
        dst,
    }
}

fn ratio(c: &Case, cost: &LookupCostModel, bits: u64) -> Option<(f64, f64)> {
    let ip = unloaded_rtt(&c.nets[0], cost, c.src, c.dst, bits, 0)? as f64;
    let mpls = unloaded_rtt(&c.nets[1], cost, c.src, c.dst, bits, 0)? as f64;
    Some((ip, mpls))
}

fn evaluate(p: &CalibrationParams, e1: &[Case], e2: &Case, cost: LookupCostModel) -> Option<Candidate> {
    let mut large = Vec::new();
    let mut margin = f64::INFINITY;
    for c in e1 {
        for &bits in &p.e1_large_bits {
            let (ip, mpls) = ratio(c, &cost, bits)?;
            large.push(mpls / ip);
        }
        let (ip, mpls) = ratio(c, &cost, p.e1_small_bits)?;
        margin = margin.min(mpls - ip);
    }
    let (ip, mpls) = ratio(e2, &cost, p.e2_payload_bits)?;
    let e2_ratio = ip / mpls;
    let lo = large.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = large.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg = large.iter().sum::<f64>() / large.len() as f64;
    let feasible =
        lo >= p.e1_band.0 && hi <= p.e1_band.1 && margin > 0.0 && e2_ratio >= p.e2_band.0 && e2_ratio <= p.e2_band.1;
    let e1_err: f64 = large.iter().map(|r| (r / p.e1_target - 1.0).powi(2)).sum::<f64>() / large.len() as f64;
    let e2_err = (e2_ratio / p.e2_target - 1.0).powi(2);
    Some(Candidate {
        cost,
        e1_large_min: lo,
        e1_large_max: hi,
        e1_large_mean: avg,
        e1_small_margin_us: margin,
        e2_ratio,
        feasible,
        score: e1_err + e2_err,
    })
}

/// Every grid point, best first: feasible before infeasible, then by score,
/// ties broken by grid order.
pub fn search(p: &CalibrationParams) -> Vec<Candidate> {
    let e1: Vec<Case> = p.e1_gateways.iter().map(|&g| case(g, None)).collect();
    let e2 = case(p.e2_gateways, Some((p.e2_routes, p.route_seed)));
    let mut grid = Vec::new();
    for &m in &p.mpls_lookup_us {
        for &e in &p.edge_label_op_us {
            for &ik in &p.ip_cost_per_kbit_us {
                for &mk in &p.mpls_cost_per_kbit_us {
                    grid.push(LookupCostModel {
                        mpls_lookup_us: m,
                        edge_label_op_us: e,
                        ip_cost_per_kbit_us: ik,
                        mpls_cost_per_kbit_us: mk,
                        ..p.base
                    });
                }
            }
        }
    }
    let mut found: Vec<(usize, Candidate)> = grid
        .into_par_iter()
        .enumerate()
        .filter_map(|(i, cost)| evaluate(p, &e1, &e2, cost).map(|c| (i, c)))
        .collect();
    found.sort_by(|(ia, a), (ib, b)| {
        b.feasible
            .cmp(&a.feasible)
            .then(a.score.total_cmp(&b.score))
            .then(ia.cmp(ib))
    });
    found.into_iter().map(|(_, c)| c).collect()
}

/// The chosen constants as a `[cost]` section of a scenario file.
pub fn cost_toml(cost: &LookupCostModel) -> String {
    format!(
        "[cost]\nip_cost_per_trie_node_us = {}\nmpls_lookup_us = {}\nedge_label_op_us = {}\nper_hop_fixed_us = {}\nip_cost_per_kbit_us = {}\nmpls_cost_per_kbit_us = {}\n",
        fmt_num(cost.ip_cost_per_trie_node_us),
        fmt_num(cost.mpls_lookup_us),
        fmt_num(cost.edge_label_op_us),
        fmt_num(cost.per_hop_fixed_us),
        fmt_num(cost.ip_cost_per_kbit_us),
        fmt_num(cost.mpls_cost_per_kbit_us),
    )
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

pub fn run_calibration(p: &CalibrationParams) -> (ExperimentResult, Vec<Candidate>) {
    let all = search(p);
    let mut res = ExperimentResult::new(
        "calibrate",
        "Grid search over the cost constants",
        p.route_seed,
        hash_json(p),
    );
    let mut t = Table::new(
        "calibrate_candidates",
        &[
            "rank",
            "mpls_lookup_us",
            "edge_label_op_us",
            "ip_cost_per_kbit_us",
            "mpls_cost_per_kbit_us",
            "e1_large_min",
            "e1_large_max",
            "e1_large_mean",
            "e1_small_margin_us",
            "e2_ratio",
            "feasible",
            "score",
        ],
    );
    for (i, c) in all.iter().take(p.keep).enumerate() {
        t.push(vec![
            (i + 1).to_string(),
            fmt_f64(c.cost.mpls_lookup_us),
            fmt_f64(c.cost.edge_label_op_us),
            fmt_f64(c.cost.ip_cost_per_kbit_us),
            fmt_f64(c.cost.mpls_cost_per_kbit_us),
            format!("{:.4}", c.e1_large_min),
            format!("{:.4}", c.e1_large_max),
            format!("{:.4}", c.e1_large_mean),
            fmt_f64(c.e1_small_margin_us),
            format!("{:.4}", c.e2_ratio),
            c.feasible.to_string(),
            format!("{:.6}", c.score),
        ]);
    }
    res.tables.push(t);
    let feasible = all.iter().filter(|c| c.feasible).count();
    res.checks.push(Check::new(
        "calibrate.feasible",
        "grid points meeting both ratio targets",
        format!("{feasible} of {}", all.len()),
        ">= 1",
        feasible > 0,
    ));
    if let Some(best) = all.first() {
        let shipped = LookupCostModel::default();
        res.checks.push(Check::new(
            "calibrate.default_is_best",
            "shipped default equals the best grid point",
            format!("{:?}", best.cost),
            format!("{shipped:?}"),
            best.cost == shipped,
        ));
    }
    (res, all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unloaded_rtt_adds_both_directions() {
        let net = Network::build(chain(0, crate::lan_link()), NodeMode::IpRouting, None, &[]).unwrap();
        let cost = LookupCostModel::default();
        // A wired to C: one link each way, hosts charge no node delay
        let ser = crate::lan_link().serialization_us(512 + 160);
        let rtt = unloaded_rtt(&net, &cost, NodeId(0), NodeId(1), 512, 0).unwrap();
        assert_eq!(rtt, 2 * (ser + 100));
    }

    #[test]
    fn cost_toml_parses_back() {
        #[derive(serde::Deserialize)]
        struct W {
            cost: LookupCostModel,
        }
        let c = LookupCostModel::default();
        let w: W = toml::from_str(&cost_toml(&c)).unwrap();
        assert_eq!(w.cost, c);
    }
}
