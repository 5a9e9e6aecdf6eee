//! Ping latency while background load ramps up, with QoS and the VPN tunnel
//! layered on, plus a traffic-engineering run on a diamond.

use std::collections::BTreeMap;

use lspsim_core::control::{NodeRole, Topology};
use lspsim_core::forwarding::LookupCostModel;
use lspsim_core::metrics::{fmt_opt_f64, stats_cells, summarize, Table, STATS_HEADER};
use lspsim_core::packet::{EF_TOS, IP_HEADER_BITS, SHIM_BITS};
use lspsim_core::qos::{PhbConfig, MAX_PACKET_BITS};
use lspsim_core::sim::{simulate, Network, NodeMode, SimConfig, SimError, SimReport};
use lspsim_core::tunnel::TunnelConfig;
use lspsim_core::NodeId;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{LineChart, Series};
use crate::config::hash_json;
use crate::result::{mean, Check, ExperimentResult, Ratio};
use crate::scenario::{chain, ping_flow, poisson_flow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layers {
    Bare,
    Qos,
    QosTunnel,
}

impl Layers {
    pub const ALL: [Layers; 3] = [Layers::Bare, Layers::Qos, Layers::QosTunnel];

    pub fn as_str(self) -> &'static str {
        match self {
            Layers::Bare => "bare",
            Layers::Qos => "qos",
            Layers::QosTunnel => "qos_tunnel",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct E4Params {
    pub gateways: usize,
    pub ping_bits: u64,
    pub unloaded_pings: u64,
    pub unloaded_gap_us: u64,
    pub ramp_pings: u64,
    pub ramp_gap_us: u64,
    /// Target occupancy of the mid-chain link, pings included.
    pub levels: Vec<f64>,
    pub background_bits: u64,
    /// Background runs alone this long before the pings start.
    pub lead_us: u64,
    pub drain_us: u64,
    pub ef_share: f64,
    pub seed: u64,
    pub modes: Vec<NodeMode>,
    pub cost: LookupCostModel,
    pub link: PhbConfig,
    pub tunnel: TunnelConfig,
    pub target_ratio: f64,
    pub tolerance: f64,
    pub te_pings: u64,
    /// Background on the diamond's short path, relative to its link rate.
    pub te_overload: f64,
}

impl Default for E4Params {
    fn default() -> Self {
        E4Params {
            gateways: 9,
            ping_bits: 12_000,
            unloaded_pings: 2000,
            unloaded_gap_us: 10_000,
            ramp_pings: 3000,
            ramp_gap_us: 2000,
            levels: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.98],
            background_bits: 12_000,
            lead_us: 500_000,
            drain_us: 500_000,
            ef_share: 0.11,
            seed: 1,
            modes: vec![NodeMode::IpRouting, NodeMode::MplsSwitching],
            cost: LookupCostModel::default(),
            link: crate::lan_link(),
            tunnel: TunnelConfig {
                enabled: true,
                ..TunnelConfig::default()
            },
            target_ratio: 1.0 / 3.0,
            tolerance: 0.30,
            te_pings: 500,
            te_overload: 1.2,
        }
    }
}

impl E4Params {
    fn link_for(&self, layers: Layers) -> PhbConfig {
        match layers {
            Layers::Bare => PhbConfig {
                qos_enabled: false,
                ..self.link
            },
            _ => {
                let rate = self.link.link_rate_bps;
                let ef = (rate as f64 * self.ef_share).round() as u64;
                PhbConfig {
                    qos_enabled: true,
                    ef_rate_bps: ef,
                    be_rate_bps: rate - ef,
                    ef_bucket_burst_bits: 2 * MAX_PACKET_BITS,
                    ..self.link
                }
            }
        }
    }

    fn tunnel_for(&self, layers: Layers) -> TunnelConfig {
        TunnelConfig {
            enabled: layers == Layers::QosTunnel,
            ..self.tunnel
        }
    }

    /// Wire bits of one ping on the mid-chain link.
    fn ping_wire_bits(&self, layers: Layers, mode: NodeMode) -> u64 {
        let t = self.tunnel_for(layers);
        let payload = if t.enabled {
            t.compressed_bits(self.ping_bits) + t.encap_overhead_bits
        } else {
            self.ping_bits
        };
        let shim = if mode == NodeMode::MplsSwitching { SHIM_BITS } else { 0 };
        payload + IP_HEADER_BITS + shim
    }

    fn mid(&self) -> (String, String) {
        let m = (self.gateways / 2 + 1).min(self.gateways);
        (format!("B{m}"), format!("B{}", (m + 1).min(self.gateways)))
    }
}

#[derive(Clone, Copy, Debug)]
struct Variant {
    layers: Layers,
    mode: NodeMode,
    /// `None` is the unloaded first phase.
    level: Option<usize>,
}

fn sim_cfg(p: &E4Params, layers: Layers, end: u64, warmup: u64) -> SimConfig {
    SimConfig {
        cost: p.cost,
        tunnel: p.tunnel_for(layers),
        seed: p.seed,
        end_time_us: end,
        warmup_us: warmup,
        ..SimConfig::default()
    }
}

/// The chain with a measurement host M hanging off the far end of the
/// mid-chain link. M sinks the background, so only that link is shared
/// between background and pings.
pub fn ramp_chain(p: &E4Params, layers: Layers) -> Topology {
    let mut topo = chain(p.gateways, p.link_for(layers));
    let (_, far) = p.mid();
    let b = topo.find(&far).expect("mid-chain gateway");
    let m = topo.add_node("M", NodeRole::Host, Some(mid_prefix())).expect("fresh");
    topo.add_link(b, m, p.link_for(layers)).expect("known nodes");
    topo
}

pub fn mid_prefix() -> lspsim_core::Prefix {
    "10.0.3.0/24".parse().expect("valid prefix")
}

fn run_variant(p: &E4Params, v: Variant) -> Result<SimReport, SimError> {
    let topo = ramp_chain(p, v.layers);
    let c = topo.find("C").expect("chain end");
    let m = topo.find("M").expect("measurement host");
    let net = Network::build(topo, v.mode, None, &[])?;
    let Some(level) = v.level else {
        let flows = vec![ping_flow(
            "ping",
            NodeId(0),
            c,
            p.ping_bits,
            EF_TOS,
            p.unloaded_pings,
            p.unloaded_gap_us,
            0,
        )];
        let end = p.unloaded_pings * p.unloaded_gap_us + p.drain_us;
        return simulate(net, flows, sim_cfg(p, v.layers, end, 0));
    };
    let target = p.levels[level];
    let rate = p.link.link_rate_bps as f64;
    let ping_occ = p.ping_wire_bits(v.layers, v.mode) as f64 * 1e6 / p.ramp_gap_us as f64 / rate;
    let bg_wire = p.background_bits
        + IP_HEADER_BITS
        + if v.mode == NodeMode::MplsSwitching {
            SHIM_BITS
        } else {
            0
        };
    let bg_occ = (target - ping_occ).max(0.0);
    let bg_rate = (bg_occ * rate * p.background_bits as f64 / bg_wire as f64).round() as u64;
    let ping_end = p.lead_us + p.ramp_pings * p.ramp_gap_us;
    let end = ping_end + p.drain_us;
    let (mid, _) = p.mid();
    let src = net.topology.find(&mid).expect("mid-chain gateway");
    let mut flows = vec![ping_flow(
        "ping",
        NodeId(0),
        c,
        p.ping_bits,
        EF_TOS,
        p.ramp_pings,
        p.ramp_gap_us,
        p.lead_us,
    )];
    if bg_rate > 0 {
        flows.push(poisson_flow(
            "background",
            src,
            m,
            p.background_bits,
            0,
            bg_rate,
            end,
            0,
        ));
    }
    simulate(net, flows, sim_cfg(p, v.layers, end, p.lead_us))
}

/// A–B1, then B1–B2–B5 (short) or B1–B3–B4–B5 (long), B5–C; the sink D
/// hangs off B5.
pub fn te_diamond(link: PhbConfig) -> Topology {
    let mut t = Topology::new();
    let a = t
        .add_node("A", NodeRole::Host, Some(crate::scenario::left_prefix()))
        .expect("fresh");
    let b: Vec<NodeId> = (1..=5)
        .map(|i| {
            let role = if i == 1 || i == 5 {
                NodeRole::EdgeRouter
            } else {
                NodeRole::CoreRouter
            };
            t.add_node(format!("B{i}"), role, None).expect("fresh")
        })
        .collect();
    let c = t
        .add_node("C", NodeRole::Host, Some(crate::scenario::right_prefix()))
        .expect("fresh");
    let d = t.add_node("D", NodeRole::Host, Some(mid_prefix())).expect("fresh");
    for (x, y) in [
        (a, b[0]),
        (b[0], b[1]),
        (b[1], b[4]),
        (b[0], b[2]),
        (b[2], b[3]),
        (b[3], b[4]),
        (b[4], c),
        (b[4], d),
    ] {
        t.add_link(x, y, link).expect("known nodes");
    }
    t
}

fn run_te(p: &E4Params, pinned: bool) -> Result<SimReport, SimError> {
    let topo = te_diamond(p.link_for(Layers::Bare));
    let id = |n: &str| topo.find(n).expect("diamond node");
    let (a, c, d, b2) = (id("A"), id("C"), id("D"), id("B2"));
    let pins = if pinned {
        vec![(
            crate::scenario::right_prefix(),
            vec![id("B1"), id("B3"), id("B4"), id("B5")],
        )]
    } else {
        Vec::new()
    };
    let net = Network::build(topo, NodeMode::MplsSwitching, None, &pins)?;
    let wire = p.background_bits + IP_HEADER_BITS + SHIM_BITS;
    let bg_rate = (p.te_overload * p.link.link_rate_bps as f64 * p.background_bits as f64 / wire as f64).round() as u64;
    let ping_end = p.lead_us + p.te_pings * p.unloaded_gap_us;
    let end = ping_end + p.drain_us;
    let flows = vec![
        ping_flow("ping", a, c, p.ping_bits, 0, p.te_pings, p.unloaded_gap_us, p.lead_us),
        poisson_flow("background", b2, d, p.background_bits, 0, bg_rate, end, 0),
    ];
    simulate(net, flows, sim_cfg(p, Layers::Bare, end, p.lead_us))
}

/// Index of a mean RTT against the reference.
pub fn latency_index(mean_rtt_us: f64, reference_us: f64) -> f64 {
    mean_rtt_us / reference_us
}

pub fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

pub fn run_e4(p: &E4Params) -> Result<ExperimentResult, SimError> {
    let mut variants = Vec::new();
    for layers in Layers::ALL {
        for &mode in &p.modes {
            variants.push(Variant {
                layers,
                mode,
                level: None,
            });
            for level in 0..p.levels.len() {
                variants.push(Variant {
                    layers,
                    mode,
                    level: Some(level),
                });
            }
        }
    }
    let reports: Vec<SimReport> = variants
        .par_iter()
        .map(|&v| run_variant(p, v))
        .collect::<Result<_, _>>()?;
    let te: Vec<SimReport> = [false, true]
        .par_iter()
        .map(|&pin| run_te(p, pin))
        .collect::<Result<_, _>>()?;

    let mut res = ExperimentResult::new("e4", "Ping latency under a background ramp", p.seed, hash_json(p));
    res.modes = p.modes.iter().map(|m| m.as_str().to_string()).collect();

    let bare_ip = variants
        .iter()
        .zip(&reports)
        .find(|(v, _)| v.layers == Layers::Bare && v.mode == NodeMode::IpRouting && v.level.is_none())
        .and_then(|(_, r)| mean(&r.flow("ping")?.rtt_us));
    let reference = bare_ip.or_else(|| {
        // single-mode runs fall back to their own bare unloaded phase
        variants
            .iter()
            .zip(&reports)
            .find(|(v, _)| v.layers == Layers::Bare && v.level.is_none())
            .and_then(|(_, r)| mean(&r.flow("ping")?.rtt_us))
    });
    let reference = reference.unwrap_or(f64::NAN);

    let (mid_a, mid_b) = p.mid();
    let mut header = vec![
        "layers",
        "mode",
        "phase",
        "target_occupancy",
        "occupancy",
        "sent",
        "loss",
        "index",
    ];
    header.extend(STATS_HEADER);
    let mut table = Table::new("e4_ramp", &header);
    let mut curves: BTreeMap<(Layers, NodeMode), Vec<(f64, f64)>> = BTreeMap::new();
    for (v, r) in variants.iter().zip(&reports) {
        res.accounting.add(r);
        let f = r.flow("ping").expect("ping flow");
        let occ = r.occupancy(&mid_a, &mid_b);
        let idx = mean(&f.rtt_us).map(|m| latency_index(m, reference));
        let (phase, target) = match v.level {
            None => ("unloaded".to_string(), "0".to_string()),
            Some(l) => (format!("ramp{}", l + 1), format!("{}", p.levels[l])),
        };
        let mut row = vec![
            v.layers.as_str().to_string(),
            v.mode.as_str().to_string(),
            phase,
            target,
            fmt_opt_f64(occ),
            f.sent.to_string(),
            fmt_opt_f64(f.loss()),
            idx.map_or_else(|| lspsim_core::metrics::NO_DATA.to_string(), |x| format!("{x:.6}")),
        ];
        row.extend(stats_cells(summarize(&f.rtt_us).as_ref()));
        table.push(row);
        if let (Some(o), Some(i)) = (occ, idx) {
            curves.entry((v.layers, v.mode)).or_default().push((o, i));
        } else {
            curves.entry((v.layers, v.mode)).or_default().push((f64::NAN, f64::NAN));
        }
    }
    res.tables.push(table);

    let mut chart = LineChart::new(
        "e4_index_vs_occupancy",
        "Latency index against link occupancy",
        "occupancy",
        "latency index",
    );
    for ((layers, mode), pts) in &curves {
        chart.series.push(Series {
            label: format!("{} {}", mode.as_str(), layers.as_str()),
            points: pts.clone(),
        });
    }
    res.charts.push(chart);

    let mut mono_ok = true;
    let mut mono_detail = Vec::new();
    for ((layers, mode), pts) in &curves {
        let idx: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let ok = idx.iter().all(|x| x.is_finite()) && nondecreasing(&idx);
        mono_ok &= ok;
        if !ok {
            let worst = idx.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            mono_detail.push(format!("{} {}: worst step {worst:.6}", mode.as_str(), layers.as_str()));
        }
    }
    res.checks.push(Check::new(
        "e4.monotone",
        "latency index nondecreasing in occupancy for every variant",
        if mono_detail.is_empty() {
            format!("{} variants nondecreasing", curves.len())
        } else {
            mono_detail.join("; ")
        },
        "nondecreasing",
        mono_ok && !curves.is_empty(),
    ));

    let last = |mode| curves.get(&(Layers::QosTunnel, mode)).and_then(|c| c.last().copied());
    match (last(NodeMode::IpRouting), last(NodeMode::MplsSwitching)) {
        (Some((_, ip)), Some((_, mpls))) => {
            let r = Ratio::new(
                "full_stack_mpls_over_ip",
                "mpls_qos_tunnel_index",
                mpls,
                "ip_qos_tunnel_index",
                ip,
            );
            let (lo, hi) = (
                p.target_ratio * (1.0 - p.tolerance),
                p.target_ratio * (1.0 + p.tolerance),
            );
            res.checks.push(Check::new(
                "e4.full_stack_ratio",
                "MPLS+QoS+tunnel index over IP+QoS+tunnel index at the top of the ramp",
                format!("{:.4}", r.value),
                format!("within [{lo:.4}, {hi:.4}]"),
                r.value >= lo && r.value <= hi,
            ));
            res.ratios.push(r);
        }
        _ => res.checks.push(Check::skipped(
            "e4.full_stack_ratio",
            "full stack index ratio",
            "needs both modes",
        )),
    }
    for layers in [Layers::Bare, Layers::Qos] {
        let top = |mode| curves.get(&(layers, mode)).and_then(|c| c.last().copied());
        if let (Some((_, ip)), Some((_, mpls))) = (top(NodeMode::IpRouting), top(NodeMode::MplsSwitching)) {
            res.ratios.push(Ratio::new(
                format!("{}_mpls_over_ip", layers.as_str()),
                format!("mpls_{}_index", layers.as_str()),
                mpls,
                format!("ip_{}_index", layers.as_str()),
                ip,
            ));
        }
    }

    let mut te_table = Table::new("e4_te", &{
        let mut h = vec!["variant", "sent", "loss", "background_delivered", "background_dropped"];
        h.extend(STATS_HEADER);
        h
    });
    let mut te_mean = Vec::new();
    for (name, r) in ["shortest_path", "pinned_lsp"].iter().zip(&te) {
        res.accounting.add(r);
        let f = r.flow("ping").expect("ping flow");
        let bg = r.flow("background").expect("background flow");
        let mut row = vec![
            name.to_string(),
            f.sent.to_string(),
            fmt_opt_f64(f.loss()),
            bg.delivered.to_string(),
            bg.dropped_total().to_string(),
        ];
        row.extend(stats_cells(summarize(&f.rtt_us).as_ref()));
        te_table.push(row);
        te_mean.push(mean(&f.rtt_us));
    }
    res.tables.push(te_table);
    let te_ok = matches!((te_mean[0], te_mean[1]), (Some(s), Some(pin)) if pin < s);
    res.checks.push(Check::new(
        "e4.te_pinned",
        "pinned LSP around the loaded link beats the shortest path",
        format!(
            "shortest {} us, pinned {} us",
            fmt_opt_f64(te_mean[0]),
            fmt_opt_f64(te_mean[1])
        ),
        "pinned < shortest",
        te_ok,
    ));
    if let (Some(s), Some(pin)) = (te_mean[0], te_mean[1]) {
        res.ratios.push(Ratio::new(
            "te_pinned_over_shortest",
            "pinned_mean_rtt_us",
            pin,
            "shortest_mean_rtt_us",
            s,
        ));
    }
    res.ratios.push(Ratio::new(
        "reference_rtt",
        "bare_ip_unloaded_mean_rtt_us",
        reference,
        "unit",
        1.0,
    ));
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_helper() {
        assert!(nondecreasing(&[1.0, 1.0, 2.0]));
        assert!(!nondecreasing(&[1.0, 0.9]));
    }

    #[test]
    fn diamond_shape() {
        let t = te_diamond(crate::lan_link());
        assert_eq!(t.node_count(), 8);
        assert_eq!(t.links().len(), 8);
        assert!(t.is_connected());
    }

    #[test]
    fn qos_split_follows_link_rate() {
        let p = E4Params::default();
        let l = p.link_for(Layers::Qos);
        assert_eq!(l.ef_rate_bps + l.be_rate_bps, l.link_rate_bps);
        assert_eq!(l.ef_rate_bps, 11_000_000);
        assert!(!p.link_for(Layers::Bare).qos_enabled);
    }
}
