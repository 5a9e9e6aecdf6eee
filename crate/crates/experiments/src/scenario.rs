//! Turning a scenario into a network and running it.

use std::collections::BTreeSet;

use lspsim_core::control::{NodeRole, Topology};
use lspsim_core::forwarding::RouteEntry;
use lspsim_core::qos::PhbConfig;
use lspsim_core::sim::{simulate, Network, NodeMode, SimError, SimReport};
use lspsim_core::traffic::{FlowKind, FlowSpec};
use lspsim_core::{IfaceId, NextHop, NodeId, Prefix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Scenario, SyntheticRoutes};
use crate::result::{Check, ExperimentResult};
use lspsim_core::metrics::{flow_table, fmt_f64, fmt_opt_f64, Table};

/// Prefix of the left host in the canned chains.
pub fn left_prefix() -> Prefix {
    "10.0.1.0/24".parse().expect("valid prefix")
}

pub fn right_prefix() -> Prefix {
    "10.0.2.0/24".parse().expect("valid prefix")
}

/// Host A, gateways B1..Bk, host C in a line, every link alike. The first
/// and last gateway are edge routers.
pub fn chain(gateways: usize, link: PhbConfig) -> Topology {
    let mut t = Topology::new();
    let a = t.add_node("A", NodeRole::Host, Some(left_prefix())).expect("fresh");
    let mut prev = a;
    for i in 1..=gateways {
        let role = if i == 1 || i == gateways {
            NodeRole::EdgeRouter
        } else {
            NodeRole::CoreRouter
        };
        let b = t.add_node(format!("B{i}"), role, None).expect("fresh");
        t.add_link(prev, b, link).expect("known nodes");
        prev = b;
    }
    let c = t.add_node("C", NodeRole::Host, Some(right_prefix())).expect("fresh");
    t.add_link(prev, c, link).expect("known nodes");
    t
}

/// Random prefixes, distinct and disjoint from every prefix in `avoid`.
pub fn synthetic_prefixes(spec: &SyntheticRoutes, avoid: &[Prefix]) -> Vec<Prefix> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(spec.count);
    let overlaps = |p: &Prefix| avoid.iter().any(|a| a.contains(p.addr()) || p.contains(a.addr()));
    let space: u128 = (spec.min_len..=spec.max_len).map(|l| 1u128 << l).sum();
    let limit = (spec.count as u128).min(space.saturating_sub(avoid.len() as u128 * 2));
    while (out.len() as u128) < limit {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let p = Prefix::truncating(rng.random::<u32>(), len);
        if overlaps(&p) || !seen.insert(p) {
            continue;
        }
        out.push(p);
    }
    out
}

/// Fills every router's FIB with synthetic routes. Each router sends them
/// along its own route toward `spec.toward` (interface 0 otherwise).
pub fn add_synthetic_routes(net: &mut Network, spec: &SyntheticRoutes) {
    let real = net.topology.prefixes();
    let prefixes = synthetic_prefixes(spec, &real);
    let toward = spec.toward.and_then(|n| net.topology.node(n).prefix);
    for i in 0..net.nodes.len() {
        let id = NodeId(i);
        if !net.role(id).is_router() || net.topology.ports(id).is_empty() {
            continue;
        }
        let next = toward
            .and_then(|p| net.nodes[i].fib.get(&p).map(|r| r.next))
            .unwrap_or_else(|| NextHop {
                node: net.topology.ports(id)[0].peer,
                iface: IfaceId(0),
            });
        let fib = &mut net.nodes[i].fib;
        for &prefix in &prefixes {
            fib.insert(RouteEntry { prefix, next });
        }
    }
}

pub fn build_network(s: &Scenario) -> Result<Network, SimError> {
    let mut net = Network::build(s.topology.clone(), s.mode, s.fecs.as_deref(), &s.pins)?;
    for &(node, mode) in &s.mode_overrides {
        net.set_mode(node, mode);
    }
    if let Some(spec) = &s.synthetic {
        add_synthetic_routes(&mut net, spec);
    }
    Ok(net)
}

pub fn run_scenario(s: &Scenario) -> Result<SimReport, SimError> {
    let net = build_network(s)?;
    simulate(net, s.flows.clone(), s.sim)
}

#[allow(clippy::too_many_arguments)]
pub fn ping_flow(
    name: &str,
    src: NodeId,
    dst: NodeId,
    payload_bits: u64,
    tos: u8,
    count: u64,
    gap_us: u64,
    start_us: u64,
) -> FlowSpec {
    FlowSpec {
        name: name.into(),
        kind: FlowKind::PingBurst { count, gap_us },
        src,
        dst,
        payload_bits,
        tos,
        start_us,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cbr_flow(
    name: &str,
    src: NodeId,
    dst: NodeId,
    payload_bits: u64,
    tos: u8,
    rate_bps: u64,
    duration_us: u64,
    start_us: u64,
) -> FlowSpec {
    FlowSpec {
        name: name.into(),
        kind: FlowKind::CbrUdp { rate_bps, duration_us },
        src,
        dst,
        payload_bits,
        tos,
        start_us,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn poisson_flow(
    name: &str,
    src: NodeId,
    dst: NodeId,
    payload_bits: u64,
    tos: u8,
    rate_bps: u64,
    duration_us: u64,
    start_us: u64,
) -> FlowSpec {
    FlowSpec {
        name: name.into(),
        kind: FlowKind::PoissonUdp { rate_bps, duration_us },
        src,
        dst,
        payload_bits,
        tos,
        start_us,
    }
}

/// Tables and checks for a plain scenario run.
pub fn scenario_result(s: &Scenario, r: &SimReport) -> ExperimentResult {
    let mut res = ExperimentResult::new(&s.name, "scenario run", s.sim.seed, s.hash.clone());
    res.modes = vec![s.mode.as_str().to_string()];
    res.accounting.add(r);
    res.tables.push(flow_table(&format!("{}_flows", s.name), &r.flows));

    let mut links = Table::new(
        format!("{}_links", s.name),
        &[
            "from",
            "to",
            "packets",
            "wire_bits",
            "busy_us",
            "occupancy",
            "ef_packets",
            "be_packets",
            "policed",
            "queue_full",
            "max_queue",
        ],
    );
    let w = r.window_us();
    for l in &r.links {
        links.push(vec![
            l.from.clone(),
            l.to.clone(),
            l.packets.to_string(),
            l.wire_bits.to_string(),
            l.busy_us.to_string(),
            fmt_opt_f64((w > 0).then(|| l.window_busy_us as f64 / w as f64)),
            l.ef_packets.to_string(),
            l.be_packets.to_string(),
            l.policed.to_string(),
            l.queue_full.to_string(),
            l.max_queue.to_string(),
        ]);
    }
    res.tables.push(links);

    let mut series = Table::new(
        format!("{}_class_series", s.name),
        &["class", "interval", "start_us", "ip_bits", "rate_bps"],
    );
    for (&(class, bin), &bits) in &r.class_bits {
        series.push(vec![
            class.as_str().to_string(),
            bin.to_string(),
            (bin * r.interval_us).to_string(),
            bits.to_string(),
            fmt_f64(bits as f64 * 1e6 / r.interval_us as f64),
        ]);
    }
    res.tables.push(series);

    let mut tput = Table::new(format!("{}_throughput", s.name), &["flow", "window_ip_bps"]);
    for f in &r.flows {
        tput.push(vec![f.name.clone(), fmt_opt_f64(r.throughput_bps(&f.name))]);
    }
    res.tables.push(tput);

    let c = &r.counters;
    res.checks.push(Check::new(
        "conservation",
        "injected = delivered + dropped + in flight",
        format!(
            "{} = {} + {} + {}",
            c.injected,
            c.delivered,
            c.dropped_total(),
            c.in_flight
        ),
        format!("in flight matches {} resident packets", r.resident_packets),
        res.accounting.balanced(),
    ));
    res
}

/// Modes requested on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeSelect {
    Ip,
    Mpls,
    Both,
}

impl ModeSelect {
    pub fn modes(self) -> Vec<NodeMode> {
        match self {
            ModeSelect::Ip => vec![NodeMode::IpRouting],
            ModeSelect::Mpls => vec![NodeMode::MplsSwitching],
            ModeSelect::Both => vec![NodeMode::IpRouting, NodeMode::MplsSwitching],
        }
    }

    pub fn has_both(self) -> bool {
        self == ModeSelect::Both
    }
}

impl std::str::FromStr for ModeSelect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ip" => Ok(ModeSelect::Ip),
            "mpls" => Ok(ModeSelect::Mpls),
            "both" => Ok(ModeSelect::Both),
            other => Err(format!("unknown mode `{other}` (expected ip, mpls or both)")),
        }
    }
}
