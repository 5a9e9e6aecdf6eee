//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p lspsim-experiments --test acceptance`.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use lspsim_core::control::{NodeRole, Topology};
use lspsim_core::forwarding::{
    forward_mpls, Fib, ForwardDecision, ForwardingNode, Hop, IlmKey, LabelOp, LookupCostModel, NhlfeEntry, RouteEntry,
};
use lspsim_core::packet::{PacketRecord, EF_TOS};
use lspsim_core::qos::{PhbConfig, TokenBucket};
use lspsim_core::sim::{simulate, trace_path, Network, NodeMode, SimConfig};
use lspsim_core::tunnel::{decapsulate, encapsulate, TunnelConfig};
use lspsim_core::{IfaceId, NextHop, NodeId, Prefix};
use lspsim_experiments::config::auto_prefix;
use lspsim_experiments::output::table_to_csv;
use lspsim_experiments::scenario::{chain, ping_flow};
use lspsim_experiments::{e1, e2, e3, e4, lan_link, ExperimentResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, criterion: u32, name: &str, passed: bool, observed: &str, tolerance: &str) {
        if !passed {
            self.failures += 1;
        }
        let status = if passed { "PASS" } else { "FAIL" };
        println!("{status} [{criterion}] {name}: {observed} (tolerance: {tolerance})");
    }

    fn check(&mut self, criterion: u32, res: &ExperimentResult, id: &str) {
        match res.check(id) {
            Some(c) => self.line(criterion, id, c.passed == Some(true), &c.observed, &c.expected),
            None => self.line(criterion, id, false, "check missing", "present"),
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn all_csv(res: &ExperimentResult) -> Vec<(String, String)> {
    let mut tables = res.tables.clone();
    tables.push(res.ratio_table());
    tables.push(res.check_table());
    tables
        .iter()
        .map(|t| (t.name.clone(), table_to_csv(t).expect("csv")))
        .collect()
}

struct Runs {
    e1: ExperimentResult,
    e2: ExperimentResult,
    e3: ExperimentResult,
    e4: ExperimentResult,
    e2_time: Duration,
}

fn run_all() -> Runs {
    let e1 = e1::run_e1(&e1::E1Params::default()).expect("e1 runs");
    let (e2, e2_time) = timed(|| e2::run_e2(&e2::E2Params::default()).expect("e2 runs"));
    let e3 = e3::run_e3(&e3::E3Params::default()).expect("e3 runs");
    let e4 = e4::run_e4(&e4::E4Params::default()).expect("e4 runs");
    Runs {
        e1,
        e2,
        e3,
        e4,
        e2_time,
    }
}

/// Routers in a random connected graph, hosts hanging off single routers.
/// Every node owns a prefix.
fn random_topology(rng: &mut ChaCha8Rng) -> Topology {
    let routers = rng.random_range(1..=9usize);
    let hosts = rng.random_range(1..=(12 - routers).min(4));
    let mut t = Topology::new();
    let mut ids = Vec::new();
    for i in 0..routers {
        let role = if rng.random_bool(0.5) {
            NodeRole::EdgeRouter
        } else {
            NodeRole::CoreRouter
        };
        ids.push(t.add_node(format!("R{i}"), role, Some(auto_prefix(i))).expect("fresh"));
    }
    for i in 1..routers {
        let j = rng.random_range(0..i);
        t.add_link(ids[i], ids[j], lan_link()).expect("known");
    }
    let extra = rng.random_range(0..=routers);
    for _ in 0..extra {
        let a = rng.random_range(0..routers);
        let b = rng.random_range(0..routers);
        let dup = t
            .links()
            .iter()
            .any(|l| (l.a == ids[a] && l.b == ids[b]) || (l.a == ids[b] && l.b == ids[a]));
        if a != b && !dup {
            t.add_link(ids[a], ids[b], lan_link()).expect("known");
        }
    }
    for h in 0..hosts {
        let id = t
            .add_node(format!("H{h}"), NodeRole::Host, Some(auto_prefix(routers + h)))
            .expect("fresh");
        let r = rng.random_range(0..routers);
        t.add_link(id, ids[r], lan_link()).expect("known");
    }
    t
}

fn bfs(t: &Topology, from: NodeId) -> Vec<Option<usize>> {
    let mut dist = vec![None; t.node_count()];
    dist[from.0] = Some(0);
    let mut q = VecDeque::from([from]);
    while let Some(n) = q.pop_front() {
        for p in t.ports(n) {
            if dist[p.peer.0].is_none() {
                dist[p.peer.0] = Some(dist[n.0].unwrap() + 1);
                q.push_back(p.peer);
            }
        }
    }
    dist
}

fn adjacent(t: &Topology, a: NodeId, b: NodeId) -> bool {
    t.ports(a).iter().any(|p| p.peer == b)
}

fn forwarding_equivalence(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cost = LookupCostModel::default();
    let (mut pairs, mut failures, mut first) = (0u64, 0u64, None);
    for topo_i in 0..200 {
        let t = random_topology(&mut rng);
        let ip = Network::build(t.clone(), NodeMode::IpRouting, None, &[]).expect("no pins");
        let mpls = Network::build(t.clone(), NodeMode::MplsSwitching, None, &[]).expect("no pins");
        for s in 0..t.node_count() {
            let dist = bfs(&t, NodeId(s));
            for d in 0..t.node_count() {
                if s == d {
                    continue;
                }
                pairs += 1;
                let dst_addr = ip.host_addr(NodeId(d));
                let a = trace_path(&ip, &cost, NodeId(s), dst_addr, 0);
                let b = trace_path(&mpls, &cost, NodeId(s), dst_addr, 0);
                let ok = match (&a, &b) {
                    (Ok(a), Ok(b)) => {
                        a == b
                            && a.last() == Some(&NodeId(d))
                            && Some(a.len() - 1) == dist[d]
                            && a.windows(2).all(|w| adjacent(&t, w[0], w[1]))
                    }
                    _ => false,
                };
                if !ok {
                    failures += 1;
                    first.get_or_insert(format!("topology {topo_i} {s}->{d}: ip {a:?} mpls {b:?}"));
                }
            }
        }
    }
    let mut observed = format!("{failures} failures over {pairs} pairs on 200 topologies");
    if let Some(f) = first {
        observed.push_str(&format!("; first: {f}"));
    }
    report.line(5, "forwarding equivalence", failures == 0, &observed, "0 failures");
}

fn lpm_oracle(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut cases, mut mismatches) = (0u64, 0u64);
    let mut largest = 0;
    for case in 0..1000 {
        let size = if case % 100 == 0 {
            10_000
        } else {
            rng.random_range(1..=10_000usize)
        };
        // a few shared top bytes make nested and overlapping prefixes common
        let tops: Vec<u32> = (0..4).map(|_| rng.random::<u32>() & 0xff00_0000).collect();
        let mut fib = Fib::new();
        let mut oracle: BTreeMap<Prefix, NextHop> = BTreeMap::new();
        let mut i = 0;
        if case % 3 == 0 {
            let next = NextHop {
                node: NodeId(9),
                iface: IfaceId(9),
            };
            let default = Prefix::truncating(0, 0);
            fib.insert(RouteEntry { prefix: default, next });
            oracle.insert(default, next);
        }
        while oracle.len() < size {
            i += 1;
            let top = tops[rng.random_range(0..tops.len())];
            let addr = top | (rng.random::<u32>() & 0x00ff_ffff);
            let len = rng.random_range(8..=32u8);
            let prefix = Prefix::truncating(addr, len);
            let next = NextHop {
                node: NodeId(i % 7),
                iface: IfaceId((i % 5) as u32),
            };
            fib.insert(RouteEntry { prefix, next });
            oracle.insert(prefix, next);
        }
        largest = largest.max(oracle.len());
        for q in 0..16 {
            let addr = if q % 2 == 0 {
                tops[rng.random_range(0..tops.len())] | (rng.random::<u32>() & 0x00ff_ffff)
            } else {
                rng.random::<u32>()
            };
            cases += 1;
            let want = oracle
                .iter()
                .filter(|(p, _)| p.contains(addr))
                .max_by_key(|(p, _)| p.len())
                .map(|(p, n)| (*p, *n));
            let got = fib.lookup(addr).route.map(|r| (r.prefix, r.next));
            if got != want {
                mismatches += 1;
            }
        }
    }
    report.line(
        6,
        "fib_lookup vs linear scan",
        mismatches == 0,
        &format!("{mismatches} mismatches over {cases} lookups on 1000 tables (largest {largest} entries)"),
        "0 mismatches",
    );

    let cost = LookupCostModel::default();
    let mut delays = Vec::new();
    for size in [1u32, 50, 50_000] {
        let mut node = ForwardingNode::new(NodeId(0), None);
        for i in 0..size {
            let key = IlmKey {
                in_iface: IfaceId(0),
                label: 16 + i,
            };
            let entry = NhlfeEntry {
                op: LabelOp::Swap(16 + i),
                next: Some(NextHop {
                    node: NodeId(1),
                    iface: IfaceId(1),
                }),
            };
            node.lib.install(key, entry).expect("valid label");
        }
        for label in [16, 16 + size - 1] {
            let mut p = PacketRecord::new(1, 1, 2, 0, 8000);
            p.push_label(label, 0, 64).expect("valid label");
            match forward_mpls(&node, &mut p, Hop::Transit(IfaceId(0)), &cost) {
                ForwardDecision::Relay { node_delay_us, .. } => delays.push((size, node_delay_us)),
                other => panic!("swap on a table of {size} gave {other:?}"),
            }
        }
    }
    let constant = delays.iter().all(|&(_, d)| d.to_bits() == delays[0].1.to_bits());
    let observed = delays
        .iter()
        .map(|(s, d)| format!("{s}:{d}"))
        .collect::<Vec<_>>()
        .join(" ");
    report.line(
        6,
        "ilm_lookup cost vs table size",
        constant,
        &format!("per-swap us by table size {observed}"),
        "identical",
    );
}

fn accounting(report: &mut Report, runs: &Runs, again: &Runs) {
    let all = [&runs.e1, &runs.e2, &runs.e3, &runs.e4];
    let balanced = all.iter().all(|r| r.accounting.balanced());
    let observed = all
        .iter()
        .map(|r| {
            let a = &r.accounting;
            format!(
                "{}: {} runs, {} = {} + {} + {}, {} unbalanced",
                r.id, a.runs, a.injected, a.delivered, a.dropped, a.in_flight, a.unbalanced_runs
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    report.line(
        7,
        "conservation",
        balanced,
        &observed,
        "injected = delivered + dropped + in flight, every run",
    );

    let mut differing = Vec::new();
    let mut count = 0;
    for (a, b) in all.iter().zip([&again.e1, &again.e2, &again.e3, &again.e4]) {
        let (x, y) = (all_csv(a), all_csv(b));
        count += x.len();
        if x != y {
            differing.push(a.id.clone());
        }
    }
    report.line(
        7,
        "determinism",
        differing.is_empty(),
        &format!("{count} CSV tables compared, differing experiments: {differing:?}"),
        "byte-identical",
    );
}

fn qos_properties(report: &mut Report, runs: &Runs) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0u64;
    let mut conform = 0u64;
    let mut bucket = TokenBucket::new(220_000, 24_000);
    let mut now = 0u64;
    for i in 0..1_000_000u64 {
        if i % 50_000 == 0 {
            let rate = rng.random_range(1_000..=10_000_000);
            let burst = rng.random_range(1..=100_000);
            bucket = TokenBucket::new(rate, burst);
        }
        now += match rng.random_range(0..4) {
            0 => 0,
            1 => rng.random_range(0..10),
            2 => rng.random_range(0..10_000),
            _ => rng.random_range(0..1_000_000),
        };
        let bits = rng.random_range(0..=150_000);
        let before = bucket.tokens_bits();
        let r = bucket.police(bits, now);
        let t = bucket.tokens_bits();
        if r == lspsim_core::qos::PoliceResult::Conform {
            conform += 1;
        }
        if !(t >= 0.0 && t <= bucket.burst_bits() as f64 && bucket.within_bounds()) || before < 0.0 {
            violations += 1;
        }
    }
    report.line(
        8,
        "token bucket bounds",
        violations == 0,
        &format!("{violations} out-of-bounds states over 1000000 police calls ({conform} conform)"),
        "0 <= tokens <= burst at every call",
    );

    let all = [&runs.e1, &runs.e2, &runs.e3, &runs.e4];
    let work: u64 = all.iter().map(|r| r.accounting.work_conservation_violations).sum();
    let bucket_bad: u64 = all.iter().map(|r| r.accounting.token_bucket_violations).sum();
    let dequeues: u64 = all.iter().map(|r| r.accounting.dequeue_checks).sum();
    let polices: u64 = all.iter().map(|r| r.accounting.police_checks).sum();
    report.line(
        8,
        "work conservation",
        work == 0 && bucket_bad == 0 && dequeues > 0,
        &format!("{work} idle-with-queue dequeues over {dequeues} checks, {bucket_bad} bucket violations over {polices} police calls"),
        "0 violations",
    );
}

fn tunnel(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut lossy = 0;
    for i in 0..10_000u64 {
        let cfg = TunnelConfig {
            enabled: true,
            compression_ratio: rng.random_range(0.01..=1.0),
            encap_overhead_bits: rng.random_range(0..=1000),
            ..TunnelConfig::default()
        };
        let original = PacketRecord::new(
            i,
            rng.random(),
            rng.random(),
            rng.random(),
            rng.random_range(8..=100_000),
        );
        let mut p = original.clone();
        let ok = encapsulate(&mut p, &cfg).is_ok() && decapsulate(&mut p, &cfg).is_ok();
        if !ok || p != original {
            lossy += 1;
        }
    }
    report.line(
        9,
        "tunnel round trip",
        lossy == 0,
        &format!("{lossy} of 10000 random packets changed"),
        "0 changed",
    );

    let link = PhbConfig::plain(2_000_000, 50_000);
    let mut parts = Vec::new();
    let mut ok = true;
    for mode in [NodeMode::IpRouting, NodeMode::MplsSwitching] {
        let mut rtts = Vec::new();
        for enabled in [false, true] {
            let topo = chain(9, link);
            let c = NodeId(topo.node_count() - 1);
            let net = Network::build(topo, mode, None, &[]).expect("no pins");
            let flows = vec![ping_flow("ping", NodeId(0), c, 12_000, EF_TOS, 200, 100_000, 0)];
            let cfg = SimConfig {
                tunnel: TunnelConfig {
                    enabled,
                    compression_ratio: 0.5,
                    ..TunnelConfig::default()
                },
                end_time_us: 25_000_000,
                ..SimConfig::default()
            };
            let r = simulate(net, flows, cfg).expect("runs");
            let f = r.flow("ping").expect("ping");
            let mean = f.rtt_us.iter().sum::<u64>() as f64 / f.rtt_us.len().max(1) as f64;
            ok &= f.rtt_us.len() == 200;
            rtts.push(mean);
        }
        ok &= rtts[1] < rtts[0];
        parts.push(format!(
            "{}: untunneled {:.0} us, tunneled {:.0} us",
            mode.as_str(),
            rtts[0],
            rtts[1]
        ));
    }
    report.line(
        9,
        "tunnel compression benefit",
        ok,
        &parts.join("; "),
        "tunneled < untunneled at ratio 0.5, 12000 bits, 2 Mbit/s",
    );
}

fn main() {
    let mut report = Report { failures: 0 };
    let (runs, total) = timed(run_all);
    println!("experiments e1..e4 ran in {:.1} s", total.as_secs_f64());

    report.check(1, &runs.e2, "e2.ratio");
    report.line(
        1,
        "e2 runtime",
        runs.e2_time < Duration::from_secs(60),
        &format!("{:.2} s", runs.e2_time.as_secs_f64()),
        "< 60 s",
    );
    for id in ["e1.large_ratio", "e1.small_ip_faster", "e1.crossover"] {
        report.check(2, &runs.e1, id);
    }
    for id in ["e3.ef_reserved", "e3.be_share", "e3.ef_queueing"] {
        report.check(3, &runs.e3, id);
    }
    for id in ["e4.full_stack_ratio", "e4.monotone"] {
        report.check(4, &runs.e4, id);
    }
    forwarding_equivalence(&mut report);
    lpm_oracle(&mut report);
    let again = run_all();
    accounting(&mut report, &runs, &again);
    qos_properties(&mut report, &runs);
    tunnel(&mut report);

    if report.failures > 0 {
        println!("{} acceptance criteria failed", report.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
