//! Large routing tables: ping RTT with tens of thousands of FIB entries.

use std::collections::BTreeMap;

use lspsim_core::forwarding::LookupCostModel;
use lspsim_core::metrics::{fmt_f64, stats_cells, summarize, Table, STATS_HEADER};
use lspsim_core::qos::PhbConfig;
use lspsim_core::sim::{simulate, Network, NodeMode, SimConfig, SimError, SimReport};
use lspsim_core::NodeId;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{LineChart, Series};
use crate::config::{hash_json, SyntheticRoutes};
use crate::result::{mean, Check, ExperimentResult, Ratio};
use crate::scenario::{add_synthetic_routes, chain, left_prefix, ping_flow, right_prefix};

#[derive(Clone, Debug, Serialize)]
pub struct E2Params {
    pub gateways: usize,
    pub routes: usize,
    pub small_routes: usize,
    pub sweep_gateways: Vec<usize>,
    pub payload_bits: u64,
    pub pings: u64,
    pub gap_us: u64,
    pub seed: u64,
    pub modes: Vec<NodeMode>,
    pub cost: LookupCostModel,
    pub link: PhbConfig,
    pub target_ratio: f64,
    pub tolerance: f64,
}

impl Default for E2Params {
    fn default() -> Self {
        E2Params {
            gateways: 9,
            routes: 50_000,
            small_routes: 50,
            sweep_gateways: (1..=9).collect(),
            payload_bits: 8000,
            pings: 1000,
            gap_us: 10_000,
            seed: 1,
            modes: vec![NodeMode::IpRouting, NodeMode::MplsSwitching],
            cost: LookupCostModel::default(),
            link: crate::lan_link(),
            target_ratio: 3.0,
            tolerance: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Variant {
    gateways: usize,
    routes: usize,
    mode: NodeMode,
}

struct Outcome {
    report: SimReport,
    fib_entries: usize,
}

fn run_variant(p: &E2Params, v: Variant) -> Result<Outcome, SimError> {
    let topo = chain(v.gateways, p.link);
    let c = NodeId(topo.node_count() - 1);
    let fecs = [left_prefix(), right_prefix()];
    let mut net = Network::build(topo, v.mode, Some(&fecs), &[])?;
    add_synthetic_routes(
        &mut net,
        &SyntheticRoutes {
            count: v.routes,
            min_len: 24,
            max_len: 24,
            seed: p.seed,
            toward: Some(c),
        },
    );
    let fib_entries = net.nodes.get(1).map_or(0, |n| n.fib.entry_count());
    let flows = vec![ping_flow("ping", NodeId(0), c, p.payload_bits, 0, p.pings, p.gap_us, 0)];
    let cfg = SimConfig {
        cost: p.cost,
        seed: p.seed,
        end_time_us: p.pings * p.gap_us + 2_000_000,
        ..SimConfig::default()
    };
    Ok(Outcome {
        report: simulate(net, flows, cfg)?,
        fib_entries,
    })
}

pub fn run_e2(p: &E2Params) -> Result<ExperimentResult, SimError> {
    let mut variants = Vec::new();
    for &mode in &p.modes {
        variants.push(Variant {
            gateways: p.gateways,
            routes: p.routes,
            mode,
        });
        variants.push(Variant {
            gateways: p.gateways,
            routes: p.small_routes,
            mode,
        });
        for &g in &p.sweep_gateways {
            if g != p.gateways {
                variants.push(Variant {
                    gateways: g,
                    routes: p.routes,
                    mode,
                });
            }
        }
    }
    variants.sort();
    let outcomes: Vec<Outcome> = variants
        .par_iter()
        .map(|&v| run_variant(p, v))
        .collect::<Result<_, _>>()?;

    let mut res = ExperimentResult::new("e2", "RTT with large routing tables", p.seed, hash_json(p));
    res.modes = p.modes.iter().map(|m| m.as_str().to_string()).collect();

    let mut header = vec![
        "gateways",
        "synthetic_routes",
        "fib_entries",
        "mode",
        "sent",
        "decisions",
        "mean_decision_us",
    ];
    header.extend(STATS_HEADER);
    let mut table = Table::new("e2_rtt", &header);
    let mut means = BTreeMap::new();
    let mut decision = BTreeMap::new();
    for (v, o) in variants.iter().zip(&outcomes) {
        let r = &o.report;
        res.accounting.add(r);
        let f = r.flow("ping").expect("ping flow");
        let c = &r.counters;
        let per_hop = (c.decisions > 0).then(|| c.decision_us / c.decisions as f64);
        let mut row = vec![
            v.gateways.to_string(),
            v.routes.to_string(),
            o.fib_entries.to_string(),
            v.mode.as_str().to_string(),
            f.sent.to_string(),
            c.decisions.to_string(),
            lspsim_core::metrics::fmt_opt_f64(per_hop),
        ];
        row.extend(stats_cells(summarize(&f.rtt_us).as_ref()));
        table.push(row);
        if let Some(m) = mean(&f.rtt_us) {
            means.insert(*v, m);
        }
        if let Some(d) = per_hop {
            decision.insert(*v, d);
        }
    }
    res.tables.push(table);

    let mut chart = LineChart::new(
        "e2_rtt_vs_gateways",
        "Mean RTT with a large FIB",
        "gateways",
        "mean RTT (us)",
    );
    for &mode in &p.modes {
        let mut gs: Vec<usize> = p.sweep_gateways.clone();
        if !gs.contains(&p.gateways) {
            gs.push(p.gateways);
        }
        gs.sort();
        chart.series.push(Series {
            label: mode.as_str().to_string(),
            points: gs
                .iter()
                .filter_map(|&g| {
                    means
                        .get(&Variant {
                            gateways: g,
                            routes: p.routes,
                            mode,
                        })
                        .map(|&m| (g as f64, m))
                })
                .collect(),
        });
    }
    res.charts.push(chart);

    let key = |routes, mode| Variant {
        gateways: p.gateways,
        routes,
        mode,
    };
    let ip = means.get(&key(p.routes, NodeMode::IpRouting)).copied();
    let mpls = means.get(&key(p.routes, NodeMode::MplsSwitching)).copied();
    let lo = p.target_ratio * (1.0 - p.tolerance);
    let hi = p.target_ratio * (1.0 + p.tolerance);
    match (ip, mpls) {
        (Some(ip), Some(mpls)) => {
            let r = Ratio::new("ip_over_mpls", "ip_mean_rtt_us", ip, "mpls_mean_rtt_us", mpls);
            let v = r.value;
            res.ratios.push(r);
            if let (Some(&di), Some(&dm)) = (
                decision.get(&key(p.routes, NodeMode::IpRouting)),
                decision.get(&key(p.routes, NodeMode::MplsSwitching)),
            ) {
                res.ratios.push(Ratio::new(
                    "decision_ip_over_mpls",
                    "ip_mean_decision_us",
                    di,
                    "mpls_mean_decision_us",
                    dm,
                ));
            }
            res.checks.push(Check::new(
                "e2.ratio",
                format!("IP/MPLS mean RTT with {} routes and {} gateways", p.routes, p.gateways),
                format!("{v:.4}"),
                format!("within [{lo}, {hi}]"),
                (lo..=hi).contains(&v),
            ));
        }
        _ => res
            .checks
            .push(Check::skipped("e2.ratio", "IP/MPLS mean RTT", "needs both modes")),
    }

    if let (Some(&a), Some(&b)) = (
        means.get(&key(p.small_routes, NodeMode::MplsSwitching)),
        means.get(&key(p.routes, NodeMode::MplsSwitching)),
    ) {
        res.checks.push(Check::new(
            "e2.mpls_table_invariant",
            format!("MPLS RTT with {} vs {} routes", p.small_routes, p.routes),
            format!("{} vs {}", fmt_f64(a), fmt_f64(b)),
            "exactly equal",
            a == b,
        ));
    }
    if let (Some(&a), Some(&b)) = (
        means.get(&key(p.small_routes, NodeMode::IpRouting)),
        means.get(&key(p.routes, NodeMode::IpRouting)),
    ) {
        res.checks.push(Check::new(
            "e2.ip_table_nondecreasing",
            format!("IP RTT with {} vs {} routes", p.small_routes, p.routes),
            format!("{} vs {}", fmt_f64(a), fmt_f64(b)),
            "second >= first",
            b >= a,
        ));
    }

    let mut gs = p.sweep_gateways.clone();
    gs.sort();
    let mut increasing = true;
    let mut detail = Vec::new();
    for &mode in &p.modes {
        let series: Vec<f64> = gs
            .iter()
            .filter_map(|&g| {
                means
                    .get(&Variant {
                        gateways: g,
                        routes: p.routes,
                        mode,
                    })
                    .copied()
            })
            .collect();
        increasing &= series.len() == gs.len() && series.windows(2).all(|w| w[1] > w[0]);
        detail.push(format!(
            "{}: {}",
            mode.as_str(),
            series.iter().map(|m| format!("{m:.0}")).collect::<Vec<_>>().join(" ")
        ));
    }
    res.checks.push(Check::new(
        "e2.sweep_increasing",
        format!("RTT strictly increasing over gateways {gs:?}"),
        detail.join("; "),
        "strictly increasing in every mode",
        increasing,
    ));
    Ok(res)
}
