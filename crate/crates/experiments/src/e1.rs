//! Latency against the number of gateways, for several packet sizes.

use lspsim_core::forwarding::LookupCostModel;
use lspsim_core::metrics::{fmt_f64, stats_cells, summarize, Table, STATS_HEADER};
use lspsim_core::qos::PhbConfig;
use lspsim_core::sim::{simulate, Network, NodeMode, SimConfig, SimError, SimReport};
use lspsim_core::NodeId;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{LineChart, Series};
use crate::config::hash_json;
use crate::result::{mean, Check, ExperimentResult, Ratio};
use crate::scenario::{chain, ping_flow};

#[derive(Clone, Debug, Serialize)]
pub struct E1Params {
    pub gateways: Vec<usize>,
    pub sizes_bits: Vec<u64>,
    pub pings: u64,
    pub gap_us: u64,
    pub seed: u64,
    pub modes: Vec<NodeMode>,
    pub cost: LookupCostModel,
    pub link: PhbConfig,
    /// Sizes at or above this are held to the ratio band.
    pub large_from_bits: u64,
    pub ratio_band: (f64, f64),
}

impl Default for E1Params {
    fn default() -> Self {
        E1Params {
            gateways: (0..=9).collect(),
            sizes_bits: vec![512, 1024, 4096, 12000],
            pings: 1000,
            gap_us: 10_000,
            seed: 1,
            modes: vec![NodeMode::IpRouting, NodeMode::MplsSwitching],
            cost: LookupCostModel::default(),
            link: crate::lan_link(),
            large_from_bits: 4096,
            ratio_band: (0.25, 0.45),
        }
    }
}

#[derive(Clone, Copy)]
struct Variant {
    gateways: usize,
    size: u64,
    mode: NodeMode,
}

fn run_variant(p: &E1Params, v: Variant) -> Result<SimReport, SimError> {
    let topo = chain(v.gateways, p.link);
    let n = topo.node_count();
    let net = Network::build(topo, v.mode, None, &[])?;
    let flows = vec![ping_flow(
        "ping",
        NodeId(0),
        NodeId(n - 1),
        v.size,
        0,
        p.pings,
        p.gap_us,
        0,
    )];
    let cfg = SimConfig {
        cost: p.cost,
        seed: p.seed,
        end_time_us: p.pings * p.gap_us + 2_000_000,
        ..SimConfig::default()
    };
    simulate(net, flows, cfg)
}

/// Size where the MPLS/IP ratio crosses 1, by linear interpolation
/// between neighbouring sizes.
pub fn crossover(points: &[(u64, f64)]) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let ((s0, r0), (s1, r1)) = (w[0], w[1]);
        if (r0 - 1.0) * (r1 - 1.0) <= 0.0 && r0 != r1 {
            Some(s0 as f64 + (1.0 - r0) / (r1 - r0) * (s1 as f64 - s0 as f64))
        } else {
            None
        }
    })
}

pub fn run_e1(p: &E1Params) -> Result<ExperimentResult, SimError> {
    let mut variants = Vec::new();
    for &gateways in &p.gateways {
        for &size in &p.sizes_bits {
            for &mode in &p.modes {
                variants.push(Variant { gateways, size, mode });
            }
        }
    }
    let reports: Vec<SimReport> = variants
        .par_iter()
        .map(|&v| run_variant(p, v))
        .collect::<Result<_, _>>()?;

    let mut res = ExperimentResult::new("e1", "RTT against gateway count and packet size", p.seed, hash_json(p));
    res.modes = p.modes.iter().map(|m| m.as_str().to_string()).collect();

    let mut header = vec!["gateways", "size_bits", "mode", "sent", "loss"];
    header.extend(STATS_HEADER);
    let mut table = Table::new("e1_rtt", &header);
    let mut means = std::collections::BTreeMap::new();
    for (v, r) in variants.iter().zip(&reports) {
        res.accounting.add(r);
        let f = r.flow("ping").expect("ping flow");
        let mut row = vec![
            v.gateways.to_string(),
            v.size.to_string(),
            v.mode.as_str().to_string(),
            f.sent.to_string(),
            lspsim_core::metrics::fmt_opt_f64(f.loss()),
        ];
        row.extend(stats_cells(summarize(&f.rtt_us).as_ref()));
        table.push(row);
        if let Some(m) = mean(&f.rtt_us) {
            means.insert((v.gateways, v.size, v.mode), m);
        }
    }
    res.tables.push(table);

    let mut rtt_chart = LineChart::new(
        "e1_rtt_vs_gateways",
        "Mean RTT against gateways",
        "gateways",
        "mean RTT (us)",
    );
    for &size in &p.sizes_bits {
        for &mode in &p.modes {
            rtt_chart.series.push(Series {
                label: format!("{} {size} bit", mode.as_str()),
                points: p
                    .gateways
                    .iter()
                    .filter_map(|&g| means.get(&(g, size, mode)).map(|&m| (g as f64, m)))
                    .collect(),
            });
        }
    }
    res.charts.push(rtt_chart);

    let both = p.modes.contains(&NodeMode::IpRouting) && p.modes.contains(&NodeMode::MplsSwitching);
    if !both {
        let why = "needs both modes";
        res.checks.push(Check::skipped(
            "e1.large_ratio",
            "MPLS/IP RTT ratio for large packets",
            why,
        ));
        res.checks
            .push(Check::skipped("e1.small_ip_faster", "IP faster for small packets", why));
        res.checks.push(Check::skipped("e1.crossover", "crossover size", why));
        res.checks
            .push(Check::skipped("e1.zero_gateways", "modes equal without gateways", why));
        res.tables.push(crossover_table(&[]));
        return Ok(res);
    }

    let mut ratio_chart = LineChart::new("e1_ratio_vs_gateways", "MPLS / IP mean RTT", "gateways", "ratio");
    ratio_chart.guides = vec![
        ("band low".into(), p.ratio_band.0),
        ("band high".into(), p.ratio_band.1),
        ("parity".into(), 1.0),
    ];
    let mut ratio_of = std::collections::BTreeMap::new();
    for &size in &p.sizes_bits {
        let mut pts = Vec::new();
        for &g in &p.gateways {
            let (Some(&ip), Some(&mpls)) = (
                means.get(&(g, size, NodeMode::IpRouting)),
                means.get(&(g, size, NodeMode::MplsSwitching)),
            ) else {
                continue;
            };
            let r = Ratio::new(
                format!("mpls_over_ip_g{g}_s{size}"),
                "mpls_mean_rtt_us",
                mpls,
                "ip_mean_rtt_us",
                ip,
            );
            pts.push((g as f64, r.value));
            ratio_of.insert((g, size), r.value);
            res.ratios.push(r);
        }
        ratio_chart.series.push(Series {
            label: format!("{size} bit"),
            points: pts,
        });
    }
    res.charts.push(ratio_chart);

    let routed: Vec<usize> = p.gateways.iter().copied().filter(|&g| g > 0).collect();
    let ratio_ref = &ratio_of;
    let large: Vec<f64> = routed
        .iter()
        .flat_map(|&g| {
            p.sizes_bits
                .iter()
                .filter(|&&s| s >= p.large_from_bits)
                .filter_map(move |&s| ratio_ref.get(&(g, s)).copied())
        })
        .collect();
    let lo = large.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = large.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg = large.iter().sum::<f64>() / large.len().max(1) as f64;
    res.checks.push(Check::new(
        "e1.large_ratio",
        format!(
            "MPLS/IP mean RTT for sizes >= {} bits over 1..9 gateways",
            p.large_from_bits
        ),
        format!("min {lo:.4} max {hi:.4} mean {avg:.4} over {} points", large.len()),
        format!("within [{}, {}]", p.ratio_band.0, p.ratio_band.1),
        !large.is_empty() && lo >= p.ratio_band.0 && hi <= p.ratio_band.1,
    ));

    let smallest = p.sizes_bits.iter().copied().min().unwrap_or(0);
    let mut small_ok = !routed.is_empty();
    let mut worst = f64::INFINITY;
    for &g in &routed {
        let ip = means.get(&(g, smallest, NodeMode::IpRouting));
        let mpls = means.get(&(g, smallest, NodeMode::MplsSwitching));
        match (ip, mpls) {
            (Some(ip), Some(mpls)) => {
                worst = worst.min(mpls - ip);
                small_ok &= ip < mpls;
            }
            _ => small_ok = false,
        }
    }
    res.checks.push(Check::new(
        "e1.small_ip_faster",
        format!("IP mean RTT < MPLS mean RTT at {smallest} bits for every gateway count"),
        format!("smallest MPLS - IP margin {} us", fmt_f64(worst)),
        "margin > 0",
        small_ok,
    ));

    let mut crossings = Vec::new();
    for &g in &routed {
        let pts: Vec<(u64, f64)> = p
            .sizes_bits
            .iter()
            .filter_map(|&s| ratio_of.get(&(g, s)).map(|&r| (s, r)))
            .collect();
        crossings.push((g, crossover(&pts)));
    }
    let cross_ok = !crossings.is_empty()
        && crossings
            .iter()
            .all(|(_, c)| c.is_some_and(|x| x > 512.0 && x < 4096.0));
    let xs: Vec<f64> = crossings.iter().filter_map(|c| c.1).collect();
    res.checks.push(Check::new(
        "e1.crossover",
        "size where MPLS/IP crosses 1",
        format!(
            "{} of {} gateway counts cross, range [{}, {}] bits",
            xs.len(),
            crossings.len(),
            fmt_f64(xs.iter().copied().fold(f64::INFINITY, f64::min)),
            fmt_f64(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        ),
        "every crossing in (512, 4096)",
        cross_ok,
    ));
    res.tables.push(crossover_table(&crossings));

    if p.gateways.contains(&0) {
        let same = p.sizes_bits.iter().all(|&s| ratio_of.get(&(0, s)) == Some(&1.0));
        res.checks.push(Check::new(
            "e1.zero_gateways",
            "A wired to C: both modes give the same RTT",
            if same { "equal" } else { "different" },
            "equal",
            same,
        ));
    }
    Ok(res)
}

fn crossover_table(rows: &[(usize, Option<f64>)]) -> Table {
    let mut t = Table::new("e1_crossover", &["gateways", "crossover_bits"]);
    for (g, c) in rows {
        t.push(vec![g.to_string(), lspsim_core::metrics::fmt_opt_f64(*c)]);
    }
    t
}
