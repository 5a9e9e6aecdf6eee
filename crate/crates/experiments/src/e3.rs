//! DiffServ reservation: EF and BE sharing a 2 Mbit/s chain.

use lspsim_core::forwarding::LookupCostModel;
use lspsim_core::metrics::{
    fmt_f64, fmt_opt_f64, fmt_opt_u64, percentile, stats_cells, summarize, Table, STATS_HEADER,
};
use lspsim_core::packet::{TrafficClass, EF_TOS, IP_HEADER_BITS, SHIM_BITS};
use lspsim_core::qos::PhbConfig;
use lspsim_core::sim::{simulate, Network, NodeMode, SimConfig, SimError, SimReport};
use lspsim_core::NodeId;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{LineChart, Series};
use crate::config::hash_json;
use crate::result::{Check, ExperimentResult, Ratio};
use crate::scenario::{cbr_flow, chain};

#[derive(Clone, Debug, Serialize)]
pub struct E3Case {
    pub name: String,
    /// Offered payload rate of each EF flow.
    pub ef_rates_bps: Vec<u64>,
    pub best_effort: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct E3Params {
    pub gateways: usize,
    pub duration_us: u64,
    pub warmup_us: u64,
    pub ef_payload_bits: u64,
    pub be_payload_bits: u64,
    pub be_rate_bps: u64,
    pub cases: Vec<E3Case>,
    pub seed: u64,
    pub modes: Vec<NodeMode>,
    pub cost: LookupCostModel,
    pub link: PhbConfig,
    /// Relative tolerance on EF throughput around the reservation.
    pub ef_tolerance: f64,
    /// Fraction of the BE share BE must reach.
    pub be_fraction: f64,
}

impl Default for E3Params {
    fn default() -> Self {
        let case = |name: &str, ef: &[u64], be| E3Case {
            name: name.into(),
            ef_rates_bps: ef.to_vec(),
            best_effort: be,
        };
        E3Params {
            gateways: 9,
            duration_us: 30_000_000,
            warmup_us: 2_000_000,
            ef_payload_bits: 11_840,
            be_payload_bits: 2000,
            be_rate_bps: 2_400_000,
            cases: vec![
                case("ef_alone", &[200_000], false),
                case("two_ef", &[100_000, 100_000], false),
                case("ef_and_be", &[300_000], true),
                case("two_ef_and_be", &[150_000, 150_000], true),
            ],
            seed: 1,
            modes: vec![NodeMode::IpRouting, NodeMode::MplsSwitching],
            cost: LookupCostModel::default(),
            link: PhbConfig::default(),
            ef_tolerance: 0.05,
            be_fraction: 0.95,
        }
    }
}

#[derive(Clone, Copy)]
struct Variant {
    case: usize,
    mode: NodeMode,
}

fn ef_name(i: usize) -> String {
    format!("ef{}", i + 1)
}

fn run_variant(p: &E3Params, v: Variant) -> Result<SimReport, SimError> {
    let case = &p.cases[v.case];
    let topo = chain(p.gateways, p.link);
    let c = NodeId(topo.node_count() - 1);
    let net = Network::build(topo, v.mode, None, &[])?;
    let n = case.ef_rates_bps.len() as u64;
    let mut flows = Vec::new();
    for (i, &rate) in case.ef_rates_bps.iter().enumerate() {
        // spread the EF flows evenly over one packet period
        let period = p.ef_payload_bits * 1_000_000 / rate;
        let start = period * i as u64 / n;
        flows.push(cbr_flow(
            &ef_name(i),
            NodeId(0),
            c,
            p.ef_payload_bits,
            EF_TOS,
            rate,
            p.duration_us - start,
            start,
        ));
    }
    if case.best_effort {
        flows.push(cbr_flow(
            "be",
            NodeId(0),
            c,
            p.be_payload_bits,
            0,
            p.be_rate_bps,
            p.duration_us,
            0,
        ));
    }
    let cfg = SimConfig {
        cost: p.cost,
        seed: p.seed,
        end_time_us: p.duration_us,
        warmup_us: p.warmup_us,
        ..SimConfig::default()
    };
    simulate(net, flows, cfg)
}

/// Wire bits of an EF packet on a core link.
fn ef_wire_bits(p: &E3Params, mode: NodeMode) -> u64 {
    let shim = if mode == NodeMode::MplsSwitching && p.gateways >= 2 {
        SHIM_BITS
    } else {
        0
    };
    p.ef_payload_bits + IP_HEADER_BITS + shim
}

/// Fluid-model EF delivery: the aggregate offered IP rate, capped by the
/// policer, which meters wire bits.
pub fn fluid_ef_bps(offered_ip_bps: f64, ef_rate_bps: u64, ip_bits: u64, wire_bits: u64) -> f64 {
    offered_ip_bps.min(ef_rate_bps as f64 * ip_bits as f64 / wire_bits as f64)
}

struct CaseSummary {
    ef_bps: f64,
    be_bps: Option<f64>,
    ef_lost: u64,
    ef_p95_wait: Option<u64>,
}

pub fn run_e3(p: &E3Params) -> Result<ExperimentResult, SimError> {
    let variants: Vec<Variant> = (0..p.cases.len())
        .flat_map(|case| p.modes.iter().map(move |&mode| Variant { case, mode }))
        .collect();
    let reports: Vec<SimReport> = variants
        .par_iter()
        .map(|&v| run_variant(p, v))
        .collect::<Result<_, _>>()?;

    let mut res = ExperimentResult::new("e3", "EF reservation against best-effort load", p.seed, hash_json(p));
    res.modes = p.modes.iter().map(|m| m.as_str().to_string()).collect();

    let mut header = vec![
        "case",
        "mode",
        "flow",
        "class",
        "offered_ip_bps",
        "delivered_ip_bps",
        "sent",
        "delivered",
        "policed",
        "queue_full",
        "loss",
        "queue_wait_p95_us",
    ];
    header.extend(STATS_HEADER);
    let mut flows = Table::new("e3_flows", &header);
    let mut classes = Table::new(
        "e3_class_throughput",
        &["case", "mode", "ef_ip_bps", "be_ip_bps", "ef_fluid_bps"],
    );
    let mut series = Table::new(
        "e3_class_series",
        &["case", "mode", "interval", "ef_ip_bps", "be_ip_bps"],
    );
    let ip_ef = p.ef_payload_bits + IP_HEADER_BITS;
    let ip_be = p.be_payload_bits + IP_HEADER_BITS;
    let mut summaries = Vec::new();
    let mut chart = LineChart::new(
        "e3_throughput",
        "Delivered rate per class, EF and BE together",
        "time (s)",
        "rate (bit/s)",
    );

    for (v, r) in variants.iter().zip(&reports) {
        res.accounting.add(r);
        let case = &p.cases[v.case];
        let mode = v.mode.as_str();
        let mut ef_bps = 0.0;
        let mut ef_lost = 0;
        let mut ef_waits = Vec::new();
        let mut offered_ef = 0.0;
        for f in &r.flows {
            let (offered, ip) = match f.name.as_str() {
                "be" => (p.be_rate_bps, ip_be),
                name => {
                    let i: usize = name[2..].parse::<usize>().expect("ef flow name") - 1;
                    (case.ef_rates_bps[i], ip_ef)
                }
            };
            let offered_ip = offered as f64 * ip as f64
                / if f.name == "be" {
                    p.be_payload_bits
                } else {
                    p.ef_payload_bits
                } as f64;
            let delivered = r.throughput_bps(&f.name).unwrap_or(0.0);
            let mut sorted = f.queue_wait_us.clone();
            sorted.sort_unstable();
            let p95 = percentile(&sorted, 0.95);
            if f.class == Some(TrafficClass::Ef) {
                ef_bps += delivered;
                offered_ef += offered_ip;
                ef_lost += f.dropped_total();
                ef_waits.extend_from_slice(&f.queue_wait_us);
            }
            let mut row = vec![
                case.name.clone(),
                mode.to_string(),
                f.name.clone(),
                f.class.map_or("-", |c| c.as_str()).to_string(),
                fmt_f64(offered_ip),
                fmt_f64(delivered),
                f.sent.to_string(),
                f.delivered.to_string(),
                f.dropped
                    .get(&lspsim_core::forwarding::DropReason::Policed)
                    .copied()
                    .unwrap_or(0)
                    .to_string(),
                f.dropped
                    .get(&lspsim_core::forwarding::DropReason::QueueFull)
                    .copied()
                    .unwrap_or(0)
                    .to_string(),
                fmt_opt_f64(f.loss()),
                fmt_opt_u64(p95),
            ];
            row.extend(stats_cells(summarize(&f.one_way_us).as_ref()));
            flows.push(row);
        }
        let be_bps = case.best_effort.then(|| r.throughput_bps("be").unwrap_or(0.0));
        let fluid = fluid_ef_bps(offered_ef, p.link.ef_rate_bps, ip_ef, ef_wire_bits(p, v.mode));
        classes.push(vec![
            case.name.clone(),
            mode.to_string(),
            fmt_f64(ef_bps),
            fmt_opt_f64(be_bps),
            fmt_f64(fluid),
        ]);
        let bins = r.end_time_us / r.interval_us;
        let mut ef_pts = Vec::new();
        let mut be_pts = Vec::new();
        for b in 0..bins {
            let ef = r.class_bits.get(&(TrafficClass::Ef, b)).copied().unwrap_or(0) as f64 * 1e6 / r.interval_us as f64;
            let be = r.class_bits.get(&(TrafficClass::Be, b)).copied().unwrap_or(0) as f64 * 1e6 / r.interval_us as f64;
            series.push(vec![
                case.name.clone(),
                mode.to_string(),
                b.to_string(),
                fmt_f64(ef),
                fmt_f64(be),
            ]);
            let t = (b * r.interval_us) as f64 / 1e6;
            ef_pts.push((t, ef));
            be_pts.push((t, be));
        }
        if v.case == 2 {
            chart.series.push(Series {
                label: format!("EF {mode}"),
                points: ef_pts,
            });
            chart.series.push(Series {
                label: format!("BE {mode}"),
                points: be_pts,
            });
        }
        ef_waits.sort_unstable();
        res.ratios.push(Ratio::new(
            format!("ef_delivered_over_fluid_{}_{mode}", case.name),
            "ef_ip_bps",
            ef_bps,
            "fluid_ef_bps",
            fluid,
        ));
        summaries.push(CaseSummary {
            ef_bps,
            be_bps,
            ef_lost,
            ef_p95_wait: percentile(&ef_waits, 0.95),
        });
    }
    chart.guides = vec![
        ("EF reservation".into(), p.link.ef_rate_bps as f64),
        ("BE share".into(), p.link.be_rate_bps as f64),
    ];
    res.tables.extend([flows, classes, series]);
    res.charts.push(chart);

    let lookup = |case: usize| {
        variants
            .iter()
            .zip(&summaries)
            .filter(move |(v, _)| v.case == case)
            .map(|(v, s)| (v.mode, s))
    };
    let join = |parts: Vec<String>| parts.join("; ");

    if p.cases.len() < 4 {
        return Ok(res);
    }

    // case 1: one EF flow under the reservation
    let lost: Vec<(NodeMode, u64)> = lookup(0).map(|(m, s)| (m, s.ef_lost)).collect();
    res.checks.push(Check::new(
        "e3.case1_no_loss",
        format!("{}: EF offered below the reservation loses nothing", p.cases[0].name),
        join(lost.iter().map(|(m, l)| format!("{}: {l} lost", m.as_str())).collect()),
        "0 lost",
        lost.iter().all(|(_, l)| *l == 0),
    ));

    // case 3: EF over the reservation with saturating BE
    let reserve = p.link.ef_rate_bps as f64;
    let (ef_lo, ef_hi) = (reserve * (1.0 - p.ef_tolerance), reserve * (1.0 + p.ef_tolerance));
    let c3: Vec<(NodeMode, &CaseSummary)> = lookup(2).collect();
    res.checks.push(Check::new(
        "e3.ef_reserved",
        format!("{}: EF delivered rate", p.cases[2].name),
        join(
            c3.iter()
                .map(|(m, s)| format!("{}: {:.0} bit/s", m.as_str(), s.ef_bps))
                .collect(),
        ),
        format!("within [{ef_lo:.0}, {ef_hi:.0}]"),
        c3.iter().all(|(_, s)| s.ef_bps >= ef_lo && s.ef_bps <= ef_hi),
    ));
    let be_min = p.link.be_rate_bps as f64 * p.be_fraction;
    res.checks.push(Check::new(
        "e3.be_share",
        format!("{}: BE delivered rate", p.cases[2].name),
        join(
            c3.iter()
                .map(|(m, s)| format!("{}: {} bit/s", m.as_str(), fmt_opt_f64(s.be_bps)))
                .collect(),
        ),
        format!(">= {be_min:.0}"),
        c3.iter().all(|(_, s)| s.be_bps.is_some_and(|b| b >= be_min)),
    ));
    let limits: Vec<u64> = c3
        .iter()
        .map(|(m, _)| 2 * p.link.serialization_us(ef_wire_bits(p, *m)))
        .collect();
    res.checks.push(Check::new(
        "e3.ef_queueing",
        format!("{}: EF p95 end-to-end queueing delay", p.cases[2].name),
        join(
            c3.iter()
                .zip(&limits)
                .map(|((m, s), l)| format!("{}: {} us (limit {l})", m.as_str(), fmt_opt_u64(s.ef_p95_wait)))
                .collect(),
        ),
        "<= 2 x EF serialization time",
        c3.iter()
            .zip(&limits)
            .all(|((_, s), l)| s.ef_p95_wait.is_some_and(|w| w <= *l)),
    ));

    // case 4: two EF flows sharing the policer
    let c4: Vec<(NodeMode, f64, f64)> = lookup(3)
        .map(|(m, s)| {
            let offered: f64 = p.cases[3]
                .ef_rates_bps
                .iter()
                .map(|&r| r as f64 * ip_ef as f64 / p.ef_payload_bits as f64)
                .sum();
            (
                m,
                s.ef_bps,
                fluid_ef_bps(offered, p.link.ef_rate_bps, ip_ef, ef_wire_bits(p, m)),
            )
        })
        .collect();
    res.checks.push(Check::new(
        "e3.case4_aggregate",
        format!("{}: combined EF rate against the fluid model", p.cases[3].name),
        join(
            c4.iter()
                .map(|(m, e, f)| format!("{}: {e:.0} vs {f:.0}", m.as_str()))
                .collect(),
        ),
        format!("within {}%", p.ef_tolerance * 100.0),
        c4.iter().all(|(_, e, f)| (e - f).abs() <= f * p.ef_tolerance),
    ));
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fluid_caps_at_reservation() {
        assert_eq!(fluid_ef_bps(100_000.0, 220_000, 12_000, 12_000), 100_000.0);
        assert_eq!(fluid_ef_bps(300_000.0, 220_000, 12_000, 12_000), 220_000.0);
        let mpls = fluid_ef_bps(300_000.0, 220_000, 12_000, 12_032);
        assert!(mpls < 220_000.0 && mpls > 219_000.0);
    }
}
