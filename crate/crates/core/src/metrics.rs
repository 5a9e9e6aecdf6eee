//! Per-flow measurement records and summary statistics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::forwarding::DropReason;
use crate::packet::TrafficClass;

/// Marker written in place of a statistic that has no samples.
pub const NO_DATA: &str = "no_data";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleStats {
    pub count: usize,
    pub mean: f64,
    pub min: u64,
    pub max: u64,
    pub p50: u64,
    pub p95: u64,
    pub p99: u64,
    /// Mean absolute difference between consecutive samples.
    pub jitter: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Statistics over samples in arrival order; `None` when empty.
pub fn summarize(samples: &[u64]) -> Option<SampleStats> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = samples.len();
    let sum: u128 = samples.iter().map(|&s| u128::from(s)).sum();
    let jitter = if n < 2 {
        0.0
    } else {
        let d: u128 = samples.windows(2).map(|w| u128::from(w[0].abs_diff(w[1]))).sum();
        d as f64 / (n - 1) as f64
    };
    Some(SampleStats {
        count: n,
        mean: sum as f64 / n as f64,
        min: sorted[0],
        max: sorted[n - 1],
        p50: percentile(&sorted, 0.50)?,
        p95: percentile(&sorted, 0.95)?,
        p99: percentile(&sorted, 0.99)?,
        jitter,
    })
}

/// What the engine collected for one flow.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FlowStats {
    pub name: String,
    pub class: Option<TrafficClass>,
    pub is_ping: bool,
    /// Requests, or datagrams for UDP flows.
    pub sent: u64,
    /// Ping replies injected by the destination.
    pub replies_sent: u64,
    pub delivered: u64,
    pub dropped: BTreeMap<DropReason, u64>,
    /// Round-trip times of returned pings, in return order.
    pub rtt_us: Vec<u64>,
    /// Source-to-destination times of requests or datagrams.
    pub one_way_us: Vec<u64>,
    /// Output-queue waiting summed over hops, per delivered datagram (UDP)
    /// or per returned ping (both directions).
    pub queue_wait_us: Vec<u64>,
    /// IP datagram bits delivered inside the measurement window.
    pub window_ip_bits: u64,
    pub delivered_ip_bits: u64,
}

impl FlowStats {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    /// Unreturned pings over requests, or dropped over sent for UDP.
    pub fn loss(&self) -> Option<f64> {
        if self.sent == 0 {
            return None;
        }
        let lost = if self.is_ping {
            self.sent - self.rtt_us.len() as u64
        } else {
            self.dropped_total()
        };
        Some(lost as f64 / self.sent as f64)
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        NO_DATA.to_string()
    }
}

pub fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| NO_DATA.to_string(), fmt_f64)
}

pub fn fmt_opt_u64(v: Option<u64>) -> String {
    v.map_or_else(|| NO_DATA.to_string(), |x| x.to_string())
}

/// A rectangular table of already-formatted cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub const STATS_HEADER: [&str; 8] = ["count", "mean", "min", "p50", "p95", "p99", "max", "jitter"];

/// Cells matching [`STATS_HEADER`].
pub fn stats_cells(stats: Option<&SampleStats>) -> Vec<String> {
    match stats {
        Some(s) => vec![
            s.count.to_string(),
            fmt_f64(s.mean),
            s.min.to_string(),
            s.p50.to_string(),
            s.p95.to_string(),
            s.p99.to_string(),
            s.max.to_string(),
            fmt_f64(s.jitter),
        ],
        None => {
            let mut v = vec!["0".to_string()];
            v.extend(std::iter::repeat_n(NO_DATA.to_string(), STATS_HEADER.len() - 1));
            v
        }
    }
}

/// One table row per flow.
pub fn flow_table(name: &str, flows: &[FlowStats]) -> Table {
    let mut header = vec!["flow", "class", "sent", "delivered", "dropped", "loss"];
    header.extend(STATS_HEADER.iter().map(|h| match *h {
        "count" => "samples",
        other => other,
    }));
    let mut t = Table::new(name, &header);
    for f in flows {
        let samples = if f.is_ping { &f.rtt_us } else { &f.one_way_us };
        let mut row = vec![
            f.name.clone(),
            f.class.map_or("-", |c| c.as_str()).to_string(),
            f.sent.to_string(),
            f.delivered.to_string(),
            f.dropped_total().to_string(),
            fmt_opt_f64(f.loss()),
        ];
        row.extend(stats_cells(summarize(samples).as_ref()));
        t.push(row);
    }
    t
}
