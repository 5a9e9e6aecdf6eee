//! Scenario files: TOML with a strict schema. Every error carries the line
//! it refers to when one is known.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use lspsim_core::control::{NodeRole, Topology};
use lspsim_core::forwarding::LookupCostModel;
use lspsim_core::packet::{TrafficClass, EF_DSCP};
use lspsim_core::qos::{mark, PhbConfig};
use lspsim_core::sim::{NodeMode, SimConfig};
use lspsim_core::traffic::{FlowKind, FlowSpec, PING_GAP_US};
use lspsim_core::tunnel::TunnelConfig;
use lspsim_core::{NodeId, Prefix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn default_seed() -> u64 {
    1
}

fn default_interval() -> u64 {
    1_000_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub end_time_us: u64,
    #[serde(default)]
    pub warmup_us: u64,
    #[serde(default = "default_interval")]
    pub interval_us: u64,
    pub mode: NodeMode,
    #[serde(default)]
    pub ef_dscp: Option<u8>,
    #[serde(default)]
    pub cost: LookupCostModel,
    #[serde(default)]
    pub tunnel: TunnelConfig,
    /// Settings of links that name no profile.
    #[serde(default)]
    pub link_defaults: PhbConfig,
    #[serde(default)]
    pub link_profiles: BTreeMap<String, PhbConfig>,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub links: Vec<LinkConfig>,
    #[serde(default)]
    pub flows: Vec<FlowConfig>,
    /// Node names whose prefixes get labels. All prefixes when absent.
    #[serde(default)]
    pub fecs: Option<Vec<Spanned<String>>>,
    #[serde(default)]
    pub pins: Vec<PinConfig>,
    #[serde(default)]
    pub synthetic_routes: Option<SyntheticRoutesConfig>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub name: Spanned<String>,
    pub role: NodeRole,
    #[serde(default)]
    pub prefix: Option<Spanned<String>>,
    /// Per-router override of the scenario mode.
    #[serde(default)]
    pub mode: Option<NodeMode>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub a: Spanned<String>,
    pub b: Spanned<String>,
    #[serde(default)]
    pub profile: Option<Spanned<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKindName {
    PingBurst,
    CbrUdp,
    PoissonUdp,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub name: Spanned<String>,
    pub kind: FlowKindName,
    pub src: Spanned<String>,
    pub dst: Spanned<String>,
    pub payload_bits: u64,
    /// Marks the TOS byte with the class codepoint. Exclusive with `tos`.
    #[serde(default)]
    pub class: Option<TrafficClass>,
    #[serde(default)]
    pub tos: Option<u8>,
    #[serde(default)]
    pub start_us: u64,
    #[serde(default)]
    pub count: Option<u64>,
    #[serde(default)]
    pub gap_us: Option<u64>,
    #[serde(default)]
    pub rate_bps: Option<u64>,
    #[serde(default)]
    pub duration_us: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinConfig {
    /// Node whose prefix is the FEC.
    pub fec: Spanned<String>,
    pub path: Vec<Spanned<String>>,
}

fn default_len() -> u8 {
    24
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRoutesConfig {
    pub count: usize,
    #[serde(default = "default_len")]
    pub min_len: u8,
    #[serde(default = "default_len")]
    pub max_len: u8,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Synthetic routes follow each router's route to this node.
    #[serde(default)]
    pub toward: Option<Spanned<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

/// Synthetic FIB filler resolved against the topology.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticRoutes {
    pub count: usize,
    pub min_len: u8,
    pub max_len: u8,
    pub seed: u64,
    pub toward: Option<NodeId>,
}

/// A validated scenario, ready to build and run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    pub mode: NodeMode,
    pub mode_overrides: Vec<(NodeId, NodeMode)>,
    pub sim: SimConfig,
    pub flows: Vec<FlowSpec>,
    pub fecs: Option<Vec<Prefix>>,
    pub pins: Vec<(Prefix, Vec<NodeId>)>,
    pub synthetic: Option<SyntheticRoutes>,
    pub output_dir: Option<PathBuf>,
    /// SHA-256 over the canonical JSON form of the file (seed included).
    pub hash: String,
}

struct Lines {
    starts: Vec<usize>,
}

impl Lines {
    fn new(src: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(src.match_indices('\n').map(|(i, _)| i + 1));
        Lines { starts }
    }

    fn line_of(&self, offset: usize) -> usize {
        self.starts.partition_point(|&s| s <= offset)
    }

    fn err(&self, span: Range<usize>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: Some(self.line_of(span.start)),
            message: message.into(),
        }
    }
}

fn plain(message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        message: message.into(),
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize");
    hex::encode(Sha256::digest(&json))
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|e| plain(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&src)
}

pub fn parse_scenario(src: &str) -> Result<Scenario, ConfigError> {
    let lines = Lines::new(src);
    let file: ScenarioFile = toml::from_str(src).map_err(|e| {
        let message = e.message().to_string();
        match e.span() {
            Some(span) => lines.err(span, message),
            None => plain(message),
        }
    })?;
    resolve(&file, &lines)
}

/// Default prefix of the `i`-th node: 10.x.y.0/24 with x.y = i + 1.
pub fn auto_prefix(i: usize) -> Prefix {
    let n = (i + 1) as u32;
    Prefix::new((10 << 24) | ((n & 0xffff) << 8), 24).expect("aligned /24")
}

fn resolve(file: &ScenarioFile, lines: &Lines) -> Result<Scenario, ConfigError> {
    if file.nodes.is_empty() {
        return Err(plain("scenario has no nodes"));
    }
    if file.end_time_us == 0 {
        return Err(plain("end_time_us must be positive"));
    }
    if file.interval_us == 0 {
        return Err(plain("interval_us must be positive"));
    }
    file.cost.validate().map_err(|e| plain(format!("[cost] {e}")))?;
    file.tunnel.validate().map_err(|e| plain(format!("[tunnel] {e}")))?;

    let mut topo = Topology::new();
    let mut names: BTreeMap<String, NodeId> = BTreeMap::new();
    let mut explicit: BTreeSet<Prefix> = BTreeSet::new();
    let mut parsed_prefix = Vec::new();
    for n in &file.nodes {
        let p = match &n.prefix {
            Some(s) => {
                let p: Prefix = s.get_ref().parse().map_err(|e| lines.err(s.span(), format!("{e}")))?;
                if !explicit.insert(p) {
                    return Err(lines.err(s.span(), format!("prefix {p} used twice")));
                }
                Some(p)
            }
            None => None,
        };
        parsed_prefix.push(p);
    }
    let mut auto = 0usize;
    let mut modes = Vec::new();
    for (n, p) in file.nodes.iter().zip(parsed_prefix) {
        let name = n.name.get_ref();
        if names.contains_key(name) {
            return Err(lines.err(n.name.span(), format!("duplicate node name `{name}`")));
        }
        let prefix = match (p, n.role) {
            (Some(p), _) => Some(p),
            (None, NodeRole::Host) => {
                // skip auto prefixes that collide with explicit ones
                let mut cand = auto_prefix(auto);
                while explicit.contains(&cand) {
                    auto += 1;
                    cand = auto_prefix(auto);
                }
                auto += 1;
                Some(cand)
            }
            (None, _) => None,
        };
        let id = topo
            .add_node(name.clone(), n.role, prefix)
            .map_err(|e| lines.err(n.name.span(), e.to_string()))?;
        names.insert(name.clone(), id);
        if let Some(m) = n.mode {
            if !n.role.is_router() {
                return Err(lines.err(n.name.span(), format!("host `{name}` cannot set a forwarding mode")));
            }
            modes.push((id, m));
        }
    }

    let lookup = |s: &Spanned<String>| -> Result<NodeId, ConfigError> {
        names
            .get(s.get_ref())
            .copied()
            .ok_or_else(|| lines.err(s.span(), format!("unknown node `{}`", s.get_ref())))
    };

    for (name, phb) in
        std::iter::once((&"link_defaults".to_string(), &file.link_defaults)).chain(file.link_profiles.iter())
    {
        phb.validate()
            .map_err(|e| plain(format!("link profile `{name}`: {e}")))?;
    }
    for l in &file.links {
        let a = lookup(&l.a)?;
        let b = lookup(&l.b)?;
        let phb = match &l.profile {
            Some(p) => *file
                .link_profiles
                .get(p.get_ref())
                .ok_or_else(|| lines.err(p.span(), format!("unknown link profile `{}`", p.get_ref())))?,
            None => file.link_defaults,
        };
        topo.add_link(a, b, phb)
            .map_err(|e| lines.err(l.a.span(), e.to_string()))?;
    }

    let ef_dscp = file.ef_dscp.unwrap_or(EF_DSCP);
    if ef_dscp >= 64 {
        return Err(plain(format!("ef_dscp {ef_dscp} does not fit in six bits")));
    }
    let mut flows = Vec::new();
    let mut flow_names = BTreeSet::new();
    for f in &file.flows {
        let name = f.name.get_ref().clone();
        let at = f.name.span();
        if !flow_names.insert(name.clone()) {
            return Err(lines.err(at, format!("duplicate flow name `{name}`")));
        }
        let need =
            |v: Option<u64>, key: &str| v.ok_or_else(|| lines.err(at.clone(), format!("flow `{name}` needs `{key}`")));
        let forbid = |v: Option<u64>, key: &str| match v {
            Some(_) => Err(lines.err(at.clone(), format!("flow `{name}` does not take `{key}`"))),
            None => Ok(()),
        };
        let kind = match f.kind {
            FlowKindName::PingBurst => {
                forbid(f.rate_bps, "rate_bps")?;
                forbid(f.duration_us, "duration_us")?;
                FlowKind::PingBurst {
                    count: need(f.count, "count")?,
                    gap_us: f.gap_us.unwrap_or(PING_GAP_US),
                }
            }
            FlowKindName::CbrUdp | FlowKindName::PoissonUdp => {
                forbid(f.count, "count")?;
                forbid(f.gap_us, "gap_us")?;
                let rate_bps = need(f.rate_bps, "rate_bps")?;
                let duration_us = need(f.duration_us, "duration_us")?;
                if f.kind == FlowKindName::CbrUdp {
                    FlowKind::CbrUdp { rate_bps, duration_us }
                } else {
                    FlowKind::PoissonUdp { rate_bps, duration_us }
                }
            }
        };
        let tos = match (f.class, f.tos) {
            (Some(_), Some(_)) => return Err(lines.err(at, format!("flow `{name}` sets both `class` and `tos`"))),
            (Some(TrafficClass::Ef), None) => ef_dscp << 2,
            (Some(c), None) => mark(c),
            (None, Some(t)) => t,
            (None, None) => 0,
        };
        let spec = FlowSpec {
            name: name.clone(),
            kind,
            src: lookup(&f.src)?,
            dst: lookup(&f.dst)?,
            payload_bits: f.payload_bits,
            tos,
            start_us: f.start_us,
        };
        spec.validate().map_err(|e| lines.err(at.clone(), e.to_string()))?;
        flows.push(spec);
    }

    let owned_prefix = |s: &Spanned<String>| -> Result<Prefix, ConfigError> {
        let id = lookup(s)?;
        topo.node(id)
            .prefix
            .ok_or_else(|| lines.err(s.span(), format!("node `{}` has no prefix", s.get_ref())))
    };
    let fecs = match &file.fecs {
        Some(list) => Some(list.iter().map(owned_prefix).collect::<Result<Vec<_>, _>>()?),
        None => None,
    };
    let mut pins = Vec::new();
    for p in &file.pins {
        let fec = owned_prefix(&p.fec)?;
        let path = p.path.iter().map(lookup).collect::<Result<Vec<_>, _>>()?;
        pins.push((fec, path));
    }
    // reject bad pins here, where the line is still known
    {
        let fibs = lspsim_core::control::compute_routes(&topo);
        let mut b = lspsim_core::control::distribute_labels(&topo, &fibs, &[]);
        for (cfg, (fec, path)) in file.pins.iter().zip(&pins) {
            b.pin_lsp(&topo, *fec, path)
                .map_err(|e| lines.err(cfg.fec.span(), format!("invalid pin: {e}")))?;
        }
    }

    let synthetic = match &file.synthetic_routes {
        Some(s) => {
            if s.min_len > s.max_len || s.max_len > 32 {
                return Err(plain("synthetic_routes: need min_len <= max_len <= 32"));
            }
            Some(SyntheticRoutes {
                count: s.count,
                min_len: s.min_len,
                max_len: s.max_len,
                seed: s.seed.unwrap_or(file.seed),
                toward: s.toward.as_ref().map(lookup).transpose()?,
            })
        }
        None => None,
    };

    let sim = SimConfig {
        cost: file.cost,
        tunnel: file.tunnel,
        ef_dscp,
        end_time_us: file.end_time_us,
        seed: file.seed,
        warmup_us: file.warmup_us,
        interval_us: file.interval_us,
        check_conservation: true,
    };
    Ok(Scenario {
        name: file.name.clone().unwrap_or_else(|| "scenario".into()),
        topology: topo,
        mode: file.mode,
        mode_overrides: modes,
        sim,
        flows,
        fecs,
        pins,
        synthetic,
        output_dir: file.output.as_ref().map(|o| PathBuf::from(&o.dir)),
        hash: hash_json(file),
    })
}
