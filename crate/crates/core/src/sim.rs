//! Deterministic discrete-event engine.
//!
//! Time is an integer number of microseconds. Events at equal times run in
//! the order they were scheduled. A packet's life: a node decides (paying
//! its processing delay), the packet joins the output queue of the chosen
//! link direction, is serialized, propagates, and arrives at the peer.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::control::{
    compute_routes, distribute_labels, Bindings, LabelWarning, LspRecord, NodeRole, PinError, Topology,
};
use crate::forwarding::{
    forward_ip, forward_mpls, CostModelError, DropReason, ForwardDecision, ForwardingNode, Hop, LookupCostModel,
};
use crate::ids::{IfaceId, NodeId};
use crate::metrics::FlowStats;
use crate::packet::{PacketRecord, TrafficClass, EF_DSCP};
use crate::prefix::Prefix;
use crate::qos::{EnqueueResult, LinkState, PhbError, QueuedPacket};
use crate::traffic::{FlowError, FlowSpec, Generator};
use crate::tunnel::{decapsulate, encapsulate, TunnelConfig, TunnelError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeMode {
    #[serde(rename = "ip")]
    IpRouting,
    #[serde(rename = "mpls")]
    MplsSwitching,
}

impl NodeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeMode::IpRouting => "ip",
            NodeMode::MplsSwitching => "mpls",
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event scheduled at {at} us, before the clock at {clock} us")]
    ScheduleInPast { at: u64, clock: u64 },
    #[error("flow `{0}` references a node that does not exist")]
    UnknownNode(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Cost(#[from] CostModelError),
    #[error("link {link}: {err}")]
    Phb { link: usize, err: PhbError },
    #[error(transparent)]
    Tunnel(#[from] TunnelError),
    #[error(transparent)]
    Pin(#[from] PinError),
}

struct Entry<T> {
    time: u64,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Time-ordered queue with a clock that never runs backwards.
pub struct EventQueue<T> {
    heap: BinaryHeap<Entry<T>>,
    clock: u64,
    next_seq: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            clock: 0,
            next_seq: 0,
        }
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        EventQueue::default()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: u64, item: T) -> Result<u64, SimError> {
        if time < self.clock {
            return Err(SimError::ScheduleInPast {
                at: time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { time, seq, item });
        Ok(seq)
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(u64, u64, T)> {
        let e = self.heap.pop()?;
        self.clock = e.time;
        Some((e.time, e.seq, e.item))
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.heap.iter().map(|e| &e.item)
    }

    fn advance_to(&mut self, t: u64) {
        self.clock = self.clock.max(t);
    }
}

/// Routed and label-bound network, ready for simulation.
#[derive(Clone, Debug)]
pub struct Network {
    pub topology: Topology,
    pub nodes: Vec<ForwardingNode>,
    modes: Vec<NodeMode>,
    pub lsps: Vec<LspRecord>,
    pub warnings: Vec<LabelWarning>,
}

impl Network {
    /// Routes every node prefix, distributes labels for all of them (or
    /// for `fecs` when given) and installs `pins`. Hosts always route.
    pub fn build(
        topology: Topology,
        mode: NodeMode,
        fecs: Option<&[Prefix]>,
        pins: &[(Prefix, Vec<NodeId>)],
    ) -> Result<Network, PinError> {
        let fibs = compute_routes(&topology);
        let all = topology.prefixes();
        let fecs = fecs.unwrap_or(&all);
        let mut bindings: Bindings = distribute_labels(&topology, &fibs, fecs);
        for (fec, path) in pins {
            bindings.pin_lsp(&topology, *fec, path)?;
        }
        let modes = topology
            .nodes()
            .iter()
            .map(|n| if n.role.is_router() { mode } else { NodeMode::IpRouting })
            .collect();
        let nodes = topology
            .nodes()
            .iter()
            .zip(fibs)
            .zip(std::mem::take(&mut bindings.libs))
            .enumerate()
            .map(|(i, ((n, fib), lib))| ForwardingNode {
                id: NodeId(i),
                local: n.prefix,
                fib,
                lib,
            })
            .collect();
        Ok(Network {
            topology,
            nodes,
            modes,
            lsps: bindings.lsps,
            warnings: bindings.warnings,
        })
    }

    pub fn mode(&self, node: NodeId) -> NodeMode {
        self.modes[node.0]
    }

    /// Overrides one router's mode. Hosts stay on IP routing.
    pub fn set_mode(&mut self, node: NodeId, mode: NodeMode) {
        if self.topology.node(node).role.is_router() {
            self.modes[node.0] = mode;
        }
    }

    pub fn role(&self, node: NodeId) -> NodeRole {
        self.topology.node(node).role
    }

    pub fn decide(&self, node: NodeId, packet: &mut PacketRecord, hop: Hop, cost: &LookupCostModel) -> ForwardDecision {
        let fwd = &self.nodes[node.0];
        match self.modes[node.0] {
            NodeMode::IpRouting => forward_ip(fwd, packet, hop, cost),
            NodeMode::MplsSwitching => forward_mpls(fwd, packet, hop, cost),
        }
    }

    pub fn host_addr(&self, node: NodeId) -> u32 {
        self.topology.node(node).prefix.map_or(0, |p| p.host_addr())
    }
}

/// Nodes visited by a packet from `src` to `dst_addr`, following the
/// forwarding decisions alone (no timing, no queues).
pub fn trace_path(
    net: &Network,
    cost: &LookupCostModel,
    src: NodeId,
    dst_addr: u32,
    tos: u8,
) -> Result<Vec<NodeId>, DropReason> {
    let mut packet = PacketRecord::new(0, net.host_addr(src), dst_addr, tos, 512);
    let mut path = vec![src];
    let mut node = src;
    let mut hop = Hop::Originate;
    // the TTL bounds the walk; the limit only guards against model bugs
    for _ in 0..=256 {
        match net.decide(node, &mut packet, hop, cost) {
            ForwardDecision::Deliver => return Ok(path),
            ForwardDecision::Drop(r) => return Err(r),
            ForwardDecision::Relay { next, .. } => {
                let port = net.topology.port(node, next.iface).ok_or(DropReason::Malformed)?;
                hop = Hop::Transit(port.peer_iface);
                node = port.peer;
                path.push(node);
            }
        }
    }
    Err(DropReason::TtlExpired)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub cost: LookupCostModel,
    pub tunnel: TunnelConfig,
    pub ef_dscp: u8,
    pub end_time_us: u64,
    pub seed: u64,
    /// Deliveries before this time are left out of throughput windows.
    pub warmup_us: u64,
    /// Bin width of the delivered-bits time series.
    pub interval_us: u64,
    /// Check packet conservation after every event.
    pub check_conservation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cost: LookupCostModel::default(),
            tunnel: TunnelConfig::default(),
            ef_dscp: EF_DSCP,
            end_time_us: 10_000_000,
            seed: 1,
            warmup_us: 0,
            interval_us: 1_000_000,
            check_conservation: cfg!(debug_assertions),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Counters {
    pub injected: u64,
    pub delivered: u64,
    pub dropped: BTreeMap<DropReason, u64>,
    pub in_flight: u64,
    /// Transit forwarding decisions and their summed node delay.
    pub decisions: u64,
    pub decision_us: f64,
}

impl Counters {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    pub fn conserved(&self) -> bool {
        self.injected == self.delivered + self.dropped_total() + self.in_flight
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Violations {
    /// Dequeue points where a transmitter stayed idle over a queued packet.
    pub work_conservation: u64,
    /// Police calls that left a bucket outside [0, burst].
    pub token_bucket: u64,
    /// Events after which injected != delivered + dropped + in flight.
    pub conservation: u64,
    pub dequeue_checks: u64,
    pub police_checks: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LinkStats {
    pub from: String,
    pub to: String,
    pub packets: u64,
    pub wire_bits: u64,
    pub busy_us: u64,
    /// Busy time of transmissions started after warmup.
    pub window_busy_us: u64,
    pub ef_packets: u64,
    pub be_packets: u64,
    pub policed: u64,
    pub queue_full: u64,
    pub max_queue: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub end_time_us: u64,
    pub warmup_us: u64,
    pub events_processed: u64,
    pub counters: Counters,
    /// Packets found in queues, transmitters and pending events at the end.
    pub resident_packets: u64,
    pub violations: Violations,
    pub flows: Vec<FlowStats>,
    /// One entry per link direction: a→b then b→a for each link.
    pub links: Vec<LinkStats>,
    pub interval_us: u64,
    /// Delivered IP bits per (class, interval index).
    pub class_bits: BTreeMap<(TrafficClass, u64), u64>,
    /// Delivered IP bits per (destination subnet, interval index).
    pub subnet_bits: BTreeMap<(String, u64), u64>,
}

impl SimReport {
    pub fn link(&self, from: &str, to: &str) -> Option<&LinkStats> {
        self.links.iter().find(|l| l.from == from && l.to == to)
    }

    pub fn flow(&self, name: &str) -> Option<&FlowStats> {
        self.flows.iter().find(|f| f.name == name)
    }

    pub fn window_us(&self) -> u64 {
        self.end_time_us.saturating_sub(self.warmup_us)
    }

    /// Link utilisation inside the measurement window.
    pub fn occupancy(&self, from: &str, to: &str) -> Option<f64> {
        let w = self.window_us();
        let l = self.link(from, to)?;
        (w > 0).then(|| l.window_busy_us as f64 / w as f64)
    }

    /// Delivered IP-datagram rate of a flow inside the window.
    pub fn throughput_bps(&self, name: &str) -> Option<f64> {
        let w = self.window_us();
        let f = self.flow(name)?;
        (w > 0).then(|| f.window_ip_bits as f64 * 1e6 / w as f64)
    }
}

enum Event {
    Fire(usize),
    Arrive {
        node: NodeId,
        in_iface: IfaceId,
        packet: Box<PacketRecord>,
    },
    Egress {
        node: NodeId,
        iface: IfaceId,
        packet: Box<PacketRecord>,
    },
    Deliver {
        node: NodeId,
        packet: Box<PacketRecord>,
    },
    TransmitComplete(usize),
    End,
}

struct Direction {
    state: LinkState,
    to: NodeId,
    to_iface: IfaceId,
    in_tx: Option<QueuedPacket>,
    stats: LinkStats,
}

pub struct Simulator {
    net: Network,
    cfg: SimConfig,
    events: EventQueue<Event>,
    dirs: Vec<Direction>,
    generators: Vec<Generator>,
    flows: Vec<FlowStats>,
    counters: Counters,
    violations: Violations,
    next_packet_id: u64,
    class_bits: BTreeMap<(TrafficClass, u64), u64>,
    subnet_bits: BTreeMap<(String, u64), u64>,
    subnet_names: Vec<String>,
    processed: u64,
}

impl Simulator {
    pub fn new(net: Network, flows: Vec<FlowSpec>, cfg: SimConfig) -> Result<Simulator, SimError> {
        cfg.cost.validate()?;
        cfg.tunnel.validate()?;
        for (i, l) in net.topology.links().iter().enumerate() {
            l.phb.validate().map_err(|err| SimError::Phb { link: i, err })?;
        }
        let n = net.topology.node_count();
        for f in &flows {
            f.validate()?;
            if f.src.0 >= n || f.dst.0 >= n {
                return Err(SimError::UnknownNode(f.name.clone()));
            }
        }

        let names: Vec<String> = net.topology.nodes().iter().map(|n| n.name.clone()).collect();
        let mut dirs = Vec::with_capacity(2 * net.topology.links().len());
        for l in net.topology.links() {
            for (from, to) in [(l.a, l.b), (l.b, l.a)] {
                let to_iface = net
                    .topology
                    .iface_towards(to, from)
                    .expect("link is in both port lists");
                dirs.push(Direction {
                    state: LinkState::new(l.phb, cfg.ef_dscp),
                    to,
                    to_iface,
                    in_tx: None,
                    stats: LinkStats {
                        from: names[from.0].clone(),
                        to: names[to.0].clone(),
                        ..LinkStats::default()
                    },
                });
            }
        }
        let subnet_names = net
            .topology
            .nodes()
            .iter()
            .map(|n| n.prefix.map_or_else(|| n.name.clone(), |p| p.to_string()))
            .collect();

        let mut events = EventQueue::new();
        events.schedule(cfg.end_time_us, Event::End)?;
        let mut generators = Vec::with_capacity(flows.len());
        let mut stats = Vec::with_capacity(flows.len());
        for (i, f) in flows.into_iter().enumerate() {
            stats.push(FlowStats {
                name: f.name.clone(),
                class: Some(TrafficClass::from_tos(f.tos, cfg.ef_dscp)),
                is_ping: f.is_ping(),
                ..FlowStats::default()
            });
            let mut g = Generator::new(f, cfg.seed, i);
            if let Some(t) = g.next_departure() {
                events.schedule(t, Event::Fire(i))?;
            }
            generators.push(g);
        }

        Ok(Simulator {
            net,
            cfg,
            events,
            dirs,
            generators,
            flows: stats,
            counters: Counters::default(),
            violations: Violations::default(),
            next_packet_id: 0,
            class_bits: BTreeMap::new(),
            subnet_bits: BTreeMap::new(),
            subnet_names,
            processed: 0,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn run(mut self) -> SimReport {
        while let Some(t) = self.events.peek_time() {
            if t > self.cfg.end_time_us {
                break;
            }
            let (now, _, ev) = self.events.pop().expect("peeked");
            if let Event::End = ev {
                break;
            }
            self.processed += 1;
            self.handle(now, ev);
            if self.cfg.check_conservation && !self.counters.conserved() {
                self.violations.conservation += 1;
            }
        }
        self.events.advance_to(self.cfg.end_time_us);
        self.finish()
    }

    fn finish(self) -> SimReport {
        let mut resident = 0u64;
        for ev in self.events.iter() {
            if matches!(ev, Event::Arrive { .. } | Event::Egress { .. } | Event::Deliver { .. }) {
                resident += 1;
            }
        }
        for d in &self.dirs {
            resident += d.state.queued() as u64 + u64::from(d.in_tx.is_some());
        }
        SimReport {
            end_time_us: self.events.clock(),
            warmup_us: self.cfg.warmup_us,
            events_processed: self.processed,
            counters: self.counters,
            resident_packets: resident,
            violations: self.violations,
            flows: self.flows,
            links: self.dirs.into_iter().map(|d| d.stats).collect(),
            interval_us: self.cfg.interval_us,
            class_bits: self.class_bits,
            subnet_bits: self.subnet_bits,
        }
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        self.events
            .schedule(at, ev)
            .expect("engine only schedules at or after the clock");
    }

    fn handle(&mut self, now: u64, ev: Event) {
        match ev {
            Event::Fire(i) => self.fire(now, i),
            Event::Arrive { node, in_iface, packet } => self.at_node(now, node, Hop::Transit(in_iface), *packet),
            Event::Egress { node, iface, packet } => self.egress(now, node, iface, *packet),
            Event::Deliver { node, packet } => self.deliver(now, node, *packet),
            Event::TransmitComplete(d) => self.transmit_complete(now, d),
            Event::End => {}
        }
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        id
    }

    fn inject(&mut self, now: u64, node: NodeId, packet: PacketRecord) {
        self.counters.injected += 1;
        self.counters.in_flight += 1;
        self.at_node(now, node, Hop::Originate, packet);
    }

    fn fire(&mut self, now: u64, i: usize) {
        let spec = self.generators[i].spec().clone();
        let id = self.fresh_id();
        let src = self.net.host_addr(spec.src);
        let dst = self.net.host_addr(spec.dst);
        let mut p = PacketRecord::new(id, src, dst, spec.tos, spec.payload_bits);
        p.traffic_class = TrafficClass::from_tos(spec.tos, self.cfg.ef_dscp);
        p.created_at_us = now;
        p.flow_id = i as u32;
        self.flows[i].sent += 1;
        if let Some(t) = self.generators[i].next_departure() {
            self.schedule(t, Event::Fire(i));
        }
        self.inject(now, spec.src, p);
    }

    fn drop_packet(&mut self, packet: &PacketRecord, reason: DropReason) {
        self.counters.in_flight -= 1;
        *self.counters.dropped.entry(reason).or_insert(0) += 1;
        let f = &mut self.flows[packet.flow_id as usize];
        *f.dropped.entry(reason).or_insert(0) += 1;
    }

    fn at_node(&mut self, now: u64, node: NodeId, hop: Hop, mut packet: PacketRecord) {
        let decision = self.net.decide(node, &mut packet, hop, &self.cfg.cost);
        match decision {
            ForwardDecision::Drop(r) => self.drop_packet(&packet, r),
            ForwardDecision::Deliver => {
                let mut delay = 0.0;
                if packet.tunnel_wrapped {
                    match decapsulate(&mut packet, &self.cfg.tunnel) {
                        Ok(d) => delay = d,
                        Err(_) => return self.drop_packet(&packet, DropReason::Malformed),
                    }
                }
                let d = delay.round() as u64;
                if d == 0 {
                    self.deliver(now, node, packet);
                } else {
                    self.schedule(
                        now + d,
                        Event::Deliver {
                            node,
                            packet: Box::new(packet),
                        },
                    );
                }
            }
            ForwardDecision::Relay { next, node_delay_us } => {
                let mut delay = node_delay_us;
                if let Hop::Transit(_) = hop {
                    self.counters.decisions += 1;
                    self.counters.decision_us += node_delay_us;
                }
                if self.cfg.tunnel.enabled && self.net.role(node) == NodeRole::EdgeRouter {
                    let from_host = match hop {
                        Hop::Transit(i) => self
                            .net
                            .topology
                            .port(node, i)
                            .is_some_and(|p| self.net.role(p.peer) == NodeRole::Host),
                        Hop::Originate => false,
                    };
                    let to_host = self.net.role(next.node) == NodeRole::Host;
                    let res = if !packet.tunnel_wrapped && from_host && !to_host {
                        Some(encapsulate(&mut packet, &self.cfg.tunnel))
                    } else if packet.tunnel_wrapped && to_host {
                        Some(decapsulate(&mut packet, &self.cfg.tunnel))
                    } else {
                        None
                    };
                    match res {
                        Some(Ok(d)) => delay += d,
                        Some(Err(_)) => return self.drop_packet(&packet, DropReason::Malformed),
                        None => {}
                    }
                }
                let d = delay.round() as u64;
                if d == 0 {
                    self.egress(now, node, next.iface, packet);
                } else {
                    self.schedule(
                        now + d,
                        Event::Egress {
                            node,
                            iface: next.iface,
                            packet: Box::new(packet),
                        },
                    );
                }
            }
        }
    }

    fn dir_of(&self, node: NodeId, iface: IfaceId) -> Option<usize> {
        let port = self.net.topology.port(node, iface)?;
        let link = &self.net.topology.links()[port.link];
        Some(2 * port.link + usize::from(link.a != node))
    }

    fn egress(&mut self, now: u64, node: NodeId, iface: IfaceId, packet: PacketRecord) {
        let Some(d) = self.dir_of(node, iface) else {
            return self.drop_packet(&packet, DropReason::Malformed);
        };
        let is_ef =
            self.dirs[d].state.phb.qos_enabled && crate::qos::classify(&packet, self.cfg.ef_dscp) == TrafficClass::Ef;
        let res = self.dirs[d].state.enqueue(packet, now);
        if is_ef {
            self.violations.police_checks += 1;
            if !self.dirs[d].state.ef_bucket.within_bounds() {
                self.violations.token_bucket += 1;
            }
        }
        match res {
            EnqueueResult::Queued => {
                let q = self.dirs[d].state.queued();
                let s = &mut self.dirs[d].stats;
                s.max_queue = s.max_queue.max(q);
            }
            EnqueueResult::Dropped(reason, p) => {
                let s = &mut self.dirs[d].stats;
                match reason {
                    DropReason::Policed => s.policed += 1,
                    _ => s.queue_full += 1,
                }
                self.drop_packet(&p, reason);
            }
        }
        self.kick(now, d);
    }

    /// Starts the next transmission if the direction is idle.
    fn kick(&mut self, now: u64, d: usize) {
        let dir = &mut self.dirs[d];
        if dir.in_tx.is_none() {
            if let Some(mut q) = dir.state.dequeue_next() {
                q.packet.queue_wait_us += now - q.enqueued_at_us;
                let bits = q.packet.wire_bits();
                let ser = dir.state.phb.serialization_us(bits);
                let s = &mut dir.stats;
                s.packets += 1;
                s.wire_bits += bits;
                s.busy_us += ser;
                if now >= self.cfg.warmup_us {
                    s.window_busy_us += ser;
                }
                match crate::qos::classify(&q.packet, self.cfg.ef_dscp) {
                    TrafficClass::Ef => s.ef_packets += 1,
                    TrafficClass::Be => s.be_packets += 1,
                }
                dir.in_tx = Some(q);
                self.events
                    .schedule(now + ser, Event::TransmitComplete(d))
                    .expect("future time");
            }
        }
        let dir = &self.dirs[d];
        self.violations.dequeue_checks += 1;
        if dir.in_tx.is_none() && dir.state.queued() > 0 {
            self.violations.work_conservation += 1;
        }
    }

    fn transmit_complete(&mut self, now: u64, d: usize) {
        let dir = &mut self.dirs[d];
        let q = dir.in_tx.take().expect("transmit completes only while busy");
        let at = now + dir.state.phb.link_delay_us;
        let (to, to_iface) = (dir.to, dir.to_iface);
        self.schedule(
            at,
            Event::Arrive {
                node: to,
                in_iface: to_iface,
                packet: Box::new(q.packet),
            },
        );
        self.kick(now, d);
    }

    fn deliver(&mut self, now: u64, node: NodeId, packet: PacketRecord) {
        self.counters.delivered += 1;
        self.counters.in_flight -= 1;
        let ip_bits = packet.ip_bits();
        let bin = now / self.cfg.interval_us.max(1);
        *self.class_bits.entry((packet.traffic_class, bin)).or_insert(0) += ip_bits;
        let subnet = self.subnet_names[node.0].clone();
        *self.subnet_bits.entry((subnet, bin)).or_insert(0) += ip_bits;

        let fi = packet.flow_id as usize;
        let is_ping = self.flows[fi].is_ping;
        {
            let f = &mut self.flows[fi];
            f.delivered += 1;
            f.delivered_ip_bits += ip_bits;
            if now >= self.cfg.warmup_us {
                f.window_ip_bits += ip_bits;
            }
        }
        let elapsed = now - packet.created_at_us;
        if !is_ping {
            let f = &mut self.flows[fi];
            f.one_way_us.push(elapsed);
            f.queue_wait_us.push(packet.queue_wait_us);
            return;
        }
        if packet.is_echo_reply {
            let f = &mut self.flows[fi];
            f.rtt_us.push(elapsed);
            f.queue_wait_us.push(packet.queue_wait_us);
            return;
        }
        self.flows[fi].one_way_us.push(elapsed);
        let id = self.fresh_id();
        let mut reply = PacketRecord::new(id, packet.dst_addr, packet.src_addr, packet.tos, packet.payload_bits);
        reply.traffic_class = packet.traffic_class;
        reply.created_at_us = packet.created_at_us;
        reply.flow_id = packet.flow_id;
        reply.is_echo_reply = true;
        reply.queue_wait_us = packet.queue_wait_us;
        self.flows[fi].replies_sent += 1;
        self.inject(now, node, reply);
    }
}

/// Builds and runs in one call.
pub fn simulate(net: Network, flows: Vec<FlowSpec>, cfg: SimConfig) -> Result<SimReport, SimError> {
    Ok(Simulator::new(net, flows, cfg)?.run())
}
