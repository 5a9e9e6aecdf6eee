//! Topology, shortest-path routing and a synchronous stand-in for label
//! distribution, plus explicitly pinned LSPs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::forwarding::{Fib, FtnEntry, IlmKey, LabelOp, Lib, NhlfeEntry, RouteEntry};
use crate::ids::{IfaceId, NextHop, NodeId};
use crate::prefix::Prefix;
use crate::qos::PhbConfig;

/// First label handed out by the allocator; 0–15 are reserved.
pub const FIRST_LABEL: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Host,
    EdgeRouter,
    CoreRouter,
}

impl NodeRole {
    pub fn is_router(self) -> bool {
        self != NodeRole::Host
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoNode {
    pub name: String,
    pub role: NodeRole,
    pub prefix: Option<Prefix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoLink {
    pub a: NodeId,
    pub b: NodeId,
    pub phb: PhbConfig,
}

/// One end of a link as seen from the node owning it. The port's position
/// in the node's port list is its interface id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Port {
    pub link: usize,
    pub peer: NodeId,
    pub peer_iface: IfaceId,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("link from {0} to itself")]
    SelfLoop(NodeId),
    #[error("prefix {0} is assigned to more than one node")]
    DuplicatePrefix(Prefix),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Topology {
    nodes: Vec<TopoNode>,
    links: Vec<TopoLink>,
    ports: Vec<Vec<Port>>,
}

impl Topology {
    pub fn new() -> Self {
        Topology::default()
    }

    pub fn add_node(
        &mut self,
        name: impl Into<String>,
        role: NodeRole,
        prefix: Option<Prefix>,
    ) -> Result<NodeId, TopologyError> {
        if let Some(p) = prefix {
            if self.nodes.iter().any(|n| n.prefix == Some(p)) {
                return Err(TopologyError::DuplicatePrefix(p));
            }
        }
        self.nodes.push(TopoNode {
            name: name.into(),
            role,
            prefix,
        });
        self.ports.push(Vec::new());
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, phb: PhbConfig) -> Result<usize, TopologyError> {
        for n in [a, b] {
            if n.0 >= self.nodes.len() {
                return Err(TopologyError::UnknownNode(n));
            }
        }
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        let link = self.links.len();
        let a_iface = IfaceId(self.ports[a.0].len() as u32);
        let b_iface = IfaceId(self.ports[b.0].len() as u32);
        self.ports[a.0].push(Port {
            link,
            peer: b,
            peer_iface: b_iface,
        });
        self.ports[b.0].push(Port {
            link,
            peer: a,
            peer_iface: a_iface,
        });
        self.links.push(TopoLink { a, b, phb });
        Ok(link)
    }

    pub fn nodes(&self) -> &[TopoNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TopoNode {
        &self.nodes[id.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn links(&self) -> &[TopoLink] {
        &self.links
    }

    pub fn link_mut(&mut self, link: usize) -> &mut TopoLink {
        &mut self.links[link]
    }

    pub fn ports(&self, id: NodeId) -> &[Port] {
        &self.ports[id.0]
    }

    pub fn port(&self, id: NodeId, iface: IfaceId) -> Option<&Port> {
        self.ports[id.0].get(iface.0 as usize)
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn owner_of(&self, prefix: &Prefix) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.prefix.as_ref() == Some(prefix))
            .map(NodeId)
    }

    /// Lowest-numbered interface of `from` that reaches `to`.
    pub fn iface_towards(&self, from: NodeId, to: NodeId) -> Option<IfaceId> {
        self.ports[from.0]
            .iter()
            .position(|p| p.peer == to)
            .map(|i| IfaceId(i as u32))
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        self.hop_distances(NodeId(0)).iter().all(|d| d.is_some())
    }

    /// Hop counts from `from` to every node.
    pub fn hop_distances(&self, from: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.nodes.len()];
        dist[from.0] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.0].unwrap_or(0);
            for p in &self.ports[u.0] {
                if dist[p.peer.0].is_none() {
                    dist[p.peer.0] = Some(d + 1);
                    queue.push_back(p.peer);
                }
            }
        }
        dist
    }

    /// Destination prefixes in node order.
    pub fn prefixes(&self) -> Vec<Prefix> {
        self.nodes.iter().filter_map(|n| n.prefix).collect()
    }
}

/// Minimum-hop routes to every node prefix. Among equally short next hops
/// the lowest node id wins, then the lowest interface.
pub fn compute_routes(topo: &Topology) -> Vec<Fib> {
    let mut fibs = vec![Fib::new(); topo.node_count()];
    for (dst_idx, dst) in topo.nodes().iter().enumerate() {
        let Some(prefix) = dst.prefix else { continue };
        // links are symmetric, so distance to dst equals distance from dst
        let dist = topo.hop_distances(NodeId(dst_idx));
        for (u, fib) in fibs.iter_mut().enumerate() {
            if u == dst_idx {
                continue;
            }
            let Some(du) = dist[u] else { continue };
            let best = topo
                .ports(NodeId(u))
                .iter()
                .enumerate()
                .filter(|(_, p)| dist[p.peer.0] == Some(du - 1))
                .min_by_key(|(i, p)| (p.peer, *i));
            if let Some((i, p)) = best {
                fib.insert(RouteEntry {
                    prefix,
                    next: NextHop {
                        node: p.peer,
                        iface: IfaceId(i as u32),
                    },
                });
            }
        }
    }
    fibs
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LspRecord {
    pub fec: Prefix,
    /// Ingress router first, egress router last.
    pub path: Vec<NodeId>,
    /// `labels[i]` is carried on the hop `path[i] → path[i + 1]`.
    pub labels: Vec<u32>,
    pub pinned: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LabelWarning {
    pub fec: Prefix,
    pub node: Option<NodeId>,
    pub reason: String,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PinError {
    #[error("explicit path needs at least two routers")]
    TooShort,
    #[error("node {0} is not a router")]
    NotARouter(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0} appears twice in the path")]
    Loop(NodeId),
    #[error("no link between {0} and {1}")]
    MissingLink(NodeId, NodeId),
    #[error("no node owns FEC {0}")]
    UnknownFec(Prefix),
    #[error("path ends at {0}, which is not the egress for the FEC")]
    WrongEgress(NodeId),
    #[error("label space exhausted at {0}")]
    LabelsExhausted(NodeId),
}

/// Label state of every node, produced by [`distribute_labels`].
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    pub libs: Vec<Lib>,
    pub lsps: Vec<LspRecord>,
    pub warnings: Vec<LabelWarning>,
    next_label: Vec<u32>,
    pins: Vec<(Prefix, Vec<NodeId>)>,
}

/// Allocates one label per (router, FEC) in FEC order and wires each
/// router's incoming label map to its next hop's label.
pub fn distribute_labels(topo: &Topology, fibs: &[Fib], fecs: &[Prefix]) -> Bindings {
    let mut b = Bindings::default();
    b.redistribute(topo, fibs, fecs);
    b
}

fn route_of(fibs: &[Fib], node: NodeId, fec: &Prefix) -> Option<NextHop> {
    fibs[node.0].get(fec).map(|r| r.next)
}

impl Bindings {
    /// Rebuilds all shortest-path bindings, then re-applies stored pins.
    pub fn redistribute(&mut self, topo: &Topology, fibs: &[Fib], fecs: &[Prefix]) {
        let n = topo.node_count();
        self.libs = vec![Lib::new(); n];
        self.lsps.clear();
        self.warnings.clear();
        self.next_label = vec![FIRST_LABEL; n];

        let mut seen = BTreeSet::new();
        for fec in fecs {
            if seen.insert(*fec) {
                self.distribute_fec(topo, fibs, *fec);
            }
        }
        let pins = std::mem::take(&mut self.pins);
        for (fec, path) in &pins {
            if let Err(e) = self.apply_pin(topo, *fec, path) {
                self.warnings.push(LabelWarning {
                    fec: *fec,
                    node: None,
                    reason: format!("pinned path no longer valid: {e}"),
                });
            }
        }
        self.pins = pins;
    }

    fn allocate(&mut self, node: NodeId) -> Option<u32> {
        let l = self.next_label[node.0];
        if l >= crate::packet::LABEL_LIMIT {
            return None;
        }
        self.next_label[node.0] += 1;
        Some(l)
    }

    fn distribute_fec(&mut self, topo: &Topology, fibs: &[Fib], fec: Prefix) {
        let Some(owner) = topo.owner_of(&fec) else {
            self.warnings.push(LabelWarning {
                fec,
                node: None,
                reason: "no node owns this prefix".into(),
            });
            return;
        };
        let routers: Vec<NodeId> = (0..topo.node_count())
            .map(NodeId)
            .filter(|&id| topo.node(id).role.is_router())
            .collect();

        let mut local: BTreeMap<NodeId, u32> = BTreeMap::new();
        for &r in &routers {
            if r != owner && route_of(fibs, r, &fec).is_none() {
                self.warnings.push(LabelWarning {
                    fec,
                    node: Some(r),
                    reason: "no route; FEC skipped at this node".into(),
                });
                continue;
            }
            match self.allocate(r) {
                Some(l) => {
                    local.insert(r, l);
                }
                None => self.warnings.push(LabelWarning {
                    fec,
                    node: Some(r),
                    reason: "label space exhausted".into(),
                }),
            }
        }

        for (&r, &label) in &local {
            let (op, next) = if r == owner {
                (LabelOp::Pop, None)
            } else {
                let next = route_of(fibs, r, &fec).expect("labelled routers have a route");
                match local.get(&next.node) {
                    Some(&down) if topo.node(next.node).role.is_router() => (LabelOp::Swap(down), Some(next)),
                    _ => (LabelOp::Pop, Some(next)),
                }
            };
            for (i, p) in topo.ports(r).iter().enumerate() {
                let upstream = route_of(fibs, p.peer, &fec);
                let faces_us = upstream
                    == Some(NextHop {
                        node: r,
                        iface: p.peer_iface,
                    });
                if faces_us {
                    let key = IlmKey {
                        in_iface: IfaceId(i as u32),
                        label,
                    };
                    self.libs[r.0]
                        .install(key, NhlfeEntry { op, next })
                        .expect("allocated labels are in range");
                }
            }
            if r != owner {
                let next = next.expect("non-owner has a next hop");
                let ftn = match op {
                    LabelOp::Swap(down) => FtnEntry::Push { label: down, next },
                    _ => FtnEntry::Forward { next },
                };
                self.libs[r.0]
                    .bind_fec(fec, ftn)
                    .expect("allocated labels are in range");
            }
        }

        for &r in &routers {
            if r == owner || topo.node(r).role != NodeRole::EdgeRouter || !local.contains_key(&r) {
                continue;
            }
            // an ingress is an edge router that some host sends this FEC to
            let feeds = topo.ports(r).iter().any(|p| {
                !topo.node(p.peer).role.is_router()
                    && route_of(fibs, p.peer, &fec)
                        == Some(NextHop {
                            node: r,
                            iface: p.peer_iface,
                        })
            });
            if !feeds {
                continue;
            }
            let mut path = vec![r];
            let mut cur = r;
            while cur != owner && path.len() <= topo.node_count() {
                let Some(next) = route_of(fibs, cur, &fec) else { break };
                if !topo.node(next.node).role.is_router() {
                    break;
                }
                path.push(next.node);
                cur = next.node;
            }
            let labels = path[1..].iter().map(|n| local[n]).collect();
            self.lsps.push(LspRecord {
                fec,
                path,
                labels,
                pinned: false,
            });
        }
    }

    /// Installs an explicit LSP and makes it the ingress binding for `fec`.
    /// The pin is remembered and re-applied by later redistributions. On
    /// error nothing changes.
    pub fn pin_lsp(&mut self, topo: &Topology, fec: Prefix, path: &[NodeId]) -> Result<LspRecord, PinError> {
        let rec = self.apply_pin(topo, fec, path)?;
        self.pins.push((fec, path.to_vec()));
        Ok(rec)
    }

    fn check_pin(
        &self,
        topo: &Topology,
        fec: Prefix,
        path: &[NodeId],
    ) -> Result<(Vec<IfaceId>, Option<NextHop>), PinError> {
        if path.len() < 2 {
            return Err(PinError::TooShort);
        }
        let mut seen = BTreeSet::new();
        for &n in path {
            if n.0 >= topo.node_count() {
                return Err(PinError::UnknownNode(n));
            }
            if !topo.node(n).role.is_router() {
                return Err(PinError::NotARouter(n));
            }
            if !seen.insert(n) {
                return Err(PinError::Loop(n));
            }
        }
        let out: Vec<IfaceId> = path
            .windows(2)
            .map(|w| topo.iface_towards(w[0], w[1]).ok_or(PinError::MissingLink(w[0], w[1])))
            .collect::<Result<_, _>>()?;
        let owner = topo.owner_of(&fec).ok_or(PinError::UnknownFec(fec))?;
        let last = *path.last().expect("len checked");
        let exit = if last == owner {
            None
        } else {
            let iface = topo.iface_towards(last, owner).ok_or(PinError::WrongEgress(last))?;
            Some(NextHop { node: owner, iface })
        };
        for &n in &path[1..] {
            if self.next_label[n.0] >= crate::packet::LABEL_LIMIT {
                return Err(PinError::LabelsExhausted(n));
            }
        }
        Ok((out, exit))
    }

    fn apply_pin(&mut self, topo: &Topology, fec: Prefix, path: &[NodeId]) -> Result<LspRecord, PinError> {
        let (out, exit) = self.check_pin(topo, fec, path)?;
        let labels: Vec<u32> = path[1..]
            .iter()
            .map(|&n| self.allocate(n).expect("checked label space"))
            .collect();
        for i in 1..path.len() {
            let node = path[i];
            let prev_out = out[i - 1];
            let in_iface = topo.port(path[i - 1], prev_out).expect("iface exists").peer_iface;
            let key = IlmKey {
                in_iface,
                label: labels[i - 1],
            };
            let entry = if i + 1 < path.len() {
                NhlfeEntry {
                    op: LabelOp::Swap(labels[i]),
                    next: Some(NextHop {
                        node: path[i + 1],
                        iface: out[i],
                    }),
                }
            } else {
                NhlfeEntry {
                    op: LabelOp::Pop,
                    next: exit,
                }
            };
            self.libs[node.0]
                .install(key, entry)
                .expect("allocated labels are in range");
        }
        let first = NextHop {
            node: path[1],
            iface: out[0],
        };
        self.libs[path[0].0]
            .bind_fec(
                fec,
                FtnEntry::Push {
                    label: labels[0],
                    next: first,
                },
            )
            .expect("allocated labels are in range");
        let rec = LspRecord {
            fec,
            path: path.to_vec(),
            labels,
            pinned: true,
        };
        self.lsps.push(rec.clone());
        Ok(rec)
    }

    pub fn pins(&self) -> &[(Prefix, Vec<NodeId>)] {
        &self.pins
    }
}
