//! Relay network graphs: model, file format, family classification and
//! flow-based structural quantities.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Sink,
    Relay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Duplex {
    #[default]
    Half,
    Full,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub role: Role,
    pub antennas: usize,
    pub duplex: Duplex,
}

/// Directed fading link; the gain is drawn per realization by the channel
/// module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    source: usize,
    sink: usize,
    index: HashMap<String, usize>,
}

impl Network {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, Error> {
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.antennas == 0 {
                return Err(Error::InvalidNetwork(format!("node {} has zero antennas", n.id)));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate node id {}", n.id)));
            }
        }
        let sources: Vec<usize> =
            (0..nodes.len()).filter(|&i| nodes[i].role == Role::Source).collect();
        let sinks: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].role == Role::Sink).collect();
        if sources.len() != 1 || sinks.len() != 1 {
            return Err(Error::InvalidNetwork(format!(
                "need exactly one source and one sink, found {} and {}",
                sources.len(),
                sinks.len()
            )));
        }
        for e in &edges {
            if e.tail >= nodes.len() || e.head >= nodes.len() {
                return Err(Error::InvalidNetwork("edge endpoint out of range".into()));
            }
            if e.tail == e.head {
                return Err(Error::InvalidNetwork(format!("self-loop at {}", nodes[e.tail].id)));
            }
        }
        Ok(Network { nodes, edges, source: sources[0], sink: sinks[0], index })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, node: usize) -> &str {
        &self.nodes[node].id
    }

    pub fn relays(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].role == Role::Relay).collect()
    }

    pub fn has_edge(&self, tail: usize, head: usize) -> bool {
        self.edges.iter().any(|e| e.tail == tail && e.head == head)
    }

    /// Indices of edges from `tail` to `head`.
    pub fn edges_between(&self, tail: usize, head: usize) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&k| self.edges[k].tail == tail && self.edges[k].head == head)
            .collect()
    }

    /// Neighbours in the undirected support, sorted by node id.
    pub fn undirected_neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: BTreeSet<usize> = BTreeSet::new();
        for e in &self.edges {
            if e.tail == v {
                out.insert(e.head);
            }
            if e.head == v {
                out.insert(e.tail);
            }
        }
        let mut out: Vec<usize> = out.into_iter().collect();
        out.sort_by(|&a, &b| self.nodes[a].id.cmp(&self.nodes[b].id));
        out
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    /// True when every node can be reached from the source along directed edges
    /// and the sink in particular is reachable.
    pub fn sink_reachable(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.source];
        seen[self.source] = true;
        while let Some(v) = stack.pop() {
            for e in &self.edges {
                if e.tail == v && !seen[e.head] {
                    seen[e.head] = true;
                    stack.push(e.head);
                }
            }
        }
        seen[self.sink]
    }

    pub fn all_single_antenna(&self) -> bool {
        self.nodes.iter().all(|n| n.antennas == 1)
    }

    pub fn all_full_duplex(&self) -> bool {
        self.nodes
            .iter()
            .filter(|n| n.role == Role::Relay)
            .all(|n| n.duplex == Duplex::Full)
    }

    /// Copy of the network with every relay switched to the given duplex mode.
    pub fn with_duplex(&self, duplex: Duplex) -> Network {
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.duplex = duplex;
        }
        out
    }

    /// Copy of the network with node indices permuted by `perm` (new index of
    /// old node `i` is `perm[i]`).
    pub fn relabeled(&self, perm: &[usize]) -> Network {
        let mut nodes = self.nodes.clone();
        for (i, n) in self.nodes.iter().enumerate() {
            nodes[perm[i]] = n.clone();
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { tail: perm[e.tail], head: perm[e.head] })
            .collect();
        Network::new(nodes, edges).expect("relabeling keeps validity")
    }

    pub fn load(path: &Path) -> Result<Network, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Network::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Network, Error> {
        let file: NetworkFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let nodes: Vec<Node> = file
            .node
            .iter()
            .map(|n| Node {
                id: n.id.clone(),
                role: n.role,
                antennas: n.antennas,
                duplex: n.duplex,
            })
            .collect();
        let lookup: HashMap<&str, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut edges = Vec::new();
        for e in &file.edge {
            let t = *lookup
                .get(e.tail.as_str())
                .ok_or_else(|| Error::Parse(format!("unknown node {}", e.tail)))?;
            let h = *lookup
                .get(e.head.as_str())
                .ok_or_else(|| Error::Parse(format!("unknown node {}", e.head)))?;
            edges.push(Edge { tail: t, head: h });
            if e.bidirectional {
                edges.push(Edge { tail: h, head: t });
            }
        }
        Network::new(nodes, edges)
    }

    /// Serialises with every edge written as a directed entry.
    pub fn to_toml(&self) -> String {
        let file = NetworkFile {
            node: self
                .nodes
                .iter()
                .map(|n| NodeEntry {
                    id: n.id.clone(),
                    role: n.role,
                    antennas: n.antennas,
                    duplex: n.duplex,
                })
                .collect(),
            edge: self
                .edges
                .iter()
                .map(|e| EdgeEntry {
                    tail: self.nodes[e.tail].id.clone(),
                    head: self.nodes[e.head].id.clone(),
                    bidirectional: false,
                })
                .collect(),
        };
        toml::to_string(&file).expect("network serialises")
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    #[serde(default)]
    node: Vec<NodeEntry>,
    #[serde(default)]
    edge: Vec<EdgeEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: String,
    role: Role,
    #[serde(default = "one")]
    antennas: usize,
    #[serde(default)]
    duplex: Duplex,
}

fn one() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeEntry {
    tail: String,
    head: String,
    #[serde(default, skip_serializing_if = "is_false")]
    bidirectional: bool,
}

/// Incremental construction helper used by the generators and tests.
#[derive(Default)]
pub struct NetworkBuilder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, id: &str, role: Role) -> usize {
        self.node_with(id, role, 1, Duplex::Half)
    }

    pub fn node_with(&mut self, id: &str, role: Role, antennas: usize, duplex: Duplex) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.nodes.len();
        self.nodes.push(Node { id: id.to_string(), role, antennas, duplex });
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn edge(&mut self, tail: usize, head: usize) -> &mut Self {
        self.edges.push(Edge { tail, head });
        self
    }

    /// Undirected link, stored as two directed edges.
    pub fn link(&mut self, a: usize, b: usize) -> &mut Self {
        self.edge(a, b);
        self.edge(b, a)
    }

    pub fn build(&self) -> Result<Network, Error> {
        Network::new(self.nodes.clone(), self.edges.clone())
    }
}

/// Ready-made networks for the families discussed in the literature on
/// amplify-and-forward relaying. All links are bidirectional.
pub mod generators {
    use super::*;

    pub fn single_link() -> Network {
        let mut b = NetworkBuilder::new();
        let s = b.node("s", Role::Source);
        let t = b.node("t", Role::Sink);
        b.link(s, t);
        b.build().unwrap()
    }

    fn relay_id(path: usize, hop: usize) -> String {
        format!("p{}_{}", path + 1, hop + 1)
    }

    fn add_paths(b: &mut NetworkBuilder, s: usize, t: usize, lengths: &[usize]) -> Vec<Vec<usize>> {
        let mut paths = Vec::new();
        for (i, &n) in lengths.iter().enumerate() {
            assert!(n >= 2, "backbone paths need at least two edges");
            let mut prev = s;
            let mut path = vec![s];
            for j in 0..n - 1 {
                let r = b.node(&relay_id(i, j), Role::Relay);
                b.link(prev, r);
                path.push(r);
                prev = r;
            }
            b.link(prev, t);
            path.push(t);
            paths.push(path);
        }
        paths
    }

    /// K vertex-disjoint relay paths with the given edge counts.
    pub fn kpp(lengths: &[usize]) -> Network {
        let mut b = NetworkBuilder::new();
        let s = b.node("s", Role::Source);
        let t = b.node("t", Role::Sink);
        add_paths(&mut b, s, t, lengths);
        b.build().unwrap()
    }

    /// KPP plus a source-sink link.
    pub fn kpp_d(lengths: &[usize]) -> Network {
        let mut b = NetworkBuilder::new();
        let s = b.node("s", Role::Source);
        let t = b.node("t", Role::Sink);
        add_paths(&mut b, s, t, lengths);
        b.link(s, t);
        b.build().unwrap()
    }

    /// (path, hop) of a relay, both 0-based.
    pub type RelayPos = (usize, usize);

    /// KPP plus the listed relay-relay links, given as ((path, hop), (path, hop))
    /// with 0-based indices.
    pub fn kpp_i(lengths: &[usize], cross: &[(RelayPos, RelayPos)]) -> Network {
        let mut b = NetworkBuilder::new();
        let s = b.node("s", Role::Source);
        let t = b.node("t", Role::Sink);
        add_paths(&mut b, s, t, lengths);
        for &((p1, h1), (p2, h2)) in cross {
            let a = b.node(&relay_id(p1, h1), Role::Relay);
            let c = b.node(&relay_id(p2, h2), Role::Relay);
            b.link(a, c);
        }
        b.build().unwrap()
    }

    /// Source, `n` relays and sink in two hops, optionally with the direct link
    /// and with links between every pair of relays.
    pub fn two_hop(n: usize, direct: bool, relay_links: bool) -> Network {
        let mut b = NetworkBuilder::new();
        let s = b.node("s", Role::Source);
        let t = b.node("t", Role::Sink);
        let relays: Vec<usize> =
            (0..n).map(|i| b.node(&format!("r{}", i + 1), Role::Relay)).collect();
        for &r in &relays {
            b.link(s, r);
            b.link(r, t);
        }
        if relay_links {
            for i in 0..n {
                for j in i + 1..n {
                    b.link(relays[i], relays[j]);
                }
            }
        }
        if direct {
            b.link(s, t);
        }
        b.build().unwrap()
    }

    /// Single relay with a direct link.
    pub fn naf() -> Network {
        two_hop(1, true, false)
    }

    /// `n` isolated relays with a direct link.
    pub fn saf(n: usize) -> Network {
        two_hop(n, true, false)
    }

    /// Layered network with the given relay-layer sizes and every pair across
    /// adjacent layers linked.
    pub fn fully_connected_layered(sizes: &[usize]) -> Network {
        let mut b = NetworkBuilder::new();
        let s = b.node("s", Role::Source);
        let t = b.node("t", Role::Sink);
        let mut prev = vec![s];
        for (l, &n) in sizes.iter().enumerate() {
            let layer: Vec<usize> = (0..n)
                .map(|i| b.node(&format!("l{}_{}", l + 1, i + 1), Role::Relay))
                .collect();
            for &u in &prev {
                for &v in &layer {
                    b.link(u, v);
                }
            }
            prev = layer;
        }
        for &u in &prev {
            b.link(u, t);
        }
        b.build().unwrap()
    }

    /// (K, L) regular network: K backbone paths through L relay layers with
    /// adjacent layers fully linked.
    pub fn regular(k: usize, l: usize) -> Network {
        let mut b = NetworkBuilder::new();
        let s = b.node("s", Role::Source);
        let t = b.node("t", Role::Sink);
        let lengths = vec![l + 1; k];
        add_paths(&mut b, s, t, &lengths);
        for j in 0..l.saturating_sub(1) {
            for p1 in 0..k {
                for p2 in 0..k {
                    if p1 != p2 {
                        let a = b.node(&relay_id(p1, j), Role::Relay);
                        let c = b.node(&relay_id(p2, j + 1), Role::Relay);
                        b.link(a, c);
                    }
                }
            }
        }
        b.build().unwrap()
    }
}

/// Ordered family of source-to-sink paths, each a node-index sequence that
/// starts at the source and ends at the sink.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Vec<usize>>,
}

impl PathSet {
    /// Edge counts n_i.
    pub fn lengths(&self) -> Vec<usize> {
        self.paths.iter().map(|p| p.len() - 1).collect()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn describe(&self, net: &Network) -> Vec<String> {
        self.paths
            .iter()
            .map(|p| p.iter().map(|&v| net.id(v)).collect::<Vec<_>>().join("-"))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Kpp { k: usize },
    KppD { k: usize },
    KppI { k: usize },
    KppID { k: usize },
    Layered,
    FullyConnectedLayered,
    Regular { k: usize, l: usize },
    Other,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Kpp { .. } => write!(f, "KPP"),
            Family::KppD { .. } => write!(f, "KPP(D)"),
            Family::KppI { .. } => write!(f, "KPP(I)"),
            Family::KppID { .. } => write!(f, "KPP(I,D)"),
            Family::Layered => write!(f, "layered"),
            Family::FullyConnectedLayered => write!(f, "fully-connected-layered"),
            Family::Regular { k, l } => write!(f, "regular({k},{l})"),
            Family::Other => write!(f, "other"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classification {
    pub family: Family,
    /// Lexicographically smallest backbone, when the relays split into K
    /// vertex-disjoint source-to-sink paths.
    pub backbone: Option<PathSet>,
    /// Layers V_0..V_{L+1} when the network is layered.
    pub layering: Option<Vec<Vec<usize>>>,
    pub fully_connected: bool,
    pub direct_link: bool,
    /// Relay pairs linked outside the backbone, with the smaller index first.
    pub interference_links: Vec<(usize, usize)>,
}

impl Classification {
    /// True for KPP and its variants, including regular networks.
    pub fn kpp_family(&self) -> bool {
        matches!(
            self.family,
            Family::Kpp { .. }
                | Family::KppD { .. }
                | Family::KppI { .. }
                | Family::KppID { .. }
                | Family::Regular { .. }
        )
    }

    pub fn k(&self) -> Option<usize> {
        self.backbone.as_ref().map(|b| b.len())
    }
}

const BACKBONE_BUDGET: usize = 2_000_000;

pub fn classify(net: &Network) -> Result<Classification, Error> {
    if !net.sink_reachable() {
        return Err(Error::UnreachableSink);
    }
    let s = net.source();
    let t = net.sink();
    let direct_link = net.adjacent(s, t);
    let backbone = find_backbone(net)?;
    let layering = layering(net);
    let fully_connected = layering.as_ref().map(|l| is_fully_connected(net, l)).unwrap_or(false);

    let mut interference_links = Vec::new();
    if let Some(bb) = &backbone {
        let mut on_path: BTreeSet<(usize, usize)> = BTreeSet::new();
        for p in &bb.paths {
            for w in p.windows(2) {
                on_path.insert((w[0].min(w[1]), w[0].max(w[1])));
            }
        }
        let relays: BTreeSet<usize> = net.relays().into_iter().collect();
        let mut seen = BTreeSet::new();
        for e in net.edges() {
            let key = (e.tail.min(e.head), e.tail.max(e.head));
            if relays.contains(&e.tail)
                && relays.contains(&e.head)
                && !on_path.contains(&key)
                && seen.insert(key)
            {
                interference_links.push(key);
            }
        }
    }

    let family = match &backbone {
        Some(bb) => {
            let k = bb.len();
            let interf = !interference_links.is_empty();
            if direct_link && interf {
                Family::KppID { k }
            } else if direct_link {
                Family::KppD { k }
            } else if let Some(layers) = &layering {
                Family::Regular { k, l: layers.len() - 2 }
            } else if interf {
                Family::KppI { k }
            } else {
                Family::Kpp { k }
            }
        }
        None => match &layering {
            Some(_) if fully_connected => Family::FullyConnectedLayered,
            Some(_) => Family::Layered,
            None => Family::Other,
        },
    };
    Ok(Classification { family, backbone, layering, fully_connected, direct_link, interference_links })
}

/// Depth-first search for K vertex-disjoint source-to-sink relay paths that
/// together cover every relay.
fn find_backbone(net: &Network) -> Result<Option<PathSet>, Error> {
    let s = net.source();
    let t = net.sink();
    let is_relay = |v: usize| net.nodes[v].role == Role::Relay;
    let starts: Vec<usize> = net.undirected_neighbors(s).into_iter().filter(|&v| is_relay(v)).collect();
    let ends: BTreeSet<usize> =
        net.undirected_neighbors(t).into_iter().filter(|&v| is_relay(v)).collect();
    if starts.is_empty() || starts.len() != ends.len() {
        return Ok(None);
    }
    let start_set: BTreeSet<usize> = starts.iter().copied().collect();
    let n_relays = net.relays().len();
    let adj: Vec<Vec<usize>> = (0..net.nodes.len()).map(|v| net.undirected_neighbors(v)).collect();

    struct Search<'a> {
        adj: &'a [Vec<usize>],
        starts: &'a [usize],
        start_set: &'a BTreeSet<usize>,
        ends: &'a BTreeSet<usize>,
        relay: Vec<bool>,
        used: Vec<bool>,
        paths: Vec<Vec<usize>>,
        covered: usize,
        n_relays: usize,
        steps: usize,
    }

    impl Search<'_> {
        fn next_path(&mut self, idx: usize) -> Result<bool, ()> {
            if idx == self.starts.len() {
                return Ok(self.covered == self.n_relays);
            }
            let a = self.starts[idx];
            self.used[a] = true;
            self.covered += 1;
            self.paths.push(vec![a]);
            let ok = self.extend(idx, a)?;
            if !ok {
                self.paths.pop();
                self.used[a] = false;
                self.covered -= 1;
            }
            Ok(ok)
        }

        fn extend(&mut self, idx: usize, cur: usize) -> Result<bool, ()> {
            self.steps += 1;
            if self.steps > BACKBONE_BUDGET {
                return Err(());
            }
            if self.ends.contains(&cur) {
                return self.next_path(idx + 1);
            }
            for i in 0..self.adj[cur].len() {
                let nb = self.adj[cur][i];
                if !self.relay[nb] || self.used[nb] || self.start_set.contains(&nb) {
                    continue;
                }
                self.used[nb] = true;
                self.covered += 1;
                self.paths[idx].push(nb);
                if self.extend(idx, nb)? {
                    return Ok(true);
                }
                self.paths[idx].pop();
                self.used[nb] = false;
                self.covered -= 1;
            }
            Ok(false)
        }
    }

    let mut search = Search {
        adj: &adj,
        starts: &starts,
        start_set: &start_set,
        ends: &ends,
        relay: (0..net.nodes.len()).map(is_relay).collect(),
        used: vec![false; net.nodes.len()],
        paths: Vec::new(),
        covered: 0,
        n_relays,
        steps: 0,
    };
    match search.next_path(0) {
        Ok(true) => {
            let paths = search
                .paths
                .into_iter()
                .map(|p| {
                    let mut full = vec![s];
                    full.extend(p);
                    full.push(t);
                    full
                })
                .collect();
            Ok(Some(PathSet { paths }))
        }
        Ok(false) => Ok(None),
        Err(()) => Err(Error::SearchExhausted(format!(
            "backbone search exceeded {BACKBONE_BUDGET} steps"
        ))),
    }
}

/// Breadth-first layering of the undirected support; `None` unless the sink
/// sits alone in the last layer and every relay layer has more than one node.
fn layering(net: &Network) -> Option<Vec<Vec<usize>>> {
    let n = net.nodes.len();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    dist[net.source()] = 0;
    queue.push_back(net.source());
    let adj: Vec<Vec<usize>> = (0..n).map(|v| net.undirected_neighbors(v)).collect();
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    if dist.contains(&usize::MAX) {
        return None;
    }
    let depth = dist[net.sink()];
    if depth < 2 || dist.iter().any(|&d| d > depth) {
        return None;
    }
    let mut layers = vec![Vec::new(); depth + 1];
    for v in 0..n {
        layers[dist[v]].push(v);
    }
    if layers[depth].len() != 1 {
        return None;
    }
    if layers[1..depth].iter().any(|l| l.len() < 2) {
        return None;
    }
    for l in &mut layers {
        l.sort_by(|&a, &b| net.nodes[a].id.cmp(&net.nodes[b].id));
    }
    Some(layers)
}

fn is_fully_connected(net: &Network, layers: &[Vec<usize>]) -> bool {
    layers
        .windows(2)
        .all(|w| w[0].iter().all(|&u| w[1].iter().all(|&v| net.has_edge(u, v))))
}

/// Unit-capacity max-flow (Dinic) over a multigraph.
struct FlowGraph {
    n: usize,
    // (to, capacity, reverse index)
    adj: Vec<Vec<(usize, i64, usize)>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph { n, adj: vec![Vec::new(); n] }
    }

    fn add(&mut self, u: usize, v: usize, cap: i64) {
        let ru = self.adj[v].len();
        let rv = self.adj[u].len();
        self.adj[u].push((v, cap, ru));
        self.adj[v].push((u, 0, rv));
    }

    fn bfs(&self, s: usize, level: &mut [i64]) {
        level.iter_mut().for_each(|l| *l = -1);
        level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &(w, c, _) in &self.adj[v] {
                if c > 0 && level[w] < 0 {
                    level[w] = level[v] + 1;
                    q.push_back(w);
                }
            }
        }
    }

    fn dfs(&mut self, v: usize, t: usize, f: i64, level: &[i64], it: &mut [usize]) -> i64 {
        if v == t {
            return f;
        }
        while it[v] < self.adj[v].len() {
            let (w, c, r) = self.adj[v][it[v]];
            if c > 0 && level[w] == level[v] + 1 {
                let d = self.dfs(w, t, f.min(c), level, it);
                if d > 0 {
                    self.adj[v][it[v]].1 -= d;
                    self.adj[w][r].1 += d;
                    return d;
                }
            }
            it[v] += 1;
        }
        0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let mut flow = 0;
        let mut level = vec![-1; self.n];
        loop {
            self.bfs(s, &mut level);
            if level[t] < 0 {
                return flow;
            }
            let mut it = vec![0; self.n];
            loop {
                let f = self.dfs(s, t, i64::MAX, &level, &mut it);
                if f == 0 {
                    break;
                }
                flow += f;
            }
        }
    }
}

/// Replaces every multi-antenna node by one single-antenna node per antenna.
///
/// A link between an n_t-antenna and an n_r-antenna node becomes n_t·n_r links
/// between the split nodes. The source and sink keep a single-antenna hub node
/// (same id) joined to their split antennas by as many parallel edges as the
/// antenna has links, so the hub edges never limit a cut.
pub fn expand_antennas(net: &Network) -> Network {
    if net.all_single_antenna() {
        return net.clone();
    }
    let mut b = NetworkBuilder::new();
    let mut copies: Vec<Vec<usize>> = Vec::with_capacity(net.nodes.len());
    for n in &net.nodes {
        if n.antennas == 1 {
            copies.push(vec![b.node_with(&n.id, n.role, 1, n.duplex)]);
        } else if n.role == Role::Relay {
            copies.push(
                (0..n.antennas)
                    .map(|a| b.node_with(&format!("{}#{}", n.id, a + 1), Role::Relay, 1, n.duplex))
                    .collect(),
            );
        } else {
            b.node_with(&n.id, n.role, 1, n.duplex);
            copies.push(
                (0..n.antennas)
                    .map(|a| b.node_with(&format!("{}#{}", n.id, a + 1), Role::Relay, 1, n.duplex))
                    .collect(),
            );
        }
    }
    for e in &net.edges {
        for &u in &copies[e.tail] {
            for &v in &copies[e.head] {
                b.edge(u, v);
            }
        }
    }
    let mut extra = Vec::new();
    for (i, n) in net.nodes.iter().enumerate() {
        if n.antennas > 1 && n.role != Role::Relay {
            let hub = b.index[&n.id];
            for &c in &copies[i] {
                let deg = b.edges.iter().filter(|e| e.tail == c || e.head == c).count().max(1);
                for _ in 0..deg {
                    if n.role == Role::Source {
                        extra.push(Edge { tail: hub, head: c });
                    } else {
                        extra.push(Edge { tail: c, head: hub });
                    }
                }
            }
        }
    }
    b.edges.extend(extra);
    b.build().expect("expansion preserves validity")
}

fn flow_graph_with_arcs(net: &Network) -> (FlowGraph, Vec<(usize, usize)>) {
    let mut g = FlowGraph::new(net.nodes.len());
    let arcs = net
        .edges
        .iter()
        .map(|e| {
            let idx = g.adj[e.tail].len();
            g.add(e.tail, e.head, 1);
            (e.tail, idx)
        })
        .collect();
    (g, arcs)
}

/// Edge connectivity from source to sink of the antenna-expanded graph.
pub fn min_cut(net: &Network) -> Result<usize, Error> {
    if !net.sink_reachable() {
        return Err(Error::UnreachableSink);
    }
    let x = expand_antennas(net);
    let (mut g, _) = flow_graph_with_arcs(&x);
    Ok(g.max_flow(x.source(), x.sink()) as usize)
}

/// A maximum family of pairwise edge-disjoint source-to-sink paths, obtained by
/// decomposing a maximum flow. For multi-antenna networks the node indices
/// refer to `expand_antennas(net)`.
pub fn edge_disjoint_paths(net: &Network) -> Result<PathSet, Error> {
    if !net.sink_reachable() {
        return Err(Error::UnreachableSink);
    }
    let x = expand_antennas(net);
    let (mut g, arcs) = flow_graph_with_arcs(&x);
    g.max_flow(x.source(), x.sink());
    let mut flow_arcs: Vec<Vec<usize>> = vec![Vec::new(); x.nodes.len()];
    for (e, &(u, idx)) in x.edges.iter().zip(&arcs) {
        if g.adj[u][idx].1 == 0 {
            flow_arcs[u].push(e.head);
        }
    }
    let s = x.source();
    let t = x.sink();
    let mut paths = Vec::new();
    loop {
        // DFS along remaining flow arcs
        let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
        let mut stack = vec![s];
        let mut seen = vec![false; x.nodes.len()];
        seen[s] = true;
        let mut found = false;
        while let Some(v) = stack.pop() {
            if v == t {
                found = true;
                break;
            }
            for &w in &flow_arcs[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent.insert(w, v);
                    stack.push(w);
                }
            }
        }
        if !found {
            break;
        }
        let mut path = vec![t];
        let mut v = t;
        while v != s {
            let p = parent[&v];
            let pos = flow_arcs[p].iter().position(|&w| w == v).unwrap();
            flow_arcs[p].remove(pos);
            path.push(p);
            v = p;
        }
        path.reverse();
        paths.push(path);
    }
    Ok(PathSet { paths })
}

/// Every source-to-sink path that moves one layer forward per edge.
pub fn forward_paths(net: &Network) -> Result<PathSet, Error> {
    let layers = layering(net).ok_or(Error::NotLayered)?;
    let mut paths = Vec::new();
    let mut cur = vec![net.source()];
    fn rec(net: &Network, layers: &[Vec<usize>], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let depth = cur.len();
        let last = *cur.last().unwrap();
        if depth == layers.len() {
            out.push(cur.clone());
            return;
        }
        for &v in &layers[depth] {
            if net.has_edge(last, v) {
                cur.push(v);
                rec(net, layers, cur, out);
                cur.pop();
            }
        }
    }
    rec(net, &layers, &mut cur, &mut paths);
    Ok(PathSet { paths })
}

/// Number of edges along the path.
pub fn path_delay(_net: &Network, path: &[usize]) -> usize {
    path.len().saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::generators as g;
    use super::*;

    #[test]
    fn toml_round_trip_and_bidirectional_expansion() {
        let text = r#"
[[node]]
id = "s"
role = "source"

[[node]]
id = "r"
role = "relay"
duplex = "full"

[[node]]
id = "t"
role = "sink"
antennas = 2

[[edge]]
tail = "s"
head = "r"
bidirectional = true

[[edge]]
tail = "r"
head = "t"
"#;
        let net = Network::from_toml(text).unwrap();
        assert_eq!(net.edges().len(), 3);
        assert_eq!(net.nodes()[net.sink()].antennas, 2);
        assert_eq!(net.nodes()[1].duplex, Duplex::Full);
        let again = Network::from_toml(&net.to_toml()).unwrap();
        assert_eq!(again, net);
    }

    #[test]
    fn rejects_malformed_networks() {
        assert!(matches!(Network::from_toml("[[node]]\nid = 3"), Err(Error::Parse(_))));
        let two_sources = "[[node]]\nid='a'\nrole='source'\n[[node]]\nid='b'\nrole='source'\n[[node]]\nid='t'\nrole='sink'\n";
        assert!(matches!(Network::from_toml(two_sources), Err(Error::InvalidNetwork(_))));
        let dup = "[[node]]\nid='s'\nrole='source'\n[[node]]\nid='s'\nrole='sink'\n";
        assert!(Network::from_toml(dup).is_err());
        let unknown = "[[node]]\nid='s'\nrole='source'\n[[node]]\nid='t'\nrole='sink'\n[[edge]]\ntail='s'\nhead='x'\n";
        assert!(matches!(Network::from_toml(unknown), Err(Error::Parse(_))));
    }

    #[test]
    fn family_tags() {
        let c = classify(&g::kpp(&[2, 3, 4])).unwrap();
        assert_eq!(c.family, Family::Kpp { k: 3 });
        assert_eq!(c.backbone.unwrap().lengths(), vec![2, 3, 4]);
        assert_eq!(classify(&g::kpp_d(&[2, 3, 4])).unwrap().family, Family::KppD { k: 3 });
        let i = classify(&g::kpp_i(&[2, 3, 4], &[((1, 0), (2, 1))])).unwrap();
        assert_eq!(i.family, Family::KppI { k: 3 });
        assert_eq!(i.interference_links.len(), 1);
        assert_eq!(classify(&g::regular(3, 2)).unwrap().family, Family::Regular { k: 3, l: 2 });
        let fcl = classify(&g::fully_connected_layered(&[2, 3])).unwrap();
        assert_eq!(fcl.family, Family::FullyConnectedLayered);
        assert!(fcl.fully_connected);
        assert_eq!(classify(&g::single_link()).unwrap().family, Family::Other);
        assert_eq!(format!("{}", Family::KppD { k: 3 }), "KPP(D)");
    }

    #[test]
    fn unreachable_sink() {
        let mut b = NetworkBuilder::new();
        let s = b.node("s", Role::Source);
        let r = b.node("r", Role::Relay);
        b.node("t", Role::Sink);
        b.link(s, r);
        let net = b.build().unwrap();
        assert_eq!(min_cut(&net), Err(Error::UnreachableSink));
        assert!(matches!(classify(&net), Err(Error::UnreachableSink)));
    }

    #[test]
    fn min_cuts() {
        assert_eq!(min_cut(&g::kpp(&[2, 3, 4])), Ok(3));
        assert_eq!(min_cut(&g::kpp_d(&[2, 3, 4])), Ok(4));
        assert_eq!(min_cut(&g::fully_connected_layered(&[2, 3, 2])), Ok(2));
        assert_eq!(min_cut(&g::single_link()), Ok(1));
    }

    #[test]
    fn antenna_expansion_multiplies_cut() {
        let mut b = NetworkBuilder::new();
        let s = b.node_with("s", Role::Source, 2, Duplex::Half);
        let r = b.node_with("r", Role::Relay, 3, Duplex::Half);
        let t = b.node_with("t", Role::Sink, 2, Duplex::Half);
        b.edge(s, r).edge(r, t);
        let net = b.build().unwrap();
        // every antenna pair is a separate link: 2x3 on both hops
        assert_eq!(min_cut(&net), Ok(6));
        let x = expand_antennas(&net);
        assert!(x.nodes().iter().all(|n| n.antennas == 1));
        let relay_split: Vec<usize> =
            (1..=3).map(|a| x.node_index(&format!("r#{a}")).unwrap()).collect();
        let into_relay = x.edges().iter().filter(|e| relay_split.contains(&e.head)).count();
        assert_eq!(into_relay, 6);
        assert_eq!(min_cut(&x), Ok(6));
        assert_eq!(expand_antennas(&x), x);
    }

    #[test]
    fn disjoint_paths_cover_cut() {
        let net = g::kpp_d(&[2, 3]);
        let p = edge_disjoint_paths(&net).unwrap();
        assert_eq!(p.len(), 3);
        let mut used = BTreeSet::new();
        for path in &p.paths {
            assert_eq!(path[0], net.source());
            assert_eq!(*path.last().unwrap(), net.sink());
            for w in path.windows(2) {
                assert!(net.has_edge(w[0], w[1]));
                assert!(used.insert((w[0], w[1])));
            }
        }
    }

    #[test]
    fn forward_paths_of_layered() {
        let net = g::fully_connected_layered(&[2, 3, 2]);
        assert_eq!(forward_paths(&net).unwrap().len(), 12);
        let mut b = NetworkBuilder::new();
        let s = b.node("s", Role::Source);
        let r = b.node("r", Role::Relay);
        let t = b.node("t", Role::Sink);
        b.link(s, r).link(r, t).link(s, t);
        assert!(matches!(forward_paths(&b.build().unwrap()), Err(Error::NotLayered)));
    }

    #[test]
    fn relabeling_preserves_classification() {
        let net = g::kpp(&[3, 2, 4]);
        let n = net.nodes().len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let other = net.relabeled(&perm);
        assert_eq!(classify(&other).unwrap().family, classify(&net).unwrap().family);
        assert_eq!(min_cut(&other), min_cut(&net));
    }
}
