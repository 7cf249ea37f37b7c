//! Knowledge connectivity graphs and the graph-theoretic predicates used by
//! the rest of the toolkit: strongly connected components and their
//! condensation, sink components, vertex-disjoint path counts, the k-OSR
//! (k-One-Sink-Reducibility) check, Byzantine-safety of a failure pattern,
//! and f-reachability.
//!
//! Everything here is a pure function of its inputs and iterates ordered
//! collections, so results are deterministic and safe to compute from
//! multiple threads.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a process. Unique within one scenario.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for ProcessId {
    fn from(id: u32) -> Self {
        ProcessId(id)
    }
}

impl FromStr for ProcessId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse::<u32>().map(ProcessId)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop on process {0} is not allowed")]
    SelfLoop(ProcessId),
    #[error("process {0} is not a vertex of the graph")]
    UnknownVertex(ProcessId),
    #[error("path endpoints must differ, got {0} on both sides")]
    SamePair(ProcessId),
    #[error("{found} faulty processes exceed the bound f = {bound}")]
    TooManyFaulty { found: usize, bound: usize },
    #[error("faulty process {0} is not a vertex of the graph")]
    FaultyNotInGraph(ProcessId),
    #[error("graph generation failed: {0}")]
    Generation(String),
}

/// Directed graph over process ids where an edge `(i, j)` records that `i`
/// initially knows `j`. Edges model knowledge, not network connectivity.
///
/// Invariants: no self-loops, and every edge endpoint is a vertex. The
/// adjacency view `pd(i)` is exactly the out-neighborhood of `i`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeGraph {
    adj: BTreeMap<ProcessId, BTreeSet<ProcessId>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from per-process knowledge lists. Vertices are the map
    /// keys plus every listed target.
    pub fn from_pd(
        pd: &BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    ) -> Result<Self, GraphError> {
        let mut g = Self::new();
        for (&i, targets) in pd {
            g.add_vertex(i);
            for &j in targets {
                g.add_edge(i, j)?;
            }
        }
        Ok(g)
    }

    pub fn add_vertex(&mut self, v: ProcessId) {
        self.adj.entry(v).or_default();
    }

    /// Inserts the edge `(from, to)`, adding missing endpoints as vertices.
    pub fn add_edge(&mut self, from: ProcessId, to: ProcessId) -> Result<(), GraphError> {
        if from == to {
            return Err(GraphError::SelfLoop(from));
        }
        self.add_vertex(to);
        self.adj.entry(from).or_default().insert(to);
        Ok(())
    }

    pub fn vertices(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.adj.keys().copied()
    }

    pub fn vertex_set(&self) -> BTreeSet<ProcessId> {
        self.adj.keys().copied().collect()
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn contains_vertex(&self, v: ProcessId) -> bool {
        self.adj.contains_key(&v)
    }

    pub fn has_edge(&self, from: ProcessId, to: ProcessId) -> bool {
        self.adj.get(&from).is_some_and(|ts| ts.contains(&to))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (ProcessId, ProcessId)> + '_ {
        self.adj
            .iter()
            .flat_map(|(&i, ts)| ts.iter().map(move |&j| (i, j)))
    }

    /// Out-neighborhood of `v` (the knowledge list of `v`).
    ///
    /// Panics if `v` is not a vertex.
    pub fn pd(&self, v: ProcessId) -> &BTreeSet<ProcessId> {
        self.adj
            .get(&v)
            .unwrap_or_else(|| panic!("process {v} is not a vertex"))
    }

    /// The subgraph obtained by deleting `removed` and all incident edges.
    pub fn without(&self, removed: &BTreeSet<ProcessId>) -> KnowledgeGraph {
        let keep: BTreeSet<ProcessId> =
            self.vertices().filter(|v| !removed.contains(v)).collect();
        self.induced(&keep)
    }

    /// The subgraph induced by `keep` (vertices outside `keep` are dropped).
    pub fn induced(&self, keep: &BTreeSet<ProcessId>) -> KnowledgeGraph {
        let mut g = Self::new();
        for (&i, targets) in &self.adj {
            if !keep.contains(&i) {
                continue;
            }
            g.add_vertex(i);
            for &j in targets {
                if keep.contains(&j) {
                    g.adj.entry(i).or_default().insert(j);
                    g.add_vertex(j);
                }
            }
        }
        g
    }

    /// True when the undirected graph obtained by forgetting edge directions
    /// is connected. The empty graph counts as disconnected.
    pub fn underlying_connected(&self) -> bool {
        let Some(&start) = self.adj.keys().next() else {
            return false;
        };
        let mut undirected: BTreeMap<ProcessId, BTreeSet<ProcessId>> = BTreeMap::new();
        for (i, j) in self.edges() {
            undirected.entry(i).or_default().insert(j);
            undirected.entry(j).or_default().insert(i);
        }
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            if let Some(ns) = undirected.get(&v) {
                for &n in ns {
                    if seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
        }
        seen.len() == self.adj.len()
    }
}

/// A fault bound `f` together with the concrete faulty set `F`, fixed for a
/// whole run (static adversary).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultAssignment {
    f: usize,
    faulty: BTreeSet<ProcessId>,
}

impl FaultAssignment {
    pub fn new(f: usize, faulty: BTreeSet<ProcessId>) -> Result<Self, GraphError> {
        if faulty.len() > f {
            return Err(GraphError::TooManyFaulty {
                found: faulty.len(),
                bound: f,
            });
        }
        Ok(Self { f, faulty })
    }

    pub fn fault_free(f: usize) -> Self {
        Self {
            f,
            faulty: BTreeSet::new(),
        }
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn faulty(&self) -> &BTreeSet<ProcessId> {
        &self.faulty
    }

    pub fn is_faulty(&self, v: ProcessId) -> bool {
        self.faulty.contains(&v)
    }

    /// The correct processes `W = universe \ F`.
    pub fn correct(&self, universe: &BTreeSet<ProcessId>) -> BTreeSet<ProcessId> {
        universe.difference(&self.faulty).copied().collect()
    }
}

/// Partition of a graph into strongly connected components plus the
/// condensation DAG over them.
///
/// Components are sorted by their smallest member, and `condensation_edges`
/// are pairs of indices into `components`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SccResult {
    pub components: Vec<BTreeSet<ProcessId>>,
    pub component_of: BTreeMap<ProcessId, usize>,
    pub condensation_edges: BTreeSet<(usize, usize)>,
}

impl SccResult {
    /// Indices of condensation nodes with out-degree zero.
    pub fn sink_indices(&self) -> Vec<usize> {
        let with_out: BTreeSet<usize> =
            self.condensation_edges.iter().map(|&(a, _)| a).collect();
        (0..self.components.len())
            .filter(|i| !with_out.contains(i))
            .collect()
    }
}

struct TarjanState<'g> {
    graph: &'g KnowledgeGraph,
    index: usize,
    indices: BTreeMap<ProcessId, usize>,
    lowlinks: BTreeMap<ProcessId, usize>,
    on_stack: BTreeSet<ProcessId>,
    stack: Vec<ProcessId>,
    components: Vec<BTreeSet<ProcessId>>,
}

impl TarjanState<'_> {
    fn strongconnect(&mut self, v: ProcessId) {
        self.indices.insert(v, self.index);
        self.lowlinks.insert(v, self.index);
        self.index += 1;
        self.stack.push(v);
        self.on_stack.insert(v);

        for &w in self.graph.pd(v) {
            if !self.indices.contains_key(&w) {
                self.strongconnect(w);
                let low = self.lowlinks[&v].min(self.lowlinks[&w]);
                self.lowlinks.insert(v, low);
            } else if self.on_stack.contains(&w) {
                let low = self.lowlinks[&v].min(self.indices[&w]);
                self.lowlinks.insert(v, low);
            }
        }

        if self.lowlinks[&v] == self.indices[&v] {
            let mut component = BTreeSet::new();
            loop {
                let w = self.stack.pop().expect("tarjan stack underflow");
                self.on_stack.remove(&w);
                component.insert(w);
                if w == v {
                    break;
                }
            }
            self.components.push(component);
        }
    }
}

/// Decomposes `g` into maximal strongly connected components and builds the
/// condensation DAG.
pub fn strongly_connected_components(g: &KnowledgeGraph) -> SccResult {
    let mut state = TarjanState {
        graph: g,
        index: 0,
        indices: BTreeMap::new(),
        lowlinks: BTreeMap::new(),
        on_stack: BTreeSet::new(),
        stack: Vec::new(),
        components: Vec::new(),
    };
    for v in g.vertices() {
        if !state.indices.contains_key(&v) {
            state.strongconnect(v);
        }
    }

    let mut components = state.components;
    components.sort_by_key(|c| *c.iter().next().expect("nonempty component"));

    let mut component_of = BTreeMap::new();
    for (idx, comp) in components.iter().enumerate() {
        for &v in comp {
            component_of.insert(v, idx);
        }
    }

    let mut condensation_edges = BTreeSet::new();
    for (i, j) in g.edges() {
        let (ci, cj) = (component_of[&i], component_of[&j]);
        if ci != cj {
            condensation_edges.insert((ci, cj));
        }
    }

    SccResult {
        components,
        component_of,
        condensation_edges,
    }
}

/// The condensation nodes with no outgoing edges, each returned as its member
/// set, in ascending order of smallest member id.
pub fn sink_components(g: &KnowledgeGraph) -> Vec<BTreeSet<ProcessId>> {
    let scc = strongly_connected_components(g);
    scc.sink_indices()
        .into_iter()
        .map(|i| scc.components[i].clone())
        .collect()
}

/// Maximum number of directed `from -> to` paths sharing no internal vertex.
///
/// Computed as unit-capacity max flow on the vertex-split graph; by Menger's
/// theorem this equals the local vertex connectivity. A direct edge counts as
/// one path with no internal vertices.
pub fn node_disjoint_path_count(
    g: &KnowledgeGraph,
    from: ProcessId,
    to: ProcessId,
) -> Result<usize, GraphError> {
    if from == to {
        return Err(GraphError::SamePair(from));
    }
    if !g.contains_vertex(from) {
        return Err(GraphError::UnknownVertex(from));
    }
    if !g.contains_vertex(to) {
        return Err(GraphError::UnknownVertex(to));
    }

    // Split each vertex v into v_in = 2k and v_out = 2k+1 joined by a
    // unit-capacity arc; an original edge (u, v) becomes u_out -> v_in.
    // Source is from_out, sink is to_in, so `from` and `to` are uncapped.
    let ids: Vec<ProcessId> = g.vertices().collect();
    let index: BTreeMap<ProcessId, usize> =
        ids.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let n = ids.len();
    let mut flow = MaxFlow::new(2 * n);
    for (&v, &k) in &index {
        let cap = if v == from || v == to { n as i64 } else { 1 };
        flow.add_edge(2 * k, 2 * k + 1, cap);
    }
    for (u, v) in g.edges() {
        flow.add_edge(2 * index[&u] + 1, 2 * index[&v], 1);
    }
    Ok(flow.run(2 * index[&from] + 1, 2 * index[&to]) as usize)
}

struct FlowEdge {
    to: usize,
    cap: i64,
    rev: usize,
}

struct MaxFlow {
    adj: Vec<Vec<FlowEdge>>,
}

impl MaxFlow {
    fn new(n: usize) -> Self {
        Self {
            adj: (0..n).map(|_| Vec::new()).collect(),
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64) {
        let rev_from = self.adj[to].len();
        let rev_to = self.adj[from].len();
        self.adj[from].push(FlowEdge {
            to,
            cap,
            rev: rev_from,
        });
        self.adj[to].push(FlowEdge {
            to: from,
            cap: 0,
            rev: rev_to,
        });
    }

    /// Edmonds-Karp: BFS augmenting paths until none remain.
    fn run(&mut self, source: usize, sink: usize) -> i64 {
        let mut total = 0;
        loop {
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.adj.len()];
            let mut queue = std::collections::VecDeque::from([source]);
            while let Some(u) = queue.pop_front() {
                if u == sink {
                    break;
                }
                for (ei, e) in self.adj[u].iter().enumerate() {
                    if e.cap > 0 && prev[e.to].is_none() && e.to != source {
                        prev[e.to] = Some((u, ei));
                        queue.push_back(e.to);
                    }
                }
            }
            if prev[sink].is_none() {
                return total;
            }
            let mut bottleneck = i64::MAX;
            let mut v = sink;
            while v != source {
                let (u, ei) = prev[v].expect("path recorded");
                bottleneck = bottleneck.min(self.adj[u][ei].cap);
                v = u;
            }
            let mut v = sink;
            while v != source {
                let (u, ei) = prev[v].expect("path recorded");
                let rev = self.adj[u][ei].rev;
                self.adj[u][ei].cap -= bottleneck;
                self.adj[v][rev].cap += bottleneck;
                v = u;
            }
            total += bottleneck;
        }
    }
}

/// Which of the four k-OSR conditions failed, with a witness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "kebab-case")]
pub enum OsrViolation {
    /// The underlying undirected graph is not connected; `unreached` is the
    /// part not reachable from the smallest vertex (empty for an empty graph).
    NotConnected { unreached: BTreeSet<ProcessId> },
    /// The condensation has more than one sink.
    SinkCountNotOne { sinks: Vec<BTreeSet<ProcessId>> },
    /// The sink component is not k-strongly connected. `pair` is a sink pair
    /// with too few disjoint paths, or `None` when the sink is simply too
    /// small to admit k internally disjoint paths (needs at least k+1
    /// members).
    SinkNotKConnected {
        pair: Option<(ProcessId, ProcessId)>,
        paths_found: usize,
    },
    /// Some non-sink process has fewer than k node-disjoint paths to some
    /// sink process.
    InsufficientPathsToSink {
        from: ProcessId,
        to: ProcessId,
        paths_found: usize,
    },
}

/// Result of [`check_k_osr`]: either the property holds (and `sink` is the
/// unique sink component) or the first violated condition with its witness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OsrReport {
    pub k: usize,
    pub holds: bool,
    /// Present whenever the condensation has exactly one sink, even if a
    /// later condition fails.
    pub sink: Option<BTreeSet<ProcessId>>,
    pub violation: Option<OsrViolation>,
}

impl OsrReport {
    fn ok(k: usize, sink: BTreeSet<ProcessId>) -> Self {
        Self {
            k,
            holds: true,
            sink: Some(sink),
            violation: None,
        }
    }

    fn fail(k: usize, sink: Option<BTreeSet<ProcessId>>, violation: OsrViolation) -> Self {
        Self {
            k,
            holds: false,
            sink,
            violation: Some(violation),
        }
    }
}

/// Checks k-One-Sink-Reducibility, evaluating the four conditions in order:
/// (1) the underlying undirected graph is connected, (2) the condensation has
/// exactly one sink, (3) the sink component's induced subgraph is k-strongly
/// connected, (4) every non-sink process has at least k node-disjoint paths
/// to every sink process.
///
/// A sink with fewer than k+1 members is flagged under condition (3): k
/// internally disjoint paths between distinct vertices require at least k-1
/// internal vertices plus the endpoints.
pub fn check_k_osr(g: &KnowledgeGraph, k: usize) -> OsrReport {
    assert!(k >= 1, "k must be at least 1");

    if !g.underlying_connected() {
        let unreached = match g.vertices().next() {
            None => BTreeSet::new(),
            Some(start) => {
                let mut reached = BTreeSet::from([start]);
                let mut stack = vec![start];
                let mut undirected: BTreeMap<ProcessId, BTreeSet<ProcessId>> = BTreeMap::new();
                for (i, j) in g.edges() {
                    undirected.entry(i).or_default().insert(j);
                    undirected.entry(j).or_default().insert(i);
                }
                while let Some(v) = stack.pop() {
                    if let Some(ns) = undirected.get(&v) {
                        for &n in ns {
                            if reached.insert(n) {
                                stack.push(n);
                            }
                        }
                    }
                }
                g.vertices().filter(|v| !reached.contains(v)).collect()
            }
        };
        return OsrReport::fail(k, None, OsrViolation::NotConnected { unreached });
    }

    let sinks = sink_components(g);
    if sinks.len() != 1 {
        return OsrReport::fail(k, None, OsrViolation::SinkCountNotOne { sinks });
    }
    let sink = sinks.into_iter().next().expect("one sink");

    if sink.len() < k + 1 {
        return OsrReport::fail(
            k,
            Some(sink.clone()),
            OsrViolation::SinkNotKConnected {
                pair: None,
                paths_found: sink.len().saturating_sub(1),
            },
        );
    }
    let sink_graph = g.induced(&sink);
    for &i in &sink {
        for &j in &sink {
            if i == j {
                continue;
            }
            let paths = node_disjoint_path_count(&sink_graph, i, j)
                .expect("distinct sink vertices");
            if paths < k {
                return OsrReport::fail(
                    k,
                    Some(sink.clone()),
                    OsrViolation::SinkNotKConnected {
                        pair: Some((i, j)),
                        paths_found: paths,
                    },
                );
            }
        }
    }

    for i in g.vertices().filter(|v| !sink.contains(v)) {
        for &j in &sink {
            let paths = node_disjoint_path_count(g, i, j).expect("non-sink vs sink");
            if paths < k {
                return OsrReport::fail(
                    k,
                    Some(sink.clone()),
                    OsrViolation::InsufficientPathsToSink {
                        from: i,
                        to: j,
                        paths_found: paths,
                    },
                );
            }
        }
    }

    OsrReport::ok(k, sink)
}

/// True when removing the concrete faulty set leaves an (f+1)-OSR graph,
/// i.e. the failure pattern is safe for this graph.
pub fn is_byzantine_safe(g: &KnowledgeGraph, fa: &FaultAssignment) -> bool {
    byzantine_safe_report(g, fa).holds
}

/// Like [`is_byzantine_safe`] but returns the full residual-graph report.
pub fn byzantine_safe_report(g: &KnowledgeGraph, fa: &FaultAssignment) -> OsrReport {
    for &v in fa.faulty() {
        assert!(g.contains_vertex(v), "faulty process {v} is not a vertex");
    }
    check_k_osr(&g.without(fa.faulty()), fa.f() + 1)
}

/// Exhaustive mode: checks safety for every faulty set of size at most f and
/// returns the first (in ascending order) for which it fails, or `None` when
/// the graph is Byzantine-safe for all of them. Feasible at desk scale only.
pub fn first_unsafe_fault_set(g: &KnowledgeGraph, f: usize) -> Option<BTreeSet<ProcessId>> {
    let vertices: Vec<ProcessId> = g.vertices().collect();
    let mut subsets: Vec<BTreeSet<ProcessId>> = vec![BTreeSet::new()];
    for size in 1..=f.min(vertices.len()) {
        subsets.extend(subsets_of_size(&vertices, size));
    }
    subsets.into_iter().find(|faulty| {
        let fa = FaultAssignment::new(f, faulty.clone()).expect("|F| <= f by construction");
        !is_byzantine_safe(g, &fa)
    })
}

fn subsets_of_size(items: &[ProcessId], size: usize) -> Vec<BTreeSet<ProcessId>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(size);
    fn rec(
        items: &[ProcessId],
        size: usize,
        start: usize,
        current: &mut Vec<ProcessId>,
        out: &mut Vec<BTreeSet<ProcessId>>,
    ) {
        if current.len() == size {
            out.push(current.iter().copied().collect());
            return;
        }
        for i in start..items.len() {
            current.push(items[i]);
            rec(items, size, i + 1, current, out);
            current.pop();
        }
    }
    rec(items, size, 0, &mut current, &mut out);
    out
}

/// True when the subgraph induced by correct processes has at least f+1
/// node-disjoint directed paths from `from` to `to`.
///
/// Both endpoints must be correct.
pub fn is_f_reachable(
    g: &KnowledgeGraph,
    fa: &FaultAssignment,
    from: ProcessId,
    to: ProcessId,
) -> Result<bool, GraphError> {
    if from == to {
        return Err(GraphError::SamePair(from));
    }
    assert!(
        !fa.is_faulty(from) && !fa.is_faulty(to),
        "f-reachability is defined between correct processes"
    );
    let correct = g.without(fa.faulty());
    Ok(node_disjoint_path_count(&correct, from, to)? > fa.f())
}

const GENERATION_ATTEMPTS: u64 = 64;

/// Deterministically generates a knowledge graph that passes
/// [`check_k_osr`] for the given k.
///
/// The sink is a circulant digraph on ids `1..=n_sink` with jumps `1..=k`
/// plus some seeded extra edges; non-sink ids `n_sink+1..` each get edges
/// toward k distinct sink members plus optional extra edges toward earlier
/// vertices. Candidates failing the check are rejected and regenerated up to
/// a bounded number of attempts.
pub fn generate_k_osr(
    n_sink: usize,
    n_nonsink: usize,
    k: usize,
    seed: u64,
) -> Result<KnowledgeGraph, GraphError> {
    if k < 1 {
        return Err(GraphError::Generation("k must be at least 1".into()));
    }
    if n_sink < k + 1 {
        return Err(GraphError::Generation(format!(
            "a k-strongly connected sink needs at least k+1 = {} members, got {n_sink}",
            k + 1
        )));
    }

    for attempt in 0..GENERATION_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9e37)));
        let g = build_candidate(n_sink, n_nonsink, k, &mut rng);
        if check_k_osr(&g, k).holds {
            return Ok(g);
        }
    }
    Err(GraphError::Generation(format!(
        "no {k}-OSR graph with {n_sink}+{n_nonsink} vertices found within {GENERATION_ATTEMPTS} attempts"
    )))
}

fn build_candidate(
    n_sink: usize,
    n_nonsink: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> KnowledgeGraph {
    let sink_ids: Vec<ProcessId> = (1..=n_sink as u32).map(ProcessId).collect();
    let mut g = KnowledgeGraph::new();

    for (pos, &v) in sink_ids.iter().enumerate() {
        for jump in 1..=k {
            let w = sink_ids[(pos + jump) % n_sink];
            if v != w {
                g.add_edge(v, w).expect("distinct ids");
            }
        }
    }
    // Extra intra-sink edges for variety; never edges leaving the sink.
    for &v in &sink_ids {
        for &w in &sink_ids {
            if v != w && !g.has_edge(v, w) && rng.gen_bool(0.15) {
                g.add_edge(v, w).expect("distinct ids");
            }
        }
    }

    for offset in 0..n_nonsink {
        let v = ProcessId((n_sink + offset + 1) as u32);
        g.add_vertex(v);
        // k distinct sink targets guarantee k disjoint routes into the sink.
        let mut targets = sink_ids.clone();
        for i in (1..targets.len()).rev() {
            targets.swap(i, rng.gen_range(0..=i));
        }
        for &t in targets.iter().take(k) {
            g.add_edge(v, t).expect("distinct ids");
        }
        // Optional edges toward other non-sink vertices keep layered shapes
        // in the mix without ever leaving the sink unreachable.
        for other in 0..n_nonsink {
            let w = ProcessId((n_sink + other + 1) as u32);
            if w != v && rng.gen_bool(0.2) {
                g.add_edge(v, w).expect("distinct ids");
            }
        }
    }
    g
}
