//! Semi-Markovian DAGs and the graph primitives used by identification.
//!
//! Vertices are addressed by their insertion index. Bidirected edges stand for
//! a latent variable with exactly two observed children; they are stored
//! natively and only expanded into latent forks inside the d-separation walker.
//! Fixed vertices model values forced by an intervention: they never have
//! incoming edges and are never traversed by a separation path.

use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::union_find::UnionFind;

pub type NodeSet = BTreeSet<usize>;

type LabelEdges<'a> = BTreeSet<(&'a str, &'a str)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexKind {
    Observed,
    Fixed,
}

impl fmt::Display for VertexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertexKind::Observed => f.write_str("observed"),
            VertexKind::Fixed => f.write_str("fixed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vertex {
    pub label: String,
    pub kind: VertexKind,
}

impl Vertex {
    pub fn observed(label: impl Into<String>) -> Self {
        Vertex {
            label: label.into(),
            kind: VertexKind::Observed,
        }
    }

    pub fn fixed(label: impl Into<String>) -> Self {
        Vertex {
            label: label.into(),
            kind: VertexKind::Fixed,
        }
    }
}

/// An acyclic mixed graph with directed and bidirected edges.
///
/// Equality compares labels, kinds and edges; vertex order is not part of it.
#[derive(Debug, Clone)]
pub struct Dag {
    vertices: Vec<Vertex>,
    index: HashMap<String, usize>,
    directed: BTreeSet<(usize, usize)>,
    bidirected: BTreeSet<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    siblings: Vec<Vec<usize>>,
}

impl Dag {
    /// Builds a graph and checks every structural invariant.
    pub fn new(
        vertices: Vec<Vertex>,
        directed: impl IntoIterator<Item = (usize, usize)>,
        bidirected: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = vertices.len();
        let mut index = HashMap::with_capacity(n);
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.label.clone(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate label `{}`", v.label)));
            }
        }
        let check = |i: usize| -> Result<()> {
            if i < n {
                Ok(())
            } else {
                Err(Error::UnknownVertex(format!("#{i}")))
            }
        };

        let mut dir = BTreeSet::new();
        for (a, b) in directed {
            check(a)?;
            check(b)?;
            if a == b {
                return Err(Error::CyclicGraph(vertices[a].label.clone()));
            }
            if vertices[b].kind == VertexKind::Fixed {
                return Err(Error::InvalidGraph(format!(
                    "fixed vertex `{}` has an incoming edge",
                    vertices[b].label
                )));
            }
            dir.insert((a, b));
        }
        let mut bi = BTreeSet::new();
        for (a, b) in bidirected {
            check(a)?;
            check(b)?;
            if a == b {
                return Err(Error::CyclicGraph(vertices[a].label.clone()));
            }
            for &v in &[a, b] {
                if vertices[v].kind == VertexKind::Fixed {
                    return Err(Error::InvalidGraph(format!(
                        "fixed vertex `{}` has a bidirected edge",
                        vertices[v].label
                    )));
                }
            }
            bi.insert((a.min(b), a.max(b)));
        }

        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut siblings = vec![Vec::new(); n];
        for &(a, b) in &dir {
            parents[b].push(a);
            children[a].push(b);
        }
        for &(a, b) in &bi {
            siblings[a].push(b);
            siblings[b].push(a);
        }
        for s in &mut siblings {
            s.sort_unstable();
        }

        let dag = Dag {
            vertices,
            index,
            directed: dir,
            bidirected: bi,
            parents,
            children,
            siblings,
        };
        if let Some(stuck) = dag.kahn_leftover() {
            return Err(Error::CyclicGraph(stuck));
        }
        Ok(dag)
    }

    /// Convenience constructor over labels; every vertex is observed.
    pub fn from_labels(
        labels: &[&str],
        directed: &[(&str, &str)],
        bidirected: &[(&str, &str)],
    ) -> Result<Self> {
        let mut vertices: Vec<Vertex> = labels.iter().map(|l| Vertex::observed(*l)).collect();
        let mut pos: HashMap<String, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.to_string(), i)).collect();
        let mut lookup = |l: &str, vertices: &mut Vec<Vertex>| -> usize {
            if let Some(&i) = pos.get(l) {
                return i;
            }
            vertices.push(Vertex::observed(l));
            pos.insert(l.to_string(), vertices.len() - 1);
            vertices.len() - 1
        };
        let mut dir = Vec::new();
        for (a, b) in directed {
            let ia = lookup(a, &mut vertices);
            let ib = lookup(b, &mut vertices);
            dir.push((ia, ib));
        }
        let mut bi = Vec::new();
        for (a, b) in bidirected {
            let ia = lookup(a, &mut vertices);
            let ib = lookup(b, &mut vertices);
            bi.push((ia, ib));
        }
        Dag::new(vertices, dir, bi)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn label(&self, v: usize) -> &str {
        &self.vertices[v].label
    }

    pub fn kind(&self, v: usize) -> VertexKind {
        self.vertices[v].kind
    }

    pub fn is_observed(&self, v: usize) -> bool {
        self.vertices[v].kind == VertexKind::Observed
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label)
            .ok_or_else(|| Error::UnknownVertex(label.to_string()))
    }

    pub fn node_set<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Result<NodeSet> {
        labels.into_iter().map(|l| self.require(l)).collect()
    }

    pub fn labels_of(&self, set: &NodeSet) -> BTreeSet<String> {
        set.iter().map(|&v| self.label(v).to_string()).collect()
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    /// Bidirected neighbours.
    pub fn siblings(&self, v: usize) -> &[usize] {
        &self.siblings[v]
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.directed.iter().copied()
    }

    pub fn bidirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bidirected.iter().copied()
    }

    pub fn has_directed(&self, a: usize, b: usize) -> bool {
        self.directed.contains(&(a, b))
    }

    pub fn has_bidirected(&self, a: usize, b: usize) -> bool {
        self.bidirected.contains(&(a.min(b), a.max(b)))
    }

    pub fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&v| self.is_observed(v))
    }

    fn check_set(&self, s: &NodeSet) -> Result<()> {
        match s.iter().find(|&&v| v >= self.len()) {
            Some(v) => Err(Error::UnknownVertex(format!("#{v}"))),
            None => Ok(()),
        }
    }

    /// `s` together with every vertex that has a directed path into `s`.
    pub fn ancestors(&self, s: &NodeSet) -> Result<NodeSet> {
        self.check_set(s)?;
        let mut seen = s.clone();
        let mut queue: VecDeque<usize> = s.iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            for &p in &self.parents[v] {
                if seen.insert(p) {
                    queue.push_back(p);
                }
            }
        }
        Ok(seen)
    }

    /// `s` together with every vertex reachable from `s` along directed edges.
    pub fn descendants(&self, s: &NodeSet) -> Result<NodeSet> {
        self.check_set(s)?;
        let mut seen = s.clone();
        let mut queue: VecDeque<usize> = s.iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            for &c in &self.children[v] {
                if seen.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        Ok(seen)
    }

    /// Kahn's algorithm; ties go to the vertex inserted first.
    pub fn topological_order(&self) -> Vec<usize> {
        self.kahn().0
    }

    fn kahn(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        (order, indeg)
    }

    fn kahn_leftover(&self) -> Option<String> {
        let (order, indeg) = self.kahn();
        if order.len() == self.len() {
            return None;
        }
        let stuck: Vec<&str> = (0..self.len())
            .filter(|&v| indeg[v] > 0)
            .map(|v| self.label(v))
            .collect();
        Some(stuck.join(", "))
    }

    /// Whether `x` and `y` are d-separated given `z`.
    ///
    /// Fixed vertices are never entered. A bidirected edge behaves as a path
    /// through an unconditioned latent fork, so it carries an arrowhead at both
    /// ends.
    pub fn d_separated(&self, x: &NodeSet, y: &NodeSet, z: &NodeSet) -> Result<bool> {
        for s in [x, y, z] {
            self.check_set(s)?;
            if let Some(&v) = s.iter().find(|&&v| !self.is_observed(v)) {
                return Err(Error::InvalidSeparationQuery(format!(
                    "`{}` is a fixed vertex",
                    self.label(v)
                )));
            }
        }
        if !x.is_disjoint(y) || !x.is_disjoint(z) || !y.is_disjoint(z) {
            return Err(Error::InvalidSeparationQuery(
                "separation sets must be disjoint".to_string(),
            ));
        }
        let conditioned_anc = self.ancestors(z)?;

        // State: (vertex, how we arrived). `None` marks a path start.
        #[derive(Clone, Copy, PartialEq, Eq, Hash)]
        enum Arrival {
            Start,
            Head,
            Tail,
        }
        let mut seen: std::collections::HashSet<(usize, Arrival)> = Default::default();
        let mut queue: VecDeque<(usize, Arrival)> = VecDeque::new();
        for &s in x {
            seen.insert((s, Arrival::Start));
            queue.push_back((s, Arrival::Start));
        }
        while let Some((v, arrival)) = queue.pop_front() {
            // (neighbour, arrowhead at v, arrowhead at neighbour)
            let moves = self.children[v]
                .iter()
                .map(|&w| (w, false, true))
                .chain(self.parents[v].iter().map(|&w| (w, true, false)))
                .chain(self.siblings[v].iter().map(|&w| (w, true, true)));
            for (w, head_at_v, head_at_w) in moves {
                if !self.is_observed(w) {
                    continue;
                }
                if arrival != Arrival::Start {
                    let collider = arrival == Arrival::Head && head_at_v;
                    let open = if collider {
                        conditioned_anc.contains(&v)
                    } else {
                        !z.contains(&v)
                    };
                    if !open {
                        continue;
                    }
                }
                if y.contains(&w) {
                    return Ok(false);
                }
                let next = (w, if head_at_w { Arrival::Head } else { Arrival::Tail });
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        Ok(true)
    }

    /// Maximal confounded components over observed vertices, ordered by their
    /// smallest member.
    pub fn c_components(&self) -> VertexPartition {
        let mut uf = UnionFind::new(self.len());
        for &(a, b) in &self.bidirected {
            uf.union(a, b);
        }
        let mut blocks: Vec<NodeSet> = Vec::new();
        let mut root_block: HashMap<usize, usize> = HashMap::new();
        for v in self.observed() {
            let r = uf.find(v);
            let b = *root_block.entry(r).or_insert_with(|| {
                blocks.push(NodeSet::new());
                blocks.len() - 1
            });
            blocks[b].insert(v);
        }
        VertexPartition { blocks }
    }

    /// Submodel graph: edges into `x` are removed and `x` becomes fixed.
    pub fn cut_incoming(&self, x: &NodeSet) -> Dag {
        let mut vertices = self.vertices.clone();
        for &v in x {
            if let Some(vx) = vertices.get_mut(v) {
                vx.kind = VertexKind::Fixed;
            }
        }
        let directed: Vec<_> = self
            .directed
            .iter()
            .copied()
            .filter(|(_, b)| !x.contains(b))
            .collect();
        let bidirected: Vec<_> = self
            .bidirected
            .iter()
            .copied()
            .filter(|(a, b)| !x.contains(a) && !x.contains(b))
            .collect();
        Dag::new(vertices, directed, bidirected).expect("removing edges preserves invariants")
    }

    /// Removes directed edges leaving `x`; kinds are unchanged.
    pub fn cut_outgoing(&self, x: &NodeSet) -> Dag {
        let directed: Vec<_> = self
            .directed
            .iter()
            .copied()
            .filter(|(a, _)| !x.contains(a))
            .collect();
        Dag::new(
            self.vertices.clone(),
            directed,
            self.bidirected.iter().copied(),
        )
        .expect("removing edges preserves invariants")
    }

    /// Induced subgraph on `keep`, preserving relative vertex order. The second
    /// component maps new indices to old ones.
    pub fn induced(&self, keep: &NodeSet) -> (Dag, Vec<usize>) {
        let old: Vec<usize> = keep.iter().copied().filter(|&v| v < self.len()).collect();
        let mut new_of = vec![usize::MAX; self.len()];
        for (i, &v) in old.iter().enumerate() {
            new_of[v] = i;
        }
        let vertices = old.iter().map(|&v| self.vertices[v].clone()).collect();
        let remap = |(a, b): (usize, usize)| {
            (new_of[a] != usize::MAX && new_of[b] != usize::MAX).then(|| (new_of[a], new_of[b]))
        };
        let directed: Vec<_> = self.directed.iter().copied().filter_map(remap).collect();
        let bidirected: Vec<_> = self.bidirected.iter().copied().filter_map(remap).collect();
        let dag = Dag::new(vertices, directed, bidirected).expect("subgraph preserves invariants");
        (dag, old)
    }

    /// Same graph with vertices listed in label order.
    pub fn sorted_by_label(&self) -> Dag {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.label(a).cmp(self.label(b)));
        let mut new_of = vec![0; self.len()];
        for (i, &v) in order.iter().enumerate() {
            new_of[v] = i;
        }
        let vertices = order.iter().map(|&v| self.vertices[v].clone()).collect();
        Dag::new(
            vertices,
            self.directed.iter().map(|&(a, b)| (new_of[a], new_of[b])),
            self.bidirected.iter().map(|&(a, b)| (new_of[a], new_of[b])),
        )
        .expect("relabelling preserves invariants")
    }

    fn label_edges(&self) -> (LabelEdges<'_>, LabelEdges<'_>) {
        let dir = self
            .directed
            .iter()
            .map(|&(a, b)| (self.label(a), self.label(b)))
            .collect();
        let bi = self
            .bidirected
            .iter()
            .map(|&(a, b)| {
                let (la, lb) = (self.label(a), self.label(b));
                if la <= lb {
                    (la, lb)
                } else {
                    (lb, la)
                }
            })
            .collect();
        (dir, bi)
    }
}

impl PartialEq for Dag {
    fn eq(&self, other: &Self) -> bool {
        let mine: BTreeSet<(&str, VertexKind)> = self
            .vertices
            .iter()
            .map(|v| (v.label.as_str(), v.kind))
            .collect();
        let theirs: BTreeSet<(&str, VertexKind)> = other
            .vertices
            .iter()
            .map(|v| (v.label.as_str(), v.kind))
            .collect();
        mine == theirs && self.label_edges() == other.label_edges()
    }
}

impl Eq for Dag {}

/// Disjoint blocks covering the observed vertices of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexPartition {
    blocks: Vec<NodeSet>,
}

impl VertexPartition {
    pub fn blocks(&self) -> &[NodeSet] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_of(&self, v: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&v))
    }

    /// Blocks as label sets, convenient for comparisons that ignore order.
    pub fn label_blocks(&self, g: &Dag) -> BTreeSet<BTreeSet<String>> {
        self.blocks.iter().map(|b| g.labels_of(b)).collect()
    }
}

/// Latent projection of a directed graph onto its non-latent vertices.
///
/// Directed paths whose interior is latent become directed edges, and two
/// observed vertices sharing a latent ancestor through latent-only paths
/// become bidirected neighbours.
pub fn latent_project(
    vertices: &[String],
    directed_edges: &[(String, String)],
    latent_labels: &BTreeSet<String>,
) -> Result<Dag> {
    let index: HashMap<&str, usize> = vertices
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let lookup = |l: &str| {
        index
            .get(l)
            .copied()
            .ok_or_else(|| Error::UnknownVertex(l.to_string()))
    };
    let mut directed = Vec::with_capacity(directed_edges.len());
    for (a, b) in directed_edges {
        directed.push((lookup(a)?, lookup(b)?));
    }
    let mut latent = vec![false; vertices.len()];
    for l in latent_labels {
        latent[lookup(l)?] = true;
    }
    project(vertices, &directed, &[], &latent)
}

/// General projection over index edges. Bidirected input edges are treated as
/// explicit latent forks before projecting.
pub(crate) fn project(
    labels: &[String],
    directed: &[(usize, usize)],
    bidirected: &[(usize, usize)],
    latent: &[bool],
) -> Result<Dag> {
    let n = labels.len();
    let total = n + bidirected.len();
    let mut children = vec![Vec::new(); total];
    let mut is_latent: Vec<bool> = latent.to_vec();
    for &(a, b) in directed {
        if a == b {
            return Err(Error::CyclicGraph(labels[a].clone()));
        }
        children[a].push(b);
    }
    for (k, &(a, b)) in bidirected.iter().enumerate() {
        if a == b {
            return Err(Error::CyclicGraph(labels[a].clone()));
        }
        children[n + k].push(a);
        children[n + k].push(b);
    }
    is_latent.resize(total, true);

    // Cycle check over the full explicit graph.
    let mut indeg = vec![0usize; total];
    for cs in &children {
        for &c in cs {
            indeg[c] += 1;
        }
    }
    let mut stack: Vec<usize> = (0..total).filter(|&v| indeg[v] == 0).collect();
    let mut visited = 0;
    while let Some(v) = stack.pop() {
        visited += 1;
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                stack.push(c);
            }
        }
    }
    if visited < total {
        let stuck: Vec<&str> = (0..n)
            .filter(|&v| indeg[v] > 0)
            .map(|v| labels[v].as_str())
            .collect();
        return Err(Error::CyclicGraph(stuck.join(", ")));
    }

    // Observed vertices reachable from `start` through latent-only interiors.
    let reach = |start: usize| -> NodeSet {
        let mut out = NodeSet::new();
        let mut seen = vec![false; total];
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &c in &children[v] {
                if seen[c] {
                    continue;
                }
                seen[c] = true;
                if is_latent[c] {
                    stack.push(c);
                } else {
                    out.insert(c);
                }
            }
        }
        out
    };

    let kept: Vec<usize> = (0..n).filter(|&v| !is_latent[v]).collect();
    let mut new_of = vec![usize::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        new_of[v] = i;
    }
    let mut out_dir = BTreeSet::new();
    let mut out_bi = BTreeSet::new();
    for &v in &kept {
        for w in reach(v) {
            out_dir.insert((new_of[v], new_of[w]));
        }
    }
    for l in (0..total).filter(|&v| is_latent[v]) {
        let kids: Vec<usize> = reach(l).into_iter().collect();
        for (i, &a) in kids.iter().enumerate() {
            for &b in &kids[i + 1..] {
                out_bi.insert((new_of[a].min(new_of[b]), new_of[a].max(new_of[b])));
            }
        }
    }
    let vertices = kept.iter().map(|&v| Vertex::observed(labels[v].clone())).collect();
    Dag::new(vertices, out_dir, out_bi)
}
