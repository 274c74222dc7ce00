//! Parallel worlds graphs and their refinement into counterfactual graphs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::counterfactual::{Agreement, CfConjunction, CfVariable, ValueRef};
use crate::error::Result;
use crate::graph::{Dag, Vertex};
use crate::union_find::UnionFind;

/// The interventions defining one world; empty for the factual world.
pub type World = BTreeMap<String, ValueRef>;

/// `x,z'` for the world `do(X=0, Z=1)`.
pub fn render_world(world: &World) -> String {
    let parts: Vec<String> = world.iter().map(|(k, v)| v.render(k)).collect();
    parts.join(",")
}

/// `Y` in the factual world, `Y_{x}` elsewhere.
pub fn node_label(base: &str, world: &World) -> String {
    if world.is_empty() {
        base.to_string()
    } else {
        format!("{base}_{{{}}}", render_world(world))
    }
}

/// Metadata of one vertex in a parallel worlds or counterfactual graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfNode {
    pub base: String,
    /// World of the node. For merged nodes this is the representative's world.
    pub world: World,
    pub fixed: bool,
    /// Fixed value, or the value the conjunction binds the node to.
    pub value: Option<ValueRef>,
}

impl CfNode {
    /// The node as a counterfactual variable carrying its bound value.
    pub fn variable(&self) -> CfVariable {
        CfVariable {
            name: self.base.clone(),
            observed: self.value.clone(),
            interventions: self.world.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParallelWorlds {
    pub graph: Dag,
    pub nodes: Vec<CfNode>,
    pub worlds: Vec<World>,
}

#[derive(Debug, Clone)]
pub struct CounterfactualGraph {
    pub graph: Dag,
    /// Indexed like the vertices of `graph`.
    pub nodes: Vec<CfNode>,
    /// Parallel worlds label to merged label, for nodes that survive the
    /// ancestral restriction.
    pub representative: BTreeMap<String, String>,
    pub bound_values: BTreeMap<String, ValueRef>,
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub graph: CounterfactualGraph,
    /// The relabelled conjunction with duplicates removed.
    pub conj: CfConjunction,
    /// For every input term, the index of its image in `conj`.
    pub positions: Vec<usize>,
    /// For every term of `conj`, its vertex in `graph.graph`.
    pub term_nodes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum MakeCg {
    Built(Box<CgResult>),
    /// Two events assign different values to one variable.
    Inconsistent,
    /// A merge would equate a symbolic value with a different value, so
    /// consistency depends on the summation index.
    Undecidable,
}

/// Distinct worlds of a conjunction: the factual world first, then by size
/// and rendering.
pub fn worlds_of(c: &CfConjunction) -> Vec<World> {
    let set: BTreeSet<World> = c.iter().map(|t| t.interventions.clone()).collect();
    let mut worlds: Vec<World> = set.into_iter().collect();
    worlds.sort_by_cached_key(|w| (w.len(), render_world(w)));
    worlds
}

struct Layout<'a> {
    g: &'a Dag,
    worlds: Vec<World>,
    /// Intervened value of each base vertex in each world.
    fixed_in: Vec<Vec<Option<ValueRef>>>,
}

impl<'a> Layout<'a> {
    fn new(g: &'a Dag, c: &CfConjunction) -> Result<Self> {
        for t in c {
            g.require(&t.name)?;
            for k in t.interventions.keys() {
                g.require(k)?;
            }
        }
        let worlds = worlds_of(c);
        let fixed_in = (0..g.len())
            .map(|v| {
                worlds
                    .iter()
                    .map(|w| w.get(g.label(v)).cloned())
                    .collect()
            })
            .collect();
        Ok(Layout { g, worlds, fixed_in })
    }

    fn world_index(&self, w: &World) -> usize {
        self.worlds.iter().position(|x| x == w).expect("world collected")
    }

    fn is_fixed(&self, v: usize, w: usize) -> bool {
        self.fixed_in[v][w].is_some()
    }

    /// Pairs of observed copies linked by a shared latent: the copies of both
    /// endpoints of every bidirected edge across all worlds, and all copies of
    /// one variable through its error term.
    fn latent_pairs(&self) -> Vec<((usize, usize), (usize, usize))> {
        let nw = self.worlds.len();
        let mut out = Vec::new();
        for (a, b) in self.g.bidirected_edges() {
            for w1 in 0..nw {
                for w2 in 0..nw {
                    if !self.is_fixed(a, w1) && !self.is_fixed(b, w2) {
                        out.push(((a, w1), (b, w2)));
                    }
                }
            }
        }
        for v in 0..self.g.len() {
            for w1 in 0..nw {
                for w2 in w1 + 1..nw {
                    if !self.is_fixed(v, w1) && !self.is_fixed(v, w2) {
                        out.push(((v, w1), (v, w2)));
                    }
                }
            }
        }
        out
    }
}

/// Builds the parallel worlds graph of `c` over `g`. Fixed copies with equal
/// base and value are shared between worlds.
#[allow(clippy::needless_range_loop)]
pub fn parallel_worlds(g: &Dag, c: &CfConjunction) -> Result<ParallelWorlds> {
    let lay = Layout::new(g, c)?;
    let nw = lay.worlds.len();
    let mut nodes = Vec::new();
    let mut copy = vec![vec![0usize; nw]; g.len()];
    let mut fixed_nodes: HashMap<(usize, ValueRef), usize> = HashMap::new();
    for w in 0..nw {
        for v in 0..g.len() {
            copy[v][w] = match &lay.fixed_in[v][w] {
                Some(val) => *fixed_nodes.entry((v, val.clone())).or_insert_with(|| {
                    nodes.push(CfNode {
                        base: g.label(v).to_string(),
                        world: World::new(),
                        fixed: true,
                        value: Some(val.clone()),
                    });
                    nodes.len() - 1
                }),
                None => {
                    nodes.push(CfNode {
                        base: g.label(v).to_string(),
                        world: lay.worlds[w].clone(),
                        fixed: false,
                        value: None,
                    });
                    nodes.len() - 1
                }
            };
        }
    }
    let mut directed = BTreeSet::new();
    for (a, b) in g.directed_edges() {
        for w in 0..nw {
            if !lay.is_fixed(b, w) {
                directed.insert((copy[a][w], copy[b][w]));
            }
        }
    }
    let bidirected: BTreeSet<(usize, usize)> = lay
        .latent_pairs()
        .into_iter()
        .map(|((a, w1), (b, w2))| (copy[a][w1], copy[b][w2]))
        .collect();
    let graph = Dag::new(vertices_of(&nodes), directed, bidirected)?;
    Ok(ParallelWorlds {
        graph,
        nodes,
        worlds: lay.worlds,
    })
}

fn vertices_of(nodes: &[CfNode]) -> Vec<Vertex> {
    nodes
        .iter()
        .map(|n| {
            if n.fixed {
                let val = n.value.as_ref().expect("fixed nodes carry a value");
                Vertex::fixed(val.render(&n.base))
            } else {
                Vertex::observed(node_label(&n.base, &n.world))
            }
        })
        .collect()
}

/// Identity of a parallel worlds node after merging.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Merged {
    /// Base vertex and class root.
    Observed(usize, usize),
    Fixed(usize, ValueRef),
}

struct Classes {
    uf: Vec<UnionFind>,
    /// Bound value per base and class root.
    values: Vec<HashMap<usize, ValueRef>>,
}

impl Classes {
    fn root(&mut self, v: usize, w: usize) -> usize {
        self.uf[v].find(w)
    }

    fn value(&mut self, v: usize, w: usize) -> Option<ValueRef> {
        let r = self.root(v, w);
        self.values[v].get(&r).cloned()
    }

    /// Binds a value to the class of `(v, w)`.
    fn bind(&mut self, v: usize, w: usize, val: ValueRef) -> Agreement {
        let r = self.root(v, w);
        match self.values[v].get(&r) {
            Some(old) => old.compare(&val),
            None => {
                self.values[v].insert(r, val);
                Agreement::Equal
            }
        }
    }
}

/// Merges copies that are provably the same variable, relabels `c` onto the
/// merged nodes and keeps only the part ancestral to it.
pub fn make_cg(g: &Dag, c: &CfConjunction) -> Result<MakeCg> {
    let lay = Layout::new(g, c)?;
    let nw = lay.worlds.len();
    let mut cls = Classes {
        uf: (0..g.len()).map(|_| UnionFind::new(nw)).collect(),
        values: vec![HashMap::new(); g.len()],
    };
    let mut undecidable = false;

    // Bind the observed values of the conjunction.
    let mut terms = Vec::with_capacity(c.len());
    for t in c {
        let v = g.require(&t.name)?;
        let w = lay.world_index(&t.interventions);
        if let Some(forced) = &lay.fixed_in[v][w] {
            match t.observed.as_ref().map(|o| o.compare(forced)) {
                Some(Agreement::Different) => return Ok(MakeCg::Inconsistent),
                Some(Agreement::Unknown) => undecidable = true,
                _ => {}
            }
            // A term on a fixed copy carries no information beyond its world.
            terms.push(None);
            continue;
        }
        if let Some(val) = &t.observed {
            match cls.bind(v, w, val.clone()) {
                Agreement::Different => return Ok(MakeCg::Inconsistent),
                Agreement::Unknown => undecidable = true,
                Agreement::Equal => {}
            }
        }
        terms.push(Some((v, w)));
    }

    // Scan same-base pairs in topological order, merging world classes.
    for v in g.topological_order() {
        let live: Vec<usize> = (0..nw).filter(|&w| !lay.is_fixed(v, w)).collect();
        for (i, &w1) in live.iter().enumerate() {
            for &w2 in &live[i + 1..] {
                if cls.root(v, w1) == cls.root(v, w2) || !same_variable(&lay, &mut cls, v, w1, w2) {
                    continue;
                }
                let (r1, r2) = (cls.root(v, w1), cls.root(v, w2));
                let merged_value = match (cls.values[v].remove(&r1), cls.values[v].remove(&r2)) {
                    (Some(a), Some(b)) => match a.compare(&b) {
                        Agreement::Different => return Ok(MakeCg::Inconsistent),
                        Agreement::Unknown => {
                            undecidable = true;
                            Some(a)
                        }
                        Agreement::Equal => Some(a),
                    },
                    (a, b) => a.or(b),
                };
                cls.uf[v].union(w1, w2);
                if let Some(val) = merged_value {
                    let r = cls.root(v, w1);
                    cls.values[v].insert(r, val);
                }
            }
        }
    }
    if undecidable {
        return Ok(MakeCg::Undecidable);
    }

    // Representative world per class: fewest interventions, then rendering.
    let mut rep_world: HashMap<(usize, usize), usize> = HashMap::new();
    for v in 0..g.len() {
        for w in 0..nw {
            if lay.is_fixed(v, w) {
                continue;
            }
            let r = cls.root(v, w);
            let key = |w: usize| (lay.worlds[w].len(), render_world(&lay.worlds[w]), w);
            rep_world
                .entry((v, r))
                .and_modify(|cur| {
                    if key(w) < key(*cur) {
                        *cur = w;
                    }
                })
                .or_insert(w);
        }
    }

    let merged_of = |cls: &mut Classes, v: usize, w: usize| -> Merged {
        match &lay.fixed_in[v][w] {
            Some(val) => Merged::Fixed(v, val.clone()),
            None => Merged::Observed(v, cls.root(v, w)),
        }
    };

    // Directed edges come from each class's representative copy.
    let mut parents: BTreeMap<Merged, Vec<Merged>> = BTreeMap::new();
    let mut all: BTreeSet<Merged> = BTreeSet::new();
    for v in 0..g.len() {
        for w in 0..nw {
            let m = merged_of(&mut cls, v, w);
            all.insert(m.clone());
            if let Merged::Observed(_, r) = m {
                let wr = rep_world[&(v, r)];
                let ps = g
                    .parents(v)
                    .iter()
                    .map(|&p| merged_of(&mut cls, p, wr))
                    .collect();
                parents.insert(Merged::Observed(v, r), ps);
            }
        }
    }
    let mut bidirected: BTreeSet<(Merged, Merged)> = BTreeSet::new();
    for ((a, w1), (b, w2)) in lay.latent_pairs() {
        let (ma, mb) = (merged_of(&mut cls, a, w1), merged_of(&mut cls, b, w2));
        if ma != mb {
            bidirected.insert((ma.clone().min(mb.clone()), ma.max(mb)));
        }
    }

    // Relabelled conjunction, deduplicated.
    let mut conj: Vec<CfVariable> = Vec::new();
    let mut conj_nodes: Vec<Merged> = Vec::new();
    let mut positions = Vec::with_capacity(c.len());
    for (t, slot) in c.iter().zip(&terms) {
        let (v, w) = match slot {
            Some(s) => *s,
            // Terms on fixed copies collapse onto the fixed node itself.
            None => {
                let v = g.require(&t.name)?;
                (v, lay.world_index(&t.interventions))
            }
        };
        let m = merged_of(&mut cls, v, w);
        let var = match &m {
            Merged::Observed(_, r) => CfVariable {
                name: t.name.clone(),
                observed: t.observed.clone(),
                interventions: lay.worlds[rep_world[&(v, *r)]].clone(),
            },
            Merged::Fixed(..) => t.clone(),
        };
        let pos = match conj.iter().position(|x| *x == var) {
            Some(p) => p,
            None => {
                conj.push(var);
                conj_nodes.push(m);
                conj.len() - 1
            }
        };
        positions.push(pos);
    }

    // Ancestral restriction.
    let mut keep: BTreeSet<Merged> = BTreeSet::new();
    let mut stack: Vec<Merged> = conj_nodes.clone();
    while let Some(m) = stack.pop() {
        if keep.insert(m.clone()) {
            if let Some(ps) = parents.get(&m) {
                stack.extend(ps.iter().cloned());
            }
        }
    }

    // Stable vertex order: base order of `g`, then representative order.
    let mut order: Vec<Merged> = keep.into_iter().collect();
    let sort_key = |m: &Merged| match m {
        Merged::Observed(v, r) => {
            let w = rep_world[&(*v, *r)];
            (*v, 0, lay.worlds[w].len(), render_world(&lay.worlds[w]))
        }
        Merged::Fixed(v, val) => (*v, 1, 0, val.render(g.label(*v))),
    };
    order.sort_by_cached_key(sort_key);
    let idx: HashMap<Merged, usize> = order.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();

    let nodes: Vec<CfNode> = order
        .iter()
        .map(|m| match m {
            Merged::Observed(v, r) => CfNode {
                base: g.label(*v).to_string(),
                world: lay.worlds[rep_world[&(*v, *r)]].clone(),
                fixed: false,
                value: cls.values[*v].get(r).cloned(),
            },
            Merged::Fixed(v, val) => CfNode {
                base: g.label(*v).to_string(),
                world: World::new(),
                fixed: true,
                value: Some(val.clone()),
            },
        })
        .collect();
    let mut directed = Vec::new();
    for (m, ps) in &parents {
        if let Some(&b) = idx.get(m) {
            for p in ps {
                directed.push((idx[p], b));
            }
        }
    }
    let bi: Vec<(usize, usize)> = bidirected
        .iter()
        .filter_map(|(a, b)| Some((*idx.get(a)?, *idx.get(b)?)))
        .collect();
    let graph = Dag::new(vertices_of(&nodes), directed, bi)?;

    let mut representative = BTreeMap::new();
    for v in 0..g.len() {
        for w in 0..nw {
            let m = merged_of(&mut cls, v, w);
            if let Some(&i) = idx.get(&m) {
                let pw_label = match &lay.fixed_in[v][w] {
                    Some(val) => val.render(g.label(v)),
                    None => node_label(g.label(v), &lay.worlds[w]),
                };
                representative.insert(pw_label, graph.label(i).to_string());
            }
        }
    }
    let bound_values = nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| Some((graph.label(i).to_string(), n.value.clone()?)))
        .collect();
    let term_nodes = conj_nodes.iter().map(|m| idx[m]).collect();

    Ok(MakeCg::Built(Box::new(CgResult {
        graph: CounterfactualGraph {
            graph,
            nodes,
            representative,
            bound_values,
        },
        conj: CfConjunction::new(conj),
        positions,
        term_nodes,
    })))
}

/// Whether the copies of `v` in worlds `w1` and `w2` are the same random
/// variable: every observed parent pair is one class or provably equal in
/// value. Latent parents are shared between worlds and need no check.
fn same_variable(lay: &Layout<'_>, cls: &mut Classes, v: usize, w1: usize, w2: usize) -> bool {
    for &p in lay.g.parents(v) {
        let a = parent_state(lay, cls, p, w1);
        let b = parent_state(lay, cls, p, w2);
        let same = match (&a, &b) {
            (ParentState::Class(r1, _), ParentState::Class(r2, _)) if r1 == r2 => true,
            _ => match (a.value(), b.value()) {
                (Some(x), Some(y)) => x.compare(y) == Agreement::Equal,
                _ => false,
            },
        };
        if !same {
            return false;
        }
    }
    true
}

enum ParentState {
    Fixed(ValueRef),
    Class(usize, Option<ValueRef>),
}

impl ParentState {
    fn value(&self) -> Option<&ValueRef> {
        match self {
            ParentState::Fixed(v) => Some(v),
            ParentState::Class(_, v) => v.as_ref(),
        }
    }
}

fn parent_state(lay: &Layout<'_>, cls: &mut Classes, p: usize, w: usize) -> ParentState {
    match &lay.fixed_in[p][w] {
        Some(val) => ParentState::Fixed(val.clone()),
        None => ParentState::Class(cls.root(p, w), cls.value(p, w)),
    }
}
