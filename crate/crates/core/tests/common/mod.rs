//! Generators and brute-force references shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use cfid_core::{CfConjunction, CfVariable, Dag, NodeSet, Vertex};
use rand::seq::SliceRandom;
use rand::Rng;

pub const LABELS: [&str; 8] = ["A", "B", "C", "D", "E", "F", "G", "H"];

/// Random semi-Markovian graph on `n` vertices. Directed edges follow a
/// shuffled order so labels carry no ordering information.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, p_edge: f64, max_bidirected: usize) -> Dag {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut directed = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p_edge) {
                directed.push((order[i], order[j]));
            }
        }
    }
    let mut bidirected = BTreeSet::new();
    if n >= 2 {
        let k = rng.gen_range(0..=max_bidirected);
        for _ in 0..k {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                bidirected.insert((a.min(b), a.max(b)));
            }
        }
    }
    let vertices = (0..n).map(|i| Vertex::observed(LABELS[i])).collect();
    Dag::new(vertices, directed, bidirected).expect("generated graphs are acyclic")
}

/// Random conjunction with at most `max_terms` terms spread over at most
/// `max_worlds` worlds, values in `0..levels`.
pub fn random_conjunction<R: Rng>(
    rng: &mut R,
    g: &Dag,
    max_terms: usize,
    max_worlds: usize,
    levels: u32,
) -> CfConjunction {
    let n = g.len();
    let mut worlds: Vec<Vec<(usize, u32)>> = vec![Vec::new()];
    for _ in 1..max_worlds {
        if rng.gen_bool(0.7) {
            let k = rng.gen_range(1..=n.min(2));
            let mut vars: Vec<usize> = (0..n).collect();
            vars.shuffle(rng);
            let mut w: Vec<(usize, u32)> = vars[..k].iter().map(|&v| (v, rng.gen_range(0..levels))).collect();
            w.sort_unstable();
            if !worlds.contains(&w) {
                worlds.push(w);
            }
        }
    }
    let terms = rng.gen_range(1..=max_terms);
    (0..terms)
        .map(|_| {
            let w = &worlds[rng.gen_range(0..worlds.len())];
            let v = rng.gen_range(0..n);
            let mut t = CfVariable::new(g.label(v), rng.gen_range(0..levels));
            for &(x, l) in w {
                t = t.under(g.label(x), l);
            }
            t
        })
        .collect()
}

/// The graph with every bidirected edge replaced by an explicit latent
/// parent. Returns child lists, the fixed flags, and the number of observed
/// vertices (latents come after them).
pub fn explicit(g: &Dag) -> (Vec<Vec<usize>>, Vec<bool>, usize) {
    let n = g.len();
    let mut children = vec![Vec::new(); n];
    let mut fixed: Vec<bool> = (0..n).map(|v| !g.is_observed(v)).collect();
    for (a, b) in g.directed_edges() {
        children[a].push(b);
    }
    for (a, b) in g.bidirected_edges() {
        children.push(vec![a, b]);
        fixed.push(false);
    }
    (children, fixed, n)
}

fn descendants(children: &[Vec<usize>], v: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([v]);
    let mut stack = vec![v];
    while let Some(u) = stack.pop() {
        for &c in &children[u] {
            if seen.insert(c) {
                stack.push(c);
            }
        }
    }
    seen
}

/// d-separation by enumerating every simple path of the explicit graph.
/// Paths never pass through fixed vertices.
pub fn brute_force_separated(g: &Dag, x: &NodeSet, y: &NodeSet, z: &NodeSet) -> bool {
    let (children, fixed, _) = explicit(g);
    let total = children.len();
    let mut parents = vec![Vec::new(); total];
    for (u, cs) in children.iter().enumerate() {
        for &c in cs {
            parents[c].push(u);
        }
    }
    let desc: Vec<BTreeSet<usize>> = (0..total).map(|v| descendants(&children, v)).collect();
    let edge_into = |a: usize, b: usize| children[a].contains(&b);

    fn walk(
        path: &mut Vec<usize>,
        target: &NodeSet,
        nbrs: &dyn Fn(usize) -> Vec<usize>,
        open: &dyn Fn(&[usize]) -> bool,
        fixed: &[bool],
    ) -> bool {
        let last = *path.last().expect("non-empty path");
        if path.len() > 1 && target.contains(&last) {
            return open(path);
        }
        for n in nbrs(last) {
            if path.contains(&n) || (fixed[n] && !target.contains(&n)) {
                continue;
            }
            path.push(n);
            if walk(path, target, nbrs, open, fixed) {
                return true;
            }
            path.pop();
        }
        false
    }

    let nbrs = |v: usize| -> Vec<usize> {
        let mut out = children[v].clone();
        out.extend(parents[v].iter().copied());
        out
    };
    let open = |path: &[usize]| -> bool {
        path.windows(3).all(|w| {
            let (a, m, b) = (w[0], w[1], w[2]);
            if edge_into(a, m) && edge_into(b, m) {
                desc[m].iter().any(|d| z.contains(d))
            } else {
                !z.contains(&m)
            }
        })
    };
    for &s in x {
        let mut path = vec![s];
        if walk(&mut path, y, &nbrs, &open, &fixed) {
            return false;
        }
    }
    true
}
