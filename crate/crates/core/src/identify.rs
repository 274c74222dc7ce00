//! Counterfactual identification (ID*, IDC*) and the interventional ID/IDC
//! algorithms used to reduce interventional terms to observational ones.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::cgraph::{make_cg, worlds_of, MakeCg};
use crate::counterfactual::{Agreement, CfConjunction, CfVariable, SumIndex, ValueRef};
use crate::error::{Error, Result};
use crate::formula::{canonicalize, Assignment, Functional, ProbTerm};
use crate::graph::{Dag, NodeSet};

/// Result of an identification attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Identification {
    Identified(Functional),
    Fail,
    /// The conditioning event has probability zero in every model.
    Undefined,
}

impl Identification {
    pub fn formula(&self) -> Option<&Functional> {
        match self {
            Identification::Identified(f) => Some(f),
            _ => None,
        }
    }
}

/// Distributions available to express the answer in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataLevel {
    /// All interventional distributions, written `P_*`.
    #[default]
    Interventions,
    /// The observational joint `P(v)` only.
    Observations,
    /// Both; observational expressions are preferred term by term.
    Both,
}

impl DataLevel {
    pub fn describe(self) -> &'static str {
        match self {
            DataLevel::Interventions => "P_*",
            DataLevel::Observations => "P(v)",
            DataLevel::Both => "{P_*, P(v)}",
        }
    }
}

impl std::str::FromStr for DataLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interventions" => Ok(DataLevel::Interventions),
            "observations" => Ok(DataLevel::Observations),
            "both" => Ok(DataLevel::Both),
            _ => Err(Error::parse(0, format!("unknown data level `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub identifiable: bool,
    pub undefined: bool,
    pub formula: Option<Functional>,
    pub query: CfConjunction,
    pub condition: Option<CfConjunction>,
    pub data: DataLevel,
}

/// Identifies `P(gamma)` in terms of interventional distributions.
pub fn id_star(g: &Dag, gamma: &CfConjunction) -> Result<Identification> {
    let mut s = Solver::new(g, gamma);
    Ok(match s.id_star(gamma, 0)? {
        Some(f) => Identification::Identified(canonicalize(&f)),
        None => Identification::Fail,
    })
}

/// Identifies `P(gamma | delta)` in terms of interventional distributions.
pub fn idc_star(g: &Dag, gamma: &CfConjunction, delta: &CfConjunction) -> Result<Identification> {
    let mut s = Solver::new(g, &(gamma.clone() + delta.clone()));
    s.idc_star(gamma, delta, 0)
}

/// Identifies `P_x(y)` from the observational distribution. `y` and `x` must
/// not share variables.
pub fn interventional_id(
    g: &Dag,
    y: &[Assignment],
    x: &BTreeMap<String, ValueRef>,
) -> Result<Option<Functional>> {
    let mut s = Solver::new(g, &CfConjunction::empty());
    Ok(s.interventional(y, x, &[])?.map(|f| canonicalize(&f)))
}

/// Identifies `P_x(y | z)` from the observational distribution.
pub fn interventional_idc(
    g: &Dag,
    y: &[Assignment],
    x: &BTreeMap<String, ValueRef>,
    z: &[Assignment],
) -> Result<Option<Functional>> {
    let mut s = Solver::new(g, &CfConjunction::empty());
    Ok(s.interventional(y, x, z)?.map(|f| canonicalize(&f)))
}

/// Runs ID* or IDC* and rewrites the answer for the requested data level.
pub fn identifiable(
    g: &Dag,
    gamma: &CfConjunction,
    delta: Option<&CfConjunction>,
    data: DataLevel,
) -> Result<QueryResult> {
    let delta = delta.filter(|d| !d.is_empty());
    let mut all = gamma.clone();
    if let Some(d) = delta {
        all = all + d.clone();
    }
    let mut s = Solver::new(g, &all);
    let outcome = match delta {
        Some(d) => s.idc_star(gamma, d, 0)?,
        None => match s.id_star(gamma, 0)? {
            Some(f) => Identification::Identified(canonicalize(&f)),
            None => Identification::Fail,
        },
    };
    let outcome = match (outcome, data) {
        (Identification::Identified(f), DataLevel::Observations | DataLevel::Both) => {
            let keep_failures = data == DataLevel::Both;
            let rewritten = f.try_map_terms(&mut |t: &ProbTerm| -> Result<Functional, Abort> {
                if t.subscript.is_empty() {
                    return Ok(Functional::Term(t.clone()));
                }
                match s.interventional(&t.outcomes, &t.subscript, &t.conditioning) {
                    Ok(Some(r)) => Ok(r),
                    Ok(None) if keep_failures => Ok(Functional::Term(t.clone())),
                    Ok(None) => Err(Abort::Fail),
                    Err(e) => Err(Abort::Error(e)),
                }
            });
            match rewritten {
                Ok(f) => Identification::Identified(canonicalize(&f)),
                Err(Abort::Fail) => Identification::Fail,
                Err(Abort::Error(e)) => return Err(e),
            }
        }
        (other, _) => other,
    };
    Ok(match outcome {
        Identification::Identified(f) => QueryResult {
            identifiable: true,
            undefined: false,
            formula: Some(f),
            query: gamma.clone(),
            condition: delta.cloned(),
            data,
        },
        other => QueryResult {
            identifiable: false,
            undefined: other == Identification::Undefined,
            formula: None,
            query: gamma.clone(),
            condition: delta.cloned(),
            data,
        },
    })
}

enum Abort {
    Fail,
    Error(Error),
}

struct Solver<'a> {
    g: &'a Dag,
    next_index: u32,
    depth_limit: usize,
}

impl<'a> Solver<'a> {
    fn new(g: &'a Dag, query: &CfConjunction) -> Self {
        let worlds = worlds_of(query).len();
        Solver {
            g,
            next_index: 1,
            depth_limit: 8 * (g.len() + 1) * (worlds + query.len() + 2),
        }
    }

    fn fresh(&mut self, var: &str) -> SumIndex {
        let id = self.next_index;
        self.next_index += 1;
        SumIndex {
            id,
            var: var.to_string(),
        }
    }

    fn guard(&self, depth: usize) -> Result<()> {
        if depth > self.depth_limit {
            Err(Error::RecursionLimit(depth))
        } else {
            Ok(())
        }
    }

    /// `None` stands for FAIL.
    fn id_star(&mut self, gamma: &CfConjunction, depth: usize) -> Result<Option<Functional>> {
        self.guard(depth)?;
        let g = self.g;
        if gamma.is_empty() {
            return Ok(Some(Functional::one()));
        }
        for t in gamma {
            if let (Some(forced), Some(obs)) = (t.self_intervention(), &t.observed) {
                match forced.compare(obs) {
                    Agreement::Different => return Ok(Some(Functional::zero())),
                    Agreement::Unknown => return Ok(None),
                    Agreement::Equal => {}
                }
            }
        }
        let reduced = gamma.drop_tautologies();
        if reduced.len() != gamma.len() {
            return self.id_star(&reduced, depth + 1);
        }
        let pruned = prune_subscripts(g, gamma)?;
        if pruned != *gamma {
            return self.id_star(&pruned, depth + 1);
        }

        let built = match make_cg(g, gamma)? {
            MakeCg::Inconsistent => return Ok(Some(Functional::zero())),
            MakeCg::Undecidable => return Ok(None),
            MakeCg::Built(r) => r,
        };
        let cg = &built.graph.graph;
        let nodes = &built.graph.nodes;
        let mut value: Vec<Option<ValueRef>> = nodes.iter().map(|n| n.value.clone()).collect();
        let comps = cg.c_components();
        let unvalued: Vec<usize> = cg.observed().filter(|&n| value[n].is_none()).collect();

        if comps.len() > 1 || !unvalued.is_empty() {
            let mut indices = Vec::new();
            for &n in &unvalued {
                let idx = self.fresh(&nodes[n].base);
                value[n] = Some(ValueRef::Index(idx.clone()));
                indices.push(idx);
            }
            let order = reverse_topological(cg);
            let mut comp_order: Vec<usize> = Vec::new();
            for &n in &order {
                if let Some(b) = comps.block_of(n) {
                    if !comp_order.contains(&b) {
                        comp_order.push(b);
                    }
                }
            }
            let mut factors = Vec::new();
            for b in comp_order {
                let block = &comps.blocks()[b];
                // Query nodes keep their query order; summed nodes follow.
                let mut members: Vec<usize> = order.iter().copied().filter(|n| block.contains(n)).collect();
                members.sort_by_key(|n| built.term_nodes.iter().position(|t| t == n).unwrap_or(usize::MAX));
                let mut terms = Vec::new();
                for &n in &members {
                    let mut sub = nodes[n].world.clone();
                    let an = cg.ancestors(&NodeSet::from([n]))?;
                    for q in an.difference(block) {
                        let val = value[*q].clone().expect("every node carries a value here");
                        match sub.get(&nodes[*q].base) {
                            None => {
                                sub.insert(nodes[*q].base.clone(), val);
                            }
                            Some(v) if v.compare(&val) == Agreement::Equal => {}
                            Some(_) => return Ok(None),
                        }
                    }
                    terms.push(CfVariable {
                        name: nodes[n].base.clone(),
                        observed: value[n].clone(),
                        interventions: sub,
                    });
                }
                match self.id_star(&CfConjunction::new(terms), depth + 1)? {
                    Some(f) => factors.push(f),
                    None => return Ok(None),
                }
            }
            let body = Functional::product(factors);
            return Ok(Some(if indices.is_empty() {
                body
            } else {
                Functional::sum(indices, body)
            }));
        }

        // One component, every node valued.
        let reduced_terms = prune_subscripts(g, &built.conj)?.terms;
        let mut ev: BTreeMap<&str, Vec<&ValueRef>> = BTreeMap::new();
        for t in &reduced_terms {
            if let Some(v) = &t.observed {
                ev.entry(&t.name).or_default().push(v);
            }
            for (k, v) in &t.interventions {
                ev.entry(k).or_default().push(v);
            }
        }
        let mut subscript: BTreeMap<String, ValueRef> = BTreeMap::new();
        for t in &reduced_terms {
            for (k, v) in &t.interventions {
                if ev[k.as_str()].iter().any(|e| e.compare(v) != Agreement::Equal) {
                    return Ok(None);
                }
                subscript.insert(k.clone(), v.clone());
            }
        }
        // A variable both fixed and observed at the same value is kept as an
        // outcome: by composition the other terms read the same value from it.
        let mut outcomes: Vec<Assignment> = Vec::new();
        for t in &reduced_terms {
            let val = t.val()?.clone();
            subscript.remove(&t.name);
            match outcomes.iter().find(|(k, _)| *k == t.name) {
                Some((_, v)) if v.compare(&val) == Agreement::Equal => {}
                Some(_) => return Ok(None),
                None => outcomes.push((t.name.clone(), val)),
            }
        }
        Ok(Some(Functional::term(ProbTerm::new(outcomes).under(subscript))))
    }

    fn idc_star(
        &mut self,
        gamma: &CfConjunction,
        delta: &CfConjunction,
        depth: usize,
    ) -> Result<Identification> {
        self.guard(depth)?;
        let g = self.g;
        if delta.is_empty() {
            return Ok(match self.id_star(gamma, depth + 1)? {
                Some(f) => Identification::Identified(canonicalize(&f)),
                None => Identification::Fail,
            });
        }
        if let Some(f) = self.id_star(delta, depth + 1)? {
            if canonicalize(&f).is_zero() {
                return Ok(Identification::Undefined);
            }
        }
        for t in gamma {
            if let (Some(forced), Some(obs)) = (t.self_intervention(), &t.observed) {
                match forced.compare(obs) {
                    Agreement::Different => return Ok(Identification::Identified(Functional::zero())),
                    Agreement::Unknown => return Ok(Identification::Fail),
                    Agreement::Equal => {}
                }
            }
        }
        let gamma = prune_subscripts(g, &gamma.drop_tautologies())?;
        let delta = prune_subscripts(g, &delta.drop_tautologies())?;
        if gamma.is_empty() {
            return Ok(Identification::Identified(Functional::one()));
        }
        if delta.is_empty() {
            return self.idc_star(&gamma, &delta, depth + 1);
        }

        let joint = gamma.clone() + delta.clone();
        match make_cg(g, &joint)? {
            MakeCg::Inconsistent => return Ok(Identification::Identified(Functional::zero())),
            MakeCg::Undecidable => return Ok(Identification::Fail),
            MakeCg::Built(_) => {}
        }

        // Merges justified by the values of gamma do not hold on the event
        // delta alone, so the graph for the independence test is built with
        // the gamma values masked by fresh indices. The masks never reach a
        // formula, so their index numbers are handed out again afterwards.
        let first_index = self.next_index;
        let masked: CfConjunction = gamma
            .iter()
            .map(|t| CfVariable {
                observed: Some(ValueRef::Index(self.fresh(&t.name))),
                ..t.clone()
            })
            .collect();
        let masked_cg = make_cg(g, &(masked + delta.clone()))?;
        self.next_index = first_index;
        if let MakeCg::Built(built) = masked_cg {
            let cg = &built.graph.graph;
            let (gpos, dpos) = built.positions.split_at(gamma.len());
            let mut delta_idx: Vec<usize> = Vec::new();
            for &p in dpos {
                if !delta_idx.contains(&p) {
                    delta_idx.push(p);
                }
            }
            // Relabelled gamma terms carry their original values again.
            let mut gamma_terms: Vec<CfVariable> = Vec::new();
            let mut gamma_nodes: Vec<usize> = Vec::new();
            for (i, &p) in gpos.iter().enumerate() {
                let t = CfVariable {
                    observed: gamma.terms[i].observed.clone(),
                    ..built.conj.terms[p].clone()
                };
                if !gamma_terms.contains(&t) {
                    gamma_terms.push(t);
                    gamma_nodes.push(built.term_nodes[p]);
                }
            }
            let gamma_idx: Vec<usize> = (0..gamma_terms.len()).collect();
            let term = |i: usize| gamma_terms[i].clone();
            let dterm = |i: usize| built.conj.terms[i].clone();
            let node = |i: usize| gamma_nodes[i];
            let dnode = |i: usize| built.term_nodes[i];
            for &d in &delta_idx {
                let nd = dnode(d);
                let others: NodeSet = delta_idx.iter().filter(|&&o| o != d).map(|&o| dnode(o)).collect();
                if others.contains(&nd) {
                    continue;
                }
                let targets: NodeSet = gamma_idx
                    .iter()
                    .map(|&i| node(i))
                    .filter(|n| !others.contains(n))
                    .collect();
                if targets.contains(&nd) {
                    continue;
                }
                let cut = cg.cut_outgoing(&NodeSet::from([nd]));
                if !cut.d_separated(&NodeSet::from([nd]), &targets, &others)? {
                    continue;
                }
                let moved = dterm(d);
                let val = moved.val()?.clone();
                let mut desc = cg.descendants(&NodeSet::from([nd]))?;
                desc.remove(&nd);
                // Every remaining descendant, conditioning terms included, now
                // lives in the world where the moved variable is fixed.
                let mut conflict = false;
                let mut lift = |mut t: CfVariable, n: usize| {
                    if desc.contains(&n) {
                        match t.interventions.get(&moved.name) {
                            Some(v) if v.compare(&val) != Agreement::Equal => conflict = true,
                            _ => {
                                t.interventions.insert(moved.name.clone(), val.clone());
                            }
                        }
                    }
                    t
                };
                let new_gamma: Vec<CfVariable> = gamma_idx.iter().map(|&i| lift(term(i), node(i))).collect();
                let new_delta: Vec<CfVariable> =
                    delta_idx.iter().filter(|&&o| o != d).map(|&o| lift(dterm(o), dnode(o))).collect();
                if conflict {
                    continue;
                }
                return self.idc_star(
                    &CfConjunction::new(new_gamma),
                    &CfConjunction::new(new_delta),
                    depth + 1,
                );
            }
        }

        let num = match self.id_star(&joint, depth + 1)? {
            Some(f) => f,
            None => return Ok(Identification::Fail),
        };
        // The denominator uses the conjunctions from before the merge: the
        // relabelling of delta may depend on the values fixed by gamma.
        let den = match self.id_star(&delta, depth + 1)? {
            Some(f) => f,
            None => {
                let mut indices = Vec::new();
                let summed: CfConjunction = gamma
                    .iter()
                    .map(|t| {
                        let idx = self.fresh(&t.name);
                        indices.push(idx.clone());
                        CfVariable {
                            observed: Some(ValueRef::Index(idx)),
                            ..t.clone()
                        }
                    })
                    .collect();
                match self.id_star(&(summed + delta.clone()), depth + 1)? {
                    Some(f) => Functional::sum(indices, f),
                    None => return Ok(Identification::Fail),
                }
            }
        };
        Ok(Identification::Identified(canonicalize(&Functional::fraction(num, den))))
    }

    /// `P_x(y | z)` from `P(v)`; `None` when not identifiable.
    fn interventional(
        &mut self,
        y: &[Assignment],
        x: &BTreeMap<String, ValueRef>,
        z: &[Assignment],
    ) -> Result<Option<Functional>> {
        let g = self.g;
        let mut x = x.clone();
        let mut env: HashMap<String, ValueRef> = HashMap::new();
        for (k, v) in x.iter() {
            g.require(k)?;
            env.insert(k.clone(), v.clone());
        }
        // Outcomes forced by the intervention contribute a factor of 0 or 1.
        let mut outcomes = Vec::new();
        for (k, v) in y {
            g.require(k)?;
            match x.get(k) {
                Some(forced) => match forced.compare(v) {
                    Agreement::Equal => {}
                    Agreement::Different => return Ok(Some(Functional::zero())),
                    Agreement::Unknown => return Ok(None),
                },
                None => {
                    if env.insert(k.clone(), v.clone()).is_some_and(|old| old != *v) {
                        return Ok(None);
                    }
                    if !outcomes.contains(k) {
                        outcomes.push(k.clone());
                    }
                }
            }
        }
        let mut cond: Vec<String> = Vec::new();
        for (k, v) in z {
            g.require(k)?;
            if x.contains_key(k) || outcomes.contains(k) {
                return Ok(None);
            }
            env.insert(k.clone(), v.clone());
            cond.push(k.clone());
        }
        if outcomes.is_empty() {
            return Ok(Some(Functional::one()));
        }
        let order: Vec<String> = g
            .topological_order()
            .into_iter()
            .map(|v| g.label(v).to_string())
            .collect();

        // Rule 2: move conditioning variables into the intervention while
        // the outcome is separated from them once their outgoing edges go.
        'moved: loop {
            for (i, c) in cond.iter().enumerate() {
                let xs: NodeSet = x.keys().map(|k| g.require(k)).collect::<Result<_>>()?;
                let ci = g.require(c)?;
                let cut = g.cut_incoming(&xs).cut_outgoing(&NodeSet::from([ci]));
                let ys: NodeSet = outcomes.iter().map(|k| g.require(k)).collect::<Result<_>>()?;
                let rest: NodeSet = cond
                    .iter()
                    .filter(|o| *o != c)
                    .map(|k| g.require(k))
                    .collect::<Result<_>>()?;
                if cut.d_separated(&ys, &NodeSet::from([ci]), &rest)? {
                    x.insert(c.clone(), env[c].clone());
                    cond.remove(i);
                    continue 'moved;
                }
            }
            break;
        }

        let all_labels: BTreeSet<String> = order.iter().cloned().collect();
        let p = Rc::new(Dist::Observed);
        let ys: BTreeSet<String> = outcomes.iter().chain(cond.iter()).cloned().collect();
        let xs: BTreeSet<String> = x.keys().cloned().collect();
        let env: Env = env.into_iter().collect();
        let joint = match self.id(&ys, &xs, &env, &p, g, &all_labels, &order)? {
            Some(f) => f,
            None => return Ok(None),
        };
        if cond.is_empty() {
            return Ok(Some(joint));
        }
        let zs: BTreeSet<String> = cond.iter().cloned().collect();
        let marginal = match self.id(&zs, &xs, &env, &p, g, &all_labels, &order)? {
            Some(f) => f,
            None => return Ok(None),
        };
        Ok(Some(Functional::fraction(joint, marginal)))
    }

    /// The ID algorithm for `P_x(y)` over the subgraph of `g` on `v`.
    #[allow(clippy::too_many_arguments)]
    fn id(
        &mut self,
        y: &BTreeSet<String>,
        x: &BTreeSet<String>,
        env: &Env,
        p: &Rc<Dist>,
        g: &Dag,
        v: &BTreeSet<String>,
        order: &[String],
    ) -> Result<Option<Functional>> {
        let (sub, _) = g.induced(&label_set(g, v)?);
        let local: Vec<String> = order.iter().filter(|l| v.contains(*l)).cloned().collect();
        let assign = |vars: &mut dyn Iterator<Item = &String>, env: &Env| -> Vec<Assignment> {
            vars.map(|k| (k.clone(), env[k].clone())).collect()
        };

        // 1
        if x.is_empty() {
            let ys = assign(&mut local.iter().filter(|l| y.contains(*l)), env);
            return Ok(Some(self.prob(p, &ys, &[], order)));
        }
        // 2
        let an = labels(&sub, &sub.ancestors(&label_set(&sub, y)?)?);
        if an != *v {
            let x2: BTreeSet<String> = x.intersection(&an).cloned().collect();
            return self.id(y, &x2, env, p, g, &an, order);
        }
        // 3
        let xs = label_set(&sub, x)?;
        let an_cut = labels(&sub, &sub.cut_incoming(&xs).ancestors(&label_set(&sub, y)?)?);
        let w: BTreeSet<String> = v
            .iter()
            .filter(|l| !x.contains(*l) && !an_cut.contains(*l))
            .cloned()
            .collect();
        if !w.is_empty() {
            let mut env2 = env.clone();
            for l in &w {
                env2.insert(l.clone(), ValueRef::Level(0));
            }
            let x2: BTreeSet<String> = x.union(&w).cloned().collect();
            return self.id(y, &x2, &env2, p, g, v, order);
        }
        // 4
        let rest: BTreeSet<String> = v.difference(x).cloned().collect();
        let (without_x, _) = sub.induced(&label_set(&sub, &rest)?);
        let comps: Vec<BTreeSet<String>> = without_x
            .c_components()
            .blocks()
            .iter()
            .map(|b| labels(&without_x, b))
            .collect();
        if comps.len() > 1 {
            let mut env2 = env.clone();
            let mut indices = Vec::new();
            for l in local.iter().filter(|l| !y.contains(*l) && !x.contains(*l)) {
                let idx = self.fresh(l);
                env2.insert(l.clone(), ValueRef::Index(idx.clone()));
                indices.push(idx);
            }
            let mut factors = Vec::new();
            for s in &comps {
                let others: BTreeSet<String> = v.difference(s).cloned().collect();
                match self.id(s, &others, &env2, p, g, v, order)? {
                    Some(f) => factors.push(f),
                    None => return Ok(None),
                }
            }
            return Ok(Some(Functional::sum(indices, Functional::product(factors))));
        }
        let s = comps.into_iter().next().unwrap_or_default();
        // 5
        let full: Vec<BTreeSet<String>> = sub
            .c_components()
            .blocks()
            .iter()
            .map(|b| labels(&sub, b))
            .collect();
        if full.len() == 1 {
            return Ok(None);
        }
        // 6
        if full.contains(&s) {
            let mut env2 = env.clone();
            let mut indices = Vec::new();
            for l in local.iter().filter(|l| s.contains(*l) && !y.contains(*l)) {
                let idx = self.fresh(l);
                env2.insert(l.clone(), ValueRef::Index(idx.clone()));
                indices.push(idx);
            }
            let mut factors = Vec::new();
            for (i, l) in local.iter().enumerate() {
                if !s.contains(l) {
                    continue;
                }
                let given = assign(&mut local[..i].iter(), &env2);
                factors.push(self.prob(p, &[(l.clone(), env2[l].clone())], &given, order));
            }
            return Ok(Some(Functional::sum(indices, Functional::product(factors))));
        }
        // 7
        let sp = full
            .into_iter()
            .find(|b| s.is_subset(b))
            .expect("the component of G\\X lies inside one component of G");
        let context: BTreeMap<String, ValueRef> = v
            .difference(&sp)
            .map(|l| (l.clone(), env[l].clone()))
            .collect();
        let p2 = Rc::new(Dist::Factor {
            inner: p.clone(),
            order: local.clone(),
            keep: sp.clone(),
            context,
        });
        let x2: BTreeSet<String> = x.intersection(&sp).cloned().collect();
        self.id(y, &x2, env, &p2, g, &sp, order)
    }

    /// `P(a | b)` under the distribution `p`.
    fn prob(&mut self, p: &Dist, a: &[Assignment], b: &[Assignment], order: &[String]) -> Functional {
        if a.is_empty() {
            return Functional::one();
        }
        match p {
            Dist::Observed => Functional::term(ProbTerm::new(a.to_vec()).given(b.to_vec())),
            Dist::Factor {
                inner,
                order: local,
                keep,
                context,
            } => {
                let num = self.factor_marginal(inner, local, keep, context, a.iter().chain(b).cloned().collect(), order);
                if b.is_empty() {
                    return num;
                }
                let den = self.factor_marginal(inner, local, keep, context, b.to_vec(), order);
                Functional::fraction(num, den)
            }
        }
    }

    /// Marginal of the product of conditionals over `keep` at `fixed`.
    fn factor_marginal(
        &mut self,
        inner: &Dist,
        local: &[String],
        keep: &BTreeSet<String>,
        context: &BTreeMap<String, ValueRef>,
        fixed: Vec<Assignment>,
        order: &[String],
    ) -> Functional {
        let mut vals: HashMap<String, ValueRef> = context.clone().into_iter().collect();
        vals.extend(fixed.iter().cloned());
        let mut indices = Vec::new();
        for l in local.iter().filter(|l| keep.contains(*l)) {
            if !vals.contains_key(l) {
                let idx = self.fresh(l);
                vals.insert(l.clone(), ValueRef::Index(idx.clone()));
                indices.push(idx);
            }
        }
        let mut factors = Vec::new();
        for (i, l) in local.iter().enumerate() {
            if !keep.contains(l) {
                continue;
            }
            let given: Vec<Assignment> = local[..i].iter().map(|k| (k.clone(), vals[k].clone())).collect();
            factors.push(self.prob(inner, &[(l.clone(), vals[l].clone())], &given, order));
        }
        Functional::sum(indices, Functional::product(factors))
    }
}

type Env = HashMap<String, ValueRef>;

/// A distribution reached during the ID recursion.
enum Dist {
    /// The observational joint.
    Observed,
    /// Product of the conditionals `inner(v_i | predecessors)` for `v_i` in
    /// `keep`, with predecessors outside `keep` held at `context`.
    Factor {
        inner: Rc<Dist>,
        order: Vec<String>,
        keep: BTreeSet<String>,
        context: BTreeMap<String, ValueRef>,
    },
}

/// Drops interventions on variables that cannot affect the term, that is,
/// that are not ancestors of it once the intervened variables lose their
/// incoming edges.
fn prune_subscripts(g: &Dag, c: &CfConjunction) -> Result<CfConjunction> {
    let mut out = Vec::with_capacity(c.len());
    for t in c {
        let keys: NodeSet = t
            .interventions
            .keys()
            .map(|k| g.require(k))
            .collect::<Result<_>>()?;
        let an = g.cut_incoming(&keys).ancestors(&NodeSet::from([g.require(&t.name)?]))?;
        let mut t = t.clone();
        t.interventions
            .retain(|k, _| g.index_of(k).is_some_and(|i| an.contains(&i)));
        out.push(t);
    }
    Ok(CfConjunction::new(out))
}

fn label_set(g: &Dag, labels: &BTreeSet<String>) -> Result<NodeSet> {
    labels.iter().map(|l| g.require(l)).collect()
}

fn labels(g: &Dag, set: &NodeSet) -> BTreeSet<String> {
    g.labels_of(set)
}

/// Repeatedly removes a sink, smallest label first.
fn reverse_topological(g: &Dag) -> Vec<usize> {
    let mut outdeg: Vec<usize> = (0..g.len()).map(|v| g.children(v).len()).collect();
    let mut done = vec![false; g.len()];
    let mut out = Vec::with_capacity(g.len());
    for _ in 0..g.len() {
        let next = (0..g.len())
            .filter(|&v| !done[v] && outdeg[v] == 0)
            .min_by(|&a, &b| g.label(a).cmp(g.label(b)))
            .expect("acyclic graphs always have a sink");
        done[next] = true;
        for &p in g.parents(next) {
            outdeg[p] -= 1;
        }
        out.push(next);
    }
    out
}
