//! Finite structural causal models evaluated by exhaustive enumeration of
//! latent configurations.
//!
//! Mechanism tables are stored row-major over the parent tuple in the order
//! the parents are listed, with the last parent varying fastest. A variable
//! with parents `[A, B]` of domains 2 and 3 therefore reads its value for
//! `A = a, B = b` from index `a * 3 + b`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{CfConjunction, SumIndex, ValueRef};
use crate::error::{Error, Result};
use crate::formula::{Functional, ProbTerm};
use crate::graph::{Dag, Vertex, VertexKind};
use crate::scalar::Probability;

/// Largest number of joint latent configurations the oracle enumerates.
pub const CONFIGURATION_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub domain: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent<T> {
    pub name: String,
    pub domain: u32,
    pub probs: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scm<T> {
    pub variables: Vec<Variable>,
    /// Observed and latent parents of every variable.
    pub parents: BTreeMap<String, Vec<String>>,
    pub mechanisms: BTreeMap<String, Vec<u32>>,
    pub latents: Vec<Latent<T>>,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Observed(usize),
    Latent(usize),
}

/// Index-based form of a validated model.
#[derive(Debug, Clone)]
struct Compiled {
    order: Vec<usize>,
    sources: Vec<Vec<(Source, u32)>>,
    tables: Vec<Vec<u32>>,
    index: HashMap<String, usize>,
}

/// A joint distribution over the observed variables, row-major with the
/// last variable fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable<T> {
    pub variables: Vec<String>,
    pub domains: Vec<u32>,
    pub probs: Vec<T>,
}

impl<T: Probability> JointTable<T> {
    /// Probability that every listed variable takes its level.
    pub fn probability(&self, event: &[(String, u32)]) -> Result<T> {
        let mut fixed: Vec<Option<u32>> = vec![None; self.variables.len()];
        for (name, level) in event {
            let i = self
                .variables
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| Error::UnknownVertex(name.clone()))?;
            match fixed[i] {
                Some(old) if old != *level => return Ok(T::zero()),
                _ => fixed[i] = Some(*level),
            }
        }
        let mut total = T::zero();
        let mut row = vec![0u32; self.variables.len()];
        for p in &self.probs {
            if fixed.iter().zip(&row).all(|(f, r)| f.is_none_or(|f| f == *r)) {
                total = total + p.clone();
            }
            advance(&mut row, &self.domains);
        }
        Ok(total)
    }
}

/// Odometer step over `domains`, last position fastest.
fn advance(row: &mut [u32], domains: &[u32]) -> bool {
    for i in (0..row.len()).rev() {
        row[i] += 1;
        if row[i] < domains[i] {
            return true;
        }
        row[i] = 0;
    }
    false
}

impl<T: Probability> Scm<T> {
    /// Checks every invariant: unique names, total tables, values inside
    /// domains, normalised latent distributions and an acyclic diagram.
    pub fn validate(&self) -> Result<()> {
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<Compiled> {
        let mut index = HashMap::new();
        for (i, v) in self.variables.iter().enumerate() {
            if v.domain == 0 {
                return Err(Error::InvalidModel(format!("`{}` has an empty domain", v.name)));
            }
            if index.insert(v.name.clone(), i).is_some() {
                return Err(Error::InvalidModel(format!("duplicate variable `{}`", v.name)));
            }
        }
        let mut latent_index = HashMap::new();
        for (i, l) in self.latents.iter().enumerate() {
            if index.contains_key(&l.name) || latent_index.insert(l.name.clone(), i).is_some() {
                return Err(Error::InvalidModel(format!("duplicate name `{}`", l.name)));
            }
            if l.probs.len() != l.domain as usize || l.domain == 0 {
                return Err(Error::InvalidModel(format!("`{}` needs {} probabilities", l.name, l.domain)));
            }
            let mut sum = T::zero();
            for p in &l.probs {
                if *p < T::zero() {
                    return Err(Error::InvalidModel(format!("`{}` has a negative probability", l.name)));
                }
                sum = sum + p.clone();
            }
            if sum.abs_diff(&T::one()).to_f64() > 1e-12 {
                return Err(Error::InvalidModel(format!("`{}` does not sum to one", l.name)));
            }
        }
        let mut sources = Vec::with_capacity(self.variables.len());
        let mut tables = Vec::with_capacity(self.variables.len());
        for v in &self.variables {
            let ps = self.parents.get(&v.name).cloned().unwrap_or_default();
            let mut src = Vec::with_capacity(ps.len());
            let mut rows: u128 = 1;
            for p in &ps {
                let s = if let Some(&i) = index.get(p) {
                    (Source::Observed(i), self.variables[i].domain)
                } else if let Some(&i) = latent_index.get(p) {
                    (Source::Latent(i), self.latents[i].domain)
                } else {
                    return Err(Error::UnknownVertex(p.clone()));
                };
                rows = rows.saturating_mul(u128::from(s.1));
                src.push(s);
            }
            let table = self
                .mechanisms
                .get(&v.name)
                .ok_or_else(|| Error::InvalidModel(format!("`{}` has no mechanism", v.name)))?;
            if table.len() as u128 != rows {
                return Err(Error::InvalidModel(format!(
                    "mechanism of `{}` has {} rows, expected {rows}",
                    v.name,
                    table.len()
                )));
            }
            if table.iter().any(|&x| x >= v.domain) {
                return Err(Error::InvalidModel(format!("mechanism of `{}` leaves its domain", v.name)));
            }
            sources.push(src);
            tables.push(table.clone());
        }
        for name in self.parents.keys().chain(self.mechanisms.keys()) {
            if !index.contains_key(name) {
                return Err(Error::UnknownVertex(name.clone()));
            }
        }
        let order = self.induced_diagram_with(&sources)?.topological_order();
        Ok(Compiled {
            order,
            sources,
            tables,
            index,
        })
    }

    /// Observed parents become directed edges; every pair of observed
    /// children of one latent becomes a bidirected edge.
    pub fn induced_diagram(&self) -> Result<Dag> {
        self.validate()?;
        let c = self.compile()?;
        self.induced_diagram_with(&c.sources)
    }

    fn induced_diagram_with(&self, sources: &[Vec<(Source, u32)>]) -> Result<Dag> {
        let vertices = self.variables.iter().map(|v| Vertex::observed(&v.name)).collect();
        let mut directed = Vec::new();
        let mut children: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (v, src) in sources.iter().enumerate() {
            for (s, _) in src {
                match s {
                    Source::Observed(p) => directed.push((*p, v)),
                    Source::Latent(l) => {
                        children.entry(*l).or_default().insert(v);
                    }
                }
            }
        }
        let mut bidirected = Vec::new();
        for kids in children.values() {
            let kids: Vec<usize> = kids.iter().copied().collect();
            for (i, &a) in kids.iter().enumerate() {
                for &b in &kids[i + 1..] {
                    bidirected.push((a, b));
                }
            }
        }
        Dag::new(vertices, directed, bidirected)
    }

    fn configurations(&self) -> Result<u128> {
        let mut total: u128 = 1;
        for l in &self.latents {
            total = total.saturating_mul(u128::from(l.domain));
        }
        if total > CONFIGURATION_LIMIT {
            return Err(Error::ExplicitResourceLimit {
                configurations: total,
                limit: CONFIGURATION_LIMIT,
            });
        }
        Ok(total)
    }

    /// Calls `f` with every joint latent configuration and its probability.
    fn for_each_latent(&self, mut f: impl FnMut(&[u32], T)) -> Result<()> {
        self.configurations()?;
        let domains: Vec<u32> = self.latents.iter().map(|l| l.domain).collect();
        let mut u = vec![0u32; domains.len()];
        loop {
            let mut p = T::one();
            for (l, &x) in self.latents.iter().zip(&u) {
                p = p * l.probs[x as usize].clone();
            }
            f(&u, p);
            if !advance(&mut u, &domains) {
                return Ok(());
            }
        }
    }

    fn level_of(&self, c: &Compiled, name: &str, v: &ValueRef) -> Result<(usize, u32)> {
        let i = *c
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))?;
        match v {
            ValueRef::Level(l) => Ok((i, *l)),
            ValueRef::Index(idx) => Err(Error::SymbolicValue(format!("{}#{}", idx.var, idx.id))),
        }
    }

    fn regime(&self, c: &Compiled, x: &BTreeMap<String, ValueRef>) -> Result<Vec<Option<u32>>> {
        let mut out = vec![None; self.variables.len()];
        for (k, v) in x {
            let (i, l) = self.level_of(c, k, v)?;
            if l >= self.variables[i].domain {
                return Err(Error::InvalidModel(format!("do({k}={l}) is outside the domain")));
            }
            out[i] = Some(l);
        }
        Ok(out)
    }

    /// Probability of `gamma`, or of `gamma` given `delta` when `delta` is
    /// non-empty.
    pub fn cf_probability(&self, gamma: &CfConjunction, delta: Option<&CfConjunction>) -> Result<T> {
        let c = self.compile()?;
        let delta = delta.filter(|d| !d.is_empty());
        let mut worlds: Vec<Vec<Option<u32>>> = Vec::new();
        let mut events = |conj: &CfConjunction| -> Result<Vec<(usize, usize, u32)>> {
            let mut out = Vec::new();
            for t in conj {
                let r = self.regime(&c, &t.interventions)?;
                let w = match worlds.iter().position(|x| *x == r) {
                    Some(w) => w,
                    None => {
                        worlds.push(r);
                        worlds.len() - 1
                    }
                };
                let (i, l) = self.level_of(&c, &t.name, t.val()?)?;
                out.push((w, i, l));
            }
            Ok(out)
        };
        let g_events = events(gamma)?;
        let d_events = match delta {
            Some(d) => events(d)?,
            None => Vec::new(),
        };
        let mut joint = T::zero();
        let mut cond = T::zero();
        let mut sol = vec![vec![0u32; self.variables.len()]; worlds.len()];
        self.for_each_latent(|u, p| {
            for (w, regime) in worlds.iter().enumerate() {
                solve(&c, u, regime, &mut sol[w]);
            }
            let holds = |ev: &[(usize, usize, u32)]| ev.iter().all(|&(w, i, l)| sol[w][i] == l);
            if holds(&d_events) {
                if holds(&g_events) {
                    joint = joint.clone() + p.clone();
                }
                cond = cond.clone() + p;
            }
        })?;
        if delta.is_none() {
            return Ok(joint);
        }
        if cond.is_zero() {
            return Err(Error::ZeroConditioningEvent);
        }
        Ok(joint / cond)
    }

    /// The joint distribution of the observed variables under `do(x)`.
    pub fn interventional_table(&self, x: &BTreeMap<String, ValueRef>) -> Result<JointTable<T>> {
        let c = self.compile()?;
        let regime = self.regime(&c, x)?;
        let domains: Vec<u32> = self.variables.iter().map(|v| v.domain).collect();
        let size: usize = domains.iter().map(|&d| d as usize).product();
        let mut probs = vec![T::zero(); size];
        let mut sol = vec![0u32; domains.len()];
        self.for_each_latent(|u, p| {
            solve(&c, u, &regime, &mut sol);
            let mut at = 0usize;
            for (i, &d) in domains.iter().enumerate() {
                at = at * d as usize + sol[i] as usize;
            }
            probs[at] = probs[at].clone() + p;
        })?;
        Ok(JointTable {
            variables: self.variables.iter().map(|v| v.name.clone()).collect(),
            domains,
            probs,
        })
    }

    /// Numeric value of a formula, reading each term from the matching
    /// interventional distribution.
    pub fn evaluate_functional(&self, f: &Functional) -> Result<T> {
        let mut ev = Evaluator {
            scm: self,
            tables: HashMap::new(),
            env: HashMap::new(),
        };
        ev.eval(f)
    }

    fn domain_of(&self, name: &str) -> Result<u32> {
        self.variables
            .iter()
            .find(|v| v.name == name)
            .map(|v| v.domain)
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }
}

fn solve(c: &Compiled, u: &[u32], regime: &[Option<u32>], out: &mut [u32]) {
    for &v in &c.order {
        out[v] = match regime[v] {
            Some(l) => l,
            None => {
                let mut row = 0usize;
                for &(s, d) in &c.sources[v] {
                    let x = match s {
                        Source::Observed(p) => out[p],
                        Source::Latent(l) => u[l],
                    };
                    row = row * d as usize + x as usize;
                }
                c.tables[v][row]
            }
        };
    }
}

struct Evaluator<'a, T> {
    scm: &'a Scm<T>,
    tables: HashMap<Vec<(String, u32)>, JointTable<T>>,
    env: HashMap<SumIndex, u32>,
}

impl<T: Probability> Evaluator<'_, T> {
    fn resolve(&self, v: &ValueRef) -> Result<u32> {
        match v {
            ValueRef::Level(l) => Ok(*l),
            ValueRef::Index(i) => self
                .env
                .get(i)
                .copied()
                .ok_or_else(|| Error::SymbolicValue(format!("{}#{}", i.var, i.id))),
        }
    }

    fn eval(&mut self, f: &Functional) -> Result<T> {
        match f {
            Functional::Constant { value } => Ok(if *value == 0 { T::zero() } else { T::one() }),
            Functional::Term(t) => self.term(t),
            Functional::Product { factors } => {
                let mut acc = T::one();
                for x in factors {
                    acc = acc * self.eval(x)?;
                    if acc.is_zero() {
                        break;
                    }
                }
                Ok(acc)
            }
            Functional::Sum { indices, body } => {
                let domains: Vec<u32> = indices
                    .iter()
                    .map(|i| self.scm.domain_of(&i.var))
                    .collect::<Result<_>>()?;
                let mut row = vec![0u32; indices.len()];
                let mut acc = T::zero();
                loop {
                    for (i, &x) in indices.iter().zip(&row) {
                        self.env.insert(i.clone(), x);
                    }
                    acc = acc + self.eval(body)?;
                    if !advance(&mut row, &domains) {
                        break;
                    }
                }
                for i in indices {
                    self.env.remove(i);
                }
                Ok(acc)
            }
            Functional::Fraction {
                numerator,
                denominator,
            } => {
                let den = self.eval(denominator)?;
                if den.is_zero() {
                    return Err(Error::ZeroConditioningEvent);
                }
                Ok(self.eval(numerator)? / den)
            }
        }
    }

    fn term(&mut self, t: &ProbTerm) -> Result<T> {
        let mut key = Vec::new();
        let mut regime = BTreeMap::new();
        for (k, v) in &t.subscript {
            let l = self.resolve(v)?;
            key.push((k.clone(), l));
            regime.insert(k.clone(), ValueRef::Level(l));
        }
        if !self.tables.contains_key(&key) {
            let table = self.scm.interventional_table(&regime)?;
            self.tables.insert(key.clone(), table);
        }
        let table = &self.tables[&key];
        let mut cond = Vec::new();
        for (k, v) in &t.conditioning {
            cond.push((k.clone(), self.resolve(v)?));
        }
        let mut joint = cond.clone();
        for (k, v) in &t.outcomes {
            joint.push((k.clone(), self.resolve(v)?));
        }
        let num = table.probability(&joint)?;
        if cond.is_empty() {
            return Ok(num);
        }
        let den = table.probability(&cond)?;
        if den.is_zero() {
            return Err(Error::ZeroConditioningEvent);
        }
        Ok(num / den)
    }
}

/// A random model whose induced diagram is `g`.
///
/// Every variable gets a private error latent `E[V]` and every bidirected
/// edge `A <-> B` a shared latent `U[A,B]`; latents have `domain + 1` states.
/// Draws come from ChaCha8 seeded with `seed`, in this order: latent weights
/// (integers 1 to 9, normalised) for each latent in listing order, then the
/// mechanism table entries (uniform levels) variable by variable.
pub fn random_scm<T: Probability>(g: &Dag, domain: u32, seed: u64) -> Result<Scm<T>> {
    if domain == 0 {
        return Err(Error::InvalidModel("domain size must be positive".into()));
    }
    if g.vertices().iter().any(|v| v.kind == VertexKind::Fixed) {
        return Err(Error::InvalidModel("random models need observed vertices only".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latent_names = Vec::new();
    let mut parents: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for v in 0..g.len() {
        let name = g.label(v).to_string();
        let mut ps: Vec<String> = g.parents(v).iter().map(|&p| g.label(p).to_string()).collect();
        let err = format!("E[{name}]");
        ps.push(err.clone());
        latent_names.push(err);
        parents.insert(name, ps);
    }
    for (a, b) in g.bidirected_edges() {
        let u = format!("U[{},{}]", g.label(a), g.label(b));
        for v in [a, b] {
            parents
                .get_mut(g.label(v))
                .expect("every vertex has a parent list")
                .push(u.clone());
        }
        latent_names.push(u);
    }
    let ldom = domain + 1;
    let latents: Vec<Latent<T>> = latent_names
        .into_iter()
        .map(|name| {
            let weights: Vec<u64> = (0..ldom).map(|_| rng.gen_range(1..=9)).collect();
            let total: u64 = weights.iter().sum();
            Latent {
                name,
                domain: ldom,
                probs: weights.iter().map(|&w| T::from_ratio(w, total)).collect(),
            }
        })
        .collect();
    let variables: Vec<Variable> = (0..g.len())
        .map(|v| Variable {
            name: g.label(v).to_string(),
            domain,
        })
        .collect();
    let mut mechanisms = BTreeMap::new();
    for v in &variables {
        let rows: usize = parents[&v.name]
            .iter()
            .map(|p| if p.contains('[') { ldom as usize } else { domain as usize })
            .product();
        let table = (0..rows).map(|_| rng.gen_range(0..domain)).collect();
        mechanisms.insert(v.name.clone(), table);
    }
    let scm = Scm {
        variables,
        parents,
        mechanisms,
        latents,
    };
    scm.validate()?;
    Ok(scm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactual::{parse_conjunction, CfVariable};
    use crate::dsl::dag;
    use num_rational::BigRational;

    /// `X := U`, `Y := X` with `U` uniform on two states.
    fn chain() -> Scm<f64> {
        Scm {
            variables: vec![
                Variable { name: "X".into(), domain: 2 },
                Variable { name: "Y".into(), domain: 2 },
            ],
            parents: [("X".into(), vec!["U".into()]), ("Y".into(), vec!["X".into()])].into(),
            mechanisms: [("X".into(), vec![0, 1]), ("Y".into(), vec![0, 1])].into(),
            latents: vec![Latent { name: "U".into(), domain: 2, probs: vec![0.5, 0.5] }],
        }
    }

    #[test]
    fn chain_counterfactual() {
        let m = chain();
        let q = parse_conjunction("Y[X=0]=0 & X=1").unwrap();
        assert_eq!(m.cf_probability(&q, None).unwrap(), 0.5);
        let x_x: CfConjunction = CfVariable::new("X", 1).under("X", 1).into();
        assert_eq!(m.cf_probability(&x_x, None).unwrap(), 1.0);
        let t = m
            .interventional_table(&[("X".to_string(), ValueRef::Level(0))].into())
            .unwrap();
        assert_eq!(t.probability(&[("Y".into(), 0)]).unwrap(), 1.0);
    }

    #[test]
    fn conditional_and_zero_events() {
        let m = chain();
        let y = parse_conjunction("Y=1").unwrap();
        let x = parse_conjunction("X=1").unwrap();
        assert_eq!(m.cf_probability(&y, Some(&x)).unwrap(), 1.0);
        let impossible = parse_conjunction("X=0 & Y=1").unwrap();
        assert_eq!(m.cf_probability(&y, Some(&impossible)), Err(Error::ZeroConditioningEvent));
    }

    #[test]
    fn tables_are_normalised() {
        let g = dag("X -> Z -> Y; X -> Y; X <-> Z").unwrap();
        let m: Scm<BigRational> = random_scm(&g, 2, 7).unwrap();
        let t = m.interventional_table(&BTreeMap::new()).unwrap();
        let total = t.probs.iter().fold(BigRational::from_integer(0.into()), |a, b| a + b);
        assert_eq!(total, BigRational::from_integer(1.into()));
        let all: BTreeMap<String, ValueRef> = ["X", "Y", "Z"]
            .iter()
            .map(|v| (v.to_string(), ValueRef::Level(1)))
            .collect();
        let point = m.interventional_table(&all).unwrap();
        assert_eq!(
            point.probability(&[("X".into(), 1), ("Y".into(), 1), ("Z".into(), 1)]).unwrap(),
            BigRational::from_integer(1.into())
        );
    }

    #[test]
    fn random_models_are_reproducible() {
        let g = dag("X -> Z -> Y; X -> Y; X <-> Z").unwrap();
        let a: Scm<f64> = random_scm(&g, 2, 11).unwrap();
        let b: Scm<f64> = random_scm(&g, 2, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.induced_diagram().unwrap(), g);
        let c: Scm<f64> = random_scm(&g, 2, 12).unwrap();
        let ta = a.interventional_table(&BTreeMap::new()).unwrap();
        let tc = c.interventional_table(&BTreeMap::new()).unwrap();
        assert_ne!(ta.probs, tc.probs);
    }

    #[test]
    fn evaluates_formulas() {
        let m = chain();
        assert_eq!(m.evaluate_functional(&Functional::one()).unwrap(), 1.0);
        let d = Functional::term(ProbTerm::new(vec![("X".into(), ValueRef::Level(0))]));
        assert_eq!(m.evaluate_functional(&d).unwrap(), 0.5);
    }

    #[test]
    fn resource_limit() {
        let mut m = chain();
        for i in 0..15 {
            m.latents.push(Latent { name: format!("N{i}"), domain: 3, probs: vec![1.0 / 3.0; 3] });
        }
        let q = parse_conjunction("X=0").unwrap();
        assert!(matches!(
            m.cf_probability(&q, None),
            Err(Error::ExplicitResourceLimit { .. })
        ));
    }

    #[test]
    fn rejects_broken_models() {
        let mut m = chain();
        m.mechanisms.insert("Y".into(), vec![0]);
        assert!(matches!(m.validate(), Err(Error::InvalidModel(_))));
        let mut m = chain();
        m.latents[0].probs = vec![0.5, 0.6];
        assert!(matches!(m.validate(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn json_round_trip() {
        let m = chain();
        let text = serde_json::to_string(&m).unwrap();
        let back: Scm<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
