//! Symbolic probability expressions.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::counterfactual::{IndexNames, SumIndex, ValueRef};

/// A variable paired with the value it takes.
pub type Assignment = (String, ValueRef);

/// `P_{subscript}(outcomes | conditioning)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ProbTerm {
    pub outcomes: Vec<Assignment>,
    pub subscript: BTreeMap<String, ValueRef>,
    pub conditioning: Vec<Assignment>,
}

impl ProbTerm {
    pub fn new(outcomes: Vec<Assignment>) -> Self {
        ProbTerm {
            outcomes,
            ..Default::default()
        }
    }

    pub fn under(mut self, subscript: BTreeMap<String, ValueRef>) -> Self {
        self.subscript = subscript;
        self
    }

    pub fn given(mut self, conditioning: Vec<Assignment>) -> Self {
        self.conditioning = conditioning;
        self
    }

    fn values(&self) -> impl Iterator<Item = (&String, &ValueRef)> {
        self.outcomes
            .iter()
            .map(|(k, v)| (k, v))
            .chain(self.subscript.iter())
            .chain(self.conditioning.iter().map(|(k, v)| (k, v)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// Either 0 or 1.
    Constant { value: u8 },
    Term(ProbTerm),
    Product { factors: Vec<Functional> },
    Sum { indices: Vec<SumIndex>, body: Box<Functional> },
    Fraction { numerator: Box<Functional>, denominator: Box<Functional> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Style {
    /// Interventions as subscripts: `P_{x}(y)`.
    #[default]
    Subscript,
    /// Interventions with the do-operator: `P(y|do(x))`.
    Do,
}

impl Functional {
    pub fn zero() -> Self {
        Functional::Constant { value: 0 }
    }

    pub fn one() -> Self {
        Functional::Constant { value: 1 }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Functional::Constant { value: 0 })
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Functional::Constant { value: 1 })
    }

    pub fn term(t: ProbTerm) -> Self {
        Functional::Term(t)
    }

    pub fn product(factors: Vec<Functional>) -> Self {
        Functional::Product { factors }
    }

    pub fn sum(indices: Vec<SumIndex>, body: Functional) -> Self {
        Functional::Sum {
            indices,
            body: Box::new(body),
        }
    }

    pub fn fraction(numerator: Functional, denominator: Functional) -> Self {
        Functional::Fraction {
            numerator: Box::new(numerator),
            denominator: Box::new(denominator),
        }
    }

    /// Visits every probability term.
    pub fn terms(&self) -> Vec<&ProbTerm> {
        let mut out = Vec::new();
        self.collect_terms(&mut out);
        out
    }

    fn collect_terms<'a>(&'a self, out: &mut Vec<&'a ProbTerm>) {
        match self {
            Functional::Constant { .. } => {}
            Functional::Term(t) => out.push(t),
            Functional::Product { factors } => factors.iter().for_each(|f| f.collect_terms(out)),
            Functional::Sum { body, .. } => body.collect_terms(out),
            Functional::Fraction {
                numerator,
                denominator,
            } => {
                numerator.collect_terms(out);
                denominator.collect_terms(out);
            }
        }
    }

    /// Rebuilds the expression with every term replaced by `f(term)`.
    pub fn try_map_terms<E>(
        &self,
        f: &mut impl FnMut(&ProbTerm) -> Result<Functional, E>,
    ) -> Result<Functional, E> {
        Ok(match self {
            Functional::Constant { .. } => self.clone(),
            Functional::Term(t) => f(t)?,
            Functional::Product { factors } => Functional::product(
                factors
                    .iter()
                    .map(|x| x.try_map_terms(f))
                    .collect::<Result<_, _>>()?,
            ),
            Functional::Sum { indices, body } => {
                Functional::sum(indices.clone(), body.try_map_terms(f)?)
            }
            Functional::Fraction {
                numerator,
                denominator,
            } => Functional::fraction(numerator.try_map_terms(f)?, denominator.try_map_terms(f)?),
        })
    }

    fn count_index(&self, idx: &SumIndex) -> usize {
        let is = |v: &ValueRef| matches!(v, ValueRef::Index(i) if i == idx);
        self.terms()
            .iter()
            .map(|t| t.values().filter(|(_, v)| is(v)).count())
            .sum()
    }

    pub fn render(&self, style: Style) -> String {
        let names = FormulaNames::new(self);
        let mut out = String::new();
        self.render_into(style, &names, &mut out);
        out
    }

    fn render_into(&self, style: Style, names: &FormulaNames, out: &mut String) {
        match self {
            Functional::Constant { value } => out.push_str(&value.to_string()),
            Functional::Term(t) => render_term(t, style, names, out),
            Functional::Product { factors } => {
                if factors.is_empty() {
                    out.push('1');
                }
                for f in factors {
                    if matches!(f, Functional::Sum { .. }) {
                        out.push_str("\\left(");
                        f.render_into(style, names, out);
                        out.push_str("\\right)");
                    } else {
                        f.render_into(style, names, out);
                    }
                }
            }
            Functional::Sum { indices, body } => {
                let vars: Vec<String> = indices.iter().map(|i| names.index_name(i)).collect();
                out.push_str("\\sum_{");
                out.push_str(&vars.join(","));
                out.push_str("} ");
                body.render_into(style, names, out);
            }
            Functional::Fraction {
                numerator,
                denominator,
            } => {
                out.push_str("\\frac{");
                numerator.render_into(style, names, out);
                out.push_str("}{");
                denominator.render_into(style, names, out);
                out.push('}');
            }
        }
    }
}

fn join_values(items: &[Assignment], names: &FormulaNames) -> String {
    let parts: Vec<String> = items.iter().map(|(k, v)| v.render_with(k, names)).collect();
    parts.join(",")
}

fn render_term(t: &ProbTerm, style: Style, names: &FormulaNames, out: &mut String) {
    let outcomes = join_values(&t.outcomes, names);
    let sub: Vec<Assignment> = t.subscript.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let sub = join_values(&sub, names);
    let cond = join_values(&t.conditioning, names);
    out.push('P');
    match style {
        Style::Subscript => {
            if !sub.is_empty() {
                out.push_str(&format!("_{{{sub}}}"));
            }
            out.push('(');
            out.push_str(&outcomes);
            if !cond.is_empty() {
                out.push('|');
                out.push_str(&cond);
            }
        }
        Style::Do => {
            out.push('(');
            out.push_str(&outcomes);
            let mut given = Vec::new();
            if !cond.is_empty() {
                given.push(cond);
            }
            if !sub.is_empty() {
                given.push(format!("do({sub})"));
            }
            if !given.is_empty() {
                out.push('|');
                out.push_str(&given.join(","));
            }
        }
    }
    out.push(')');
}

/// Names summation indices after their variable: `w` when unambiguous,
/// `w^{(k)}` when the variable has several indices or also appears at level 0.
struct FormulaNames {
    names: HashMap<SumIndex, String>,
}

impl FormulaNames {
    fn new(f: &Functional) -> Self {
        let mut per_var: BTreeMap<String, Vec<SumIndex>> = BTreeMap::new();
        let mut level_zero: std::collections::HashSet<String> = Default::default();
        let mut note = |k: &String, v: &ValueRef| match v {
            ValueRef::Level(0) => {
                level_zero.insert(k.clone());
            }
            ValueRef::Level(_) => {}
            ValueRef::Index(i) => {
                let list = per_var.entry(i.var.clone()).or_default();
                if !list.contains(i) {
                    list.push(i.clone());
                }
            }
        };
        walk_indices(f, &mut note);
        let mut names = HashMap::new();
        for (var, list) in &per_var {
            let plain = list.len() == 1 && !level_zero.contains(var);
            for (k, idx) in list.iter().enumerate() {
                let name = if plain {
                    var.to_lowercase()
                } else {
                    format!("{}^{{({})}}", var.to_lowercase(), k + 1)
                };
                names.insert(idx.clone(), name);
            }
        }
        FormulaNames { names }
    }
}

fn walk_indices(f: &Functional, note: &mut impl FnMut(&String, &ValueRef)) {
    if let Functional::Sum { indices, body } = f {
        for i in indices {
            note(&i.var, &ValueRef::Index(i.clone()));
        }
        walk_indices(body, note);
        return;
    }
    match f {
        Functional::Product { factors } => factors.iter().for_each(|x| walk_indices(x, note)),
        Functional::Fraction {
            numerator,
            denominator,
        } => {
            walk_indices(numerator, note);
            walk_indices(denominator, note);
        }
        Functional::Term(t) => t.values().for_each(|(k, v)| note(k, v)),
        _ => {}
    }
}

impl IndexNames for FormulaNames {
    fn index_name(&self, idx: &SumIndex) -> String {
        self.names
            .get(idx)
            .cloned()
            .unwrap_or_else(|| crate::counterfactual::DefaultNames.index_name(idx))
    }
}

/// Simplifies without reordering factors: flattens products, absorbs
/// constants, sums out indices that occur
/// only as an outcome of one factor, and turns a ratio of a term by its own
/// marginal into a conditional term.
pub fn canonicalize(f: &Functional) -> Functional {
    match f {
        Functional::Constant { .. } => f.clone(),
        Functional::Term(t) => {
            if t.outcomes.is_empty() {
                Functional::one()
            } else {
                f.clone()
            }
        }
        Functional::Product { factors } => {
            let mut flat = Vec::new();
            for x in factors {
                match canonicalize(x) {
                    Functional::Product { factors } => flat.extend(factors),
                    c if c.is_zero() => return Functional::zero(),
                    c if c.is_one() => {}
                    c => flat.push(c),
                }
            }
            match flat.len() {
                0 => Functional::one(),
                1 => flat.pop().expect("one factor"),
                _ => Functional::product(flat),
            }
        }
        Functional::Sum { indices, body } => {
            let mut body = canonicalize(body);
            if body.is_zero() {
                return Functional::zero();
            }
            let mut kept = Vec::new();
            for idx in indices {
                // An index whose last occurrence was rewritten away still
                // scales the sum by its domain size, so it stays bound.
                match body.count_index(idx) {
                    1 => match marginalize(&body, idx) {
                        Some(b) => body = canonicalize(&b),
                        None => kept.push(idx.clone()),
                    },
                    _ => kept.push(idx.clone()),
                }
            }
            if kept.is_empty() {
                body
            } else {
                Functional::sum(kept, body)
            }
        }
        Functional::Fraction {
            numerator,
            denominator,
        } => {
            let num = canonicalize(numerator);
            let den = canonicalize(denominator);
            if num.is_zero() {
                return Functional::zero();
            }
            if den.is_one() {
                return num;
            }
            if let (Functional::Term(n), Functional::Term(d)) = (&num, &den) {
                if let Some(t) = condition(n, d) {
                    return canonicalize(&Functional::Term(t));
                }
            }
            Functional::fraction(num, den)
        }
    }
}

/// Removes the single outcome occurrence of `idx` from a factor of `body`.
fn marginalize(body: &Functional, idx: &SumIndex) -> Option<Functional> {
    let drop = |t: &ProbTerm| -> Option<ProbTerm> {
        let pos = t
            .outcomes
            .iter()
            .position(|(_, v)| matches!(v, ValueRef::Index(i) if i == idx))?;
        let mut t = t.clone();
        t.outcomes.remove(pos);
        Some(t)
    };
    match body {
        Functional::Term(t) => drop(t).map(Functional::Term),
        Functional::Product { factors } => {
            let mut factors = factors.clone();
            for f in factors.iter_mut() {
                if let Functional::Term(t) = f {
                    if let Some(nt) = drop(t) {
                        *f = Functional::Term(nt);
                        return Some(Functional::product(factors));
                    }
                }
            }
            None
        }
        _ => None,
    }
}

/// `P_s(a, b | c) / P_s(b | c)` as `P_s(a | b, c)`.
fn condition(n: &ProbTerm, d: &ProbTerm) -> Option<ProbTerm> {
    if n.subscript != d.subscript || !same_items(&n.conditioning, &d.conditioning) {
        return None;
    }
    if !d.outcomes.iter().all(|x| n.outcomes.contains(x)) {
        return None;
    }
    let outcomes = n
        .outcomes
        .iter()
        .filter(|x| !d.outcomes.contains(x))
        .cloned()
        .collect();
    let mut conditioning = d.outcomes.clone();
    conditioning.extend(n.conditioning.iter().cloned());
    Some(ProbTerm {
        outcomes,
        subscript: n.subscript.clone(),
        conditioning,
    })
}

fn same_items(a: &[Assignment], b: &[Assignment]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(name: &str, level: u32) -> Assignment {
        (name.to_string(), ValueRef::Level(level))
    }

    fn sub(items: &[Assignment]) -> BTreeMap<String, ValueRef> {
        items.iter().cloned().collect()
    }

    fn flagship() -> Functional {
        let w = SumIndex { id: 1, var: "W".into() };
        let wv = ("W".to_string(), ValueRef::Index(w.clone()));
        Functional::sum(
            vec![w],
            Functional::product(vec![
                Functional::term(
                    ProbTerm::new(vec![lv("Y", 0), lv("X", 1)]).under(sub(&[wv.clone(), lv("Z", 0)])),
                ),
                Functional::term(ProbTerm::new(vec![wv]).under(sub(&[lv("X", 0)]))),
                Functional::term(ProbTerm::new(vec![lv("Z", 0)]).under(sub(&[lv("D", 0)]))),
                Functional::term(ProbTerm::new(vec![lv("D", 0)])),
            ]),
        )
    }

    #[test]
    fn renders_both_styles() {
        let f = flagship();
        assert_eq!(
            f.render(Style::Subscript),
            "\\sum_{w} P_{w,z}(y,x')P_{x}(w)P_{d}(z)P(d)"
        );
        assert_eq!(
            f.render(Style::Do),
            "\\sum_{w} P(y,x'|do(w,z))P(w|do(x))P(z|do(d))P(d)"
        );
        assert_eq!(Functional::one().render(Style::Subscript), "1");
        let mixed = ProbTerm::new(vec![lv("Y", 0)])
            .under(sub(&[lv("Z", 0)]))
            .given(vec![lv("X", 0)]);
        assert_eq!(Functional::term(mixed.clone()).render(Style::Do), "P(y|x,do(z))");
        assert_eq!(Functional::term(mixed).render(Style::Subscript), "P_{z}(y|x)");
    }

    #[test]
    fn index_names_disambiguate() {
        let a = SumIndex { id: 3, var: "W".into() };
        let b = SumIndex { id: 7, var: "W".into() };
        let f = Functional::sum(
            vec![a.clone(), b.clone()],
            Functional::product(vec![
                Functional::term(ProbTerm::new(vec![("W".into(), ValueRef::Index(a))])),
                Functional::term(ProbTerm::new(vec![lv("Y", 0)]).given(vec![("W".into(), ValueRef::Index(b))])),
            ]),
        );
        assert_eq!(f.render(Style::Subscript), "\\sum_{w^{(1)},w^{(2)}} P(w^{(1)})P(y|w^{(2)})");
    }

    #[test]
    fn canonical_forms() {
        let d = Functional::term(ProbTerm::new(vec![lv("D", 0)]));
        assert_eq!(canonicalize(&Functional::product(vec![Functional::one(), d.clone()])), d);
        assert!(canonicalize(&Functional::product(vec![d.clone(), Functional::zero()])).is_zero());
        let y = SumIndex { id: 1, var: "Y".into() };
        let lone = Functional::sum(
            vec![y.clone()],
            Functional::term(
                ProbTerm::new(vec![("Y".into(), ValueRef::Index(y))]).under(sub(&[lv("X", 0), lv("Z", 0)])),
            ),
        );
        assert!(canonicalize(&lone).is_one());
        let f = flagship();
        assert_eq!(canonicalize(&f), f);
        assert_eq!(canonicalize(&canonicalize(&f)), canonicalize(&f));
    }

    #[test]
    fn partial_marginal_and_conditioning() {
        let z = SumIndex { id: 2, var: "Z".into() };
        let joint = |extra: Option<Assignment>| {
            let mut o = vec![lv("Y", 0)];
            o.extend(extra);
            o.push(lv("X", 0));
            ProbTerm::new(o)
        };
        let summed = Functional::sum(
            vec![z.clone()],
            Functional::term(joint(Some(("Z".into(), ValueRef::Index(z))))),
        );
        assert_eq!(canonicalize(&summed), Functional::term(joint(None)));
        let ratio = Functional::fraction(
            Functional::term(joint(None)),
            Functional::term(ProbTerm::new(vec![lv("X", 0)])),
        );
        assert_eq!(canonicalize(&ratio).render(Style::Subscript), "P(y|x)");
        let irreducible = Functional::fraction(
            Functional::term(ProbTerm::new(vec![lv("Y", 0)])),
            Functional::term(ProbTerm::new(vec![lv("X", 0)])),
        );
        assert_eq!(canonicalize(&irreducible).render(Style::Subscript), "\\frac{P(y)}{P(x)}");
    }

    #[test]
    fn nested_sum_is_wrapped() {
        let w = SumIndex { id: 1, var: "W".into() };
        let inner = Functional::sum(
            vec![w.clone()],
            Functional::product(vec![
                Functional::term(ProbTerm::new(vec![("W".into(), ValueRef::Index(w.clone()))])),
                Functional::term(ProbTerm::new(vec![lv("Y", 0)]).given(vec![("W".into(), ValueRef::Index(w))])),
            ]),
        );
        let f = Functional::product(vec![Functional::term(ProbTerm::new(vec![lv("X", 0)])), inner]);
        assert_eq!(
            f.render(Style::Subscript),
            "P(x)\\left(\\sum_{w} P(w)P(y|w)\\right)"
        );
    }

    #[test]
    fn json_round_trip() {
        let f = flagship();
        let text = serde_json::to_string(&f).unwrap();
        let back: Functional = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
        assert!(text.contains("\"kind\":\"sum\""));
    }
}
