//! Counterfactual variables and conjunctions.
//!
//! Values are assignment levels, not magnitudes: level 0 of `X` renders as
//! `x`, level 1 as `x'`, level 2 as `x''`. During identification some values
//! become bound summation indices, so every value slot holds a [`ValueRef`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A summation index bound by a [`crate::formula::Functional::Sum`]. `id` is
/// unique within one identification run; `var` is the variable it ranges over.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SumIndex {
    pub id: u32,
    pub var: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueRef {
    Level(u32),
    Index(SumIndex),
}

impl From<u32> for ValueRef {
    fn from(level: u32) -> Self {
        ValueRef::Level(level)
    }
}

/// Outcome of comparing two possibly symbolic values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    Equal,
    Different,
    /// At least one side is a summation index that may or may not coincide
    /// with the other value.
    Unknown,
}

impl ValueRef {
    pub fn level(&self) -> Option<u32> {
        match self {
            ValueRef::Level(l) => Some(*l),
            ValueRef::Index(_) => None,
        }
    }

    pub fn compare(&self, other: &ValueRef) -> Agreement {
        if self == other {
            Agreement::Equal
        } else if let (ValueRef::Level(_), ValueRef::Level(_)) = (self, other) {
            Agreement::Different
        } else {
            Agreement::Unknown
        }
    }

    /// Renders the value of variable `var` with the default index naming.
    pub fn render(&self, var: &str) -> String {
        self.render_with(var, &DefaultNames)
    }

    pub fn render_with(&self, var: &str, names: &dyn IndexNames) -> String {
        match self {
            ValueRef::Level(l) => level_name(var, *l),
            ValueRef::Index(idx) => names.index_name(idx),
        }
    }
}

/// `x`, `x'`, `x''`, ... for levels 0, 1, 2 of `X`.
pub fn level_name(var: &str, level: u32) -> String {
    let mut s = var.to_lowercase();
    s.extend(std::iter::repeat_n('\'', level as usize));
    s
}

/// Names for summation indices when rendering.
pub trait IndexNames {
    fn index_name(&self, idx: &SumIndex) -> String;
}

/// Lowercase variable name tagged with the index id, unambiguous everywhere.
pub struct DefaultNames;

impl IndexNames for DefaultNames {
    fn index_name(&self, idx: &SumIndex) -> String {
        format!("{}^{{({})}}", idx.var.to_lowercase(), idx.id)
    }
}

/// A variable `Y` observed at some value in the submodel given by its
/// interventions, e.g. `y_{x}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CfVariable {
    pub name: String,
    pub observed: Option<ValueRef>,
    pub interventions: BTreeMap<String, ValueRef>,
}

impl CfVariable {
    pub fn new(name: impl Into<String>, level: u32) -> Self {
        CfVariable {
            name: name.into(),
            observed: Some(ValueRef::Level(level)),
            interventions: BTreeMap::new(),
        }
    }

    pub fn unobserved(name: impl Into<String>) -> Self {
        CfVariable {
            name: name.into(),
            observed: None,
            interventions: BTreeMap::new(),
        }
    }

    /// Builder: adds `do(var = level)` to the subscript.
    pub fn under(mut self, var: impl Into<String>, level: u32) -> Self {
        self.interventions.insert(var.into(), ValueRef::Level(level));
        self
    }

    pub fn val(&self) -> Result<&ValueRef> {
        self.observed
            .as_ref()
            .ok_or_else(|| Error::MissingValue(self.render()))
    }

    /// The level this term's own subscript forces on it, if any.
    pub fn self_intervention(&self) -> Option<&ValueRef> {
        self.interventions.get(&self.name)
    }

    pub fn render(&self) -> String {
        self.render_with(&DefaultNames)
    }

    pub fn render_with(&self, names: &dyn IndexNames) -> String {
        let mut s = match &self.observed {
            Some(v) => v.render_with(&self.name, names),
            None => self.name.clone(),
        };
        if !self.interventions.is_empty() {
            let subs: Vec<String> = self
                .interventions
                .iter()
                .map(|(k, v)| v.render_with(k, names))
                .collect();
            s.push_str("_{");
            s.push_str(&subs.join(","));
            s.push('}');
        }
        s
    }
}

impl fmt::Display for CfVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// An ordered conjunction of counterfactual events.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CfConjunction {
    pub terms: Vec<CfVariable>,
}

impl CfConjunction {
    pub fn new(terms: Vec<CfVariable>) -> Self {
        CfConjunction { terms }
    }

    pub fn empty() -> Self {
        CfConjunction::default()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CfVariable> {
        self.terms.iter()
    }

    /// Subscript values per intervened variable.
    pub fn sub(&self) -> BTreeMap<String, BTreeSet<ValueRef>> {
        let mut out: BTreeMap<String, BTreeSet<ValueRef>> = BTreeMap::new();
        for t in &self.terms {
            for (k, v) in &t.interventions {
                out.entry(k.clone()).or_default().insert(v.clone());
            }
        }
        out
    }

    /// Base variables mentioned by the terms.
    pub fn var(&self) -> BTreeSet<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    /// Every value mentioned, observed or intervened, with multiplicity.
    pub fn ev(&self) -> Vec<(String, ValueRef)> {
        let mut out = Vec::new();
        for t in &self.terms {
            if let Some(v) = &t.observed {
                out.push((t.name.clone(), v.clone()));
            }
            for (k, v) in &t.interventions {
                out.push((k.clone(), v.clone()));
            }
        }
        out
    }

    /// Some term is forced by its own subscript to a value other than the one
    /// it is observed at.
    pub fn effectiveness_violation(&self) -> bool {
        self.terms.iter().any(|t| {
            matches!(
                (t.self_intervention(), &t.observed),
                (Some(forced), Some(obs)) if forced.compare(obs) == Agreement::Different
            )
        })
    }

    /// Removes terms observed at exactly the value their own subscript forces.
    pub fn drop_tautologies(&self) -> CfConjunction {
        CfConjunction::new(
            self.terms
                .iter()
                .filter(|t| !is_tautology(t))
                .cloned()
                .collect(),
        )
    }

    /// Two terms name the same counterfactual variable with different values.
    pub fn inconsistent(&self) -> bool {
        for (i, a) in self.terms.iter().enumerate() {
            for b in &self.terms[i + 1..] {
                if a.name == b.name && a.interventions == b.interventions {
                    if let (Some(va), Some(vb)) = (&a.observed, &b.observed) {
                        if va.compare(vb) == Agreement::Different {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    pub fn render(&self) -> String {
        self.render_with(&DefaultNames)
    }

    pub fn render_with(&self, names: &dyn IndexNames) -> String {
        let parts: Vec<String> = self.terms.iter().map(|t| t.render_with(names)).collect();
        parts.join(" /\\ ")
    }
}

pub(crate) fn is_tautology(t: &CfVariable) -> bool {
    matches!(
        (t.self_intervention(), &t.observed),
        (Some(forced), Some(obs)) if forced.compare(obs) == Agreement::Equal
    )
}

impl fmt::Display for CfConjunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<CfVariable> for CfConjunction {
    fn from(v: CfVariable) -> Self {
        CfConjunction::new(vec![v])
    }
}

impl FromIterator<CfVariable> for CfConjunction {
    fn from_iter<I: IntoIterator<Item = CfVariable>>(iter: I) -> Self {
        CfConjunction::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a CfConjunction {
    type Item = &'a CfVariable;
    type IntoIter = std::slice::Iter<'a, CfVariable>;

    fn into_iter(self) -> Self::IntoIter {
        self.terms.iter()
    }
}

/// Concatenates two conjunctions (or single variables), preserving order.
pub fn conjoin(a: impl Into<CfConjunction>, b: impl Into<CfConjunction>) -> CfConjunction {
    let mut out = a.into();
    out.terms.extend(b.into().terms);
    out
}

impl<R: Into<CfConjunction>> Add<R> for CfConjunction {
    type Output = CfConjunction;

    fn add(self, rhs: R) -> CfConjunction {
        conjoin(self, rhs)
    }
}

impl<R: Into<CfConjunction>> Add<R> for CfVariable {
    type Output = CfConjunction;

    fn add(self, rhs: R) -> CfConjunction {
        conjoin(self, rhs)
    }
}

/// Parses the query grammar: terms such as `Y[X=0]=0` joined by `&`.
///
/// The bracketed intervention list may appear before or after `=LEVEL`.
/// Blank input yields the empty conjunction.
pub fn parse_conjunction(text: &str) -> Result<CfConjunction> {
    let mut p = QueryParser {
        text,
        bytes: text.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    if p.at_end() {
        return Ok(CfConjunction::empty());
    }
    let mut terms = vec![p.term()?];
    loop {
        p.skip_ws();
        if p.at_end() {
            break;
        }
        p.expect(b'&')?;
        terms.push(p.term()?);
    }
    Ok(CfConjunction::new(terms))
}

struct QueryParser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl QueryParser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::parse(self.pos, format!("expected `{}`", c as char)))
        }
    }

    fn name(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        if !self.bytes.get(start).is_some_and(u8::is_ascii_alphabetic) {
            return Err(Error::parse(start, "expected a variable name"));
        }
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        Ok(self.text[start..self.pos].to_string())
    }

    fn level(&mut self) -> Result<u32> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        self.text[start..self.pos]
            .parse()
            .map_err(|_| Error::parse(start, "expected a non-negative integer level"))
    }

    fn assignments(&mut self, into: &mut BTreeMap<String, ValueRef>) -> Result<()> {
        self.expect(b'[')?;
        loop {
            let at = {
                self.skip_ws();
                self.pos
            };
            let name = self.name()?;
            self.expect(b'=')?;
            let level = self.level()?;
            if into.insert(name, ValueRef::Level(level)).is_some() {
                return Err(Error::parse(at, "variable intervened on twice"));
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(());
                }
                _ => return Err(Error::parse(self.pos, "expected `,` or `]`")),
            }
        }
    }

    fn term(&mut self) -> Result<CfVariable> {
        let name = self.name()?;
        let mut interventions = BTreeMap::new();
        let mut bracketed = false;
        if self.peek() == Some(b'[') {
            self.assignments(&mut interventions)?;
            bracketed = true;
        }
        self.expect(b'=')?;
        let level = self.level()?;
        if self.peek() == Some(b'[') {
            if bracketed {
                return Err(Error::parse(self.pos, "intervention list given twice"));
            }
            self.assignments(&mut interventions)?;
        }
        Ok(CfVariable {
            name,
            observed: Some(ValueRef::Level(level)),
            interventions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma() -> CfConjunction {
        CfVariable::new("Y", 0).under("X", 0)
            + CfVariable::new("X", 1)
            + CfVariable::new("Z", 0).under("D", 0)
            + CfVariable::new("D", 0)
    }

    #[test]
    fn accessors_match_example() {
        let g = gamma();
        let sub = g.sub();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub["X"], BTreeSet::from([ValueRef::Level(0)]));
        assert_eq!(sub["D"], BTreeSet::from([ValueRef::Level(0)]));
        let vars: Vec<String> = g.var().into_iter().collect();
        assert_eq!(vars, ["D", "X", "Y", "Z"]);
        let ev: BTreeSet<String> = g.ev().iter().map(|(n, v)| v.render(n)).collect();
        assert_eq!(ev, BTreeSet::from(["y", "x", "x'", "z", "d"].map(String::from)));
        assert_eq!(g.terms[0].val().unwrap(), &ValueRef::Level(0));
        assert!(matches!(
            CfVariable::unobserved("Y").val(),
            Err(Error::MissingValue(_))
        ));
        let empty = CfConjunction::empty();
        assert!(empty.var().is_empty() && empty.sub().is_empty());
    }

    #[test]
    fn renders_like_latex() {
        assert_eq!(gamma().render(), "y_{x} /\\ x' /\\ z_{d} /\\ d");
        assert_eq!(CfVariable::new("Y", 2).under("X", 0).under("Z", 1).render(), "y''_{x,z'}");
    }

    #[test]
    fn conjoin_preserves_order() {
        let c2 = CfVariable::new("Y", 0).under("X", 0) + CfVariable::new("X", 1);
        let c3 = CfVariable::new("Z", 0).under("D", 0) + CfVariable::new("D", 0);
        assert_eq!(c2.clone() + c3, gamma());
        assert_eq!(c2.clone() + CfConjunction::empty(), c2);
        assert_eq!(CfConjunction::empty() + c2.clone(), c2);
    }

    #[test]
    fn effectiveness_and_tautologies() {
        let violation: CfConjunction = CfVariable::new("X", 0).under("X", 1).into();
        assert!(violation.effectiveness_violation());
        let plain: CfConjunction = CfVariable::new("Y", 0).under("X", 0).into();
        assert!(!plain.effectiveness_violation());
        let taut = CfVariable::new("X", 0).under("X", 0) + CfVariable::new("Y", 0).under("X", 0);
        assert!(!taut.effectiveness_violation());
        assert_eq!(taut.drop_tautologies(), plain);
        assert_eq!(plain.drop_tautologies(), plain);
        let lone: CfConjunction = CfVariable::new("X", 0).under("X", 0).into();
        assert!(lone.drop_tautologies().is_empty());
    }

    #[test]
    fn syntactic_inconsistency() {
        let y_x = CfVariable::new("Y", 0).under("X", 0);
        let y1_x = CfVariable::new("Y", 1).under("X", 0);
        let y_z = CfVariable::new("Y", 1).under("Z", 0);
        assert!((y_x.clone() + y1_x).inconsistent());
        assert!(!(y_x.clone() + y_z).inconsistent());
        assert!(!(y_x.clone() + y_x).inconsistent());
    }

    #[test]
    fn symbolic_values_compare_as_unknown() {
        let idx = ValueRef::Index(SumIndex { id: 1, var: "W".into() });
        assert_eq!(idx.compare(&idx.clone()), Agreement::Equal);
        assert_eq!(idx.compare(&ValueRef::Level(0)), Agreement::Unknown);
        assert_eq!(ValueRef::Level(0).compare(&ValueRef::Level(1)), Agreement::Different);
    }

    #[test]
    fn parses_query_grammar() {
        let g = parse_conjunction("Y[X=0]=0 & X=1 & Z[D=0]=0 & D=0").unwrap();
        assert_eq!(g, gamma());
        let alt = parse_conjunction("Y=0[X=0]&X=1&Z = 0 [ D = 0 ]&D=0").unwrap();
        assert_eq!(alt, gamma());
        assert!(parse_conjunction("  ").unwrap().is_empty());
    }

    #[test]
    fn query_grammar_errors() {
        assert!(matches!(parse_conjunction("Y"), Err(Error::Parse { offset: 1, .. })));
        assert!(matches!(parse_conjunction("Y=a"), Err(Error::Parse { offset: 2, .. })));
        assert!(matches!(parse_conjunction("Y=0 X=1"), Err(Error::Parse { offset: 4, .. })));
        assert!(matches!(parse_conjunction("Y[X=0,X=1]=0"), Err(Error::Parse { .. })));
        assert!(matches!(parse_conjunction("Y[X=0]=0[Z=0]"), Err(Error::Parse { .. })));
        assert!(matches!(parse_conjunction("Y=0 &"), Err(Error::Parse { .. })));
    }
}
