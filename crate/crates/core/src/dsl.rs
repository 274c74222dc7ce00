//! Text syntax for causal diagrams and a neutral JSON interchange format.
//!
//! A graph is a sequence of statements `n1 e1 n2 e2 ... nk` where each `e` is
//! `->`, `<-` or `<->` and each `n` is an identifier or a brace-enclosed
//! subgraph. Statements may be separated by `;`, `,`, spaces or newlines; an
//! edge binds greedily to the node after it, so any token that is not an edge
//! starts a new statement. An edge touching a subgraph fans out to every
//! vertex mentioned inside it.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, Dag, Vertex};

/// Graph text plus the labels that should be projected out as latent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DagSource {
    pub text: String,
    pub latents: Vec<String>,
}

impl DagSource {
    pub fn new(text: impl Into<String>) -> Self {
        DagSource {
            text: text.into(),
            latents: Vec::new(),
        }
    }

    pub fn with_latents<I, S>(mut self, latents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.latents = latents.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeKind {
    Right,
    Left,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Ident(String),
    Edge(EdgeKind),
    Open,
    Close,
    Separator,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b';' | b',' => {
                out.push((i, Token::Separator));
                i += 1;
            }
            b'{' => {
                out.push((i, Token::Open));
                i += 1;
            }
            b'}' => {
                out.push((i, Token::Close));
                i += 1;
            }
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                out.push((i, Token::Edge(EdgeKind::Right)));
                i += 2;
            }
            b'<' if bytes.get(i + 1) == Some(&b'-') => {
                if bytes.get(i + 2) == Some(&b'>') {
                    out.push((i, Token::Edge(EdgeKind::Both)));
                    i += 3;
                } else {
                    out.push((i, Token::Edge(EdgeKind::Left)));
                    i += 2;
                }
            }
            b'-' | b'<' | b'>' => return Err(Error::parse(i, "undefined edge token")),
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Token::Ident(text[start..i].to_string())));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(Error::parse(i, format!("unexpected character `{ch}`")));
            }
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Collector {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    directed: BTreeSet<(usize, usize)>,
    bidirected: BTreeSet<(usize, usize)>,
}

impl Collector {
    fn vertex(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), self.labels.len() - 1);
        self.labels.len() - 1
    }

    fn connect(&mut self, from: &[usize], kind: EdgeKind, to: &[usize]) -> Result<()> {
        for &a in from {
            for &b in to {
                if a == b {
                    return Err(Error::CyclicGraph(self.labels[a].clone()));
                }
                match kind {
                    EdgeKind::Right => {
                        self.directed.insert((a, b));
                    }
                    EdgeKind::Left => {
                        self.directed.insert((b, a));
                    }
                    EdgeKind::Both => {
                        self.bidirected.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
        Ok(())
    }
}

struct Parser<'a> {
    tokens: &'a [(usize, Token)],
    pos: usize,
    end: usize,
    graph: Collector,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    /// Statements up to a closing brace (nested) or end of input. Returns every
    /// vertex mentioned, in first-mention order.
    fn statements(&mut self, nested: bool) -> Result<Vec<usize>> {
        let mut mentioned: Vec<usize> = Vec::new();
        loop {
            match self.peek() {
                None if nested => return Err(Error::parse(self.end, "unclosed `{`")),
                None => return Ok(mentioned),
                Some(Token::Close) if nested => {
                    self.pos += 1;
                    return Ok(mentioned);
                }
                Some(Token::Close) => return Err(Error::parse(self.offset(), "unmatched `}`")),
                Some(Token::Separator) => self.pos += 1,
                Some(Token::Edge(_)) => {
                    return Err(Error::parse(self.offset(), "edge without a source node"))
                }
                Some(_) => {
                    for v in self.statement()? {
                        if !mentioned.contains(&v) {
                            mentioned.push(v);
                        }
                    }
                }
            }
        }
    }

    fn statement(&mut self) -> Result<Vec<usize>> {
        let mut current = self.node()?;
        let mut all = current.clone();
        while let Some(Token::Edge(kind)) = self.peek() {
            let kind = *kind;
            self.pos += 1;
            let next = self.node()?;
            self.graph.connect(&current, kind, &next)?;
            for &v in &next {
                if !all.contains(&v) {
                    all.push(v);
                }
            }
            current = next;
        }
        Ok(all)
    }

    fn node(&mut self) -> Result<Vec<usize>> {
        match self.peek().cloned() {
            Some(Token::Ident(name)) => {
                self.pos += 1;
                Ok(vec![self.graph.vertex(&name)])
            }
            Some(Token::Open) => {
                self.pos += 1;
                self.statements(true)
            }
            _ => Err(Error::parse(self.offset(), "expected a node or subgraph")),
        }
    }
}

/// Parses graph text and projects out the latent labels.
pub fn parse_dag(src: &DagSource) -> Result<Dag> {
    if src.text.trim().is_empty() {
        return Err(Error::parse(0, "empty graph definition"));
    }
    let tokens = tokenize(&src.text)?;
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        end: src.text.len(),
        graph: Collector::default(),
    };
    parser.statements(false)?;
    let graph = parser.graph;
    let mut latent = vec![false; graph.labels.len()];
    for l in &src.latents {
        match graph.index.get(l) {
            Some(&i) => latent[i] = true,
            None => return Err(Error::UnknownVertex(l.clone())),
        }
    }
    let directed: Vec<_> = graph.directed.into_iter().collect();
    let bidirected: Vec<_> = graph.bidirected.into_iter().collect();
    graph::project(&graph.labels, &directed, &bidirected, &latent)
}

/// Shorthand for [`parse_dag`] without latents.
pub fn dag(text: &str) -> Result<Dag> {
    parse_dag(&DagSource::new(text))
}

/// Canonical text: directed edges sorted by (tail, head), then bidirected
/// edges, then isolated vertices, one statement per line.
pub fn print_dag(g: &Dag) -> String {
    let mut directed: Vec<(&str, &str)> = g
        .directed_edges()
        .map(|(a, b)| (g.label(a), g.label(b)))
        .collect();
    directed.sort_unstable();
    let mut bidirected: Vec<(&str, &str)> = g
        .bidirected_edges()
        .map(|(a, b)| {
            let (la, lb) = (g.label(a), g.label(b));
            (la.min(lb), la.max(lb))
        })
        .collect();
    bidirected.sort_unstable();
    let mut isolated: Vec<&str> = (0..g.len())
        .filter(|&v| g.parents(v).is_empty() && g.children(v).is_empty() && g.siblings(v).is_empty())
        .map(|v| g.label(v))
        .collect();
    isolated.sort_unstable();

    let mut lines: Vec<String> = Vec::new();
    lines.extend(directed.iter().map(|(a, b)| format!("{a} -> {b}")));
    lines.extend(bidirected.iter().map(|(a, b)| format!("{a} <-> {b}")));
    lines.extend(isolated.iter().map(|v| v.to_string()));
    lines.join("\n")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DagDocument {
    vertices: Vec<Vertex>,
    directed: Vec<(String, String)>,
    bidirected: Vec<(String, String)>,
}

pub fn to_json(g: &Dag) -> String {
    let sorted = g.sorted_by_label();
    let mut directed: Vec<(String, String)> = sorted
        .directed_edges()
        .map(|(a, b)| (sorted.label(a).to_string(), sorted.label(b).to_string()))
        .collect();
    directed.sort();
    let mut bidirected: Vec<(String, String)> = sorted
        .bidirected_edges()
        .map(|(a, b)| {
            let (la, lb) = (sorted.label(a), sorted.label(b));
            (la.min(lb).to_string(), la.max(lb).to_string())
        })
        .collect();
    bidirected.sort();
    let doc = DagDocument {
        vertices: sorted.vertices().to_vec(),
        directed,
        bidirected,
    };
    serde_json::to_string(&doc).expect("graph document serializes")
}

pub fn from_json(s: &str) -> Result<Dag> {
    let doc: DagDocument =
        serde_json::from_str(s).map_err(|e| Error::parse(json_offset(s, &e), e.to_string()))?;
    if doc.vertices.is_empty() {
        return Err(Error::parse(0, "graph must have at least one vertex"));
    }
    let index: HashMap<&str, usize> = doc
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (v.label.as_str(), i))
        .collect();
    let lookup = |l: &str| {
        index
            .get(l)
            .copied()
            .ok_or_else(|| Error::UnknownVertex(l.to_string()))
    };
    let mut directed = Vec::new();
    for (a, b) in &doc.directed {
        directed.push((lookup(a)?, lookup(b)?));
    }
    let mut bidirected = Vec::new();
    for (a, b) in &doc.bidirected {
        bidirected.push((lookup(a)?, lookup(b)?));
    }
    Dag::new(doc.vertices.clone(), directed, bidirected)
}

fn json_offset(s: &str, e: &serde_json::Error) -> usize {
    let (line, col) = (e.line(), e.column());
    if line == 0 {
        return 0;
    }
    let line_start: usize = s.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + col.saturating_sub(1)).min(s.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::VertexKind;

    fn confounded_chain() -> Dag {
        Dag::from_labels(
            &["X", "Z", "Y"],
            &[("X", "Z"), ("Z", "Y"), ("X", "Y")],
            &[("X", "Z")],
        )
        .unwrap()
    }

    #[test]
    fn all_spellings_agree() {
        for text in [
            "X -> Z -> Y; X -> Y; X <-> Z",
            "X -> {Z, Y}; Z -> Y; X <-> Z",
            "X -> {Z, Y}; X <-> Z -> Y;",
            "Z <-> X -> {Z -> Y}",
            "X -> Z -> Y X -> Y X <-> Z",
            "X -> Z\nZ -> Y\nX -> Y\nZ <-> X",
        ] {
            assert_eq!(dag(text).unwrap(), confounded_chain(), "{text}");
        }
    }

    #[test]
    fn reversed_and_nested_edges() {
        let g = dag("Y <- {X -> {W}} ; D -> {{Z}}").unwrap();
        let expected = Dag::from_labels(&["Y", "X", "W", "D", "Z"], &[("X", "Y"), ("W", "Y"), ("X", "W"), ("D", "Z")], &[]).unwrap();
        assert_eq!(g, expected);
    }

    #[test]
    fn self_loops_and_cycles_fail() {
        assert!(matches!(dag("X -> X"), Err(Error::CyclicGraph(_))));
        assert!(matches!(dag("X -> Y -> X"), Err(Error::CyclicGraph(_))));
        assert!(matches!(dag("X <-> X"), Err(Error::CyclicGraph(_))));
        assert!(matches!(dag("X -> {Y -> X}"), Err(Error::CyclicGraph(_))));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert_eq!(dag("X -- Y").unwrap_err(), Error::parse(2, "undefined edge token"));
        assert!(matches!(dag("X <> Y"), Err(Error::Parse { offset: 2, .. })));
        assert!(matches!(dag("X -> "), Err(Error::Parse { offset: 5, .. })));
        assert!(matches!(dag("{X -> Y"), Err(Error::Parse { .. })));
        assert!(matches!(dag("X }"), Err(Error::Parse { offset: 2, .. })));
        assert!(matches!(dag("-> Y"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(dag("1X"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(dag("   \n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn latents_are_projected() {
        let src = DagSource::new("U -> {X, Z}; X -> Z -> Y; X -> Y").with_latents(["U"]);
        assert_eq!(parse_dag(&src).unwrap(), confounded_chain());
        let src = DagSource::new("X -> Y").with_latents(["Q"]);
        assert_eq!(parse_dag(&src).unwrap_err(), Error::UnknownVertex("Q".into()));
    }

    #[test]
    fn bare_identifiers_declare_vertices() {
        let g = dag("A B -> C").unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.parents(g.require("A").unwrap()).is_empty());
    }

    #[test]
    fn printing_is_canonical() {
        assert_eq!(print_dag(&dag("X -> Y").unwrap()), "X -> Y");
        assert_eq!(print_dag(&confounded_chain()), "X -> Y\nX -> Z\nZ -> Y\nX <-> Z");
        assert_eq!(print_dag(&dag("X").unwrap()), "X");
        let g = dag("B <-> A; C").unwrap();
        assert_eq!(print_dag(&g), "A <-> B\nC");
    }

    #[test]
    fn json_round_trip_and_errors() {
        let g = dag("Y <-> X -> W -> Y <- Z <- D").unwrap();
        let text = to_json(&g);
        assert!(text.starts_with(r#"{"vertices":[{"label":"D","kind":"observed"}"#));
        assert_eq!(from_json(&text).unwrap(), g);

        let fixed = Dag::new(vec![Vertex::fixed("x"), Vertex::observed("Y")], [(0, 1)], []).unwrap();
        let back = from_json(&to_json(&fixed)).unwrap();
        assert_eq!(back.kind(back.require("x").unwrap()), VertexKind::Fixed);

        assert!(matches!(
            from_json(r#"{"vertices":[],"directed":[],"bidirected":[]}"#),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            from_json(r#"{"vertices":[{"label":"A","kind":"latent"}],"directed":[],"bidirected":[]}"#),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(from_json("{"), Err(Error::Parse { .. })));
        assert!(matches!(
            from_json(r#"{"vertices":[{"label":"A","kind":"observed"}],"directed":[["A","B"]],"bidirected":[]}"#),
            Err(Error::UnknownVertex(_))
        ));
    }
}
