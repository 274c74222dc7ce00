//! Command-line front end: parses a graph and a query, runs identification
//! and optionally checks the formula against random models.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use cfid_core::{
    from_json, identifiable, parse_conjunction, parse_dag, random_scm, CfConjunction, DagSource,
    DataLevel, Error, QueryResult, Scm, Style,
};

/// Largest tolerated gap between a formula and the brute-force value.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

pub mod exit {
    pub const IDENTIFIABLE: i32 = 0;
    pub const NOT_IDENTIFIABLE: i32 = 1;
    pub const UNDEFINED: i32 = 2;
    pub const INPUT_ERROR: i32 = 3;
    pub const ORACLE_MISMATCH: i32 = 4;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphSource {
    Inline(String),
    File(PathBuf),
}

impl FromStr for GraphSource {
    type Err = std::convert::Infallible;

    /// `@path` names a file, anything else is graph text.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.strip_prefix('@') {
            Some(path) => GraphSource::File(path.into()),
            None => GraphSource::Inline(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Latex,
    Do,
    Json,
}

/// Random models to test an identified formula against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleCheck {
    pub domain: u32,
    pub seeds: u64,
    pub base: u64,
}

impl Default for OracleCheck {
    fn default() -> Self {
        OracleCheck {
            domain: 2,
            seeds: 100,
            base: 42,
        }
    }
}

impl FromStr for OracleCheck {
    type Err = String;

    /// Comma-separated `n=`, `seeds=` and `base=` settings; missing keys keep
    /// their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = OracleCheck::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, found `{part}`"))?;
            let bad = |_| format!("`{value}` is not a non-negative integer");
            match key.trim() {
                "n" => out.domain = value.trim().parse().map_err(bad)?,
                "seeds" => out.seeds = value.trim().parse().map_err(bad)?,
                "base" => out.base = value.trim().parse().map_err(bad)?,
                other => return Err(format!("unknown setting `{other}`")),
            }
        }
        if out.domain < 2 {
            return Err("domain size n must be at least 2".into());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliConfig {
    pub graph: GraphSource,
    pub latents: Vec<String>,
    pub gamma: String,
    pub delta: Option<String>,
    pub data: DataLevel,
    pub format: Format,
    pub oracle_check: Option<OracleCheck>,
}

/// What a run prints and how it exits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn input_error(message: String) -> Self {
        Outcome {
            code: exit::INPUT_ERROR,
            stdout: String::new(),
            stderr: format!("error: {message}\n"),
        }
    }
}

/// Describes a parse error with the offending text and a caret under it.
fn located(what: &str, text: &str, e: &Error) -> String {
    match e {
        Error::Parse { offset, message } => {
            let col = text[..(*offset).min(text.len())].chars().count();
            format!("{what}: {message}\n  {text}\n  {}^", " ".repeat(col))
        }
        other => format!("{what}: {other}"),
    }
}

fn query_text(result: &QueryResult) -> String {
    match &result.condition {
        Some(d) => format!("P({}|{})", result.query.render(), d.render()),
        None => format!("P({})", result.query.render()),
    }
}

pub fn run(config: &CliConfig) -> Outcome {
    let text = match &config.graph {
        GraphSource::Inline(t) => t.clone(),
        GraphSource::File(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return Outcome::input_error(format!("cannot read {}: {e}", path.display())),
        },
    };
    let graph = if text.trim_start().starts_with('{') {
        from_json(&text)
    } else {
        parse_dag(&DagSource::new(text.as_str()).with_latents(config.latents.iter().cloned()))
    };
    let g = match graph {
        Ok(g) => g,
        Err(e) => return Outcome::input_error(located("graph", &text, &e)),
    };
    let gamma = match parse_conjunction(&config.gamma) {
        Ok(c) if c.is_empty() => return Outcome::input_error("the query is empty".into()),
        Ok(c) => c,
        Err(e) => return Outcome::input_error(located("gamma", &config.gamma, &e)),
    };
    let delta = match &config.delta {
        None => None,
        Some(s) => match parse_conjunction(s) {
            Ok(c) => Some(c),
            Err(e) => return Outcome::input_error(located("delta", s, &e)),
        },
    };
    let result = match identifiable(&g, &gamma, delta.as_ref(), config.data) {
        Ok(r) => r,
        Err(e) => return Outcome::input_error(e.to_string()),
    };

    let mut stdout = String::new();
    let code = if result.undefined {
        exit::UNDEFINED
    } else if result.identifiable {
        exit::IDENTIFIABLE
    } else {
        exit::NOT_IDENTIFIABLE
    };
    match config.format {
        Format::Json => {
            let json = serde_json::to_string_pretty(&result).expect("query results serialize");
            writeln!(stdout, "{json}").unwrap();
        }
        Format::Latex | Format::Do => {
            let style = if config.format == Format::Do { Style::Do } else { Style::Subscript };
            let query = query_text(&result);
            match &result.formula {
                _ if result.undefined => writeln!(stdout, "The query {query} is undefined.").unwrap(),
                Some(f) => {
                    writeln!(stdout, "The query {query} is identifiable from {}.", result.data.describe()).unwrap();
                    writeln!(stdout, "Formula: {}", f.render(style)).unwrap();
                }
                None => writeln!(
                    stdout,
                    "The query {query} is not identifiable from {}.",
                    result.data.describe()
                )
                .unwrap(),
            }
        }
    }

    let mut stderr = String::new();
    let Some(check) = config.oracle_check else {
        return Outcome { code, stdout, stderr };
    };
    let Some(formula) = &result.formula else {
        return Outcome { code, stdout, stderr };
    };
    // JSON output stays machine readable, so the check goes to stderr there.
    let mut report = String::new();
    let mut mismatch = false;
    for seed in check.base..check.base + check.seeds {
        let line = match oracle_gap(&g, check.domain, seed, formula, &gamma, delta.as_ref()) {
            Ok(Some(gap)) => {
                mismatch |= gap > ORACLE_TOLERANCE;
                format!("seed {seed}: |formula - brute force| = {gap:.3e}")
            }
            Ok(None) => format!("seed {seed}: condition has probability zero, skipped"),
            Err(e) => return Outcome::input_error(format!("oracle check: {e}")),
        };
        writeln!(report, "{line}").unwrap();
    }
    if mismatch {
        writeln!(report, "oracle check failed: gap above {ORACLE_TOLERANCE:e}").unwrap();
    }
    if config.format == Format::Json {
        stderr.push_str(&report);
    } else {
        stdout.push_str(&report);
    }
    Outcome {
        code: if mismatch { exit::ORACLE_MISMATCH } else { code },
        stdout,
        stderr,
    }
}

/// Gap between the formula and brute force on one random model, or `None`
/// when the condition is impossible in that model.
fn oracle_gap(
    g: &cfid_core::Dag,
    domain: u32,
    seed: u64,
    formula: &cfid_core::Functional,
    gamma: &CfConjunction,
    delta: Option<&CfConjunction>,
) -> Result<Option<f64>, Error> {
    let m: Scm = random_scm(g, domain, seed)?;
    let truth = match m.cf_probability(gamma, delta) {
        Ok(p) => p,
        Err(Error::ZeroConditioningEvent) => return Ok(None),
        Err(e) => return Err(e),
    };
    match m.evaluate_functional(formula) {
        Ok(v) => Ok(Some((v - truth).abs())),
        // An observational formula may condition on an event this model
        // never produces.
        Err(Error::ZeroConditioningEvent) => Ok(None),
        Err(e) => Err(e),
    }
}
