//! Counterfactual identification in semi-Markovian causal graphs.
//!
//! The crate decides whether `P(gamma)` or `P(gamma | delta)` is identifiable
//! from interventional or observational distributions, returns the
//! identifying formula, and ships a brute-force oracle over finite structural
//! causal models to check such formulas numerically.

pub mod cgraph;
pub mod counterfactual;
pub mod dsl;
pub mod error;
pub mod formula;
pub mod graph;
pub mod identify;
pub mod oracle;
pub mod scalar;
mod union_find;

pub use cgraph::{make_cg, parallel_worlds, CounterfactualGraph, MakeCg};
pub use counterfactual::{conjoin, parse_conjunction, CfConjunction, CfVariable, SumIndex, ValueRef};
pub use dsl::{from_json, parse_dag, print_dag, to_json, DagSource};
pub use error::{Error, Result};
pub use formula::{canonicalize, Functional, ProbTerm, Style};
pub use graph::{latent_project, Dag, NodeSet, Vertex, VertexKind, VertexPartition};
pub use identify::{
    id_star, idc_star, identifiable, interventional_id, interventional_idc, DataLevel,
    Identification, QueryResult,
};
pub use oracle::random_scm;
pub use scalar::Probability;

/// A model evaluated in double precision.
pub type Scm = oracle::Scm<f64>;

/// A model evaluated in exact rational arithmetic.
pub type ExactScm = oracle::Scm<num_rational::BigRational>;
