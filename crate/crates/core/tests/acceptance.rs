//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cfid_core::dsl::dag;
use cfid_core::oracle::{Latent, Variable};
use cfid_core::{
    from_json, id_star, idc_star, identifiable, interventional_id, make_cg, parallel_worlds,
    parse_conjunction, print_dag, random_scm, to_json, CfConjunction, CfVariable, DataLevel, Dag,
    Error, ExactScm, Functional, Identification, MakeCg, NodeSet, Probability, Scm, Style, ValueRef,
};
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-9;

/// Triples per soundness sweep; `CFID_SWEEP` overrides it.
fn sweep_size() -> u64 {
    std::env::var("CFID_SWEEP")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000)
}

/// Seed of the bow-graph model whose causal effect differs from the
/// observational conditional. Found by scanning seeds upward from 0.
const WITNESS_SEED: u64 = 3;

fn q(s: &str) -> CfConjunction {
    parse_conjunction(s).expect("valid conjunction")
}

fn mediated_graph() -> Dag {
    dag("Y <-> X -> W -> Y <- Z <- D").expect("valid graph")
}

fn flagship_gamma() -> CfConjunction {
    q("Y[X=0]=0 & X=1 & Z[D=0]=0 & D=0")
}

fn confounded_chain() -> Dag {
    dag("X -> Z -> Y; X -> Y; X <-> Z").expect("valid graph")
}

fn labels(items: &[&[&str]]) -> BTreeSet<BTreeSet<String>> {
    items
        .iter()
        .map(|b| b.iter().map(|s| s.to_string()).collect())
        .collect()
}

fn render(r: &Identification) -> String {
    match r {
        Identification::Identified(f) => f.render(Style::Subscript),
        other => format!("{other:?}"),
    }
}

fn flagship() -> String {
    let start = Instant::now();
    let r = id_star(&mediated_graph(), &flagship_gamma()).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(render(&r), "\\sum_{w} P_{w,z}(y,x')P_{x}(w)P_{d}(z)P(d)");
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    format!("{} in {elapsed:?}", render(&r))
}

fn flagship_fail() -> String {
    let g2 = dag("Y <-> X -> W -> Y <- Z <- D; X -> Y").unwrap();
    let start = Instant::now();
    let r = id_star(&g2, &flagship_gamma()).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(r, Identification::Fail);
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    format!("Fail in {elapsed:?}")
}

fn conditional() -> String {
    let gamma = q("Y[X=0]=0");
    let delta = q("Z[X=0]=0 & X=1");
    let r = idc_star(&confounded_chain(), &gamma, &delta).unwrap();
    assert_eq!(render(&r), "P_{x,z}(y)");
    let obs = identifiable(&confounded_chain(), &gamma, Some(&delta), DataLevel::Observations).unwrap();
    assert!(obs.identifiable);
    let f = obs.formula.expect("formula").render(Style::Subscript);
    assert_eq!(f, "P(y|x,z)");
    format!("{} and {f}", render(&r))
}

fn make_cg_golden() -> String {
    let MakeCg::Built(out) = make_cg(&mediated_graph(), &flagship_gamma()).unwrap() else {
        panic!("make-cg did not build a graph")
    };
    let g = &out.graph.graph;
    let names: BTreeSet<&str> = g.vertices().iter().map(|v| v.label.as_str()).collect();
    assert_eq!(names, BTreeSet::from(["x", "W_{x}", "Y_{x}", "Z", "D", "X"]));
    let edge = |a: usize, b: usize| (g.label(a).to_string(), g.label(b).to_string());
    let directed: BTreeSet<(String, String)> = g.directed_edges().map(|(a, b)| edge(a, b)).collect();
    let expected: BTreeSet<(String, String)> = [("x", "W_{x}"), ("W_{x}", "Y_{x}"), ("Z", "Y_{x}"), ("D", "Z")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    assert_eq!(directed, expected);
    let bidirected: Vec<(String, String)> = g.bidirected_edges().map(|(a, b)| edge(a, b)).collect();
    assert_eq!(bidirected.len(), 1);
    let (a, b) = &bidirected[0];
    assert_eq!(
        BTreeSet::from([a.as_str(), b.as_str()]),
        BTreeSet::from(["X", "Y_{x}"])
    );
    assert_eq!(out.conj.render(), "y_{x} /\\ x' /\\ z /\\ d");
    out.conj.render()
}

fn components_golden() -> String {
    let pw = parallel_worlds(&mediated_graph(), &flagship_gamma()).unwrap();
    let comps = pw.graph.c_components().label_blocks(&pw.graph);
    let expected = labels(&[
        &["X", "X_{d}", "Y", "Y_{x}", "Y_{d}"],
        &["D", "D_{x}"],
        &["Z", "Z_{x}", "Z_{d}"],
        &["W", "W_{x}", "W_{d}"],
    ]);
    assert_eq!(comps, expected);
    format!("{} components", comps.len())
}

/// Random graph, model and query for one sweep triple.
fn triple(seed: u64) -> (Dag, Scm, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=5);
    let g = common::random_dag(&mut rng, n, 0.5, 2);
    let m = random_scm::<f64>(&g, 2, rng.gen()).unwrap();
    (g, m, rng)
}

fn check_formula(m: &Scm, f: &Functional, truth: f64, context: &str) {
    if f.is_zero() {
        assert!(truth == 0.0, "{context}: formula is 0 but probability is {truth}");
        return;
    }
    let value = m
        .evaluate_functional(f)
        .unwrap_or_else(|e| panic!("{context}: evaluating {}: {e}", f.render(Style::Subscript)));
    assert!(
        (value - truth).abs() <= TOLERANCE,
        "{context}: formula {} gives {value}, brute force gives {truth}",
        f.render(Style::Subscript)
    );
}

fn soundness_sweep() -> String {
    let start = Instant::now();
    let (mut identified, mut zero, mut fail) = (0, 0, 0);
    for seed in 0..sweep_size() {
        let (g, m, mut rng) = triple(seed);
        let gamma = common::random_conjunction(&mut rng, &g, 4, 3, 2);
        let context = format!("seed {seed}: {} on {}", gamma.render(), print_dag(&g).replace('\n', "; "));
        let truth = m.cf_probability(&gamma, None).unwrap();
        match id_star(&g, &gamma).unwrap() {
            Identification::Identified(f) => {
                if f.is_zero() {
                    zero += 1;
                } else {
                    identified += 1;
                }
                check_formula(&m, &f, truth, &context);
            }
            Identification::Fail => fail += 1,
            Identification::Undefined => panic!("{context}: unconditional query reported undefined"),
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    assert!(identified >= 50, "only {identified} non-trivial formulas checked");
    format!("{} triples: {identified} formulas, {zero} zero, {fail} fail, in {elapsed:?}", sweep_size())
}

fn conditional_sweep() -> String {
    let start = Instant::now();
    let (mut identified, mut undefined, mut fail, mut skipped) = (0, 0, 0, 0);
    for seed in 0..sweep_size() {
        let (g, m, mut rng) = triple(10_000 + seed);
        let gamma = common::random_conjunction(&mut rng, &g, 3, 2, 2);
        let delta: CfConjunction = if seed % 10 == 0 {
            let v = g.label(rng.gen_range(0..g.len())).to_string();
            CfVariable::new(v.clone(), 0).under(v, 1).into()
        } else {
            common::random_conjunction(&mut rng, &g, 1, 2, 2)
        };
        let context = format!(
            "seed {seed}: {} given {} on {}",
            gamma.render(),
            delta.render(),
            print_dag(&g).replace('\n', "; ")
        );
        let r = identifiable(&g, &gamma, Some(&delta), DataLevel::Interventions).unwrap();
        if delta.inconsistent() || delta.effectiveness_violation() {
            assert!(r.undefined, "{context}: inconsistent condition not reported undefined");
            undefined += 1;
            continue;
        }
        let p_delta = m.cf_probability(&delta, None).unwrap();
        if r.undefined {
            assert!(p_delta == 0.0, "{context}: undefined but P(delta) = {p_delta}");
            undefined += 1;
            continue;
        }
        if !r.identifiable {
            fail += 1;
            continue;
        }
        if p_delta == 0.0 {
            skipped += 1;
            continue;
        }
        let truth = m.cf_probability(&gamma, Some(&delta)).unwrap();
        check_formula(&m, r.formula.as_ref().expect("formula"), truth, &context);
        identified += 1;
    }
    let elapsed = start.elapsed();
    assert!(identified >= 50, "only {identified} formulas checked");
    assert!(undefined >= 30, "only {undefined} undefined conditions seen");
    format!(
        "{} triples: {identified} formulas, {undefined} undefined, {fail} fail, {skipped} with P(delta)=0, in {elapsed:?}",
        sweep_size()
    )
}

fn subsets_up_to_two(items: &[usize]) -> Vec<NodeSet> {
    let mut out = vec![NodeSet::new()];
    for (i, &a) in items.iter().enumerate() {
        out.push(NodeSet::from([a]));
        for &b in &items[i + 1..] {
            out.push(NodeSet::from([a, b]));
        }
    }
    out
}

fn d_separation_equivalence() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut queries = 0usize;
    let mut separated = 0usize;
    for _ in 0..100 {
        let n = rng.gen_range(2..=8);
        let g = common::random_dag(&mut rng, n, 0.35, 3);
        for x in 0..n {
            for y in 0..n {
                if x == y {
                    continue;
                }
                let rest: Vec<usize> = (0..n).filter(|&v| v != x && v != y).collect();
                for z in subsets_up_to_two(&rest) {
                    let xs = NodeSet::from([x]);
                    let ys = NodeSet::from([y]);
                    let fast = g.d_separated(&xs, &ys, &z).unwrap();
                    let slow = common::brute_force_separated(&g, &xs, &ys, &z);
                    assert_eq!(
                        fast,
                        slow,
                        "{} vs {} given {:?} on {}",
                        g.label(x),
                        g.label(y),
                        g.labels_of(&z),
                        print_dag(&g).replace('\n', "; ")
                    );
                    queries += 1;
                    separated += usize::from(fast);
                }
            }
        }
    }
    format!("{queries} queries on 100 graphs, {separated} separated")
}

fn dsl_conformance() -> String {
    let spellings = [
        "X -> Z -> Y; X -> Y; X <-> Z",
        "X -> {Z, Y}; Z -> Y; X <-> Z",
        "X -> {Z, Y}; X <-> Z -> Y;",
        "Z <-> X -> {Z -> Y}",
    ];
    let canonical: Vec<String> = spellings.iter().map(|s| print_dag(&dag(s).unwrap())).collect();
    for c in &canonical {
        assert_eq!(c, "X -> Y\nX -> Z\nZ -> Y\nX <-> Z");
    }
    let first = dag(spellings[0]).unwrap().sorted_by_label();
    for s in &spellings[1..] {
        assert_eq!(dag(s).unwrap().sorted_by_label(), first);
    }
    for cyclic in ["X -> X", "X -> Y -> X"] {
        assert!(
            matches!(dag(cyclic), Err(Error::CyclicGraph(_))),
            "{cyclic} was accepted"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let g = common::random_dag(&mut rng, n, 0.4, 3);
        let text = print_dag(&g);
        let back = dag(&text).unwrap();
        assert_eq!(print_dag(&back), text);
        assert_eq!(back.sorted_by_label(), g.sorted_by_label());
        assert_eq!(from_json(&to_json(&g)).unwrap(), g);
    }
    "4 spellings agree, cycles rejected, 100 round-trips".to_string()
}

/// Model with the same observational joint over `X -> Y` as `m` in which
/// `Y` responds to `X` through an independent response-function latent, so
/// the causal effect equals the observational conditional.
fn independent_response(m: &ExactScm) -> ExactScm {
    let obs = m.interventional_table(&BTreeMap::new()).unwrap();
    let p = |event: &[(&str, u32)]| {
        let e: Vec<(String, u32)> = event.iter().map(|(v, l)| (v.to_string(), *l)).collect();
        obs.probability(&e).unwrap()
    };
    let px = [p(&[("X", 0)]), p(&[("X", 1)])];
    let cond = |x: u32, y: u32| p(&[("X", x), ("Y", y)]) / px[x as usize].clone();
    let mut response = Vec::new();
    for a in 0..2 {
        for b in 0..2 {
            response.push(cond(0, a) * cond(1, b));
        }
    }
    // Row index x * 4 + r with r = a * 2 + b; Y reads a under x = 0 and b under x = 1.
    let mut y_table = Vec::new();
    for x in 0..2u32 {
        for r in 0..4u32 {
            y_table.push(if x == 0 { r / 2 } else { r % 2 });
        }
    }
    ExactScm {
        variables: vec![
            Variable { name: "X".into(), domain: 2 },
            Variable { name: "Y".into(), domain: 2 },
        ],
        parents: [
            ("X".to_string(), vec!["RX".to_string()]),
            ("Y".to_string(), vec!["X".to_string(), "RY".to_string()]),
        ]
        .into(),
        mechanisms: [("X".to_string(), vec![0, 1]), ("Y".to_string(), y_table)].into(),
        latents: vec![
            Latent { name: "RX".into(), domain: 2, probs: px.to_vec() },
            Latent { name: "RY".into(), domain: 4, probs: response },
        ],
    }
}

fn interventional_anchors() -> String {
    let y = vec![("Y".to_string(), ValueRef::Level(0))];
    let xz: BTreeMap<String, ValueRef> =
        [("X".to_string(), ValueRef::Level(0)), ("Z".to_string(), ValueRef::Level(0))].into();
    let f = interventional_id(&confounded_chain(), &y, &xz).unwrap().expect("identifiable");
    assert_eq!(f.render(Style::Subscript), "P(y|x,z)");

    let bow = dag("X -> Y; X <-> Y").unwrap();
    let x: BTreeMap<String, ValueRef> = [("X".to_string(), ValueRef::Level(0))].into();
    assert!(interventional_id(&bow, &y, &x).unwrap().is_none());

    let m1 = random_scm::<BigRational>(&bow, 2, WITNESS_SEED).unwrap();
    let m2 = independent_response(&m1);
    assert_eq!(
        m1.interventional_table(&BTreeMap::new()).unwrap(),
        m2.interventional_table(&BTreeMap::new()).unwrap()
    );
    let effect = |m: &ExactScm| {
        m.interventional_table(&x)
            .unwrap()
            .probability(&[("Y".to_string(), 0)])
            .unwrap()
    };
    let gap = Signed::abs(&(effect(&m1) - effect(&m2)));
    assert!(!gap.is_zero());
    assert!(gap.to_f64() >= 0.05, "witness gap {gap}");
    format!("P(y|x,z) rewrite, bow fails, witness gap {gap}")
}

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 10] = [
        ("flagship query identified", flagship),
        ("flagship query fails with X -> Y", flagship_fail),
        ("conditional query", conditional),
        ("counterfactual graph construction", make_cg_golden),
        ("parallel worlds components", components_golden),
        ("oracle soundness sweep", soundness_sweep),
        ("conditional soundness sweep", conditional_sweep),
        ("d-separation against path enumeration", d_separation_equivalence),
        ("graph text conformance", dsl_conformance),
        ("interventional anchors and witness pair", interventional_anchors),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail}) [{elapsed:.2?}]", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL criterion {}: {name}: {msg} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
