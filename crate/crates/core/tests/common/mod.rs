#![allow(dead_code)]

use std::collections::HashMap;

use proofgraph_core::graph::NodeKind;
use proofgraph_core::{ExecutionOutcome, LinearProof, NodeId, NodeRef, ProofGraph, ProofTree, StepText, Target};
use rand::seq::{IndexedRandom, IteratorRandom};
use rand::Rng;

/// What went wrong in a fuzzed step sequence, if anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzStats {
    pub steps: usize,
    pub cycles: usize,
    pub inconsistent: usize,
    pub monotonicity_violations: usize,
    pub decreases: usize,
    pub adversarial: usize,
}

const SENTENCES: &[&str] = &["p", "q", "r", "s", "t", "u", "v", "w"];

fn random_score<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..4) {
        0 => 1.0,
        1 => [0.25, 0.5, 0.75][rng.random_range(0..3)],
        _ => rng.random_range(0.0..=1.0),
    }
}

/// Executes `len` random steps, a third of them trying to conclude an
/// ancestor of one of their own premises, checking the graph invariants
/// after every one.
pub fn fuzz_graph<R: Rng>(rng: &mut R, len: usize) -> (ProofGraph, FuzzStats) {
    let m = rng.random_range(2..7);
    let context: Vec<String> = (0..m).map(|i| format!("fact {i}")).collect();
    let mut g = ProofGraph::new("goal", &context);
    let mut stats = FuzzStats::default();
    for _ in 0..len {
        let usable: Vec<NodeRef> = g.nodes().filter(|(_, n)| n.kind != NodeKind::Hypothesis).map(|(r, _)| r).collect();
        let k = rng.random_range(1..=3.min(usable.len()));
        let premises: Vec<NodeRef> = usable.choose_multiple(rng, k).copied().collect();
        let ancestors: Vec<NodeRef> = premises
            .iter()
            .flat_map(|p| g.predecessors(*p))
            .chain(premises.iter().copied())
            .filter(|a| g.node(*a).kind == NodeKind::Intermediate)
            .collect();
        let target = if !ancestors.is_empty() && rng.random_bool(0.33) {
            stats.adversarial += 1;
            Target::Sentence(g.node(*ancestors.choose(rng).unwrap()).sentence.clone())
        } else if rng.random_bool(0.25) {
            Target::Hypothesis
        } else {
            Target::Sentence(SENTENCES.choose(rng).unwrap().to_string())
        };
        let before: HashMap<NodeRef, f64> = g.nodes().map(|(r, n)| (r, n.score)).collect();
        let outcome = g.execute(&premises, &target, random_score(rng)).expect("valid step");
        stats.steps += 1;
        if !g.is_acyclic() {
            stats.cycles += 1;
        }
        if !g.is_consistent() {
            stats.inconsistent += 1;
        }
        stats.monotonicity_violations += monotonicity_violations(&g);
        stats.decreases += before.iter().filter(|(r, s)| g.node(**r).score < **s).count();
        if outcome == ExecutionOutcome::NoOp && before.len() != g.len() {
            stats.inconsistent += 1;
        }
    }
    (g, stats)
}

pub fn monotonicity_violations(g: &ProofGraph) -> usize {
    g.nodes()
        .map(|(u, n)| g.predecessors(u).into_iter().filter(|v| n.score > g.node(*v).score).count())
        .sum()
}

/// A random proof tree over `context_size` sentences with at most
/// `max_steps` steps.
pub fn random_tree<R: Rng>(rng: &mut R, context_size: usize, max_steps: usize) -> ProofTree {
    let n_steps = rng.random_range(1..=max_steps);
    let mut steps: Vec<StepText> = Vec::new();
    let mut open: Vec<NodeId> = Vec::new();
    for i in 0..n_steps {
        let last = i + 1 == n_steps;
        let mut premises: Vec<NodeId> = Vec::new();
        if last {
            premises.append(&mut open);
        } else if !open.is_empty() && rng.random_bool(0.6) {
            let j = rng.random_range(0..open.len());
            premises.push(open.swap_remove(j));
        }
        let extra = if premises.is_empty() { rng.random_range(1..=3) } else { rng.random_range(0..=2) };
        for k in (1..=context_size as u32).choose_multiple(rng, extra) {
            premises.push(NodeId::Sent(k));
        }
        let (conclusion, text) = if last {
            (NodeId::Hypothesis, None)
        } else {
            let words = ["bob", "is", "big", "red", "the", "cat", "nice", "cold"];
            let text: Vec<&str> = (0..rng.random_range(1..5)).map(|_| *words.choose(rng).unwrap()).collect();
            (NodeId::Int(i as u32 + 1), Some(text.join(" ")))
        };
        if conclusion.is_int() {
            open.push(conclusion);
        }
        steps.push(StepText::new(premises, conclusion, text));
    }
    ProofTree::new("h", LinearProof::new(steps)).expect("generated tree is valid")
}
