mod common;

use std::collections::{BTreeSet, HashSet};

use proofgraph_core::bm25::Bm25Index;
use proofgraph_core::dsl::{parse_proof, parse_step, serialize_proof};
use proofgraph_core::eval::{align_trees, score_example, TokenF1};
use proofgraph_core::graph::{Fingerprint, NodeKind};
use proofgraph_core::lang::{parse_sentence, Rule, Sentence};
use proofgraph_core::negatives::{extract_positives, make_negatives, FlavorWeights, Label, Perturbation};
use proofgraph_core::search::{mix_scores, run_greedy, run_search_traced, ScoreMix, SearchConfig};
use proofgraph_core::sources::{
    ExactProver, ExactVerifier, NoisyProver, OracleProver, OracleVerifier, StepScorer, StepSource,
};
use proofgraph_core::synth::{generate_dataset, generate_world, Answer, DatasetConfig, Distractors, World, WorldConfig};
use proofgraph_core::{LinearProof, NodeId, ProofGraph, Target};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_dataset(seed: u64) -> Vec<proofgraph_core::synth::TaskInstance> {
    generate_dataset(&DatasetConfig {
        n_instances: 12,
        distractors: Distractors::Count(8),
        seed,
        ..Default::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dsl_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = common::random_tree(&mut rng, 10, 6);
        let text = serialize_proof(tree.proof()).unwrap();
        prop_assert_eq!(&parse_proof(&text, 10).unwrap(), tree.proof());
        prop_assert_eq!(serialize_proof(&parse_proof(&text, 10).unwrap()).unwrap(), text);
    }

    #[test]
    fn parser_never_panics(s in "\\PC{0,60}") {
        let _ = parse_proof(&s, 4);
        let _ = parse_step(&s);
    }

    #[test]
    fn parser_never_panics_on_dsl_like_text(s in "(sent[0-9]{1,3}|int[0-9]|hypothesis| & | -> |: [a-z ]{0,8}|;){0,10}") {
        let _ = parse_proof(&s, 4);
    }

    #[test]
    fn graph_invariants_hold(seed in any::<u64>(), len in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, s) = common::fuzz_graph(&mut rng, len);
        prop_assert_eq!(s.cycles, 0);
        prop_assert_eq!(s.inconsistent, 0);
        prop_assert_eq!(s.monotonicity_violations, 0);
        prop_assert_eq!(s.decreases, 0);
        if let Ok(tree) = g.extract_proof() {
            let concl: Vec<NodeId> = tree.steps().iter().map(|s| s.conclusion).collect();
            let unique: HashSet<NodeId> = concl.iter().copied().collect();
            prop_assert_eq!(concl.len(), unique.len());
        }
    }

    #[test]
    fn sampled_partial_proofs_are_closed(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, _) = common::fuzz_graph(&mut rng, 30);
        for _ in 0..10 {
            let p = g.draw_partial_proof(&mut rng);
            for r in &p.included {
                prop_assert_eq!(g.node(*r).kind, NodeKind::Intermediate);
                for q in g.predecessors(*r) {
                    if g.node(q).kind == NodeKind::Intermediate {
                        prop_assert!(p.included.contains(&q));
                    }
                }
            }
            let view = g.linearize(&p);
            prop_assert!(view.proof.check(g.num_facts()).is_ok());
        }
    }

    #[test]
    fn mix_is_symmetric(p in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        prop_assert_eq!(mix_scores(p, v, ScoreMix::Average).unwrap(), mix_scores(v, p, ScoreMix::Average).unwrap());
    }

    #[test]
    fn metric_symmetry_and_injectivity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_tree(&mut rng, 6, 5);
        let b = common::random_tree(&mut rng, 6, 5);
        let sim = TokenF1::default();
        let ab = score_example(&a, &b, &sim);
        let ba = score_example(&b, &a, &sim);
        prop_assert!((ab.leaves_f1 - ba.leaves_f1).abs() < 1e-12);
        prop_assert!(!ab.overall_allcorrect || (ab.leaves_allcorrect && ab.steps_allcorrect && ab.interm_allcorrect));
        let targets: Vec<NodeId> = align_trees(&a, &b).into_values().collect();
        let unique: HashSet<NodeId> = targets.iter().copied().collect();
        prop_assert_eq!(targets.len(), unique.len());
        prop_assert!(score_example(&a, &a, &sim).overall_allcorrect);
    }

    #[test]
    fn bm25_scores_non_increasing(q in "[a-d ]{1,12}", docs in prop::collection::vec("[a-e ]{0,20}", 1..8)) {
        let idx = Bm25Index::new(docs);
        let top = idx.top_k(&q, 8, &HashSet::new()).unwrap();
        for w in top.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
        }
        prop_assert!(top.iter().all(|t| t.1.is_finite() && t.1 >= 0.0));
    }
}

#[test]
fn every_closed_subset_is_sampled() {
    // Chain of three intermediates: the closed subsets are the prefixes.
    let ctx: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
    let mut g = ProofGraph::new("h", &ctx);
    let f = g.fact(1).unwrap();
    let x = g.execute(&[f], &Target::Sentence("x".into()), 0.9).unwrap();
    let proofgraph_core::ExecutionOutcome::Created(x) = x else { panic!() };
    let y = g.execute(&[x], &Target::Sentence("y".into()), 0.9).unwrap();
    let proofgraph_core::ExecutionOutcome::Created(y) = y else { panic!() };
    g.execute(&[y], &Target::Sentence("z".into()), 0.9).unwrap();

    let expected: BTreeSet<Vec<String>> = [vec![], vec!["x"], vec!["x", "y"], vec!["x", "y", "z"]]
        .into_iter()
        .map(|v| v.into_iter().map(String::from).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen = BTreeSet::new();
    for _ in 0..10_000 {
        seen.insert(g.draw_partial_proof(&mut rng).fingerprint.0);
    }
    assert_eq!(seen, expected);

    let mut explored: HashSet<Fingerprint> = HashSet::new();
    while let Some(p) = g.sample_partial_proof(&explored, &mut rng, 64) {
        explored.insert(p.fingerprint);
    }
    assert_eq!(explored.len(), 4);
}

#[test]
fn gold_proofs_verify_and_unknowns_stay_unknown() {
    for inst in small_dataset(41) {
        match inst.answer {
            Some(Answer::Unknown) => {
                let mut facts = Vec::new();
                let mut rules: Vec<Rule> = Vec::new();
                for s in &inst.context {
                    match parse_sentence(s).unwrap() {
                        Sentence::Fact(l) => facts.push(l),
                        Sentence::Rule(r) => rules.push(r),
                    }
                }
                let refs: Vec<&Rule> = rules.iter().collect();
                let closure = World::closure(facts.iter(), &refs);
                let h = proofgraph_core::lang::parse_literal(&inst.hypothesis).unwrap();
                assert!(!closure.contains_key(&h) && !closure.contains_key(&h.flipped()));
            }
            // A hypothesis given in the context is its own proof.
            Some(Answer::Proved) if inst.depth == Some(0) => {
                assert!(inst.context.contains(&inst.hypothesis));
            }
            _ => {
                let tree = inst.gold_tree().unwrap();
                for pos in extract_positives(&tree, &inst.context, &inst.id) {
                    assert_eq!(ExactVerifier.score(&pos.premises, &pos.conclusion).unwrap(), 1.0, "{}", inst.id);
                }
            }
        }
    }
}

#[test]
fn negatives_differ_and_never_reuse_premises() {
    for inst in small_dataset(42) {
        let Some(tree) = inst.gold_tree() else { continue };
        let idx = Bm25Index::new(inst.context.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights = FlavorWeights { remove: 2, swap: 2, copy: 2, negate: 1 };
        for pos in extract_positives(&tree, &inst.context, &inst.id) {
            for neg in make_negatives(&pos, &idx, &mut rng, &weights).unwrap() {
                assert_eq!(neg.label, Label::Neg);
                assert!(!neg.premises.is_empty());
                assert!(neg.premises != pos.premises || neg.conclusion != pos.conclusion);
                if neg.perturbation == Perturbation::PremiseSwapped {
                    let added: Vec<&String> = neg.premises.iter().filter(|p| !pos.premises.contains(p)).collect();
                    assert_eq!(added.len(), 1);
                }
                assert_eq!(ExactVerifier.score(&neg.premises, &neg.conclusion).unwrap(), 0.0, "{neg:?}");
            }
        }
    }
}

#[test]
fn exact_verifier_agrees_with_exact_prover() {
    let world = generate_world(&WorldConfig { n_entities: 3, n_attributes: 8, n_rules: 8, seed: 9 }).unwrap();
    let context: Vec<String> =
        world.facts.iter().map(|f| f.to_string()).chain(world.rules.iter().map(|r| r.to_string())).collect();
    let mut partial = LinearProof::default();
    let mut emitted = HashSet::new();
    loop {
        let steps = ExactProver.steps("Nobody is here.", &context, &partial);
        let Some(step) = steps.first().cloned() else { break };
        for s in &steps {
            let premises: Vec<String> = s
                .premises
                .iter()
                .map(|p| match p {
                    NodeId::Sent(k) => context[*k as usize - 1].clone(),
                    NodeId::Int(_) => {
                        partial.steps.iter().find(|x| x.conclusion == *p).unwrap().conclusion_text.clone().unwrap()
                    }
                    NodeId::Hypothesis => unreachable!(),
                })
                .collect();
            let conclusion = s.conclusion_text.clone().unwrap();
            assert_eq!(ExactVerifier.score(&premises, &conclusion).unwrap(), 1.0);
            emitted.insert((premises.iter().cloned().collect::<BTreeSet<_>>(), conclusion.clone()));
            // The same rule with any wrong conclusion is rejected.
            for other in &context {
                if other != &conclusion && !emitted.iter().any(|e| e.0 == premises.iter().cloned().collect() && &e.1 == other) {
                    assert_eq!(ExactVerifier.score(&premises, other).unwrap(), 0.0);
                }
            }
        }
        partial.steps.push(step);
    }
    assert!(!emitted.is_empty());
}

#[test]
fn oracle_sources() {
    for inst in small_dataset(43) {
        let Some(gold) = inst.gold_tree() else { continue };
        let target = gold.hypothesis().to_string();
        let prover = OracleProver::new(ExactProver, &gold, &inst.context);
        let out = prover.generate(&target, &inst.context, &LinearProof::default(), 10).unwrap();
        // With an empty partial proof only gold steps over leaves qualify.
        for c in out.iter().filter(|c| c.score == 1.0) {
            let step = parse_step(&c.step).unwrap();
            assert!(step.premises.iter().all(|p| p.is_sent()));
        }
        let verifier = OracleVerifier::new(ExactVerifier, &gold, &inst.context);
        for pos in extract_positives(&gold, &inst.context, &inst.id) {
            let oracle = verifier.score(&pos.premises, &pos.conclusion).unwrap();
            assert_eq!(oracle, 1.0);
            assert!(oracle >= ExactVerifier.score(&pos.premises, &pos.conclusion).unwrap());
        }
    }
}

#[test]
fn noisy_prover_is_reproducible() {
    for inst in small_dataset(44) {
        let a = NoisyProver::new(0.3, 0.3, 7);
        let b = NoisyProver::new(0.3, 0.3, 7);
        let p = LinearProof::default();
        assert_eq!(
            a.generate(&inst.hypothesis, &inst.context, &p, 10).unwrap(),
            b.generate(&inst.hypothesis, &inst.context, &p, 10).unwrap()
        );
    }
}

#[test]
fn search_is_monotone_deterministic_and_dominates_greedy() {
    let prover = NoisyProver::new(0.3, 0.3, 5);
    for inst in small_dataset(45) {
        let cfg = SearchConfig { seed: 12, ..Default::default() };
        let mut scores = Vec::new();
        let a = run_search_traced(&prover, &ExactVerifier, &inst.hypothesis, &inst.context, &cfg, &mut |t| {
            scores.push(t.hypothesis_score)
        })
        .unwrap();
        let b = run_search_traced(&prover, &ExactVerifier, &inst.hypothesis, &inst.context, &cfg, &mut |_| {}).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.proof, b.proof);
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
        let g = run_greedy(&prover, &ExactVerifier, &inst.hypothesis, &inst.context, &cfg).unwrap();
        assert!(a.proof_score >= g.proof_score);
        assert!(a.iterations <= cfg.max_iterations);
        if let Some(tree) = &a.proof {
            assert!(!tree.steps().is_empty());
        }
    }
}
