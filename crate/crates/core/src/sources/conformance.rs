//! Randomized conformance client for bridges speaking the wire protocol.
//!
//! Beyond valid requests, a bridge is expected to answer a malformed request
//! with `{"error": "..."}` (or an HTTP 4xx status) and keep serving.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::dsl::{parse_step, LinearProof, NodeId, StepText};
use crate::synth::{generate_world, WorldConfig};

use super::{Bridge, SourceError, Transport};

const ODD_SENTENCES: &[&str] = &[
    "",
    "   ",
    "Ünïcödé is ✓.",
    "A \"quoted\" sentence with \\ backslashes.",
    "tab\tseparated",
    "If the cat is big then the cat is nice.",
];

const MALFORMED: &[&str] = &[
    "this is not json",
    "{",
    "[]",
    "42",
    r#"{"op": "unknown"}"#,
    r#"{"op": "score"}"#,
    r#"{"op": "score", "premises": "not a list", "conclusion": "x"}"#,
    r#"{"op": "generate", "hypothesis": "h"}"#,
    r#"{"op": "generate", "hypothesis": 3, "context": ["a"], "partial_proof": "", "n": 2}"#,
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConformanceReport {
    pub requests: usize,
    pub failures: Vec<String>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn sentences(rng: &mut ChaCha8Rng) -> Vec<String> {
    let world = generate_world(&WorldConfig { seed: rng.random(), ..Default::default() })
        .expect("default world config is valid");
    let mut pool: Vec<String> = world.facts.iter().map(|f| f.to_string()).collect();
    pool.extend(world.rules.iter().map(|r| r.to_string()));
    pool.extend(ODD_SENTENCES.iter().map(|s| s.to_string()));
    pool
}

fn pick(rng: &mut ChaCha8Rng, pool: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| pool.choose(rng).expect("nonempty pool").clone()).collect()
}

/// A random chain of steps over `context_size` sentences.
fn random_partial(rng: &mut ChaCha8Rng, pool: &[String], context_size: usize) -> LinearProof {
    let mut steps = Vec::new();
    for k in 1..=rng.random_range(0..4u32) {
        let mut premises = vec![NodeId::Sent(rng.random_range(1..=context_size as u32))];
        if k > 1 {
            premises.push(NodeId::Int(k - 1));
        }
        let text = pool.choose(rng).expect("nonempty pool").clone();
        steps.push(StepText::new(premises, NodeId::Int(k), Some(text)));
    }
    LinearProof::new(steps)
}

fn check_generate(response: &Value, n: usize) -> Result<(), String> {
    let candidates =
        response.get("candidates").and_then(Value::as_array).ok_or_else(|| format!("no candidate list in {response}"))?;
    if candidates.len() > n {
        return Err(format!("{} candidates for n = {n}", candidates.len()));
    }
    for c in candidates {
        let step = c.get("step").and_then(Value::as_str).ok_or_else(|| format!("candidate without step: {c}"))?;
        parse_step(step).map_err(|e| format!("step `{step}` does not parse: {e}"))?;
        check_unit(c.get("score"))?;
    }
    Ok(())
}

fn check_unit(score: Option<&Value>) -> Result<(), String> {
    match score.and_then(Value::as_f64) {
        Some(s) if (0.0..=1.0).contains(&s) => Ok(()),
        Some(s) => Err(format!("score {s} outside [0, 1]")),
        None => Err(format!("missing or non-numeric score: {score:?}")),
    }
}

/// Whether the reply to a malformed request is an acceptable refusal.
fn check_refusal(bridge: &Bridge, reply: Result<Value, SourceError>) -> Result<(), String> {
    match reply {
        Ok(v) if v.get("error").is_some_and(Value::is_string) => Ok(()),
        Ok(v) => Err(format!("answered without an error: {v}")),
        Err(SourceError::Protocol(m)) if matches!(bridge.transport(), Transport::Http { .. }) && m.starts_with("HTTP status 4") => Ok(()),
        Err(e) => Err(e.to_string()),
    }
}

/// Sends `rounds` rounds of one generate, one score and one malformed
/// request, each followed by a check that the bridge still answers.
pub fn check_bridge(bridge: &Arc<Bridge>, rounds: usize, seed: u64) -> ConformanceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConformanceReport::default();
    let record = |report: &mut ConformanceReport, what: &str, r: Result<(), String>| {
        report.requests += 1;
        if let Err(e) = r {
            report.failures.push(format!("{what}: {e}"));
        }
    };
    for round in 0..rounds {
        let pool = sentences(&mut rng);
        let context_size = rng.random_range(1..=30);
        let context = pick(&mut rng, &pool, context_size);
        let partial = random_partial(&mut rng, &pool, context_size);
        let n = rng.random_range(1..=20);
        let request = json!({
            "op": "generate",
            "hypothesis": pool.choose(&mut rng).expect("nonempty pool"),
            "context": context,
            "partial_proof": partial.render(),
            "n": n,
        });
        let r = bridge.request(&request).map_err(|e| e.to_string()).and_then(|v| check_generate(&v, n));
        record(&mut report, &format!("round {round} generate"), r);

        let n_premises = rng.random_range(1..=4);
        let request = json!({
            "op": "score",
            "premises": pick(&mut rng, &pool, n_premises),
            "conclusion": pool.choose(&mut rng).expect("nonempty pool"),
        });
        let r = bridge.request(&request).map_err(|e| e.to_string()).and_then(|v| check_unit(v.get("score")));
        record(&mut report, &format!("round {round} score"), r);

        let bad = MALFORMED[round % MALFORMED.len()];
        let r = check_refusal(bridge, bridge.request_text(bad));
        record(&mut report, &format!("round {round} malformed `{bad}`"), r);

        let ping = json!({"op": "score", "premises": ["Bob is red."], "conclusion": "Bob is red."});
        let r = bridge.request(&ping).map_err(|e| e.to_string()).and_then(|v| check_unit(v.get("score")));
        record(&mut report, &format!("round {round} after malformed"), r);
    }
    report
}
