use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proofgraph_core::eval::Prediction;
use proofgraph_core::synth::{read_jsonl, Answer, TaskInstance};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_proofgraph"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("PROOFGRAPH_")) {
        c.env_remove(k);
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn load(path: &Path) -> Vec<TaskInstance> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn overall(path: &Path) -> f64 {
    report(path)["aggregate"]["overall_allcorrect"].as_f64().unwrap()
}

#[test]
fn gen_data_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(&dir, "a.jsonl"), p(&dir, "b.jsonl"));
    ok(&["gen-data", "--n", "100", "--seed", "7", "--out", s(&a)]);
    ok(&["gen-data", "--n", "100", "--seed", "7", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(load(&a).len(), 100);
    let c = p(&dir, "c.jsonl");
    ok(&["gen-data", "--n", "100", "--seed", "8", "--out", s(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn distractor_count() {
    let dir = TempDir::new().unwrap();
    let path = p(&dir, "d.jsonl");
    ok(&["gen-data", "--n", "60", "--distractors", "22", "--seed", "1", "--out", s(&path)]);
    let data = load(&path);
    let mut checked = 0;
    for inst in &data {
        let own = match inst.gold_tree() {
            Some(tree) => tree.leaves().len(),
            None => inst.depth.unwrap() as usize + 1,
        };
        assert_eq!(inst.context.len(), own + 22, "{}", inst.id);
        checked += inst.gold_proof.is_some() as usize;
    }
    assert!(checked >= 40);
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["gen-data", "--depths", "4"]).status.code(), Some(1));
    assert_eq!(run(&["gen-data", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["search"]).status.code(), Some(1));
    let cfg = p(&dir, "c.toml");
    std::fs::write(&cfg, "depths = [0, 4]\n").unwrap();
    assert_eq!(run(&["--config", s(&cfg), "gen-data"]).status.code(), Some(1));
    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&["--config", s(&cfg), "gen-data"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn help_is_stable() {
    let a = run(&["search", "--help"]).stdout;
    assert_eq!(a, run(&["search", "--help"]).stdout);
    assert!(String::from_utf8(a).unwrap().contains("PROOFGRAPH_NO_SEARCH"));
}

#[test]
fn data_and_bridge_errors() {
    let dir = TempDir::new().unwrap();
    let bad = p(&dir, "bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    assert_eq!(run(&["search", "--data", s(&bad)]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--data", s(&bad), "--predictions", s(&bad)]).status.code(), Some(2));

    let data = p(&dir, "d.jsonl");
    ok(&["gen-data", "--n", "3", "--out", s(&data)]);
    let out = p(&dir, "p.jsonl");
    let r = run(&["search", "--data", s(&data), "--prover", "external", "--endpoint", "/nonexistent/bridge", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));
    // Failures are recorded and the run still writes every instance.
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 3);
    assert!(String::from_utf8_lossy(&r.stderr).contains("failed synth-00002"));

    let preds = p(&dir, "bad_preds.jsonl");
    std::fs::write(&preds, r#"{"id":"synth-00000","proof":"sent1 -> nowhere","proof_score":1.0,"iterations":0}"#).unwrap();
    assert_eq!(run(&["eval", "--data", s(&data), "--predictions", s(&preds)]).status.code(), Some(2));
}

#[test]
fn config_file_env_and_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "c.toml");
    std::fs::write(&cfg, "seed = 3\nn = 50\n[gen-data]\nn = 5\n[search]\nmax_iterations = 2\n").unwrap();
    let a = p(&dir, "a.jsonl");
    ok(&["--config", s(&cfg), "gen-data", "--n", "4", "--out", s(&a)]);
    assert_eq!(load(&a).len(), 4);
    let b = p(&dir, "b.jsonl");
    ok(&["--config", s(&cfg), "gen-data", "--out", s(&b)]);
    assert_eq!(load(&b).len(), 5);
    let c = p(&dir, "c.jsonl");
    ok(&["gen-data", "--n", "5", "--seed", "3", "--out", s(&c)]);
    assert_eq!(std::fs::read(&b).unwrap(), std::fs::read(&c).unwrap());

    let json = p(&dir, "c.json");
    std::fs::write(&json, r#"{"gen-data": {"n": 6}}"#).unwrap();
    let d = p(&dir, "d.jsonl");
    let out = bin().args(["--config", s(&json), "gen-data", "--out", s(&d)]).env("PROOFGRAPH_SEED", "3").output().unwrap();
    assert!(out.status.success());
    assert_eq!(load(&d).len(), 6);
    assert_eq!(load(&d)[..5], load(&c)[..]);
}

fn gold_predictions(data: &[TaskInstance]) -> String {
    data.iter()
        .map(|i| {
            let gold = i.gold_proof.as_ref().map(|g| proofgraph_core::serialize_proof(g).unwrap());
            let (proof, neg) = match i.answer {
                Some(Answer::Disproved) => (None, gold),
                Some(Answer::Unknown) => (None, None),
                _ => (gold, None),
            };
            let pred = Prediction {
                id: i.id.clone(),
                proof_score: proof.is_some() as u8 as f64,
                negated_score: Some(neg.is_some() as u8 as f64),
                proof,
                negated_proof: neg,
                iterations: 0,
            };
            serde_json::to_string(&pred).unwrap() + "\n"
        })
        .collect()
}

#[test]
fn eval_gold_empty_and_determinism() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.jsonl");
    ok(&["gen-data", "--n", "40", "--seed", "2", "--out", s(&data)]);
    let preds = p(&dir, "gold.jsonl");
    std::fs::write(&preds, gold_predictions(&load(&data))).unwrap();
    let (r1, r2, csv) = (p(&dir, "r1.json"), p(&dir, "r2.json"), p(&dir, "r.csv"));
    ok(&["eval", "--data", s(&data), "--predictions", s(&preds), "--out", s(&r1), "--csv", s(&csv)]);
    ok(&["eval", "--data", s(&data), "--predictions", s(&preds), "--out", s(&r2)]);
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
    let agg = &report(&r1)["aggregate"];
    for key in ["leaves_f1", "steps_f1", "interm_f1", "leaves_allcorrect", "steps_allcorrect", "interm_allcorrect", "overall_allcorrect", "answer_accuracy"] {
        assert_eq!(agg[key].as_f64(), Some(100.0), "{key}");
    }
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("metric,N/A,0,1,2,3,All\n"));

    let empty = p(&dir, "empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let r3 = p(&dir, "r3.json");
    let out = ok(&["eval", "--data", s(&data), "--predictions", s(&empty), "--out", s(&r3)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let agg = &report(&r3)["aggregate"];
    for key in ["leaves_f1", "steps_f1", "interm_f1", "overall_allcorrect"] {
        assert_eq!(agg[key].as_f64(), Some(0.0), "{key}");
    }
}

#[test]
fn search_pipeline_and_ablations() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.jsonl");
    ok(&["gen-data", "--n", "60", "--seed", "11", "--out", s(&data)]);
    let score = |extra: &[&str], name: &str| {
        let preds = p(&dir, &format!("{name}.jsonl"));
        let rep = p(&dir, &format!("{name}.json"));
        let mut args = vec!["search", "--data", s(&data), "--seed", "5", "--out", s(&preds)];
        args.extend_from_slice(extra);
        ok(&args);
        ok(&["eval", "--data", s(&data), "--predictions", s(&preds), "--out", s(&rep)]);
        overall(&rep)
    };
    assert_eq!(score(&[], "exact"), 100.0);
    let search = score(&["--prover", "noisy"], "noisy");
    let greedy = score(&["--prover", "noisy", "--no-search"], "greedy");
    assert!(search > greedy, "search {search} vs greedy {greedy}");
    let verifier_only = score(&["--prover", "noisy", "--score-mix", "verifier-only"], "vo");
    assert!((verifier_only - search).abs() <= 5.0, "{verifier_only} vs {search}");

    // Parallel runs write the same bytes in input order.
    let trace = p(&dir, "t.jsonl");
    score(&["--prover", "noisy", "--jobs", "4", "--trace", s(&trace)], "par");
    assert_eq!(std::fs::read(p(&dir, "par.jsonl")).unwrap(), std::fs::read(p(&dir, "noisy.jsonl")).unwrap());
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() > 0);
}

#[test]
fn gen_negatives_runs() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.jsonl");
    ok(&["gen-data", "--n", "20", "--out", s(&data)]);
    let (a, b) = (p(&dir, "a.jsonl"), p(&dir, "b.jsonl"));
    ok(&["gen-negatives", "--data", s(&data), "--seed", "4", "--out", s(&a)]);
    ok(&["gen-negatives", "--data", s(&data), "--seed", "4", "--out", s(&b)]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.contains(r#""label":"pos""#) && text.contains(r#""label":"neg""#));
}

#[test]
fn bridge_check_exit_codes() {
    let stub = format!("python3 {}/../core/tests/fixtures/stub_bridge.py", env!("CARGO_MANIFEST_DIR"));
    ok(&["bridge-check", "--endpoint", &format!("{stub} ok"), "--rounds", "10"]);
    assert_eq!(run(&["bridge-check", "--endpoint", &format!("{stub} bad_score"), "--rounds", "2"]).status.code(), Some(3));
}
