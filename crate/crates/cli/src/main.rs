use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{Duration, Instant};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use proofgraph_core::eval::{evaluate, read_predictions, AnswerClassifier, ClassifierChoice, Prediction, Report, TokenF1};
use proofgraph_core::negatives::{self, build_verifier_data, FlavorWeights, NegativesConfig};
use proofgraph_core::pipeline::{solve_instance, Bridges, PipelineConfig, ProverSpec, TraceRecord, VerifierSpec};
use proofgraph_core::search::{ScoreMix, SearchConfig, SearchError};
use proofgraph_core::sources::conformance::check_bridge;
use proofgraph_core::sources::{Bridge, Transport};
use proofgraph_core::synth::{self, generate_dataset, read_jsonl, DatasetConfig, Distractors, TaskInstance};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Bridge(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Bridge(_) => 3,
        }
    }
}

/// Proof search over entailment graphs.
#[derive(Parser)]
#[command(name = "proofgraph", version)]
struct Cli {
    /// TOML or JSON file of defaults; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rule-reasoning dataset.
    GenData(GenDataArgs),
    /// Build verifier training data with perturbed negatives.
    GenNegatives(GenNegativesArgs),
    /// Run proof search over a dataset.
    Search(SearchArgs),
    /// Score predictions against a gold dataset.
    Eval(EvalArgs),
    /// Fuzz an external bridge for wire protocol conformance.
    BridgeCheck(BridgeCheckArgs),
}

/// Depths in 0..=3, written `0..3`, `1,2` or `2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DepthRepr", into = "Vec<u8>")]
struct Depths(Vec<u8>);

#[derive(Deserialize)]
#[serde(untagged)]
enum DepthRepr {
    Text(String),
    List(Vec<u8>),
}

impl TryFrom<DepthRepr> for Depths {
    type Error = String;

    fn try_from(r: DepthRepr) -> Result<Self, String> {
        match r {
            DepthRepr::Text(s) => s.parse(),
            DepthRepr::List(v) => Depths::checked(v),
        }
    }
}

impl From<Depths> for Vec<u8> {
    fn from(d: Depths) -> Self {
        d.0
    }
}

impl Depths {
    fn checked(v: Vec<u8>) -> Result<Self, String> {
        match v.iter().find(|&&d| d > 3) {
            Some(d) => Err(format!("depth {d} is out of range 0..3")),
            None if v.is_empty() => Err("no depths given".into()),
            None => Ok(Depths(v)),
        }
    }
}

impl FromStr for Depths {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<u8>().map_err(|e| format!("bad depth `{t}`: {e}"));
        let v = match s.split_once("..") {
            Some((a, b)) => {
                let b = b.strip_prefix('=').unwrap_or(b);
                (num(a)?..=num(b)?).collect()
            }
            None => s.split(',').map(num).collect::<Result<_, _>>()?,
        };
        Depths::checked(v)
    }
}

/// Relative answer weights, `proved:disproved:unknown`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnswersRepr", into = "[u32; 3]")]
struct Answers([u32; 3]);

#[derive(Deserialize)]
#[serde(untagged)]
enum AnswersRepr {
    Text(String),
    List([u32; 3]),
}

impl TryFrom<AnswersRepr> for Answers {
    type Error = String;

    fn try_from(r: AnswersRepr) -> Result<Self, String> {
        match r {
            AnswersRepr::Text(s) => s.parse(),
            AnswersRepr::List(v) => Ok(Answers(v)),
        }
    }
}

impl From<Answers> for [u32; 3] {
    fn from(a: Answers) -> Self {
        a.0
    }
}

impl FromStr for Answers {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<u32> = s
            .split(':')
            .map(|t| t.trim().parse::<u32>().map_err(|e| format!("bad weight `{t}`: {e}")))
            .collect::<Result<_, _>>()?;
        let arr: [u32; 3] = parts.try_into().map_err(|_| "expected proved:disproved:unknown".to_string())?;
        Ok(Answers(arr))
    }
}

#[derive(clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct GenDataArgs {
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    attributes: Option<usize>,
    #[arg(long)]
    rules: Option<usize>,
    /// Number of instances.
    #[arg(long)]
    n: Option<usize>,
    /// Proof depths, e.g. `0..3` or `1,3`.
    #[arg(long)]
    depths: Option<Depths>,
    /// Distractor sentences added to every context.
    #[arg(long, conflicts_with = "fill_to")]
    distractors: Option<usize>,
    /// Pad every context with distractors up to this size instead.
    #[arg(long)]
    fill_to: Option<usize>,
    /// Answer mix as `proved:disproved:unknown` weights.
    #[arg(long)]
    answers: Option<Answers>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSONL; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct GenNegativesArgs {
    /// Dataset JSONL with gold proofs.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Negatives per positive with premises removed.
    #[arg(long)]
    remove: Option<usize>,
    #[arg(long)]
    swap: Option<usize>,
    #[arg(long)]
    copy: Option<usize>,
    #[arg(long)]
    negate: Option<usize>,
    /// Retrieve swap candidates from every context in the file.
    #[arg(long)]
    corpus_wide: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ProverKind {
    Exact,
    Noisy,
    Oracle,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum VerifierKind {
    Exact,
    Oracle,
    External,
}

#[derive(clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SearchArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    prover: Option<ProverKind>,
    /// Probability of dropping each valid step (noisy prover).
    #[arg(long)]
    drop: Option<f64>,
    /// Probability of injecting a hallucinated step (noisy prover).
    #[arg(long)]
    inject: Option<f64>,
    #[arg(long, value_enum)]
    verifier: Option<VerifierKind>,
    /// Bridge endpoint: an http(s) URL or a command speaking JSON lines.
    #[arg(long)]
    endpoint: Option<String>,
    /// Separate endpoint for the verifier; defaults to --endpoint.
    #[arg(long)]
    verifier_endpoint: Option<String>,
    /// Keep the greedy proof.
    #[arg(long)]
    no_search: bool,
    /// average, prover-only or verifier-only.
    #[arg(long)]
    score_mix: Option<String>,
    #[arg(long)]
    num_candidates: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    stall_limit: Option<usize>,
    #[arg(long)]
    min_improvement: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-iteration trace JSONL.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

#[derive(clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct EvalArgs {
    /// Gold dataset JSONL.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Predictions JSONL from `search`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Report JSON; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Depth breakdown as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// `reference`, `fit`, or a JSON file holding classifier weights.
    #[arg(long)]
    classifier: Option<String>,
    /// Token F1 needed for an intermediate to count as correct.
    #[arg(long)]
    threshold: Option<f64>,
    /// Accepted for uniformity; scoring is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct BridgeCheckArgs {
    #[arg(long)]
    endpoint: Option<String>,
    /// Each round sends a generate, a score and a malformed request.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn io_err(e: io::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn load_dataset(path: &Path) -> Result<Vec<TaskInstance>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_jsonl(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let d = DatasetConfig::default();
    let distractors = match (a.distractors, a.fill_to) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--distractors and --fill-to are exclusive".into())),
        (Some(n), None) => Distractors::Count(n),
        (None, Some(n)) => Distractors::FillTo(n),
        (None, None) => d.distractors,
    };
    let cfg = DatasetConfig {
        n_entities: a.entities.unwrap_or(d.n_entities),
        n_attributes: a.attributes.unwrap_or(d.n_attributes),
        n_rules: a.rules.unwrap_or(d.n_rules),
        n_instances: a.n.unwrap_or(d.n_instances),
        depths: a.depths.map_or(d.depths, |x| x.0),
        distractors,
        answer_weights: a.answers.map_or(d.answer_weights, |x| x.0),
        seed: a.seed.unwrap_or(d.seed),
    };
    let data = generate_dataset(&cfg).map_err(|e| match e {
        synth::SynthError::Config(m) => CliError::Usage(m),
        e => CliError::Data(e.to_string()),
    })?;
    let mut out = writer(a.out.as_deref())?;
    synth::write_jsonl(&mut out, &data).and_then(|_| out.flush()).map_err(io_err)?;
    eprintln!("wrote {} instances", data.len());
    Ok(())
}

fn gen_negatives(a: GenNegativesArgs) -> Result<(), CliError> {
    let data = load_dataset(&required(a.data, "data")?)?;
    let w = FlavorWeights::default();
    let cfg = NegativesConfig {
        weights: FlavorWeights {
            remove: a.remove.unwrap_or(w.remove),
            swap: a.swap.unwrap_or(w.swap),
            copy: a.copy.unwrap_or(w.copy),
            negate: a.negate.unwrap_or(w.negate),
        },
        corpus_wide: a.corpus_wide,
        seed: a.seed.unwrap_or(0),
    };
    let steps = build_verifier_data(&data, &cfg).map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = writer(a.out.as_deref())?;
    negatives::write_jsonl(&mut out, &steps).and_then(|_| out.flush()).map_err(io_err)?;
    let pos = steps.iter().filter(|s| s.label == negatives::Label::Pos).count();
    eprintln!("wrote {pos} positives and {} negatives", steps.len() - pos);
    Ok(())
}

fn pipeline_config(a: &SearchArgs) -> Result<PipelineConfig, CliError> {
    let seed = a.seed.unwrap_or(0);
    let endpoint = |flag: Option<&String>| {
        flag.or(a.endpoint.as_ref()).cloned().ok_or_else(|| CliError::Usage("--endpoint is required for external sources".into()))
    };
    let prover = match a.prover.unwrap_or(ProverKind::Exact) {
        ProverKind::Exact => ProverSpec::Exact,
        ProverKind::Noisy => ProverSpec::Noisy { drop: a.drop.unwrap_or(0.3), inject: a.inject.unwrap_or(0.3), seed },
        ProverKind::Oracle => ProverSpec::Oracle,
        ProverKind::External => ProverSpec::External { endpoint: endpoint(None)? },
    };
    let verifier = match a.verifier.unwrap_or(VerifierKind::Exact) {
        VerifierKind::Exact => VerifierSpec::Exact,
        VerifierKind::Oracle => VerifierSpec::Oracle,
        VerifierKind::External => VerifierSpec::External { endpoint: endpoint(a.verifier_endpoint.as_ref())? },
    };
    let d = SearchConfig::default();
    let search = SearchConfig {
        num_candidates: a.num_candidates.unwrap_or(d.num_candidates),
        max_iterations: a.max_iterations.unwrap_or(d.max_iterations),
        min_improvement: a.min_improvement.unwrap_or(d.min_improvement),
        score_mix: match &a.score_mix {
            Some(s) => s.parse::<ScoreMix>().map_err(CliError::Usage)?,
            None => d.score_mix,
        },
        stall_limit: a.stall_limit.unwrap_or(d.stall_limit),
        seed,
        ..d
    };
    search.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(PipelineConfig { prover, verifier, search, no_search: a.no_search, timeout_ms: a.timeout_ms.unwrap_or(30_000) })
}

fn search(a: SearchArgs) -> Result<(), CliError> {
    let cfg = pipeline_config(&a)?;
    let data = load_dataset(&required(a.data.clone(), "data")?)?;
    let bridges = Bridges::connect(&cfg).map_err(|e| CliError::Bridge(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(1))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let start = Instant::now();
    let results: Vec<_> = pool.install(|| data.par_iter().map(|inst| solve_instance(inst, &cfg, &bridges)).collect());

    let mut failures = Vec::new();
    let mut bridge_failed = false;
    let mut predictions = Vec::with_capacity(data.len());
    let mut traces: Vec<TraceRecord> = Vec::new();
    for (inst, r) in data.iter().zip(results) {
        match r {
            Ok((p, t)) => {
                predictions.push(p);
                traces.extend(t);
            }
            Err(aborted) => {
                bridge_failed |= matches!(aborted.error, SearchError::Prover(_) | SearchError::Verifier(_));
                failures.push(format!("{}: {}", inst.id, aborted.error));
                let partial = &aborted.partial;
                predictions.push(Prediction {
                    id: inst.id.clone(),
                    proof: partial.proof.as_ref().map(|t| t.to_dsl()),
                    proof_score: partial.proof_score,
                    iterations: partial.iterations,
                    negated_proof: None,
                    negated_score: None,
                });
            }
        }
    }

    let mut out = writer(a.out.as_deref())?;
    for p in &predictions {
        writeln!(out, "{}", serde_json::to_string(p).expect("prediction serializes")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    if let Some(path) = &a.trace {
        let mut t = writer(Some(path))?;
        for rec in &traces {
            writeln!(t, "{}", serde_json::to_string(rec).expect("trace serializes")).map_err(io_err)?;
        }
        t.flush().map_err(io_err)?;
    }

    let proved = predictions.iter().filter(|p| p.proof.is_some()).count();
    eprintln!(
        "searched {} instances in {:.2}s: {proved} with a proof, {} failed",
        data.len(),
        start.elapsed().as_secs_f64(),
        failures.len()
    );
    for f in &failures {
        eprintln!("  failed {f}");
    }
    match (failures.is_empty(), bridge_failed) {
        (true, _) => Ok(()),
        (false, true) => Err(CliError::Bridge(format!("{} instances failed", failures.len()))),
        (false, false) => Err(CliError::Data(format!("{} instances failed", failures.len()))),
    }
}

fn print_table(report: &Report) {
    let a = &report.aggregate;
    eprintln!("examples            {}", a.n_examples);
    eprintln!("with gold proof     {}", a.n_with_proof);
    for (name, v) in [
        ("leaves F1", a.leaves_f1),
        ("leaves AllCorrect", a.leaves_allcorrect),
        ("steps F1", a.steps_f1),
        ("steps AllCorrect", a.steps_allcorrect),
        ("interm F1", a.interm_f1),
        ("interm AllCorrect", a.interm_allcorrect),
        ("overall AllCorrect", a.overall_allcorrect),
    ] {
        eprintln!("{name:<20}{v:.1}");
    }
    if let Some(acc) = a.answer_accuracy {
        eprintln!("answer accuracy     {acc:.1}");
        let b = &report.breakdown;
        let cell = |v: &Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        eprintln!("{:<10}{}", "depth", b.columns.iter().map(|c| format!("{c:>7}")).collect::<String>());
        eprintln!("{:<10}{}", "answer", b.answer_accuracy.iter().map(|v| format!("{:>7}", cell(v))).collect::<String>());
        eprintln!("{:<10}{}", "proof", b.proof_accuracy.iter().map(|v| format!("{:>7}", cell(v))).collect::<String>());
    }
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let data = load_dataset(&required(a.data, "data")?)?;
    let pred_path = required(a.predictions, "predictions")?;
    let f = File::open(&pred_path).map_err(|e| CliError::Data(format!("{}: {e}", pred_path.display())))?;
    let predictions =
        read_predictions(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", pred_path.display())))?;
    let choice = match a.classifier.as_deref().unwrap_or("reference") {
        "reference" => ClassifierChoice::Reference,
        "fit" => ClassifierChoice::Fit,
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
            let c: AnswerClassifier =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
            ClassifierChoice::Fixed(c)
        }
    };
    let threshold = a.threshold.unwrap_or(TokenF1::default().threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold {threshold} is outside [0, 1]")));
    }

    if predictions.is_empty() {
        eprintln!("warning: no predictions; every instance scores zero");
    } else {
        let ids: std::collections::HashSet<&str> = predictions.iter().map(|p| p.id.as_str()).collect();
        for inst in data.iter().filter(|i| !ids.contains(i.id.as_str())) {
            eprintln!("warning: missing prediction for {}", inst.id);
        }
    }
    let report = evaluate(&data, &predictions, choice, &TokenF1 { threshold }).map_err(|e| CliError::Data(e.to_string()))?;

    let mut out = writer(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(io_err)?;
    if let Some(path) = &a.csv {
        std::fs::write(path, report.breakdown.to_csv()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    print_table(&report);
    Ok(())
}

fn bridge_check(a: BridgeCheckArgs) -> Result<(), CliError> {
    let transport = Transport::parse(&required(a.endpoint, "endpoint")?).map_err(|e| CliError::Usage(e.to_string()))?;
    let bridge = Bridge::new(transport, Duration::from_millis(a.timeout_ms.unwrap_or(30_000)));
    let report = check_bridge(&bridge, a.rounds.unwrap_or(50), a.seed.unwrap_or(0));
    for f in &report.failures {
        eprintln!("  {f}");
    }
    eprintln!("{} requests, {} failures", report.requests, report.failures.len());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Bridge("bridge does not conform".into()))
    }
}

/// Every long flag also reads `PROOFGRAPH_<FLAG>` from the environment.
fn command() -> clap::Command {
    fn with_env(cmd: clap::Command) -> clap::Command {
        cmd.mut_args(|arg| match arg.get_long() {
            Some(long) if long != "help" && long != "version" => {
                let name = format!("PROOFGRAPH_{}", long.to_uppercase().replace('-', "_"));
                arg.env(name)
            }
            _ => arg,
        })
        .mut_subcommands(with_env)
    }
    with_env(Cli::command())
}

fn run() -> Result<(), CliError> {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            return Err(CliError::Usage(text.trim_end().trim_start_matches("error: ").to_string()));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let file = match &cli.config {
        Some(p) => config::load(p)?,
        None => Default::default(),
    };
    match cli.command {
        Command::GenData(a) => gen_data(config::merge(&a, config::section(&file, "gen-data"))?),
        Command::GenNegatives(a) => gen_negatives(config::merge(&a, config::section(&file, "gen-negatives"))?),
        Command::Search(a) => search(config::merge(&a, config::section(&file, "search"))?),
        Command::Eval(a) => eval(config::merge(&a, config::section(&file, "eval"))?),
        Command::BridgeCheck(a) => bridge_check(config::merge(&a, config::section(&file, "bridge-check"))?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_syntax() {
        assert_eq!("0..3".parse::<Depths>().unwrap().0, vec![0, 1, 2, 3]);
        assert_eq!("1,3".parse::<Depths>().unwrap().0, vec![1, 3]);
        assert!("4".parse::<Depths>().is_err());
        assert!("0..4".parse::<Depths>().is_err());
    }

    #[test]
    fn answer_syntax() {
        assert_eq!("2:1:0".parse::<Answers>().unwrap().0, [2, 1, 0]);
        assert!("1:1".parse::<Answers>().is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        command().debug_assert();
    }
}
