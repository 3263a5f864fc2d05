//! Adapter for step sources living in another process.
//!
//! Requests and responses are single JSON objects, sent either as lines
//! over a child's stdin/stdout or as HTTP POST bodies.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::dsl::LinearProof;
use crate::util::{fnv1a, splitmix64};

use super::{check_score, Candidate, SourceError, StepScorer, StepSource};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// A program reading one request per line and answering with one line.
    Stdio { program: String, args: Vec<String> },
    /// An endpoint accepting JSON POST requests.
    Http { url: String },
}

impl Transport {
    /// `http://...` and `https://...` select HTTP; anything else is a
    /// whitespace-separated command line.
    pub fn parse(spec: &str) -> Result<Self, SourceError> {
        let spec = spec.trim();
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(Transport::Http { url: spec.to_string() });
        }
        let mut words = spec.split_whitespace().map(str::to_string);
        let program = words
            .next()
            .ok_or_else(|| SourceError::Unavailable("empty endpoint".into()))?;
        Ok(Transport::Stdio { program, args: words.collect() })
    }
}

struct ChildProc {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for ChildProc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One connection to an external model, shared by a source and a scorer.
/// Requests on a connection are serialized.
pub struct Bridge {
    transport: Transport,
    timeout: Duration,
    child: Mutex<Option<ChildProc>>,
    agent: ureq::Agent,
}

impl Bridge {
    pub fn new(transport: Transport, timeout: Duration) -> Arc<Self> {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Arc::new(Self { transport, timeout, child: Mutex::new(None), agent })
    }

    fn spawn(program: &str, args: &[String]) -> Result<ChildProc, SourceError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SourceError::Unavailable(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ChildProc { child, stdin, lines })
    }

    pub fn transport(&self) -> &Transport {
        &self.transport
    }

    pub fn request(&self, body: &Value) -> Result<Value, SourceError> {
        self.request_text(&body.to_string())
    }

    /// Sends `body` verbatim, which need not be valid JSON. It must not
    /// contain a newline.
    pub fn request_text(&self, body: &str) -> Result<Value, SourceError> {
        match &self.transport {
            Transport::Http { url } => self.post(url, body),
            Transport::Stdio { program, args } => {
                let mut guard = self.child.lock().unwrap_or_else(|e| e.into_inner());
                if guard.is_none() {
                    *guard = Some(Self::spawn(program, args)?);
                }
                let result = Self::exchange(guard.as_mut().unwrap(), body, self.timeout);
                // A late or missing answer would desynchronize the stream.
                if matches!(result, Err(SourceError::Timeout(_) | SourceError::Unavailable(_))) {
                    *guard = None;
                }
                result
            }
        }
    }

    fn exchange(child: &mut ChildProc, body: &str, timeout: Duration) -> Result<Value, SourceError> {
        let line = format!("{body}\n");
        child
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| child.stdin.flush())
            .map_err(|e| SourceError::Unavailable(format!("write failed: {e}")))?;
        match child.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => serde_json::from_str(&line)
                .map_err(|e| SourceError::Protocol(format!("malformed response `{line}`: {e}"))),
            Ok(Err(e)) => Err(SourceError::Unavailable(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(SourceError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(SourceError::Unavailable("process exited".into())),
        }
    }

    fn post(&self, url: &str, body: &str) -> Result<Value, SourceError> {
        let mut response = self
            .agent
            .post(url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| self.http_error(e))?;
        let status = response.status();
        if !status.is_success() {
            return Err(SourceError::Protocol(format!("HTTP status {status}")));
        }
        response.body_mut().read_json::<Value>().map_err(|e| match e {
            ureq::Error::Json(e) => SourceError::Protocol(format!("malformed response: {e}")),
            other => self.http_error(other),
        })
    }

    fn http_error(&self, e: ureq::Error) -> SourceError {
        match e {
            ureq::Error::Timeout(_) => SourceError::Timeout(self.timeout),
            ureq::Error::Json(e) => SourceError::Protocol(e.to_string()),
            other => SourceError::Unavailable(other.to_string()),
        }
    }
}

#[derive(Deserialize)]
struct GenerateResponse {
    candidates: Vec<Candidate>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

fn decode<T: for<'de> Deserialize<'de>>(value: Value) -> Result<T, SourceError> {
    let text = value.to_string();
    serde_json::from_value(value).map_err(|e| SourceError::Protocol(format!("unexpected response `{text}`: {e}")))
}

/// Prover behind a [`Bridge`].
pub struct ExternalSource {
    bridge: Arc<Bridge>,
}

impl ExternalSource {
    pub fn new(bridge: Arc<Bridge>) -> Self {
        Self { bridge }
    }
}

impl StepSource for ExternalSource {
    fn generate(
        &self,
        hypothesis: &str,
        context: &[String],
        partial: &LinearProof,
        n: usize,
    ) -> Result<Vec<Candidate>, SourceError> {
        let request = json!({
            "op": "generate",
            "hypothesis": hypothesis,
            "context": context,
            "partial_proof": partial.render(),
            "n": n,
        });
        let response: GenerateResponse = decode(self.bridge.request(&request)?)?;
        let mut out = response.candidates;
        for c in &out {
            check_score(c.score)?;
            // Syntax only; availability of premises is the search's concern.
            crate::dsl::parse_step(&c.step).map_err(|e| SourceError::Protocol(format!("step `{}`: {e}", c.step)))?;
        }
        out.truncate(n);
        Ok(out)
    }
}

/// Verifier behind a [`Bridge`]. Premises are sent in a shuffled order
/// that depends only on the seed and the step.
pub struct ExternalScorer {
    bridge: Arc<Bridge>,
    seed: u64,
}

impl ExternalScorer {
    pub fn new(bridge: Arc<Bridge>, seed: u64) -> Self {
        Self { bridge, seed }
    }
}

impl StepScorer for ExternalScorer {
    fn score(&self, premises: &[String], conclusion: &str) -> Result<f64, SourceError> {
        let mut shuffled = premises.to_vec();
        shuffled.sort();
        let key = format!("{}\u{0}{conclusion}", shuffled.join("\u{0}"));
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ fnv1a(key.as_bytes())));
        shuffled.shuffle(&mut rng);
        let request = json!({ "op": "score", "premises": shuffled, "conclusion": conclusion });
        let response: ScoreResponse = decode(self.bridge.request(&request)?)?;
        check_score(response.score)
    }
}
