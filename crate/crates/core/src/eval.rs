//! Accuracy providers: a deterministic surrogate, a client for an external
//! evaluator process, and a result cache.
//!
//! # Evaluator protocol
//!
//! Line-delimited JSON over the child's stdin/stdout, one message per line:
//!
//! ```text
//! -> {"id":7,"genome":{"blocks":[{"type":"VGG","k":16},...]},"dataset":"cifar10","seed":42,"budget":{"epochs":5}}
//! <- {"id":7,"accuracy":0.9,"meta":{...}}
//! ```
//!
//! Requests are strictly sequential per process.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::RwLock;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ir::NetworkIR;
use crate::space::ArchGenome;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Surrogate,
    External,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub accuracy: f64,
    pub source: Source,
    #[serde(default)]
    pub meta: String,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluator did not answer request {id} within {timeout:?}")]
    Timeout { id: u64, timeout: Duration },
    #[error("evaluator protocol error: {reason} (raw line: {raw:?})")]
    Protocol { reason: String, raw: String },
    #[error("evaluator process: {0}")]
    Process(String),
}

impl EvalError {
    fn protocol(reason: impl Into<String>, raw: &str) -> Self {
        EvalError::Protocol {
            reason: reason.into(),
            raw: raw.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateParams {
    pub a_max: f64,
    pub a_min: f64,
    /// Parameter-count scale of the saturation curve.
    pub tau: f64,
    pub jitter_amp: f64,
    pub salt: u64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            a_max: 0.95,
            a_min: 0.40,
            tau: 5e5,
            jitter_amp: 0.01,
            salt: 0,
        }
    }
}

impl SurrogateParams {
    pub fn check(&self) -> crate::Result<()> {
        let ok = self.a_min < self.a_max
            && (0.0..=1.0).contains(&self.a_min)
            && (0.0..=1.0).contains(&self.a_max)
            && self.tau > 0.0
            && self.jitter_amp >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(
                "surrogate: need 0 <= a_min < a_max <= 1, tau > 0, jitter_amp >= 0".into(),
            ))
        }
    }
}

/// Saturating accuracy curve in the parameter count, before jitter.
pub fn surrogate_base(total_params: u64, p: &SurrogateParams) -> f64 {
    p.a_max - (p.a_max - p.a_min) * (-(total_params as f64) / p.tau).exp()
}

/// Uniform value in `[-amp, amp)` derived from SHA-256 of `"{genome}|{salt}"`.
pub fn surrogate_jitter(genome_text: &str, p: &SurrogateParams) -> f64 {
    let digest = Sha256::digest(format!("{genome_text}|{}", p.salt).as_bytes());
    let bits = u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
    p.jitter_amp * (2.0 * unit - 1.0)
}

pub fn surrogate_accuracy(ir: &NetworkIR, p: &SurrogateParams) -> AccuracyResult {
    let base = surrogate_base(ir.total_params, p);
    let accuracy = (base + surrogate_jitter(&ir.genome, p)).clamp(0.0, 1.0);
    AccuracyResult {
        accuracy,
        source: Source::Surrogate,
        meta: format!("params={}", ir.total_params),
    }
}

/// Everything an evaluator needs for one request.
#[derive(Debug, Clone, Copy)]
pub struct EvalJob<'a> {
    pub id: u64,
    pub genome: &'a ArchGenome,
    pub ir: &'a NetworkIR,
    pub dataset: &'a str,
    pub seed: u64,
    pub epochs: u32,
}

pub trait AccuracyEvaluator: Send {
    fn evaluate(&mut self, job: &EvalJob<'_>) -> Result<AccuracyResult, EvalError>;
}

#[derive(Debug, Clone, Default)]
pub struct SurrogateEvaluator {
    pub params: SurrogateParams,
}

impl AccuracyEvaluator for SurrogateEvaluator {
    fn evaluate(&mut self, job: &EvalJob<'_>) -> Result<AccuracyResult, EvalError> {
        Ok(surrogate_accuracy(job.ir, &self.params))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub genome: ArchGenome,
    pub dataset: String,
    pub seed: u64,
    pub budget: Budget,
}

impl Request {
    pub fn from_job(job: &EvalJob<'_>) -> Self {
        Self {
            id: job.id,
            genome: job.genome.clone(),
            dataset: job.dataset.to_string(),
            seed: job.seed,
            budget: Budget { epochs: job.epochs },
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

/// Parses one response line and checks it answers request `expected_id`.
pub fn parse_response(line: &str, expected_id: u64) -> Result<Response, EvalError> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| EvalError::protocol(format!("not JSON: {e}"), line))?;
    if let Some(err) = value.get("error") {
        return Err(EvalError::protocol(format!("evaluator reported error: {err}"), line));
    }
    let id = value
        .get("id")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| EvalError::protocol("missing or non-integer id", line))?;
    if id != expected_id {
        return Err(EvalError::protocol(
            format!("id mismatch: expected {expected_id}, got {id}"),
            line,
        ));
    }
    let response: Response = serde_json::from_value(value)
        .map_err(|e| EvalError::protocol(format!("bad response: {e}"), line))?;
    if !(0.0..=1.0).contains(&response.accuracy) {
        return Err(EvalError::protocol(
            format!("accuracy {} outside [0, 1]", response.accuracy),
            line,
        ));
    }
    Ok(response)
}

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Connection {
    fn spawn(command: &str) -> Result<Self, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Process(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Client for an evaluator child process. The process is started lazily and
/// restarted after a timeout or a broken pipe.
pub struct ExternalEvaluator {
    command: String,
    timeout: Duration,
    conn: Option<Connection>,
}

impl ExternalEvaluator {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        Self {
            command: command.into(),
            timeout,
            conn: None,
        }
    }

    fn round_trip(&mut self, request: &Request) -> Result<String, EvalError> {
        if self.conn.is_none() {
            self.conn = Some(Connection::spawn(&self.command)?);
        }
        let conn = self.conn.as_mut().expect("connection was just opened");
        let mut line = request.to_line();
        line.push('\n');
        conn.stdin
            .write_all(line.as_bytes())
            .and_then(|_| conn.stdin.flush())
            .map_err(|e| EvalError::Process(format!("write to evaluator: {e}")))?;
        match conn.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(EvalError::Process(format!("read from evaluator: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(EvalError::Timeout {
                id: request.id,
                timeout: self.timeout,
            }),
            Err(RecvTimeoutError::Disconnected) => {
                Err(EvalError::Process("evaluator closed its output".into()))
            }
        }
    }
}

impl AccuracyEvaluator for ExternalEvaluator {
    fn evaluate(&mut self, job: &EvalJob<'_>) -> Result<AccuracyResult, EvalError> {
        let request = Request::from_job(job);
        let result = self
            .round_trip(&request)
            .and_then(|line| parse_response(&line, request.id));
        match result {
            Ok(response) => Ok(AccuracyResult {
                accuracy: response.accuracy,
                source: Source::External,
                meta: response.meta.map(|m| m.to_string()).unwrap_or_default(),
            }),
            Err(e) => {
                // The stream may hold a late answer for this id; start fresh.
                if !matches!(e, EvalError::Protocol { .. }) {
                    self.conn = None;
                }
                Err(e)
            }
        }
    }
}

/// Evaluator selection: `surrogate` or `external:<command>`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum EvaluatorSpec {
    #[default]
    Surrogate,
    External(String),
}

impl EvaluatorSpec {
    pub fn build(
        &self,
        surrogate: SurrogateParams,
        timeout: Duration,
    ) -> Box<dyn AccuracyEvaluator> {
        match self {
            EvaluatorSpec::Surrogate => Box::new(SurrogateEvaluator { params: surrogate }),
            EvaluatorSpec::External(cmd) => Box::new(ExternalEvaluator::new(cmd.clone(), timeout)),
        }
    }
}

impl fmt::Display for EvaluatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaluatorSpec::Surrogate => f.write_str("surrogate"),
            EvaluatorSpec::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

impl FromStr for EvaluatorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "surrogate" => Ok(EvaluatorSpec::Surrogate),
            Some(("external", cmd)) if !cmd.trim().is_empty() => {
                Ok(EvaluatorSpec::External(cmd.to_string()))
            }
            _ => Err(format!(
                "unknown evaluator {s:?} (expected surrogate or external:<command>)"
            )),
        }
    }
}

impl Serialize for EvaluatorSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EvaluatorSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub genome_hash: String,
    pub dataset: String,
    pub epochs: u32,
}

impl CacheKey {
    pub fn new(genome: &ArchGenome, dataset: &str, epochs: u32) -> Self {
        Self {
            genome_hash: genome.hash_hex(),
            dataset: dataset.to_string(),
            epochs,
        }
    }
}

/// Exact-match memo of successful evaluations.
#[derive(Debug, Default)]
pub struct EvalCache {
    entries: RwLock<HashMap<CacheKey, AccuracyResult>>,
}

impl EvalCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A hit comes back with `source = Cache`.
    pub fn lookup(&self, key: &CacheKey) -> Option<AccuracyResult> {
        let entries = self.entries.read().expect("cache lock poisoned");
        entries.get(key).map(|r| AccuracyResult {
            source: Source::Cache,
            ..r.clone()
        })
    }

    pub fn record(&self, key: CacheKey, result: AccuracyResult) {
        let mut entries = self.entries.write().expect("cache lock poisoned");
        entries.entry(key).or_insert(result);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
