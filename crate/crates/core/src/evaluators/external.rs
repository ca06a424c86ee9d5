//! Child-process evaluator speaking line-delimited JSON over stdin/stdout.
//!
//! Request: `{"request_id": u64, "sequence": "...", "ca_coords": [[x,y,z], ..],
//! "orientations": [[9 row-major reals], ..]}`.
//! Response: `{"request_id": u64, "score": real}` or
//! `{"request_id": u64, "error": "message"}`.
//!
//! Scores are lower-better and are negated into rewards. One request is in
//! flight at a time.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Evaluator, QueryCounter};
use crate::error::{EvalError, Result};
use crate::state::CdrState;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub name: String,
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    DEFAULT_TIMEOUT.as_secs_f64()
}

impl ExternalConfig {
    pub fn new(name: impl Into<String>, program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            name: name.into(),
            program: program.into(),
            args,
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout_secs = timeout.as_secs_f64();
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Request {
    pub request_id: u64,
    pub sequence: String,
    pub ca_coords: Vec<[f64; 3]>,
    pub orientations: Vec<[f64; 9]>,
}

impl Request {
    pub fn from_state(request_id: u64, a: &CdrState) -> Self {
        Self {
            request_id,
            sequence: a.sequence(),
            ca_coords: a.coords.iter().map(|c| [c.x, c.y, c.z]).collect(),
            orientations: a.orients.iter().map(|o| o.to_row_major()).collect(),
        }
    }
}

/// Score or remote error of one response line, after id checking.
pub fn parse_response(line: &str, expected_id: u64) -> Result<f64, EvalError> {
    let v: Value =
        serde_json::from_str(line).map_err(|e| EvalError::Malformed(format!("{e}: {line:?}")))?;
    let id = v
        .get("request_id")
        .and_then(Value::as_u64)
        .ok_or_else(|| EvalError::Malformed(format!("missing request_id: {line:?}")))?;
    if id != expected_id {
        return Err(EvalError::Protocol(format!(
            "response id {id} for request {expected_id}"
        )));
    }
    if let Some(msg) = v.get("error") {
        return Err(EvalError::Remote(
            msg.as_str().unwrap_or("unknown").to_string(),
        ));
    }
    v.get("score")
        .and_then(Value::as_f64)
        .ok_or_else(|| EvalError::Malformed(format!("missing numeric score: {line:?}")))
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

pub struct ExternalEvaluator {
    cfg: ExternalConfig,
    session: Mutex<Session>,
    counter: QueryCounter,
}

impl ExternalEvaluator {
    pub fn spawn(cfg: ExternalConfig) -> Result<Self> {
        if !(cfg.timeout_secs > 0.0) {
            return Err(crate::Error::Config(
                "evaluator timeout must be positive".into(),
            ));
        }
        let mut child = Command::new(&cfg.program)
            .args(&cfg.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            cfg,
            session: Mutex::new(Session {
                child,
                stdin,
                lines: rx,
                next_id: 0,
            }),
            counter: QueryCounter::default(),
        })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.cfg
    }

    /// Raw (lower-better) score of `a`.
    pub fn score(&self, a: &CdrState) -> Result<f64, EvalError> {
        self.counter.tick();
        let mut s = self.session.lock().unwrap_or_else(|p| p.into_inner());
        let id = s.next_id;
        s.next_id += 1;
        let mut line = serde_json::to_string(&Request::from_state(id, a))
            .map_err(|e| EvalError::Input(e.to_string()))?;
        line.push('\n');
        let Some(stdin) = s.stdin.as_mut() else {
            return Err(EvalError::ProcessExited(None));
        };
        if stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .is_err()
        {
            let code = s.child.wait().ok().and_then(|st| st.code());
            return Err(EvalError::ProcessExited(code));
        }
        let timeout = Duration::from_secs_f64(self.cfg.timeout_secs);
        loop {
            match s.lines.recv_timeout(timeout) {
                Ok(Ok(resp)) => {
                    // a late answer to a request that already timed out
                    let stale = serde_json::from_str::<Value>(&resp)
                        .ok()
                        .and_then(|v| v.get("request_id").and_then(Value::as_u64))
                        .is_some_and(|rid| rid < id);
                    if stale {
                        continue;
                    }
                    return parse_response(&resp, id);
                }
                Ok(Err(e)) => return Err(EvalError::Io(e)),
                Err(RecvTimeoutError::Timeout) => return Err(EvalError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    let code = s.child.wait().ok().and_then(|st| st.code());
                    return Err(EvalError::ProcessExited(code));
                }
            }
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn evaluate(&self, a: &CdrState) -> Result<f64, EvalError> {
        self.score(a).map(|s| -s)
    }

    fn queries(&self) -> u64 {
        self.counter.get()
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        let s = self.session.get_mut().unwrap_or_else(|p| p.into_inner());
        s.stdin.take();
        let _ = s.child.kill();
        let _ = s.child.wait();
    }
}

/// Behaviour of the bundled test double.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoMode {
    /// Score 0 for every request.
    Echo,
    /// Score equal to the loop length.
    Length,
    /// Sleep this many milliseconds, then answer like `Echo`.
    Sleep(u64),
    /// Answer with a line that is not JSON.
    Garbage,
    /// Answer with the wrong request id.
    BadId,
    /// Answer with an `error` field.
    Error,
    /// Exit without answering.
    Exit,
}

impl std::str::FromStr for EchoMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "echo" => EchoMode::Echo,
            "length" => EchoMode::Length,
            "garbage" => EchoMode::Garbage,
            "badid" => EchoMode::BadId,
            "error" => EchoMode::Error,
            "exit" => EchoMode::Exit,
            other => match other.strip_prefix("sleep:").map(str::parse) {
                Some(Ok(ms)) => EchoMode::Sleep(ms),
                _ => return Err(format!("unknown echo mode `{other}`")),
            },
        })
    }
}

/// Serve the wire protocol on `input`/`output` until end of input.
pub fn serve_echo(
    mode: EchoMode,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                writeln!(
                    output,
                    "{}",
                    serde_json::json!({"request_id": null, "error": e.to_string()})
                )?;
                output.flush()?;
                continue;
            }
        };
        let id = req.request_id;
        let reply = match mode {
            EchoMode::Echo => serde_json::json!({"request_id": id, "score": 0.0}).to_string(),
            EchoMode::Length => {
                serde_json::json!({"request_id": id, "score": req.sequence.len() as f64})
                    .to_string()
            }
            EchoMode::Sleep(ms) => {
                thread::sleep(Duration::from_millis(ms));
                serde_json::json!({"request_id": id, "score": 0.0}).to_string()
            }
            EchoMode::Garbage => "this is not json".to_string(),
            EchoMode::BadId => serde_json::json!({"request_id": id + 1, "score": 0.0}).to_string(),
            EchoMode::Error => {
                serde_json::json!({"request_id": id, "error": "refused"}).to_string()
            }
            EchoMode::Exit => return Ok(()),
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

/// Outcome counts of a protocol round trip.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub requests: u64,
    pub ok: u64,
    /// Error counts keyed by [`EvalError::kind`].
    pub errors: std::collections::BTreeMap<String, u64>,
}

/// Send `n` requests for `a` and tally the outcomes.
pub fn protocol_round_trip(ev: &ExternalEvaluator, a: &CdrState, n: u64) -> ProtocolReport {
    let mut report = ProtocolReport::default();
    for _ in 0..n {
        report.requests += 1;
        match ev.score(a) {
            Ok(_) => report.ok += 1,
            Err(e) => *report.errors.entry(e.kind().to_string()).or_default() += 1,
        }
    }
    report
}
