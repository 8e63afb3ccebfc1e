use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use anysynth_core::layout::{same_category, validate_proposal};
use anysynth_core::{Detection, Layout, LayoutRequest};
use serde::de::DeserializeOwned;

use super::transport::{ChildTransport, LocalTransport, Transport, TransportError};
use super::{
    decode_reply, encode_request, Ack, DetectReply, DetectRequest, GenerateRequest, HelloReply, ImageRef, ImageReply,
    LayoutReply, ProtocolError, Reply, Request, Role, ScoreReply, PROTOCOL_VERSION,
};
use crate::error::{Error, Result};
use crate::sim::SimBackend;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Names a directory receiving one transcript per backend,
/// `<role>-<name>.log`, for later replay.
pub const TRANSCRIPT_ENV: &str = "ANYSYNTH_BACKEND_LOG";

/// A built-in simulator: `sim:<role>[,key=value...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimSpec {
    pub role: Role,
    pub params: BTreeMap<String, String>,
}

/// How to reach a backend: a simulator, or a command line to spawn.
///
/// `sim:detector,miss_rate=0.2` selects a simulator; `cmd:python adapter.py`
/// or a bare command line spawns a child process (shell-style quoting).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Sim(SimSpec),
    Command(Vec<String>),
}

impl FromStr for BackendSpec {
    type Err = ProtocolError;

    fn from_str(s: &str) -> std::result::Result<Self, ProtocolError> {
        let fail = |detail: &str| ProtocolError::Spawn { spec: s.to_string(), detail: detail.to_string() };
        if let Some(rest) = s.strip_prefix("sim:") {
            let mut parts = rest.split(',').map(str::trim);
            let role = parts.next().and_then(Role::parse).ok_or_else(|| fail("unknown simulator role"))?;
            let mut params = BTreeMap::new();
            for p in parts.filter(|p| !p.is_empty()) {
                let (k, v) = p.split_once('=').ok_or_else(|| fail("simulator options are key=value"))?;
                if params.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                    return Err(fail("repeated simulator option"));
                }
            }
            return Ok(BackendSpec::Sim(SimSpec { role, params }));
        }
        let cmd = s.strip_prefix("cmd:").unwrap_or(s);
        let argv = shlex::split(cmd).ok_or_else(|| fail("unbalanced quotes"))?;
        if argv.is_empty() {
            return Err(fail("empty command line"));
        }
        Ok(BackendSpec::Command(argv))
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Sim(s) => {
                write!(f, "sim:{}", s.role)?;
                for (k, v) in &s.params {
                    write!(f, ",{k}={v}")?;
                }
                Ok(())
            }
            BackendSpec::Command(argv) => {
                write!(f, "cmd:{}", shlex::try_join(argv.iter().map(String::as_str)).unwrap_or_default())
            }
        }
    }
}

impl BackendSpec {
    pub fn open_transport(&self) -> std::result::Result<Box<dyn Transport>, ProtocolError> {
        let spawn_err = |detail: String| ProtocolError::Spawn { spec: self.to_string(), detail };
        Ok(match self {
            BackendSpec::Sim(s) => Box::new(LocalTransport::new(SimBackend::from_spec(s).map_err(spawn_err)?)),
            BackendSpec::Command(argv) => Box::new(ChildTransport::spawn(argv).map_err(|e| spawn_err(e.to_string()))?),
        })
    }
}

/// Transcript file for one backend, when logging is enabled.
fn transcript_path(role: Role, name: &str) -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os(TRANSCRIPT_ENV)?);
    let clean: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
    Some(dir.join(format!("{role}-{clean}.log")))
}

fn log_exchange(path: &Path, request: &str, reply: Option<&str>) {
    static FILES: OnceLock<Mutex<HashMap<PathBuf, File>>> = OnceLock::new();
    let mut files = FILES.get_or_init(Default::default).lock().unwrap_or_else(|p| p.into_inner());
    if !files.contains_key(path) {
        let opened = path
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| OpenOptions::new().create(true).append(true).open(path));
        match opened {
            Ok(f) => files.insert(path.to_path_buf(), f),
            Err(_) => return,
        };
    }
    let mut entry = format!("> {request}\n");
    if let Some(r) = reply {
        entry.push_str(&format!("< {r}\n"));
    }
    let _ = files.get_mut(path).expect("inserted above").write_all(entry.as_bytes());
}

/// A connected, handshaken backend of one role.
pub struct Endpoint {
    spec: String,
    hello: HelloReply,
    transport: Box<dyn Transport>,
    next_id: u64,
    timeout: Duration,
    log: Option<PathBuf>,
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Endpoint").field("spec", &self.spec).field("hello", &self.hello).finish()
    }
}

impl Endpoint {
    /// Starts the backend and checks its handshake declares `role`.
    pub fn connect(spec: &BackendSpec, role: Role, timeout: Duration) -> std::result::Result<Self, ProtocolError> {
        let transport = spec.open_transport()?;
        Self::handshake(spec.to_string(), transport, role, timeout)
    }

    pub fn handshake(
        spec: String,
        transport: Box<dyn Transport>,
        role: Role,
        timeout: Duration,
    ) -> std::result::Result<Self, ProtocolError> {
        let placeholder = HelloReply { role, version: String::new(), name: spec.clone(), score_range: None };
        let mut ep = Endpoint { spec, hello: placeholder, transport, next_id: 1, timeout, log: None };
        let (hello, raw) = ep.call_raw::<HelloReply>(&Request::Hello)?;
        ep.log = transcript_path(hello.role, &hello.name);
        if let Some(path) = &ep.log {
            log_exchange(path, &encode_request(1, &Request::Hello), Some(&raw));
        }
        let malformed =
            |detail: String| ProtocolError::Malformed { backend: ep.spec.clone(), detail, raw: raw.clone() };
        if hello.role != role {
            return Err(ProtocolError::RoleMismatch {
                backend: ep.spec.clone(),
                expected: role,
                found: hello.role.to_string(),
                raw,
            });
        }
        if hello.version.split('.').next() != Some(PROTOCOL_VERSION) {
            return Err(malformed(format!("unsupported protocol version {:?}", hello.version)));
        }
        if let Some([lo, hi]) = hello.score_range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(malformed(format!("score_range [{lo}, {hi}] is not an increasing finite pair")));
            }
        }
        ep.hello = hello;
        Ok(ep)
    }

    pub fn name(&self) -> &str {
        &self.hello.name
    }

    pub fn spec(&self) -> &str {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.hello.role
    }

    pub fn hello(&self) -> &HelloReply {
        &self.hello
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn log(&self, request: &str, reply: Option<&str>) {
        if let Some(path) = &self.log {
            log_exchange(path, request, reply);
        }
    }

    fn malformed(&self, detail: impl Into<String>, raw: &str) -> ProtocolError {
        ProtocolError::Malformed { backend: self.spec.clone(), detail: detail.into(), raw: raw.to_string() }
    }

    fn require_role(&self, role: Role, request: &Request) -> std::result::Result<(), ProtocolError> {
        if self.hello.role == role {
            return Ok(());
        }
        Err(ProtocolError::RoleMismatch {
            backend: self.spec.clone(),
            expected: role,
            found: self.hello.role.to_string(),
            raw: encode_request(0, request),
        })
    }

    /// Sends one request and waits for the reply with the same id.
    ///
    /// Replies to earlier, abandoned requests are skipped.
    fn call_raw<T: DeserializeOwned>(&mut self, request: &Request) -> std::result::Result<(T, String), ProtocolError> {
        let id = self.next_id;
        self.next_id += 1;
        let line = encode_request(id, request);
        let crashed = |spec: &str, detail: String, raw: &str| ProtocolError::Crashed {
            backend: spec.to_string(),
            detail,
            raw: raw.to_string(),
        };
        if let Err(e) = self.transport.send(&line) {
            let d = match e {
                TransportError::Closed(d) => d,
                TransportError::Timeout => "write timed out".into(),
            };
            self.log(&line, None);
            return Err(crashed(&self.spec, d, &line));
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let reply = match self.transport.recv(left) {
                Ok(r) => r,
                Err(TransportError::Timeout) => {
                    self.log(&line, None);
                    return Err(ProtocolError::Timeout {
                        backend: self.spec.clone(),
                        op: request.op().name(),
                        after: self.timeout,
                        raw: line,
                    });
                }
                Err(TransportError::Closed(d)) => {
                    self.log(&line, None);
                    return Err(crashed(&self.spec, d, &line));
                }
            };
            match decode_reply::<T>(&reply, id) {
                Ok(Reply::Stale(_)) => continue,
                Ok(Reply::Ok(t)) => {
                    self.log(&line, Some(&reply));
                    return Ok((t, reply));
                }
                Ok(Reply::Failed(message)) => {
                    self.log(&line, Some(&reply));
                    return Err(ProtocolError::BackendStatus { backend: self.spec.clone(), message, raw: reply });
                }
                Err(detail) => {
                    self.log(&line, Some(&reply));
                    return Err(self.malformed(detail, &reply));
                }
            }
        }
    }

    /// Asks a proposer for a layout and checks it against the request.
    pub fn propose_layout(&mut self, request: &LayoutRequest) -> Result<Layout> {
        let req = Request::ProposeLayout { request: request.clone() };
        self.require_role(Role::Proposer, &req)?;
        let (reply, _) = self.call_raw::<LayoutReply>(&req)?;
        Ok(validate_proposal(request, reply.layout)?)
    }

    pub fn generate(&mut self, request: &GenerateRequest) -> Result<ImageRef> {
        request.validate().map_err(Error::Config)?;
        let req = Request::Generate(request.clone());
        self.require_role(Role::Generator, &req)?;
        let (reply, raw) = self.call_raw::<ImageReply>(&req)?;
        if reply.image.path.is_empty() || reply.image.width == 0 || reply.image.height == 0 {
            return Err(self.malformed("image needs a nonempty path and positive size", &raw).into());
        }
        Ok(reply.image)
    }

    /// Runs detection restricted to `vocabulary`; detections are tagged
    /// with this backend's name.
    pub fn detect(&mut self, image: &str, vocabulary: &[String], seed: Option<u64>) -> Result<Vec<Detection>> {
        let req = Request::Detect(DetectRequest { image: image.to_string(), vocabulary: vocabulary.to_vec(), seed });
        self.require_role(Role::Detector, &req)?;
        let (reply, raw) = self.call_raw::<DetectReply>(&req)?;
        let mut out = Vec::with_capacity(reply.detections.len());
        for (i, d) in reply.detections.into_iter().enumerate() {
            if !vocabulary.iter().any(|v| same_category(v, &d.cate)) {
                return Err(self
                    .malformed(format!("detections[{i}] has category {:?} outside the vocabulary", d.cate), &raw)
                    .into());
            }
            let det =
                Detection { cate: d.cate, bbox: d.bbox, confidence: d.confidence, detector: self.hello.name.clone() };
            det.validate().map_err(|e| self.malformed(format!("detections[{i}]: {e}"), &raw))?;
            out.push(det);
        }
        Ok(out)
    }

    /// Quality score mapped onto `[0, 1]` with the declared score range.
    pub fn score(&mut self, image: &str) -> Result<f64> {
        let req = Request::Score { image: image.to_string() };
        self.require_role(Role::Scorer, &req)?;
        let (reply, raw) = self.call_raw::<ScoreReply>(&req)?;
        let [lo, hi] = self.hello.score_range.unwrap_or([0.0, 1.0]);
        if !(reply.score >= lo && reply.score <= hi) {
            return Err(self
                .malformed(format!("score {} outside the declared range [{lo}, {hi}]", reply.score), &raw)
                .into());
        }
        Ok(((reply.score - lo) / (hi - lo)).clamp(0.0, 1.0))
    }

    pub fn shutdown(mut self) -> std::result::Result<(), ProtocolError> {
        self.timeout = self.timeout.min(Duration::from_secs(5));
        self.call_raw::<Ack>(&Request::Shutdown).map(|_| ())
    }
}
