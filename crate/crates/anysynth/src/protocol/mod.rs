//! Line-delimited JSON protocol spoken with model backends.
//!
//! Every request is one JSON object `{"id": n, "op": "...", ...}` on one
//! line; the backend answers each with exactly one line carrying the same
//! id and either `"ok": true` plus the op's payload or `"ok": false` plus an
//! `"error"` string. Unknown fields are ignored and missing required fields
//! are rejected in both directions. See `docs/protocol.md`.

mod endpoint;
pub mod replay;
mod transport;

use std::fmt;
use std::time::Duration;

use anysynth_core::{BBox, Layout, LayoutRequest};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use endpoint::{BackendSpec, Endpoint, SimSpec, DEFAULT_TIMEOUT, TRANSCRIPT_ENV};
pub use transport::{ChildTransport, LocalTransport, Transport, TransportError};

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Proposer,
    Generator,
    Detector,
    Scorer,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Proposer => "proposer",
            Role::Generator => "generator",
            Role::Detector => "detector",
            Role::Scorer => "scorer",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        [Role::Proposer, Role::Generator, Role::Detector, Role::Scorer].into_iter().find(|r| r.name() == s)
    }

    /// The one work op this role answers, besides hello and shutdown.
    pub fn work_op(self) -> Op {
        match self {
            Role::Proposer => Op::ProposeLayout,
            Role::Generator => Op::Generate,
            Role::Detector => Op::Detect,
            Role::Scorer => Op::Score,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Hello,
    ProposeLayout,
    Generate,
    Detect,
    Score,
    Shutdown,
}

impl Op {
    pub const ALL: [Op; 6] = [Op::Hello, Op::ProposeLayout, Op::Generate, Op::Detect, Op::Score, Op::Shutdown];

    pub fn name(self) -> &'static str {
        match self {
            Op::Hello => "hello",
            Op::ProposeLayout => "propose_layout",
            Op::Generate => "generate",
            Op::Detect => "detect",
            Op::Score => "score",
            Op::Shutdown => "shutdown",
        }
    }

    pub fn parse(s: &str) -> Option<Op> {
        Op::ALL.into_iter().find(|o| o.name() == s)
    }
}

/// Reference image for one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub id: u32,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub layout: Layout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_ref: Option<String>,
    #[serde(default)]
    pub instance_refs: Vec<InstanceRef>,
    pub seed: u64,
    /// `(timestep, weight)` pairs, timesteps strictly increasing.
    pub style_schedule: Vec<(u32, f64)>,
    /// Directory the image must be written to.
    pub out_dir: String,
    /// File stem for the image; the extension is the generator's choice.
    pub name: String,
}

impl GenerateRequest {
    pub fn validate(&self) -> Result<(), String> {
        self.layout.validate(usize::MAX).map_err(|e| e.to_string())?;
        if let Some(&(t, w)) = self.style_schedule.iter().find(|(_, w)| !(0.0..=1.0).contains(w)) {
            return Err(format!("style weight {w} at timestep {t} outside [0, 1]"));
        }
        if self.style_schedule.windows(2).any(|p| p[0].0 >= p[1].0) {
            return Err("style schedule timesteps must be strictly increasing".into());
        }
        if let Some(r) = self.instance_refs.iter().find(|r| self.layout.get(r.id).is_none()) {
            return Err(format!("instance_refs names unknown instance {}", r.id));
        }
        if self.out_dir.is_empty() {
            return Err("out_dir must be nonempty".into());
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(format!("name {:?} must be a plain file stem", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image: String,
    pub vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Hello,
    ProposeLayout { request: LayoutRequest },
    Generate(GenerateRequest),
    Detect(DetectRequest),
    Score { image: String },
    Shutdown,
}

impl Request {
    pub fn op(&self) -> Op {
        match self {
            Request::Hello => Op::Hello,
            Request::ProposeLayout { .. } => Op::ProposeLayout,
            Request::Generate(_) => Op::Generate,
            Request::Detect(_) => Op::Detect,
            Request::Score { .. } => Op::Score,
            Request::Shutdown => Op::Shutdown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloReply {
    pub role: Role,
    pub version: String,
    pub name: String,
    /// Raw score bounds of a scorer; scores are mapped onto `[0, 1]` with them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutReply {
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReply {
    pub image: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub cate: String,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReply {
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReply {
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ack {}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("backend {backend}: no reply to {op} within {after:?}")]
    Timeout { backend: String, op: &'static str, after: Duration, raw: String },

    #[error("backend {backend}: malformed reply: {detail}")]
    Malformed { backend: String, detail: String, raw: String },

    #[error("backend {backend}: expected role {expected}, got {found}")]
    RoleMismatch { backend: String, expected: Role, found: String, raw: String },

    #[error("backend {backend} reported an error: {message}")]
    BackendStatus { backend: String, message: String, raw: String },

    #[error("backend {backend} stopped: {detail}")]
    Crashed { backend: String, detail: String, raw: String },

    #[error("cannot start backend {spec:?}: {detail}")]
    Spawn { spec: String, detail: String },
}

impl ProtocolError {
    /// The line that triggered the error: the reply when there was one,
    /// else the request that went unanswered.
    pub fn raw(&self) -> &str {
        match self {
            ProtocolError::Timeout { raw, .. }
            | ProtocolError::Malformed { raw, .. }
            | ProtocolError::RoleMismatch { raw, .. }
            | ProtocolError::BackendStatus { raw, .. }
            | ProtocolError::Crashed { raw, .. } => raw,
            ProtocolError::Spawn { .. } => "",
        }
    }
}

/// Encodes a request as one line, without the trailing newline.
pub fn encode_request(id: u64, request: &Request) -> String {
    let mut v = serde_json::to_value(request).expect("requests always serialize");
    let obj = v.as_object_mut().expect("requests are objects");
    let mut out = Map::new();
    out.insert("id".into(), id.into());
    out.append(obj);
    Value::Object(out).to_string()
}

/// Decodes a request line into its id and body.
pub fn decode_request(line: &str) -> Result<(u64, Request), String> {
    let v: Value = serde_json::from_str(line).map_err(|e| format!("not JSON: {e}"))?;
    let id = v.get("id").and_then(Value::as_u64).ok_or("missing or non-integer id")?;
    let op = v.get("op").and_then(Value::as_str).ok_or("missing op")?;
    if Op::parse(op).is_none() {
        return Err(format!("unknown op {op:?}"));
    }
    let request = Request::deserialize(&v).map_err(|e| format!("{op}: {e}"))?;
    if let Request::Generate(g) = &request {
        g.validate().map_err(|e| format!("generate: {e}"))?;
    }
    Ok((id, request))
}

pub fn encode_ok<T: Serialize>(id: u64, payload: &T) -> String {
    let mut out = Map::new();
    out.insert("id".into(), id.into());
    out.insert("ok".into(), true.into());
    if let Value::Object(mut fields) = serde_json::to_value(payload).expect("replies always serialize") {
        fields.remove("id");
        fields.remove("ok");
        out.append(&mut fields);
    }
    Value::Object(out).to_string()
}

pub fn encode_err(id: Option<u64>, message: &str) -> String {
    let mut out = Map::new();
    out.insert("id".into(), id.map_or(Value::Null, Value::from));
    out.insert("ok".into(), false.into());
    out.insert("error".into(), message.into());
    Value::Object(out).to_string()
}

/// Outcome of decoding one reply line.
#[derive(Debug)]
pub enum Reply<T> {
    Ok(T),
    /// `"ok": false`; carries the backend's message.
    Failed(String),
    /// A well-formed reply to some other request id.
    Stale(u64),
}

/// Decodes a reply line, checking its id and payload shape.
pub fn decode_reply<T: DeserializeOwned>(line: &str, id: u64) -> Result<Reply<T>, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| format!("not JSON: {e}"))?;
    if !v.is_object() {
        return Err("reply is not an object".into());
    }
    let got = v.get("id").and_then(Value::as_u64).ok_or("missing or non-integer id")?;
    let ok = v.get("ok").and_then(Value::as_bool).ok_or("missing boolean ok")?;
    if got != id {
        return Ok(Reply::Stale(got));
    }
    if !ok {
        let msg = v.get("error").and_then(Value::as_str).ok_or("failed reply without error string")?;
        return Ok(Reply::Failed(msg.to_string()));
    }
    T::deserialize(&v).map(Reply::Ok).map_err(|e| e.to_string())
}

/// Schema problems in a reply to `op`, as checked during conformance replay.
pub fn reply_violations(op: Op, line: &str, id: u64) -> Vec<String> {
    fn check<T: DeserializeOwned>(line: &str, id: u64, extra: impl Fn(&T) -> Vec<String>) -> Vec<String> {
        match decode_reply::<T>(line, id) {
            Ok(Reply::Ok(t)) => extra(&t),
            Ok(Reply::Failed(_)) => Vec::new(),
            Ok(Reply::Stale(got)) => vec![format!("reply id {got} does not match request id {id}")],
            Err(e) => vec![e],
        }
    }
    match op {
        Op::Hello => check::<HelloReply>(line, id, |h| {
            let mut v = Vec::new();
            if h.version.split('.').next() != Some(PROTOCOL_VERSION) {
                v.push(format!("unsupported protocol version {:?}", h.version));
            }
            if let Some([lo, hi]) = h.score_range {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    v.push(format!("score_range [{lo}, {hi}] is not an increasing finite pair"));
                }
            }
            v
        }),
        Op::ProposeLayout => check::<LayoutReply>(line, id, |r| {
            r.layout.validate(usize::MAX).err().map(|e| e.to_string()).into_iter().collect()
        }),
        Op::Generate => check::<ImageReply>(line, id, |r| {
            if r.image.path.is_empty() || r.image.width == 0 || r.image.height == 0 {
                vec!["image needs a nonempty path and positive size".into()]
            } else {
                Vec::new()
            }
        }),
        Op::Detect => check::<DetectReply>(line, id, |r| {
            r.detections
                .iter()
                .enumerate()
                .filter(|(_, d)| !(0.0..=1.0).contains(&d.confidence) || !d.bbox.in_canvas() || d.cate.is_empty())
                .map(|(i, _)| format!("detections[{i}] needs a category, an in-canvas box and confidence in [0, 1]"))
                .collect()
        }),
        Op::Score => check::<ScoreReply>(line, id, |r| {
            if r.score.is_finite() {
                Vec::new()
            } else {
                vec!["score must be finite".into()]
            }
        }),
        Op::Shutdown => check::<Ack>(line, id, |_| Vec::new()),
    }
}
