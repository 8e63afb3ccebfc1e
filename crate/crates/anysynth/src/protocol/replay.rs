//! Conformance replay of recorded transcripts.
//!
//! A transcript is the text written under `ANYSYNTH_BACKEND_LOG`: request
//! lines prefixed `> ` each followed by the reply line prefixed `< ` (the
//! reply is absent when the backend never answered).

use std::time::Duration;

use serde_json::Value;

use super::{decode_request, reply_violations, BackendSpec, ProtocolError, TransportError};

#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub request: String,
    pub reply: Option<String>,
}

pub fn parse_transcript(text: &str) -> Result<Vec<Exchange>, String> {
    let mut out: Vec<Exchange> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if let Some(req) = line.strip_prefix("> ") {
            out.push(Exchange { request: req.to_string(), reply: None });
        } else if let Some(rep) = line.strip_prefix("< ") {
            match out.last_mut() {
                Some(e) if e.reply.is_none() => e.reply = Some(rep.to_string()),
                _ => return Err(format!("line {}: reply without a pending request", n + 1)),
            }
        } else if !line.trim().is_empty() && !line.starts_with('#') {
            return Err(format!("line {}: expected '> ' or '< ' prefix", n + 1));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayOutcome {
    pub exchanges: usize,
    /// Schema problems, each prefixed with the exchange number.
    pub violations: Vec<String>,
    /// Replies that differ from the recorded ones (only when comparing).
    pub mismatches: Vec<String>,
}

impl ReplayOutcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.mismatches.is_empty()
    }
}

/// Sends every recorded request to a fresh backend and checks each reply.
///
/// With `compare`, replies must also equal the recorded ones as JSON values.
pub fn replay(
    exchanges: &[Exchange],
    spec: &BackendSpec,
    timeout: Duration,
    compare: bool,
) -> Result<ReplayOutcome, ProtocolError> {
    let mut transport = spec.open_transport()?;
    let mut outcome = ReplayOutcome { exchanges: exchanges.len(), ..Default::default() };
    for (n, ex) in exchanges.iter().enumerate() {
        let tag = format!("exchange {}", n + 1);
        let (id, op) = match decode_request(&ex.request) {
            Ok((id, req)) => (id, req.op()),
            Err(e) => {
                outcome.violations.push(format!("{tag}: recorded request is invalid: {e}"));
                continue;
            }
        };
        let crashed =
            |detail: String| ProtocolError::Crashed { backend: spec.to_string(), detail, raw: ex.request.clone() };
        transport.send(&ex.request).map_err(|e| crashed(format!("{e:?}")))?;
        let reply = match transport.recv(timeout) {
            Ok(r) => r,
            Err(TransportError::Timeout) => {
                outcome.violations.push(format!("{tag}: no reply to {} within {timeout:?}", op.name()));
                continue;
            }
            Err(TransportError::Closed(d)) => return Err(crashed(d)),
        };
        outcome
            .violations
            .extend(reply_violations(op, &reply, id).into_iter().map(|v| format!("{tag} ({}): {v}", op.name())));
        if compare {
            if let Some(recorded) = &ex.reply {
                let same = match (serde_json::from_str::<Value>(recorded), serde_json::from_str::<Value>(&reply)) {
                    (Ok(a), Ok(b)) => a == b,
                    _ => recorded == &reply,
                };
                if !same {
                    outcome.mismatches.push(format!("{tag} ({}): expected {recorded}, got {reply}", op.name()));
                }
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs() {
        let t = "# recorded\n> {\"id\":1,\"op\":\"hello\"}\n< {\"id\":1}\n> {\"id\":2,\"op\":\"score\"}\n";
        let ex = parse_transcript(t).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].reply.as_deref(), Some("{\"id\":1}"));
        assert_eq!(ex[1].reply, None);
        assert!(parse_transcript("< {}\n").is_err());
        assert!(parse_transcript("hello\n").is_err());
    }

    #[test]
    fn simulator_passes_its_own_handshake() {
        let ex = parse_transcript(
            "> {\"id\":1,\"op\":\"hello\"}\n< {\"id\":1,\"ok\":true,\"role\":\"scorer\",\"version\":\"1\",\"name\":\"sim-scorer\",\"score_range\":[0.0,10.0]}\n\
             > {\"id\":2,\"op\":\"shutdown\"}\n< {\"id\":2,\"ok\":true}\n",
        )
        .unwrap();
        let spec: BackendSpec = "sim:scorer".parse().unwrap();
        let out = replay(&ex, &spec, Duration::from_secs(1), true).unwrap();
        assert!(out.passed(), "{out:?}");
        let spec: BackendSpec = "sim:scorer,max=5".parse().unwrap();
        let out = replay(&ex, &spec, Duration::from_secs(1), true).unwrap();
        assert!(out.violations.is_empty());
        assert_eq!(out.mismatches.len(), 1);
    }
}
