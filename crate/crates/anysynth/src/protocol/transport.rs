use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use crate::sim::SimBackend;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    /// The backend is gone; carries what is known about why.
    Closed(String),
}

/// Moves protocol lines to and from one backend.
pub trait Transport: Send {
    fn send(&mut self, line: &str) -> Result<(), TransportError>;
    fn recv(&mut self, timeout: Duration) -> Result<String, TransportError>;
}

/// A backend child process reached over its stdin/stdout.
pub struct ChildTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl ChildTransport {
    pub fn spawn(argv: &[String]) -> std::io::Result<Self> {
        let (program, args) = argv.split_first().ok_or_else(|| std::io::Error::other("empty command line"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines: rx })
    }

    fn exit_detail(&mut self) -> String {
        // give a dying process a moment so the status is known
        let deadline = Instant::now() + Duration::from_millis(200);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return format!("process exited with {status}"),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                Ok(None) => return "output closed".into(),
                Err(e) => return e.to_string(),
            }
        }
    }
}

impl Transport for ChildTransport {
    fn send(&mut self, line: &str) -> Result<(), TransportError> {
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(TransportError::Closed("input already closed".into()));
        };
        let res = stdin.write_all(line.as_bytes()).and_then(|_| stdin.write_all(b"\n")).and_then(|_| stdin.flush());
        res.map_err(|e| TransportError::Closed(format!("{e}; {}", self.exit_detail())))
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, TransportError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(TransportError::Closed(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed(self.exit_detail())),
        }
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A built-in simulator served in-process through the same encode/decode path.
pub struct LocalTransport {
    backend: SimBackend,
    pending: VecDeque<String>,
}

impl LocalTransport {
    pub fn new(backend: SimBackend) -> Self {
        Self { backend, pending: VecDeque::new() }
    }
}

impl Transport for LocalTransport {
    fn send(&mut self, line: &str) -> Result<(), TransportError> {
        let reply = self.backend.handle_line(line);
        self.pending.push_back(reply);
        Ok(())
    }

    fn recv(&mut self, _timeout: Duration) -> Result<String, TransportError> {
        self.pending.pop_front().ok_or_else(|| TransportError::Closed("no reply pending".into()))
    }
}
