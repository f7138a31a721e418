//! Line-delimited JSON protocol for external predictors.
//!
//! The server speaks first with a `hello` naming its class count and
//! capabilities. Each `predict` request carries a caller-chosen id that the
//! `proba` (or `error`) response must echo.
//!
//! ```text
//! <- {"type":"hello","classes":2,"capabilities":["proba"]}
//! -> {"type":"predict","id":"1","tokens":["[CLS]","good","[SEP]"]}
//! <- {"type":"proba","id":"1","probs":[0.3,0.7]}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for response probabilities to count as a point on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        classes: usize,
        capabilities: Vec<String>,
    },
    Predict {
        id: String,
        tokens: Vec<String>,
    },
    Proba {
        id: String,
        probs: Vec<f64>,
    },
    Error {
        id: Option<String>,
        message: String,
    },
}

impl Message {
    fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Predict { .. } => "predict",
            Message::Proba { .. } => "proba",
            Message::Error { .. } => "error",
        }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("protocol messages always serialize");
        line.push('\n');
        line
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("cannot connect to predictor `{endpoint}`: {source}")]
    Connect {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("predictor connection failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("predictor closed the connection")]
    Closed,
    #[error("malformed predictor message `{line}`: {reason}")]
    Malformed { line: String, reason: String },
    #[error("expected a `{expected}` message, got `{got}`")]
    Unexpected { expected: &'static str, got: String },
    #[error("response id `{got}` does not match request id `{expected}`")]
    IdMismatch { expected: String, got: String },
    #[error("expected {expected} probabilities, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("probabilities are not on the simplex (sum {sum}, min {min})")]
    NotSimplex { sum: f64, min: f64 },
    #[error("predictor reported an error for request {id:?}: {message}")]
    Remote { id: Option<String>, message: String },
    #[error("invalid endpoint `{0}`")]
    BadEndpoint(String),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// Check `probs` against the simplex within [`SIMPLEX_TOLERANCE`].
pub fn validate_probs(probs: &[f64], classes: usize) -> Result<()> {
    if probs.len() != classes {
        return Err(ProtocolError::WrongArity {
            expected: classes,
            got: probs.len(),
        });
    }
    let sum: f64 = probs.iter().sum();
    let min = probs.iter().copied().fold(f64::INFINITY, f64::min);
    if !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOLERANCE || min < -SIMPLEX_TOLERANCE {
        return Err(ProtocolError::NotSimplex { sum, min });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Program and arguments of a child process speaking on stdin/stdout.
    Command(Vec<String>),
    /// `host:port` of a TCP server.
    Tcp(String),
}

impl std::str::FromStr for Endpoint {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err(ProtocolError::BadEndpoint(s.into()));
            }
            return Ok(Endpoint::Tcp(addr.into()));
        }
        let parts: Vec<String> = s.split_whitespace().map(String::from).collect();
        if parts.is_empty() {
            return Err(ProtocolError::BadEndpoint(s.into()));
        }
        Ok(Endpoint::Command(parts))
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Command(parts) => f.write_str(&parts.join(" ")),
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
        }
    }
}

/// One request/response connection to an external predictor.
pub struct Client {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    classes: usize,
    capabilities: Vec<String>,
    next_id: u64,
}

impl Client {
    pub fn connect(endpoint: &Endpoint) -> Result<Self> {
        let connect_err = |source| ProtocolError::Connect {
            endpoint: endpoint.to_string(),
            source,
        };
        let (reader, writer, child): (Box<dyn BufRead + Send>, Box<dyn Write + Send>, _) = match endpoint {
            Endpoint::Command(parts) => {
                let mut child = Command::new(&parts[0])
                    .args(&parts[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(connect_err)?;
                let stdin: ChildStdin = child.stdin.take().expect("stdin is piped");
                let stdout: ChildStdout = child.stdout.take().expect("stdout is piped");
                (Box::new(BufReader::new(stdout)), Box::new(stdin), Some(child))
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(connect_err)?;
                let read_half = stream.try_clone().map_err(connect_err)?;
                (Box::new(BufReader::new(read_half)), Box::new(stream), None)
            }
        };
        Self::handshake(reader, writer, child)
    }

    /// Wrap an already-open stream pair and read the server's hello.
    pub fn from_streams(reader: Box<dyn BufRead + Send>, writer: Box<dyn Write + Send>) -> Result<Self> {
        Self::handshake(reader, writer, None)
    }

    fn handshake(
        mut reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<Self> {
        let hello = read_message(&mut reader)?;
        let Message::Hello {
            classes,
            capabilities,
        } = hello
        else {
            return Err(ProtocolError::Unexpected {
                expected: "hello",
                got: hello.type_name().into(),
            });
        };
        if classes < 2 {
            return Err(ProtocolError::Malformed {
                line: format!("classes={classes}"),
                reason: "a predictor needs at least 2 classes".into(),
            });
        }
        Ok(Self {
            reader,
            writer,
            child,
            classes,
            capabilities,
            next_id: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    /// Send one `predict` request and validate its response.
    pub fn predict(&mut self, tokens: &[String]) -> Result<Vec<f64>> {
        self.next_id += 1;
        let id = self.next_id.to_string();
        let request = Message::Predict {
            id: id.clone(),
            tokens: tokens.to_vec(),
        };
        self.writer.write_all(request.to_line().as_bytes())?;
        self.writer.flush()?;
        match read_message(&mut self.reader)? {
            Message::Proba { id: got, probs } => {
                if got != id {
                    return Err(ProtocolError::IdMismatch { expected: id, got });
                }
                validate_probs(&probs, self.classes)?;
                Ok(probs)
            }
            Message::Error { id, message } => Err(ProtocolError::Remote { id, message }),
            other => Err(ProtocolError::Unexpected {
                expected: "proba",
                got: other.type_name().into(),
            }),
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn read_message(reader: &mut dyn BufRead) -> Result<Message> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Err(ProtocolError::Closed);
    }
    let trimmed = line.trim_end();
    serde_json::from_str(trimmed).map_err(|e| ProtocolError::Malformed {
        line: trimmed.to_string(),
        reason: e.to_string(),
    })
}

/// Serve the protocol on a stream pair until EOF.
///
/// `respond` receives each request's id and tokens and returns the full
/// response message, so test servers can misbehave on purpose.
pub fn serve<R, W, F>(
    reader: R,
    mut writer: W,
    classes: usize,
    capabilities: &[&str],
    mut respond: F,
) -> std::io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(&str, &[String]) -> Message,
{
    let hello = Message::Hello {
        classes,
        capabilities: capabilities.iter().map(|s| s.to_string()).collect(),
    };
    writer.write_all(hello.to_line().as_bytes())?;
    writer.flush()?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Message>(&line) {
            Ok(Message::Predict { id, tokens }) => respond(&id, &tokens),
            Ok(other) => Message::Error {
                id: None,
                message: format!("unexpected `{}` message", other.type_name()),
            },
            Err(e) => Message::Error {
                id: None,
                message: format!("malformed request: {e}"),
            },
        };
        writer.write_all(reply.to_line().as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}
