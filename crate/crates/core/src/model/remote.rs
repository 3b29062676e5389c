//! Client for models served over the JSON-lines wire protocol.
//!
//! Framing: one compact JSON document per line, UTF-8, `\n` terminated.
//!
//! ```text
//! > {"op":"hello"}
//! < {"V":2,"model":"ngram"}
//! > {"id":1,"history":[0],"prefix":[]}
//! < {"id":1,"logp":[-1000000000.0,0.0]}
//! > {"op":"batch","requests":[{"id":2,...},{"id":3,...}]}
//! < {"responses":[{"id":2,"logp":[...]},{"id":3,"logp":[...]}]}
//! < {"id":4,"error":"..."}
//! ```
//!
//! Request ids are strictly increasing per connection. Log-probabilities at or
//! below [`NEG_INF_SENTINEL`] decode to `-inf`. Responses must normalize within
//! [`WIRE_TOLERANCE`]; they are renormalized exactly on receipt.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::query::{Token, Vocab};
use crate::stats::logsumexp;

use super::{CallCounter, Distribution, ModelError, SequenceModel};

/// Wire encoding of `-inf`.
pub const NEG_INF_SENTINEL: f64 = -1e9;
/// Normalization tolerance for responses on the wire.
pub const WIRE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    pub history: Vec<Token>,
    pub prefix: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(rename = "V")]
    pub vocab: usize,
    pub model: String,
}

#[derive(Serialize)]
struct Op<'a> {
    op: &'a str,
}

#[derive(Serialize)]
struct BatchOp<'a> {
    op: &'a str,
    requests: &'a [WireRequest],
}

#[derive(Deserialize)]
struct BatchResponse {
    responses: Vec<WireResponse>,
}

/// Encodes log-probabilities for the wire, mapping `-inf` to the sentinel.
pub fn encode_logp(logp: &[f64]) -> Vec<f64> {
    logp.iter().map(|&x| if x <= NEG_INF_SENTINEL { NEG_INF_SENTINEL } else { x }).collect()
}

pub fn decode_logp(logp: &[f64]) -> Vec<f64> {
    logp.iter().map(|&x| if x <= NEG_INF_SENTINEL { f64::NEG_INFINITY } else { x }).collect()
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    child: Option<Child>,
}

impl Connection {
    fn send_line(&mut self, line: &str) -> Result<(), ModelError> {
        let io = |e: std::io::Error| ModelError::RemoteModelUnavailable(e.to_string());
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.writer.write_all(&buf).map_err(io)?;
        self.writer.flush().map_err(io)
    }

    fn recv_line(&mut self) -> Result<String, ModelError> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| ModelError::RemoteModelUnavailable(e.to_string()))?;
        if n == 0 {
            return Err(ModelError::RemoteModelUnavailable("connection closed".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A [`SequenceModel`] backed by a remote server.
pub struct RemoteModel {
    vocab: Vocab,
    name: String,
    conn: Mutex<Connection>,
    counter: CallCounter,
}

impl RemoteModel {
    /// Performs the hello handshake over an arbitrary byte stream pair.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self, ModelError> {
        Self::handshake(Connection {
            reader: Box::new(BufReader::new(reader)),
            writer: Box::new(writer),
            next_id: 1,
            child: None,
        })
    }

    pub fn connect_tcp(addr: &str) -> Result<Self, ModelError> {
        let stream = TcpStream::connect(addr).map_err(|e| ModelError::RemoteModelUnavailable(e.to_string()))?;
        stream.set_nodelay(true).map_err(|e| ModelError::RemoteModelUnavailable(e.to_string()))?;
        let reader = stream.try_clone().map_err(|e| ModelError::RemoteModelUnavailable(e.to_string()))?;
        Self::from_streams(reader, stream)
    }

    /// Spawns `program args…` and speaks the protocol over its stdin/stdout.
    pub fn spawn_stdio(program: &str, args: &[String]) -> Result<Self, ModelError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelError::RemoteModelUnavailable(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(Connection {
            reader: Box::new(BufReader::new(stdout)),
            writer: Box::new(stdin),
            next_id: 1,
            child: Some(child),
        })
    }

    fn handshake(mut conn: Connection) -> Result<Self, ModelError> {
        conn.send_line(&serde_json::to_string(&Op { op: "hello" })?)?;
        let line = conn.recv_line()?;
        let hello: Hello = serde_json::from_str(&line)
            .map_err(|e| ModelError::Remote(format!("bad hello response {line:?}: {e}")))?;
        let vocab = Vocab::new(hello.vocab).map_err(ModelError::Query)?;
        Ok(RemoteModel { vocab, name: hello.model, conn: Mutex::new(conn), counter: CallCounter::new() })
    }

    fn decode(&self, resp: WireResponse, expected_id: u64) -> Result<Distribution, ModelError> {
        if let Some(err) = resp.error {
            return Err(ModelError::Remote(err));
        }
        if resp.id != Some(expected_id) {
            return Err(ModelError::Remote(format!("response id {:?} does not match request {expected_id}", resp.id)));
        }
        let logp = decode_logp(&resp.logp.ok_or_else(|| ModelError::Remote("response has no logp".into()))?);
        if logp.len() != self.vocab.size() {
            return Err(ModelError::WrongLength { expected: self.vocab.size(), got: logp.len() });
        }
        let z = logsumexp(&logp);
        if !(z.abs() <= WIRE_TOLERANCE) {
            return Err(ModelError::NotNormalized(z));
        }
        Distribution::from_log_probs(logp.iter().map(|x| x - z).collect())
    }

    /// Evaluates several contexts in one round trip. Each context counts as
    /// one model call.
    pub fn next_batch(&self, contexts: &[(Vec<Token>, Vec<Token>)]) -> Result<Vec<Distribution>, ModelError> {
        for (h, p) in contexts {
            for &t in h.iter().chain(p) {
                self.vocab.check(t)?;
            }
        }
        let mut conn = self.conn.lock().expect("connection lock");
        let first = conn.next_id;
        let requests: Vec<WireRequest> = contexts
            .iter()
            .enumerate()
            .map(|(i, (h, p))| WireRequest { id: first + i as u64, history: h.clone(), prefix: p.clone() })
            .collect();
        conn.next_id += requests.len() as u64;
        conn.send_line(&serde_json::to_string(&BatchOp { op: "batch", requests: &requests })?)?;
        let line = conn.recv_line()?;
        drop(conn);
        let batch: BatchResponse = match serde_json::from_str(&line) {
            Ok(b) => b,
            Err(_) => {
                let resp: WireResponse = serde_json::from_str(&line)
                    .map_err(|e| ModelError::Remote(format!("bad batch response {line:?}: {e}")))?;
                return Err(ModelError::Remote(resp.error.unwrap_or_else(|| "malformed batch response".into())));
            }
        };
        if batch.responses.len() != requests.len() {
            return Err(ModelError::Remote("batch response length mismatch".into()));
        }
        let out = batch
            .responses
            .into_iter()
            .zip(&requests)
            .map(|(r, q)| self.decode(r, q.id))
            .collect::<Result<Vec<_>, _>>()?;
        for _ in 0..out.len() {
            self.counter.increment();
        }
        Ok(out)
    }
}

impl SequenceModel for RemoteModel {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn evaluate(&self, history: &[Token], prefix: &[Token]) -> Result<Distribution, ModelError> {
        let mut conn = self.conn.lock().expect("connection lock");
        let id = conn.next_id;
        conn.next_id += 1;
        let req = WireRequest { id, history: history.to_vec(), prefix: prefix.to_vec() };
        conn.send_line(&serde_json::to_string(&req)?)?;
        let line = conn.recv_line()?;
        drop(conn);
        let resp: WireResponse = serde_json::from_str(&line)
            .map_err(|e| ModelError::Remote(format!("bad response {line:?}: {e}")))?;
        self.decode(resp, id)
    }

    fn counter(&self) -> &CallCounter {
        &self.counter
    }

    fn name(&self) -> String {
        format!("remote:{}", self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinel_roundtrip() {
        let enc = encode_logp(&[f64::NEG_INFINITY, 0.0, -0.5]);
        assert_eq!(enc, vec![-1e9, 0.0, -0.5]);
        assert_eq!(serde_json::to_string(&enc).unwrap(), "[-1000000000.0,0.0,-0.5]");
        let dec = decode_logp(&enc);
        assert_eq!(dec[0], f64::NEG_INFINITY);
        assert_eq!(dec[2], -0.5);
    }

    #[test]
    fn request_encoding_is_compact() {
        let r = WireRequest { id: 1, history: vec![0], prefix: vec![] };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"id":1,"history":[0],"prefix":[]}"#);
    }
}
