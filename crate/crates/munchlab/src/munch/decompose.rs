//! Question decomposition: the deterministic inverse of the question
//! renderer, plus a line-JSON protocol for delegating to an external
//! decomposer over a child process or an HTTP endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::MunchError;
use crate::kbgen::{QaItem, QuestionId, QuestionKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionOrigin {
    Template,
    External,
}

/// A multi-hop question split into one subquestion per hop; from hop two
/// onward the subquestion refers back to the previous answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecomposedQuestion {
    pub source_id: QuestionId,
    pub subquestions: Vec<String>,
    pub origin: DecompositionOrigin,
}

/// How subquestions are produced. The template inverse needs no external
/// help and is the default; both external modes speak the same protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecomposerMode {
    Template,
    /// `command[0]` is the program, the rest are arguments; requests go to
    /// its stdin one JSON object per line, replies come back on stdout.
    Subprocess { command: Vec<String> },
    /// Each request is POSTed as a JSON body to this `http://` URL.
    Http { url: String },
}

#[derive(Serialize)]
struct DecomposeRequest<'a> {
    id: &'a str,
    question: &'a str,
}

#[derive(Deserialize)]
struct DecomposeReply {
    id: String,
    subquestions: Vec<String>,
}

/// Splits a rendered multi-hop question back into its subquestions. The
/// renderer joins per-hop questions with single spaces and every subquestion
/// ends with a question mark, so the split point is unambiguous.
pub fn split_rendered_question(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        cur.push(ch);
        if ch == '?' {
            out.push(std::mem::take(&mut cur).trim_start().to_string());
        }
    }
    let tail = cur.trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

fn parse_reply(line: &str, want_id: &str) -> Result<Vec<String>, MunchError> {
    let reply: DecomposeReply = serde_json::from_str(line.trim())
        .map_err(|e| MunchError::Protocol(format!("malformed reply line: {e}")))?;
    if reply.id != want_id {
        return Err(MunchError::Protocol(format!(
            "reply id {:?} does not echo request id {want_id:?}",
            reply.id
        )));
    }
    Ok(reply.subquestions)
}

/// A spawned decomposer child. Dropping kills the child; requests and
/// replies are strictly alternating, so one buffered reader suffices.
pub struct SubprocessDecomposer {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessDecomposer {
    pub fn spawn(command: &[String]) -> Result<SubprocessDecomposer, MunchError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| MunchError::Protocol("empty decomposer command".to_string()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout was piped"));
        Ok(SubprocessDecomposer { child, stdin, stdout })
    }

    fn exchange(&mut self, id: &str, question: &str) -> Result<Vec<String>, MunchError> {
        let mut line = serde_json::to_string(&DecomposeRequest { id, question })?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply)? == 0 {
            return Err(MunchError::Protocol("decomposer closed its stream".to_string()));
        }
        parse_reply(&reply, id)
    }
}

impl Drop for SubprocessDecomposer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Plain HTTP/1.1 POST client: one fresh `Connection: close` request per
/// question, body framed by Content-Length on the way out and by EOF on the
/// way back.
#[derive(Debug)]
pub struct HttpDecomposer {
    host: String,
    port: u16,
    path: String,
}

impl HttpDecomposer {
    pub fn new(url: &str) -> Result<HttpDecomposer, MunchError> {
        let rest = url.strip_prefix("http://").ok_or_else(|| {
            MunchError::Protocol(format!("unsupported decomposer URL {url:?}: expected http://"))
        })?;
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/"),
        };
        let (host, port) = match authority.rsplit_once(':') {
            Some((h, p)) => {
                let port = p
                    .parse::<u16>()
                    .map_err(|_| MunchError::Protocol(format!("bad port in URL {url:?}")))?;
                (h.to_string(), port)
            }
            None => (authority.to_string(), 80),
        };
        if host.is_empty() {
            return Err(MunchError::Protocol(format!("missing host in URL {url:?}")));
        }
        Ok(HttpDecomposer { host, port, path: path.to_string() })
    }

    fn exchange(&mut self, id: &str, question: &str) -> Result<Vec<String>, MunchError> {
        let body = serde_json::to_string(&DecomposeRequest { id, question })?;
        let mut stream = TcpStream::connect((self.host.as_str(), self.port))?;
        let request = format!(
            "POST {} HTTP/1.1\r\nHost: {}:{}\r\nContent-Type: application/json\r\n\
             Content-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.host,
            self.port,
            body.len(),
            body
        );
        stream.write_all(request.as_bytes())?;
        let mut raw = Vec::new();
        stream.read_to_end(&mut raw)?;
        let text = String::from_utf8(raw)
            .map_err(|_| MunchError::Protocol("non-UTF-8 HTTP response".to_string()))?;
        let (head, reply_body) = text
            .split_once("\r\n\r\n")
            .ok_or_else(|| MunchError::Protocol("HTTP response missing header block".to_string()))?;
        let status = head.lines().next().unwrap_or("");
        if !status.split_whitespace().nth(1).unwrap_or("").starts_with('2') {
            return Err(MunchError::Protocol(format!("decomposer endpoint returned {status:?}")));
        }
        parse_reply(reply_body, id)
    }
}

/// A ready-to-use decomposition strategy.
pub enum Decomposer {
    Template,
    Subprocess(SubprocessDecomposer),
    Http(HttpDecomposer),
}

impl Decomposer {
    pub fn from_mode(mode: &DecomposerMode) -> Result<Decomposer, MunchError> {
        Ok(match mode {
            DecomposerMode::Template => Decomposer::Template,
            DecomposerMode::Subprocess { command } => {
                Decomposer::Subprocess(SubprocessDecomposer::spawn(command)?)
            }
            DecomposerMode::Http { url } => Decomposer::Http(HttpDecomposer::new(url)?),
        })
    }

    /// Decomposes one multi-hop question and validates the result: one
    /// non-blank subquestion per hop of the underlying chain.
    pub fn decompose(&mut self, item: &QaItem) -> Result<DecomposedQuestion, MunchError> {
        if item.kind != QuestionKind::Multi {
            return Err(MunchError::NotMultiHop(item.id.0.clone()));
        }
        let (subquestions, origin) = match self {
            Decomposer::Template => {
                (split_rendered_question(&item.text), DecompositionOrigin::Template)
            }
            Decomposer::Subprocess(d) => {
                (d.exchange(&item.id.0, &item.text)?, DecompositionOrigin::External)
            }
            Decomposer::Http(d) => {
                (d.exchange(&item.id.0, &item.text)?, DecompositionOrigin::External)
            }
        };
        let want = item.fact_ids.len();
        if subquestions.len() != want {
            return Err(MunchError::DecompositionInvalid(format!(
                "question {} has {want} hops but decomposed into {} subquestions",
                item.id,
                subquestions.len()
            )));
        }
        if subquestions.iter().any(|s| s.trim().is_empty()) {
            return Err(MunchError::DecompositionInvalid(format!(
                "question {} produced a blank subquestion",
                item.id
            )));
        }
        Ok(DecomposedQuestion { source_id: item.id.clone(), subquestions, origin })
    }
}
