//! Byte-exact HTTP execution harness.
//!
//! A deliberately minimal HTTP/1.1 client: the request-target bytes go on the
//! wire exactly as planned, with no normalization, re-encoding, or
//! dot-segment resolution. Mainstream clients normalize request targets,
//! which destroys the bypass payloads this pipeline exists to carry.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trigger::RequestPlan;

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_BODY_CAP: usize = 4 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid target '{0}': expected http://host[:port]")]
    InvalidTarget(String),
    #[error("empty request plan")]
    EmptyPlan,
    #[error("target unreachable after {retries} retries: {detail}")]
    TargetUnreachable { retries: u32, detail: String },
    #[error("timeout on request {request_index}")]
    Timeout { request_index: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct ExecLimits {
    pub timeout_ms: u64,
    pub retries: u32,
    pub body_cap: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits { timeout_ms: DEFAULT_TIMEOUT_MS, retries: 0, body_cap: DEFAULT_BODY_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub sent_digest: String,
    pub status: u16,
    pub status_line: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub truncated: bool,
    pub elapsed_ms: u64,
}

impl ResponseRecord {
    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExecutionTrace {
    pub responses: Vec<ResponseRecord>,
    pub transport_error: Option<String>,
}

impl ExecutionTrace {
    pub fn final_response(&self) -> Option<&ResponseRecord> {
        self.responses.last()
    }
}

pub(crate) fn parse_http_target(target: &str) -> Result<(String, u16), ExecError> {
    let rest = target
        .strip_prefix("http://")
        .ok_or_else(|| ExecError::InvalidTarget(target.to_string()))?;
    let rest = rest.trim_end_matches('/');
    if rest.is_empty() || rest.contains('/') {
        return Err(ExecError::InvalidTarget(target.to_string()));
    }
    match rest.rsplit_once(':') {
        Some((host, port)) => {
            let port: u16 = port
                .parse()
                .map_err(|_| ExecError::InvalidTarget(target.to_string()))?;
            Ok((host.to_string(), port))
        }
        None => Ok((rest.to_string(), 80)),
    }
}

fn has_header(headers: &[(String, Vec<u8>)], name: &str) -> bool {
    headers.iter().any(|(n, _)| n.eq_ignore_ascii_case(name))
}

/// Serialize one planned request to raw wire bytes. Default headers (Host,
/// Content-Length, Connection: close) are added only when absent.
pub fn wire_bytes(req: &crate::trigger::PlannedRequest, host: &str, port: u16) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(req.method.as_bytes());
    out.push(b' ');
    out.extend_from_slice(&req.path);
    out.extend_from_slice(b" HTTP/1.1\r\n");
    if !has_header(&req.headers, "Host") {
        if port == 80 {
            out.extend_from_slice(format!("Host: {host}\r\n").as_bytes());
        } else {
            out.extend_from_slice(format!("Host: {host}:{port}\r\n").as_bytes());
        }
    }
    for (name, value) in &req.headers {
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(b": ");
        out.extend_from_slice(value);
        out.extend_from_slice(b"\r\n");
    }
    if let Some(body) = &req.body {
        if !has_header(&req.headers, "Content-Length") {
            out.extend_from_slice(format!("Content-Length: {}\r\n", body.len()).as_bytes());
        }
    }
    if !has_header(&req.headers, "Connection") {
        out.extend_from_slice(b"Connection: close\r\n");
    }
    out.extend_from_slice(b"\r\n");
    if let Some(body) = &req.body {
        out.extend_from_slice(body);
    }
    out
}

struct RawResponse {
    status: u16,
    status_line: String,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
    truncated: bool,
}

fn parse_response(raw: &[u8], body_cap: usize) -> Result<RawResponse, String> {
    let head_end = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or("response head incomplete")?;
    let head = String::from_utf8_lossy(&raw[..head_end]);
    let mut lines = head.split("\r\n");
    let status_line = lines.next().ok_or("missing status line")?.to_string();
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad status line '{status_line}'"))?;
    let mut headers = Vec::new();
    for line in lines {
        if let Some((n, v)) = line.split_once(':') {
            headers.push((n.trim().to_string(), v.trim().to_string()));
        }
    }
    let raw_body = &raw[head_end + 4..];
    let lookup = |name: &str| {
        headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.clone())
    };
    let mut body: Vec<u8> = if lookup("Transfer-Encoding")
        .map(|v| v.to_ascii_lowercase().contains("chunked"))
        .unwrap_or(false)
    {
        decode_chunked(raw_body)?
    } else if let Some(len) = lookup("Content-Length").and_then(|v| v.parse::<usize>().ok()) {
        raw_body.get(..len.min(raw_body.len())).unwrap_or(raw_body).to_vec()
    } else {
        raw_body.to_vec()
    };
    let truncated = body.len() > body_cap;
    if truncated {
        body.truncate(body_cap);
    }
    Ok(RawResponse { status, status_line, headers, body, truncated })
}

fn decode_chunked(mut raw: &[u8]) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    loop {
        let line_end = raw
            .windows(2)
            .position(|w| w == b"\r\n")
            .ok_or("chunk size line incomplete")?;
        let size_text = String::from_utf8_lossy(&raw[..line_end]);
        let size_text = size_text.split(';').next().unwrap_or("").trim();
        let size = usize::from_str_radix(size_text, 16)
            .map_err(|_| format!("bad chunk size '{size_text}'"))?;
        raw = &raw[line_end + 2..];
        if size == 0 {
            return Ok(out);
        }
        if raw.len() < size {
            return Err("chunk body incomplete".to_string());
        }
        out.extend_from_slice(&raw[..size]);
        raw = &raw[size..];
        if raw.starts_with(b"\r\n") {
            raw = &raw[2..];
        }
    }
}

fn send_one(
    wire: &[u8],
    host: &str,
    port: u16,
    limits: &ExecLimits,
) -> Result<RawResponse, String> {
    let timeout = Duration::from_millis(limits.timeout_ms);
    let deadline = Instant::now() + timeout;
    let addr = format!("{host}:{port}");
    let mut stream = TcpStream::connect(&addr).map_err(|e| format!("connect {addr}: {e}"))?;
    stream.set_nodelay(true).ok();
    stream
        .set_write_timeout(Some(timeout))
        .map_err(|e| e.to_string())?;
    stream.write_all(wire).map_err(|e| format!("write: {e}"))?;
    let mut raw = Vec::new();
    let mut buf = [0u8; 16 * 1024];
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            return Err("timeout".to_string());
        }
        stream.set_read_timeout(Some(remaining)).map_err(|e| e.to_string())?;
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                raw.extend_from_slice(&buf[..n]);
                // over-cap guard: head + cap + slack, then stop reading
                if raw.len() > limits.body_cap + 64 * 1024 {
                    break;
                }
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                return Err("timeout".to_string());
            }
            Err(e) => return Err(format!("read: {e}")),
        }
    }
    parse_response(&raw, limits.body_cap)
}

/// Send the plan's requests strictly in order, one connection per request.
/// Returns the collected trace; a mid-plan transport failure terminates the
/// trace and is recorded in `transport_error`. A failure before any response
/// is an error.
pub fn execute_plan(
    plan: &RequestPlan,
    target: &str,
    limits: &ExecLimits,
) -> Result<ExecutionTrace, ExecError> {
    if plan.requests.is_empty() {
        return Err(ExecError::EmptyPlan);
    }
    let (host, port) = parse_http_target(target)?;
    let mut trace = ExecutionTrace::default();
    for (idx, req) in plan.requests.iter().enumerate() {
        let wire = wire_bytes(req, &host, port);
        let digest = hex::encode(Sha256::digest(&wire));
        let start = Instant::now();
        let mut attempt = 0u32;
        let result = loop {
            match send_one(&wire, &host, port, limits) {
                Ok(r) => break Ok(r),
                Err(e) if e.starts_with("connect") && attempt < limits.retries => {
                    attempt += 1;
                    continue;
                }
                Err(e) => break Err(e),
            }
        };
        match result {
            Ok(resp) => {
                trace.responses.push(ResponseRecord {
                    sent_digest: digest,
                    status: resp.status,
                    status_line: resp.status_line,
                    headers: resp.headers,
                    body: resp.body,
                    truncated: resp.truncated,
                    elapsed_ms: start.elapsed().as_millis() as u64,
                });
            }
            Err(e) => {
                if trace.responses.is_empty() {
                    return if e == "timeout" {
                        Err(ExecError::Timeout { request_index: idx })
                    } else {
                        Err(ExecError::TargetUnreachable { retries: limits.retries, detail: e })
                    };
                }
                trace.transport_error = Some(format!("request {idx}: {e}"));
                break;
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trigger::PlannedRequest;

    #[test]
    fn target_parsing() {
        assert_eq!(parse_http_target("http://127.0.0.1:8080").unwrap(), ("127.0.0.1".into(), 8080));
        assert_eq!(parse_http_target("http://localhost").unwrap(), ("localhost".into(), 80));
        assert!(parse_http_target("https://x").is_err());
        assert!(parse_http_target("http://a/b").is_err());
    }

    #[test]
    fn wire_bytes_exact_and_defaults() {
        let req = PlannedRequest {
            method: "GET".into(),
            path: b"/file%20%00.php".to_vec(),
            headers: vec![],
            body: None,
        };
        let wire = wire_bytes(&req, "127.0.0.1", 8080);
        let text = String::from_utf8_lossy(&wire);
        assert!(text.starts_with("GET /file%20%00.php HTTP/1.1\r\n"));
        assert!(text.contains("Host: 127.0.0.1:8080\r\n"));
        assert!(text.contains("Connection: close\r\n"));
        assert!(!text.contains("Content-Length"));
    }

    #[test]
    fn explicit_headers_not_duplicated() {
        let req = PlannedRequest {
            method: "POST".into(),
            path: b"/u".to_vec(),
            headers: vec![("Host".into(), b"evil".to_vec())],
            body: Some(b"xy".to_vec()),
        };
        let wire = wire_bytes(&req, "127.0.0.1", 80);
        let text = String::from_utf8_lossy(&wire);
        assert_eq!(text.matches("Host:").count(), 1);
        assert!(text.contains("Host: evil\r\n"));
        assert!(text.contains("Content-Length: 2\r\n"));
        assert!(text.ends_with("\r\nxy"));
    }

    #[test]
    fn response_parsing_content_length() {
        let raw = b"HTTP/1.1 200 OK\r\nContent-Length: 5\r\n\r\nhellojunk";
        let r = parse_response(raw, DEFAULT_BODY_CAP).unwrap();
        assert_eq!(r.status, 200);
        assert_eq!(r.body, b"hello");
    }

    #[test]
    fn response_parsing_chunked() {
        let raw = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n5\r\nhello\r\n3\r\nwor\r\n0\r\n\r\n";
        let r = parse_response(raw, DEFAULT_BODY_CAP).unwrap();
        assert_eq!(r.body, b"hellowor");
    }

    #[test]
    fn unreachable_port_is_error() {
        let plan = RequestPlan {
            requests: vec![PlannedRequest {
                method: "GET".into(),
                path: b"/".to_vec(),
                headers: vec![],
                body: None,
            }],
        };
        let limits = ExecLimits { timeout_ms: 500, ..Default::default() };
        match execute_plan(&plan, "http://127.0.0.1:1", &limits) {
            Err(ExecError::TargetUnreachable { .. }) => {}
            other => panic!("expected TargetUnreachable, got {other:?}"),
        }
    }
}
