//! Deterministic simulated vulnerable web applications.
//!
//! Three loopback HTTP/1.1 fixtures stand in for containerized targets:
//! `echo` (transport conformance), `bypass_upload` (space/null-byte path
//! bypass with a restricted upload endpoint), and `file_read` (single-step
//! traversal read). Behavior is a pure function of (state, request bytes);
//! state starts empty on start and never survives stop.
//!
//! The "execution" of an uploaded file is a fixed marker substitution, not an
//! interpreter: content containing `<?php ECHO-MARKER` is answered with
//! `ECHO-MARKER-EXECUTED`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

pub const ADMIN_MARKER: &str = "ADMIN-PANEL";
pub const ECHO_MARKER_SOURCE: &str = "<?php ECHO-MARKER";
pub const ECHO_MARKER_EXECUTED: &str = "ECHO-MARKER-EXECUTED";
pub const UPLOAD_REJECT_BODY: &str = "only image file types (jpg, png, gif) are allowed";
pub const PASSWD_CONTENT: &str =
    "root:x:0:0:root:/root:/bin/bash\ndaemon:x:1:1:daemon:/usr/sbin:/usr/sbin/nologin\n";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error("port {port} in use: {detail}")]
    PortInUse { port: u16, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Echo,
    BypassUpload,
    FileRead,
}

impl FixtureKind {
    pub fn parse(name: &str) -> Result<Self, FixtureError> {
        match name {
            "echo" => Ok(FixtureKind::Echo),
            "bypass_upload" => Ok(FixtureKind::BypassUpload),
            "file_read" => Ok(FixtureKind::FileRead),
            other => Err(FixtureError::UnknownFixture(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::Echo => "echo",
            FixtureKind::BypassUpload => "bypass_upload",
            FixtureKind::FileRead => "file_read",
        }
    }
}

struct ParsedRequest {
    method: String,
    path: String,
    head: Vec<u8>,
    body: Vec<u8>,
}

fn read_request(stream: &mut TcpStream) -> Option<ParsedRequest> {
    stream.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    let mut raw = Vec::new();
    let mut buf = [0u8; 8192];
    let head_end = loop {
        if let Some(p) = raw.windows(4).position(|w| w == b"\r\n\r\n") {
            break p;
        }
        match stream.read(&mut buf) {
            Ok(0) => return None,
            Ok(n) => raw.extend_from_slice(&buf[..n]),
            Err(_) => return None,
        }
    };
    let head = raw[..head_end + 4].to_vec();
    let head_text = String::from_utf8_lossy(&head);
    let mut first = head_text.split("\r\n").next().unwrap_or("").splitn(3, ' ');
    let method = first.next().unwrap_or("").to_string();
    let path = first.next().unwrap_or("").to_string();
    let content_length = head_text
        .split("\r\n")
        .filter_map(|l| l.split_once(':'))
        .find(|(n, _)| n.trim().eq_ignore_ascii_case("Content-Length"))
        .and_then(|(_, v)| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = raw[head_end + 4..].to_vec();
    while body.len() < content_length {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => body.extend_from_slice(&buf[..n]),
            Err(_) => break,
        }
    }
    body.truncate(content_length);
    Some(ParsedRequest { method, path, head, body })
}

fn respond(stream: &mut TcpStream, status: u16, reason: &str, body: &[u8]) {
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(body);
    let _ = stream.flush();
}

type Uploads = Arc<Mutex<HashMap<String, Vec<u8>>>>;

fn admin_bypass_re() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"^/[^ ]+%20/\.\./admin/").unwrap())
}

fn exec_bypass_re() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"^/uploads/([^ /]+)%20%00\.php$").unwrap())
}

/// Minimal multipart parse: pull `filename="..."` and the part content.
/// Tolerates bare-LF line endings so DSL heredoc bodies stay readable.
fn parse_multipart(body: &[u8]) -> Option<(String, Vec<u8>)> {
    let text = String::from_utf8_lossy(body);
    let fname_start = text.find("filename=\"")? + "filename=\"".len();
    let fname_end = text[fname_start..].find('"')? + fname_start;
    let filename = text[fname_start..fname_end].to_string();
    let after = &text[fname_end..];
    let content_start_rel = match (after.find("\r\n\r\n"), after.find("\n\n")) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => return None,
    };
    let sep_len = if after[content_start_rel..].starts_with("\r\n\r\n") { 4 } else { 2 };
    let content = &after[content_start_rel + sep_len..];
    // content runs to the closing boundary line
    let end = content.find("\n--").map(|p| {
        if content[..p].ends_with('\r') { p - 1 } else { p }
    });
    let content = match end {
        Some(e) => &content[..e],
        None => content.trim_end_matches('\n'),
    };
    Some((filename, content.as_bytes().to_vec()))
}

fn has_image_ext(name: &str) -> bool {
    ["jpg", "png", "gif"]
        .iter()
        .any(|e| name.rsplit('.').next() == Some(*e))
}

fn handle_bypass_upload(req: &ParsedRequest, uploads: &Uploads, stream: &mut TcpStream) {
    let path = req.path.as_str();
    if req.method == "GET" && admin_bypass_re().is_match(path) {
        let page = format!("<html><body>{ADMIN_MARKER}</body></html>");
        respond(stream, 200, "OK", page.as_bytes());
        return;
    }
    if path.starts_with("/admin/") || path == "/admin" {
        respond(stream, 403, "Forbidden", b"access to /admin is restricted");
        return;
    }
    if req.method == "POST" && path == "/upload" {
        match parse_multipart(&req.body) {
            Some((filename, content)) if has_image_ext(&filename) => {
                uploads
                    .lock()
                    .unwrap()
                    .insert(format!("/uploads/{filename}"), content);
                respond(stream, 200, "OK", format!("stored /uploads/{filename}").as_bytes());
            }
            Some(_) | None => {
                respond(stream, 403, "Forbidden", UPLOAD_REJECT_BODY.as_bytes());
            }
        }
        return;
    }
    if req.method == "GET" {
        if let Some(caps) = exec_bypass_re().captures(path) {
            let name = caps.get(1).unwrap().as_str();
            if has_image_ext(name) {
                let stored = uploads.lock().unwrap().get(&format!("/uploads/{name}")).cloned();
                if let Some(content) = stored {
                    if String::from_utf8_lossy(&content).contains(ECHO_MARKER_SOURCE) {
                        respond(stream, 200, "OK", ECHO_MARKER_EXECUTED.as_bytes());
                    } else {
                        respond(stream, 200, "OK", &content);
                    }
                    return;
                }
            }
            respond(stream, 404, "Not Found", b"no such file");
            return;
        }
    }
    respond(stream, 404, "Not Found", b"not found");
}

fn handle_file_read(req: &ParsedRequest, stream: &mut TcpStream) {
    let files: &[(&str, &str)] = &[("readme.txt", "public file listing\n")];
    if req.method == "GET" {
        if let Some(query) = req.path.strip_prefix("/files?name=") {
            if let Some(rest) = query.strip_prefix("%2e%2e%2f") {
                // exactly one traversal step out of the files directory
                if rest == "etc/passwd" || rest == "etc%2fpasswd" {
                    respond(stream, 200, "OK", PASSWD_CONTENT.as_bytes());
                } else {
                    respond(stream, 404, "Not Found", b"no such file");
                }
                return;
            }
            if query.contains("%2e%2e") || query.contains("..") {
                respond(stream, 404, "Not Found", b"no such file");
                return;
            }
            match files.iter().find(|(n, _)| *n == query) {
                Some((_, content)) => respond(stream, 200, "OK", content.as_bytes()),
                None => respond(stream, 404, "Not Found", b"no such file"),
            }
            return;
        }
    }
    respond(stream, 404, "Not Found", b"not found");
}

fn handle_conn(kind: FixtureKind, uploads: &Uploads, mut stream: TcpStream) {
    let Some(req) = read_request(&mut stream) else { return };
    match kind {
        FixtureKind::Echo => {
            respond(&mut stream, 200, "OK", &req.head);
        }
        FixtureKind::BypassUpload => handle_bypass_upload(&req, uploads, &mut stream),
        FixtureKind::FileRead => handle_file_read(&req, &mut stream),
    }
}

pub struct FixtureHandle {
    kind: FixtureKind,
    port: u16,
    shutdown: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl FixtureHandle {
    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn kind(&self) -> FixtureKind {
        self.kind
    }

    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // unblock the accept loop
        let _ = TcpStream::connect(("127.0.0.1", self.port));
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for FixtureHandle {
    fn drop(&mut self) {
        if self.join.is_some() {
            self.shutdown_now();
        }
    }
}

/// Start a fixture on 127.0.0.1:`port` (0 picks a free port). State is fresh.
pub fn start_fixture(name: &str, port: u16) -> Result<FixtureHandle, FixtureError> {
    let kind = FixtureKind::parse(name)?;
    let listener = TcpListener::bind(("127.0.0.1", port))
        .map_err(|e| FixtureError::PortInUse { port, detail: e.to_string() })?;
    let actual_port = listener.local_addr().map(|a| a.port()).unwrap_or(port);
    let shutdown = Arc::new(AtomicBool::new(false));
    let uploads: Uploads = Arc::new(Mutex::new(HashMap::new()));

    let flag = shutdown.clone();
    let join = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let uploads = uploads.clone();
            std::thread::spawn(move || handle_conn(kind, &uploads, stream));
        }
    });

    Ok(FixtureHandle { kind, port: actual_port, shutdown, join: Some(join) })
}
