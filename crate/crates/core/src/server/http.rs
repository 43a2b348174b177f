//! Just enough HTTP to tell a WebSocket upgrade from a static file request
//! and to serve the latter.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::path::{Component, Path, PathBuf};

const MAX_HEAD: usize = 16 * 1024;

/// Peeks (without consuming) until the end of the request head.
pub fn peek_head(stream: &TcpStream) -> io::Result<String> {
    let mut buf = vec![0u8; MAX_HEAD];
    loop {
        let n = stream.peek(&mut buf)?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"));
        }
        let head = &buf[..n];
        if let Some(end) = find(head, b"\r\n\r\n") {
            return Ok(String::from_utf8_lossy(&head[..end]).into_owned());
        }
        if n == buf.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "request head too large"));
        }
        std::thread::sleep(std::time::Duration::from_millis(2));
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

pub fn is_websocket_upgrade(head: &str) -> bool {
    head.lines().skip(1).any(|l| {
        let l = l.to_ascii_lowercase();
        l.starts_with("upgrade:") && l.contains("websocket")
    })
}

/// Maps a request path onto a file under `root`, refusing anything that
/// would escape it.
pub fn resolve(root: &Path, target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut full = root.join(rel);
    if full.is_dir() {
        full.push("index.html");
    }
    full.is_file().then_some(full)
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "wasm" => "application/wasm",
        "ico" => "image/x-icon",
        _ => "application/octet-stream",
    }
}

/// Answers one GET and closes.
pub fn serve_static(mut stream: TcpStream, head: &str, root: Option<&Path>) -> io::Result<()> {
    let mut discard = vec![0u8; head.len() + 4];
    stream.read_exact(&mut discard)?;
    let target = head.split_whitespace().nth(1).unwrap_or("/");
    let file = root.and_then(|r| resolve(r, target));
    match file.map(|f| (std::fs::read(&f), f)) {
        Some((Ok(body), f)) => {
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                content_type(&f),
                body.len()
            )?;
            stream.write_all(&body)?;
        }
        _ => {
            let body = b"not found\n";
            write!(stream, "HTTP/1.1 404 Not Found\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len())?;
            stream.write_all(body)?;
        }
    }
    stream.flush()
}
