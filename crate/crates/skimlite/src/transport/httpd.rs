//! Minimal HTTP/1.1 server: thread-per-connection with keep-alive, exact
//! Content-Length framing, and TCP_NODELAY on every socket.
//!
//! Written here instead of pulling a server crate because the benchmark
//! needs honest link behavior: throttled responses are paced in sub-MSS
//! chunks, and a server that leaves Nagle's algorithm on stalls ~40 ms per
//! chunk on loopback, swamping the bandwidth model.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::{Result, SkimError};

pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

pub enum ReplyBody {
    Bytes(Vec<u8>),
    /// Streams exactly `len` bytes out of `reader`.
    Stream { reader: Box<dyn Read + Send>, len: u64 },
}

pub struct HttpReply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: ReplyBody,
}

impl HttpReply {
    pub fn bytes(status: u16, content_type: &str, body: Vec<u8>) -> HttpReply {
        HttpReply {
            status,
            headers: vec![("Content-Type".into(), content_type.into())],
            body: ReplyBody::Bytes(body),
        }
    }

    pub fn text(status: u16, msg: impl Into<String>) -> HttpReply {
        HttpReply::bytes(status, "text/plain", msg.into().into_bytes())
    }

    pub fn with_header(mut self, name: &str, value: &str) -> HttpReply {
        self.headers.push((name.into(), value.into()));
        self
    }
}

pub type Handler = dyn Fn(&HttpRequest) -> HttpReply + Send + Sync;

/// Counting semaphore bounding concurrent request handling.
struct Gate {
    permits: Mutex<usize>,
    cond: Condvar,
}

impl Gate {
    fn new(n: usize) -> Gate {
        Gate { permits: Mutex::new(n.max(1)), cond: Condvar::new() }
    }

    fn acquire(&self) {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cond.wait(p).unwrap();
        }
        *p -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.cond.notify_one();
    }
}

/// A running server; stops when dropped.
pub struct HttpdHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl HttpdHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop; connection threads notice on their next
        // read timeout.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpdHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `listen` and serves `handler`, at most `workers` requests at once.
pub fn start_httpd(
    listen: &str,
    workers: usize,
    handler: Arc<Handler>,
) -> Result<HttpdHandle> {
    let listener = TcpListener::bind(listen)
        .map_err(|e| SkimError::transport(format!("bind {listen} failed: {e}")))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let gate = Arc::new(Gate::new(workers));

    let accept_stop = Arc::clone(&stop);
    let accept_thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if accept_stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let handler = Arc::clone(&handler);
            let stop = Arc::clone(&accept_stop);
            let gate = Arc::clone(&gate);
            std::thread::spawn(move || serve_connection(stream, handler.as_ref(), &stop, &gate));
        }
    });

    Ok(HttpdHandle { addr, stop, accept_thread: Some(accept_thread) })
}

fn serve_connection(mut stream: TcpStream, handler: &Handler, stop: &AtomicBool, gate: &Gate) {
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(Duration::from_millis(200))).ok();
    let mut buf: Vec<u8> = Vec::with_capacity(1024);
    loop {
        let request = match read_request(&mut stream, &mut buf, stop) {
            Ok(Some(r)) => r,
            Ok(None) => return, // clean close or shutdown
            Err(_) => return,
        };
        let close = request
            .header("connection")
            .is_some_and(|v| v.eq_ignore_ascii_case("close"));
        gate.acquire();
        let reply = handler(&request);
        let sent = write_reply(&mut stream, &request.method, reply);
        gate.release();
        if sent.is_err() || close {
            return;
        }
    }
}

/// Reads one request; `Ok(None)` means the peer closed between requests or
/// the server is shutting down.
fn read_request(
    stream: &mut TcpStream,
    buf: &mut Vec<u8>,
    stop: &AtomicBool,
) -> std::io::Result<Option<HttpRequest>> {
    let mut chunk = [0u8; 8192];
    let head_end = loop {
        if let Some(pos) = find_head_end(buf) {
            break pos;
        }
        if buf.len() > 64 * 1024 {
            return Err(std::io::Error::other("request head too large"));
        }
        match stream.read(&mut chunk) {
            Ok(0) => return Ok(None),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                if stop.load(Ordering::SeqCst) {
                    return Ok(None);
                }
            }
            Err(e) => return Err(e),
        }
    };

    let head = std::str::from_utf8(&buf[..head_end])
        .map_err(|_| std::io::Error::other("request head is not utf-8"))?;
    let mut lines = head.split("\r\n");
    let request_line = lines.next().unwrap_or("");
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_uppercase();
    let path = parts.next().unwrap_or("").to_string();
    if method.is_empty() || !path.starts_with('/') {
        return Err(std::io::Error::other(format!("bad request line {request_line:?}")));
    }
    let mut headers = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once(':') else {
            return Err(std::io::Error::other(format!("bad header line {line:?}")));
        };
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }

    let content_length: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.trim().parse().ok())
        .unwrap_or(0);
    let mut body = buf.split_off(head_end + 4);
    buf.clear();
    while body.len() < content_length {
        match stream.read(&mut chunk) {
            Ok(0) => return Err(std::io::Error::other("connection closed mid-body")),
            Ok(n) => body.extend_from_slice(&chunk[..n]),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(e) => return Err(e),
        }
    }
    // Pipelined extra bytes carry over to the next request.
    *buf = body.split_off(content_length);

    Ok(Some(HttpRequest { method, path, headers, body }))
}

fn find_head_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn write_reply(stream: &mut TcpStream, method: &str, reply: HttpReply) -> std::io::Result<()> {
    let len = match &reply.body {
        ReplyBody::Bytes(b) => b.len() as u64,
        ReplyBody::Stream { len, .. } => *len,
    };
    let mut head = format!(
        "HTTP/1.1 {} {}\r\nContent-Length: {len}\r\nConnection: keep-alive\r\n",
        reply.status,
        reason(reply.status)
    );
    for (k, v) in &reply.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    stream.write_all(head.as_bytes())?;
    if method != "HEAD" {
        match reply.body {
            ReplyBody::Bytes(b) => stream.write_all(&b)?,
            ReplyBody::Stream { mut reader, .. } => {
                let copied = std::io::copy(&mut reader, stream)?;
                if copied != len {
                    return Err(std::io::Error::other("body shorter than declared length"));
                }
            }
        }
    }
    stream.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        206 => "Partial Content",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        416 => "Range Not Satisfiable",
        422 => "Unprocessable Entity",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        _ => "Response",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::http::HttpClient;

    fn echo_server() -> HttpdHandle {
        start_httpd(
            "127.0.0.1:0",
            4,
            Arc::new(|req: &HttpRequest| {
                HttpReply::bytes(200, "text/plain", req.body.clone())
                    .with_header("x-path", &req.path)
            }),
        )
        .unwrap()
    }

    #[test]
    fn round_trips_requests_with_keep_alive() {
        let server = echo_server();
        let client = HttpClient::new();
        let url = format!("{}/a/b", server.url());
        for i in 0..3 {
            let body = format!("payload {i}");
            let resp = client.post(&url, "text/plain", body.as_bytes()).unwrap();
            assert_eq!(resp.status, 200);
            assert_eq!(resp.body, body.as_bytes());
            assert_eq!(resp.header("x-path"), Some("/a/b"));
        }
        server.stop();
    }

    #[test]
    fn streams_large_bodies_exactly() {
        let data = vec![7u8; 300_000];
        let expected = data.clone();
        let server = start_httpd(
            "127.0.0.1:0",
            2,
            Arc::new(move |_req: &HttpRequest| HttpReply {
                status: 200,
                headers: vec![],
                body: ReplyBody::Stream {
                    reader: Box::new(std::io::Cursor::new(data.clone())),
                    len: data.len() as u64,
                },
            }),
        )
        .unwrap();
        let client = HttpClient::new();
        let resp = client.get(&server.url()).unwrap();
        assert_eq!(resp.status, 200);
        assert_eq!(resp.body, expected);
    }

    #[test]
    fn head_omits_the_body_but_keeps_the_length() {
        let server = echo_server();
        let client = HttpClient::new();
        let resp = client.head(&format!("{}/x", server.url())).unwrap();
        assert_eq!(resp.status, 200);
        assert!(resp.body.is_empty());
        assert_eq!(resp.header("content-length"), Some("0"));
    }
}
