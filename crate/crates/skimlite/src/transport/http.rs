//! Minimal HTTP/1.1 client with keep-alive connection reuse and exact wire
//! accounting: every byte written to or read from the socket is counted,
//! which is what the benchmark's data-movement bounds are measured against.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Result, SkimError};
use crate::transport::{Counters, RangeSource};

#[derive(Debug)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    /// Time spent receiving the body after the headers arrived.
    pub body_elapsed: Duration,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

pub struct HttpClient {
    pool: Mutex<HashMap<String, TcpStream>>,
    wire_out: AtomicU64,
    wire_in: AtomicU64,
    timeout: Duration,
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpClient {
    pub fn new() -> HttpClient {
        HttpClient {
            pool: Mutex::new(HashMap::new()),
            wire_out: AtomicU64::new(0),
            wire_in: AtomicU64::new(0),
            timeout: Duration::from_secs(120),
        }
    }

    /// Bytes written to sockets so far.
    pub fn wire_out(&self) -> u64 {
        self.wire_out.load(Ordering::Relaxed)
    }

    /// Bytes read from sockets so far.
    pub fn wire_in(&self) -> u64 {
        self.wire_in.load(Ordering::Relaxed)
    }

    pub fn get(&self, url: &str) -> Result<HttpResponse> {
        self.request("GET", url, &[], None)
    }

    pub fn head(&self, url: &str) -> Result<HttpResponse> {
        self.request("HEAD", url, &[], None)
    }

    pub fn post(&self, url: &str, content_type: &str, body: &[u8]) -> Result<HttpResponse> {
        self.request("POST", url, &[("Content-Type", content_type.to_string())], Some(body))
    }

    /// Single-range GET; checks for 206 and an exact-length body.
    pub fn get_range(&self, url: &str, offset: u64, len: u64) -> Result<Vec<u8>> {
        let range = format!("bytes={}-{}", offset, offset + len - 1);
        let resp = self.request("GET", url, &[("Range", range)], None)?;
        if resp.status != 206 {
            return Err(SkimError::transport(format!(
                "range request to {url} returned status {}, expected 206",
                resp.status
            )));
        }
        if resp.body.len() as u64 != len {
            return Err(SkimError::transport(format!(
                "range request returned {} bytes, expected {len}",
                resp.body.len()
            )));
        }
        Ok(resp.body)
    }

    /// Size of the resource behind `url`.
    pub fn content_length(&self, url: &str) -> Result<u64> {
        let resp = self.head(url)?;
        if resp.status != 200 {
            return Err(SkimError::transport(format!(
                "HEAD {url} returned status {}",
                resp.status
            )));
        }
        let value = resp
            .header("x-file-size")
            .or_else(|| resp.header("content-length"))
            .ok_or_else(|| SkimError::transport("HEAD response carries no size header"))?;
        value
            .trim()
            .parse()
            .map_err(|_| SkimError::transport(format!("bad size header value {value:?}")))
    }

    pub fn request(
        &self,
        method: &str,
        url: &str,
        extra_headers: &[(&str, String)],
        body: Option<&[u8]>,
    ) -> Result<HttpResponse> {
        let (host, port, path) = parse_url(url)?;
        let key = format!("{host}:{port}");

        // `TE: identity` keeps servers on plain Content-Length framing; the
        // client does not speak chunked encoding, by design: identity bodies
        // keep the wire-byte accounting exact.
        let mut request = format!("{method} {path} HTTP/1.1\r\nHost: {key}\r\nTE: identity\r\n");
        for (k, v) in extra_headers {
            request.push_str(&format!("{k}: {v}\r\n"));
        }
        if let Some(body) = body {
            request.push_str(&format!("Content-Length: {}\r\n", body.len()));
        }
        request.push_str("\r\n");

        // A pooled connection may have gone stale; retry once on a fresh one.
        for attempt in 0..2 {
            let pooled = self.pool.lock().unwrap().remove(&key);
            let reused = pooled.is_some();
            let stream = match pooled {
                Some(s) => s,
                None => {
                    let s = TcpStream::connect((host.as_str(), port)).map_err(|e| {
                        SkimError::transport(format!("connect to {key} failed: {e}"))
                    })?;
                    s.set_nodelay(true).ok();
                    s.set_read_timeout(Some(self.timeout)).ok();
                    s.set_write_timeout(Some(self.timeout)).ok();
                    s
                }
            };
            match self.exchange(stream, method, request.as_bytes(), body) {
                Ok((resp, keep, stream)) => {
                    if keep {
                        self.pool.lock().unwrap().insert(key, stream);
                    }
                    return Ok(resp);
                }
                Err(e) => {
                    if reused && attempt == 0 {
                        continue;
                    }
                    return Err(e);
                }
            }
        }
        unreachable!("both attempts returned")
    }

    fn exchange(
        &self,
        mut stream: TcpStream,
        method: &str,
        head: &[u8],
        body: Option<&[u8]>,
    ) -> Result<(HttpResponse, bool, TcpStream)> {
        let io_err = |e: std::io::Error| SkimError::transport(format!("http i/o error: {e}"));
        stream.write_all(head).map_err(io_err)?;
        self.wire_out.fetch_add(head.len() as u64, Ordering::Relaxed);
        if let Some(body) = body {
            stream.write_all(body).map_err(io_err)?;
            self.wire_out.fetch_add(body.len() as u64, Ordering::Relaxed);
        }
        stream.flush().map_err(io_err)?;

        // Read until the end of the response headers.
        let mut buf = Vec::with_capacity(1024);
        let mut chunk = [0u8; 8192];
        let header_end = loop {
            if let Some(pos) = find_header_end(&buf) {
                break pos;
            }
            if buf.len() > 64 * 1024 {
                return Err(SkimError::transport("response headers too large"));
            }
            let n = stream.read(&mut chunk).map_err(io_err)?;
            if n == 0 {
                return Err(SkimError::transport("connection closed mid-response"));
            }
            self.wire_in.fetch_add(n as u64, Ordering::Relaxed);
            buf.extend_from_slice(&chunk[..n]);
        };

        let (status, headers) = parse_response_head(&buf[..header_end])?;
        let body_started = Instant::now();
        let mut body_bytes = buf.split_off(header_end + 4);

        let has_body = method != "HEAD" && status != 204 && status != 304;
        if has_body {
            let content_length: usize = headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                .and_then(|(_, v)| v.trim().parse().ok())
                .ok_or_else(|| {
                    SkimError::transport("response has a body but no content-length")
                })?;
            while body_bytes.len() < content_length {
                let n = stream.read(&mut chunk).map_err(io_err)?;
                if n == 0 {
                    return Err(SkimError::transport("connection closed mid-body"));
                }
                self.wire_in.fetch_add(n as u64, Ordering::Relaxed);
                body_bytes.extend_from_slice(&chunk[..n]);
            }
            if body_bytes.len() != content_length {
                return Err(SkimError::transport("body longer than content-length"));
            }
        } else {
            body_bytes.clear();
        }

        let keep = !headers
            .iter()
            .any(|(k, v)| k.eq_ignore_ascii_case("connection") && v.eq_ignore_ascii_case("close"));
        Ok((
            HttpResponse {
                status,
                headers,
                body: body_bytes,
                body_elapsed: body_started.elapsed(),
            },
            keep,
            stream,
        ))
    }
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn parse_response_head(head: &[u8]) -> Result<(u16, Vec<(String, String)>)> {
    let text = std::str::from_utf8(head)
        .map_err(|_| SkimError::transport("response head is not utf-8"))?;
    let mut lines = text.split("\r\n");
    let status_line = lines
        .next()
        .ok_or_else(|| SkimError::transport("empty response"))?;
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SkimError::transport(format!("bad status line {status_line:?}")))?;
    let mut headers = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| SkimError::transport(format!("bad header line {line:?}")))?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok((status, headers))
}

/// Splits `http://host:port/path` into its parts.
pub fn parse_url(url: &str) -> Result<(String, u16, String)> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| SkimError::transport(format!("only http:// urls are supported: {url}")))?;
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let (host, port) = match authority.rsplit_once(':') {
        Some((h, p)) => (
            h.to_string(),
            p.parse()
                .map_err(|_| SkimError::transport(format!("bad port in {url}")))?,
        ),
        None => (authority.to_string(), 80),
    };
    Ok((host, port, path.to_string()))
}

/// A remote file exposed as a [`RangeSource`] via HTTP range requests.
pub struct HttpRangeSource {
    client: Arc<HttpClient>,
    url: String,
    size: u64,
    counters: Counters,
}

impl HttpRangeSource {
    /// Probes the size with a HEAD request and returns the source.
    pub fn open(client: Arc<HttpClient>, url: impl Into<String>) -> Result<HttpRangeSource> {
        let url = url.into();
        let size = client.content_length(&url)?;
        Ok(HttpRangeSource { client, url, size, counters: Counters::default() })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl RangeSource for HttpRangeSource {
    fn len(&self) -> u64 {
        self.size
    }

    fn read_range(&self, offset: u64, len: u64) -> Result<Vec<u8>> {
        super::check_range(offset, len, self.size)?;
        let bytes = self.client.get_range(&self.url, offset, len)?;
        self.counters.record(len);
        Ok(bytes)
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }
}
