//! HTTP byte-range file server (RFC 7233 single ranges) with an optional
//! shared bandwidth throttle on the write path.

use std::fs::File;
use std::io::Read;
use std::os::unix::fs::FileExt;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crate::error::Result;
use crate::transport::httpd::{start_httpd, HttpReply, HttpRequest, HttpdHandle, ReplyBody};
use crate::transport::throttle::{Throttle, ThrottledReader, DEFAULT_BURST};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// Directory whose files are served.
    pub root: PathBuf,
    /// Bind address, e.g. `127.0.0.1:0`.
    pub listen: String,
    /// Bytes per second over the link; `None` means unthrottled.
    pub rate: Option<u64>,
    /// Token-bucket burst, in bytes.
    pub burst: u64,
    /// Simulated seek cost paid once per request before reading the file.
    pub read_latency: Duration,
    /// Concurrent requests.
    pub workers: usize,
}

impl ServeConfig {
    pub fn new(root: impl Into<PathBuf>, listen: impl Into<String>) -> ServeConfig {
        ServeConfig {
            root: root.into(),
            listen: listen.into(),
            rate: None,
            burst: DEFAULT_BURST,
            read_latency: Duration::ZERO,
            workers: 8,
        }
    }
}

/// A running server; stops when dropped or on [`ServerHandle::stop`].
pub struct ServerHandle {
    inner: HttpdHandle,
}

impl ServerHandle {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.inner.addr()
    }

    pub fn url(&self) -> String {
        self.inner.url()
    }

    pub fn stop(self) {
        self.inner.stop();
    }
}

/// Starts the file server on background threads and returns its handle.
pub fn start_server(config: ServeConfig) -> Result<ServerHandle> {
    let workers = config.workers.max(1);
    let listen = config.listen.clone();
    let throttle = config.rate.map(|r| Arc::new(Throttle::with_burst(r, config.burst)));
    let handler = move |req: &HttpRequest| match build_response(req, &config) {
        Ok(reply) => finish(reply, &throttle),
        Err((status, msg)) => HttpReply::text(status, msg),
    };
    let inner = start_httpd(&listen, workers, Arc::new(handler))?;
    Ok(ServerHandle { inner })
}

/// Blocking variant for the CLI.
pub fn serve(config: ServeConfig) -> Result<()> {
    let handle = start_server(config)?;
    eprintln!("serving on {}", handle.url());
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

struct FileResponse {
    status: u16,
    headers: Vec<(String, String)>,
    body: Option<RangeReader>,
    body_len: u64,
}

fn finish(resp: FileResponse, throttle: &Option<Arc<Throttle>>) -> HttpReply {
    let body = match resp.body {
        None => ReplyBody::Bytes(Vec::new()),
        Some(reader) => ReplyBody::Stream {
            reader: match throttle {
                Some(t) => Box::new(ThrottledReader::new(reader, Arc::clone(t))),
                None => Box::new(reader),
            },
            len: resp.body_len,
        },
    };
    HttpReply { status: resp.status, headers: resp.headers, body }
}

fn build_response(
    request: &HttpRequest,
    config: &ServeConfig,
) -> std::result::Result<FileResponse, (u16, String)> {
    if request.method != "GET" && request.method != "HEAD" {
        return Err((405, "method not allowed".into()));
    }
    let path = sanitize_path(&config.root, &request.path)
        .ok_or_else(|| (404, "bad path".to_string()))?;
    let file =
        File::open(&path).map_err(|_| (404, format!("no such file: {}", request.path)))?;
    let size = file.metadata().map_err(|e| (500, e.to_string()))?.len();

    let (status, start, body_len, mut headers) = match request.header("range") {
        None => (200, 0, size, vec![]),
        Some(spec) => match parse_range(spec, size) {
            Some((start, len)) => (
                206,
                start,
                len,
                vec![(
                    "Content-Range".to_string(),
                    format!("bytes {}-{}/{}", start, start + len.saturating_sub(1), size),
                )],
            ),
            None => {
                return Err((416, format!("bad range {spec:?} for size {size}")));
            }
        },
    };
    headers.push(("Accept-Ranges".into(), "bytes".into()));
    headers.push(("x-file-size".into(), size.to_string()));

    // One request models one storage access: the seek cost is paid once,
    // however large the (possibly coalesced) range is.
    if !config.read_latency.is_zero() {
        std::thread::sleep(config.read_latency);
    }

    let body = if request.method == "HEAD" {
        None
    } else {
        Some(RangeReader { file, pos: start, remaining: body_len })
    };
    Ok(FileResponse { status, headers, body, body_len })
}

/// Resolves a request path under the root, rejecting traversal.
fn sanitize_path(root: &Path, url: &str) -> Option<PathBuf> {
    let rel = url.split('?').next().unwrap_or("").trim_start_matches('/');
    let rel = Path::new(rel);
    for comp in rel.components() {
        match comp {
            Component::Normal(_) => {}
            _ => return None,
        }
    }
    Some(root.join(rel))
}

/// Parses a single-range `bytes=` spec against a resource size.
fn parse_range(spec: &str, size: u64) -> Option<(u64, u64)> {
    let spec = spec.trim().strip_prefix("bytes=")?;
    if spec.contains(',') {
        return None; // multi-range unsupported
    }
    let (a, b) = spec.split_once('-')?;
    match (a.is_empty(), b.is_empty()) {
        (false, false) => {
            let start: u64 = a.parse().ok()?;
            let end: u64 = b.parse().ok()?;
            if start > end || end >= size {
                return None;
            }
            Some((start, end - start + 1))
        }
        (false, true) => {
            let start: u64 = a.parse().ok()?;
            if start >= size {
                return None;
            }
            Some((start, size - start))
        }
        (true, false) => {
            let suffix: u64 = b.parse().ok()?;
            if suffix == 0 || suffix > size {
                return None;
            }
            Some((size - suffix, suffix))
        }
        (true, true) => None,
    }
}

/// Streams `[pos, pos + remaining)` of a file.
struct RangeReader {
    file: File,
    pos: u64,
    remaining: u64,
}

impl Read for RangeReader {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        if self.remaining == 0 {
            return Ok(0);
        }
        let want = (buf.len() as u64).min(self.remaining) as usize;
        let n = self.file.read_at(&mut buf[..want], self.pos)?;
        if n == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "file shrank while serving",
            ));
        }
        self.pos += n as u64;
        self.remaining -= n as u64;
        Ok(n)
    }
}
