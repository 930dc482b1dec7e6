//! Read-only HTTP access to an asset container.
//!
//! - `/scene.unrb`: the whole file
//! - `/manifest.json`: the manifest section
//! - `/sections.json`: the section table (name, offset, length, crc32)
//! - `/sections/<name>`: one section's bytes
//!
//! Byte ranges (`Range: bytes=a-b`, `a-`, `-n`) are honoured on every route.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::thread;

use nerfmesh::pipeline::{Container, SectionEntry};
use nerfmesh::{Error, Result};
use tiny_http::{Header, Method, Request, Response, Server, StatusCode};

const WORKERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteRange {
    Full,
    /// Inclusive bounds.
    Partial(u64, u64),
    Unsatisfiable,
}

/// Interprets a `Range` header against a body of `len` bytes. Multi-range and malformed
/// headers fall back to the full body.
pub fn parse_range(header: Option<&str>, len: u64) -> ByteRange {
    let Some(spec) = header.and_then(|h| h.trim().strip_prefix("bytes=")) else {
        return ByteRange::Full;
    };
    if spec.contains(',') {
        return ByteRange::Full;
    }
    let Some((a, b)) = spec.split_once('-') else {
        return ByteRange::Full;
    };
    let (a, b) = (a.trim(), b.trim());
    let parsed = match (a.is_empty(), b.is_empty()) {
        (true, true) => return ByteRange::Full,
        (true, false) => match b.parse::<u64>() {
            Ok(0) => return ByteRange::Unsatisfiable,
            Ok(n) => Some((len.saturating_sub(n), len.saturating_sub(1))),
            Err(_) => None,
        },
        (false, _) => match (
            a.parse::<u64>(),
            if b.is_empty() {
                Ok(u64::MAX)
            } else {
                b.parse::<u64>()
            },
        ) {
            (Ok(s), Ok(e)) if s <= e => Some((s, e.min(len.saturating_sub(1)))),
            _ => None,
        },
    };
    match parsed {
        None => ByteRange::Full,
        Some((s, _)) if s >= len => ByteRange::Unsatisfiable,
        Some((s, e)) => ByteRange::Partial(s, e),
    }
}

struct Assets {
    bytes: Vec<u8>,
    table: Vec<SectionEntry>,
    table_json: Vec<u8>,
}

impl Assets {
    fn body(&self, url: &str) -> Option<(&[u8], &'static str)> {
        let path = url.split('?').next().unwrap_or("");
        let section = |name: &str| {
            self.table
                .iter()
                .find(|e| e.name == name)
                .map(|e| &self.bytes[e.offset as usize..(e.offset + e.length) as usize])
        };
        match path {
            "/scene.unrb" => Some((&self.bytes, "application/octet-stream")),
            "/manifest.json" => section("manifest").map(|b| (b, "application/json")),
            "/sections.json" => Some((&self.table_json, "application/json")),
            p => p
                .strip_prefix("/sections/")
                .and_then(section)
                .map(|b| (b, "application/octet-stream")),
        }
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("valid header")
}

fn respond(assets: &Assets, req: Request) {
    let head = *req.method() == Method::Head;
    if !head && *req.method() != Method::Get {
        let _ =
            req.respond(Response::empty(StatusCode(405)).with_header(header("Allow", "GET, HEAD")));
        return;
    }
    let Some((body, mime)) = assets.body(req.url()) else {
        let _ = req.respond(Response::from_string("not found\n").with_status_code(404));
        return;
    };
    let len = body.len() as u64;
    let range = req
        .headers()
        .iter()
        .find(|h| h.field.equiv("Range"))
        .map(|h| h.value.as_str().to_string());
    let (status, slice, extra) = match parse_range(range.as_deref(), len) {
        ByteRange::Full => (200, body, None),
        ByteRange::Partial(s, e) => (
            206,
            &body[s as usize..=e as usize],
            Some(header("Content-Range", &format!("bytes {s}-{e}/{len}"))),
        ),
        ByteRange::Unsatisfiable => {
            let r = Response::empty(StatusCode(416))
                .with_header(header("Content-Range", &format!("bytes */{len}")));
            let _ = req.respond(r);
            return;
        }
    };
    let data = if head { Vec::new() } else { slice.to_vec() };
    let mut r = Response::new(
        StatusCode(status),
        vec![
            header("Content-Type", mime),
            header("Accept-Ranges", "bytes"),
            header("Access-Control-Allow-Origin", "*"),
        ],
        std::io::Cursor::new(data),
        Some(slice.len()),
        None,
    )
    .with_chunked_threshold(usize::MAX);
    if let Some(h) = extra {
        r.add_header(h);
    }
    let _ = req.respond(r);
}

/// Serves `path` until the process is stopped. Port 0 picks a free port; the bound address is
/// printed on the first line of stdout.
pub fn serve(path: &Path, bind: &str, port: u16) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Container::from_bytes(&bytes)?;
    let table = Container::read_table(&bytes)?;
    let table_json = serde_json::to_vec_pretty(&table)?;
    let assets = Arc::new(Assets {
        bytes,
        table,
        table_json,
    });
    let server = Server::http((bind, port))
        .map_err(|e| Error::Argument(format!("cannot listen on {bind}:{port}: {e}")))?;
    let addr = server
        .server_addr()
        .to_ip()
        .map(|a| a.to_string())
        .unwrap_or_else(|| format!("{bind}:{port}"));
    println!("listening on http://{addr}");
    std::io::stdout().flush().ok();
    let server = Arc::new(server);
    let workers: Vec<_> = (0..WORKERS)
        .map(|_| {
            let server = Arc::clone(&server);
            let assets = Arc::clone(&assets);
            thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    respond(&assets, req);
                }
            })
        })
        .collect();
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range(None, 10), ByteRange::Full);
        assert_eq!(parse_range(Some("bytes=2-5"), 10), ByteRange::Partial(2, 5));
        assert_eq!(parse_range(Some("bytes=2-"), 10), ByteRange::Partial(2, 9));
        assert_eq!(parse_range(Some("bytes=-3"), 10), ByteRange::Partial(7, 9));
        assert_eq!(parse_range(Some("bytes=-30"), 10), ByteRange::Partial(0, 9));
        assert_eq!(
            parse_range(Some("bytes=4-100"), 10),
            ByteRange::Partial(4, 9)
        );
        assert_eq!(
            parse_range(Some("bytes=10-12"), 10),
            ByteRange::Unsatisfiable
        );
        assert_eq!(parse_range(Some("bytes=5-2"), 10), ByteRange::Full);
        assert_eq!(parse_range(Some("bytes=0-1,4-5"), 10), ByteRange::Full);
        assert_eq!(parse_range(Some("items=0-1"), 10), ByteRange::Full);
    }
}
