//! Minimal wire-protocol servers for tests and local experiments.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::{wire, HardLabelOracle};
use crate::error::{Error, Result};

/// How a stub answers.
#[derive(Clone)]
pub enum StubBehavior {
    Constant(i64),
    /// Even request ids get the first label, odd ids the second.
    Parity(i64, i64),
    /// Replies with a non-JSON line.
    Garbage,
    Oracle(Arc<dyn HardLabelOracle>),
}

impl StubBehavior {
    fn reply(&self, line: &str) -> Result<String> {
        let req = wire::parse_request(line)?;
        let label = match self {
            StubBehavior::Constant(l) => *l,
            StubBehavior::Parity(a, b) => {
                if req.id % 2 == 0 {
                    *a
                } else {
                    *b
                }
            }
            StubBehavior::Garbage => return Ok("abc\n".to_string()),
            StubBehavior::Oracle(o) => o.classify(&req.image()?)?.0,
        };
        wire::to_line(&wire::Response { id: req.id, label })
    }
}

/// Answers requests line by line until end of input; returns the request count.
pub fn serve_lines<R: BufRead, W: Write>(behavior: &StubBehavior, input: R, output: W) -> Result<u64> {
    serve_lines_with(behavior, input, output, |_| Ok(()))
}

/// As [`serve_lines`], calling `on_request` with the running count before each reply is sent.
pub fn serve_lines_with<R: BufRead, W: Write>(
    behavior: &StubBehavior,
    input: R,
    mut output: W,
    mut on_request: impl FnMut(u64) -> Result<()>,
) -> Result<u64> {
    let mut count = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        count += 1;
        let reply = behavior.reply(&line)?;
        on_request(count)?;
        output.write_all(reply.as_bytes())?;
        output.flush()?;
    }
    Ok(count)
}

/// An HTTP stub on a background thread.
pub struct HttpStub {
    server: Arc<tiny_http::Server>,
    addr: String,
    count: Arc<AtomicU64>,
    handle: Option<JoinHandle<()>>,
}

impl HttpStub {
    /// Binds `addr` (use port 0 for any free port). When `token` is set,
    /// requests without a matching bearer header get 401.
    pub fn start(addr: &str, behavior: StubBehavior, token: Option<String>) -> Result<Self> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| Error::OracleIo(e.to_string()))?);
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::OracleIo("stub bound to a non-IP address".into()))?;
        let count = Arc::new(AtomicU64::new(0));
        let (srv, cnt) = (server.clone(), count.clone());
        let handle = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let authorized = token.as_ref().is_none_or(|t| {
                    let want = format!("Bearer {t}");
                    req.headers().iter().any(|h| h.field.equiv("Authorization") && h.value.as_str() == want)
                });
                let response = if req.url() != "/classify" {
                    tiny_http::Response::from_string("not found\n").with_status_code(404)
                } else if !authorized {
                    tiny_http::Response::from_string("unauthorized\n").with_status_code(401)
                } else {
                    cnt.fetch_add(1, Ordering::SeqCst);
                    let mut body = String::new();
                    match req.as_reader().read_to_string(&mut body).map_err(Error::from).and_then(|_| behavior.reply(&body)) {
                        Ok(line) => tiny_http::Response::from_string(line),
                        Err(e) => tiny_http::Response::from_string(format!("{e}\n")).with_status_code(400),
                    }
                };
                let _ = req.respond(response);
            }
        });
        Ok(Self { server, addr: format!("http://{bound}"), count, handle: Some(handle) })
    }

    pub fn url(&self) -> &str {
        &self.addr
    }

    /// Requests that reached the classifier.
    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    /// Blocks serving until the process is killed.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for HttpStub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
