//! Scripted HTTP server standing in for a chat-completion endpoint in tests.
//!
//! A fixture is a JSON list of replies served in arrival order; once the
//! script runs out the last reply repeats.
//!
//! ```json
//! [
//!   {"content": "text with a <<<STRUCTURED>>> ... <<<END>>> section"},
//!   {"status": 500, "body": "overloaded"},
//!   {"content": "late", "delay_ms": 2000}
//! ]
//! ```
//!
//! `content` is wrapped as `choices[0].message.content`; `body` is sent
//! verbatim. `status` defaults to 200 and `delay_ms` to 0.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubReply {
    #[serde(default = "ok_status")]
    pub status: u16,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub body: Option<String>,
    #[serde(default)]
    pub delay_ms: u64,
}

fn ok_status() -> u16 {
    200
}

impl StubReply {
    pub fn content(text: impl Into<String>) -> Self {
        Self { status: 200, content: Some(text.into()), body: None, delay_ms: 0 }
    }

    pub fn raw(status: u16, body: impl Into<String>) -> Self {
        Self { status, content: None, body: Some(body.into()), delay_ms: 0 }
    }

    pub fn delayed(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }

    fn render(&self) -> String {
        match (&self.body, &self.content) {
            (Some(b), _) => b.clone(),
            (None, Some(c)) => serde_json::json!({
                "choices": [{"index": 0, "message": {"role": "assistant", "content": c}}]
            })
            .to_string(),
            (None, None) => String::new(),
        }
    }
}

pub fn parse_fixture(json: &str) -> Result<Vec<StubReply>, serde_json::Error> {
    serde_json::from_str(json)
}

/// Picks the reply for a request. The default serves the script in order.
pub type Responder = dyn Fn(usize, &str) -> StubReply + Send + Sync;

pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<Mutex<Vec<String>>>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<StubReply>) -> std::io::Result<Self> {
        assert!(!script.is_empty(), "stub script must not be empty");
        Self::with_responder(Arc::new(move |i, _| script[i.min(script.len() - 1)].clone()))
    }

    /// Serves replies computed from the arrival index and request body.
    pub fn with_responder(responder: Arc<Responder>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let counter = Arc::new(AtomicUsize::new(0));
        let (stop2, requests2) = (stop.clone(), requests.clone());
        let handle = thread::spawn(move || {
            while !stop2.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let (responder, requests, counter) = (responder.clone(), requests2.clone(), counter.clone());
                        thread::spawn(move || serve(stream, &*responder, &requests, &counter));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
                    Err(_) => break,
                }
            }
        });
        Ok(Self { addr, stop, requests, handle: Some(handle) })
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Request bodies received so far, in arrival order.
    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().map(|r| r.clone()).unwrap_or_default()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, responder: &Responder, requests: &Mutex<Vec<String>>, counter: &AtomicUsize) {
    let _ = stream.set_nonblocking(false);
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => return,
            Ok(_) => {}
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((k, v)) = trimmed.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let body = String::from_utf8_lossy(&body).into_owned();
    let index = {
        let mut r = match requests.lock() {
            Ok(r) => r,
            Err(_) => return,
        };
        r.push(body.clone());
        counter.fetch_add(1, Ordering::SeqCst)
    };
    let reply = responder(index, &body);
    if reply.delay_ms > 0 {
        thread::sleep(Duration::from_millis(reply.delay_ms));
    }
    let payload = reply.render();
    let head = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.status,
        payload.len()
    );
    let mut stream = stream;
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();
}
