//! Loopback HTTP stub answering the decision endpoint from a script.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Debug, Clone)]
pub enum Reply {
    /// `{"text": ..}` with status 200.
    Text(String),
    /// Answer only after this long.
    Late(Duration, String),
    Status(u16),
    /// Body sent verbatim with status 200.
    Raw(String),
}

pub struct Stub {
    pub url: String,
    script: Arc<Mutex<Vec<Reply>>>,
    /// Request bodies in arrival order.
    pub bodies: Arc<Mutex<Vec<String>>>,
    pub hits: Arc<AtomicUsize>,
}

fn respond(mut s: std::net::TcpStream, status: u16, body: &str) {
    let reason = if status == 200 { "OK" } else { "Error" };
    let msg = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = s.write_all(msg.as_bytes());
    let _ = s.flush();
}

impl Stub {
    /// Queues a reply behind the scripted ones.
    pub fn push(&self, r: Reply) {
        self.script.lock().unwrap().push(r);
    }

    pub fn bodies(&self) -> Vec<String> {
        self.bodies.lock().unwrap().clone()
    }
}

/// Serves reply `i` to the `i`-th request; the last reply repeats, and an
/// empty script answers 500.
pub fn spawn(script: Vec<Reply>) -> Stub {
    let script = Arc::new(Mutex::new(script));
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(vec![]));
    let hits = Arc::new(AtomicUsize::new(0));
    let (b, h, sc) = (bodies.clone(), hits.clone(), script.clone());
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(stream) = conn else { continue };
            let n = h.fetch_add(1, Ordering::SeqCst);
            let reply = {
                let sc = sc.lock().unwrap();
                sc.get(n).or(sc.last()).cloned().unwrap_or(Reply::Status(500))
            };
            let bodies = b.clone();
            std::thread::spawn(move || {
                let mut r = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if r.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; len];
                let _ = r.read_exact(&mut body);
                bodies.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
                let wrap = |t: &str| serde_json::json!({ "text": t }).to_string();
                match reply {
                    Reply::Text(t) => respond(stream, 200, &wrap(&t)),
                    Reply::Late(d, t) => {
                        std::thread::sleep(d);
                        respond(stream, 200, &wrap(&t));
                    }
                    Reply::Status(s) => respond(stream, s, "{}"),
                    Reply::Raw(body) => respond(stream, 200, &body),
                }
            });
        }
    });
    Stub { url, script, bodies, hits }
}
