//! Shared helpers for integration tests.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use seqroute::gateway::{BackendProfile, ChatClient, Limiter};

/// A one-request-per-connection chat-completions server that plays back a
/// script of (status, assistant text) pairs and records request bodies.
pub struct MockServer {
    pub url: String,
    pub bodies: Arc<Mutex<Vec<serde_json::Value>>>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(script: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = bodies.clone();
        let handle = std::thread::spawn(move || {
            for (status, text) in script {
                let (mut stream, _) = listener.accept().unwrap();
                stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            length = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                seen.lock().unwrap().push(serde_json::from_slice(&body).unwrap());
                let payload = if status == 200 {
                    serde_json::json!({
                        "choices": [{"message": {"role": "assistant", "content": text}}],
                        "usage": {"prompt_tokens": 40, "completion_tokens": 7}
                    })
                    .to_string()
                } else {
                    format!("{{\"error\": \"{text}\"}}")
                };
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        MockServer { url, bodies, handle: Some(handle) }
    }

    pub fn profile(&self) -> BackendProfile {
        BackendProfile { backoff_ms: 1, timeout_secs: 10.0, ..BackendProfile::new(&self.url, "mock") }
    }

    pub fn client(&self) -> ChatClient {
        ChatClient::new(self.profile(), Limiter::new(1)).unwrap()
    }

    /// Waits for the script to be consumed and returns the request bodies.
    pub fn finish(mut self) -> Vec<serde_json::Value> {
        self.handle.take().unwrap().join().unwrap();
        self.bodies.lock().unwrap().clone()
    }
}
