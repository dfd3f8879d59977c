//! Loopback stand-in for a chat-completions endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

/// What the fake answers: an HTTP status and, for 200, the assistant text.
pub type Responder = dyn Fn(&Value) -> (u16, String) + Send + Sync;

pub struct FakeServer {
    pub url: String,
    requests: Arc<Mutex<Vec<Value>>>,
}

impl FakeServer {
    pub fn start(responder: impl Fn(&Value) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let responder: Arc<Responder> = Arc::new(responder);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let log = Arc::clone(&log);
                let responder = Arc::clone(&responder);
                thread::spawn(move || {
                    let _ = serve(stream, &log, responder.as_ref());
                });
            }
        });
        Self { url, requests }
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<Value>>, responder: &Responder) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut stream = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let mut length = 0usize;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h)?;
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; length];
        reader.read_exact(&mut body)?;
        let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        log.lock().unwrap().push(request.clone());
        let (status, content) = responder(&request);
        let payload = if status == 200 {
            json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
        } else {
            json!({"error": content}).to_string()
        };
        write!(
            stream,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
            payload.len()
        )?;
        stream.flush()?;
    }
}

/// Text of the user turn in a recorded request.
pub fn user_text(request: &Value) -> &str {
    request
        .pointer("/messages/1/content/0/text")
        .and_then(Value::as_str)
        .unwrap_or("")
}

/// Mark ids listed as `mark N:` lines in a stage prompt.
pub fn listed_marks(text: &str) -> Vec<u32> {
    text.lines()
        .filter_map(|l| l.strip_prefix("mark "))
        .filter_map(|l| l.split(':').next())
        .filter_map(|n| n.trim().parse().ok())
        .collect()
}

pub fn fenced(v: &Value) -> String {
    format!("Here you go.\n```json\n{v}\n```\n")
}
