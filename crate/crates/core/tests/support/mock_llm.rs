//! Minimal HTTP/1.1 server that answers chat-completion requests.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

/// `(request index, parsed JSON body) -> (status, response body)`.
pub type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

#[derive(Debug, Clone)]
pub struct Recorded {
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

pub struct MockServer {
    url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
}

impl MockServer {
    pub fn start(handler: impl Fn(usize, &Value) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = Arc::new(AtomicUsize::new(0));
        let recorded = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let (handler, counter, recorded) = (Arc::clone(&handler), Arc::clone(&counter), Arc::clone(&recorded));
                thread::spawn(move || serve(stream, &*handler, &counter, &recorded));
            }
        });
        Self { url, requests }
    }

    /// Base URL ending in `/v1`.
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, handler: &Handler, counter: &AtomicUsize, recorded: &Mutex<Vec<Recorded>>) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut headers = Vec::new();
    let mut length = 0;
    loop {
        line.clear();
        reader.read_line(&mut line).expect("header line");
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().expect("content length");
            }
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).expect("body");
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let index = counter.fetch_add(1, Ordering::SeqCst);
    recorded.lock().unwrap().push(Recorded {
        headers,
        body: body.clone(),
    });
    let (status, payload) = handler(index, &body);
    let reason = if status < 400 { "OK" } else { "Error" };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let mut stream = stream;
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

/// A chat-completion payload whose assistant message is `content`.
pub fn completion(content: &str) -> String {
    json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

/// Text of the single user message in a request body.
pub fn prompt_of(body: &Value) -> &str {
    body["messages"][0]["content"].as_str().unwrap_or("")
}

#[derive(Debug, Clone)]
pub struct CannedReply {
    pub reply: String,
    pub answer: usize,
}

pub fn reply_corpus() -> Vec<CannedReply> {
    let items: Vec<Value> = serde_json::from_str(include_str!("../data/replies.json")).expect("reply corpus parses");
    items
        .iter()
        .map(|v| CannedReply {
            reply: v["reply"].as_str().expect("reply").to_string(),
            answer: v["answer"].as_u64().expect("answer") as usize,
        })
        .collect()
}
