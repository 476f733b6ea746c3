//! In-process HTTP stub implementing the chat-completions and embeddings
//! surfaces, for conformance tests and the `stub-server` CLI command.
//!
//! The server is deliberately tiny: one accept loop, `Connection: close` on
//! every response, JSON in and out. Handlers are plain closures, so tests can
//! fault-inject (500s, garbage bodies) while the default handler answers chat
//! requests from a scripted rule table and embeds via the hashed-bag encoder.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::json;

use crate::env::ScriptedRule;
use crate::reward::{Encoder, HashedBagEncoder};

/// A parsed incoming request, as much of it as the stub cares about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub authorization: Option<String>,
    pub body: String,
}

/// What the handler wants sent back. `body` is written verbatim, so a
/// handler can return deliberately malformed JSON.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
}

impl StubResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        StubResponse {
            status: 200,
            body: body.into(),
        }
    }

    pub fn error(status: u16, message: &str) -> Self {
        StubResponse {
            status,
            body: json!({ "error": { "message": message } }).to_string(),
        }
    }
}

pub type Handler = dyn Fn(&RecordedRequest) -> StubResponse + Send + Sync;

/// A running stub endpoint. Dropping the handle stops the accept loop.
pub struct StubServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    hits: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `127.0.0.1:port` (0 picks a free port) and serves `handler` on
    /// a background thread until the handle is dropped.
    pub fn spawn(port: u16, handler: Arc<Handler>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let hits = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));

        let thread_requests = Arc::clone(&requests);
        let thread_hits = Arc::clone(&hits);
        let thread_stop = Arc::clone(&stop);
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if thread_stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = Arc::clone(&handler);
                let requests = Arc::clone(&thread_requests);
                let hits = Arc::clone(&thread_hits);
                std::thread::spawn(move || {
                    serve_connection(stream, &*handler, &requests, &hits);
                });
            }
        });

        Ok(StubServer {
            addr,
            requests,
            hits,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    /// The default backend: chat answers come from the rule table (applied
    /// to the latest user message, turn = number of user messages seen),
    /// embeddings from [`HashedBagEncoder`].
    pub fn with_rules(port: u16, rules: Vec<ScriptedRule>) -> std::io::Result<Self> {
        StubServer::spawn(port, Arc::new(move |req| rule_handler(req, &rules)))
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Total requests accepted, including ones answered with errors.
    pub fn request_count(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }

    /// Blocks the calling thread forever; used by the CLI command.
    pub fn serve_forever(mut self) -> ! {
        // Keep the accept thread alive by never dropping the handle.
        let handle = self.accept_thread.take().expect("accept thread running");
        let _ = handle.join();
        unreachable!("stub server accept loop exited without shutdown")
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop with one throwaway connection.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn serve_connection(
    mut stream: TcpStream,
    handler: &Handler,
    requests: &Mutex<Vec<RecordedRequest>>,
    hits: &AtomicUsize,
) {
    let Some(request) = read_request(&mut stream) else {
        return; // e.g. the shutdown poke, which sends no bytes
    };
    hits.fetch_add(1, Ordering::SeqCst);
    let response = handler(&request);
    requests.lock().unwrap().push(request);
    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    );
    let _ = stream.flush();
}

fn read_request(stream: &mut TcpStream) -> Option<RecordedRequest> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();

    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let value = value.trim();
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.parse().unwrap_or(0);
            } else if name.eq_ignore_ascii_case("authorization") {
                authorization = Some(value.to_string());
            }
        }
    }

    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    Some(RecordedRequest {
        method,
        path,
        authorization,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

fn rule_handler(request: &RecordedRequest, rules: &[ScriptedRule]) -> StubResponse {
    match request.path.as_str() {
        "/v1/chat/completions" => chat_completion(request, rules),
        "/v1/embeddings" => embeddings(request),
        _ => StubResponse::error(404, "unknown path"),
    }
}

fn chat_completion(request: &RecordedRequest, rules: &[ScriptedRule]) -> StubResponse {
    let Ok(body) = serde_json::from_str::<serde_json::Value>(&request.body) else {
        return StubResponse::error(400, "request body is not JSON");
    };
    let Some(messages) = body["messages"].as_array() else {
        return StubResponse::error(400, "request has no messages");
    };
    let user_messages: Vec<&str> = messages
        .iter()
        .filter(|m| m["role"] == "user")
        .filter_map(|m| m["content"].as_str())
        .collect();
    let Some(latest) = user_messages.last() else {
        return StubResponse::error(400, "request has no user message");
    };
    let turn = user_messages.len();
    let content = rules
        .iter()
        .find(|rule| rule.matches(turn, latest))
        .map(|rule| rule.response.as_str())
        .unwrap_or("I have no scripted response for that.");
    StubResponse::ok(
        json!({
            "choices": [{
                "message": { "role": "assistant", "content": content },
                "finish_reason": "stop"
            }]
        })
        .to_string(),
    )
}

fn embeddings(request: &RecordedRequest) -> StubResponse {
    let Ok(body) = serde_json::from_str::<serde_json::Value>(&request.body) else {
        return StubResponse::error(400, "request body is not JSON");
    };
    let Some(input) = body["input"].as_str() else {
        return StubResponse::error(400, "request has no input string");
    };
    let vector = HashedBagEncoder::default()
        .encode(input)
        .unwrap_or_default();
    StubResponse::ok(json!({ "data": [{ "embedding": vector }] }).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{ChatMessage, RetryPolicy, WireClient};

    fn echo_rules() -> Vec<ScriptedRule> {
        vec![
            ScriptedRule {
                match_substring: Some("capital".into()),
                min_turn: None,
                response: "Paris".into(),
            },
            ScriptedRule::default_response("fallback"),
        ]
    }

    #[test]
    fn serves_chat_completions_from_rules() {
        let server = StubServer::with_rules(0, echo_rules()).unwrap();
        let client = WireClient::new(RetryPolicy::without_backoff());
        let outcome = client
            .chat(
                &server.endpoint(),
                "stub-model",
                vec![ChatMessage::user("what is the capital?")],
                64,
                0.0,
            )
            .unwrap();
        assert_eq!(outcome.content, "Paris");
        assert!(!outcome.truncated);
        assert_eq!(server.request_count(), 1);
    }

    #[test]
    fn serves_embeddings() {
        let server = StubServer::with_rules(0, echo_rules()).unwrap();
        let client = WireClient::new(RetryPolicy::without_backoff());
        let vector = client
            .embed(&server.endpoint(), "stub-embed", "hello world")
            .unwrap();
        let local = HashedBagEncoder::default().encode("hello world").unwrap();
        assert_eq!(vector, local);
    }

    #[test]
    fn records_request_shape_and_auth() {
        let server = StubServer::with_rules(0, echo_rules()).unwrap();
        let client =
            WireClient::new(RetryPolicy::without_backoff()).with_api_key(Some("sekrit".into()));
        client
            .chat(
                &server.endpoint(),
                "stub-model",
                vec![ChatMessage::user("ping")],
                16,
                0.5,
            )
            .unwrap();
        let recorded = server.requests();
        assert_eq!(recorded.len(), 1);
        assert_eq!(recorded[0].method, "POST");
        assert_eq!(recorded[0].path, "/v1/chat/completions");
        assert_eq!(recorded[0].authorization.as_deref(), Some("Bearer sekrit"));
        let body: serde_json::Value = serde_json::from_str(&recorded[0].body).unwrap();
        assert_eq!(body["model"], "stub-model");
        assert_eq!(body["max_tokens"], 16);
        assert_eq!(body["temperature"], 0.5);
    }

    #[test]
    fn custom_handler_can_fault_inject() {
        let server = StubServer::spawn(
            0,
            Arc::new(|_req| StubResponse::error(500, "deliberate failure")),
        )
        .unwrap();
        let client = WireClient::new(RetryPolicy::without_backoff());
        let err = client
            .chat(
                &server.endpoint(),
                "m",
                vec![ChatMessage::user("x")],
                16,
                0.0,
            )
            .unwrap_err();
        match err {
            crate::wire::WireError::Unavailable { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected Unavailable, got {other:?}"),
        }
        assert_eq!(server.request_count(), 3);
    }

    #[test]
    fn turn_count_follows_user_messages() {
        let rules = vec![
            ScriptedRule {
                match_substring: None,
                min_turn: Some(2),
                response: "second".into(),
            },
            ScriptedRule::default_response("first"),
        ];
        let server = StubServer::with_rules(0, rules).unwrap();
        let client = WireClient::new(RetryPolicy::without_backoff());
        let one = client
            .chat(&server.endpoint(), "m", vec![ChatMessage::user("a")], 16, 0.0)
            .unwrap();
        assert_eq!(one.content, "first");
        let two = client
            .chat(
                &server.endpoint(),
                "m",
                vec![
                    ChatMessage::user("a"),
                    ChatMessage::assistant("first"),
                    ChatMessage::user("b"),
                ],
                16,
                0.0,
            )
            .unwrap();
        assert_eq!(two.content, "second");
    }
}
