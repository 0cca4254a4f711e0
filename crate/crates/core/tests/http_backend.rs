use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use cikmar_core::backends::{
    embed_sentence, generate, BackendError, Direction, Endpoints, GenerationParams, HttpBackend, LogProbScorer,
    RetryPolicy, SentenceEncoder, TokenEncoder,
};
use cikmar_core::prompts::{format_chat, PromptInstance};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    headers: Vec<(String, String)>,
    body: Value,
}

impl Seen {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

type Handler = dyn Fn(usize, &Seen) -> (u16, String) + Send + Sync;

/// One-request-per-connection HTTP/1.1 server on an ephemeral port.
struct MockServer {
    base: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl MockServer {
    fn start(handler: impl Fn(usize, &Seen) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let log = Arc::clone(&log);
                let handler = Arc::clone(&handler);
                thread::spawn(move || serve(stream, &log, &*handler));
            }
        });
        Self { base, seen }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<Seen>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut headers = Vec::new();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':').unwrap();
        if k.eq_ignore_ascii_case("content-length") {
            len = v.trim().parse().unwrap();
        }
        headers.push((k.to_string(), v.trim().to_string()));
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let seen = Seen {
        path,
        headers,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    };
    let n = {
        let mut log = log.lock().unwrap();
        log.push(seen.clone());
        log.len()
    };
    let (status, reply) = handler(n, &seen);
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )
    .unwrap();
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        initial_backoff: Duration::from_millis(1),
    }
}

fn backend(endpoints: Endpoints, token: Option<&str>) -> HttpBackend {
    HttpBackend::new(endpoints, fast_retry(), token.map(String::from), Duration::from_secs(5)).unwrap()
}

fn chat(text: &str) -> cikmar_core::prompts::ChatRequestText {
    format_chat(&PromptInstance {
        template_id: 2,
        conversation_id: "c".into(),
        rendered: text.into(),
    })
    .unwrap()
}

#[test]
fn generate_sends_wire_body() {
    let server = MockServer::start(|n, _| (200, json!({"text": format!("reply {n}")}).to_string()));
    let b = backend(
        Endpoints {
            generate_url: Some(server.url("/v1/generate")),
            ..Default::default()
        },
        Some("secret"),
    );
    let params = GenerationParams {
        seed: Some(10),
        ..Default::default()
    };
    let out = generate(&b, &chat("P"), 2, &params, 3, "conv-1").unwrap();
    assert_eq!(out, ["reply 1", "reply 2", "reply 3"]);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 3);
    assert_eq!(reqs[0].path, "/v1/generate");
    assert_eq!(
        reqs[0].body,
        json!({
            "prompt": "<start_of_turn>user\nP<end_of_turn>\n<start_of_turn>model\n",
            "max_new_tokens": 512,
            "temperature": 0.7,
            "top_k": 50,
            "top_p": 0.95,
            "no_repeat_ngram": 2,
            "sampling": true,
            "seed": 10
        })
    );
    assert_eq!(reqs[2].body["seed"], json!(12));
    assert_eq!(reqs[0].header("authorization"), Some("Bearer secret"));
    assert_eq!(reqs[1].header("x-correlation-id"), Some("conv-1/p2/a1"));

    let unseeded = generate(&b, &chat("P"), 2, &GenerationParams::default(), 1, "c").unwrap();
    assert_eq!(unseeded.len(), 1);
    assert_eq!(server.requests()[3].body["seed"], Value::Null);
}

#[test]
fn empty_generation_is_not_an_error() {
    let server = MockServer::start(|_, _| (200, r#"{"text":""}"#.into()));
    let b = backend(
        Endpoints {
            generate_url: Some(server.url("/v1/generate")),
            ..Default::default()
        },
        None,
    );
    assert_eq!(generate(&b, &chat("P"), 1, &GenerationParams::default(), 1, "c").unwrap(), [""]);
}

#[test]
fn retries_then_succeeds() {
    let server = MockServer::start(|n, _| {
        if n < 3 {
            (503, "{}".into())
        } else {
            (200, r#"{"text":"ok"}"#.into())
        }
    });
    let b = backend(
        Endpoints {
            generate_url: Some(server.url("/v1/generate")),
            ..Default::default()
        },
        None,
    );
    assert_eq!(generate(&b, &chat("P"), 1, &GenerationParams::default(), 1, "c").unwrap(), ["ok"]);
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn gives_up_after_retry_limit() {
    let server = MockServer::start(|_, _| (500, "{}".into()));
    let b = backend(
        Endpoints {
            generate_url: Some(server.url("/v1/generate")),
            ..Default::default()
        },
        None,
    );
    let err = generate(&b, &chat("P"), 1, &GenerationParams::default(), 3, "c").unwrap_err();
    assert_eq!(err, BackendError::Status { status: 500, attempts: 4 });
    assert_eq!(server.requests().len(), 4);
}

#[test]
fn unreachable_endpoint_is_transport_failure() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let b = backend(
        Endpoints {
            generate_url: Some(format!("http://127.0.0.1:{port}/v1/generate")),
            ..Default::default()
        },
        None,
    );
    match generate(&b, &chat("P"), 1, &GenerationParams::default(), 1, "c").unwrap_err() {
        BackendError::Transport { attempts, .. } => assert_eq!(attempts, 4),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn embedding_endpoints() {
    let server = MockServer::start(|_, seen| {
        let reply = match seen.body["granularity"].as_str() {
            Some("sentence") => {
                let n = seen.body["texts"].as_array().unwrap().len();
                json!({"vectors": vec![vec![1.0, 0.0, 0.5]; n]})
            }
            Some("token") => json!({"vectors": [[1.0, 2.0], [3.0, 4.0]]}),
            _ => return (400, "{}".into()),
        };
        (200, reply.to_string())
    });
    let url = server.url("/v1/embed");
    let b = backend(
        Endpoints {
            embed_sentence_url: Some(url.clone()),
            embed_token_url: Some(url),
            ..Default::default()
        },
        None,
    );
    let v = embed_sentence(&b, &["a", "b"]).unwrap();
    assert_eq!(v.len(), 2);
    assert_eq!(v[0].as_slice(), [1.0, 0.0, 0.5]);
    let t = b.embed_tokens("hello there").unwrap();
    assert_eq!(t.len(), 2);

    let reqs = server.requests();
    assert_eq!(reqs[0].body, json!({"texts": ["a", "b"], "granularity": "sentence"}));
    assert_eq!(reqs[1].body, json!({"text": "hello there", "granularity": "token"}));
}

#[test]
fn dimension_changes_are_rejected() {
    let server = MockServer::start(|n, _| {
        let v = if n == 1 { json!([[1.0, 0.0]]) } else { json!([[1.0, 0.0, 0.0]]) };
        (200, json!({ "vectors": v }).to_string())
    });
    let b = backend(
        Endpoints {
            embed_sentence_url: Some(server.url("/v1/embed")),
            ..Default::default()
        },
        None,
    );
    b.embed_sentences(&["a"]).unwrap();
    assert_eq!(
        b.embed_sentences(&["a"]).unwrap_err(),
        BackendError::DimensionMismatch { expected: 2, got: 3 }
    );
}

#[test]
fn ragged_batch_is_protocol_error() {
    let server = MockServer::start(|_, _| (200, json!({"vectors": [[1.0, 0.0], [1.0]]}).to_string()));
    let b = backend(
        Endpoints {
            embed_sentence_url: Some(server.url("/v1/embed")),
            ..Default::default()
        },
        None,
    );
    assert!(matches!(
        embed_sentence(&b, &["a", "b"]),
        Err(BackendError::DimensionMismatch { .. })
    ));
}

#[test]
fn logprob_directions() {
    let fwd = MockServer::start(|_, _| (200, json!({"avg_logprob": -1.5, "token_count": 4}).to_string()));
    let rev = MockServer::start(|_, _| (200, json!({"avg_logprob": -2.5, "token_count": 7}).to_string()));
    let b = backend(
        Endpoints {
            logprob_forward_url: Some(fwd.url("/v1/logprob")),
            logprob_reverse_url: Some(rev.url("/v1/logprob")),
            ..Default::default()
        },
        None,
    );
    let f = b.score_logprob("CTX", "RESP", Direction::Forward).unwrap();
    let r = b.score_logprob("CTX", "RESP", Direction::Reverse).unwrap();
    assert_eq!((f.avg_token_logprob, f.token_count), (-1.5, 4));
    assert_eq!((r.avg_token_logprob, r.token_count), (-2.5, 7));
    assert_eq!(fwd.requests()[0].body, json!({"context": "CTX", "continuation": "RESP"}));
    assert_eq!(rev.requests()[0].body, json!({"context": "RESP", "continuation": "CTX"}));
}

#[test]
fn positive_logprob_is_rejected() {
    let server = MockServer::start(|_, _| (200, json!({"avg_logprob": 0.5, "token_count": 1}).to_string()));
    let b = backend(
        Endpoints {
            logprob_forward_url: Some(server.url("/v1/logprob")),
            ..Default::default()
        },
        None,
    );
    assert!(matches!(
        b.score_logprob("a", "b", Direction::Forward),
        Err(BackendError::Protocol(_))
    ));
    assert!(matches!(
        b.score_logprob("a", "b", Direction::Reverse),
        Err(BackendError::Config(_))
    ));
}
