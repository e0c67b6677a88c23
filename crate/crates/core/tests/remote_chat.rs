#![cfg(feature = "remote")]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use structreason::backend::{Backend, BackendError, GenerationRequest, RemoteChat, RemoteConfig};

/// Serves one canned `(status, body)` per connection, recording request bodies.
fn stub(
    responses: Vec<(u16, String)>,
) -> (String, Arc<Mutex<Vec<String>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut request = vec![0; length];
            reader.read_exact(&mut request).unwrap();
            log.lock()
                .unwrap()
                .push(String::from_utf8(request).unwrap());
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let mut stream = reader.into_inner();
            stream.write_all(reply.as_bytes()).unwrap();
            stream.flush().unwrap();
        }
    });
    (url, seen, handle)
}

fn config(endpoint: String, max_retries: u32) -> RemoteConfig {
    RemoteConfig {
        endpoint,
        model: "stub-model".into(),
        timeout_ms: 5_000,
        max_in_flight: 2,
        max_retries,
        base_delay_ms: 1,
    }
}

fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

#[test]
fn returns_canned_content_and_sends_wire_format() {
    let (url, seen, handle) = stub(vec![(200, completion("education"))]);
    let chat = RemoteChat::with_api_key(config(url, 0), "k");
    let mut req = GenerationRequest::new("Here are [birthplace, education].", "relation-select@1");
    req.max_output_chars = 40;
    assert_eq!(chat.complete(&req).unwrap(), "education");
    handle.join().unwrap();
    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(
        body["messages"][0]["content"],
        "Here are [birthplace, education]."
    );
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 10);
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen, handle) = stub(vec![
        (500, "{}".into()),
        (429, "{}".into()),
        (200, completion("  raw text \n")),
    ]);
    let chat = RemoteChat::with_api_key(config(url, 3), "k");
    let got = chat
        .complete(&GenerationRequest::new("p", "answer-generate"))
        .unwrap();
    assert_eq!(got, "  raw text \n");
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn gives_up_after_bounded_retries() {
    let (url, _seen, handle) = stub(vec![(503, "{}".into()), (503, "{}".into())]);
    let chat = RemoteChat::with_api_key(config(url, 1), "k");
    let err = chat
        .complete(&GenerationRequest::new("p", "sql-generate"))
        .unwrap_err();
    assert!(
        matches!(err, BackendError::Transport { attempts: 2, .. }),
        "{err:?}"
    );
    handle.join().unwrap();
}

#[test]
fn client_errors_are_not_retried() {
    let (url, _seen, handle) = stub(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let chat = RemoteChat::with_api_key(config(url, 3), "k");
    let err = chat
        .complete(&GenerationRequest::new("p", "sql-generate"))
        .unwrap_err();
    assert!(
        matches!(err, BackendError::Status { status: 401, .. }),
        "{err:?}"
    );
    handle.join().unwrap();
}

#[test]
fn connection_refused_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let chat = RemoteChat::with_api_key(config(format!("http://127.0.0.1:{port}/x"), 1), "k");
    let err = chat
        .complete(&GenerationRequest::new("p", "s"))
        .unwrap_err();
    assert!(matches!(err, BackendError::Transport { .. }), "{err:?}");
}

#[test]
fn config_file_defaults() {
    let cfg =
        RemoteConfig::from_json(r#"{"endpoint": "https://example.invalid/v1", "model": "m"}"#)
            .unwrap();
    assert_eq!(cfg.max_retries, 3);
    assert!(cfg.max_in_flight >= 1);
    assert!(
        RemoteConfig::from_json(r#"{"endpoint": "x", "model": "m", "max_in_flight": 0}"#).is_err()
    );
}
