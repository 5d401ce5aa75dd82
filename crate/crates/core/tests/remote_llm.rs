use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use prefrl_core::feedback::{LlmError, LlmProvider, RemoteLlm};

/// Serves one canned response per connection, in order, recording request bodies.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            seen.lock().unwrap().push(format!("{auth}\n{}", String::from_utf8(buf).unwrap()));
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, bodies)
}

fn completion(text: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] }).to_string()
}

fn client(url: &str, retries: u32) -> RemoteLlm {
    RemoteLlm::new(url, "secret", "test-model", Duration::from_secs(5), retries, Duration::from_millis(5)).unwrap()
}

#[test]
fn retries_server_errors_then_succeeds() {
    let answer = "[feature: speed, sentiment: positive, value: low]";
    let (url, bodies) = serve(vec![(500, "{}".into()), (503, "{}".into()), (200, completion(answer))]);
    let reply = client(&url, 3).complete("prompt text").unwrap();
    assert_eq!(reply.text, answer);
    assert_eq!(reply.attempts, 3);
    let bodies = bodies.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    let (auth, body) = bodies[2].split_once('\n').unwrap();
    assert_eq!(auth.to_ascii_lowercase(), "authorization: bearer secret");
    let json: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(json["model"], "test-model");
    assert_eq!(json["messages"][0]["role"], "user");
    assert_eq!(json["messages"][0]["content"], "prompt text");
}

#[test]
fn gives_up_after_retry_budget() {
    let (url, _) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    assert_eq!(client(&url, 1).complete("p").unwrap_err(), LlmError::Status { status: 500, attempts: 2 });
}

#[test]
fn client_errors_are_not_retried() {
    let (url, bodies) = serve(vec![(401, "{}".into())]);
    assert_eq!(client(&url, 3).complete("p").unwrap_err(), LlmError::Status { status: 401, attempts: 1 });
    assert_eq!(bodies.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = client(&format!("http://127.0.0.1:{port}/"), 1).complete("p").unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 2, .. }), "{err:?}");
}

#[test]
fn malformed_body_is_reported() {
    let (url, _) = serve(vec![(200, r#"{"unexpected": true}"#.into())]);
    assert!(matches!(client(&url, 0).complete("p").unwrap_err(), LlmError::Format(_)));
}
