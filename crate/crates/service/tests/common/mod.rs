#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use empathy_core::runtime::{RuntimeConfig, Session};
use empathy_core::vlm::{CompletionRequest, MockBackend};
use empathy_core::{Resources, VlmBackend};
use http_body_util::BodyExt;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tower::ServiceExt;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture_bytes(name: &str) -> Vec<u8> {
    std::fs::read(fixtures().join(name)).unwrap()
}

pub fn mock_session(config: RuntimeConfig) -> (Arc<Session>, Arc<MockBackend>) {
    let mock = Arc::new(MockBackend::shipped());
    let session = Session::new(config, Resources::shipped(), mock.clone()).unwrap();
    (Arc::new(session), mock)
}

/// Backend that is always down.
pub struct Offline;

impl VlmBackend for Offline {
    fn complete(&self, _: &CompletionRequest<'_>) -> empathy_core::Result<String> {
        Err(empathy_core::Error::Backend {
            kind: empathy_core::error::BackendErrorKind::Transport,
            attempts: 3,
            message: "connection refused".into(),
        })
    }
    fn name(&self) -> &str {
        "offline"
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, serde_json::Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| serde_json::Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, json)
}

pub fn respond_req(image: Vec<u8>, sidecar: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/v1/respond").header("content-type", "image/jpeg");
    if let Some(s) = sidecar {
        b = b.header("x-affect-sidecar", s);
    }
    b.body(Body::from(image)).unwrap()
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

pub fn post_json(uri: &str, body: serde_json::Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

/// Serve `app` on an ephemeral port and count SSE frames received over
/// `window`, measured from the end of the response headers.
pub async fn count_stream_frames(app: Router, window: Duration) -> (usize, Vec<serde_json::Value>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let mut conn = tokio::net::TcpStream::connect(addr).await.unwrap();
    conn.write_all(b"GET /v1/stream HTTP/1.1\r\nHost: localhost\r\nAccept: text/event-stream\r\n\r\n")
        .await
        .unwrap();
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    // Headers first.
    while !buf.windows(4).any(|w| w == b"\r\n\r\n") {
        let n = conn.read(&mut chunk).await.unwrap();
        assert!(n > 0, "stream closed before headers");
        buf.extend_from_slice(&chunk[..n]);
    }
    let header_end = buf.windows(4).position(|w| w == b"\r\n\r\n").unwrap() + 4;
    let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    assert!(head.to_ascii_lowercase().contains("text/event-stream"), "{head}");
    let mut body = buf[header_end..].to_vec();
    let deadline = Instant::now() + window;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            break;
        }
        match tokio::time::timeout(left, conn.read(&mut chunk)).await {
            Ok(Ok(0)) | Ok(Err(_)) => break,
            Ok(Ok(n)) => body.extend_from_slice(&chunk[..n]),
            Err(_) => break,
        }
    }
    server.abort();
    let text = String::from_utf8_lossy(&body);
    let frames: Vec<serde_json::Value> = text
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .filter_map(|d| serde_json::from_str(d).ok())
        .collect();
    (text.matches("event: frame").count(), frames)
}
