use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use empathy_core::error::BackendErrorKind;
use empathy_core::vlm::{BackendKind, ChatMessage, CompletionRequest, RemoteBackend, Role};
use empathy_core::{BackendConfig, Error, ImageInput, ImageSource, VlmBackend};
use image::{Rgb, RgbImage};

const KEY: &str = "sk-test-5f0e1d2c3b4a";

#[derive(Debug, Default)]
struct Seen {
    requests: Vec<(String, String)>,
}

/// Serves one scripted `(status, body)` per connection, recording the
/// authorization header and request body of each.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Seen>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Seen::default()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let (auth, req) = read_request(&stream);
            log.lock().unwrap().requests.push((auth, req));
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, seen)
}

fn read_request(stream: &TcpStream) -> (String, String) {
    let mut reader = BufReader::new(stream);
    let mut auth = String::new();
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization:") {
            auth = line["authorization:".len()..].trim().to_string();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (auth, String::from_utf8(body).unwrap())
}

fn config(url: &str) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::Remote,
        endpoint_url: Some(url.into()),
        model_name: Some("test-model".into()),
        backoff_base_s: 0.01,
        timeout_s: 5.0,
        ..BackendConfig::default()
    }
}

fn image() -> ImageInput {
    ImageInput::from_rgb(&RgbImage::from_pixel(8, 8, Rgb([200, 30, 60])), ImageSource::File).unwrap()
}

fn call(backend: &RemoteBackend) -> empathy_core::Result<String> {
    let img = image();
    let messages = [ChatMessage {
        role: Role::User,
        text: "describe".into(),
    }];
    backend.complete(&CompletionRequest {
        messages: &messages,
        image: &img,
        sidecar: None,
    })
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn returns_first_choice_verbatim_with_image_attached() {
    let (url, seen) = serve(vec![(200, completion("{\"emoji\": \"😌\"} trailing"))]);
    let backend = RemoteBackend::with_key(config(&url), KEY.into()).unwrap();
    assert_eq!(call(&backend).unwrap(), "{\"emoji\": \"😌\"} trailing");
    let seen = seen.lock().unwrap();
    let (auth, body) = &seen.requests[0];
    assert_eq!(auth, &format!("Bearer {KEY}"));
    let body: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    let url = body["messages"][0]["content"][1]["image_url"]["url"].as_str().unwrap();
    assert!(url.starts_with("data:image/png;base64,"));
}

#[test]
fn server_errors_retry_until_exhausted() {
    let (url, seen) = serve(vec![(500, "{}".into()); 3]);
    let backend = RemoteBackend::with_key(config(&url), KEY.into()).unwrap();
    match call(&backend) {
        Err(Error::Backend { kind, attempts, .. }) => {
            assert_eq!(kind, BackendErrorKind::Transport);
            assert_eq!(attempts, 3);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(backend.attempts(), 3);
    assert_eq!(seen.lock().unwrap().requests.len(), 3);
}

#[test]
fn rate_limit_then_success() {
    let (url, _) = serve(vec![(429, "{}".into()), (200, completion("ok"))]);
    let backend = RemoteBackend::with_key(config(&url), KEY.into()).unwrap();
    assert_eq!(call(&backend).unwrap(), "ok");
    assert_eq!(backend.attempts(), 2);
}

#[test]
fn client_errors_do_not_retry() {
    let (url, _) = serve(vec![(400, "{\"error\": \"bad\"}".into()), (200, completion("unused"))]);
    let backend = RemoteBackend::with_key(config(&url), KEY.into()).unwrap();
    match call(&backend) {
        Err(Error::Backend { kind, attempts, .. }) => {
            assert_eq!(kind, BackendErrorKind::Request);
            assert_eq!(attempts, 1);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(backend.attempts(), 1);
}

#[test]
fn unreachable_endpoint_uses_every_attempt() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = BackendConfig {
        max_retries: 2,
        ..config(&format!("http://127.0.0.1:{port}/v1/chat/completions"))
    };
    let backend = RemoteBackend::with_key(cfg, KEY.into()).unwrap();
    let err = call(&backend).unwrap_err();
    assert!(matches!(err, Error::Backend { kind: BackendErrorKind::Transport, attempts: 3, .. }), "{err:?}");
    assert_eq!(backend.attempts(), 3);
}

#[test]
fn missing_key_is_a_config_error() {
    let cfg = BackendConfig {
        api_key_env: "EMPATHY_TEST_KEY_THAT_IS_NEVER_SET".into(),
        ..config("http://127.0.0.1:9/")
    };
    assert!(matches!(RemoteBackend::from_env(cfg), Err(Error::Config(_))));
}

#[test]
fn oversized_images_never_reach_the_network() {
    let wide = RgbImage::new(4097, 1);
    let mut png = Vec::new();
    wide.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png).unwrap();
    assert!(matches!(ImageInput::from_bytes(png, ImageSource::File), Err(Error::Image(_))));
}

#[derive(Clone, Default)]
struct Capture(Arc<Mutex<Vec<u8>>>);

impl Write for Capture {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn key_never_appears_in_logs_or_debug() {
    let (url, _) = serve(vec![(503, "{}".into()), (401, "{\"error\": \"bad key\"}".to_string())]);
    let capture = Capture::default();
    let writer = capture.clone();
    let subscriber = tracing_subscriber::fmt()
        .with_max_level(tracing::Level::TRACE)
        .with_writer(move || writer.clone())
        .with_ansi(false)
        .finish();
    let backend = RemoteBackend::with_key(config(&url), KEY.into()).unwrap();
    let err = tracing::subscriber::with_default(subscriber, || call(&backend).unwrap_err());
    let logs = String::from_utf8(capture.0.lock().unwrap().clone()).unwrap();
    assert!(logs.contains("retrying chat completion"), "{logs}");
    assert!(!logs.contains(KEY));
    assert!(!format!("{backend:?}").contains(KEY));
    assert!(!err.to_string().contains(KEY));
}
