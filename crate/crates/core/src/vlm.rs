//! Vision-language backends: an OpenAI-compatible remote client and an
//! offline mock that answers from fixed per-affect rules.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use crate::affect::{AffectLabel, AffectTables};
use crate::color::Color;
use crate::error::{BackendErrorKind, Error, Result};
use crate::eval::dominant_colors;
use crate::image_input::{ImageInput, MAX_DIMENSION};
use crate::led::ColorPalette;
use crate::prompt::EmpathicResponse;

pub const DEFAULT_API_KEY_ENV: &str = "EMPATHY_VLM_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    #[default]
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "mock" => Ok(BackendKind::Mock),
            other => Err(Error::Config(format!("unknown backend {other:?}, expected mock or remote"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub temperature: f64,
    /// First backoff delay; doubles on each retry.
    pub backoff_base_s: f64,
    pub max_in_flight: usize,
    /// Whether the mock may read the dataset label as a hint.
    pub mock_sidecar: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint_url: None,
            model_name: None,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_s: 30.0,
            max_retries: 2,
            temperature: 0.0,
            backoff_base_s: 0.5,
            max_in_flight: 4,
            mock_sidecar: true,
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        BackendConfig::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::Remote {
            if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                return Err(Error::Config("remote backend needs an endpoint URL".into()));
            }
            if self.model_name.as_deref().is_none_or(str::is_empty) {
                return Err(Error::Config("remote backend needs a model name".into()));
            }
        }
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 || self.backoff_base_s.is_nan() || self.backoff_base_s < 0.0 {
            return Err(Error::Config("timeout and backoff must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

/// One backend call: the conversation so far, with the image attached to
/// the first user message.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub image: &'a ImageInput,
    /// Dataset label, only ever consulted by the mock.
    pub sidecar: Option<AffectLabel>,
}

pub trait VlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String>;

    fn name(&self) -> &str;
}

impl<T: VlmBackend + ?Sized> VlmBackend for Arc<T> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Build the backend described by `cfg`. The remote key is read here.
pub fn connect(cfg: &BackendConfig, tables: Arc<AffectTables>) -> Result<Arc<dyn VlmBackend>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Mock => Arc::new(MockBackend::new(tables).with_sidecar(cfg.mock_sidecar)),
        BackendKind::Remote => Arc::new(RemoteBackend::from_env(cfg.clone())?),
    })
}

// ---------------------------------------------------------------------------
// Mock

/// Fixed emoji, motion and palette the mock emits for each affect.
pub fn canonical_response(label: AffectLabel) -> EmpathicResponse {
    let (emoji, motion, palette, explanation): (&str, &str, [&str; 3], &str) = match label {
        AffectLabel::Amusement => (
            "😄",
            "bounce",
            ["#FFA500", "#FFD700", "#FF8C00"],
            "Sharing the fun with a grin, warm yellows and a playful bounce.",
        ),
        AffectLabel::Awe => (
            "😮",
            "sway",
            ["#4B0082", "#6A5ACD", "#483D8B"],
            "Wide-eyed wonder, deep violets and a slow sway to take the moment in.",
        ),
        AffectLabel::Contentment => (
            "😌",
            "approach",
            ["#2E8B57", "#4682B4", "#3CB371"],
            "A calm, relieved face with soft greens and blues, moving gently closer.",
        ),
        AffectLabel::Excitement => (
            "🤩",
            "circle_ccw",
            ["#FF4500", "#FFA500", "#FFD700"],
            "Matching the excitement with bright warm colors and a lively circle.",
        ),
        AffectLabel::Anger => (
            "😠",
            "idle",
            ["#B22222", "#8B0000", "#FF0000"],
            "Acknowledging the anger with deep reds while holding still and giving space.",
        ),
        AffectLabel::Disgust => (
            "🤢",
            "retreat",
            ["#6B8E23", "#9ACD32", "#556B2F"],
            "Sharing the unpleasant feeling with murky greens and backing away.",
        ),
        AffectLabel::Fear => (
            "😨",
            "tremble",
            ["#FF4500", "#FF8C00", "#B22222"],
            "Red and orange signal danger; trembling shows worry and concern.",
        ),
        AffectLabel::Sadness => (
            "😢",
            "approach",
            ["#1E3A5F", "#191970", "#27408B"],
            "A sad face and dark blues, approaching slowly to offer comfort.",
        ),
    };
    EmpathicResponse {
        emoji: emoji.into(),
        motion: motion.into(),
        palette: ColorPalette::new(palette.iter().map(|h| h.parse::<Color>().expect("valid hex")).collect())
            .expect("three colors"),
        explanation: explanation.into(),
    }
}

/// Deterministic offline answer. With a sidecar label the canonical response
/// for that label is returned; otherwise the image's dominant hue picks the
/// first affect whose hue band contains it, and the neutral response is used
/// when none does.
pub fn mock_respond(image: &ImageInput, sidecar: Option<AffectLabel>, tables: &AffectTables) -> String {
    let label = sidecar.or_else(|| {
        let dominant = dominant_colors(image, 1).ok()?.into_iter().next()?;
        tables.anchors.first_band_match(dominant.hsv())
    });
    label
        .map(canonical_response)
        .unwrap_or_else(EmpathicResponse::fallback)
        .to_canonical_json()
}

pub struct MockBackend {
    tables: Arc<AffectTables>,
    use_sidecar: bool,
    calls: AtomicU32,
}

impl MockBackend {
    pub fn new(tables: Arc<AffectTables>) -> Self {
        MockBackend {
            tables,
            use_sidecar: true,
            calls: AtomicU32::new(0),
        }
    }

    pub fn shipped() -> Self {
        MockBackend::new(Arc::new(crate::affect::default_tables().clone()))
    }

    pub fn with_sidecar(mut self, use_sidecar: bool) -> Self {
        self.use_sidecar = use_sidecar;
        self
    }

    /// Total `complete` calls so far.
    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl VlmBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let sidecar = request.sidecar.filter(|_| self.use_sidecar);
        Ok(mock_respond(request.image, sidecar, &self.tables))
    }

    fn name(&self) -> &str {
        "mock"
    }
}

// ---------------------------------------------------------------------------
// Remote

pub struct RemoteBackend {
    cfg: BackendConfig,
    api_key: String,
    agent: ureq::Agent,
    attempts: AtomicU32,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.cfg.endpoint_url)
            .field("model", &self.cfg.model_name)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl RemoteBackend {
    pub fn from_env(cfg: BackendConfig) -> Result<Self> {
        let key = std::env::var(&cfg.api_key_env)
            .map_err(|_| Error::Config(format!("API key variable {} is not set", cfg.api_key_env)))?;
        Self::with_key(cfg, key)
    }

    pub fn with_key(cfg: BackendConfig, api_key: String) -> Result<Self> {
        let cfg = BackendConfig {
            kind: BackendKind::Remote,
            ..cfg
        };
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .build()
            .new_agent();
        Ok(RemoteBackend {
            cfg,
            api_key,
            agent,
            attempts: AtomicU32::new(0),
        })
    }

    /// HTTP attempts made so far, retries included.
    pub fn attempts(&self) -> u32 {
        self.attempts.load(Ordering::SeqCst)
    }

    fn endpoint(&self) -> &str {
        self.cfg.endpoint_url.as_deref().unwrap_or_default()
    }

    /// Chat-completions body with the image inlined as a data URL.
    pub fn request_body(&self, request: &CompletionRequest<'_>) -> Result<Value> {
        let (mime, bytes) = request.image.upload_payload()?;
        let data_url = format!(
            "data:{mime};base64,{}",
            base64::engine::general_purpose::STANDARD.encode(bytes)
        );
        let mut image_attached = false;
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| match m.role {
                Role::User if !image_attached => {
                    image_attached = true;
                    json!({
                        "role": "user",
                        "content": [
                            {"type": "text", "text": m.text},
                            {"type": "image_url", "image_url": {"url": data_url}},
                        ],
                    })
                }
                Role::User => json!({"role": "user", "content": m.text}),
                Role::Assistant => json!({"role": "assistant", "content": m.text}),
            })
            .collect();
        Ok(json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": messages,
        }))
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, (bool, String)> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let response = self
            .agent
            .post(self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut response = match response {
            Ok(r) => r,
            Err(e) => return Err((true, format!("transport: {e}"))),
        };
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, format!("reading body: {e}")))?;
        match status {
            200..=299 => extract_choice_text(&text).map_err(|m| (false, m)),
            429 | 500..=599 => Err((true, format!("HTTP {status}"))),
            _ => Err((false, format!("HTTP {status}: {}", truncate(&text, 200)))),
        }
    }
}

impl VlmBackend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        let image = request.image;
        if image.width() > MAX_DIMENSION || image.height() > MAX_DIMENSION {
            return Err(Error::Image("image exceeds the size limit".into()));
        }
        let body = self.request_body(request)?;
        let mut delay = self.cfg.backoff_base_s;
        let mut attempts = 0;
        loop {
            attempts += 1;
            debug!(endpoint = self.endpoint(), model = ?self.cfg.model_name, attempt = attempts, "chat completion request");
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((false, message)) => {
                    return Err(Error::Backend {
                        kind: BackendErrorKind::Request,
                        attempts,
                        message,
                    })
                }
                Err((true, message)) if attempts > self.cfg.max_retries => {
                    return Err(Error::Backend {
                        kind: BackendErrorKind::Transport,
                        attempts,
                        message,
                    })
                }
                Err((true, message)) => {
                    warn!(attempt = attempts, error = %message, "retrying chat completion");
                    std::thread::sleep(Duration::from_secs_f64(delay));
                    delay *= 2.0;
                }
            }
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}

fn extract_choice_text(body: &str) -> std::result::Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("reply is not JSON: {e}"))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers return content as a list of typed parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err("reply has no choices[0].message.content".into()),
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affect::default_tables;
    use crate::image_input::ImageSource;
    use crate::prompt::{parse_response, ResponseRules};
    use image::{Rgb, RgbImage};

    fn solid(c: [u8; 3]) -> ImageInput {
        ImageInput::from_rgb(&RgbImage::from_pixel(8, 8, Rgb(c)), ImageSource::File).unwrap()
    }

    #[test]
    fn canonical_responses_are_consistent() {
        let t = default_tables();
        for label in AffectLabel::ALL {
            let r = canonical_response(label);
            assert_eq!(t.emoji_affect(&r.emoji).unwrap(), label, "{label}");
            assert!(t.anchors.prefers(label, &r.motion), "{label}");
            for c in r.palette.colors() {
                assert!(t.anchors.color_in_bands(label, *c), "{label} {c}");
            }
            assert!(parse_response(&r.to_canonical_json(), &ResponseRules::shipped()).is_ok());
        }
    }

    #[test]
    fn sidecar_fear() {
        let text = mock_respond(&solid([10, 10, 10]), Some(AffectLabel::Fear), default_tables());
        assert!(text.contains("😨") && text.contains("tremble"));
    }

    #[test]
    fn hue_rule_first_match() {
        // Hue 0 at full saturation: excitement's band [0, 60] with s >= 0.6
        // precedes anger's [0, 20] in label order.
        let text = mock_respond(&solid([255, 0, 0]), None, default_tables());
        assert_eq!(text, canonical_response(AffectLabel::Excitement).to_canonical_json());
        // Crimson (hue ~345) only sits in fear's upper band.
        let text = mock_respond(&solid([220, 20, 60]), None, default_tables());
        assert_eq!(text, canonical_response(AffectLabel::Fear).to_canonical_json());
        // Magenta (hue 300) is in no band.
        let text = mock_respond(&solid([255, 0, 255]), None, default_tables());
        assert_eq!(text, EmpathicResponse::fallback().to_canonical_json());
    }

    #[test]
    fn mock_counts_calls() {
        let mock = MockBackend::shipped();
        let img = solid([1, 2, 3]);
        let msgs = [ChatMessage { role: Role::User, text: "hi".into() }];
        let req = CompletionRequest { messages: &msgs, image: &img, sidecar: Some(AffectLabel::Awe) };
        let a = mock.complete(&req).unwrap();
        let b = mock.complete(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(mock.calls(), 2);
        let blind = MockBackend::shipped().with_sidecar(false);
        assert_ne!(blind.complete(&req).unwrap(), a);
    }

    #[test]
    fn remote_config_validation() {
        let cfg = BackendConfig { kind: BackendKind::Remote, ..BackendConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = BackendConfig {
            kind: BackendKind::Remote,
            endpoint_url: Some("http://127.0.0.1:9/v1/chat/completions".into()),
            model_name: Some("m".into()),
            api_key_env: "EMPATHY_TEST_KEY_THAT_IS_NOT_SET".into(),
            ..BackendConfig::default()
        };
        assert!(cfg.validate().is_ok());
        assert!(matches!(RemoteBackend::from_env(cfg), Err(Error::Config(_))));
        assert!("remote".parse::<BackendKind>().is_ok());
        assert!("local".parse::<BackendKind>().is_err());
    }

    #[test]
    fn choice_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        assert_eq!(extract_choice_text(body).unwrap(), "hello");
        let parts = r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]}"#;
        assert_eq!(extract_choice_text(parts).unwrap(), "ab");
        assert!(extract_choice_text("{}").is_err());
        assert!(extract_choice_text("nope").is_err());
    }
}
