use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actions::{self, DEFAULT_DT_S, DEFAULT_V_MAX, DEFAULT_WHEELBASE_M};
use crate::affect;
use crate::error::{Error, Result};
use crate::led::DEFAULT_STRIP_LEN;
use crate::pipeline::Resources;
use crate::prompt::{PromptSpec, DEFAULT_DELIMITER, DEFAULT_PROMPT_TEMPLATE};
use crate::vlm::BackendConfig;

/// Service and session settings, loadable from TOML.
///
/// ```toml
/// strip_len = 12
/// smoothing_alpha = 0.6
/// [backend]
/// kind = "remote"
/// endpoint_url = "https://api.example.com/v1/chat/completions"
/// model_name = "some-vlm"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub backend: BackendConfig,
    pub strip_len: usize,
    pub wheelbase_m: f64,
    pub v_max: f64,
    pub dt_s: f64,
    /// Weight of the new palette when blending with the displayed one.
    pub smoothing_alpha: f64,
    /// Minimum seconds a motion runs before a new one may preempt it.
    pub hold_s: f64,
    pub stream_fps: u32,
    pub history_path: Option<PathBuf>,
    /// Keep uploaded images under `blobs/` next to the history file.
    pub store_blobs: bool,
    pub tables_path: Option<PathBuf>,
    pub catalog_path: Option<PathBuf>,
    pub prompt_template_path: Option<PathBuf>,
    /// When set, requests must carry `Authorization: Bearer <token>`.
    pub auth_token: Option<String>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            backend: BackendConfig::default(),
            strip_len: DEFAULT_STRIP_LEN,
            wheelbase_m: DEFAULT_WHEELBASE_M,
            v_max: DEFAULT_V_MAX,
            dt_s: DEFAULT_DT_S,
            smoothing_alpha: 0.6,
            hold_s: 2.0,
            stream_fps: 20,
            history_path: None,
            store_blobs: false,
            tables_path: None,
            catalog_path: None,
            prompt_template_path: None,
            auth_token: None,
        }
    }
}

impl RuntimeConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RuntimeConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::Config(what.into())) };
        check(self.strip_len >= 1, "strip_len must be at least 1")?;
        check(self.wheelbase_m > 0.0, "wheelbase_m must be positive")?;
        check(self.v_max > 0.0, "v_max must be positive")?;
        check(self.dt_s > 0.0 && self.dt_s <= actions::MAX_DT_S, "dt_s must be in (0, 0.05]")?;
        check((0.0..=1.0).contains(&self.smoothing_alpha), "smoothing_alpha must be in [0, 1]")?;
        check(self.hold_s >= 0.0, "hold_s must not be negative")?;
        check((1..=60).contains(&self.stream_fps), "stream_fps must be in [1, 60]")?;
        Ok(())
    }

    /// Tables, catalog and prompt, from overrides or the shipped defaults.
    pub fn resources(&self) -> Result<Resources> {
        let tables = match &self.tables_path {
            Some(p) => affect::load_affect_tables(p)?,
            None => affect::default_tables().clone(),
        };
        let catalog = match &self.catalog_path {
            Some(p) => actions::load_catalog(p, self.v_max)?,
            None => actions::parse_catalog(actions::DEFAULT_CATALOG, "catalog.tsv", self.v_max)?,
        };
        let template = match &self.prompt_template_path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => DEFAULT_PROMPT_TEMPLATE.to_string(),
        };
        let prompt = PromptSpec::from_template(&template, DEFAULT_DELIMITER, &catalog)?;
        Resources::new(tables, catalog, prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vlm::BackendKind;

    #[test]
    fn toml_round_trip() {
        let text = r#"
strip_len = 16
hold_s = 1.5
[backend]
kind = "remote"
endpoint_url = "http://localhost:1/v1/chat/completions"
model_name = "m"
"#;
        let cfg: RuntimeConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.strip_len, 16);
        assert_eq!(cfg.backend.kind, BackendKind::Remote);
        assert_eq!(cfg.backend.timeout_s, 30.0);
        assert_eq!(cfg.smoothing_alpha, 0.6);
        cfg.validate().unwrap();
        assert!(toml::from_str::<RuntimeConfig>("bogus = 1").is_err());
    }

    #[test]
    fn invalid_values() {
        let cfg = RuntimeConfig { smoothing_alpha: 1.5, ..RuntimeConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RuntimeConfig { strip_len: 0, ..RuntimeConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_resources() {
        let r = RuntimeConfig::default().resources().unwrap();
        assert_eq!(r.catalog.actions().len(), 10);
    }
}
