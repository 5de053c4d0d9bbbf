//! Seven-step prompt construction and structured-output validation.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use unicode_segmentation::UnicodeSegmentation;

use crate::actions::Catalog;
use crate::affect::EmojiTable;
use crate::color::Color;
use crate::error::{Error, Result};
use crate::led::{ColorPalette, MAX_PALETTE_LEN};

pub const DEFAULT_PROMPT_TEMPLATE: &str = include_str!("../data/prompt_template.txt");
pub const STEP_SEPARATOR: &str = "---STEP---";
pub const DEFAULT_DELIMITER: &str = "###";
pub const STEP_COUNT: usize = 7;
pub const MAX_EXPLANATION_CHARS: usize = 400;

/// Prompt blocks plus the values substituted into them.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    steps: Vec<String>,
    delimiter: String,
    motion_options: Vec<(String, String)>,
    palette_len_bounds: (usize, usize),
}

impl PromptSpec {
    /// `motion_options` pairs each catalog name with its one-line description.
    pub fn new(steps: Vec<String>, delimiter: &str, motion_options: Vec<(String, String)>) -> Result<Self> {
        if steps.len() != STEP_COUNT {
            return Err(Error::Parameter(format!(
                "prompt needs exactly {STEP_COUNT} steps, got {}",
                steps.len()
            )));
        }
        if delimiter.trim().is_empty() {
            return Err(Error::Parameter("delimiter must not be blank".into()));
        }
        let spec = PromptSpec {
            steps,
            delimiter: delimiter.to_string(),
            motion_options,
            palette_len_bounds: (1, MAX_PALETTE_LEN),
        };
        let rendered = spec.render(None);
        let count = rendered.matches(delimiter).count();
        if count != 4 {
            return Err(Error::Parameter(format!(
                "prompt must contain the delimiter exactly 4 times, found {count}"
            )));
        }
        let blocks: Vec<&str> = rendered.split(delimiter).collect();
        let delimited = format!("{}\n{}", blocks[1], blocks[3]);
        for (name, _) in &spec.motion_options {
            if !delimited.contains(name.as_str()) {
                return Err(Error::Parameter(format!(
                    "motion {name:?} does not appear inside a delimited block"
                )));
            }
        }
        Ok(spec)
    }

    /// Split a template on `---STEP---` lines.
    pub fn from_template(template: &str, delimiter: &str, catalog: &Catalog) -> Result<Self> {
        let mut steps = vec![String::new()];
        for line in template.lines() {
            if line.trim() == STEP_SEPARATOR {
                steps.push(String::new());
            } else {
                let step = steps.last_mut().expect("non-empty");
                step.push_str(line);
                step.push('\n');
            }
        }
        let steps = steps.into_iter().map(|s| s.trim().to_string()).collect();
        let options = catalog
            .actions()
            .iter()
            .map(|a| (a.name.clone(), a.description.clone()))
            .collect();
        PromptSpec::new(steps, delimiter, options)
    }

    pub fn shipped(catalog: &Catalog) -> Self {
        PromptSpec::from_template(DEFAULT_PROMPT_TEMPLATE, DEFAULT_DELIMITER, catalog)
            .expect("shipped prompt template is valid")
    }

    pub fn delimiter(&self) -> &str {
        &self.delimiter
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn motion_names(&self) -> impl Iterator<Item = &str> {
        self.motion_options.iter().map(|(n, _)| n.as_str())
    }

    /// Canonical description of the response object.
    pub fn output_schema_text(&self) -> String {
        let (lo, hi) = self.palette_len_bounds;
        format!(
            "{{\"emoji\": \"<exactly one emoji>\", \"motion\": \"<one motion name from the list>\", \
\"palette\": [\"#RRGGBB\", ...], \"explanation\": \"<short reason for the choices>\"}}\n\
- emoji: a single emoji character.\n\
- motion: one of the listed motion names, written exactly.\n\
- palette: {lo} to {hi} colors, each a \"#\" followed by six hexadecimal digits.\n\
- explanation: a non-empty explanation of at most {MAX_EXPLANATION_CHARS} characters."
        )
    }

    /// Output-format block wrapped in delimiters, as restated in repair messages.
    pub fn delimited_output_block(&self) -> String {
        format!("{d}\n{}\n{d}", self.output_schema_text(), d = self.delimiter)
    }

    fn render(&self, image_note: Option<&str>) -> String {
        let options: Vec<String> = self
            .motion_options
            .iter()
            .map(|(name, desc)| format!("- {name}: {desc}"))
            .collect();
        let note = image_note
            .map(|n| n.replace(&self.delimiter, "").trim().to_string())
            .filter(|n| !n.is_empty())
            .map(|n| format!(" Additional context: {n}."))
            .unwrap_or_default();
        let (lo, hi) = self.palette_len_bounds;
        self.steps
            .iter()
            .map(|step| {
                step.replace("{motion_options}", &options.join("\n"))
                    .replace("{output_schema}", &self.output_schema_text())
                    .replace("{palette_min}", &lo.to_string())
                    .replace("{palette_max}", &hi.to_string())
                    .replace("{delimiter}", &self.delimiter)
                    .replace("{image_note}", &note)
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Deterministic prompt text for one turn.
pub fn build_prompt(spec: &PromptSpec, image_note: Option<&str>) -> String {
    spec.render(image_note)
}

/// The validated four-part model output. Field order is the canonical JSON order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpathicResponse {
    pub emoji: String,
    pub motion: String,
    pub palette: ColorPalette,
    pub explanation: String,
}

impl EmpathicResponse {
    /// Neutral response used when validation and repair both fail.
    pub fn fallback() -> Self {
        EmpathicResponse {
            emoji: "😐".into(),
            motion: "idle".into(),
            palette: ColorPalette::single(Color::NEUTRAL_GRAY),
            explanation: "fallback".into(),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    #[serde(rename = "E_NO_JSON")]
    NoJson,
    #[serde(rename = "E_EMOJI_UNKNOWN")]
    EmojiUnknown,
    #[serde(rename = "E_MOTION_UNKNOWN")]
    MotionUnknown,
    #[serde(rename = "E_PALETTE_FORMAT")]
    PaletteFormat,
    #[serde(rename = "E_PALETTE_LEN")]
    PaletteLen,
    #[serde(rename = "E_EXPLANATION_EMPTY")]
    ExplanationEmpty,
    #[serde(rename = "E_EXPLANATION_LONG")]
    ExplanationLong,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::NoJson => "E_NO_JSON",
            ViolationCode::EmojiUnknown => "E_EMOJI_UNKNOWN",
            ViolationCode::MotionUnknown => "E_MOTION_UNKNOWN",
            ViolationCode::PaletteFormat => "E_PALETTE_FORMAT",
            ViolationCode::PaletteLen => "E_PALETTE_LEN",
            ViolationCode::ExplanationEmpty => "E_EXPLANATION_EMPTY",
            ViolationCode::ExplanationLong => "E_EXPLANATION_LONG",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub repaired: bool,
}

impl ValidationReport {
    pub fn passed(repaired: bool) -> Self {
        ValidationReport {
            ok: true,
            violations: Vec::new(),
            repaired,
        }
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }
}

/// Closed vocabularies a response is checked against.
#[derive(Debug, Clone, Copy)]
pub struct ResponseRules<'a> {
    pub emoji: &'a EmojiTable,
    pub catalog: &'a Catalog,
}

impl ResponseRules<'static> {
    pub fn shipped() -> Self {
        ResponseRules {
            emoji: &crate::affect::default_tables().emoji,
            catalog: crate::actions::catalog(),
        }
    }
}

/// Extract the first JSON object from `raw` and validate every field.
pub fn parse_response(raw: &str, rules: &ResponseRules<'_>) -> std::result::Result<EmpathicResponse, ValidationReport> {
    let Some(obj) = first_json_object(raw) else {
        return Err(ValidationReport {
            ok: false,
            violations: vec![Violation {
                field: "response".into(),
                code: ViolationCode::NoJson,
                message: "no JSON object found in the reply".into(),
            }],
            repaired: false,
        });
    };
    validate_object(&obj, rules)
}

/// Lossy UTF-8 front door for arbitrary bytes.
pub fn parse_response_bytes(raw: &[u8], rules: &ResponseRules<'_>) -> std::result::Result<EmpathicResponse, ValidationReport> {
    parse_response(&String::from_utf8_lossy(raw), rules)
}

fn first_json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

fn validate_object(
    obj: &serde_json::Map<String, Value>,
    rules: &ResponseRules<'_>,
) -> std::result::Result<EmpathicResponse, ValidationReport> {
    let mut violations = Vec::new();
    let mut violate = |field: &str, code, message: String| {
        violations.push(Violation {
            field: field.into(),
            code,
            message,
        })
    };

    let emoji = match obj.get("emoji") {
        Some(Value::String(s)) if s.graphemes(true).count() == 1 && rules.emoji.contains(s) => Some(s.clone()),
        Some(Value::String(s)) => {
            violate("emoji", ViolationCode::EmojiUnknown, format!("{s:?} is not a known single emoji"));
            None
        }
        other => {
            violate("emoji", ViolationCode::EmojiUnknown, format!("expected an emoji string, got {}", kind(other)));
            None
        }
    };

    let motion = match obj.get("motion") {
        Some(Value::String(s)) if rules.catalog.contains(s) => Some(s.clone()),
        Some(Value::String(s)) => {
            violate("motion", ViolationCode::MotionUnknown, format!("{s:?} is not one of the listed motion names"));
            None
        }
        other => {
            violate("motion", ViolationCode::MotionUnknown, format!("expected a motion name, got {}", kind(other)));
            None
        }
    };

    let palette = match obj.get("palette") {
        Some(Value::Array(items)) => {
            let parsed: Option<Vec<Color>> = items
                .iter()
                .map(|v| v.as_str().and_then(|s| s.parse().ok()))
                .collect();
            match parsed {
                None => {
                    violate("palette", ViolationCode::PaletteFormat, "every palette entry must be a \"#RRGGBB\" string".into());
                    None
                }
                Some(colors) => match ColorPalette::new(colors) {
                    Ok(p) => Some(p),
                    Err(_) => {
                        violate(
                            "palette",
                            ViolationCode::PaletteLen,
                            format!("palette has {} colors, expected 1 to {MAX_PALETTE_LEN}", items.len()),
                        );
                        None
                    }
                },
            }
        }
        other => {
            violate("palette", ViolationCode::PaletteFormat, format!("expected an array of colors, got {}", kind(other)));
            None
        }
    };

    let explanation = match obj.get("explanation") {
        Some(Value::String(s)) if s.trim().is_empty() => {
            violate("explanation", ViolationCode::ExplanationEmpty, "explanation is blank".into());
            None
        }
        Some(Value::String(s)) if s.chars().count() > MAX_EXPLANATION_CHARS => {
            violate(
                "explanation",
                ViolationCode::ExplanationLong,
                format!("explanation exceeds {MAX_EXPLANATION_CHARS} characters"),
            );
            None
        }
        Some(Value::String(s)) => Some(s.clone()),
        other => {
            violate("explanation", ViolationCode::ExplanationEmpty, format!("expected a string, got {}", kind(other)));
            None
        }
    };

    match (emoji, motion, palette, explanation) {
        (Some(emoji), Some(motion), Some(palette), Some(explanation)) => Ok(EmpathicResponse {
            emoji,
            motion,
            palette,
            explanation,
        }),
        _ => Err(ValidationReport {
            ok: false,
            violations,
            repaired: false,
        }),
    }
}

fn kind(v: Option<&Value>) -> &'static str {
    match v {
        None => "nothing",
        Some(Value::Null) => "null",
        Some(Value::Bool(_)) => "a boolean",
        Some(Value::Number(_)) => "a number",
        Some(Value::String(_)) => "a string",
        Some(Value::Array(_)) => "an array",
        Some(Value::Object(_)) => "an object",
    }
}

/// Follow-up message sent once when the first reply fails validation.
pub fn repair_message(spec: &PromptSpec, report: &ValidationReport) -> String {
    let mut msg = String::from("Your previous answer could not be used. Problems found:\n");
    for v in &report.violations {
        msg.push_str(&format!("- {} ({}): {}\n", v.code, v.field, v.message));
    }
    let names: Vec<&str> = spec.motion_names().collect();
    msg.push_str(&format!(
        "\nAnswer again with a single JSON object in the format between the {d} markers. \
The motion must be one of: {}.\n{}",
        names.join(", "),
        spec.delimited_output_block(),
        d = spec.delimiter(),
    ));
    msg
}
