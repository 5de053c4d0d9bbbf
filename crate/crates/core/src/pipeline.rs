//! One turn: prompt → backend → parse → (one repair) → response or fallback.

use std::sync::Arc;

use serde::Serialize;

use crate::actions::{self, Catalog};
use crate::affect::{self, AffectLabel, AffectTables};
use crate::error::{Error, Result};
use crate::image_input::ImageInput;
use crate::prompt::{
    build_prompt, parse_response, repair_message, EmpathicResponse, PromptSpec, ResponseRules,
    ValidationReport,
};
use crate::vlm::{ChatMessage, CompletionRequest, Role, VlmBackend};

/// Backend calls allowed per turn: the initial request plus one repair.
pub const MAX_CALLS_PER_TURN: u32 = 2;

/// Tables, catalog and prompt shared by every turn.
#[derive(Debug, Clone)]
pub struct Resources {
    pub tables: Arc<AffectTables>,
    pub catalog: Arc<Catalog>,
    pub prompt: PromptSpec,
}

impl Resources {
    pub fn new(tables: AffectTables, catalog: Catalog, prompt: PromptSpec) -> Result<Self> {
        for label in AffectLabel::ALL {
            for name in tables.anchors.preferred_actions(label) {
                if !catalog.contains(name) {
                    return Err(Error::Table {
                        row: format!("[actions] {label}"),
                        message: format!("preferred action {name:?} is not in the catalog"),
                    });
                }
            }
        }
        for name in prompt.motion_names() {
            catalog.action_by_name(name)?;
        }
        Ok(Resources {
            tables: Arc::new(tables),
            catalog: Arc::new(catalog),
            prompt,
        })
    }

    pub fn shipped() -> Self {
        let catalog = actions::catalog().clone();
        let prompt = PromptSpec::shipped(&catalog);
        Resources::new(affect::default_tables().clone(), catalog, prompt).expect("shipped resources are consistent")
    }

    pub fn rules(&self) -> ResponseRules<'_> {
        ResponseRules {
            emoji: &self.tables.emoji,
            catalog: &self.catalog,
        }
    }
}

/// Conversation state for one turn against one backend.
pub struct VlmSession<'a> {
    backend: &'a dyn VlmBackend,
    image: &'a ImageInput,
    sidecar: Option<AffectLabel>,
    messages: Vec<ChatMessage>,
    calls: u32,
    repaired: bool,
}

impl<'a> VlmSession<'a> {
    pub fn new(
        backend: &'a dyn VlmBackend,
        prompt: String,
        image: &'a ImageInput,
        sidecar: Option<AffectLabel>,
    ) -> Self {
        VlmSession {
            backend,
            image,
            sidecar,
            messages: vec![ChatMessage {
                role: Role::User,
                text: prompt,
            }],
            calls: 0,
            repaired: false,
        }
    }

    pub fn calls(&self) -> u32 {
        self.calls
    }

    fn call(&mut self) -> Result<String> {
        if self.calls >= MAX_CALLS_PER_TURN {
            return Err(Error::Parameter(format!(
                "turn already used {MAX_CALLS_PER_TURN} backend calls"
            )));
        }
        self.calls += 1;
        let reply = self.backend.complete(&CompletionRequest {
            messages: &self.messages,
            image: self.image,
            sidecar: self.sidecar,
        })?;
        self.messages.push(ChatMessage {
            role: Role::Assistant,
            text: reply.clone(),
        });
        Ok(reply)
    }

    /// Send the opening prompt and return the raw reply.
    pub fn initial(&mut self) -> Result<String> {
        if self.calls != 0 {
            return Err(Error::Parameter("initial request already sent".into()));
        }
        self.call()
    }

    /// Send exactly one follow-up naming the violations and parse the reply.
    /// Returns the raw reply with the outcome; the report, if any, has
    /// `repaired = true`.
    pub fn repair(
        &mut self,
        spec: &PromptSpec,
        report: &ValidationReport,
        rules: &ResponseRules<'_>,
    ) -> Result<(String, std::result::Result<EmpathicResponse, ValidationReport>)> {
        if report.ok {
            return Err(Error::Parameter("repair requested for a passing report".into()));
        }
        if self.repaired {
            return Err(Error::Parameter("only one repair is allowed per turn".into()));
        }
        self.repaired = true;
        self.messages.push(ChatMessage {
            role: Role::User,
            text: repair_message(spec, report),
        });
        let raw = self.call()?;
        let outcome = parse_response(&raw, rules).map_err(|mut r| {
            r.repaired = true;
            r
        });
        Ok((raw, outcome))
    }
}

/// Result of one pipeline turn.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnOutcome {
    pub response: EmpathicResponse,
    /// Raw model replies in call order.
    pub raw_outputs: Vec<String>,
    pub report: ValidationReport,
    pub fallback: bool,
    pub backend_calls: u32,
}

/// Run one turn. Backend failures propagate; validation failures that
/// survive the repair yield the neutral fallback response.
pub fn run_turn(
    backend: &dyn VlmBackend,
    resources: &Resources,
    image: &ImageInput,
    sidecar: Option<AffectLabel>,
    image_note: Option<&str>,
) -> Result<TurnOutcome> {
    let prompt = build_prompt(&resources.prompt, image_note);
    let rules = resources.rules();
    let mut session = VlmSession::new(backend, prompt, image, sidecar);
    let first = session.initial()?;
    let report = match parse_response(&first, &rules) {
        Ok(response) => {
            return Ok(TurnOutcome {
                response,
                raw_outputs: vec![first],
                report: ValidationReport::passed(false),
                fallback: false,
                backend_calls: session.calls(),
            })
        }
        Err(report) => report,
    };
    let (second, outcome) = session.repair(&resources.prompt, &report, &rules)?;
    let (response, report, fallback) = match outcome {
        Ok(r) => (r, ValidationReport::passed(true), false),
        Err(report) => (EmpathicResponse::fallback(), report, true),
    };
    Ok(TurnOutcome {
        response,
        raw_outputs: vec![first, second],
        report,
        fallback,
        backend_calls: session.calls(),
    })
}
