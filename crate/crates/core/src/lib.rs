//! Vision-language driven empathetic nonverbal responses for a small social
//! robot: an emoji face, an LED palette and a two-wheel motion, chosen by a
//! model from a camera image, validated, scored and played back.

pub mod actions;
pub mod affect;
pub mod color;
pub mod error;
pub mod eval;
pub mod image_input;
pub mod led;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod runtime;
pub mod vlm;

mod table_file;

pub use actions::{AtomicAction, Catalog, MotionTrajectory, Pose};
pub use affect::{AffectAnchorTable, AffectLabel, AffectTables, ValenceArousal};
pub use color::Color;
pub use error::{Error, Result};
pub use image_input::{ImageInput, ImageSource};
pub use led::{AnimationMode, ColorPalette, LedFrame};
pub use pipeline::{run_turn, Resources, TurnOutcome};
pub use prompt::{EmpathicResponse, PromptSpec, ValidationReport};
pub use vlm::{BackendConfig, VlmBackend};
