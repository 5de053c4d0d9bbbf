use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::Serialize;
use tracing::warn;

use crate::actions::{pose_at, Pose};
use crate::affect::AffectLabel;
use crate::color::Color;
use crate::error::Result;
use crate::image_input::ImageInput;
use crate::led::{frame_at, gradient, mode_for_arousal, ColorPalette, LedFrame};
use crate::pipeline::{run_turn, Resources};
use crate::prompt::{EmpathicResponse, ViolationCode};
use crate::vlm::VlmBackend;

use super::config::RuntimeConfig;
use super::history::{History, InteractionRecord};

/// `round(alpha·new + (1 − alpha)·previous)` per channel. A previous palette
/// of different length is first resampled onto the new length.
pub fn blend_palettes(previous: &ColorPalette, new: &ColorPalette, alpha: f64) -> ColorPalette {
    let prev = gradient(previous, new.len());
    let colors = new
        .colors()
        .iter()
        .zip(prev)
        .map(|(n, p)| {
            let mix = |a: u8, b: u8| (alpha * f64::from(a) + (1.0 - alpha) * f64::from(b)).round().clamp(0.0, 255.0) as u8;
            Color::new(mix(n.r, p.r), mix(n.g, p.g), mix(n.b, p.b))
        })
        .collect();
    ColorPalette::new(colors).expect("same length as a valid palette")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveAction {
    pub name: String,
    pub started_at: f64,
    #[serde(skip)]
    base_pose: Pose,
    #[serde(skip)]
    hold_until: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueuedAction {
    pub name: String,
    pub start_at: f64,
}

/// Snapshot of what the robot is showing at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotState {
    pub t: f64,
    pub turn_id: u64,
    pub emoji: String,
    pub displayed_palette: ColorPalette,
    pub active_action: ActiveAction,
    pub queued_action: Option<QueuedAction>,
    pub pose: Pose,
    pub led_frame: LedFrame,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub turn_id: u64,
    pub response: EmpathicResponse,
    pub fallback: bool,
    pub backend_calls: u32,
    /// Codes left unresolved when the turn fell back to the neutral response.
    pub violations: Vec<ViolationCode>,
    /// Set when the backend failed; the robot state was left untouched.
    pub backend_error: Option<String>,
    pub state: RobotState,
}

#[derive(Debug)]
struct Display {
    turn_id: u64,
    emoji: String,
    palette: ColorPalette,
    palette_since: f64,
    has_turn: bool,
    active: ActiveAction,
    queued: Option<QueuedAction>,
    fallback: bool,
}

/// One robot's live session. Steps are serialized; snapshots may be taken
/// concurrently, including while a step waits on the backend.
pub struct Session {
    config: RuntimeConfig,
    resources: Resources,
    backend: Arc<dyn VlmBackend>,
    epoch: Instant,
    step_gate: Mutex<()>,
    display: Mutex<Display>,
    history: Mutex<History>,
}

impl Session {
    pub fn new(config: RuntimeConfig, resources: Resources, backend: Arc<dyn VlmBackend>) -> Result<Self> {
        config.validate()?;
        let history = match &config.history_path {
            Some(p) => History::open(p, config.store_blobs)?,
            None => History::in_memory(),
        };
        let display = Display {
            turn_id: history.last_turn_id(),
            emoji: EmpathicResponse::fallback().emoji,
            palette: EmpathicResponse::fallback().palette,
            palette_since: 0.0,
            has_turn: false,
            active: ActiveAction {
                name: "idle".into(),
                started_at: 0.0,
                base_pose: Pose::ORIGIN,
                hold_until: f64::NEG_INFINITY,
            },
            queued: None,
            fallback: false,
        };
        Ok(Session {
            config,
            resources,
            backend,
            epoch: Instant::now(),
            step_gate: Mutex::new(()),
            display: Mutex::new(display),
            history: Mutex::new(history),
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn resources(&self) -> &Resources {
        &self.resources
    }

    pub fn backend(&self) -> &Arc<dyn VlmBackend> {
        &self.backend
    }

    /// Seconds since the session started.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    pub fn step(&self, image: &ImageInput, sidecar: Option<AffectLabel>) -> Result<StepOutcome> {
        let _gate = self.step_gate.lock();
        let outcome = run_turn(self.backend.as_ref(), &self.resources, image, sidecar, None);
        self.apply(image, outcome, self.now())
    }

    /// Step with an explicit clock reading.
    pub fn step_at(&self, image: &ImageInput, sidecar: Option<AffectLabel>, now: f64) -> Result<StepOutcome> {
        let _gate = self.step_gate.lock();
        let outcome = run_turn(self.backend.as_ref(), &self.resources, image, sidecar, None);
        self.apply(image, outcome, now)
    }

    fn apply(
        &self,
        image: &ImageInput,
        outcome: Result<crate::pipeline::TurnOutcome>,
        now: f64,
    ) -> Result<StepOutcome> {
        let mut display = self.display.lock();
        display.turn_id += 1;
        let turn_id = display.turn_id;
        let timestamp = chrono::Utc::now().to_rfc3339();

        let (record, result) = match outcome {
            Err(e) => {
                warn!(turn_id, error = %e, "backend failed; keeping current state");
                let response = EmpathicResponse::fallback();
                let record = InteractionRecord {
                    turn_id,
                    timestamp,
                    image_digest: image.digest(),
                    raw_outputs: Vec::new(),
                    response: response.clone(),
                    fallback: true,
                    error: Some(e.to_string()),
                    user_feedback: None,
                };
                (record, (response, true, 0, Vec::new(), Some(e.to_string())))
            }
            Ok(turn) => {
                self.show(&mut display, &turn.response, turn.fallback, now);
                let record = InteractionRecord {
                    turn_id,
                    timestamp,
                    image_digest: image.digest(),
                    raw_outputs: turn.raw_outputs,
                    response: turn.response.clone(),
                    fallback: turn.fallback,
                    error: None,
                    user_feedback: None,
                };
                let codes = turn.report.codes();
                (record, (turn.response, turn.fallback, turn.backend_calls, codes, None))
            }
        };
        let state = self.snapshot_locked(&mut display, now);
        drop(display);

        let blob = self.config.store_blobs.then(|| image.bytes());
        self.history.lock().append(record, blob)?;

        let (response, fallback, backend_calls, violations, backend_error) = result;
        Ok(StepOutcome {
            turn_id,
            response,
            fallback,
            backend_calls,
            violations,
            backend_error,
            state,
        })
    }

    fn show(&self, d: &mut Display, response: &EmpathicResponse, fallback: bool, now: f64) {
        d.palette = if d.has_turn {
            blend_palettes(&d.palette, &response.palette, self.config.smoothing_alpha)
        } else {
            response.palette.clone()
        };
        d.has_turn = true;
        d.palette_since = now;
        d.emoji = response.emoji.clone();
        d.fallback = fallback;

        self.promote_queued(d, now);
        let motion = &response.motion;
        if *motion == d.active.name {
            d.queued = None;
        } else if now >= d.active.hold_until {
            self.start_action(d, motion, now);
            d.queued = None;
        } else {
            d.queued = Some(QueuedAction {
                name: motion.clone(),
                start_at: d.active.hold_until,
            });
        }
    }

    fn start_action(&self, d: &mut Display, name: &str, at: f64) {
        let base_pose = self.pose_locked(d, at);
        d.active = ActiveAction {
            name: name.to_string(),
            started_at: at,
            base_pose,
            hold_until: at + self.config.hold_s,
        };
    }

    fn promote_queued(&self, d: &mut Display, now: f64) {
        if let Some(q) = d.queued.take() {
            if now >= q.start_at {
                self.start_action(d, &q.name, q.start_at);
            } else {
                d.queued = Some(q);
            }
        }
    }

    fn pose_locked(&self, d: &Display, t: f64) -> Pose {
        match self.resources.catalog.action_by_name(&d.active.name) {
            Ok(action) => d
                .active
                .base_pose
                .compose(&pose_at(action, self.config.wheelbase_m, t - d.active.started_at)),
            Err(_) => d.active.base_pose,
        }
    }

    fn snapshot_locked(&self, d: &mut Display, now: f64) -> RobotState {
        self.promote_queued(d, now);
        let arousal = self
            .resources
            .tables
            .emoji_to_va(&d.emoji)
            .map(|va| va.arousal())
            .unwrap_or(0.0);
        let t = (now - d.palette_since).max(0.0);
        let pixels = frame_at(&d.palette, mode_for_arousal(arousal), self.config.strip_len, t);
        RobotState {
            t: now,
            turn_id: d.turn_id,
            emoji: d.emoji.clone(),
            displayed_palette: d.palette.clone(),
            active_action: d.active.clone(),
            queued_action: d.queued.clone(),
            pose: self.pose_locked(d, now),
            led_frame: LedFrame { t, pixels },
            fallback: d.fallback,
        }
    }

    pub fn snapshot(&self) -> RobotState {
        self.snapshot_at(self.now())
    }

    pub fn snapshot_at(&self, now: f64) -> RobotState {
        let mut d = self.display.lock();
        self.snapshot_locked(&mut d, now)
    }

    pub fn feedback(&self, turn_id: u64, score: i8) -> Result<()> {
        self.history.lock().feedback(turn_id, score)
    }

    pub fn history_page(&self, offset: usize, limit: usize) -> (usize, Vec<InteractionRecord>) {
        let h = self.history.lock();
        (h.len(), h.page(offset, limit).to_vec())
    }

    pub fn history_len(&self) -> usize {
        self.history.lock().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_input::ImageSource;
    use crate::vlm::MockBackend;
    use image::{Rgb, RgbImage};

    fn session(config: RuntimeConfig) -> (Session, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::shipped());
        let s = Session::new(config, Resources::shipped(), mock.clone()).unwrap();
        (s, mock)
    }

    fn image(c: [u8; 3]) -> ImageInput {
        ImageInput::from_rgb(&RgbImage::from_pixel(4, 4, Rgb(c)), ImageSource::Camera).unwrap()
    }

    fn pal(hex: &[&str]) -> ColorPalette {
        ColorPalette::new(hex.iter().map(|h| h.parse().unwrap()).collect()).unwrap()
    }

    #[test]
    fn blend_formula() {
        let out = blend_palettes(&pal(&["#000000"]), &pal(&["#FFFFFF"]), 0.6);
        assert_eq!(out, pal(&["#999999"]));
        // Different lengths: previous is resampled first.
        let out = blend_palettes(&pal(&["#000000", "#FFFFFF"]), &pal(&["#FFFFFF", "#FFFFFF", "#FFFFFF"]), 0.6);
        assert_eq!(out, pal(&["#999999", "#CCCCCC", "#FFFFFF"]));
    }

    #[test]
    fn first_turn_is_not_blended() {
        let (s, _) = session(RuntimeConfig::default());
        let out = s.step_at(&image([0, 0, 0]), Some(AffectLabel::Sadness), 0.0).unwrap();
        assert_eq!(out.state.displayed_palette, crate::vlm::canonical_response(AffectLabel::Sadness).palette);
        assert_eq!(out.turn_id, 1);
        assert_eq!(out.state.emoji, "😢");
        assert_eq!(out.state.active_action.name, "approach");
    }

    #[test]
    fn second_palette_blends_and_emoji_switches() {
        let (s, _) = session(RuntimeConfig::default());
        let img = image([0, 0, 0]);
        s.step_at(&img, Some(AffectLabel::Anger), 0.0).unwrap();
        let out = s.step_at(&img, Some(AffectLabel::Contentment), 5.0).unwrap();
        assert_eq!(out.state.emoji, "😌");
        let expected = blend_palettes(
            &crate::vlm::canonical_response(AffectLabel::Anger).palette,
            &crate::vlm::canonical_response(AffectLabel::Contentment).palette,
            0.6,
        );
        assert_eq!(out.state.displayed_palette, expected);
    }

    #[test]
    fn motion_hold_defers_switch() {
        let (s, _) = session(RuntimeConfig::default());
        let img = image([0, 0, 0]);
        let first = s.step_at(&img, Some(AffectLabel::Fear), 10.0).unwrap();
        assert_eq!(first.state.active_action.name, "tremble");
        assert_eq!(first.state.active_action.started_at, 10.0);

        let second = s.step_at(&img, Some(AffectLabel::Contentment), 10.5).unwrap();
        assert_eq!(second.state.active_action.name, "tremble");
        let q = second.state.queued_action.clone().unwrap();
        assert_eq!(q.name, "approach");
        assert!((q.start_at - 10.5 - 1.5).abs() < 1e-12);

        let later = s.snapshot_at(12.1);
        assert_eq!(later.active_action.name, "approach");
        assert_eq!(later.active_action.started_at, 12.0);
        assert!(later.queued_action.is_none());
    }

    #[test]
    fn switch_after_hold_is_immediate() {
        let (s, _) = session(RuntimeConfig::default());
        let img = image([0, 0, 0]);
        s.step_at(&img, Some(AffectLabel::Fear), 0.0).unwrap();
        let out = s.step_at(&img, Some(AffectLabel::Contentment), 2.0).unwrap();
        assert_eq!(out.state.active_action.name, "approach");
        assert!(out.state.queued_action.is_none());
    }

    #[test]
    fn pose_continues_across_actions() {
        let (s, _) = session(RuntimeConfig::default());
        let img = image([0, 0, 0]);
        s.step_at(&img, Some(AffectLabel::Contentment), 0.0).unwrap();
        let mid = s.snapshot_at(1.0).pose;
        assert!((mid.x - 0.1).abs() < 1e-12);
        let end = s.snapshot_at(5.0).pose;
        assert!((end.x - 0.2).abs() < 1e-12);
        // Retreat from where approach left off.
        s.step_at(&img, Some(AffectLabel::Disgust), 5.0).unwrap();
        let back = s.snapshot_at(7.0).pose;
        assert!(back.x.abs() < 1e-12);
    }

    #[test]
    fn backend_failure_only_bumps_turn() {
        struct Down;
        impl VlmBackend for Down {
            fn complete(&self, _: &crate::vlm::CompletionRequest<'_>) -> Result<String> {
                Err(crate::Error::Backend {
                    kind: crate::error::BackendErrorKind::Transport,
                    attempts: 1,
                    message: "offline".into(),
                })
            }
            fn name(&self) -> &str {
                "down"
            }
        }
        let s = Session::new(RuntimeConfig::default(), Resources::shipped(), Arc::new(Down)).unwrap();
        let before = s.snapshot_at(1.0);
        let out = s.step_at(&image([1, 1, 1]), None, 1.0).unwrap();
        assert!(out.backend_error.is_some() && out.fallback);
        assert_eq!(out.turn_id, before.turn_id + 1);
        let after = s.snapshot_at(1.0);
        assert_eq!(after.emoji, before.emoji);
        assert_eq!(after.displayed_palette, before.displayed_palette);
        assert_eq!(after.active_action, before.active_action);
        let (n, records) = s.history_page(0, 10);
        assert_eq!(n, 1);
        assert!(records[0].fallback && records[0].error.is_some());
    }

    #[test]
    fn history_persists_across_restart() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RuntimeConfig {
            history_path: Some(dir.path().join("log/history.ndjson")),
            store_blobs: true,
            ..RuntimeConfig::default()
        };
        let digests: Vec<String>;
        {
            let (s, _) = session(cfg.clone());
            for (i, label) in [AffectLabel::Awe, AffectLabel::Fear, AffectLabel::Sadness].into_iter().enumerate() {
                s.step_at(&image([i as u8, 0, 0]), Some(label), i as f64).unwrap();
            }
            s.feedback(2, -1).unwrap();
            assert!(matches!(s.feedback(9, 1), Err(crate::Error::UnknownTurn(9))));
            assert!(matches!(s.feedback(1, 2), Err(crate::Error::Parameter(_))));
            digests = s.history_page(0, 10).1.iter().map(|r| r.image_digest.clone()).collect();
        }
        let (s, _) = session(cfg);
        let (n, records) = s.history_page(0, 10);
        assert_eq!(n, 3);
        assert_eq!(records.iter().map(|r| r.turn_id).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(records.iter().map(|r| r.image_digest.clone()).collect::<Vec<_>>(), digests);
        assert_eq!(records[1].user_feedback, Some(-1));
        assert!(dir.path().join("log/blobs").join(&digests[0]).is_file());
        let out = s.step_at(&image([9, 9, 9]), Some(AffectLabel::Awe), 0.0).unwrap();
        assert_eq!(out.turn_id, 4);
    }

    #[test]
    fn calls_per_turn_within_budget() {
        let (s, mock) = session(RuntimeConfig::default());
        for i in 0..5 {
            let out = s.step_at(&image([i, i, i]), Some(AffectLabel::Awe), f64::from(i)).unwrap();
            assert!(out.backend_calls <= 2);
        }
        assert!(mock.calls() <= 10);
        assert_eq!(s.history_len(), 5);
    }
}
