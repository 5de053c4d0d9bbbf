//! Atomic motion catalog and differential-drive trajectory synthesis.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table_file::parse_sections;

pub const DEFAULT_CATALOG: &str = include_str!("../data/catalog.tsv");
pub const DEFAULT_WHEELBASE_M: f64 = 0.2;
pub const DEFAULT_V_MAX: f64 = 0.3;
pub const DEFAULT_DT_S: f64 = 0.02;
/// Largest sampling step `synthesize` accepts.
pub const MAX_DT_S: f64 = 0.05;

/// Constant left/right wheel speeds held for `duration_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelSegment {
    pub left: f64,
    pub right: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicAction {
    pub name: String,
    pub description: String,
    pub duration_s: f64,
    pub wheel_profile: Vec<WheelSegment>,
}

impl AtomicAction {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        wheel_profile: Vec<WheelSegment>,
        v_max: f64,
    ) -> Result<Self> {
        let name = name.into();
        if wheel_profile.is_empty() {
            return Err(Error::Parameter(format!("{name}: empty wheel profile")));
        }
        for seg in &wheel_profile {
            if !(seg.duration_s > 0.0 && seg.duration_s.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name}: segment duration {} must be positive",
                    seg.duration_s
                )));
            }
            if !(seg.left.abs() <= v_max && seg.right.abs() <= v_max) {
                return Err(Error::Parameter(format!(
                    "{name}: wheel speed ({}, {}) exceeds v_max {v_max}",
                    seg.left, seg.right
                )));
            }
        }
        let duration_s = wheel_profile.iter().map(|s| s.duration_s).sum();
        Ok(AtomicAction {
            name,
            description: description.into(),
            duration_s,
            wheel_profile,
        })
    }

    /// Same action with every segment's wheels swapped.
    pub fn mirrored(&self) -> AtomicAction {
        AtomicAction {
            wheel_profile: self
                .wheel_profile
                .iter()
                .map(|s| WheelSegment {
                    left: s.right,
                    right: s.left,
                    duration_s: s.duration_s,
                })
                .collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in `(-π, π]`.
    pub theta: f64,
}

impl Pose {
    pub const ORIGIN: Pose = Pose {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    /// `local` expressed in the frame of `self`.
    pub fn compose(&self, local: &Pose) -> Pose {
        let (s, c) = self.theta.sin_cos();
        Pose::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
            self.theta + local.theta,
        )
    }

    pub fn distance_from_origin(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let a = theta.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotionTrajectory {
    pub action_name: String,
    pub samples: Vec<TrajectorySample>,
}

impl MotionTrajectory {
    pub fn final_pose(&self) -> Pose {
        self.samples.last().map(|s| s.pose).unwrap_or(Pose::ORIGIN)
    }
}

/// Closed-form pose after driving `(left, right)` for `tau` seconds from `start`.
pub fn advance(start: Pose, left: f64, right: f64, wheelbase_m: f64, tau: f64) -> Pose {
    let v = 0.5 * (right + left);
    let omega = (right - left) / wheelbase_m;
    let theta0 = start.theta;
    if omega.abs() < 1e-12 {
        let (s, c) = theta0.sin_cos();
        return Pose::new(start.x + v * tau * c, start.y + v * tau * s, theta0);
    }
    let theta1 = theta0 + omega * tau;
    let radius = v / omega;
    Pose::new(
        start.x + radius * (theta1.sin() - theta0.sin()),
        start.y - radius * (theta1.cos() - theta0.cos()),
        theta1,
    )
}

/// Integrate `action` from the origin, sampling every `dt_s` plus at segment boundaries.
pub fn synthesize(action: &AtomicAction, wheelbase_m: f64, dt_s: f64) -> Result<MotionTrajectory> {
    if !(wheelbase_m > 0.0 && wheelbase_m.is_finite()) {
        return Err(Error::Parameter(format!("wheelbase {wheelbase_m} must be positive")));
    }
    if !(dt_s > 0.0 && dt_s <= MAX_DT_S) {
        return Err(Error::Parameter(format!("dt {dt_s} must be in (0, {MAX_DT_S}]")));
    }

    // Boundaries of each segment on the absolute clock.
    let mut starts = Vec::with_capacity(action.wheel_profile.len());
    let mut t = 0.0;
    for seg in &action.wheel_profile {
        starts.push(t);
        t += seg.duration_s;
    }
    let end = t;

    let mut times: Vec<f64> = starts.iter().copied().chain(std::iter::once(end)).collect();
    let steps = (end / dt_s).ceil() as usize;
    times.extend((1..steps).map(|k| k as f64 * dt_s).filter(|&t| t < end));
    times.sort_by(f64::total_cmp);
    // Grid points within a hair of a boundary collapse onto the boundary.
    let mut merged: Vec<f64> = Vec::with_capacity(times.len());
    for t in times {
        match merged.last_mut() {
            Some(last) if t - *last < 1e-9 => {
                if starts.contains(&t) || t == end {
                    *last = t;
                }
            }
            _ => merged.push(t),
        }
    }
    if let Some(first) = merged.first_mut() {
        *first = 0.0;
    }
    if let Some(last) = merged.last_mut() {
        *last = end;
    }

    let mut samples = Vec::with_capacity(merged.len());
    let mut seg_idx = 0;
    let mut seg_pose = Pose::ORIGIN;
    for t in merged {
        while seg_idx + 1 < starts.len() && t >= starts[seg_idx + 1] {
            let seg = &action.wheel_profile[seg_idx];
            seg_pose = advance(seg_pose, seg.left, seg.right, wheelbase_m, seg.duration_s);
            seg_idx += 1;
        }
        let seg = &action.wheel_profile[seg_idx];
        let tau = (t - starts[seg_idx]).min(seg.duration_s);
        let pose = advance(seg_pose, seg.left, seg.right, wheelbase_m, tau);
        samples.push(TrajectorySample { t, pose });
    }

    Ok(MotionTrajectory {
        action_name: action.name.clone(),
        samples,
    })
}

/// Pose `elapsed` seconds into `action`, holding the final pose afterwards.
pub fn pose_at(action: &AtomicAction, wheelbase_m: f64, elapsed: f64) -> Pose {
    let mut pose = Pose::ORIGIN;
    let mut remaining = elapsed.max(0.0);
    for seg in &action.wheel_profile {
        let tau = remaining.min(seg.duration_s);
        pose = advance(pose, seg.left, seg.right, wheelbase_m, tau);
        remaining -= tau;
        if remaining <= 0.0 {
            break;
        }
    }
    pose
}

/// Ordered list of atomic actions with unique names.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Catalog {
    actions: Vec<AtomicAction>,
}

impl Catalog {
    pub fn new(actions: Vec<AtomicAction>) -> Result<Self> {
        for (i, a) in actions.iter().enumerate() {
            if a.name.is_empty() || !a.name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
                return Err(Error::Parameter(format!(
                    "action name {:?} must be a lowercase identifier",
                    a.name
                )));
            }
            if actions[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Parameter(format!("duplicate action {:?}", a.name)));
            }
        }
        Ok(Catalog { actions })
    }

    pub fn actions(&self) -> &[AtomicAction] {
        &self.actions
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.actions.iter().map(|a| a.name.as_str())
    }

    /// Exact, case-sensitive lookup.
    pub fn action_by_name(&self, name: &str) -> Result<&AtomicAction> {
        self.actions
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAction(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.actions.iter().any(|a| a.name == name)
    }
}

/// The shipped ten-action catalog.
pub fn catalog() -> &'static Catalog {
    static CATALOG: OnceLock<Catalog> = OnceLock::new();
    CATALOG.get_or_init(|| {
        parse_catalog(DEFAULT_CATALOG, "catalog.tsv", DEFAULT_V_MAX).expect("shipped catalog is valid")
    })
}

pub fn action_by_name(name: &str) -> Result<&'static AtomicAction> {
    catalog().action_by_name(name)
}

pub fn load_catalog(path: impl AsRef<Path>, v_max: f64) -> Result<Catalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catalog(&text, &path.display().to_string(), v_max)
}

/// Parse a `[catalog]` section: `name<TAB>description<TAB>v_l:v_r:dur,...`.
pub fn parse_catalog(text: &str, source: &str, v_max: f64) -> Result<Catalog> {
    let s = parse_sections(text, source, &["anchors", "hues", "actions", "emoji", "catalog"])?;
    let records = s.get("catalog").ok_or_else(|| Error::Table {
        row: format!("{source} [catalog]"),
        message: "missing section".into(),
    })?;
    let mut actions = Vec::with_capacity(records.len());
    for rec in records {
        rec.expect_len(&s, 3, 3)?;
        let mut profile = Vec::new();
        for triple in rec.fields[2].split(',') {
            let parts: Vec<f64> = triple
                .split(':')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| s.format_error(rec.line, format!("bad wheel segment {triple:?}")))?;
            let [left, right, duration_s] = parts[..] else {
                return Err(s.format_error(rec.line, format!("wheel segment {triple:?} needs v_l:v_r:dur")));
            };
            profile.push(WheelSegment {
                left,
                right,
                duration_s,
            });
        }
        let action = AtomicAction::new(&rec.fields[0], &rec.fields[1], profile, v_max).map_err(|e| {
            Error::Table {
                row: format!("{source}:{} [catalog]", rec.line),
                message: e.to_string(),
            }
        })?;
        actions.push(action);
    }
    Catalog::new(actions).map_err(|e| Error::Table {
        row: format!("{source} [catalog]"),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(left: f64, right: f64, dur: f64) -> AtomicAction {
        AtomicAction::new(
            "t",
            "test",
            vec![WheelSegment {
                left,
                right,
                duration_s: dur,
            }],
            DEFAULT_V_MAX,
        )
        .unwrap()
    }

    #[test]
    fn shipped_catalog() {
        let c = catalog();
        let names: Vec<_> = c.names().collect();
        assert_eq!(
            names,
            [
                "approach", "retreat", "spin_left", "spin_right", "sway", "bounce", "circle_cw",
                "circle_ccw", "tremble", "idle"
            ]
        );
        for a in c.actions() {
            let sum: f64 = a.wheel_profile.iter().map(|s| s.duration_s).sum();
            assert!((sum - a.duration_s).abs() < 1e-9);
            assert_eq!(a.name, a.name.to_lowercase());
        }
    }

    #[test]
    fn lookup_is_exact() {
        assert_eq!(action_by_name("approach").unwrap().name, "approach");
        assert!(matches!(action_by_name("APPROACH"), Err(Error::UnknownAction(_))));
        assert!(matches!(action_by_name("moonwalk"), Err(Error::UnknownAction(_))));
    }

    #[test]
    fn straight_line() {
        let traj = synthesize(&single(0.2, 0.2, 1.0), 0.2, 0.02).unwrap();
        let p = traj.final_pose();
        assert!((p.x - 0.2).abs() < 1e-12 && p.y.abs() < 1e-12 && p.theta == 0.0);
    }

    #[test]
    fn spin_in_place() {
        // v_l = 0.1, v_r = -0.1: omega = -0.2 / 0.2 = -1 rad/s
        let traj = synthesize(&single(0.1, -0.1, 1.0), 0.2, 0.02).unwrap();
        let p = traj.final_pose();
        assert!(p.distance_from_origin() < 1e-12);
        assert!((p.theta + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_grid() {
        let traj = synthesize(action_by_name("sway").unwrap(), 0.2, 0.03).unwrap();
        let ts: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
        assert_eq!(ts[0], 0.0);
        assert_eq!(*ts.last().unwrap(), 2.0);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        for boundary in [0.5, 1.0, 1.5] {
            assert!(ts.iter().any(|&t| (t - boundary).abs() < 1e-12), "missing {boundary}");
        }
        assert_eq!(traj.samples[0].pose, Pose::ORIGIN);
    }

    #[test]
    fn bad_parameters() {
        let a = single(0.1, 0.1, 1.0);
        assert!(matches!(synthesize(&a, 0.0, 0.02), Err(Error::Parameter(_))));
        assert!(matches!(synthesize(&a, -1.0, 0.02), Err(Error::Parameter(_))));
        assert!(matches!(synthesize(&a, 0.2, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(synthesize(&a, 0.2, 0.06), Err(Error::Parameter(_))));
    }

    #[test]
    fn speed_limit_enforced() {
        let seg = WheelSegment {
            left: 0.31,
            right: 0.0,
            duration_s: 1.0,
        };
        assert!(AtomicAction::new("fast", "", vec![seg], DEFAULT_V_MAX).is_err());
        let text = "[catalog]\nfast\tx\t0.5:0.5:1\n";
        assert!(matches!(parse_catalog(text, "c", DEFAULT_V_MAX), Err(Error::Table { .. })));
        let text = "[catalog]\nfast\tx\t0.1:0.1\n";
        assert!(matches!(parse_catalog(text, "c", DEFAULT_V_MAX), Err(Error::Format { line: 2, .. })));
        let text = "[catalog]\nA\tx\t0.1:0.1:1\n";
        assert!(parse_catalog(text, "c", DEFAULT_V_MAX).is_err());
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_angle(0.0), 0.0);
    }

    #[test]
    fn pose_at_holds_after_end() {
        let a = action_by_name("approach").unwrap();
        let end = pose_at(a, 0.2, a.duration_s);
        assert_eq!(pose_at(a, 0.2, a.duration_s + 5.0), end);
        assert!((end.x - 0.2).abs() < 1e-12);
    }
}
