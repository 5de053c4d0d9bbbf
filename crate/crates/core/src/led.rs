//! Palette → LED strip frames.

use serde::{Deserialize, Serialize};

use crate::color::Color;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

pub const MAX_PALETTE_LEN: usize = 16;
pub const DEFAULT_STRIP_LEN: usize = 12;

/// One to sixteen colors in model order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Color>", into = "Vec<Color>")]
pub struct ColorPalette(Vec<Color>);

impl ColorPalette {
    pub fn new(colors: Vec<Color>) -> Result<Self> {
        if colors.is_empty() || colors.len() > MAX_PALETTE_LEN {
            return Err(Error::Parameter(format!(
                "palette length {} outside [1, {MAX_PALETTE_LEN}]",
                colors.len()
            )));
        }
        Ok(ColorPalette(colors))
    }

    pub fn single(color: Color) -> Self {
        ColorPalette(vec![color])
    }

    pub fn colors(&self) -> &[Color] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<Color>> for ColorPalette {
    type Error = Error;
    fn try_from(v: Vec<Color>) -> Result<Self> {
        ColorPalette::new(v)
    }
}

impl From<ColorPalette> for Vec<Color> {
    fn from(p: ColorPalette) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnimationKind {
    StaticGradient,
    Pulse,
    Chase,
    FadeCycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnimationMode {
    pub kind: AnimationKind,
    pub rate_hz: f64,
}

impl AnimationMode {
    pub fn new(kind: AnimationKind, rate_hz: f64) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz <= 5.0) {
            return Err(Error::Parameter(format!("rate {rate_hz} Hz outside (0, 5]")));
        }
        Ok(AnimationMode { kind, rate_hz })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedFrame {
    pub t: f64,
    pub pixels: Vec<Color>,
}

impl LedFrame {
    /// One line of the frame dump: `t<TAB>#RRGGBB,#RRGGBB,...`.
    pub fn dump_line(&self) -> String {
        let pixels: Vec<String> = self.pixels.iter().map(|c| c.to_hex()).collect();
        format!("{:.6}\t{}", self.t, pixels.join(","))
    }
}

/// Render a whole frame sequence in the dump format, one line per frame.
pub fn dump_frames(frames: &[LedFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&f.dump_line());
        out.push('\n');
    }
    out
}

/// Parse the dump format back into frames.
pub fn parse_frame_dump(text: &str) -> Result<Vec<LedFrame>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |m: &str| Error::Format {
                path: "frame dump".into(),
                line: i + 1,
                message: m.into(),
            };
            let (t, pixels) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let t = t.parse::<f64>().map_err(|_| bad("bad time"))?;
            let pixels = pixels
                .split(',')
                .map(str::parse)
                .collect::<Result<Vec<Color>>>()
                .map_err(|_| bad("bad color"))?;
            Ok(LedFrame { t, pixels })
        })
        .collect()
}

/// `num / den` rounded half away from zero, for non-negative operands.
fn div_round(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    if num >= 0 {
        (2 * num + den) / (2 * den)
    } else {
        -((-2 * num + den) / (2 * den))
    }
}

fn lerp_exact(a: Color, b: Color, num: i64, den: i64) -> Color {
    let ch = |x: u8, y: u8| {
        let (x, y) = (i64::from(x), i64::from(y));
        div_round(x * den + (y - x) * num, den).clamp(0, 255) as u8
    };
    Color::new(ch(a.r, b.r), ch(a.g, b.g), ch(a.b, b.b))
}

fn lerp_f(a: Color, b: Color, frac: f64) -> Color {
    let ch = |x: u8, y: u8| {
        let (x, y) = (f64::from(x), f64::from(y));
        (x + (y - x) * frac).round().clamp(0.0, 255.0) as u8
    };
    Color::new(ch(a.r, b.r), ch(a.g, b.g), ch(a.b, b.b))
}

/// Piecewise-linear sample of the palette across `strip_len` pixels.
///
/// Interpolation is done in exact integer arithmetic so frames are bit-stable.
pub fn gradient(palette: &ColorPalette, strip_len: usize) -> Vec<Color> {
    let colors = palette.colors();
    let n = colors.len();
    if n == 1 || strip_len == 1 {
        return vec![colors[0]; strip_len];
    }
    let den = (strip_len - 1) as i64;
    let spans = (n - 1) as i64;
    (0..strip_len as i64)
        .map(|i| {
            let pos = i * spans;
            let seg = (pos / den).min(spans - 1);
            let rem = pos - seg * den;
            lerp_exact(colors[seg as usize], colors[seg as usize + 1], rem, den)
        })
        .collect()
}

/// Brightness `0.5·(1 + sin(2π·rate·t − π/2))`, so zero at `t = 0`.
pub fn pulse_brightness(rate_hz: f64, t: f64) -> f64 {
    let phase = std::f64::consts::TAU * rate_hz * t - std::f64::consts::FRAC_PI_2;
    (0.5 * (1.0 + phase.sin())).clamp(0.0, 1.0)
}

/// Pixels of a single frame at time `t`.
pub fn frame_at(palette: &ColorPalette, mode: AnimationMode, strip_len: usize, t: f64) -> Vec<Color> {
    match mode.kind {
        AnimationKind::StaticGradient => gradient(palette, strip_len),
        AnimationKind::Pulse => {
            let b = pulse_brightness(mode.rate_hz, t);
            gradient(palette, strip_len)
                .into_iter()
                .map(|c| Color::from_channels(c.channels().map(|x| (f64::from(x) * b).round() as u8)))
                .collect()
        }
        AnimationKind::Chase => {
            let base = gradient(palette, strip_len);
            let shift = ((strip_len as f64 * mode.rate_hz * t).floor() as usize) % strip_len;
            (0..strip_len)
                .map(|i| base[(i + strip_len - shift) % strip_len])
                .collect()
        }
        AnimationKind::FadeCycle => {
            let colors = palette.colors();
            let n = colors.len();
            let pos = mode.rate_hz * t * n as f64;
            let step = pos.floor();
            let idx = (step as usize) % n;
            let color = lerp_f(colors[idx], colors[(idx + 1) % n], pos - step);
            vec![color; strip_len]
        }
    }
}

/// `floor(fps·duration) + 1` frames at `t = k / fps`.
pub fn render(
    palette: &ColorPalette,
    mode: AnimationMode,
    strip_len: usize,
    fps: u32,
    duration_s: f64,
) -> Result<Vec<LedFrame>> {
    render_with(palette, mode, strip_len, fps, duration_s, Parallelism::default())
}

pub fn render_with(
    palette: &ColorPalette,
    mode: AnimationMode,
    strip_len: usize,
    fps: u32,
    duration_s: f64,
    exec: Parallelism,
) -> Result<Vec<LedFrame>> {
    if !(1..=60).contains(&fps) {
        return Err(Error::Parameter(format!("fps {fps} outside [1, 60]")));
    }
    if !(duration_s > 0.0 && duration_s <= 60.0) {
        return Err(Error::Parameter(format!("duration {duration_s} s outside (0, 60]")));
    }
    if strip_len == 0 {
        return Err(Error::Parameter("strip length must be at least 1".into()));
    }
    AnimationMode::new(mode.kind, mode.rate_hz)?;
    // Tolerance absorbs products like (1/3)·3 landing just under an integer.
    let count = (f64::from(fps) * duration_s + 1e-9).floor() as usize + 1;
    Ok(par::map_range(count, exec, |k| {
        let t = k as f64 / f64::from(fps);
        LedFrame {
            t,
            pixels: frame_at(palette, mode, strip_len, t),
        }
    }))
}

/// Arousal thresholds: calm → static, neutral → fade, aroused → pulse, high → chase.
pub fn mode_for_arousal(arousal: f64) -> AnimationMode {
    let (kind, rate_hz) = if arousal < -0.33 {
        (AnimationKind::StaticGradient, 1.0)
    } else if arousal < 0.2 {
        (AnimationKind::FadeCycle, 0.2)
    } else if arousal < 0.6 {
        (AnimationKind::Pulse, 0.5)
    } else {
        (AnimationKind::Chase, 1.0)
    };
    AnimationMode { kind, rate_hz }
}
