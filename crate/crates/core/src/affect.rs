//! Affect taxonomy, valence–arousal geometry and the emoji/color tables
//! that scoring and the mock backend are built on.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::color::{Color, Hsv};
use crate::error::{Error, Result};
use crate::table_file::{parse_sections, Sections};

/// Shipped affect table file.
pub const DEFAULT_AFFECT_TABLES: &str = include_str!("../data/affect_tables.tsv");

/// The eight dataset affect categories, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffectLabel {
    Amusement,
    Awe,
    Contentment,
    Excitement,
    Anger,
    Disgust,
    Fear,
    Sadness,
}

impl AffectLabel {
    pub const ALL: [AffectLabel; 8] = [
        AffectLabel::Amusement,
        AffectLabel::Awe,
        AffectLabel::Contentment,
        AffectLabel::Excitement,
        AffectLabel::Anger,
        AffectLabel::Disgust,
        AffectLabel::Fear,
        AffectLabel::Sadness,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AffectLabel::Amusement => "amusement",
            AffectLabel::Awe => "awe",
            AffectLabel::Contentment => "contentment",
            AffectLabel::Excitement => "excitement",
            AffectLabel::Anger => "anger",
            AffectLabel::Disgust => "disgust",
            AffectLabel::Fear => "fear",
            AffectLabel::Sadness => "sadness",
        }
    }
}

impl fmt::Display for AffectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AffectLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AffectLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown affect label {s:?}")))
    }
}

/// A point on the circumplex. Both axes live in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValenceArousal {
    valence: f64,
    arousal: f64,
}

impl ValenceArousal {
    pub fn new(valence: f64, arousal: f64) -> Result<Self> {
        let ok = |v: f64| (-1.0..=1.0).contains(&v);
        if !ok(valence) || !ok(arousal) {
            return Err(Error::Parameter(format!(
                "valence/arousal ({valence}, {arousal}) outside [-1, 1]"
            )));
        }
        Ok(ValenceArousal { valence, arousal })
    }

    pub fn valence(self) -> f64 {
        self.valence
    }

    pub fn arousal(self) -> f64 {
        self.arousal
    }

    pub fn distance(self, other: ValenceArousal) -> f64 {
        (self.valence - other.valence).hypot(self.arousal - other.arousal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmojiEntry {
    pub glyph: String,
    pub name: String,
    pub va: ValenceArousal,
}

/// A hue interval `[low, high]` in degrees with optional saturation/value limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HueBand {
    pub low: f64,
    pub high: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_saturation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_value: Option<f64>,
}

impl HueBand {
    pub fn contains(&self, hsv: Hsv) -> bool {
        hsv.hue >= self.low
            && hsv.hue <= self.high
            && self.min_saturation.is_none_or(|s| hsv.saturation >= s)
            && self.max_value.is_none_or(|v| hsv.value <= v)
    }
}

/// Per-affect anchor point, hue bands and preferred motion names.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffectAnchorTable {
    anchors: [ValenceArousal; 8],
    hues: [Vec<HueBand>; 8],
    preferred_actions: [Vec<String>; 8],
}

impl AffectAnchorTable {
    pub fn anchor(&self, label: AffectLabel) -> ValenceArousal {
        self.anchors[label.index()]
    }

    pub fn hue_bands(&self, label: AffectLabel) -> &[HueBand] {
        &self.hues[label.index()]
    }

    pub fn preferred_actions(&self, label: AffectLabel) -> &[String] {
        &self.preferred_actions[label.index()]
    }

    pub fn prefers(&self, label: AffectLabel, action: &str) -> bool {
        self.preferred_actions(label).iter().any(|a| a == action)
    }

    /// Whether `color` falls inside one of the label's hue bands.
    pub fn color_in_bands(&self, label: AffectLabel, color: Color) -> bool {
        let hsv = color.hsv();
        self.hue_bands(label).iter().any(|band| band.contains(hsv))
    }

    /// First label, in enumeration order, whose bands contain `hsv`.
    pub fn first_band_match(&self, hsv: Hsv) -> Option<AffectLabel> {
        AffectLabel::ALL
            .into_iter()
            .find(|l| self.hue_bands(*l).iter().any(|b| b.contains(hsv)))
    }

    /// Argmin of Euclidean distance to the anchors. Ties go to the earlier label.
    pub fn nearest_affect(&self, p: ValenceArousal) -> AffectLabel {
        let mut best = AffectLabel::ALL[0];
        let mut best_d = f64::INFINITY;
        for label in AffectLabel::ALL {
            let d = p.distance(self.anchor(label));
            if d < best_d {
                best = label;
                best_d = d;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmojiTable {
    entries: Vec<EmojiEntry>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl EmojiTable {
    pub fn entries(&self) -> &[EmojiEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, glyph: &str) -> Option<&EmojiEntry> {
        self.index.get(glyph).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, glyph: &str) -> bool {
        self.index.contains_key(glyph)
    }
}

/// Everything loaded from an affect table file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffectTables {
    pub anchors: AffectAnchorTable,
    pub emoji: EmojiTable,
}

impl AffectTables {
    pub fn emoji_to_va(&self, glyph: &str) -> Result<ValenceArousal> {
        self.emoji
            .get(glyph)
            .map(|e| e.va)
            .ok_or_else(|| Error::UnknownEmoji(glyph.to_string()))
    }

    pub fn nearest_affect(&self, p: ValenceArousal) -> AffectLabel {
        self.anchors.nearest_affect(p)
    }

    /// Affect an emoji expresses, via its table coordinates.
    pub fn emoji_affect(&self, glyph: &str) -> Result<AffectLabel> {
        Ok(self.nearest_affect(self.emoji_to_va(glyph)?))
    }
}

/// Tables parsed from the shipped data file.
pub fn default_tables() -> &'static AffectTables {
    static TABLES: OnceLock<AffectTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        parse_affect_tables(DEFAULT_AFFECT_TABLES, "affect_tables.tsv")
            .expect("shipped affect tables are valid")
    })
}

pub fn load_affect_tables(path: impl AsRef<Path>) -> Result<AffectTables> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_affect_tables(&text, &path.display().to_string())
}

pub fn parse_affect_tables(text: &str, source: &str) -> Result<AffectTables> {
    let s = parse_sections(text, source, &["anchors", "hues", "actions", "emoji", "catalog"])?;
    let section = |name: &str| {
        s.get(name).ok_or_else(|| Error::Table {
            row: format!("{source} [{name}]"),
            message: "missing section".into(),
        })
    };

    let mut anchors: [Option<ValenceArousal>; 8] = [None; 8];
    for rec in section("anchors")? {
        rec.expect_len(&s, 3, 3)?;
        let label = parse_label(&s, rec.line, &rec.fields[0])?;
        let row = row_name(source, rec.line, "anchors");
        let va = ValenceArousal::new(rec.number(&s, 1)?, rec.number(&s, 2)?)
            .map_err(|e| table_err(&row, e))?;
        if anchors[label.index()].replace(va).is_some() {
            return Err(Error::Table {
                row,
                message: format!("second anchor for {label}"),
            });
        }
    }

    let mut hues: [Vec<HueBand>; 8] = Default::default();
    for rec in section("hues")? {
        rec.expect_len(&s, 3, 4)?;
        let label = parse_label(&s, rec.line, &rec.fields[0])?;
        let row = row_name(source, rec.line, "hues");
        let (low, high) = (rec.number(&s, 1)?, rec.number(&s, 2)?);
        if !(0.0..=360.0).contains(&low) || !(0.0..=360.0).contains(&high) || low > high {
            return Err(Error::Table {
                row,
                message: format!("hue interval [{low}, {high}] not within [0, 360]"),
            });
        }
        let mut band = HueBand {
            low,
            high,
            min_saturation: None,
            max_value: None,
        };
        if let Some(constraint) = rec.fields.get(3) {
            parse_constraint(&s, rec.line, constraint, &mut band)?;
        }
        hues[label.index()].push(band);
    }

    let mut preferred: [Vec<String>; 8] = Default::default();
    for rec in section("actions")? {
        rec.expect_len(&s, 2, 2)?;
        let label = parse_label(&s, rec.line, &rec.fields[0])?;
        let names: Vec<String> = rec.fields[1]
            .split(',')
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .map(String::from)
            .collect();
        preferred[label.index()].extend(names);
    }

    let mut entries = Vec::new();
    let mut index = HashMap::new();
    for rec in section("emoji")? {
        rec.expect_len(&s, 4, 4)?;
        let row = row_name(source, rec.line, "emoji");
        let glyph = rec.fields[0].clone();
        if glyph.graphemes(true).count() != 1 {
            return Err(Error::Table {
                row,
                message: format!("{glyph:?} is not a single grapheme cluster"),
            });
        }
        let va = ValenceArousal::new(rec.number(&s, 2)?, rec.number(&s, 3)?)
            .map_err(|e| table_err(&row, e))?;
        if index.insert(glyph.clone(), entries.len()).is_some() {
            return Err(Error::Table {
                row,
                message: format!("duplicate glyph {glyph}"),
            });
        }
        entries.push(EmojiEntry {
            glyph,
            name: rec.fields[1].clone(),
            va,
        });
    }

    for label in AffectLabel::ALL {
        let row = format!("{source} label {label}");
        let missing = |what: &str| Error::Table {
            row: row.clone(),
            message: format!("no {what}"),
        };
        if anchors[label.index()].is_none() {
            return Err(missing("anchor"));
        }
        if hues[label.index()].is_empty() {
            return Err(missing("hue interval"));
        }
        if preferred[label.index()].is_empty() {
            return Err(missing("preferred action"));
        }
    }

    Ok(AffectTables {
        anchors: AffectAnchorTable {
            anchors: anchors.map(|a| a.expect("checked above")),
            hues,
            preferred_actions: preferred,
        },
        emoji: EmojiTable { entries, index },
    })
}

fn row_name(source: &str, line: usize, section: &str) -> String {
    format!("{source}:{line} [{section}]")
}

fn table_err(row: &str, e: Error) -> Error {
    Error::Table {
        row: row.to_string(),
        message: e.to_string(),
    }
}

fn parse_label(s: &Sections, line: usize, field: &str) -> Result<AffectLabel> {
    field
        .parse()
        .map_err(|_| s.format_error(line, format!("unknown affect label {field:?}")))
}

fn parse_constraint(s: &Sections, line: usize, text: &str, band: &mut HueBand) -> Result<()> {
    let bad = || s.format_error(line, format!("bad constraint {text:?}, expected s>=X or v<=X"));
    let (slot, value) = if let Some(v) = text.strip_prefix("s>=") {
        (&mut band.min_saturation, v)
    } else if let Some(v) = text.strip_prefix("v<=") {
        (&mut band.max_value, v)
    } else {
        return Err(bad());
    };
    let v: f64 = value.trim().parse().map_err(|_| bad())?;
    if !(0.0..=1.0).contains(&v) {
        return Err(bad());
    }
    *slot = Some(v);
    Ok(())
}
