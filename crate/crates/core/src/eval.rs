//! Affect-labeled dataset evaluation: emoji/palette/motion alignment,
//! palette mimicry and the grayscale ablation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::affect::{AffectLabel, AffectTables};
use crate::color::Color;
use crate::error::{Error, Result};
use crate::image_input::{ImageInput, ImageSource};
use crate::led::ColorPalette;
use crate::par::{self, Parallelism};
use crate::pipeline::{run_turn, Resources};
use crate::prompt::EmpathicResponse;
use crate::vlm::VlmBackend;

pub const DEFAULT_DOMINANT_K: usize = 5;
pub const DEFAULT_MIMICRY_THRESHOLD: f64 = 0.12;
/// Below this saturation a color's hue is treated as undefined.
pub const ACHROMATIC_SATURATION: f64 = 0.1;
const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub label: AffectLabel,
    pub image: ImageInput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedEntry {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub skipped: Vec<SkippedEntry>,
}

#[derive(Deserialize)]
struct Annotation {
    emotion: String,
}

#[derive(Deserialize)]
struct ManifestEntry {
    id: Option<String>,
    file: String,
    emotion: String,
}

/// Load a labeled image directory.
///
/// Accepted layouts, tried in order:
/// 1. `manifest.json`: an array of `{"id"?, "file", "emotion"}`.
/// 2. `image/` + `annotation/` trees with matching relative paths.
/// 3. Images anywhere under `dir`, each with a same-stem `.json` sidecar.
pub fn ingest(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", dir.display())));
    }
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    let mut push = |skipped: &mut Vec<SkippedEntry>, id: String, image_path: &Path, emotion: Result<String>| {
        let loaded = emotion
            .and_then(|e| e.trim().to_lowercase().parse::<AffectLabel>())
            .and_then(|label| Ok((label, ImageInput::from_file(image_path, ImageSource::Dataset)?)));
        match loaded {
            Ok((label, image)) => images.push(LabeledImage { id, label, image }),
            Err(e) => skipped.push(SkippedEntry {
                path: image_path.display().to_string(),
                reason: e.to_string(),
            }),
        }
    };

    let manifest = dir.join("manifest.json");
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
        for entry in entries {
            let path = dir.join(&entry.file);
            let id = entry.id.unwrap_or_else(|| id_for(Path::new(&entry.file)));
            push(&mut skipped, id, &path, Ok(entry.emotion));
        }
    } else if dir.join("image").is_dir() && dir.join("annotation").is_dir() {
        let root = dir.join("annotation");
        for file in sorted_files(&root, &["json"]) {
            let rel = file.strip_prefix(&root).expect("under root");
            let Some(image_path) = find_image(&dir.join("image").join(rel)) else {
                skipped.push(SkippedEntry {
                    path: file.display().to_string(),
                    reason: "no matching image".into(),
                });
                continue;
            };
            push(&mut skipped, id_for(rel), &image_path, read_emotion(&file));
        }
    } else {
        for file in sorted_files(dir, &IMAGE_EXTENSIONS) {
            let rel = file.strip_prefix(dir).expect("under root");
            let sidecar = file.with_extension("json");
            if !sidecar.is_file() {
                skipped.push(SkippedEntry {
                    path: file.display().to_string(),
                    reason: "no annotation file".into(),
                });
                continue;
            }
            push(&mut skipped, id_for(rel), &file, read_emotion(&sidecar));
        }
    }

    if images.is_empty() {
        return Err(Error::Dataset(format!(
            "no labeled images found in {} ({} entries skipped)",
            dir.display(),
            skipped.len()
        )));
    }
    images.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Dataset { images, skipped })
}

fn id_for(rel: &Path) -> String {
    rel.with_extension("")
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn sorted_files(root: &Path, extensions: &[&str]) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| extensions.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    files
}

fn find_image(stem_path: &Path) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| stem_path.with_extension(ext))
        .find(|p| p.is_file())
}

fn read_emotion(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ann: Annotation =
        serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    Ok(ann.emotion)
}

/// Most populous 3-bit-per-channel bins, as bin-mean colors, by count descending.
pub fn dominant_colors(image: &ImageInput, k: usize) -> Result<Vec<Color>> {
    Ok(dominant_colors_with(image, k, Parallelism::default())?
        .into_iter()
        .map(|(c, _)| c)
        .collect())
}

/// Like [`dominant_colors`] but also returns each bin's pixel count.
pub fn dominant_colors_with(image: &ImageInput, k: usize, exec: Parallelism) -> Result<Vec<(Color, u64)>> {
    let rgb = image.decode()?;
    let pixels: &[[u8; 3]] = as_pixels(rgb.as_raw());
    Ok(dominant_bins(pixels, k, exec))
}

fn as_pixels(raw: &[u8]) -> &[[u8; 3]] {
    let (chunks, rest) = raw.as_chunks::<3>();
    debug_assert!(rest.is_empty());
    chunks
}

pub(crate) fn bin_index([r, g, b]: [u8; 3]) -> usize {
    (usize::from(r >> 5) << 6) | (usize::from(g >> 5) << 3) | usize::from(b >> 5)
}

/// Top-`k` bins over raw pixels. Ties break toward the lower bin index.
pub fn dominant_bins(pixels: &[[u8; 3]], k: usize, exec: Parallelism) -> Vec<(Color, u64)> {
    // Per bin: count and channel sums.
    let acc = par::fold_chunks(
        pixels,
        exec,
        || vec![[0u64; 4]; 512],
        |mut acc, px| {
            let slot = &mut acc[bin_index(*px)];
            slot[0] += 1;
            slot[1] += u64::from(px[0]);
            slot[2] += u64::from(px[1]);
            slot[3] += u64::from(px[2]);
            acc
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                for i in 0..4 {
                    x[i] += y[i];
                }
            }
            a
        },
    );
    let mut occupied: Vec<(usize, [u64; 4])> = acc.into_iter().enumerate().filter(|(_, s)| s[0] > 0).collect();
    occupied.sort_by(|a, b| b.1[0].cmp(&a.1[0]).then(a.0.cmp(&b.0)));
    occupied
        .into_iter()
        .take(k)
        .map(|(_, [n, r, g, b])| {
            let mean = |sum: u64| ((2 * sum + n) / (2 * n)) as u8;
            (Color::new(mean(r), mean(g), mean(b)), n)
        })
        .collect()
}

fn unit_distance(a: Color, b: Color) -> f64 {
    let (a, b) = (a.to_unit(), b.to_unit());
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    d2.sqrt() / 3f64.sqrt()
}

/// Mean over palette colors of the nearest dominant-color distance, in the
/// unit RGB cube scaled by 1/√3 so the result lies in `[0, 1]`.
pub fn mimicry_distance(palette: &ColorPalette, dominant: &[Color]) -> f64 {
    let total: f64 = palette
        .colors()
        .iter()
        .map(|&c| {
            dominant
                .iter()
                .map(|&d| unit_distance(c, d))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / palette.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mimicry {
    pub distance: f64,
    pub flagged: bool,
}

pub fn detect_mimicry(palette: &ColorPalette, image: &ImageInput, threshold: f64) -> Result<Mimicry> {
    let dominant = dominant_colors(image, DEFAULT_DOMINANT_K)?;
    let distance = mimicry_distance(palette, &dominant);
    Ok(Mimicry {
        distance,
        flagged: distance < threshold,
    })
}

/// Fraction of palette colors inside the label's hue bands. Achromatic
/// colors count as aligned only for sadness and contentment.
pub fn hue_alignment(palette: &ColorPalette, label: AffectLabel, tables: &AffectTables) -> f64 {
    let aligned = palette
        .colors()
        .iter()
        .filter(|c| {
            if c.hsv().saturation < ACHROMATIC_SATURATION {
                matches!(label, AffectLabel::Sadness | AffectLabel::Contentment)
            } else {
                tables.anchors.color_in_bands(label, **c)
            }
        })
        .count();
    aligned as f64 / palette.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub predicted_affect: AffectLabel,
    pub hue_alignment: f64,
    pub motion_alignment: u8,
    pub mimicry_distance: f64,
    pub mimicry_flag: bool,
}

pub fn score(
    response: &EmpathicResponse,
    label: AffectLabel,
    image: &ImageInput,
    tables: &AffectTables,
    mimicry_threshold: f64,
) -> Result<ImageScore> {
    let predicted_affect = tables.emoji_affect(&response.emoji)?;
    let mimicry = detect_mimicry(&response.palette, image, mimicry_threshold)?;
    Ok(ImageScore {
        predicted_affect,
        hue_alignment: hue_alignment(&response.palette, label, tables),
        motion_alignment: u8::from(tables.anchors.prefers(label, &response.motion)),
        mimicry_distance: mimicry.distance,
        mimicry_flag: mimicry.flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRecord {
    pub id: String,
    pub label: AffectLabel,
    #[serde(flatten)]
    pub score: ImageScore,
    pub response: EmpathicResponse,
    pub fallback: bool,
    pub repaired: bool,
    pub raw_outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedImage {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub evaluated: usize,
    pub failed: usize,
    pub affect_agreement: f64,
    pub mean_hue_alignment: f64,
    pub mean_motion_alignment: f64,
    pub mimicry_rate: f64,
    /// Rows are dataset labels, columns predicted affects, both in label order.
    pub confusion: [[u32; 8]; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub backend: String,
    pub grayscale: bool,
    pub mimicry_threshold: f64,
    pub labels: [AffectLabel; 8],
    pub aggregates: Aggregates,
    pub records: Vec<ImageRecord>,
    pub failures: Vec<FailedImage>,
    pub skipped: Vec<SkippedEntry>,
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-image CSV (no raw outputs).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Dataset(format!("csv: {e}"));
        w.write_record([
            "id",
            "label",
            "predicted_affect",
            "emoji",
            "motion",
            "palette",
            "hue_alignment",
            "motion_alignment",
            "mimicry_distance",
            "mimicry_flag",
            "fallback",
        ])
        .map_err(io)?;
        for r in &self.records {
            let palette: Vec<String> = r.response.palette.colors().iter().map(|c| c.to_hex()).collect();
            w.write_record([
                r.id.clone(),
                r.label.to_string(),
                r.score.predicted_affect.to_string(),
                r.response.emoji.clone(),
                r.response.motion.clone(),
                palette.join(" "),
                format!("{:.6}", r.score.hue_alignment),
                r.score.motion_alignment.to_string(),
                format!("{:.6}", r.score.mimicry_distance),
                r.score.mimicry_flag.to_string(),
                r.fallback.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Dataset(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    /// Write `report.json` and `records.csv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("records.csv");
        fs::write(&csv, self.to_csv()?).map_err(|e| Error::io(&csv, e))?;
        Ok(())
    }
}

pub fn aggregate(records: &[ImageRecord], failed: usize) -> Aggregates {
    let mut confusion = [[0u32; 8]; 8];
    for r in records {
        confusion[r.label.index()][r.score.predicted_affect.index()] += 1;
    }
    let n = records.len();
    let rate = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    let trace: u32 = (0..8).map(|i| confusion[i][i]).sum();
    Aggregates {
        evaluated: n,
        failed,
        affect_agreement: rate(f64::from(trace)),
        mean_hue_alignment: rate(records.iter().map(|r| r.score.hue_alignment).sum()),
        mean_motion_alignment: rate(records.iter().map(|r| f64::from(r.score.motion_alignment)).sum()),
        mimicry_rate: rate(records.iter().filter(|r| r.score.mimicry_flag).count() as f64),
        confusion,
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub grayscale: bool,
    pub mimicry_threshold: f64,
    pub max_in_flight: usize,
    pub exec: Parallelism,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            grayscale: false,
            mimicry_threshold: DEFAULT_MIMICRY_THRESHOLD,
            max_in_flight: 4,
            exec: Parallelism::default(),
        }
    }
}

/// Evaluate one image end to end. The submitted image is grayscale under
/// the ablation; scoring uses the image that was submitted.
fn evaluate_one(
    item: &LabeledImage,
    backend: &dyn VlmBackend,
    resources: &Resources,
    opts: &EvalOptions,
) -> Result<ImageRecord> {
    let submitted = if opts.grayscale {
        item.image.to_grayscale()?
    } else {
        item.image.clone()
    };
    let outcome = run_turn(backend, resources, &submitted, Some(item.label), None)?;
    let score = score(
        &outcome.response,
        item.label,
        &submitted,
        &resources.tables,
        opts.mimicry_threshold,
    )?;
    Ok(ImageRecord {
        id: item.id.clone(),
        label: item.label,
        score,
        response: outcome.response,
        fallback: outcome.fallback,
        repaired: outcome.report.repaired,
        raw_outputs: outcome.raw_outputs,
    })
}

pub fn evaluate(
    dataset: &Dataset,
    backend: &dyn VlmBackend,
    resources: &Resources,
    opts: &EvalOptions,
) -> EvalResult {
    let results = par::with_pool(opts.max_in_flight, opts.exec, || {
        par::map_slice(&dataset.images, opts.exec, |item| {
            (item.id.clone(), evaluate_one(item, backend, resources, opts))
        })
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, result) in results {
        match result {
            Ok(r) => records.push(r),
            Err(e) => failures.push(FailedImage { id, error: e.to_string() }),
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    failures.sort_by(|a, b| a.id.cmp(&b.id));
    EvalResult {
        backend: backend.name().to_string(),
        grayscale: opts.grayscale,
        mimicry_threshold: opts.mimicry_threshold,
        labels: AffectLabel::ALL,
        aggregates: aggregate(&records, failures.len()),
        records,
        failures,
        skipped: dataset.skipped.clone(),
    }
}

/// Ingest `dir` and evaluate it.
pub fn run(
    dir: impl AsRef<Path>,
    backend: &dyn VlmBackend,
    resources: &Resources,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    let dataset = ingest(dir)?;
    Ok(evaluate(&dataset, backend, resources, opts))
}

/// Label counts, for sanity checks on confusion rows.
pub fn label_counts(images: &[LabeledImage]) -> BTreeMap<AffectLabel, usize> {
    let mut m = BTreeMap::new();
    for i in images {
        *m.entry(i.label).or_default() += 1;
    }
    m
}
