//! Regenerates the bundled fixture images under `fixtures/`.
//!
//! Usage: `cargo run -p empathy-core --example gen_fixtures -- [fixtures-dir]`
//!
//! Every mini-set image is checked against the canonical mock palette for its
//! label so that the shipped set never trips the mimicry detector.

use std::fs;
use std::path::{Path, PathBuf};

use empathy_core::eval::{detect_mimicry, DEFAULT_MIMICRY_THRESHOLD};
use empathy_core::image_input::{ImageInput, ImageSource};
use empathy_core::vlm::canonical_response;
use empathy_core::{AffectLabel, Color};
use image::codecs::jpeg::JpegEncoder;
use image::{Rgb, RgbImage};

const WIDTH: u32 = 96;
const HEIGHT: u32 = 64;
const MIN_MARGIN: f64 = 0.15;

fn rgb(hex: &str) -> Rgb<u8> {
    let c: Color = hex.parse().expect("fixture colors are valid hex");
    Rgb(c.channels())
}

fn lerp(a: Rgb<u8>, b: Rgb<u8>, t: f64) -> Rgb<u8> {
    Rgb(std::array::from_fn(|i| {
        (f64::from(a.0[i]) + (f64::from(b.0[i]) - f64::from(a.0[i])) * t).round() as u8
    }))
}

/// Left-to-right gradient.
fn gradient(from: &str, to: &str) -> RgbImage {
    let (a, b) = (rgb(from), rgb(to));
    RgbImage::from_fn(WIDTH, HEIGHT, |x, _| lerp(a, b, f64::from(x) / f64::from(WIDTH - 1)))
}

/// Horizontal bands, top to bottom, each taking `weight` of the height.
fn bands(parts: &[(&str, u32)]) -> RgbImage {
    let total: u32 = parts.iter().map(|p| p.1).sum();
    RgbImage::from_fn(WIDTH, HEIGHT, |_, y| {
        let mut acc = 0;
        for (hex, w) in parts {
            acc += w;
            if y * total < acc * HEIGHT {
                return rgb(hex);
            }
        }
        rgb(parts.last().unwrap().0)
    })
}

fn write_jpeg(path: &Path, img: &RgbImage) -> ImageInput {
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, 95)
        .encode_image(img)
        .expect("jpeg encoding");
    fs::write(path, &bytes).unwrap_or_else(|e| panic!("writing {}: {e}", path.display()));
    ImageInput::from_bytes(bytes, ImageSource::Dataset).expect("fixture decodes")
}

fn write_annotation(path: &Path, label: AffectLabel) {
    fs::write(path, format!("{{\"emotion\": \"{label}\"}}\n")).expect("write annotation");
}

fn mini_set() -> Vec<(AffectLabel, RgbImage)> {
    use AffectLabel::*;
    vec![
        (Amusement, gradient("#87CEEB", "#B0A0D0")),
        (Amusement, bands(&[("#2F8F8F", 2), ("#A0E0E0", 1)])),
        (Awe, gradient("#F0E68C", "#FFDAB9")),
        (Awe, bands(&[("#8FBC8F", 1), ("#E0FFE0", 1)])),
        (Contentment, gradient("#F5DEB3", "#DDA0DD")),
        (Contentment, bands(&[("#C0C0C0", 1), ("#FFE4E1", 2)])),
        (Excitement, gradient("#87CEFA", "#E6E6FA")),
        (Excitement, bands(&[("#20B2AA", 1), ("#AFEEEE", 1)])),
        (Anger, gradient("#708090", "#B0C4DE")),
        (Anger, bands(&[("#2F4F4F", 1), ("#5F9EA0", 1)])),
        (Disgust, gradient("#FFB6C1", "#DB7093")),
        (Disgust, bands(&[("#4169E1", 1), ("#B0E0E6", 1)])),
        (Fear, gradient("#98FB98", "#E0FFFF")),
        (Fear, bands(&[("#6A5ACD", 1), ("#D8BFD8", 1)])),
        (Sadness, gradient("#FFFACD", "#FFA07A")),
        (Sadness, bands(&[("#F0F8FF", 1), ("#FFD700", 1)])),
    ]
}

fn main() {
    let root = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    let mini = root.join("mini-set");
    fs::create_dir_all(&mini).expect("create fixture dirs");

    let mut seen = std::collections::BTreeMap::<AffectLabel, u32>::new();
    for (label, img) in mini_set() {
        let n = seen.entry(label).or_default();
        *n += 1;
        let id = format!("{label}_{n:02}");
        let image = write_jpeg(&mini.join(format!("{id}.jpg")), &img);
        write_annotation(&mini.join(format!("{id}.json")), label);
        let m = detect_mimicry(&canonical_response(label).palette, &image, DEFAULT_MIMICRY_THRESHOLD)
            .expect("fixture decodes");
        assert!(
            m.distance >= MIN_MARGIN,
            "{id}: canonical palette too close to image colors ({:.3})",
            m.distance
        );
        println!("{id}\tmimicry distance {:.3}", m.distance);
    }

    // Case-study scenes.
    let contentment = bands(&[("#87CEEB", 2), ("#6B8E23", 1), ("#556B2F", 1)]);
    write_jpeg(&root.join("contentment.jpg"), &contentment);
    write_annotation(&root.join("contentment.json"), AffectLabel::Contentment);

    // Mostly crimson so the dominant hue sits near 345 degrees.
    let fear = bands(&[("#C01040", 5), ("#200810", 1)]);
    write_jpeg(&root.join("fear.jpg"), &fear);
    write_annotation(&root.join("fear.json"), AffectLabel::Fear);

    // Saturated party colors that a model might copy straight into a palette.
    let excitement = bands(&[("#FF69B4", 2), ("#00CED1", 2), ("#8A2BE2", 1)]);
    write_jpeg(&root.join("excitement.jpg"), &excitement);
    write_annotation(&root.join("excitement.json"), AffectLabel::Excitement);

    println!("fixtures written to {}", root.display());
}
