use std::path::PathBuf;
use std::sync::Mutex;

use empathy_core::eval::{
    dominant_colors_with, evaluate, ingest, label_counts, run, EvalOptions, DEFAULT_MIMICRY_THRESHOLD,
};
use empathy_core::par::Parallelism;
use empathy_core::vlm::{CompletionRequest, MockBackend};
use empathy_core::{AffectLabel, Color, Error, ImageInput, ImageSource, Resources, Result, VlmBackend};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn mini_set_ingests_two_per_label() {
    let ds = ingest(fixtures().join("mini-set")).unwrap();
    assert_eq!(ds.images.len(), 16);
    assert!(ds.skipped.is_empty());
    assert!(ds.images.windows(2).all(|w| w[0].id < w[1].id));
    let counts = label_counts(&ds.images);
    assert!(AffectLabel::ALL.iter().all(|l| counts[l] == 2));
}

#[test]
fn mock_eval_on_mini_set() {
    let backend = MockBackend::shipped();
    let res = run(fixtures().join("mini-set"), &backend, &Resources::shipped(), &EvalOptions::default()).unwrap();
    let a = &res.aggregates;
    assert_eq!(a.evaluated, 16);
    assert_eq!(a.affect_agreement, 1.0);
    assert_eq!(a.mean_hue_alignment, 1.0);
    assert_eq!(a.mean_motion_alignment, 1.0);
    assert_eq!(a.mimicry_rate, 0.0);
    let trace: u32 = (0..8).map(|i| a.confusion[i][i]).sum();
    let total: u32 = a.confusion.iter().flatten().sum();
    assert_eq!(f64::from(trace) / f64::from(total), a.affect_agreement);
    for (i, row) in a.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<u32>(), 2, "row {i}");
    }
    assert_eq!(backend.calls(), 16);
}

#[test]
fn reports_are_byte_identical_across_runs_and_strategies() {
    let dir = fixtures().join("mini-set");
    let resources = Resources::shipped();
    let mut outputs = Vec::new();
    for exec in [Parallelism::Parallel, Parallelism::Sequential, Parallelism::Parallel] {
        let opts = EvalOptions {
            exec,
            ..EvalOptions::default()
        };
        let res = run(&dir, &MockBackend::shipped(), &resources, &opts).unwrap();
        outputs.push((res.to_json(), res.to_csv().unwrap()));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn written_report_files() {
    let out = tempfile::tempdir().unwrap();
    let res = run(
        fixtures().join("mini-set"),
        &MockBackend::shipped(),
        &Resources::shipped(),
        &EvalOptions::default(),
    )
    .unwrap();
    res.write_to(out.path()).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["grayscale"], false);
    assert_eq!(report["records"].as_array().unwrap().len(), 16);
    assert!(report["records"][0]["raw_outputs"][0].as_str().unwrap().contains("\"emoji\""));
    let csv = std::fs::read_to_string(out.path().join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
}

/// Mock that remembers every image it was shown.
struct Recording {
    inner: MockBackend,
    seen: Mutex<Vec<ImageInput>>,
}

impl VlmBackend for Recording {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        self.seen.lock().unwrap().push(request.image.clone());
        self.inner.complete(request)
    }
    fn name(&self) -> &str {
        "recording"
    }
}

#[test]
fn grayscale_ablation_submits_zero_saturation_pixels() {
    let backend = Recording {
        inner: MockBackend::shipped(),
        seen: Mutex::new(Vec::new()),
    };
    let opts = EvalOptions {
        grayscale: true,
        ..EvalOptions::default()
    };
    let res = run(fixtures().join("mini-set"), &backend, &Resources::shipped(), &opts).unwrap();
    assert!(res.grayscale);
    assert!(res.to_json().contains("\"grayscale\": true"));
    let seen = backend.seen.lock().unwrap();
    assert_eq!(seen.len(), 16);
    for img in seen.iter() {
        let rgb = img.decode().unwrap();
        for px in rgb.pixels().step_by(7) {
            assert_eq!(Color::from_channels(px.0).hsv().saturation, 0.0);
        }
    }
}

/// Fails on one specific image id and otherwise defers to the mock.
struct FlakyOn {
    inner: MockBackend,
    bad_digest: String,
}

impl VlmBackend for FlakyOn {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        if request.image.digest() == self.bad_digest {
            return Err(Error::Backend {
                kind: empathy_core::error::BackendErrorKind::Transport,
                attempts: 3,
                message: "connection refused".into(),
            });
        }
        self.inner.complete(request)
    }
    fn name(&self) -> &str {
        "flaky"
    }
}

#[test]
fn failing_image_is_excluded_and_counted() {
    let ds = ingest(fixtures().join("mini-set")).unwrap();
    let backend = FlakyOn {
        inner: MockBackend::shipped(),
        bad_digest: ds.images[3].image.digest(),
    };
    let res = evaluate(&ds, &backend, &Resources::shipped(), &EvalOptions::default());
    assert_eq!(res.aggregates.evaluated, 15);
    assert_eq!(res.aggregates.failed, 1);
    assert_eq!(res.failures[0].id, ds.images[3].id);
    assert_eq!(res.aggregates.confusion.iter().flatten().sum::<u32>(), 15);
}

#[test]
fn dominant_colors_match_brute_force_histogram() {
    for name in ["fear.jpg", "excitement.jpg", "contentment.jpg", "mini-set/awe_01.jpg"] {
        let img = ImageInput::from_file(fixtures().join(name), ImageSource::File).unwrap();
        let rgb = img.decode().unwrap();
        let mut bins = vec![(0u64, [0u64; 3]); 512];
        for px in rgb.pixels() {
            let [r, g, b] = px.0;
            let i = (r as usize / 32) * 64 + (g as usize / 32) * 8 + b as usize / 32;
            bins[i].0 += 1;
            for c in 0..3 {
                bins[i].1[c] += u64::from(px.0[c]);
            }
        }
        let mut order: Vec<usize> = (0..512).filter(|&i| bins[i].0 > 0).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(bins[i].0), i));
        let expected: Vec<(Color, u64)> = order
            .into_iter()
            .take(5)
            .map(|i| {
                let (n, s) = bins[i];
                let mean = |v: u64| (v as f64 / n as f64).round() as u8;
                (Color::new(mean(s[0]), mean(s[1]), mean(s[2])), n)
            })
            .collect();
        for exec in [Parallelism::Sequential, Parallelism::Parallel] {
            assert_eq!(dominant_colors_with(&img, 5, exec).unwrap(), expected, "{name}");
        }
    }
}

#[test]
fn empty_directory_is_a_dataset_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("notes.txt"), "nothing here").unwrap();
    assert!(matches!(ingest(dir.path()), Err(Error::Dataset(_))));
}

#[test]
fn emoset_tree_layout_and_bad_entries() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixtures().join("mini-set");
    for (sub, id) in [("fear", "fear_01"), ("awe", "awe_02")] {
        std::fs::create_dir_all(dir.path().join("image").join(sub)).unwrap();
        std::fs::create_dir_all(dir.path().join("annotation").join(sub)).unwrap();
        std::fs::copy(src.join(format!("{id}.jpg")), dir.path().join(format!("image/{sub}/{id}.jpg"))).unwrap();
        std::fs::write(
            dir.path().join(format!("annotation/{sub}/{id}.json")),
            format!("{{\"emotion\": \"{}\", \"brightness\": 0.4}}", sub.to_uppercase()),
        )
        .unwrap();
    }
    std::fs::write(dir.path().join("annotation/fear/orphan.json"), "{\"emotion\": \"fear\"}").unwrap();
    std::fs::write(dir.path().join("annotation/awe/odd.json"), "{\"emotion\": \"boredom\"}").unwrap();
    std::fs::copy(src.join("awe_01.jpg"), dir.path().join("image/awe/odd.jpg")).unwrap();
    let ds = ingest(dir.path()).unwrap();
    let labels: Vec<_> = ds.images.iter().map(|i| (i.id.as_str(), i.label)).collect();
    assert_eq!(labels, [("awe/awe_02", AffectLabel::Awe), ("fear/fear_01", AffectLabel::Fear)]);
    assert_eq!(ds.skipped.len(), 2);
}

#[test]
fn mimicry_threshold_default() {
    assert_eq!(DEFAULT_MIMICRY_THRESHOLD, 0.12);
}
