use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use glyphforge::imaging::GrayRaster;
use glyphforge::synth::{toy, GlyphNormalization};
use serde_json::Value;
use tempfile::TempDir;

fn glyphforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glyphforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = glyphforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Raw 40px toy glyphs for labels a-d, two variants each, and a lexicon
    /// with one uncoverable word.
    fn new() -> Self {
        Self::with_variants(2)
    }

    fn with_variants(variants: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let norm = GlyphNormalization {
            width: 40,
            height: 40,
            ..Default::default()
        };
        toy::toy_corpus(&["a", "b", "c", "d"], variants, &norm, 9)
            .unwrap()
            .save_dir(&dir.path().join("raw"))
            .unwrap();
        fs::write(dir.path().join("lex.txt"), "ab\nba\ncad\nzz\nab\n").unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn generate(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let (lex, raw) = (self.path("lex.txt"), self.path("raw"));
        let mut args = vec![
            "generate", "--lexicon", p(&lex), "--corpus", p(&raw), "--glyph-size", "32", "--out",
            p(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

#[test]
fn preprocess_writes_normalized_glyphs() {
    let f = Fixture::new();
    let input = f.path("four");
    for (i, l) in ["a", "a", "b", "c"].iter().enumerate() {
        let src = f.path(&format!("raw/{l}/{:04}.png", i % 2));
        fs::create_dir_all(input.join(l)).unwrap();
        fs::copy(src, input.join(l).join(format!("{i}.png"))).unwrap();
    }
    let out = f.path("pre");
    let stdout = ok(&["preprocess", "--input", p(&input), "--out", p(&out)]);
    assert!(stdout.contains("processed 4 glyphs"), "{stdout}");
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["processed"], 4);
    let mut n = 0;
    for label in ["a", "b", "c"] {
        for e in fs::read_dir(out.join(label)).unwrap() {
            let g = GrayRaster::load_png(&e.unwrap().path()).unwrap();
            assert_eq!((g.width(), g.height()), (128, 128));
            n += 1;
        }
    }
    assert_eq!(n, 4);
}

#[test]
fn preprocess_blank_glyph_skipped_or_fatal_when_strict() {
    let f = Fixture::new();
    GrayRaster::filled(30, 30, 1.0)
        .unwrap()
        .save_png(&f.path("raw/a/blank.png"))
        .unwrap();
    let out = f.path("pre");
    let stdout = ok(&["preprocess", "--input", p(&f.path("raw")), "--out", p(&out)]);
    assert!(stdout.contains("skipped 1"), "{stdout}");
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["skipped"][0]["reason"].as_str().unwrap().contains("no ink"));

    let strict = f.path("strict");
    let r = glyphforge(&["preprocess", "--strict", "--input", p(&f.path("raw")), "--out", p(&strict)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!strict.exists());
}

#[test]
fn generate_overlapped_dataset_is_deterministic() {
    let f = Fixture::new();
    let args = ["--mode", "overlapped", "--overlap", "4", "--count", "100", "--seed", "7"];
    let a = f.generate("a", &args);
    let b = f.generate("b", &args);
    assert_eq!(fs::read_dir(a.join("images")).unwrap().count(), 100);
    let manifest = fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest, fs::read_to_string(b.join("manifest.jsonl")).unwrap());
    assert_eq!(manifest.lines().count(), 100);
    let first: Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    assert_eq!(first["mode"], "overlapped");
    assert_eq!(first["overlap_px"], 4);
    let alphabet: Vec<String> = serde_json::from_str(&fs::read_to_string(a.join("alphabet.json")).unwrap()).unwrap();
    assert_eq!(alphabet, ["a", "b", "c", "d"]);
    for i in [0, 57, 99] {
        let img = format!("images/{i:06}.png");
        assert_eq!(fs::read(a.join(&img)).unwrap(), fs::read(b.join(&img)).unwrap());
    }
}

#[test]
fn generate_both_modes_share_words_and_variants() {
    let f = Fixture::new();
    let out = f.generate("both", &["--mode", "both", "--count", "6", "--seed", "3"]);
    let read = |m: &str| -> Vec<Value> {
        fs::read_to_string(out.join(m).join("manifest.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    let (plain, over) = (read("non_overlapped"), read("overlapped"));
    for (x, y) in plain.iter().zip(&over) {
        assert_eq!(x["transcript"], y["transcript"]);
        assert_eq!(x["seed"], y["seed"]);
        let wx = GrayRaster::load_png(&out.join("non_overlapped").join(x["image"].as_str().unwrap())).unwrap();
        let wy = GrayRaster::load_png(&out.join("overlapped").join(y["image"].as_str().unwrap())).unwrap();
        let glyphs = x["transcript"].as_str().unwrap().chars().count();
        assert_eq!(wx.width(), 32 * glyphs);
        assert_eq!(wy.width(), 32 * glyphs - 4 * (glyphs - 1));
    }
}

#[test]
fn generate_usage_and_coverage_errors() {
    let f = Fixture::new();
    let out = f.path("g");
    let (lex, raw) = (f.path("lex.txt"), f.path("raw"));
    let base = ["generate", "--lexicon", p(&lex), "--corpus", p(&raw), "--out", p(&out)];
    for extra in [
        &["--mode", "non_overlapped", "--overlap", "4"][..],
        &["--mode", "sideways"],
        &["--count", "0"],
        &["--mode", "overlapped", "--overlap", "0"],
    ] {
        let r = glyphforge(&[&base[..], extra].concat());
        assert_eq!(r.status.code(), Some(2), "{extra:?}");
        assert!(!out.exists());
    }
    fs::write(f.path("none.txt"), "xyz\nqq\n").unwrap();
    let none = f.path("none.txt");
    let r = glyphforge(&["generate", "--lexicon", p(&none), "--corpus", p(&raw), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no lexicon word"));
    assert!(!out.exists());
}

#[test]
fn config_file_values_and_overrides() {
    let f = Fixture::new();
    let cfg = f.path("cfg.json");
    fs::write(&cfg, r#"{"count": 5, "seed": 2, "mode": "non_overlapped", "glyph_size": 32}"#).unwrap();
    let (lex, raw) = (f.path("lex.txt"), f.path("raw"));
    let out = f.path("g");
    ok(&["generate", "--config", p(&cfg), "--count", "7", "--lexicon", p(&lex), "--corpus", p(&raw), "--out", p(&out)]);
    let manifest = fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 7);
    assert!(manifest.contains("\"non_overlapped\""));

    fs::write(&cfg, r#"{"cout": 5}"#).unwrap();
    let bad = f.path("bad");
    let r = glyphforge(&["generate", "--config", p(&cfg), "--lexicon", p(&lex), "--corpus", p(&raw), "--out", p(&bad)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!bad.exists());
}

#[test]
fn train_rejects_bad_split_before_writing() {
    let f = Fixture::new();
    let data = f.generate("g", &["--count", "10"]);
    let out = f.path("t");
    for split in ["1.0", "0", "-0.2"] {
        let r = glyphforge(&["train", "--manifest", p(&data), "--split", split, "--out", p(&out)]);
        assert_eq!(r.status.code(), Some(2), "split {split}");
        assert!(!out.exists());
    }
    let r = glyphforge(&["train", "--manifest", p(&data)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn train_is_reproducible_per_seed() {
    let f = Fixture::new();
    let data = f.generate("g", &["--count", "10", "--seed", "4"]);
    let run = |name: &str, seed: &str| {
        let out = f.path(name);
        let stdout = ok(&[
            "train", "--manifest", p(&data), "--model", "tiny", "--epochs", "3", "--batch-size", "3",
            "--seed", seed, "--out", p(&out),
        ]);
        assert!(stdout.contains("final val WER"), "{stdout}");
        (fs::read_to_string(out.join("metrics.jsonl")).unwrap(), fs::read(out.join("last.gfck")).unwrap())
    };
    let (m1, c1) = run("t1", "1");
    let (m2, c2) = run("t2", "1");
    assert_eq!(m1, m2);
    assert_eq!(c1, c2);
    assert_eq!(m1.lines().count(), 3);
    let rec: Value = serde_json::from_str(m1.lines().next().unwrap()).unwrap();
    for key in ["epoch", "train_loss", "val_loss", "val_wer"] {
        assert!(rec.get(key).is_some(), "{key}");
    }
    let (m3, _) = run("t3", "2");
    assert_ne!(m1, m3);
}

#[test]
fn evaluate_reports_alphabet_mismatch() {
    let f = Fixture::new();
    let data = f.generate("g", &["--count", "6"]);
    let model = f.path("t");
    ok(&["train", "--manifest", p(&data), "--model", "tiny", "--epochs", "1", "--out", p(&model)]);

    let other = f.path("other");
    fs::create_dir_all(&other).unwrap();
    fs::write(f.path("lex2.txt"), "ax\n").unwrap();
    let labels = ["a", "x"];
    let norm = GlyphNormalization { width: 32, height: 32, ..Default::default() };
    toy::toy_corpus(&labels, 1, &norm, 1).unwrap().save_dir(&f.path("raw2")).unwrap();
    let (lex2, raw2) = (f.path("lex2.txt"), f.path("raw2"));
    ok(&["generate", "--lexicon", p(&lex2), "--corpus", p(&raw2), "--count", "2", "--out", p(&other)]);

    let out = f.path("e");
    let ckpt = model.join("best.gfck");
    let r = glyphforge(&["evaluate", "--checkpoint", p(&ckpt), "--manifest", p(&other), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("AlphabetMismatch") && err.contains('x'), "{err}");
    assert!(!out.exists());
}

#[test]
fn predict_rejects_blank_and_unreadable_images() {
    let f = Fixture::new();
    let data = f.generate("g", &["--count", "6"]);
    let model = f.path("t");
    ok(&["train", "--manifest", p(&data), "--model", "tiny", "--epochs", "1", "--out", p(&model)]);
    let ckpt = model.join("best.gfck");
    let blank = f.path("blank.png");
    GrayRaster::filled(40, 20, 1.0).unwrap().save_png(&blank).unwrap();
    let r = glyphforge(&["predict", "--checkpoint", p(&ckpt), "--image", p(&blank)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no ink"));
    let missing = f.path("missing.png");
    let r = glyphforge(&["predict", "--checkpoint", p(&ckpt), "--image", p(&missing)]);
    assert_eq!(r.status.code(), Some(1));
    let r = glyphforge(&["predict", "--checkpoint", p(&blank), "--image", p(&blank)]);
    assert_eq!(r.status.code(), Some(1));
}

/// Trains the reference model until it has memorized a three-word dataset
/// (one glyph variant per label, so every render of a word is identical),
/// then checks evaluate and predict against it.
#[test]
fn memorized_words_are_recognized() {
    let f = Fixture::with_variants(1);
    let data = f.generate("g", &["--mode", "non_overlapped", "--count", "12", "--seed", "7"]);
    let model = f.path("t");
    let stdout = ok(&[
        "train", "--manifest", p(&data), "--epochs", "400", "--batch-size", "4", "--learning-rate",
        "0.003", "--patience", "0", "--target-loss", "0.05", "--seed", "1", "--out", p(&model),
    ]);
    assert!(stdout.contains("TargetReached"), "{stdout}");
    let ckpt = model.join("best.gfck");

    let eval = f.path("e");
    ok(&["evaluate", "--checkpoint", p(&ckpt), "--manifest", p(&data), "--out", p(&eval)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    for key in ["wer", "accuracy", "precision", "recall", "f1", "matched_words", "total_words"] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(report["wer"], 0.0);
    assert_eq!(report["matched_words"], 12);
    assert_eq!(fs::read_to_string(eval.join("samples.jsonl")).unwrap().lines().count(), 12);

    let manifest = fs::read_to_string(data.join("manifest.jsonl")).unwrap();
    let first: Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let image = data.join(first["image"].as_str().unwrap());
    let out1 = ok(&["predict", "--checkpoint", p(&ckpt), "--image", p(&image)]);
    let out2 = ok(&["predict", "--checkpoint", p(&ckpt), "--image", p(&image)]);
    assert_eq!(out1, out2);
    assert_eq!(out1.lines().next().unwrap(), first["transcript"].as_str().unwrap());
    assert!(out1.contains("frames 64"));

    // the same word pasted onto a larger page, cut out again by its box
    let word = GrayRaster::load_png(&image).unwrap();
    let (pw, ph) = (word.width() + 60, word.height() + 50);
    let mut px = vec![1.0; pw * ph];
    for y in 0..word.height() {
        for x in 0..word.width() {
            px[(y + 20) * pw + x + 30] = word.get(x, y);
        }
    }
    GrayRaster::new(pw, ph, px).unwrap().save_png(&f.path("page.png")).unwrap();
    let pages = f.path("pages.json");
    let annotation = serde_json::json!([{
        "page": "page.png",
        "words": [{"x": 25, "y": 15, "w": word.width() + 10, "h": word.height() + 10,
                   "label": first["transcript"]}]
    }]);
    fs::write(&pages, annotation.to_string()).unwrap();
    let eval2 = f.path("e2");
    ok(&["evaluate", "--checkpoint", p(&ckpt), "--pages", p(&pages), "--out", p(&eval2)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(eval2.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["total_words"], 1);
    assert_eq!(report["wer"], 0.0);
}
