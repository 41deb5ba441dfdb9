//! Lexicon-driven synthesis of handwritten-word images from glyph images.
//!
//! A word is segmented into glyph labels, one handwritten variant is drawn
//! per label, and the glyph rasters are joined left to right either edge to
//! edge or with a fixed number of overlapping columns.

mod manifest;
mod pages;
pub mod toy;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, GrayRaster, ImagingError, InkThreshold};

pub use manifest::{DatasetManifest, ManifestRecord, ALPHABET_FILE, GRAPHEMES_FILE, MANIFEST_FILE};
pub use pages::{ingest_annotated_pages, AnnotatedPage, WordBox};

/// Overlap used for overlapped words unless configured otherwise.
pub const DEFAULT_OVERLAP_PX: usize = 4;
pub const DEFAULT_GLYPH_SIZE: usize = 128;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("corpus directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("cannot use glyph image {path}")]
    UnreadableImage {
        path: PathBuf,
        #[source]
        source: ImagingError,
    },
    #[error("glyph corpus is empty")]
    EmptyCorpus,
    #[error("{0} is not valid UTF-8")]
    NotUtf8(PathBuf),
    #[error("lexicon has no words")]
    EmptyLexicon,
    #[error("word {word:?} has no glyph label at codepoint {position}")]
    Uncoverable { word: String, position: usize },
    #[error("label {0:?} not in corpus")]
    UnknownLabel(String),
    #[error("no lexicon word can be built from the corpus")]
    NoCoverableWords,
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("I/O on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("annotation record {record}: {reason}")]
    MalformedAnnotation { record: String, reason: String },
    #[error("box ({x},{y},{w},{h}) outside {width}x{height} page {page}")]
    BoxOutOfBounds {
        page: String,
        x: i64,
        y: i64,
        w: i64,
        h: i64,
        width: usize,
        height: usize,
    },
    #[error("manifest {path} line {line}: {reason}")]
    MalformedManifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Size every glyph is normalized to, and the ink cutoff used for cropping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlyphNormalization {
    pub width: usize,
    pub height: usize,
    pub threshold: InkThreshold,
}

impl Default for GlyphNormalization {
    fn default() -> Self {
        Self {
            width: DEFAULT_GLYPH_SIZE,
            height: DEFAULT_GLYPH_SIZE,
            threshold: InkThreshold::default(),
        }
    }
}

impl GlyphNormalization {
    /// Tight crop, then resize to the glyph size.
    pub fn apply(&self, img: &GrayRaster) -> imaging::Result<GrayRaster> {
        let cropped = imaging::tight_crop(img, self.threshold)?;
        imaging::resize(&cropped, self.width, self.height)
    }
}

/// Handwritten variants per glyph label, all of one size.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphCorpus {
    entries: BTreeMap<String, Vec<GrayRaster>>,
    longest_label: usize,
}

impl GlyphCorpus {
    pub fn new(entries: BTreeMap<String, Vec<GrayRaster>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(SynthError::EmptyCorpus);
        }
        let mut size = None;
        for (label, variants) in &entries {
            if label.is_empty() || variants.is_empty() {
                return Err(SynthError::EmptyCorpus);
            }
            for v in variants {
                let dims = (v.width(), v.height());
                if *size.get_or_insert(dims) != dims {
                    return Err(SynthError::Imaging(ImagingError::HeightMismatch {
                        left: size.unwrap().1,
                        right: dims.1,
                    }));
                }
            }
        }
        let longest_label = entries.keys().map(|k| k.chars().count()).max().unwrap_or(0);
        Ok(Self {
            entries,
            longest_label,
        })
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn variants(&self, label: &str) -> Option<&[GrayRaster]> {
        self.entries.get(label).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn glyph_size(&self) -> (usize, usize) {
        let g = &self.entries.values().next().expect("non-empty")[0];
        (g.width(), g.height())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.contains_key(label)
    }

    /// Writes `<root>/<label>/<id>.png`.
    pub fn save_dir(&self, root: &Path) -> Result<()> {
        for (label, variants) in &self.entries {
            let dir = root.join(label);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            for (i, v) in variants.iter().enumerate() {
                v.save_png(&dir.join(format!("{i:04}.png")))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct CorpusLine {
    path: String,
    label: String,
}

/// `(label, path)` for every glyph image under `root`: the entries of
/// `<root>/corpus.jsonl` when present, otherwise `<root>/<label>/<id>.png`.
pub fn list_corpus_files(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !root.is_dir() {
        return Err(SynthError::MissingDirectory(root.to_path_buf()));
    }
    let mut files = Vec::new();
    let listing = root.join("corpus.jsonl");
    if listing.is_file() {
        let text = read_utf8(&listing)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusLine =
                serde_json::from_str(line).map_err(|e| SynthError::MalformedManifest {
                    path: listing.clone(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            files.push((rec.label, root.join(rec.path)));
        }
    } else {
        let dirs = read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir());
        for dir in dirs {
            let label = dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| SynthError::NotUtf8(dir.clone()))?
                .to_string();
            for file in read_dir_sorted(&dir)? {
                if file.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                    files.push((label.clone(), file));
                }
            }
        }
    }
    Ok(files)
}

fn load_glyph(path: PathBuf, norm: &GlyphNormalization) -> Result<GrayRaster> {
    GrayRaster::load_png(&path)
        .and_then(|img| norm.apply(&img))
        .map_err(|source| SynthError::UnreadableImage { path, source })
}

/// Loads and normalizes every glyph of a corpus directory (see
/// [`list_corpus_files`]); any unusable image is an error.
pub fn load_glyph_corpus(root: &Path, norm: &GlyphNormalization) -> Result<GlyphCorpus> {
    let loaded: Vec<(String, GrayRaster)> = list_corpus_files(root)?
        .into_par_iter()
        .map(|(label, path)| Ok((label, load_glyph(path, norm)?)))
        .collect::<Result<_>>()?;
    let mut entries: BTreeMap<String, Vec<GrayRaster>> = BTreeMap::new();
    for (label, glyph) in loaded {
        entries.entry(label).or_default().push(glyph);
    }
    GlyphCorpus::new(entries)
}

/// Outcome of [`preprocess_corpus`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PreprocessSummary {
    pub processed: usize,
    pub per_label: BTreeMap<String, usize>,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

/// Normalizes every glyph under `input` and writes
/// `<output>/<label>/<name>.png`. Unusable images are skipped with a warning,
/// or abort before anything is written when `strict` is set.
pub fn preprocess_corpus(
    input: &Path,
    output: &Path,
    norm: &GlyphNormalization,
    strict: bool,
) -> Result<PreprocessSummary> {
    let files = list_corpus_files(input)?;
    let results: Vec<(String, PathBuf, Result<GrayRaster>)> = files
        .into_par_iter()
        .map(|(label, path)| {
            let glyph = load_glyph(path.clone(), norm);
            (label, path, glyph)
        })
        .collect();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (label, path, glyph) in results {
        match glyph {
            Ok(g) => kept.push((label, path, g)),
            Err(e) if strict => return Err(e),
            Err(e) => {
                let reason = match &e {
                    SynthError::UnreadableImage { source, .. } => source.to_string(),
                    other => other.to_string(),
                };
                warn!("skipping {}: {reason}", path.display());
                skipped.push(SkippedFile {
                    path: path.display().to_string(),
                    reason,
                });
            }
        }
    }
    if kept.is_empty() {
        return Err(SynthError::EmptyCorpus);
    }
    let mut per_label: BTreeMap<String, usize> = BTreeMap::new();
    for (label, path, glyph) in &kept {
        let n = per_label.entry(label.clone()).or_default();
        let dir = output.join(label);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("glyph");
        glyph.save_png(&dir.join(format!("{n:04}_{stem}.png")))?;
        *n += 1;
    }
    Ok(PreprocessSummary {
        processed: kept.len(),
        per_label,
        skipped,
    })
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

pub(crate) fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    String::from_utf8(bytes).map_err(|_| SynthError::NotUtf8(path.to_path_buf()))
}

/// Unique words in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<String>,
}

impl Lexicon {
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for w in words {
            let w = w.as_ref().trim();
            if !w.is_empty() && seen.insert(w.to_string()) {
                out.push(w.to_string());
            }
        }
        if out.is_empty() {
            return Err(SynthError::EmptyLexicon);
        }
        Ok(Self { words: out })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// One word per line; blank lines skipped, duplicates dropped.
pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    Lexicon::new(read_utf8(path)?.lines())
}

/// A word and the glyph labels that spell it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpec {
    pub transcript: String,
    pub glyph_labels: Vec<String>,
}

/// Greedy longest-match segmentation of `word` into corpus labels.
pub fn decompose_word(word: &str, corpus: &GlyphCorpus) -> Result<WordSpec> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return Err(SynthError::Uncoverable {
            word: String::new(),
            position: 0,
        });
    }
    let mut labels = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        let max = corpus.longest_label.min(chars.len() - pos);
        let label = (1..=max)
            .rev()
            .map(|len| chars[pos..pos + len].iter().collect::<String>())
            .find(|piece| corpus.contains(piece))
            .ok_or_else(|| SynthError::Uncoverable {
                word: word.to_string(),
                position: pos,
            })?;
        pos += label.chars().count();
        labels.push(label);
    }
    Ok(WordSpec {
        transcript: word.to_string(),
        glyph_labels: labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinMode {
    NonOverlapped,
    Overlapped,
}

impl JoinMode {
    pub fn as_str(self) -> &'static str {
        match self {
            JoinMode::NonOverlapped => "non_overlapped",
            JoinMode::Overlapped => "overlapped",
        }
    }
}

/// How neighbouring glyphs are joined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Join {
    /// Edge to edge.
    NonOverlapped,
    /// The right glyph's first `n` columns lie over the left glyph's last
    /// `n`; the darker pixel wins.
    Overlapped(usize),
}

impl Join {
    pub fn mode(self) -> JoinMode {
        match self {
            Join::NonOverlapped => JoinMode::NonOverlapped,
            Join::Overlapped(_) => JoinMode::Overlapped,
        }
    }

    pub fn overlap_px(self) -> usize {
        match self {
            Join::NonOverlapped => 0,
            Join::Overlapped(n) => n,
        }
    }

    pub fn overlapped() -> Self {
        Join::Overlapped(DEFAULT_OVERLAP_PX)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: GrayRaster,
    pub transcript: String,
    pub mode: JoinMode,
    pub overlap_px: usize,
    /// Variant index chosen for each glyph label.
    pub glyph_variant_ids: Vec<usize>,
}

/// Draws one variant per label and joins them left to right.
pub fn render_word(
    spec: &WordSpec,
    corpus: &GlyphCorpus,
    join: Join,
    rng_seed: u64,
) -> Result<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ids = Vec::with_capacity(spec.glyph_labels.len());
    let mut image: Option<GrayRaster> = None;
    for label in &spec.glyph_labels {
        let variants = corpus
            .variants(label)
            .ok_or_else(|| SynthError::UnknownLabel(label.clone()))?;
        let id = rng.gen_range(0..variants.len());
        ids.push(id);
        let glyph = &variants[id];
        image = Some(match (image, join) {
            (None, _) => glyph.clone(),
            (Some(acc), Join::NonOverlapped) => imaging::hjoin(&acc, glyph)?,
            (Some(acc), Join::Overlapped(n)) => imaging::hjoin_overlap(&acc, glyph, n)?,
        });
    }
    let image = image.ok_or_else(|| SynthError::Uncoverable {
        word: spec.transcript.clone(),
        position: 0,
    })?;
    Ok(SyntheticSample {
        image,
        transcript: spec.transcript.clone(),
        mode: join.mode(),
        overlap_px: join.overlap_px(),
        glyph_variant_ids: ids,
    })
}

/// Lexicon words split into buildable specs and uncoverable words.
pub fn coverage(lexicon: &Lexicon, corpus: &GlyphCorpus) -> (Vec<WordSpec>, Vec<String>) {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for w in lexicon.words() {
        match decompose_word(w, corpus) {
            Ok(spec) => ok.push(spec),
            Err(_) => skipped.push(w.clone()),
        }
    }
    (ok, skipped)
}

/// Per-sample seeds derived from the dataset seed.
pub fn sample_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Renders `count` samples cycling over the coverable lexicon words and
/// writes `images/NNNNNN.png`, `manifest.jsonl`, `alphabet.json` and
/// `graphemes.json` under `out_dir`.
pub fn generate_dataset(
    lexicon: &Lexicon,
    corpus: &GlyphCorpus,
    join: Join,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(SynthError::ZeroCount);
    }
    let (specs, skipped) = coverage(lexicon, corpus);
    for w in &skipped {
        warn!("skipping word {w:?}: not coverable by the glyph corpus");
    }
    if specs.is_empty() {
        return Err(SynthError::NoCoverableWords);
    }
    let seeds = sample_seeds(seed, count);
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;

    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = &specs[i % specs.len()];
            let sample = render_word(spec, corpus, join, seeds[i])?;
            let rel = format!("images/{i:06}.png");
            sample.image.save_png(&out_dir.join(&rel))?;
            Ok(ManifestRecord {
                image: rel,
                transcript: sample.transcript,
                mode: sample.mode,
                overlap_px: sample.overlap_px,
                seed: seeds[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut graphemes: Vec<String> = specs
        .iter()
        .flat_map(|s| s.glyph_labels.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    graphemes.sort();
    let manifest = DatasetManifest::new(out_dir.to_path_buf(), records)?.with_graphemes(graphemes);
    manifest.save()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn glyph(w: usize, h: usize, v: f64) -> GrayRaster {
        GrayRaster::filled(w, h, v).unwrap()
    }

    fn corpus(labels: &[&str], w: usize) -> GlyphCorpus {
        let mut m = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            m.insert(
                l.to_string(),
                vec![glyph(w, 6, 0.1 * i as f64), glyph(w, 6, 0.05 + 0.1 * i as f64)],
            );
        }
        GlyphCorpus::new(m).unwrap()
    }

    #[test]
    fn decomposition_prefers_longest_label() {
        let c = corpus(&["a", "b", "ab"], 4);
        assert_eq!(decompose_word("ab", &c).unwrap().glyph_labels, vec!["ab"]);
        let c = corpus(&["a", "b"], 4);
        assert_eq!(decompose_word("ab", &c).unwrap().glyph_labels, vec!["a", "b"]);
        assert!(matches!(
            decompose_word("ax", &c),
            Err(SynthError::Uncoverable { position: 1, .. })
        ));
    }

    #[test]
    fn decomposition_handles_multi_codepoint_labels() {
        // root + vowel sign, as in Bengali "কা"
        let c = corpus(&["ক", "কা", "ম"], 4);
        let spec = decompose_word("কাম", &c).unwrap();
        assert_eq!(spec.glyph_labels, vec!["কা", "ম"]);
        assert_eq!(spec.glyph_labels.concat(), spec.transcript);
    }

    #[test]
    fn render_widths() {
        let c = corpus(&["a", "b", "c"], 128);
        let spec = decompose_word("abc", &c).unwrap();
        let plain = render_word(&spec, &c, Join::NonOverlapped, 1).unwrap();
        assert_eq!(plain.image.width(), 384);
        assert_eq!(plain.overlap_px, 0);
        let over = render_word(&spec, &c, Join::overlapped(), 1).unwrap();
        assert_eq!(over.image.width(), 3 * 128 - 2 * 4);
        assert_eq!(over.mode, JoinMode::Overlapped);
        assert_eq!(plain.glyph_variant_ids, over.glyph_variant_ids);
        assert_eq!(render_word(&spec, &c, Join::overlapped(), 1).unwrap(), over);
    }

    #[test]
    fn render_errors() {
        let c = corpus(&["a"], 4);
        let spec = WordSpec {
            transcript: "z".into(),
            glyph_labels: vec!["z".into()],
        };
        assert!(matches!(
            render_word(&spec, &c, Join::NonOverlapped, 0),
            Err(SynthError::UnknownLabel(_))
        ));
        let spec = decompose_word("aa", &c).unwrap();
        assert!(matches!(
            render_word(&spec, &c, Join::Overlapped(4), 0),
            Err(SynthError::Imaging(ImagingError::OverlapTooLarge { .. }))
        ));
    }

    #[test]
    fn lexicon_dedup_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.txt");
        fs::write(&p, "ab\ncd\nab\n\n").unwrap();
        assert_eq!(load_lexicon(&p).unwrap().words(), &["ab", "cd"]);
        fs::write(&p, "\n  \n\n").unwrap();
        assert!(matches!(load_lexicon(&p), Err(SynthError::EmptyLexicon)));
        fs::write(&p, [0xff, 0xfe, b'\n']).unwrap();
        assert!(matches!(load_lexicon(&p), Err(SynthError::NotUtf8(_))));
    }

    #[test]
    fn corpus_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        for label in ["a", "b"] {
            let d = dir.path().join(label);
            fs::create_dir_all(&d).unwrap();
            for i in 0..2 {
                let mut px = vec![1.0; 100];
                px[i * 11 + 22] = 0.0;
                px[77] = 0.2;
                GrayRaster::new(10, 10, px).unwrap().save_png(&d.join(format!("{i}.png"))).unwrap();
            }
        }
        let norm = GlyphNormalization {
            width: 12,
            height: 9,
            ..Default::default()
        };
        let c = load_glyph_corpus(dir.path(), &norm).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.variants("a").unwrap().len(), 2);
        for l in ["a", "b"] {
            for v in c.variants(l).unwrap() {
                assert_eq!((v.width(), v.height()), (12, 9));
            }
        }
    }

    #[test]
    fn corpus_jsonl_listing() {
        let dir = tempfile::tempdir().unwrap();
        let mut px = vec![1.0; 16];
        px[5] = 0.0;
        GrayRaster::new(4, 4, px).unwrap().save_png(&dir.path().join("g1.png")).unwrap();
        fs::write(
            dir.path().join("corpus.jsonl"),
            "{\"path\": \"g1.png\", \"label\": \"ক\"}\n",
        )
        .unwrap();
        let c = load_glyph_corpus(dir.path(), &GlyphNormalization::default()).unwrap();
        assert_eq!(c.labels().collect::<Vec<_>>(), vec!["ক"]);
        assert_eq!(c.glyph_size(), (128, 128));
    }

    #[test]
    fn corpus_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_glyph_corpus(&dir.path().join("nope"), &GlyphNormalization::default()),
            Err(SynthError::MissingDirectory(_))
        ));
        assert!(matches!(
            load_glyph_corpus(dir.path(), &GlyphNormalization::default()),
            Err(SynthError::EmptyCorpus)
        ));
        let d = dir.path().join("a");
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("broken.png"), b"not a png").unwrap();
        assert!(matches!(
            load_glyph_corpus(dir.path(), &GlyphNormalization::default()),
            Err(SynthError::UnreadableImage { .. })
        ));
    }

    #[test]
    fn preprocessing_skips_or_aborts_on_blank_glyphs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        let d = input.join("a");
        fs::create_dir_all(&d).unwrap();
        let mut px = vec![1.0; 64];
        px[9] = 0.0;
        px[30] = 0.4;
        GrayRaster::new(8, 8, px).unwrap().save_png(&d.join("ok.png")).unwrap();
        GrayRaster::filled(8, 8, 1.0).unwrap().save_png(&d.join("blank.png")).unwrap();
        let norm = GlyphNormalization::default();

        let strict_out = dir.path().join("strict");
        assert!(matches!(
            preprocess_corpus(&input, &strict_out, &norm, true),
            Err(SynthError::UnreadableImage {
                source: ImagingError::EmptyInk { .. },
                ..
            })
        ));
        assert!(!strict_out.exists());

        let out = dir.path().join("out");
        let summary = preprocess_corpus(&input, &out, &norm, false).unwrap();
        assert_eq!(summary.processed, 1);
        assert_eq!(summary.skipped.len(), 1);
        assert_eq!(summary.per_label["a"], 1);
        let written = GrayRaster::load_png(&out.join("a/0000_ok.png")).unwrap();
        assert_eq!((written.width(), written.height()), (128, 128));
    }

    #[test]
    fn generation_counts_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(&["a", "b"], 5);
        let lex = Lexicon::new(["ab", "xa", "ba", "b"]).unwrap();
        let m = generate_dataset(&lex, &c, Join::Overlapped(2), 10, 3, dir.path()).unwrap();
        assert_eq!(m.records().len(), 10);
        let pngs = fs::read_dir(dir.path().join("images")).unwrap().count();
        assert_eq!(pngs, 10);
        let words: Vec<&str> = m.records().iter().map(|r| r.transcript.as_str()).collect();
        assert_eq!(&words[..4], &["ab", "ba", "b", "ab"]);
        assert!(m.records().iter().all(|r| r.overlap_px == 2));

        let none = Lexicon::new(["xyz"]).unwrap();
        assert!(matches!(
            generate_dataset(&none, &c, Join::NonOverlapped, 3, 0, dir.path()),
            Err(SynthError::NoCoverableWords)
        ));
    }
}
