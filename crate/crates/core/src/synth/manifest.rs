use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, read_utf8, JoinMode, Result, SynthError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ALPHABET_FILE: &str = "alphabet.json";
pub const GRAPHEMES_FILE: &str = "graphemes.json";

/// One generated sample; `image` is relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image: String,
    pub transcript: String,
    pub mode: JoinMode,
    pub overlap_px: usize,
    pub seed: u64,
}

/// Records of a generated dataset with the codepoint alphabet of its
/// transcripts.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    records: Vec<ManifestRecord>,
    alphabet: Vec<char>,
    graphemes: Vec<String>,
}

impl DatasetManifest {
    pub fn new(root: PathBuf, records: Vec<ManifestRecord>) -> Result<Self> {
        let alphabet: Vec<char> = records
            .iter()
            .flat_map(|r| r.transcript.chars())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            root,
            records,
            alphabet,
            graphemes: Vec::new(),
        })
    }

    /// Attaches the glyph labels used to build the transcripts.
    pub fn with_graphemes(mut self, graphemes: Vec<String>) -> Self {
        self.graphemes = graphemes;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    /// Sorted distinct codepoints of all transcripts.
    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn graphemes(&self) -> &[String] {
        &self.graphemes
    }

    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.image)
    }

    /// Same directory, a subset of records.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        let mut out = Self::new(self.root.clone(), records).expect("infallible");
        out.graphemes = self.graphemes.clone();
        out
    }

    pub fn save(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let path = self.root.join(MANIFEST_FILE);
        let mut buf = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut buf, r).expect("serializable");
            buf.push(b'\n');
        }
        write_file(&path, &buf)?;
        let alphabet: Vec<String> = self.alphabet.iter().map(|c| c.to_string()).collect();
        write_file(
            &self.root.join(ALPHABET_FILE),
            &serde_json::to_vec(&alphabet).expect("serializable"),
        )?;
        write_file(
            &self.root.join(GRAPHEMES_FILE),
            &serde_json::to_vec(&self.graphemes).expect("serializable"),
        )
    }

    /// Loads `manifest.jsonl` from a dataset directory, or a manifest file
    /// given directly.
    pub fn load(path: &Path) -> Result<Self> {
        let (root, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (root, path.to_path_buf())
        };
        let text = read_utf8(&file)?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord =
                serde_json::from_str(line).map_err(|e| SynthError::MalformedManifest {
                    path: file.clone(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            records.push(rec);
        }
        let graphemes_path = root.join(GRAPHEMES_FILE);
        let graphemes = if graphemes_path.is_file() {
            serde_json::from_str(&read_utf8(&graphemes_path)?).map_err(|e| {
                SynthError::MalformedManifest {
                    path: graphemes_path.clone(),
                    line: 1,
                    reason: e.to_string(),
                }
            })?
        } else {
            Vec::new()
        };
        Ok(Self::new(root, records)?.with_graphemes(graphemes))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, t: &str) -> ManifestRecord {
        ManifestRecord {
            image: format!("images/{i:06}.png"),
            transcript: t.into(),
            mode: JoinMode::Overlapped,
            overlap_px: 4,
            seed: i as u64 * 7,
        }
    }

    #[test]
    fn alphabet_is_union_of_transcripts() {
        let m = DatasetManifest::new("x".into(), vec![rec(0, "cab"), rec(1, "bd")]).unwrap();
        assert_eq!(m.alphabet(), &['a', 'b', 'c', 'd']);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(dir.path().into(), vec![rec(0, "কাম"), rec(1, "ab")])
            .unwrap()
            .with_graphemes(vec!["a".into(), "b".into(), "কা".into(), "ম".into()]);
        m.save().unwrap();
        let back = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        let line = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        assert_eq!(v["mode"], "overlapped");
        let alpha: Vec<String> =
            serde_json::from_slice(&fs::read(dir.path().join(ALPHABET_FILE)).unwrap()).unwrap();
        assert_eq!(alpha.len(), m.alphabet().len());
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{\"image\": 3}\n").unwrap();
        assert!(matches!(
            DatasetManifest::load(dir.path()),
            Err(SynthError::MalformedManifest { line: 1, .. })
        ));
    }
}
