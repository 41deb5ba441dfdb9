use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{read_utf8, Result, SynthError};
use crate::imaging::{self, GrayRaster, InkThreshold};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub label: String,
}

/// A scanned page and the word boxes drawn on it.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedPage {
    pub page: String,
    pub words: Vec<WordBox>,
}

/// Cuts every annotated word out of its page image, converts it to
/// grayscale and tight-crops it. Relative page paths resolve against
/// `image_root`.
pub fn ingest_annotated_pages(
    json_path: &Path,
    image_root: &Path,
) -> Result<Vec<(GrayRaster, String)>> {
    let text = read_utf8(json_path)?;
    let raw: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| SynthError::MalformedAnnotation {
            record: json_path.display().to_string(),
            reason: e.to_string(),
        })?;
    let mut pages = Vec::with_capacity(raw.len());
    for (i, value) in raw.into_iter().enumerate() {
        let page: AnnotatedPage =
            serde_json::from_value(value.clone()).map_err(|e| SynthError::MalformedAnnotation {
                record: format!("#{i} {value}"),
                reason: e.to_string(),
            })?;
        for (j, b) in page.words.iter().enumerate() {
            if b.w <= 0 || b.h <= 0 || b.label.trim().is_empty() {
                return Err(SynthError::MalformedAnnotation {
                    record: format!("#{i} word #{j} in {}", page.page),
                    reason: "boxes need positive size and a non-empty label".into(),
                });
            }
        }
        pages.push(page);
    }

    let mut cache: HashMap<String, GrayRaster> = HashMap::new();
    let mut out = Vec::new();
    for page in &pages {
        if !cache.contains_key(&page.page) {
            let img = load_page(&image_root.join(&page.page))?;
            cache.insert(page.page.clone(), img);
        }
        let img = &cache[&page.page];
        for b in &page.words {
            let fits = b.x >= 0
                && b.y >= 0
                && b.x + b.w <= img.width() as i64
                && b.y + b.h <= img.height() as i64;
            if !fits {
                return Err(SynthError::BoxOutOfBounds {
                    page: page.page.clone(),
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                    width: img.width(),
                    height: img.height(),
                });
            }
            let crop = img.crop(b.x as usize, b.y as usize, b.w as usize, b.h as usize)?;
            let word = imaging::tight_crop(&crop, InkThreshold::default())?;
            out.push((word, b.label.clone()));
        }
    }
    Ok(out)
}

/// Color pages go through the luminance conversion.
fn load_page(path: &Path) -> Result<GrayRaster> {
    let unreadable = |source| SynthError::UnreadableImage {
        path: path.to_path_buf(),
        source,
    };
    GrayRaster::load_png(path).map_err(unreadable)
}
