//! Seeded stand-in glyph corpora: every label gets its own 5x5 block
//! pattern, and variants differ in stroke darkness and block jitter.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GlyphCorpus, GlyphNormalization, Lexicon, Result};
use crate::imaging::GrayRaster;

const GRID: usize = 5;

type Pattern = [[bool; GRID]; GRID];

fn spans_grid(p: &Pattern) -> bool {
    let row = |r: usize| p[r].iter().any(|&b| b);
    let col = |c: usize| p.iter().any(|r| r[c]);
    row(0) && row(GRID - 1) && col(0) && col(GRID - 1)
}

fn patterns(count: usize, rng: &mut ChaCha8Rng) -> Vec<Pattern> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut p = [[false; GRID]; GRID];
        for cell in p.iter_mut().flatten() {
            *cell = rng.gen_bool(0.45);
        }
        let lit = p.iter().flatten().filter(|&&b| b).count();
        if lit >= 8 && spans_grid(&p) && seen.insert(p) {
            out.push(p);
        }
    }
    out
}

fn draw(p: &Pattern, cell: usize, rng: &mut ChaCha8Rng) -> GrayRaster {
    let side = GRID * cell;
    let ink = rng.gen_range(0.0..0.3);
    let mut px = vec![1.0; side * side];
    for (r, row) in p.iter().enumerate() {
        for (c, &on) in row.iter().enumerate() {
            if !on {
                continue;
            }
            let jitter = cell / 4;
            let (y0, x0) = (r * cell + rng.gen_range(0..=jitter), c * cell + rng.gen_range(0..=jitter));
            let (y1, x1) = ((r + 1) * cell - rng.gen_range(0..=jitter), (c + 1) * cell - rng.gen_range(0..=jitter));
            for y in y0..y1 {
                for x in x0..x1 {
                    px[y * side + x] = ink;
                }
            }
        }
    }
    GrayRaster::new(side, side, px).expect("valid raster")
}

/// `variants` drawings for each label, normalized like a loaded corpus.
pub fn toy_corpus<S: AsRef<str>>(
    labels: &[S],
    variants: usize,
    norm: &GlyphNormalization,
    seed: u64,
) -> Result<GlyphCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pats = patterns(labels.len(), &mut rng);
    let cell = (norm.width.max(norm.height) / GRID).max(4);
    let mut entries = BTreeMap::new();
    for (label, p) in labels.iter().zip(&pats) {
        let glyphs = (0..variants.max(1))
            .map(|_| norm.apply(&draw(p, cell, &mut rng)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        entries.insert(label.as_ref().to_string(), glyphs);
    }
    GlyphCorpus::new(entries)
}

/// `count` distinct words of `min_len..=max_len` labels each.
pub fn toy_lexicon<S: AsRef<str>>(
    labels: &[S],
    count: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<Lexicon> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut words = Vec::new();
    let mut attempts = 0;
    while words.len() < count && attempts < count * 1000 {
        attempts += 1;
        let len = rng.gen_range(min_len.max(1)..=max_len.max(min_len.max(1)));
        let w: String = (0..len)
            .map(|_| labels.choose(&mut rng).expect("labels").as_ref())
            .collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    Lexicon::new(words)
}
