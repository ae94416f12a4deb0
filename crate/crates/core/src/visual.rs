//! Glyph rendering, visual feature tables and token length tables.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::vocab::Vocabulary;

pub const CANVAS: usize = 32;
const MIN_CANVAS: usize = 16;
static BUNDLED_FONT: &[u8] = include_bytes!("../assets/DejaVuSans.ttf");
const BUNDLED_FONT_ID: &str = "dejavu-sans";

const HELVETICA_DIRS: [&str; 4] = [
    "/usr/share/fonts",
    "/usr/local/share/fonts",
    "/Library/Fonts",
    "/System/Library/Fonts",
];

pub struct Font {
    id: String,
    inner: fontdue::Font,
}

impl std::fmt::Debug for Font {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Font").field("id", &self.id).finish()
    }
}

impl Font {
    pub fn bundled() -> Self {
        Self::from_bytes(BUNDLED_FONT_ID, BUNDLED_FONT).expect("bundled font parses")
    }

    fn from_bytes(id: &str, bytes: &[u8]) -> Result<Self> {
        let inner = fontdue::Font::from_bytes(bytes, fontdue::FontSettings::default())
            .map_err(|e| Error::FontUnavailable(format!("{id}: {e}")))?;
        Ok(Self {
            id: id.to_string(),
            inner,
        })
    }

    /// `None`, `"default"` or `"dejavu-sans"` give the bundled font;
    /// `"helvetica"` is looked up in the usual system font directories;
    /// anything else is read as a path to a TrueType/OpenType file.
    pub fn resolve(spec: Option<&str>) -> Result<Self> {
        match spec {
            None | Some("default") | Some(BUNDLED_FONT_ID) => Ok(Self::bundled()),
            Some(name) if name.eq_ignore_ascii_case("helvetica") => {
                let path = find_font_file(&HELVETICA_DIRS, "helvetica")
                    .ok_or_else(|| Error::FontUnavailable(name.to_string()))?;
                let bytes =
                    fs::read(&path).map_err(|e| Error::FontUnavailable(format!("{name}: {e}")))?;
                Self::from_bytes("helvetica", &bytes)
            }
            Some(path) => {
                let bytes =
                    fs::read(path).map_err(|e| Error::FontUnavailable(format!("{path}: {e}")))?;
                let id = Path::new(path)
                    .file_stem()
                    .map_or(path.to_string(), |s| s.to_string_lossy().to_lowercase());
                Self::from_bytes(&id, &bytes)
            }
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

fn find_font_file(dirs: &[&str], stem: &str) -> Option<PathBuf> {
    let mut stack: Vec<PathBuf> = dirs.iter().map(PathBuf::from).collect();
    let mut found: Vec<PathBuf> = Vec::new();
    while let Some(dir) = stack.pop() {
        let Ok(entries) = fs::read_dir(&dir) else {
            continue;
        };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
                let lower = name.to_lowercase();
                if lower.starts_with(stem) && (lower.ends_with(".ttf") || lower.ends_with(".otf")) {
                    found.push(p);
                }
            }
        }
    }
    found.sort();
    found.into_iter().next()
}

/// Grayscale raster, row-major, 1.0 = white.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitmap {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Bitmap {
    fn white(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![1.0; height * width],
        }
    }

    /// Pixels darker than mid-gray.
    pub fn ink(&self) -> Vec<bool> {
        self.pixels.iter().map(|&p| p < 0.5).collect()
    }
}

/// Draws `text` centered on a white canvas, shrinking the size so that the
/// whole string fits horizontally.
pub fn render_glyph(text: &str, font: &Font, height: usize, width: usize) -> Result<Bitmap> {
    if height < MIN_CANVAS || width < MIN_CANVAS {
        return Err(Error::CanvasTooSmall(height, width));
    }
    let mut canvas = Bitmap::white(height, width);
    let chars: Vec<char> = text.chars().filter(|c| !c.is_control()).collect();
    if chars.iter().all(|c| c.is_whitespace()) {
        return Ok(canvas);
    }
    let f = &font.inner;
    let base_px = height as f32 * 0.75;
    let advance = |px: f32| -> f32 { chars.iter().map(|&c| f.metrics(c, px).advance_width).sum() };
    let usable = (width - 2) as f32;
    let natural = advance(base_px);
    let px = if natural > usable {
        base_px * usable / natural
    } else {
        base_px
    };
    let (ascent, descent) = match f.horizontal_line_metrics(px) {
        Some(m) => (m.ascent, m.descent),
        None => (px * 0.8, -px * 0.2),
    };
    let baseline = ((height as f32 - (ascent - descent)) / 2.0 + ascent).round() as i64;
    let mut pen = ((width as f32 - advance(px)) / 2.0).max(0.0);
    for &c in &chars {
        let (m, coverage) = f.rasterize(c, px);
        let left = (pen + m.xmin as f32).round() as i64;
        let top = baseline - m.ymin as i64 - m.height as i64;
        for gy in 0..m.height {
            let y = top + gy as i64;
            if y < 0 || y >= height as i64 {
                continue;
            }
            for gx in 0..m.width {
                let x = left + gx as i64;
                if x < 0 || x >= width as i64 {
                    continue;
                }
                let cov = coverage[gy * m.width + gx] as f32 / 255.0;
                let p = &mut canvas.pixels[y as usize * width + x as usize];
                *p = (*p - cov).max(0.0);
            }
        }
        pen += m.advance_width;
    }
    Ok(canvas)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extractor {
    /// The raw bitmap as a vector.
    Flat,
    /// Fixed random convolution filters with ReLU and average pooling.
    Cnn,
}

impl std::str::FromStr for Extractor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flat" => Ok(Extractor::Flat),
            "cnn" => Ok(Extractor::Cnn),
            _ => Err(Error::InvalidConfig(format!("unknown extractor {s:?}"))),
        }
    }
}

const CNN_FILTERS: usize = 8;
const CNN_KERNEL: usize = 5;
const CNN_POOL: usize = 4;
const CNN_SEED: u64 = 0x6c79_7068;

impl Extractor {
    pub fn id(self) -> &'static str {
        match self {
            Extractor::Flat => "flat-v1",
            Extractor::Cnn => "cnn-random-v1",
        }
    }

    fn filters() -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(CNN_SEED);
        (0..CNN_FILTERS * CNN_KERNEL * CNN_KERNEL)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect()
    }
}

fn normalize(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    } else {
        let u = 1.0 / (v.len() as f64).sqrt();
        v.iter_mut().for_each(|x| *x = u as f32);
    }
    v
}

/// Feature vector of a rendered glyph, L2-normalized.
pub fn visual_embed(bitmap: &Bitmap, extractor: Extractor) -> Result<Vec<f32>> {
    match extractor {
        Extractor::Flat => Ok(normalize(bitmap.pixels.clone())),
        Extractor::Cnn => Ok(normalize(cnn_features(bitmap, &Extractor::filters()))),
    }
}

fn cnn_features(b: &Bitmap, filters: &[f32]) -> Vec<f32> {
    let (h, w) = (b.height, b.width);
    let pad = CNN_KERNEL / 2;
    let ink = |y: i64, x: i64| -> f32 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            1.0 - b.pixels[y as usize * w + x as usize]
        }
    };
    let (ph, pw) = (h / CNN_POOL, w / CNN_POOL);
    let mut out = vec![0.0f32; CNN_FILTERS * ph * pw];
    for f in 0..CNN_FILTERS {
        let k = &filters[f * CNN_KERNEL * CNN_KERNEL..(f + 1) * CNN_KERNEL * CNN_KERNEL];
        for y in 0..ph * CNN_POOL {
            for x in 0..pw * CNN_POOL {
                let mut acc = 0.0f32;
                for ky in 0..CNN_KERNEL {
                    for kx in 0..CNN_KERNEL {
                        acc += k[ky * CNN_KERNEL + kx]
                            * ink(
                                y as i64 + ky as i64 - pad as i64,
                                x as i64 + kx as i64 - pad as i64,
                            );
                    }
                }
                out[(f * ph + y / CNN_POOL) * pw + x / CNN_POOL] +=
                    acc.max(0.0) / (CNN_POOL * CNN_POOL) as f32;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualTable {
    /// One row per vocabulary id.
    pub vectors: Array2<f64>,
    pub extractor_id: String,
    pub font_id: String,
}

impl VisualTable {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthTable {
    pub lengths: Vec<u32>,
}

/// Character length of each marker-stripped token; special tokens count 0.
pub fn build_length_table(vocab: &Vocabulary) -> LengthTable {
    let lengths = (0..vocab.len() as u32)
        .map(|id| {
            if vocab.is_special(id) {
                0
            } else {
                vocab.surface(id).chars().count() as u32
            }
        })
        .collect();
    LengthTable { lengths }
}

/// Renders and embeds every token's marker-stripped surface.
pub fn build_visual_table(
    vocab: &Vocabulary,
    font: &Font,
    extractor: Extractor,
    parallelism: Parallelism,
) -> Result<VisualTable> {
    let rows = exec::try_map_range(parallelism, vocab.len(), |id| {
        let bmp = render_glyph(vocab.surface(id as u32), font, CANVAS, CANVAS)?;
        visual_embed(&bmp, extractor)
    })?;
    let dim = rows.first().map_or(0, Vec::len);
    let mut vectors = Array2::zeros((vocab.len(), dim));
    for (mut dst, src) in vectors.rows_mut().into_iter().zip(&rows) {
        dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s as f64);
    }
    Ok(VisualTable {
        vectors,
        extractor_id: extractor.id().to_string(),
        font_id: font.id().to_string(),
    })
}

const CACHE_MAGIC: &[u8; 4] = b"STVT";
const CACHE_VERSION: u32 = 1;

/// Identifies which inputs a cached table was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub vocab_hash: String,
    pub font_id: String,
    pub extractor_id: String,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes both tables: header, row-major `f32` vectors, `i32` lengths,
/// then a SHA-256 of everything before it.
pub fn encode_tables(key: &CacheKey, visual: &VisualTable, lengths: &LengthTable) -> Vec<u8> {
    let (v, d) = visual.vectors.dim();
    let mut out = Vec::with_capacity(64 + v * d * 4 + v * 4);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    put_str(&mut out, &key.vocab_hash);
    put_str(&mut out, &key.font_id);
    put_str(&mut out, &key.extractor_id);
    out.extend_from_slice(&(v as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for x in visual.vectors.iter() {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    for &l in &lengths.lengths {
        out.extend_from_slice(&(l as i32).to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Cache("truncated table cache".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Cache("non-UTF-8 header field".into()))
    }
}

pub fn decode_tables(bytes: &[u8]) -> Result<(CacheKey, VisualTable, LengthTable)> {
    if bytes.len() < 32 + 8 {
        return Err(Error::Cache("table cache too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Cache("table cache checksum mismatch".into()));
    }
    let mut c = Cursor { buf: body, at: 0 };
    if c.take(4)? != CACHE_MAGIC {
        return Err(Error::Cache("not a table cache".into()));
    }
    let version = c.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported cache version {version}")));
    }
    let key = CacheKey {
        vocab_hash: c.string()?,
        font_id: c.string()?,
        extractor_id: c.string()?,
    };
    let v = c.u64()? as usize;
    let d = c.u64()? as usize;
    let floats = c.take(
        v.checked_mul(d)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Cache("table dimensions overflow".into()))?,
    )?;
    let vectors = Array2::from_shape_vec(
        (v, d),
        floats
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
    )
    .map_err(|e| Error::Cache(e.to_string()))?;
    let lengths = c
        .take(v * 4)?
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes(b.try_into().unwrap()).max(0) as u32)
        .collect();
    if c.at != body.len() {
        return Err(Error::Cache("trailing bytes in table cache".into()));
    }
    let visual = VisualTable {
        vectors,
        extractor_id: key.extractor_id.clone(),
        font_id: key.font_id.clone(),
    };
    Ok((key, visual, LengthTable { lengths }))
}

/// Returns cached tables when `cache` holds a valid file for the same
/// vocabulary, font and extractor; otherwise builds them and rewrites the
/// cache.
pub fn load_or_build_tables(
    vocab: &Vocabulary,
    font: &Font,
    extractor: Extractor,
    cache: &Path,
    parallelism: Parallelism,
) -> Result<(VisualTable, LengthTable)> {
    let key = CacheKey {
        vocab_hash: vocab.content_hash(),
        font_id: font.id().to_string(),
        extractor_id: extractor.id().to_string(),
    };
    if let Ok(mut f) = fs::File::open(cache) {
        let mut bytes = Vec::new();
        let cached = f
            .read_to_end(&mut bytes)
            .map_err(Error::from)
            .and_then(|_| decode_tables(&bytes));
        match cached {
            Ok((k, visual, lengths)) if k == key && visual.vectors.nrows() == vocab.len() => {
                return Ok((visual, lengths));
            }
            Ok(_) => log::info!("{}: cache key differs, rebuilding", cache.display()),
            Err(e) => log::warn!("{}: {e}; rebuilding", cache.display()),
        }
    }
    let visual = build_visual_table(vocab, font, extractor, parallelism)?;
    let lengths = build_length_table(vocab);
    if let Some(dir) = cache.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(cache)?;
    f.write_all(&encode_tables(&key, &visual, &lengths))?;
    Ok((visual, lengths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Convention;

    fn dist(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn rendering_is_deterministic_and_blank_for_empty_text() {
        let font = Font::bundled();
        let a = render_glyph("ll", &font, 32, 32).unwrap();
        assert_eq!(a, render_glyph("ll", &font, 32, 32).unwrap());
        assert!(a.pixels.iter().any(|&p| p < 1.0));
        let e = render_glyph("", &font, 32, 32).unwrap();
        assert!(e.pixels.iter().all(|&p| p == 1.0));
        assert!(matches!(
            render_glyph("a", &font, 8, 32),
            Err(Error::CanvasTooSmall(8, 32))
        ));
    }

    #[test]
    fn embeddings_are_unit_norm_and_order_lookalikes() {
        let font = Font::bundled();
        for ex in [Extractor::Flat, Extractor::Cnn] {
            let emb = |t: &str| visual_embed(&render_glyph(t, &font, 32, 32).unwrap(), ex).unwrap();
            let (l, one, w) = (emb("l"), emb("1"), emb("w"));
            let norm: f64 = l.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
            if ex == Extractor::Flat {
                assert!(dist(&l, &one) < dist(&l, &w));
            }
        }
        let white = visual_embed(&Bitmap::white(32, 32), Extractor::Flat).unwrap();
        assert!(white.iter().all(|&x| (x - 1.0 / 32.0).abs() < 1e-7));
    }

    #[test]
    fn missing_font_is_named() {
        let err = Font::resolve(Some("/no/such/font.ttf")).unwrap_err();
        assert!(err.to_string().contains("/no/such/font.ttf"));
    }

    #[test]
    fn length_table_strips_markers_and_zeroes_specials() {
        let v = Vocabulary::from_tokens(["[UNK]", "##ab", "word"], Convention::WordPiece).unwrap();
        assert_eq!(build_length_table(&v).lengths, vec![0, 2, 4]);
        let v = Vocabulary::from_tokens(["<unk>", "Ġword", "ab"], Convention::ByteLevel).unwrap();
        assert_eq!(build_length_table(&v).lengths, vec![0, 4, 2]);
    }

    #[test]
    fn cache_round_trips_and_recovers_from_corruption() {
        let v =
            Vocabulary::from_tokens(["[UNK]", "a", "##b", "##ll", "##11"], Convention::WordPiece)
                .unwrap();
        let font = Font::bundled();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tables.bin");
        let (a, la) =
            load_or_build_tables(&v, &font, Extractor::Flat, &path, Parallelism::Sequential)
                .unwrap();
        let first = fs::read(&path).unwrap();
        let (b, lb) =
            load_or_build_tables(&v, &font, Extractor::Flat, &path, Parallelism::Parallel).unwrap();
        assert_eq!((a.clone(), la.clone()), (b, lb));
        assert_eq!(a.vectors.nrows(), 5);

        let mut broken = first.clone();
        broken[40] ^= 0xff;
        fs::write(&path, &broken).unwrap();
        assert!(decode_tables(&broken).is_err());
        let (c, _) =
            load_or_build_tables(&v, &font, Extractor::Flat, &path, Parallelism::Sequential)
                .unwrap();
        assert_eq!(c, a);
        assert_eq!(fs::read(&path).unwrap(), first);
    }
}
