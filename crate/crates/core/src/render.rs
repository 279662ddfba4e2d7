//! LaTeX-to-image rendering through a pluggable backend, with a static
//! syntax pre-check, content-addressed caching, and order-preserving batch
//! execution.
//!
//! Two backends ship with the crate:
//!
//! * [`CommandBackend`] runs an external command template with
//!   `{input-file}` / `{output-file}` placeholders (any TeX toolchain
//!   wrapped in a script).
//! * [`SyntheticBackend`] is a dependency-free deterministic rasterizer
//!   that draws one hash-derived glyph per token. It produces stable,
//!   distinctive ink for any valid formula and is the default when no TeX
//!   installation is available.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::image::GrayImage;
use crate::latex::{self, significant, TokenKind};

/// White margin kept around the ink bounding box of successful renders.
pub const CROP_MARGIN: u32 = 8;

/// Intensity below which a pixel counts as ink.
pub const INK_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderSpec {
    pub latex: String,
    pub font_id: String,
    pub dpi: u32,
    pub timeout_ms: u64,
}

impl RenderSpec {
    pub fn new(latex: impl Into<String>, font_id: impl Into<String>, dpi: u32) -> Self {
        Self {
            latex: latex.into(),
            font_id: font_id.into(),
            dpi,
            timeout_ms: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RenderFailureKind {
    /// Rejected by the static validate pre-check; the backend never ran.
    SyntaxReject,
    /// Backend exited nonzero.
    CompileError,
    Timeout,
    /// Missing, unreadable, or blank output image.
    EmptyOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("render failed ({kind:?}): {detail}")]
pub struct RenderFailure {
    pub kind: RenderFailureKind,
    pub detail: String,
}

impl RenderFailure {
    fn new(kind: RenderFailureKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

pub type RenderOutcome = Result<GrayImage, RenderFailure>;

pub trait RenderBackend: Send + Sync {
    /// Stable identifier that enters cache keys; renders must be
    /// deterministic for a fixed (latex, font_id, dpi, version).
    fn version(&self) -> String;

    /// Produce the raw image. The syntax pre-check and ink cropping happen
    /// in [`render`], not here.
    fn render_raw(&self, spec: &RenderSpec) -> RenderOutcome;
}

/// Render one spec: static validation, backend invocation, blank check,
/// and tight crop to the ink bounding box plus [`CROP_MARGIN`].
pub fn render(backend: &dyn RenderBackend, spec: &RenderSpec) -> RenderOutcome {
    let tokens = latex::tokenize(&spec.latex);
    if let Err(e) = latex::validate(&tokens) {
        return Err(RenderFailure::new(
            RenderFailureKind::SyntaxReject,
            e.to_string(),
        ));
    }
    let img = backend.render_raw(spec)?;
    match img.crop_to_ink(INK_THRESHOLD, CROP_MARGIN) {
        Some(cropped) => Ok(cropped),
        None => Err(RenderFailure::new(
            RenderFailureKind::EmptyOutput,
            "render produced no ink pixels",
        )),
    }
}

// ---------------------------------------------------------------------------
// External command backend
// ---------------------------------------------------------------------------

/// Runs a user-supplied command template. `{input-file}` is replaced by the
/// path of a standalone .tex document wrapping the formula in display math,
/// `{output-file}` by the expected PNG path, `{dpi}` by the requested dpi.
/// The command runs under `sh -c`.
pub struct CommandBackend {
    pub template: String,
    /// (id, preamble snippet) pairs; the snippet for the spec's font_id is
    /// inserted into the document preamble.
    pub fonts: Vec<(String, String)>,
    /// Tag mixed into cache keys; bump it when the toolchain changes.
    pub version_tag: String,
}

impl CommandBackend {
    fn font_preamble(&self, font_id: &str) -> String {
        self.fonts
            .iter()
            .find(|(id, _)| id == font_id)
            .map(|(_, snippet)| snippet.clone())
            .unwrap_or_default()
    }

    fn document(&self, spec: &RenderSpec) -> String {
        format!(
            "\\documentclass[preview,border=2pt]{{standalone}}\n\
             \\usepackage{{amsmath,amssymb}}\n\
             {}\n\
             \\begin{{document}}\n\
             \\[ {} \\]\n\
             \\end{{document}}\n",
            self.font_preamble(&spec.font_id),
            spec.latex
        )
    }
}

impl RenderBackend for CommandBackend {
    fn version(&self) -> String {
        format!("cmd:{}:{}", self.version_tag, self.template)
    }

    fn render_raw(&self, spec: &RenderSpec) -> RenderOutcome {
        let dir = tempfile::Builder::new()
            .prefix("texforge-render")
            .tempdir()
            .map_err(|e| RenderFailure::new(RenderFailureKind::CompileError, e.to_string()))?;
        let input = dir.path().join("formula.tex");
        let output = dir.path().join("formula.png");
        std::fs::write(&input, self.document(spec))
            .map_err(|e| RenderFailure::new(RenderFailureKind::CompileError, e.to_string()))?;

        let cmd = self
            .template
            .replace("{input-file}", &input.display().to_string())
            .replace("{output-file}", &output.display().to_string())
            .replace("{dpi}", &spec.dpi.to_string());
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| RenderFailure::new(RenderFailureKind::CompileError, e.to_string()))?;

        let deadline = Instant::now() + Duration::from_millis(spec.timeout_ms);
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) => {
                    if Instant::now() >= deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(RenderFailure::new(
                            RenderFailureKind::Timeout,
                            format!("renderer exceeded {} ms", spec.timeout_ms),
                        ));
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => {
                    return Err(RenderFailure::new(
                        RenderFailureKind::CompileError,
                        e.to_string(),
                    ))
                }
            }
        };
        if !status.success() {
            let mut stderr = String::new();
            if let Some(mut pipe) = child.stderr.take() {
                use std::io::Read;
                let _ = pipe.read_to_string(&mut stderr);
            }
            let tail: String = stderr
                .chars()
                .rev()
                .take(400)
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .collect();
            return Err(RenderFailure::new(
                RenderFailureKind::CompileError,
                format!("exit {status}: {tail}"),
            ));
        }
        GrayImage::load_png(&output)
            .map_err(|e| RenderFailure::new(RenderFailureKind::EmptyOutput, e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Built-in synthetic backend
// ---------------------------------------------------------------------------

/// Deterministic in-process rasterizer. Each significant token is drawn as
/// a glyph whose 5x7 dot pattern is derived from a hash of
/// (lexeme, font_id); line breaks start new rows. Not typography — but
/// stable, ink-bearing, and distinct across formulas, which is what the
/// pipeline and metric need.
pub struct SyntheticBackend;

impl SyntheticBackend {
    fn glyph_pattern(lexeme: &str, font_id: &str) -> [u8; 5] {
        let mut hasher = Sha256::new();
        hasher.update(lexeme.as_bytes());
        hasher.update([0]);
        hasher.update(font_id.as_bytes());
        let d = hasher.finalize();
        // 5 columns x 7 rows, one bit per dot, never fully blank.
        let mut cols = [0u8; 5];
        for (i, c) in cols.iter_mut().enumerate() {
            *c = d[i] & 0x7F;
        }
        if cols.iter().all(|&c| c == 0) {
            cols[2] = 0x1C;
        }
        cols
    }
}

impl RenderBackend for SyntheticBackend {
    fn version(&self) -> String {
        "synthetic:1".to_string()
    }

    fn render_raw(&self, spec: &RenderSpec) -> RenderOutcome {
        let tokens = latex::tokenize(&spec.latex);
        let scale = (spec.dpi / 100).max(1);
        let cell_w = 6 * scale;
        let cell_h = 9 * scale;
        let pad = 4 * scale;

        // Lay out glyph cells: columns advance per token, line breaks wrap.
        let mut placements: Vec<(u32, u32, [u8; 5])> = Vec::new();
        let mut col = 0u32;
        let mut row = 0u32;
        for tok in significant(&tokens) {
            if tok.kind == TokenKind::LineBreak {
                row += 1;
                col = 0;
                continue;
            }
            placements.push((col, row, Self::glyph_pattern(&tok.text, &spec.font_id)));
            col += 1;
        }
        if placements.is_empty() {
            return Err(RenderFailure::new(
                RenderFailureKind::EmptyOutput,
                "no drawable tokens",
            ));
        }
        let max_col = placements.iter().map(|p| p.0).max().unwrap_or(0);
        let max_row = placements.iter().map(|p| p.1).max().unwrap_or(0);
        let width = (max_col + 1) * cell_w + 2 * pad;
        let height = (max_row + 1) * cell_h + 2 * pad;
        let mut img = GrayImage::filled(width, height, 255);
        for (c, r, pattern) in placements {
            let ox = pad + c * cell_w;
            let oy = pad + r * cell_h;
            for (gx, col_bits) in pattern.iter().enumerate() {
                for gy in 0..7u32 {
                    if col_bits & (1 << gy) != 0 {
                        for sx in 0..scale {
                            for sy in 0..scale {
                                img.set(ox + gx as u32 * scale + sx, oy + gy * scale + sy, 0);
                            }
                        }
                    }
                }
            }
        }
        Ok(img)
    }
}

// ---------------------------------------------------------------------------
// Cache and batch execution
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CachedFailure {
    kind: RenderFailureKind,
    detail: String,
}

/// Renderer with an optional content-addressed on-disk cache, keyed by
/// hash(latex, font_id, dpi, backend version) under a two-level hex
/// fan-out. Failures (other than syntax rejects) are cached as JSON
/// markers. Corrupt cache entries fall back to a re-render.
pub struct CachedRenderer {
    backend: Arc<dyn RenderBackend>,
    cache_dir: Option<PathBuf>,
    invocations: AtomicU64,
}

impl CachedRenderer {
    pub fn new(backend: Arc<dyn RenderBackend>, cache_dir: Option<PathBuf>) -> Self {
        Self {
            backend,
            cache_dir,
            invocations: AtomicU64::new(0),
        }
    }

    pub fn backend(&self) -> &dyn RenderBackend {
        self.backend.as_ref()
    }

    /// Number of backend invocations so far (cache hits and syntax rejects
    /// do not count).
    pub fn backend_invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn cache_key(&self, spec: &RenderSpec) -> String {
        let mut hasher = Sha256::new();
        hasher.update(spec.latex.as_bytes());
        hasher.update([0]);
        hasher.update(spec.font_id.as_bytes());
        hasher.update([0]);
        hasher.update(spec.dpi.to_le_bytes());
        hasher.update([0]);
        hasher.update(self.backend.version().as_bytes());
        hex(&hasher.finalize())
    }

    fn cache_paths(&self, key: &str) -> Option<(PathBuf, PathBuf)> {
        let dir = self.cache_dir.as_ref()?;
        let sub = dir.join(&key[0..2]).join(&key[2..4]);
        Some((
            sub.join(format!("{key}.png")),
            sub.join(format!("{key}.fail.json")),
        ))
    }

    /// Render with the cache short-circuiting repeats.
    pub fn render_cached(&self, spec: &RenderSpec) -> RenderOutcome {
        // The static pre-check is cheap; syntax rejects skip cache and
        // backend alike.
        let tokens = latex::tokenize(&spec.latex);
        if let Err(e) = latex::validate(&tokens) {
            return Err(RenderFailure::new(
                RenderFailureKind::SyntaxReject,
                e.to_string(),
            ));
        }

        let key = self.cache_key(spec);
        if let Some((png_path, fail_path)) = self.cache_paths(&key) {
            if let Ok(img) = GrayImage::load_png(&png_path) {
                return Ok(img);
            }
            if let Ok(bytes) = std::fs::read(&fail_path) {
                if let Ok(f) = serde_json::from_slice::<CachedFailure>(&bytes) {
                    return Err(RenderFailure::new(f.kind, f.detail));
                }
            }
        }

        self.invocations.fetch_add(1, Ordering::Relaxed);
        let outcome = match self.backend.render_raw(spec) {
            Ok(img) => match img.crop_to_ink(INK_THRESHOLD, CROP_MARGIN) {
                Some(cropped) => Ok(cropped),
                None => Err(RenderFailure::new(
                    RenderFailureKind::EmptyOutput,
                    "render produced no ink pixels",
                )),
            },
            Err(e) => Err(e),
        };

        if let Some((png_path, fail_path)) = self.cache_paths(&key) {
            let _ = std::fs::create_dir_all(png_path.parent().expect("fan-out dir"));
            match &outcome {
                Ok(img) => {
                    let _ = write_atomic(&png_path, &img.png_bytes());
                }
                Err(f) => {
                    if let Ok(json) = serde_json::to_vec(&CachedFailure {
                        kind: f.kind,
                        detail: f.detail.clone(),
                    }) {
                        let _ = write_atomic(&fail_path, &json);
                    }
                }
            }
        }
        outcome
    }

    /// Render many specs with up to `workers` concurrent renders. Outcomes
    /// come back in input order; individual failures never abort the batch.
    /// The failure rate is `100 * failures / specs.len()` (0 for an empty
    /// input).
    pub fn batch_render(&self, specs: &[RenderSpec], workers: usize) -> (Vec<RenderOutcome>, f64) {
        assert!(workers >= 1, "workers must be >= 1");
        let outcomes: Vec<RenderOutcome> = if workers == 1 {
            specs.iter().map(|s| self.render_cached(s)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .expect("thread pool");
            pool.install(|| specs.par_iter().map(|s| self.render_cached(s)).collect())
        };
        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        let fail_rate = if specs.is_empty() {
            0.0
        } else {
            100.0 * failures as f64 / specs.len() as f64
        };
        (outcomes, fail_rate)
    }
}

/// Shared (backend, font, dpi) context so paired renders are comparable.
#[derive(Clone)]
pub struct RenderProfile {
    pub renderer: Arc<CachedRenderer>,
    pub font_id: String,
    pub dpi: u32,
    pub timeout_ms: u64,
}

impl RenderProfile {
    pub fn render(&self, latex: &str) -> RenderOutcome {
        self.renderer.render_cached(&RenderSpec {
            latex: latex.to_string(),
            font_id: self.font_id.clone(),
            dpi: self.dpi,
            timeout_ms: self.timeout_ms,
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    std::fs::rename(&tmp, path)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(latex: &str) -> RenderSpec {
        RenderSpec::new(latex, "f0", 200)
    }

    #[test]
    fn synthetic_renders_ink() {
        let img = render(&SyntheticBackend, &spec("x^2")).unwrap();
        assert!(img.ink_bbox(INK_THRESHOLD).is_some());
    }

    #[test]
    fn syntax_reject_before_backend() {
        let err = render(&SyntheticBackend, &spec("\\frac{a}{")).unwrap_err();
        assert_eq!(err.kind, RenderFailureKind::SyntaxReject);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = render(&SyntheticBackend, &spec("\\frac{a}{b} + c")).unwrap();
        let b = render(&SyntheticBackend, &spec("\\frac{a}{b} + c")).unwrap();
        assert_eq!(a.png_bytes(), b.png_bytes());
    }

    #[test]
    fn synthetic_differs_across_fonts() {
        let a = render(&SyntheticBackend, &RenderSpec::new("x+y", "f0", 200)).unwrap();
        let b = render(&SyntheticBackend, &RenderSpec::new("x+y", "f1", 200)).unwrap();
        assert_ne!(a.png_bytes(), b.png_bytes());
    }

    #[test]
    fn crop_margin_is_applied() {
        let img = render(&SyntheticBackend, &spec("x")).unwrap();
        let (x0, y0, x1, y1) = img.ink_bbox(INK_THRESHOLD).unwrap();
        assert_eq!(x0, CROP_MARGIN);
        assert_eq!(y0, CROP_MARGIN);
        assert_eq!(x1, img.width() - 1 - CROP_MARGIN);
        assert_eq!(y1, img.height() - 1 - CROP_MARGIN);
    }

    #[test]
    fn command_backend_with_script() {
        // A fake renderer: produce a tiny valid PNG via our own encoder.
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("fixed.png");
        let mut img = GrayImage::filled(20, 10, 255);
        img.set(10, 5, 0);
        img.save_png(&png).unwrap();
        let backend = CommandBackend {
            template: format!("cp {} {{output-file}}", png.display()),
            fonts: vec![("f0".into(), String::new())],
            version_tag: "test".into(),
        };
        let out = render(&backend, &spec("x+y")).unwrap();
        assert!(out.ink_bbox(INK_THRESHOLD).is_some());
    }

    #[test]
    fn command_backend_nonzero_exit_is_compile_error() {
        let backend = CommandBackend {
            template: "exit 3".into(),
            fonts: vec![],
            version_tag: "test".into(),
        };
        let err = render(&backend, &spec("x")).unwrap_err();
        assert_eq!(err.kind, RenderFailureKind::CompileError);
    }

    #[test]
    fn command_backend_missing_output_is_empty() {
        let backend = CommandBackend {
            template: "true".into(),
            fonts: vec![],
            version_tag: "test".into(),
        };
        let err = render(&backend, &spec("x")).unwrap_err();
        assert_eq!(err.kind, RenderFailureKind::EmptyOutput);
    }

    #[test]
    fn command_backend_timeout() {
        let backend = CommandBackend {
            template: "sleep 30".into(),
            fonts: vec![],
            version_tag: "test".into(),
        };
        let mut s = spec("x");
        s.timeout_ms = 200;
        let err = render(&backend, &s).unwrap_err();
        assert_eq!(err.kind, RenderFailureKind::Timeout);
    }

    #[test]
    fn cache_serves_second_call() {
        let dir = tempfile::tempdir().unwrap();
        let r = CachedRenderer::new(Arc::new(SyntheticBackend), Some(dir.path().to_path_buf()));
        let a = r.render_cached(&spec("x+y")).unwrap();
        assert_eq!(r.backend_invocations(), 1);
        let b = r.render_cached(&spec("x+y")).unwrap();
        assert_eq!(r.backend_invocations(), 1, "second call served from cache");
        assert_eq!(a.png_bytes(), b.png_bytes());
    }

    #[test]
    fn cache_corruption_falls_back_to_rerender() {
        let dir = tempfile::tempdir().unwrap();
        let r = CachedRenderer::new(Arc::new(SyntheticBackend), Some(dir.path().to_path_buf()));
        let a = r.render_cached(&spec("x+y")).unwrap();
        let key = r.cache_key(&spec("x+y"));
        let png = dir
            .path()
            .join(&key[0..2])
            .join(&key[2..4])
            .join(format!("{key}.png"));
        std::fs::write(&png, b"not a png").unwrap();
        let b = r.render_cached(&spec("x+y")).unwrap();
        assert_eq!(a.png_bytes(), b.png_bytes());
        assert_eq!(r.backend_invocations(), 2);
    }

    #[test]
    fn cleared_cache_rederives_identical_result() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache");
        let r = CachedRenderer::new(Arc::new(SyntheticBackend), Some(cache.clone()));
        let a = r.render_cached(&spec("\\alpha + 1")).unwrap();
        std::fs::remove_dir_all(&cache).unwrap();
        let b = r.render_cached(&spec("\\alpha + 1")).unwrap();
        assert_eq!(a.png_bytes(), b.png_bytes());
        assert_eq!(
            r.backend_invocations(),
            2,
            "cleared cache means a re-render"
        );
    }

    #[test]
    fn failures_are_cached_too() {
        let dir = tempfile::tempdir().unwrap();
        let backend = CommandBackend {
            template: "exit 1".into(),
            fonts: vec![],
            version_tag: "t".into(),
        };
        let r = CachedRenderer::new(Arc::new(backend), Some(dir.path().to_path_buf()));
        let e1 = r.render_cached(&spec("x")).unwrap_err();
        assert_eq!(r.backend_invocations(), 1);
        let e2 = r.render_cached(&spec("x")).unwrap_err();
        assert_eq!(r.backend_invocations(), 1);
        assert_eq!(e1.kind, e2.kind);
    }

    #[test]
    fn batch_fail_rate_and_order() {
        let r = CachedRenderer::new(Arc::new(SyntheticBackend), None);
        let specs = vec![spec("a"), spec("\\frac{a}{"), spec("b"), spec("c")];
        let (outcomes, fr) = r.batch_render(&specs, 2);
        assert_eq!(outcomes.len(), 4);
        assert!(outcomes[1].is_err());
        assert!((fr - 25.0).abs() < 1e-12);
    }

    #[test]
    fn batch_empty_is_zero() {
        let r = CachedRenderer::new(Arc::new(SyntheticBackend), None);
        let (outcomes, fr) = r.batch_render(&[], 2);
        assert!(outcomes.is_empty());
        assert_eq!(fr, 0.0);
    }

    #[test]
    fn batch_worker_count_independent() {
        let specs: Vec<RenderSpec> = (0..16).map(|i| spec(&format!("x_{{{i}}} + y"))).collect();
        let r1 = CachedRenderer::new(Arc::new(SyntheticBackend), None);
        let r8 = CachedRenderer::new(Arc::new(SyntheticBackend), None);
        let (o1, f1) = r1.batch_render(&specs, 1);
        let (o8, f8) = r8.batch_render(&specs, 8);
        assert_eq!(f1, f8);
        for (a, b) in o1.iter().zip(&o8) {
            match (a, b) {
                (Ok(x), Ok(y)) => assert_eq!(x.png_bytes(), y.png_bytes()),
                (Err(x), Err(y)) => assert_eq!(x.kind, y.kind),
                _ => panic!("outcome mismatch"),
            }
        }
    }

    #[test]
    fn corpus_rendered_twice_issues_no_new_invocations() {
        let dir = tempfile::tempdir().unwrap();
        let r = CachedRenderer::new(Arc::new(SyntheticBackend), Some(dir.path().to_path_buf()));
        let specs: Vec<RenderSpec> = (0..50).map(|i| spec(&format!("v_{{{i}}}"))).collect();
        let _ = r.batch_render(&specs, 2);
        let first = r.backend_invocations();
        assert_eq!(first, 50);
        let _ = r.batch_render(&specs, 2);
        assert_eq!(r.backend_invocations(), first, "second pass all cache hits");
    }
}
