//! Formula extraction from Markdown documents.
//!
//! Recognizes the math fences emitted by PDF-to-Markdown converters:
//! `\( \)`, `\[ \]`, `$...$`, `$$...$$`, and bare `equation`/`align`/
//! `gather` environments. Every candidate is tokenized and validated;
//! failures are dropped with a recorded reason, never silently.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::latex::{LatexFormula, Provenance};

/// Maximum unit length in characters; longer candidates are dropped at
/// extraction (renderer limits).
pub const MAX_UNIT_CHARS: usize = 2000;

/// Single-dollar inline math is accepted only within this length, and only
/// when the content has no blank line, to avoid currency false positives.
pub const MAX_SINGLE_DOLLAR_CHARS: usize = 200;

#[derive(Debug, Clone)]
pub struct MarkdownDoc {
    pub path: PathBuf,
    pub doc_id: String,
    pub text: String,
}

impl MarkdownDoc {
    pub fn from_text(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            path: PathBuf::new(),
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let doc_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(Self {
            path: path.to_path_buf(),
            doc_id,
            text,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Inline,
    Display,
}

/// One extracted, validated unit formula.
#[derive(Debug, Clone)]
pub struct ExtractedUnit {
    pub formula: LatexFormula,
    pub kind: UnitKind,
    pub doc_id: String,
    /// Byte offsets of the fenced region (fences included) in the source.
    pub char_span: (usize, usize),
}

/// Why a candidate was dropped at extraction.
#[derive(Debug, Clone, Serialize)]
pub struct ExtractDrop {
    pub doc_id: String,
    pub span: (usize, usize),
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ExtractOutcome {
    pub units: Vec<ExtractedUnit>,
    pub drops: Vec<ExtractDrop>,
}

/// Environments recognized as bare display math (optionally starred).
const BARE_ENVS: &[&str] = &["equation", "align", "gather"];

/// Pull candidate formulas out of one document, in source order.
pub fn extract_units(doc: &MarkdownDoc) -> ExtractOutcome {
    let mut out = ExtractOutcome::default();
    for region in scan_math_regions(&doc.text) {
        match region.verdict {
            RegionVerdict::Candidate { content, kind } => {
                accept_or_drop(doc, region.span, &content, kind, &mut out);
            }
            RegionVerdict::Malformed(reason) => out.drops.push(ExtractDrop {
                doc_id: doc.doc_id.clone(),
                span: region.span,
                reason,
            }),
        }
    }
    out
}

fn accept_or_drop(
    doc: &MarkdownDoc,
    span: (usize, usize),
    content: &str,
    kind: UnitKind,
    out: &mut ExtractOutcome,
) {
    let trimmed = content.trim();
    let drop = |reason: &str| ExtractDrop {
        doc_id: doc.doc_id.clone(),
        span,
        reason: reason.to_string(),
    };
    if trimmed.is_empty() {
        out.drops.push(drop("empty"));
        return;
    }
    if trimmed.chars().count() > MAX_UNIT_CHARS {
        out.drops.push(drop("too_long"));
        return;
    }
    let formula = LatexFormula::new(trimmed, Provenance::Extracted);
    match formula.validate() {
        Ok(()) => out.units.push(ExtractedUnit {
            formula,
            kind,
            doc_id: doc.doc_id.clone(),
            char_span: span,
        }),
        Err(e) => out.drops.push(drop(&format!("syntax:{:?}", e.kind))),
    }
}

enum RegionVerdict {
    Candidate { content: String, kind: UnitKind },
    Malformed(String),
}

struct MathRegion {
    span: (usize, usize),
    verdict: RegionVerdict,
}

/// Scan for math fences left to right. Returns recognized regions with
/// their byte spans; prose in between is untouched.
fn scan_math_regions(text: &str) -> Vec<MathRegion> {
    let bytes = text.as_bytes();
    let mut regions = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let rest = &text[i..];
        if rest.starts_with("\\$") {
            i += 2;
            continue;
        }
        if rest.starts_with("\\(") {
            i = close_fence(text, i, "\\(", "\\)", UnitKind::Inline, &mut regions);
            continue;
        }
        if rest.starts_with("\\[") {
            i = close_fence(text, i, "\\[", "\\]", UnitKind::Display, &mut regions);
            continue;
        }
        if rest.starts_with("\\begin{") {
            if let Some(adv) = bare_environment(text, i, &mut regions) {
                i = adv;
                continue;
            }
            i += "\\begin{".len();
            continue;
        }
        if rest.starts_with("$$") {
            i = close_fence(text, i, "$$", "$$", UnitKind::Display, &mut regions);
            continue;
        }
        if rest.starts_with('$') {
            i = single_dollar(text, i, &mut regions);
            continue;
        }
        i += utf8_advance(bytes, i);
    }
    regions
}

fn utf8_advance(bytes: &[u8], i: usize) -> usize {
    let mut n = 1;
    while i + n < bytes.len() && (bytes[i + n] & 0xC0) == 0x80 {
        n += 1;
    }
    n
}

fn close_fence(
    text: &str,
    start: usize,
    open: &str,
    close: &str,
    kind: UnitKind,
    regions: &mut Vec<MathRegion>,
) -> usize {
    let inner_start = start + open.len();
    match text[inner_start..].find(close) {
        Some(rel) => {
            let inner_end = inner_start + rel;
            let end = inner_end + close.len();
            regions.push(MathRegion {
                span: (start, end),
                verdict: RegionVerdict::Candidate {
                    content: text[inner_start..inner_end].to_string(),
                    kind,
                },
            });
            end
        }
        None => {
            regions.push(MathRegion {
                span: (start, text.len()),
                verdict: RegionVerdict::Malformed(format!("unterminated_fence:{open}")),
            });
            text.len()
        }
    }
}

/// Handle a bare `\begin{env}` at `start` when env is one of [`BARE_ENVS`].
/// Returns the position to resume from, or `None` when the environment is
/// not a recognized bare fence.
fn bare_environment(text: &str, start: usize, regions: &mut Vec<MathRegion>) -> Option<usize> {
    let name_start = start + "\\begin{".len();
    let name_end = name_start + text[name_start..].find('}')?;
    let name = &text[name_start..name_end];
    let base = name.trim_end_matches('*');
    if !BARE_ENVS.contains(&base) {
        return None;
    }
    let end_marker = format!("\\end{{{name}}}");
    match text[name_end..].find(&end_marker) {
        Some(rel) => {
            let body_start = name_end + 1;
            let body_end = name_end + rel;
            let end = body_end + end_marker.len();
            let body = &text[body_start..body_end];
            // Rewrap so the unit stays renderable inside display math:
            // align -> aligned, gather -> gathered, equation -> bare body.
            let content = match base {
                "align" => format!("\\begin{{aligned}} {} \\end{{aligned}}", body.trim()),
                "gather" => format!("\\begin{{gathered}} {} \\end{{gathered}}", body.trim()),
                _ => body.trim().to_string(),
            };
            regions.push(MathRegion {
                span: (start, end),
                verdict: RegionVerdict::Candidate {
                    content,
                    kind: UnitKind::Display,
                },
            });
            Some(end)
        }
        None => {
            regions.push(MathRegion {
                span: (start, text.len()),
                verdict: RegionVerdict::Malformed(format!("unterminated_environment:{name}")),
            });
            Some(text.len())
        }
    }
}

/// Handle a single `$` opener. Content must be nonempty, short, and free of
/// blank lines; otherwise the `$` is treated as prose (currency sign).
fn single_dollar(text: &str, start: usize, regions: &mut Vec<MathRegion>) -> usize {
    let inner_start = start + 1;
    let mut search_from = inner_start;
    let close = loop {
        match text[search_from..].find('$') {
            Some(rel) => {
                let pos = search_from + rel;
                if text[..pos].ends_with('\\') {
                    search_from = pos + 1;
                    continue;
                }
                break Some(pos);
            }
            None => break None,
        }
    };
    let Some(close) = close else {
        return inner_start; // Lone dollar: prose.
    };
    let content = &text[inner_start..close];
    let acceptable = !content.trim().is_empty()
        && content.chars().count() <= MAX_SINGLE_DOLLAR_CHARS
        && !has_blank_line(content);
    if !acceptable {
        return inner_start;
    }
    regions.push(MathRegion {
        span: (start, close + 1),
        verdict: RegionVerdict::Candidate {
            content: content.to_string(),
            kind: UnitKind::Inline,
        },
    });
    close + 1
}

fn has_blank_line(s: &str) -> bool {
    let mut newlines = 0;
    for ch in s.chars() {
        match ch {
            '\n' => {
                newlines += 1;
                if newlines >= 2 {
                    return true;
                }
            }
            c if c.is_whitespace() => {}
            _ => newlines = 0,
        }
    }
    false
}

/// Split the prose outside math regions into word-count-bounded snippets.
///
/// Each prose segment is chunked greedily into `max_words`-sized snippets;
/// a trailing chunk shorter than `min_words` is discarded. Deterministic
/// for a fixed document.
pub fn harvest_text_snippets(doc: &MarkdownDoc, min_words: usize, max_words: usize) -> Vec<String> {
    assert!(
        (1..=max_words).contains(&min_words),
        "need 1 <= min_words <= max_words"
    );
    let mut snippets = Vec::new();
    for segment in prose_segments(&doc.text) {
        let words: Vec<&str> = segment
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
            .filter(|w| w.chars().any(|c| c.is_alphabetic()))
            .collect();
        for chunk in words.chunks(max_words) {
            if chunk.len() >= min_words {
                snippets.push(chunk.join(" "));
            }
        }
    }
    snippets
}

/// Prose text with all recognized math regions removed.
fn prose_segments(text: &str) -> Vec<String> {
    let regions = scan_math_regions(text);
    let mut segments = Vec::new();
    let mut cursor = 0;
    for region in &regions {
        if region.span.0 > cursor {
            segments.push(text[cursor..region.span.0].to_string());
        }
        cursor = region.span.1;
    }
    if cursor < text.len() {
        segments.push(text[cursor..].to_string());
    }
    segments
}

/// Load every `.md`/`.mmd` file under `dir`, sorted by path.
pub fn load_corpus(dir: &Path) -> std::io::Result<Vec<MarkdownDoc>> {
    let mut docs = Vec::new();
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("md") | Some("mmd")
            )
        })
        .collect();
    paths.sort();
    for path in paths {
        docs.push(MarkdownDoc::read(&path)?);
    }
    Ok(docs)
}
