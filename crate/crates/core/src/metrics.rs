//! Image-based and command-level evaluation: EPMR, EP@N, failure rate, and
//! ExpRate.
//!
//! The EPMR kernel searches all pixel shifts in `[-offset, offset]^2`,
//! dilates the shifted prediction mask, and scores
//! `|dilated_pred AND ref| / |shifted_pred OR ref|`, keeping the maximum.
//! Both images are pasted centered onto a common background large enough
//! that no shift ever clips prediction content, so translating a
//! prediction within the search radius cannot change the score. With
//! offset and dilation zero it reduces to the plain overlap ratio.
//!
//! The hot path packs mask rows into u64 words; intersection counts become
//! shift/AND/popcount passes. Dilation commutes with translation and
//! dilated ink clipped at the canvas border can never overlap the
//! reference (which sits at least `offset` pixels inside), so hoisting the
//! dilation out of the shift loop is exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curate::edit_distance;
use crate::image::{BinaryImage, GrayImage};
use crate::latex::{normalize_style, rebuild_source, tokenize, Token};
use crate::render::RenderProfile;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpmrConfig {
    /// Shift search radius in pixels.
    pub offset: u32,
    /// Dilation radius applied to the shifted prediction mask.
    pub dil_size: u32,
    /// Pixels strictly below this intensity are ink.
    pub binarize_threshold: u8,
}

impl Default for EpmrConfig {
    fn default() -> Self {
        Self {
            offset: 20,
            dil_size: 2,
            binarize_threshold: 128,
        }
    }
}

/// Threshold a grayscale image into an ink mask (`pixel < threshold`).
pub fn binarize(img: &GrayImage, threshold: u8) -> BinaryImage {
    let mask = img.pixels().iter().map(|&p| p < threshold).collect();
    BinaryImage::new(img.width(), img.height(), mask).expect("same dimensions")
}

/// Morphological dilation with a (2r+1)^2 square element, clipped at the
/// image borders. Separable: horizontal then vertical distance pass.
pub fn dilate(img: &BinaryImage, radius: u32) -> BinaryImage {
    if radius == 0 {
        return img.clone();
    }
    let w = img.width() as usize;
    let h = img.height() as usize;
    let r = radius as usize;
    const FAR: usize = usize::MAX / 2;

    let pass =
        |src: &[bool], n_outer: usize, n_inner: usize, stride_outer: usize, stride_inner: usize| {
            let mut out = vec![false; src.len()];
            let mut dist = vec![FAR; n_inner];
            for outer in 0..n_outer {
                let base = outer * stride_outer;
                let mut d = FAR;
                for inner in 0..n_inner {
                    d = if src[base + inner * stride_inner] {
                        0
                    } else {
                        d.saturating_add(1)
                    };
                    dist[inner] = d;
                }
                d = FAR;
                for inner in (0..n_inner).rev() {
                    d = if src[base + inner * stride_inner] {
                        0
                    } else {
                        d.saturating_add(1)
                    };
                    if dist[inner].min(d) <= r {
                        out[base + inner * stride_inner] = true;
                    }
                }
            }
            out
        };

    let horiz = pass(img.mask(), h, w, w, 1);
    let full = pass(&horiz, w, h, 1, w);
    BinaryImage::new(img.width(), img.height(), full).expect("same dimensions")
}

fn paste_centered(src: &BinaryImage, w: u32, h: u32) -> BinaryImage {
    let left = (w - src.width()) / 2;
    let top = (h - src.height()) / 2;
    let mut out = BinaryImage::blank(w, h);
    for y in 0..src.height() {
        for x in 0..src.width() {
            if src.get(x, y) {
                out.set(left + x, top + y, true);
            }
        }
    }
    out
}

/// Mask rows packed LSB-first into u64 words.
struct BitGrid {
    rows: usize,
    words: usize,
    data: Vec<u64>,
}

impl BitGrid {
    fn from_mask(mask: &BinaryImage) -> Self {
        let rows = mask.height() as usize;
        let cols = mask.width() as usize;
        let words = cols.div_ceil(64);
        let mut data = vec![0u64; rows * words];
        for y in 0..rows {
            for x in 0..cols {
                if mask.get(x as u32, y as u32) {
                    data[y * words + x / 64] |= 1u64 << (x % 64);
                }
            }
        }
        Self { rows, words, data }
    }

    fn count(&self) -> usize {
        self.data.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Horizontal shift by `dx` pixels; bits leaving the word span are
    /// dropped.
    fn shifted_x(&self, dx: i64) -> BitGrid {
        let mut out = BitGrid {
            rows: self.rows,
            words: self.words,
            data: vec![0u64; self.data.len()],
        };
        if dx == 0 {
            out.data.copy_from_slice(&self.data);
            return out;
        }
        let word_shift = dx.div_euclid(64);
        let bit_shift = dx.rem_euclid(64) as u32;
        for row in 0..self.rows {
            let src = &self.data[row * self.words..(row + 1) * self.words];
            let dst = &mut out.data[row * self.words..(row + 1) * self.words];
            for (w, slot) in dst.iter_mut().enumerate() {
                let lo_idx = w as i64 - word_shift;
                let hi_idx = lo_idx - 1;
                let lo = if (0..self.words as i64).contains(&lo_idx) {
                    src[lo_idx as usize]
                } else {
                    0
                };
                let hi = if (0..self.words as i64).contains(&hi_idx) {
                    src[hi_idx as usize]
                } else {
                    0
                };
                *slot = if bit_shift == 0 {
                    lo
                } else {
                    (lo << bit_shift) | (hi >> (64 - bit_shift))
                };
            }
        }
        out
    }

    /// popcount of `self.row[r - dy] AND other.row[r]` over all rows.
    fn and_count(&self, other: &BitGrid, dy: i64) -> usize {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.words, other.words);
        let mut total = 0usize;
        for r in 0..self.rows as i64 {
            let src = r - dy;
            if src < 0 || src >= self.rows as i64 {
                continue;
            }
            let a = &self.data[src as usize * self.words..(src as usize + 1) * self.words];
            let b = &other.data[r as usize * self.words..(r as usize + 1) * self.words];
            for (x, y) in a.iter().zip(b) {
                total += (x & y).count_ones() as usize;
            }
        }
        total
    }
}

struct EpmrKernel {
    pred: BitGrid,
    pred_dil: BitGrid,
    reference: BitGrid,
    pred_count: usize,
    ref_count: usize,
}

impl EpmrKernel {
    fn new(pred: &BinaryImage, reference: &BinaryImage, cfg: &EpmrConfig) -> Self {
        let off = cfg.offset;
        let w = pred.width().max(reference.width()) + 2 * off;
        let h = pred.height().max(reference.height()) + 2 * off;
        let pred_canvas = paste_centered(pred, w, h);
        let ref_canvas = paste_centered(reference, w, h);
        let pred_dil_canvas = dilate(&pred_canvas, cfg.dil_size);
        let pred_bits = BitGrid::from_mask(&pred_canvas);
        let ref_bits = BitGrid::from_mask(&ref_canvas);
        Self {
            pred_count: pred_bits.count(),
            ref_count: ref_bits.count(),
            pred: pred_bits,
            pred_dil: BitGrid::from_mask(&pred_dil_canvas),
            reference: ref_bits,
        }
    }

    /// Max overlap score and its argmax over the given shift lists.
    fn eval(&self, dxs: &[i64], dys: &[i64]) -> (f64, i64, i64) {
        let mut best = (0.0f64, 0i64, 0i64);
        let mut found = false;
        for &dx in dxs {
            let shifted_pred = self.pred.shifted_x(dx);
            let shifted_dil = self.pred_dil.shifted_x(dx);
            for &dy in dys {
                let inter = shifted_dil.and_count(&self.reference, dy);
                let overlap = shifted_pred.and_count(&self.reference, dy);
                let union = self.pred_count + self.ref_count - overlap;
                let score = if union == 0 {
                    1.0
                } else {
                    inter as f64 / union as f64
                };
                if !found || score > best.0 {
                    best = (score, dx, dy);
                    found = true;
                }
            }
        }
        best
    }
}

fn full_range(offset: u32) -> Vec<i64> {
    let off = offset as i64;
    (-off..=off).collect()
}

/// EPMR between two binary masks on the exact shift grid. Returns a score
/// in [0, 100].
pub fn epmr_masks(pred: &BinaryImage, reference: &BinaryImage, cfg: &EpmrConfig) -> f64 {
    let kernel = EpmrKernel::new(pred, reference, cfg);
    if kernel.pred_count == 0 && kernel.ref_count == 0 {
        return 100.0;
    }
    let range = full_range(cfg.offset);
    let (score, _, _) = kernel.eval(&range, &range);
    100.0 * score
}

/// Coarse-to-fine EPMR: a stride-4 pass over the shift grid followed by an
/// exact pass in a +/-3 window around the coarse argmax. Must agree with
/// [`epmr_masks`] wherever it is used in place of the exact grid.
pub fn epmr_masks_coarse_to_fine(
    pred: &BinaryImage,
    reference: &BinaryImage,
    cfg: &EpmrConfig,
) -> f64 {
    if cfg.offset <= 3 {
        return epmr_masks(pred, reference, cfg);
    }
    let kernel = EpmrKernel::new(pred, reference, cfg);
    if kernel.pred_count == 0 && kernel.ref_count == 0 {
        return 100.0;
    }
    let off = cfg.offset as i64;
    let mut coarse: Vec<i64> = (-off..=off).step_by(4).collect();
    if coarse.last() != Some(&off) {
        coarse.push(off);
    }
    let (s1, bx, by) = kernel.eval(&coarse, &coarse);
    let window = |c: i64| -> Vec<i64> { ((c - 3).max(-off)..=(c + 3).min(off)).collect() };
    let (s2, _, _) = kernel.eval(&window(bx), &window(by));
    100.0 * s1.max(s2)
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("reference failed to render: {0}")]
    ReferenceRenderFailed(String),
}

/// String-level EPMR: render both sides under the same profile, return 0
/// when the prediction fails to render, otherwise score the binarized
/// masks. A reference render failure is a configuration error, not a
/// score.
pub fn epmr(
    pred_tex: &str,
    ref_tex: &str,
    cfg: &EpmrConfig,
    profile: &RenderProfile,
) -> Result<f64, EvalError> {
    let reference = profile
        .render(ref_tex)
        .map_err(|e| EvalError::ReferenceRenderFailed(e.to_string()))?;
    let Ok(pred) = profile.render(pred_tex) else {
        return Ok(0.0);
    };
    let pred_mask = binarize(&pred, cfg.binarize_threshold);
    let ref_mask = binarize(&reference, cfg.binarize_threshold);
    Ok(epmr_masks(&pred_mask, &ref_mask, cfg))
}

/// Percentage of scores at or above `100 - n`; 0 for an empty input.
pub fn ep_at_n(scores: &[f64], n: u32) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let bar = 100.0 - n as f64;
    let hits = scores.iter().filter(|&&s| s >= bar).count();
    100.0 * hits as f64 / scores.len() as f64
}

/// Command-level match: true iff the token edit distance is at most
/// `max_edits` (whitespace tokens ignored).
pub fn exprate(pred: &[Token], reference: &[Token], max_edits: usize) -> bool {
    edit_distance(pred, reference, max_edits)
        .within(max_edits)
        .is_some()
}

/// One (prediction, reference) pair for batch evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub pred: String,
    #[serde(rename = "ref")]
    pub reference: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorePair {
    pub id: String,
    pub epmr: f64,
    pub render_failed: bool,
    pub exprate_exact: bool,
    pub exprate_le1: bool,
    pub exprate_le2: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleError {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    pub fr: f64,
    pub mean_epmr: f64,
    pub ep_at_0: f64,
    pub exprate: f64,
    pub exprate_le1: f64,
    pub exprate_le2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<ScorePair>,
    pub aggregates: Aggregates,
    /// Pairs whose reference could not be rendered; excluded from the
    /// aggregates.
    pub errors: Vec<SampleError>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub epmr: EpmrConfig,
    /// De-stylize both sides before comparison.
    pub normalize: bool,
}

/// Evaluate a pair set: per-sample scores plus FR, mean EPMR, EP@0, and
/// ExpRate aggregates. Individual failures never abort the batch.
pub fn evaluate_set(pairs: &[EvalPair], opts: &EvalOptions, profile: &RenderProfile) -> EvalReport {
    enum Row {
        Scored(ScorePair),
        Failed(SampleError),
    }
    let rows: Vec<Row> = pairs
        .par_iter()
        .map(|pair| {
            let (pred_tex, ref_tex) = if opts.normalize {
                (destylize(&pair.pred), destylize(&pair.reference))
            } else {
                (pair.pred.clone(), pair.reference.clone())
            };
            let pred_tokens = tokenize(&pred_tex);
            let ref_tokens = tokenize(&ref_tex);
            let d2 = edit_distance(&pred_tokens, &ref_tokens, 2);
            let (exact, le1, le2) = match d2.within(2) {
                Some(0) => (true, true, true),
                Some(1) => (false, true, true),
                Some(_) => (false, false, true),
                None => (false, false, false),
            };
            let ref_img = match profile.render(&ref_tex) {
                Ok(img) => img,
                Err(e) => {
                    return Row::Failed(SampleError {
                        id: pair.id.clone(),
                        message: format!("reference failed to render: {e}"),
                    })
                }
            };
            let (score, render_failed) = match profile.render(&pred_tex) {
                Ok(pred_img) => {
                    let pm = binarize(&pred_img, opts.epmr.binarize_threshold);
                    let rm = binarize(&ref_img, opts.epmr.binarize_threshold);
                    (epmr_masks(&pm, &rm, &opts.epmr), false)
                }
                Err(_) => (0.0, true),
            };
            Row::Scored(ScorePair {
                id: pair.id.clone(),
                epmr: score,
                render_failed,
                exprate_exact: exact,
                exprate_le1: le1,
                exprate_le2: le2,
            })
        })
        .collect();

    let mut per_sample = Vec::new();
    let mut errors = Vec::new();
    for row in rows {
        match row {
            Row::Scored(s) => per_sample.push(s),
            Row::Failed(e) => errors.push(e),
        }
    }
    let n = per_sample.len();
    let pct = |count: usize| {
        if n == 0 {
            0.0
        } else {
            100.0 * count as f64 / n as f64
        }
    };
    let scores: Vec<f64> = per_sample.iter().map(|s| s.epmr).collect();
    let aggregates = Aggregates {
        samples: n,
        fr: pct(per_sample.iter().filter(|s| s.render_failed).count()),
        mean_epmr: if n == 0 {
            0.0
        } else {
            scores.iter().sum::<f64>() / n as f64
        },
        ep_at_0: ep_at_n(&scores, 0),
        exprate: pct(per_sample.iter().filter(|s| s.exprate_exact).count()),
        exprate_le1: pct(per_sample.iter().filter(|s| s.exprate_le1).count()),
        exprate_le2: pct(per_sample.iter().filter(|s| s.exprate_le2).count()),
    };
    EvalReport {
        per_sample,
        aggregates,
        errors,
    }
}

fn destylize(tex: &str) -> String {
    rebuild_source(&normalize_style(&tokenize(tex)))
}

/// Per-sample rows as CSV, header included.
pub fn per_sample_csv(report: &EvalReport) -> String {
    let mut out = String::from("id,epmr,render_failed,exprate_exact,exprate_le1,exprate_le2\n");
    for s in &report.per_sample {
        out.push_str(&format!(
            "{},{:.4},{},{},{},{}\n",
            s.id, s.epmr, s.render_failed, s.exprate_exact, s.exprate_le1, s.exprate_le2
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{CachedRenderer, SyntheticBackend};
    use std::sync::Arc;

    fn mask(w: u32, h: u32, ink: &[(u32, u32)]) -> BinaryImage {
        let mut m = BinaryImage::blank(w, h);
        for &(x, y) in ink {
            m.set(x, y, true);
        }
        m
    }

    fn cfg(offset: u32, dil: u32) -> EpmrConfig {
        EpmrConfig {
            offset,
            dil_size: dil,
            binarize_threshold: 128,
        }
    }

    #[test]
    fn binarize_strict_threshold() {
        let mut img = GrayImage::filled(2, 1, 127);
        img.set(1, 0, 128);
        let m = binarize(&img, 128);
        assert!(m.get(0, 0));
        assert!(!m.get(1, 0));
        assert!(binarize(&GrayImage::filled(3, 3, 255), 128)
            .mask()
            .iter()
            .all(|&b| !b));
        assert!(binarize(&GrayImage::filled(3, 3, 0), 128)
            .mask()
            .iter()
            .all(|&b| b));
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let m = mask(5, 5, &[(2, 2), (0, 4)]);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn dilate_center_pixel() {
        let m = mask(5, 5, &[(2, 2)]);
        let d = dilate(&m, 1);
        assert_eq!(d.count_ink(), 9);
        for y in 1..=3 {
            for x in 1..=3 {
                assert!(d.get(x, y));
            }
        }
    }

    #[test]
    fn dilate_corner_clips() {
        let m = mask(5, 5, &[(0, 0)]);
        let d = dilate(&m, 1);
        assert_eq!(d.count_ink(), 4);
        for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            assert!(d.get(x, y));
        }
    }

    #[test]
    fn epmr_identical_masks_is_100() {
        let m = mask(6, 4, &[(1, 1), (2, 3), (5, 0)]);
        for (off, dil) in [(0, 0), (2, 1), (5, 3)] {
            assert_eq!(epmr_masks(&m, &m, &cfg(off, dil)), 100.0);
        }
    }

    #[test]
    fn epmr_shift_aligns_single_pixels() {
        // pred ink {(0,0)}, ref ink {(1,1)} on 3x3, offset=1, dil=0:
        // shift (1,1) aligns them exactly.
        let pred = mask(3, 3, &[(0, 0)]);
        let reference = mask(3, 3, &[(1, 1)]);
        assert_eq!(epmr_masks(&pred, &reference, &cfg(1, 0)), 100.0);
    }

    #[test]
    fn epmr_dilation_covers_extra_ref_pixel() {
        // pred {(2,2)}, ref {(2,2),(2,3)} on 5x5, offset=0, dil=1:
        // dilated pred covers both ref pixels; union = 2.
        let pred = mask(5, 5, &[(2, 2)]);
        let reference = mask(5, 5, &[(2, 2), (2, 3)]);
        assert_eq!(epmr_masks(&pred, &reference, &cfg(0, 1)), 100.0);
    }

    #[test]
    fn epmr_disjoint_is_zero() {
        let pred = mask(5, 5, &[(0, 0)]);
        let reference = mask(5, 5, &[(4, 4)]);
        assert_eq!(epmr_masks(&pred, &reference, &cfg(0, 0)), 0.0);
    }

    #[test]
    fn epmr_overlap_ratio_reduction() {
        // offset=0, dil=0 equals |A and B| / |A or B| by hand.
        let pred = mask(4, 4, &[(0, 0), (1, 1), (2, 2)]);
        let reference = mask(4, 4, &[(1, 1), (2, 2), (3, 3)]);
        // inter = 2, union = 4.
        assert_eq!(epmr_masks(&pred, &reference, &cfg(0, 0)), 50.0);
    }

    #[test]
    fn epmr_union_uses_undilated_pred() {
        // pred {(1,1)}, ref {(3,1)} on 5x3, dil=2, offset=0:
        // dilated pred covers ref pixel -> inter=1; union = |pred|+|ref| = 2.
        let pred = mask(5, 3, &[(1, 1)]);
        let reference = mask(5, 3, &[(3, 1)]);
        assert_eq!(epmr_masks(&pred, &reference, &cfg(0, 2)), 50.0);
    }

    #[test]
    fn epmr_asymmetric_under_dilation() {
        let small = mask(5, 5, &[(2, 2)]);
        let block = mask(
            5,
            5,
            &[
                (1, 1),
                (2, 1),
                (3, 1),
                (1, 2),
                (2, 2),
                (3, 2),
                (1, 3),
                (2, 3),
                (3, 3),
            ],
        );
        let a = epmr_masks(&small, &block, &cfg(0, 1));
        let b = epmr_masks(&block, &small, &cfg(0, 1));
        assert_eq!(a, 100.0);
        assert!((b - 100.0 / 9.0).abs() < 1e-9);
        assert_ne!(a, b);
    }

    #[test]
    fn epmr_monotone_in_dilation_and_offset() {
        let mut rng = crate::seed::rng_from(31);
        use rand::Rng;
        for case in 0..20 {
            let pred_pts: Vec<(u32, u32)> = (0..rng.gen_range(1..15))
                .map(|_| (rng.gen_range(0..12), rng.gen_range(0..10)))
                .collect();
            let ref_pts: Vec<(u32, u32)> = (0..rng.gen_range(1..15))
                .map(|_| (rng.gen_range(0..12), rng.gen_range(0..10)))
                .collect();
            let pred = mask(12, 10, &pred_pts);
            let reference = mask(12, 10, &ref_pts);
            let mut prev = -1.0;
            for dil in [0, 1, 2, 3] {
                let s = epmr_masks(&pred, &reference, &cfg(1, dil));
                assert!(s >= prev - 1e-12, "case {case} dil {dil}: {s} < {prev}");
                prev = s;
            }
            let mut prev = -1.0;
            for off in [0, 1, 2, 4] {
                let s = epmr_masks(&pred, &reference, &cfg(off, 1));
                assert!(s >= prev - 1e-12, "case {case} off {off}: {s} < {prev}");
                prev = s;
            }
        }
    }

    #[test]
    fn epmr_range_bounds() {
        let mut rng = crate::seed::rng_from(77);
        use rand::Rng;
        for _ in 0..30 {
            let pred_pts: Vec<(u32, u32)> = (0..rng.gen_range(0..20))
                .map(|_| (rng.gen_range(0..9), rng.gen_range(0..9)))
                .collect();
            let ref_pts: Vec<(u32, u32)> = (0..rng.gen_range(1..20))
                .map(|_| (rng.gen_range(0..9), rng.gen_range(0..9)))
                .collect();
            let s = epmr_masks(&mask(9, 9, &pred_pts), &mask(9, 9, &ref_pts), &cfg(2, 1));
            assert!((0.0..=100.0).contains(&s));
        }
    }

    /// Dense blob: a filled rectangle with a few holes, the shape class the
    /// strided search is validated for (rendered formulas are dense; sparse
    /// random dots can defeat a stride-4 pass, which is why the exact grid
    /// stays the reference path).
    fn dense_blob(
        w: u32,
        h: u32,
        x0: u32,
        y0: u32,
        bw: u32,
        bh: u32,
        rng: &mut impl rand::Rng,
    ) -> BinaryImage {
        let mut m = BinaryImage::blank(w, h);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                if rng.gen_bool(0.85) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn coarse_to_fine_matches_exact_on_dense_translates() {
        let mut rng = crate::seed::rng_from(41);
        use rand::Rng;
        for case in 0..10 {
            let base = dense_blob(60, 46, 12, 10, 20, 14, &mut rng);
            let dx = rng.gen_range(0..=6u32);
            let dy = rng.gen_range(0..=6u32);
            let mut moved = BinaryImage::blank(60, 46);
            for y in 0..46 {
                for x in 0..60 {
                    if base.get(x, y) {
                        moved.set(x + dx, y + dy, true);
                    }
                }
            }
            let c = cfg(8, 1);
            let exact = epmr_masks(&moved, &base, &c);
            let c2f = epmr_masks_coarse_to_fine(&moved, &base, &c);
            assert_eq!(exact, c2f, "case {case}");
            assert_eq!(exact, 100.0, "translation within radius aligns fully");
        }
    }

    #[test]
    fn ep_at_n_examples() {
        let scores = [100.0, 95.0, 80.0];
        assert!((ep_at_n(&scores, 5) - 66.66666666666667).abs() < 1e-9);
        assert_eq!(ep_at_n(&scores, 0), 100.0 / 3.0);
        assert_eq!(ep_at_n(&scores, 100), 100.0);
        assert_eq!(ep_at_n(&[], 5), 0.0);
    }

    #[test]
    fn exprate_examples() {
        let a = tokenize("\\frac{a}{b}");
        let b = tokenize("\\frac{a}{c}");
        assert!(exprate(&a, &a, 0));
        assert!(exprate(&a, &b, 1));
        assert!(!exprate(&a, &b, 0));
        // Reflexive and symmetric at 0 edits.
        assert!(exprate(&b, &a, 1));
    }

    #[test]
    fn exprate_ignores_whitespace() {
        let a = tokenize("x = y");
        let b = tokenize("x=y");
        assert!(exprate(&a, &b, 0));
    }

    fn profile() -> RenderProfile {
        RenderProfile {
            renderer: Arc::new(CachedRenderer::new(Arc::new(SyntheticBackend), None)),
            font_id: "f0".into(),
            dpi: 200,
            timeout_ms: 5000,
        }
    }

    #[test]
    fn epmr_identity_via_renderer() {
        let p = profile();
        let c = cfg(2, 1);
        for tex in ["x^2", "\\frac{a}{b}", "\\alpha + \\beta"] {
            assert_eq!(epmr(tex, tex, &c, &p).unwrap(), 100.0);
        }
    }

    #[test]
    fn epmr_syntax_failure_scores_zero() {
        let p = profile();
        assert_eq!(epmr("\\frac{a}{", "x", &cfg(2, 1), &p).unwrap(), 0.0);
    }

    #[test]
    fn epmr_reference_failure_is_error() {
        let p = profile();
        assert!(epmr("x", "\\frac{a}{", &cfg(2, 1), &p).is_err());
    }

    #[test]
    fn evaluate_set_identical_pairs() {
        let pairs: Vec<EvalPair> = (0..4)
            .map(|i| EvalPair {
                id: format!("p{i}"),
                pred: format!("x_{i} + y"),
                reference: format!("x_{i} + y"),
            })
            .collect();
        let report = evaluate_set(&pairs, &EvalOptions::default(), &profile());
        assert_eq!(report.aggregates.fr, 0.0);
        assert_eq!(report.aggregates.mean_epmr, 100.0);
        assert_eq!(report.aggregates.ep_at_0, 100.0);
        assert_eq!(report.aggregates.exprate, 100.0);
        assert!(report.errors.is_empty());
    }

    #[test]
    fn evaluate_set_counts_failures() {
        let mut pairs: Vec<EvalPair> = (0..3)
            .map(|i| EvalPair {
                id: format!("ok{i}"),
                pred: format!("a_{i}"),
                reference: format!("a_{i}"),
            })
            .collect();
        pairs.push(EvalPair {
            id: "bad".into(),
            pred: "\\frac{a}{".into(),
            reference: "x".into(),
        });
        let report = evaluate_set(&pairs, &EvalOptions::default(), &profile());
        assert_eq!(report.aggregates.samples, 4);
        assert_eq!(report.aggregates.fr, 25.0);
        let bad = report.per_sample.iter().find(|s| s.id == "bad").unwrap();
        assert!(bad.render_failed);
        assert_eq!(bad.epmr, 0.0);
    }

    #[test]
    fn aggregates_are_means_of_per_sample_rows() {
        let pairs: Vec<EvalPair> = (0..10)
            .map(|i| EvalPair {
                id: format!("p{i}"),
                pred: format!("x_{{{i}}} + {}", if i % 3 == 0 { "y" } else { "z" }),
                reference: format!("x_{{{i}}} + y"),
            })
            .collect();
        let report = evaluate_set(&pairs, &EvalOptions::default(), &profile());
        let n = report.per_sample.len() as f64;
        let mean: f64 = report.per_sample.iter().map(|s| s.epmr).sum::<f64>() / n;
        assert_eq!(report.aggregates.mean_epmr, mean);
        let exact = report.per_sample.iter().filter(|s| s.exprate_exact).count();
        assert_eq!(report.aggregates.exprate, 100.0 * exact as f64 / n);
        let fails = report.per_sample.iter().filter(|s| s.render_failed).count();
        assert_eq!(report.aggregates.fr, 100.0 * fails as f64 / n);
    }

    #[test]
    fn evaluate_set_normalize_flag() {
        let pairs = vec![EvalPair {
            id: "styled".into(),
            pred: "\\mathbf{x}+y".into(),
            reference: "x+y".into(),
        }];
        let plain = evaluate_set(&pairs, &EvalOptions::default(), &profile());
        assert!(!plain.per_sample[0].exprate_exact);
        let normalized = evaluate_set(
            &pairs,
            &EvalOptions {
                normalize: true,
                ..Default::default()
            },
            &profile(),
        );
        assert!(normalized.per_sample[0].exprate_exact);
        assert_eq!(normalized.per_sample[0].epmr, 100.0);
    }

    #[test]
    fn reference_failures_recorded_not_fatal() {
        let pairs = vec![
            EvalPair {
                id: "a".into(),
                pred: "x".into(),
                reference: "\\frac{a}{".into(),
            },
            EvalPair {
                id: "b".into(),
                pred: "y".into(),
                reference: "y".into(),
            },
        ];
        let report = evaluate_set(&pairs, &EvalOptions::default(), &profile());
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.aggregates.samples, 1);
    }
}
