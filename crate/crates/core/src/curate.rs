//! Dataset curation: edit-distance deduplication and geometric filters on
//! rendered images.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::GrayImage;
use crate::latex::{significant, LatexFormula, Token};

/// Pixels darker than this count as ink for the geometry checks.
const INK_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupConfig {
    /// Normalized token-level distance at or below which a later formula is
    /// a duplicate of an earlier one.
    pub normalized_threshold: f64,
    /// Char-length bucket width for the near-duplicate pass.
    pub bucket_width: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            normalized_threshold: 0.10,
            bucket_width: 16,
        }
    }
}

/// Banded Levenshtein outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOutcome {
    Distance(usize),
    Exceeded,
}

impl EditOutcome {
    pub fn within(&self, cap: usize) -> Option<usize> {
        match self {
            EditOutcome::Distance(d) if *d <= cap => Some(*d),
            _ => None,
        }
    }
}

/// Levenshtein distance over non-whitespace token lexemes with unit costs.
/// Returns `Exceeded` as soon as the distance provably exceeds `cap`.
pub fn edit_distance(a: &[Token], b: &[Token], cap: usize) -> EditOutcome {
    let la: Vec<&str> = significant(a).map(|t| t.text.as_str()).collect();
    let lb: Vec<&str> = significant(b).map(|t| t.text.as_str()).collect();
    match banded_levenshtein(&la, &lb, cap) {
        Some(d) => EditOutcome::Distance(d),
        None => EditOutcome::Exceeded,
    }
}

/// Banded Levenshtein over arbitrary comparable slices. `None` when the
/// distance exceeds `cap`.
pub fn banded_levenshtein<T: PartialEq>(a: &[T], b: &[T], cap: usize) -> Option<usize> {
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > cap {
        return None;
    }
    if n == 0 {
        return (m <= cap).then_some(m);
    }
    if m == 0 {
        return (n <= cap).then_some(n);
    }
    const INF: usize = usize::MAX / 2;
    let mut prev = vec![INF; m + 1];
    for (j, p) in prev.iter_mut().enumerate().take(m.min(cap) + 1) {
        *p = j;
    }
    for i in 1..=n {
        let mut cur = vec![INF; m + 1];
        let lo = i.saturating_sub(cap).max(1);
        let hi = m.min(i + cap);
        if lo > hi {
            return None;
        }
        let mut row_min = INF;
        if i <= cap {
            cur[0] = i;
            row_min = i;
        }
        for j in lo..=hi {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let best = prev[j - 1]
                .saturating_add(cost)
                .min(cur[j - 1].saturating_add(1))
                .min(prev[j].saturating_add(1));
            cur[j] = best;
            row_min = row_min.min(best);
        }
        if row_min > cap {
            return None;
        }
        prev = cur;
    }
    let d = prev[m];
    (d <= cap).then_some(d)
}

/// Index of the earlier-kept formula a duplicate collapsed into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DuplicateDrop {
    pub index: usize,
    pub duplicate_of: usize,
}

#[derive(Debug, Default)]
pub struct DedupResult {
    /// Indices of kept formulas, in input order.
    pub kept: Vec<usize>,
    /// Dropped duplicates with the kept formula they matched.
    pub dropped: Vec<DuplicateDrop>,
}

/// Two-pass deduplication: exact normalized-string duplicates first, then
/// near-duplicates by normalized token edit distance within char-length
/// buckets (plus adjacent buckets). Keeps the first occurrence in input
/// order.
pub fn dedup(formulas: &[LatexFormula], cfg: &DedupConfig) -> DedupResult {
    let mut result = DedupResult::default();
    if formulas.is_empty() {
        return result;
    }

    // Pass 1: exact duplicates on the whitespace-normalized source.
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    let mut survivors: Vec<usize> = Vec::new();
    for (i, f) in formulas.iter().enumerate() {
        match first_seen.get(f.source()) {
            Some(&orig) => result.dropped.push(DuplicateDrop {
                index: i,
                duplicate_of: orig,
            }),
            None => {
                first_seen.insert(f.source(), i);
                survivors.push(i);
            }
        }
    }

    // Pass 2: near-duplicates. Bucket width is widened so that adjacent
    // buckets cover every pair within the threshold, keeping the bucketed
    // pass equivalent to all-pairs comparison.
    let max_char_len = formulas.iter().map(|f| f.char_length()).max().unwrap_or(0);
    let widened = (cfg.normalized_threshold * max_char_len as f64).ceil() as usize;
    let width = cfg.bucket_width.max(widened).max(1);

    let mut buckets: HashMap<usize, Vec<usize>> = HashMap::new();
    for &i in &survivors {
        buckets
            .entry(formulas[i].char_length() / width)
            .or_default()
            .push(i);
    }

    // Chains of adjacent nonempty buckets are independent; process chains
    // in parallel, each one sequentially in input order.
    let mut bucket_ids: Vec<usize> = buckets.keys().copied().collect();
    bucket_ids.sort_unstable();
    let mut chains: Vec<Vec<usize>> = Vec::new();
    for id in bucket_ids {
        match chains.last_mut() {
            Some(chain) if chain.last().is_some_and(|&last| id == last + 1) => chain.push(id),
            _ => chains.push(vec![id]),
        }
    }

    let per_chain: Vec<(Vec<usize>, Vec<DuplicateDrop>)> = chains
        .par_iter()
        .map(|chain| {
            let mut items: Vec<usize> = chain
                .iter()
                .flat_map(|b| buckets[b].iter().copied())
                .collect();
            items.sort_unstable();
            greedy_near_dedup(formulas, &items, width, cfg.normalized_threshold)
        })
        .collect();

    let mut kept: Vec<usize> = Vec::new();
    for (chain_kept, chain_dropped) in per_chain {
        kept.extend(chain_kept);
        result.dropped.extend(chain_dropped);
    }
    kept.sort_unstable();
    result.dropped.sort_by_key(|d| d.index);
    result.kept = kept;
    result
}

fn greedy_near_dedup(
    formulas: &[LatexFormula],
    items: &[usize],
    width: usize,
    threshold: f64,
) -> (Vec<usize>, Vec<DuplicateDrop>) {
    let mut kept: Vec<usize> = Vec::new();
    let mut kept_by_bucket: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut dropped = Vec::new();
    'candidates: for &i in items {
        let bucket = formulas[i].char_length() / width;
        for b in bucket.saturating_sub(1)..=bucket + 1 {
            let Some(neighbors) = kept_by_bucket.get(&b) else {
                continue;
            };
            for &j in neighbors {
                if is_near_duplicate(&formulas[i], &formulas[j], threshold) {
                    dropped.push(DuplicateDrop {
                        index: i,
                        duplicate_of: j,
                    });
                    continue 'candidates;
                }
            }
        }
        kept.push(i);
        kept_by_bucket.entry(bucket).or_default().push(i);
    }
    (kept, dropped)
}

fn is_near_duplicate(a: &LatexFormula, b: &LatexFormula, threshold: f64) -> bool {
    let max_len = a.token_length().max(b.token_length());
    if max_len == 0 {
        return true;
    }
    let cap = (threshold * max_len as f64).floor() as usize;
    edit_distance(a.tokens(), b.tokens(), cap)
        .within(cap)
        .is_some()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    AspectRatio,
    BoundaryOverflow,
    NotCentered,
    Repetition,
    RenderFail,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Drop,
}

/// Per-record filter outcome, emitted as JSON Lines next to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    pub record_id: String,
    pub verdict: Verdict,
    pub reasons: BTreeSet<FilterReason>,
}

impl FilterReport {
    pub fn keep(record_id: impl Into<String>) -> Self {
        Self {
            record_id: record_id.into(),
            verdict: Verdict::Keep,
            reasons: BTreeSet::new(),
        }
    }

    pub fn drop(record_id: impl Into<String>, reasons: BTreeSet<FilterReason>) -> Self {
        assert!(!reasons.is_empty(), "a drop needs at least one reason");
        Self {
            record_id: record_id.into(),
            verdict: Verdict::Drop,
            reasons,
        }
    }
}

/// Width/height ratio of the ink bounding box must fall inside
/// `[min_ratio, max_ratio]` (inclusive). Blank images fail as RenderFail.
pub fn check_aspect_ratio(
    img: &GrayImage,
    min_ratio: f64,
    max_ratio: f64,
) -> Result<(), FilterReason> {
    assert!(
        min_ratio > 0.0 && min_ratio <= max_ratio,
        "need 0 < min_ratio <= max_ratio"
    );
    let Some((x0, y0, x1, y1)) = img.ink_bbox(INK_THRESHOLD) else {
        return Err(FilterReason::RenderFail);
    };
    let w = (x1 - x0 + 1) as f64;
    let h = (y1 - y0 + 1) as f64;
    let ratio = w / h;
    if ratio < min_ratio || ratio > max_ratio {
        return Err(FilterReason::AspectRatio);
    }
    Ok(())
}

/// Boundary and centering check.
///
/// BoundaryOverflow: some ink pixel lies strictly within `margin` pixels of
/// an image edge. NotCentered: the ink bounding-box center deviates from
/// the image center by more than `center_tol` of the dimension on either
/// axis. Both reasons can fire together.
pub fn check_bounds_and_centering(
    img: &GrayImage,
    margin: u32,
    center_tol: f64,
) -> Result<(), BTreeSet<FilterReason>> {
    assert!(
        (0.0..=0.5).contains(&center_tol),
        "center_tol must be in [0, 0.5]"
    );
    let mut reasons = BTreeSet::new();
    let Some((x0, y0, x1, y1)) = img.ink_bbox(INK_THRESHOLD) else {
        reasons.insert(FilterReason::RenderFail);
        return Err(reasons);
    };
    let w = img.width();
    let h = img.height();
    let edge_dist = x0.min(y0).min(w - 1 - x1).min(h - 1 - y1);
    if edge_dist < margin {
        reasons.insert(FilterReason::BoundaryOverflow);
    }
    let bbox_cx = (x0 + x1 + 1) as f64 / 2.0;
    let bbox_cy = (y0 + y1 + 1) as f64 / 2.0;
    let img_cx = w as f64 / 2.0;
    let img_cy = h as f64 / 2.0;
    if (bbox_cx - img_cx).abs() > center_tol * w as f64
        || (bbox_cy - img_cy).abs() > center_tol * h as f64
    {
        reasons.insert(FilterReason::NotCentered);
    }
    if reasons.is_empty() {
        Ok(())
    } else {
        Err(reasons)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latex::{tokenize, Provenance};

    fn char_tokens(s: &str) -> Vec<Token> {
        s.chars()
            .map(|c| Token::new(crate::latex::TokenKind::Symbol, c.to_string()))
            .collect()
    }

    /// Plain full-matrix DP, the independent oracle for the banded path.
    fn dp_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
        let (n, m) = (a.len(), b.len());
        let mut dp = vec![vec![0usize; m + 1]; n + 1];
        for (i, row) in dp.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in dp[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=n {
            for j in 1..=m {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                dp[i][j] = (dp[i - 1][j] + 1)
                    .min(dp[i][j - 1] + 1)
                    .min(dp[i - 1][j - 1] + cost);
            }
        }
        dp[n][m]
    }

    #[test]
    fn identical_distance_zero() {
        let a = tokenize("\\frac{a}{b}");
        assert_eq!(edit_distance(&a, &a, 10), EditOutcome::Distance(0));
    }

    #[test]
    fn kitten_sitting_is_three() {
        let a = char_tokens("kitten");
        let b = char_tokens("sitting");
        let la: Vec<&str> = a.iter().map(|t| t.text.as_str()).collect();
        let lb: Vec<&str> = b.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(dp_oracle(&la, &lb), 3);
        assert_eq!(edit_distance(&a, &b, 10), EditOutcome::Distance(3));
    }

    #[test]
    fn cap_zero_differing_exceeds() {
        let a = char_tokens("ab");
        let b = char_tokens("ac");
        assert_eq!(edit_distance(&a, &b, 0), EditOutcome::Exceeded);
    }

    #[test]
    fn banded_matches_oracle_on_random_pairs() {
        let mut rng = crate::seed::rng_from(99);
        use rand::Rng;
        for _ in 0..300 {
            let n = rng.gen_range(0..30);
            let m = rng.gen_range(0..30);
            let a: Vec<u8> = (0..n).map(|_| rng.gen_range(b'a'..b'e')).collect();
            let b: Vec<u8> = (0..m).map(|_| rng.gen_range(b'a'..b'e')).collect();
            let truth = dp_oracle(&a, &b);
            for cap in [0usize, 1, 2, 5, 40] {
                let got = banded_levenshtein(&a, &b, cap);
                if truth <= cap {
                    assert_eq!(got, Some(truth), "a={a:?} b={b:?} cap={cap}");
                } else {
                    assert_eq!(got, None, "a={a:?} b={b:?} cap={cap} truth={truth}");
                }
            }
        }
    }

    #[test]
    fn metric_properties_spot_checked() {
        let mut rng = crate::seed::rng_from(5);
        use rand::Rng;
        for _ in 0..100 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<u8> {
                let n = rng.gen_range(0..15);
                (0..n).map(|_| rng.gen_range(b'a'..b'd')).collect()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let dab = dp_oracle(&a, &b);
            let dba = dp_oracle(&b, &a);
            let dac = dp_oracle(&a, &c);
            let dcb = dp_oracle(&c, &b);
            assert_eq!(dab, dba, "symmetry");
            assert!(dab <= dac + dcb, "triangle inequality");
        }
    }

    fn f(src: &str) -> LatexFormula {
        LatexFormula::new(src, Provenance::Extracted)
    }

    #[test]
    fn exact_duplicates_collapse() {
        let formulas = vec![f("a+b"), f("a+b")];
        let r = dedup(&formulas, &DedupConfig::default());
        assert_eq!(r.kept, vec![0]);
        assert_eq!(r.dropped.len(), 1);
        assert_eq!(r.dropped[0].duplicate_of, 0);
    }

    #[test]
    fn ratio_above_threshold_keeps_both() {
        // 5 significant tokens each, distance 1, ratio 0.2 > 0.1.
        let formulas = vec![f("a+b+c"), f("a+b+d")];
        let r = dedup(&formulas, &DedupConfig::default());
        assert_eq!(r.kept, vec![0, 1]);
    }

    #[test]
    fn near_duplicate_dropped_at_loose_threshold() {
        let formulas = vec![f("a+b+c"), f("a+b+d")];
        let cfg = DedupConfig {
            normalized_threshold: 0.2,
            ..DedupConfig::default()
        };
        let r = dedup(&formulas, &cfg);
        assert_eq!(r.kept, vec![0]);
    }

    /// Greedy all-pairs dedup without bucketing: the oracle.
    fn brute_force(formulas: &[LatexFormula], threshold: f64) -> Vec<usize> {
        let mut kept: Vec<usize> = Vec::new();
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for (i, fi) in formulas.iter().enumerate() {
            if seen.contains_key(fi.source()) {
                continue;
            }
            let dup = kept
                .iter()
                .any(|&j| is_near_duplicate(fi, &formulas[j], threshold));
            if !dup {
                kept.push(i);
                seen.insert(fi.source(), ());
            }
        }
        kept
    }

    #[test]
    fn bucketed_equals_brute_force() {
        let mut formulas = Vec::new();
        let mut rng = crate::seed::rng_from(17);
        use rand::Rng;
        let symbols = ["a", "b", "x", "y", "+", "-", "\\alpha", "\\beta"];
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let src: Vec<&str> = (0..n)
                .map(|_| symbols[rng.gen_range(0..symbols.len())])
                .collect();
            formulas.push(f(&src.join(" ")));
        }
        for threshold in [0.05, 0.1, 0.3, 1.0] {
            let cfg = DedupConfig {
                normalized_threshold: threshold,
                bucket_width: 16,
            };
            let bucketed = dedup(&formulas, &cfg);
            let brute = brute_force(&formulas, threshold);
            assert_eq!(bucketed.kept, brute, "threshold {threshold}");
        }
    }

    #[test]
    fn dedup_is_idempotent() {
        let mut formulas = Vec::new();
        for i in 0..30 {
            formulas.push(f(&format!("x_{} + y_{}", i % 7, i % 5)));
        }
        let cfg = DedupConfig::default();
        let first = dedup(&formulas, &cfg);
        let kept: Vec<LatexFormula> = first.kept.iter().map(|&i| formulas[i].clone()).collect();
        let second = dedup(&kept, &cfg);
        assert_eq!(second.kept.len(), kept.len());
        assert!(second.dropped.is_empty());
    }

    #[test]
    fn conservation() {
        let formulas: Vec<LatexFormula> = (0..50).map(|i| f(&format!("v_{{{}}}", i % 9))).collect();
        let r = dedup(&formulas, &DedupConfig::default());
        assert_eq!(r.kept.len() + r.dropped.len(), formulas.len());
    }

    fn img_with_box(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> GrayImage {
        let mut img = GrayImage::filled(w, h, 255);
        for y in y0..=y1 {
            for x in x0..=x1 {
                img.set(x, y, 0);
            }
        }
        img
    }

    #[test]
    fn aspect_ratio_examples() {
        let wide = img_with_box(120, 30, 10, 10, 109, 19); // 100x10 ink box
        assert!(check_aspect_ratio(&wide, 0.2, 20.0).is_ok());
        let too_wide = img_with_box(520, 30, 10, 10, 509, 19); // 500x10
        assert_eq!(
            check_aspect_ratio(&too_wide, 0.2, 20.0),
            Err(FilterReason::AspectRatio)
        );
        let square = img_with_box(20, 20, 5, 5, 14, 14);
        assert!(
            check_aspect_ratio(&square, 1.0, 1.0).is_ok(),
            "inclusive bounds"
        );
    }

    #[test]
    fn blank_image_is_render_fail() {
        let blank = GrayImage::filled(10, 10, 255);
        assert_eq!(
            check_aspect_ratio(&blank, 0.2, 20.0),
            Err(FilterReason::RenderFail)
        );
        let err = check_bounds_and_centering(&blank, 1, 0.2).unwrap_err();
        assert!(err.contains(&FilterReason::RenderFail));
    }

    #[test]
    fn bounds_and_centering_examples() {
        // Centered glyph with 8-px margins passes margin=4.
        let ok = img_with_box(36, 26, 8, 8, 27, 17);
        assert!(check_bounds_and_centering(&ok, 4, 0.2).is_ok());

        // Ink touching row 0 with margin=1 overflows.
        let touch = img_with_box(20, 20, 5, 0, 10, 5);
        let err = check_bounds_and_centering(&touch, 1, 0.5).unwrap_err();
        assert!(err.contains(&FilterReason::BoundaryOverflow));

        // Ink box center at 0.9 width with tol 0.2 is off-center.
        let off = img_with_box(100, 11, 88, 3, 91, 7); // center x = 90
        let err = check_bounds_and_centering(&off, 0, 0.2).unwrap_err();
        assert!(err.contains(&FilterReason::NotCentered));
    }

    #[test]
    fn margin_zero_never_overflows() {
        let touch = img_with_box(20, 20, 0, 0, 19, 19);
        assert!(check_bounds_and_centering(&touch, 0, 0.5).is_ok());
    }

    #[test]
    fn drop_report_requires_reason() {
        let result = std::panic::catch_unwind(|| {
            FilterReport::drop("x", BTreeSet::new());
        });
        assert!(result.is_err());
    }
}
