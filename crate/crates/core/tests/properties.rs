//! Property tests for the spec-level invariants that hold over arbitrary
//! inputs: tokenizer round-trip, enhancement closure, normalization
//! idempotence, dedup idempotence, and EPMR bounds.

use proptest::prelude::*;

use texforge_core::curate::{dedup, DedupConfig};
use texforge_core::enhance::{
    concat_horizontal, concat_vertical, inject_text, substitute, SubstitutionTable,
};
use texforge_core::image::BinaryImage;
use texforge_core::latex::{
    detokenize, normalize_style, rebuild_source, tokenize, LatexFormula, Provenance,
};
use texforge_core::metrics::{epmr_masks, EpmrConfig};
use texforge_core::seed::rng_from;

fn collapse_runs(s: &str) -> String {
    let mut out = String::new();
    let mut in_ws = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            if !in_ws {
                out.push(' ');
            }
            in_ws = true;
        } else {
            in_ws = false;
            out.push(ch);
        }
    }
    out
}

proptest! {
    /// detokenize(tokenize(s)) == s with whitespace runs collapsed, for
    /// arbitrary input strings.
    #[test]
    fn tokenize_roundtrip(s in "[ a-z0-9+\\-=^_{}()\\\\&.,;!<>\\[\\]]{0,60}") {
        prop_assert_eq!(detokenize(&tokenize(&s)), collapse_runs(&s));
    }

    /// Round-trip holds on structured formula-like strings too.
    #[test]
    fn tokenize_roundtrip_structured(
        cmd in prop::sample::select(vec!["\\frac", "\\sqrt", "\\hat", "\\sum"]),
        a in "[a-z]{1,3}",
        b in "[0-9]{1,2}",
    ) {
        let s = format!("{cmd}{{{a}}}{{{b}}} + {a}_{b}");
        prop_assert_eq!(detokenize(&tokenize(&s)), s);
    }

    /// normalize_style is idempotent on arbitrary token sequences.
    #[test]
    fn normalize_idempotent(s in "[ a-z\\\\{}^_+=]{0,40}") {
        let once = normalize_style(&tokenize(&s));
        let twice = normalize_style(&once);
        prop_assert_eq!(&once, &twice);
        let s1 = rebuild_source(&once);
        let s2 = rebuild_source(&normalize_style(&tokenize(&s1)));
        prop_assert_eq!(s1, s2);
    }

    /// Repetition flagging is monotone: flagged at k implies flagged at
    /// every smaller cap.
    #[test]
    fn repetition_monotone(
        word in prop::collection::vec(prop::sample::select(vec!["a", "+", "x"]), 1..4),
        repeats in 1usize..12,
        noise in "[bcz]{0,5}",
    ) {
        let mut src = noise.clone();
        for _ in 0..repeats {
            src.push_str(&word.join(""));
        }
        let tokens = tokenize(&src);
        for k in 3usize..10 {
            if texforge_core::latex::detect_repetition(&tokens, k) {
                prop_assert!(
                    texforge_core::latex::detect_repetition(&tokens, k - 1),
                    "flagged at {k} but not at {}", k - 1
                );
            }
        }
    }
}

fn simple_unit(ix: u8, seed: u64) -> LatexFormula {
    let symbols = ["a", "b", "x", "y", "\\alpha", "\\beta", "\\phi"];
    let ops = ["+", "-", "=", "\\le"];
    let mut src = String::new();
    let mut v = seed;
    for k in 0..(1 + ix % 4) {
        if k > 0 {
            src.push_str(ops[(v % ops.len() as u64) as usize]);
            v = v.wrapping_mul(6364136223846793005).wrapping_add(1);
        }
        src.push_str(symbols[(v % symbols.len() as u64) as usize]);
        v = v.wrapping_mul(6364136223846793005).wrapping_add(1);
    }
    LatexFormula::new(&src, Provenance::Extracted)
}

proptest! {
    /// Closure: every enhancement output of validate-ok inputs is
    /// validate-ok.
    #[test]
    fn enhancement_closure(seed in 0u64..5000, n in 2usize..5, ix in 0u8..16) {
        let units: Vec<LatexFormula> =
            (0..n).map(|k| simple_unit(ix.wrapping_add(k as u8), seed + k as u64)).collect();
        let mut rng = rng_from(seed);
        let h = concat_horizontal(&units, &mut rng).unwrap();
        prop_assert!(h.validate().is_ok(), "hcat broke: {}", h.source());
        let v = concat_vertical(&units, &mut rng).unwrap();
        prop_assert!(v.validate().is_ok(), "vcat broke: {}", v.source());
        let s = substitute(&h, &SubstitutionTable::default(), 0.7, &mut rng);
        prop_assert!(s.validate().is_ok(), "subst broke: {}", s.source());
        let lex = vec!["where".to_string(), "holds".to_string()];
        let t = inject_text(&s, &lex, &mut rng).unwrap();
        prop_assert!(t.validate().is_ok(), "inject broke: {}", t.source());
    }

    /// Determinism: same seed, same outputs.
    #[test]
    fn enhancement_deterministic(seed in 0u64..2000) {
        let units = [simple_unit(3, seed), simple_unit(7, seed + 1)];
        let run = || {
            let mut rng = rng_from(seed);
            let h = concat_horizontal(&units, &mut rng).unwrap();
            substitute(&h, &SubstitutionTable::default(), 0.5, &mut rng)
                .source()
                .to_string()
        };
        prop_assert_eq!(run(), run());
    }

    /// Bracket substitution keeps per-class open/close counts equal.
    #[test]
    fn bracket_balance_preserved(seed in 0u64..2000) {
        let f = LatexFormula::new("((a) + [b \\cdot (c)]) - \\{d\\}", Provenance::Extracted);
        let mut rng = rng_from(seed);
        let out = substitute(&f, &SubstitutionTable::default(), 0.8, &mut rng);
        prop_assert!(out.validate().is_ok());
        for (open, close) in &SubstitutionTable::default().bracket_pairs {
            let count = |needle: &str| {
                out.tokens().iter().filter(|t| t.text == needle).count()
            };
            prop_assert_eq!(count(open), count(close), "unbalanced {}{}", open, close);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Re-running dedup on its own kept set drops nothing, and kept order
    /// is preserved.
    #[test]
    fn dedup_idempotent_and_ordered(seed in 0u64..500, n in 1usize..60) {
        use rand::Rng;
        let mut rng = rng_from(seed);
        let formulas: Vec<LatexFormula> = (0..n)
            .map(|_| simple_unit(rng.gen::<u8>() % 16, rng.gen::<u64>() % 512))
            .collect();
        let cfg = DedupConfig::default();
        let first = dedup(&formulas, &cfg);
        let mut sorted = first.kept.clone();
        sorted.sort_unstable();
        prop_assert_eq!(&first.kept, &sorted, "kept order preserved");
        let kept: Vec<LatexFormula> =
            first.kept.iter().map(|&i| formulas[i].clone()).collect();
        let second = dedup(&kept, &cfg);
        prop_assert!(second.dropped.is_empty(), "dedup not idempotent");
    }

    /// EPMR stays in [0, 100] and equals 100 on identical masks.
    #[test]
    fn epmr_bounds(seed in 0u64..400, w in 4u32..24, h in 4u32..20) {
        use rand::Rng;
        let mut rng = rng_from(seed);
        let mut pred = BinaryImage::blank(w, h);
        let mut reference = BinaryImage::blank(w, h);
        for y in 0..h {
            for x in 0..w {
                if rng.gen_bool(0.2) { pred.set(x, y, true); }
                if rng.gen_bool(0.2) { reference.set(x, y, true); }
            }
        }
        let cfg = EpmrConfig { offset: 2, dil_size: 1, binarize_threshold: 128 };
        let s = epmr_masks(&pred, &reference, &cfg);
        prop_assert!((0.0..=100.0).contains(&s));
        prop_assert_eq!(epmr_masks(&reference, &reference, &cfg), 100.0);
    }
}
