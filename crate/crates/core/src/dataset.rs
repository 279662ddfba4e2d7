//! Full-pipeline orchestration: extract, enhance, dedup, render, filter,
//! augment, persist — plus manifest statistics and benchmark
//! stratification.
//!
//! Output layout under the build directory:
//!
//! ```text
//! manifest.jsonl   one record per line, sorted by id
//! stats.json       per-category proportions, fail rates, lengths
//! histogram.csv    char-length distribution (bucket,count)
//! drops.jsonl      per-drop records with stage and reason
//! images/ab/<id>.png
//! cache/           content-addressed render cache
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::augment_chain;
use crate::config::Config;
use crate::curate::{
    check_aspect_ratio, check_bounds_and_centering, dedup, FilterReason, FilterReport,
};
use crate::enhance::{
    concat_horizontal, concat_vertical, gen_short_formula, inject_text, substitute, EnhanceConfig,
    SubstitutionTable,
};
use crate::extract::{extract_units, harvest_text_snippets, load_corpus};
use crate::latex::{detect_repetition, Category, LatexFormula, Provenance};
use crate::render::{render, CachedRenderer, RenderSpec};
use crate::seed::{derive, rng_for};

/// Records at or above this character length belong to the Complex
/// benchmark stratum regardless of category.
pub const COMPLEX_LENGTH_THRESHOLD: usize = 500;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("renderer unreachable: {0}")]
    RendererUnreachable(String),
    #[error("config error: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("io error at {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Augment(#[from] crate::augment::AugmentError),
    #[error("image error: {0}")]
    Image(#[from] crate::image::ImageError),
    #[error("duplicate record id {0} (hash collision)")]
    IdCollision(String),
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BuildError + '_ {
    move |source| BuildError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One synthesized sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub latex: String,
    pub category: Category,
    pub char_length: usize,
    pub token_length: usize,
    pub image_path: String,
    pub font_id: String,
    pub seed: u64,
    pub provenance: Provenance,
    pub augment_applied: Vec<String>,
}

impl DatasetRecord {
    pub fn stable_id(latex: &str, font_id: &str, seed: u64) -> String {
        let mut hasher = Sha256::new();
        hasher.update(latex.as_bytes());
        hasher.update([0]);
        hasher.update(font_id.as_bytes());
        hasher.update([0]);
        hasher.update(seed.to_le_bytes());
        let digest = hasher.finalize();
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Append-only record collection, persisted as JSON Lines sorted by id.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<DatasetRecord>,
}

impl Manifest {
    pub fn new(mut records: Vec<DatasetRecord>) -> Result<Self, BuildError> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(BuildError::IdCollision(r.id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self, BuildError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut records = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: DatasetRecord = serde_json::from_str(line)
                .map_err(|e| BuildError::Other(format!("{}:{}: {e}", path.display(), ln + 1)))?;
            records.push(record);
        }
        Manifest::new(records)
    }

    pub fn save(&self, path: &Path) -> Result<(), BuildError> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(io_err(path))
    }
}

/// Why a candidate (or extraction-stage fence) was dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropRecord {
    pub stage: String,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latex: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CategoryStats {
    /// Percentage of kept records in this category.
    pub proportion: f64,
    /// Percentage of rendered candidates of this category that failed.
    pub render_fail_rate: f64,
    pub avg_char_length: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildStats {
    pub per_category: BTreeMap<String, CategoryStats>,
    pub total_kept: usize,
    /// Dropped candidates (dedup, render, filter stages); extraction-stage
    /// drops appear in `drop_reasons` but are not candidates.
    pub total_dropped: usize,
    pub drop_reasons: BTreeMap<String, usize>,
    /// (bucket label, count) with edges [0,50,100,...,1000,inf).
    pub length_histogram: Vec<(String, usize)>,
}

impl BuildStats {
    pub fn save(&self, path: &Path) -> Result<(), BuildError> {
        let json = serde_json::to_string_pretty(self).expect("stats serialize");
        std::fs::write(path, json).map_err(io_err(path))
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bucket,count\n");
        for (bucket, count) in &self.length_histogram {
            out.push_str(&format!("{bucket},{count}\n"));
        }
        out
    }
}

/// Exact counting over manifest records plus (optionally) drop records.
pub fn stats(records: &[DatasetRecord], drops: &[DropRecord]) -> BuildStats {
    let mut per_category: BTreeMap<String, CategoryStats> = BTreeMap::new();
    for c in Category::ALL {
        per_category.insert(c.name().to_string(), CategoryStats::default());
    }
    let total = records.len();
    let mut char_sums: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let entry = per_category
            .get_mut(r.category.name())
            .expect("all categories");
        entry.count += 1;
        *char_sums.entry(r.category.name().to_string()).or_default() += r.char_length;
    }

    // Render attempts per category = kept + render-stage + filter-stage
    // drops; failures are the render-stage drops.
    let mut render_fails: BTreeMap<String, usize> = BTreeMap::new();
    let mut post_dedup_drops: BTreeMap<String, usize> = BTreeMap::new();
    let mut drop_reasons: BTreeMap<String, usize> = BTreeMap::new();
    let mut candidate_drops = 0usize;
    for d in drops {
        *drop_reasons
            .entry(format!("{}:{}", d.stage, d.reason))
            .or_default() += 1;
        if d.stage != "extract" {
            candidate_drops += 1;
        }
        if let Some(cat) = d.category {
            match d.stage.as_str() {
                "render" => {
                    *render_fails.entry(cat.name().to_string()).or_default() += 1;
                    *post_dedup_drops.entry(cat.name().to_string()).or_default() += 1;
                }
                "filter" => {
                    *post_dedup_drops.entry(cat.name().to_string()).or_default() += 1;
                }
                _ => {}
            }
        }
    }

    for (name, entry) in per_category.iter_mut() {
        entry.proportion = if total == 0 {
            0.0
        } else {
            100.0 * entry.count as f64 / total as f64
        };
        entry.avg_char_length = if entry.count == 0 {
            0.0
        } else {
            char_sums.get(name).copied().unwrap_or(0) as f64 / entry.count as f64
        };
        let fails = render_fails.get(name).copied().unwrap_or(0);
        let attempts = entry.count + post_dedup_drops.get(name).copied().unwrap_or(0);
        entry.render_fail_rate = if attempts == 0 {
            0.0
        } else {
            100.0 * fails as f64 / attempts as f64
        };
    }

    BuildStats {
        per_category,
        total_kept: total,
        total_dropped: candidate_drops,
        drop_reasons,
        length_histogram: length_histogram(records),
    }
}

/// Fixed bucket edges [0, 50, 100, ..., 1000, inf).
fn length_histogram(records: &[DatasetRecord]) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; 21];
    for r in records {
        let bucket = (r.char_length / 50).min(20);
        counts[bucket] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let label = if i == 20 {
                "1000+".to_string()
            } else {
                format!("{}-{}", i * 50, i * 50 + 49)
            };
            (label, c)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Candidate assembly
// ---------------------------------------------------------------------------

/// Assemble `target` candidate formulas from the unit pool: short-formula
/// injection at the configured fraction, otherwise units passed through or
/// enhanced (concatenation, substitution, text injection). Deterministic
/// for a fixed config seed. Short formulas are drawn with retry until
/// unseen so they survive exact dedup.
pub fn assemble_candidates(
    units: &[LatexFormula],
    cfg: &EnhanceConfig,
    table: &SubstitutionTable,
    target: usize,
) -> Vec<LatexFormula> {
    let inline_pool: Vec<usize> = units
        .iter()
        .enumerate()
        .filter(|(_, u)| !matches!(u.category(), Category::MultiLine | Category::Table))
        .map(|(i, _)| i)
        .collect();
    let vcat_pool: Vec<usize> = units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.category() != Category::Table)
        .map(|(i, _)| i)
        .collect();
    let lexicon_names: Vec<&String> = cfg.lexicons.keys().collect();

    let mut seen_shorts: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(target);
    for i in 0..target {
        let mut rng = rng_for(cfg.seed, "candidate", &i.to_string());
        let make_short = units.is_empty() || rng.gen_bool(cfg.short_formula_fraction);
        if make_short {
            let mut short = gen_short_formula(&mut rng);
            for _ in 0..60 {
                if !seen_shorts.contains(short.source()) {
                    break;
                }
                short = gen_short_formula(&mut rng);
            }
            seen_shorts.insert(short.source().to_string());
            out.push(short);
            continue;
        }

        let base_idx = rng.gen_range(0..units.len());
        let base = &units[base_idx];
        if base.category() == Category::Table {
            // Tables pass through un-enhanced.
            out.push(base.clone());
            continue;
        }

        let pick =
            |pool: &[usize], rng: &mut rand_chacha::ChaCha8Rng, k: usize| -> Vec<LatexFormula> {
                (0..k)
                    .map(|_| units[pool[rng.gen_range(0..pool.len())]].clone())
                    .collect()
            };

        let mut formula = if rng.gen_bool(cfg.p_hcat) && inline_pool.len() >= 2 {
            let k = rng.gen_range(2..=cfg.max_units_per_formula.max(2));
            let chosen = pick(&inline_pool, &mut rng, k);
            concat_horizontal(&chosen, &mut rng).unwrap_or_else(|_| base.clone())
        } else if rng.gen_bool(cfg.p_vcat) && vcat_pool.len() >= 2 {
            let k = rng.gen_range(2..=cfg.max_units_per_formula.max(2));
            let chosen = pick(&vcat_pool, &mut rng, k);
            concat_vertical(&chosen, &mut rng).unwrap_or_else(|_| base.clone())
        } else {
            base.clone()
        };

        if cfg.p_subst > 0.0 {
            formula = substitute(&formula, table, cfg.p_subst, &mut rng);
        }
        if cfg.p_text_inject > 0.0 && !lexicon_names.is_empty() && rng.gen_bool(cfg.p_text_inject) {
            let name = lexicon_names[rng.gen_range(0..lexicon_names.len())];
            if let Ok(with_text) = inject_text(&formula, &cfg.lexicons[name], &mut rng) {
                formula = with_text;
            }
        }
        debug_assert!(formula.validate().is_ok(), "closure: {}", formula.source());
        out.push(formula);
    }
    out
}

// ---------------------------------------------------------------------------
// Build
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct BuildOutput {
    pub manifest: Manifest,
    pub stats: BuildStats,
    pub drops: Vec<DropRecord>,
}

/// Run the full pipeline and persist everything under `out_dir`.
///
/// `base_dir` anchors relative paths from the config file (lexicons,
/// texture directory). Deterministic for fixed (corpus, config, seed,
/// backend version).
pub fn build(
    corpus_dir: Option<&Path>,
    cfg: &Config,
    base_dir: &Path,
    out_dir: &Path,
) -> Result<BuildOutput, BuildError> {
    cfg.check()?;
    let seed = cfg.build.seed;
    let backend = cfg.renderer.backend();
    let font_ids = cfg.renderer.font_ids();

    // Probe the renderer before any writes.
    let probe = RenderSpec {
        latex: "x".to_string(),
        font_id: font_ids[0].clone(),
        dpi: cfg.renderer.dpi,
        timeout_ms: cfg.renderer.timeout_ms,
    };
    render(backend.as_ref(), &probe).map_err(|e| BuildError::RendererUnreachable(e.to_string()))?;

    let mut drops: Vec<DropRecord> = Vec::new();

    // Extract.
    let mut units: Vec<LatexFormula> = Vec::new();
    let mut corpus_words: Vec<String> = Vec::new();
    if let Some(dir) = corpus_dir {
        let docs = load_corpus(dir).map_err(io_err(dir))?;
        for doc in &docs {
            let outcome = extract_units(doc);
            for d in outcome.drops {
                drops.push(DropRecord {
                    stage: "extract".into(),
                    reason: d.reason,
                    doc_id: Some(d.doc_id),
                    span: Some(d.span),
                    category: None,
                    latex: None,
                });
            }
            for u in outcome.units {
                units.push(u.formula);
            }
            for snippet in harvest_text_snippets(
                doc,
                cfg.build.snippet_min_words,
                cfg.build.snippet_max_words,
            ) {
                for w in snippet.split(' ') {
                    corpus_words.push(w.to_string());
                }
            }
        }
    }

    // Enhance.
    let mut enhance_cfg = cfg.enhance.to_config(base_dir, seed)?;
    if !corpus_words.is_empty() {
        corpus_words.sort();
        corpus_words.dedup();
        corpus_words.truncate(3500);
        enhance_cfg
            .lexicons
            .insert("corpus".to_string(), corpus_words);
    }
    let table = cfg.enhance.substitution_table();
    let candidates = assemble_candidates(&units, &enhance_cfg, &table, cfg.build.target_size);

    // Per-candidate identity, fixed before any stage drops anything: the
    // assigned font, the derived record seed, and the stable id.
    let identities: Vec<(String, u64, String)> = (0..candidates.len())
        .map(|idx| {
            let font_id = match cfg.build.font_assignment.as_str() {
                "round_robin" => font_ids[idx % font_ids.len()].clone(),
                _ => {
                    let mut rng = rng_for(seed, "font", &idx.to_string());
                    font_ids[rng.gen_range(0..font_ids.len())].clone()
                }
            };
            let record_seed = derive(seed, "record", &idx.to_string());
            let id = DatasetRecord::stable_id(candidates[idx].source(), &font_id, record_seed);
            (font_id, record_seed, id)
        })
        .collect();
    let mut filter_reports: Vec<Option<FilterReport>> = vec![None; candidates.len()];
    let drop_report = |idx: usize, reasons: &[FilterReason]| {
        FilterReport::drop(identities[idx].2.clone(), reasons.iter().copied().collect())
    };

    // Dedup.
    let dd = dedup(&candidates, &cfg.curate.dedup_config());
    for d in &dd.dropped {
        let f = &candidates[d.index];
        drops.push(DropRecord {
            stage: "dedup".into(),
            reason: "duplicate".into(),
            doc_id: None,
            span: None,
            category: Some(f.category()),
            latex: Some(preview(f.source())),
        });
        filter_reports[d.index] = Some(drop_report(d.index, &[FilterReason::Duplicate]));
    }

    // Render.
    let survivors: Vec<usize> = dd.kept;
    let renderer = CachedRenderer::new(backend, Some(out_dir.join("cache")));
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let specs: Vec<RenderSpec> = survivors
        .iter()
        .map(|&idx| RenderSpec {
            latex: candidates[idx].source().to_string(),
            font_id: identities[idx].0.clone(),
            dpi: cfg.renderer.dpi,
            timeout_ms: cfg.renderer.timeout_ms,
        })
        .collect();
    let (outcomes, _fail_rate) = renderer.batch_render(&specs, cfg.workers());

    // Filter, then augment the keepers.
    struct Kept {
        candidate_idx: usize,
        image: crate::image::GrayImage,
    }
    let mut kept: Vec<Kept> = Vec::new();
    for (idx, outcome) in survivors.iter().zip(outcomes) {
        let formula = &candidates[*idx];
        match outcome {
            Err(failure) => {
                drops.push(DropRecord {
                    stage: "render".into(),
                    reason: format!("{:?}", failure.kind),
                    doc_id: None,
                    span: None,
                    category: Some(formula.category()),
                    latex: Some(preview(formula.source())),
                });
                filter_reports[*idx] = Some(drop_report(*idx, &[FilterReason::RenderFail]));
            }
            Ok(image) => {
                let mut reasons = Vec::new();
                if let Err(r) = check_aspect_ratio(
                    &image,
                    cfg.curate.min_aspect_ratio,
                    cfg.curate.max_aspect_ratio,
                ) {
                    reasons.push(r);
                }
                if let Err(rs) = check_bounds_and_centering(
                    &image,
                    cfg.curate.boundary_margin,
                    cfg.curate.center_tolerance,
                ) {
                    reasons.extend(rs);
                }
                if detect_repetition(formula.tokens(), cfg.curate.max_repeats) {
                    reasons.push(FilterReason::Repetition);
                }
                if reasons.is_empty() {
                    filter_reports[*idx] = Some(FilterReport::keep(identities[*idx].2.clone()));
                    kept.push(Kept {
                        candidate_idx: *idx,
                        image,
                    });
                } else {
                    let reason = reasons
                        .iter()
                        .map(|r| format!("{r:?}"))
                        .collect::<Vec<_>>()
                        .join("+");
                    drops.push(DropRecord {
                        stage: "filter".into(),
                        reason,
                        doc_id: None,
                        span: None,
                        category: Some(formula.category()),
                        latex: Some(preview(formula.source())),
                    });
                    filter_reports[*idx] = Some(drop_report(*idx, &reasons));
                }
            }
        }
    }

    let texture_src = cfg.augment.texture_source(base_dir, seed)?;
    let augment_cfg = cfg.augment.to_config(seed)?;
    let augmented: Vec<Result<(DatasetRecord, crate::image::GrayImage), BuildError>> = kept
        .par_iter()
        .map(|k| {
            let formula = &candidates[k.candidate_idx];
            let (font_id, record_seed, id) = identities[k.candidate_idx].clone();
            let mut rng = rng_for(seed, "augment", &k.candidate_idx.to_string());
            let (image, applied) = augment_chain(&k.image, &texture_src, &augment_cfg, &mut rng)?;
            let record = DatasetRecord {
                image_path: format!("images/{}/{}.png", &id[..2], id),
                id,
                latex: formula.source().to_string(),
                category: formula.category(),
                char_length: formula.char_length(),
                token_length: formula.token_length(),
                font_id,
                seed: record_seed,
                provenance: formula.provenance(),
                augment_applied: applied.iter().map(|s| s.to_string()).collect(),
            };
            Ok((record, image))
        })
        .collect();

    let mut records = Vec::with_capacity(augmented.len());
    for item in augmented {
        let (record, image) = item?;
        let path = out_dir.join(&record.image_path);
        std::fs::create_dir_all(path.parent().expect("image dir")).map_err(io_err(&path))?;
        image.save_png(&path)?;
        records.push(record);
    }

    let manifest = Manifest::new(records)?;
    let build_stats = stats(&manifest.records, &drops);
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    build_stats.save(&out_dir.join("stats.json"))?;
    let hist_path = out_dir.join("histogram.csv");
    std::fs::write(&hist_path, build_stats.histogram_csv()).map_err(io_err(&hist_path))?;
    let drops_path = out_dir.join("drops.jsonl");
    let mut drop_lines = String::new();
    for d in &drops {
        drop_lines.push_str(&serde_json::to_string(d).expect("drop serializes"));
        drop_lines.push('\n');
    }
    std::fs::write(&drops_path, drop_lines).map_err(io_err(&drops_path))?;

    // Per-candidate keep/drop verdicts, in candidate order.
    let report_path = out_dir.join("filter_report.jsonl");
    let mut report_lines = String::new();
    for report in filter_reports.into_iter().flatten() {
        report_lines.push_str(&serde_json::to_string(&report).expect("report serializes"));
        report_lines.push('\n');
    }
    std::fs::write(&report_path, report_lines).map_err(io_err(&report_path))?;

    Ok(BuildOutput {
        manifest,
        stats: build_stats,
        drops,
    })
}

fn preview(s: &str) -> String {
    if s.chars().count() <= 80 {
        s.to_string()
    } else {
        let cut: String = s.chars().take(77).collect();
        format!("{cut}...")
    }
}

// ---------------------------------------------------------------------------
// Stratification
// ---------------------------------------------------------------------------

pub const STRATA: [&str; 5] = ["symbol", "ordinary", "text_hybrid", "matrix", "complex"];

/// Assign a record to its benchmark stratum. Complex (length >= 500) takes
/// precedence; Matrix absorbs Table-category records; Ordinary holds the
/// remaining single- and multi-line formulas.
pub fn stratum_of(record: &DatasetRecord) -> &'static str {
    if record.char_length >= COMPLEX_LENGTH_THRESHOLD {
        return "complex";
    }
    match record.category {
        Category::Symbol => "symbol",
        Category::Matrix | Category::Table => "matrix",
        Category::TextHybrid => "text_hybrid",
        Category::SingleLine | Category::MultiLine => "ordinary",
    }
}

#[derive(Debug)]
pub struct Stratification {
    pub subsets: BTreeMap<String, Vec<DatasetRecord>>,
    pub warnings: Vec<String>,
}

/// Split a manifest into the five benchmark strata, sampling each stratum
/// seeded-uniform down to its requested size. Strata are pairwise disjoint
/// by construction. Under-filled strata are returned partial with a
/// warning.
pub fn stratify_benchmark(
    records: &[DatasetRecord],
    sizes: &BTreeMap<String, usize>,
    seed: u64,
) -> Stratification {
    let mut pools: BTreeMap<&str, Vec<&DatasetRecord>> =
        STRATA.iter().map(|s| (*s, Vec::new())).collect();
    for r in records {
        pools.get_mut(stratum_of(r)).expect("known stratum").push(r);
    }
    let mut subsets = BTreeMap::new();
    let mut warnings = Vec::new();
    for name in STRATA {
        let pool = &pools[name];
        let want = sizes.get(name).copied().unwrap_or(pool.len());
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        let mut rng = rng_for(seed, "stratify", name);
        indices.shuffle(&mut rng);
        indices.truncate(want);
        indices.sort_unstable();
        if pool.len() < want {
            warnings.push(format!(
                "stratum {name}: wanted {want}, only {} available",
                pool.len()
            ));
        }
        subsets.insert(
            name.to_string(),
            indices.into_iter().map(|i| pool[i].clone()).collect(),
        );
    }
    Stratification { subsets, warnings }
}
