//! texforge: build manifest-backed formula datasets from Markdown corpora
//! and score recognition output with image-based metrics.
//!
//! Progress goes to stderr; stdout carries machine-readable output only.
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use texforge_core::config::Config;
use texforge_core::dataset::{self, Manifest};
use texforge_core::extract::{extract_units, load_corpus};
use texforge_core::metrics::{evaluate_set, per_sample_csv, EvalOptions, EvalPair};
use texforge_core::render::{CachedRenderer, RenderProfile};

#[derive(Parser)]
#[command(
    name = "texforge",
    version,
    about = "Formula dataset synthesis and image-based evaluation"
)]
struct Cli {
    /// TOML configuration file; flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Emit errors as machine-readable JSON on stderr.
    #[arg(long, global = true)]
    json_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract unit formulas from a Markdown corpus.
    Extract {
        /// Directory tree of .md / .mmd files.
        corpus_dir: PathBuf,
        /// Output directory (units.jsonl, drops.jsonl).
        out: PathBuf,
    },
    /// Run the full dataset pipeline.
    Build {
        /// Directory tree of .md / .mmd files (may be empty).
        corpus_dir: PathBuf,
        /// Output directory for manifest, stats, images.
        out: PathBuf,
        #[command(flatten)]
        build: BuildFlags,
    },
    /// Evaluate prediction/reference pairs (JSONL: {id, pred, ref}).
    Eval {
        /// Pairs file, one JSON object per line.
        pairs_file: PathBuf,
        /// Report JSON output path.
        out: PathBuf,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Per-category statistics for a manifest.
    Stats {
        manifest: PathBuf,
        /// stats.json output path.
        out: PathBuf,
    },
    /// Character-length histogram for a manifest.
    Hist {
        manifest: PathBuf,
        /// histogram.csv output path.
        out: PathBuf,
    },
    /// Split a manifest into benchmark strata.
    Stratify {
        manifest: PathBuf,
        /// Output directory for per-stratum JSONL files.
        out: PathBuf,
        /// Per-stratum sizes: "500" or "symbol=100,ordinary=200,...".
        /// Default keeps every record of each stratum.
        #[arg(long)]
        sizes: Option<String>,
        /// Sampling seed (defaults to build.seed from the config).
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct BuildFlags {
    /// Global pipeline seed (config: build.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Candidate count to assemble (config: build.target_size).
    #[arg(long)]
    size: Option<usize>,
    /// Renderer/pipeline parallelism; 0 = logical cores (config: build.workers).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvalFlags {
    /// EPMR shift radius (config: metrics.offset).
    #[arg(long)]
    offset: Option<u32>,
    /// EPMR dilation radius (config: metrics.dil_size).
    #[arg(long)]
    dil_size: Option<u32>,
    /// Ink threshold for binarization (config: metrics.binarize_threshold).
    #[arg(long)]
    binarize_threshold: Option<u8>,
    /// De-stylize both sides before comparison (config: metrics.normalize).
    #[arg(long)]
    normalize: bool,
    /// Also write per-sample rows as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Runtime(e) => format!("{e:#}"),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(_) => "runtime",
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let json_errors = cli.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if json_errors {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": err.message(), "kind": err.kind() })
                );
            } else {
                eprintln!("error: {}", err.message());
            }
            ExitCode::from(err.code())
        }
    }
}

/// Load the config file (or defaults), apply TEXFORGE_RENDERER, and return
/// it with the directory that anchors relative config paths.
fn load_config(path: &Option<PathBuf>) -> Result<(Config, PathBuf), CliError> {
    let mut cfg = match path {
        Some(p) => Config::load(p).map_err(|e| usage(e.to_string()))?,
        None => Config::default(),
    };
    cfg.apply_env();
    let base = path
        .as_ref()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, base))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Extract { corpus_dir, out } => cmd_extract(&corpus_dir, &out),
        Command::Build {
            corpus_dir,
            out,
            build,
        } => cmd_build(&cli.config, &corpus_dir, &out, &build),
        Command::Eval {
            pairs_file,
            out,
            eval,
        } => cmd_eval(&cli.config, &pairs_file, &out, &eval),
        Command::Stats { manifest, out } => cmd_stats(&manifest, &out),
        Command::Hist { manifest, out } => cmd_hist(&manifest, &out),
        Command::Stratify {
            manifest,
            out,
            sizes,
            seed,
        } => cmd_stratify(&cli.config, &manifest, &out, sizes.as_deref(), seed),
    }
}

fn cmd_extract(corpus_dir: &Path, out: &Path) -> Result<(), CliError> {
    if !corpus_dir.is_dir() {
        return Err(usage(format!(
            "{} is not a directory",
            corpus_dir.display()
        )));
    }
    let docs = load_corpus(corpus_dir)
        .with_context(|| format!("reading corpus {}", corpus_dir.display()))
        .map_err(runtime)?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(runtime)?;
    let mut units_jsonl = String::new();
    let mut drops_jsonl = String::new();
    let mut unit_count = 0usize;
    let mut drop_count = 0usize;
    for doc in &docs {
        let outcome = extract_units(doc);
        for u in &outcome.units {
            units_jsonl.push_str(
                &serde_json::json!({
                    "doc_id": u.doc_id,
                    "kind": u.kind,
                    "span": u.char_span,
                    "latex": u.formula.source(),
                    "category": u.formula.category(),
                })
                .to_string(),
            );
            units_jsonl.push('\n');
            unit_count += 1;
        }
        for d in &outcome.drops {
            drops_jsonl.push_str(&serde_json::to_string(d).expect("drop serializes"));
            drops_jsonl.push('\n');
            drop_count += 1;
        }
        eprintln!(
            "extracted {}: {} units, {} drops",
            doc.doc_id,
            outcome.units.len(),
            outcome.drops.len()
        );
    }
    std::fs::write(out.join("units.jsonl"), units_jsonl).map_err(runtime)?;
    std::fs::write(out.join("drops.jsonl"), drops_jsonl).map_err(runtime)?;
    println!(
        "{}",
        serde_json::json!({
            "documents": docs.len(),
            "units": unit_count,
            "drops": drop_count,
        })
    );
    Ok(())
}

fn cmd_build(
    config_path: &Option<PathBuf>,
    corpus_dir: &Path,
    out: &Path,
    flags: &BuildFlags,
) -> Result<(), CliError> {
    if !corpus_dir.is_dir() {
        return Err(usage(format!(
            "{} is not a directory",
            corpus_dir.display()
        )));
    }
    let (mut cfg, base) = load_config(config_path)?;
    if let Some(seed) = flags.seed {
        cfg.build.seed = seed;
    }
    if let Some(size) = flags.size {
        cfg.build.target_size = size;
    }
    if let Some(workers) = flags.workers {
        cfg.build.workers = workers;
    }
    eprintln!(
        "building {} candidates from {} (seed {})",
        cfg.build.target_size,
        corpus_dir.display(),
        cfg.build.seed
    );
    let output = dataset::build(Some(corpus_dir), &cfg, &base, out).map_err(runtime)?;
    eprintln!(
        "kept {} records, dropped {} candidates",
        output.stats.total_kept, output.stats.total_dropped
    );
    println!(
        "{}",
        serde_json::to_string(&output.stats).expect("stats serialize")
    );
    Ok(())
}

fn cmd_eval(
    config_path: &Option<PathBuf>,
    pairs_file: &Path,
    out: &Path,
    flags: &EvalFlags,
) -> Result<(), CliError> {
    let (mut cfg, _) = load_config(config_path)?;
    if let Some(v) = flags.offset {
        cfg.metrics.offset = v;
    }
    if let Some(v) = flags.dil_size {
        cfg.metrics.dil_size = v;
    }
    if let Some(v) = flags.binarize_threshold {
        cfg.metrics.binarize_threshold = v;
    }
    if flags.normalize {
        cfg.metrics.normalize = true;
    }

    let text = std::fs::read_to_string(pairs_file)
        .with_context(|| format!("reading {}", pairs_file.display()))
        .map_err(runtime)?;
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: EvalPair = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", pairs_file.display(), ln + 1))
            .map_err(runtime)?;
        pairs.push(pair);
    }
    eprintln!("evaluating {} pairs", pairs.len());

    let renderer = Arc::new(CachedRenderer::new(cfg.renderer.backend(), None));
    let profile = RenderProfile {
        renderer,
        font_id: "f0".to_string(),
        dpi: cfg.renderer.dpi,
        timeout_ms: cfg.renderer.timeout_ms,
    };
    let opts = EvalOptions {
        epmr: cfg.metrics.epmr_config(),
        normalize: cfg.metrics.normalize,
    };
    let report = evaluate_set(&pairs, &opts, &profile);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(runtime)?;
    }
    std::fs::write(
        out,
        serde_json::to_string_pretty(&report).expect("report serialize"),
    )
    .map_err(runtime)?;
    if let Some(csv_path) = &flags.csv {
        std::fs::write(csv_path, per_sample_csv(&report)).map_err(runtime)?;
    }
    for e in &report.errors {
        eprintln!("pair {}: {}", e.id, e.message);
    }
    println!(
        "{}",
        serde_json::to_string(&report.aggregates).expect("aggregates serialize")
    );
    Ok(())
}

fn cmd_stats(manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let manifest = Manifest::load(manifest_path).map_err(runtime)?;
    let drops = load_sibling_drops(manifest_path)?;
    let stats = dataset::stats(&manifest.records, &drops);
    stats.save(out).map_err(runtime)?;
    println!(
        "{}",
        serde_json::to_string(&stats).expect("stats serialize")
    );
    Ok(())
}

fn cmd_hist(manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let manifest = Manifest::load(manifest_path).map_err(runtime)?;
    let stats = dataset::stats(&manifest.records, &[]);
    let csv = stats.histogram_csv();
    std::fs::write(out, &csv).map_err(runtime)?;
    print!("{csv}");
    Ok(())
}

/// drops.jsonl next to the manifest feeds per-category fail rates when
/// present.
fn load_sibling_drops(manifest_path: &Path) -> Result<Vec<dataset::DropRecord>, CliError> {
    let Some(dir) = manifest_path.parent() else {
        return Ok(Vec::new());
    };
    let path = dir.join("drops.jsonl");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path).map_err(runtime)?;
    let mut drops = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let d: dataset::DropRecord = serde_json::from_str(line)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(runtime)?;
        drops.push(d);
    }
    Ok(drops)
}

fn parse_sizes(spec: &str) -> Result<BTreeMap<String, usize>, CliError> {
    let mut sizes = BTreeMap::new();
    if let Ok(n) = spec.trim().parse::<usize>() {
        for stratum in dataset::STRATA {
            sizes.insert(stratum.to_string(), n);
        }
        return Ok(sizes);
    }
    for part in spec.split(',') {
        let Some((name, count)) = part.split_once('=') else {
            return Err(usage(format!("--sizes entry '{part}' is not NAME=COUNT")));
        };
        let name = name.trim();
        if !dataset::STRATA.contains(&name) {
            return Err(usage(format!(
                "unknown stratum '{name}' (expected one of {:?})",
                dataset::STRATA
            )));
        }
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad count in '{part}'")))?;
        sizes.insert(name.to_string(), count);
    }
    Ok(sizes)
}

fn cmd_stratify(
    config_path: &Option<PathBuf>,
    manifest_path: &Path,
    out: &Path,
    sizes: Option<&str>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let (cfg, _) = load_config(config_path)?;
    let manifest = Manifest::load(manifest_path).map_err(runtime)?;
    let sizes = match sizes {
        Some(s) => parse_sizes(s)?,
        None => BTreeMap::new(),
    };
    let seed = seed.unwrap_or(cfg.build.seed);
    let strat = dataset::stratify_benchmark(&manifest.records, &sizes, seed);
    std::fs::create_dir_all(out).map_err(runtime)?;
    for w in &strat.warnings {
        eprintln!("warning: {w}");
    }
    let mut counts = BTreeMap::new();
    for (name, records) in &strat.subsets {
        let m = Manifest::new(records.clone()).map_err(runtime)?;
        m.save(&out.join(format!("{name}.jsonl")))
            .map_err(runtime)?;
        counts.insert(name.clone(), records.len());
    }
    println!("{}", serde_json::json!(counts));
    Ok(())
}
