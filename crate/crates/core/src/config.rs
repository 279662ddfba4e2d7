//! Typed TOML configuration. Unknown keys are rejected with an error
//! naming the key; every field has a documented default, so an empty file
//! (or no file) is a valid configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentConfig, TextureMode, TextureSource};
use crate::curate::DedupConfig;
use crate::enhance::{EnhanceConfig, SubstitutionTable};
use crate::metrics::EpmrConfig;
use crate::render::{CommandBackend, RenderBackend, SyntheticBackend};

/// Environment variable that overrides `renderer.command`.
pub const RENDERER_ENV: &str = "TEXFORGE_RENDERER";

/// `renderer.command` value selecting the built-in rasterizer.
pub const BUILTIN_RENDERER: &str = "builtin";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub renderer: RendererSection,
    pub enhance: EnhanceSection,
    pub augment: AugmentSection,
    pub curate: CurateSection,
    pub metrics: MetricsSection,
    pub build: BuildSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RendererSection {
    /// Either "builtin" or a command template run under `sh -c` with
    /// `{input-file}`, `{output-file}`, and optional `{dpi}` placeholders.
    pub command: String,
    pub timeout_ms: u64,
    pub dpi: u32,
    /// Preamble snippets; font ids f0, f1, ... index into this list.
    pub fonts: Vec<String>,
    /// Mixed into cache keys; bump when the external toolchain changes.
    pub version_tag: String,
}

impl Default for RendererSection {
    fn default() -> Self {
        Self {
            command: BUILTIN_RENDERER.to_string(),
            timeout_ms: 20_000,
            dpi: 200,
            fonts: vec![String::new()],
            version_tag: String::new(),
        }
    }
}

impl RendererSection {
    pub fn font_ids(&self) -> Vec<String> {
        (0..self.fonts.len().max(1))
            .map(|i| format!("f{i}"))
            .collect()
    }

    pub fn backend(&self) -> Arc<dyn RenderBackend> {
        if self.command == BUILTIN_RENDERER {
            Arc::new(SyntheticBackend)
        } else {
            let fonts = self
                .fonts
                .iter()
                .enumerate()
                .map(|(i, snippet)| (format!("f{i}"), snippet.clone()))
                .collect();
            Arc::new(CommandBackend {
                template: self.command.clone(),
                fonts,
                version_tag: self.version_tag.clone(),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceSection {
    pub p_hcat: f64,
    pub p_vcat: f64,
    pub p_subst: f64,
    pub p_text_inject: f64,
    pub max_units_per_formula: usize,
    pub short_formula_fraction: f64,
    /// Lexicon name -> file path (one word per line, UTF-8). When empty, a
    /// small built-in English list is used.
    pub lexicons: BTreeMap<String, String>,
    pub operator_classes: Vec<Vec<String>>,
    pub bracket_pairs: Vec<(String, String)>,
}

impl Default for EnhanceSection {
    fn default() -> Self {
        let table = SubstitutionTable::default();
        let defaults = EnhanceConfig::default();
        Self {
            p_hcat: defaults.p_hcat,
            p_vcat: defaults.p_vcat,
            p_subst: defaults.p_subst,
            p_text_inject: defaults.p_text_inject,
            max_units_per_formula: defaults.max_units_per_formula,
            short_formula_fraction: defaults.short_formula_fraction,
            lexicons: BTreeMap::new(),
            operator_classes: table.operator_classes,
            bracket_pairs: table.bracket_pairs,
        }
    }
}

impl EnhanceSection {
    /// Materialize the runtime config, loading lexicon files relative to
    /// `base_dir`.
    pub fn to_config(&self, base_dir: &Path, seed: u64) -> Result<EnhanceConfig, ConfigError> {
        let mut lexicons = BTreeMap::new();
        for (name, file) in &self.lexicons {
            let path = base_dir.join(file);
            let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Read {
                path: path.clone(),
                source,
            })?;
            let words: Vec<String> = text
                .lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            if words.is_empty() {
                return Err(ConfigError::Invalid(format!(
                    "lexicon '{name}' ({}) has no words",
                    path.display()
                )));
            }
            lexicons.insert(name.clone(), words);
        }
        if lexicons.is_empty() {
            lexicons = EnhanceConfig::default().lexicons;
        }
        let cfg = EnhanceConfig {
            p_hcat: self.p_hcat,
            p_vcat: self.p_vcat,
            p_subst: self.p_subst,
            p_text_inject: self.p_text_inject,
            max_units_per_formula: self.max_units_per_formula,
            short_formula_fraction: self.short_formula_fraction,
            lexicons,
            seed,
        };
        cfg.check().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    pub fn substitution_table(&self) -> SubstitutionTable {
        SubstitutionTable {
            operator_classes: self.operator_classes.clone(),
            bracket_pairs: self.bracket_pairs.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub p_texture: f64,
    pub p_lighting: f64,
    pub p_line_noise: f64,
    pub p_shadow: f64,
    pub p_bleed: f64,
    pub p_fade: f64,
    pub lighting_strength: f64,
    pub line_count_min: u32,
    pub line_count_max: u32,
    pub bleed_radius: u32,
    pub fade_gamma: f64,
    pub order: Vec<String>,
    /// "procedural" or "directory".
    pub texture_mode: String,
    pub texture_dir: Option<String>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let d = AugmentConfig::default();
        Self {
            p_texture: d.p_texture,
            p_lighting: d.p_lighting,
            p_line_noise: d.p_line_noise,
            p_shadow: d.p_shadow,
            p_bleed: d.p_bleed,
            p_fade: d.p_fade,
            lighting_strength: d.lighting_strength,
            line_count_min: d.line_count_range.0,
            line_count_max: d.line_count_range.1,
            bleed_radius: d.bleed_radius,
            fade_gamma: d.fade_gamma,
            order: d.order,
            texture_mode: "procedural".to_string(),
            texture_dir: None,
        }
    }
}

impl AugmentSection {
    pub fn to_config(&self, seed: u64) -> Result<AugmentConfig, ConfigError> {
        let cfg = AugmentConfig {
            p_texture: self.p_texture,
            p_lighting: self.p_lighting,
            p_line_noise: self.p_line_noise,
            p_shadow: self.p_shadow,
            p_bleed: self.p_bleed,
            p_fade: self.p_fade,
            lighting_strength: self.lighting_strength,
            line_count_range: (self.line_count_min, self.line_count_max),
            bleed_radius: self.bleed_radius,
            fade_gamma: self.fade_gamma,
            order: self.order.clone(),
            seed,
        };
        cfg.check().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    pub fn texture_source(&self, base_dir: &Path, seed: u64) -> Result<TextureSource, ConfigError> {
        let mode = match self.texture_mode.as_str() {
            "procedural" => TextureMode::Procedural,
            "directory" => TextureMode::Directory,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "texture_mode must be 'procedural' or 'directory', got '{other}'"
                )))
            }
        };
        Ok(TextureSource {
            mode,
            dir: self.texture_dir.as_ref().map(|d| base_dir.join(d)),
            seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurateSection {
    pub dedup_threshold: f64,
    pub bucket_width: usize,
    pub min_aspect_ratio: f64,
    pub max_aspect_ratio: f64,
    /// Ink closer than this to an image edge is a boundary overflow.
    pub boundary_margin: u32,
    /// Allowed relative deviation of the ink center from the image center.
    pub center_tolerance: f64,
    /// Flag formulas where an n-gram repeats more than this many times.
    pub max_repeats: usize,
}

impl Default for CurateSection {
    fn default() -> Self {
        let d = DedupConfig::default();
        Self {
            dedup_threshold: d.normalized_threshold,
            bucket_width: d.bucket_width,
            min_aspect_ratio: 0.05,
            max_aspect_ratio: 30.0,
            boundary_margin: 4,
            center_tolerance: 0.25,
            max_repeats: 6,
        }
    }
}

impl CurateSection {
    pub fn dedup_config(&self) -> DedupConfig {
        DedupConfig {
            normalized_threshold: self.dedup_threshold,
            bucket_width: self.bucket_width,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub offset: u32,
    pub dil_size: u32,
    pub binarize_threshold: u8,
    pub normalize: bool,
    /// Use the coarse-to-fine shift search instead of the exact grid.
    pub coarse_to_fine: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let d = EpmrConfig::default();
        Self {
            offset: d.offset,
            dil_size: d.dil_size,
            binarize_threshold: d.binarize_threshold,
            normalize: false,
            coarse_to_fine: false,
        }
    }
}

impl MetricsSection {
    pub fn epmr_config(&self) -> EpmrConfig {
        EpmrConfig {
            offset: self.offset,
            dil_size: self.dil_size,
            binarize_threshold: self.binarize_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildSection {
    /// Number of candidate formulas to assemble.
    pub target_size: usize,
    pub seed: u64,
    /// 0 means one worker per logical core.
    pub workers: usize,
    /// "seeded" (uniform per record) or "round_robin".
    pub font_assignment: String,
    /// Snippet bounds for prose harvested into the corpus lexicon.
    pub snippet_min_words: usize,
    pub snippet_max_words: usize,
}

impl Default for BuildSection {
    fn default() -> Self {
        Self {
            target_size: 1000,
            seed: 0,
            workers: 0,
            font_assignment: "seeded".to_string(),
            snippet_min_words: 2,
            snippet_max_words: 6,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.renderer.dpi < 72 {
            return Err(ConfigError::Invalid("renderer.dpi must be >= 72".into()));
        }
        if self.renderer.timeout_ms < 1000 {
            return Err(ConfigError::Invalid(
                "renderer.timeout_ms must be >= 1000".into(),
            ));
        }
        if self.renderer.fonts.is_empty() {
            return Err(ConfigError::Invalid(
                "renderer.fonts needs at least one entry".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.curate.dedup_threshold) {
            return Err(ConfigError::Invalid(
                "curate.dedup_threshold must be in [0,1]".into(),
            ));
        }
        if self.curate.min_aspect_ratio <= 0.0
            || self.curate.min_aspect_ratio > self.curate.max_aspect_ratio
        {
            return Err(ConfigError::Invalid(
                "curate aspect ratio bounds need 0 < min <= max".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.curate.center_tolerance) {
            return Err(ConfigError::Invalid(
                "curate.center_tolerance must be in [0, 0.5]".into(),
            ));
        }
        if self.curate.max_repeats < 2 {
            return Err(ConfigError::Invalid(
                "curate.max_repeats must be >= 2".into(),
            ));
        }
        if !matches!(
            self.build.font_assignment.as_str(),
            "seeded" | "round_robin"
        ) {
            return Err(ConfigError::Invalid(
                "build.font_assignment must be 'seeded' or 'round_robin'".into(),
            ));
        }
        if self.build.snippet_min_words == 0
            || self.build.snippet_min_words > self.build.snippet_max_words
        {
            return Err(ConfigError::Invalid(
                "build snippet bounds need 1 <= min <= max".into(),
            ));
        }
        // Sections with their own invariants.
        self.augment
            .to_config(0)
            .map(|_| ())
            .and_then(|_| self.enhance_probabilities_ok())?;
        Ok(())
    }

    fn enhance_probabilities_ok(&self) -> Result<(), ConfigError> {
        for (name, p) in [
            ("enhance.p_hcat", self.enhance.p_hcat),
            ("enhance.p_vcat", self.enhance.p_vcat),
            ("enhance.p_subst", self.enhance.p_subst),
            ("enhance.p_text_inject", self.enhance.p_text_inject),
            (
                "enhance.short_formula_fraction",
                self.enhance.short_formula_fraction,
            ),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be in [0,1], got {p}"
                )));
            }
        }
        if self.enhance.max_units_per_formula < 1 {
            return Err(ConfigError::Invalid(
                "enhance.max_units_per_formula must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Apply environment overrides (TEXFORGE_RENDERER).
    pub fn apply_env(&mut self) {
        if let Ok(cmd) = std::env::var(RENDERER_ENV) {
            if !cmd.is_empty() {
                self.renderer.command = cmd;
            }
        }
    }

    pub fn workers(&self) -> usize {
        if self.build.workers == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            self.build.workers
        }
    }
}
