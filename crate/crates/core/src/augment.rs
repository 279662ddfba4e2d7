//! Document-degradation augmentation: paper textures, multiplicative
//! composition, page-level effects (lighting, line noise, shadows), and
//! ink-level effects (bleed, fade).
//!
//! Everything is a pure function of its inputs and generator, so the same
//! seed always produces byte-identical images.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;

/// Pixels darker than this count as ink for the monotonicity contracts.
pub const INK_THRESHOLD: u8 = 128;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("texture directory {0} has no readable images")]
    EmptyTextureDir(PathBuf),
    #[error("texture directory not configured for Directory mode")]
    MissingTextureDir,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureMode {
    Procedural,
    Directory,
}

/// Where textures come from: a seeded procedural generator or a directory
/// of texture images.
#[derive(Debug, Clone)]
pub struct TextureSource {
    pub mode: TextureMode,
    pub dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TextureSource {
    fn default() -> Self {
        Self {
            mode: TextureMode::Procedural,
            dir: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Probability that a paper texture is composed under the render.
    pub p_texture: f64,
    pub p_lighting: f64,
    pub p_line_noise: f64,
    pub p_shadow: f64,
    pub p_bleed: f64,
    pub p_fade: f64,
    /// Maximum relative darkening of the lighting gradient, in [0, 1].
    pub lighting_strength: f64,
    pub line_count_range: (u32, u32),
    /// Ink bleed dilation radius in pixels; 0 disables bleed entirely.
    pub bleed_radius: u32,
    /// Fade exponent; values below 1 lighten ink, 1 is the identity.
    pub fade_gamma: f64,
    /// Chain order; any permutation of "texture", "ink", "paper".
    pub order: Vec<String>,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_texture: 0.9,
            p_lighting: 0.3,
            p_line_noise: 0.2,
            p_shadow: 0.2,
            p_bleed: 0.2,
            p_fade: 0.2,
            lighting_strength: 0.25,
            line_count_range: (1, 3),
            bleed_radius: 1,
            fade_gamma: 0.7,
            order: vec!["texture".into(), "ink".into(), "paper".into()],
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Configuration that leaves every image untouched.
    pub fn identity() -> Self {
        Self {
            p_texture: 0.0,
            p_lighting: 0.0,
            p_line_noise: 0.0,
            p_shadow: 0.0,
            p_bleed: 0.0,
            p_fade: 0.0,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), String> {
        for (name, p) in [
            ("p_texture", self.p_texture),
            ("p_lighting", self.p_lighting),
            ("p_line_noise", self.p_line_noise),
            ("p_shadow", self.p_shadow),
            ("p_bleed", self.p_bleed),
            ("p_fade", self.p_fade),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be in [0,1], got {p}"));
            }
        }
        if self.line_count_range.0 > self.line_count_range.1 {
            return Err("line_count_range min must be <= max".into());
        }
        if self.fade_gamma <= 0.0 {
            return Err("fade_gamma must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.lighting_strength) {
            return Err("lighting_strength must be in [0,1]".into());
        }
        for stage in &self.order {
            if !matches!(stage.as_str(), "texture" | "ink" | "paper") {
                return Err(format!("unknown augment stage '{stage}'"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Textures
// ---------------------------------------------------------------------------

/// Generate a paper texture of the requested size.
///
/// Procedural mode layers multi-octave value noise, sparse fiber streaks,
/// and a radial vignette; the mean intensity always lands in [200, 250].
/// Directory mode picks an image and random-crops or resamples it.
pub fn make_texture(
    size: (u32, u32),
    src: &TextureSource,
    rng: &mut impl Rng,
) -> Result<GrayImage, AugmentError> {
    let (w, h) = size;
    assert!(w >= 1 && h >= 1, "texture size must be positive");
    match src.mode {
        TextureMode::Procedural => Ok(procedural_texture(w, h, rng)),
        TextureMode::Directory => {
            let dir = src.dir.as_ref().ok_or(AugmentError::MissingTextureDir)?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("png") | Some("PNG")
                    )
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(AugmentError::EmptyTextureDir(dir.clone()));
            }
            let pick = &files[rng.gen_range(0..files.len())];
            let img = GrayImage::load_png(pick)
                .map_err(|_| AugmentError::EmptyTextureDir(dir.clone()))?;
            Ok(crop_or_resample(&img, w, h, rng))
        }
    }
}

fn crop_or_resample(img: &GrayImage, w: u32, h: u32, rng: &mut impl Rng) -> GrayImage {
    if img.width() >= w && img.height() >= h {
        let ox = rng.gen_range(0..=img.width() - w);
        let oy = rng.gen_range(0..=img.height() - h);
        let mut out = GrayImage::filled(w, h, 255);
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, img.get(ox + x, oy + y));
            }
        }
        out
    } else {
        img.resample(w, h)
    }
}

/// Value-noise lattice: random values at grid points, bilinear in between.
struct ValueNoise {
    cell: u32,
    gw: u32,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(w: u32, h: u32, cell: u32, rng: &mut impl Rng) -> Self {
        let gw = w / cell + 2;
        let gh = h / cell + 2;
        let grid = (0..gw as usize * gh as usize)
            .map(|_| rng.gen::<f64>())
            .collect();
        Self { cell, gw, grid }
    }

    fn at(&self, x: u32, y: u32) -> f64 {
        let fx = x as f64 / self.cell as f64;
        let fy = y as f64 / self.cell as f64;
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let gw = self.gw as usize;
        let v00 = self.grid[y0 * gw + x0];
        let v10 = self.grid[y0 * gw + x0 + 1];
        let v01 = self.grid[(y0 + 1) * gw + x0];
        let v11 = self.grid[(y0 + 1) * gw + x0 + 1];
        let sx = tx * tx * (3.0 - 2.0 * tx);
        let sy = ty * ty * (3.0 - 2.0 * ty);
        let a = v00 + (v10 - v00) * sx;
        let b = v01 + (v11 - v01) * sx;
        a + (b - a) * sy
    }
}

fn procedural_texture(w: u32, h: u32, rng: &mut impl Rng) -> GrayImage {
    let octaves: Vec<(ValueNoise, f64)> = [(32u32, 1.0), (16, 0.5), (8, 0.25), (4, 0.125)]
        .iter()
        .map(|&(cell, amp)| (ValueNoise::new(w, h, cell, rng), amp))
        .collect();
    let amp_sum: f64 = octaves.iter().map(|(_, a)| a).sum();

    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    let rmax = (cx * cx + cy * cy).sqrt().max(1.0);
    let vignette_strength = 0.05;

    let mut img = GrayImage::filled(w, h, 255);
    for y in 0..h {
        for x in 0..w {
            let n: f64 = octaves.iter().map(|(vn, a)| vn.at(x, y) * a).sum::<f64>() / amp_sum;
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let r = (dx * dx + dy * dy).sqrt() / rmax;
            let vignette = 1.0 - vignette_strength * r * r;
            let v = (214.0 + n * 32.0) * vignette;
            img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }

    // Sparse fiber streaks: short dark random walks.
    let fibers = ((w as u64 * h as u64) / 1500).clamp(1, 200) as u32;
    for _ in 0..fibers {
        let mut x = rng.gen_range(0..w) as i64;
        let mut y = rng.gen_range(0..h) as i64;
        let len = rng.gen_range(6..30);
        let darken = rng.gen_range(6..18) as i64;
        let (mut dx, dy) = (rng.gen_range(-1..=1i64), rng.gen_range(-1..=1i64));
        if dx == 0 && dy == 0 {
            dx = 1;
        }
        for _ in 0..len {
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                break;
            }
            let old = img.get(x as u32, y as u32) as i64;
            img.set(x as u32, y as u32, (old - darken).clamp(0, 255) as u8);
            x += dx + rng.gen_range(-1..=1);
            y += dy + rng.gen_range(-1..=1);
        }
    }

    // Nudge the mean into [205, 245] so the contract range [200, 250]
    // holds with slack.
    for _ in 0..4 {
        let mean = img.pixels().iter().map(|&p| p as f64).sum::<f64>() / img.pixels().len() as f64;
        if (205.0..=245.0).contains(&mean) {
            break;
        }
        let delta = (225.0 - mean).round() as i64;
        for p in img.pixels_mut() {
            *p = (*p as i64 + delta).clamp(0, 255) as u8;
        }
    }
    img
}

// ---------------------------------------------------------------------------
// Composition and effects
// ---------------------------------------------------------------------------

/// Multiplicative blend: `out = render * texture / 255` per pixel. Ink can
/// only stay at or below the local paper intensity, and darkening a render
/// pixel never lightens the output.
pub fn compose(render: &GrayImage, texture: &GrayImage) -> GrayImage {
    let tex = if texture.width() == render.width() && texture.height() == render.height() {
        texture.clone()
    } else {
        texture.resample(render.width(), render.height())
    };
    let mut out = render.clone();
    for (o, t) in out.pixels_mut().iter_mut().zip(tex.pixels()) {
        *o = ((*o as u32 * *t as u32) / 255) as u8;
    }
    out
}

/// Page-level effects: a smooth multiplicative lighting field, thin dark
/// lines, and soft shadow blobs, each drawn per its probability.
pub fn paper_augment(img: &GrayImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> GrayImage {
    let mut out = img.clone();
    if cfg.p_lighting > 0.0 && rng.gen_bool(cfg.p_lighting) {
        apply_lighting(&mut out, cfg.lighting_strength, rng);
    }
    if cfg.p_line_noise > 0.0 && rng.gen_bool(cfg.p_line_noise) {
        let k = rng.gen_range(cfg.line_count_range.0..=cfg.line_count_range.1);
        for _ in 0..k {
            draw_noise_line(&mut out, rng);
        }
    }
    if cfg.p_shadow > 0.0 && rng.gen_bool(cfg.p_shadow) {
        apply_shadow(&mut out, rng);
    }
    out
}

fn apply_lighting(img: &mut GrayImage, strength: f64, rng: &mut impl Rng) {
    let w = img.width() as f64;
    let h = img.height() as f64;
    let radial = rng.gen_bool(0.5);
    let (ox, oy) = (rng.gen::<f64>() * w, rng.gen::<f64>() * h);
    let angle = rng.gen::<f64>() * std::f64::consts::TAU;
    let (ca, sa) = (angle.cos(), angle.sin());
    let diag = (w * w + h * h).sqrt();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let t = if radial {
                let dx = x as f64 - ox;
                let dy = y as f64 - oy;
                ((dx * dx + dy * dy).sqrt() / diag).min(1.0)
            } else {
                let proj = (x as f64 * ca + y as f64 * sa) / diag;
                (proj + 0.5).clamp(0.0, 1.0)
            };
            let factor = 1.0 - strength * t;
            let v = (img.get(x, y) as f64 * factor).round().clamp(0.0, 255.0);
            img.set(x, y, v as u8);
        }
    }
}

fn draw_noise_line(img: &mut GrayImage, rng: &mut impl Rng) {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
    let (x1, y1) = (rng.gen_range(0..w), rng.gen_range(0..h));
    let intensity = rng.gen_range(40..=120) as u8;
    // Bresenham.
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y) = (x0, y0);
    let mut err = dx + dy;
    loop {
        let old = img.get(x as u32, y as u32);
        img.set(x as u32, y as u32, old.min(intensity));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn apply_shadow(img: &mut GrayImage, rng: &mut impl Rng) {
    let w = img.width() as f64;
    let h = img.height() as f64;
    let cx = rng.gen::<f64>() * w;
    let cy = rng.gen::<f64>() * h;
    let radius = (h.min(w) * rng.gen_range(0.2..0.6)).max(2.0);
    let strength = rng.gen_range(0.12..0.3);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let d = (dx * dx + dy * dy).sqrt();
            if d < radius {
                let falloff = 1.0 - d / radius;
                let factor = 1.0 - strength * falloff;
                let v = (img.get(x, y) as f64 * factor).round().clamp(0.0, 255.0);
                img.set(x, y, v as u8);
            }
        }
    }
}

/// Ink-level effects. Bleed is a grayscale min-filter dilation of radius
/// `bleed_radius` followed by a 3x3 box blur (radius 0 disables it, blur
/// included, so ink coverage can never shrink). Fade remaps intensities by
/// `i -> 255 * (i/255)^fade_gamma`; gamma below 1 lightens ink.
pub fn ink_augment(img: &GrayImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> GrayImage {
    let mut out = img.clone();
    if cfg.p_bleed > 0.0 && rng.gen_bool(cfg.p_bleed) && cfg.bleed_radius > 0 {
        out = box_blur3(&gray_dilate(&out, cfg.bleed_radius));
    }
    if cfg.p_fade > 0.0 && rng.gen_bool(cfg.p_fade) {
        out = fade(&out, cfg.fade_gamma);
    }
    out
}

/// Grayscale dilation of dark pixels: windowed minimum with a square
/// (2r+1)^2 element, separable.
pub fn gray_dilate(img: &GrayImage, radius: u32) -> GrayImage {
    if radius == 0 {
        return img.clone();
    }
    let r = radius as i64;
    let w = img.width() as i64;
    let h = img.height() as i64;
    // Horizontal pass.
    let mut horiz = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut m = 255u8;
            for k in (x - r).max(0)..=(x + r).min(w - 1) {
                m = m.min(img.get(k as u32, y as u32));
            }
            horiz.set(x as u32, y as u32, m);
        }
    }
    // Vertical pass.
    let mut out = horiz.clone();
    for y in 0..h {
        for x in 0..w {
            let mut m = 255u8;
            for k in (y - r).max(0)..=(y + r).min(h - 1) {
                m = m.min(horiz.get(x as u32, k as u32));
            }
            out.set(x as u32, y as u32, m);
        }
    }
    out
}

fn box_blur3(img: &GrayImage) -> GrayImage {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0u32;
            let mut n = 0u32;
            for ky in (y - 1).max(0)..=(y + 1).min(h - 1) {
                for kx in (x - 1).max(0)..=(x + 1).min(w - 1) {
                    sum += img.get(kx as u32, ky as u32) as u32;
                    n += 1;
                }
            }
            out.set(x as u32, y as u32, (sum / n) as u8);
        }
    }
    out
}

fn fade(img: &GrayImage, gamma: f64) -> GrayImage {
    let lut: Vec<u8> = (0..=255u32)
        .map(|i| {
            let v = 255.0 * (i as f64 / 255.0).powf(gamma);
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = lut[*p as usize];
    }
    out
}

/// Which effects a chain application actually performed.
pub type AppliedEffects = Vec<&'static str>;

/// Full augmentation chain in the configured stage order (texture
/// composition, then ink effects, then paper effects by default). With all
/// probabilities zero this is the pointwise identity. The returned effect
/// names list only stages that actually changed the image.
pub fn augment_chain(
    render: &GrayImage,
    src: &TextureSource,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(GrayImage, AppliedEffects), AugmentError> {
    let mut out = render.clone();
    let mut applied = Vec::new();
    for stage in &cfg.order {
        match stage.as_str() {
            "texture" => {
                if cfg.p_texture > 0.0 && rng.gen_bool(cfg.p_texture) {
                    let texture = make_texture((out.width(), out.height()), src, rng)?;
                    out = compose(&out, &texture);
                    applied.push("texture");
                }
            }
            "ink" => {
                let before = out.clone();
                out = ink_augment(&out, cfg, rng);
                if out != before {
                    applied.push("ink");
                }
            }
            "paper" => {
                let before = out.clone();
                out = paper_augment(&out, cfg, rng);
                if out != before {
                    applied.push("paper");
                }
            }
            other => panic!("unknown augment stage '{other}' (config unchecked)"),
        }
    }
    Ok((out, applied))
}
