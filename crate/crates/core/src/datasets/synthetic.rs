//! Procedural multi-domain glyph benchmark.
//!
//! Classes are asymmetric glyphs built from a family (arrow, ell, tee, ...),
//! a modifier (plain, barred, dotted, tall) and, past 40 classes, a mirror or
//! aspect variant. Domains are rendering styles: textured photographic fill
//! (`real`), flat fills with outlines (`clipart`), noisy low-frequency colour
//! (`painting`) and outline-only strokes (`sketch`). Every pixel of every
//! image is a pure function of `(seed, domain, class, index)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DomainDataset, LabeledExample, Raster, UnlabelledDataset};
use crate::error::{Error, Result};

pub const DEFAULT_DOMAINS: [&str; 4] = ["real", "clipart", "painting", "sketch"];

const FAMILIES: [&str; 10] = [
    "arrow", "ell", "tee", "flag", "chevron", "step", "wedge", "hook", "fork", "house",
];
const MODIFIERS: [&str; 4] = ["plain", "barred", "dotted", "tall"];
const VARIANTS: [&str; 4] = ["", "-mirrored", "-wide", "-mirrored-wide"];
const MAX_CLASSES: usize = FAMILIES.len() * MODIFIERS.len() * VARIANTS.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBenchmarkConfig {
    pub n_classes: usize,
    pub domains: Vec<String>,
    pub images_per_class_per_domain: usize,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticBenchmarkConfig {
    fn default() -> Self {
        Self {
            n_classes: 40,
            domains: DEFAULT_DOMAINS.iter().map(|s| s.to_string()).collect(),
            images_per_class_per_domain: 30,
            image_size: (32, 32),
            seed: 0,
        }
    }
}

impl SyntheticBenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 10 || self.n_classes > MAX_CLASSES {
            return Err(Error::validation(format!(
                "n_classes must be in [10, {MAX_CLASSES}], got {}",
                self.n_classes
            )));
        }
        if self.image_size.0 < 16 || self.image_size.1 < 16 {
            return Err(Error::validation(format!(
                "image_size {:?} is below 16x16",
                self.image_size
            )));
        }
        if self.images_per_class_per_domain < 20 {
            return Err(Error::validation(
                "images_per_class_per_domain must be at least 20",
            ));
        }
        if self.domains.is_empty() {
            return Err(Error::validation("at least one domain is required"));
        }
        for d in &self.domains {
            Style::for_domain(d)?;
        }
        Ok(())
    }
}

/// Class names for the first `n` glyph classes.
pub fn class_names(n: usize) -> Vec<String> {
    (0..n.min(MAX_CLASSES))
        .map(|id| {
            let family = FAMILIES[id % FAMILIES.len()];
            let modifier = MODIFIERS[(id / FAMILIES.len()) % MODIFIERS.len()];
            let variant = VARIANTS[id / (FAMILIES.len() * MODIFIERS.len())];
            format!("{family}-{modifier}{variant}")
        })
        .collect()
}

/// One labelled dataset per configured domain, each with `n_classes ×
/// images_per_class_per_domain` examples ordered by class then index.
pub fn generate_synthetic_benchmark(
    config: &SyntheticBenchmarkConfig,
) -> Result<BTreeMap<String, DomainDataset>> {
    config.validate()?;
    let names = class_names(config.n_classes);
    let mut out = BTreeMap::new();
    for domain in &config.domains {
        let mut examples = Vec::with_capacity(names.len() * config.images_per_class_per_domain);
        for (class_id, name) in names.iter().enumerate() {
            for index in 0..config.images_per_class_per_domain {
                examples.push(LabeledExample {
                    image: render_example(config, domain, class_id, index)?,
                    class_name: name.clone(),
                    domain_name: domain.clone(),
                });
            }
        }
        out.insert(
            domain.clone(),
            DomainDataset::new(domain.clone(), examples, names.clone())?,
        );
    }
    Ok(out)
}

/// Extra unlabelled images for `classes` in `domain`, using image indices
/// `start_index..start_index + per_class`. Hidden labels are kept for diagnostics.
pub fn render_unlabelled_images(
    config: &SyntheticBenchmarkConfig,
    domain: &str,
    classes: &[String],
    start_index: usize,
    per_class: usize,
) -> Result<UnlabelledDataset> {
    config.validate()?;
    let names = class_names(config.n_classes);
    let mut images = Vec::new();
    let mut hidden = Vec::new();
    for class in classes {
        let id = names
            .iter()
            .position(|n| n == class)
            .ok_or_else(|| Error::validation(format!("unknown synthetic class {class:?}")))?;
        for index in start_index..start_index + per_class {
            images.push(render_example(config, domain, id, index)?);
            hidden.push(class.clone());
        }
    }
    UnlabelledDataset::new(domain, images, Some(hidden))
}

/// Renders image `index` of class `class_id` in `domain`.
pub fn render_example(
    config: &SyntheticBenchmarkConfig,
    domain: &str,
    class_id: usize,
    index: usize,
) -> Result<Raster> {
    let style = Style::for_domain(domain)?;
    if class_id >= MAX_CLASSES {
        return Err(Error::validation(format!("class id {class_id} out of range")));
    }
    let (h, w) = config.image_size;
    if h < 16 || w < 16 {
        return Err(Error::validation(format!(
            "image_size {:?} is below 16x16",
            config.image_size
        )));
    }
    let seed = mix(&[config.seed, fnv1a(domain.as_bytes()), class_id as u64, index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let glyph = Glyph::new(class_id);
    let placement = Placement::sample(&mut rng, h, w);
    let data = style.render(&glyph, &placement, h, w, &mut rng);
    Raster::new(h, w, 3, data)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x100000001b3)
    })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f6a8885a308d3u64, |h, p| splitmix(h ^ splitmix(*p)))
}

type P = (f32, f32);

enum Primitive {
    Polygon(Vec<P>),
    Capsule(P, P, f32),
    Disc(P, f32),
}

fn sd_segment(p: P, a: P, b: P) -> f32 {
    let (pax, pay) = (p.0 - a.0, p.1 - a.1);
    let (bax, bay) = (b.0 - a.0, b.1 - a.1);
    let t = ((pax * bax + pay * bay) / (bax * bax + bay * bay)).clamp(0.0, 1.0);
    let (dx, dy) = (pax - bax * t, pay - bay * t);
    (dx * dx + dy * dy).sqrt()
}

fn sd_polygon(p: P, v: &[P]) -> f32 {
    let mut d = (p.0 - v[0].0).powi(2) + (p.1 - v[0].1).powi(2);
    let mut s = 1.0f32;
    let n = v.len();
    let mut j = n - 1;
    for i in 0..n {
        let e = (v[j].0 - v[i].0, v[j].1 - v[i].1);
        let w = (p.0 - v[i].0, p.1 - v[i].1);
        let t = ((w.0 * e.0 + w.1 * e.1) / (e.0 * e.0 + e.1 * e.1)).clamp(0.0, 1.0);
        let b = (w.0 - e.0 * t, w.1 - e.1 * t);
        d = d.min(b.0 * b.0 + b.1 * b.1);
        let c1 = p.1 >= v[i].1;
        let c2 = p.1 < v[j].1;
        let c3 = e.0 * w.1 > e.1 * w.0;
        if (c1 && c2 && c3) || (!c1 && !c2 && !c3) {
            s = -s;
        }
        j = i;
    }
    s * d.sqrt()
}

impl Primitive {
    fn sdf(&self, p: P) -> f32 {
        match self {
            Primitive::Polygon(v) => sd_polygon(p, v),
            Primitive::Capsule(a, b, r) => sd_segment(p, *a, *b) - r,
            Primitive::Disc(c, r) => ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt() - r,
        }
    }

    fn map(self, f: impl Fn(P) -> P, radius_scale: f32) -> Primitive {
        match self {
            Primitive::Polygon(v) => {
                let mut v: Vec<P> = v.into_iter().map(&f).collect();
                // keep orientation-independent winding for the sign test
                if signed_area(&v) < 0.0 {
                    v.reverse();
                }
                Primitive::Polygon(v)
            }
            Primitive::Capsule(a, b, r) => Primitive::Capsule(f(a), f(b), r * radius_scale),
            Primitive::Disc(c, r) => Primitive::Disc(f(c), r * radius_scale),
        }
    }
}

fn signed_area(v: &[P]) -> f32 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f32>()
        * 0.5
}

/// Class geometry in canonical coordinates (`y` up, extent about `[-1, 1]²`).
struct Glyph {
    parts: Vec<Primitive>,
}

impl Glyph {
    fn new(class_id: usize) -> Self {
        let family = class_id % FAMILIES.len();
        let modifier = (class_id / FAMILIES.len()) % MODIFIERS.len();
        let variant = class_id / (FAMILIES.len() * MODIFIERS.len());
        let mut parts = family_parts(family);

        let (sx, sy, tx, ty) = match modifier {
            1 => (0.8, 0.8, 0.0, 0.18),
            2 => (0.8, 0.8, -0.15, -0.15),
            3 => (0.6, 1.0, 0.0, 0.0),
            _ => (1.0, 1.0, 0.0, 0.0),
        };
        let rs = if modifier == 3 { 0.8 } else { sx };
        parts = parts
            .into_iter()
            .map(|p| p.map(|(x, y)| (x * sx + tx, y * sy + ty), rs))
            .collect();
        match modifier {
            1 => parts.push(Primitive::Capsule((-0.7, -0.88), (0.7, -0.88), 0.1)),
            2 => parts.push(Primitive::Disc((0.72, 0.72), 0.2)),
            _ => {}
        }

        let mirror = variant & 1 == 1;
        let wide = variant & 2 == 2;
        if mirror || wide {
            let mx = if mirror { -1.0 } else { 1.0 };
            let my = if wide { 0.7 } else { 1.0 };
            parts = parts
                .into_iter()
                .map(|p| p.map(|(x, y)| (x * mx, y * my), 1.0))
                .collect();
        }
        Self { parts }
    }

    fn sdf(&self, p: P) -> f32 {
        self.parts
            .iter()
            .map(|q| q.sdf(p))
            .fold(f32::INFINITY, f32::min)
    }
}

fn family_parts(family: usize) -> Vec<Primitive> {
    use Primitive::*;
    match family {
        0 => vec![Polygon(vec![
            (-0.2, -0.9),
            (0.2, -0.9),
            (0.2, 0.1),
            (0.55, 0.1),
            (0.0, 0.9),
            (-0.55, 0.1),
            (-0.2, 0.1),
        ])],
        1 => vec![Polygon(vec![
            (-0.6, -0.8),
            (0.6, -0.8),
            (0.6, -0.4),
            (-0.2, -0.4),
            (-0.2, 0.9),
            (-0.6, 0.9),
        ])],
        2 => vec![Polygon(vec![
            (-0.75, 0.9),
            (-0.75, 0.5),
            (-0.2, 0.5),
            (-0.2, -0.9),
            (0.2, -0.9),
            (0.2, 0.5),
            (0.75, 0.5),
            (0.75, 0.9),
        ])],
        3 => vec![
            Polygon(vec![(-0.6, -0.9), (-0.4, -0.9), (-0.4, 0.9), (-0.6, 0.9)]),
            Polygon(vec![(-0.4, 0.1), (0.7, 0.5), (-0.4, 0.9)]),
        ],
        4 => vec![Polygon(vec![
            (-0.8, -0.6),
            (-0.45, -0.6),
            (0.0, 0.2),
            (0.45, -0.6),
            (0.8, -0.6),
            (0.0, 0.8),
        ])],
        5 => vec![Polygon(vec![
            (-0.8, -0.8),
            (0.8, -0.8),
            (0.8, 0.8),
            (0.3, 0.8),
            (0.3, 0.3),
            (-0.25, 0.3),
            (-0.25, -0.25),
            (-0.8, -0.25),
        ])],
        6 => vec![Polygon(vec![(-0.7, -0.8), (0.8, -0.8), (-0.7, 0.8)])],
        7 => vec![
            Capsule((0.3, 0.85), (0.3, -0.35), 0.18),
            Capsule((0.3, -0.35), (0.05, -0.75), 0.18),
            Capsule((0.05, -0.75), (-0.35, -0.75), 0.18),
            Capsule((-0.35, -0.75), (-0.55, -0.4), 0.18),
        ],
        8 => vec![
            Capsule((0.0, -0.9), (0.0, 0.0), 0.16),
            Capsule((0.0, 0.0), (-0.6, 0.85), 0.16),
            Capsule((0.0, 0.0), (0.55, 0.6), 0.16),
        ],
        _ => vec![Polygon(vec![
            (-0.65, -0.85),
            (0.65, -0.85),
            (0.65, 0.15),
            (0.0, 0.85),
            (-0.65, 0.15),
        ])],
    }
}

/// Per-image pose: centre, half-extent in pixels and a small rotation.
struct Placement {
    cx: f32,
    cy: f32,
    half: f32,
    cos: f32,
    sin: f32,
}

impl Placement {
    fn sample(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let side = h.min(w) as f32;
        let half = side * rng.random_range(0.28..0.38);
        let slack_x = (w as f32 / 2.0 - half - 1.0).max(0.0);
        let slack_y = (h as f32 / 2.0 - half - 1.0).max(0.0);
        let cx = w as f32 / 2.0 + rng.random_range(-1.0..=1.0) * slack_x;
        let cy = h as f32 / 2.0 + rng.random_range(-1.0..=1.0) * slack_y;
        let angle: f32 = rng.random_range(-0.26..0.26);
        Self {
            cx,
            cy,
            half,
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    /// Canonical coordinates of pixel centre `(y, x)`.
    fn canonical(&self, y: usize, x: usize) -> P {
        let dx = (x as f32 + 0.5 - self.cx) / self.half;
        let dy = -(y as f32 + 0.5 - self.cy) / self.half;
        (
            self.cos * dx + self.sin * dy,
            -self.sin * dx + self.cos * dy,
        )
    }
}

/// Smooth random field on a coarse `gy×gx` lattice, bilinearly interpolated.
struct ValueNoise {
    gy: usize,
    gx: usize,
    grid: Vec<f32>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, gy: usize, gx: usize) -> Self {
        let grid = (0..(gy + 1) * (gx + 1))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self { gy, gx, grid }
    }

    /// `u, v` in `[0, 1]`.
    fn at(&self, v: f32, u: f32) -> f32 {
        let fy = v.clamp(0.0, 1.0) * self.gy as f32;
        let fx = u.clamp(0.0, 1.0) * self.gx as f32;
        let (iy, ix) = ((fy as usize).min(self.gy - 1), (fx as usize).min(self.gx - 1));
        let (ty, tx) = (smooth(fy - iy as f32), smooth(fx - ix as f32));
        let g = |y: usize, x: usize| self.grid[y * (self.gx + 1) + x];
        let top = g(iy, ix) * (1.0 - tx) + g(iy, ix + 1) * tx;
        let bot = g(iy + 1, ix) * (1.0 - tx) + g(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

fn coverage(sdf_px: f32, softness: f32) -> f32 {
    (0.5 - sdf_px / softness).clamp(0.0, 1.0)
}

fn random_color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

fn luminance(c: [f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn gauss(rng: &mut ChaCha8Rng) -> f32 {
    // Irwin-Hall approximation; adequate for pixel grain.
    (0..4).map(|_| rng.random::<f32>()).sum::<f32>() - 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Style {
    Photo,
    Clipart,
    Painting,
    Sketch,
}

impl Style {
    fn for_domain(name: &str) -> Result<Style> {
        let lower = name.to_ascii_lowercase();
        let style = if lower.starts_with("real") || lower.starts_with("photo") {
            Style::Photo
        } else if lower.starts_with("clipart") {
            Style::Clipart
        } else if lower.starts_with("painting") {
            Style::Painting
        } else if lower.starts_with("sketch") {
            Style::Sketch
        } else {
            return Err(Error::validation(format!(
                "no synthetic rendering style for domain {name:?}"
            )));
        };
        Ok(style)
    }

    fn render(
        self,
        glyph: &Glyph,
        pose: &Placement,
        h: usize,
        w: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f32> {
        let mut out = vec![0.0f32; h * w * 3];
        let sdf: Vec<f32> = (0..h * w)
            .map(|i| glyph.sdf(pose.canonical(i / w, i % w)) * pose.half)
            .collect();
        let put = |out: &mut Vec<f32>, i: usize, c: [f32; 3]| {
            for k in 0..3 {
                out[i * 3 + k] = c[k].clamp(0.0, 1.0);
            }
        };
        match self {
            Style::Photo => {
                let top = random_color(rng, 0.3, 1.0);
                let bottom = random_color(rng, 0.0, 0.7);
                let object = random_color(rng, 0.0, 1.0);
                let bg_tex = ValueNoise::new(rng, 6, 6);
                let obj_tex = ValueNoise::new(rng, 8, 8);
                // shadow offset down-right
                let shadow: Vec<f32> = (0..h * w)
                    .map(|i| {
                        let (y, x) = (i / w, i % w);
                        let sy = y.saturating_sub(2);
                        let sx = x.saturating_sub(2);
                        coverage(sdf[sy * w + sx], 2.5)
                    })
                    .collect();
                for i in 0..h * w {
                    let (y, x) = (i / w, i % w);
                    let (v, u) = (y as f32 / (h - 1) as f32, x as f32 / (w - 1) as f32);
                    let t = 0.12 * bg_tex.at(v, u);
                    let dark = 1.0 - 0.3 * shadow[i];
                    let mut bg = [0.0; 3];
                    for k in 0..3 {
                        bg[k] = ((top[k] * (1.0 - v) + bottom[k] * v) + t) * dark
                            + 0.03 * gauss(rng);
                    }
                    let cov = coverage(sdf[i], 1.0);
                    let (_, cv) = pose.canonical(y, x);
                    let shade = 1.0 + 0.25 * cv + 0.1 * obj_tex.at(v, u);
                    let mut px = [0.0; 3];
                    for k in 0..3 {
                        px[k] = bg[k] * (1.0 - cov) + object[k] * shade * cov;
                    }
                    put(&mut out, i, px);
                }
            }
            Style::Clipart => {
                const PALETTE: [[f32; 3]; 8] = [
                    [0.9, 0.1, 0.1],
                    [0.1, 0.6, 0.1],
                    [0.1, 0.2, 0.9],
                    [0.95, 0.8, 0.1],
                    [0.6, 0.1, 0.7],
                    [0.1, 0.7, 0.8],
                    [0.95, 0.5, 0.1],
                    [0.3, 0.3, 0.3],
                ];
                let bg = random_color(rng, 0.0, 1.0);
                let fill = PALETTE[rng.random_range(0..PALETTE.len())];
                let ink = rng.random_range(0.0..0.15);
                let width = rng.random_range(1.0..1.6);
                for i in 0..h * w {
                    let cov = coverage(sdf[i], 1.0);
                    let edge = (width / 2.0 + 0.5 - sdf[i].abs()).clamp(0.0, 1.0);
                    let mut px = [0.0; 3];
                    for k in 0..3 {
                        let base = bg[k] * (1.0 - cov) + fill[k] * cov;
                        px[k] = base * (1.0 - edge) + ink * edge;
                    }
                    put(&mut out, i, px);
                }
            }
            Style::Painting => {
                let a = random_color(rng, 0.1, 0.9);
                let b = random_color(rng, 0.1, 0.9);
                let bg_lum = 0.5 * (luminance(a) + luminance(b));
                let object = if bg_lum > 0.5 {
                    random_color(rng, 0.0, 0.35)
                } else {
                    random_color(rng, 0.65, 1.0)
                };
                let blend = ValueNoise::new(rng, 4, 4);
                let streak = ValueNoise::new(rng, 10, 3);
                let obj_tex = ValueNoise::new(rng, 5, 5);
                for i in 0..h * w {
                    let (y, x) = (i / w, i % w);
                    let (v, u) = (y as f32 / (h - 1) as f32, x as f32 / (w - 1) as f32);
                    let m = 0.5 + 0.5 * blend.at(v, u);
                    let s = 0.15 * streak.at(v, u);
                    let cov = coverage(sdf[i], 1.8);
                    let ot = 0.25 * obj_tex.at(v, u);
                    let mut px = [0.0; 3];
                    for k in 0..3 {
                        let bg = a[k] * m + b[k] * (1.0 - m) + s;
                        px[k] = bg * (1.0 - cov) + (object[k] + ot) * cov + 0.02 * gauss(rng);
                    }
                    put(&mut out, i, px);
                }
            }
            Style::Sketch => {
                let light_paper = rng.random_bool(0.5);
                let (paper, ink) = if light_paper {
                    (rng.random_range(0.8..1.0), rng.random_range(0.05..0.3))
                } else {
                    (rng.random_range(0.05..0.25), rng.random_range(0.8..1.0))
                };
                let width = rng.random_range(0.8..1.4);
                let pressure = ValueNoise::new(rng, 6, 6);
                let hatch_period = rng.random_range(3.5..5.5);
                let hatch = rng.random_bool(0.5);
                for i in 0..h * w {
                    let (y, x) = (i / w, i % w);
                    let (v, u) = (y as f32 / (h - 1) as f32, x as f32 / (w - 1) as f32);
                    let stroke = (width / 2.0 + 0.5 - sdf[i].abs()).clamp(0.0, 1.0)
                        * (0.75 + 0.25 * pressure.at(v, u));
                    let mut amount = stroke;
                    if hatch && sdf[i] < 0.0 {
                        let phase = ((x + y) as f32 / hatch_period).fract();
                        if phase < 0.3 {
                            amount = amount.max(0.35);
                        }
                    }
                    let g = paper * (1.0 - amount) + ink * amount + 0.02 * gauss(rng);
                    put(&mut out, i, [g, g, g]);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_names_are_distinct() {
        let n = class_names(MAX_CLASSES);
        let set: std::collections::BTreeSet<_> = n.iter().collect();
        assert_eq!(set.len(), MAX_CLASSES);
        assert_eq!(n[0], "arrow-plain");
        assert_eq!(n[11], "ell-barred");
    }

    #[test]
    fn config_validation() {
        let mut c = SyntheticBenchmarkConfig::default();
        assert!(c.validate().is_ok());
        c.image_size = (12, 32);
        assert!(c.validate().is_err());
        c = SyntheticBenchmarkConfig {
            n_classes: 5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = SyntheticBenchmarkConfig {
            domains: vec!["infograph".into()],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn glyph_interiors_are_negative() {
        for id in 0..MAX_CLASSES {
            let g = Glyph::new(id);
            let inside = (-20..=20)
                .flat_map(|a| (-20..=20).map(move |b| (a as f32 / 20.0, b as f32 / 20.0)))
                .filter(|p| g.sdf(*p) < 0.0)
                .count();
            assert!(inside > 40, "class {id} covers only {inside} lattice points");
            assert!(g.sdf((1.6, 1.6)) > 0.0);
        }
    }

    #[test]
    fn distinct_classes_render_differently() {
        let cfg = SyntheticBenchmarkConfig::default();
        let a = render_example(&cfg, "sketch", 0, 0).unwrap();
        let b = render_example(&cfg, "sketch", 1, 0).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, render_example(&cfg, "sketch", 0, 0).unwrap());
    }
}
