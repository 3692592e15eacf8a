//! Procedural paired V-I corpus: parameterized figures rendered in colour
//! and as a heat map of their materials.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::benchmark::derive_seed;
use crate::corruptions::{ImageBuf, Modality};
use crate::dataset::{CameraSetting, CorpusMeta, PairSet, METADATA_FILE};

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(String),
    #[error("synthetic spec: {0}")]
    Spec(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub name: String,
    pub n_identities: usize,
    pub pairs_per_identity: usize,
    pub image_hw: (usize, usize),
    pub camera: CameraSetting,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            n_identities: 30,
            pairs_per_identity: 10,
            image_hw: (96, 48),
            camera: CameraSetting::CL,
        }
    }
}

/// Fixed per-identity look. Garment colours and heats come from small
/// palettes, so telling identities apart also needs the small items: logo,
/// shoes, hat, bag, the fine torso pattern and a hand-held object that shows
/// up warm in infrared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub torso_hue: f64,
    pub leg_hue: f64,
    pub torso_heat: f64,
    pub leg_heat: f64,
    /// Thermal texture of the torso fabric.
    pub pattern: Pattern,
    /// Printed texture of the torso, seen only in visible light.
    pub print: Pattern,
    pub torso_frac: f64,
    pub width_frac: f64,
    pub logo_hue: Option<f64>,
    pub shoe_tone: usize,
    pub carry: Option<Side>,
    pub bag: bool,
    pub hat: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Torso texture, a few pixels per stripe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Plain,
    Rows,
    Columns,
    Checks,
}

const PATTERNS: [Pattern; 4] = [Pattern::Plain, Pattern::Rows, Pattern::Columns, Pattern::Checks];

const HUES: [f64; 3] = [0.0, 0.33, 0.6];
const LOGO_HUES: [f64; 3] = [0.15, 0.5, 0.85];
const HEATS: [f64; 3] = [0.35, 0.6, 0.85];
const SHOES: [[f64; 3]; 3] = [[0.1, 0.1, 0.1], [0.92, 0.92, 0.9], [0.75, 0.15, 0.1]];
const SHOE_HEATS: [f64; 3] = [0.3, 0.45, 0.6];

impl Appearance {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            torso_hue: HUES[rng.random_range(0..HUES.len())],
            leg_hue: HUES[rng.random_range(0..HUES.len())],
            torso_heat: HEATS[rng.random_range(0..HEATS.len())],
            leg_heat: HEATS[rng.random_range(0..HEATS.len())],
            pattern: PATTERNS[rng.random_range(0..PATTERNS.len())],
            print: PATTERNS[rng.random_range(0..PATTERNS.len())],
            torso_frac: rng.random_range(0.28..0.38),
            width_frac: rng.random_range(0.32..0.46),
            logo_hue: rng.random_bool(0.75).then(|| LOGO_HUES[rng.random_range(0..LOGO_HUES.len())]),
            shoe_tone: rng.random_range(0..SHOES.len()),
            carry: match rng.random_range(0..3) {
                0 => None,
                1 => Some(Side::Left),
                _ => Some(Side::Right),
            },
            bag: rng.random_bool(0.4),
            hat: rng.random_bool(0.4),
        }
    }
}

/// Per-image nuisance: placement, scale and stance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
    pub stride: f64,
}

impl Pose {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            dx: rng.random_range(-0.08..0.08),
            dy: rng.random_range(-0.04..0.04),
            scale: rng.random_range(0.9..1.05),
            stride: rng.random_range(0.0..0.12),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Background,
    Head,
    Hat,
    Torso { print: bool, stripe: bool },
    Logo,
    Legs,
    Shoes,
    Bag,
    Carry,
}

fn inside(py: f64, px: f64, (y0, x0, y1, x1): (f64, f64, f64, f64)) -> bool {
    py >= y0 && py < y1 && px >= x0 && px < x1
}

/// Which body part covers each pixel, for one pose.
fn layout(a: &Appearance, pose: Pose, h: usize, w: usize) -> Vec<Part> {
    let (hf, wf) = (h as f64, w as f64);
    let s = pose.scale;
    let cx = wf * (0.5 + pose.dx);
    let top = hf * (0.06 + pose.dy);
    let head_ry = 0.075 * hf * s;
    let head_rx = 0.11 * wf * s;
    let head_cy = top + head_ry;
    let torso_top = head_cy + head_ry * 1.1;
    let torso_h = a.torso_frac * hf * s;
    let torso_bottom = torso_top + torso_h;
    let half_w = a.width_frac * wf * s / 2.0;
    let legs_bottom = (torso_bottom + 0.42 * hf * s).min(hf - 1.0);
    let shoes_top = legs_bottom - 0.05 * hf * s;
    let leg_w = half_w * 0.8;
    let period = 0.03 * hf * s;
    let dark = |pattern: Pattern, py: f64, px: f64| {
        let row = ((py - torso_top) / period).floor() as i64 % 2 == 1;
        let col = ((px - cx + half_w) / period).floor() as i64 % 2 == 1;
        match pattern {
            Pattern::Plain => false,
            Pattern::Rows => row,
            Pattern::Columns => col,
            Pattern::Checks => row != col,
        }
    };
    let logo_r = 0.1 * wf * s;
    let logo_c = (torso_top + 0.3 * torso_h, cx);
    let logo = (logo_c.0 - logo_r, logo_c.1 - logo_r, logo_c.0 + logo_r, logo_c.1 + logo_r);
    let carry_w = 0.12 * wf * s;
    let carry_y = torso_bottom - 0.1 * hf * s;
    let carry = match a.carry {
        Some(Side::Left) => Some((carry_y, cx - half_w - carry_w, carry_y + 0.09 * hf * s, cx - half_w)),
        Some(Side::Right) => Some((carry_y, cx + half_w, carry_y + 0.09 * hf * s, cx + half_w + carry_w)),
        None => None,
    };
    let bag = (torso_top + 0.15 * torso_h, cx + half_w, torso_bottom + 0.05 * hf, cx + half_w + 0.14 * wf * s);
    let mut parts = vec![Part::Background; h * w];
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let in_head = ((py - head_cy) / head_ry).powi(2) + ((px - cx) / head_rx).powi(2) <= 1.0;
            let part = if a.hat && in_head && py < head_cy - 0.3 * head_ry {
                Part::Hat
            } else if in_head {
                Part::Head
            } else if carry.is_some_and(|r| inside(py, px, r)) {
                Part::Carry
            } else if a.logo_hue.is_some() && inside(py, px, logo) {
                Part::Logo
            } else if py >= torso_top && py < torso_bottom && (px - cx).abs() <= half_w {
                Part::Torso {
                    print: dark(a.print, py, px),
                    stripe: dark(a.pattern, py, px),
                }
            } else if a.bag && a.carry != Some(Side::Right) && inside(py, px, bag) {
                Part::Bag
            } else if py >= torso_bottom && py < legs_bottom {
                let t = (py - torso_bottom) / (legs_bottom - torso_bottom);
                let spread = half_w * 0.25 + pose.stride * wf * t;
                let left = cx - spread - leg_w / 2.0;
                let right = cx + spread + leg_w / 2.0;
                if (px - left).abs() <= leg_w / 2.0 || (px - right).abs() <= leg_w / 2.0 {
                    if py >= shoes_top {
                        Part::Shoes
                    } else {
                        Part::Legs
                    }
                } else {
                    Part::Background
                }
            } else {
                Part::Background
            };
            parts[y * w + x] = part;
        }
    }
    parts
}

pub fn silhouette(a: &Appearance, pose: Pose, h: usize, w: usize) -> Vec<bool> {
    layout(a, pose, h, w).into_iter().map(|p| p != Part::Background).collect()
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn render_visible<R: Rng + ?Sized>(a: &Appearance, pose: Pose, h: usize, w: usize, rng: &mut R) -> ImageBuf {
    let parts = layout(a, pose, h, w);
    let light = rng.random_range(0.75..1.2);
    let cast: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.93..1.07));
    let bg = hsv(rng.random_range(0.0..1.0), rng.random_range(0.05..0.25), rng.random_range(0.35..0.65));
    let noise = Normal::new(0.0, 0.025).expect("valid sigma");
    let mut data = Vec::with_capacity(h * w * 3);
    for (i, part) in parts.iter().enumerate() {
        let shade = 1.0 - 0.15 * (i / w) as f64 / h as f64;
        let base = match part {
            Part::Background => bg,
            Part::Head => [0.87, 0.7, 0.58],
            Part::Hat => [0.12, 0.12, 0.14],
            Part::Torso { print: false, .. } => hsv(a.torso_hue, 0.75, 0.85),
            Part::Torso { print: true, .. } => hsv(a.torso_hue, 0.75, 0.4),
            Part::Logo => hsv(a.logo_hue.unwrap_or(0.0), 0.9, 0.95),
            Part::Legs => hsv(a.leg_hue, 0.7, 0.6),
            Part::Shoes => SHOES[a.shoe_tone],
            Part::Bag => [0.4, 0.26, 0.15],
            Part::Carry => [0.25, 0.25, 0.28],
        };
        for c in 0..3 {
            data.push(to_u8(base[c] * light * cast[c] * shade + noise.sample(rng)));
        }
    }
    ImageBuf::from_raw(h, w, data, Modality::Visible).expect("consistent image")
}

pub fn render_infrared<R: Rng + ?Sized>(a: &Appearance, pose: Pose, h: usize, w: usize, rng: &mut R) -> ImageBuf {
    let parts = layout(a, pose, h, w);
    let ambient = rng.random_range(0.1..0.22);
    let gain = rng.random_range(0.9..1.1);
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");
    let gray: Vec<u8> = parts
        .iter()
        .map(|part| {
            let heat = match part {
                Part::Background => ambient,
                Part::Head => 0.95,
                Part::Hat => 0.55,
                Part::Torso { stripe: false, .. } | Part::Logo => a.torso_heat,
                Part::Torso { stripe: true, .. } => a.torso_heat - 0.3,
                Part::Legs => a.leg_heat,
                Part::Shoes => SHOE_HEATS[a.shoe_tone],
                Part::Bag => 0.25,
                Part::Carry => 1.0,
            };
            to_u8(heat * gain + noise.sample(rng))
        })
        .collect();
    ImageBuf::from_gray(h, w, &gray).expect("consistent image")
}

impl Appearance {
    /// Same build and accessories with the visible-only attributes taken
    /// from `other`.
    fn with_visible_of(&self, other: &Appearance) -> Self {
        Self {
            torso_hue: other.torso_hue,
            leg_hue: other.leg_hue,
            logo_hue: other.logo_hue,
            print: other.print,
            ..self.clone()
        }
    }

    /// Same build and accessories with the infrared-only attributes taken
    /// from `other`.
    fn with_infrared_of(&self, other: &Appearance) -> Self {
        Self {
            torso_heat: other.torso_heat,
            leg_heat: other.leg_heat,
            pattern: other.pattern,
            ..self.clone()
        }
    }
}

/// Identity appearances for a corpus seed, distinct from each other.
///
/// Identities come in twins `(2j, 2j + 1)`. Even `j` gives twins that look the
/// same in visible light and differ only in infrared; odd `j` the reverse. A
/// single modality therefore cannot separate every identity.
pub fn appearances(n: usize, seed: u64) -> Vec<Appearance> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "appearance"));
    let mut out: Vec<Appearance> = Vec::with_capacity(n);
    while out.len() < n {
        let a = Appearance::sample(&mut rng);
        let Some(first) = out.len().checked_sub(1).filter(|k| k % 2 == 0).map(|k| &out[k]) else {
            if !out.contains(&a) {
                out.push(a);
            }
            continue;
        };
        let twin = if (out.len() / 2) % 2 == 0 { first.with_infrared_of(&a) } else { first.with_visible_of(&a) };
        if !out.contains(&twin) {
            out.push(twin);
        }
    }
    out
}

/// Renders the visible and infrared image of one pair.
pub fn render_pair(a: &Appearance, camera: CameraSetting, hw: (usize, usize), seed: u64) -> (ImageBuf, ImageBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose_v = Pose::sample(&mut rng);
    let pose_i = match camera {
        CameraSetting::CL => pose_v,
        CameraSetting::NCL => Pose::sample(&mut rng),
    };
    let v = render_visible(a, pose_v, hw.0, hw.1, &mut rng);
    let i = render_infrared(a, pose_i, hw.0, hw.1, &mut rng);
    (v, i)
}

pub fn identity_name(i: usize) -> String {
    format!("{i:04}")
}

fn pair_seed(seed: u64, identity: &str, k: usize) -> u64 {
    derive_seed(seed, &format!("{identity}/{k}"))
}

/// The corpus `gen_synthetic` would write, kept in memory.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> PairSet {
    let looks = appearances(spec.n_identities, seed);
    let mut set = PairSet {
        identities: (0..spec.n_identities).map(identity_name).collect(),
        ..PairSet::default()
    };
    for (id, a) in looks.iter().enumerate() {
        let name = identity_name(id);
        for k in 0..spec.pairs_per_identity {
            let (v, i) = render_pair(a, spec.camera, spec.image_hw, pair_seed(seed, &name, k));
            set.visible.push(v);
            set.infrared.push(i);
            set.labels.push(id);
            set.pair_ids.push(format!("{name}/{k}"));
        }
    }
    set
}

/// Writes the corpus under `out` as `<out>/<identity>/<V|I>/<idx>.png` plus
/// `corpus.json`. An existing `out` is refused unless `force` is set.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64, out: &Path, force: bool) -> Result<(), SyntheticError> {
    if spec.n_identities == 0 || spec.pairs_per_identity == 0 {
        return Err(SyntheticError::Spec("n_identities and pairs_per_identity must be positive".into()));
    }
    if spec.image_hw.0 < 16 || spec.image_hw.1 < 8 {
        return Err(SyntheticError::Spec("image_hw must be at least 16x8".into()));
    }
    let io = |p: &Path, e: &dyn std::fmt::Display| SyntheticError::Io {
        path: p.display().to_string(),
        msg: e.to_string(),
    };
    if out.exists() {
        if !force {
            return Err(SyntheticError::Exists(out.display().to_string()));
        }
        fs::remove_dir_all(out).map_err(|e| io(out, &e))?;
    }
    let looks = appearances(spec.n_identities, seed);
    let result = (|| {
        for (id, a) in looks.iter().enumerate() {
            let name = identity_name(id);
            for m in Modality::BOTH {
                let dir = out.join(&name).join(m.tag());
                fs::create_dir_all(&dir).map_err(|e| io(&dir, &e))?;
            }
            for k in 0..spec.pairs_per_identity {
                let (v, i) = render_pair(a, spec.camera, spec.image_hw, pair_seed(seed, &name, k));
                for (img, m) in [(v, Modality::Visible), (i, Modality::Infrared)] {
                    let path = out.join(&name).join(m.tag()).join(format!("{k}.png"));
                    img.save(&path).map_err(|e| io(&path, &e))?;
                }
            }
        }
        let meta = CorpusMeta {
            name: spec.name.clone(),
            camera: Some(spec.camera),
            identities: looks
                .iter()
                .enumerate()
                .map(|(i, a)| (identity_name(i), serde_json::to_value(a).expect("appearance serializes")))
                .collect(),
        };
        let path = out.join(METADATA_FILE);
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
        fs::write(&path, text).map_err(|e| io(&path, &e))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(out);
    }
    result
}
