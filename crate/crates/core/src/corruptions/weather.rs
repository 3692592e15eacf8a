use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::blur::{motion_taps, streak};
use super::filters::{gaussian_blur, plasma_fractal, resize, Planes};

pub(crate) struct SnowParams {
    pub mean: f64,
    pub std: f64,
    pub scale: f64,
    pub threshold: f64,
    pub blur_radius: f64,
    pub blur_sigma: f64,
    pub blend: f64,
}

impl SnowParams {
    pub fn from_table(p: &impl Fn(&str) -> f64) -> Self {
        Self {
            mean: p("mean"),
            std: p("std"),
            scale: p("scale"),
            threshold: p("threshold"),
            blur_radius: p("blur_radius"),
            blur_sigma: p("blur_sigma"),
            blend: p("blend"),
        }
    }
}

fn normal_field<R: Rng + ?Sized>(n: usize, mean: f64, std: f64, rng: &mut R) -> Vec<f32> {
    let d = Normal::new(mean, std).expect("finite normal");
    (0..n).map(|_| d.sample(rng) as f32).collect()
}

/// Falling snow: thresholded coarse noise smeared along a steep direction,
/// added twice (the second copy rotated by 180 degrees) over a whitened
/// image.
pub(crate) fn snow<R: Rng + ?Sized>(x: &mut Planes, p: &SnowParams, rng: &mut R) {
    let (h, w) = (x.h, x.w);
    let gh = ((h as f64 / p.scale).ceil() as usize).max(1);
    let gw = ((w as f64 / p.scale).ceil() as usize).max(1);
    let coarse = normal_field(gh * gw, p.mean, p.std, rng);
    let angle = rng.random_range(-135.0f32..-45.0).to_radians();
    let mut layer = resize(&coarse, gh, gw, h, w);
    let thr = p.threshold as f32;
    layer.iter_mut().for_each(|v| {
        if *v < thr {
            *v = 0.0
        }
    });
    let layer = streak(&layer, h, w, &motion_taps(p.blur_radius, p.blur_sigma), angle);
    let lum = x.luminance();
    let blend = p.blend as f32;
    for plane in &mut x.planes {
        for (i, v) in plane.iter_mut().enumerate() {
            let white = v.max(lum[i] * 1.5 + 0.5);
            *v = blend * *v + (1.0 - blend) * white;
            *v += layer[i] + layer[h * w - 1 - i];
        }
    }
    x.clip();
}

/// Procedural ice texture: a soft haze plus short bright needles.
fn frost_texture<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Vec<f32> {
    let size = h.max(w).next_power_of_two().max(2);
    let haze = plasma_fractal(size, 1.8, rng);
    let mut tex: Vec<f32> = (0..h * w)
        .map(|i| 0.35 + 0.3 * haze[(i / w) * size + i % w])
        .collect();
    let needles = (h * w / 30).max(1);
    for _ in 0..needles {
        let (mut y, mut xx) = (rng.random_range(0.0..h as f32), rng.random_range(0.0..w as f32));
        let angle = rng.random_range(0.0..std::f32::consts::TAU);
        let len = rng.random_range(2.0f32..10.0);
        let bright = rng.random_range(0.2f32..0.5);
        let (dy, dx) = (angle.sin() * 0.5, angle.cos() * 0.5);
        for _ in 0..(len * 2.0) as usize {
            if y >= 0.0 && xx >= 0.0 && (y as usize) < h && (xx as usize) < w {
                let t = &mut tex[y as usize * w + xx as usize];
                *t = (*t + bright).min(1.0);
            }
            y += dy;
            xx += dx;
        }
    }
    gaussian_blur(&tex, h, w, 0.5)
}

/// Ice tint of the frost layer; infrared uses its luminance.
const FROST_RGB: [f32; 3] = [0.82, 0.9, 1.0];

pub(crate) fn frost<R: Rng + ?Sized>(
    x: &mut Planes,
    image_weight: f64,
    frost_weight: f64,
    rng: &mut R,
) {
    let tex = frost_texture(x.h, x.w, rng);
    let tint = x.tint(FROST_RGB);
    let (a, b) = (image_weight as f32, frost_weight as f32);
    for (plane, &c) in x.planes.iter_mut().zip(&tint) {
        for (v, &t) in plane.iter_mut().zip(&tex) {
            *v = a * *v + b * c * t;
        }
    }
    x.clip();
}

pub(crate) fn fog<R: Rng + ?Sized>(x: &mut Planes, strength: f64, decay: f64, rng: &mut R) {
    let (h, w) = (x.h, x.w);
    let size = h.max(w).next_power_of_two().max(2);
    let fractal = plasma_fractal(size, decay, rng);
    let peak = x.planes.iter().flatten().cloned().fold(0.0f32, f32::max);
    let s = strength as f32;
    let norm = peak / (peak + s);
    for plane in &mut x.planes {
        for (i, v) in plane.iter_mut().enumerate() {
            *v = (*v + s * fractal[(i / w) * size + i % w]) * norm;
        }
    }
    x.clip();
}

/// Slanted translucent streaks shared by every channel.
pub(crate) fn rain<R: Rng + ?Sized>(
    x: &mut Planes,
    density: f64,
    length: f64,
    intensity: f64,
    rng: &mut R,
) {
    let (h, w) = (x.h, x.w);
    let slant = rng.random_range(-20.0f32..20.0).to_radians();
    let (dy, dx) = (slant.cos() * 0.5, slant.sin() * 0.5);
    let drops = ((density * (h * w) as f64).round() as usize).max(1);
    let mut mask = vec![0.0f32; h * w];
    for _ in 0..drops {
        let (mut y, mut xx) = (rng.random_range(0.0..h as f32), rng.random_range(0.0..w as f32));
        let len = length as f32 * rng.random_range(0.7f32..1.3);
        for _ in 0..(len * 2.0) as usize {
            if y >= 0.0 && xx >= 0.0 && (y as usize) < h && (xx as usize) < w {
                mask[y as usize * w + xx as usize] = 1.0;
            }
            y += dy;
            xx += dx;
        }
    }
    let mask = gaussian_blur(&mask, h, w, 0.5);
    let a = intensity as f32;
    for plane in &mut x.planes {
        for (v, &m) in plane.iter_mut().zip(&mask) {
            let k = (m * a).min(1.0);
            *v = *v * (1.0 - k) + 0.85 * k;
        }
    }
    x.clip();
}

pub(crate) struct SpatterParams {
    pub loc: f64,
    pub scale: f64,
    pub sigma: f64,
    pub threshold: f64,
    pub intensity: f64,
    pub mud: bool,
}

impl SpatterParams {
    pub fn from_table(p: &impl Fn(&str) -> f64) -> Self {
        Self {
            loc: p("loc"),
            scale: p("scale"),
            sigma: p("sigma"),
            threshold: p("threshold"),
            intensity: p("intensity"),
            mud: p("mud") > 0.5,
        }
    }
}

const WATER_RGB: [f32; 3] = [175.0 / 255.0, 238.0 / 255.0, 238.0 / 255.0];
const MUD_RGB: [f32; 3] = [63.0 / 255.0, 42.0 / 255.0, 20.0 / 255.0];

/// Water droplets (added pale blue) or mud splashes (opaque brown); both
/// colours become their luminance on infrared.
pub(crate) fn spatter<R: Rng + ?Sized>(x: &mut Planes, p: &SpatterParams, rng: &mut R) {
    let (h, w) = (x.h, x.w);
    let layer = gaussian_blur(&normal_field(h * w, p.loc, p.scale, rng), h, w, p.sigma);
    let thr = p.threshold as f32;
    if p.mud {
        let binary: Vec<f32> = layer.iter().map(|&v| if v > thr { 1.0 } else { 0.0 }).collect();
        let mut m = gaussian_blur(&binary, h, w, p.intensity);
        m.iter_mut().for_each(|v| {
            if *v < 0.5 {
                *v = 0.0
            }
        });
        let tint = x.tint(MUD_RGB);
        for (plane, &c) in x.planes.iter_mut().zip(&tint) {
            for (v, &mv) in plane.iter_mut().zip(&m) {
                *v = *v * (1.0 - mv) + c * mv;
            }
        }
    } else {
        let mut m: Vec<f32> = layer.iter().map(|&v| (v - thr).max(0.0)).collect();
        let peak = m.iter().cloned().fold(0.0f32, f32::max);
        if peak > 0.0 {
            let k = p.intensity as f32 / peak;
            m.iter_mut().for_each(|v| *v *= k);
        }
        let tint = x.tint(WATER_RGB);
        for (plane, &c) in x.planes.iter_mut().zip(&tint) {
            for (v, &mv) in plane.iter_mut().zip(&m) {
                *v += mv * c;
            }
        }
    }
    x.clip();
}
