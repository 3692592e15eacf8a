use rand::Rng;

use super::filters::{convolve2d, gaussian_blur, gaussian_kernel, sample, Planes};

/// Disk kernel of the given radius, softened by a small Gaussian.
fn disk_kernel(radius: f64, alias_sigma: f64) -> (Vec<f32>, usize) {
    let g = gaussian_kernel(alias_sigma);
    let gr = g.len() / 2;
    let extent = radius.ceil() as usize + gr;
    let size = 2 * extent + 1;
    let r2 = radius * radius;
    let mut disk = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 - extent as f64, x as f64 - extent as f64);
            if dy * dy + dx * dx <= r2 {
                disk[y * size + x] = 1.0;
            }
        }
    }
    let soft = gaussian_blur(&disk, size, size, alias_sigma);
    let total: f32 = soft.iter().sum();
    (soft.into_iter().map(|v| v / total).collect(), size)
}

pub(crate) fn defocus(x: &mut Planes, radius: f64, alias_sigma: f64) {
    let (k, size) = disk_kernel(radius, alias_sigma);
    x.map_planes(|p, h, w| convolve2d(p, h, w, &k, size, size));
    x.clip();
}

/// Blur, locally shuffle pixels, blur again.
pub(crate) fn glass<R: Rng + ?Sized>(
    x: &mut Planes,
    sigma: f64,
    max_delta: usize,
    iterations: usize,
    rng: &mut R,
) {
    let (h, w) = (x.h, x.w);
    x.map_planes(|p, h, w| gaussian_blur(p, h, w, sigma));
    let d = max_delta as isize;
    for _ in 0..iterations {
        for y in (d as usize..h.saturating_sub(d as usize)).rev() {
            for xx in (d as usize..w.saturating_sub(d as usize)).rev() {
                let dy = rng.random_range(-d as i64..d as i64) as isize;
                let dx = rng.random_range(-d as i64..d as i64) as isize;
                let a = y * w + xx;
                let b = (y as isize + dy) as usize * w + (xx as isize + dx) as usize;
                for p in &mut x.planes {
                    p.swap(a, b);
                }
            }
        }
    }
    x.map_planes(|p, h, w| gaussian_blur(p, h, w, sigma));
    x.clip();
}

/// One-sided Gaussian streak along a random direction within 45 degrees of
/// horizontal.
pub(crate) fn motion<R: Rng + ?Sized>(x: &mut Planes, radius: f64, sigma: f64, rng: &mut R) {
    let angle = rng.random_range(-45.0f32..45.0).to_radians();
    let taps = motion_taps(radius, sigma);
    x.map_planes(|p, h, w| streak(p, h, w, &taps, angle));
    x.clip();
}

/// Weighted sum of samples trailing each pixel along `angle` (radians).
pub(crate) fn streak(p: &[f32], h: usize, w: usize, taps: &[f32], angle: f32) -> Vec<f32> {
    let (sy, sx) = (angle.sin(), angle.cos());
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            out[y * w + xx] = taps
                .iter()
                .enumerate()
                .map(|(k, &wk)| {
                    let k = k as f32;
                    wk * sample(p, h, w, y as f32 - k * sy, xx as f32 - k * sx)
                })
                .sum();
        }
    }
    out
}

pub(crate) fn motion_taps(radius: f64, sigma: f64) -> Vec<f32> {
    let n = radius.round().max(0.0) as usize;
    let mut taps: Vec<f64> = (0..=n)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps.into_iter().map(|t| t as f32).collect()
}

/// Average of centre zooms `1, 1 + step, ..., max_zoom` together with the
/// original image.
pub(crate) fn zoom(x: &mut Planes, max_zoom: f64, step: f64) {
    let steps = ((max_zoom - 1.0) / step).round() as usize;
    let factors: Vec<f32> = (0..=steps).map(|i| (1.0 + i as f64 * step) as f32).collect();
    x.map_planes(|p, h, w| {
        let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
        let mut out = p.to_vec();
        for &z in &factors {
            for y in 0..h {
                for xx in 0..w {
                    let sy = cy + (y as f32 - cy) / z;
                    let sx = cx + (xx as f32 - cx) / z;
                    out[y * w + xx] += sample(p, h, w, sy, sx);
                }
            }
        }
        let n = (factors.len() + 1) as f32;
        out.iter_mut().for_each(|v| *v /= n);
        out
    });
    x.clip();
}
