//! Float image planes and the shared filtering helpers.

use rand::Rng;

use super::{ImageBuf, Modality};

pub(crate) fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub(crate) fn luma_u8(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
}

/// Channel planes with values nominally in `[0, 1]`: three for visible
/// images, one luminance plane for infrared ones.
#[derive(Clone, Debug)]
pub(crate) struct Planes {
    pub h: usize,
    pub w: usize,
    pub planes: Vec<Vec<f32>>,
}

impl Planes {
    pub fn from_image(img: &ImageBuf) -> Self {
        let (h, w) = (img.height(), img.width());
        let channels = match img.modality() {
            Modality::Visible => 3,
            Modality::Infrared => 1,
        };
        let planes = (0..channels)
            .map(|c| {
                img.data()
                    .chunks_exact(3)
                    .map(|p| p[c] as f32 / 255.0)
                    .collect()
            })
            .collect();
        Self { h, w, planes }
    }

    pub fn to_image(&self, modality: Modality) -> ImageBuf {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let n = self.h * self.w;
        let data = match self.planes.len() {
            1 => self.planes[0].iter().flat_map(|&v| [q(v); 3]).collect(),
            _ => (0..n)
                .flat_map(|i| [q(self.planes[0][i]), q(self.planes[1][i]), q(self.planes[2][i])])
                .collect(),
        };
        ImageBuf::from_raw(self.h, self.w, data, modality).expect("consistent planes")
    }

    pub fn is_color(&self) -> bool {
        self.planes.len() == 3
    }

    pub fn map_planes(&mut self, f: impl Fn(&[f32], usize, usize) -> Vec<f32>) {
        let (h, w) = (self.h, self.w);
        for p in &mut self.planes {
            *p = f(p, h, w);
        }
    }

    pub fn for_each_value(&mut self, mut f: impl FnMut(&mut f32)) {
        self.planes.iter_mut().flatten().for_each(|v| f(v));
    }

    pub fn clip(&mut self) {
        self.for_each_value(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Per-pixel luminance (the plane itself for infrared).
    pub fn luminance(&self) -> Vec<f32> {
        if self.is_color() {
            (0..self.h * self.w)
                .map(|i| luma(self.planes[0][i], self.planes[1][i], self.planes[2][i]))
                .collect()
        } else {
            self.planes[0].clone()
        }
    }

    /// Converts an RGB overlay colour to the value used on these planes.
    pub fn tint(&self, rgb: [f32; 3]) -> Vec<f32> {
        if self.is_color() {
            rgb.to_vec()
        } else {
            vec![luma(rgb[0], rgb[1], rgb[2])]
        }
    }
}

/// Reflect-101 style index mirroring (`-1 -> 1`, `n -> n - 2`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}

fn convolve_rows(p: &[f32], h: usize, w: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let row = &p[y * w..(y + 1) * w];
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * row[reflect(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    out
}

fn convolve_cols(p: &[f32], h: usize, w: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (i, &kv) in k.iter().enumerate() {
            let src = reflect(y as isize + i as isize - r, h);
            for x in 0..w {
                out[y * w + x] += kv * p[src * w + x];
            }
        }
    }
    out
}

pub(crate) fn gaussian_blur(p: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    convolve_cols(&convolve_rows(p, h, w, &k), h, w, &k)
}

/// Dense 2-D correlation with an odd-sized `kh x kw` kernel.
pub(crate) fn convolve2d(p: &[f32], h: usize, w: usize, k: &[f32], kh: usize, kw: usize) -> Vec<f32> {
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..kh {
                let sy = reflect(y as isize + i as isize - ry, h);
                for j in 0..kw {
                    let kv = k[i * kw + j];
                    if kv != 0.0 {
                        acc += kv * p[sy * w + reflect(x as isize + j as isize - rx, w)];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Bilinear sample at fractional `(y, x)` with mirrored borders.
pub(crate) fn sample(p: &[f32], h: usize, w: usize, y: f32, x: f32) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: isize, xx: isize| p[reflect(yy, h) * w + reflect(xx, w)];
    let (y0, x0) = (y0 as isize, x0 as isize);
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize with pixel-centre alignment.
pub(crate) fn resize(p: &[f32], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f32> {
    let (sy, sx) = (h as f32 / nh as f32, w as f32 / nw as f32);
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).max(0.0);
        for x in 0..nw {
            let fx = ((x as f32 + 0.5) * sx - 0.5).max(0.0);
            out.push(sample(p, h, w, fy.min((h - 1) as f32), fx.min((w - 1) as f32)));
        }
    }
    out
}

/// Diamond-square plasma fractal on a `size x size` grid (`size` a power of
/// two), normalized to `[0, 1]`.
pub(crate) fn plasma_fractal<R: Rng + ?Sized>(size: usize, decay: f64, rng: &mut R) -> Vec<f32> {
    let n = size;
    let mut m = vec![0.0f64; n * n];
    let idx = |y: usize, x: usize| (y % n) * n + (x % n);
    let mut step = n;
    let mut range = 100.0f64;
    while step >= 2 {
        let half = step / 2;
        for y in (0..n).step_by(step) {
            for x in (0..n).step_by(step) {
                let avg = (m[idx(y, x)]
                    + m[idx(y + step, x)]
                    + m[idx(y, x + step)]
                    + m[idx(y + step, x + step)])
                    / 4.0;
                m[idx(y + half, x + half)] = avg + range * rng.random_range(-1.0..1.0);
            }
        }
        for y in (0..n).step_by(half) {
            let start = if (y / half) % 2 == 0 { half } else { 0 };
            for x in (start..n).step_by(step) {
                let avg = (m[idx(y + n - half, x)]
                    + m[idx(y + half, x)]
                    + m[idx(y, x + n - half)]
                    + m[idx(y, x + half)])
                    / 4.0;
                m[idx(y, x)] = avg + range * rng.random_range(-1.0..1.0);
            }
        }
        step = half;
        range /= decay;
    }
    let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    m.into_iter().map(|v| ((v - lo) / span) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_mirrors_without_repeating_edges() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
        assert_eq!(reflect(-7, 1), 0);
    }

    #[test]
    fn blur_preserves_constants() {
        let p = vec![0.3f32; 7 * 5];
        for v in gaussian_blur(&p, 7, 5, 1.5) {
            assert!((v - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn pure_red_luma() {
        assert_eq!(luma_u8(255, 0, 0), 76);
        for v in [0u8, 1, 127, 128, 254, 255] {
            assert_eq!(luma_u8(v, v, v), v);
        }
    }
}
