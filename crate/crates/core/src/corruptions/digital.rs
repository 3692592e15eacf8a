use std::io::Cursor;

use rand::Rng;

use super::filters::{gaussian_blur, sample, Planes};
use super::{ImageBuf, ImageError, Modality};

pub(crate) fn contrast(x: &mut Planes, factor: f64) {
    let f = factor as f32;
    for plane in &mut x.planes {
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() as f32 / plane.len() as f32;
        plane.iter_mut().for_each(|v| *v = (*v - mean) * f + mean);
    }
    x.clip();
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h / 6.0, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let c = v * s;
    let xx = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, xx, 0.0),
        1 => (xx, c, 0.0),
        2 => (0.0, c, xx),
        3 => (0.0, xx, c),
        4 => (xx, 0.0, c),
        _ => (c, 0.0, xx),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

fn map_hsv(x: &mut Planes, f: impl Fn(f32, f32, f32) -> (f32, f32, f32)) {
    for i in 0..x.h * x.w {
        let (h, s, v) = rgb_to_hsv(x.planes[0][i], x.planes[1][i], x.planes[2][i]);
        let (h, s, v) = f(h, s, v);
        let (r, g, b) = hsv_to_rgb(h, s.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
        x.planes[0][i] = r;
        x.planes[1][i] = g;
        x.planes[2][i] = b;
    }
    x.clip();
}

pub(crate) fn brightness(x: &mut Planes, shift: f64) {
    let c = shift as f32;
    map_hsv(x, |h, s, v| (h, s, v + c));
}

pub(crate) fn saturate(x: &mut Planes, scale: f64, shift: f64) {
    let (a, b) = (scale as f32, shift as f32);
    map_hsv(x, |h, s, v| (h, s * a + b, v));
}

/// Monotone intensity lift `v^gamma` (`gamma < 1` brightens).
pub(crate) fn lift(x: &mut Planes, gamma: f64) {
    let g = gamma as f32;
    x.for_each_value(|v| *v = v.clamp(0.0, 1.0).powf(g));
}

/// Box-filtered downsampling by `factor` followed by nearest upsampling.
pub(crate) fn pixelate(x: &mut Planes, factor: f64) {
    let (h, w) = (x.h, x.w);
    let nh = ((h as f64 * factor) as usize).max(1);
    let nw = ((w as f64 * factor) as usize).max(1);
    let overlap = |dst: usize, n: usize, src_len: usize| {
        let scale = src_len as f64 / n as f64;
        let (lo, hi) = (dst as f64 * scale, (dst + 1) as f64 * scale);
        (lo.floor() as usize..(hi.ceil() as usize).min(src_len))
            .map(|s| {
                let a = (s as f64).max(lo);
                let b = ((s + 1) as f64).min(hi);
                (s, b - a)
            })
            .filter(|&(_, wgt)| wgt > 0.0)
            .collect::<Vec<_>>()
    };
    let rows: Vec<_> = (0..nh).map(|i| overlap(i, nh, h)).collect();
    let cols: Vec<_> = (0..nw).map(|j| overlap(j, nw, w)).collect();
    x.map_planes(|p, h, w| {
        let mut small = vec![0.0f64; nh * nw];
        for (i, rs) in rows.iter().enumerate() {
            for (j, cs) in cols.iter().enumerate() {
                let (mut acc, mut tot) = (0.0, 0.0);
                for &(y, wy) in rs {
                    for &(xx, wx) in cs {
                        acc += p[y * w + xx] as f64 * wy * wx;
                        tot += wy * wx;
                    }
                }
                small[i * nw + j] = acc / tot;
            }
        }
        (0..h * w)
            .map(|k| {
                let (y, xx) = (k / w, k % w);
                small[(y * nh / h) * nw + xx * nw / w] as f32
            })
            .collect()
    });
}

pub(crate) fn jpeg(image: &ImageBuf, quality: u8) -> Result<ImageBuf, ImageError> {
    use ::image::codecs::jpeg::JpegEncoder;
    use ::image::{ExtendedColorType, ImageFormat};
    let (h, w) = (image.height(), image.width());
    let io = |source| ImageError::Io {
        path: "<jpeg round trip>".into(),
        source,
    };
    let mut buf = Vec::new();
    let mut enc = JpegEncoder::new_with_quality(Cursor::new(&mut buf), quality.clamp(1, 100));
    match image.modality() {
        Modality::Visible => {
            enc.encode(image.data(), w as u32, h as u32, ExtendedColorType::Rgb8)
                .map_err(io)?;
            let dec = ::image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
                .map_err(io)?
                .to_rgb8();
            ImageBuf::from_raw(h, w, dec.into_raw(), Modality::Visible)
        }
        Modality::Infrared => {
            let gray: Vec<u8> = image.data().chunks_exact(3).map(|p| p[0]).collect();
            enc.encode(&gray, w as u32, h as u32, ExtendedColorType::L8)
                .map_err(io)?;
            let dec = ::image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
                .map_err(io)?
                .to_luma8();
            ImageBuf::from_gray(h, w, &dec.into_raw())
        }
    }
}

/// Solves the affine map sending `src[k]` to `dst[k]` for three points.
fn affine_from_points(src: [[f32; 2]; 3], dst: [[f32; 2]; 3]) -> [[f32; 3]; 2] {
    let m = [
        [src[0][0] as f64, src[0][1] as f64, 1.0],
        [src[1][0] as f64, src[1][1] as f64, 1.0],
        [src[2][0] as f64, src[2][1] as f64, 1.0],
    ];
    let det3 = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let det = det3(m);
    let mut out = [[0.0f32; 3]; 2];
    for (axis, row) in out.iter_mut().enumerate() {
        for (col, slot) in row.iter_mut().enumerate() {
            let mut a = m;
            for k in 0..3 {
                a[k][col] = dst[k][axis] as f64;
            }
            *slot = (det3(a) / det) as f32;
        }
    }
    out
}

/// Random affine jitter of three anchor points plus a smooth displacement
/// field; the same warp is applied to every channel.
pub(crate) fn elastic<R: Rng + ?Sized>(
    x: &mut Planes,
    alpha: f64,
    sigma: f64,
    affine: f64,
    rng: &mut R,
) {
    let (h, w) = (x.h, x.w);
    let (cy, cx) = (h as f32 / 2.0, w as f32 / 2.0);
    let side = h.min(w) as f32 / 3.0;
    let src = [
        [cx + side, cy + side],
        [cx + side, cy - side],
        [cx - side, cy - side],
    ];
    let a = affine as f32;
    let mut dst = src;
    for p in &mut dst {
        for v in p.iter_mut() {
            *v += if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
        }
    }
    let m = affine_from_points(src, dst);
    let field = |rng: &mut R| {
        let raw: Vec<f32> = (0..h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let smooth = if sigma > 0.0 {
            gaussian_blur(&raw, h, w, sigma)
        } else {
            raw
        };
        smooth.into_iter().map(|v| v * alpha as f32).collect::<Vec<_>>()
    };
    let dx = field(rng);
    let dy = field(rng);
    let coords: Vec<(f32, f32)> = (0..h * w)
        .map(|i| {
            let (y, xx) = ((i / w) as f32, (i % w) as f32);
            let sx = m[0][0] * xx + m[0][1] * y + m[0][2] + dx[i];
            let sy = m[1][0] * xx + m[1][1] * y + m[1][2] + dy[i];
            (sy, sx)
        })
        .collect();
    x.map_planes(|p, h, w| coords.iter().map(|&(sy, sx)| sample(p, h, w, sy, sx)).collect());
    x.clip();
}
