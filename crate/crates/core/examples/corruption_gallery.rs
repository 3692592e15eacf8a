//! Every corruption at every severity on one synthetic pair, tiled into a
//! single PNG: visible rows on top of infrared rows, one column per level.

use image::{Rgb, RgbImage};
use mmreid::corruptions::{apply, is_applicable, CorruptionKind, ImageBuf, Modality, Severity};
use mmreid::synthetic::{appearances, render_pair};
use mmreid::dataset::CameraSetting;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn blit(canvas: &mut RgbImage, img: &ImageBuf, x0: u32, y0: u32) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            canvas.put_pixel(x0 + x as u32, y0 + y as u32, Rgb(img.pixel(y, x)));
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/corruption_gallery.png".into());
    let look = &appearances(1, 3)[0];
    let (v, i) = render_pair(look, CameraSetting::CL, (96, 48), 5);
    let (h, w) = (v.height() as u32, v.width() as u32);
    let kinds = CorruptionKind::ALL;
    let mut canvas = RgbImage::new(6 * w, 2 * kinds.len() as u32 * h);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (row, kind) in kinds.iter().enumerate() {
        for (m, src) in [(Modality::Visible, &v), (Modality::Infrared, &i)] {
            let y0 = (2 * row as u32 + u32::from(m == Modality::Infrared)) * h;
            blit(&mut canvas, src, 0, y0);
            if !is_applicable(*kind, m) {
                continue;
            }
            for s in Severity::ALL {
                let img = apply(*kind, s, src, &mut rng)?;
                blit(&mut canvas, &img, u32::from(s.level()) * w, y0);
            }
        }
        println!("{kind}");
    }
    canvas.save(&out)?;
    println!("wrote {out}");
    Ok(())
}
