//! Comparison table and bar chart over evaluation summaries.

use std::fmt::Write as _;

use image::{Rgb, RgbImage};

use crate::evaluation::Summary;

/// One row per summary, in input order. Numbers keep the JSON spelling of the
/// summaries so values copy over exactly.
pub fn report_csv(summaries: &[Summary]) -> String {
    let num = |v: f64| serde_json::to_string(&v).expect("finite metric");
    let mut s = String::from("model,protocol,mAP,mINP,rank1\n");
    for r in summaries {
        writeln!(s, "{},{},{},{},{}", csv_field(&r.model), csv_field(&r.protocol), num(r.map), num(r.minp), num(r.rank1))
            .expect("string write");
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// 3x5 glyphs, one row per byte, high bit on the left.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 3, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        ',' => [0, 0, 0, 2, 4],
        ':' => [0, 2, 0, 2, 0],
        '-' => [0, 0, 7, 0, 0],
        '+' => [0, 2, 7, 2, 0],
        '_' => [0, 0, 0, 0, 7],
        '/' => [1, 1, 2, 4, 4],
        '%' => [5, 1, 2, 4, 5],
        '(' => [1, 2, 2, 2, 1],
        ')' => [4, 2, 2, 2, 4],
        ' ' => [0; 5],
        _ => [7, 7, 7, 7, 7],
    }
}

const SCALE: u32 = 2;
const CHAR_W: u32 = 4 * SCALE;
const INK: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn text_width(s: &str) -> u32 {
    s.chars().count() as u32 * CHAR_W
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, s: &str, color: Rgb<u8>) {
    for (n, c) in s.chars().enumerate() {
        let gx = x + n as u32 * CHAR_W;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..3u32 {
                if bits >> (2 - col) & 1 == 1 {
                    for dy in 0..SCALE {
                        for dx in 0..SCALE {
                            let (px, py) = (gx + col * SCALE + dx, y + row as u32 * SCALE + dy);
                            if px < img.width() && py < img.height() {
                                img.put_pixel(px, py, color);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, color);
        }
    }
}

fn unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Grouped bars: one panel per metric, protocols along the x axis, one bar per
/// model within each group, values in percent.
pub fn report_chart(summaries: &[Summary]) -> RgbImage {
    let models = unique(summaries.iter().map(|s| s.model.as_str()));
    let protocols = unique(summaries.iter().map(|s| s.protocol.as_str()));
    let (bar_w, gap, plot_h) = (14u32, 18u32, 200u32);
    let group_w = (models.len() as u32 * bar_w).max(protocols.iter().map(|p| text_width(p)).max().unwrap_or(0)) + gap;
    let panel_w = 40 + protocols.len() as u32 * group_w + 10;
    let legend_h = 16 * models.len() as u32 + 10;
    let (top, panel_h) = (legend_h + 20, plot_h + 50);
    let width = (2 * panel_w + 20).max(models.iter().map(|m| text_width(m)).max().unwrap_or(0) + 40);
    let mut img = RgbImage::from_pixel(width, top + panel_h, Rgb([255, 255, 255]));
    for (k, m) in models.iter().enumerate() {
        let y = 8 + 16 * k as u32;
        fill(&mut img, 10, y, 22, y + 10, Rgb(PALETTE[k % PALETTE.len()]));
        draw_text(&mut img, 28, y, m, INK);
    }
    let metrics: [(&str, fn(&Summary) -> f64); 2] = [("MAP (%)", |s| s.map), ("MINP (%)", |s| s.minp)];
    for (p, (title, get)) in metrics.iter().enumerate() {
        let x0 = 10 + p as u32 * panel_w;
        let base = top + 20 + plot_h;
        draw_text(&mut img, x0 + 40, top, title, INK);
        for tick in 0..=5u32 {
            let y = base - tick * plot_h / 5;
            fill(&mut img, x0 + 34, y, x0 + panel_w - 10, y + 1, GRID);
            draw_text(&mut img, x0, y.saturating_sub(5), &format!("{:>3}", tick * 20), INK);
        }
        fill(&mut img, x0 + 34, base, x0 + panel_w - 10, base + 1, INK);
        for (g, proto) in protocols.iter().enumerate() {
            let gx = x0 + 40 + g as u32 * group_w;
            for (k, m) in models.iter().enumerate() {
                let Some(s) = summaries.iter().find(|s| s.model == *m && s.protocol == *proto) else {
                    continue;
                };
                let h = (get(s).clamp(0.0, 1.0) * plot_h as f64).round() as u32;
                let bx = gx + k as u32 * bar_w;
                fill(&mut img, bx, base - h, bx + bar_w - 2, base, Rgb(PALETTE[k % PALETTE.len()]));
            }
            draw_text(&mut img, gx, base + 8, proto, INK);
        }
    }
    img
}
