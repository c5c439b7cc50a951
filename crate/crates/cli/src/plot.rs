//! Minimal raster plots: scatter of labeled point sets and line series. No
//! text is drawn; labels and colors go into a JSON sidecar.

use image::{Rgb, RgbImage};

pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([190, 190, 190]);
const MARGIN: u32 = 24;

pub fn color(i: usize) -> [u8; 3] {
    PALETTE[i % PALETTE.len()]
}

/// Linear map of a data range onto a pixel range, with a degenerate range
/// widened around its value.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    pixels: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, pixels: u32) -> Self {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (-1.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 1.0, hi + 1.0);
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad, pixels: f64::from(pixels - 2 * MARGIN) }
    }

    fn to_pixel(self, v: f64) -> f64 {
        f64::from(MARGIN) + (v - self.lo) / (self.hi - self.lo) * self.pixels
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn square(img: &mut RgbImage, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            put(img, x, y, c);
        }
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
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

fn frame(img: &mut RgbImage) {
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    let m = i64::from(MARGIN);
    line(img, (m, h - m), (w - m, h - m), AXIS);
    line(img, (m, m), (m, h - m), AXIS);
}

/// Legend swatches along the top edge, one per series in order.
fn legend(img: &mut RgbImage, n: usize) {
    for i in 0..n {
        square(img, i64::from(MARGIN) + 12 * i as i64, 8, 4, Rgb(color(i)));
    }
}

/// Scatter plot of point sets, one palette color per set.
pub fn scatter(sets: &[Vec<[f64; 2]>], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    let all = || sets.iter().flatten();
    let ax = Axis::new(all().map(|p| p[0]), width);
    let ay = Axis::new(all().map(|p| p[1]), height);
    frame(&mut img);
    let flip = |y: f64| f64::from(height) - y;
    if (ax.lo..=ax.hi).contains(&0.0) {
        let x = ax.to_pixel(0.0).round() as i64;
        line(&mut img, (x, i64::from(MARGIN)), (x, i64::from(height - MARGIN)), AXIS);
    }
    if (ay.lo..=ay.hi).contains(&0.0) {
        let y = flip(ay.to_pixel(0.0)).round() as i64;
        line(&mut img, (i64::from(MARGIN), y), (i64::from(width - MARGIN), y), AXIS);
    }
    for (i, set) in sets.iter().enumerate() {
        for p in set {
            let (x, y) = (ax.to_pixel(p[0]).round() as i64, flip(ay.to_pixel(p[1])).round() as i64);
            square(&mut img, x, y, 2, Rgb(color(i)));
        }
    }
    legend(&mut img, sets.len());
    img
}

/// Polylines of `(x, y)` series sharing both axes.
pub fn lines(series: &[Vec<(f64, f64)>], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    let all = || series.iter().flatten();
    let ax = Axis::new(all().map(|p| p.0), width);
    let ay = Axis::new(all().map(|p| p.1), height);
    frame(&mut img);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<(i64, i64)> = s
            .iter()
            .map(|&(x, y)| (ax.to_pixel(x).round() as i64, (f64::from(height) - ay.to_pixel(y)).round() as i64))
            .collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], Rgb(color(i)));
        }
        if let [p] = pts.as_slice() {
            square(&mut img, p.0, p.1, 1, Rgb(color(i)));
        }
    }
    legend(&mut img, series.len());
    img
}
