//! Analytic toy-face renderer.
//!
//! Pixel `(row i, col j)` of a `size × size` image has centre
//! `x = −1 + (2j + 1)/size`, `y = −1 + (2i + 1)/size`. The head is placed at
//! `(HEAD_SHIFT · pose[1], 0)`, rotated by `pose[0]` radians and scaled by
//! `exp(pose[2])`; a translation of `t` therefore moves the face by
//! `HEAD_SHIFT · t · size / 2` pixels. Expression dims 0–4 drive mouth
//! openness, mouth curvature, left and right eye openness and brow raise;
//! gaze moves the pupils. Every shape has a one-pixel linear edge ramp, so
//! the image is continuous in all used parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FaceParams, Image, EXPR_DIM, GAZE_DIM, POSE_DIM};

/// Image-space horizontal head offset per unit of `pose[1]`.
pub const HEAD_SHIFT: f64 = 1.25;

/// Half-widths of the parameter box the toy world is defined on, indexed in
/// the pose ‖ expression ‖ gaze layout. Dims outside the box are ignored by
/// the renderer.
pub fn used_dims() -> Vec<(usize, f64)> {
    let mut dims = vec![(0, 0.35), (1, 0.2), (2, 0.15)];
    dims.extend((0..5).map(|i| (POSE_DIM + i, 1.0)));
    dims.extend((0..GAZE_DIM).map(|i| (POSE_DIM + EXPR_DIM + i, 0.5)));
    dims
}

/// Appearance of one synthetic person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyIdentity {
    pub seed: u64,
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub iris: [f64; 3],
    pub lips: [f64; 3],
    pub head_radii: [f64; 2],
    pub eye_spacing: f64,
    pub eye_height: f64,
    pub mouth_height: f64,
    pub mouth_half_width: f64,
    /// Cheek marks as `(u, v, radius)` in head coordinates.
    pub marks: Vec<[f64; 3]>,
    pub background: Background,
}

/// Static striped backdrop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: [f64; 3],
    pub stripe: [f64; 3],
    pub frequency: f64,
    pub angle: f64,
    pub phase: f64,
}

impl Background {
    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let s = (self.frequency * (x * self.angle.cos() + y * self.angle.sin()) + self.phase).sin();
        [0, 1, 2].map(|c| self.base[c] + s * self.stripe[c])
    }
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(lo..hi))
}

impl ToyIdentity {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70f_ace);
        let skin_tone = rng.random_range(-0.2..0.6);
        let skin = [skin_tone + 0.25, skin_tone, skin_tone - 0.2].map(|v: f64| v.clamp(-0.9, 0.9));
        let marks = (0..4)
            .map(|i| {
                let side = if i % 2 == 0 { -1.0 } else { 1.0 };
                [side * rng.random_range(0.18..0.36), rng.random_range(0.02..0.22), rng.random_range(0.02..0.035)]
            })
            .collect();
        Self {
            seed,
            skin,
            hair: color(&mut rng, -0.95, -0.2),
            iris: color(&mut rng, -0.9, -0.3),
            lips: [rng.random_range(0.0..0.6), -0.6, -0.5],
            head_radii: [rng.random_range(0.5..0.58), rng.random_range(0.64..0.72)],
            eye_spacing: rng.random_range(0.18..0.24),
            eye_height: rng.random_range(-0.16..-0.08),
            mouth_height: rng.random_range(0.3..0.38),
            mouth_half_width: rng.random_range(0.17..0.24),
            marks,
            background: Background {
                base: color(&mut rng, -0.5, 0.3),
                stripe: color(&mut rng, 0.05, 0.25),
                frequency: rng.random_range(3.0..8.0),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            },
        }
    }
}

/// Premultiplied face colour and coverage, composited over the background.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceLayer {
    pub size: usize,
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub fn check_size(size: usize) -> Result<()> {
    if !(32..=512).contains(&size) || !size.is_power_of_two() {
        return Err(Error::Value(format!("toy render size {size} must be a power of two in 32..=512")));
    }
    Ok(())
}

/// Coverage of a shape at signed distance `d`, with a linear ramp of width `pw`.
fn coverage(d: f64, pw: f64) -> f64 {
    (0.5 - d / pw).clamp(0.0, 1.0)
}

/// First-order signed distance to an axis-aligned ellipse.
fn ellipse_distance(u: f64, v: f64, rx: f64, ry: f64) -> f64 {
    let f = (u / rx).powi(2) + (v / ry).powi(2) - 1.0;
    let grad = 2.0 * ((u / (rx * rx)).powi(2) + (v / (ry * ry)).powi(2)).sqrt();
    if grad < 1e-9 {
        -rx.min(ry)
    } else {
        f / grad
    }
}

struct Painter {
    rgb: [f64; 3],
    alpha: f64,
}

impl Painter {
    /// Porter–Duff "over" with premultiplied accumulation.
    fn over(&mut self, color: [f64; 3], a: f64) {
        if a <= 0.0 {
            return;
        }
        for c in 0..3 {
            self.rgb[c] = color[c] * a + self.rgb[c] * (1.0 - a);
        }
        self.alpha = a + self.alpha * (1.0 - a);
    }
}

fn unit(x: f64) -> f64 {
    ((1.0 + x) / 2.0).clamp(0.0, 1.0)
}

fn face_pixel(id: &ToyIdentity, p: &FaceParams, x: f64, y: f64, pixel: f64) -> Painter {
    let pose = p.pose();
    let e = p.expression();
    let g = p.gaze();
    let scale = pose[2].exp();
    let (dx, dy) = (x - HEAD_SHIFT * pose[1], y);
    let (s, c) = pose[0].sin_cos();
    // rotate by −θ into head coordinates
    let u = (c * dx + s * dy) / scale;
    let v = (-s * dx + c * dy) / scale;
    let pw = pixel / scale;
    let [rx, ry] = id.head_radii;
    let mut out = Painter { rgb: [0.0; 3], alpha: 0.0 };

    let head = coverage(ellipse_distance(u, v, rx, ry), pw);
    let r2 = (u / rx).powi(2) + (v / ry).powi(2);
    let shade = 1.0 - 0.25 * r2.min(1.0);
    out.over(id.skin.map(|k| (k + 1.0) * shade - 1.0), head);

    let hair = coverage(ellipse_distance(u, v + ry, 1.02 * rx, 0.38 * ry), pw) * head;
    out.over(id.hair, hair);

    for m in &id.marks {
        let mark = coverage(ellipse_distance(u - m[0], v - m[1], m[2], m[2]), pw) * head;
        out.over(id.skin.map(|k| k - 0.35), mark);
    }

    for (side, open) in [(-1.0, e[2]), (1.0, e[3])] {
        let (ex, ey) = (side * id.eye_spacing, id.eye_height);
        let eye = coverage(ellipse_distance(u - ex, v - ey, 0.1, 0.012 + 0.09 * unit(open)), pw);
        out.over([0.95, 0.95, 0.9], eye);
        let (px, py) = (ex + 0.14 * g[0], ey + 0.1 * g[1]);
        let pupil = coverage(ellipse_distance(u - px, v - py, 0.045, 0.045), pw) * eye;
        out.over(id.iris, pupil);
        let by = ey - 0.14 - 0.1 * e[4].clamp(-1.0, 1.0);
        let brow = coverage(ellipse_distance(u - ex, v - by, 0.11, 0.022), pw);
        out.over(id.hair, brow);
    }

    let mw = id.mouth_half_width;
    let bend = -0.1 * e[1].clamp(-1.0, 1.0) * (u / mw).powi(2);
    let mouth_h = 0.015 + 0.1 * unit(e[0]);
    let mouth = coverage(ellipse_distance(u, v - id.mouth_height - bend, mw, mouth_h), pw);
    out.over(id.lips, mouth);
    let inner = coverage(ellipse_distance(u, v - id.mouth_height - bend, 0.8 * mw, 0.7 * mouth_h), pw) * mouth;
    out.over([-0.85, -0.9, -0.9], inner * unit(e[0]));
    out
}

fn pixel_center(i: usize, size: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / size as f64
}

/// The face without the background.
pub fn render_face_layer(id: &ToyIdentity, params: &FaceParams, size: usize) -> Result<FaceLayer> {
    check_size(size)?;
    let pixel = 2.0 / size as f64;
    let mut rgb = Vec::with_capacity(size * size * 3);
    let mut alpha = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let p = face_pixel(id, params, pixel_center(j, size), pixel_center(i, size), pixel);
            rgb.extend_from_slice(&p.rgb);
            alpha.push(p.alpha);
        }
    }
    Ok(FaceLayer { size, rgb, alpha })
}

pub fn render_background(id: &ToyIdentity, size: usize) -> Result<Image> {
    check_size(size)?;
    let mut data = Vec::with_capacity(size * size * 3);
    for i in 0..size {
        for j in 0..size {
            data.extend(id.background.color(pixel_center(j, size), pixel_center(i, size)).map(|v| v.clamp(-1.0, 1.0)));
        }
    }
    Image::new(size, size, data)
}

/// Face composited over the identity's fixed background.
pub fn render_toy_face(id: &ToyIdentity, params: &FaceParams, size: usize) -> Result<Image> {
    let face = render_face_layer(id, params, size)?;
    let bg = render_background(id, size)?;
    let data = bg
        .data()
        .chunks_exact(3)
        .zip(face.rgb.chunks_exact(3).zip(&face.alpha))
        .flat_map(|(b, (f, a))| [0, 1, 2].map(|c| (f[c] + b[c] * (1.0 - a)).clamp(-1.0, 1.0)))
        .collect();
    Image::new(size, size, data)
}
