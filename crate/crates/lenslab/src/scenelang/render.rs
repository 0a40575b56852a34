//! Deterministic scene rasterizer.
//!
//! Shapes are filled predicates over normalized coordinates, drawn without
//! anti-aliasing at a fixed canonical scale. The same predicates generate the
//! annotator's matching prototypes, so a gold render always matches its own
//! prototype exactly.

use super::{Relation, SceneGraph, Shape};

/// Canvas side in pixels.
pub const IMG_SIZE: usize = 32;
/// Canonical shape half-extent in pixels.
pub const SHAPE_HALF_EXTENT: f64 = 6.0;
/// Background gray level.
pub const BACKGROUND: [f32; 3] = [0.1, 0.1, 0.1];
/// Center-to-center offset for two-object layouts.
pub const PAIR_OFFSET: f64 = 8.0;

/// Rendered scene: channel-first [3, H, W] pixels in [0,1] plus the gold
/// scene graph.
#[derive(Debug, Clone)]
pub struct GoldImage {
    pub pixels: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub scene: SceneGraph,
}

impl GoldImage {
    pub fn rgb_at(&self, row: usize, col: usize) -> [f32; 3] {
        let hw = self.height * self.width;
        let i = row * self.width + col;
        [self.pixels[i], self.pixels[hw + i], self.pixels[2 * hw + i]]
    }
}

fn point_in_poly(u: f64, v: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        if (y1 > v) != (y2 > v) {
            let xi = x1 + (v - y1) * (x2 - x1) / (y2 - y1);
            if u < xi {
                inside = !inside;
            }
        }
    }
    inside
}

fn radial_star(points: usize, r_out: f64, r_in: f64) -> Vec<(f64, f64)> {
    let phase = -std::f64::consts::FRAC_PI_2;
    (0..2 * points)
        .map(|i| {
            let ang = phase + i as f64 * std::f64::consts::PI / points as f64;
            let r = if i % 2 == 0 { r_out } else { r_in };
            (r * ang.cos(), r * ang.sin())
        })
        .collect()
}

/// Shape predicate in normalized coordinates: u rightward, v downward,
/// both roughly in [-1, 1] at the shape boundary.
pub fn shape_contains(shape: Shape, u: f64, v: f64) -> bool {
    match shape {
        Shape::Circle => u * u + v * v <= 0.95 * 0.95,
        Shape::Square => u.abs() <= 0.60 && v.abs() <= 0.60,
        Shape::Triangle => point_in_poly(u, v, &[(0.0, -1.0), (0.78, 0.95), (-0.78, 0.95)]),
        Shape::Cross => (u.abs() <= 0.30 && v.abs() <= 1.0) || (v.abs() <= 0.30 && u.abs() <= 1.0),
        Shape::Heart => {
            (u - 0.47) * (u - 0.47) + (v + 0.42) * (v + 0.42) <= 0.48 * 0.48
                || (u + 0.47) * (u + 0.47) + (v + 0.42) * (v + 0.42) <= 0.48 * 0.48
                || point_in_poly(u, v, &[(-0.92, -0.25), (0.92, -0.25), (0.0, 0.98)])
        }
        Shape::Star => point_in_poly(u, v, &radial_star(5, 1.05, 0.48)),
        Shape::Trapezoid => {
            point_in_poly(u, v, &[(-0.52, -0.48), (0.52, -0.48), (1.0, 0.48), (-1.0, 0.48)])
        }
        Shape::Crescent => {
            u * u + v * v <= 0.95 * 0.95 && (u - 0.52) * (u - 0.52) + v * v > 0.72 * 0.72
        }
        Shape::Arrow => point_in_poly(
            u,
            v,
            &[(-1.0, -0.30), (0.05, -0.30), (0.05, -0.66), (1.0, 0.0), (0.05, 0.66), (0.05, 0.30), (-1.0, 0.30)],
        ),
        Shape::Hexagram => point_in_poly(u, v, &radial_star(6, 1.0, 0.55)),
        Shape::Annulus => {
            let r2 = u * u + v * v;
            (0.52 * 0.52..=0.98 * 0.98).contains(&r2)
        }
        Shape::Lightning => point_in_poly(
            u,
            v,
            &[(0.70, -1.05), (-0.72, 0.22), (-0.05, 0.22), (-0.70, 1.05), (0.72, -0.22), (0.05, -0.22)],
        ),
    }
}

/// Binary mask of a shape at `scale` times the canonical size, in a tight
/// square box. Used both here and as the annotator's matching prototype.
pub fn shape_mask(shape: Shape, scale: f64) -> (Vec<bool>, usize) {
    let h = SHAPE_HALF_EXTENT * scale;
    let ext = h.ceil() as i64 + 1;
    let side = (2 * ext + 1) as usize;
    let mut mask = vec![false; side * side];
    for r in 0..side {
        for c in 0..side {
            let v = (r as i64 - ext) as f64 / h;
            let u = (c as i64 - ext) as f64 / h;
            mask[r * side + c] = shape_contains(shape, u, v);
        }
    }
    (mask, side)
}

/// Object center placements for a scene on the canvas, aligned with
/// `scene.objects`. Centers sit on the integer pixel grid so a rendered
/// object samples its shape predicate at exactly the prototype offsets.
pub fn placements(scene: &SceneGraph) -> Vec<(f64, f64)> {
    let mid = (IMG_SIZE / 2) as f64;
    match scene.objects.len() {
        1 => vec![(mid, mid)],
        2 => {
            let rel = scene.relation.expect("two objects need a relation");
            let head = scene.head_index;
            let mut spots = vec![(mid, mid); 2];
            match rel {
                Relation::Above => {
                    spots[head] = (mid - PAIR_OFFSET, mid);
                    spots[1 - head] = (mid + PAIR_OFFSET, mid);
                }
                Relation::Below => {
                    spots[head] = (mid + PAIR_OFFSET, mid);
                    spots[1 - head] = (mid - PAIR_OFFSET, mid);
                }
                Relation::LeftOf => {
                    spots[head] = (mid, mid - PAIR_OFFSET);
                    spots[1 - head] = (mid, mid + PAIR_OFFSET);
                }
                Relation::RightOf => {
                    spots[head] = (mid, mid + PAIR_OFFSET);
                    spots[1 - head] = (mid, mid - PAIR_OFFSET);
                }
                Relation::And => {
                    // Conjunction has no spatial meaning; slots follow the
                    // surface order (first mention on the left).
                    spots[scene.surface_order[0]] = (mid, mid - PAIR_OFFSET);
                    spots[scene.surface_order[1]] = (mid, mid + PAIR_OFFSET);
                }
            }
            spots
        }
        n => panic!("scene with {n} objects"),
    }
}

/// Rasterizes a scene. Objects are drawn in order; placements never overlap
/// by construction.
pub fn render(scene: &SceneGraph) -> GoldImage {
    debug_assert!(scene.validate().is_ok());
    let (h, w) = (IMG_SIZE, IMG_SIZE);
    let hw = h * w;
    let mut pixels = vec![0.0f32; 3 * hw];
    for ch in 0..3 {
        pixels[ch * hw..(ch + 1) * hw].fill(BACKGROUND[ch]);
    }
    let spots = placements(scene);
    for (obj, (cy, cx)) in scene.objects.iter().zip(&spots) {
        let rgb = obj.color.rgb();
        for r in 0..h {
            for c in 0..w {
                let v = (r as f64 - cy) / SHAPE_HALF_EXTENT;
                let u = (c as f64 - cx) / SHAPE_HALF_EXTENT;
                if u.abs() <= 1.3 && v.abs() <= 1.3 && shape_contains(obj.shape, u, v) {
                    let i = r * w + c;
                    for ch in 0..3 {
                        pixels[ch * hw + i] = rgb[ch];
                    }
                }
            }
        }
    }
    GoldImage { pixels, height: h, width: w, scene: scene.clone() }
}
