//! Foreground segmentation and prototype matching.
//!
//! Foreground pixels are those far from the background color; 4-connected
//! components are matched against rendered shape masks at three scales by
//! normalized cross-correlation over small translations. A component is
//! *attributed* to its best-matching shape, so one blob never counts as two
//! different shapes at once.

use crate::scenelang::render::{shape_mask, BACKGROUND, SHAPE_HALF_EXTENT};
use crate::scenelang::{Shape, SHAPES};

/// Matching prototype scales relative to the canonical render size.
pub const PROTO_SCALES: [f64; 3] = [0.8, 1.0, 1.2];
/// Translation search radius in pixels.
pub const MATCH_SHIFT: i64 = 3;

/// A connected foreground component.
#[derive(Debug, Clone)]
pub struct Component {
    pub pixels: Vec<(i64, i64)>,
    pub centroid: (f64, f64),
    pub mean_color: [f32; 3],
    pub bbox: (i64, i64, i64, i64),
}

/// A component together with its best-shape attribution.
#[derive(Debug, Clone)]
pub struct AttributedComponent {
    pub component: Component,
    /// NCC against each shape's prototypes (max over scales and shifts),
    /// indexed by `Shape::index()`.
    pub shape_scores: [f32; 12],
    pub best_shape: Shape,
    pub best_score: f32,
}

#[derive(Debug, Clone)]
pub struct Prototype {
    pub shape: Shape,
    pub mask: Vec<bool>,
    pub side: i64,
    pub centroid: (f64, f64),
}

/// Rendered masks of every shape at the matching scales.
pub fn build_prototypes() -> Vec<Prototype> {
    let mut out = Vec::with_capacity(SHAPES.len() * PROTO_SCALES.len());
    for shape in SHAPES {
        for scale in PROTO_SCALES {
            let (mask, side) = shape_mask(shape, scale);
            let centroid = mask_centroid(&mask, side);
            out.push(Prototype { shape, mask, side: side as i64, centroid });
        }
    }
    out
}

fn mask_centroid(mask: &[bool], side: usize) -> (f64, f64) {
    let (mut sy, mut sx, mut n) = (0.0f64, 0.0f64, 0usize);
    for r in 0..side {
        for c in 0..side {
            if mask[r * side + c] {
                sy += r as f64;
                sx += c as f64;
                n += 1;
            }
        }
    }
    (sy / n as f64, sx / n as f64)
}

/// Segments the image into foreground components.
///
/// `bg_dist` is the L-inf distance from the background color beyond which a
/// pixel counts as foreground; components smaller than `min_pixels` are
/// dropped.
pub fn detect_components(
    pixels: &[f32],
    h: usize,
    w: usize,
    bg_dist: f32,
    min_pixels: usize,
) -> Vec<Component> {
    let hw = h * w;
    debug_assert_eq!(pixels.len(), 3 * hw);
    let fg: Vec<bool> = (0..hw)
        .map(|i| {
            (0..3)
                .map(|ch| (pixels[ch * hw + i] - BACKGROUND[ch]).abs())
                .fold(0.0f32, f32::max)
                > bg_dist
        })
        .collect();

    let mut visited = vec![false; hw];
    let mut components = Vec::new();
    for start in 0..hw {
        if !fg[start] || visited[start] {
            continue;
        }
        let mut stack = vec![start];
        visited[start] = true;
        let mut pix = Vec::new();
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            pix.push((r as i64, c as i64));
            let mut push = |j: usize| {
                if fg[j] && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                push(i - w);
            }
            if r + 1 < h {
                push(i + w);
            }
            if c > 0 {
                push(i - 1);
            }
            if c + 1 < w {
                push(i + 1);
            }
        }
        if pix.len() < min_pixels {
            continue;
        }
        let n = pix.len() as f64;
        let centroid = (
            pix.iter().map(|p| p.0 as f64).sum::<f64>() / n,
            pix.iter().map(|p| p.1 as f64).sum::<f64>() / n,
        );
        let mut mean_color = [0.0f32; 3];
        for &(r, c) in &pix {
            let i = r as usize * w + c as usize;
            for ch in 0..3 {
                mean_color[ch] += pixels[ch * hw + i];
            }
        }
        for m in mean_color.iter_mut() {
            *m /= pix.len() as f32;
        }
        let bbox = (
            pix.iter().map(|p| p.0).min().unwrap(),
            pix.iter().map(|p| p.0).max().unwrap(),
            pix.iter().map(|p| p.1).min().unwrap(),
            pix.iter().map(|p| p.1).max().unwrap(),
        );
        components.push(Component { pixels: pix, centroid, mean_color, bbox });
    }
    // Deterministic order: scanline order of first pixel is already stable.
    components
}

/// NCC between a component and one prototype placed at the component's
/// centroid plus a shift, evaluated over the union bounding box padded by 2.
fn ncc_at(comp: &Component, proto: &Prototype, dy: i64, dx: i64) -> f32 {
    // Prototype origin so its centroid lands on comp centroid + shift.
    let oy = (comp.centroid.0 + dy as f64 - proto.centroid.0).round() as i64;
    let ox = (comp.centroid.1 + dx as f64 - proto.centroid.1).round() as i64;

    let y0 = comp.bbox.0.min(oy) - 2;
    let y1 = comp.bbox.1.max(oy + proto.side - 1) + 2;
    let x0 = comp.bbox.2.min(ox) - 2;
    let x1 = comp.bbox.3.max(ox + proto.side - 1) + 2;
    let wh = (y1 - y0 + 1) as usize;
    let ww = (x1 - x0 + 1) as usize;
    let n = wh * ww;

    let mut a = vec![0.0f32; n];
    for &(r, c) in &comp.pixels {
        a[((r - y0) as usize) * ww + (c - x0) as usize] = 1.0;
    }
    let mut b = vec![0.0f32; n];
    for pr in 0..proto.side {
        for pc in 0..proto.side {
            if proto.mask[(pr * proto.side + pc) as usize] {
                let r = oy + pr - y0;
                let c = ox + pc - x0;
                b[(r as usize) * ww + c as usize] = 1.0;
            }
        }
    }

    let nf = n as f32;
    let mean_a = a.iter().sum::<f32>() / nf;
    let mean_b = b.iter().sum::<f32>() / nf;
    let (mut dot, mut na, mut nb) = (0.0f32, 0.0f32, 0.0f32);
    for i in 0..n {
        let va = a[i] - mean_a;
        let vb = b[i] - mean_b;
        dot += va * vb;
        na += va * va;
        nb += vb * vb;
    }
    if na <= 0.0 || nb <= 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Best NCC of a component against one shape (max over scales and shifts).
pub fn match_shape(comp: &Component, protos: &[Prototype], shape: Shape) -> f32 {
    let mut best = 0.0f32;
    for proto in protos.iter().filter(|p| p.shape == shape) {
        for dy in -MATCH_SHIFT..=MATCH_SHIFT {
            for dx in -MATCH_SHIFT..=MATCH_SHIFT {
                best = best.max(ncc_at(comp, proto, dy, dx));
            }
        }
    }
    best
}

/// Attributes every component to its best-matching shape.
pub fn attribute_components(components: Vec<Component>, protos: &[Prototype]) -> Vec<AttributedComponent> {
    components
        .into_iter()
        .map(|component| {
            let mut shape_scores = [0.0f32; 12];
            for shape in SHAPES {
                shape_scores[shape.index()] = match_shape(&component, protos, shape);
            }
            let best_idx = (0..12)
                .max_by(|&i, &j| shape_scores[i].partial_cmp(&shape_scores[j]).unwrap())
                .unwrap();
            AttributedComponent {
                component,
                shape_scores,
                best_shape: SHAPES[best_idx],
                best_score: shape_scores[best_idx],
            }
        })
        .collect()
}

/// Size of the canonical shape in pixels; exposed for sanity checks.
pub fn canonical_extent() -> f64 {
    SHAPE_HALF_EXTENT
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenelang::render::render;
    use crate::scenelang::{Color, ObjectSpec, Relation, SceneGraph};

    #[test]
    fn blank_image_has_no_components() {
        let scene = SceneGraph::single(ObjectSpec::new(Shape::Circle, Color::Red));
        let img = render(&scene);
        let blank: Vec<f32> = img
            .pixels
            .iter()
            .enumerate()
            .map(|(i, _)| BACKGROUND[i / (32 * 32)])
            .collect();
        assert!(detect_components(&blank, 32, 32, 0.15, 8).is_empty());
    }

    #[test]
    fn two_object_scene_yields_two_components() {
        let scene = SceneGraph::pair(
            ObjectSpec::new(Shape::Circle, Color::Red),
            ObjectSpec::new(Shape::Square, Color::Blue),
            Relation::Above,
            false,
        );
        let img = render(&scene);
        let comps = detect_components(&img.pixels, 32, 32, 0.15, 8);
        assert_eq!(comps.len(), 2);
    }

    #[test]
    fn gold_render_matches_own_prototype_exactly() {
        let protos = build_prototypes();
        for shape in SHAPES {
            let scene = SceneGraph::single(ObjectSpec::new(shape, Color::Yellow));
            let img = render(&scene);
            let comps = detect_components(&img.pixels, 32, 32, 0.15, 8);
            assert_eq!(comps.len(), 1, "{shape:?}");
            let score = match_shape(&comps[0], &protos, shape);
            assert!(score > 0.999, "{shape:?} self-NCC {score}");
        }
    }

    #[test]
    fn gold_renders_attribute_to_their_own_shape() {
        let protos = build_prototypes();
        for shape in SHAPES {
            let scene = SceneGraph::single(ObjectSpec::new(shape, Color::Green));
            let img = render(&scene);
            let comps = detect_components(&img.pixels, 32, 32, 0.15, 8);
            let attributed = attribute_components(comps, &protos);
            assert_eq!(attributed[0].best_shape, shape);
        }
    }

    #[test]
    fn cross_shape_scores_leave_a_margin() {
        // No foreign prototype may match a gold render above the detection
        // threshold band; this pins the geometry's discriminability.
        let protos = build_prototypes();
        let mut worst = (0.0f32, Shape::Circle, Shape::Circle);
        for shape in SHAPES {
            let scene = SceneGraph::single(ObjectSpec::new(shape, Color::White));
            let img = render(&scene);
            let comps = detect_components(&img.pixels, 32, 32, 0.15, 8);
            let att = attribute_components(comps, &protos);
            for other in SHAPES {
                if other == shape {
                    continue;
                }
                let s = att[0].shape_scores[other.index()];
                if s > worst.0 {
                    worst = (s, shape, other);
                }
            }
        }
        assert!(
            worst.0 < 0.90,
            "cross-shape NCC too high: {:?} matches {:?} at {}",
            worst.1,
            worst.2,
            worst.0
        );
    }
}
