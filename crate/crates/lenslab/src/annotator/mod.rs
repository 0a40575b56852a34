//! Programmatic image annotation.
//!
//! Answers the per-image yes/no question battery with palette classification
//! and prototype matching, replacing external annotators with an auditable
//! oracle. Every question kind reduces to a score in [0,1] compared against
//! a fixed 0.5 decision line; the raw thresholds behind the normalization
//! are configuration, which is what the variant annotator perturbs for the
//! overlap audit.

pub mod agreement;
pub mod detect;

pub use agreement::{cohens_kappa, f1, MetricValue};
pub use detect::{attribute_components, build_prototypes, detect_components, AttributedComponent, Prototype};

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;
use crate::provenance::Provenance;
use crate::scenelang::{Category, Color, PromptSpec, Relation, SceneGraph, Shape, COLORS};

#[derive(Debug, thiserror::Error)]
pub enum AnnotatorError {
    #[error("unsupported question for this annotator: {0}")]
    UnsupportedQuestion(String),
}

/// Raw decision thresholds. The defaults are the lowest values that keep the
/// annotator at >=99% accuracy on gold renders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatorConfig {
    /// Minimum NCC for an attributed component to count as its shape.
    pub corr_threshold: f32,
    /// L-inf distance from background beyond which a pixel is foreground.
    pub bg_dist: f32,
    /// Components below this size are discarded.
    pub min_component_px: usize,
    /// Maximum L2 distance from a palette color for a color match.
    pub color_margin: f32,
    /// Minimum pooled pixel count for the pixel-cluster color fallback.
    pub color_pixel_count: usize,
    /// Centroid offset margin for relations, in pixels.
    pub relation_margin_px: f64,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig {
            corr_threshold: 0.7,
            bg_dist: 0.15,
            min_component_px: 8,
            color_margin: 0.45,
            color_pixel_count: 30,
            relation_margin_px: 3.0,
        }
    }
}

impl AnnotatorConfig {
    /// The perturbed second annotator used by the overlap audit.
    pub fn variant() -> Self {
        AnnotatorConfig { corr_threshold: 0.6, color_margin: 0.60, ..AnnotatorConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    ObjectPresent,
    ColorPresent,
    ObjectWithColor,
    RelationHolds,
    AnyObjectPresent,
    CategoryPresent,
    PromptMatches,
}

impl QuestionKind {
    pub fn name(&self) -> &'static str {
        match self {
            QuestionKind::ObjectPresent => "object_present",
            QuestionKind::ColorPresent => "color_present",
            QuestionKind::ObjectWithColor => "object_with_color",
            QuestionKind::RelationHolds => "relation_holds",
            QuestionKind::AnyObjectPresent => "any_object_present",
            QuestionKind::CategoryPresent => "category_present",
            QuestionKind::PromptMatches => "prompt_matches",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Question {
    ObjectPresent { shape: Shape },
    ColorPresent { color: Color },
    ObjectWithColor { shape: Shape, color: Color },
    /// Does `a` stand in `relation` to `b`? (spatial relations only)
    RelationHolds { a: Shape, relation: Relation, b: Shape },
    AnyObjectPresent,
    CategoryPresent { category: Category },
    /// Conjunction of the per-object and relation questions of a scene.
    /// `colors_stated` records whether the prompt asserted colors.
    PromptMatches { scene: SceneGraph, colors_stated: bool },
}

impl Question {
    pub fn kind(&self) -> QuestionKind {
        match self {
            Question::ObjectPresent { .. } => QuestionKind::ObjectPresent,
            Question::ColorPresent { .. } => QuestionKind::ColorPresent,
            Question::ObjectWithColor { .. } => QuestionKind::ObjectWithColor,
            Question::RelationHolds { .. } => QuestionKind::RelationHolds,
            Question::AnyObjectPresent => QuestionKind::AnyObjectPresent,
            Question::CategoryPresent { .. } => QuestionKind::CategoryPresent,
            Question::PromptMatches { .. } => QuestionKind::PromptMatches,
        }
    }

    /// Compact parameter string for CSV output.
    pub fn params(&self) -> String {
        match self {
            Question::ObjectPresent { shape } => shape.word().to_string(),
            Question::ColorPresent { color } => color.word().to_string(),
            Question::ObjectWithColor { shape, color } => {
                format!("{}+{}", color.word(), shape.word())
            }
            Question::RelationHolds { a, relation, b } => {
                format!("{}+{}+{}", a.word(), relation.name(), b.word())
            }
            Question::AnyObjectPresent => String::new(),
            Question::CategoryPresent { category } => format!("{category:?}").to_lowercase(),
            Question::PromptMatches { scene, .. } => {
                let parts: Vec<String> = scene
                    .objects
                    .iter()
                    .map(|o| format!("{}-{}", o.color.word(), o.shape.word()))
                    .collect();
                parts.join("+")
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub provenance: Provenance,
    pub question: Question,
    pub answer: bool,
    pub score: f32,
}

/// Decision line for all normalized scores.
pub const DECISION: f32 = 0.5;

/// Maps a raw quantity to [0,1] so that `raw == threshold` lands exactly on
/// the 0.5 decision line, rising with `span` controlling the slope.
fn norm_score(raw: f32, threshold: f32, span: f32) -> f32 {
    0.5 + 0.5 * ((raw - threshold) / span).clamp(-1.0, 1.0)
}

pub struct Annotator {
    cfg: AnnotatorConfig,
    protos: Vec<Prototype>,
}

struct ImageAnalysis {
    comps: Vec<AttributedComponent>,
    /// Per-palette-color count of foreground pixels nearest to that color.
    color_pixel_counts: [usize; 8],
}

impl Annotator {
    pub fn new(cfg: AnnotatorConfig) -> Self {
        Annotator { protos: build_prototypes(), cfg }
    }

    pub fn with_defaults() -> Self {
        Annotator::new(AnnotatorConfig::default())
    }

    pub fn config(&self) -> &AnnotatorConfig {
        &self.cfg
    }

    fn analyze(&self, pixels: &[f32], h: usize, w: usize) -> ImageAnalysis {
        let comps = detect_components(pixels, h, w, self.cfg.bg_dist, self.cfg.min_component_px);
        let comps = attribute_components(comps, &self.protos);
        let hw = h * w;
        let mut color_pixel_counts = [0usize; 8];
        for i in 0..hw {
            let px = [pixels[i], pixels[hw + i], pixels[2 * hw + i]];
            let bg = px
                .iter()
                .zip(&crate::scenelang::render::BACKGROUND)
                .map(|(p, b)| (p - b).abs())
                .fold(0.0f32, f32::max);
            if bg <= self.cfg.bg_dist {
                continue;
            }
            let nearest = nearest_color(&px);
            color_pixel_counts[nearest.index()] += 1;
        }
        ImageAnalysis { comps, color_pixel_counts }
    }

    /// Score for "a component attributed to `shape` is present".
    fn object_score(&self, an: &ImageAnalysis, shape: Shape) -> f32 {
        an.comps
            .iter()
            .filter(|c| c.best_shape == shape)
            .map(|c| norm_score(c.best_score, self.cfg.corr_threshold, 0.3))
            .fold(0.0, f32::max)
    }

    fn color_score(&self, an: &ImageAnalysis, color: Color) -> f32 {
        // Component route: mean color must nearest-classify to `color` and
        // sit within the margin.
        let comp_route = an
            .comps
            .iter()
            .filter(|c| nearest_color(&c.component.mean_color) == color)
            .map(|c| {
                let d = color_dist(&c.component.mean_color, &color.rgb());
                norm_score(-d, -self.cfg.color_margin, self.cfg.color_margin)
            })
            .fold(0.0, f32::max);
        // Pixel-cluster route: enough foreground pixels individually nearest
        // to `color`.
        let count = an.color_pixel_counts[color.index()];
        let pixel_route = norm_score(
            count as f32,
            self.cfg.color_pixel_count as f32,
            self.cfg.color_pixel_count as f32,
        );
        comp_route.max(pixel_route)
    }

    fn object_with_color_score(&self, an: &ImageAnalysis, shape: Shape, color: Color) -> f32 {
        an.comps
            .iter()
            .filter(|c| c.best_shape == shape && nearest_color(&c.component.mean_color) == color)
            .map(|c| {
                let s_shape = norm_score(c.best_score, self.cfg.corr_threshold, 0.3);
                let d = color_dist(&c.component.mean_color, &color.rgb());
                let s_color = norm_score(-d, -self.cfg.color_margin, self.cfg.color_margin);
                s_shape.min(s_color)
            })
            .fold(0.0, f32::max)
    }

    fn relation_score(&self, an: &ImageAnalysis, a: Shape, relation: Relation, b: Shape) -> f32 {
        let best = |shape: Shape| {
            an.comps
                .iter()
                .filter(|c| c.best_shape == shape)
                .max_by(|x, y| x.best_score.partial_cmp(&y.best_score).unwrap())
        };
        let (Some(ca), Some(cb)) = (best(a), best(b)) else {
            return 0.0;
        };
        let sa = norm_score(ca.best_score, self.cfg.corr_threshold, 0.3);
        let sb = norm_score(cb.best_score, self.cfg.corr_threshold, 0.3);
        let (ay, ax) = ca.component.centroid;
        let (by, bx) = cb.component.centroid;
        let separation = match relation {
            Relation::Above => by - ay,
            Relation::Below => ay - by,
            Relation::LeftOf => bx - ax,
            Relation::RightOf => ax - bx,
            Relation::And => {
                // Conjunction asserts no geometry; both present suffices.
                return sa.min(sb);
            }
        };
        let s_rel =
            norm_score(separation as f32, self.cfg.relation_margin_px as f32, 4.0);
        sa.min(sb).min(s_rel)
    }

    fn any_object_score(&self, an: &ImageAnalysis) -> f32 {
        an.comps
            .iter()
            .map(|c| norm_score(c.best_score, self.cfg.corr_threshold, 0.3))
            .fold(0.0, f32::max)
    }

    fn category_score(&self, an: &ImageAnalysis, category: Category) -> f32 {
        an.comps
            .iter()
            .filter(|c| c.best_shape.category() == category)
            .map(|c| norm_score(c.best_score, self.cfg.corr_threshold, 0.3))
            .fold(0.0, f32::max)
    }

    fn prompt_match_score(&self, an: &ImageAnalysis, scene: &SceneGraph, colors_stated: bool) -> f32 {
        let mut score = 1.0f32;
        for obj in &scene.objects {
            let s = if colors_stated {
                self.object_with_color_score(an, obj.shape, obj.color)
            } else {
                self.object_score(an, obj.shape)
            };
            score = score.min(s);
        }
        if let Some(rel) = scene.relation {
            if rel != Relation::And {
                let head = &scene.objects[scene.head_index];
                let dep = &scene.objects[1 - scene.head_index];
                score = score.min(self.relation_score(an, head.shape, rel, dep.shape));
            }
        }
        score
    }

    /// Answers one question about a [3,H,W] image.
    pub fn answer(&self, pixels: &[f32], h: usize, w: usize, question: &Question) -> (bool, f32) {
        let an = self.analyze(pixels, h, w);
        self.answer_with(&an, question)
    }

    fn answer_with(&self, an: &ImageAnalysis, question: &Question) -> (bool, f32) {
        let score = match question {
            Question::ObjectPresent { shape } => self.object_score(an, *shape),
            Question::ColorPresent { color } => self.color_score(an, *color),
            Question::ObjectWithColor { shape, color } => {
                self.object_with_color_score(an, *shape, *color)
            }
            Question::RelationHolds { a, relation, b } => {
                self.relation_score(an, *a, *relation, *b)
            }
            Question::AnyObjectPresent => self.any_object_score(an),
            Question::CategoryPresent { category } => self.category_score(an, *category),
            Question::PromptMatches { scene, colors_stated } => {
                self.prompt_match_score(an, scene, *colors_stated)
            }
        };
        (score >= DECISION, score)
    }

    /// Answers a whole battery with one segmentation pass.
    pub fn answer_battery(
        &self,
        pixels: &[f32],
        h: usize,
        w: usize,
        provenance: &Provenance,
        questions: &[Question],
    ) -> Vec<AnnotationRecord> {
        let an = self.analyze(pixels, h, w);
        questions
            .iter()
            .map(|q| {
                let (answer, score) = self.answer_with(&an, q);
                AnnotationRecord {
                    provenance: provenance.clone(),
                    question: q.clone(),
                    answer,
                    score,
                }
            })
            .collect()
    }
}

pub fn color_dist(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

pub fn nearest_color(rgb: &[f32; 3]) -> Color {
    COLORS
        .iter()
        .copied()
        .min_by(|a, b| {
            color_dist(rgb, &a.rgb()).partial_cmp(&color_dist(rgb, &b.rgb())).unwrap()
        })
        .unwrap()
}

/// The question battery asked of every image generated for `prompt`.
pub fn battery(prompt: &PromptSpec) -> Vec<Question> {
    let scene = &prompt.scene;
    let colors = prompt.template.states_colors();
    let mut qs = Vec::new();
    for idx in &scene.surface_order {
        let obj = &scene.objects[*idx];
        qs.push(Question::ObjectPresent { shape: obj.shape });
        if colors {
            qs.push(Question::ColorPresent { color: obj.color });
            qs.push(Question::ObjectWithColor { shape: obj.shape, color: obj.color });
        }
    }
    if let Some(rel) = scene.relation {
        if rel != Relation::And {
            let head = &scene.objects[scene.head_index];
            let dep = &scene.objects[1 - scene.head_index];
            qs.push(Question::RelationHolds { a: head.shape, relation: rel, b: dep.shape });
        }
    }
    qs.push(Question::PromptMatches { scene: scene.clone(), colors_stated: colors });
    qs
}

/// The retrieval-hierarchy battery for single-object prompts: is anything
/// there, is something of the right category there, is the exact shape there.
pub fn hierarchy_battery(shape: Shape) -> Vec<Question> {
    vec![
        Question::AnyObjectPresent,
        Question::CategoryPresent { category: shape.category() },
        Question::ObjectPresent { shape },
    ]
}

/// Per-question-kind agreement between the primary and variant annotators on
/// a random subset of images.
#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    pub rows: Vec<AgreementRow>,
    pub audited_images: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementRow {
    pub kind: QuestionKind,
    pub n: usize,
    pub f1: f64,
    pub f1_degenerate: bool,
    pub kappa: f64,
    pub kappa_degenerate: bool,
}

/// Re-annotates `fraction` of the images with the variant annotator and
/// reports per-kind F1 and kappa against the primary answers.
pub fn overlap_audit(
    images: &[(Vec<f32>, usize, usize, Provenance, Vec<Question>)],
    fraction: f64,
    rng: &mut Rng,
    primary: &Annotator,
    variant: &Annotator,
) -> AgreementReport {
    let take = ((images.len() as f64) * fraction).round() as usize;
    let order = rng.permutation(images.len());
    let chosen = &order[..take.min(images.len())];

    let mut per_kind: std::collections::BTreeMap<&'static str, (QuestionKind, Vec<bool>, Vec<bool>)> =
        std::collections::BTreeMap::new();
    for &i in chosen {
        let (pixels, h, w, prov, questions) = &images[i];
        let a = primary.answer_battery(pixels, *h, *w, prov, questions);
        let b = variant.answer_battery(pixels, *h, *w, prov, questions);
        for (ra, rb) in a.iter().zip(&b) {
            let entry = per_kind
                .entry(ra.question.kind().name())
                .or_insert_with(|| (ra.question.kind(), Vec::new(), Vec::new()));
            entry.1.push(ra.answer);
            entry.2.push(rb.answer);
        }
    }

    let rows = per_kind
        .into_values()
        .map(|(kind, a, b)| {
            let f = f1(&a, &b);
            let k = cohens_kappa(&a, &b);
            AgreementRow {
                kind,
                n: a.len(),
                f1: f.value,
                f1_degenerate: f.degenerate,
                kappa: k.value,
                kappa_degenerate: k.degenerate,
            }
        })
        .collect();
    AgreementReport { rows, audited_images: chosen.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provenance::LensMode;
    use crate::scenelang::render::{render, BACKGROUND};
    use crate::scenelang::{ObjectSpec, SceneGraph, Template};

    fn blank() -> Vec<f32> {
        let mut p = vec![0.0f32; 3 * 32 * 32];
        for ch in 0..3 {
            p[ch * 1024..(ch + 1) * 1024].fill(BACKGROUND[ch]);
        }
        p
    }

    #[test]
    fn blank_image_answers_every_presence_question_false() {
        let ann = Annotator::with_defaults();
        let p = blank();
        for q in [
            Question::AnyObjectPresent,
            Question::ObjectPresent { shape: Shape::Circle },
            Question::ColorPresent { color: Color::Red },
            Question::CategoryPresent { category: Category::Curved },
        ] {
            let (ans, score) = ann.answer(&p, 32, 32, &q);
            assert!(!ans, "{q:?} should be false on blank, score {score}");
        }
    }

    #[test]
    fn gold_single_object_prompt_matches() {
        let ann = Annotator::with_defaults();
        let scene = SceneGraph::single(ObjectSpec::new(Shape::Star, Color::Cyan));
        let img = render(&scene);
        let (ans, score) =
            ann.answer(&img.pixels, 32, 32, &Question::PromptMatches { scene, colors_stated: true });
        assert!(ans, "score {score}");
    }

    #[test]
    fn flipped_relation_answers_false() {
        let ann = Annotator::with_defaults();
        let scene = SceneGraph::pair(
            ObjectSpec::new(Shape::Circle, Color::White),
            ObjectSpec::new(Shape::Square, Color::White),
            Relation::Above,
            false,
        );
        let img = render(&scene);
        let (above, _) = ann.answer(
            &img.pixels,
            32,
            32,
            &Question::RelationHolds { a: Shape::Circle, relation: Relation::Above, b: Shape::Square },
        );
        let (below, _) = ann.answer(
            &img.pixels,
            32,
            32,
            &Question::RelationHolds { a: Shape::Circle, relation: Relation::Below, b: Shape::Square },
        );
        assert!(above);
        assert!(!below);
    }

    #[test]
    fn hierarchy_answers_nest_on_gold() {
        let ann = Annotator::with_defaults();
        for shape in crate::scenelang::SHAPES {
            let scene = SceneGraph::single(ObjectSpec::new(shape, Color::Orange));
            let img = render(&scene);
            let qs = hierarchy_battery(shape);
            let prov = Provenance::new("test", 0, 0, LensMode::WithLn);
            let recs = ann.answer_battery(&img.pixels, 32, 32, &prov, &qs);
            assert!(recs[0].answer && recs[1].answer && recs[2].answer, "{shape:?}");
            assert!(recs[0].score >= recs[1].score && recs[1].score >= recs[2].score);
        }
    }

    #[test]
    fn score_invariant_answer_iff_score_above_decision() {
        let ann = Annotator::with_defaults();
        let scene = SceneGraph::pair(
            ObjectSpec::new(Shape::Heart, Color::Red),
            ObjectSpec::new(Shape::Cross, Color::Blue),
            Relation::And,
            false,
        );
        let prompt = crate::scenelang::prompt_from_scene(scene, Template::T3TwoColoredObjects);
        let img = render(&prompt.scene);
        let prov = Provenance::new("x", 0, 0, LensMode::WithLn);
        for r in ann.answer_battery(&img.pixels, 32, 32, &prov, &battery(&prompt)) {
            assert_eq!(r.answer, r.score >= DECISION);
        }
    }

    #[test]
    fn audit_with_identical_annotators_gives_kappa_one() {
        let ann_a = Annotator::with_defaults();
        let ann_b = Annotator::with_defaults();
        let mut images = Vec::new();
        for (i, shape) in crate::scenelang::SHAPES.iter().enumerate() {
            let scene = SceneGraph::single(ObjectSpec::new(*shape, Color::Green));
            let prompt = crate::scenelang::prompt_from_scene(scene, Template::T2ColoredObject);
            let img = render(&prompt.scene);
            // Mix in a blank so both answer classes appear.
            let pix = if i % 3 == 0 { blank() } else { img.pixels.clone() };
            images.push((
                pix,
                32usize,
                32usize,
                Provenance::new(&prompt.id, 12, i as u64, LensMode::WithLn),
                battery(&prompt),
            ));
        }
        let mut rng = Rng::new(5, 0);
        let report = overlap_audit(&images, 1.0, &mut rng, &ann_a, &ann_b);
        assert_eq!(report.audited_images, images.len());
        for row in &report.rows {
            if !row.kappa_degenerate {
                assert!((row.kappa - 1.0).abs() < 1e-9, "{:?}: {}", row.kind, row.kappa);
            }
        }
    }

    #[test]
    fn audit_fraction_zero_is_empty() {
        let mut rng = Rng::new(5, 0);
        let report =
            overlap_audit(&[], 0.0, &mut rng, &Annotator::with_defaults(), &Annotator::with_defaults());
        assert!(report.rows.is_empty());
        assert_eq!(report.audited_images, 0);
    }

    #[test]
    fn raising_threshold_never_flips_false_to_true() {
        // Monotone threshold property on the object_present family.
        let base = Annotator::with_defaults();
        let strict = Annotator::new(AnnotatorConfig {
            corr_threshold: 0.85,
            ..AnnotatorConfig::default()
        });
        for shape in crate::scenelang::SHAPES {
            let scene = SceneGraph::single(ObjectSpec::new(shape, Color::Blue));
            let img = render(&scene);
            for probe in crate::scenelang::SHAPES {
                let q = Question::ObjectPresent { shape: probe };
                let (ans_base, _) = base.answer(&img.pixels, 32, 32, &q);
                let (ans_strict, _) = strict.answer(&img.pixels, 32, 32, &q);
                assert!(!(ans_strict && !ans_base), "monotonicity violated for {shape:?}/{probe:?}");
            }
        }
    }
}
