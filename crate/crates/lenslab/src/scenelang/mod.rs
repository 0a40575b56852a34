//! Synthetic prompt grammar with programmatic ground truth.
//!
//! A closed vocabulary of 12 shapes (6 common, 6 rare), 8 palette colors and
//! 4 spatial relations generates five prompt templates. Every prompt carries
//! its gold scene graph, gold syntax (head vs. dependent, surface order) and
//! per-shape frequency class, so no external parser or human labeling is
//! needed anywhere downstream.

mod corpus;
mod grammar;
pub mod render;

pub use corpus::{build_corpus, load_corpus, save_corpus, CorpusEntry};
pub use grammar::{grammar_enumerate, prompt_from_scene, sentence_text};
pub use render::{render, GoldImage, IMG_SIZE};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GrammarError {
    #[error("unknown word '{0}'")]
    UnknownWord(String),
    #[error("sentence too long: {got} tokens exceed T_max {max}")]
    TooLong { got: usize, max: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Maximum token sequence length, including BOS and padding.
pub const T_MAX: usize = 12;

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
/// Reserved for masked-token pretraining; never produced by `tokenize`.
pub const MASK_ID: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    // Common
    Circle,
    Square,
    Triangle,
    Cross,
    Heart,
    Star,
    // Rare
    Trapezoid,
    Crescent,
    Arrow,
    Hexagram,
    Annulus,
    Lightning,
}

pub const SHAPES: [Shape; 12] = [
    Shape::Circle,
    Shape::Square,
    Shape::Triangle,
    Shape::Cross,
    Shape::Heart,
    Shape::Star,
    Shape::Trapezoid,
    Shape::Crescent,
    Shape::Arrow,
    Shape::Hexagram,
    Shape::Annulus,
    Shape::Lightning,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Orange,
    Purple,
    White,
    Cyan,
}

pub const COLORS: [Color; 8] = [
    Color::Red,
    Color::Green,
    Color::Blue,
    Color::Yellow,
    Color::Orange,
    Color::Purple,
    Color::White,
    Color::Cyan,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Curved,
    Angular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    And,
    Above,
    Below,
    LeftOf,
    RightOf,
}

pub const SPATIAL_RELATIONS: [Relation; 4] =
    [Relation::Above, Relation::Below, Relation::LeftOf, Relation::RightOf];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyClass {
    Common,
    Rare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Template {
    /// "a circle"
    T1Object,
    /// "a red circle"
    T2ColoredObject,
    /// "a red circle and a blue square"
    T3TwoColoredObjects,
    /// "a circle above a square" (head mentioned first)
    T4RelationHeadFirst,
    /// "above a square a circle" (head mentioned second)
    T5RelationHeadSecond,
}

pub const TEMPLATES: [Template; 5] = [
    Template::T1Object,
    Template::T2ColoredObject,
    Template::T3TwoColoredObjects,
    Template::T4RelationHeadFirst,
    Template::T5RelationHeadSecond,
];

impl Template {
    pub fn name(&self) -> &'static str {
        match self {
            Template::T1Object => "T1",
            Template::T2ColoredObject => "T2",
            Template::T3TwoColoredObjects => "T3",
            Template::T4RelationHeadFirst => "T4",
            Template::T5RelationHeadSecond => "T5",
        }
    }

    /// Whether the surface text states object colors.
    pub fn states_colors(&self) -> bool {
        matches!(self, Template::T2ColoredObject | Template::T3TwoColoredObjects)
    }
}

impl Shape {
    pub fn word(&self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Heart => "heart",
            Shape::Star => "star",
            Shape::Trapezoid => "trapezoid",
            Shape::Crescent => "crescent",
            Shape::Arrow => "arrow",
            Shape::Hexagram => "hexagram",
            Shape::Annulus => "annulus",
            Shape::Lightning => "lightning",
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Shape::Circle | Shape::Heart | Shape::Crescent | Shape::Annulus => Category::Curved,
            _ => Category::Angular,
        }
    }

    pub fn frequency_class(&self) -> FrequencyClass {
        match self {
            Shape::Circle | Shape::Square | Shape::Triangle | Shape::Cross | Shape::Heart
            | Shape::Star => FrequencyClass::Common,
            _ => FrequencyClass::Rare,
        }
    }

    pub fn index(&self) -> usize {
        SHAPES.iter().position(|s| s == self).unwrap()
    }
}

impl Color {
    pub fn word(&self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Orange => "orange",
            Color::Purple => "purple",
            Color::White => "white",
            Color::Cyan => "cyan",
        }
    }

    /// Palette RGB in [0,1].
    pub fn rgb(&self) -> [f32; 3] {
        match self {
            Color::Red => [1.0, 0.1, 0.1],
            Color::Green => [0.1, 0.9, 0.1],
            Color::Blue => [0.15, 0.25, 1.0],
            Color::Yellow => [1.0, 0.95, 0.15],
            Color::Orange => [1.0, 0.55, 0.05],
            Color::Purple => [0.6, 0.15, 0.85],
            Color::White => [0.95, 0.95, 0.95],
            Color::Cyan => [0.1, 0.9, 0.9],
        }
    }

    pub fn index(&self) -> usize {
        COLORS.iter().position(|c| c == self).unwrap()
    }
}

impl Relation {
    /// Surface words for the relation ("left of" is two tokens).
    pub fn words(&self) -> &'static [&'static str] {
        match self {
            Relation::And => &["and"],
            Relation::Above => &["above"],
            Relation::Below => &["below"],
            Relation::LeftOf => &["left", "of"],
            Relation::RightOf => &["right", "of"],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Relation::And => "and",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
        }
    }

    pub fn inverse(&self) -> Relation {
        match self {
            Relation::And => Relation::And,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
        }
    }
}

/// One object in a scene: a shape with a color. The category is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: Color,
}

impl ObjectSpec {
    pub fn new(shape: Shape, color: Color) -> Self {
        ObjectSpec { shape, color }
    }

    pub fn category(&self) -> Category {
        self.shape.category()
    }
}

/// Gold scene: one or two objects, an optional relation, the syntactic head
/// and the linear mention order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneGraph {
    pub objects: Vec<ObjectSpec>,
    pub relation: Option<Relation>,
    /// Index of the syntactic head (antecedent) in `objects`.
    pub head_index: usize,
    /// Linear mention order of object indices in the surface text.
    pub surface_order: Vec<usize>,
}

impl SceneGraph {
    pub fn single(obj: ObjectSpec) -> Self {
        SceneGraph { objects: vec![obj], relation: None, head_index: 0, surface_order: vec![0] }
    }

    pub fn pair(a: ObjectSpec, b: ObjectSpec, relation: Relation, head_second: bool) -> Self {
        SceneGraph {
            objects: vec![a, b],
            relation: Some(relation),
            head_index: 0,
            surface_order: if head_second { vec![1, 0] } else { vec![0, 1] },
        }
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        let n = self.objects.len();
        if n == 0 || n > 2 {
            return Err(GrammarError::InvalidScene(format!("{n} objects")));
        }
        if (n == 2) != self.relation.is_some() {
            return Err(GrammarError::InvalidScene(
                "relation must be present iff two objects".into(),
            ));
        }
        if self.head_index >= n {
            return Err(GrammarError::InvalidScene("head index out of range".into()));
        }
        let mut sorted = self.surface_order.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(GrammarError::InvalidScene(
                "surface order must be a permutation of object indices".into(),
            ));
        }
        if n == 2 && self.objects[0].shape == self.objects[1].shape {
            return Err(GrammarError::InvalidScene("two-object scenes need distinct shapes".into()));
        }
        Ok(())
    }
}

/// Fully-resolved prompt: text, padded token ids, gold scene and metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub id: String,
    pub text: String,
    pub token_ids: Vec<usize>,
    pub scene: SceneGraph,
    pub template: Template,
    /// Frequency class per object, aligned with `scene.objects`.
    pub frequency_classes: Vec<FrequencyClass>,
}

/// Closed vocabulary. Index = token id.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = vec!["<pad>", "<bos>", "<mask>", "a", "and", "above", "below", "left", "right", "of"];
    for s in SHAPES {
        v.push(s.word());
    }
    for c in COLORS {
        v.push(c.word());
    }
    v
}

pub fn vocab_size() -> usize {
    vocabulary().len()
}

fn word_id(word: &str) -> Result<usize, GrammarError> {
    vocabulary()
        .iter()
        .position(|w| *w == word)
        .ok_or_else(|| GrammarError::UnknownWord(word.to_string()))
}

/// Tokenizes a grammar sentence to exactly `T_MAX` ids: BOS, words, padding.
pub fn tokenize(text: &str) -> Result<Vec<usize>, GrammarError> {
    let mut ids = vec![BOS_ID];
    for word in text.split_whitespace() {
        ids.push(word_id(word)?);
    }
    if ids.len() > T_MAX {
        return Err(GrammarError::TooLong { got: ids.len(), max: T_MAX });
    }
    ids.resize(T_MAX, PAD_ID);
    Ok(ids)
}

/// Inverse of `tokenize` on the non-pad prefix.
pub fn detokenize(ids: &[usize]) -> Result<String, GrammarError> {
    let vocab = vocabulary();
    let mut words = Vec::new();
    for &id in ids {
        if id == PAD_ID {
            break;
        }
        if id == BOS_ID {
            continue;
        }
        let w = vocab
            .get(id)
            .ok_or_else(|| GrammarError::UnknownWord(format!("<id {id}>")))?;
        words.push(*w);
    }
    Ok(words.join(" "))
}
