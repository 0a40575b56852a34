//! Frequency-controlled training corpus.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grammar::{prompt_from_scene, UNSTATED_COLOR};
use super::render::{render, GoldImage};
use super::{
    Color, ObjectSpec, PromptSpec, Relation, SceneGraph, Shape, Template, COLORS, SHAPES,
    SPATIAL_RELATIONS, TEMPLATES,
};
use crate::numerics::Rng;

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub prompt: PromptSpec,
    pub image: GoldImage,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {0}: {1}")]
    BadLine(usize, String),
    #[error("unsupported corpus schema version {0}")]
    BadSchema(u32),
}

/// Picks a shape with rare shapes downweighted to `rare_ratio` times the
/// probability of a common shape.
fn sample_shape(rng: &mut Rng, rare_ratio: f64) -> Shape {
    let weights: Vec<f64> = SHAPES
        .iter()
        .map(|s| match s.frequency_class() {
            super::FrequencyClass::Common => 1.0,
            super::FrequencyClass::Rare => rare_ratio,
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.uniform() as f64 * total;
    for (s, w) in SHAPES.iter().zip(&weights) {
        if x < *w {
            return *s;
        }
        x -= w;
    }
    *SHAPES.last().unwrap()
}

fn sample_distinct_shape(rng: &mut Rng, rare_ratio: f64, other: Shape) -> Shape {
    loop {
        let s = sample_shape(rng, rare_ratio);
        if s != other {
            return s;
        }
    }
}

fn sample_color(rng: &mut Rng) -> Color {
    COLORS[rng.below(COLORS.len())]
}

fn sample_scene(rng: &mut Rng, rare_ratio: f64) -> (SceneGraph, Template) {
    let template = TEMPLATES[rng.below(TEMPLATES.len())];
    let scene = match template {
        Template::T1Object => {
            SceneGraph::single(ObjectSpec::new(sample_shape(rng, rare_ratio), UNSTATED_COLOR))
        }
        Template::T2ColoredObject => {
            SceneGraph::single(ObjectSpec::new(sample_shape(rng, rare_ratio), sample_color(rng)))
        }
        Template::T3TwoColoredObjects => {
            let s1 = sample_shape(rng, rare_ratio);
            let s2 = sample_distinct_shape(rng, rare_ratio, s1);
            SceneGraph::pair(
                ObjectSpec::new(s1, sample_color(rng)),
                ObjectSpec::new(s2, sample_color(rng)),
                Relation::And,
                false,
            )
        }
        Template::T4RelationHeadFirst | Template::T5RelationHeadSecond => {
            let s1 = sample_shape(rng, rare_ratio);
            let s2 = sample_distinct_shape(rng, rare_ratio, s1);
            let rel = SPATIAL_RELATIONS[rng.below(SPATIAL_RELATIONS.len())];
            SceneGraph::pair(
                ObjectSpec::new(s1, UNSTATED_COLOR),
                ObjectSpec::new(s2, UNSTATED_COLOR),
                rel,
                template == Template::T5RelationHeadSecond,
            )
        }
    };
    (scene, template)
}

/// Samples `n` prompts with templates uniform and shape frequencies
/// controlled by `rare_ratio`, rendering each gold image. Entry `i` draws
/// from its own RNG stream, so the corpus is reproducible regardless of
/// construction order.
pub fn build_corpus(rng: &Rng, n: usize, rare_ratio: f64) -> Vec<CorpusEntry> {
    assert!(rare_ratio > 0.0 && rare_ratio <= 1.0, "rare_ratio in (0,1]");
    (0..n)
        .map(|i| {
            let mut item_rng = rng.substream(i as u64);
            let (scene, template) = sample_scene(&mut item_rng, rare_ratio);
            let mut prompt = prompt_from_scene(scene, template);
            prompt.id = format!("c{i:05}-{}", prompt.id);
            let image = render(&prompt.scene);
            CorpusEntry { prompt, image }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    schema_version: u32,
    prompt: PromptSpec,
}

/// Persists the corpus: JSON-lines prompts, per-prompt gold PNGs and an
/// index CSV.
pub fn save_corpus(entries: &[CorpusEntry], dir: &Path) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut jsonl = std::fs::File::create(dir.join("corpus.jsonl"))?;
    for e in entries {
        let line = serde_json::to_string(&CorpusLine {
            schema_version: CORPUS_SCHEMA_VERSION,
            prompt: e.prompt.clone(),
        })
        .expect("prompt serializes");
        writeln!(jsonl, "{line}")?;
    }

    let mut index = csv::Writer::from_path(dir.join("index.csv")).map_err(into_io)?;
    index
        .write_record(["prompt_id", "template", "shapes", "colors", "relation", "frequency_class"])
        .map_err(into_io)?;
    for e in entries {
        let p = &e.prompt;
        let shapes: Vec<&str> = p.scene.objects.iter().map(|o| o.shape.word()).collect();
        let colors: Vec<&str> = p.scene.objects.iter().map(|o| o.color.word()).collect();
        let freq: Vec<String> =
            p.frequency_classes.iter().map(|f| format!("{f:?}").to_lowercase()).collect();
        index
            .write_record([
                p.id.as_str(),
                p.template.name(),
                &shapes.join("+"),
                &colors.join("+"),
                p.scene.relation.map(|r| r.name()).unwrap_or("none"),
                &freq.join("+"),
            ])
            .map_err(into_io)?;
    }
    index.flush()?;

    for e in entries {
        crate::imgio::save_png(
            &e.image.pixels,
            e.image.height,
            e.image.width,
            &dir.join("images").join(format!("{}.png", e.prompt.id)),
        )?;
    }
    Ok(())
}

fn into_io(e: csv::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e))
}

/// Loads prompts from `corpus.jsonl` and re-renders the gold images (the
/// renderer is deterministic, so this reproduces exactly what was saved).
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let file = std::fs::File::open(dir.join("corpus.jsonl"))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine =
            serde_json::from_str(&line).map_err(|e| CorpusError::BadLine(i, e.to_string()))?;
        if parsed.schema_version != CORPUS_SCHEMA_VERSION {
            return Err(CorpusError::BadSchema(parsed.schema_version));
        }
        let image = render(&parsed.prompt.scene);
        entries.push(CorpusEntry { prompt: parsed.prompt, image });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape_counts(entries: &[CorpusEntry]) -> [usize; 12] {
        let mut counts = [0usize; 12];
        for e in entries {
            for o in &e.prompt.scene.objects {
                counts[o.shape.index()] += 1;
            }
        }
        counts
    }

    #[test]
    fn empty_corpus() {
        let rng = Rng::new(1, 0);
        assert!(build_corpus(&rng, 0, 0.05).is_empty());
    }

    #[test]
    fn rare_ratio_controls_frequencies() {
        let rng = Rng::new(7, 0);
        let entries = build_corpus(&rng, 10_000, 0.05);
        let counts = shape_counts(&entries);
        let common_mean: f64 = counts[..6].iter().sum::<usize>() as f64 / 6.0;
        let rare_mean: f64 = counts[6..].iter().sum::<usize>() as f64 / 6.0;
        // Binomial concentration puts each single-shape ratio in [0.03, 0.07].
        for &rc in &counts[6..] {
            let ratio = rc as f64 / common_mean;
            assert!((0.03..=0.07).contains(&ratio), "rare/common ratio {ratio}");
        }
        assert!((rare_mean / common_mean - 0.05).abs() < 0.015);
    }

    #[test]
    fn rare_ratio_one_is_uniform() {
        let rng = Rng::new(8, 0);
        let entries = build_corpus(&rng, 12_000, 1.0);
        let counts = shape_counts(&entries);
        let total: usize = counts.iter().sum();
        let expect = total as f64 / 12.0;
        // 3 sigma for a binomial with p = 1/12.
        let sigma = (total as f64 * (1.0 / 12.0) * (11.0 / 12.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() < 3.0 * sigma, "count {c} vs {expect}");
        }
    }

    #[test]
    fn corpus_is_reproducible() {
        let a = build_corpus(&Rng::new(42, 0), 50, 0.05);
        let b = build_corpus(&Rng::new(42, 0), 50, 0.05);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.prompt, y.prompt);
            assert_eq!(x.image.pixels, y.image.pixels);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let rng = Rng::new(3, 0);
        let entries = build_corpus(&rng, 20, 0.2);
        let dir = std::env::temp_dir().join("lenslab_corpus_test");
        let _ = std::fs::remove_dir_all(&dir);
        save_corpus(&entries, &dir).unwrap();
        let loaded = load_corpus(&dir).unwrap();
        assert_eq!(loaded.len(), entries.len());
        for (a, b) in entries.iter().zip(&loaded) {
            assert_eq!(a.prompt, b.prompt);
            assert_eq!(a.image.pixels, b.image.pixels);
        }
        assert!(dir.join("index.csv").exists());
        assert!(dir.join("images").join(format!("{}.png", entries[0].prompt.id)).exists());
    }
}
