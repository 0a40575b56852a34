//! Template realization and exhaustive enumeration.

use super::{
    tokenize, Color, ObjectSpec, PromptSpec, Relation, SceneGraph, Shape, Template, COLORS,
    SHAPES, SPATIAL_RELATIONS,
};

/// Default color for templates that do not state one.
pub const UNSTATED_COLOR: Color = Color::White;

fn noun_phrase(obj: &ObjectSpec, with_color: bool) -> String {
    if with_color {
        format!("a {} {}", obj.color.word(), obj.shape.word())
    } else {
        format!("a {}", obj.shape.word())
    }
}

/// Surface text of a scene under a template.
pub fn sentence_text(scene: &SceneGraph, template: Template) -> String {
    let colors = template.states_colors();
    match template {
        Template::T1Object | Template::T2ColoredObject => noun_phrase(&scene.objects[0], colors),
        Template::T3TwoColoredObjects => {
            let first = &scene.objects[scene.surface_order[0]];
            let second = &scene.objects[scene.surface_order[1]];
            format!("{} and {}", noun_phrase(first, colors), noun_phrase(second, colors))
        }
        Template::T4RelationHeadFirst => {
            let rel = scene.relation.expect("relation template");
            let head = &scene.objects[scene.head_index];
            let dep = &scene.objects[1 - scene.head_index];
            format!(
                "{} {} {}",
                noun_phrase(head, colors),
                rel.words().join(" "),
                noun_phrase(dep, colors)
            )
        }
        Template::T5RelationHeadSecond => {
            // Fronted locative: "above a square a circle" places the head
            // (the located object, still the syntactic antecedent) second in
            // the surface order.
            let rel = scene.relation.expect("relation template");
            let head = &scene.objects[scene.head_index];
            let dep = &scene.objects[1 - scene.head_index];
            format!(
                "{} {} {}",
                rel.words().join(" "),
                noun_phrase(dep, colors),
                noun_phrase(head, colors)
            )
        }
    }
}

fn slug(scene: &SceneGraph, template: Template) -> String {
    let t = template.name().to_lowercase();
    match template {
        Template::T1Object => format!("{t}-{}", scene.objects[0].shape.word()),
        Template::T2ColoredObject => format!(
            "{t}-{}-{}",
            scene.objects[0].color.word(),
            scene.objects[0].shape.word()
        ),
        Template::T3TwoColoredObjects => {
            let a = &scene.objects[scene.surface_order[0]];
            let b = &scene.objects[scene.surface_order[1]];
            format!(
                "{t}-{}-{}-and-{}-{}",
                a.color.word(),
                a.shape.word(),
                b.color.word(),
                b.shape.word()
            )
        }
        Template::T4RelationHeadFirst | Template::T5RelationHeadSecond => {
            let rel = scene.relation.expect("relation template");
            let head = &scene.objects[scene.head_index];
            let dep = &scene.objects[1 - scene.head_index];
            format!("{t}-{}-{}-{}", head.shape.word(), rel.name(), dep.shape.word())
        }
    }
}

/// Builds the full `PromptSpec` for a scene under a template.
pub fn prompt_from_scene(scene: SceneGraph, template: Template) -> PromptSpec {
    debug_assert!(scene.validate().is_ok(), "invalid scene for prompt");
    let text = sentence_text(&scene, template);
    let token_ids = tokenize(&text).expect("grammar sentence fits T_MAX");
    let frequency_classes = scene.objects.iter().map(|o| o.shape.frequency_class()).collect();
    PromptSpec { id: slug(&scene, template), text, token_ids, scene, template, frequency_classes }
}

fn single(shape: Shape, color: Color) -> SceneGraph {
    SceneGraph::single(ObjectSpec::new(shape, color))
}

/// Exhaustive enumeration of a template's prompts.
///
/// T1/T2 enumerate the vocabulary; T3 enumerates ordered pairs of colored
/// objects with distinct shapes; T4/T5 enumerate ordered distinct shape pairs
/// crossed with the four spatial relations.
pub fn grammar_enumerate(template: Template) -> Vec<PromptSpec> {
    let mut out = Vec::new();
    match template {
        Template::T1Object => {
            for s in SHAPES {
                out.push(prompt_from_scene(single(s, UNSTATED_COLOR), template));
            }
        }
        Template::T2ColoredObject => {
            for s in SHAPES {
                for c in COLORS {
                    out.push(prompt_from_scene(single(s, c), template));
                }
            }
        }
        Template::T3TwoColoredObjects => {
            for s1 in SHAPES {
                for c1 in COLORS {
                    for s2 in SHAPES {
                        if s1 == s2 {
                            continue;
                        }
                        for c2 in COLORS {
                            let scene = SceneGraph::pair(
                                ObjectSpec::new(s1, c1),
                                ObjectSpec::new(s2, c2),
                                Relation::And,
                                false,
                            );
                            out.push(prompt_from_scene(scene, template));
                        }
                    }
                }
            }
        }
        Template::T4RelationHeadFirst | Template::T5RelationHeadSecond => {
            let head_second = template == Template::T5RelationHeadSecond;
            for s1 in SHAPES {
                for s2 in SHAPES {
                    if s1 == s2 {
                        continue;
                    }
                    for rel in SPATIAL_RELATIONS {
                        let scene = SceneGraph::pair(
                            ObjectSpec::new(s1, UNSTATED_COLOR),
                            ObjectSpec::new(s2, UNSTATED_COLOR),
                            rel,
                            head_second,
                        );
                        out.push(prompt_from_scene(scene, template));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{detokenize, Template, T_MAX};
    use super::*;

    #[test]
    fn enumeration_counts() {
        assert_eq!(grammar_enumerate(Template::T1Object).len(), 12);
        assert_eq!(grammar_enumerate(Template::T2ColoredObject).len(), 96);
        // Counting oracle: ordered colored pairs with distinct shapes.
        let t3 = grammar_enumerate(Template::T3TwoColoredObjects);
        assert_eq!(t3.len(), 96 * 88);
        assert_eq!(grammar_enumerate(Template::T4RelationHeadFirst).len(), 12 * 11 * 4);
        assert_eq!(grammar_enumerate(Template::T5RelationHeadSecond).len(), 12 * 11 * 4);
    }

    #[test]
    fn every_grammar_sentence_tokenizes_and_roundtrips() {
        let mut max_len = 0;
        for template in super::super::TEMPLATES {
            for p in grammar_enumerate(template) {
                assert_eq!(p.token_ids.len(), T_MAX, "{}", p.text);
                assert_eq!(detokenize(&p.token_ids).unwrap(), p.text);
                let words = 1 + p.text.split_whitespace().count();
                max_len = max_len.max(words);
            }
        }
        // Longest sentence must fit within T_MAX including BOS.
        assert!(max_len <= T_MAX, "longest sentence uses {max_len} tokens");
        assert_eq!(max_len, 8); // "a red circle and a blue square" + BOS
    }

    #[test]
    fn t5_head_is_linearly_second() {
        for p in grammar_enumerate(Template::T5RelationHeadSecond) {
            let head_pos = p
                .scene
                .surface_order
                .iter()
                .position(|&i| i == p.scene.head_index)
                .unwrap();
            assert_eq!(head_pos, 1);
            // And the head noun really is the later one in the text.
            let head_word = p.scene.objects[p.scene.head_index].shape.word();
            let text_pos = p.text.rfind(head_word).unwrap();
            let dep_word = p.scene.objects[1 - p.scene.head_index].shape.word();
            assert!(text_pos > p.text.find(dep_word).unwrap());
        }
    }

    #[test]
    fn prompt_ids_are_unique_per_template() {
        for template in super::super::TEMPLATES {
            let prompts = grammar_enumerate(template);
            let mut ids: Vec<&str> = prompts.iter().map(|p| p.id.as_str()).collect();
            ids.sort_unstable();
            let before = ids.len();
            ids.dedup();
            assert_eq!(ids.len(), before);
        }
    }
}
