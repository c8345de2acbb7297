//! Ground-truth vocabulary and synthetic scene corpus.
//!
//! A lexicon is a two-level hierarchy per arity: super concepts partition
//! concepts, concepts carry synonym words. Unary concepts are object
//! attributes; binary concepts are spatial relations between object pairs,
//! arranged in exclusive pairs bound to scene axes (first declared pair
//! compares x, second compares y, with the pair's first concept holding for
//! the smaller coordinate).
//!
//! Scenes are sets of objects with uniformly drawn attributes and rejection
//! sampled positions in the unit square. Each scene carries a mention bag:
//! the words a hypothetical speaker used about it, biased toward words that
//! actually apply. Corpus generation tops up rare words with targeted scenes
//! until every word clears the configured mention floor.
//!
//! Everything here is deterministic in (seed, config): scene i always draws
//! from the same derived stream no matter what ran before it.

use crate::config::{ConceptList, GenerationConfig, RunConfig};
use crate::seeding::{self, TAG_MENTIONS, TAG_SCENE, TAG_TOPUP};
use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("word {0:?} appears more than once in the vocabulary")]
    DuplicateWord(String),
    #[error("super concept {0:?} has no concepts")]
    EmptySuper(String),
    #[error("a concept under super concept {0:?} has no synonyms")]
    EmptyConcept(String),
    #[error("ground-truth super concept {name:?} needs at least 2 concepts, has {count}")]
    SuperTooSmall { name: String, count: usize },
    #[error("at most 2 binary super concepts are supported (one per scene axis), got {0}")]
    TooManyBinarySupers(usize),
    #[error("binary super concept {name:?} must be an exclusive pair of 2 concepts, has {count}")]
    BinarySuperNotPair { name: String, count: usize },
    #[error("at least one unary super concept is required")]
    NoUnarySupers,
    #[error("could not place object {object} after {retries} retries (min_separation too tight)")]
    Placement { object: usize, retries: usize },
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error("mention floor unsatisfiable: {0}")]
    UnsatisfiableMentions(String),
    #[error("corpus format error on line {line}: {message}")]
    CorpusFormat { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    Unary,
    Binary,
}

/// Which scene coordinate a binary concept compares, and which side holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationDirection {
    pub axis: usize,
    /// True when the concept holds for the subject with the smaller coordinate.
    pub smaller: bool,
}

#[derive(Debug, Clone)]
pub struct SuperDef {
    pub name: String,
    /// Arity-local concept indices, declaration order.
    pub concepts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ConceptDef {
    /// Canonical name: the first synonym.
    pub name: String,
    pub super_idx: usize,
    /// Arity-local word indices, declaration order.
    pub synonyms: Vec<usize>,
    /// Present only for binary concepts.
    pub direction: Option<RelationDirection>,
}

#[derive(Debug, Clone)]
pub struct WordDef {
    pub text: String,
    pub concept: usize,
}

#[derive(Debug, Clone)]
pub struct ArityLexicon {
    pub supers: Vec<SuperDef>,
    pub concepts: Vec<ConceptDef>,
    pub words: Vec<WordDef>,
}

impl ArityLexicon {
    pub fn word_texts(&self) -> Vec<String> {
        self.words.iter().map(|w| w.text.clone()).collect()
    }

    pub fn synonym_texts(&self, concept: usize) -> Vec<String> {
        self.concepts[concept]
            .synonyms
            .iter()
            .map(|&w| self.words[w].text.clone())
            .collect()
    }
}

/// The full ground-truth vocabulary.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub unary: ArityLexicon,
    pub binary: ArityLexicon,
    lookup: HashMap<String, (Arity, usize)>,
    fingerprint: u64,
}

impl Lexicon {
    pub fn build(
        unary_spec: &IndexMap<String, ConceptList>,
        binary_spec: &IndexMap<String, ConceptList>,
    ) -> Result<Lexicon, OntologyError> {
        if unary_spec.is_empty() {
            return Err(OntologyError::NoUnarySupers);
        }
        if binary_spec.len() > 2 {
            return Err(OntologyError::TooManyBinarySupers(binary_spec.len()));
        }
        for (name, concepts) in binary_spec {
            if concepts.len() != 2 {
                return Err(OntologyError::BinarySuperNotPair {
                    name: name.clone(),
                    count: concepts.len(),
                });
            }
        }

        let unary = Self::build_arity(unary_spec, None)?;
        let binary = Self::build_arity(binary_spec, Some(()))?;

        let mut lookup = HashMap::new();
        for (arity, lex) in [(Arity::Unary, &unary), (Arity::Binary, &binary)] {
            for (i, word) in lex.words.iter().enumerate() {
                if lookup.insert(word.text.clone(), (arity, i)).is_some() {
                    return Err(OntologyError::DuplicateWord(word.text.clone()));
                }
            }
        }

        let mut fp = 0u64;
        for lex in [&unary, &binary] {
            for sup in &lex.supers {
                for &b in sup.name.as_bytes() {
                    fp = seeding::mix(&[fp, u64::from(b)]);
                }
            }
            for word in &lex.words {
                for &b in word.text.as_bytes() {
                    fp = seeding::mix(&[fp, u64::from(b)]);
                }
                fp = seeding::mix(&[fp, word.concept as u64]);
            }
        }

        Ok(Lexicon {
            unary,
            binary,
            lookup,
            fingerprint: fp,
        })
    }

    fn build_arity(
        spec: &IndexMap<String, ConceptList>,
        binary: Option<()>,
    ) -> Result<ArityLexicon, OntologyError> {
        let mut supers = Vec::new();
        let mut concepts = Vec::new();
        let mut words: Vec<WordDef> = Vec::new();
        for (super_idx, (name, concept_lists)) in spec.iter().enumerate() {
            if concept_lists.is_empty() {
                return Err(OntologyError::EmptySuper(name.clone()));
            }
            if concept_lists.len() < 2 {
                return Err(OntologyError::SuperTooSmall {
                    name: name.clone(),
                    count: concept_lists.len(),
                });
            }
            let mut member_ids = Vec::new();
            for (pos, synonyms) in concept_lists.iter().enumerate() {
                if synonyms.is_empty() {
                    return Err(OntologyError::EmptyConcept(name.clone()));
                }
                let concept_idx = concepts.len();
                let mut synonym_ids = Vec::new();
                for text in synonyms {
                    synonym_ids.push(words.len());
                    words.push(WordDef {
                        text: text.clone(),
                        concept: concept_idx,
                    });
                }
                concepts.push(ConceptDef {
                    name: synonyms[0].clone(),
                    super_idx,
                    synonyms: synonym_ids,
                    direction: binary.map(|()| RelationDirection {
                        axis: super_idx,
                        smaller: pos == 0,
                    }),
                });
                member_ids.push(concept_idx);
            }
            supers.push(SuperDef {
                name: name.clone(),
                concepts: member_ids,
            });
        }
        Ok(ArityLexicon {
            supers,
            concepts,
            words,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Lexicon, OntologyError> {
        Self::build(&cfg.super_concepts, &cfg.binary_concepts)
    }

    pub fn lookup(&self, word: &str) -> Option<(Arity, usize)> {
        self.lookup.get(word).copied()
    }

    pub fn arity(&self, arity: Arity) -> &ArityLexicon {
        match arity {
            Arity::Unary => &self.unary,
            Arity::Binary => &self.binary,
        }
    }

    /// Stable digest of the vocabulary contents, used to key feature templates.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn unary_concept_of_word(&self, word: usize) -> usize {
        self.unary.words[word].concept
    }

    pub fn binary_concept_of_word(&self, word: usize) -> usize {
        self.binary.words[word].concept
    }

    /// The other concept in a binary concept's exclusive pair.
    pub fn binary_partner(&self, concept: usize) -> usize {
        let super_def = &self.binary.supers[self.binary.concepts[concept].super_idx];
        let other: Vec<usize> = super_def
            .concepts
            .iter()
            .copied()
            .filter(|&c| c != concept)
            .collect();
        other[0]
    }

    /// (words, concepts, super concepts) for one arity.
    pub fn counts(&self, arity: Arity) -> (usize, usize, usize) {
        let lex = self.arity(arity);
        (lex.words.len(), lex.concepts.len(), lex.supers.len())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectInstance {
    /// Concept index per unary super concept, aligned with super order.
    pub attributes: Vec<usize>,
    pub position: [f64; 2],
}

impl ObjectInstance {
    pub fn possesses(&self, lexicon: &Lexicon, concept: usize) -> bool {
        let super_idx = lexicon.unary.concepts[concept].super_idx;
        self.attributes[super_idx] == concept
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub objects: Vec<ObjectInstance>,
}

/// The words a speaker used about a scene (multiset, arity-local word ids).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MentionBag {
    pub unary: Vec<usize>,
    pub binary: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene: Scene,
    pub mentions: MentionBag,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub records: Vec<SceneRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelState {
    Holds,
    Ambiguous,
    No,
}

/// Ground-truth relation states for every ordered object pair and binary concept.
#[derive(Debug, Clone)]
pub struct RelationTable {
    n: usize,
    per_concept: Vec<Vec<RelState>>,
}

impl RelationTable {
    pub fn state(&self, concept: usize, subject: usize, anchor: usize) -> RelState {
        self.per_concept[concept][subject * self.n + anchor]
    }

    pub fn holds(&self, concept: usize, subject: usize, anchor: usize) -> bool {
        self.state(concept, subject, anchor) == RelState::Holds
    }

    pub fn ambiguous(&self, concept: usize, subject: usize, anchor: usize) -> bool {
        self.state(concept, subject, anchor) == RelState::Ambiguous
    }

    pub fn object_count(&self) -> usize {
        self.n
    }

    /// True when the concept holds for at least one ordered pair.
    pub fn holds_somewhere(&self, concept: usize) -> bool {
        self.per_concept[concept].iter().any(|&s| s == RelState::Holds)
    }
}

/// Computes the tri-state relation table for a scene.
pub fn ground_truth_relations(scene: &Scene, lexicon: &Lexicon, epsilon: f64) -> RelationTable {
    let n = scene.objects.len();
    let mut per_concept = Vec::with_capacity(lexicon.binary.concepts.len());
    for concept in &lexicon.binary.concepts {
        let dir = concept
            .direction
            .expect("binary concepts carry a direction");
        let mut states = vec![RelState::No; n * n];
        for subject in 0..n {
            for anchor in 0..n {
                if subject == anchor {
                    continue;
                }
                let d = scene.objects[subject].position[dir.axis]
                    - scene.objects[anchor].position[dir.axis];
                let state = if d.abs() <= epsilon {
                    RelState::Ambiguous
                } else if (d < 0.0) == dir.smaller {
                    RelState::Holds
                } else {
                    RelState::No
                };
                states[subject * n + anchor] = state;
            }
        }
        per_concept.push(states);
    }
    RelationTable { n, per_concept }
}

/// Draws one scene: uniform attributes, rejection-sampled positions.
pub fn generate_scene(
    lexicon: &Lexicon,
    gen: &GenerationConfig,
    rng: &mut impl Rng,
    id: u64,
) -> Result<Scene, OntologyError> {
    let n = rng.gen_range(gen.min_objects..=gen.max_objects);
    let mut objects: Vec<ObjectInstance> = Vec::with_capacity(n);
    for object in 0..n {
        let mut placed = None;
        for _ in 0..gen.max_place_retries {
            let candidate = [rng.gen::<f64>(), rng.gen::<f64>()];
            let clear = objects.iter().all(|o| {
                let dx = o.position[0] - candidate[0];
                let dy = o.position[1] - candidate[1];
                (dx * dx + dy * dy).sqrt() >= gen.min_separation
            });
            if clear {
                placed = Some(candidate);
                break;
            }
        }
        let position = placed.ok_or(OntologyError::Placement {
            object,
            retries: gen.max_place_retries,
        })?;
        let attributes = lexicon
            .unary
            .supers
            .iter()
            .map(|s| s.concepts[rng.gen_range(0..s.concepts.len())])
            .collect();
        objects.push(ObjectInstance {
            attributes,
            position,
        });
    }
    Ok(Scene { id, objects })
}

/// Samples the mention bag for a scene. Each draw picks a word that applies
/// to the scene with probability `relevance_bias`, otherwise any word.
pub fn generate_mentions(
    scene: &Scene,
    relations: &RelationTable,
    lexicon: &Lexicon,
    gen: &GenerationConfig,
    rng: &mut impl Rng,
) -> MentionBag {
    let mut present_unary: Vec<usize> = Vec::new();
    for (ci, concept) in lexicon.unary.concepts.iter().enumerate() {
        if scene.objects.iter().any(|o| o.attributes[concept.super_idx] == ci) {
            present_unary.extend(concept.synonyms.iter().copied());
        }
    }
    let mut present_binary: Vec<usize> = Vec::new();
    for (ci, concept) in lexicon.binary.concepts.iter().enumerate() {
        if relations.holds_somewhere(ci) {
            present_binary.extend(concept.synonyms.iter().copied());
        }
    }

    let mut bag = MentionBag::default();
    for _ in 0..gen.unary_mentions {
        let relevant = rng.gen::<f64>() < gen.relevance_bias;
        let word = if relevant && !present_unary.is_empty() {
            present_unary[rng.gen_range(0..present_unary.len())]
        } else {
            rng.gen_range(0..lexicon.unary.words.len())
        };
        bag.unary.push(word);
    }
    if !lexicon.binary.words.is_empty() {
        for _ in 0..gen.binary_mentions {
            let relevant = rng.gen::<f64>() < gen.relevance_bias;
            let word = if relevant && !present_binary.is_empty() {
                present_binary[rng.gen_range(0..present_binary.len())]
            } else {
                rng.gen_range(0..lexicon.binary.words.len())
            };
            bag.binary.push(word);
        }
    }
    bag
}

/// Per-word mention totals over a corpus.
pub fn mention_counts(corpus: &Corpus, lexicon: &Lexicon) -> (Vec<usize>, Vec<usize>) {
    let mut unary = vec![0usize; lexicon.unary.words.len()];
    let mut binary = vec![0usize; lexicon.binary.words.len()];
    for record in &corpus.records {
        for &w in &record.mentions.unary {
            unary[w] += 1;
        }
        for &w in &record.mentions.binary {
            binary[w] += 1;
        }
    }
    (unary, binary)
}

/// Generates the full corpus: `cfg.scenes` base scenes plus targeted top-up
/// scenes until every word clears `min_mentions`.
pub fn generate_corpus(lexicon: &Lexicon, cfg: &RunConfig) -> Result<Corpus, OntologyError> {
    let gen = &cfg.generation;
    if gen.min_mentions > 0 && !lexicon.binary.words.is_empty() && gen.binary_mentions == 0 {
        return Err(OntologyError::UnsatisfiableMentions(
            "binary words can never be mentioned with binary_mentions = 0".into(),
        ));
    }

    let mut corpus = Corpus::default();
    for i in 0..cfg.scenes {
        let mut scene_rng = seeding::stream(&[cfg.seed, TAG_SCENE, i as u64]);
        let scene = generate_scene(lexicon, gen, &mut scene_rng, i as u64)?;
        let relations = ground_truth_relations(&scene, lexicon, gen.ambiguity_epsilon);
        let mut mention_rng = seeding::stream(&[cfg.seed, TAG_MENTIONS, i as u64]);
        let mentions = generate_mentions(&scene, &relations, lexicon, gen, &mut mention_rng);
        corpus.records.push(SceneRecord { scene, mentions });
    }

    let (mut unary_counts, mut binary_counts) = mention_counts(&corpus, lexicon);
    let budget = 64 + 4 * gen.min_mentions * (unary_counts.len() + binary_counts.len());
    let mut topup = 0u64;
    loop {
        let deficit_unary = unary_counts.iter().position(|&c| c < gen.min_mentions);
        let deficit_binary = binary_counts.iter().position(|&c| c < gen.min_mentions);
        let (arity, word) = match (deficit_unary, deficit_binary) {
            (Some(w), _) => (Arity::Unary, w),
            (None, Some(w)) => (Arity::Binary, w),
            (None, None) => break,
        };
        if topup as usize > budget {
            return Err(OntologyError::UnsatisfiableMentions(format!(
                "top-up budget exhausted after {topup} scenes"
            )));
        }
        let id = (cfg.scenes as u64) + topup;
        let mut rng = seeding::stream(&[cfg.seed, TAG_TOPUP, topup]);
        topup += 1;
        let mut scene = generate_scene(lexicon, gen, &mut rng, id)?;
        if arity == Arity::Unary {
            let concept = lexicon.unary_concept_of_word(word);
            let super_idx = lexicon.unary.concepts[concept].super_idx;
            scene.objects[0].attributes[super_idx] = concept;
        }
        let relations = ground_truth_relations(&scene, lexicon, gen.ambiguity_epsilon);
        if arity == Arity::Binary {
            let concept = lexicon.binary_concept_of_word(word);
            if !relations.holds_somewhere(concept) {
                continue; // this layout cannot yield positives; try the next stream
            }
        }
        let mut mentions = generate_mentions(&scene, &relations, lexicon, gen, &mut rng);
        match arity {
            Arity::Unary => {
                if !mentions.unary.contains(&word) {
                    mentions.unary[0] = word;
                }
            }
            Arity::Binary => {
                if !mentions.binary.contains(&word) {
                    mentions.binary[0] = word;
                }
            }
        }
        for &w in &mentions.unary {
            unary_counts[w] += 1;
        }
        for &w in &mentions.binary {
            binary_counts[w] += 1;
        }
        corpus.records.push(SceneRecord { scene, mentions });
    }
    Ok(corpus)
}

#[derive(Serialize, Deserialize)]
struct ObjectWire {
    attrs: Vec<String>,
    pos: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    id: u64,
    objects: Vec<ObjectWire>,
    unary_mentions: Vec<String>,
    binary_mentions: Vec<String>,
}

impl Corpus {
    /// One scene per line, words spelled out.
    pub fn to_jsonl(&self, lexicon: &Lexicon) -> String {
        let mut out = String::new();
        for record in &self.records {
            let wire = RecordWire {
                id: record.scene.id,
                objects: record
                    .scene
                    .objects
                    .iter()
                    .map(|o| ObjectWire {
                        attrs: o
                            .attributes
                            .iter()
                            .map(|&c| lexicon.unary.concepts[c].name.clone())
                            .collect(),
                        pos: o.position,
                    })
                    .collect(),
                unary_mentions: record
                    .mentions
                    .unary
                    .iter()
                    .map(|&w| lexicon.unary.words[w].text.clone())
                    .collect(),
                binary_mentions: record
                    .mentions
                    .binary
                    .iter()
                    .map(|&w| lexicon.binary.words[w].text.clone())
                    .collect(),
            };
            let line = serde_json::to_string(&wire).expect("corpus record serializes");
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, lexicon: &Lexicon) -> Result<Corpus, OntologyError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let wire: RecordWire =
                serde_json::from_str(line).map_err(|e| OntologyError::CorpusFormat {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let mut objects = Vec::with_capacity(wire.objects.len());
            for ow in &wire.objects {
                if ow.attrs.len() != lexicon.unary.supers.len() {
                    return Err(OntologyError::CorpusFormat {
                        line: i + 1,
                        message: format!(
                            "expected {} attributes, got {}",
                            lexicon.unary.supers.len(),
                            ow.attrs.len()
                        ),
                    });
                }
                let mut attributes = Vec::with_capacity(ow.attrs.len());
                for (super_idx, name) in ow.attrs.iter().enumerate() {
                    let concept = lexicon
                        .unary
                        .supers[super_idx]
                        .concepts
                        .iter()
                        .copied()
                        .find(|&c| lexicon.unary.concepts[c].name == *name)
                        .ok_or_else(|| OntologyError::CorpusFormat {
                            line: i + 1,
                            message: format!(
                                "unknown concept {name:?} for super concept {}",
                                lexicon.unary.supers[super_idx].name
                            ),
                        })?;
                    attributes.push(concept);
                }
                if !ow.pos.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                    return Err(OntologyError::CorpusFormat {
                        line: i + 1,
                        message: format!("position {:?} outside the unit square", ow.pos),
                    });
                }
                objects.push(ObjectInstance {
                    attributes,
                    position: ow.pos,
                });
            }
            let lookup_words = |names: &[String], arity: Arity| -> Result<Vec<usize>, OntologyError> {
                names
                    .iter()
                    .map(|name| match lexicon.lookup(name) {
                        Some((a, w)) if a == arity => Ok(w),
                        _ => Err(OntologyError::CorpusFormat {
                            line: i + 1,
                            message: format!("unknown {arity:?} word {name:?}"),
                        }),
                    })
                    .collect()
            };
            let mentions = MentionBag {
                unary: lookup_words(&wire.unary_mentions, Arity::Unary)?,
                binary: lookup_words(&wire.binary_mentions, Arity::Binary)?,
            };
            records.push(SceneRecord {
                scene: Scene {
                    id: wire.id,
                    objects,
                },
                mentions,
            });
        }
        Ok(Corpus { records })
    }
}

/// Enumerates every attribute combination the lexicon admits, one concept per
/// unary super concept, in lexicographic order of the per-super choices.
pub fn enumerate_attribute_tuples(lexicon: &Lexicon) -> Vec<Vec<usize>> {
    let mut tuples: Vec<Vec<usize>> = vec![Vec::new()];
    for sup in &lexicon.unary.supers {
        let mut next = Vec::with_capacity(tuples.len() * sup.concepts.len());
        for tuple in &tuples {
            for &concept in &sup.concepts {
                let mut t = tuple.clone();
                t.push(concept);
                next.push(t);
            }
        }
        tuples = next;
    }
    tuples
}

/// Renders a ground-truth hierarchy in the same canonical text form used for
/// induced hierarchies: one line per super concept, concepts as sorted word
/// groups, supers sorted by their first group.
pub fn render_ground_truth_hierarchy(lexicon: &Lexicon) -> String {
    let mut out = String::new();
    for (label, lex) in [("unary", &lexicon.unary), ("binary", &lexicon.binary)] {
        if lex.words.is_empty() {
            continue;
        }
        let _ = writeln!(out, "[{label}]");
        let mut supers: Vec<Vec<String>> = lex
            .supers
            .iter()
            .map(|s| {
                let mut groups: Vec<String> = s
                    .concepts
                    .iter()
                    .map(|&c| {
                        let mut words = lex.synonym_texts(c);
                        words.sort();
                        format!("({})", words.join(" "))
                    })
                    .collect();
                groups.sort();
                groups
            })
            .collect();
        supers.sort();
        for groups in supers {
            let _ = writeln!(out, "super: {}", groups.join(" "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_lexicon() -> Lexicon {
        Lexicon::from_config(&RunConfig::builtin_default()).unwrap()
    }

    #[test]
    fn default_vocabulary_counts() {
        let lex = default_lexicon();
        assert_eq!(lex.counts(Arity::Unary), (19, 15, 4));
        assert_eq!(lex.counts(Arity::Binary), (4, 4, 2));
        assert_eq!(lex.lookup("block"), Some((Arity::Unary, 9)));
        assert_eq!(lex.unary.concepts[lex.unary.words[9].concept].name, "cube");
    }

    #[test]
    fn minimal_two_word_lexicon_is_valid() {
        let mut unary = IndexMap::new();
        unary.insert(
            "state".to_string(),
            vec![vec!["on".to_string()], vec!["off".to_string()]],
        );
        let binary = IndexMap::new();
        let lex = Lexicon::build(&unary, &binary).unwrap();
        assert_eq!(lex.counts(Arity::Unary), (2, 2, 1));
        assert_eq!(lex.counts(Arity::Binary), (0, 0, 0));
    }

    #[test]
    fn duplicate_words_are_rejected() {
        let mut unary = IndexMap::new();
        unary.insert(
            "shape".to_string(),
            vec![
                vec!["cube".to_string(), "box".to_string()],
                vec!["box".to_string()],
            ],
        );
        let err = Lexicon::build(&unary, &IndexMap::new()).unwrap_err();
        assert!(matches!(err, OntologyError::DuplicateWord(w) if w == "box"));
    }

    #[test]
    fn structural_violations_are_rejected() {
        let mut single = IndexMap::new();
        single.insert("size".to_string(), vec![vec!["big".to_string()]]);
        assert!(matches!(
            Lexicon::build(&single, &IndexMap::new()),
            Err(OntologyError::SuperTooSmall { .. })
        ));

        let mut unary = IndexMap::new();
        unary.insert(
            "size".to_string(),
            vec![vec!["big".to_string()], vec!["small".to_string()]],
        );
        let mut three_supers = IndexMap::new();
        for name in ["a", "b", "c"] {
            three_supers.insert(
                name.to_string(),
                vec![vec![format!("{name}1")], vec![format!("{name}2")]],
            );
        }
        assert!(matches!(
            Lexicon::build(&unary, &three_supers),
            Err(OntologyError::TooManyBinarySupers(3))
        ));

        let mut triple = IndexMap::new();
        triple.insert(
            "axis".to_string(),
            vec![
                vec!["lo".to_string()],
                vec!["mid".to_string()],
                vec!["hi".to_string()],
            ],
        );
        assert!(matches!(
            Lexicon::build(&unary, &triple),
            Err(OntologyError::BinarySuperNotPair { count: 3, .. })
        ));
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let lex = default_lexicon();
        let cfg = RunConfig::builtin_default();
        let mut a = seeding::stream(&[7, TAG_SCENE, 0]);
        let mut b = seeding::stream(&[7, TAG_SCENE, 0]);
        let sa = generate_scene(&lex, &cfg.generation, &mut a, 0).unwrap();
        let sb = generate_scene(&lex, &cfg.generation, &mut b, 0).unwrap();
        assert_eq!(sa.objects.len(), sb.objects.len());
        for (oa, ob) in sa.objects.iter().zip(&sb.objects) {
            assert_eq!(oa.attributes, ob.attributes);
            assert_eq!(oa.position, ob.position);
        }
    }

    #[test]
    fn fixed_size_config_yields_exact_object_count() {
        let lex = default_lexicon();
        let mut gen = GenerationConfig::default();
        gen.min_objects = 3;
        gen.max_objects = 3;
        for i in 0..20 {
            let mut rng = seeding::stream(&[1, TAG_SCENE, i]);
            let scene = generate_scene(&lex, &gen, &mut rng, i).unwrap();
            assert_eq!(scene.objects.len(), 3);
        }
    }

    #[test]
    fn positions_respect_separation_and_bounds() {
        let lex = default_lexicon();
        let gen = GenerationConfig::default();
        for i in 0..50 {
            let mut rng = seeding::stream(&[3, TAG_SCENE, i]);
            let scene = generate_scene(&lex, &gen, &mut rng, i).unwrap();
            for o in &scene.objects {
                assert!(o.position.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            for a in 0..scene.objects.len() {
                for b in (a + 1)..scene.objects.len() {
                    let pa = scene.objects[a].position;
                    let pb = scene.objects[b].position;
                    let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                    assert!(d >= gen.min_separation);
                }
            }
        }
    }

    /// Attribute draws should be uniform per super concept. Checked against a
    /// binomial five-sigma band computed directly from the draw counts.
    #[test]
    fn attribute_frequencies_are_uniform_within_five_sigma() {
        let lex = default_lexicon();
        let gen = GenerationConfig::default();
        let mut totals = vec![0usize; lex.unary.concepts.len()];
        let mut objects = 0usize;
        for i in 0..10_000u64 {
            let mut rng = seeding::stream(&[11, TAG_SCENE, i]);
            let scene = generate_scene(&lex, &gen, &mut rng, i).unwrap();
            objects += scene.objects.len();
            for o in &scene.objects {
                for &c in &o.attributes {
                    totals[c] += 1;
                }
            }
        }
        for (ci, concept) in lex.unary.concepts.iter().enumerate() {
            let k = lex.unary.supers[concept.super_idx].concepts.len() as f64;
            let p = 1.0 / k;
            let mean = objects as f64 * p;
            let sigma = (objects as f64 * p * (1.0 - p)).sqrt();
            let observed = totals[ci] as f64;
            assert!(
                (observed - mean).abs() < 5.0 * sigma,
                "concept {} count {} outside 5 sigma of {}",
                concept.name,
                observed,
                mean
            );
        }
    }

    fn scene_with_positions(lex: &Lexicon, positions: &[[f64; 2]]) -> Scene {
        let attrs: Vec<usize> = lex.unary.supers.iter().map(|s| s.concepts[0]).collect();
        Scene {
            id: 0,
            objects: positions
                .iter()
                .map(|&position| ObjectInstance {
                    attributes: attrs.clone(),
                    position,
                })
                .collect(),
        }
    }

    #[test]
    fn relations_follow_axis_order_and_band() {
        let lex = default_lexicon();
        let scene = scene_with_positions(&lex, &[[0.1, 0.5], [0.5, 0.51], [0.9, 0.1]]);
        let rels = ground_truth_relations(&scene, &lex, 0.02);
        let left = 0;
        let right = 1;
        let front = 2;
        let behind = 3;
        assert!(rels.holds(left, 0, 1));
        assert!(rels.holds(right, 1, 0));
        assert!(!rels.holds(right, 0, 1));
        assert!(rels.holds(left, 0, 2));
        assert!(rels.holds(right, 2, 1));
        // Objects 0 and 1 sit within the y band: front/behind is ambiguous.
        assert!(rels.ambiguous(front, 0, 1));
        assert!(rels.ambiguous(behind, 1, 0));
        assert!(rels.holds(front, 2, 0));
        assert!(rels.holds(behind, 0, 2));
        assert_eq!(rels.state(left, 1, 1), RelState::No);
    }

    /// Exhaustive duality check: for every non-ambiguous ordered pair exactly
    /// one concept of each exclusive pair holds, and holds(first, i, j) is
    /// holds(second, j, i).
    #[test]
    fn relation_duality_holds_on_random_scenes() {
        let lex = default_lexicon();
        let gen = GenerationConfig::default();
        for i in 0..40u64 {
            let mut rng = seeding::stream(&[13, TAG_SCENE, i]);
            let scene = generate_scene(&lex, &gen, &mut rng, i).unwrap();
            let rels = ground_truth_relations(&scene, &lex, gen.ambiguity_epsilon);
            let n = scene.objects.len();
            for sup in &lex.binary.supers {
                let (a, b) = (sup.concepts[0], sup.concepts[1]);
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let amb = rels.ambiguous(a, i, j);
                        assert_eq!(amb, rels.ambiguous(b, i, j));
                        if !amb {
                            assert_ne!(rels.holds(a, i, j), rels.holds(b, i, j));
                        }
                        assert_eq!(rels.holds(a, i, j), rels.holds(b, j, i));
                    }
                }
            }
        }
    }

    #[test]
    fn fully_relevant_mentions_name_only_present_colors() {
        let lex = default_lexicon();
        let mut gen = GenerationConfig::default();
        gen.relevance_bias = 1.0;
        gen.unary_mentions = 40;
        let red = match lex.lookup("red") {
            Some((Arity::Unary, w)) => lex.unary_concept_of_word(w),
            _ => panic!("red missing"),
        };
        let color_super = lex.unary.concepts[red].super_idx;
        let mut scene = scene_with_positions(&lex, &[[0.1, 0.2], [0.5, 0.6], [0.9, 0.3]]);
        for o in &mut scene.objects {
            o.attributes[color_super] = red;
        }
        let rels = ground_truth_relations(&scene, &lex, gen.ambiguity_epsilon);
        let mut rng = seeding::stream(&[17, TAG_MENTIONS, 0]);
        let bag = generate_mentions(&scene, &rels, &lex, &gen, &mut rng);
        for &w in &bag.unary {
            let concept = lex.unary_concept_of_word(w);
            if lex.unary.concepts[concept].super_idx == color_super {
                assert_eq!(concept, red, "mentioned color {w} is not red");
            }
        }
    }

    #[test]
    fn corpus_clears_mention_floor_via_topup() {
        let lex = default_lexicon();
        let mut cfg = RunConfig::builtin_default();
        cfg.scenes = 20;
        cfg.seed = 5;
        let corpus = generate_corpus(&lex, &cfg).unwrap();
        assert!(corpus.records.len() > 20, "top-up scenes expected");
        let (unary, binary) = mention_counts(&corpus, &lex);
        for (w, &c) in unary.iter().enumerate() {
            assert!(
                c >= cfg.generation.min_mentions,
                "unary word {} mentioned {} times",
                lex.unary.words[w].text,
                c
            );
        }
        for (w, &c) in binary.iter().enumerate() {
            assert!(
                c >= cfg.generation.min_mentions,
                "binary word {} mentioned {} times",
                lex.binary.words[w].text,
                c
            );
        }
    }

    #[test]
    fn default_corpus_clears_mention_floor_directly() {
        let lex = default_lexicon();
        let cfg = RunConfig::builtin_default();
        let corpus = generate_corpus(&lex, &cfg).unwrap();
        let (unary, binary) = mention_counts(&corpus, &lex);
        assert!(unary.iter().all(|&c| c >= cfg.generation.min_mentions));
        assert!(binary.iter().all(|&c| c >= cfg.generation.min_mentions));
    }

    #[test]
    fn corpus_roundtrips_byte_identically() {
        let lex = default_lexicon();
        let mut cfg = RunConfig::builtin_default();
        cfg.scenes = 12;
        let corpus = generate_corpus(&lex, &cfg).unwrap();
        let text = corpus.to_jsonl(&lex);
        let reloaded = Corpus::from_jsonl(&text, &lex).unwrap();
        assert_eq!(text, reloaded.to_jsonl(&lex));
        assert_eq!(corpus.records.len(), reloaded.records.len());
    }

    #[test]
    fn corpus_generation_is_deterministic() {
        let lex = default_lexicon();
        let mut cfg = RunConfig::builtin_default();
        cfg.scenes = 30;
        let a = generate_corpus(&lex, &cfg).unwrap().to_jsonl(&lex);
        let b = generate_corpus(&lex, &cfg).unwrap().to_jsonl(&lex);
        assert_eq!(a, b);
    }

    #[test]
    fn corpus_parse_rejects_unknown_words() {
        let lex = default_lexicon();
        let line = r#"{"id":0,"objects":[{"attrs":["red","cube","large","metal"],"pos":[0.5,0.5]}],"unary_mentions":["crimson"],"binary_mentions":[]}"#;
        assert!(matches!(
            Corpus::from_jsonl(line, &lex),
            Err(OntologyError::CorpusFormat { .. })
        ));
    }

    #[test]
    fn attribute_tuple_enumeration_is_exhaustive() {
        let lex = default_lexicon();
        let tuples = enumerate_attribute_tuples(&lex);
        assert_eq!(tuples.len(), 8 * 3 * 2 * 2);
        let unique: std::collections::HashSet<_> = tuples.iter().collect();
        assert_eq!(unique.len(), tuples.len());
        for t in &tuples {
            assert_eq!(t.len(), lex.unary.supers.len());
        }
    }

    #[test]
    fn ground_truth_hierarchy_rendering_is_canonical() {
        let lex = default_lexicon();
        let text = render_ground_truth_hierarchy(&lex);
        assert!(text.starts_with("[unary]\n"));
        assert!(text.contains("super: (ball sphere) (block cube) (cylinder)"));
        assert!(text.contains("super: (big large) (small tiny)"));
        assert!(text.contains("super: (metal) (rubber)"));
        assert!(text.contains("[binary]\nsuper: (behind) (front)\nsuper: (left) (right)"));
    }
}
