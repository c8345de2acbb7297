//! Simulated attention logits over scene objects, plus object feature vectors.
//!
//! Logits follow a two-peak noise model: words that apply to an object (or
//! ordered pair) draw from the positive peak, words that do not from the
//! negative peak, and relation words on pairs inside the ambiguity band from
//! a middle peak. Every draw is a pure function of (seed, scene id, word,
//! object ids), so any single logit can be recomputed in isolation and whole
//! scenes can be processed in parallel without changing a single value.
//!
//! Logits read only ground truth. Nothing downstream of induction ever feeds
//! back into them.

use crate::config::NoiseConfig;
use crate::ontology::{Arity, Lexicon, RelState, RelationTable, Scene};
use crate::seeding::{self, TAG_BINARY_LOGIT, TAG_FEATURES, TAG_UNARY_LOGIT};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("word {word:?} is {actual:?}, expected {expected:?}")]
    ArityMismatch {
        word: String,
        actual: Arity,
        expected: Arity,
    },
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error("object {object} not in scene {scene} ({len} objects)")]
    UnknownObject { scene: u64, object: usize, len: usize },
}

/// Deterministic logit and feature source for one (lexicon, noise, seed) triple.
pub struct AttentionSim<'a> {
    lexicon: &'a Lexicon,
    noise: NoiseConfig,
    seed: u64,
}

impl<'a> AttentionSim<'a> {
    pub fn new(lexicon: &'a Lexicon, noise: NoiseConfig, seed: u64) -> Self {
        AttentionSim {
            lexicon,
            noise,
            seed,
        }
    }

    pub fn lexicon(&self) -> &Lexicon {
        self.lexicon
    }

    fn peak_plus_noise(&self, mu: f64, key: &[u64]) -> f64 {
        let mut rng = seeding::stream(key);
        let z: f64 = rng.sample(StandardNormal);
        mu + self.noise.sigma * z
    }

    /// Logit of one unary word on one object.
    pub fn unary_logit(&self, scene: &Scene, word: usize, object: usize) -> f64 {
        let concept = self.lexicon.unary_concept_of_word(word);
        let super_idx = self.lexicon.unary.concepts[concept].super_idx;
        let possesses = scene.objects[object].attributes[super_idx] == concept;
        let mu = if possesses {
            self.noise.mu_positive
        } else {
            self.noise.mu_negative
        };
        self.peak_plus_noise(
            mu,
            &[
                self.seed,
                TAG_UNARY_LOGIT,
                scene.id,
                word as u64,
                object as u64,
            ],
        )
    }

    /// Logits of one unary word over all objects of a scene.
    pub fn unary_logits(&self, scene: &Scene, word: usize) -> Vec<f64> {
        (0..scene.objects.len())
            .map(|o| self.unary_logit(scene, word, o))
            .collect()
    }

    /// Logit of one binary word for (subject, anchor). Self-pairs draw from
    /// the negative peak; pairs in the ambiguity band from the middle peak.
    pub fn binary_logit(
        &self,
        scene: &Scene,
        relations: &RelationTable,
        word: usize,
        subject: usize,
        anchor: usize,
    ) -> f64 {
        let concept = self.lexicon.binary_concept_of_word(word);
        let mu = if subject == anchor {
            self.noise.mu_negative
        } else {
            match relations.state(concept, subject, anchor) {
                RelState::Holds => self.noise.mu_positive,
                RelState::Ambiguous => self.noise.mu_ambiguous,
                RelState::No => self.noise.mu_negative,
            }
        };
        self.peak_plus_noise(
            mu,
            &[
                self.seed,
                TAG_BINARY_LOGIT,
                scene.id,
                word as u64,
                subject as u64,
                anchor as u64,
            ],
        )
    }

    /// Logits of one binary word over all subjects for a fixed anchor.
    pub fn binary_logits(
        &self,
        scene: &Scene,
        relations: &RelationTable,
        word: usize,
        anchor: usize,
    ) -> Result<Vec<f64>, AttentionError> {
        if anchor >= scene.objects.len() {
            return Err(AttentionError::UnknownObject {
                scene: scene.id,
                object: anchor,
                len: scene.objects.len(),
            });
        }
        Ok((0..scene.objects.len())
            .map(|s| self.binary_logit(scene, relations, word, s, anchor))
            .collect())
    }

    /// Name-keyed unary logits, with arity checking for callers holding text.
    pub fn named_unary_logits(
        &self,
        scene: &Scene,
        word: &str,
    ) -> Result<Vec<f64>, AttentionError> {
        match self.lexicon.lookup(word) {
            Some((Arity::Unary, w)) => Ok(self.unary_logits(scene, w)),
            Some((actual, _)) => Err(AttentionError::ArityMismatch {
                word: word.to_string(),
                actual,
                expected: Arity::Unary,
            }),
            None => Err(AttentionError::UnknownWord(word.to_string())),
        }
    }

    pub fn named_binary_logits(
        &self,
        scene: &Scene,
        relations: &RelationTable,
        word: &str,
        anchor: usize,
    ) -> Result<Vec<f64>, AttentionError> {
        match self.lexicon.lookup(word) {
            Some((Arity::Binary, w)) => self.binary_logits(scene, relations, w, anchor),
            Some((actual, _)) => Err(AttentionError::ArityMismatch {
                word: word.to_string(),
                actual,
                expected: Arity::Binary,
            }),
            None => Err(AttentionError::UnknownWord(word.to_string())),
        }
    }

    /// Feature vector of one object: a template fixed by its attribute tuple
    /// plus per-object jitter of scale `feature_sigma`.
    pub fn features(&self, scene: &Scene, object: usize) -> Vec<f64> {
        let attrs = &scene.objects[object].attributes;
        let mut tuple_key = vec![self.lexicon.fingerprint(), TAG_FEATURES];
        tuple_key.extend(attrs.iter().map(|&c| c as u64));
        let mut template_rng = seeding::stream(&tuple_key);
        let mut jitter_rng = seeding::stream(&[
            self.seed,
            TAG_FEATURES,
            scene.id,
            object as u64,
        ]);
        (0..self.noise.feature_dim)
            .map(|_| {
                let base: f64 = template_rng.sample(StandardNormal);
                let jitter: f64 = jitter_rng.sample(StandardNormal);
                base + self.noise.feature_sigma * jitter
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{GenerationConfig, RunConfig};
    use crate::ontology::{
        self, enumerate_attribute_tuples, generate_scene, ground_truth_relations, ObjectInstance,
    };
    use crate::seeding::TAG_SCENE;

    fn lexicon() -> Lexicon {
        Lexicon::from_config(&RunConfig::builtin_default()).unwrap()
    }

    fn noiseless() -> NoiseConfig {
        NoiseConfig {
            sigma: 0.0,
            ..NoiseConfig::default()
        }
    }

    fn scene_of(lex: &Lexicon, specs: &[(&[&str], [f64; 2])]) -> Scene {
        let objects = specs
            .iter()
            .map(|(words, position)| {
                let mut attributes: Vec<usize> =
                    lex.unary.supers.iter().map(|s| s.concepts[0]).collect();
                for word in *words {
                    let (arity, w) = lex.lookup(word).unwrap();
                    assert_eq!(arity, Arity::Unary);
                    let concept = lex.unary_concept_of_word(w);
                    attributes[lex.unary.concepts[concept].super_idx] = concept;
                }
                ObjectInstance {
                    attributes,
                    position: *position,
                }
            })
            .collect();
        Scene { id: 0, objects }
    }

    #[test]
    fn noiseless_unary_logits_sit_on_the_peaks() {
        let lex = lexicon();
        let sim = AttentionSim::new(&lex, noiseless(), 0);
        let scene = scene_of(
            &lex,
            &[(&["red", "cube"], [0.2, 0.2]), (&["red", "sphere"], [0.8, 0.8])],
        );
        let red = sim.named_unary_logits(&scene, "red").unwrap();
        assert_eq!(red, vec![3.0, 3.0]);
        let cube = sim.named_unary_logits(&scene, "cube").unwrap();
        assert_eq!(cube, vec![3.0, -3.0]);
        let blue = sim.named_unary_logits(&scene, "blue").unwrap();
        assert_eq!(blue, vec![-3.0, -3.0]);
    }

    #[test]
    fn arity_and_object_errors_are_reported() {
        let lex = lexicon();
        let sim = AttentionSim::new(&lex, noiseless(), 0);
        let scene = scene_of(&lex, &[(&["red"], [0.5, 0.5])]);
        let rels = ground_truth_relations(&scene, &lex, 0.02);
        assert!(matches!(
            sim.named_unary_logits(&scene, "left"),
            Err(AttentionError::ArityMismatch { .. })
        ));
        assert!(matches!(
            sim.named_binary_logits(&scene, &rels, "red", 0),
            Err(AttentionError::ArityMismatch { .. })
        ));
        assert!(matches!(
            sim.named_binary_logits(&scene, &rels, "left", 7),
            Err(AttentionError::UnknownObject { object: 7, .. })
        ));
        assert!(matches!(
            sim.named_unary_logits(&scene, "crimson"),
            Err(AttentionError::UnknownWord(_))
        ));
    }

    /// Sample means over 10 000 draws per class land within 0.05 of the peaks.
    #[test]
    fn unary_logit_sample_means_recover_the_peaks() {
        let lex = lexicon();
        let noise = NoiseConfig::default();
        let sim = AttentionSim::new(&lex, noise, 21);
        let (_, red_word) = lex.lookup("red").unwrap();
        let (_, blue_word) = lex.lookup("blue").unwrap();
        let template = scene_of(&lex, &[(&["red"], [0.5, 0.5])]);
        let mut pos_sum = 0.0;
        let mut neg_sum = 0.0;
        let n = 10_000;
        for id in 0..n {
            let scene = Scene {
                id,
                objects: template.objects.clone(),
            };
            pos_sum += sim.unary_logit(&scene, red_word, 0);
            neg_sum += sim.unary_logit(&scene, blue_word, 0);
        }
        let pos_mean = pos_sum / n as f64;
        let neg_mean = neg_sum / n as f64;
        assert!((pos_mean - 3.0).abs() < 0.05, "positive mean {pos_mean}");
        assert!((neg_mean + 3.0).abs() < 0.05, "negative mean {neg_mean}");
    }

    #[test]
    fn noiseless_binary_logits_cover_all_three_peaks() {
        let lex = lexicon();
        let sim = AttentionSim::new(&lex, noiseless(), 0);
        // Object 0 strictly left of 1; 0 and 1 inside the y ambiguity band.
        let scene = scene_of(
            &lex,
            &[(&[], [0.1, 0.50]), (&[], [0.6, 0.51]), (&[], [0.9, 0.9])],
        );
        let rels = ground_truth_relations(&scene, &lex, 0.02);
        let left = sim.named_binary_logits(&scene, &rels, "left", 1).unwrap();
        assert_eq!(left[0], 3.0);
        assert_eq!(left[1], -3.0, "self-pair draws from the negative peak");
        let front = sim.named_binary_logits(&scene, &rels, "front", 1).unwrap();
        assert_eq!(front[0], 0.0, "ambiguity band draws from the middle peak");
        assert_eq!(front[2], -3.0);
        let behind = sim.named_binary_logits(&scene, &rels, "behind", 1).unwrap();
        assert_eq!(behind[2], 3.0);
    }

    /// Any threshold strictly between the peaks recovers ground-truth
    /// possession exactly when sigma = 0.
    #[test]
    fn noiseless_thresholding_recovers_possession() {
        let lex = lexicon();
        let sim = AttentionSim::new(&lex, noiseless(), 9);
        let gen = GenerationConfig::default();
        for i in 0..10u64 {
            let mut rng = seeding::stream(&[9, TAG_SCENE, i]);
            let scene = generate_scene(&lex, &gen, &mut rng, i).unwrap();
            for threshold in [-2.9, 0.0, 2.9] {
                for word in 0..lex.unary.words.len() {
                    let logits = sim.unary_logits(&scene, word);
                    let concept = lex.unary_concept_of_word(word);
                    for (o, object) in scene.objects.iter().enumerate() {
                        let expected = object.possesses(&lex, concept);
                        assert_eq!(logits[o] > threshold, expected);
                    }
                }
            }
        }
    }

    /// Histogram of "front" logits over a 500-scene corpus has exactly three
    /// well-separated modes near -3, 0, +3. The ambiguity band is widened so
    /// the middle peak carries enough mass to stand above the outer peaks'
    /// tails in a plain histogram.
    #[test]
    fn binary_logit_histogram_is_trimodal() {
        let lex = lexicon();
        let mut cfg = RunConfig::builtin_default();
        cfg.generation.ambiguity_epsilon = 0.2;
        let sim = AttentionSim::new(&lex, cfg.noise.clone(), cfg.seed);
        let (_, front) = lex.lookup("front").unwrap();
        let mut values = Vec::new();
        for i in 0..500u64 {
            let mut rng = seeding::stream(&[cfg.seed, TAG_SCENE, i]);
            let scene = generate_scene(&lex, &cfg.generation, &mut rng, i).unwrap();
            let rels = ground_truth_relations(&scene, &lex, cfg.generation.ambiguity_epsilon);
            for anchor in 0..scene.objects.len() {
                values.extend(sim.binary_logits(&scene, &rels, front, anchor).unwrap());
            }
        }
        let width = 0.5;
        let lo = -7.0;
        let bins = 28;
        let mut counts = vec![0usize; bins];
        for v in &values {
            let b = ((v - lo) / width).floor() as isize;
            if (0..bins as isize).contains(&b) {
                counts[b as usize] += 1;
            }
        }
        let floor = values.len() / 200;
        let mut modes = Vec::new();
        for b in 1..bins - 1 {
            if counts[b] > counts[b - 1] && counts[b] >= counts[b + 1] && counts[b] > floor {
                modes.push(lo + (b as f64 + 0.5) * width);
            }
        }
        assert_eq!(modes.len(), 3, "modes at {modes:?}");
        for (mode, peak) in modes.iter().zip([-3.0, 0.0, 3.0]) {
            assert!((mode - peak).abs() <= 0.5, "mode {mode} vs peak {peak}");
        }
    }

    #[test]
    fn features_are_templates_plus_jitter() {
        let lex = lexicon();
        let mut noise = noiseless();
        noise.feature_sigma = 0.0;
        let sim = AttentionSim::new(&lex, noise, 4);
        let scene = scene_of(&lex, &[(&["red", "cube"], [0.2, 0.2]), (&["red", "cube"], [0.7, 0.7])]);
        let a = sim.features(&scene, 0);
        let b = sim.features(&scene, 1);
        assert_eq!(a.len(), 32);
        assert_eq!(a, b, "identical attributes share the template at zero jitter");

        let noisy = AttentionSim::new(&lex, NoiseConfig::default(), 4);
        let c = noisy.features(&scene, 0);
        let d = noisy.features(&scene, 0);
        assert_eq!(c, d, "feature draws are reproducible");
        assert_ne!(c, noisy.features(&scene, 1));
    }

    /// Every distinct attribute tuple gets a distinct template.
    #[test]
    fn feature_templates_separate_all_attribute_tuples() {
        let lex = lexicon();
        let mut noise = NoiseConfig::default();
        noise.feature_sigma = 0.0;
        let sim = AttentionSim::new(&lex, noise, 0);
        let tuples = enumerate_attribute_tuples(&lex);
        let scene = Scene {
            id: 0,
            objects: tuples
                .iter()
                .map(|attributes| ObjectInstance {
                    attributes: attributes.clone(),
                    position: [0.5, 0.5],
                })
                .collect(),
        };
        let templates: Vec<Vec<f64>> = (0..tuples.len()).map(|o| sim.features(&scene, o)).collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..templates.len() {
            for j in (i + 1)..templates.len() {
                let d: f64 = templates[i]
                    .iter()
                    .zip(&templates[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(d);
            }
        }
        assert!(min_dist > 0.0, "min pairwise template distance {min_dist}");
    }

    #[test]
    fn mention_only_scenes_do_not_shift_logits() {
        // Logits depend on (seed, scene id, word, object), not on mention bags
        // or any induced state: recompute a single logit in isolation.
        let lex = lexicon();
        let cfg = RunConfig::builtin_default();
        let sim = AttentionSim::new(&lex, cfg.noise.clone(), cfg.seed);
        let corpus = ontology::generate_corpus(
            &lex,
            &RunConfig {
                scenes: 3,
                ..cfg.clone()
            },
        )
        .unwrap();
        let scene = &corpus.records[1].scene;
        let full = sim.unary_logits(scene, 5);
        let lone = sim.unary_logit(scene, 5, 2.min(scene.objects.len() - 1));
        assert_eq!(full[2.min(scene.objects.len() - 1)], lone);
    }
}
