//! Logit harvesting, per-word decision boundaries, corpus labeling, and the
//! corpus-wide binary codes (Γ matrices).
//!
//! The flow: every mentioned word accumulates raw logit samples over the
//! scenes that mention it; a two-component mixture per word yields a decision
//! boundary; a calibrated sigmoid over (logit - boundary) acts as the concept
//! classifier; thresholding classifier probabilities at 0.5 over every object
//! (and every ordered co-scene pair) produces the Γ bit matrices that the
//! hierarchy stage consumes.
//!
//! Words whose logit samples cannot support a boundary (never mentioned, too
//! few samples, one-class, or inseparable classes) are excluded and reported;
//! their Γ rows stay all-zero and downstream stages skip them.

use crate::attention::AttentionSim;
use crate::bits::BitMatrix;
use crate::config::InductionConfig;
use crate::gmm::{self, EmOptions, GmmError, GmmModel, Init};
use crate::ontology::{Arity, Corpus, RelationTable, ground_truth_relations};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InductionError {
    #[error("corpus has no scenes")]
    EmptyCorpus,
    #[error("{arity:?} word {word:?} has no classifier (excluded: {reason})")]
    WordExcluded {
        arity: Arity,
        word: String,
        reason: String,
    },
}

/// Raw logit samples per word, in mention order.
#[derive(Debug, Clone, Default)]
pub struct LogitSampleStore {
    pub unary: Vec<Vec<f64>>,
    pub binary: Vec<Vec<f64>>,
}

/// Harvests logit samples for every mentioned word (Algorithm 1, pass 1).
/// A unary mention contributes one sample per scene object; a binary mention
/// contributes one sample per ordered object pair including self-pairs.
/// Duplicate mentions re-append the same deterministic values.
pub fn collect_logits(
    corpus: &Corpus,
    sim: &AttentionSim,
    ambiguity_epsilon: f64,
) -> Result<LogitSampleStore, InductionError> {
    if corpus.records.is_empty() {
        return Err(InductionError::EmptyCorpus);
    }
    let lex = sim.lexicon();
    let mut store = LogitSampleStore {
        unary: vec![Vec::new(); lex.unary.words.len()],
        binary: vec![Vec::new(); lex.binary.words.len()],
    };
    for record in &corpus.records {
        let scene = &record.scene;
        for &word in &record.mentions.unary {
            store.unary[word].extend(sim.unary_logits(scene, word));
        }
        if record.mentions.binary.is_empty() {
            continue;
        }
        let rels = ground_truth_relations(scene, lex, ambiguity_epsilon);
        for &word in &record.mentions.binary {
            for anchor in 0..scene.objects.len() {
                store.binary[word].extend(
                    sim.binary_logits(scene, &rels, word, anchor)
                        .expect("anchor is in range"),
                );
            }
        }
    }
    Ok(store)
}

#[derive(Debug, Clone)]
pub struct BoundaryFit {
    pub boundary: f64,
    pub model: GmmModel,
}

#[derive(Debug, Clone)]
pub struct ExcludedWord {
    pub arity: Arity,
    pub word: usize,
    pub reason: String,
}

/// Per-word decision boundaries plus the words that could not get one.
#[derive(Debug, Clone, Default)]
pub struct BoundaryMap {
    pub unary: Vec<Option<BoundaryFit>>,
    pub binary: Vec<Option<BoundaryFit>>,
    pub excluded: Vec<ExcludedWord>,
}

impl BoundaryMap {
    pub fn boundary(&self, arity: Arity, word: usize) -> Option<f64> {
        let fits = match arity {
            Arity::Unary => &self.unary,
            Arity::Binary => &self.binary,
        };
        fits[word].as_ref().map(|f| f.boundary)
    }
}

fn fit_word_boundary(
    samples: &[f64],
    cfg: &InductionConfig,
) -> Result<BoundaryFit, String> {
    if samples.is_empty() {
        return Err("never mentioned".into());
    }
    if samples.len() < cfg.min_fit_samples {
        return Err(format!(
            "only {} samples (need {})",
            samples.len(),
            cfg.min_fit_samples
        ));
    }
    let opts = EmOptions {
        tolerance: cfg.em_tolerance,
        max_iterations: cfg.em_max_iterations,
        variance_floor: cfg.variance_floor,
    };
    let model = match gmm::fit_em(samples, 2, Init::Auto, &opts) {
        Ok(model) => model,
        Err(GmmError::DegenerateInput(_)) => return Err("one-class logits".into()),
        Err(e) => return Err(e.to_string()),
    };
    let (c1, c2) = (&model.components[0], &model.components[1]);
    if c2.mean - c1.mean <= c1.variance.sqrt() + c2.variance.sqrt() {
        return Err(format!(
            "no class separation (means {:.3}/{:.3})",
            c1.mean, c2.mean
        ));
    }
    let boundary = gmm::decision_boundary(&model).map_err(|e| e.to_string())?;
    Ok(BoundaryFit { boundary, model })
}

/// Fits a decision boundary per word (Algorithm 1, FB over a 2-component
/// mixture). Failures become exclusions, not hard errors.
pub fn fit_boundaries(store: &LogitSampleStore, cfg: &InductionConfig) -> BoundaryMap {
    let fit_all = |samples: &[Vec<f64>]| -> Vec<Result<BoundaryFit, String>> {
        samples
            .par_iter()
            .map(|s| fit_word_boundary(s, cfg))
            .collect()
    };
    let mut map = BoundaryMap::default();
    for (arity, fits) in [
        (Arity::Unary, fit_all(&store.unary)),
        (Arity::Binary, fit_all(&store.binary)),
    ] {
        for (word, fit) in fits.into_iter().enumerate() {
            let slot = match fit {
                Ok(f) => Some(f),
                Err(reason) => {
                    map.excluded.push(ExcludedWord { arity, word, reason });
                    None
                }
            };
            match arity {
                Arity::Unary => map.unary.push(slot),
                Arity::Binary => map.binary.push(slot),
            }
        }
    }
    map
}

/// One labeled training record (Algorithm 1, pass 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledSample {
    pub record: usize,
    pub word: usize,
    pub object: usize,
    /// Anchor object for binary records.
    pub anchor: Option<usize>,
    pub label: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LabeledSets {
    pub unary: Vec<LabeledSample>,
    pub binary: Vec<LabeledSample>,
    /// Label records not emitted because the mentioned word had no boundary.
    pub skipped_unary: usize,
    pub skipped_binary: usize,
}

/// Labels the corpus: one record per (mention, object) for unary words and
/// per (mention, ordered pair with distinct members) for binary words.
pub fn label_corpus(
    corpus: &Corpus,
    boundaries: &BoundaryMap,
    sim: &AttentionSim,
    ambiguity_epsilon: f64,
) -> LabeledSets {
    let lex = sim.lexicon();
    let mut sets = LabeledSets::default();
    for (ri, record) in corpus.records.iter().enumerate() {
        let scene = &record.scene;
        let n = scene.objects.len();
        for &word in &record.mentions.unary {
            match boundaries.boundary(Arity::Unary, word) {
                Some(bd) => {
                    for object in 0..n {
                        sets.unary.push(LabeledSample {
                            record: ri,
                            word,
                            object,
                            anchor: None,
                            label: sim.unary_logit(scene, word, object) > bd,
                        });
                    }
                }
                None => sets.skipped_unary += n,
            }
        }
        if record.mentions.binary.is_empty() {
            continue;
        }
        let rels = ground_truth_relations(scene, lex, ambiguity_epsilon);
        for &word in &record.mentions.binary {
            match boundaries.boundary(Arity::Binary, word) {
                Some(bd) => {
                    for object in 0..n {
                        for anchor in 0..n {
                            if object == anchor {
                                continue;
                            }
                            let logit = sim.binary_logit(scene, &rels, word, object, anchor);
                            sets.binary.push(LabeledSample {
                                record: ri,
                                word,
                                object,
                                anchor: Some(anchor),
                                label: logit > bd,
                            });
                        }
                    }
                }
                None => sets.skipped_binary += n * (n - 1),
            }
        }
    }
    sets
}

/// Calibrated sigmoid classifier over (logit - boundary) / tau.
pub struct Classifiers<'a> {
    sim: &'a AttentionSim<'a>,
    boundaries: &'a BoundaryMap,
    tau: f64,
}

impl<'a> Classifiers<'a> {
    pub fn new(sim: &'a AttentionSim<'a>, boundaries: &'a BoundaryMap, tau: f64) -> Self {
        Classifiers {
            sim,
            boundaries,
            tau,
        }
    }

    pub fn sim(&self) -> &AttentionSim<'a> {
        self.sim
    }

    pub fn boundaries(&self) -> &BoundaryMap {
        self.boundaries
    }

    pub fn is_available(&self, arity: Arity, word: usize) -> bool {
        self.boundaries.boundary(arity, word).is_some()
    }

    fn excluded_error(&self, arity: Arity, word: usize) -> InductionError {
        let lex = self.sim.lexicon();
        let text = lex.arity(arity).words[word].text.clone();
        let reason = self
            .boundaries
            .excluded
            .iter()
            .find(|e| e.arity == arity && e.word == word)
            .map(|e| e.reason.clone())
            .unwrap_or_else(|| "no boundary".into());
        InductionError::WordExcluded {
            arity,
            word: text,
            reason,
        }
    }

    fn squash(&self, logit: f64, boundary: f64) -> f64 {
        1.0 / (1.0 + (-(logit - boundary) / self.tau).exp())
    }

    /// P(word applies to object), in (0, 1).
    pub fn classify_unary(
        &self,
        scene: &crate::ontology::Scene,
        word: usize,
        object: usize,
    ) -> Result<f64, InductionError> {
        let bd = self
            .boundaries
            .boundary(Arity::Unary, word)
            .ok_or_else(|| self.excluded_error(Arity::Unary, word))?;
        Ok(self.squash(self.sim.unary_logit(scene, word, object), bd))
    }

    /// P(word describes subject's relation to anchor), in (0, 1).
    pub fn classify_binary(
        &self,
        scene: &crate::ontology::Scene,
        relations: &RelationTable,
        word: usize,
        subject: usize,
        anchor: usize,
    ) -> Result<f64, InductionError> {
        let bd = self
            .boundaries
            .boundary(Arity::Binary, word)
            .ok_or_else(|| self.excluded_error(Arity::Binary, word))?;
        Ok(self.squash(
            self.sim.binary_logit(scene, relations, word, subject, anchor),
            bd,
        ))
    }
}

/// Corpus-wide binary codes. Row order matches lexicon word order; excluded
/// words keep all-zero rows. Unary columns are scene-major then object-minor;
/// binary columns are scene-major, subject-major, anchor-minor with self
/// pairs excluded — the bit answers "does this word describe the subject's
/// relation to the anchor".
#[derive(Debug, Clone)]
pub struct GammaMatrix {
    pub unary: BitMatrix,
    pub binary: BitMatrix,
    /// Column -> (record index, object).
    pub unary_columns: Vec<(u32, u32)>,
    /// Column -> (record index, subject, anchor).
    pub binary_columns: Vec<(u32, u32, u32)>,
}

impl GammaMatrix {
    /// Column index of (record, object) in Γ^u; columns are contiguous per
    /// record, so a linear scan per record start suffices for tests, but the
    /// offset table makes it O(1).
    pub fn unary_column(&self, offsets: &ColumnOffsets, record: usize, object: usize) -> usize {
        offsets.unary[record] + object
    }

    pub fn binary_column(
        &self,
        offsets: &ColumnOffsets,
        record: usize,
        subject: usize,
        anchor: usize,
        objects: usize,
    ) -> usize {
        assert_ne!(subject, anchor);
        let within = subject * (objects - 1) + if anchor < subject { anchor } else { anchor - 1 };
        offsets.binary[record] + within
    }
}

/// Per-record starting column of each Γ matrix.
#[derive(Debug, Clone)]
pub struct ColumnOffsets {
    pub unary: Vec<usize>,
    pub binary: Vec<usize>,
}

pub fn column_offsets(corpus: &Corpus) -> ColumnOffsets {
    let mut unary = Vec::with_capacity(corpus.records.len());
    let mut binary = Vec::with_capacity(corpus.records.len());
    let (mut u, mut b) = (0usize, 0usize);
    for record in &corpus.records {
        unary.push(u);
        binary.push(b);
        let n = record.scene.objects.len();
        u += n;
        b += n * (n - 1);
    }
    ColumnOffsets { unary, binary }
}

/// Applies the classifiers to every object and every ordered co-scene pair,
/// thresholding probabilities at 0.5, and assembles the Γ matrices.
pub fn binary_code(
    corpus: &Corpus,
    classifiers: &Classifiers,
    ambiguity_epsilon: f64,
) -> GammaMatrix {
    let lex = classifiers.sim.lexicon();
    let n_unary = lex.unary.words.len();
    let n_binary = lex.binary.words.len();

    struct RecordBits {
        unary_cols: Vec<(u32, u32)>,
        binary_cols: Vec<(u32, u32, u32)>,
        unary: Vec<Vec<bool>>,
        binary: Vec<Vec<bool>>,
    }

    let per_record: Vec<RecordBits> = corpus
        .records
        .par_iter()
        .enumerate()
        .map(|(ri, record)| {
            let scene = &record.scene;
            let n = scene.objects.len();
            let rels = ground_truth_relations(scene, lex, ambiguity_epsilon);
            let mut bits = RecordBits {
                unary_cols: (0..n).map(|o| (ri as u32, o as u32)).collect(),
                binary_cols: Vec::with_capacity(n * (n - 1)),
                unary: vec![Vec::with_capacity(n); n_unary],
                binary: vec![Vec::with_capacity(n * (n - 1)); n_binary],
            };
            for word in 0..n_unary {
                if !classifiers.is_available(Arity::Unary, word) {
                    bits.unary[word].extend(std::iter::repeat(false).take(n));
                    continue;
                }
                for object in 0..n {
                    let p = classifiers.classify_unary(scene, word, object).unwrap();
                    bits.unary[word].push(p > 0.5);
                }
            }
            for subject in 0..n {
                for anchor in 0..n {
                    if subject != anchor {
                        bits.binary_cols
                            .push((ri as u32, subject as u32, anchor as u32));
                    }
                }
            }
            for word in 0..n_binary {
                if !classifiers.is_available(Arity::Binary, word) {
                    bits.binary[word]
                        .extend(std::iter::repeat(false).take(n * (n - 1)));
                    continue;
                }
                for subject in 0..n {
                    for anchor in 0..n {
                        if subject == anchor {
                            continue;
                        }
                        let p = classifiers
                            .classify_binary(scene, &rels, word, subject, anchor)
                            .unwrap();
                        bits.binary[word].push(p > 0.5);
                    }
                }
            }
            bits
        })
        .collect();

    let unary_cols: Vec<(u32, u32)> = per_record
        .iter()
        .flat_map(|r| r.unary_cols.iter().copied())
        .collect();
    let binary_cols: Vec<(u32, u32, u32)> = per_record
        .iter()
        .flat_map(|r| r.binary_cols.iter().copied())
        .collect();

    let mut unary = BitMatrix::zero(n_unary, unary_cols.len());
    let mut binary = BitMatrix::zero(n_binary, binary_cols.len());
    let (mut u_off, mut b_off) = (0usize, 0usize);
    for record in &per_record {
        for (word, row) in record.unary.iter().enumerate() {
            for (i, &bit) in row.iter().enumerate() {
                if bit {
                    unary.set(word, u_off + i, true);
                }
            }
        }
        for (word, row) in record.binary.iter().enumerate() {
            for (i, &bit) in row.iter().enumerate() {
                if bit {
                    binary.set(word, b_off + i, true);
                }
            }
        }
        u_off += record.unary_cols.len();
        b_off += record.binary_cols.len();
    }

    GammaMatrix {
        unary,
        binary,
        unary_columns: unary_cols,
        binary_columns: binary_cols,
    }
}
