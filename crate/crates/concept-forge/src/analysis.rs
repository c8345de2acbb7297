//! Concept-space geometry and word-proximity study metrics.
//!
//! An object's induced encoding is a one-hot-per-block bit vector, so the
//! semantic distance between two objects is half the XOR popcount: exactly
//! the number of super-concept blocks on which they disagree. Blanking the
//! agreeing blocks ("minus") and refilling blanks from another vector
//! ("plus") give an edit algebra over encodings, and analogy retrieval
//! returns the pool element nearest to the edited vector.
//!
//! The study metrics score a word-proximity matrix against annotation
//! records (a word, chosen synonyms, chosen uncorrelated words, and a human
//! similarity ranking): threshold classification accuracy over the chosen
//! candidates, and the mean normalized Kendall tau distance between the
//! score-induced ranking and the human one.

use crate::bits::BitMatrix;
use crate::hierarchy::{self, ArityHierarchy};
use crate::ontology::ArityLexicon;
use rayon::prelude::*;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid block map: {0}")]
    BadBlockMap(String),
    #[error("concept vectors use different block maps")]
    ShapeMismatch,
    #[error("bit vector has length {got}, block map covers {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("block {block} is not one-hot")]
    NotOneHot { block: usize },
    #[error("concept {concept} does not belong to block {block}")]
    ForeignConcept { block: usize, concept: usize },
    #[error("retrieval pool is empty")]
    EmptyPool,
    #[error("record for {word:?} has an empty candidate set")]
    EmptyCandidates { word: String },
    #[error("record for {word:?} ranks {found} candidates, need exactly 4")]
    BadCandidateCount { word: String, found: usize },
    #[error("record for {word:?} has a human order that is not a permutation of 0..4")]
    BadOrder { word: String },
    #[error("no score for {col:?} given {row:?}")]
    MissingScore { row: String, col: String },
    #[error("annotation line {line}: {message}")]
    Annotation { line: usize, message: String },
}

/// Partition of concept indices into super-concept blocks. Blocks need not
/// be contiguous: induced hierarchies order concepts by discovery, not by
/// super membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMap {
    blocks: Vec<Vec<usize>>,
    dim: usize,
}

impl BlockMap {
    /// Blocks must jointly cover each concept index 0..dim exactly once.
    pub fn new(blocks: Vec<Vec<usize>>) -> Result<BlockMap, AnalysisError> {
        let dim: usize = blocks.iter().map(|b| b.len()).sum();
        let mut seen = vec![false; dim];
        for (i, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(AnalysisError::BadBlockMap(format!("block {i} is empty")));
            }
            for &c in block {
                if c >= dim || seen[c] {
                    return Err(AnalysisError::BadBlockMap(format!(
                        "concept {c} is not covered exactly once"
                    )));
                }
                seen[c] = true;
            }
        }
        Ok(BlockMap { blocks, dim })
    }

    /// Ground-truth map: one block per super, concepts in declaration order.
    pub fn from_lexicon(lex: &ArityLexicon) -> BlockMap {
        let blocks = lex.supers.iter().map(|s| s.concepts.clone()).collect();
        BlockMap::new(blocks).expect("lexicon supers partition the concepts")
    }

    /// Induced map: one block per induced super concept.
    pub fn from_hierarchy(arity: &ArityHierarchy) -> BlockMap {
        let blocks = arity.supers.iter().map(|s| s.concepts.clone()).collect();
        BlockMap::new(blocks).expect("induced supers partition the concepts")
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// One object's encoding: a bit per concept, exactly one set per block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVector {
    map: Arc<BlockMap>,
    bits: Vec<bool>,
}

impl ConceptVector {
    pub fn new(map: Arc<BlockMap>, bits: Vec<bool>) -> Result<ConceptVector, AnalysisError> {
        if bits.len() != map.dim {
            return Err(AnalysisError::WrongLength {
                expected: map.dim,
                got: bits.len(),
            });
        }
        for (i, block) in map.blocks.iter().enumerate() {
            if block.iter().filter(|&&c| bits[c]).count() != 1 {
                return Err(AnalysisError::NotOneHot { block: i });
            }
        }
        Ok(ConceptVector { map, bits })
    }

    /// Build from one active concept index per block, in block order.
    pub fn from_active(
        map: Arc<BlockMap>,
        active: &[usize],
    ) -> Result<ConceptVector, AnalysisError> {
        if active.len() != map.block_count() {
            return Err(AnalysisError::WrongLength {
                expected: map.block_count(),
                got: active.len(),
            });
        }
        let mut bits = vec![false; map.dim];
        for (i, (&concept, block)) in active.iter().zip(&map.blocks).enumerate() {
            if !block.contains(&concept) {
                return Err(AnalysisError::ForeignConcept { block: i, concept });
            }
            bits[concept] = true;
        }
        ConceptVector::new(map, bits)
    }

    /// Binarize a row of per-concept scores (e.g. a concept tensor row).
    pub fn from_scores(map: Arc<BlockMap>, row: &[f64]) -> Result<ConceptVector, AnalysisError> {
        if row.len() != map.dim {
            return Err(AnalysisError::WrongLength {
                expected: map.dim,
                got: row.len(),
            });
        }
        ConceptVector::new(map, row.iter().map(|&p| p > 0.5).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn map(&self) -> &Arc<BlockMap> {
        &self.map
    }

    /// The active concept index of one block.
    pub fn active_in(&self, block: usize) -> usize {
        *self.map.blocks[block]
            .iter()
            .find(|&&c| self.bits[c])
            .expect("constructor enforced one-hot blocks")
    }

    /// Active concept per block, in block order.
    pub fn active_concepts(&self) -> Vec<usize> {
        (0..self.map.block_count())
            .map(|b| self.active_in(b))
            .collect()
    }
}

/// A partial encoding: blocks are either one-hot or blank.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    map: Arc<BlockMap>,
    active: Vec<Option<usize>>,
}

impl Template {
    pub fn map(&self) -> &Arc<BlockMap> {
        &self.map
    }

    /// Active concept per block; None marks a blank block.
    pub fn actives(&self) -> &[Option<usize>] {
        &self.active
    }

    pub fn is_blank(&self, block: usize) -> bool {
        self.active[block].is_none()
    }
}

fn check_shapes(a: &ConceptVector, b: &ConceptVector) -> Result<(), AnalysisError> {
    if Arc::ptr_eq(&a.map, &b.map) || a.map == b.map {
        Ok(())
    } else {
        Err(AnalysisError::ShapeMismatch)
    }
}

/// Half the XOR popcount of the two bit vectors; one-hot blocks make this
/// exactly the number of blocks whose active concept differs.
pub fn semantic_distance(k1: &ConceptVector, k2: &ConceptVector) -> Result<f64, AnalysisError> {
    check_shapes(k1, k2)?;
    let xor = k1
        .bits
        .iter()
        .zip(&k2.bits)
        .filter(|(a, b)| a != b)
        .count();
    Ok(xor as f64 / 2.0)
}

/// Blank the blocks where k1 and k2 agree; keep k1's value elsewhere.
pub fn concept_minus(k1: &ConceptVector, k2: &ConceptVector) -> Result<Template, AnalysisError> {
    check_shapes(k1, k2)?;
    let active = (0..k1.map.block_count())
        .map(|b| {
            let a = k1.active_in(b);
            if a == k2.active_in(b) {
                None
            } else {
                Some(a)
            }
        })
        .collect();
    Ok(Template {
        map: Arc::clone(&k1.map),
        active,
    })
}

/// Fill the template's blank blocks from k2.
pub fn concept_plus(t: &Template, k2: &ConceptVector) -> Result<ConceptVector, AnalysisError> {
    if !(Arc::ptr_eq(&t.map, &k2.map) || t.map == k2.map) {
        return Err(AnalysisError::ShapeMismatch);
    }
    let active: Vec<usize> = (0..t.map.block_count())
        .map(|b| t.active[b].unwrap_or_else(|| k2.active_in(b)))
        .collect();
    ConceptVector::from_active(Arc::clone(&k2.map), &active)
}

/// Edit k0 by dropping the blocks it shares with k_sub, refill from k_add,
/// and return the index of the pool element nearest the edited vector.
/// Distance ties resolve to the lowest pool index.
pub fn analogy_retrieve(
    pool: &[ConceptVector],
    k0: &ConceptVector,
    k_sub: &ConceptVector,
    k_add: &ConceptVector,
) -> Result<usize, AnalysisError> {
    if pool.is_empty() {
        return Err(AnalysisError::EmptyPool);
    }
    let k3 = concept_plus(&concept_minus(k0, k_sub)?, k_add)?;
    let distances: Vec<f64> = pool
        .par_iter()
        .map(|k| semantic_distance(k, &k3))
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (i, &d) in distances.iter().enumerate().skip(1) {
        if d < distances[best] {
            best = i;
        }
    }
    Ok(best)
}

/// One annotated word: its chosen synonyms, chosen uncorrelated words, and
/// the human similarity ranking over candidates = positives ++ negatives
/// (rank index per candidate, 0 = most similar).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub word: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub human_order: Vec<usize>,
}

impl AnnotationRecord {
    pub fn candidates(&self) -> Vec<&str> {
        self.positives
            .iter()
            .chain(&self.negatives)
            .map(|s| s.as_str())
            .collect()
    }
}

fn is_permutation(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    for &o in order {
        if o >= order.len() || seen[o] {
            return false;
        }
        seen[o] = true;
    }
    true
}

/// One record per line: word, 2 positives, 2 negatives, 4 human rank
/// indices, comma-separated. Blank lines and `#` comments are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, AnalysisError> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |message: String| AnalysisError::Annotation {
            line: idx + 1,
            message,
        };
        if fields.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", fields.len())));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(err("empty field".into()));
        }
        let order: Vec<usize> = fields[5..9]
            .iter()
            .map(|f| {
                f.parse::<usize>()
                    .map_err(|_| err(format!("bad rank index {f:?}")))
            })
            .collect::<Result<_, _>>()?;
        if !is_permutation(&order) {
            return Err(err("ranks are not a permutation of 0..4".into()));
        }
        let candidates = &fields[1..5];
        for (i, a) in candidates.iter().enumerate() {
            if candidates[..i].contains(a) {
                return Err(err(format!("duplicate candidate {a:?}")));
            }
        }
        records.push(AnnotationRecord {
            word: fields[0].to_string(),
            positives: vec![fields[1].to_string(), fields[2].to_string()],
            negatives: vec![fields[3].to_string(), fields[4].to_string()],
            human_order: order,
        });
    }
    Ok(records)
}

pub fn render_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::from("# word, positive, positive, negative, negative, rank x4\n");
    for r in records {
        let ranks: Vec<String> = r.human_order.iter().map(|o| o.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.word,
            r.positives[0],
            r.positives[1],
            r.negatives[0],
            r.negatives[1],
            ranks.join(",")
        )
        .unwrap();
    }
    out
}

/// Ontology-derived stand-in for human annotations: for every word whose
/// concept has a second synonym and whose super concept offers at least two
/// other-concept words, the positives are the word itself and its synonym,
/// the negatives the first two same-super words of other concepts, ranked
/// in that order.
pub fn synthetic_annotations(lex: &ArityLexicon) -> Vec<AnnotationRecord> {
    let mut records = Vec::new();
    for (w, word) in lex.words.iter().enumerate() {
        let concept = &lex.concepts[word.concept];
        let synonym = concept.synonyms.iter().find(|&&s| s != w);
        let Some(&synonym) = synonym else { continue };
        let negatives: Vec<String> = lex.supers[concept.super_idx]
            .concepts
            .iter()
            .filter(|&&c| c != word.concept)
            .flat_map(|&c| lex.concepts[c].synonyms.iter())
            .map(|&s| lex.words[s].text.clone())
            .take(2)
            .collect();
        if negatives.len() < 2 {
            continue;
        }
        records.push(AnnotationRecord {
            word: word.text.clone(),
            positives: vec![word.text.clone(), lex.words[synonym].text.clone()],
            negatives,
            human_order: vec![0, 1, 2, 3],
        });
    }
    records
}

/// Word-by-word proximity scores, looked up by text. Entries may be absent
/// (e.g. conditional probabilities given a never-possessed word).
#[derive(Debug, Clone)]
pub struct ScoreTable {
    index: HashMap<String, usize>,
    scores: Vec<Vec<Option<f64>>>,
}

impl ScoreTable {
    pub fn new(words: Vec<String>, scores: Vec<Vec<Option<f64>>>) -> ScoreTable {
        assert_eq!(words.len(), scores.len(), "square score table");
        let index = words.into_iter().zip(0..).collect();
        ScoreTable { index, scores }
    }

    /// P(col word's bit | row word's bit) over a code matrix.
    pub fn from_conditional(words: Vec<String>, gamma: &BitMatrix) -> ScoreTable {
        ScoreTable::new(words, hierarchy::conditional_probability_table(gamma))
    }

    pub fn score(&self, row: &str, col: &str) -> Option<f64> {
        let r = *self.index.get(row)?;
        let c = *self.index.get(col)?;
        self.scores[r][c]
    }

    fn require(&self, row: &str, col: &str) -> Result<f64, AnalysisError> {
        self.score(row, col).ok_or_else(|| AnalysisError::MissingScore {
            row: row.to_string(),
            col: col.to_string(),
        })
    }
}

/// Threshold-classification accuracies: synonyms only, uncorrelated words
/// only, and the pooled per-record mean of both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub positive: f64,
    pub negative: f64,
    pub combined: f64,
}

/// Score every candidate against its record word and classify by strict
/// threshold comparison: positives should score above t, negatives below.
/// Each record contributes its own candidate-set mean; the result averages
/// those per-record means.
pub fn classification_accuracy(
    records: &[AnnotationRecord],
    table: &ScoreTable,
    threshold: f64,
) -> Result<Accuracy, AnalysisError> {
    let per_record: Vec<(f64, f64, f64)> = records
        .par_iter()
        .map(|r| {
            if r.positives.is_empty() || r.negatives.is_empty() {
                return Err(AnalysisError::EmptyCandidates {
                    word: r.word.clone(),
                });
            }
            let mut pos_hits = 0usize;
            for p in &r.positives {
                if table.require(&r.word, p)? > threshold {
                    pos_hits += 1;
                }
            }
            let mut neg_hits = 0usize;
            for n in &r.negatives {
                if table.require(&r.word, n)? < threshold {
                    neg_hits += 1;
                }
            }
            Ok((
                pos_hits as f64 / r.positives.len() as f64,
                neg_hits as f64 / r.negatives.len() as f64,
                (pos_hits + neg_hits) as f64 / (r.positives.len() + r.negatives.len()) as f64,
            ))
        })
        .collect::<Result<_, _>>()?;
    let n = per_record.len() as f64;
    let sum = per_record
        .iter()
        .fold((0.0, 0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2));
    Ok(Accuracy {
        positive: sum.0 / n,
        negative: sum.1 / n,
        combined: sum.2 / n,
    })
}

/// Mean normalized Kendall tau distance plus the number of exactly tied
/// score pairs encountered (ties rank by human order, deterministically).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingSummary {
    pub mean_distance: f64,
    pub tied_pairs: usize,
    pub records: usize,
}

/// Rank each record's four candidates by descending score and count the
/// candidate pairs ordered differently by the human ranking, normalized by
/// the 6 possible pairs.
pub fn ranking_distance(
    records: &[AnnotationRecord],
    table: &ScoreTable,
) -> Result<RankingSummary, AnalysisError> {
    let per_record: Vec<(f64, usize)> = records
        .par_iter()
        .map(|r| {
            let candidates = r.candidates();
            if candidates.len() != 4 {
                return Err(AnalysisError::BadCandidateCount {
                    word: r.word.clone(),
                    found: candidates.len(),
                });
            }
            if r.human_order.len() != 4 || !is_permutation(&r.human_order) {
                return Err(AnalysisError::BadOrder {
                    word: r.word.clone(),
                });
            }
            let scores: Vec<f64> = candidates
                .iter()
                .map(|c| table.require(&r.word, c))
                .collect::<Result<_, _>>()?;
            let mut ties = 0;
            for j in 0..4 {
                for k in j + 1..4 {
                    if scores[j] == scores[k] {
                        ties += 1;
                    }
                }
            }
            let mut by_score: Vec<usize> = (0..4).collect();
            by_score.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap()
                    .then(r.human_order[a].cmp(&r.human_order[b]))
            });
            let mut induced = vec![0usize; 4];
            for (rank, &cand) in by_score.iter().enumerate() {
                induced[cand] = rank;
            }
            let mut discordant = 0;
            for j in 0..4 {
                for k in j + 1..4 {
                    if (r.human_order[j] < r.human_order[k]) != (induced[j] < induced[k]) {
                        discordant += 1;
                    }
                }
            }
            Ok((discordant as f64 / 6.0, ties))
        })
        .collect::<Result<_, _>>()?;
    let records_n = per_record.len();
    let (dist_sum, ties) = per_record
        .iter()
        .fold((0.0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    Ok(RankingSummary {
        mean_distance: if records_n == 0 { 0.0 } else { dist_sum / records_n as f64 },
        tied_pairs: ties,
        records: records_n,
    })
}
