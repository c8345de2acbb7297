//! Concept hierarchy induction from corpus-wide binary codes.
//!
//! Words whose Γ rows co-occur almost everywhere are synonyms; words that
//! never co-occur are mutually exclusive. The pairwise correlation
//!
//!   θ(w1, w2) = |Γ1⊙Γ2|/|Γ2| + |Γ1⊙Γ2|/|Γ1|
//!
//! lands near 2 for synonyms, near 0 for exclusives, and in between for
//! unrelated words, so a 3-component mixture over all pair correlations
//! separates the three regimes. Synonym components become concepts, fully
//! exclusive concept groups become super concepts, and per-scene concept
//! tensors re-encode every object (and ordered object pair) one-hot per
//! multi-member super concept.

use crate::bits::BitMatrix;
use crate::gmm::{self, EmOptions, GmmError, GmmModel, Init};
use crate::induction::{Classifiers, GammaMatrix, InductionError};
use crate::ontology::{ArityLexicon, Lexicon, RelationTable, Scene};
use rayon::prelude::*;
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

/// A fitted synonym component only carries synonym meaning if it stayed near
/// its anchor at 2; when the data has no synonym cluster, EM walks that
/// component down into the middle mass and its members must not be merged.
pub const SYN_MEAN_FLOOR: f64 = 1.5;
/// Mirror guard for the exclusive component anchored at 0.
pub const EXC_MEAN_CEILING: f64 = 0.5;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("word {word:?} has an all-zero code row; correlation undefined")]
    UndefinedCorrelation { word: String },
    #[error("correlation clustering failed: {0}")]
    Clustering(String),
    #[error("synonym group ({words}) is not fully synonymous; offending pairs: {pairs}")]
    ConceptInconsistency { words: String, pairs: String },
    #[error("super concept ({concepts}) is only partially exclusive; offending pairs: {pairs}")]
    SuperInconsistency { concepts: String, pairs: String },
    #[error("induced concept {0} has no synonym words")]
    EmptyConcept(usize),
    #[error("concept tensor classifier failure: {0}")]
    Classifier(#[from] InductionError),
}

/// θ for one word pair: the sum of the two conditional co-occurrence rates.
pub fn word_correlation(
    gamma: &BitMatrix,
    lex: &ArityLexicon,
    w1: usize,
    w2: usize,
) -> Result<f64, HierarchyError> {
    let n1 = gamma.row_popcount(w1);
    let n2 = gamma.row_popcount(w2);
    for (w, n) in [(w1, n1), (w2, n2)] {
        if n == 0 {
            return Err(HierarchyError::UndefinedCorrelation {
                word: lex.words[w].text.clone(),
            });
        }
    }
    let inter = gamma.and_popcount(w1, w2) as f64;
    Ok(inter / n2 as f64 + inter / n1 as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct PairTheta {
    pub a: usize,
    pub b: usize,
    pub theta: f64,
}

/// All distinct word pairs of one arity with defined correlations. Words
/// whose rows are all-zero are dropped and reported, not fatal.
#[derive(Debug, Clone, Default)]
pub struct CorrelationSet {
    pub pairs: Vec<PairTheta>,
    pub dropped_words: Vec<usize>,
}

impl CorrelationSet {
    pub fn theta(&self, a: usize, b: usize) -> Option<f64> {
        let key = (a.min(b), a.max(b));
        self.pairs
            .iter()
            .find(|p| (p.a, p.b) == key)
            .map(|p| p.theta)
    }
}

fn correlation_set(gamma: &BitMatrix) -> CorrelationSet {
    let n = gamma.rows();
    let pops: Vec<usize> = (0..n).map(|w| gamma.row_popcount(w)).collect();
    let dropped_words: Vec<usize> = (0..n).filter(|&w| pops[w] == 0).collect();
    let mut keys = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if pops[a] > 0 && pops[b] > 0 {
                keys.push((a, b));
            }
        }
    }
    let pairs = keys
        .par_iter()
        .map(|&(a, b)| {
            let inter = gamma.and_popcount(a, b) as f64;
            PairTheta {
                a,
                b,
                theta: inter / pops[b] as f64 + inter / pops[a] as f64,
            }
        })
        .collect();
    CorrelationSet {
        pairs,
        dropped_words,
    }
}

/// Correlation sets for both arities.
pub fn correlation_sets(gamma: &GammaMatrix) -> (CorrelationSet, CorrelationSet) {
    (
        correlation_set(&gamma.unary),
        correlation_set(&gamma.binary),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    Exclusive,
    Middle,
    Synonym,
}

#[derive(Debug, Clone, Copy)]
pub struct PairAssignment {
    pub a: usize,
    pub b: usize,
    pub theta: f64,
    /// Mixture component (sorted by mean) the pair landed in.
    pub component: usize,
    pub class: PairClass,
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub assignments: Vec<PairAssignment>,
    pub model: GmmModel,
    pub exclusive_component: usize,
    pub synonym_component: usize,
    /// False when the component slid away from its anchor (see guards).
    pub exclusive_enabled: bool,
    pub synonym_enabled: bool,
}

/// Fits a 3-component mixture over θ values (means initialized 0, 1, 2) and
/// labels each pair by the component it lands in: synonym for the component
/// nearest 2, exclusive for the one nearest 0, middle otherwise.
pub fn cluster_pairs(
    set: &CorrelationSet,
    opts: &EmOptions,
) -> Result<ClusterOutcome, HierarchyError> {
    if set.pairs.len() < 3 {
        return Err(HierarchyError::Clustering(format!(
            "need at least 3 word pairs, have {}",
            set.pairs.len()
        )));
    }
    let thetas: Vec<f64> = set.pairs.iter().map(|p| p.theta).collect();
    let init = Init::Means(vec![0.0, 1.0, 2.0]);
    let model = gmm::fit_em(&thetas, 3, init, opts).map_err(|e| match e {
        GmmError::DegenerateInput(_) => {
            HierarchyError::Clustering("all pair correlations are identical".into())
        }
        other => HierarchyError::Clustering(other.to_string()),
    })?;
    let exclusive_component = model.component_nearest(0.0);
    let synonym_component = model.component_nearest(2.0);
    if exclusive_component == synonym_component {
        return Err(HierarchyError::Clustering(
            "mixture collapsed to a single regime".into(),
        ));
    }
    let exclusive_enabled = model.components[exclusive_component].mean <= EXC_MEAN_CEILING;
    let synonym_enabled = model.components[synonym_component].mean >= SYN_MEAN_FLOOR;
    let assignments = set
        .pairs
        .iter()
        .map(|p| {
            let component = model.assign(p.theta);
            let class = if component == synonym_component && synonym_enabled {
                PairClass::Synonym
            } else if component == exclusive_component && exclusive_enabled {
                PairClass::Exclusive
            } else {
                PairClass::Middle
            };
            PairAssignment {
                a: p.a,
                b: p.b,
                theta: p.theta,
                component,
                class,
            }
        })
        .collect();
    Ok(ClusterOutcome {
        assignments,
        model,
        exclusive_component,
        synonym_component,
        exclusive_enabled,
        synonym_enabled,
    })
}

/// One induced concept: a synonym word group (sorted word indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InducedConcept {
    pub words: Vec<usize>,
}

/// One induced super concept: a set of mutually exclusive concepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InducedSuper {
    pub concepts: Vec<usize>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn class_map(assignments: &[PairAssignment]) -> HashMap<(usize, usize), PairClass> {
    assignments.iter().map(|p| ((p.a, p.b), p.class)).collect()
}

fn name_words(lex: &ArityLexicon, words: &[usize]) -> String {
    words
        .iter()
        .map(|&w| lex.words[w].text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn name_pairs(lex: &ArityLexicon, pairs: &[(usize, usize)]) -> String {
    pairs
        .iter()
        .map(|&(a, b)| format!("{}-{}", lex.words[a].text, lex.words[b].text))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Connected components of the synonym graph become concepts. Every
/// intra-component pair must itself be synonym-labeled, otherwise the
/// grouping rests on a non-transitive signal and is rejected.
pub fn induce_concepts(
    assignments: &[PairAssignment],
    n_words: usize,
    dropped_words: &[usize],
    lex: &ArityLexicon,
) -> Result<Vec<InducedConcept>, HierarchyError> {
    let mut uf = UnionFind::new(n_words);
    for p in assignments {
        if p.class == PairClass::Synonym {
            uf.union(p.a, p.b);
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for w in 0..n_words {
        if dropped_words.contains(&w) {
            continue;
        }
        groups.entry(uf.find(w)).or_default().push(w);
    }
    let mut concepts: Vec<InducedConcept> = groups
        .into_values()
        .map(|mut words| {
            words.sort_unstable();
            InducedConcept { words }
        })
        .collect();
    concepts.sort_by_key(|c| c.words[0]);

    let classes = class_map(assignments);
    for concept in &concepts {
        let mut offending = Vec::new();
        for (i, &a) in concept.words.iter().enumerate() {
            for &b in &concept.words[i + 1..] {
                if classes.get(&(a, b)) != Some(&PairClass::Synonym) {
                    offending.push((a, b));
                }
            }
        }
        if !offending.is_empty() {
            return Err(HierarchyError::ConceptInconsistency {
                words: name_words(lex, &concept.words),
                pairs: name_pairs(lex, &offending),
            });
        }
    }
    Ok(concepts)
}

fn all_cross_exclusive(
    classes: &HashMap<(usize, usize), PairClass>,
    a: &InducedConcept,
    b: &InducedConcept,
) -> bool {
    a.words.iter().all(|&wa| {
        b.words.iter().all(|&wb| {
            let key = (wa.min(wb), wa.max(wb));
            classes.get(&key) == Some(&PairClass::Exclusive)
        })
    })
}

/// Concepts joined by full cross-pair exclusivity form super concepts;
/// concepts exclusive with nothing become singleton super concepts. A
/// component where some concept pair is not fully exclusive is rejected.
pub fn induce_super_concepts(
    assignments: &[PairAssignment],
    concepts: &[InducedConcept],
    lex: &ArityLexicon,
) -> Result<Vec<InducedSuper>, HierarchyError> {
    let classes = class_map(assignments);
    let n = concepts.len();
    let mut uf = UnionFind::new(n);
    let mut edge = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if all_cross_exclusive(&classes, &concepts[i], &concepts[j]) {
                edge[i * n + j] = true;
                uf.union(i, j);
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for c in 0..n {
        groups.entry(uf.find(c)).or_default().push(c);
    }
    let mut supers: Vec<InducedSuper> = groups
        .into_values()
        .map(|mut concepts| {
            concepts.sort_unstable();
            InducedSuper { concepts }
        })
        .collect();
    supers.sort_by_key(|s| s.concepts[0]);

    for sup in &supers {
        let mut offending = Vec::new();
        for (i, &ca) in sup.concepts.iter().enumerate() {
            for &cb in &sup.concepts[i + 1..] {
                if !edge[ca * n + cb] {
                    offending.push((concepts[ca].words[0], concepts[cb].words[0]));
                }
            }
        }
        if !offending.is_empty() {
            let names: Vec<String> = sup
                .concepts
                .iter()
                .map(|&c| format!("({})", name_words(lex, &concepts[c].words)))
                .collect();
            return Err(HierarchyError::SuperInconsistency {
                concepts: names.join(" "),
                pairs: name_pairs(lex, &offending),
            });
        }
    }
    Ok(supers)
}

/// Induced structure for one arity.
#[derive(Debug, Clone, Default)]
pub struct ArityHierarchy {
    pub concepts: Vec<InducedConcept>,
    pub supers: Vec<InducedSuper>,
    /// word index -> induced concept (None for dropped words).
    pub word_concept: Vec<Option<usize>>,
    /// concept index -> induced super concept.
    pub concept_super: Vec<usize>,
    pub dropped_words: Vec<usize>,
}

impl ArityHierarchy {
    pub fn from_parts(
        concepts: Vec<InducedConcept>,
        supers: Vec<InducedSuper>,
        n_words: usize,
        dropped_words: Vec<usize>,
    ) -> Self {
        let mut word_concept = vec![None; n_words];
        for (ci, c) in concepts.iter().enumerate() {
            for &w in &c.words {
                word_concept[w] = Some(ci);
            }
        }
        let mut concept_super = vec![0; concepts.len()];
        for (si, s) in supers.iter().enumerate() {
            for &c in &s.concepts {
                concept_super[c] = si;
            }
        }
        ArityHierarchy {
            concepts,
            supers,
            word_concept,
            concept_super,
            dropped_words,
        }
    }
}

/// Full induced hierarchy plus the pair-assignment records behind it.
#[derive(Debug, Clone)]
pub struct ConceptHierarchy {
    pub unary: ArityHierarchy,
    pub binary: ArityHierarchy,
    pub unary_clusters: Option<ClusterOutcome>,
    pub binary_clusters: Option<ClusterOutcome>,
}

fn induce_arity(
    gamma: &BitMatrix,
    lex: &ArityLexicon,
    opts: &EmOptions,
) -> Result<(ArityHierarchy, Option<ClusterOutcome>), HierarchyError> {
    let set = correlation_set(gamma);
    let n_words = gamma.rows();
    let retained = n_words - set.dropped_words.len();
    if retained == 0 {
        return Ok((
            ArityHierarchy {
                dropped_words: set.dropped_words,
                ..ArityHierarchy::default()
            },
            None,
        ));
    }
    if retained == 1 {
        let word = (0..n_words)
            .find(|w| !set.dropped_words.contains(w))
            .expect("one retained word");
        let concepts = vec![InducedConcept { words: vec![word] }];
        let supers = vec![InducedSuper { concepts: vec![0] }];
        return Ok((
            ArityHierarchy::from_parts(concepts, supers, n_words, set.dropped_words),
            None,
        ));
    }
    let outcome = cluster_pairs(&set, opts)?;
    let concepts = induce_concepts(&outcome.assignments, n_words, &set.dropped_words, lex)?;
    let supers = induce_super_concepts(&outcome.assignments, &concepts, lex)?;
    Ok((
        ArityHierarchy::from_parts(concepts, supers, n_words, set.dropped_words),
        Some(outcome),
    ))
}

/// Runs correlation, clustering, and both induction stages for both arities.
pub fn induce_hierarchy(
    gamma: &GammaMatrix,
    lex: &Lexicon,
    opts: &EmOptions,
) -> Result<ConceptHierarchy, HierarchyError> {
    let (unary, unary_clusters) = induce_arity(&gamma.unary, &lex.unary, opts)?;
    let (binary, binary_clusters) = induce_arity(&gamma.binary, &lex.binary, opts)?;
    Ok(ConceptHierarchy {
        unary,
        binary,
        unary_clusters,
        binary_clusters,
    })
}

/// Replaces the slice with the one-hot vector of its maximum; ties go to the
/// lowest index.
pub fn hardmax(scores: &mut [f64]) {
    if scores.is_empty() {
        return;
    }
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    for (i, s) in scores.iter_mut().enumerate() {
        *s = if i == best { 1.0 } else { 0.0 };
    }
}

/// Per-scene concept tensors: K\u{1d58} indexed (object, concept) and
/// K\u{1d47} indexed (subject, anchor, concept) with an all-zero diagonal.
#[derive(Debug, Clone)]
pub struct ConceptTensors {
    pub objects: usize,
    pub unary_concepts: usize,
    pub binary_concepts: usize,
    unary: Vec<f64>,
    binary: Vec<f64>,
}

impl ConceptTensors {
    pub fn unary(&self, object: usize, concept: usize) -> f64 {
        self.unary[object * self.unary_concepts + concept]
    }

    pub fn binary(&self, subject: usize, anchor: usize, concept: usize) -> f64 {
        self.binary[(subject * self.objects + anchor) * self.binary_concepts + concept]
    }

    pub fn unary_row(&self, object: usize) -> &[f64] {
        &self.unary[object * self.unary_concepts..(object + 1) * self.unary_concepts]
    }

    pub fn set_unary(&mut self, object: usize, concept: usize, value: f64) {
        self.unary[object * self.unary_concepts + concept] = value;
    }
}

fn finalize_blocks(scores: &mut [f64], hierarchy: &ArityHierarchy) {
    for sup in &hierarchy.supers {
        if sup.concepts.len() >= 2 {
            let mut block: Vec<f64> = sup.concepts.iter().map(|&c| scores[c]).collect();
            hardmax(&mut block);
            for (&c, &v) in sup.concepts.iter().zip(&block) {
                scores[c] = v;
            }
        } else {
            let c = sup.concepts[0];
            scores[c] = if scores[c] > 0.5 { 1.0 } else { 0.0 };
        }
    }
}

/// Builds the concept tensors for one scene: concept score = MAX over the
/// concept's synonym probabilities, then each multi-member super-concept
/// block is hardmaxed to one-hot and singleton-super scores are binarized
/// at 0.5. Self pairs carry no relation and stay all-zero.
pub fn concept_tensors(
    scene: &Scene,
    relations: &RelationTable,
    classifiers: &Classifiers,
    hierarchy: &ConceptHierarchy,
) -> Result<ConceptTensors, HierarchyError> {
    for ah in [&hierarchy.unary, &hierarchy.binary] {
        for (ci, c) in ah.concepts.iter().enumerate() {
            if c.words.is_empty() {
                return Err(HierarchyError::EmptyConcept(ci));
            }
        }
    }
    let n = scene.objects.len();
    let eu = hierarchy.unary.concepts.len();
    let eb = hierarchy.binary.concepts.len();
    let mut unary = vec![0.0; n * eu];
    for object in 0..n {
        let scores = &mut unary[object * eu..(object + 1) * eu];
        for (ci, c) in hierarchy.unary.concepts.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for &w in &c.words {
                best = best.max(classifiers.classify_unary(scene, w, object)?);
            }
            scores[ci] = best;
        }
        finalize_blocks(scores, &hierarchy.unary);
    }
    let mut binary = vec![0.0; n * n * eb];
    for subject in 0..n {
        for anchor in 0..n {
            if subject == anchor {
                continue;
            }
            let base = (subject * n + anchor) * eb;
            let scores = &mut binary[base..base + eb];
            for (ci, c) in hierarchy.binary.concepts.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for &w in &c.words {
                    best = best
                        .max(classifiers.classify_binary(scene, relations, w, subject, anchor)?);
                }
                scores[ci] = best;
            }
            finalize_blocks(scores, &hierarchy.binary);
        }
    }
    Ok(ConceptTensors {
        objects: n,
        unary_concepts: eu,
        binary_concepts: eb,
        unary,
        binary,
    })
}

/// P(column word | row word) under the code matrix: the fraction of the row
/// word's set bits also set for the column word. None when the row is empty.
pub fn conditional_probability(gamma: &BitMatrix, row: usize, col: usize) -> Option<f64> {
    let n = gamma.row_popcount(row);
    if n == 0 {
        return None;
    }
    Some(gamma.and_popcount(row, col) as f64 / n as f64)
}

/// Full P(col|row) table over all words of one arity.
pub fn conditional_probability_table(gamma: &BitMatrix) -> Vec<Vec<Option<f64>>> {
    (0..gamma.rows())
        .map(|r| {
            (0..gamma.rows())
                .map(|c| conditional_probability(gamma, r, c))
                .collect()
        })
        .collect()
}

/// Renders the induced hierarchy in the canonical text form: one line per
/// super concept, concepts as sorted word groups, supers sorted by their
/// first group. Identical structure to the ground-truth rendering, so exact
/// recovery is a string equality.
pub fn render_hierarchy(hierarchy: &ConceptHierarchy, lex: &Lexicon) -> String {
    let mut out = String::new();
    for (label, ah, al) in [
        ("unary", &hierarchy.unary, &lex.unary),
        ("binary", &hierarchy.binary, &lex.binary),
    ] {
        if ah.concepts.is_empty() {
            continue;
        }
        let _ = writeln!(out, "[{label}]");
        let mut supers: Vec<Vec<String>> = ah
            .supers
            .iter()
            .map(|s| {
                let mut groups: Vec<String> = s
                    .concepts
                    .iter()
                    .map(|&c| {
                        let mut words: Vec<&str> = ah.concepts[c]
                            .words
                            .iter()
                            .map(|&w| al.words[w].text.as_str())
                            .collect();
                        words.sort_unstable();
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
