//! Artifact pipeline: the command bodies behind the CLI and the on-disk
//! formats they exchange.
//!
//! Every command is a pure function of (effective config, input files) and
//! stamps its outputs with the config hash: JSON artifacts carry a
//! `config_hash` field, text and CSV artifacts a leading `# config <hash>`
//! comment, and `manifest.json` records the hash plus a SHA-256 digest of
//! every file the pipeline has written. Loaders refuse artifacts whose hash
//! does not match the current effective config, so a stale or foreign
//! artifact surfaces as a missing-artifact error instead of silent garbage.
//!
//! Layout of an output directory after a full run:
//!
//!   corpus.jsonl            scenes and mention bags (generate)
//!   boundaries.json         per-word logit models and decision boundaries
//!   gamma.json              corpus-wide code matrices, hex rows
//!   hierarchy.json          induced concepts, super concepts, wiring
//!   hierarchy.txt           canonical human-readable hierarchy
//!   theta_*.csv             symmetric pairwise correlation matrices
//!   condprob_*.csv          conditional co-description probabilities
//!   excluded_words.txt      words without a usable boundary, with reasons
//!   encodings.csv           induced one-hot encoding of every object
//!   induce.txt              stage and count summary (induce)
//!   theta_*.svg             optional correlation heatmaps (--svg)
//!   sufficiency.csv/.txt    per-family agreement report (evaluate)
//!   distances.csv           within-scene pairwise semantic distances
//!   analogy.csv             retrieval results for requested triples
//!   metrics.csv             annotation classification and ranking metrics
//!   manifest.json           config hash + file digests

use crate::analysis::{
    self, analogy_retrieve, classification_accuracy, parse_annotations, ranking_distance,
    semantic_distance, synthetic_annotations, AnalysisError, AnnotationRecord, BlockMap,
    ConceptVector, ScoreTable,
};
use crate::attention::AttentionSim;
use crate::bits::BitMatrix;
use crate::config::RunConfig;
use crate::gmm::{Component, GmmModel};
use crate::hierarchy::{
    concept_tensors, conditional_probability_table, correlation_sets, induce_hierarchy,
    render_hierarchy, ArityHierarchy, ConceptHierarchy, CorrelationSet, HierarchyError,
    InducedConcept, InducedSuper,
};
use crate::induction::{
    binary_code, collect_logits, fit_boundaries, label_corpus, BoundaryFit, BoundaryMap,
    Classifiers, ExcludedWord, GammaMatrix,
};
use crate::ontology::{ground_truth_relations, Arity, Corpus, Lexicon};
use crate::reasoner::evaluate_sufficiency;
use crate::svg;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BOUNDARIES_FILE: &str = "boundaries.json";
pub const GAMMA_FILE: &str = "gamma.json";
pub const HIERARCHY_JSON_FILE: &str = "hierarchy.json";
pub const HIERARCHY_TEXT_FILE: &str = "hierarchy.txt";
pub const ENCODINGS_FILE: &str = "encodings.csv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("bad reference: {0}")]
    BadReference(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 2 config, 3 missing artifact, 4 bad reference, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingArtifact(_) => 3,
            PipelineError::BadReference(_) => 4,
            _ => 1,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let mut hex = String::with_capacity(64);
    for byte in hasher.finalize() {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    files: BTreeMap<String, String>,
}

/// Collects written files and flushes one manifest update at the end.
struct ArtifactWriter<'a> {
    out: &'a Path,
    config_hash: String,
    entries: Vec<(String, String)>,
}

impl<'a> ArtifactWriter<'a> {
    fn new(out: &'a Path, config_hash: &str) -> Result<ArtifactWriter<'a>, PipelineError> {
        fs::create_dir_all(out).map_err(|source| PipelineError::Io {
            path: out.to_path_buf(),
            source,
        })?;
        Ok(ArtifactWriter {
            out,
            config_hash: config_hash.to_string(),
            entries: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), PipelineError> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|source| PipelineError::Io { path, source })?;
        self.entries
            .push((name.to_string(), sha256_hex(contents.as_bytes())));
        Ok(())
    }

    /// Merges the new entries into an existing same-config manifest; a
    /// manifest from a different config is replaced outright.
    fn finish(self) -> Result<(), PipelineError> {
        let path = self.out.join(MANIFEST_FILE);
        let mut manifest = fs::read_to_string(&path)
            .ok()
            .and_then(|text| serde_json::from_str::<Manifest>(&text).ok())
            .filter(|m| m.config_hash == self.config_hash)
            .unwrap_or(Manifest {
                config_hash: self.config_hash.clone(),
                files: BTreeMap::new(),
            });
        for (name, digest) in self.entries {
            manifest.files.insert(name, digest);
        }
        let text = to_pretty_json(&manifest);
        fs::write(&path, text).map_err(|source| PipelineError::Io { path, source })
    }
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    text
}

fn read_artifact(out: &Path, name: &str) -> Result<String, PipelineError> {
    let path = out.join(name);
    fs::read_to_string(&path).map_err(|source| {
        PipelineError::MissingArtifact(format!("{}: {source}", path.display()))
    })
}

fn check_hash(name: &str, found: &str, expected: &str) -> Result<(), PipelineError> {
    if found == expected {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact(format!(
            "{name} was produced by config {found}, current config hashes to {expected}"
        )))
    }
}

/// The manifest must exist and match the current effective config before
/// any artifact in the directory is trusted.
fn verify_manifest(out: &Path, config_hash: &str) -> Result<(), PipelineError> {
    let text = read_artifact(out, MANIFEST_FILE)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        PipelineError::MissingArtifact(format!("{MANIFEST_FILE}: {e}"))
    })?;
    check_hash(MANIFEST_FILE, &manifest.config_hash, config_hash)
}

// ---------------------------------------------------------------------------
// Wire formats

#[derive(Serialize, Deserialize)]
struct ComponentWire {
    weight: f64,
    mean: f64,
    variance: f64,
}

#[derive(Serialize, Deserialize)]
struct BoundaryWire {
    word: String,
    boundary: f64,
    components: Vec<ComponentWire>,
}

#[derive(Serialize, Deserialize)]
struct ExcludedWire {
    arity: String,
    word: String,
    reason: String,
}

#[derive(Serialize, Deserialize)]
struct BoundariesFile {
    config_hash: String,
    unary: Vec<Option<BoundaryWire>>,
    binary: Vec<Option<BoundaryWire>>,
    excluded: Vec<ExcludedWire>,
}

fn arity_label(arity: Arity) -> &'static str {
    match arity {
        Arity::Unary => "unary",
        Arity::Binary => "binary",
    }
}

fn boundaries_to_wire(map: &BoundaryMap, lex: &Lexicon, config_hash: &str) -> BoundariesFile {
    let side = |fits: &[Option<BoundaryFit>], words: &[String]| -> Vec<Option<BoundaryWire>> {
        fits.iter()
            .zip(words)
            .map(|(fit, word)| {
                fit.as_ref().map(|f| BoundaryWire {
                    word: word.clone(),
                    boundary: f.boundary,
                    components: f
                        .model
                        .components
                        .iter()
                        .map(|c| ComponentWire {
                            weight: c.weight,
                            mean: c.mean,
                            variance: c.variance,
                        })
                        .collect(),
                })
            })
            .collect()
    };
    BoundariesFile {
        config_hash: config_hash.to_string(),
        unary: side(&map.unary, &lex.unary.word_texts()),
        binary: side(&map.binary, &lex.binary.word_texts()),
        excluded: map
            .excluded
            .iter()
            .map(|e| ExcludedWire {
                arity: arity_label(e.arity).to_string(),
                word: lex.arity(e.arity).words[e.word].text.clone(),
                reason: e.reason.clone(),
            })
            .collect(),
    }
}

fn boundaries_from_wire(file: BoundariesFile, lex: &Lexicon) -> Result<BoundaryMap, PipelineError> {
    let side = |wires: Vec<Option<BoundaryWire>>, n: usize| -> Result<Vec<Option<BoundaryFit>>, PipelineError> {
        if wires.len() != n {
            return Err(PipelineError::MissingArtifact(format!(
                "{BOUNDARIES_FILE} covers {} words, lexicon has {n}",
                wires.len()
            )));
        }
        Ok(wires
            .into_iter()
            .map(|w| {
                w.map(|w| BoundaryFit {
                    boundary: w.boundary,
                    model: GmmModel {
                        components: w
                            .components
                            .into_iter()
                            .map(|c| Component {
                                weight: c.weight,
                                mean: c.mean,
                                variance: c.variance,
                            })
                            .collect(),
                        log_likelihood_trace: Vec::new(),
                    },
                })
            })
            .collect())
    };
    let excluded = file
        .excluded
        .into_iter()
        .map(|e| {
            let (arity, word) = lex.lookup(&e.word).ok_or_else(|| {
                PipelineError::MissingArtifact(format!(
                    "{BOUNDARIES_FILE} excludes unknown word {:?}",
                    e.word
                ))
            })?;
            Ok(ExcludedWord {
                arity,
                word,
                reason: e.reason,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(BoundaryMap {
        unary: side(file.unary, lex.unary.words.len())?,
        binary: side(file.binary, lex.binary.words.len())?,
        excluded,
    })
}

#[derive(Serialize, Deserialize)]
struct GammaFile {
    config_hash: String,
    unary_words: Vec<String>,
    binary_words: Vec<String>,
    unary_cols: usize,
    binary_cols: usize,
    unary_columns: Vec<(u32, u32)>,
    binary_columns: Vec<(u32, u32, u32)>,
    unary_rows: Vec<String>,
    binary_rows: Vec<String>,
}

fn gamma_to_wire(gamma: &GammaMatrix, lex: &Lexicon, config_hash: &str) -> GammaFile {
    let hex_rows = |m: &BitMatrix| (0..m.rows()).map(|r| m.row_hex(r)).collect();
    GammaFile {
        config_hash: config_hash.to_string(),
        unary_words: lex.unary.word_texts(),
        binary_words: lex.binary.word_texts(),
        unary_cols: gamma.unary.cols(),
        binary_cols: gamma.binary.cols(),
        unary_columns: gamma.unary_columns.clone(),
        binary_columns: gamma.binary_columns.clone(),
        unary_rows: hex_rows(&gamma.unary),
        binary_rows: hex_rows(&gamma.binary),
    }
}

fn gamma_from_wire(file: GammaFile, lex: &Lexicon) -> Result<GammaMatrix, PipelineError> {
    if file.unary_words != lex.unary.word_texts() || file.binary_words != lex.binary.word_texts() {
        return Err(PipelineError::MissingArtifact(format!(
            "{GAMMA_FILE} was built over a different vocabulary"
        )));
    }
    let decode = |rows: &[String], cols: usize| {
        BitMatrix::from_hex_rows(rows, cols).map_err(|e| {
            PipelineError::MissingArtifact(format!("{GAMMA_FILE}: {e}"))
        })
    };
    Ok(GammaMatrix {
        unary: decode(&file.unary_rows, file.unary_cols)?,
        binary: decode(&file.binary_rows, file.binary_cols)?,
        unary_columns: file.unary_columns,
        binary_columns: file.binary_columns,
    })
}

#[derive(Serialize, Deserialize)]
struct ArityHierarchyWire {
    n_words: usize,
    concepts: Vec<Vec<usize>>,
    supers: Vec<Vec<usize>>,
    dropped_words: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct HierarchyFile {
    config_hash: String,
    unary: ArityHierarchyWire,
    binary: ArityHierarchyWire,
}

fn arity_to_wire(arity: &ArityHierarchy) -> ArityHierarchyWire {
    ArityHierarchyWire {
        n_words: arity.word_concept.len(),
        concepts: arity.concepts.iter().map(|c| c.words.clone()).collect(),
        supers: arity.supers.iter().map(|s| s.concepts.clone()).collect(),
        dropped_words: arity.dropped_words.clone(),
    }
}

fn arity_from_wire(wire: ArityHierarchyWire) -> ArityHierarchy {
    ArityHierarchy::from_parts(
        wire.concepts
            .into_iter()
            .map(|words| InducedConcept { words })
            .collect(),
        wire.supers
            .into_iter()
            .map(|concepts| InducedSuper { concepts })
            .collect(),
        wire.n_words,
        wire.dropped_words,
    )
}

fn hierarchy_to_wire(h: &ConceptHierarchy, config_hash: &str) -> HierarchyFile {
    HierarchyFile {
        config_hash: config_hash.to_string(),
        unary: arity_to_wire(&h.unary),
        binary: arity_to_wire(&h.binary),
    }
}

// ---------------------------------------------------------------------------
// Loaders

pub fn load_corpus(out: &Path, lex: &Lexicon) -> Result<Corpus, PipelineError> {
    let text = read_artifact(out, CORPUS_FILE)?;
    Corpus::from_jsonl(&text, lex)
        .map_err(|e| PipelineError::MissingArtifact(format!("{CORPUS_FILE}: {e}")))
}

pub fn load_boundaries(
    out: &Path,
    lex: &Lexicon,
    config_hash: &str,
) -> Result<BoundaryMap, PipelineError> {
    let text = read_artifact(out, BOUNDARIES_FILE)?;
    let file: BoundariesFile = serde_json::from_str(&text)
        .map_err(|e| PipelineError::MissingArtifact(format!("{BOUNDARIES_FILE}: {e}")))?;
    check_hash(BOUNDARIES_FILE, &file.config_hash, config_hash)?;
    boundaries_from_wire(file, lex)
}

pub fn load_gamma(out: &Path, lex: &Lexicon, config_hash: &str) -> Result<GammaMatrix, PipelineError> {
    let text = read_artifact(out, GAMMA_FILE)?;
    let file: GammaFile = serde_json::from_str(&text)
        .map_err(|e| PipelineError::MissingArtifact(format!("{GAMMA_FILE}: {e}")))?;
    check_hash(GAMMA_FILE, &file.config_hash, config_hash)?;
    gamma_from_wire(file, lex)
}

pub fn load_hierarchy(out: &Path, config_hash: &str) -> Result<ConceptHierarchy, PipelineError> {
    let text = read_artifact(out, HIERARCHY_JSON_FILE)?;
    let file: HierarchyFile = serde_json::from_str(&text)
        .map_err(|e| PipelineError::MissingArtifact(format!("{HIERARCHY_JSON_FILE}: {e}")))?;
    check_hash(HIERARCHY_JSON_FILE, &file.config_hash, config_hash)?;
    Ok(ConceptHierarchy {
        unary: arity_from_wire(file.unary),
        binary: arity_from_wire(file.binary),
        unary_clusters: None,
        binary_clusters: None,
    })
}

/// One encoded object: its global id, scene coordinates, and active induced
/// concept per super-concept block.
pub struct EncodedObject {
    pub id: usize,
    pub record: usize,
    pub object: usize,
    pub active: Vec<usize>,
}

pub fn load_encodings(out: &Path, config_hash: &str) -> Result<Vec<EncodedObject>, PipelineError> {
    let text = read_artifact(out, ENCODINGS_FILE)?;
    let bad = |line: usize, message: String| {
        PipelineError::MissingArtifact(format!("{ENCODINGS_FILE} line {line}: {message}"))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == format!("# config {config_hash}") => {}
        Some((_, first)) => {
            let found = first.strip_prefix("# config ").unwrap_or("<none>");
            check_hash(ENCODINGS_FILE, found, config_hash)?;
        }
        None => return Err(bad(1, "empty file".into())),
    }
    let mut objects = Vec::new();
    for (idx, line) in lines {
        if line.starts_with(|c: char| !c.is_ascii_digit()) || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(bad(idx + 1, "expected at least 4 fields".into()));
        }
        let num = |f: &str| {
            f.parse::<usize>()
                .map_err(|_| bad(idx + 1, format!("bad number {f:?}")))
        };
        let active = fields[3]
            .split(';')
            .map(num)
            .collect::<Result<Vec<_>, _>>()?;
        objects.push(EncodedObject {
            id: num(fields[0])?,
            record: num(fields[1])?,
            object: num(fields[2])?,
            active,
        });
    }
    Ok(objects)
}

// ---------------------------------------------------------------------------
// CSV rendering

/// Full symmetric correlation matrix over all words: self-correlation is 2,
/// rows and columns of dropped words stay empty.
fn correlation_matrix(set: &CorrelationSet, n: usize) -> Vec<Vec<Option<f64>>> {
    let mut m = vec![vec![None; n]; n];
    for p in &set.pairs {
        m[p.a][p.b] = Some(p.theta);
        m[p.b][p.a] = Some(p.theta);
    }
    for w in 0..n {
        if !set.dropped_words.contains(&w) {
            m[w][w] = Some(2.0);
        }
    }
    m
}

fn matrix_csv(words: &[String], matrix: &[Vec<Option<f64>>], config_hash: &str) -> String {
    let mut out = format!("# config {config_hash}\nword");
    for w in words {
        let _ = write!(out, ",{w}");
    }
    out.push('\n');
    for (r, row) in matrix.iter().enumerate() {
        let _ = write!(out, "{}", words[r]);
        for cell in row {
            match cell {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Commands

fn stage<E: std::fmt::Display>(name: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage: name,
        message: e.to_string(),
    }
}

fn hierarchy_stage(e: &HierarchyError) -> &'static str {
    match e {
        HierarchyError::UndefinedCorrelation { .. } => "correlate",
        HierarchyError::Clustering(_) => "cluster",
        HierarchyError::ConceptInconsistency { .. } => "concepts",
        HierarchyError::SuperInconsistency { .. } => "super concepts",
        HierarchyError::EmptyConcept(_) | HierarchyError::Classifier(_) => "tensors",
    }
}

fn build_lexicon(cfg: &RunConfig) -> Result<Lexicon, PipelineError> {
    Lexicon::from_config(cfg).map_err(|e| PipelineError::Config(e.to_string()))
}

/// Generates the corpus and writes `corpus.jsonl` plus the manifest.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<(), PipelineError> {
    let hash = cfg.config_hash();
    let lex = build_lexicon(cfg)?;
    let corpus = crate::ontology::generate_corpus(&lex, cfg).map_err(stage("corpus"))?;
    let mut writer = ArtifactWriter::new(out, &hash)?;
    writer.write(CORPUS_FILE, &corpus.to_jsonl(&lex))?;
    writer.finish()?;
    println!(
        "generated {} scenes -> {}",
        corpus.records.len(),
        out.join(CORPUS_FILE).display()
    );
    Ok(())
}

/// Runs collect -> boundaries -> label -> code -> correlate -> cluster ->
/// concepts -> super concepts -> tensors over the stored corpus and writes
/// every induction artifact. Any stage failure aborts with the stage name.
pub fn cmd_induce(cfg: &RunConfig, out: &Path, emit_svg: bool) -> Result<(), PipelineError> {
    let hash = cfg.config_hash();
    let lex = build_lexicon(cfg)?;
    verify_manifest(out, &hash)?;
    let corpus = load_corpus(out, &lex)?;

    let sim = AttentionSim::new(&lex, cfg.noise.clone(), cfg.seed);
    let eps = cfg.generation.ambiguity_epsilon;
    let store = collect_logits(&corpus, &sim, eps).map_err(stage("collect"))?;
    let boundaries = fit_boundaries(&store, &cfg.induction);
    let classifiers = Classifiers::new(&sim, &boundaries, cfg.induction.tau);
    let labels = label_corpus(&corpus, &boundaries, &sim, eps);
    let gamma = binary_code(&corpus, &classifiers, eps);
    let (theta_unary, theta_binary) = correlation_sets(&gamma);
    let opts = crate::gmm::EmOptions {
        tolerance: cfg.induction.em_tolerance,
        max_iterations: cfg.induction.em_max_iterations,
        variance_floor: cfg.induction.variance_floor,
    };
    let hierarchy = induce_hierarchy(&gamma, &lex, &opts).map_err(|e| PipelineError::Stage {
        stage: hierarchy_stage(&e),
        message: e.to_string(),
    })?;

    // Encode every object through the induced tensors.
    let map = Arc::new(BlockMap::from_hierarchy(&hierarchy.unary));
    let tensor_stage = |message: String| PipelineError::Stage {
        stage: "tensors",
        message,
    };
    let encodings: Vec<Vec<Vec<usize>>> = corpus
        .records
        .par_iter()
        .map(|record| {
            let relations = ground_truth_relations(&record.scene, &lex, eps);
            let tensors = concept_tensors(&record.scene, &relations, &classifiers, &hierarchy)
                .map_err(|e| tensor_stage(e.to_string()))?;
            (0..record.scene.objects.len())
                .map(|o| {
                    ConceptVector::from_scores(Arc::clone(&map), tensors.unary_row(o))
                        .map(|v| v.active_concepts())
                        .map_err(|e| tensor_stage(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let mut writer = ArtifactWriter::new(out, &hash)?;
    writer.write(
        BOUNDARIES_FILE,
        &to_pretty_json(&boundaries_to_wire(&boundaries, &lex, &hash)),
    )?;
    writer.write(GAMMA_FILE, &to_pretty_json(&gamma_to_wire(&gamma, &lex, &hash)))?;
    writer.write(
        HIERARCHY_JSON_FILE,
        &to_pretty_json(&hierarchy_to_wire(&hierarchy, &hash)),
    )?;
    writer.write(
        HIERARCHY_TEXT_FILE,
        &format!("# config {hash}\n{}", render_hierarchy(&hierarchy, &lex)),
    )?;

    let unary_words = lex.unary.word_texts();
    let binary_words = lex.binary.word_texts();
    let theta_u = correlation_matrix(&theta_unary, unary_words.len());
    let theta_b = correlation_matrix(&theta_binary, binary_words.len());
    writer.write("theta_unary.csv", &matrix_csv(&unary_words, &theta_u, &hash))?;
    writer.write("theta_binary.csv", &matrix_csv(&binary_words, &theta_b, &hash))?;
    writer.write(
        "condprob_unary.csv",
        &matrix_csv(&unary_words, &conditional_probability_table(&gamma.unary), &hash),
    )?;
    writer.write(
        "condprob_binary.csv",
        &matrix_csv(&binary_words, &conditional_probability_table(&gamma.binary), &hash),
    )?;

    let mut excluded = format!("# config {hash}\n");
    for e in &boundaries.excluded {
        let _ = writeln!(
            excluded,
            "{},{},{}",
            arity_label(e.arity),
            lex.arity(e.arity).words[e.word].text,
            e.reason
        );
    }
    writer.write("excluded_words.txt", &excluded)?;

    let mut enc = format!("# config {hash}\nobject_id,record,object,blocks,words\n");
    let mut object_id = 0usize;
    for (r, scene_rows) in encodings.iter().enumerate() {
        for (o, active) in scene_rows.iter().enumerate() {
            let blocks: Vec<String> = active.iter().map(|c| c.to_string()).collect();
            let words: Vec<String> = active
                .iter()
                .map(|&c| {
                    hierarchy.unary.concepts[c]
                        .words
                        .iter()
                        .map(|&w| lex.unary.words[w].text.clone())
                        .collect::<Vec<_>>()
                        .join("|")
                })
                .collect();
            let _ = writeln!(
                enc,
                "{object_id},{r},{o},{},{}",
                blocks.join(";"),
                words.join(" ")
            );
            object_id += 1;
        }
    }
    writer.write(ENCODINGS_FILE, &enc)?;

    if emit_svg {
        writer.write(
            "theta_unary.svg",
            &svg::theta_heatmap("pairwise correlation, unary words", &unary_words, &theta_u, &hash),
        )?;
        writer.write(
            "theta_binary.svg",
            &svg::theta_heatmap("pairwise correlation, binary words", &binary_words, &theta_b, &hash),
        )?;
    }

    let mut summary = format!("# config {hash}\n");
    let _ = writeln!(
        summary,
        "stages: collect, boundaries, label, code, correlate, cluster, concepts, super concepts, tensors"
    );
    let unary_samples: usize = store.unary.iter().map(Vec::len).sum();
    let binary_samples: usize = store.binary.iter().map(Vec::len).sum();
    let _ = writeln!(summary, "logit samples: {unary_samples} unary, {binary_samples} binary");
    let _ = writeln!(
        summary,
        "labels: {} unary ({} skipped), {} binary ({} skipped)",
        labels.unary.len(),
        labels.skipped_unary,
        labels.binary.len(),
        labels.skipped_binary
    );
    let _ = writeln!(
        summary,
        "code: {} x {} unary, {} x {} binary",
        gamma.unary.rows(),
        gamma.unary.cols(),
        gamma.binary.rows(),
        gamma.binary.cols()
    );
    let _ = writeln!(summary, "excluded words: {}", boundaries.excluded.len());
    let _ = writeln!(
        summary,
        "unary: {} concepts in {} super concepts; binary: {} concepts in {} super concepts",
        hierarchy.unary.concepts.len(),
        hierarchy.unary.supers.len(),
        hierarchy.binary.concepts.len(),
        hierarchy.binary.supers.len()
    );
    let _ = writeln!(summary, "objects encoded: {object_id}");
    writer.write("induce.txt", &summary)?;
    writer.finish()?;
    println!(
        "induced {} unary / {} binary concepts -> {}",
        hierarchy.unary.concepts.len(),
        hierarchy.binary.concepts.len(),
        out.join(HIERARCHY_TEXT_FILE).display()
    );
    Ok(())
}

/// Replays question generation against the induced hierarchy and writes the
/// per-family agreement report.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<(), PipelineError> {
    let hash = cfg.config_hash();
    let lex = build_lexicon(cfg)?;
    verify_manifest(out, &hash)?;
    let corpus = load_corpus(out, &lex)?;
    let boundaries = load_boundaries(out, &lex, &hash)?;
    let hierarchy = load_hierarchy(out, &hash)?;

    let sim = AttentionSim::new(&lex, cfg.noise.clone(), cfg.seed);
    let classifiers = Classifiers::new(&sim, &boundaries, cfg.induction.tau);
    let report = evaluate_sufficiency(
        &corpus,
        &lex,
        &classifiers,
        &hierarchy,
        cfg.seed,
        cfg.questions,
        cfg.generation.ambiguity_epsilon,
        cfg.noise.sigma,
    )
    .map_err(stage("evaluate"))?;

    let mut writer = ArtifactWriter::new(out, &hash)?;
    writer.write("sufficiency.csv", &format!("# config {hash}\n{}", report.to_csv()))?;
    writer.write("sufficiency.txt", &format!("# config {hash}\n{}", report.render_text()))?;
    writer.finish()?;
    print!("{}", report.render_text());
    Ok(())
}

#[derive(Debug, Clone)]
pub enum AnalyzeCmd {
    Distance,
    Analogy { triples: Vec<String> },
    Metrics { annotations: Option<PathBuf> },
}

fn encoded_vectors(
    out: &Path,
    hash: &str,
    hierarchy: &ConceptHierarchy,
) -> Result<(Vec<EncodedObject>, Vec<ConceptVector>), PipelineError> {
    let objects = load_encodings(out, hash)?;
    let map = Arc::new(BlockMap::from_hierarchy(&hierarchy.unary));
    let vectors = objects
        .iter()
        .map(|o| {
            ConceptVector::from_active(Arc::clone(&map), &o.active).map_err(|e| {
                PipelineError::MissingArtifact(format!(
                    "{ENCODINGS_FILE} object {}: {e}",
                    o.id
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((objects, vectors))
}

fn describe_vector(v: &ConceptVector, hierarchy: &ConceptHierarchy, lex: &Lexicon) -> String {
    v.active_concepts()
        .iter()
        .map(|&c| {
            hierarchy.unary.concepts[c]
                .words
                .iter()
                .map(|&w| lex.unary.words[w].text.clone())
                .collect::<Vec<_>>()
                .join("|")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// "k0 - k_sub + k_add" with non-negative integer object ids.
fn parse_triple(text: &str) -> Result<(usize, usize, usize), PipelineError> {
    let usage = || {
        PipelineError::Config(format!(
            "analogy triple {text:?} must look like \"12 - 5 + 40\""
        ))
    };
    let (left, add) = text.split_once('+').ok_or_else(usage)?;
    let (k0, sub) = left.split_once('-').ok_or_else(usage)?;
    let parse = |f: &str| f.trim().parse::<usize>().map_err(|_| usage());
    Ok((parse(k0)?, parse(sub)?, parse(add)?))
}

pub fn cmd_analyze(cfg: &RunConfig, out: &Path, sub: &AnalyzeCmd) -> Result<(), PipelineError> {
    let hash = cfg.config_hash();
    let lex = build_lexicon(cfg)?;
    verify_manifest(out, &hash)?;
    match sub {
        AnalyzeCmd::Distance => {
            let hierarchy = load_hierarchy(out, &hash)?;
            let (objects, vectors) = encoded_vectors(out, &hash, &hierarchy)?;
            let mut csv = format!("# config {hash}\nrecord,object_a,object_b,zeta\n");
            let mut start = 0;
            while start < objects.len() {
                let record = objects[start].record;
                let mut end = start;
                while end < objects.len() && objects[end].record == record {
                    end += 1;
                }
                for a in start..end {
                    for b in a..end {
                        let zeta = semantic_distance(&vectors[a], &vectors[b])
                            .map_err(stage("distance"))?;
                        let _ = writeln!(
                            csv,
                            "{record},{},{},{zeta}",
                            objects[a].id, objects[b].id
                        );
                    }
                }
                start = end;
            }
            let mut writer = ArtifactWriter::new(out, &hash)?;
            writer.write("distances.csv", &csv)?;
            writer.finish()?;
            println!(
                "wrote within-scene distances for {} objects -> {}",
                objects.len(),
                out.join("distances.csv").display()
            );
        }
        AnalyzeCmd::Analogy { triples } => {
            let hierarchy = load_hierarchy(out, &hash)?;
            let (objects, vectors) = encoded_vectors(out, &hash, &hierarchy)?;
            let mut csv = format!("# config {hash}\nk0,k_sub,k_add,retrieved,zeta,encoding\n");
            for text in triples {
                let (k0, sub_id, add_id) = parse_triple(text)?;
                for id in [k0, sub_id, add_id] {
                    if id >= vectors.len() {
                        return Err(PipelineError::BadReference(format!(
                            "object id {id} out of range (have {} objects)",
                            vectors.len()
                        )));
                    }
                }
                let idx = analogy_retrieve(&vectors, &vectors[k0], &vectors[sub_id], &vectors[add_id])
                    .map_err(stage("analogy"))?;
                let target = analysis::concept_plus(
                    &analysis::concept_minus(&vectors[k0], &vectors[sub_id])
                        .map_err(stage("analogy"))?,
                    &vectors[add_id],
                )
                .map_err(stage("analogy"))?;
                let zeta = semantic_distance(&vectors[idx], &target).map_err(stage("analogy"))?;
                let encoding = describe_vector(&vectors[idx], &hierarchy, &lex);
                let _ = writeln!(csv, "{k0},{sub_id},{add_id},{},{zeta},{}", objects[idx].id, encoding);
                println!("{text} -> object {} ({encoding}), zeta {zeta}", objects[idx].id);
            }
            let mut writer = ArtifactWriter::new(out, &hash)?;
            writer.write("analogy.csv", &csv)?;
            writer.finish()?;
        }
        AnalyzeCmd::Metrics { annotations } => {
            let gamma = load_gamma(out, &lex, &hash)?;
            let table = ScoreTable::from_conditional(lex.unary.word_texts(), &gamma.unary);
            let mut writer = ArtifactWriter::new(out, &hash)?;
            let records: Vec<AnnotationRecord> = match annotations {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|source| {
                        PipelineError::MissingArtifact(format!("{}: {source}", path.display()))
                    })?;
                    parse_annotations(&text).map_err(|e| PipelineError::Config(e.to_string()))?
                }
                None => {
                    let records = synthetic_annotations(&lex.unary);
                    writer.write(
                        "annotations_synthetic.txt",
                        &format!("# config {hash}\n{}", analysis::render_annotations(&records)),
                    )?;
                    records
                }
            };
            let classify = |e: AnalysisError| match e {
                AnalysisError::MissingScore { .. } => PipelineError::BadReference(e.to_string()),
                _ => PipelineError::Config(e.to_string()),
            };
            let acc = classification_accuracy(&records, &table, 0.5).map_err(classify)?;
            let rank = ranking_distance(&records, &table).map_err(classify)?;
            let mut csv = format!(
                "# config {hash}\nthreshold,a_pos,a_neg,a,mean_kendall_distance,tied_pairs,records\n"
            );
            let _ = writeln!(
                csv,
                "0.5,{},{},{},{},{},{}",
                acc.positive, acc.negative, acc.combined, rank.mean_distance, rank.tied_pairs, rank.records
            );
            writer.write("metrics.csv", &csv)?;
            writer.finish()?;
            println!(
                "classification {:.4}/{:.4}/{:.4}, ranking distance {:.4} over {} records",
                acc.positive, acc.negative, acc.combined, rank.mean_distance, rank.records
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::builtin_default();
        cfg.scenes = 60;
        cfg.seed = 9;
        cfg.noise.sigma = 0.0;
        cfg.questions = 120;
        cfg
    }

    fn read(out: &Path, name: &str) -> String {
        fs::read_to_string(out.join(name)).unwrap()
    }

    #[test]
    fn generate_then_induce_writes_consistent_artifacts() {
        let dir = TempDir::new().unwrap();
        let cfg = small_config();
        let out = dir.path();
        cmd_generate(&cfg, out).unwrap();
        cmd_induce(&cfg, out, true).unwrap();

        let hash = cfg.config_hash();
        let manifest: Manifest =
            serde_json::from_str(&read(out, MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.config_hash, hash);
        for name in [
            CORPUS_FILE,
            BOUNDARIES_FILE,
            GAMMA_FILE,
            HIERARCHY_JSON_FILE,
            HIERARCHY_TEXT_FILE,
            "theta_unary.csv",
            "theta_binary.csv",
            "condprob_unary.csv",
            "condprob_binary.csv",
            "excluded_words.txt",
            ENCODINGS_FILE,
            "induce.txt",
            "theta_unary.svg",
            "theta_binary.svg",
        ] {
            let digest = manifest.files.get(name).unwrap_or_else(|| panic!("{name} in manifest"));
            assert_eq!(digest, &sha256_hex(read(out, name).as_bytes()), "{name}");
        }

        let lex = Lexicon::from_config(&cfg).unwrap();
        let body: String = read(out, HIERARCHY_TEXT_FILE)
            .lines()
            .skip(1)
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(body, crate::ontology::render_ground_truth_hierarchy(&lex));
    }

    #[test]
    fn theta_csv_is_symmetric_and_hash_stamped() {
        let dir = TempDir::new().unwrap();
        let cfg = small_config();
        cmd_generate(&cfg, dir.path()).unwrap();
        cmd_induce(&cfg, dir.path(), false).unwrap();
        let text = read(dir.path(), "theta_unary.csv");
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# config {}", cfg.config_hash()));
        let header = lines.next().unwrap();
        let words: Vec<&str> = header.split(',').skip(1).collect();
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), words.len());
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row[0], words[r]);
            assert_eq!(row.len(), words.len() + 1);
            for c in 0..words.len() {
                assert_eq!(row[c + 1], rows[c][r + 1], "theta[{r}][{c}]");
            }
            assert_eq!(row[r + 1], "2");
        }
    }

    #[test]
    fn loaders_round_trip_the_induction_artifacts() {
        let dir = TempDir::new().unwrap();
        let cfg = small_config();
        let out = dir.path();
        cmd_generate(&cfg, out).unwrap();
        cmd_induce(&cfg, out, false).unwrap();

        let hash = cfg.config_hash();
        let lex = Lexicon::from_config(&cfg).unwrap();
        let corpus = load_corpus(out, &lex).unwrap();
        assert!(corpus.records.len() >= cfg.scenes, "top-up scenes only add");

        let boundaries = load_boundaries(out, &lex, &hash).unwrap();
        assert_eq!(boundaries.unary.len(), lex.unary.words.len());
        assert!(boundaries.excluded.is_empty());

        let gamma = load_gamma(out, &lex, &hash).unwrap();
        assert_eq!(gamma.unary.rows(), lex.unary.words.len());

        let hierarchy = load_hierarchy(out, &hash).unwrap();
        assert_eq!(hierarchy.unary.concepts.len(), 15);
        assert_eq!(hierarchy.binary.supers.len(), 2);

        let objects = load_encodings(out, &hash).unwrap();
        let total: usize = corpus.records.iter().map(|r| r.scene.objects.len()).sum();
        assert_eq!(objects.len(), total);
        assert!(objects.iter().enumerate().all(|(i, o)| o.id == i));
    }

    #[test]
    fn missing_and_mismatched_artifacts_fail_with_exit_3() {
        let dir = TempDir::new().unwrap();
        let cfg = small_config();
        let out = dir.path();
        let err = cmd_induce(&cfg, out, false).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");

        cmd_generate(&cfg, out).unwrap();
        let mut other = cfg.clone();
        other.seed = 10;
        let err = cmd_induce(&other, out, false).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        assert!(err.to_string().contains("produced by config"));

        cmd_induce(&cfg, out, false).unwrap();
        let err = cmd_analyze(&other, out, &AnalyzeCmd::Distance).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn evaluate_and_analyze_emit_reports() {
        let dir = TempDir::new().unwrap();
        let cfg = small_config();
        let out = dir.path();
        cmd_generate(&cfg, out).unwrap();
        cmd_induce(&cfg, out, false).unwrap();
        cmd_evaluate(&cfg, out).unwrap();

        let csv = read(out, "sufficiency.csv");
        assert!(csv.starts_with(&format!("# config {}", cfg.config_hash())));
        assert!(csv.contains("query_attr"));
        let overall = csv.lines().last().unwrap();
        assert!(overall.starts_with("overall,120,120,1.000000"), "{overall}");

        cmd_analyze(&cfg, out, &AnalyzeCmd::Distance).unwrap();
        let distances = read(out, "distances.csv");
        for line in distances.lines().skip(2).take(50) {
            let f: Vec<&str> = line.split(',').collect();
            if f[1] == f[2] {
                assert_eq!(f[3], "0");
            }
        }

        cmd_analyze(&cfg, out, &AnalyzeCmd::Metrics { annotations: None }).unwrap();
        let metrics = read(out, "metrics.csv");
        let row = metrics.lines().nth(2).unwrap();
        assert!(row.starts_with("0.5,1,1,1,0,"), "{row}");

        // Subtracting k0 from itself blanks every block, so the edit target
        // is exactly k_add; the retrieved object must share its encoding.
        let triple = "0 - 0 + 1".to_string();
        cmd_analyze(&cfg, out, &AnalyzeCmd::Analogy { triples: vec![triple] }).unwrap();
        let analogy = read(out, "analogy.csv");
        let row: Vec<&str> = analogy.lines().nth(2).unwrap().split(',').collect();
        let encodings = read(out, ENCODINGS_FILE);
        let object_1: Vec<&str> = encodings
            .lines()
            .find(|l| l.starts_with("1,"))
            .unwrap()
            .split(',')
            .collect();
        assert_eq!(row[4], "0");
        assert_eq!(row[5], object_1[4], "retrieved encoding matches k_add");
    }

    #[test]
    fn unknown_object_ids_exit_4_and_bad_triples_exit_2() {
        let dir = TempDir::new().unwrap();
        let cfg = small_config();
        let out = dir.path();
        cmd_generate(&cfg, out).unwrap();
        cmd_induce(&cfg, out, false).unwrap();

        let bad_id = AnalyzeCmd::Analogy {
            triples: vec!["999999 - 0 + 1".into()],
        };
        let err = cmd_analyze(&cfg, out, &bad_id).unwrap_err();
        assert_eq!(err.exit_code(), 4, "{err}");

        let malformed = AnalyzeCmd::Analogy {
            triples: vec!["1 * 2".into()],
        };
        let err = cmd_analyze(&cfg, out, &malformed).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = small_config();
        let run = |dir: &Path| {
            cmd_generate(&cfg, dir).unwrap();
            cmd_induce(&cfg, dir, true).unwrap();
            cmd_evaluate(&cfg, dir).unwrap();
            cmd_analyze(&cfg, dir, &AnalyzeCmd::Distance).unwrap();
            cmd_analyze(&cfg, dir, &AnalyzeCmd::Metrics { annotations: None }).unwrap();
        };
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        run(a.path());
        run(b.path());
        let mut names: Vec<String> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(names.len() >= 15, "{names:?}");
        for name in names {
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn annotation_files_override_the_synthetic_records() {
        let dir = TempDir::new().unwrap();
        let cfg = small_config();
        let out = dir.path();
        cmd_generate(&cfg, out).unwrap();
        cmd_induce(&cfg, out, false).unwrap();

        // Deliberately inverted annotation: exclusives listed as positives
        // and co-description certainties as negatives. At sigma 0 the cube
        // row scores are [0, 0, 1, 1], so every classification misses and
        // 4 of 6 candidate pairs rank discordantly.
        let path = out.join("custom_annotations.txt");
        fs::write(&path, "cube,sphere,cylinder,block,cube,0,1,2,3\n").unwrap();
        cmd_analyze(
            &cfg,
            out,
            &AnalyzeCmd::Metrics {
                annotations: Some(path.clone()),
            },
        )
        .unwrap();
        let metrics = read(out, "metrics.csv");
        let row = metrics.lines().nth(2).unwrap();
        assert_eq!(row, format!("0.5,0,0,0,{},2,1", 4.0 / 6.0));

        fs::write(&path, "cube,block\n").unwrap();
        let err = cmd_analyze(
            &cfg,
            out,
            &AnalyzeCmd::Metrics {
                annotations: Some(path),
            },
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
}
