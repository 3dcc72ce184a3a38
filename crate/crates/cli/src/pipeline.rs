//! End-to-end dataset build: curate, extract, draft, sample, emit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use guidex_core::canon::{self, Obj};
use guidex_core::corpus::{self, Chunk, CorpusError, DEFAULT_MAX_CHUNKS, DEFAULT_SOFT_LIMIT};
use guidex_core::extraction::{
    draft_tree, extract_recommendations, verbalize_rationale, DraftError, DraftTarget, ExtractionBackend,
    RationaleSubject, StageError,
};
use guidex_core::qa_counterfactual::{generate_counterfactual_set, CfConfig, CounterfactualInstance};
use guidex_core::qa_factual::{generate_factual_set, FactualConfig, FactualInstance, SampleError, DEFAULT_NO_ACTION_CAP};
use guidex_core::{serialize_tree, DecisionTree, Source, TreeMetadata};
use serde_json::Value as Json;
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FACTUAL_FILE: &str = "factual.jsonl";
pub const COUNTERFACTUAL_FILE: &str = "counterfactual.jsonl";
pub const TREES_DIR: &str = "trees";
pub const MANIFEST_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub soft_limit: usize,
    pub max_chunks: usize,
    pub per_path: usize,
    pub no_action_cap: f64,
    pub hidden_count: usize,
    pub identifiable_only: bool,
    pub cf_per_tree: usize,
    pub draws_per_source: usize,
    pub verbalize: bool,
    /// Record a wall-clock `generated_at` in the manifest.
    pub timestamp: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cf = CfConfig::default();
        PipelineConfig {
            seed: 0,
            soft_limit: DEFAULT_SOFT_LIMIT,
            max_chunks: DEFAULT_MAX_CHUNKS,
            per_path: 1,
            no_action_cap: DEFAULT_NO_ACTION_CAP,
            hidden_count: cf.hidden_count,
            identifiable_only: cf.identifiable_only,
            cf_per_tree: cf.per_tree,
            draws_per_source: cf.draws_per_source,
            verbalize: false,
            timestamp: true,
        }
    }
}

impl PipelineConfig {
    pub fn factual(&self) -> FactualConfig {
        FactualConfig {
            seed: self.seed,
            per_path: self.per_path,
            no_action_cap: self.no_action_cap,
        }
    }

    pub fn counterfactual(&self) -> CfConfig {
        CfConfig {
            seed: self.seed,
            hidden_count: self.hidden_count,
            identifiable_only: self.identifiable_only,
            per_tree: self.cf_per_tree,
            draws_per_source: self.draws_per_source,
            no_action_cap: self.no_action_cap,
        }
    }

    pub fn to_json(&self) -> Json {
        Obj::new()
            .field("soft_limit", self.soft_limit as u64)
            .field("max_chunks", self.max_chunks as u64)
            .field("per_path", self.per_path as u64)
            .field("no_action_cap", canon::number(self.no_action_cap))
            .field("hidden_count", self.hidden_count as u64)
            .field("identifiable_only", self.identifiable_only)
            .field("cf_per_tree", self.cf_per_tree as u64)
            .field("draws_per_source", self.draws_per_source as u64)
            .field("verbalize", self.verbalize)
            .field("prompt_version", guidex_core::extraction::prompts::VERSION)
            .build()
    }
}

/// Per-stage counts; each stage discards what fails its checks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageCounts {
    pub documents: usize,
    pub deduplicated: usize,
    pub chunks: usize,
    /// Elements returned by the extractor before filtering.
    pub candidates: usize,
    /// Actionable, within-chunk unique recommendations.
    pub validated_recommendations: usize,
    pub validated_trees: usize,
    pub discarded_drafts: usize,
    pub factual_instances: usize,
    pub factual_balance_infeasible_trees: usize,
    pub counterfactual_candidates: usize,
    pub retained_counterfactuals: usize,
    pub discarded_unchanged: usize,
    pub discarded_unidentifiable: usize,
    pub discarded_off_grid: usize,
    pub partition_rejected: usize,
    pub removed_by_balance: usize,
    pub counterfactual_instances: usize,
    pub counterfactual_balance_infeasible_trees: usize,
}

impl StageCounts {
    pub fn to_json(&self) -> Json {
        let fields: [(&str, usize); 18] = [
            ("documents", self.documents),
            ("deduplicated", self.deduplicated),
            ("chunks", self.chunks),
            ("candidates", self.candidates),
            ("validated_recommendations", self.validated_recommendations),
            ("validated_trees", self.validated_trees),
            ("discarded_drafts", self.discarded_drafts),
            ("factual_instances", self.factual_instances),
            ("factual_balance_infeasible_trees", self.factual_balance_infeasible_trees),
            ("counterfactual_candidates", self.counterfactual_candidates),
            ("retained_counterfactuals", self.retained_counterfactuals),
            ("discarded_unchanged", self.discarded_unchanged),
            ("discarded_unidentifiable", self.discarded_unidentifiable),
            ("discarded_off_grid", self.discarded_off_grid),
            ("partition_rejected", self.partition_rejected),
            ("removed_by_balance", self.removed_by_balance),
            ("counterfactual_instances", self.counterfactual_instances),
            (
                "counterfactual_balance_infeasible_trees",
                self.counterfactual_balance_infeasible_trees,
            ),
        ];
        fields
            .into_iter()
            .fold(Obj::new(), |o, (k, v)| o.field(k, v as u64))
            .build()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discard {
    pub candidate: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub config: Json,
    pub counts: StageCounts,
    pub discarded: Vec<Discard>,
    /// sha256 of each emitted file, keyed by path relative to the output dir.
    pub digests: BTreeMap<String, String>,
    pub generated_at: Option<String>,
}

impl Manifest {
    pub fn to_json(&self) -> Json {
        let discarded: Vec<Json> = self
            .discarded
            .iter()
            .map(|d| {
                Obj::new()
                    .field("candidate", d.candidate.clone())
                    .field("reason", d.reason.clone())
                    .build()
            })
            .collect();
        let digests = self
            .digests
            .iter()
            .fold(Obj::new(), |o, (k, v)| o.field(k, v.clone()))
            .build();
        let mut o = Obj::new()
            .field("schema_version", MANIFEST_SCHEMA_VERSION)
            .field("seed", self.seed)
            .field("config", self.config.clone())
            .field("counts", self.counts.to_json())
            .field("discarded", discarded)
            .field("digests", digests);
        if let Some(t) = &self.generated_at {
            o = o.field("generated_at", t.clone());
        }
        o.build()
    }

    /// Canonical text without the timestamp; stable across identical runs.
    pub fn stable_text(&self) -> String {
        let mut m = self.clone();
        m.generated_at = None;
        canon::to_string(&m.to_json())
    }
}

/// Drops `generated_at` from a manifest document.
pub fn strip_timestamp(manifest: &Json) -> Json {
    let mut m = manifest.clone();
    if let Some(obj) = m.as_object_mut() {
        obj.shift_remove("generated_at");
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Input,
    Backend,
    Io,
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: FailureKind,
    pub message: String,
    pub partial: Box<Manifest>,
}

pub struct Outputs {
    pub manifest: Manifest,
    pub trees: Vec<DecisionTree>,
    pub factual: Vec<FactualInstance>,
    pub counterfactual: Vec<CounterfactualInstance>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    manifest: Manifest,
}

impl Run<'_> {
    fn fail(&self, stage: &'static str, kind: FailureKind, message: impl ToString) -> PipelineError {
        PipelineError {
            stage,
            kind,
            message: message.to_string(),
            partial: Box::new(self.manifest.clone()),
        }
    }
}

fn stage_error(e: &StageError) -> FailureKind {
    match e {
        StageError::Backend(_) | StageError::Unparseable(_) | StageError::EmptyReply => FailureKind::Backend,
    }
}

fn tree_metadata(meta: &corpus::GuidelineMeta) -> TreeMetadata {
    TreeMetadata {
        disease_or_drug: meta.disease_or_drug.clone(),
        age_group: meta.age_group.clone(),
        race: meta.race.clone(),
        gender: meta.gender.clone(),
        publication_date: meta.publication_date,
    }
}

/// Runs every stage in memory; nothing is written.
pub fn build(corpus_dir: &Path, backend: &dyn ExtractionBackend, cfg: &PipelineConfig) -> Result<Outputs, PipelineError> {
    let mut run = Run {
        cfg,
        manifest: Manifest {
            seed: cfg.seed,
            config: cfg.to_json(),
            ..Default::default()
        },
    };
    let docs = corpus::load_corpus(corpus_dir).map_err(|e: CorpusError| run.fail("curate", FailureKind::Input, e))?;
    let (survivors, chunks, summary) = corpus::curate(&docs, cfg.soft_limit, cfg.max_chunks);
    run.manifest.counts.documents = summary.documents;
    run.manifest.counts.deduplicated = summary.deduplicated;
    run.manifest.counts.chunks = summary.chunks;
    log::info!("curated {} documents into {} chunks", summary.deduplicated, summary.chunks);

    let meta_of = |chunk: &Chunk| {
        let gid = chunk.chunk_id.rsplit_once('#').map_or(chunk.chunk_id.as_str(), |(g, _)| g);
        survivors.iter().find(|d| d.meta.guideline_id == gid).map(|d| &d.meta).expect("chunk of a survivor")
    };

    let mut trees = Vec::new();
    for chunk in &chunks {
        let extraction =
            extract_recommendations(chunk, backend).map_err(|e| run.fail("extract", stage_error(&e), e))?;
        run.manifest.counts.candidates += extraction.raw_count;
        run.manifest.counts.validated_recommendations += extraction.candidates.len();
        let meta = meta_of(chunk);
        for (j, candidate) in extraction.candidates.iter().enumerate() {
            let k = chunk.chunk_id.rsplit_once('#').map_or("0", |(_, k)| k);
            let target = DraftTarget {
                tree_id: format!("{}-c{k}-r{j}", meta.guideline_id),
                source: Source {
                    guideline_id: meta.guideline_id.clone(),
                    chunk_id: chunk.chunk_id.clone(),
                },
                metadata: tree_metadata(meta),
            };
            match draft_tree(candidate, &target, backend) {
                Ok(tree) => trees.push(tree),
                Err(DraftError::Discarded { reason }) => {
                    log::warn!("discarding {}: {reason}", target.tree_id);
                    run.manifest.discarded.push(Discard {
                        candidate: target.tree_id,
                        reason,
                    });
                }
                Err(DraftError::Backend(e)) => return Err(run.fail("draft", FailureKind::Backend, e)),
            }
        }
    }
    run.manifest.counts.validated_trees = trees.len();
    run.manifest.counts.discarded_drafts = run.manifest.discarded.len();

    let mut factual = Vec::new();
    let mut counterfactual = Vec::new();
    for tree in &trees {
        let set = match generate_factual_set(tree, &cfg.factual()) {
            Ok(s) => s,
            Err(SampleError::NoSatisfiablePath(_)) => continue,
            Err(e) => return Err(run.fail("sample-factual", FailureKind::Input, e)),
        };
        run.manifest.counts.factual_balance_infeasible_trees += set.balance_infeasible as usize;
        let cf = generate_counterfactual_set(tree, &set.instances, &cfg.counterfactual())
            .map_err(|e| run.fail("sample-cf", FailureKind::Input, e))?;
        let c = &mut run.manifest.counts;
        c.factual_instances += set.instances.len();
        c.counterfactual_candidates += cf.stats.candidates;
        c.retained_counterfactuals += cf.stats.changed;
        c.discarded_unchanged += cf.stats.discarded_unchanged;
        c.discarded_unidentifiable += cf.stats.discarded_unidentifiable;
        c.discarded_off_grid += cf.stats.discarded_off_grid;
        c.partition_rejected += cf.stats.partition_rejected;
        c.removed_by_balance += cf.stats.removed_by_balance;
        c.counterfactual_instances += cf.instances.len();
        c.counterfactual_balance_infeasible_trees += cf.stats.balance_infeasible as usize;
        let mut fs_ = set.instances;
        let mut cs = cf.instances;
        if cfg.verbalize {
            for f in &mut fs_ {
                f.rationale_text = Some(
                    verbalize_rationale(RationaleSubject::Factual(f), tree, backend)
                        .map_err(|e| run.fail("verbalize", stage_error(&e), e))?,
                );
            }
            for c in &mut cs {
                c.rationale_text = Some(
                    verbalize_rationale(RationaleSubject::Counterfactual(c), tree, backend)
                        .map_err(|e| run.fail("verbalize", stage_error(&e), e))?,
                );
            }
        }
        factual.extend(fs_);
        counterfactual.extend(cs);
    }
    if run.cfg.timestamp {
        run.manifest.generated_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    }
    Ok(Outputs {
        manifest: run.manifest,
        trees,
        factual,
        counterfactual,
    })
}

fn jsonl(lines: impl Iterator<Item = String>) -> String {
    lines.map(|l| l + "\n").collect()
}

/// Writes datasets, trees and the manifest; fills in digests. With no trees
/// only the manifest is written.
pub fn emit(out_dir: &Path, outputs: &mut Outputs) -> Result<(), std::io::Error> {
    fs::create_dir_all(out_dir)?;
    let mut files: Vec<(String, String)> = Vec::new();
    if !outputs.trees.is_empty() {
        files.push((FACTUAL_FILE.into(), jsonl(outputs.factual.iter().map(|f| f.to_canonical()))));
        files.push((
            COUNTERFACTUAL_FILE.into(),
            jsonl(outputs.counterfactual.iter().map(|c| c.to_canonical())),
        ));
        fs::create_dir_all(out_dir.join(TREES_DIR))?;
        for t in &outputs.trees {
            files.push((format!("{TREES_DIR}/{}.json", t.id()), serialize_tree(t)));
        }
    }
    outputs.manifest.digests.clear();
    for (rel, text) in &files {
        fs::write(out_dir.join(rel), text)?;
        outputs.manifest.digests.insert(rel.clone(), canon::sha256_hex(text.as_bytes()));
    }
    fs::write(out_dir.join(MANIFEST_FILE), canon::to_string(&outputs.manifest.to_json()) + "\n")
}

pub fn run_pipeline(
    corpus_dir: &Path,
    out_dir: &Path,
    backend: &dyn ExtractionBackend,
    cfg: &PipelineConfig,
) -> Result<Manifest, PipelineError> {
    let mut outputs = build(corpus_dir, backend, cfg)?;
    emit(out_dir, &mut outputs).map_err(|e| PipelineError {
        stage: "emit",
        kind: FailureKind::Io,
        message: e.to_string(),
        partial: Box::new(outputs.manifest.clone()),
    })?;
    Ok(outputs.manifest)
}

/// Directory holding the bundled fixture corpus, LLM replies and golden files.
pub fn bundled_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Configuration of the bundled fixture run.
pub fn fixture_run_config() -> PipelineConfig {
    PipelineConfig {
        seed: 7,
        soft_limit: 120,
        per_path: 2,
        identifiable_only: true,
        timestamp: false,
        ..PipelineConfig::default()
    }
}
