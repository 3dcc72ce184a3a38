use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use guidex_cli::pipeline::{self, FailureKind, PipelineConfig};
use guidex_cli::service::{serve_http, serve_stdio, Service};
use guidex_core::canon::{self, Obj};
use guidex_core::corpus::{self, DEFAULT_MAX_CHUNKS, DEFAULT_SOFT_LIMIT};
use guidex_core::extraction::{
    draft_tree, extract_recommendations, DraftError, DraftTarget, ExtractionBackend, FixtureBackend, HttpChatBackend,
    HttpConfig, RecordingBackend,
};
use guidex_core::qa_counterfactual::{generate_counterfactual_set, CfConfig};
use guidex_core::qa_factual::{generate_factual_set, FactualConfig, DEFAULT_NO_ACTION_CAP};
use guidex_core::records::path_to_json;
use guidex_core::verifier::{InstanceStore, RewardMode};
use guidex_core::{
    enumerate_paths, execute, parse_tree, partial_execute, serialize_tree, validate_tree, Assignment, DecisionTree,
    ResidualResult, Value, VarKind,
};
use serde_json::Value as Json;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(name = "guidex", version, about = "Executable guideline decision trees, QA synthesis and rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SamplingArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    per_path: usize,
    #[arg(long, default_value_t = DEFAULT_NO_ACTION_CAP)]
    no_action_cap: f64,
}

#[derive(Args, Clone)]
struct CfArgs {
    #[arg(long, default_value_t = 1)]
    hidden_count: usize,
    /// Keep only instances with a singleton abduction class.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    identifiable_only: bool,
    #[arg(long, default_value_t = 100)]
    per_tree: usize,
    #[arg(long, default_value_t = 1)]
    draws_per_source: usize,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Replay LLM replies from `<dir>/<sha256>.txt`.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Record live replies into this directory.
    #[arg(long, conflicts_with = "fixtures")]
    record: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct StoreArgs {
    /// Directory of tree documents.
    #[arg(long)]
    trees: PathBuf,
    #[arg(long)]
    factual: Option<PathBuf>,
    #[arg(long)]
    counterfactual: Option<PathBuf>,
    /// Credit any member of the abduction class.
    #[arg(long)]
    credit_equivalence_class: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a tree document.
    Validate { tree: PathBuf },
    /// List root-to-leaf paths with their constraints.
    Paths { tree: PathBuf },
    /// Execute a tree on an assignment.
    Exec {
        tree: PathBuf,
        /// Variable values as name=value.
        #[arg(long = "assign", num_args = 1.., value_name = "NAME=VALUE")]
        assign: Vec<String>,
    },
    /// Sample factual instances covering every satisfiable path.
    SampleFactual {
        tree: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Sample counterfactual instances from a factual pool.
    SampleCf {
        tree: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[command(flatten)]
        cf: CfArgs,
        /// Omit gold hidden values, abduction class and counterfactual label.
        #[arg(long)]
        redact_gold: bool,
    },
    /// Cross-check datasets against trees; optionally score responses.
    Verify {
        #[command(flatten)]
        store: StoreArgs,
        /// JSONL of reward requests to score.
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Serve rewards over stdio or HTTP.
    Serve {
        #[command(flatten)]
        store: StoreArgs,
        /// Listen address for HTTP, e.g. 127.0.0.1:8080. Without it, stdio is used.
        #[arg(long)]
        http: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Deduplicate and chunk a corpus directory.
    Curate {
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SOFT_LIMIT)]
        soft_limit: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_CHUNKS)]
        max_chunks: usize,
    },
    /// Extract recommendations and draft trees.
    Extract {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SOFT_LIMIT)]
        soft_limit: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_CHUNKS)]
        max_chunks: usize,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Summarize an output directory.
    Stats { dir: PathBuf },
    /// Run the full pipeline.
    Run {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[command(flatten)]
        cf: CfArgs,
        #[arg(long, default_value_t = DEFAULT_SOFT_LIMIT)]
        soft_limit: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_CHUNKS)]
        max_chunks: usize,
        /// Ask the backend for rationale text for every instance.
        #[arg(long)]
        verbalize: bool,
        /// Leave `generated_at` out of the manifest.
        #[arg(long)]
        no_timestamp: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl ToString) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_tree(path: &Path) -> Result<DecisionTree, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    parse_tree(&text).map_err(|e| fail(EXIT_VALIDATION, format!("{}: {e}", path.display())))
}

fn print_line(json: &Json) {
    println!("{}", canon::to_string(json));
}

fn make_backend(args: &BackendArgs) -> Result<Box<dyn ExtractionBackend>, Failure> {
    if let Some(dir) = &args.fixtures {
        return Ok(Box::new(FixtureBackend::new(dir)));
    }
    let cfg = HttpConfig::from_env().map_err(|e| fail(EXIT_BACKEND, e))?;
    let http = HttpChatBackend::new(cfg);
    match &args.record {
        Some(dir) => Ok(Box::new(RecordingBackend::new(http, dir).map_err(|e| fail(EXIT_BACKEND, e))?)),
        None => Ok(Box::new(http)),
    }
}

fn parse_value(tree: &DecisionTree, name: &str, raw: &str) -> Result<Value, Failure> {
    let spec = tree
        .variable(name)
        .ok_or_else(|| fail(EXIT_USAGE, format!("unknown variable {name:?}")))?;
    let bad = || fail(EXIT_USAGE, format!("cannot read {raw:?} as a {} value for {name}", spec.kind_name()));
    let value = match spec.kind() {
        VarKind::Boolean => Value::Bool(raw.parse().map_err(|_| bad())?),
        VarKind::Categorical { .. } => Value::cat(raw),
        VarKind::Numeric { .. } => Value::num(raw.parse::<f64>().map_err(|_| bad())?),
    };
    spec.check_value(&value).map_err(|e| fail(EXIT_VALIDATION, e))?;
    Ok(value)
}

fn load_store(args: &StoreArgs) -> Result<InstanceStore, Failure> {
    let datasets: Vec<&Path> = [&args.factual, &args.counterfactual]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    InstanceStore::load(&args.trees, &datasets).map_err(|e| fail(EXIT_VALIDATION, e))
}

fn mode(args: &StoreArgs) -> RewardMode {
    if args.credit_equivalence_class {
        RewardMode::Equivalence
    } else {
        RewardMode::Strict
    }
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Validate { tree } => {
            let tree = load_tree(&tree)?;
            let report = validate_tree(&tree);
            print_line(&report.to_json());
            if report.ok {
                Ok(())
            } else {
                Err(fail(EXIT_VALIDATION, format!("{} failed validation", tree.id())))
            }
        }
        Command::Paths { tree } => {
            let tree = load_tree(&tree)?;
            for p in enumerate_paths(&tree) {
                let steps: Vec<String> = p
                    .steps
                    .iter()
                    .map(|s| format!("{}:{}", s.predicate, if s.taken { "T" } else { "F" }))
                    .collect();
                print_line(
                    &Obj::new()
                        .field("path_id", p.path_id as u64)
                        .field("locator", p.locator.clone())
                        .field("output", tree.outputs()[p.leaf_output_index].clone())
                        .field("steps", steps)
                        .field("constraints", p.constraints.to_string())
                        .field("satisfiable", p.is_satisfiable())
                        .field("grid_satisfiable", p.constraints.grid_satisfiable(&tree))
                        .build(),
                );
            }
            Ok(())
        }
        Command::Exec { tree, assign } => {
            let tree = load_tree(&tree)?;
            let mut x = Assignment::new();
            for pair in &assign {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| fail(EXIT_USAGE, format!("expected NAME=VALUE, got {pair:?}")))?;
                x.insert(k.trim(), parse_value(&tree, k.trim(), v.trim())?);
            }
            let out = if tree.missing_variables(&x).is_empty() {
                let r = execute(&tree, &x).map_err(|e| fail(EXIT_VALIDATION, e))?;
                Obj::new()
                    .field("output", r.output_label)
                    .field("output_index", r.output_index as u64)
                    .field("path", path_to_json(&r.path))
                    .build()
            } else {
                match partial_execute(&tree, &x).map_err(|e| fail(EXIT_VALIDATION, e))? {
                    ResidualResult::Decided(r) => Obj::new()
                        .field("output", r.output_label)
                        .field("output_index", r.output_index as u64)
                        .field("path", path_to_json(&r.path))
                        .build(),
                    ResidualResult::Undecided { reachable, blocking } => Obj::new()
                        .field("output", Json::Null)
                        .field(
                            "reachable",
                            reachable.iter().map(|i| tree.outputs()[*i].clone()).collect::<Vec<_>>(),
                        )
                        .field("blocking", blocking.into_iter().collect::<Vec<_>>())
                        .build(),
                }
            };
            print_line(&out);
            Ok(())
        }
        Command::SampleFactual { tree, sampling } => {
            let tree = load_tree(&tree)?;
            let set = generate_factual_set(&tree, &factual_cfg(&sampling)).map_err(|e| fail(EXIT_VALIDATION, e))?;
            if set.balance_infeasible {
                log::warn!("no-action cap not reachable without losing path coverage");
            }
            for f in &set.instances {
                println!("{}", f.to_canonical());
            }
            Ok(())
        }
        Command::SampleCf {
            tree,
            sampling,
            cf,
            redact_gold,
        } => {
            let tree = load_tree(&tree)?;
            let pool = generate_factual_set(&tree, &factual_cfg(&sampling)).map_err(|e| fail(EXIT_VALIDATION, e))?;
            let out = generate_counterfactual_set(&tree, &pool.instances, &cf_cfg(&sampling, &cf))
                .map_err(|e| fail(EXIT_VALIDATION, e))?;
            for c in &out.instances {
                if redact_gold {
                    print_line(&c.to_prompt_json());
                } else {
                    println!("{}", c.to_canonical());
                }
            }
            Ok(())
        }
        Command::Verify { store, responses } => {
            let loaded = load_store(&store)?;
            eprintln!(
                "verified {} trees, {} factual and {} counterfactual instances",
                loaded.tree_count(),
                loaded.factual_count(),
                loaded.counterfactual_count()
            );
            if let Some(path) = responses {
                let svc = Service::new(loaded, mode(&store));
                let file = fs::File::open(&path).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))?;
                serve_stdio(&svc, io::BufReader::new(file), io::stdout().lock())
                    .map_err(|e| fail(EXIT_USAGE, e))?;
            }
            Ok(())
        }
        Command::Serve { store, http, workers } => {
            let svc = Service::new(load_store(&store)?, mode(&store));
            match http {
                None => serve_stdio(&svc, io::stdin().lock(), io::stdout().lock()).map_err(|e| fail(EXIT_USAGE, e)),
                Some(addr) => {
                    let rt = if workers <= 1 {
                        tokio::runtime::Builder::new_current_thread().enable_all().build()
                    } else {
                        tokio::runtime::Builder::new_multi_thread()
                            .worker_threads(workers)
                            .enable_all()
                            .build()
                    }
                    .map_err(|e| fail(EXIT_USAGE, e))?;
                    rt.block_on(async move {
                        let listener = tokio::net::TcpListener::bind(&addr)
                            .await
                            .map_err(|e| fail(EXIT_USAGE, format!("bind {addr}: {e}")))?;
                        eprintln!("listening on {}", listener.local_addr().map_err(|e| fail(EXIT_USAGE, e))?);
                        let shutdown = async {
                            let _ = tokio::signal::ctrl_c().await;
                        };
                        serve_http(listener, svc, shutdown).await.map_err(|e| fail(EXIT_USAGE, e))
                    })
                }
            }
        }
        Command::Curate {
            corpus: dir,
            soft_limit,
            max_chunks,
        } => {
            let docs = corpus::load_corpus(&dir).map_err(|e| fail(EXIT_VALIDATION, e))?;
            let (survivors, chunks, summary) = corpus::curate(&docs, soft_limit, max_chunks);
            for d in &survivors {
                print_line(&d.meta.to_json());
            }
            for c in &chunks {
                print_line(
                    &Obj::new()
                        .field("chunk_id", c.chunk_id.clone())
                        .field("word_count", c.word_count as u64)
                        .field("overflow", c.overflow)
                        .build(),
                );
            }
            eprintln!(
                "{} documents, {} after dedup, {} chunks",
                summary.documents, summary.deduplicated, summary.chunks
            );
            Ok(())
        }
        Command::Extract {
            corpus: dir,
            out,
            soft_limit,
            max_chunks,
            backend,
        } => {
            let backend = make_backend(&backend)?;
            let docs = corpus::load_corpus(&dir).map_err(|e| fail(EXIT_VALIDATION, e))?;
            let (survivors, chunks, _) = corpus::curate(&docs, soft_limit, max_chunks);
            fs::create_dir_all(&out).map_err(|e| fail(EXIT_USAGE, e))?;
            for chunk in &chunks {
                let (gid, k) = chunk.chunk_id.rsplit_once('#').expect("chunk id has an index");
                let meta = &survivors.iter().find(|d| d.meta.guideline_id == gid).expect("survivor").meta;
                let found = extract_recommendations(chunk, backend.as_ref()).map_err(|e| fail(EXIT_BACKEND, e))?;
                for (j, cand) in found.candidates.iter().enumerate() {
                    let target = DraftTarget {
                        tree_id: format!("{gid}-c{k}-r{j}"),
                        source: guidex_core::Source {
                            guideline_id: gid.to_string(),
                            chunk_id: chunk.chunk_id.clone(),
                        },
                        metadata: guidex_core::TreeMetadata {
                            disease_or_drug: meta.disease_or_drug.clone(),
                            age_group: meta.age_group.clone(),
                            race: meta.race.clone(),
                            gender: meta.gender.clone(),
                            publication_date: meta.publication_date,
                        },
                    };
                    match draft_tree(cand, &target, backend.as_ref()) {
                        Ok(tree) => {
                            let path = out.join(format!("{}.json", tree.id()));
                            fs::write(&path, serialize_tree(&tree)).map_err(|e| fail(EXIT_USAGE, e))?;
                            eprintln!("wrote {}", path.display());
                        }
                        Err(DraftError::Discarded { reason }) => eprintln!("discarded {}: {reason}", target.tree_id),
                        Err(DraftError::Backend(e)) => return Err(fail(EXIT_BACKEND, e)),
                    }
                }
            }
            Ok(())
        }
        Command::Stats { dir } => stats(&dir),
        Command::Run {
            corpus,
            out,
            sampling,
            cf,
            soft_limit,
            max_chunks,
            verbalize,
            no_timestamp,
            backend,
        } => {
            let backend = make_backend(&backend)?;
            let cfg = PipelineConfig {
                seed: sampling.seed,
                soft_limit,
                max_chunks,
                per_path: sampling.per_path,
                no_action_cap: sampling.no_action_cap,
                hidden_count: cf.hidden_count,
                identifiable_only: cf.identifiable_only,
                cf_per_tree: cf.per_tree,
                draws_per_source: cf.draws_per_source,
                verbalize,
                timestamp: !no_timestamp,
            };
            match pipeline::run_pipeline(&corpus, &out, backend.as_ref(), &cfg) {
                Ok(manifest) => {
                    print_line(&manifest.counts.to_json());
                    Ok(())
                }
                Err(e) => {
                    eprintln!("partial manifest: {}", e.partial.stable_text());
                    let code = match e.kind {
                        FailureKind::Backend => EXIT_BACKEND,
                        FailureKind::Input => EXIT_VALIDATION,
                        FailureKind::Io => EXIT_USAGE,
                    };
                    Err(fail(code, e))
                }
            }
        }
    }
}

fn factual_cfg(s: &SamplingArgs) -> FactualConfig {
    FactualConfig {
        seed: s.seed,
        per_path: s.per_path,
        no_action_cap: s.no_action_cap,
    }
}

fn cf_cfg(s: &SamplingArgs, c: &CfArgs) -> CfConfig {
    CfConfig {
        seed: s.seed,
        hidden_count: c.hidden_count,
        identifiable_only: c.identifiable_only,
        per_tree: c.per_tree,
        draws_per_source: c.draws_per_source,
        no_action_cap: s.no_action_cap,
    }
}

fn stats(dir: &Path) -> CmdResult {
    let store = InstanceStore::load(
        &dir.join(pipeline::TREES_DIR),
        &[&dir.join(pipeline::FACTUAL_FILE), &dir.join(pipeline::COUNTERFACTUAL_FILE)],
    )
    .map_err(|e| fail(EXIT_VALIDATION, e))?;
    let read_labels = |file: &str, key: &str| -> Result<Vec<String>, Failure> {
        let path = dir.join(file);
        let text = fs::read_to_string(&path).unwrap_or_default();
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let v: Json = serde_json::from_str(l).map_err(|e| fail(EXIT_VALIDATION, e))?;
                Ok(v.get(key).and_then(Json::as_str).unwrap_or_default().to_string())
            })
            .collect()
    };
    let summarize = |labels: &[String]| {
        let mut counts = std::collections::BTreeMap::new();
        for l in labels {
            *counts.entry(l.clone()).or_insert(0u64) += 1;
        }
        let no_action = labels.iter().filter(|l| *l == "no-action").count();
        let frac = if labels.is_empty() { 0.0 } else { no_action as f64 / labels.len() as f64 };
        Obj::new()
            .field("total", labels.len() as u64)
            .field("no_action_fraction", canon::number(frac))
            .field("labels", counts.into_iter().fold(Obj::new(), |o, (k, v)| o.field(&k, v)).build())
            .build()
    };
    let factual = read_labels(pipeline::FACTUAL_FILE, "label")?;
    let cf = read_labels(pipeline::COUNTERFACTUAL_FILE, "y_cf")?;
    let manifest = fs::read_to_string(dir.join(pipeline::MANIFEST_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<Json>(&t).ok())
        .and_then(|m| m.get("counts").cloned())
        .unwrap_or(Json::Null);
    print_line(
        &Obj::new()
            .field("trees", store.tree_count() as u64)
            .field("factual", summarize(&factual))
            .field("counterfactual", summarize(&cf))
            .field("manifest_counts", manifest)
            .build(),
    );
    Ok(())
}
