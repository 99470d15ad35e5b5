mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use forge_core::adapter::{self, AdapterDelta, MixMethod, WeightSet};
use forge_core::corpus::{self, CleanDocument, Rules};
use forge_core::evalkit::{self, QuestionClass, Subdomain};
use forge_core::extractor::{extract_corpus, Instance};
use forge_core::instructions::{build_dataset, make_training_example, Instruction};
use forge_core::jsonl::{read_jsonl, write_jsonl};
use forge_core::numeric_lex::NumericLexer;
use forge_core::tokenizer::{MixedScriptTokenizer, Tokenizer, Vocab, WhitespaceTokenizer};
use forge_core::{nmlf, ForgeError};
use log::{info, warn};
use rayon::prelude::*;

use config::{ForgeConfig, PipelineOverrides};
use manifest::{manifest_path_for, now_ms, RunManifest};

const EXIT_CONFIG: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "forge",
    version,
    about = "Numeric-sensitive choice-tuning data pipeline and adapter tools"
)]
struct Cli {
    /// Worker threads for parallel stages (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean raw documents and write the paragraph corpus plus stats.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Rule file; the built-in rules are used when omitted.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Drop documents that lose every paragraph instead of failing.
        #[arg(long)]
        skip_emptied: bool,
    },
    /// Find instances in a clean corpus and sample a fraction of them.
    Extract {
        /// Corpus directory (containing corpus.jsonl) or the JSONL file itself.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: PipelineOverrides,
    },
    /// Turn instances into multiple-choice instruction pairs.
    Build {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write token/label arrays for training.
        #[arg(long)]
        emit_training: Option<PathBuf>,
        /// Context window recorded with each training example.
        #[arg(long)]
        window: Option<usize>,
        #[command(flatten)]
        overrides: PipelineOverrides,
    },
    /// Count subjects, documents and tokens of a clean corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = TokenizerChoice::Mixed)]
        tokenizer: TokenizerChoice,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mix two adapters into one delta.
    Mix {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Svd)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale_a: f64,
        #[arg(long, default_value_t = 1.0)]
        scale_b: f64,
        /// Declared rank of `a`, overriding the rank read from the file.
        #[arg(long)]
        rank_a: Option<usize>,
        #[arg(long)]
        rank_b: Option<usize>,
    },
    /// Add a delta to base weights.
    Merge {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        delta: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tag benchmark questions as numeric or non-numeric.
    EvalSplit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against benchmark questions.
    Score {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// JSON report path; the text table goes next to it unless --table is given.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// preprocess, extract, build (and optionally mix, merge) from one config file.
    RunAll {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `paths.out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: PipelineOverrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenizerChoice {
    Mixed,
    Whitespace,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Svd,
    Mean,
    Sum,
}

impl From<MethodArg> for MixMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Svd => MixMethod::Svd,
            MethodArg::Mean => MixMethod::Mean,
            MethodArg::Sum => MixMethod::Sum,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ForgeError>() {
            return match e {
                ForgeError::Config(_) | ForgeError::Rule { .. } | ForgeError::InvalidCounts(..) => EXIT_CONFIG,
                ForgeError::Numerical { .. } => EXIT_NUMERICAL,
                _ => EXIT_INPUT,
            };
        }
    }
    EXIT_INPUT
}

fn run(command: Command) -> anyhow::Result<()> {
    let started = now_ms();
    match command {
        Command::Preprocess {
            manifest,
            rules,
            out,
            skip_emptied,
        } => {
            let (rule_set, rules_path) = load_rules(rules.as_deref())?;
            let outputs = preprocess_stage(&manifest, &rule_set, &out, skip_emptied)?;
            let inputs = with_optional(vec![manifest], rules_path);
            write_manifest("preprocess", &ForgeConfig::default(), &inputs, &outputs, &out, started)
        }
        Command::Extract {
            corpus,
            config,
            out,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let corpus = corpus_file(&corpus);
            extract_stage(&corpus, &cfg, &out)?;
            let inputs = with_optional(vec![corpus], config);
            write_manifest("extract", &cfg, &inputs, std::slice::from_ref(&out), &out, started)
        }
        Command::Build {
            instances,
            config,
            out,
            emit_training,
            window,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let window = window.or(cfg.training.as_ref().map(|t| t.window));
            let dataset = build_stage(&instances, &cfg, &out)?;
            let mut outputs = vec![out.clone()];
            if let Some(path) = emit_training {
                let Some(window) = window else {
                    return Err(
                        ForgeError::Config("--emit-training needs --window or [training] window".into()).into(),
                    );
                };
                outputs.extend(training_stage(&dataset, &path, window)?);
            }
            let inputs = with_optional(vec![instances], config);
            write_manifest("build", &cfg, &inputs, &outputs, &out, started)
        }
        Command::Stats { corpus, tokenizer, out } => {
            let corpus = corpus_file(&corpus);
            let docs = corpus::read_corpus_jsonl(&corpus)?;
            let tokenizer: &dyn Tokenizer = match tokenizer {
                TokenizerChoice::Mixed => &MixedScriptTokenizer,
                TokenizerChoice::Whitespace => &WhitespaceTokenizer,
            };
            write_stats(&docs, tokenizer, &out)?;
            write_manifest(
                "stats",
                &ForgeConfig::default(),
                &[corpus],
                std::slice::from_ref(&out),
                &out,
                started,
            )
        }
        Command::Mix {
            a,
            b,
            method,
            out,
            scale_a,
            scale_b,
            rank_a,
            rank_b,
        } => {
            mix_stage(&a, &b, method.into(), scale_a, scale_b, rank_a, rank_b, &out)?;
            write_manifest(
                "mix",
                &ForgeConfig::default(),
                &[a, b],
                std::slice::from_ref(&out),
                &out,
                started,
            )
        }
        Command::Merge { base, delta, out } => {
            merge_stage(&base, &delta, &out)?;
            write_manifest(
                "merge",
                &ForgeConfig::default(),
                &[base, delta],
                std::slice::from_ref(&out),
                &out,
                started,
            )
        }
        Command::EvalSplit { input, out } => {
            let questions = evalkit::read_questions(&input)?;
            let split = evalkit::split_questions(&questions);
            write_jsonl(&out, &split)?;
            log_split(&split);
            write_manifest(
                "eval-split",
                &ForgeConfig::default(),
                &[input],
                std::slice::from_ref(&out),
                &out,
                started,
            )
        }
        Command::Score {
            questions,
            predictions,
            out,
            table,
        } => {
            let qs = evalkit::read_questions(&questions)?;
            let preds = evalkit::read_predictions(&predictions, &qs)?;
            let report = evalkit::score(&qs, &preds)?;
            let text = serde_json::to_string_pretty(&report).context("serializing report")?;
            fs::write(&out, text + "\n").map_err(|e| ForgeError::io(&out, e))?;
            let table = table.unwrap_or_else(|| out.with_extension("txt"));
            fs::write(&table, report.render_table()).map_err(|e| ForgeError::io(&table, e))?;
            info!(
                "overall accuracy {:?} over {} questions",
                report.overall.avg_acc,
                report.overall.total()
            );
            let outputs = [out.clone(), table];
            write_manifest(
                "score",
                &ForgeConfig::default(),
                &[questions, predictions],
                &outputs,
                &out,
                started,
            )
        }
        Command::RunAll { config, out, overrides } => run_all(&config, out, &overrides, started),
    }
}

fn load_config(path: Option<&Path>, overrides: &PipelineOverrides) -> anyhow::Result<ForgeConfig> {
    let mut cfg = ForgeConfig::load(path)?;
    cfg.apply(overrides)?;
    Ok(cfg)
}

fn load_rules(path: Option<&Path>) -> anyhow::Result<(Rules, Option<PathBuf>)> {
    Ok(match path {
        Some(p) => (Rules::load(p)?, Some(p.to_path_buf())),
        None => (Rules::default(), None),
    })
}

fn with_optional(mut inputs: Vec<PathBuf>, config: Option<PathBuf>) -> Vec<PathBuf> {
    inputs.extend(config);
    inputs
}

fn corpus_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("corpus.jsonl")
    } else {
        path.to_path_buf()
    }
}

fn write_manifest(
    command: &str,
    cfg: &ForgeConfig,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    anchor: &Path,
    started: u128,
) -> anyhow::Result<()> {
    let manifest = RunManifest::record(command, cfg, inputs, outputs, started)?;
    manifest.write(&manifest_path_for(anchor))?;
    Ok(())
}

fn preprocess_stage(
    manifest: &Path,
    rules: &Rules,
    out_dir: &Path,
    skip_emptied: bool,
) -> anyhow::Result<Vec<PathBuf>> {
    let raw = corpus::load_manifest(manifest)?;
    let cleaned: Vec<_> = raw.par_iter().map(|doc| corpus::preprocess(doc, rules)).collect();
    let mut docs = Vec::with_capacity(cleaned.len());
    for result in cleaned {
        match result {
            Ok(doc) => docs.push(doc),
            Err(ForgeError::DocumentEmptied { doc_id }) if skip_emptied => {
                warn!("`{doc_id}` lost every paragraph during cleaning; skipped");
            }
            Err(e) => return Err(e.into()),
        }
    }
    if docs.is_empty() {
        bail!(ForgeError::Input(format!(
            "{}: no document survived cleaning",
            manifest.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| ForgeError::io(out_dir, e))?;
    let corpus_path = out_dir.join("corpus.jsonl");
    let file = File::create(&corpus_path).map_err(|e| ForgeError::io(&corpus_path, e))?;
    let mut writer = BufWriter::new(file);
    corpus::write_corpus_jsonl(&docs, &mut writer)
        .and_then(|()| writer.flush())
        .map_err(|e| ForgeError::io(&corpus_path, e))?;
    let stats_path = out_dir.join("stats.json");
    write_stats(&docs, &MixedScriptTokenizer, &stats_path)?;
    Ok(vec![corpus_path, stats_path])
}

fn write_stats(docs: &[CleanDocument], tokenizer: &dyn Tokenizer, out: &Path) -> anyhow::Result<()> {
    let stats = corpus::corpus_stats(docs, tokenizer);
    info!(
        "{} subjects, {} documents, {} tokens",
        stats.num_subjects, stats.num_documents, stats.num_tokens
    );
    let text = serde_json::to_string_pretty(&stats).context("serializing stats")?;
    fs::write(out, text + "\n").map_err(|e| ForgeError::io(out, e))?;
    Ok(())
}

fn extract_stage(corpus_path: &Path, cfg: &ForgeConfig, out: &Path) -> anyhow::Result<Vec<Instance>> {
    let docs = corpus::read_corpus_jsonl(corpus_path)?;
    let lexer = NumericLexer::new(cfg.keywords.clone());
    let (candidates, selected) = extract_corpus(&docs, &cfg.pipeline, &lexer);
    info!("{candidates} candidate instances, {} selected", selected.len());
    write_jsonl(out, &selected)?;
    Ok(selected)
}

fn build_stage(instances: &Path, cfg: &ForgeConfig, out: &Path) -> anyhow::Result<Vec<Instruction>> {
    let instances: Vec<Instance> = read_jsonl(instances)?;
    let dataset = build_dataset(&instances, &cfg.pipeline, &cfg.style()?)?;
    let flagged = dataset
        .iter()
        .filter(|i| i.flags.zero_widened || i.flags.precision_escalated)
        .count();
    info!(
        "{} instruction pairs from {} instances ({flagged} flagged)",
        dataset.len(),
        instances.len()
    );
    write_jsonl(out, &dataset)?;
    Ok(dataset)
}

/// Writes token/label arrays plus the vocabulary they index into
/// (`tokens.jsonl` -> `tokens.vocab.json`).
fn training_stage(dataset: &[Instruction], out: &Path, window: usize) -> anyhow::Result<Vec<PathBuf>> {
    let mut vocab = Vocab::new();
    let examples = dataset
        .iter()
        .map(|inst| make_training_example(&inst.pair(), &MixedScriptTokenizer, &mut vocab, window))
        .collect::<forge_core::Result<Vec<_>>>()?;
    write_jsonl(out, &examples)?;
    let vocab_path = out.with_extension("vocab.json");
    let text = serde_json::to_string(&vocab).context("serializing vocabulary")?;
    fs::write(&vocab_path, text + "\n").map_err(|e| ForgeError::io(&vocab_path, e))?;
    info!("{} training examples, vocabulary of {}", examples.len(), vocab.len());
    Ok(vec![out.to_path_buf(), vocab_path])
}

#[allow(clippy::too_many_arguments)]
fn mix_stage(
    a: &Path,
    b: &Path,
    method: MixMethod,
    scale_a: f64,
    scale_b: f64,
    rank_a: Option<usize>,
    rank_b: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut d1 = adapter::load_delta(a, scale_a).with_context(|| format!("loading {}", a.display()))?;
    let mut d2 = adapter::load_delta(b, scale_b).with_context(|| format!("loading {}", b.display()))?;
    d1.effective_rank = rank_a.unwrap_or(d1.effective_rank);
    d2.effective_rank = rank_b.unwrap_or(d2.effective_rank);
    let mixed = adapter::mix(&d1, &d2, method)?;
    info!(
        "mixed {} layers (ranks {} and {}), effective rank {}",
        mixed.layers.len(),
        d1.effective_rank,
        d2.effective_rank,
        mixed.effective_rank
    );
    nmlf::write(out, &mixed.to_entries())?;
    Ok(())
}

fn merge_stage(base: &Path, delta: &Path, out: &Path) -> anyhow::Result<()> {
    let base_weights = WeightSet::from_entries(nmlf::read(base)?)?;
    let entries = nmlf::read(delta)?;
    let is_factor = |n: &str| n.ends_with(adapter::DOWN_SUFFIX) || n.ends_with(adapter::UP_SUFFIX);
    // Plain matrices are added as they are; no rank is needed for merging.
    let delta = if entries.iter().any(|e| is_factor(&e.name)) {
        adapter::delta_from_entries(delta.display().to_string(), entries, 1.0)?
    } else {
        AdapterDelta {
            name: delta.display().to_string(),
            layers: WeightSet::from_entries(entries)?.layers,
            effective_rank: 0,
        }
    };
    let merged = adapter::merge(&base_weights, &delta)?;
    info!("merged {} of {} base layers", delta.layers.len(), merged.layers.len());
    nmlf::write(out, &merged.to_entries())?;
    Ok(())
}

fn log_split(split: &[evalkit::SplitRecord]) {
    let mut counts: BTreeMap<Subdomain, (usize, usize)> = BTreeMap::new();
    for r in split {
        let c = counts.entry(r.question.subdomain).or_default();
        match r.class {
            QuestionClass::Numeric => c.0 += 1,
            QuestionClass::NonNumeric => c.1 += 1,
        }
    }
    for (d, (n, non_n)) in counts {
        info!("{:<12} numeric {n:>5}  non-numeric {non_n:>5}", d.name());
    }
}

fn raw_document_paths(manifest: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let text = fs::read_to_string(manifest).map_err(|e| ForgeError::io(manifest, e))?;
    let entries: Vec<corpus::ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| ForgeError::json(format!("manifest {}", manifest.display()), e))?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    Ok(entries.into_iter().map(|e| base.join(e.file)).collect())
}

fn run_all(
    config_path: &Path,
    out: Option<PathBuf>,
    overrides: &PipelineOverrides,
    started: u128,
) -> anyhow::Result<()> {
    let cfg = load_config(Some(config_path), overrides)?;
    let out_dir = out.unwrap_or_else(|| cfg.paths.out.clone());
    let Some(manifest) = cfg.paths.manifest.clone() else {
        bail!(ForgeError::Config(format!(
            "{}: paths.manifest is required for run-all",
            config_path.display()
        )));
    };
    let (rules, rules_path) = load_rules(cfg.paths.rules.as_deref()).context("stage preprocess")?;

    let mut inputs = vec![config_path.to_path_buf(), manifest.clone()];
    inputs.extend(rules_path);
    inputs.extend(raw_document_paths(&manifest).context("stage preprocess")?);

    let mut outputs = preprocess_stage(&manifest, &rules, &out_dir, false).context("stage preprocess")?;
    let instances_path = out_dir.join("instances.jsonl");
    extract_stage(&outputs[0], &cfg, &instances_path).context("stage extract")?;
    outputs.push(instances_path.clone());
    let numct_path = out_dir.join("numct.jsonl");
    let dataset = build_stage(&instances_path, &cfg, &numct_path).context("stage build")?;
    outputs.push(numct_path);
    if let Some(training) = &cfg.training {
        outputs
            .extend(training_stage(&dataset, &out_dir.join("tokens.jsonl"), training.window).context("stage build")?);
    }
    if let Some(ad) = &cfg.adapters {
        let mixed = out_dir.join("mixed.nmlf");
        mix_stage(&ad.a, &ad.b, ad.method, ad.scale_a, ad.scale_b, None, None, &mixed).context("stage mix")?;
        inputs.extend([ad.a.clone(), ad.b.clone()]);
        outputs.push(mixed.clone());
        if let Some(base) = &ad.base {
            let merged = out_dir.join("merged.nmlf");
            merge_stage(base, &mixed, &merged).context("stage merge")?;
            inputs.push(base.clone());
            outputs.push(merged);
        }
    }
    let manifest = RunManifest::record("run-all", &cfg, &inputs, &outputs, started)?;
    manifest.write(&out_dir.join("run_manifest.json"))?;
    info!("run-all wrote {} files to {}", outputs.len(), out_dir.display());
    Ok(())
}
