//! Command-line front end: corpus construction, training, prediction, and
//! evaluation as reproducible batch runs. Every artifact is a pure function
//! of the inputs and the seed; `--workers` only changes wall time, never
//! bytes. Exit code 0 means the requested artifact was fully written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ortag::corpus::{self, CorpusRecord, Vocab};
use ortag::eval::{
    self, Attempt, Extraction, ExtractionRow, FileOutcome, MatchCriterion, MetricsReport,
};
use ortag::model::{self, ModelConfig, TaggerParams};
use ortag::tagspace::Sentence;

#[derive(Parser)]
#[command(name = "ortag", version, about = "Open relation tagging toolkit")]
struct Cli {
    /// Worker threads for per-sentence stages.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Suppress input-file warnings.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Intersect several extractors' outputs into a tagged training corpus.
    BuildCorpus {
        /// Extractor outputs, tab-separated:
        /// sentence_id, extractor, confidence (may be empty), arg1, rel, arg2.
        extractions: PathBuf,
        /// Sentences, one per line: id followed by surface_POS tokens.
        sentences: PathBuf,
        /// Output corpus (JSON lines).
        out: PathBuf,
        /// Distinct extractors that must agree on a triple.
        #[arg(long, default_value_t = 3)]
        min_agree: usize,
        /// Keep scored outputs only when confidence exceeds this.
        #[arg(long, default_value_t = 0.5)]
        min_conf: f64,
    },
    /// Fit the tagger on a corpus and write a checkpoint plus metrics log.
    Train(TrainArgs),
    /// Tag candidate argument pairs with a trained checkpoint.
    Predict {
        /// Checkpoint produced by `train`.
        checkpoint: PathBuf,
        /// Sentences, one per line: id followed by surface_POS tokens.
        sentences: PathBuf,
        /// Candidate pairs, tab-separated:
        /// sentence_id, arg1 positions (comma-separated), arg2 positions.
        pairs: PathBuf,
        /// Output extraction file.
        out: PathBuf,
    },
    /// Score a prediction file against gold and print metrics.
    Evaluate {
        /// Predictions (extraction file).
        pred: PathBuf,
        /// Gold data; see --gold-format.
        gold: PathBuf,
        /// How relations are matched.
        #[arg(long, default_value = "exact_string")]
        criterion: String,
        /// Whether `gold` is an extraction file or a corpus JSON-lines file.
        #[arg(long, value_enum, default_value_t = GoldFormat::Extractions)]
        gold_format: GoldFormat,
        /// Also write the precision-recall sweep to this TSV file.
        #[arg(long)]
        pr_curve: Option<PathBuf>,
        /// Also print the error breakdown over unmatched gold items.
        #[arg(long)]
        errors: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GoldFormat {
    Extractions,
    Corpus,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (JSON lines, from build-corpus).
    corpus: PathBuf,
    /// Output checkpoint path; the metrics log goes to `<out>.log`.
    out: PathBuf,
    /// Flat key=value config file applied before the per-field flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pre-trained word vectors (word then values, whitespace-separated).
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    /// Fraction of sentences held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Start from the small fast preset instead of the full-scale defaults.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    pos_dim: Option<usize>,
    #[arg(long)]
    arg_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    conv_filters: Option<usize>,
    #[arg(long)]
    conv_depth: Option<usize>,
    #[arg(long)]
    dropout_p: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_factor: Option<f64>,
    #[arg(long)]
    lr_patience: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    master_input_complement: Option<bool>,
    #[arg(long)]
    labels: Option<usize>,
}

impl TrainArgs {
    /// Defaults, then the config file, then the per-field flags.
    fn resolve_config(&self) -> Result<ModelConfig> {
        let mut config =
            if self.desk_scale { ModelConfig::desk_scale() } else { ModelConfig::default() };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            config.apply_text(&text)?;
        }
        let mut set = |key: &str, value: Option<String>| -> Result<()> {
            if let Some(value) = value {
                config.apply_kv(key, &value)?;
            }
            Ok(())
        };
        set("word_dim", self.word_dim.map(|v| v.to_string()))?;
        set("pos_dim", self.pos_dim.map(|v| v.to_string()))?;
        set("arg_dim", self.arg_dim.map(|v| v.to_string()))?;
        set("hidden", self.hidden.map(|v| v.to_string()))?;
        set("conv_filters", self.conv_filters.map(|v| v.to_string()))?;
        set("conv_depth", self.conv_depth.map(|v| v.to_string()))?;
        set("dropout_p", self.dropout_p.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("lr", self.lr.map(|v| v.to_string()))?;
        set("lr_factor", self.lr_factor.map(|v| v.to_string()))?;
        set("lr_patience", self.lr_patience.map(|v| v.to_string()))?;
        set("early_stop_patience", self.early_stop_patience.map(|v| v.to_string()))?;
        set("max_epochs", self.max_epochs.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set(
            "master_input_complement",
            self.master_input_complement.map(|v| v.to_string()),
        )?;
        set("labels", self.labels.map(|v| v.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .context("building the worker pool")?;
    let quiet = cli.quiet;
    pool.install(|| match cli.command {
        Command::BuildCorpus { extractions, sentences, out, min_agree, min_conf } => {
            build_corpus(&extractions, &sentences, &out, min_agree, min_conf, quiet)
        }
        Command::Train(args) => train(&args, quiet),
        Command::Predict { checkpoint, sentences, pairs, out } => {
            predict(&checkpoint, &sentences, &pairs, &out, quiet)
        }
        Command::Evaluate { pred, gold, criterion, gold_format, pr_curve, errors } => {
            evaluate(&pred, &gold, &criterion, gold_format, pr_curve.as_deref(), errors)
        }
    })
}

fn warn_all(quiet: bool, warnings: &[String]) {
    if !quiet {
        for warning in warnings {
            eprintln!("warning: {warning}");
        }
    }
}

/// Write through a sibling temp file and rename, so the target path either
/// holds the complete artifact or the previous content.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .ok_or_else(|| anyhow::anyhow!("output path {} has no file name", path.display()))?;
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    match write(&tmp) {
        Ok(()) => {
            fs::rename(&tmp, path)
                .with_context(|| format!("moving {} into place", path.display()))?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

// ── build-corpus ────────────────────────────────────────────────────────

fn build_corpus(
    extractions: &Path,
    sentences: &Path,
    out: &Path,
    min_agree: usize,
    min_conf: f64,
    quiet: bool,
) -> Result<()> {
    let parsed = corpus::read_extractor_file(extractions)
        .with_context(|| format!("reading {}", extractions.display()))?;
    warn_all(quiet, &parsed.warnings);
    let sentence_parse = corpus::read_sentence_file(sentences)
        .with_context(|| format!("reading {}", sentences.display()))?;
    warn_all(quiet, &sentence_parse.warnings);
    let sentence_map: BTreeMap<String, Sentence> =
        sentence_parse.items.into_iter().map(|s| (s.id.clone(), s)).collect();

    let intersected = corpus::intersect(&parsed.items, min_agree, min_conf)?;
    warn_all(quiet, &intersected.warnings);

    // Per-sentence alignment in parallel: triples grouped by sentence, each
    // group aligned independently, results merged back in sentence order.
    let mut by_sentence: BTreeMap<&str, Vec<corpus::AgreedTriple>> = BTreeMap::new();
    for triple in &intersected.agreed {
        by_sentence.entry(&triple.sentence_id).or_default().push(triple.clone());
    }
    let groups: Vec<(&str, Vec<corpus::AgreedTriple>)> = by_sentence.into_iter().collect();
    let parts: Vec<(Vec<CorpusRecord>, corpus::BuildStats)> = groups
        .par_iter()
        .map(|(id, triples)| {
            let mut one = BTreeMap::new();
            if let Some(sentence) = sentence_map.get(*id) {
                one.insert((*id).to_string(), sentence.clone());
            }
            corpus::build_records(&one, triples)
        })
        .collect();

    let mut records = Vec::new();
    let mut stats = corpus::BuildStats { sentences: sentence_map.len(), ..Default::default() };
    let mut overlapping = 0usize;
    for (part_records, part) in parts {
        stats.triples_in += part.triples_in;
        stats.records_out += part.records_out;
        stats.missing_sentence += part.missing_sentence;
        stats.unalignable += part.unalignable;
        stats.duplicates += part.duplicates;
        overlapping += (part.overlap_proportion * part.records_out as f64).round() as usize;
        records.extend(part_records);
    }
    stats.overlap_proportion =
        if records.is_empty() { 0.0 } else { overlapping as f64 / records.len() as f64 };

    write_atomic(out, |tmp| Ok(corpus::write_corpus(tmp, &records)?))?;
    println!(
        "records_seen={} skipped_malformed={} dropped_low_confidence={} agreed={}",
        intersected.stats.records_seen,
        intersected.stats.skipped_malformed,
        intersected.stats.dropped_low_confidence,
        intersected.stats.agreed,
    );
    println!(
        "sentences={} triples_in={} records_out={} missing_sentence={} unalignable={} \
         duplicates={} overlap_proportion={}",
        stats.sentences,
        stats.triples_in,
        stats.records_out,
        stats.missing_sentence,
        stats.unalignable,
        stats.duplicates,
        stats.overlap_proportion,
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────

fn train(args: &TrainArgs, quiet: bool) -> Result<()> {
    let config = args.resolve_config()?;
    let records = corpus::read_corpus(&args.corpus)
        .with_context(|| format!("reading {}", args.corpus.display()))?;
    if records.is_empty() {
        bail!("corpus {} holds no records", args.corpus.display());
    }
    let (train_records, val_records) =
        corpus::split(records, args.val_fraction, config.seed)?;

    // Vocabularies come from the training split only; validation tokens
    // missing from them map to UNK like any future input.
    let word_vocab = Vocab::build(
        train_records.iter().flat_map(|r| r.sentence.surfaces().map(|s| s.to_lowercase())),
    );
    let pos_vocab = Vocab::build(
        train_records.iter().flat_map(|r| r.sentence.tokens.iter().map(|t| t.pos.clone())),
    );
    let word_table = match &args.word_vectors {
        Some(path) => {
            let (table, stats) =
                corpus::load_word_vectors(path, &word_vocab, config.word_dim, config.seed)?;
            if !quiet {
                eprintln!(
                    "word vectors: {} from file, {} randomly initialized",
                    stats.from_file, stats.randomly_initialized
                );
            }
            Some(table)
        }
        None => None,
    };

    let mut params = TaggerParams::init(config, word_vocab, pos_vocab, word_table)?;
    let history = model::train(&mut params, &train_records, &val_records)?;

    write_atomic(&args.out, |tmp| Ok(model::save(&params, tmp)?))?;
    let log_path = PathBuf::from(format!("{}.log", args.out.display()));
    write_atomic(&log_path, |tmp| Ok(fs::write(tmp, history.render_log())?))?;

    println!(
        "epochs={} best_epoch={} best_val_loss={:.6}",
        history.epochs.len(),
        history.best_epoch,
        history.best_val_loss
    );
    println!("wrote {}", args.out.display());
    println!("wrote {}", log_path.display());
    Ok(())
}

// ── predict ─────────────────────────────────────────────────────────────

fn predict(
    checkpoint: &Path,
    sentences: &Path,
    pairs: &Path,
    out: &Path,
    quiet: bool,
) -> Result<()> {
    let params =
        model::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let sentence_parse = corpus::read_sentence_file(sentences)
        .with_context(|| format!("reading {}", sentences.display()))?;
    warn_all(quiet, &sentence_parse.warnings);
    let sentence_map: BTreeMap<String, Sentence> =
        sentence_parse.items.into_iter().map(|s| (s.id.clone(), s)).collect();
    let requests = corpus::read_pairs_file(pairs)
        .with_context(|| format!("reading {}", pairs.display()))?;
    for request in &requests {
        let Some(sentence) = sentence_map.get(&request.sentence_id) else {
            bail!(
                "{}:{}: sentence {:?} is not in {}",
                pairs.display(),
                request.line,
                request.sentence_id,
                sentences.display()
            );
        };
        for (name, span) in [("arg1", &request.arg1), ("arg2", &request.arg2)] {
            if span.last() >= sentence.len() {
                bail!(
                    "{}:{}: {name} position {} is outside the {}-token sentence {:?}",
                    pairs.display(),
                    request.line,
                    span.last(),
                    sentence.len(),
                    request.sentence_id
                );
            }
        }
    }

    // Each pair decodes independently; the collect keeps input order.
    let rows: Vec<ExtractionRow> = requests
        .par_iter()
        .map(|request| {
            let sentence = &sentence_map[&request.sentence_id];
            let decoded = model::predict(
                &params,
                sentence,
                &[(request.arg1.clone(), request.arg2.clone())],
            )?;
            Ok(row_for(sentence, &decoded[0]))
        })
        .collect::<Result<Vec<ExtractionRow>>>()?;

    write_atomic(out, |tmp| Ok(eval::write_extraction_file(tmp, &rows)?))?;
    let extracted = rows.iter().filter(|r| r.outcome == FileOutcome::Ok).count();
    println!("pairs={} extracted={} wrote {}", rows.len(), extracted, out.display());
    Ok(())
}

fn row_for(sentence: &Sentence, prediction: &model::PairPrediction) -> ExtractionRow {
    let attempt = prediction.attempt(sentence);
    match &attempt.outcome {
        eval::AttemptOutcome::Extracted(e) => ExtractionRow {
            sentence_id: e.sentence_id.clone(),
            confidence: e.confidence,
            arg1: e.arg1.text.clone(),
            rel: e.rel.text.clone(),
            arg2: e.arg2.text.clone(),
            outcome: FileOutcome::Ok,
        },
        other => ExtractionRow {
            sentence_id: attempt.sentence_id.clone(),
            confidence: 0.0,
            arg1: attempt.arg1.text.clone(),
            rel: String::new(),
            arg2: attempt.arg2.text.clone(),
            outcome: match other {
                eval::AttemptOutcome::Missed => FileOutcome::Missed,
                _ => FileOutcome::SchemeViolation,
            },
        },
    }
}

// ── evaluate ────────────────────────────────────────────────────────────

/// Matching never crosses sentences, so precision/recall decompose exactly
/// into per-sentence parts; groups score in parallel and the counts merge
/// in sentence order.
fn sentence_parallel_prf(
    preds: &[Extraction],
    golds: &[Extraction],
    criterion: MatchCriterion,
) -> Result<MetricsReport> {
    let mut groups: BTreeMap<&str, (Vec<Extraction>, Vec<Extraction>)> = BTreeMap::new();
    for p in preds {
        groups.entry(&p.sentence_id).or_default().0.push(p.clone());
    }
    for g in golds {
        groups.entry(&g.sentence_id).or_default().1.push(g.clone());
    }
    let groups: Vec<(Vec<Extraction>, Vec<Extraction>)> = groups.into_values().collect();
    let parts: Vec<MetricsReport> = groups
        .par_iter()
        .map(|(p, g)| Ok(eval::prf(p, g, criterion)?))
        .collect::<Result<_>>()?;
    let tp: usize = parts.iter().map(|r| r.tp).sum();
    let fp: usize = parts.iter().map(|r| r.fp).sum();
    let fn_: usize = parts.iter().map(|r| r.fn_).sum();
    let precision = if preds.is_empty() { 0.0 } else { tp as f64 / preds.len() as f64 };
    let recall = if golds.is_empty() { 0.0 } else { tp as f64 / golds.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport { precision, recall, f1, tp, fp, fn_ })
}

fn evaluate(
    pred: &Path,
    gold: &Path,
    criterion: &str,
    gold_format: GoldFormat,
    pr_curve: Option<&Path>,
    errors: bool,
) -> Result<()> {
    let criterion: MatchCriterion = criterion.parse()?;
    let pred_rows =
        eval::read_extraction_file(pred).with_context(|| format!("reading {}", pred.display()))?;
    let preds: Vec<Extraction> = pred_rows.iter().filter_map(|r| r.extraction()).collect();
    for (i, extraction) in preds.iter().enumerate() {
        extraction
            .validate()
            .with_context(|| format!("{}: prediction {}", pred.display(), i + 1))?;
    }
    let golds: Vec<Extraction> = match gold_format {
        GoldFormat::Extractions => eval::read_extraction_file(gold)
            .with_context(|| format!("reading {}", gold.display()))?
            .iter()
            .filter_map(|r| r.extraction())
            .collect(),
        GoldFormat::Corpus => {
            let records = corpus::read_corpus(gold)
                .with_context(|| format!("reading {}", gold.display()))?;
            records
                .iter()
                .map(|r| {
                    eval::gold_from_record(r).ok_or_else(|| {
                        anyhow::anyhow!("record in sentence {} has no relation", r.sentence.id)
                    })
                })
                .collect::<Result<_>>()?
        }
    };

    let report = sentence_parallel_prf(&preds, &golds, criterion)?;
    print!("{}", eval::render_metrics(&report));
    println!("criterion={criterion} preds={} golds={}", preds.len(), golds.len());

    if let Some(curve_path) = pr_curve {
        let curve = eval::pr_curve(&preds, &golds, criterion)?;
        write_atomic(curve_path, |tmp| {
            let mut text = String::from("threshold\trecall\tprecision\n");
            for point in &curve.points {
                text.push_str(&format!(
                    "{}\t{}\t{}\n",
                    point.threshold, point.recall, point.precision
                ));
            }
            Ok(fs::write(tmp, text)?)
        })?;
        println!("auc={}", curve.auc);
        println!("wrote {}", curve_path.display());
    }

    if errors {
        let attempts: Vec<Attempt> = pred_rows.iter().map(|r| r.attempt()).collect();
        let breakdown = eval::categorize_errors(&attempts, &golds, criterion)?;
        println!(
            "missed={} scheme_violation={} wrong_start={} wrong_end={} errors_total={}",
            breakdown.missed,
            breakdown.scheme_violation,
            breakdown.wrong_start,
            breakdown.wrong_end,
            breakdown.total()
        );
    }
    Ok(())
}
