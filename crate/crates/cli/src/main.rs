use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::warn;

use pwvec::config::{sha256_hex, stage_seed, CorpusFormat, RunConfig, Stage};
use pwvec::coocmat::SparseMatrix;
use pwvec::corpus::{Corpus, NormalizationRules, Vocabulary};
use pwvec::eval;
use pwvec::gpca::{self, contextual_matrix, Embeddings, TransformChoice};
use pwvec::Error;

/// Principal word vectors from raw or CoNLL-U corpora.
#[derive(Parser)]
#[command(name = "pwvec", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    min_count: Option<u64>,
    #[arg(long, global = true)]
    lowercase: bool,
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Count word types and write the vocabulary.
    Vocab {
        /// Corpus file; defaults to `corpus` from the config.
        corpus: Option<PathBuf>,
    },
    /// Build the contextual matrix and spill it.
    Cooc,
    /// Build word vectors and write them with a run manifest.
    Embed,
    /// Intrinsic evaluation of an embedding file.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Log generalized variance.
    Gv { embeddings: PathBuf },
    /// Fisher discriminant ratio over windowed vectors.
    Fdr {
        embeddings: PathBuf,
        /// CoNLL-U file (UPOS classes), or CoNLL-2003 columns with `--ner`.
        labels: PathBuf,
        #[arg(long)]
        ner: bool,
        #[arg(long, default_value_t = 3)]
        half_window: usize,
    },
    /// Spearman correlation against word-similarity benchmarks.
    Sim {
        embeddings: PathBuf,
        #[arg(required = true)]
        benchmarks: Vec<PathBuf>,
    },
    /// Covariance spectrum with TV, LEV and LGV series.
    Spectrum { embeddings: PathBuf },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            e => Failure::Data(e),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("pwvec: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("pwvec: {e}");
            ExitCode::from(2)
        }
    }
}

/// Config file first, then flags on top.
fn resolve_config(g: &GlobalArgs) -> Outcome<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => match RunConfig::load(path) {
            Err(Error::Io { path, source }) => return usage(format!("cannot read config {}: {source}", path.display())),
            other => other?,
        },
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = Some(w);
    }
    if let Some(c) = g.min_count {
        cfg.rules.min_count = c;
    }
    if g.lowercase {
        cfg.rules.lowercase = true;
    }
    if let Some(o) = &g.output {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    pwvec::par::set_workers(workers);
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome<()> {
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Vocab { corpus } => cmd_vocab(&cfg, corpus),
        Command::Cooc => cmd_cooc(&cfg),
        Command::Embed => cmd_embed(&cfg),
        Command::Eval(e) => cmd_eval(&cfg, e),
    }
}

fn guess_format(cfg: &RunConfig, path: &Path) -> CorpusFormat {
    if cfg.corpus.as_deref() == Some(path) {
        return cfg.format;
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("conllu") => CorpusFormat::Conllu,
        _ => cfg.format,
    }
}

fn build_vocabulary(path: &Path, format: CorpusFormat, rules: &NormalizationRules) -> pwvec::Result<Vocabulary> {
    match format {
        CorpusFormat::Raw => Vocabulary::build_from_raw_file(path, rules),
        CorpusFormat::Conllu => Vocabulary::build_from_conllu_file(path, rules),
    }
}

/// Writes `text` to `path`, or to stdout without a path.
fn emit(path: Option<&Path>, text: &str) -> Outcome<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn cmd_vocab(cfg: &RunConfig, corpus: Option<PathBuf>) -> Outcome<()> {
    let Some(path) = corpus.or_else(|| cfg.corpus.clone()) else {
        return usage("no corpus given (argument or `corpus` in the config)");
    };
    let vocab = build_vocabulary(&path, guess_format(cfg, &path), &cfg.rules)?;
    let mut buf = Vec::new();
    vocab.write_to(&mut buf).map_err(|e| Error::io("<buffer>", e))?;
    let out = cfg.output.clone().or_else(|| cfg.vocab.clone());
    emit(out.as_deref(), &String::from_utf8_lossy(&buf))
}

/// The training corpus, over the config's vocabulary file when it exists.
fn load_corpus(cfg: &RunConfig) -> Outcome<(Corpus, PathBuf)> {
    let Some(path) = cfg.corpus.clone() else {
        return usage("the config does not name a `corpus`");
    };
    let vocab = match &cfg.vocab {
        Some(v) if v.exists() => Vocabulary::load(v)?,
        _ => build_vocabulary(&path, cfg.format, &cfg.rules)?,
    };
    let vocab = Arc::new(vocab);
    let corpus = match cfg.format {
        CorpusFormat::Raw => Corpus::ingest_raw(&path, vocab, &cfg.rules)?,
        CorpusFormat::Conllu => Corpus::ingest_conllu(&path, vocab, &cfg.rules)?,
    };
    Ok((corpus, path))
}

fn file_digest(path: &Path) -> Outcome<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_cooc(cfg: &RunConfig) -> Outcome<()> {
    let Some(out) = cfg.output.clone().or_else(|| cfg.matrix.clone()) else {
        return usage("no output path (--output or `matrix` in the config)");
    };
    let (corpus, _) = load_corpus(cfg)?;
    let (m, spaces) = contextual_matrix(&corpus, &cfg.features)?;
    m.save_spill(&out)?;

    let mut manifest = String::new();
    let mut offset = 0;
    for (spec, space) in cfg.features.iter().zip(&spaces) {
        let _ = writeln!(manifest, "# {spec}");
        for (i, s) in space.symbols().iter().enumerate() {
            let _ = writeln!(manifest, "{}\t{s}", offset + i);
        }
        offset += space.len();
    }
    emit(Some(&with_suffix(&out, ".features")), &manifest)?;
    if let Some(v) = cfg.vocab.as_deref().filter(|v| !v.exists()) {
        corpus.vocabulary().save(v)?;
    }
    Ok(())
}

fn cmd_embed(cfg: &RunConfig) -> Outcome<()> {
    let Some(out) = cfg.output.clone() else {
        return usage("no output path (--output or `output` in the config)");
    };
    let params = cfg.gpca_params();
    let (emb, input_digest) = if cfg.corpus.is_some() {
        let (corpus, path) = load_corpus(cfg)?;
        let digest = file_digest(&path)?;
        (gpca::principal_word_vectors(&corpus, &cfg.features, &params)?, digest)
    } else if let Some(mpath) = &cfg.matrix {
        let m = SparseMatrix::load_spill(mpath)?;
        let mut emb = gpca::gpca(&m, &params)?;
        if let Some(v) = &cfg.vocab {
            let vocab = Vocabulary::load(v)?;
            if vocab.len() != m.ncols() {
                return Err(Error::Shape(format!(
                    "vocabulary has {} words but the matrix has {} columns",
                    vocab.len(),
                    m.ncols()
                ))
                .into());
            }
            emb.tokens = vocab.tokens().to_vec();
        }
        (emb, file_digest(mpath)?)
    } else {
        return usage("the config names neither a `corpus` nor a `matrix`");
    };
    emb.save(&out)?;

    let mut replay = cfg.clone();
    if let Some(spec) = &emb.transform {
        replay.transform = TransformChoice::Fixed(spec.clone());
    }
    let manifest_path = cfg.manifest.clone().unwrap_or_else(|| with_suffix(&out, ".manifest"));
    emit(Some(&manifest_path), &manifest_text(cfg, &replay, &emb, &input_digest))
}

fn manifest_text(cfg: &RunConfig, replay: &RunConfig, emb: &Embeddings, digest: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# pwvec {} run manifest", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# input_sha256: {digest}");
    let _ = writeln!(s, "# requested transform: {}", cfg.transform);
    let _ = writeln!(s, "# seed {} -> sketch seed {}", cfg.seed, stage_seed(cfg.seed, Stage::Sketch));
    let _ = writeln!(s, "# seed {} -> anneal seed {}", cfg.seed, stage_seed(cfg.seed, Stage::Anneal));
    let _ = writeln!(s, "# emitted {} x {}", emb.len(), emb.k());
    for (k, v) in &emb.manifest {
        let _ = writeln!(s, "# {k}: {v}");
    }
    s.push_str(&replay.to_text());
    s
}

fn load_embeddings(path: &Path) -> Outcome<Embeddings> {
    Ok(Embeddings::load(path)?)
}

fn report(lines: &[(String, String)]) -> String {
    lines.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k} = {v}");
        s
    })
}

fn cmd_eval(cfg: &RunConfig, cmd: EvalCommand) -> Outcome<()> {
    let out = cfg.output.as_deref();
    let mut lines: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| lines.push((k.to_string(), v));
    match cmd {
        EvalCommand::Gv { embeddings } => {
            let emb = load_embeddings(&embeddings)?;
            put("words", emb.len().to_string());
            put("k", emb.k().to_string());
            put("log_generalized_variance", format!("{:?}", eval::log_generalized_variance(&emb.vectors)?));
        }
        EvalCommand::Fdr {
            embeddings,
            labels,
            ner,
            half_window,
        } => {
            let emb = load_embeddings(&embeddings)?;
            let labelled_rules = NormalizationRules {
                min_count: 1,
                ..cfg.rules.clone()
            };
            let corpus = if ner {
                let text = std::fs::read_to_string(&labels).map_err(|e| Error::io(&labels, e))?;
                let vocab = Vocabulary::build(
                    text.lines().filter_map(|l| l.split_whitespace().next()).filter(|w| *w != "-DOCSTART-"),
                    &labelled_rules,
                )?;
                eval::read_conll2003(&text, &labels.display().to_string(), Arc::new(vocab), &labelled_rules)?
            } else {
                let vocab = Vocabulary::build_from_conllu_file(&labels, &labelled_rules)?;
                Corpus::ingest_conllu(&labels, Arc::new(vocab), &labelled_rules)?
            };
            let set = eval::windowed_representation(&corpus, &emb, half_window)?;
            put("tokens", set.len().to_string());
            put("classes", set.classes.len().to_string());
            put("dimension", set.dim().to_string());
            put("fdr", format!("{:?}", eval::fdr(&set)?));
        }
        EvalCommand::Sim {
            embeddings,
            benchmarks,
        } => {
            let emb = load_embeddings(&embeddings)?;
            let mut reports = Vec::new();
            for path in &benchmarks {
                let bench = eval::Benchmark::load(path)?;
                let r = eval::word_similarity(&emb, &bench)?;
                let name = path.file_name().map_or_else(|| r.name.clone(), |n| n.to_string_lossy().into_owned());
                put(&format!("{name}.spearman"), format!("{:?}", r.spearman));
                put(&format!("{name}.pairs"), r.scored.to_string());
                put(&format!("{name}.oov"), r.oov.to_string());
                reports.push(r);
            }
            let avg = eval::average_spearman(&reports).expect("at least one benchmark");
            put("average_spearman", format!("{avg:?}"));
        }
        EvalCommand::Spectrum { embeddings } => {
            let emb = load_embeddings(&embeddings)?;
            let ev = eval::covariance_eigenvalues(&emb.vectors)?;
            let r = eval::eigen_report(&ev.iter().map(|l| l.max(0.0)).collect::<Vec<_>>())?;
            put("k", emb.k().to_string());
            put("total_variance", format!("{:?}", r.eigenvalues.iter().sum::<f64>()));
            for (name, series) in [("eigenvalues", Some(&r.eigenvalues)), ("tv", Some(&r.tv)), ("lev", Some(&r.lev)), ("lgv", r.lgv.as_ref())] {
                let Some(series) = series else {
                    warn!("log eigenvalues sum to zero; no LGV series");
                    continue;
                };
                let joined: Vec<String> = series.iter().map(|v| format!("{v:?}")).collect();
                put(name, joined.join(" "));
                if let Some(base) = out {
                    let mut buf = Vec::new();
                    eval::write_series(&mut buf, series).map_err(|e| Error::io("<buffer>", e))?;
                    let path = with_suffix(base, &format!(".{name}"));
                    std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
                }
            }
        }
    }
    let text = report(&lines);
    if out.is_some() {
        emit(out, &text)?;
    }
    emit(None, &text)
}
