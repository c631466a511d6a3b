use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use triplet_retrieval::corpus::sha256_hex;
use triplet_retrieval::dense::{build_dense_index, DenseIndex, VectorFile};
use triplet_retrieval::harness::{
    evaluate, load_dataset, ChoiceScorer, HttpChoiceScorer, LexicalChoiceScorer, DEFAULT_SEPARATOR,
};
use triplet_retrieval::pipeline::{FilterMode, Pipeline, PipelineConfig, RetrievalQuery, Retriever};
use triplet_retrieval::provider::{EmbedRole, EmbeddingProvider, HashingProvider, HttpProvider, PrecomputedProvider};
use triplet_retrieval::scorer::{HttpScorer, LexicalOverlapScorer, RerankScorer};
use triplet_retrieval::{
    build_corpus, build_sparse_index, parse_triplets, Bm25Params, Corpus, Provenance, RelationTemplateTable,
    ScoredPassage, SparseIndex,
};

#[derive(Parser, Debug)]
#[command(name = "tripret", version, about = "Retrieve knowledge-graph triplets for multiple-choice QA")]
struct Cli {
    /// TOML file with default flag values; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    /// Only log errors
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Linearize a triplet TSV into a passage corpus
    BuildCorpus(BuildCorpusArgs),
    /// Build a BM25 index over a corpus
    IndexSparse(IndexSparseArgs),
    /// Query a BM25 index
    SearchSparse(SearchSparseArgs),
    /// Build a dense index from precomputed vectors or a provider
    IndexDense(IndexDenseArgs),
    /// Query a dense index
    SearchDense(SearchDenseArgs),
    /// Retrieve the top-K passages for one question/choice pair
    Retrieve(RetrieveArgs),
    /// Score a multiple-choice dataset end to end
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct BuildCorpusArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Replace `_` with spaces in heads and tails
    #[arg(long)]
    normalize_underscores: bool,
}

#[derive(Args, Debug)]
struct IndexSparseArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    #[arg(long, default_value_t = 0.25)]
    epsilon: f64,
}

#[derive(Args, Debug)]
struct SearchSparseArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(short = 'n', long = "top", default_value_t = 10)]
    n: usize,
    /// Include passage text from this corpus
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["vectors", "provider"]))]
struct IndexDenseArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Vector file whose row i embeds passage i
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    provider: Option<ProviderSpec>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct SearchDenseArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long)]
    provider: ProviderSpec,
    #[arg(short = 'n', long = "top", default_value_t = 10)]
    n: usize,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    sparse: PathBuf,
    #[arg(long)]
    dense: PathBuf,
    #[arg(long)]
    provider: ProviderSpec,
    /// Reranker: `stub:lexical` or a service URL
    #[arg(long, required_unless_present = "no_rerank")]
    scorer: Option<ScorerSpec>,
    /// Candidates per retriever
    #[arg(short = 'N', long = "n-per-retriever", default_value_t = 100)]
    n: usize,
    /// Passages kept
    #[arg(short = 'K', long = "top-k", default_value_t = 100)]
    k: usize,
    /// Fuse retriever scores instead of reranking
    #[arg(long)]
    no_rerank: bool,
    #[arg(long, default_value = "none")]
    filter: FilterMode,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    question: String,
    #[arg(long)]
    choice: String,
    /// All answer choices, one per line (used by the csqa filter)
    #[arg(long)]
    choices: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// JSONL examples with id, question, choices, gold
    #[arg(long)]
    dataset: PathBuf,
    /// Reader: `stub:lexical` or a service URL
    #[arg(long)]
    choice_scorer: ScorerSpec,
    #[arg(long)]
    out: PathBuf,
    /// Also write rendered reader inputs to <out>/reader_inputs.jsonl
    #[arg(long)]
    export_inputs: bool,
}

/// `hash:<dim>`, `vecfile:<path>` or an `http(s)://` service URL.
#[derive(Debug, Clone)]
enum ProviderSpec {
    Hash(usize),
    VecFile(PathBuf),
    Service(String),
}

impl FromStr for ProviderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(dim) = s.strip_prefix("hash:") {
            let dim: usize = dim.parse().map_err(|_| format!("bad hashing dimension `{dim}`"))?;
            if dim == 0 {
                return Err("hashing dimension must be > 0".into());
            }
            Ok(Self::Hash(dim))
        } else if let Some(path) = s.strip_prefix("vecfile:") {
            Ok(Self::VecFile(path.into()))
        } else if is_url(s) {
            Ok(Self::Service(s.into()))
        } else {
            Err(format!("expected hash:<dim>, vecfile:<path> or http(s)://..., got `{s}`"))
        }
    }
}

#[derive(Debug, Clone)]
enum ScorerSpec {
    Lexical,
    Service(String),
}

impl FromStr for ScorerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stub" | "stub:lexical" => Ok(Self::Lexical),
            url if is_url(url) => Ok(Self::Service(url.into())),
            _ => Err(format!("expected stub:lexical or a service URL, got `{s}`")),
        }
    }
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

/// Names the pipeline stage an error came from.
#[derive(Debug)]
struct Stage(&'static str);

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed", self.0)
    }
}

trait StageExt<T> {
    fn stage(self, name: &'static str) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, name: &'static str) -> Result<T> {
        self.map_err(Into::into).context(Stage(name))
    }
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match apply_config(argv) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: stage `config` failed: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(1);
        }
    };
    init_logging(&cli);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.downcast_ref::<Stage>().map(|s| s.0);
            let skip = usize::from(stage.is_some());
            let causes: Vec<String> = e.chain().skip(skip).map(ToString::to_string).collect();
            match stage {
                Some(s) => eprintln!("error: stage `{s}` failed: {}", causes.join(": ")),
                None => eprintln!("error: {}", causes.join(": ")),
            }
            ExitCode::from(2)
        }
    }
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
}

/// Appends `--key value` for every config entry the command line leaves
/// unset. Top-level keys apply to every subcommand; a `[subcommand]` table
/// overrides them.
fn apply_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;

    let cmd = Cli::command();
    let Some(sub) = argv
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find_map(|a| cmd.find_subcommand(a))
    else {
        return Ok(argv);
    };

    let mut merged: Vec<(String, toml::Value)> = table
        .iter()
        .filter(|(_, v)| !v.is_table())
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if let Some(toml::Value::Table(own)) = table.get(sub.get_name()) {
        for (k, v) in own {
            merged.retain(|(mk, _)| mk != k);
            merged.push((k.clone(), v.clone()));
        }
    }

    let args: Vec<&clap::Arg> = sub.get_arguments().chain(cmd.get_arguments()).collect();
    for (key, value) in merged {
        let long = key.replace('_', "-");
        if long == "config" {
            continue;
        }
        let Some(arg) = args.iter().find(|a| a.get_long() == Some(long.as_str())) else {
            log::debug!("config key `{key}` does not apply to `{}`", sub.get_name());
            continue;
        };
        if given(&argv, &long, arg.get_short()) {
            continue;
        }
        let flag = OsString::from(format!("--{long}"));
        match value {
            toml::Value::Boolean(true) => argv.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => argv.extend([flag, s.into()]),
            toml::Value::Integer(i) => argv.extend([flag, i.to_string().into()]),
            toml::Value::Float(f) => argv.extend([flag, f.to_string().into()]),
            other => bail!("config key `{key}` has unsupported value {other}"),
        }
    }
    Ok(argv)
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_str()?;
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn given(argv: &[OsString], long: &str, short: Option<char>) -> bool {
    let eq = format!("--{long}=");
    argv.iter().filter_map(|a| a.to_str()).any(|a| {
        a == format!("--{long}")
            || a.starts_with(&eq)
            || short.is_some_and(|c| a.starts_with('-') && !a.starts_with("--") && a[1..].starts_with(c))
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildCorpus(a) => cmd_build_corpus(a),
        Command::IndexSparse(a) => cmd_index_sparse(a),
        Command::SearchSparse(a) => cmd_search_sparse(a),
        Command::IndexDense(a) => cmd_index_dense(a),
        Command::SearchDense(a) => cmd_search_dense(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn cmd_build_corpus(a: BuildCorpusArgs) -> Result<()> {
    let raw = fs::read(&a.input)
        .with_context(|| a.input.display().to_string())
        .stage("read-triplets")?;
    let mut triplets = parse_triplets(raw.as_slice()).stage("parse-triplets")?;
    if a.normalize_underscores {
        triplets.iter_mut().for_each(|t| t.normalize_underscores());
    }
    let corpus = build_corpus(&triplets, &RelationTemplateTable::conceptnet()).stage("linearize")?;
    corpus.save(&a.output).stage("write-corpus")?;
    log::info!("{} passages from {} triplets, digest {}", corpus.len(), triplets.len(), corpus.digest());
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path)
        .with_context(|| path.display().to_string())
        .stage("load-corpus")
}

fn load_sparse(path: &Path) -> Result<SparseIndex> {
    SparseIndex::load(path)
        .with_context(|| path.display().to_string())
        .stage("load-sparse-index")
}

fn load_dense(path: &Path) -> Result<DenseIndex> {
    DenseIndex::load(path)
        .with_context(|| path.display().to_string())
        .stage("load-dense-index")
}

fn cmd_index_sparse(a: IndexSparseArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let params = Bm25Params {
        k1: a.k1,
        b: a.b,
        epsilon: a.epsilon,
    };
    let index = build_sparse_index(&corpus, params).stage("index-sparse")?;
    index.save(&a.output).stage("write-sparse-index")?;
    log::info!("{} terms over {} passages", index.vocab_len(), index.num_docs());
    Ok(())
}

#[derive(Serialize)]
struct Hit<'a> {
    rank: usize,
    passage_id: usize,
    score: f64,
    provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
}

fn write_hits(hits: &[ScoredPassage], corpus: Option<&Corpus>) -> Result<()> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (i, h) in hits.iter().enumerate() {
        let text = match corpus {
            Some(c) => Some(
                c.get(h.passage_id)
                    .map(|p| p.text.as_str())
                    .ok_or_else(|| anyhow!("passage {} not in corpus", h.passage_id))?,
            ),
            None => None,
        };
        let hit = Hit {
            rank: i + 1,
            passage_id: h.passage_id,
            score: h.score,
            provenance: h.provenance,
            text,
        };
        serde_json::to_writer(&mut out, &hit)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn check_digest(what: &str, index_digest: &str, corpus: &Corpus) -> Result<()> {
    if index_digest != corpus.digest() {
        bail!(
            "corpus digest mismatch: {what} was built for {index_digest}, corpus is {}",
            corpus.digest()
        );
    }
    Ok(())
}

fn cmd_search_sparse(a: SearchSparseArgs) -> Result<()> {
    let index = load_sparse(&a.index)?;
    let corpus = a.corpus.as_deref().map(load_corpus).transpose()?;
    if let Some(c) = &corpus {
        check_digest("sparse index", index.corpus_digest(), c).stage("check-digest")?;
    }
    write_hits(&index.search(&a.query, a.n), corpus.as_ref()).stage("write-output")
}

/// Reads `<path>.texts.jsonl`: one `{role, text}` object per vector row.
fn load_vecfile_provider(path: &Path) -> Result<PrecomputedProvider> {
    #[derive(Deserialize)]
    struct Row {
        role: EmbedRole,
        text: String,
    }
    let vectors = VectorFile::load(path).with_context(|| path.display().to_string())?;
    let mut texts_path = path.as_os_str().to_owned();
    texts_path.push(".texts.jsonl");
    let texts_path = PathBuf::from(texts_path);
    let file = File::open(&texts_path).with_context(|| texts_path.display().to_string())?;
    let mut provider = PrecomputedProvider::new(vectors.dim())?;
    let mut count = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", texts_path.display(), i + 1))?;
        if count >= vectors.count() {
            bail!("{} has more rows than the vector file", texts_path.display());
        }
        provider.insert(row.role, &row.text, vectors.row(count).to_vec())?;
        count += 1;
    }
    if count != vectors.count() {
        bail!("{} has {count} rows, vector file has {}", texts_path.display(), vectors.count());
    }
    Ok(provider)
}

fn make_provider(spec: &ProviderSpec) -> Result<Box<dyn EmbeddingProvider>> {
    Ok(match spec {
        ProviderSpec::Hash(dim) => Box::new(HashingProvider::new(*dim)?),
        ProviderSpec::VecFile(path) => Box::new(load_vecfile_provider(path).stage("load-vectors")?),
        ProviderSpec::Service(url) => Box::new(HttpProvider::new(url.clone())),
    })
}

fn make_scorer(spec: &ScorerSpec) -> Box<dyn RerankScorer> {
    match spec {
        ScorerSpec::Lexical => Box::new(LexicalOverlapScorer),
        ScorerSpec::Service(url) => Box::new(HttpScorer::new(url.clone())),
    }
}

fn cmd_index_dense(a: IndexDenseArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let index = match (&a.vectors, &a.provider) {
        (Some(path), _) => {
            let vectors = VectorFile::load(path)
                .with_context(|| path.display().to_string())
                .stage("load-vectors")?;
            let fingerprint = format!("precomputed:dim={}", vectors.dim());
            DenseIndex::from_vectors(&corpus, vectors, fingerprint).stage("index-dense")?
        }
        (None, Some(spec)) => {
            let provider = make_provider(spec)?;
            build_dense_index(&corpus, provider.as_ref(), a.batch_size).stage("embed-passages")?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    index.save(&a.output).stage("write-dense-index")?;
    log::info!("{} vectors of dim {}, encoder {}", index.len(), index.dim(), index.fingerprint());
    Ok(())
}

fn cmd_search_dense(a: SearchDenseArgs) -> Result<()> {
    let index = load_dense(&a.index)?;
    let corpus = a.corpus.as_deref().map(load_corpus).transpose()?;
    if let Some(c) = &corpus {
        check_digest("dense index", index.corpus_digest(), c).stage("check-digest")?;
    }
    let provider = make_provider(&a.provider)?;
    if provider.fingerprint() != index.fingerprint() {
        return Err(triplet_retrieval::Error::ProviderMismatch {
            index: index.fingerprint().to_owned(),
            provider: provider.fingerprint(),
        })
        .stage("check-provider");
    }
    let q = provider
        .embed(&[a.query.as_str()], EmbedRole::Query)
        .stage("embed-query")?
        .pop()
        .ok_or_else(|| anyhow!("provider returned no vector"))?;
    let hits = index.search(&q, a.n).stage("search-dense")?;
    write_hits(&hits, corpus.as_ref()).stage("write-output")
}

/// Loaded artifacts behind a retrieval run.
struct Loaded {
    corpus: Corpus,
    sparse: SparseIndex,
    dense: DenseIndex,
    provider: Box<dyn EmbeddingProvider>,
    scorer: Option<Box<dyn RerankScorer>>,
    config: PipelineConfig,
}

impl Loaded {
    fn open(a: &PipelineArgs) -> Result<Self> {
        let config = PipelineConfig {
            n_per_retriever: a.n,
            top_k: a.k,
            rerank_enabled: !a.no_rerank,
            filter_mode: a.filter,
        };
        config.validate().stage("config")?;
        Ok(Self {
            corpus: load_corpus(&a.corpus)?,
            sparse: load_sparse(&a.sparse)?,
            dense: load_dense(&a.dense)?,
            provider: make_provider(&a.provider)?,
            scorer: if a.no_rerank { None } else { a.scorer.as_ref().map(make_scorer) },
            config,
        })
    }

    fn pipeline(&self) -> Result<Pipeline<'_>> {
        let retriever = Retriever::new(
            &self.corpus,
            &self.sparse,
            &self.dense,
            self.provider.as_ref(),
            self.scorer.as_deref(),
        )
        .stage("check-indexes")?;
        Ok(Pipeline {
            retriever,
            config: self.config,
        })
    }
}

fn read_choices(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<()> {
    let loaded = Loaded::open(&a.pipeline)?;
    let pipeline = loaded.pipeline()?;
    let query = RetrievalQuery::new(a.question, a.choice.clone()).stage("parse-query")?;
    let choices = match &a.choices {
        Some(path) => read_choices(path).stage("read-choices")?,
        None => vec![a.choice],
    };
    let hits = pipeline.run(&query, &choices).stage("retrieve")?;
    write_hits(&hits, Some(&loaded.corpus)).stage("write-output")
}

#[derive(Serialize)]
struct Summary<'a> {
    accuracy: f64,
    correct: usize,
    total: usize,
    config_digest: String,
    dataset_digest: String,
    corpus_digest: &'a str,
    rerank_scorer: Option<String>,
    choice_scorer: String,
    config: &'a RunConfig,
}

/// Everything that determines eval output, hashed into `config_digest`.
#[derive(Serialize)]
struct RunConfig {
    n_per_retriever: usize,
    top_k: usize,
    rerank_enabled: bool,
    filter: FilterMode,
    provider: String,
    rerank_scorer: Option<String>,
    choice_scorer: String,
    separator: &'static str,
    corpus_digest: String,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let loaded = Loaded::open(&a.pipeline)?;
    let pipeline = loaded.pipeline()?;
    let dataset_bytes = fs::read(&a.dataset)
        .with_context(|| a.dataset.display().to_string())
        .stage("load-dataset")?;
    let dataset = load_dataset(&a.dataset).stage("load-dataset")?;
    let choice_scorer: Box<dyn ChoiceScorer> = match &a.choice_scorer {
        ScorerSpec::Lexical => Box::new(LexicalChoiceScorer::new(DEFAULT_SEPARATOR)),
        ScorerSpec::Service(url) => Box::new(HttpChoiceScorer::new(url.clone())),
    };

    let run_config = RunConfig {
        n_per_retriever: loaded.config.n_per_retriever,
        top_k: loaded.config.top_k,
        rerank_enabled: loaded.config.rerank_enabled,
        filter: loaded.config.filter_mode,
        provider: loaded.provider.fingerprint(),
        rerank_scorer: pipeline.retriever.scorer_name(),
        choice_scorer: choice_scorer.name(),
        separator: DEFAULT_SEPARATOR,
        corpus_digest: loaded.corpus.digest().to_owned(),
    };
    let config_digest = sha256_hex(&serde_json::to_vec(&run_config)?);

    let report = evaluate(&dataset, &pipeline, choice_scorer.as_ref(), DEFAULT_SEPARATOR).stage("evaluate")?;

    let write = || -> Result<()> {
        fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
        let mut preds = BufWriter::new(File::create(a.out.join("predictions.jsonl"))?);
        for r in &report.results {
            serde_json::to_writer(&mut preds, r)?;
            preds.write_all(b"\n")?;
        }
        preds.flush()?;
        let summary = Summary {
            accuracy: report.accuracy,
            correct: report.correct,
            total: report.total,
            config_digest,
            dataset_digest: sha256_hex(&dataset_bytes),
            corpus_digest: loaded.corpus.digest(),
            rerank_scorer: run_config.rerank_scorer.clone(),
            choice_scorer: run_config.choice_scorer.clone(),
            config: &run_config,
        };
        let mut f = File::create(a.out.join("summary.json"))?;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        f.write_all(b"\n")?;
        if a.export_inputs {
            let out = BufWriter::new(File::create(a.out.join("reader_inputs.jsonl"))?);
            triplet_retrieval::harness::export_reader_inputs(&dataset, &pipeline, DEFAULT_SEPARATOR, out)?;
        }
        Ok(())
    };
    write().stage("write-output")?;
    println!("accuracy {:.4} ({}/{})", report.accuracy, report.correct, report.total);
    Ok(())
}
