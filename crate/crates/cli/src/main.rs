use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::info;

use clarify_core::config::PipelineConfig;
use clarify_core::corpus::{read_jsonl, CorpusIndex, FixtureSearch, HttpSearch, WebSearch};
use clarify_core::harness::{
    self, load_dataset, read_record, render_tree, run_pipeline, write_records, Engine, FieldMapping, Question, Split,
};
use clarify_core::llm::{record_mode, CompletionBackend, FixtureStore, HttpBackend, ReplayBackend, ScriptedBackend};
use clarify_core::metrics::{AnswerExtractor, RemoteExtractor, WindowExtractor};
use clarify_core::rank::{load_exemplars, Exemplar, HashedCosineScorer, PassageScorer, RemoteScorer};

#[derive(Parser)]
#[command(name = "clarify", version, about = "Tree-of-clarifications question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSONL corpus of {"title","text"} records.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Split documents into passages of at most this many tokens.
        #[arg(long, default_value_t = 120)]
        passage_tokens: usize,
    },
    /// Run the pipeline over a dataset or a single question.
    Run(RunArgs),
    /// Score run records against a gold dataset.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ExtractorKind::Oracle)]
        extractor: ExtractorKind,
        /// Endpoint for the remote extractor.
        #[arg(long)]
        extractor_endpoint: Option<String>,
    },
    /// Print the clarification tree stored in a run record.
    ShowTree {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Live,
    Replay,
    Scripted,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExtractorKind {
    Oracle,
    Blind,
    Remote,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "question", required_unless_present = "question")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    question: Option<String>,
    /// Dataset split to run when --dataset is given (dev, test or train).
    #[arg(long, default_value = "dev")]
    split: String,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: BackendKind,
    /// Completion fixture directory. Written in live mode, read in replay mode.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Rule file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Completion endpoint for the live backend.
    #[arg(long, env = "TOC_LLM_ENDPOINT")]
    llm_endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    search_endpoint: Option<String>,
    /// Directory of recorded search responses.
    #[arg(long)]
    search_fixtures: Option<PathBuf>,
    #[arg(long)]
    scorer_endpoint: Option<String>,
    /// Exemplar file; defaults to the train split of --dataset.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    max_valid_nodes: Option<usize>,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Ingest {
            corpus,
            index,
            passage_tokens,
        } => ingest(&corpus, &index, passage_tokens),
        Command::Run(args) => run(args),
        Command::Eval {
            runs,
            gold,
            report,
            mapping,
            extractor,
            extractor_endpoint,
        } => eval(&runs, &gold, &report, mapping.as_deref(), extractor, extractor_endpoint),
        Command::ShowTree { run } => {
            let record = read_record(&run)?;
            println!("{}", record.aq);
            match &record.tree {
                Some(tree) => print!("{}", render_tree(tree)),
                None => println!("(no tree)"),
            }
            if let harness::RunStatus::Error { message } = &record.status {
                println!("error: {message}");
            }
            Ok(())
        }
    }
}

fn ingest(corpus: &Path, index: &Path, passage_tokens: usize) -> Result<()> {
    let reader = BufReader::new(File::open(corpus).with_context(|| format!("opening {}", corpus.display()))?);
    let idx = CorpusIndex::ingest(read_jsonl(reader), passage_tokens)?;
    idx.save(index)?;
    info!(passages = idx.doc_count(), "index written to {}", index.display());
    println!("{} passages indexed", idx.doc_count());
    Ok(())
}

fn build_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut config = match &args.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = args.max_depth {
        config.max_depth = d;
    }
    if let Some(n) = args.max_valid_nodes {
        config.max_valid_nodes = n;
    }
    config.validate()?;
    Ok(config)
}

fn build_backend(args: &RunArgs) -> Result<Box<dyn CompletionBackend>> {
    Ok(match args.backend {
        BackendKind::Scripted => {
            let path = args.script.as_ref().context("--script is required for the scripted backend")?;
            Box::new(ScriptedBackend::load(path)?)
        }
        BackendKind::Replay => {
            let dir = args.fixtures.as_ref().context("--fixtures is required for the replay backend")?;
            Box::new(ReplayBackend::new(FixtureStore::new(dir)))
        }
        BackendKind::Live => {
            let endpoint = args.llm_endpoint.as_ref().context("--llm-endpoint is required for the live backend")?;
            let mut http = HttpBackend::new(endpoint.clone())?.with_api_key(std::env::var("TOC_API_KEY").ok());
            if let Some(m) = &args.model {
                http = http.with_model(m.clone());
            }
            match &args.fixtures {
                Some(dir) => Box::new(record_mode(http, FixtureStore::new(dir))),
                None => Box::new(http),
            }
        }
    })
}

fn run(args: RunArgs) -> Result<()> {
    let config = build_config(&args)?;

    let (questions, mut exemplars): (Vec<Question>, Vec<Exemplar>) = match (&args.dataset, &args.question) {
        (Some(path), _) => {
            let mapping = args.mapping.as_deref().map(FieldMapping::load).transpose()?;
            let data = load_dataset(path, mapping.as_ref())?;
            let split = Split::parse(&args.split).with_context(|| format!("unknown split `{}`", args.split))?;
            let mut qs: Vec<Question> = data.split(split).iter().map(|e| Question::new(&e.id, &e.aq)).collect();
            if let Some(n) = args.limit {
                qs.truncate(n);
            }
            (qs, data.exemplars())
        }
        (None, Some(q)) => (vec![Question::new("question", q.clone())], Vec::new()),
        (None, None) => bail!("either --dataset or --question is required"),
    };
    if let Some(p) = &args.exemplars {
        exemplars = load_exemplars(p)?;
    }

    let index = args.index.as_deref().map(CorpusIndex::load).transpose()?;
    let web: Option<Box<dyn WebSearch>> = match (&args.search_endpoint, &args.search_fixtures) {
        (Some(ep), rec) => {
            let mut s = HttpSearch::new(ep.clone())?;
            if let Some(dir) = rec {
                s = s.recording_to(dir.clone());
            }
            Some(Box::new(s))
        }
        (None, Some(dir)) => Some(Box::new(FixtureSearch::new(dir.clone()))),
        (None, None) => None,
    };
    if index.is_none() && web.is_none() {
        bail!("no passage source: pass --index and/or a search endpoint or search fixtures");
    }
    let scorer: Box<dyn PassageScorer> = match &args.scorer_endpoint {
        Some(ep) => Box::new(RemoteScorer::new(ep.clone())?),
        None => Box::new(HashedCosineScorer),
    };
    let backend = build_backend(&args)?;

    let engine = Engine {
        index: index.as_ref(),
        web: web.as_deref(),
        backend: backend.as_ref(),
        scorer: scorer.as_ref(),
        exemplars: &exemplars,
        config: config.clone(),
    };
    let records = run_pipeline(&engine, &questions, args.parallel);
    let manifest = write_records(&args.out, &config, &records)?;
    let failed = manifest.records.iter().filter(|e| !e.ok).count();
    println!(
        "{} records written to {} ({} failed)",
        manifest.records.len(),
        args.out.display(),
        failed
    );
    if questions.len() == 1 {
        if let Some(a) = &records[0].record.answer {
            println!("\n{}", a.text);
        }
    }
    Ok(())
}

fn eval(
    runs: &Path,
    gold: &Path,
    report: &Path,
    mapping: Option<&Path>,
    kind: ExtractorKind,
    endpoint: Option<String>,
) -> Result<()> {
    let records = harness::load_records(runs)?;
    let mapping = mapping.map(FieldMapping::load).transpose()?;
    let data = load_dataset(gold, mapping.as_ref())?;
    let examples: Vec<_> = data.train.iter().chain(&data.dev).chain(&data.test).cloned().collect();
    let extractor: Box<dyn AnswerExtractor> = match kind {
        ExtractorKind::Oracle => Box::new(WindowExtractor::oracle()),
        ExtractorKind::Blind => Box::new(WindowExtractor::blind()),
        ExtractorKind::Remote => Box::new(RemoteExtractor::new(
            endpoint.context("--extractor-endpoint is required for the remote extractor")?,
        )?),
    };
    let evaluation = harness::evaluate(&records, &examples, extractor.as_ref())?;
    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(report, serde_json::to_vec_pretty(&evaluation)?)?;
    let r = &evaluation.report;
    println!("questions  {}", r.questions);
    println!("D-F1       {:.2}", r.d_f1);
    println!("ROUGE-L    {:.2}", r.rouge_l);
    println!("DR         {:.2}", r.dr);
    if let Some(a) = r.answer_f1 {
        println!("Answer-F1  {a:.2}");
    }
    for (k, v) in &evaluation.retrieval.ac_at {
        println!("AC@{k:<6} {v:.2}");
    }
    Ok(())
}
