use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use qbaf_engine::canonical::{to_canonical_line, to_canonical_string};
use qbaf_engine::contest::{Artifacts, CaseInput, ContestEdit};
use qbaf_engine::eval::{evaluate_run, infer_dataset, Gains, LabelledDataset};
use qbaf_engine::llm::{
    Generator, HttpBackendConfig, LlmBackend, MockScript, OpenAiCompatibleBackend, ScriptedBackend,
};
use qbaf_engine::ontology::{
    construct_ontology, load_corpus, select_options, LlmOntologyMiner, OntologyFile, SelectionCriteria,
};
use qbaf_engine::pipeline::{build_general_qbafs, ArgumentScheme, MiningConfig, PipelineError};
use qbaf_engine::service::{serve, ServiceState};
use qbaf_engine::store::{write_artifacts, ArtifactStore, StoreError};
use qbaf_engine::Semantics;

#[derive(Parser)]
#[command(name = "qbaf-engine", version, about = "Contestable decision support with general QBAFs")]
struct Cli {
    /// Artifact store directory.
    #[arg(long, global = true, default_value = "artifacts", env = "QBAF_STORE")]
    store: PathBuf,
    /// Scripted backend (JSON) instead of a live model.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    /// JSON config for an OpenAI-compatible endpoint. Falls back to QBAF_LLM_* variables.
    #[arg(long, global = true)]
    llm_config: Option<PathBuf>,
    /// Attempts per structured generation.
    #[arg(long, global = true, default_value_t = 3)]
    max_attempts: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine a decision-option ontology from a chunked corpus.
    BuildOntology(BuildOntologyArgs),
    /// Build one general QBAF per selected option and initialise the store.
    BuildQbafs(BuildQbafsArgs),
    /// Score every option for one case.
    Infer(InferArgs),
    /// Infer a labelled dataset and report LMR and NDCG.
    Evaluate(EvaluateArgs),
    /// Apply one contestation edit.
    Contest(ContestArgs),
    /// Print the contestation log.
    Log,
    /// Write the artifacts of an earlier revision to a directory.
    Replay(ReplayArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct BuildOntologyArgs {
    /// JSON-Lines chunks: {"chunk_id","doc_id","ordinal","text"}.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "ontology.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    min_documents: usize,
    /// Also select entities that have children.
    #[arg(long)]
    allow_inner: bool,
    /// Also select entities under more than one root.
    #[arg(long)]
    allow_multi_root: bool,
}

#[derive(Args)]
struct BuildQbafsArgs {
    #[arg(long, default_value = "ontology.json")]
    ontology: PathBuf,
    #[arg(long, default_value_t = 1)]
    depth: u32,
    /// Estimate the root base score instead of using 0.5.
    #[arg(long)]
    score_root: bool,
    /// Argument scheme JSON included in mining prompts.
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[arg(long)]
    max_breadth: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    /// Vignette text, or a JSON case {"case_id","case_text","params"} when the file ends in .json.
    #[arg(long, conflicts_with = "case_text")]
    case_file: Option<PathBuf>,
    #[arg(long)]
    case_text: Option<String>,
    /// Applies stored per-case overrides.
    #[arg(long)]
    case_id: Option<String>,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory with cases.jsonl and labels.jsonl.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    gain_recommended: f64,
    #[arg(long, default_value_t = 1.0)]
    gain_maybe: f64,
    #[arg(long, default_value_t = 0.0)]
    gain_not: f64,
    #[arg(long, default_value = "general-qbaf")]
    method: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ContestArgs {
    /// Edit JSON, or - for standard input.
    #[arg(long)]
    edit: PathBuf,
    #[arg(long)]
    justification: String,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    to: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Base directory for relative dataset paths in /evaluate.
    #[arg(long)]
    datasets: Option<PathBuf>,
}

type CliResult = Result<(), String>;

fn generator(cli: &Cli) -> Result<Option<Generator>, String> {
    let backend: Arc<dyn LlmBackend> = if let Some(path) = &cli.mock_script {
        let script = MockScript::from_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Arc::new(ScriptedBackend::new(script))
    } else {
        let config = match &cli.llm_config {
            Some(path) => Some(HttpBackendConfig::from_file(path).map_err(|e| format!("{}: {e}", path.display()))?),
            None => HttpBackendConfig::from_env(),
        };
        match config {
            Some(c) => Arc::new(OpenAiCompatibleBackend::new(c).map_err(|e| e.to_string())?),
            None => return Ok(None),
        }
    };
    Ok(Some(Generator::new(backend).with_max_attempts(cli.max_attempts)))
}

fn require_generator(cli: &Cli) -> Result<Generator, String> {
    generator(cli)?.ok_or_else(|| {
        "no language model configured: pass --mock-script or --llm-config, or set QBAF_LLM_ENDPOINT and QBAF_LLM_MODEL"
            .to_owned()
    })
}

fn open_store(path: &Path) -> Result<ArtifactStore, String> {
    ArtifactStore::open(path).map_err(|e| match e {
        StoreError::Missing(_) => format!("no artifacts in {}; run build-qbafs first", path.display()),
        other => other.to_string(),
    })
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    std::fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn build_ontology(cli: &Cli, args: &BuildOntologyArgs) -> CliResult {
    let documents = load_corpus(&args.corpus).map_err(|e| e.to_string())?;
    let generator = require_generator(cli)?;
    let mut miner = LlmOntologyMiner::new(&generator);
    let construction = construct_ontology(&documents, &mut miner).map_err(|e| e.to_string())?;
    for edge in &construction.rejected_edges {
        eprintln!("rejected edge {} -> {} in {}: {}", edge.parent, edge.child, edge.chunk, edge.reason);
    }
    let criteria = SelectionCriteria {
        min_documents: args.min_documents,
        leaf_only: !args.allow_inner,
        single_root_ancestor: !args.allow_multi_root,
    };
    let selected = select_options(&construction.ontology, criteria);
    let file =
        OntologyFile { ontology: construction.ontology, options: selected.iter().map(|e| e.id.clone()).collect() };
    write_file(&args.out, &to_canonical_string(&file).map_err(|e| e.to_string())?)?;
    println!("{} entities, {} selected options", file.ontology.entities.len(), selected.len());
    for e in &selected {
        println!("{}\t{}", e.id, e.name);
    }
    Ok(())
}

fn build_qbafs(cli: &Cli, args: &BuildQbafsArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.ontology).map_err(|e| format!("{}: {e}", args.ontology.display()))?;
    let file: OntologyFile = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", args.ontology.display()))?;
    let scheme = match &args.scheme {
        Some(path) => Some(ArgumentScheme::from_file(path).map_err(|e| e.to_string())?),
        None => None,
    };
    let config = MiningConfig {
        depth: args.depth,
        score_root: args.score_root,
        scheme,
        max_breadth: args.max_breadth,
        max_attempts: cli.max_attempts,
    };
    let options: Vec<_> = file
        .options
        .iter()
        .map(|id| {
            file.ontology.entity(id).cloned().ok_or_else(|| format!("selected option {id} is not in the ontology"))
        })
        .collect::<Result<_, _>>()?;
    let generator = require_generator(cli)?;
    let outcome = build_general_qbafs(&generator, &file.ontology, &options, &config).map_err(|e| e.to_string())?;
    for event in &outcome.default_events {
        eprintln!("{}/{}: base score defaulted to 0.5 ({})", event.option, event.argument, event.reason);
    }
    let artifacts = Artifacts {
        ontology: file,
        schema: outcome.schema,
        generals: outcome.generals.into_iter().map(|g| (g.option().clone(), g)).collect(),
        case_overrides: Default::default(),
    };
    let store = ArtifactStore::init(&cli.store, artifacts, Some(config)).map_err(|e| e.to_string())?;
    let snap = store.snapshot();
    store
        .write_report(&format!("build-r{}", snap.revision), &generator.usage_report(false))
        .map_err(|e| e.to_string())?;
    println!(
        "revision {}: {} frameworks, {} parameters",
        snap.revision,
        snap.artifacts.generals.len(),
        snap.artifacts.schema.len()
    );
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        for f in &outcome.failures {
            eprintln!("{}: {}", f.option, f.error);
        }
        Err(format!("{} option(s) failed", outcome.failures.len()))
    }
}

fn read_case(args: &InferArgs) -> Result<CaseInput, String> {
    let mut input = match (&args.case_file, &args.case_text) {
        (Some(path), _) => {
            let text = if path.as_os_str() == "-" {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s).map_err(|e| e.to_string())?;
                s
            } else {
                std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?
            };
            if path.extension().is_some_and(|x| x == "json") {
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
            } else {
                CaseInput { case_text: Some(text), ..Default::default() }
            }
        }
        (None, Some(text)) => CaseInput { case_text: Some(text.clone()), ..Default::default() },
        (None, None) if args.case_id.is_some() => CaseInput::default(),
        (None, None) => return Err("pass --case-file, --case-text or --case-id".into()),
    };
    if args.case_id.is_some() {
        input.case_id = args.case_id.clone();
    }
    Ok(input)
}

fn infer(cli: &Cli, args: &InferArgs) -> CliResult {
    let store = open_store(&cli.store)?;
    let snap = store.snapshot();
    let input = read_case(args)?;
    let generator = generator(cli)?;
    let inference = snap.artifacts.infer(generator.as_ref(), &input, Semantics::default()).map_err(|e| match e {
        PipelineError::Extraction { reason, last_output } => {
            format!("parameter extraction failed: {reason}\nraw model output:\n{last_output}")
        }
        other => other.to_string(),
    })?;
    let output = if args.json {
        let value = serde_json::json!({
            "revision": snap.revision,
            "params": inference.params,
            "results": inference.ranked(),
            "failures": inference.failures,
        });
        to_canonical_string(&value).map_err(|e| e.to_string())?
    } else {
        let mut out = format!(
            "revision {}\nparameters {}\n",
            snap.revision,
            to_canonical_line(&inference.params).unwrap_or_default()
        );
        for (rank, r) in inference.ranked().iter().enumerate() {
            out.push_str(&format!("{:>2}. {:.4}  {}", rank + 1, r.score, r.option_name));
            if !r.removed.is_empty() {
                out.push_str(&format!("  ({} argument(s) not applicable)", r.removed.len()));
            }
            out.push('\n');
        }
        for f in &inference.failures {
            out.push_str(&format!("failed: {}: {}\n", f.option, f.error));
        }
        out
    };
    match &args.out {
        Some(path) => write_file(path, &output)?,
        None => print!("{output}"),
    }
    if inference.failures.is_empty() {
        Ok(())
    } else {
        Err(format!("{} option(s) could not be scored", inference.failures.len()))
    }
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> CliResult {
    let store = open_store(&cli.store)?;
    let snap = store.snapshot();
    let dataset = LabelledDataset::load(&args.dataset).map_err(|e| e.to_string())?;
    let gains = Gains {
        recommended: args.gain_recommended,
        maybe_recommended: args.gain_maybe,
        not_recommended: args.gain_not,
    };
    let generator = generator(cli)?;
    let results = infer_dataset(generator.as_ref(), &snap.artifacts, &dataset, Semantics::default())
        .map_err(|e| e.to_string())?;
    let usage = generator.as_ref().map(|g| g.usage_report(true));
    let report = evaluate_run(&results, &dataset, &gains, usage).map_err(|e| e.to_string())?;
    let path = store.write_report(&format!("evaluate-r{}", snap.revision), &report).map_err(|e| e.to_string())?;
    if args.json {
        print!("{}", to_canonical_string(&report).map_err(|e| e.to_string())?);
    } else {
        print!("{}", report.table(&args.method));
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn contest(cli: &Cli, args: &ContestArgs) -> CliResult {
    let text = if args.edit.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| e.to_string())?;
        s
    } else {
        std::fs::read_to_string(&args.edit).map_err(|e| format!("{}: {e}", args.edit.display()))?
    };
    let edit: ContestEdit = serde_json::from_str(&text).map_err(|e| format!("invalid edit: {e}"))?;
    let mut store = open_store(&cli.store)?;
    let entry = store.apply(edit, &args.justification).map_err(|e| e.to_string())?;
    println!("revision {}", entry.revision);
    Ok(())
}

fn log(cli: &Cli) -> CliResult {
    let store = open_store(&cli.store)?;
    for entry in store.log() {
        println!("{}", to_canonical_line(entry).map_err(|e| e.to_string())?);
    }
    Ok(())
}

fn replay(cli: &Cli, args: &ReplayArgs) -> CliResult {
    let store = open_store(&cli.store)?;
    let snap = store.replay_to(args.to).map_err(|e| e.to_string())?;
    write_artifacts(&args.out, &snap.artifacts).map_err(|e| e.to_string())?;
    println!("revision {} written to {}", snap.revision, args.out.display());
    Ok(())
}

fn run_server(cli: &Cli, args: &ServeArgs) -> CliResult {
    let store = open_store(&cli.store)?;
    let state = ServiceState::new(store, generator(cli)?, args.datasets.clone());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(serve(args.addr, state)).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("QBAF_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let result = match &cli.command {
        Command::BuildOntology(a) => build_ontology(&cli, a),
        Command::BuildQbafs(a) => build_qbafs(&cli, a),
        Command::Infer(a) => infer(&cli, a),
        Command::Evaluate(a) => evaluate(&cli, a),
        Command::Contest(a) => contest(&cli, a),
        Command::Log => log(&cli),
        Command::Replay(a) => replay(&cli, a),
        Command::Serve(a) => run_server(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
