use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use facilitator_core::analysis::{self, ALL_MODELS};
use facilitator_core::analytics::DEFAULT_ELBOW_THRESHOLD;
use facilitator_core::domain::transcript;
use facilitator_core::embedding::{cache_path_for, Embedder, EmbedderConfig, EmbedderKind, DEFAULT_REMOTE_DIMENSION};
use facilitator_core::service::{self, http, ServiceConfig, SessionService};
use facilitator_core::sim::{self, Scenario};

#[derive(Debug, Parser)]
#[command(name = "facilitator", version, about = "Consensus facilitation server and analysis tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute alignment reports over a directory of transcripts.
    Analyze(AnalyzeArgs),
    /// Run scripted scenarios and write their transcripts.
    Simulate(SimulateArgs),
    /// Print a readable summary of one transcript.
    Replay {
        file: PathBuf,
    },
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// List the question bank.
    Questions,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "local")]
    embedder: EmbedderKind,
    #[arg(long, default_value_t = DEFAULT_REMOTE_DIMENSION)]
    dimension: usize,
    #[arg(long)]
    embedder_endpoint: Option<String>,
    /// Do not read or update `embedding-cache.json` in the transcript dir.
    #[arg(long)]
    no_cache: bool,
    #[arg(long, default_value_t = DEFAULT_ELBOW_THRESHOLD)]
    elbow_threshold: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, required = true, num_args = 1..)]
    scenario: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a).map(|()| ExitCode::SUCCESS),
        Command::Replay { file } => replay(&file),
        Command::Serve(a) => serve(a).map(|()| ExitCode::SUCCESS),
        Command::Questions => {
            for q in service::QuestionBank::builtin().all() {
                println!("{}\t{}\t{}", q.id, q.sdg_tag, q.text);
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}

fn analyze(a: AnalyzeArgs) -> anyhow::Result<ExitCode> {
    if !(a.elbow_threshold.is_finite() && a.elbow_threshold >= 0.0) {
        bail!("--elbow-threshold must be a non-negative number");
    }
    let paths = analysis::discover(&a.transcripts)
        .with_context(|| format!("cannot read {}", a.transcripts.display()))?;
    if paths.is_empty() {
        eprintln!("error: no transcripts found in {}", a.transcripts.display());
        return Ok(ExitCode::from(2));
    }
    let config = EmbedderConfig {
        kind: a.embedder,
        dimension: a.dimension,
        endpoint: a.embedder_endpoint,
        provider_id: None,
        cache: !a.no_cache,
    };
    let (loaded, mut errors) = analysis::load_all(&paths);
    let cache_path = cache_path_for(&a.transcripts);
    let embedder = config.build_cached(&cache_path).map_err(anyhow::Error::msg)?;
    let cached_before = embedder.len();
    let mut result = analysis::analyze(&loaded, &embedder, a.elbow_threshold);
    errors.append(&mut result.errors);
    errors.sort_by(|x, y| x.path.cmp(&y.path));

    if config.cache && embedder.len() != cached_before {
        embedder.save(&cache_path).map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    analysis::write_outputs(&result, &a.out).with_context(|| format!("cannot write to {}", a.out.display()))?;

    println!(
        "{} transcripts, {} sessions with consensus, {} occasions; embedder {}",
        paths.len() - errors.len(),
        result.consensus_sessions,
        result.occasions.len(),
        embedder.provider_id()
    );
    println!("mean similarity: {:.6} over {} occasions", result.by_model.total.mean_similarity, result.by_model.total.n_occasions);
    let elbow = result.elbows.get(ALL_MODELS).copied().flatten();
    println!("elbow: {}", elbow.map(|k| k.to_string()).unwrap_or_else(|| "none".into()));
    println!("reports written to {}", a.out.display());
    if errors.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for e in &errors {
        eprintln!("error: {}: {}", e.path.display(), e.message);
    }
    Ok(ExitCode::from(1))
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    for path in &a.scenario {
        let mut scenario = Scenario::load(path).with_context(|| format!("{}", path.display()))?;
        if let Some(seed) = a.seed {
            scenario.seed = seed;
        }
        let out = sim::run_to_dir(&scenario, &a.out).with_context(|| format!("{}", path.display()))?;
        let (_, session) = transcript::load(&out)?;
        println!(
            "{} -> {} ({} iterations, {})",
            path.display(),
            out.display(),
            session.iteration_count(),
            session.phase
        );
    }
    Ok(())
}

fn replay(file: &std::path::Path) -> anyhow::Result<ExitCode> {
    match transcript::load(file) {
        Ok((_, session)) => {
            print!("{}", analysis::summarize(&session));
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            match e.line() {
                Some(line) => eprintln!("error: {}: line {line}: {e}", file.display()),
                None => eprintln!("error: {}: {e}", file.display()),
            }
            Ok(ExitCode::FAILURE)
        }
    }
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let mut config = match &a.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    if let Some(dir) = a.data_dir {
        config.data_dir = dir;
    }
    if let Some(listen) = a.listen {
        config.listen = listen.to_string();
    }
    let gateway = service::gateway_from_config(&config);
    let listen = config.listen.clone();
    let svc = Arc::new(SessionService::open(config, gateway)?);
    for (id, r) in svc.resume_pending() {
        if let Err(e) = r {
            eprintln!("warning: session {id} could not be resumed: {e}");
        }
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .with_context(|| format!("cannot bind {listen}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        http::serve(svc, listener).await?;
        Ok(())
    })
}
