use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use immunorec::affinity::{
    agreement_strength, concordance_ratio, ignored_fraction_stats, kendall_tau, weighted_kappa,
};
use immunorec::evaluation::{
    cross_affinity_experiment, evaluate, summarize, write_cross_csv, EvalConfig,
};
use immunorec::ratings::{
    generate_synthetic, parse_movies_csv, parse_ratings, RatingsFormat, SyntheticConfig,
};
use immunorec::recommender::{recommend_top_n, write_predictions_csv};
use immunorec::{
    AffinityMeasure, AisParams, MeasureKind, NetworkState, PersonId, RatingsStore, VoteScale,
};

use crate::server::{self, AppState};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "immunorec",
    version,
    about = "Immune-network collaborative filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a ratings file into a store.
    Ingest(IngestArgs),
    /// Generate a clustered synthetic store.
    Synth(SynthArgs),
    /// Write a store back out as canonical CSV.
    Export(ExportArgs),
    /// Affinity between two persons.
    Affinity(AffinityArgs),
    /// Dataset statistics.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Train a network for one person and print top-N predictions.
    Recommend(RecommendArgs),
    /// Hidden-vote accuracy experiment.
    Evaluate(EvaluateArgs),
    /// Select antibodies with one measure and score them with another.
    Compare(CompareArgs),
    /// Run the HTTP session API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum StatsCommand {
    /// Fraction of Kendall pairs ignored because exactly one side ties.
    Ignored(IgnoredArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Eachmovie,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    /// Integers 0..=5.
    Raw5,
    /// Multiples of 0.2 in [0, 1].
    Unit,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Defaults to unit for csv and raw5 for eachmovie.
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Optional `movie_id,title` metadata.
    #[arg(long)]
    movies: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    clusters: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    users: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    movies: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    votes: u32,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=5))]
    noise: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    store: PathBuf,
    /// Ratings CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write `movie_id,title` metadata here.
    #[arg(long)]
    movies_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AffinityArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    a: u32,
    #[arg(long)]
    b: u32,
    #[arg(long, default_value = "kappa")]
    measure: MeasureKind,
    #[arg(long, default_value_t = AffinityMeasure::DEFAULT_MIN_COMMON)]
    min_common: usize,
}

#[derive(Debug, Args)]
struct IgnoredArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pairs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = AffinityMeasure::DEFAULT_MIN_COMMON)]
    min_common: usize,
    /// Per-pair CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NetworkArgs {
    /// AIS parameters as flat `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = AffinityMeasure::DEFAULT_MIN_COMMON)]
    min_common: usize,
}

#[derive(Debug, Args)]
struct RecommendArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    user: u32,
    #[arg(long, default_value = "kappa")]
    measure: MeasureKind,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    top: u64,
    /// Also rank movies the user already voted.
    #[arg(long)]
    include_seen: bool,
    /// Predictions CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump `step,person_id,concentration` for every step.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[command(flatten)]
    network: NetworkArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    users: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    hides: u64,
    /// Persons with fewer votes are never sampled.
    #[arg(long, default_value_t = 21, value_parser = clap::value_parser!(u64).range(2..))]
    min_votes: u64,
    #[arg(long, default_value = "kappa")]
    measure: MeasureKind,
    /// Directory for per_user.csv, histogram.csv and summary.txt.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    network: NetworkArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    user: u32,
    #[arg(long, default_value = "kappa")]
    select: MeasureKind,
    #[arg(long, default_value = "tau")]
    compare: MeasureKind,
    /// Paired CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    network: NetworkArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Idle seconds before a session is dropped.
    #[arg(long, default_value_t = 3600)]
    session_ttl: u64,
    #[command(flatten)]
    network: NetworkArgs,
}

/// Anything that aborts a command after arguments parsed: bad files or data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct DataFailure(String);

impl DataFailure {
    fn from_display(e: impl std::fmt::Display) -> Self {
        DataFailure(e.to_string())
    }

    fn at(path: &Path, e: impl std::fmt::Display) -> Self {
        DataFailure(format!("{}: {e}", path.display()))
    }
}

type CmdResult = Result<(), DataFailure>;

/// Parses `args` (including the program name) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Export(a) => export(a),
        Command::Affinity(a) => affinity(a),
        Command::Stats(StatsCommand::Ignored(a)) => stats_ignored(a),
        Command::Recommend(a) => recommend(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Compare(a) => compare(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, DataFailure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| DataFailure::at(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, DataFailure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| DataFailure::at(path, e))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, DataFailure> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_store(path: &Path) -> Result<RatingsStore, DataFailure> {
    RatingsStore::load(open(path)?).map_err(|e| DataFailure::at(path, e))
}

fn save_store(store: &RatingsStore, path: &Path) -> CmdResult {
    let mut out = create(path)?;
    store.save(&mut out).map_err(|e| DataFailure::at(path, e))?;
    out.flush().map_err(|e| DataFailure::at(path, e))
}

fn person(store: &RatingsStore, id: u32) -> Result<&immunorec::Profile, DataFailure> {
    store
        .profile(PersonId(id))
        .ok_or_else(|| DataFailure(format!("person {id} is not in the store")))
}

fn load_params(args: &NetworkArgs) -> Result<AisParams, DataFailure> {
    let mut params = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| DataFailure::at(path, e))?;
            AisParams::from_toml_str(&text).map_err(|e| DataFailure::at(path, e))?
        }
        None => AisParams::default(),
    };
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    Ok(params)
}

fn measure(kind: MeasureKind, args: &NetworkArgs) -> AffinityMeasure {
    AffinityMeasure::new(kind).with_min_common(args.min_common)
}

fn ingest(a: IngestArgs) -> CmdResult {
    let (format, default_scale) = match a.format {
        FormatArg::Csv => (RatingsFormat::Csv, VoteScale::UnitInterval),
        FormatArg::Eachmovie => (RatingsFormat::EachMovie, VoteScale::ZeroToFive),
    };
    let scale = match a.scale {
        Some(ScaleArg::Raw5) => VoteScale::ZeroToFive,
        Some(ScaleArg::Unit) => VoteScale::UnitInterval,
        None => default_scale,
    };
    let mut store =
        parse_ratings(open(&a.input)?, format, scale).map_err(|e| DataFailure::at(&a.input, e))?;
    if let Some(path) = &a.movies {
        let movies = parse_movies_csv(open(path)?).map_err(|e| DataFailure::at(path, e))?;
        store
            .attach_movies(movies)
            .map_err(|e| DataFailure::at(path, e))?;
    }
    save_store(&store, &a.out)?;
    println!(
        "{} persons, {} votes",
        store.person_count(),
        store.vote_count()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> CmdResult {
    let config = SyntheticConfig {
        cluster_count: a.clusters as usize,
        users_per_cluster: a.users as usize,
        movies: a.movies as usize,
        votes_per_user: a.votes as usize,
        noise_categories: a.noise,
        seed: a.seed,
    };
    let store = generate_synthetic(&config).map_err(DataFailure::from_display)?;
    save_store(&store, &a.out)?;
    println!(
        "{} persons, {} votes",
        store.person_count(),
        store.vote_count()
    );
    Ok(())
}

fn export(a: ExportArgs) -> CmdResult {
    let store = load_store(&a.store)?;
    let mut out = output(a.out.as_deref())?;
    store
        .write_csv(&mut out)
        .map_err(DataFailure::from_display)?;
    out.flush().map_err(DataFailure::from_display)?;
    if let Some(path) = &a.movies_out {
        let mut out = create(path)?;
        store
            .write_movies_csv(&mut out)
            .map_err(|e| DataFailure::at(path, e))?;
        out.flush().map_err(|e| DataFailure::at(path, e))?;
    }
    Ok(())
}

/// Human-readable affinity report; the first line is `<measure> <value>`.
pub fn affinity_report(
    a: &immunorec::Profile,
    b: &immunorec::Profile,
    kind: MeasureKind,
    min_common: usize,
) -> Result<String, immunorec::Insufficient> {
    let mut s = String::new();
    match kind {
        MeasureKind::WeightedKappa => {
            let r = weighted_kappa(a, b, min_common)?;
            writeln!(s, "kappa {:.4}", r.kappa).unwrap();
            writeln!(s, "n_common {}", r.n_common).unwrap();
            writeln!(s, "weight_sum {}", r.weight_sum).unwrap();
            writeln!(
                s,
                "agreement (rows: person {} votes 1..6, columns: person {})",
                a.person_id, b.person_id
            )
            .unwrap();
            for row in &r.agreement {
                let cells: Vec<String> = row.iter().map(u32::to_string).collect();
                writeln!(s, "  {}", cells.join(" ")).unwrap();
            }
            writeln!(s, "band {}", agreement_strength(r.kappa, kind)).unwrap();
        }
        MeasureKind::KendallTau => {
            let r = kendall_tau(a, b, min_common)?;
            writeln!(
                s,
                "tau {:.4} C={} D={} ignored={}",
                r.tau, r.concordant, r.discordant, r.ignored
            )
            .unwrap();
            writeln!(s, "n_common {}", r.n_common).unwrap();
            writeln!(s, "S {}", r.s).unwrap();
            match concordance_ratio(r.tau) {
                Some(ratio) => writeln!(s, "concordance_ratio {ratio:.4}").unwrap(),
                None => writeln!(s, "concordance_ratio undefined").unwrap(),
            }
            writeln!(s, "band {}", agreement_strength(r.tau, kind)).unwrap();
        }
    }
    Ok(s)
}

fn affinity(a: AffinityArgs) -> CmdResult {
    let store = load_store(&a.store)?;
    let (pa, pb) = (person(&store, a.a)?, person(&store, a.b)?);
    let report = affinity_report(
        pa,
        pb,
        a.measure,
        a.min_common.max(AffinityMeasure::DEFAULT_MIN_COMMON),
    )
    .map_err(DataFailure::from_display)?;
    print!("{report}");
    Ok(())
}

fn stats_ignored(a: IgnoredArgs) -> CmdResult {
    let store = load_store(&a.store)?;
    let stats = ignored_fraction_stats(&store, a.pairs as usize, a.min_common, a.seed)
        .map_err(DataFailure::from_display)?;
    let mut out = output(a.out.as_deref())?;
    stats
        .write_csv(&mut out)
        .map_err(DataFailure::from_display)?;
    out.flush().map_err(DataFailure::from_display)?;
    if a.out.is_some() {
        println!(
            "mean ignored fraction {:.6} over {} pairs",
            stats.mean,
            stats.pairs.len()
        );
    }
    Ok(())
}

fn recommend(a: RecommendArgs) -> CmdResult {
    let store = load_store(&a.store)?;
    let antigen = person(&store, a.user)?.clone();
    let params = load_params(&a.network)?;
    let mut state = NetworkState::init(antigen, &store, measure(a.measure, &a.network), params)
        .map_err(DataFailure::from_display)?;

    let reason = match &a.trajectory {
        Some(path) => {
            let mut rows = String::from("step,person_id,concentration\n");
            let mut dump = |s: &NetworkState<&RatingsStore>| {
                for ab in s.pool() {
                    writeln!(
                        rows,
                        "{},{},{}",
                        s.steps_taken(),
                        ab.person_id,
                        ab.concentration
                    )
                    .unwrap();
                }
            };
            dump(&state);
            let reason = state.run_to_convergence_with(dump);
            fs::write(path, rows).map_err(|e| DataFailure::at(path, e))?;
            reason
        }
        None => state.run_to_convergence(),
    };
    eprintln!(
        "pool {} after {} steps ({}), {} deletions",
        state.pool().len(),
        state.steps_taken(),
        reason.as_str(),
        state.deletions()
    );

    let predictions = recommend_top_n(&state, a.top as usize, !a.include_seen);
    let mut out = output(a.out.as_deref())?;
    write_predictions_csv(&predictions, &mut out).map_err(DataFailure::from_display)?;
    out.flush().map_err(DataFailure::from_display)
}

fn evaluate_cmd(a: EvaluateArgs) -> CmdResult {
    let store = load_store(&a.store)?;
    let config = EvalConfig {
        user_count: a.users as usize,
        min_votes: a.min_votes as usize,
        hides_per_user: a.hides as usize,
        measure: measure(a.measure, &a.network),
        ais: load_params(&a.network)?,
        seed: a.network.seed.unwrap_or(0),
    };
    let report = evaluate(&store, &config).map_err(DataFailure::from_display)?;
    let summary = summarize(&report);

    fs::create_dir_all(&a.out).map_err(|e| DataFailure::at(&a.out, e))?;
    let per_user = a.out.join("per_user.csv");
    let mut out = create(&per_user)?;
    report
        .write_per_user_csv(&mut out)
        .map_err(|e| DataFailure::at(&per_user, e))?;
    out.flush().map_err(|e| DataFailure::at(&per_user, e))?;

    let histogram = a.out.join("histogram.csv");
    let mut out = create(&histogram)?;
    summary
        .write_histogram_csv(&mut out)
        .map_err(|e| DataFailure::at(&histogram, e))?;
    out.flush().map_err(|e| DataFailure::at(&histogram, e))?;

    let text = summary.text();
    let summary_path = a.out.join("summary.txt");
    fs::write(&summary_path, &text).map_err(|e| DataFailure::at(&summary_path, e))?;
    print!("{text}");
    Ok(())
}

fn compare(a: CompareArgs) -> CmdResult {
    let store = load_store(&a.store)?;
    let antigen = person(&store, a.user)?;
    let params = load_params(&a.network)?;
    let rows = cross_affinity_experiment(
        &store,
        antigen,
        measure(a.select, &a.network),
        measure(a.compare, &a.network),
        &params,
    )
    .map_err(DataFailure::from_display)?;
    let mut out = output(a.out.as_deref())?;
    write_cross_csv(&rows, &mut out).map_err(DataFailure::from_display)?;
    out.flush().map_err(DataFailure::from_display)
}

fn serve(a: ServeArgs) -> CmdResult {
    let store = load_store(&a.store)?;
    let params = load_params(&a.network)?;
    let state = Arc::new(AppState::new(
        store,
        params,
        Duration::from_secs(a.session_ttl),
    ));
    let runtime = tokio::runtime::Runtime::new().map_err(DataFailure::from_display)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .map_err(|e| DataFailure(format!("{}: {e}", a.addr)))?;
        eprintln!(
            "listening on {}",
            listener.local_addr().map_err(DataFailure::from_display)?
        );
        server::serve(listener, state)
            .await
            .map_err(DataFailure::from_display)
    })
}
