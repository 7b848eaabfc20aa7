//! The `patchsearch` command line. Exit codes: 0 success, 1 usage, 2 data error, 3 internal.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use patchsearch::dataset::{
    generate_synthetic, load_annotations, sample_balanced, ClassAxis, SlideStore, SynthSpec,
    ANNOTATIONS_FILE,
};
use patchsearch::embedder::{embedder_by_name, write_embeddings_tsv};
use patchsearch::eval::{
    embed_queries, engine_run, engine_run_embedded, evaluate, random_run, sweep, sweep_tsv,
    EvalOptions, EvalReport, LabelAxis, MatchMode, RunOptions, SweepEntry, SweepGrid,
};
use patchsearch::index::{read_db_header, IndexEntry, ShardSet};
use patchsearch::pipeline::{
    build_database, load_database, write_build_output, BuildConfig, SplitConfig,
};
use patchsearch::query::{query, QueryResponse, QuerySpec, RegionSpec};
use patchsearch::{Magnification, PatchRecord};
use serde::Serialize;

use crate::config::{Config, ConfigError};
use crate::service::{serve, shutdown_signal, ApiError, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "patchsearch",
    version,
    about = "Build, query, evaluate and serve a patch search database"
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice; echoed in reports.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic tiled slides and annotations.
    Synth(SynthArgs),
    /// Extract patches, embed all orientations, shard and save a database.
    Build(BuildArgs),
    /// Query a database with a slide region and print ranked results.
    Query(QueryArgs),
    /// Score retrieval of held-out queries, optionally against a random baseline.
    Eval(EvalArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Write every database entry and its labels as TSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output store directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Synthetic spec (JSON or TOML); defaults to the built-in nine-class spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Output database file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated magnifications, e.g. 40X,10X.
    #[arg(long, value_delimiter = ',')]
    pub mag: Option<Vec<Magnification>>,
    #[arg(long)]
    pub queries_per_class: Option<usize>,
    #[arg(long)]
    pub db_per_class: Option<usize>,
    #[arg(long, value_enum)]
    pub axis: Option<ClassAxisArg>,
    #[arg(long)]
    pub n_shards: Option<usize>,
    #[arg(long)]
    pub embedder: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassAxisArg {
    Feature,
    Gleason,
    FeatureXOrgan,
}

impl From<ClassAxisArg> for ClassAxis {
    fn from(a: ClassAxisArg) -> Self {
        match a {
            ClassAxisArg::Feature => ClassAxis::Feature,
            ClassAxisArg::Gleason => ClassAxis::Gleason,
            ClassAxisArg::FeatureXOrgan => ClassAxis::FeatureXOrgan,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub slide: u32,
    /// Region origin in base (40X) pixels.
    #[arg(long)]
    pub x: u32,
    #[arg(long)]
    pub y: u32,
    /// Region size in pixels of the chosen magnification.
    #[arg(long, short = 'w')]
    pub w: u32,
    #[arg(long)]
    pub h: u32,
    #[arg(long, default_value = "40X")]
    pub mag: Magnification,
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep results overlapping the query region.
    #[arg(long)]
    pub include_self: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Query patch table (NDJSON); defaults to the database's query sidecar.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub axis: Option<LabelAxis>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Also run the random baseline and test the engine against it.
    #[arg(long)]
    pub random_baseline: bool,
    #[arg(long, value_delimiter = ',')]
    pub sweep_ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub sweep_mags: Option<Vec<Magnification>>,
    /// Database patches per class for each sweep point.
    #[arg(long, value_delimiter = ',')]
    pub sweep_sizes: Option<Vec<usize>>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub confusion_csv: Option<PathBuf>,
    #[arg(long)]
    pub sweep_tsv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Lenient,
    Strict,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub journal_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<patchsearch::Error> for CliError {
    fn from(e: patchsearch::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        if e.status.is_client_error() {
            CliError::Data(e.message)
        } else {
            CliError::Internal(e.message)
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("{}: {e}", path.display()))
}

fn need(v: Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing --{flag} (or `{key}` in the config file)")))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends output quietly.
fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(CliError::Internal(format!("stdout: {e}")))
        }
        _ => Ok(()),
    }
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            std::fs::write(p, text + "\n").map_err(|e| io_err(p, e))
        }
        None => emit(&(text + "\n")),
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Only the first global pool initialization takes effect.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&config, cli.seed, a),
        Command::Build(a) => cmd_build(config, a),
        Command::Query(a) => cmd_query(&config, a),
        Command::Eval(a) => cmd_eval(&config, a),
        Command::Serve(a) => cmd_serve(config, cli.threads, a),
        Command::ExportEmbeddings(a) => cmd_export(&config, a),
    }
}

fn read_synth_spec(path: &Path) -> Result<SynthSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|x| x == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SynthReport {
    seed: u64,
    store: PathBuf,
    slides: usize,
    annotations: usize,
}

fn cmd_synth(config: &Config, seed_flag: Option<u64>, a: SynthArgs) -> Result<(), CliError> {
    let mut spec = match &a.spec {
        Some(p) => read_synth_spec(p)?,
        None => SynthSpec::nine_class(config.seed),
    };
    if let Some(s) = seed_flag {
        spec.seed = s;
    }
    let data = generate_synthetic(&spec, &a.out)?;
    write_json(
        None,
        &SynthReport {
            seed: spec.seed,
            store: a.out,
            slides: data.store.slides().len(),
            annotations: data.annotations.len(),
        },
    )
}

fn cmd_build(config: Config, a: BuildArgs) -> Result<(), CliError> {
    let store_path = need(
        a.store.or(config.paths.store.clone()),
        "store",
        "paths.store",
    )?;
    let out = need(a.out.or(config.paths.db.clone()), "out", "paths.db")?;
    let ann_path = a
        .annotations
        .or(config.paths.annotations.clone())
        .unwrap_or_else(|| store_path.join(ANNOTATIONS_FILE));
    let mut index = config.index.clone();
    if let Some(n) = a.n_shards {
        index.n_shards = n;
    }
    let queries_per_class = a.queries_per_class.or(config.build.queries_per_class);
    let db_per_class = a.db_per_class.or(config.build.db_per_class);
    let split = match (queries_per_class, db_per_class) {
        (Some(q), Some(d)) => Some(SplitConfig {
            axis: a.axis.map(Into::into).unwrap_or(config.build.axis),
            queries_per_class: q,
            db_per_class: d,
        }),
        (None, None) => None,
        _ => {
            return Err(CliError::Usage(
                "--queries-per-class and --db-per-class must be given together".into(),
            ))
        }
    };
    let cfg = BuildConfig {
        embedder: a.embedder.unwrap_or(config.embedder.clone()),
        magnifications: a.mag.unwrap_or(config.build.magnifications.clone()),
        side_px: config.build.side_px,
        coverage_threshold: config.build.coverage_threshold,
        stride_px: config.build.stride_px,
        split,
        index,
        seed: config.seed,
    };
    let embedder = embedder_by_name(&cfg.embedder)?;
    let store = SlideStore::open(&store_path)?;
    let annotations = load_annotations(&ann_path)?;
    let built = build_database(&store, &annotations, embedder.as_ref(), &cfg)?;
    let paths = write_build_output(&built, &out)?;
    tracing::info!(db = %paths.db.display(), report = %paths.report.display(), "database written");
    write_json(None, &built.report)
}

fn load_with_header(
    db: &Path,
    config: &Config,
) -> Result<patchsearch::pipeline::LoadedDb, CliError> {
    let header = read_db_header(db)?;
    let embedder = embedder_by_name(&header.embedder)?;
    Ok(load_database(db, &config.index, embedder.as_ref())?)
}

#[derive(Serialize)]
struct QueryOutput<'a> {
    seed: u64,
    spec: &'a QuerySpec,
    #[serde(flatten)]
    response: &'a QueryResponse,
}

fn cmd_query(config: &Config, a: QueryArgs) -> Result<(), CliError> {
    let db_path = need(a.db.or(config.paths.db.clone()), "db", "paths.db")?;
    let store_path = need(
        a.store.or(config.paths.store.clone()),
        "store",
        "paths.store",
    )?;
    let spec = QuerySpec {
        k: a.k.unwrap_or(config.query.k),
        oversample_factor: config.query.oversample_factor,
        min_separation_px: config.query.min_separation_px,
        exclude_self: !a.include_self,
        ..QuerySpec::region(RegionSpec {
            slide_id: a.slide,
            x: a.x,
            y: a.y,
            width: a.w,
            height: a.h,
            magnification: a.mag,
        })
    };
    if spec.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    spec.validate()?;
    let loaded = load_with_header(&db_path, config)?;
    let store = SlideStore::open(&store_path)?;
    let embedder = embedder_by_name(loaded.db.embedder())?;
    let resp = query(&loaded.db, Some(&store), embedder.as_ref(), &spec)?;
    match a.format {
        OutputFormat::Json => write_json(
            None,
            &QueryOutput {
                seed: config.seed,
                spec: &spec,
                response: &resp,
            },
        ),
        OutputFormat::Table => {
            let mut text = String::new();
            writeln!(
                text,
                "rank\tpatch_id\tslide\tmag\tx\ty\tside\torientation\tdistance\tlabels"
            )
            .expect("string write");
            for r in &resp.results {
                let labels = loaded
                    .records
                    .get(&r.patch_id)
                    .map(|p| {
                        p.labels
                            .histologic_features
                            .iter()
                            .cloned()
                            .collect::<Vec<_>>()
                            .join(";")
                    })
                    .unwrap_or_default();
                writeln!(
                    text,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}",
                    r.rank,
                    r.patch_id,
                    r.slide_id,
                    r.magnification,
                    r.x,
                    r.y,
                    r.side_px,
                    r.best_orientation
                        .map(|o| o.to_string())
                        .unwrap_or_default(),
                    r.distance.unwrap_or(f64::NAN),
                    labels
                )
                .expect("string write");
            }
            if resp.exhausted {
                writeln!(
                    text,
                    "# database exhausted before {} results survived filtering",
                    spec.k
                )
                .expect("string write");
            }
            emit(&text)
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub seed: u64,
    pub engine: EvalReport,
    pub random: Option<EvalReport>,
    pub sweep: Vec<SweepEntry>,
}

fn subset_db(db: &ShardSet, keep: &[PatchRecord], config: &Config) -> Result<ShardSet, CliError> {
    let ids: std::collections::BTreeSet<u64> = keep.iter().map(|p| p.patch_id).collect();
    let entries: Vec<IndexEntry> = db
        .entries()
        .into_iter()
        .filter(|e| ids.contains(&e.patch.patch_id))
        .collect();
    Ok(ShardSet::build(
        db.embedder(),
        db.dim(),
        entries,
        &config.index,
    )?)
}

fn class_axis_for(axis: LabelAxis) -> ClassAxis {
    match axis {
        LabelAxis::Gleason => ClassAxis::Gleason,
        LabelAxis::FeatureAndOrgan => ClassAxis::FeatureXOrgan,
        LabelAxis::Feature | LabelAxis::Organ => ClassAxis::Feature,
    }
}

fn cmd_eval(config: &Config, a: EvalArgs) -> Result<(), CliError> {
    let db_path = need(a.db.or(config.paths.db.clone()), "db", "paths.db")?;
    let store_path = need(
        a.store.or(config.paths.store.clone()),
        "store",
        "paths.store",
    )?;
    let loaded = load_with_header(&db_path, config)?;
    let queries = match &a.queries {
        Some(p) => patchsearch::dataset::read_patch_table(p)?,
        None => loaded.queries.clone(),
    };
    if queries.is_empty() {
        return Err(CliError::Data(
            "no query patches (build with a query split or pass --queries)".into(),
        ));
    }
    let store = SlideStore::open(&store_path)?;
    let embedder = embedder_by_name(loaded.db.embedder())?;
    let opts = EvalOptions {
        k: a.k.unwrap_or(config.eval.k),
        axis: a.axis.unwrap_or(config.eval.axis),
        mode: match a.mode {
            Some(ModeArg::Strict) => MatchMode::Strict,
            Some(ModeArg::Lenient) => MatchMode::Lenient,
            None => config.eval.mode,
        },
    };
    if opts.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let run_opts = RunOptions {
        k: opts.k.max(patchsearch::eval::CURVE_MAX_K),
        oversample_factor: config.query.oversample_factor,
        min_separation_px: config.query.min_separation_px,
        ..RunOptions::default()
    };
    let mut engine = engine_run(
        &loaded.db,
        &store,
        embedder.as_ref(),
        &queries,
        &loaded.records,
        &run_opts,
    )?;
    engine.config.seed = config.seed;
    let (engine_report, random_report) = if a.random_baseline {
        let random_opts = RunOptions {
            k: opts.k,
            ..run_opts.clone()
        };
        let random = random_run(
            &loaded.db,
            &queries,
            &loaded.records,
            &random_opts,
            config.seed,
        )?;
        (
            evaluate(&engine, &opts, Some(&random))?,
            Some(evaluate(&random, &opts, None)?),
        )
    } else {
        (evaluate(&engine, &opts, None)?, None)
    };

    let sweeping = a.sweep_ks.is_some() || a.sweep_mags.is_some() || a.sweep_sizes.is_some();
    let mut sweep_entries = Vec::new();
    if sweeping {
        let mut mags: Vec<Magnification> = queries.iter().map(|q| q.magnification).collect();
        mags.sort();
        mags.dedup();
        let grid = SweepGrid {
            magnifications: a.sweep_mags.unwrap_or(mags),
            db_sizes: a.sweep_sizes.unwrap_or_default(),
            ks: a.sweep_ks.unwrap_or(vec![opts.k]),
        };
        let deepest = grid.ks.iter().copied().max().unwrap_or(opts.k);
        let sweep_opts = RunOptions {
            k: deepest,
            ..run_opts.clone()
        };
        let mut embedded: BTreeMap<Magnification, Vec<_>> = BTreeMap::new();
        let db_records: Vec<PatchRecord> = loaded.records.values().cloned().collect();
        let grid = if grid.db_sizes.is_empty() {
            // Without sizes, each magnification uses its full database.
            SweepGrid {
                db_sizes: vec![usize::MAX],
                ..grid
            }
        } else {
            grid
        };
        sweep_entries = sweep(&grid, &opts, |mag, size| {
            let at_mag: Vec<PatchRecord> = queries
                .iter()
                .filter(|q| q.magnification == mag)
                .cloned()
                .collect();
            if at_mag.is_empty() {
                return Err(patchsearch::Error::InvalidArgument(format!(
                    "no queries at {mag}"
                )));
            }
            if let std::collections::btree_map::Entry::Vacant(slot) = embedded.entry(mag) {
                slot.insert(embed_queries(
                    &store,
                    embedder.as_ref(),
                    &at_mag,
                    &sweep_opts,
                )?);
            }
            let pool: Vec<PatchRecord> = db_records
                .iter()
                .filter(|p| p.magnification == mag)
                .cloned()
                .collect();
            let keep = if size == usize::MAX {
                pool
            } else {
                sample_balanced(&pool, size, class_axis_for(opts.axis), config.seed)?
            };
            let db = subset_db(&loaded.db, &keep, config)
                .map_err(|e| patchsearch::Error::InvalidArgument(e.to_string()))?;
            let mut run = engine_run_embedded(&db, &embedded[&mag], &loaded.records, &sweep_opts)?;
            run.config.seed = config.seed;
            Ok(run)
        })?;
    }

    if let Some(p) = &a.confusion_csv {
        std::fs::write(p, engine_report.confusion.to_csv()).map_err(|e| io_err(p, e))?;
    }
    if let Some(p) = &a.sweep_tsv {
        std::fs::write(p, sweep_tsv(&sweep_entries)).map_err(|e| io_err(p, e))?;
    }
    let out = a.out.or_else(|| {
        config
            .paths
            .reports
            .as_ref()
            .map(|d| d.join("eval_report.json"))
    });
    write_json(
        out.as_deref(),
        &EvalOutput {
            seed: config.seed,
            engine: engine_report,
            random: random_report,
            sweep: sweep_entries,
        },
    )
}

fn cmd_serve(mut config: Config, threads: Option<usize>, a: ServeArgs) -> Result<(), CliError> {
    if let Some(l) = a.listen {
        config.service.listen = l;
    }
    if let Some(d) = a.db {
        config.paths.db = Some(d);
    }
    if let Some(s) = a.store {
        config.paths.store = Some(s);
    }
    if let Some(j) = a.journal_dir {
        config.service.journal_dir = Some(j);
    }
    config.validate()?;
    let listen = config.service.listen.clone();
    let state = Arc::new(AppState::from_config(config)?);
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = threads {
        rt.worker_threads(n);
    }
    let rt = rt
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| CliError::Data(format!("cannot listen on {listen}: {e}")))?;
        tracing::info!(%listen, entries = state.db.len(), "serving");
        serve(state, listener, shutdown_signal())
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })
}

fn cmd_export(config: &Config, a: ExportArgs) -> Result<(), CliError> {
    let db_path = need(a.db.or(config.paths.db.clone()), "db", "paths.db")?;
    let loaded = load_with_header(&db_path, config)?;
    let labels = loaded
        .records
        .iter()
        .map(|(id, r)| (*id, r.labels.clone()))
        .collect();
    let entries = loaded.db.entries();
    write_embeddings_tsv(&a.out, &entries, &labels)?;
    #[derive(Serialize)]
    struct ExportReport<'a> {
        seed: u64,
        rows: usize,
        dim: usize,
        out: &'a Path,
    }
    write_json(
        None,
        &ExportReport {
            seed: config.seed,
            rows: entries.len(),
            dim: loaded.db.dim(),
            out: &a.out,
        },
    )
}
