use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use polsar_cbir::bench::run_bench;
use polsar_cbir::descriptor::GeoBounds;
use polsar_cbir::ingest::config::{load_store_config, record_source, save_store_config, STORE_QUEUE_FILE};
use polsar_cbir::ingest::queue::SystemClock;
use polsar_cbir::ingest::{ingest_all, Bins, DirSource, IngestConfig, PoolOptions, SourceError, TaskQueue};
use polsar_cbir::query::{query_by_tile, query_by_tile_id, LoadedIndex, QueryError, QueryFilters};
use polsar_cbir::service::{serve, ServiceConfig};
use polsar_cbir::store::{DescriptorStore, PutOutcome, StoreConfig, StoreError};
use polsar_cbir::synth::{synthetic_descriptors, write_archive, ArchiveSpec};
use polsar_cbir::tsvq::{build_index, write_index, TsvqError, TsvqParams};

const INDEX_FILE: &str = "index.tsvq";

/// Failure with a specific process exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
struct Exit {
    code: u8,
    message: String,
}

fn exit(code: u8, message: impl Into<String>) -> anyhow::Error {
    Exit { code, message: message.into() }.into()
}

#[derive(Parser)]
#[command(name = "polsar-cbir", version, about = "Content-based retrieval over PolSAR archives")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "POLSAR_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Crawl a product directory and store tile descriptors.
    Ingest(IngestArgs),
    /// Build the TSVQ index over the stored descriptors.
    Index(IndexArgs),
    /// Query with a stored tile or a GRD tile file.
    Query(QueryArgs),
    /// Time index builds across worker counts and report recall.
    Bench(BenchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write a labelled archive of GRD products and manifests.
    Archive {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        products: usize,
        #[arg(long, default_value_t = 416)]
        rows: usize,
        #[arg(long, default_value_t = 384)]
        cols: usize,
        #[arg(long, default_value_t = 32)]
        tile_size: usize,
        #[arg(long, default_value_t = 2016)]
        seed: u64,
    },
    /// Put clustered sparse descriptors straight into a store.
    Descriptors {
        #[arg(long, env = "POLSAR_STORE")]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        #[arg(long, default_value = "8,8,8")]
        bins: Bins,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct StoreArg {
    /// Descriptor store directory.
    #[arg(long, env = "POLSAR_STORE")]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    store: StoreArg,
    /// Directory of product manifests.
    #[arg(long, visible_alias = "source", env = "POLSAR_MANIFEST_DIR")]
    manifest_dir: PathBuf,
    /// Pin the worker count instead of scaling with the queue.
    #[arg(long, env = "POLSAR_WORKERS")]
    workers: Option<usize>,
    #[arg(long, env = "POLSAR_TILE_SIZE")]
    tile_size: Option<usize>,
    #[arg(long, env = "POLSAR_OVERLAP")]
    overlap: Option<usize>,
    /// Histogram bins as "alpha,entropy,anisotropy".
    #[arg(long, env = "POLSAR_BINS")]
    bins: Option<Bins>,
    /// Lease length in seconds.
    #[arg(long, env = "POLSAR_VISIBILITY_TIMEOUT")]
    visibility_timeout: Option<f64>,
}

#[derive(Args)]
struct TsvqArgs {
    #[arg(long, env = "POLSAR_N_MIN")]
    n_min: Option<usize>,
    #[arg(long, env = "POLSAR_H_MAX")]
    h_max: Option<usize>,
    #[arg(long, env = "POLSAR_WCSS_MIN")]
    wcss_min: Option<f64>,
    #[arg(long, env = "POLSAR_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    store: StoreArg,
    /// Output file, default `<store>/index.tsvq`.
    #[arg(long, visible_alias = "index", env = "POLSAR_INDEX")]
    out: Option<PathBuf>,
    /// Worker threads for the build. Does not change the index.
    #[arg(long, visible_alias = "workers", env = "POLSAR_PARTITIONS")]
    partitions: Option<usize>,
    #[command(flatten)]
    tsvq: TsvqArgs,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    store: StoreArg,
    #[arg(long, env = "POLSAR_INDEX")]
    index: Option<PathBuf>,
    #[arg(long, required_unless_present = "tile", conflicts_with = "tile")]
    tile_id: Option<String>,
    /// GRD file holding one tile.
    #[arg(long)]
    tile: Option<PathBuf>,
    #[arg(long, visible_alias = "top-k", default_value_t = 10)]
    top: usize,
    /// Footprint filter "min_lat,min_lon,max_lat,max_lon".
    #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true)]
    bbox: Option<GeoBounds>,
    /// Earliest acquisition time (RFC 3339).
    #[arg(long)]
    from: Option<DateTime<Utc>>,
    /// Latest acquisition time (RFC 3339).
    #[arg(long)]
    to: Option<DateTime<Utc>>,
    /// Further filters as JSON, e.g. '{"product_ids":["p1"]}'.
    #[arg(long)]
    filters: Option<String>,
}

fn parse_bbox(s: &str) -> Result<GeoBounds, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let [min_lat, min_lon, max_lat, max_lon] = v[..] else {
        return Err("expected four comma-separated numbers".into());
    };
    if min_lat > max_lat || min_lon > max_lon {
        return Err("minimum exceeds maximum".into());
    }
    Ok(GeoBounds { min_lat, min_lon, max_lat, max_lon })
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    store: StoreArg,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long, default_value_t = 100)]
    recall_queries: usize,
    #[command(flatten)]
    tsvq: TsvqArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    store: StoreArg,
    #[arg(long, env = "POLSAR_INDEX")]
    index: Option<PathBuf>,
    #[arg(long, env = "POLSAR_LISTEN")]
    listen: Option<SocketAddr>,
    /// Directory of web UI assets.
    #[arg(long, env = "POLSAR_STATIC_DIR")]
    static_dir: Option<PathBuf>,
}

/// Settings from the `--config` file. Flags and environment win over these.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    store: Option<PathBuf>,
    index: Option<PathBuf>,
    listen: Option<SocketAddr>,
    static_dir: Option<PathBuf>,
    ingest: Option<IngestConfig>,
    tsvq: Option<TsvqParams>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn store(&self, arg: &StoreArg) -> anyhow::Result<PathBuf> {
        arg.store.clone().or_else(|| self.store.clone()).context("no store given (--store or POLSAR_STORE)")
    }

    fn index(&self, arg: Option<&PathBuf>, store: &Path) -> PathBuf {
        arg.cloned().or_else(|| self.index.clone()).unwrap_or_else(|| store.join(INDEX_FILE))
    }

    fn tsvq(&self, args: &TsvqArgs, workers: Option<usize>) -> anyhow::Result<TsvqParams> {
        let mut p = self.tsvq.unwrap_or_default();
        p.n_min = args.n_min.unwrap_or(p.n_min);
        p.h_max = args.h_max.unwrap_or(p.h_max);
        p.wcss_min = args.wcss_min.unwrap_or(p.wcss_min);
        p.seed = args.seed.unwrap_or(p.seed);
        p.num_partitions = workers.unwrap_or(p.num_partitions);
        p.validate()?;
        Ok(p)
    }
}

fn open_store(path: &Path) -> anyhow::Result<DescriptorStore> {
    DescriptorStore::open(path, StoreConfig::default()).with_context(|| format!("opening store {}", path.display()))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

fn cmd_synth(cmd: SynthCommand, file: &FileConfig) -> anyhow::Result<()> {
    match cmd {
        SynthCommand::Archive { out, products, rows, cols, tile_size, seed } => {
            let spec = ArchiveSpec { products, rows, cols, tile_size, seed };
            write_archive(&out, &spec).with_context(|| format!("writing {}", out.display()))?;
            print_json(&json!({ "products": products, "tiles": products * spec.tiles_per_product() }));
        }
        SynthCommand::Descriptors { store, count, bins, seed } => {
            let path = file.store(&StoreArg { store })?;
            let store = open_store(&path)?;
            let mut inserted = 0;
            for d in synthetic_descriptors(count, bins.dim(), seed) {
                if store.put(&d)? == PutOutcome::Inserted {
                    inserted += 1;
                }
            }
            store.flush()?;
            print_json(&json!({ "inserted": inserted, "tiles": store.len() }));
        }
    }
    Ok(())
}

fn cmd_ingest(args: IngestArgs, file: &FileConfig) -> anyhow::Result<()> {
    let store_path = file.store(&args.store)?;
    if std::fs::read_dir(&args.manifest_dir).is_err() {
        return Err(exit(2, format!("cannot read manifest directory {}", args.manifest_dir.display())));
    }
    let saved = load_store_config(&store_path).map_err(|e| exit(2, e.to_string()))?;
    let mut cfg = file.ingest.or(saved).unwrap_or_default();
    cfg.tile_size = args.tile_size.unwrap_or(cfg.tile_size);
    cfg.overlap = args.overlap.unwrap_or(cfg.overlap);
    cfg.bins = args.bins.unwrap_or(cfg.bins);
    cfg.visibility_timeout_s = args.visibility_timeout.unwrap_or(cfg.visibility_timeout_s);
    cfg.validate()?;
    if let Some(saved) = saved {
        if (saved.tile_size, saved.overlap, saved.bins, saved.multilook_window)
            != (cfg.tile_size, cfg.overlap, cfg.bins, cfg.multilook_window)
        {
            bail!("store {} was ingested with different tiling or bins", store_path.display());
        }
    }

    let store = open_store(&store_path)?;
    save_store_config(&store_path, &cfg)?;
    record_source(&store_path, &args.manifest_dir)?;
    let queue = TaskQueue::open(store_path.join(STORE_QUEUE_FILE), cfg.max_attempts, Arc::new(SystemClock))?;
    let source = DirSource::new(&args.manifest_dir);
    let options = PoolOptions { workers: args.workers, ..Default::default() };
    let summary = match ingest_all(&source, &queue, &store, &cfg, &options) {
        Ok(s) => s,
        Err(e @ (SourceError::Unreachable(_) | SourceError::Manifest { .. })) => return Err(exit(2, e.to_string())),
        Err(e) => return Err(e.into()),
    };
    print_json(&summary);
    if summary.failed > 0 {
        return Err(exit(1, format!("{} product(s) failed", summary.failed)));
    }
    Ok(())
}

fn cmd_index(args: IndexArgs, file: &FileConfig) -> anyhow::Result<()> {
    let store_path = file.store(&args.store)?;
    let params = file.tsvq(&args.tsvq, args.partitions)?;
    let out = file.index(args.out.as_ref(), &store_path);
    let store = open_store(&store_path)?;
    let start = Instant::now();
    let (tree, assignment) = match build_index(&store, &params) {
        Ok(built) => built,
        Err(TsvqError::EmptyArchive) => return Err(exit(3, "the store holds no descriptors")),
        Err(e) => return Err(e.into()),
    };
    write_index(&out, &tree, &assignment).with_context(|| format!("writing {}", out.display()))?;
    print_json(&json!({
        "nodes": tree.nodes.len(),
        "leaves": tree.leaf_count(),
        "height": tree.height(),
        "total_points": tree.total_points,
        "elapsed": start.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn cmd_query(args: QueryArgs, file: &FileConfig) -> anyhow::Result<()> {
    let store_path = file.store(&args.store)?;
    let index_path = file.index(args.index.as_ref(), &store_path);
    let mut filters: QueryFilters = match &args.filters {
        Some(text) => serde_json::from_str(text).context("parsing --filters")?,
        None => QueryFilters::default(),
    };
    filters.bbox = args.bbox.or(filters.bbox);
    filters.time_from = args.from.or(filters.time_from);
    filters.time_to = args.to.or(filters.time_to);
    let store = open_store(&store_path)?;
    let index = LoadedIndex::load(&index_path).with_context(|| format!("loading index {}", index_path.display()))?;
    let result = match (&args.tile_id, &args.tile) {
        (Some(id), _) => query_by_tile_id(id, args.top, filters, &index, &store),
        (None, Some(path)) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = file.ingest.or(load_store_config(&store_path)?).unwrap_or_default();
            query_by_tile(&bytes, args.top, filters, &cfg, &index, &store)
        }
        (None, None) => unreachable!("clap requires one of --tile-id and --tile"),
    };
    let result = match result {
        Ok(r) => r,
        Err(QueryError::Store(StoreError::NotFound(id))) => return Err(exit(4, format!("tile {id} not found"))),
        Err(e) => return Err(e.into()),
    };
    for (rank, hit) in result.hits.iter().enumerate() {
        print_json(&json!({
            "rank": rank + 1,
            "tile_id": hit.tile_id,
            "distance_sq": hit.distance_sq,
            "geo_bounds": hit.geo_bounds,
        }));
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs, file: &FileConfig) -> anyhow::Result<()> {
    let store_path = file.store(&args.store)?;
    let params = file.tsvq(&args.tsvq, None)?;
    if args.workers.is_empty() || args.workers.contains(&0) {
        bail!("--workers needs positive counts");
    }
    let store = open_store(&store_path)?;
    let report = match run_bench(&store, &params, &args.workers, args.repeat, args.recall_queries) {
        Ok(r) => r,
        Err(e) if matches!(e.downcast_ref(), Some(TsvqError::EmptyArchive)) => {
            return Err(exit(3, "the store holds no descriptors"))
        }
        Err(e) => return Err(e),
    };
    print!("{}", report.to_csv());
    if let Some(r) = report.recall_at_10 {
        eprintln!("recall@10={r:.4} over {} queries", report.recall_queries);
    }
    if !report.checksums_match() {
        bail!("index checksums differ across worker counts");
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs, file: &FileConfig) -> anyhow::Result<()> {
    let store = file.store(&args.store)?;
    let cfg = ServiceConfig {
        index: Some(file.index(args.index.as_ref(), &store)),
        listen: args.listen.or(file.listen).unwrap_or_else(|| "127.0.0.1:8080".parse().unwrap()),
        static_dir: args.static_dir.or_else(|| file.static_dir.clone()),
        ingest: file.ingest,
        store,
    };
    tokio::runtime::Runtime::new()?.block_on(serve(cfg))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(c) => cmd_synth(c, &file),
        Command::Ingest(a) => cmd_ingest(a, &file),
        Command::Index(a) => cmd_index(a, &file),
        Command::Query(a) => cmd_query(a, &file),
        Command::Bench(a) => cmd_bench(a, &file),
        Command::Serve(a) => cmd_serve(a, &file),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Exit>().map_or(1, |x| x.code))
        }
    }
}
