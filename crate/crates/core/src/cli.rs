//! Command line front end: `synth -> featurize -> train -> embed -> rank -> eval`,
//! plus `bench-gemm`.
//!
//! Every flag can also come from a flat JSON object passed with `--config`;
//! keys are flag names (`n_videos` or `n-videos`) and flags given on the
//! command line win. Each run writes `run.json` into its output directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{bench_csv, parse_size, run_bench, BenchConfig};
use crate::corpus::{generate_synthetic, load_corpus, save_corpus, Corpus, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::evalrank::{
    evaluate, rank_split, report_csv, BilinearScorer, CandidatePool, EmbeddingScorer, OmksScorer, Rankings,
    HIT_GRID, RECALL_GRID,
};
use crate::featurize::{featurize_corpus, load_features, save_features, FeatureConfig};
use crate::fusednet::{self, AdamConfig, FusedConfig, FusedEmbedder, TrainConfig, FLSM_MAGIC};
use crate::matrix::Matrix;
use crate::omks::{train_oasis, train_omks, BilinearModel, KernelModel, OASIS_MAGIC, OMKS_MAGIC};
use crate::simkernel::{estimate_sigma, KernelKind, KernelSpec, TripletLossSpec};
use crate::triplets::triplet_stream;

pub const VERSION: &str = match option_env!("VIDREL_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

#[derive(Debug, Parser, Serialize)]
#[command(name = "vidrel", version = VERSION, about = "Video relevance learning from triplets")]
pub struct Cli {
    /// Flat JSON object of flag values; command-line flags take precedence
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel sections [default: available cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every random choice (corpus, triplet stream, initialization)
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a planted-cluster corpus
    Synth(SynthArgs),
    /// Build fused fixed-length feature vectors
    Featurize(FeaturizeArgs),
    /// Train an omks, oasis or lstm model on the triplet stream
    Train(TrainArgs),
    /// Embed every video with a trained lstm model
    Embed(EmbedArgs),
    /// Rank candidates for every anchor of a split
    Rank(RankArgs),
    /// Compute hit@k and recall@k from rankings
    Eval(EvalArgs),
    /// Time the blocked batch scorer against the per-pair loop
    BenchGemm(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory (manifest.json and features/)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub n_videos: usize,
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    #[arg(long, default_value_t = 32)]
    pub frame_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub video_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub frames_min: usize,
    #[arg(long, default_value_t = 8)]
    pub frames_max: usize,
    #[arg(long, default_value_t = 0.25)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 5)]
    pub relevance_size: usize,
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    pub val_frac: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizeArgs {
    /// Corpus manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory (features.f32 and features.json)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Feature-axis average pooling width
    #[arg(long, default_value_t = 4)]
    pub pool_k: usize,
    /// Append statistics of the delta and delta-delta sequences
    #[arg(long)]
    pub delta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Omks,
    Oasis,
    Lstm,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Method::Omks)]
    pub method: Method,
    /// Corpus manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory written by `featurize` (omks and oasis)
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output directory (model.bin and training statistics)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Triplets drawn from the stream
    #[arg(long, default_value_t = 50_000)]
    pub max_triplets: usize,
    /// Passes over the drawn triplets
    #[arg(long, default_value_t = 1)]
    pub max_passes: usize,
    /// Similarity kernel [default: rbf for omks, softmax for lstm]
    #[arg(long, value_enum)]
    pub kernel: Option<KernelKind>,
    /// rbf bandwidth multiplier
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// rbf scale [default: median pairwise train distance for omks, 1 for lstm]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// rbf: put the squared distance in the exponent
    #[arg(long)]
    pub squared: bool,
    /// shifted cosine: skip l2-normalizing inputs
    #[arg(long)]
    pub no_normalize: bool,
    /// Triplet margin [default: 0.1 for rbf, 0.2 for other kernels, 1 for oasis]
    #[arg(long)]
    pub margin: Option<f64>,
    /// Embedding norm penalty (lstm) [default: 1e-4 for rbf and softmax, 0 otherwise]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Step size cap C (omks and oasis)
    #[arg(long, default_value_t = 1.0)]
    pub aggressiveness: f64,
    /// LSTM hidden width
    #[arg(long, default_value_t = fusednet::DEFAULT_HIDDEN_DIM)]
    pub hidden: usize,
    /// Embedding width
    #[arg(long, default_value_t = fusednet::DEFAULT_EMBED_DIM)]
    pub embed_dim: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Steps per logged loss point (lstm)
    #[arg(long, default_value_t = 1000)]
    pub log_every: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// lstm model.bin
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory (embeddings.f64 and embeddings.json)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// model.bin of any method
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Feature directory (omks and oasis models)
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Embedding directory (lstm models); embeds on the fly when absent
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Split whose videos act as anchors
    #[arg(long, default_value = "val")]
    pub split: Split,
    #[arg(long, value_enum, default_value_t = CandidatePool::TrainPlusSplit)]
    pub pool: CandidatePool,
    /// Tile edge of the blocked omks scorer
    #[arg(long, default_value_t = 64)]
    pub block: usize,
    /// Output directory (rankings.json)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// rankings.json written by `rank`
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    /// Output directory (report.json and report.csv)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// hit@k grid
    #[arg(long, value_delimiter = ',', default_values_t = HIT_GRID)]
    pub hit_k: Vec<usize>,
    /// recall@k grid
    #[arg(long, value_delimiter = ',', default_values_t = RECALL_GRID)]
    pub recall_k: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Problem sizes as queries x candidates x support
    #[arg(long, value_delimiter = ',', default_value = "1000x1000x2000")]
    pub sizes: Vec<String>,
    #[arg(long, default_value_t = 64)]
    pub block: usize,
    /// Feature dimension of the random instance
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = KernelKind::Rbf)]
    pub kernel: KernelKind,
    /// Query rows timed with the per-pair loop, scaled to all rows (0 = all)
    #[arg(long, default_value_t = 50)]
    pub naive_rows: usize,
    /// Output directory (bench.csv)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    config: &'a Command,
    timings: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingManifest {
    pub format_version: u32,
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<String>,
    pub kernel: KernelSpec,
    pub path: String,
}

struct Timer {
    start: Instant,
    laps: BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Timer {
            start: Instant::now(),
            laps: BTreeMap::new(),
        }
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.laps.insert(format!("{name}_seconds"), t.elapsed().as_secs_f64());
        Ok(out)
    }

    fn finish(mut self) -> BTreeMap<String, f64> {
        self.laps.insert("total_seconds".into(), self.start.elapsed().as_secs_f64());
        self.laps
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(Parsed::Exit(code)) => return code,
        Err(Parsed::Error(e)) => return report(&e),
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    let reason = e.to_string().replace('\n', " ");
    eprintln!("error kind={} code={} reason={reason}", e.kind(), e.exit_code());
    e.exit_code()
}

enum Parsed {
    Exit(i32),
    Error(Error),
}

fn clap_error(e: clap::Error) -> Parsed {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            Parsed::Exit(0)
        }
        _ => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            Parsed::Error(Error::config("arguments", first))
        }
    }
}

fn parse(mut argv: Vec<OsString>) -> std::result::Result<Cli, Parsed> {
    let matches = Cli::command().try_get_matches_from(&argv).map_err(clap_error)?;
    if let Some(path) = matches.get_one::<PathBuf>("config") {
        let extra = config_overrides(path, &matches).map_err(Parsed::Error)?;
        argv.extend(extra);
    }
    let matches = Cli::command().try_get_matches_from(&argv).map_err(clap_error)?;
    Cli::from_arg_matches(&matches).map_err(clap_error)
}

/// Turns config file entries into extra arguments for flags the command
/// line left at their defaults.
fn config_overrides(path: &Path, matches: &ArgMatches) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let serde_json::Value::Object(entries) = value else {
        return Err(Error::config("config", "must be a flat JSON object"));
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let root = Cli::command();
    let sub_cmd = root.find_subcommand(name).expect("parsed subcommand exists");
    let mut extra = Vec::new();
    for (key, v) in entries {
        let id = key.replace('-', "_");
        let arg = sub_cmd
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_id() == id.as_str() && a.get_id() != "config" && a.get_long().is_some())
            .ok_or_else(|| Error::config(key.clone(), format!("unknown key for `{name}`")))?;
        let from_cli = [sub, matches]
            .iter()
            .any(|m| matches!(m.try_contains_id(&id), Ok(true)) && m.value_source(&id) == Some(ValueSource::CommandLine));
        if from_cli {
            continue;
        }
        let flag = format!("--{}", arg.get_long().expect("checked above"));
        let takes_value = arg.get_action().takes_values();
        let scalar = |v: &serde_json::Value| -> Result<String> {
            match v {
                serde_json::Value::String(s) => Ok(s.clone()),
                serde_json::Value::Number(n) => Ok(n.to_string()),
                serde_json::Value::Bool(b) => Ok(b.to_string()),
                _ => Err(Error::config(key.clone(), "values must be scalars or arrays of scalars")),
            }
        };
        match (&v, takes_value) {
            (serde_json::Value::Bool(b), false) => {
                if *b {
                    extra.push(flag.into());
                }
            }
            (_, false) => return Err(Error::config(key.clone(), "switch expects true or false")),
            (serde_json::Value::Array(items), true) => {
                let joined: Vec<String> = items.iter().map(scalar).collect::<Result<_>>()?;
                extra.push(flag.into());
                extra.push(joined.join(",").into());
            }
            (v, true) => {
                extra.push(flag.into());
                extra.push(scalar(v)?.into());
            }
        }
    }
    Ok(extra)
}

fn need<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::config(flag, format!("--{} is required", flag.replace('_', "-"))))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(cli: &Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(0) => return Err(Error::config("threads", "must be at least 1")),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    let mut timer = Timer::new();
    let (name, out) = pool.install(|| -> Result<(&str, PathBuf)> {
        Ok(match &cli.command {
            Command::Synth(a) => ("synth", synth(a, cli.seed, &mut timer)?),
            Command::Featurize(a) => ("featurize", featurize(a, &mut timer)?),
            Command::Train(a) => ("train", train(a, cli.seed, &mut timer)?),
            Command::Embed(a) => ("embed", embed(a, &mut timer)?),
            Command::Rank(a) => ("rank", rank(a, threads, &mut timer)?),
            Command::Eval(a) => ("eval", eval(a, &mut timer)?),
            Command::BenchGemm(a) => ("bench-gemm", bench(a, cli.seed, threads, &mut timer)?),
        })
    })?;
    let record = RunRecord {
        command: name,
        version: VERSION,
        seed: cli.seed,
        threads,
        config: &cli.command,
        timings: timer.finish(),
    };
    write_json(&out.join("run.json"), &record)
}

fn synth(a: &SynthArgs, seed: u64, timer: &mut Timer) -> Result<PathBuf> {
    let out = need(&a.out, "out")?;
    let config = SynthConfig {
        n_videos: a.n_videos,
        n_clusters: a.clusters,
        frame_dim: a.frame_dim,
        video_dim: a.video_dim,
        frames_min: a.frames_min,
        frames_max: a.frames_max,
        noise_sigma: a.noise_sigma,
        relevance_size: a.relevance_size,
        seed,
        train_frac: a.train_frac,
        val_frac: a.val_frac,
    };
    let corpus = timer.time("generate", || generate_synthetic(&config))?;
    let manifest = timer.time("write", || save_corpus(&corpus, out))?;
    log::info!("wrote {} videos to {}", corpus.len(), manifest.display());
    Ok(out.to_path_buf())
}

fn featurize(a: &FeaturizeArgs, timer: &mut Timer) -> Result<PathBuf> {
    let corpus = load_corpus(need(&a.manifest, "manifest")?)?;
    let out = need(&a.out, "out")?;
    let config = FeatureConfig {
        pool_k: a.pool_k,
        delta: a.delta,
    };
    config.validate()?;
    let features = timer.time("featurize", || featurize_corpus(&corpus, &config))?;
    save_features(&corpus, &features, &config, out)?;
    Ok(out.to_path_buf())
}

fn kernel_from_args(a: &TrainArgs, kind: KernelKind, sigma: f64) -> KernelSpec {
    match kind {
        KernelKind::Rbf => KernelSpec {
            squared: a.squared,
            ..KernelSpec::rbf(a.gamma, sigma)
        },
        KernelKind::ShiftedCosine => KernelSpec::shifted_cosine().with_normalize(!a.no_normalize),
        k => KernelSpec::of_kind(k),
    }
}

fn train_features(a: &TrainArgs, corpus: &Corpus) -> Result<(Matrix, FeatureConfig)> {
    let dir = need(&a.features, "features")?;
    load_features(dir, corpus)
}

fn train(a: &TrainArgs, seed: u64, timer: &mut Timer) -> Result<PathBuf> {
    let corpus = load_corpus(need(&a.manifest, "manifest")?)?;
    let out = need(&a.out, "out")?;
    if a.max_passes == 0 {
        return Err(Error::config("max_passes", "must be at least 1"));
    }
    let (triplets, stream) = timer.time("stream", || triplet_stream(&corpus, seed, a.max_triplets))?;
    println!("{}", serde_json::to_string(&stream)?);
    create_dir(out)?;
    write_json(&out.join("stream_stats.json"), &stream)?;
    let model_path = out.join("model.bin");
    match a.method {
        Method::Omks => {
            let (features, fcfg) = train_features(a, &corpus)?;
            let kind = a.kernel.unwrap_or(KernelKind::Rbf);
            let sigma = match (kind, a.sigma) {
                (_, Some(s)) => s,
                (KernelKind::Rbf, None) => {
                    let train_rows: Vec<&[f64]> =
                        corpus.indices_in(Split::Train).iter().map(|&i| features.row(i)).collect();
                    let s = estimate_sigma(&train_rows, seed)?;
                    log::info!("rbf sigma estimated as {s}");
                    s
                }
                _ => 1.0,
            };
            let kernel = kernel_from_args(a, kind, sigma);
            let margin = a.margin.unwrap_or(kind.default_margin());
            let mut model = KernelModel::new(kernel, a.aggressiveness, features.cols(), fcfg.config_hash())?;
            let mut passes = Vec::new();
            timer.time("train", || {
                for _ in 0..a.max_passes {
                    passes.push(train_omks(&mut model, &features, &triplets, margin)?);
                }
                Ok(())
            })?;
            write_json(&out.join("train_stats.json"), &passes)?;
            model.save(&model_path)?;
        }
        Method::Oasis => {
            let (features, fcfg) = train_features(a, &corpus)?;
            if a.kernel.is_some() {
                return Err(Error::config("kernel", "oasis learns a bilinear form and takes no kernel"));
            }
            let margin = a.margin.unwrap_or(1.0);
            let mut model = BilinearModel::new(features.cols(), a.aggressiveness, fcfg.config_hash())?;
            let mut passes = Vec::new();
            timer.time("train", || {
                for _ in 0..a.max_passes {
                    passes.push(train_oasis(&mut model, &features, &triplets, margin)?);
                }
                Ok(())
            })?;
            write_json(&out.join("train_stats.json"), &passes)?;
            model.save(&model_path)?;
        }
        Method::Lstm => {
            let kind = a.kernel.unwrap_or(KernelKind::Softmax);
            let kernel = kernel_from_args(a, kind, a.sigma.unwrap_or(1.0));
            let defaults = TripletLossSpec::for_kernel(kind);
            let config = FusedConfig {
                hidden_dim: a.hidden,
                embed_dim: a.embed_dim,
                loss: TripletLossSpec {
                    margin: a.margin.unwrap_or(defaults.margin),
                    lambda: a.lambda.unwrap_or(defaults.lambda),
                },
                ..FusedConfig::new(corpus.frame_dim(), corpus.video_dim(), kernel)
            };
            config.validate()?;
            let mut model = FusedEmbedder::new(&config, seed)?;
            let train_config = TrainConfig {
                adam: AdamConfig {
                    lr: a.lr,
                    ..AdamConfig::default()
                },
                max_passes: a.max_passes,
                log_every: a.log_every,
            };
            let report = timer.time("train", || fusednet::train(&mut model, &corpus, &triplets, &train_config))?;
            write_json(&out.join("train_stats.json"), &report)?;
            model.save(&model_path)?;
        }
    }
    Ok(out.to_path_buf())
}

pub fn save_embeddings(corpus: &Corpus, embeddings: &Matrix, kernel: &KernelSpec, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let blob = dir.join("embeddings.f64");
    let bytes: Vec<u8> = embeddings.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    let manifest = EmbeddingManifest {
        format_version: 1,
        rows: embeddings.rows(),
        cols: embeddings.cols(),
        ids: (0..corpus.len()).map(|i| corpus.id(i).to_string()).collect(),
        kernel: *kernel,
        path: "embeddings.f64".into(),
    };
    write_json(&dir.join("embeddings.json"), &manifest)
}

/// Loads embeddings and reorders rows to corpus indices.
pub fn load_embeddings(dir: &Path, corpus: &Corpus) -> Result<(Matrix, KernelSpec)> {
    let path = dir.join("embeddings.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: EmbeddingManifest = serde_json::from_str(&text)?;
    let blob = dir.join(&manifest.path);
    let mut bytes = Vec::new();
    fs::File::open(&blob)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&blob, e))?;
    if bytes.len() != manifest.rows * manifest.cols * 8 {
        return Err(Error::dims("embedding blob bytes", manifest.rows * manifest.cols * 8, bytes.len()));
    }
    if manifest.ids.len() != corpus.len() || manifest.rows != corpus.len() {
        return Err(Error::dims("embedding rows", corpus.len(), manifest.rows));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let packed = Matrix::new(manifest.rows, manifest.cols, values)?;
    let mut order = vec![0; corpus.len()];
    for (row, id) in manifest.ids.iter().enumerate() {
        let i = corpus
            .index_of(id)
            .ok_or_else(|| Error::Data(format!("embedding id `{id}` not in corpus")))?;
        order[i] = row;
    }
    Ok((packed.select_rows(&order), manifest.kernel))
}

fn embed(a: &EmbedArgs, timer: &mut Timer) -> Result<PathBuf> {
    let corpus = load_corpus(need(&a.manifest, "manifest")?)?;
    let model = FusedEmbedder::load(need(&a.model, "model")?)?;
    let out = need(&a.out, "out")?;
    let embeddings = timer.time("embed", || model.embed_corpus(&corpus))?;
    save_embeddings(&corpus, &embeddings, &model.kernel, out)?;
    Ok(out.to_path_buf())
}

fn model_magic(path: &Path) -> Result<[u8; 4]> {
    let mut magic = [0u8; 4];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(|e| Error::io(path, e))?;
    Ok(magic)
}

fn check_hash(model_hash: &str, features: &FeatureConfig) -> Result<()> {
    if model_hash != features.config_hash() {
        return Err(Error::Data(format!(
            "model was trained on features `{model_hash}` but the feature directory holds `{}`",
            features.config_hash()
        )));
    }
    Ok(())
}

fn rank(a: &RankArgs, threads: usize, timer: &mut Timer) -> Result<PathBuf> {
    let corpus = load_corpus(need(&a.manifest, "manifest")?)?;
    let model_path = need(&a.model, "model")?;
    let out = need(&a.out, "out")?;
    let magic = model_magic(model_path)?;
    let rankings = if &magic == OMKS_MAGIC {
        let model = KernelModel::load(model_path)?;
        let (features, fcfg) = load_features(need(&a.features, "features")?, &corpus)?;
        check_hash(model.feature_config_hash(), &fcfg)?;
        let scorer = OmksScorer {
            model: &model,
            features: &features,
            block: a.block,
            threads,
        };
        timer.time("rank", || rank_split(&corpus, &scorer, a.split, a.pool))?
    } else if &magic == OASIS_MAGIC {
        let model = BilinearModel::load(model_path)?;
        let (features, fcfg) = load_features(need(&a.features, "features")?, &corpus)?;
        check_hash(model.feature_config_hash(), &fcfg)?;
        let scorer = BilinearScorer {
            model: &model,
            features: &features,
        };
        timer.time("rank", || rank_split(&corpus, &scorer, a.split, a.pool))?
    } else if &magic == FLSM_MAGIC {
        let model = FusedEmbedder::load(model_path)?;
        let embeddings = match &a.embeddings {
            Some(dir) => load_embeddings(dir, &corpus)?.0,
            None => timer.time("embed", || model.embed_corpus(&corpus))?,
        };
        let scorer = EmbeddingScorer {
            embeddings: &embeddings,
            kernel: model.kernel,
        };
        timer.time("rank", || rank_split(&corpus, &scorer, a.split, a.pool))?
    } else {
        return Err(Error::Data(format!("{}: unrecognised model file", model_path.display())));
    };
    create_dir(out)?;
    write_json(&out.join("rankings.json"), &rankings)?;
    Ok(out.to_path_buf())
}

fn eval(a: &EvalArgs, timer: &mut Timer) -> Result<PathBuf> {
    let path = need(&a.rankings, "rankings")?;
    let out = need(&a.out, "out")?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rankings: Rankings = serde_json::from_str(&text)?;
    let report = timer.time("eval", || evaluate(&rankings, &a.hit_k, &a.recall_k))?;
    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    let csv = out.join("report.csv");
    fs::write(&csv, report_csv(&report)).map_err(|e| Error::io(&csv, e))?;
    let summary = serde_json::json!({
        "method": report.header.scorer.method,
        "anchors": report.header.anchors_evaluated,
        "hit_at": report.hit_at,
        "recall_at": report.recall_at,
    });
    println!("{summary}");
    Ok(out.to_path_buf())
}

fn bench(a: &BenchArgs, seed: u64, threads: usize, timer: &mut Timer) -> Result<PathBuf> {
    let out = need(&a.out, "out")?;
    let mut rows = Vec::new();
    for size in &a.sizes {
        let (queries, candidates, support) = parse_size(size)?;
        let config = BenchConfig {
            queries,
            candidates,
            support,
            dim: a.dim,
            kernel: a.kernel,
            block: a.block,
            threads,
            naive_rows: a.naive_rows,
            seed,
        };
        rows.push(timer.time(&format!("bench_{size}"), || run_bench(&config))?);
    }
    let csv = bench_csv(&rows);
    print!("{csv}");
    create_dir(out)?;
    let path = out.join("bench.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(out.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_manifest_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope/manifest.json");
        let code = run([
            "vidrel",
            "train",
            "--method",
            "omks",
            "--manifest",
            missing.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"n_videos": 20, "bogus": 1}"#).unwrap();
        let code = run(["vidrel", "synth", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, 1);
    }

    #[test]
    fn bad_flag_is_a_config_error() {
        assert_eq!(run(["vidrel", "synth", "--n-videos", "many"]), 1);
        assert_eq!(run(["vidrel", "--version"]), 0);
    }
}
