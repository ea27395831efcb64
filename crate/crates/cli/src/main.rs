use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use epishear::lfw::{load_weights, save_weights};
use epishear::lightfield::{
    load_lightfield, read_image, save_lightfield, write_image, BitDepth, DatasetManifest, Epi, LightField, RowRole,
};
use epishear::metrics::{evaluate, median, EvaluateOptions};
use epishear::network::{NetworkConfig, NetworkWeights};
use epishear::restore::{reconstruct_lightfield, Method, ReconstructOptions, SystemCache, DEFAULT_MARGIN};
use epishear::shearlet::{num_shearlets, scales_for_interval, ShearletSystem};
use epishear::st::SolverConfig;
use epishear::synth::{make_eval_pair, SceneSpec};

#[derive(Parser)]
#[command(name = "epishear", version, about = "Light field reconstruction by shearlet-domain EPI inpainting")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, env = "EPISHEAR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a shearlet system and report its structure.
    System(SystemArgs),
    /// Reconstruct a densely-sampled light field from a sparse one.
    Reconstruct(ReconstructArgs),
    /// Per-view PSNR of a reconstruction against ground truth.
    Evaluate(EvaluateArgs),
    /// Render a synthetic sparse/dense pair.
    Synth(SynthArgs),
    /// Extract or insert one EPI.
    #[command(subcommand)]
    Epi(EpiCommand),
    /// Print the filter layout for an interval, or describe a weight file.
    Info(InfoArgs),
    /// Write an initial LFW1 weight file.
    InitWeights(InitWeightsArgs),
}

#[derive(Args)]
struct SystemArgs {
    #[arg(long, default_value_t = 32)]
    tau: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// Save the system as an SHS1 cache file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    St,
    Cyclest,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Input manifest, or a directory holding `manifest.json`.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 32)]
    tau: usize,
    /// ST iterations.
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Disable the cone projection and preconditioner of the ST solver.
    #[arg(long)]
    plain_st: bool,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Directory for cached shearlet systems.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: usize,
    /// Report path (default `<out>/report.json`).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    sixteen_bit: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 32)]
    tau: usize,
    #[arg(long)]
    exclude_inputs: bool,
    /// Method tag for the report; taken from the reconstruction report when omitted.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Per-view CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (JSON); the reference scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 32)]
    tau: usize,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sixteen_bit: bool,
}

#[derive(Subcommand)]
enum EpiCommand {
    /// Write image row `row` (0-based) of every view as one EPI image.
    Extract {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace image row `row` of every view with an EPI image.
    Insert {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        epi: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long, default_value_t = 32)]
    tau: usize,
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[arg(long)]
    out: PathBuf,
    /// He-uniform initialization with this seed; all zeros when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 68)]
    channels: usize,
}

#[derive(Serialize)]
struct ReconstructReport {
    method: String,
    tau: usize,
    views_in: usize,
    views_out: usize,
    width: usize,
    height: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    threads: usize,
    epi_ms: Vec<f64>,
    median_epi_ms: f64,
    total_ms: f64,
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.json")
    } else {
        p.to_path_buf()
    }
}

fn load(p: &Path) -> Result<(DatasetManifest, LightField)> {
    let path = manifest_path(p);
    let manifest = DatasetManifest::load(&path).with_context(|| format!("reading {}", path.display()))?;
    let lf = load_lightfield(&manifest)?;
    Ok((manifest, lf))
}

fn depth(sixteen: bool) -> BitDepth {
    if sixteen {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn cmd_system(a: SystemArgs) -> Result<()> {
    let start = Instant::now();
    let system = ShearletSystem::build(a.tau, a.width, a.height)?;
    let build_ms = start.elapsed().as_secs_f64() * 1e3;
    if let Some(out) = &a.out {
        system.save(out)?;
    }
    print_json(&serde_json::json!({
        "tau": a.tau,
        "xi": system.scales(),
        "eta": system.num_filters(),
        "per_scale": system.scale_counts(),
        "width": a.width,
        "height": a.height,
        "build_ms": build_ms,
        "frame_energy_deviation": system.frame_energy_deviation(),
    }))
}

fn cmd_reconstruct(a: ReconstructArgs, threads: usize) -> Result<()> {
    let weights = match (a.method, &a.weights) {
        (MethodArg::Cyclest, None) => bail!("usage: --weights is required with --method cyclest"),
        (MethodArg::Cyclest, Some(p)) => Some(load_weights(p)?.prepare::<f32>()),
        (MethodArg::St, _) => None,
    };
    let (manifest, sslf) = load(&a.input)?;
    let solver = if a.plain_st {
        SolverConfig::plain()
    } else {
        SolverConfig::default()
    }
    .with_iterations(a.iters);
    let method = match &weights {
        Some(net) => Method::CycleSt(net),
        None => Method::St(solver),
    };
    let cache = match &a.cache_dir {
        Some(dir) => SystemCache::with_dir(dir.clone()),
        None => SystemCache::new(),
    };
    let opts = ReconstructOptions { tau: a.tau, margin: a.margin };

    let start = Instant::now();
    let rec = reconstruct_lightfield(&sslf, method, opts, &cache)?;
    let total_ms = start.elapsed().as_secs_f64() * 1e3;

    let name = format!("{}_{}", manifest.name, method.name());
    let mut out_manifest = save_lightfield(&rec.lightfield, &a.out, &name, "png", depth(a.sixteen_bit))?;
    out_manifest.delta = Some(a.tau);
    out_manifest.n_dense = Some(rec.lightfield.num_views());
    out_manifest.save(&a.out.join("manifest.json"))?;

    let report = ReconstructReport {
        method: method.name().to_string(),
        tau: a.tau,
        views_in: sslf.num_views(),
        views_out: rec.lightfield.num_views(),
        width: sslf.width(),
        height: sslf.height(),
        iterations: matches!(a.method, MethodArg::St).then_some(a.iters),
        threads,
        median_epi_ms: median(&rec.epi_ms).unwrap_or(0.0),
        epi_ms: rec.epi_ms,
        total_ms,
    };
    let path = a.report.unwrap_or_else(|| a.out.join("report.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{} views written to {} ({} per EPI median {:.1} ms)",
        report.views_out,
        a.out.display(),
        report.method,
        report.median_epi_ms
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (_, recon) = load(&a.recon)?;
    let (_, gt) = load(&a.gt)?;
    // timings and method tag come from the reconstruction report when present
    let recon_dir = manifest_path(&a.recon).parent().map(Path::to_path_buf).unwrap_or_default();
    let prior: Option<serde_json::Value> = std::fs::read_to_string(recon_dir.join("report.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let epi_ms: Vec<f64> = prior
        .as_ref()
        .and_then(|v| v["epi_ms"].as_array().cloned())
        .map(|v| v.iter().filter_map(|x| x.as_f64()).collect())
        .unwrap_or_default();
    let method = a
        .method
        .or_else(|| prior.as_ref().and_then(|v| v["method"].as_str().map(String::from)))
        .unwrap_or_else(|| "unknown".into());
    let opts = EvaluateOptions { tau: a.tau, exclude_inputs: a.exclude_inputs };
    let report = evaluate(&recon, &gt, opts, &method, &epi_ms)?;
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.csv {
        std::fs::write(p, report.per_view_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{} {} ({} views)", method, report.summary(), report.per_view_db.len());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.scene {
        Some(p) => SceneSpec::from_json(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SceneSpec::reference(),
    };
    let (sparse, dense) = make_eval_pair(&spec, a.views, a.tau, a.width, a.height)?;
    let d = depth(a.sixteen_bit);
    let mut s = save_lightfield(&sparse, &a.out.join("sparse"), "synth_sparse", "png", d)?;
    s.delta = Some(a.tau);
    s.n_dense = Some(dense.num_views());
    s.save(&a.out.join("sparse/manifest.json"))?;
    save_lightfield(&dense, &a.out.join("dense"), "synth_dense", "png", d)?;
    println!(
        "{} sparse and {} dense views written to {}",
        sparse.num_views(),
        dense.num_views(),
        a.out.display()
    );
    Ok(())
}

fn cmd_epi(c: EpiCommand) -> Result<()> {
    match c {
        EpiCommand::Extract { input, row, out } => {
            let (_, lf) = load(&input)?;
            let epi = lf.extract_epi(row)?;
            write_image(&out, epi.pixels.view(), BitDepth::Sixteen)?;
            println!("{}x{} EPI written to {}", epi.width(), epi.rows(), out.display());
        }
        EpiCommand::Insert { input, row, epi, out } => {
            let (manifest, mut lf) = load(&input)?;
            let pixels = read_image(&epi)?;
            lf.insert_epi(row, &Epi::new(pixels, RowRole::Dense))?;
            save_lightfield(&lf, &out, &manifest.name, "png", BitDepth::Sixteen)?;
            println!("row {row} replaced, {} views written to {}", lf.num_views(), out.display());
        }
    }
    Ok(())
}

fn cmd_info(a: InfoArgs) -> Result<()> {
    match &a.weights {
        Some(p) => {
            let w = load_weights(p)?;
            print_json(&serde_json::json!({
                "config": w.config(),
                "param_count": w.config().param_count(),
                "tensors": w.tensors().iter().map(|t| serde_json::json!({"name": t.name, "shape": t.shape})).collect::<Vec<_>>(),
            }))
        }
        None => {
            let xi = scales_for_interval(a.tau)?;
            print_json(&serde_json::json!({"tau": a.tau, "xi": xi, "eta": num_shearlets(xi)?}))
        }
    }
}

fn cmd_init_weights(a: InitWeightsArgs) -> Result<()> {
    let cfg = NetworkConfig::for_channels(a.channels);
    let w = match a.seed {
        Some(seed) => NetworkWeights::random(cfg, seed)?,
        None => NetworkWeights::zeros(cfg)?,
    };
    save_weights(&w, &a.out)?;
    println!("{} parameters written to {}", w.config().param_count(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(0) => bail!("usage: --threads must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    match cli.command {
        Command::System(a) => cmd_system(a),
        Command::Reconstruct(a) => cmd_reconstruct(a, threads),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Epi(c) => cmd_epi(c),
        Command::Info(a) => cmd_info(a),
        Command::InitWeights(a) => cmd_init_weights(a),
    }
}

/// Everything on one line so callers can parse `error: ...` from stderr.
fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
