//! `echodyn` command line: `phantom | flow | edg | cpda-demo | eval | seed-weights`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::cpda::{self, CpdaShape, CpdaWeights};
use crate::flow;
use crate::metrics;
use crate::pipeline::{self, PipelineConfig};
use crate::seqio::{self, write_atomic};

#[derive(Debug, Parser)]
#[command(name = "echodyn", version, about = "Echo-dynamics features, phase-dynamics attention and temporal segmentation metrics")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON pipeline configuration; keys override built-in defaults
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream [default: 7]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic beating-heart sequence with ground-truth masks
    Phantom(PhantomArgs),
    /// Dense optical flow between consecutive frames
    Flow(FlowArgs),
    /// Flow, descriptors, RBF dynamics, EDG heatmaps and P_EDG
    Edg(EdgArgs),
    /// Run the phase-dynamics attention block on a feature clip
    CpdaDemo(CpdaDemoArgs),
    /// Dice, HD95 and TCD of predicted masks against ground truth
    Eval(EvalArgs),
    /// Write a reproducible random CPDA weight file
    SeedWeights(SeedWeightsArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Frames per cardiac cycle [default: 32]
    #[arg(long = "t")]
    pub t_count: Option<usize>,
    /// Image width and height in pixels [default: 128]
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of cycles [default: 1]
    #[arg(long)]
    pub cycles: Option<usize>,
    /// LV semi-axis at end-diastole, pixels [default: 24]
    #[arg(long)]
    pub base_radius: Option<f64>,
    /// Fractional radius reduction at end-systole [default: 0.3]
    #[arg(long)]
    pub contraction: Option<f64>,
    /// Speckle noise stddev [default: 0.02]
    #[arg(long)]
    pub speckle: Option<f64>,
    /// Output directory
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Frame directory or .eds container
    pub input: Option<PathBuf>,
    /// Smoothness weight [default: 15]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Jacobi iterations [default: 100]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Presmoothing stddev in pixels [default: 1]
    #[arg(long)]
    pub presmooth: Option<f64>,
    /// Output directory for flow_%04d.bin
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EdgArgs {
    /// Frame directory or .eds container
    pub input: Option<PathBuf>,
    /// Ring count R [default: 4]
    #[arg(long)]
    pub r_bins: Option<usize>,
    /// Angular bin count TH [default: 12]
    #[arg(long)]
    pub theta_bins: Option<usize>,
    /// Descriptor PCA dimension [default: 10]
    #[arg(long)]
    pub pca_k: Option<usize>,
    /// RBF centers M [default: 16]
    #[arg(long)]
    pub centers: Option<usize>,
    /// LMS learning rate [default: 0.05]
    #[arg(long)]
    pub learn_rate: Option<f64>,
    /// LMS epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight fit: lms or ls [default: lms]
    #[arg(long)]
    pub fit: Option<String>,
    /// P_EDG dimension k2 [default: 8]
    #[arg(long)]
    pub k2: Option<usize>,
    /// Output directory
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CpdaDemoArgs {
    /// Input feature clip (.ftc)
    #[arg(long)]
    pub clip: PathBuf,
    /// Weight file (JSON)
    #[arg(long, conflicts_with = "seed_weights")]
    pub weights: Option<PathBuf>,
    /// Draw random weights from --seed instead of reading a file
    #[arg(long)]
    pub seed_weights: bool,
    /// End-diastole frame index
    #[arg(long)]
    pub ed: usize,
    /// End-systole frame index
    #[arg(long)]
    pub es: usize,
    /// Dynamic features CSV (t,p0,…) with T or T−1 rows; zeros if omitted
    #[arg(long)]
    pub pedg: Option<PathBuf>,
    /// Modulation strength [default: 0.5]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output clip (.ftc)
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory with predicted mask_%04d.pgm
    pub pred: PathBuf,
    /// Directory with ground-truth mask_%04d.pgm
    pub gt: PathBuf,
    /// Report path (.json); a .csv with the same stem is written next to it
    #[arg(long, short = 'r')]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeedWeightsArgs {
    /// Feature channels C [default: 8]
    #[arg(long)]
    pub channels: Option<usize>,
    /// Dynamic feature length k2 [default: 8]
    #[arg(long)]
    pub k2: Option<usize>,
    /// Phase embedding width d_p [default: 8]
    #[arg(long)]
    pub d_phase: Option<usize>,
    /// Dynamic embedding width d_e [default: 8]
    #[arg(long)]
    pub d_edg: Option<usize>,
    /// Attention heads [default: 2]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Modulation strength [default: 0.5]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output weight file
    #[arg(short, long)]
    pub out: PathBuf,
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn required_path(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .with_context(|| format!("no {what} given (flag or config)"))
}

fn cmd_phantom(args: PhantomArgs, mut cfg: PipelineConfig) -> anyhow::Result<()> {
    let spec = &mut cfg.phantom;
    spec.seed = cfg.seed;
    if let Some(t) = args.t_count {
        spec.t_count = t;
    }
    if let Some(s) = args.size {
        spec.width = s;
        spec.height = s;
    }
    if let Some(c) = args.cycles {
        spec.cycles = c;
    }
    if let Some(r) = args.base_radius {
        spec.base_radius = r;
    }
    if let Some(c) = args.contraction {
        spec.contraction_fraction = c;
    }
    if let Some(s) = args.speckle {
        spec.speckle_sigma = s;
    }
    let out = required_path(args.out, &cfg.output, "output directory")?;
    let (seq, masks) = seqio::generate_phantom(&cfg.phantom)?;
    seqio::save_sequence(&seq, &out)?;
    seqio::save_masks(&masks, &out)?;
    println!("ed={} es={}", seq.ed_index(), seq.es_index());
    Ok(())
}

fn cmd_flow(args: FlowArgs, mut cfg: PipelineConfig) -> anyhow::Result<()> {
    if let Some(a) = args.alpha {
        cfg.flow.alpha = a;
    }
    if let Some(i) = args.iterations {
        cfg.flow.iterations = i;
    }
    if let Some(s) = args.presmooth {
        cfg.flow.presmooth_sigma = s;
    }
    let input = required_path(args.input, &cfg.input, "input sequence")?;
    let out = required_path(args.out, &cfg.output, "output directory")?;
    let seq = seqio::load_sequence(&input)?;
    let flows = flow::flow_sequence(&seq, &cfg.flow).map_err(crate::Error::from)?;
    flow::save_flows(&flows, &out).map_err(crate::Error::from)?;
    for (t, f) in flows.iter().enumerate() {
        println!("flow {t}: mean |uv| = {:.4}", f.mean_magnitude());
    }
    Ok(())
}

fn cmd_edg(args: EdgArgs, mut cfg: PipelineConfig) -> anyhow::Result<()> {
    if let Some(v) = args.r_bins {
        cfg.grid.r_bins = v;
    }
    if let Some(v) = args.theta_bins {
        cfg.grid.theta_bins = v;
    }
    if let Some(v) = args.pca_k {
        cfg.pca_k = v;
    }
    if let Some(v) = args.centers {
        cfg.rbf.m_centers = v;
    }
    if let Some(v) = args.learn_rate {
        cfg.rbf.learn_rate = v;
    }
    if let Some(v) = args.epochs {
        cfg.rbf.epochs = v;
    }
    if let Some(v) = args.fit {
        cfg.rbf.fit = serde_json::from_value(serde_json::Value::String(v.clone()))
            .with_context(|| format!("unknown fit mode {v:?}; use lms or ls"))?;
    }
    if let Some(v) = args.k2 {
        cfg.k2 = v;
    }
    let input = required_path(args.input, &cfg.input, "input sequence")?;
    let out = required_path(args.out, &cfg.output, "output directory")?;
    let seq = seqio::load_sequence(&input)?;
    let run = pipeline::run_edg(&seq, &cfg)?;
    pipeline::write_edg_outputs(&run, &seq, &out)?;
    if !run.has_motion() {
        eprintln!("warning: no motion detected");
    }
    println!("final training residual: {:.6e}", run.model.final_residual());
    Ok(())
}

fn cmd_cpda_demo(args: CpdaDemoArgs, cfg: PipelineConfig) -> anyhow::Result<()> {
    let bytes = fs::read(&args.clip).with_context(|| format!("reading {}", args.clip.display()))?;
    let clip = cpda::decode_ftc(&bytes).map_err(crate::Error::from)?;
    let pedg = match &args.pedg {
        Some(p) => pipeline::read_matrix_csv(p)?,
        None => DMatrix::zeros(clip.t, cfg.k2),
    };
    let mut weights = match (&args.weights, args.seed_weights) {
        (Some(p), _) => {
            let text = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice::<CpdaWeights>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        (None, true) => {
            let shape = CpdaShape {
                channels: clip.c,
                k2: pedg.ncols(),
                ..cfg.cpda
            };
            CpdaWeights::seeded(shape, cfg.seed)
        }
        (None, false) => bail!("pass --weights <file> or --seed-weights"),
    };
    if let Some(a) = args.alpha {
        weights.shape.alpha = a;
    }
    if weights.shape.channels != clip.c {
        bail!(
            "channel dimension: clip has C={}, weights expect C={}",
            clip.c,
            weights.shape.channels
        );
    }
    if weights.shape.k2 != pedg.ncols() {
        bail!(
            "k2 dimension: dynamic features have {} columns, weights expect {}",
            pedg.ncols(),
            weights.shape.k2
        );
    }
    let phase = cpda::phase_track(clip.t, args.ed, args.es).map_err(crate::Error::from)?;
    let out = cpda::cpda_forward(&clip, &phase, &pedg, &weights).map_err(crate::Error::from)?;
    write_atomic(&args.out, &cpda::encode_ftc(&out))?;
    for (t, v) in cpda::modulation_summary(&clip, &out).iter().enumerate() {
        println!("frame {t}: mean |X_enhanced - X| = {v:.6}");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let pred = seqio::load_masks(&args.pred)?;
    let gt = seqio::load_masks(&args.gt)?;
    let report = metrics::evaluate(&pred, &gt).map_err(crate::Error::from)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_atomic(&args.report, &json)?;
    write_atomic(&args.report.with_extension("csv"), report.to_csv().as_bytes())?;
    for l in &report.per_label {
        if !l.hd95_missing_frames.is_empty() {
            eprintln!("{}: hd95 missing for {} frame(s)", l.label, l.hd95_missing_frames.len());
        }
    }
    println!("{}", report.summary_line());
    Ok(())
}

fn cmd_seed_weights(args: SeedWeightsArgs, cfg: PipelineConfig) -> anyhow::Result<()> {
    let mut shape = cfg.cpda;
    shape.k2 = cfg.k2;
    if let Some(v) = args.channels {
        shape.channels = v;
    }
    if let Some(v) = args.k2 {
        shape.k2 = v;
    }
    if let Some(v) = args.d_phase {
        shape.d_phase = v;
    }
    if let Some(v) = args.d_edg {
        shape.d_edg = v;
    }
    if let Some(v) = args.heads {
        shape.heads = v;
    }
    if let Some(v) = args.alpha {
        shape.alpha = v;
    }
    shape.validate().map_err(crate::Error::from)?;
    let weights = CpdaWeights::seeded(shape, cfg.seed);
    let mut json = serde_json::to_vec(&weights)?;
    json.push(b'\n');
    write_atomic(&args.out, &json)?;
    println!("wrote {} (d={}, heads={})", args.out.display(), shape.token_dim(), shape.heads);
    Ok(())
}

/// Dispatches a parsed command line.
pub fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.threads {
        // ignore "already initialized" when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Phantom(a) => cmd_phantom(a, cfg),
        Command::Flow(a) => cmd_flow(a, cfg),
        Command::Edg(a) => cmd_edg(a, cfg),
        Command::CpdaDemo(a) => cmd_cpda_demo(a, cfg),
        Command::Eval(a) => cmd_eval(a),
        Command::SeedWeights(a) => cmd_seed_weights(a, cfg),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
