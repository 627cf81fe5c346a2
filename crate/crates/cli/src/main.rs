//! `bnf` — boundary-driven segmentation globalization toolbox.
//!
//! Subcommands cover the whole pipeline: synthetic scene generation, boundary
//! readout training and prediction, NMS thinning, affinity-graph construction,
//! the closed-form global solve, IOU evaluation, and a self-contained
//! benchmark against the argmax and ICM baselines.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad files), 2
//! numerical failure (PCG non-convergence, training divergence, benchmark
//! regression).

mod config;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use bnf_core::affinity::{build_graph, AffinityConfig, AffinityGraph};
use bnf_core::boundary::{
    balanced_sample, nms_thin, predict_boundary, train_boundary_run, BoundaryWeights, TrainConfig,
};
use bnf_core::maps::{BoundaryMap, LabelMap, UnaryField};
use bnf_core::metrics::{evaluate_corpus, evaluate_corpus_strict};
use bnf_core::solver::{closed_form_solve, icm_baseline, SolveConfig};
use bnf_core::synth::{generate_scene, SceneSpec};
use bnf_core::tensor::Tensor3;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "bnf",
    version = concat!(env!("CARGO_PKG_VERSION"), " (formats: BNFT v1)"),
    about = "Boundary-driven global inference for semantic segmentation"
)]
struct Cli {
    /// Flat `key = value` config file; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Cap on worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its tensors to a directory.
    Synth(SynthArgs),
    /// Train the linear boundary readout on a feature stack.
    TrainBoundary(TrainArgs),
    /// Predict a boundary map from a stack and trained weights.
    PredictBoundary(PredictArgs),
    /// Thin a boundary map with non-maximum suppression.
    Nms(NmsArgs),
    /// Build the sparse affinity graph and dump it as text.
    Affinity(AffinityArgs),
    /// Run the closed-form global solve and write the labeling.
    Infer(InferArgs),
    /// Evaluate predictions against ground truth with PP-IOU and PI-IOU.
    Eval(EvalArgs),
    /// Generate a corpus and compare argmax, ICM, and the global solve.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    classes: u32,
    #[arg(long, default_value_t = 4)]
    shapes: usize,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    blur: usize,
    /// Random smooth feature channels (one planted channel is added).
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    stack: PathBuf,
    /// Ground-truth boundary map (targets in [0,1]).
    #[arg(long, value_name = "FILE")]
    truth: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the bias fixed at zero.
    #[arg(long)]
    no_bias: bool,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    stack: PathBuf,
    #[arg(long, value_name = "FILE")]
    weights: PathBuf,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    /// Apply non-maximum suppression to the prediction.
    #[arg(long)]
    nms: bool,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct NmsArgs {
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct AffinityArgs {
    #[arg(long, value_name = "FILE")]
    boundary: PathBuf,
    /// Optional softmax field for the object-level affinity term.
    #[arg(long, value_name = "FILE")]
    unary: Option<PathBuf>,
    #[arg(long)]
    radius: Option<u32>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    sigma_sb: Option<f64>,
    #[arg(long)]
    sigma_sm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Print degree statistics as JSON.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long, value_name = "FILE")]
    unary: PathBuf,
    #[arg(long, value_name = "FILE")]
    boundary: PathBuf,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sigma_sb: Option<f64>,
    #[arg(long)]
    sigma_sm: Option<f64>,
    /// Multiply in the softmax similarity term.
    #[arg(long)]
    use_softmax_term: bool,
    #[arg(long)]
    radius: Option<u32>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pcg_tol: Option<f64>,
    /// 0 means ceil(10 * sqrt(n)).
    #[arg(long)]
    pcg_max_iter: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, value_name = "FILE")]
    out_labels: PathBuf,
    /// Also write the continuous per-class assignments.
    #[arg(long, value_name = "FILE")]
    out_z: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pred_dir: PathBuf,
    #[arg(long, value_name = "DIR")]
    truth_dir: PathBuf,
    #[arg(long)]
    classes: u32,
    /// Error out when a class is absent from the whole corpus.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    classes: u32,
    #[arg(long, default_value_t = 4)]
    shapes: usize,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    blur: usize,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

/// Raised when a numerical check fails without a core error to carry it.
#[derive(Debug)]
struct NumericalFailure(String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Help/version go to stdout, usage errors to stderr.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err);
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<bnf_core::Error>() {
            if core.is_numerical() {
                return 2;
            }
        }
        if cause.downcast_ref::<NumericalFailure>().is_some() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("initializing thread pool")?;
    }
    match cli.command {
        Command::Synth(args) => cmd_synth(args, &cfg),
        Command::TrainBoundary(args) => cmd_train(args, &cfg),
        Command::PredictBoundary(args) => cmd_predict(args),
        Command::Nms(args) => cmd_nms(args),
        Command::Affinity(args) => cmd_affinity(args, &cfg),
        Command::Infer(args) => cmd_infer(args, &cfg),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args, &cfg),
    }
}

fn read_tensor(path: &Path) -> Result<Tensor3> {
    Tensor3::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_tensor(t: &Tensor3, path: &Path) -> Result<()> {
    t.write(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn emit_report(value: &serde_json::Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(path) => fs::write(path, text.as_bytes())
            .with_context(|| format!("writing report {}", path.display()))?,
        None => println!("{}", text),
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs, cfg: &RunConfig) -> Result<()> {
    let spec = SceneSpec {
        height: args.height,
        width: args.width,
        classes: args.classes,
        shapes: args.shapes,
        noise_sigma: args.noise,
        blur_radius: args.blur,
        channels: args.channels,
        seed: args.seed.unwrap_or(cfg.seed),
    };
    let scene = generate_scene(&spec)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let file = |name: &str| args.out_dir.join(name);
    write_tensor(&scene.truth.to_tensor(), &file("truth.bnft"))?;
    write_tensor(&scene.boundary.to_tensor(), &file("boundary.bnft"))?;
    write_tensor(scene.unary.tensor(), &file("unary.bnft"))?;
    write_tensor(&scene.stack, &file("stack.bnft"))?;
    write_tensor(&scene.planted_weights.to_tensor(), &file("weights.bnft"))?;
    emit_report(
        &json!({
            "out_dir": args.out_dir,
            "files": ["truth.bnft", "boundary.bnft", "unary.bnft", "stack.bnft", "weights.bnft"],
            "height": spec.height,
            "width": spec.width,
            "classes": spec.classes,
            "seed": spec.seed,
        }),
        None,
    )
}

fn cmd_train(args: TrainArgs, cfg: &RunConfig) -> Result<()> {
    let stack = read_tensor(&args.stack)?;
    let truth = BoundaryMap::from_tensor(&read_tensor(&args.truth)?)?;
    let sampled = balanced_sample(
        &truth,
        &stack,
        args.samples.unwrap_or(cfg.samples),
        args.seed.unwrap_or(cfg.seed),
    )?;
    let train_cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(cfg.epochs),
        lr: args.lr.unwrap_or(cfg.lr),
        batch: args.batch.unwrap_or(cfg.batch),
        seed: args.seed.unwrap_or(cfg.seed),
        zero_bias: args.no_bias,
    };
    let start = Instant::now();
    let run = train_boundary_run(&sampled.samples, &train_cfg)?;
    write_tensor(&run.weights.to_tensor(), &args.out)?;
    emit_report(
        &json!({
            "out": args.out,
            "samples": sampled.samples.len(),
            "empty_quartiles": sampled.empty_quartiles,
            "epochs": train_cfg.epochs,
            "initial_loss": run.epoch_losses.first(),
            "final_loss": run.epoch_losses.last(),
            "wall_time_ms": start.elapsed().as_millis() as u64,
        }),
        None,
    )
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let stack = read_tensor(&args.stack)?;
    let weights = BoundaryWeights::from_tensor(&read_tensor(&args.weights)?)?;
    let mut map = predict_boundary(&stack, &weights, args.height, args.width)?;
    if args.nms {
        map = nms_thin(&map);
    }
    write_tensor(&map.to_tensor(), &args.out)?;
    emit_report(
        &json!({
            "out": args.out,
            "height": args.height,
            "width": args.width,
            "nms": args.nms,
        }),
        None,
    )
}

fn cmd_nms(args: NmsArgs) -> Result<()> {
    let map = BoundaryMap::from_tensor(&read_tensor(&args.input)?)?;
    let thinned = nms_thin(&map);
    write_tensor(&thinned.to_tensor(), &args.out)?;
    let kept = thinned.values().iter().filter(|v| **v > 0.0).count();
    emit_report(&json!({ "out": args.out, "nonzero": kept }), None)
}

#[allow(clippy::too_many_arguments)]
fn affinity_config(
    cfg: &RunConfig,
    sigma_sb: Option<f64>,
    sigma_sm: Option<f64>,
    radius: Option<u32>,
    fraction: Option<f64>,
    seed: Option<u64>,
    use_softmax_term: bool,
) -> AffinityConfig {
    AffinityConfig {
        sigma_sb: sigma_sb.unwrap_or(cfg.sigma_sb),
        sigma_sm: sigma_sm.unwrap_or(cfg.sigma_sm),
        radius: radius.unwrap_or(cfg.radius),
        sample_fraction: fraction.unwrap_or(cfg.fraction),
        seed: seed.unwrap_or(cfg.seed),
        use_softmax_term,
    }
}

fn degree_stats(graph: &AffinityGraph) -> serde_json::Value {
    let degrees = graph.degrees();
    let mean = degrees.iter().sum::<f64>() / degrees.len() as f64;
    let max = degrees.iter().cloned().fold(0.0f64, f64::max);
    json!({
        "pixels": graph.n(),
        "edges": graph.edge_count(),
        "degree_min": graph.min_degree(),
        "degree_mean": mean,
        "degree_max": max,
    })
}

fn cmd_affinity(args: AffinityArgs, cfg: &RunConfig) -> Result<()> {
    let boundary = BoundaryMap::from_tensor(&read_tensor(&args.boundary)?)?;
    let unary = match args.unary.as_deref() {
        Some(p) => Some(UnaryField::from_softmax(read_tensor(p)?)?),
        None => None,
    };
    let acfg = affinity_config(
        cfg,
        args.sigma_sb,
        args.sigma_sm,
        args.radius,
        args.fraction,
        args.seed,
        args.unary.is_some(),
    );
    let start = Instant::now();
    let graph = build_graph(&boundary, unary.as_ref(), &acfg)?;
    let mut out = std::io::BufWriter::new(
        fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?,
    );
    graph
        .write_text(&mut out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    out.flush()?;
    let mut report = json!({
        "out": args.out,
        "wall_time_ms": start.elapsed().as_millis() as u64,
    });
    if args.stats {
        report
            .as_object_mut()
            .unwrap()
            .extend(degree_stats(&graph).as_object().unwrap().clone());
    }
    emit_report(&report, None)
}

fn cmd_infer(args: InferArgs, cfg: &RunConfig) -> Result<()> {
    let unary = UnaryField::from_softmax(read_tensor(&args.unary)?)?;
    let boundary = BoundaryMap::from_tensor(&read_tensor(&args.boundary)?)?;
    let acfg = affinity_config(
        cfg,
        args.sigma_sb,
        args.sigma_sm,
        args.radius,
        args.fraction,
        args.seed,
        args.use_softmax_term,
    );
    let max_iter = args.pcg_max_iter.unwrap_or(cfg.pcg_max_iter);
    let scfg = SolveConfig {
        mu: args.mu.unwrap_or(cfg.mu),
        pcg_tol: args.pcg_tol.unwrap_or(cfg.pcg_tol),
        pcg_max_iter: (max_iter > 0).then_some(max_iter),
        ridge: args.ridge.unwrap_or(cfg.ridge),
    };
    let start = Instant::now();
    let graph = build_graph(&boundary, Some(&unary), &acfg)?;
    let solution = closed_form_solve(&graph, &unary, &scfg)?;
    write_tensor(&solution.labels.to_tensor(), &args.out_labels)?;
    if let Some(out_z) = &args.out_z {
        write_tensor(&solution.z, out_z)?;
    }
    let per_class: Vec<_> = solution
        .per_class
        .iter()
        .enumerate()
        .map(|(k, s)| {
            json!({
                "class": k,
                "iterations": s.iterations,
                "residual": s.residual,
                "energy": s.energy,
            })
        })
        .collect();
    emit_report(
        &json!({
            "out_labels": args.out_labels,
            "out_z": args.out_z,
            "pixels": graph.n(),
            "edges": graph.edge_count(),
            "classes": unary.classes(),
            "mu": scfg.mu,
            "per_class": per_class,
            "wall_time_ms": start.elapsed().as_millis() as u64,
        }),
        args.report.as_deref(),
    )
}

fn sorted_bnft_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".bnft") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred_names = sorted_bnft_names(&args.pred_dir)?;
    let truth_names = sorted_bnft_names(&args.truth_dir)?;
    if pred_names.is_empty() {
        bail!("no .bnft files in {}", args.pred_dir.display());
    }
    if pred_names != truth_names {
        bail!(
            "prediction and truth directories hold different file sets \
             ({} vs {} files)",
            pred_names.len(),
            truth_names.len()
        );
    }
    let mut pairs = Vec::with_capacity(pred_names.len());
    for name in &pred_names {
        let pred =
            LabelMap::from_tensor(&read_tensor(&args.pred_dir.join(name))?, Some(args.classes))?;
        let truth =
            LabelMap::from_tensor(&read_tensor(&args.truth_dir.join(name))?, Some(args.classes))?;
        pairs.push((pred, truth));
    }
    let report = if args.strict {
        evaluate_corpus_strict(&pairs)?
    } else {
        evaluate_corpus(&pairs)?
    };
    emit_report(&serde_json::to_value(&report)?, args.out.as_deref())
}

fn cmd_bench(args: BenchArgs, cfg: &RunConfig) -> Result<()> {
    let base_seed = args.seed.unwrap_or(cfg.seed);
    let sweeps = args.sweeps.unwrap_or(cfg.sweeps);
    if args.scenes == 0 {
        bail!("need at least one scene");
    }
    let start = Instant::now();
    // truth, argmax, icm, bnf per scene.
    let per_scene: Vec<(LabelMap, LabelMap, LabelMap, LabelMap)> = (0..args.scenes)
        .into_par_iter()
        .map(|i| {
            let spec = SceneSpec {
                height: args.height,
                width: args.width,
                classes: args.classes,
                shapes: args.shapes,
                noise_sigma: args.noise,
                blur_radius: args.blur,
                channels: 1,
                seed: base_seed.wrapping_add(i as u64),
            };
            let scene = generate_scene(&spec)?;
            let acfg = AffinityConfig {
                sigma_sb: cfg.sigma_sb,
                sigma_sm: cfg.sigma_sm,
                radius: cfg.radius,
                sample_fraction: cfg.fraction,
                seed: spec.seed,
                use_softmax_term: false,
            };
            let graph = build_graph(&scene.boundary, Some(&scene.unary), &acfg)?;
            let scfg = SolveConfig {
                mu: cfg.mu,
                pcg_tol: cfg.pcg_tol,
                pcg_max_iter: (cfg.pcg_max_iter > 0).then_some(cfg.pcg_max_iter),
                ridge: cfg.ridge,
            };
            let bnf = closed_form_solve(&graph, &scene.unary, &scfg)?.labels;
            let icm = icm_baseline(&graph, &scene.unary, sweeps)?;
            let argmax = scene.unary.argmax_labels();
            Ok((scene.truth, argmax, icm, bnf))
        })
        .collect::<Result<_>>()?;

    let corpus = |pick: fn(&(LabelMap, LabelMap, LabelMap, LabelMap)) -> &LabelMap| {
        per_scene
            .iter()
            .map(|entry| (pick(entry).clone(), entry.0.clone()))
            .collect::<Vec<_>>()
    };
    let argmax = evaluate_corpus(&corpus(|e| &e.1))?;
    let icm = evaluate_corpus(&corpus(|e| &e.2))?;
    let bnf = evaluate_corpus(&corpus(|e| &e.3))?;

    emit_report(
        &json!({
            "scenes": args.scenes,
            "height": args.height,
            "width": args.width,
            "classes": args.classes,
            "seed": base_seed,
            "argmax": { "pp_iou": argmax.pp_iou, "pi_iou": argmax.pi_iou },
            "icm": { "pp_iou": icm.pp_iou, "pi_iou": icm.pi_iou },
            "bnf": { "pp_iou": bnf.pp_iou, "pi_iou": bnf.pi_iou },
            "wall_time_ms": start.elapsed().as_millis() as u64,
        }),
        args.report.as_deref(),
    )?;
    if bnf.pp_iou < argmax.pp_iou {
        return Err(NumericalFailure(format!(
            "global solve PP-IOU {:.4} fell below argmax PP-IOU {:.4}",
            bnf.pp_iou, argmax.pp_iou
        ))
        .into());
    }
    Ok(())
}
