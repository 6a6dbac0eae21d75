use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use planescale::config::{parse_run_config, RunConfig};
use planescale::evaluate::{
    ablation_csv, ablation_run, evaluate_depth, sensitivity_run, sweep_csv, Alignment, SweepAxis,
};
use planescale::io::{
    load_depth_pfm, load_flow, load_image_rgb, load_intrinsics, load_label_png, save_depth_pfm, save_json,
};
use planescale::pipeline::reconstruct;
use planescale::synth::{gen_scene, load_bundle, parse_scene_spec, write_bundle, SceneBundle, SynthError};

#[derive(Parser)]
#[command(name = "planescale", version, about = "Two-view dense depth for dynamic scenes")]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct both frames' depth from an image pair and its forward flow.
    Reconstruct(ReconstructArgs),
    /// Render a synthetic scene bundle from a JSON spec.
    Synth(SynthArgs),
    /// Score an estimated depth map against ground truth.
    Eval(EvalArgs),
    /// Cumulative energy-term ablation on a scene bundle.
    Ablate(AblateArgs),
    /// One-parameter sensitivity sweep on a scene bundle.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    next: PathBuf,
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// 16-bit label PNG replacing the built-in segmentation.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Also write the superpixel graph to graph.json.
    #[arg(long)]
    dump_graph: bool,
    /// Also write the energy trace as trace.csv.
    #[arg(long)]
    dump_trace: bool,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignArg {
    Median,
    Ls,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Label PNG; nonzero pixels are scored.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "median")]
    alignment: AlignArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// CSV destination; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// superpixel_count, k, flow_noise or grid_vs_slic.
    #[arg(long)]
    axis: String,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

fn input_err(what: impl Display, e: impl Display) -> Failure {
    Failure {
        code: 2,
        message: format!("{what}: {e}"),
    }
}

fn solver_err(e: impl Display) -> Failure {
    Failure {
        code: 3,
        message: format!("solver failed: {e}"),
    }
}

/// Input error naming `path`, unless the message already starts with it.
fn path_err(path: &Path, e: impl Display) -> Failure {
    let msg = e.to_string();
    let shown = path.display().to_string();
    if msg.starts_with(&shown) {
        Failure { code: 2, message: msg }
    } else {
        input_err(shown, msg)
    }
}

fn load<T, E: Display>(path: &Path, f: impl FnOnce(&Path) -> Result<T, E>) -> Result<T, Failure> {
    f(path).map_err(|e| path_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| input_err(path.display(), e))
}

fn run_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| input_err(p.display(), e))?;
            parse_run_config(&text).map_err(|e| input_err(p.display(), e))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let cfg = cfg.effective();
    cfg.validate().map_err(|e| input_err("config", e))?;
    Ok(cfg)
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<(), Failure> {
    let cfg = run_config(&a.run)?;
    let img = load(&a.reference, load_image_rgb)?;
    let next = load(&a.next, load_image_rgb)?;
    let flow = load(&a.flow, load_flow)?;
    let k = load(&a.intrinsics, load_intrinsics)?;
    let dims = (k.width, k.height);
    let check = |path: &Path, w: usize, h: usize| {
        if (w, h) == dims {
            Ok(())
        } else {
            Err(input_err(
                path.display(),
                format!("dimensions {w}x{h} do not match the intrinsics ({}x{})", dims.0, dims.1),
            ))
        }
    };
    check(&a.reference, img.width, img.height)?;
    check(&a.next, next.width, next.height)?;
    check(&a.flow, flow.width, flow.height)?;
    let labels = match &a.labels {
        Some(p) => {
            let (w, h, l) = load(p, load_label_png)?;
            check(p, w, h)?;
            Some(l)
        }
        None => None,
    };
    let rec = reconstruct(&img, &flow, &k, labels.as_deref(), &cfg).map_err(|e| {
        if e.is_input_error() {
            input_err("input", e)
        } else {
            solver_err(e)
        }
    })?;
    fs::create_dir_all(&a.out).map_err(|e| input_err(a.out.display(), e))?;
    let out = |name: &str| a.out.join(name);
    let io = |p: PathBuf| move |e: planescale::io::IoError| path_err(&p, e);
    save_depth_pfm(&rec.depth1, &out("depth1.pfm")).map_err(io(out("depth1.pfm")))?;
    save_depth_pfm(&rec.depth2, &out("depth2.pfm")).map_err(io(out("depth2.pfm")))?;
    save_json(&out("scales.json"), &rec.report()).map_err(io(out("scales.json")))?;
    save_json(&out("trace.json"), &rec.trace).map_err(io(out("trace.json")))?;
    save_json(&out("effective_config.json"), &cfg).map_err(io(out("effective_config.json")))?;
    if a.dump_graph {
        save_json(&out("graph.json"), &rec.problem.graph).map_err(io(out("graph.json")))?;
    }
    if a.dump_trace {
        let mut csv = String::from("stage,round,iteration,energy,accepted\n");
        for e in &rec.trace.entries {
            let stage = serde_json::to_value(e.stage).expect("stage serializes");
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                stage.as_str().unwrap_or_default(),
                e.round,
                e.iteration,
                e.energy,
                u8::from(e.accepted)
            ));
        }
        write_text(&out("trace.csv"), &csv)?;
    }
    log::info!(
        "energy {:.6e} after {} rounds ({} accepted)",
        rec.breakdown.total,
        rec.rounds,
        rec.accepted_rounds
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.spec).map_err(|e| input_err(a.spec.display(), e))?;
    let mut spec = parse_scene_spec(&text).map_err(|e| input_err(a.spec.display(), e))?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let scene = gen_scene(&spec).map_err(|e| match e {
        SynthError::InfeasibleSpec(_) => solver_err(e),
        other => input_err(a.spec.display(), other),
    })?;
    write_bundle(&scene, &a.out).map_err(|e| input_err(a.out.display(), e))
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    let est = load(&a.est, load_depth_pfm)?;
    let gt = load(&a.gt, load_depth_pfm)?;
    let mask = match &a.mask {
        Some(p) => {
            let (_, _, l) = load(p, load_label_png)?;
            Some(l.into_iter().map(|v| v != 0).collect::<Vec<bool>>())
        }
        None => None,
    };
    let method = match a.alignment {
        AlignArg::Median => Alignment::Median,
        AlignArg::Ls => Alignment::LeastSquares,
    };
    let report = evaluate_depth(&est, &gt, mask.as_deref(), method).map_err(|e| input_err("eval", e))?;
    match &a.out {
        Some(p) => save_json(p, &report).map_err(|e| input_err(p.display(), e)),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn bundle(path: &Path) -> Result<SceneBundle, Failure> {
    load_bundle(path).map_err(|e| input_err(path.display(), e))
}

fn harness_failure(e: planescale::evaluate::HarnessError) -> Failure {
    if e.is_input_error() {
        input_err("input", e)
    } else {
        solver_err(e)
    }
}

fn cmd_ablate(a: &AblateArgs) -> Result<(), Failure> {
    let cfg = run_config(&a.run)?;
    let b = bundle(&a.bundle)?;
    let rows = ablation_run(&b, &cfg).map_err(harness_failure)?;
    emit(&a.out, &ablation_csv(&rows))
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let cfg = run_config(&a.run)?;
    let axis: SweepAxis = a.axis.parse().map_err(|e| input_err("--axis", e))?;
    let b = bundle(&a.bundle)?;
    let rows = sensitivity_run(&b, &cfg, axis, &a.values).map_err(harness_failure)?;
    emit(&a.out, &sweep_csv(axis, &rows))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
