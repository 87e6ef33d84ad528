//! `mabr` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mabr::mesh::{load_labels, load_mesh, read_label_file, save_labels, save_mesh, Mesh};
use mabr::metrics::{chamfer, per_part_rms, rms_error};
use mabr::pipeline::{register, PipelineConfig, RegistrationReport};
use mabr::shape_model::{train_parts, ComponentCount, ShapeModelSet, TrainOptions};
use mabr::synth::{corrupt, sample_corpus, CorruptionSpec, Resolution, EXTREMITY_LABELS};
use mabr::SegmentedTemplate;

#[derive(Parser, Debug)]
#[command(name = "mabr", version, about = "Register a statistical body template onto scans")]
struct Cli {
    /// Seed for all random choices; overrides the seed in a corruption spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train holistic and per-part shape models from meshes in correspondence.
    Train(TrainArgs),
    /// Fit the model template to one or more scans.
    Register(RegisterArgs),
    /// Write a synthetic corpus of labeled bodies.
    Synth(SynthArgs),
    /// Apply holes, noise, outlier sheets and pose jitter to a mesh.
    Corrupt(CorruptArgs),
    /// Compare a fitted mesh with a reference.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of .obj/.ply meshes sharing one topology, read in name order.
    corpus: PathBuf,
    /// Per-vertex part labels, optionally headed by `# extremities: ...`.
    labels: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Holistic component count (default: 98% of variance, at most 60).
    #[arg(long)]
    k: Option<usize>,
    /// Per-part component count (default: 98% of variance, at most 20).
    #[arg(long)]
    part_k: Option<usize>,
    #[arg(long, default_value_t = SegmentedTemplate::DEFAULT_PART_COUNT)]
    parts: usize,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    model: PathBuf,
    #[arg(required = true)]
    scans: Vec<PathBuf>,
    /// Fitted mesh path, or a directory when several scans are given.
    #[arg(short, long)]
    output: PathBuf,
    /// Report path (single scan only; batch reports go next to the meshes).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Residual traces as CSV (single scan only).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground truth in vertex correspondence with the template (single scan only).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Scans registered concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value = "desk")]
    resolution: Resolution,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct CorruptArgs {
    mesh: PathBuf,
    /// Corruption spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Part labels, needed for named regions and pose jitter.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    fitted: PathBuf,
    truth: PathBuf,
    /// The meshes share vertex order, so per-vertex RMS is meaningful.
    #[arg(long)]
    corresponding: bool,
    /// Part labels for per-part RMS (with --corresponding).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Registration report whose traces go into --plot-data.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for CSV plot data: error distribution, per-vertex errors, traces.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(mabr::Error),
}

impl From<mabr::Error> for Failure {
    fn from(e: mabr::Error) -> Self {
        Failure::Data(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(e) if e.is_solver_failure() => 3,
            Failure::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Data(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(mabr::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn train(args: &TrainArgs) -> CliResult<()> {
    let entries = std::fs::read_dir(&args.corpus).map_err(|e| io_err(&args.corpus, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(&args.corpus, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("obj" | "ply")) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.len() < 2 {
        return Err(Failure::Data(mabr::Error::InvalidParameter(format!(
            "{} holds {} meshes; training needs at least 2",
            args.corpus.display(),
            paths.len()
        ))));
    }
    let corpus = paths.iter().map(|p| load_mesh(p, None)).collect::<Result<Vec<_>, _>>()?;
    let label_file = read_label_file(&args.labels)?;
    let labels = load_labels(&args.labels, corpus[0].vertex_count())?;
    let defaults = TrainOptions::default();
    let opts = TrainOptions {
        holistic: args.k.map_or(defaults.holistic, ComponentCount::Fixed),
        parts: args.part_k.map_or(defaults.parts, ComponentCount::Fixed),
        extremities: label_file.extremities.unwrap_or_else(|| EXTREMITY_LABELS.to_vec()),
        tag: args
            .corpus
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let models = train_parts(&corpus, &labels, args.parts, &opts)?;
    models.save(&args.output)?;
    let part_k: Vec<String> = models.parts.iter().map(|m| m.component_count().to_string()).collect();
    println!(
        "trained on {} meshes: holistic k = {}, part k = [{}] -> {}",
        corpus.len(),
        models.holistic.component_count(),
        part_k.join(", "),
        args.output.display()
    );
    Ok(())
}

struct Job {
    scan: PathBuf,
    mesh_out: PathBuf,
    report_out: Option<PathBuf>,
    trace_out: Option<PathBuf>,
}

fn register_one(
    models: &ShapeModelSet,
    config: &PipelineConfig,
    job: &Job,
    truth: Option<&Mesh>,
) -> CliResult<RegistrationReport> {
    let scan = load_mesh(&job.scan, None)?;
    let (fitted, mut report) = register(models, &scan, config)?;
    if let Some(t) = truth {
        let labels = models.template.labels();
        report.metrics.rms = Some(rms_error(&fitted.vertices, &t.vertices)?);
        report.metrics.per_part_rms = Some(per_part_rms(&fitted.vertices, &t.vertices, labels, models.part_count())?);
    }
    save_mesh(&fitted, &job.mesh_out, None)?;
    if let Some(path) = &job.report_out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(path, json)?;
    }
    if let Some(path) = &job.trace_out {
        write_file(path, report.trace_csv())?;
    }
    Ok(report)
}

fn summary(scan: &Path, report: &RegistrationReport) -> String {
    let mut line = format!(
        "{}: chamfer {:.6e}, {:.2} s",
        scan.display(),
        report.metrics.chamfer,
        report.timings.total
    );
    if let Some(rms) = report.metrics.rms {
        let _ = write!(line, ", rms {rms:.6e}");
    }
    for w in &report.warnings {
        let _ = write!(line, "\n  warning: {w}");
    }
    line
}

fn register_cmd(args: &RegisterArgs) -> CliResult<()> {
    if args.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let batch = args.scans.len() > 1;
    if batch && (args.report.is_some() || args.trace.is_some() || args.truth.is_some()) {
        return Err(Failure::Usage(
            "--report, --trace and --truth take a single scan; batch outputs go to the output directory".into(),
        ));
    }
    let models = ShapeModelSet::load(&args.model)?;
    let config = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    config.validate(models.part_count())?;
    let truth = match &args.truth {
        Some(p) => Some(load_mesh(p, None)?),
        None => None,
    };
    let jobs: Vec<Job> = if batch {
        create_dir(&args.output)?;
        args.scans
            .iter()
            .map(|scan| {
                let stem = scan.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Job {
                    scan: scan.clone(),
                    mesh_out: args.output.join(format!("{stem}.obj")),
                    report_out: Some(args.output.join(format!("{stem}.report.json"))),
                    trace_out: Some(args.output.join(format!("{stem}.trace.csv"))),
                }
            })
            .collect()
    } else {
        vec![Job {
            scan: args.scans[0].clone(),
            mesh_out: args.output.clone(),
            report_out: args.report.clone(),
            trace_out: args.trace.clone(),
        }]
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    let results: Vec<CliResult<RegistrationReport>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|job| register_one(&models, &config, job, truth.as_ref()))
            .collect()
    });
    let mut worst: Option<Failure> = None;
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(report) => println!("{}", summary(&job.scan, &report)),
            Err(e) => {
                eprintln!("{}: {e}", job.scan.display());
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    match worst {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn synth(args: &SynthArgs, seed: u64) -> CliResult<()> {
    let (meshes, params) = sample_corpus(args.n, seed, args.resolution)?;
    create_dir(&args.output)?;
    for m in &meshes {
        save_mesh(m, args.output.join(format!("{}.obj", m.name)), None)?;
    }
    let labels = meshes[0].part_labels.as_ref().expect("generated bodies carry labels");
    save_labels(args.output.join("labels.txt"), labels, Some(&EXTREMITY_LABELS))?;
    let named: Vec<serde_json::Value> = meshes
        .iter()
        .zip(&params)
        .map(|(m, p)| serde_json::json!({ "name": m.name, "params": p }))
        .collect();
    let json = serde_json::to_string_pretty(&named).expect("params serialize");
    write_file(&args.output.join("params.json"), json)?;
    println!(
        "wrote {} bodies of {} vertices to {}",
        meshes.len(),
        meshes[0].vertex_count(),
        args.output.display()
    );
    Ok(())
}

fn corrupt_cmd(args: &CorruptArgs, seed: Option<u64>) -> CliResult<()> {
    let mut spec = CorruptionSpec::load(&args.spec)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let mut mesh = load_mesh(&args.mesh, None)?;
    if let Some(path) = &args.labels {
        let labels = load_labels(path, mesh.vertex_count())?;
        mesh = mesh.with_labels(labels)?;
    }
    let scan = corrupt(&mesh, &spec)?;
    save_mesh(&scan, &args.output, None)?;
    println!(
        "{} -> {}: {} of {} vertices",
        args.mesh.display(),
        args.output.display(),
        scan.vertex_count(),
        mesh.vertex_count()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    let fitted = load_mesh(&args.fitted, None)?;
    let truth = load_mesh(&args.truth, None)?;
    let ch = chamfer(&fitted.vertices, &truth.vertices)?;
    println!("chamfer {ch:.6e}");
    let mut errors = None;
    if args.corresponding {
        let rms = rms_error(&fitted.vertices, &truth.vertices)?;
        println!("rms {rms:.6e}");
        let per_vertex: Vec<f64> = fitted
            .vertices
            .iter()
            .zip(&truth.vertices)
            .map(|(a, b)| (a - b).norm())
            .collect();
        if let Some(path) = &args.labels {
            let labels = load_labels(path, fitted.vertex_count())?;
            let parts = labels.iter().max().map_or(0, |m| *m as usize + 1);
            for (p, v) in per_part_rms(&fitted.vertices, &truth.vertices, &labels, parts)?.iter().enumerate() {
                println!("rms part {p} {v:.6e}");
            }
        }
        errors = Some(per_vertex);
    } else if args.labels.is_some() {
        return Err(Failure::Usage("--labels needs --corresponding".into()));
    }
    if let Some(dir) = &args.plot_data {
        create_dir(dir)?;
        if let Some(errs) = &errors {
            let mut csv = String::from("vertex,error\n");
            for (i, e) in errs.iter().enumerate() {
                let _ = writeln!(csv, "{i},{e}");
            }
            write_file(&dir.join("vertex_error.csv"), csv)?;
            write_file(&dir.join("error_cdf.csv"), error_cdf(errs))?;
        }
        if let Some(path) = &args.report {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let report: RegistrationReport = serde_json::from_str(&text)
                .map_err(|e| Failure::Data(mabr::Error::Config(format!("{}: {e}", path.display()))))?;
            write_file(&dir.join("trace.csv"), report.trace_csv())?;
        }
    }
    Ok(())
}

/// Fraction of vertices with error at most each threshold, over 100 steps up
/// to the largest error.
fn error_cdf(errors: &[f64]) -> String {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted.last().copied().unwrap_or(0.0);
    let mut csv = String::from("threshold,fraction\n");
    for step in 0..=100 {
        let t = max * step as f64 / 100.0;
        let count = sorted.partition_point(|e| *e <= t);
        let _ = writeln!(csv, "{t},{}", count as f64 / sorted.len().max(1) as f64);
    }
    csv
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Register(a) => register_cmd(a),
        Command::Synth(a) => synth(a, cli.seed.unwrap_or(0)),
        Command::Corrupt(a) => corrupt_cmd(a, cli.seed),
        Command::Eval(a) => eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
