use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ccd_core::adjudicator::SegmentVerdict;
use ccd_core::config::PipelineConfig;
use ccd_core::decision::{LabelsFile, VideoLabels};
use ccd_core::model::{load_manifest, ComplicationKind, PhaseAnnotation, VideoManifest};
use ccd_core::phantom::{synth_bundle, PhantomSpec, TruthInterval};
use ccd_core::pipeline::{
    adjudicate_video, build_backend, decide_video, read_json, read_traces, run_eval, run_video_with,
    score_video, segment_video, write_json, write_traces, PipelineError, SegmentsFile,
};

/// Detect iris prolapse, posterior capsule rupture and vitreous loss in
/// cataract-surgery video bundles.
#[derive(Parser)]
#[command(name = "ccd", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (same as `--set output=DIR`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a bundle's manifest and files.
    Validate { bundle: PathBuf },
    /// Render a synthetic bundle.
    Synth(SynthArgs),
    /// Write per-frame risk traces.
    Score { bundle: PathBuf },
    /// Turn stored traces into high-risk segments.
    Segments { bundle: PathBuf },
    /// Send stored segments to the vision-language backend.
    Adjudicate { bundle: PathBuf },
    /// Aggregate stored verdicts into video labels.
    Decide { bundle: PathBuf },
    /// Every stage for one bundle.
    Run { bundle: PathBuf },
    /// Every bundle in a corpus directory, with metrics against a labels file.
    Eval {
        corpus: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Bundles processed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Args)]
struct SynthArgs {
    /// Output bundle directory.
    dir: PathBuf,
    /// JSON phantom spec; the remaining flags are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "phantom")]
    video_id: String,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 960)]
    width: u32,
    #[arg(long, default_value_t = 540)]
    height: u32,
    #[arg(long, default_value_t = 160.0)]
    iris_radius: f64,
    #[arg(long, default_value_t = 70.0)]
    pupil_radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian pixel noise sigma.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Phase annotation `name:start:end`; repeatable.
    #[arg(long = "phase", value_name = "NAME:START:END")]
    phases: Vec<String>,
    /// Injected complication `kind:start:end:magnitude`; repeatable.
    #[arg(long = "anomaly", value_name = "KIND:START:END:MAG")]
    anomalies: Vec<String>,
    /// Labels file to create or update with this video's ground truth.
    #[arg(long)]
    labels: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn data(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn load_config(global: &Global) -> Result<PipelineConfig, Failure> {
    let mut config = match &global.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    for o in &global.overrides {
        config.apply_override(o).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(out) = &global.out {
        config.output = out.clone();
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn bundle(path: &Path) -> Result<VideoManifest, Failure> {
    load_manifest(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn split_fields<'a>(text: &'a str, n: usize, what: &str) -> Result<Vec<&'a str>, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != n {
        return Err(usage(format!("{what} `{text}` needs {n} colon-separated fields")));
    }
    Ok(parts)
}

fn number<T: std::str::FromStr>(text: &str, what: &str) -> Result<T, Failure> {
    text.parse().map_err(|_| usage(format!("bad {what} `{text}`")))
}

fn synth_spec(args: &SynthArgs) -> Result<PhantomSpec, Failure> {
    if let Some(path) = &args.spec {
        return read_json(path).map_err(Failure::from);
    }
    let mut spec = PhantomSpec {
        seed: args.seed,
        width: args.width,
        height: args.height,
        iris_radius: args.iris_radius,
        pupil_radius: args.pupil_radius,
        noise_sigma: args.noise,
        ..PhantomSpec::new(args.video_id.clone(), args.frames)
    };
    for p in &args.phases {
        let f = split_fields(p, 3, "phase")?;
        spec.phases.push(PhaseAnnotation {
            phase_name: f[0].to_string().into(),
            start_frame: number(f[1], "phase start")?,
            end_frame: number(f[2], "phase end")?,
        });
    }
    for a in &args.anomalies {
        let f = split_fields(a, 4, "anomaly")?;
        let kind: ComplicationKind = f[0].parse().map_err(usage)?;
        spec.anomalies.push(TruthInterval::new(
            kind,
            number(f[1], "anomaly start")?,
            number(f[2], "anomaly end")?,
            number(f[3], "magnitude")?,
        ));
    }
    Ok(spec)
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let spec = synth_spec(args)?;
    let manifest = synth_bundle(&spec, &args.dir).map_err(|e| match e {
        ccd_core::phantom::PhantomError::InvalidSpec(m) => usage(m),
        other => data(other.to_string()),
    })?;
    if let Some(path) = &args.labels {
        let mut labels: LabelsFile = if path.is_file() { read_json(path)? } else { LabelsFile::new() };
        let mut truth = VideoLabels::default();
        for a in &spec.anomalies {
            truth.set(a.kind, true);
        }
        labels.insert(manifest.video_id.clone(), truth);
        write_json(path, &labels)?;
    }
    println!("{}: {} frames written to {}", manifest.video_id, manifest.frame_count, args.dir.display());
    Ok(())
}

fn print_decisions(decisions: &[ccd_core::decision::VideoDecision]) {
    for d in decisions {
        println!(
            "{}\t{}\t{}\t{:?}",
            d.video_id,
            d.kind,
            if d.label { "positive" } else { "negative" },
            d.stage
        );
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli.global)?;
    let video_dir = |m: &VideoManifest| config.output.join(&m.video_id);
    match cli.command {
        Command::Validate { bundle: path } => {
            let m = bundle(&path)?;
            println!(
                "{}: ok ({} frames, {}x{}, {} phases, frames {})",
                m.video_id,
                m.frame_count,
                m.width,
                m.height,
                m.phases.len(),
                if m.has_frames { "present" } else { "absent" }
            );
        }
        Command::Synth(args) => synth(&args)?,
        Command::Score { bundle: path } => {
            let m = bundle(&path)?;
            let traces = score_video(&m, &ComplicationKind::ALL, &config.scoring)?;
            write_traces(&video_dir(&m), &traces)?;
            for t in &traces {
                match &t.trace {
                    Some(tr) => println!("{}\t{}\tframes {}..{}\tmax {:.4}", m.video_id, t.kind, tr.scope.start, tr.scope.end, tr.max_score()),
                    None => println!("{}\t{}\tnot applicable", m.video_id, t.kind),
                }
            }
        }
        Command::Segments { bundle: path } => {
            let m = bundle(&path)?;
            let traces = read_traces(&m, &video_dir(&m))?;
            let segments = segment_video(&m.video_id, &traces, &config);
            write_json(&video_dir(&m).join("segments.json"), &segments)?;
            for ks in &segments.kinds {
                println!("{}\t{}\t{} segments", m.video_id, ks.kind, ks.segments.len());
            }
        }
        Command::Adjudicate { bundle: path } => {
            let m = bundle(&path)?;
            let segments: SegmentsFile = read_json(&video_dir(&m).join("segments.json"))?;
            let backend = build_backend(&config.vlm, &[&m])?;
            let verdicts = adjudicate_video(&m, &segments, backend.as_ref(), &config.vlm.adjudicator)?;
            write_json(&video_dir(&m).join("verdicts.json"), &verdicts)?;
            for v in &verdicts {
                println!("{}\t{}\tsegment {}\t{}/{}", m.video_id, v.kind, v.segment.index, v.label, v.confidence);
            }
        }
        Command::Decide { bundle: path } => {
            let m = bundle(&path)?;
            let dir = video_dir(&m);
            let segments: SegmentsFile = read_json(&dir.join("segments.json"))?;
            let verdicts: Vec<SegmentVerdict> = read_json(&dir.join("verdicts.json"))?;
            let decisions = decide_video(&segments, &verdicts).map_err(PipelineError::from)?;
            write_json(&dir.join("decision.json"), &decisions)?;
            print_decisions(&decisions);
        }
        Command::Run { bundle: path } => {
            let m = bundle(&path)?;
            let backend = build_backend(&config.vlm, &[&m])?;
            let run = run_video_with(&m, &config, backend.as_ref())?;
            print_decisions(&run.decisions);
        }
        Command::Eval { corpus, labels, jobs } => {
            let report = run_eval(&corpus, &labels, &config, jobs)?;
            print!("{}", ccd_core::decision::render_text(&report));
        }
        Command::Config => print!("{}", config.render()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
