use std::f64::consts::PI;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skelact::config::{load_config, PipelineConfig};
use skelact::ingest::{dataset_files, read_ntu_file, read_recording_file, write_recording};
use skelact::model::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ModelParams};
use skelact::pipeline::Pipeline;
use skelact::skeleton::{ClassTable, JointSetId, SkeletonSequence};
use skelact::stream::{replay_source, run_stream, tcp_source, JsonLinesSink, LabelSink, TcpBroadcastSink};
use skelact::synth::{domain_shift, generate, write_dataset, SynthConfig};
use skelact::train::{ablation_csv, ablation_table, evaluate, run_ablation, train, AblationGrid};
use skelact::Error;

// stdout writes that tolerate a closed pipe
macro_rules! out {
    ($($t:tt)*) => {{ let _ = write!(io::stdout(), $($t)*); }};
}
macro_rules! outln {
    ($($t:tt)*) => {{ let _ = writeln!(io::stdout(), $($t)*); }};
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Skeleton-based action recognition: data conversion, synthetic data,
/// training, evaluation, ablation and live streaming.
#[derive(Parser, Debug)]
#[command(name = "skelact", version, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; overrides the training and augmentation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transcode an NTU `.skeleton` file to SKELREC-JSONL.
    Convert {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic dataset as `<class>/<index>.jsonl`.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "CKPT")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        toggles: ToggleArgs,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Emit the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the 8-row noise/augmentation/normalization ablation.
    Ablate {
        #[arg(long, value_name = "DIR")]
        train: PathBuf,
        /// In-domain test set; every fifth training sequence is held out when omitted.
        #[arg(long, value_name = "DIR")]
        test: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        test_shifted: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Classify a live or replayed skeleton stream.
    Stream(StreamArgs),
    /// Report the network's parameter count.
    ModelInfo {
        /// Read the architecture from a checkpoint instead of the config.
        #[arg(long, value_name = "CKPT")]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = 3.0)]
    duration: f64,
    /// Isotropic scale applied about the camera origin.
    #[arg(long, default_value_t = 1.0)]
    shift_scale: f64,
    /// Yaw applied about the camera origin, in degrees.
    #[arg(long, default_value_t = 0.0)]
    shift_yaw_deg: f64,
}

#[derive(Args, Debug)]
struct ToggleArgs {
    #[arg(long, value_name = "BOOL")]
    noise: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    augmentation: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    normalization: Option<bool>,
}

#[derive(Args, Debug)]
struct StreamArgs {
    /// SKELREC-JSONL recording to replay.
    #[arg(long, value_name = "FILE", required_unless_present = "tcp", conflicts_with = "tcp")]
    input: Option<PathBuf>,
    /// Endpoint serving a SKELREC-JSONL stream.
    #[arg(long, value_name = "HOST:PORT")]
    tcp: Option<String>,
    #[arg(long, value_name = "CKPT")]
    checkpoint: PathBuf,
    /// Replay speed; 0 replays as fast as possible without dropping frames.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Publish labels to TCP clients on this port instead of standard output.
    #[arg(long, value_name = "PORT")]
    listen: Option<u16>,
    #[arg(long)]
    window_seconds: Option<f64>,
    #[arg(long)]
    hop_seconds: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(io) if io.kind() == io::ErrorKind::NotFound => EXIT_DATA,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn resolve_config(global: &GlobalArgs) -> skelact::Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> skelact::Result<()> {
    let mut cfg = resolve_config(&cli.global)?;
    let classes = cfg.classes()?;
    cfg.model.num_classes = classes.len();
    match &cli.command {
        Command::Train { epochs, toggles, .. } => {
            if let Some(n) = epochs {
                cfg.train.epochs = *n;
            }
            apply_toggles(&mut cfg, toggles);
        }
        Command::Ablate { epochs: Some(n), .. } => cfg.train.epochs = *n,
        _ => {}
    }
    cfg.validate()?;
    if cli.global.print_config {
        outln!("{}", cfg.to_json());
        return Ok(());
    }

    match cli.command {
        Command::Convert { input, output } => convert(&input, output.as_deref()),
        Command::Synth(args) => synth(&args, cli.global.seed.unwrap_or(0)),
        Command::Train { data, out, .. } => train_cmd(&cfg, &classes, &data, &out),
        Command::Eval { checkpoint, data, json } => eval_cmd(&cfg, &checkpoint, &data, json),
        Command::Ablate { train, test, test_shifted, out, .. } => {
            ablate_cmd(&cfg, &classes, &train, test.as_deref(), &test_shifted, &out)
        }
        Command::Stream(args) => stream_cmd(&cfg, &args),
        Command::ModelInfo { checkpoint } => model_info(&cfg, checkpoint.as_deref()),
    }
}

fn apply_toggles(cfg: &mut PipelineConfig, t: &ToggleArgs) {
    if let Some(v) = t.noise {
        cfg.augmentation.noise = v;
    }
    if let Some(v) = t.augmentation {
        cfg.augmentation.augmentation = v;
    }
    if let Some(v) = t.normalization {
        cfg.normalization.enabled = v;
    }
}

fn convert(input: &Path, output: Option<&Path>) -> skelact::Result<()> {
    let seq = read_ntu_file(input)?;
    let classes = ClassTable::ntu60();
    match output {
        Some(path) => {
            let mut w = BufWriter::new(std::fs::File::create(path)?);
            write_recording(&seq, &classes, &mut w)?;
            w.flush()?;
        }
        None => write_recording(&seq, &classes, io::stdout().lock())?,
    }
    eprintln!("converted {} frames", seq.len());
    Ok(())
}

fn synth(args: &SynthArgs, seed: u64) -> skelact::Result<()> {
    let cfg = SynthConfig {
        samples_per_class: args.samples_per_class,
        fps: args.fps,
        duration_seconds: args.duration,
        seed,
        ..SynthConfig::default()
    };
    if !(args.shift_scale > 0.0 && args.shift_scale.is_finite()) {
        return Err(Error::config("shift_scale", "must be > 0"));
    }
    let mut seqs = generate(&cfg)?;
    if args.shift_scale != 1.0 || args.shift_yaw_deg != 0.0 {
        seqs = domain_shift(&seqs, args.shift_scale, args.shift_yaw_deg * PI / 180.0);
    }
    write_dataset(&args.out, &seqs, &cfg.class_table()?)?;
    eprintln!("wrote {} sequences to {}", seqs.len(), args.out.display());
    Ok(())
}

/// Every sequence below `dir`, labelled in `classes` ids. NTU files carry
/// NTU action ids and are relabelled by class name.
fn load_data(dir: &Path, classes: &ClassTable) -> skelact::Result<Vec<SkeletonSequence>> {
    let ntu = ClassTable::ntu60();
    let mut out = Vec::new();
    for path in dataset_files(dir)? {
        if path.extension().and_then(|e| e.to_str()) == Some("skeleton") {
            let seq = read_ntu_file(&path)?;
            let entry = &ntu.entries()[seq.label.expect("NTU files are labelled")];
            let label = classes
                .lookup(entry)
                .ok_or_else(|| Error::UnmappedClasses(vec![format!("{} ({})", entry.name, path.display())]))?;
            out.push(seq.with_label(Some(label)));
        } else {
            out.push(read_recording_file(&path, classes)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no .jsonl or .skeleton files", dir.display())));
    }
    Ok(out)
}

fn train_cmd(cfg: &PipelineConfig, classes: &ClassTable, data: &Path, out: &Path) -> skelact::Result<()> {
    let pipeline = cfg.pipeline()?;
    let seqs = load_data(data, classes)?;
    eprintln!("training on {} sequences, {} classes", seqs.len(), classes.len());
    let (params, history) = train(&cfg.model, &cfg.train, &pipeline, &seqs)?;
    for e in &history.epochs {
        eprintln!(
            "epoch {:3}  lr {:.5}  loss {:.4}  train acc {:.4}",
            e.epoch, e.learning_rate, e.loss, e.train_accuracy
        );
    }
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            model: cfg.model.clone(),
            joint_set: JointSetId::Common,
            classes: classes.clone(),
            normalization: pipeline.normalization.clone(),
            window: pipeline.window.clone(),
        },
        params,
    };
    save_checkpoint(&ckpt, out)?;
    eprintln!("saved {}", out.display());
    Ok(())
}

/// Evaluation pipeline: preprocessing from the checkpoint, joint maps from
/// the config.
fn checkpoint_pipeline(cfg: &PipelineConfig, ckpt: &Checkpoint) -> skelact::Result<Pipeline> {
    let mut pipeline = cfg.pipeline()?;
    pipeline.normalization = ckpt.meta.normalization.clone();
    pipeline.window = ckpt.meta.window.clone();
    Ok(pipeline)
}

fn eval_cmd(cfg: &PipelineConfig, checkpoint: &Path, data: &Path, json: bool) -> skelact::Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let classes = ckpt.meta.classes.clone();
    let pipeline = checkpoint_pipeline(cfg, &ckpt)?;
    let seqs = load_data(data, &classes)?;
    let report = evaluate(&ckpt.params, &seqs, &pipeline, &data.display().to_string())?;
    if json {
        outln!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        out!("{}", report.render(&classes));
    }
    Ok(())
}

fn ablate_cmd(
    cfg: &PipelineConfig,
    classes: &ClassTable,
    train_dir: &Path,
    test_dir: Option<&Path>,
    shifted_dir: &Path,
    out: &Path,
) -> skelact::Result<()> {
    let pipeline = cfg.pipeline()?;
    let all = load_data(train_dir, classes)?;
    let (train_set, in_domain) = match test_dir {
        Some(dir) => (all, load_data(dir, classes)?),
        None => {
            let (held, kept): (Vec<_>, Vec<_>) = all.into_iter().enumerate().partition(|(i, _)| i % 5 == 4);
            (kept.into_iter().map(|(_, s)| s).collect(), held.into_iter().map(|(_, s)| s).collect())
        }
    };
    let shifted = load_data(shifted_dir, classes)?;
    let results = run_ablation(
        &AblationGrid::default(),
        &cfg.model,
        &cfg.train,
        &pipeline,
        &train_set,
        &in_domain,
        &shifted,
        |r| eprintln!("{:48} in-domain {:.4}  shifted {:.4}", r.row.name, r.in_domain.accuracy, r.shifted.accuracy),
    )?;
    std::fs::write(out, ablation_csv(&results))?;
    out!("{}", ablation_table(&results));
    Ok(())
}

fn stream_cmd(cfg: &PipelineConfig, args: &StreamArgs) -> skelact::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let mut pipeline = checkpoint_pipeline(cfg, &ckpt)?;
    if let Some(w) = args.window_seconds {
        pipeline.window.window_seconds = w;
    }
    if let Some(h) = args.hop_seconds {
        pipeline.window.hop_seconds = h;
    }
    pipeline.validate()?;
    let source = match (&args.input, &args.tcp) {
        (Some(path), _) => replay_source(path, args.speed)?,
        (None, Some(addr)) => tcp_source(addr)?,
        (None, None) => unreachable!("clap enforces a source"),
    };
    let map = pipeline.joint_map(source.joint_set);
    let mut sink: Box<dyn LabelSink> = match args.listen {
        Some(port) => {
            let sink = TcpBroadcastSink::bind(port)?;
            eprintln!("publishing labels on port {}", sink.port());
            Box::new(sink)
        }
        None => Box::new(JsonLinesSink(io::stdout())),
    };
    let stats = run_stream(source, &map, &pipeline, &ckpt, sink.as_mut())?;
    for s in &stats.stages {
        eprintln!(
            "{:10} received {:6}  emitted {:6}  dropped {:6}  queue max {}",
            s.name, s.received, s.emitted, s.dropped, s.queue_high_water
        );
    }
    eprintln!(
        "{} windows, {} labels, max latency {:.1} ms, {:.2} s",
        stats.windows,
        stats.labels,
        stats.max_latency_ms(),
        stats.wall_seconds
    );
    Ok(())
}

fn model_info(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> skelact::Result<()> {
    let model = match checkpoint {
        Some(path) => load_checkpoint(path)?.meta.model,
        None => cfg.model.clone(),
    };
    model.validate()?;
    let params = ModelParams::<f32>::zeros(&model);
    outln!("input channels  {}", model.input_channels);
    outln!("classes         {}", model.num_classes);
    outln!("stem filters    {}", model.stem_filters);
    for (i, s) in model.stages.iter().enumerate() {
        outln!("stage {i}         {} x {} filters, stride {}", s.blocks, s.filters, s.stride);
    }
    outln!("kernel size     {}", model.kernel_size);
    outln!("parameters      {}", params.parameter_count());
    Ok(())
}
