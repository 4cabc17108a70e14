//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line; the
//! process exits non-zero if any criterion fails.
//!
//! Criteria share state (the A2 model feeds A4-A6, the A3 ablation feeds the
//! CSV half of A7), so everything runs sequentially in one process.

use std::f64::consts::{FRAC_PI_3, PI};
use std::io::Cursor;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use skelact::augment::{add_noise, augment_window, crop_with, drop_joints, random_crop, shift_by, temporal_shift, AugmentConfig};
use skelact::ingest::{read_ntu_file, read_recording, write_recording};
use skelact::model::network::{gradient_check, tiny_config};
use skelact::model::{predict_batch, Checkpoint, CheckpointMeta, ModelConfig, ModelParams, StageConfig};
use skelact::pipeline::Pipeline;
use skelact::preprocess::{normalize, similarity_transform};
use skelact::rng::rng_for;
use skelact::skeleton::{ClassTable, JointMap, JointSetId, SkeletonFrame, SkeletonSequence};
use skelact::stream::{batch_labels, run_stream, CollectSink, FrameSource, StreamStats};
use skelact::synth::{domain_shift, generate, SynthConfig};
use skelact::train::{ablation_csv, evaluate, run_ablation, train, AblationGrid, AblationResult, TrainConfig};
use skelact::windowing::WindowTensor;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ensure(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn fmt_err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---- A1

fn a1_gradients() -> Outcome {
    let start = Instant::now();
    let cfg = tiny_config();
    let params = ModelParams::<f64>::init(&cfg, 21).map_err(fmt_err)?;
    let mut rng = rng_for(&[21, 1]);
    let mut windows = Vec::new();
    for i in 0..4 {
        let mut w = WindowTensor::zeros(8, 2);
        for v in w.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        w.mask.fill(true);
        if i == 3 {
            // masked tail
            for t in 6..8 {
                w.mask[2 * t..2 * t + 2].fill(false);
                w.data[6 * t..6 * t + 6].fill(0.0);
            }
        }
        windows.push((w, i % 3));
    }
    let batch: Vec<(&WindowTensor, usize)> = windows.iter().map(|(w, l)| (w, *l)).collect();
    let gc = gradient_check(&params, &batch, 1e-3, 7, 1e-5).map_err(fmt_err)?;
    let secs = start.elapsed().as_secs_f64();
    check(
        gc.max_relative_error <= 1e-4 && secs < 60.0,
        format!(
            "max relative error {:.2e} over {} parameters (worst {}), {:.1} s",
            gc.max_relative_error, gc.checked, gc.worst_tensor, secs
        ),
    )
}

// ---- A2

struct Trained {
    params: ModelParams<f32>,
    pipeline: Pipeline,
}

fn a2_learnability(out: &mut Option<Trained>) -> Outcome {
    let start = Instant::now();
    let train_set = generate(&SynthConfig { samples_per_class: 50, seed: 1, ..Default::default() }).map_err(fmt_err)?;
    let test_set = generate(&SynthConfig { samples_per_class: 10, seed: 2, ..Default::default() }).map_err(fmt_err)?;
    let pipeline = Pipeline::default();
    let cfg = TrainConfig { epochs: 12, milestones: vec![9], seed: 1, ..Default::default() };
    let (params, _) = train(&ModelConfig::default(), &cfg, &pipeline, &train_set).map_err(fmt_err)?;
    let train_acc = evaluate(&params, &train_set, &pipeline, "train").map_err(fmt_err)?.accuracy;
    let test_acc = evaluate(&params, &test_set, &pipeline, "test").map_err(fmt_err)?.accuracy;
    let secs = start.elapsed().as_secs_f64();
    *out = Some(Trained { params, pipeline });
    check(
        train_acc >= 0.95 && test_acc >= 0.90 && secs < 900.0,
        format!(
            "{} epochs: train {:.3}, iid test {:.3}, {:.0} s",
            cfg.epochs, train_acc, test_acc, secs
        ),
    )
}

// ---- A3

fn a3_transfer(results: &mut Vec<AblationResult>) -> Outcome {
    let start = Instant::now();
    let train_set = generate(&SynthConfig { samples_per_class: 60, seed: 11, ..Default::default() }).map_err(fmt_err)?;
    let test_set = generate(&SynthConfig { samples_per_class: 20, seed: 12, ..Default::default() }).map_err(fmt_err)?;
    let shifted = domain_shift(&test_set, 1.5, FRAC_PI_3);
    let stage = |filters, stride| StageConfig { blocks: 1, filters, stride };
    let model = ModelConfig {
        stem_filters: 32,
        stages: vec![stage(32, 1), stage(64, 2), stage(128, 2)],
        ..ModelConfig::default()
    };
    let cfg = TrainConfig { epochs: 30, milestones: vec![22], seed: 3, ..Default::default() };
    *results = run_ablation(&AblationGrid::default(), &model, &cfg, &Pipeline::default(), &train_set, &test_set, &shifted, |r| {
        println!(
            "    {:48} in-domain {:.3}  shifted {:.3}",
            r.row.name, r.in_domain.accuracy, r.shifted.accuracy
        )
    })
    .map_err(fmt_err)?;

    let (norm, raw): (Vec<&AblationResult>, Vec<&AblationResult>) =
        results.iter().partition(|r| r.row.toggles.normalization);
    let min_norm = norm.iter().map(|r| r.shifted.accuracy).fold(f64::INFINITY, f64::min);
    let max_raw = raw.iter().map(|r| r.shifted.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let in_domain: Vec<f64> = results.iter().map(|r| r.in_domain.accuracy).collect();
    let spread = in_domain.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - in_domain.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        norm.len() == 4 && raw.len() == 4 && min_norm - max_raw >= 0.15 && spread <= 0.10,
        format!(
            "shifted: worst normalized {:.3} vs best unnormalized {:.3} (gap {:.1} pts); in-domain spread {:.1} pts; {:.0} s",
            min_norm,
            max_raw,
            100.0 * (min_norm - max_raw),
            100.0 * spread,
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---- A4

fn a4_invariance(model: &Trained) -> Outcome {
    let seqs = generate(&SynthConfig { samples_per_class: 3, seed: 4, ..Default::default() }).map_err(fmt_err)?;
    let seqs = &seqs[..20];
    let norm_cfg = &model.pipeline.normalization;
    let reference: Vec<SkeletonSequence> = seqs.iter().map(|s| normalize(s, norm_cfg)).collect::<Result<_, _>>().map_err(fmt_err)?;
    let ref_windows: Vec<WindowTensor> = seqs.iter().map(|s| model.pipeline.sequence_window(s)).collect::<Result<_, _>>().map_err(fmt_err)?;
    let ref_pred = predict_batch(&model.params, &ref_windows.iter().collect::<Vec<_>>()).map_err(fmt_err)?;

    let mut rng = rng_for(&[4, 0xA4]);
    let (mut worst, mut agree, mut total) = (0.0f64, 0usize, 0usize);
    for _ in 0..100 {
        let yaw = rng.random_range(-PI..PI);
        let k = rng.random_range(0.5..=2.0);
        let t = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let mut windows = Vec::with_capacity(seqs.len());
        for (s, r) in seqs.iter().zip(&reference) {
            let moved = similarity_transform(s, yaw, k, t);
            let n = normalize(&moved, norm_cfg).map_err(fmt_err)?;
            for (fa, fb) in n.frames.iter().zip(&r.frames) {
                for ((pa, pb), v) in fa.joints.iter().zip(&fb.joints).zip(&fb.valid) {
                    if *v {
                        for c in 0..3 {
                            worst = worst.max((pa[c] - pb[c]).abs());
                        }
                    }
                }
            }
            windows.push(model.pipeline.sequence_window(&moved).map_err(fmt_err)?);
        }
        let pred = predict_batch(&model.params, &windows.iter().collect::<Vec<_>>()).map_err(fmt_err)?;
        agree += pred.iter().zip(&ref_pred).filter(|(a, b)| a.0 == b.0).count();
        total += pred.len();
    }
    check(
        worst <= 1e-6 && agree == total,
        format!("max coordinate deviation {worst:.2e}; argmax identical in {agree}/{total}"),
    )
}

// ---- A5, A6

fn checkpoint(model: &Trained) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            model: model.params.config.clone(),
            joint_set: JointSetId::Common,
            classes: ClassTable::synthetic(),
            normalization: model.pipeline.normalization.clone(),
            window: model.pipeline.window.clone(),
        },
        params: model.params.clone(),
    }
}

fn recording(seconds: f64, seed: u64) -> Result<SkeletonSequence, String> {
    let cfg = SynthConfig { samples_per_class: 1, duration_seconds: seconds, seed, ..Default::default() };
    generate(&cfg).map_err(fmt_err).map(|mut v| v.swap_remove(0))
}

fn stream_frames(frames: Vec<SkeletonFrame>, fps: f64, speed: f64, pipeline: &Pipeline, ckpt: &Checkpoint) -> Result<(StreamStats, CollectSink), String> {
    let source = FrameSource::new(JointSetId::Common, fps, speed, frames.into_iter().map(Ok)).map_err(fmt_err)?;
    let mut sink = CollectSink::default();
    let stats = run_stream(source, &JointMap::identity(JointSetId::Common), pipeline, ckpt, &mut sink).map_err(fmt_err)?;
    Ok((stats, sink))
}

fn a5_stream_batch(model: &Trained) -> Outcome {
    let ckpt = checkpoint(model);
    let mut pipeline = model.pipeline.clone();
    pipeline.window.hop_seconds = 0.1;
    // 3 s window + 59 hops of 0.1 s
    let seq = recording(8.9, 5)?;
    let (_, sink) = stream_frames(seq.frames.clone(), seq.fps, 0.0, &pipeline, &ckpt)?;
    let streamed: Vec<(f64, usize)> = sink.messages().iter().map(|m| (m.t, m.class_id)).collect();
    let batch = batch_labels(seq.frames, seq.fps, &JointMap::identity(JointSetId::Common), &pipeline, &ckpt).map_err(fmt_err)?;
    let mismatches = streamed.iter().zip(&batch).filter(|(a, b)| a != b).count() + streamed.len().abs_diff(batch.len());
    check(
        batch.len() == 60 && mismatches == 0,
        format!("{} streamed vs {} batch labels, {mismatches} mismatches", streamed.len(), batch.len()),
    )
}

fn a6_throughput(model: &Trained) -> Outcome {
    let ckpt = checkpoint(model);
    let pipeline = model.pipeline.clone();

    let long = recording(60.0, 6)?;
    let (fast, _) = stream_frames(long.frames.clone(), long.fps, 0.0, &pipeline, &ckpt)?;
    let fps = long.frames.len() as f64 / fast.wall_seconds;

    let live = recording(10.0, 7)?;
    let (paced, sink) = stream_frames(live.frames.clone(), live.fps, 1.0, &pipeline, &ckpt)?;
    let dropped: u64 = paced.stages.iter().map(|s| s.dropped).sum();
    let latency = paced.max_latency_ms();
    check(
        fps >= 30.0 && dropped == 0 && latency <= 100.0 && !sink.messages().is_empty(),
        format!(
            "unpaced {fps:.0} fps; real-time 30 fps: {} labels, {dropped} dropped, max latency {latency:.1} ms",
            paced.labels
        ),
    )
}

// ---- A7

fn a7_formats(ablation: &[AblationResult]) -> Outcome {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/S001C002P003R001A023.skeleton");
    let seq = read_ntu_file(&fixture).map_err(fmt_err)?;
    ensure(seq.joint_set == JointSetId::Ntu25 && seq.len() == 40, format!("fixture: {} frames", seq.len()))?;
    ensure(seq.label == Some(22) && seq.subject == Some(3), "fixture label/subject")?;
    // the waving actor, not the static bystander, is selected
    ensure(seq.frames[0].joints[0] == [0.1, -0.3, 3.2], format!("fixture body: {:?}", seq.frames[0].joints[0]))?;
    ensure(seq.frames[20].joints[0] == [0.1, -0.3, 3.2], "fixture body in the two-body span")?;
    ensure(!seq.frames[39].any_valid() && seq.frames[38].any_valid(), "fixture empty frame")?;

    let ntu = ClassTable::ntu60();
    let synth_classes = ClassTable::synthetic();
    let synthetic = generate(&SynthConfig { samples_per_class: 1, seed: 8, ..Default::default() }).map_err(fmt_err)?;
    let mut round_trips = 0;
    for (s, classes) in std::iter::once((&seq, &ntu)).chain(synthetic.iter().map(|s| (s, &synth_classes))) {
        let mut first = Vec::new();
        write_recording(s, classes, &mut first).map_err(fmt_err)?;
        let back = read_recording(Cursor::new(first.clone()), classes).map_err(fmt_err)?;
        let mut second = Vec::new();
        write_recording(&back, classes, &mut second).map_err(fmt_err)?;
        ensure(first == second, format!("{}: JSONL round trip differs", s.source))?;
        round_trips += 1;
    }

    let csv = ablation_csv(ablation);
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap_or("")).collect();
    let expected = [
        "Baseline",
        "Baseline + noise",
        "Baseline + augmentation",
        "Baseline + augmentation + noise",
        "Baseline + normalization",
        "Baseline + normalization + noise",
        "Baseline + normalization + augmentation",
        "Baseline + normalization + augmentation + noise",
    ];
    ensure(labels == expected, format!("CSV rows {labels:?}"))?;
    Ok(format!("fixture parsed (40 frames, 2 bodies); {round_trips} byte-identical JSONL round trips; CSV has the 8 rows in order"))
}

// ---- A8

fn a8_augmentation() -> Outcome {
    let mut w = WindowTensor::zeros(200, 167);
    w.mask.fill(true);
    let mut rng = rng_for(&[8, 0xA8]);
    let noisy = add_noise(&w, 0.01, &mut rng).map_err(fmt_err)?;
    let draws = &noisy.data[..100_000];
    let n = draws.len() as f64;
    let mean = draws.iter().map(|v| f64::from(*v)).sum::<f64>() / n;
    let var = draws.iter().map(|v| (f64::from(*v) - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();

    let seq = generate(&SynthConfig { samples_per_class: 1, seed: 9, ..Default::default() }).map_err(fmt_err)?;
    let window = Pipeline::default().sequence_window(&seq[0]).map_err(fmt_err)?;
    let full = AugmentConfig { noise: true, augmentation: true, ..AugmentConfig::degenerate() };
    let identities = [
        ("noise sigma 0", add_noise(&window, 0.0, &mut rng).map_err(fmt_err)?),
        ("shift 0", shift_by(&window, 0)),
        ("shift max 0", temporal_shift(&window, 0, &mut rng)),
        ("full-length crop", crop_with(&window, 0, window.frames)),
        ("crop ratio 1", random_crop(&window, 1.0, 0.0, &mut rng)),
        ("joint dropout 0", drop_joints(&window, 0.0, &mut rng)),
        ("degenerate config", augment_window(&window, &full, &mut rng).map_err(fmt_err)?),
    ];
    let broken: Vec<&str> = identities.iter().filter(|(_, w)| *w != window).map(|(name, _)| *name).collect();
    check(
        mean.abs() < 1e-3 && (std / 0.01 - 1.0).abs() < 0.05 && broken.is_empty(),
        format!(
            "n = {n}: mean {mean:.2e}, std {std:.5} (sigma 0.01); {} identities hold{}",
            identities.len() - broken.len(),
            if broken.is_empty() { String::new() } else { format!(", broken: {broken:?}") }
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut lines: Vec<(&str, &str, Outcome)> = Vec::new();
    let mut report = |id: &'static str, name: &'static str, outcome: Outcome| {
        let status = if outcome.is_ok() { "PASS" } else { "FAIL" };
        let detail = outcome.as_ref().map_or_else(|e| e.clone(), |d| d.clone());
        println!("{id} {status} {name}: {detail}");
        lines.push((id, name, outcome));
    };

    report("A1", "gradient correctness", a1_gradients());
    report("A8", "augmentation statistics", a8_augmentation());

    let mut trained = None;
    report("A2", "learnability", a2_learnability(&mut trained));
    match &trained {
        Some(model) => {
            report("A4", "normalization invariance", a4_invariance(model));
            report("A5", "stream/batch equivalence", a5_stream_batch(model));
            report("A6", "throughput", a6_throughput(model));
        }
        None => {
            for (id, name) in [("A4", "normalization invariance"), ("A5", "stream/batch equivalence"), ("A6", "throughput")] {
                report(id, name, Err("no trained model".into()));
            }
        }
    }

    let mut ablation = Vec::new();
    report("A3", "transferability under domain shift", a3_transfer(&mut ablation));
    report("A7", "format fidelity", a7_formats(&ablation));

    lines.sort_by_key(|(id, _, _)| *id);
    println!("\n---- acceptance summary ({:.0?})", Duration::from_secs(started.elapsed().as_secs()));
    for (id, name, outcome) in &lines {
        println!("{id} {} {name}", if outcome.is_ok() { "PASS" } else { "FAIL" });
    }
    let failed: Vec<&str> = lines.iter().filter(|(_, _, o)| o.is_err()).map(|(id, _, _)| *id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
