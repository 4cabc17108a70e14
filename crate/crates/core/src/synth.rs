//! Deterministic procedural generator of labeled COMMON-layout skeleton
//! sequences.
//!
//! Every sample starts from a 15-joint rest pose (torso 0.5 m, facing the
//! camera along −z), is animated by its archetype's parametric trajectory,
//! then scaled per actor, yawed, placed in front of the camera and jittered.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::write_recording;
use crate::preprocess::similarity_transform;
use crate::rng::rng_for;
use crate::skeleton::{ClassTable, JointSetId, SkeletonFrame, SkeletonSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    WaveHand,
    CheerUp,
    SittingDown,
    StandingUp,
    Kick,
    PointToSomething,
    Throw,
    Drink,
}

impl Archetype {
    pub const ALL: [Archetype; 8] = [
        Archetype::WaveHand,
        Archetype::CheerUp,
        Archetype::SittingDown,
        Archetype::StandingUp,
        Archetype::Kick,
        Archetype::PointToSomething,
        Archetype::Throw,
        Archetype::Drink,
    ];

    /// Class name, as listed in [`ClassTable::synthetic`].
    pub fn name(self) -> &'static str {
        match self {
            Archetype::WaveHand => "wave_hand",
            Archetype::CheerUp => "cheer_up",
            Archetype::SittingDown => "sitting_down",
            Archetype::StandingUp => "standing_up",
            Archetype::Kick => "kick",
            Archetype::PointToSomething => "point_to_something",
            Archetype::Throw => "throw",
            Archetype::Drink => "drink",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: Vec<Archetype>,
    pub samples_per_class: usize,
    pub fps: f64,
    pub duration_seconds: f64,
    pub actor_scale_range: (f64, f64),
    /// Yaw drawn uniformly from ±this many radians.
    pub actor_yaw_range: f64,
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: Archetype::ALL.to_vec(),
            samples_per_class: 50,
            fps: 30.0,
            duration_seconds: 3.0,
            actor_scale_range: (0.85, 1.15),
            actor_yaw_range: 0.3,
            jitter_sigma: 0.005,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("synth.classes", "must not be empty"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("synth.samples_per_class", "must be >= 1"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::config("synth.fps", "must be > 0"));
        }
        if !(self.duration_seconds > 0.0 && self.duration_seconds.is_finite()) {
            return Err(Error::config("synth.duration_seconds", "must be > 0"));
        }
        let (lo, hi) = self.actor_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("synth.actor_scale_range", "need 0 < min <= max"));
        }
        if !(self.actor_yaw_range >= 0.0 && self.actor_yaw_range.is_finite()) {
            return Err(Error::config("synth.actor_yaw_range", "must be >= 0"));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::config("synth.jitter_sigma", "must be >= 0"));
        }
        Ok(())
    }

    /// Class table matching `classes`, in order.
    pub fn class_table(&self) -> Result<ClassTable> {
        let all = ClassTable::synthetic();
        let entries = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut e = all.entries()[all.id_of(a.name()).expect("builtin synthetic class")].clone();
                e.class_id = i;
                e
            })
            .collect();
        ClassTable::new(entries)
    }
}

const SPINE_BASE: usize = 0;
const NECK: usize = 1;
const HEAD: usize = 2;
const SHOULDER_L: usize = 3;
const ELBOW_L: usize = 4;
const WRIST_L: usize = 5;
const SHOULDER_R: usize = 6;
const ELBOW_R: usize = 7;
const WRIST_R: usize = 8;
const HIP_L: usize = 9;
const KNEE_L: usize = 10;
const ANKLE_L: usize = 11;
const HIP_R: usize = 12;
const KNEE_R: usize = 13;
const ANKLE_R: usize = 14;

const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.25;
const THIGH: f64 = 0.45;
const SHIN: f64 = 0.42;

type Pose = [[f64; 3]; 15];

/// Canonical standing pose in meters, feet on y = 0.
pub fn rest_pose() -> Pose {
    [
        [0.0, 1.0, 0.0],
        [0.0, 1.5, 0.0],
        [0.0, 1.7, 0.0],
        [0.2, 1.45, 0.0],
        [0.2, 1.17, 0.0],
        [0.2, 0.92, 0.0],
        [-0.2, 1.45, 0.0],
        [-0.2, 1.17, 0.0],
        [-0.2, 0.92, 0.0],
        [0.1, 0.95, 0.0],
        [0.1, 0.5, 0.0],
        [0.1, 0.08, 0.0],
        [-0.1, 0.95, 0.0],
        [-0.1, 0.5, 0.0],
        [-0.1, 0.08, 0.0],
    ]
}

/// Unit limb direction. `raise` 0 hangs down, π points up; `swing` 0 is
/// lateral (towards `side`), π/2 forward (−z), −π/2 backward.
fn limb(side: f64, raise: f64, swing: f64) -> [f64; 3] {
    [
        side * raise.sin() * swing.cos(),
        -raise.cos(),
        -raise.sin() * swing.sin(),
    ]
}

fn add(a: [f64; 3], d: [f64; 3], len: f64) -> [f64; 3] {
    [a[0] + d[0] * len, a[1] + d[1] * len, a[2] + d[2] * len]
}

fn smoothstep(lo: f64, hi: f64, x: f64) -> f64 {
    let u = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Arm angles: (upper raise, upper swing, fore raise, fore swing).
type ArmAngles = (f64, f64, f64, f64);

const ARM_REST: ArmAngles = (0.0, 0.0, 0.0, 0.0);

struct Motion {
    left_arm: ArmAngles,
    right_arm: ArmAngles,
    /// Thigh (raise, swing) and knee flexion for each leg.
    left_leg: (f64, f64, f64),
    right_leg: (f64, f64, f64),
    /// Pelvis drop (m) and backward shift (m).
    pelvis_drop: f64,
    pelvis_back: f64,
    /// Forward torso lean in radians.
    lean: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Motion {
            left_arm: ARM_REST,
            right_arm: ARM_REST,
            left_leg: (0.0, FRAC_PI_2, 0.0),
            right_leg: (0.0, FRAC_PI_2, 0.0),
            pelvis_drop: 0.0,
            pelvis_back: 0.0,
            lean: 0.0,
        }
    }
}

/// Per-sample style parameters.
#[derive(Clone, Copy, Debug)]
struct Style {
    amplitude: f64,
    speed: f64,
    onset: f64,
    sway_phase: f64,
}

fn motion(kind: Archetype, t: f64, duration: f64, s: Style) -> Motion {
    let u = ((t - s.onset) * s.speed / duration).clamp(0.0, 1.0);
    let a = s.amplitude;
    let mut m = Motion::default();
    match kind {
        Archetype::WaveHand => {
            let up = smoothstep(0.0, 0.2, u);
            let osc = (2.0 * PI * 1.8 * s.speed * (t - s.onset).max(0.0)).sin() * up;
            m.right_arm = (up * 1.9, 0.25, up * (2.9 - 0.1 * a), 0.25 + 0.9 * a * osc);
        }
        Archetype::CheerUp => {
            let up = smoothstep(0.0, 0.25, u);
            let pump = (2.0 * PI * 1.3 * s.speed * (t - s.onset).max(0.0)).sin() * 0.25 * a * up;
            let arm = (up * (2.6 + pump), 0.35, up * (2.9 + pump), 0.35);
            m.left_arm = arm;
            m.right_arm = arm;
        }
        Archetype::SittingDown | Archetype::StandingUp => {
            let d = smoothstep(0.1, 0.85, u);
            let d = if kind == Archetype::SittingDown { d } else { 1.0 - d };
            sit(&mut m, d, a);
        }
        Archetype::Kick => {
            let k = (PI * smoothstep(0.15, 0.7, u)).sin().max(0.0);
            m.right_leg = (k * 1.25 * a, FRAC_PI_2, (1.0 - k) * 0.9 * k * 2.0);
            m.left_arm = (k * 0.5, 0.0, k * 0.6, 0.0);
            m.right_arm = (k * 0.4, -FRAC_PI_2, k * 0.4, -FRAC_PI_2);
            m.lean = -0.15 * k;
        }
        Archetype::PointToSomething => {
            let up = smoothstep(0.05, 0.35, u) - smoothstep(0.8, 0.98, u);
            let aim = FRAC_PI_2 * (0.9 + 0.1 * a);
            m.right_arm = (up * aim, 1.2, up * aim, 1.2);
        }
        Archetype::Throw => {
            let wind = smoothstep(0.05, 0.45, u);
            let release = smoothstep(0.5, 0.65, u);
            let follow = smoothstep(0.7, 0.95, u);
            let raise = wind * 2.6 * a * (1.0 - release) + release * (1.4 - 0.9 * follow);
            let swing = -FRAC_PI_2 * (1.0 - release) + FRAC_PI_2 * release;
            let bend = wind * (1.0 - release) * 1.2;
            m.right_arm = (raise, swing, raise + bend, swing);
            m.lean = 0.25 * release * (1.0 - follow) - 0.1 * wind * (1.0 - release);
        }
        Archetype::Drink => {
            let lift = smoothstep(0.1, 0.4, u) - smoothstep(0.75, 0.95, u);
            m.right_arm = (lift * 0.7, 1.3, lift * (2.7 + 0.1 * a), 1.5);
            m.lean = -0.05 * lift;
        }
    }
    // idle sway shared by all classes
    m.lean += 0.02 * (2.0 * PI * 0.3 * t + s.sway_phase).sin();
    m
}

fn sit(m: &mut Motion, d: f64, a: f64) {
    m.pelvis_drop = 0.45 * d * (0.95 + 0.05 * a);
    m.pelvis_back = 0.25 * d;
    m.lean = 0.3 * d;
    m.left_arm = (0.3 * d, FRAC_PI_2, 0.6 * d, FRAC_PI_2);
    m.right_arm = m.left_arm;
}

fn rotate_x(p: [f64; 3], origin: [f64; 3], angle: f64) -> [f64; 3] {
    let (y, z) = (p[1] - origin[1], p[2] - origin[2]);
    let (s, c) = angle.sin_cos();
    // positive angle tips the top forward (towards −z)
    [p[0], origin[1] + y * c + z * s, origin[2] - y * s + z * c]
}

fn pose(m: &Motion) -> Pose {
    let rest = rest_pose();
    let mut p = rest;
    let drop = m.pelvis_drop;
    let back = m.pelvis_back;
    let pelvis = [0.0, rest[SPINE_BASE][1] - drop, back];
    for j in [SPINE_BASE, NECK, HEAD, SHOULDER_L, SHOULDER_R, HIP_L, HIP_R] {
        p[j] = [rest[j][0], rest[j][1] - drop, rest[j][2] + back];
    }
    for j in [NECK, HEAD, SHOULDER_L, SHOULDER_R] {
        p[j] = rotate_x(p[j], pelvis, m.lean);
    }
    for (side, sh, el, wr, arm) in [
        (1.0, SHOULDER_L, ELBOW_L, WRIST_L, m.left_arm),
        (-1.0, SHOULDER_R, ELBOW_R, WRIST_R, m.right_arm),
    ] {
        p[el] = add(p[sh], limb(side, arm.0, arm.1), UPPER_ARM);
        p[wr] = add(p[el], limb(side, arm.2, arm.3), FOREARM);
    }
    for (side, hip, knee, ankle, leg) in [
        (1.0, HIP_L, KNEE_L, ANKLE_L, m.left_leg),
        (-1.0, HIP_R, KNEE_R, ANKLE_R, m.right_leg),
    ] {
        if drop > 0.0 {
            // feet planted: solve the two-link leg in the sagittal plane
            let foot = [rest[ankle][0], rest[ankle][1], 0.0];
            p[ankle] = foot;
            p[knee] = knee_between(p[hip], foot);
        } else {
            let (raise, swing, flex) = leg;
            p[knee] = add(p[hip], limb(side, raise, swing), THIGH);
            p[ankle] = add(p[knee], limb(side, raise - flex, swing), SHIN);
        }
    }
    p
}

/// Knee position for a thigh/shin chain from `hip` to `ankle`, bending forward.
fn knee_between(hip: [f64; 3], ankle: [f64; 3]) -> [f64; 3] {
    let (dy, dz) = (ankle[1] - hip[1], ankle[2] - hip[2]);
    let dist = (dy * dy + dz * dz).sqrt().min(THIGH + SHIN - 1e-9);
    let along = (THIGH * THIGH - SHIN * SHIN + dist * dist) / (2.0 * dist);
    let h = (THIGH * THIGH - along * along).max(0.0).sqrt();
    let (uy, uz) = (dy / dist, dz / dist);
    // perpendicular pointing forward (−z)
    let (py, pz) = if uy > 0.0 { (uz, -uy) } else { (-uz, uy) };
    [hip[0], hip[1] + uy * along + py * h, hip[2] + uz * along + pz * h]
}

/// Generate `samples_per_class` sequences for every class, grouped by class.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SkeletonSequence>> {
    cfg.validate()?;
    let frames = (cfg.duration_seconds * cfg.fps).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(cfg.classes.len() * cfg.samples_per_class);
    for (label, kind) in cfg.classes.iter().enumerate() {
        for idx in 0..cfg.samples_per_class {
            let mut rng = rng_for(&[cfg.seed, 0x5E17, label as u64, idx as u64]);
            let style = Style {
                amplitude: rng.random_range(0.8..=1.2),
                speed: rng.random_range(0.85..=1.15),
                onset: rng.random_range(0.0..=0.15) * cfg.duration_seconds,
                sway_phase: rng.random_range(0.0..2.0 * PI),
            };
            let (lo, hi) = cfg.actor_scale_range;
            let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let yaw = if cfg.actor_yaw_range > 0.0 {
                rng.random_range(-cfg.actor_yaw_range..=cfg.actor_yaw_range)
            } else {
                0.0
            };
            let place = [
                rng.random_range(-0.5..=0.5),
                rng.random_range(-1.1..=-0.9),
                rng.random_range(2.5..=3.5),
            ];
            let jitter = Normal::new(0.0, cfg.jitter_sigma).expect("validated sigma");
            let seq_frames = (0..frames)
                .map(|i| {
                    let t = i as f64 / cfg.fps;
                    let mut joints: Vec<[f64; 3]> = pose(&motion(*kind, t, cfg.duration_seconds, style)).to_vec();
                    if cfg.jitter_sigma > 0.0 {
                        for p in &mut joints {
                            for c in p.iter_mut() {
                                *c += jitter.sample(&mut rng);
                            }
                        }
                    }
                    SkeletonFrame::from_joints(t, joints)
                })
                .collect();
            let seq = SkeletonSequence::new(JointSetId::Common, seq_frames, cfg.fps)?;
            let placed = similarity_transform(&seq, yaw, scale, place)
                .with_label(Some(label))
                .with_subject(Some(idx as u32 + 1))
                .with_source(format!("{}/{idx:04}", kind.name()));
            out.push(placed);
        }
    }
    Ok(out)
}

/// Rigid yaw plus isotropic scale about the camera origin, applied to every
/// sequence.
pub fn domain_shift(seqs: &[SkeletonSequence], scale: f64, yaw: f64) -> Vec<SkeletonSequence> {
    seqs.iter()
        .map(|s| {
            let mut shifted = similarity_transform(s, yaw, scale, [0.0, 0.0, 0.0]);
            shifted.source = s.source.clone();
            shifted
        })
        .collect()
}

/// Write `<dir>/<class>/<index>.jsonl` for every sequence.
pub fn write_dataset(dir: &Path, seqs: &[SkeletonSequence], classes: &ClassTable) -> Result<()> {
    let mut counters = vec![0usize; classes.len()];
    for seq in seqs {
        let label = seq.label.ok_or_else(|| Error::Data(format!("{}: unlabeled sequence", seq.source)))?;
        let name = classes
            .name(label)
            .ok_or_else(|| Error::UnmappedClasses(vec![format!("class id {label}")]))?;
        let class_dir = dir.join(name);
        std::fs::create_dir_all(&class_dir)?;
        let path = class_dir.join(format!("{:04}.jsonl", counters[label]));
        counters[label] += 1;
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_recording(seq, classes, file)?;
    }
    Ok(())
}
