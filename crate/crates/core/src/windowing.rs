//! Joint formatter and packer: resample sequences to the model rate and pack
//! fixed-duration windows.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{JointSetId, SkeletonFrame, SkeletonSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PadPolicy {
    Repeat,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_seconds: f64,
    pub model_fps: f64,
    pub hop_seconds: f64,
    pub pad_policy: PadPolicy,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_seconds: 3.0,
            model_fps: 30.0,
            hop_seconds: 1.0,
            pad_policy: PadPolicy::Repeat,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_seconds.is_finite() && self.window_seconds > 0.0) {
            return Err(Error::config("window.window_seconds", "must be > 0"));
        }
        if !(self.model_fps.is_finite() && self.model_fps > 0.0) {
            return Err(Error::config("window.model_fps", "must be > 0"));
        }
        if !(self.hop_seconds > 0.0 && self.hop_seconds <= self.window_seconds) {
            return Err(Error::config(
                "window.hop_seconds",
                "must satisfy 0 < hop_seconds <= window_seconds",
            ));
        }
        if self.frames() == 0 {
            return Err(Error::config("window.window_seconds", "window holds no frames"));
        }
        Ok(())
    }

    /// Frames per packed window.
    pub fn frames(&self) -> usize {
        (self.window_seconds * self.model_fps).round() as usize
    }
}

/// A packed `frames × 3·joints` window; rows are frames in joint-major
/// `[x0, y0, z0, x1, ...]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTensor {
    pub frames: usize,
    pub joints: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
    pub label: Option<usize>,
    /// Normalization scale factor of the source sequence (1 when unnormalized).
    pub scale: f32,
}

impl WindowTensor {
    pub fn zeros(frames: usize, joints: usize) -> Self {
        WindowTensor {
            frames,
            joints,
            data: vec![0.0; frames * joints * 3],
            mask: vec![false; frames * joints],
            label: None,
            scale: 1.0,
        }
    }

    /// Channel count D = 3 × joints.
    pub fn channels(&self) -> usize {
        self.joints * 3
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let d = self.channels();
        &self.data[t * d..(t + 1) * d]
    }

    pub fn frame_mask(&self, t: usize) -> &[bool] {
        &self.mask[t * self.joints..(t + 1) * self.joints]
    }

    /// A time step counts as valid when any of its joints is.
    pub fn step_valid(&self, t: usize) -> bool {
        self.frame_mask(t).iter().any(|v| *v)
    }

    pub(crate) fn set_frame(&mut self, t: usize, frame: &SkeletonFrame) {
        let d = self.channels();
        for (j, (p, v)) in frame.joints.iter().zip(&frame.valid).enumerate() {
            self.mask[t * self.joints + j] = *v;
            for k in 0..3 {
                self.data[t * d + 3 * j + k] = if *v { p[k] as f32 } else { 0.0 };
            }
        }
    }

    /// Rebuild the window from a list of source frame indices.
    pub(crate) fn gather(&self, rows: &[usize]) -> WindowTensor {
        let d = self.channels();
        let mut out = WindowTensor {
            frames: rows.len(),
            data: Vec::with_capacity(rows.len() * d),
            mask: Vec::with_capacity(rows.len() * self.joints),
            ..self.clone()
        };
        for &r in rows {
            out.data.extend_from_slice(self.row(r));
            out.mask.extend_from_slice(self.frame_mask(r));
        }
        out
    }
}

/// Nearest-timestamp selection onto a uniform `model_fps` grid. Ties pick the
/// later source frame.
pub fn resample(seq: &SkeletonSequence, model_fps: f64) -> Result<SkeletonSequence> {
    if seq.is_empty() {
        return Err(Error::Data("cannot resample an empty sequence".into()));
    }
    if !(model_fps > 0.0) {
        return Err(Error::config("window.model_fps", "must be > 0"));
    }
    if seq.fps == model_fps {
        return Ok(seq.clone());
    }
    let n = seq.len();
    let out_len = ((n as f64 * model_fps / seq.fps).round() as usize).max(1);
    let t0 = seq.frames[0].t;
    let mut j = 0;
    let frames = (0..out_len)
        .map(|i| {
            let target = t0 + i as f64 / model_fps;
            while j + 1 < n && seq.frames[j + 1].t - target <= target - seq.frames[j].t + 1e-9 {
                j += 1;
            }
            SkeletonFrame {
                t: target,
                ..seq.frames[j].clone()
            }
        })
        .collect();
    Ok(SkeletonSequence {
        frames,
        fps: model_fps,
        ..seq.clone()
    })
}

/// Source frame indices for a packed window of `t` frames from `n` frames.
/// `None` marks a zero-padded step.
pub fn pack_indices(n: usize, t: usize, pad: PadPolicy) -> Vec<Option<usize>> {
    if n >= t {
        let start = (n - t) / 2;
        (start..start + t).map(Some).collect()
    } else {
        (0..t)
            .map(|i| match pad {
                PadPolicy::Repeat => Some(i % n),
                PadPolicy::Zero => (i < n).then_some(i),
            })
            .collect()
    }
}

/// Pack a resampled sequence into a `frames × 3·joints` window. Long
/// sequences contribute their centre window.
pub fn pack(seq: &SkeletonSequence, cfg: &WindowConfig) -> Result<WindowTensor> {
    if seq.is_empty() {
        return Err(Error::Data("cannot pack a zero-frame sequence".into()));
    }
    if (seq.fps - cfg.model_fps).abs() > 1e-9 * cfg.model_fps {
        return Err(Error::Data(format!(
            "sequence at {} fps must be resampled to {} fps before packing",
            seq.fps, cfg.model_fps
        )));
    }
    let t = cfg.frames();
    let mut out = WindowTensor::zeros(t, seq.joint_count());
    out.label = seq.label;
    out.scale = seq.scale.unwrap_or(1.0) as f32;
    for (row, src) in pack_indices(seq.len(), t, cfg.pad_policy).into_iter().enumerate() {
        if let Some(i) = src {
            out.set_frame(row, &seq.frames[i]);
        }
    }
    Ok(out)
}

/// Accumulates a live frame stream and releases the most recent
/// `window_seconds` of frames every `hop_seconds`.
#[derive(Debug)]
pub struct SlidingWindower {
    window_frames: usize,
    hop_frames: usize,
    buffer: VecDeque<SkeletonFrame>,
    accepted: usize,
    last_t: Option<f64>,
    out_of_order: u64,
}

impl SlidingWindower {
    pub fn new(cfg: &WindowConfig, source_fps: f64) -> Result<Self> {
        cfg.validate()?;
        if !(source_fps > 0.0) {
            return Err(Error::Data(format!("source fps must be positive, got {source_fps}")));
        }
        let window_frames = ((cfg.window_seconds * source_fps).round() as usize).max(1);
        let hop_frames = ((cfg.hop_seconds * source_fps).round() as usize).max(1);
        Ok(SlidingWindower {
            window_frames,
            hop_frames,
            buffer: VecDeque::with_capacity(window_frames),
            accepted: 0,
            last_t: None,
            out_of_order: 0,
        })
    }

    pub fn window_frames(&self) -> usize {
        self.window_frames
    }

    pub fn out_of_order(&self) -> u64 {
        self.out_of_order
    }

    /// Feed one frame; returns a full window when one is due. Frames older
    /// than their predecessor are dropped and counted.
    pub fn push(&mut self, frame: SkeletonFrame) -> Option<Vec<SkeletonFrame>> {
        if self.last_t.is_some_and(|t| frame.t < t) {
            self.out_of_order += 1;
            return None;
        }
        self.last_t = Some(frame.t);
        if self.buffer.len() == self.window_frames {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        self.accepted += 1;
        let due = self.accepted >= self.window_frames
            && (self.accepted - self.window_frames) % self.hop_frames == 0;
        due.then(|| self.buffer.iter().cloned().collect())
    }
}

/// Pack every window a gapless frame stream produces.
pub fn sliding_windows<I>(
    frames: I,
    joint_set: JointSetId,
    source_fps: f64,
    cfg: &WindowConfig,
) -> Result<Vec<WindowTensor>>
where
    I: IntoIterator<Item = SkeletonFrame>,
{
    let mut windower = SlidingWindower::new(cfg, source_fps)?;
    frames
        .into_iter()
        .filter_map(|f| windower.push(f))
        .map(|w| {
            let seq = SkeletonSequence::new(joint_set, w, source_fps)?;
            pack(&resample(&seq, cfg.model_fps)?, cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Frame `i` carries `i` in every x coordinate.
    fn numbered(n: usize, fps: f64) -> SkeletonSequence {
        let frames = (0..n)
            .map(|i| SkeletonFrame::from_joints(i as f64 / fps, vec![[i as f64, 0.5, 1.0]; 15]))
            .collect();
        SkeletonSequence::new(JointSetId::Common, frames, fps).unwrap()
    }

    fn ids(seq: &SkeletonSequence) -> Vec<usize> {
        seq.frames.iter().map(|f| f.joints[0][0] as usize).collect()
    }

    fn window_ids(w: &WindowTensor) -> Vec<usize> {
        (0..w.frames).map(|t| w.row(t)[0] as usize).collect()
    }

    #[test]
    fn resample_same_rate_is_identity() {
        let s = numbered(17, 30.0);
        assert_eq!(resample(&s, 30.0).unwrap(), s);
    }

    #[test]
    fn resample_halves_sixty_fps() {
        let out = resample(&numbered(60, 60.0), 30.0).unwrap();
        assert_eq!(ids(&out), (0..60).step_by(2).collect::<Vec<_>>());
        assert_eq!(out.fps, 30.0);
    }

    #[test]
    fn resample_25_to_30_matches_enumeration() {
        // Oracle: minimise |i/30 − j/25| in integers, i.e. |25 i − 30 j|,
        // ties resolved towards the later frame.
        let expected: Vec<usize> = (0..30)
            .map(|i: i64| {
                (0..25i64)
                    .min_by_key(|j| ((25 * i - 30 * j).abs(), -j))
                    .unwrap() as usize
            })
            .collect();
        let out = resample(&numbered(25, 25.0), 30.0).unwrap();
        assert_eq!(out.len(), 30);
        assert_eq!(ids(&out), expected);
        assert!(expected.windows(2).any(|w| w[0] == w[1]));
    }

    #[test]
    fn resample_empty_fails() {
        let s = SkeletonSequence::new(JointSetId::Common, vec![], 30.0).unwrap();
        assert!(resample(&s, 30.0).is_err());
    }

    #[test]
    fn three_seconds_is_ninety_frames() {
        let cfg = WindowConfig::default();
        assert_eq!(cfg.frames(), 90);
        let w = pack(&numbered(90, 30.0), &cfg).unwrap();
        assert_eq!((w.frames, w.channels()), (90, 45));
        assert_eq!(window_ids(&w), (0..90).collect::<Vec<_>>());
    }

    #[test]
    fn repeat_padding_loops_from_start() {
        let w = pack(&numbered(45, 30.0), &WindowConfig::default()).unwrap();
        let expected: Vec<usize> = (0..45).chain(0..45).collect();
        assert_eq!(window_ids(&w), expected);
    }

    #[test]
    fn zero_padding_masks_tail() {
        let cfg = WindowConfig {
            pad_policy: PadPolicy::Zero,
            ..Default::default()
        };
        let w = pack(&numbered(45, 30.0), &cfg).unwrap();
        assert!(w.step_valid(44) && !w.step_valid(45));
        assert!(w.row(89).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn long_sequence_takes_centre() {
        let w = pack(&numbered(150, 30.0), &WindowConfig::default()).unwrap();
        // (150 − 90) / 2 = 30
        assert_eq!(window_ids(&w), (30..120).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_joints_masked_and_zeroed() {
        let mut s = numbered(3, 30.0);
        s.frames[1].valid[2] = false;
        let w = pack(&s, &WindowConfig::default()).unwrap();
        assert!(!w.frame_mask(1)[2]);
        assert_eq!(&w.row(1)[6..9], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn pack_requires_frames_and_model_rate() {
        let empty = SkeletonSequence::new(JointSetId::Common, vec![], 30.0).unwrap();
        assert!(pack(&empty, &WindowConfig::default()).is_err());
        assert!(pack(&numbered(10, 25.0), &WindowConfig::default()).is_err());
    }

    #[test]
    fn sliding_emission_schedule() {
        let cfg = WindowConfig::default();
        let mut w = SlidingWindower::new(&cfg, 30.0).unwrap();
        let emitted: Vec<usize> = numbered(300, 30.0)
            .frames
            .into_iter()
            .enumerate()
            .filter_map(|(i, f)| w.push(f).map(|win| {
                assert_eq!(win.len(), 90);
                assert_eq!(win.last().unwrap().joints[0][0] as usize, i);
                i + 1
            }))
            .collect();
        assert_eq!(emitted, vec![90, 120, 150, 180, 210, 240, 270, 300]);
        // ⌊(10 − 3) / 1⌋ + 1
        assert_eq!(emitted.len(), 8);
    }

    #[test]
    fn hop_equal_to_window_gives_disjoint_windows() {
        let cfg = WindowConfig {
            hop_seconds: 3.0,
            ..Default::default()
        };
        let wins = sliding_windows(numbered(200, 30.0).frames, JointSetId::Common, 30.0, &cfg).unwrap();
        assert_eq!(wins.len(), 2);
        assert_eq!(window_ids(&wins[0])[0], 0);
        assert_eq!(window_ids(&wins[1])[0], 90);
    }

    #[test]
    fn partial_tail_not_emitted() {
        let wins = sliding_windows(numbered(89, 30.0).frames, JointSetId::Common, 30.0, &WindowConfig::default()).unwrap();
        assert!(wins.is_empty());
    }

    #[test]
    fn out_of_order_frames_dropped() {
        let mut w = SlidingWindower::new(&WindowConfig::default(), 30.0).unwrap();
        let s = numbered(5, 30.0);
        w.push(s.frames[3].clone());
        w.push(s.frames[1].clone());
        w.push(s.frames[4].clone());
        assert_eq!(w.out_of_order(), 1);
    }

    #[test]
    fn config_validation() {
        let bad = WindowConfig {
            hop_seconds: 4.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = WindowConfig {
            window_seconds: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("window.window_seconds"));
    }

    proptest! {
        #[test]
        fn pack_shape_is_fixed(n in 1usize..300, zero in any::<bool>()) {
            let cfg = WindowConfig {
                pad_policy: if zero { PadPolicy::Zero } else { PadPolicy::Repeat },
                ..Default::default()
            };
            let w = pack(&numbered(n, 30.0), &cfg).unwrap();
            prop_assert_eq!(w.data.len(), 90 * 45);
            prop_assert_eq!(w.mask.len(), 90 * 15);
        }

        #[test]
        fn repeat_padding_frequencies(n in 1usize..90) {
            let idx = pack_indices(n, 90, PadPolicy::Repeat);
            let mut counts = vec![0usize; n];
            for i in idx.into_iter().flatten() {
                counts[i] += 1;
            }
            let (lo, hi) = (90 / n, 90usize.div_ceil(n));
            prop_assert!(counts.iter().all(|c| *c == lo || *c == hi));
        }

        #[test]
        fn emission_count_formula(seconds in 3usize..20, hop in 1usize..=3) {
            let cfg = WindowConfig { hop_seconds: hop as f64, ..Default::default() };
            let mut w = SlidingWindower::new(&cfg, 30.0).unwrap();
            let n = numbered(seconds * 30, 30.0).frames.into_iter().filter_map(|f| w.push(f)).count();
            prop_assert_eq!(n, (seconds - 3) / hop + 1);
        }
    }
}
