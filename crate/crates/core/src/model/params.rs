use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Floating-point element type the network can run in.
pub trait Scalar:
    LinalgScalar + ScalarOperand + Float + num_traits::FromPrimitive + Send + Sync + Debug + Display + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    pub filters: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub num_classes: usize,
    pub stem_filters: usize,
    pub stages: Vec<StageConfig>,
    pub kernel_size: usize,
    pub dropout_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 45,
            num_classes: 8,
            stem_filters: 64,
            stages: vec![
                StageConfig { blocks: 2, filters: 64, stride: 1 },
                StageConfig { blocks: 2, filters: 128, stride: 2 },
                StageConfig { blocks: 2, filters: 256, stride: 2 },
            ],
            kernel_size: 8,
            dropout_prob: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::config("model.input_channels", "must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("model.num_classes", "must be >= 2"));
        }
        if self.kernel_size < 1 {
            return Err(Error::config("model.kernel_size", "must be >= 1"));
        }
        if self.stem_filters < 1 {
            return Err(Error::config("model.stem_filters", "must be >= 1"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.stride == 1 || s.stride == 2) {
                return Err(Error::config(format!("model.stages[{i}].stride"), "must be 1 or 2"));
            }
            if s.blocks == 0 || s.filters == 0 {
                return Err(Error::config(format!("model.stages[{i}]"), "blocks and filters must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("model.dropout_prob", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// (in_channels, out_channels, stride) of every residual block.
    pub fn block_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut c = self.stem_filters;
        let mut out = Vec::new();
        for s in &self.stages {
            for b in 0..s.blocks {
                let stride = if b == 0 { s.stride } else { 1 };
                out.push((c, s.filters, stride));
                c = s.filters;
            }
        }
        out
    }

    pub fn final_channels(&self) -> usize {
        self.stages.last().map_or(self.stem_filters, |s| s.filters)
    }
}

/// Temporal convolution without bias; weight is `out × (in · kernel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<S> {
    pub weight: Array2<S>,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Array1<S>,
    pub beta: Array1<S>,
    pub running_mean: Array1<S>,
    pub running_var: Array1<S>,
}

/// Pre-activation block: BN → ReLU → conv → BN → ReLU → conv, plus a
/// shortcut that is the identity or a strided 1×1 projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<S> {
    pub bn1: BatchNorm<S>,
    pub conv1: Conv1d<S>,
    pub bn2: BatchNorm<S>,
    pub conv2: Conv1d<S>,
    pub shortcut: Option<Conv1d<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub stem: Conv1d<S>,
    pub blocks: Vec<ResidualBlock<S>>,
    pub head_bn: BatchNorm<S>,
    pub fc: Dense<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Convolution or affine weight; subject to weight decay.
    Weight,
    /// Bias or batch-norm scale/shift.
    Affine,
    /// Batch-norm running moment; not trained.
    Running,
}

impl TensorKind {
    pub fn trainable(self) -> bool {
        self != TensorKind::Running
    }
}

impl<S: Scalar> Conv1d<S> {
    fn filled(out: usize, input: usize, kernel: usize, stride: usize, v: S) -> Self {
        Conv1d {
            weight: Array2::from_elem((out, input * kernel), v),
            in_channels: input,
            kernel,
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }
}

impl<S: Scalar> BatchNorm<S> {
    fn new(c: usize, gamma: S) -> Self {
        BatchNorm {
            gamma: Array1::from_elem(c, gamma),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::ones(c),
        }
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Every tensor filled with `v` (batch-norm running variance stays 1).
    pub fn filled(config: &ModelConfig, v: S) -> Self {
        let k = config.kernel_size;
        let stem = Conv1d::filled(config.stem_filters, config.input_channels, k, 1, v);
        let blocks = config
            .block_shapes()
            .into_iter()
            .map(|(cin, cout, stride)| ResidualBlock {
                bn1: BatchNorm::new(cin, v).with_beta(v),
                conv1: Conv1d::filled(cout, cin, k, stride, v),
                bn2: BatchNorm::new(cout, v).with_beta(v),
                conv2: Conv1d::filled(cout, cout, k, 1, v),
                shortcut: (cin != cout || stride != 1).then(|| Conv1d::filled(cout, cin, 1, stride, v)),
            })
            .collect();
        let f = config.final_channels();
        ModelParams {
            config: config.clone(),
            stem,
            blocks,
            head_bn: BatchNorm::new(f, v).with_beta(v),
            fc: Dense {
                weight: Array2::from_elem((config.num_classes, f), v),
                bias: Array1::from_elem(config.num_classes, v),
            },
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams::filled(config, S::zero())
    }

    /// He-normal convolutions, unit batch-norm scale, small random head.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ModelParams::zeros(config);
        let mut rng = rng_for(&[seed, 0x7C4E]);
        let he = |w: &mut Array2<S>, fan_in: usize, rng: &mut crate::rng::PipelineRng| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            w.mapv_inplace(|_| S::of(normal.sample(rng)));
        };
        he(&mut p.stem.weight, config.input_channels * config.kernel_size, &mut rng);
        for b in &mut p.blocks {
            for bn in [&mut b.bn1, &mut b.bn2] {
                bn.gamma.fill(S::one());
            }
            let fan = b.conv1.in_channels * b.conv1.kernel;
            he(&mut b.conv1.weight, fan, &mut rng);
            let fan = b.conv2.in_channels * b.conv2.kernel;
            he(&mut b.conv2.weight, fan, &mut rng);
            if let Some(sc) = &mut b.shortcut {
                let fan = sc.in_channels;
                he(&mut sc.weight, fan, &mut rng);
            }
        }
        p.head_bn.gamma.fill(S::one());
        let f = config.final_channels() as f64;
        let normal = Normal::new(0.0, (1.0 / f).sqrt()).expect("positive std");
        p.fc.weight.mapv_inplace(|_| S::of(normal.sample(&mut rng)));
        Ok(p)
    }

    /// All tensors in declaration order.
    pub fn tensors(&self) -> Vec<(String, TensorKind, &[S])> {
        let mut out = Vec::new();
        out.push(("stem.weight".to_string(), TensorKind::Weight, sl(&self.stem.weight)));
        for (i, b) in self.blocks.iter().enumerate() {
            push_bn(&mut out, &format!("blocks.{i}.bn1"), &b.bn1);
            out.push((format!("blocks.{i}.conv1.weight"), TensorKind::Weight, sl(&b.conv1.weight)));
            push_bn(&mut out, &format!("blocks.{i}.bn2"), &b.bn2);
            out.push((format!("blocks.{i}.conv2.weight"), TensorKind::Weight, sl(&b.conv2.weight)));
            if let Some(sc) = &b.shortcut {
                out.push((format!("blocks.{i}.shortcut.weight"), TensorKind::Weight, sl(&sc.weight)));
            }
        }
        push_bn(&mut out, "head_bn", &self.head_bn);
        out.push(("fc.weight".to_string(), TensorKind::Weight, sl(&self.fc.weight)));
        out.push(("fc.bias".to_string(), TensorKind::Affine, self.fc.bias.as_slice().expect("contiguous")));
        out
    }

    /// Mutable view of every tensor, same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [S])> {
        let mut out: Vec<(TensorKind, &mut [S])> = Vec::new();
        out.push((TensorKind::Weight, self.stem.weight.as_slice_mut().expect("standard layout")));
        for b in &mut self.blocks {
            push_bn_mut(&mut out, &mut b.bn1);
            out.push((TensorKind::Weight, b.conv1.weight.as_slice_mut().expect("standard layout")));
            push_bn_mut(&mut out, &mut b.bn2);
            out.push((TensorKind::Weight, b.conv2.weight.as_slice_mut().expect("standard layout")));
            if let Some(sc) = &mut b.shortcut {
                out.push((TensorKind::Weight, sc.weight.as_slice_mut().expect("standard layout")));
            }
        }
        push_bn_mut(&mut out, &mut self.head_bn);
        out.push((TensorKind::Weight, self.fc.weight.as_slice_mut().expect("standard layout")));
        out.push((TensorKind::Affine, self.fc.bias.as_slice_mut().expect("contiguous")));
        out
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|(_, k, _)| k.trainable())
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let mut out = ModelParams::<T>::zeros(&self.config);
        for ((_, _, src), (_, dst)) in self.tensors().into_iter().zip(out.tensors_mut()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::of(s.as_f64());
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Blend batch moments into the running statistics:
    /// running ← momentum · running + (1 − momentum) · batch.
    pub fn update_running_stats(&mut self, stats: &[BatchMoments<S>], momentum: f64) {
        let m = S::of(momentum);
        let bns = self.batch_norms_mut();
        assert_eq!(bns.len(), stats.len(), "one moment pair per batch-norm layer");
        for (bn, st) in bns.into_iter().zip(stats) {
            bn.running_mean.zip_mut_with(&st.mean, |r, b| *r = m * *r + (S::one() - m) * *b);
            bn.running_var.zip_mut_with(&st.var, |r, b| *r = m * *r + (S::one() - m) * *b);
        }
    }

    /// Batch-norm layers in forward order.
    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<S>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.bn1);
            out.push(&mut b.bn2);
        }
        out.push(&mut self.head_bn);
        out
    }
}

impl<S: Scalar> BatchNorm<S> {
    fn with_beta(mut self, v: S) -> Self {
        self.beta.fill(v);
        self
    }
}

fn push_bn<'a, S: Scalar>(out: &mut Vec<(String, TensorKind, &'a [S])>, name: &str, bn: &'a BatchNorm<S>) {
    let s = |a: &'a Array1<S>| a.as_slice().expect("contiguous");
    out.push((format!("{name}.gamma"), TensorKind::Affine, s(&bn.gamma)));
    out.push((format!("{name}.beta"), TensorKind::Affine, s(&bn.beta)));
    out.push((format!("{name}.running_mean"), TensorKind::Running, s(&bn.running_mean)));
    out.push((format!("{name}.running_var"), TensorKind::Running, s(&bn.running_var)));
}

fn push_bn_mut<'a, S: Scalar>(out: &mut Vec<(TensorKind, &'a mut [S])>, bn: &'a mut BatchNorm<S>) {
    out.push((TensorKind::Affine, bn.gamma.as_slice_mut().expect("contiguous")));
    out.push((TensorKind::Affine, bn.beta.as_slice_mut().expect("contiguous")));
    out.push((TensorKind::Running, bn.running_mean.as_slice_mut().expect("contiguous")));
    out.push((TensorKind::Running, bn.running_var.as_slice_mut().expect("contiguous")));
}

/// Per-channel batch mean and (unbiased) variance from one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments<S> {
    pub mean: Array1<S>,
    pub var: Array1<S>,
}

fn sl<S, D: ndarray::Dimension>(a: &ndarray::Array<S, D>) -> &[S] {
    a.as_slice().expect("standard layout")
}
