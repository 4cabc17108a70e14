//! Forward pass, exact backward pass and prediction for the residual TCN.
//!
//! Activations are `channels × (batch · steps)` matrices; column
//! `b · steps + t` holds time step `t` of batch item `b`. Convolutions run as
//! im2col followed by a single matrix product over the whole batch.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::params::{BatchMoments, BatchNorm, Conv1d, ModelParams, Scalar, TensorKind};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::windowing::WindowTensor;

pub const BN_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm and dropout driven by `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

/// Output length and left padding of a "same"-style strided convolution.
pub fn conv_geometry(t_in: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let t_out = t_in.div_ceil(stride);
    let pad = ((t_out - 1) * stride + kernel).saturating_sub(t_in);
    (t_out, pad / 2)
}

fn im2col<S: Scalar>(x: &Array2<S>, batch: usize, t_in: usize, k: usize, stride: usize) -> (Array2<S>, usize) {
    let (t_out, pad) = conv_geometry(t_in, k, stride);
    let c = x.nrows();
    let n = batch * t_out;
    let mut cols = Array2::zeros((c * k, n));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    for ch in 0..c {
        let xrow = &xs[ch * batch * t_in..(ch + 1) * batch * t_in];
        for j in 0..k {
            let row = &mut cs[(ch * k + j) * n..(ch * k + j + 1) * n];
            for b in 0..batch {
                let src = &xrow[b * t_in..(b + 1) * t_in];
                let dst = &mut row[b * t_out..(b + 1) * t_out];
                for (o, d) in dst.iter_mut().enumerate() {
                    let i = (o * stride + j) as isize - pad as isize;
                    if i >= 0 && (i as usize) < t_in {
                        *d = src[i as usize];
                    }
                }
            }
        }
    }
    (cols, t_out)
}

fn col2im<S: Scalar>(dcols: &Array2<S>, c: usize, batch: usize, t_in: usize, k: usize, stride: usize) -> Array2<S> {
    let (t_out, pad) = conv_geometry(t_in, k, stride);
    let n = batch * t_out;
    let mut dx = Array2::zeros((c, batch * t_in));
    let ds = dcols.as_standard_layout();
    let ds = ds.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().expect("standard layout");
    for ch in 0..c {
        let xrow = &mut xs[ch * batch * t_in..(ch + 1) * batch * t_in];
        for j in 0..k {
            let row = &ds[(ch * k + j) * n..(ch * k + j + 1) * n];
            for b in 0..batch {
                let dst = &mut xrow[b * t_in..(b + 1) * t_in];
                let src = &row[b * t_out..(b + 1) * t_out];
                for (o, g) in src.iter().enumerate() {
                    let i = (o * stride + j) as isize - pad as isize;
                    if i >= 0 && (i as usize) < t_in {
                        dst[i as usize] = dst[i as usize] + *g;
                    }
                }
            }
        }
    }
    dx
}

struct ConvTrace<S> {
    cols: Array2<S>,
    t_in: usize,
}

fn conv_forward<S: Scalar>(conv: &Conv1d<S>, x: &Array2<S>, batch: usize, t_in: usize) -> (Array2<S>, ConvTrace<S>, usize) {
    let (cols, t_out) = im2col(x, batch, t_in, conv.kernel, conv.stride);
    let y = conv.weight.dot(&cols);
    (y, ConvTrace { cols, t_in }, t_out)
}

fn conv_backward<S: Scalar>(
    conv: &Conv1d<S>,
    trace: &ConvTrace<S>,
    dy: &Array2<S>,
    batch: usize,
    need_dx: bool,
) -> (Array2<S>, Option<Array2<S>>) {
    let dw = dy.dot(&trace.cols.t());
    let dx = need_dx.then(|| {
        let dcols = conv.weight.t().dot(dy);
        col2im(&dcols, conv.in_channels, batch, trace.t_in, conv.kernel, conv.stride)
    });
    (dw, dx)
}

struct BnTrace<S> {
    xhat: Array2<S>,
    inv_std: Array1<S>,
    batch_stats: bool,
}

fn bn_forward<S: Scalar>(bn: &BatchNorm<S>, x: &Array2<S>, train: bool) -> (Array2<S>, BnTrace<S>, Option<BatchMoments<S>>) {
    let eps = S::of(BN_EPSILON);
    let (mean, var, moments) = if train {
        let n = x.ncols();
        let mean = x.mean_axis(Axis(1)).expect("non-empty batch");
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty batch");
        let unbiased = if n > 1 {
            var.mapv(|v| v * S::of(n as f64 / (n - 1) as f64))
        } else {
            var.clone()
        };
        let moments = BatchMoments {
            mean: mean.clone(),
            var: unbiased,
        };
        (mean, var, Some(moments))
    } else {
        (bn.running_mean.clone(), bn.running_var.clone(), None)
    };
    let inv_std = var.mapv(|v| S::one() / (v + eps).sqrt());
    let xhat = (x - &mean.view().insert_axis(Axis(1))) * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &bn.gamma.view().insert_axis(Axis(1)) + &bn.beta.view().insert_axis(Axis(1));
    (
        y,
        BnTrace {
            xhat,
            inv_std,
            batch_stats: train,
        },
        moments,
    )
}

/// Returns (dγ, dβ, dx).
fn bn_backward<S: Scalar>(bn: &BatchNorm<S>, trace: &BnTrace<S>, dy: &Array2<S>) -> (Array1<S>, Array1<S>, Array2<S>) {
    let dgamma = (dy * &trace.xhat).sum_axis(Axis(1));
    let dbeta = dy.sum_axis(Axis(1));
    let dxhat = dy * &bn.gamma.view().insert_axis(Axis(1));
    let inv = trace.inv_std.view().insert_axis(Axis(1));
    let dx = if trace.batch_stats {
        let n = S::of(dy.ncols() as f64);
        let sum = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
        let sum_x = (&dxhat * &trace.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
        let inner = dxhat.mapv(|v| v * n) - &sum - &trace.xhat * &sum_x;
        inner * &inv.mapv(|v| v / n)
    } else {
        dxhat * &inv
    };
    (dgamma, dbeta, dx)
}

fn relu<S: Scalar>(x: Array2<S>) -> Array2<S> {
    x.mapv_into(|v| v.max(S::zero()))
}

fn relu_backward<S: Scalar>(mut dy: Array2<S>, y: &Array2<S>) -> Array2<S> {
    dy.zip_mut_with(y, |d, &v| {
        if v <= S::zero() {
            *d = S::zero();
        }
    });
    dy
}

fn check_finite<S: Scalar>(layer: &str, a: &Array2<S>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer.to_string() })
    }
}

struct BlockTrace<S> {
    t_in: usize,
    t_out: usize,
    bn1: BnTrace<S>,
    a1: Array2<S>,
    conv1: ConvTrace<S>,
    bn2: BnTrace<S>,
    a2: Array2<S>,
    conv2: ConvTrace<S>,
    shortcut: Option<ConvTrace<S>>,
}

struct Trace<S> {
    batch: usize,
    stem: ConvTrace<S>,
    blocks: Vec<BlockTrace<S>>,
    head_bn: BnTrace<S>,
    head_a: Array2<S>,
    steps: usize,
    valid: Vec<bool>,
    counts: Vec<usize>,
    drop_mask: Option<Array2<S>>,
    dropped: Array2<S>,
    logits: Array2<S>,
    moments: Vec<BatchMoments<S>>,
}

/// Stack windows into a `D × (B · T)` matrix plus per-step validity.
fn stack_windows<S: Scalar>(params: &ModelParams<S>, windows: &[&WindowTensor]) -> Result<(Array2<S>, Vec<bool>, usize)> {
    let d = params.config.input_channels;
    let Some(first) = windows.first() else {
        return Err(Error::Data("empty batch".into()));
    };
    let t = first.frames;
    if t == 0 {
        return Err(Error::Data("window has no frames".into()));
    }
    let mut x = Array2::zeros((d, windows.len() * t));
    let mut valid = Vec::with_capacity(windows.len() * t);
    for (b, w) in windows.iter().enumerate() {
        if w.channels() != d {
            return Err(Error::Shape {
                what: "input channels D".into(),
                expected: d,
                actual: w.channels(),
            });
        }
        if w.frames != t {
            return Err(Error::Shape {
                what: "window frames".into(),
                expected: t,
                actual: w.frames,
            });
        }
        for step in 0..t {
            let row = w.row(step);
            for (c, v) in row.iter().enumerate() {
                x[[c, b * t + step]] = S::of(f64::from(*v));
            }
            valid.push(w.step_valid(step));
        }
    }
    Ok((x, valid, t))
}

fn downsample_valid(valid: &[bool], batch: usize, t_in: usize, t_out: usize, stride: usize) -> Vec<bool> {
    (0..batch)
        .flat_map(|b| (0..t_out).map(move |o| valid[b * t_in + (o * stride).min(t_in - 1)]))
        .collect()
}

fn run<S: Scalar>(params: &ModelParams<S>, windows: &[&WindowTensor], mode: Mode) -> Result<Trace<S>> {
    let train = matches!(mode, Mode::Train { .. });
    let (x0, mut valid, mut t) = stack_windows(params, windows)?;
    let batch = windows.len();
    let mut moments = Vec::new();

    let (mut x, stem, t_stem) = conv_forward(&params.stem, &x0, batch, t);
    check_finite("stem", &x)?;
    t = t_stem;

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for (i, blk) in params.blocks.iter().enumerate() {
        let (h1, bn1, m1) = bn_forward(&blk.bn1, &x, train);
        let a1 = relu(h1);
        let (c1, conv1, t_out) = conv_forward(&blk.conv1, &a1, batch, t);
        let (h2, bn2, m2) = bn_forward(&blk.bn2, &c1, train);
        let a2 = relu(h2);
        let (c2, conv2, _) = conv_forward(&blk.conv2, &a2, batch, t_out);
        let (sc, shortcut) = match &blk.shortcut {
            Some(p) => {
                let (y, tr, _) = conv_forward(p, &x, batch, t);
                (y, Some(tr))
            }
            None => (x, None),
        };
        x = c2 + &sc;
        check_finite(&format!("blocks.{i}"), &x)?;
        moments.extend(m1);
        moments.extend(m2);
        if t_out != t {
            valid = downsample_valid(&valid, batch, t, t_out, blk.conv1.stride);
        }
        blocks.push(BlockTrace {
            t_in: t,
            t_out,
            bn1,
            a1,
            conv1,
            bn2,
            a2,
            conv2,
            shortcut,
        });
        t = t_out;
    }

    let (h, head_bn, m) = bn_forward(&params.head_bn, &x, train);
    moments.extend(m);
    let head_a = relu(h);

    // masked global average pool
    let f = head_a.nrows();
    let counts: Vec<usize> = (0..batch)
        .map(|b| valid[b * t..(b + 1) * t].iter().filter(|v| **v).count())
        .collect();
    let mut pooled = Array2::zeros((f, batch));
    for b in 0..batch {
        let inv = S::of(1.0 / counts[b].max(1) as f64);
        for step in 0..t {
            if valid[b * t + step] {
                let col = head_a.column(b * t + step);
                pooled.column_mut(b).zip_mut_with(&col, |p, &v| *p = *p + v * inv);
            }
        }
    }

    let p = params.config.dropout_prob;
    let (dropped, drop_mask) = match mode {
        Mode::Train { dropout_seed } if p > 0.0 => {
            let mut rng = rng_for(&[dropout_seed, 0xD20F]);
            let keep = S::of(1.0 / (1.0 - p));
            let mask = Array2::from_shape_fn((f, batch), |_| {
                if rng.random::<f64>() < p {
                    S::zero()
                } else {
                    keep
                }
            });
            (&pooled * &mask, Some(mask))
        }
        _ => (pooled, None),
    };

    let logits = params.fc.weight.dot(&dropped) + &params.fc.bias.view().insert_axis(Axis(1));
    check_finite("fc", &logits)?;

    Ok(Trace {
        batch,
        stem,
        blocks,
        head_bn,
        head_a,
        steps: t,
        valid,
        counts,
        drop_mask,
        dropped,
        logits,
        moments,
    })
}

/// Logits for a batch of windows, `K × B`.
pub fn forward_batch<S: Scalar>(params: &ModelParams<S>, windows: &[&WindowTensor], mode: Mode) -> Result<Array2<S>> {
    Ok(run(params, windows, mode)?.logits)
}

/// Logits for one window.
pub fn forward<S: Scalar>(params: &ModelParams<S>, window: &WindowTensor, mode: Mode) -> Result<Vec<S>> {
    Ok(forward_batch(params, &[window], mode)?.column(0).to_vec())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Class id and probability vector for one window in evaluation mode.
pub fn predict<S: Scalar>(params: &ModelParams<S>, window: &WindowTensor) -> Result<(usize, Vec<f64>)> {
    Ok(predict_batch(params, &[window])?.remove(0))
}

pub fn predict_batch<S: Scalar>(params: &ModelParams<S>, windows: &[&WindowTensor]) -> Result<Vec<(usize, Vec<f64>)>> {
    let logits = forward_batch(params, windows, Mode::Eval)?;
    Ok(logits
        .columns()
        .into_iter()
        .map(|col| {
            let l: Vec<f64> = col.iter().map(|v| v.as_f64()).collect();
            let p = softmax(&l);
            (argmax(&p), p)
        })
        .collect())
}

pub struct LossAndGrads<S> {
    pub loss: f64,
    pub grads: ModelParams<S>,
    /// Batch-norm moments in forward order, for the running statistics.
    pub moments: Vec<BatchMoments<S>>,
    /// `K × B`.
    pub logits: Array2<S>,
}

/// Mean softmax cross-entropy plus `weight_decay · ½‖W‖²` over convolution
/// and affine weights, with exact gradients for every trainable tensor.
pub fn loss_and_grads<S: Scalar>(
    params: &ModelParams<S>,
    batch: &[(&WindowTensor, usize)],
    weight_decay: f64,
    dropout_seed: u64,
) -> Result<LossAndGrads<S>> {
    let k = params.config.num_classes;
    if let Some((_, bad)) = batch.iter().find(|(_, l)| *l >= k) {
        return Err(Error::Data(format!("label {bad} outside {k} classes")));
    }
    let windows: Vec<&WindowTensor> = batch.iter().map(|(w, _)| *w).collect();
    let trace = run(params, &windows, Mode::Train { dropout_seed })?;
    let b = trace.batch;
    let scale = S::of(1.0 / b as f64);

    let mut loss = 0.0;
    let mut dlogits = Array2::zeros((k, b));
    for (i, (_, label)) in batch.iter().enumerate() {
        let l: Vec<f64> = trace.logits.column(i).iter().map(|v| v.as_f64()).collect();
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - l[*label];
        for c in 0..k {
            let p = (l[c] - lse).exp();
            let target = if c == *label { 1.0 } else { 0.0 };
            dlogits[[c, i]] = S::of(p - target) * scale;
        }
    }
    loss /= b as f64;
    if weight_decay != 0.0 {
        let sq: f64 = params
            .tensors()
            .iter()
            .filter(|(_, kind, _)| *kind == TensorKind::Weight)
            .flat_map(|(_, _, t)| t.iter())
            .map(|v| v.as_f64().powi(2))
            .sum();
        loss += 0.5 * weight_decay * sq;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { layer: "loss".into() });
    }

    let mut g = ModelParams::zeros(&params.config);
    g.fc.weight = dlogits.dot(&trace.dropped.t());
    g.fc.bias = dlogits.sum_axis(Axis(1));
    let mut dpool = params.fc.weight.t().dot(&dlogits);
    if let Some(mask) = &trace.drop_mask {
        dpool = dpool * mask;
    }

    let t = trace.steps;
    let f = trace.head_a.nrows();
    let mut da = Array2::zeros((f, b * t));
    for bi in 0..b {
        let inv = S::of(1.0 / trace.counts[bi].max(1) as f64);
        let g_col = dpool.column(bi).mapv(|v| v * inv);
        for step in 0..t {
            if trace.valid[bi * t + step] {
                da.column_mut(bi * t + step).assign(&g_col);
            }
        }
    }
    let dh = relu_backward(da, &trace.head_a);
    let (dg, db, mut dx) = bn_backward(&params.head_bn, &trace.head_bn, &dh);
    g.head_bn.gamma = dg;
    g.head_bn.beta = db;

    for ((blk, tr), gb) in params.blocks.iter().zip(&trace.blocks).zip(g.blocks.iter_mut()).rev() {
        let dout = dx;
        let (dw2, da2) = conv_backward(&blk.conv2, &tr.conv2, &dout, b, true);
        gb.conv2.weight = dw2;
        let dh2 = relu_backward(da2.expect("requested"), &tr.a2);
        let (dg2, db2, dc1) = bn_backward(&blk.bn2, &tr.bn2, &dh2);
        gb.bn2.gamma = dg2;
        gb.bn2.beta = db2;
        let (dw1, da1) = conv_backward(&blk.conv1, &tr.conv1, &dc1, b, true);
        gb.conv1.weight = dw1;
        let dh1 = relu_backward(da1.expect("requested"), &tr.a1);
        let (dg1, db1, mut dxm) = bn_backward(&blk.bn1, &tr.bn1, &dh1);
        gb.bn1.gamma = dg1;
        gb.bn1.beta = db1;
        match (&blk.shortcut, &tr.shortcut, gb.shortcut.as_mut()) {
            (Some(p), Some(st), Some(gs)) => {
                let (dws, dxs) = conv_backward(p, st, &dout, b, true);
                gs.weight = dws;
                dxm = dxm + &dxs.expect("requested");
            }
            _ => dxm = dxm + &dout,
        }
        debug_assert_eq!(dxm.ncols(), b * tr.t_in);
        debug_assert!(tr.t_out <= tr.t_in);
        dx = dxm;
    }
    let (dws, _) = conv_backward(&params.stem, &trace.stem, &dx, b, false);
    g.stem.weight = dws;

    if weight_decay != 0.0 {
        let wd = S::of(weight_decay);
        for ((kind, gt), (_, _, pt)) in g.tensors_mut().into_iter().zip(params.tensors()) {
            if kind == TensorKind::Weight {
                for (gv, pv) in gt.iter_mut().zip(pt) {
                    *gv = *gv + wd * *pv;
                }
            }
        }
    }

    Ok(LossAndGrads {
        loss,
        grads: g,
        moments: trace.moments,
        logits: trace.logits,
    })
}

/// Largest relative gap between analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
}

/// Compare every trainable gradient against central finite differences with
/// step `h`. Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    params: &ModelParams<f64>,
    batch: &[(&WindowTensor, usize)],
    weight_decay: f64,
    dropout_seed: u64,
    h: f64,
) -> Result<GradientCheck> {
    let analytic = loss_and_grads(params, batch, weight_decay, dropout_seed)?.grads;
    let grads: Vec<(String, TensorKind, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, k, t)| (n, k, t.to_vec()))
        .collect();
    let mut probe = params.clone();
    let mut report = GradientCheck {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };
    for (ti, (name, kind, g)) in grads.iter().enumerate() {
        if !kind.trainable() {
            continue;
        }
        for (i, a) in g.iter().enumerate() {
            let orig = probe.tensors_mut()[ti].1[i];
            probe.tensors_mut()[ti].1[i] = orig + h;
            let plus = loss_and_grads(&probe, batch, weight_decay, dropout_seed)?.loss;
            probe.tensors_mut()[ti].1[i] = orig - h;
            let minus = loss_and_grads(&probe, batch, weight_decay, dropout_seed)?.loss;
            probe.tensors_mut()[ti].1[i] = orig;
            let n = (plus - minus) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_tensor = format!("{name}[{i}]");
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// The small network used for gradient checks: D=6 (two joints), T=8, K=3,
/// with an identity block and a strided projection block.
pub fn tiny_config() -> super::params::ModelConfig {
    use super::params::{ModelConfig, StageConfig};
    ModelConfig {
        input_channels: 6,
        num_classes: 3,
        stem_filters: 4,
        stages: vec![
            StageConfig { blocks: 1, filters: 4, stride: 1 },
            StageConfig { blocks: 1, filters: 6, stride: 2 },
        ],
        kernel_size: 3,
        dropout_prob: 0.3,
    }
}
