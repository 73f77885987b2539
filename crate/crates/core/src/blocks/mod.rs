//! Parameterized layers and the forward context they run in.
//!
//! A block is constructed once against a [`ParamStore`], registering its
//! tensors under a dotted name prefix, and is then applied many times. Each
//! application runs inside a [`Forward`] context carrying the tape, the
//! tape-registered parameter values, and the train/eval mode. Blocks also
//! account for themselves: `tally` walks the same structure the forward
//! executes and records per-layer parameter and multiply-accumulate counts
//! without touching tensor data, so the analyzer never needs to run a
//! full-resolution forward.

pub mod fe;
pub mod ldb;
pub mod pa;
pub mod transformer;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, ParamValues};
use crate::tensor::tape::{GradTape, Value};
use crate::tensor::{ConvSpec, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers; running statistics queued
    /// for update.
    Train,
    /// Stored running statistics; no statistic updates.
    Eval,
}

/// Per-application state handed down through a model's forward pass.
pub struct Forward<'a> {
    pub tape: &'a mut GradTape,
    pub values: &'a ParamValues,
    pub mode: Mode,
    /// Running-statistic updates queued by batch-norm layers, to be applied
    /// to the store once the step is finished.
    pub stat_updates: Vec<StatUpdate>,
}

impl<'a> Forward<'a> {
    pub fn new(tape: &'a mut GradTape, values: &'a ParamValues, mode: Mode) -> Forward<'a> {
        Forward {
            tape,
            values,
            mode,
            stat_updates: Vec::new(),
        }
    }
}

/// One deferred running-statistic update from a train-mode batch norm.
pub struct StatUpdate {
    pub mean_param: ParamId,
    pub var_param: ParamId,
    pub batch_mean: Vec<f64>,
    /// Biased batch variance, exactly as used for normalization.
    pub batch_var: Vec<f64>,
    /// Per-channel reduction size, for the unbiased running estimate.
    pub sample_count: usize,
    pub momentum: f64,
}

/// Folds queued batch statistics into the running buffers:
/// `running <- (1 - momentum) * running + momentum * batch`, with the
/// variance blended as the unbiased estimate.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate]) {
    for u in updates {
        let unbias = if u.sample_count > 1 {
            u.sample_count as f64 / (u.sample_count - 1) as f64
        } else {
            1.0
        };
        let m = u.momentum;
        let mean = store.get_mut(u.mean_param).tensor.data_mut();
        for (r, &b) in mean.iter_mut().zip(&u.batch_mean) {
            *r = ((1.0 - m) * *r as f64 + m * b) as f32;
        }
        let var = store.get_mut(u.var_param).tensor.data_mut();
        for (r, &b) in var.iter_mut().zip(&u.batch_var) {
            *r = ((1.0 - m) * *r as f64 + m * b * unbias) as f32;
        }
    }
}

// ---------------------------------------------------------------------------
// accounting
// ---------------------------------------------------------------------------

/// One accounted layer: trainable parameter count and multiply-accumulates
/// for a single image at the tallied resolution. Global average pooling is
/// counted at H*W*C adds per call; other poolings, activations, reshapes,
/// and normalizations contribute zero MACs (normalizations still carry their
/// parameters).
#[derive(Clone, Debug)]
pub struct LayerRow {
    pub name: String,
    pub params: usize,
    pub macs: u64,
}

#[derive(Default)]
pub struct Tally {
    pub rows: Vec<LayerRow>,
}

impl Tally {
    pub fn new() -> Tally {
        Tally::default()
    }

    pub fn add(&mut self, name: &str, params: usize, macs: u64) {
        self.rows.push(LayerRow {
            name: name.to_string(),
            params,
            macs,
        });
    }

    pub fn params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }
}

// ---------------------------------------------------------------------------
// elementary widgets
// ---------------------------------------------------------------------------

pub struct Conv2d {
    name: String,
    pub spec: ConvSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec) -> Result<Conv2d> {
        spec.validate()?;
        let fan_in = (spec.in_channels / spec.groups) * spec.kernel.0 * spec.kernel.1;
        let weight = store.add_he_normal(&format!("{name}.weight"), &spec.weight_shape(), fan_in)?;
        let bias = if spec.bias {
            Some(store.add_zeros(&format!("{name}.bias"), &[spec.out_channels])?)
        } else {
            None
        };
        Ok(Conv2d {
            name: name.to_string(),
            spec,
            weight,
            bias,
        })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let w = cx.values.value(self.weight);
        let b = self.bias.map(|id| cx.values.value(id));
        cx.tape.conv2d(x, w, b, &self.spec)
    }

    /// Appends this layer's row and returns the output spatial size.
    pub fn tally(&self, h: usize, w: usize, t: &mut Tally) -> Result<(usize, usize)> {
        let (oh, ow) = self.spec.out_hw(h, w)?;
        t.add(&self.name, self.spec.param_count(), self.spec.macs(1, oh, ow));
        Ok((oh, ow))
    }
}

pub struct BatchNorm2d {
    name: String,
    channels: usize,
    eps: f32,
    momentum: f64,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<BatchNorm2d> {
        let gamma = store.add_ones(&format!("{name}.gamma"), &[channels])?;
        let beta = store.add_zeros(&format!("{name}.beta"), &[channels])?;
        let running_mean =
            store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?;
        let running_var =
            store.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[channels]))?;
        Ok(BatchNorm2d {
            name: name.to_string(),
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma,
            beta,
            running_mean,
            running_var,
        })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let gamma = cx.values.value(self.gamma);
        let beta = cx.values.value(self.beta);
        match cx.mode {
            Mode::Train => {
                let (y, stats) = cx.tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let (n, _, h, w) = x.tensor().dims4()?;
                cx.stat_updates.push(StatUpdate {
                    mean_param: self.running_mean,
                    var_param: self.running_var,
                    batch_mean: stats.mean,
                    batch_var: stats.var,
                    sample_count: n * h * w,
                    momentum: self.momentum,
                });
                Ok(y)
            }
            Mode::Eval => {
                let mean = cx.values.value(self.running_mean).tensor();
                let var = cx.values.value(self.running_var).tensor();
                cx.tape.batch_norm_eval(x, gamma, beta, mean, var, self.eps)
            }
        }
    }

    pub fn tally(&self, t: &mut Tally) {
        t.add(&self.name, 2 * self.channels, 0);
    }
}

/// Convolution, batch norm, and an optional relu, the repeating unit of the
/// encoder. The convolution never carries a bias: the following
/// normalization would cancel it.
pub struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu: bool,
}

impl ConvBn {
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, relu: bool) -> Result<ConvBn> {
        if spec.bias {
            return Err(Error::config(format!(
                "{name}: bias under batch norm is redundant; disable it"
            )));
        }
        let channels = spec.out_channels;
        let conv = Conv2d::new(store, &format!("{name}.conv"), spec)?;
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), channels)?;
        Ok(ConvBn { conv, bn, relu })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, &y)?;
        Ok(if self.relu { cx.tape.relu(&y) } else { y })
    }

    pub fn tally(&self, h: usize, w: usize, t: &mut Tally) -> Result<(usize, usize)> {
        let (oh, ow) = self.conv.tally(h, w, t)?;
        self.bn.tally(t);
        Ok((oh, ow))
    }
}

/// Dense map on token matrices `[T, in] -> [T, out]`.
pub struct Linear {
    name: String,
    in_dim: usize,
    out_dim: usize,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Linear> {
        let weight = store.add_linear_normal(&format!("{name}.weight"), &[out_dim, in_dim], in_dim)?;
        let bias = if bias {
            Some(store.add_zeros(&format!("{name}.bias"), &[out_dim])?)
        } else {
            None
        };
        Ok(Linear {
            name: name.to_string(),
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let w = cx.values.value(self.weight);
        let b = self.bias.map(|id| cx.values.value(id));
        cx.tape.linear(x, w, b)
    }

    pub fn tally(&self, tokens: usize, t: &mut Tally) {
        let params = self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 };
        t.add(
            &self.name,
            params,
            (tokens * self.in_dim * self.out_dim) as u64,
        );
    }
}

/// Layer norm over the trailing feature axis of `[T, C]` tokens.
pub struct LayerNorm1d {
    name: String,
    dim: usize,
    eps: f32,
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<LayerNorm1d> {
        let gamma = store.add_ones(&format!("{name}.gamma"), &[dim])?;
        let beta = store.add_zeros(&format!("{name}.beta"), &[dim])?;
        Ok(LayerNorm1d {
            name: name.to_string(),
            dim,
            eps: 1e-5,
            gamma,
            beta,
        })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let gamma = cx.values.value(self.gamma);
        let beta = cx.values.value(self.beta);
        cx.tape.layer_norm(x, gamma, beta, self.eps)
    }

    pub fn tally(&self, t: &mut Tally) {
        t.add(&self.name, 2 * self.dim, 0);
    }
}

/// Channel attention: a per-channel sigmoid gate computed from the globally
/// pooled descriptor by a width-k 1-D convolution across the channel axis
/// (zero padded, no bias).
pub struct ChannelAttention {
    name: String,
    channels: usize,
    kernel: usize,
    weight: ParamId,
}

impl ChannelAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        kernel: usize,
    ) -> Result<ChannelAttention> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!(
                "{name}: channel attention kernel must be odd, got {kernel}"
            )));
        }
        let weight = store.add_linear_normal(&format!("{name}.weight"), &[kernel], kernel)?;
        Ok(ChannelAttention {
            name: name.to_string(),
            channels,
            kernel,
            weight,
        })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let pooled = cx.tape.global_avg_pool(x)?;
        let w = cx.values.value(self.weight);
        let mixed = cx.tape.channel_conv1d(&pooled, w)?;
        let gate = cx.tape.sigmoid(&mixed);
        cx.tape.mul_broadcast(x, &gate)
    }

    pub fn tally(&self, h: usize, w: usize, t: &mut Tally) {
        t.add(&format!("{}.pool", self.name), 0, (h * w * self.channels) as u64);
        t.add(
            &format!("{}.conv", self.name),
            self.kernel,
            (self.channels * self.kernel) as u64,
        );
    }
}
