//! Dense tensors and the operation/tape machinery built on them.
//!
//! Data layout is the single invariant everything else leans on: a tensor is
//! a flat `Vec<f32>` in row-major order, and image batches use NCHW
//! (batch, channel, row, column). Operations validate shapes up front and
//! return [`crate::Error::Shape`] instead of panicking; indexing inside the
//! hot loops is unchecked arithmetic on precomputed strides.
//!
//! Reductions accumulate in f64 and store f32. That keeps results stable
//! enough for elementwise finite-difference gradient comparison while the
//! buffers themselves stay 32-bit.

pub mod ops;
pub mod tape;

use crate::error::{Error, Result};

/// Dense row-major f32 tensor of arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    /// Marks a leaf that should receive a gradient when registered on a tape.
    pub requires_grad: bool,
    /// Gradient buffer, same length as `data` once populated by a backward
    /// pass (see [`tape::Gradients::write_back`]).
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a tensor from existing data; the element count must match.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(&mut f).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::from_vec(&[1], vec![value]).expect("scalar shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn requires_grad(mut self, yes: bool) -> Tensor {
        self.requires_grad = yes;
        self
    }

    /// Interprets the tensor as NCHW; errors unless rank is exactly 4.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            s => Err(Error::shape(format!("expected rank-4 NCHW tensor, got shape {:?}", s))),
        }
    }

    /// Interprets the tensor as a 2-D matrix; errors unless rank is 2.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::shape(format!("expected rank-2 tensor, got shape {:?}", s))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Full specification of a 2-D convolution (as cross-correlation).
///
/// Weight layout is `[out_channels, in_channels / groups, kh, kw]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (kh, kw)
    pub kernel: (usize, usize),
    /// (sh, sw)
    pub stride: (usize, usize),
    /// Zero padding per side, (ph, pw).
    pub padding: (usize, usize),
    /// (dh, dw)
    pub dilation: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Plain dense convolution: stride 1, symmetric padding, dilation 1.
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> ConvSpec {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            groups: 1,
            bias: false,
        }
    }

    pub fn stride(mut self, s: (usize, usize)) -> ConvSpec {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: (usize, usize)) -> ConvSpec {
        self.padding = p;
        self
    }

    pub fn dilation(mut self, d: (usize, usize)) -> ConvSpec {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> ConvSpec {
        self.groups = g;
        self
    }

    pub fn bias(mut self, b: bool) -> ConvSpec {
        self.bias = b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let (dh, dw) = self.dilation;
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::shape("conv channels must be >= 1".to_string()));
        }
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || dh == 0 || dw == 0 {
            return Err(Error::shape("conv kernel, stride and dilation must be >= 1".to_string()));
        }
        if self.groups == 0
            || self.in_channels % self.groups != 0
            || self.out_channels % self.groups != 0
        {
            return Err(Error::shape(format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        if ph >= kh * dh || pw >= kw * dw {
            return Err(Error::shape(format!(
                "padding ({}, {}) must stay below kernel*dilation ({}, {})",
                ph,
                pw,
                kh * dh,
                kw * dw
            )));
        }
        Ok(())
    }

    /// Output spatial extents for an input of `h` x `w`; the extent formula is
    /// `floor((x + 2p - d*(k-1) - 1) / s) + 1` and each axis must stay >= 1.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = conv_extent(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0)
            .ok_or_else(|| {
                Error::shape(format!(
                    "conv output height collapses below 1 for input height {} with {:?}",
                    h, self
                ))
            })?;
        let ow = conv_extent(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1)
            .ok_or_else(|| {
                Error::shape(format!(
                    "conv output width collapses below 1 for input width {} with {:?}",
                    w, self
                ))
            })?;
        Ok((oh, ow))
    }

    /// Shape of the weight tensor: `[out, in/groups, kh, kw]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    /// Learned parameter count: `kh*kw*in*out/groups`, plus `out` when biased.
    pub fn param_count(&self) -> usize {
        let w = self.kernel.0 * self.kernel.1 * (self.in_channels / self.groups)
            * self.out_channels;
        w + if self.bias { self.out_channels } else { 0 }
    }

    /// Multiply-accumulate count for one output plane set of `oh*ow` pixels
    /// and a batch of `n`: `out_elements * kh*kw*in/groups`.
    pub fn macs(&self, n: usize, oh: usize, ow: usize) -> u64 {
        let out_elems = (n * self.out_channels * oh * ow) as u64;
        out_elems
            * (self.kernel.0 * self.kernel.1 * (self.in_channels / self.groups)) as u64
    }
}

fn conv_extent(x: usize, k: usize, s: usize, p: usize, d: usize) -> Option<usize> {
    let span = d * (k - 1) + 1;
    let padded = x + 2 * p;
    if padded < span {
        return None;
    }
    Some((padded - span) / s + 1)
}
