//! Reverse-mode automatic differentiation.
//!
//! A [`GradTape`] wraps the pure ops in `ops` and, while recording, pushes
//! one backward step per operation. [`GradTape::backward`] replays the steps
//! in reverse, accumulating vector-Jacobian products into per-node slots.
//!
//! A non-recording tape runs the identical forward code but allocates no
//! nodes and stores no steps, so inference holds nothing beyond the live
//! activations.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::ops::{self, BnStats};
use crate::tensor::{ConvSpec, Tensor};

/// A tensor produced on (or fed into) a tape. Cloning shares the data and
/// the gradient slot.
#[derive(Clone)]
pub struct Value {
    data: Rc<Tensor>,
    node: Option<usize>,
}

impl Value {
    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn node(&self) -> Option<usize> {
        self.node
    }
}

/// Per-node gradient storage produced by [`GradTape::backward`].
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    fn new(nodes: usize) -> Gradients {
        Gradients {
            slots: (0..nodes).map(|_| None).collect(),
        }
    }

    /// Gradient for a node, if anything flowed into it. Missing means the
    /// loss did not depend on the node.
    pub fn get(&self, node: usize) -> Option<&[f32]> {
        self.slots.get(node).and_then(|s| s.as_deref())
    }

    /// Removes and returns a node's gradient.
    pub fn take_slot(&mut self, node: usize) -> Option<Vec<f32>> {
        self.slots.get_mut(node).and_then(|s| s.take())
    }

    fn take(&mut self, node: usize, shape: &[usize]) -> Option<Tensor> {
        let v = self.slots[node].take()?;
        Some(Tensor::from_vec(shape, v).expect("gradient length matches producer shape"))
    }

    fn accum(&mut self, node: Option<usize>, grad: Tensor) {
        let Some(n) = node else { return };
        match &mut self.slots[n] {
            Some(acc) => {
                debug_assert_eq!(acc.len(), grad.numel());
                for (a, &g) in acc.iter_mut().zip(grad.data()) {
                    *a += g;
                }
            }
            slot @ None => *slot = Some(grad.into_data()),
        }
    }
}

type Step = Box<dyn FnOnce(&mut Gradients) -> Result<()>>;

/// Records forward operations and replays their adjoints.
pub struct GradTape {
    recording: bool,
    consumed: bool,
    nodes: usize,
    steps: Vec<Step>,
}

impl GradTape {
    pub fn new(recording: bool) -> GradTape {
        GradTape {
            recording,
            consumed: false,
            nodes: 0,
            steps: Vec::new(),
        }
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    /// Number of backward steps currently stored. A non-recording tape
    /// always reports zero.
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Registers a differentiable input. Its data is snapshotted, so later
    /// mutation of the source tensor does not affect this graph.
    pub fn leaf(&mut self, t: &Tensor) -> Value {
        let node = if self.recording {
            let n = self.nodes;
            self.nodes += 1;
            Some(n)
        } else {
            None
        };
        Value {
            data: Rc::new(t.clone()),
            node,
        }
    }

    /// Wraps a tensor that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Value {
        Value {
            data: Rc::new(t),
            node: None,
        }
    }

    fn alloc(&mut self, deps: &[Option<usize>]) -> Option<usize> {
        if !self.recording || deps.iter().all(|d| d.is_none()) {
            return None;
        }
        let n = self.nodes;
        self.nodes += 1;
        Some(n)
    }

    fn push(&mut self, step: impl FnOnce(&mut Gradients) -> Result<()> + 'static) {
        self.steps.push(Box::new(step));
    }

    /// Runs all recorded steps in reverse from a scalar loss. Consumes the
    /// recording; calling it a second time is an error.
    pub fn backward(&mut self, loss: &Value) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::usage("backward on a non-recording tape"));
        }
        if self.consumed {
            return Err(Error::usage("backward called twice on the same tape"));
        }
        if loss.data.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let Some(seed) = loss.node else {
            return Err(Error::usage(
                "loss does not depend on any recorded value",
            ));
        };
        self.consumed = true;
        let mut grads = Gradients::new(self.nodes);
        grads.slots[seed] = Some(vec![1.0]);
        for step in self.steps.drain(..).rev() {
            step(&mut grads)?;
        }
        Ok(grads)
    }

    // -- recorded operations -------------------------------------------------

    pub fn conv2d(
        &mut self,
        x: &Value,
        w: &Value,
        b: Option<&Value>,
        spec: &ConvSpec,
    ) -> Result<Value> {
        let out = ops::conv2d(&x.data, &w.data, b.map(|v| &*v.data), spec)?;
        let node = self.alloc(&[x.node, w.node, b.and_then(|v| v.node)]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (xd, wd) = (x.data.clone(), w.data.clone());
            let (xn, wn, bn) = (x.node, w.node, b.and_then(|v| v.node));
            let spec = spec.clone();
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                let (gx, gw, gb) = ops::conv2d_backward(&xd, &wd, &spec, &go)?;
                g.accum(xn, gx);
                g.accum(wn, gw);
                if let Some(gb) = gb {
                    g.accum(bn, gb);
                }
                Ok(())
            });
        }
        Ok(val)
    }

    /// Training-mode batch norm; returns the batch statistics so the caller
    /// can update running buffers.
    pub fn batch_norm_train(
        &mut self,
        x: &Value,
        gamma: &Value,
        beta: &Value,
        eps: f32,
    ) -> Result<(Value, BnStats)> {
        let (out, stats) = ops::batch_norm_train(&x.data, &gamma.data, &beta.data, eps)?;
        let node = self.alloc(&[x.node, gamma.node, beta.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (xd, gd) = (x.data.clone(), gamma.data.clone());
            let (xn, gn, bn) = (x.node, gamma.node, beta.node);
            let st = stats.clone();
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                let (gx, ggamma, gbeta) = ops::batch_norm_backward(&xd, &gd, &st, eps, &go)?;
                g.accum(xn, gx);
                g.accum(gn, ggamma);
                g.accum(bn, gbeta);
                Ok(())
            });
        }
        Ok((val, stats))
    }

    /// Batch norm with fixed statistics (inference, or frozen fine-tuning).
    pub fn batch_norm_eval(
        &mut self,
        x: &Value,
        gamma: &Value,
        beta: &Value,
        mean: &Tensor,
        var: &Tensor,
        eps: f32,
    ) -> Result<Value> {
        let out = ops::batch_norm_eval(&x.data, &gamma.data, &beta.data, mean.data(), var.data(), eps)?;
        let node = self.alloc(&[x.node, gamma.node, beta.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (xd, gd) = (x.data.clone(), gamma.data.clone());
            let (xn, gn, bn) = (x.node, gamma.node, beta.node);
            let (m, v) = (mean.data().to_vec(), var.data().to_vec());
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                let (gx, ggamma, gbeta) =
                    ops::batch_norm_eval_backward(&xd, &gd, &m, &v, eps, &go)?;
                g.accum(xn, gx);
                g.accum(gn, ggamma);
                g.accum(bn, gbeta);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn layer_norm(&mut self, x: &Value, gamma: &Value, beta: &Value, eps: f32) -> Result<Value> {
        let (out, stats) = ops::layer_norm(&x.data, &gamma.data, &beta.data, eps)?;
        let node = self.alloc(&[x.node, gamma.node, beta.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (xd, gd) = (x.data.clone(), gamma.data.clone());
            let (xn, gn, bn) = (x.node, gamma.node, beta.node);
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                let (gx, ggamma, gbeta) = ops::layer_norm_backward(&xd, &gd, &stats, &go)?;
                g.accum(xn, gx);
                g.accum(gn, ggamma);
                g.accum(bn, gbeta);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn relu(&mut self, x: &Value) -> Value {
        let out = ops::relu(&x.data);
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let xd = x.data.clone();
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::relu_backward(&xd, &go));
                Ok(())
            });
        }
        val
    }

    pub fn sigmoid(&mut self, x: &Value) -> Value {
        let out = ops::sigmoid(&x.data);
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let yd = val.data.clone();
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::sigmoid_backward(&yd, &go));
                Ok(())
            });
        }
        val
    }

    pub fn softmax(&mut self, x: &Value, axis: usize) -> Result<Value> {
        let out = ops::softmax(&x.data, axis)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let yd = val.data.clone();
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::softmax_backward(&yd, &go, axis)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn add(&mut self, a: &Value, b: &Value) -> Result<Value> {
        let out = ops::add(&a.data, &b.data)?;
        let node = self.alloc(&[a.node, b.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (an, bn) = (a.node, b.node);
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(an, go.clone());
                g.accum(bn, go);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn mul_broadcast(&mut self, x: &Value, gate: &Value) -> Result<Value> {
        let out = ops::mul_broadcast(&x.data, &gate.data)?;
        let node = self.alloc(&[x.node, gate.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (xd, gd) = (x.data.clone(), gate.data.clone());
            let (xn, gn) = (x.node, gate.node);
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                let (gx, ggate) = ops::mul_broadcast_backward(&xd, &gd, &go)?;
                g.accum(xn, gx);
                g.accum(gn, ggate);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn avg_pool2d(&mut self, x: &Value, window: (usize, usize)) -> Result<Value> {
        let out = ops::avg_pool2d(&x.data, window)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let ishape = x.shape().to_vec();
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::avg_pool2d_backward(&ishape, window, &go)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn max_pool2d(&mut self, x: &Value, window: (usize, usize)) -> Result<Value> {
        let (out, arg) = ops::max_pool2d(&x.data, window)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let ishape = x.shape().to_vec();
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::max_pool2d_backward(&ishape, &arg, &go)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn global_avg_pool(&mut self, x: &Value) -> Result<Value> {
        let out = ops::global_avg_pool(&x.data)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let ishape = x.shape().to_vec();
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::global_avg_pool_backward(&ishape, &go)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn channel_avg_pool(&mut self, x: &Value) -> Result<Value> {
        let out = ops::channel_avg_pool(&x.data)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let ishape = x.shape().to_vec();
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::channel_avg_pool_backward(&ishape, &go)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn channel_max_pool(&mut self, x: &Value) -> Result<Value> {
        let (out, arg) = ops::channel_max_pool(&x.data)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let ishape = x.shape().to_vec();
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::channel_max_pool_backward(&ishape, &arg, &go)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn channel_shuffle(&mut self, x: &Value, groups: usize) -> Result<Value> {
        let out = ops::channel_shuffle(&x.data, groups)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let xn = x.node;
            let channels = x.shape()[1];
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                // the inverse permutation is a shuffle with the co-factor
                g.accum(xn, ops::channel_shuffle(&go, channels / groups)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn resize_bilinear(&mut self, x: &Value, out_h: usize, out_w: usize) -> Result<Value> {
        let out = ops::resize_bilinear(&x.data, out_h, out_w)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let ishape = x.shape().to_vec();
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::resize_bilinear_backward(&ishape, &go)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn linear(&mut self, x: &Value, w: &Value, b: Option<&Value>) -> Result<Value> {
        let out = ops::linear(&x.data, &w.data, b.map(|v| &*v.data))?;
        let node = self.alloc(&[x.node, w.node, b.and_then(|v| v.node)]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (xd, wd) = (x.data.clone(), w.data.clone());
            let (xn, wn, bn) = (x.node, w.node, b.and_then(|v| v.node));
            let has_bias = b.is_some();
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                let (gx, gw, gb) = ops::linear_backward(&xd, &wd, has_bias, &go)?;
                g.accum(xn, gx);
                g.accum(wn, gw);
                if let Some(gb) = gb {
                    g.accum(bn, gb);
                }
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn segmented_attention(
        &mut self,
        q: &Value,
        k: &Value,
        v: &Value,
        heads: usize,
        segments: usize,
    ) -> Result<Value> {
        let out = ops::segmented_attention(&q.data, &k.data, &v.data, heads, segments)?;
        let node = self.alloc(&[q.node, k.node, v.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (qd, kd, vd) = (q.data.clone(), k.data.clone(), v.data.clone());
            let (qn, kn, vn) = (q.node, k.node, v.node);
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                let (gq, gk, gv) =
                    ops::segmented_attention_backward(&qd, &kd, &vd, heads, segments, &go)?;
                g.accum(qn, gq);
                g.accum(kn, gk);
                g.accum(vn, gv);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn channel_conv1d(&mut self, x: &Value, w: &Value) -> Result<Value> {
        let out = ops::channel_conv1d(&x.data, &w.data)?;
        let node = self.alloc(&[x.node, w.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (xd, wd) = (x.data.clone(), w.data.clone());
            let (xn, wn) = (x.node, w.node);
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                let (gx, gw) = ops::channel_conv1d_backward(&xd, &wd, &go)?;
                g.accum(xn, gx);
                g.accum(wn, gw);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn concat_channels(&mut self, parts: &[&Value]) -> Result<Value> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &*p.data).collect();
        let out = ops::concat_channels(&tensors)?;
        let deps: Vec<Option<usize>> = parts.iter().map(|p| p.node).collect();
        let node = self.alloc(&deps);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let channels: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                let grads = ops::concat_channels_backward(&channels, &go)?;
                for (dep, grad) in deps.into_iter().zip(grads) {
                    g.accum(dep, grad);
                }
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn nchw_to_tokens(&mut self, x: &Value) -> Result<Value> {
        let out = ops::nchw_to_tokens(&x.data)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let (n, c, h, w) = x.data.dims4()?;
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::tokens_to_nchw(&go, n, c, h, w)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn tokens_to_nchw(&mut self, x: &Value, n: usize, c: usize, h: usize, w: usize) -> Result<Value> {
        let out = ops::tokens_to_nchw(&x.data, n, c, h, w)?;
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let xn = x.node;
            let oshape = val.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &oshape) else { return Ok(()) };
                g.accum(xn, ops::nchw_to_tokens(&go)?);
                Ok(())
            });
        }
        Ok(val)
    }

    pub fn sum_all(&mut self, x: &Value) -> Value {
        let out = ops::sum_all(&x.data);
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let xn = x.node;
            let ishape = x.shape().to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &[1]) else { return Ok(()) };
                let s = go.data()[0];
                g.accum(xn, Tensor::full(&ishape, s));
                Ok(())
            });
        }
        val
    }

    /// Scalar readout `sum(c * x)` against fixed coefficients, reduced in
    /// f64. Used to turn an arbitrary output into a differentiable loss.
    pub fn weighted_sum(&mut self, x: &Value, coeffs: &[f32]) -> Result<Value> {
        if coeffs.len() != x.data.numel() {
            return Err(Error::shape(format!(
                "{} coefficients for {} elements",
                coeffs.len(),
                x.data.numel()
            )));
        }
        let out = Tensor::scalar(ops::weighted_sum_f64(&x.data, coeffs) as f32);
        let node = self.alloc(&[x.node]);
        let val = Value {
            data: Rc::new(out),
            node,
        };
        if let Some(out_node) = node {
            let xn = x.node;
            let ishape = x.shape().to_vec();
            let coeffs = coeffs.to_vec();
            self.push(move |g| {
                let Some(go) = g.take(out_node, &[1]) else { return Ok(()) };
                let s = go.data()[0];
                let grad = Tensor::from_vec(&ishape, coeffs.iter().map(|&c| c * s).collect())?;
                g.accum(xn, grad);
                Ok(())
            });
        }
        Ok(val)
    }

    /// Softmax cross-entropy against raster-order labels; returns the scalar
    /// loss and the number of non-ignored pixels.
    pub fn cross_entropy(
        &mut self,
        logits: &Value,
        labels: &[u32],
        class_weights: Option<&[f32]>,
        ignore: u32,
    ) -> Result<(Value, usize)> {
        let ce = ops::softmax_cross_entropy(&logits.data, labels, class_weights, ignore)?;
        let node = self.alloc(&[logits.node]);
        let val = Value {
            data: Rc::new(Tensor::scalar(ce.loss)),
            node,
        };
        if let Some(out_node) = node {
            let xn = logits.node;
            let grad = ce.grad;
            self.push(move |g| {
                let Some(go) = g.take(out_node, &[1]) else { return Ok(()) };
                let s = go.data()[0];
                let scaled =
                    Tensor::from_vec(grad.shape(), grad.data().iter().map(|&v| v * s).collect())?;
                g.accum(xn, scaled);
                Ok(())
            });
        }
        Ok((val, ce.valid))
    }
}
