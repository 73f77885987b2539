//! Transformer capsule with segmented multi-head attention.
//!
//! Feature maps are flattened to one token per pixel. The attention branch
//! halves the token width, runs multi-head attention independently within
//! contiguous token segments (cutting the quadratic cost by the segment
//! count), and restores the width; a two-layer MLP branch follows. Both
//! branches are residual around layer-normalized inputs.

use super::{Forward, LayerNorm1d, Linear, Tally};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::tape::Value;

#[derive(Clone, Copy, Debug)]
pub struct EmhaConfig {
    pub model_dim: usize,
    pub heads: usize,
    /// Segments per image; attention never crosses a segment boundary.
    pub segments: usize,
    pub mlp_ratio: usize,
}

impl EmhaConfig {
    pub fn new(model_dim: usize) -> EmhaConfig {
        EmhaConfig {
            model_dim,
            heads: 8,
            segments: 4,
            mlp_ratio: 2,
        }
    }

    /// The attention branch runs at half the model width.
    pub fn reduced_dim(&self) -> usize {
        self.model_dim / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.model_dim % 2 != 0 {
            return Err(Error::config(format!(
                "transformer model dim must be even and positive, got {}",
                self.model_dim
            )));
        }
        if self.heads == 0 || self.reduced_dim() % self.heads != 0 {
            return Err(Error::config(format!(
                "attention width {} not divisible into {} heads",
                self.reduced_dim(),
                self.heads
            )));
        }
        if self.segments == 0 {
            return Err(Error::config("segment count must be >= 1".to_string()));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("mlp ratio must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// The attention core on token matrices `[N_tok, C_red]`.
pub struct Emha {
    dim: usize,
    heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl Emha {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Emha> {
        let q = Linear::new(store, &format!("{name}.q"), dim, dim, true)?;
        // no key bias: it shifts every score in a softmax row equally, so
        // the attention output is exactly invariant to it
        let k = Linear::new(store, &format!("{name}.k"), dim, dim, false)?;
        let v = Linear::new(store, &format!("{name}.v"), dim, dim, true)?;
        let out = Linear::new(store, &format!("{name}.out"), dim, dim, true)?;
        Ok(Emha { dim, heads, q, k, v, out })
    }

    pub fn forward(&self, cx: &mut Forward, tokens: &Value, segments: usize) -> Result<Value> {
        let n_tok = tokens.tensor().shape()[0];
        if segments == 0 || n_tok % segments != 0 {
            return Err(Error::config(format!(
                "{n_tok} tokens not divisible into {segments} segments"
            )));
        }
        let q = self.q.forward(cx, tokens)?;
        let k = self.k.forward(cx, tokens)?;
        let v = self.v.forward(cx, tokens)?;
        let mixed = cx.tape.segmented_attention(&q, &k, &v, self.heads, segments)?;
        self.out.forward(cx, &mixed)
    }

    /// Projections plus the two segment-local matrix products. `tokens` and
    /// `segments` describe one image.
    pub fn tally(&self, name: &str, tokens: usize, segments: usize, t: &mut Tally) {
        self.q.tally(tokens, t);
        self.k.tally(tokens, t);
        self.v.tally(tokens, t);
        let seg_len = tokens / segments;
        let attn = 2 * segments * seg_len * seg_len * self.dim;
        t.add(&format!("{name}.attn"), 0, attn as u64);
        self.out.tally(tokens, t);
    }
}

pub struct TransformerBlock {
    cfg: EmhaConfig,
    ln1: LayerNorm1d,
    reduce: Linear,
    emha: Emha,
    expand: Linear,
    ln2: LayerNorm1d,
    mlp_a: Linear,
    mlp_b: Linear,
    name: String,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: EmhaConfig) -> Result<TransformerBlock> {
        cfg.validate()?;
        let c = cfg.model_dim;
        let red = cfg.reduced_dim();
        let hidden = c * cfg.mlp_ratio;
        let ln1 = LayerNorm1d::new(store, &format!("{name}.ln1"), c)?;
        let reduce = Linear::new(store, &format!("{name}.reduce"), c, red, true)?;
        let emha = Emha::new(store, &format!("{name}.emha"), red, cfg.heads)?;
        let expand = Linear::new(store, &format!("{name}.expand"), red, c, true)?;
        let ln2 = LayerNorm1d::new(store, &format!("{name}.ln2"), c)?;
        let mlp_a = Linear::new(store, &format!("{name}.mlp_a"), c, hidden, true)?;
        let mlp_b = Linear::new(store, &format!("{name}.mlp_b"), hidden, c, true)?;
        Ok(TransformerBlock {
            cfg,
            ln1,
            reduce,
            emha,
            expand,
            ln2,
            mlp_a,
            mlp_b,
            name: name.to_string(),
        })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let (n, c, h, w) = x.tensor().dims4()?;
        if c != self.cfg.model_dim {
            return Err(Error::shape(format!(
                "transformer expects {} channels, got {c}",
                self.cfg.model_dim
            )));
        }
        if (h * w) % self.cfg.segments != 0 {
            return Err(Error::config(format!(
                "{h}x{w} feature map not divisible into {} segments",
                self.cfg.segments
            )));
        }
        let tokens = cx.tape.nchw_to_tokens(x)?;
        let t1 = self.ln1.forward(cx, &tokens)?;
        let r = self.reduce.forward(cx, &t1)?;
        let a = self.emha.forward(cx, &r, n * self.cfg.segments)?;
        let e = self.expand.forward(cx, &a)?;
        let x1 = cx.tape.add(&tokens, &e)?;
        let t2 = self.ln2.forward(cx, &x1)?;
        let m = self.mlp_a.forward(cx, &t2)?;
        let m = cx.tape.relu(&m);
        let m = self.mlp_b.forward(cx, &m)?;
        let x2 = cx.tape.add(&x1, &m)?;
        cx.tape.tokens_to_nchw(&x2, n, c, h, w)
    }

    pub fn tally(&self, h: usize, w: usize, t: &mut Tally) {
        let tokens = h * w;
        self.ln1.tally(t);
        self.reduce.tally(tokens, t);
        self.emha.tally(&format!("{}.emha", self.name), tokens, self.cfg.segments, t);
        self.expand.tally(tokens, t);
        self.ln2.tally(t);
        self.mlp_a.tally(tokens, t);
        self.mlp_b.tally(tokens, t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::Mode;
    use crate::params::ParamValues;
    use crate::tensor::tape::GradTape;
    use crate::tensor::{ops, Tensor};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0))
    }

    fn run_block(store: &ParamStore, block: &TransformerBlock, x: &Tensor) -> Tensor {
        let mut tape = GradTape::new(false);
        let values = ParamValues::register(store, &mut tape);
        let mut cx = Forward::new(&mut tape, &values, Mode::Eval);
        let xv = cx.tape.constant(x.clone());
        block.forward(&mut cx, &xv).unwrap().tensor().clone()
    }

    fn cfg16() -> EmhaConfig {
        let mut cfg = EmhaConfig::new(16);
        cfg.heads = 2;
        cfg.segments = 4;
        cfg
    }

    #[test]
    fn zeroed_attention_and_mlp_is_the_identity() {
        let mut store = ParamStore::new(3);
        let block = TransformerBlock::new(&mut store, "et", cfg16()).unwrap();
        for (_, e) in store.iter_mut() {
            if !e.name.contains(".ln") {
                e.tensor.data_mut().fill(0.0);
            }
        }
        let x = rand_input(&[2, 16, 4, 4], 1);
        let got = run_block(&store, &block, &x);
        assert_eq!(got.data(), x.data());
    }

    #[test]
    fn output_shape_matches_input_shape() {
        let mut store = ParamStore::new(9);
        let block = TransformerBlock::new(&mut store, "et", cfg16()).unwrap();
        for shape in [[1usize, 16, 4, 4], [2, 16, 2, 6], [1, 16, 8, 4]] {
            let x = rand_input(&shape, 2);
            assert_eq!(run_block(&store, &block, &x).shape(), &shape);
        }
    }

    #[test]
    fn indivisible_token_count_is_rejected() {
        let mut store = ParamStore::new(0);
        let block = TransformerBlock::new(&mut store, "et", cfg16()).unwrap();
        let mut tape = GradTape::new(false);
        let values = ParamValues::register(&store, &mut tape);
        let mut cx = Forward::new(&mut tape, &values, Mode::Eval);
        let xv = cx.tape.constant(Tensor::zeros(&[1, 16, 3, 3]));
        assert!(block.forward(&mut cx, &xv).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(EmhaConfig::new(15).validate().is_err());
        let mut bad = EmhaConfig::new(16);
        bad.heads = 3;
        assert!(bad.validate().is_err());
        bad = EmhaConfig::new(16);
        bad.segments = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_token_segments_reduce_to_out_projection_of_v() {
        // every attention row sees exactly one key, so softmax is 1 and the
        // mixed tokens equal V
        let mut store = ParamStore::new(17);
        let emha = Emha::new(&mut store, "m", 8, 2).unwrap();
        let tokens = rand_input(&[8, 8], 5);

        let mut tape = GradTape::new(false);
        let values = ParamValues::register(&store, &mut tape);
        let mut cx = Forward::new(&mut tape, &values, Mode::Eval);
        let tv = cx.tape.constant(tokens.clone());
        let got = emha.forward(&mut cx, &tv, 8).unwrap();

        let p = |n: &str| store.get(store.find(n).unwrap()).tensor.clone();
        let v = ops::linear(&tokens, &p("m.v.weight"), Some(&p("m.v.bias"))).unwrap();
        let want = ops::linear(&v, &p("m.out.weight"), Some(&p("m.out.bias"))).unwrap();
        for (a, b) in got.tensor().data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_weights_are_row_stochastic() {
        let mut store = ParamStore::new(23);
        let emha = Emha::new(&mut store, "m", 8, 2).unwrap();
        let tokens = rand_input(&[12, 8], 6);
        let p = |n: &str| store.get(store.find(n).unwrap()).tensor.clone();
        let q = ops::linear(&tokens, &p("m.q.weight"), Some(&p("m.q.bias"))).unwrap();
        let k = ops::linear(&tokens, &p("m.k.weight"), None).unwrap();
        let v = ops::linear(&tokens, &p("m.v.weight"), Some(&p("m.v.bias"))).unwrap();
        let (_, weights) =
            ops::segmented_attention_with_weights(&q, &k, &v, emha.heads, 3).unwrap();
        // weights: [segments*heads, L, L], rows contiguous
        let seg_len = weights.shape()[2];
        assert_eq!(seg_len, 4);
        for row in weights.data().chunks(seg_len) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
        }
    }

    #[test]
    fn emha_matches_loop_oracle() {
        // 8 tokens, 2 segments, 2 heads, head dim 4
        let mut store = ParamStore::new(31);
        let emha = Emha::new(&mut store, "m", 8, 2).unwrap();
        let tokens = rand_input(&[8, 8], 7);

        let mut tape = GradTape::new(false);
        let values = ParamValues::register(&store, &mut tape);
        let mut cx = Forward::new(&mut tape, &values, Mode::Eval);
        let tv = cx.tape.constant(tokens.clone());
        let got = emha.forward(&mut cx, &tv, 2).unwrap();

        let p = |n: &str| store.get(store.find(n).unwrap()).tensor.clone();
        let proj = |w: &str, b: Option<&str>| -> Vec<Vec<f64>> {
            let w = p(w);
            let b = b.map(p);
            let mut out = vec![vec![0.0f64; 8]; 8];
            for t in 0..8 {
                for o in 0..8 {
                    let mut acc = b.as_ref().map_or(0.0, |b| b.data()[o] as f64);
                    for i in 0..8 {
                        acc += tokens.data()[t * 8 + i] as f64 * w.data()[o * 8 + i] as f64;
                    }
                    out[t][o] = acc;
                }
            }
            out
        };
        let q = proj("m.q.weight", Some("m.q.bias"));
        let k = proj("m.k.weight", None);
        let v = proj("m.v.weight", Some("m.v.bias"));

        let mut mixed = vec![vec![0.0f64; 8]; 8];
        let scale = 1.0 / (4.0f64).sqrt();
        for seg in 0..2 {
            for head in 0..2 {
                let base = seg * 4;
                let off = head * 4;
                for qi in 0..4 {
                    let mut scores = [0.0f64; 4];
                    for ki in 0..4 {
                        let mut dot = 0.0;
                        for d in 0..4 {
                            dot += q[base + qi][off + d] * k[base + ki][off + d];
                        }
                        scores[ki] = dot * scale;
                    }
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for d in 0..4 {
                        let mut acc = 0.0;
                        for ki in 0..4 {
                            acc += exps[ki] / z * v[base + ki][off + d];
                        }
                        mixed[base + qi][off + d] = acc;
                    }
                }
            }
        }
        let wo = p("m.out.weight");
        let bo = p("m.out.bias");
        for t in 0..8 {
            for o in 0..8 {
                let mut acc = bo.data()[o] as f64;
                for i in 0..8 {
                    acc += mixed[t][i] * wo.data()[o * 8 + i] as f64;
                }
                let a = got.tensor().data()[t * 8 + o];
                assert!((a as f64 - acc).abs() < 1e-5, "{a} vs {acc}");
            }
        }
    }

    #[test]
    fn forward_matches_primitive_composition() {
        let mut store = ParamStore::new(41);
        let block = TransformerBlock::new(&mut store, "et", cfg16()).unwrap();
        let x = rand_input(&[1, 16, 4, 4], 8);
        let got = run_block(&store, &block, &x);

        let p = |n: &str| store.get(store.find(n).unwrap()).tensor.clone();
        let lin = |x: &Tensor, n: &str| {
            ops::linear(x, &p(&format!("{n}.weight")), Some(&p(&format!("{n}.bias")))).unwrap()
        };
        let tokens = ops::nchw_to_tokens(&x).unwrap();
        let t1 = ops::layer_norm(&tokens, &p("et.ln1.gamma"), &p("et.ln1.beta"), 1e-5)
            .unwrap()
            .0;
        let r = lin(&t1, "et.reduce");
        let q = lin(&r, "et.emha.q");
        let k = ops::linear(&r, &p("et.emha.k.weight"), None).unwrap();
        let v = lin(&r, "et.emha.v");
        let mixed = ops::segmented_attention(&q, &k, &v, 2, 4).unwrap();
        let a = lin(&mixed, "et.emha.out");
        let e = lin(&a, "et.expand");
        let x1 = ops::add(&tokens, &e).unwrap();
        let t2 = ops::layer_norm(&x1, &p("et.ln2.gamma"), &p("et.ln2.beta"), 1e-5)
            .unwrap()
            .0;
        let m = lin(&ops::relu(&lin(&t2, "et.mlp_a")), "et.mlp_b");
        let x2 = ops::add(&x1, &m).unwrap();
        let want = ops::tokens_to_nchw(&x2, 1, 16, 4, 4).unwrap();

        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn tally_params_agree_with_store() {
        let mut store = ParamStore::new(2);
        let block = TransformerBlock::new(&mut store, "et", EmhaConfig::new(128)).unwrap();
        let mut t = Tally::new();
        block.tally(16, 16, &mut t);
        assert_eq!(t.params(), store.count_trainable());
        assert_eq!(t.params(), 99_584);
    }
}
