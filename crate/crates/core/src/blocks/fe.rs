//! Feature enhancement for encoder-to-decoder skips.
//!
//! Two gated views of the input are fused back onto it. The channel view
//! rescales each channel by a squeeze-excite gate from the pooled
//! descriptor; the spatial view rescales each position by a gate computed
//! from channelwise average and max maps. Both views pass through their own
//! 1x1 projection and are added to the unmodified input.

use super::{BatchNorm2d, Conv2d, Forward, Tally};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::tape::Value;
use crate::tensor::ConvSpec;

#[derive(Clone, Copy, Debug)]
pub struct FeConfig {
    pub channels: usize,
    /// Squeeze ratio of the channel gate's hidden width.
    pub reduction: usize,
}

impl FeConfig {
    pub fn new(channels: usize, reduction: usize) -> FeConfig {
        FeConfig { channels, reduction }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("enhancement channels must be positive".to_string()));
        }
        if self.reduction == 0 || self.channels % self.reduction != 0 {
            return Err(Error::config(format!(
                "channels {} not divisible by reduction {}",
                self.channels, self.reduction
            )));
        }
        Ok(())
    }
}

pub struct FeatureEnhance {
    cfg: FeConfig,
    ch_a: Conv2d,
    ch_b: Conv2d,
    sp_conv: Conv2d,
    sp_bn: BatchNorm2d,
    fuse_c: Conv2d,
    fuse_s: Conv2d,
    name: String,
}

impl FeatureEnhance {
    pub fn new(store: &mut ParamStore, name: &str, cfg: FeConfig) -> Result<FeatureEnhance> {
        cfg.validate()?;
        let c = cfg.channels;
        let hidden = c / cfg.reduction;
        let ch_a = Conv2d::new(store, &format!("{name}.ch_a"), ConvSpec::new(c, hidden, (1, 1)).bias(true))?;
        let ch_b = Conv2d::new(store, &format!("{name}.ch_b"), ConvSpec::new(hidden, c, (1, 1)).bias(true))?;
        let sp_conv = Conv2d::new(
            store,
            &format!("{name}.sp_conv"),
            ConvSpec::new(2, 1, (3, 3)).padding((1, 1)),
        )?;
        let sp_bn = BatchNorm2d::new(store, &format!("{name}.sp_bn"), 1)?;
        let fuse_c = Conv2d::new(store, &format!("{name}.fuse_c"), ConvSpec::new(c, c, (1, 1)).bias(true))?;
        let fuse_s = Conv2d::new(store, &format!("{name}.fuse_s"), ConvSpec::new(c, c, (1, 1)).bias(true))?;
        Ok(FeatureEnhance {
            cfg,
            ch_a,
            ch_b,
            sp_conv,
            sp_bn,
            fuse_c,
            fuse_s,
            name: name.to_string(),
        })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let (_, c, _, _) = x.tensor().dims4()?;
        if c != self.cfg.channels {
            return Err(Error::shape(format!(
                "enhancement expects {} channels, got {c}",
                self.cfg.channels
            )));
        }
        // channel gate from the pooled descriptor
        let pooled = cx.tape.global_avg_pool(x)?;
        let g = self.ch_a.forward(cx, &pooled)?;
        let g = cx.tape.relu(&g);
        let g = self.ch_b.forward(cx, &g)?;
        let g = cx.tape.sigmoid(&g);
        let m_c = cx.tape.mul_broadcast(x, &g)?;
        // spatial gate from channelwise statistics
        let avg = cx.tape.channel_avg_pool(x)?;
        let max = cx.tape.channel_max_pool(x)?;
        let stat = cx.tape.concat_channels(&[&avg, &max])?;
        let s = self.sp_conv.forward(cx, &stat)?;
        let s = self.sp_bn.forward(cx, &s)?;
        let s = cx.tape.sigmoid(&s);
        let m_s = cx.tape.mul_broadcast(x, &s)?;
        // fuse both views onto the input
        let y_c = self.fuse_c.forward(cx, &m_c)?;
        let y_s = self.fuse_s.forward(cx, &m_s)?;
        let y = cx.tape.add(&y_c, &y_s)?;
        cx.tape.add(&y, x)
    }

    pub fn tally(&self, h: usize, w: usize, t: &mut Tally) -> Result<()> {
        let c = self.cfg.channels;
        t.add(&format!("{}.pool", self.name), 0, (h * w * c) as u64);
        self.ch_a.tally(1, 1, t)?;
        self.ch_b.tally(1, 1, t)?;
        self.sp_conv.tally(h, w, t)?;
        self.sp_bn.tally(t);
        self.fuse_c.tally(h, w, t)?;
        self.fuse_s.tally(h, w, t)?;
        Ok(())
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

    fn run(store: &ParamStore, block: &FeatureEnhance, x: &Tensor) -> Tensor {
        let mut tape = GradTape::new(false);
        let values = ParamValues::register(store, &mut tape);
        let mut cx = Forward::new(&mut tape, &values, Mode::Train);
        let xv = cx.tape.constant(x.clone());
        block.forward(&mut cx, &xv).unwrap().tensor().clone()
    }

    #[test]
    fn zero_fusion_weights_pass_the_input_through() {
        let mut store = ParamStore::new(3);
        let block = FeatureEnhance::new(&mut store, "fe", FeConfig::new(8, 2)).unwrap();
        for (_, e) in store.iter_mut() {
            if e.name.starts_with("fe.fuse") {
                e.tensor.data_mut().fill(0.0);
            }
        }
        let x = rand_input(&[2, 8, 4, 4], 1);
        let got = run(&store, &block, &x);
        assert_eq!(got.data(), x.data());
    }

    #[test]
    fn zero_input_yields_fusion_biases_broadcast() {
        let mut store = ParamStore::new(5);
        let block = FeatureEnhance::new(&mut store, "fe", FeConfig::new(4, 2)).unwrap();
        let bc = [0.3f32, -0.2, 0.05, 1.5];
        let bs = [-1.0f32, 0.25, 0.0, 0.75];
        store
            .get_mut(store.find("fe.fuse_c.bias").unwrap())
            .tensor
            .data_mut()
            .copy_from_slice(&bc);
        store
            .get_mut(store.find("fe.fuse_s.bias").unwrap())
            .tensor
            .data_mut()
            .copy_from_slice(&bs);
        let x = Tensor::zeros(&[1, 4, 3, 3]);
        let got = run(&store, &block, &x);
        for c in 0..4 {
            for i in 0..9 {
                assert_eq!(got.data()[c * 9 + i], bc[c] + bs[c]);
            }
        }
    }

    #[test]
    fn gates_lie_strictly_inside_unit_interval() {
        let mut store = ParamStore::new(7);
        let _block = FeatureEnhance::new(&mut store, "fe", FeConfig::new(8, 2)).unwrap();
        let x = rand_input(&[1, 8, 4, 4], 2);
        let p = |n: &str| store.get(store.find(n).unwrap()).tensor.clone();

        let pooled = ops::global_avg_pool(&x).unwrap();
        let g = ops::conv2d(&pooled, &p("fe.ch_a.weight"), Some(&p("fe.ch_a.bias")), &ConvSpec::new(8, 4, (1, 1)).bias(true)).unwrap();
        let g = ops::conv2d(&ops::relu(&g), &p("fe.ch_b.weight"), Some(&p("fe.ch_b.bias")), &ConvSpec::new(4, 8, (1, 1)).bias(true)).unwrap();
        let g = ops::sigmoid(&g);
        for v in g.data() {
            assert!(*v > 0.0 && *v < 1.0);
        }

        let stat = ops::concat_channels(&[
            &ops::channel_avg_pool(&x).unwrap(),
            &ops::channel_max_pool(&x).unwrap().0,
        ])
        .unwrap();
        let s = ops::conv2d(&stat, &p("fe.sp_conv.weight"), None, &ConvSpec::new(2, 1, (3, 3)).padding((1, 1))).unwrap();
        let (s, _) = ops::batch_norm_train(&s, &p("fe.sp_bn.gamma"), &p("fe.sp_bn.beta"), 1e-5).unwrap();
        let s = ops::sigmoid(&s);
        for v in s.data() {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn forward_matches_primitive_composition() {
        let mut store = ParamStore::new(19);
        let block = FeatureEnhance::new(&mut store, "fe", FeConfig::new(8, 2)).unwrap();
        let x = rand_input(&[1, 8, 4, 4], 3);
        let got = run(&store, &block, &x);

        let p = |n: &str| store.get(store.find(n).unwrap()).tensor.clone();
        let conv11 = |x: &Tensor, n: &str, ci: usize, co: usize| {
            ops::conv2d(
                x,
                &p(&format!("{n}.weight")),
                Some(&p(&format!("{n}.bias"))),
                &ConvSpec::new(ci, co, (1, 1)).bias(true),
            )
            .unwrap()
        };
        let pooled = ops::global_avg_pool(&x).unwrap();
        let g = ops::sigmoid(&conv11(&ops::relu(&conv11(&pooled, "fe.ch_a", 8, 4)), "fe.ch_b", 4, 8));
        let m_c = ops::mul_broadcast(&x, &g).unwrap();
        let stat = ops::concat_channels(&[
            &ops::channel_avg_pool(&x).unwrap(),
            &ops::channel_max_pool(&x).unwrap().0,
        ])
        .unwrap();
        let s = ops::conv2d(&stat, &p("fe.sp_conv.weight"), None, &ConvSpec::new(2, 1, (3, 3)).padding((1, 1))).unwrap();
        let (s, _) = ops::batch_norm_train(&s, &p("fe.sp_bn.gamma"), &p("fe.sp_bn.beta"), 1e-5).unwrap();
        let m_s = ops::mul_broadcast(&x, &ops::sigmoid(&s)).unwrap();
        let y = ops::add(
            &ops::add(&conv11(&m_c, "fe.fuse_c", 8, 8), &conv11(&m_s, "fe.fuse_s", 8, 8)).unwrap(),
            &x,
        )
        .unwrap();

        for (a, b) in got.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn tally_params_agree_with_store() {
        let mut store = ParamStore::new(0);
        let block = FeatureEnhance::new(&mut store, "fe", FeConfig::new(32, 4)).unwrap();
        let mut t = Tally::new();
        block.tally(8, 8, &mut t).unwrap();
        assert_eq!(t.params(), store.count_trainable());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(FeConfig::new(8, 3).validate().is_err());
        assert!(FeConfig::new(8, 0).validate().is_err());
        assert!(FeConfig::new(0, 1).validate().is_err());
    }
}
