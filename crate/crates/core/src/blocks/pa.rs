//! Pixel attention: a per-channel, per-position sigmoid gate.

use super::{Conv2d, Forward, Tally};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::tape::Value;
use crate::tensor::ConvSpec;

#[derive(Clone, Copy, Debug)]
pub struct PaConfig {
    pub channels: usize,
}

impl PaConfig {
    pub fn new(channels: usize) -> PaConfig {
        PaConfig { channels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("pixel attention needs at least one channel".to_string()));
        }
        Ok(())
    }
}

pub struct PixelAttention {
    cfg: PaConfig,
    conv: Conv2d,
}

impl PixelAttention {
    pub fn new(store: &mut ParamStore, name: &str, cfg: PaConfig) -> Result<PixelAttention> {
        cfg.validate()?;
        let c = cfg.channels;
        let conv = Conv2d::new(store, &format!("{name}.conv"), ConvSpec::new(c, c, (1, 1)).bias(true))?;
        Ok(PixelAttention { cfg, conv })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let (_, c, _, _) = x.tensor().dims4()?;
        if c != self.cfg.channels {
            return Err(Error::shape(format!(
                "pixel attention expects {} channels, got {c}",
                self.cfg.channels
            )));
        }
        let g = self.conv.forward(cx, x)?;
        let g = cx.tape.sigmoid(&g);
        cx.tape.mul_broadcast(x, &g)
    }

    pub fn tally(&self, h: usize, w: usize, t: &mut Tally) -> Result<()> {
        self.conv.tally(h, w, t)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::Mode;
    use crate::params::{ParamStore, ParamValues};
    use crate::tensor::tape::GradTape;
    use crate::tensor::{ops, Tensor};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0))
    }

    fn run(store: &ParamStore, block: &PixelAttention, x: &Tensor) -> Tensor {
        let mut tape = GradTape::new(false);
        let values = ParamValues::register(store, &mut tape);
        let mut cx = Forward::new(&mut tape, &values, Mode::Eval);
        let xv = cx.tape.constant(x.clone());
        block.forward(&mut cx, &xv).unwrap().tensor().clone()
    }

    #[test]
    fn zero_parameters_halve_the_input() {
        let mut store = ParamStore::new(1);
        let block = PixelAttention::new(&mut store, "pa", PaConfig::new(4)).unwrap();
        for (_, e) in store.iter_mut() {
            e.tensor.data_mut().fill(0.0);
        }
        let x = rand_input(&[2, 4, 3, 3], 1);
        let got = run(&store, &block, &x);
        for (a, b) in got.data().iter().zip(x.data()) {
            assert_eq!(*a, b * 0.5);
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let mut store = ParamStore::new(2);
        let block = PixelAttention::new(&mut store, "pa", PaConfig::new(4)).unwrap();
        let x = Tensor::zeros(&[1, 4, 3, 3]);
        let got = run(&store, &block, &x);
        assert!(got.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_matches_primitive_composition() {
        let mut store = ParamStore::new(13);
        let block = PixelAttention::new(&mut store, "pa", PaConfig::new(4)).unwrap();
        let x = rand_input(&[1, 4, 3, 3], 2);
        let got = run(&store, &block, &x);

        let p = |n: &str| store.get(store.find(n).unwrap()).tensor.clone();
        let g = ops::conv2d(
            &x,
            &p("pa.conv.weight"),
            Some(&p("pa.conv.bias")),
            &ConvSpec::new(4, 4, (1, 1)).bias(true),
        )
        .unwrap();
        let want = ops::mul_broadcast(&x, &ops::sigmoid(&g)).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        // the applied gate stays strictly inside (0,1)
        for v in ops::sigmoid(&g).data() {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn tally_params_agree_with_store() {
        let mut store = ParamStore::new(0);
        let block = PixelAttention::new(&mut store, "pa", PaConfig::new(32)).unwrap();
        let mut t = Tally::new();
        block.tally(4, 4, &mut t).unwrap();
        assert_eq!(t.params(), store.count_trainable());
        assert_eq!(t.params(), 32 * 32 + 32);
    }
}
