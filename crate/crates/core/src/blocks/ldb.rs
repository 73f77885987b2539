//! Lightweight dilated bottleneck.
//!
//! The input is reduced to half width by a 1x1 convolution, refined by a
//! factorized 3x1/1x3 pair, and then split into two depthwise factorized
//! branches, one plain and one dilated, each finished with channel
//! attention. The refined features and both branches are summed, expanded
//! back to full width by a 1x1 convolution, added to the block input, and
//! channel shuffled.

use super::{ChannelAttention, Conv2d, ConvBn, Forward, Tally};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::tape::Value;
use crate::tensor::ConvSpec;

#[derive(Clone, Copy, Debug)]
pub struct LdbConfig {
    pub channels: usize,
    /// Dilation of the second branch; 1 collapses it to a copy of the first.
    pub dilation: usize,
    /// Channel attention kernel width, odd.
    pub ca_kernel: usize,
    pub shuffle_groups: usize,
}

impl LdbConfig {
    pub fn new(channels: usize, dilation: usize) -> LdbConfig {
        LdbConfig {
            channels,
            dilation,
            ca_kernel: 3,
            shuffle_groups: channels / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels % 2 != 0 {
            return Err(Error::config(format!(
                "bottleneck channels must be even and positive, got {}",
                self.channels
            )));
        }
        if self.dilation == 0 {
            return Err(Error::config("bottleneck dilation must be >= 1".to_string()));
        }
        if self.shuffle_groups == 0 || self.channels % self.shuffle_groups != 0 {
            return Err(Error::config(format!(
                "channels {} not divisible by shuffle groups {}",
                self.channels, self.shuffle_groups
            )));
        }
        Ok(())
    }
}

pub struct DilatedBottleneck {
    cfg: LdbConfig,
    reduce: ConvBn,
    f1_a: Conv2d,
    f1_b: ConvBn,
    b1_a: Conv2d,
    b1_b: ConvBn,
    b1_ca: ChannelAttention,
    b2_a: Conv2d,
    b2_b: ConvBn,
    b2_ca: ChannelAttention,
    expand: Conv2d,
}

impl DilatedBottleneck {
    pub fn new(store: &mut ParamStore, name: &str, cfg: LdbConfig) -> Result<DilatedBottleneck> {
        cfg.validate()?;
        let c = cfg.channels;
        let half = c / 2;
        let r = cfg.dilation;

        let reduce = ConvBn::new(store, &format!("{name}.reduce"), ConvSpec::new(c, half, (1, 1)), true)?;
        let f1_a = Conv2d::new(
            store,
            &format!("{name}.f1a"),
            ConvSpec::new(half, half, (3, 1)).padding((1, 0)),
        )?;
        let f1_b = ConvBn::new(
            store,
            &format!("{name}.f1b"),
            ConvSpec::new(half, half, (1, 3)).padding((0, 1)),
            true,
        )?;
        let b1_a = Conv2d::new(
            store,
            &format!("{name}.b1a"),
            ConvSpec::new(half, half, (3, 1)).padding((1, 0)).groups(half),
        )?;
        let b1_b = ConvBn::new(
            store,
            &format!("{name}.b1b"),
            ConvSpec::new(half, half, (1, 3)).padding((0, 1)).groups(half),
            true,
        )?;
        let b1_ca = ChannelAttention::new(store, &format!("{name}.b1ca"), half, cfg.ca_kernel)?;
        let b2_a = Conv2d::new(
            store,
            &format!("{name}.b2a"),
            ConvSpec::new(half, half, (3, 1))
                .padding((r, 0))
                .dilation((r, 1))
                .groups(half),
        )?;
        let b2_b = ConvBn::new(
            store,
            &format!("{name}.b2b"),
            ConvSpec::new(half, half, (1, 3))
                .padding((0, r))
                .dilation((1, r))
                .groups(half),
            true,
        )?;
        let b2_ca = ChannelAttention::new(store, &format!("{name}.b2ca"), half, cfg.ca_kernel)?;
        let expand = Conv2d::new(
            store,
            &format!("{name}.expand"),
            ConvSpec::new(half, c, (1, 1)).bias(true),
        )?;

        Ok(DilatedBottleneck {
            cfg,
            reduce,
            f1_a,
            f1_b,
            b1_a,
            b1_b,
            b1_ca,
            b2_a,
            b2_b,
            b2_ca,
            expand,
        })
    }

    pub fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let (_, c, _, _) = x.tensor().dims4()?;
        if c != self.cfg.channels {
            return Err(Error::shape(format!(
                "bottleneck expects {} channels, got {c}",
                self.cfg.channels
            )));
        }
        let t = self.reduce.forward(cx, x)?;
        let f1 = {
            let a = self.f1_a.forward(cx, &t)?;
            self.f1_b.forward(cx, &a)?
        };
        let b1 = {
            let a = self.b1_a.forward(cx, &f1)?;
            let b = self.b1_b.forward(cx, &a)?;
            self.b1_ca.forward(cx, &b)?
        };
        let b2 = {
            let a = self.b2_a.forward(cx, &f1)?;
            let b = self.b2_b.forward(cx, &a)?;
            self.b2_ca.forward(cx, &b)?
        };
        let sum = cx.tape.add(&f1, &b1)?;
        let sum = cx.tape.add(&sum, &b2)?;
        let merged = self.expand.forward(cx, &sum)?;
        let res = cx.tape.add(&merged, x)?;
        cx.tape.channel_shuffle(&res, self.cfg.shuffle_groups)
    }

    /// All convolutions here preserve the spatial size.
    pub fn tally(&self, h: usize, w: usize, t: &mut Tally) -> Result<()> {
        self.reduce.tally(h, w, t)?;
        self.f1_a.tally(h, w, t)?;
        self.f1_b.tally(h, w, t)?;
        self.b1_a.tally(h, w, t)?;
        self.b1_b.tally(h, w, t)?;
        self.b1_ca.tally(h, w, t);
        self.b2_a.tally(h, w, t)?;
        self.b2_b.tally(h, w, t)?;
        self.b2_ca.tally(h, w, t);
        self.expand.tally(h, w, t)?;
        Ok(())
    }
}
