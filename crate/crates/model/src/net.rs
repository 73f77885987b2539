//! Network assembly.
//!
//! The encoder is three bottleneck stages at 1/2, 1/4, and 1/8 resolution
//! joined by channel-adding downsample units, with an optional transformer
//! capsule at the bottom. The decoder walks back up: each step fuses a long
//! skip from the matching encoder stage, refines with a 3x3 convolution at
//! the current (low) resolution, then upsamples bilinearly. Pixel attention
//! and a 1x1 classifier run at 1/2 resolution and the logits are restored to
//! the input size bilinearly.
//!
//! Eval-mode forwards run on a non-recording tape: no backward steps are
//! retained, and intermediate activations free as soon as their last
//! consumer has run, so peak memory is a small constant number of live
//! feature maps (the trunk plus the three skip sources).

use tinyseg_core::blocks::fe::{FeConfig, FeatureEnhance};
use tinyseg_core::blocks::ldb::{DilatedBottleneck, LdbConfig};
use tinyseg_core::blocks::pa::{PaConfig, PixelAttention};
use tinyseg_core::blocks::transformer::TransformerBlock;
use tinyseg_core::blocks::{BatchNorm2d, Conv2d, ConvBn, Forward, Mode, Tally};
use tinyseg_core::error::{Error, Result};
use tinyseg_core::params::{ParamStore, ParamValues};
use tinyseg_core::tensor::tape::{GradTape, Value};
use tinyseg_core::tensor::{ConvSpec, Tensor};

use crate::config::{ModelConfig, SkipKind};

/// Halves resolution while adding channels: a strided 3x3 convolution
/// provides the new channels, a 2x2 max pool carries the old ones forward,
/// and the concatenation is normalized and rectified.
struct Downsample {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl Downsample {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Downsample> {
        let conv = Conv2d::new(
            store,
            &format!("{name}.conv"),
            ConvSpec::new(cin, cout - cin, (3, 3)).stride((2, 2)).padding((1, 1)),
        )?;
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), cout)?;
        Ok(Downsample { conv, bn })
    }

    fn forward(&self, cx: &mut Forward, x: &Value) -> Result<Value> {
        let new = self.conv.forward(cx, x)?;
        let old = cx.tape.max_pool2d(x, (2, 2))?;
        let y = cx.tape.concat_channels(&[&new, &old])?;
        let y = self.bn.forward(cx, &y)?;
        Ok(cx.tape.relu(&y))
    }

    fn tally(&self, h: usize, w: usize, t: &mut Tally) -> Result<(usize, usize)> {
        let (oh, ow) = self.conv.tally(h, w, t)?;
        self.bn.tally(t);
        Ok((oh, ow))
    }
}

/// One long skip connection from an encoder stage into the decoder trunk.
enum SkipPath {
    Off,
    Plain(Conv2d),
    Enhanced(FeatureEnhance),
}

impl SkipPath {
    fn new(
        store: &mut ParamStore,
        name: &str,
        kind: SkipKind,
        channels: usize,
        fe_reduction: usize,
    ) -> Result<SkipPath> {
        Ok(match kind {
            SkipKind::Off => SkipPath::Off,
            SkipKind::Plain => SkipPath::Plain(Conv2d::new(
                store,
                name,
                ConvSpec::new(channels, channels, (1, 1)).bias(true),
            )?),
            SkipKind::Enhanced => SkipPath::Enhanced(FeatureEnhance::new(
                store,
                name,
                FeConfig::new(channels, fe_reduction),
            )?),
        })
    }

    fn fuse(&self, cx: &mut Forward, trunk: &Value, source: &Value) -> Result<Value> {
        match self {
            SkipPath::Off => Ok(trunk.clone()),
            SkipPath::Plain(conv) => {
                let p = conv.forward(cx, source)?;
                cx.tape.add(trunk, &p)
            }
            SkipPath::Enhanced(fe) => {
                let e = fe.forward(cx, source)?;
                cx.tape.add(trunk, &e)
            }
        }
    }

    fn tally(&self, h: usize, w: usize, t: &mut Tally) -> Result<()> {
        match self {
            SkipPath::Off => Ok(()),
            SkipPath::Plain(conv) => conv.tally(h, w, t).map(|_| ()),
            SkipPath::Enhanced(fe) => fe.tally(h, w, t),
        }
    }
}

pub struct SegModel {
    cfg: ModelConfig,
    stem: ConvBn,
    stage1: Vec<DilatedBottleneck>,
    down1: Downsample,
    stage2: Vec<DilatedBottleneck>,
    down2: Downsample,
    stage3: Vec<DilatedBottleneck>,
    capsule: Option<TransformerBlock>,
    skip1: SkipPath,
    skip2: SkipPath,
    skip3: SkipPath,
    dec1: ConvBn,
    dec2: ConvBn,
    pa: Option<PixelAttention>,
    head: Conv2d,
}

fn stage(
    store: &mut ParamStore,
    name: &str,
    channels: usize,
    dilations: &[usize],
) -> Result<Vec<DilatedBottleneck>> {
    dilations
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            DilatedBottleneck::new(store, &format!("{name}.{i}"), LdbConfig::new(channels, d))
        })
        .collect()
}

impl SegModel {
    pub fn new(store: &mut ParamStore, cfg: ModelConfig) -> Result<SegModel> {
        cfg.validate()?;
        let (c1, c2, c3) = cfg.channels;
        let (n1, n2, _) = cfg.blocks;
        let stem = ConvBn::new(
            store,
            "stem",
            ConvSpec::new(3, c1, (3, 3)).stride((2, 2)).padding((1, 1)),
            true,
        )?;
        let stage1 = stage(store, "s1", c1, &cfg.dilations[..n1])?;
        let down1 = Downsample::new(store, "d1", c1, c2)?;
        let stage2 = stage(store, "s2", c2, &cfg.dilations[n1..n1 + n2])?;
        let down2 = Downsample::new(store, "d2", c2, c3)?;
        let stage3 = stage(store, "s3", c3, &cfg.dilations[n1 + n2..])?;
        let capsule = if cfg.transformer {
            Some(TransformerBlock::new(store, "et", cfg.emha())?)
        } else {
            None
        };
        let skip3 = SkipPath::new(store, "l3", cfg.skips[2], c3, cfg.fe_reduction)?;
        let dec1 = ConvBn::new(
            store,
            "dec1",
            ConvSpec::new(c3, c2, (3, 3)).padding((1, 1)),
            true,
        )?;
        let skip2 = SkipPath::new(store, "l2", cfg.skips[1], c2, cfg.fe_reduction)?;
        let dec2 = ConvBn::new(
            store,
            "dec2",
            ConvSpec::new(c2, c1, (3, 3)).padding((1, 1)),
            true,
        )?;
        let skip1 = SkipPath::new(store, "l1", cfg.skips[0], c1, cfg.fe_reduction)?;
        let pa = if cfg.pixel_attention {
            Some(PixelAttention::new(store, "pa", PaConfig::new(c1))?)
        } else {
            None
        };
        let head = Conv2d::new(
            store,
            "head",
            ConvSpec::new(c1, cfg.num_classes, (1, 1)).bias(true),
        )?;
        Ok(SegModel {
            cfg,
            stem,
            stage1,
            down1,
            stage2,
            down2,
            stage3,
            capsule,
            skip1,
            skip2,
            skip3,
            dec1,
            dec2,
            pa,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Full pipeline on `[N, 3, H, W]` images, producing `[N, K, H, W]`
    /// logits at the input resolution.
    pub fn forward(&self, cx: &mut Forward, images: &Value) -> Result<Value> {
        let (_, c, h, w) = images.tensor().dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("expected 3 input channels, got {c}")));
        }
        self.cfg.check_resolution(h, w)?;

        let mut t = self.stem.forward(cx, images)?;
        for b in &self.stage1 {
            t = b.forward(cx, &t)?;
        }
        let s1 = t;
        let mut t = self.down1.forward(cx, &s1)?;
        for b in &self.stage2 {
            t = b.forward(cx, &t)?;
        }
        let s2 = t;
        let mut t = self.down2.forward(cx, &s2)?;
        for b in &self.stage3 {
            t = b.forward(cx, &t)?;
        }
        let s3 = t;

        let t = match &self.capsule {
            Some(cap) => cap.forward(cx, &s3)?,
            None => s3.clone(),
        };
        let t = self.skip3.fuse(cx, &t, &s3)?;

        let t = self.dec1.forward(cx, &t)?;
        let t = cx.tape.resize_bilinear(&t, h / 4, w / 4)?;
        let t = self.skip2.fuse(cx, &t, &s2)?;

        let t = self.dec2.forward(cx, &t)?;
        let t = cx.tape.resize_bilinear(&t, h / 2, w / 2)?;
        let t = self.skip1.fuse(cx, &t, &s1)?;

        let t = match &self.pa {
            Some(pa) => pa.forward(cx, &t)?,
            None => t,
        };
        let logits = self.head.forward(cx, &t)?;
        cx.tape.resize_bilinear(&logits, h, w)
    }

    /// Eval-mode prediction on a non-recording tape.
    pub fn infer(&self, store: &ParamStore, images: &Tensor) -> Result<Tensor> {
        let mut tape = GradTape::new(false);
        let values = ParamValues::register(store, &mut tape);
        let mut cx = Forward::new(&mut tape, &values, Mode::Eval);
        let x = cx.tape.constant(images.clone());
        let y = self.forward(&mut cx, &x)?;
        Ok(y.tensor().clone())
    }

    /// Per-layer parameter and MAC rows for one image at `h` x `w`, walking
    /// the same structure `forward` executes.
    pub fn tally(&self, h: usize, w: usize) -> Result<Tally> {
        self.cfg.check_resolution(h, w)?;
        let mut t = Tally::new();
        let (h2, w2) = self.stem.tally(h, w, &mut t)?;
        for b in &self.stage1 {
            b.tally(h2, w2, &mut t)?;
        }
        let (h4, w4) = self.down1.tally(h2, w2, &mut t)?;
        for b in &self.stage2 {
            b.tally(h4, w4, &mut t)?;
        }
        let (h8, w8) = self.down2.tally(h4, w4, &mut t)?;
        for b in &self.stage3 {
            b.tally(h8, w8, &mut t)?;
        }
        if let Some(cap) = &self.capsule {
            cap.tally(h8, w8, &mut t);
        }
        self.skip3.tally(h8, w8, &mut t)?;
        self.dec1.tally(h8, w8, &mut t)?;
        self.skip2.tally(h4, w4, &mut t)?;
        self.dec2.tally(h4, w4, &mut t)?;
        self.skip1.tally(h2, w2, &mut t)?;
        if let Some(pa) = &self.pa {
            pa.tally(h2, w2, &mut t)?;
        }
        self.head.tally(h2, w2, &mut t)?;
        Ok(t)
    }
}

/// Builds the network and its parameter store; two calls with the same seed
/// produce bit-identical weights.
pub fn build(cfg: &ModelConfig, seed: u64) -> Result<(SegModel, ParamStore)> {
    let mut store = ParamStore::new(seed);
    let net = SegModel::new(&mut store, cfg.clone())?;
    Ok((net, store))
}
