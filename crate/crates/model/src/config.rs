//! Declarative network configuration and the standard variants.
//!
//! A [`ModelConfig`] fixes the whole topology: three bottleneck stages with
//! per-block dilations, an optional transformer capsule at the bottom, three
//! long skip connections (each off, a plain 1x1 projection, or a feature
//! enhancement module), optional pixel attention, and a classifier. The
//! ablation grid toggles those pieces one at a time around a shared
//! baseline, so parameter counts grow strictly as modules are added.

use tinyseg_core::blocks::transformer::EmhaConfig;
use tinyseg_core::error::{Error, Result};

/// How one long skip connection joins the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipKind {
    Off,
    /// 1x1 channel-matching projection, then addition.
    Plain,
    /// Feature enhancement module, then addition.
    Enhanced,
}

impl SkipKind {
    pub fn parse(s: &str) -> Result<SkipKind> {
        match s {
            "off" => Ok(SkipKind::Off),
            "plain" => Ok(SkipKind::Plain),
            "fe" => Ok(SkipKind::Enhanced),
            other => Err(Error::config(format!(
                "unknown skip kind {other:?}, expected off, plain, or fe"
            ))),
        }
    }

    pub fn dump(&self) -> &'static str {
        match self {
            SkipKind::Off => "off",
            SkipKind::Plain => "plain",
            SkipKind::Enhanced => "fe",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Stage widths; stage 1 runs at 1/2 resolution, stage 2 at 1/4,
    /// stage 3 at 1/8.
    pub channels: (usize, usize, usize),
    /// Bottleneck count per stage.
    pub blocks: (usize, usize, usize),
    /// One dilation per bottleneck, stages concatenated in order.
    pub dilations: Vec<usize>,
    pub transformer: bool,
    pub heads: usize,
    /// Attention segments per image.
    pub segments: usize,
    pub mlp_ratio: usize,
    /// Skip connections L1 (from stage 1), L2 (stage 2), L3 (stage 3).
    pub skips: [SkipKind; 3],
    /// Channel reduction inside feature enhancement gates.
    pub fe_reduction: usize,
    pub pixel_attention: bool,
    /// (height, width) the MAC report is computed at.
    pub resolution: (usize, usize),
}

/// Cycles 1, 2, 4, 8 across the final stage so receptive fields grow without
/// gridding artifacts from repeated identical dilations.
fn stage3_dilations(n: usize) -> Vec<usize> {
    (0..n).map(|i| 1usize << (i % 4)).collect()
}

impl ModelConfig {
    /// The full network: every module enabled, sized for 19 classes.
    pub fn full() -> ModelConfig {
        let blocks = (3, 3, 14);
        let mut dilations = vec![1; blocks.0 + blocks.1];
        dilations.extend(stage3_dilations(blocks.2));
        ModelConfig {
            num_classes: 19,
            channels: (32, 64, 128),
            blocks,
            dilations,
            transformer: true,
            heads: 8,
            segments: 4,
            mlp_ratio: 2,
            skips: [SkipKind::Enhanced; 3],
            fe_reduction: 16,
            pixel_attention: true,
            resolution: (512, 1024),
        }
    }

    /// Desk-scale variant used by the end-to-end tests: same topology, small
    /// enough that finite-difference checks and CPU training are tractable.
    pub fn tiny(num_classes: usize) -> ModelConfig {
        ModelConfig {
            num_classes,
            channels: (8, 16, 32),
            blocks: (1, 1, 2),
            dilations: vec![1, 1, 1, 2],
            transformer: true,
            heads: 8,
            segments: 4,
            mlp_ratio: 2,
            skips: [SkipKind::Enhanced; 3],
            fe_reduction: 8,
            pixel_attention: true,
            resolution: (64, 64),
        }
    }

    /// Ablation grid rows. Group A adds plain skips to the baseline, group B
    /// adds enhanced skips, group C adds the transformer, then enhanced
    /// skips, then pixel attention.
    pub fn ablation(row: &str) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::full();
        cfg.transformer = false;
        cfg.skips = [SkipKind::Off; 3];
        cfg.pixel_attention = false;
        match row.to_ascii_lowercase().as_str() {
            "baseline" => {}
            "a1" => cfg.skips[0] = SkipKind::Plain,
            "a2" => cfg.skips = [SkipKind::Plain, SkipKind::Plain, SkipKind::Off],
            "a3" => cfg.skips = [SkipKind::Plain; 3],
            "b1" => cfg.skips[0] = SkipKind::Enhanced,
            "b2" => cfg.skips = [SkipKind::Enhanced, SkipKind::Enhanced, SkipKind::Off],
            "b3" => cfg.skips = [SkipKind::Enhanced; 3],
            "c1" => cfg.transformer = true,
            "c2" => {
                cfg.transformer = true;
                cfg.skips = [SkipKind::Enhanced; 3];
            }
            "c3" => return Ok(ModelConfig::full()),
            other => {
                return Err(Error::config(format!(
                    "unknown ablation row {other:?}, expected baseline, a1-a3, b1-b3, or c1-c3"
                )))
            }
        }
        Ok(cfg)
    }

    pub const ABLATION_ROWS: [&'static str; 10] =
        ["baseline", "a1", "a2", "a3", "b1", "b2", "b3", "c1", "c2", "c3"];

    pub fn emha(&self) -> EmhaConfig {
        EmhaConfig {
            model_dim: self.channels.2,
            heads: self.heads,
            segments: self.segments,
            mlp_ratio: self.mlp_ratio,
        }
    }

    /// Source channel width of skip L1/L2/L3 (index 0/1/2).
    pub fn skip_channels(&self, i: usize) -> usize {
        [self.channels.0, self.channels.1, self.channels.2][i]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let (c1, c2, c3) = self.channels;
        for c in [c1, c2, c3] {
            if c == 0 || c % 2 != 0 {
                return Err(Error::config(format!(
                    "stage widths must be even and positive, got {:?}",
                    self.channels
                )));
            }
        }
        if c2 <= c1 || c3 <= c2 {
            return Err(Error::config(format!(
                "stage widths must increase so downsample units can add channels, got {:?}",
                self.channels
            )));
        }
        let (n1, n2, n3) = self.blocks;
        if n1 == 0 || n2 == 0 || n3 == 0 {
            return Err(Error::config(format!(
                "every stage needs at least one block, got {:?}",
                self.blocks
            )));
        }
        if self.dilations.len() != n1 + n2 + n3 {
            return Err(Error::config(format!(
                "{} dilations for {} blocks",
                self.dilations.len(),
                n1 + n2 + n3
            )));
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::config("dilations must be >= 1".to_string()));
        }
        if self.transformer {
            self.emha().validate()?;
        }
        for (i, kind) in self.skips.iter().enumerate() {
            if *kind == SkipKind::Enhanced && self.skip_channels(i) % self.fe_reduction != 0 {
                return Err(Error::config(format!(
                    "skip L{} width {} not divisible by enhancement reduction {}",
                    i + 1,
                    self.skip_channels(i),
                    self.fe_reduction
                )));
            }
        }
        self.check_resolution(self.resolution.0, self.resolution.1)
    }

    /// Input extents the network can process: three 2x downsamples, and the
    /// bottom token count must split into attention segments.
    pub fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} not supported: height and width must be positive multiples of 8"
            )));
        }
        if self.transformer {
            let tokens = (h / 8) * (w / 8);
            if tokens % self.segments != 0 {
                return Err(Error::shape(format!(
                    "input {h}x{w} not supported: bottom token count {tokens} must be a \
                     multiple of the {} attention segments",
                    self.segments
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_variants_validate() {
        ModelConfig::full().validate().unwrap();
        ModelConfig::tiny(2).validate().unwrap();
        ModelConfig::tiny(19).validate().unwrap();
        for row in ModelConfig::ABLATION_ROWS {
            ModelConfig::ablation(row).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn dilation_schedule_cycles_powers_of_two() {
        let cfg = ModelConfig::full();
        assert_eq!(cfg.dilations.len(), 3 + 3 + 14);
        assert_eq!(&cfg.dilations[..6], &[1; 6]);
        assert_eq!(
            &cfg.dilations[6..],
            &[1, 2, 4, 8, 1, 2, 4, 8, 1, 2, 4, 8, 1, 2]
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ModelConfig::tiny(2);
        cfg.dilations.pop();
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::tiny(2);
        cfg.channels.2 = 30;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::tiny(2);
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::tiny(2);
        cfg.fe_reduction = 3;
        assert!(cfg.validate().is_err());

        assert!(ModelConfig::ablation("d1").is_err());
    }

    #[test]
    fn resolution_errors_name_the_required_multiples() {
        let cfg = ModelConfig::tiny(2);
        let err = cfg.check_resolution(20, 64).unwrap_err().to_string();
        assert!(err.contains("multiples of 8"), "{err}");
        // 24x24 passes divisibility but gives 9 tokens for 4 segments.
        let err = cfg.check_resolution(24, 24).unwrap_err().to_string();
        assert!(err.contains("segments"), "{err}");
        cfg.check_resolution(64, 64).unwrap();
    }
}
