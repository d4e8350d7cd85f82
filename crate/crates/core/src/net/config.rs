use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalization applied inside the residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Per-position normalization across channels.
    #[default]
    Aln,
    /// Per-channel normalization over spatial positions (batch of one).
    Batch,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aln" => Ok(Self::Aln),
            "batch" => Ok(Self::Batch),
            other => Err(Error::InvalidArgument(format!("unknown normalization {other:?}, expected aln or batch"))),
        }
    }
}

/// Architecture of the multi-branch attention network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MBANetConfig {
    /// Number of frequency frames `L` (and branches).
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub encoder_depth: usize,
    pub aspp_dilations: Vec<usize>,
    pub se_reduction: usize,
    pub leaky_slope: f64,
    pub fu_channels: usize,
    /// Factor on the Kaiming std of the fusion unit's last convolution. The
    /// branch outputs are unnormalized, and at full Kaiming scale most fused
    /// pre-activations land deep in the sigmoid's flat tails.
    pub fusion_init_scale: f64,
    pub norm_eps: f64,
    pub norm: NormKind,
    /// `false` replaces the branch attention by the identity.
    pub branch_attention: bool,
    /// `false` runs one branch over all `L` noise channels at once.
    pub multi_branch: bool,
}

impl Default for MBANetConfig {
    fn default() -> Self {
        Self {
            frames: 4,
            height: 32,
            width: 32,
            base_channels: 16,
            encoder_depth: 3,
            aspp_dilations: vec![1, 2, 4],
            se_reduction: 4,
            leaky_slope: 1e-4,
            fu_channels: 32,
            fusion_init_scale: 0.01,
            norm_eps: 1e-5,
            norm: NormKind::Aln,
            branch_attention: true,
            multi_branch: true,
        }
    }
}

impl MBANetConfig {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.frames == 0 {
            return bad("network needs at least one frame".into());
        }
        if self.encoder_depth == 0 || self.encoder_depth > 8 {
            return bad(format!("encoder depth {} out of range 1..=8", self.encoder_depth));
        }
        let step = 1usize << self.encoder_depth;
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(step) || !self.width.is_multiple_of(step) {
            return bad(format!(
                "grid {}x{} not divisible by 2^{}",
                self.height, self.width, self.encoder_depth
            ));
        }
        if self.aspp_dilations.is_empty() || self.aspp_dilations.contains(&0) {
            return bad("ASPP dilations must be a nonempty list of positive integers".into());
        }
        if self.base_channels == 0 || self.fu_channels == 0 || self.se_reduction == 0 {
            return bad("channel counts and SE reduction must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return bad(format!("leaky slope {} must be finite and nonnegative", self.leaky_slope));
        }
        if !(self.fusion_init_scale.is_finite() && self.fusion_init_scale >= 0.0) {
            return bad(format!("fusion init scale {} must be finite and nonnegative", self.fusion_init_scale));
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return bad(format!("normalization epsilon {} must be positive", self.norm_eps));
        }
        Ok(())
    }

    /// Channel width at encoder level `i` (0 is the stem).
    pub fn width_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn branch_count(&self) -> usize {
        if self.multi_branch {
            self.frames
        } else {
            1
        }
    }
}
