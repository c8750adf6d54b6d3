use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vgg,
    Resnet,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Vgg => "vgg",
            Family::Resnet => "resnet",
        })
    }
}

/// Where an explanation branch joins the network.
///
/// `layer` is a 0-based conv ordinal for VGG and a 1-based block index for ResNet (the
/// explanation is taken from, and appended to, the first conv of that block).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttachSpec {
    pub layer: usize,
    pub depth: usize,
    /// Output channels of the two branch convs; defaults to `[depth, depth]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<[usize; 2]>,
}

impl AttachSpec {
    pub fn new(layer: usize, depth: usize) -> Self {
        Self {
            layer,
            depth,
            widths: None,
        }
    }

    pub fn branch_widths(&self) -> [usize; 2] {
        self.widths.unwrap_or([self.depth, self.depth])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub n_classes: usize,
    pub width_multiplier: f64,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default)]
    pub explanation_attach: Vec<AttachSpec>,
}

fn default_in_channels() -> usize {
    3
}

impl ModelConfig {
    pub fn new(family: Family, n_classes: usize, width_multiplier: f64) -> Self {
        Self {
            family,
            n_classes,
            width_multiplier,
            in_channels: 3,
            explanation_attach: Vec::new(),
        }
    }

    pub fn with_attach(mut self, attach: Vec<AttachSpec>) -> Self {
        self.explanation_attach = attach;
        self
    }

    pub fn is_reflective(&self) -> bool {
        !self.explanation_attach.is_empty()
    }

    /// The same network without explanation branches.
    pub fn base(&self) -> Self {
        Self {
            explanation_attach: Vec::new(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            )));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(Error::Config(format!(
                "width_multiplier must lie in (0, 1], got {}",
                self.width_multiplier
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        let mut seen = Vec::new();
        for a in &self.explanation_attach {
            if a.depth == 0 || a.branch_widths().contains(&0) {
                return Err(Error::Config(format!(
                    "attach point {a:?} has a zero width"
                )));
            }
            if seen.contains(&a.layer) {
                return Err(Error::Config(format!("layer {} attached twice", a.layer)));
            }
            seen.push(a.layer);
        }
        Ok(())
    }

    pub fn channels(&self, count: usize) -> usize {
        scaled_channels(count, self.width_multiplier)
    }
}

/// Channel count of a full-width layer after applying the width multiplier.
pub fn scaled_channels(count: usize, width_multiplier: f64) -> usize {
    ((width_multiplier * count as f64).round() as usize).max(8)
}

/// One conv of the reference tables: (input channels, output channels, stride, kernel).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvRow {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub kernel: usize,
}

const fn row(in_ch: usize, out_ch: usize, stride: usize) -> ConvRow {
    ConvRow {
        in_ch,
        out_ch,
        stride,
        kernel: 3,
    }
}

/// VGG variant: six stride-2 convs, then a dense layer from 512 features.
pub const VGG_CONVS: [ConvRow; 6] = [
    row(3, 32, 2),
    row(32, 64, 2),
    row(64, 128, 2),
    row(128, 256, 2),
    row(256, 512, 2),
    row(512, 512, 2),
];

/// ResNet variant stem.
pub const RESNET_STEM: ConvRow = row(3, 64, 1);

/// ResNet variant blocks (two convs each); a 1x1 projection of the block input is added
/// to each block output.
pub const RESNET_BLOCKS: [[ConvRow; 2]; 4] = [
    [row(64, 64, 1), row(64, 128, 1)],
    [row(128, 128, 2), row(128, 256, 1)],
    [row(256, 256, 2), row(256, 512, 1)],
    [row(512, 512, 2), row(512, 512, 1)],
];

pub const FEATURE_WIDTH: usize = 512;

/// Explanation layer that reproduces the default-setup rows of the ablation tables for
/// each family.
pub fn default_layer(family: Family) -> usize {
    match family {
        Family::Vgg => 2,
        Family::Resnet => 3,
    }
}
