//! The VGG and ResNet variants and their reflective extensions.

mod config;
mod model;

pub use config::{
    default_layer, scaled_channels, AttachSpec, ConvRow, Family, ModelConfig, FEATURE_WIDTH,
    RESNET_BLOCKS, RESNET_STEM, VGG_CONVS,
};
pub use model::{BnState, ClassifierModel, ForwardOutput, LayerKind, LayerSpec, Role, BN_MOMENTUM};

use rand::Rng;

use crate::engine::Scalar;
use crate::error::{Error, Result};

pub fn build_vgg_variant<T: Scalar, R: Rng>(
    config: &ModelConfig,
    rng: &mut R,
) -> Result<ClassifierModel<T>> {
    if config.family != Family::Vgg {
        return Err(Error::Config("build_vgg_variant needs family = vgg".into()));
    }
    ClassifierModel::build(config, rng)
}

pub fn build_resnet_variant<T: Scalar, R: Rng>(
    config: &ModelConfig,
    rng: &mut R,
) -> Result<ClassifierModel<T>> {
    if config.family != Family::Resnet {
        return Err(Error::Config(
            "build_resnet_variant needs family = resnet".into(),
        ));
    }
    ClassifierModel::build(config, rng)
}

/// Freshly initialized reflective network: `base_config` plus one branch per attach point.
pub fn build_reflective_variant<T: Scalar, R: Rng>(
    base_config: &ModelConfig,
    attach: Vec<AttachSpec>,
    rng: &mut R,
) -> Result<ClassifierModel<T>> {
    if attach.is_empty() {
        return Err(Error::Config(
            "a reflective variant needs at least one attach point".into(),
        ));
    }
    ClassifierModel::build(&base_config.base().with_attach(attach), rng)
}
