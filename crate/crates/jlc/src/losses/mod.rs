//! Distortion definitions: baseline, pixel-wise, image-wise and
//! feature-wise JND losses, plus the RD objective.

pub mod distortion;
pub mod features;
pub mod jnd;

pub use distortion::{
    distortion, distortion_g, feasible_scales, min_size_for_scales, mse_g, msssim_g,
    msssim_metric, DistortionFamily, MSSSIM_WEIGHTS, MSSSIM_WINDOW,
};
pub use features::{extract_features, FeatureExtractor, FeatureStack, Provenance};
pub use jnd::{
    loss_fwl, loss_fwl_g, loss_iwl, loss_iwl_g, loss_pwl, loss_pwl_g, rd_loss, rd_loss_g,
    LossConfig, LossVariant, PAPER_LAMBDAS_MSE, PAPER_LAMBDAS_MSSSIM,
};
