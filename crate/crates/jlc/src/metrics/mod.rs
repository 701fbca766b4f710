//! Quality metrics, RD curves, BD-rate and the JND bitrate-saving metric.

pub mod bd;
pub mod interp;
pub mod quality;
pub mod rd;

pub use bd::{bd_rate, bpp_at_quality, bs_jnd};
pub use interp::MonotoneCubic;
pub use quality::{jnd_quality_of_pair, psnr};
pub use rd::{CurvePoint, JndLabel, QualityMetric, RdCurve, RdPoint, RdResults};
