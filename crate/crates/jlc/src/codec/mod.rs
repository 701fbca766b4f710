//! The learnable codec: transforms, quantizer, entropy model, bitstream.

pub mod arch;
pub mod bitstream;
pub mod entropy;
pub mod range_coder;
pub mod transforms;
pub mod types;

pub use arch::{ArchDescriptor, BoundCodec, CodecParams, Nonlinearity};
pub use bitstream::{decode_bitstream, encode_bitstream, Bitstream, BitstreamHeader};
pub use entropy::{
    estimate_rate_bpp, latent_likelihood, likelihood_g, rate_bpp_g, BoundEntropy, EntropyModel,
    LIKELIHOOD_FLOOR,
};
pub use transforms::{analyze, analyze_g, check_divisible, quantize, quantize_noise_g, synthesize, synthesize_g};
pub use types::{ImageTensor, LatentTensor, QuantizeMode, QuantizedLatent};
