//! Codec architecture descriptor and parameter container.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    LeakyRelu,
    Gdn,
}

/// Shape of the transform pair. `downsampling` must be a power of two in
/// {4, 8, 16}; the analysis transform uses log2(downsampling) stride-2 conv
/// stages, the synthesis transform mirrors them with transposed convs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchDescriptor {
    pub latent_channels: usize,
    pub hidden_channels: usize,
    pub downsampling: usize,
    pub kernel_size: usize,
    pub nonlinearity: Nonlinearity,
}

impl Default for ArchDescriptor {
    fn default() -> Self {
        ArchDescriptor {
            latent_channels: 64,
            hidden_channels: 48,
            downsampling: 8,
            kernel_size: 5,
            nonlinearity: Nonlinearity::LeakyRelu,
        }
    }
}

impl ArchDescriptor {
    pub fn validate(&self) -> Result<()> {
        if ![4, 8, 16].contains(&self.downsampling) {
            return Err(Error::Config(format!(
                "downsampling must be 4, 8 or 16, got {}",
                self.downsampling
            )));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size < 3 {
            return Err(Error::Config(format!(
                "kernel_size must be odd and >= 3, got {}",
                self.kernel_size
            )));
        }
        if self.latent_channels == 0 || self.hidden_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.downsampling.trailing_zeros() as usize
    }

    /// Channel counts along the analysis path: 3 -> hidden.. -> latent.
    fn analysis_channels(&self) -> Vec<(usize, usize)> {
        let stages = self.stages();
        (0..stages)
            .map(|i| {
                let cin = if i == 0 { 3 } else { self.hidden_channels };
                let cout = if i + 1 == stages {
                    self.latent_channels
                } else {
                    self.hidden_channels
                };
                (cin, cout)
            })
            .collect()
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Diagonal divisive-normalization parameters, one pair of vectors per stage.
/// Effective values are beta = softplus(beta_raw) + 1e-6, gamma = softplus(gamma_raw).
#[derive(Clone, Debug, PartialEq)]
pub struct GdnLayer {
    pub beta_raw: Tensor,
    pub gamma_raw: Tensor,
}

impl GdnLayer {
    fn init(channels: usize) -> Self {
        // softplus^-1(1.0) and softplus^-1(0.1)
        GdnLayer {
            beta_raw: Tensor::full(&[channels], 0.5413248546129181),
            gamma_raw: Tensor::full(&[channels], -2.252168137865799),
        }
    }
}

/// All learnable weights of the codec transforms.
///
/// The per-channel latent gains act as learnable quantization step sizes:
/// `analysis_gain` scales the latent up so integer rounding is informative
/// from the first step, `synthesis_gain` scales it back down on the way in.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecParams {
    pub arch: ArchDescriptor,
    pub analysis: Vec<ConvLayer>,
    pub analysis_nl: Vec<GdnLayer>,
    pub analysis_gain: Tensor,
    pub synthesis: Vec<ConvLayer>,
    pub synthesis_nl: Vec<GdnLayer>,
    pub synthesis_gain: Tensor,
}

impl CodecParams {
    /// Seeded He-style initialization.
    pub fn init(arch: ArchDescriptor, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = arch.kernel_size;
        let chans = arch.analysis_channels();

        let analysis = chans
            .iter()
            .map(|&(cin, cout)| {
                let bound = (1.0 / (cin * k * k) as f64).sqrt();
                ConvLayer {
                    weight: Tensor::rand_uniform(&[cout, cin, k, k], bound, &mut rng),
                    bias: Tensor::rand_uniform(&[cout], bound, &mut rng),
                }
            })
            .collect::<Vec<_>>();

        // synthesis mirrors analysis in reverse: latent -> hidden.. -> 3,
        // transposed-conv weight layout is [in_c, out_c, k, k]
        let synthesis = chans
            .iter()
            .rev()
            .map(|&(cin, cout)| {
                let bound = (1.0 / (cout * k * k) as f64).sqrt();
                ConvLayer {
                    weight: Tensor::rand_uniform(&[cout, cin, k, k], bound, &mut rng),
                    bias: Tensor::rand_uniform(&[cin], bound, &mut rng),
                }
            })
            .collect::<Vec<_>>();

        let (analysis_nl, synthesis_nl) = match arch.nonlinearity {
            Nonlinearity::LeakyRelu => (Vec::new(), Vec::new()),
            Nonlinearity::Gdn => {
                // one normalization after every stage except the last
                let a = chans[..chans.len() - 1]
                    .iter()
                    .map(|&(_, cout)| GdnLayer::init(cout))
                    .collect();
                let s = chans
                    .iter()
                    .rev()
                    .take(chans.len() - 1)
                    .map(|&(cin, _)| GdnLayer::init(cin))
                    .collect();
                (a, s)
            }
        };

        Ok(CodecParams {
            analysis_gain: Tensor::full(&[arch.latent_channels], 4.0),
            synthesis_gain: Tensor::full(&[arch.latent_channels], 0.25),
            arch,
            analysis,
            analysis_nl,
            synthesis,
            synthesis_nl,
        })
    }

    /// Checks that layer shapes are mutually consistent with the descriptor
    /// (analysis and synthesis mirror each other).
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let chans = self.arch.analysis_channels();
        let k = self.arch.kernel_size;
        if self.analysis.len() != chans.len() || self.synthesis.len() != chans.len() {
            return Err(Error::Config("stage count does not match descriptor".into()));
        }
        for (i, (&(cin, cout), layer)) in chans.iter().zip(&self.analysis).enumerate() {
            if layer.weight.shape() != [cout, cin, k, k] || layer.bias.shape() != [cout] {
                return Err(Error::Config(format!("analysis stage {i} has inconsistent shapes")));
            }
        }
        for (i, (&(cin, cout), layer)) in chans.iter().rev().zip(&self.synthesis).enumerate() {
            if layer.weight.shape() != [cout, cin, k, k] || layer.bias.shape() != [cin] {
                return Err(Error::Config(format!("synthesis stage {i} has inconsistent shapes")));
            }
        }
        let expect_nl = match self.arch.nonlinearity {
            Nonlinearity::LeakyRelu => 0,
            Nonlinearity::Gdn => chans.len() - 1,
        };
        if self.analysis_nl.len() != expect_nl || self.synthesis_nl.len() != expect_nl {
            return Err(Error::Config("normalization layer count mismatch".into()));
        }
        if self.analysis_gain.shape() != [self.arch.latent_channels]
            || self.synthesis_gain.shape() != [self.arch.latent_channels]
        {
            return Err(Error::Config("latent gain shape mismatch".into()));
        }
        Ok(())
    }

    /// Canonical flat view over all parameter tensors. The order defines the
    /// serialization layout and the optimizer slot assignment.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.analysis {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for n in &self.analysis_nl {
            out.push(&n.beta_raw);
            out.push(&n.gamma_raw);
        }
        out.push(&self.analysis_gain);
        for l in &self.synthesis {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for n in &self.synthesis_nl {
            out.push(&n.beta_raw);
            out.push(&n.gamma_raw);
        }
        out.push(&self.synthesis_gain);
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.analysis {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for n in &mut self.analysis_nl {
            out.push(&mut n.beta_raw);
            out.push(&mut n.gamma_raw);
        }
        out.push(&mut self.analysis_gain);
        for l in &mut self.synthesis {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for n in &mut self.synthesis_nl {
            out.push(&mut n.beta_raw);
            out.push(&mut n.gamma_raw);
        }
        out.push(&mut self.synthesis_gain);
        out
    }

    /// Registers every parameter on the graph, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundCodec {
        let reg = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundCodec {
            analysis: self
                .analysis
                .iter()
                .map(|l| BoundConv {
                    weight: reg(g, &l.weight),
                    bias: reg(g, &l.bias),
                })
                .collect(),
            analysis_nl: self
                .analysis_nl
                .iter()
                .map(|n| BoundGdn {
                    beta_raw: reg(g, &n.beta_raw),
                    gamma_raw: reg(g, &n.gamma_raw),
                })
                .collect(),
            synthesis: self
                .synthesis
                .iter()
                .map(|l| BoundConv {
                    weight: reg(g, &l.weight),
                    bias: reg(g, &l.bias),
                })
                .collect(),
            synthesis_nl: self
                .synthesis_nl
                .iter()
                .map(|n| BoundGdn {
                    beta_raw: reg(g, &n.beta_raw),
                    gamma_raw: reg(g, &n.gamma_raw),
                })
                .collect(),
            analysis_gain: reg(g, &self.analysis_gain),
            synthesis_gain: reg(g, &self.synthesis_gain),
            kernel_size: self.arch.kernel_size,
            nonlinearity: self.arch.nonlinearity,
        }
    }
}

#[derive(Clone, Copy)]
pub struct BoundConv {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy)]
pub struct BoundGdn {
    pub beta_raw: Var,
    pub gamma_raw: Var,
}

/// Graph-registered codec parameters for one forward pass.
pub struct BoundCodec {
    pub analysis: Vec<BoundConv>,
    pub analysis_nl: Vec<BoundGdn>,
    pub synthesis: Vec<BoundConv>,
    pub synthesis_nl: Vec<BoundGdn>,
    pub analysis_gain: Var,
    pub synthesis_gain: Var,
    pub kernel_size: usize,
    pub nonlinearity: Nonlinearity,
}

impl BoundCodec {
    /// Same canonical order as [`CodecParams::param_tensors`].
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.analysis {
            out.push(l.weight);
            out.push(l.bias);
        }
        for n in &self.analysis_nl {
            out.push(n.beta_raw);
            out.push(n.gamma_raw);
        }
        out.push(self.analysis_gain);
        for l in &self.synthesis {
            out.push(l.weight);
            out.push(l.bias);
        }
        for n in &self.synthesis_nl {
            out.push(n.beta_raw);
            out.push(n.gamma_raw);
        }
        out.push(self.synthesis_gain);
        out
    }
}
