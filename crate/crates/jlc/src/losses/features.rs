//! Fixed convolutional feature extractor for the feature-wise loss.
//!
//! The weights are frozen for the lifetime of a run: gradients flow through
//! the extractor to its input, never into the weights. Two provenances are
//! supported. `seeded_random:<seed>` builds deterministic random weights so
//! the artifact needs no downloads; `pretrained:<path>` loads weights from a
//! file in the format written by [`FeatureExtractor::save_weights`].

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::types::ImageTensor;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Pretrained,
    SeededRandom,
}

/// (in_c, out_c, kernel, stride) per conv layer; a tap is collected after
/// every layer's rectifier.
const LAYOUT: [(usize, usize, usize, usize); 3] = [(3, 16, 3, 1), (16, 32, 3, 2), (32, 64, 3, 2)];
const SLOPE: f64 = 0.2;
const WEIGHTS_MAGIC: [u8; 4] = *b"JLCF";

#[derive(Clone, Debug)]
struct FeatLayer {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    id: String,
    provenance: Provenance,
    layers: Vec<FeatLayer>,
}

/// Ordered per-tap feature maps.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    pub taps: Vec<Tensor>,
}

impl FeatureExtractor {
    /// Parse an extractor id: `seeded_random:<seed>` or `pretrained:<path>`.
    pub fn from_id(id: &str) -> Result<Self> {
        match id.split_once(':') {
            Some(("seeded_random", seed)) => {
                let seed: u64 = seed
                    .parse()
                    .map_err(|_| Error::Config(format!("bad extractor seed in id '{id}'")))?;
                Ok(Self::seeded_random(seed))
            }
            Some(("pretrained", path)) => Self::load_weights(Path::new(path)),
            _ => Err(Error::Config(format!(
                "feature extractor id '{id}' must be 'seeded_random:<seed>' or 'pretrained:<path>'"
            ))),
        }
    }

    pub fn seeded_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = LAYOUT
            .iter()
            .map(|&(cin, cout, k, stride)| {
                let bound = (2.0 / (cin * k * k) as f64).sqrt();
                FeatLayer {
                    weight: Tensor::rand_uniform(&[cout, cin, k, k], bound, &mut rng),
                    bias: Tensor::rand_uniform(&[cout], 0.05, &mut rng),
                    stride,
                }
            })
            .collect();
        FeatureExtractor {
            id: format!("seeded_random:{seed}"),
            provenance: Provenance::SeededRandom,
            layers,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn tap_count(&self) -> usize {
        self.layers.len()
    }

    /// Forward through the frozen layers, collecting one tap per stage.
    /// Weights enter the graph as constants, so only `x` receives gradients.
    pub fn forward_g(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        let mut taps = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            let w = g.constant(layer.weight.clone());
            let b = g.constant(layer.bias.clone());
            let pad = layer.weight.shape()[3] / 2;
            let conv = g.conv2d(cur, w, Some(b), layer.stride, pad, 1);
            cur = g.leaky_relu(conv, SLOPE);
            taps.push(cur);
        }
        taps
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&WEIGHTS_MAGIC);
        bytes.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for &d in l.weight.shape() {
                bytes.extend_from_slice(&(d as u32).to_le_bytes());
            }
            bytes.extend_from_slice(&(l.stride as u32).to_le_bytes());
            for v in l.weight.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            for v in l.bias.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load_weights(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::Format("not an extractor weights file".into()));
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                *d = r.u32()? as usize;
            }
            let stride = r.u32()? as usize;
            let wn: usize = dims.iter().product();
            let mut wdata = Vec::with_capacity(wn);
            for _ in 0..wn {
                wdata.push(r.f64()?);
            }
            let mut bdata = Vec::with_capacity(dims[0]);
            for _ in 0..dims[0] {
                bdata.push(r.f64()?);
            }
            layers.push(FeatLayer {
                weight: Tensor::from_vec(&dims, wdata),
                bias: Tensor::from_vec(&[dims[0]], bdata),
                stride,
            });
        }
        Ok(FeatureExtractor {
            id: format!("pretrained:{}", path.display()),
            provenance: Provenance::Pretrained,
            layers,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("extractor weights file truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Deterministic multi-layer feature stack of an image.
pub fn extract_features(x: &ImageTensor, f: &FeatureExtractor) -> FeatureStack {
    let mut g = Graph::new();
    let xv = g.constant(x.tensor().clone());
    let taps = f.forward_g(&mut g, xv);
    FeatureStack {
        taps: taps.into_iter().map(|t| g.value(t).clone()).collect(),
    }
}
