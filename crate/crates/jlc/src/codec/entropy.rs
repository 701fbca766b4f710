//! Fully factorized entropy model: one learned univariate CDF per latent
//! channel, discretized with the +/-0.5 convention.
//!
//! The CDF is a small monotone network:
//!
//!   c(v) = sigmoid( a*v + sum_i b_i * tanh(g_i * (v - d_i)) + bias )
//!
//! with a = softplus(alpha_raw) > 0 and b_i, g_i >= 0 via softplus, so c is
//! strictly increasing in v and saturates to 0 / 1 at -inf / +inf for any
//! parameter values. The same formula drives three consumers: the
//! differentiable rate term during training, scalar evaluation for rate
//! estimates, and the quantized tables handed to the range coder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::codec::types::{QuantizeMode, QuantizedLatent};
use crate::error::{Error, Result};
use crate::graph::{sigmoid, softplus, Graph, Var};
use crate::tensor::Tensor;

/// Likelihood floor applied before any log.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

/// Tail mass (per side) left outside the nominal coding support.
const TAIL_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyModel {
    channels: usize,
    knots: usize,
    pub alpha_raw: Tensor,
    pub bias: Tensor,
    /// Per knot: amplitude (softplus), steepness (softplus), center (free).
    pub knot_beta_raw: Vec<Tensor>,
    pub knot_gamma_raw: Vec<Tensor>,
    pub knot_delta: Vec<Tensor>,
}

impl EntropyModel {
    /// Logistic-like initial CDF with knot centers spread over [-4, 4].
    pub fn init(channels: usize, knots: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = |t: Tensor, scale: f64, rng: &mut ChaCha8Rng| {
            let j = Tensor::rand_uniform(t.shape(), scale, rng);
            let mut out = t;
            out.add_assign(&j);
            out
        };
        let alpha_raw = jitter(Tensor::full(&[channels], 0.5413248546129181), 0.01, &mut rng);
        let bias = jitter(Tensor::zeros(&[channels]), 0.01, &mut rng);
        let mut knot_beta_raw = Vec::new();
        let mut knot_gamma_raw = Vec::new();
        let mut knot_delta = Vec::new();
        for i in 0..knots {
            knot_beta_raw.push(jitter(Tensor::full(&[channels], -2.0), 0.01, &mut rng));
            knot_gamma_raw.push(jitter(Tensor::full(&[channels], 0.54), 0.01, &mut rng));
            let center = -4.0 + 8.0 * (i as f64 + 0.5) / knots as f64;
            knot_delta.push(jitter(Tensor::full(&[channels], center), 0.05, &mut rng));
        }
        EntropyModel {
            channels,
            knots,
            alpha_raw,
            bias,
            knot_beta_raw,
            knot_gamma_raw,
            knot_delta,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    /// Scalar CDF for one channel.
    pub fn cdf(&self, channel: usize, v: f64) -> f64 {
        let mut t = softplus(self.alpha_raw.data()[channel]) * v + self.bias.data()[channel];
        for i in 0..self.knots {
            let b = softplus(self.knot_beta_raw[i].data()[channel]);
            let gm = softplus(self.knot_gamma_raw[i].data()[channel]);
            let d = self.knot_delta[i].data()[channel];
            t += b * (gm * (v - d)).tanh();
        }
        sigmoid(t)
    }

    /// Discretized likelihood of one integer-valued symbol.
    pub fn prob(&self, channel: usize, k: i64) -> f64 {
        let p = self.cdf(channel, k as f64 + 0.5) - self.cdf(channel, k as f64 - 0.5);
        p.max(LIKELIHOOD_FLOOR)
    }

    /// Canonical flat parameter order (matches [`bind`](Self::bind)).
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.alpha_raw, &self.bias];
        for i in 0..self.knots {
            out.push(&self.knot_beta_raw[i]);
            out.push(&self.knot_gamma_raw[i]);
            out.push(&self.knot_delta[i]);
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.alpha_raw, &mut self.bias];
        for ((b, g), d) in self
            .knot_beta_raw
            .iter_mut()
            .zip(self.knot_gamma_raw.iter_mut())
            .zip(self.knot_delta.iter_mut())
        {
            out.push(b);
            out.push(g);
            out.push(d);
        }
        out
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundEntropy {
        let reg = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundEntropy {
            alpha_raw: reg(g, &self.alpha_raw),
            bias: reg(g, &self.bias),
            knots: (0..self.knots)
                .map(|i| BoundKnot {
                    beta_raw: reg(g, &self.knot_beta_raw[i]),
                    gamma_raw: reg(g, &self.knot_gamma_raw[i]),
                    delta: reg(g, &self.knot_delta[i]),
                })
                .collect(),
        }
    }

    /// Hash over the model content; stamped into bitstream headers so a
    /// decoder can detect a mismatched model.
    pub fn content_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.channels as u64).to_le_bytes());
        h.update((self.knots as u64).to_le_bytes());
        for t in self.param_tensors() {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Integer support [lo, hi] such that the CDF leaves at most `TAIL_EPS`
    /// of mass below lo-0.5 and above hi+0.5.
    pub fn support_range(&self, channel: usize) -> Result<(i64, i64)> {
        let lo = self.search_tail(channel, true)?;
        let hi = self.search_tail(channel, false)?;
        Ok((lo, hi.max(lo)))
    }

    fn search_tail(&self, channel: usize, lower: bool) -> Result<i64> {
        const LIMIT: i64 = 1 << 24;
        // find a bracketing bound by doubling, then binary search
        let ok = |k: i64| {
            if lower {
                self.cdf(channel, k as f64 - 0.5) <= TAIL_EPS
            } else {
                self.cdf(channel, k as f64 + 0.5) >= 1.0 - TAIL_EPS
            }
        };
        let dir: i64 = if lower { -1 } else { 1 };
        let mut probe: i64 = 0;
        let mut step: i64 = 1;
        while !ok(probe) {
            probe += dir * step;
            step *= 2;
            if probe.abs() > LIMIT {
                return Err(Error::Numeric(
                    "entropy model support exceeds search limit".into(),
                ));
            }
        }
        // tightest k with ok(k), searching back toward zero
        let mut far = probe;
        let mut near = 0;
        while (far - near).abs() > 1 {
            let mid = (far + near) / 2;
            if ok(mid) {
                far = mid;
            } else {
                near = mid;
            }
        }
        Ok(if ok(near) { near } else { far })
    }

    /// Quantized CDF tables for range coding, one per channel, covering at
    /// least the model support united with the per-channel extent of `extra`
    /// when given.
    pub fn coding_tables(&self, extra: Option<&QuantizedLatent>) -> Result<Vec<ChannelTable>> {
        let mut ranges: Vec<(i64, i64)> = (0..self.channels)
            .map(|c| self.support_range(c))
            .collect::<Result<_>>()?;
        if let Some(q) = extra {
            let (b, c, h, w) = q.dims();
            if c != self.channels {
                return Err(Error::Shape(format!(
                    "latent has {c} channels but entropy model has {}",
                    self.channels
                )));
            }
            for bi in 0..b {
                for ci in 0..c {
                    let plane = &q.data.data()[(bi * c + ci) * h * w..][..h * w];
                    for &v in plane {
                        let k = v as i64;
                        ranges[ci].0 = ranges[ci].0.min(k);
                        ranges[ci].1 = ranges[ci].1.max(k);
                    }
                }
            }
        }
        ranges
            .iter()
            .enumerate()
            .map(|(c, &(lo, hi))| self.channel_table(c, lo, hi))
            .collect()
    }

    /// Rebuild one channel's table from a stated support (decoder side).
    pub fn channel_table(&self, channel: usize, lo: i64, hi: i64) -> Result<ChannelTable> {
        ChannelTable::build(self, channel, lo, hi)
    }
}

pub const CODER_TOTAL_BITS: u32 = 16;

/// Frequency table for one channel, quantized to a fixed 2^16 total.
#[derive(Clone, Debug)]
pub struct ChannelTable {
    pub lo: i64,
    /// Cumulative frequencies, len = symbol count + 1, cum[0] = 0,
    /// cum[n] = 2^16.
    pub cum: Vec<u32>,
}

impl ChannelTable {
    fn build(em: &EntropyModel, channel: usize, lo: i64, hi: i64) -> Result<Self> {
        let n = (hi - lo + 1) as usize;
        let total: u32 = 1 << CODER_TOTAL_BITS;
        if n as u32 >= total {
            return Err(Error::Numeric(format!(
                "coding support of {n} symbols is too wide for {total} total frequency"
            )));
        }
        let probs: Vec<f64> = (lo..=hi).map(|k| em.prob(channel, k)).collect();
        let sum: f64 = probs.iter().sum();
        let budget = total - n as u32;
        let mut freq: Vec<u32> = probs
            .iter()
            .map(|p| 1 + (p / sum * budget as f64).floor() as u32)
            .collect();
        let assigned: u32 = freq.iter().sum();
        let mut leftover = total - assigned;
        // hand the leftover to the symbols with the largest fractional parts
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let fa = probs[a] / sum * budget as f64;
            let fb = probs[b] / sum * budget as f64;
            (fb - fb.floor())
                .partial_cmp(&(fa - fa.floor()))
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut oi = 0usize;
        while leftover > 0 {
            freq[order[oi % n]] += 1;
            leftover -= 1;
            oi += 1;
        }
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0u32);
        for f in &freq {
            cum.push(cum.last().unwrap() + f);
        }
        debug_assert_eq!(*cum.last().unwrap(), total);
        Ok(ChannelTable { lo, cum })
    }

    pub fn symbols(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.symbols() as i64 - 1
    }

    /// (cum_low, freq) for an integer value; the value must lie in support.
    pub fn locate(&self, k: i64) -> Result<(u32, u32)> {
        if k < self.lo || k > self.hi() {
            return Err(Error::Numeric(format!(
                "value {k} outside coding support [{}, {}]",
                self.lo,
                self.hi()
            )));
        }
        let idx = (k - self.lo) as usize;
        Ok((self.cum[idx], self.cum[idx + 1] - self.cum[idx]))
    }

    /// Symbol whose cumulative interval contains `target`.
    pub fn symbol_at(&self, target: u32) -> i64 {
        // binary search: largest idx with cum[idx] <= target
        let mut lo = 0usize;
        let mut hi = self.cum.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.lo + lo as i64
    }
}

pub struct BoundKnot {
    pub beta_raw: Var,
    pub gamma_raw: Var,
    pub delta: Var,
}

pub struct BoundEntropy {
    pub alpha_raw: Var,
    pub bias: Var,
    pub knots: Vec<BoundKnot>,
}

impl BoundEntropy {
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out = vec![self.alpha_raw, self.bias];
        for k in &self.knots {
            out.push(k.beta_raw);
            out.push(k.gamma_raw);
            out.push(k.delta);
        }
        out
    }
}

/// Graph CDF evaluated at `v + shift` for a `[b, c, h, w]` tensor of latents.
fn cdf_g(g: &mut Graph, em: &BoundEntropy, v: Var, shift: f64) -> Var {
    let vs = g.add_scalar(v, shift);
    let alpha = g.softplus(em.alpha_raw);
    let mut t = g.mul_channel(vs, alpha);
    for knot in &em.knots {
        let neg_delta = g.mul_scalar(knot.delta, -1.0);
        let centered = g.add_channel(vs, neg_delta);
        let gamma = g.softplus(knot.gamma_raw);
        let scaled = g.mul_channel(centered, gamma);
        let th = g.tanh(scaled);
        let beta = g.softplus(knot.beta_raw);
        let term = g.mul_channel(th, beta);
        t = g.add(t, term);
    }
    let t = g.add_channel(t, em.bias);
    g.sigmoid(t)
}

/// Discretized likelihood p = c(v + 0.5) - c(v - 0.5), floor-clamped.
/// Differentiable w.r.t. the model parameters and `v`.
pub fn likelihood_g(g: &mut Graph, em: &BoundEntropy, v: Var) -> Var {
    let upper = cdf_g(g, em, v, 0.5);
    let lower = cdf_g(g, em, v, -0.5);
    let p = g.sub(upper, lower);
    g.clamp_min(p, LIKELIHOOD_FLOOR)
}

/// Rate in bits per pixel from a likelihood tensor: (-sum log2 p) / pixels.
pub fn rate_bpp_g(g: &mut Graph, p: Var, pixel_count: usize) -> Var {
    let logs = g.ln(p);
    let total = g.sum(logs);
    g.mul_scalar(total, -1.0 / (std::f64::consts::LN_2 * pixel_count as f64))
}

/// Per-element discretized likelihoods of a quantized latent.
pub fn latent_likelihood(yhat: &QuantizedLatent, em: &EntropyModel) -> Result<Tensor> {
    let (_, c, _, _) = yhat.dims();
    if c != em.channels {
        return Err(Error::Shape(format!(
            "latent has {c} channels but entropy model has {}",
            em.channels
        )));
    }
    let mut g = Graph::new();
    let v = g.constant(yhat.data.clone());
    let bound = em.bind(&mut g, false);
    let p = likelihood_g(&mut g, &bound, v);
    Ok(g.value(p).clone())
}

/// Entropy estimate of a quantized latent in bits per source pixel.
pub fn estimate_rate_bpp(
    yhat: &QuantizedLatent,
    em: &EntropyModel,
    pixel_count: usize,
) -> Result<f64> {
    if pixel_count == 0 {
        return Err(Error::Argument("pixel_count must be positive".into()));
    }
    let p = latent_likelihood(yhat, em)?;
    let bits: f64 = p.data().iter().map(|&v| -v.log2()).sum();
    Ok(bits / pixel_count as f64)
}

/// Discretization helper shared with tests: p(k) = c(k+0.5) - c(k-0.5),
/// floor-clamped, for an arbitrary CDF.
pub fn discretized_prob(cdf: impl Fn(f64) -> f64, k: i64) -> f64 {
    (cdf(k as f64 + 0.5) - cdf(k as f64 - 0.5)).max(LIKELIHOOD_FLOOR)
}

/// Mode guard used by the bitstream layer.
pub fn require_rounded(yhat: &QuantizedLatent) -> Result<()> {
    match yhat.mode {
        QuantizeMode::InferRound => Ok(()),
        QuantizeMode::TrainNoise => Err(Error::Mode(
            "entropy coding requires an infer_round latent, got train_noise".into(),
        )),
    }
}
