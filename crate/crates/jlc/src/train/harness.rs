//! End-to-end RD training over the lambda grid.
//!
//! One step: analyze -> quantize (additive noise) -> rate term from the
//! entropy model, synthesize -> distortion per the configured variant,
//! total = rate + lambda * distortion, backprop, clipped Adam update.
//! Everything is seeded; a run is a pure function of (config, data, seeds).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::arch::CodecParams;
use crate::codec::entropy::{self, EntropyModel};
use crate::codec::transforms::{analyze_g, quantize_noise_g, synthesize_g};
use crate::codec::types::{stack_images, ImageTensor};
use crate::data::manifest::{mix_schedule, MixSlot, SamplePair};
use crate::data::patches::{extract_aligned_patches, PatchSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::distortion::{distortion, distortion_g};
use crate::losses::features::FeatureExtractor;
use crate::losses::jnd::{loss_fwl_g, loss_iwl_g, loss_pwl_g, rd_loss_g, LossConfig, LossVariant};
use crate::train::checkpoint::{Checkpoint, CheckpointMeta};
use crate::train::config::TrainConfig;
use crate::train::log::{StepRecord, TrainLog};
use crate::train::optimizer::Adam;
use crate::util::derive_seed;

const SEED_TAG_MIX: u64 = 1;
const SEED_TAG_PATCH: u64 = 2;
const SEED_TAG_INIT: u64 = 3;
const SEED_TAG_NOISE: u64 = 4;

/// Pre-loaded training images, kept separate by label availability.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub labeled: Vec<SamplePair>,
    pub unlabeled: Vec<SamplePair>,
}

impl TrainData {
    /// All images as proxy-only data (baseline-style training).
    pub fn unlabeled_only(pairs: Vec<SamplePair>) -> Self {
        TrainData {
            labeled: Vec::new(),
            unlabeled: pairs,
        }
    }

    /// One epoch's patch stream. With labeled data present this follows the
    /// equal-count mixing contract; otherwise it is a seeded shuffle of
    /// proxy pairs.
    pub fn epoch_stream(
        &self,
        epoch: usize,
        master_seed: u64,
        patch: &PatchSpec,
    ) -> Result<Vec<SamplePair>> {
        if self.labeled.is_empty() && self.unlabeled.is_empty() {
            return Err(Error::Argument("no training data".into()));
        }
        let mix_seed = derive_seed(master_seed, SEED_TAG_MIX, epoch as u64);
        let pairs: Vec<SamplePair> = if self.labeled.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed);
            let mut order: Vec<usize> = (0..self.unlabeled.len()).collect();
            order.shuffle(&mut rng);
            order
                .into_iter()
                .map(|i| {
                    SamplePair::proxy(
                        self.unlabeled[i].x_o.clone(),
                        self.unlabeled[i].image_id.clone(),
                    )
                })
                .collect()
        } else {
            mix_schedule(self.labeled.len(), self.unlabeled.len(), mix_seed)?
                .into_iter()
                .map(|slot| match slot {
                    MixSlot::Labeled(i) => self.labeled[i].clone(),
                    MixSlot::Proxy(j) => SamplePair::proxy(
                        self.unlabeled[j].x_o.clone(),
                        self.unlabeled[j].image_id.clone(),
                    ),
                })
                .collect()
        };

        let patch_spec = PatchSpec {
            seed: derive_seed(master_seed, SEED_TAG_PATCH, epoch as u64),
            ..*patch
        };
        let mut out = Vec::new();
        for p in &pairs {
            out.extend(extract_aligned_patches(p, &patch_spec));
        }
        if out.is_empty() {
            return Err(Error::Argument(
                "no usable training patches (images smaller than patch size?)".into(),
            ));
        }
        Ok(out)
    }
}

/// Scalar components of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub rate_bpp: f64,
    pub distortion: f64,
    pub total: f64,
}

/// The distortion term for one variant, as a graph node. This is the single
/// routing point shared by the training loop and the routing tests.
pub fn distortion_term_g(
    g: &mut Graph,
    cfg: &LossConfig,
    extractor: Option<&FeatureExtractor>,
    x_o: Var,
    x_j: Var,
    x_hat: Var,
    iwl_level: f64,
) -> Result<Var> {
    match cfg.variant {
        LossVariant::Baseline => distortion_g(g, x_o, x_hat, cfg.family),
        LossVariant::Pwl => loss_pwl_g(g, x_j, x_hat, cfg.family),
        LossVariant::Iwl => loss_iwl_g(g, x_o, x_hat, iwl_level, cfg.family, cfg.iwl_clamp),
        LossVariant::Fwl => {
            let f = extractor.ok_or_else(|| {
                Error::Config("fwl training requires a feature extractor".into())
            })?;
            loss_fwl_g(g, x_o, x_j, x_hat, cfg.omega, f, cfg.fwl_pixel())
        }
    }
}

struct StepOutcome {
    parts: LossParts,
    grads: Vec<crate::tensor::Tensor>,
}

/// Forward + backward for one batch; returns loss parts and gradients in
/// canonical (codec params, entropy params) order.
fn train_step(
    params: &CodecParams,
    em: &EntropyModel,
    cfg: &LossConfig,
    extractor: Option<&FeatureExtractor>,
    x_o: &ImageTensor,
    x_j: &ImageTensor,
    noise_seed: u64,
) -> Result<StepOutcome> {
    let mut g = Graph::new();
    let bound_codec = params.bind(&mut g, true);
    let bound_em = em.bind(&mut g, true);
    let xo = g.constant(x_o.tensor().clone());
    let xj = g.constant(x_j.tensor().clone());

    let y = analyze_g(&mut g, xo, &bound_codec);
    let yhat = quantize_noise_g(&mut g, y, noise_seed);
    let p = entropy::likelihood_g(&mut g, &bound_em, yhat);
    let rate = entropy::rate_bpp_g(&mut g, p, x_o.pixel_count());

    // unclamped reconstruction: the [0,1] clamp applies after the loss
    let xhat = synthesize_g(&mut g, yhat, &bound_codec);

    let iwl_level = if cfg.variant == LossVariant::Iwl {
        distortion(x_o, x_j, cfg.family)?
    } else {
        0.0
    };
    let dist = distortion_term_g(&mut g, cfg, extractor, xo, xj, xhat, iwl_level)?;
    let total = rd_loss_g(&mut g, rate, dist, cfg.lambda)?;

    let parts = LossParts {
        rate_bpp: g.value(rate).item(),
        distortion: g.value(dist).item(),
        total: g.value(total).item(),
    };
    if !parts.total.is_finite() {
        return Err(Error::Numeric(format!(
            "loss diverged: rate={} distortion={} total={}",
            parts.rate_bpp, parts.distortion, parts.total
        )));
    }

    let grads = g.backward(total);
    let mut ordered = Vec::new();
    for v in bound_codec
        .param_vars()
        .into_iter()
        .chain(bound_em.param_vars())
    {
        ordered.push(match grads.get(v) {
            Some(t) => t.clone(),
            None => crate::tensor::Tensor::zeros(g.value(v).shape()),
        });
    }
    Ok(StepOutcome {
        parts,
        grads: ordered,
    })
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Train one model at one lambda.
pub fn train(
    config: &TrainConfig,
    lambda: f64,
    data: &TrainData,
    init: Option<&Checkpoint>,
    intermediate_dir: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    if !(lambda > 0.0) {
        return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
    }
    let mut loss_cfg = config.loss.clone();
    loss_cfg.lambda = lambda;
    loss_cfg.validate()?;

    configure_threads(config.train.threads);

    let seed = config.train.seed;
    let mut params = match init {
        Some(ckpt) => {
            if ckpt.params.arch != config.arch {
                return Err(Error::Config(
                    "warm-start checkpoint architecture differs from config".into(),
                ));
            }
            ckpt.params.clone()
        }
        None => CodecParams::init(config.arch.clone(), derive_seed(seed, SEED_TAG_INIT, 0))?,
    };
    let mut em = match init {
        Some(ckpt) => ckpt.entropy.clone(),
        None => EntropyModel::init(
            config.arch.latent_channels,
            config.train.entropy_knots,
            derive_seed(seed, SEED_TAG_INIT, 1),
        ),
    };
    let extractor = match loss_cfg.variant {
        LossVariant::Fwl => Some(FeatureExtractor::from_id(
            loss_cfg.feature_extractor_id.as_deref().unwrap(),
        )?),
        _ => None,
    };

    let mut adam = {
        let mut refs: Vec<&crate::tensor::Tensor> = params.param_tensors();
        refs.extend(em.param_tensors());
        Adam::new(
            &config.train.optimizer,
            config.train.learning_rate,
            config.train.grad_clip,
            &refs,
        )
    };

    let patch = config.patch_spec();
    let mut log = TrainLog::default();
    let mut step: u64 = 0;
    for epoch in 0..config.train.epochs {
        let stream = data.epoch_stream(epoch, seed, &patch)?;
        let first_step = log.steps.len();
        for batch in stream.chunks(config.train.batch_size) {
            let x_o = stack_images(&batch.iter().map(|p| &p.x_o).collect::<Vec<_>>())?;
            let x_j = stack_images(&batch.iter().map(|p| &p.x_j).collect::<Vec<_>>())?;
            let noise_seed = derive_seed(seed, SEED_TAG_NOISE, step);

            let outcome =
                train_step(&params, &em, &loss_cfg, extractor.as_ref(), &x_o, &x_j, noise_seed)
                    .map_err(|e| {
                        Error::Numeric(format!(
                            "training aborted at lambda={lambda} step={step}: {e}"
                        ))
                    })?;

            {
                let mut refs: Vec<&mut crate::tensor::Tensor> = params.param_tensors_mut();
                refs.extend(em.param_tensors_mut());
                adam.step(&mut refs, &outcome.grads).map_err(|e| {
                    Error::Numeric(format!(
                        "training aborted at lambda={lambda} step={step}: {e} \
                         (rate={} distortion={} total={})",
                        outcome.parts.rate_bpp, outcome.parts.distortion, outcome.parts.total
                    ))
                })?;
            }

            log.push_step(StepRecord {
                step,
                rate_bpp: outcome.parts.rate_bpp,
                distortion: outcome.parts.distortion,
                total_loss: outcome.parts.total,
            })?;
            step += 1;
        }
        log.close_epoch(epoch as u64, first_step);

        let every = config.train.checkpoint_every;
        if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < config.train.epochs {
            if let Some(dir) = intermediate_dir {
                let ckpt = Checkpoint {
                    params: params.clone(),
                    entropy: em.clone(),
                    loss: loss_cfg.clone(),
                    meta: CheckpointMeta {
                        lambda,
                        seed,
                        epoch: epoch + 1,
                    },
                };
                ckpt.save(&dir.join(format!("ckpt_lambda{lambda}_epoch{}.jlck", epoch + 1)))?;
            }
        }
    }

    Ok(TrainOutput {
        checkpoint: Checkpoint {
            params,
            entropy: em,
            loss: loss_cfg,
            meta: CheckpointMeta {
                lambda,
                seed,
                epoch: config.train.epochs,
            },
        },
        log,
    })
}

/// Independent run per lambda, optionally warm-starting each run from the
/// previous lambda's result. Returns checkpoints ordered by lambda.
pub fn sweep(config: &TrainConfig, data: &TrainData) -> Result<Vec<TrainOutput>> {
    config.validate()?;
    let mut outputs: Vec<TrainOutput> = Vec::new();
    for &lambda in &config.train.lambdas {
        let init = if config.train.warm_start {
            outputs.last().map(|o| &o.checkpoint)
        } else {
            None
        };
        log::info!("sweep: training lambda={lambda}");
        let out = train(config, lambda, data, init, None)?;
        outputs.push(out);
    }
    Ok(outputs)
}

fn configure_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}
