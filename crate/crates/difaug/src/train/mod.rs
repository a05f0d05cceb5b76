//! Two-phase GAN-SR training: pixel-loss pretraining, then adversarial
//! fine-tuning against a discriminator fed diffusion-corrupted inputs.
//!
//! Every random decision (batch choice, corruption step, noise) comes from a
//! counter-derived stream keyed on (seed, purpose, iteration), so trajectories
//! are bit-reproducible, resumable, and independent of worker count.

pub mod adam;
mod experiment;

pub use adam::{AdamConfig, AdamState};
pub use experiment::{
    disc_logit, evaluate_probe, history_to_csv, load_checkpoint_meta, parse_history_csv,
    probe_crop_size, run_experiment, save_checkpoint, super_resolve, CheckpointMeta,
    ExperimentOptions, ExperimentSummary, HistoryRow, ProbeResult, CKPT_VERSION, HISTORY_HEADER,
    PROBE_CROP,
};

use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::augment::{diffuse_lr_mean, diffuse_standard, upsample_lr, AugmentConfig, AugmentMode};
use crate::calib::{Label, PredictionRecord};
use crate::error::{DifaugError, Result};
use crate::imaging::ImagePair;
use crate::models::{
    discriminator_forward, generator_forward, init_params, validate_params, DiscriminatorSpec,
    GeneratorSpec,
};
use crate::rng::{derive_rng, derive_seed};
use crate::schedule::sample_step;
use crate::tensor::{Grads, ParamStore, Tape, Tensor, VarId};

pub const DEFAULT_LAMBDA1: f64 = 0.0;
pub const DEFAULT_LAMBDA2: f64 = 0.005;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_CALIB_PROBE_CROPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Adversarial,
}

/// Which way the discriminator targets point.
///
/// `Standard`: real → 1, fake → 0, non-saturating generator loss
/// −log σ(D(F(ŷ))). `Flipped` swaps every target, i.e. a label-flipped
/// discriminator objective, kept for comparison experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    Standard,
    Flipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    /// Perceptual-surrogate weight λ1.
    pub lambda1: f64,
    /// Adversarial weight λ2.
    pub lambda2: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_iters: usize,
    /// None disables corruption entirely (baseline).
    pub augment: Option<AugmentConfig>,
    pub calib_probe_interval: usize,
    pub calib_probe_crops: usize,
    pub seed: u64,
    pub sign_convention: SignConvention,
}

impl TrainConfig {
    pub fn pretrain(seed: u64, total_iters: usize) -> Self {
        TrainConfig {
            phase: Phase::Pretrain,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            lr: DEFAULT_LR,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            total_iters,
            augment: None,
            calib_probe_interval: 100,
            calib_probe_crops: DEFAULT_CALIB_PROBE_CROPS,
            seed,
            sign_convention: SignConvention::Standard,
        }
    }

    pub fn adversarial(seed: u64, total_iters: usize, augment: Option<AugmentConfig>) -> Self {
        TrainConfig { phase: Phase::Adversarial, augment, ..Self::pretrain(seed, total_iters) }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_iters == 0 {
            return Err(DifaugError::Config(
                "batch_size and total_iters must be positive".into(),
            ));
        }
        if self.calib_probe_interval == 0 || self.calib_probe_crops == 0 {
            return Err(DifaugError::Config(
                "calib_probe_interval and calib_probe_crops must be positive".into(),
            ));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(DifaugError::Config("loss weights must be >= 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DifaugError::Config(format!("bad learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// One training pair as tensors.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub hr: Tensor,
    pub lr: Tensor,
}

impl TrainItem {
    pub fn from_pair(pair: &ImagePair) -> TrainItem {
        TrainItem { hr: pair.hr.to_tensor(), lr: pair.lr.to_tensor() }
    }
}

pub fn items_from_pairs(pairs: &[ImagePair]) -> Vec<TrainItem> {
    pairs.iter().map(TrainItem::from_pair).collect()
}

/// Shallow frozen random conv net whose feature distance stands in for a
/// perceptual loss.
pub fn probe_param_defs() -> Vec<(String, Vec<usize>)> {
    vec![
        ("conv1.w".into(), vec![8, 3, 3, 3]),
        ("conv1.b".into(), vec![8]),
        ("conv2.w".into(), vec![8, 8, 3, 3]),
        ("conv2.b".into(), vec![8]),
    ]
}

fn probe_features(
    tape: &mut Tape,
    store: &ParamStore,
    bound: &[VarId],
    x: VarId,
) -> Result<VarId> {
    validate_params(&probe_param_defs(), store)?;
    let idx = |name: &str| {
        store
            .index_of(name)
            .map(|i| bound[i])
            .ok_or_else(|| DifaugError::Shape(format!("probe net missing {name:?}")))
    };
    let c1 = tape.conv2d(x, idx("conv1.w")?, 1, 1)?;
    let c1 = tape.bias_add(c1, idx("conv1.b")?)?;
    let a1 = tape.leaky_relu(c1);
    let c2 = tape.conv2d(a1, idx("conv2.w")?, 1, 1)?;
    tape.bias_add(c2, idx("conv2.b")?)
}

fn mse(tape: &mut Tape, a: VarId, b: VarId) -> Result<VarId> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// Mean squared distance between frozen-probe feature maps of two images.
pub fn percep_loss_surrogate(a: &Tensor, b: &Tensor, probe: &ParamStore) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = probe.bind_frozen(&mut tape);
    let av = tape.leaf(a.clone());
    let bv = tape.leaf(b.clone());
    let fa = probe_features(&mut tape, probe, &bound, av)?;
    let fb = probe_features(&mut tape, probe, &bound, bv)?;
    let loss = mse(&mut tape, fa, fb)?;
    Ok(tape.value(loss).data()[0])
}

#[derive(Debug, Clone)]
pub struct DiscStats {
    pub d_loss: f64,
    pub records: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct GenStats {
    pub pixel_loss: f64,
    pub percep_loss: f64,
    pub adv_loss: f64,
}

#[derive(Debug, Clone)]
pub struct StepStats {
    pub iter: u64,
    pub phase: Phase,
    pub pixel_loss: f64,
    pub percep_loss: f64,
    pub adv_loss: f64,
    pub d_loss: f64,
    pub records: Vec<PredictionRecord>,
}

type ItemGrads = Vec<Option<Vec<f64>>>;

fn collect_grads(bound: &[VarId], grads: &Grads) -> ItemGrads {
    bound.iter().map(|v| grads.get(*v).map(|s| s.to_vec())).collect()
}

fn apply_grads(store: &mut ParamStore, items: impl IntoIterator<Item = ItemGrads>) {
    for gvecs in items {
        for (i, g) in gvecs.into_iter().enumerate() {
            if let Some(g) = g {
                store.tensor_mut(i).accumulate_grad(&g);
            }
        }
    }
}

fn ensure_finite(value: f64, what: &str, iter: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(DifaugError::NonFinite {
            op_id: iter as usize,
            detail: format!("{what} is {value} at iteration {iter}"),
        })
    }
}

/// Holds both networks, their optimizers, and the dataset; drives the
/// iteration loop.
pub struct Trainer {
    pub gen_spec: GeneratorSpec,
    pub disc_spec: DiscriminatorSpec,
    pub gen: ParamStore,
    pub disc: ParamStore,
    pub probe_net: ParamStore,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
    pub cfg: TrainConfig,
    /// Next iteration index (global across phases).
    pub iter: u64,
    data: Vec<TrainItem>,
}

impl Trainer {
    pub fn new(
        gen_spec: GeneratorSpec,
        disc_spec: DiscriminatorSpec,
        cfg: TrainConfig,
        data: Vec<TrainItem>,
    ) -> Result<Trainer> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(DifaugError::InvalidArgument("training set is empty".into()));
        }
        let gen = init_params(&gen_spec.param_defs(), derive_seed(cfg.seed, "gen-init"));
        let disc = init_params(&disc_spec.param_defs(), derive_seed(cfg.seed, "disc-init"));
        let probe_net = init_params(&probe_param_defs(), derive_seed(cfg.seed, "probe-init"));
        let opt_g = AdamState::new(cfg.adam(), &gen);
        let opt_d = AdamState::new(cfg.adam(), &disc);
        Ok(Trainer { gen_spec, disc_spec, gen, disc, probe_net, opt_g, opt_d, cfg, iter: 0, data })
    }

    pub fn data(&self) -> &[TrainItem] {
        &self.data
    }

    /// Switch to the next phase's config; optimizer moments restart.
    pub fn switch_config(&mut self, cfg: TrainConfig) -> Result<()> {
        cfg.validate()?;
        self.opt_g = AdamState::new(cfg.adam(), &self.gen);
        self.opt_d = AdamState::new(cfg.adam(), &self.disc);
        self.cfg = cfg;
        Ok(())
    }

    /// Uniform-with-replacement batch indices for one iteration.
    pub fn sample_batch(&self, iter: u64) -> Vec<usize> {
        let mut rng = derive_rng(self.cfg.seed, "batch", &[iter]);
        (0..self.cfg.batch_size).map(|_| rng.gen_range(0..self.data.len())).collect()
    }

    /// Run one full iteration: pretrain step, or discriminator then
    /// generator step, on the same freshly drawn batch.
    pub fn step(&mut self) -> Result<StepStats> {
        let iter = self.iter;
        let batch = self.sample_batch(iter);
        let stats = match self.cfg.phase {
            Phase::Pretrain => {
                let pixel_loss = self.pretrain_step(iter, &batch)?;
                StepStats {
                    iter,
                    phase: Phase::Pretrain,
                    pixel_loss,
                    percep_loss: 0.0,
                    adv_loss: 0.0,
                    d_loss: 0.0,
                    records: Vec::new(),
                }
            }
            Phase::Adversarial => {
                let d = self.discriminator_step(iter, &batch)?;
                let g = self.generator_step(iter, &batch)?;
                StepStats {
                    iter,
                    phase: Phase::Adversarial,
                    pixel_loss: g.pixel_loss,
                    percep_loss: g.percep_loss,
                    adv_loss: g.adv_loss,
                    d_loss: d.d_loss,
                    records: d.records,
                }
            }
        };
        self.iter += 1;
        Ok(stats)
    }

    /// One Adam step on mean L1 between G(lr) and HR over the batch.
    pub fn pretrain_step(&mut self, iter: u64, batch: &[usize]) -> Result<f64> {
        let b = batch.len() as f64;
        let per_item: Vec<(f64, ItemGrads)> = batch
            .par_iter()
            .map(|&ix| {
                let item = &self.data[ix];
                let mut tape = Tape::new();
                let bound = self.gen.bind(&mut tape);
                let lr = tape.leaf(item.lr.clone());
                let sr = generator_forward(&self.gen_spec, &self.gen, &mut tape, &bound, lr)?;
                let hr = tape.leaf(item.hr.clone());
                let pixel = tape.l1(sr, hr)?;
                let scaled = tape.scale(pixel, 1.0 / b);
                tape.check_finite()?;
                let grads = tape.backward(scaled)?;
                Ok((tape.value(pixel).data()[0], collect_grads(&bound, &grads)))
            })
            .collect::<Result<_>>()?;
        let pixel_loss = per_item.iter().map(|(l, _)| l).sum::<f64>() / b;
        ensure_finite(pixel_loss, "pixel_loss", iter)?;
        apply_grads(&mut self.gen, per_item.into_iter().map(|(_, g)| g));
        self.opt_g.step(&mut self.gen);
        Ok(pixel_loss)
    }

    /// Corruption steps for one iteration; None when augmentation is off.
    /// Real and fake branches of an item always share the drawn step.
    fn draw_steps(&self, iter: u64, domain: &str, n: usize) -> Result<Option<Vec<usize>>> {
        let Some(acfg) = &self.cfg.augment else { return Ok(None) };
        let mut rng = derive_rng(self.cfg.seed, domain, &[iter]);
        let steps = if acfg.share_t_across_batch {
            let s = sample_step(&acfg.schedule, acfg.policy, &mut rng)?;
            vec![s; n]
        } else {
            (0..n).map(|_| sample_step(&acfg.schedule, acfg.policy, &mut rng)).collect::<Result<_>>()?
        };
        Ok(Some(steps))
    }

    fn corrupt(
        &self,
        x: &Tensor,
        x_lr: &Tensor,
        step: usize,
        acfg: &AugmentConfig,
        domain: &str,
        indices: &[u64],
    ) -> Result<Tensor> {
        let mut rng = derive_rng(self.cfg.seed, domain, indices);
        Ok(match acfg.mode {
            AugmentMode::GaussianOnly => diffuse_standard(x, step, acfg, &mut rng)?.corrupted,
            AugmentMode::LrMean => diffuse_lr_mean(x, x_lr, step, acfg, &mut rng)?.corrupted,
        })
    }

    /// One Adam step on the discriminator BCE over corrupted HR (Real) and
    /// corrupted G(lr) (Fake); emits the raw logits as prediction records.
    pub fn discriminator_step(&mut self, iter: u64, batch: &[usize]) -> Result<DiscStats> {
        let b = batch.len() as f64;
        let steps = self.draw_steps(iter, "disc-t", batch.len())?;
        let (target_real, target_fake) = match self.cfg.sign_convention {
            SignConvention::Standard => (1.0, 0.0),
            SignConvention::Flipped => (0.0, 1.0),
        };
        let per_item: Vec<(f64, [PredictionRecord; 2], ItemGrads)> = batch
            .par_iter()
            .enumerate()
            .map(|(k, &ix)| {
                let item = &self.data[ix];
                // fake sample: generator output without gradient tracking
                let sr = {
                    let mut tape = Tape::new();
                    let bound = self.gen.bind_frozen(&mut tape);
                    let lr = tape.leaf(item.lr.clone());
                    let out = generator_forward(&self.gen_spec, &self.gen, &mut tape, &bound, lr)?;
                    tape.value(out).clone()
                };
                let (real_in, fake_in) = match (&self.cfg.augment, &steps) {
                    (Some(acfg), Some(steps)) => {
                        let step = steps[k];
                        let real =
                            self.corrupt(&item.hr, &item.lr, step, acfg, "disc-noise", &[iter, 0, k as u64])?;
                        let fake =
                            self.corrupt(&sr, &item.lr, step, acfg, "disc-noise", &[iter, 1, k as u64])?;
                        (real, fake)
                    }
                    _ => (item.hr.clone(), sr),
                };
                let mut tape = Tape::new();
                let bound = self.disc.bind(&mut tape);
                let rv = tape.leaf(real_in);
                let fv = tape.leaf(fake_in);
                let rl = discriminator_forward(&self.disc_spec, &self.disc, &mut tape, &bound, rv)?;
                let fl = discriminator_forward(&self.disc_spec, &self.disc, &mut tape, &bound, fv)?;
                let br = tape.bce_with_logits(rl, target_real)?;
                let bf = tape.bce_with_logits(fl, target_fake)?;
                let pair = tape.add(br, bf)?;
                let scaled = tape.scale(pair, 1.0 / b);
                tape.check_finite()?;
                let grads = tape.backward(scaled)?;
                let records = [
                    PredictionRecord { logit: tape.value(rl).data()[0], label: Label::Real },
                    PredictionRecord { logit: tape.value(fl).data()[0], label: Label::Fake },
                ];
                Ok((tape.value(pair).data()[0], records, collect_grads(&bound, &grads)))
            })
            .collect::<Result<_>>()?;
        let d_loss = per_item.iter().map(|(l, _, _)| l).sum::<f64>() / b;
        ensure_finite(d_loss, "d_loss", iter)?;
        let mut records = Vec::with_capacity(2 * batch.len());
        for (_, recs, _) in &per_item {
            records.extend_from_slice(recs);
        }
        apply_grads(&mut self.disc, per_item.into_iter().map(|(_, _, g)| g));
        self.opt_d.step(&mut self.disc);
        Ok(DiscStats { d_loss, records })
    }

    /// One Adam step on L_G = L_pixel + λ1·L_percep + λ2·L_adv with the
    /// discriminator frozen. The corruption of G(lr) keeps gradient flow
    /// through the α_t·ŷ term; the noise/shift part is a constant leaf.
    pub fn generator_step(&mut self, iter: u64, batch: &[usize]) -> Result<GenStats> {
        let b = batch.len() as f64;
        let steps = if self.cfg.lambda2 > 0.0 {
            self.draw_steps(iter, "gen-t", batch.len())?
        } else {
            None
        };
        let adv_target = match self.cfg.sign_convention {
            SignConvention::Standard => 1.0,
            SignConvention::Flipped => 0.0,
        };
        let per_item: Vec<(f64, f64, f64, ItemGrads)> = batch
            .par_iter()
            .enumerate()
            .map(|(k, &ix)| {
                let item = &self.data[ix];
                let mut tape = Tape::new();
                let bound = self.gen.bind(&mut tape);
                let lr = tape.leaf(item.lr.clone());
                let sr = generator_forward(&self.gen_spec, &self.gen, &mut tape, &bound, lr)?;
                let hr = tape.leaf(item.hr.clone());
                let pixel = tape.l1(sr, hr)?;
                let mut loss = tape.scale(pixel, 1.0 / b);
                let mut percep_val = 0.0;
                if self.cfg.lambda1 > 0.0 {
                    let pb = self.probe_net.bind_frozen(&mut tape);
                    let fa = probe_features(&mut tape, &self.probe_net, &pb, sr)?;
                    let fb = probe_features(&mut tape, &self.probe_net, &pb, hr)?;
                    let percep = mse(&mut tape, fa, fb)?;
                    percep_val = tape.value(percep).data()[0];
                    let ps = tape.scale(percep, self.cfg.lambda1 / b);
                    loss = tape.add(loss, ps)?;
                }
                let mut adv_val = 0.0;
                if self.cfg.lambda2 > 0.0 {
                    let d_input = match (&self.cfg.augment, &steps) {
                        (Some(acfg), Some(steps)) => {
                            let step = steps[k];
                            let alpha = acfg.schedule.alpha(step)?;
                            let coeff = (1.0 - alpha * alpha).sqrt();
                            let mut rng =
                                derive_rng(self.cfg.seed, "gen-noise", &[iter, k as u64]);
                            let mut shift: Vec<f64> = (0..item.hr.numel())
                                .map(|_| acfg.eta * rng.sample::<f64, _>(StandardNormal))
                                .collect();
                            if acfg.mode == AugmentMode::LrMean {
                                let up = upsample_lr(&item.lr)?;
                                for (s, u) in shift.iter_mut().zip(up.data()) {
                                    *s += *u;
                                }
                            }
                            for s in &mut shift {
                                *s *= coeff;
                            }
                            let shift =
                                tape.leaf(Tensor::from_vec(item.hr.shape().to_vec(), shift)?);
                            let scaled_sr = tape.scale(sr, alpha);
                            tape.add(scaled_sr, shift)?
                        }
                        _ => sr,
                    };
                    let dbound = self.disc.bind_frozen(&mut tape);
                    let logit = discriminator_forward(
                        &self.disc_spec,
                        &self.disc,
                        &mut tape,
                        &dbound,
                        d_input,
                    )?;
                    let adv = tape.bce_with_logits(logit, adv_target)?;
                    adv_val = tape.value(adv).data()[0];
                    let advs = tape.scale(adv, self.cfg.lambda2 / b);
                    loss = tape.add(loss, advs)?;
                }
                tape.check_finite()?;
                let grads = tape.backward(loss)?;
                Ok((tape.value(pixel).data()[0], percep_val, adv_val, collect_grads(&bound, &grads)))
            })
            .collect::<Result<_>>()?;
        let pixel_loss = per_item.iter().map(|(p, _, _, _)| p).sum::<f64>() / b;
        let percep_loss = per_item.iter().map(|(_, p, _, _)| p).sum::<f64>() / b;
        let adv_loss = per_item.iter().map(|(_, _, a, _)| a).sum::<f64>() / b;
        ensure_finite(pixel_loss + percep_loss + adv_loss, "generator loss", iter)?;
        apply_grads(&mut self.gen, per_item.into_iter().map(|(_, _, _, g)| g));
        self.opt_g.step(&mut self.gen);
        Ok(GenStats { pixel_loss, percep_loss, adv_loss })
    }
}
