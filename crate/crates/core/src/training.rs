//! Two-phase training: an inter-coding warm-up on the motion path, then
//! end-to-end rate-distortion optimization of the whole codec.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use autograd::{clip_grad_norm, AdamW, Bound, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{fgsm_training_step, FgsmConfig, FgsmCounters};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::evaluation::psnr_from_mse;
use crate::frames::{frames_to_tensor, load_sequence, random_crop_pair_with, Frame, VideoSequence};
use crate::losses::{bits_from_likelihoods, ensemble_aware_loss, mse, ClipMode, LossReport};
use crate::motion::motion_mse;
use crate::pipeline::{checkpoint, is_residual_param, pframe_forward, CodecModel, Mode};
use crate::synthetic::{generate, MovingShapesConfig};

/// Overrides for the reduced-width configuration used by desk-scale
/// experiments (32×32 crops, one CPU core).
pub const DESK_OVERRIDES: &[&str] = &[
    "data.crop=32",
    "codec.latent_channels_mv=16",
    "codec.latent_channels_res=24",
    "codec.hidden_channels=24",
    "codec.backbone_channels=16",
    "codec.branch_channels=8",
    "codec.motion_channels=12",
    "codec.motion_levels=3",
    "codec.refine_channels=16",
    "train.batch=8",
    "train.lr_initial=1e-3",
    "train.lr_decayed=1e-4",
    "train.motion_loss_weight=1",
    "fgsm.enabled=false",
];

pub fn desk_config() -> Config {
    let mut c = Config::default();
    c.apply_overrides(DESK_OVERRIDES).expect("desk overrides are valid");
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Motion path only; residual-path parameters are frozen.
    Warmup,
    EndToEnd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub lr_initial: f32,
    pub lr_decayed: f32,
    pub lr_decay_step: usize,
    pub lambda: f32,
    pub motion_loss_weight: f32,
    pub k: usize,
    pub clip_mode: ClipMode,
    pub fgsm: FgsmConfig,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
    pub weight_decay: f32,
    pub grad_clip: f32,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let out_dir = cfg.get("train.out_dir");
        let tc = Self {
            warmup_steps: cfg.usize("train.warmup_steps")?,
            total_steps: cfg.usize("train.total_steps")?,
            lr_initial: cfg.f32("train.lr_initial")?,
            lr_decayed: cfg.f32("train.lr_decayed")?,
            lr_decay_step: cfg.usize("train.lr_decay_step")?,
            lambda: cfg.f32("loss.lambda")?,
            motion_loss_weight: cfg.f32("train.motion_loss_weight")?,
            k: cfg.usize("loss.k")?,
            clip_mode: cfg.get("loss.clip_mode").parse()?,
            fgsm: FgsmConfig::from_config(cfg)?,
            batch: cfg.usize("train.batch")?,
            crop: cfg.usize("data.crop")?,
            seed: cfg.u64("seed")?,
            weight_decay: cfg.f32("train.weight_decay")?,
            grad_clip: cfg.f32("train.grad_clip")?,
            checkpoint_every: cfg.usize("train.checkpoint_every")?,
            log_every: cfg.usize("train.log_every")?,
            out_dir: (!out_dir.is_empty()).then(|| PathBuf::from(out_dir)),
        };
        tc.validate(cfg.usize("codec.h")?)?;
        Ok(tc)
    }

    pub fn validate(&self, h: usize) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config("train.warmup_steps exceeds train.total_steps".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_decayed > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config("loss.lambda must be positive".into()));
        }
        if self.k == 0 || self.k > h {
            return Err(Error::Config(format!("loss.k = {} must lie in 1..={h}", self.k)));
        }
        if self.batch == 0 || self.crop < 16 || !self.crop.is_multiple_of(16) {
            return Err(Error::Config("train.batch must be positive and data.crop a multiple of 16".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f32 {
        if step >= self.lr_decay_step {
            self.lr_decayed
        } else {
            self.lr_initial
        }
    }

    pub fn phase_at(&self, step: usize) -> Phase {
        if step < self.warmup_steps {
            Phase::Warmup
        } else {
            Phase::EndToEnd
        }
    }
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(c.wrapping_mul(0x94D0_49BB_1331_11EB));
    z ^= z >> 31;
    z = z.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z ^ (z >> 29)
}

const HELDOUT_STREAM: u64 = 0x4845_4C44;

/// Source of (reference, current) training pairs.
#[derive(Clone, Debug)]
pub enum TrainingData {
    /// Moving-shapes pairs rendered on demand from `(seed, step, index)`.
    Synthetic { shapes: usize, max_speed: f32, seed: u64 },
    Corpus { sequences: Vec<VideoSequence>, seed: u64 },
}

impl TrainingData {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let path = cfg.get("data.path");
        let seed = cfg.u64("data.seed")?;
        if path.is_empty() {
            return Ok(TrainingData::Synthetic {
                shapes: cfg.usize("data.synthetic_shapes")?,
                max_speed: cfg.f32("data.synthetic_speed")?,
                seed,
            });
        }
        let root = Path::new(path);
        let max_frames = cfg.usize("data.max_frames")?;
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            dirs.push(root.to_path_buf());
        }
        let sequences = dirs
            .iter()
            .map(|d| load_sequence(d, max_frames))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingData::Corpus { sequences, seed })
    }

    fn synthetic_pair(shapes: usize, max_speed: f32, seed: u64, crop: usize) -> Result<(Frame, Frame)> {
        let clip = generate(&MovingShapesConfig {
            height: crop,
            width: crop,
            frames: 2,
            shapes,
            max_speed,
            seed,
            ..Default::default()
        })?;
        let f = clip.sequence.frames();
        Ok((f[0].clone(), f[1].clone()))
    }

    /// Pair `index` of training step `step`.
    pub fn pair(&self, step: u64, index: u64, crop: usize) -> Result<(Frame, Frame)> {
        match self {
            TrainingData::Synthetic {
                shapes,
                max_speed,
                seed,
            } => Self::synthetic_pair(*shapes, *max_speed, mix(*seed, step, index), crop),
            TrainingData::Corpus { sequences, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(*seed, step, index));
                let s = &sequences[rng.random_range(0..sequences.len())];
                random_crop_pair_with(s, crop, &mut rng)
            }
        }
    }

    /// Pairs disjoint from every training draw.
    pub fn heldout(&self, count: usize, crop: usize) -> Result<Vec<(Frame, Frame)>> {
        (0..count as u64)
            .map(|i| match self {
                TrainingData::Synthetic { shapes, max_speed, seed } => {
                    Self::synthetic_pair(*shapes, *max_speed, mix(*seed ^ HELDOUT_STREAM, u64::MAX, i), crop)
                }
                TrainingData::Corpus { .. } => self.pair(u64::MAX, i, crop),
            })
            .collect()
    }

    /// (reference, current) as N×C×H×W tensors.
    pub fn batch(&self, step: u64, batch: usize, crop: usize) -> Result<(Tensor, Tensor)> {
        let pairs = (0..batch as u64)
            .map(|i| self.pair(step, i, crop))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Frame> = pairs.iter().map(|p| &p.0).collect();
        let curs: Vec<&Frame> = pairs.iter().map(|p| &p.1).collect();
        Ok((frames_to_tensor(&refs)?, frames_to_tensor(&curs)?))
    }
}

fn scalar(t: &Tensor) -> f64 {
    t.item() as f64
}

/// Differentiable training objective of one phase on a batch.
pub fn training_loss(
    model: &CodecModel,
    p: &Bound,
    reference: &Tensor,
    input: &Tensor,
    target: &Tensor,
    phase: Phase,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(Tensor, LossReport)> {
    let (n, _, h, w) = input.dims4();
    let pixels = (n * h * w) as f32;
    let inter = model.forward_inter(p, input, reference, Mode::Train, rng)?;
    let rate_mv = bits_from_likelihoods(&model.mv_prior.likelihood(p, &inter.mv_hat)).scale(1.0 / pixels);
    let (loss, rate_res, members, final_pred) = match phase {
        Phase::Warmup => {
            let mut d = ensemble_aware_loss(target, &inter.refined_mc.members, cfg.k, cfg.clip_mode)?;
            if cfg.motion_loss_weight > 0.0 {
                d = d.add(&motion_mse(target, reference, &inter.flow).scale(cfg.motion_loss_weight));
            }
            let loss = rate_mv.add(&d.scale(cfg.lambda));
            (loss, None, inter.refined_mc.members.clone(), inter.refined_mc.mean())
        }
        Phase::EndToEnd => {
            let res = model.forward_residual(p, input, &inter, Mode::Train, rng)?;
            let rate_res = bits_from_likelihoods(&model.res_prior.likelihood(p, &res.res_hat)).scale(1.0 / pixels);
            let d = ensemble_aware_loss(target, &res.recon.members, cfg.k, cfg.clip_mode)?
                .add(&mse(target, &res.final_recon));
            let loss = rate_mv.add(&rate_res).add(&d.scale(cfg.lambda));
            (loss, Some(rate_res), res.recon.members.clone(), res.final_recon)
        }
    };
    let report = LossReport {
        total: scalar(&loss),
        rate_mv_bpp: scalar(&rate_mv),
        rate_res_bpp: rate_res.as_ref().map(scalar).unwrap_or(0.0),
        distortion_mse: scalar(&mse(&target.detach(), &final_pred.detach())),
        per_member_mse: members
            .iter()
            .map(|m| scalar(&mse(&target.detach(), &m.detach())))
            .collect(),
    };
    Ok((loss, report))
}

/// Gradient of the summed member MSEs w.r.t. the current frame, used by
/// the FGSM probe. The frame enters both as input and as target.
pub fn input_gradient(
    model: &CodecModel,
    reference: &Tensor,
    current: &Tensor,
    phase: Phase,
    rng: &mut impl Rng,
) -> Result<Vec<f32>> {
    let p = model.params.bind_frozen();
    let x = Tensor::var(current.to_vec(), current.shape());
    let inter = model.forward_inter(&p, &x, reference, Mode::Train, rng)?;
    let members = match phase {
        Phase::Warmup => inter.refined_mc.members,
        Phase::EndToEnd => model.forward_residual(&p, &x, &inter, Mode::Train, rng)?.recon.members,
    };
    let terms: Vec<Tensor> = members.iter().map(|m| mse(&x, m)).collect();
    let g = autograd::sum_tensors(&terms).backward();
    Ok(g.get_or_zeros(&x))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub bpp_mv: f64,
    pub bpp_res: f64,
    pub psnr: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("step,loss,bpp_mv,bpp_res,psnr\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.step, r.loss, r.bpp_mv, r.bpp_res, r.psnr);
    }
    s
}

/// Exponential moving average with a 200-step horizon.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Ema {
    value: Option<f64>,
}

impl Ema {
    pub const HORIZON: f64 = 200.0;

    pub fn update(&mut self, x: f64) -> f64 {
        let v = match self.value {
            None => x,
            Some(v) => v + (x - v) / Self::HORIZON,
        };
        self.value = Some(v);
        v
    }

    pub fn get(&self) -> Option<f64> {
        self.value
    }
}

/// Optimizer state and schedule around a [`CodecModel`].
pub struct Trainer {
    pub model: CodecModel,
    pub cfg: TrainConfig,
    pub step: usize,
    pub counters: FgsmCounters,
    pub metrics: Vec<MetricsRow>,
    pub ema: Ema,
    /// Loss EMA when the warm-up phase ended.
    pub ema_at_warmup: Option<f64>,
    pub last_lr: f32,
    optimizer: AdamW,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: CodecModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(model.h())?;
        let optimizer = AdamW::new(&model.params, cfg.weight_decay);
        let rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x5452_4149, 0));
        Ok(Self {
            model,
            cfg,
            step: 0,
            counters: FgsmCounters::default(),
            metrics: Vec::new(),
            ema: Ema::default(),
            ema_at_warmup: None,
            last_lr: 0.0,
            optimizer,
            rng,
        })
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        Self::new(CodecModel::new(cfg)?, TrainConfig::from_config(cfg)?)
    }

    pub fn phase(&self) -> Phase {
        self.cfg.phase_at(self.step)
    }

    /// One optimizer update on an explicit batch (with FGSM if enabled).
    pub fn step_on(&mut self, reference: &Tensor, current: &Tensor) -> Result<LossReport> {
        let phase = self.phase();
        let step_index = self.step;
        let lr = self.cfg.lr_at(step_index);
        let model = &self.model;
        let cfg = &self.cfg;
        let mut pending = None;
        let report = fgsm_training_step(
            current,
            &cfg.fgsm,
            &mut self.rng,
            &mut self.counters,
            |x, r| input_gradient(model, reference, x, phase, r),
            |input, target, r| {
                let bound = match phase {
                    Phase::Warmup => model.params.bind_where(|n| !is_residual_param(n)),
                    Phase::EndToEnd => model.params.bind(),
                };
                let (loss, report) = training_loss(model, &bound, reference, input, target, phase, cfg, r)?;
                if !report.is_finite() {
                    return Err(Error::Divergence {
                        step: step_index,
                        reason: format!("non-finite loss {report:?}"),
                    });
                }
                let g = loss.backward();
                pending = Some(bound.collect(&g));
                Ok(report)
            },
        )?;
        let mut grads = pending.expect("training step produced gradients");
        let norm = clip_grad_norm(&mut grads, self.cfg.grad_clip);
        if !norm.is_finite() {
            return Err(Error::Divergence {
                step: step_index,
                reason: "non-finite gradient norm".into(),
            });
        }
        self.optimizer.step(&mut self.model.params, &grads, lr);
        self.last_lr = lr;
        self.step += 1;
        let ema = self.ema.update(report.total);
        if self.step == self.cfg.warmup_steps {
            self.ema_at_warmup = Some(ema);
        }
        Ok(report)
    }

    pub fn train_step(&mut self, data: &TrainingData) -> Result<LossReport> {
        let (reference, current) = data.batch(self.step as u64, self.cfg.batch, self.cfg.crop)?;
        self.step_on(&reference, &current)
    }

    fn checkpoint_dir(&self, root: &Path) -> PathBuf {
        root.join("ckpt").join(format!("step_{:08}", self.step))
    }

    pub fn save_checkpoint(&self, root: &Path) -> Result<PathBuf> {
        let dir = self.checkpoint_dir(root);
        checkpoint::save(&self.model, &dir.join(checkpoint::CHECKPOINT_FILE))?;
        Ok(dir)
    }

    /// Trains until `total_steps`, logging and checkpointing as configured.
    /// `on_log` sees every logged row.
    pub fn run(&mut self, data: &TrainingData, mut on_log: impl FnMut(&MetricsRow)) -> Result<()> {
        while self.step < self.cfg.total_steps {
            let r = self.train_step(data)?;
            let log_now = self.cfg.log_every > 0 && self.step.is_multiple_of(self.cfg.log_every);
            if log_now || self.step == self.cfg.total_steps {
                let row = MetricsRow {
                    step: self.step,
                    loss: r.total,
                    bpp_mv: r.rate_mv_bpp,
                    bpp_res: r.rate_res_bpp,
                    psnr: psnr_from_mse(r.distortion_mse),
                };
                on_log(&row);
                self.metrics.push(row);
            }
            if let Some(root) = self.cfg.out_dir.clone() {
                let periodic = self.cfg.checkpoint_every > 0 && self.step.is_multiple_of(self.cfg.checkpoint_every);
                if periodic || self.step == self.cfg.total_steps {
                    self.save_checkpoint(&root)?;
                    let path = root.join("metrics.csv");
                    std::fs::write(&path, metrics_csv(&self.metrics)).map_err(|e| Error::io(&path, e))?;
                }
            }
        }
        Ok(())
    }
}

/// Mean rate-distortion statistics of a model on held-out pairs with real
/// rounding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeldoutReport {
    pub rd_loss: f64,
    pub bpp: f64,
    pub psnr_db: f64,
    pub mse: f64,
}

pub fn heldout_rd_loss(model: &CodecModel, pairs: &[(Frame, Frame)], lambda: f64) -> Result<HeldoutReport> {
    if pairs.is_empty() {
        return Err(Error::Evaluation("no held-out pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut rd, mut bpp, mut err, mut ps) = (0.0, 0.0, 0.0, 0.0);
    for (reference, current) in pairs {
        let r = pframe_forward(model, current, reference, Mode::Infer, &mut rng)?;
        let pixels = (current.height() * current.width()) as f64;
        let rate = r.bits() / pixels;
        let d = current.mse(&r.reconstruction)?;
        rd += rate + lambda * d;
        bpp += rate;
        err += d;
        ps += psnr_from_mse(d);
    }
    let n = pairs.len() as f64;
    Ok(HeldoutReport {
        rd_loss: rd / n,
        bpp: bpp / n,
        psnr_db: ps / n,
        mse: err / n,
    })
}

/// One ablation cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationRow {
    pub h: usize,
    pub k: usize,
    pub fgsm: bool,
    pub heldout: HeldoutReport,
}

/// Grid of ensemble sizes, clipping ranks and FGSM settings; every cell is
/// trained from scratch with `base` and scored on the same held-out pairs.
pub fn ablate(base: &Config, heldout_pairs: usize, mut progress: impl FnMut(&str)) -> Result<Vec<AblationRow>> {
    let hs = base.list("ablate.h_values")?;
    let ks = base.list("ablate.k_values")?;
    let fgsm_variants: &[bool] = if base.bool("ablate.fgsm")? { &[false, true] } else { &[false] };
    let lambda = base.f32("loss.lambda")? as f64;
    let mut cells = Vec::new();
    if !hs.contains(&1) {
        cells.push((1, 1, false));
    }
    for &h in &hs {
        let k_list: Vec<usize> = if ks.is_empty() { (1..=h).collect() } else { ks.iter().copied().filter(|&k| k <= h).collect() };
        for k in k_list {
            for &f in fgsm_variants {
                cells.push((h, k, f));
            }
        }
    }
    let mut rows = Vec::new();
    for (h, k, f) in cells {
        let cfg = base
            .clone()
            .with("codec.h", h)?
            .with("loss.k", k)?
            .with("fgsm.enabled", f)?
            .with("train.out_dir", "")?;
        progress(&format!("training h={h} k={k} fgsm={f}"));
        let data = TrainingData::from_config(&cfg)?;
        let mut trainer = Trainer::from_config(&cfg)?;
        trainer.run(&data, |_| {})?;
        let pairs = data.heldout(heldout_pairs, trainer.cfg.crop)?;
        rows.push(AblationRow {
            h,
            k,
            fgsm: f,
            heldout: heldout_rd_loss(&trainer.model, &pairs, lambda)?,
        });
    }
    Ok(rows)
}

/// `h,k,fgsm,heldout_rd_loss,bpp,psnr_db,delta_rd_loss,delta_percent`
/// with deltas relative to the h=1, k=1, FGSM-off anchor.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let anchor = rows
        .iter()
        .find(|r| r.h == 1 && r.k == 1 && !r.fgsm)
        .map(|r| r.heldout.rd_loss);
    let mut s = String::from("h,k,fgsm,heldout_rd_loss,bpp,psnr_db,delta_rd_loss,delta_percent\n");
    for r in rows {
        let (d, pct) = match anchor {
            Some(a) => (r.heldout.rd_loss - a, (r.heldout.rd_loss - a) / a * 100.0),
            None => (f64::NAN, f64::NAN),
        };
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.4},{:.6},{:.3}",
            r.h, r.k, r.fgsm, r.heldout.rd_loss, r.heldout.bpp, r.heldout.psnr_db, d, pct
        );
    }
    s
}

/// Configuration of one desk-experiment run.
pub fn desk_run_config(h: usize, seed: u64) -> Result<Config> {
    desk_config()
        .with("codec.h", h)?
        .with("loss.k", 1)?
        .with("seed", seed)?
        .with("train.out_dir", "")
}

/// `$UNCODEC_CACHE/desk`, or `target/uncodec-cache/desk` in the workspace.
pub fn default_cache_dir() -> PathBuf {
    match std::env::var_os("UNCODEC_CACHE") {
        Some(p) => PathBuf::from(p).join("desk"),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/uncodec-cache/desk"),
    }
}

/// Seeds and ensemble sizes of the desk experiment.
pub const DESK_SEEDS: [u64; 3] = [0, 1, 2];
pub const DESK_H: [usize; 2] = [1, 4];

const CACHE_TAG: &str = "desk-v1";

/// Stable directory name for a trained configuration.
pub fn cache_key(cfg: &Config) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::new()
        .chain_update(CACHE_TAG)
        .chain_update(cfg.echo())
        .finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads the model trained with `cfg` from `cache_root`, training and
/// caching it first when absent.
pub fn load_or_train(cfg: &Config, cache_root: &Path, mut progress: impl FnMut(&MetricsRow)) -> Result<CodecModel> {
    let dir = cache_root.join(cache_key(cfg));
    let file = dir.join(checkpoint::CHECKPOINT_FILE);
    if file.is_file() {
        return checkpoint::load(&file);
    }
    let data = TrainingData::from_config(cfg)?;
    let mut trainer = Trainer::from_config(cfg)?;
    trainer.run(&data, &mut progress)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let metrics = dir.join("metrics.csv");
    std::fs::write(&metrics, metrics_csv(&trainer.metrics)).map_err(|e| Error::io(&metrics, e))?;
    let summary = dir.join("summary.txt");
    let text = format!(
        "steps={}\nema_at_warmup={}\nema_final={}\n",
        trainer.step,
        trainer.ema_at_warmup.unwrap_or(f64::NAN),
        trainer.ema.get().unwrap_or(f64::NAN)
    );
    std::fs::write(&summary, text).map_err(|e| Error::io(&summary, e))?;
    let echo = dir.join("config.txt");
    std::fs::write(&echo, cfg.echo()).map_err(|e| Error::io(&echo, e))?;
    checkpoint::save(&trainer.model, &file)?;
    Ok(trainer.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let cfg = TrainConfig::from_config(&Config::default()).unwrap();
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert_eq!(cfg.lr_at(17_999), 1e-4);
        assert_eq!(cfg.lr_at(18_000), 1e-5);
        assert_eq!(cfg.phase_at(1999), Phase::Warmup);
        assert_eq!(cfg.phase_at(2000), Phase::EndToEnd);
    }

    #[test]
    fn invalid_configs() {
        let bad = Config::default().with("train.warmup_steps", 30_000).unwrap();
        assert!(matches!(TrainConfig::from_config(&bad), Err(Error::Config(_))));
        let bad = Config::default().with("loss.k", 5).unwrap();
        assert!(TrainConfig::from_config(&bad).is_err());
    }

    #[test]
    fn synthetic_batches_are_deterministic_and_heldout_is_disjoint() {
        let data = TrainingData::from_config(&Config::default()).unwrap();
        let (a, b) = data.batch(3, 2, 32).unwrap();
        let (c, d) = data.batch(3, 2, 32).unwrap();
        assert_eq!(a.data(), c.data());
        assert_eq!(b.data(), d.data());
        let held = data.heldout(2, 32).unwrap();
        let train = data.pair(0, 0, 32).unwrap();
        assert_ne!(held[0].1, train.1);
    }

    #[test]
    fn ema_horizon() {
        let mut e = Ema::default();
        assert_eq!(e.update(2.0), 2.0);
        assert!((e.update(4.0) - 2.01).abs() < 1e-12);
    }
}
