use autograd::{Bound, Conv2d, Params, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::ensemble::{mixture_mean, EnsembleDecoder, EnsembleDecoderConfig, EnsemblePrediction, PredictionKind};
use crate::error::{Error, Result};
use crate::motion::{warp, MotionNet};
use crate::transform_coding::{
    quantize_train, round_tensor, AnalysisEncoder, EntropyCoder, FactorizedCdf, FactorizedPrior, DOWNSAMPLE,
};

const LEAK: f32 = 0.1;
pub const REFINE_LAYERS: usize = 5;

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecConfig {
    pub h: usize,
    pub image_channels: usize,
    pub latent_channels_mv: usize,
    pub latent_channels_res: usize,
    pub hidden_channels: usize,
    pub backbone_channels: usize,
    pub branch_channels: usize,
    pub motion_channels: usize,
    pub motion_levels: usize,
    pub refine_channels: usize,
    pub tail_mass: f64,
}

impl CodecConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let out = Self {
            h: cfg.usize("codec.h")?,
            image_channels: 3,
            latent_channels_mv: cfg.usize("codec.latent_channels_mv")?,
            latent_channels_res: cfg.usize("codec.latent_channels_res")?,
            hidden_channels: cfg.usize("codec.hidden_channels")?,
            backbone_channels: cfg.usize("codec.backbone_channels")?,
            branch_channels: cfg.usize("codec.branch_channels")?,
            motion_channels: cfg.usize("codec.motion_channels")?,
            motion_levels: cfg.usize("codec.motion_levels")?,
            refine_channels: cfg.usize("codec.refine_channels")?,
            tail_mass: cfg.f32("codec.tail_mass")? as f64,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.h,
            self.latent_channels_mv,
            self.latent_channels_res,
            self.hidden_channels,
            self.backbone_channels,
            self.branch_channels,
            self.motion_channels,
            self.refine_channels,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("codec widths and h must be positive".into()));
        }
        if !(1..=5).contains(&self.motion_levels) {
            return Err(Error::Config("codec.motion_levels must lie in 1..=5".into()));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass < 0.01) {
            return Err(Error::Config("codec.tail_mass must lie in (0, 0.01)".into()));
        }
        Ok(())
    }
}

/// Five 3×3 convolutions; the last one starts at zero so the net begins as
/// the identity around its skip connection.
#[derive(Clone, Debug)]
pub struct RefineNet {
    layers: Vec<Conv2d>,
}

impl RefineNet {
    pub fn new(params: &mut Params, name: &str, cin: usize, width: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(REFINE_LAYERS);
        let mut c = cin;
        for i in 0..REFINE_LAYERS - 1 {
            layers.push(Conv2d::new(params, &format!("{name}.conv{i}"), c, width, 3, 1, rng));
            c = width;
        }
        layers.push(Conv2d::zeroed(params, &format!("{name}.conv{}", REFINE_LAYERS - 1), c, cout, 3, 1));
        Self { layers }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(p, &h);
            if i + 1 < self.layers.len() {
                h = h.leaky_relu(LEAK);
            }
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Additive uniform noise in place of rounding.
    Train,
    /// Integer rounding.
    Infer,
}

/// Motion path of a P-frame.
#[derive(Clone, Debug)]
pub struct InterOutputs {
    pub flow: Tensor,
    pub mv_latent: Tensor,
    pub mv_hat: Tensor,
    pub mv: EnsemblePrediction,
    pub warps: Vec<Tensor>,
    pub refined_mc: EnsemblePrediction,
}

/// Residual path of a P-frame.
#[derive(Clone, Debug)]
pub struct ResidualOutputs {
    pub target: Tensor,
    pub res_latent: Tensor,
    pub res_hat: Tensor,
    pub res: EnsemblePrediction,
    pub recon: EnsemblePrediction,
    pub final_recon: Tensor,
}

/// Names of the parameter groups, as prefixes.
pub const MOTION_PATH: &[&str] = &["motion.", "mv_enc.", "mv_dec.", "pred_refine.", "mv_prior."];
pub const RESIDUAL_PATH: &[&str] = &["res_enc.", "res_dec.", "recon_refine.", "res_prior."];

pub fn is_residual_param(name: &str) -> bool {
    RESIDUAL_PATH.iter().any(|p| name.starts_with(p))
}

/// The full P-frame codec: parameters plus module structure.
#[derive(Clone, Debug)]
pub struct CodecModel {
    pub config: Config,
    pub arch: CodecConfig,
    pub params: Params,
    pub motion: MotionNet,
    pub mv_encoder: AnalysisEncoder,
    pub mv_decoder: EnsembleDecoder,
    pub pred_refine: RefineNet,
    pub res_encoder: AnalysisEncoder,
    pub res_decoder: EnsembleDecoder,
    pub recon_refine: RefineNet,
    pub mv_prior: FactorizedPrior,
    pub res_prior: FactorizedPrior,
}

impl CodecModel {
    /// Fresh model initialized from the config's `seed`.
    pub fn new(config: &Config) -> Result<Self> {
        let arch = CodecConfig::from_config(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.u64("seed")?);
        Self::build(config.clone(), arch, &mut rng)
    }

    fn build(config: Config, a: CodecConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = Params::new();
        let c = a.image_channels;
        let motion = MotionNet::new(&mut params, "motion", c, a.motion_channels, a.motion_levels, rng);
        let mv_encoder = AnalysisEncoder::new(&mut params, "mv_enc", 2, a.hidden_channels, a.latent_channels_mv, rng);
        let dec = |latent, out| EnsembleDecoderConfig {
            h: a.h,
            latent_channels: latent,
            hidden_channels: a.hidden_channels,
            backbone_channels: a.backbone_channels,
            branch_channels: a.branch_channels,
            out_channels: out,
        };
        let mv_decoder = EnsembleDecoder::new(&mut params, "mv_dec", dec(a.latent_channels_mv, 2), rng)?;
        let pred_refine = RefineNet::new(&mut params, "pred_refine", (a.h + 1) * c, a.refine_channels, a.h * c, rng);
        let res_encoder = AnalysisEncoder::new(&mut params, "res_enc", c, a.hidden_channels, a.latent_channels_res, rng);
        let res_decoder = EnsembleDecoder::new(&mut params, "res_dec", dec(a.latent_channels_res, c), rng)?;
        let recon_refine = RefineNet::new(&mut params, "recon_refine", 2 * a.h * c, a.refine_channels, c, rng);
        let mv_prior = FactorizedPrior::new(&mut params, "mv_prior", a.latent_channels_mv, a.tail_mass, rng);
        let res_prior = FactorizedPrior::new(&mut params, "res_prior", a.latent_channels_res, a.tail_mass, rng);
        Ok(Self {
            config,
            arch: a,
            params,
            motion,
            mv_encoder,
            mv_decoder,
            pred_refine,
            res_encoder,
            res_decoder,
            recon_refine,
            mv_prior,
            res_prior,
        })
    }

    pub fn h(&self) -> usize {
        self.arch.h
    }

    /// First four bytes (big-endian) of SHA-256 over the config echo and
    /// every parameter's name, shape and little-endian values.
    pub fn model_id(&self) -> u32 {
        let mut hasher = Sha256::new();
        hasher.update(self.config.echo().as_bytes());
        for id in self.params.ids() {
            hasher.update(self.params.name(id).as_bytes());
            for &d in self.params.shape(id) {
                hasher.update((d as u32).to_le_bytes());
            }
            for v in self.params.value(id) {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        u32::from_be_bytes([digest[0], digest[1], digest[2], digest[3]])
    }

    pub fn mv_cdf(&self) -> FactorizedCdf {
        self.mv_prior.snapshot(&self.params)
    }

    pub fn res_cdf(&self) -> FactorizedCdf {
        self.res_prior.snapshot(&self.params)
    }

    /// Frozen entropy coders for (MV, residual) streams.
    pub fn entropy_coders(&self) -> (EntropyCoder, EntropyCoder) {
        let id = self.model_id();
        (EntropyCoder::new(&self.mv_cdf(), id), EntropyCoder::new(&self.res_cdf(), id))
    }

    pub fn check_input(&self, t: &Tensor) -> Result<()> {
        let (_, c, h, w) = t.dims4();
        if c != self.arch.image_channels {
            return Err(Error::ShapeMismatch(format!(
                "model codes {} channels, input has {c}",
                self.arch.image_channels
            )));
        }
        if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!("{h}x{w} is not a positive multiple of {DOWNSAMPLE}")));
        }
        Ok(())
    }

    pub fn quantize(latent: &Tensor, mode: Mode, rng: &mut impl Rng) -> Tensor {
        match mode {
            Mode::Train => quantize_train(latent, rng),
            Mode::Infer => round_tensor(latent),
        }
    }

    /// Decoder side of the motion path: MV ensemble, `h` warps and the
    /// refined motion-compensated predictions.
    pub fn motion_compensate(
        &self,
        p: &Bound,
        reference: &Tensor,
        mv_hat: &Tensor,
    ) -> Result<(EnsemblePrediction, Vec<Tensor>, EnsemblePrediction)> {
        let mv = self.mv_decoder.decode(p, mv_hat, PredictionKind::Mv)?;
        let (_, _, h, w) = reference.dims4();
        if mv.shape()[2] != h || mv.shape()[3] != w {
            return Err(Error::ShapeMismatch(format!("decoded flow {:?} vs frame {h}x{w}", mv.shape())));
        }
        let warps: Vec<Tensor> = mv.members.iter().map(|f| warp(reference, f)).collect();
        let mut input = warps.clone();
        input.push(reference.clone());
        let correction = self.pred_refine.forward(p, &Tensor::cat_channels(&input));
        let c = self.arch.image_channels;
        let refined = warps
            .iter()
            .enumerate()
            .map(|(m, wm)| wm.add(&correction.narrow_channels(m * c, c)))
            .collect();
        Ok((mv, warps, EnsemblePrediction::new(PredictionKind::MotionCompensation, refined)?))
    }

    /// Decoder side of the residual path.
    pub fn reconstruct(
        &self,
        p: &Bound,
        refined_mc: &EnsemblePrediction,
        res_hat: &Tensor,
    ) -> Result<(EnsemblePrediction, EnsemblePrediction, Tensor)> {
        let res = self.res_decoder.decode(p, res_hat, PredictionKind::Residual)?;
        let recon_members: Vec<Tensor> = refined_mc
            .members
            .iter()
            .zip(&res.members)
            .map(|(mc, r)| mc.add(r))
            .collect();
        let recon = EnsemblePrediction::new(PredictionKind::Reconstruction, recon_members)?;
        let mut input = recon.members.clone();
        input.extend(refined_mc.members.iter().cloned());
        let correction = self.recon_refine.forward(p, &Tensor::cat_channels(&input));
        let final_recon = mixture_mean(&recon).add(&correction);
        Ok((res, recon, final_recon))
    }

    pub fn forward_inter(
        &self,
        p: &Bound,
        current: &Tensor,
        reference: &Tensor,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<InterOutputs> {
        self.check_input(current)?;
        if current.shape() != reference.shape() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", current.shape(), reference.shape())));
        }
        let flow = self.motion.forward(p, current, reference);
        let mv_latent = self.mv_encoder.forward(p, &flow);
        let mv_hat = Self::quantize(&mv_latent, mode, rng);
        let (mv, warps, refined_mc) = self.motion_compensate(p, reference, &mv_hat)?;
        Ok(InterOutputs {
            flow,
            mv_latent,
            mv_hat,
            mv,
            warps,
            refined_mc,
        })
    }

    pub fn forward_residual(
        &self,
        p: &Bound,
        current: &Tensor,
        inter: &InterOutputs,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<ResidualOutputs> {
        let target = current.sub(&mixture_mean(&inter.refined_mc));
        let res_latent = self.res_encoder.forward(p, &target);
        let res_hat = Self::quantize(&res_latent, mode, rng);
        let (res, recon, final_recon) = self.reconstruct(p, &inter.refined_mc, &res_hat)?;
        Ok(ResidualOutputs {
            target,
            res_latent,
            res_hat,
            res,
            recon,
            final_recon,
        })
    }

    /// Per-parameter-group scalar counts.
    pub fn size_report(&self) -> ModelSizeReport {
        let count = |prefix: &str| {
            self.params
                .ids()
                .filter(|&id| self.params.name(id).starts_with(prefix))
                .map(|id| self.params.value(id).len())
                .sum::<usize>()
        };
        let groups: Vec<(String, usize)> = MOTION_PATH
            .iter()
            .chain(RESIDUAL_PATH)
            .map(|p| (p.trim_end_matches('.').to_string(), count(p)))
            .collect();
        let branch = |dec: &EnsembleDecoder, m: usize| {
            let b = &dec.branches()[m];
            [b.conv1.weight, b.conv1.bias, b.conv2.weight, b.conv2.bias]
                .iter()
                .map(|&id| self.params.value(id).len())
                .sum::<usize>()
        };
        ModelSizeReport {
            h: self.h(),
            total: self.params.num_scalars(),
            groups,
            branch_params_per_member: branch(&self.mv_decoder, 0) + branch(&self.res_decoder, 0),
            branch_conv_layers_per_member: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSizeReport {
    pub h: usize,
    pub total: usize,
    pub groups: Vec<(String, usize)>,
    /// Parameters of one member's MV branch plus residual branch.
    pub branch_params_per_member: usize,
    /// Two convolutions per branch, one branch per decoder.
    pub branch_conv_layers_per_member: usize,
}

impl std::fmt::Display for ModelSizeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "h = {}: {} parameters", self.h, self.total)?;
        for (g, n) in &self.groups {
            writeln!(f, "  {g:<14} {n:>10}")?;
        }
        write!(
            f,
            "  per member: {} branch parameters in {} conv layers",
            self.branch_params_per_member, self.branch_conv_layers_per_member
        )
    }
}

/// Model size for the default widths of `config` with ensemble size `h`.
pub fn model_size_report(config: &Config, h: usize) -> Result<ModelSizeReport> {
    Ok(CodecModel::new(&config.clone().with("codec.h", h)?)?.size_report())
}
