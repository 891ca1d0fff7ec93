//! Shared-backbone decoders with `h` lightweight branches, and the Gaussian
//! mixture statistics of their outputs.

use std::cell::Cell;

use autograd::{mean_tensors, Bound, Conv2d, ConvTranspose2d, Params, Tensor};
use rand::Rng;

use crate::error::{Error, Result};

const LEAK: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictionKind {
    Mv,
    Residual,
    MotionCompensation,
    Reconstruction,
}

/// `h` member tensors of identical shape.
#[derive(Clone, Debug)]
pub struct EnsemblePrediction {
    pub kind: PredictionKind,
    pub members: Vec<Tensor>,
}

impl EnsemblePrediction {
    pub fn new(kind: PredictionKind, members: Vec<Tensor>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::ShapeMismatch("an ensemble needs at least one member".into()))?;
        if members.iter().any(|m| m.shape() != first.shape()) {
            return Err(Error::ShapeMismatch("ensemble members differ in shape".into()));
        }
        Ok(Self { kind, members })
    }

    pub fn h(&self) -> usize {
        self.members.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.members[0].shape()
    }

    pub fn mean(&self) -> Tensor {
        mixture_mean(self)
    }

    pub fn detach(&self) -> Self {
        Self {
            kind: self.kind,
            members: self.members.iter().map(Tensor::detach).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnsembleDecoderConfig {
    pub h: usize,
    pub latent_channels: usize,
    pub hidden_channels: usize,
    pub backbone_channels: usize,
    pub branch_channels: usize,
    pub out_channels: usize,
}

/// Two 3×3 convolutions with one leaky ReLU between them.
#[derive(Clone, Debug)]
pub struct Branch {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

/// Synthesis transform: four ×2 transposed convolutions shared by all
/// members, then one [`Branch`] per member.
#[derive(Debug)]
pub struct EnsembleDecoder {
    cfg: EnsembleDecoderConfig,
    backbone: Vec<ConvTranspose2d>,
    branches: Vec<Branch>,
    backbone_calls: Cell<usize>,
}

impl Clone for EnsembleDecoder {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg,
            backbone: self.backbone.clone(),
            branches: self.branches.clone(),
            backbone_calls: Cell::new(0),
        }
    }
}

impl EnsembleDecoder {
    pub fn new(params: &mut Params, name: &str, cfg: EnsembleDecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.h == 0 {
            return Err(Error::Config("ensemble size h must be at least 1".into()));
        }
        let widths = [
            cfg.latent_channels,
            cfg.hidden_channels,
            cfg.hidden_channels,
            cfg.hidden_channels,
            cfg.backbone_channels,
        ];
        let backbone = (0..4)
            .map(|i| ConvTranspose2d::new(params, &format!("{name}.up{i}"), widths[i], widths[i + 1], 5, rng))
            .collect();
        let branches = (0..cfg.h)
            .map(|m| Branch {
                conv1: Conv2d::new(
                    params,
                    &format!("{name}.branch{m}.conv1"),
                    cfg.backbone_channels,
                    cfg.branch_channels,
                    3,
                    1,
                    rng,
                ),
                conv2: Conv2d::new(
                    params,
                    &format!("{name}.branch{m}.conv2"),
                    cfg.branch_channels,
                    cfg.out_channels,
                    3,
                    1,
                    rng,
                ),
            })
            .collect();
        Ok(Self {
            cfg,
            backbone,
            branches,
            backbone_calls: Cell::new(0),
        })
    }

    pub fn config(&self) -> &EnsembleDecoderConfig {
        &self.cfg
    }

    pub fn h(&self) -> usize {
        self.branches.len()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Number of backbone evaluations since construction.
    pub fn backbone_calls(&self) -> usize {
        self.backbone_calls.get()
    }

    pub fn backbone_forward(&self, p: &Bound, code: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = code.dims4();
        if c != self.cfg.latent_channels {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} latent channels, got {c}",
                self.cfg.latent_channels
            )));
        }
        self.backbone_calls.set(self.backbone_calls.get() + 1);
        let mut x = code.clone();
        for layer in &self.backbone {
            x = layer.forward(p, &x).leaky_relu(LEAK);
        }
        Ok(x)
    }

    pub fn branch_forward(&self, p: &Bound, m: usize, features: &Tensor) -> Tensor {
        let b = &self.branches[m];
        b.conv2.forward(p, &b.conv1.forward(p, features).leaky_relu(LEAK))
    }

    pub fn decode(&self, p: &Bound, code: &Tensor, kind: PredictionKind) -> Result<EnsemblePrediction> {
        let features = self.backbone_forward(p, code)?;
        let members = (0..self.h()).map(|m| self.branch_forward(p, m, &features)).collect();
        EnsemblePrediction::new(kind, members)
    }

    /// Copies branch 0's parameters into every other branch.
    pub fn tie_branches(&self, params: &mut Params) {
        let src = &self.branches[0];
        let src_ids = [src.conv1.weight, src.conv1.bias, src.conv2.weight, src.conv2.bias];
        for b in &self.branches[1..] {
            let dst_ids = [b.conv1.weight, b.conv1.bias, b.conv2.weight, b.conv2.bias];
            for (s, d) in src_ids.into_iter().zip(dst_ids) {
                let v = params.value(s).to_vec();
                *params.value_mut(d) = v;
            }
        }
    }
}

/// Equal-weight mixture mean `(1/h) sum_m member_m`.
pub fn mixture_mean(pred: &EnsemblePrediction) -> Tensor {
    mean_tensors(&pred.members)
}

/// Mixture variance with unit member variances:
/// `(1/h) sum m^2 - ((1/h) sum m)^2 + 1`, elementwise (no gradient).
pub fn mixture_variance(pred: &EnsemblePrediction) -> Tensor {
    mixture_variance_with_sigmas(pred, &vec![1.0; pred.h()])
}

/// Mixture variance `(1/h) sum (sigma_m^2 + mu_m^2) - mu^2` with one
/// scalar standard deviation per member.
pub fn mixture_variance_with_sigmas(pred: &EnsemblePrediction, sigmas: &[f32]) -> Tensor {
    assert_eq!(sigmas.len(), pred.h(), "one sigma per member");
    let n = pred.members[0].numel();
    let h = pred.h() as f64;
    let sig2 = sigmas.iter().map(|s| (*s as f64).powi(2)).sum::<f64>() / h;
    let out = (0..n)
        .map(|i| {
            let mean = pred.members.iter().map(|m| m.data()[i] as f64).sum::<f64>() / h;
            let spread = pred
                .members
                .iter()
                .map(|m| (m.data()[i] as f64 - mean).powi(2))
                .sum::<f64>()
                / h;
            (spread + sig2) as f32
        })
        .collect();
    Tensor::new(out, pred.shape())
}
