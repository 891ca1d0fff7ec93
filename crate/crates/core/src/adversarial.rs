//! Fast-gradient-sign perturbation of the current frame during training.

use std::str::FromStr;

use autograd::Tensor;
use rand::Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::losses::LossReport;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FgsmScope {
    /// Perturb the frame as network input and as distortion target.
    #[default]
    Both,
    InputOnly,
}

impl FromStr for FgsmScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(FgsmScope::Both),
            "input_only" => Ok(FgsmScope::InputOnly),
            _ => Err(Error::Config(format!("unknown fgsm scope {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FgsmConfig {
    pub enabled: bool,
    pub epsilon: f32,
    pub scope: FgsmScope,
}

impl Default for FgsmConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epsilon: 4.0 / 255.0,
            scope: FgsmScope::Both,
        }
    }
}

impl FgsmConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        let epsilon = cfg.f32("fgsm.epsilon")?;
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Config(format!("fgsm.epsilon must lie in [0, 1), got {epsilon}")));
        }
        Ok(Self {
            enabled: cfg.bool("fgsm.enabled")?,
            epsilon,
            scope: cfg.get("fgsm.scope").parse()?,
        })
    }
}

fn sign(g: f32) -> f32 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `clamp(x + epsilon * sign(grad), 0, 1)` with `sign(0) = 0`.
pub fn fgsm_perturb_values(x: &[f32], grad: &[f32], epsilon: f32) -> Vec<f32> {
    assert_eq!(x.len(), grad.len(), "gradient does not match the frame");
    x.iter()
        .zip(grad)
        .map(|(&v, &g)| (v + epsilon * sign(g)).clamp(0.0, 1.0))
        .collect()
}

pub fn fgsm_perturb(x: &Frame, grad: &[f32], epsilon: f32) -> Result<Frame> {
    if grad.len() != x.data().len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} elements, frame has {}",
            grad.len(),
            x.data().len()
        )));
    }
    let (c, h, w) = x.dims();
    Frame::new(c, h, w, fgsm_perturb_values(x.data(), grad, epsilon))
}

/// Perturbs a batch tensor; the result is a constant.
pub fn fgsm_perturb_tensor(x: &Tensor, grad: &[f32], epsilon: f32) -> Tensor {
    Tensor::new(fgsm_perturb_values(x.data(), grad, epsilon), x.shape())
}

/// Counts forward passes and perturbations performed by
/// [`fgsm_training_step`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FgsmCounters {
    pub forwards: usize,
    pub perturbations: usize,
}

/// One training step with optional FGSM on the current frame.
///
/// `probe(current, rng)` runs a forward/backward pass and returns the
/// gradient of the distortion w.r.t. `current`; it receives a clone of the
/// step's rng so the main step draws the same noise as an unperturbed step.
/// `step(input, target, rng)` performs the actual optimizer update.
pub fn fgsm_training_step<R, P, S>(
    current: &Tensor,
    cfg: &FgsmConfig,
    rng: &mut R,
    counters: &mut FgsmCounters,
    probe: P,
    step: S,
) -> Result<LossReport>
where
    R: Rng + Clone,
    P: FnOnce(&Tensor, &mut R) -> Result<Vec<f32>>,
    S: FnOnce(&Tensor, &Tensor, &mut R) -> Result<LossReport>,
{
    if !cfg.enabled {
        counters.forwards += 1;
        return step(current, current, rng);
    }
    let mut probe_rng = rng.clone();
    let grad = probe(current, &mut probe_rng)?;
    counters.forwards += 1;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("FGSM input gradient".into()));
    }
    let perturbed = fgsm_perturb_tensor(current, &grad, cfg.epsilon);
    counters.perturbations += 1;
    let target = match cfg.scope {
        FgsmScope::Both => perturbed.clone(),
        FgsmScope::InputOnly => current.clone(),
    };
    counters.forwards += 1;
    step(&perturbed, &target, rng)
}
