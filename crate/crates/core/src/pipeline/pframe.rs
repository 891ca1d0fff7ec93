use autograd::Tensor;
use rand::Rng;

use super::model::{CodecModel, Mode};
use crate::ensemble::EnsemblePrediction;
use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::transform_coding::{estimate_bits, DOWNSAMPLE};

/// Result of coding one P-frame (no gradients).
#[derive(Clone, Debug)]
pub struct PFrameResult {
    pub reconstruction: Frame,
    pub bits_mv: f64,
    pub bits_res: f64,
    pub mv_ensemble: EnsemblePrediction,
    pub res_ensemble: EnsemblePrediction,
    pub refined_mc: EnsemblePrediction,
}

impl PFrameResult {
    pub fn bits(&self) -> f64 {
        self.bits_mv + self.bits_res
    }
}

/// Smallest multiple of `m` that is at least `v`.
pub fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// 1×C×H'×W' tensor with edge replication up to multiples of `multiple`.
pub fn pad_frame(frame: &Frame, multiple: usize) -> Tensor {
    let (c, h, w) = frame.dims();
    let (ph, pw) = (round_up(h, multiple), round_up(w, multiple));
    let mut data = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                data.push(frame.get(ch, y.min(h - 1), x.min(w - 1)));
            }
        }
    }
    Tensor::new(data, &[1, c, ph, pw])
}

/// Top-left `h`×`w` window of sample 0, clamped into a frame.
pub fn crop_to_frame(t: &Tensor, h: usize, w: usize) -> Result<Frame> {
    let (_, c, th, tw) = t.dims4();
    if h > th || w > tw {
        return Err(Error::ShapeMismatch(format!("cannot crop {th}x{tw} to {h}x{w}")));
    }
    let d = t.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * th + y) * tw;
            out.extend(d[row..row + w].iter().map(|v| {
                if v.is_finite() {
                    Ok(v.clamp(0.0, 1.0))
                } else {
                    Err(Error::NonFinite("reconstruction".into()))
                }
            }));
        }
    }
    Frame::new(c, h, w, out.into_iter().collect::<Result<Vec<_>>>()?)
}

fn latent_shape(t: &Tensor) -> [usize; 3] {
    let (_, c, h, w) = t.dims4();
    [c, h, w]
}

/// Runs the full P-frame codec on one frame pair without gradients. Bits
/// are the entropy-model estimates of the (noisy or rounded) latents.
pub fn pframe_forward(
    model: &CodecModel,
    x_t: &Frame,
    x_ref: &Frame,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<PFrameResult> {
    if x_t.dims() != x_ref.dims() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x_t.dims(), x_ref.dims())));
    }
    let (_, h, w) = x_t.dims();
    let p = model.params.bind_frozen();
    let cur = pad_frame(x_t, DOWNSAMPLE);
    let reference = pad_frame(x_ref, DOWNSAMPLE);
    let inter = model.forward_inter(&p, &cur, &reference, mode, rng)?;
    let res = model.forward_residual(&p, &cur, &inter, mode, rng)?;
    let bits_mv = estimate_bits(inter.mv_hat.data(), latent_shape(&inter.mv_hat), &model.mv_cdf())?;
    let bits_res = estimate_bits(res.res_hat.data(), latent_shape(&res.res_hat), &model.res_cdf())?;
    Ok(PFrameResult {
        reconstruction: crop_to_frame(&res.final_recon, h, w)?,
        bits_mv,
        bits_res,
        mv_ensemble: inter.mv,
        res_ensemble: res.res,
        refined_mc: inter.refined_mc,
    })
}
