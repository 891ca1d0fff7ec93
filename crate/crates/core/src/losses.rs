//! Ensemble-aware distortion, rate-distortion assembly and rate helpers.

use std::fmt;
use std::str::FromStr;

use autograd::{sum_tensors, Tensor};

use crate::error::{Error, Result};
use crate::frames::Frame;

/// How members worse than the k-th best are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClipMode {
    /// `min(L_m, L_p)` back-propagates through its smaller argument, so the
    /// k-th member receives one extra gradient copy per clipped member.
    #[default]
    RouteToKth,
    /// Clipped members contribute a constant.
    DetachClipped,
}

impl FromStr for ClipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "route_to_kth" => Ok(ClipMode::RouteToKth),
            "detach_clipped" => Ok(ClipMode::DetachClipped),
            _ => Err(Error::Config(format!("unknown clip mode {s:?}"))),
        }
    }
}

impl fmt::Display for ClipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClipMode::RouteToKth => "route_to_kth",
            ClipMode::DetachClipped => "detach_clipped",
        })
    }
}

/// Index of the k-th smallest value (1-based `k`), ties broken by the
/// lowest index.
pub fn kth_smallest_index(losses: &[f32], k: usize) -> Result<usize> {
    if k == 0 || k > losses.len() {
        return Err(Error::OutOfRange(format!("k = {k} with {} members", losses.len())));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    Ok(order[k - 1])
}

/// Per-pixel squared error averaged over channels: N×1×H×W.
pub fn pixel_errors(target: &Tensor, pred: &Tensor) -> Tensor {
    pred.sub(target).sqr().mean_channels()
}

pub fn mse(target: &Tensor, pred: &Tensor) -> Tensor {
    pred.sub(target).sqr().mean_all()
}

/// `sum_m mean_px min(e_m, e_p)` where `e` is the per-pixel error and `p`
/// the member with the k-th smallest error at that pixel.
pub fn ensemble_aware_loss(target: &Tensor, members: &[Tensor], k: usize, mode: ClipMode) -> Result<Tensor> {
    if members.is_empty() || k == 0 || k > members.len() {
        return Err(Error::OutOfRange(format!("k = {k} with {} members", members.len())));
    }
    if let Some(m) = members.iter().find(|m| m.shape() != target.shape()) {
        return Err(Error::ShapeMismatch(format!(
            "member {:?} vs target {:?}",
            m.shape(),
            target.shape()
        )));
    }
    let errors: Vec<Tensor> = members.iter().map(|m| pixel_errors(target, m)).collect();
    let n = errors[0].numel();
    let mut kth = Vec::with_capacity(n);
    let mut scratch = vec![0.0f32; members.len()];
    for i in 0..n {
        for (s, e) in scratch.iter_mut().zip(&errors) {
            *s = e.data()[i];
        }
        kth.push(kth_smallest_index(&scratch, k)?);
    }
    let pivot = Tensor::select_per_element(&errors, &kth);
    let terms: Vec<Tensor> = match mode {
        ClipMode::RouteToKth => errors.iter().map(|e| e.minimum(&pivot).mean_all()).collect(),
        ClipMode::DetachClipped => {
            let fixed = pivot.detach();
            errors
                .iter()
                .map(|e| {
                    let clipped: Vec<usize> = e
                        .data()
                        .iter()
                        .zip(fixed.data())
                        .map(|(a, b)| usize::from(a > b))
                        .collect();
                    Tensor::select_per_element(&[e.clone(), fixed.clone()], &clipped).mean_all()
                })
                .collect()
        }
    };
    Ok(sum_tensors(&terms))
}

/// Bits implied by bin likelihoods: `-sum log2 p`.
pub fn bits_from_likelihoods(likelihoods: &Tensor) -> Tensor {
    likelihoods.ln().sum_all().scale(-std::f32::consts::LOG2_E)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub rate_mv_bpp: f64,
    pub rate_res_bpp: f64,
    pub distortion_mse: f64,
    pub per_member_mse: Vec<f64>,
}

impl LossReport {
    pub fn rate_bpp(&self) -> f64 {
        self.rate_mv_bpp + self.rate_res_bpp
    }

    pub fn psnr_db(&self) -> f64 {
        crate::evaluation::psnr_from_mse(self.distortion_mse)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.rate_mv_bpp.is_finite()
            && self.rate_res_bpp.is_finite()
            && self.distortion_mse.is_finite()
            && self.per_member_mse.iter().all(|v| v.is_finite())
    }
}

/// `R_mv + R_res + lambda * MSE(x, x_hat)` with rates in bits per pixel.
pub fn rd_loss(rate_mv_bpp: f64, rate_res_bpp: f64, x: &Frame, x_hat: &Frame, lambda: f64) -> Result<LossReport> {
    if rate_mv_bpp < 0.0 || rate_res_bpp < 0.0 {
        return Err(Error::OutOfRange(format!("negative rate ({rate_mv_bpp}, {rate_res_bpp})")));
    }
    if lambda <= 0.0 {
        return Err(Error::OutOfRange(format!("lambda must be positive, got {lambda}")));
    }
    let d = x.mse(x_hat)?;
    Ok(LossReport {
        total: rate_mv_bpp + rate_res_bpp + lambda * d,
        rate_mv_bpp,
        rate_res_bpp,
        distortion_mse: d,
        per_member_mse: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::var(v.to_vec(), &[1, 1, 1, v.len()])
    }

    #[test]
    fn order_statistics() {
        assert_eq!(kth_smallest_index(&[0.3, 0.1, 0.2], 1).unwrap(), 1);
        assert_eq!(kth_smallest_index(&[0.1, 0.1, 0.5], 2).unwrap(), 1);
        assert_eq!(kth_smallest_index(&[0.1, 0.1, 0.5], 1).unwrap(), 0);
        assert_eq!(kth_smallest_index(&[0.1, 0.9, 0.5], 3).unwrap(), 1);
        assert!(kth_smallest_index(&[0.1], 2).is_err());
    }

    #[test]
    fn worked_examples() {
        let x = Tensor::new(vec![0.0], &[1, 1, 1, 1]);
        let single = ensemble_aware_loss(&x, &[t(&[0.5])], 1, ClipMode::RouteToKth).unwrap();
        assert!((single.item() - 0.25).abs() < 1e-7);
        let three = ensemble_aware_loss(&x, &[t(&[0.1]), t(&[0.2]), t(&[0.3])], 1, ClipMode::RouteToKth).unwrap();
        assert!((three.item() - 0.03).abs() < 1e-6);
    }

    #[test]
    fn clipped_members_get_no_gradient() {
        let x = Tensor::new(vec![0.0, 0.0], &[1, 1, 1, 2]);
        let (a, b) = (t(&[0.1, 0.4]), t(&[0.3, 0.2]));
        for mode in [ClipMode::RouteToKth, ClipMode::DetachClipped] {
            let g = ensemble_aware_loss(&x, &[a.clone(), b.clone()], 1, mode).unwrap().backward();
            let (ga, gb) = (g.get_or_zeros(&a), g.get_or_zeros(&b));
            assert_eq!(ga[1], 0.0);
            assert_eq!(gb[0], 0.0);
            let scale = if mode == ClipMode::RouteToKth { 2.0 } else { 1.0 };
            assert!((ga[0] - scale * 2.0 * 0.1 / 2.0).abs() < 1e-6);
            assert!((gb[1] - scale * 2.0 * 0.2 / 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rd_arithmetic() {
        let x = Frame::new(1, 8, 8, vec![0.5; 64]).unwrap();
        let y = Frame::new(1, 8, 8, vec![0.5 + 0.001f32.sqrt(); 64]).unwrap();
        let r = rd_loss(0.6, 0.4, &x, &y, 256.0).unwrap();
        assert!((r.total - 1.256).abs() < 1e-5);
        assert_eq!(rd_loss(0.6, 0.4, &x, &x, 256.0).unwrap().total, 1.0);
        assert!(rd_loss(-0.1, 0.0, &x, &x, 256.0).is_err());
    }

    #[test]
    fn clip_mode_names() {
        for m in [ClipMode::RouteToKth, ClipMode::DetachClipped] {
            assert_eq!(m.to_string().parse::<ClipMode>().unwrap(), m);
        }
    }
}
