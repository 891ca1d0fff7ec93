//! Aleatoric, epistemic and predictive uncertainty maps.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use autograd::Tensor;
use image::{ImageBuffer, Luma};

use crate::ensemble::{mixture_mean, mixture_variance_with_sigmas, EnsemblePrediction, PredictionKind};
use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::motion::{bilinear_warp, MotionField};
use crate::pipeline::{pad_frame, CodecModel};
use crate::transform_coding::{perturb_quantized, round_tensor, DOWNSAMPLE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    #[default]
    Raw,
    MinMax,
}

/// Non-negative per-pixel values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    pub normalization: Normalization,
}

impl HeatMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite(format!("heat map value {v}")));
        }
        Ok(Self {
            height,
            width,
            values,
            normalization: Normalization::Raw,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Mean over the pixels where `mask` is true; `None` for an empty mask.
    pub fn masked_mean(&self, mask: &[bool]) -> Option<f64> {
        assert_eq!(mask.len(), self.values.len(), "mask size");
        let (sum, n) = self
            .values
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .fold((0.0f64, 0usize), |(s, n), (v, _)| (s + *v as f64, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Values rescaled to [0, 1]; a constant map becomes all zeros.
    pub fn min_max(&self) -> HeatMap {
        let lo = self.values.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        let values = self
            .values
            .iter()
            .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect();
        HeatMap {
            height: self.height,
            width: self.width,
            values,
            normalization: Normalization::MinMax,
        }
    }

    /// 16-bit grayscale PNG after min-max normalization.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let n = self.min_max();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([(n.get(y as usize, x as usize) * 65535.0).round() as u16])
        });
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Little-endian u32 height, u32 width, then the raw f32 values.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + 4 * self.values.len());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::InvalidFrame(format!("{}: truncated heat map", path.display())));
        }
        let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() != 8 + 4 * h * w {
            return Err(Error::InvalidFrame(format!("{}: size does not match {h}x{w}", path.display())));
        }
        let values = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(h, w, values)
    }
}

/// Distance between two flow vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FlowNorm {
    L1,
    #[default]
    L2,
}

impl FromStr for FlowNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(FlowNorm::L1),
            "l2" => Ok(FlowNorm::L2),
            _ => Err(Error::Config(format!("unknown norm {s:?}"))),
        }
    }
}

impl fmt::Display for FlowNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowNorm::L1 => "l1",
            FlowNorm::L2 => "l2",
        })
    }
}

/// Per-pixel distance between two flow fields of equal size.
pub fn flow_distance(a: &MotionField, b: &MotionField, norm: FlowNorm) -> Result<HeatMap> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::ShapeMismatch("flow fields differ in size".into()));
    }
    let (h, w) = (a.height(), a.width());
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let dx = a.dx(y, x) - b.dx(y, x);
            let dy = a.dy(y, x) - b.dy(y, x);
            values.push(match norm {
                FlowNorm::L1 => dx.abs() + dy.abs(),
                FlowNorm::L2 => dx.hypot(dy),
            });
        }
    }
    HeatMap::new(h, w, values)
}

/// Top-left `h`×`w` window of sample 0 of an N×2×H'×W' flow.
fn crop_flow(t: &Tensor, h: usize, w: usize) -> Result<MotionField> {
    let (_, c, th, tw) = t.dims4();
    if c != 2 || h > th || w > tw {
        return Err(Error::ShapeMismatch(format!("cannot crop flow {:?} to {h}x{w}", t.shape())));
    }
    let d = t.data();
    let mut out = Vec::with_capacity(2 * h * w);
    for ch in 0..2 {
        for y in 0..h {
            let row = (ch * th + y) * tw;
            out.extend_from_slice(&d[row..row + w]);
        }
    }
    MotionField::new(h, w, out)
}

fn padded_pair(x_t: &Frame, x_ref: &Frame) -> Result<(Tensor, Tensor)> {
    if x_t.dims() != x_ref.dims() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x_t.dims(), x_ref.dims())));
    }
    Ok((pad_frame(x_t, DOWNSAMPLE), pad_frame(x_ref, DOWNSAMPLE)))
}

/// True when the parameters are still those of a freshly initialized model.
pub fn is_untrained(model: &CodecModel) -> bool {
    CodecModel::new(&model.config)
        .map(|fresh| fresh.params.ids().all(|id| fresh.params.value(id) == model.params.value(id)))
        .unwrap_or(false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AleatoricMap {
    pub map: HeatMap,
    /// Set when the model has never been trained; the map is then noise.
    pub untrained: bool,
    /// Latent positions moved by the perturbation.
    pub perturbed_positions: usize,
}

/// Distance between the mean flows decoded from the rounded MV latent and
/// from the same latent nudged toward its unrounded value.
pub fn aleatoric_map(
    model: &CodecModel,
    x_t: &Frame,
    x_ref: &Frame,
    norm: FlowNorm,
    gap_threshold: f32,
    fraction: f32,
) -> Result<AleatoricMap> {
    let (cur, reference) = padded_pair(x_t, x_ref)?;
    let (_, h, w) = x_t.dims();
    let p = model.params.bind_frozen();
    model.check_input(&cur)?;
    let flow = model.motion.forward(&p, &cur, &reference);
    let latent = model.mv_encoder.forward(&p, &flow);
    let code = round_tensor(&latent);
    let moved = perturb_quantized(latent.data(), code.data(), gap_threshold, fraction)?;
    let perturbed_positions = moved.iter().zip(code.data()).filter(|(a, b)| a != b).count();
    let perturbed = Tensor::new(moved, code.shape());
    let base = mixture_mean(&model.mv_decoder.decode(&p, &code, PredictionKind::Mv)?);
    let other = mixture_mean(&model.mv_decoder.decode(&p, &perturbed, PredictionKind::Mv)?);
    Ok(AleatoricMap {
        map: flow_distance(&crop_flow(&base, h, w)?, &crop_flow(&other, h, w)?, norm)?,
        untrained: is_untrained(model),
        perturbed_positions,
    })
}

/// Squared error between `x_t` and the warped reference, averaged over
/// channels, so the map mean equals the motion MSE.
pub fn epistemic_map_from_flow(x_t: &Frame, x_ref: &Frame, flow: &MotionField) -> Result<HeatMap> {
    let warped = bilinear_warp(x_ref, flow)?;
    if warped.dims() != x_t.dims() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", warped.dims(), x_t.dims())));
    }
    let (c, h, w) = x_t.dims();
    let mut values = vec![0.0f32; h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let d = warped.get(ch, y, x) - x_t.get(ch, y, x);
                values[y * w + x] += d * d / c as f32;
            }
        }
    }
    HeatMap::new(h, w, values)
}

/// Epistemic map using the model's motion estimation network.
pub fn epistemic_map(model: &CodecModel, x_t: &Frame, x_ref: &Frame) -> Result<HeatMap> {
    let (cur, reference) = padded_pair(x_t, x_ref)?;
    model.check_input(&cur)?;
    let (_, h, w) = x_t.dims();
    let flow = model.motion.forward(&model.params.bind_frozen(), &cur, &reference);
    epistemic_map_from_flow(x_t, x_ref, &crop_flow(&flow, h, w)?)
}

/// Mixture variance of a flow ensemble summed over its two components.
/// With `floor` the unit member variances are included (minimum value 2).
pub fn predictive_map(mv: &EnsemblePrediction, floor: bool) -> Result<HeatMap> {
    let shape = mv.shape();
    if shape.len() != 4 || shape[1] != 2 {
        return Err(Error::ShapeMismatch(format!("expected an N×2×H×W flow ensemble, got {shape:?}")));
    }
    let (h, w) = (shape[2], shape[3]);
    let spread = mixture_variance_with_sigmas(mv, &vec![0.0; mv.h()]);
    let s = spread.data();
    let plane = h * w;
    let offset = if floor { 2.0 } else { 0.0 };
    let values = (0..plane).map(|i| s[i] + s[plane + i] + offset).collect();
    HeatMap::new(h, w, values)
}

/// Predictive map of the MV ensemble decoded from the rounded latent.
pub fn model_predictive_map(model: &CodecModel, x_t: &Frame, x_ref: &Frame, floor: bool) -> Result<HeatMap> {
    let (cur, reference) = padded_pair(x_t, x_ref)?;
    model.check_input(&cur)?;
    let (_, h, w) = x_t.dims();
    let p = model.params.bind_frozen();
    let flow = model.motion.forward(&p, &cur, &reference);
    let code = round_tensor(&model.mv_encoder.forward(&p, &flow));
    let mv = model.mv_decoder.decode(&p, &code, PredictionKind::Mv)?;
    let members = mv
        .members
        .iter()
        .map(|m| crop_flow(m, h, w).map(|f| f.to_tensor()))
        .collect::<Result<Vec<_>>>()?;
    predictive_map(&EnsemblePrediction::new(PredictionKind::Mv, members)?, floor)
}
