//! Backward bilinear warping and the coarse-to-fine motion estimation network.
//!
//! Flow convention: `out(p) = ref(p + flow(p))`, with `flow` stored as two
//! planes (dx, dy) in pixels. Sample coordinates outside the frame are
//! clamped to the edge.

use std::io::Write;
use std::path::Path;

use autograd::{Bound, Conv2d, Params, Tensor};
use image::{Rgb, RgbImage};
use rand::Rng;

use crate::error::{Error, Result};
use crate::frames::Frame;

const LEAK: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct MotionField {
    height: usize,
    width: usize,
    /// dx plane followed by dy plane.
    data: Vec<f32>,
}

impl MotionField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 2 * height * width {
            return Err(Error::ShapeMismatch(format!("{} flow values for {height}x{width}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("motion field".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn uniform(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        let mut data = vec![dx; height * width];
        data.extend(std::iter::repeat_n(dy, height * width));
        Self { height, width, data }
    }

    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4();
        if c != 2 || index >= n {
            return Err(Error::ShapeMismatch(format!("flow tensor {:?}, index {index}", t.shape())));
        }
        Self::new(h, w, t.data()[index * 2 * h * w..(index + 1) * 2 * h * w].to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[1, 2, self.height, self.width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn dx(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn dy(&self, y: usize, x: usize) -> f32 {
        self.data[self.height * self.width + y * self.width + x]
    }

    /// Raw little-endian dump: u32 height, u32 width, then dx and dy planes as f32.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(8 + 4 * self.data.len());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Hue encodes direction, saturation encodes magnitude relative to the maximum.
    pub fn color_wheel(&self) -> RgbImage {
        let max = (0..self.height * self.width)
            .map(|i| self.data[i].hypot(self.data[self.height * self.width + i]))
            .fold(1e-6f32, f32::max);
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (dx, dy) = (self.dx(y as usize, x as usize), self.dy(y as usize, x as usize));
            let hue = (dy.atan2(dx) + std::f32::consts::PI) / (2.0 * std::f32::consts::PI);
            let sat = (dx.hypot(dy) / max).min(1.0);
            Rgb(hsv_to_rgb(hue, sat, 1.0))
        })
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

/// Bilinear taps of a sample coordinate: clamped indices and the fractional weight.
#[inline]
fn taps(coord: f32, n: usize) -> (usize, usize, f32) {
    let f = coord.floor();
    let i0 = f as isize;
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    (clamp(i0), clamp(i0 + 1), coord - f)
}

/// Differentiable backward warp of an N×C×H×W reference by an N×2×H×W flow.
///
/// At integer sample positions the flow gradient is the right-sided difference.
pub fn warp(reference: &Tensor, flow: &Tensor) -> Tensor {
    let (n, c, h, w) = reference.dims4();
    assert_eq!(flow.shape(), &[n, 2, h, w], "warp: flow shape {:?} vs reference {:?}", flow.shape(), reference.shape());
    let plane = h * w;
    let src = reference.data();
    let fl = flow.data();
    let mut out = vec![0.0f32; n * c * plane];
    for b in 0..n {
        let fb = &fl[b * 2 * plane..(b + 1) * 2 * plane];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (x0, x1, fx) = taps(x as f32 + fb[p], w);
                let (y0, y1, fy) = taps(y as f32 + fb[plane + p], h);
                for ch in 0..c {
                    let s = &src[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    let top = s[y0 * w + x0] * (1.0 - fx) + s[y0 * w + x1] * fx;
                    let bot = s[y1 * w + x0] * (1.0 - fx) + s[y1 * w + x1] * fx;
                    out[(b * c + ch) * plane + p] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    let src = reference.shared_data();
    let fl = flow.shared_data();
    let (need_ref, need_flow) = (reference.requires_grad(), flow.requires_grad());
    Tensor::from_op(out, &[n, c, h, w], vec![reference.clone(), flow.clone()], move |g| {
        let mut gref = need_ref.then(|| vec![0.0f32; n * c * plane]);
        let mut gflow = need_flow.then(|| vec![0.0f32; n * 2 * plane]);
        for b in 0..n {
            let fb = &fl[b * 2 * plane..(b + 1) * 2 * plane];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let (x0, x1, fx) = taps(x as f32 + fb[p], w);
                    let (y0, y1, fy) = taps(y as f32 + fb[plane + p], h);
                    let (mut gdx, mut gdy) = (0.0f32, 0.0f32);
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let gv = g[base + p];
                        if let Some(gr) = gref.as_mut() {
                            gr[base + y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                            gr[base + y0 * w + x1] += gv * (1.0 - fy) * fx;
                            gr[base + y1 * w + x0] += gv * fy * (1.0 - fx);
                            gr[base + y1 * w + x1] += gv * fy * fx;
                        }
                        if need_flow {
                            let s = &src[base..base + plane];
                            let (r00, r01, r10, r11) = (s[y0 * w + x0], s[y0 * w + x1], s[y1 * w + x0], s[y1 * w + x1]);
                            gdx += gv * ((1.0 - fy) * (r01 - r00) + fy * (r11 - r10));
                            gdy += gv * ((1.0 - fx) * (r10 - r00) + fx * (r11 - r01));
                        }
                    }
                    if let Some(gf) = gflow.as_mut() {
                        gf[b * 2 * plane + p] = gdx;
                        gf[b * 2 * plane + plane + p] = gdy;
                    }
                }
            }
        }
        vec![gref, gflow]
    })
}

/// Warps a frame by a motion field (motion compensation).
pub fn bilinear_warp(reference: &Frame, flow: &MotionField) -> Result<Frame> {
    if (reference.height(), reference.width()) != (flow.height(), flow.width()) {
        return Err(Error::ShapeMismatch(format!(
            "reference {}x{} vs flow {}x{}",
            reference.height(),
            reference.width(),
            flow.height(),
            flow.width()
        )));
    }
    Frame::from_tensor(&warp(&reference.to_tensor(), &flow.to_tensor()), 0)
}

/// Mean squared error between `current` and the reference warped by `flow`.
pub fn motion_mse(current: &Tensor, reference: &Tensor, flow: &Tensor) -> Tensor {
    warp(reference, flow).sub(current).sqr().mean_all()
}

pub fn motion_mse_loss(current: &Frame, reference: &Frame, flow: &MotionField) -> Result<f32> {
    if current.dims() != reference.dims() || (flow.height(), flow.width()) != (current.height(), current.width()) {
        return Err(Error::ShapeMismatch(format!(
            "current {:?}, reference {:?}, flow {}x{}",
            current.dims(),
            reference.dims(),
            flow.height(),
            flow.width()
        )));
    }
    Ok(motion_mse(&current.to_tensor(), &reference.to_tensor(), &flow.to_tensor()).item())
}

/// Coarse-to-fine flow estimator: at each pyramid level a small conv stack
/// predicts a flow increment from (current, warped reference, upsampled flow).
#[derive(Clone, Debug)]
pub struct MotionNet {
    levels: Vec<Vec<Conv2d>>,
}

pub const MOTION_LAYERS_PER_LEVEL: usize = 5;

impl MotionNet {
    pub fn new(params: &mut Params, name: &str, channels: usize, width: usize, levels: usize, rng: &mut impl Rng) -> Self {
        assert!(levels >= 1);
        let levels = (0..levels)
            .map(|l| {
                let mut layers = Vec::with_capacity(MOTION_LAYERS_PER_LEVEL);
                let mut cin = 2 * channels + 2;
                for i in 0..MOTION_LAYERS_PER_LEVEL - 1 {
                    layers.push(Conv2d::new(params, &format!("{name}.l{l}.conv{i}"), cin, width, 3, 1, rng));
                    cin = width;
                }
                layers.push(Conv2d::zeroed(
                    params,
                    &format!("{name}.l{l}.conv{}", MOTION_LAYERS_PER_LEVEL - 1),
                    cin,
                    2,
                    3,
                    1,
                ));
                layers
            })
            .collect();
        Self { levels }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Spatial sizes must be divisible by `2^(levels-1)`.
    pub fn forward(&self, p: &Bound, current: &Tensor, reference: &Tensor) -> Tensor {
        let (n, _, h, w) = current.dims4();
        let depth = self.levels.len();
        let mut cur = vec![current.clone()];
        let mut refs = vec![reference.clone()];
        for _ in 1..depth {
            cur.push(cur.last().unwrap().avg_pool2());
            refs.push(refs.last().unwrap().avg_pool2());
        }
        let scale = 1usize << (depth - 1);
        let mut flow = Tensor::zeros(&[n, 2, h / scale, w / scale]);
        for (l, layers) in self.levels.iter().enumerate() {
            let level = depth - 1 - l;
            if l > 0 {
                flow = flow.upsample2_bilinear().scale(2.0);
            }
            let warped = warp(&refs[level], &flow);
            let mut x = Tensor::cat_channels(&[cur[level].clone(), warped, flow.clone()]);
            for (i, conv) in layers.iter().enumerate() {
                x = conv.forward(p, &x);
                if i + 1 < layers.len() {
                    x = x.leaky_relu(LEAK);
                }
            }
            flow = flow.add(&x);
        }
        flow
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Frame {
        Frame::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = random_frame(&mut rng, 3, 8, 8);
        assert_eq!(bilinear_warp(&f, &MotionField::uniform(8, 8, 0.0, 0.0)).unwrap(), f);
    }

    #[test]
    fn unit_shift_matches_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 1, 8, 8);
        let out = bilinear_warp(&f, &MotionField::uniform(8, 8, 1.0, 0.0)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.get(0, y, x), f.get(0, y, (x + 1).min(7)));
            }
        }
    }

    #[test]
    fn half_pixel_shift_averages_neighbours() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_frame(&mut rng, 1, 8, 8);
        let out = bilinear_warp(&f, &MotionField::uniform(8, 8, 0.5, 0.0)).unwrap();
        for y in 0..8 {
            for x in 0..7 {
                let want = 0.5 * f.get(0, y, x) + 0.5 * f.get(0, y, x + 1);
                assert!((out.get(0, y, x) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let f = Frame::new(1, 8, 8, vec![0.5; 64]).unwrap();
        assert!(bilinear_warp(&f, &MotionField::uniform(8, 9, 0.0, 0.0)).is_err());
    }

    #[test]
    fn motion_mse_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_frame(&mut rng, 3, 8, 8);
        let b = random_frame(&mut rng, 3, 8, 8);
        let zero = MotionField::uniform(8, 8, 0.0, 0.0);
        assert_eq!(motion_mse_loss(&a, &a, &zero).unwrap(), 0.0);
        let plain = a.mse(&b).unwrap() as f32;
        assert!((motion_mse_loss(&b, &a, &zero).unwrap() - plain).abs() < 1e-6);
        // x_t(p) = ref(p + (1, 0)) everywhere except the clamped last column
        let shifted = Frame::from_fn(3, 8, 8, |c, y, x| a.get(c, y, (x + 1).min(7))).unwrap();
        assert_eq!(motion_mse_loss(&shifted, &a, &MotionField::uniform(8, 8, 1.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn untrained_network_gives_finite_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = Params::new();
        let net = MotionNet::new(&mut params, "me", 3, 8, 3, &mut rng);
        let a = random_frame(&mut rng, 3, 16, 16).to_tensor();
        let b = random_frame(&mut rng, 3, 16, 16).to_tensor();
        let flow = net.forward(&params.bind(), &a, &b);
        assert_eq!(flow.shape(), &[1, 2, 16, 16]);
        assert!(flow.data().iter().all(|v| v.is_finite()));
    }
}
