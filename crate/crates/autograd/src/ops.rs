//! Differentiable elementwise, reduction and layout operations.

use crate::tensor::{numel_of, Tensor};

fn same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl Tensor {
    /// Applies `f` elementwise; `df(x, y)` is the derivative given input and output.
    pub fn map<F, D>(&self, f: F, df: D) -> Tensor
    where
        F: Fn(f32) -> f32,
        D: Fn(f32, f32) -> f32 + 'static,
    {
        let out: Vec<f32> = self.data().iter().map(|&x| f(x)).collect();
        let input = self.shared_data();
        let output = std::rc::Rc::new(out.clone());
        Tensor::from_op(out, self.shape(), vec![self.clone()], move |g| {
            let gi = g
                .iter()
                .zip(input.iter().zip(output.iter()))
                .map(|(g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(gi)]
        })
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        same_shape(self, other, "add");
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Tensor::from_op(out, self.shape(), vec![self.clone(), other.clone()], |g| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        same_shape(self, other, "sub");
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Tensor::from_op(out, self.shape(), vec![self.clone(), other.clone()], |g| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        same_shape(self, other, "mul");
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let a = self.shared_data();
        let b = other.shared_data();
        Tensor::from_op(out, self.shape(), vec![self.clone(), other.clone()], move |g| {
            let ga = g.iter().zip(b.iter()).map(|(g, b)| g * b).collect();
            let gb = g.iter().zip(a.iter()).map(|(g, a)| g * a).collect();
            vec![Some(ga), Some(gb)]
        })
    }

    /// Elementwise minimum. The gradient flows to `self` where
    /// `self <= other` and to `other` otherwise (ties go to `self`).
    pub fn minimum(&self, other: &Tensor) -> Tensor {
        same_shape(self, other, "minimum");
        let take_self: Vec<bool> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a <= b)
            .collect();
        let out = self
            .data()
            .iter()
            .zip(other.data())
            .zip(&take_self)
            .map(|((&a, &b), &s)| if s { a } else { b })
            .collect();
        Tensor::from_op(out, self.shape(), vec![self.clone(), other.clone()], move |g| {
            let ga = g.iter().zip(&take_self).map(|(&g, &s)| if s { g } else { 0.0 }).collect();
            let gb = g.iter().zip(&take_self).map(|(&g, &s)| if s { 0.0 } else { g }).collect();
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn scale(&self, s: f32) -> Tensor {
        let out = self.data().iter().map(|x| x * s).collect();
        Tensor::from_op(out, self.shape(), vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|v| v * s).collect())]
        })
    }

    pub fn add_scalar(&self, s: f32) -> Tensor {
        let out = self.data().iter().map(|x| x + s).collect();
        Tensor::from_op(out, self.shape(), vec![self.clone()], |g| vec![Some(g.to_vec())])
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn sqr(&self) -> Tensor {
        self.map(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn ln(&self) -> Tensor {
        self.map(f32::ln, |x, _| 1.0 / x)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f32::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn softplus(&self) -> Tensor {
        self.map(softplus, |x, _| sigmoid(x))
    }

    pub fn leaky_relu(&self, slope: f32) -> Tensor {
        self.map(
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    /// Clamps values to `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        self.map(
            move |x| x.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    /// Clamps from below; values at or above `lo` pass their gradient.
    pub fn lower_bound(&self, lo: f32) -> Tensor {
        self.map(
            move |x| x.max(lo),
            move |x, _| if x >= lo { 1.0 } else { 0.0 },
        )
    }

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().map(|&v| v as f64).sum();
        let n = self.numel();
        Tensor::from_op(vec![s as f32], &[], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f32)
    }

    /// Mean over the channel axis of an NCHW tensor, keeping the axis (N×1×H×W).
    pub fn mean_channels(&self) -> Tensor {
        let (n, c, h, w) = self.dims4();
        let plane = h * w;
        let mut out = vec![0.0f32; n * plane];
        let src = self.data();
        for b in 0..n {
            let o = &mut out[b * plane..(b + 1) * plane];
            for ch in 0..c {
                let s = &src[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                o.iter_mut().zip(s).for_each(|(o, s)| *o += s);
            }
            o.iter_mut().for_each(|v| *v /= c as f32);
        }
        Tensor::from_op(out, &[n, 1, h, w], vec![self.clone()], move |g| {
            let mut gi = vec![0.0f32; n * c * plane];
            for b in 0..n {
                let gs = &g[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let d = &mut gi[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    d.iter_mut().zip(gs).for_each(|(d, g)| *d = g / c as f32);
                }
            }
            vec![Some(gi)]
        })
    }

    /// Per element `i`, takes `candidates[index[i]][i]`. All candidates
    /// share one shape; the gradient is routed to the selected candidate.
    pub fn select_per_element(candidates: &[Tensor], index: &[usize]) -> Tensor {
        assert!(!candidates.is_empty());
        let shape = candidates[0].shape().to_vec();
        let n = numel_of(&shape);
        assert_eq!(index.len(), n);
        for c in candidates {
            assert_eq!(c.shape(), shape.as_slice(), "select_per_element: shape mismatch");
        }
        let out = index
            .iter()
            .enumerate()
            .map(|(i, &k)| candidates[k].data()[i])
            .collect();
        let index = index.to_vec();
        let count = candidates.len();
        Tensor::from_op(out, &shape, candidates.to_vec(), move |g| {
            let mut grads = vec![vec![0.0f32; n]; count];
            for (i, (&k, &gv)) in index.iter().zip(g).enumerate() {
                grads[k][i] = gv;
            }
            grads.into_iter().map(Some).collect()
        })
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn cat_channels(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let (n, _, h, w) = parts[0].dims4();
        let chans: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pn, pc, ph, pw) = p.dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "cat_channels: incompatible shapes");
                pc
            })
            .collect();
        let total: usize = chans.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for (p, &c) in parts.iter().zip(&chans) {
                out.extend_from_slice(&p.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        Tensor::from_op(out, &[n, total, h, w], parts.to_vec(), move |g| {
            let mut grads: Vec<Vec<f32>> = chans.iter().map(|&c| Vec::with_capacity(n * c * plane)).collect();
            for b in 0..n {
                let mut off = b * total * plane;
                for (gp, &c) in grads.iter_mut().zip(&chans) {
                    gp.extend_from_slice(&g[off..off + c * plane]);
                    off += c * plane;
                }
            }
            grads.into_iter().map(Some).collect()
        })
    }

    /// Channels `start..start + len` of an NCHW tensor.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Tensor {
        let (n, c, h, w) = self.dims4();
        assert!(start + len <= c, "narrow_channels out of range");
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data()[base..base + len * plane]);
        }
        Tensor::from_op(out, &[n, len, h, w], vec![self.clone()], move |g| {
            let mut gi = vec![0.0f32; n * c * plane];
            for b in 0..n {
                let base = (b * c + start) * plane;
                gi[base..base + len * plane].copy_from_slice(&g[b * len * plane..(b + 1) * len * plane]);
            }
            vec![Some(gi)]
        })
    }

    /// Sample `index` of the batch axis.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Tensor {
        let (n, c, h, w) = self.dims4();
        assert!(start + len <= n, "narrow_batch out of range");
        let sz = c * h * w;
        let out = self.data()[start * sz..(start + len) * sz].to_vec();
        Tensor::from_op(out, &[len, c, h, w], vec![self.clone()], move |g| {
            let mut gi = vec![0.0f32; n * sz];
            gi[start * sz..(start + len) * sz].copy_from_slice(g);
            vec![Some(gi)]
        })
    }

    /// Concatenates NCHW tensors along the batch axis.
    pub fn cat_batch(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let (_, c, h, w) = parts[0].dims4();
        let sizes: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pn, pc, ph, pw) = p.dims4();
                assert_eq!((pc, ph, pw), (c, h, w), "cat_batch: incompatible shapes");
                pn * c * h * w
            })
            .collect();
        let n: usize = parts.iter().map(|p| p.dims4().0).sum();
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in parts {
            out.extend_from_slice(p.data());
        }
        Tensor::from_op(out, &[n, c, h, w], parts.to_vec(), move |g| {
            let mut off = 0;
            sizes
                .iter()
                .map(|&s| {
                    let v = g[off..off + s].to_vec();
                    off += s;
                    Some(v)
                })
                .collect()
        })
    }

    /// Reinterprets the shape without moving data.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(numel_of(shape), self.numel(), "reshape: element count mismatch");
        let out = self.to_vec();
        Tensor::from_op(out, shape, vec![self.clone()], |g| vec![Some(g.to_vec())])
    }

    /// 2×2 average pooling with stride 2 (H and W must be even).
    pub fn avg_pool2(&self) -> Tensor {
        let (n, c, h, w) = self.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let (ho, wo) = (h / 2, w / 2);
        let src = self.data();
        let mut out = vec![0.0f32; n * c * ho * wo];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let o = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for x in 0..wo {
                    let i = 2 * y * w + 2 * x;
                    o[y * wo + x] = 0.25 * (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]);
                }
            }
        }
        Tensor::from_op(out, &[n, c, ho, wo], vec![self.clone()], move |g| {
            let mut gi = vec![0.0f32; n * c * h * w];
            for p in 0..n * c {
                let gs = &g[p * ho * wo..(p + 1) * ho * wo];
                let d = &mut gi[p * h * w..(p + 1) * h * w];
                for y in 0..ho {
                    for x in 0..wo {
                        let v = 0.25 * gs[y * wo + x];
                        let i = 2 * y * w + 2 * x;
                        d[i] += v;
                        d[i + 1] += v;
                        d[i + w] += v;
                        d[i + w + 1] += v;
                    }
                }
            }
            vec![Some(gi)]
        })
    }

    /// Bilinear ×2 upsampling with half-pixel centers and edge clamping.
    pub fn upsample2_bilinear(&self) -> Tensor {
        let (n, c, h, w) = self.dims4();
        let (ho, wo) = (2 * h, 2 * w);
        let ytaps: Vec<(usize, usize, f32)> = (0..ho).map(|o| upsample_taps(o, h)).collect();
        let xtaps: Vec<(usize, usize, f32)> = (0..wo).map(|o| upsample_taps(o, w)).collect();
        let src = self.data();
        let mut out = vec![0.0f32; n * c * ho * wo];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let o = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                    let top = s[y0 * w + x0] * (1.0 - fx) + s[y0 * w + x1] * fx;
                    let bot = s[y1 * w + x0] * (1.0 - fx) + s[y1 * w + x1] * fx;
                    o[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Tensor::from_op(out, &[n, c, ho, wo], vec![self.clone()], move |g| {
            let mut gi = vec![0.0f32; n * c * h * w];
            for p in 0..n * c {
                let gs = &g[p * ho * wo..(p + 1) * ho * wo];
                let d = &mut gi[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                        let v = gs[oy * wo + ox];
                        d[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                        d[y0 * w + x1] += v * (1.0 - fy) * fx;
                        d[y1 * w + x0] += v * fy * (1.0 - fx);
                        d[y1 * w + x1] += v * fy * fx;
                    }
                }
            }
            vec![Some(gi)]
        })
    }
}

fn upsample_taps(o: usize, n: usize) -> (usize, usize, f32) {
    let src = ((o as f32 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f32)
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Sum of several same-shaped tensors.
pub fn sum_tensors(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        acc = acc.add(p);
    }
    acc
}

/// Elementwise mean of several same-shaped tensors.
pub fn mean_tensors(parts: &[Tensor]) -> Tensor {
    sum_tensors(parts).scale(1.0 / parts.len() as f32)
}
