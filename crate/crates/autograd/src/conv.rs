//! 2D convolution and transposed convolution via im2col + sgemm.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn im2col(src: &[f32], g: &Geometry, cols: &mut [f32]) {
    let p = g.cols();
    for c in 0..g.channels {
        let plane = &src[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride == 1 {
                        // contiguous run with zero margins
                        let off = kx as isize - g.pad as isize;
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = ox as isize + off;
                            *v = if ix >= 0 && (ix as usize) < g.width { srow[ix as usize] } else { 0.0 };
                        }
                    } else {
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *v = if ix >= 0 && (ix as usize) < g.width { srow[ix as usize] } else { 0.0 };
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: &Geometry, dst: &mut [f32]) {
    let p = g.cols();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
/// `ta`/`tb` select transposition of the stored matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], ta: bool, b: &[f32], tb: bool, beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices have exactly the extents described by the dimensions
    // and strides above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Cross-correlation with a square kernel. `weight` is `[C_out, C_in, k, k]`,
    /// `bias` is `[C_out]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
        let (n, cin, h, w) = self.dims4();
        let (cout, wcin, k, k2) = weight.dims4();
        assert_eq!(cin, wcin, "conv2d: input has {cin} channels, weight expects {wcin}");
        assert_eq!(k, k2, "conv2d: square kernels only");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv2d: input smaller than kernel");
        let geo = Geometry {
            channels: cin,
            height: h,
            width: w,
            kernel: k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
        };
        let (kk, pp) = (geo.rows(), geo.cols());
        let in_sz = cin * h * w;
        let out_sz = cout * pp;
        let mut out = vec![0.0f32; n * out_sz];
        let mut cols = vec![0.0f32; kk * pp];
        for b in 0..n {
            im2col(&self.data()[b * in_sz..(b + 1) * in_sz], &geo, &mut cols);
            let o = &mut out[b * out_sz..(b + 1) * out_sz];
            gemm(cout, kk, pp, weight.data(), false, &cols, false, 0.0, o);
            if let Some(bias) = bias {
                for (co, &bv) in bias.data().iter().enumerate() {
                    o[co * pp..(co + 1) * pp].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let x = self.shared_data();
        let wd = weight.shared_data();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let (need_x, has_bias) = (self.requires_grad(), bias.is_some());
        Tensor::from_op(out, &[n, cout, geo.out_h, geo.out_w], parents, move |g| {
            let mut gx = need_x.then(|| vec![0.0f32; n * in_sz]);
            let mut gw = vec![0.0f32; cout * kk];
            let mut gb = vec![0.0f32; cout];
            let mut cols = vec![0.0f32; kk * pp];
            for b in 0..n {
                let gy = &g[b * out_sz..(b + 1) * out_sz];
                im2col(&x[b * in_sz..(b + 1) * in_sz], &geo, &mut cols);
                gemm(cout, pp, kk, gy, false, &cols, true, 1.0, &mut gw);
                if let Some(gx) = gx.as_mut() {
                    gemm(kk, cout, pp, &wd, true, gy, false, 0.0, &mut cols);
                    col2im(&cols, &geo, &mut gx[b * in_sz..(b + 1) * in_sz]);
                }
                for (co, acc) in gb.iter_mut().enumerate() {
                    *acc += gy[co * pp..(co + 1) * pp].iter().sum::<f32>();
                }
            }
            let mut r = vec![gx, Some(gw)];
            if has_bias {
                r.push(Some(gb));
            }
            r
        })
    }

    /// Transposed convolution. `weight` is `[C_in, C_out, k, k]`; the output
    /// size is `(in - 1) * stride - 2 * pad + k + output_pad`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Tensor {
        let (n, cin, h, w) = self.dims4();
        let (wcin, cout, k, k2) = weight.dims4();
        assert_eq!(cin, wcin, "conv_transpose2d: input has {cin} channels, weight expects {wcin}");
        assert_eq!(k, k2, "conv_transpose2d: square kernels only");
        assert!(output_pad < stride, "conv_transpose2d: output_pad must be < stride");
        let out_h = (h - 1) * stride + k + output_pad - 2 * pad;
        let out_w = (w - 1) * stride + k + output_pad - 2 * pad;
        // geometry of the forward conv that maps the output back onto the input grid
        let geo = Geometry {
            channels: cout,
            height: out_h,
            width: out_w,
            kernel: k,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let (kk, pp) = (geo.rows(), geo.cols());
        let in_sz = cin * pp;
        let out_sz = cout * out_h * out_w;
        let mut out = vec![0.0f32; n * out_sz];
        let mut cols = vec![0.0f32; kk * pp];
        for b in 0..n {
            gemm(kk, cin, pp, weight.data(), true, &self.data()[b * in_sz..(b + 1) * in_sz], false, 0.0, &mut cols);
            let o = &mut out[b * out_sz..(b + 1) * out_sz];
            col2im(&cols, &geo, o);
            if let Some(bias) = bias {
                let plane = out_h * out_w;
                for (co, &bv) in bias.data().iter().enumerate() {
                    o[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let x = self.shared_data();
        let wd = weight.shared_data();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let (need_x, has_bias) = (self.requires_grad(), bias.is_some());
        Tensor::from_op(out, &[n, cout, out_h, out_w], parents, move |g| {
            let mut gx = need_x.then(|| vec![0.0f32; n * in_sz]);
            let mut gw = vec![0.0f32; cin * kk];
            let mut gb = vec![0.0f32; cout];
            let mut cols = vec![0.0f32; kk * pp];
            let plane = out_h * out_w;
            for b in 0..n {
                let gy = &g[b * out_sz..(b + 1) * out_sz];
                im2col(gy, &geo, &mut cols);
                let xb = &x[b * in_sz..(b + 1) * in_sz];
                gemm(cin, pp, kk, xb, false, &cols, true, 1.0, &mut gw);
                if let Some(gx) = gx.as_mut() {
                    gemm(cin, kk, pp, &wd, false, &cols, false, 0.0, &mut gx[b * in_sz..(b + 1) * in_sz]);
                }
                for (co, acc) in gb.iter_mut().enumerate() {
                    *acc += gy[co * plane..(co + 1) * plane].iter().sum::<f32>();
                }
            }
            let mut r = vec![gx, Some(gw)];
            if has_bias {
                r.push(Some(gb));
            }
            r
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f32], (cin, h, w): (usize, usize, usize), wt: &[f32], cout: usize, k: usize, s: usize, p: usize) -> Vec<f32> {
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let mut out = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x[(ci * h + iy as usize) * w + ix as usize]
                                        * wt[((co * cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    fn ramp(n: usize, scale: f32) -> Vec<f32> {
        (0..n).map(|i| ((i * 37 % 11) as f32 - 5.0) * scale).collect()
    }

    #[test]
    fn conv2d_matches_direct_loops() {
        for &(k, s, p) in &[(3, 1, 1), (5, 2, 2), (3, 2, 1), (1, 1, 0)] {
            let (cin, cout, h, w) = (3, 4, 8, 6);
            let x = ramp(cin * h * w, 0.1);
            let wt = ramp(cout * cin * k * k, 0.05);
            let got = Tensor::new(x.clone(), &[1, cin, h, w]).conv2d(&Tensor::new(wt.clone(), &[cout, cin, k, k]), None, s, p);
            let want = naive_conv(&x, (cin, h, w), &wt, cout, k, s, p);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-5, "k{k} s{s} p{p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_transpose(y)> with the same weights
        let (c1, c2, h, w, k, s, p) = (3, 2, 8, 8, 5, 2, 2);
        let x = ramp(c1 * h * w, 0.1);
        let wt = ramp(c2 * c1 * k * k, 0.07);
        let y_shape = (h + 2 * p - k) / s + 1;
        let y = ramp(c2 * y_shape * y_shape, 0.3);
        let cx = Tensor::new(x.clone(), &[1, c1, h, w]).conv2d(&Tensor::new(wt.clone(), &[c2, c1, k, k]), None, s, p);
        let ty = Tensor::new(y.clone(), &[1, c2, y_shape, y_shape]).conv_transpose2d(
            &Tensor::new(wt, &[c2, c1, k, k]),
            None,
            s,
            p,
            1,
        );
        assert_eq!(ty.shape(), &[1, c1, h, w]);
        let lhs: f32 = cx.data().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = ty.data().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
