//! Factorized (per-channel, spatially i.i.d.) density models for quantized
//! latents.
//!
//! The learned model parameterizes each channel's CDF with a small monotone
//! MLP `x -> logit`: matrices pass through softplus and every hidden layer
//! applies `z + tanh(a) * tanh(z)`, which keeps the map non-decreasing.

use autograd::{Bound, ParamId, Params, Tensor};
use rand::Rng;

use crate::error::{Error, Result};

/// Layer widths of the per-channel CDF network.
pub const FILTERS: [usize; 5] = [1, 3, 3, 3, 1];
const LAYERS: usize = FILTERS.len() - 1;
const INIT_SCALE: f64 = 10.0;

pub trait EntropyModel {
    fn channels(&self) -> usize;

    /// Continuous CDF of `channel` at `x`.
    fn cdf(&self, channel: usize, x: f64) -> f64;

    fn tail_mass(&self) -> f64;

    /// Mass of the unit bin centered on `x`, floored at the tail mass.
    fn bin_probability(&self, channel: usize, x: f64) -> f64 {
        (self.cdf(channel, x + 0.5) - self.cdf(channel, x - 0.5)).max(self.tail_mass())
    }

    /// Smallest `x` with `cdf(x) >= q`, by bisection on `[lo, hi]`.
    fn quantile(&self, channel: usize, q: f64, lo: f64, hi: f64) -> f64 {
        let (mut a, mut b) = (lo, hi);
        if self.cdf(channel, a) >= q {
            return a;
        }
        if self.cdf(channel, b) < q {
            return b;
        }
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if self.cdf(channel, m) >= q {
                b = m;
            } else {
                a = m;
            }
        }
        b
    }
}

/// Ideal code length in bits of a C×H×W tensor of (possibly non-integer)
/// symbols: `-sum log2 max(P(bin), tail)`.
pub fn estimate_bits(values: &[f32], shape: [usize; 3], model: &dyn EntropyModel) -> Result<f64> {
    let [c, h, w] = shape;
    if values.len() != c * h * w {
        return Err(Error::ShapeMismatch(format!("{} values for shape {shape:?}", values.len())));
    }
    if c != model.channels() && !values.is_empty() {
        return Err(Error::ShapeMismatch(format!("code has {c} channels, model has {}", model.channels())));
    }
    let mut bits = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite("code value".into()));
        }
        bits -= model.bin_probability(i / (h * w), v as f64).log2();
    }
    if !bits.is_finite() {
        return Err(Error::NonFinite("bit estimate".into()));
    }
    Ok(bits)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// One channel's CDF network with transformed weights.
#[derive(Clone, Debug)]
struct ChannelMlp {
    /// softplus(raw matrix), row-major out×in.
    w: [Vec<f64>; LAYERS],
    /// sigmoid(raw matrix): derivative of the softplus.
    dw: [Vec<f64>; LAYERS],
    b: [Vec<f64>; LAYERS],
    /// tanh(raw factor).
    f: [Vec<f64>; LAYERS - 1],
}

#[derive(Default)]
struct Trace {
    h: [[f64; 3]; LAYERS],
    z: [[f64; 3]; LAYERS],
}

impl ChannelMlp {
    fn new(raw_m: [&[f32]; LAYERS], raw_b: [&[f32]; LAYERS], raw_f: [&[f32]; LAYERS - 1]) -> Self {
        let conv = |s: &[f32], f: fn(f64) -> f64| s.iter().map(|&v| f(v as f64)).collect::<Vec<_>>();
        Self {
            w: raw_m.map(|m| conv(m, softplus)),
            dw: raw_m.map(|m| conv(m, sigmoid)),
            b: raw_b.map(|b| conv(b, |v| v)),
            f: raw_f.map(|f| conv(f, f64::tanh)),
        }
    }

    fn logit(&self, x: f64, mut trace: Option<&mut Trace>) -> f64 {
        let mut h = [x, 0.0, 0.0];
        for i in 0..LAYERS {
            let (n_in, n_out) = (FILTERS[i], FILTERS[i + 1]);
            let mut z = [0.0; 3];
            for (o, zo) in z.iter_mut().enumerate().take(n_out) {
                let mut acc = self.b[i][o];
                for (k, hk) in h.iter().enumerate().take(n_in) {
                    acc += self.w[i][o * n_in + k] * hk;
                }
                *zo = acc;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.h[i] = h;
                t.z[i] = z;
            }
            if i + 1 < LAYERS {
                for o in 0..n_out {
                    h[o] = z[o] + self.f[i][o] * z[o].tanh();
                }
            } else {
                return z[0];
            }
        }
        unreachable!()
    }

    /// Accumulates raw-parameter gradients of `g * logit(x)` and returns d/dx.
    fn backward(&self, trace: &Trace, g: f64, grads: &mut ChannelGrads) -> f64 {
        let mut dz = [g, 0.0, 0.0];
        for i in (0..LAYERS).rev() {
            let (n_in, n_out) = (FILTERS[i], FILTERS[i + 1]);
            let mut dh = [0.0; 3];
            for o in 0..n_out {
                grads.b[i][o] += dz[o];
                for k in 0..n_in {
                    let idx = o * n_in + k;
                    grads.m[i][idx] += dz[o] * trace.h[i][k] * self.dw[i][idx];
                    dh[k] += self.w[i][idx] * dz[o];
                }
            }
            if i == 0 {
                return dh[0];
            }
            let prev = &trace.z[i - 1];
            dz = [0.0; 3];
            for k in 0..n_in {
                let tz = prev[k].tanh();
                let fa = self.f[i - 1][k];
                dz[k] = dh[k] * (1.0 + fa * (1.0 - tz * tz));
                grads.f[i - 1][k] += dh[k] * tz * (1.0 - fa * fa);
            }
        }
        unreachable!()
    }
}

struct ChannelGrads {
    m: [Vec<f64>; LAYERS],
    b: [Vec<f64>; LAYERS],
    f: [Vec<f64>; LAYERS - 1],
}

impl ChannelGrads {
    fn zeros() -> Self {
        Self {
            m: std::array::from_fn(|i| vec![0.0; FILTERS[i] * FILTERS[i + 1]]),
            b: std::array::from_fn(|i| vec![0.0; FILTERS[i + 1]]),
            f: std::array::from_fn(|i| vec![0.0; FILTERS[i + 1]]),
        }
    }
}

fn matrix_len(i: usize) -> usize {
    FILTERS[i] * FILTERS[i + 1]
}

fn channel_mlps(channels: usize, m: [&[f32]; LAYERS], b: [&[f32]; LAYERS], f: [&[f32]; LAYERS - 1]) -> Vec<ChannelMlp> {
    (0..channels)
        .map(|c| {
            let ms = std::array::from_fn(|i| &m[i][c * matrix_len(i)..(c + 1) * matrix_len(i)]);
            let bs = std::array::from_fn(|i| &b[i][c * FILTERS[i + 1]..(c + 1) * FILTERS[i + 1]]);
            let fs = std::array::from_fn(|i| &f[i][c * FILTERS[i + 1]..(c + 1) * FILTERS[i + 1]]);
            ChannelMlp::new(ms, bs, fs)
        })
        .collect()
}

/// Bin likelihood of `y` under a channel network, with the sign trick that
/// evaluates the difference of sigmoids on the far side of the median.
/// Returns (likelihood, d/d upper logit, d/d lower logit).
fn bin_likelihood(lower: f64, upper: f64) -> (f64, f64, f64) {
    let s = if lower + upper > 0.0 { -1.0 } else { 1.0 };
    let (su, sl) = (sigmoid(s * upper), sigmoid(s * lower));
    let d = su - sl;
    let sd = if d >= 0.0 { 1.0 } else { -1.0 };
    (d.abs(), sd * s * su * (1.0 - su), -sd * s * sl * (1.0 - sl))
}

/// Learned factorized prior whose parameters live in a [`Params`] store.
#[derive(Clone, Debug)]
pub struct FactorizedPrior {
    channels: usize,
    tail_mass: f64,
    matrices: [ParamId; LAYERS],
    biases: [ParamId; LAYERS],
    factors: [ParamId; LAYERS - 1],
}

impl FactorizedPrior {
    pub fn new(params: &mut Params, name: &str, channels: usize, tail_mass: f64, rng: &mut impl Rng) -> Self {
        let scale = INIT_SCALE.powf(1.0 / LAYERS as f64);
        let matrices = std::array::from_fn(|i| {
            let init = (1.0 / scale / FILTERS[i + 1] as f64).exp_m1().ln() as f32;
            params.add(
                format!("{name}.matrix{i}"),
                &[channels, FILTERS[i + 1], FILTERS[i]],
                vec![init; channels * matrix_len(i)],
            )
        });
        let biases = std::array::from_fn(|i| {
            let v = (0..channels * FILTERS[i + 1]).map(|_| rng.random_range(-0.5f32..0.5)).collect();
            params.add(format!("{name}.bias{i}"), &[channels, FILTERS[i + 1]], v)
        });
        let factors = std::array::from_fn(|i| {
            params.add(
                format!("{name}.factor{i}"),
                &[channels, FILTERS[i + 1]],
                vec![0.0; channels * FILTERS[i + 1]],
            )
        });
        Self {
            channels,
            tail_mass,
            matrices,
            biases,
            factors,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Frozen copy of the current parameters for coding and bit estimates.
    pub fn snapshot(&self, params: &Params) -> FactorizedCdf {
        let m = self.matrices.map(|id| params.value(id));
        let b = self.biases.map(|id| params.value(id));
        let f = self.factors.map(|id| params.value(id));
        FactorizedCdf {
            tail_mass: self.tail_mass,
            mlps: channel_mlps(self.channels, m, b, f),
        }
    }

    /// Differentiable bin likelihoods of an N×C×H×W tensor, floored at the
    /// tail mass. Gradients flow to `y` and to every prior parameter.
    pub fn likelihood(&self, p: &Bound, y: &Tensor) -> Tensor {
        let (n, c, h, w) = y.dims4();
        assert_eq!(c, self.channels, "likelihood: channel mismatch");
        let m: Vec<Tensor> = self.matrices.iter().map(|&id| p.get(id).clone()).collect();
        let b: Vec<Tensor> = self.biases.iter().map(|&id| p.get(id).clone()).collect();
        let f: Vec<Tensor> = self.factors.iter().map(|&id| p.get(id).clone()).collect();
        let mlps = channel_mlps(
            c,
            std::array::from_fn(|i| m[i].data()),
            std::array::from_fn(|i| b[i].data()),
            std::array::from_fn(|i| f[i].data()),
        );
        let hw = h * w;
        let tail = self.tail_mass;
        let raw: Vec<f64> = y
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mlp = &mlps[(i / hw) % c];
                let v = v as f64;
                bin_likelihood(mlp.logit(v - 0.5, None), mlp.logit(v + 0.5, None)).0
            })
            .collect();
        let out: Vec<f32> = raw.iter().map(|&l| l.max(tail) as f32).collect();
        let mut parents = vec![y.clone()];
        parents.extend(m.iter().cloned());
        parents.extend(b.iter().cloned());
        parents.extend(f.iter().cloned());
        let ydata = y.shared_data();
        let y_grad = y.requires_grad();
        Tensor::from_op(out, &[n, c, h, w], parents, move |g| {
            let mut grads: Vec<ChannelGrads> = (0..c).map(|_| ChannelGrads::zeros()).collect();
            let mut dy = vec![0.0f32; ydata.len()];
            let (mut tu, mut tl) = (Trace::default(), Trace::default());
            for (i, &gi) in g.iter().enumerate() {
                let gi = gi as f64;
                if gi == 0.0 || (raw[i] < tail && gi > 0.0) {
                    continue;
                }
                let ch = (i / hw) % c;
                let mlp = &mlps[ch];
                let v = ydata[i] as f64;
                let lower = mlp.logit(v - 0.5, Some(&mut tl));
                let upper = mlp.logit(v + 0.5, Some(&mut tu));
                let (_, du, dl) = bin_likelihood(lower, upper);
                let gy = mlp.backward(&tu, gi * du, &mut grads[ch]) + mlp.backward(&tl, gi * dl, &mut grads[ch]);
                dy[i] = gy as f32;
            }
            let flat = |sel: &dyn Fn(&ChannelGrads) -> &Vec<f64>| -> Option<Vec<f32>> {
                Some(grads.iter().flat_map(|cg| sel(cg).iter().map(|&v| v as f32)).collect())
            };
            let mut res = vec![if y_grad { Some(dy) } else { None }];
            for i in 0..LAYERS {
                res.push(flat(&|cg| &cg.m[i]));
            }
            for i in 0..LAYERS {
                res.push(flat(&|cg| &cg.b[i]));
            }
            for i in 0..LAYERS - 1 {
                res.push(flat(&|cg| &cg.f[i]));
            }
            res
        })
    }
}

/// Frozen learned CDF.
#[derive(Clone, Debug)]
pub struct FactorizedCdf {
    tail_mass: f64,
    mlps: Vec<ChannelMlp>,
}

impl FactorizedCdf {
    pub fn logit(&self, channel: usize, x: f64) -> f64 {
        self.mlps[channel].logit(x, None)
    }
}

impl EntropyModel for FactorizedCdf {
    fn channels(&self) -> usize {
        self.mlps.len()
    }

    fn cdf(&self, channel: usize, x: f64) -> f64 {
        sigmoid(self.logit(channel, x))
    }

    fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    fn bin_probability(&self, channel: usize, x: f64) -> f64 {
        let lower = self.logit(channel, x - 0.5);
        let upper = self.logit(channel, x + 0.5);
        bin_likelihood(lower, upper).0.max(self.tail_mass)
    }
}

/// Discretized Laplace distribution per channel; a fixed reference model.
#[derive(Clone, Debug)]
pub struct LaplaceModel {
    pub locations: Vec<f64>,
    pub scales: Vec<f64>,
    pub tail_mass: f64,
}

impl LaplaceModel {
    pub fn new(locations: Vec<f64>, scales: Vec<f64>, tail_mass: f64) -> Self {
        assert_eq!(locations.len(), scales.len());
        Self {
            locations,
            scales,
            tail_mass,
        }
    }
}

impl EntropyModel for LaplaceModel {
    fn channels(&self) -> usize {
        self.locations.len()
    }

    fn cdf(&self, channel: usize, x: f64) -> f64 {
        let z = (x - self.locations[channel]) / self.scales[channel];
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }

    fn tail_mass(&self) -> f64 {
        self.tail_mass
    }
}

/// Uniform distribution over the integer bins `lo ..= hi`.
#[derive(Clone, Debug)]
pub struct UniformModel {
    pub channels: usize,
    pub lo: i32,
    pub hi: i32,
    pub tail_mass: f64,
}

impl EntropyModel for UniformModel {
    fn channels(&self) -> usize {
        self.channels
    }

    fn cdf(&self, _channel: usize, x: f64) -> f64 {
        let (a, b) = (self.lo as f64 - 0.5, self.hi as f64 + 0.5);
        ((x - a) / (b - a)).clamp(0.0, 1.0)
    }

    fn tail_mass(&self) -> f64 {
        self.tail_mass
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior(channels: usize, seed: u64) -> (Params, FactorizedPrior) {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = FactorizedPrior::new(&mut params, "prior", channels, 1e-9, &mut rng);
        for id in params.ids().collect::<Vec<_>>() {
            for v in params.value_mut(id).iter_mut() {
                *v += rng.random_range(-0.3f32..0.3);
            }
        }
        (params, prior)
    }

    #[test]
    fn cdf_is_monotone_and_normalized() {
        let (params, prior) = prior(3, 1);
        let cdf = prior.snapshot(&params);
        for c in 0..3 {
            let mut prev = 0.0;
            for i in -400..=400 {
                let v = cdf.cdf(c, i as f64 * 0.1);
                assert!(v >= prev - 1e-12);
                prev = v;
            }
            assert!(cdf.cdf(c, -1e4) < 1e-6 && cdf.cdf(c, 1e4) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn bins_sum_to_one() {
        let (params, prior) = prior(2, 2);
        let cdf = prior.snapshot(&params);
        for c in 0..2 {
            let total: f64 = (-2000..=2000).map(|v| cdf.bin_probability(c, v as f64)).sum();
            assert!((total - 1.0).abs() < 1e-4, "total {total}");
        }
    }

    #[test]
    fn training_likelihood_matches_snapshot() {
        let (params, prior) = prior(2, 3);
        let y = Tensor::new(vec![0.0, 1.3, -2.0, 4.0, 0.2, -0.7, 9.0, 1.0], &[1, 2, 2, 2]);
        let lik = prior.likelihood(&params.bind_frozen(), &y);
        let cdf = prior.snapshot(&params);
        for (i, &l) in lik.data().iter().enumerate() {
            let expect = cdf.bin_probability(i / 4, y.data()[i] as f64);
            assert!((l as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn likelihood_gradients_match_finite_differences() {
        let (mut params, prior) = prior(2, 4);
        let y0 = vec![0.1f32, 1.3, -2.0, 0.6, 0.2, -0.7, 2.5, 1.0];
        let loss = |params: &Params, y: &[f32]| -> (f64, Vec<Option<Vec<f32>>>, Vec<f32>) {
            let bound = params.bind();
            let yt = Tensor::var(y.to_vec(), &[1, 2, 2, 2]);
            let l = prior.likelihood(&bound, &yt).ln().sum_all();
            let v = l.item() as f64;
            let g = l.backward();
            (v, bound.collect(&g), g.get_or_zeros(&yt))
        };
        let (_, pgrads, ygrad) = loss(&params, &y0);
        let eps = 1e-2f32;
        for (i, &g) in ygrad.iter().enumerate() {
            let mut a = y0.clone();
            let mut b = y0.clone();
            a[i] += eps;
            b[i] -= eps;
            let fd = (loss(&params, &a).0 - loss(&params, &b).0) / (2.0 * eps as f64);
            assert!((fd - g as f64).abs() < 2e-2 * (1.0 + fd.abs()), "y[{i}]: {fd} vs {g}");
        }
        let ids: Vec<_> = params.ids().collect();
        for (pi, id) in ids.into_iter().enumerate() {
            for j in 0..params.value(id).len() {
                let orig = params.value(id)[j];
                params.value_mut(id)[j] = orig + eps;
                let up = loss(&params, &y0).0;
                params.value_mut(id)[j] = orig - eps;
                let dn = loss(&params, &y0).0;
                params.value_mut(id)[j] = orig;
                let fd = (up - dn) / (2.0 * eps as f64);
                let g = pgrads[pi].as_ref().unwrap()[j] as f64;
                assert!((fd - g).abs() < 2e-2 * (1.0 + fd.abs()), "{}[{j}]: {fd} vs {g}", params.name(id));
            }
        }
    }

    #[test]
    fn estimate_bits_of_laplace() {
        let m = LaplaceModel::new(vec![0.0], vec![1.0], 1e-9);
        let p0 = m.cdf(0, 0.5) - m.cdf(0, -0.5);
        let bits = estimate_bits(&[0.0, 0.0], [1, 1, 2], &m).unwrap();
        assert!((bits + 2.0 * p0.log2()).abs() < 1e-9);
        assert!(estimate_bits(&[f32::NAN], [1, 1, 1], &m).is_err());
        assert_eq!(estimate_bits(&[], [1, 0, 0], &m).unwrap(), 0.0);
        let far = estimate_bits(&[1e6], [1, 1, 1], &m).unwrap();
        assert!((far - (-(1e-9f64).log2())).abs() < 1e-6);
    }
}
