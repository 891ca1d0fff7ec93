use autograd::Tensor;
use rand::Rng;

use crate::error::{Error, Result};

/// Largest magnitude a quantized symbol may take.
pub const SYMBOL_BOUND: i32 = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Mv,
    Residual,
}

impl StreamKind {
    pub fn to_byte(self) -> u8 {
        match self {
            StreamKind::Mv => 0,
            StreamKind::Residual => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(StreamKind::Mv),
            1 => Some(StreamKind::Residual),
            _ => None,
        }
    }
}

/// Continuous transform coefficients of one frame, C×H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub kind: StreamKind,
    pub shape: [usize; 3],
    pub values: Vec<f32>,
}

impl LatentCode {
    pub fn new(kind: StreamKind, shape: [usize; 3], values: Vec<f32>) -> Result<Self> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!("{} values for shape {shape:?}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(Self { kind, shape, values })
    }

    /// Sample `index` of an N×C×H×W tensor.
    pub fn from_tensor(kind: StreamKind, t: &Tensor, index: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4();
        let sz = c * h * w;
        Self::new(kind, [c, h, w], t.data()[index * sz..(index + 1) * sz].to_vec())
    }
}

/// Integer-valued coefficients, same layout as [`LatentCode`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedCode {
    pub kind: StreamKind,
    pub shape: [usize; 3],
    pub values: Vec<i32>,
}

impl QuantizedCode {
    pub fn new(kind: StreamKind, shape: [usize; 3], values: Vec<i32>) -> Result<Self> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!("{} values for shape {shape:?}", values.len())));
        }
        Ok(Self { kind, shape, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    /// 1×C×H×W constant tensor.
    pub fn to_tensor(&self) -> Tensor {
        let [c, h, w] = self.shape;
        Tensor::new(self.as_f32(), &[1, c, h, w])
    }
}

/// Uniform noise in the open interval (-0.5, 0.5) such that `base + noise`
/// stays strictly within 0.5 of `base` after f32 rounding.
pub fn uniform_noise_for(base: &[f32], rng: &mut impl Rng) -> Vec<f32> {
    base.iter()
        .map(|&b| loop {
            let n: f32 = rng.random_range(-0.5..0.5);
            if !b.is_finite() || ((b + n) - b).abs() < 0.5 {
                break n;
            }
        })
        .collect()
}

/// Training-time quantization proxy: additive U(-0.5, 0.5) noise with an
/// identity gradient.
pub fn quantize_train(latent: &Tensor, rng: &mut impl Rng) -> Tensor {
    let noise = uniform_noise_for(latent.data(), rng);
    latent.add(&Tensor::new(noise, latent.shape()))
}

/// Round half away from zero.
pub fn round_half_away(v: f32) -> f32 {
    v.round()
}

/// Inference quantization of a latent tensor (no gradient).
pub fn round_tensor(latent: &Tensor) -> Tensor {
    Tensor::new(latent.data().iter().map(|&v| round_half_away(v)).collect(), latent.shape())
}

pub fn quantize_infer(latent: &LatentCode) -> Result<QuantizedCode> {
    let values = latent
        .values
        .iter()
        .map(|&v| {
            let r = round_half_away(v);
            if !r.is_finite() || r.abs() > SYMBOL_BOUND as f32 {
                Err(Error::OutOfRange(format!("latent value {v} exceeds the symbol bound {SYMBOL_BOUND}")))
            } else {
                Ok(r as i32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    QuantizedCode::new(latent.kind, latent.shape, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn code(values: Vec<f32>) -> LatentCode {
        let n = values.len();
        LatentCode::new(StreamKind::Mv, [1, 1, n], values).unwrap()
    }

    #[test]
    fn noise_terminates_on_non_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = uniform_noise_for(&[f32::NAN, f32::INFINITY, 1e30], &mut rng);
        assert!(n.iter().all(|v| v.abs() < 0.5));
    }

    #[test]
    fn rounding_rule() {
        let q = quantize_infer(&code(vec![1.4, -1.4, 2.5, -2.5, 0.5, -0.49])).unwrap();
        assert_eq!(q.values, vec![1, -1, 3, -3, 1, 0]);
        assert!(quantize_infer(&code(vec![40000.0])).is_err());
    }

    #[test]
    fn idempotent_on_integers() {
        let once = quantize_infer(&code(vec![0.2, 7.7, -3.5, 12.0])).unwrap();
        let twice = quantize_infer(&code(once.as_f32())).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_latent_noise_is_open_interval_and_seeded() {
        let z = Tensor::zeros(&[1, 4, 8, 8]);
        let a = quantize_train(&z, &mut ChaCha8Rng::seed_from_u64(3));
        let b = quantize_train(&z, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| *v > -0.5 && *v < 0.5));
    }

    #[test]
    fn train_quantization_has_identity_gradient() {
        let x = Tensor::var(vec![0.3, -2.0, 5.5], &[3]);
        let g = quantize_train(&x, &mut ChaCha8Rng::seed_from_u64(0)).sum_all().backward();
        assert_eq!(g.get(&x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn noise_stays_strictly_inside_half(values in proptest::collection::vec(-1000.0f32..1000.0, 1..64), seed in any::<u64>()) {
            let n = values.len();
            let t = Tensor::new(values.clone(), &[n]);
            let out = quantize_train(&t, &mut ChaCha8Rng::seed_from_u64(seed));
            for (o, v) in out.data().iter().zip(&values) {
                prop_assert!((o - v).abs() < 0.5);
            }
        }
    }
}
