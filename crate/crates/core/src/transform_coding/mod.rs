//! Quantization, entropy modeling and entropy coding of auto-encoder latents.

mod bitstream;
mod diagnostics;
mod entropy_model;
mod quantize;
mod range_coder;

use autograd::{Bound, Conv2d, Params, Tensor};
use rand::Rng;

pub use bitstream::{entropy_decode, entropy_encode, Bitstream, EntropyCoder, HEADER_LEN, MAGIC, VERSION};
pub use diagnostics::{linear_noise_bound, perturb_quantized};
pub use entropy_model::{
    estimate_bits, EntropyModel, FactorizedCdf, FactorizedPrior, LaplaceModel, UniformModel, FILTERS,
};
pub use quantize::{
    quantize_infer, quantize_train, round_half_away, round_tensor, uniform_noise_for, LatentCode, QuantizedCode,
    StreamKind, SYMBOL_BOUND,
};
pub use range_coder::{ChannelTable, CodingTables, RangeDecoder, RangeEncoder, MAX_SYMBOLS, PRECISION, TOTAL};

/// Spatial downsampling of the analysis transform.
pub const DOWNSAMPLE: usize = 16;
const LEAK: f32 = 0.1;

/// Analysis transform: four stride-2 5×5 convolutions.
#[derive(Clone, Debug)]
pub struct AnalysisEncoder {
    layers: Vec<Conv2d>,
}

impl AnalysisEncoder {
    pub fn new(params: &mut Params, name: &str, cin: usize, hidden: usize, latent: usize, rng: &mut impl Rng) -> Self {
        let widths = [cin, hidden, hidden, hidden, latent];
        let layers = (0..4)
            .map(|i| Conv2d::new(params, &format!("{name}.conv{i}"), widths[i], widths[i + 1], 5, 2, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(p, &h);
            if i + 1 < self.layers.len() {
                h = h.leaky_relu(LEAK);
            }
        }
        h
    }
}
