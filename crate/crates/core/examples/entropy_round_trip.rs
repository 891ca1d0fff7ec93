//! Entropy-codes a Laplacian latent, including out-of-range escapes, and
//! compares the payload size with the model's ideal code length.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uncodec::transform_coding::{
    entropy_decode, entropy_encode, estimate_bits, quantize_infer, EntropyCoder, LaplaceModel, LatentCode, StreamKind,
};

fn main() -> uncodec::Result<()> {
    let (c, h, w) = (4, 16, 16);
    let scales = vec![0.5, 1.0, 2.0, 4.0];
    let model = LaplaceModel::new(vec![0.0; c], scales.clone(), 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut values = Vec::with_capacity(c * h * w);
    for s in &scales {
        for _ in 0..h * w {
            let u: f64 = rng.random_range(-0.5..0.5);
            values.push((-s * u.signum() * (1.0 - 2.0 * u.abs()).ln()) as f32);
        }
    }
    values[5] = 400.0;
    let latent = LatentCode::new(StreamKind::Residual, [c, h, w], values)?;
    let code = quantize_infer(&latent)?;
    let coder = EntropyCoder::new(&model, 42);
    let bs = entropy_encode(&code, &coder)?;
    let back = entropy_decode(&bs, &coder)?;
    assert_eq!(back, code);
    let ideal = estimate_bits(&code.as_f32(), [c, h, w], &model)?;
    println!(
        "{} symbols: payload {} bits, model estimate {:.0} bits, lossless {}",
        code.len(),
        bs.payload.len() * 8,
        ideal,
        back == code
    );
    Ok(())
}
