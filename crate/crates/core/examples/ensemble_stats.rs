//! Decodes one latent with a shared-backbone ensemble and reports the
//! per-member outputs and mixture statistics.

use autograd::{Params, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uncodec::ensemble::{mixture_mean, mixture_variance, EnsembleDecoder, EnsembleDecoderConfig, PredictionKind};

fn main() -> uncodec::Result<()> {
    let mut params = Params::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = EnsembleDecoderConfig {
        h: 4,
        latent_channels: 8,
        hidden_channels: 16,
        backbone_channels: 12,
        branch_channels: 8,
        out_channels: 2,
    };
    let decoder = EnsembleDecoder::new(&mut params, "mv_dec", cfg, &mut rng)?;
    let code = Tensor::new((0..8 * 4).map(|i| ((i % 5) as f32) - 2.0).collect(), &[1, 8, 2, 2]);
    let pred = decoder.decode(&params.bind_frozen(), &code, PredictionKind::Mv)?;
    println!("backbone passes: {}  members: {}  shape {:?}", decoder.backbone_calls(), pred.h(), pred.shape());
    for (m, t) in pred.members.iter().enumerate() {
        let d = t.data();
        println!("member {m}: mean {:+.4}", d.iter().sum::<f32>() / d.len() as f32);
    }
    let mean = mixture_mean(&pred);
    let var = mixture_variance(&pred);
    let n = var.data().len() as f32;
    println!(
        "mixture mean {:+.4}  mean variance {:.4} (>= 1 from unit member variances)",
        mean.data().iter().sum::<f32>() / n,
        var.data().iter().sum::<f32>() / n
    );
    Ok(())
}
