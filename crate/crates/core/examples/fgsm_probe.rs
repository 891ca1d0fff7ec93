//! One FGSM perturbation against an untrained small codec: the input
//! gradient of the summed member losses, the signed step, and the loss
//! before and after.

use autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uncodec::adversarial::fgsm_perturb_tensor;
use uncodec::training::{desk_config, input_gradient, training_loss, Phase, TrainConfig, TrainingData};
use uncodec::pipeline::CodecModel;

fn main() -> uncodec::Result<()> {
    let cfg = desk_config().with("codec.h", 2)?;
    let tc = TrainConfig::from_config(&cfg)?;
    let model = CodecModel::new(&cfg)?;
    let data = TrainingData::from_config(&cfg)?;
    let (reference, current) = data.batch(0, 2, 32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let grad = input_gradient(&model, &reference, &current, Phase::EndToEnd, &mut rng.clone())?;
    let eps = 4.0 / 255.0;
    let perturbed = fgsm_perturb_tensor(&current, &grad, eps);
    let moved = current.data().iter().zip(perturbed.data()).filter(|(a, b)| a != b).count();
    let loss = |x: &Tensor, r: &mut ChaCha8Rng| {
        training_loss(&model, &model.params.bind_frozen(), &reference, x, x, Phase::EndToEnd, &tc, r).map(|(_, rep)| rep)
    };
    let clean = loss(&current, &mut rng.clone())?;
    let adv = loss(&perturbed, &mut rng)?;
    println!("moved {moved} of {} pixels by {eps:.4}", current.data().len());
    println!("loss clean {:.4}  adversarial {:.4}", clean.total, adv.total);
    Ok(())
}
