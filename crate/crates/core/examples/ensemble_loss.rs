//! Ensemble-aware loss for every k and how the gradient is shared out
//! among members under both clipping modes.

use autograd::Tensor;
use uncodec::losses::{ensemble_aware_loss, ClipMode};

fn main() -> uncodec::Result<()> {
    let target = Tensor::new(vec![0.5; 12], &[1, 3, 2, 2]);
    let offsets = [0.05f32, -0.2, 0.1, 0.4];
    for mode in [ClipMode::RouteToKth, ClipMode::DetachClipped] {
        for k in 1..=offsets.len() {
            let members: Vec<Tensor> = offsets.iter().map(|o| Tensor::var(vec![0.5 + o; 12], &[1, 3, 2, 2])).collect();
            let loss = ensemble_aware_loss(&target, &members, k, mode)?;
            let g = loss.backward();
            let norms: Vec<String> = members
                .iter()
                .map(|m| format!("{:.3}", g.get_or_zeros(m).iter().map(|v| v.abs()).sum::<f32>()))
                .collect();
            println!("{mode:<15} k={k}  loss {:.5}  |grad| per member [{}]", loss.item(), norms.join(", "));
        }
    }
    Ok(())
}
