//! Warps a frame by a uniform flow, then recovers the shift by grid search
//! over candidate flows scored with the motion MSE.

use uncodec::frames::Frame;
use uncodec::motion::{bilinear_warp, motion_mse_loss, MotionField};

fn main() -> uncodec::Result<()> {
    let (h, w) = (32, 32);
    let reference = Frame::from_fn(3, h, w, |c, y, x| {
        (0.5 + 0.4 * ((x as f32 * 0.3 + c as f32).sin() * (y as f32 * 0.2).cos())).clamp(0.0, 1.0)
    })?;
    let truth = MotionField::uniform(h, w, 1.5, -0.5);
    let current = bilinear_warp(&reference, &truth)?;
    let mut best = (f32::INFINITY, 0.0, 0.0);
    for i in -8..=8 {
        for j in -8..=8 {
            let (dx, dy) = (i as f32 * 0.25, j as f32 * 0.25);
            let e = motion_mse_loss(&current, &reference, &MotionField::uniform(h, w, dx, dy))?;
            if e < best.0 {
                best = (e, dx, dy);
            }
        }
    }
    println!("true flow (1.50, -0.50), best candidate ({:.2}, {:.2}) with mse {:.2e}", best.1, best.2, best.0);
    let zero = motion_mse_loss(&current, &reference, &MotionField::uniform(h, w, 0.0, 0.0))?;
    println!("zero-motion mse {zero:.2e}");
    Ok(())
}
