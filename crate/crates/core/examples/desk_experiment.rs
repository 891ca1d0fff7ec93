//! Trains (or loads from the cache) the h=1 and h=4 desk models for three
//! seeds and prints held-out RD losses.
//!
//! cargo run --release --example desk_experiment

use std::time::Instant;

use uncodec::training::{
    default_cache_dir, desk_config, desk_run_config, heldout_rd_loss, load_or_train, TrainingData, DESK_H, DESK_SEEDS,
};

fn main() -> uncodec::Result<()> {
    let cache = default_cache_dir();
    let held = TrainingData::from_config(&desk_config())?.heldout(64, 32)?;
    println!("cache {}", cache.display());
    for seed in DESK_SEEDS {
        for h in DESK_H {
            let cfg = desk_run_config(h, seed)?;
            let start = Instant::now();
            let model = load_or_train(&cfg, &cache, |r| {
                if r.step % 1000 == 0 {
                    println!("  h={h} seed={seed} step {} loss {:.4} psnr {:.2}", r.step, r.loss, r.psnr);
                }
            })?;
            let rep = heldout_rd_loss(&model, &held, 1024.0)?;
            println!(
                "h={h} seed={seed}: rd {:.4}  bpp {:.4}  psnr {:.2}  ({:.0}s)",
                rep.rd_loss,
                rep.bpp,
                rep.psnr_db,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
