use std::time::Instant;
use uncodec::training::{desk_config, heldout_rd_loss, Trainer, TrainingData};

fn main() -> uncodec::Result<()> {
    let mut cfg = desk_config();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        cfg.set(k, v)?;
    }
    cfg.set("train.out_dir", "")?;
    let data = TrainingData::from_config(&cfg)?;
    let held = data.heldout(32, 32)?;
    let mut t = Trainer::from_config(&cfg)?;
    println!("params {}", t.model.params.num_scalars());
    let start = Instant::now();
    t.run(&data, |r| println!("{r:?}"))?;
    println!("{:.3}s per step", start.elapsed().as_secs_f64() / t.step as f64);
    println!("{:?}", heldout_rd_loss(&t.model, &held, 1024.0)?);
    Ok(())
}
