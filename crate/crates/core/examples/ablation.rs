//! A miniature ablation grid over ensemble size and clipping rank.

use uncodec::config::Config;
use uncodec::training::{ablate, ablation_csv};

fn main() -> uncodec::Result<()> {
    let mut cfg = Config::default();
    cfg.apply_overrides(&[
        "codec.latent_channels_mv=4",
        "codec.latent_channels_res=6",
        "codec.hidden_channels=6",
        "codec.backbone_channels=6",
        "codec.branch_channels=4",
        "codec.motion_channels=4",
        "codec.motion_levels=2",
        "codec.refine_channels=6",
        "data.crop=16",
        "train.batch=2",
        "train.warmup_steps=10",
        "train.total_steps=20",
        "fgsm.enabled=false",
        "ablate.h_values=1,2",
    ])?;
    let rows = ablate(&cfg, 8, |m| eprintln!("{m}"))?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
