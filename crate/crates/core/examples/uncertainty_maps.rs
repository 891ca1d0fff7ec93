//! Aleatoric, epistemic and predictive maps for one synthetic frame pair,
//! written as 16-bit PNGs. Pass a checkpoint directory to use a trained model.

use std::path::{Path, PathBuf};

use uncodec::pipeline::{checkpoint, CodecModel};
use uncodec::synthetic::{generate, MovingShapesConfig};
use uncodec::training::desk_config;
use uncodec::uncertainty_viz::{aleatoric_map, epistemic_map, model_predictive_map, FlowNorm};

fn main() -> uncodec::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => checkpoint::load(Path::new(&p))?,
        None => CodecModel::new(&desk_config().with("codec.h", 4)?)?,
    };
    let out: PathBuf = std::env::temp_dir().join("uncodec-maps");
    std::fs::create_dir_all(&out).map_err(|e| uncodec::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let clip = generate(&MovingShapesConfig {
        frames: 2,
        shapes: 1,
        seed: 10,
        ..Default::default()
    })?;
    let f = clip.sequence.frames();
    let a = aleatoric_map(&model, &f[1], &f[0], FlowNorm::L2, 0.25, 0.5)?;
    if a.untrained {
        println!("untrained model: maps show initialization noise");
    }
    let maps = [
        ("aleatoric", a.map),
        ("epistemic", epistemic_map(&model, &f[1], &f[0])?),
        ("predictive", model_predictive_map(&model, &f[1], &f[0], false)?),
    ];
    for (name, map) in maps {
        let path = out.join(format!("{name}.png"));
        map.save_png16(&path)?;
        println!("{name:<10} mean {:.4e} -> {}", map.mean(), path.display());
    }
    Ok(())
}
