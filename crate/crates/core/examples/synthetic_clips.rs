//! Renders a moving-shapes clip to PNGs and prints each shape's track.

use std::path::PathBuf;

use uncodec::synthetic::{write_clip, MovingShapesConfig};

fn main() -> uncodec::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("uncodec-shapes"), PathBuf::from);
    let cfg = MovingShapesConfig {
        frames: 6,
        shapes: 3,
        seed: 7,
        ..Default::default()
    };
    let clip = write_clip(&cfg, &out)?;
    for (i, t) in clip.tracks.iter().enumerate() {
        let (y0, x0) = t.position(0);
        let (y1, x1) = t.position(cfg.frames - 1);
        println!("shape {i}: ({y0:.1}, {x0:.1}) -> ({y1:.1}, {x1:.1})");
    }
    println!("{} frames in {}", clip.sequence.len(), out.display());
    Ok(())
}
