//! Synthetic "moving shapes" clips: textured rectangles translating rigidly
//! over a static textured background.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::frames::{save_sequence, Frame, VideoSequence};

/// Smooth random texture: bilinear interpolation of a random lattice.
#[derive(Clone, Debug)]
pub struct ValueNoise {
    cell: f32,
    cols: usize,
    rows: usize,
    values: Vec<[f32; 3]>,
}

impl ValueNoise {
    pub fn new(rng: &mut impl Rng, extent: f32, cell: f32, mean: [f32; 3], amplitude: f32) -> Self {
        let n = (extent / cell).ceil() as usize + 2;
        let values = (0..n * n)
            .map(|_| {
                let mut v = [0.0; 3];
                for (c, m) in v.iter_mut().zip(mean) {
                    *c = (m + rng.random_range(-amplitude..amplitude)).clamp(0.0, 1.0);
                }
                v
            })
            .collect();
        Self {
            cell,
            cols: n,
            rows: n,
            values,
        }
    }

    /// Texture value at continuous coordinates (clamped to the lattice).
    pub fn sample(&self, y: f32, x: f32, c: usize) -> f32 {
        let gy = (y / self.cell).clamp(0.0, (self.rows - 1) as f32 - 1e-4);
        let gx = (x / self.cell).clamp(0.0, (self.cols - 1) as f32 - 1e-4);
        let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
        let (fy, fx) = (gy - y0 as f32, gx - x0 as f32);
        let v = |r: usize, q: usize| self.values[r * self.cols + q][c];
        let top = v(y0, x0) * (1.0 - fx) + v(y0, x0 + 1) * fx;
        let bot = v(y0 + 1, x0) * (1.0 - fx) + v(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// One rectangle moving with constant velocity.
#[derive(Clone, Debug)]
pub struct ShapeTrack {
    pub top: f32,
    pub left: f32,
    pub height: f32,
    pub width: f32,
    pub vy: f32,
    pub vx: f32,
    pub texture: ValueNoise,
}

impl ShapeTrack {
    /// (top, left) at frame `t`.
    pub fn position(&self, t: usize) -> (f32, f32) {
        (self.top + self.vy * t as f32, self.left + self.vx * t as f32)
    }

    /// Whether the pixel center `(y, x)` lies inside the shape at frame `t`.
    pub fn contains(&self, t: usize, y: usize, x: usize) -> bool {
        let (top, left) = self.position(t);
        let (cy, cx) = (y as f32 + 0.5, x as f32 + 0.5);
        cy >= top && cy < top + self.height && cx >= left && cx < left + self.width
    }
}

#[derive(Clone, Debug)]
pub struct MovingShapesConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub shapes: usize,
    pub max_speed: f32,
    /// Side lengths as fractions of the smaller frame side.
    pub min_size: f32,
    pub max_size: f32,
    pub seed: u64,
}

impl Default for MovingShapesConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 10,
            shapes: 2,
            max_speed: 3.0,
            min_size: 0.25,
            max_size: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticClip {
    pub sequence: VideoSequence,
    pub tracks: Vec<ShapeTrack>,
    pub background: ValueNoise,
}

impl SyntheticClip {
    /// Index of the topmost shape covering `(y, x)` at frame `t`.
    pub fn owner(&self, t: usize, y: usize, x: usize) -> Option<usize> {
        self.tracks.iter().rposition(|s| s.contains(t, y, x))
    }
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)]
}

pub fn generate(cfg: &MovingShapesConfig) -> Result<SyntheticClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let extent = cfg.height.max(cfg.width) as f32;
    let bg_color = random_color(&mut rng);
    let background = ValueNoise::new(&mut rng, extent, 8.0, bg_color, 0.15);
    let side = cfg.height.min(cfg.width) as f32;
    let tracks: Vec<ShapeTrack> = (0..cfg.shapes)
        .map(|_| {
            let height = side * rng.random_range(cfg.min_size..=cfg.max_size);
            let width = side * rng.random_range(cfg.min_size..=cfg.max_size);
            let top = rng.random_range(-0.25 * height..cfg.height as f32 - 0.75 * height);
            let left = rng.random_range(-0.25 * width..cfg.width as f32 - 0.75 * width);
            let speed = |rng: &mut ChaCha8Rng| {
                if cfg.max_speed > 0.0 {
                    rng.random_range(-cfg.max_speed..=cfg.max_speed)
                } else {
                    0.0
                }
            };
            let vy = speed(&mut rng);
            let vx = speed(&mut rng);
            let color = random_color(&mut rng);
            let texture = ValueNoise::new(&mut rng, height.max(width) + 2.0, 3.0, color, 0.3);
            ShapeTrack {
                top,
                left,
                height,
                width,
                vy,
                vx,
                texture,
            }
        })
        .collect();
    let frames = (0..cfg.frames)
        .map(|t| render(cfg.height, cfg.width, t, &background, &tracks))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticClip {
        sequence: VideoSequence::new(format!("shapes_{}", cfg.seed), frames)?,
        tracks,
        background,
    })
}

/// Renders frame `t` of a scene.
pub fn render(height: usize, width: usize, t: usize, background: &ValueNoise, tracks: &[ShapeTrack]) -> Result<Frame> {
    Frame::from_fn(3, height, width, |c, y, x| {
        match tracks.iter().rev().find(|s| s.contains(t, y, x)) {
            Some(s) => {
                let (top, left) = s.position(t);
                s.texture.sample(y as f32 + 0.5 - top, x as f32 + 0.5 - left, c)
            }
            None => background.sample(y as f32 + 0.5, x as f32 + 0.5, c),
        }
    })
}

/// Generates a clip and writes it as `%05d.png` frames.
pub fn write_clip(cfg: &MovingShapesConfig, dir: &Path) -> Result<SyntheticClip> {
    let clip = generate(cfg)?;
    save_sequence(&clip.sequence, dir)?;
    Ok(clip)
}

/// Writes `count` clips into `root/clip_%04d/`.
pub fn write_corpus(cfg: &MovingShapesConfig, count: usize, root: &Path) -> Result<()> {
    for i in 0..count {
        let c = MovingShapesConfig {
            seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            ..cfg.clone()
        };
        write_clip(&c, &root.join(format!("clip_{i:04}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let cfg = MovingShapesConfig {
            seed: 7,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap().sequence, generate(&cfg).unwrap().sequence);
        let other = MovingShapesConfig { seed: 8, ..cfg.clone() };
        assert_ne!(generate(&other).unwrap().sequence, generate(&cfg).unwrap().sequence);
    }

    #[test]
    fn shapes_translate_rigidly() {
        let cfg = MovingShapesConfig {
            height: 48,
            width: 48,
            frames: 2,
            shapes: 1,
            max_speed: 0.0,
            seed: 3,
            ..Default::default()
        };
        let mut clip = generate(&cfg).unwrap();
        clip.tracks[0].vx = 2.0;
        clip.tracks[0].vy = 0.0;
        let f0 = render(48, 48, 0, &clip.background, &clip.tracks).unwrap();
        let f1 = render(48, 48, 1, &clip.background, &clip.tracks).unwrap();
        let mut checked = 0;
        for y in 0..48 {
            for x in 0..46 {
                if clip.tracks[0].contains(1, y, x + 2) && clip.tracks[0].contains(0, y, x) {
                    for c in 0..3 {
                        assert!((f1.get(c, y, x + 2) - f0.get(c, y, x)).abs() < 1e-5);
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MovingShapesConfig {
            height: 16,
            width: 16,
            frames: 3,
            ..Default::default()
        };
        write_corpus(&cfg, 2, dir.path()).unwrap();
        for i in 0..2 {
            let d = dir.path().join(format!("clip_{i:04}"));
            for t in 0..3 {
                assert!(d.join(format!("{t:05}.png")).is_file());
            }
        }
    }
}
