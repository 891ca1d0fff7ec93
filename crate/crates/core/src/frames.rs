//! Frames, sequences, GoP partitioning and PNG directory I/O.

use std::path::{Path, PathBuf};

use autograd::Tensor;
use image::{DynamicImage, GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MIN_FRAME_SIDE: usize = 8;

/// An image with values in `[0, 1]`, stored channel-planar (C×H×W).
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidFrame(format!("{channels} channels (expected 1 or 3)")));
        }
        if height < MIN_FRAME_SIDE || width < MIN_FRAME_SIDE {
            return Err(Error::InvalidFrame(format!(
                "{height}x{width} is smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidFrame(format!(
                "{} values for a {channels}x{height}x{width} frame",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidFrame(format!("value {} at index {i} outside [0, 1]", data[i])));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Sample `index` of an NCHW tensor, clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4();
        if index >= n {
            return Err(Error::ShapeMismatch(format!("batch index {index} of {n}")));
        }
        let sz = c * h * w;
        let data = t.data()[index * sz..(index + 1) * sz]
            .iter()
            .map(|v| {
                if v.is_finite() {
                    Ok(v.clamp(0.0, 1.0))
                } else {
                    Err(Error::NonFinite("frame tensor".into()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(c, h, w, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Constant 1×C×H×W tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[1, self.channels, self.height, self.width])
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::OutOfRange(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Frame::from_fn(self.channels, height, width, |c, y, x| self.get(c, top + y, left + x))
    }

    /// Rounds to the nearest 8-bit level.
    pub fn quantize_8bit(&self) -> Frame {
        Frame {
            data: self.data.iter().map(|v| (v * 255.0).round() / 255.0).collect(),
            ..self.clone()
        }
    }

    pub fn mse(&self, other: &Frame) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn to_image(&self) -> DynamicImage {
        let q = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let (h, w) = (self.height as u32, self.width as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(GrayImage::from_fn(w, h, |x, y| {
                image::Luma([q(self.get(0, y as usize, x as usize))])
            }))
        } else {
            DynamicImage::ImageRgb8(RgbImage::from_fn(w, h, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([q(self.get(0, y, x)), q(self.get(1, y, x)), q(self.get(2, y, x))])
            }))
        }
    }

    pub fn from_image(img: &DynamicImage) -> Result<Frame> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) => {
                let g = img.to_luma8();
                Frame::new(1, h, w, g.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
            }
            _ => {
                let rgb = img.to_rgb8();
                let raw = rgb.as_raw();
                let mut data = vec![0.0f32; 3 * h * w];
                for (i, px) in raw.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        data[c * h * w + i] = px[c] as f32 / 255.0;
                    }
                }
                Frame::new(3, h, w, data)
            }
        }
    }

    /// Lossless PNG encoding of the 8-bit quantized frame.
    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_image()
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        out.into_inner()
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Frame> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| Error::Image {
            path: PathBuf::from("<memory>"),
            source: e,
        })?;
        Frame::from_image(&img)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load_png(path: &Path) -> Result<Frame> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?;
        Frame::from_image(&img)
    }
}

/// Stacks same-shaped frames into an N×C×H×W constant tensor.
pub fn frames_to_tensor(frames: &[&Frame]) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidSequence("no frames to stack".into()))?;
    let (c, h, w) = first.dims();
    let mut data = Vec::with_capacity(frames.len() * c * h * w);
    for f in frames {
        if f.dims() != (c, h, w) {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", f.dims(), (c, h, w))));
        }
        data.extend_from_slice(f.data());
    }
    Ok(Tensor::new(data, &[frames.len(), c, h, w]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    name: String,
    frames: Vec<Frame>,
}

impl VideoSequence {
    /// A named, non-empty list of identically shaped frames.
    pub fn new(name: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidSequence("empty sequence".into()));
        };
        let dims = first.dims();
        if let Some(i) = frames.iter().position(|f| f.dims() != dims) {
            return Err(Error::InvalidSequence(format!(
                "frame {i} is {:?}, frame 0 is {dims:?}",
                frames[i].dims()
            )));
        }
        Ok(Self {
            name: name.into(),
            frames,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// (channels, height, width) shared by every frame.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.frames[0].dims()
    }

    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.name.clone(), self.frames.iter().take(n).cloned().collect())
    }
}

fn is_png(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("png"))
        .unwrap_or(false)
}

/// Loads up to `max_frames` lexically ordered PNG frames from `dir`.
pub fn load_sequence(dir: &Path, max_frames: usize) -> Result<VideoSequence> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_png(&p) {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.len() < 2 {
        return Err(Error::InvalidSequence(format!(
            "{} holds {} frame(s); at least 2 are required",
            dir.display(),
            paths.len()
        )));
    }
    let frames = paths
        .iter()
        .take(max_frames.max(1))
        .map(|p| Frame::load_png(p))
        .collect::<Result<Vec<_>>>()?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    VideoSequence::new(name, frames)
}

/// Writes frames as `%05d.png` into `dir` (created if needed).
pub fn save_sequence(seq: &VideoSequence, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames().iter().enumerate() {
        f.save_png(&dir.join(format!("{i:05}.png")))?;
    }
    Ok(())
}

/// Co-located crops of two successive frames: `(reference, current)`.
pub fn random_crop_pair(seq: &VideoSequence, size: usize, seed: u64) -> Result<(Frame, Frame)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_crop_pair_with(seq, size, &mut rng)
}

pub fn random_crop_pair_with(seq: &VideoSequence, size: usize, rng: &mut impl Rng) -> Result<(Frame, Frame)> {
    if seq.len() < 2 {
        return Err(Error::InvalidSequence("need at least 2 frames for a pair".into()));
    }
    let (_, h, w) = seq.dims();
    if size > h || size > w {
        return Err(Error::OutOfRange(format!("crop {size} larger than frame {h}x{w}")));
    }
    let t = rng.random_range(0..seq.len() - 1);
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let frames = seq.frames();
    Ok((
        frames[t].crop(top, left, size, size)?,
        frames[t + 1].crop(top, left, size, size)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gop {
    pub i_frame: usize,
    pub p_frames: Vec<usize>,
}

impl Gop {
    pub fn len(&self) -> usize {
        1 + self.p_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GopStructure {
    pub gop_size: usize,
    pub groups: Vec<Gop>,
}

impl GopStructure {
    /// Consecutive groups of at most `gop_size` frames over `0..num_frames`.
    pub fn new(num_frames: usize, gop_size: usize) -> Result<Self> {
        if gop_size == 0 {
            return Err(Error::OutOfRange("gop_size must be at least 1".into()));
        }
        let groups = (0..num_frames)
            .step_by(gop_size)
            .map(|start| Gop {
                i_frame: start,
                p_frames: (start + 1..(start + gop_size).min(num_frames)).collect(),
            })
            .collect();
        Ok(Self { gop_size, groups })
    }

    pub fn num_frames(&self) -> usize {
        self.groups.iter().map(Gop::len).sum()
    }

    /// Whether frame `t` starts a group.
    pub fn is_intra(&self, t: usize) -> bool {
        t.is_multiple_of(self.gop_size)
    }
}

pub fn make_gop(seq: &VideoSequence, gop_size: usize) -> Result<GopStructure> {
    GopStructure::new(seq.len(), gop_size)
}
