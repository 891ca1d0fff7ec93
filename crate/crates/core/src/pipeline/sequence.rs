//! GoP-level sequence coding with the `UNCV` container.
//!
//! Layout (little-endian): `UNCV`, version u8, GoP size u16, frame count
//! u32, height u16, width u16, channels u8, model id u32, then one record
//! per frame: `b'I'`, u32 length, PNG bytes; or `b'P'`, u32 MV stream
//! length, u32 residual stream length, MV `UNCC` stream, residual `UNCC`
//! stream.

use autograd::Tensor;

use super::model::CodecModel;
use super::pframe::{crop_to_frame, pad_frame};
use crate::error::{Error, Result};
use crate::evaluation::{psnr, sequence_bpp};
use crate::frames::{Frame, GopStructure, VideoSequence};
use crate::transform_coding::{
    entropy_decode, entropy_encode, estimate_bits, quantize_infer, Bitstream, EntropyCoder, LatentCode, StreamKind,
    DOWNSAMPLE,
};

pub const MAGIC: &[u8; 4] = b"UNCV";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceHeader {
    pub gop: u16,
    pub frames: u32,
    pub height: u16,
    pub width: u16,
    pub channels: u8,
    pub model_id: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameRecord {
    Intra { png: Vec<u8> },
    Inter { mv: Bitstream, res: Bitstream },
}

impl FrameRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            FrameRecord::Intra { png } => {
                out.push(b'I');
                out.extend_from_slice(&(png.len() as u32).to_le_bytes());
                out.extend_from_slice(png);
            }
            FrameRecord::Inter { mv, res } => {
                let (mv, res) = (mv.to_bytes(), res.to_bytes());
                out.push(b'P');
                out.extend_from_slice(&(mv.len() as u32).to_le_bytes());
                out.extend_from_slice(&(res.len() as u32).to_le_bytes());
                out.extend_from_slice(&mv);
                out.extend_from_slice(&res);
            }
        }
        out
    }

    pub fn len_bytes(&self) -> usize {
        match self {
            FrameRecord::Intra { png } => 5 + png.len(),
            FrameRecord::Inter { mv, res } => 9 + mv.len_bytes() + res.len_bytes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceBitstream {
    pub header: SequenceHeader,
    pub records: Vec<FrameRecord>,
}

impl SequenceBitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&h.gop.to_le_bytes());
        out.extend_from_slice(&h.frames.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.push(h.channels);
        out.extend_from_slice(&h.model_id.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.to_bytes());
        }
        out
    }

    pub fn len_bytes(&self) -> usize {
        HEADER_LEN + self.records.iter().map(FrameRecord::len_bytes).sum::<usize>()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::bitstream(bytes.len(), "sequence shorter than its header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::bitstream(0, "bad sequence magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::bitstream(4, format!("unsupported sequence version {}", bytes[4])));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let header = SequenceHeader {
            gop: u16_at(5),
            frames: u32_at(7),
            height: u16_at(11),
            width: u16_at(13),
            channels: bytes[15],
            model_id: u32_at(16),
        };
        if header.gop == 0 {
            return Err(Error::bitstream(5, "GoP size is zero"));
        }
        let mut pos = HEADER_LEN;
        let need = |pos: usize, n: usize| {
            if bytes.len() < pos + n {
                Err(Error::bitstream(bytes.len(), format!("truncated frame record (need {n} bytes at {pos})")))
            } else {
                Ok(())
            }
        };
        let read_u32 = |pos: usize| u32::from_le_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]]) as usize;
        let mut records = Vec::with_capacity(header.frames as usize);
        for t in 0..header.frames as usize {
            need(pos, 1)?;
            let kind = bytes[pos];
            let expect_intra = t % header.gop as usize == 0;
            match kind {
                b'I' if expect_intra => {
                    need(pos, 5)?;
                    let len = read_u32(pos + 1);
                    need(pos + 5, len)?;
                    records.push(FrameRecord::Intra {
                        png: bytes[pos + 5..pos + 5 + len].to_vec(),
                    });
                    pos += 5 + len;
                }
                b'P' if !expect_intra => {
                    need(pos, 9)?;
                    let (ml, rl) = (read_u32(pos + 1), read_u32(pos + 5));
                    need(pos + 9, ml + rl)?;
                    let at = |e: Error, base: usize| match e {
                        Error::Bitstream { offset, reason } => Error::bitstream(base + offset, reason),
                        other => other,
                    };
                    let (mv, used_mv) = Bitstream::parse(&bytes[pos + 9..pos + 9 + ml]).map_err(|e| at(e, pos + 9))?;
                    let (res, used_res) =
                        Bitstream::parse(&bytes[pos + 9 + ml..pos + 9 + ml + rl]).map_err(|e| at(e, pos + 9 + ml))?;
                    if used_mv != ml || used_res != rl {
                        return Err(Error::bitstream(pos, "stream length disagrees with record length"));
                    }
                    records.push(FrameRecord::Inter { mv, res });
                    pos += 9 + ml + rl;
                }
                _ => return Err(Error::bitstream(pos, format!("unexpected record type {kind:#04x} for frame {t}"))),
            }
        }
        if pos != bytes.len() {
            return Err(Error::bitstream(pos, "trailing bytes after the last frame"));
        }
        Ok(Self { header, records })
    }
}

/// Encoder output: the container, the encoder-side reconstructions and the
/// per-frame accounting.
#[derive(Clone, Debug)]
pub struct EncodeReport {
    pub bitstream: SequenceBitstream,
    pub reconstructions: Vec<Frame>,
    /// Actual record size in bits (header excluded).
    pub frame_bits: Vec<f64>,
    /// Entropy-model estimate for P-frames (0 for I-frames).
    pub estimated_bits: Vec<f64>,
    pub psnr_db: Vec<f64>,
}

impl EncodeReport {
    pub fn total_bits(&self) -> f64 {
        self.bitstream.len_bytes() as f64 * 8.0
    }

    pub fn bpp(&self) -> f64 {
        let h = &self.bitstream.header;
        sequence_bpp(self.total_bits(), h.frames as usize, h.height as usize, h.width as usize).unwrap_or(f64::NAN)
    }

    pub fn mean_psnr(&self) -> f64 {
        self.psnr_db.iter().sum::<f64>() / self.psnr_db.len().max(1) as f64
    }
}

fn intra_reconstruction(frame: &Frame) -> Result<(Vec<u8>, Frame)> {
    let png = frame.encode_png();
    let decoded = Frame::decode_png(&png)?;
    Ok((png, decoded))
}

fn latent_code(kind: StreamKind, t: &Tensor) -> Result<LatentCode> {
    LatentCode::from_tensor(kind, t, 0)
}

/// Encodes `seq` closed-loop: every P-frame is predicted from the previous
/// decoded frame.
pub fn encode_sequence(seq: &VideoSequence, gop: &GopStructure, model: &CodecModel) -> Result<EncodeReport> {
    if gop.num_frames() != seq.len() {
        return Err(Error::InvalidSequence(format!(
            "GoP covers {} frames, sequence has {}",
            gop.num_frames(),
            seq.len()
        )));
    }
    let (c, h, w) = seq.dims();
    if c != model.arch.image_channels {
        return Err(Error::ShapeMismatch(format!("model codes {} channels, sequence has {c}", model.arch.image_channels)));
    }
    if h > u16::MAX as usize || w > u16::MAX as usize || gop.gop_size > u16::MAX as usize {
        return Err(Error::OutOfRange("frame or GoP size does not fit the container".into()));
    }
    let header = SequenceHeader {
        gop: gop.gop_size as u16,
        frames: seq.len() as u32,
        height: h as u16,
        width: w as u16,
        channels: c as u8,
        model_id: model.model_id(),
    };
    let (mv_coder, res_coder) = model.entropy_coders();
    let (mv_cdf, res_cdf) = (model.mv_cdf(), model.res_cdf());
    let p = model.params.bind_frozen();
    let mut report = EncodeReport {
        bitstream: SequenceBitstream {
            header,
            records: Vec::with_capacity(seq.len()),
        },
        reconstructions: Vec::with_capacity(seq.len()),
        frame_bits: Vec::new(),
        estimated_bits: Vec::new(),
        psnr_db: Vec::new(),
    };
    for (t, frame) in seq.frames().iter().enumerate() {
        let (record, recon, est) = if gop.is_intra(t) {
            let (png, recon) = intra_reconstruction(frame)?;
            (FrameRecord::Intra { png }, recon, 0.0)
        } else {
            let reference = pad_frame(report.reconstructions.last().expect("P-frame follows a frame"), DOWNSAMPLE);
            let cur = pad_frame(frame, DOWNSAMPLE);
            model.check_input(&cur)?;
            let flow = model.motion.forward(&p, &cur, &reference);
            let mv_q = quantize_infer(&latent_code(StreamKind::Mv, &model.mv_encoder.forward(&p, &flow))?)?;
            let mv_hat = mv_q.to_tensor();
            let (_, _, refined) = model.motion_compensate(&p, &reference, &mv_hat)?;
            let target = cur.sub(&refined.mean());
            let res_q = quantize_infer(&latent_code(StreamKind::Residual, &model.res_encoder.forward(&p, &target))?)?;
            let res_hat = res_q.to_tensor();
            let (_, _, final_recon) = model.reconstruct(&p, &refined, &res_hat)?;
            let est = estimate_bits(&mv_q.as_f32(), mv_q.shape, &mv_cdf)? + estimate_bits(&res_q.as_f32(), res_q.shape, &res_cdf)?;
            let record = FrameRecord::Inter {
                mv: entropy_encode(&mv_q, &mv_coder)?,
                res: entropy_encode(&res_q, &res_coder)?,
            };
            (record, crop_to_frame(&final_recon, h, w)?, est)
        };
        report.frame_bits.push(record.len_bytes() as f64 * 8.0);
        report.estimated_bits.push(est);
        report.psnr_db.push(psnr(frame, &recon)?);
        report.bitstream.records.push(record);
        report.reconstructions.push(recon);
    }
    Ok(report)
}

fn check_streams(mv: &Bitstream, res: &Bitstream, coders: (&EntropyCoder, &EntropyCoder)) -> Result<()> {
    if mv.kind != StreamKind::Mv || res.kind != StreamKind::Residual {
        return Err(Error::bitstream(0, "P-frame streams are in the wrong order"));
    }
    if mv.model_id != coders.0.model_id {
        return Err(Error::ModelMismatch {
            expected: mv.model_id,
            actual: coders.0.model_id,
        });
    }
    Ok(())
}

pub fn decode_sequence(bs: &SequenceBitstream, model: &CodecModel) -> Result<VideoSequence> {
    let hdr = bs.header;
    let id = model.model_id();
    if hdr.model_id != id {
        return Err(Error::ModelMismatch {
            expected: hdr.model_id,
            actual: id,
        });
    }
    if hdr.channels as usize != model.arch.image_channels {
        return Err(Error::bitstream(15, "channel count does not match the model"));
    }
    let (h, w) = (hdr.height as usize, hdr.width as usize);
    let (mv_coder, res_coder) = model.entropy_coders();
    let p = model.params.bind_frozen();
    let mut frames: Vec<Frame> = Vec::with_capacity(bs.records.len());
    for record in &bs.records {
        let frame = match record {
            FrameRecord::Intra { png } => {
                let f = Frame::decode_png(png)?;
                if f.dims() != (hdr.channels as usize, h, w) {
                    return Err(Error::bitstream(0, "I-frame dimensions disagree with the header"));
                }
                f
            }
            FrameRecord::Inter { mv, res } => {
                check_streams(mv, res, (&mv_coder, &res_coder))?;
                let prev = frames
                    .last()
                    .ok_or_else(|| Error::bitstream(HEADER_LEN, "sequence starts with a P-frame"))?;
                let reference = pad_frame(prev, DOWNSAMPLE);
                let mv_hat = entropy_decode(mv, &mv_coder)?.to_tensor();
                let (_, _, refined) = model.motion_compensate(&p, &reference, &mv_hat)?;
                let res_hat = entropy_decode(res, &res_coder)?.to_tensor();
                let (_, _, final_recon) = model.reconstruct(&p, &refined, &res_hat)?;
                crop_to_frame(&final_recon, h, w)?
            }
        };
        frames.push(frame);
    }
    VideoSequence::new("decoded", frames)
}
