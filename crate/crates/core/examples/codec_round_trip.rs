//! Codes a synthetic clip with a small codec, serializes the bitstream,
//! decodes it and checks the decoder matches the encoder's reconstructions.

use uncodec::evaluation::psnr;
use uncodec::frames::GopStructure;
use uncodec::pipeline::{decode_sequence, encode_sequence, CodecModel, SequenceBitstream};
use uncodec::synthetic::{generate, MovingShapesConfig};
use uncodec::training::desk_config;

fn main() -> uncodec::Result<()> {
    let model = CodecModel::new(&desk_config().with("codec.h", 2)?)?;
    let seq = generate(&MovingShapesConfig {
        height: 48,
        width: 40,
        frames: 5,
        ..Default::default()
    })?
    .sequence;
    let report = encode_sequence(&seq, &GopStructure::new(seq.len(), 4)?, &model)?;
    let bytes = report.bitstream.to_bytes();
    let decoded = decode_sequence(&SequenceBitstream::parse(&bytes)?, &model)?;
    for (t, (src, rec)) in seq.frames().iter().zip(decoded.frames()).enumerate() {
        println!("frame {t}: {:>6} bits  psnr {:.2} dB", report.frame_bits[t], psnr(src, rec)?);
    }
    println!(
        "{} bytes, {:.4} bpp, decoder matches encoder: {}",
        bytes.len(),
        report.bpp(),
        decoded.frames() == report.reconstructions.as_slice()
    );
    Ok(())
}
