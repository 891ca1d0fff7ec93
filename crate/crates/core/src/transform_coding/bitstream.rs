//! Self-describing container for one range-coded latent tensor.
//!
//! Layout (little-endian): `UNCC`, version u8, stream kind u8, C/H/W as u16,
//! model id u32, payload length u32, payload.

use super::entropy_model::EntropyModel;
use super::quantize::{QuantizedCode, StreamKind};
use super::range_coder::CodingTables;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UNCC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub kind: StreamKind,
    pub shape: [usize; 3],
    pub model_id: u32,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn len_bytes(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len_bytes());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.kind.to_byte());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        out.extend_from_slice(&self.model_id.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one stream from the front of `bytes`; returns it and the bytes consumed.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::bitstream(bytes.len(), "stream shorter than its header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::bitstream(0, "bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::bitstream(4, format!("unsupported version {}", bytes[4])));
        }
        let kind = StreamKind::from_byte(bytes[5]).ok_or_else(|| Error::bitstream(5, "unknown stream kind"))?;
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let shape = [u16_at(6), u16_at(8), u16_at(10)];
        let model_id = u32_at(12);
        let len = u32_at(16) as usize;
        let end = HEADER_LEN + len;
        if bytes.len() < end {
            return Err(Error::bitstream(bytes.len(), "payload is truncated"));
        }
        Ok((
            Self {
                kind,
                shape,
                model_id,
                payload: bytes[HEADER_LEN..end].to_vec(),
            },
            end,
        ))
    }
}

/// Frozen coding tables of one entropy model, tagged with the model id.
#[derive(Clone, Debug)]
pub struct EntropyCoder {
    pub model_id: u32,
    pub tables: CodingTables,
}

impl EntropyCoder {
    pub fn new(model: &dyn EntropyModel, model_id: u32) -> Self {
        Self {
            model_id,
            tables: CodingTables::build(model),
        }
    }

    pub fn channels(&self) -> usize {
        self.tables.channels.len()
    }
}

pub fn entropy_encode(code: &QuantizedCode, coder: &EntropyCoder) -> Result<Bitstream> {
    let [c, h, w] = code.shape;
    if code.shape.iter().any(|&d| d > u16::MAX as usize) {
        return Err(Error::OutOfRange(format!("shape {:?} does not fit the header", code.shape)));
    }
    let payload = if code.is_empty() {
        Vec::new()
    } else {
        if c != coder.channels() {
            return Err(Error::ShapeMismatch(format!("code has {c} channels, coder has {}", coder.channels())));
        }
        coder.tables.encode(&code.values, h * w)
    };
    Ok(Bitstream {
        kind: code.kind,
        shape: code.shape,
        model_id: coder.model_id,
        payload,
    })
}

pub fn entropy_decode(bs: &Bitstream, coder: &EntropyCoder) -> Result<QuantizedCode> {
    if bs.model_id != coder.model_id {
        return Err(Error::ModelMismatch {
            expected: bs.model_id,
            actual: coder.model_id,
        });
    }
    let [c, h, w] = bs.shape;
    let count = c * h * w;
    if count == 0 {
        return QuantizedCode::new(bs.kind, bs.shape, Vec::new());
    }
    if c != coder.channels() {
        return Err(Error::bitstream(6, format!("stream has {c} channels, coder has {}", coder.channels())));
    }
    let values = coder.tables.decode(&bs.payload, count, h * w)?;
    QuantizedCode::new(bs.kind, bs.shape, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform_coding::entropy_model::LaplaceModel;

    fn coder() -> EntropyCoder {
        EntropyCoder::new(&LaplaceModel::new(vec![0.0; 3], vec![1.5; 3], 1e-9), 0xABCD_0123)
    }

    #[test]
    fn container_round_trip() {
        let code = QuantizedCode::new(StreamKind::Residual, [3, 2, 2], (0..12).map(|i| i - 6).collect()).unwrap();
        let bs = entropy_encode(&code, &coder()).unwrap();
        let bytes = bs.to_bytes();
        assert_eq!(&bytes[..4], b"UNCC");
        let (parsed, used) = Bitstream::parse(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(entropy_decode(&parsed, &coder()).unwrap(), code);
    }

    #[test]
    fn empty_code_is_header_only() {
        let code = QuantizedCode::new(StreamKind::Mv, [3, 0, 0], Vec::new()).unwrap();
        let bs = entropy_encode(&code, &coder()).unwrap();
        assert_eq!(bs.to_bytes().len(), HEADER_LEN);
        assert_eq!(entropy_decode(&bs, &coder()).unwrap(), code);
    }

    #[test]
    fn model_mismatch_and_corruption() {
        let code = QuantizedCode::new(StreamKind::Mv, [3, 1, 1], vec![0, 1, 2]).unwrap();
        let bs = entropy_encode(&code, &coder()).unwrap();
        let mut other = coder();
        other.model_id ^= 1;
        assert!(matches!(entropy_decode(&bs, &other), Err(Error::ModelMismatch { .. })));
        let mut bytes = bs.to_bytes();
        bytes[0] = b'X';
        assert!(Bitstream::parse(&bytes).is_err());
        let bytes = bs.to_bytes();
        assert!(Bitstream::parse(&bytes[..bytes.len() - 1]).is_err());
    }
}
