//! The P-frame codec: motion estimation, MV coding with an ensemble
//! decoder, prediction refinement, residual coding with an ensemble
//! decoder and reconstruction refinement; plus closed-loop sequence coding.

pub mod checkpoint;
mod model;
mod pframe;
mod sequence;

pub use model::{
    is_residual_param, model_size_report, CodecConfig, CodecModel, InterOutputs, ModelSizeReport, Mode, RefineNet,
    ResidualOutputs, MOTION_PATH, REFINE_LAYERS, RESIDUAL_PATH,
};
pub use pframe::{crop_to_frame, pad_frame, pframe_forward, round_up, PFrameResult};
pub use sequence::{decode_sequence, encode_sequence, EncodeReport, FrameRecord, SequenceBitstream, SequenceHeader};
