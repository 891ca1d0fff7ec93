use uncodec::config::Config;
use uncodec::evaluation::{eval_model, psnr};
use uncodec::frames::{GopStructure, VideoSequence};
use uncodec::pipeline::{
    checkpoint, decode_sequence, encode_sequence, model_size_report, CodecModel, FrameRecord, SequenceBitstream,
};
use uncodec::synthetic::{generate, MovingShapesConfig};
use uncodec::Error;

fn tiny(seed: u64) -> CodecModel {
    let mut c = Config::default();
    c.apply_overrides(&[
        "codec.h=3",
        "codec.latent_channels_mv=4",
        "codec.latent_channels_res=6",
        "codec.hidden_channels=6",
        "codec.backbone_channels=6",
        "codec.branch_channels=4",
        "codec.motion_channels=4",
        "codec.motion_levels=2",
        "codec.refine_channels=6",
    ])
    .unwrap();
    CodecModel::new(&c.with("seed", seed).unwrap()).unwrap()
}

fn clip(frames: usize, h: usize, w: usize) -> VideoSequence {
    generate(&MovingShapesConfig {
        height: h,
        width: w,
        frames,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
    .sequence
}

#[test]
fn closed_loop_with_padding_and_several_gops() {
    let model = tiny(0);
    let seq = clip(7, 23, 37);
    let enc = encode_sequence(&seq, &GopStructure::new(7, 3).unwrap(), &model).unwrap();
    let intra: Vec<bool> = enc
        .bitstream
        .records
        .iter()
        .map(|r| matches!(r, FrameRecord::Intra { .. }))
        .collect();
    assert_eq!(intra, vec![true, false, false, true, false, false, true]);
    let bytes = enc.bitstream.to_bytes();
    let dec = decode_sequence(&SequenceBitstream::parse(&bytes).unwrap(), &model).unwrap();
    assert_eq!(dec.frames(), enc.reconstructions.as_slice());
    for (i, (src, rec)) in seq.frames().iter().zip(dec.frames()).enumerate() {
        assert_eq!(psnr(src, rec).unwrap(), enc.psnr_db[i]);
        assert_eq!(rec.dims(), (3, 23, 37));
    }
}

#[test]
fn wrong_model_is_rejected() {
    let seq = clip(3, 16, 16);
    let enc = encode_sequence(&seq, &GopStructure::new(3, 10).unwrap(), &tiny(0)).unwrap();
    let err = decode_sequence(&enc.bitstream, &tiny(1)).unwrap_err();
    assert!(matches!(err, Error::ModelMismatch { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn truncated_stream_reports_offset() {
    let seq = clip(3, 16, 16);
    let bytes = encode_sequence(&seq, &GopStructure::new(3, 10).unwrap(), &tiny(0))
        .unwrap()
        .bitstream
        .to_bytes();
    for cut in [3, 19, bytes.len() / 2, bytes.len() - 1] {
        let err = SequenceBitstream::parse(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Bitstream { .. }), "cut {cut}: {err}");
        assert_eq!(err.exit_code(), 4);
    }
}

#[test]
fn checkpoint_round_trip_codes_identically() {
    let model = tiny(5);
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&model, &dir.path().join(checkpoint::CHECKPOINT_FILE)).unwrap();
    let loaded = checkpoint::load(dir.path()).unwrap();
    assert_eq!(loaded.model_id(), model.model_id());
    let seq = clip(3, 16, 32);
    let gop = GopStructure::new(3, 10).unwrap();
    let a = encode_sequence(&seq, &gop, &model).unwrap().bitstream.to_bytes();
    let b = encode_sequence(&seq, &gop, &loaded).unwrap().bitstream.to_bytes();
    assert_eq!(a, b);
    assert!(checkpoint::from_bytes(&a).is_err());
}

#[test]
fn eval_uses_real_bitstreams() {
    let model = tiny(0);
    let seqs = vec![clip(4, 32, 32), clip(1, 32, 32)];
    let e = eval_model(&model, &seqs, 10).unwrap();
    assert_eq!(e.sequences.len(), 2);
    let total_bits: f64 = e.sequences.iter().map(|s| s.bits).sum();
    assert!((e.point.bpp - total_bits / (5.0 * 32.0 * 32.0)).abs() < 1e-12);
    let single = &e.sequences[1];
    assert_eq!(single.frames, 1);
    let header_bpp = 20.0 * 8.0 / 1024.0;
    assert!((single.bpp - single.estimated_bpp - header_bpp).abs() < 1e-12);
    let p = &e.sequences[0];
    assert!((p.bpp - p.estimated_bpp).abs() <= 0.02 * p.estimated_bpp + header_bpp + 0.2);
}

#[test]
fn size_report_groups_add_up() {
    let r = model_size_report(&Config::default(), 4).unwrap();
    assert_eq!(r.groups.iter().map(|g| g.1).sum::<usize>(), r.total);
    assert_eq!(r.branch_conv_layers_per_member, 4);
}
