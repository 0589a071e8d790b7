use caufc_core::codec::{decode, encode_with_report, Bitstream};
use caufc_core::synthetic::{GenSpec, Generator};
use caufc_core::{AlignmentSpec, CodecArch, CodecModel};

#[test]
fn payload_tracks_the_estimate_and_decodes_exactly() {
    let model = CodecModel::init(CodecArch::default(), 21).unwrap();
    let cnn = Generator::new(GenSpec::cnn(vec![24, 4, 5], 3, 1)).unwrap();
    let vit = Generator::new(GenSpec::vit(vec![17, 24], 3, 2)).unwrap();
    for i in 0..6 {
        for (t, spec) in [
            (cnn.sample(i).tensor, AlignmentSpec::cnn_default()),
            (vit.sample(i).tensor, AlignmentSpec::vit_default()),
        ] {
            let r = encode_with_report(&model, &t, &spec).unwrap();
            let actual = r.bitstream.payload_bits() as f64;
            assert!(
                (actual - r.bits_estimate).abs() <= 0.02 * r.bits_estimate + 64.0,
                "payload {} vs estimate {:.1}",
                actual,
                r.bits_estimate
            );
            let parsed = Bitstream::from_bytes(&r.bitstream.to_bytes()).unwrap();
            assert_eq!(decode(&model, &parsed).unwrap(), r.reconstruction);
        }
    }
}

#[test]
fn truncated_container_is_rejected() {
    let model = CodecModel::init(CodecArch::default(), 2).unwrap();
    let t = Generator::new(GenSpec::vit(vec![8, 8], 1, 3)).unwrap().sample(0).tensor;
    let bytes = encode_with_report(&model, &t, &AlignmentSpec::vit_default()).unwrap().bitstream.to_bytes();
    for cut in 0..bytes.len() {
        assert!(Bitstream::from_bytes(&bytes[..cut]).is_err());
    }
}
