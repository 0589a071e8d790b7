use caufc::caft::{from_bytes, header_len, read_caft, to_bytes, write_caft};
use caufc_core::{ArchTag, FeatureTensor, Layout};
use proptest::prelude::*;
use std::path::Path;

fn tensor() -> impl Strategy<Value = FeatureTensor> {
    prop_oneof![
        (1usize..6, 1usize..6, 1usize..6).prop_map(|(n, h, w)| (Layout::ChannelMajor3D, vec![n, h, w], ArchTag::CnnLike)),
        (1usize..12, 1usize..12).prop_map(|(m, l)| (Layout::Tokens2D, vec![m, l], ArchTag::VitLike)),
    ]
    .prop_flat_map(|(layout, dims, arch)| {
        let n: usize = dims.iter().product();
        prop::collection::vec(-1e6f32..1e6, n).prop_map(move |data| FeatureTensor::new(layout, dims.clone(), data, arch).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bytes_round_trip_bit_exact(t in tensor()) {
        let b = to_bytes(&t);
        prop_assert_eq!(b.len(), header_len(t.dims().len()) + 4 * t.len());
        let back = from_bytes(&b, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn any_truncation_is_rejected(t in tensor(), cut in 0usize..1000) {
        let b = to_bytes(&t);
        let cut = cut % b.len();
        prop_assert!(from_bytes(&b[..cut], Path::new("mem")).is_err());
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.caft");
    let t = FeatureTensor::new(Layout::ChannelMajor3D, vec![3, 2, 2], (0..12).map(|i| i as f32 - 5.5).collect(), ArchTag::CnnLike).unwrap();
    write_caft(&t, &p).unwrap();
    assert_eq!(read_caft(&p).unwrap(), t);
}
