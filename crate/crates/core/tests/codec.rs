use depthfill_core::raster::{
    decode_disparity, depth_to_disparity, disparity_to_depth, encode_disparity, raster_to_depth_map,
};
use depthfill_core::{CameraRig, DisparityRaster};
use proptest::prelude::*;

#[test]
fn every_code_round_trips() {
    for code in 0..=u16::MAX {
        assert_eq!(encode_disparity(decode_disparity(code)), code, "code {code}");
    }
}

#[test]
fn zero_code_decodes_to_invalid_and_back() {
    assert_eq!(decode_disparity(0), None);
    assert_eq!(encode_disparity(None), 0);
    assert_eq!(encode_disparity(Some(f64::NAN)), 0);
}

#[test]
fn depth_map_marks_invalid_pixels() {
    let rig = CameraRig::new(0.22, 2000.0).unwrap();
    let raster = DisparityRaster::new(3, 1, vec![0, 1, 257]).unwrap();
    let depth = raster_to_depth_map(&raster, &rig);
    assert_eq!(depth.get(0, 0), None);
    // Code 1 is zero disparity, which has no finite depth.
    assert_eq!(depth.get(1, 0), None);
    assert!((depth.get(2, 0).unwrap() - 440.0).abs() < 1e-9);
    assert_eq!(depth.valid_count(), 1);
}

proptest! {
    #[test]
    fn encode_is_monotone(a in 0.0f64..255.99, b in 0.0f64..255.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(encode_disparity(Some(lo)) <= encode_disparity(Some(hi)));
    }

    #[test]
    fn encode_error_is_half_a_step(d in 0.0f64..255.99) {
        let back = decode_disparity(encode_disparity(Some(d))).unwrap();
        prop_assert!((back - d).abs() <= 0.5 / 256.0 + 1e-12);
    }

    #[test]
    fn depth_and_disparity_are_inverse(z in 0.5f64..500.0, b in 0.05f64..1.0, f in 100.0f64..5000.0) {
        let rig = CameraRig::new(b, f).unwrap();
        let d = depth_to_disparity(Some(z), &rig);
        let z2 = disparity_to_depth(d, &rig).unwrap();
        prop_assert!((z2 - z).abs() <= 1e-9 * z);
    }
}
