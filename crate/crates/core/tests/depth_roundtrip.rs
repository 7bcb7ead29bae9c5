use navforge::depth_codec::{
    decode_depth, depth_to_pointcloud, encode_depth, pointcloud_to_depth, CameraIntrinsics,
    DepthCodecParams, DepthMap,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn codec_grid_round_trip() {
    let params = DepthCodecParams::default();
    for i in 0..=1000 {
        let v = i as f64 / 1000.0;
        let back = encode_depth(decode_depth(v, &params).unwrap(), &params).unwrap();
        assert!((back - v).abs() < 1e-9, "v={v} back={back}");
    }
    assert_eq!(decode_depth(0.0, &params).unwrap(), 960.0);
    assert_eq!(decode_depth(1.0, &params).unwrap(), 1.0);
}

#[test]
fn dense_map_survives_cloud_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (w, h) = (64, 64);
        let k = CameraIntrinsics::new(
            rng.gen_range(20.0..2000.0),
            rng.gen_range(20.0..2000.0),
            rng.gen_range(0.0..w as f64),
            rng.gen_range(0.0..h as f64),
            w,
            h,
        )
        .unwrap();
        let values: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.5..900.0)).collect();
        let depth = DepthMap::new(w, h, values).unwrap();
        let cloud = depth_to_pointcloud(&depth, &k).unwrap();
        assert_eq!(cloud.points.len(), w * h);
        let (back, diag) = pointcloud_to_depth(&cloud, &k).unwrap();
        assert_eq!(diag.out_of_bounds + diag.non_positive_z, 0);
        assert_eq!(back.values(), depth.values());
    }
}

proptest! {
    #[test]
    fn encode_inverts_decode(v in 0.0..=1.0f64, d_min in 0.01..10.0f64, ratio in 1.5..1e4f64) {
        let params = DepthCodecParams::new(d_min, d_min * ratio).unwrap();
        let d = decode_depth(v, &params).unwrap();
        prop_assert!(d >= params.d_min * (1.0 - 1e-12) && d <= params.d_max * (1.0 + 1e-12));
        prop_assert!((encode_depth(d, &params).unwrap() - v).abs() < 1e-9);
    }
}
