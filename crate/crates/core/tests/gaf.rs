use dpcandle::gaf::{
    decode_diagonal, encode_set, encode_window, gaf_matrix, minmax_scale, read_cache, to_angles,
    write_cache, Normalization,
};
use dpcandle::market::{build_dataset, GeneratorConfig};
use proptest::prelude::*;

fn round_trip_error(series: &[f64]) -> f64 {
    let scaled = minmax_scale(series);
    let decoded = decode_diagonal(&gaf_matrix(&to_angles(&scaled).unwrap())).unwrap();
    scaled
        .values()
        .iter()
        .zip(decoded.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn diagonal_decodes_the_scaled_series(series in prop::collection::vec(-1e4f64..1e4, 2..=64)) {
        prop_assert!(round_trip_error(&series) <= 1e-9);
    }

    #[test]
    fn matrix_is_symmetric_and_bounded(series in prop::collection::vec(-50f64..50.0, 1..=32)) {
        let g = gaf_matrix(&to_angles(&minmax_scale(&series)).unwrap());
        let n = g.n();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
                prop_assert!(g.get(i, j).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn scaling_is_affine_invariant(
        series in prop::collection::vec(-10f64..10.0, 2..=20),
        shift in -100f64..100.0,
        scale in 0.1f64..10.0,
    ) {
        let moved: Vec<f64> = series.iter().map(|x| x * scale + shift).collect();
        let a = minmax_scale(&series);
        let b = minmax_scale(&moved);
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn constant_series_decodes_to_one_half() {
    let s = minmax_scale(&[7.0; 5]);
    let d = decode_diagonal(&gaf_matrix(&to_angles(&s).unwrap())).unwrap();
    for v in d.values() {
        assert!((v - 0.5).abs() < 1e-15);
    }
}

#[test]
fn encoded_windows_decode_per_channel() {
    let data = build_dataset(2, 1, 11, &GeneratorConfig::default()).unwrap();
    for lw in &data.train {
        let t = encode_window(&lw.window, Normalization::PerSeries);
        for (c, series) in lw.window.series().iter().enumerate() {
            let want = minmax_scale(series);
            let got = decode_diagonal(&t.plane(c)).unwrap();
            for (a, b) in want.values().iter().zip(got.values()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn encoded_set_cache_round_trip() {
    let data = build_dataset(3, 1, 5, &GeneratorConfig::default()).unwrap();
    let set = encode_set(&data.train, Normalization::Joint).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.gaf");
    write_cache(&path, &set).unwrap();
    let back = read_cache(&path).unwrap();
    assert_eq!(back.len(), set.len());
    assert_eq!(back.labels(), set.labels());
    assert_eq!(back.inputs(), set.inputs());
    assert_eq!(back.mode(), Normalization::Joint);
}
