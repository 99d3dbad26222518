use std::fs;

use dpcandle::market::{
    build_dataset, extract_windows, label_windows, load_ohlc_csv, read_archive, read_ohlc_csv,
    validate_pattern, write_archive, write_ohlc_csv, GeneratorConfig, OhlcBar, PatternClass,
    NUM_CLASSES,
};
use dpcandle::Error;

#[test]
fn dataset_is_balanced_and_labels_are_unique() {
    let d = build_dataset(4, 2, 3, &GeneratorConfig::default()).unwrap();
    assert_eq!(d.train.len(), 4 * NUM_CLASSES);
    assert_eq!(d.test.len(), 2 * NUM_CLASSES);
    for lw in d.train.iter().chain(&d.test) {
        assert_eq!(lw.window.len(), 10);
        for c in PatternClass::ALL {
            assert_eq!(validate_pattern(&lw.window, c), c == lw.label);
        }
        for b in lw.window.bars() {
            assert!(b.violation().is_none());
        }
    }
}

#[test]
fn archive_round_trips_and_is_byte_stable() {
    let g = GeneratorConfig::default();
    let a = build_dataset(3, 1, 77, &g).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_archive(dir.path().join("a"), &a).unwrap();
    let back = read_archive(dir.path().join("a")).unwrap();
    assert_eq!(back, a);

    let b = build_dataset(3, 1, 77, &g).unwrap();
    write_archive(dir.path().join("b"), &b).unwrap();
    for f in ["train.csv", "test.csv", "meta"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn different_seeds_give_different_data() {
    let g = GeneratorConfig::default();
    let a = build_dataset(2, 1, 1, &g).unwrap();
    let b = build_dataset(2, 1, 2, &g).unwrap();
    assert_ne!(a.train, b.train);
}

#[test]
fn ohlc_csv_round_trip_and_relabel() {
    let d = build_dataset(1, 1, 9, &GeneratorConfig::default()).unwrap();
    // lay the windows end to end on one clock
    let mut bars: Vec<OhlcBar> = Vec::new();
    for lw in &d.train {
        for b in lw.window.bars() {
            let t = 1_000 + 60 * bars.len() as i64;
            bars.push(OhlcBar::new(t, b.open, b.high, b.low, b.close).unwrap());
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bars.csv");
    write_ohlc_csv(&path, &bars).unwrap();
    assert_eq!(load_ohlc_csv(&path).unwrap(), bars);

    let windows = extract_windows(&bars, 10, 10).unwrap();
    let labeled = label_windows(windows);
    let labels: Vec<_> = labeled.iter().map(|l| l.label).collect();
    let want: Vec<_> = d.train.iter().map(|l| l.label).collect();
    assert_eq!(labels, want);
}

#[test]
fn csv_rows_are_sorted_by_timestamp() {
    let text = "timestamp,open,high,low,close\n120,2,3,1,2\n60,1,2,0.5,1.5\n";
    let bars = read_ohlc_csv(text.as_bytes()).unwrap();
    assert_eq!(bars[0].timestamp, 60);
    assert_eq!(bars[1].timestamp, 120);
}

#[test]
fn duplicate_timestamps_are_rejected() {
    let text = "timestamp,open,high,low,close\n60,2,3,1,2\n60,1,2,0.5,1.5\n";
    assert!(matches!(
        read_ohlc_csv(text.as_bytes()),
        Err(Error::InvariantViolation { row: 2, .. })
    ));
}

#[test]
fn missing_archive_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(read_archive(dir.path()).is_err());
}
