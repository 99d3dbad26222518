//! Gramian Angular (summation) Field encoding of OHLC windows.
//!
//! A series is min-max scaled into `[0, 1]`, mapped to polar angles
//! `φ_i = arccos(x̃_i)`, and expanded into the symmetric matrix
//! `G[i][j] = cos(φ_i + φ_j)`. Index 0 is the earliest bar, so time runs from
//! the top-left corner to the bottom-right.
//!
//! Because `φ ∈ [0, π/2]`, the diagonal `G[i][i] = cos(2φ_i)` determines the
//! normalized series exactly: `x̃_i = sqrt((1 + G[i][i]) / 2)`. That is what
//! [`decode_diagonal`] computes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{LabeledWindow, PatternClass, Window};
use crate::par::Exec;

pub mod cache;

pub use cache::{read_cache, write_cache};

/// Slack allowed outside `[0, 1]` (or `[-1, 1]`) before a domain error.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;

/// Channel order of every encoded tensor.
pub const CHANNELS: [&str; 4] = ["open", "high", "low", "close"];

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSeries(Vec<f64>);

impl NormalizedSeries {
    /// Wraps values without checking the `[0, 1]` range; [`to_angles`] checks.
    pub fn from_raw(values: Vec<f64>) -> Self {
        NormalizedSeries(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Min-max scaling onto `[0, 1]`. A constant series maps to 0.5 everywhere.
pub fn minmax_scale(series: &[f64]) -> NormalizedSeries {
    let (lo, hi) = bounds(series);
    scale_with(series, lo, hi)
}

fn bounds(series: &[f64]) -> (f64, f64) {
    series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

fn scale_with(series: &[f64], lo: f64, hi: f64) -> NormalizedSeries {
    let range = hi - lo;
    if !(range > 0.0) {
        return NormalizedSeries(vec![0.5; series.len()]);
    }
    NormalizedSeries(
        series
            .iter()
            .map(|&x| ((x - lo) / range).clamp(0.0, 1.0))
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngleSeries {
    /// `φ_i = arccos(x̃_i)`, in `[0, π/2]`.
    pub angles: Vec<f64>,
    /// `r_i = t_i / N` with 1-based `t_i`. Informational only; the Gramian
    /// matrix does not use it.
    pub radii: Vec<f64>,
}

pub fn to_angles(series: &NormalizedSeries) -> Result<AngleSeries> {
    let n = series.len();
    let mut angles = Vec::with_capacity(n);
    for (i, &x) in series.values().iter().enumerate() {
        if !(x >= -DOMAIN_TOLERANCE && x <= 1.0 + DOMAIN_TOLERANCE) {
            return Err(Error::Domain(format!(
                "normalized value {x} at position {i} is outside [0, 1]"
            )));
        }
        angles.push(x.clamp(0.0, 1.0).acos());
    }
    let radii = (1..=n).map(|t| t as f64 / n as f64).collect();
    Ok(AngleSeries { angles, radii })
}

/// Square symmetric matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GafMatrix {
    n: usize,
    data: Vec<f64>,
}

impl GafMatrix {
    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: data.len(),
            });
        }
        Ok(GafMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

pub fn gaf_matrix(angles: &AngleSeries) -> GafMatrix {
    let phi = &angles.angles;
    let n = phi.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = (phi[i] + phi[j]).cos();
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    GafMatrix { n, data }
}

/// Recovers the normalized series from the diagonal.
pub fn decode_diagonal(matrix: &GafMatrix) -> Result<NormalizedSeries> {
    matrix
        .diagonal()
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            if !(d >= -1.0 - DOMAIN_TOLERANCE && d <= 1.0 + DOMAIN_TOLERANCE) {
                return Err(Error::Domain(format!(
                    "diagonal entry {d} at position {i} is outside [-1, 1]"
                )));
            }
            Ok(((1.0 + d.clamp(-1.0, 1.0)) / 2.0).sqrt())
        })
        .collect::<Result<Vec<_>>>()
        .map(NormalizedSeries)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// One min/max over all four price series of the window.
    #[default]
    Joint,
    /// Each price series scaled on its own.
    PerSeries,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::Joint => "joint",
            Normalization::PerSeries => "per_series",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Normalization::Joint),
            "per_series" => Ok(Normalization::PerSeries),
            other => Err(Error::Format(format!("unknown normalization {other:?}"))),
        }
    }
}

/// `W × W × 4` tensor in row-major `(i, j, channel)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct GafTensor {
    w: usize,
    data: Vec<f64>,
}

impl GafTensor {
    pub fn window(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.w, self.w, CHANNELS.len()]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> GafMatrix {
        let c = CHANNELS.len();
        GafMatrix {
            n: self.w,
            data: self.data.iter().skip(channel).step_by(c).copied().collect(),
        }
    }
}

pub fn encode_window(window: &Window, mode: Normalization) -> GafTensor {
    let series = window.series();
    let normalized: Vec<NormalizedSeries> = match mode {
        Normalization::Joint => {
            let (lo, hi) = series.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), s| {
                    let (a, b) = bounds(s);
                    (lo.min(a), hi.max(b))
                },
            );
            series.iter().map(|s| scale_with(s, lo, hi)).collect()
        }
        Normalization::PerSeries => series.iter().map(|s| minmax_scale(s)).collect(),
    };
    let w = window.len();
    let c = CHANNELS.len();
    let mut data = vec![0.0; w * w * c];
    for (ch, s) in normalized.iter().enumerate() {
        let g = gaf_matrix(&to_angles(s).expect("scaled series lies in [0, 1]"));
        for (k, v) in g.data.iter().enumerate() {
            data[k * c + ch] = *v;
        }
    }
    GafTensor { w, data }
}

/// A labeled, encoded split stored as one contiguous buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSet {
    window: usize,
    mode: Normalization,
    inputs: Vec<f64>,
    labels: Vec<PatternClass>,
}

impl EncodedSet {
    pub fn new(
        window: usize,
        mode: Normalization,
        inputs: Vec<f64>,
        labels: Vec<PatternClass>,
    ) -> Result<Self> {
        let per = window * window * CHANNELS.len();
        if inputs.len() != per * labels.len() {
            return Err(Error::LengthMismatch {
                expected: per * labels.len(),
                actual: inputs.len(),
            });
        }
        Ok(EncodedSet {
            window,
            mode,
            inputs,
            labels,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn mode(&self) -> Normalization {
        self.mode
    }

    pub fn sample_len(&self) -> usize {
        self.window * self.window * CHANNELS.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn label(&self, i: usize) -> PatternClass {
        self.labels[i]
    }

    pub fn labels(&self) -> &[PatternClass] {
        &self.labels
    }

    /// Copies the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> EncodedSet {
        let mut inputs = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        EncodedSet {
            window: self.window,
            mode: self.mode,
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Same inputs, new labels.
    pub fn relabel(&self, labels: Vec<PatternClass>) -> Result<EncodedSet> {
        EncodedSet::new(self.window, self.mode, self.inputs.clone(), labels)
    }
}

pub fn encode_set(windows: &[LabeledWindow], mode: Normalization) -> Result<EncodedSet> {
    encode_set_with(windows, mode, Exec::default())
}

pub fn encode_set_with(
    windows: &[LabeledWindow],
    mode: Normalization,
    exec: Exec,
) -> Result<EncodedSet> {
    let Some(first) = windows.first() else {
        return Err(Error::EmptySplit);
    };
    let w = first.window.len();
    if let Some(bad) = windows.iter().find(|lw| lw.window.len() != w) {
        return Err(Error::ShapeMismatch {
            expected: format!("{w}-bar windows"),
            actual: format!("{}-bar window", bad.window.len()),
        });
    }
    let tensors = exec.map(windows, |lw| encode_window(&lw.window, mode).into_data());
    let inputs = tensors.concat();
    EncodedSet::new(w, mode, inputs, windows.iter().map(|lw| lw.label).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::OhlcBar;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_scale(&[3.0, 4.0, 5.0]).values(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_scale(&[7.0, 7.0, 7.0]).values(), &[0.5, 0.5, 0.5]);
        assert_eq!(minmax_scale(&[0.0, 1.0]).values(), &[0.0, 1.0]);
    }

    #[test]
    fn angle_examples() {
        let a = to_angles(&NormalizedSeries::from_raw(vec![1.0, 0.0, 0.5])).unwrap();
        assert_eq!(a.angles[0], 0.0);
        assert!((a.angles[1] - FRAC_PI_2).abs() < 1e-15);
        assert!((a.angles[2] - FRAC_PI_3).abs() < 1e-15);
        assert_eq!(a.radii, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
    }

    #[test]
    fn out_of_range_angle_input_is_a_domain_error() {
        assert!(to_angles(&NormalizedSeries::from_raw(vec![1.0 + 1e-9])).is_err());
        assert!(to_angles(&NormalizedSeries::from_raw(vec![-1e-9])).is_err());
        assert!(to_angles(&NormalizedSeries::from_raw(vec![1.0 + 1e-13])).is_ok());
    }

    #[test]
    fn single_angle_matrix() {
        let g = gaf_matrix(&to_angles(&NormalizedSeries::from_raw(vec![1.0])).unwrap());
        assert_eq!(g.data(), &[1.0]);
    }

    #[test]
    fn three_point_matrix() {
        let g = gaf_matrix(&to_angles(&minmax_scale(&[1.0, 2.0, 3.0])).unwrap());
        assert!((g.get(0, 0) + 1.0).abs() < 1e-12);
        assert!((g.get(0, 1) + 0.866_025_403_784_438_6).abs() < 1e-12);
        assert!((g.get(1, 1) + 0.5).abs() < 1e-12);
        assert!(g.get(0, 2).abs() < 1e-12);
        assert!((g.get(2, 2) - 1.0).abs() < 1e-12);
        assert_eq!(g.get(1, 0), g.get(0, 1));
    }

    #[test]
    fn decode_examples() {
        let m = GafMatrix::from_raw(3, vec![-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let x = decode_diagonal(&m).unwrap();
        assert_eq!(x.values()[0], 0.0);
        assert_eq!(x.values()[1], 1.0);
        assert!((x.values()[2] - 0.707_106_781_186_547_5).abs() < 1e-15);
        let bad = GafMatrix::from_raw(1, vec![1.5]).unwrap();
        assert!(decode_diagonal(&bad).is_err());
    }

    fn window_with_flat_high() -> Window {
        let bars = (0..10)
            .map(|i| {
                let o = 95.0 + i as f64 * 0.3;
                OhlcBar::new(i, o, 100.0, o - 1.0, o + 0.2).unwrap()
            })
            .collect();
        Window::new(bars).unwrap()
    }

    #[test]
    fn tensor_shape_and_plane_invariants() {
        let w = window_with_flat_high();
        let t = encode_window(&w, Normalization::Joint);
        assert_eq!(t.shape(), [10, 10, 4]);
        for c in 0..4 {
            let p = t.plane(c);
            for i in 0..10 {
                for j in 0..10 {
                    assert_eq!(p.get(i, j), p.get(j, i));
                    assert!(p.get(i, j).abs() <= 1.0);
                }
            }
        }
    }

    #[test]
    fn constant_high_under_joint_mode_is_not_degenerate() {
        let w = window_with_flat_high();
        let t = encode_window(&w, Normalization::Joint);
        let high = decode_diagonal(&t.plane(1)).unwrap();
        // the joint maximum is the flat high, so every value decodes to 1
        // rather than the constant-series fallback of 0.5
        for x in high.values() {
            assert!((x - 1.0).abs() < 1e-9);
        }
        let per = encode_window(&w, Normalization::PerSeries);
        let high = decode_diagonal(&per.plane(1)).unwrap();
        for x in high.values() {
            assert!((x - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn per_series_planes_decode_to_full_range() {
        let w = window_with_flat_high();
        let t = encode_window(&w, Normalization::PerSeries);
        for c in [0, 2, 3] {
            let x = decode_diagonal(&t.plane(c)).unwrap();
            let lo = x.values().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo.abs() < 1e-9);
            assert!((hi - 1.0).abs() < 1e-9);
        }
    }
}
