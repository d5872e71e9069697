//! CSV ingestion, min-max normalization, sliding windows, splits and toy
//! signals.
//!
//! Series are `[T, F]` tensors (rows are time steps). Windowed datasets are
//! `[K, τ, F]` with `K = ⌊(T − τ)/stride⌋ + 1`.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    /// `[T, F]`.
    pub values: Tensor,
    pub names: Vec<String>,
    pub source: Option<PathBuf>,
    /// Rows dropped because they contained a missing or NaN cell.
    pub dropped_rows: usize,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.values.shape()[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeaderMode {
    /// The first row is a header if any of its cells is not a number.
    Auto,
    Present,
    Absent,
}

fn parse_cell(cell: &str) -> Option<f64> {
    let c = cell.trim();
    if c.is_empty() {
        return Some(f64::NAN);
    }
    c.parse::<f64>().ok()
}

/// Reads a rectangular numeric CSV. Rows holding an empty or NaN cell are
/// dropped and counted; ragged rows and non-numeric cells are parse errors.
pub fn load_csv(path: impl AsRef<Path>, header: HeaderMode) -> Result<RawSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut series = parse_csv(file, header)?;
    series.source = Some(path.to_path_buf());
    Ok(series)
}

pub fn parse_csv<R: Read>(reader: R, header: HeaderMode) -> Result<RawSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut names: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut dropped = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(parse_cell).collect();
        let first = width.is_none() && names.is_none();
        let is_header = first
            && match header {
                HeaderMode::Present => true,
                HeaderMode::Absent => false,
                HeaderMode::Auto => parsed.iter().any(|c| c.is_none()),
            };
        if is_header {
            names = Some(record.iter().map(str::to_string).collect());
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {w} fields, found {}", record.len()),
                });
            }
            None => width = Some(record.len()),
            _ => {}
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (col, cell) in parsed.into_iter().enumerate() {
            match cell {
                Some(v) => row.push(v),
                None => {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-numeric value `{}` in column {}", &record[col], col + 1),
                    });
                }
            }
        }
        if row.iter().any(|v| v.is_nan()) {
            dropped += 1;
            continue;
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                message: "infinite value".into(),
            });
        }
        values.extend(row);
        rows += 1;
    }
    let f = width.unwrap_or(0);
    if rows == 0 || f == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no numeric rows".into(),
        });
    }
    let names = names.unwrap_or_else(|| (0..f).map(|i| format!("f{i}")).collect());
    Ok(RawSeries {
        values: Tensor::new(&[rows, f], values)?,
        names,
        source: None,
        dropped_rows: dropped,
    })
}

/// Per-feature minimum and maximum of the data a normalization was fitted on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    /// Fits on the last axis of `values`.
    pub fn fit(values: &Tensor) -> Result<Self> {
        let f = *values
            .shape()
            .last()
            .ok_or_else(|| Error::contract("cannot fit normalization on a scalar"))?;
        if values.is_empty() {
            return Err(Error::contract("cannot fit normalization on an empty series"));
        }
        let mut min = vec![f64::INFINITY; f];
        let mut max = vec![f64::NEG_INFINITY; f];
        for row in values.data().chunks(f) {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(NormalizationParams { min, max })
    }

    pub fn features(&self) -> usize {
        self.min.len()
    }

    /// Features with `max == min`; these normalize to 0.5.
    pub fn degenerate(&self) -> Vec<bool> {
        self.min.iter().zip(&self.max).map(|(a, b)| a == b).collect()
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let f = x.shape().last().copied().unwrap_or(0);
        if f != self.features() {
            return Err(Error::contract(format!(
                "normalization has {} features, data has {f}",
                self.features()
            )));
        }
        Ok(f)
    }

    /// `(v − min)/(max − min)` per feature; degenerate features map to 0.5.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.check(x)?;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % f;
            let range = self.max[j] - self.min[j];
            *v = if range == 0.0 { 0.5 } else { (*v - self.min[j]) / range };
        }
        Ok(out)
    }

    /// Inverse of [`normalize`](Self::normalize); degenerate features map
    /// back to their constant value.
    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.check(x)?;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % f;
            *v = self.min[j] + *v * (self.max[j] - self.min[j]);
        }
        Ok(out)
    }
}

/// Min-max normalizes every feature of `raw` to `[0, 1]`.
pub fn minmax_normalize(raw: &RawSeries) -> Result<(RawSeries, NormalizationParams)> {
    let params = NormalizationParams::fit(&raw.values)?;
    let values = params.normalize(&raw.values)?;
    Ok((RawSeries { values, ..raw.clone() }, params))
}

pub fn denormalize(x: &Tensor, params: &NormalizationParams) -> Result<Tensor> {
    params.denormalize(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    /// `[K, τ, F]`.
    pub data: Tensor,
    pub tau: usize,
    pub stride: usize,
    pub normalization: Option<NormalizationParams>,
    pub split: SplitTag,
    /// Source index of the first step of every window.
    pub starts: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.data.shape()[2]
    }

    fn subset(&self, idx: &[usize], split: SplitTag) -> Result<Self> {
        Ok(WindowedDataset {
            data: self.data.select_rows(idx)?,
            starts: idx.iter().map(|&i| self.starts[i]).collect(),
            split,
            normalization: self.normalization.clone(),
            ..*self
        })
    }
}

/// Sliding windows of length `tau` every `stride` steps over `values: [T, F]`.
pub fn window(values: &Tensor, tau: usize, stride: usize) -> Result<WindowedDataset> {
    if values.rank() != 2 {
        return Err(Error::dim("window", format!("expected [T, F], got {:?}", values.shape())));
    }
    let (t, f) = (values.shape()[0], values.shape()[1]);
    if tau == 0 || stride == 0 {
        return Err(Error::contract("window length and stride must be positive"));
    }
    if tau > t {
        return Err(Error::contract(format!("window length {tau} exceeds series length {t}")));
    }
    let k = (t - tau) / stride + 1;
    let starts: Vec<usize> = (0..k).map(|i| i * stride).collect();
    let mut data = Vec::with_capacity(k * tau * f);
    for &s in &starts {
        data.extend_from_slice(&values.data()[s * f..(s + tau) * f]);
    }
    Ok(WindowedDataset {
        data: Tensor::new(&[k, tau, f], data)?,
        tau,
        stride,
        normalization: None,
        split: SplitTag::Full,
        starts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Earliest windows train; test windows overlapping any training window
    /// are dropped, so no source index is shared.
    Chronological,
    Shuffled,
}

/// Splits windows into train and test sets of roughly `train_frac` and
/// `1 − train_frac` of `K`.
pub fn split(ds: &WindowedDataset, train_frac: f64, mode: SplitMode, seed: u64) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::contract(format!("train_frac {train_frac} outside (0, 1)")));
    }
    let k = ds.len();
    let n_train = ((k as f64) * train_frac).round() as usize;
    let (train, test): (Vec<usize>, Vec<usize>) = match mode {
        SplitMode::Chronological => {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by_key(|&i| ds.starts[i]);
            let train: Vec<usize> = order[..n_train.min(k)].to_vec();
            let boundary = train.iter().map(|&i| ds.starts[i] + ds.tau).max().unwrap_or(0);
            let test = order[n_train.min(k)..]
                .iter()
                .copied()
                .filter(|&i| ds.starts[i] >= boundary)
                .collect();
            (train, test)
        }
        SplitMode::Shuffled => {
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (a, b) = order.split_at(n_train.min(k));
            (a.to_vec(), b.to_vec())
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::contract(format!(
            "split of {k} windows at {train_frac} leaves {} train and {} test windows",
            train.len(),
            test.len()
        )));
    }
    Ok((ds.subset(&train, SplitTag::Train)?, ds.subset(&test, SplitTag::Test)?))
}

/// `k` rows of `x` drawn without replacement, kept in their original order.
/// Returns `x` unchanged when it has at most `k` rows.
pub fn subsample_rows(x: &Tensor, k: usize, seed: u64) -> Result<Tensor> {
    let n = x.shape().first().copied().unwrap_or(0);
    if n <= k {
        return Ok(x.clone());
    }
    let mut idx = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec();
    idx.sort_unstable();
    x.select_rows(&idx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// A shared multi-harmonic signal, shifted in time per feature.
    CoupledSines,
    /// First-order vector autoregression with a fixed coupling matrix.
    ArProcess,
}

/// Period, in steps, of the base harmonic of [`ToyKind::CoupledSines`].
pub const SINE_PERIOD: f64 = 12.0;
/// Time shift between consecutive features of [`ToyKind::CoupledSines`]:
/// feature `f` at time `t` equals feature `0` at time `t + f·lag`, up to noise.
pub const SINE_LAG: usize = 2;

fn coupled_base(t: f64) -> f64 {
    use std::f64::consts::TAU;
    (TAU * t / SINE_PERIOD).sin()
        + 0.4 * (2.0 * TAU * t / SINE_PERIOD + 0.7).sin()
        + 0.25 * (TAU * t / (3.7 * SINE_PERIOD)).sin()
}

/// A normalized toy series `[T, F]`.
pub fn toy_series(kind: ToyKind, t: usize, f: usize, noise: f64, seed: u64) -> Result<Tensor> {
    if f == 0 || t == 0 {
        return Err(Error::contract("toy series needs at least one step and one feature"));
    }
    if kind == ToyKind::CoupledSines && f < 2 {
        return Err(Error::contract("coupled sines need at least two features"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::contract("toy noise must be a finite value ≥ 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = vec![0.0; t * f];
    match kind {
        ToyKind::CoupledSines => {
            let phase = rand::Rng::random_range(&mut rng, 0.0..SINE_PERIOD * 3.7);
            for s in 0..t {
                for j in 0..f {
                    let clean = coupled_base(s as f64 + phase + (j * SINE_LAG) as f64);
                    v[s * f + j] = clean + noise * normal.sample(&mut rng);
                }
            }
        }
        ToyKind::ArProcess => {
            let burn_in = 100;
            let mut state = vec![0.0; f];
            for s in 0..t + burn_in {
                let prev = state.clone();
                for j in 0..f {
                    let nb = prev[(j + f - 1) % f];
                    state[j] = 0.7 * prev[j] + 0.25 * nb + normal.sample(&mut rng);
                }
                if s >= burn_in {
                    for j in 0..f {
                        v[(s - burn_in) * f + j] = state[j] + noise * normal.sample(&mut rng);
                    }
                }
            }
        }
    }
    let raw = Tensor::new(&[t, f], v)?;
    NormalizationParams::fit(&raw)?.normalize(&raw)
}

/// `K` stride-1 windows of length `tau` cut from one normalized toy series.
pub fn toy_generator(kind: ToyKind, k: usize, tau: usize, f: usize, noise: f64, seed: u64) -> Result<WindowedDataset> {
    if k == 0 || tau == 0 {
        return Err(Error::contract("toy dataset needs K ≥ 1 and τ ≥ 1"));
    }
    let series = toy_series(kind, k - 1 + tau, f, noise, seed)?;
    let mut ds = window(&series, tau, 1)?;
    ds.normalization = Some(NormalizationParams {
        min: vec![0.0; f],
        max: vec![1.0; f],
    });
    Ok(ds)
}

/// Writes `[T, F]` rows as CSV with an optional header.
pub fn write_csv<W: std::io::Write>(writer: W, values: &Tensor, names: Option<&[String]>) -> Result<()> {
    if values.rank() != 2 {
        return Err(Error::dim("write_csv", format!("expected [T, F], got {:?}", values.shape())));
    }
    let f = values.shape()[1];
    let mut w = csv::Writer::from_writer(writer);
    if let Some(n) = names {
        w.write_record(n)?;
    }
    for row in values.data().chunks(f) {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn parse(s: &str) -> Result<RawSeries> {
        parse_csv(s.as_bytes(), HeaderMode::Auto)
    }

    #[test]
    fn loads_rectangular_numeric_body() {
        let r = parse("a,b\n1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(r.values.shape(), &[3, 2]);
        assert_eq!(r.names, vec!["a", "b"]);
        let r = parse("1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(r.values.shape(), &[3, 2]);
        assert_eq!(r.values.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn nan_rows_are_dropped_and_counted() {
        let r = parse("1,2\nNaN,4\n5,6\n").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.dropped_rows, 1);
        let r = parse("1,2\n,4\n5,6\n").unwrap();
        assert_eq!(r.dropped_rows, 1);
    }

    #[test]
    fn malformed_files_are_parse_errors() {
        assert!(matches!(parse(""), Err(Error::Parse { .. })));
        match parse("1,2\n3,4,5\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse("1,2\n3,x\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains('x'));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "x,y\n1,2\n3,4\n5,6\n").unwrap();
        let r = load_csv(&p, HeaderMode::Present).unwrap();
        assert_eq!((r.len(), r.features()), (3, 2));
        assert_eq!(r.source.as_deref(), Some(p.as_path()));
        assert!(matches!(load_csv(dir.path().join("missing.csv"), HeaderMode::Auto), Err(Error::Io { .. })));
    }

    #[test]
    fn minmax_examples() {
        let raw = parse("2,7\n4,7\n6,7\n").unwrap();
        let (n, p) = minmax_normalize(&raw).unwrap();
        assert_eq!(n.values.data(), &[0.0, 0.5, 0.5, 0.5, 1.0, 0.5]);
        assert_eq!(p.degenerate(), vec![false, true]);
        let back = p.denormalize(&n.values).unwrap();
        assert_eq!(back, raw.values);
    }

    #[test]
    fn denormalize_examples() {
        let id = NormalizationParams { min: vec![0.0], max: vec![1.0] };
        let x = Tensor::new(&[3, 1], vec![0.1, 0.5, 0.9]).unwrap();
        assert_eq!(id.denormalize(&x).unwrap(), x);
        let p = NormalizationParams { min: vec![2.0], max: vec![6.0] };
        assert_eq!(p.denormalize(&Tensor::new(&[1, 1], vec![0.5]).unwrap()).unwrap().item(), 4.0);
        assert!(matches!(p.denormalize(&Tensor::zeros(&[1, 2])), Err(Error::Contract(_))));
    }

    #[test]
    fn window_counts_and_reassembly() {
        let v = Tensor::from_fn(&[5, 1], |i| i as f64);
        assert_eq!(window(&v, 5, 1).unwrap().len(), 1);
        let v = Tensor::from_fn(&[10, 2], |i| i as f64);
        assert_eq!(window(&v, 4, 2).unwrap().len(), 4);
        assert!(matches!(window(&v, 11, 1), Err(Error::Contract(_))));
        let v = Tensor::from_fn(&[12, 2], |i| i as f64);
        let w = window(&v, 4, 4).unwrap();
        assert_eq!(w.data.data(), v.data());
    }

    #[test]
    fn split_examples() {
        let v = Tensor::from_fn(&[4, 1], |i| i as f64);
        let ds = window(&v, 1, 1).unwrap();
        let (a, b) = split(&ds, 0.5, SplitMode::Shuffled, 1).unwrap();
        assert_eq!((a.len(), b.len()), (2, 2));
        let (c, d) = split(&ds, 0.5, SplitMode::Shuffled, 1).unwrap();
        assert_eq!((a, b), (c, d));

        let v = Tensor::from_fn(&[40, 1], |i| i as f64);
        let ds = window(&v, 5, 1).unwrap();
        let (tr, te) = split(&ds, 0.5, SplitMode::Chronological, 0).unwrap();
        let last_train = tr.starts.iter().max().unwrap() + ds.tau - 1;
        let first_test = *te.starts.iter().min().unwrap();
        assert!(last_train < first_test);
        assert!(split(&ds, 1.0, SplitMode::Chronological, 0).is_err());
        let tiny = window(&Tensor::zeros(&[2, 1]), 2, 1).unwrap();
        assert!(split(&tiny, 0.5, SplitMode::Chronological, 0).is_err());
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn coupled_sines_are_lag_correlated() {
        let s = toy_series(ToyKind::CoupledSines, 400, 3, 0.0, 4).unwrap();
        let col = |j: usize| -> Vec<f64> { (0..400).map(|t| s.at(&[t, j])).collect() };
        let (f0, f1) = (col(0), col(1));
        let r = pearson(&f0[SINE_LAG..], &f1[..400 - SINE_LAG]);
        assert!(r.abs() > 0.9, "{r}");
    }

    #[test]
    fn toy_data_is_deterministic_and_bounded() {
        for kind in [ToyKind::CoupledSines, ToyKind::ArProcess] {
            let a = toy_generator(kind, 20, 16, 3, 0.05, 9).unwrap();
            let b = toy_generator(kind, 20, 16, 3, 0.05, 9).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.data.shape(), &[20, 16, 3]);
            assert!(a.data.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(toy_generator(ToyKind::CoupledSines, 4, 4, 1, 0.0, 0).is_err());
    }

    #[test]
    fn subsampling_keeps_order_and_count() {
        let x = Tensor::from_fn(&[10, 2], |i| i as f64);
        let s = subsample_rows(&x, 4, 3).unwrap();
        assert_eq!(s.shape(), &[4, 2]);
        let firsts: Vec<f64> = (0..4).map(|r| s.at(&[r, 0])).collect();
        assert!(firsts.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, subsample_rows(&x, 4, 3).unwrap());
        assert_eq!(subsample_rows(&x, 12, 0).unwrap(), x);
    }

    #[test]
    fn csv_round_trip() {
        let v = Tensor::from_fn(&[3, 2], |i| i as f64 * 0.25);
        let mut buf = Vec::new();
        write_csv(&mut buf, &v, Some(&["a".into(), "b".into()])).unwrap();
        let r = parse_csv(buf.as_slice(), HeaderMode::Auto).unwrap();
        assert_eq!(r.values, v);
    }

    proptest! {
        #[test]
        fn window_count_formula(t in 1usize..60, tau in 1usize..60, stride in 1usize..10) {
            let v = Tensor::zeros(&[t, 2]);
            match window(&v, tau, stride) {
                Ok(w) => {
                    prop_assert!(tau <= t);
                    prop_assert_eq!(w.len(), (t - tau) / stride + 1);
                }
                Err(_) => prop_assert!(tau > t),
            }
        }

        #[test]
        fn normalize_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 3), 2..20)) {
            let t = rows.len();
            let v = Tensor::new(&[t, 3], rows.concat()).unwrap();
            let p = NormalizationParams::fit(&v).unwrap();
            let n = p.normalize(&v).unwrap();
            prop_assert!(n.data().iter().all(|x| (0.0..=1.0).contains(x)));
            let back = p.denormalize(&n).unwrap();
            for (j, deg) in p.degenerate().iter().enumerate() {
                if !deg {
                    for r in 0..t {
                        prop_assert!((back.at(&[r, j]) - v.at(&[r, j])).abs() <= 1e-12 * (1.0 + v.at(&[r, j]).abs()));
                    }
                }
            }
        }

        #[test]
        fn chronological_split_never_shares_indices(t in 10usize..80, tau in 1usize..8, frac in 0.2..0.8f64) {
            let v = Tensor::zeros(&[t, 1]);
            let ds = window(&v, tau, 1).unwrap();
            if let Ok((tr, te)) = split(&ds, frac, SplitMode::Chronological, 0) {
                let last = tr.starts.iter().map(|s| s + tau - 1).max().unwrap();
                prop_assert!(te.starts.iter().all(|&s| s > last));
            }
        }
    }
}
