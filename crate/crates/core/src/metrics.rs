//! Latency samples, warm-up filtering and nearest-rank quantile summaries.
//!
//! Quantiles use the nearest-rank definition, so every reported quantile is
//! an observed latency: sort ascending and take the element at 1-based rank
//! `ceil(q * n)`, clamped to `[1, n]`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WARMUP: usize = 10;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sample set is empty")]
    Empty,
    #[error("quantile {0} outside (0, 1]")]
    InvalidQuantile(f64),
    #[error("invalid duration {0}: must be finite and >= 0")]
    InvalidDuration(f64),
    #[error("invalid quantile anchors: {0}")]
    InvalidAnchors(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// One measured or simulated invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp_ms: f64,
    pub duration_ms: f64,
    #[serde(default)]
    pub cold: bool,
    #[serde(default)]
    pub instance: Option<String>,
}

impl Sample {
    pub fn duration(duration_ms: f64) -> Self {
        Sample {
            timestamp_ms: 0.0,
            duration_ms,
            cold: false,
            instance: None,
        }
    }
}

/// Ordered latency samples. All durations are finite and non-negative.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampleSet {
    samples: Vec<Sample>,
}

impl<'de> Deserialize<'de> for SampleSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            samples: Vec<Sample>,
        }
        let raw = Raw::deserialize(d)?;
        SampleSet::from_samples(raw.samples).map_err(serde::de::Error::custom)
    }
}

fn check_duration(v: f64) -> Result<(), MetricsError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(MetricsError::InvalidDuration(v))
    }
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<Sample>) -> Result<Self, MetricsError> {
        for s in &samples {
            check_duration(s.duration_ms)?;
        }
        Ok(SampleSet { samples })
    }

    /// Unlabeled samples; timestamps are the sample index.
    pub fn from_durations<I: IntoIterator<Item = f64>>(values: I) -> Result<Self, MetricsError> {
        let samples = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| Sample {
                timestamp_ms: i as f64,
                ..Sample::duration(v)
            })
            .collect();
        Self::from_samples(samples)
    }

    pub fn push(&mut self, sample: Sample) -> Result<(), MetricsError> {
        check_duration(sample.duration_ms)?;
        self.samples.push(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn durations(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.duration_ms).collect()
    }

    fn sorted_durations(&self) -> Result<Vec<f64>, MetricsError> {
        if self.samples.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut v = self.durations();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    /// Builds `n` samples whose nearest-rank q50/q95/q99 are exactly the
    /// given values. Sorted values are piecewise linear in rank through the
    /// anchors, starting at `q50 / 2` and ending at `q99 + (q99 - q95)`.
    pub fn with_quantiles(q50: f64, q95: f64, q99: f64, n: usize) -> Result<Self, MetricsError> {
        if n < 100 {
            return Err(MetricsError::InvalidAnchors(format!(
                "need at least 100 samples, got {n}"
            )));
        }
        if !(q50 > 0.0 && q50 <= q95 && q95 <= q99 && q99.is_finite()) {
            return Err(MetricsError::InvalidAnchors(format!(
                "expected 0 < q50 <= q95 <= q99, got {q50}/{q95}/{q99}"
            )));
        }
        let anchors = [
            (1usize, q50 / 2.0),
            (nearest_rank(0.5, n), q50),
            (nearest_rank(0.95, n), q95),
            (nearest_rank(0.99, n), q99),
            (n, q99 + (q99 - q95)),
        ];
        let mut values = Vec::with_capacity(n);
        for rank in 1..=n {
            let seg = anchors
                .windows(2)
                .find(|w| rank <= w[1].0)
                .expect("rank within anchors");
            let (r0, v0) = seg[0];
            let (r1, v1) = seg[1];
            let v = if rank == r1 {
                v1
            } else if rank == r0 {
                v0
            } else {
                v0 + (v1 - v0) * (rank - r0) as f64 / (r1 - r0) as f64
            };
            values.push(v);
        }
        Self::from_durations(values)
    }
}

/// 1-based nearest rank `ceil(q * n)` clamped to `[1, n]`. Products within
/// rounding noise of an integer are treated as that integer, so that e.g.
/// `0.95 * 100` is rank 95 rather than 96.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    let x = q * n as f64;
    let r = x.round();
    let rank = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    };
    (rank as usize).clamp(1, n.max(1))
}

pub fn quantile(samples: &SampleSet, q: f64) -> Result<f64, MetricsError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(MetricsError::InvalidQuantile(q));
    }
    let sorted = samples.sorted_durations()?;
    Ok(sorted[nearest_rank(q, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub q50: f64,
    pub q95: f64,
    pub q99: f64,
}

pub fn summarize(samples: &SampleSet) -> Result<Summary, MetricsError> {
    let sorted = samples.sorted_durations()?;
    let n = sorted.len();
    let at = |q: f64| sorted[nearest_rank(q, n) - 1];
    // Summing the sorted values keeps the mean permutation-invariant bit-for-bit.
    let mean = sorted.iter().sum::<f64>() / n as f64;
    Ok(Summary {
        count: n,
        mean,
        q50: at(0.5),
        q95: at(0.95),
        q99: at(0.99),
    })
}

/// Drops the first `n_warmup` samples of each instance (unlabeled samples
/// form one group), keeping the remaining samples in their original order.
pub fn warmup_filter(samples: &SampleSet, n_warmup: usize) -> SampleSet {
    let mut seen: HashMap<Option<&str>, usize> = HashMap::new();
    let kept = samples
        .samples
        .iter()
        .filter(|s| {
            let count = seen.entry(s.instance.as_deref()).or_insert(0);
            *count += 1;
            *count > n_warmup
        })
        .cloned()
        .collect();
    SampleSet { samples: kept }
}

/// Collects samples from concurrent producers. Each sample carries a
/// sequence number; the snapshot is ordered by it regardless of the order in
/// which completions arrived.
#[derive(Debug, Default)]
pub struct Recorder {
    inner: Mutex<Vec<(u64, Sample)>>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, seq: u64, sample: Sample) -> Result<(), MetricsError> {
        check_duration(sample.duration_ms)?;
        self.inner
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push((seq, sample));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> SampleSet {
        let mut entries = self.inner.lock().unwrap_or_else(|e| e.into_inner()).clone();
        entries.sort_by_key(|(seq, _)| *seq);
        SampleSet {
            samples: entries.into_iter().map(|(_, s)| s).collect(),
        }
    }
}

pub const CSV_HEADER: [&str; 4] = ["timestamp_ms", "duration_ms", "cold", "instance"];

pub fn write_csv<W: Write>(samples: &SampleSet, out: W) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in &samples.samples {
        w.serialize(s)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<SampleSet, MetricsError> {
    let mut r = csv::Reader::from_reader(input);
    let mut samples = Vec::new();
    for row in r.deserialize() {
        samples.push(row?);
    }
    SampleSet::from_samples(samples)
}

pub fn write_csv_file(samples: &SampleSet, path: &Path) -> Result<(), MetricsError> {
    let file = File::create(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(samples, io::BufWriter::new(file)).map_err(|e| with_path(e, path))
}

pub fn read_csv_file(path: &Path) -> Result<SampleSet, MetricsError> {
    let file = File::open(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(io::BufReader::new(file)).map_err(|e| with_path(e, path))
}

fn with_path(e: MetricsError, path: &Path) -> MetricsError {
    match e {
        MetricsError::Csv(c) if c.is_io_error() => match c.into_kind() {
            csv::ErrorKind::Io(source) => MetricsError::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!(),
        },
        other => other,
    }
}

pub fn to_json(samples: &SampleSet) -> String {
    serde_json::to_string_pretty(samples).expect("samples serialize")
}

pub fn from_json(text: &str) -> Result<SampleSet, MetricsError> {
    Ok(serde_json::from_str(text)?)
}

/// Aligned text table, one row per label: `count mean q50 q95 q99` in ms.
pub fn render_summary_table(rows: &[(String, Summary)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>9}  {:>9}  {:>9}  {:>9}",
        "", "count", "mean", "q50", "q95", "q99"
    );
    for (label, s) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9.2}",
            label, s.count, s.mean, s.q50, s.q95, s.q99
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_to(n: usize) -> SampleSet {
        SampleSet::from_durations((1..=n).map(|v| v as f64)).unwrap()
    }

    #[test]
    fn nearest_rank_examples() {
        let s = one_to(100);
        assert_eq!(quantile(&s, 0.5).unwrap(), 50.0);
        assert_eq!(quantile(&s, 0.95).unwrap(), 95.0);
        assert_eq!(quantile(&s, 0.99).unwrap(), 99.0);
        assert_eq!(quantile(&s, 1.0).unwrap(), 100.0);
        assert_eq!(quantile(&s, 0.001).unwrap(), 1.0);
    }

    #[test]
    fn quantile_domain_errors() {
        let s = one_to(3);
        assert!(matches!(
            quantile(&s, 0.0),
            Err(MetricsError::InvalidQuantile(_))
        ));
        assert!(matches!(
            quantile(&s, 1.01),
            Err(MetricsError::InvalidQuantile(_))
        ));
        assert!(matches!(
            quantile(&s, f64::NAN),
            Err(MetricsError::InvalidQuantile(_))
        ));
        assert!(matches!(
            quantile(&SampleSet::new(), 0.5),
            Err(MetricsError::Empty)
        ));
        assert!(matches!(
            summarize(&SampleSet::new()),
            Err(MetricsError::Empty)
        ));
    }

    #[test]
    fn rejects_bad_durations() {
        assert!(SampleSet::from_durations([1.0, -0.5]).is_err());
        assert!(SampleSet::from_durations([f64::INFINITY]).is_err());
        let mut s = SampleSet::new();
        assert!(s.push(Sample::duration(f64::NAN)).is_err());
    }

    #[test]
    fn single_sample_summary() {
        let s = SampleSet::from_durations([42.0]).unwrap();
        let sum = summarize(&s).unwrap();
        assert_eq!(
            (sum.q50, sum.q95, sum.q99, sum.mean),
            (42.0, 42.0, 42.0, 42.0)
        );
    }

    #[test]
    fn constant_mean() {
        let s = SampleSet::from_durations(vec![3.25; 17]).unwrap();
        assert_eq!(summarize(&s).unwrap().mean, 3.25);
    }

    #[test]
    fn tinybert_row_round_trips() {
        let s = SampleSet::with_quantiles(6.63, 19.20, 24.77, 5000).unwrap();
        let sum = summarize(&s).unwrap();
        assert_eq!((sum.q50, sum.q95, sum.q99), (6.63, 19.20, 24.77));
        assert_eq!(sum.count, 5000);
    }

    #[test]
    fn synthesized_anchors_validated() {
        assert!(SampleSet::with_quantiles(10.0, 5.0, 20.0, 1000).is_err());
        assert!(SampleSet::with_quantiles(1.0, 2.0, 3.0, 50).is_err());
        let s = SampleSet::with_quantiles(1.0, 2.0, 3.0, 100).unwrap();
        let sum = summarize(&s).unwrap();
        assert_eq!((sum.q50, sum.q95, sum.q99), (1.0, 2.0, 3.0));
    }

    #[test]
    fn warmup_identity_and_global() {
        let s = one_to(10);
        assert_eq!(warmup_filter(&s, 0), s);
        let cold_first = SampleSet::from_durations([900.0, 100.0, 101.0, 99.0]).unwrap();
        assert_eq!(
            warmup_filter(&cold_first, 1).durations(),
            vec![100.0, 101.0, 99.0]
        );
        assert!(warmup_filter(&cold_first, 4).is_empty());
        assert!(warmup_filter(&cold_first, 99).is_empty());
    }

    #[test]
    fn warmup_per_instance() {
        let mk = |d: f64, inst: &str| Sample {
            timestamp_ms: d,
            duration_ms: d,
            cold: false,
            instance: Some(inst.into()),
        };
        let s = SampleSet::from_samples(vec![
            mk(1.0, "a"),
            mk(2.0, "b"),
            mk(3.0, "a"),
            mk(4.0, "a"),
            mk(5.0, "b"),
            mk(6.0, "b"),
        ])
        .unwrap();
        let f = warmup_filter(&s, 1);
        assert_eq!(f.len(), 4);
        assert_eq!(f.durations(), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let s = SampleSet::from_samples(vec![
            Sample {
                timestamp_ms: 0.5,
                duration_ms: 12.345678901,
                cold: true,
                instance: Some("i-1".into()),
            },
            Sample {
                timestamp_ms: 1.0,
                duration_ms: 0.1,
                cold: false,
                instance: None,
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp_ms,duration_ms,cold,instance\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), s);

        let mut empty = Vec::new();
        write_csv(&SampleSet::new(), &mut empty).unwrap();
        assert_eq!(
            String::from_utf8(empty).unwrap(),
            "timestamp_ms,duration_ms,cold,instance\n"
        );
    }

    #[test]
    fn json_round_trip() {
        let s = one_to(5);
        assert_eq!(from_json(&to_json(&s)).unwrap(), s);
        assert!(from_json(r#"{"samples":[{"timestamp_ms":0,"duration_ms":-1}]}"#).is_err());
    }

    #[test]
    fn recorder_orders_by_sequence() {
        let r = std::sync::Arc::new(Recorder::new());
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let r = r.clone();
                std::thread::spawn(move || {
                    for i in 0..250u64 {
                        let seq = i * 8 + t;
                        r.record(
                            seq,
                            Sample {
                                timestamp_ms: seq as f64,
                                ..Sample::duration(seq as f64 * 2.0)
                            },
                        )
                        .unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let snap = r.snapshot();
        assert_eq!(snap.len(), 2000);
        for (i, s) in snap.samples().iter().enumerate() {
            assert_eq!(s.timestamp_ms, i as f64);
            assert_eq!(s.duration_ms, i as f64 * 2.0);
        }
    }

    #[test]
    fn table_layout() {
        let s = summarize(&SampleSet::with_quantiles(50.08, 80.14, 102.65, 1000).unwrap()).unwrap();
        let t = render_summary_table(&[("SMobileBERT".into(), s)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(
            lines[1].contains("50.08") && lines[1].contains("80.14") && lines[1].contains("102.65")
        );
        assert_eq!(lines[0].len(), lines[1].len());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Independent oracle: integer permille rank, sort, index.
        fn oracle(values: &[f64], permille: u64) -> f64 {
            let mut v = values.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = v.len() as u64;
            let rank = (permille * n).div_ceil(1000).max(1);
            v[(rank - 1) as usize]
        }

        proptest! {
            #[test]
            fn matches_sort_and_index(values in prop::collection::vec(0.0f64..1e4, 1..2000), p in 1u64..=1000) {
                let s = SampleSet::from_durations(values.clone()).unwrap();
                let q = p as f64 / 1000.0;
                prop_assert_eq!(quantile(&s, q).unwrap(), oracle(&values, p));
            }

            #[test]
            fn quantile_is_member_and_monotone(values in prop::collection::vec(0.0f64..1e3, 1..500), a in 0.001f64..1.0, b in 0.001f64..1.0) {
                let s = SampleSet::from_durations(values.clone()).unwrap();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let ql = quantile(&s, lo).unwrap();
                let qh = quantile(&s, hi).unwrap();
                prop_assert!(values.contains(&ql));
                prop_assert!(ql <= qh);
            }

            #[test]
            fn summarize_permutation_invariant(values in prop::collection::vec(0.0f64..1e3, 1..300), k in 0usize..300) {
                let mut perm = values.clone();
                perm.reverse();
                let k = k % perm.len();
                perm.rotate_left(k);
                let a = summarize(&SampleSet::from_durations(values).unwrap()).unwrap();
                let b = summarize(&SampleSet::from_durations(perm).unwrap()).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
