//! Seeded discrete-event simulation of serverless invocations.
//!
//! Each arrival goes to an idle warm instance if one was used within the
//! keep-alive window, otherwise a new instance is started cold. When
//! `max_instances` is reached, arrivals wait FIFO for the earliest-free
//! instance. Instances serve one request at a time.
//!
//! Execution times are resampled with replacement from a latency profile
//! measured at a reference memory size and rescaled to the configured memory
//! through the CPU scaling law. The clock is integer microseconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{billed_duration, PricingModel};
use crate::metrics::{summarize, MetricsError, Sample, SampleSet, Summary};
use crate::providers::{effective_cpu, CpuScaling, ProviderError};
use crate::units::{gb, GB};

pub const DEFAULT_COLD_START_MS: f64 = 1500.0;
pub const DEFAULT_KEEP_ALIVE_S: f64 = 600.0;
pub const LATENCY_TABLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("latency table: {0}")]
    Table(#[from] serde_json::Error),
    #[error("no latency row for platform {platform:?}, model {model:?}")]
    UnknownRow { platform: String, model: String },
}

fn domain<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::Domain(msg.into()))
}

/// Execution-time distribution measured at `reference_memory_bytes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub reference_memory_bytes: u64,
    #[serde(flatten)]
    pub source: ProfileSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    ConstantMs(f64),
    SamplesMs(Vec<f64>),
}

impl LatencyProfile {
    pub fn constant(reference_memory_bytes: u64, ms: f64) -> Self {
        LatencyProfile {
            reference_memory_bytes,
            source: ProfileSource::ConstantMs(ms),
        }
    }

    pub fn from_samples(reference_memory_bytes: u64, samples: &SampleSet) -> Self {
        LatencyProfile {
            reference_memory_bytes,
            source: ProfileSource::SamplesMs(samples.durations()),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.reference_memory_bytes == 0 {
            return domain("profile reference memory must be positive");
        }
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match &self.source {
            ProfileSource::ConstantMs(v) if !ok(*v) => {
                domain(format!("profile duration must be positive, got {v}"))
            }
            ProfileSource::SamplesMs(v) if v.is_empty() => domain("profile has no samples"),
            ProfileSource::SamplesMs(v) => match v.iter().find(|x| !ok(**x)) {
                Some(bad) => domain(format!("profile duration must be positive, got {bad}")),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match &self.source {
            ProfileSource::ConstantMs(v) => *v,
            ProfileSource::SamplesMs(v) => v[rng.random_range(0..v.len())],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatencyTableFile {
    version: u32,
    reference_memory_bytes: u64,
    rows: Vec<LatencyRow>,
}

/// Reported q50/q95/q99 execution times for one platform and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyRow {
    pub platform: String,
    pub model: String,
    pub q50: f64,
    pub q95: f64,
    pub q99: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyTable {
    pub reference_memory_bytes: u64,
    pub rows: Vec<LatencyRow>,
}

impl LatencyTable {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let file: LatencyTableFile = serde_json::from_str(text)?;
        if file.version != LATENCY_TABLE_FORMAT_VERSION {
            return domain(format!(
                "unsupported latency table version {}",
                file.version
            ));
        }
        Ok(LatencyTable {
            reference_memory_bytes: file.reference_memory_bytes,
            rows: file.rows,
        })
    }

    pub fn builtin() -> Self {
        Self::from_json(crate::fixtures::LATENCY_TABLE_JSON)
            .expect("built-in latency table is valid")
    }

    pub fn row(&self, platform: &str, model: &str) -> Result<&LatencyRow, SimError> {
        self.rows
            .iter()
            .find(|r| r.platform.eq_ignore_ascii_case(platform) && r.model == model)
            .ok_or_else(|| SimError::UnknownRow {
                platform: platform.into(),
                model: model.into(),
            })
    }

    /// A profile of `n` samples whose nearest-rank quantiles equal the row.
    pub fn profile(
        &self,
        platform: &str,
        model: &str,
        n: usize,
    ) -> Result<LatencyProfile, SimError> {
        let row = self.row(platform, model)?;
        let samples = SampleSet::with_quantiles(row.q50, row.q95, row.q99, n)?;
        Ok(LatencyProfile::from_samples(
            self.reference_memory_bytes,
            &samples,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficPattern {
    PoissonConstant {
        rate_rps: f64,
        duration_s: f64,
    },
    /// Poisson arrivals at `high_rate` for the first `duty` fraction of
    /// every period and at `low_rate` for the rest.
    OnOffBurst {
        high_rate: f64,
        low_rate: f64,
        period_s: f64,
        duty: f64,
        duration_s: f64,
    },
    TraceReplay {
        timestamps_ms: Vec<f64>,
    },
}

impl TrafficPattern {
    /// Evenly spaced arrivals at `rate_rps` over `duration_s`, as a trace.
    pub fn fixed_rate(rate_rps: f64, duration_s: f64) -> Self {
        let count = if rate_rps > 0.0 {
            (rate_rps * duration_s + 1e-9).floor() as usize
        } else {
            0
        };
        TrafficPattern::TraceReplay {
            timestamps_ms: (0..count).map(|i| i as f64 * 1000.0 / rate_rps).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let rate = |name: &str, r: f64| {
            if r.is_finite() && r >= 0.0 {
                Ok(())
            } else {
                domain(format!("{name} must be finite and >= 0, got {r}"))
            }
        };
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                domain(format!("{name} must be positive, got {v}"))
            }
        };
        match self {
            TrafficPattern::PoissonConstant {
                rate_rps,
                duration_s,
            } => {
                rate("rate_rps", *rate_rps)?;
                positive("duration_s", *duration_s)
            }
            TrafficPattern::OnOffBurst {
                high_rate,
                low_rate,
                period_s,
                duty,
                duration_s,
            } => {
                rate("high_rate", *high_rate)?;
                rate("low_rate", *low_rate)?;
                positive("period_s", *period_s)?;
                positive("duration_s", *duration_s)?;
                if !(0.0..=1.0).contains(duty) {
                    return domain(format!("duty must be in [0, 1], got {duty}"));
                }
                Ok(())
            }
            TrafficPattern::TraceReplay { timestamps_ms } => {
                if timestamps_ms.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                    return domain("trace timestamps must be finite and >= 0");
                }
                if timestamps_ms.windows(2).any(|w| w[1] < w[0]) {
                    return domain("trace timestamps must be non-decreasing");
                }
                Ok(())
            }
        }
    }
}

fn poisson_segment(rng: &mut ChaCha8Rng, rate: f64, start_s: f64, end_s: f64, out: &mut Vec<f64>) {
    if rate <= 0.0 || end_s <= start_s {
        return;
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = start_s;
    loop {
        t += exp.sample(rng);
        if t >= end_s {
            break;
        }
        out.push(t);
    }
}

fn to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

fn arrivals_us(pattern: &TrafficPattern, seed: u64) -> Result<Vec<u64>, SimError> {
    pattern.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut secs = Vec::new();
    match pattern {
        TrafficPattern::PoissonConstant {
            rate_rps,
            duration_s,
        } => {
            poisson_segment(&mut rng, *rate_rps, 0.0, *duration_s, &mut secs);
        }
        TrafficPattern::OnOffBurst {
            high_rate,
            low_rate,
            period_s,
            duty,
            duration_s,
        } => {
            let mut start = 0.0;
            let mut k = 0u64;
            while start < *duration_s {
                let on_end = (start + duty * period_s).min(*duration_s);
                let off_end = ((k + 1) as f64 * period_s).min(*duration_s);
                poisson_segment(&mut rng, *high_rate, start, on_end, &mut secs);
                poisson_segment(&mut rng, *low_rate, on_end, off_end, &mut secs);
                k += 1;
                start = k as f64 * period_s;
            }
        }
        TrafficPattern::TraceReplay { timestamps_ms } => {
            return Ok(timestamps_ms.iter().map(|&t| to_us(t)).collect());
        }
    }
    Ok(secs.into_iter().map(|s| (s * 1e6).round() as u64).collect())
}

/// Arrival timestamps in milliseconds, at microsecond resolution.
/// Deterministic for a fixed seed; traces are returned verbatim.
pub fn generate_arrivals(pattern: &TrafficPattern, seed: u64) -> Result<Vec<f64>, SimError> {
    if let TrafficPattern::TraceReplay { timestamps_ms } = pattern {
        pattern.validate()?;
        return Ok(timestamps_ms.clone());
    }
    Ok(arrivals_us(pattern, seed)?
        .into_iter()
        .map(us_to_ms)
        .collect())
}

/// Rescales a duration measured at `reference_memory` to `target_memory`:
/// `base * cpu(reference) / cpu(target)`.
pub fn scale_duration(
    base_ms: f64,
    reference_memory: u64,
    target_memory: u64,
    scaling: &CpuScaling,
) -> Result<f64, SimError> {
    if !(base_ms.is_finite() && base_ms > 0.0) {
        return domain(format!("base duration must be positive, got {base_ms}"));
    }
    let reference = effective_cpu(reference_memory, scaling)?;
    let target = effective_cpu(target_memory, scaling)?;
    if reference == target {
        return Ok(base_ms);
    }
    Ok(base_ms * reference / target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    /// Idle time after which a warm instance is reclaimed. May be infinite.
    pub keep_alive_s: f64,
    /// Initialization delay of a cold instance; added to latency, not billed.
    pub cold_start_ms: f64,
    #[serde(default)]
    pub scaling: CpuScaling,
    pub memory_bytes: u64,
    /// `None` means no cap on concurrent instances.
    #[serde(default)]
    pub max_instances: Option<u32>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 0,
            keep_alive_s: DEFAULT_KEEP_ALIVE_S,
            cold_start_ms: DEFAULT_COLD_START_MS,
            scaling: CpuScaling::default(),
            memory_bytes: gb(1),
            max_instances: None,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.keep_alive_s.is_nan() || self.keep_alive_s < 0.0 {
            return domain(format!(
                "keep_alive_s must be >= 0, got {}",
                self.keep_alive_s
            ));
        }
        if !(self.cold_start_ms.is_finite() && self.cold_start_ms >= 0.0) {
            return domain(format!(
                "cold_start_ms must be >= 0, got {}",
                self.cold_start_ms
            ));
        }
        if self.memory_bytes == 0 {
            return domain("memory_bytes must be positive");
        }
        if self.max_instances == Some(0) {
            return domain("max_instances must be positive");
        }
        self.scaling.validate()?;
        Ok(())
    }
}

/// Outcome of one invocation. Times are microseconds since simulation start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub arrival_us: u64,
    pub start_us: u64,
    pub end_us: u64,
    pub cold: bool,
    pub instance_id: u32,
    pub exec_us: u64,
    pub billed_ms: u64,
}

impl InvocationRecord {
    pub fn arrival_ms(&self) -> f64 {
        us_to_ms(self.arrival_us)
    }

    pub fn start_ms(&self) -> f64 {
        us_to_ms(self.start_us)
    }

    pub fn end_ms(&self) -> f64 {
        us_to_ms(self.end_us)
    }

    pub fn exec_ms(&self) -> f64 {
        us_to_ms(self.exec_us)
    }

    /// Arrival to completion, including queueing and cold start.
    pub fn latency_ms(&self) -> f64 {
        us_to_ms(self.end_us - self.arrival_us)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub seed: u64,
    pub memory_bytes: u64,
    pub records: Vec<InvocationRecord>,
    pub cold_fraction: f64,
    pub latency_summary: Option<Summary>,
    pub total_billed_gb_s: f64,
}

impl SimulationResult {
    /// End-to-end latencies in the metrics sample format.
    pub fn to_samples(&self) -> SampleSet {
        let samples = self
            .records
            .iter()
            .map(|r| Sample {
                timestamp_ms: r.arrival_ms(),
                duration_ms: r.latency_ms(),
                cold: r.cold,
                instance: Some(format!("i{}", r.instance_id)),
            })
            .collect();
        SampleSet::from_samples(samples).expect("simulated latencies are valid")
    }

    pub fn instance_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.instance_id)
            .max()
            .map_or(0, |m| m as usize + 1)
    }
}

struct Instance {
    id: u32,
    free_at_us: u64,
}

pub fn simulate(
    profile: &LatencyProfile,
    pattern: &TrafficPattern,
    config: &SimulationConfig,
    pricing: &PricingModel,
) -> Result<SimulationResult, SimError> {
    profile.validate()?;
    config.validate()?;
    pricing
        .validate()
        .map_err(|e| SimError::Domain(e.to_string()))?;

    let arrivals = arrivals_us(pattern, config.seed)?;
    let mut service_rng = ChaCha8Rng::seed_from_u64(config.seed);
    service_rng.set_stream(1);

    let keep_alive_us = if config.keep_alive_s.is_infinite() {
        u64::MAX
    } else {
        (config.keep_alive_s * 1e6).round() as u64
    };
    let cold_us = to_us(config.cold_start_ms);
    let cap = config.max_instances.map_or(usize::MAX, |m| m as usize);

    let mut pool: Vec<Instance> = Vec::new();
    let mut next_id = 0u32;
    let mut records = Vec::with_capacity(arrivals.len());

    for &arrival in &arrivals {
        pool.retain(|inst| {
            !(inst.free_at_us <= arrival && arrival - inst.free_at_us > keep_alive_us)
        });

        // most recently freed idle instance, lowest id on ties
        let idle = pool
            .iter()
            .enumerate()
            .filter(|(_, inst)| inst.free_at_us <= arrival)
            .max_by(|(_, a), (_, b)| a.free_at_us.cmp(&b.free_at_us).then(b.id.cmp(&a.id)))
            .map(|(i, _)| i);

        let (slot, start, cold) = match idle {
            Some(i) => (i, arrival, false),
            None if pool.len() < cap => {
                pool.push(Instance {
                    id: next_id,
                    free_at_us: arrival,
                });
                next_id += 1;
                (pool.len() - 1, arrival, true)
            }
            None => {
                let i = pool
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| a.free_at_us.cmp(&b.free_at_us).then(a.id.cmp(&b.id)))
                    .map(|(i, _)| i)
                    .expect("pool is non-empty when capped");
                (i, pool[i].free_at_us.max(arrival), false)
            }
        };

        let base = profile.draw(&mut service_rng);
        let exec_ms = scale_duration(
            base,
            profile.reference_memory_bytes,
            config.memory_bytes,
            &config.scaling,
        )?;
        let exec_us = to_us(exec_ms);
        let end = start + if cold { cold_us } else { 0 } + exec_us;
        pool[slot].free_at_us = end;

        records.push(InvocationRecord {
            arrival_us: arrival,
            start_us: start,
            end_us: end,
            cold,
            instance_id: pool[slot].id,
            exec_us,
            billed_ms: billed_duration(us_to_ms(exec_us), pricing.billing_granularity_ms),
        });
    }

    let cold = records.iter().filter(|r| r.cold).count();
    let cold_fraction = if records.is_empty() {
        0.0
    } else {
        cold as f64 / records.len() as f64
    };
    let billed_ms_total: u64 = records.iter().map(|r| r.billed_ms).sum();
    let total_billed_gb_s = billed_gb_seconds(billed_ms_total, config.memory_bytes);

    let mut result = SimulationResult {
        seed: config.seed,
        memory_bytes: config.memory_bytes,
        records,
        cold_fraction,
        latency_summary: None,
        total_billed_gb_s,
    };
    if !result.records.is_empty() {
        result.latency_summary = Some(summarize(&result.to_samples())?);
    }
    Ok(result)
}

/// `billed_ms * memory_gb / 1000`.
pub fn billed_gb_seconds(billed_ms: u64, memory_bytes: u64) -> f64 {
    billed_ms as f64 * (memory_bytes as f64 / GB as f64) / 1000.0
}

/// Runs the same scenario at each memory size.
pub fn memory_sweep(
    profile: &LatencyProfile,
    pattern: &TrafficPattern,
    config: &SimulationConfig,
    pricing: &PricingModel,
    memories: &[u64],
) -> Result<Vec<SimulationResult>, SimError> {
    memories
        .iter()
        .map(|&memory_bytes| {
            let cfg = SimulationConfig {
                memory_bytes,
                ..config.clone()
            };
            simulate(profile, pattern, &cfg, pricing)
        })
        .collect()
}
