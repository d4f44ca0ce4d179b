//! Serverless billing, VM baseline and break-even analysis.
//!
//! Money is a fixed-point integer count of 10^-12 currency units. Per GB-second
//! rates such as `0.0000166667` have ten decimal places, so micro-units are
//! not fine enough. Bills are computed as one exact rational and rounded
//! half-up to the nearest unit once at the end.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::simulator::SimulationResult;
use crate::units::GB;

pub const PRICING_FORMAT_VERSION: u32 = 1;

/// Fixed-point units per whole currency unit.
pub const SCALE: i128 = 1_000_000_000_000;
const SCALE_DIGITS: usize = 12;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid amount {0:?}")]
    InvalidAmount(String),
    #[error("invalid pricing {name:?}: {reason}")]
    InvalidPricing { name: String, reason: String },
    #[error("unsupported pricing file version {0} (expected {PRICING_FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("duplicate pricing profile {0:?}")]
    DuplicateProfile(String),
    #[error("unknown pricing profile {0:?}")]
    UnknownProfile(String),
    #[error("failed to parse pricing: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i128);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_units(units: i128) -> Self {
        Money(units)
    }

    pub const fn units(self) -> i128 {
        self.0
    }

    pub fn from_whole(whole: i64) -> Self {
        Money(whole as i128 * SCALE)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// Fixed number of decimals, rounded half away from zero.
    pub fn format_fixed(self, decimals: usize) -> String {
        let decimals = decimals.min(SCALE_DIGITS);
        let div = 10i128.pow((SCALE_DIGITS - decimals) as u32);
        let rounded = div_round(self.0.abs(), div);
        let sign = if self.0 < 0 && rounded != 0 { "-" } else { "" };
        if decimals == 0 {
            return format!("{sign}{rounded}");
        }
        let p = 10i128.pow(decimals as u32);
        format!(
            "{sign}{}.{:0width$}",
            rounded / p,
            rounded % p,
            width = decimals
        )
    }
}

impl std::ops::Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

/// `round(num / den)`, half-up, for non-negative `num` and positive `den`.
fn div_round(num: i128, den: i128) -> i128 {
    (num + den / 2) / den
}

impl fmt::Display for Money {
    /// Exact decimal with trailing zeros trimmed (at least two decimals).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let full = self.format_fixed(SCALE_DIGITS);
        let (int, frac) = full.split_once('.').expect("fixed format has decimals");
        let mut frac = frac.trim_end_matches('0').to_string();
        while frac.len() < 2 {
            frac.push('0');
        }
        write!(f, "{int}.{frac}")
    }
}

impl FromStr for Money {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CostError::InvalidAmount(s.to_string());
        let t = s.trim();
        let (neg, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > SCALE_DIGITS {
            return Err(bad());
        }
        let int_v: i128 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac_v: i128 = if frac.is_empty() {
            0
        } else {
            frac.parse::<i128>().map_err(|_| bad())?
                * 10i128.pow((SCALE_DIGITS - frac.len()) as u32)
        };
        let v = int_v
            .checked_mul(SCALE)
            .and_then(|x| x.checked_add(frac_v))
            .ok_or_else(bad)?;
        Ok(Money(if neg { -v } else { v }))
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct MoneyVisitor;

        impl Visitor<'_> for MoneyVisitor {
            type Value = Money;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a decimal amount as string or number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Money, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Money, E> {
                Ok(Money(v as i128 * SCALE))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Money, E> {
                Ok(Money(v as i128 * SCALE))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Money, E> {
                if !v.is_finite() {
                    return Err(E::custom("amount must be finite"));
                }
                Ok(Money((v * SCALE as f64).round() as i128))
            }
        }

        d.deserialize_any(MoneyVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingModel {
    pub name: String,
    pub per_million_requests: Money,
    pub per_gb_second: Money,
    pub billing_granularity_ms: u64,
    pub currency: String,
}

impl PricingModel {
    pub fn validate(&self) -> Result<(), CostError> {
        let invalid = |reason: &str| CostError::InvalidPricing {
            name: self.name.clone(),
            reason: reason.into(),
        };
        if self.per_million_requests.is_negative() || self.per_gb_second.is_negative() {
            return Err(invalid("rates must be >= 0"));
        }
        if self.billing_granularity_ms < 1 {
            return Err(invalid("billing granularity must be >= 1 ms"));
        }
        Ok(())
    }

    /// Exact per-request cost as a fraction `(numerator, denominator)` in money units.
    fn per_request(&self, billed_ms: u64, memory_bytes: u64) -> (u128, u128) {
        // request fee: per_million / 10^6
        // compute:     billed_ms / 1000 * memory / GB * per_gb_second
        let den = 1_000_000u128 * GB as u128;
        let fee = self.per_million_requests.0 as u128 * GB as u128;
        let compute = billed_ms as u128 * memory_bytes as u128 * self.per_gb_second.0 as u128;
        (fee.saturating_add(compute.saturating_mul(1000)), den)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmBaseline {
    pub monthly_price: Money,
    pub memory_bytes: u64,
}

impl VmBaseline {
    pub fn validate(&self) -> Result<(), CostError> {
        if self.monthly_price.is_negative() {
            return Err(CostError::InvalidAmount(self.monthly_price.to_string()));
        }
        Ok(())
    }
}

/// Smallest multiple of `granularity_ms` that is >= `exec_ms`.
pub fn billed_duration(exec_ms: f64, granularity_ms: u64) -> u64 {
    let g = granularity_ms.max(1);
    if exec_ms.is_nan() || exec_ms <= 0.0 {
        return 0;
    }
    let units = (exec_ms / g as f64).ceil() as u64;
    // guard against exec_ms / g landing a hair under an integer boundary
    let billed = units * g;
    if (billed as f64) < exec_ms {
        billed + g
    } else {
        billed
    }
}

/// `n / 10^6 * per_million + n * billed_s * memory_gb * per_gb_second`.
pub fn serverless_cost(
    n_requests: u64,
    billed_ms_per_request: u64,
    memory_bytes: u64,
    pricing: &PricingModel,
) -> Money {
    let (num, den) = pricing.per_request(billed_ms_per_request, memory_bytes);
    Money(div_round_u(num.saturating_mul(n_requests as u128), den))
}

fn div_round_u(num: u128, den: u128) -> i128 {
    ((num / den) + u128::from(num % den >= den - den / 2)) as i128
}

pub fn vm_baseline_cost(baseline: &VmBaseline, months: u32) -> Money {
    Money(baseline.monthly_price.0 * months as i128)
}

/// Smallest monthly request count whose serverless bill reaches the VM's
/// monthly price. `None` when requests are free at the margin.
pub fn breakeven(
    pricing: &PricingModel,
    baseline: &VmBaseline,
    billed_ms_per_request: u64,
    memory_bytes: u64,
) -> Option<u64> {
    let (num, den) = pricing.per_request(billed_ms_per_request, memory_bytes);
    if num == 0 {
        return None;
    }
    let target = baseline.monthly_price;
    if target <= Money::ZERO {
        return Some(0);
    }
    let cost = |n: u64| serverless_cost(n, billed_ms_per_request, memory_bytes, pricing);
    // closed form, then settle the boundary against rounding
    let mut n = ((target.0 as u128).saturating_mul(den) / num).min(u64::MAX as u128) as u64;
    while n > 0 && cost(n - 1) >= target {
        n -= 1;
    }
    while cost(n) < target {
        n += 1;
    }
    Some(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub currency: String,
    pub requests: u64,
    pub billed_ms_total: u64,
    pub billed_ms_per_request: f64,
    pub memory_bytes: u64,
    pub serverless_total: Money,
    pub vm_total: Option<Money>,
    pub breakeven_requests_per_month: Option<u64>,
}

/// Closed-form report for `requests` invocations of `billed_ms` each.
pub fn cost_report(
    requests: u64,
    billed_ms: u64,
    memory_bytes: u64,
    pricing: &PricingModel,
    baseline: Option<&VmBaseline>,
) -> CostReport {
    CostReport {
        currency: pricing.currency.clone(),
        requests,
        billed_ms_total: billed_ms.saturating_mul(requests),
        billed_ms_per_request: billed_ms as f64,
        memory_bytes,
        serverless_total: serverless_cost(requests, billed_ms, memory_bytes, pricing),
        vm_total: baseline.map(|b| vm_baseline_cost(b, 1)),
        breakeven_requests_per_month: baseline
            .and_then(|b| breakeven(pricing, b, billed_ms, memory_bytes)),
    }
}

/// Bills each simulated invocation at its own billed duration.
pub fn cost_from_simulation(
    result: &SimulationResult,
    pricing: &PricingModel,
    baseline: Option<&VmBaseline>,
) -> CostReport {
    let requests = result.records.len() as u64;
    let billed_ms_total: u64 = result.records.iter().map(|r| r.billed_ms).sum();
    let memory = result.memory_bytes;
    let den = 1_000_000u128 * GB as u128;
    let fee = pricing.per_million_requests.0 as u128 * GB as u128 * requests as u128;
    let compute = (billed_ms_total as u128)
        .saturating_mul(memory as u128)
        .saturating_mul(pricing.per_gb_second.0 as u128)
        .saturating_mul(1000);
    let serverless_total = Money(div_round_u(fee.saturating_add(compute), den));

    let mean_billed = if requests == 0 {
        0.0
    } else {
        billed_ms_total as f64 / requests as f64
    };
    let breakeven_requests_per_month = baseline.and_then(|b| {
        if requests == 0 {
            None
        } else {
            breakeven(pricing, b, mean_billed.ceil() as u64, memory)
        }
    });
    CostReport {
        currency: pricing.currency.clone(),
        requests,
        billed_ms_total,
        billed_ms_per_request: mean_billed,
        memory_bytes: memory,
        serverless_total,
        vm_total: baseline.map(|b| vm_baseline_cost(b, 1)),
        breakeven_requests_per_month,
    }
}

pub fn render_cost_table(report: &CostReport) -> String {
    let c = &report.currency;
    let mut lines = vec![
        format!("requests            {}", report.requests),
        format!("billed ms/request   {:.2}", report.billed_ms_per_request),
        format!(
            "memory              {} MB",
            report.memory_bytes / crate::units::MB
        ),
        format!(
            "serverless total    {} {c}",
            report.serverless_total.format_fixed(4)
        ),
    ];
    if let Some(vm) = report.vm_total {
        lines.push(format!("vm per month        {} {c}", vm.format_fixed(2)));
    }
    match (report.vm_total, report.breakeven_requests_per_month) {
        (Some(_), Some(n)) => lines.push(format!(
            "break-even          {n} requests/month ({:.2} rps sustained)",
            n as f64 / SECONDS_PER_MONTH
        )),
        (Some(_), None) => lines.push("break-even          none (zero marginal cost)".into()),
        _ => {}
    }
    lines.join("\n") + "\n"
}

/// 30-day month.
pub const SECONDS_PER_MONTH: f64 = 30.0 * 24.0 * 3600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PricingFile {
    version: u32,
    profiles: Vec<PricingModel>,
}

pub fn load_pricing(text: &str) -> Result<Vec<PricingModel>, CostError> {
    let file: PricingFile = serde_json::from_str(text)?;
    if file.version != PRICING_FORMAT_VERSION {
        return Err(CostError::UnsupportedVersion(file.version));
    }
    for (i, p) in file.profiles.iter().enumerate() {
        p.validate()?;
        if file.profiles[..i].iter().any(|q| q.name == p.name) {
            return Err(CostError::DuplicateProfile(p.name.clone()));
        }
    }
    Ok(file.profiles)
}

pub fn find_pricing<'a>(
    profiles: &'a [PricingModel],
    name: &str,
) -> Result<&'a PricingModel, CostError> {
    profiles
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| CostError::UnknownProfile(name.to_string()))
}
