//! Byte sizes and the finite/unlimited limit sentinel.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MB: u64 = 1 << 20;
pub const GB: u64 = 1 << 30;

pub const fn mb(n: u64) -> u64 {
    n * MB
}

pub const fn gb(n: u64) -> u64 {
    n * GB
}

/// A hard platform limit. `Unlimited` is an explicit sentinel and is never
/// encoded as zero; a finite limit is always strictly positive.
///
/// Serialized as a positive integer or the string `"unlimited"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Limit {
    Finite(u64),
    Unlimited,
}

impl Limit {
    pub fn finite(&self) -> Option<u64> {
        match self {
            Limit::Finite(v) => Some(*v),
            Limit::Unlimited => None,
        }
    }

    pub fn is_unlimited(&self) -> bool {
        matches!(self, Limit::Unlimited)
    }

    /// Whether `actual` stays within this limit (inclusive).
    pub fn admits(&self, actual: u64) -> bool {
        match self {
            Limit::Finite(v) => actual <= *v,
            Limit::Unlimited => true,
        }
    }

    /// Largest admitted value, saturating to `u64::MAX` when unlimited.
    pub fn cap(&self) -> u64 {
        self.finite().unwrap_or(u64::MAX)
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Finite(v) => write!(f, "{v}"),
            Limit::Unlimited => f.write_str("unlimited"),
        }
    }
}

impl Serialize for Limit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Limit::Finite(v) => s.serialize_u64(*v),
            Limit::Unlimited => s.serialize_str("unlimited"),
        }
    }
}

impl<'de> Deserialize<'de> for Limit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct LimitVisitor;

        impl Visitor<'_> for LimitVisitor {
            type Value = Limit;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"unlimited\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Limit, E> {
                if v == 0 {
                    return Err(E::custom(
                        "limit must be positive; use \"unlimited\" for no limit",
                    ));
                }
                Ok(Limit::Finite(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Limit, E> {
                if v <= 0 {
                    return Err(E::custom(
                        "limit must be positive; use \"unlimited\" for no limit",
                    ));
                }
                Ok(Limit::Finite(v as u64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Limit, E> {
                if v == "unlimited" {
                    Ok(Limit::Unlimited)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        d.deserialize_any(LimitVisitor)
    }
}

/// Human-readable size in binary megabytes, e.g. `71.00 MB`.
pub fn format_mb(bytes: u64) -> String {
    format!("{:.2} MB", bytes as f64 / MB as f64)
}
