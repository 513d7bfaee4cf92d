//! Similarity measures shared by the referencer, the vector index, and the
//! evaluation bench. Both measures map into (0, 1] so that scores are
//! directly comparable and larger always means closer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RecallError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Cosine similarity mapped to (0, 1) as `0.5 * (1 + cos)`.
    Cos,
    /// Euclidean distance mapped to (0, 1] as `1 / (1 + dist)`.
    Euc,
}

impl Measure {
    /// Tag byte used in the index file format.
    pub fn tag(self) -> u8 {
        match self {
            Measure::Cos => 0,
            Measure::Euc => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Measure::Cos),
            1 => Ok(Measure::Euc),
            other => Err(RecallError::Format(format!(
                "unknown similarity tag byte {other}"
            ))),
        }
    }

    /// Similarity score in (0, 1]. Assumes both slices have equal length and,
    /// for cosine, nonzero norm; validated entry points live on the callers.
    #[inline]
    pub fn score(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Measure::Cos => 0.5 * (1.0 + cosine(a, b)),
            Measure::Euc => 1.0 / (1.0 + euclidean(a, b)),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Cos => write!(f, "cos"),
            Measure::Euc => write!(f, "euc"),
        }
    }
}

impl FromStr for Measure {
    type Err = RecallError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cos" | "cosine" => Ok(Measure::Cos),
            "euc" | "euclidean" => Ok(Measure::Euc),
            other => Err(RecallError::Config(format!(
                "unknown similarity measure '{other}' (expected cos or euc)"
            ))),
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_maps_to_unit_interval() {
        let a = [1.0, 0.0];
        assert_eq!(Measure::Cos.score(&a, &[1.0, 0.0]), 1.0);
        assert_eq!(Measure::Cos.score(&a, &[0.0, 1.0]), 0.5);
        assert_eq!(Measure::Cos.score(&a, &[-1.0, 0.0]), 0.0);
    }

    #[test]
    fn euclidean_score_decreases_with_distance() {
        let a = [0.0, 0.0];
        assert_eq!(Measure::Euc.score(&a, &[0.0, 0.0]), 1.0);
        assert!(Measure::Euc.score(&a, &[1.0, 0.0]) > Measure::Euc.score(&a, &[2.0, 0.0]));
    }

    #[test]
    fn tag_round_trip() {
        for m in [Measure::Cos, Measure::Euc] {
            assert_eq!(Measure::from_tag(m.tag()).unwrap(), m);
        }
        assert!(Measure::from_tag(9).is_err());
    }
}
