use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    AspectWidth,
    AspectHeight,
    Distance,
    Mass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Range> {
        values.into_iter().fold(None, |acc, v| match acc {
            None => Some(Range { min: v, max: v }),
            Some(r) => Some(Range {
                min: r.min.min(v),
                max: r.max.max(v),
            }),
        })
    }
}

/// Min/max of each network input and target over a training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub a: Range,
    pub b: Range,
    pub d: Range,
    pub mass: Range,
}

impl NormStats {
    /// Statistics over `(a, b, d, mass)` samples; `None` for an empty set.
    pub fn from_samples(samples: impl IntoIterator<Item = [f64; 4]>) -> Option<Self> {
        let samples: Vec<[f64; 4]> = samples.into_iter().collect();
        let col = |i: usize| Range::of(samples.iter().map(|s| s[i]));
        Some(Self {
            a: col(0)?,
            b: col(1)?,
            d: col(2)?,
            mass: col(3)?,
        })
    }

    pub fn range(&self, q: Quantity) -> Range {
        match q {
            Quantity::AspectWidth => self.a,
            Quantity::AspectHeight => self.b,
            Quantity::Distance => self.d,
            Quantity::Mass => self.mass,
        }
    }

    /// Normalized `[a, b, d]` feature triplet.
    pub fn features(&self, f: [f64; 3]) -> [f64; 3] {
        [
            normalize(f[0], Quantity::AspectWidth, self),
            normalize(f[1], Quantity::AspectHeight, self),
            normalize(f[2], Quantity::Distance, self),
        ]
    }

    const KEYS: [&'static str; 8] = [
        "a_min", "a_max", "b_min", "b_max", "d_min", "d_max", "m_min", "m_max",
    ];

    pub fn to_values(&self) -> [f64; 8] {
        [
            self.a.min,
            self.a.max,
            self.b.min,
            self.b.max,
            self.d.min,
            self.d.max,
            self.mass.min,
            self.mass.max,
        ]
    }

    pub fn from_values(v: [f64; 8]) -> Result<Self> {
        let r = |i: usize| -> Result<Range> {
            let (min, max) = (v[2 * i], v[2 * i + 1]);
            if !(min.is_finite() && max.is_finite() && min <= max) {
                return Err(Error::InvalidInput(format!(
                    "normalization range [{min}, {max}] is not ordered"
                )));
            }
            Ok(Range { min, max })
        };
        Ok(Self {
            a: r(0)?,
            b: r(1)?,
            d: r(2)?,
            mass: r(3)?,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in Self::KEYS.iter().zip(self.to_values()) {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("stats line {line:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("stats value {v:?}")))?;
            kv.insert(k.trim().to_string(), v);
        }
        let mut values = [0.0; 8];
        for (slot, key) in values.iter_mut().zip(Self::KEYS) {
            *slot = *kv
                .get(key)
                .ok_or_else(|| Error::InvalidInput(format!("stats missing {key}")))?;
        }
        Self::from_values(values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Min-max normalization. Values outside the training range are not clamped;
/// a degenerate range maps everything to 0.
pub fn normalize(value: f64, quantity: Quantity, stats: &NormStats) -> f64 {
    let r = stats.range(quantity);
    let span = r.max - r.min;
    if span == 0.0 {
        0.0
    } else {
        (value - r.min) / span
    }
}

pub fn denormalize(value: f64, quantity: Quantity, stats: &NormStats) -> f64 {
    let r = stats.range(quantity);
    r.min + value * (r.max - r.min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(min: f64, max: f64) -> NormStats {
        let r = Range { min, max };
        NormStats {
            a: r,
            b: r,
            d: r,
            mass: r,
        }
    }

    #[test]
    fn endpoints() {
        let s = stats(10.0, 30.0);
        assert_eq!(normalize(10.0, Quantity::Mass, &s), 0.0);
        assert_eq!(normalize(30.0, Quantity::Mass, &s), 1.0);
        assert_eq!(normalize(40.0, Quantity::Mass, &s), 1.5);
    }

    #[test]
    fn degenerate_range_maps_to_zero() {
        let s = stats(5.0, 5.0);
        assert_eq!(normalize(5.0, Quantity::Distance, &s), 0.0);
        assert_eq!(normalize(7.0, Quantity::Distance, &s), 0.0);
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let s = NormStats {
            a: Range { min: 0.1, max: 0.3 },
            b: Range { min: 0.2, max: 0.7 },
            d: Range { min: 0.55, max: 1.9 },
            mass: Range {
                min: 12.25,
                max: 480.0,
            },
        };
        let text = s.to_text();
        assert!(text.starts_with("a_min=0.1\na_max=0.3\n"));
        let back = NormStats::parse(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unordered_range_is_rejected() {
        assert!(NormStats::from_values([1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(min in -1e3f64..1e3, span in 1e-3f64..1e3, t in -10.0f64..11.0) {
            let s = stats(min, min + span);
            let v = min + t * span;
            let back = denormalize(normalize(v, Quantity::Mass, &s), Quantity::Mass, &s);
            prop_assert!((back - v).abs() <= 1e-9 * span);
        }
    }
}
