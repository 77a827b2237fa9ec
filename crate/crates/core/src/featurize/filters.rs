use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Filter families: A and B act on static volumes, C, D and E on dynamic
/// ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterFamily {
    A,
    B,
    C,
    D,
    E,
}

impl FilterFamily {
    pub fn kernel_size(self) -> usize {
        match self {
            FilterFamily::C => 1,
            FilterFamily::A | FilterFamily::D => 3,
            FilterFamily::B | FilterFamily::E => 5,
        }
    }

    fn salt(self) -> u64 {
        match self {
            FilterFamily::A => 0xA,
            FilterFamily::B => 0xB,
            FilterFamily::C => 0xC,
            FilterFamily::D => 0xD,
            FilterFamily::E => 0xE,
        }
    }
}

impl fmt::Display for FilterFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for FilterFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(FilterFamily::A),
            "B" => Ok(FilterFamily::B),
            "C" => Ok(FilterFamily::C),
            "D" => Ok(FilterFamily::D),
            "E" => Ok(FilterFamily::E),
            _ => Err(Error::Config(format!("unknown filter family `{s}`"))),
        }
    }
}

/// A bank of `count` filters of one family. Channel `c` of filter `i` is the
/// `k × k` mean filter scaled by a standard-normal weight `w[i][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub family: FilterFamily,
    pub count: usize,
    pub channels: usize,
    pub seed: u64,
    /// Filter-major, channel-minor.
    weights: Vec<f64>,
}

impl FilterBank {
    pub fn kernel_size(&self) -> usize {
        self.family.kernel_size()
    }

    /// Bank with explicit per-filter, per-channel multipliers.
    pub fn from_weights(
        family: FilterFamily,
        channels: usize,
        weights: Vec<f64>,
    ) -> Result<FilterBank> {
        if channels == 0 || weights.is_empty() || weights.len() % channels != 0 {
            return Err(Error::Shape(format!(
                "{} weights do not split into filters of {channels} channels",
                weights.len()
            )));
        }
        Ok(FilterBank {
            family,
            count: weights.len() / channels,
            channels,
            seed: 0,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Random multiplier of channel `c` in filter `i`.
    pub fn weight(&self, i: usize, c: usize) -> f64 {
        self.weights[i * self.channels + c]
    }

    /// Entry of the explicit kernel tensor at window offset `(dy, dx)`.
    pub fn kernel_entry(&self, i: usize, c: usize, dy: usize, dx: usize) -> f64 {
        let k = self.kernel_size();
        debug_assert!(dy < k && dx < k);
        self.weight(i, c) / (k * k) as f64
    }
}

/// Draw a filter bank from a seeded standard normal, filter-major then
/// channel-minor. Each family salts the seed so banks built from one seed
/// differ across families.
pub fn build_filter_bank(
    family: FilterFamily,
    count: usize,
    channels: usize,
    seed: u64,
) -> Result<FilterBank> {
    if count == 0 || channels == 0 {
        return Err(Error::Config("filter bank needs count >= 1 and channels >= 1".into()));
    }
    let mut r = rng::rng(seed, family.salt());
    let weights = (0..count * channels)
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    Ok(FilterBank {
        family,
        count,
        channels,
        seed,
        weights,
    })
}

/// The five banks used for neighbouring features.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborBanks {
    pub a: FilterBank,
    pub b: FilterBank,
    pub c: FilterBank,
    pub d: FilterBank,
    pub e: FilterBank,
}

impl NeighborBanks {
    /// `static_filters` filters per static family (A, B) and
    /// `dynamic_filters` per dynamic family (C, D, E).
    pub fn build(
        static_channels: usize,
        dynamic_depth: usize,
        static_filters: usize,
        dynamic_filters: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(NeighborBanks {
            a: build_filter_bank(FilterFamily::A, static_filters, static_channels, seed)?,
            b: build_filter_bank(FilterFamily::B, static_filters, static_channels, seed)?,
            c: build_filter_bank(FilterFamily::C, dynamic_filters, dynamic_depth, seed)?,
            d: build_filter_bank(FilterFamily::D, dynamic_filters, dynamic_depth, seed)?,
            e: build_filter_bank(FilterFamily::E, dynamic_filters, dynamic_depth, seed)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bank() {
        let a = build_filter_bank(FilterFamily::A, 4, 3, 11).unwrap();
        let b = build_filter_bank(FilterFamily::A, 4, 3, 11).unwrap();
        assert_eq!(a, b);
        let c = build_filter_bank(FilterFamily::A, 4, 3, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn family_a_is_scaled_three_by_three_mean() {
        let bank = build_filter_bank(FilterFamily::A, 2, 3, 5).unwrap();
        assert_eq!(bank.kernel_size(), 3);
        for i in 0..2 {
            for c in 0..3 {
                let w = bank.weight(i, c);
                for dy in 0..3 {
                    for dx in 0..3 {
                        assert_eq!(bank.kernel_entry(i, c, dy, dx), w / 9.0);
                    }
                }
            }
        }
    }

    #[test]
    fn family_c_is_pointwise() {
        let bank = build_filter_bank(FilterFamily::C, 3, 4, 5).unwrap();
        assert_eq!(bank.kernel_size(), 1);
        assert_eq!(bank.kernel_entry(1, 2, 0, 0), bank.weight(1, 2));
    }

    #[test]
    fn families_are_decorrelated() {
        let a = build_filter_bank(FilterFamily::A, 2, 2, 5).unwrap();
        let d = build_filter_bank(FilterFamily::D, 2, 2, 5).unwrap();
        assert_ne!(a.weight(0, 0), d.weight(0, 0));
    }

    #[test]
    fn empty_bank_rejected() {
        assert!(build_filter_bank(FilterFamily::B, 0, 3, 1).is_err());
        assert!(build_filter_bank(FilterFamily::B, 1, 0, 1).is_err());
    }
}
