//! Computational bases for an `n`-site spin-1/2 register.
//!
//! A configuration is an `n`-bit integer read as the bitstring
//! `s_1 s_2 ... s_n`, so site 1 is the most significant bit. `|0101⟩` is
//! therefore the integer 5 and the full basis is ordered like the readout
//! probabilities `P_{00..0}, P_{00..1}, ..., P_{11..1}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest register handled by the dense routines.
pub const MAX_SITES: usize = 20;

/// Configuration bitmask for 1-based `site` in an `n_sites` register.
#[inline]
pub fn site_mask(n_sites: usize, site: usize) -> usize {
    1usize << (n_sites - site)
}

/// Whether 1-based `site` is excited in `config`.
#[inline]
pub fn occupied(config: usize, n_sites: usize, site: usize) -> bool {
    config & site_mask(n_sites, site) != 0
}

/// Which excitation-number subspace a basis spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sector {
    Full,
    Excitations(usize),
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sector::Full => write!(f, "full"),
            Sector::Excitations(m) => write!(f, "m={m}"),
        }
    }
}

/// Ordered list of configurations spanning either the full register or one
/// excitation sector, with the inverse lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SectorBasis {
    n_sites: usize,
    sector: Sector,
    states: Vec<usize>,
    // Dense inverse table over all 2^n configurations; `u32::MAX` marks
    // configurations outside the basis.
    lookup: Vec<u32>,
}

impl SectorBasis {
    /// Full `2^n` basis.
    pub fn full(n_sites: usize) -> Result<Self> {
        Self::build(n_sites, Sector::Full)
    }

    /// Basis of all configurations with exactly `m` excitations.
    pub fn excitations(n_sites: usize, m: usize) -> Result<Self> {
        Self::build(n_sites, Sector::Excitations(m))
    }

    /// Build a basis from a sector descriptor.
    pub fn build(n_sites: usize, sector: Sector) -> Result<Self> {
        if n_sites == 0 || n_sites > MAX_SITES {
            return Err(Error::InvalidArgument(format!(
                "register size {n_sites} outside 1..={MAX_SITES}"
            )));
        }
        let dim_full = 1usize << n_sites;
        let states: Vec<usize> = match sector {
            Sector::Full => (0..dim_full).collect(),
            Sector::Excitations(m) => {
                if m > n_sites {
                    return Err(Error::InvalidArgument(format!(
                        "excitation count {m} exceeds register size {n_sites}"
                    )));
                }
                (0..dim_full)
                    .filter(|c| c.count_ones() as usize == m)
                    .collect()
            }
        };
        let mut lookup = vec![u32::MAX; dim_full];
        for (i, &c) in states.iter().enumerate() {
            lookup[c] = i as u32;
        }
        Ok(SectorBasis {
            n_sites,
            sector,
            states,
            lookup,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn sector(&self) -> Sector {
        self.sector
    }

    pub fn is_full(&self) -> bool {
        self.sector == Sector::Full
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn state(&self, index: usize) -> usize {
        self.states[index]
    }

    /// Position of `config` in this basis, if present.
    #[inline]
    pub fn index_of(&self, config: usize) -> Option<usize> {
        match self.lookup.get(config) {
            Some(&i) if i != u32::MAX => Some(i as usize),
            _ => None,
        }
    }
}

/// Enumerate a basis for `n` sites; `m = None` selects the full basis.
pub fn sector_basis(n: usize, m: Option<usize>) -> Result<SectorBasis> {
    match m {
        None => SectorBasis::full(n),
        Some(m) => SectorBasis::excitations(n, m),
    }
}

/// Parse a bitstring such as `"0101010101"` into a configuration.
pub fn parse_bitstring(bits: &str) -> Result<usize> {
    if bits.is_empty() || bits.len() > MAX_SITES {
        return Err(Error::InvalidArgument(format!(
            "bitstring '{bits}' must have 1..={MAX_SITES} characters"
        )));
    }
    bits.chars().try_fold(0usize, |acc, ch| match ch {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        _ => Err(Error::InvalidArgument(format!(
            "bitstring '{bits}' contains '{ch}'"
        ))),
    })
}

/// Render a configuration as an `n_sites`-character bitstring.
pub fn format_bitstring(config: usize, n_sites: usize) -> String {
    (1..=n_sites)
        .map(|s| if occupied(config, n_sites, s) { '1' } else { '0' })
        .collect()
}

/// Néel configuration `|0101...⟩`: even sites excited.
pub fn neel_config(n_sites: usize) -> usize {
    (2..=n_sites)
        .step_by(2)
        .fold(0, |acc, s| acc | site_mask(n_sites, s))
}

/// Domain-wall configuration `|11..100..0⟩`: left half excited.
pub fn domain_wall_config(n_sites: usize) -> usize {
    (1..=n_sites / 2).fold(0, |acc, s| acc | site_mask(n_sites, s))
}

/// Binomial coefficient, exact for the register sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_site_single_excitation() {
        let b = sector_basis(2, Some(1)).unwrap();
        assert_eq!(b.dim(), 2);
        let labels: Vec<String> = b.states().iter().map(|&c| format_bitstring(c, 2)).collect();
        assert_eq!(labels, vec!["01", "10"]);
    }

    #[test]
    fn half_filling_ten_sites() {
        assert_eq!(sector_basis(10, Some(5)).unwrap().dim(), 252);
        assert_eq!(binomial(10, 5), 252);
    }

    #[test]
    fn full_basis_four_sites() {
        let b = sector_basis(4, None).unwrap();
        assert_eq!(b.dim(), 16);
        assert!(b.is_full());
    }

    #[test]
    fn rejects_excess_excitations() {
        assert!(sector_basis(4, Some(5)).is_err());
    }

    #[test]
    fn index_round_trip_and_ordering() {
        for n in 1..=8 {
            for m in 0..=n {
                let b = SectorBasis::excitations(n, m).unwrap();
                assert_eq!(b.dim(), binomial(n, m));
                assert!(b.states().windows(2).all(|w| w[0] < w[1]));
                for (i, &c) in b.states().iter().enumerate() {
                    assert_eq!(b.index_of(c), Some(i));
                }
                for c in 0..(1usize << n) {
                    assert_eq!(b.index_of(c).is_some(), c.count_ones() as usize == m);
                }
            }
        }
    }

    #[test]
    fn named_configurations() {
        assert_eq!(format_bitstring(neel_config(10), 10), "0101010101");
        assert_eq!(format_bitstring(domain_wall_config(10), 10), "1111100000");
        assert_eq!(parse_bitstring("0101").unwrap(), 5);
        assert!(parse_bitstring("01x1").is_err());
        assert!(occupied(parse_bitstring("1000").unwrap(), 4, 1));
    }
}
