//! Memoryless channels and per-bit likelihood computation.
//!
//! Decoders only consume the pair `(P(y|x=0), P(y|x=1))` per position, so a
//! channel here is anything that can turn a transmitted bit into an observed
//! symbol and score a symbol against both bit hypotheses.

use crate::{Error, Result};
use rand::Rng;
use std::fmt;
use std::str::FromStr;

/// A memoryless channel, parsed from strings like `bec:0.4` or `bawgn:0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelSpec {
    /// Binary erasure channel with erasure probability `eps`.
    Bec { eps: f64 },
    /// Binary-input AWGN: bit `b` maps to `1 - 2b`, noise variance `sigma2`.
    Bawgn { sigma2: f64 },
}

/// One observed channel output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Symbol {
    Bit(u8),
    Erased,
    Real(f64),
}

impl ChannelSpec {
    /// Transmits one bit, drawing noise from `rng`.
    pub fn transmit<R: Rng + ?Sized>(&self, bit: u8, rng: &mut R) -> Symbol {
        debug_assert!(bit <= 1);
        match *self {
            ChannelSpec::Bec { eps } => {
                if rng.gen::<f64>() < eps {
                    Symbol::Erased
                } else {
                    Symbol::Bit(bit)
                }
            }
            ChannelSpec::Bawgn { sigma2 } => {
                let noise: f64 = rng.sample(rand_distr::StandardNormal);
                Symbol::Real(1.0 - 2.0 * f64::from(bit) + noise * sigma2.sqrt())
            }
        }
    }

    /// Likelihood pair `(P(y|0), P(y|1))` for one symbol. For the AWGN channel
    /// the common Gaussian normalizer is dropped; decoders are scale invariant.
    pub fn likelihood(&self, y: Symbol) -> Result<[f64; 2]> {
        match (*self, y) {
            (ChannelSpec::Bec { eps }, Symbol::Bit(0)) => Ok([1.0 - eps, 0.0]),
            (ChannelSpec::Bec { eps }, Symbol::Bit(1)) => Ok([0.0, 1.0 - eps]),
            (ChannelSpec::Bec { eps }, Symbol::Erased) => Ok([eps, eps]),
            (ChannelSpec::Bawgn { sigma2 }, Symbol::Real(y)) => {
                let d0 = y - 1.0;
                let d1 = y + 1.0;
                Ok([
                    (-d0 * d0 / (2.0 * sigma2)).exp(),
                    (-d1 * d1 / (2.0 * sigma2)).exp(),
                ])
            }
            (_, y) => Err(Error::Invalid(format!("symbol {y:?} does not fit {self}"))),
        }
    }

    /// Likelihood pairs for a whole received word.
    pub fn word_likelihoods(&self, word: &[Symbol]) -> Result<Vec<[f64; 2]>> {
        word.iter().map(|&y| self.likelihood(y)).collect()
    }

    /// Es/N0 in dB for the AWGN channel (unit symbol energy, N0 = 2 sigma^2).
    pub fn esn0_db(&self) -> Option<f64> {
        match *self {
            ChannelSpec::Bawgn { sigma2 } => Some(10.0 * (1.0 / (2.0 * sigma2)).log10()),
            ChannelSpec::Bec { .. } => None,
        }
    }
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ChannelSpec::Bec { eps } => write!(f, "bec:{eps}"),
            ChannelSpec::Bawgn { sigma2 } => write!(f, "bawgn:{sigma2}"),
        }
    }
}

impl FromStr for ChannelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = s
            .split_once(':')
            .ok_or_else(|| Error::Invalid(format!("channel `{s}` is not kind:param")))?;
        let value: f64 = param
            .parse()
            .map_err(|_| Error::Invalid(format!("channel parameter `{param}` is not a number")))?;
        match kind {
            "bec" => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::Invalid(format!("erasure probability {value} outside [0, 1]")));
                }
                Ok(ChannelSpec::Bec { eps: value })
            }
            "bawgn" => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::Invalid(format!("noise variance {value} must be positive")));
                }
                Ok(ChannelSpec::Bawgn { sigma2: value })
            }
            other => Err(Error::Invalid(format!("unknown channel kind `{other}`"))),
        }
    }
}
