//! Tree-pruning (TP) decoding of binary linear codes.
//!
//! The toolkit revolves around a duality transform that turns the decoding
//! posterior of a binary linear code into a *generalized* Markov random field
//! (edge weights may be negative), and a self-avoiding-walk tree construction
//! whose root marginal, computed with a block/concatenation recursion, equals
//! the exact symbol posterior. Truncating the tree at a depth `t` yields a
//! family of decoders that interpolates between belief propagation and
//! symbol-MAP decoding as `t` grows.
//!
//! Modules:
//! - [`codes`]: parity-check matrices, Tanner graphs, GF(2) linear algebra,
//!   code constructors and alist I/O.
//! - [`channel`]: BEC and binary-input AWGN channels and their likelihoods.
//! - [`gmrf`]: generalized MRFs, the duality transform and brute-force
//!   reference marginals.
//! - [`sawtree`]: self-avoiding-walk trees, truncation schemes and child
//!   partitions.
//! - [`decoders`]: the TP decoder plus BP, MAP and BCJR references.
//! - [`sim`]: Monte Carlo bit-error-rate harness, config files, CSV output
//!   and randomized self-checks.

pub mod channel;
pub mod codes;
pub mod decoders;
pub mod fastwalk;
pub mod gmrf;
pub mod sawtree;
pub mod sim;

use std::fmt;

/// Errors reported by the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter or input failed validation.
    Invalid(String),
    /// An alist file could not be parsed; `line` is 1-based.
    Alist { line: usize, msg: String },
    /// A tree construction exceeded its node budget.
    Budget { limit: usize },
    /// An operation was asked to run on inputs it does not support
    /// (for example a BEC-only scheme on a Gaussian channel).
    Unsupported(String),
    /// An internal consistency check failed; indicates a bug, not bad input.
    Internal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Alist { line, msg } => write!(f, "alist line {line}: {msg}"),
            Error::Budget { limit } => {
                write!(f, "tree node budget of {limit} exceeded; instance too large for this scheme")
            }
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
