//! Monte Carlo bit-error-rate harness.
//!
//! An experiment is a [`SimConfig`]: one code, one channel family, a list of
//! decoders and a noise grid. Every decoder at a grid point sees the same
//! channel realizations (common random numbers), which sharpens ordering
//! comparisons between decoders far beyond what independent runs give.
//!
//! Reproducibility contract: a config with a fixed master seed produces a
//! byte-identical CSV, independent of thread count. Per-trial randomness
//! comes from counter-derived streams keyed by (seed, point, trial), and
//! error totals accumulate in exact half-error units, so neither scheduling
//! nor reduction order can perturb the output.

use crate::channel::{ChannelSpec, Symbol};
use crate::codes::{
    load_alist, make_golay, make_regular_ldpc, make_repetition, make_tailbiting_conv,
    ParityCheckMatrix,
};
use crate::decoders::{
    bp_decode, local_map_ball_decode, map_decode_bec_gauss, map_decode_enumeration,
    map_decode_tailbiting_bcjr, tp_decode, DecodeFlag, DecodeOutput,
};
use crate::gmrf::{dualize, posterior_marginal_enumeration, WeightPair};
use crate::sawtree::{TruncationScheme, DEFAULT_NODE_BUDGET};
use crate::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

/// Exact CSV header emitted by [`run_sweep`].
pub const CSV_HEADER: &str =
    "code,channel,noise,decoder,scheme,t,ell,trials,bits,bit_errors,ber,ci95,seed";

/// Trials are dispatched in fixed chunks; the early-stop rule is checked only
/// on chunk boundaries so that the executed trial count is identical for any
/// thread count.
const TRIAL_CHUNK: u64 = 512;

/// splitmix64 finalizer; bijective on u64.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for one trial, derived from the master seed and the
/// (point, trial) counters. Pure function of its arguments, so trials can run
/// in any order on any number of threads.
pub fn trial_rng(seed: u64, point: u64, trial: u64) -> ChaCha8Rng {
    let mut s = mix64(seed ^ 0x6a09_e667_f3bc_c909);
    s = mix64(s ^ point.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    s = mix64(s ^ trial.wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    ChaCha8Rng::seed_from_u64(s)
}

/// Code under test: a named constructor or an alist file.
///
/// Kinds and their parameters:
/// - `golay`: none
/// - `repetition`: `n`
/// - `tailbiting`: `n`
/// - `ldpc`: `n`, `dv`, `dc`, optional `seed` (construction seed, default 0)
/// - `alist`: `path`
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSpec {
    pub kind: String,
    pub n: Option<usize>,
    pub dv: Option<usize>,
    pub dc: Option<usize>,
    pub seed: Option<u64>,
    pub path: Option<String>,
}

impl CodeSpec {
    fn named(kind: &str) -> Self {
        CodeSpec { kind: kind.to_string(), ..CodeSpec::default() }
    }

    fn need(&self, field: Option<usize>, name: &str) -> Result<usize> {
        field.ok_or_else(|| {
            Error::Invalid(format!("code kind {} needs the {name} parameter", self.kind))
        })
    }

    /// Builds the parity-check matrix and the label used in the CSV `code`
    /// column.
    pub fn build(&self) -> Result<(ParityCheckMatrix, String)> {
        match self.kind.as_str() {
            "golay" => Ok((make_golay(), "golay".to_string())),
            "repetition" => {
                let n = self.need(self.n, "n")?;
                Ok((make_repetition(n)?, format!("repetition-{n}")))
            }
            "tailbiting" => {
                let n = self.need(self.n, "n")?;
                Ok((make_tailbiting_conv(n)?, format!("tailbiting-{n}")))
            }
            "ldpc" => {
                let n = self.need(self.n, "n")?;
                let dv = self.need(self.dv, "dv")?;
                let dc = self.need(self.dc, "dc")?;
                let seed = self.seed.unwrap_or(0);
                Ok((make_regular_ldpc(n, dv, dc, seed)?, format!("ldpc-{dv}-{dc}-n{n}-s{seed}")))
            }
            "alist" => {
                let path = self
                    .path
                    .as_deref()
                    .ok_or_else(|| Error::Invalid("code kind alist needs a path".to_string()))?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Invalid(format!("reading {path}: {e}")))?;
                let label = Path::new(path)
                    .file_stem()
                    .map_or_else(|| "alist".to_string(), |s| s.to_string_lossy().into_owned());
                Ok((load_alist(&text)?, label))
            }
            other => Err(Error::Invalid(format!("unknown code kind {other:?}"))),
        }
    }
}

impl FromStr for CodeSpec {
    type Err = Error;

    /// Command-line grammar: `golay`, `repetition:N`, `tailbiting:N`,
    /// `ldpc:N:DV:DC[:SEED]`, `alist:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (s, None),
        };
        let bad = || Error::Invalid(format!("malformed code spec {s:?}"));
        let mut spec = CodeSpec::named(kind);
        match (kind, rest) {
            // Bare kinds pass through; build() rejects unknown ones with a
            // clearer message than a parse error would give.
            (_, None) => {}
            ("repetition" | "tailbiting", Some(r)) => {
                spec.n = Some(r.parse().map_err(|_| bad())?);
            }
            ("ldpc", Some(r)) => {
                let parts: Vec<&str> = r.split(':').collect();
                if parts.len() != 3 && parts.len() != 4 {
                    return Err(bad());
                }
                spec.n = Some(parts[0].parse().map_err(|_| bad())?);
                spec.dv = Some(parts[1].parse().map_err(|_| bad())?);
                spec.dc = Some(parts[2].parse().map_err(|_| bad())?);
                if let Some(seed) = parts.get(3) {
                    spec.seed = Some(seed.parse().map_err(|_| bad())?);
                }
            }
            ("alist", Some(r)) if !r.is_empty() => spec.path = Some(r.to_string()),
            _ => return Err(bad()),
        }
        Ok(spec)
    }
}

/// Channel family; the noise grid supplies the parameter per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Bec,
    Bawgn,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Bec => "bec",
            ChannelKind::Bawgn => "bawgn",
        }
    }

    /// Instantiates the channel at one grid value (erasure probability for
    /// the BEC, noise variance for the AWGN channel).
    pub fn spec(self, noise: f64) -> Result<ChannelSpec> {
        match self {
            ChannelKind::Bec => {
                if !(0.0..=1.0).contains(&noise) {
                    return Err(Error::Invalid(format!(
                        "erasure probability {noise} outside [0, 1]"
                    )));
                }
                Ok(ChannelSpec::Bec { eps: noise })
            }
            ChannelKind::Bawgn => {
                if !noise.is_finite() || noise <= 0.0 {
                    return Err(Error::Invalid(format!("noise variance {noise} must be positive")));
                }
                Ok(ChannelSpec::Bawgn { sigma2: noise })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub kind: ChannelKind,
}

/// One decoder entry as written in a config file.
///
/// Kinds: `tp` (needs `scheme`, optional `budget`), `bp` (optional `iters`,
/// default 400), `map-enum`, `map-gauss`, `bcjr`, `local-map` (needs `t`),
/// and `raw` (no decoding; scores the channel output itself).
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSpec {
    pub kind: String,
    pub scheme: Option<String>,
    pub budget: Option<usize>,
    pub iters: Option<usize>,
    pub t: Option<usize>,
}

impl DecoderSpec {
    pub fn build(&self) -> Result<Decoder> {
        let reject = |cond: bool, name: &str| {
            if cond {
                Err(Error::Invalid(format!(
                    "decoder kind {} does not take the {name} parameter",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        if self.kind != "tp" {
            reject(self.scheme.is_some(), "scheme")?;
            reject(self.budget.is_some(), "budget")?;
        }
        reject(self.kind != "bp" && self.iters.is_some(), "iters")?;
        reject(self.kind != "local-map" && self.t.is_some(), "t")?;
        match self.kind.as_str() {
            "tp" => {
                let scheme = self
                    .scheme
                    .as_deref()
                    .ok_or_else(|| Error::Invalid("decoder kind tp needs a scheme".to_string()))?
                    .parse()?;
                Ok(Decoder::Tp { scheme, budget: self.budget.unwrap_or(DEFAULT_NODE_BUDGET) })
            }
            "bp" => Ok(Decoder::Bp { iters: self.iters.unwrap_or(400) }),
            "map-enum" => Ok(Decoder::MapEnum),
            "map-gauss" => Ok(Decoder::MapGauss),
            "bcjr" => Ok(Decoder::Bcjr),
            "local-map" => {
                let t = self
                    .t
                    .ok_or_else(|| Error::Invalid("decoder kind local-map needs t".to_string()))?;
                Ok(Decoder::LocalMap { t })
            }
            "raw" => Ok(Decoder::Raw),
            other => Err(Error::Invalid(format!("unknown decoder kind {other:?}"))),
        }
    }
}

/// A validated, runnable decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoder {
    Tp { scheme: TruncationScheme, budget: usize },
    Bp { iters: usize },
    MapEnum,
    MapGauss,
    Bcjr,
    LocalMap { t: usize },
    Raw,
}

impl Decoder {
    pub fn run(&self, h: &ParityCheckMatrix, likelihoods: &[[f64; 2]]) -> Result<DecodeOutput> {
        match *self {
            Decoder::Tp { scheme, budget } => tp_decode(h, likelihoods, scheme, budget),
            Decoder::Bp { iters } => bp_decode(h, likelihoods, iters),
            Decoder::MapEnum => map_decode_enumeration(h, likelihoods),
            Decoder::MapGauss => map_decode_bec_gauss(h, likelihoods),
            Decoder::Bcjr => map_decode_tailbiting_bcjr(h, likelihoods),
            Decoder::LocalMap { t } => local_map_ball_decode(h, likelihoods, t),
            Decoder::Raw => Ok(raw_decode(likelihoods)),
        }
    }

    /// True when the decoder can only interpret point-mass/erasure
    /// likelihoods and therefore needs an erasure channel.
    pub fn needs_erasures(&self) -> bool {
        match *self {
            Decoder::MapGauss | Decoder::LocalMap { .. } => true,
            Decoder::Tp { scheme, .. } => matches!(
                scheme,
                TruncationScheme::BecAdaptive { .. }
                    | TruncationScheme::Ball { .. }
                    | TruncationScheme::BallBp { .. }
            ),
            _ => false,
        }
    }

    /// CSV fields (decoder, scheme, t, ell); empty strings where a column
    /// does not apply. BP reports its iteration cap in the ell column.
    pub fn csv_meta(&self) -> (&'static str, String, String, String) {
        let opt = |v: Option<usize>| v.map_or_else(String::new, |x| x.to_string());
        match *self {
            Decoder::Tp { scheme, .. } => (
                "tp",
                scheme.label().to_string(),
                opt(scheme.depth_param()),
                opt(scheme.graft_param()),
            ),
            Decoder::Bp { iters } => ("bp", String::new(), String::new(), iters.to_string()),
            Decoder::MapEnum => ("map-enum", String::new(), String::new(), String::new()),
            Decoder::MapGauss => ("map-gauss", String::new(), String::new(), String::new()),
            Decoder::Bcjr => ("bcjr", String::new(), String::new(), String::new()),
            Decoder::LocalMap { t } => {
                ("local-map", String::new(), t.to_string(), String::new())
            }
            Decoder::Raw => ("raw", String::new(), String::new(), String::new()),
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Decoder::Tp { scheme, .. } => write!(f, "tp {scheme}"),
            Decoder::Bp { iters } => write!(f, "bp x{iters}"),
            Decoder::MapEnum => write!(f, "map-enum"),
            Decoder::MapGauss => write!(f, "map-gauss"),
            Decoder::Bcjr => write!(f, "bcjr"),
            Decoder::LocalMap { t } => write!(f, "local-map t={t}"),
            Decoder::Raw => write!(f, "raw"),
        }
    }
}

/// No decoding at all: score each position by its own likelihood pair. On the
/// BEC this reports every erasure as ambiguous, giving the ε/2 baseline.
fn raw_decode(likelihoods: &[[f64; 2]]) -> DecodeOutput {
    let mut out = DecodeOutput {
        marginals: Vec::with_capacity(likelihoods.len()),
        decisions: Vec::with_capacity(likelihoods.len()),
        flags: Vec::with_capacity(likelihoods.len()),
    };
    for &l in likelihoods {
        let p = WeightPair::from_pair(l);
        out.marginals.push(p.to_probabilities());
        out.decisions.push(p.decision());
        out.flags.push(if p.w0 == p.w1 { DecodeFlag::Ambiguous } else { DecodeFlag::Ok });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Grid of channel parameters, one point per value.
    pub noise: Vec<f64>,
    /// Trials per point (an upper bound when early stopping is on).
    pub trials: u64,
    /// Master seed; everything random derives from it.
    pub seed: u64,
    /// Stop a point once every decoder has accumulated this many bit errors.
    /// About 200 gives ~14% relative accuracy on the worst estimate.
    #[serde(default)]
    pub early_stop_errors: Option<u64>,
    /// Report Wilson-interval half-widths instead of the normal
    /// approximation.
    #[serde(default)]
    pub wilson: bool,
    /// Default CSV path for the sweep subcommand; `--out` overrides.
    #[serde(default)]
    pub out: Option<String>,
}

/// A full experiment description, usually parsed from a TOML file with
/// sections `[code]`, `[channel]`, `[[decoders]]` and `[sweep]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub code: CodeSpec,
    pub channel: ChannelSection,
    pub decoders: Vec<DecoderSpec>,
    pub sweep: SweepSpec,
}

impl SimConfig {
    /// Checks everything that can be checked without running trials: the
    /// code builds, every decoder builds, the grid is nonempty and valid for
    /// the channel, and erasure-only decoders are not pointed at a soft
    /// channel.
    pub fn validate(&self) -> Result<()> {
        self.code.build()?;
        if self.decoders.is_empty() {
            return Err(Error::Invalid("no decoders configured".to_string()));
        }
        if self.sweep.noise.is_empty() {
            return Err(Error::Invalid("empty noise grid".to_string()));
        }
        if self.sweep.trials == 0 {
            return Err(Error::Invalid("trials must be at least 1".to_string()));
        }
        if self.sweep.early_stop_errors == Some(0) {
            return Err(Error::Invalid("early_stop_errors must be at least 1".to_string()));
        }
        for &noise in &self.sweep.noise {
            self.channel.kind.spec(noise)?;
        }
        for spec in &self.decoders {
            let dec = spec.build()?;
            if dec.needs_erasures() && self.channel.kind != ChannelKind::Bec {
                return Err(Error::Unsupported(format!(
                    "decoder {dec} needs an erasure channel, not {}",
                    self.channel.kind.name()
                )));
            }
        }
        Ok(())
    }
}

/// Parses and validates a TOML experiment config.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let cfg: SimConfig =
        toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// One decoder's estimate at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerEstimate {
    /// Index into the config's decoder list.
    pub decoder_index: usize,
    /// Grid value this point ran at.
    pub noise: f64,
    /// Trials actually executed (early stopping may cut the configured
    /// count).
    pub trials: u64,
    /// Bits simulated: trials times block length.
    pub bits: u64,
    /// Accumulated errors in exact half-error units; an undetermined erasure
    /// counts one half, a wrong decision two.
    pub error_halves: u64,
    pub ber: f64,
    /// Half-width of the 95% confidence interval on `ber`.
    pub ci95: f64,
}

impl BerEstimate {
    fn from_counts(
        decoder_index: usize,
        noise: f64,
        trials: u64,
        bits: u64,
        error_halves: u64,
        wilson: bool,
    ) -> Self {
        let nb = bits as f64;
        let ber = error_halves as f64 / 2.0 / nb;
        let z = 1.96;
        let ci95 = if wilson {
            // Wilson score half-width; the reported center stays at ber.
            let denom = 1.0 + z * z / nb;
            z * (ber * (1.0 - ber) / nb + z * z / (4.0 * nb * nb)).sqrt() / denom
        } else {
            z * (ber * (1.0 - ber) / nb).sqrt()
        };
        BerEstimate { decoder_index, noise, trials, bits, error_halves, ber, ci95 }
    }

    /// Fractional bit errors (halves resolved back to error units).
    pub fn bit_errors(&self) -> f64 {
        self.error_halves as f64 / 2.0
    }
}

/// Fractional errors for one decoded word against the transmitted word, in
/// half-error units. On an erasure channel an ambiguous bit is undetermined
/// and costs one half; elsewhere ambiguity is resolved by the decision rule
/// and costs a full error exactly when the decision is wrong.
fn error_halves(out: &DecodeOutput, word: &[u8], erasure_channel: bool) -> u64 {
    let mut halves = 0;
    for (i, &bit) in word.iter().enumerate() {
        let wrong = out.decisions[i] != bit;
        match out.flags[i] {
            DecodeFlag::Ambiguous if erasure_channel => halves += 1,
            _ => halves += 2 * u64::from(wrong),
        }
    }
    halves
}

/// Runs every configured decoder at grid point `point` on shared channel
/// realizations and returns one estimate per decoder, in config order.
pub fn run_point(cfg: &SimConfig, point: usize) -> Result<Vec<BerEstimate>> {
    let (h, _) = cfg.code.build()?;
    let decoders: Vec<Decoder> =
        cfg.decoders.iter().map(DecoderSpec::build).collect::<Result<_>>()?;
    let noise = *cfg
        .sweep
        .noise
        .get(point)
        .ok_or_else(|| Error::Invalid(format!("no grid point {point}")))?;
    let chan = cfg.channel.kind.spec(noise)?;
    let erasure = cfg.channel.kind == ChannelKind::Bec;
    let basis = h.generator_basis();
    let k = decoders.len();

    let mut halves = vec![0u64; k];
    let mut done = 0u64;
    while done < cfg.sweep.trials {
        let hi = (done + TRIAL_CHUNK).min(cfg.sweep.trials);
        let chunk = (done..hi)
            .into_par_iter()
            .try_fold(
                || vec![0u64; k],
                |mut acc, trial| -> Result<Vec<u64>> {
                    let mut rng = trial_rng(cfg.sweep.seed, point as u64, trial);
                    let word = basis.sample_codeword(&mut rng);
                    let received: Vec<Symbol> =
                        word.iter().map(|&b| chan.transmit(b, &mut rng)).collect();
                    let lik = chan.word_likelihoods(&received)?;
                    for (slot, dec) in acc.iter_mut().zip(&decoders) {
                        let out = dec.run(&h, &lik).map_err(|e| {
                            Error::Invalid(format!(
                                "decoder {dec} failed at noise {noise} trial {trial}: {e}"
                            ))
                        })?;
                        *slot += error_halves(&out, &word, erasure);
                    }
                    Ok(acc)
                },
            )
            .try_reduce(
                || vec![0u64; k],
                |mut a, b| {
                    // Integer accumulation commutes, so reduction order
                    // cannot change the totals.
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += *y;
                    }
                    Ok(a)
                },
            )?;
        for (x, y) in halves.iter_mut().zip(&chunk) {
            *x += *y;
        }
        done = hi;
        if let Some(stop) = cfg.sweep.early_stop_errors {
            if halves.iter().all(|&hv| hv >= 2 * stop) {
                break;
            }
        }
    }

    let bits = done * h.n() as u64;
    Ok((0..k)
        .map(|j| BerEstimate::from_counts(j, noise, done, bits, halves[j], cfg.sweep.wilson))
        .collect())
}

/// Runs the whole grid and streams CSV rows to `out`, flushing after every
/// point so a partial file is still a valid prefix. Returns all estimates in
/// (point, decoder) order.
pub fn run_sweep<W: Write>(cfg: &SimConfig, mut out: W) -> Result<Vec<BerEstimate>> {
    let (_, code_label) = cfg.code.build()?;
    let decoders: Vec<Decoder> =
        cfg.decoders.iter().map(DecoderSpec::build).collect::<Result<_>>()?;
    let io = |e: std::io::Error| Error::Invalid(format!("writing results: {e}"));
    writeln!(out, "{CSV_HEADER}").map_err(io)?;
    let mut all = Vec::new();
    for point in 0..cfg.sweep.noise.len() {
        let estimates = run_point(cfg, point)?;
        for est in &estimates {
            let (kind, scheme, t, ell) = decoders[est.decoder_index].csv_meta();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                code_label,
                cfg.channel.kind.name(),
                est.noise,
                kind,
                scheme,
                t,
                ell,
                est.trials,
                est.bits,
                est.bit_errors(),
                est.ber,
                est.ci95,
                cfg.sweep.seed
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)?;
        all.extend(estimates);
    }
    Ok(all)
}

/// Outcome of one randomized self-check suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Report from [`oracle_check`]: one line per suite plus a corrupted-input
/// control that passes only when the corruption is detected.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub suites: Vec<SuiteResult>,
}

impl OracleReport {
    pub fn all_pass(&self) -> bool {
        self.suites.iter().all(|s| s.pass)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(
                f,
                "{:28} {:4} cases  max deviation {:.3e}  tolerance {:.1e}  {}",
                s.name,
                s.cases,
                s.max_deviation,
                s.tolerance,
                if s.pass { "pass" } else { "FAIL" }
            )?;
        }
        write!(f, "overall: {}", if self.all_pass() { "pass" } else { "FAIL" })
    }
}

/// Random sparse parity-check matrix for the self-check suites.
fn random_code<R: Rng + ?Sized>(rng: &mut R, max_n: usize, max_m: usize) -> ParityCheckMatrix {
    loop {
        let n = rng.gen_range(4..=max_n);
        let m = rng.gen_range(2..=max_m.min(n - 1));
        let rows: Vec<Vec<usize>> = (0..m)
            .map(|_| {
                let deg = rng.gen_range(2..=3.min(n));
                let mut cols = rand::seq::index::sample(rng, n, deg).into_vec();
                cols.sort_unstable();
                cols
            })
            .collect();
        if let Ok(h) = ParityCheckMatrix::from_rows(n, rows) {
            return h;
        }
    }
}

/// Random transmitted word and likelihoods over a random channel.
fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    h: &ParityCheckMatrix,
    erasures_only: bool,
) -> Vec<[f64; 2]> {
    let chan = if erasures_only || rng.gen_bool(0.5) {
        ChannelSpec::Bec { eps: rng.gen_range(0.2..0.8) }
    } else {
        ChannelSpec::Bawgn { sigma2: rng.gen_range(0.25..1.0) }
    };
    let word = h.generator_basis().sample_codeword(rng);
    let received: Vec<Symbol> = word.iter().map(|&b| chan.transmit(b, rng)).collect();
    chan.word_likelihoods(&received).expect("symbols came from this channel")
}

/// Randomized end-to-end self-checks of the exact decoding paths against
/// independent oracles. `count` cases per suite; all suites derive from
/// `seed` alone.
///
/// Suites: full-tree marginals vs codeword enumeration; erasure elimination
/// vs enumeration; tailbiting trellis vs enumeration; brute-force dual-field
/// marginals vs enumeration. The final entry corrupts one vertex weight and
/// passes only if the brute-force comparison then exceeds its tolerance.
pub fn oracle_check(seed: u64, count: usize) -> OracleReport {
    let mut suites = Vec::new();

    // Full-tree TP vs enumeration, both channels.
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 1));
    let mut dev = 0.0f64;
    for _ in 0..count {
        let h = random_code(&mut rng, 7, 4);
        let lik = random_instance(&mut rng, &h, false);
        let tp = tp_decode(&h, &lik, TruncationScheme::Full, DEFAULT_NODE_BUDGET)
            .expect("full tree on a consistent instance");
        let exact = posterior_marginal_enumeration(&h, &lik).expect("consistent instance");
        for (a, b) in tp.marginals.iter().zip(&exact) {
            dev = dev.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
    }
    suites.push(SuiteResult {
        name: "full-tp-vs-enumeration",
        cases: count,
        max_deviation: dev,
        tolerance: 1e-9,
        pass: dev <= 1e-9,
    });

    // Gaussian-elimination erasure MAP vs enumeration: statuses and
    // decisions must agree exactly; deviation counts mismatched bits.
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 2));
    let mut dev = 0.0f64;
    for _ in 0..count {
        let h = random_code(&mut rng, 10, 5);
        let lik = random_instance(&mut rng, &h, true);
        let a = map_decode_bec_gauss(&h, &lik).expect("erasure instance");
        let b = map_decode_enumeration(&h, &lik).expect("erasure instance");
        let mismatches = (0..h.n())
            .filter(|&i| a.flags[i] != b.flags[i] || a.decisions[i] != b.decisions[i])
            .count();
        dev += mismatches as f64;
    }
    suites.push(SuiteResult {
        name: "gauss-vs-enumeration",
        cases: count,
        max_deviation: dev,
        tolerance: 0.0,
        pass: dev <= 0.0,
    });

    // Tailbiting trellis vs enumeration on the Gaussian channel.
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 3));
    let mut dev = 0.0f64;
    for _ in 0..count {
        let n = 2 * rng.gen_range(4..=6);
        let h = make_tailbiting_conv(n).expect("valid length");
        let chan = ChannelSpec::Bawgn { sigma2: rng.gen_range(0.25..1.0) };
        let word = h.generator_basis().sample_codeword(&mut rng);
        let received: Vec<Symbol> =
            word.iter().map(|&b| chan.transmit(b, &mut rng)).collect();
        let lik = chan.word_likelihoods(&received).expect("gaussian symbols");
        let a = map_decode_tailbiting_bcjr(&h, &lik).expect("tailbiting code");
        let b = map_decode_enumeration(&h, &lik).expect("positive likelihoods");
        for (x, y) in a.marginals.iter().zip(&b.marginals) {
            dev = dev.max((x[0] - y[0]).abs()).max((x[1] - y[1]).abs());
        }
    }
    suites.push(SuiteResult {
        name: "bcjr-vs-enumeration",
        cases: count,
        max_deviation: dev,
        tolerance: 1e-10,
        pass: dev <= 1e-10,
    });

    // Brute-force marginals of the dual field vs enumeration posteriors.
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 4));
    let mut dev = 0.0f64;
    for _ in 0..count {
        let h = random_code(&mut rng, 8, 4);
        let lik = random_instance(&mut rng, &h, false);
        let field = dualize(&h, &lik).expect("valid likelihoods");
        let exact = posterior_marginal_enumeration(&h, &lik).expect("consistent instance");
        for (i, b) in exact.iter().enumerate() {
            let a = WeightPair::from_pair(
                field.vertex_marginal_bruteforce(i).expect("small field"),
            )
            .to_probabilities();
            dev = dev.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
    }
    suites.push(SuiteResult {
        name: "duality-vs-enumeration",
        cases: count,
        max_deviation: dev,
        tolerance: 1e-10,
        pass: dev <= 1e-10,
    });

    // Negative control: nudge one vertex weight and require the comparison
    // above to notice. Guards against a checker that always reports zero.
    // Soft likelihoods only: rescaling a point mass would be swallowed by
    // scale invariance.
    if count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 5));
        let h = random_code(&mut rng, 8, 4);
        let chan = ChannelSpec::Bawgn { sigma2: 0.5 };
        let word = h.generator_basis().sample_codeword(&mut rng);
        let received: Vec<Symbol> =
            word.iter().map(|&b| chan.transmit(b, &mut rng)).collect();
        let lik = chan.word_likelihoods(&received).expect("gaussian symbols");
        let mut field = dualize(&h, &lik).expect("valid likelihoods");
        let w = field.weight(0);
        field.set_weight(0, [w[0] * 1.01 + 1e-3, w[1]]);
        let exact = posterior_marginal_enumeration(&h, &lik).expect("positive likelihoods");
        let mut dev = 0.0f64;
        for (i, b) in exact.iter().enumerate() {
            let a = WeightPair::from_pair(
                field.vertex_marginal_bruteforce(i).expect("small field"),
            )
            .to_probabilities();
            dev = dev.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
        suites.push(SuiteResult {
            name: "corrupted-weight-control",
            cases: 1,
            max_deviation: dev,
            tolerance: 1e-10,
            pass: dev > 1e-10,
        });
    }

    OracleReport { suites }
}

/// Parses a received word, one symbol per line: `0`, `1` or `?` on the BEC,
/// a decimal real on the AWGN channel. Blank lines are skipped.
pub fn parse_received(text: &str, chan: ChannelSpec) -> Result<Vec<Symbol>> {
    let mut symbols = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let sym = match chan {
            ChannelSpec::Bec { .. } => match s {
                "0" => Symbol::Bit(0),
                "1" => Symbol::Bit(1),
                "?" => Symbol::Erased,
                other => {
                    return Err(Error::Invalid(format!(
                        "line {}: expected 0, 1 or ?, got {other:?}",
                        lineno + 1
                    )))
                }
            },
            ChannelSpec::Bawgn { .. } => Symbol::Real(s.parse().map_err(|_| {
                Error::Invalid(format!("line {}: expected a real value, got {s:?}", lineno + 1))
            })?),
        };
        symbols.push(sym);
    }
    Ok(symbols)
}
