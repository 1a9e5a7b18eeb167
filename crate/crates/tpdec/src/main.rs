//! Command-line front end: single-word decoding, BER sweeps, randomized
//! self-checks and walk-tree statistics.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use tpdec::channel::ChannelSpec;
use tpdec::decoders::DecodeFlag;
use tpdec::gmrf::dualize;
use tpdec::sawtree::{build_saw_tree, TruncationScheme, DEFAULT_NODE_BUDGET};
use tpdec::sim::{self, CodeSpec, DecoderSpec};

#[derive(Parser)]
#[command(
    name = "tpdec",
    version,
    about = "Tree-pruning decoders for binary linear codes, with BP and MAP \
             references and a Monte Carlo bit-error-rate harness"
)]
struct Cli {
    /// Master seed; overrides the config seed for sweeps.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output file; stdout when absent (sweeps fall back to the config's
    /// `out` first).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decode one received word; prints per-bit marginals and decisions.
    Decode {
        /// Code: golay, repetition:N, tailbiting:N, ldpc:N:DV:DC[:SEED],
        /// alist:PATH.
        #[arg(long)]
        code: String,
        /// Channel: bec:EPS or bawgn:SIGMA2.
        #[arg(long)]
        channel: String,
        /// Decoder: tp, bp, map-enum, map-gauss, bcjr or local-map.
        #[arg(long)]
        decoder: String,
        /// Truncation scheme for tp: full, fixed:T, bec:T, ball:T,
        /// ballbp:T,L.
        #[arg(long)]
        scheme: Option<String>,
        /// Iteration cap for bp (default 400).
        #[arg(long)]
        iters: Option<usize>,
        /// Neighborhood radius for local-map.
        #[arg(long)]
        t: Option<usize>,
        /// Tree node budget for tp.
        #[arg(long)]
        budget: Option<usize>,
        /// Received word, one symbol per line: 0/1/? on the BEC, a real on
        /// the AWGN channel.
        #[arg(long)]
        received: PathBuf,
    },

    /// Run the BER sweep described by a TOML config and emit CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },

    /// Randomized self-checks of the exact decoders against enumeration.
    OracleCheck {
        /// Cases per suite.
        #[arg(long, default_value_t = 50)]
        count: usize,
    },

    /// Walk-tree size statistics for every root on one received word.
    TreeStats {
        #[arg(long)]
        code: String,
        #[arg(long)]
        channel: String,
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        received: PathBuf,
    },
}

fn open_sink(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Box::new(io::BufWriter::new(f))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn load_likelihoods(
    code: &str,
    channel: &str,
    received: &PathBuf,
) -> anyhow::Result<(tpdec::codes::ParityCheckMatrix, ChannelSpec, Vec<[f64; 2]>)> {
    let (h, _) = code.parse::<CodeSpec>()?.build()?;
    let chan: ChannelSpec = channel.parse()?;
    let text = fs::read_to_string(received)
        .with_context(|| format!("reading {}", received.display()))?;
    let symbols = sim::parse_received(&text, chan)?;
    if symbols.len() != h.n() {
        bail!("received word has {} symbols, code has length {}", symbols.len(), h.n());
    }
    let lik = chan.word_likelihoods(&symbols)?;
    Ok((h, chan, lik))
}

fn main() {
    if let Err(e) = run() {
        // A closed pipe (e.g. piping into head) is not an error.
        if let Some(io) = e.root_cause().downcast_ref::<io::Error>() {
            if io.kind() == io::ErrorKind::BrokenPipe {
                return;
            }
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }

    match cli.cmd {
        Cmd::Decode { code, channel, decoder, scheme, iters, t, budget, received } => {
            let (h, _, lik) = load_likelihoods(&code, &channel, &received)?;
            let spec = DecoderSpec { kind: decoder, scheme, budget, iters, t };
            let out = spec.build()?.run(&h, &lik)?;
            let mut sink = open_sink(cli.out.as_ref())?;
            writeln!(sink, "bit,p0,p1,decision,flag")?;
            for i in 0..h.n() {
                let flag = match out.flags[i] {
                    DecodeFlag::Ok => "ok",
                    DecodeFlag::Ambiguous => "ambiguous",
                };
                writeln!(
                    sink,
                    "{i},{},{},{},{flag}",
                    out.marginals[i][0], out.marginals[i][1], out.decisions[i]
                )?;
            }
            sink.flush()?;
        }

        Cmd::Sweep { config } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = sim::parse_config(&text)?;
            if let Some(seed) = cli.seed {
                cfg.sweep.seed = seed;
            }
            let path = cli.out.clone().or_else(|| cfg.sweep.out.clone().map(PathBuf::from));
            let sink = open_sink(path.as_ref())?;
            let estimates = sim::run_sweep(&cfg, sink)?;
            if let Some(p) = path {
                eprintln!("{} rows -> {}", estimates.len(), p.display());
            }
        }

        Cmd::OracleCheck { count } => {
            let report = sim::oracle_check(cli.seed.unwrap_or(0), count);
            let mut sink = open_sink(cli.out.as_ref())?;
            writeln!(sink, "{report}")?;
            sink.flush()?;
            if !report.all_pass() {
                bail!("self-checks failed");
            }
        }

        Cmd::TreeStats { code, channel, scheme, budget, received } => {
            let (h, _, lik) = load_likelihoods(&code, &channel, &received)?;
            let scheme: TruncationScheme = scheme.parse()?;
            let budget = budget.unwrap_or(DEFAULT_NODE_BUDGET);
            let field = dualize(&h, &lik)?;
            let mut sink = open_sink(cli.out.as_ref())?;
            writeln!(sink, "root,scheme,t,nodes,max_depth,terminated,truncated")?;
            for root in 0..h.n() {
                let tree = build_saw_tree(&field, root, scheme, budget)?;
                let s = tree.stats();
                let t = scheme.depth_param().map_or_else(String::new, |v| v.to_string());
                writeln!(
                    sink,
                    "{root},{},{t},{},{},{},{}",
                    scheme.label(),
                    s.nodes,
                    s.max_depth,
                    s.terminated,
                    s.truncated
                )?;
            }
            sink.flush()?;
        }
    }
    Ok(())
}
