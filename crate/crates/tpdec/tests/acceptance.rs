//! Acceptance suite: one test per release criterion, each printing a single
//! `criterion N: pass` line with the figure it was judged on. Tolerances and
//! trial counts are pinned in this file rather than configurable, so a green
//! run means the same thing on every machine.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tpdec::channel::ChannelSpec;
use tpdec::codes::{make_regular_ldpc, make_tailbiting_conv, ParityCheckMatrix};
use tpdec::decoders::{
    local_map_ball_decode, map_decode_bec_gauss, map_decode_enumeration,
    map_decode_tailbiting_bcjr, evaluate_tree, evaluate_tree_ordinary, evaluate_tree_ratio,
    tp_decode,
};
use tpdec::gmrf::{dualize, posterior_marginal_enumeration, GeneralizedMrf, VertexTag};
use tpdec::sawtree::{build_saw_tree, TruncationScheme};
use tpdec::sim::{parse_config, run_point, run_sweep, BerEstimate};

/// A random parity-check matrix with `n` columns and `m` rows, row weights
/// between 1 and `max_w` distinct columns. Duplicate rows are allowed; the
/// decoders must not care.
fn random_code(rng: &mut ChaCha8Rng, n: usize, m: usize, max_w: usize) -> ParityCheckMatrix {
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let w = rng.gen_range(1..=max_w.min(n));
        let mut cols: Vec<usize> = (0..n).collect();
        cols.shuffle(rng);
        cols.truncate(w);
        cols.sort_unstable();
        rows.push(cols);
    }
    ParityCheckMatrix::from_rows(n, rows).unwrap()
}

/// Transmit a random codeword of `h` and return its likelihood word.
fn random_instance(
    rng: &mut ChaCha8Rng,
    h: &ParityCheckMatrix,
    chan: ChannelSpec,
) -> Vec<[f64; 2]> {
    let word = h.generator_basis().sample_codeword(rng);
    let received: Vec<_> = word.iter().map(|&b| chan.transmit(b, rng)).collect();
    chan.word_likelihoods(&received).unwrap()
}

/// The criterion-1/2 channel mix: three erasure rates and two noise powers.
fn mixed_channel(i: usize) -> ChannelSpec {
    match i % 5 {
        0 => ChannelSpec::Bec { eps: 0.2 },
        1 => ChannelSpec::Bec { eps: 0.5 },
        2 => ChannelSpec::Bec { eps: 0.8 },
        3 => ChannelSpec::Bawgn { sigma2: 0.25 },
        _ => ChannelSpec::Bawgn { sigma2: 1.0 },
    }
}

#[test]
fn criterion_1_full_tree_marginals_match_enumerated_posteriors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc1);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = rng.gen_range(2..=9);
        let m = rng.gen_range(1..=(14 - n).min(5));
        let h = random_code(&mut rng, n, m, 4);
        let lik = random_instance(&mut rng, &h, mixed_channel(i));
        let exact = posterior_marginal_enumeration(&h, &lik).unwrap();
        let out = tp_decode(&h, &lik, TruncationScheme::Full, 4_000_000).unwrap();
        for b in 0..n {
            for s in 0..2 {
                worst = worst.max((out.marginals[b][s] - exact[b][s]).abs());
            }
        }
    }
    assert!(worst <= 1e-9, "full-tree marginal error {worst:.3e} above 1e-9");
    println!("criterion 1: pass (200 codes, worst marginal error {worst:.3e})");
}

#[test]
fn criterion_2_dual_field_brute_force_agrees_with_codeword_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc2);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = rng.gen_range(2..=12);
        let m = rng.gen_range(1..=(19 - n).min(7));
        let h = random_code(&mut rng, n, m, 4);
        let lik = random_instance(&mut rng, &h, mixed_channel(i));
        let exact = posterior_marginal_enumeration(&h, &lik).unwrap();
        let field = dualize(&h, &lik).unwrap();
        // Every bit while the configuration space is small, two random bits
        // on the larger instances.
        let bits: Vec<usize> = if n + m <= 16 {
            (0..n).collect()
        } else {
            (0..2).map(|_| rng.gen_range(0..n)).collect()
        };
        for b in bits {
            let z = field.vertex_marginal_bruteforce(b).unwrap();
            let sum = z[0] + z[1];
            for s in 0..2 {
                worst = worst.max((z[s] / sum - exact[b][s]).abs());
            }
        }
    }
    assert!(worst <= 1e-10, "dual brute-force error {worst:.3e} above 1e-10");
    println!("criterion 2: pass (100 instances, worst marginal error {worst:.3e})");
}

/// A random connected strictly positive pairwise MRF on `nv` plain vertices.
fn random_positive_mrf(rng: &mut ChaCha8Rng, nv: usize) -> GeneralizedMrf {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nv];
    let mut tables: Vec<Vec<[[f64; 2]; 2]>> = vec![Vec::new(); nv];
    let add = |rng: &mut ChaCha8Rng,
                   adj: &mut Vec<Vec<usize>>,
                   tables: &mut Vec<Vec<[[f64; 2]; 2]>>,
                   u: usize,
                   v: usize| {
        let t = [
            [rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)],
            [rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)],
        ];
        adj[u].push(v);
        tables[u].push(t);
        adj[v].push(u);
        tables[v].push([[t[0][0], t[1][0]], [t[0][1], t[1][1]]]);
    };
    for v in 1..nv {
        let u = rng.gen_range(0..v);
        add(rng, &mut adj, &mut tables, u, v);
    }
    for _ in 0..nv / 2 {
        let u = rng.gen_range(0..nv);
        let v = rng.gen_range(0..nv);
        if u != v && !adj[u].contains(&v) {
            add(rng, &mut adj, &mut tables, u, v);
        }
    }
    let weights = (0..nv).map(|_| [rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)]).collect();
    GeneralizedMrf::new(weights, vec![VertexTag::Plain; nv], adj, tables).unwrap()
}

#[test]
fn criterion_3_positive_fields_reduce_to_ordinary_sum_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let nv = rng.gen_range(3..=12);
        let field = random_positive_mrf(&mut rng, nv);
        for _ in 0..3 {
            let root = rng.gen_range(0..nv);
            let tree = build_saw_tree(&field, root, TruncationScheme::Full, 2_000_000).unwrap();
            let blocked = evaluate_tree(&field, &tree).unwrap().to_probabilities();
            let ordinary = evaluate_tree_ordinary(&field, &tree).unwrap().to_probabilities();
            let ratio = evaluate_tree_ratio(&field, &tree).unwrap();
            let z = field.vertex_marginal_bruteforce(root).unwrap();
            let brute = z[1] / (z[0] + z[1]);
            worst = worst.max((blocked[1] - ordinary[1]).abs());
            worst = worst.max((blocked[1] - ratio / (1.0 + ratio)).abs());
            worst = worst.max((blocked[1] - brute).abs());
        }
    }
    assert!(worst <= 1e-9, "recursion disagreement {worst:.3e} above 1e-9");
    println!("criterion 3: pass (20 fields x 3 roots, worst disagreement {worst:.3e})");
}

#[test]
fn criterion_4_map_oracles_cross_agree() {
    // Erasure side: elimination vs enumeration, statuses and decisions exact.
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc4);
    let mut checked = 0usize;
    let mut i = 0usize;
    while checked < 1000 {
        i += 1;
        let n = rng.gen_range(3..=20);
        let m = rng.gen_range(1..=n - 1);
        let h = random_code(&mut rng, n, m, 5);
        if h.generator_basis().k() > 12 {
            continue;
        }
        let eps = [0.2, 0.5, 0.8][i % 3];
        let lik = random_instance(&mut rng, &h, ChannelSpec::Bec { eps });
        let gauss = map_decode_bec_gauss(&h, &lik).unwrap();
        let enumd = map_decode_enumeration(&h, &lik).unwrap();
        assert_eq!(gauss.flags, enumd.flags, "status mismatch on instance {i}");
        assert_eq!(gauss.decisions, enumd.decisions, "decision mismatch on instance {i}");
        checked += 1;
    }

    // Trellis side: tailbiting forward-backward vs enumeration marginals.
    let h = make_tailbiting_conv(14).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..100 {
        let chan = ChannelSpec::Bawgn { sigma2: [0.25, 1.0][j % 2] };
        let lik = random_instance(&mut rng, &h, chan);
        let bcjr = map_decode_tailbiting_bcjr(&h, &lik).unwrap();
        let enumd = map_decode_enumeration(&h, &lik).unwrap();
        for b in 0..h.n() {
            for s in 0..2 {
                worst = worst.max((bcjr.marginals[b][s] - enumd.marginals[b][s]).abs());
            }
        }
    }
    assert!(worst <= 1e-10, "trellis marginal error {worst:.3e} above 1e-10");
    println!(
        "criterion 4: pass (1000 erasure instances exact, trellis error {worst:.3e})"
    );
}

const GOLAY_TRIALS: usize = 60_000;

#[test]
fn criterion_5_golay_erasure_ber_interpolates_between_bp_and_map() {
    let cfg = parse_config(&format!(
        r#"
        [code]
        kind = "golay"

        [channel]
        kind = "bec"
        noise = [0.3, 0.4, 0.5]

        [[decoders]]
        kind = "bp"

        [[decoders]]
        kind = "tp"
        scheme = "bec:4"

        [[decoders]]
        kind = "tp"
        scheme = "bec:5"

        [[decoders]]
        kind = "tp"
        scheme = "bec:6"

        [[decoders]]
        kind = "map-gauss"

        [sweep]
        trials = {GOLAY_TRIALS}
        seed = 20260821
        "#
    ))
    .unwrap();

    // Decoders come back in config order: bp, bec:4, bec:5, bec:6, map.
    let names = ["bp", "tp bec:4", "tp bec:5", "tp bec:6", "map"];
    for (point, eps) in [(0usize, 0.3), (1, 0.4), (2, 0.5)] {
        let est: Vec<BerEstimate> = run_point(&cfg, point).unwrap();
        assert_eq!(est.len(), 5);
        for w in est.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let slack = a.ci95.max(b.ci95);
            assert!(
                a.ber >= b.ber - slack,
                "ordering violated at eps {eps}: {} ber {:.5} < {} ber {:.5} beyond {slack:.5}",
                names[a.decoder_index], a.ber, names[b.decoder_index], b.ber
            );
        }
        if point == 1 {
            for w in est.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                let gap = a.ber - b.ber;
                let ci = a.ci95.max(b.ci95);
                assert!(
                    gap > 2.0 * ci,
                    "gap {} -> {} is {gap:.5}, needs > {:.5}",
                    names[a.decoder_index], names[b.decoder_index], 2.0 * ci
                );
            }
        }
        println!(
            "criterion 5 at eps {eps}: bp {:.4} >= bec4 {:.4} >= bec5 {:.4} >= bec6 {:.4} >= map {:.4}",
            est[0].ber, est[1].ber, est[2].ber, est[3].ber, est[4].ber
        );
    }
    println!("criterion 5: pass ({GOLAY_TRIALS} paired trials per point, gaps > 2*ci95 at 0.4)");
}

const BALL_TRIALS: usize = 20_000;

#[test]
fn criterion_6_neighborhood_ber_nonincreasing_in_radius() {
    let cfg = parse_config(&format!(
        r#"
        [code]
        kind = "ldpc"
        n = 50
        dv = 3
        dc = 6
        seed = 7

        [channel]
        kind = "bec"
        noise = [0.35]

        [[decoders]]
        kind = "tp"
        scheme = "ball:1"

        [[decoders]]
        kind = "tp"
        scheme = "ball:2"

        [[decoders]]
        kind = "tp"
        scheme = "ball:3"

        [sweep]
        trials = {BALL_TRIALS}
        seed = 20260822
        "#
    ))
    .unwrap();
    let est = run_point(&cfg, 0).unwrap();
    let bers: Vec<(f64, f64)> = est.iter().map(|e| (e.ber, e.ci95)).collect();
    for t in 0..2 {
        let (a, ca) = bers[t];
        let (b, cb) = bers[t + 1];
        assert!(
            b <= a + ca.max(cb),
            "ball:{} ber {b:.5} above ball:{} ber {a:.5} beyond ci95 {:.5}",
            t + 2,
            t + 1,
            ca.max(cb)
        );
    }
    println!(
        "criterion 6: pass (ball 1/2/3 ber {:.4} >= {:.4} >= {:.4}, {BALL_TRIALS} paired trials)",
        bers[0].0, bers[1].0, bers[2].0
    );
}

#[test]
fn criterion_7_local_decisions_match_global_map_inside_percolation_bound() {
    let h = make_regular_ldpc(200, 3, 6, 11).unwrap();
    let basis = h.generator_basis();
    let chan = ChannelSpec::Bec { eps: 0.05 };
    let trials = 5_000usize;
    let mut mismatches = [0u64; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc7);
    for _ in 0..trials {
        let word = basis.sample_codeword(&mut rng);
        let received: Vec<_> = word.iter().map(|&b| chan.transmit(b, &mut rng)).collect();
        let lik = chan.word_likelihoods(&received).unwrap();
        let global = map_decode_bec_gauss(&h, &lik).unwrap();
        for t in 1..=5 {
            let local = local_map_ball_decode(&h, &lik, t).unwrap();
            for b in 0..h.n() {
                if local.decisions[b] != global.decisions[b] {
                    mismatches[t - 1] += 1;
                }
            }
        }
    }
    let bit_trials = (trials * h.n()) as f64;
    assert!(bit_trials >= 1e6);
    let mut report = String::new();
    for t in 1..=5 {
        let rate = mismatches[t - 1] as f64 / bit_trials;
        let bound = 0.15 * 0.5f64.powi(t as i32);
        assert!(
            rate <= bound,
            "local-vs-map mismatch rate {rate:.6} at radius {t} above bound {bound:.6}"
        );
        report.push_str(&format!(" t{t} {rate:.5}<={bound:.5}"));
    }
    println!("criterion 7: pass ({:.0} bit-trials,{report})", bit_trials);
}

#[test]
fn criterion_8_same_seed_reruns_are_byte_identical() {
    let text = r#"
        [code]
        kind = "golay"

        [channel]
        kind = "bec"
        noise = [0.3, 0.5]

        [[decoders]]
        kind = "bp"

        [[decoders]]
        kind = "tp"
        scheme = "bec:4"

        [sweep]
        trials = 500
        seed = 424242
        "#;
    let mut first = Vec::new();
    run_sweep(&parse_config(text).unwrap(), &mut first).unwrap();
    let mut second = Vec::new();
    run_sweep(&parse_config(text).unwrap(), &mut second).unwrap();
    assert!(!first.is_empty());
    assert_eq!(first, second, "rerun with the same seed changed the CSV");
    println!("criterion 8: pass ({} identical CSV bytes across reruns)", first.len());
}

#[test]
fn criterion_9_readme_states_the_desk_scale_limits() {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md"))
        .expect("workspace README.md");
    assert!(
        readme.contains("not reproducible at desk scale"),
        "README must state the published-curve limits"
    );
    assert!(
        readme.contains("ordering"),
        "README must point at the ordering/invariant substitutes"
    );
    println!("criterion 9: pass (README states desk-scale limits and the substitutes)");
}
