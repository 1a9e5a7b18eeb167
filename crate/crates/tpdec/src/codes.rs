//! Binary linear codes: parity-check matrices, Tanner graphs and the small
//! amount of GF(2) linear algebra the decoders need.
//!
//! A code is given by an `m x n` parity-check matrix over GF(2), stored as
//! sorted row supports. Codewords are the words `x` with `H x = 0`.

use crate::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLAY_ALIST: &str = include_str!("../data/golay_23_12.alist");

/// Parity-check matrix over GF(2), stored as sorted column supports per row.
///
/// Rows must be nonempty and free of duplicate columns; `m = 0` (the whole
/// space as the code) is allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    n: usize,
    rows: Vec<Vec<usize>>,
}

impl ParityCheckMatrix {
    /// Builds a matrix from row supports. Rows are sorted; duplicate or
    /// out-of-range columns and empty rows are rejected.
    pub fn from_rows(n: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("code length must be positive".into()));
        }
        let mut sorted = rows;
        for (r, row) in sorted.iter_mut().enumerate() {
            if row.is_empty() {
                return Err(Error::Invalid(format!("row {r} is empty")));
            }
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Invalid(format!("row {r} has a duplicate column")));
            }
            if *row.last().unwrap() >= n {
                return Err(Error::Invalid(format!(
                    "row {r} references column {} in a length-{n} code",
                    row.last().unwrap()
                )));
            }
        }
        Ok(ParityCheckMatrix { n, rows: sorted })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// True iff `H x = 0`; `x` must have length `n` with 0/1 entries.
    pub fn is_codeword(&self, x: &[u8]) -> bool {
        assert_eq!(x.len(), self.n);
        self.rows
            .iter()
            .all(|row| row.iter().fold(0u8, |p, &c| p ^ (x[c] & 1)) == 0)
    }

    fn bit_rows(&self) -> Vec<Vec<u64>> {
        let words = self.n.div_ceil(64);
        self.rows
            .iter()
            .map(|row| {
                let mut w = vec![0u64; words];
                for &c in row {
                    w[c / 64] |= 1 << (c % 64);
                }
                w
            })
            .collect()
    }

    /// Rank over GF(2).
    pub fn rank(&self) -> usize {
        let mut rows = self.bit_rows();
        gf2_eliminate(&mut rows, self.n).len()
    }

    /// Basis of the nullspace, i.e. a generator matrix of the code.
    pub fn generator_basis(&self) -> GeneratorBasis {
        let mut rows = self.bit_rows();
        let pivots = gf2_eliminate(&mut rows, self.n);
        let words = self.n.div_ceil(64);
        let is_pivot = {
            let mut p = vec![false; self.n];
            for &c in &pivots {
                p[c] = true;
            }
            p
        };
        let mut basis = Vec::with_capacity(self.n - pivots.len());
        for f in 0..self.n {
            if is_pivot[f] {
                continue;
            }
            // Free column f set to 1, other free columns 0; pivot columns follow.
            let mut v = vec![0u64; words];
            v[f / 64] |= 1 << (f % 64);
            for (i, &p) in pivots.iter().enumerate() {
                if rows[i][f / 64] >> (f % 64) & 1 == 1 {
                    v[p / 64] |= 1 << (p % 64);
                }
            }
            basis.push(v);
        }
        GeneratorBasis { n: self.n, basis }
    }
}

/// Reduces `rows` to reduced row-echelon form in place and returns the pivot
/// columns in order. Zero rows sink to the bottom and are truncated away.
fn gf2_eliminate(rows: &mut Vec<Vec<u64>>, n: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut rank = 0;
    for col in 0..n {
        let (w, b) = (col / 64, col % 64);
        let Some(pivot) = (rank..rows.len()).find(|&i| rows[i][w] >> b & 1 == 1) else {
            continue;
        };
        rows.swap(rank, pivot);
        let pivot_row = rows[rank].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != rank && row[w] >> b & 1 == 1 {
                for (x, y) in row.iter_mut().zip(&pivot_row) {
                    *x ^= y;
                }
            }
        }
        pivots.push(col);
        rank += 1;
    }
    rows.truncate(rank);
    pivots
}

/// Basis of a code's codeword space, for sampling and exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct GeneratorBasis {
    n: usize,
    basis: Vec<Vec<u64>>,
}

impl GeneratorBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Code dimension `k`.
    pub fn k(&self) -> usize {
        self.basis.len()
    }

    /// Uniformly random codeword; the all-zero word when `k = 0`.
    pub fn sample_codeword<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let mut x = vec![0u8; self.n];
        for v in &self.basis {
            if rng.gen::<bool>() {
                xor_into(&mut x, v);
            }
        }
        x
    }

    /// Calls `f` once per codeword (all `2^k`), in Gray-code order starting
    /// from the all-zero word. The buffer is reused between calls.
    pub fn for_each_codeword<F: FnMut(&[u8])>(&self, mut f: F) {
        assert!(self.k() <= 28, "codeword enumeration capped at k = 28");
        let mut x = vec![0u8; self.n];
        f(&x);
        for s in 1u64..1 << self.k() {
            xor_into(&mut x, &self.basis[s.trailing_zeros() as usize]);
            f(&x);
        }
    }
}

fn xor_into(x: &mut [u8], v: &[u64]) {
    for (i, xi) in x.iter_mut().enumerate() {
        *xi ^= (v[i / 64] >> (i % 64) & 1) as u8;
    }
}

/// Bipartite adjacency view of a parity-check matrix: variable and check
/// vertices with sorted neighbor lists on both sides.
#[derive(Debug, Clone)]
pub struct TannerGraph {
    var_adj: Vec<Vec<usize>>,
    check_adj: Vec<Vec<usize>>,
}

impl TannerGraph {
    pub fn n(&self) -> usize {
        self.var_adj.len()
    }

    pub fn m(&self) -> usize {
        self.check_adj.len()
    }

    /// Checks containing variable `i`, ascending.
    pub fn var_neighbors(&self, i: usize) -> &[usize] {
        &self.var_adj[i]
    }

    /// Variables of check `a`, ascending.
    pub fn check_neighbors(&self, a: usize) -> &[usize] {
        &self.check_adj[a]
    }

    pub fn var_degree(&self, i: usize) -> usize {
        self.var_adj[i].len()
    }

    pub fn check_degree(&self, a: usize) -> usize {
        self.check_adj[a].len()
    }
}

/// Builds the Tanner graph of `h`.
pub fn build_tanner(h: &ParityCheckMatrix) -> TannerGraph {
    let mut var_adj = vec![Vec::new(); h.n()];
    for (a, row) in h.rows().iter().enumerate() {
        for &i in row {
            var_adj[i].push(a);
        }
    }
    // Rows are scanned in order, so the lists come out sorted.
    TannerGraph {
        var_adj,
        check_adj: h.rows().to_vec(),
    }
}

/// Length-`n` repetition code as a chain of two-variable checks
/// `{i, i+1}`, `i = 0..n-1`.
pub fn make_repetition(n: usize) -> Result<ParityCheckMatrix> {
    if n < 2 {
        return Err(Error::Invalid(format!("repetition code needs n >= 2, got {n}")));
    }
    ParityCheckMatrix::from_rows(n, (0..n - 1).map(|i| vec![i, i + 1]).collect())
}

/// Rate-1/2 tailbiting convolutional code with memory 2. Row `r` of the
/// circulant check matrix has support `{2r, 2r+1, 2r+3, 2r+4, 2r+5} mod n`.
pub fn make_tailbiting_conv(n: usize) -> Result<ParityCheckMatrix> {
    if n < 6 || n % 2 != 0 {
        return Err(Error::Invalid(format!(
            "tailbiting code needs even n >= 6, got {n}"
        )));
    }
    let rows = (0..n / 2)
        .map(|r| [0, 1, 3, 4, 5].iter().map(|&j| (2 * r + j) % n).collect())
        .collect();
    ParityCheckMatrix::from_rows(n, rows)
}

/// The (23, 12) binary Golay code, as a banded 11 x 23 check matrix built
/// from the quadratic-residue generator polynomial (shipped as data).
pub fn make_golay() -> ParityCheckMatrix {
    load_alist(GOLAY_ALIST).expect("embedded Golay matrix is valid")
}

/// Regular (dv, dc) LDPC code from the configuration model: `n * dv` variable
/// sockets paired uniformly with check sockets, deterministically from `seed`.
/// Parallel edges are repaired by bounded socket swaps, then by resampling the
/// whole pairing; persistent failure is an error.
pub fn make_regular_ldpc(n: usize, dv: usize, dc: usize, seed: u64) -> Result<ParityCheckMatrix> {
    if n == 0 || dv == 0 || dc < 2 {
        return Err(Error::Invalid("need n >= 1, dv >= 1, dc >= 2".into()));
    }
    if (n * dv) % dc != 0 {
        return Err(Error::Invalid(format!(
            "n*dv = {} is not divisible by dc = {dc}",
            n * dv
        )));
    }
    let m = n * dv / dc;
    let edges = n * dv;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // sockets[e] = variable of edge slot e; check of slot e is e / dc.
    let base: Vec<usize> = (0..edges).map(|e| e / dv).collect();
    for _resample in 0..100 {
        let mut sockets = base.clone();
        for i in (1..edges).rev() {
            sockets.swap(i, rng.gen_range(0..=i));
        }
        let mut ok = false;
        for _repair in 0..20 * edges {
            let Some(bad) = find_parallel_slot(&sockets, dc) else {
                ok = true;
                break;
            };
            let other = rng.gen_range(0..edges);
            sockets.swap(bad, other);
        }
        if ok {
            let mut rows = vec![Vec::with_capacity(dc); m];
            for (e, &v) in sockets.iter().enumerate() {
                rows[e / dc].push(v);
            }
            return ParityCheckMatrix::from_rows(n, rows);
        }
    }
    Err(Error::Invalid(format!(
        "could not remove parallel edges for ({n}, {dv}, {dc}) within the retry budget"
    )))
}

/// Index of some slot involved in a parallel edge, if any.
fn find_parallel_slot(sockets: &[usize], dc: usize) -> Option<usize> {
    for (a, chunk) in sockets.chunks(dc).enumerate() {
        for (j, &v) in chunk.iter().enumerate() {
            if chunk[..j].contains(&v) {
                return Some(a * dc + j);
            }
        }
    }
    None
}

/// Parses an alist-format matrix:
/// line 1 `n m`, line 2 `max_dv max_dc`, line 3 the `n` variable degrees,
/// line 4 the `m` check degrees, then `n` lines of 1-indexed check neighbors
/// and `m` lines of 1-indexed variable neighbors (no zero padding).
pub fn load_alist(text: &str) -> Result<ParityCheckMatrix> {
    let mut lines = text.lines().enumerate();
    let mut next_fields = |what: &str| -> Result<(usize, Vec<usize>)> {
        for (idx, raw) in lines.by_ref() {
            if raw.trim().is_empty() {
                continue;
            }
            let fields: std::result::Result<Vec<usize>, _> =
                raw.split_whitespace().map(str::parse).collect();
            return match fields {
                Ok(v) => Ok((idx + 1, v)),
                Err(_) => Err(Error::Alist {
                    line: idx + 1,
                    msg: format!("expected integers ({what})"),
                }),
            };
        }
        Err(Error::Alist {
            line: 0,
            msg: format!("file ended before {what}"),
        })
    };

    let (ln, dims) = next_fields("matrix dimensions")?;
    let [n, m] = dims[..] else {
        return Err(Error::Alist { line: ln, msg: "expected exactly `n m`".into() });
    };
    if n == 0 {
        return Err(Error::Alist { line: ln, msg: "n must be positive".into() });
    }
    let (ln, maxdeg) = next_fields("maximum degrees")?;
    let [max_dv, max_dc] = maxdeg[..] else {
        return Err(Error::Alist { line: ln, msg: "expected `max_dv max_dc`".into() });
    };
    let (ln_dv, dv) = next_fields("variable degrees")?;
    if dv.len() != n {
        return Err(Error::Alist {
            line: ln_dv,
            msg: format!("expected {n} variable degrees, found {}", dv.len()),
        });
    }
    let (ln_dc, dc) = next_fields("check degrees")?;
    if dc.len() != m {
        return Err(Error::Alist {
            line: ln_dc,
            msg: format!("expected {m} check degrees, found {}", dc.len()),
        });
    }
    if let Some(i) = dv.iter().position(|&d| d > max_dv) {
        return Err(Error::Alist {
            line: ln_dv,
            msg: format!("variable {} exceeds declared maximum degree {max_dv}", i + 1),
        });
    }
    if let Some(a) = dc.iter().position(|&d| d > max_dc) {
        return Err(Error::Alist {
            line: ln_dc,
            msg: format!("check {} exceeds declared maximum degree {max_dc}", a + 1),
        });
    }

    let mut var_adj: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let (ln, list) = next_fields("variable adjacency")?;
        if list.len() != dv[i] {
            return Err(Error::Alist {
                line: ln,
                msg: format!("variable {} should list {} checks, found {}", i + 1, dv[i], list.len()),
            });
        }
        for &a in &list {
            if a == 0 || a > m {
                return Err(Error::Alist {
                    line: ln,
                    msg: format!("check index {a} out of range 1..={m}"),
                });
            }
        }
        var_adj.push(list.iter().map(|&a| a - 1).collect());
    }
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(m);
    for a in 0..m {
        let (ln, list) = next_fields("check adjacency")?;
        if list.len() != dc[a] {
            return Err(Error::Alist {
                line: ln,
                msg: format!("check {} should list {} variables, found {}", a + 1, dc[a], list.len()),
            });
        }
        for &i in &list {
            if i == 0 || i > n {
                return Err(Error::Alist {
                    line: ln,
                    msg: format!("variable index {i} out of range 1..={n}"),
                });
            }
            if !var_adj[i - 1].contains(&a) {
                return Err(Error::Alist {
                    line: ln,
                    msg: format!(
                        "check {} lists variable {i}, but variable {i} does not list check {}",
                        a + 1,
                        a + 1
                    ),
                });
            }
        }
        rows.push(list.iter().map(|&i| i - 1).collect());
    }
    let edge_count: usize = rows.iter().map(Vec::len).sum();
    let var_edge_count: usize = var_adj.iter().map(Vec::len).sum();
    if edge_count != var_edge_count {
        return Err(Error::Alist {
            line: 0,
            msg: format!(
                "adjacency blocks disagree: {var_edge_count} edges on the variable side, {edge_count} on the check side"
            ),
        });
    }
    ParityCheckMatrix::from_rows(n, rows).map_err(|e| Error::Alist {
        line: 0,
        msg: e.to_string(),
    })
}

/// Serializes `h` in the alist format accepted by [`load_alist`].
pub fn save_alist(h: &ParityCheckMatrix) -> String {
    let graph = build_tanner(h);
    let (n, m) = (h.n(), h.m());
    let mut out = String::new();
    let max_dv = (0..n).map(|i| graph.var_degree(i)).max().unwrap_or(0);
    let max_dc = (0..m).map(|a| graph.check_degree(a)).max().unwrap_or(0);
    out.push_str(&format!("{n} {m}\n{max_dv} {max_dc}\n"));
    let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(" ");
    out.push_str(&join(&mut (0..n).map(|i| graph.var_degree(i).to_string())));
    out.push('\n');
    out.push_str(&join(&mut (0..m).map(|a| graph.check_degree(a).to_string())));
    out.push('\n');
    for i in 0..n {
        out.push_str(&join(&mut graph.var_neighbors(i).iter().map(|a| (a + 1).to_string())));
        out.push('\n');
    }
    for a in 0..m {
        out.push_str(&join(&mut graph.check_neighbors(a).iter().map(|i| (i + 1).to_string())));
        out.push('\n');
    }
    out
}
