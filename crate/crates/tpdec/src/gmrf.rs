//! Generalized Markov random fields over spin pairs.
//!
//! A generalized MRF is a finite graph whose vertex weights and 2x2 edge
//! tables may be zero or negative; "generalized" marginals are the usual
//! weighted sums over configurations, which need not be probabilities until
//! normalized and can vanish or change sign along the way.
//!
//! The decoding application is the *dual* field of a binary linear code:
//! variable vertices carry channel likelihood pairs, check vertices carry
//! `(1, 1)`, and every Tanner edge carries the table `[[1, 1], [1, -1]]`
//! (value -1 exactly when both endpoints are 1). Summing that field over all
//! configurations weights each codeword's likelihood by `2^m` and kills every
//! non-codeword, so variable-vertex marginals are proportional to bitwise
//! posteriors.
//!
//! Magnitudes shrink geometrically with graph size, so all tree computations
//! run on [`WeightPair`]s: a signed mantissa pair with a shared power-of-two
//! exponent.

use crate::codes::ParityCheckMatrix;
use crate::{Error, Result};

/// Edge table of the dual field: `t[x_u][x_v]`, -1 iff both spins are 1.
pub const DUAL_EDGE_TABLE: [[f64; 2]; 2] = [[1.0, 1.0], [1.0, -1.0]];

/// A pair of signed values `(w0, w1) * 2^exp` with mantissas kept near 1.
///
/// Renormalization multiplies by exact powers of two only, so a `WeightPair`
/// represents its values without rounding; the pair `(0, 0)` is canonical
/// with exponent 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightPair {
    pub w0: f64,
    pub w1: f64,
    pub exp: i64,
}

impl WeightPair {
    pub fn new(w0: f64, w1: f64) -> Self {
        let mut p = WeightPair { w0, w1, exp: 0 };
        p.renormalize();
        p
    }

    pub fn from_pair(p: [f64; 2]) -> Self {
        Self::new(p[0], p[1])
    }

    /// Point mass on `bit`.
    pub fn indicator(bit: u8) -> Self {
        debug_assert!(bit <= 1);
        WeightPair {
            w0: f64::from(1 - bit),
            w1: f64::from(bit),
            exp: 0,
        }
    }

    pub fn zero() -> Self {
        WeightPair { w0: 0.0, w1: 0.0, exp: 0 }
    }

    pub fn is_zero(&self) -> bool {
        self.w0 == 0.0 && self.w1 == 0.0
    }

    /// Scales the larger mantissa magnitude into `[0.5, 2)` by exact factors
    /// of two. `(0, 0)` resets to exponent 0.
    pub fn renormalize(&mut self) {
        debug_assert!(self.w0.is_finite() && self.w1.is_finite());
        let mut m = self.w0.abs().max(self.w1.abs());
        if m == 0.0 {
            self.exp = 0;
            return;
        }
        while m >= 2.0 {
            self.w0 *= 0.5;
            self.w1 *= 0.5;
            m *= 0.5;
            self.exp += 1;
        }
        while m < 0.5 {
            self.w0 *= 2.0;
            self.w1 *= 2.0;
            m *= 2.0;
            self.exp -= 1;
        }
    }

    /// Pointwise product, the combination rule for independent child blocks.
    pub fn mul(&self, other: &WeightPair) -> WeightPair {
        let mut p = WeightPair {
            w0: self.w0 * other.w0,
            w1: self.w1 * other.w1,
            exp: self.exp + other.exp,
        };
        p.renormalize();
        p
    }

    /// Applies a 2x2 edge table: `out(x) = sum_y t[x][y] * w(y)`.
    pub fn apply_table(&self, t: &[[f64; 2]; 2]) -> WeightPair {
        let mut p = WeightPair {
            w0: t[0][0] * self.w0 + t[0][1] * self.w1,
            w1: t[1][0] * self.w0 + t[1][1] * self.w1,
            exp: self.exp,
        };
        p.renormalize();
        p
    }

    /// Specialization of [`apply_table`](Self::apply_table) to the dual edge:
    /// `(w0 + w1, w0 - w1)`.
    pub fn apply_dual_edge(&self) -> WeightPair {
        let mut p = WeightPair {
            w0: self.w0 + self.w1,
            w1: self.w0 - self.w1,
            exp: self.exp,
        };
        p.renormalize();
        p
    }

    /// Builds a pair from two separately scaled entries, aligning them to the
    /// larger exponent. An entry more than ~1000 binary orders below the
    /// other flushes to zero, far outside f64 precision anyway.
    pub fn from_scaled_entries(v0: f64, e0: i64, v1: f64, e1: i64) -> WeightPair {
        let scale = |v: f64, de: i64| -> f64 {
            if v == 0.0 || de > 1060 {
                0.0
            } else {
                v * f64::powi(2.0, -(de as i32))
            }
        };
        let (w0, w1, exp) = if v0 == 0.0 {
            (0.0, v1, e1)
        } else if v1 == 0.0 {
            (v0, 0.0, e0)
        } else if e0 >= e1 {
            (v0, scale(v1, e0 - e1), e0)
        } else {
            (scale(v0, e1 - e0), v1, e1)
        };
        let mut p = WeightPair { w0, w1, exp };
        p.renormalize();
        p
    }

    /// Normalized probabilities `(p0, p1)`; `(0.5, 0.5)` when the pair
    /// carries no mass. Intended for final marginals, where both entries are
    /// nonnegative up to rounding noise.
    pub fn to_probabilities(&self) -> [f64; 2] {
        let s = self.w0 + self.w1;
        if s == 0.0 {
            [0.5, 0.5]
        } else {
            [self.w0 / s, self.w1 / s]
        }
    }

    /// Hard decision: larger entry wins, ties (including `(0,0)`) give 0.
    pub fn decision(&self) -> u8 {
        u8::from(self.w1 > self.w0)
    }

    /// Relative gap between two pairs as distributions, ignoring scale.
    pub fn max_probability_gap(&self, other: &WeightPair) -> f64 {
        let a = self.to_probabilities();
        let b = other.to_probabilities();
        (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
    }
}

/// Role of a vertex in a dual field; `Plain` for fields built directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexTag {
    Variable(usize),
    Check(usize),
    Plain,
}

/// A generalized MRF: vertex weight pairs, tags, and an *ordered* neighbor
/// list per vertex with one oriented 2x2 table per incident edge.
///
/// Neighbor order is load-bearing: the walk-tree construction consumes edges
/// in list order, so two fields differing only in neighbor order define the
/// same distribution but different computation trees.
#[derive(Debug, Clone)]
pub struct GeneralizedMrf {
    weights: Vec<[f64; 2]>,
    tags: Vec<VertexTag>,
    adj: Vec<Vec<usize>>,
    /// `tables[v][i]` is oriented from `v`: `t[x_v][x_neighbor]`.
    tables: Vec<Vec<[[f64; 2]; 2]>>,
}

impl GeneralizedMrf {
    pub fn new(
        weights: Vec<[f64; 2]>,
        tags: Vec<VertexTag>,
        adj: Vec<Vec<usize>>,
        tables: Vec<Vec<[[f64; 2]; 2]>>,
    ) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::Invalid("field needs at least one vertex".into()));
        }
        if tags.len() != n || adj.len() != n || tables.len() != n {
            return Err(Error::Invalid("vertex arrays disagree in length".into()));
        }
        for (v, w) in weights.iter().enumerate() {
            if !(w[0].is_finite() && w[1].is_finite()) {
                return Err(Error::Invalid(format!("vertex {v} weight is not finite")));
            }
        }
        for v in 0..n {
            if adj[v].len() != tables[v].len() {
                return Err(Error::Invalid(format!(
                    "vertex {v} has {} neighbors but {} tables",
                    adj[v].len(),
                    tables[v].len()
                )));
            }
            let mut seen = vec![false; n];
            for (i, &u) in adj[v].iter().enumerate() {
                if u >= n {
                    return Err(Error::Invalid(format!("vertex {v} lists neighbor {u} >= {n}")));
                }
                if u == v {
                    return Err(Error::Invalid(format!("vertex {v} has a self-loop")));
                }
                if seen[u] {
                    return Err(Error::Invalid(format!("parallel edge between {v} and {u}")));
                }
                seen[u] = true;
                let t = &tables[v][i];
                if t.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::Invalid(format!("edge ({v}, {u}) table is not finite")));
                }
                // The reverse direction must exist and transpose to the same table.
                let Some(j) = adj[u].iter().position(|&w| w == v) else {
                    return Err(Error::Invalid(format!(
                        "edge ({v}, {u}) is missing its reverse direction"
                    )));
                };
                let r = &tables[u][j];
                for a in 0..2 {
                    for b in 0..2 {
                        if t[a][b] != r[b][a] {
                            return Err(Error::Invalid(format!(
                                "edge ({v}, {u}) tables are not transposes of each other"
                            )));
                        }
                    }
                }
            }
        }
        Ok(GeneralizedMrf { weights, tags, adj, tables })
    }

    pub fn n_vertices(&self) -> usize {
        self.weights.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn weight(&self, v: usize) -> [f64; 2] {
        self.weights[v]
    }

    pub fn weight_pair(&self, v: usize) -> WeightPair {
        WeightPair::from_pair(self.weights[v])
    }

    pub fn set_weight(&mut self, v: usize, w: [f64; 2]) {
        self.weights[v] = w;
    }

    pub fn tag(&self, v: usize) -> VertexTag {
        self.tags[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Neighbors of `v` in edge order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    /// Position of `u` in `v`'s edge order.
    pub fn neighbor_index(&self, v: usize, u: usize) -> Option<usize> {
        self.adj[v].iter().position(|&w| w == u)
    }

    /// Table of the `i`-th edge at `v`, oriented from `v`.
    pub fn table(&self, v: usize, i: usize) -> &[[f64; 2]; 2] {
        &self.tables[v][i]
    }

    /// True iff every vertex weight and table entry is strictly positive, the
    /// regime where ordinary sum-product applies directly.
    pub fn is_permissive(&self) -> bool {
        self.weights.iter().flatten().all(|&x| x > 0.0)
            && self.tables.iter().flatten().flatten().flatten().all(|&x| x > 0.0)
    }

    /// Copy with every neighbor list (and its tables) reversed. Same
    /// distribution, different computation trees.
    pub fn reversed_edge_order(&self) -> Self {
        let mut out = self.clone();
        for v in 0..out.adj.len() {
            out.adj[v].reverse();
            out.tables[v].reverse();
        }
        out
    }

    /// Unnormalized spin marginal of `v` by summation over all `2^N`
    /// configurations. Exact reference; refuses more than 24 vertices.
    pub fn vertex_marginal_bruteforce(&self, v: usize) -> Result<[f64; 2]> {
        let n = self.n_vertices();
        if n > 24 {
            return Err(Error::Budget { limit: 24 });
        }
        let mut z = [0.0f64; 2];
        for config in 0u32..1 << n {
            z[(config >> v & 1) as usize] += self.config_weight(config);
        }
        Ok(z)
    }

    /// Total weight (the generalized partition function), same guard.
    pub fn total_weight_bruteforce(&self) -> Result<f64> {
        let n = self.n_vertices();
        if n > 24 {
            return Err(Error::Budget { limit: 24 });
        }
        Ok((0u32..1 << n).map(|c| self.config_weight(c)).sum())
    }

    fn config_weight(&self, config: u32) -> f64 {
        let spin = |v: usize| (config >> v & 1) as usize;
        let mut w = 1.0;
        for v in 0..self.n_vertices() {
            w *= self.weights[v][spin(v)];
            if w == 0.0 {
                return 0.0;
            }
        }
        for v in 0..self.n_vertices() {
            for (i, &u) in self.adj[v].iter().enumerate() {
                if u > v {
                    w *= self.tables[v][i][spin(v)][spin(u)];
                }
            }
        }
        w
    }
}

/// Builds the dual field of a code under the given likelihood pairs:
/// vertices `0..n` are variables weighted by their likelihoods, `n..n+m` are
/// checks weighted `(1, 1)`, and each Tanner edge carries
/// [`DUAL_EDGE_TABLE`]. Neighbor lists are sorted by vertex index.
pub fn dualize(h: &ParityCheckMatrix, likelihoods: &[[f64; 2]]) -> Result<GeneralizedMrf> {
    let (n, m) = (h.n(), h.m());
    if likelihoods.len() != n {
        return Err(Error::Invalid(format!(
            "{} likelihood pairs for a length-{n} code",
            likelihoods.len()
        )));
    }
    for (i, l) in likelihoods.iter().enumerate() {
        if !(l[0].is_finite() && l[1].is_finite()) || l[0] < 0.0 || l[1] < 0.0 {
            return Err(Error::Invalid(format!("likelihood pair for bit {i} is invalid")));
        }
        if l[0] == 0.0 && l[1] == 0.0 {
            return Err(Error::Invalid(format!("likelihood pair for bit {i} is identically zero")));
        }
    }
    let mut weights: Vec<[f64; 2]> = likelihoods.to_vec();
    weights.extend(std::iter::repeat([1.0, 1.0]).take(m));
    let mut tags: Vec<VertexTag> = (0..n).map(VertexTag::Variable).collect();
    tags.extend((0..m).map(VertexTag::Check));
    let mut adj = vec![Vec::new(); n + m];
    for (a, row) in h.rows().iter().enumerate() {
        // Row supports are sorted, so both sides come out sorted.
        adj[n + a] = row.clone();
        for &i in row {
            adj[i].push(n + a);
        }
    }
    let tables = adj
        .iter()
        .map(|nb| vec![DUAL_EDGE_TABLE; nb.len()])
        .collect();
    GeneralizedMrf::new(weights, tags, adj, tables)
}

/// Cap on enumerated codewords in [`posterior_marginal_enumeration`].
const ENUMERATION_BUDGET: usize = 1 << 24;

/// Exact per-bit posterior marginals by summing the likelihood over every
/// codeword, in the log domain with a shared shift so that widely spread
/// weights still accumulate cleanly. Fails when the code has more than 2^24
/// codewords or no codeword has positive likelihood.
pub fn posterior_marginal_enumeration(
    h: &ParityCheckMatrix,
    likelihoods: &[[f64; 2]],
) -> Result<Vec<[f64; 2]>> {
    let n = h.n();
    if likelihoods.len() != n {
        return Err(Error::Invalid(format!(
            "{} likelihood pairs for a length-{n} code",
            likelihoods.len()
        )));
    }
    for (i, l) in likelihoods.iter().enumerate() {
        if !(l[0].is_finite() && l[1].is_finite()) || l[0] < 0.0 || l[1] < 0.0 {
            return Err(Error::Invalid(format!("likelihood pair for bit {i} is invalid")));
        }
    }
    let basis = h.generator_basis();
    if basis.k() >= 25 {
        return Err(Error::Budget { limit: ENUMERATION_BUDGET });
    }
    // ln of a zero likelihood is -inf, which drops the word from both passes
    // on its own; no special casing needed.
    let log_weight = |x: &[u8]| -> f64 {
        x.iter().enumerate().map(|(i, &b)| likelihoods[i][b as usize].ln()).sum()
    };
    let mut shift = f64::NEG_INFINITY;
    basis.for_each_codeword(|x| shift = shift.max(log_weight(x)));
    if shift == f64::NEG_INFINITY {
        return Err(Error::Invalid("no codeword is consistent with the evidence".into()));
    }
    let mut mass = vec![[0.0f64; 2]; n];
    let mut total = 0.0;
    basis.for_each_codeword(|x| {
        let w = (log_weight(x) - shift).exp();
        total += w;
        for (i, &b) in x.iter().enumerate() {
            mass[i][b as usize] += w;
        }
    });
    for p in &mut mass {
        p[0] /= total;
        p[1] /= total;
    }
    Ok(mass)
}
