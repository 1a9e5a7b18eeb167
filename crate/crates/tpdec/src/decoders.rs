//! Bitwise decoders over parity-check codes.
//!
//! The centerpiece is walk-tree marginalization: build the self-avoiding-walk
//! tree of the code's dual field at a bit, evaluate it leaves-to-root with
//! sibling blocks recombined through their boundary entries, and read the
//! root pair as the bit's marginal. On the full tree this is exact; the
//! truncation schemes trade exactness for tractable tree sizes.
//!
//! Reference decoders live alongside: loopy sum-product on the Tanner graph,
//! exact marginals by codeword enumeration, Gaussian elimination for erasure
//! channels (globally and restricted to a neighborhood of each bit), and a
//! four-state trellis sum for the tailbiting convolutional code.

use crate::codes::{build_tanner, make_tailbiting_conv, ParityCheckMatrix};
use crate::gmrf::{
    dualize, posterior_marginal_enumeration, GeneralizedMrf, VertexTag, WeightPair,
    DUAL_EDGE_TABLE,
};
use crate::sawtree::{ball_mask, build_saw_tree, NodeKind, SawTree, TruncationScheme};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeFlag {
    Ok,
    /// The decoder could not commit to a bit value; the decision defaults
    /// to 0.
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Normalized per-bit marginals.
    pub marginals: Vec<[f64; 2]>,
    /// Arg-max decisions; ties and ambiguous bits report 0.
    pub decisions: Vec<u8>,
    pub flags: Vec<DecodeFlag>,
}

impl DecodeOutput {
    fn with_capacity(n: usize) -> Self {
        DecodeOutput {
            marginals: Vec::with_capacity(n),
            decisions: Vec::with_capacity(n),
            flags: Vec::with_capacity(n),
        }
    }

    fn push_pair(&mut self, p: &WeightPair) {
        if p.is_zero() {
            self.push_ambiguous();
            return;
        }
        self.marginals.push(p.to_probabilities());
        self.decisions.push(p.decision());
        self.flags.push(if p.w0 == p.w1 { DecodeFlag::Ambiguous } else { DecodeFlag::Ok });
    }

    fn push_point(&mut self, b: u8) {
        let mut m = [0.0, 0.0];
        m[b as usize] = 1.0;
        self.marginals.push(m);
        self.decisions.push(b);
        self.flags.push(DecodeFlag::Ok);
    }

    fn push_ambiguous(&mut self) {
        self.marginals.push([0.5, 0.5]);
        self.decisions.push(0);
        self.flags.push(DecodeFlag::Ambiguous);
    }
}

/// Per-bit channel knowledge on an erasure channel: `Some(b)` for a known
/// bit, `None` for an erased one. `None` overall when any pair is not
/// erasure-shaped.
fn erasure_values(likelihoods: &[[f64; 2]]) -> Option<Vec<Option<u8>>> {
    let mut out = Vec::with_capacity(likelihoods.len());
    for &[w0, w1] in likelihoods {
        if w0 < 0.0 || w1 < 0.0 || (w0 == 0.0 && w1 == 0.0) {
            return None;
        }
        out.push(if w1 == 0.0 {
            Some(0)
        } else if w0 == 0.0 {
            Some(1)
        } else if w0 == w1 {
            None
        } else {
            return None;
        });
    }
    Some(out)
}

fn pow2(k: i64) -> f64 {
    (k as f64).exp2()
}

/// Closeness of two scaled entries, used by the debug-build check of the
/// block boundary identity. Entries come from renormalized pairs, so `2^e`
/// bounds each pair's magnitude; comparing at that scale lets the rounding
/// residue of cancelled sums pass while structural mismatches, which are
/// order one relative to their pair, still trip it.
#[cfg(debug_assertions)]
fn scaled_entries_close(a: f64, ea: i64, b: f64, eb: i64) -> bool {
    let e = ea.max(eb);
    let av = a * pow2(ea - e);
    let bv = b * pow2(eb - e);
    (av - bv).abs() <= 1e-9 * av.abs().max(bv.abs()).max(0.5)
}

/// Leaves-to-root evaluation with block recombination: a node's pair is its
/// emission times, per block, the pair formed by the first member's 0-entry
/// and the last member's 1-entry (members aligned to a common scale).
/// Terminated leaves emit a bare indicator of their forced spin; forced
/// truncation leaves emit their potential masked by the indicator; all other
/// leaves emit their potential.
pub fn evaluate_tree(field: &GeneralizedMrf, tree: &SawTree) -> Result<WeightPair> {
    let nodes = tree.nodes();
    let mut value = vec![WeightPair::zero(); nodes.len()];
    // In exact schemes consecutive block members agree across their shared
    // boundary; truncation legitimately breaks this, so only assert it where
    // the tree is exact.
    #[cfg(debug_assertions)]
    let assert_identity =
        matches!(tree.scheme(), TruncationScheme::Full | TruncationScheme::Ball { .. });
    for id in (0..nodes.len()).rev() {
        let node = &nodes[id];
        let mut acc = match node.kind {
            NodeKind::Terminated { forced } => WeightPair::indicator(forced),
            NodeKind::TruncatedForced { forced } => {
                field.weight_pair(node.vertex).mul(&WeightPair::indicator(forced))
            }
            _ => field.weight_pair(node.vertex),
        };
        for block in &node.blocks {
            let hat = |c: usize| {
                value[c].apply_table(field.table(node.vertex, nodes[c].parent_edge_index))
            };
            let first = hat(block[0]);
            let bv = if block.len() == 1 {
                first
            } else {
                let last = hat(block[block.len() - 1]);
                #[cfg(debug_assertions)]
                if assert_identity {
                    let mut prev = first;
                    for &c in &block[1..] {
                        let cur = hat(c);
                        debug_assert!(
                            scaled_entries_close(prev.w1, prev.exp, cur.w0, cur.exp),
                            "adjacent block members disagree across their boundary"
                        );
                        prev = cur;
                    }
                }
                WeightPair::from_scaled_entries(first.w0, first.exp, last.w1, last.exp)
            };
            acc = acc.mul(&bv);
        }
        value[id] = acc;
    }
    Ok(value[0])
}

/// Same tree, ordinary sum-product semantics: every child contributes its
/// full edge-applied pair, blocks ignored. On strictly positive fields this
/// is proportional to [`evaluate_tree`]; used as a cross-check.
pub fn evaluate_tree_ordinary(field: &GeneralizedMrf, tree: &SawTree) -> Result<WeightPair> {
    let nodes = tree.nodes();
    let mut value = vec![WeightPair::zero(); nodes.len()];
    for id in (0..nodes.len()).rev() {
        let node = &nodes[id];
        let mut acc = match node.kind {
            NodeKind::Terminated { forced } => WeightPair::indicator(forced),
            NodeKind::TruncatedForced { forced } => {
                field.weight_pair(node.vertex).mul(&WeightPair::indicator(forced))
            }
            _ => field.weight_pair(node.vertex),
        };
        for &c in &node.children {
            let t = field.table(node.vertex, nodes[c].parent_edge_index);
            acc = acc.mul(&value[c].apply_table(t));
        }
        value[id] = acc;
    }
    Ok(value[0])
}

/// Ratio-form reference recursion for strictly positive fields: propagates
/// `w1 / w0` through each edge as a fractional update and multiplies child
/// ratios, with a block contributing the product of all its members. An
/// independent arithmetic path against the pair evaluator.
pub fn evaluate_tree_ratio(field: &GeneralizedMrf, tree: &SawTree) -> Result<f64> {
    if !field.is_permissive() {
        return Err(Error::Unsupported("ratio recursion needs strictly positive fields".into()));
    }
    let nodes = tree.nodes();
    let mut ratio = vec![0.0f64; nodes.len()];
    for id in (0..nodes.len()).rev() {
        let node = &nodes[id];
        let w = field.weight(node.vertex);
        let mut r = match node.kind {
            NodeKind::Terminated { forced } => {
                if forced == 1 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            NodeKind::TruncatedForced { forced } => {
                if forced == 1 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            _ => w[1] / w[0],
        };
        if !matches!(node.kind, NodeKind::Terminated { forced: 1 })
            && !matches!(node.kind, NodeKind::TruncatedForced { forced: 1 })
        {
            for &c in &node.children {
                let t = field.table(node.vertex, nodes[c].parent_edge_index);
                let rc = ratio[c];
                // Edge update (t01 + t11 r) / (t00 + t10 r), taken in the
                // limit for a child pinned to spin 1.
                let edge = if rc.is_infinite() {
                    t[1][1] / t[0][1]
                } else {
                    (t[1][0] + t[1][1] * rc) / (t[0][0] + t[0][1] * rc)
                };
                r *= edge;
            }
        }
        ratio[id] = r;
    }
    Ok(ratio[0])
}

/// Root marginal pair of the walk tree for one bit. Small fields run on the
/// stack-only fused walker; everything else materializes the tree.
pub fn tp_bit_marginal(
    field: &GeneralizedMrf,
    root: usize,
    scheme: TruncationScheme,
    max_nodes: usize,
) -> Result<WeightPair> {
    if crate::fastwalk::supports(field, scheme) {
        return crate::fastwalk::bit_marginal(field, root, scheme, max_nodes);
    }
    let tree = build_saw_tree(field, root, scheme, max_nodes)?;
    evaluate_tree(field, &tree)
}

/// Walk-tree decoding of every bit under the given truncation scheme.
///
/// A root pair with no mass is an inconsistency error for the exact schemes
/// (full and neighborhood trees) and an ambiguous bit for the approximate
/// ones. On erasure-shaped likelihoods the neighborhood scheme is computed
/// through an equivalent conditioned core field, which keeps its trees small.
pub fn tp_decode(
    h: &ParityCheckMatrix,
    likelihoods: &[[f64; 2]],
    scheme: TruncationScheme,
    max_nodes: usize,
) -> Result<DecodeOutput> {
    let field = dualize(h, likelihoods)?;
    if let TruncationScheme::Ball { t } = scheme {
        if let Some(known) = erasure_values(likelihoods) {
            return tp_ball_erasure(h, &field, &known, t, max_nodes);
        }
    }
    let mut out = DecodeOutput::with_capacity(h.n());
    for i in 0..h.n() {
        let pair = tp_bit_marginal(&field, i, scheme, max_nodes)?;
        if pair.is_zero()
            && matches!(scheme, TruncationScheme::Full | TruncationScheme::Ball { .. })
        {
            return Err(Error::Invalid(format!(
                "evidence leaves no consistent assignment at bit {i}"
            )));
        }
        out.push_pair(&pair);
    }
    Ok(out)
}

/// Exact neighborhood decoding on an erasure channel: condition on every
/// known bit, peel degree-one checks to a fixpoint, and run the full walk
/// tree only on the remaining core.
fn tp_ball_erasure(
    h: &ParityCheckMatrix,
    field: &GeneralizedMrf,
    known: &[Option<u8>],
    t: usize,
    max_nodes: usize,
) -> Result<DecodeOutput> {
    let mut out = DecodeOutput::with_capacity(h.n());
    for i in 0..h.n() {
        if let Some(b) = known[i] {
            out.push_point(b);
            continue;
        }
        let mask = ball_mask(field, i, t)?;
        match peel_ball(h, known, &mask, i)? {
            BallCore::Forced(b) => out.push_point(b),
            BallCore::Open { core, root } => {
                let pair = tp_bit_marginal(&core, root, TruncationScheme::Full, max_nodes)?;
                if pair.is_zero() {
                    return Err(Error::Invalid(format!(
                        "evidence leaves no consistent assignment at bit {i}"
                    )));
                }
                out.push_pair(&pair);
            }
        }
    }
    Ok(out)
}

enum BallCore {
    Forced(u8),
    Open { core: GeneralizedMrf, root: usize },
}

/// Condition the checks interior to the masked neighborhood on known bits and
/// peel: a check with one unknown bit pins it, a check with none must balance.
/// What survives is a field of unknown bits and sign-folded checks whose root
/// marginal equals the neighborhood-restricted posterior.
fn peel_ball(
    h: &ParityCheckMatrix,
    known: &[Option<u8>],
    mask: &[bool],
    root: usize,
) -> Result<BallCore> {
    let n = h.n();
    let mut value: Vec<Option<u8>> = known.to_vec();
    let interior: Vec<usize> = (0..h.m()).filter(|&a| mask[n + a]).collect();
    let mut unknown_deg = vec![0usize; interior.len()];
    let mut parity = vec![0u8; interior.len()];
    let mut checks_of_var: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (ci, &a) in interior.iter().enumerate() {
        for &v in &h.rows()[a] {
            match value[v] {
                Some(b) => parity[ci] ^= b,
                None => {
                    unknown_deg[ci] += 1;
                    checks_of_var[v].push(ci);
                }
            }
        }
    }
    let mut queue: Vec<usize> =
        (0..interior.len()).filter(|&ci| unknown_deg[ci] <= 1).collect();
    let mut retired = vec![false; interior.len()];
    while let Some(ci) = queue.pop() {
        if retired[ci] {
            continue;
        }
        match unknown_deg[ci] {
            0 => {
                if parity[ci] != 0 {
                    return Err(Error::Invalid(
                        "evidence is inconsistent with the code".into(),
                    ));
                }
                retired[ci] = true;
            }
            1 => {
                let a = interior[ci];
                let v = *h.rows()[a]
                    .iter()
                    .find(|&&v| value[v].is_none())
                    .expect("a check with one unknown has an unknown");
                let b = parity[ci];
                value[v] = Some(b);
                retired[ci] = true;
                for &cj in &checks_of_var[v] {
                    if retired[cj] {
                        continue;
                    }
                    unknown_deg[cj] -= 1;
                    parity[cj] ^= b;
                    if unknown_deg[cj] <= 1 {
                        queue.push(cj);
                    }
                }
            }
            _ => {}
        }
    }
    if let Some(b) = value[root] {
        return Ok(BallCore::Forced(b));
    }

    // Assemble the core: unknown masked variables plus live checks, with each
    // check's weight carrying the sign of its conditioned parity.
    let core_vars: Vec<usize> =
        (0..n).filter(|&v| mask[v] && value[v].is_none()).collect();
    let var_id: Vec<Option<usize>> = {
        let mut m = vec![None; n];
        for (idx, &v) in core_vars.iter().enumerate() {
            m[v] = Some(idx);
        }
        m
    };
    let live: Vec<usize> =
        (0..interior.len()).filter(|&ci| !retired[ci] && unknown_deg[ci] >= 2).collect();
    let nv = core_vars.len();
    let total = nv + live.len();
    let mut weights = vec![[1.0, 1.0]; total];
    let mut tags = Vec::with_capacity(total);
    let mut adj = vec![Vec::new(); total];
    for &v in &core_vars {
        tags.push(VertexTag::Variable(v));
    }
    for (k, &ci) in live.iter().enumerate() {
        tags.push(VertexTag::Check(interior[ci]));
        weights[nv + k] = [1.0, if parity[ci] == 1 { -1.0 } else { 1.0 }];
        for &v in &h.rows()[interior[ci]] {
            if let Some(idx) = var_id[v] {
                adj[nv + k].push(idx);
                adj[idx].push(nv + k);
            }
        }
    }
    let tables = adj.iter().map(|l| vec![DUAL_EDGE_TABLE; l.len()]).collect();
    let core = GeneralizedMrf::new(weights, tags, adj, tables)?;
    let root = var_id[root].expect("unknown root is a core variable");
    Ok(BallCore::Open { core, root })
}

/// Flooding sum-product on the Tanner graph. Messages are normalized pairs;
/// iteration stops when the largest message change drops below 1e-9 or after
/// `max_iters` rounds. Zero iterations reproduce the channel decisions.
pub fn bp_decode(
    h: &ParityCheckMatrix,
    likelihoods: &[[f64; 2]],
    max_iters: usize,
) -> Result<DecodeOutput> {
    // Dualization is not needed here, but its validation is.
    dualize(h, likelihoods)?;
    let g = build_tanner(h);
    let (n, m) = (g.n(), g.m());
    // Edge storage indexed from the variable side; check-side traversal goes
    // through (variable, position) pairs precomputed per check.
    let mut offset = vec![0usize; n + 1];
    for i in 0..n {
        offset[i + 1] = offset[i] + g.var_degree(i);
    }
    let n_edges = offset[n];
    let mut check_slots: Vec<Vec<usize>> = vec![Vec::new(); m];
    for a in 0..m {
        for &i in g.check_neighbors(a) {
            let pos = g.var_neighbors(i).iter().position(|&x| x == a).unwrap();
            check_slots[a].push(offset[i] + pos);
        }
    }
    let mut var_to_check = vec![[0.5f64, 0.5]; n_edges];
    let mut check_to_var = vec![[0.5f64, 0.5]; n_edges];

    for _ in 0..max_iters {
        let mut delta = 0.0f64;
        for i in 0..n {
            for j in 0..g.var_degree(i) {
                let mut p = likelihoods[i];
                for k in 0..g.var_degree(i) {
                    if k != j {
                        let m = check_to_var[offset[i] + k];
                        p = [p[0] * m[0], p[1] * m[1]];
                    }
                }
                let s = p[0] + p[1];
                let next = if s > 0.0 { [p[0] / s, p[1] / s] } else { [0.5, 0.5] };
                let e = offset[i] + j;
                delta = delta.max((next[0] - var_to_check[e][0]).abs());
                var_to_check[e] = next;
            }
        }
        for a in 0..m {
            let slots = &check_slots[a];
            for (j, &e) in slots.iter().enumerate() {
                let mut d = 1.0f64;
                for (k, &f) in slots.iter().enumerate() {
                    if k != j {
                        d *= var_to_check[f][0] - var_to_check[f][1];
                    }
                }
                let next = [(1.0 + d) / 2.0, (1.0 - d) / 2.0];
                delta = delta.max((next[0] - check_to_var[e][0]).abs());
                check_to_var[e] = next;
            }
        }
        if delta < 1e-9 {
            break;
        }
    }

    let mut out = DecodeOutput::with_capacity(n);
    for i in 0..n {
        let mut p = WeightPair::from_pair(likelihoods[i]);
        for k in 0..g.var_degree(i) {
            p = p.mul(&WeightPair::from_pair(check_to_var[offset[i] + k]));
        }
        out.push_pair(&p);
    }
    Ok(out)
}

/// Exact reference: marginals by summing over the codebook.
pub fn map_decode_enumeration(
    h: &ParityCheckMatrix,
    likelihoods: &[[f64; 2]],
) -> Result<DecodeOutput> {
    let marg = posterior_marginal_enumeration(h, likelihoods)?;
    let mut out = DecodeOutput::with_capacity(h.n());
    for p in marg {
        out.push_pair(&WeightPair::from_pair(p));
    }
    Ok(out)
}

/// Solve the GF(2) system `rows * x = rhs` and report, per column, the value
/// shared by all solutions, or `None` where solutions disagree. Fails when
/// the system is inconsistent.
fn solve_erasure_system(
    n_cols: usize,
    rows: &[(Vec<usize>, u8)],
) -> Result<Vec<Option<u8>>> {
    let words = n_cols / 64 + 1;
    // Last logical column carries the right-hand side.
    let mut mat: Vec<Vec<u64>> = rows
        .iter()
        .map(|(cols, rhs)| {
            let mut r = vec![0u64; words];
            for &c in cols {
                r[c / 64] ^= 1 << (c % 64);
            }
            if *rhs == 1 {
                r[n_cols / 64] ^= 1 << (n_cols % 64);
            }
            r
        })
        .collect();
    let mut pivot_of_row = Vec::new();
    let mut rank = 0;
    for col in 0..n_cols {
        let (w, b) = (col / 64, 1u64 << (col % 64));
        let Some(src) = (rank..mat.len()).find(|&r| mat[r][w] & b != 0) else {
            continue;
        };
        mat.swap(rank, src);
        for r in 0..mat.len() {
            if r != rank && mat[r][w] & b != 0 {
                let (head, tail) = mat.split_at_mut(rank.max(r));
                let (a, b_) = if r > rank {
                    (&head[rank], &mut tail[0])
                } else {
                    (&tail[0], &mut head[r])
                };
                for (x, y) in b_.iter_mut().zip(a.iter()) {
                    *x ^= *y;
                }
            }
        }
        pivot_of_row.push(col);
        rank += 1;
    }
    let rhs_bit = |row: &[u64]| -> u8 { ((row[n_cols / 64] >> (n_cols % 64)) & 1) as u8 };
    for row in &mat[rank..] {
        if rhs_bit(row) == 1 {
            return Err(Error::Invalid("evidence is inconsistent with the code".into()));
        }
    }
    let mut determined = vec![None; n_cols];
    for (r, &pc) in pivot_of_row.iter().enumerate() {
        let ones: usize = (0..n_cols)
            .filter(|&c| mat[r][c / 64] >> (c % 64) & 1 != 0)
            .take(2)
            .count();
        if ones == 1 {
            determined[pc] = Some(rhs_bit(&mat[r]));
        }
    }
    Ok(determined)
}

/// Exact erasure-channel decoding by elimination: condition the parity
/// system on known bits and solve for the erased ones. Bits whose value is
/// not shared by every solution come back ambiguous.
pub fn map_decode_bec_gauss(
    h: &ParityCheckMatrix,
    likelihoods: &[[f64; 2]],
) -> Result<DecodeOutput> {
    let known = erasure_values(likelihoods)
        .ok_or_else(|| Error::Unsupported("elimination needs erasure likelihoods".into()))?;
    let erased: Vec<usize> = (0..h.n()).filter(|&i| known[i].is_none()).collect();
    let col_of: Vec<Option<usize>> = {
        let mut m = vec![None; h.n()];
        for (c, &i) in erased.iter().enumerate() {
            m[i] = Some(c);
        }
        m
    };
    let rows: Vec<(Vec<usize>, u8)> = h
        .rows()
        .iter()
        .map(|row| {
            let mut cols = Vec::new();
            let mut rhs = 0u8;
            for &v in row {
                match known[v] {
                    Some(b) => rhs ^= b,
                    None => cols.push(col_of[v].unwrap()),
                }
            }
            (cols, rhs)
        })
        .collect();
    let determined = solve_erasure_system(erased.len(), &rows)?;
    let mut out = DecodeOutput::with_capacity(h.n());
    for i in 0..h.n() {
        match known[i] {
            Some(b) => out.push_point(b),
            None => match determined[col_of[i].unwrap()] {
                Some(b) => out.push_point(b),
                None => out.push_ambiguous(),
            },
        }
    }
    Ok(out)
}

/// Per-bit erasure decoding from local evidence only: each erased bit is
/// solved through the checks whose variables all lie within `t` check hops
/// of it. Known bits pass through.
pub fn local_map_ball_decode(
    h: &ParityCheckMatrix,
    likelihoods: &[[f64; 2]],
    t: usize,
) -> Result<DecodeOutput> {
    let known = erasure_values(likelihoods)
        .ok_or_else(|| Error::Unsupported("elimination needs erasure likelihoods".into()))?;
    let g = build_tanner(h);
    let n = h.n();
    let mut out = DecodeOutput::with_capacity(n);
    let mut dist = vec![usize::MAX; n];
    let mut touched = Vec::new();
    for i in 0..n {
        let Some(&b) = known[i].as_ref() else {
            // Variables within t hops.
            for &v in &touched {
                dist[v] = usize::MAX;
            }
            touched.clear();
            dist[i] = 0;
            touched.push(i);
            let mut frontier = vec![i];
            for d in 0..t {
                let mut next = Vec::new();
                for &u in &frontier {
                    for &a in g.var_neighbors(u) {
                        for &w in g.check_neighbors(a) {
                            if dist[w] == usize::MAX {
                                dist[w] = d + 1;
                                touched.push(w);
                                next.push(w);
                            }
                        }
                    }
                }
                frontier = next;
            }
            // Interior checks, conditioned on known bits.
            let mut cols_of = vec![None; n];
            let mut cols = Vec::new();
            let mut rows = Vec::new();
            for a in 0..h.m() {
                if g.check_neighbors(a).iter().any(|&v| dist[v] == usize::MAX) {
                    continue;
                }
                let mut rcols = Vec::new();
                let mut rhs = 0u8;
                for &v in g.check_neighbors(a) {
                    match known[v] {
                        Some(b) => rhs ^= b,
                        None => {
                            let c = *cols_of[v].get_or_insert_with(|| {
                                cols.push(v);
                                cols.len() - 1
                            });
                            rcols.push(c);
                        }
                    }
                }
                rows.push((rcols, rhs));
            }
            let root_col = cols_of[i].unwrap_or_else(|| {
                cols.push(i);
                cols.len() - 1
            });
            let determined = solve_erasure_system(cols.len(), &rows)?;
            match determined[root_col] {
                Some(b) => out.push_point(b),
                None => out.push_ambiguous(),
            }
            continue;
        };
        out.push_point(b);
    }
    Ok(out)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

/// Exact marginals for the tailbiting convolutional code through its
/// four-state trellis: one constrained forward-backward pass per possible
/// boundary state, summed in a shared scale. Each trellis step consumes one
/// information bit and emits code bits (u + u1 + u2, u + u2).
pub fn map_decode_tailbiting_bcjr(
    h: &ParityCheckMatrix,
    likelihoods: &[[f64; 2]],
) -> Result<DecodeOutput> {
    let n = h.n();
    let expected = make_tailbiting_conv(n)
        .map_err(|_| Error::Unsupported("trellis decoding needs the tailbiting code".into()))?;
    if h.rows() != expected.rows() {
        return Err(Error::Unsupported("trellis decoding needs the tailbiting code".into()));
    }
    if likelihoods.len() != n {
        return Err(Error::Invalid(format!("{} likelihood pairs for n = {n}", likelihoods.len())));
    }
    let steps = n / 2;
    let ll = |i: usize, b: u8| -> f64 { likelihoods[i][b as usize].ln() };
    // State encodes (u_{r-1}, u_{r-2}) as u1 * 2 + u2.
    let emit = |s: usize, u: u8| -> (u8, u8) {
        let (u1, u2) = ((s >> 1) as u8, (s & 1) as u8);
        (u ^ u1 ^ u2, u ^ u2)
    };
    let next = |s: usize, u: u8| -> usize { ((u as usize) << 1) | (s >> 1) };

    let neg = f64::NEG_INFINITY;
    let mut alphas = Vec::with_capacity(4);
    let mut betas = Vec::with_capacity(4);
    for boundary in 0..4 {
        let mut alpha = vec![[neg; 4]; steps + 1];
        alpha[0][boundary] = 0.0;
        for r in 0..steps {
            for s in 0..4 {
                if alpha[r][s] == neg {
                    continue;
                }
                for u in 0..2u8 {
                    let (b1, b2) = emit(s, u);
                    let g = ll(2 * r, b1) + ll(2 * r + 1, b2);
                    let t = next(s, u);
                    alpha[r + 1][t] = log_sum_exp(alpha[r + 1][t], alpha[r][s] + g);
                }
            }
        }
        let mut beta = vec![[neg; 4]; steps + 1];
        beta[steps][boundary] = 0.0;
        for r in (0..steps).rev() {
            for s in 0..4 {
                for u in 0..2u8 {
                    let (b1, b2) = emit(s, u);
                    let g = ll(2 * r, b1) + ll(2 * r + 1, b2);
                    let t = next(s, u);
                    if beta[r + 1][t] != neg {
                        beta[r][s] = log_sum_exp(beta[r][s], g + beta[r + 1][t]);
                    }
                }
            }
        }
        alphas.push(alpha);
        betas.push(beta);
    }

    let mut contribs: Vec<(usize, u8, u8, f64)> = Vec::new();
    for boundary in 0..4 {
        let (alpha, beta) = (&alphas[boundary], &betas[boundary]);
        for r in 0..steps {
            for s in 0..4 {
                if alpha[r][s] == neg {
                    continue;
                }
                for u in 0..2u8 {
                    let (b1, b2) = emit(s, u);
                    let g = ll(2 * r, b1) + ll(2 * r + 1, b2);
                    let t = next(s, u);
                    if beta[r + 1][t] == neg {
                        continue;
                    }
                    contribs.push((r, b1, b2, alpha[r][s] + g + beta[r + 1][t]));
                }
            }
        }
    }
    let shift = contribs.iter().map(|c| c.3).fold(neg, f64::max);
    if shift == neg {
        return Err(Error::Invalid("no codeword is consistent with the evidence".into()));
    }
    let mut mass = vec![[0.0f64; 2]; n];
    for &(r, b1, b2, l) in &contribs {
        let w = (l - shift).exp();
        mass[2 * r][b1 as usize] += w;
        mass[2 * r + 1][b2 as usize] += w;
    }
    let mut out = DecodeOutput::with_capacity(n);
    for p in mass {
        out.push_pair(&WeightPair::from_pair(p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelSpec;
    use crate::codes::{make_golay, make_regular_ldpc, make_repetition};
    use crate::sawtree::DEFAULT_NODE_BUDGET;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_sparse_code(rng: &mut ChaCha8Rng, n_max: usize) -> ParityCheckMatrix {
        loop {
            let n = rng.gen_range(2..=n_max);
            let m = rng.gen_range(1..=3.min(n));
            let mut rows = Vec::new();
            for _ in 0..m {
                let deg = rng.gen_range(1..=3.min(n));
                let mut row: Vec<usize> = (0..n).collect();
                row.shuffle(rng);
                row.truncate(deg);
                rows.push(row);
            }
            if let Ok(h) = ParityCheckMatrix::from_rows(n, rows) {
                return h;
            }
        }
    }

    fn random_likelihoods(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| match rng.gen_range(0..5) {
                0 => [1.0, 0.0],
                1 => [0.0, 1.0],
                2 => [0.4, 0.4],
                _ => [rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)],
            })
            .collect()
    }

    fn close(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
    }

    /// The decisive check: on the complete tree the root pair reproduces the
    /// brute-force marginal of its field vertex, with the structural forcing
    /// rule at terminated leaves doing the work.
    #[test]
    fn full_tree_marginals_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7ee5);
        let mut nontrivial = 0;
        for trial in 0..60 {
            let h = random_sparse_code(&mut rng, 6);
            let lik = random_likelihoods(&mut rng, h.n());
            let field = match dualize(&h, &lik) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let enumerated = match posterior_marginal_enumeration(&h, &lik) {
                Ok(m) => m,
                Err(Error::Invalid(_)) => continue,
                Err(e) => panic!("trial {trial}: {e}"),
            };
            for i in 0..h.n() {
                let pair = tp_bit_marginal(&field, i, TruncationScheme::Full, 1 << 22)
                    .unwrap_or_else(|e| panic!("trial {trial} bit {i}: {e}"));
                let z = field.vertex_marginal_bruteforce(i).unwrap();
                let total = z[0] + z[1];
                assert!(total > 0.0);
                let got = pair.to_probabilities();
                assert!(
                    close(got, [z[0] / total, z[1] / total], 1e-9),
                    "trial {trial} bit {i}: {got:?} vs brute {z:?}"
                );
                assert!(
                    close(got, enumerated[i], 1e-9),
                    "trial {trial} bit {i}: {got:?} vs enumeration {:?}",
                    enumerated[i]
                );
            }
            nontrivial += 1;
        }
        assert!(nontrivial >= 40, "only {nontrivial} consistent trials");
    }

    #[test]
    fn full_tree_unnormalized_calibration_on_the_triple_cycle() {
        // All three pairwise checks over three erased bits; by hand the root
        // pair is (8 eps^3, 8 eps^3) per spin: 2^m times the codeword sum.
        let h =
            ParityCheckMatrix::from_rows(3, vec![vec![0, 1], vec![1, 2], vec![0, 2]]).unwrap();
        let eps = 0.3;
        let field = dualize(&h, &[[eps, eps]; 3]).unwrap();
        let pair = tp_bit_marginal(&field, 0, TruncationScheme::Full, 1000).unwrap();
        let expect = 8.0 * eps * eps * eps;
        let scale = pow2(pair.exp);
        assert!((pair.w0 * scale - expect).abs() < 1e-15);
        assert!((pair.w1 * scale - expect).abs() < 1e-15);
    }

    #[test]
    fn permissive_fields_agree_across_all_three_recursions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xfac7);
        for trial in 0..20 {
            let n = rng.gen_range(3..=7);
            let mut edges = Vec::new();
            for v in 1..n {
                edges.push((rng.gen_range(0..v), v));
            }
            for _ in 0..rng.gen_range(0..=2) {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if a != b && !edges.contains(&(a.min(b), a.max(b))) {
                    edges.push((a.min(b), a.max(b)));
                }
            }
            let mut adj = vec![Vec::new(); n];
            for &(a, b) in &edges {
                adj[a].push(b);
                adj[b].push(a);
            }
            for l in &mut adj {
                l.sort_unstable();
            }
            let weights: Vec<[f64; 2]> =
                (0..n).map(|_| [rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)]).collect();
            let mut table_of = std::collections::HashMap::new();
            for &(a, b) in &edges {
                let t: [[f64; 2]; 2] = [
                    [rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)],
                    [rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)],
                ];
                table_of.insert((a, b), t);
            }
            let tables: Vec<Vec<[[f64; 2]; 2]>> = (0..n)
                .map(|v| {
                    adj[v]
                        .iter()
                        .map(|&u| {
                            if let Some(t) = table_of.get(&(v, u)) {
                                *t
                            } else {
                                let t = table_of[&(u, v)];
                                [[t[0][0], t[1][0]], [t[0][1], t[1][1]]]
                            }
                        })
                        .collect()
                })
                .collect();
            let field = GeneralizedMrf::new(
                weights,
                vec![VertexTag::Plain; n],
                adj,
                tables,
            )
            .unwrap();
            assert!(field.is_permissive());
            for root in 0..n {
                let tree =
                    build_saw_tree(&field, root, TruncationScheme::Full, 1 << 22).unwrap();
                let blocked = evaluate_tree(&field, &tree).unwrap().to_probabilities();
                let ordinary =
                    evaluate_tree_ordinary(&field, &tree).unwrap().to_probabilities();
                assert!(
                    close(blocked, ordinary, 1e-9),
                    "trial {trial} root {root}: {blocked:?} vs {ordinary:?}"
                );
                let ratio = evaluate_tree_ratio(&field, &tree).unwrap();
                let from_ratio = [1.0 / (1.0 + ratio), ratio / (1.0 + ratio)];
                assert!(
                    close(blocked, from_ratio, 1e-9),
                    "trial {trial} root {root}: {blocked:?} vs ratio {from_ratio:?}"
                );
                let z = field.vertex_marginal_bruteforce(root).unwrap();
                let t = z[0] + z[1];
                assert!(close(blocked, [z[0] / t, z[1] / t], 1e-9));
            }
        }
    }

    #[test]
    fn scale_and_edge_order_do_not_change_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1e);
        for _ in 0..20 {
            let h = random_sparse_code(&mut rng, 5);
            let lik = random_likelihoods(&mut rng, h.n());
            let Ok(field) = dualize(&h, &lik) else { continue };
            let scaled: Vec<[f64; 2]> = lik
                .iter()
                .map(|l| {
                    let s = rng.gen_range(0.1..10.0);
                    [l[0] * s, l[1] * s]
                })
                .collect();
            let field2 = dualize(&h, &scaled).unwrap();
            let reversed = field.reversed_edge_order();
            for i in 0..h.n() {
                let a = tp_bit_marginal(&field, i, TruncationScheme::Full, 1 << 22);
                let (Ok(a),) = (a,) else { continue };
                if a.is_zero() {
                    continue;
                }
                let b =
                    tp_bit_marginal(&field2, i, TruncationScheme::Full, 1 << 22).unwrap();
                let c =
                    tp_bit_marginal(&reversed, i, TruncationScheme::Full, 1 << 22).unwrap();
                assert!(close(a.to_probabilities(), b.to_probabilities(), 1e-12));
                assert!(close(a.to_probabilities(), c.to_probabilities(), 1e-9));
            }
        }
    }

    #[test]
    fn duplicate_checks_do_not_change_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xd0bb1e);
        for _ in 0..10 {
            let h = random_sparse_code(&mut rng, 5);
            let mut rows = h.rows().to_vec();
            rows.push(rows[rng.gen_range(0..rows.len())].clone());
            let doubled = ParityCheckMatrix::from_rows(h.n(), rows).unwrap();
            let lik = random_likelihoods(&mut rng, h.n());
            let (Ok(f1), Ok(f2)) = (dualize(&h, &lik), dualize(&doubled, &lik)) else {
                continue;
            };
            for i in 0..h.n() {
                let a = tp_bit_marginal(&f1, i, TruncationScheme::Full, 1 << 22).unwrap();
                let b = tp_bit_marginal(&f2, i, TruncationScheme::Full, 1 << 22).unwrap();
                if a.is_zero() || b.is_zero() {
                    continue;
                }
                assert!(close(a.to_probabilities(), b.to_probabilities(), 1e-9));
            }
        }
    }

    #[test]
    fn depth_zero_truncation_returns_the_channel() {
        let h = make_golay();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lik: Vec<[f64; 2]> =
            (0..23).map(|_| [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)]).collect();
        let out = tp_decode(&h, &lik, TruncationScheme::FixedDepth { t: 0 }, 1000).unwrap();
        for i in 0..23 {
            let s = lik[i][0] + lik[i][1];
            assert!(close(out.marginals[i], [lik[i][0] / s, lik[i][1] / s], 1e-12));
        }
    }

    #[test]
    fn contradictory_evidence_is_an_error_only_for_exact_schemes() {
        let h = make_repetition(3).unwrap();
        // Bits 0 and 1 observed with opposite values.
        let lik = [[1.0, 0.0], [0.0, 1.0], [0.4, 0.4]];
        let err = tp_decode(&h, &lik, TruncationScheme::Full, 1000).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
        // Under a shallow cut the contradiction is out of sight for bit 2 but
        // annihilates the root pair of bit 0: ambiguous, not an error.
        let out = tp_decode(&h, &lik, TruncationScheme::FixedDepth { t: 1 }, 1000).unwrap();
        assert_eq!(out.flags[0], DecodeFlag::Ambiguous);
        assert!(close(out.marginals[0], [0.5, 0.5], 0.0));
    }

    #[test]
    fn adaptive_truncation_decodes_the_repetition_chain() {
        let h = make_repetition(5).unwrap();
        let eps = 0.4;
        let mut lik = vec![[eps, eps]; 5];
        lik[2] = [0.0, 1.0 - eps];
        let out = tp_decode(&h, &lik, TruncationScheme::BecAdaptive { t: 5 }, 10_000).unwrap();
        assert_eq!(out.decisions, vec![1; 5]);
        assert!(out.flags.iter().all(|&f| f == DecodeFlag::Ok));
        // Fully erased word: everything ambiguous.
        let blank = tp_decode(&h, &vec![[eps, eps]; 5], TruncationScheme::BecAdaptive { t: 5 }, 10_000)
            .unwrap();
        assert!(blank.flags.iter().all(|&f| f == DecodeFlag::Ambiguous));
    }

    #[test]
    fn bp_is_exact_on_cycle_free_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xb9);
        let h = make_repetition(6).unwrap();
        for _ in 0..20 {
            let lik = random_likelihoods(&mut rng, 6);
            let (Ok(bp), Ok(map)) =
                (bp_decode(&h, &lik, 400), map_decode_enumeration(&h, &lik))
            else {
                continue;
            };
            for i in 0..6 {
                assert!(
                    close(bp.marginals[i], map.marginals[i], 1e-7),
                    "bit {i}: {:?} vs {:?}",
                    bp.marginals[i],
                    map.marginals[i]
                );
            }
        }
    }

    #[test]
    fn bp_with_no_iterations_reports_the_channel() {
        let h = make_golay();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lik: Vec<[f64; 2]> =
            (0..23).map(|_| [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)]).collect();
        let out = bp_decode(&h, &lik, 0).unwrap();
        for i in 0..23 {
            let s = lik[i][0] + lik[i][1];
            assert!(close(out.marginals[i], [lik[i][0] / s, lik[i][1] / s], 1e-12));
        }
    }

    #[test]
    fn elimination_matches_enumeration_on_erasures() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6a55);
        for trial in 0..200 {
            let h = random_sparse_code(&mut rng, 10);
            let eps = rng.gen_range(0.2..0.8);
            let basis = h.generator_basis();
            let word = basis.sample_codeword(&mut rng);
            let lik: Vec<[f64; 2]> = word
                .iter()
                .map(|&b| {
                    if rng.gen_bool(eps) {
                        [0.3, 0.3]
                    } else if b == 0 {
                        [0.7, 0.0]
                    } else {
                        [0.0, 0.7]
                    }
                })
                .collect();
            let gauss = map_decode_bec_gauss(&h, &lik).unwrap();
            let map = map_decode_enumeration(&h, &lik).unwrap();
            for i in 0..h.n() {
                assert_eq!(gauss.flags[i], map.flags[i], "trial {trial} bit {i}");
                assert_eq!(gauss.decisions[i], map.decisions[i], "trial {trial} bit {i}");
                assert!(close(gauss.marginals[i], map.marginals[i], 1e-12));
            }
        }
    }

    #[test]
    fn trellis_decoding_matches_enumeration() {
        let h = make_tailbiting_conv(10).unwrap();
        let chan = ChannelSpec::Bawgn { sigma2: 0.8 };
        let mut rng = ChaCha8Rng::seed_from_u64(0xbc12);
        let basis = h.generator_basis();
        for trial in 0..20 {
            let word = basis.sample_codeword(&mut rng);
            let lik: Vec<[f64; 2]> = word
                .iter()
                .map(|&b| {
                    let y = chan.transmit(b, &mut rng);
                    chan.likelihood(y).unwrap()
                })
                .collect();
            let trellis = map_decode_tailbiting_bcjr(&h, &lik).unwrap();
            let map = map_decode_enumeration(&h, &lik).unwrap();
            for i in 0..10 {
                assert!(
                    close(trellis.marginals[i], map.marginals[i], 1e-10),
                    "trial {trial} bit {i}: {:?} vs {:?}",
                    trellis.marginals[i],
                    map.marginals[i]
                );
            }
        }
        let wrong = make_repetition(4).unwrap();
        assert!(matches!(
            map_decode_tailbiting_bcjr(&wrong, &[[0.5, 0.5]; 4]),
            Err(Error::Unsupported(_))
        ));
    }

    fn erasure_likelihoods(
        rng: &mut ChaCha8Rng,
        word: &[u8],
        eps: f64,
    ) -> Vec<[f64; 2]> {
        word.iter()
            .map(|&b| {
                if rng.gen_bool(eps) {
                    [eps, eps]
                } else if b == 0 {
                    [1.0 - eps, 0.0]
                } else {
                    [0.0, 1.0 - eps]
                }
            })
            .collect()
    }

    #[test]
    fn neighborhood_decoding_agrees_across_implementations() {
        // The conditioned-core fast path and per-bit elimination must tell
        // the same story on erasure data.
        let mut rng = ChaCha8Rng::seed_from_u64(0xba11);
        let h = make_regular_ldpc(12, 3, 6, 33).unwrap();
        let basis = h.generator_basis();
        for trial in 0..15 {
            let word = basis.sample_codeword(&mut rng);
            let lik = erasure_likelihoods(&mut rng, &word, 0.45);
            for t in [1, 2] {
                let fast =
                    tp_decode(&h, &lik, TruncationScheme::Ball { t }, DEFAULT_NODE_BUDGET)
                        .unwrap();
                let local = local_map_ball_decode(&h, &lik, t).unwrap();
                for i in 0..h.n() {
                    assert_eq!(
                        fast.flags[i], local.flags[i],
                        "trial {trial} t {t} bit {i}"
                    );
                    assert_eq!(fast.decisions[i], local.decisions[i]);
                }
            }
        }
    }

    #[test]
    fn neighborhood_fast_path_matches_the_masked_tree() {
        // On a degree-two code the complete masked walk tree stays small
        // enough to evaluate directly against the conditioned core.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5a11);
        let h = make_regular_ldpc(10, 2, 4, 7).unwrap();
        let basis = h.generator_basis();
        for trial in 0..10 {
            let word = basis.sample_codeword(&mut rng);
            let lik = erasure_likelihoods(&mut rng, &word, 0.5);
            let field = dualize(&h, &lik).unwrap();
            for t in [1, 2] {
                let fast =
                    tp_decode(&h, &lik, TruncationScheme::Ball { t }, DEFAULT_NODE_BUDGET)
                        .unwrap();
                for i in 0..h.n() {
                    let tree = build_saw_tree(
                        &field,
                        i,
                        TruncationScheme::Ball { t },
                        DEFAULT_NODE_BUDGET,
                    )
                    .unwrap();
                    let pair = evaluate_tree(&field, &tree).unwrap();
                    assert!(
                        close(pair.to_probabilities(), fast.marginals[i], 1e-9),
                        "trial {trial} t {t} bit {i}: {:?} vs {:?}",
                        pair.to_probabilities(),
                        fast.marginals[i]
                    );
                }
            }
        }
    }

    #[test]
    fn budget_exhaustion_surfaces_as_an_error() {
        let h = make_golay();
        let lik = vec![[0.4, 0.4]; 23];
        let err = tp_decode(&h, &lik, TruncationScheme::Full, 1000).unwrap_err();
        assert!(matches!(err, Error::Budget { limit: 1000 }));
    }

    #[test]
    fn soft_likelihoods_are_rejected_where_erasures_are_required() {
        let h = make_repetition(3).unwrap();
        let soft = [[0.9, 0.2], [0.5, 0.5], [0.5, 0.5]];
        assert!(matches!(map_decode_bec_gauss(&h, &soft), Err(Error::Unsupported(_))));
        assert!(matches!(local_map_ball_decode(&h, &soft, 1), Err(Error::Unsupported(_))));
        assert!(matches!(
            tp_decode(&h, &soft, TruncationScheme::BecAdaptive { t: 2 }, 1000),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn decision_and_flag_semantics() {
        let mut out = DecodeOutput::with_capacity(3);
        out.push_pair(&WeightPair::new(0.2, 0.6));
        out.push_pair(&WeightPair::new(0.7, 0.7));
        out.push_pair(&WeightPair::zero());
        assert_eq!(out.decisions, vec![1, 0, 0]);
        assert_eq!(
            out.flags,
            vec![DecodeFlag::Ok, DecodeFlag::Ambiguous, DecodeFlag::Ambiguous]
        );
        assert!(close(out.marginals[0], [0.25, 0.75], 1e-12));
        assert!(close(out.marginals[2], [0.5, 0.5], 0.0));
    }
}
