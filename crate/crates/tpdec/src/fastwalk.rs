//! Stack-only walk-tree evaluation for fields with at most 64 vertices.
//!
//! Walk state fits in a single machine word there, so the tree can be
//! evaluated during one depth-first descent: no arena, no per-node heap
//! allocation, and the erasure-adaptive sweep folded into the same pass.
//! The recursion mirrors the materialized builder and evaluator node for
//! node, charging the node budget at the same points, so the two paths are
//! interchangeable and cross-checked against each other in tests.

use crate::gmrf::{GeneralizedMrf, VertexTag, WeightPair};
use crate::sawtree::{ball_mask, classify_erasure_field, TruncationScheme};
use crate::{Error, Result};

/// Whether [`bit_marginal`] can evaluate this field under this scheme. The
/// hybrid grafting scheme stays on the materialized path.
pub fn supports(field: &GeneralizedMrf, scheme: TruncationScheme) -> bool {
    field.n_vertices() <= 64 && !matches!(scheme, TruncationScheme::BallBp { .. })
}

/// Root pair of the walk tree at `root`, equal to building the tree and
/// evaluating it, without materializing anything.
pub fn bit_marginal(
    field: &GeneralizedMrf,
    root: usize,
    scheme: TruncationScheme,
    max_nodes: usize,
) -> Result<WeightPair> {
    let mut walker = make_walker(field, root, scheme, max_nodes)?;
    let (value, _, _, _) = walker.descend(root, None, 0)?;
    Ok(value)
}

/// Node count of the finished tree, equal to what the materialized builder
/// reports, without materializing anything. Charges the budget per node
/// built, exactly like the builder, so it fails with the same budget error
/// at the same point. Under the erasure-adaptive scheme the finished tree is
/// the swept and pruned one, which costs the full value computation; other
/// schemes count with a value-free walk.
pub fn count_nodes(
    field: &GeneralizedMrf,
    root: usize,
    scheme: TruncationScheme,
    max_nodes: usize,
) -> Result<usize> {
    let mut walker = make_walker(field, root, scheme, max_nodes)?;
    if walker.known.is_some() {
        let (_, _, surviving, _) = walker.descend(root, None, 0)?;
        Ok(surviving)
    } else {
        walker.count_descend(root, None, 0)?;
        Ok(walker.count)
    }
}

fn make_walker(
    field: &GeneralizedMrf,
    root: usize,
    scheme: TruncationScheme,
    max_nodes: usize,
) -> Result<FusedWalker<'_>> {
    debug_assert!(supports(field, scheme));
    let n = field.n_vertices();
    if root >= n {
        return Err(Error::Invalid(format!(
            "root {root} out of range for a field with {n} vertices"
        )));
    }
    if matches!(field.tag(root), VertexTag::Check(_)) {
        return Err(Error::Invalid(format!("walk trees are rooted at variables, not check {root}")));
    }

    let full_mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut cut_depth = None;
    let mut known = None;
    let mut allowed = full_mask;
    match scheme {
        TruncationScheme::Full => {}
        TruncationScheme::FixedDepth { t } => {
            cut_depth = Some(2 * t);
        }
        TruncationScheme::BecAdaptive { t } => {
            known = Some(classify_erasure_field(field)?);
            cut_depth = Some(2 * t);
        }
        TruncationScheme::Ball { t } => {
            let mask = ball_mask(field, root, t)?;
            allowed = 0;
            for (v, &inside) in mask.iter().enumerate() {
                if inside {
                    allowed |= 1 << v;
                }
            }
        }
        TruncationScheme::BallBp { .. } => unreachable!("unsupported scheme"),
    }

    Ok(FusedWalker {
        field,
        weights: (0..n).map(|v| field.weight_pair(v)).collect(),
        silent: (0..n)
            .map(|v| match field.tag(v) {
                VertexTag::Check(_) => WeightPair::indicator(0),
                _ => field.weight_pair(v),
            })
            .collect(),
        allowed,
        cut_depth,
        known,
        assert_identity: matches!(scheme, TruncationScheme::Full | TruncationScheme::Ball { .. }),
        max_nodes,
        count: 0,
        on_walk: 0,
        walk: Vec::with_capacity(n),
        walk_pos: [0; 64],
        child_meta: Vec::with_capacity(4 * n),
        child_vals: Vec::with_capacity(4 * n),
        child_masks: Vec::with_capacity(4 * n),
    })
}

#[derive(Clone, Copy)]
struct ChildMeta {
    edge: u32,
    vertex: u32,
}

struct FusedWalker<'a> {
    field: &'a GeneralizedMrf,
    weights: Vec<WeightPair>,
    /// Per-vertex sweep value for terminated copies: the channel weight for
    /// a variable, the constant-message lower spin for a check.
    silent: Vec<WeightPair>,
    allowed: u64,
    cut_depth: Option<usize>,
    known: Option<Vec<Option<u8>>>,
    assert_identity: bool,
    max_nodes: usize,
    count: usize,
    on_walk: u64,
    walk: Vec<u8>,
    walk_pos: [u8; 64],
    /// Shared stacks standing in for per-node child arrays; each frame works
    /// on the suffix it pushed and truncates it on the way out. The mask
    /// stack carries each child subtree's realized projection, the vertex
    /// set of its live copies, from which sibling blocks are derived.
    child_meta: Vec<ChildMeta>,
    child_vals: Vec<(WeightPair, WeightPair)>,
    child_masks: Vec<u64>,
}

impl FusedWalker<'_> {
    fn charge(&mut self) -> Result<()> {
        if self.count >= self.max_nodes {
            return Err(Error::Budget { limit: self.max_nodes });
        }
        self.count += 1;
        Ok(())
    }

    /// Returns the node's `(tree value, sweep message, surviving nodes,
    /// projection)`. The sweep message is the plain singleton product used
    /// by the erasure-adaptive pruning rule; outside that scheme it is the
    /// tree value (and unused). Surviving nodes counts this subtree after
    /// the sweep's pruning, matching the materialized arena. The projection
    /// is the vertex set of the subtree's live copies, empty for point-mass
    /// leaves, from which the parent derives its sibling blocks.
    fn descend(
        &mut self,
        vertex: usize,
        prev: Option<usize>,
        depth: usize,
    ) -> Result<(WeightPair, WeightPair, usize, u64)> {
        if let Some(known) = &self.known {
            if let Some(b) = known[vertex] {
                self.charge()?;
                let v = self.weights[vertex].mul(&WeightPair::indicator(b));
                return Ok((v, v, 1, 0));
            }
        }
        if self.cut_depth == Some(depth) {
            self.charge()?;
            let v = self.weights[vertex];
            return Ok((v, v, 1, 1 << vertex));
        }
        self.charge()?;

        let bit = 1u64 << vertex;
        self.on_walk |= bit;
        self.walk_pos[vertex] = self.walk.len() as u8;
        self.walk.push(vertex as u8);
        let base = self.child_meta.len();

        let mut surv_children = 0usize;
        let mut result = Ok(());
        for i in 0..self.field.neighbors(vertex).len() {
            let c = self.field.neighbors(vertex)[i];
            if prev == Some(c) || self.allowed & (1 << c) == 0 {
                continue;
            }
            if self.on_walk & (1 << c) != 0 {
                // The walk closes a cycle at c; the spin is forced by whether
                // the first departure from c used a later edge than the
                // returning one.
                let p = self.walk_pos[c] as usize;
                let exit_i = self.field.neighbor_index(c, self.walk[p + 1] as usize).unwrap();
                let entry_i = self.field.neighbor_index(c, vertex).unwrap();
                let forced = u8::from(exit_i > entry_i);
                if let Err(e) = self.charge() {
                    result = Err(e);
                    break;
                }
                // Sweep side: a terminated copy's forced value is an
                // evaluation device, not knowledge; it sweeps as the silent
                // state of its vertex.
                let v = WeightPair::indicator(forced);
                self.child_meta.push(ChildMeta { edge: i as u32, vertex: c as u32 });
                self.child_vals.push((v, self.silent[c as usize]));
                self.child_masks.push(0);
                surv_children += 1;
            } else {
                match self.descend(c, Some(vertex), depth + 1) {
                    Ok((value, sweep, surviving, mask)) => {
                        self.child_meta.push(ChildMeta { edge: i as u32, vertex: c as u32 });
                        self.child_vals.push((value, sweep));
                        self.child_masks.push(mask);
                        surv_children += surviving;
                    }
                    Err(e) => {
                        result = Err(e);
                        break;
                    }
                }
            }
        }

        let out = match result {
            Err(e) => Err(e),
            Ok(()) => Ok(self.recombine(vertex, base, surv_children)),
        };
        self.walk.pop();
        self.on_walk &= !bit;
        self.child_meta.truncate(base);
        self.child_vals.truncate(base);
        self.child_masks.truncate(base);
        out
    }

    /// Size-only twin of `descend`: same stopping rules, same charge points,
    /// no values. Terminated-leaf spins do not affect counts, so the walk
    /// order bookkeeping is skipped too.
    fn count_descend(&mut self, vertex: usize, prev: Option<usize>, depth: usize) -> Result<()> {
        if let Some(known) = &self.known {
            if known[vertex].is_some() {
                return self.charge();
            }
        }
        if self.cut_depth == Some(depth) {
            return self.charge();
        }
        self.charge()?;

        let bit = 1u64 << vertex;
        self.on_walk |= bit;
        let mut result = Ok(());
        for i in 0..self.field.neighbors(vertex).len() {
            let c = self.field.neighbors(vertex)[i];
            if prev == Some(c) || self.allowed & (1 << c) == 0 {
                continue;
            }
            result = if self.on_walk & (1 << c) != 0 {
                self.charge()
            } else {
                self.count_descend(c, Some(vertex), depth + 1)
            };
            if result.is_err() {
                break;
            }
        }
        self.on_walk &= !bit;
        result
    }

    /// Sweep product, pruning decision, and blocked recombination for the
    /// node's children sitting at `base..` on the shared stacks.
    fn recombine(
        &mut self,
        vertex: usize,
        base: usize,
        surv_children: usize,
    ) -> (WeightPair, WeightPair, usize, u64) {
        let k = self.child_meta.len() - base;
        let psi = self.weights[vertex];

        let mut sweep = psi;
        if self.known.is_some() {
            for j in 0..k {
                let meta = self.child_meta[base + j];
                let t = self.field.table(vertex, meta.edge as usize);
                sweep = sweep.mul(&self.child_vals[base + j].1.apply_table(t));
            }
            // A decided variable copy is replaced by a forced leaf; nothing
            // below it contributes to the tree value or survives the prune.
            // Checks are never decoded: a one-sided check relays no
            // information but its subtree still feeds the evaluation.
            if k > 0
                && matches!(self.field.tag(vertex), VertexTag::Variable(_))
                && (sweep.w0 == 0.0) != (sweep.w1 == 0.0)
            {
                let b = u8::from(sweep.w0 == 0.0);
                return (psi.mul(&WeightPair::indicator(b)), sweep, 1, 0);
            }
        }

        let mut proj = 1u64 << vertex;
        for j in 0..k {
            proj |= self.child_masks[base + j];
        }
        let value = if k == 0 {
            psi
        } else {
            let mut rep: [u8; 64] = std::array::from_fn(|i| i as u8);
            fn find(rep: &mut [u8; 64], mut x: usize) -> usize {
                while rep[x] as usize != x {
                    rep[x] = rep[rep[x] as usize];
                    x = rep[x] as usize;
                }
                x
            }
            for a in 0..k {
                let va = self.child_meta[base + a].vertex;
                for b in (a + 1)..k {
                    let vb = self.child_meta[base + b].vertex;
                    if self.child_masks[base + a] & (1 << vb) != 0
                        || self.child_masks[base + b] & (1 << va) != 0
                    {
                        let (ra, rb) = (find(&mut rep, a), find(&mut rep, b));
                        rep[ra] = rb as u8;
                    }
                }
            }
            // Per block, in order of first member: the boundary pair of the
            // first member's 0-entry and the last member's 1-entry.
            let mut block_of_rep = [usize::MAX; 64];
            let mut first = [0usize; 64];
            let mut last = [0usize; 64];
            let mut len = [0usize; 64];
            let mut n_blocks = 0;
            for j in 0..k {
                let r = find(&mut rep, j);
                if block_of_rep[r] == usize::MAX {
                    block_of_rep[r] = n_blocks;
                    first[n_blocks] = j;
                    n_blocks += 1;
                }
                let blk = block_of_rep[r];
                last[blk] = j;
                len[blk] += 1;
            }
            let hat = |walker: &Self, j: usize| -> WeightPair {
                let meta = walker.child_meta[base + j];
                walker.child_vals[base + j].0.apply_table(walker.field.table(vertex, meta.edge as usize))
            };
            let mut acc = psi;
            for blk in 0..n_blocks {
                let fv = hat(self, first[blk]);
                let bv = if len[blk] == 1 {
                    fv
                } else {
                    #[cfg(debug_assertions)]
                    if self.assert_identity {
                        let mut prev = fv;
                        for j in (first[blk] + 1)..=last[blk] {
                            if find(&mut rep, j) != find(&mut rep, first[blk]) {
                                continue;
                            }
                            let cur = hat(self, j);
                            debug_assert!(
                                boundary_close(prev.w1, prev.exp, cur.w0, cur.exp),
                                "adjacent block members disagree across their boundary: \
                                 {prev:?} vs {cur:?} at vertex {vertex}"
                            );
                            prev = cur;
                        }
                    }
                    let lv = hat(self, last[blk]);
                    WeightPair::from_scaled_entries(fv.w0, fv.exp, lv.w1, lv.exp)
                };
                acc = acc.mul(&bv);
            }
            acc
        };
        let sweep = if self.known.is_some() { sweep } else { value };
        (value, sweep, 1 + surv_children, proj)
    }
}

#[cfg(debug_assertions)]
fn boundary_close(a: f64, ea: i64, b: f64, eb: i64) -> bool {
    let e = ea.max(eb);
    let av = a * ((ea - e) as f64).exp2();
    let bv = b * ((eb - e) as f64).exp2();
    (av - bv).abs() <= 1e-9 * av.abs().max(bv.abs()).max(0.5)
}
