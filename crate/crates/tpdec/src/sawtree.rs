//! Self-avoiding-walk tree construction over generalized Markov random fields.
//!
//! The tree rooted at a field vertex enumerates every non-reversing walk that
//! leaves the root and never repeats a vertex, except that a walk may close
//! back onto an earlier vertex as its final step. Each tree node is a copy of
//! the field vertex the walk currently occupies. A node whose walk closes a
//! cycle is a terminated leaf carrying a forced spin; which spin is determined
//! by comparing, at the revisited vertex, the adjacency position of the edge
//! the walk first departed through with the position of the returning edge.
//!
//! Children of a node are grouped into sibling blocks: two child copies belong
//! to the same block when their vertices can still reach each other through
//! the part of the graph the walk has not touched. Block structure is what the
//! tree evaluator later uses to recombine child messages, so it is recorded
//! here at build time.
//!
//! Beyond the full tree, the builder supports truncation at a fixed depth with
//! a free boundary, an erasure-channel-adaptive variant that collapses
//! subtrees whose spin is already determined, a neighborhood restriction that
//! keeps only vertices within a given check distance of the root, and a
//! hybrid that hangs plain message-passing computation trees below terminated
//! leaves.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::gmrf::{GeneralizedMrf, VertexTag, WeightPair};
use crate::{Error, Result};

/// Default cap on tree nodes before construction aborts with `Error::Budget`.
pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

/// How a walk tree is cut down before evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationScheme {
    /// The complete tree. Exact, but exponentially large on loopy graphs.
    Full,
    /// Cut at edge depth `2 * t` (t variable generations below the root);
    /// vertices at the cut become free leaves.
    FixedDepth { t: usize },
    /// Erasure-channel variant of `FixedDepth`: variables with a known channel
    /// value become forced leaves immediately, and after the tree is built a
    /// leaves-to-root sweep forces and prunes every subtree whose message is
    /// already a point mass.
    BecAdaptive { t: usize },
    /// Restrict the walk to variables within check distance `t` of the root
    /// plus fully interior checks, then build the complete tree of that
    /// subgraph. No boundary forcing.
    Ball { t: usize },
    /// `Ball`, with `ell` variable generations of the ordinary computation
    /// tree grafted below each terminated leaf.
    BallBp { t: usize, ell: usize },
}

impl TruncationScheme {
    /// Short name used in CSV output and CLI parsing.
    pub fn label(&self) -> &'static str {
        match self {
            TruncationScheme::Full => "full",
            TruncationScheme::FixedDepth { .. } => "fixed",
            TruncationScheme::BecAdaptive { .. } => "bec",
            TruncationScheme::Ball { .. } => "ball",
            TruncationScheme::BallBp { .. } => "ballbp",
        }
    }

    pub fn depth_param(&self) -> Option<usize> {
        match *self {
            TruncationScheme::Full => None,
            TruncationScheme::FixedDepth { t }
            | TruncationScheme::BecAdaptive { t }
            | TruncationScheme::Ball { t }
            | TruncationScheme::BallBp { t, .. } => Some(t),
        }
    }

    pub fn graft_param(&self) -> Option<usize> {
        match *self {
            TruncationScheme::BallBp { ell, .. } => Some(ell),
            _ => None,
        }
    }
}

impl fmt::Display for TruncationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TruncationScheme::Full => write!(f, "full"),
            TruncationScheme::FixedDepth { t } => write!(f, "fixed:{t}"),
            TruncationScheme::BecAdaptive { t } => write!(f, "bec:{t}"),
            TruncationScheme::Ball { t } => write!(f, "ball:{t}"),
            TruncationScheme::BallBp { t, ell } => write!(f, "ballbp:{t},{ell}"),
        }
    }
}

impl FromStr for TruncationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("unrecognized truncation scheme '{s}'"));
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        let parse = |txt: &str| txt.parse::<usize>().map_err(|_| bad());
        match (head, rest) {
            ("full", None) => Ok(TruncationScheme::Full),
            ("fixed", Some(r)) => Ok(TruncationScheme::FixedDepth { t: parse(r)? }),
            ("bec", Some(r)) => Ok(TruncationScheme::BecAdaptive { t: parse(r)? }),
            ("ball", Some(r)) => Ok(TruncationScheme::Ball { t: parse(r)? }),
            ("ballbp", Some(r)) => {
                // Accept both "ballbp:T,L" and "ballbp:T:L".
                let (a, b) = r.split_once(',').or_else(|| r.split_once(':')).ok_or_else(bad)?;
                Ok(TruncationScheme::BallBp { t: parse(a)?, ell: parse(b)? })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Has at least one child.
    Internal,
    /// No unvisited neighbors were left to walk to.
    LeafNatural,
    /// The walk closed a cycle here; the spin is forced structurally.
    Terminated { forced: u8 },
    /// Cut by a depth or neighborhood boundary; emits its plain potential.
    TruncatedFree,
    /// Cut with a known spin; emits its potential masked to that spin.
    TruncatedForced { forced: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SawNode {
    /// Field vertex this node is a copy of.
    pub vertex: usize,
    pub parent: Option<usize>,
    /// Position of this node's vertex in the parent vertex's adjacency list.
    /// Selects the interaction table oriented from the parent. Zero (unused)
    /// for the root.
    pub parent_edge_index: usize,
    pub depth: usize,
    pub kind: NodeKind,
    /// Child node ids in edge order at `vertex`.
    pub children: Vec<usize>,
    /// Partition of `children` into sibling blocks. Blocks are ordered by
    /// their first member and members keep edge order. Terminated children
    /// are always singletons.
    pub blocks: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeStats {
    pub nodes: usize,
    pub max_depth: usize,
    pub terminated: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SawTree {
    scheme: TruncationScheme,
    root_vertex: usize,
    /// Arena in depth-first preorder; parents precede children.
    nodes: Vec<SawNode>,
}

impl SawTree {
    pub fn scheme(&self) -> TruncationScheme {
        self.scheme
    }

    pub fn root_vertex(&self) -> usize {
        self.root_vertex
    }

    pub fn nodes(&self) -> &[SawNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &SawNode {
        &self.nodes[id]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn stats(&self) -> TreeStats {
        let mut s = TreeStats { nodes: self.nodes.len(), max_depth: 0, terminated: 0, truncated: 0 };
        for n in &self.nodes {
            s.max_depth = s.max_depth.max(n.depth);
            match n.kind {
                NodeKind::Terminated { .. } => s.terminated += 1,
                NodeKind::TruncatedFree | NodeKind::TruncatedForced { .. } => s.truncated += 1,
                _ => {}
            }
        }
        s
    }
}

/// Vertices reachable by the walk under `Ball` truncation: variables within
/// check distance `t` of `root` plus every check all of whose variables are in
/// that set. Requires a field with variable/check tags.
pub fn ball_mask(field: &GeneralizedMrf, root: usize, t: usize) -> Result<Vec<bool>> {
    let n = field.n_vertices();
    for v in 0..n {
        if field.tag(v) == VertexTag::Plain {
            return Err(Error::Unsupported(
                "neighborhood truncation needs a variable/check-tagged field".into(),
            ));
        }
    }
    if !matches!(field.tag(root), VertexTag::Variable(_)) {
        return Err(Error::Invalid(format!("ball root {root} is not a variable vertex")));
    }
    let mut dist = vec![usize::MAX; n];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == t {
            continue;
        }
        for &a in field.neighbors(u) {
            for &w in field.neighbors(a) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    let mut allowed = vec![false; n];
    for v in 0..n {
        if matches!(field.tag(v), VertexTag::Variable(_)) {
            allowed[v] = dist[v] <= t;
        }
    }
    for v in 0..n {
        if matches!(field.tag(v), VertexTag::Check(_)) {
            allowed[v] = field.neighbors(v).iter().all(|&u| allowed[u]);
        }
    }
    Ok(allowed)
}

pub fn build_saw_tree(
    field: &GeneralizedMrf,
    root: usize,
    scheme: TruncationScheme,
    max_nodes: usize,
) -> Result<SawTree> {
    if root >= field.n_vertices() {
        return Err(Error::Invalid(format!(
            "root {root} out of range for a field with {} vertices",
            field.n_vertices()
        )));
    }
    if matches!(field.tag(root), VertexTag::Check(_)) {
        return Err(Error::Invalid(format!("walk trees are rooted at variables, not check {root}")));
    }

    let mut walker = Walker {
        field,
        allowed: None,
        cut_depth: None,
        known: None,
        max_nodes,
        nodes: Vec::new(),
        on_walk: vec![false; field.n_vertices()],
        walk_pos: vec![0; field.n_vertices()],
        walk: Vec::new(),
    };

    let ball_allowed;
    let known_values;
    match scheme {
        TruncationScheme::Full => {}
        TruncationScheme::FixedDepth { t } => {
            walker.cut_depth = Some(2 * t);
        }
        TruncationScheme::BecAdaptive { t } => {
            known_values = classify_erasure_field(field)?;
            walker.known = Some(&known_values);
            walker.cut_depth = Some(2 * t);
        }
        TruncationScheme::Ball { t } | TruncationScheme::BallBp { t, .. } => {
            ball_allowed = ball_mask(field, root, t)?;
            walker.allowed = Some(&ball_allowed);
        }
    }

    walker.descend(root, None, None, 0, 0)?;

    let mut nodes = walker.nodes;
    if matches!(scheme, TruncationScheme::BecAdaptive { .. }) {
        adaptive_sweep(field, &mut nodes);
        nodes = compact(nodes);
    }
    assign_blocks(field.n_vertices(), &mut nodes);
    if let TruncationScheme::BallBp { ell, .. } = scheme {
        if ell > 0 {
            graft_computation_trees(field, &mut nodes, ell, max_nodes)?;
        }
    }
    Ok(SawTree { scheme, root_vertex: root, nodes })
}

struct Walker<'a> {
    field: &'a GeneralizedMrf,
    allowed: Option<&'a [bool]>,
    /// Edge depth at which walks stop with a free boundary.
    cut_depth: Option<usize>,
    /// Channel-known spins per vertex; such variables become forced leaves
    /// without being expanded.
    known: Option<&'a [Option<u8>]>,
    max_nodes: usize,
    nodes: Vec<SawNode>,
    on_walk: Vec<bool>,
    walk_pos: Vec<usize>,
    walk: Vec<usize>,
}

impl Walker<'_> {
    fn new_node(
        &mut self,
        vertex: usize,
        parent: Option<usize>,
        parent_edge_index: usize,
        depth: usize,
        kind: NodeKind,
    ) -> Result<usize> {
        if self.nodes.len() >= self.max_nodes {
            return Err(Error::Budget { limit: self.max_nodes });
        }
        let id = self.nodes.len();
        self.nodes.push(SawNode {
            vertex,
            parent,
            parent_edge_index,
            depth,
            kind,
            children: Vec::new(),
            blocks: Vec::new(),
        });
        Ok(id)
    }

    fn descend(
        &mut self,
        vertex: usize,
        parent: Option<usize>,
        prev: Option<usize>,
        parent_edge_index: usize,
        depth: usize,
    ) -> Result<usize> {
        if let Some(known) = self.known {
            if let Some(b) = known[vertex] {
                return self.new_node(
                    vertex,
                    parent,
                    parent_edge_index,
                    depth,
                    NodeKind::TruncatedForced { forced: b },
                );
            }
        }
        if self.cut_depth == Some(depth) {
            return self.new_node(vertex, parent, parent_edge_index, depth, NodeKind::TruncatedFree);
        }

        let id = self.new_node(vertex, parent, parent_edge_index, depth, NodeKind::Internal)?;
        self.on_walk[vertex] = true;
        self.walk_pos[vertex] = self.walk.len();
        self.walk.push(vertex);

        let mut built: Vec<usize> = Vec::new();
        for i in 0..self.field.neighbors(vertex).len() {
            let c = self.field.neighbors(vertex)[i];
            if prev == Some(c) {
                continue;
            }
            if let Some(mask) = self.allowed {
                if !mask[c] {
                    continue;
                }
            }
            if self.on_walk[c] {
                // The walk closes a cycle. Compare, at c, the position of the
                // edge the walk left through with the position of the edge it
                // is returning by; the later departure forces spin 1.
                let p = self.walk_pos[c];
                let exit_i = self.field.neighbor_index(c, self.walk[p + 1]).unwrap();
                let entry_i = self.field.neighbor_index(c, vertex).unwrap();
                let forced = u8::from(exit_i > entry_i);
                built.push(self.new_node(c, Some(id), i, depth + 1, NodeKind::Terminated { forced })?);
            } else {
                built.push(self.descend(c, Some(id), Some(vertex), i, depth + 1)?);
            }
        }

        self.walk.pop();
        self.on_walk[vertex] = false;

        let node = &mut self.nodes[id];
        node.children = built;
        if node.children.is_empty() {
            node.kind = NodeKind::LeafNatural;
        }
        Ok(id)
    }
}

/// Sibling blocks, assigned on the finished tree from realized projections.
/// Two children of a node couple when the subtree under either one holds a
/// live copy of the other's vertex; blocks are the transitive closure of
/// that relation, ordered by first member. Point-mass leaves, meaning
/// terminated copies and forced spins, are constants of the evaluation: no
/// dependence flows through them, so they project nothing and always land
/// in singleton blocks. On full trees this reduces to residual-graph
/// connectivity off the walk, and on depth-cut trees to bounded-distance
/// connectivity; on swept trees the fixed spins additionally split apart
/// what the raw graph alone would merge.
fn assign_blocks(n_vertices: usize, nodes: &mut [SawNode]) {
    let words = n_vertices.div_ceil(64);
    let mut mask = vec![0u64; nodes.len() * words];
    for id in (0..nodes.len()).rev() {
        match nodes[id].kind {
            NodeKind::Terminated { .. } | NodeKind::TruncatedForced { .. } => {}
            _ => {
                let v = nodes[id].vertex;
                mask[id * words + v / 64] |= 1 << (v % 64);
            }
        }
        if let Some(p) = nodes[id].parent {
            for w in 0..words {
                let m = mask[id * words + w];
                mask[p * words + w] |= m;
            }
        }
    }
    fn find(rep: &mut Vec<usize>, mut x: usize) -> usize {
        while rep[x] != x {
            rep[x] = rep[rep[x]];
            x = rep[x];
        }
        x
    }
    for id in 0..nodes.len() {
        let k = nodes[id].children.len();
        if k == 0 {
            continue;
        }
        let mut rep: Vec<usize> = (0..k).collect();
        for a in 0..k {
            let ca = nodes[id].children[a];
            let ja = nodes[ca].vertex;
            for b in (a + 1)..k {
                let cb = nodes[id].children[b];
                let jb = nodes[cb].vertex;
                if mask[ca * words + jb / 64] >> (jb % 64) & 1 != 0
                    || mask[cb * words + ja / 64] >> (ja % 64) & 1 != 0
                {
                    let (ra, rb) = (find(&mut rep, a), find(&mut rep, b));
                    rep[ra] = rb;
                }
            }
        }
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut block_of = vec![usize::MAX; k];
        for i in 0..k {
            let r = find(&mut rep, i);
            if block_of[r] == usize::MAX {
                block_of[r] = blocks.len();
                blocks.push(Vec::new());
            }
            blocks[block_of[r]].push(nodes[id].children[i]);
        }
        nodes[id].blocks = blocks;
    }
}

/// Per-vertex known spins for the erasure-adaptive scheme. Variables must
/// carry erasure-style likelihoods: a zero entry (known) or two equal entries
/// (erased). Checks are never channel-known.
pub(crate) fn classify_erasure_field(field: &GeneralizedMrf) -> Result<Vec<Option<u8>>> {
    let mut known = vec![None; field.n_vertices()];
    for v in 0..field.n_vertices() {
        match field.tag(v) {
            VertexTag::Variable(_) => {
                let [w0, w1] = field.weight(v);
                if w0 < 0.0 || w1 < 0.0 || (w0 == 0.0 && w1 == 0.0) {
                    return Err(Error::Unsupported(format!(
                        "vertex {v} weight ({w0}, {w1}) is not an erasure likelihood"
                    )));
                }
                if w1 == 0.0 {
                    known[v] = Some(0);
                } else if w0 == 0.0 {
                    known[v] = Some(1);
                } else if w0 != w1 {
                    return Err(Error::Unsupported(format!(
                        "vertex {v} weight ({w0}, {w1}) is neither known nor erased"
                    )));
                }
            }
            VertexTag::Check(_) => {}
            VertexTag::Plain => {
                return Err(Error::Unsupported(
                    "adaptive truncation needs a variable/check-tagged field".into(),
                ));
            }
        }
    }
    Ok(known)
}

/// Leaves-to-root pass with plain per-child products (no block structure).
/// Any node whose upward pair has exactly one zero entry is already decided:
/// it becomes a forced leaf and its subtree is dropped. On erasure
/// likelihoods every pair in this recursion is of the form (a, a), (a, -a),
/// (a, 0), (0, a) or (0, 0) with exact zeros, so the test needs no tolerance.
/// Conflicting point masses multiply to an exact (0, 0), which decides
/// nothing and therefore keeps its subtree.
fn adaptive_sweep(field: &GeneralizedMrf, nodes: &mut [SawNode]) {
    let n = nodes.len();
    let mut value = vec![WeightPair::zero(); n];
    let mut decided = vec![None; n];
    for id in (0..n).rev() {
        let node = &nodes[id];
        let v = match node.kind {
            // A terminated copy's forced value is a device of the blocked
            // evaluation, not knowledge about the transmitted word. The
            // sweep sees the silent state instead: the channel weight for a
            // variable, and the lower spin for a check, whose outgoing
            // message is constant.
            NodeKind::Terminated { .. } => match field.tag(node.vertex) {
                VertexTag::Check(_) => WeightPair::indicator(0),
                _ => field.weight_pair(node.vertex),
            },
            NodeKind::TruncatedForced { forced } => {
                field.weight_pair(node.vertex).mul(&WeightPair::indicator(forced))
            }
            NodeKind::TruncatedFree | NodeKind::LeafNatural => field.weight_pair(node.vertex),
            NodeKind::Internal => {
                let mut acc = field.weight_pair(node.vertex);
                for &c in &node.children {
                    let t = field.table(node.vertex, nodes[c].parent_edge_index);
                    acc = acc.mul(&value[c].apply_table(t));
                }
                // Only a variable copy can be decoded; a one-sided check
                // just relays no information, and its subtree still feeds
                // the blocked evaluation.
                if matches!(field.tag(node.vertex), VertexTag::Variable(_))
                    && (acc.w0 == 0.0) != (acc.w1 == 0.0)
                {
                    decided[id] = Some(u8::from(acc.w0 == 0.0));
                }
                acc
            }
        };
        value[id] = v;
    }
    for id in 0..n {
        if let Some(b) = decided[id] {
            nodes[id].kind = NodeKind::TruncatedForced { forced: b };
            nodes[id].children.clear();
            nodes[id].blocks.clear();
        }
    }
}

/// Rebuild the arena keeping only nodes reachable from the root, preserving
/// preorder so parents still precede children.
fn compact(nodes: Vec<SawNode>) -> Vec<SawNode> {
    let mut map = vec![usize::MAX; nodes.len()];
    let mut order = Vec::new();
    let mut stack = vec![0];
    while let Some(id) = stack.pop() {
        if map[id] != usize::MAX {
            continue;
        }
        map[id] = order.len();
        order.push(id);
        for &c in nodes[id].children.iter().rev() {
            stack.push(c);
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for &old in &order {
        let mut n = nodes[old].clone();
        n.parent = n.parent.map(|p| map[p]);
        for c in &mut n.children {
            *c = map[*c];
        }
        for b in &mut n.blocks {
            for c in b.iter_mut() {
                *c = map[*c];
            }
        }
        out.push(n);
    }
    out
}

/// Hang `ell` variable generations of the ordinary computation tree below
/// each terminated leaf. These subtrees ignore walk history entirely: every
/// neighbor except the immediate parent is expanded, blocks are singletons,
/// and variables at generation `ell` become free leaves.
fn graft_computation_trees(
    field: &GeneralizedMrf,
    nodes: &mut Vec<SawNode>,
    ell: usize,
    max_nodes: usize,
) -> Result<()> {
    let existing = nodes.len();
    for id in 0..existing {
        let NodeKind::Terminated { .. } = nodes[id].kind else { continue };
        let vertex = nodes[id].vertex;
        let prev = nodes[id].parent.map(|p| nodes[p].vertex);
        let depth = nodes[id].depth;
        let mut children = Vec::new();
        for i in 0..field.neighbors(vertex).len() {
            let c = field.neighbors(vertex)[i];
            if prev == Some(c) {
                continue;
            }
            let vd = usize::from(matches!(field.tag(c), VertexTag::Variable(_)));
            let cid = graft_descend(field, nodes, c, Some(id), vertex, i, depth + 1, vd, ell, max_nodes)?;
            children.push(cid);
        }
        nodes[id].blocks = children.iter().map(|&c| vec![c]).collect();
        nodes[id].children = children;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn graft_descend(
    field: &GeneralizedMrf,
    nodes: &mut Vec<SawNode>,
    vertex: usize,
    parent: Option<usize>,
    prev: usize,
    parent_edge_index: usize,
    depth: usize,
    var_generation: usize,
    ell: usize,
    max_nodes: usize,
) -> Result<usize> {
    if nodes.len() >= max_nodes {
        return Err(Error::Budget { limit: max_nodes });
    }
    let id = nodes.len();
    let is_var = matches!(field.tag(vertex), VertexTag::Variable(_));
    let kind =
        if is_var && var_generation == ell { NodeKind::TruncatedFree } else { NodeKind::Internal };
    nodes.push(SawNode {
        vertex,
        parent,
        parent_edge_index,
        depth,
        kind,
        children: Vec::new(),
        blocks: Vec::new(),
    });
    if kind == NodeKind::TruncatedFree {
        return Ok(id);
    }
    let mut children = Vec::new();
    for i in 0..field.neighbors(vertex).len() {
        let c = field.neighbors(vertex)[i];
        if c == prev {
            continue;
        }
        let vd = var_generation + usize::from(matches!(field.tag(c), VertexTag::Variable(_)));
        let cid = graft_descend(field, nodes, c, Some(id), vertex, i, depth + 1, vd, ell, max_nodes)?;
        children.push(cid);
    }
    let node = &mut nodes[id];
    node.blocks = children.iter().map(|&c| vec![c]).collect();
    node.children = children;
    if node.children.is_empty() {
        node.kind = NodeKind::LeafNatural;
    }
    Ok(id)
}
