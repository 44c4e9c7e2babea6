//! Rooted binary trees with divergence times.
//!
//! A tree hangs below an implicit origin at time 0. The first divergence (the
//! top node, [`DdtTree::root`]) sits at time `t_root >= 0`; the edge from the
//! origin to it is the root edge, and its length is the Newick root-edge length.
//! Every other internal node has exactly two children, times strictly increase
//! towards the leaves and every leaf sits at time 1.
//!
//! Node ids are indices into an arena. Trees built by the constructors are in
//! canonical order: leaves first, sorted by natural label order, then internal
//! nodes in preorder. [`DdtTree::regraft`] edits in place and keeps every id
//! stable, which is what the sampler relies on.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Leaf depths read from Newick must equal 1 within this tolerance.
pub const LEAF_DEPTH_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
struct Node {
    time: f64,
    parent: Option<NodeId>,
    children: Option<[NodeId; 2]>,
    label: Option<String>,
}

/// Input node for building a tree from parts.
#[derive(Clone, Debug)]
pub(crate) struct RawNode {
    pub time: f64,
    pub children: Option<[usize; 2]>,
    pub label: Option<String>,
}

#[derive(Clone, Debug)]
pub struct DdtTree {
    nodes: Vec<Node>,
    root: NodeId,
}

/// Result of pruning a subtree off a tree.
#[derive(Clone, Debug)]
pub struct SubtreeDetachment {
    /// The tree left behind. The pruned node's former parent is dissolved.
    pub remnant: DdtTree,
    /// The pruned subtree; its root time is the time of the pruned node.
    pub subtree: DdtTree,
    /// Remnant node whose parent edge held the former attachment point.
    pub attach_edge: NodeId,
    /// Time of the dissolved parent.
    pub attach_time: f64,
    /// Original id of every remnant node, indexed by remnant id.
    pub remnant_origin: Vec<NodeId>,
    /// Original id of every subtree node, indexed by subtree id.
    pub subtree_origin: Vec<NodeId>,
}

/// Compare labels so that embedded numbers sort numerically ("v2" < "v10").
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut ai, mut bi) = (a.as_bytes(), b.as_bytes());
    loop {
        match (ai.first(), bi.first()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let na = ai.iter().take_while(|c| c.is_ascii_digit()).count();
                let nb = bi.iter().take_while(|c| c.is_ascii_digit()).count();
                let da = trim_zeros(&ai[..na]);
                let db = trim_zeros(&bi[..nb]);
                let ord = da.len().cmp(&db.len()).then_with(|| da.cmp(db));
                if ord != Ordering::Equal {
                    return ord;
                }
                let ord = na.cmp(&nb);
                if ord != Ordering::Equal {
                    return ord;
                }
                ai = &ai[na..];
                bi = &bi[nb..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                ai = &ai[1..];
                bi = &bi[1..];
            }
        }
    }
}

fn trim_zeros(d: &[u8]) -> &[u8] {
    let k = d.iter().take_while(|&&c| c == b'0').count();
    &d[k.min(d.len().saturating_sub(1))..]
}

/// Branch lengths are written with 10 significant digits.
pub fn format_length(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{:.9e}", x).parse().unwrap_or(x);
    let s = format!("{}", rounded);
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

impl DdtTree {
    /// Build a validated tree in canonical order from raw nodes.
    pub(crate) fn from_raw(raw: Vec<RawNode>, root: usize, min_leaves: usize) -> Result<Self> {
        Self::from_raw_with_map(raw, root, min_leaves).map(|(t, _)| t)
    }

    /// As [`DdtTree::from_raw`], also returning the raw index of every new id.
    pub(crate) fn from_raw_with_map(
        raw: Vec<RawNode>,
        root: usize,
        min_leaves: usize,
    ) -> Result<(Self, Vec<usize>)> {
        let n = raw.len();
        if root >= n {
            return Err(Error::InvalidTree("root index out of range".into()));
        }
        let mut parent = vec![None; n];
        for (i, r) in raw.iter().enumerate() {
            if let Some(ch) = r.children {
                for c in ch {
                    if c >= n || c == i {
                        return Err(Error::InvalidTree(format!("bad child index {c}")));
                    }
                    if parent[c].is_some() {
                        return Err(Error::InvalidTree(format!("node {c} has two parents")));
                    }
                    parent[c] = Some(i);
                }
            }
        }
        if parent[root].is_some() {
            return Err(Error::InvalidTree("root has a parent".into()));
        }
        // reachability and canonical ordering
        let mut reach = vec![false; n];
        let mut stack = vec![root];
        let mut visited = 0usize;
        while let Some(v) = stack.pop() {
            if reach[v] {
                return Err(Error::InvalidTree("cycle detected".into()));
            }
            reach[v] = true;
            visited += 1;
            if let Some(ch) = raw[v].children {
                stack.extend(ch);
            }
        }
        if visited != n {
            return Err(Error::InvalidTree("unreachable nodes".into()));
        }

        let mut leaves: Vec<usize> = (0..n).filter(|&i| raw[i].children.is_none()).collect();
        for &l in &leaves {
            match &raw[l].label {
                Some(s) if !s.is_empty() => {}
                _ => return Err(Error::InvalidTree("leaf without a label".into())),
            }
        }
        leaves.sort_by(|&a, &b| {
            natural_cmp(raw[a].label.as_deref().unwrap(), raw[b].label.as_deref().unwrap())
        });
        for w in leaves.windows(2) {
            if raw[w[0]].label == raw[w[1]].label {
                return Err(Error::InvalidTree(format!(
                    "duplicate leaf label `{}`",
                    raw[w[0]].label.as_deref().unwrap()
                )));
            }
        }
        if leaves.len() < min_leaves {
            return Err(Error::InvalidTree(format!(
                "tree has {} leaves, need at least {min_leaves}",
                leaves.len()
            )));
        }

        // min leaf rank per node for canonical child order
        let mut rank = vec![usize::MAX; n];
        for (r, &l) in leaves.iter().enumerate() {
            rank[l] = r;
        }
        let post = raw_postorder(&raw, root);
        for &v in &post {
            if let Some([a, b]) = raw[v].children {
                rank[v] = rank[a].min(rank[b]);
            }
        }

        let mut order: Vec<usize> = leaves.clone();
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            if let Some([a, b]) = raw[v].children {
                order.push(v);
                let (first, second) = if rank[a] <= rank[b] { (a, b) } else { (b, a) };
                stack.push(second);
                stack.push(first);
            }
        }
        let mut new_id = vec![0usize; n];
        for (i, &old) in order.iter().enumerate() {
            new_id[old] = i;
        }
        let nodes: Vec<Node> = order
            .iter()
            .map(|&old| {
                let r = &raw[old];
                let children = r.children.map(|[a, b]| {
                    let (a, b) = if rank[a] <= rank[b] { (a, b) } else { (b, a) };
                    [new_id[a], new_id[b]]
                });
                Node {
                    time: r.time,
                    parent: parent[old].map(|p| new_id[p]),
                    children,
                    label: if r.children.is_none() { r.label.clone() } else { None },
                }
            })
            .collect();
        let tree = DdtTree { nodes, root: new_id[root] };
        tree.validate_with(min_leaves)?;
        Ok((tree, order))
    }

    /// Check every structural and time invariant.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(2)
    }

    pub(crate) fn validate_with(&self, min_leaves: usize) -> Result<()> {
        let root = &self.nodes[self.root];
        if root.parent.is_some() {
            return Err(Error::InvalidTree("root has a parent".into()));
        }
        if !(root.time >= 0.0) {
            return Err(Error::InvalidTree("root time must be >= 0".into()));
        }
        let mut k = 0;
        let mut labels = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.time.is_finite() {
                return Err(Error::InvalidTree(format!("node {i} has non-finite time")));
            }
            match node.children {
                None => {
                    k += 1;
                    if node.time != 1.0 {
                        return Err(Error::InvalidTree(format!(
                            "leaf `{}` is at time {}, expected 1",
                            node.label.as_deref().unwrap_or("?"),
                            node.time
                        )));
                    }
                    labels.push(node.label.as_deref().unwrap_or(""));
                }
                Some(ch) => {
                    if node.time >= 1.0 {
                        return Err(Error::InvalidTree(format!(
                            "internal node {i} has divergence time {} >= 1",
                            node.time
                        )));
                    }
                    for c in ch {
                        if self.nodes[c].parent != Some(i) {
                            return Err(Error::InvalidTree(format!("broken link {i} -> {c}")));
                        }
                        if self.nodes[c].time <= node.time {
                            return Err(Error::InvalidTree(format!(
                                "nonpositive branch length on edge {i} -> {c}"
                            )));
                        }
                    }
                }
            }
            if i != self.root && node.parent.is_none() {
                return Err(Error::InvalidTree(format!("node {i} has no parent")));
            }
        }
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidTree("duplicate leaf labels".into()));
        }
        if k < min_leaves {
            return Err(Error::InvalidTree(format!(
                "tree has {k} leaves, need at least {min_leaves}"
            )));
        }
        if 2 * k - 1 != self.nodes.len() {
            return Err(Error::InvalidTree("node count is not 2K-1".into()));
        }
        Ok(())
    }

    pub fn n_leaves(&self) -> usize {
        (self.nodes.len() + 1) / 2
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn time(&self, v: NodeId) -> f64 {
        self.nodes[v].time
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.nodes[v].parent
    }

    pub fn children(&self, v: NodeId) -> Option<[NodeId; 2]> {
        self.nodes[v].children
    }

    pub fn is_leaf(&self, v: NodeId) -> bool {
        self.nodes[v].children.is_none()
    }

    pub fn label(&self, v: NodeId) -> Option<&str> {
        self.nodes[v].label.as_deref()
    }

    /// Time of the parent, or 0 (the origin) for the root.
    pub fn parent_time(&self, v: NodeId) -> f64 {
        self.nodes[v].parent.map_or(0.0, |p| self.nodes[p].time)
    }

    /// Length of the edge above `v`; for the root this is the root edge.
    pub fn branch_length(&self, v: NodeId) -> f64 {
        self.time(v) - self.parent_time(v)
    }

    pub fn root_edge_length(&self) -> f64 {
        self.time(self.root)
    }

    /// Leaf ids sorted by natural label order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut l: Vec<NodeId> = (0..self.nodes.len()).filter(|&v| self.is_leaf(v)).collect();
        l.sort_by(|&a, &b| natural_cmp(self.label(a).unwrap(), self.label(b).unwrap()));
        l
    }

    pub fn internal_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&v| !self.is_leaf(v)).collect()
    }

    pub fn leaf_labels(&self) -> Vec<String> {
        self.leaves().into_iter().map(|v| self.label(v).unwrap().to_string()).collect()
    }

    pub fn leaf_id(&self, label: &str) -> Result<NodeId> {
        (0..self.nodes.len())
            .find(|&v| self.is_leaf(v) && self.label(v) == Some(label))
            .ok_or_else(|| Error::UnknownLeaf(label.to_string()))
    }

    pub fn sibling(&self, v: NodeId) -> Option<NodeId> {
        let p = self.parent(v)?;
        let [a, b] = self.children(p)?;
        Some(if a == v { b } else { a })
    }

    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            out.push(v);
            if let Some([a, b]) = self.children(v) {
                stack.push(b);
                stack.push(a);
            }
        }
        out
    }

    pub fn postorder(&self) -> Vec<NodeId> {
        let mut out = self.preorder();
        out.reverse();
        out
    }

    /// Number of leaves below each node.
    pub fn leaf_counts(&self) -> Vec<usize> {
        let mut m = vec![0usize; self.nodes.len()];
        for v in self.postorder() {
            m[v] = match self.children(v) {
                None => 1,
                Some([a, b]) => m[a] + m[b],
            };
        }
        m
    }

    /// True when `a` is `b` or an ancestor of `b`.
    pub fn is_ancestor_or_self(&self, a: NodeId, b: NodeId) -> bool {
        let mut cur = Some(b);
        while let Some(v) = cur {
            if v == a {
                return true;
            }
            cur = self.parent(v);
        }
        false
    }

    pub fn mrca(&self, a: NodeId, b: NodeId) -> NodeId {
        let mut anc = vec![false; self.nodes.len()];
        let mut cur = Some(a);
        while let Some(v) = cur {
            anc[v] = true;
            cur = self.parent(v);
        }
        let mut cur = b;
        while !anc[cur] {
            cur = self.parent(cur).expect("nodes share the root");
        }
        cur
    }

    /// Time of the most recent common ancestor of two leaves, i.e. the length
    /// of the root path they share.
    pub fn path_shared_length(&self, leaf_a: &str, leaf_b: &str) -> Result<f64> {
        let a = self.leaf_id(leaf_a)?;
        let b = self.leaf_id(leaf_b)?;
        Ok(self.time(self.mrca(a, b)))
    }

    /// Replace leaf labels through `rename(old) -> new`, returning a
    /// canonical tree.
    pub fn relabel_leaves<F: Fn(&str) -> String>(&self, rename: F) -> Result<DdtTree> {
        let raw = self
            .nodes
            .iter()
            .map(|n| RawNode {
                time: n.time,
                children: n.children,
                label: n.label.as_deref().map(&rename),
            })
            .collect();
        DdtTree::from_raw(raw, self.root, 1)
    }

    /// Canonical copy (ids renumbered).
    pub fn canonical(&self) -> DdtTree {
        DdtTree::from_raw(self.to_raw(), self.root, 1).expect("valid tree stays valid")
    }

    fn to_raw(&self) -> Vec<RawNode> {
        self.nodes
            .iter()
            .map(|n| RawNode { time: n.time, children: n.children, label: n.label.clone() })
            .collect()
    }

    fn min_label_below(&self, v: NodeId) -> &str {
        match self.children(v) {
            None => self.label(v).unwrap(),
            Some([a, b]) => {
                let (la, lb) = (self.min_label_below(a), self.min_label_below(b));
                if natural_cmp(la, lb) != Ordering::Greater {
                    la
                } else {
                    lb
                }
            }
        }
    }

    fn ordered_children(&self, v: NodeId) -> Option<[NodeId; 2]> {
        self.children(v).map(|[a, b]| {
            if natural_cmp(self.min_label_below(a), self.min_label_below(b)) != Ordering::Greater {
                [a, b]
            } else {
                [b, a]
            }
        })
    }

    /// Structural equality with times compared to within `tol`.
    pub fn approx_eq(&self, other: &DdtTree, tol: f64) -> bool {
        fn rec(s: &DdtTree, a: NodeId, o: &DdtTree, b: NodeId, tol: f64) -> bool {
            if (s.time(a) - o.time(b)).abs() > tol {
                return false;
            }
            match (s.ordered_children(a), o.ordered_children(b)) {
                (None, None) => s.label(a) == o.label(b),
                (Some([a1, a2]), Some([b1, b2])) => {
                    rec(s, a1, o, b1, tol) && rec(s, a2, o, b2, tol)
                }
                _ => false,
            }
        }
        self.n_nodes() == other.n_nodes() && rec(self, self.root, other, other.root, tol)
    }

    /// Canonical Newick: children ordered by their smallest leaf label,
    /// branch lengths with 10 significant digits, root edge appended.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_newick(self.root, &mut out);
        let _ = write!(out, ":{};", format_length(self.root_edge_length()));
        out
    }

    fn write_newick(&self, v: NodeId, out: &mut String) {
        match self.ordered_children(v) {
            None => out.push_str(&quote_label(self.label(v).unwrap())),
            Some([a, b]) => {
                out.push('(');
                self.write_newick(a, out);
                let _ = write!(out, ":{}", format_length(self.branch_length(a)));
                out.push(',');
                self.write_newick(b, out);
                let _ = write!(out, ":{}", format_length(self.branch_length(b)));
                out.push(')');
            }
        }
    }

    /// Parse a single Newick tree with mandatory branch lengths.
    pub fn parse_newick(text: &str) -> Result<DdtTree> {
        let mut p = NewickParser { s: text.as_bytes(), pos: 0, nodes: Vec::new() };
        p.skip_ws();
        let root = p.subtree()?;
        p.skip_ws();
        let root_len = if p.peek() == Some(b':') {
            p.pos += 1;
            p.length()?
        } else {
            0.0
        };
        p.skip_ws();
        if p.peek() != Some(b';') {
            return Err(p.err("expected `;`"));
        }
        p.pos += 1;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.err("trailing characters after `;`"));
        }
        if root_len < 0.0 {
            return Err(Error::InvalidTree("negative root edge length".into()));
        }

        let parsed = p.nodes;
        let mut times = vec![0.0f64; parsed.len()];
        times[root] = root_len;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &c in &parsed[v].children {
                let len = parsed[c].length.ok_or_else(|| {
                    Error::InvalidTree(format!(
                        "missing branch length below node at byte {}",
                        parsed[c].position
                    ))
                })?;
                if len < 0.0 {
                    return Err(Error::InvalidTree(format!(
                        "negative branch length {len} at byte {}",
                        parsed[c].position
                    )));
                }
                times[c] = times[v] + len;
                stack.push(c);
            }
        }
        let mut raw = Vec::with_capacity(parsed.len());
        for (i, node) in parsed.iter().enumerate() {
            let children = match node.children.len() {
                0 => None,
                2 => Some([node.children[0], node.children[1]]),
                n => {
                    return Err(Error::InvalidTree(format!(
                        "non-binary node with {n} children at byte {}",
                        node.position
                    )))
                }
            };
            let mut time = times[i];
            if children.is_none() {
                if (time - 1.0).abs() > LEAF_DEPTH_TOLERANCE {
                    return Err(Error::InvalidTree(format!(
                        "leaf `{}` has depth {time}, expected 1",
                        node.label.as_deref().unwrap_or("?")
                    )));
                }
                time = 1.0;
            }
            raw.push(RawNode { time, children, label: node.label.clone() });
        }
        DdtTree::from_raw(raw, root, 2)
    }

    /// Prune the subtree below `node` (any non-root node). The remnant may be
    /// a single leaf.
    pub(crate) fn detach_inner(&self, x: NodeId) -> Result<SubtreeDetachment> {
        let p = self
            .parent(x)
            .ok_or_else(|| Error::InvalidEdit("cannot detach the root".into()))?;
        let sib = self.sibling(x).unwrap();
        let grand = self.parent(p);

        let mut in_sub = vec![false; self.nodes.len()];
        let mut stack = vec![x];
        while let Some(v) = stack.pop() {
            in_sub[v] = true;
            if let Some(ch) = self.children(v) {
                stack.extend(ch);
            }
        }

        // remnant: every node outside the subtree except p
        let keep: Vec<NodeId> =
            (0..self.nodes.len()).filter(|&v| !in_sub[v] && v != p).collect();
        let mut idx = vec![usize::MAX; self.nodes.len()];
        for (i, &v) in keep.iter().enumerate() {
            idx[v] = i;
        }
        let raw_remnant: Vec<RawNode> = keep
            .iter()
            .map(|&v| {
                let n = &self.nodes[v];
                let children = n.children.map(|[a, b]| {
                    let a = if a == p { sib } else { a };
                    let b = if b == p { sib } else { b };
                    [idx[a], idx[b]]
                });
                RawNode { time: n.time, children, label: n.label.clone() }
            })
            .collect();
        let remnant_root = if grand.is_none() { idx[sib] } else { idx[self.root] };
        let (remnant, rmap) = DdtTree::from_raw_with_map(raw_remnant, remnant_root, 1)?;
        let remnant_origin: Vec<NodeId> = rmap.iter().map(|&i| keep[i]).collect();
        let attach_edge = remnant_origin.iter().position(|&v| v == sib).unwrap();

        let sub: Vec<NodeId> = (0..self.nodes.len()).filter(|&v| in_sub[v]).collect();
        let mut sidx = vec![usize::MAX; self.nodes.len()];
        for (i, &v) in sub.iter().enumerate() {
            sidx[v] = i;
        }
        let raw_sub: Vec<RawNode> = sub
            .iter()
            .map(|&v| {
                let n = &self.nodes[v];
                RawNode {
                    time: n.time,
                    children: n.children.map(|[a, b]| [sidx[a], sidx[b]]),
                    label: n.label.clone(),
                }
            })
            .collect();
        let (subtree, smap) = DdtTree::from_raw_with_map(raw_sub, sidx[x], 1)?;
        let subtree_origin = smap.iter().map(|&i| sub[i]).collect();

        Ok(SubtreeDetachment {
            remnant,
            subtree,
            attach_edge,
            attach_time: self.time(p),
            remnant_origin,
            subtree_origin,
        })
    }

    /// Move subtree `x` (together with its parent node) onto the edge above
    /// `w` at time `time`. Node ids are preserved; the parent of `x` becomes the
    /// new attachment node.
    pub fn regraft(&mut self, x: NodeId, w: NodeId, time: f64) -> Result<()> {
        let p = self
            .parent(x)
            .ok_or_else(|| Error::InvalidEdit("cannot move the root".into()))?;
        if w == p || self.is_ancestor_or_self(x, w) {
            return Err(Error::InvalidEdit("target edge lies inside the moved subtree".into()));
        }
        let sib = self.sibling(x).unwrap();
        let lower = if w == sib {
            self.parent_time(p)
        } else {
            self.parent_time(w)
        };
        let upper = self.time(w);
        let lower_ok = if w == sib && self.parent(p).is_none() || w != sib && self.parent(w).is_none() {
            time >= lower
        } else {
            time > lower
        };
        if !(lower_ok && time < upper) {
            return Err(Error::InvalidEdit(format!(
                "time {time} outside edge interval ({lower}, {upper})"
            )));
        }
        if time >= self.time(x) {
            return Err(Error::InvalidEdit(format!(
                "time {time} is not before the subtree root at {}",
                self.time(x)
            )));
        }

        // unlink p
        let grand = self.parent(p);
        match grand {
            Some(g) => self.replace_child(g, p, sib),
            None => self.root = sib,
        }
        self.nodes[sib].parent = grand;

        // insert p above w
        let wp = self.parent(w);
        match wp {
            Some(g) => self.replace_child(g, w, p),
            None => self.root = p,
        }
        self.nodes[p].parent = wp;
        self.nodes[p].time = time;
        self.nodes[p].children = Some([w, x]);
        self.nodes[w].parent = Some(p);
        self.nodes[x].parent = Some(p);
        Ok(())
    }

    fn replace_child(&mut self, parent: NodeId, old: NodeId, new: NodeId) {
        if let Some(ch) = self.nodes[parent].children.as_mut() {
            for c in ch.iter_mut() {
                if *c == old {
                    *c = new;
                }
            }
        }
    }

    /// Insert a new leaf with a parent at `time` on the edge above `w`.
    /// Returns the (leaf, new internal) ids. The tree is left in arena order.
    pub(crate) fn insert_leaf(&mut self, w: NodeId, time: f64, label: String) -> (NodeId, NodeId) {
        let leaf = self.nodes.len();
        let node = leaf + 1;
        let wp = self.parent(w);
        self.nodes.push(Node { time: 1.0, parent: Some(node), children: None, label: Some(label) });
        self.nodes.push(Node { time, parent: wp, children: Some([w, leaf]), label: None });
        match wp {
            Some(g) => self.replace_child(g, w, node),
            None => self.root = node,
        }
        self.nodes[w].parent = Some(node);
        (leaf, node)
    }

    pub(crate) fn single_leaf(label: String) -> DdtTree {
        DdtTree {
            nodes: vec![Node { time: 1.0, parent: None, children: None, label: Some(label) }],
            root: 0,
        }
    }
}

impl PartialEq for DdtTree {
    fn eq(&self, other: &Self) -> bool {
        self.approx_eq(other, 0.0)
    }
}

impl std::fmt::Display for DdtTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_newick())
    }
}

impl std::str::FromStr for DdtTree {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DdtTree::parse_newick(s)
    }
}

/// Prune the subtree below `node`. Requires at least three leaves so that
/// the remnant is itself a tree.
pub fn detach_subtree(tree: &DdtTree, node: NodeId) -> Result<SubtreeDetachment> {
    if node >= tree.n_nodes() {
        return Err(Error::InvalidEdit(format!("no node {node}")));
    }
    if node == tree.root() {
        return Err(Error::InvalidEdit("cannot detach the root".into()));
    }
    if tree.n_leaves() < 3 {
        return Err(Error::InvalidEdit("detaching from a tree with fewer than 3 leaves".into()));
    }
    tree.detach_inner(node)
}

/// Graft `subtree` onto the edge above remnant node `edge` at `time`.
pub fn attach_subtree(
    remnant: &DdtTree,
    subtree: &DdtTree,
    edge: NodeId,
    time: f64,
) -> Result<DdtTree> {
    if edge >= remnant.n_nodes() {
        return Err(Error::InvalidEdit(format!("no remnant node {edge}")));
    }
    let lower = remnant.parent_time(edge);
    let lower_ok = if remnant.parent(edge).is_none() { time >= lower } else { time > lower };
    if !(lower_ok && time < remnant.time(edge)) {
        return Err(Error::InvalidEdit(format!(
            "time {time} outside edge interval ({lower}, {})",
            remnant.time(edge)
        )));
    }
    if time >= subtree.time(subtree.root()) {
        return Err(Error::InvalidEdit(format!(
            "time {time} is not before the subtree's first divergence at {}",
            subtree.time(subtree.root())
        )));
    }
    let off = remnant.n_nodes();
    let new = off + subtree.n_nodes();
    let mut raw = remnant.to_raw();
    for r in raw.iter_mut() {
        if let Some(ch) = r.children.as_mut() {
            for c in ch.iter_mut() {
                if *c == edge {
                    *c = new;
                }
            }
        }
    }
    raw.extend(subtree.nodes.iter().map(|n| RawNode {
        time: n.time,
        children: n.children.map(|[a, b]| [a + off, b + off]),
        label: n.label.clone(),
    }));
    raw.push(RawNode { time, children: Some([edge, subtree.root() + off]), label: None });
    let root = if edge == remnant.root() { new } else { remnant.root() };
    DdtTree::from_raw(raw, root, 2)
}

fn quote_label(label: &str) -> String {
    if label.bytes().any(|c| b"()[]':;, \t\n".contains(&c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

fn raw_postorder(raw: &[RawNode], root: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(raw.len());
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        out.push(v);
        if let Some(ch) = raw[v].children {
            stack.extend(ch);
        }
    }
    out.reverse();
    out
}

struct ParsedNode {
    children: Vec<usize>,
    label: Option<String>,
    length: Option<f64>,
    position: usize,
}

struct NewickParser<'a> {
    s: &'a [u8],
    pos: usize,
    nodes: Vec<ParsedNode>,
}

impl NewickParser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::NewickSyntax { position: self.pos, message: msg.to_string() }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    while let Some(c) = self.peek() {
                        self.pos += 1;
                        if c == b']' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn subtree(&mut self) -> Result<usize> {
        self.skip_ws();
        let position = self.pos;
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                let c = self.subtree()?;
                self.skip_ws();
                if self.peek() == Some(b':') {
                    self.pos += 1;
                    let len = self.length()?;
                    self.nodes[c].length = Some(len);
                    self.skip_ws();
                }
                children.push(c);
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected `,` or `)`")),
                }
            }
        }
        self.skip_ws();
        let label = self.label()?;
        if children.is_empty() && label.is_none() {
            return Err(self.err("expected a leaf label or `(`"));
        }
        self.nodes.push(ParsedNode { children, label, length: None, position });
        Ok(self.nodes.len() - 1)
    }

    fn label(&mut self) -> Result<Option<String>> {
        if self.peek() == Some(b'\'') {
            self.pos += 1;
            let mut out = Vec::new();
            loop {
                match self.peek() {
                    None => return Err(self.err("unterminated quoted label")),
                    Some(b'\'') => {
                        if self.s.get(self.pos + 1) == Some(&b'\'') {
                            out.push(b'\'');
                            self.pos += 2;
                        } else {
                            self.pos += 1;
                            break;
                        }
                    }
                    Some(c) => {
                        out.push(c);
                        self.pos += 1;
                    }
                }
            }
            return String::from_utf8(out)
                .map(Some)
                .map_err(|_| self.err("label is not valid UTF-8"));
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if b"()[]':;,".contains(&c) || c.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Ok(None);
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .map(|s| Some(s.to_string()))
            .map_err(|_| self.err("label is not valid UTF-8"))
    }

    fn length(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || b"+-.eE".contains(&c) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        let v: f64 = text.parse().map_err(|_| Error::NewickSyntax {
            position: start,
            message: format!("invalid branch length `{text}`"),
        })?;
        if !v.is_finite() {
            return Err(Error::NewickSyntax { position: start, message: "non-finite length".into() });
        }
        Ok(v)
    }
}


impl serde::Serialize for DdtTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_newick())
    }
}

impl<'de> serde::Deserialize<'de> for DdtTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        DdtTree::parse_newick(&s).map_err(serde::de::Error::custom)
    }
}
