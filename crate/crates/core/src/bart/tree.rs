use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary split `x[feature] < threshold` goes left.
///
/// `cut` indexes the threshold in the training cut grid of `feature`; the
/// sampler uses it to reason about which rules a node's data admits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    pub cut: u32,
    pub threshold: f64,
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, row: &[f64]) -> bool {
        row[self.feature] < self.threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf { value: f64 },
    Split { rule: SplitRule, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub parent: Option<usize>,
    pub depth: usize,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// A regression tree stored as an arena rooted at slot 0.
///
/// Pruning vacates slots; growing reuses them. [`Tree::compact`] renumbers
/// the live nodes in depth-first order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    slots: Vec<Option<Node>>,
}

impl Tree {
    pub fn stump(value: f64) -> Self {
        Tree {
            slots: vec![Some(Node {
                parent: None,
                depth: 0,
                kind: NodeKind::Leaf { value },
            })],
        }
    }

    /// Rebuild from a dense node list (slot `i` holds `nodes[i]`), checking
    /// that the links form a single binary tree rooted at 0.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Invariant("tree has no nodes".into()));
        }
        let tree = Tree {
            slots: nodes.into_iter().map(Some).collect(),
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        let root = self.node(0);
        if root.parent.is_some() || root.depth != 0 {
            return Err(Error::Invariant("root must have no parent and depth 0".into()));
        }
        let mut seen = vec![false; self.slots.len()];
        let mut stack = vec![0usize];
        let (mut leaves, mut internal) = (0usize, 0usize);
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::Invariant(format!("node {id} reachable twice")));
            }
            let node = self.slots[id]
                .as_ref()
                .ok_or_else(|| Error::Invariant(format!("link to vacant node {id}")))?;
            match node.kind {
                NodeKind::Leaf { .. } => leaves += 1,
                NodeKind::Split { left, right, .. } => {
                    internal += 1;
                    for child in [left, right] {
                        let c = self
                            .slots
                            .get(child)
                            .and_then(|s| s.as_ref())
                            .ok_or_else(|| Error::Invariant(format!("node {id} links to missing {child}")))?;
                        if c.parent != Some(id) || c.depth != node.depth + 1 {
                            return Err(Error::Invariant(format!("bad parent/depth at node {child}")));
                        }
                        stack.push(child);
                    }
                }
            }
        }
        if seen.iter().zip(&self.slots).any(|(s, n)| n.is_some() && !s) {
            return Err(Error::Invariant("unreachable live node".into()));
        }
        if leaves != internal + 1 {
            return Err(Error::Invariant("leaf count must equal internal count + 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn node(&self, id: usize) -> &Node {
        self.slots[id].as_ref().expect("live node")
    }

    fn node_mut(&mut self, id: usize) -> &mut Node {
        self.slots[id].as_mut().expect("live node")
    }

    /// Number of arena slots (live or vacant); node ids are below this.
    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|n| (i, n)))
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes().filter(|(_, n)| n.is_leaf()).map(|(i, _)| i)
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes().filter(|(_, n)| !n.is_leaf()).map(|(i, _)| i)
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn n_internal(&self) -> usize {
        self.internal_nodes().count()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes().map(|(_, n)| n.depth).max().unwrap_or(0)
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match self.node(id).kind {
            NodeKind::Split { left, right, .. } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn rule(&self, id: usize) -> Option<&SplitRule> {
        match &self.node(id).kind {
            NodeKind::Split { rule, .. } => Some(rule),
            NodeKind::Leaf { .. } => None,
        }
    }

    /// Internal nodes whose two children are both leaves.
    pub fn prunable(&self) -> impl Iterator<Item = usize> + '_ {
        self.internal_nodes().filter(|&id| {
            let (l, r) = self.children(id).expect("internal");
            self.node(l).is_leaf() && self.node(r).is_leaf()
        })
    }

    /// (parent, child) pairs where both are internal.
    pub fn swappable_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for id in self.internal_nodes() {
            let (l, r) = self.children(id).expect("internal");
            for c in [l, r] {
                if !self.node(c).is_leaf() {
                    out.push((id, c));
                }
            }
        }
        out
    }

    /// Leaf reached by `row`.
    #[inline]
    pub fn leaf_for(&self, row: &[f64]) -> usize {
        self.leaf_from(0, row)
    }

    #[inline]
    pub fn leaf_from(&self, start: usize, row: &[f64]) -> usize {
        let mut id = start;
        loop {
            match self.node(id).kind {
                NodeKind::Leaf { .. } => return id,
                NodeKind::Split { rule, left, right } => {
                    id = if rule.goes_left(row) { left } else { right };
                }
            }
        }
    }

    #[inline]
    pub fn leaf_value(&self, id: usize) -> f64 {
        match self.node(id).kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    pub fn set_leaf_value(&mut self, id: usize, v: f64) {
        match &mut self.node_mut(id).kind {
            NodeKind::Leaf { value } => *value = v,
            NodeKind::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.leaf_value(self.leaf_for(row))
    }

    /// Is `id` inside the subtree rooted at `root`?
    pub fn in_subtree(&self, root: usize, mut id: usize) -> bool {
        loop {
            if id == root {
                return true;
            }
            match self.node(id).parent {
                Some(p) => id = p,
                None => return false,
            }
        }
    }

    /// Node ids of the subtree rooted at `root`, parents before children.
    pub fn subtree(&self, root: usize) -> Vec<usize> {
        let mut out = vec![root];
        let mut i = 0;
        while i < out.len() {
            if let Some((l, r)) = self.children(out[i]) {
                out.push(l);
                out.push(r);
            }
            i += 1;
        }
        out
    }

    fn alloc(&mut self, node: Node) -> usize {
        if let Some(i) = self.slots.iter().position(|s| s.is_none()) {
            self.slots[i] = Some(node);
            i
        } else {
            self.slots.push(Some(node));
            self.slots.len() - 1
        }
    }

    /// Turn leaf `id` into a split with two fresh leaves. Returns (left, right).
    pub fn grow(&mut self, id: usize, rule: SplitRule) -> (usize, usize) {
        let depth = self.node(id).depth;
        assert!(self.node(id).is_leaf(), "grow on internal node {id}");
        let child = Node {
            parent: Some(id),
            depth: depth + 1,
            kind: NodeKind::Leaf { value: 0.0 },
        };
        let left = self.alloc(child.clone());
        let right = self.alloc(child);
        self.node_mut(id).kind = NodeKind::Split { rule, left, right };
        (left, right)
    }

    /// Collapse a split whose children are both leaves.
    pub fn prune(&mut self, id: usize) {
        let (l, r) = self.children(id).expect("prune on a leaf");
        assert!(self.node(l).is_leaf() && self.node(r).is_leaf(), "prune needs two leaf children");
        self.slots[l] = None;
        self.slots[r] = None;
        self.node_mut(id).kind = NodeKind::Leaf { value: 0.0 };
        while matches!(self.slots.last(), Some(None)) {
            self.slots.pop();
        }
    }

    pub fn set_rule(&mut self, id: usize, new_rule: SplitRule) {
        match &mut self.node_mut(id).kind {
            NodeKind::Split { rule, .. } => *rule = new_rule,
            NodeKind::Leaf { .. } => panic!("set_rule on leaf {id}"),
        }
    }

    /// Depth-first renumbering with no vacant slots.
    pub fn compact(&self) -> Tree {
        let mut order = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            order.push(id);
            if let Some((l, r)) = self.children(id) {
                stack.push(r);
                stack.push(l);
            }
        }
        let mut remap = vec![usize::MAX; self.slots.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let slots = order
            .iter()
            .map(|&old| {
                let n = self.node(old);
                Some(Node {
                    parent: n.parent.map(|p| remap[p]),
                    depth: n.depth,
                    kind: match n.kind {
                        NodeKind::Leaf { value } => NodeKind::Leaf { value },
                        NodeKind::Split { rule, left, right } => NodeKind::Split {
                            rule,
                            left: remap[left],
                            right: remap[right],
                        },
                    },
                })
            })
            .collect();
        Tree { slots }
    }

    /// Dense node list; only meaningful for a compacted tree.
    pub fn to_nodes(&self) -> Vec<Node> {
        self.compact().slots.into_iter().map(|n| n.expect("compacted")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(f: usize, t: f64) -> SplitRule {
        SplitRule {
            feature: f,
            cut: 0,
            threshold: t,
        }
    }

    #[test]
    fn grow_prune_roundtrip() {
        let mut t = Tree::stump(1.5);
        let (l, r) = t.grow(0, rule(0, 0.5));
        t.set_leaf_value(l, -1.0);
        t.set_leaf_value(r, 2.0);
        t.validate().unwrap();
        assert_eq!(t.predict(&[0.2]), -1.0);
        assert_eq!(t.predict(&[0.5]), 2.0, "ties route right");
        assert_eq!(t.prunable().collect::<Vec<_>>(), vec![0]);
        t.grow(r, rule(0, 0.8));
        assert_eq!(t.swappable_pairs(), vec![(0, r)]);
        assert_eq!(t.n_leaves(), t.n_internal() + 1);
        let c = t.compact();
        c.validate().unwrap();
        assert_eq!(c.predict(&[0.9]), t.predict(&[0.9]));
        t.prune(r);
        t.prune(0);
        assert_eq!(t.capacity(), 1);
        t.validate().unwrap();
    }

    #[test]
    fn from_nodes_rejects_broken_links() {
        let t = {
            let mut t = Tree::stump(0.0);
            t.grow(0, rule(1, 2.0));
            t
        };
        let mut nodes = t.to_nodes();
        Tree::from_nodes(nodes.clone()).unwrap();
        nodes[1].parent = None;
        assert!(Tree::from_nodes(nodes).is_err());
    }
}
