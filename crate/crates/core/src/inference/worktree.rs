//! Mutable arena tree used inside chains: leaves carry their member rows so
//! local moves only touch the points they affect.

use crate::data::Dataset;
use crate::partition::{SplitRule, TreePartition};

pub(crate) const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) struct WNode {
    pub rule: Option<SplitRule>,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct WorkTree {
    pub nodes: Vec<WNode>,
    /// Member rows of every leaf (empty for internal and freed nodes).
    pub members: Vec<Vec<u32>>,
    /// Step height of every leaf.
    pub beta: Vec<f64>,
    free: Vec<usize>,
}

impl WorkTree {
    pub fn stump(n: usize) -> Self {
        Self {
            nodes: vec![WNode { rule: None, left: NONE, right: NONE }],
            members: vec![(0..n as u32).collect()],
            beta: vec![0.0],
            free: Vec::new(),
        }
    }

    #[cfg(test)]
    /// Builds from a partition; `None` if some node is outside the support
    /// or a leaf has fewer than `min_size` points.
    pub fn from_partition(tree: &TreePartition, data: &Dataset, min_size: usize) -> Option<Self> {
        let mut wt = Self::stump(data.n());
        fn copy(wt: &mut WorkTree, t: &TreePartition, src: usize, dst: usize) {
            if let crate::partition::Node::Split { rule, left, right } = &t.nodes()[src] {
                let (l, r) = wt.attach(dst, *rule);
                copy(wt, t, *left, l);
                copy(wt, t, *right, r);
            }
        }
        copy(&mut wt, tree, 0, 0);
        let all = std::mem::take(&mut wt.members[0]);
        wt.reroute(0, all, data, min_size).then_some(wt)
    }

    #[inline]
    pub fn is_leaf(&self, u: usize) -> bool {
        self.nodes[u].rule.is_none()
    }

    fn alloc(&mut self) -> usize {
        let node = WNode { rule: None, left: NONE, right: NONE };
        if let Some(u) = self.free.pop() {
            self.nodes[u] = node;
            self.members[u].clear();
            self.beta[u] = 0.0;
            u
        } else {
            self.nodes.push(node);
            self.members.push(Vec::new());
            self.beta.push(0.0);
            self.nodes.len() - 1
        }
    }

    /// Turns leaf `u` into a split with two empty leaves.
    fn attach(&mut self, u: usize, rule: SplitRule) -> (usize, usize) {
        let l = self.alloc();
        let r = self.alloc();
        self.nodes[u].rule = Some(rule);
        self.nodes[u].left = l;
        self.nodes[u].right = r;
        (l, r)
    }

    /// Splits leaf `u` with the given member lists for the children.
    pub fn grow(&mut self, u: usize, rule: SplitRule, left: Vec<u32>, right: Vec<u32>) -> (usize, usize) {
        self.members[u].clear();
        let (l, r) = self.attach(u, rule);
        self.members[l] = left;
        self.members[r] = right;
        (l, r)
    }

    /// Collapses `u`, whose children must be leaves; returns their member lists.
    pub fn prune(&mut self, u: usize) -> (SplitRule, Vec<u32>, Vec<u32>) {
        let (l, r) = (self.nodes[u].left, self.nodes[u].right);
        debug_assert!(self.is_leaf(l) && self.is_leaf(r));
        let lm = std::mem::take(&mut self.members[l]);
        let rm = std::mem::take(&mut self.members[r]);
        let rule = self.nodes[u].rule.take().expect("internal node");
        self.nodes[u].left = NONE;
        self.nodes[u].right = NONE;
        self.members[u] = lm.iter().chain(&rm).copied().collect();
        self.free.push(l);
        self.free.push(r);
        (rule, lm, rm)
    }

    fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            out.push(u);
            if !self.is_leaf(u) {
                stack.push(self.nodes[u].right);
                stack.push(self.nodes[u].left);
            }
        }
        out
    }

    /// Leaves left to right.
    pub fn leaves(&self) -> Vec<usize> {
        self.preorder().into_iter().filter(|&u| self.is_leaf(u)).collect()
    }

    pub fn internals(&self) -> Vec<usize> {
        self.preorder().into_iter().filter(|&u| !self.is_leaf(u)).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    /// Internal nodes whose children are both leaves.
    pub fn prunable(&self) -> Vec<usize> {
        self.internals()
            .into_iter()
            .filter(|&u| self.is_leaf(self.nodes[u].left) && self.is_leaf(self.nodes[u].right))
            .collect()
    }

    /// (parent, child) pairs of internal nodes.
    pub fn internal_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in self.internals() {
            for c in [self.nodes[u].left, self.nodes[u].right] {
                if !self.is_leaf(c) {
                    out.push((u, c));
                }
            }
        }
        out
    }

    pub fn add_axis_counts(&self, counts: &mut [usize]) {
        for u in self.internals() {
            counts[self.nodes[u].rule.expect("internal").axis] += 1;
        }
    }

    pub fn axis_counts(&self, p: usize) -> Vec<usize> {
        let mut c = vec![0; p];
        self.add_axis_counts(&mut c);
        c
    }

    /// `ln` of the number of split orders producing this shape.
    pub fn log_ext(&self) -> f64 {
        let order = self.preorder();
        let mut h = vec![0usize; self.nodes.len()];
        let mut log_h = 0.0;
        let mut m = 0usize;
        for &u in order.iter().rev() {
            if !self.is_leaf(u) {
                h[u] = 1 + h[self.nodes[u].left] + h[self.nodes[u].right];
                log_h += (h[u] as f64).ln();
                m += 1;
            }
        }
        (2..=m).map(|k| (k as f64).ln()).sum::<f64>() - log_h
    }

    /// Rows in the subtree of `u`.
    pub fn subtree_members(&self, u: usize) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![u];
        while let Some(w) = stack.pop() {
            if self.is_leaf(w) {
                out.extend_from_slice(&self.members[w]);
            } else {
                stack.push(self.nodes[w].right);
                stack.push(self.nodes[w].left);
            }
        }
        out
    }

    /// Leaves in the subtree of `u`.
    pub fn subtree_leaves(&self, u: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![u];
        while let Some(w) = stack.pop() {
            if self.is_leaf(w) {
                out.push(w);
            } else {
                stack.push(self.nodes[w].right);
                stack.push(self.nodes[w].left);
            }
        }
        out
    }

    /// Redistributes `members` below `u` by the current rules. Returns false
    /// if some internal node's threshold is not the value of one of its
    /// members, a node has an empty child, or a leaf gets fewer than
    /// `min_size` rows. Members are left in place either way.
    pub fn reroute(&mut self, u: usize, members: Vec<u32>, data: &Dataset, min_size: usize) -> bool {
        match self.nodes[u].rule {
            None => {
                let ok = members.len() >= min_size.max(1);
                self.members[u] = members;
                ok
            }
            Some(rule) => {
                let mut hit = false;
                let (l, r): (Vec<u32>, Vec<u32>) = members.into_iter().partition(|&i| {
                    let x = data.x(i as usize, rule.axis);
                    hit |= x == rule.threshold;
                    x <= rule.threshold
                });
                let ok_here = hit && !r.is_empty();
                let (lu, ru) = (self.nodes[u].left, self.nodes[u].right);
                let ok_l = self.reroute(lu, l, data, min_size);
                let ok_r = self.reroute(ru, r, data, min_size);
                ok_here && ok_l && ok_r
            }
        }
    }

    pub fn to_partition(&self) -> TreePartition {
        fn go(wt: &WorkTree, u: usize) -> TreePartition {
            match wt.nodes[u].rule {
                None => TreePartition::leaf(),
                Some(rule) => TreePartition::split(rule, go(wt, wt.nodes[u].left), go(wt, wt.nodes[u].right)),
            }
        }
        go(self, 0)
    }

    /// Step heights in leaf order.
    pub fn leaf_betas(&self) -> Vec<f64> {
        self.leaves().into_iter().map(|u| self.beta[u]).collect()
    }

    /// Adds `sign · β_leaf(i)` to `out[i]` for every row.
    pub fn add_fit(&self, out: &mut [f64], sign: f64) {
        for u in self.leaves() {
            let b = sign * self.beta[u];
            for &i in &self.members[u] {
                out[i as usize] += b;
            }
        }
    }

    /// Canonical cells of the induced partition.
    pub fn canonical_cells(&self) -> Vec<Vec<usize>> {
        let mut cells: Vec<Vec<usize>> = self
            .leaves()
            .into_iter()
            .map(|u| {
                let mut m: Vec<usize> = self.members[u].iter().map(|&i| i as usize).collect();
                m.sort_unstable();
                m
            })
            .filter(|m| !m.is_empty())
            .collect();
        cells.sort_by_key(|c| c[0]);
        cells
    }
}

/// Distinct values of `axis` among `members`, ascending, without the largest.
pub(crate) fn candidates(data: &Dataset, members: &[u32], axis: usize) -> Vec<f64> {
    let mut v: Vec<f64> = members.iter().map(|&i| data.x(i as usize, axis)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.pop();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grow_prune_round_trip_and_ext() {
        let d = Dataset::new(4, 1, vec![0.1, 0.4, 0.6, 0.9], vec![0.0; 4]).unwrap();
        let mut wt = WorkTree::stump(4);
        wt.grow(0, SplitRule::new(0, 0.4), vec![0, 1], vec![2, 3]);
        let (l, r) = (wt.nodes[0].left, wt.nodes[0].right);
        wt.grow(l, SplitRule::new(0, 0.1), vec![0], vec![1]);
        wt.grow(r, SplitRule::new(0, 0.6), vec![2], vec![3]);
        assert_eq!(wt.leaf_count(), 4);
        assert!((wt.log_ext() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(wt.to_partition().to_string(), "(0:0.4 (0:0.1 * *) (0:0.6 * *))");
        assert_eq!(wt.prunable().len(), 2);
        wt.prune(l);
        assert_eq!(wt.leaf_count(), 3);
        let back = WorkTree::from_partition(&wt.to_partition(), &d, 1).unwrap();
        assert_eq!(back.canonical_cells(), wt.canonical_cells());
    }

    #[test]
    fn reroute_rejects_thresholds_outside_node() {
        let d = Dataset::new(4, 1, vec![0.1, 0.4, 0.6, 0.9], vec![0.0; 4]).unwrap();
        let t: TreePartition = "(0:0.4 * (0:0.1 * *))".parse().unwrap();
        assert!(WorkTree::from_partition(&t, &d, 1).is_none());
        assert_eq!(candidates(&d, &[0, 1, 2, 3], 0), vec![0.1, 0.4, 0.6]);
    }
}
