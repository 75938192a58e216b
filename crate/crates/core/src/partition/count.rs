use std::collections::BTreeMap;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::cells::min_leaf_size;
use super::tree::{SplitRule, TreePartition};
use crate::data::Dataset;
use crate::error::{usage, Error, Result};

/// Default cap on split sequences visited by [`enumerate_valid_trees`].
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// `Δ(n, q, K) = q^{K−1} · n! / (n−K+1)!`, the number of split sequences
/// producing a `K`-leaf tree on `q` axes and `n` points, exactly.
pub fn partitioning_number(n: usize, q: usize, k: usize) -> Result<BigUint> {
    if k == 0 {
        return usage("a tree has at least one leaf");
    }
    if k > n {
        return usage(format!("K = {k} exceeds n = {n}"));
    }
    let mut acc = BigUint::from(1u32);
    for step in 2..=k {
        acc *= BigUint::from(n - step + 2) * BigUint::from(q);
    }
    Ok(acc)
}

/// `ln Δ(n, q, K)`; `−∞` when `q = 0 < K − 1`.
pub fn log_partitioning_number(n: usize, q: usize, k: usize) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    if q == 0 {
        return f64::NEG_INFINITY;
    }
    (k - 1) as f64 * (q as f64).ln() + ln_gamma((n + 1) as f64) - ln_gamma((n - k + 2) as f64)
}

/// One distinct data partition found by enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedPartition {
    /// First tree (in search order) that induces the partition.
    pub tree: TreePartition,
    /// Canonical cells: members ascending, cells ordered by smallest member.
    pub cells: Vec<Vec<usize>>,
    /// Number of valid split sequences inducing this partition.
    pub multiplicity: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    pub partitions: Vec<EnumeratedPartition>,
    /// Valid complete split sequences counted (sum of multiplicities).
    pub sequences: u64,
}

/// Exhaustively enumerates valid `K`-leaf trees over the axes in `s` that
/// split on every axis of `s` at least once.
///
/// A step picks a leaf, an axis in `s` and a threshold among the distinct
/// in-leaf values of that axis other than the largest (which would leave an
/// empty child). Branches where a child drops below `Cbar²` points are cut.
/// Results are grouped by the induced partition of row indices and sorted by
/// canonical cells. Fails once more than `cap` split sequences have been seen.
pub fn enumerate_valid_trees(data: &Dataset, s: &[usize], k: usize, cbar: u32, cap: u64) -> Result<Enumeration> {
    let mut axes = s.to_vec();
    axes.sort_unstable();
    axes.dedup();
    if let Some(&a) = axes.iter().find(|&&a| a >= data.p()) {
        return usage(format!("axis {a} outside p = {}", data.p()));
    }
    if k == 0 || k > data.n() {
        return usage(format!("K = {k} must lie in 1..={}", data.n()));
    }
    if axes.is_empty() != (k == 1) {
        // K = 1 uses no axis; K > 1 needs at least one.
        return Ok(Enumeration { partitions: Vec::new(), sequences: 0 });
    }
    let mut e = Enumerator {
        data,
        axes: &axes,
        target: k,
        min_size: min_leaf_size(cbar),
        cap,
        nodes: vec![ANode::Leaf],
        leaves: vec![(0, (0..data.n()).collect())],
        axis_uses: vec![0; axes.len()],
        found: BTreeMap::new(),
        sequences: 0,
    };
    if e.leaves[0].1.len() < e.min_size {
        return Ok(Enumeration { partitions: Vec::new(), sequences: 0 });
    }
    e.search()?;
    let sequences = e.sequences;
    let partitions = e
        .found
        .into_iter()
        .map(|(cells, (tree, multiplicity))| EnumeratedPartition { tree, cells, multiplicity })
        .collect();
    Ok(Enumeration { partitions, sequences })
}

#[derive(Clone)]
enum ANode {
    Leaf,
    Split(SplitRule, usize, usize),
}

struct Enumerator<'a> {
    data: &'a Dataset,
    axes: &'a [usize],
    target: usize,
    min_size: usize,
    cap: u64,
    nodes: Vec<ANode>,
    leaves: Vec<(usize, Vec<usize>)>,
    axis_uses: Vec<usize>,
    found: BTreeMap<Vec<Vec<usize>>, (TreePartition, u64)>,
    sequences: u64,
}

impl Enumerator<'_> {
    fn search(&mut self) -> Result<()> {
        if self.leaves.len() == self.target {
            if self.axis_uses.iter().all(|&u| u > 0) {
                self.record()?;
            }
            return Ok(());
        }
        for li in 0..self.leaves.len() {
            for ai in 0..self.axes.len() {
                let axis = self.axes[ai];
                let members = &self.leaves[li].1;
                let mut values: Vec<f64> = members.iter().map(|&i| self.data.x(i, axis)).collect();
                values.sort_by(f64::total_cmp);
                values.dedup();
                values.pop();
                for tau in values {
                    let (left, right): (Vec<usize>, Vec<usize>) =
                        self.leaves[li].1.iter().partition(|&&i| self.data.x(i, axis) <= tau);
                    if left.len() < self.min_size || right.len() < self.min_size {
                        continue;
                    }
                    // apply
                    let node = self.leaves[li].0;
                    let (l, r) = (self.nodes.len(), self.nodes.len() + 1);
                    self.nodes.push(ANode::Leaf);
                    self.nodes.push(ANode::Leaf);
                    self.nodes[node] = ANode::Split(SplitRule::new(axis, tau), l, r);
                    let saved = std::mem::replace(&mut self.leaves[li], (l, left));
                    self.leaves.push((r, right));
                    self.axis_uses[ai] += 1;
                    let res = self.search();
                    // undo
                    self.axis_uses[ai] -= 1;
                    self.leaves.pop();
                    self.leaves[li] = saved;
                    self.nodes[node] = ANode::Leaf;
                    self.nodes.truncate(l);
                    res?;
                }
            }
        }
        Ok(())
    }

    fn record(&mut self) -> Result<()> {
        self.sequences += 1;
        if self.sequences > self.cap {
            return Err(Error::Usage(format!("enumeration exceeded the cap of {} split sequences", self.cap)));
        }
        let mut cells: Vec<Vec<usize>> = self
            .leaves
            .iter()
            .map(|(_, m)| {
                let mut m = m.clone();
                m.sort_unstable();
                m
            })
            .collect();
        cells.sort_by_key(|c| c[0]);
        if let Some(entry) = self.found.get_mut(&cells) {
            entry.1 += 1;
        } else {
            let tree = self.to_tree(0);
            self.found.insert(cells, (tree, 1));
        }
        Ok(())
    }

    fn to_tree(&self, node: usize) -> TreePartition {
        match &self.nodes[node] {
            ANode::Leaf => TreePartition::leaf(),
            ANode::Split(rule, l, r) => TreePartition::split(*rule, self.to_tree(*l), self.to_tree(*r)),
        }
    }
}
