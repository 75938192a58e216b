use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{usage, Error, Result};

/// Axis-aligned split `x[axis] <= threshold` (left) versus `>` (right).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub axis: usize,
    pub threshold: f64,
}

impl SplitRule {
    pub fn new(axis: usize, threshold: f64) -> Self {
        Self { axis, threshold }
    }

    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        x[self.axis] <= self.threshold
    }
}

/// A node of a [`TreePartition`]; children are indices into the node list.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf,
    Split { rule: SplitRule, left: usize, right: usize },
}

/// Binary recursive partition of `[0,1]^p`.
///
/// Nodes are stored in preorder with the root at index 0, so two trees with
/// the same shape and rules compare equal. Leaves are numbered `0..K` in
/// left-to-right (preorder) order; that numbering is the leaf id used by
/// every other module.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePartition {
    nodes: Vec<Node>,
}

impl Default for TreePartition {
    fn default() -> Self {
        Self::leaf()
    }
}

impl TreePartition {
    /// The trivial partition with a single cell.
    pub fn leaf() -> Self {
        Self { nodes: vec![Node::Leaf] }
    }

    /// Joins two subtrees under a new root split.
    pub fn split(rule: SplitRule, left: TreePartition, right: TreePartition) -> Self {
        let shift_l = 1;
        let shift_r = 1 + left.nodes.len();
        let mut nodes = Vec::with_capacity(1 + left.nodes.len() + right.nodes.len());
        nodes.push(Node::Split { rule, left: shift_l, right: shift_r });
        nodes.extend(left.nodes.into_iter().map(|n| shift(n, shift_l)));
        nodes.extend(right.nodes.into_iter().map(|n| shift(n, shift_r)));
        Self { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Number of leaves `K`.
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf)).count()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.leaf_count()
    }

    /// Split rules in preorder.
    pub fn rules(&self) -> impl Iterator<Item = SplitRule> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { rule, .. } => Some(*rule),
            Node::Leaf => None,
        })
    }

    /// Sorted set of axes split on at least once.
    pub fn used_axes(&self) -> Vec<usize> {
        let mut a: Vec<usize> = self.rules().map(|r| r.axis).collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    /// Largest axis index referenced, if any.
    pub fn max_axis(&self) -> Option<usize> {
        self.rules().map(|r| r.axis).max()
    }

    /// Leaf id of the cell containing `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf => return self.leaf_ordinal(node),
                Node::Split { rule, left, right } => {
                    node = if rule.goes_left(x) { *left } else { *right };
                }
            }
        }
    }

    /// Leaf id of every design point, by root-to-leaf descent.
    pub fn assign(&self, data: &Dataset) -> Vec<usize> {
        let ordinals = self.leaf_ordinals();
        (0..data.n())
            .map(|i| {
                let x = data.row(i);
                let mut node = 0;
                loop {
                    match &self.nodes[node] {
                        Node::Leaf => break ordinals[node],
                        Node::Split { rule, left, right } => {
                            node = if rule.goes_left(x) { *left } else { *right };
                        }
                    }
                }
            })
            .collect()
    }

    /// For each node index, its leaf id (meaningful only for leaves).
    pub fn leaf_ordinals(&self) -> Vec<usize> {
        let mut next = 0;
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf => {
                    next += 1;
                    next - 1
                }
                Node::Split { .. } => usize::MAX,
            })
            .collect()
    }

    fn leaf_ordinal(&self, node: usize) -> usize {
        self.nodes[..node].iter().filter(|n| matches!(n, Node::Leaf)).count()
    }

    /// Node index of leaf id `leaf`.
    pub fn leaf_node(&self, leaf: usize) -> Option<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n, Node::Leaf))
            .nth(leaf)
            .map(|(i, _)| i)
    }

    /// Replaces leaf id `leaf` by a split with two new leaves.
    pub fn grow(&self, leaf: usize, rule: SplitRule) -> Result<Self> {
        let target = self
            .leaf_node(leaf)
            .ok_or_else(|| Error::Usage(format!("tree has no leaf {leaf}")))?;
        Ok(self.rebuild(0, &mut |idx| {
            (idx == target).then(|| TreePartition::split(rule, Self::leaf(), Self::leaf()))
        }))
    }

    fn rebuild(&self, node: usize, replace: &mut impl FnMut(usize) -> Option<TreePartition>) -> Self {
        if let Some(t) = replace(node) {
            return t;
        }
        match &self.nodes[node] {
            Node::Leaf => Self::leaf(),
            Node::Split { rule, left, right } => {
                let l = self.rebuild(*left, replace);
                let r = self.rebuild(*right, replace);
                Self::split(*rule, l, r)
            }
        }
    }

    /// Subtree rooted at node index `node`.
    pub fn subtree(&self, node: usize) -> Self {
        match &self.nodes[node] {
            Node::Leaf => Self::leaf(),
            Node::Split { rule, left, right } => Self::split(*rule, self.subtree(*left), self.subtree(*right)),
        }
    }

    /// Depth of every leaf, in leaf-id order.
    pub fn leaf_depths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.leaf_count());
        let mut stack = vec![(0usize, 0usize)];
        // preorder with explicit stack: push right first
        while let Some((node, depth)) = stack.pop() {
            match &self.nodes[node] {
                Node::Leaf => out.push(depth),
                Node::Split { left, right, .. } => {
                    stack.push((*right, depth + 1));
                    stack.push((*left, depth + 1));
                }
            }
        }
        out
    }

    /// `Some(d)` when every leaf sits at depth `d`.
    pub fn full_symmetric_depth(&self) -> Option<usize> {
        let depths = self.leaf_depths();
        let d = depths[0];
        depths.iter().all(|&x| x == d).then_some(d)
    }

    /// Number of internal nodes in the subtree of every node.
    fn internal_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.nodes.len()];
        for idx in (0..self.nodes.len()).rev() {
            if let Node::Split { left, right, .. } = &self.nodes[idx] {
                sizes[idx] = 1 + sizes[*left] + sizes[*right];
            }
        }
        sizes
    }

    /// Natural log of the number of split orders that grow this tree from
    /// the root, `(K−1)! / Π_v h(v)` with `h(v)` the number of internal nodes
    /// below and including `v`.
    pub fn log_sequence_multiplicity(&self) -> f64 {
        let sizes = self.internal_sizes();
        let m = self.internal_count();
        let log_fact: f64 = (2..=m).map(|k| (k as f64).ln()).sum();
        log_fact - sizes.iter().filter(|&&h| h > 0).map(|&h| (h as f64).ln()).sum::<f64>()
    }

    /// Exact split-order count (see [`Self::log_sequence_multiplicity`]).
    pub fn sequence_multiplicity(&self) -> u128 {
        // multiply in a fixed order and divide exactly: product of hooks divides (K-1)!
        let sizes = self.internal_sizes();
        let m = self.internal_count() as u128;
        let mut num: u128 = (1..=m).product();
        for h in sizes.into_iter().filter(|&h| h > 0) {
            num /= h as u128;
        }
        num
    }

    pub fn to_nested(&self) -> NestedTree {
        self.nested_at(0)
    }

    fn nested_at(&self, node: usize) -> NestedTree {
        match &self.nodes[node] {
            Node::Leaf => NestedTree::Leaf,
            Node::Split { rule, left, right } => NestedTree::Split {
                axis: rule.axis,
                threshold: rule.threshold,
                left: Box::new(self.nested_at(*left)),
                right: Box::new(self.nested_at(*right)),
            },
        }
    }

    pub fn from_nested(t: &NestedTree) -> Self {
        match t {
            NestedTree::Leaf => Self::leaf(),
            NestedTree::Split { axis, threshold, left, right } => Self::split(
                SplitRule::new(*axis, *threshold),
                Self::from_nested(left),
                Self::from_nested(right),
            ),
        }
    }

    /// Checks that thresholds are observed values of the axis and axes fit `data`.
    pub fn check_against(&self, data: &Dataset) -> Result<()> {
        for r in self.rules() {
            if r.axis >= data.p() {
                return usage(format!("split axis {} outside p = {}", r.axis, data.p()));
            }
            if !data.column(r.axis).any(|v| v == r.threshold) {
                return usage(format!("threshold {} is not an observed value of axis {}", r.threshold, r.axis));
            }
        }
        Ok(())
    }
}

fn shift(n: Node, by: usize) -> Node {
    match n {
        Node::Leaf => Node::Leaf,
        Node::Split { rule, left, right } => Node::Split { rule, left: left + by, right: right + by },
    }
}

/// Serializable nested form of a tree, in preorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NestedTree {
    Leaf,
    Split { axis: usize, threshold: f64, left: Box<NestedTree>, right: Box<NestedTree> },
}

impl Serialize for TreePartition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TreePartition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        NestedTree::deserialize(d).map(|t| Self::from_nested(&t))
    }
}

/// Compact preorder text: `*` is a leaf, `(axis:threshold left right)` a split.
impl fmt::Display for TreePartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(t: &TreePartition, node: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match &t.nodes[node] {
                Node::Leaf => write!(f, "*"),
                Node::Split { rule, left, right } => {
                    write!(f, "({}:{} ", rule.axis, rule.threshold)?;
                    go(t, *left, f)?;
                    write!(f, " ")?;
                    go(t, *right, f)?;
                    write!(f, ")")
                }
            }
        }
        go(self, 0, f)
    }
}

impl FromStr for TreePartition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens: Vec<String> = s
            .replace('(', " ( ")
            .replace(')', " ) ")
            .split_whitespace()
            .map(str::to_owned)
            .collect();
        let mut pos = 0;
        let t = parse_tokens(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return usage(format!("trailing input after tree: {:?}", &tokens[pos..]));
        }
        Ok(t)
    }
}

fn parse_tokens(tokens: &[String], pos: &mut usize) -> Result<TreePartition> {
    let tok = tokens.get(*pos).ok_or_else(|| Error::Usage("unexpected end of tree text".into()))?;
    *pos += 1;
    match tok.as_str() {
        "*" => Ok(TreePartition::leaf()),
        "(" => {
            let head = tokens.get(*pos).ok_or_else(|| Error::Usage("missing split rule".into()))?;
            *pos += 1;
            let (a, t) = head
                .split_once(':')
                .ok_or_else(|| Error::Usage(format!("bad split rule {head:?}, expected axis:threshold")))?;
            let axis = a.parse().map_err(|_| Error::Usage(format!("bad axis {a:?}")))?;
            let threshold = t.parse().map_err(|_| Error::Usage(format!("bad threshold {t:?}")))?;
            let left = parse_tokens(tokens, pos)?;
            let right = parse_tokens(tokens, pos)?;
            if tokens.get(*pos).map(String::as_str) != Some(")") {
                return usage("missing ')' in tree text");
            }
            *pos += 1;
            Ok(TreePartition::split(SplitRule::new(axis, threshold), left, right))
        }
        other => usage(format!("unexpected token {other:?} in tree text")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tree() -> TreePartition {
        TreePartition::split(
            SplitRule::new(0, 0.25),
            TreePartition::leaf(),
            TreePartition::split(SplitRule::new(1, 0.5), TreePartition::leaf(), TreePartition::leaf()),
        )
    }

    #[test]
    fn counts_and_axes() {
        let t = sample_tree();
        assert_eq!(t.leaf_count(), 3);
        assert_eq!(t.internal_count(), 2);
        assert_eq!(t.used_axes(), vec![0, 1]);
        assert_eq!(t.leaf_index(&[0.1, 0.9]), 0);
        assert_eq!(t.leaf_index(&[0.3, 0.5]), 1);
        assert_eq!(t.leaf_index(&[0.3, 0.51]), 2);
    }

    #[test]
    fn grow_replaces_the_right_leaf() {
        let t = sample_tree().grow(1, SplitRule::new(0, 0.4)).unwrap();
        assert_eq!(t.to_string(), "(0:0.25 * (1:0.5 (0:0.4 * *) *))");
        assert!(sample_tree().grow(3, SplitRule::new(0, 0.4)).is_err());
    }

    #[test]
    fn text_and_json_round_trip() {
        let t = sample_tree();
        let text = t.to_string();
        assert_eq!(text, "(0:0.25 * (1:0.5 * *))");
        assert_eq!(text.parse::<TreePartition>().unwrap(), t);
        let json = serde_json::to_string(&t).unwrap();
        let back: TreePartition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!("(0:0.25 *)".parse::<TreePartition>().is_err());
    }

    #[test]
    fn sequence_multiplicity_counts_split_orders() {
        // root with two internal children: either child may be split first
        let bal = TreePartition::split(
            SplitRule::new(0, 0.5),
            TreePartition::split(SplitRule::new(0, 0.25), TreePartition::leaf(), TreePartition::leaf()),
            TreePartition::split(SplitRule::new(0, 0.75), TreePartition::leaf(), TreePartition::leaf()),
        );
        assert_eq!(bal.sequence_multiplicity(), 2);
        assert_eq!(sample_tree().sequence_multiplicity(), 1);
        assert_eq!(TreePartition::leaf().sequence_multiplicity(), 1);
        assert!((bal.log_sequence_multiplicity() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(bal.full_symmetric_depth(), Some(2));
        assert_eq!(sample_tree().full_symmetric_depth(), None);
    }
}
