//! Forests as sums of trees and the linear algebra linking local leaves to
//! global cells.
//!
//! The global partition of a forest groups design points by the tuple of
//! leaves they reach in every tree. The stretching matrix `A` has one row per
//! global cell and one column per local leaf (tree blocks side by side), with
//! `a_ij = 1` when global cell `i` lies in leaf `j`. A forest with stacked step
//! vector `B` is the step function `A·B` on the global cells.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{usage, Error, Result};
use crate::partition::{is_valid, Node, SplitRule, TreePartition};

/// Largest number of columns for which dense Gram/eigen/SVD work is allowed.
pub const DENSE_LIMIT: usize = 4096;

/// Ordered list of trees with one step vector per tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    trees: Vec<TreePartition>,
    betas: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn new(trees: Vec<TreePartition>, betas: Vec<Vec<f64>>) -> Result<Self> {
        if trees.is_empty() {
            return usage("an ensemble needs at least one tree");
        }
        if trees.len() != betas.len() {
            return usage(format!("{} trees but {} step vectors", trees.len(), betas.len()));
        }
        for (t, (tree, b)) in trees.iter().zip(&betas).enumerate() {
            if tree.leaf_count() != b.len() {
                return usage(format!("tree {t} has {} leaves but {} steps", tree.leaf_count(), b.len()));
            }
        }
        Ok(Self { trees, betas })
    }

    /// Trees with all steps set to zero.
    pub fn from_trees(trees: Vec<TreePartition>) -> Result<Self> {
        let betas = trees.iter().map(|t| vec![0.0; t.leaf_count()]).collect();
        Self::new(trees, betas)
    }

    pub fn trees(&self) -> &[TreePartition] {
        &self.trees
    }

    pub fn betas(&self) -> &[Vec<f64>] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.trees.iter().map(TreePartition::leaf_count).collect()
    }

    /// Average leaf count `K̄`.
    pub fn k_bar(&self) -> f64 {
        self.total_leaves() as f64 / self.len() as f64
    }

    pub fn total_leaves(&self) -> usize {
        self.trees.iter().map(TreePartition::leaf_count).sum()
    }

    /// Column offset of each tree block in the stacked step vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.trees
            .iter()
            .map(|t| {
                let o = acc;
                acc += t.leaf_count();
                o
            })
            .collect()
    }

    pub fn with_betas(&self, betas: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.trees.clone(), betas)
    }

    /// Splits a stacked step vector back into per-tree blocks.
    pub fn unstack(&self, b: &[f64]) -> Result<Vec<Vec<f64>>> {
        if b.len() != self.total_leaves() {
            return usage(format!("{} stacked steps for {} leaves", b.len(), self.total_leaves()));
        }
        Ok(self.offsets().iter().zip(&self.trees).map(|(&o, t)| b[o..o + t.leaf_count()].to_vec()).collect())
    }

    pub fn stacked_betas(&self) -> Vec<f64> {
        self.betas.concat()
    }

    /// Sum over trees of the step of the leaf containing `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.trees.iter().zip(&self.betas).map(|(t, b)| b[t.leaf_index(x)]).sum()
    }

    pub fn eval_design(&self, data: &Dataset) -> Vec<f64> {
        let mut out = vec![0.0; data.n()];
        for (t, b) in self.trees.iter().zip(&self.betas) {
            for (o, k) in out.iter_mut().zip(t.assign(data)) {
                *o += b[k];
            }
        }
        out
    }

    /// Valid iff every member tree is valid.
    pub fn is_valid(&self, data: &Dataset, cbar: u32) -> bool {
        self.trees.iter().all(|t| is_valid(t, data, cbar))
    }
}

/// Global cells of a forest, ordered by smallest member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPartition {
    /// Member row indices of every global cell (ascending).
    pub cells: Vec<Vec<usize>>,
    /// Local leaf id in every tree for every global cell.
    pub provenance: Vec<Vec<usize>>,
    /// Global cell of every design point.
    pub assignment: Vec<usize>,
}

impl GlobalPartition {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

pub fn global_partition(ens: &Ensemble, data: &Dataset) -> GlobalPartition {
    let assigns: Vec<Vec<usize>> = ens.trees.iter().map(|t| t.assign(data)).collect();
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut provenance = Vec::new();
    let mut assignment = Vec::with_capacity(data.n());
    // scanning rows in order numbers cells by their smallest member
    for i in 0..data.n() {
        let key: Vec<usize> = assigns.iter().map(|a| a[i]).collect();
        let id = *index.entry(key.clone()).or_insert_with(|| {
            cells.push(Vec::new());
            provenance.push(key);
            cells.len() - 1
        });
        cells[id].push(i);
        assignment.push(id);
    }
    GlobalPartition { cells, provenance, assignment }
}

/// Sparse binary stretching matrix: every row lists its `T` one-columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchingMatrix {
    pub rows: Vec<Vec<usize>>,
    pub n_cols: usize,
    pub trees: usize,
}

impl StretchingMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_rows(), self.n_cols);
        for (i, r) in self.rows.iter().enumerate() {
            for &j in r {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// `AᵀA`, accumulated from the sparse rows.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n_cols, self.n_cols);
        for r in &self.rows {
            for &j in r {
                for &l in r {
                    g[(j, l)] += 1.0;
                }
            }
        }
        g
    }

    /// `A·b`.
    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&j| b[j]).sum()).collect()
    }

    /// For every row, a column that is one in that row only, if all rows
    /// have one. Reordering the columns to put these first exhibits `[I | A₁]`.
    pub fn identity_block(&self) -> Option<Vec<usize>> {
        let mut col_sums = vec![0usize; self.n_cols];
        for r in &self.rows {
            for &j in r {
                col_sums[j] += 1;
            }
        }
        self.rows.iter().map(|r| r.iter().copied().find(|&j| col_sums[j] == 1)).collect()
    }

    /// Renders the dense matrix as rows of `0`/`1` digits.
    pub fn to_bit_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| (0..self.n_cols).map(|j| if r.contains(&j) { '1' } else { '0' }).collect())
            .collect()
    }
}

/// Builds `A` with column `j = Σ_{l<t} K^l + m` for leaf `m` of tree `t`.
pub fn stretching_matrix(ens: &Ensemble, data: &Dataset) -> StretchingMatrix {
    stretching_from_global(ens, &global_partition(ens, data))
}

pub fn stretching_from_global(ens: &Ensemble, gp: &GlobalPartition) -> StretchingMatrix {
    let offsets = ens.offsets();
    let rows = gp.provenance.iter().map(|tuple| tuple.iter().zip(&offsets).map(|(m, o)| o + m).collect()).collect();
    StretchingMatrix { rows, n_cols: ens.total_leaves(), trees: ens.len() }
}

/// Forest step heights on the global cells, `β̄ = A·B`.
pub fn aggregate_steps(ens: &Ensemble, data: &Dataset) -> Vec<f64> {
    stretching_matrix(ens, data).apply(&ens.stacked_betas())
}

/// Extremal nonzero singular values of `A` and their ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    /// Eigenvalues of `AᵀA`, ascending.
    pub gram_eigenvalues: Vec<f64>,
}

/// Eigenvalues at or below `1e-10 · max` count as zero when picking `λ_min`.
pub fn spectral_diagnostics(sm: &StretchingMatrix) -> Result<Spectrum> {
    if sm.n_cols > DENSE_LIMIT {
        return usage(format!("{} columns exceed the dense limit of {DENSE_LIMIT}", sm.n_cols));
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(sm.gram()).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let max = eig.last().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return usage("stretching matrix is zero");
    }
    let min = eig.iter().copied().find(|&e| e > 1e-10 * max).unwrap_or(max);
    let (lambda_min, lambda_max) = (min.sqrt(), max.sqrt());
    Ok(Spectrum { lambda_min, lambda_max, kappa: lambda_max / lambda_min, gram_eigenvalues: eig })
}

/// Splits a full symmetric tree of depth `d` into `2^{d−1}` completely
/// imbalanced trees with `d + 1` leaves each.
///
/// Tree `t` follows the root-to-node path to the `t`-th node at depth `d − 1`
/// (left to right), turning every off-path child into a leaf and keeping the
/// final split. The forest's global partition equals the input's partition.
pub fn decompose_kd_into_weak_learners(kd: &TreePartition) -> Result<Ensemble> {
    let depth = kd
        .full_symmetric_depth()
        .ok_or_else(|| Error::Usage("input tree is not full and symmetric".into()))?;
    if depth == 0 {
        return usage("input tree has no split to decompose");
    }
    let mut paths = Vec::new();
    collect_paths(kd, 0, Vec::new(), depth - 1, &mut paths);
    let trees = paths.into_iter().map(|p| path_tree(&p)).collect();
    Ensemble::from_trees(trees)
}

/// Rules along the path, each with the side (`true` = left) the path takes;
/// the last entry is the final split with no side.
fn collect_paths(
    t: &TreePartition,
    node: usize,
    mut prefix: Vec<(SplitRule, bool)>,
    remaining: usize,
    out: &mut Vec<Vec<(SplitRule, bool)>>,
) {
    let Node::Split { rule, left, right } = &t.nodes()[node] else {
        return;
    };
    if remaining == 0 {
        prefix.push((*rule, false));
        out.push(prefix);
        return;
    }
    let mut l = prefix.clone();
    l.push((*rule, true));
    collect_paths(t, *left, l, remaining - 1, out);
    prefix.push((*rule, false));
    collect_paths(t, *right, prefix, remaining - 1, out);
}

fn path_tree(path: &[(SplitRule, bool)]) -> TreePartition {
    let ((rule, goes_left), rest) = path.split_first().expect("nonempty path");
    if rest.is_empty() {
        return TreePartition::split(*rule, TreePartition::leaf(), TreePartition::leaf());
    }
    let sub = path_tree(rest);
    if *goes_left {
        TreePartition::split(*rule, sub, TreePartition::leaf())
    } else {
        TreePartition::split(*rule, TreePartition::leaf(), sub)
    }
}

/// Minimum-norm least-squares steps `B = A⁺ β̄`, returned per tree.
pub fn solve_steps_for_target(ens: &Ensemble, data: &Dataset, target: &[f64]) -> Result<Vec<Vec<f64>>> {
    let sm = stretching_matrix(ens, data);
    if target.len() != sm.n_rows() {
        return usage(format!("target has length {}, expected K(E) = {}", target.len(), sm.n_rows()));
    }
    if sm.n_cols > DENSE_LIMIT {
        return usage(format!("{} columns exceed the dense limit of {DENSE_LIMIT}", sm.n_cols));
    }
    let pinv = sm.dense().pseudo_inverse(1e-10).map_err(|e| Error::Usage(e.to_string()))?;
    let b = pinv * DVector::from_column_slice(target);
    ens.unstack(b.as_slice())
}

/// The seven-point, two-tree worked example with `K(E) = 7`.
///
/// Both trees split one axis at 0.1 then at 0.5 (right child), giving three
/// leaves each; the points are listed in global-cell order.
pub fn worked_example() -> (Dataset, Ensemble) {
    let rows = [
        [0.5, 0.1],
        [0.1, 0.1],
        [0.5, 0.5],
        [0.1, 0.5],
        [0.1, 0.9],
        [0.9, 0.5],
        [0.9, 0.9],
    ];
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    let data = Dataset::from_rows(&rows, vec![0.0; 7]).expect("static design");
    let tree = |axis| {
        TreePartition::split(
            SplitRule::new(axis, 0.1),
            TreePartition::leaf(),
            TreePartition::split(SplitRule::new(axis, 0.5), TreePartition::leaf(), TreePartition::leaf()),
        )
    };
    let ens = Ensemble::from_trees(vec![tree(0), tree(1)]).expect("static ensemble");
    (data, ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{build_kd_tree, canonical_cells};

    #[test]
    fn worked_example_matrix_and_gram() {
        let (d, e) = worked_example();
        let sm = stretching_matrix(&e, &d);
        assert_eq!(
            sm.to_bit_rows(),
            vec!["010100", "100100", "010010", "100010", "100001", "001010", "001001"]
        );
        let g = sm.gram();
        let expect = [
            [3., 0., 0., 1., 1., 1.],
            [0., 2., 0., 1., 1., 0.],
            [0., 0., 2., 0., 1., 1.],
            [1., 1., 0., 2., 0., 0.],
            [1., 1., 1., 0., 3., 0.],
            [1., 0., 1., 0., 0., 2.],
        ];
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(g[(i, j)], expect[i][j]);
            }
        }
        let sp = spectral_diagnostics(&sm).unwrap();
        assert!(sp.lambda_max.powi(2) <= 42.0);
    }

    #[test]
    fn single_tree_gives_identity() {
        let d = Dataset::new(4, 1, vec![0.1, 0.4, 0.6, 0.9], vec![0.0; 4]).unwrap();
        let t = build_kd_tree(&d, &[0], 2).unwrap();
        let e = Ensemble::new(vec![t], vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let sm = stretching_matrix(&e, &d);
        assert_eq!(sm.dense(), DMatrix::identity(4, 4));
        let sp = spectral_diagnostics(&sm).unwrap();
        assert!((sp.lambda_min - 1.0).abs() < 1e-12 && (sp.kappa - 1.0).abs() < 1e-12);
        assert_eq!(aggregate_steps(&e, &d), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(solve_steps_for_target(&e, &d, &[4.0, 3.0, 2.0, 1.0]).unwrap(), vec![vec![4.0, 3.0, 2.0, 1.0]]);
    }

    #[test]
    fn decomposition_of_eight_leaf_tree() {
        let xs: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let d = Dataset::new(16, 1, xs, vec![0.0; 16]).unwrap();
        let kd = build_kd_tree(&d, &[0], 3).unwrap();
        let e = decompose_kd_into_weak_learners(&kd).unwrap();
        assert_eq!(e.len(), 4);
        assert!(e.leaf_counts().iter().all(|&k| k == 4));
        let gp = global_partition(&e, &d);
        assert_eq!(canonical_cells(&gp.assignment), canonical_cells(&kd.assign(&d)));
        let sm = stretching_from_global(&e, &gp);
        assert!(sm.identity_block().is_some());
        assert!(spectral_diagnostics(&sm).unwrap().lambda_min >= 1.0 - 1e-9);
    }

    #[test]
    fn decomposition_base_case_is_identity() {
        let d = Dataset::new(2, 1, vec![0.2, 0.8], vec![0.0; 2]).unwrap();
        let kd = build_kd_tree(&d, &[0], 1).unwrap();
        let e = decompose_kd_into_weak_learners(&kd).unwrap();
        assert_eq!(e.trees(), std::slice::from_ref(&kd));
        assert!(decompose_kd_into_weak_learners(&TreePartition::leaf()).is_err());
    }
}
