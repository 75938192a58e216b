use serde::{Deserialize, Serialize};

use super::tree::TreePartition;
use crate::data::Dataset;
use crate::error::{usage, Result};

/// Per-leaf counts, measures `n_k/n` and member indices (ascending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub n: usize,
    pub counts: Vec<usize>,
    pub measures: Vec<f64>,
    pub members: Vec<Vec<usize>>,
}

impl CellStats {
    pub fn from_assignment(assign: &[usize], k: usize) -> Self {
        let mut members = vec![Vec::new(); k];
        for (i, &leaf) in assign.iter().enumerate() {
            members[leaf].push(i);
        }
        let n = assign.len();
        let counts: Vec<usize> = members.iter().map(Vec::len).collect();
        let measures = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Self { n, counts, measures, members }
    }

    pub fn min_count(&self) -> usize {
        self.counts.iter().copied().min().unwrap_or(0)
    }
}

pub fn cell_measures(tree: &TreePartition, data: &Dataset) -> CellStats {
    CellStats::from_assignment(&tree.assign(data), tree.leaf_count())
}

/// Minimum leaf count a valid tree needs: `Cbar²`.
pub fn min_leaf_size(cbar: u32) -> usize {
    (cbar as usize) * (cbar as usize)
}

/// True iff every leaf holds at least `Cbar²` design points.
pub fn is_valid(tree: &TreePartition, data: &Dataset, cbar: u32) -> bool {
    cell_measures(tree, data).min_count() >= min_leaf_size(cbar)
}

/// Cells of a partition in canonical form: members ascending, cells ordered
/// by their smallest member. Empty cells are dropped.
pub fn canonical_cells(assign: &[usize]) -> Vec<Vec<usize>> {
    let k = assign.iter().copied().max().map_or(0, |m| m + 1);
    let mut cells: Vec<Vec<usize>> = CellStats::from_assignment(assign, k)
        .members
        .into_iter()
        .filter(|c| !c.is_empty())
        .collect();
    cells.sort_by_key(|c| c[0]);
    cells
}

/// Per-cell and partition diameters restricted to the axes in `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diameters {
    pub cells: Vec<f64>,
    pub partition: f64,
}

/// Largest pairwise distance between members in the `s` coordinates.
pub fn cell_diameter(data: &Dataset, members: &[usize], s: &[usize]) -> f64 {
    let mut best = 0.0f64;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            let d2: f64 = s.iter().map(|&ax| (data.x(i, ax) - data.x(j, ax)).powi(2)).sum();
            best = best.max(d2);
        }
    }
    best.sqrt()
}

pub fn diameter(tree: &TreePartition, data: &Dataset, s: &[usize]) -> Diameters {
    diameters_of(&cell_measures(tree, data), data, s)
}

pub fn diameters_of(stats: &CellStats, data: &Dataset, s: &[usize]) -> Diameters {
    let cells: Vec<f64> = stats.members.iter().map(|m| cell_diameter(data, m, s)).collect();
    let partition = stats.measures.iter().zip(&cells).map(|(mu, d)| mu * d * d).sum::<f64>().sqrt();
    Diameters { cells, partition }
}

/// Piecewise-constant function: height `beta[k]` on leaf `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub partition: TreePartition,
    pub beta: Vec<f64>,
}

impl StepFunction {
    pub fn new(partition: TreePartition, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != partition.leaf_count() {
            return usage(format!("{} step heights for {} leaves", beta.len(), partition.leaf_count()));
        }
        Ok(Self { partition, beta })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.beta[self.partition.leaf_index(x)]
    }

    pub fn eval_design(&self, data: &Dataset) -> Vec<f64> {
        self.partition.assign(data).into_iter().map(|k| self.beta[k]).collect()
    }
}

/// Cell-mean projection of `f` (values at the design points) onto step
/// functions over `tree`; the `‖·‖_n` best approximation on that partition.
pub fn project_cell_means(tree: &TreePartition, data: &Dataset, f: &[f64]) -> Result<StepFunction> {
    if f.len() != data.n() {
        return usage(format!("{} function values for n = {}", f.len(), data.n()));
    }
    let stats = cell_measures(tree, data);
    if let Some(k) = stats.counts.iter().position(|&c| c == 0) {
        return usage(format!("leaf {k} is empty; cell means are undefined"));
    }
    let beta = stats
        .members
        .iter()
        .map(|m| m.iter().map(|&i| f[i]).sum::<f64>() / m.len() as f64)
        .collect();
    StepFunction::new(tree.clone(), beta)
}

/// Deterministic Hölder approximation bound `norm · sqrt(Σ μ_k diam_k^{2α})`.
pub fn holder_projection_bound(stats: &CellStats, diams: &Diameters, alpha: f64, norm: f64) -> f64 {
    let s: f64 = stats.measures.iter().zip(&diams.cells).map(|(mu, d)| mu * d.powf(2.0 * alpha)).sum();
    norm * s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::empirical_norm;
    use crate::partition::SplitRule;

    fn line(xs: &[f64]) -> Dataset {
        Dataset::new(xs.len(), 1, xs.to_vec(), vec![0.0; xs.len()]).unwrap()
    }

    fn stump(axis: usize, t: f64) -> TreePartition {
        TreePartition::split(SplitRule::new(axis, t), TreePartition::leaf(), TreePartition::leaf())
    }

    #[test]
    fn single_leaf_has_unit_measure() {
        let d = line(&[0.1, 0.5, 0.9]);
        let st = cell_measures(&TreePartition::leaf(), &d);
        assert_eq!(st.measures, vec![1.0]);
        assert!(is_valid(&TreePartition::leaf(), &d, 1));
    }

    #[test]
    fn split_at_max_leaves_empty_right_cell() {
        let d = line(&[0.1, 0.5, 0.9]);
        let t = stump(0, 0.9);
        let st = cell_measures(&t, &d);
        assert_eq!(st.counts, vec![3, 0]);
        assert!(!is_valid(&t, &d, 1));
    }

    #[test]
    fn validity_threshold_scales_with_cbar() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let d = line(&xs);
        let t = TreePartition::split(SplitRule::new(0, xs[2]), TreePartition::leaf(), stump(0, xs[5]));
        assert_eq!(cell_measures(&t, &d).counts, vec![3, 3, 4]);
        assert!(is_valid(&t, &d, 1));
        assert!(!is_valid(&t, &d, 2));
    }

    #[test]
    fn diameter_of_three_points() {
        let d = line(&[0.1, 0.4, 0.9]);
        let di = diameter(&TreePartition::leaf(), &d, &[0]);
        assert!((di.cells[0] - 0.8).abs() < 1e-15);
        assert!((di.partition - 0.8).abs() < 1e-15);
        let single = diameter(&stump(0, 0.1), &line(&[0.1, 0.4]), &[0]);
        assert_eq!(single.cells, vec![0.0, 0.0]);
    }

    #[test]
    fn projection_worked_arithmetic() {
        let xs = [0.0, 0.25, 0.5, 0.75];
        let d = line(&xs);
        let t = stump(0, 0.25);
        let sf = project_cell_means(&t, &d, &xs).unwrap();
        assert_eq!(sf.beta, vec![0.125, 0.625]);
        let err = empirical_norm(&sf.eval_design(&d), &xs).unwrap();
        assert!((err - 0.125).abs() < 1e-15);
        assert!(project_cell_means(&stump(0, 0.75), &d, &xs).is_err());
    }

    #[test]
    fn canonical_cells_order_by_smallest_member() {
        assert_eq!(canonical_cells(&[1, 0, 1, 2]), vec![vec![0, 2], vec![1], vec![3]]);
    }
}
