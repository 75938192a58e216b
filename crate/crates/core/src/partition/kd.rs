use serde::{Deserialize, Serialize};

use super::cells::{cell_measures, diameters_of};
use super::tree::{SplitRule, TreePartition};
use crate::data::Dataset;
use crate::error::{usage, Result};

/// Balanced k-d tree on the axes in `s` with `rounds` passes per axis.
///
/// Axes are cycled in ascending order and every node at one depth splits on
/// the same axis at its lower median: points are ordered by (value, row index)
/// and the threshold is the value of the `⌊m/2⌋`-th one. Because the rule is
/// `x ≤ τ`, points tied with the median all go left, so heavily tied designs
/// can yield unbalanced or empty cells. A node that is already empty keeps
/// splitting at the axis minimum so the shape stays full and symmetric.
pub fn build_kd_tree(data: &Dataset, s: &[usize], rounds: usize) -> Result<TreePartition> {
    let mut axes = s.to_vec();
    axes.sort_unstable();
    axes.dedup();
    if axes.is_empty() || rounds == 0 {
        return usage("k-d tree needs a nonempty axis set and at least one round");
    }
    if let Some(&a) = axes.iter().find(|&&a| a >= data.p()) {
        return usage(format!("axis {a} outside p = {}", data.p()));
    }
    let depth = rounds * axes.len();
    if depth >= usize::BITS as usize || data.n() < 1usize << depth {
        return usage(format!(
            "k-d tree with 2^{depth} leaves needs at least that many points, have n = {}",
            data.n()
        ));
    }
    let members: Vec<usize> = (0..data.n()).collect();
    Ok(build(data, &axes, members, 0, depth))
}

fn build(data: &Dataset, axes: &[usize], mut members: Vec<usize>, depth: usize, max_depth: usize) -> TreePartition {
    if depth == max_depth {
        return TreePartition::leaf();
    }
    let axis = axes[depth % axes.len()];
    let threshold = if members.is_empty() {
        data.column(axis).fold(f64::INFINITY, f64::min)
    } else {
        members.sort_by(|&a, &b| data.x(a, axis).total_cmp(&data.x(b, axis)).then(a.cmp(&b)));
        let pos = (members.len() / 2).max(1) - 1;
        data.x(members[pos], axis)
    };
    let (left, right): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| data.x(i, axis) <= threshold);
    TreePartition::split(
        SplitRule::new(axis, threshold),
        build(data, axes, left, depth + 1, max_depth),
        build(data, axes, right, depth + 1, max_depth),
    )
}

/// Outcome of the regularity test at one k-d level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityLevel {
    pub rounds: usize,
    pub max_diameter: f64,
    pub weighted_mean_diameter: f64,
    pub skipped: bool,
    pub passed: bool,
}

/// Runs the `(M, S)` regularity test for every feasible level `1..=s_max`.
pub fn regularity_levels(data: &Dataset, s: &[usize], m: f64, s_max: usize) -> Result<Vec<RegularityLevel>> {
    let q = {
        let mut a = s.to_vec();
        a.sort_unstable();
        a.dedup();
        a.len()
    };
    let mut out = Vec::new();
    for rounds in 1..=s_max {
        let depth = rounds * q;
        if q == 0 || depth >= usize::BITS as usize || data.n() < 1usize << depth {
            break;
        }
        let tree = build_kd_tree(data, s, rounds)?;
        let stats = cell_measures(&tree, data);
        let d = diameters_of(&stats, data, s);
        let max_diameter = d.cells.iter().copied().fold(0.0, f64::max);
        let weighted_mean_diameter: f64 = stats.measures.iter().zip(&d.cells).map(|(mu, d)| mu * d).sum();
        let skipped = max_diameter == 0.0;
        let passed = skipped || max_diameter < m * weighted_mean_diameter;
        out.push(RegularityLevel { rounds, max_diameter, weighted_mean_diameter, skipped, passed });
    }
    Ok(out)
}

/// True iff every feasible level passes `max_k diam_k < M · Σ_k μ_k diam_k`.
pub fn regularity_check(data: &Dataset, s: &[usize], m: f64, s_max: usize) -> Result<bool> {
    Ok(regularity_levels(data, s, m, s_max)?.iter().all(|l| l.passed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::cells::is_valid;

    fn line(n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        Dataset::new(n, 1, xs, vec![0.0; n]).unwrap()
    }

    #[test]
    fn eight_points_three_rounds_gives_singletons() {
        let d = line(8);
        let t = build_kd_tree(&d, &[0], 3).unwrap();
        let st = cell_measures(&t, &d);
        assert_eq!(st.counts, vec![1; 8]);
        assert_eq!(t.full_symmetric_depth(), Some(3));
    }

    #[test]
    fn odd_counts_split_floor_left() {
        let d = line(11);
        let t = build_kd_tree(&d, &[0], 1).unwrap();
        assert_eq!(cell_measures(&t, &d).counts, vec![5, 6]);
        let t2 = build_kd_tree(&d, &[0], 2).unwrap();
        assert_eq!(cell_measures(&t2, &d).counts, vec![2, 3, 3, 3]);
        assert!(is_valid(&t2, &d, 1));
    }

    #[test]
    fn grid_four_by_four() {
        let mut rows = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                rows.push(vec![a as f64 / 3.0, b as f64 / 3.0]);
            }
        }
        let d = Dataset::from_rows(&rows, vec![0.0; 16]).unwrap();
        let t = build_kd_tree(&d, &[1, 0], 1).unwrap();
        assert_eq!(t.leaf_count(), 4);
        assert_eq!(cell_measures(&t, &d).counts, vec![4; 4]);
        assert_eq!(t.rules().next().unwrap().axis, 0);
    }

    #[test]
    fn insufficient_points_is_usage_error() {
        assert!(build_kd_tree(&line(7), &[0], 3).is_err());
        assert!(build_kd_tree(&line(8), &[], 1).is_err());
    }

    #[test]
    fn identical_points_are_vacuously_regular() {
        let d = Dataset::new(8, 1, vec![0.5; 8], vec![0.0; 8]).unwrap();
        assert!(regularity_check(&d, &[0], 1.0, 3).unwrap());
    }

    #[test]
    fn uniform_grid_is_regular_and_outlier_is_not() {
        assert!(regularity_check(&line(64), &[0], 2.01, 6).unwrap());
        // 15 points clustered near 0 plus one far outlier: one cell is huge, the rest tiny
        let mut xs: Vec<f64> = (0..15).map(|i| i as f64 * 1e-4).collect();
        xs.push(1.0);
        let d = Dataset::new(16, 1, xs, vec![0.0; 16]).unwrap();
        assert!(!regularity_check(&d, &[0], 2.0, 2).unwrap());
    }
}
