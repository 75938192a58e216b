//! The invariant suite behind `spikeforest verify`: exact identities and
//! bounds checked against independent brute-force or numeric references.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::{
    decompose_kd_into_weak_learners, global_partition, spectral_diagnostics, stretching_from_global, stretching_matrix,
    worked_example, Ensemble,
};
use crate::error::Result;
use crate::experiment::{derive_seed, run_approx_rate, ApproxFunction, CheckResult, ExperimentPlan, Scenario};
use crate::inference::log_marginal_likelihood_tree;
use crate::oracle::leaf_marginal_quadrature;
use crate::partition::{
    build_kd_tree, canonical_cells, cell_measures, partitioning_number, SplitRule, TreePartition,
};
use crate::testfn::{design_points, Design};

/// Outcome of the whole suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn result(name: &str, failures: &[String], ok: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            ok
        } else {
            let shown: Vec<&str> = failures.iter().take(5).map(String::as_str).collect();
            format!("{} failure(s): {}", failures.len(), shown.join("; "))
        },
    }
}

/// Runs every check with the given seed.
pub fn run_verify(seed: u64) -> Result<VerifyReport> {
    let checks = vec![
        verify_worked_example()?,
        verify_partition_counts(seed)?,
        verify_gershgorin(seed, 1000)?,
        verify_decomposition(seed)?,
        verify_projection(seed)?,
        verify_quadrature(seed, 100)?,
    ];
    Ok(VerifyReport { seed, checks })
}

/// Stretching matrix and Gram product of the seven-point worked example.
pub fn verify_worked_example() -> Result<CheckResult> {
    const ROWS: [&str; 7] = ["010100", "100100", "010010", "100010", "100001", "001010", "001001"];
    const GRAM: [[u32; 6]; 6] = [
        [3, 0, 0, 1, 1, 1],
        [0, 2, 0, 1, 1, 0],
        [0, 0, 2, 0, 1, 1],
        [1, 1, 0, 2, 0, 0],
        [1, 1, 1, 0, 3, 0],
        [1, 0, 1, 0, 0, 2],
    ];
    let (data, ens) = worked_example();
    let sm = stretching_matrix(&ens, &data);
    let mut failures = Vec::new();
    if sm.to_bit_rows() != ROWS {
        failures.push(format!("A(E) rows {:?}", sm.to_bit_rows()));
    }
    let g = sm.gram();
    for (i, row) in GRAM.iter().enumerate() {
        for (j, &want) in row.iter().enumerate() {
            if g[(i, j)] != want as f64 {
                failures.push(format!("Gram[{i}][{j}] = {} expected {want}", g[(i, j)]));
            }
        }
    }
    let sp = spectral_diagnostics(&sm)?;
    let bound = (sm.n_rows() * ens.total_leaves()) as f64;
    if sp.lambda_max.powi(2) > bound {
        failures.push(format!("λ²_max = {} above {bound}", sp.lambda_max.powi(2)));
    }
    Ok(result(
        "worked-example",
        &failures,
        format!("7×6 A(E) and its Gram product match exactly; λ²_max = {:.6} ≤ {bound}", sp.lambda_max.powi(2)),
    ))
}

/// Distinct `K`-cell partitions reachable by splitting on axes `s`, by
/// growing every split sequence.
pub fn brute_force_partition_count(data: &Dataset, s: &[usize], k: usize) -> usize {
    fn walk(tree: &TreePartition, data: &Dataset, s: &[usize], k: usize, seen: &mut BTreeSet<Vec<Vec<usize>>>) {
        if tree.leaf_count() == k {
            seen.insert(canonical_cells(&tree.assign(data)));
            return;
        }
        let members = cell_measures(tree, data).members;
        for (leaf, m) in members.iter().enumerate() {
            for &axis in s {
                let mut vals: Vec<f64> = m.iter().map(|&i| data.x(i, axis)).collect();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                vals.pop();
                for t in vals {
                    let grown = tree.grow(leaf, SplitRule::new(axis, t)).expect("leaf exists");
                    walk(&grown, data, s, k, seen);
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    walk(&TreePartition::leaf(), data, s, k, &mut seen);
    seen.len()
}

/// The recursion `Δ(K) = Δ(K−1)·(n−K+2)·q` for `n ≤ 12, q ≤ 4, K ≤ n`, and
/// `Δ` bounding brute-force partition counts for `n ≤ 6, q ≤ 2, K ≤ 4`.
pub fn verify_partition_counts(seed: u64) -> Result<CheckResult> {
    let mut failures = Vec::new();
    let mut identities = 0;
    for n in 1..=12usize {
        for q in 1..=4usize {
            for k in 2..=n {
                let prev = partitioning_number(n, q, k - 1)?;
                let want = prev * num_bigint::BigUint::from((n - k + 2) * q);
                identities += 1;
                if partitioning_number(n, q, k)? != want {
                    failures.push(format!("recursion fails at n={n}, q={q}, K={k}"));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[10]));
    let mut bounds = 0;
    for n in 1..=6usize {
        // a generic design and one with ties on both axes
        let designs = [
            design_points(n, 2, Design::IidUniform, &mut rng)?,
            (0..2 * n).map(|i| ((i * 7 + i / 2) % 3) as f64 / 2.0).collect(),
        ];
        for x in designs {
            let data = Dataset::new(n, 2, x, vec![0.0; n])?;
            for q in 1..=2usize {
                let s: Vec<usize> = (0..q).collect();
                for k in 1..=4usize.min(n) {
                    let count = brute_force_partition_count(&data, &s, k);
                    bounds += 1;
                    if num_bigint::BigUint::from(count) > partitioning_number(n, q, k)? {
                        failures.push(format!("{count} partitions exceed Δ({n},{q},{k})"));
                    }
                }
            }
        }
    }
    Ok(result(
        "partition-counts",
        &failures,
        format!("{identities} recursion identities exact; {bounds} brute-force counts bounded by Δ"),
    ))
}

/// A random tree with up to `k` leaves grown by uniform observed splits.
fn random_tree<R: Rng>(data: &Dataset, k: usize, rng: &mut R) -> TreePartition {
    let mut tree = TreePartition::leaf();
    for _ in 0..4 * k {
        if tree.leaf_count() >= k {
            break;
        }
        let members = cell_measures(&tree, data).members;
        let leaf = rng.random_range(0..members.len());
        let axis = rng.random_range(0..data.p());
        let mut vals: Vec<f64> = members[leaf].iter().map(|&i| data.x(i, axis)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        vals.pop();
        if vals.is_empty() {
            continue;
        }
        let t = vals[rng.random_range(0..vals.len())];
        tree = tree.grow(leaf, SplitRule::new(axis, t)).expect("leaf exists");
    }
    tree
}

/// `λ²_max ≤ K(E)·T·K̄` on random valid ensembles (`n ≤ 50, T ≤ 5, K^t ≤ 6`).
pub fn verify_gershgorin(seed: u64, count: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[11]));
    let mut failures = Vec::new();
    let mut tightest: f64 = 0.0;
    for trial in 0..count {
        let n = rng.random_range(2..=50);
        let p = rng.random_range(1..=3);
        let data = Dataset::new(n, p, design_points(n, p, Design::IidUniform, &mut rng)?, vec![0.0; n])?;
        let t = rng.random_range(1..=5);
        let trees: Vec<TreePartition> = (0..t).map(|_| random_tree(&data, rng.random_range(1..=6), &mut rng)).collect();
        let ens = Ensemble::from_trees(trees)?;
        if !ens.is_valid(&data, 1) {
            failures.push(format!("trial {trial}: generated ensemble is not valid"));
            continue;
        }
        let sm = stretching_matrix(&ens, &data);
        let lhs = spectral_diagnostics(&sm)?.lambda_max.powi(2);
        let rhs = (sm.n_rows() * ens.total_leaves()) as f64;
        tightest = tightest.max(lhs / rhs);
        if lhs > rhs * (1.0 + 1e-12) {
            failures.push(format!("trial {trial}: λ²_max = {lhs} > {rhs}"));
        }
    }
    Ok(result(
        "gershgorin-bound",
        &failures,
        format!("{count} random ensembles, zero violations; largest λ²_max / (K(E)·T·K̄) = {tightest:.4}"),
    ))
}

/// Weak-learner decomposition of k-d trees with 4, 8 and 16 leaves.
pub fn verify_decomposition(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[12]));
    let n = 64;
    let data = Dataset::new(n, 2, design_points(n, 2, Design::IidUniform, &mut rng)?, vec![0.0; n])?;
    let mut failures = Vec::new();
    let mut worst_min: f64 = f64::INFINITY;
    let cases: [(&[usize], usize); 5] = [(&[0], 2), (&[0], 3), (&[0], 4), (&[0, 1], 1), (&[0, 1], 2)];
    for (s, rounds) in cases {
        let kd = build_kd_tree(&data, s, rounds)?;
        let k = kd.leaf_count();
        let ens = decompose_kd_into_weak_learners(&kd)?;
        let gp = global_partition(&ens, &data);
        if canonical_cells(&gp.assignment) != canonical_cells(&kd.assign(&data)) {
            failures.push(format!("K̂ = {k} on axes {s:?}: global partition differs from the k-d partition"));
        }
        let sm = stretching_from_global(&ens, &gp);
        if sm.identity_block().is_none() {
            failures.push(format!("K̂ = {k} on axes {s:?}: no identity block"));
        }
        let lmin = spectral_diagnostics(&sm)?.lambda_min;
        worst_min = worst_min.min(lmin);
        if lmin < 1.0 - 1e-9 {
            failures.push(format!("K̂ = {k} on axes {s:?}: λ_min = {lmin}"));
        }
    }
    Ok(result(
        "kd-decomposition",
        &failures,
        format!("K̂ ∈ {{4, 8, 16}} (1-D) and {{4, 16}} (2-D): partitions equal, identity blocks found, smallest λ_min = {worst_min:.6}"),
    ))
}

/// k-d projection rates: the linear target and the α = 1/2, q = 2 target.
pub fn verify_projection(seed: u64) -> Result<CheckResult> {
    let linear = ExperimentPlan { seed, preflight: false, ..ExperimentPlan::default_for(Scenario::ApproxRate) };
    let holder = ExperimentPlan {
        q0: 2,
        p: 2,
        alpha: 0.5,
        approx_function: ApproxFunction::Holder,
        grid_levels: 64,
        s_max: 5,
        slope_tolerance: 0.1,
        ..linear.clone()
    };
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for (label, plan) in [("linear", linear), ("α = 0.5, q = 2", holder)] {
        let rep = run_approx_rate(&plan)?;
        for c in &rep.checks {
            if !c.pass {
                failures.push(format!("{label} {}: {}", c.name, c.detail));
            }
        }
        details.push(format!("{label}: slope {:.4}", rep.slopes[0].slope));
    }
    Ok(result("kd-projection", &failures, format!("{}; every error within the diameter bound", details.join(", "))))
}

/// Closed-form tree marginal likelihood against per-cell quadrature on
/// random trees.
pub fn verify_quadrature(seed: u64, trees: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[13]));
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for trial in 0..trees {
        let n = rng.random_range(3..=40);
        let p = rng.random_range(1..=3);
        let data = Dataset::new(n, p, design_points(n, p, Design::IidUniform, &mut rng)?, vec![0.0; n])?;
        let tree = random_tree(&data, rng.random_range(1..=6), &mut rng);
        let shift: f64 = 3.0 * rng.sample::<f64, _>(StandardNormal);
        let resid: Vec<f64> = (0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect();
        let v = [1.0, 0.5, 0.1, 2.0][trial % 4];
        let closed = log_marginal_likelihood_tree(&tree, &data, &resid, v)?;
        let quad: f64 = cell_measures(&tree, &data)
            .members
            .iter()
            .map(|m| leaf_marginal_quadrature(&m.iter().map(|&i| resid[i]).collect::<Vec<_>>(), v))
            .sum();
        let err = (closed - quad).abs();
        worst = worst.max(err);
        if err > 1e-8 {
            failures.push(format!("tree {trial}: |closed form − quadrature| = {err:.3e}"));
        }
    }
    Ok(result(
        "marginal-quadrature",
        &failures,
        format!("{trees} random trees, largest |closed form − quadrature| = {worst:.2e} (tolerance 1e-8)"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_counts_on_three_points() {
        // three distinct points on a line: 1, 2 and 1 partitions with K = 1, 2, 3
        let d = Dataset::new(3, 1, vec![0.2, 0.5, 0.9], vec![0.0; 3]).unwrap();
        let counts: Vec<usize> = (1..=3).map(|k| brute_force_partition_count(&d, &[0], k)).collect();
        assert_eq!(counts, vec![1, 2, 1]);
    }

    #[test]
    fn small_suite_passes() {
        assert!(verify_worked_example().unwrap().pass);
        assert!(verify_gershgorin(1, 50).unwrap().pass);
        assert!(verify_quadrature(1, 10).unwrap().pass);
    }
}
