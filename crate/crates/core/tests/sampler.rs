//! Chains and exact enumeration against independent references.

use std::collections::BTreeMap;

use spikeforest::data::Dataset;
use spikeforest::inference::{
    exact_posterior_enumeration, log_marginal_likelihood_tree, posterior_summaries, run_chain, ChainConfig,
    EnumerationCaps, MoveProbs,
};
use spikeforest::oracle::state_frequency_test;
use spikeforest::partition::{cell_measures, SplitRule, TreePartition};
use spikeforest::priors::{log_prior_k, log_prior_q, log_prior_subset, log_prior_tree, ModelMode, PriorConfig};

fn small() -> Dataset {
    let x = vec![0.1, 0.7, 0.4, 0.2, 0.6, 0.9, 0.8, 0.5, 0.3, 0.1, 0.95, 0.6];
    let y = vec![-0.8, -0.4, 0.2, 1.1, 0.9, 1.6];
    Dataset::new(6, 2, x, y).unwrap()
}

fn prior3() -> PriorConfig {
    PriorConfig { k_max: Some(3), ..Default::default() }
}

/// Tree moves only, for forests held at one tree.
fn no_birth_death(mode: ModelMode) -> MoveProbs {
    let mut m = MoveProbs::default_for(mode);
    let s = 1.0 - m.birth - m.death;
    for p in [&mut m.grow, &mut m.prune, &mut m.change, &mut m.swap, &mut m.var_add, &mut m.var_remove, &mut m.var_swap] {
        *p /= s;
    }
    m.birth = 0.0;
    m.death = 0.0;
    m
}

/// Sums the posterior weight of every split sequence directly, grouping by
/// `(S, cells)`. Each sequence carries `π(q)π(S|q)π(K)/Δ` times the marginal
/// likelihood; no multiplicities are computed.
fn brute_force_posterior(data: &Dataset, cfg: &PriorConfig) -> BTreeMap<(Vec<usize>, Vec<Vec<usize>>), f64> {
    fn walk(tree: TreePartition, data: &Dataset, k_max: usize, out: &mut Vec<TreePartition>) {
        out.push(tree.clone());
        if tree.leaf_count() == k_max {
            return;
        }
        let stats = cell_measures(&tree, data);
        for (leaf, members) in stats.members.iter().enumerate() {
            for axis in 0..data.p() {
                let mut vals: Vec<f64> = members.iter().map(|&i| data.x(i, axis)).collect();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                vals.pop();
                for t in vals {
                    walk(tree.grow(leaf, SplitRule::new(axis, t)).unwrap(), data, k_max, out);
                }
            }
        }
    }
    let n = data.n();
    let k_max = cfg.k_max_for(n);
    let mut seqs = Vec::new();
    walk(TreePartition::leaf(), data, k_max, &mut seqs);
    let mut w: BTreeMap<_, Vec<f64>> = BTreeMap::new();
    for tree in seqs {
        let s = tree.used_axes();
        let q = s.len();
        let lp = log_prior_q(q, data.p(), cfg).unwrap()
            + log_prior_subset(&s, q, data.p()).unwrap()
            + log_prior_k(tree.leaf_count(), cfg, n).unwrap()
            + log_prior_tree(&tree, &s, data, cfg);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let ml = log_marginal_likelihood_tree(&tree, data, data.y(), 1.0).unwrap();
        let mut cells: Vec<Vec<usize>> = cell_measures(&tree, data).members;
        cells.sort_by_key(|c| c[0]);
        w.entry((s, cells)).or_default().push(lp + ml);
    }
    let m = w.values().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = w.values().flatten().map(|l| (l - m).exp()).sum();
    w.into_iter().map(|(k, ls)| (k, ls.iter().map(|l| (l - m).exp()).sum::<f64>() / z)).collect()
}

#[test]
fn enumeration_matches_sequence_sum() {
    for (data, cfg) in [
        (small(), prior3()),
        (Dataset::new(5, 1, vec![0.1, 0.3, 0.5, 0.7, 0.9], vec![0.0, 0.1, 2.0, 2.1, 1.9]).unwrap(), PriorConfig::default()),
    ] {
        let exact = exact_posterior_enumeration(&data, &cfg, EnumerationCaps::default()).unwrap();
        let brute = brute_force_posterior(&data, &cfg);
        assert_eq!(exact.states.len(), brute.len());
        for s in &exact.states {
            let b = brute[&(s.subset.clone(), s.cells.clone())];
            assert!((s.probability - b).abs() < 1e-12, "{:?}: {} vs {b}", s.cells, s.probability);
        }
        let (arg, _) = brute.iter().fold((None, -1.0), |acc, (k, &p)| if p > acc.1 { (Some(k), p) } else { acc });
        let mode = exact.mode();
        assert_eq!(arg.unwrap(), &(mode.subset.clone(), mode.cells.clone()));
    }
}

#[test]
fn cart_chain_matches_enumeration() {
    let d = small();
    let exact = exact_posterior_enumeration(&d, &prior3(), EnumerationCaps::default()).unwrap();
    let mut passed = 0;
    for seed in 0..4 {
        let cfg = ChainConfig { iterations: 600_000, seed, record_partitions: true, ..Default::default() };
        let tr = run_chain(&d, &prior3(), &cfg, None).unwrap();
        let t = state_frequency_test(&tr.records, &exact, 100).unwrap();
        passed += (t.p_value > 0.01) as usize;
        // inclusion probabilities within 4 binomial sd of the thinned sample size
        let summary = posterior_summaries(&[tr]).unwrap();
        for (j, (&got, want)) in summary.inclusion.iter().zip(exact.inclusion()).enumerate() {
            let sd = (want * (1.0 - want) / t.samples as f64).sqrt();
            assert!((got - want).abs() < 4.0 * sd + 1e-3, "variable {j}: {got} vs {want}");
        }
    }
    assert!(passed >= 3, "{passed} of 4 seeds passed");
}

#[test]
fn one_tree_forests_match_enumeration() {
    let d = small();
    let exact = exact_posterior_enumeration(&d, &prior3(), EnumerationCaps::default()).unwrap();
    for mode in [ModelMode::ForestSharedS, ModelMode::ForestPerTreeS] {
        let mut passed = 0;
        for seed in 0..3 {
            let cfg = ChainConfig {
                iterations: 400_000,
                seed,
                mode,
                moves: Some(no_birth_death(mode)),
                record_partitions: true,
                ..Default::default()
            };
            let tr = run_chain(&d, &prior3(), &cfg, None).unwrap();
            let t = state_frequency_test(&tr.records, &exact, 100).unwrap();
            passed += (t.p_value > 0.01) as usize;
        }
        assert!(passed >= 2, "{mode:?}: {passed} of 3 seeds passed");
    }
}

#[test]
fn constant_response_prefers_one_leaf() {
    let x = vec![0.1, 0.5, 0.3, 0.9, 0.6, 0.2, 0.8, 0.7, 0.2, 0.4, 0.95, 0.05];
    let d = Dataset::new(6, 2, x, vec![0.7; 6]).unwrap();
    // the claim needs a modest leaf intensity: at λ = 10 the leaf prior
    // alone outweighs the cost of splitting clean data
    let prior = PriorConfig { lambda: 1.0, k_max: Some(3), ..Default::default() };
    let exact = exact_posterior_enumeration(&d, &prior, EnumerationCaps::default()).unwrap();
    assert!(exact.k_marginal()[1] > 0.95, "{:?}", exact.k_marginal());
    let cfg = ChainConfig { iterations: 100_000, record_partitions: true, ..Default::default() };
    let tr = run_chain(&d, &prior, &cfg, None).unwrap();
    let s = posterior_summaries(&[tr]).unwrap();
    assert!(1.0 - s.leaves_mass_above(1.0) > 0.95);
}

#[test]
fn clean_two_leaf_step_has_mode_two() {
    let x = vec![0.05, 0.15, 0.3, 0.45, 0.55, 0.7, 0.85, 0.95];
    let y = vec![0.0, 0.0, 0.0, 0.0, 3.0, 3.0, 3.0, 3.0];
    let d = Dataset::new(8, 1, x, y).unwrap();
    let cfg = PriorConfig { lambda: 1.0, k_max: Some(4), ..Default::default() };
    let exact = exact_posterior_enumeration(&d, &cfg, EnumerationCaps::default()).unwrap();
    let k = exact.k_marginal();
    let mode_k = (1..k.len()).max_by(|&a, &b| k[a].total_cmp(&k[b])).unwrap();
    assert_eq!(mode_k, 2, "{k:?}");
    assert_eq!(exact.mode().cells, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
}

#[test]
fn smaller_lambda_gives_stochastically_smaller_k() {
    let d = small();
    let cdf = |lambda: f64| -> Vec<f64> {
        let cfg = PriorConfig { lambda, k_max: Some(3), ..Default::default() };
        let k = exact_posterior_enumeration(&d, &cfg, EnumerationCaps::default()).unwrap().k_marginal();
        k.iter().scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
    };
    let lambdas = [0.5, 1.0, 3.0, 10.0, 30.0];
    for w in lambdas.windows(2) {
        let (lo, hi) = (cdf(w[0]), cdf(w[1]));
        for (a, b) in lo.iter().zip(&hi) {
            assert!(a + 1e-12 >= *b, "λ {} vs {}: {lo:?} {hi:?}", w[0], w[1]);
        }
    }
}

#[test]
fn centering_removes_level_shifts() {
    let d = small();
    let center = |y: &[f64]| -> Vec<f64> {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| v - m).collect()
    };
    let base = exact_posterior_enumeration(&d.with_response(center(d.y())).unwrap(), &prior3(), EnumerationCaps::default()).unwrap();
    let shifted_y: Vec<f64> = d.y().iter().map(|v| v + 4.25).collect();
    let shifted =
        exact_posterior_enumeration(&d.with_response(center(&shifted_y)).unwrap(), &prior3(), EnumerationCaps::default()).unwrap();
    for (a, b) in base.states.iter().zip(&shifted.states) {
        assert!((a.probability - b.probability).abs() < 1e-12);
    }
}

#[test]
fn residual_bookkeeping_holds_over_long_forest_runs() {
    let n = 60;
    let x: Vec<f64> = (0..n * 3).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let y: Vec<f64> = (0..n).map(|i| (x[3 * i] * 6.0).sin() + x[3 * i + 1]).collect();
    let d = Dataset::new(n, 3, x, y).unwrap();
    for mode in [ModelMode::ForestSharedS, ModelMode::ForestPerTreeS] {
        let cfg = ChainConfig { iterations: 2_000, mode, initial_trees: 5, check_residuals: true, ..Default::default() };
        let tr = run_chain(&d, &PriorConfig::default(), &cfg, None).unwrap();
        assert!(tr.final_state.ensemble.is_valid(&d, 1));
        assert!(tr.moves.iter().any(|m| m.accepted > 0));
    }
}
