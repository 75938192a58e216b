//! Small end-to-end studies: plot data round trips, determinism and the
//! edge cases of the selection study.

use spikeforest::experiment::{emit_plot_data, read_plot_csv, run_experiment, ExperimentPlan, PlotSummary, Scenario};
use spikeforest::inference::ChainConfig;

fn quick(scenario: Scenario) -> ExperimentPlan {
    ExperimentPlan {
        n_grid: vec![80, 160],
        p: 4,
        replications: 2,
        chains: 1,
        chain: ChainConfig { iterations: 2_000, ..Default::default() },
        preflight: false,
        seed: 3,
        ..ExperimentPlan::default_for(scenario)
    }
}

#[test]
fn plot_data_round_trips() {
    let report = run_experiment(&quick(Scenario::ConcentrationR1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = emit_plot_data(&report, dir.path()).unwrap();
    assert_eq!(csv.file_name().unwrap(), "concentration-r1.csv");
    assert_eq!(read_plot_csv(&csv).unwrap(), report.records);
    let summary: PlotSummary = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(summary.slopes, report.slopes);
    assert_eq!(summary.checks, report.checks);
    assert_eq!(summary.pass, report.pass());
    assert_eq!(report.series("cart", "median-error").len(), 2);
}

#[test]
fn same_seed_same_bytes() {
    let plan = quick(Scenario::OverfitProbe);
    let bytes = |plan: &ExperimentPlan| serde_json::to_vec(&run_experiment(plan).unwrap()).unwrap();
    let a = bytes(&plan);
    assert_eq!(a, bytes(&plan));
    assert_ne!(a, bytes(&ExperimentPlan { seed: 4, ..plan }));
}

#[test]
fn noise_free_fits_are_closer_to_the_truth() {
    let plan = ExperimentPlan { n_grid: vec![200], ..quick(Scenario::ConcentrationR1) };
    let noisy = run_experiment(&plan).unwrap();
    let clean = run_experiment(&ExperimentPlan { noise_sd: 0.0, ..plan }).unwrap();
    let err = |r: &spikeforest::experiment::ExperimentReport| r.series("cart", "median-error")[0].1;
    assert!(err(&clean) < err(&noisy), "{} vs {}", err(&clean), err(&noisy));
}

#[test]
fn null_signal_selects_nothing() {
    let plan = ExperimentPlan { q0: 0, n_grid: vec![200], ..quick(Scenario::Selection) };
    let report = run_experiment(&plan).unwrap();
    let check = report.check("null-inclusion@n=200").unwrap();
    assert!(check.pass, "{}", check.detail);
    assert!(report.series("cart", "tpr").is_empty());
}

#[test]
fn all_active_has_no_false_positive_rate() {
    let plan = ExperimentPlan { p: 2, q0: 2, n_grid: vec![200], ..quick(Scenario::Selection) };
    let report = run_experiment(&plan).unwrap();
    assert!(report.series("cart", "fpr").is_empty());
    assert!(report.check("inactive-inclusion@n=200").unwrap().detail.contains("not applicable"));
}

#[test]
fn invalid_plans_are_rejected() {
    for plan in [
        ExperimentPlan { n_grid: vec![200, 100], ..quick(Scenario::ConcentrationR1) },
        ExperimentPlan { q0: 5, ..quick(Scenario::Selection) },
        ExperimentPlan { alpha: 1.5, ..quick(Scenario::ConcentrationR1) },
        ExperimentPlan { q0: 3, ..quick(Scenario::ConcentrationR2) },
    ] {
        assert!(run_experiment(&plan).is_err(), "{plan:?}");
    }
}
