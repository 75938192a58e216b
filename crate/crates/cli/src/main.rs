//! Command-line front end: data generation, partition and ensemble tools,
//! prior draws, posterior sampling, experiments and the invariant suite.
//!
//! Every command is a pure function of its arguments, configuration and
//! seed, so repeated runs write byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use spikeforest::config::Config;
use spikeforest::data::Dataset;
use spikeforest::ensemble::{
    decompose_kd_into_weak_learners, global_partition, spectral_diagnostics, stretching_from_global, worked_example,
    Ensemble, Spectrum,
};
use spikeforest::experiment::{emit_plot_data, run_experiment, ExperimentPlan, Scenario};
use spikeforest::inference::{posterior_summaries, run_chains, TraceRecord};
use spikeforest::partition::{
    build_kd_tree, cell_measures, diameters_of, log_partitioning_number, partitioning_number, regularity_levels,
    RegularityLevel, TreePartition,
};
use spikeforest::priors::{sample_from_prior, ModelMode, PriorModel};
use spikeforest::testfn::{
    generate_regime1, generate_regime2, ActiveSets, ComponentSpec, Design, Regime1, Regime2, Shape, TestFunction,
};
use spikeforest::verify::run_verify;

/// Environment variable that overrides `--threads`.
const THREADS_ENV: &str = "SPIKEFOREST_THREADS";

#[derive(Parser, Debug)]
#[command(name = "spikeforest", version, about = "Bayesian regression trees and forests with spike-and-tree priors")]
struct Cli {
    /// TOML configuration file (prior, chain, chains, experiment).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "spikeforest-out")]
    out: PathBuf,
    /// Worker threads (SPIKEFOREST_THREADS takes precedence).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a Regime 1 or Regime 2 dataset; writes data.csv and truth.json.
    Data(DataArgs),
    /// k-d partitions and partition counts.
    #[command(subcommand)]
    Partition(PartitionCmd),
    /// Stretching matrices of forests.
    #[command(subcommand)]
    Ensemble(EnsembleCmd),
    /// Ancestral draws from the prior; writes prior.jsonl.
    Prior(PriorArgs),
    /// Run posterior chains; writes trace.jsonl and summary.json.
    Sample(SampleArgs),
    /// Run a desk-scale study; writes <scenario>.csv, <scenario>.json and report.json.
    Experiment(ExperimentArgs),
    /// Run the invariant suite; writes verify.json and exits nonzero on failure.
    Verify,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long, default_value_t = 1)]
    regime: u8,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Active variables (per component in Regime 2).
    #[arg(long, default_value_t = 2)]
    q0: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Hölder coefficient of f0 (per component in Regime 2).
    #[arg(long, default_value_t = 5.0)]
    signal: f64,
    /// Regime 2 components, on disjoint consecutive blocks.
    #[arg(long, default_value_t = 2)]
    components: usize,
    #[arg(long, value_enum, default_value_t = ShapeArg::Ramp)]
    shape: ShapeArg,
    #[arg(long, value_enum, default_value_t = DesignArg::IidUniform)]
    design: DesignArg,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ShapeArg {
    Ramp,
    Cusp,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DesignArg {
    IidUniform,
    UniformGrid,
}

#[derive(Subcommand, Debug)]
enum PartitionCmd {
    /// Build a k-d tree on a dataset; writes partition.json.
    Kd {
        #[arg(long)]
        data: PathBuf,
        /// Split axes, 1-based like the CSV columns (e.g. 1,2).
        #[arg(long, value_delimiter = ',', required = true)]
        axes: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        /// Regularity constant M.
        #[arg(long, default_value_t = 4.0)]
        regularity: f64,
    },
    /// Exact Δ(n, q, K).
    Count {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        k: usize,
    },
}

#[derive(Subcommand, Debug)]
enum EnsembleCmd {
    /// The seven-point, two-tree worked example; writes ensemble.json.
    WorkedExample,
    /// Split a k-d tree into weak learners; writes ensemble.json.
    Decompose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        axes: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
    },
}

#[derive(Args, Debug)]
struct PriorArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 100)]
    draws: usize,
    /// Model to draw from; defaults to the configured chain mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Cart,
    ForestSharedS,
    ForestPerTreeS,
}

impl From<ModeArg> for ModelMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cart => ModelMode::Cart,
            ModeArg::ForestSharedS => ModelMode::ForestSharedS,
            ModeArg::ForestPerTreeS => ModelMode::ForestPerTreeS,
        }
    }
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    data: PathBuf,
    /// truth.json from `data`; enables the error summary.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Scenario; defaults to the configured plan's.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScenarioArg {
    ApproxRate,
    ConcentrationR1,
    ConcentrationR2,
    OverfitProbe,
    Selection,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::ApproxRate => Scenario::ApproxRate,
            ScenarioArg::ConcentrationR1 => Scenario::ConcentrationR1,
            ScenarioArg::ConcentrationR2 => Scenario::ConcentrationR2,
            ScenarioArg::OverfitProbe => Scenario::OverfitProbe,
            ScenarioArg::Selection => Scenario::Selection,
        }
    }
}

/// Known regression function and its values at the design points.
#[derive(Debug, Serialize, Deserialize)]
struct Truth {
    function: TestFunction,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct KdReport {
    axes: Vec<usize>,
    rounds: usize,
    tree: TreePartition,
    counts: Vec<usize>,
    measures: Vec<f64>,
    diameters: Vec<f64>,
    partition_diameter: f64,
    regularity: Vec<RegularityLevel>,
}

#[derive(Serialize)]
struct EnsembleReport {
    trees: Vec<TreePartition>,
    global_cells: usize,
    stretching_rows: Vec<String>,
    gram: Vec<Vec<f64>>,
    spectrum: Spectrum,
    gershgorin_bound: f64,
}

/// A trace line tagged with its chain.
#[derive(Serialize)]
struct ChainRecord<'a> {
    chain: usize,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

#[derive(Serialize)]
struct PriorDraw {
    draw: usize,
    trees: usize,
    subset: Vec<usize>,
    leaves: Vec<usize>,
    log_structure: f64,
}

fn main() -> ExitCode {
    // usage errors exit 1; exit 2 is reserved for failed checks
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?)),
        Err(_) => Ok(flag),
    }
}

/// Returns whether every check passed.
fn run(cli: Cli) -> Result<bool> {
    if let Some(t) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.chain.seed = seed;
    }
    let seed = cli.seed.unwrap_or(cfg.chain.seed);
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Data(a) => cmd_data(&a, seed, out),
        Command::Partition(PartitionCmd::Kd { data, axes, rounds, regularity }) => {
            cmd_kd(&data, &axes, rounds, regularity, out)
        }
        Command::Partition(PartitionCmd::Count { n, q, k }) => {
            let exact = partitioning_number(n, q, k)?;
            println!("Δ(n={n}, q={q}, K={k}) = {exact}");
            println!("ln Δ = {:.12}", log_partitioning_number(n, q, k));
            Ok(true)
        }
        Command::Ensemble(EnsembleCmd::WorkedExample) => {
            let (data, ens) = worked_example();
            cmd_ensemble(&ens, &data, out)
        }
        Command::Ensemble(EnsembleCmd::Decompose { data, axes, rounds }) => {
            let (data, _) = load_data(&data)?;
            let kd = build_kd_tree(&data, &zero_based(&axes, data.p())?, rounds)?;
            let ens = decompose_kd_into_weak_learners(&kd)?;
            cmd_ensemble(&ens, &data, out)
        }
        Command::Prior(a) => cmd_prior(&a, &cfg, seed, out),
        Command::Sample(a) => cmd_sample(&a, cfg, out),
        Command::Experiment(a) => cmd_experiment(&a, &cfg, seed, out),
        Command::Verify => {
            let report = run_verify(seed)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            write_json(&out.join("verify.json"), &report)?;
            Ok(report.pass())
        }
    }
}

fn zero_based(axes: &[usize], p: usize) -> Result<Vec<usize>> {
    axes.iter()
        .map(|&a| {
            if a == 0 || a > p {
                bail!("axis {a} outside 1..={p}");
            }
            Ok(a - 1)
        })
        .collect()
}

fn load_data(path: &Path) -> Result<(Dataset, Vec<spikeforest::data::ColumnScaling>)> {
    let (data, scaling) = Dataset::load_csv(path).with_context(|| format!("reading {}", path.display()))?;
    for s in scaling.iter().filter(|s| s.rescaled) {
        eprintln!("note: column x{} rescaled from [{}, {}] to [0, 1]", s.column + 1, s.min, s.max);
    }
    Ok((data, scaling))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_data(a: &DataArgs, seed: u64, out: &Path) -> Result<bool> {
    let shape = match a.shape {
        ShapeArg::Ramp => Shape::Ramp,
        ShapeArg::Cusp => Shape::Cusp,
    };
    let design = match a.design {
        DesignArg::IidUniform => Design::IidUniform,
        DesignArg::UniformGrid => Design::UniformGrid,
    };
    let scale = |q: usize| if q == 0 { 0.0 } else { a.signal / (q as f64).powf(1.0 - a.alpha / 2.0) };
    let (data, function) = match a.regime {
        1 => generate_regime1(
            &Regime1 { n: a.n, p: a.p, q0: a.q0, alpha: a.alpha, scale: scale(a.q0), shape, design, noise_sd: a.noise_sd },
            seed,
        )?,
        2 => generate_regime2(
            &Regime2 {
                n: a.n,
                p: a.p,
                components: vec![ComponentSpec { q0: a.q0, alpha: a.alpha, scale: scale(a.q0), shape }; a.components],
                active: ActiveSets::Disjoint,
                design,
                noise_sd: a.noise_sd,
            },
            seed,
        )?,
        r => bail!("regime must be 1 or 2, got {r}"),
    };
    data.save_csv(&out.join("data.csv"))?;
    let values = function.eval_design(&data);
    write_json(&out.join("truth.json"), &Truth { function, values })?;
    println!("wrote {} rows with p = {} to {}", data.n(), data.p(), out.join("data.csv").display());
    Ok(true)
}

fn cmd_kd(path: &Path, axes: &[usize], rounds: usize, m: f64, out: &Path) -> Result<bool> {
    let (data, _) = load_data(path)?;
    let s = zero_based(axes, data.p())?;
    let tree = build_kd_tree(&data, &s, rounds)?;
    let stats = cell_measures(&tree, &data);
    let diams = diameters_of(&stats, &data, &s);
    let regularity = regularity_levels(&data, &s, m, rounds)?;
    println!("k-d tree with {} leaves: {tree}", tree.leaf_count());
    println!("partition diameter {:.6}", diams.partition);
    for l in &regularity {
        println!(
            "level {}: max diameter {:.6}, weighted mean {:.6}, {}",
            l.rounds,
            l.max_diameter,
            l.weighted_mean_diameter,
            if l.skipped { "skipped" } else if l.passed { "regular" } else { "not regular" }
        );
    }
    let report = KdReport {
        axes: axes.to_vec(),
        rounds,
        tree,
        counts: stats.counts,
        measures: stats.measures,
        diameters: diams.cells,
        partition_diameter: diams.partition,
        regularity,
    };
    write_json(&out.join("partition.json"), &report)?;
    Ok(true)
}

fn cmd_ensemble(ens: &Ensemble, data: &Dataset, out: &Path) -> Result<bool> {
    let gp = global_partition(ens, data);
    let sm = stretching_from_global(ens, &gp);
    let spectrum = spectral_diagnostics(&sm)?;
    let g = sm.gram();
    let gram: Vec<Vec<f64>> = (0..g.nrows()).map(|i| (0..g.ncols()).map(|j| g[(i, j)]).collect()).collect();
    let bound = (sm.n_rows() * ens.total_leaves()) as f64;
    println!("{} trees, {} global cells, {} leaves", ens.len(), gp.len(), ens.total_leaves());
    for r in sm.to_bit_rows() {
        println!("  {r}");
    }
    println!(
        "λ_min = {:.6}, λ_max = {:.6}, κ = {:.6}; λ²_max = {:.6} ≤ K(E)·T·K̄ = {bound}",
        spectrum.lambda_min,
        spectrum.lambda_max,
        spectrum.kappa,
        spectrum.lambda_max.powi(2)
    );
    let report = EnsembleReport {
        trees: ens.trees().to_vec(),
        global_cells: gp.len(),
        stretching_rows: sm.to_bit_rows(),
        gram,
        spectrum,
        gershgorin_bound: bound,
    };
    write_json(&out.join("ensemble.json"), &report)?;
    Ok(true)
}

fn cmd_prior(a: &PriorArgs, cfg: &Config, seed: u64, out: &Path) -> Result<bool> {
    let (data, _) = load_data(&a.data)?;
    let mode = a.mode.map_or(cfg.chain.mode, ModelMode::from);
    let model = PriorModel::new(cfg.prior.clone(), data.n(), data.p())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = out.join("prior.jsonl");
    let mut w = BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    let mut q_hist = vec![0usize; data.p() + 1];
    for draw in 0..a.draws {
        let state = sample_from_prior(&cfg.prior, &data, mode, &mut rng)?;
        let subset = state.subset();
        q_hist[subset.len()] += 1;
        let rec = PriorDraw {
            draw,
            trees: state.trees().len(),
            subset,
            leaves: state.leaf_counts(),
            log_structure: model.log_structure(&state, &data),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("{} draws from the {mode:?} prior; |S| histogram {:?}", a.draws, q_hist);
    Ok(true)
}

fn cmd_sample(a: &SampleArgs, mut cfg: Config, out: &Path) -> Result<bool> {
    let (data, _) = load_data(&a.data)?;
    if let Some(m) = a.mode {
        let mode = ModelMode::from(m);
        if mode != cfg.chain.mode {
            cfg.chain.moves = None;
        }
        cfg.chain.mode = mode;
    }
    if let Some(it) = a.iterations {
        cfg.chain.iterations = it;
    }
    let chains = a.chains.unwrap_or(cfg.chains);
    cfg.validate()?;
    let truth = match &a.truth {
        Some(p) => {
            let t: Truth = serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?;
            if t.values.len() != data.n() {
                bail!("truth has {} values for {} rows", t.values.len(), data.n());
            }
            Some(t.values)
        }
        None => None,
    };
    let traces = run_chains(&data, &cfg.prior, &cfg.chain, truth.as_deref(), chains).context("sampler failed")?;
    let path = out.join("trace.jsonl");
    let mut w = BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    for (chain, t) in traces.iter().enumerate() {
        for record in &t.records {
            serde_json::to_writer(&mut w, &ChainRecord { chain, record })?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    let summary = posterior_summaries(&traces)?;
    write_json(&out.join("summary.json"), &summary)?;
    let incl: Vec<String> = summary.inclusion.iter().enumerate().map(|(j, v)| format!("x{}:{v:.3}", j + 1)).collect();
    println!("{} chains, {} kept states", summary.chains, summary.kept);
    println!("inclusion {}", incl.join(" "));
    if let Some(e) = summary.error {
        println!("‖f − f0‖_n median {:.4} (90% interval {:.4} to {:.4})", e.median, e.q05, e.q95);
    }
    Ok(true)
}

fn cmd_experiment(a: &ExperimentArgs, cfg: &Config, seed: u64, out: &Path) -> Result<bool> {
    let mut plan = match (a.scenario.map(Scenario::from), &cfg.experiment) {
        (Some(s), Some(p)) if p.scenario == s => p.clone(),
        (Some(s), _) => ExperimentPlan::default_for(s),
        (None, Some(p)) => p.clone(),
        (None, None) => bail!("no scenario: pass --scenario or set [experiment] in the configuration"),
    };
    plan.seed = seed;
    let report = run_experiment(&plan)?;
    let (csv, json) = emit_plot_data(&report, out)?;
    write_json(&out.join("report.json"), &report)?;
    println!("{} (seed {seed})", report.scenario.name());
    for s in &report.slopes {
        let se = s.se.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!("  slope {}: {:.4} ± {se} (target {:.4})", s.name, s.slope, s.target);
    }
    for c in &report.checks {
        println!("  {} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("  {}", report.note);
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(report.pass())
}
