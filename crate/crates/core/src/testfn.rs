//! Ground-truth regression functions and synthetic data generators.
//!
//! The built-in family is `λ · Σ_{j∈S} g(x_j)^α` with a ramp `g(t) = t`
//! (the default) or a cusp `g(t) = |t − 1/2|`. For `α ∈ (0,1]` the map
//! `t ↦ |t|^α` is subadditive, so each summand is α-Hölder with coefficient
//! `λ` along its own axis, and summing `q` of them gives a Hölder
//! coefficient of at most `λ · q^{1−α/2}` with respect to the Euclidean
//! distance on the active coordinates.
//!
//! The cusp is symmetric about 1/2, so no single split captures any of it;
//! samplers that add variables one split at a time find it much harder to
//! discover than the ramp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{usage, Result};

/// How design points are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    /// Full tensor grid with `m` levels per axis, `m^p = n`, levels `k/(m-1)`.
    UniformGrid,
    /// Independent `U[0,1]` coordinates.
    IidUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunctionKind {
    Regime1,
    Regime2Additive,
    CustomTable,
}

/// Per-axis profile of the built-in family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// `x^α`, increasing.
    #[default]
    Ramp,
    /// `|x − 1/2|^α`, symmetric about the centre.
    Cusp,
}

impl Shape {
    pub fn eval(self, t: f64, alpha: f64) -> f64 {
        match self {
            Shape::Ramp => t.max(0.0).powf(alpha),
            Shape::Cusp => (t - 0.5).abs().powf(alpha),
        }
    }
}

/// One additive component `scale · Σ_{j∈active} shape(x_j)^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub active: Vec<usize>,
    pub alpha: f64,
    pub scale: f64,
    #[serde(default)]
    pub shape: Shape,
}

impl Component {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.scale * self.active.iter().map(|&j| self.shape.eval(x[j], self.alpha)).sum::<f64>()
    }

    /// Upper bound on the α-Hölder coefficient, `scale · q^{1−α/2}`.
    pub fn holder_norm(&self) -> f64 {
        let q = self.active.len() as f64;
        if q == 0.0 {
            return 0.0;
        }
        self.scale * q.powf(1.0 - self.alpha / 2.0)
    }
}

/// A known regression function `f_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub kind: TestFunctionKind,
    pub components: Vec<Component>,
    /// Values at the design points, for `CustomTable` functions.
    pub table: Option<Vec<f64>>,
}

impl TestFunction {
    /// Wraps precomputed values at the design points.
    pub fn custom_table(values: Vec<f64>) -> Self {
        Self { kind: TestFunctionKind::CustomTable, components: Vec::new(), table: Some(values) }
    }

    /// Pointwise value; `None` for tabulated functions, which only exist on the design.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        match self.kind {
            TestFunctionKind::CustomTable => None,
            _ => Some(self.components.iter().map(|c| c.eval(x)).sum()),
        }
    }

    /// Values at every design point of `data`.
    pub fn eval_design(&self, data: &Dataset) -> Vec<f64> {
        match &self.table {
            Some(t) => t.clone(),
            None => (0..data.n()).map(|i| self.eval(data.row(i)).unwrap_or(0.0)).collect(),
        }
    }

    /// Union of all active sets, sorted.
    pub fn active_set(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.components.iter().flat_map(|c| c.active.iter().copied()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Declared Hölder coefficient of a single-exponent function (sum of the
    /// component bounds when all components share α).
    pub fn holder_norm(&self) -> f64 {
        self.components.iter().map(Component::holder_norm).sum()
    }
}

/// Parameters of a Regime-1 dataset: `q0` active leading coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime1 {
    pub n: usize,
    pub p: usize,
    pub q0: usize,
    pub alpha: f64,
    /// Multiplier `λ` in front of the sum.
    pub scale: f64,
    #[serde(default)]
    pub shape: Shape,
    pub design: Design,
    /// Standard deviation of the additive Gaussian noise (1 in the model).
    pub noise_sd: f64,
}

impl Regime1 {
    pub fn new(n: usize, p: usize, q0: usize, alpha: f64) -> Self {
        Self { n, p, q0, alpha, scale: 1.0, shape: Shape::Ramp, design: Design::IidUniform, noise_sd: 1.0 }
    }
}

/// Per-component parameters for Regime 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub q0: usize,
    pub alpha: f64,
    pub scale: f64,
    #[serde(default)]
    pub shape: Shape,
}

/// How component active sets are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActiveSets {
    /// Consecutive, non-overlapping blocks starting at coordinate 0.
    Disjoint,
    /// Caller-declared sets (may overlap).
    Explicit(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime2 {
    pub n: usize,
    pub p: usize,
    pub components: Vec<ComponentSpec>,
    pub active: ActiveSets,
    pub design: Design,
    pub noise_sd: f64,
}

pub fn generate_regime1(spec: &Regime1, seed: u64) -> Result<(Dataset, TestFunction)> {
    if spec.q0 > spec.p {
        return usage(format!("q0 = {} exceeds p = {}", spec.q0, spec.p));
    }
    check_alpha(spec.alpha)?;
    let comp = Component { active: (0..spec.q0).collect(), alpha: spec.alpha, scale: spec.scale, shape: spec.shape };
    let f0 = TestFunction { kind: TestFunctionKind::Regime1, components: vec![comp], table: None };
    let data = simulate(spec.n, spec.p, spec.design, spec.noise_sd, &f0, seed)?;
    Ok((data, f0))
}

pub fn generate_regime2(spec: &Regime2, seed: u64) -> Result<(Dataset, TestFunction)> {
    if spec.components.is_empty() {
        return usage("regime 2 needs at least one component");
    }
    let sets: Vec<Vec<usize>> = match &spec.active {
        ActiveSets::Disjoint => {
            let total: usize = spec.components.iter().map(|c| c.q0).sum();
            if total > spec.p {
                return usage(format!("disjoint active sets need Σ q0 = {total} <= p = {}", spec.p));
            }
            let mut start = 0;
            spec.components
                .iter()
                .map(|c| {
                    let s = (start..start + c.q0).collect();
                    start += c.q0;
                    s
                })
                .collect()
        }
        ActiveSets::Explicit(sets) => {
            if sets.len() != spec.components.len() {
                return usage("one explicit active set per component is required");
            }
            for (s, c) in sets.iter().zip(&spec.components) {
                if s.len() != c.q0 || s.iter().any(|&j| j >= spec.p) {
                    return usage(format!("active set {s:?} does not match q0 = {} within p", c.q0));
                }
            }
            sets.clone()
        }
    };
    let components = spec
        .components
        .iter()
        .zip(sets)
        .map(|(c, active)| {
            check_alpha(c.alpha)?;
            Ok(Component { active, alpha: c.alpha, scale: c.scale, shape: c.shape })
        })
        .collect::<Result<Vec<_>>>()?;
    let f0 = TestFunction { kind: TestFunctionKind::Regime2Additive, components, table: None };
    let data = simulate(spec.n, spec.p, spec.design, spec.noise_sd, &f0, seed)?;
    Ok((data, f0))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return usage(format!("Hölder exponent must lie in (0,1], got {alpha}"));
    }
    Ok(())
}

/// Design points for `design`; consumes `rng` only for random designs.
pub fn design_points(n: usize, p: usize, design: Design, rng: &mut impl Rng) -> Result<Vec<f64>> {
    match design {
        Design::IidUniform => Ok((0..n * p).map(|_| rng.random::<f64>()).collect()),
        Design::UniformGrid => {
            let m = (n as f64).powf(1.0 / p as f64).round() as usize;
            if m.checked_pow(p as u32) != Some(n) {
                return usage(format!("uniform grid needs n = m^p, got n = {n}, p = {p}"));
            }
            let level = |k: usize| if m == 1 { 0.5 } else { k as f64 / (m - 1) as f64 };
            let mut x = Vec::with_capacity(n * p);
            for i in 0..n {
                let mut rest = i;
                let mut digits = vec![0; p];
                for d in digits.iter_mut().rev() {
                    *d = rest % m;
                    rest /= m;
                }
                x.extend(digits.into_iter().map(level));
            }
            Ok(x)
        }
    }
}

fn simulate(
    n: usize,
    p: usize,
    design: Design,
    noise_sd: f64,
    f0: &TestFunction,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || p == 0 {
        return usage("n and p must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = design_points(n, p, design, &mut rng)?;
    let y = (0..n)
        .map(|i| {
            let eps: f64 = rng.sample(StandardNormal);
            f0.eval(&x[i * p..(i + 1) * p]).unwrap_or(0.0) + noise_sd * eps
        })
        .collect();
    Dataset::new(n, p, x, y)
}
