//! Experiment configuration (TOML). Every field has a default, so an empty
//! file describes the n = 20 reaction–diffusion experiment with `F1`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use sdemor::balancing::TiePolicy;
use sdemor::gramians::{default_shifts, GramianOptions};
use sdemor::{build_reaction_diffusion, Boundary, Control, Drift, NoiseProfile, System};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub gramians: GramianSection,
    pub balancing: BalancingSection,
    pub simulation: SimulationSection,
    pub gap_scan: GapScanSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n: usize,
    pub length: f64,
    /// `f1`, `f2`, `f3` or `zero`.
    pub nonlinearity: String,
    pub f1_a: f64,
    /// `dirichlet` or `neumann`.
    pub boundary: String,
    /// One per noise channel: `4sin`, `4cos`, or polynomial coefficients `[c0, c1, ...]`.
    pub profiles: Vec<ProfileSpec>,
    pub k: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(String),
    Polynomial(Vec<f64>),
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n: 20,
            length: 1.0,
            nonlinearity: "f1".into(),
            f1_a: 0.1,
            boundary: "dirichlet".into(),
            profiles: vec![ProfileSpec::Named("4sin".into()), ProfileSpec::Named("4cos".into())],
            k: vec![vec![1.0, -0.5], vec![-0.5, 1.0]],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GramianSection {
    /// Defaults to the declared constant of the nonlinearity.
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub lyapunov_tol: Option<f64>,
    pub barrier_rel_gap: Option<f64>,
    /// Explicit `Q` for the gap scan (skips the Gramian solve there).
    pub q_override: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalancingSection {
    pub r: Vec<usize>,
    /// `keep-clusters` (raise r past near-equal HSVs) or `split`.
    pub tie_policy: String,
}

impl Default for BalancingSection {
    fn default() -> Self {
        Self { r: vec![3, 6, 10], tie_policy: "keep-clusters".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub t_final: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    /// `oscillating`, `smooth` or `zero`.
    pub controls: Vec<String>,
    /// Orders for which the gap-augmented bound is evaluated.
    pub gap_orders: Vec<usize>,
    /// Paths written individually by `simulate`.
    pub sample_paths: usize,
    /// Paths used by the averaged checks in `check-gramians`.
    pub check_paths: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            dt: 1e-3,
            paths: 1000,
            seed: 0,
            controls: vec!["oscillating".into(), "smooth".into()],
            gap_orders: Vec::new(),
            sample_paths: 3,
            check_paths: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapScanSection {
    /// `q` or `p-inverse`.
    pub metric: String,
    pub lo: f64,
    pub hi: f64,
    /// Grid points per axis (two-dimensional models).
    pub points: usize,
    /// Random samples (higher-dimensional models).
    pub samples: usize,
}

impl Default for GapScanSection {
    fn default() -> Self {
        Self { metric: "q".into(), lo: -2.0, hi: 2.0, points: 400, samples: 100_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("sdemor-out") }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg: ExperimentConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(o) = &ov.out {
            cfg.output.dir = o.clone();
        }
        if let Some(s) = ov.seed {
            cfg.simulation.seed = s;
        }
        if let Some(p) = ov.paths {
            cfg.simulation.paths = p;
        }
        if let Some(dt) = ov.dt {
            cfg.simulation.dt = dt;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.n < 2 {
            bail!("model.n must be at least 2");
        }
        if !(m.length > 0.0) {
            bail!("model.length must be positive");
        }
        self.nonlinearity()?;
        self.boundary()?;
        self.profiles()?;
        let d = m.profiles.len();
        if m.k.len() != d || m.k.iter().any(|row| row.len() != d) {
            bail!("model.k must be {d}x{d} to match the {d} noise profiles");
        }
        let s = &self.simulation;
        if !(s.t_final > 0.0) || !(s.dt > 0.0) || s.dt > s.t_final {
            bail!("simulation needs 0 < dt <= t_final");
        }
        if s.paths == 0 {
            bail!("simulation.paths must be positive");
        }
        self.controls()?;
        self.tie_policy()?;
        for &r in self.balancing.r.iter().chain(&s.gap_orders) {
            if r == 0 || r > m.n {
                bail!("reduced order {r} outside 1..={}", m.n);
            }
        }
        for c in [self.gramians.c1, self.gramians.c2].into_iter().flatten() {
            if !c.is_finite() {
                bail!("gramian shifts must be finite");
            }
        }
        let g = &self.gap_scan;
        if !(g.lo < g.hi) || g.points < 2 || g.samples == 0 {
            bail!("gap_scan needs lo < hi, points >= 2 and samples >= 1");
        }
        if !matches!(g.metric.as_str(), "q" | "p-inverse") {
            bail!("gap_scan.metric must be 'q' or 'p-inverse', got '{}'", g.metric);
        }
        if let Some(q) = &self.gramians.q_override {
            let k = q.len();
            if k == 0 || q.iter().any(|row| row.len() != k) {
                bail!("gramians.q_override must be a non-empty square matrix");
            }
        }
        Ok(())
    }

    pub fn nonlinearity(&self) -> Result<Drift> {
        Ok(match self.model.nonlinearity.as_str() {
            "f1" => Drift::f1(self.model.f1_a),
            "f2" => Drift::f2(),
            "f3" => Drift::f3(),
            "zero" => Drift::zero(),
            other => bail!("unknown nonlinearity '{other}' (expected f1, f2, f3 or zero)"),
        })
    }

    fn boundary(&self) -> Result<Boundary> {
        Ok(match self.model.boundary.as_str() {
            "dirichlet" => Boundary::Dirichlet,
            "neumann" => Boundary::Neumann,
            other => bail!("unknown boundary '{other}'"),
        })
    }

    fn profiles(&self) -> Result<Vec<NoiseProfile<f64>>> {
        self.model
            .profiles
            .iter()
            .map(|p| match p {
                ProfileSpec::Named(s) if s == "4sin" => Ok(NoiseProfile::FourSin),
                ProfileSpec::Named(s) if s == "4cos" => Ok(NoiseProfile::FourCos),
                ProfileSpec::Named(s) => bail!("unknown noise profile '{s}'"),
                ProfileSpec::Polynomial(c) => Ok(NoiseProfile::Polynomial(c.clone())),
            })
            .collect()
    }

    pub fn controls(&self) -> Result<Vec<Control>> {
        if self.simulation.controls.is_empty() {
            bail!("simulation.controls must name at least one control");
        }
        self.simulation
            .controls
            .iter()
            .map(|c| match c.as_str() {
                "oscillating" => Ok(Control::oscillating()),
                "smooth" => Ok(Control::smooth()),
                "zero" => Ok(Control::zero(2)),
                other => bail!("unknown control '{other}'"),
            })
            .collect()
    }

    pub fn tie_policy(&self) -> Result<TiePolicy> {
        Ok(match self.balancing.tie_policy.as_str() {
            "split" => TiePolicy::Split,
            "keep-clusters" => TiePolicy::KeepClusters,
            other => bail!("unknown tie policy '{other}'"),
        })
    }

    pub fn k_matrix(&self) -> DMatrix<f64> {
        let d = self.model.k.len();
        DMatrix::from_fn(d, d, |i, j| self.model.k[i][j])
    }

    /// Builds the system. Library errors are passed through for exit-code mapping.
    pub fn system(&self) -> Result<System> {
        let sys = build_reaction_diffusion(
            self.model.n,
            self.model.length,
            self.nonlinearity()?,
            &self.profiles()?,
            self.k_matrix(),
            self.boundary()?,
        )?;
        Ok(sys)
    }

    /// `(c1, c2)` with unset values taken from the nonlinearity.
    pub fn shifts(&self) -> Result<(f64, f64)> {
        let (d1, d2) = default_shifts(&self.nonlinearity()?);
        Ok((self.gramians.c1.unwrap_or(d1), self.gramians.c2.unwrap_or(d2)))
    }

    pub fn gramian_options(&self) -> GramianOptions<f64> {
        let mut o = GramianOptions::default();
        if let Some(t) = self.gramians.lyapunov_tol {
            o.lyapunov.tol = t;
        }
        if let Some(g) = self.gramians.barrier_rel_gap {
            o.barrier.rel_gap = g;
        }
        o
    }

    pub fn q_override(&self) -> Option<DMatrix<f64>> {
        self.gramians.q_override.as_ref().map(|q| DMatrix::from_fn(q.len(), q.len(), |i, j| q[i][j]))
    }
}
