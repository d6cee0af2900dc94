//! Run configuration: a TOML file, validated in full before anything is
//! allocated or written. See the README for the grammar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::AssemblyOptions;
use crate::error::{Error, Result};
use crate::integrate::{default_cadence, step_count, Scheme, StepperConfig, DEFAULT_DD_SWITCH};
use crate::kernel::Kernel;
use crate::problems::Problem;
use crate::setup::{CenterKind, CenterSpec, QuadratureSpec};

/// Overrides `output_dir`.
pub const ENV_OUTPUT_DIR: &str = "MGW_OUTPUT_DIR";
/// Overrides the worker thread count.
pub const ENV_THREADS: &str = "MGW_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub centers: CentersConfig,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub stepper: StepperSection,
    /// Trace cadence in steps. Defaults to 1 for `T <= 1`, otherwise to
    /// about 1000 rows per run.
    #[serde(default)]
    pub observe_every: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub converge: Option<SweepConfig>,
    #[serde(default)]
    pub energy: Option<EnergyConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    LinearWave,
    SineGordon,
    #[serde(rename = "klein_gordon_2d")]
    KleinGordon2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: ProblemName,
    /// Smoothness of the linear-wave bump: 0, 1, 2 or 4.
    #[serde(default)]
    pub mu: Option<u32>,
    /// Sine-Gordon kink speed in `(0, 1)`, default 0.9.
    #[serde(default)]
    pub zeta: Option<f64>,
    /// Half width of the linear-wave center interval (default 4; the long
    /// energy runs use 11 with `T = 10`).
    #[serde(default)]
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub s: u32,
    pub k: u32,
    pub epsilon: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { s: 3, k: 2, epsilon: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentersConfig {
    #[serde(rename = "type")]
    pub kind: CenterKind,
    /// Per axis.
    pub n: usize,
    /// Relative diagonal jitter for Gramians that fail to factor.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperSection {
    pub scheme: Scheme,
    pub tau: f64,
    /// Final time; the problem's own horizon when absent.
    #[serde(rename = "T")]
    pub t_final: Option<f64>,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub dd_switch: f64,
}

impl Default for StepperSection {
    fn default() -> Self {
        Self {
            scheme: Scheme::Avf,
            tau: 0.01,
            t_final: None,
            fp_tol: 1e-13,
            fp_max_iter: 100,
            dd_switch: DEFAULT_DD_SWITCH,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Snapshot times; `[0, T]` when absent.
    pub snapshots: Option<Vec<f64>>,
    /// Snapshot grid points per axis over the center box.
    pub snapshot_points: Option<usize>,
}

/// Convergence sweep: exactly one of `n` or `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    #[serde(default)]
    pub tau: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Centers(Vec<usize>),
    TimeStep(Vec<f64>),
}

impl Sweep {
    /// Parses `n=50,100,150` or `tau=0.04,0.02`.
    pub fn parse(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep must look like n=50,100 or tau=0.02,0.01 (got {s:?})")))?;
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        let bad = |v: &str| Error::Config(format!("bad sweep value {v:?}"));
        match key.trim() {
            "n" => items
                .iter()
                .map(|v| v.parse::<usize>().map_err(|_| bad(v)))
                .collect::<Result<_>>()
                .map(Sweep::Centers),
            "tau" => items
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad(v)))
                .collect::<Result<_>>()
                .map(Sweep::TimeStep),
            other => Err(Error::Config(format!("unknown sweep variable {other:?} (use n or tau)"))),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Sweep::Centers(v) => v.len(),
            Sweep::TimeStep(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Config(format!("a sweep needs at least 2 values (got {})", self.len())));
        }
        let ok = match self {
            Sweep::Centers(v) => v.iter().all(|&n| n >= 2),
            Sweep::TimeStep(v) => v.iter().all(|t| t.is_finite() && *t > 0.0),
        };
        if !ok {
            return Err(Error::Config("sweep values must be n >= 2 or tau > 0".into()));
        }
        Ok(())
    }
}

impl SweepConfig {
    pub fn to_sweep(&self) -> Result<Sweep> {
        match (&self.n, &self.tau) {
            (Some(n), None) => Ok(Sweep::Centers(n.clone())),
            (None, Some(t)) => Ok(Sweep::TimeStep(t.clone())),
            _ => Err(Error::Config("[converge] needs exactly one of n or tau".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub variants: Vec<String>,
}

/// One energy-study variant: a center layout or a time integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Centers(CenterKind),
    Scheme(Scheme),
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(kind) = CenterKind::parse(s) {
            return Ok(Variant::Centers(kind));
        }
        match s {
            "avf" => Ok(Variant::Scheme(Scheme::Avf)),
            "midpoint" => Ok(Variant::Scheme(Scheme::Midpoint)),
            _ => Err(Error::Config(format!(
                "unknown energy variant {s:?} (expected uniform, chebyshev, halton, avf or midpoint)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Centers(k) => k.name(),
            Variant::Scheme(s) => s.name(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `MGW_OUTPUT_DIR`.
    pub fn apply_env(&mut self) {
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        let p = &self.problem;
        let stray = |key: &str| Error::Config(format!("{key} does not apply to {:?}", p.name));
        let problem = match p.name {
            ProblemName::LinearWave => {
                if p.zeta.is_some() {
                    return Err(stray("zeta"));
                }
                let mu = p.mu.unwrap_or(4);
                let half = p.half_width.unwrap_or(4.0);
                Problem::linear_wave_on(mu, half, self.stepper.t_final.unwrap_or(1.0))?
            }
            ProblemName::SineGordon => {
                if p.mu.is_some() {
                    return Err(stray("mu"));
                }
                if p.half_width.is_some() {
                    return Err(stray("half_width"));
                }
                Problem::sine_gordon_until(p.zeta.unwrap_or(0.9), self.stepper.t_final.unwrap_or(1.0))?
            }
            ProblemName::KleinGordon2d => {
                if p.mu.is_some() || p.zeta.is_some() || p.half_width.is_some() {
                    return Err(stray("mu/zeta/half_width"));
                }
                Problem::klein_gordon_2d_until(self.stepper.t_final.unwrap_or(7.0))?
            }
        };
        Ok(problem)
    }

    pub fn kernel(&self, dim: usize) -> Result<Kernel> {
        Kernel::new(self.kernel.s, self.kernel.k, self.kernel.epsilon, dim)
    }

    pub fn center_spec(&self) -> CenterSpec {
        CenterSpec {
            kind: self.centers.kind,
            n: self.centers.n,
        }
    }

    pub fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            jitter: self.centers.jitter,
        }
    }

    pub fn stepper_config(&self) -> StepperConfig {
        StepperConfig {
            tau: self.stepper.tau,
            fp_tol: self.stepper.fp_tol,
            fp_max_iter: self.stepper.fp_max_iter,
            dd_switch: self.stepper.dd_switch,
        }
    }

    /// Trace cadence for a run of `t_final` with step `tau`.
    pub fn cadence(&self, t_final: f64, tau: f64) -> usize {
        self.observe_every.unwrap_or_else(|| default_cadence(t_final, step_count(t_final, tau)))
    }

    pub fn snapshot_times(&self, t_final: f64) -> Vec<f64> {
        self.output.snapshots.clone().unwrap_or_else(|| vec![0.0, t_final])
    }

    pub fn snapshot_points(&self, dim: usize) -> usize {
        self.output.snapshot_points.unwrap_or(if dim == 1 { 401 } else { 101 })
    }

    /// Copy with every defaulted value filled in, as echoed in run metadata.
    pub fn resolved(&self) -> Result<Self> {
        let problem = self.problem()?;
        let t = problem.t_final();
        let mut c = self.clone();
        match c.problem.name {
            ProblemName::LinearWave => {
                c.problem.mu = Some(c.problem.mu.unwrap_or(4));
                c.problem.half_width = Some(problem.sigma().hi()[0]);
            }
            ProblemName::SineGordon => c.problem.zeta = Some(c.problem.zeta.unwrap_or(0.9)),
            ProblemName::KleinGordon2d => {}
        }
        if c.quadrature.order == 0 && problem.dim() == 1 {
            c.quadrature.order = crate::setup::exact_product_order(&self.kernel(1)?);
        }
        c.stepper.t_final = Some(t);
        c.observe_every = Some(self.cadence(t, self.stepper.tau));
        c.output.snapshots = Some(self.snapshot_times(t));
        c.output.snapshot_points = Some(self.snapshot_points(problem.dim()));
        Ok(c)
    }

    /// Checks everything that can be checked without assembling.
    pub fn validate(&self) -> Result<()> {
        let problem = self.problem()?;
        let dim = problem.dim();
        self.kernel(dim)?;
        self.quadrature.validate()?;
        self.stepper_config().validate()?;
        if self.centers.n < 2 {
            return Err(Error::Config(format!("centers.n must be at least 2 (got {})", self.centers.n)));
        }
        if self.centers.kind == CenterKind::Chebyshev && dim != 1 {
            return Err(Error::Config("chebyshev centers are 1D only".into()));
        }
        if !(0.0..=1e-12).contains(&self.centers.jitter) {
            return Err(Error::Config(format!(
                "centers.jitter must lie in [0, 1e-12] (got {})",
                self.centers.jitter
            )));
        }
        if self.observe_every == Some(0) {
            return Err(Error::Config("observe_every must be at least 1".into()));
        }
        let t = problem.t_final();
        if let Some(times) = &self.output.snapshots {
            if let Some(bad) = times.iter().find(|s| !(**s >= 0.0 && **s <= t)) {
                return Err(Error::Config(format!("snapshot time {bad} is outside [0, {t}]")));
            }
        }
        if self.snapshot_points(dim) < 2 {
            return Err(Error::Config("output.snapshot_points must be at least 2".into()));
        }
        if let Some(sweep) = &self.converge {
            sweep.to_sweep()?.validate()?;
        }
        if let Some(energy) = &self.energy {
            for v in &energy.variants {
                if Variant::parse(v)? == Variant::Centers(CenterKind::Chebyshev) && dim != 1 {
                    return Err(Error::Config("chebyshev centers are 1D only".into()));
                }
            }
        }
        Ok(())
    }
}
