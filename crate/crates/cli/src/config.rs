//! Run configurations: one JSON document per run, with flags layered on top.

use std::fmt;
use std::path::Path;

use rrr_core::catalog;
use rrr_core::sets::SetSpec;
use rrr_core::FlowProblem;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Invalid invocation or configuration; maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Read a config file, or fall back to the defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("config serializes");
    s.push('\n');
    s.into_bytes()
}

/// A catalog instance by name, or two explicit set descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub name: Option<String>,
    pub theta_deg: f64,
    pub a: Option<SetSpec>,
    pub b: Option<SetSpec>,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self { name: Some("orthogonal-lines".into()), theta_deg: 45.0, a: None, b: None }
    }
}

impl InstanceConfig {
    pub fn build(&self) -> anyhow::Result<FlowProblem> {
        match (&self.a, &self.b) {
            (Some(a), Some(b)) => Ok(FlowProblem::new(
                a.build().map_err(|e| usage(format!("instance.a: {e}")))?,
                b.build().map_err(|e| usage(format!("instance.b: {e}")))?,
            )
            .map_err(|e| usage(format!("instance: {e}")))?),
            (None, None) => {
                let name = self.name.as_deref().unwrap_or("");
                catalog::by_name(name, self.theta_deg).ok_or_else(|| {
                    usage(format!("instance.name: unknown instance '{name}'; known: {}", catalog::NAMES.join(", ")))
                })
            }
            _ => Err(usage("instance: give both a and b, or neither")),
        }
    }

    pub fn set_name(&mut self, name: Option<String>, theta: Option<f64>) {
        if let Some(n) = name {
            self.name = Some(n);
            self.a = None;
            self.b = None;
        }
        if let Some(t) = theta {
            self.theta_deg = t;
        }
    }

    /// A convenient start point for catalog instances.
    pub fn default_start(&self, dim: usize) -> Vec<f64> {
        match self.name.as_deref() {
            Some("planar-sliding") if self.a.is_none() => vec![1.0, -9.0],
            Some("trap-1d") if self.a.is_none() => vec![1.5],
            Some("circle-line") if self.a.is_none() => vec![0.9, 0.8],
            _ => (0..dim).map(|k| if k == 0 { 1.0 } else { 0.5 }).collect(),
        }
    }

    /// A feasible point for catalog instances, used by `linearize`.
    pub fn default_feasible(&self, dim: usize) -> Vec<f64> {
        match self.name.as_deref() {
            Some("circle-line") if self.a.is_none() => vec![0.8, 0.6],
            _ => vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizeConfig {
    pub instance: InstanceConfig,
    pub point: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for LinearizeConfig {
    fn default() -> Self {
        Self { instance: InstanceConfig::default(), point: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    Auto,
    Smooth,
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub instance: InstanceConfig,
    pub x0: Option<Vec<f64>>,
    pub t_end: f64,
    pub mode: ModeChoice,
    /// When set, record RRR iterates with this step instead of the continuous flow.
    pub eps: Option<f64>,
    pub fit_window: Option<(f64, f64)>,
    pub fine_step: f64,
    pub event_budget: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            instance: InstanceConfig::default(),
            x0: None,
            t_end: 10.0,
            mode: ModeChoice::Auto,
            eps: None,
            fit_window: None,
            fine_step: 1e-3,
            event_budget: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HittingConfig {
    pub instance: InstanceConfig,
    pub x0: Option<Vec<f64>>,
    pub delta: f64,
    pub eps: Vec<f64>,
    pub k_max: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for HittingConfig {
    fn default() -> Self {
        Self {
            instance: InstanceConfig::default(),
            x0: None,
            delta: 0.1,
            eps: vec![0.01, 0.005, 0.0025],
            k_max: 1_000_000,
            horizon: 1e3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WdomainConfig {
    pub instance: InstanceConfig,
    /// Start cell `[a, b]` for the descent chain; defaults to the nonempty cell with the largest `d`.
    pub start: Option<(usize, usize)>,
    /// Optional start point for a piecewise trajectory.
    pub x0: Option<Vec<f64>>,
    pub t_end: f64,
    pub seed: u64,
}

impl Default for WdomainConfig {
    fn default() -> Self {
        Self {
            instance: InstanceConfig { name: Some("planar-sliding".into()), ..InstanceConfig::default() },
            start: None,
            x0: None,
            t_end: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MesoConfig {
    pub instance: InstanceConfig,
    /// Box for the reference measure; defaults to the points' bounding box padded by its width.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub betas: Vec<f64>,
    pub samples: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for MesoConfig {
    fn default() -> Self {
        Self {
            instance: InstanceConfig { name: Some("trap-1d".into()), ..InstanceConfig::default() },
            lower: None,
            upper: None,
            betas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            samples: 100_000,
            tau: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedmRunConfig {
    pub m: usize,
    pub beta: f64,
    pub trials: usize,
    pub k_max: usize,
    pub rank: Option<usize>,
    pub delta_enter: f64,
    pub delta_solve: f64,
    pub omega: f64,
    pub bins: usize,
    pub burn_in: Option<usize>,
    pub seed: u64,
}

impl Default for LedmRunConfig {
    fn default() -> Self {
        use rrr_core::ledm::*;
        Self {
            m: 4,
            beta: 0.2,
            trials: 20,
            k_max: DEFAULT_K_MAX,
            rank: None,
            delta_enter: DEFAULT_DELTA_ENTER,
            delta_solve: DEFAULT_DELTA_SOLVE,
            omega: DEFAULT_OMEGA,
            bins: DEFAULT_RECURRENCE_BINS,
            burn_in: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedmSweepConfig {
    pub ms: Vec<usize>,
    pub betas: Vec<f64>,
    pub trials: usize,
    pub k_max: usize,
    pub delta_enter: f64,
    pub delta_solve: f64,
    pub omega: f64,
    pub bins: usize,
    pub burn_in: Option<usize>,
    pub seed: u64,
}

impl Default for LedmSweepConfig {
    fn default() -> Self {
        let run = LedmRunConfig::default();
        Self {
            ms: vec![3, 4],
            betas: vec![0.1, 0.2, 0.3],
            trials: run.trials,
            k_max: run.k_max,
            delta_enter: run.delta_enter,
            delta_solve: run.delta_solve,
            omega: run.omega,
            bins: run.bins,
            burn_in: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelftestConfig {
    /// Criteria to run (1 to 11); all when empty.
    pub criteria: Vec<u8>,
    pub seed: u64,
}
