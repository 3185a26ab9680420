use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kam_core::dynamics::{OscillatorChain, Scheme};
use kam_core::fourier_taylor::SeriesJson;
use kam_core::freq_analysis::{PersistenceConfig, Window};
use kam_core::hamiltonian::{ScaleMode, ScaleParams};
use kam_core::kam_engine::StepMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    KamRun,
    Measure,
    Simulate,
    Freqs,
    Scan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub system: Option<SystemDesc>,
    pub scales: Option<ScalesConfig>,
    pub scale_mode: Option<ScaleMode>,
    pub schedule: Option<ScheduleOverrides>,
    pub kam: Option<KamOptions>,
    pub measure: Option<MeasureOptions>,
    pub simulate: Option<SimulateOptions>,
    pub freqs: Option<FreqsOptions>,
    pub scan: Option<ScanOptions>,
    pub output: Option<OutputConfig>,
    pub seed: Option<u64>,
}

/// Inline system, or `path` to a JSON file holding the same fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDesc {
    pub path: Option<PathBuf>,
    /// Angle-free `h(y, η, I)`.
    pub integrable: Option<SeriesJson>,
    /// `P` before scaling by ε.
    pub perturbation: Option<SeriesJson>,
    /// Expansion point, length `3d`; zeros when absent.
    pub xi: Option<Vec<f64>>,
    pub chain: Option<OscillatorChain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesConfig {
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub d: usize,
    pub m: u32,
    pub tau: f64,
    pub sigma: Option<f64>,
    pub eta: Option<u32>,
}

impl ScalesConfig {
    pub fn params(&self) -> ScaleParams {
        let mut p = ScaleParams::new(self.eps, self.alpha, self.beta, self.d, self.m, self.tau);
        if let Some(s) = self.sigma {
            p.sigma = s;
        }
        if let Some(e) = self.eta {
            p.eta = e;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub r0: Option<f64>,
    pub s0: Option<f64>,
    pub beta0: Option<f64>,
    pub gamma0: Option<f64>,
    pub mu0: Option<f64>,
    pub c0: Option<f64>,
    /// Length of the schedule table.
    pub nu_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KamOptions {
    pub step_mode: StepMode,
    pub nu_max: usize,
    pub stop_tol: f64,
    pub lie_order: usize,
    pub taylor_cap: Option<u32>,
    pub newton_tol: f64,
    pub minor_size: Option<usize>,
    pub drop_tol: f64,
    pub gamma_diagnostic: bool,
    pub rebuild_schedule: bool,
}

impl Default for KamOptions {
    fn default() -> Self {
        Self {
            step_mode: StepMode::Existence,
            nu_max: 8,
            stop_tol: 0.0,
            lie_order: 4,
            taylor_cap: None,
            newton_tol: 1e-12,
            minor_size: None,
            drop_tol: 1e-18,
            gamma_diagnostic: false,
            rebuild_schedule: true,
        }
    }
}

/// `a(ξ) = matrix·ξ + offset`; the identity when both are absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyMap {
    pub matrix: Option<Vec<Vec<f64>>>,
    pub offset: Option<Vec<f64>>,
}

impl FrequencyMap {
    pub fn check(&self, dim: usize) -> Result<()> {
        let rows = match &self.matrix {
            Some(m) => {
                if m.iter().any(|r| r.len() != dim) {
                    bail!("measure.map.matrix: every row needs {dim} entries (the domain dimension)");
                }
                m.len()
            }
            None => dim,
        };
        if let Some(o) = &self.offset {
            if o.len() != rows {
                bail!("measure.map.offset: expected {rows} entries, got {}", o.len());
            }
        }
        if rows == 0 {
            bail!("measure.map: frequency vector would be empty");
        }
        Ok(())
    }

    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        let mut a = match &self.matrix {
            Some(m) => m.iter().map(|r| r.iter().zip(xi).map(|(u, v)| u * v).sum()).collect(),
            None => xi.to_vec(),
        };
        if let Some(o) = &self.offset {
            for (x, y) in a.iter_mut().zip(o) {
                *x += y;
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureOptions {
    pub domain: Vec<(f64, f64)>,
    #[serde(default)]
    pub map: FrequencyMap,
    pub gammas: Vec<f64>,
    /// Defaults to `scales.tau`.
    pub tau: Option<f64>,
    pub k_max: u64,
    pub samples: usize,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOptions {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "strang")]
    pub scheme: Scheme,
    pub csv: Option<String>,
}

fn one() -> usize {
    1
}

fn strang() -> Scheme {
    Scheme::Strang
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSignal {
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreqsOptions {
    /// Trajectory CSV as written by `simulate`.
    pub trajectory: Option<PathBuf>,
    /// 1-based sites to analyse; all when absent.
    pub sites: Option<Vec<usize>>,
    pub signal: Option<InlineSignal>,
    #[serde(default = "four")]
    pub n_freq: usize,
    #[serde(default)]
    pub window: Window,
    pub spectra: Option<String>,
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanOptions {
    pub grid: Vec<Vec<f64>>,
    pub eps_list: Vec<f64>,
    pub windows: (f64, f64),
    #[serde(default)]
    pub persistence: PersistenceConfig,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub report: Option<String>,
}

/// Parses JSON text, naming the key path of the first problem.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            anyhow::anyhow!("{}: {inner}", origin.display())
        } else {
            anyhow::anyhow!("{}: key `{path}`: {inner}", origin.display())
        }
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(RunConfig, serde_json::Value)> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = parse_json(&text, path)?;
        let echo: serde_json::Value = serde_json::from_str(&text)?;
        Ok((cfg, echo))
    }

    /// System block with any `path` indirection resolved relative to `base`.
    pub fn system(&self, base: &Path) -> Result<SystemDesc> {
        let Some(sys) = &self.system else { bail!("config has no `system` block") };
        match &sys.path {
            None => Ok(sys.clone()),
            Some(p) => {
                let full = if p.is_absolute() { p.clone() } else { base.join(p) };
                let text =
                    fs::read_to_string(&full).with_context(|| format!("cannot read system file {}", full.display()))?;
                let inner: SystemDesc = parse_json(&text, &full)?;
                if inner.path.is_some() {
                    bail!("{}: nested `path` is not allowed", full.display());
                }
                Ok(inner)
            }
        }
    }

    pub fn scale_mode(&self) -> ScaleMode {
        self.scale_mode.unwrap_or(ScaleMode::Fast)
    }
}
