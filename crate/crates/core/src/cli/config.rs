//! Experiment configuration: a single flat JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::fem::IhMode;
use crate::solvers::SolverConfig;

/// Environment variable overriding the observation seed.
pub const SEED_ENV: &str = "CDANSE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Picard,
    Newton,
    CdaPicard,
    Hybrid,
}

impl Method {
    pub fn uses_observations(self) -> bool {
        matches!(self, Method::CdaPicard | Method::Hybrid)
    }
}

fn default_lid() -> [f64; 2] {
    [1.0, 0.0]
}
fn one() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-8
}
fn default_switch() -> f64 {
    1e-2
}
fn default_blowup() -> f64 {
    1e4
}
fn default_max_iter() -> usize {
    500
}
fn default_true() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mesh subdivisions per side.
    pub n: usize,
    #[serde(rename = "Re")]
    pub re: f64,
    #[serde(default = "default_lid")]
    pub lid_value: [f64; 2],
    #[serde(default = "one")]
    pub gamma_gd: f64,

    /// Coarse observation grid is `N × N`.
    #[serde(rename = "N", default)]
    pub grid_n: usize,
    #[serde(default)]
    pub snr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub u_max: f64,
    #[serde(default)]
    pub ih_mode: IhMode,

    pub method: Method,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "default_tol")]
    pub tol_residual: f64,
    #[serde(default = "default_switch")]
    pub switch_tol: f64,
    #[serde(default = "default_blowup")]
    pub blowup_threshold: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub record_wall_time: bool,

    /// Track `‖u_k − u_ref‖` (needs a reference).
    #[serde(default = "default_true")]
    pub track_error: bool,
    /// Interpolation constant used in the advisory theory report.
    #[serde(default = "one")]
    pub c_i: f64,
    #[serde(default = "default_window")]
    pub contraction_window: usize,

    /// Reference field file; defaults to a path inside the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,

    #[serde(rename = "sweep_Re", default, skip_serializing_if = "Option::is_none")]
    pub sweep_re: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_mu: Option<Vec<f64>>,
    #[serde(rename = "sweep_N", default, skip_serializing_if = "Option::is_none")]
    pub sweep_grid_n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_snr: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_seed: Option<Vec<u64>>,
}

fn default_window() -> usize {
    crate::diagnostics::DEFAULT_WINDOW
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies `CDANSE_SEED` and an `--out` override.
    pub fn resolve(mut self, out: Option<&Path>, seed_env: Option<&str>) -> Result<Self, CliError> {
        if let Some(s) = seed_env {
            let seed = s
                .trim()
                .parse::<u64>()
                .map_err(|e| CliError::Config(format!("{SEED_ENV}={s:?}: {e}")))?;
            self.seed = seed;
            if self.sweep_seed.is_some() {
                self.sweep_seed = Some(vec![seed]);
            }
        }
        if let Some(o) = out {
            self.out_dir = o.to_path_buf();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if !(self.re > 0.0 && self.re.is_finite()) {
            return bad(format!("Re must be positive, got {}", self.re));
        }
        if self.method.uses_observations() && self.grid_n < 1 {
            return bad(format!("method {:?} needs N >= 1", self.method));
        }
        if !(self.snr >= 0.0) || !(self.u_max > 0.0) {
            return bad("snr must be nonnegative and u_max positive".into());
        }
        if !(self.c_i > 0.0) {
            return bad("c_i must be positive".into());
        }
        if self.contraction_window < 2 {
            return bad("contraction_window must be at least 2".into());
        }
        let empty = [
            ("sweep_Re", self.sweep_re.as_ref().map(Vec::len)),
            ("sweep_mu", self.sweep_mu.as_ref().map(Vec::len)),
            ("sweep_N", self.sweep_grid_n.as_ref().map(Vec::len)),
            ("sweep_snr", self.sweep_snr.as_ref().map(Vec::len)),
            ("sweep_seed", self.sweep_seed.as_ref().map(Vec::len)),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, l)| *l == Some(0)) {
            return bad(format!("sweep axis {name} is empty"));
        }
        if self.sweep_re.iter().flatten().any(|r| !(*r > 0.0)) {
            return bad("sweep_Re values must be positive".into());
        }
        if self.method.uses_observations() && self.sweep_grid_n.iter().flatten().any(|&g| g < 1) {
            return bad("sweep_N values must be at least 1".into());
        }
        if self.sweep_snr.iter().flatten().any(|s| !(*s >= 0.0)) || self.sweep_mu.iter().flatten().any(|m| !(*m >= 0.0)) {
            return bad("sweep_snr and sweep_mu values must be nonnegative".into());
        }
        self.solver_config().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            nu: 1.0 / self.re,
            mu: if self.method.uses_observations() { self.mu } else { 0.0 },
            gamma_gd: self.gamma_gd,
            tol_residual: self.tol_residual,
            max_iter: self.max_iter,
            blowup_threshold: self.blowup_threshold,
            switch_tol: self.switch_tol,
            ih_mode: self.ih_mode,
            lid_value: self.lid_value,
            record_wall_time: self.record_wall_time,
        }
    }

    pub fn needs_reference(&self) -> bool {
        self.track_error || self.method.uses_observations()
    }

    /// Where the reference for this configuration lives.
    pub fn reference_path(&self) -> PathBuf {
        self.reference.clone().unwrap_or_else(|| {
            self.out_dir
                .join("references")
                .join(format!("cavity_n{}_Re{}.field.json", self.n, self.re))
        })
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Single-point configurations of the Cartesian product of the sweep
    /// axes, in lexicographic order of `(Re, N, mu, snr, seed)`.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        fn axis<T: Copy + PartialOrd>(values: &Option<Vec<T>>, scalar: T) -> Vec<T> {
            let mut v = values.clone().unwrap_or_else(|| vec![scalar]);
            v.sort_by(|a, b| a.partial_cmp(b).expect("validated finite"));
            v.dedup_by(|a, b| a == b);
            v
        }
        let mut out = Vec::new();
        for &re in &axis(&self.sweep_re, self.re) {
            for &grid_n in &axis(&self.sweep_grid_n, self.grid_n) {
                for &mu in &axis(&self.sweep_mu, self.mu) {
                    for &snr in &axis(&self.sweep_snr, self.snr) {
                        for &seed in &axis(&self.sweep_seed, self.seed) {
                            out.push(ExperimentConfig {
                                re,
                                grid_n,
                                mu,
                                snr,
                                seed,
                                sweep_re: None,
                                sweep_mu: None,
                                sweep_grid_n: None,
                                sweep_snr: None,
                                sweep_seed: None,
                                ..self.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Directory name of a sweep point.
    pub fn run_label(&self) -> String {
        format!(
            "Re{}_N{}_mu{}_snr{}_seed{}",
            self.re, self.grid_n, self.mu, self.snr, self.seed
        )
    }
}
