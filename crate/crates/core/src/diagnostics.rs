//! Post-processing: measured contraction rates, theory-predicted rates from
//! user-supplied constants, run summaries and history export.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{DofMap, VelocityField};
use crate::quadrature::TriangleRule;
use crate::solvers::{IterationHistory, IterationRecord, Phase, SolverConfig, Status};

/// Residuals at or below this are treated as exhausted and skipped.
pub const RESIDUAL_FLOOR: f64 = 100.0 * f64::EPSILON;

/// Default number of trailing ratios in a contraction estimate.
pub const DEFAULT_WINDOW: usize = 10;

/// Column names of the CSV history format.
pub const CSV_COLUMNS: [&str; 6] = ["k", "l2_residual", "l2_error", "h1_norm", "wall_time_s", "phase"];

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need {needed} residuals above {RESIDUAL_FLOOR:e}, history has {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed history file: {0}")]
    Malformed(String),
}

/// Geometric mean of the last `window` successive ratios among residuals
/// above [`RESIDUAL_FLOOR`].
pub fn contraction_rate_of(residuals: &[f64], window: usize) -> Result<f64, DiagnosticsError> {
    if window < 2 {
        return Err(DiagnosticsError::InvalidArgument(format!("window must be at least 2, got {window}")));
    }
    let valid: Vec<f64> = residuals.iter().copied().filter(|r| *r > RESIDUAL_FLOOR && r.is_finite()).collect();
    if valid.len() < window + 1 {
        return Err(DiagnosticsError::InsufficientData {
            needed: window + 1,
            available: valid.len(),
        });
    }
    let tail = &valid[valid.len() - window - 1..];
    let log_sum: f64 = tail.windows(2).map(|w| (w[1] / w[0]).ln()).sum();
    Ok((log_sum / window as f64).exp())
}

pub fn contraction_rate(history: &IterationHistory, window: usize) -> Result<f64, DiagnosticsError> {
    contraction_rate_of(&history.residuals(), window)
}

/// Which hypotheses of the convergence theory hold for the given constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisFlags {
    /// `μ > 2K₁`.
    pub mu_gt_2k1: bool,
    /// `H < √(ν/(2K₁)) / C_I`.
    pub h_lt_sqrt_nu_over_2k1: bool,
    /// `λ̄ > 2`.
    pub lambda_bar_gt_2: bool,
    /// `μ ≥ 4K₁²`.
    pub mu_ge_4k1_sq: bool,
    /// `μ ≤ ν/(C_I²H²)`.
    pub mu_le_nu_over_ci2h2: bool,
    /// `H ≤ √ν / (√2 K₁ C_I)`.
    pub h_le_sqrt_nu_over_sqrt2_k1: bool,
}

/// Advisory bounds evaluated from estimated constants. Never used to control
/// a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryBounds {
    pub k1_estimate: f64,
    pub c_i: f64,
    pub nu: f64,
    pub mu: f64,
    pub h: f64,
    /// `(1/K₁)·min(ν/(C_I²H²), μ)`.
    pub gamma: f64,
    /// `√(2/γ)`.
    pub predicted_rate: f64,
    /// `min(ν/(4C_I²H²), μ/2)`.
    pub lambda_hat: f64,
    /// `min(ν/(C_I²H²), μ/2)`.
    pub lambda_bar: f64,
    pub flags: HypothesisFlags,
}

/// Evaluates the rate formulas and hypothesis flags for viscosity `nu`,
/// nudging `mu`, coarse width `h`, `K₁` and interpolation constant `c_i`.
pub fn theory_bounds(nu: f64, mu: f64, h: f64, k1: f64, c_i: f64) -> Result<TheoryBounds, DiagnosticsError> {
    for (name, v) in [("nu", nu), ("mu", mu), ("H", h), ("K1", k1), ("C_I", c_i)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(DiagnosticsError::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    let visc = nu / (c_i * c_i * h * h);
    let gamma = visc.min(mu) / k1;
    let lambda_hat = (visc / 4.0).min(mu / 2.0);
    let lambda_bar = visc.min(mu / 2.0);
    let flags = HypothesisFlags {
        mu_gt_2k1: mu > 2.0 * k1,
        h_lt_sqrt_nu_over_2k1: h < (nu / (2.0 * k1)).sqrt() / c_i,
        lambda_bar_gt_2: lambda_bar > 2.0,
        mu_ge_4k1_sq: mu >= 4.0 * k1 * k1,
        mu_le_nu_over_ci2h2: mu <= visc,
        h_le_sqrt_nu_over_sqrt2_k1: h <= nu.sqrt() / (2f64.sqrt() * k1 * c_i),
    };
    Ok(TheoryBounds {
        k1_estimate: k1,
        c_i,
        nu,
        mu,
        h,
        gamma,
        predicted_rate: (2.0 / gamma).sqrt(),
        lambda_hat,
        lambda_bar,
        flags,
    })
}

/// [`theory_bounds`] with `ν`, `μ` taken from a solver configuration.
pub fn theory_report(config: &SolverConfig, h: f64, k1: f64, c_i: f64) -> Result<TheoryBounds, DiagnosticsError> {
    theory_bounds(config.nu, config.mu, h, k1, c_i)
}

/// Quadrature order of the rule sampled by [`estimate_k1`] (36 points per
/// triangle). The 7-point rule sits too far from the vertices, where the
/// piecewise-linear `|∇u_h|` peaks, and underestimates by about 10% near the
/// lid corners.
pub const K1_RULE_ORDER: usize = 6;

/// Largest Frobenius norm of `∇u` over the quadrature points of every
/// triangle. A lower bound on `‖∇u‖_∞`.
pub fn estimate_k1(dofmap: &DofMap, u: &VelocityField) -> f64 {
    estimate_k1_with(dofmap, u, &TriangleRule::collapsed_gauss(K1_RULE_ORDER))
}

/// [`estimate_k1`] over the points of a given rule.
pub fn estimate_k1_with(dofmap: &DofMap, u: &VelocityField, rule: &TriangleRule) -> f64 {
    let mut k1 = 0.0f64;
    for t in 0..dofmap.mesh().n_triangles() {
        let w = dofmap.gather(u, t);
        for pt in crate::fem::basis::tabulate(&dofmap.geometry(t), rule) {
            let mut g = [[0.0; 2]; 2];
            for c in 0..2 {
                for a in 0..6 {
                    g[c][0] += w[c][a] * pt.dphi[a][0];
                    g[c][1] += w[c][a] * pt.dphi[a][1];
                }
            }
            let norm = (g[0][0].powi(2) + g[0][1].powi(2) + g[1][0].powi(2) + g[1][1].powi(2)).sqrt();
            k1 = k1.max(norm);
        }
    }
    k1
}

/// Condensed outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: Status,
    pub iterations: usize,
    pub final_residual: Option<f64>,
    pub min_l2_error: Option<f64>,
    /// Measured contraction rate; absent when the history is too short.
    pub contraction_rate: Option<f64>,
    /// `‖I_H ε‖`; absent without observations.
    pub noise_norm: Option<f64>,
    /// `min_l2_error / noise_norm`, only for noisy data.
    pub error_to_noise: Option<f64>,
}

impl RunSummary {
    pub fn new(history: &IterationHistory, noise_norm: Option<f64>, window: usize) -> Self {
        let min_l2_error = history.min_error();
        let error_to_noise = match (min_l2_error, noise_norm) {
            (Some(e), Some(n)) if n > 0.0 => Some(e / n),
            _ => None,
        };
        Self {
            status: history.status,
            iterations: history.iterations(),
            final_residual: history.final_residual(),
            min_l2_error,
            contraction_rate: contraction_rate(history, window).ok(),
            noise_norm,
            error_to_noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryFormat {
    Csv,
    Json,
}

impl HistoryFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

/// Contents of a JSON history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryDocument {
    pub config: serde_json::Value,
    pub summary: Option<RunSummary>,
    pub history: IterationHistory,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a history as CSV. Each line of `header` is emitted first as a `#`
/// comment.
pub fn write_history_csv(history: &IterationHistory, out: impl Write, header: Option<&str>) -> Result<(), DiagnosticsError> {
    let mut out = out;
    if let Some(h) = header {
        for line in h.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in &history.records {
        w.write_record([
            r.k.to_string(),
            fmt_f64(r.l2_residual),
            r.l2_error.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.h1_norm),
            fmt_f64(r.wall_time_s),
            r.phase.label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a history to `path` in the given format. The JSON form carries
/// `config` and `summary`; CSV embeds `config` as a comment header.
pub fn export_history(
    history: &IterationHistory,
    path: &Path,
    format: HistoryFormat,
    config: &serde_json::Value,
    summary: Option<&RunSummary>,
) -> Result<(), DiagnosticsError> {
    match format {
        HistoryFormat::Csv => {
            let mut buf = Vec::new();
            let header = (!config.is_null()).then(|| format!("config: {config}"));
            write_history_csv(history, &mut buf, header.as_deref())?;
            fs::write(path, buf)?;
        }
        HistoryFormat::Json => {
            let doc = HistoryDocument {
                config: config.clone(),
                summary: summary.cloned(),
                history: history.clone(),
            };
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            fs::write(path, s)?;
        }
    }
    Ok(())
}

pub fn import_history_json(path: &Path) -> Result<HistoryDocument, DiagnosticsError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn parse_phase(s: &str) -> Result<Phase, DiagnosticsError> {
    match s {
        "picard" => Ok(Phase::Picard),
        "newton" => Ok(Phase::Newton),
        "cda_picard" => Ok(Phase::CdaPicard),
        other => Err(DiagnosticsError::Malformed(format!("unknown phase {other:?}"))),
    }
}

/// Reads the records of a CSV history. The CSV form carries no status or
/// nonlinear residual; the returned records have `nonlinear_residual = NaN`.
pub fn import_history_csv(path: &Path) -> Result<Vec<IterationRecord>, DiagnosticsError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(DiagnosticsError::Malformed(format!("unexpected columns {headers:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| DiagnosticsError::Malformed(format!("{s:?}: {e}")));
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(IterationRecord {
                k: rec[0].parse().map_err(|e| DiagnosticsError::Malformed(format!("k: {e}")))?,
                l2_residual: num(&rec[1])?,
                l2_error: if rec[2].is_empty() { None } else { Some(num(&rec[2])?) },
                h1_norm: num(&rec[3])?,
                nonlinear_residual: f64::NAN,
                wall_time_s: num(&rec[4])?,
                phase: parse_phase(&rec[5])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn history(residuals: &[f64]) -> IterationHistory {
        IterationHistory {
            records: residuals
                .iter()
                .enumerate()
                .map(|(i, &r)| IterationRecord {
                    k: i + 1,
                    l2_residual: r,
                    l2_error: Some(r * 0.5),
                    h1_norm: 1.0 + i as f64,
                    nonlinear_residual: r * 1e-3,
                    wall_time_s: 0.0,
                    phase: if i < 2 { Phase::CdaPicard } else { Phase::Newton },
                })
                .collect(),
            status: Status::Converged,
        }
    }

    #[test]
    fn geometric_sequences() {
        assert_relative_eq!(contraction_rate_of(&[1.0, 0.5, 0.25, 0.125], 3).unwrap(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(contraction_rate_of(&[1.0, 0.1, 0.01], 2).unwrap(), 0.1, max_relative = 1e-14);
        let seq: Vec<f64> = (0..40).map(|k| 3.0 * 0.83f64.powi(k)).collect();
        assert_relative_eq!(contraction_rate_of(&seq, 10).unwrap(), 0.83, max_relative = 1e-14);
    }

    #[test]
    fn window_uses_trailing_valid_entries() {
        // the initial fast drop is outside the window; trailing zeros are skipped
        let r = [1.0, 1e-3, 5e-4, 2.5e-4, 1.25e-4, 0.0];
        assert_relative_eq!(contraction_rate_of(&r, 3).unwrap(), 0.5, max_relative = 1e-14);
        assert!(matches!(
            contraction_rate_of(&[1.0, 0.5], 2),
            Err(DiagnosticsError::InsufficientData { needed: 3, available: 2 })
        ));
        assert!(contraction_rate_of(&[1.0, 0.5, 0.2], 1).is_err());
    }

    #[test]
    fn theory_examples() {
        let b = theory_bounds(1.0, 4.0, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(b.gamma, 4.0);
        assert_relative_eq!(b.predicted_rate, 0.5f64.sqrt(), max_relative = 1e-15);
        let b = theory_bounds(1.0, 10.0, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(b.lambda_hat, 1.0);
        assert_eq!(b.lambda_bar, 4.0);
        assert!(b.flags.mu_gt_2k1 && b.flags.lambda_bar_gt_2 && b.flags.mu_ge_4k1_sq);
        assert!(!b.flags.mu_le_nu_over_ci2h2);
        assert!(theory_bounds(0.0, 1.0, 0.5, 1.0, 1.0).is_err());
        assert!(theory_bounds(1.0, 1.0, 0.5, 1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn theory_matches_independent_formulas(
            nu in 1e-4f64..10.0, mu in 1e-3f64..1e5, h in 1e-3f64..1.0, k1 in 1e-2f64..1e3, ci in 0.1f64..10.0,
        ) {
            let b = theory_bounds(nu, mu, h, k1, ci).unwrap();
            let s = nu / (ci * ci * h * h);
            let g = if s < mu { s / k1 } else { mu / k1 };
            prop_assert!((b.gamma - g).abs() <= 1e-14 * g);
            prop_assert!((b.predicted_rate - (2.0 / g).sqrt()).abs() <= 1e-14 * b.predicted_rate);
            prop_assert_eq!(b.lambda_hat, if s / 4.0 < mu / 2.0 { s / 4.0 } else { mu / 2.0 });
            prop_assert_eq!(b.lambda_bar, if s < mu / 2.0 { s } else { mu / 2.0 });
            prop_assert!(b.gamma >= 0.0 && b.lambda_hat >= 0.0 && b.lambda_bar >= 0.0);
            let bigger = theory_bounds(nu, mu * 3.0, h, k1, ci).unwrap();
            prop_assert!(!b.flags.mu_gt_2k1 || bigger.flags.mu_gt_2k1);
        }
    }

    #[test]
    fn summary_fields() {
        let mut h = history(&[1.0, 0.5, 0.25, 0.125]);
        h.records[3].l2_error = Some(0.01);
        let s = RunSummary::new(&h, Some(0.02), 3);
        assert_eq!(s.iterations, 4);
        assert_eq!(s.final_residual, Some(0.125));
        assert_eq!(s.min_l2_error, Some(0.01));
        assert_eq!(s.error_to_noise, Some(0.5));
        assert_relative_eq!(s.contraction_rate.unwrap(), 0.5, max_relative = 1e-14);
        let clean = RunSummary::new(&h, Some(0.0), 3);
        assert_eq!(clean.error_to_noise, None);
    }

    #[test]
    fn empty_history_csv_is_header_only() {
        let h = IterationHistory {
            records: vec![],
            status: Status::MaxIter,
        };
        let mut buf = Vec::new();
        write_history_csv(&h, &mut buf, None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,l2_residual,l2_error,h1_norm,wall_time_s,phase\n");
    }

    #[test]
    fn csv_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let mut h = history(&[0.1, 1.0 / 3.0, std::f64::consts::PI * 1e-9]);
        h.records[1].l2_error = None;
        let cfg = serde_json::json!({"Re": 3000.0});
        export_history(&h, &path, HistoryFormat::Csv, &cfg, None).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
        assert!(text.starts_with("# config: {\"Re\":3000.0}\n"));
        let back = import_history_csv(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&h.records) {
            assert_eq!(a.k, b.k);
            assert_eq!(a.l2_residual, b.l2_residual);
            assert_eq!(a.l2_error, b.l2_error);
            assert_eq!(a.h1_norm, b.h1_norm);
            assert_eq!(a.phase, b.phase);
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        let h = history(&[0.7, 0.1 + 0.2, 1e-300, 123456.789e-7]);
        let summary = RunSummary::new(&h, None, 2);
        let cfg = serde_json::json!({"n": 32, "method": "hybrid"});
        export_history(&h, &path, HistoryFormat::Json, &cfg, Some(&summary)).unwrap();
        let doc = import_history_json(&path).unwrap();
        assert_eq!(doc.history, h);
        assert_eq!(doc.summary, Some(summary));
        assert_eq!(doc.config, cfg);
    }

    #[test]
    fn k1_of_linear_field_is_exact() {
        let d = DofMap::new(crate::mesh::Mesh::uniform_cavity(4).unwrap());
        // ∇u = [[1, 2], [3, -1]] everywhere
        let u = d.interpolate(|x, y| [x + 2.0 * y, 3.0 * x - y]);
        assert_relative_eq!(estimate_k1(&d, &u), 15f64.sqrt(), max_relative = 1e-12);
    }
}
