//! Measurement data: pointwise samples of a reference velocity at observation
//! vertices, optionally corrupted by Gaussian noise.
//!
//! Noise is drawn from `N(0, (snr · u_max)²)` independently for every
//! component of every measurement. The generator is ChaCha8 (`rand_chacha`)
//! seeded with `seed_from_u64(seed)`, sampled through `rand_distr::Normal`;
//! draws are consumed row by row, x-component first. The stream is portable,
//! so identical `(seed, shape)` gives identical noise on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{CellValues, DofMap, VelocityField};
use crate::mesh::{locate_observation_vertices, CoarseGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservationError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("observation vertex {vertex} out of range ({n_vertices} vertices)")]
    VertexOutOfRange { vertex: usize, n_vertices: usize },
}

/// Clean and noisy samples on a coarse grid together with the noise metadata
/// that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    #[serde(rename = "N")]
    pub grid_n: usize,
    pub snr: f64,
    pub seed: u64,
    pub u_max: f64,
    pub vertex_ids: Vec<usize>,
    pub clean: Vec<[f64; 2]>,
    pub noisy: Vec<[f64; 2]>,
}

impl ObservationSet {
    /// Samples `reference` at the vertices nearest the coarse-cell midpoints
    /// and adds noise.
    pub fn generate(
        dofmap: &DofMap,
        reference: &VelocityField,
        grid: CoarseGrid,
        snr: f64,
        u_max: f64,
        seed: u64,
    ) -> Result<Self, ObservationError> {
        let vertex_ids = locate_observation_vertices(dofmap.mesh(), &grid);
        let clean = sample_pointwise(dofmap, reference, &vertex_ids)?;
        let noisy = add_gaussian_noise(&clean, snr, u_max, seed)?;
        Ok(Self {
            grid_n: grid.n(),
            snr,
            seed,
            u_max,
            vertex_ids,
            clean,
            noisy,
        })
    }

    pub fn grid(&self) -> CoarseGrid {
        CoarseGrid::new(self.grid_n).expect("validated on construction")
    }

    /// `noisy − clean` per cell.
    pub fn noise(&self) -> CellValues {
        self.noisy
            .iter()
            .zip(&self.clean)
            .map(|(n, c)| [n[0] - c[0], n[1] - c[1]])
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self, ObservationError> {
        let set: Self =
            serde_json::from_str(s).map_err(|e| ObservationError::InvalidArgument(format!("bad observation file: {e}")))?;
        let cells = set.grid_n * set.grid_n;
        if set.grid_n == 0 || set.vertex_ids.len() != cells || set.clean.len() != cells || set.noisy.len() != cells {
            return Err(ObservationError::InvalidArgument(
                "observation arrays do not match the grid size".into(),
            ));
        }
        Ok(set)
    }
}

/// Reference velocity at each observation vertex.
pub fn sample_pointwise(
    dofmap: &DofMap,
    reference: &VelocityField,
    obs_vertices: &[usize],
) -> Result<CellValues, ObservationError> {
    dofmap
        .check_velocity(reference)
        .map_err(|e| ObservationError::InvalidArgument(e.to_string()))?;
    let nv = dofmap.mesh().n_vertices();
    obs_vertices
        .iter()
        .map(|&v| {
            if v >= nv {
                return Err(ObservationError::VertexOutOfRange {
                    vertex: v,
                    n_vertices: nv,
                });
            }
            Ok([
                reference.0[dofmap.velocity_dof(v, 0)],
                reference.0[dofmap.velocity_dof(v, 1)],
            ])
        })
        .collect()
}

/// Adds i.i.d. `N(0, (snr · u_max)²)` draws to every component.
pub fn add_gaussian_noise(clean: &[[f64; 2]], snr: f64, u_max: f64, seed: u64) -> Result<CellValues, ObservationError> {
    if !(snr >= 0.0) {
        return Err(ObservationError::InvalidArgument(format!("snr must be nonnegative, got {snr}")));
    }
    if !(u_max > 0.0) {
        return Err(ObservationError::InvalidArgument(format!("u_max must be positive, got {u_max}")));
    }
    if snr == 0.0 {
        return Ok(clean.to_vec());
    }
    let normal = Normal::new(0.0, snr * u_max).map_err(|e| ObservationError::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(clean
        .iter()
        .map(|c| {
            let e0 = normal.sample(&mut rng);
            let e1 = normal.sample(&mut rng);
            [c[0] + e0, c[1] + e1]
        })
        .collect())
}

/// Piecewise-constant `L²` norm of the noise interpolant,
/// `(Σ_cells |cell| |ε_cell|²)^{1/2}`.
pub fn noise_interpolant_norm(obs: &ObservationSet) -> f64 {
    let area = obs.grid().cell_area();
    obs.noise()
        .iter()
        .map(|e| area * (e[0] * e[0] + e[1] * e[1]))
        .sum::<f64>()
        .sqrt()
}
