//! Disorder sampling and the Anderson Hamiltonian `H_xy = v_x` (x = y), `-J0` (|x-y| = 1).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::LatticeGeometry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("potential has {got} entries, lattice has {expected} sites")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("hopping J0 must be finite and nonnegative, got {0}")]
    InvalidHopping(f64),
    #[error("uniform disorder needs hi > lo, got [{lo}, {hi})")]
    EmptySupport { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisorderKind {
    Uniform { lo: f64, hi: f64 },
}

impl Default for DisorderKind {
    fn default() -> Self {
        DisorderKind::Uniform { lo: 0.0, hi: 1.0 }
    }
}

impl DisorderKind {
    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            DisorderKind::Uniform { lo, hi } if hi > lo && lo.is_finite() && hi.is_finite() => {
                Ok(())
            }
            DisorderKind::Uniform { lo, hi } => Err(ModelError::EmptySupport { lo, hi }),
        }
    }

    /// Supremum of the single-site density.
    pub fn density_bound(&self) -> f64 {
        match *self {
            DisorderKind::Uniform { lo, hi } => 1.0 / (hi - lo),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisorderConfig {
    pub kind: DisorderKind,
    pub master_seed: u64,
}

impl DisorderConfig {
    pub fn uniform(lo: f64, hi: f64, master_seed: u64) -> Result<Self, ModelError> {
        let kind = DisorderKind::Uniform { lo, hi };
        kind.validate()?;
        Ok(Self { kind, master_seed })
    }

    /// Generator for one disorder realization: ChaCha keyed by the master seed, with the
    /// sample index selecting the stream. Streams are independent and need no shared state.
    pub fn sample_rng(&self, sample_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(sample_index);
        rng
    }
}

/// Iid on-site energies for every site of `geom`.
pub fn sample_potential(
    geom: &LatticeGeometry,
    cfg: &DisorderConfig,
    sample_index: u64,
) -> Vec<f64> {
    let mut rng = cfg.sample_rng(sample_index);
    match cfg.kind {
        DisorderKind::Uniform { lo, hi } => {
            (0..geom.size()).map(|_| rng.random_range(lo..hi)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    pub geometry: LatticeGeometry,
    pub potential: Vec<f64>,
    pub j0: f64,
    pub matrix: DMatrix<f64>,
}

impl Hamiltonian {
    pub fn size(&self) -> usize {
        self.geometry.size()
    }

    /// Largest entry in absolute value.
    pub fn max_norm(&self) -> f64 {
        self.matrix.amax()
    }
}

pub fn build_hamiltonian(
    geom: &LatticeGeometry,
    potential: Vec<f64>,
    j0: f64,
) -> Result<Hamiltonian, ModelError> {
    let n = geom.size();
    if potential.len() != n {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            got: potential.len(),
        });
    }
    if !(j0.is_finite() && j0 >= 0.0) {
        return Err(ModelError::InvalidHopping(j0));
    }
    let mut matrix = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&potential));
    if j0 > 0.0 {
        for x in 0..n {
            for y in geom.neighbors(x) {
                matrix[(x, y)] = -j0;
            }
        }
    }
    Ok(Hamiltonian {
        geometry: geom.clone(),
        potential,
        j0,
        matrix,
    })
}
