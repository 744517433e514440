//! Orthogonal rotations: the perturbative rotation `exp(-A)` built from nonresonant
//! couplings, and exact Jacobi diagonalization of small blocks.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::lattice::Site;

/// Certified bound on `max |R^T R - I|` for every rotation this module hands out.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

const BLOCK_SWEEP_BUDGET: usize = 100;
const BLOCK_REL_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero energy gap on perturbative pair ({x}, {y})")]
    ZeroGap { x: usize, y: usize },
    #[error("rotation is not orthogonal: residual {residual:e}")]
    NotOrthogonal { residual: f64 },
    #[error("block Jacobi did not converge in {sweeps} sweeps (off-diagonal {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },
    #[error("empty block")]
    EmptyBlock,
}

/// Antisymmetric generator `A_xy = J_xy / (E_x - E_y)` on the supplied pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub matrix: DMatrix<f64>,
    pub support: Vec<(Site, Site)>,
}

impl Generator {
    pub fn zeros(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(n, n),
            support: Vec::new(),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.matrix.amax()
    }
}

pub fn build_generator(
    energies: &[f64],
    coupling: &DMatrix<f64>,
    pairs: &[(Site, Site)],
) -> Result<Generator, RotorError> {
    let n = energies.len();
    if coupling.nrows() != n || coupling.ncols() != n {
        return Err(RotorError::DimensionMismatch {
            left: n,
            right: coupling.nrows(),
        });
    }
    let mut gen = Generator::zeros(n);
    for &(x, y) in pairs {
        if x == y {
            continue;
        }
        let gap = energies[x] - energies[y];
        if gap == 0.0 {
            return Err(RotorError::ZeroGap { x, y });
        }
        let a = coupling[(x, y)] / gap;
        gen.matrix[(x, y)] = a;
        gen.matrix[(y, x)] = -a;
        gen.support.push((x, y));
    }
    Ok(gen)
}

/// A dense orthogonal matrix with its measured orthogonality defect.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalRotation {
    pub matrix: DMatrix<f64>,
    pub orth_residual: f64,
}

impl OrthogonalRotation {
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
            orth_residual: 0.0,
        }
    }

    /// Wrap `matrix` after checking `max |M^T M - I| < ORTHOGONALITY_TOL`.
    pub fn certify(matrix: DMatrix<f64>) -> Result<Self, RotorError> {
        let orth_residual = orthogonality_residual(&matrix);
        if orth_residual < ORTHOGONALITY_TOL {
            Ok(Self {
                matrix,
                orth_residual,
            })
        } else {
            Err(RotorError::NotOrthogonal {
                residual: orth_residual,
            })
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn orthogonality_residual(m: &DMatrix<f64>) -> f64 {
    let mut gram = m.tr_mul(m);
    for i in 0..gram.nrows() {
        gram[(i, i)] -= 1.0;
    }
    gram.amax()
}

/// `exp(-A)` by scaling and squaring of a truncated Taylor series.
pub fn orthogonal_exp(gen: &Generator) -> Result<OrthogonalRotation, RotorError> {
    let n = gen.matrix.nrows();
    if gen.support.is_empty() && gen.matrix.amax() == 0.0 {
        return Ok(OrthogonalRotation::identity(n));
    }
    let norm = induced_one_norm(&gen.matrix);
    // scale so the series argument has norm <= 1/4
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let scaled = &gen.matrix * (-(0.5f64).powi(squarings));

    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=40 {
        term = &term * &scaled / k as f64;
        result += &term;
        // remaining tail is bounded by the current term for ||scaled|| <= 1/4
        if term.amax() < 1e-20 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    OrthogonalRotation::certify(result)
}

fn induced_one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `R^T H R`, symmetrized as `(X + X^T) / 2`.
pub fn conjugate(h: &DMatrix<f64>, rot: &OrthogonalRotation) -> Result<DMatrix<f64>, RotorError> {
    if h.nrows() != rot.dim() || h.ncols() != rot.dim() {
        return Err(RotorError::DimensionMismatch {
            left: h.nrows(),
            right: rot.dim(),
        });
    }
    let x = rot.matrix.tr_mul(&(h * &rot.matrix));
    Ok(symmetrize(x))
}

pub(crate) fn symmetrize(x: DMatrix<f64>) -> DMatrix<f64> {
    (&x + x.transpose()) * 0.5
}

/// `cumulative * step`, re-certified.
pub fn accumulate(
    cumulative: &OrthogonalRotation,
    step: &OrthogonalRotation,
) -> Result<OrthogonalRotation, RotorError> {
    if cumulative.dim() != step.dim() {
        return Err(RotorError::DimensionMismatch {
            left: cumulative.dim(),
            right: step.dim(),
        });
    }
    OrthogonalRotation::certify(&cumulative.matrix * &step.matrix)
}

/// Exact diagonalization of the principal submatrix on `sites`.
///
/// Column `i` of `vectors` is the eigenvector of the `i`-th smallest eigenvalue, and is the
/// state attached to `sites[i]` (sites sorted ascending), so lexicographic site order is
/// matched with increasing energy.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEigen {
    pub sites: Vec<Site>,
    pub vectors: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl BlockEigen {
    /// The block rotation as an `n x n` matrix, identity outside the block.
    pub fn embedded(&self, n: usize) -> Result<OrthogonalRotation, RotorError> {
        let mut m = DMatrix::identity(n, n);
        for (i, &si) in self.sites.iter().enumerate() {
            for (j, &sj) in self.sites.iter().enumerate() {
                m[(si, sj)] = self.vectors[(i, j)];
            }
        }
        OrthogonalRotation::certify(m)
    }

    /// Conjugate `h` by the embedded rotation, touching only rows and columns of the block,
    /// and write the block itself as the exact diagonal of eigenvalues.
    pub fn apply(&self, h: &mut DMatrix<f64>) {
        let n = h.nrows();
        let b = self.sites.len();
        // rows: H[S, :] <- V^T H[S, :]
        let rows = DMatrix::from_fn(b, n, |i, c| h[(self.sites[i], c)]);
        let rows = self.vectors.tr_mul(&rows);
        for (i, &s) in self.sites.iter().enumerate() {
            for c in 0..n {
                h[(s, c)] = rows[(i, c)];
            }
        }
        // columns: H[:, S] <- H[:, S] V
        let cols = DMatrix::from_fn(n, b, |r, j| h[(r, self.sites[j])]);
        let cols = cols * &self.vectors;
        for (j, &s) in self.sites.iter().enumerate() {
            for r in 0..n {
                h[(r, s)] = cols[(r, j)];
            }
        }
        for (i, &si) in self.sites.iter().enumerate() {
            for (j, &sj) in self.sites.iter().enumerate() {
                h[(si, sj)] = if i == j { self.eigenvalues[i] } else { 0.0 };
            }
        }
        // restore exact symmetry of the border rows/columns
        for &s in &self.sites {
            for c in 0..n {
                let avg = 0.5 * (h[(s, c)] + h[(c, s)]);
                h[(s, c)] = avg;
                h[(c, s)] = avg;
            }
        }
    }

    /// `R[:, S] <- R[:, S] V`, i.e. `R * embedded`.
    pub fn right_multiply(&self, r: &mut DMatrix<f64>) {
        let n = r.nrows();
        let cols = DMatrix::from_fn(n, self.sites.len(), |row, j| r[(row, self.sites[j])]);
        let cols = cols * &self.vectors;
        for (j, &s) in self.sites.iter().enumerate() {
            for row in 0..n {
                r[(row, s)] = cols[(row, j)];
            }
        }
    }
}

/// Row-cyclic Jacobi on `h[sites, sites]` until the largest off-diagonal entry falls below
/// `1e-13` times the largest entry of the submatrix.
pub fn jacobi_block_diagonalize(
    h: &DMatrix<f64>,
    sites: &[Site],
) -> Result<BlockEigen, RotorError> {
    if sites.is_empty() {
        return Err(RotorError::EmptyBlock);
    }
    let mut sites = sites.to_vec();
    sites.sort_unstable();
    sites.dedup();
    let b = sites.len();
    let mut a = DMatrix::from_fn(b, b, |i, j| h[(sites[i], sites[j])]);
    let mut v = DMatrix::<f64>::identity(b, b);
    let tol = BLOCK_REL_TOL * a.amax();

    let max_off = |a: &DMatrix<f64>| {
        let mut m = 0.0f64;
        for p in 0..b {
            for q in p + 1..b {
                m = m.max(a[(p, q)].abs());
            }
        }
        m
    };

    let mut sweeps = 0;
    loop {
        let off = max_off(&a);
        if off <= tol {
            break;
        }
        if sweeps == BLOCK_SWEEP_BUDGET {
            return Err(RotorError::NoConvergence { sweeps, off });
        }
        sweeps += 1;
        for p in 0..b {
            for q in p + 1..b {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (c, s) = rotation_angle(a[(p, p)], a[(q, q)], apq);
                rotate_columns(&mut a, p, q, c, s);
                rotate_rows(&mut a, p, q, c, s);
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                rotate_columns(&mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::from_fn(b, b, |r, j| v[(r, order[j])]);
    for mut col in vectors.column_iter_mut() {
        // sign convention: largest component positive
        let mut lead = 0;
        for r in 1..b {
            if col[r].abs() > col[lead].abs() {
                lead = r;
            }
        }
        if col[lead] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(BlockEigen {
        sites,
        vectors,
        eigenvalues,
    })
}

/// Cosine and sine of the plane rotation that annihilates `apq`.
fn rotation_angle(app: f64, aqq: f64, apq: f64) -> (f64, f64) {
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        let t = 1.0 / (theta.abs() + (theta * theta + 1.0).sqrt());
        if theta < 0.0 {
            -t
        } else {
            t
        }
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    (c, t * c)
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.nrows() {
        let (mp, mq) = (m[(k, p)], m[(k, q)]);
        m[(k, p)] = c * mp - s * mq;
        m[(k, q)] = s * mp + c * mq;
    }
}

fn rotate_rows(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.ncols() {
        let (mp, mq) = (m[(p, k)], m[(q, k)]);
        m[(p, k)] = c * mp - s * mq;
        m[(q, k)] = s * mp + c * mq;
    }
}
