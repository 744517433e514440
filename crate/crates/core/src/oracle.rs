//! Reference dense eigensolver and the exact eigenfunction correlator.
//!
//! The solver is a classical cyclic Jacobi with threshold sweeps and accumulated diagonal
//! corrections. It is written independently of the block diagonalizer in `rotor` so that
//! results from the two can be compared as ground truth.

use nalgebra::DMatrix;
use thiserror::Error;

const SWEEP_BUDGET: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("Jacobi sweep budget of {0} exhausted")]
    SweepBudget(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("gap needs at least two eigenvalues, got {0}")]
    UndefinedGap(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `a` is the eigenvector of `eigenvalues[a]`.
    pub eigenvectors: DMatrix<f64>,
    /// `max_a || H v_a - lambda_a v_a ||_inf`.
    pub residual: f64,
}

impl EigenDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn correlator(&self, x: usize, y: usize) -> f64 {
        exact_correlator(&self.eigenvectors, x, y)
    }
}

pub fn dense_jacobi_eigensolve(h: &DMatrix<f64>) -> Result<EigenDecomposition, OracleError> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(OracleError::NotSquare {
            rows: n,
            cols: h.ncols(),
        });
    }
    let mut a = h.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    let mut converged = false;
    for sweep in 1..=SWEEP_BUDGET {
        let mut sm = 0.0;
        for ip in 0..n {
            for iq in ip + 1..n {
                sm += a[(ip, iq)].abs();
            }
        }
        if sm == 0.0 {
            converged = true;
            break;
        }
        let tresh = if sweep < 4 {
            0.2 * sm / (n * n) as f64
        } else {
            0.0
        };
        for ip in 0..n {
            for iq in ip + 1..n {
                let apq = a[(ip, iq)];
                let g = 100.0 * apq.abs();
                if sweep > 4 && d[ip].abs() + g == d[ip].abs() && d[iq].abs() + g == d[iq].abs() {
                    a[(ip, iq)] = 0.0;
                    continue;
                }
                if apq.abs() <= tresh {
                    continue;
                }
                let hd = d[iq] - d[ip];
                let t = if hd.abs() + g == hd.abs() {
                    apq / hd
                } else {
                    let theta = 0.5 * hd / apq;
                    let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let shift = t * apq;
                z[ip] -= shift;
                z[iq] += shift;
                d[ip] -= shift;
                d[iq] += shift;
                a[(ip, iq)] = 0.0;
                // upper-triangle storage only
                for j in 0..ip {
                    rot(&mut a, s, tau, (j, ip), (j, iq));
                }
                for j in ip + 1..iq {
                    rot(&mut a, s, tau, (ip, j), (j, iq));
                }
                for j in iq + 1..n {
                    rot(&mut a, s, tau, (ip, j), (iq, j));
                }
                for j in 0..n {
                    rot(&mut v, s, tau, (j, ip), (j, iq));
                }
            }
        }
        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = 0.0;
        }
    }
    if !converged {
        return Err(OracleError::SweepBudget(SWEEP_BUDGET));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    let residual = eigen_residual(h, &eigenvalues, &eigenvectors);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
        residual,
    })
}

fn rot(a: &mut DMatrix<f64>, s: f64, tau: f64, i: (usize, usize), k: (usize, usize)) {
    let g = a[i];
    let h = a[k];
    a[i] = g - s * (h + g * tau);
    a[k] = h + s * (g - h * tau);
}

/// `max_a || H v_a - lambda_a v_a ||_inf` over the columns of `vectors`.
pub fn eigen_residual(h: &DMatrix<f64>, values: &[f64], vectors: &DMatrix<f64>) -> f64 {
    let hv = h * vectors;
    let mut worst = 0.0f64;
    for (a, &lambda) in values.iter().enumerate() {
        let col = vectors.column(a);
        let r = (hv.column(a) - col * lambda).amax();
        worst = worst.max(r);
    }
    worst
}

/// `sum_a |psi_a(x) psi_a(y)|` with `psi_a` the columns of `vectors`.
pub fn exact_correlator(vectors: &DMatrix<f64>, x: usize, y: usize) -> f64 {
    vectors
        .row(x)
        .iter()
        .zip(vectors.row(y).iter())
        .map(|(a, b)| (a * b).abs())
        .sum()
}

/// Largest absolute difference between the sorted inputs.
pub fn spectrum_compare(a: &[f64], b: &[f64]) -> Result<f64, OracleError> {
    if a.len() != b.len() {
        return Err(OracleError::LengthMismatch(a.len(), b.len()));
    }
    let sa = sorted(a);
    let sb = sorted(b);
    Ok(sa
        .iter()
        .zip(&sb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Smallest spacing between adjacent sorted eigenvalues.
pub fn min_gap(values: &[f64]) -> Result<f64, OracleError> {
    if values.len() < 2 {
        return Err(OracleError::UndefinedGap(values.len()));
    }
    let s = sorted(values);
    Ok(s.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min))
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}
