//! The six Monte Carlo experiments.
//!
//! Samples run in parallel and are collected in sample order; every aggregate is then
//! reduced sequentially, so a rerun with the same config gives identical numbers.

use mslocal_core::blocks::same_block;
use mslocal_core::driver::{argmax_site, is_permutation};
use mslocal_core::oracle::{eigen_residual, exact_correlator, min_gap, spectrum_compare};
use mslocal_core::{
    build_hamiltonian, dense_jacobi_eigensolve, run_to_convergence, sample_potential,
    BlockRegistry, FinalDiagonalization, Hamiltonian, LatticeGeometry, Schedule, Site, StepMetrics,
};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::stats::{geometric_mean, log_slope, mean_se, median, quantile};

/// Per-sample record written to the JSON-lines sidecar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleTrace {
    pub sample: u64,
    pub steps_used: usize,
    pub metrics: Vec<StepMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registries: Option<Vec<BlockRegistry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SampleTrace {
    fn ok(sample: u64, fin: &FinalDiagonalization) -> Self {
        Self {
            sample,
            steps_used: fin.steps_used,
            metrics: fin.metrics.clone(),
            registries: None,
            error: None,
        }
    }

    fn failed(sample: u64, error: String) -> Self {
        Self {
            sample,
            steps_used: 0,
            metrics: Vec::new(),
            registries: None,
            error: Some(error),
        }
    }
}

/// Counts shared by every report.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunInfo {
    pub samples: usize,
    pub failures: usize,
    /// Worst `max |R^T R - I|` over all successful samples.
    pub max_orth_residual: f64,
    #[serde(skip)]
    pub traces: Vec<SampleTrace>,
}

impl RunInfo {
    pub fn failure_fraction(&self) -> f64 {
        self.failures as f64 / self.samples.max(1) as f64
    }
}

pub fn sample_hamiltonian(
    cfg: &ExperimentConfig,
    geom: &LatticeGeometry,
    index: u64,
) -> Hamiltonian {
    let v = sample_potential(geom, &cfg.disorder(), index);
    build_hamiltonian(geom, v, cfg.j0).expect("validated config")
}

fn diagonalize(h: &Hamiltonian, sched: &Schedule) -> Result<FinalDiagonalization, String> {
    run_to_convergence(h, sched).map_err(|e| e.to_string())
}

/// Run `f` on every sample index in parallel; results come back in index order.
fn map_samples<T, F>(cfg: &ExperimentConfig, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..cfg.num_samples as u64).into_par_iter().map(f).collect()
}

/// Site pairs used for distance statistics: all pairs `x <= y` in one dimension, pairs
/// anchored at the center site otherwise. Each entry is `(x, y, d)`.
pub fn reference_pairs(geom: &LatticeGeometry) -> Vec<(Site, Site, usize)> {
    let n = geom.size();
    let d = |x, y| geom.l1_distance(x, y).expect("sites in range");
    if geom.dim() == 1 {
        (0..n)
            .flat_map(|x| (x..n).map(move |y| (x, y)))
            .map(|(x, y)| (x, y, d(x, y)))
            .collect()
    } else {
        let c = geom.center();
        (0..n).map(|y| (c, y, d(c, y))).collect()
    }
}

fn max_distance(pairs: &[(Site, Site, usize)]) -> usize {
    pairs.iter().map(|p| p.2).max().unwrap_or(0)
}

// correlator

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelatorRow {
    pub distance: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Fraction of pairs with `Q > J0^(kappa d / 2)`.
    pub tail_frequency: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelatorReport {
    pub kappa: f64,
    pub rows: Vec<CorrelatorRow>,
    /// Least-squares slope of `ln Q(d)` over `d >= 1`; `-inf` when every `Q(d)` vanishes.
    pub fitted_rate: f64,
    /// Largest deviation between pipeline and reference correlators.
    pub oracle_max_diff: f64,
    pub info: RunInfo,
}

struct CorrelatorSample {
    /// Per distance: sum of Q, number of tail exceedances, number of pairs.
    sums: Vec<(f64, usize, usize)>,
    oracle_diff: f64,
}

pub fn run_correlator(cfg: &ExperimentConfig) -> CorrelatorReport {
    let geom = cfg.geometry();
    let sched = cfg.schedule();
    let pairs = reference_pairs(&geom);
    let dmax = max_distance(&pairs);
    let threshold = |d: usize| cfg.j0.powf(cfg.kappa * d as f64 / 2.0);

    let results = map_samples(cfg, |idx| {
        let h = sample_hamiltonian(cfg, &geom, idx);
        let fin = diagonalize(&h, &sched)?;
        let oracle = dense_jacobi_eigensolve(&h.matrix).map_err(|e| e.to_string())?;
        let mut sums = vec![(0.0, 0, 0); dmax + 1];
        let mut oracle_diff = 0.0f64;
        for &(x, y, d) in &pairs {
            let q = exact_correlator(fin.eigenvectors(), x, y);
            oracle_diff = oracle_diff.max((q - oracle.correlator(x, y)).abs());
            let s = &mut sums[d];
            s.0 += q;
            s.1 += usize::from(q > threshold(d));
            s.2 += 1;
        }
        Ok::<_, String>((
            CorrelatorSample { sums, oracle_diff },
            SampleTrace::ok(idx, &fin),
            fin.max_orth_residual,
        ))
    });

    let mut info = RunInfo {
        samples: cfg.num_samples,
        ..RunInfo::default()
    };
    let mut per_d: Vec<Vec<f64>> = vec![Vec::new(); dmax + 1];
    let mut tail = vec![(0usize, 0usize); dmax + 1];
    let mut oracle_max_diff = 0.0f64;
    for (idx, r) in results.into_iter().enumerate() {
        match r {
            Ok((s, trace, orth)) => {
                for (d, &(sum, exceed, count)) in s.sums.iter().enumerate() {
                    if count > 0 {
                        per_d[d].push(sum / count as f64);
                        tail[d].0 += exceed;
                        tail[d].1 += count;
                    }
                }
                oracle_max_diff = oracle_max_diff.max(s.oracle_diff);
                info.max_orth_residual = info.max_orth_residual.max(orth);
                info.traces.push(trace);
            }
            Err(e) => {
                info.failures += 1;
                info.traces.push(SampleTrace::failed(idx as u64, e));
            }
        }
    }

    let rows: Vec<CorrelatorRow> = (0..=dmax)
        .filter(|&d| tail[d].1 > 0)
        .map(|d| {
            let (mean, stderr) = mean_se(&per_d[d]);
            CorrelatorRow {
                distance: d,
                mean,
                stderr,
                tail_frequency: tail[d].0 as f64 / tail[d].1 as f64,
                pairs: tail[d].1,
            }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.distance >= 1)
        .map(|r| (r.distance as f64, r.mean))
        .unzip();
    let fitted_rate = log_slope(&xs, &ys).unwrap_or(f64::NEG_INFINITY);
    CorrelatorReport {
        kappa: cfg.kappa,
        rows,
        fitted_rate,
        oracle_max_diff,
        info,
    }
}

// percolation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercolationRow {
    /// Step index, or `0` for "same block at any step".
    pub scale: usize,
    pub distance: usize,
    pub frequency: f64,
    pub stderr: f64,
    pub events: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercolationReport {
    pub rows: Vec<PercolationRow>,
    pub info: RunInfo,
}

impl PercolationReport {
    /// Rows of one scale, ordered by distance.
    pub fn scale(&self, scale: usize) -> Vec<&PercolationRow> {
        self.rows.iter().filter(|r| r.scale == scale).collect()
    }
}

pub fn run_percolation(cfg: &ExperimentConfig) -> PercolationReport {
    let geom = cfg.geometry();
    let sched = cfg.schedule();
    let pairs: Vec<_> = reference_pairs(&geom)
        .into_iter()
        .filter(|p| p.2 >= 1)
        .collect();
    let dmax = max_distance(&pairs);

    let results = map_samples(cfg, |idx| {
        let h = sample_hamiltonian(cfg, &geom, idx);
        let fin = diagonalize(&h, &sched)?;
        let mut trace = SampleTrace::ok(idx, &fin);
        trace.registries = Some(fin.history.clone());
        Ok::<_, String>((fin.history, trace, fin.max_orth_residual))
    });

    let mut info = RunInfo {
        samples: cfg.num_samples,
        ..RunInfo::default()
    };
    let histories: Vec<Vec<BlockRegistry>> = results
        .into_iter()
        .enumerate()
        .filter_map(|(idx, r)| match r {
            Ok((hist, trace, orth)) => {
                info.max_orth_residual = info.max_orth_residual.max(orth);
                info.traces.push(trace);
                Some(hist)
            }
            Err(e) => {
                info.failures += 1;
                info.traces.push(SampleTrace::failed(idx as u64, e));
                None
            }
        })
        .collect();
    let scales = histories.iter().map(Vec::len).max().unwrap_or(0);

    let mut pairs_at = vec![0usize; dmax + 1];
    for p in &pairs {
        pairs_at[p.2] += 1;
    }
    // events[scale][d] per sample; scale 0 is the union over steps
    let mut per_sample: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); dmax + 1]; scales + 1];
    let mut totals = vec![vec![0usize; dmax + 1]; scales + 1];
    for hist in &histories {
        let mut counts = vec![vec![0usize; dmax + 1]; scales + 1];
        for &(x, y, d) in &pairs {
            let mut any = false;
            for (k, reg) in hist.iter().enumerate() {
                if same_block(x, y, reg) {
                    counts[k + 1][d] += 1;
                    any = true;
                }
            }
            counts[0][d] += usize::from(any);
        }
        for k in 0..=scales {
            for d in 1..=dmax {
                if pairs_at[d] > 0 {
                    per_sample[k][d].push(counts[k][d] as f64 / pairs_at[d] as f64);
                    totals[k][d] += counts[k][d];
                }
            }
        }
    }

    let mut rows = Vec::new();
    for k in 0..=scales {
        for d in (1..=dmax).filter(|&d| pairs_at[d] > 0) {
            let (frequency, stderr) = if per_sample[k][d].is_empty() {
                (0.0, 0.0)
            } else {
                mean_se(&per_sample[k][d])
            };
            rows.push(PercolationRow {
                scale: k,
                distance: d,
                frequency,
                stderr,
                events: totals[k][d],
                pairs: pairs_at[d] * histories.len(),
            });
        }
    }
    PercolationReport { rows, info }
}

// convergence

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub step: usize,
    pub scale_length: f64,
    pub median_max_offdiag: f64,
    pub geomean_max_offdiag: f64,
    /// `(J0/epsilon)^(L_k)`.
    pub predicted_bound: f64,
    pub geomean_ratio: f64,
    /// Samples that actually performed this step.
    pub active_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Slope of `ln median max|J|` against `L_k` over steps with a positive median that a
    /// majority of samples performed.
    pub fitted_slope: Option<f64>,
    /// `ln(J0/epsilon) / 2`.
    pub reference_slope: f64,
    /// Samples without any block in the first step.
    pub nonresonant_samples: usize,
    /// Of those, samples with `max|J| > 10 J0^2 / epsilon` after the first step.
    pub first_step_violations: usize,
    pub info: RunInfo,
}

pub fn run_convergence(cfg: &ExperimentConfig) -> ConvergenceReport {
    let geom = cfg.geometry();
    let sched = cfg.schedule();
    let params = sched.params;
    let steps = sched.max_steps;

    let results = map_samples(cfg, |idx| {
        let h = sample_hamiltonian(cfg, &geom, idx);
        let fin = diagonalize(&h, &sched)?;
        // a sample that stopped early keeps the value it stopped at
        let mut last = {
            let mut j = h.matrix.clone();
            j.fill_diagonal(0.0);
            j.amax()
        };
        let mut trace_vals = Vec::with_capacity(steps);
        for k in 0..steps {
            if let Some(m) = fin.metrics.get(k) {
                last = m.max_offdiag;
            }
            trace_vals.push(last);
        }
        let nonresonant = fin.history.first().is_none_or(BlockRegistry::is_empty);
        Ok::<_, String>((
            (trace_vals, fin.metrics.len()),
            nonresonant,
            SampleTrace::ok(idx, &fin),
            fin.max_orth_residual,
        ))
    });

    let mut info = RunInfo {
        samples: cfg.num_samples,
        ..RunInfo::default()
    };
    let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); steps];
    let mut active = vec![0usize; steps];
    let mut nonresonant_samples = 0;
    let mut first_step_violations = 0;
    let first_bound = 10.0 * cfg.j0 * cfg.j0 / params.epsilon;
    for (idx, r) in results.into_iter().enumerate() {
        match r {
            Ok(((vals, performed), nonres, trace, orth)) => {
                for (k, v) in vals.iter().enumerate() {
                    per_step[k].push(*v);
                }
                for a in active.iter_mut().take(performed) {
                    *a += 1;
                }
                if nonres && steps > 0 {
                    nonresonant_samples += 1;
                    if vals[0] > first_bound {
                        first_step_violations += 1;
                    }
                }
                info.max_orth_residual = info.max_orth_residual.max(orth);
                info.traces.push(trace);
            }
            Err(e) => {
                info.failures += 1;
                info.traces.push(SampleTrace::failed(idx as u64, e));
            }
        }
    }

    let ratio_base = if params.epsilon > 0.0 {
        cfg.j0 / params.epsilon
    } else {
        f64::INFINITY
    };
    let rows: Vec<ConvergenceRow> = (0..steps)
        .map(|k| {
            let step = k + 1;
            let l = sched.length(step);
            let predicted_bound = ratio_base.powf(l);
            let vals = &per_step[k];
            let ratios: Vec<f64> = vals.iter().map(|v| v / predicted_bound).collect();
            ConvergenceRow {
                step,
                scale_length: l,
                median_max_offdiag: if vals.is_empty() { 0.0 } else { median(vals) },
                geomean_max_offdiag: geometric_mean(vals),
                predicted_bound,
                geomean_ratio: geometric_mean(&ratios),
                active_samples: active[k],
            }
        })
        .collect();
    let succeeded = cfg.num_samples - info.failures;
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| 2 * r.active_samples > succeeded)
        .map(|r| (r.scale_length, r.median_max_offdiag))
        .unzip();
    ConvergenceReport {
        fitted_slope: log_slope(&xs, &ys),
        reference_slope: 0.5 * ratio_base.ln(),
        rows,
        nonresonant_samples,
        first_step_violations,
        info,
    }
}

// volume convergence

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeRow {
    pub half_width: usize,
    pub energy_diff_mean: f64,
    pub energy_diff_stderr: f64,
    pub vector_diff_mean: f64,
    pub vector_diff_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeReport {
    pub rows: Vec<VolumeRow>,
    /// Slope of `ln` mean energy difference against `K`, excluding the largest box.
    pub energy_slope: Option<f64>,
    pub vector_slope: Option<f64>,
    pub info: RunInfo,
}

/// Site indices of the box `[kmax-k, kmax+k]^D` inside the box of half-width `kmax`.
fn sub_box(big: &LatticeGeometry, kmax: usize, k: usize) -> (LatticeGeometry, Vec<Site>) {
    let dim = big.dim();
    let side = 2 * k + 1;
    let small = LatticeGeometry::new(&vec![side; dim]).expect("positive side");
    let embed = (0..small.size())
        .map(|s| {
            let c: Vec<usize> = small
                .coords(s)
                .expect("in range")
                .into_iter()
                .map(|c| c + kmax - k)
                .collect();
            big.index(&c).expect("inside the big box")
        })
        .collect();
    (small, embed)
}

/// Energy and big-box eigenvector of the state labeled by the center site.
fn center_state(
    cfg: &ExperimentConfig,
    sched: &Schedule,
    big: &LatticeGeometry,
    potential: &[f64],
    kmax: usize,
    k: usize,
) -> Result<(f64, DVector<f64>, FinalDiagonalization), String> {
    let (geom, embed) = sub_box(big, kmax, k);
    let v: Vec<f64> = embed.iter().map(|&s| potential[s]).collect();
    let h = build_hamiltonian(&geom, v, cfg.j0).map_err(|e| e.to_string())?;
    let fin = diagonalize(&h, sched)?;
    let center = geom.center();
    let alpha = fin
        .labels
        .iter()
        .position(|&x| x == center)
        .ok_or("center site has no state")?;
    let col = fin.eigenvectors().column(alpha);
    let sign = if col[center] != 0.0 {
        col[center].signum()
    } else {
        col[argmax_site(fin.eigenvectors(), alpha)].signum()
    };
    let mut phi = DVector::zeros(big.size());
    for (i, &s) in embed.iter().enumerate() {
        phi[s] = sign * col[i];
    }
    Ok((fin.eigenvalues[alpha], phi, fin))
}

pub fn run_volume_convergence(cfg: &ExperimentConfig) -> VolumeReport {
    let sched = cfg.schedule();
    let sizes = &cfg.volume_sizes;
    let kmax = *sizes.last().expect("validated sizes");
    let dim = cfg.dims.len();
    let big = LatticeGeometry::new(&vec![2 * kmax + 1; dim]).expect("positive side");

    let results = map_samples(cfg, |idx| {
        let potential = sample_potential(&big, &cfg.disorder(), idx);
        let (e_ref, phi_ref, fin) = center_state(cfg, &sched, &big, &potential, kmax, kmax)?;
        let mut diffs = Vec::with_capacity(sizes.len());
        let mut orth = fin.max_orth_residual;
        for &k in sizes {
            let (e, phi, f) = center_state(cfg, &sched, &big, &potential, kmax, k)?;
            orth = orth.max(f.max_orth_residual);
            diffs.push(((e - e_ref).abs(), (phi - &phi_ref).amax()));
        }
        Ok::<_, String>((diffs, SampleTrace::ok(idx, &fin), orth))
    });

    let mut info = RunInfo {
        samples: cfg.num_samples,
        ..RunInfo::default()
    };
    let mut e_diffs = vec![Vec::new(); sizes.len()];
    let mut v_diffs = vec![Vec::new(); sizes.len()];
    for (idx, r) in results.into_iter().enumerate() {
        match r {
            Ok((diffs, trace, orth)) => {
                for (i, (de, dv)) in diffs.into_iter().enumerate() {
                    e_diffs[i].push(de);
                    v_diffs[i].push(dv);
                }
                info.max_orth_residual = info.max_orth_residual.max(orth);
                info.traces.push(trace);
            }
            Err(e) => {
                info.failures += 1;
                info.traces.push(SampleTrace::failed(idx as u64, e));
            }
        }
    }
    let rows: Vec<VolumeRow> = sizes
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (em, es) = mean_se(&e_diffs[i]);
            let (vm, vs) = mean_se(&v_diffs[i]);
            VolumeRow {
                half_width: k,
                energy_diff_mean: em,
                energy_diff_stderr: es,
                vector_diff_mean: vm,
                vector_diff_stderr: vs,
            }
        })
        .collect();
    let fit = |f: fn(&VolumeRow) -> f64| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.half_width < kmax)
            .map(|r| (r.half_width as f64, f(r)))
            .unzip();
        log_slope(&xs, &ys)
    };
    VolumeReport {
        energy_slope: fit(|r| r.energy_diff_mean),
        vector_slope: fit(|r| r.vector_diff_mean),
        rows,
        info,
    }
}

// oracle comparison

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub sample: u64,
    pub spectrum_diff: f64,
    pub max_residual: f64,
    pub oracle_residual: f64,
    pub labels_bijective: bool,
    pub labels_at_argmax: bool,
    /// Every state, including block states, peaks at its labeled site.
    pub argmax_all: bool,
    pub block_history_empty: bool,
    pub steps_used: usize,
    pub cleanup_passes: usize,
    pub orth_residual: f64,
    pub error: Option<String>,
}

impl OracleRow {
    pub fn passed(&self) -> bool {
        self.error.is_none()
            && self.spectrum_diff < 1e-9
            && self.max_residual < 1e-8
            && self.labels_bijective
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub passed: usize,
    pub info: RunInfo,
}

pub fn run_oracle_compare(cfg: &ExperimentConfig) -> OracleReport {
    let geom = cfg.geometry();
    let sched = cfg.schedule();
    let results = map_samples(cfg, |idx| {
        let failed = |e: String| {
            (
                OracleRow {
                    sample: idx,
                    spectrum_diff: f64::NAN,
                    max_residual: f64::NAN,
                    oracle_residual: f64::NAN,
                    labels_bijective: false,
                    labels_at_argmax: false,
                    argmax_all: false,
                    block_history_empty: false,
                    steps_used: 0,
                    cleanup_passes: 0,
                    orth_residual: f64::NAN,
                    error: Some(e.clone()),
                },
                SampleTrace::failed(idx, e),
            )
        };
        let h = sample_hamiltonian(cfg, &geom, idx);
        let fin = match diagonalize(&h, &sched) {
            Ok(f) => f,
            Err(e) => return failed(e),
        };
        let oracle = match dense_jacobi_eigensolve(&h.matrix) {
            Ok(o) => o,
            Err(e) => return failed(e.to_string()),
        };
        let row = OracleRow {
            sample: idx,
            spectrum_diff: spectrum_compare(&fin.eigenvalues, &oracle.eigenvalues)
                .expect("equal sizes"),
            max_residual: eigen_residual(&h.matrix, &fin.eigenvalues, fin.eigenvectors()),
            oracle_residual: oracle.residual,
            labels_bijective: is_permutation(&fin.labels),
            labels_at_argmax: fin.labels_at_argmax,
            argmax_all: (0..fin.labels.len())
                .all(|a| argmax_site(fin.eigenvectors(), a) == fin.labels[a]),
            block_history_empty: fin.block_history_empty(),
            steps_used: fin.steps_used,
            cleanup_passes: fin.cleanup_passes,
            orth_residual: fin.max_orth_residual,
            error: None,
        };
        (row, SampleTrace::ok(idx, &fin))
    });

    let mut info = RunInfo {
        samples: cfg.num_samples,
        ..RunInfo::default()
    };
    let mut rows = Vec::with_capacity(results.len());
    for (row, trace) in results {
        if row.error.is_some() {
            info.failures += 1;
        } else {
            info.max_orth_residual = info.max_orth_residual.max(row.orth_residual);
        }
        info.traces.push(trace);
        rows.push(row);
    }
    let passed = rows.iter().filter(|r| r.passed()).count();
    OracleReport { rows, passed, info }
}

// gaps

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub gaps: Vec<f64>,
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
    pub zero_fraction: f64,
    pub info: RunInfo,
}

/// Smallest eigenvalue spacing of `h` computed by the multi-scale pipeline.
pub fn sample_min_gap(
    h: &Hamiltonian,
    sched: &Schedule,
) -> Result<(f64, FinalDiagonalization), String> {
    let fin = diagonalize(h, sched)?;
    let g = min_gap(&fin.eigenvalues).map_err(|e| e.to_string())?;
    Ok((g, fin))
}

pub fn run_gaps(cfg: &ExperimentConfig) -> GapReport {
    let geom = cfg.geometry();
    let sched = cfg.schedule();
    let results = map_samples(cfg, |idx| {
        let h = sample_hamiltonian(cfg, &geom, idx);
        sample_min_gap(&h, &sched)
            .map(|(g, fin)| (g, SampleTrace::ok(idx, &fin), fin.max_orth_residual))
    });
    let mut info = RunInfo {
        samples: cfg.num_samples,
        ..RunInfo::default()
    };
    let mut gaps = Vec::new();
    for (idx, r) in results.into_iter().enumerate() {
        match r {
            Ok((g, trace, orth)) => {
                gaps.push(g);
                info.max_orth_residual = info.max_orth_residual.max(orth);
                info.traces.push(trace);
            }
            Err(e) => {
                info.failures += 1;
                info.traces.push(SampleTrace::failed(idx as u64, e));
            }
        }
    }
    let zero_fraction = if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().filter(|&&g| g == 0.0).count() as f64 / gaps.len() as f64
    };
    GapReport {
        min: quantile(&gaps, 0.0),
        q05: quantile(&gaps, 0.05),
        median: quantile(&gaps, 0.5),
        q95: quantile(&gaps, 0.95),
        max: quantile(&gaps, 1.0),
        zero_fraction,
        gaps,
        info,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Experiment;

    fn cfg(e: Experiment, dims: &[usize], j0: f64, n: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(e, dims, j0, n);
        c.master_seed = 11;
        c
    }

    #[test]
    fn reference_pairs_shape() {
        let chain = LatticeGeometry::chain(4).unwrap();
        assert_eq!(reference_pairs(&chain).len(), 10);
        let sq = LatticeGeometry::new(&[3, 3]).unwrap();
        let p = reference_pairs(&sq);
        assert_eq!(p.len(), 9);
        assert!(p.iter().all(|&(x, _, _)| x == 4));
        assert_eq!(max_distance(&p), 2);
    }

    #[test]
    fn correlator_without_hopping() {
        let r = run_correlator(&cfg(Experiment::Correlator, &[8], 0.0, 3));
        assert!((r.rows[0].mean - 1.0).abs() < 1e-12);
        assert!(r.rows[1..].iter().all(|row| row.mean == 0.0));
        assert_eq!(r.fitted_rate, f64::NEG_INFINITY);
        assert_eq!(r.info.failures, 0);
    }

    #[test]
    fn correlator_completeness() {
        let r = run_correlator(&cfg(Experiment::Correlator, &[10], 0.05, 4));
        assert!((r.rows[0].mean - 1.0).abs() < 1e-9);
        assert!(r.oracle_max_diff < 1e-6);
        assert!(r.rows.iter().all(|row| row.mean <= 1.0 + 1e-12));
    }

    #[test]
    fn percolation_with_zero_epsilon() {
        let mut c = cfg(Experiment::Percolation, &[12], 0.02, 5);
        c.epsilon = Some(0.0);
        let r = run_percolation(&c);
        assert!(r.rows.iter().all(|row| row.frequency == 0.0));
        assert!(r
            .rows
            .iter()
            .all(|row| (0.0..=1.0).contains(&row.frequency)));
    }

    #[test]
    fn convergence_without_hopping_is_zero() {
        let r = run_convergence(&cfg(Experiment::Convergence, &[8], 0.0, 2));
        assert_eq!(r.rows.len(), 20);
        assert!(r.rows.iter().all(|row| row.median_max_offdiag == 0.0));
    }

    #[test]
    fn volume_largest_box_has_zero_difference() {
        let mut c = cfg(Experiment::VolumeConvergence, &[1], 0.02, 2);
        c.volume_sizes = vec![2, 4, 6];
        let r = run_volume_convergence(&c);
        let last = r.rows.last().unwrap();
        assert_eq!(last.half_width, 6);
        assert_eq!(last.energy_diff_mean, 0.0);
        assert_eq!(last.vector_diff_mean, 0.0);
    }

    #[test]
    fn sub_box_embedding() {
        let big = LatticeGeometry::new(&[5, 5]).unwrap();
        let (small, embed) = sub_box(&big, 2, 1);
        assert_eq!(small.size(), 9);
        assert_eq!(embed[small.center()], big.center());
        assert_eq!(embed[0], big.index(&[1, 1]).unwrap());
    }

    #[test]
    fn oracle_compare_passes_small_chain() {
        let r = run_oracle_compare(&cfg(Experiment::OracleCompare, &[16], 0.02, 4));
        assert_eq!(r.passed, 4);
    }

    #[test]
    fn gaps_without_hopping_are_positive() {
        let r = run_gaps(&cfg(Experiment::Gaps, &[16], 0.0, 20));
        assert_eq!(r.zero_fraction, 0.0);
        assert!(r.min > 0.0);
    }

    #[test]
    fn duplicated_potential_is_split_by_hopping() {
        let j0 = 0.01;
        let g = LatticeGeometry::chain(4).unwrap();
        let h = build_hamiltonian(&g, vec![0.1, 0.5, 0.5, 0.9], j0).unwrap();
        let sched = cfg(Experiment::Gaps, &[4], j0, 1).schedule();
        let (gap, _) = sample_min_gap(&h, &sched).unwrap();
        // the degenerate pair splits by about 2 J0
        assert!(gap > 0.0);
        assert!((gap - 2.0 * j0).abs() < 1e-3, "gap {gap}");
    }
}
