//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and exits nonzero if
//! any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use mslocal::experiments::{
    run_convergence, run_correlator, run_gaps, run_oracle_compare, run_percolation,
    run_volume_convergence, sample_hamiltonian, RunInfo,
};
use mslocal::{render_csv, run_experiment, Experiment, ExperimentConfig};
use mslocal_core::run_to_convergence;
use nalgebra::DMatrix;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn config(e: Experiment, dims: &[usize], j0: f64, samples: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(e, dims, j0, samples);
    c.master_seed = seed;
    c.validate().expect("valid acceptance config");
    c
}

/// Orthogonality bookkeeping gathered from every run in the suite.
#[derive(Default)]
struct OrthLedger {
    runs: usize,
    worst: f64,
    violations: usize,
}

impl OrthLedger {
    fn add(&mut self, info: &RunInfo) {
        self.runs += info.samples;
        self.worst = self.worst.max(info.max_orth_residual);
        self.violations += info
            .traces
            .iter()
            .filter(|t| {
                t.error
                    .as_deref()
                    .is_some_and(|e| e.contains("not orthogonal"))
            })
            .count();
    }
}

fn criterion_1_and_8(orth: &mut OrthLedger) -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut worst_spectrum = 0.0f64;
    let mut worst_res = 0.0f64;
    let mut failures = 0;
    let mut samples = 0;
    let mut bijective = 0;
    let mut empty_history = 0;
    let mut empty_history_ok = 0;
    for dims in [&[64][..], &[12, 12][..]] {
        for j0 in [0.01, 0.02, 0.05] {
            let r = run_oracle_compare(&config(Experiment::OracleCompare, dims, j0, 100, 1));
            orth.add(&r.info);
            failures += r.info.failures;
            for row in &r.rows {
                samples += 1;
                worst_spectrum = worst_spectrum.max(row.spectrum_diff);
                worst_res = worst_res.max(row.max_residual);
                bijective += usize::from(row.labels_bijective);
                if row.block_history_empty {
                    empty_history += 1;
                    empty_history_ok += usize::from(row.argmax_all);
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let c1 = Outcome {
        id: 1,
        name: "oracle equivalence",
        pass: failures == 0 && worst_spectrum < 1e-9 && worst_res < 1e-8 && secs < 300.0,
        detail: format!(
            "{samples} samples, {failures} failed, max spectrum diff {worst_spectrum:.2e}, \
             max residual {worst_res:.2e}, {secs:.1} s"
        ),
    };
    let c8 = Outcome {
        id: 8,
        name: "labeling",
        pass: failures == 0 && bijective == samples && empty_history_ok == empty_history,
        detail: format!(
            "bijective in {bijective}/{samples}; argmax at label in {empty_history_ok}/{empty_history} \
             samples without blocks"
        ),
    };
    (c1, c8)
}

fn criterion_3(orth: &mut OrthLedger) -> Outcome {
    let cfg = config(Experiment::Convergence, &[32], 0.02, 200, 3);
    let r = run_convergence(&cfg);
    orth.add(&r.info);
    let mut medians = vec![cfg.j0];
    medians.extend(r.rows.iter().take(4).map(|row| row.median_max_offdiag));
    // an exactly diagonal matrix cannot shrink further and counts as decayed
    let factors_ok = medians
        .windows(2)
        .all(|w| (w[0] == 0.0 && w[1] == 0.0) || w[1] * 10.0 <= w[0]);
    let slope_ok = r.fitted_slope.is_some_and(|s| s <= r.reference_slope);
    Outcome {
        id: 3,
        name: "off-diagonal decay",
        pass: r.info.failures == 0 && factors_ok && slope_ok,
        detail: format!(
            "median max|J| for steps 0..4 = {:?}; fitted slope {:?} vs required <= {:.3}",
            medians
                .iter()
                .map(|m| format!("{m:.2e}"))
                .collect::<Vec<_>>(),
            r.fitted_slope,
            r.reference_slope
        ),
    }
}

fn criteria_4_and_5(orth: &mut OrthLedger) -> (Outcome, Outcome) {
    let cfg = config(Experiment::Correlator, &[32], 0.05, 500, 4);
    let r = run_correlator(&cfg);
    orth.add(&r.info);
    let q = |d: usize| {
        r.rows
            .iter()
            .find(|row| row.distance == d)
            .map(|row| row.mean)
    };
    let decreasing = (1..12).all(|d| matches!((q(d), q(d + 1)), (Some(a), Some(b)) if b < a));
    let rate_ok = r.fitted_rate < 0.0 && r.fitted_rate.abs() >= cfg.j0.ln().abs() / 10.0;
    let q0_ok = q(0).is_some_and(|v| (v - 1.0).abs() <= 1e-9);
    let bound_ok = r
        .rows
        .iter()
        .filter(|row| row.distance >= 2)
        .all(|row| row.mean <= cfg.j0.powf(row.distance as f64 / 4.0));
    let c4 = Outcome {
        id: 4,
        name: "correlator decay",
        pass: r.info.failures == 0 && decreasing && rate_ok && q0_ok && bound_ok,
        detail: format!(
            "Q(0)-1 = {:.1e}, strictly decreasing d=1..12: {decreasing}, rate {:.3} \
             (need <= {:.3}), Q(d) <= J0^(d/4) for d>=2: {bound_ok}",
            q(0).unwrap_or(f64::NAN) - 1.0,
            r.fitted_rate,
            -cfg.j0.ln().abs() / 10.0
        ),
    };
    let tail8 = r
        .rows
        .iter()
        .find(|row| row.distance == 8)
        .map_or(f64::NAN, |row| row.tail_frequency);
    let c5 = Outcome {
        id: 5,
        name: "correlator tail",
        pass: r.info.failures == 0 && tail8 < 0.05,
        detail: format!("P(Q > J0^(kappa d/2)) at d=8 with kappa=0.25: {tail8:.4}"),
    };
    (c4, c5)
}

fn criterion_6(orth: &mut OrthLedger) -> Outcome {
    let r = run_percolation(&config(Experiment::Percolation, &[64], 0.02, 1000, 6));
    orth.add(&r.info);
    let any = r.scale(0);
    let monotone = any.windows(2).all(|w| {
        let tol = 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        w[1].frequency <= w[0].frequency + tol
    });
    let f = |d: usize| {
        any.iter()
            .find(|row| row.distance == d)
            .map_or(f64::NAN, |row| row.frequency)
    };
    let ratio_ok = f(4) == 0.0 || f(1) >= 10.0 * f(4);
    let first = r.scale(1);
    let f1 = |d: usize| {
        first
            .iter()
            .find(|row| row.distance == d)
            .map_or(f64::NAN, |row| row.frequency)
    };
    Outcome {
        id: 6,
        name: "percolation decay",
        pass: r.info.failures == 0 && monotone && ratio_ok,
        detail: format!(
            "same-block frequency (any step) f(1)={:.4}, f(4)={:.4}, monotone within 2 SE: {monotone}; \
             first step f(1)={:.4}, f(4)={:.4}",
            f(1),
            f(4),
            f1(1),
            f1(4)
        ),
    }
}

fn criterion_7(orth: &mut OrthLedger) -> Outcome {
    let r = run_gaps(&config(Experiment::Gaps, &[32], 0.02, 1000, 7));
    orth.add(&r.info);
    let positive = r.gaps.iter().filter(|&&g| g > 0.0).count();
    Outcome {
        id: 7,
        name: "nondegeneracy",
        pass: r.info.failures == 0 && positive == 1000,
        detail: format!(
            "min gap > 0 in {positive}/1000 samples, smallest {:.3e}",
            r.min
        ),
    }
}

fn criterion_9(orth: &mut OrthLedger) -> Outcome {
    let r = run_volume_convergence(&config(Experiment::VolumeConvergence, &[1], 0.02, 100, 9));
    orth.add(&r.info);
    let inner: Vec<_> = r.rows.iter().filter(|row| row.half_width < 24).collect();
    let vec_monotone = inner.windows(2).all(|w| {
        let tol = 2.0 * (w[0].vector_diff_stderr.powi(2) + w[1].vector_diff_stderr.powi(2)).sqrt();
        w[1].vector_diff_mean <= w[0].vector_diff_mean + tol
    });
    let e_ok = r.energy_slope.is_some_and(|s| s < 0.0);
    let v_ok = r.vector_slope.is_some_and(|s| s < 0.0);
    Outcome {
        id: 9,
        name: "volume convergence",
        pass: r.info.failures == 0 && e_ok && v_ok && vec_monotone,
        detail: format!(
            "energy slope {:?}, eigenvector slope {:?}, eigenvector differences monotone within 2 SE: \
             {vec_monotone}",
            r.energy_slope, r.vector_slope
        ),
    }
}

fn criterion_10() -> Outcome {
    let mut mismatched = Vec::new();
    for e in Experiment::ALL {
        let mut cfg = config(e, &[12], 0.05, 8, 10);
        cfg.volume_sizes = vec![2, 4, 6];
        let a = render_csv(&cfg, &run_experiment(&cfg));
        let b = render_csv(&cfg, &run_experiment(&cfg));
        if a != b {
            mismatched.push(e.name());
        }
    }
    Outcome {
        id: 10,
        name: "determinism",
        pass: mismatched.is_empty(),
        detail: format!("6 experiments rerun, byte mismatches: {mismatched:?}"),
    }
}

fn criterion_11() -> Outcome {
    let mut bad = 0;
    let mut runs = 0;
    for dims in [&[32][..], &[6, 6][..]] {
        let cfg = config(Experiment::OracleCompare, dims, 0.0, 20, 11);
        let geom = cfg.geometry();
        for idx in 0..20 {
            let h = sample_hamiltonian(&cfg, &geom, idx);
            let fin = run_to_convergence(&h, &cfg.schedule()).expect("trivial run");
            let n = h.size();
            let exact = fin.steps_used == 0
                && fin.rotation.matrix == DMatrix::identity(n, n)
                && fin
                    .eigenvalues
                    .iter()
                    .zip(&h.potential)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            bad += usize::from(!exact);
            runs += 1;
        }
    }
    Outcome {
        id: 11,
        name: "trivial fixed point",
        pass: bad == 0,
        detail: format!(
            "J0=0: {}/{runs} runs with zero steps, R=I and E=v exactly",
            runs - bad
        ),
    }
}

fn main() -> ExitCode {
    let mut orth = OrthLedger::default();
    let (c1, c8) = criterion_1_and_8(&mut orth);
    let c3 = criterion_3(&mut orth);
    let (c4, c5) = criteria_4_and_5(&mut orth);
    let c6 = criterion_6(&mut orth);
    let c7 = criterion_7(&mut orth);
    let c9 = criterion_9(&mut orth);
    let c2 = Outcome {
        id: 2,
        name: "orthogonality",
        pass: orth.violations == 0 && orth.worst < 1e-10,
        detail: format!(
            "{} samples, worst |R^T R - I| {:.2e}, {} violations",
            orth.runs, orth.worst, orth.violations
        ),
    };
    let mut all = vec![
        c1,
        c2,
        c3,
        c4,
        c5,
        c6,
        c7,
        c8,
        c9,
        criterion_10(),
        criterion_11(),
    ];
    all.sort_by_key(|o| o.id);

    let mut failed = 0;
    for o in &all {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("[{tag}] criterion {:>2} {}: {}", o.id, o.name, o.detail);
    }
    println!("{} of {} criteria passed", all.len() - failed, all.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
