use mslocal_core::blocks::{classify_and_collar, form_blocks, ResonanceCondition};
use mslocal_core::driver::{is_permutation, perform_step, split_interaction, ScaleState};
use mslocal_core::oracle::{eigen_residual, spectrum_compare};
use mslocal_core::rotor::{conjugate, jacobi_block_diagonalize, orthogonal_exp, Generator};
use mslocal_core::{
    build_hamiltonian, dense_jacobi_eigensolve, run_to_convergence, ContractedMetricView,
    LatticeGeometry, ResonanceParams, ResonantLink, ScaleWindow, Schedule,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn geometry() -> impl Strategy<Value = LatticeGeometry> {
    prop_oneof![
        (2usize..12).prop_map(|n| LatticeGeometry::chain(n).unwrap()),
        (2usize..5, 2usize..5).prop_map(|(a, b)| LatticeGeometry::new(&[a, b]).unwrap()),
    ]
}

/// Geometry plus a few random site sets to contract.
fn contracted() -> impl Strategy<Value = (LatticeGeometry, Vec<Vec<usize>>)> {
    geometry().prop_flat_map(|g| {
        let n = g.size();
        let sets = prop::collection::vec(prop::collection::vec(0..n, 1..4), 0..3);
        (Just(g), sets)
    })
}

/// All-pairs group distances by Floyd-Warshall on the group graph.
fn floyd(view: &ContractedMetricView) -> Vec<Vec<usize>> {
    let g = view.geometry();
    let m = view.num_groups();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; m]; m];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for x in 0..g.size() {
        for y in g.neighbors(x) {
            let (a, b) = (view.group_of(x), view.group_of(y));
            if a != b {
                d[a][b] = 1;
            }
        }
    }
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

fn hamiltonian() -> impl Strategy<Value = (LatticeGeometry, Vec<f64>, f64)> {
    geometry().prop_flat_map(|g| {
        let n = g.size();
        (
            Just(g),
            prop::collection::vec(0.0f64..1.0, n),
            prop_oneof![Just(0.01), Just(0.02), Just(0.05), 0.0f64..0.2],
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contracted_distance_matches_floyd((g, sets) in contracted()) {
        let view = ContractedMetricView::from_groups(&g, &sets).unwrap();
        let d = floyd(&view);
        for x in 0..g.size() {
            for y in 0..g.size() {
                let got = view.contracted_distance(x, y).unwrap();
                prop_assert_eq!(got, d[view.group_of(x)][view.group_of(y)]);
                prop_assert!(got <= g.l1_distance(x, y).unwrap());
            }
        }
    }

    #[test]
    fn contracted_triangle_inequality((g, sets) in contracted()) {
        let view = ContractedMetricView::from_groups(&g, &sets).unwrap();
        let n = g.size();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let dxz = view.contracted_distance(x, z).unwrap();
                    let dxy = view.contracted_distance(x, y).unwrap();
                    let dyz = view.contracted_distance(y, z).unwrap();
                    prop_assert!(dxz <= dxy + dyz);
                }
            }
        }
    }

    #[test]
    fn shell_pairs_match_enumeration((g, sets) in contracted(), lo in 0.5f64..4.0, width in 0.5f64..5.0) {
        let view = ContractedMetricView::from_groups(&g, &sets).unwrap();
        let hi = lo + width;
        let d = floyd(&view);
        let mut expected = Vec::new();
        for (a, row) in d.iter().enumerate() {
            for (b, &dist) in row.iter().enumerate().skip(a + 1) {
                let df = dist as f64;
                if df >= lo && df < hi && df >= 1.0 {
                    expected.push((a, b, dist));
                }
            }
        }
        let got: Vec<_> = view.pairs_in_shell(lo, hi).into_iter().map(|p| (p.a, p.b, p.distance)).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn block_formation_ignores_link_order(
        (g, raw) in geometry().prop_flat_map(|g| {
            let n = g.size();
            (Just(g), prop::collection::vec((0..n, 0..n), 0..6))
        }),
        seed in any::<u64>(),
    ) {
        let view = ContractedMetricView::trivial(&g);
        let links: Vec<ResonantLink> = raw
            .iter()
            .filter(|(a, b)| a != b)
            .map(|&(a, b)| ResonantLink {
                a: a.min(b),
                b: a.max(b),
                distance: g.l1_distance(a, b).unwrap(),
                condition: ResonanceCondition::SmallGap,
            })
            .collect();
        let mut shuffled = links.clone();
        let k = if shuffled.is_empty() { 0 } else { (seed as usize) % shuffled.len() };
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = form_blocks(&links, &[], &view);
        let b = form_blocks(&shuffled, &[], &view);
        prop_assert_eq!(&a, &b);
        for l in &links {
            prop_assert!(a.iter().any(|c| c.contains(&l.a) && c.contains(&l.b)));
        }
        let w = ScaleWindow::for_step(1, 2.0);
        let reg = classify_and_collar(&a, &w, &g);
        for l in &links {
            prop_assert!(mslocal_core::blocks::same_block(l.a, l.b, &reg));
        }
    }

    #[test]
    fn split_is_an_exact_partition(
        (g, v, j0) in hamiltonian(),
        extra in prop::collection::vec(-0.1f64..0.1, 0..8),
    ) {
        let n = g.size();
        let mut j = build_hamiltonian(&g, v.clone(), j0).unwrap().matrix;
        j.fill_diagonal(0.0);
        // sprinkle longer-range couplings
        for (i, e) in extra.iter().enumerate() {
            let (x, y) = (i % n, (i * 7 + 3) % n);
            if x != y {
                j[(x, y)] = *e;
                j[(y, x)] = *e;
            }
        }
        let core: Vec<usize> = (0..n).filter(|&x| v[x] < 0.2).collect();
        let w = ScaleWindow::for_step(2, 2.0);
        let reg = classify_and_collar(&[core].into_iter().filter(|c| !c.is_empty()).collect::<Vec<_>>(), &w, &g);
        let view = ContractedMetricView::trivial(&g);
        let s = split_interaction(&j, &reg, &view, &w);
        let sum = &s.per + &s.res + &s.sint + &s.lint;
        for x in 0..n {
            for y in 0..n {
                prop_assert_eq!(sum[(x, y)].to_bits(), j[(x, y)].to_bits());
                let parts = [s.per[(x, y)], s.res[(x, y)], s.sint[(x, y)], s.lint[(x, y)]];
                prop_assert!(parts.iter().filter(|p| **p != 0.0).count() <= 1);
            }
        }
    }

    #[test]
    fn exponential_is_orthogonal(entries in prop::collection::vec(-2.0f64..2.0, 15)) {
        let n = 6;
        let mut gen = Generator::zeros(n);
        let mut k = 0;
        for x in 0..n {
            for y in x + 1..n {
                gen.matrix[(x, y)] = entries[k];
                gen.matrix[(y, x)] = -entries[k];
                gen.support.push((x, y));
                k += 1;
            }
        }
        let r = orthogonal_exp(&gen).unwrap();
        prop_assert!(r.orth_residual < 1e-10);
        let h = DMatrix::from_fn(n, n, |x, y| ((x + 1) * (y + 1)) as f64 / 10.0);
        let before = dense_jacobi_eigensolve(&h).unwrap().eigenvalues;
        let after = dense_jacobi_eigensolve(&conjugate(&h, &r).unwrap()).unwrap().eigenvalues;
        prop_assert!(spectrum_compare(&before, &after).unwrap() < 1e-10);
    }

    #[test]
    fn block_jacobi_matches_oracle(vals in prop::collection::vec(-1.0f64..1.0, 21)) {
        let n = 6;
        let mut h = DMatrix::zeros(n, n);
        let mut k = 0;
        for x in 0..n {
            for y in x..n {
                h[(x, y)] = vals[k];
                h[(y, x)] = vals[k];
                k += 1;
            }
        }
        let sites: Vec<usize> = (0..n).collect();
        let be = jacobi_block_diagonalize(&h, &sites).unwrap();
        let oracle = dense_jacobi_eigensolve(&h).unwrap();
        prop_assert!(spectrum_compare(&be.eigenvalues, &oracle.eigenvalues).unwrap() < 1e-12);
        prop_assert!(be.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(eigen_residual(&h, &be.eigenvalues, &be.vectors) < 1e-12);
    }

    #[test]
    fn pipeline_matches_oracle((g, v, j0) in hamiltonian()) {
        let h = build_hamiltonian(&g, v, j0).unwrap();
        let sched = Schedule::new(ResonanceParams::new(j0, g.dim()));
        let fin = run_to_convergence(&h, &sched).unwrap();
        let oracle = dense_jacobi_eigensolve(&h.matrix).unwrap();
        prop_assert!(spectrum_compare(&fin.eigenvalues, &oracle.eigenvalues).unwrap() < 1e-9);
        prop_assert!(eigen_residual(&h.matrix, &fin.eigenvalues, fin.eigenvectors()) < 1e-8);
        prop_assert!(fin.max_orth_residual < 1e-10);
        prop_assert!(is_permutation(&fin.labels));
        prop_assert!(fin.final_max_offdiag < sched.off_diag_tol * h.max_norm());
    }

    #[test]
    fn every_step_preserves_the_spectrum((g, v, j0) in hamiltonian(), eps in 0.0f64..0.9) {
        let h = build_hamiltonian(&g, v, j0).unwrap();
        let sched = Schedule::new(ResonanceParams::new(j0, g.dim()).epsilon(eps));
        let oracle = dense_jacobi_eigensolve(&h.matrix).unwrap().eigenvalues;
        let mut st = ScaleState::new(&h);
        for _ in 0..4 {
            perform_step(&mut st, &sched).unwrap();
            let eff = dense_jacobi_eigensolve(&st.effective()).unwrap().eigenvalues;
            prop_assert!(spectrum_compare(&eff, &oracle).unwrap() < 1e-9);
            prop_assert!((0..st.size()).all(|i| st.coupling[(i, i)] == 0.0));
            prop_assert!(st.rotation.orth_residual < 1e-10);
            let rt_h_r = st.rotation.matrix.transpose() * &h.matrix * &st.rotation.matrix;
            prop_assert!((rt_h_r - st.effective()).amax() < 1e-12);
        }
    }

    #[test]
    fn runs_are_deterministic((g, v, j0) in hamiltonian()) {
        let h = build_hamiltonian(&g, v, j0).unwrap();
        let sched = Schedule::new(ResonanceParams::new(j0, g.dim()));
        let a = run_to_convergence(&h, &sched).unwrap();
        let b = run_to_convergence(&h, &sched).unwrap();
        prop_assert_eq!(a.metrics, b.metrics);
        prop_assert_eq!(a.eigenvalues, b.eigenvalues);
        prop_assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn zero_epsilon_finds_no_resonance((g, v, j0) in hamiltonian()) {
        let h = build_hamiltonian(&g, v, j0).unwrap();
        let sched = Schedule::new(ResonanceParams::new(j0, g.dim()).epsilon(0.0));
        let fin = run_to_convergence(&h, &sched).unwrap();
        prop_assert!(fin.block_history_empty());
    }
}
