//! The multi-scale loop: per-step rotations, block absorption, termination, cleanup and
//! labeling of states by sites.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blocks::{
    classify_and_collar, detect_resonances, form_blocks, BlockRegistry, ResonanceParams,
    ResonantBlock, ScaleWindow, UnionFind,
};
use crate::lattice::{ContractedMetricView, LatticeGeometry, Site};
use crate::model::Hamiltonian;
use crate::rotor::{
    build_generator, conjugate, jacobi_block_diagonalize, orthogonal_exp, OrthogonalRotation,
    RotorError,
};

const SCALE_RATIO: f64 = 15.0 / 8.0;

/// `L_k = (15/8)^k`, by repeated multiplication.
pub fn scale_length(k: usize) -> f64 {
    (0..k).fold(1.0, |l, _| l * SCALE_RATIO)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub params: ResonanceParams,
    /// `lengths[k] = L_k` for `k = 0..=max_steps`.
    pub lengths: Vec<f64>,
    /// Stopping threshold on `max |J|`, relative to `||H||_max`.
    pub off_diag_tol: f64,
    pub max_steps: usize,
}

impl Schedule {
    pub const DEFAULT_TOL: f64 = 1e-12;
    pub const DEFAULT_MAX_STEPS: usize = 20;

    pub fn new(params: ResonanceParams) -> Self {
        Self::with_limits(params, Self::DEFAULT_TOL, Self::DEFAULT_MAX_STEPS)
    }

    pub fn with_limits(params: ResonanceParams, off_diag_tol: f64, max_steps: usize) -> Self {
        let mut lengths = vec![1.0];
        for k in 0..max_steps {
            lengths.push(lengths[k] * SCALE_RATIO);
        }
        Self {
            params,
            lengths,
            off_diag_tol,
            max_steps,
        }
    }

    pub fn length(&self, k: usize) -> f64 {
        self.lengths
            .get(k)
            .copied()
            .unwrap_or_else(|| scale_length(k))
    }

    pub fn window(&self, step: usize) -> ScaleWindow {
        ScaleWindow::for_step(step, self.params.m)
    }
}

/// One line of the per-step trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub scale_length: f64,
    pub resonant_pairs: usize,
    pub blocks: usize,
    pub small_blocks: usize,
    pub large_blocks: usize,
    pub block_sizes: Vec<usize>,
    pub perturbative_pairs: usize,
    pub diagonalized_regions: usize,
    pub generator_norm: f64,
    pub max_offdiag: f64,
    pub orth_residual: f64,
}

/// The effective Hamiltonian `diag(E) + J` together with the rotation that produced it.
#[derive(Debug, Clone)]
pub struct ScaleState {
    /// Number of completed steps.
    pub step: usize,
    pub energies: Vec<f64>,
    /// Residual interaction, exactly zero on the diagonal.
    pub coupling: DMatrix<f64>,
    pub rotation: OrthogonalRotation,
    /// Blocks of the latest step.
    pub registry: BlockRegistry,
    pub history: Vec<BlockRegistry>,
    /// Disjoint site sets that have been diagonalized exactly, merged across steps.
    pub regions: Vec<Vec<Site>>,
    /// Indices that were ever part of an exactly diagonalized region.
    pub diagonalized: Vec<bool>,
    pub metrics: Vec<StepMetrics>,
    /// Worst orthogonality residual certified so far.
    pub max_orth_residual: f64,
    pub geometry: LatticeGeometry,
    /// `||H||_max` of the original Hamiltonian.
    pub h_norm: f64,
}

impl ScaleState {
    pub fn new(h: &Hamiltonian) -> Self {
        let n = h.size();
        let energies: Vec<f64> = (0..n).map(|i| h.matrix[(i, i)]).collect();
        let mut coupling = h.matrix.clone();
        coupling.fill_diagonal(0.0);
        Self {
            step: 0,
            energies,
            coupling,
            rotation: OrthogonalRotation::identity(n),
            registry: BlockRegistry::empty(n),
            history: Vec::new(),
            regions: Vec::new(),
            diagonalized: vec![false; n],
            metrics: Vec::new(),
            max_orth_residual: 0.0,
            geometry: h.geometry.clone(),
            h_norm: h.max_norm(),
        }
    }

    pub fn size(&self) -> usize {
        self.energies.len()
    }

    /// `diag(E) + J`.
    pub fn effective(&self) -> DMatrix<f64> {
        let mut m = self.coupling.clone();
        for (i, &e) in self.energies.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    pub fn max_offdiag(&self) -> f64 {
        self.coupling.amax()
    }

    fn absorb(&mut self, h: DMatrix<f64>) {
        self.energies = (0..h.nrows()).map(|i| h[(i, i)]).collect();
        self.coupling = h;
        self.coupling.fill_diagonal(0.0);
    }

    fn certify(&mut self, matrix: DMatrix<f64>) -> Result<(), RotorError> {
        self.rotation = OrthogonalRotation::certify(matrix)?;
        self.max_orth_residual = self.max_orth_residual.max(self.rotation.orth_residual);
        Ok(())
    }

    /// Exactly diagonalize each of the disjoint `regions` of `h`, updating the rotation.
    fn diagonalize_regions(
        &mut self,
        h: &mut DMatrix<f64>,
        regions: &[Vec<Site>],
    ) -> Result<(), RotorError> {
        if regions.is_empty() {
            return Ok(());
        }
        let mut r = self.rotation.matrix.clone();
        for region in regions {
            let be = jacobi_block_diagonalize(h, region)?;
            be.apply(h);
            be.right_multiply(&mut r);
            for &s in &be.sites {
                self.diagonalized[s] = true;
            }
        }
        self.certify(r)
    }
}

/// Entry-level partition `J = per + res + sint + lint`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSplit {
    /// Couplings rotated away perturbatively in this step.
    pub per: DMatrix<f64>,
    pub res: DMatrix<f64>,
    /// Inside one small collared block.
    pub sint: DMatrix<f64>,
    /// Inside one large collared block.
    pub lint: DMatrix<f64>,
    /// Pairs `x < y` carried by `per`.
    pub per_pairs: Vec<(Site, Site)>,
}

/// Route every entry of `coupling` to exactly one part.
///
/// `per` takes nonzero couplings at contracted distance `1 <= d < window.shell_hi` between
/// sites outside every collared block; intrablock entries go to `sint` or `lint`; the rest
/// stays in `res`.
pub fn split_interaction(
    coupling: &DMatrix<f64>,
    registry: &BlockRegistry,
    view: &ContractedMetricView,
    window: &ScaleWindow,
) -> InteractionSplit {
    let n = coupling.nrows();
    let zeros = || DMatrix::<f64>::zeros(n, n);
    let (mut per, mut res, mut sint, mut lint) = (zeros(), zeros(), zeros(), zeros());
    let stb = &registry.site_to_block;
    for x in 0..n {
        for y in 0..n {
            let j = coupling[(x, y)];
            match (stb[x], stb[y]) {
                (Some(a), Some(b)) if a == b => {
                    if registry.blocks[a].is_small {
                        sint[(x, y)] = j;
                    } else {
                        lint[(x, y)] = j;
                    }
                }
                _ => res[(x, y)] = j,
            }
        }
    }
    let mut per_pairs = Vec::new();
    for pair in view.pairs_in_shell(1.0, window.shell_hi) {
        for &x in view.members(pair.a) {
            if stb[x].is_some() {
                continue;
            }
            for &y in view.members(pair.b) {
                if stb[y].is_some() || coupling[(x, y)] == 0.0 {
                    continue;
                }
                per[(x, y)] = coupling[(x, y)];
                per[(y, x)] = coupling[(y, x)];
                res[(x, y)] = 0.0;
                res[(y, x)] = 0.0;
                per_pairs.push((x.min(y), x.max(y)));
            }
        }
    }
    per_pairs.sort_unstable();
    InteractionSplit {
        per,
        res,
        sint,
        lint,
        per_pairs,
    }
}

/// Contraction of the current state: diagonalized regions and the collared large blocks of
/// the previous step each collapse to a point.
pub fn contraction_view(state: &ScaleState) -> ContractedMetricView {
    let mut groups = state.regions.clone();
    groups.extend(state.registry.large_blocks().map(ResonantBlock::sites));
    ContractedMetricView::from_groups(&state.geometry, &groups).expect("regions hold valid sites")
}

/// Advance `state` by one scale.
pub fn perform_step(state: &mut ScaleState, sched: &Schedule) -> Result<(), RotorError> {
    let step = state.step + 1;
    let window = sched.window(step);
    let n = state.size();

    if state.max_offdiag() == 0.0 {
        state.step = step;
        state.metrics.push(StepMetrics {
            step,
            scale_length: window.shell_hi,
            resonant_pairs: 0,
            blocks: 0,
            small_blocks: 0,
            large_blocks: 0,
            block_sizes: Vec::new(),
            perturbative_pairs: 0,
            diagonalized_regions: 0,
            generator_norm: 0.0,
            max_offdiag: 0.0,
            orth_residual: state.rotation.orth_residual,
        });
        return Ok(());
    }

    let view = contraction_view(state);
    let carried: Vec<ResonantBlock> = state.registry.large_blocks().cloned().collect();
    let mut excluded = vec![false; n];
    for b in &carried {
        for &s in &b.core {
            excluded[s] = true;
        }
    }
    let links = detect_resonances(
        &state.energies,
        &state.coupling,
        &view,
        &excluded,
        &window,
        &sched.params,
    );
    let components = form_blocks(&links, &carried, &view);
    let registry = classify_and_collar(&components, &window, &state.geometry);

    let split = split_interaction(&state.coupling, &registry, &view, &window);
    let generator = build_generator(&state.energies, &split.per, &split.per_pairs)?;
    let mut h = state.effective();
    if !split.per_pairs.is_empty() {
        let omega = orthogonal_exp(&generator)?;
        h = conjugate(&h, &omega)?;
        let r = &state.rotation.matrix * &omega.matrix;
        state.certify(r)?;
    }

    // current small blocks, plus earlier regions whose interior has been refilled
    let tol = sched.off_diag_tol * state.h_norm;
    let mut in_large = vec![false; n];
    for b in registry.large_blocks() {
        for s in b.sites() {
            in_large[s] = true;
        }
    }
    let mut candidates: Vec<Vec<Site>> =
        registry.small_blocks().map(ResonantBlock::sites).collect();
    for region in &state.regions {
        if region.iter().any(|&s| in_large[s]) {
            continue;
        }
        if interior_offdiag(&h, region) > tol {
            candidates.push(region.clone());
        }
    }
    let targets = merge_site_sets(n, &candidates);
    state.diagonalize_regions(&mut h, &targets)?;
    state.absorb(h);

    let mut all = std::mem::take(&mut state.regions);
    all.extend(targets.iter().cloned());
    state.regions = merge_site_sets(n, &all);

    state.step = step;
    state.metrics.push(StepMetrics {
        step,
        scale_length: window.shell_hi,
        resonant_pairs: links.len(),
        blocks: registry.blocks.len(),
        small_blocks: registry.small_blocks().count(),
        large_blocks: registry.large_blocks().count(),
        block_sizes: registry.blocks.iter().map(ResonantBlock::volume).collect(),
        perturbative_pairs: split.per_pairs.len(),
        diagonalized_regions: targets.len(),
        generator_norm: generator.max_norm(),
        max_offdiag: state.max_offdiag(),
        orth_residual: state.rotation.orth_residual,
    });
    state.history.push(registry.clone());
    state.registry = registry;
    Ok(())
}

fn interior_offdiag(h: &DMatrix<f64>, sites: &[Site]) -> f64 {
    let mut m = 0.0f64;
    for &x in sites {
        for &y in sites {
            if x != y {
                m = m.max(h[(x, y)].abs());
            }
        }
    }
    m
}

/// Merge overlapping site sets; output sets are sorted and ordered by smallest site.
fn merge_site_sets(n: usize, sets: &[Vec<Site>]) -> Vec<Vec<Site>> {
    let mut uf = UnionFind::new(n);
    let mut used = vec![false; n];
    for set in sets {
        for &s in set {
            used[s] = true;
            uf.union(set[0], s);
        }
    }
    components(&mut uf, &used)
}

fn components(uf: &mut UnionFind, used: &[bool]) -> Vec<Vec<Site>> {
    let mut slot = vec![usize::MAX; used.len()];
    let mut out: Vec<Vec<Site>> = Vec::new();
    for s in (0..used.len()).filter(|&s| used[s]) {
        let r = uf.find(s);
        if slot[r] == usize::MAX {
            slot[r] = out.len();
            out.push(Vec::new());
        }
        out[slot[r]].push(s);
    }
    out
}

#[derive(Debug, Clone)]
pub struct FinalDiagonalization {
    /// `eigenvalues[a]` belongs to column `a` of `rotation`.
    pub eigenvalues: Vec<f64>,
    pub rotation: OrthogonalRotation,
    /// `labels[a]` is the site attached to state `a`.
    pub labels: Vec<Site>,
    /// Whether every state outside diagonalized regions has its largest amplitude at its label.
    pub labels_at_argmax: bool,
    pub steps_used: usize,
    pub metrics: Vec<StepMetrics>,
    pub history: Vec<BlockRegistry>,
    pub diagonalized: Vec<bool>,
    pub cleanup_passes: usize,
    pub max_orth_residual: f64,
    /// Largest off-diagonal entry after cleanup; always zero.
    pub final_max_offdiag: f64,
}

impl FinalDiagonalization {
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.rotation.matrix
    }

    /// True if no step formed a block.
    pub fn block_history_empty(&self) -> bool {
        self.history.iter().all(BlockRegistry::is_empty)
    }
}

/// Step until `max |J| < off_diag_tol * ||H||_max` or the step budget runs out, then clear
/// what is left with exact Jacobi on clusters of surviving couplings.
pub fn run_to_convergence(
    h: &Hamiltonian,
    sched: &Schedule,
) -> Result<FinalDiagonalization, RotorError> {
    let mut state = ScaleState::new(h);
    let tol = sched.off_diag_tol * state.h_norm;
    while state.step < sched.max_steps {
        let off = state.max_offdiag();
        if off == 0.0 || off < tol {
            break;
        }
        perform_step(&mut state, sched)?;
    }
    let cleanup_passes = cleanup(&mut state, tol)?;
    let labels = assign_labels(&state.rotation.matrix, &state.diagonalized);
    let labels_at_argmax =
        labels_match_argmax(&state.rotation.matrix, &labels, &state.diagonalized);
    Ok(FinalDiagonalization {
        eigenvalues: state.energies.clone(),
        final_max_offdiag: state.max_offdiag(),
        rotation: state.rotation,
        labels,
        labels_at_argmax,
        steps_used: state.step,
        metrics: state.metrics,
        history: state.history,
        diagonalized: state.diagonalized,
        cleanup_passes,
        max_orth_residual: state.max_orth_residual,
    })
}

const CLUSTER_PASSES: usize = 3;

fn cleanup(state: &mut ScaleState, tol: f64) -> Result<usize, RotorError> {
    let n = state.size();
    let mut passes = 0;
    while state.max_offdiag() > 0.0 {
        let regions = if passes < CLUSTER_PASSES {
            let mut uf = UnionFind::new(n);
            let mut used = vec![false; n];
            for x in 0..n {
                for y in x + 1..n {
                    if state.coupling[(x, y)].abs() >= tol {
                        used[x] = true;
                        used[y] = true;
                        uf.union(x, y);
                    }
                }
            }
            components(&mut uf, &used)
        } else {
            vec![(0..n).collect()]
        };
        if regions.is_empty() {
            // only sub-tolerance entries remain
            state.coupling.fill(0.0);
            break;
        }
        let mut h = state.effective();
        state.diagonalize_regions(&mut h, &regions)?;
        state.absorb(h);
        passes += 1;
    }
    Ok(passes)
}

/// Attach a site to each state. Indices that were diagonalized exactly keep their own site,
/// which realizes the lexicographic-site / ascending-energy matching inside blocks. The
/// remaining states take sites greedily by largest `|R(x, a)|`, ties going to lower indices.
pub fn assign_labels(rotation: &DMatrix<f64>, diagonalized: &[bool]) -> Vec<Site> {
    let n = rotation.nrows();
    let mut labels: Vec<Site> = (0..n).collect();
    let free: Vec<usize> = (0..n).filter(|&i| !diagonalized[i]).collect();
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(free.len() * free.len());
    for &a in &free {
        for &x in &free {
            cand.push((rotation[(x, a)].abs(), a, x));
        }
    }
    cand.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut state_done = vec![false; n];
    let mut site_done = vec![false; n];
    for (_, a, x) in cand {
        if !state_done[a] && !site_done[x] {
            state_done[a] = true;
            site_done[x] = true;
            labels[a] = x;
        }
    }
    labels
}

fn labels_match_argmax(rotation: &DMatrix<f64>, labels: &[Site], diagonalized: &[bool]) -> bool {
    (0..labels.len())
        .filter(|&a| !diagonalized[a])
        .all(|a| argmax_site(rotation, a) == labels[a])
}

/// Site of largest `|R(x, a)|`, lowest index on ties.
pub fn argmax_site(rotation: &DMatrix<f64>, a: usize) -> Site {
    let col = rotation.column(a);
    let mut best = 0;
    for x in 1..col.len() {
        if col[x].abs() > col[best].abs() {
            best = x;
        }
    }
    best
}

pub fn is_permutation(labels: &[Site]) -> bool {
    let mut seen = vec![false; labels.len()];
    labels
        .iter()
        .all(|&x| x < seen.len() && !std::mem::replace(&mut seen[x], true))
}
