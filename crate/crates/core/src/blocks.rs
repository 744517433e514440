//! Resonance detection, block formation, collars, and the small/large classification.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::driver::scale_length;
use crate::lattice::{ContractedMetricView, LatticeGeometry, Site};
use crate::model::Hamiltonian;

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Thresholds of the resonance tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceParams {
    pub j0: f64,
    /// Energy-gap scale `epsilon`; `J0^delta` unless overridden.
    pub epsilon: f64,
    pub delta: f64,
    /// Block volume exponent: blocks with volume `<= exp(M L^{2/3})` are small.
    pub m: f64,
}

impl ResonanceParams {
    pub const DEFAULT_DELTA: f64 = 1.0 / 20.0;

    /// `delta = 1/20`, `epsilon = J0^delta`, `M = 2D`.
    pub fn new(j0: f64, dim: usize) -> Self {
        Self::with_delta(j0, dim, Self::DEFAULT_DELTA)
    }

    pub fn with_delta(j0: f64, dim: usize, delta: f64) -> Self {
        Self {
            j0,
            epsilon: j0.powf(delta),
            delta,
            m: 2.0 * dim as f64,
        }
    }

    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn m(mut self, m: f64) -> Self {
        self.m = m;
        self
    }

    /// Condition I threshold `epsilon^order`.
    pub fn gap_threshold(&self, order: f64) -> f64 {
        self.epsilon.powf(order)
    }

    /// Condition II threshold `(J0/epsilon)^order`; infinite when `epsilon == 0`.
    pub fn ratio_threshold(&self, order: f64) -> f64 {
        if self.epsilon == 0.0 {
            f64::INFINITY
        } else {
            (self.j0 / self.epsilon).powf(order)
        }
    }
}

/// Geometry of one step of the multi-scale loop.
///
/// Couplings at contracted distance `< shell_hi` are handled in the step; the resonance
/// thresholds use the order `max(d, ceil(shell_lo))` since every surviving coupling is at
/// least of that order. Blocks get a collar of all sites at L1 distance `< collar_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleWindow {
    pub step: usize,
    pub shell_lo: f64,
    pub shell_hi: f64,
    pub collar_radius: f64,
    pub volume_limit: f64,
}

impl ScaleWindow {
    /// Window of step `step >= 1`: shell `[L_{s-1}, L_s)`, collar `L_s`, volume limit
    /// `exp(M L_s^{2/3})`, except `exp(M 2^{2/3})` in the first step.
    ///
    /// This gives shells `{1}`, `{2,3}`, `{4,5,6}`, `{7..12}`, ... and collars of width 1 and
    /// 3 in the first two steps.
    pub fn for_step(step: usize, m: f64) -> Self {
        assert!(step >= 1, "steps are numbered from 1");
        let hi = scale_length(step);
        let volume_scale = if step == 1 { 2.0 } else { hi };
        Self {
            step,
            shell_lo: scale_length(step - 1),
            shell_hi: hi,
            collar_radius: hi,
            volume_limit: (m * volume_scale.powf(2.0 / 3.0)).exp(),
        }
    }

    /// Order assigned to a coupling at contracted distance `d` in this step.
    pub fn order(&self, d: usize) -> f64 {
        (d as f64).max(self.shell_lo.ceil())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResonanceCondition {
    /// `|E_x - E_y| < epsilon^order` (including exact degeneracy).
    SmallGap,
    /// `|J_xy| / |E_x - E_y| > (J0/epsilon)^order`.
    LargeRatio,
}

/// A resonant pair of states `a < b` at contracted distance `distance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonantLink {
    pub a: Site,
    pub b: Site,
    pub distance: usize,
    pub condition: ResonanceCondition,
}

/// Nearest-neighbour pairs with `|v_x - v_y| < epsilon`.
pub fn detect_resonant_pairs_step1(h: &Hamiltonian, params: &ResonanceParams) -> Vec<ResonantLink> {
    let g = &h.geometry;
    let mut out = Vec::new();
    for x in 0..g.size() {
        for y in g.neighbors(x).into_iter().filter(|&y| y > x) {
            if (h.potential[x] - h.potential[y]).abs() < params.epsilon {
                out.push(ResonantLink {
                    a: x,
                    b: y,
                    distance: 1,
                    condition: ResonanceCondition::SmallGap,
                });
            }
        }
    }
    out
}

/// Test a single pair. Exact degeneracy always counts as resonant.
pub fn classify_pair(
    gap: f64,
    coupling: f64,
    order: f64,
    params: &ResonanceParams,
) -> Option<ResonanceCondition> {
    let gap = gap.abs();
    if gap == 0.0 || gap < params.gap_threshold(order) {
        Some(ResonanceCondition::SmallGap)
    } else if coupling.abs() / gap > params.ratio_threshold(order) {
        Some(ResonanceCondition::LargeRatio)
    } else {
        None
    }
}

/// Resonant pairs among all state pairs at contracted distance `1 <= d < window.shell_hi`.
///
/// Pairs inside one contraction group are never tested; pairs touching an `excluded` index
/// (cores of deferred large blocks) are skipped.
pub fn detect_resonances(
    energies: &[f64],
    coupling: &DMatrix<f64>,
    view: &ContractedMetricView,
    excluded: &[bool],
    window: &ScaleWindow,
    params: &ResonanceParams,
) -> Vec<ResonantLink> {
    let mut out = Vec::new();
    for pair in view.pairs_in_shell(1.0, window.shell_hi) {
        let order = window.order(pair.distance);
        for &x in view.members(pair.a) {
            if excluded[x] {
                continue;
            }
            for &y in view.members(pair.b) {
                if excluded[y] {
                    continue;
                }
                let gap = energies[x] - energies[y];
                if let Some(condition) = classify_pair(gap, coupling[(x, y)], order, params) {
                    out.push(ResonantLink {
                        a: x.min(y),
                        b: x.max(y),
                        distance: pair.distance,
                        condition,
                    });
                }
            }
        }
    }
    out.sort_by_key(|l| (l.a, l.b));
    out
}

/// One resonant block: a core and the collar grown around it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResonantBlock {
    pub id: usize,
    pub core: Vec<Site>,
    pub collar: Vec<Site>,
    pub scale: usize,
    pub is_small: bool,
}

impl ResonantBlock {
    /// Core and collar, sorted.
    pub fn sites(&self) -> Vec<Site> {
        let mut s: Vec<Site> = self.core.iter().chain(&self.collar).copied().collect();
        s.sort_unstable();
        s
    }

    pub fn volume(&self) -> usize {
        self.core.len() + self.collar.len()
    }
}

/// Blocks of one scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRegistry {
    pub scale: usize,
    pub blocks: Vec<ResonantBlock>,
    /// Block id of each site (core or collar), if any.
    pub site_to_block: Vec<Option<usize>>,
    /// Ids of large blocks, deferred to the next scale.
    pub carried_large: Vec<usize>,
}

impl BlockRegistry {
    pub fn empty(num_sites: usize) -> Self {
        Self {
            scale: 0,
            blocks: Vec::new(),
            site_to_block: vec![None; num_sites],
            carried_large: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn small_blocks(&self) -> impl Iterator<Item = &ResonantBlock> {
        self.blocks.iter().filter(|b| b.is_small)
    }

    pub fn large_blocks(&self) -> impl Iterator<Item = &ResonantBlock> {
        self.blocks.iter().filter(|b| !b.is_small)
    }

    /// Mask of sites in some block core.
    pub fn core_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.site_to_block.len()];
        for b in &self.blocks {
            for &s in &b.core {
                mask[s] = true;
            }
        }
        mask
    }
}

impl fmt::Display for BlockRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scale {}:", self.scale)?;
        for b in &self.blocks {
            let kind = if b.is_small { "small" } else { "large" };
            write!(f, " [{} {kind} {}+{}]", b.id, b.core.len(), b.collar.len())?;
        }
        Ok(())
    }
}

/// Connected components of resonant links, with contraction groups acting as supersites and
/// carried large block cores merged into whatever touches them.
///
/// Components are returned as sorted site lists, ordered by their smallest site.
pub fn form_blocks(
    links: &[ResonantLink],
    carried_large: &[ResonantBlock],
    view: &ContractedMetricView,
) -> Vec<Vec<Site>> {
    let n = view.geometry().size();
    let mut uf = UnionFind::new(n);
    let mut touched = vec![false; n];
    let mut absorb = |uf: &mut UnionFind, anchor: Site, sites: &[Site]| {
        for &s in sites {
            touched[s] = true;
            uf.union(anchor, s);
        }
    };
    for link in links {
        absorb(&mut uf, link.a, view.members(view.group_of(link.a)));
        absorb(&mut uf, link.a, view.members(view.group_of(link.b)));
    }
    for block in carried_large {
        if let Some(&anchor) = block.core.first() {
            absorb(&mut uf, anchor, &block.core);
        }
    }
    collect_components(&mut uf, &touched)
}

fn collect_components(uf: &mut UnionFind, include: &[bool]) -> Vec<Vec<Site>> {
    let n = include.len();
    let mut slot = vec![usize::MAX; n];
    let mut comps: Vec<Vec<Site>> = Vec::new();
    for s in (0..n).filter(|&s| include[s]) {
        let r = uf.find(s);
        if slot[r] == usize::MAX {
            slot[r] = comps.len();
            comps.push(Vec::new());
        }
        comps[slot[r]].push(s);
    }
    comps
}

/// Collar every component, merge components whose collared sets intersect, and classify by
/// collared volume against `window.volume_limit`.
pub fn classify_and_collar(
    components: &[Vec<Site>],
    window: &ScaleWindow,
    geom: &LatticeGeometry,
) -> BlockRegistry {
    let n = geom.size();
    let collared: Vec<Vec<Site>> = components
        .iter()
        .map(|c| geom.thicken(c, window.collar_radius))
        .collect();

    let mut uf = UnionFind::new(components.len());
    let mut owner = vec![usize::MAX; n];
    for (i, sites) in collared.iter().enumerate() {
        for &s in sites {
            if owner[s] == usize::MAX {
                owner[s] = i;
            } else {
                uf.union(owner[s], i);
            }
        }
    }

    let mut in_core = vec![false; n];
    let mut in_block = vec![None; n];
    for (i, sites) in collared.iter().enumerate() {
        let root = uf.find(i);
        for &s in sites {
            in_block[s] = Some(root);
        }
        for &s in &components[i] {
            in_core[s] = true;
        }
    }

    // group sites by merged component, in order of smallest site
    let mut slot = vec![usize::MAX; components.len()];
    let mut blocks: Vec<ResonantBlock> = Vec::new();
    let mut site_to_block = vec![None; n];
    for s in 0..n {
        let Some(root) = in_block[s] else { continue };
        if slot[root] == usize::MAX {
            slot[root] = blocks.len();
            blocks.push(ResonantBlock {
                id: blocks.len(),
                core: Vec::new(),
                collar: Vec::new(),
                scale: window.step,
                is_small: true,
            });
        }
        let b = &mut blocks[slot[root]];
        if in_core[s] {
            b.core.push(s);
        } else {
            b.collar.push(s);
        }
        site_to_block[s] = Some(b.id);
    }
    for b in &mut blocks {
        b.is_small = (b.volume() as f64) <= window.volume_limit;
    }
    let carried_large = blocks
        .iter()
        .filter(|b| !b.is_small)
        .map(|b| b.id)
        .collect();
    BlockRegistry {
        scale: window.step,
        blocks,
        site_to_block,
        carried_large,
    }
}

/// Whether `x` and `y` lie in one block (core or collar). For `x == y` this is membership.
pub fn same_block(x: Site, y: Site, reg: &BlockRegistry) -> bool {
    match (reg.site_to_block[x], reg.site_to_block[y]) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}
