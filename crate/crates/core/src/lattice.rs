//! Rectangular sublattices of `Z^D` with the L1 metric, and the block-contracted metric
//! used to decide which couplings belong to a length scale.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Flat (row-major, hence lexicographic) index of a lattice site.
pub type Site = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("lattice needs at least one axis")]
    NoAxes,
    #[error("axis {axis} has zero extent")]
    EmptyAxis { axis: usize },
    #[error("site {site} outside lattice of {size} sites")]
    InvalidSite { site: Site, size: usize },
    #[error("coordinate {coords:?} outside lattice {dims:?}")]
    InvalidCoords {
        coords: Vec<usize>,
        dims: Vec<usize>,
    },
}

/// Box `[0, d_1) x ... x [0, d_D)` with open boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LatticeGeometry {
    dims: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl TryFrom<Vec<usize>> for LatticeGeometry {
    type Error = LatticeError;

    fn try_from(dims: Vec<usize>) -> Result<Self, Self::Error> {
        LatticeGeometry::new(&dims)
    }
}

impl From<LatticeGeometry> for Vec<usize> {
    fn from(g: LatticeGeometry) -> Self {
        g.dims
    }
}

impl LatticeGeometry {
    pub fn new(dims: &[usize]) -> Result<Self, LatticeError> {
        if dims.is_empty() {
            return Err(LatticeError::NoAxes);
        }
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(LatticeError::EmptyAxis { axis });
        }
        let mut strides = vec![1; dims.len()];
        for axis in (0..dims.len() - 1).rev() {
            strides[axis] = strides[axis + 1] * dims[axis + 1];
        }
        Ok(Self {
            dims: dims.to_vec(),
            strides,
            size: dims.iter().product(),
        })
    }

    /// One-dimensional chain of `n` sites.
    pub fn chain(n: usize) -> Result<Self, LatticeError> {
        Self::new(&[n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn check(&self, site: Site) -> Result<(), LatticeError> {
        if site < self.size {
            Ok(())
        } else {
            Err(LatticeError::InvalidSite {
                site,
                size: self.size,
            })
        }
    }

    pub fn coords(&self, site: Site) -> Result<Vec<usize>, LatticeError> {
        self.check(site)?;
        Ok(self.coords_unchecked(site))
    }

    fn coords_unchecked(&self, site: Site) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.dims)
            .map(|(&s, &d)| (site / s) % d)
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> Result<Site, LatticeError> {
        if coords.len() != self.dims.len() || coords.iter().zip(&self.dims).any(|(c, d)| c >= d) {
            return Err(LatticeError::InvalidCoords {
                coords: coords.to_vec(),
                dims: self.dims.clone(),
            });
        }
        Ok(coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum())
    }

    pub fn l1_distance(&self, x: Site, y: Site) -> Result<usize, LatticeError> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.l1_unchecked(x, y))
    }

    pub(crate) fn l1_unchecked(&self, x: Site, y: Site) -> usize {
        self.strides
            .iter()
            .zip(&self.dims)
            .map(|(&s, &d)| ((x / s) % d).abs_diff((y / s) % d))
            .sum()
    }

    /// Nearest neighbours of `site` inside the box, in increasing index order.
    pub fn neighbors(&self, site: Site) -> Vec<Site> {
        let mut out = Vec::with_capacity(2 * self.dim());
        for (&s, &d) in self.strides.iter().zip(&self.dims) {
            let c = (site / s) % d;
            if c > 0 {
                out.push(site - s);
            }
            if c + 1 < d {
                out.push(site + s);
            }
        }
        out.sort_unstable();
        out
    }

    /// Site closest to the geometric center (lower middle on even axes).
    pub fn center(&self) -> Site {
        let mid: Vec<usize> = self.dims.iter().map(|d| (d - 1) / 2).collect();
        self.index(&mid).expect("center lies inside the box")
    }

    /// All sites at L1 distance strictly less than `radius` from some site of `from`.
    ///
    /// Multi-source breadth-first search; the lattice graph distance equals the L1 distance
    /// on a box.
    pub fn thicken(&self, from: &[Site], radius: f64) -> Vec<Site> {
        let mut dist = vec![usize::MAX; self.size];
        let mut queue = VecDeque::new();
        for &s in from {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(s) = queue.pop_front() {
            let next = dist[s] + 1;
            if (next as f64) >= radius {
                continue;
            }
            for n in self.neighbors(s) {
                if dist[n] == usize::MAX {
                    dist[n] = next;
                    queue.push_back(n);
                }
            }
        }
        (0..self.size).filter(|&s| dist[s] != usize::MAX).collect()
    }
}

/// A pair of distinct contraction groups and their contracted distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupPair {
    pub a: usize,
    pub b: usize,
    pub distance: usize,
}

/// The lattice with some site sets (blocks) collapsed to single points.
///
/// Group ids are assigned in order of each group's smallest site, so the numbering is
/// canonical for a given partition.
#[derive(Debug, Clone)]
pub struct ContractedMetricView {
    geometry: LatticeGeometry,
    group_of: Vec<usize>,
    members: Vec<Vec<Site>>,
    adjacency: Vec<Vec<usize>>,
}

impl ContractedMetricView {
    /// Every site is its own group; distances are plain L1 distances.
    pub fn trivial(geometry: &LatticeGeometry) -> Self {
        let group_of: Vec<usize> = (0..geometry.size()).collect();
        Self::from_assignment(geometry, group_of)
    }

    /// Contract each given site set to a point. Overlapping sets are merged; uncovered sites
    /// stay singletons.
    pub fn from_groups(
        geometry: &LatticeGeometry,
        groups: &[Vec<Site>],
    ) -> Result<Self, LatticeError> {
        let n = geometry.size();
        let mut uf = crate::blocks::UnionFind::new(n);
        for g in groups {
            for &s in g {
                geometry.check(s)?;
            }
            for w in g.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        let roots: Vec<usize> = (0..n).map(|s| uf.find(s)).collect();
        Ok(Self::from_assignment(geometry, roots))
    }

    /// `labels[s]` is an arbitrary key; sites sharing a key form one group.
    fn from_assignment(geometry: &LatticeGeometry, labels: Vec<usize>) -> Self {
        let n = geometry.size();
        let mut canonical = vec![usize::MAX; n];
        let mut group_of = vec![0; n];
        let mut members: Vec<Vec<Site>> = Vec::new();
        for s in 0..n {
            let key = labels[s];
            if canonical[key] == usize::MAX {
                canonical[key] = members.len();
                members.push(Vec::new());
            }
            group_of[s] = canonical[key];
            members[canonical[key]].push(s);
        }
        let mut adjacency = vec![Vec::new(); members.len()];
        for s in 0..n {
            let g = group_of[s];
            for t in geometry.neighbors(s) {
                let h = group_of[t];
                if h != g {
                    adjacency[g].push(h);
                }
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        Self {
            geometry: geometry.clone(),
            group_of,
            members,
            adjacency,
        }
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn num_groups(&self) -> usize {
        self.members.len()
    }

    pub fn group_of(&self, site: Site) -> usize {
        self.group_of[site]
    }

    pub fn members(&self, group: usize) -> &[Site] {
        &self.members[group]
    }

    /// Breadth-first distances from `source` to every group, truncated: groups at distance
    /// `>= limit` are reported as `usize::MAX`.
    fn bfs(&self, source: usize, limit: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.members.len()];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(g) = queue.pop_front() {
            let next = dist[g] + 1;
            if next >= limit {
                continue;
            }
            for &h in &self.adjacency[g] {
                if dist[h] == usize::MAX {
                    dist[h] = next;
                    queue.push_back(h);
                }
            }
        }
        dist
    }

    pub fn contracted_distance(&self, x: Site, y: Site) -> Result<usize, LatticeError> {
        self.geometry.check(x)?;
        self.geometry.check(y)?;
        let (gx, gy) = (self.group_of[x], self.group_of[y]);
        if gx == gy {
            return Ok(0);
        }
        let d = self.bfs(gx, usize::MAX)[gy];
        // the box is connected, so every group is reachable
        debug_assert_ne!(d, usize::MAX);
        Ok(d)
    }

    /// All unordered pairs of distinct groups whose contracted distance `d` satisfies
    /// `d_lo <= d < d_hi`, sorted by `(a, b)` with `a < b`.
    pub fn pairs_in_shell(&self, d_lo: f64, d_hi: f64) -> Vec<GroupPair> {
        let mut out = Vec::new();
        if d_hi.is_nan() || d_lo.is_nan() || d_hi <= d_lo || d_hi <= 1.0 {
            return out;
        }
        // largest integer strictly below d_hi, plus one, bounds the search depth
        let limit = d_hi.ceil() as usize;
        for a in 0..self.members.len() {
            let dist = self.bfs(a, limit);
            for (b, &d) in dist.iter().enumerate().skip(a + 1) {
                if d != usize::MAX && (d as f64) >= d_lo && (d as f64) < d_hi {
                    out.push(GroupPair { a, b, distance: d });
                }
            }
        }
        out
    }
}
