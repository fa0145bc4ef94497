//! Site geometry, variable orderings, nearest-neighbour conditioning sets and
//! truncated subset enumeration.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when comparing distances that are equal on paper.
const DIST_REL_TOL: f64 = 1e-12;

/// Coordinates of `D` distinct sites in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet {
    ids: Vec<u64>,
    coords: Vec<[f64; 2]>,
}

impl SiteSet {
    /// Builds a site set with ids `1..=D`.
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        let ids = (1..=coords.len() as u64).collect();
        Self::with_ids(ids, coords)
    }

    pub fn with_ids(ids: Vec<u64>, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("a site set needs at least one site"));
        }
        if ids.len() != coords.len() {
            return Err(Error::DimensionMismatch { expected: coords.len(), got: ids.len() });
        }
        if let Some(i) = coords.iter().position(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(Error::invalid(format!("site {} has non-finite coordinates", ids[i])));
        }
        let mut keyed: Vec<(u64, u64, usize)> = coords
            .iter()
            .enumerate()
            .map(|(i, c)| ((c[0] + 0.0).to_bits(), (c[1] + 0.0).to_bits(), i))
            .collect();
        keyed.sort_unstable();
        for w in keyed.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::invalid(format!(
                    "sites {} and {} coincide",
                    ids[w[0].2], ids[w[1].2]
                )));
            }
        }
        let mut sorted_ids = ids.clone();
        sorted_ids.sort_unstable();
        if sorted_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("site ids must be unique"));
        }
        Ok(SiteSet { ids, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Lag vector `s_j - s_i`.
    pub fn lag(&self, i: usize, j: usize) -> [f64; 2] {
        let (a, b) = (self.coords[i], self.coords[j]);
        [b[0] - a[0], b[1] - a[1]]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let h = self.lag(i, j);
        h[0].hypot(h[1])
    }

    pub fn distance_with(&self, metric: &Metric, i: usize, j: usize) -> f64 {
        metric.distance(self.lag(i, j))
    }

    /// Restriction to the given indices, keeping their ids.
    pub fn subset(&self, idx: &[usize]) -> SiteSet {
        SiteSet {
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            coords: idx.iter().map(|&i| self.coords[i]).collect(),
        }
    }
}

/// The `side × side` integer grid `{1, …, side}²` in row-major order (x varies
/// fastest).
pub fn make_grid(side: usize) -> SiteSet {
    assert!(side >= 1, "grid side must be positive");
    let coords = (1..=side)
        .flat_map(|y| (1..=side).map(move |x| [x as f64, y as f64]))
        .collect();
    SiteSet::new(coords).expect("grid sites are distinct and finite")
}

/// Geometric anisotropy: rotation by `theta` and stretching of the second
/// principal axis by `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyParams {
    pub theta: f64,
    pub a: f64,
}

impl AnisotropyParams {
    pub fn new(theta: f64, a: f64) -> Result<Self> {
        let p = AnisotropyParams { theta, a };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic() -> Self {
        AnisotropyParams { theta: 0.0, a: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.theta > -half_pi && self.theta < half_pi) {
            return Err(Error::invalid(format!("rotation angle {} outside (-pi/2, pi/2)", self.theta)));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!("anisotropy ratio {} must be positive", self.a)));
        }
        Ok(())
    }

    /// `sqrt(hᵀ A h)` with `A = R diag(1, a) Rᵀ`.
    pub fn distance(&self, h: [f64; 2]) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let u = c * h[0] + s * h[1];
        let v = -s * h[0] + c * h[1];
        (u * u + self.a * v * v).sqrt()
    }
}

/// Distance used for neighbour searches and variograms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    Anisotropic(AnisotropyParams),
}

impl Metric {
    pub fn distance(&self, h: [f64; 2]) -> f64 {
        match self {
            Metric::Euclidean => h[0].hypot(h[1]),
            Metric::Anisotropic(p) => p.distance(h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingKind {
    Coordinate,
    Random,
    MiddleOut,
    MaxMin,
}

impl OrderingKind {
    pub const ALL: [OrderingKind; 4] = [
        OrderingKind::Coordinate,
        OrderingKind::Random,
        OrderingKind::MiddleOut,
        OrderingKind::MaxMin,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OrderingKind::Coordinate => "coordinate",
            OrderingKind::Random => "random",
            OrderingKind::MiddleOut => "middle_out",
            OrderingKind::MaxMin => "max_min",
        }
    }
}

impl fmt::Display for OrderingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "coordinate" | "p1" => Ok(OrderingKind::Coordinate),
            "random" | "p2" => Ok(OrderingKind::Random),
            "middle_out" | "middleout" | "p3" => Ok(OrderingKind::MiddleOut),
            "max_min" | "maxmin" | "p4" => Ok(OrderingKind::MaxMin),
            other => Err(Error::invalid(format!("unknown ordering `{other}`"))),
        }
    }
}

/// A permutation of the sites. `perm[j]` is the site visited at position `j`;
/// the history of position `j` is `perm[..j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingPlan {
    pub kind: OrderingKind,
    pub seed: u64,
    perm: Vec<usize>,
    rank: Vec<usize>,
}

impl OrderingPlan {
    pub fn from_permutation(kind: OrderingKind, seed: u64, perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut rank = vec![usize::MAX; n];
        for (pos, &s) in perm.iter().enumerate() {
            if s >= n || rank[s] != usize::MAX {
                return Err(Error::invalid("ordering is not a permutation"));
            }
            rank[s] = pos;
        }
        Ok(OrderingPlan { kind, seed, perm, rank })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Position of site `s` in the ordering.
    pub fn rank(&self, s: usize) -> usize {
        self.rank[s]
    }

    /// Sites visited before position `j`.
    pub fn history(&self, j: usize) -> &[usize] {
        &self.perm[..j]
    }
}

/// Site minimising the mean distance to all other sites; ties go to the
/// smallest index.
pub fn center_site(sites: &SiteSet) -> usize {
    let n = sites.len();
    let sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| sites.distance(i, j)).sum())
        .collect();
    let min = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    sums.iter()
        .position(|&s| s <= min * (1.0 + DIST_REL_TOL))
        .expect("non-empty site set")
}

pub fn build_ordering(sites: &SiteSet, kind: OrderingKind, seed: u64) -> OrderingPlan {
    let n = sites.len();
    let perm = match kind {
        OrderingKind::Coordinate => {
            let mut p: Vec<usize> = (0..n).collect();
            p.sort_by(|&a, &b| {
                let (ca, cb) = (sites.coord(a), sites.coord(b));
                ca[1].total_cmp(&cb[1]).then(ca[0].total_cmp(&cb[0])).then(a.cmp(&b))
            });
            p
        }
        OrderingKind::Random => {
            let mut p: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            p.shuffle(&mut rng);
            p
        }
        OrderingKind::MiddleOut => {
            let c = center_site(sites);
            let mut p: Vec<usize> = (0..n).collect();
            p.sort_by(|&a, &b| {
                sites.distance(c, a).total_cmp(&sites.distance(c, b)).then(a.cmp(&b))
            });
            p
        }
        OrderingKind::MaxMin => max_min_order(sites, seed),
    };
    OrderingPlan::from_permutation(kind, seed, perm).expect("orderings are permutations")
}

fn max_min_order(sites: &SiteSet, seed: u64) -> Vec<usize> {
    let n = sites.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = center_site(sites);
    let mut perm = Vec::with_capacity(n);
    let mut chosen = vec![false; n];
    let mut min_dist: Vec<f64> = (0..n).map(|i| sites.distance(start, i)).collect();
    perm.push(start);
    chosen[start] = true;
    let mut ties = Vec::new();
    while perm.len() < n {
        let best = (0..n)
            .filter(|&i| !chosen[i])
            .map(|i| min_dist[i])
            .fold(f64::NEG_INFINITY, f64::max);
        ties.clear();
        ties.extend((0..n).filter(|&i| !chosen[i] && min_dist[i] >= best * (1.0 - DIST_REL_TOL)));
        let next = ties[rng.random_range(0..ties.len())];
        perm.push(next);
        chosen[next] = true;
        for i in 0..n {
            if !chosen[i] {
                min_dist[i] = min_dist[i].min(sites.distance(next, i));
            }
        }
    }
    perm
}

/// For every position `j` of the ordering, the `min(j+1, d) - 1` nearest
/// sites among `perm[..j]`, nearest first. Equidistant candidates are taken
/// in order of their position in the ordering.
pub fn conditioning_sets(sites: &SiteSet, plan: &OrderingPlan, d: usize) -> Result<Vec<Vec<usize>>> {
    conditioning_sets_with_metric(sites, plan, d, &Metric::Euclidean)
}

pub fn conditioning_sets_with_metric(
    sites: &SiteSet,
    plan: &OrderingPlan,
    d: usize,
    metric: &Metric,
) -> Result<Vec<Vec<usize>>> {
    let n = sites.len();
    if plan.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: plan.len() });
    }
    if d < 2 || d > n.max(2) {
        return Err(Error::invalid(format!("cutoff dimension d = {d} must satisfy 2 <= d <= D = {n}")));
    }
    let perm = plan.perm();
    Ok((0..n)
        .into_par_iter()
        .map(|j| {
            let k = j.min(d - 1);
            if k == 0 {
                return Vec::new();
            }
            let target = perm[j];
            let mut cand: Vec<(f64, usize)> = (0..j)
                .map(|q| (sites.distance_with(metric, target, perm[q]), q))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_by(cmp);
            cand.into_iter().map(|(_, q)| perm[q]).collect()
        })
        .collect())
}

/// The `k` candidates closest to `target`, ties broken by smaller index.
pub fn nearest_among(sites: &SiteSet, target: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> =
        candidates.iter().map(|&c| (sites.distance(target, c), c)).collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, c)| c).collect()
}

/// All `d`-subsets whose largest pairwise distance is at most `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetPlan {
    pub d: usize,
    pub delta: f64,
    pub subsets: Vec<Vec<usize>>,
}

impl SubsetPlan {
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }
}

/// Enumerates the cliques of size `d` of the graph joining sites at distance
/// at most `delta`. Subsets are sorted internally and listed
/// lexicographically.
pub fn truncated_subsets(sites: &SiteSet, d: usize, delta: f64) -> Result<SubsetPlan> {
    let n = sites.len();
    if d < 2 || d > n {
        return Err(Error::invalid(format!("subset dimension d = {d} must satisfy 2 <= d <= D = {n}")));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("cutoff distance {delta} must be positive")));
    }
    let cutoff = delta * (1.0 + DIST_REL_TOL);
    // forward neighbour lists: j > i only, ascending
    let forward: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).filter(|&j| sites.distance(i, j) <= cutoff).collect())
        .collect();
    let adjacent = |a: usize, b: usize| -> bool {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        forward[lo].binary_search(&hi).is_ok()
    };

    fn extend(
        clique: &mut Vec<usize>,
        cands: &[usize],
        d: usize,
        adjacent: &dyn Fn(usize, usize) -> bool,
        out: &mut Vec<Vec<usize>>,
    ) {
        if clique.len() == d {
            out.push(clique.clone());
            return;
        }
        for (pos, &c) in cands.iter().enumerate() {
            let next: Vec<usize> = cands[pos + 1..].iter().copied().filter(|&x| adjacent(c, x)).collect();
            if clique.len() + 1 + next.len() < d {
                continue;
            }
            clique.push(c);
            extend(clique, &next, d, adjacent, out);
            clique.pop();
        }
    }

    let per_start: Vec<Vec<Vec<usize>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            let mut clique = vec![i];
            extend(&mut clique, &forward[i], d, &adjacent, &mut out);
            out
        })
        .collect();
    Ok(SubsetPlan { d, delta, subsets: per_start.into_iter().flatten().collect() })
}
