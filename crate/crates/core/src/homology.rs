//! Vietoris–Rips persistent homology up to H2 over Euclidean point clouds:
//! condensed distance matrices, maxmin subsampling, persistence via
//! coboundary reduction with clearing, Betti reporting, and a slow
//! full-boundary reference reduction for cross-checking on small inputs.

use std::collections::{BinaryHeap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

/// Hard cap on the number of simplices stored per dimension. Enumeration
/// aborts with an actionable error beyond this; the intended remedy is
/// maxmin subsampling or a smaller max_radius.
pub const MAX_SIMPLICES_PER_DIM: usize = 2_000_000;

/// Fraction of the largest finite death used as the default significance
/// cutoff when filtering a diagram down to Betti numbers.
pub const SIGNIFICANCE_FRACTION: f64 = 0.3;

/// Condensed pairwise Euclidean distances: upper triangle, row-major,
/// `n(n-1)/2` entries, zero diagonal implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    condensed: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_points(points: &Array2<f64>) -> Result<DistanceMatrix> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::Validation("distance matrix needs at least one point".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("point cloud contains non-finite coordinates".into()));
        }
        let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            let pi = points.row(i);
            for j in (i + 1)..n {
                let pj = points.row(j);
                let d2: f64 = pi
                    .iter()
                    .zip(pj.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                condensed.push(d2.sqrt());
            }
        }
        Ok(DistanceMatrix { n, condensed })
    }

    pub fn from_condensed(n: usize, condensed: Vec<f64>) -> Result<DistanceMatrix> {
        if n == 0 {
            return Err(Error::Validation("distance matrix needs at least one point".into()));
        }
        if condensed.len() != n * (n - 1) / 2 {
            return Err(Error::ShapeMismatch(format!(
                "condensed length {} does not match n = {n} (expected {})",
                condensed.len(),
                n * (n - 1) / 2
            )));
        }
        if condensed.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Validation("distances must be finite and nonnegative".into()));
        }
        Ok(DistanceMatrix { n, condensed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn condensed(&self) -> &[f64] {
        &self.condensed
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.condensed[self.idx(i, j)],
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => self.condensed[self.idx(j, i)],
        }
    }

    pub fn max_distance(&self) -> f64 {
        self.condensed.iter().copied().fold(0.0, f64::max)
    }

    /// min over points of the max distance to any other point. Beyond this
    /// radius the complex is a cone on that central point, so no homology
    /// in dimensions ≥ 1 survives; it is the natural truncation radius.
    pub fn enclosing_radius(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .filter(|&j| j != i)
                    .map(|j| self.get(i, j))
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
            .min(self.max_distance())
    }
}

/// Fraction of a cloud a subsample budget covers (1.0 when the budget is
/// not binding).
pub fn subsample_coverage(total: usize, budget: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    budget.min(total) as f64 / total as f64
}

/// Farthest-point ordering: a seeded start, then repeatedly the point
/// maximising the distance to everything chosen so far. Deterministic for
/// a given seed; ties go to the smallest index.
pub fn maxmin_subsample(points: &Array2<f64>, budget: usize, rng_seed: u64) -> Vec<usize> {
    let n = points.nrows();
    if n == 0 || budget == 0 {
        return Vec::new();
    }
    let take = budget.min(n);
    let mut rng = StreamRng::new(rng_seed, stream::SUBSAMPLE);
    let start = rng.below(n);
    let mut chosen = Vec::with_capacity(take);
    let mut taken = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    chosen.push(start);
    taken[start] = true;
    while chosen.len() < take {
        let last = points.row(*chosen.last().expect("nonempty"));
        let mut best = usize::MAX;
        let mut best_d2 = -1.0;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d2: f64 = points
                .row(i)
                .iter()
                .zip(last.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        chosen.push(best);
        taken[best] = true;
    }
    chosen
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistenceInterval {
    pub dim: usize,
    pub birth: f64,
    /// `f64::INFINITY` for classes still alive at max_radius.
    pub death: f64,
}

impl PersistenceInterval {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }
    pub fn is_essential(&self) -> bool {
        self.death.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    intervals: Vec<PersistenceInterval>,
    max_dim: usize,
    max_radius: f64,
}

impl PersistenceDiagram {
    pub fn intervals(&self) -> &[PersistenceInterval] {
        &self.intervals
    }

    pub fn in_dim(&self, dim: usize) -> impl Iterator<Item = &PersistenceInterval> {
        self.intervals.iter().filter(move |iv| iv.dim == dim)
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    pub fn save_csv(&self, path: &str) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(Error::from)?;
        wtr.write_record(["dim", "birth", "death"])?;
        for iv in &self.intervals {
            let death = if iv.is_essential() {
                "inf".to_string()
            } else {
                format!("{}", iv.death)
            };
            wtr.write_record([format!("{}", iv.dim), format!("{}", iv.birth), death])?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    fn finish(mut self) -> PersistenceDiagram {
        self.intervals.sort_by(|a, b| {
            a.dim
                .cmp(&b.dim)
                .then(a.birth.total_cmp(&b.birth))
                .then(a.death.total_cmp(&b.death))
        });
        self
    }
}

/// Betti numbers of the complex at a fixed radius: intervals alive on
/// `[birth, death)`.
pub fn betti_at(diagram: &PersistenceDiagram, radius: f64) -> (usize, usize, usize) {
    let mut counts = [0usize; 3];
    for iv in diagram.intervals() {
        if iv.dim < 3 && iv.birth <= radius && radius < iv.death {
            counts[iv.dim] += 1;
        }
    }
    (counts[0], counts[1], counts[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BettiReport {
    pub significance_threshold: f64,
    pub h0: usize,
    pub h1: usize,
    pub h2: usize,
}

/// Counts of intervals whose persistence exceeds the threshold; essential
/// classes always count.
pub fn betti_report(diagram: &PersistenceDiagram, significance_threshold: f64) -> BettiReport {
    let mut counts = [0usize; 3];
    for iv in diagram.intervals() {
        if iv.dim < 3 && (iv.is_essential() || iv.persistence() > significance_threshold) {
            counts[iv.dim] += 1;
        }
    }
    BettiReport {
        significance_threshold,
        h0: counts[0],
        h1: counts[1],
        h2: counts[2],
    }
}

/// Default cutoff: a fixed fraction of the largest finite death in the
/// diagram (0 when every class is essential or the diagram is empty).
pub fn default_significance(diagram: &PersistenceDiagram) -> f64 {
    SIGNIFICANCE_FRACTION
        * diagram
            .intervals()
            .iter()
            .filter(|iv| !iv.is_essential())
            .map(|iv| iv.death)
            .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Combinatorial indexing: a k-simplex with vertices v0 < v1 < ... < vk gets
// rank Σ C(v_i, i+1), a bijection onto 0..C(n, k+1).

struct Binomial {
    // table[v][k] = C(v, k) for k ≤ 4
    table: Vec<[u64; 5]>,
}

impl Binomial {
    fn new(n: usize) -> Binomial {
        let mut table = vec![[0u64; 5]; n + 1];
        for v in 0..=n {
            table[v][0] = 1;
            for k in 1..5.min(v + 1) {
                table[v][k] = if k > v {
                    0
                } else {
                    table[v - 1][k - 1] + table[v - 1].get(k).copied().unwrap_or(0)
                };
            }
        }
        Binomial { table }
    }

    #[inline]
    fn c(&self, v: usize, k: usize) -> u64 {
        if k > 4 || v >= self.table.len() {
            0
        } else {
            self.table[v][k]
        }
    }
}

fn rank_of(vertices: &[usize], binom: &Binomial) -> u64 {
    vertices
        .iter()
        .enumerate()
        .map(|(i, &v)| binom.c(v, i + 1))
        .sum()
}

/// Decode a rank back to ascending vertices; `out` receives dim+1 entries.
fn vertices_of(rank: u64, dim: usize, n: usize, binom: &Binomial, out: &mut Vec<usize>) {
    out.clear();
    let mut r = rank;
    let mut bound = n;
    for k in (1..=dim + 1).rev() {
        // Largest v < bound with C(v, k) ≤ r, by binary search.
        let mut lo = k - 1;
        let mut hi = bound;
        while lo + 1 < hi {
            let mid = (lo + hi) / 2;
            if binom.c(mid, k) <= r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(lo);
        r -= binom.c(lo, k);
        bound = lo;
    }
    out.reverse();
}

/// All dim-simplices with diameter ≤ max_radius as (diameter, rank),
/// unsorted. dim ∈ {1, 2}.
fn enumerate_simplices(
    dist: &DistanceMatrix,
    dim: usize,
    max_radius: f64,
    binom: &Binomial,
) -> Result<Vec<(f64, u64)>> {
    let n = dist.n();
    let mut out = Vec::new();
    let push = |diam: f64, rank: u64, out: &mut Vec<(f64, u64)>| -> Result<()> {
        out.push((diam, rank));
        if out.len() > MAX_SIMPLICES_PER_DIM {
            return Err(Error::SimplexOverflow {
                dim,
                limit: MAX_SIMPLICES_PER_DIM,
            });
        }
        Ok(())
    };
    match dim {
        1 => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = dist.get(i, j);
                    if d <= max_radius {
                        push(d, binom.c(j, 2) + i as u64, &mut out)?;
                    }
                }
            }
        }
        2 => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let dij = dist.get(i, j);
                    if dij > max_radius {
                        continue;
                    }
                    for k in (j + 1)..n {
                        let diam = dij.max(dist.get(i, k)).max(dist.get(j, k));
                        if diam <= max_radius {
                            push(diam, binom.c(k, 3) + binom.c(j, 2) + i as u64, &mut out)?;
                        }
                    }
                }
            }
        }
        _ => {
            return Err(Error::Validation(format!(
                "simplex enumeration only implemented for dims 1 and 2, got {dim}"
            )))
        }
    }
    Ok(out)
}

/// Cofacets of the simplex with the given vertices: every vertex insertion
/// whose resulting diameter stays within max_radius.
fn cofacets(
    dist: &DistanceMatrix,
    vertices: &[usize],
    diam: f64,
    max_radius: f64,
    binom: &Binomial,
    out: &mut Vec<(f64, u64)>,
) {
    out.clear();
    let n = dist.n();
    let mut merged = Vec::with_capacity(vertices.len() + 1);
    'outer: for w in 0..n {
        if vertices.contains(&w) {
            continue;
        }
        let mut d = diam;
        for &v in vertices {
            let dv = dist.get(v, w);
            if dv > max_radius {
                continue 'outer;
            }
            d = d.max(dv);
        }
        merged.clear();
        merged.extend_from_slice(vertices);
        let pos = merged.partition_point(|&v| v < w);
        merged.insert(pos, w);
        out.push((d, rank_of(&merged, binom)));
    }
}

/// Entry in a coboundary column, ordered by (diameter, rank) so that a
/// min-heap pops the earliest cofacet in filtration order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ColEntry {
    diam: f64,
    rank: u64,
}

impl Eq for ColEntry {}

impl Ord for ColEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.diam
            .total_cmp(&other.diam)
            .then(self.rank.cmp(&other.rank))
            .reverse() // BinaryHeap is a max-heap; reverse for min-pop
    }
}

impl PartialOrd for ColEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Persistence of the Vietoris–Rips filtration truncated at `max_radius`,
/// ℤ/2 coefficients. Dimension 0 is computed by union–find; dimensions ≥ 1
/// by reducing the coboundary matrix, processing simplices in reverse
/// filtration order with the clearing optimisation (simplices already
/// paired as deaths one dimension down are skipped). "Essential" means
/// alive at max_radius. Zero-persistence intervals are dropped for
/// dimensions ≥ 1.
pub fn rips_persistence(
    dist: &DistanceMatrix,
    max_dim: usize,
    max_radius: f64,
) -> Result<PersistenceDiagram> {
    if max_dim > 2 {
        return Err(Error::Validation(format!("max_dim must be ≤ 2, got {max_dim}")));
    }
    if !(max_radius > 0.0) || !max_radius.is_finite() {
        return Err(Error::Validation(format!(
            "max_radius must be positive and finite, got {max_radius}"
        )));
    }
    let n = dist.n();
    let binom = Binomial::new(n + 1);
    let mut intervals = Vec::new();

    // Dimension 0: Kruskal over the edges in filtration order. Every merge
    // kills one component; merge edges are cleared from the dim-1 columns.
    let mut edges = enumerate_simplices(dist, 1, max_radius, &binom)?;
    edges.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut cleared: Vec<u64> = Vec::new();
    let mut components = n;
    let mut scratch = Vec::new();
    for &(d, rank) in &edges {
        vertices_of(rank, 1, n, &binom, &mut scratch);
        let (a, b) = (find(&mut parent, scratch[0]), find(&mut parent, scratch[1]));
        if a != b {
            parent[a] = b;
            components -= 1;
            intervals.push(PersistenceInterval {
                dim: 0,
                birth: 0.0,
                death: d,
            });
            cleared.push(rank);
        }
    }
    for _ in 0..components {
        intervals.push(PersistenceInterval {
            dim: 0,
            birth: 0.0,
            death: f64::INFINITY,
        });
    }

    // Dimensions 1..=max_dim by coboundary reduction.
    let mut simplices = edges;
    for dim in 1..=max_dim {
        let cleared_set: std::collections::HashSet<u64> = cleared.iter().copied().collect();
        let mut columns: Vec<(f64, u64)> = simplices
            .iter()
            .copied()
            .filter(|(_, r)| !cleared_set.contains(r))
            .collect();
        // Reverse filtration order.
        columns.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));

        let mut pivot_owner: HashMap<u64, usize> = HashMap::new();
        let mut stored_lists: Vec<Vec<u64>> = Vec::new();
        let mut stored_diams: Vec<f64> = Vec::new();
        cleared = Vec::new();
        let mut verts = Vec::new();
        let mut cof = Vec::new();

        for &(diam, rank) in &columns {
            vertices_of(rank, dim, n, &binom, &mut verts);
            cofacets(dist, &verts, diam, max_radius, &binom, &mut cof);
            // First pivot candidate: earliest cofacet in filtration order.
            let first = cof
                .iter()
                .copied()
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let claim = |pivot: (f64, u64),
                         list: Vec<u64>,
                         pivot_owner: &mut HashMap<u64, usize>,
                         stored_lists: &mut Vec<Vec<u64>>,
                         stored_diams: &mut Vec<f64>,
                         cleared: &mut Vec<u64>,
                         intervals: &mut Vec<PersistenceInterval>| {
                pivot_owner.insert(pivot.1, stored_lists.len());
                stored_lists.push(list);
                stored_diams.push(diam);
                cleared.push(pivot.1);
                if pivot.0 > diam {
                    intervals.push(PersistenceInterval {
                        dim,
                        birth: diam,
                        death: pivot.0,
                    });
                }
            };
            match first {
                None => {
                    intervals.push(PersistenceInterval {
                        dim,
                        birth: diam,
                        death: f64::INFINITY,
                    });
                    continue;
                }
                Some(p) if !pivot_owner.contains_key(&p.1) => {
                    // The reduction would stop at its first candidate; no
                    // heap needed.
                    claim(
                        p,
                        vec![rank],
                        &mut pivot_owner,
                        &mut stored_lists,
                        &mut stored_diams,
                        &mut cleared,
                        &mut intervals,
                    );
                    continue;
                }
                Some(_) => {}
            }

            // Contested pivot: full reduction. Columns are represented by
            // the list of simplices whose coboundaries sum into them (ℤ/2),
            // re-enumerating cofacets on demand instead of storing entries.
            let mut heap: BinaryHeap<ColEntry> = cof
                .iter()
                .map(|&(d, r)| ColEntry { diam: d, rank: r })
                .collect();
            let mut list = vec![rank];
            let outcome = loop {
                // Pop with ℤ/2 parity cancellation.
                let mut candidate = None;
                while let Some(top) = heap.pop() {
                    let mut count = 1usize;
                    while heap.peek() == Some(&top) {
                        heap.pop();
                        count += 1;
                    }
                    if count % 2 == 1 {
                        candidate = Some(top);
                        break;
                    }
                }
                let Some(cand) = candidate else { break None };
                match pivot_owner.get(&cand.rank) {
                    None => break Some(cand),
                    Some(&owner) => {
                        heap.push(cand);
                        let owner_diam = stored_diams[owner];
                        for &src in &stored_lists[owner] {
                            vertices_of(src, dim, n, &binom, &mut verts);
                            // Filtration value of the stored simplex is not
                            // retained per entry; recompute from vertices.
                            let mut sd: f64 = 0.0;
                            for a in 0..verts.len() {
                                for b in (a + 1)..verts.len() {
                                    sd = sd.max(dist.get(verts[a], verts[b]));
                                }
                            }
                            debug_assert!(sd <= owner_diam || stored_lists[owner].len() > 1);
                            cofacets(dist, &verts, sd, max_radius, &binom, &mut cof);
                            for &(d, r) in cof.iter() {
                                heap.push(ColEntry { diam: d, rank: r });
                            }
                            list.push(src);
                        }
                    }
                }
            };
            match outcome {
                None => intervals.push(PersistenceInterval {
                    dim,
                    birth: diam,
                    death: f64::INFINITY,
                }),
                Some(pivot) => {
                    // Cancel duplicate sources before storing.
                    list.sort_unstable();
                    let mut dedup = Vec::with_capacity(list.len());
                    let mut i = 0;
                    while i < list.len() {
                        let mut j = i;
                        while j < list.len() && list[j] == list[i] {
                            j += 1;
                        }
                        if (j - i) % 2 == 1 {
                            dedup.push(list[i]);
                        }
                        i = j;
                    }
                    claim(
                        (pivot.diam, pivot.rank),
                        dedup,
                        &mut pivot_owner,
                        &mut stored_lists,
                        &mut stored_diams,
                        &mut cleared,
                        &mut intervals,
                    );
                }
            }
        }

        if dim < max_dim {
            simplices = enumerate_simplices(dist, dim + 1, max_radius, &binom)?;
        }
    }

    Ok(PersistenceDiagram {
        intervals,
        max_dim,
        max_radius,
    }
    .finish())
}

/// Reference implementation: full boundary-matrix reduction over ℤ/2 with
/// explicit columns for every simplex up to dimension max_dim + 1. Cubic in
/// the simplex count, so guarded to small inputs; exists to cross-check the
/// production path exactly.
pub fn naive_rips_persistence(
    dist: &DistanceMatrix,
    max_dim: usize,
    max_radius: f64,
) -> Result<PersistenceDiagram> {
    const MAX_N: usize = 16;
    if dist.n() > MAX_N {
        return Err(Error::Validation(format!(
            "reference reduction is exponential; n = {} exceeds {MAX_N}",
            dist.n()
        )));
    }
    if max_dim > 2 {
        return Err(Error::Validation(format!("max_dim must be ≤ 2, got {max_dim}")));
    }
    if !(max_radius > 0.0) || !max_radius.is_finite() {
        return Err(Error::Validation(format!(
            "max_radius must be positive and finite, got {max_radius}"
        )));
    }
    let n = dist.n();

    // Enumerate all simplices up to max_dim + 1 within the radius.
    #[derive(Clone)]
    struct Simp {
        diam: f64,
        dim: usize,
        vertices: Vec<usize>,
    }
    let mut simps: Vec<Simp> = (0..n)
        .map(|v| Simp {
            diam: 0.0,
            dim: 0,
            vertices: vec![v],
        })
        .collect();
    let top_dim = (max_dim + 1).min(n.saturating_sub(1));
    let mut frontier: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    for _ in 1..=top_dim {
        let mut next = Vec::new();
        for vs in &frontier {
            let last = *vs.last().expect("nonempty simplex");
            for w in (last + 1)..n {
                let mut vs2 = vs.clone();
                vs2.push(w);
                let mut diam: f64 = 0.0;
                for a in 0..vs2.len() {
                    for b in (a + 1)..vs2.len() {
                        diam = diam.max(dist.get(vs2[a], vs2[b]));
                    }
                }
                if diam <= max_radius {
                    simps.push(Simp {
                        diam,
                        dim: vs2.len() - 1,
                        vertices: vs2.clone(),
                    });
                    next.push(vs2);
                }
            }
        }
        frontier = next;
    }

    // Filtration order: diameter, then dimension (faces first), then
    // lexicographic vertex order.
    simps.sort_by(|a, b| {
        a.diam
            .total_cmp(&b.diam)
            .then(a.dim.cmp(&b.dim))
            .then(a.vertices.cmp(&b.vertices))
    });
    let position: HashMap<Vec<usize>, usize> = simps
        .iter()
        .enumerate()
        .map(|(p, s)| (s.vertices.clone(), p))
        .collect();

    // Standard left-to-right reduction.
    let mut pivot_of: HashMap<usize, usize> = HashMap::new();
    let mut reduced: Vec<Vec<usize>> = Vec::with_capacity(simps.len());
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (p, s) in simps.iter().enumerate() {
        let mut col: Vec<usize> = if s.dim == 0 {
            Vec::new()
        } else {
            (0..s.vertices.len())
                .map(|drop| {
                    let mut f = s.vertices.clone();
                    f.remove(drop);
                    position[&f]
                })
                .collect()
        };
        col.sort_unstable();
        loop {
            let Some(&low) = col.last() else { break };
            let Some(&other) = pivot_of.get(&low) else {
                pivot_of.insert(low, p);
                pairs.push((low, p));
                break;
            };
            // ℤ/2 addition of two sorted columns.
            let mut merged = Vec::with_capacity(col.len() + reduced[other].len());
            let (mut a, mut b) = (0, 0);
            let rhs = &reduced[other];
            while a < col.len() || b < rhs.len() {
                if b == rhs.len() || (a < col.len() && col[a] < rhs[b]) {
                    merged.push(col[a]);
                    a += 1;
                } else if a == col.len() || rhs[b] < col[a] {
                    merged.push(rhs[b]);
                    b += 1;
                } else {
                    a += 1;
                    b += 1;
                }
            }
            col = merged;
        }
        reduced.push(col);
    }

    let mut intervals = Vec::new();
    let died: std::collections::HashSet<usize> = pairs.iter().map(|&(low, _)| low).collect();
    let killers: std::collections::HashSet<usize> = pairs.iter().map(|&(_, p)| p).collect();
    for &(low, p) in &pairs {
        let (birth_s, death_s) = (&simps[low], &simps[p]);
        if birth_s.dim > max_dim {
            continue;
        }
        if birth_s.dim == 0 || death_s.diam > birth_s.diam {
            intervals.push(PersistenceInterval {
                dim: birth_s.dim,
                birth: birth_s.diam,
                death: death_s.diam,
            });
        }
    }
    for (p, s) in simps.iter().enumerate() {
        if s.dim <= max_dim && !died.contains(&p) && !killers.contains(&p) {
            intervals.push(PersistenceInterval {
                dim: s.dim,
                birth: s.diam,
                death: f64::INFINITY,
            });
        }
    }

    Ok(PersistenceDiagram {
        intervals,
        max_dim,
        max_radius,
    }
    .finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn diagrams_equal(a: &PersistenceDiagram, b: &PersistenceDiagram) -> bool {
        a.intervals().len() == b.intervals().len()
            && a.intervals()
                .iter()
                .zip(b.intervals())
                .all(|(x, y)| x.dim == y.dim && x.birth == y.birth && x.death == y.death)
    }

    #[test]
    fn distance_matrix_of_unit_square_corners() {
        let pts = ndarray::arr2(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let mut d = dm.condensed().to_vec();
        d.sort_by(f64::total_cmp);
        let expect = [1.0, 1.0, 1.0, 1.0, 2f64.sqrt(), 2f64.sqrt()];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn distance_matrix_of_identical_points() {
        let pts = ndarray::arr2(&[[2.0, -1.0], [2.0, -1.0]]);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        assert_eq!(dm.condensed(), &[0.0]);
    }

    #[test]
    fn triangle_inequality_on_random_cloud() {
        let pts = synthetic::gaussian_cloud(20, 3, 1.0, 11);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                for k in 0..20 {
                    assert!(dm.get(i, k) <= dm.get(i, j) + dm.get(j, k) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn rank_decode_round_trips() {
        let n = 12;
        let binom = Binomial::new(n + 1);
        let mut buf = Vec::new();
        for dim in 0..=3usize {
            let mut combos = vec![];
            fn rec(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if left == 0 {
                    out.push(cur.clone());
                    return;
                }
                for v in start..n {
                    cur.push(v);
                    rec(v + 1, n, left - 1, cur, out);
                    cur.pop();
                }
            }
            rec(0, n, dim + 1, &mut Vec::new(), &mut combos);
            let mut seen = std::collections::HashSet::new();
            for vs in combos {
                let r = rank_of(&vs, &binom);
                assert!(seen.insert(r), "rank collision at {vs:?}");
                vertices_of(r, dim, n, &binom, &mut buf);
                assert_eq!(buf, vs);
            }
        }
    }

    #[test]
    fn two_points_merge_once() {
        let pts = ndarray::arr2(&[[0.0], [3.0]]);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let diag = rips_persistence(&dm, 2, 10.0).unwrap();
        assert_eq!(diag.intervals().len(), 2);
        let finite: Vec<_> = diag.intervals().iter().filter(|iv| !iv.is_essential()).collect();
        assert_eq!(finite.len(), 1);
        assert_eq!((finite[0].dim, finite[0].birth, finite[0].death), (0, 0.0, 3.0));
        assert_eq!(diag.in_dim(0).filter(|iv| iv.is_essential()).count(), 1);
    }

    #[test]
    fn single_point_is_one_essential_component() {
        let pts = ndarray::arr2(&[[1.0, 2.0]]);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let diag = rips_persistence(&dm, 2, 1.0).unwrap();
        assert_eq!(diag.intervals().len(), 1);
        assert!(diag.intervals()[0].is_essential());
        assert_eq!(diag.intervals()[0].dim, 0);
    }

    #[test]
    fn circle_has_one_long_loop() {
        let pts = synthetic::circle(60, 1.0);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let diag = rips_persistence(&dm, 2, dm.enclosing_radius()).unwrap();
        let h1: Vec<_> = diag.in_dim(1).collect();
        assert_eq!(h1.len(), 1, "expected exactly one H1 interval, got {h1:?}");
        let iv = h1[0];
        // 60 is divisible by 3, so the loop fills exactly at the chord
        // spanning a third of the circle.
        assert!((iv.death - 3f64.sqrt()).abs() < 1e-9, "death {}", iv.death);
        assert!((iv.birth - 2.0 * (std::f64::consts::PI / 60.0).sin()).abs() < 1e-9);
        assert!(iv.persistence() > 1.0);

        let report = betti_report(&diag, default_significance(&diag));
        assert_eq!((report.h0, report.h1, report.h2), (1, 1, 0));
        assert_eq!(betti_at(&diag, 0.01), (60, 0, 0));
        assert_eq!(betti_at(&diag, 1.0), (1, 1, 0));
        assert_eq!(betti_at(&diag, 1.99), (1, 0, 0));
    }

    #[test]
    fn sphere_has_one_long_void() {
        let pts = synthetic::fibonacci_sphere(150, 1.0);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let diag = rips_persistence(&dm, 2, dm.enclosing_radius()).unwrap();
        let report = betti_report(&diag, default_significance(&diag));
        assert_eq!((report.h0, report.h1, report.h2), (1, 0, 1));
        let best = diag
            .in_dim(2)
            .max_by(|a, b| a.persistence().total_cmp(&b.persistence()))
            .expect("an H2 interval");
        // The void of a dense Rips sphere fills at the radius of the
        // inscribed regular tetrahedron's edge: √(8/3).
        assert!(
            (best.death - (8f64 / 3.0).sqrt()).abs() < 0.05,
            "H2 death {}",
            best.death
        );
    }

    #[test]
    fn two_rings_have_two_components_and_two_loops() {
        let pts = synthetic::two_rings(30, 1.0, 4.0);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let diag = rips_persistence(&dm, 2, dm.enclosing_radius()).unwrap();
        let report = betti_report(&diag, default_significance(&diag));
        assert_eq!((report.h0, report.h1, report.h2), (2, 2, 0));
    }

    #[test]
    fn torus_grid_reports_torus_betti_numbers() {
        // 40×10 grid on R = 2, r = 0.7. Truncating at radius 2 keeps the
        // long loop (and nothing merges the two sides of the hole), so it
        // shows up as essential; the meridian loop and the void die at the
        // tube's fill-in radius ≈ 1.33.
        let pts = synthetic::torus_grid(40, 10, 2.0, 0.7);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let diag = rips_persistence(&dm, 2, 2.0).unwrap();
        // The v-rings sit 0.433 apart, above the default cutoff (≈ 0.40),
        // so the component count needs a calibrated threshold: anything in
        // the gap between the grid pitch and the smallest real feature
        // persistence (0.73) works.
        let report = betti_report(&diag, 0.45);
        assert_eq!((report.h0, report.h1, report.h2), (1, 2, 1));
        // Loops and the void clear the default cutoff regardless.
        let default_report = betti_report(&diag, default_significance(&diag));
        assert_eq!((default_report.h1, default_report.h2), (2, 1));
        assert_eq!(diag.in_dim(1).filter(|iv| iv.is_essential()).count(), 1);
    }

    #[test]
    fn matches_reference_reduction_on_small_clouds() {
        for (i, (n, d)) in [(4, 2), (6, 3), (8, 3), (9, 2), (11, 4), (12, 3)].iter().enumerate() {
            let pts = synthetic::gaussian_cloud(*n, *d, 1.0, 40 + i as u64);
            let dm = DistanceMatrix::from_points(&pts).unwrap();
            for radius in [dm.enclosing_radius(), dm.max_distance() * 1.01] {
                let fast = rips_persistence(&dm, 2, radius).unwrap();
                let slow = naive_rips_persistence(&dm, 2, radius).unwrap();
                assert!(
                    diagrams_equal(&fast, &slow),
                    "cloud {i} radius {radius}: {:?} vs {:?}",
                    fast.intervals(),
                    slow.intervals()
                );
            }
        }
    }

    #[test]
    fn permutation_leaves_diagram_unchanged() {
        let pts = synthetic::circle(24, 1.0);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let base = rips_persistence(&dm, 2, dm.enclosing_radius()).unwrap();
        let mut rng = StreamRng::new(9, stream::DATA);
        let order = rng.choose_indices(24, 24);
        let mut shuffled = Array2::zeros((24, 2));
        for (dst, &src) in order.iter().enumerate() {
            shuffled.row_mut(dst).assign(&pts.row(src));
        }
        let dm2 = DistanceMatrix::from_points(&shuffled).unwrap();
        let diag = rips_persistence(&dm2, 2, dm2.enclosing_radius()).unwrap();
        assert!(diagrams_equal(&base, &diag));
    }

    #[test]
    fn isometry_invariance_and_scale_equivariance() {
        let pts = synthetic::gaussian_cloud(15, 3, 1.0, 21);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let base = rips_persistence(&dm, 2, dm.enclosing_radius()).unwrap();

        // Rotate in the (0,1) plane, then (1,2), then translate.
        let (c1, s1) = (0.6f64.cos(), 0.6f64.sin());
        let (c2, s2) = (1.1f64.cos(), 1.1f64.sin());
        let mut moved = pts.clone();
        for mut row in moved.rows_mut() {
            let (x, y, z) = (row[0], row[1], row[2]);
            let (x, y) = (c1 * x - s1 * y, s1 * x + c1 * y);
            let (y, z) = (c2 * y - s2 * z, s2 * y + c2 * z);
            row[0] = x + 5.0;
            row[1] = y - 2.0;
            row[2] = z + 0.25;
        }
        let dmm = DistanceMatrix::from_points(&moved).unwrap();
        let rotated = rips_persistence(&dmm, 2, dmm.enclosing_radius()).unwrap();
        assert_eq!(base.intervals().len(), rotated.intervals().len());
        for (a, b) in base.intervals().iter().zip(rotated.intervals()) {
            assert_eq!(a.dim, b.dim);
            assert!((a.birth - b.birth).abs() < 1e-9);
            assert!(a.is_essential() == b.is_essential());
            if !a.is_essential() {
                assert!((a.death - b.death).abs() < 1e-9);
            }
        }

        let s = 2.37;
        let scaled_pts = &pts * s;
        let dms = DistanceMatrix::from_points(&scaled_pts).unwrap();
        let scaled = rips_persistence(&dms, 2, dms.enclosing_radius()).unwrap();
        assert_eq!(base.intervals().len(), scaled.intervals().len());
        for (a, b) in base.intervals().iter().zip(scaled.intervals()) {
            assert_eq!(a.dim, b.dim);
            assert!((a.birth * s - b.birth).abs() < 1e-9 * (1.0 + b.birth.abs()));
            if !a.is_essential() {
                assert!((a.death * s - b.death).abs() < 1e-9 * (1.0 + b.death.abs()));
            }
        }
    }

    #[test]
    fn noisy_cloud_has_no_significant_voids() {
        let pts = synthetic::gaussian_cloud(40, 3, 1.0, 33);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let diag = rips_persistence(&dm, 2, dm.enclosing_radius()).unwrap();
        let report = betti_report(&diag, default_significance(&diag));
        assert_eq!(report.h2, 0);
    }

    #[test]
    fn maxmin_budget_covers_all_points() {
        let pts = synthetic::gaussian_cloud(17, 2, 1.0, 5);
        let mut idx = maxmin_subsample(&pts, 17, 3);
        assert_eq!(idx.len(), 17);
        idx.sort_unstable();
        assert_eq!(idx, (0..17).collect::<Vec<_>>());
        assert_eq!(maxmin_subsample(&pts, 40, 3).len(), 17);
    }

    #[test]
    fn maxmin_budget_one_is_seeded_start() {
        let pts = synthetic::gaussian_cloud(9, 2, 1.0, 5);
        let idx = maxmin_subsample(&pts, 1, 7);
        let mut rng = StreamRng::new(7, stream::SUBSAMPLE);
        assert_eq!(idx, vec![rng.below(9) as usize]);
    }

    #[test]
    fn maxmin_splits_two_clusters() {
        let mut pts = synthetic::gaussian_cloud(20, 2, 0.1, 6);
        for i in 10..20 {
            pts[(i, 0)] += 50.0;
        }
        let idx = maxmin_subsample(&pts, 2, 0);
        assert_eq!(idx.len(), 2);
        assert_ne!(idx[0] < 10, idx[1] < 10, "one index per cluster: {idx:?}");
    }

    #[test]
    fn maxmin_is_deterministic() {
        let pts = synthetic::gaussian_cloud(30, 3, 1.0, 8);
        assert_eq!(maxmin_subsample(&pts, 10, 42), maxmin_subsample(&pts, 10, 42));
    }

    #[test]
    fn overflow_guard_suggests_subsampling() {
        let pts = synthetic::gaussian_cloud(300, 3, 1.0, 12);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let err = rips_persistence(&dm, 2, dm.max_distance() * 1.01).unwrap_err();
        match err {
            Error::SimplexOverflow { dim, limit } => {
                assert_eq!(dim, 2);
                assert_eq!(limit, MAX_SIMPLICES_PER_DIM);
            }
            other => panic!("expected SimplexOverflow, got {other}"),
        }
    }

    #[test]
    fn csv_export_writes_inf_for_essential() {
        let pts = ndarray::arr2(&[[0.0], [1.0]]);
        let dm = DistanceMatrix::from_points(&pts).unwrap();
        let diag = rips_persistence(&dm, 0, 2.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        diag.save_csv(path.to_str().unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("dim,birth,death\n"));
        assert!(text.contains("0,0,1"));
        assert!(text.contains("0,0,inf"));
    }
}
