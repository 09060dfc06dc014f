//! Finite models of uniformly locally finite metric spaces and coarse maps
//! between them.
//!
//! Spaces are immutable once constructed and shared through `Arc`. Graph
//! metrics come from breadth-first search with unit edge lengths, so all
//! distances are exact integers and the metric axioms hold exactly.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted, duplicate-free subset of `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(mut members: Vec<usize>, n: usize) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if let Some(&max) = members.last() {
            if max >= n {
                return Err(Error::domain(format!("index {max} out of range for size {n}")));
            }
        }
        Ok(IndexSet(members))
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    pub fn full(n: usize) -> Self {
        IndexSet((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.0.binary_search(&x).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn complement(&self, n: usize) -> IndexSet {
        IndexSet((0..n).filter(|x| !self.contains(*x)).collect())
    }

    pub fn is_subset_of(&self, other: &IndexSet) -> bool {
        self.iter().all(|x| other.contains(x))
    }
}

/// Finite metric space: an ordered point set with a dense distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpace {
    label: String,
    n: usize,
    dist: Vec<f64>,
    /// Unit-length edges when the metric came from a graph generator;
    /// carried along so the compact edge-list serialization stays exact.
    edges: Option<Vec<(usize, usize)>>,
}

/// Triangle inequality is checked exhaustively up to this size; larger
/// matrices are checked on a seeded sample of triples.
const EXHAUSTIVE_TRIANGLE_LIMIT: usize = 256;

impl MetricSpace {
    /// Builds a space from an explicit distance matrix, validating the
    /// metric axioms.
    pub fn from_dist_matrix(label: impl Into<String>, n: usize, dist: Vec<f64>) -> Result<Arc<Self>> {
        if n == 0 {
            return Err(Error::invalid("metric space must have at least one point"));
        }
        if dist.len() != n * n {
            return Err(Error::invalid(format!(
                "distance matrix must have {} entries, got {}",
                n * n,
                dist.len()
            )));
        }
        for i in 0..n {
            if dist[i * n + i] != 0.0 {
                return Err(Error::invalid(format!("dist({i},{i}) must be 0")));
            }
            for j in 0..n {
                let d = dist[i * n + j];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::invalid(format!("dist({i},{j}) = {d} is not a valid distance")));
                }
                if i != j && d <= 0.0 {
                    return Err(Error::invalid(format!("dist({i},{j}) must be positive for distinct points")));
                }
                if dist[i * n + j] != dist[j * n + i] {
                    return Err(Error::invalid(format!("distance matrix not symmetric at ({i},{j})")));
                }
            }
        }
        let check = |i: usize, j: usize, k: usize| -> Result<()> {
            if dist[i * n + k] > dist[i * n + j] + dist[j * n + k] {
                return Err(Error::invalid(format!(
                    "triangle inequality violated at ({i},{j},{k})"
                )));
            }
            Ok(())
        };
        if n <= EXHAUSTIVE_TRIANGLE_LIMIT {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        check(i, j, k)?;
                    }
                }
            }
        } else {
            let mut rng = ChaCha12Rng::seed_from_u64(0x7472_6961);
            for _ in 0..2_000_000 {
                check(
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                )?;
            }
        }
        Ok(Arc::new(MetricSpace { label: label.into(), n, dist, edges: None }))
    }

    /// Builds the shortest-path metric of a connected graph with unit edge
    /// lengths. Distances are exact integers, so no triangle check is needed.
    pub fn from_edges(label: impl Into<String>, n: usize, edges: &[(usize, usize)]) -> Result<Arc<Self>> {
        if n == 0 {
            return Err(Error::invalid("metric space must have at least one point"));
        }
        let mut adj = vec![Vec::new(); n];
        let mut cleaned = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i},{j}) out of range for {n} points")));
            }
            if i == j {
                continue;
            }
            let (a, b) = (i.min(j), i.max(j));
            if !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
                cleaned.push((a, b));
            }
        }
        cleaned.sort_unstable();
        let mut dist = vec![-1.0_f64; n * n];
        for start in 0..n {
            let mut queue = std::collections::VecDeque::new();
            dist[start * n + start] = 0.0;
            queue.push_back(start);
            while let Some(x) = queue.pop_front() {
                let dx = dist[start * n + x];
                for &y in &adj[x] {
                    if dist[start * n + y] < 0.0 {
                        dist[start * n + y] = dx + 1.0;
                        queue.push_back(y);
                    }
                }
            }
        }
        if dist.iter().any(|&d| d < 0.0) {
            return Err(Error::invalid("graph is disconnected"));
        }
        Ok(Arc::new(MetricSpace { label: label.into(), n, dist, edges: Some(cleaned) }))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dist(&self, x: usize, y: usize) -> f64 {
        self.dist[x * self.n + y]
    }

    /// Closed ball `{y : d(x,y) <= r}`.
    pub fn ball(&self, x: usize, r: f64) -> Result<IndexSet> {
        if x >= self.n {
            return Err(Error::domain(format!("unknown point {x} in space of size {}", self.n)));
        }
        if !(r >= 0.0) {
            return Err(Error::domain(format!("ball radius must be nonnegative, got {r}")));
        }
        Ok(IndexSet((0..self.n).filter(|&y| self.dist(x, y) <= r).collect()))
    }

    /// `N_r = max_x |B_r(x)|`.
    pub fn growth(&self, r: f64) -> Result<usize> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("growth radius must be nonnegative, got {r}")));
        }
        Ok((0..self.n)
            .map(|x| (0..self.n).filter(|&y| self.dist(x, y) <= r).count())
            .max()
            .unwrap_or(0))
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Sorted distinct distance values occurring in the space (includes 0).
    pub fn realized_radii(&self) -> Vec<f64> {
        let mut radii: Vec<f64> = self.dist.clone();
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        radii.dedup();
        radii
    }

    /// Diameter of a subset (0 for empty or singleton sets).
    pub fn subset_diameter(&self, s: &IndexSet) -> f64 {
        let pts = s.as_slice();
        let mut d = 0.0;
        for (i, &x) in pts.iter().enumerate() {
            for &y in &pts[i + 1..] {
                d = f64::max(d, self.dist(x, y));
            }
        }
        d
    }

    /// Set distance `min {d(x,y) : x in a, y in b}`; infinity when either
    /// set is empty.
    pub fn set_distance(&self, a: &IndexSet, b: &IndexSet) -> f64 {
        let mut d = f64::INFINITY;
        for x in a.iter() {
            for y in b.iter() {
                d = f64::min(d, self.dist(x, y));
            }
        }
        d
    }

    pub fn to_json(&self) -> String {
        let file = match &self.edges {
            Some(edges) => SpaceFile {
                label: self.label.clone(),
                n: self.n,
                dist: None,
                edges: Some(edges.clone()),
            },
            None => SpaceFile {
                label: self.label.clone(),
                n: self.n,
                dist: Some(self.dist.clone()),
                edges: None,
            },
        };
        crate::report::to_json_string(&file)
    }

    /// Dense form regardless of provenance.
    pub fn to_dist_json(&self) -> String {
        let file = SpaceFile {
            label: self.label.clone(),
            n: self.n,
            dist: Some(self.dist.clone()),
            edges: None,
        };
        crate::report::to_json_string(&file)
    }

    pub fn from_json(text: &str) -> Result<Arc<Self>> {
        let file: SpaceFile =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("space JSON: {e}")))?;
        match (file.dist, file.edges) {
            (Some(dist), None) => MetricSpace::from_dist_matrix(file.label, file.n, dist),
            (None, Some(edges)) => MetricSpace::from_edges(file.label, file.n, &edges),
            _ => Err(Error::invalid("space JSON must contain exactly one of `dist` or `edges`")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    label: String,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dist: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<(usize, usize)>>,
}

/// True when two handles denote the same space (pointer equality or full
/// structural equality).
pub fn same_space(a: &Arc<MetricSpace>, b: &Arc<MetricSpace>) -> bool {
    Arc::ptr_eq(a, b) || (a.label == b.label && a.n == b.n && a.dist == b.dist)
}

/// What to do when a random graph comes out disconnected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disconnected {
    Regenerate,
    Error,
}

/// Test-space factory.
#[derive(Debug, Clone)]
pub enum SpaceKind {
    Path { n: usize },
    Cycle { n: usize },
    Grid { rows: usize, cols: usize },
    /// Cayley graph of Z/order with the symmetrized generator set
    /// {±g : g in gens}.
    Cayley { order: usize, gens: Vec<u64> },
    RandomGraph { n: usize, p: f64, seed: u64, on_disconnected: Disconnected },
}

pub fn generate(kind: &SpaceKind) -> Result<Arc<MetricSpace>> {
    match kind {
        SpaceKind::Path { n } => {
            require_size(*n)?;
            let edges: Vec<(usize, usize)> = (1..*n).map(|i| (i - 1, i)).collect();
            MetricSpace::from_edges(format!("path{n}"), *n, &edges)
        }
        SpaceKind::Cycle { n } => {
            require_size(*n)?;
            if *n < 3 {
                return Err(Error::domain("cycle needs at least 3 points"));
            }
            let mut edges: Vec<(usize, usize)> = (1..*n).map(|i| (i - 1, i)).collect();
            edges.push((*n - 1, 0));
            MetricSpace::from_edges(format!("cycle{n}"), *n, &edges)
        }
        SpaceKind::Grid { rows, cols } => {
            require_size(*rows)?;
            require_size(*cols)?;
            let idx = |r: usize, c: usize| r * cols + c;
            let mut edges = Vec::new();
            for r in 0..*rows {
                for c in 0..*cols {
                    if c + 1 < *cols {
                        edges.push((idx(r, c), idx(r, c + 1)));
                    }
                    if r + 1 < *rows {
                        edges.push((idx(r, c), idx(r + 1, c)));
                    }
                }
            }
            MetricSpace::from_edges(format!("grid{rows}x{cols}"), rows * cols, &edges)
        }
        SpaceKind::Cayley { order, gens } => {
            require_size(*order)?;
            if gens.is_empty() {
                return Err(Error::domain("cayley generator set must be nonempty"));
            }
            let m = *order as u64;
            let mut steps = Vec::new();
            for &g in gens {
                let g = g % m;
                if g == 0 {
                    return Err(Error::domain("cayley generator must be nonzero mod the group order"));
                }
                steps.push(g);
                steps.push(m - g); // symmetrize
            }
            let mut edges = Vec::new();
            for x in 0..*order {
                for &g in &steps {
                    let y = ((x as u64 + g) % m) as usize;
                    if x != y {
                        edges.push((x, y));
                    }
                }
            }
            let gen_label: Vec<String> = gens.iter().map(|g| g.to_string()).collect();
            MetricSpace::from_edges(
                format!("cayley_z{order}_{}", gen_label.join("_")),
                *order,
                &edges,
            )
            .map_err(|e| match e {
                Error::InvalidInput(msg) if msg.contains("disconnected") => {
                    Error::domain("cayley generators do not generate the group (graph disconnected)")
                }
                other => other,
            })
        }
        SpaceKind::RandomGraph { n, p, seed, on_disconnected } => {
            require_size(*n)?;
            if !(0.0..=1.0).contains(p) {
                return Err(Error::domain(format!("edge probability must lie in [0,1], got {p}")));
            }
            let mut rng = ChaCha12Rng::seed_from_u64(*seed);
            let attempts = match on_disconnected {
                Disconnected::Regenerate => 64,
                Disconnected::Error => 1,
            };
            for _ in 0..attempts {
                let mut edges = Vec::new();
                for i in 0..*n {
                    for j in (i + 1)..*n {
                        if rng.random::<f64>() < *p {
                            edges.push((i, j));
                        }
                    }
                }
                match MetricSpace::from_edges(format!("random{n}_p{p}_s{seed}"), *n, &edges) {
                    Ok(space) => return Ok(space),
                    Err(Error::InvalidInput(msg)) if msg.contains("disconnected") => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::domain(format!(
                "random graph on {n} points with p={p} came out disconnected (seed {seed})"
            )))
        }
    }
}

fn require_size(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::domain("size parameters must be at least 1"))
    } else {
        Ok(())
    }
}

/// Total map between finite metric spaces.
#[derive(Debug, Clone)]
pub struct CoarseMap {
    source: Arc<MetricSpace>,
    target: Arc<MetricSpace>,
    assignment: Vec<usize>,
}

impl CoarseMap {
    pub fn new(source: Arc<MetricSpace>, target: Arc<MetricSpace>, assignment: Vec<usize>) -> Result<Self> {
        if assignment.len() != source.len() {
            return Err(Error::domain(format!(
                "assignment has {} entries for a {}-point source",
                assignment.len(),
                source.len()
            )));
        }
        if let Some(&bad) = assignment.iter().find(|&&y| y >= target.len()) {
            return Err(Error::domain(format!(
                "assignment value {bad} outside the {}-point target",
                target.len()
            )));
        }
        Ok(CoarseMap { source, target, assignment })
    }

    pub fn identity(space: Arc<MetricSpace>) -> Self {
        let assignment = (0..space.len()).collect();
        CoarseMap { source: space.clone(), target: space, assignment }
    }

    pub fn source(&self) -> &Arc<MetricSpace> {
        &self.source
    }

    pub fn target(&self) -> &Arc<MetricSpace> {
        &self.target
    }

    pub fn apply(&self, x: usize) -> usize {
        self.assignment[x]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// `sup { d_Y(f(x), f(x')) : d_X(x, x') <= r }`.
    pub fn expansion_modulus(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("expansion radius must be nonnegative, got {r}")));
        }
        let n = self.source.len();
        let mut sup = 0.0_f64;
        for x in 0..n {
            for y in 0..n {
                if self.source.dist(x, y) <= r {
                    sup = sup.max(self.target.dist(self.assignment[x], self.assignment[y]));
                }
            }
        }
        Ok(sup)
    }

    /// Expansion modulus at every realized radius of the source.
    pub fn expansion_table(&self) -> Vec<(f64, f64)> {
        self.realized_expansion().expect("realized radii are nonnegative")
    }

    fn realized_expansion(&self) -> Result<Vec<(f64, f64)>> {
        self.source
            .realized_radii()
            .into_iter()
            .map(|r| Ok((r, self.expansion_modulus(r)?)))
            .collect()
    }
}

/// `max_x d_X(x, g(f(x)))`.
pub fn closeness_defect(f: &CoarseMap, g: &CoarseMap) -> Result<f64> {
    if !same_space(f.target(), g.source()) || !same_space(g.target(), f.source()) {
        return Err(Error::domain(
            "closeness defect needs g to map the target of f back to its source",
        ));
    }
    let mut sup = 0.0_f64;
    for x in 0..f.source.len() {
        sup = sup.max(f.source.dist(x, g.apply(f.apply(x))));
    }
    Ok(sup)
}
