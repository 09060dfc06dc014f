//! Extraction of candidate coarse equivalences from spatially implemented
//! isomorphisms, quantitative lemma checks for projection families, and
//! ghost-transport experiments.
//!
//! Every isomorphism here is represented by its implementing unitary `u`,
//! acting as conjugation `a -> u a u*`. The pipeline's hypotheses (tail
//! bounds, unitarity, floor thresholds) are certified numerically before a
//! check runs; an uncertified run is refused rather than reported as a
//! counterexample.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{vec_norm, CMatrix};
use crate::operator::{BandedOperator, ProjectionFamily, PROJECTION_TOL};
use crate::space::{same_space, CoarseMap, IndexSet, MetricSpace};
use crate::vecmeasure::{
    approximate_halving_with, AtomicVectorMeasure, MeasureNorm, RoundingConfig,
};

/// Verdict threshold for the coefficient floor; positive-but-tiny floors
/// are treated as extraction failures.
pub const DEFAULT_FLOOR_THRESHOLD: f64 = 1e-6;
/// Unitarity tolerance for spatial implementations.
pub const UNITARY_TOL: f64 = 1e-10;
/// The approximability level used by the stable pipeline (Lemma 4.2 is
/// invoked at 1/8 so that the 7/8 overlap hypothesis can be met).
pub const STABLE_EPSILON: f64 = 0.125;
/// The epsilon at which the coefficient floor bound is certified.
pub const FLOOR_EPSILON: f64 = 0.2;

/// Unitary `u : l2(X) (x) C^d -> l2(Y) (x) C^d` implementing an
/// isomorphism by conjugation.
#[derive(Debug, Clone)]
pub struct SpatialUnitary {
    source: Arc<MetricSpace>,
    target: Arc<MetricSpace>,
    fiber_dim: usize,
    u: CMatrix,
    unitary_defect: f64,
}

impl SpatialUnitary {
    pub fn new(
        source: Arc<MetricSpace>,
        target: Arc<MetricSpace>,
        fiber_dim: usize,
        u: CMatrix,
    ) -> Result<Self> {
        if fiber_dim == 0 {
            return Err(Error::domain("fiber dimension must be at least 1"));
        }
        if source.len() != target.len() {
            return Err(Error::shape(format!(
                "finite-scale unitaries need |X| = |Y|; got {} and {}",
                source.len(),
                target.len()
            )));
        }
        let dim = source.len() * fiber_dim;
        if u.rows() != dim || u.cols() != dim {
            return Err(Error::shape(format!(
                "unitary must be {dim}x{dim}, got {}x{}",
                u.rows(),
                u.cols()
            )));
        }
        let id = CMatrix::identity(dim);
        let left = u.adjoint().mul(&u).sub(&id).op_norm(crate::operator::op_norm_tolerance(), 10_000)?;
        let right = u.mul(&u.adjoint()).sub(&id).op_norm(crate::operator::op_norm_tolerance(), 10_000)?;
        let unitary_defect = left.max(right);
        if unitary_defect > UNITARY_TOL {
            return Err(Error::invalid(format!(
                "matrix is not unitary within tolerance: defect {unitary_defect:.3e} > {UNITARY_TOL:.0e}"
            )));
        }
        Ok(SpatialUnitary { source, target, fiber_dim, u, unitary_defect })
    }

    /// `u delta_x = delta_{perm(x)}` (tensored with the fiber identity).
    pub fn from_permutation(
        source: Arc<MetricSpace>,
        target: Arc<MetricSpace>,
        perm: &[usize],
        fiber_dim: usize,
    ) -> Result<Self> {
        let n = source.len();
        if perm.len() != n || target.len() != n {
            return Err(Error::domain("permutation length must match both spaces"));
        }
        let mut seen = vec![false; n];
        for &y in perm {
            if y >= n || seen[y] {
                return Err(Error::domain("assignment is not a permutation"));
            }
            seen[y] = true;
        }
        let d = fiber_dim;
        let mut u = CMatrix::zeros(n * d, n * d);
        for (x, &y) in perm.iter().enumerate() {
            for f in 0..d {
                u.set(y * d + f, x * d + f, Complex64::ONE);
            }
        }
        SpatialUnitary::new(source, target, fiber_dim, u)
    }

    pub fn source(&self) -> &Arc<MetricSpace> {
        &self.source
    }

    pub fn target(&self) -> &Arc<MetricSpace> {
        &self.target
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.u
    }

    pub fn unitary_defect(&self) -> f64 {
        self.unitary_defect
    }

    /// The implementing unitary of the inverse isomorphism.
    pub fn inverse(&self) -> SpatialUnitary {
        SpatialUnitary {
            source: self.target.clone(),
            target: self.source.clone(),
            fiber_dim: self.fiber_dim,
            u: self.u.adjoint(),
            unitary_defect: self.unitary_defect,
        }
    }

    /// `Phi(a) = u a u*`, an operator on the target space. Generally not
    /// banded there; its propagation is a diagnostic, not an invariant.
    pub fn conjugate(&self, a: &BandedOperator) -> Result<BandedOperator> {
        if !same_space(a.space(), &self.source) || a.fiber_dim() != self.fiber_dim {
            return Err(Error::shape("operator does not live on the unitary's source"));
        }
        let mat = self.u.mul(a.matrix()).mul(&self.u.adjoint());
        BandedOperator::from_matrix(self.target.clone(), self.fiber_dim, mat)
    }

    /// `Phi^{-1}(b) = u* b u`.
    pub fn conjugate_inverse(&self, b: &BandedOperator) -> Result<BandedOperator> {
        self.inverse().conjugate(b)
    }

    /// Matrix of coefficients `(y, x) -> |Phi(e_xx) delta_y|`, row-major
    /// `|Y| x |X|`. For fiber dimension 1 this is `|u_yx|`; in general it
    /// is the spectral norm of the `d x d` block `u_yx`.
    pub fn coefficient_matrix(&self) -> Vec<f64> {
        let n = self.source.len();
        let d = self.fiber_dim;
        let mut coeff = vec![0.0_f64; n * n];
        for y in 0..n {
            for x in 0..n {
                coeff[y * n + x] = if d == 1 {
                    self.u.get(y, x).norm()
                } else {
                    let block = CMatrix::from_fn(d, d, |i, j| self.u.get(y * d + i, x * d + j));
                    block.spectral_norm_small()
                };
            }
        }
        coeff
    }

    /// Columns of `u` applied to `delta_x (x) xi`.
    fn column_vector(&self, x: usize, xi: &[Complex64]) -> Vec<Complex64> {
        let d = self.fiber_dim;
        let dim = self.source.len() * d;
        let mut w = vec![Complex64::ZERO; dim];
        for (f, &xf) in xi.iter().enumerate() {
            if xf != Complex64::ZERO {
                let col = x * d + f;
                for (i, wi) in w.iter_mut().enumerate() {
                    *wi += self.u.get(i, col) * xf;
                }
            }
        }
        w
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<[f64; 2]> = self.u.data().iter().map(|z| [z.re, z.im]).collect();
        let file = UnitaryFile {
            source_label: self.source.label().to_string(),
            target_label: self.target.label().to_string(),
            n: self.source.len(),
            d: self.fiber_dim,
            entries,
        };
        crate::report::to_json_string(&file)
    }

    pub fn from_json(text: &str, source: Arc<MetricSpace>, target: Arc<MetricSpace>) -> Result<Self> {
        let file: UnitaryFile =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("unitary JSON: {e}")))?;
        if file.source_label != source.label() || file.target_label != target.label() {
            return Err(Error::invalid(format!(
                "unitary file is for '{}' -> '{}', got '{}' -> '{}'",
                file.source_label,
                file.target_label,
                source.label(),
                target.label()
            )));
        }
        if file.n != source.len() {
            return Err(Error::invalid("unitary file size does not match the space"));
        }
        let dim = file.n * file.d;
        let data: Vec<Complex64> =
            file.entries.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
        let u = CMatrix::from_vec(dim, dim, data)
            .map_err(|_| Error::invalid("unitary entry count does not match (n d)^2"))?;
        SpatialUnitary::new(source, target, file.d, u)
    }
}

#[derive(Serialize, serde::Deserialize)]
struct UnitaryFile {
    source_label: String,
    target_label: String,
    n: usize,
    d: usize,
    entries: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub floor_threshold: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { floor_threshold: DEFAULT_FLOOR_THRESHOLD }
    }
}

/// Extracted map pair with the quantities Prop. 1.8 needs to certify a
/// coarse equivalence at finite scale.
#[derive(Debug, Clone)]
pub struct CoarseMapReport {
    pub f: CoarseMap,
    pub g: CoarseMap,
    pub coefficient_floor: f64,
    pub coefficient_floor_g: f64,
    pub expansion_f: Vec<(f64, f64)>,
    pub expansion_g: Vec<(f64, f64)>,
    pub closeness_fg: f64,
    pub closeness_gf: f64,
    pub verdict: Verdict,
}

#[derive(Serialize)]
pub struct CoarseMapReportJson {
    pub f: Vec<usize>,
    pub g: Vec<usize>,
    pub coefficient_floor: f64,
    pub coefficient_floor_g: f64,
    pub expansion_f: Vec<(f64, f64)>,
    pub expansion_g: Vec<(f64, f64)>,
    pub closeness_fg: f64,
    pub closeness_gf: f64,
    pub verdict: Verdict,
}

impl CoarseMapReport {
    pub fn json_struct(&self) -> CoarseMapReportJson {
        CoarseMapReportJson {
            f: self.f.assignment().to_vec(),
            g: self.g.assignment().to_vec(),
            coefficient_floor: self.coefficient_floor,
            coefficient_floor_g: self.coefficient_floor_g,
            expansion_f: self.expansion_f.clone(),
            expansion_g: self.expansion_g.clone(),
            closeness_fg: self.closeness_fg,
            closeness_gf: self.closeness_gf,
            verdict: self.verdict,
        }
    }
}

/// `f(x) = argmax_y |Phi(e_xx) delta_y|` with ties to the smallest index;
/// `g` symmetric via `u*`. The report carries both floors, expansion
/// tables over all realized radii, and both closeness defects.
pub fn extract_map(u: &SpatialUnitary) -> Result<CoarseMapReport> {
    extract_map_with(u, &ExtractOptions::default())
}

pub fn extract_map_with(u: &SpatialUnitary, opts: &ExtractOptions) -> Result<CoarseMapReport> {
    let n = u.source.len();
    let coeff = u.coefficient_matrix(); // (y, x) -> |u_yx|
    let mut f_assign = Vec::with_capacity(n);
    let mut floor_f = f64::INFINITY;
    for x in 0..n {
        let (mut best_y, mut best) = (0usize, f64::NEG_INFINITY);
        for y in 0..n {
            let v = coeff[y * n + x];
            if v > best {
                best = v;
                best_y = y;
            }
        }
        floor_f = floor_f.min(best);
        f_assign.push(best_y);
    }
    let mut g_assign = Vec::with_capacity(n);
    let mut floor_g = f64::INFINITY;
    for y in 0..n {
        let (mut best_x, mut best) = (0usize, f64::NEG_INFINITY);
        for x in 0..n {
            // coefficients of u* are the transpose of those of u
            let v = coeff[y * n + x];
            if v > best {
                best = v;
                best_x = x;
            }
        }
        floor_g = floor_g.min(best);
        g_assign.push(best_x);
    }
    let f = CoarseMap::new(u.source.clone(), u.target.clone(), f_assign)?;
    let g = CoarseMap::new(u.target.clone(), u.source.clone(), g_assign)?;
    build_report(f, g, floor_f, floor_g, opts)
}

fn build_report(
    f: CoarseMap,
    g: CoarseMap,
    floor_f: f64,
    floor_g: f64,
    opts: &ExtractOptions,
) -> Result<CoarseMapReport> {
    let expansion_f = f.expansion_table();
    let expansion_g = g.expansion_table();
    let closeness_fg = crate::space::closeness_defect(&f, &g)?;
    let closeness_gf = crate::space::closeness_defect(&g, &f)?;
    let verdict = if floor_f.min(floor_g) >= opts.floor_threshold {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(CoarseMapReport {
        f,
        g,
        coefficient_floor: floor_f,
        coefficient_floor_g: floor_g,
        expansion_f,
        expansion_g,
        closeness_fg,
        closeness_gf,
        verdict,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LemmaOptions {
    /// Override for `delta`; defaults to `epsilon / (2 N_r)`.
    pub delta_override: Option<f64>,
    /// Number of base points at which the halving measure is exercised.
    pub halving_sample: usize,
}

impl Default for LemmaOptions {
    fn default() -> Self {
        LemmaOptions { delta_override: None, halving_sample: 8 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointEntry {
    pub x: usize,
    pub m_set: IndexSet,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HalvingEntry {
    pub x: usize,
    pub m_prime_size: usize,
    pub error: f64,
    /// The paper-style ceiling `2 N_r delta` for this instance.
    pub threshold: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub epsilon: f64,
    pub r: f64,
    pub delta: f64,
    pub n_r: usize,
    pub sum_defect: f64,
    pub tail_bound: f64,
    pub per_point: Vec<PointEntry>,
    pub min_norm: f64,
    /// `1 - 4 epsilon`.
    pub bound: f64,
    pub halving: Vec<HalvingEntry>,
    pub pass: bool,
}

/// Quantitative halving-lemma check for a projection family summing to 1.
///
/// Hypotheses are certified first: the family must sum to the identity
/// within 1e-9 and carry a tail certificate `family_tail_bound(r) <=
/// epsilon`. With `delta = epsilon / (2 N_r)`, every point must then
/// satisfy `|p_{M(x,delta)} delta_x| >= 1 - 4 epsilon` up to 1e-9. On a
/// sample of points the induced vector measure `A -> pi p_A delta_x` is
/// run through the halving rounder and the achieved error recorded.
pub fn check_halving_lemma(
    ps: &ProjectionFamily,
    epsilon: f64,
    r: f64,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    if ps.fiber_dim() != 1 {
        return Err(Error::domain("the halving lemma check runs on fiber dimension 1"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let space = ps.space().clone();
    let n = space.len();
    let sum_defect = ps.sum_defect()?;
    if sum_defect > 1e-9 {
        return Err(Error::Uncertified(format!(
            "family does not sum to the identity: |sum p - 1| = {sum_defect:.3e} > 1e-9"
        )));
    }
    let tail_bound = ps.family_tail_bound(r)?;
    if tail_bound > epsilon {
        return Err(Error::Uncertified(format!(
            "family_tail_bound {tail_bound:.6e} exceeds epsilon {epsilon} at r = {r}"
        )));
    }
    let n_r = space.growth(r)?;
    let delta = opts.delta_override.unwrap_or(epsilon / (2.0 * n_r as f64));

    // one streaming pass: point coefficients and masked column sums
    let members = ps.len();
    let mut coeff = vec![0.0_f64; members * n];
    let mut acc = CMatrix::zeros(n, n); // column x accumulates p_{M(x,delta)} delta_x
    ps.for_each_member(|k, mat| {
        for x in 0..n {
            let mut sq = 0.0;
            for i in 0..n {
                sq += mat.get(i, x).norm_sqr();
            }
            let norm = sq.sqrt();
            coeff[k * n + x] = norm;
            if norm >= delta {
                for i in 0..n {
                    let v = acc.get(i, x) + mat.get(i, x);
                    acc.set(i, x, v);
                }
            }
        }
    });

    let mut per_point = Vec::with_capacity(n);
    let mut min_norm = f64::INFINITY;
    for x in 0..n {
        let members_at_x: Vec<usize> =
            (0..members).filter(|&k| coeff[k * n + x] >= delta).collect();
        let m_set = IndexSet::new(members_at_x, members)?;
        let mut sq = 0.0;
        for i in 0..n {
            sq += acc.get(i, x).norm_sqr();
        }
        let norm = sq.sqrt();
        min_norm = min_norm.min(norm);
        per_point.push(PointEntry { x, m_set, norm });
    }

    let bound = 1.0 - 4.0 * epsilon;
    let pass = min_norm >= bound - 1e-9;

    // halving exercise on an evenly spread point sample
    let sample_count = opts.halving_sample.min(n);
    let mut sample: Vec<usize> = (0..sample_count).map(|j| j * n / sample_count.max(1)).collect();
    if let Some(worst) = per_point.iter().min_by(|a, b| a.norm.partial_cmp(&b.norm).unwrap()) {
        sample.push(worst.x);
    }
    sample.sort_unstable();
    sample.dedup();
    let mut halving = Vec::new();
    for &x in &sample {
        let ball = space.ball(x, r)?;
        let m_prime: Vec<usize> =
            (0..members).filter(|&k| coeff[k * n + x] < delta).collect();
        let dim = 2 * ball.len();
        let mut atoms = Vec::with_capacity(m_prime.len());
        for &k in &m_prime {
            let col = ps.member_column(k, x);
            let mut atom = Vec::with_capacity(dim);
            for b in ball.iter() {
                atom.push(col[b].re);
            }
            for b in ball.iter() {
                atom.push(col[b].im);
            }
            atoms.push(atom);
        }
        let mu = AtomicVectorMeasure::new(dim, atoms, MeasureNorm::L2)?;
        let full = IndexSet::full(mu.len());
        let res = approximate_halving_with(&mu, &full, &RoundingConfig::default())?;
        halving.push(HalvingEntry {
            x,
            m_prime_size: m_prime.len(),
            error: res.error,
            threshold: 2.0 * n_r as f64 * delta,
            bound: res.bound,
        });
    }

    Ok(LemmaReport {
        epsilon,
        r,
        delta,
        n_r,
        sum_defect,
        tail_bound,
        per_point,
        min_norm,
        bound,
        halving,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FloorReport {
    pub epsilon: f64,
    pub r: f64,
    pub n_r: usize,
    pub certified: f64,
    pub measured: f64,
    pub pass: bool,
}

/// Certified coefficient floor `1/(10 N_r)` at `epsilon = 1/5`, together
/// with the measured `min_x max_k |p_k delta_x|`.
pub fn coefficient_floor_bound(ps: &ProjectionFamily, r: f64) -> Result<FloorReport> {
    if ps.fiber_dim() != 1 {
        return Err(Error::domain("the coefficient floor bound runs on fiber dimension 1"));
    }
    let epsilon = FLOOR_EPSILON;
    let sum_defect = ps.sum_defect()?;
    if sum_defect > 1e-9 {
        return Err(Error::Uncertified(format!(
            "family does not sum to the identity: |sum p - 1| = {sum_defect:.3e} > 1e-9"
        )));
    }
    let tail_bound = ps.family_tail_bound(r)?;
    if tail_bound > epsilon {
        return Err(Error::Uncertified(format!(
            "family_tail_bound {tail_bound:.6e} exceeds epsilon {epsilon} at r = {r}"
        )));
    }
    let space = ps.space();
    let n = space.len();
    let n_r = space.growth(r)?;
    let coeff = ps.point_coefficients()?;
    let members = ps.len();
    let mut measured = f64::INFINITY;
    for x in 0..n {
        let best = (0..members).map(|k| coeff[k * n + x]).fold(0.0, f64::max);
        measured = measured.min(best);
    }
    let certified = 1.0 / (10.0 * n_r as f64);
    let pass = measured >= certified - 1e-9;
    Ok(FloorReport { epsilon, r, n_r, certified, measured, pass })
}

/// Checks the idempotent midpoint implication on one input: whenever
/// `|p v - v/2| < delta` holds, `|v| < 2 delta` must too. Returns whether
/// the hypothesis held; a violated conclusion is an error since it cannot
/// happen for a genuine projection.
pub fn idempotent_midpoint_check(p: &BandedOperator, v: &[Complex64], delta: f64) -> Result<bool> {
    if !(delta > 0.0) {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    let defect = p.projection_defect()?;
    if defect > PROJECTION_TOL {
        return Err(Error::Uncertified(format!(
            "p is not a projection within tolerance: defect {defect:.3e}"
        )));
    }
    let pv = p.apply_to_vector(v)?;
    let mid: Vec<Complex64> = pv.iter().zip(v).map(|(a, b)| a - b * 0.5).collect();
    let hypothesis = vec_norm(&mid) < delta;
    if hypothesis {
        let vn = vec_norm(v);
        if vn >= 2.0 * delta + 1e-9 {
            return Err(Error::ConclusionViolated(format!(
                "midpoint hypothesis held with delta = {delta} but |v| = {vn}"
            )));
        }
    }
    Ok(hypothesis)
}

/// Finite-rank fiber projection certifying the Lemma 4.2 bound: the
/// minimal-rank spectral projection `p` of `R = sum_x (p_N)_xx` with
/// `trace((1-p) R) <= epsilon^2`. Then for every subfamily sum `p_A`,
/// `|(1 (x) (1-p)) p_A|^2 <= trace((1-p) R)` since `p_A <= p_N`.
#[derive(Debug, Clone)]
pub struct FiberProjection {
    pub matrix: CMatrix,
    pub rank: usize,
    pub residual_trace: f64,
}

pub fn dominant_fiber_projection(ps: &ProjectionFamily, epsilon: f64) -> Result<FiberProjection> {
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let d = ps.fiber_dim();
    let n = ps.space().len();
    let mut r_mat = CMatrix::zeros(d, d);
    ps.for_each_member(|_, mat| {
        for x in 0..n {
            for i in 0..d {
                for j in 0..d {
                    let v = r_mat.get(i, j) + mat.get(x * d + i, x * d + j);
                    r_mat.set(i, j, v);
                }
            }
        }
    });
    // symmetrize against roundoff
    let r_mat = r_mat.add(&r_mat.adjoint()).scaled(Complex64::new(0.5, 0.0));
    fiber_projection_from_density(&r_mat, epsilon)
}

fn fiber_projection_from_density(r_mat: &CMatrix, epsilon: f64) -> Result<FiberProjection> {
    let d = r_mat.rows();
    let (eigs, vecs) = r_mat.hermitian_eigen();
    let budget = epsilon * epsilon;
    let mut rank = d;
    for k in (0..=d).rev() {
        let tail: f64 = eigs[k..].iter().map(|&l| l.max(0.0)).sum();
        if tail <= budget {
            rank = k;
        } else {
            break;
        }
    }
    let mut p = CMatrix::zeros(d, d);
    for col in 0..rank {
        for i in 0..d {
            for j in 0..d {
                let v = p.get(i, j) + vecs.get(i, col) * vecs.get(j, col).conj();
                p.set(i, j, v);
            }
        }
    }
    let residual_trace: f64 = eigs[rank..].iter().map(|&l| l.max(0.0)).sum();
    Ok(FiberProjection { matrix: p, rank, residual_trace })
}

#[derive(Debug, Clone)]
pub struct StableExtractReport {
    pub report: CoarseMapReport,
    pub fiber_rank_f: usize,
    pub fiber_rank_g: usize,
    /// `min_x |(1 (x) p) u (delta_x (x) xi)|`, the overlap entering the
    /// 7/8 hypothesis, for each direction.
    pub overlap_f: f64,
    pub overlap_g: f64,
    pub hypothesis_met_f: bool,
    pub hypothesis_met_g: bool,
}

/// Stable extraction (fiber dimension > 1): `f(x)` maximizes
/// `|Phi(chi_x (x) p_xi)(chi_y (x) p)|` over `y`, with `p` the dominant
/// fiber projection of the conjugated rank-one family at level 1/8; `g`
/// symmetric via `u*`.
pub fn stable_extract_map(
    u: &SpatialUnitary,
    xi: &[Complex64],
    epsilon: f64,
    opts: &ExtractOptions,
) -> Result<StableExtractReport> {
    let d = u.fiber_dim();
    if d < 2 {
        return Err(Error::domain("stable extraction needs fiber dimension d > 1"));
    }
    if xi.len() != d {
        return Err(Error::shape(format!("fiber vector has length {}, expected {d}", xi.len())));
    }
    let xn = vec_norm(xi);
    if (xn - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("fiber vector must be a unit vector, |xi| = {xn}")));
    }
    let mut xi = xi.to_vec();
    for z in xi.iter_mut() {
        *z /= xn;
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain("epsilon must be positive"));
    }

    let (f_assign, floor_f, rank_f, overlap_f) = stable_direction(u, &xi, epsilon)?;
    let inv = u.inverse();
    let (g_assign, floor_g, rank_g, overlap_g) = stable_direction(&inv, &xi, epsilon)?;

    let f = CoarseMap::new(u.source.clone(), u.target.clone(), f_assign)?;
    let g = CoarseMap::new(u.target.clone(), u.source.clone(), g_assign)?;
    let report = build_report(f, g, floor_f, floor_g, opts)?;
    Ok(StableExtractReport {
        report,
        fiber_rank_f: rank_f,
        fiber_rank_g: rank_g,
        overlap_f,
        overlap_g,
        hypothesis_met_f: overlap_f >= 7.0 / 8.0,
        hypothesis_met_g: overlap_g >= 7.0 / 8.0,
    })
}

/// One direction of the stable pipeline. Returns the argmax assignment,
/// its floor, the fiber projection rank, and the measured 7/8 overlap.
fn stable_direction(
    u: &SpatialUnitary,
    xi: &[Complex64],
    epsilon: f64,
) -> Result<(Vec<usize>, f64, usize, f64)> {
    let n = u.source.len();
    let d = u.fiber_dim();
    // w_x = u (delta_x (x) xi); the conjugated family is q_x = w_x w_x*.
    let columns: Vec<Vec<Complex64>> = (0..n).map(|x| u.column_vector(x, xi)).collect();
    // density R = sum_y (q_N)_yy on the fiber
    let mut r_mat = CMatrix::zeros(d, d);
    for w in &columns {
        for y in 0..n {
            for i in 0..d {
                for j in 0..d {
                    let v = r_mat.get(i, j) + w[y * d + i] * w[y * d + j].conj();
                    r_mat.set(i, j, v);
                }
            }
        }
    }
    let r_mat = r_mat.add(&r_mat.adjoint()).scaled(Complex64::new(0.5, 0.0));
    let fiber = fiber_projection_from_density(&r_mat, epsilon)?;
    let p = &fiber.matrix;

    let mut assign = Vec::with_capacity(n);
    let mut floor = f64::INFINITY;
    let mut overlap_min = f64::INFINITY;
    for w in &columns {
        let mut best = f64::NEG_INFINITY;
        let mut best_y = 0usize;
        let mut total_sq = 0.0;
        for y in 0..n {
            let block: Vec<Complex64> = (0..d).map(|i| w[y * d + i]).collect();
            let projected = p.matvec(&block);
            let norm = vec_norm(&projected);
            total_sq += norm * norm;
            if norm > best {
                best = norm;
                best_y = y;
            }
        }
        floor = floor.min(best);
        overlap_min = overlap_min.min(total_sq.sqrt());
        assign.push(best_y);
    }
    Ok((assign, floor, fiber.rank, overlap_min))
}

#[derive(Debug, Clone, Serialize)]
pub struct GhostTransportReport {
    pub source_profile: Vec<f64>,
    pub image_profile: Vec<f64>,
    pub threshold: f64,
    pub source_vanishing: bool,
    pub image_vanishing: bool,
    /// The qualitative prediction: a non-vanishing source profile must not
    /// be sent to a vanishing image profile.
    pub consistent: bool,
}

/// Side-by-side ghost profiles of `a` and `Phi(a) = u a u*` along the
/// configured exhaustions.
pub fn ghost_transport_experiment(
    u: &SpatialUnitary,
    a: &BandedOperator,
    exhaustion_source: &[IndexSet],
    exhaustion_target: &[IndexSet],
    threshold: f64,
) -> Result<GhostTransportReport> {
    let source_profile = a.ghost_profile(exhaustion_source)?;
    let image = u.conjugate(a)?;
    let image_profile = image.ghost_profile(exhaustion_target)?;
    let source_vanishing = source_profile.last().map(|&v| v <= threshold).unwrap_or(true);
    let image_vanishing = image_profile.last().map(|&v| v <= threshold).unwrap_or(true);
    let consistent = source_vanishing || !image_vanishing;
    Ok(GhostTransportReport {
        source_profile,
        image_profile,
        threshold,
        source_vanishing,
        image_vanishing,
        consistent,
    })
}
