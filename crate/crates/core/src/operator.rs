//! Finite-dimensional model of (stable) uniform Roe algebra elements:
//! block matrices indexed by a metric space, with propagation, norm,
//! truncation, ghost, and quasi-locality diagnostics.
//!
//! An operator on `l2(X) (x) C^d` is stored as a dense `(n d) x (n d)`
//! complex matrix viewed as `n x n` blocks of size `d x d`. A block counts
//! as zero only when every entry is exactly zero, so `truncate` produces
//! exact band structure.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::space::{same_space, IndexSet, MetricSpace};

/// Default relative tolerance for the power iteration behind `op_norm`.
pub const OP_NORM_TOL: f64 = 1e-10;
/// Iteration cap for the power iteration.
pub const OP_NORM_MAX_ITER: usize = 10_000;
/// Numerical tolerance for projection and orthogonality certificates.
pub const PROJECTION_TOL: f64 = 1e-10;

static OP_NORM_TOL_OVERRIDE: std::sync::OnceLock<f64> = std::sync::OnceLock::new();

/// Process-wide override for the power-iteration tolerance (the CLI's
/// `--tol` flag). Takes effect for computations that use the default
/// tolerance; certificate thresholds themselves stay pinned.
pub fn set_op_norm_tolerance(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    let _ = OP_NORM_TOL_OVERRIDE.set(tol);
    Ok(())
}

pub fn op_norm_tolerance() -> f64 {
    *OP_NORM_TOL_OVERRIDE.get().unwrap_or(&OP_NORM_TOL)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandedOperator {
    space: Arc<MetricSpace>,
    fiber_dim: usize,
    mat: CMatrix,
}

impl BandedOperator {
    pub fn from_matrix(space: Arc<MetricSpace>, fiber_dim: usize, mat: CMatrix) -> Result<Self> {
        if fiber_dim == 0 {
            return Err(Error::domain("fiber dimension must be at least 1"));
        }
        let dim = space.len() * fiber_dim;
        if mat.rows() != dim || mat.cols() != dim {
            return Err(Error::shape(format!(
                "operator on {} points with fiber {} needs a {dim}x{dim} matrix, got {}x{}",
                space.len(),
                fiber_dim,
                mat.rows(),
                mat.cols()
            )));
        }
        Ok(BandedOperator { space, fiber_dim, mat })
    }

    pub fn zero(space: Arc<MetricSpace>, fiber_dim: usize) -> Self {
        let dim = space.len() * fiber_dim;
        BandedOperator { space, fiber_dim, mat: CMatrix::zeros(dim, dim) }
    }

    pub fn identity(space: Arc<MetricSpace>, fiber_dim: usize) -> Self {
        let dim = space.len() * fiber_dim;
        BandedOperator { space, fiber_dim, mat: CMatrix::identity(dim) }
    }

    /// Rank-one partial isometry `e_{xy}` sending `delta_y` to `delta_x`
    /// (fiber dimension 1).
    pub fn matrix_unit(space: Arc<MetricSpace>, x: usize, y: usize) -> Result<Self> {
        let n = space.len();
        if x >= n || y >= n {
            return Err(Error::domain(format!("matrix unit ({x},{y}) outside space of size {n}")));
        }
        let mut mat = CMatrix::zeros(n, n);
        mat.set(x, y, Complex64::ONE);
        Ok(BandedOperator { space, fiber_dim: 1, mat })
    }

    /// Coordinate projection `chi_S (x) 1_d`.
    pub fn coordinate_projection(space: Arc<MetricSpace>, fiber_dim: usize, s: &IndexSet) -> Result<Self> {
        let n = space.len();
        if let Some(bad) = s.iter().find(|&x| x >= n) {
            return Err(Error::domain(format!("subset member {bad} outside space of size {n}")));
        }
        let dim = n * fiber_dim;
        let mut mat = CMatrix::zeros(dim, dim);
        for x in s.iter() {
            for f in 0..fiber_dim {
                mat.set(x * fiber_dim + f, x * fiber_dim + f, Complex64::ONE);
            }
        }
        Ok(BandedOperator { space, fiber_dim, mat })
    }

    pub fn space(&self) -> &Arc<MetricSpace> {
        &self.space
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn points(&self) -> usize {
        self.space.len()
    }

    pub fn dim(&self) -> usize {
        self.space.len() * self.fiber_dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    /// The `d x d` block at point indices `(x, y)`.
    pub fn block(&self, x: usize, y: usize) -> CMatrix {
        let d = self.fiber_dim;
        CMatrix::from_fn(d, d, |i, j| self.mat.get(x * d + i, y * d + j))
    }

    pub fn block_is_zero(&self, x: usize, y: usize) -> bool {
        let d = self.fiber_dim;
        for i in 0..d {
            for j in 0..d {
                if self.mat.get(x * d + i, y * d + j) != Complex64::ZERO {
                    return false;
                }
            }
        }
        true
    }

    /// Spectral norm of the `(x, y)` block.
    pub fn block_norm(&self, x: usize, y: usize) -> f64 {
        if self.fiber_dim == 1 {
            self.mat.get(x, y).norm()
        } else {
            self.block(x, y).spectral_norm_small()
        }
    }

    /// `max { d(x,y) : a_{xy} != 0 }`, with 0 for the zero operator.
    pub fn propagation(&self) -> f64 {
        let n = self.space.len();
        let mut prop = 0.0_f64;
        for x in 0..n {
            for y in 0..n {
                if self.space.dist(x, y) > prop && !self.block_is_zero(x, y) {
                    prop = self.space.dist(x, y);
                }
            }
        }
        prop
    }

    /// Largest singular value within relative tolerance `tol`.
    pub fn op_norm(&self, tol: f64) -> Result<f64> {
        self.mat.op_norm(tol, OP_NORM_MAX_ITER)
    }

    pub fn op_norm_default(&self) -> Result<f64> {
        self.op_norm(op_norm_tolerance())
    }

    /// Zeroes every block with `d(x,y) > r`.
    pub fn truncate(&self, r: f64) -> Result<BandedOperator> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("truncation radius must be nonnegative, got {r}")));
        }
        let n = self.space.len();
        let d = self.fiber_dim;
        let mut mat = self.mat.clone();
        for x in 0..n {
            for y in 0..n {
                if self.space.dist(x, y) > r {
                    for i in 0..d {
                        for j in 0..d {
                            mat.set(x * d + i, y * d + j, Complex64::ZERO);
                        }
                    }
                }
            }
        }
        Ok(BandedOperator { space: self.space.clone(), fiber_dim: d, mat })
    }

    /// Upper certificate for epsilon-r-approximability: the distance from
    /// `self` to its own r-truncation. Truncation need not be the best band
    /// approximant, so this only upper-bounds the distance to the r-band.
    pub fn truncation_certificate(&self, epsilon: f64, r: f64) -> Result<ApproximabilityCertificate> {
        if !(epsilon >= 0.0) {
            return Err(Error::domain(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        let value = self.sub(&self.truncate(r)?)?.op_norm_default()?;
        Ok(ApproximabilityCertificate { epsilon, r, kind: CertificateKind::TruncationUpper, value })
    }

    /// Certificate wrapper around [`BandedOperator::separated_lower_bound`].
    /// A value above `epsilon` certifies that `self` is *not*
    /// epsilon-r-approximable.
    pub fn separated_certificate(&self, epsilon: f64, r: f64) -> Result<ApproximabilityCertificate> {
        if !(epsilon >= 0.0) {
            return Err(Error::domain(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        let value = self.separated_lower_bound(r)?;
        Ok(ApproximabilityCertificate { epsilon, r, kind: CertificateKind::SeparatedLower, value })
    }

    /// Lower bound for the distance from `self` to operators of propagation
    /// at most `r`, via separated corner norms: for every point `x` and
    /// realized radius `s`, take `A = B_s(x)` and `B = {z : d(z, A) > s+r}`;
    /// then `|chi_A a chi_B|` is a valid lower bound since `chi_A b chi_B = 0`
    /// for any `b` with propagation at most `r`.
    pub fn separated_lower_bound(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("separation radius must be nonnegative, got {r}")));
        }
        let n = self.space.len();
        let mut best = 0.0_f64;
        for x in 0..n {
            let mut d_to_a: Vec<f64> = (0..n).map(|z| self.space.dist(z, x)).collect();
            let radii: Vec<f64> = {
                let mut rs: Vec<f64> = (0..n).map(|y| self.space.dist(x, y)).collect();
                rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                rs.dedup();
                rs
            };
            let mut a_points: Vec<usize> = Vec::new();
            for &s in &radii {
                for y in 0..n {
                    if self.space.dist(x, y) == s {
                        a_points.push(y);
                        for z in 0..n {
                            d_to_a[z] = d_to_a[z].min(self.space.dist(z, y));
                        }
                    }
                }
                let b_points: Vec<usize> = (0..n).filter(|&z| d_to_a[z] > s + r).collect();
                if b_points.is_empty() {
                    break;
                }
                let corner = self.corner(&a_points, &b_points);
                best = best.max(corner.op_norm(op_norm_tolerance(), OP_NORM_MAX_ITER)?);
            }
        }
        Ok(best)
    }

    /// Submatrix with block rows `rows` and block columns `cols`.
    fn corner(&self, rows: &[usize], cols: &[usize]) -> CMatrix {
        let d = self.fiber_dim;
        CMatrix::from_fn(rows.len() * d, cols.len() * d, |i, j| {
            let (x, fi) = (rows[i / d], i % d);
            let (y, fj) = (cols[j / d], j % d);
            self.mat.get(x * d + fi, y * d + fj)
        })
    }

    /// Max block norm outside `E_k x E_k` for each set of an increasing
    /// exhaustion chain. Nonincreasing in `k`; 0 once the chain covers the
    /// support.
    pub fn ghost_profile(&self, exhaustion: &[IndexSet]) -> Result<Vec<f64>> {
        let n = self.space.len();
        for (k, set) in exhaustion.iter().enumerate() {
            if let Some(bad) = set.iter().find(|&x| x >= n) {
                return Err(Error::domain(format!("exhaustion member {bad} outside space of size {n}")));
            }
            if k > 0 && !exhaustion[k - 1].is_subset_of(set) {
                return Err(Error::domain(format!("exhaustion is not increasing at step {k}")));
            }
        }
        let mut profile = Vec::with_capacity(exhaustion.len());
        for set in exhaustion {
            let mut worst = 0.0_f64;
            for x in 0..n {
                for y in 0..n {
                    if (!set.contains(x) || !set.contains(y)) && !self.block_is_zero(x, y) {
                        worst = worst.max(self.block_norm(x, y));
                    }
                }
            }
            profile.push(worst);
        }
        Ok(profile)
    }

    pub fn add(&self, rhs: &BandedOperator) -> Result<BandedOperator> {
        self.check_compatible(rhs)?;
        Ok(BandedOperator {
            space: self.space.clone(),
            fiber_dim: self.fiber_dim,
            mat: self.mat.add(&rhs.mat),
        })
    }

    pub fn sub(&self, rhs: &BandedOperator) -> Result<BandedOperator> {
        self.check_compatible(rhs)?;
        Ok(BandedOperator {
            space: self.space.clone(),
            fiber_dim: self.fiber_dim,
            mat: self.mat.sub(&rhs.mat),
        })
    }

    pub fn multiply(&self, rhs: &BandedOperator) -> Result<BandedOperator> {
        self.check_compatible(rhs)?;
        Ok(BandedOperator {
            space: self.space.clone(),
            fiber_dim: self.fiber_dim,
            mat: self.mat.mul(&rhs.mat),
        })
    }

    pub fn adjoint(&self) -> BandedOperator {
        BandedOperator {
            space: self.space.clone(),
            fiber_dim: self.fiber_dim,
            mat: self.mat.adjoint(),
        }
    }

    pub fn scaled(&self, c: Complex64) -> BandedOperator {
        BandedOperator { space: self.space.clone(), fiber_dim: self.fiber_dim, mat: self.mat.scaled(c) }
    }

    pub fn apply_to_vector(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(format!(
                "vector of length {} applied to operator of dimension {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(self.mat.matvec(v))
    }

    fn check_compatible(&self, rhs: &BandedOperator) -> Result<()> {
        if self.fiber_dim != rhs.fiber_dim || !same_space(&self.space, &rhs.space) {
            return Err(Error::shape(
                "operators live on different spaces or fibers".to_string(),
            ));
        }
        Ok(())
    }

    /// Whether `self` is a self-adjoint idempotent within `tol`.
    pub fn projection_defect(&self) -> Result<f64> {
        let idem = self.multiply(self)?.sub(self)?.op_norm_default()?;
        let sa = self.sub(&self.adjoint())?.op_norm_default()?;
        Ok(idem.max(sa))
    }

    pub fn to_json(&self) -> String {
        let n = self.space.len();
        let d = self.fiber_dim;
        let mut blocks = Vec::new();
        for x in 0..n {
            for y in 0..n {
                if !self.block_is_zero(x, y) {
                    let mut entries = Vec::with_capacity(d * d);
                    for i in 0..d {
                        for j in 0..d {
                            let z = self.mat.get(x * d + i, y * d + j);
                            entries.push([z.re, z.im]);
                        }
                    }
                    blocks.push((x, y, entries));
                }
            }
        }
        let file = OperatorFile { space_label: self.space.label().to_string(), n, d, blocks };
        crate::report::to_json_string(&file)
    }

    pub fn from_json(text: &str, space: Arc<MetricSpace>) -> Result<Self> {
        let file: OperatorFile =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("operator JSON: {e}")))?;
        if file.space_label != space.label() || file.n != space.len() {
            return Err(Error::invalid(format!(
                "operator file is for space '{}' with {} points, got '{}' with {}",
                file.space_label,
                file.n,
                space.label(),
                space.len()
            )));
        }
        if file.d == 0 {
            return Err(Error::invalid("operator fiber dimension must be at least 1"));
        }
        let d = file.d;
        let dim = file.n * d;
        let mut mat = CMatrix::zeros(dim, dim);
        for (x, y, entries) in &file.blocks {
            if *x >= file.n || *y >= file.n {
                return Err(Error::invalid(format!("block ({x},{y}) outside {}-point space", file.n)));
            }
            if entries.len() != d * d {
                return Err(Error::invalid(format!(
                    "block ({x},{y}) must have {} entries, got {}",
                    d * d,
                    entries.len()
                )));
            }
            for i in 0..d {
                for j in 0..d {
                    let [re, im] = entries[i * d + j];
                    mat.set(x * d + i, y * d + j, Complex64::new(re, im));
                }
            }
        }
        BandedOperator::from_matrix(space, d, mat)
    }
}

#[derive(Serialize, Deserialize)]
struct OperatorFile {
    space_label: String,
    n: usize,
    d: usize,
    blocks: Vec<(usize, usize, Vec<[f64; 2]>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    TruncationUpper,
    SeparatedLower,
    SchurFamily,
}

/// Witness for epsilon-r-approximability questions. `value` is the bound
/// produced; the certificate witnesses approximability iff `value <= epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproximabilityCertificate {
    pub epsilon: f64,
    pub r: f64,
    pub kind: CertificateKind,
    pub value: f64,
}

impl ApproximabilityCertificate {
    pub fn witnesses(&self) -> bool {
        self.value <= self.epsilon
    }
}

/// Family of mutually orthogonal projections on a common space and fiber.
///
/// Two representations exist behind the same interface: an explicit member
/// list, and the family of conjugated coordinate projections
/// `u (chi_x (x) 1_d) u*` defined by a unitary `u`, whose members are
/// materialized on demand. The second form keeps memory linear in the
/// space size, which matters for the larger lemma-check experiments.
#[derive(Debug, Clone)]
pub struct ProjectionFamily {
    space: Arc<MetricSpace>,
    fiber_dim: usize,
    repr: FamilyRepr,
}

#[derive(Debug, Clone)]
enum FamilyRepr {
    Dense(Vec<BandedOperator>),
    ConjugatedBasis { u: CMatrix, unitary_defect: f64 },
}

impl ProjectionFamily {
    /// Validates every member against the projection tolerance and all
    /// pairs against the orthogonality tolerance.
    pub fn new(members: Vec<BandedOperator>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::domain("projection family must be nonempty"))?;
        let space = first.space().clone();
        let fiber_dim = first.fiber_dim();
        for (i, p) in members.iter().enumerate() {
            if !same_space(p.space(), &space) || p.fiber_dim() != fiber_dim {
                return Err(Error::shape(format!("family member {i} lives on a different space or fiber")));
            }
            let defect = p.projection_defect()?;
            if defect > PROJECTION_TOL {
                return Err(Error::domain(format!(
                    "family member {i} fails the projection tolerance: defect {defect:.3e} > {PROJECTION_TOL:.0e}"
                )));
            }
        }
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                let cross = members[i].multiply(&members[j])?.op_norm_default()?;
                if cross > PROJECTION_TOL {
                    return Err(Error::domain(format!(
                        "family members {i} and {j} are not orthogonal: |p_i p_j| = {cross:.3e}"
                    )));
                }
            }
        }
        Ok(ProjectionFamily { space, fiber_dim, repr: FamilyRepr::Dense(members) })
    }

    /// Family `{ u (chi_x (x) 1_d) u* : x in X }` for a unitary `u` on
    /// `l2(X) (x) C^d`. Projection and orthogonality tolerances are
    /// certified through the unitarity defect of `u` instead of per-pair
    /// products.
    pub fn conjugated_basis(space: Arc<MetricSpace>, fiber_dim: usize, u: CMatrix) -> Result<Self> {
        let dim = space.len() * fiber_dim;
        if u.rows() != dim || u.cols() != dim {
            return Err(Error::shape(format!(
                "unitary must be {dim}x{dim} for this space and fiber, got {}x{}",
                u.rows(),
                u.cols()
            )));
        }
        let id = CMatrix::identity(dim);
        let left = u.adjoint().mul(&u).sub(&id).op_norm(op_norm_tolerance(), OP_NORM_MAX_ITER)?;
        let right = u.mul(&u.adjoint()).sub(&id).op_norm(op_norm_tolerance(), OP_NORM_MAX_ITER)?;
        let unitary_defect = left.max(right);
        if unitary_defect > PROJECTION_TOL {
            return Err(Error::domain(format!(
                "conjugating matrix is not unitary within tolerance: defect {unitary_defect:.3e}"
            )));
        }
        Ok(ProjectionFamily { space, fiber_dim, repr: FamilyRepr::ConjugatedBasis { u, unitary_defect } })
    }

    pub fn space(&self) -> &Arc<MetricSpace> {
        &self.space
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn len(&self) -> usize {
        match &self.repr {
            FamilyRepr::Dense(members) => members.len(),
            FamilyRepr::ConjugatedBasis { .. } => self.space.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Materializes member `k` as an operator.
    pub fn member(&self, k: usize) -> BandedOperator {
        match &self.repr {
            FamilyRepr::Dense(members) => members[k].clone(),
            FamilyRepr::ConjugatedBasis { u, .. } => {
                let dim = self.space.len() * self.fiber_dim;
                let mut mat = CMatrix::zeros(dim, dim);
                self.fill_conjugated_member(u, k, &mut mat);
                BandedOperator { space: self.space.clone(), fiber_dim: self.fiber_dim, mat }
            }
        }
    }

    fn fill_conjugated_member(&self, u: &CMatrix, k: usize, out: &mut CMatrix) {
        let d = self.fiber_dim;
        let dim = self.space.len() * d;
        // member = sum over the d columns of u at point k of their outer
        // products.
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = Complex64::ZERO;
                for f in 0..d {
                    let col = k * d + f;
                    acc += u.get(i, col) * u.get(j, col).conj();
                }
                out.set(i, j, acc);
            }
        }
    }

    /// Streams every member through `visit` without keeping more than one
    /// materialized matrix alive.
    pub fn for_each_member(&self, mut visit: impl FnMut(usize, &CMatrix)) {
        match &self.repr {
            FamilyRepr::Dense(members) => {
                for (k, p) in members.iter().enumerate() {
                    visit(k, p.matrix());
                }
            }
            FamilyRepr::ConjugatedBasis { u, .. } => {
                let dim = self.space.len() * self.fiber_dim;
                let mut scratch = CMatrix::zeros(dim, dim);
                for k in 0..self.space.len() {
                    self.fill_conjugated_member(u, k, &mut scratch);
                    visit(k, &scratch);
                }
            }
        }
    }

    /// Column `col` of member `k`, i.e. `p_k` applied to a basis vector.
    pub fn member_column(&self, k: usize, col: usize) -> Vec<Complex64> {
        match &self.repr {
            FamilyRepr::Dense(members) => members[k].matrix().column(col),
            FamilyRepr::ConjugatedBasis { u, .. } => {
                let d = self.fiber_dim;
                let dim = self.space.len() * d;
                let mut out = vec![Complex64::ZERO; dim];
                for f in 0..d {
                    let c = k * d + f;
                    let w = u.get(col, c).conj();
                    if w != Complex64::ZERO {
                        for (i, o) in out.iter_mut().enumerate() {
                            *o += u.get(i, c) * w;
                        }
                    }
                }
                out
            }
        }
    }

    /// `| sum_k p_k - 1 |`. For conjugated families this equals the
    /// unitarity defect of `u u*`, which was certified at construction.
    pub fn sum_defect(&self) -> Result<f64> {
        match &self.repr {
            FamilyRepr::Dense(members) => {
                let dim = self.space.len() * self.fiber_dim;
                let mut sum = CMatrix::zeros(dim, dim);
                for p in members {
                    sum = sum.add(p.matrix());
                }
                sum.sub(&CMatrix::identity(dim)).op_norm(op_norm_tolerance(), OP_NORM_MAX_ITER)
            }
            FamilyRepr::ConjugatedBasis { unitary_defect, .. } => Ok(*unitary_defect),
        }
    }

    /// Entrywise Schur majorant `S_{xy} = sum_k |(p_k)_{xy}|` shared by all
    /// tail-bound evaluations.
    fn schur_majorant(&self) -> Vec<f64> {
        let n = self.space.len();
        let d = self.fiber_dim;
        let mut s = vec![0.0_f64; n * n];
        self.for_each_member(|_, mat| {
            for x in 0..n {
                for y in 0..n {
                    let bn = if d == 1 {
                        mat.get(x, y).norm()
                    } else {
                        let block = CMatrix::from_fn(d, d, |i, j| mat.get(x * d + i, y * d + j));
                        block.spectral_norm_small()
                    };
                    s[x * n + y] += bn;
                }
            }
        });
        s
    }

    fn tail_from_majorant(&self, s: &[f64], r: f64) -> f64 {
        let n = self.space.len();
        let mut worst_row = 0.0_f64;
        let mut col_sums = vec![0.0_f64; n];
        for x in 0..n {
            let mut row_sum = 0.0;
            for y in 0..n {
                if self.space.dist(x, y) > r {
                    row_sum += s[x * n + y];
                    col_sums[y] += s[x * n + y];
                }
            }
            worst_row = worst_row.max(row_sum);
        }
        let worst_col = col_sums.into_iter().fold(0.0, f64::max);
        worst_row.max(worst_col)
    }

    /// Uniform tail bound: every `p_A = sum_{k in A} p_k` satisfies
    /// `|p_A - truncate(p_A, r)| <= family_tail_bound(r)`, by the Schur
    /// test applied to the far part of the entrywise majorant. The bound
    /// holds for arbitrary coefficient combinations with `|c_k| <= 1`, so
    /// it also covers signed half-differences.
    pub fn family_tail_bound(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("tail radius must be nonnegative, got {r}")));
        }
        Ok(self.tail_from_majorant(&self.schur_majorant(), r))
    }

    /// Certificate wrapper around [`ProjectionFamily::family_tail_bound`]:
    /// when it witnesses, every subfamily sum is epsilon-r-approximable
    /// (by its own truncation).
    pub fn tail_certificate(&self, epsilon: f64, r: f64) -> Result<ApproximabilityCertificate> {
        if !(epsilon >= 0.0) {
            return Err(Error::domain(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        let value = self.family_tail_bound(r)?;
        Ok(ApproximabilityCertificate { epsilon, r, kind: CertificateKind::SchurFamily, value })
    }

    /// Tail bound at several radii with the majorant computed once.
    pub fn tail_profile(&self, radii: &[f64]) -> Result<Vec<f64>> {
        if let Some(bad) = radii.iter().find(|&&r| !(r >= 0.0)) {
            return Err(Error::domain(format!("tail radius must be nonnegative, got {bad}")));
        }
        let s = self.schur_majorant();
        Ok(radii.iter().map(|&r| self.tail_from_majorant(&s, r)).collect())
    }

    /// `|p_k delta_x|` for every member `k` and point `x` (fiber dimension
    /// 1 only), as a `len() x n` row-major matrix.
    pub fn point_coefficients(&self) -> Result<Vec<f64>> {
        if self.fiber_dim != 1 {
            return Err(Error::domain(
                "point coefficients are defined for fiber dimension 1; use the stable pipeline for d > 1",
            ));
        }
        let n = self.space.len();
        let mut c = vec![0.0_f64; self.len() * n];
        self.for_each_member(|k, mat| {
            for x in 0..n {
                let mut sq = 0.0;
                for i in 0..n {
                    sq += mat.get(i, x).norm_sqr();
                }
                c[k * n + x] = sq.sqrt();
            }
        });
        Ok(c)
    }

    /// Sum of the members indexed by `a`, as an operator.
    pub fn partial_sum(&self, a: &IndexSet) -> Result<BandedOperator> {
        if let Some(bad) = a.iter().find(|&k| k >= self.len()) {
            return Err(Error::domain(format!("family index {bad} out of range")));
        }
        let dim = self.space.len() * self.fiber_dim;
        let mut sum = CMatrix::zeros(dim, dim);
        self.for_each_member(|k, mat| {
            if a.contains(k) {
                sum = sum.add(mat);
            }
        });
        Ok(BandedOperator { space: self.space.clone(), fiber_dim: self.fiber_dim, mat: sum })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use crate::space::{generate, SpaceKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn p5() -> Arc<MetricSpace> {
        generate(&SpaceKind::Path { n: 5 }).unwrap()
    }

    fn random_banded(space: &Arc<MetricSpace>, prop: f64, seed: u64) -> BandedOperator {
        let n = space.len();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mat = CMatrix::from_fn(n, n, |x, y| {
            if space.dist(x, y) <= prop {
                c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            } else {
                Complex64::ZERO
            }
        });
        BandedOperator::from_matrix(space.clone(), 1, mat).unwrap()
    }

    fn random_hermitian_banded(space: &Arc<MetricSpace>, prop: f64, seed: u64, norm_cap: f64) -> BandedOperator {
        let a = random_banded(space, prop, seed);
        let h = a.add(&a.adjoint()).unwrap();
        let scale = norm_cap / h.op_norm_default().unwrap().max(1e-12);
        h.scaled(c(scale, 0.0))
    }

    #[test]
    fn propagation_examples() {
        let s = p5();
        assert_eq!(BandedOperator::identity(s.clone(), 1).propagation(), 0.0);
        assert_eq!(BandedOperator::matrix_unit(s.clone(), 0, 3).unwrap().propagation(), 3.0);
        let tri = random_banded(&s, 1.0, 1);
        assert_eq!(tri.propagation(), 1.0);
        assert_eq!(BandedOperator::zero(s, 1).propagation(), 0.0);
    }

    #[test]
    fn op_norm_examples() {
        let s = p5();
        let id = BandedOperator::identity(s.clone(), 1);
        assert!((id.op_norm_default().unwrap() - 1.0).abs() < 1e-10);
        let e = BandedOperator::matrix_unit(s, 1, 3).unwrap().scaled(c(2.0, 0.0));
        assert!((e.op_norm_default().unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn truncate_examples() {
        let s = p5();
        let a = random_banded(&s, 1.0, 2);
        assert_eq!(a.truncate(2.0).unwrap(), a);
        let diag = a.truncate(0.0).unwrap();
        assert_eq!(diag.propagation(), 0.0);
        for x in 0..5 {
            assert_eq!(diag.matrix().get(x, x), a.matrix().get(x, x));
        }
        let e = BandedOperator::matrix_unit(s.clone(), 0, 3).unwrap();
        assert_eq!(e.truncate(2.0).unwrap(), BandedOperator::zero(s, 1));
    }

    #[test]
    fn truncation_certificate_examples() {
        let s = p5();
        let a = random_banded(&s, 1.0, 3);
        let cert = a.truncation_certificate(0.0, 1.0).unwrap();
        assert_eq!(cert.value, 0.0);
        assert!(cert.witnesses());

        let e = BandedOperator::matrix_unit(s.clone(), 0, 3).unwrap();
        let sum = e.add(&BandedOperator::identity(s.clone(), 1)).unwrap();
        let cert = sum.truncation_certificate(0.5, 2.0).unwrap();
        assert!((cert.value - 1.0).abs() < 1e-9);
        assert!(!cert.witnesses());

        // exp(iH) truncation error decreases with the band radius
        let h = random_hermitian_banded(&s, 1.0, 4, 0.8);
        let u = BandedOperator::from_matrix(s, 1, expm(&h.matrix().scaled(c(0.0, 1.0)))).unwrap();
        let mut last = f64::INFINITY;
        for r in 0..5 {
            let v = u.truncation_certificate(0.0, r as f64).unwrap().value;
            assert!(v <= last + 1e-12, "truncation error increased at r={r}");
            last = v;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn separated_lower_bound_examples() {
        let s = p5();
        let a = random_banded(&s, 1.0, 5);
        assert_eq!(a.separated_lower_bound(1.0).unwrap(), 0.0);
        let e = BandedOperator::matrix_unit(s.clone(), 0, 3).unwrap();
        assert!((e.separated_lower_bound(2.0).unwrap() - 1.0).abs() < 1e-9);
        let id = BandedOperator::identity(s, 1);
        assert_eq!(id.separated_lower_bound(0.0).unwrap(), 0.0);

        // a separated certificate above epsilon rules approximability out
        let cert = e.separated_certificate(0.5, 2.0).unwrap();
        assert_eq!(cert.kind, CertificateKind::SeparatedLower);
        assert!(!cert.witnesses());
    }

    #[test]
    fn sandwich_lower_below_truncation_upper() {
        let s = generate(&SpaceKind::Cycle { n: 12 }).unwrap();
        for seed in 0..8u64 {
            let a = random_banded(&s, 3.0, 100 + seed);
            for r in [0.0, 1.0, 2.0] {
                let lo = a.separated_lower_bound(r).unwrap();
                let hi = a.truncation_certificate(0.0, r).unwrap().value;
                assert!(lo <= hi + 1e-9, "sandwich violated: {lo} > {hi} at r={r}");
            }
        }
    }

    #[test]
    fn ghost_profile_examples() {
        let s = p5();
        let n = s.len();
        let ex: Vec<IndexSet> = (1..=n).map(|k| IndexSet::new((0..k).collect(), n).unwrap()).collect();

        let corner = BandedOperator::matrix_unit(s.clone(), 0, 0).unwrap();
        let profile = corner.ghost_profile(&ex).unwrap();
        assert!(profile.iter().all(|&v| v == 0.0));

        let flat = BandedOperator::from_matrix(
            s.clone(),
            1,
            CMatrix::from_fn(n, n, |_, _| c(1.0 / n as f64, 0.0)),
        )
        .unwrap();
        let profile = flat.ghost_profile(&ex).unwrap();
        for (k, &v) in profile.iter().enumerate() {
            if k + 1 < n {
                assert!((v - 1.0 / n as f64).abs() < 1e-15);
            } else {
                assert_eq!(v, 0.0);
            }
        }

        let id = BandedOperator::identity(s.clone(), 1);
        let profile = id.ghost_profile(&ex).unwrap();
        assert_eq!(profile[0], 1.0);
        assert_eq!(profile[n - 1], 0.0);

        // non-monotone chains rejected
        let bad = vec![
            IndexSet::new(vec![0, 1], n).unwrap(),
            IndexSet::new(vec![2], n).unwrap(),
        ];
        assert!(id.ghost_profile(&bad).is_err());
    }

    #[test]
    fn algebra_examples() {
        let s = p5();
        let exy = BandedOperator::matrix_unit(s.clone(), 0, 2).unwrap();
        let eyz = BandedOperator::matrix_unit(s.clone(), 2, 4).unwrap();
        let exz = BandedOperator::matrix_unit(s.clone(), 0, 4).unwrap();
        assert_eq!(exy.multiply(&eyz).unwrap(), exz);

        let a = random_banded(&s, 2.0, 6);
        assert_eq!(a.add(&BandedOperator::zero(s.clone(), 1)).unwrap(), a);

        let b = random_banded(&s, 2.0, 7);
        let lhs = a.multiply(&b).unwrap().adjoint();
        let rhs = b.adjoint().multiply(&a.adjoint()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().matrix().max_abs() < 1e-12);

        let other = generate(&SpaceKind::Path { n: 4 }).unwrap();
        let mismatched = BandedOperator::identity(other, 1);
        assert!(a.add(&mismatched).is_err());
    }

    #[test]
    fn propagation_subadditivity() {
        let s = generate(&SpaceKind::Cycle { n: 10 }).unwrap();
        for seed in 0..10u64 {
            let a = random_banded(&s, 1.0, 200 + seed);
            let b = random_banded(&s, 2.0, 300 + seed);
            let sum_prop = a.add(&b).unwrap().propagation();
            assert!(sum_prop <= a.propagation().max(b.propagation()) + 1e-12);
            let prod_prop = a.multiply(&b).unwrap().propagation();
            assert!(prod_prop <= a.propagation() + b.propagation() + 1e-12);
        }
    }

    #[test]
    fn op_norm_submultiplicative_and_unitarily_invariant() {
        let s = generate(&SpaceKind::Cycle { n: 8 }).unwrap();
        let h = random_hermitian_banded(&s, 2.0, 8, 1.3);
        let u = expm(&h.matrix().scaled(c(0.0, 1.0)));
        for seed in 0..6u64 {
            let a = random_banded(&s, 2.0, 400 + seed);
            let b = random_banded(&s, 2.0, 500 + seed);
            let na = a.op_norm_default().unwrap();
            let nb = b.op_norm_default().unwrap();
            let nab = a.multiply(&b).unwrap().op_norm_default().unwrap();
            assert!(nab <= na * nb * (1.0 + 1e-8));
            let conj = u.mul(a.matrix()).mul(&u.adjoint());
            let nconj = conj.op_norm(OP_NORM_TOL, OP_NORM_MAX_ITER).unwrap();
            assert!((nconj - na).abs() <= 1e-8 * na.max(1.0));
        }
    }

    #[test]
    fn family_tail_bound_examples() {
        let s = p5();
        let n = s.len();
        // coordinate projections: zero tail at any radius
        let members: Vec<BandedOperator> = (0..n)
            .map(|x| BandedOperator::matrix_unit(s.clone(), x, x).unwrap())
            .collect();
        let fam = ProjectionFamily::new(members).unwrap();
        assert_eq!(fam.family_tail_bound(0.0).unwrap(), 0.0);
        assert_eq!(fam.len(), n);
        assert!(fam.sum_defect().unwrap() < 1e-12);

        // conjugation by a propagation-1 unitary: zero tail for r >= 2
        let mut u = CMatrix::identity(n);
        let (cth, sth) = (0.6_f64, 0.8_f64);
        u.set(0, 0, c(cth, 0.0));
        u.set(0, 1, c(sth, 0.0));
        u.set(1, 0, c(-sth, 0.0));
        u.set(1, 1, c(cth, 0.0));
        let fam = ProjectionFamily::conjugated_basis(s.clone(), 1, u).unwrap();
        assert_eq!(fam.family_tail_bound(2.0).unwrap(), 0.0);
        assert!(fam.family_tail_bound(0.0).unwrap() > 0.0);

        // exp(iH) conjugates: tail decays in r
        let h = random_hermitian_banded(&s, 1.0, 9, 0.6);
        let u = expm(&h.matrix().scaled(c(0.0, 1.0)));
        let fam = ProjectionFamily::conjugated_basis(s.clone(), 1, u).unwrap();
        let tails = fam.tail_profile(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        for w in tails.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert_eq!(tails[4], 0.0); // diameter of P5 is 4
    }

    #[test]
    fn family_tail_bound_sound_for_subsets() {
        let s = generate(&SpaceKind::Path { n: 10 }).unwrap();
        let h = random_hermitian_banded(&s, 1.0, 10, 0.5);
        let u = expm(&h.matrix().scaled(c(0.0, 1.0)));
        let fam = ProjectionFamily::conjugated_basis(s.clone(), 1, u).unwrap();
        let n = fam.len();
        for r in [0.0, 1.0, 2.0] {
            let bound = fam.family_tail_bound(r).unwrap();
            // exhaustive over all subsets of a 10-member family
            for mask in 0u32..(1 << n) {
                let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                let a = IndexSet::new(members, n).unwrap();
                let pa = fam.partial_sum(&a).unwrap();
                let err = pa.sub(&pa.truncate(r).unwrap()).unwrap().op_norm_default().unwrap();
                assert!(err <= bound + 1e-9, "subset {mask:b} violates tail bound at r={r}");
            }
        }
    }

    #[test]
    fn family_tail_bound_sound_on_sampled_subsets() {
        let s = generate(&SpaceKind::Path { n: 20 }).unwrap();
        let h = random_hermitian_banded(&s, 1.0, 17, 0.4);
        let u = expm(&h.matrix().scaled(c(0.0, 1.0)));
        let fam = ProjectionFamily::conjugated_basis(s.clone(), 1, u).unwrap();
        let n = fam.len();
        let mut rng = ChaCha12Rng::seed_from_u64(1717);
        for r in [1.0, 2.0] {
            let bound = fam.family_tail_bound(r).unwrap();
            let cert = fam.tail_certificate(bound + 1e-12, r).unwrap();
            assert_eq!(cert.kind, CertificateKind::SchurFamily);
            assert!(cert.witnesses());
            for _ in 0..100 {
                let members: Vec<usize> = (0..n).filter(|_| rng.random::<bool>()).collect();
                let a = IndexSet::new(members, n).unwrap();
                let pa = fam.partial_sum(&a).unwrap();
                let err = pa.sub(&pa.truncate(r).unwrap()).unwrap().op_norm_default().unwrap();
                assert!(err <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn point_coefficients_match_direct_columns() {
        let s = p5();
        let h = random_hermitian_banded(&s, 1.0, 11, 0.4);
        let u = expm(&h.matrix().scaled(c(0.0, 1.0)));
        let fam = ProjectionFamily::conjugated_basis(s.clone(), 1, u).unwrap();
        let coeffs = fam.point_coefficients().unwrap();
        for k in 0..fam.len() {
            let p = fam.member(k);
            for x in 0..5 {
                let mut delta = vec![Complex64::ZERO; 5];
                delta[x] = Complex64::ONE;
                let norm = crate::linalg::vec_norm(&p.apply_to_vector(&delta).unwrap());
                assert!((coeffs[k * 5 + x] - norm).abs() < 1e-12);
                let col = fam.member_column(k, x);
                assert!((crate::linalg::vec_norm(&col) - norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn family_rejects_non_projections() {
        let s = p5();
        let almost = BandedOperator::matrix_unit(s.clone(), 0, 0).unwrap().scaled(c(1.0 + 1e-6, 0.0));
        assert!(ProjectionFamily::new(vec![almost]).is_err());
        let overlapping = vec![
            BandedOperator::matrix_unit(s.clone(), 0, 0).unwrap(),
            BandedOperator::matrix_unit(s.clone(), 0, 0).unwrap(),
        ];
        assert!(ProjectionFamily::new(overlapping).is_err());
    }

    #[test]
    fn operator_json_round_trip() {
        let s = p5();
        let a = random_banded(&s, 2.0, 12);
        let back = BandedOperator::from_json(&a.to_json(), s.clone()).unwrap();
        assert_eq!(a, back);
    }
}
