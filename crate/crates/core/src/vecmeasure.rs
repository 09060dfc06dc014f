//! Rounding a point of the convex hull of an atomic vector measure's range
//! to the measure of an actual subset.
//!
//! The convex hull of the range is the zonotope `{ sum t_i atom_i : t in
//! [0,1]^n }`, so membership is a linear feasibility problem. Rounding runs
//! in three stages: solve for fractional weights, pivot kernel directions
//! of the atom matrix until at most `m` weights are fractional (`m` the
//! ambient dimension), then complete the few fractional weights to 0/1.
//! The all-zeros completion already achieves the subset-sum error bound
//! `max { |mu(C)| : |C| <= m }`, since the fractional remainder lies in the
//! sub-zonotope spanned by at most `m` atoms; enumeration of completions
//! can only improve on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::IndexSet;

/// Weights this close to 0 or 1 are snapped to the bound and no longer
/// count as fractional.
pub const FRACTIONAL_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureNorm {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "linf")]
    Linf,
}

impl MeasureNorm {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            MeasureNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            MeasureNorm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            MeasureNorm::Linf => v.iter().map(|x| x.abs()).fold(0.0, f64::max),
        }
    }
}

/// Finitely many atoms in R^m; `mu(A) = sum of atoms over A`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicVectorMeasure {
    dim: usize,
    norm: MeasureNorm,
    atoms: Vec<Vec<f64>>,
}

impl AtomicVectorMeasure {
    pub fn new(dim: usize, atoms: Vec<Vec<f64>>, norm: MeasureNorm) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("measure dimension must be at least 1"));
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.len() != dim {
                return Err(Error::domain(format!(
                    "atom {i} has dimension {}, expected {dim}",
                    a.len()
                )));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::domain(format!("atom {i} has a non-finite entry")));
            }
        }
        Ok(AtomicVectorMeasure { dim, norm, atoms })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> MeasureNorm {
        self.norm
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i]
    }

    pub fn norm_of(&self, v: &[f64]) -> f64 {
        self.norm.eval(v)
    }

    pub fn measure_of(&self, subset: &IndexSet) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in subset.iter() {
            for (o, x) in out.iter_mut().zip(&self.atoms[i]) {
                *o += x;
            }
        }
        out
    }

    pub fn weighted_sum(&self, t: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (ti, atom) in t.iter().zip(&self.atoms) {
            for (o, x) in out.iter_mut().zip(atom) {
                *o += ti * x;
            }
        }
        out
    }

    pub fn max_atom_norm(&self) -> f64 {
        self.atoms.iter().map(|a| self.norm.eval(a)).fold(0.0, f64::max)
    }

    /// Sub-measure with the atoms indexed by `subset`, in subset order.
    pub fn restricted(&self, subset: &IndexSet) -> Result<Self> {
        if let Some(bad) = subset.iter().find(|&i| i >= self.len()) {
            return Err(Error::domain(format!("atom index {bad} out of range")));
        }
        let atoms = subset.iter().map(|i| self.atoms[i].clone()).collect();
        Ok(AtomicVectorMeasure { dim: self.dim, norm: self.norm, atoms })
    }

    pub fn to_json(&self) -> String {
        let file = MeasureFile { m: self.dim, norm: self.norm, atoms: self.atoms.clone() };
        crate::report::to_json_string(&file)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeasureFile =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("measure JSON: {e}")))?;
        AtomicVectorMeasure::new(file.m, file.atoms, file.norm)
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    m: usize,
    norm: MeasureNorm,
    atoms: Vec<Vec<f64>>,
}

/// Outcome of the zonotope membership test.
#[derive(Debug, Clone)]
pub enum HullMembership {
    /// Weights `t in [0,1]^n` reproducing the target within 1e-9.
    Inside(Vec<f64>),
    /// Separating functional: `functional . v` exceeds the zonotope's
    /// support function `sum_i max(0, functional . atom_i)` by `margin`.
    NotInHull { functional: Vec<f64>, margin: f64 },
}

/// One kernel pivot: how many weights were fractional before, the step
/// taken along the kernel direction, and which coordinates snapped to a
/// bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PivotStep {
    pub fractional_before: usize,
    pub step: f64,
    pub snapped: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundingResult {
    pub subset: IndexSet,
    pub error: f64,
    /// `max { |mu(C)| : |C| <= m }` when `bound_is_exact`, else the weaker
    /// `m * max_i |atom_i|`.
    pub bound: f64,
    pub bound_is_exact: bool,
    pub fractional_trace: Vec<PivotStep>,
    pub fractional_after: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct RoundingConfig {
    /// Completions are enumerated exhaustively while the fractional count
    /// stays at or below this; beyond it only the all-zeros and greedy
    /// completions are tried (the guarantee is unaffected).
    pub max_enumerated_fractional: usize,
    /// Node budget for the exact small-subset bound enumeration.
    pub bound_enumeration_budget: u128,
}

impl Default for RoundingConfig {
    fn default() -> Self {
        RoundingConfig { max_enumerated_fractional: 20, bound_enumeration_budget: 2_000_000 }
    }
}

/// Linear feasibility: is `v` in the zonotope `{ A t : t in [0,1]^n }`?
///
/// Solved by a bounded-variable phase-1 simplex. On infeasibility the
/// phase-1 duals provide the separating functional.
pub fn hull_membership(mu: &AtomicVectorMeasure, v: &[f64]) -> Result<HullMembership> {
    if v.len() != mu.dim() {
        return Err(Error::domain(format!(
            "target has dimension {}, measure has {}",
            v.len(),
            mu.dim()
        )));
    }
    if mu.is_empty() {
        let resid = mu.norm_of(v);
        if resid <= 1e-9 {
            return Ok(HullMembership::Inside(Vec::new()));
        }
        let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let functional: Vec<f64> = v.iter().map(|x| x / scale).collect();
        let margin = functional.iter().zip(v).map(|(f, x)| f * x).sum();
        return Ok(HullMembership::NotInHull { functional, margin });
    }
    let mut simplex = BoundedSimplex::new(mu, v);
    simplex.solve()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum VarState {
    Lower,
    Upper,
    Basic,
}

/// Phase-1 simplex for `A t + diag(sigma) s = v`, `t in [0,1]^n`, `s >= 0`,
/// minimizing `sum s`. Rows are pre-scaled by `sigma` so the artificial
/// block starts as the identity with a nonnegative right side.
struct BoundedSimplex {
    m: usize,
    n: usize,
    tableau: Vec<f64>, // m x (n + m)
    rhs: Vec<f64>,     // m, transformed |v|
    basis: Vec<usize>,
    state: Vec<VarState>,
    sigma: Vec<f64>,
    atoms_dot: Vec<Vec<f64>>, // original atom columns for verification
    target: Vec<f64>,
    norm: MeasureNorm,
}

const PRICE_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-10;

impl BoundedSimplex {
    fn new(mu: &AtomicVectorMeasure, v: &[f64]) -> Self {
        let m = mu.dim();
        let n = mu.len();
        let sigma: Vec<f64> = v.iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }).collect();
        let mut tableau = vec![0.0; m * (n + m)];
        for i in 0..m {
            for j in 0..n {
                tableau[i * (n + m) + j] = sigma[i] * mu.atom(j)[i];
            }
            tableau[i * (n + m) + n + i] = 1.0;
        }
        let rhs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        let basis: Vec<usize> = (n..n + m).collect();
        let mut state = vec![VarState::Lower; n + m];
        for s in state.iter_mut().skip(n) {
            *s = VarState::Basic;
        }
        BoundedSimplex {
            m,
            n,
            tableau,
            rhs,
            basis,
            state,
            sigma,
            atoms_dot: (0..n).map(|j| mu.atom(j).to_vec()).collect(),
            target: v.to_vec(),
            norm: mu.norm(),
        }
    }

    #[inline]
    fn t(&self, i: usize, j: usize) -> f64 {
        self.tableau[i * (self.n + self.m) + j]
    }

    fn basic_values(&self) -> Vec<f64> {
        let mut b = self.rhs.clone();
        for j in 0..self.n {
            if self.state[j] == VarState::Upper {
                for (i, bi) in b.iter_mut().enumerate() {
                    *bi -= self.t(i, j);
                }
            }
        }
        b
    }

    fn solve(&mut self) -> Result<HullMembership> {
        let cols = self.n + self.m;
        let max_iter = 60 * cols + 2000;
        let mut bland = false;
        let mut stalled = 0usize;
        let mut last_obj = f64::INFINITY;
        for _ in 0..max_iter {
            let bvals = self.basic_values();
            let obj: f64 = self
                .basis
                .iter()
                .zip(&bvals)
                .filter(|(&b, _)| b >= self.n)
                .map(|(_, &v)| v)
                .sum();
            if obj <= FEAS_TOL {
                return self.extract_point();
            }
            if obj < last_obj - 1e-13 {
                stalled = 0;
            } else {
                stalled += 1;
                if stalled > 2 * cols + 20 {
                    bland = true;
                }
            }
            last_obj = obj;

            // reduced costs relative to the phase-1 objective
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.state[j] == VarState::Basic {
                    continue;
                }
                let mut d = 0.0;
                for (i, &b) in self.basis.iter().enumerate() {
                    if b >= self.n {
                        d -= self.t(i, j);
                    }
                }
                let score = match self.state[j] {
                    VarState::Lower if d < -PRICE_TOL => -d,
                    VarState::Upper if d > PRICE_TOL => d,
                    _ => continue,
                };
                match entering {
                    _ if bland => {
                        entering = Some((j, score));
                        break;
                    }
                    Some((_, best)) if score <= best => {}
                    _ => entering = Some((j, score)),
                }
            }
            let Some((j, _)) = entering else {
                return self.extract_infeasibility();
            };

            let dir = if self.state[j] == VarState::Lower { 1.0 } else { -1.0 };
            // ratio test, pass 1: the smallest blocking step. The entering
            // variable's own range [0,1] always blocks at 1.
            let mut limits: Vec<(usize, f64, bool)> = Vec::new(); // (row, limit, hits_upper)
            let mut theta = 1.0_f64;
            for i in 0..self.m {
                let alpha = dir * self.t(i, j);
                if alpha > PIVOT_TOL {
                    let limit = (bvals[i] / alpha).max(0.0);
                    limits.push((i, limit, false));
                    theta = theta.min(limit);
                } else if alpha < -PIVOT_TOL && self.basis[i] < self.n {
                    let limit = ((1.0 - bvals[i]) / (-alpha)).max(0.0);
                    limits.push((i, limit, true));
                    theta = theta.min(limit);
                }
            }
            // pass 2: among blockers at the minimum step prefer rows whose
            // basic variable is artificial (this drives artificials out),
            // then larger pivot magnitude, then smaller row index; a bound
            // flip only happens when no row blocks at theta.
            let tie = 1e-12 * (1.0 + theta);
            let mut leaving: Option<(usize, bool)> = None;
            let mut best_key = (false, f64::NEG_INFINITY);
            for &(i, limit, hits_upper) in &limits {
                if limit <= theta + tie {
                    let key = (self.basis[i] >= self.n, self.t(i, j).abs());
                    let better = match leaving {
                        None => true,
                        Some(_) => {
                            key.0 && !best_key.0 || (key.0 == best_key.0 && key.1 > best_key.1)
                        }
                    };
                    if better {
                        leaving = Some((i, hits_upper));
                        best_key = key;
                    }
                }
            }
            match leaving {
                None => {
                    // entering variable flips to its other bound
                    self.state[j] = if self.state[j] == VarState::Lower {
                        VarState::Upper
                    } else {
                        VarState::Lower
                    };
                }
                Some((row, hits_upper)) => {
                    let leaving_col = self.basis[row];
                    self.pivot(row, j)?;
                    self.basis[row] = j;
                    self.state[j] = VarState::Basic;
                    self.state[leaving_col] =
                        if hits_upper { VarState::Upper } else { VarState::Lower };
                }
            }
        }
        Err(Error::internal(
            "bounded simplex exceeded its iteration budget (cycling guard)".to_string(),
        ))
    }

    fn pivot(&mut self, row: usize, col: usize) -> Result<()> {
        let cols = self.n + self.m;
        let piv = self.t(row, col);
        if piv.abs() <= PIVOT_TOL {
            return Err(Error::internal("simplex pivot element vanished"));
        }
        let inv = 1.0 / piv;
        for j in 0..cols {
            self.tableau[row * cols + j] *= inv;
        }
        self.rhs[row] *= inv;
        for i in 0..self.m {
            if i == row {
                continue;
            }
            let factor = self.t(i, col);
            if factor == 0.0 {
                continue;
            }
            for j in 0..cols {
                let delta = factor * self.tableau[row * cols + j];
                self.tableau[i * cols + j] -= delta;
            }
            self.rhs[i] -= factor * self.rhs[row];
        }
        Ok(())
    }

    fn extract_point(&self) -> Result<HullMembership> {
        let bvals = self.basic_values();
        let mut t = vec![0.0_f64; self.n];
        for j in 0..self.n {
            if self.state[j] == VarState::Upper {
                t[j] = 1.0;
            }
        }
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n {
                t[b] = bvals[i].clamp(0.0, 1.0);
            }
        }
        let mut sum = vec![0.0_f64; self.m];
        for (j, atom) in self.atoms_dot.iter().enumerate() {
            for (s, x) in sum.iter_mut().zip(atom) {
                *s += t[j] * x;
            }
        }
        let diff: Vec<f64> = sum.iter().zip(&self.target).map(|(s, x)| s - x).collect();
        let resid = self.norm.eval(&diff);
        if resid > 1e-9 {
            return Err(Error::internal(format!(
                "simplex declared feasibility but the residual is {resid:.3e}"
            )));
        }
        Ok(HullMembership::Inside(t))
    }

    fn extract_infeasibility(&self) -> Result<HullMembership> {
        // y' = c_B B^{-1} read off the artificial block; fold the row
        // scaling back in to get the functional on the original data.
        let mut phi = vec![0.0_f64; self.m];
        for (k, p) in phi.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &b) in self.basis.iter().enumerate() {
                if b >= self.n {
                    acc += self.t(i, self.n + k);
                }
            }
            *p = acc * self.sigma[k];
        }
        let scale = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if scale > 0.0 {
            for p in phi.iter_mut() {
                *p /= scale;
            }
        }
        let support: f64 = self
            .atoms_dot
            .iter()
            .map(|a| {
                let d: f64 = a.iter().zip(&phi).map(|(x, p)| x * p).sum();
                d.max(0.0)
            })
            .sum();
        let value: f64 = self.target.iter().zip(&phi).map(|(x, p)| x * p).sum();
        let margin = value - support;
        if !(margin > 0.0) {
            return Err(Error::internal(format!(
                "phase-1 optimum is positive but the dual certificate does not separate (margin {margin:.3e})"
            )));
        }
        Ok(HullMembership::NotInHull { functional: phi, margin })
    }
}

/// Kernel pivoting: reduces the number of fractional weights to at most
/// `m` while preserving the weighted sum exactly (the step directions lie
/// in the kernel of the atom matrix).
pub fn pivot_to_sparse(mu: &AtomicVectorMeasure, t: &[f64]) -> Result<(Vec<f64>, Vec<PivotStep>)> {
    let n = mu.len();
    let m = mu.dim();
    if t.len() != n {
        return Err(Error::domain(format!("weight vector has length {}, expected {n}", t.len())));
    }
    if let Some(bad) = t.iter().find(|&&x| !(-1e-9..=1.0 + 1e-9).contains(&x)) {
        return Err(Error::domain(format!("weight {bad} outside [0,1]")));
    }
    let mut t: Vec<f64> = t.iter().map(|&x| x.clamp(0.0, 1.0)).collect();
    snap(&mut t);
    let mut trace = Vec::new();
    loop {
        let frac: Vec<usize> = fractional_indices(&t);
        if frac.len() <= m {
            return Ok((t, trace));
        }
        let e: Vec<usize> = frac[..m + 1].to_vec();
        let h = kernel_vector(mu, &e)?;
        // maximal feasible step along +h
        let mut alpha = f64::INFINITY;
        for (idx, &i) in e.iter().enumerate() {
            if h[idx] > 0.0 {
                alpha = alpha.min((1.0 - t[i]) / h[idx]);
            } else if h[idx] < 0.0 {
                alpha = alpha.min(t[i] / (-h[idx]));
            }
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::internal(format!(
                "kernel pivot produced a non-positive step ({alpha}); rank-nullity guarantees room to move"
            )));
        }
        for (idx, &i) in e.iter().enumerate() {
            t[i] = (t[i] + alpha * h[idx]).clamp(0.0, 1.0);
        }
        snap(&mut t);
        let snapped: Vec<usize> = e.iter().copied().filter(|&i| !is_fractional(t[i])).collect();
        if snapped.is_empty() {
            return Err(Error::internal(
                "kernel pivot failed to land any coordinate on a bound".to_string(),
            ));
        }
        trace.push(PivotStep { fractional_before: frac.len(), step: alpha, snapped });
    }
}

fn snap(t: &mut [f64]) {
    for x in t.iter_mut() {
        if *x < FRACTIONAL_SNAP {
            *x = 0.0;
        } else if *x > 1.0 - FRACTIONAL_SNAP {
            *x = 1.0;
        }
    }
}

fn is_fractional(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

fn fractional_indices(t: &[f64]) -> Vec<usize> {
    t.iter().enumerate().filter(|(_, &x)| is_fractional(x)).map(|(i, _)| i).collect()
}

/// Nonzero kernel vector of the `m x |e|` submatrix of atom columns, by
/// Gaussian elimination with partial pivoting. The first pivotless column
/// is the free variable, set to 1.
fn kernel_vector(mu: &AtomicVectorMeasure, e: &[usize]) -> Result<Vec<f64>> {
    let m = mu.dim();
    let k = e.len();
    let mut a = vec![0.0_f64; m * k];
    for (col, &atom_idx) in e.iter().enumerate() {
        for row in 0..m {
            a[row * k + col] = mu.atom(atom_idx)[row];
        }
    }
    let scale = a.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    let mut pivots: Vec<(usize, usize)> = Vec::new(); // (row, col)
    let mut row = 0usize;
    for col in 0..k {
        let mut best_row = row;
        for r in row..m {
            if a[r * k + col].abs() > a[best_row * k + col].abs() {
                best_row = r;
            }
        }
        if row >= m || a[best_row * k + col].abs() <= tol {
            continue;
        }
        if best_row != row {
            for c in 0..k {
                a.swap(row * k + c, best_row * k + c);
            }
        }
        let piv = a[row * k + col];
        for c in 0..k {
            a[row * k + c] /= piv;
        }
        for r in 0..m {
            if r != row {
                let factor = a[r * k + col];
                if factor != 0.0 {
                    for c in 0..k {
                        a[r * k + c] -= factor * a[row * k + c];
                    }
                }
            }
        }
        pivots.push((row, col));
        row += 1;
        if row == m {
            break;
        }
    }
    let pivot_cols: Vec<usize> = pivots.iter().map(|&(_, c)| c).collect();
    let free_col = (0..k).find(|c| !pivot_cols.contains(c)).ok_or_else(|| {
        Error::internal("no free column in kernel computation; rank-nullity guarantees one")
    })?;
    let mut h = vec![0.0_f64; k];
    h[free_col] = 1.0;
    for &(r, c) in &pivots {
        h[c] = -a[r * k + free_col];
    }
    Ok(h)
}

/// Full rounding pipeline: membership, pivoting, completion.
pub fn round_to_subset(mu: &AtomicVectorMeasure, v: &[f64]) -> Result<RoundingResult> {
    round_to_subset_with(mu, v, &RoundingConfig::default())
}

pub fn round_to_subset_with(
    mu: &AtomicVectorMeasure,
    v: &[f64],
    cfg: &RoundingConfig,
) -> Result<RoundingResult> {
    let t = match hull_membership(mu, v)? {
        HullMembership::Inside(t) => t,
        HullMembership::NotInHull { functional, margin } => {
            return Err(Error::NotInHull { functional, margin });
        }
    };
    complete_from_weights(mu, v, &t, cfg)
}

/// Halving: round `mu(M)/2` over the atoms of `M`. The all-half weight
/// vector is feasible by construction, so hull membership is skipped.
pub fn approximate_halving(mu: &AtomicVectorMeasure, m_set: &IndexSet) -> Result<RoundingResult> {
    approximate_halving_with(mu, m_set, &RoundingConfig::default())
}

pub fn approximate_halving_with(
    mu: &AtomicVectorMeasure,
    m_set: &IndexSet,
    cfg: &RoundingConfig,
) -> Result<RoundingResult> {
    let sub = mu.restricted(m_set)?;
    let t = vec![0.5; sub.len()];
    let v = sub.weighted_sum(&t);
    let local = complete_from_weights(&sub, &v, &t, cfg)?;
    // map subset indices back into the parent ground set
    let members: Vec<usize> = local.subset.iter().map(|i| m_set.as_slice()[i]).collect();
    Ok(RoundingResult {
        subset: IndexSet::new(members, mu.len().max(1))?,
        ..local
    })
}

fn complete_from_weights(
    mu: &AtomicVectorMeasure,
    v: &[f64],
    t: &[f64],
    cfg: &RoundingConfig,
) -> Result<RoundingResult> {
    let (t, trace) = pivot_to_sparse(mu, t)?;
    let frac = fractional_indices(&t);
    let ones: Vec<usize> =
        t.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(i, _)| i).collect();
    let mut base = vec![0.0_f64; mu.dim()];
    for &i in &ones {
        for (b, x) in base.iter_mut().zip(mu.atom(i)) {
            *b += x;
        }
    }

    let eval = |extra: &[usize]| -> f64 {
        let mut sum = base.clone();
        for &i in extra {
            for (s, x) in sum.iter_mut().zip(mu.atom(i)) {
                *s += x;
            }
        }
        let diff: Vec<f64> = sum.iter().zip(v).map(|(s, x)| s - x).collect();
        mu.norm_of(&diff)
    };

    let mut best_extra: Vec<usize> = Vec::new();
    let mut best_err = eval(&[]);
    if frac.len() <= cfg.max_enumerated_fractional {
        for mask in 1u64..(1u64 << frac.len()) {
            let extra: Vec<usize> =
                frac.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &i)| i).collect();
            let err = eval(&extra);
            if err < best_err {
                best_err = err;
                best_extra = extra;
            }
        }
    } else {
        // greedy completion; the all-zeros candidate already meets the bound
        let mut extra = Vec::new();
        let mut err = best_err;
        for &i in &frac {
            let mut trial = extra.clone();
            trial.push(i);
            let e = eval(&trial);
            if e < err {
                err = e;
                extra = trial;
            }
        }
        if err < best_err {
            best_err = err;
            best_extra = extra;
        }
    }

    let mut members = ones;
    members.extend(best_extra);
    let subset = IndexSet::new(members, mu.len().max(1))?;
    let (bound, bound_is_exact) = small_subset_bound(mu, cfg.bound_enumeration_budget);
    Ok(RoundingResult {
        subset,
        error: best_err,
        bound,
        bound_is_exact,
        fractional_trace: trace,
        fractional_after: frac.len(),
    })
}

/// `max { |mu(C)| : |C| <= m }`, enumerated exactly when the subset count
/// fits the budget, otherwise the weaker `m * max_i |atom_i|` upper bound.
pub fn small_subset_bound(mu: &AtomicVectorMeasure, budget: u128) -> (f64, bool) {
    let n = mu.len();
    let m = mu.dim();
    let mut count: u128 = 0;
    let mut binom: u128 = 1;
    let mut feasible = true;
    for k in 0..=m.min(n) {
        if k > 0 {
            binom = binom.saturating_mul((n - k + 1) as u128) / k as u128;
        }
        count = count.saturating_add(binom);
        if count > budget {
            feasible = false;
            break;
        }
    }
    if !feasible {
        return ((m as f64) * mu.max_atom_norm(), false);
    }
    let mut best = 0.0_f64;
    let mut acc = vec![0.0_f64; m];
    let mut stack: Vec<usize> = Vec::new();
    enumerate_small(mu, 0, m.min(n), &mut acc, &mut stack, &mut best);
    (best, true)
}

fn enumerate_small(
    mu: &AtomicVectorMeasure,
    start: usize,
    depth_left: usize,
    acc: &mut Vec<f64>,
    stack: &mut Vec<usize>,
    best: &mut f64,
) {
    *best = best.max(mu.norm_of(acc));
    if depth_left == 0 {
        return;
    }
    for i in start..mu.len() {
        for (a, x) in acc.iter_mut().zip(mu.atom(i)) {
            *a += x;
        }
        stack.push(i);
        enumerate_small(mu, i + 1, depth_left - 1, acc, stack, best);
        stack.pop();
        for (a, x) in acc.iter_mut().zip(mu.atom(i)) {
            *a -= x;
        }
    }
}

/// Exhaustive minimum of `|mu(F) - v|` over all `2^n` subsets. Ties break
/// toward smaller subsets, then lexicographically smaller index sets.
pub fn brute_force_oracle(
    mu: &AtomicVectorMeasure,
    v: &[f64],
    max_n: usize,
) -> Result<(IndexSet, f64)> {
    let n = mu.len();
    if n > max_n {
        return Err(Error::domain(format!(
            "brute force oracle refused: {n} atoms exceeds the limit {max_n}"
        )));
    }
    if v.len() != mu.dim() {
        return Err(Error::domain(format!(
            "target has dimension {}, measure has {}",
            v.len(),
            mu.dim()
        )));
    }
    let mut best_err = f64::INFINITY;
    let mut best_mask: u64 = 0;
    for mask in 0u64..(1u64 << n) {
        let mut sum = vec![0.0_f64; mu.dim()];
        for (i, atom) in mu.atoms.iter().enumerate() {
            if mask >> i & 1 == 1 {
                for (s, x) in sum.iter_mut().zip(atom) {
                    *s += x;
                }
            }
        }
        let diff: Vec<f64> = sum.iter().zip(v).map(|(s, x)| s - x).collect();
        let err = mu.norm_of(&diff);
        let better = err < best_err
            || (err == best_err
                && (mask.count_ones(), mask) < (best_mask.count_ones(), best_mask));
        if better {
            best_err = err;
            best_mask = mask;
        }
    }
    let members: Vec<usize> = (0..n).filter(|i| best_mask >> i & 1 == 1).collect();
    Ok((IndexSet::new(members, n.max(1))?, best_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn measure(atoms: Vec<Vec<f64>>, norm: MeasureNorm) -> AtomicVectorMeasure {
        let dim = atoms.first().map(|a| a.len()).unwrap_or(1);
        AtomicVectorMeasure::new(dim, atoms, norm).unwrap()
    }

    fn three_atoms() -> AtomicVectorMeasure {
        measure(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], MeasureNorm::L2)
    }

    fn random_measure(rng: &mut ChaCha12Rng, n: usize, m: usize, norm: MeasureNorm) -> AtomicVectorMeasure {
        let atoms = (0..n)
            .map(|_| (0..m).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect())
            .collect();
        AtomicVectorMeasure::new(m, atoms, norm).unwrap()
    }

    #[test]
    fn hull_membership_examples() {
        let mu = three_atoms();
        // v = mu(A) is reachable with the indicator of A
        match hull_membership(&mu, &[1.0, 2.0]).unwrap() {
            HullMembership::Inside(t) => {
                let diff: Vec<f64> =
                    mu.weighted_sum(&t).iter().zip(&[1.0, 2.0]).map(|(a, b)| a - b).collect();
                assert!(mu.norm_of(&diff) <= 1e-9);
            }
            _ => panic!("mu(full) - (1,0)... target (1,2) = mu({{1,2}}) must be inside"),
        }
        // half of the full sum
        let full: Vec<f64> = mu.weighted_sum(&[1.0, 1.0, 1.0]);
        let half: Vec<f64> = full.iter().map(|x| x / 2.0).collect();
        assert!(matches!(hull_membership(&mu, &half).unwrap(), HullMembership::Inside(_)));
        // outside the zonotope, with a verified separating functional
        let mu2 = measure(vec![vec![1.0, 0.0], vec![0.0, 1.0]], MeasureNorm::L2);
        match hull_membership(&mu2, &[2.0, 0.0]).unwrap() {
            HullMembership::NotInHull { functional, margin } => {
                assert!(margin > 0.0);
                let support: f64 = (0..mu2.len())
                    .map(|i| {
                        functional.iter().zip(mu2.atom(i)).map(|(f, a)| f * a).sum::<f64>().max(0.0)
                    })
                    .sum();
                let value: f64 = functional.iter().zip(&[2.0, 0.0]).map(|(f, v)| f * v).sum();
                assert!(value > support + 0.4, "weak separation: {value} vs {support}");
            }
            _ => panic!("(2,0) must be outside"),
        }
    }

    #[test]
    fn pivot_examples() {
        // already integral: unchanged
        let mu = three_atoms();
        let (t, trace) = pivot_to_sparse(&mu, &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(t, vec![1.0, 0.0, 1.0]);
        assert!(trace.is_empty());

        // m=1, four equal atoms, all halves
        let mu = measure(vec![vec![1.0]; 4], MeasureNorm::L2);
        let target = mu.weighted_sum(&[0.5; 4]);
        let (t, _) = pivot_to_sparse(&mu, &[0.5; 4]).unwrap();
        assert!(fractional_indices(&t).len() <= 1);
        let diff = mu.weighted_sum(&t)[0] - target[0];
        assert!(diff.abs() <= 1e-9);

        // random instances: <= m fractional, sum preserved
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..50 {
            let mu = random_measure(&mut rng, 15, 3, MeasureNorm::L2);
            let t0: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
            let target = mu.weighted_sum(&t0);
            let (t, _) = pivot_to_sparse(&mu, &t0).unwrap();
            assert!(fractional_indices(&t).len() <= 3);
            assert!(t.iter().all(|&x| (0.0..=1.0).contains(&x)));
            let out = mu.weighted_sum(&t);
            let diff: Vec<f64> = out.iter().zip(&target).map(|(a, b)| a - b).collect();
            assert!(mu.norm_of(&diff) <= 1e-9, "pivot drift {}", mu.norm_of(&diff));
        }
    }

    #[test]
    fn round_examples() {
        let mu = three_atoms();
        let res = round_to_subset(&mu, &[1.0, 1.0]).unwrap();
        assert_eq!(res.subset.as_slice(), &[2]);
        assert!(res.error <= 1e-12);
        assert!(res.error <= res.bound + 1e-9);

        let mu = measure(vec![vec![1.0]; 5], MeasureNorm::L2);
        let res = round_to_subset(&mu, &[2.5]).unwrap();
        assert!((res.error - 0.5).abs() < 1e-12);
        assert!((res.bound - 1.0).abs() < 1e-12);
        assert!(res.bound_is_exact);

        let mu = measure(vec![vec![3.0, 4.0]], MeasureNorm::L2);
        let res = round_to_subset(&mu, &[1.5, 2.0]).unwrap();
        assert!((res.error - 2.5).abs() < 1e-12);
        assert!((res.bound - 5.0).abs() < 1e-12);

        let mu2 = measure(vec![vec![1.0, 0.0], vec![0.0, 1.0]], MeasureNorm::L2);
        assert!(matches!(
            round_to_subset(&mu2, &[2.0, 0.0]),
            Err(Error::NotInHull { .. })
        ));
    }

    #[test]
    fn halving_examples() {
        let mu = three_atoms();
        // empty M
        let res = approximate_halving(&mu, &IndexSet::empty()).unwrap();
        assert!(res.subset.is_empty());
        assert_eq!(res.error, 0.0);

        // equal atoms, even count: exact half split
        let mu = measure(vec![vec![2.0, -1.0]; 6], MeasureNorm::L2);
        let res = approximate_halving(&mu, &IndexSet::full(6)).unwrap();
        assert!(res.error <= 1e-12);
        assert_eq!(res.subset.len(), 3);

        // the three-atom instance halves to exactly mu({2})
        let mu = three_atoms();
        let res = approximate_halving(&mu, &IndexSet::full(3)).unwrap();
        assert_eq!(res.subset.as_slice(), &[2]);
        assert!(res.error <= 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let mu = three_atoms();
        let (subset, err) = brute_force_oracle(&mu, &[1.0, 1.0], 22).unwrap();
        assert_eq!(subset.as_slice(), &[2]);
        assert_eq!(err, 0.0);

        let mu = measure(vec![vec![3.0, 4.0]], MeasureNorm::L2);
        let (_, err) = brute_force_oracle(&mu, &[1.5, 2.0], 22).unwrap();
        assert!((err - 2.5).abs() < 1e-12);

        let big = measure(vec![vec![1.0]; 30], MeasureNorm::L2);
        assert!(brute_force_oracle(&big, &[1.0], 22).is_err());
    }

    #[test]
    fn lemma_bound_holds_on_random_suite() {
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        for norm in [MeasureNorm::L1, MeasureNorm::L2, MeasureNorm::Linf] {
            for trial in 0..200 {
                let n = 4 + (trial % 14);
                let m = 1 + (trial % 4);
                let mu = random_measure(&mut rng, n, m, norm);
                let t0: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let v = mu.weighted_sum(&t0);
                let res = round_to_subset(&mu, &v).unwrap();
                assert!(res.bound_is_exact);
                assert!(
                    res.error <= res.bound + 1e-9,
                    "bound violated: {} > {}",
                    res.error,
                    res.bound
                );
                assert!(res.error <= m as f64 * mu.max_atom_norm() + 1e-9);
                assert!(res.fractional_after <= m);
                let (_, oracle_err) = brute_force_oracle(&mu, &v, 22).unwrap();
                assert!(oracle_err <= res.error + 1e-12);
            }
        }
    }

    #[test]
    fn measure_json_round_trip() {
        let mu = three_atoms();
        let back = AtomicVectorMeasure::from_json(&mu.to_json()).unwrap();
        assert_eq!(mu, back);
    }
}
