//! Python bindings for the roe-lab toolkit: metric spaces, banded
//! operators, vector-measure rounding, localization, and coarse-map
//! extraction.
//!
//! Complex data crosses the boundary as `[re, im]` pairs and reports come
//! back as plain dicts, so the module has no numpy dependency.

use std::sync::Arc;

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use roe_lab::error::Error;
use roe_lab::linalg::{expm, CMatrix};
use roe_lab::localization as loc;
use roe_lab::operator::{BandedOperator, ProjectionFamily};
use roe_lab::rigidity as rig;
use roe_lab::space::{self, IndexSet, MetricSpace};
use roe_lab::vecmeasure as vm;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_pairs(pairs: Vec<[f64; 2]>) -> Vec<Complex64> {
    pairs.iter().map(|[re, im]| Complex64::new(*re, *im)).collect()
}

fn to_pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn index_set(members: Vec<usize>, n: usize) -> PyResult<IndexSet> {
    IndexSet::new(members, n).map_err(err)
}

/// Finite metric space with exact graph metrics.
#[pyclass(frozen)]
struct Space {
    inner: Arc<MetricSpace>,
}

#[pymethods]
impl Space {
    #[staticmethod]
    fn path(n: usize) -> PyResult<Self> {
        Ok(Space { inner: space::generate(&space::SpaceKind::Path { n }).map_err(err)? })
    }

    #[staticmethod]
    fn cycle(n: usize) -> PyResult<Self> {
        Ok(Space { inner: space::generate(&space::SpaceKind::Cycle { n }).map_err(err)? })
    }

    #[staticmethod]
    fn grid(rows: usize, cols: usize) -> PyResult<Self> {
        Ok(Space { inner: space::generate(&space::SpaceKind::Grid { rows, cols }).map_err(err)? })
    }

    #[staticmethod]
    fn cayley(order: usize, gens: Vec<u64>) -> PyResult<Self> {
        Ok(Space { inner: space::generate(&space::SpaceKind::Cayley { order, gens }).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (n, p, seed, regenerate=true))]
    fn random_graph(n: usize, p: f64, seed: u64, regenerate: bool) -> PyResult<Self> {
        let on_disconnected = if regenerate {
            space::Disconnected::Regenerate
        } else {
            space::Disconnected::Error
        };
        Ok(Space {
            inner: space::generate(&space::SpaceKind::RandomGraph { n, p, seed, on_disconnected })
                .map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Space { inner: MetricSpace::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label().to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn dist(&self, x: usize, y: usize) -> PyResult<f64> {
        if x >= self.inner.len() || y >= self.inner.len() {
            return Err(PyValueError::new_err("point out of range"));
        }
        Ok(self.inner.dist(x, y))
    }

    fn ball(&self, x: usize, r: f64) -> PyResult<Vec<usize>> {
        Ok(self.inner.ball(x, r).map_err(err)?.as_slice().to_vec())
    }

    fn growth(&self, r: f64) -> PyResult<usize> {
        self.inner.growth(r).map_err(err)
    }

    fn diameter(&self) -> f64 {
        self.inner.diameter()
    }

    fn __repr__(&self) -> String {
        format!("Space('{}', n={})", self.inner.label(), self.inner.len())
    }
}

/// Block matrix indexed by a space, with propagation and norm diagnostics.
#[pyclass(frozen)]
struct Operator {
    inner: BandedOperator,
}

#[pymethods]
impl Operator {
    #[staticmethod]
    #[pyo3(signature = (space, fiber_dim=1))]
    fn identity(space: &Space, fiber_dim: usize) -> Operator {
        Operator { inner: BandedOperator::identity(space.inner.clone(), fiber_dim) }
    }

    #[staticmethod]
    fn matrix_unit(space: &Space, x: usize, y: usize) -> PyResult<Operator> {
        Ok(Operator { inner: BandedOperator::matrix_unit(space.inner.clone(), x, y).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (space, members, fiber_dim=1))]
    fn coordinate_projection(space: &Space, members: Vec<usize>, fiber_dim: usize) -> PyResult<Operator> {
        let s = index_set(members, space.inner.len())?;
        Ok(Operator {
            inner: BandedOperator::coordinate_projection(space.inner.clone(), fiber_dim, &s)
                .map_err(err)?,
        })
    }

    /// Dense entries as row-major `[re, im]` pairs of the full (n d) x (n d) matrix.
    #[staticmethod]
    #[pyo3(signature = (space, entries, fiber_dim=1))]
    fn from_dense(space: &Space, entries: Vec<[f64; 2]>, fiber_dim: usize) -> PyResult<Operator> {
        let dim = space.inner.len() * fiber_dim;
        let mat = CMatrix::from_vec(dim, dim, parse_pairs(entries)).map_err(err)?;
        Ok(Operator { inner: BandedOperator::from_matrix(space.inner.clone(), fiber_dim, mat).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str, space: &Space) -> PyResult<Operator> {
        Ok(Operator { inner: BandedOperator::from_json(text, space.inner.clone()).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn propagation(&self) -> f64 {
        self.inner.propagation()
    }

    #[pyo3(signature = (tol=1e-10))]
    fn op_norm(&self, tol: f64) -> PyResult<f64> {
        self.inner.op_norm(tol).map_err(err)
    }

    fn truncate(&self, r: f64) -> PyResult<Operator> {
        Ok(Operator { inner: self.inner.truncate(r).map_err(err)? })
    }

    /// `|a - truncate(a, r)|`, the upper certificate for epsilon-r-approximability.
    fn truncation_error(&self, r: f64) -> PyResult<f64> {
        Ok(self.inner.truncation_certificate(0.0, r).map_err(err)?.value)
    }

    fn separated_lower_bound(&self, r: f64) -> PyResult<f64> {
        self.inner.separated_lower_bound(r).map_err(err)
    }

    fn ghost_profile(&self, exhaustion: Vec<Vec<usize>>) -> PyResult<Vec<f64>> {
        let n = self.inner.points();
        let chain: Vec<IndexSet> = exhaustion
            .into_iter()
            .map(|s| index_set(s, n))
            .collect::<PyResult<_>>()?;
        self.inner.ghost_profile(&chain).map_err(err)
    }

    fn add(&self, other: &Operator) -> PyResult<Operator> {
        Ok(Operator { inner: self.inner.add(&other.inner).map_err(err)? })
    }

    fn multiply(&self, other: &Operator) -> PyResult<Operator> {
        Ok(Operator { inner: self.inner.multiply(&other.inner).map_err(err)? })
    }

    fn adjoint(&self) -> Operator {
        Operator { inner: self.inner.adjoint() }
    }

    fn apply(&self, v: Vec<[f64; 2]>) -> PyResult<Vec<[f64; 2]>> {
        let out = self.inner.apply_to_vector(&parse_pairs(v)).map_err(err)?;
        Ok(to_pairs(&out))
    }

    fn __repr__(&self) -> String {
        format!(
            "Operator(space='{}', d={}, propagation={})",
            self.inner.space().label(),
            self.inner.fiber_dim(),
            self.inner.propagation()
        )
    }
}

/// Atomic vector measure in R^m.
#[pyclass(frozen)]
struct Measure {
    inner: vm::AtomicVectorMeasure,
}

fn rounding_dict<'py>(py: Python<'py>, res: &vm::RoundingResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("subset", res.subset.as_slice().to_vec())?;
    d.set_item("error", res.error)?;
    d.set_item("bound", res.bound)?;
    d.set_item("bound_is_exact", res.bound_is_exact)?;
    d.set_item("fractional_after", res.fractional_after)?;
    d.set_item("pivots", res.fractional_trace.len())?;
    Ok(d)
}

#[pymethods]
impl Measure {
    #[new]
    #[pyo3(signature = (atoms, norm="l2"))]
    fn new(atoms: Vec<Vec<f64>>, norm: &str) -> PyResult<Self> {
        let norm = match norm {
            "l1" => vm::MeasureNorm::L1,
            "l2" => vm::MeasureNorm::L2,
            "linf" => vm::MeasureNorm::Linf,
            other => return Err(PyValueError::new_err(format!("unknown norm '{other}'"))),
        };
        let dim = atoms.first().map(|a| a.len()).unwrap_or(1);
        Ok(Measure { inner: vm::AtomicVectorMeasure::new(dim, atoms, norm).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Measure { inner: vm::AtomicVectorMeasure::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn measure_of(&self, subset: Vec<usize>) -> PyResult<Vec<f64>> {
        let s = index_set(subset, self.inner.len())?;
        Ok(self.inner.measure_of(&s))
    }

    /// `(weights, None)` when inside the hull, `(None, {functional, margin})` otherwise.
    fn hull_membership<'py>(&self, py: Python<'py>, v: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        match vm::hull_membership(&self.inner, &v).map_err(err)? {
            vm::HullMembership::Inside(t) => {
                d.set_item("inside", true)?;
                d.set_item("weights", t)?;
            }
            vm::HullMembership::NotInHull { functional, margin } => {
                d.set_item("inside", false)?;
                d.set_item("functional", functional)?;
                d.set_item("margin", margin)?;
            }
        }
        Ok(d)
    }

    fn round_to_subset<'py>(&self, py: Python<'py>, v: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let res = vm::round_to_subset(&self.inner, &v).map_err(err)?;
        rounding_dict(py, &res)
    }

    fn approximate_halving<'py>(
        &self,
        py: Python<'py>,
        members: Vec<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let m = index_set(members, self.inner.len().max(1))?;
        let res = vm::approximate_halving(&self.inner, &m).map_err(err)?;
        rounding_dict(py, &res)
    }

    #[pyo3(signature = (v, max_n=22))]
    fn brute_force_oracle(&self, v: Vec<f64>, max_n: usize) -> PyResult<(Vec<usize>, f64)> {
        let (subset, error) = vm::brute_force_oracle(&self.inner, &v, max_n).map_err(err)?;
        Ok((subset.as_slice().to_vec(), error))
    }
}

/// Unitary implementing an isomorphism by conjugation.
#[pyclass(frozen)]
struct Unitary {
    inner: rig::SpatialUnitary,
}

#[pymethods]
impl Unitary {
    #[staticmethod]
    #[pyo3(signature = (source, target, perm, fiber_dim=1))]
    fn from_permutation(
        source: &Space,
        target: &Space,
        perm: Vec<usize>,
        fiber_dim: usize,
    ) -> PyResult<Unitary> {
        Ok(Unitary {
            inner: rig::SpatialUnitary::from_permutation(
                source.inner.clone(),
                target.inner.clone(),
                &perm,
                fiber_dim,
            )
            .map_err(err)?,
        })
    }

    /// exp(iH) for a seeded banded Hermitian H of the given norm.
    #[staticmethod]
    #[pyo3(signature = (space, seed, strength=0.1, prop=1.0))]
    fn banded(space: &Space, seed: u64, strength: f64, prop: f64) -> PyResult<Unitary> {
        use rand::{Rng, SeedableRng};
        let n = space.inner.len();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut h = CMatrix::zeros(n, n);
        for x in 0..n {
            for y in x..n {
                if space.inner.dist(x, y) <= prop {
                    let z = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                    if x == y {
                        h.set(x, y, Complex64::new(z.re, 0.0));
                    } else {
                        h.set(x, y, z);
                        h.set(y, x, z.conj());
                    }
                }
            }
        }
        let norm = h.op_norm(1e-10, 10_000).map_err(err)?;
        if norm > 0.0 {
            h = h.scaled(Complex64::new(strength / norm, 0.0));
        }
        let u = expm(&h.scaled(Complex64::new(0.0, 1.0)));
        Ok(Unitary {
            inner: rig::SpatialUnitary::new(space.inner.clone(), space.inner.clone(), 1, u)
                .map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str, source: &Space, target: &Space) -> PyResult<Unitary> {
        Ok(Unitary {
            inner: rig::SpatialUnitary::from_json(text, source.inner.clone(), target.inner.clone())
                .map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Composition `self . other` (apply `other` first).
    fn compose(&self, other: &Unitary) -> PyResult<Unitary> {
        if !space::same_space(other.inner.target(), self.inner.source()) {
            return Err(PyValueError::new_err("composition spaces do not match"));
        }
        let mat = self.inner.matrix().mul(other.inner.matrix());
        Ok(Unitary {
            inner: rig::SpatialUnitary::new(
                other.inner.source().clone(),
                self.inner.target().clone(),
                self.inner.fiber_dim(),
                mat,
            )
            .map_err(err)?,
        })
    }

    fn unitary_defect(&self) -> f64 {
        self.inner.unitary_defect()
    }

    fn conjugate(&self, a: &Operator) -> PyResult<Operator> {
        Ok(Operator { inner: self.inner.conjugate(&a.inner).map_err(err)? })
    }

    fn extract_map<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = rig::extract_map(&self.inner).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("f", report.f.assignment().to_vec())?;
        d.set_item("g", report.g.assignment().to_vec())?;
        d.set_item("coefficient_floor", report.coefficient_floor)?;
        d.set_item("coefficient_floor_g", report.coefficient_floor_g)?;
        d.set_item("closeness_fg", report.closeness_fg)?;
        d.set_item("closeness_gf", report.closeness_gf)?;
        d.set_item("expansion_f", report.expansion_f.clone())?;
        d.set_item("expansion_g", report.expansion_g.clone())?;
        d.set_item("verdict", matches!(report.verdict, rig::Verdict::Pass))?;
        Ok(d)
    }

    /// Halving lemma check on the conjugated coordinate-projection family.
    #[pyo3(signature = (epsilon, r, halving_sample=4))]
    fn check_halving_lemma<'py>(
        &self,
        py: Python<'py>,
        epsilon: f64,
        r: f64,
        halving_sample: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        if !space::same_space(self.inner.source(), self.inner.target()) {
            return Err(PyValueError::new_err("lemma families need source == target"));
        }
        let fam = ProjectionFamily::conjugated_basis(
            self.inner.source().clone(),
            self.inner.fiber_dim(),
            self.inner.matrix().clone(),
        )
        .map_err(err)?;
        let opts = rig::LemmaOptions { delta_override: None, halving_sample };
        let report = rig::check_halving_lemma(&fam, epsilon, r, &opts).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("epsilon", report.epsilon)?;
        d.set_item("r", report.r)?;
        d.set_item("delta", report.delta)?;
        d.set_item("n_r", report.n_r)?;
        d.set_item("tail_bound", report.tail_bound)?;
        d.set_item("min_norm", report.min_norm)?;
        d.set_item("bound", report.bound)?;
        d.set_item("pass", report.pass)?;
        let halving = PyList::empty(py);
        for h in &report.halving {
            let e = PyDict::new(py);
            e.set_item("x", h.x)?;
            e.set_item("error", h.error)?;
            e.set_item("threshold", h.threshold)?;
            halving.append(e)?;
        }
        d.set_item("halving", halving)?;
        Ok(d)
    }

    /// Uniform tail bound of the conjugated family at radius r.
    fn family_tail_bound(&self, r: f64) -> PyResult<f64> {
        let fam = ProjectionFamily::conjugated_basis(
            self.inner.source().clone(),
            self.inner.fiber_dim(),
            self.inner.matrix().clone(),
        )
        .map_err(err)?;
        fam.family_tail_bound(r).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Unitary('{}' -> '{}', d={})",
            self.inner.source().label(),
            self.inner.target().label(),
            self.inner.fiber_dim()
        )
    }
}

#[pyfunction]
fn derive_localization_params<'py>(
    py: Python<'py>,
    epsilon: f64,
    delta: f64,
    s: f64,
    t: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = loc::derive_params(epsilon, delta, s, t).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("epsilon", p.epsilon)?;
    d.set_item("delta", p.delta)?;
    d.set_item("s", p.s)?;
    d.set_item("t", p.t)?;
    d.set_item("k", p.k)?;
    d.set_item("gamma", p.gamma)?;
    d.set_item("r", p.r)?;
    Ok(d)
}

/// Localize `p` using approximant `a` and the point witness `delta_x`.
#[pyfunction]
fn localize_at_point<'py>(
    py: Python<'py>,
    p: &Operator,
    a: &Operator,
    x: usize,
    epsilon: f64,
    delta: f64,
    s: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let params = loc::derive_params(epsilon, delta, s, 0.0).map_err(err)?;
    let res = loc::localize_at_point(&p.inner, &a.inner, x, &params).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("support", res.support.as_slice().to_vec())?;
    d.set_item("diameter", res.diameter)?;
    d.set_item("defect", res.defect)?;
    d.set_item("power_index", res.power_index)?;
    d.set_item("r", params.r)?;
    d.set_item("k", params.k)?;
    d.set_item("gamma", params.gamma)?;
    d.set_item("xi", to_pairs(&res.xi))?;
    Ok(d)
}

#[pymodule]
fn roelab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Space>()?;
    m.add_class::<Operator>()?;
    m.add_class::<Measure>()?;
    m.add_class::<Unitary>()?;
    m.add_function(wrap_pyfunction!(derive_localization_params, m)?)?;
    m.add_function(wrap_pyfunction!(localize_at_point, m)?)?;
    Ok(())
}
