//! Python bindings: the ordered-space world, dense tensors with the
//! commutative product, separable operators, contraction planning, and the
//! solver suite.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tensalg::solvers::multigrid::{build_hierarchy_from_map, tmg_solve, Levels};
use tensalg::solvers::{conjugate_gradients, direct_solve, jacobi, LinearMap, SolveReport};
use tensalg::{
    execute_with_stats, inner_product, make_delta, plan, tensor_product, DeltaPair, DenseTensor,
    FactorSignature, IndexSpec, SpaceRegistry,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// The ordered set of named vector spaces a problem lives in.
///
/// Spaces are defined once, in order; the order fixes the canonical index
/// positions that make the tensor product commutative. The world freezes as
/// soon as the first tensor is created against it.
#[pyclass]
struct World {
    registry: SpaceRegistry,
    shared: Option<Arc<SpaceRegistry>>,
}

impl World {
    fn shared(&mut self) -> Arc<SpaceRegistry> {
        self.shared
            .get_or_insert_with(|| Arc::new(self.registry.clone()))
            .clone()
    }

    fn parse_spec(&mut self, text: &str) -> PyResult<IndexSpec> {
        let reg = self.shared();
        IndexSpec::parse(&reg, text).map_err(value_err)
    }
}

#[pymethods]
impl World {
    #[new]
    fn new() -> Self {
        Self {
            registry: SpaceRegistry::new(),
            shared: None,
        }
    }

    /// Appends a space at the end of the order.
    fn define_space(&mut self, name: &str, extent: usize) -> PyResult<()> {
        if self.shared.is_some() {
            return Err(PyRuntimeError::new_err(
                "world is frozen: tensors have already been created against it",
            ));
        }
        self.registry.define_space(name, extent).map_err(value_err)?;
        Ok(())
    }

    /// (name, extent) pairs in definition order.
    fn spaces(&self) -> Vec<(String, usize)> {
        self.registry
            .spaces()
            .map(|(_, s)| (s.name.clone(), s.extent))
            .collect()
    }

    /// 0-based canonical rank of a space.
    fn rank(&self, name: &str) -> PyResult<usize> {
        self.registry
            .canonical_rank(name)
            .map(|id| id.0)
            .map_err(value_err)
    }

    /// Creates a tensor from an index spec such as `"x^1,y^1"`. Components
    /// are row-major in the written index order; omitted means all zeros.
    #[pyo3(signature = (spec, components=None))]
    fn tensor(&mut self, spec: &str, components: Option<Vec<f64>>) -> PyResult<Tensor> {
        let spec = self.parse_spec(spec)?;
        let inner = match components {
            Some(values) => DenseTensor::from_components(&spec, values).map_err(value_err)?,
            None => DenseTensor::zeros(&spec),
        };
        Ok(Tensor { inner })
    }

    /// Order-0 tensor holding a single value.
    fn scalar(&mut self, value: f64) -> Tensor {
        let reg = self.shared();
        Tensor {
            inner: DenseTensor::scalar(&reg, value),
        }
    }

    /// Kronecker delta bridging two specs pairwise, e.g.
    /// `delta("x^,y^", "x_1,y_1")` relabels frame-1 indices to frame 0.
    fn delta(&mut self, a: &str, b: &str) -> PyResult<Tensor> {
        let reg = self.shared();
        let sa = self.parse_spec(a)?;
        let sb = self.parse_spec(b)?;
        if sa.len() != sb.len() {
            return Err(PyValueError::new_err(
                "delta specs must pair up index for index",
            ));
        }
        let pairs: Vec<DeltaPair> = sa
            .indices()
            .iter()
            .zip(sb.indices())
            .map(|(ia, ib)| {
                if ia.space != ib.space {
                    return Err(PyValueError::new_err(
                        "delta pairs must live in one space",
                    ));
                }
                Ok(DeltaPair::new(
                    ia.space,
                    (ia.frame, ia.variance),
                    (ib.frame, ib.variance),
                ))
            })
            .collect::<PyResult<_>>()?;
        Ok(Tensor {
            inner: make_delta(&reg, &pairs).map_err(value_err)?,
        })
    }

    /// The discretized Laplacian as a separable sum; `spec` pairs output and
    /// input frames per space, e.g. `"x^1,x_,y^1,y_"`.
    fn laplacian(&mut self, spec: &str) -> PyResult<SeparableOp> {
        let reg = self.shared();
        let spec = self.parse_spec(spec)?;
        Ok(SeparableOp {
            inner: tensalg::laplacian(&reg, &spec, 2).map_err(value_err)?,
        })
    }
}

/// A dense tensor with typed indices in canonical order.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Tensor {
    inner: DenseTensor,
}

#[pymethods]
impl Tensor {
    /// The canonical index spec string.
    fn spec(&self) -> String {
        self.inner.spec().to_string()
    }

    fn components(&self) -> Vec<f64> {
        self.inner.components().to_vec()
    }

    fn extents(&self) -> Vec<usize> {
        self.inner.extents()
    }

    fn order(&self) -> usize {
        self.inner.order()
    }

    fn get(&self, coords: Vec<usize>) -> f64 {
        self.inner.get(&coords)
    }

    fn max_abs(&self) -> f64 {
        self.inner.max_abs()
    }

    /// Scalar value of an order-0 tensor.
    fn item(&self) -> PyResult<f64> {
        self.inner
            .scalar_value()
            .ok_or_else(|| PyValueError::new_err("tensor is not order-0"))
    }

    fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            inner: self.inner.scale(factor),
        }
    }

    /// Inner product with a tensor of identical index structure.
    fn inner(&self, other: &Tensor) -> PyResult<f64> {
        inner_product(&self.inner, &other.inner).map_err(value_err)
    }

    /// Relabels indices (the Kronecker-delta bridge as a cheap operation):
    /// index `from[i]` becomes `to[i]`.
    fn reframe(&self, from: &str, to: &str) -> PyResult<Tensor> {
        let reg = self.inner.registry().clone();
        let from = IndexSpec::parse(&reg, from).map_err(value_err)?;
        let to = IndexSpec::parse(&reg, to).map_err(value_err)?;
        Ok(Tensor {
            inner: self.inner.reframe(&from, &to).map_err(value_err)?,
        })
    }

    fn __add__(&self, other: &Tensor) -> PyResult<Tensor> {
        Ok(Tensor {
            inner: self.inner.add(&other.inner).map_err(value_err)?,
        })
    }

    fn __sub__(&self, other: &Tensor) -> PyResult<Tensor> {
        Ok(Tensor {
            inner: self.inner.subtract(&other.inner).map_err(value_err)?,
        })
    }

    /// `tensor * tensor` is the commutative tensor product;
    /// `tensor * float` scales.
    fn __mul__(&self, other: &Bound<'_, PyAny>) -> PyResult<Tensor> {
        if let Ok(t) = other.extract::<PyRef<Tensor>>() {
            return Ok(Tensor {
                inner: tensor_product(&[&self.inner, &t.inner]).map_err(value_err)?,
            });
        }
        let factor: f64 = other.extract()?;
        Ok(self.scale(factor))
    }

    fn __rmul__(&self, factor: f64) -> Tensor {
        self.scale(factor)
    }

    fn __repr__(&self) -> String {
        format!(
            "Tensor(spec=\"{}\", components={})",
            self.inner.spec(),
            self.inner.components().len()
        )
    }
}

/// A structured operator: a sum of per-dimension order-2 factors, applied
/// dimension by dimension without materializing the full system tensor.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct SeparableOp {
    inner: tensalg::SeparableOperator,
}

#[pymethods]
impl SeparableOp {
    fn input_spec(&self) -> String {
        self.inner.input_spec().to_string()
    }

    fn output_spec(&self) -> String {
        self.inner.output_spec().to_string()
    }

    fn apply(&self, u: &Tensor) -> PyResult<Tensor> {
        Ok(Tensor {
            inner: self.inner.apply(&u.inner).map_err(value_err)?,
        })
    }

    fn scaled(&self, factor: f64) -> SeparableOp {
        SeparableOp {
            inner: self.inner.scaled(factor),
        }
    }

    fn transpose(&self) -> PyResult<SeparableOp> {
        Ok(SeparableOp {
            inner: self.inner.transpose().map_err(value_err)?,
        })
    }

    /// `self ∘ other` (applies `other` first).
    fn compose(&self, other: &SeparableOp) -> PyResult<SeparableOp> {
        Ok(SeparableOp {
            inner: self.inner.compose(&other.inner).map_err(value_err)?,
        })
    }

    /// Assembles the full system tensor (oracle/debugging use).
    fn materialize(&self) -> PyResult<Tensor> {
        Ok(Tensor {
            inner: self.inner.materialize().map_err(value_err)?,
        })
    }
}

/// Either kind of system accepted by the solvers.
#[derive(FromPyObject)]
enum SystemArg<'py> {
    Separable(PyRef<'py, SeparableOp>),
    Dense(PyRef<'py, Tensor>),
}

impl SystemArg<'_> {
    fn linear_map(&self) -> PyResult<LinearMap> {
        match self {
            SystemArg::Separable(op) => Ok(LinearMap::separable(op.inner.clone())),
            SystemArg::Dense(t) => LinearMap::dense(t.inner.clone()).map_err(value_err),
        }
    }
}

/// Convergence record of an iterative solve.
#[pyclass]
struct Report {
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    residual_history: Vec<f64>,
    #[pyo3(get)]
    wall_time: f64,
}

impl From<SolveReport> for Report {
    fn from(r: SolveReport) -> Self {
        Self {
            iterations: r.iterations,
            converged: r.converged,
            residual_history: r.residual_history,
            wall_time: r.wall_time,
        }
    }
}

/// Direct dense solve by Gaussian elimination with partial pivoting.
#[pyfunction]
fn solve_direct(system: SystemArg<'_>, b: &Tensor) -> PyResult<Tensor> {
    let a = system.linear_map()?;
    Ok(Tensor {
        inner: direct_solve(&a, &b.inner).map_err(value_err)?,
    })
}

/// Jacobi iteration until `⟨R,R⟩ <= threshold` or `max_iters`.
#[pyfunction]
#[pyo3(signature = (system, b, threshold=1e-4, max_iters=1000))]
fn solve_jacobi(
    system: SystemArg<'_>,
    b: &Tensor,
    threshold: f64,
    max_iters: usize,
) -> PyResult<(Tensor, Report)> {
    let a = system.linear_map()?;
    let u0 = DenseTensor::zeros(&a.input_spec());
    let (u, report) = jacobi(&a, &b.inner, &u0, threshold, max_iters).map_err(value_err)?;
    Ok((Tensor { inner: u }, report.into()))
}

/// Conjugate Gradients for symmetric positive definite systems.
#[pyfunction]
#[pyo3(signature = (system, b, threshold=1e-10, max_iters=1000))]
fn solve_cg(
    system: SystemArg<'_>,
    b: &Tensor,
    threshold: f64,
    max_iters: usize,
) -> PyResult<(Tensor, Report)> {
    let a = system.linear_map()?;
    let u0 = DenseTensor::zeros(&a.input_spec());
    let (u, report) =
        conjugate_gradients(&a, &b.inner, &u0, threshold, max_iters).map_err(value_err)?;
    Ok((Tensor { inner: u }, report.into()))
}

/// Tensor multigrid: Galerkin-coarsened V-cycles with damped Jacobi smoothing.
#[pyfunction]
#[pyo3(signature = (system, b, threshold=1e-10, max_cycles=100, pre_sweeps=2, post_sweeps=2))]
fn solve_tmg(
    system: SystemArg<'_>,
    b: &Tensor,
    threshold: f64,
    max_cycles: usize,
    pre_sweeps: usize,
    post_sweeps: usize,
) -> PyResult<(Tensor, Report)> {
    let a = system.linear_map()?;
    let hierarchy = build_hierarchy_from_map(a, Levels::Auto).map_err(value_err)?;
    let (u, report) = tmg_solve(
        &hierarchy,
        &b.inner,
        threshold,
        max_cycles,
        pre_sweeps,
        post_sweeps,
    )
    .map_err(value_err)?;
    Ok((Tensor { inner: u }, report.into()))
}

/// The generalized product of any number of tensors (merge + contraction).
#[pyfunction]
fn product(factors: Vec<PyRef<Tensor>>) -> PyResult<Tensor> {
    let tensors: Vec<&DenseTensor> = factors.iter().map(|t| &t.inner).collect();
    Ok(Tensor {
        inner: tensor_product(&tensors).map_err(value_err)?,
    })
}

/// Plans the optimal contraction order; returns
/// (expression, total_flops, peak_components).
#[pyfunction]
#[pyo3(signature = (factors, names=None))]
fn plan_product(
    factors: Vec<PyRef<Tensor>>,
    names: Option<Vec<String>>,
) -> PyResult<(String, u64, u64)> {
    let signatures: Vec<FactorSignature> = factors
        .iter()
        .map(|t| FactorSignature::of_tensor(&t.inner))
        .collect();
    let plan = plan(&signatures).map_err(value_err)?;
    let names: Vec<String> = names
        .unwrap_or_else(|| (0..factors.len()).map(|i| format!("F{i}")).collect());
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok((
        plan.expression(&name_refs),
        plan.total_flops() as u64,
        plan.peak_components() as u64,
    ))
}

/// Evaluates a multi-factor product along the planner's optimal tree.
#[pyfunction]
fn product_planned(factors: Vec<PyRef<Tensor>>) -> PyResult<Tensor> {
    let signatures: Vec<FactorSignature> = factors
        .iter()
        .map(|t| FactorSignature::of_tensor(&t.inner))
        .collect();
    let plan = plan(&signatures).map_err(value_err)?;
    let tensors: Vec<&DenseTensor> = factors.iter().map(|t| &t.inner).collect();
    let (result, _) = execute_with_stats(&plan, &tensors).map_err(value_err)?;
    Ok(Tensor { inner: result })
}

#[pymodule]
fn tensalg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<World>()?;
    m.add_class::<Tensor>()?;
    m.add_class::<SeparableOp>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(product, m)?)?;
    m.add_function(wrap_pyfunction!(plan_product, m)?)?;
    m.add_function(wrap_pyfunction!(product_planned, m)?)?;
    m.add_function(wrap_pyfunction!(solve_direct, m)?)?;
    m.add_function(wrap_pyfunction!(solve_jacobi, m)?)?;
    m.add_function(wrap_pyfunction!(solve_cg, m)?)?;
    m.add_function(wrap_pyfunction!(solve_tmg, m)?)?;
    Ok(())
}
