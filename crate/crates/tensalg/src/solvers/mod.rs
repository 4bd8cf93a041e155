//! Tensor equation solvers.
//!
//! A [`LinearMap`] is the system of a tensor equation `A·U = B`: a dense
//! system tensor, a structured [`SeparableOperator`], an elementwise diagonal,
//! or a weighted sum of those. On top of it sit direct dense elimination
//! (with the tensor inverse), the stationary Jacobi iteration, Conjugate
//! Gradients, and the tensor multigrid V-cycle in [`multigrid`].
//!
//! Convergence checks compare the squared residual norm `⟨R,R⟩` against the
//! threshold absolutely; callers wanting a relative test scale the threshold
//! by the initial `⟨R₀,R₀⟩` themselves.

pub mod dense;
pub mod multigrid;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::notation::{IndexSpec, TensorIndex, Variance};
use crate::registry::{SpaceId, SpaceRegistry};
use crate::separable::{SeparableError, SeparableOperator};
use crate::tensor::{inner_product, tensor_product, DenseTensor, TensorError};

use dense::Mat;

/// Default cap on the flattened size of systems the direct solver accepts.
pub const DIRECT_SOLVE_CAP: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("system tensor must pair one output and one input index per space, with distinct frames")]
    BadSystemTensor,
    #[error("diagonal entry {at} of the system is zero")]
    ZeroDiagonal { at: usize },
    #[error("flattened system has {size} unknowns, above the cap of {cap}")]
    SizeCap { size: usize, cap: usize },
    #[error("singular system: negligible pivot in column {column}")]
    SingularSystem { column: usize },
    #[error("conjugate gradient breakdown at iteration {iteration}: ⟨P,Q⟩ = 0")]
    Breakdown { iteration: usize },
    #[error("non-finite residual at iteration {iteration} (divergence)")]
    NonFinite { iteration: usize },
    #[error("tensor `{found}` does not match the expected spec `{expected}`")]
    ShapeMismatch { expected: String, found: String },
    #[error("summed maps must share input and output specs")]
    SumMismatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Separable(#[from] SeparableError),
}

/// A linear map between tensor spaces, in whichever representation the
/// problem provides.
#[derive(Debug, Clone)]
pub enum LinearMap {
    /// Dense system tensor with paired output/input indices per space.
    Dense(DenseTensor),
    /// Structured operator applied dimension by dimension.
    Separable(SeparableOperator),
    /// Elementwise multiplier on the input spec (input = output spec).
    Diagonal(DenseTensor),
    /// Weighted sum of maps sharing input and output specs.
    Sum(Vec<(f64, LinearMap)>),
}

impl LinearMap {
    pub fn dense(t: DenseTensor) -> Result<Self, SolveError> {
        // Each space must carry exactly one contravariant (output) and one
        // covariant (input) index, on distinct frames.
        let mut by_space: BTreeMap<SpaceId, (Option<TensorIndex>, Option<TensorIndex>)> =
            BTreeMap::new();
        for idx in t.indices() {
            let entry = by_space.entry(idx.space).or_default();
            let slot = match idx.variance {
                Variance::Contravariant => &mut entry.0,
                Variance::Covariant => &mut entry.1,
            };
            if slot.is_some() {
                return Err(SolveError::BadSystemTensor);
            }
            *slot = Some(*idx);
        }
        if by_space.is_empty() {
            return Err(SolveError::BadSystemTensor);
        }
        for (out_, in_) in by_space.values() {
            match (out_, in_) {
                (Some(o), Some(i)) if o.frame != i.frame => {}
                _ => return Err(SolveError::BadSystemTensor),
            }
        }
        Ok(LinearMap::Dense(t))
    }

    pub fn separable(op: SeparableOperator) -> Self {
        LinearMap::Separable(op)
    }

    /// Elementwise diagonal map `u ↦ d ⊙ u` over `d`'s own spec.
    pub fn diagonal_map(d: DenseTensor) -> Result<Self, SolveError> {
        if d.indices()
            .iter()
            .any(|i| i.variance != Variance::Contravariant)
        {
            return Err(SolveError::BadSystemTensor);
        }
        Ok(LinearMap::Diagonal(d))
    }

    pub fn weighted_sum(parts: Vec<(f64, LinearMap)>) -> Result<Self, SolveError> {
        let Some((_, first)) = parts.first() else {
            return Err(SolveError::SumMismatch);
        };
        let input = first.input_indices();
        let output = first.output_indices();
        for (_, part) in &parts {
            if part.input_indices() != input || part.output_indices() != output {
                return Err(SolveError::SumMismatch);
            }
        }
        Ok(LinearMap::Sum(parts))
    }

    pub fn registry(&self) -> &Arc<SpaceRegistry> {
        match self {
            LinearMap::Dense(t) | LinearMap::Diagonal(t) => t.registry(),
            LinearMap::Separable(op) => op.registry(),
            LinearMap::Sum(parts) => parts[0].1.registry(),
        }
    }

    fn input_indices(&self) -> Vec<TensorIndex> {
        match self {
            LinearMap::Dense(t) => {
                let mut v: Vec<TensorIndex> = t
                    .indices()
                    .iter()
                    .filter(|i| i.variance == Variance::Covariant)
                    .map(|i| i.flipped())
                    .collect();
                v.sort_by_key(|i| i.canonical_key());
                v
            }
            LinearMap::Separable(op) => op.input_spec().indices().to_vec(),
            LinearMap::Diagonal(d) => d.indices().to_vec(),
            LinearMap::Sum(parts) => parts[0].1.input_indices(),
        }
    }

    fn output_indices(&self) -> Vec<TensorIndex> {
        match self {
            LinearMap::Dense(t) => {
                let mut v: Vec<TensorIndex> = t
                    .indices()
                    .iter()
                    .filter(|i| i.variance == Variance::Contravariant)
                    .copied()
                    .collect();
                v.sort_by_key(|i| i.canonical_key());
                v
            }
            LinearMap::Separable(op) => op.output_spec().indices().to_vec(),
            LinearMap::Diagonal(d) => d.indices().to_vec(),
            LinearMap::Sum(parts) => parts[0].1.output_indices(),
        }
    }

    pub fn input_spec(&self) -> IndexSpec {
        IndexSpec::from_indices(self.registry(), self.input_indices()).unwrap()
    }

    pub fn output_spec(&self) -> IndexSpec {
        IndexSpec::from_indices(self.registry(), self.output_indices()).unwrap()
    }

    /// Number of unknowns of the flattened square system.
    pub fn unknowns(&self) -> usize {
        self.input_spec().component_count()
    }

    /// The map scaled by a constant (used for sign normalization).
    pub fn scaled(&self, factor: f64) -> LinearMap {
        match self {
            LinearMap::Dense(t) => LinearMap::Dense(t.scale(factor)),
            LinearMap::Separable(op) => LinearMap::Separable(op.scaled(factor)),
            LinearMap::Diagonal(d) => LinearMap::Diagonal(d.scale(factor)),
            LinearMap::Sum(parts) => LinearMap::Sum(
                parts
                    .iter()
                    .map(|(w, p)| (w * factor, p.clone()))
                    .collect(),
            ),
        }
    }

    pub fn apply(&self, u: &DenseTensor) -> Result<DenseTensor, SolveError> {
        if u.indices() != self.input_indices().as_slice() {
            return Err(SolveError::ShapeMismatch {
                expected: self.input_spec().to_string(),
                found: u.spec().to_string(),
            });
        }
        match self {
            LinearMap::Dense(t) => Ok(tensor_product(&[t, u])?),
            LinearMap::Separable(op) => Ok(op.apply(u)?),
            LinearMap::Diagonal(d) => {
                let mut out = u.clone();
                for (o, m) in out.components_mut().iter_mut().zip(d.components()) {
                    *o *= m;
                }
                Ok(out)
            }
            LinearMap::Sum(parts) => {
                let mut acc = DenseTensor::zeros(&self.output_spec());
                for (w, part) in parts {
                    acc.add_scaled(*w, &part.apply(u)?)?;
                }
                Ok(acc)
            }
        }
    }

    /// Main diagonal over the input spec.
    pub fn diagonal(&self) -> Result<DenseTensor, SolveError> {
        match self {
            LinearMap::Dense(t) => {
                let input = self.input_indices();
                let spec = IndexSpec::from_indices(self.registry(), input.clone()).unwrap();
                let mut out = DenseTensor::zeros(&spec);
                let extents: Vec<usize> = input
                    .iter()
                    .map(|i| self.registry().extent(i.space))
                    .collect();
                let mut coords = vec![0usize; input.len()];
                let total: usize = extents.iter().product();
                // Both the output and input slots of the system tensor take
                // the same grid coordinate.
                let slot_of = |idx: &TensorIndex| {
                    input
                        .iter()
                        .position(|i| i.space == idx.space)
                        .expect("paired space")
                };
                let t_slots: Vec<usize> = t.indices().iter().map(slot_of).collect();
                for k in 0..total {
                    let t_coords: Vec<usize> = t_slots.iter().map(|&s| coords[s]).collect();
                    out.components_mut()[k] = t.get(&t_coords);
                    for j in (0..coords.len()).rev() {
                        coords[j] += 1;
                        if coords[j] < extents[j] {
                            break;
                        }
                        coords[j] = 0;
                    }
                }
                Ok(out)
            }
            LinearMap::Separable(op) => Ok(op.diagonal()),
            LinearMap::Diagonal(d) => Ok(d.clone()),
            LinearMap::Sum(parts) => {
                let mut acc = DenseTensor::zeros(&self.input_spec());
                for (w, part) in parts {
                    acc.add_scaled(*w, &part.diagonal()?)?;
                }
                Ok(acc)
            }
        }
    }

    /// Flattens the map to a dense square matrix: rows follow the canonical
    /// row-major order of the output spec, columns of the input spec.
    pub fn densify(&self) -> Result<Mat, SolveError> {
        let n_out = self.output_spec().component_count();
        let n_in = self.input_spec().component_count();
        match self {
            LinearMap::Dense(t) => Ok(dense_tensor_to_matrix(t, &self.output_indices(), &self.input_indices())),
            LinearMap::Separable(op) => {
                let t = op.materialize()?;
                Ok(dense_tensor_to_matrix(&t, &self.output_indices(), &self.input_indices()))
            }
            LinearMap::Diagonal(d) => {
                let mut m = Mat::zeros(n_out, n_in);
                for (i, &v) in d.components().iter().enumerate() {
                    m.set(i, i, v);
                }
                Ok(m)
            }
            LinearMap::Sum(parts) => {
                let mut acc = Mat::zeros(n_out, n_in);
                for (w, part) in parts {
                    let m = part.densify()?;
                    for (a, b) in acc.data.iter_mut().zip(&m.data) {
                        *a += w * b;
                    }
                }
                Ok(acc)
            }
        }
    }
}

/// Rearranges a system tensor's components into an (output, input) matrix.
fn dense_tensor_to_matrix(
    t: &DenseTensor,
    output: &[TensorIndex],
    input: &[TensorIndex],
) -> Mat {
    let registry = t.registry();
    let rows: usize = output.iter().map(|i| registry.extent(i.space)).product();
    let cols: usize = input.iter().map(|i| registry.extent(i.space)).product();
    let mut m = Mat::zeros(rows, cols);
    let extents: Vec<usize> = t.indices().iter().map(|i| registry.extent(i.space)).collect();
    // Row/column strides contributed by each tensor dimension.
    let mut row_stride = vec![0usize; extents.len()];
    let mut col_stride = vec![0usize; extents.len()];
    {
        let mut acc = 1usize;
        for out_idx in output.iter().rev() {
            let dim = t.indices().iter().position(|i| i == out_idx).unwrap();
            row_stride[dim] = acc;
            acc *= registry.extent(out_idx.space);
        }
        let mut acc = 1usize;
        for in_idx in input.iter().rev() {
            let cov = in_idx.flipped();
            let dim = t.indices().iter().position(|i| *i == cov).unwrap();
            col_stride[dim] = acc;
            acc *= registry.extent(in_idx.space);
        }
    }
    let mut coords = vec![0usize; extents.len()];
    let mut row = 0usize;
    let mut col = 0usize;
    for &v in t.components() {
        m.set(row, col, v);
        for j in (0..coords.len()).rev() {
            coords[j] += 1;
            row += row_stride[j];
            col += col_stride[j];
            if coords[j] < extents[j] {
                break;
            }
            coords[j] = 0;
            row -= row_stride[j] * extents[j];
            col -= col_stride[j] * extents[j];
        }
    }
    m
}

/// Convergence record of an iterative solve. The residual history holds
/// `⟨R,R⟩` for the initial guess and after every iteration.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
}

impl SolveReport {
    fn new(history: Vec<f64>, converged: bool, started: Instant) -> Self {
        Self {
            iterations: history.len() - 1,
            residual_history: history,
            converged,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }

    pub fn initial_residual(&self) -> f64 {
        self.residual_history[0]
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap()
    }
}

fn check_spec(t: &DenseTensor, expected: &IndexSpec) -> Result<(), SolveError> {
    if t.indices() != expected.indices() {
        return Err(SolveError::ShapeMismatch {
            expected: expected.to_string(),
            found: t.spec().to_string(),
        });
    }
    Ok(())
}

/// Direct solve by flattening to a square matrix and running Gaussian
/// elimination with partial pivoting.
pub fn direct_solve(a: &LinearMap, b: &DenseTensor) -> Result<DenseTensor, SolveError> {
    direct_solve_with_cap(a, b, DIRECT_SOLVE_CAP)
}

pub fn direct_solve_with_cap(
    a: &LinearMap,
    b: &DenseTensor,
    cap: usize,
) -> Result<DenseTensor, SolveError> {
    check_spec(b, &a.output_spec())?;
    let n = a.unknowns();
    if n > cap {
        return Err(SolveError::SizeCap { size: n, cap });
    }
    let m = a.densify()?;
    let rhs = Mat::from_rows(n, 1, b.components().to_vec());
    let solution = m.solve_in_place(rhs)?;
    Ok(DenseTensor::from_components(&a.input_spec(), solution.data)?)
}

/// Tensor inverse: the map sending the system to the multi-pair identity.
/// The returned tensor consumes `a`'s output indices (as covariant indices)
/// and produces fresh contravariant frames, one past the largest frame label
/// the system uses.
pub fn invert(a: &LinearMap) -> Result<DenseTensor, SolveError> {
    invert_with_cap(a, DIRECT_SOLVE_CAP)
}

pub fn invert_with_cap(a: &LinearMap, cap: usize) -> Result<DenseTensor, SolveError> {
    let n = a.unknowns();
    if n > cap {
        return Err(SolveError::SizeCap { size: n, cap });
    }
    let m = a.densify()?;
    let inverse = m.solve_in_place(Mat::identity(n))?;
    let input = a.input_indices();
    let output = a.output_indices();
    let fresh = input
        .iter()
        .chain(&output)
        .map(|i| i.frame)
        .max()
        .unwrap()
        + 1;
    // Rows of the inverse run over solution coordinates (fresh frames),
    // columns over a's output coordinates (now consumed covariantly).
    let mut user_indices: Vec<TensorIndex> = input
        .iter()
        .map(|i| TensorIndex::new(i.space, fresh, Variance::Contravariant))
        .collect();
    user_indices.extend(output.iter().map(|i| i.flipped()));
    let spec = IndexSpec::from_indices(a.registry(), user_indices).map_err(TensorError::from)?;
    Ok(DenseTensor::from_components(&spec, inverse.data)?)
}

/// Stationary Jacobi iteration: `U ← U − (A·U − B)·Ê` with `Ê` the
/// elementwise reciprocal of the system's main diagonal, iterated until
/// `⟨R,R⟩ ≤ threshold` or the iteration budget runs out.
pub fn jacobi(
    a: &LinearMap,
    b: &DenseTensor,
    u0: &DenseTensor,
    threshold: f64,
    max_iters: usize,
) -> Result<(DenseTensor, SolveReport), SolveError> {
    let started = Instant::now();
    let input_spec = a.input_spec();
    let output_spec = a.output_spec();
    check_spec(b, &output_spec)?;
    check_spec(u0, &input_spec)?;
    let diag = a.diagonal()?;
    if let Some(at) = diag.components().iter().position(|&v| v == 0.0) {
        return Err(SolveError::ZeroDiagonal { at });
    }
    let mut recip = diag;
    for v in recip.components_mut() {
        *v = 1.0 / *v;
    }

    let mut u = u0.clone();
    let mut r = a.apply(&u)?.subtract(b)?;
    let mut rho = inner_product(&r, &r)?;
    let mut history = vec![rho];
    while rho > threshold && history.len() <= max_iters {
        let r_in = r.reframe(&output_spec, &input_spec)?;
        // Elementwise merged product with the reciprocal diagonal.
        let correction = tensor_product(&[&r_in, &recip])?;
        u = u.subtract(&correction)?;
        r = a.apply(&u)?.subtract(b)?;
        rho = inner_product(&r, &r)?;
        if !rho.is_finite() {
            return Err(SolveError::NonFinite {
                iteration: history.len(),
            });
        }
        history.push(rho);
    }
    let converged = rho <= threshold;
    Ok((u, SolveReport::new(history, converged, started)))
}

/// Conjugate Gradients for symmetric positive definite systems, with the
/// search direction carried in the output frames and bridged to the input
/// frames for each application.
pub fn conjugate_gradients(
    a: &LinearMap,
    b: &DenseTensor,
    u0: &DenseTensor,
    threshold: f64,
    max_iters: usize,
) -> Result<(DenseTensor, SolveReport), SolveError> {
    let started = Instant::now();
    let input_spec = a.input_spec();
    let output_spec = a.output_spec();
    check_spec(b, &output_spec)?;
    check_spec(u0, &input_spec)?;

    let mut c = u0.clone();
    let mut r = b.subtract(&a.apply(&c)?)?;
    let mut p = r.clone();
    let mut rho = inner_product(&r, &r)?;
    let mut history = vec![rho];
    while rho > threshold && history.len() <= max_iters {
        let p_in = p.reframe(&output_spec, &input_spec)?;
        let q = a.apply(&p_in)?;
        let pq = inner_product(&p, &q)?;
        if pq == 0.0 || !pq.is_finite() {
            return Err(SolveError::Breakdown {
                iteration: history.len(),
            });
        }
        let alpha = rho / pq;
        c.add_scaled(alpha, &p_in)?;
        r.add_scaled(-alpha, &q)?;
        let rho1 = inner_product(&r, &r)?;
        if !rho1.is_finite() {
            return Err(SolveError::NonFinite {
                iteration: history.len(),
            });
        }
        p = r.add(&p.scale(rho1 / rho))?;
        rho = rho1;
        history.push(rho);
    }
    let converged = rho <= threshold;
    Ok((c, SolveReport::new(history, converged, started)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::IndexSpec;
    use crate::registry::SpaceRegistry;
    use crate::separable::laplacian;
    use crate::tensor::{make_delta, DeltaPair};

    fn line(n: usize) -> Arc<SpaceRegistry> {
        let mut reg = SpaceRegistry::new();
        reg.define_space("X", n).unwrap();
        reg.into_shared()
    }

    fn spec(reg: &Arc<SpaceRegistry>, text: &str) -> IndexSpec {
        IndexSpec::parse(reg, text).unwrap()
    }

    fn tensor(reg: &Arc<SpaceRegistry>, text: &str, values: Vec<f64>) -> DenseTensor {
        DenseTensor::from_components(&spec(reg, text), values).unwrap()
    }

    fn delta_system(reg: &Arc<SpaceRegistry>) -> LinearMap {
        let d = make_delta(
            reg,
            &[DeltaPair::new(
                SpaceId(0),
                (1, Variance::Contravariant),
                (0, Variance::Covariant),
            )],
        )
        .unwrap();
        LinearMap::dense(d).unwrap()
    }

    #[test]
    fn identity_system_returns_rhs() {
        let reg = line(4);
        let a = delta_system(&reg);
        let b = tensor(&reg, "x^1", vec![1.0, -2.0, 0.5, 4.0]);
        let u = direct_solve(&a, &b).unwrap();
        assert_eq!(u.spec().to_string(), "x^");
        assert_eq!(u.components(), b.components());
    }

    #[test]
    fn laplacian_line_solves_to_known_values() {
        let reg = line(3);
        let op = laplacian(&reg, &spec(&reg, "x^1,x_"), 2).unwrap();
        let a = LinearMap::separable(op);
        let b = tensor(&reg, "x^1", vec![1.0, 1.0, 1.0]);
        let u = direct_solve(&a, &b).unwrap();
        // Hand elimination of [[-2,1,0],[1,-2,1],[0,1,-2]] u = [1,1,1].
        let expect = [-1.5, -2.0, -1.5];
        for (got, want) in u.components().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
        let residual = a.apply(&u).unwrap().subtract(&b).unwrap();
        assert!(residual.max_abs() <= 1e-9 * (1.0 + b.max_abs()));
    }

    #[test]
    fn separable_kronecker_system_solves_by_factor_inverses() {
        let mut reg = SpaceRegistry::new();
        reg.define_space("X", 2).unwrap();
        reg.define_space("Y", 2).unwrap();
        let reg = reg.into_shared();
        // K = Kx ⊗ Ky with invertible 2x2 factors.
        let kx = tensor(&reg, "x^1,x_", vec![2.0, 1.0, 0.0, 1.0]);
        let ky = tensor(&reg, "y^1,y_", vec![1.0, 1.0, 1.0, 3.0]);
        let mut factors = std::collections::BTreeMap::new();
        factors.insert(SpaceId(0), kx.clone());
        factors.insert(SpaceId(1), ky.clone());
        let op = SeparableOperator::new(
            &spec(&reg, "x^,y^"),
            &spec(&reg, "x^1,y^1"),
            vec![crate::separable::Term {
                weight: 1.0,
                factors,
            }],
        )
        .unwrap();
        let a = LinearMap::separable(op);
        let b = tensor(&reg, "x^1,y^1", vec![1.0, 2.0, 3.0, 4.0]);
        let u = direct_solve(&a, &b).unwrap();

        // Oracle: apply the per-dimension inverse factors to b.
        let kx_inv = invert(&LinearMap::dense(kx).unwrap()).unwrap();
        let ky_inv = invert(&LinearMap::dense(ky).unwrap()).unwrap();
        let via_factors = tensor_product(&[&kx_inv, &ky_inv, &b]).unwrap();
        for (got, want) in u.components().iter().zip(via_factors.components()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn size_cap_enforced() {
        let reg = line(5000);
        let op = laplacian(&reg, &spec(&reg, "x^1,x_"), 2).unwrap();
        let a = LinearMap::separable(op);
        let b = DenseTensor::zeros(&spec(&reg, "x^1"));
        assert!(matches!(
            direct_solve(&a, &b).unwrap_err(),
            SolveError::SizeCap {
                size: 5000,
                cap: 4096
            }
        ));
    }

    #[test]
    fn invert_of_delta_is_identity_pattern() {
        let reg = line(3);
        let a = delta_system(&reg);
        let inv = invert(&a).unwrap();
        assert_eq!(inv.spec().to_string(), "x_1,x^2");
        let mut expect = vec![0.0; 9];
        for i in 0..3 {
            expect[i * 3 + i] = 1.0;
        }
        assert_eq!(inv.components(), expect.as_slice());
    }

    #[test]
    fn invert_round_trip_and_identity_product() {
        let mut reg = SpaceRegistry::new();
        reg.define_space("X", 2).unwrap();
        reg.define_space("Y", 2).unwrap();
        let reg = reg.into_shared();
        //

        // Well-conditioned random-ish 2x2x2x2 system: noise plus a strong
        // diagonal in the (output, input) pairing.
        let mut vals = vec![0.0f64; 16];
        for x1 in 0..2usize {
            for x in 0..2usize {
                for y1 in 0..2usize {
                    for y in 0..2usize {
                        let k = x1 * 8 + x * 4 + y1 * 2 + y;
                        let diag = if x1 == x && y1 == y { 3.0 } else { 0.0 };
                        vals[k] = ((k as f64) * 0.9).sin() * 0.3 + diag;
                    }
                }
            }
        }
        let t = tensor(&reg, "x^1,x_,y^1,y_", vals);
        let a = LinearMap::dense(t.clone()).unwrap();
        let inv = invert(&a).unwrap();

        // Ã·A equals the multi-pair delta within 1e-9.
        let product = tensor_product(&[&inv, &t]).unwrap();
        let delta = make_delta(
            &reg,
            &[
                DeltaPair::new(SpaceId(0), (2, Variance::Contravariant), (0, Variance::Covariant)),
                DeltaPair::new(SpaceId(1), (2, Variance::Contravariant), (0, Variance::Covariant)),
            ],
        )
        .unwrap();
        assert_eq!(product.indices(), delta.indices());
        for (got, want) in product.components().iter().zip(delta.components()) {
            assert!((got - want).abs() < 1e-9);
        }

        // Ã·A·U = U for random U (up to the relabeled frames).
        let u = tensor(&reg, "x^,y^", vec![0.3, -1.2, 2.2, 0.7]);
        let chained = tensor_product(&[&inv, &t, &u]).unwrap();
        assert_eq!(chained.spec().to_string(), "x^2,y^2");
        for (got, want) in chained.components().iter().zip(u.components()) {
            assert!((got - want).abs() < 1e-9);
        }

        // invert(invert(a)) recovers the system values.
        let inv_map = LinearMap::dense(inv).unwrap();
        let back = invert(&inv_map).unwrap();
        for (got, want) in back.components().iter().zip(t.components()) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn jacobi_on_diagonally_dominant_system() {
        let reg = line(2);
        let t = tensor(&reg, "x^1,x_", vec![2.0, 1.0, 1.0, 2.0]);
        let a = LinearMap::dense(t).unwrap();
        let b = tensor(&reg, "x^1", vec![3.0, 3.0]);
        let u0 = DenseTensor::zeros(&spec(&reg, "x^"));
        let (u, report) = jacobi(&a, &b, &u0, 1e-8, 60).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 60);
        for v in u.components() {
            assert!((v - 1.0).abs() < 1e-4);
        }
        // Strictly decreasing residual on this diagonally dominant system.
        for w in report.residual_history.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn jacobi_on_diagonal_system_converges_in_one_iteration() {
        let reg = line(3);
        let t = tensor(&reg, "x^1,x_", vec![2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 4.0]);
        let a = LinearMap::dense(t).unwrap();
        let b = tensor(&reg, "x^1", vec![2.0, 10.0, 8.0]);
        let u0 = DenseTensor::zeros(&spec(&reg, "x^"));
        let (u, report) = jacobi(&a, &b, &u0, 1e-20, 10).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
        assert_eq!(u.components(), &[1.0, 2.0, 2.0]);
    }

    #[test]
    fn jacobi_rejects_zero_diagonal() {
        let reg = line(2);
        let t = tensor(&reg, "x^1,x_", vec![0.0, 1.0, 1.0, 0.0]);
        let a = LinearMap::dense(t).unwrap();
        let b = tensor(&reg, "x^1", vec![1.0, 1.0]);
        let u0 = DenseTensor::zeros(&spec(&reg, "x^"));
        assert!(matches!(
            jacobi(&a, &b, &u0, 1e-8, 10).unwrap_err(),
            SolveError::ZeroDiagonal { at: 0 }
        ));
    }

    #[test]
    fn cg_reaches_tridiagonal_solution_in_three_iterations() {
        let reg = line(3);
        // Negated Laplacian: SPD tridiagonal [2,-1;-1,2,-1;-1,2].
        let t = tensor(
            &reg,
            "x^1,x_",
            vec![2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0],
        );
        let a = LinearMap::dense(t).unwrap();
        let b = tensor(&reg, "x^1", vec![1.0, 1.0, 1.0]);
        let u0 = DenseTensor::zeros(&spec(&reg, "x^"));
        let (u, report) = conjugate_gradients(&a, &b, &u0, 1e-20, 10).unwrap();
        assert!(report.iterations <= 3, "took {}", report.iterations);
        let expect = [1.5, 2.0, 1.5];
        for (got, want) in u.components().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-10);
        }
        // Agrees with direct elimination.
        let direct = direct_solve(&a, &b).unwrap();
        for (got, want) in u.components().iter().zip(direct.components()) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn cg_with_zero_rhs_takes_zero_iterations() {
        let reg = line(3);
        let t = tensor(
            &reg,
            "x^1,x_",
            vec![2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0],
        );
        let a = LinearMap::dense(t).unwrap();
        let b = DenseTensor::zeros(&spec(&reg, "x^1"));
        let u0 = DenseTensor::zeros(&spec(&reg, "x^"));
        let (u, report) = conjugate_gradients(&a, &b, &u0, 1e-12, 10).unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.converged);
        assert!(u.components().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn solver_shape_mismatch_reported() {
        let reg = line(3);
        let a = delta_system(&reg);
        let wrong = DenseTensor::zeros(&spec(&reg, "x^"));
        assert!(matches!(
            direct_solve(&a, &wrong).unwrap_err(),
            SolveError::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn linear_map_is_linear() {
        let reg = line(4);
        let op = laplacian(&reg, &spec(&reg, "x^1,x_"), 2).unwrap();
        let a = LinearMap::separable(op);
        let u = tensor(&reg, "x^", vec![1.0, -2.0, 0.0, 3.0]);
        let v = tensor(&reg, "x^", vec![0.5, 0.25, -1.0, 2.0]);
        let lhs = a
            .apply(&u.scale(2.0).add(&v.scale(-3.0)).unwrap())
            .unwrap();
        let rhs = a
            .apply(&u)
            .unwrap()
            .scale(2.0)
            .add(&a.apply(&v).unwrap().scale(-3.0))
            .unwrap();
        for (x, y) in lhs.components().iter().zip(rhs.components()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn weighted_sum_and_diagonal_maps() {
        let reg = line(3);
        let d = tensor(&reg, "x^", vec![1.0, 2.0, 3.0]);
        let diag = LinearMap::diagonal_map(d).unwrap();
        let u = tensor(&reg, "x^", vec![1.0, 1.0, 1.0]);
        let applied = diag.apply(&u).unwrap();
        assert_eq!(applied.components(), &[1.0, 2.0, 3.0]);

        let sum = LinearMap::weighted_sum(vec![(2.0, diag.clone()), (1.0, diag)]).unwrap();
        let applied = sum.apply(&u).unwrap();
        assert_eq!(applied.components(), &[3.0, 6.0, 9.0]);
        assert_eq!(sum.diagonal().unwrap().components(), &[3.0, 6.0, 9.0]);
    }
}
