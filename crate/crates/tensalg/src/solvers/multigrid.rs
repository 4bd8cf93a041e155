//! Tensor multigrid: a V-cycle solver that keeps every scale structured.
//!
//! The hierarchy halves each grid dimension (rounded up) per scale until
//! every extent reaches 3. Transfers are separable: full-weighting
//! restriction and linear-interpolation prolongation, one small matrix per
//! dimension. Coarse systems are built by Galerkin products applied per
//! dimension to each separable term, so coarser scales remain separable
//! sums and are never assembled densely; diagonal (data) terms coarsen to
//! the diagonal of their Galerkin projection. Smoothing is damped Jacobi.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use crate::notation::IndexSpec;
use crate::registry::{SpaceId, SpaceRegistry};
use crate::separable::{factor_from_matrix, factor_matrix, SeparableOperator, Term};
use crate::tensor::{inner_product, tensor_product, DenseTensor};

use super::dense::Mat;
use super::{direct_solve, LinearMap, SolveError, SolveReport};

/// Default damped-Jacobi smoothing weight (the standard choice for the
/// Laplacian model problem).
pub const DEFAULT_SMOOTHER_WEIGHT: f64 = 2.0 / 3.0;

/// How deep to coarsen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Levels {
    /// Coarsen until any grid extent reaches 3.
    Auto,
    /// At most this many scales (including the finest).
    Max(usize),
}

/// Grid-transfer matrices for one dimension between two adjacent scales.
#[derive(Debug, Clone)]
pub struct DimTransfer {
    pub space: SpaceId,
    /// coarse x fine full-weighting restriction.
    pub restrict: Mat,
    /// fine x coarse linear-interpolation prolongation.
    pub prolong: Mat,
}

/// One scale: its registry, system, cached smoother diagonal, and the
/// transfers to the next-coarser scale (absent at the coarsest).
#[derive(Debug, Clone)]
pub struct Scale {
    pub registry: Arc<SpaceRegistry>,
    pub system: LinearMap,
    recip_diag: DenseTensor,
    pub transfers: Option<Vec<DimTransfer>>,
}

#[derive(Debug, Clone)]
pub struct MultigridHierarchy {
    scales: Vec<Scale>,
    smoother_weight: f64,
}

/// Full-weighting restriction: coarse point i averages fine points
/// 2i-1, 2i, 2i+1 with weights 1/4, 1/2, 1/4 (truncated at the boundary).
fn restriction_matrix(fine: usize, coarse: usize) -> Mat {
    let mut r = Mat::zeros(coarse, fine);
    for i in 0..coarse {
        let c = 2 * i;
        r.set(i, c, 0.5);
        if c >= 1 {
            r.set(i, c - 1, 0.25);
        }
        if c + 1 < fine {
            r.set(i, c + 1, 0.25);
        }
    }
    r
}

/// Linear interpolation: the transpose pattern of full weighting, scaled x2,
/// so constants are preserved.
fn prolongation_matrix(fine: usize, coarse: usize) -> Mat {
    let mut p = Mat::zeros(fine, coarse);
    for i in 0..coarse {
        let c = 2 * i;
        p.set(c, i, 1.0);
        if c >= 1 {
            p.set(c - 1, i, 0.5);
        }
        if c + 1 < fine {
            p.set(c + 1, i, 0.5);
        }
    }
    p
}

fn coarse_extent(n: usize) -> usize {
    n.div_ceil(2)
}

/// Applies a matrix along one axis of a row-major array.
fn apply_along_axis(mat: &Mat, src: &[f64], extents: &[usize], axis: usize) -> Vec<f64> {
    let n_in = extents[axis];
    assert_eq!(mat.cols, n_in);
    let before: usize = extents[..axis].iter().product();
    let after: usize = extents[axis + 1..].iter().product();
    let n_out = mat.rows;
    let mut out = crate::alloc_track::alloc_components(before * n_out * after);
    for b in 0..before {
        for i in 0..n_out {
            let row = &mat.data[i * n_in..(i + 1) * n_in];
            let dst = &mut out[(b * n_out + i) * after..(b * n_out + i + 1) * after];
            for (j, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let s = &src[(b * n_in + j) * after..(b * n_in + j + 1) * after];
                for (d, v) in dst.iter_mut().zip(s) {
                    *d += w * v;
                }
            }
        }
    }
    out
}

fn coarse_registry(
    fine: &Arc<SpaceRegistry>,
    grid_spaces: &[SpaceId],
) -> Arc<SpaceRegistry> {
    let mut reg = SpaceRegistry::new();
    for (id, space) in fine.spaces() {
        let extent = if grid_spaces.contains(&id) {
            coarse_extent(space.extent)
        } else {
            space.extent
        };
        reg.define_space(&space.name, extent).unwrap();
    }
    reg.into_shared()
}

/// Rebuilds an index spec against another registry with identical space
/// names (the extents may differ).
fn respec(spec: &IndexSpec, registry: &Arc<SpaceRegistry>) -> IndexSpec {
    let source = spec.registry();
    let indices = spec
        .indices()
        .iter()
        .map(|i| {
            let id = registry.canonical_rank(source.name(i.space)).unwrap();
            crate::notation::TensorIndex::new(id, i.frame, i.variance)
        })
        .collect();
    IndexSpec::from_indices(registry, indices).unwrap()
}

/// Galerkin projection of a separable operator: per dimension and term,
/// coarse factor = restrict * factor * prolong (identity dimensions get the
/// explicit restrict*prolong matrix, so every scale stays separable).
fn coarsen_separable(
    op: &SeparableOperator,
    transfers: &[DimTransfer],
    coarse_reg: &Arc<SpaceRegistry>,
) -> Result<SeparableOperator, SolveError> {
    let fine_reg = op.registry();
    let input = respec(&op.input_spec(), coarse_reg);
    let output = respec(&op.output_spec(), coarse_reg);
    let mut terms = Vec::with_capacity(op.terms().len());
    for term in op.terms() {
        let mut factors = BTreeMap::new();
        for t in transfers {
            let out_f = op.output_index(t.space).unwrap();
            let in_f = op.input_index(t.space).unwrap();
            let fine_mat = match term.factors.get(&t.space) {
                Some(f) => {
                    let (n, _, m) = factor_matrix(f, out_f, in_f.flipped());
                    Mat::from_rows(n, n, m)
                }
                None => Mat::identity(fine_reg.extent(t.space)),
            };
            let coarse_mat = t.restrict.matmul(&fine_mat).matmul(&t.prolong);
            let coarse_space = coarse_reg.canonical_rank(fine_reg.name(t.space)).unwrap();
            let out_c = crate::notation::TensorIndex::new(coarse_space, out_f.frame, out_f.variance);
            let in_c = crate::notation::TensorIndex::new(
                coarse_space,
                in_f.frame,
                in_f.variance.flipped(),
            );
            factors.insert(
                coarse_space,
                factor_from_matrix(coarse_reg, out_c, in_c, &coarse_mat.data)?,
            );
        }
        terms.push(Term {
            weight: term.weight,
            factors,
        });
    }
    Ok(SeparableOperator::new(&input, &output, terms)?)
}

/// Coarsens any map: separable parts by per-dimension Galerkin, diagonal
/// parts to the diagonal of their Galerkin projection (computed separably),
/// dense parts by the full Galerkin triple product.
fn coarsen_map(
    map: &LinearMap,
    transfers: &[DimTransfer],
    coarse_reg: &Arc<SpaceRegistry>,
) -> Result<LinearMap, SolveError> {
    match map {
        LinearMap::Separable(op) => Ok(LinearMap::Separable(coarsen_separable(
            op, transfers, coarse_reg,
        )?)),
        LinearMap::Diagonal(d) => {
            // diag(R D P) separates into per-dimension weight transforms
            // W[I,x] = R[I,x] * P[x,I].
            let mut extents: Vec<usize> = d.extents();
            let mut data = d.components().to_vec();
            for (axis, t) in transfers.iter().enumerate() {
                let mut w = Mat::zeros(t.restrict.rows, t.restrict.cols);
                for i in 0..w.rows {
                    for j in 0..w.cols {
                        w.set(i, j, t.restrict.get(i, j) * t.prolong.get(j, i));
                    }
                }
                data = apply_along_axis(&w, &data, &extents, axis);
                extents[axis] = t.restrict.rows;
            }
            let spec = respec(&d.spec(), coarse_reg);
            Ok(LinearMap::Diagonal(DenseTensor::from_components(
                &spec, data,
            )?))
        }
        LinearMap::Sum(parts) => {
            let coarsened = parts
                .iter()
                .map(|(w, p)| Ok((*w, coarsen_map(p, transfers, coarse_reg)?)))
                .collect::<Result<Vec<_>, SolveError>>()?;
            Ok(LinearMap::Sum(coarsened))
        }
        LinearMap::Dense(_) => {
            // Exact dense Galerkin: kron(R) * A * kron(P).
            let fine = map.densify()?;
            let mut r_full = Mat::identity(1);
            let mut p_full = Mat::identity(1);
            for t in transfers {
                r_full = kron(&r_full, &t.restrict);
                p_full = kron(&p_full, &t.prolong);
            }
            let coarse = r_full.matmul(&fine).matmul(&p_full);
            let out_spec = respec(&map.output_spec(), coarse_reg);
            let in_spec = respec(&map.input_spec(), coarse_reg);
            let mut user = out_spec.indices().to_vec();
            user.extend(in_spec.indices().iter().map(|i| i.flipped()));
            let spec = IndexSpec::from_indices(coarse_reg, user).map_err(crate::tensor::TensorError::from)?;
            LinearMap::dense(DenseTensor::from_components(&spec, coarse.data)?)
        }
    }
}

fn kron(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows * b.rows, a.cols * b.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let v = a.get(i, j);
            if v == 0.0 {
                continue;
            }
            for k in 0..b.rows {
                for l in 0..b.cols {
                    out.set(i * b.rows + k, j * b.cols + l, v * b.get(k, l));
                }
            }
        }
    }
    out
}

fn make_scale(registry: &Arc<SpaceRegistry>, system: LinearMap) -> Result<Scale, SolveError> {
    let diag = system.diagonal()?;
    if let Some(at) = diag.components().iter().position(|&v| v == 0.0) {
        return Err(SolveError::ZeroDiagonal { at });
    }
    let mut recip_diag = diag;
    for v in recip_diag.components_mut() {
        *v = 1.0 / *v;
    }
    Ok(Scale {
        registry: Arc::clone(registry),
        system,
        recip_diag,
        transfers: None,
    })
}

impl MultigridHierarchy {
    pub fn scales(&self) -> &[Scale] {
        &self.scales
    }

    pub fn scale(&self, i: usize) -> &Scale {
        &self.scales[i]
    }

    pub fn smoother_weight(&self) -> f64 {
        self.smoother_weight
    }

    pub fn with_smoother_weight(mut self, weight: f64) -> Self {
        self.smoother_weight = weight;
        self
    }

}

/// Builds the multigrid hierarchy for a separable system.
pub fn build_hierarchy(
    a: &SeparableOperator,
    levels: Levels,
) -> Result<MultigridHierarchy, SolveError> {
    build_hierarchy_from_map(LinearMap::Separable(a.clone()), levels)
}

/// Hierarchy construction for any map whose parts the Galerkin coarsening
/// understands (separable, diagonal, dense, and sums of those).
pub fn build_hierarchy_from_map(
    system: LinearMap,
    levels: Levels,
) -> Result<MultigridHierarchy, SolveError> {
    let registry = Arc::clone(system.registry());
    let grid_spaces: Vec<SpaceId> = system
        .input_spec()
        .indices()
        .iter()
        .map(|i| i.space)
        .collect();
    for &s in &grid_spaces {
        if registry.extent(s) < 3 {
            return Err(SolveError::ShapeMismatch {
                expected: "grid extents of at least 3".to_string(),
                found: format!(
                    "space {} has extent {}",
                    registry.name(s),
                    registry.extent(s)
                ),
            });
        }
    }
    let max_scales = match levels {
        Levels::Auto => usize::MAX,
        Levels::Max(n) => n.max(1),
    };
    let mut scales = vec![make_scale(&registry, system)?];
    // Coarsen while every grid extent is still above 3.
    while scales.len() < max_scales {
        let (fine_reg, fine_system) = {
            let fine = scales.last().unwrap();
            (Arc::clone(&fine.registry), fine.system.clone())
        };
        let fine_grid: Vec<SpaceId> = fine_system
            .input_spec()
            .indices()
            .iter()
            .map(|i| i.space)
            .collect();
        if fine_grid.iter().any(|&s| fine_reg.extent(s) <= 3) {
            break;
        }
        let coarse_reg = coarse_registry(&fine_reg, &fine_grid);
        let transfers: Vec<DimTransfer> = fine_grid
            .iter()
            .map(|&s| {
                let fine_n = fine_reg.extent(s);
                let coarse_n = coarse_extent(fine_n);
                DimTransfer {
                    space: s,
                    restrict: restriction_matrix(fine_n, coarse_n),
                    prolong: prolongation_matrix(fine_n, coarse_n),
                }
            })
            .collect();
        let coarse_system = coarsen_map(&fine_system, &transfers, &coarse_reg)?;
        let coarse_scale = make_scale(&coarse_reg, coarse_system)?;
        scales.last_mut().unwrap().transfers = Some(transfers);
        scales.push(coarse_scale);
    }
    Ok(MultigridHierarchy {
        scales,
        smoother_weight: DEFAULT_SMOOTHER_WEIGHT,
    })
}

fn smooth(
    h: &MultigridHierarchy,
    scale: usize,
    mut u: DenseTensor,
    b: &DenseTensor,
    sweeps: usize,
) -> Result<DenseTensor, SolveError> {
    let s = &h.scales[scale];
    let input_spec = s.system.input_spec();
    let output_spec = s.system.output_spec();
    for _ in 0..sweeps {
        let r = s.system.apply(&u)?.subtract(b)?;
        let r_in = r.reframe(&output_spec, &input_spec)?;
        let correction = tensor_product(&[&r_in, &s.recip_diag])?;
        u.add_scaled(-h.smoother_weight, &correction)?;
    }
    Ok(u)
}

/// Moves a tensor between adjacent scales, applying one transfer matrix per
/// dimension to its component array.
fn transfer(
    tensor: &DenseTensor,
    transfers: &[DimTransfer],
    target_spec: &IndexSpec,
    restricting: bool,
) -> Result<DenseTensor, SolveError> {
    let mut extents = tensor.extents();
    let mut data = tensor.components().to_vec();
    for (axis, t) in transfers.iter().enumerate() {
        let mat = if restricting { &t.restrict } else { &t.prolong };
        data = apply_along_axis(mat, &data, &extents, axis);
        extents[axis] = mat.rows;
    }
    Ok(DenseTensor::from_components(target_spec, data)?)
}

/// One V-cycle at the given scale: presmooth, restrict the residual, recurse
/// with a zero coarse guess, prolong the correction, postsmooth. The
/// coarsest scale solves directly.
pub fn tmg_vcycle(
    h: &MultigridHierarchy,
    scale: usize,
    u: &DenseTensor,
    b: &DenseTensor,
    pre_sweeps: usize,
    post_sweeps: usize,
) -> Result<DenseTensor, SolveError> {
    let s = &h.scales[scale];
    match &s.transfers {
        None => direct_solve(&s.system, b),
        Some(transfers) => {
            let mut u = smooth(h, scale, u.clone(), b, pre_sweeps)?;
            let residual = b.subtract(&s.system.apply(&u)?)?;
            let coarse = &h.scales[scale + 1];
            let coarse_b = transfer(
                &residual,
                transfers,
                &coarse.system.output_spec(),
                true,
            )?;
            let coarse_u0 = DenseTensor::zeros(&coarse.system.input_spec());
            let coarse_u = tmg_vcycle(h, scale + 1, &coarse_u0, &coarse_b, pre_sweeps, post_sweeps)?;
            let correction = transfer(&coarse_u, transfers, &s.system.input_spec(), false)?;
            u = u.add(&correction)?;
            smooth(h, scale, u, b, post_sweeps)
        }
    }
}

/// Repeats V-cycles from the finest scale until `⟨R,R⟩ ≤ threshold`, the
/// cycle budget runs out, or the residual stagnates (reduction factor above
/// 0.99 for three consecutive cycles, reported as non-convergence).
pub fn tmg_solve(
    h: &MultigridHierarchy,
    b: &DenseTensor,
    threshold: f64,
    max_cycles: usize,
    pre_sweeps: usize,
    post_sweeps: usize,
) -> Result<(DenseTensor, SolveReport), SolveError> {
    let started = Instant::now();
    let top = &h.scales[0];
    let output_spec = top.system.output_spec();
    if b.indices() != output_spec.indices() {
        return Err(SolveError::ShapeMismatch {
            expected: output_spec.to_string(),
            found: b.spec().to_string(),
        });
    }
    let mut u = DenseTensor::zeros(&top.system.input_spec());
    let mut r = b.subtract(&top.system.apply(&u)?)?;
    let mut rho = inner_product(&r, &r)?;
    let mut history = vec![rho];
    let mut stagnant = 0usize;
    while rho > threshold && history.len() <= max_cycles {
        u = tmg_vcycle(h, 0, &u, b, pre_sweeps, post_sweeps)?;
        r = b.subtract(&top.system.apply(&u)?)?;
        let rho1 = inner_product(&r, &r)?;
        if !rho1.is_finite() {
            return Err(SolveError::NonFinite {
                iteration: history.len(),
            });
        }
        if rho > 0.0 && rho1 / rho > 0.99 {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        rho = rho1;
        history.push(rho);
        if stagnant >= 3 {
            break;
        }
    }
    let converged = rho <= threshold;
    Ok((u, SolveReport::new(history, converged, started)))
}
