//! Separable operators: sums of per-dimension order-2 factors.
//!
//! A [`SeparableOperator`] represents a multidimensional linear map as a sum
//! of terms, each term holding at most one order-2 factor per space. Spaces
//! without a factor act as the identity on that dimension. One term with a
//! factor on every dimension is a fully separable transform (convolution,
//! DFT); one term per dimension with a single factor each is a separable sum
//! (the discretized Laplacian). Application runs dimension by dimension, so
//! the full coefficient tensor of the map is never materialized.
//!
//! Boundary convention throughout is zero padding (Dirichlet): stencils are
//! truncated at the grid edge.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::notation::{IndexSpec, TensorIndex, Variance};
use crate::registry::{SpaceId, SpaceRegistry};
use crate::tensor::{
    make_delta, product_pair, same_registry, DeltaPair, DenseTensor, TensorError,
};

#[derive(Debug, Error, PartialEq)]
pub enum SeparableError {
    #[error("operator spec must pair one output and one input index per space, got `{0}`")]
    BadOperatorSpec(String),
    #[error("unsupported stencil order {0}: only the second-order 3-point stencil is implemented")]
    UnsupportedOrder(usize),
    #[error("kernel length must be odd, got {0}")]
    EvenKernel(usize),
    #[error("resampling by {factor} needs extents {expected}, got {found}")]
    ResampleExtents {
        factor: usize,
        expected: String,
        found: String,
    },
    #[error("shear rotation angle {0} out of range (|angle| < pi/2)")]
    AngleOutOfRange(f64),
    #[error("input tensor spec `{found}` does not match operator input `{expected}`")]
    InputMismatch { expected: String, found: String },
    #[error("term factor on `{space}` must be order-2 over that space with one output and one input index")]
    BadFactor { space: String },
    #[error("operator specs do not cover the same spaces")]
    SpaceMismatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One separable term: a weight and per-space order-2 factors.
#[derive(Debug, Clone)]
pub struct Term {
    pub weight: f64,
    pub factors: BTreeMap<SpaceId, DenseTensor>,
}

impl Term {
    pub fn identity() -> Self {
        Self {
            weight: 1.0,
            factors: BTreeMap::new(),
        }
    }

    pub fn with_factor(weight: f64, space: SpaceId, factor: DenseTensor) -> Self {
        let mut factors = BTreeMap::new();
        factors.insert(space, factor);
        Self { weight, factors }
    }
}

/// A structured linear map applied dimension by dimension.
#[derive(Debug, Clone)]
pub struct SeparableOperator {
    registry: Arc<SpaceRegistry>,
    /// Contravariant index per space, canonical order: the argument's spec.
    input: Vec<TensorIndex>,
    /// Contravariant index per space, canonical order: the result's spec.
    output: Vec<TensorIndex>,
    terms: Vec<Term>,
}

impl SeparableOperator {
    pub fn new(
        input_spec: &IndexSpec,
        output_spec: &IndexSpec,
        terms: Vec<Term>,
    ) -> Result<Self, SeparableError> {
        if !same_registry(input_spec.registry(), output_spec.registry()) {
            return Err(SeparableError::SpaceMismatch);
        }
        let registry = Arc::clone(input_spec.registry());
        let input = one_contra_per_space(input_spec)?;
        let output = one_contra_per_space(output_spec)?;
        if spaces_of(&input) != spaces_of(&output) {
            return Err(SeparableError::SpaceMismatch);
        }
        let op = Self {
            registry,
            input,
            output,
            terms,
        };
        for term in &op.terms {
            for (&space, factor) in &term.factors {
                op.validate_factor(space, factor)?;
            }
        }
        Ok(op)
    }

    fn validate_factor(&self, space: SpaceId, factor: &DenseTensor) -> Result<(), SeparableError> {
        let bad = || SeparableError::BadFactor {
            space: self.registry.name(space).to_string(),
        };
        if !same_registry(&self.registry, factor.registry()) {
            return Err(bad());
        }
        let out = self.output_index(space).ok_or_else(bad)?;
        let in_ = self.input_index(space).ok_or_else(bad)?;
        let expect = {
            let mut v = vec![out, in_.flipped()];
            v.sort_by_key(|i| i.canonical_key());
            v
        };
        if factor.indices() != expect.as_slice() {
            return Err(bad());
        }
        Ok(())
    }

    pub fn registry(&self) -> &Arc<SpaceRegistry> {
        &self.registry
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn input_spec(&self) -> IndexSpec {
        IndexSpec::from_indices(&self.registry, self.input.clone()).unwrap()
    }

    pub fn output_spec(&self) -> IndexSpec {
        IndexSpec::from_indices(&self.registry, self.output.clone()).unwrap()
    }

    pub fn spaces(&self) -> Vec<SpaceId> {
        self.input.iter().map(|i| i.space).collect()
    }

    pub fn input_index(&self, space: SpaceId) -> Option<TensorIndex> {
        self.input.iter().copied().find(|i| i.space == space)
    }

    pub fn output_index(&self, space: SpaceId) -> Option<TensorIndex> {
        self.output.iter().copied().find(|i| i.space == space)
    }

    /// Applies the operator: `sum over terms of weight * (per-dimension
    /// factor products)`. Equals the dense materialization without ever
    /// allocating it.
    pub fn apply(&self, u: &DenseTensor) -> Result<DenseTensor, SeparableError> {
        if u.indices() != self.input.as_slice() {
            return Err(SeparableError::InputMismatch {
                expected: self.input_spec().to_string(),
                found: u.spec().to_string(),
            });
        }
        let mut out = DenseTensor::zeros(&self.output_spec());
        for term in &self.terms {
            let mut v = u.clone();
            for &space in &self.spaces() {
                let in_ = self.input_index(space).unwrap();
                let out_ = self.output_index(space).unwrap();
                v = match term.factors.get(&space) {
                    Some(factor) => apply_factor(factor, &v, in_, out_)?,
                    None => {
                        if in_ == out_ {
                            v
                        } else {
                            let from = IndexSpec::from_indices(&self.registry, vec![in_]).unwrap();
                            let to = IndexSpec::from_indices(&self.registry, vec![out_]).unwrap();
                            v.reframe(&from, &to)?
                        }
                    }
                };
            }
            out.add_scaled(term.weight, &v)?;
        }
        Ok(out)
    }

    /// Main diagonal over the input spec: for each grid point, the sum over
    /// terms of the product of per-dimension factor diagonals (1 for
    /// identity dimensions).
    pub fn diagonal(&self) -> DenseTensor {
        let spaces = self.spaces();
        let extents: Vec<usize> = spaces.iter().map(|&s| self.registry.extent(s)).collect();
        let mut out = DenseTensor::zeros(&self.input_spec());
        for term in &self.terms {
            let diags: Vec<Vec<f64>> = spaces
                .iter()
                .zip(&extents)
                .map(|(&space, &extent)| match term.factors.get(&space) {
                    Some(factor) => {
                        let (rows, _, data) = factor_matrix(
                            factor,
                            self.output_index(space).unwrap(),
                            self.input_index(space).unwrap().flipped(),
                        );
                        (0..rows).map(|i| data[i * rows + i]).collect()
                    }
                    None => vec![1.0; extent],
                })
                .collect();
            let mut coords = vec![0usize; spaces.len()];
            let total: usize = extents.iter().product();
            for k in 0..total {
                let value: f64 = coords.iter().zip(&diags).map(|(&c, d)| d[c]).product();
                out.components_mut()[k] += term.weight * value;
                for j in (0..coords.len()).rev() {
                    coords[j] += 1;
                    if coords[j] < extents[j] {
                        break;
                    }
                    coords[j] = 0;
                }
            }
        }
        out
    }

    /// Assembles the full system tensor by multiplying out every term's
    /// factors and identity deltas. Intended for oracles and small direct
    /// solves; this is exactly what `apply` avoids.
    pub fn materialize(&self) -> Result<DenseTensor, SeparableError> {
        let mut total: Option<DenseTensor> = None;
        for term in &self.terms {
            let mut factors: Vec<DenseTensor> = Vec::new();
            for &space in &self.spaces() {
                let in_ = self.input_index(space).unwrap();
                let out_ = self.output_index(space).unwrap();
                match term.factors.get(&space) {
                    Some(f) => factors.push(f.clone()),
                    None => factors.push(identity_factor(&self.registry, out_, in_.flipped())?),
                }
            }
            // The factors combine as a pure outer product: when input and
            // output share a frame the (in, out) pair must stay uncontracted,
            // so every group is marked external.
            let keep: std::collections::BTreeSet<crate::tensor::IndexGroup> = factors
                .iter()
                .flat_map(|f| f.indices().iter().map(TensorIndex::group))
                .collect();
            let mut dense = factors[0].clone();
            for f in &factors[1..] {
                dense = crate::tensor::product_pair_in_context(&dense, f, &keep)?;
            }
            let dense = dense.scale(term.weight);
            total = Some(match total {
                None => dense,
                Some(acc) => acc.add(&dense)?,
            });
        }
        Ok(total.expect("operator has at least one term"))
    }

    /// Same operator with every term weight scaled.
    pub fn scaled(&self, factor: f64) -> SeparableOperator {
        SeparableOperator {
            registry: Arc::clone(&self.registry),
            input: self.input.clone(),
            output: self.output.clone(),
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    weight: t.weight * factor,
                    factors: t.factors.clone(),
                })
                .collect(),
        }
    }

    /// `self ∘ other`: applies `other` first. The inner specs must match.
    pub fn compose(&self, other: &SeparableOperator) -> Result<SeparableOperator, SeparableError> {
        if !same_registry(&self.registry, &other.registry) || self.input != other.output {
            return Err(SeparableError::SpaceMismatch);
        }
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for ta in &self.terms {
            for tb in &other.terms {
                let mut factors = BTreeMap::new();
                for &space in &self.spaces() {
                    let out_ = self.output_index(space).unwrap();
                    let mid = self.input_index(space).unwrap();
                    let in_ = other.input_index(space).unwrap();
                    let fa = ta.factors.get(&space);
                    let fb = tb.factors.get(&space);
                    let composed = match (fa, fb) {
                        (None, None) => None,
                        (Some(fa), None) => Some(refit_factor(
                            &self.registry,
                            fa,
                            out_,
                            mid.flipped(),
                            out_,
                            in_.flipped(),
                        )?),
                        (None, Some(fb)) => Some(refit_factor(
                            &self.registry,
                            fb,
                            mid,
                            in_.flipped(),
                            out_,
                            in_.flipped(),
                        )?),
                        (Some(fa), Some(fb)) => {
                            let (n, _, ma) = factor_matrix(fa, out_, mid.flipped());
                            let (_, _, mb) = factor_matrix(fb, mid, in_.flipped());
                            let mut mc = vec![0.0; n * n];
                            for i in 0..n {
                                for j in 0..n {
                                    let mut acc = 0.0;
                                    for k in 0..n {
                                        acc += ma[i * n + k] * mb[k * n + j];
                                    }
                                    mc[i * n + j] = acc;
                                }
                            }
                            Some(factor_from_matrix(
                                &self.registry,
                                out_,
                                in_.flipped(),
                                &mc,
                            )?)
                        }
                    };
                    if let Some(f) = composed {
                        factors.insert(space, f);
                    }
                }
                terms.push(Term {
                    weight: ta.weight * tb.weight,
                    factors,
                });
            }
        }
        SeparableOperator::new(&other.input_spec(), &self.output_spec(), terms)
    }

    /// Transpose: swaps the roles of input and output indices and transposes
    /// every factor matrix.
    pub fn transpose(&self) -> Result<SeparableOperator, SeparableError> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let mut factors = BTreeMap::new();
            for (&space, factor) in &term.factors {
                let out_ = self.output_index(space).unwrap();
                let in_ = self.input_index(space).unwrap();
                let (n, _, m) = factor_matrix(factor, out_, in_.flipped());
                let mut mt = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        mt[i * n + j] = m[j * n + i];
                    }
                }
                factors.insert(
                    space,
                    factor_from_matrix(&self.registry, in_, out_.flipped(), &mt)?,
                );
            }
            terms.push(Term {
                weight: term.weight,
                factors,
            });
        }
        SeparableOperator::new(&self.output_spec(), &self.input_spec(), terms)
    }
}

fn spaces_of(indices: &[TensorIndex]) -> Vec<SpaceId> {
    indices.iter().map(|i| i.space).collect()
}

fn one_contra_per_space(spec: &IndexSpec) -> Result<Vec<TensorIndex>, SeparableError> {
    let mut indices = spec.indices().to_vec();
    indices.sort_by_key(|i| i.canonical_key());
    let mut seen: Vec<SpaceId> = Vec::new();
    for idx in &indices {
        if idx.variance != Variance::Contravariant || seen.contains(&idx.space) {
            return Err(SeparableError::BadOperatorSpec(spec.to_string()));
        }
        seen.push(idx.space);
    }
    if indices.is_empty() {
        return Err(SeparableError::BadOperatorSpec(spec.to_string()));
    }
    Ok(indices)
}

/// Applies an order-2 factor along its dimension. When the factor's input and
/// output share a frame, the contraction is routed through a fresh bridge
/// frame so the output axis is not merged with the input.
fn apply_factor(
    factor: &DenseTensor,
    v: &DenseTensor,
    in_: TensorIndex,
    out_: TensorIndex,
) -> Result<DenseTensor, SeparableError> {
    if in_.group() != out_.group() {
        return Ok(product_pair(factor, v)?);
    }
    let registry = v.registry();
    let fresh = v
        .indices()
        .iter()
        .chain(factor.indices())
        .map(|i| i.frame)
        .max()
        .unwrap_or(0)
        + 1;
    let bridge_in = TensorIndex::new(in_.space, fresh, in_.variance);
    let one = |idx: TensorIndex| IndexSpec::from_indices(registry, vec![idx]).unwrap();
    let factor_bridged = factor.reframe(&one(in_.flipped()), &one(bridge_in.flipped()))?;
    let v_bridged = v.reframe(&one(in_), &one(bridge_in))?;
    Ok(product_pair(&factor_bridged, &v_bridged)?)
}

/// Reads an order-2 factor into a row-major `[out][in]` matrix.
pub fn factor_matrix(
    factor: &DenseTensor,
    out_: TensorIndex,
    in_cov: TensorIndex,
) -> (usize, usize, Vec<f64>) {
    let registry = factor.registry();
    let rows = registry.extent(out_.space);
    let cols = registry.extent(in_cov.space);
    let out_first = factor.indices()[0] == out_;
    debug_assert!(factor.indices().len() == 2);
    let mut data = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            data[i * cols + j] = if out_first {
                factor.get(&[i, j])
            } else {
                factor.get(&[j, i])
            };
        }
    }
    (rows, cols, data)
}

/// Builds an order-2 factor from a row-major `[out][in]` matrix.
pub fn factor_from_matrix(
    registry: &Arc<SpaceRegistry>,
    out_: TensorIndex,
    in_cov: TensorIndex,
    data: &[f64],
) -> Result<DenseTensor, SeparableError> {
    let spec = IndexSpec::from_indices(registry, vec![out_, in_cov])
        .map_err(TensorError::from)?;
    Ok(DenseTensor::from_components(&spec, data.to_vec())?)
}

/// Rebuilds a factor under new index labels, keeping the matrix values.
fn refit_factor(
    registry: &Arc<SpaceRegistry>,
    factor: &DenseTensor,
    old_out: TensorIndex,
    old_in_cov: TensorIndex,
    new_out: TensorIndex,
    new_in_cov: TensorIndex,
) -> Result<DenseTensor, SeparableError> {
    let (_, _, m) = factor_matrix(factor, old_out, old_in_cov);
    factor_from_matrix(registry, new_out, new_in_cov, &m)
}

/// Identity factor between two frames of one space (or one frame, in which
/// case an explicit unit matrix is built).
pub fn identity_factor(
    registry: &Arc<SpaceRegistry>,
    out_: TensorIndex,
    in_cov: TensorIndex,
) -> Result<DenseTensor, SeparableError> {
    if (out_.frame, out_.variance) != (in_cov.frame, in_cov.variance) {
        Ok(make_delta(
            registry,
            &[DeltaPair::new(
                out_.space,
                (out_.frame, out_.variance),
                (in_cov.frame, in_cov.variance),
            )],
        )?)
    } else {
        let n = registry.extent(out_.space);
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        factor_from_matrix(registry, out_, in_cov, &data)
    }
}

/// Parses an operator spec like `"x^1,x_,y^1,y_"` into (per-space output
/// index, per-space input index as the argument sees it).
fn operator_spec_pairs(
    spec: &IndexSpec,
) -> Result<Vec<(TensorIndex, TensorIndex)>, SeparableError> {
    let mut by_space: BTreeMap<SpaceId, (Option<TensorIndex>, Option<TensorIndex>)> =
        BTreeMap::new();
    for idx in spec.indices() {
        let entry = by_space.entry(idx.space).or_default();
        let slot = match idx.variance {
            Variance::Contravariant => &mut entry.0,
            Variance::Covariant => &mut entry.1,
        };
        if slot.is_some() {
            return Err(SeparableError::BadOperatorSpec(spec.to_string()));
        }
        *slot = Some(*idx);
    }
    let mut pairs = Vec::new();
    for (_, (out_, in_)) in by_space {
        match (out_, in_) {
            (Some(o), Some(i)) => pairs.push((o, i.flipped())),
            _ => return Err(SeparableError::BadOperatorSpec(spec.to_string())),
        }
    }
    if pairs.is_empty() {
        return Err(SeparableError::BadOperatorSpec(spec.to_string()));
    }
    Ok(pairs)
}

fn specs_from_pairs(
    registry: &Arc<SpaceRegistry>,
    pairs: &[(TensorIndex, TensorIndex)],
) -> (IndexSpec, IndexSpec) {
    let outs: Vec<TensorIndex> = pairs.iter().map(|(o, _)| *o).collect();
    let ins: Vec<TensorIndex> = pairs.iter().map(|(_, i)| *i).collect();
    (
        IndexSpec::from_indices(registry, ins).unwrap(),
        IndexSpec::from_indices(registry, outs).unwrap(),
    )
}

/// The discretized Laplacian as a separable sum: one term per dimension with
/// the 3-point stencil `[1, -2, 1]` (zero ghost values at the boundary).
/// `spec` pairs each space's output and input frames, e.g. `"x^1,x_,y^1,y_"`.
pub fn laplacian(
    registry: &Arc<SpaceRegistry>,
    spec: &IndexSpec,
    order: usize,
) -> Result<SeparableOperator, SeparableError> {
    if order != 2 {
        return Err(SeparableError::UnsupportedOrder(order));
    }
    let pairs = operator_spec_pairs(spec)?;
    let (input, output) = specs_from_pairs(registry, &pairs);
    let mut terms = Vec::new();
    for (out_, in_) in &pairs {
        let n = registry.extent(out_.space);
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = -2.0;
            if i > 0 {
                data[i * n + i - 1] = 1.0;
            }
            if i + 1 < n {
                data[i * n + i + 1] = 1.0;
            }
        }
        let factor = factor_from_matrix(registry, *out_, in_.flipped(), &data)?;
        terms.push(Term::with_factor(1.0, out_.space, factor));
    }
    SeparableOperator::new(&input, &output, terms)
}

/// Identity operator between the given specs (one term, no factors).
pub fn identity_operator(
    registry: &Arc<SpaceRegistry>,
    spec: &IndexSpec,
) -> Result<SeparableOperator, SeparableError> {
    let pairs = operator_spec_pairs(spec)?;
    let (input, output) = specs_from_pairs(registry, &pairs);
    SeparableOperator::new(&input, &output, vec![Term::identity()])
}

/// 1D discrete convolution factor. The odd-length kernel lists taps from the
/// left neighbor to the right: `out[i] = sum_k kernel[k] * in[i + k - r]`
/// with zero padding outside the grid.
pub fn convolution_1d(
    registry: &Arc<SpaceRegistry>,
    out_: TensorIndex,
    in_: TensorIndex,
    kernel: &[f64],
) -> Result<DenseTensor, SeparableError> {
    if kernel.len() % 2 == 0 {
        return Err(SeparableError::EvenKernel(kernel.len()));
    }
    let r = kernel.len() / 2;
    let n = registry.extent(out_.space);
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for (k, &w) in kernel.iter().enumerate() {
            let j = i as isize + k as isize - r as isize;
            if j >= 0 && (j as usize) < n {
                data[i * n + j as usize] = w;
            }
        }
    }
    factor_from_matrix(registry, out_, in_.flipped(), &data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdVariant {
    Forward,
    Backward,
    Central,
}

/// 1D finite-difference factor (a 3-tap convolution).
pub fn finite_difference_1d(
    registry: &Arc<SpaceRegistry>,
    out_: TensorIndex,
    in_: TensorIndex,
    variant: FdVariant,
) -> Result<DenseTensor, SeparableError> {
    let kernel: [f64; 3] = match variant {
        FdVariant::Forward => [-1.0, 1.0, 0.0],
        FdVariant::Backward => [0.0, -1.0, 1.0],
        FdVariant::Central => [-0.5, 0.0, 0.5],
    };
    convolution_1d(registry, out_, in_, &kernel)
}

/// 1D DFT factors: the real and imaginary planes of `exp(-2*pi*i*k*n/N)`.
/// Multidimensional DFTs apply the pair per dimension with explicit complex
/// arithmetic over the two planes.
pub fn dft_1d(
    registry: &Arc<SpaceRegistry>,
    out_: TensorIndex,
    in_: TensorIndex,
) -> Result<(DenseTensor, DenseTensor), SeparableError> {
    let n = registry.extent(out_.space);
    let mut re = vec![0.0; n * n];
    let mut im = vec![0.0; n * n];
    for k in 0..n {
        for j in 0..n {
            let phase = -2.0 * PI * (k as f64) * (j as f64) / (n as f64);
            re[k * n + j] = phase.cos();
            im[k * n + j] = phase.sin();
        }
    }
    Ok((
        factor_from_matrix(registry, out_, in_.flipped(), &re)?,
        factor_from_matrix(registry, out_, in_.flipped(), &im)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// Zero insertion: extent(out) = k * extent(in).
    Upsample(usize),
    /// Every k-th sample: extent(in) = k * extent(out).
    Downsample(usize),
}

/// 1D resampling factor between two spaces.
pub fn resample_1d(
    registry: &Arc<SpaceRegistry>,
    out_: TensorIndex,
    in_: TensorIndex,
    mode: Resample,
) -> Result<DenseTensor, SeparableError> {
    let n_out = registry.extent(out_.space);
    let n_in = registry.extent(in_.space);
    let ok = match mode {
        Resample::Upsample(k) => n_out == k * n_in,
        Resample::Downsample(k) => n_in == k * n_out,
    };
    if !ok {
        let k = match mode {
            Resample::Upsample(k) | Resample::Downsample(k) => k,
        };
        return Err(SeparableError::ResampleExtents {
            factor: k,
            expected: match mode {
                Resample::Upsample(k) => format!("extent(out) = {k}*extent(in)"),
                Resample::Downsample(k) => format!("extent(in) = {k}*extent(out)"),
            },
            found: format!("out={n_out}, in={n_in}"),
        });
    }
    let mut data = vec![0.0; n_out * n_in];
    match mode {
        Resample::Upsample(k) => {
            for j in 0..n_in {
                data[(k * j) * n_in + j] = 1.0;
            }
        }
        Resample::Downsample(k) => {
            for i in 0..n_out {
                data[i * n_in + k * i] = 1.0;
            }
        }
    }
    factor_from_matrix(registry, out_, in_.flipped(), &data)
}

/// One shear pass: per-slab 1D translation by a fractional offset linear in
/// the orthogonal coordinate, expressed as a separable sum of (integer shift)
/// x (per-slab interpolation weight) factor pairs.
fn shear_pass(
    registry: &Arc<SpaceRegistry>,
    sheared: (TensorIndex, TensorIndex),
    along: (TensorIndex, TensorIndex),
    slope: f64,
) -> Result<SeparableOperator, SeparableError> {
    let (sh_out, sh_in) = sheared;
    let (al_out, al_in) = along;
    let n_sh = registry.extent(sh_out.space);
    let n_al = registry.extent(al_out.space);
    let center = (n_al as f64 - 1.0) / 2.0;

    // Per slab c of the orthogonal dimension the translation is
    // slope * (c - center); split into integer shift + linear interpolation.
    let mut weights: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for c in 0..n_al {
        let t = slope * (c as f64 - center);
        let f = t.floor();
        let w = t - f;
        let base = f as i64;
        if w.abs() > 0.0 {
            weights.entry(base + 1).or_insert_with(|| vec![0.0; n_al])[c] = w;
        }
        if 1.0 - w > 0.0 {
            weights.entry(base).or_insert_with(|| vec![0.0; n_al])[c] = 1.0 - w;
        }
    }

    let mut terms = Vec::new();
    for (&shift, slab_weights) in &weights {
        // Shift matrix: out[i] = in[i - shift], zero padded.
        let mut shift_mat = vec![0.0; n_sh * n_sh];
        for i in 0..n_sh as i64 {
            let j = i - shift;
            if j >= 0 && j < n_sh as i64 {
                shift_mat[(i as usize) * n_sh + j as usize] = 1.0;
            }
        }
        let mut diag = vec![0.0; n_al * n_al];
        for (c, &w) in slab_weights.iter().enumerate() {
            diag[c * n_al + c] = w;
        }
        let mut factors = BTreeMap::new();
        factors.insert(
            sh_out.space,
            factor_from_matrix(registry, sh_out, sh_in.flipped(), &shift_mat)?,
        );
        factors.insert(
            al_out.space,
            factor_from_matrix(registry, al_out, al_in.flipped(), &diag)?,
        );
        terms.push(Term {
            weight: 1.0,
            factors,
        });
    }
    let (input, output) = specs_from_pairs(registry, &[(sh_out, sh_in), (al_out, al_in)]);
    SeparableOperator::new(&input, &output, terms)
}

/// Rotation about the grid center as the classic three-pass shear
/// decomposition (shear-X, shear-Y, shear-X) with linear interpolation. Each
/// pass maps the input frames to the output frames; chain them with
/// [`apply_passes`].
pub fn shear_rotation_2d(
    registry: &Arc<SpaceRegistry>,
    spec: &IndexSpec,
    angle: f64,
) -> Result<Vec<SeparableOperator>, SeparableError> {
    if !(angle.abs() < PI / 2.0) {
        return Err(SeparableError::AngleOutOfRange(angle));
    }
    let pairs = operator_spec_pairs(spec)?;
    if pairs.len() != 2 {
        return Err(SeparableError::BadOperatorSpec(spec.to_string()));
    }
    let (x_out, x_in) = pairs[0];
    let (y_out, y_in) = pairs[1];
    let a = -(angle / 2.0).tan();
    let b = angle.sin();
    Ok(vec![
        shear_pass(registry, (x_out, x_in), (y_out, y_in), a)?,
        shear_pass(registry, (y_out, y_in), (x_out, x_in), b)?,
        shear_pass(registry, (x_out, x_in), (y_out, y_in), a)?,
    ])
}

/// Applies a chain of operators sharing input/output specs, reframing the
/// intermediate back to the input frames between passes.
pub fn apply_passes(
    passes: &[SeparableOperator],
    u: &DenseTensor,
) -> Result<DenseTensor, SeparableError> {
    let mut v = u.clone();
    for (i, pass) in passes.iter().enumerate() {
        v = pass.apply(&v)?;
        if i + 1 < passes.len() {
            v = v.reframe(&pass.output_spec(), &pass.input_spec())?;
        }
    }
    Ok(v)
}
