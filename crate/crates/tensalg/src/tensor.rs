//! Dense tensors and the commutative tensor product.
//!
//! A [`DenseTensor`] stores its indices in canonical order (space rank, then
//! frame, then contravariant before covariant) and its components row-major
//! over that order. Because every tensor agrees on the order, the product of
//! any number of factors is independent of the factor order.
//!
//! The product groups all index occurrences across all factors by
//! (space, frame). Within a group, occurrences of equal variance merge into
//! one logical index (the elementwise/Khatri-Rao mechanism); if after merging
//! the group holds both a contravariant and a covariant index, the pair is
//! contracted away (Einstein convention); otherwise the merged index survives
//! into the result.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::alloc_track;
use crate::notation::{IndexSpec, TensorIndex, Variance};
use crate::registry::{SpaceId, SpaceRegistry};

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("component length mismatch: spec `{spec}` needs {expected} components, got {found}")]
    LengthMismatch {
        spec: String,
        expected: usize,
        found: usize,
    },
    #[error("index lists differ: `{left}` vs `{right}`")]
    IndexMismatch { left: String, right: String },
    #[error("factors live in different space registries")]
    RegistryMismatch,
    #[error("tensor product needs at least one factor")]
    EmptyProduct,
    #[error("delta pair on `{space}` repeats (frame {frame}, {variance:?})")]
    DegenerateDeltaPair {
        space: String,
        frame: u32,
        variance: Variance,
    },
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),
    #[error(transparent)]
    Notation(#[from] crate::notation::NotationError),
}

/// Dense tensor value: canonical index list plus row-major components.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    registry: Arc<SpaceRegistry>,
    indices: Vec<TensorIndex>,
    components: Vec<f64>,
}

fn canonical_sorted(indices: &[TensorIndex]) -> Vec<TensorIndex> {
    let mut sorted = indices.to_vec();
    sorted.sort_by_key(|i| i.canonical_key());
    sorted
}

fn row_major_strides(extents: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; extents.len()];
    for j in (0..extents.len().saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * extents[j + 1];
    }
    strides
}

impl DenseTensor {
    /// All-zero tensor over the given spec (indices stored canonically).
    pub fn zeros(spec: &IndexSpec) -> Self {
        let indices = canonical_sorted(spec.indices());
        let len = spec.component_count();
        Self {
            registry: Arc::clone(spec.registry()),
            indices,
            components: alloc_track::alloc_components(len),
        }
    }

    /// Order-0 tensor holding a single value.
    pub fn scalar(registry: &Arc<SpaceRegistry>, value: f64) -> Self {
        Self {
            registry: Arc::clone(registry),
            indices: Vec::new(),
            components: vec![value],
        }
    }

    /// Builds a tensor from components given row-major in the *user's* spec
    /// order; they are permuted into canonical storage as needed.
    pub fn from_components(spec: &IndexSpec, components: Vec<f64>) -> Result<Self, TensorError> {
        let expected = spec.component_count();
        if components.len() != expected {
            return Err(TensorError::LengthMismatch {
                spec: spec.to_string(),
                expected,
                found: components.len(),
            });
        }
        let registry = Arc::clone(spec.registry());
        let user = spec.indices();
        let canonical = canonical_sorted(user);
        if canonical == user {
            return Ok(Self {
                registry,
                indices: canonical,
                components,
            });
        }
        // Destination dim j reads along the user axis holding that index.
        let user_extents: Vec<usize> = user.iter().map(|i| registry.extent(i.space)).collect();
        let user_strides = row_major_strides(&user_extents);
        let src_strides: Vec<usize> = canonical
            .iter()
            .map(|idx| {
                let at = user.iter().position(|u| u == idx).unwrap();
                user_strides[at]
            })
            .collect();
        let dest_extents: Vec<usize> = canonical
            .iter()
            .map(|i| registry.extent(i.space))
            .collect();
        let mut dest = alloc_track::alloc_components(expected);
        let mut coords = vec![0usize; canonical.len()];
        let mut src_off = 0usize;
        for slot in dest.iter_mut() {
            *slot = components[src_off];
            for j in (0..coords.len()).rev() {
                coords[j] += 1;
                src_off += src_strides[j];
                if coords[j] < dest_extents[j] {
                    break;
                }
                coords[j] = 0;
                src_off -= src_strides[j] * dest_extents[j];
            }
        }
        Ok(Self {
            registry,
            indices: canonical,
            components: dest,
        })
    }

    pub fn registry(&self) -> &Arc<SpaceRegistry> {
        &self.registry
    }

    /// Indices in canonical order.
    pub fn indices(&self) -> &[TensorIndex] {
        &self.indices
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [f64] {
        &mut self.components
    }

    pub fn into_components(self) -> Vec<f64> {
        self.components
    }

    pub fn order(&self) -> usize {
        self.indices.len()
    }

    pub fn extents(&self) -> Vec<usize> {
        self.indices
            .iter()
            .map(|i| self.registry.extent(i.space))
            .collect()
    }

    /// The canonical spec of this tensor.
    pub fn spec(&self) -> IndexSpec {
        IndexSpec::from_indices(&self.registry, self.indices.clone())
            .expect("canonical indices have no duplicates")
    }

    /// Value of an order-0 tensor.
    pub fn scalar_value(&self) -> Option<f64> {
        if self.indices.is_empty() {
            Some(self.components[0])
        } else {
            None
        }
    }

    pub fn get(&self, coords: &[usize]) -> f64 {
        self.components[self.linear_index(coords)]
    }

    pub fn set(&mut self, coords: &[usize], value: f64) {
        let at = self.linear_index(coords);
        self.components[at] = value;
    }

    fn linear_index(&self, coords: &[usize]) -> usize {
        assert_eq!(coords.len(), self.indices.len());
        let extents = self.extents();
        let strides = row_major_strides(&extents);
        coords
            .iter()
            .zip(&strides)
            .map(|(c, s)| {
                debug_assert!(*c < usize::MAX);
                c * s
            })
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_shape(&self, other: &Self) -> Result<(), TensorError> {
        if !same_registry(&self.registry, &other.registry) {
            return Err(TensorError::RegistryMismatch);
        }
        if self.indices != other.indices {
            return Err(TensorError::IndexMismatch {
                left: self.spec().to_string(),
                right: other.spec().to_string(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.same_shape(other)?;
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            registry: Arc::clone(&self.registry),
            indices: self.indices.clone(),
            components,
        })
    }

    pub fn subtract(&self, other: &Self) -> Result<Self, TensorError> {
        self.same_shape(other)?;
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            registry: Arc::clone(&self.registry),
            indices: self.indices.clone(),
            components,
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            registry: Arc::clone(&self.registry),
            indices: self.indices.clone(),
            components: self.components.iter().map(|v| v * factor).collect(),
        }
    }

    /// In-place `self += factor * other`; shapes must match.
    pub fn add_scaled(&mut self, factor: f64, other: &Self) -> Result<(), TensorError> {
        self.same_shape(other)?;
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Relabels indices without changing values: index `from[i]` (which must
    /// occur in this tensor) becomes `to[i]`, which must live in the same
    /// space. This is the action of a Kronecker-delta bridge, applied as a
    /// metadata operation.
    pub fn reframe(&self, from: &IndexSpec, to: &IndexSpec) -> Result<Self, TensorError> {
        if !same_registry(&self.registry, from.registry())
            || !same_registry(&self.registry, to.registry())
        {
            return Err(TensorError::RegistryMismatch);
        }
        if from.len() != to.len() {
            return Err(TensorError::SpecMismatch(format!(
                "reframe specs differ in length: `{from}` vs `{to}`"
            )));
        }
        for (f, t) in from.indices().iter().zip(to.indices()) {
            if f.space != t.space {
                return Err(TensorError::SpecMismatch(format!(
                    "reframe pairs index spaces `{}` and `{}`",
                    self.registry.name(f.space),
                    self.registry.name(t.space),
                )));
            }
        }
        let mapped: Vec<TensorIndex> = self
            .indices
            .iter()
            .map(|idx| {
                match from.indices().iter().position(|f| f == idx) {
                    Some(at) => to.indices()[at],
                    None => *idx,
                }
            })
            .collect();
        let spec = IndexSpec::from_indices(&self.registry, mapped).map_err(|_| {
            TensorError::SpecMismatch(format!(
                "reframe of `{}` to `{to}` creates duplicate indices",
                self.spec()
            ))
        })?;
        Self::from_components(&spec, self.components.clone())
    }
}

pub(crate) fn same_registry(a: &Arc<SpaceRegistry>, b: &Arc<SpaceRegistry>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// A (space, frame) group: the unit by which product indices merge/contract.
pub type IndexGroup = (SpaceId, u32);

pub fn groups_of(indices: &[TensorIndex]) -> BTreeSet<IndexGroup> {
    indices.iter().map(|i| i.group()).collect()
}

#[derive(Default)]
struct GroupPresence {
    contra: bool,
    cov: bool,
}

struct LoopVar {
    extent: usize,
    stride_a: usize,
    stride_b: usize,
}

/// Pairwise product. `external` lists the (space, frame) groups that occur in
/// factors outside this pair: such groups are never contracted here even if
/// both variances are present, so that a later factor can still merge into
/// them. Pass an empty set for a standalone product.
pub fn product_pair_in_context(
    a: &DenseTensor,
    b: &DenseTensor,
    external: &BTreeSet<IndexGroup>,
) -> Result<DenseTensor, TensorError> {
    if !same_registry(&a.registry, &b.registry) {
        return Err(TensorError::RegistryMismatch);
    }
    let registry = Arc::clone(&a.registry);

    let mut groups: BTreeMap<IndexGroup, GroupPresence> = BTreeMap::new();
    for idx in a.indices.iter().chain(&b.indices) {
        let entry = groups.entry(idx.group()).or_default();
        match idx.variance {
            Variance::Contravariant => entry.contra = true,
            Variance::Covariant => entry.cov = true,
        }
    }

    // One loop variable per summed group, one per surviving (group, variance)
    // axis. Iterating the BTreeMap yields groups in canonical order, so the
    // free axes come out canonically sorted.
    let mut out_indices: Vec<TensorIndex> = Vec::new();
    let mut free_axes: Vec<(IndexGroup, Option<Variance>)> = Vec::new();
    let mut sum_axes: Vec<IndexGroup> = Vec::new();
    for (&group, presence) in &groups {
        let contracts = presence.contra && presence.cov && !external.contains(&group);
        if contracts {
            sum_axes.push(group);
        } else {
            if presence.contra {
                out_indices.push(TensorIndex::new(group.0, group.1, Variance::Contravariant));
                free_axes.push((group, Some(Variance::Contravariant)));
            }
            if presence.cov {
                out_indices.push(TensorIndex::new(group.0, group.1, Variance::Covariant));
                free_axes.push((group, Some(Variance::Covariant)));
            }
        }
    }

    let stride_sum = |t: &DenseTensor, group: IndexGroup, variance: Option<Variance>| {
        let extents = t.extents();
        let strides = row_major_strides(&extents);
        t.indices
            .iter()
            .enumerate()
            .filter(|(_, idx)| {
                idx.group() == group && variance.is_none_or(|v| idx.variance == v)
            })
            .map(|(dim, _)| strides[dim])
            .sum::<usize>()
    };

    let free_vars: Vec<LoopVar> = free_axes
        .iter()
        .map(|&(group, variance)| LoopVar {
            extent: registry.extent(group.0),
            stride_a: stride_sum(a, group, variance),
            stride_b: stride_sum(b, group, variance),
        })
        .collect();
    let sum_vars: Vec<LoopVar> = sum_axes
        .iter()
        .map(|&group| LoopVar {
            extent: registry.extent(group.0),
            stride_a: stride_sum(a, group, None),
            stride_b: stride_sum(b, group, None),
        })
        .collect();

    let out_len: usize = free_vars.iter().map(|v| v.extent).product();
    let mut out = alloc_track::alloc_components(out_len);

    let av = &a.components;
    let bv = &b.components;
    let mut free_coords = vec![0usize; free_vars.len()];
    let mut base_a = 0usize;
    let mut base_b = 0usize;
    let mut sum_coords = vec![0usize; sum_vars.len()];
    for slot in out.iter_mut() {
        // Accumulation runs in canonical loop order: deterministic sums.
        let mut acc = 0.0;
        let mut off_a = base_a;
        let mut off_b = base_b;
        loop {
            acc += av[off_a] * bv[off_b];
            let mut carry = true;
            for j in (0..sum_vars.len()).rev() {
                let var = &sum_vars[j];
                sum_coords[j] += 1;
                off_a += var.stride_a;
                off_b += var.stride_b;
                if sum_coords[j] < var.extent {
                    carry = false;
                    break;
                }
                sum_coords[j] = 0;
                off_a -= var.stride_a * var.extent;
                off_b -= var.stride_b * var.extent;
            }
            if carry {
                break;
            }
        }
        *slot = acc;
        for j in (0..free_vars.len()).rev() {
            let var = &free_vars[j];
            free_coords[j] += 1;
            base_a += var.stride_a;
            base_b += var.stride_b;
            if free_coords[j] < var.extent {
                break;
            }
            free_coords[j] = 0;
            base_a -= var.stride_a * var.extent;
            base_b -= var.stride_b * var.extent;
        }
    }

    Ok(DenseTensor {
        registry,
        indices: out_indices,
        components: out,
    })
}

/// Standalone pairwise product: merges and contracts greedily.
pub fn product_pair(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor, TensorError> {
    product_pair_in_context(a, b, &BTreeSet::new())
}

/// The generalized tensor product of any number of factors: outer product,
/// contraction and elementwise merge in one operation. Multilinear,
/// associative, and commutative up to floating-point summation order.
pub fn tensor_product(factors: &[&DenseTensor]) -> Result<DenseTensor, TensorError> {
    let Some(first) = factors.first() else {
        return Err(TensorError::EmptyProduct);
    };
    if factors.len() == 1 {
        let one = DenseTensor::scalar(&first.registry, 1.0);
        return product_pair_in_context(first, &one, &BTreeSet::new());
    }
    let mut acc: DenseTensor = (*first).clone();
    for (i, factor) in factors.iter().enumerate().skip(1) {
        let mut external = BTreeSet::new();
        for later in &factors[i + 1..] {
            external.extend(later.indices.iter().map(TensorIndex::group));
        }
        acc = product_pair_in_context(&acc, factor, &external)?;
    }
    Ok(acc)
}

/// One Kronecker-delta index pair within a space.
#[derive(Debug, Clone, Copy)]
pub struct DeltaPair {
    pub space: SpaceId,
    pub a: (u32, Variance),
    pub b: (u32, Variance),
}

impl DeltaPair {
    pub fn new(space: SpaceId, a: (u32, Variance), b: (u32, Variance)) -> Self {
        Self { space, a, b }
    }
}

/// Kronecker delta over one or more index pairs: component 1 where every
/// pair's coordinates agree, 0 elsewhere. A multi-pair delta equals the
/// product of its single-pair deltas.
pub fn make_delta(
    registry: &Arc<SpaceRegistry>,
    pairs: &[DeltaPair],
) -> Result<DenseTensor, TensorError> {
    let mut indices = Vec::with_capacity(pairs.len() * 2);
    for pair in pairs {
        if pair.a == pair.b {
            return Err(TensorError::DegenerateDeltaPair {
                space: registry.name(pair.space).to_string(),
                frame: pair.a.0,
                variance: pair.a.1,
            });
        }
        indices.push(TensorIndex::new(pair.space, pair.a.0, pair.a.1));
        indices.push(TensorIndex::new(pair.space, pair.b.0, pair.b.1));
    }
    // User order interleaves each pair's two indices, so the pair diagonal is
    // easy to address; the constructor canonicalizes.
    let spec = IndexSpec::from_indices(registry, indices)?;
    let extents: Vec<usize> = pairs.iter().map(|p| registry.extent(p.space)).collect();
    let len: usize = extents.iter().map(|e| e * e).product();
    let mut components = alloc_track::alloc_components(len);
    let pair_strides = {
        // Stride of pair p's diagonal step in the interleaved layout.
        let full: Vec<usize> = extents.iter().flat_map(|&e| [e, e]).collect();
        let strides = row_major_strides(&full);
        (0..pairs.len())
            .map(|p| strides[2 * p] + strides[2 * p + 1])
            .collect::<Vec<_>>()
    };
    let mut coords = vec![0usize; pairs.len()];
    let mut off = 0usize;
    loop {
        components[off] = 1.0;
        let mut done = true;
        for p in (0..pairs.len()).rev() {
            coords[p] += 1;
            off += pair_strides[p];
            if coords[p] < extents[p] {
                done = false;
                break;
            }
            coords[p] = 0;
            off -= pair_strides[p] * extents[p];
        }
        if done {
            break;
        }
    }
    DenseTensor::from_components(&spec, components)
}

/// Inner product of two tensors with identical index structure: the sum over
/// all components of the elementwise product (Euclidean spaces, so the
/// delta-mediated and elementwise formulations coincide).
pub fn inner_product(a: &DenseTensor, b: &DenseTensor) -> Result<f64, TensorError> {
    a.same_shape(b)?;
    let mut acc = 0.0;
    for (x, y) in a.components.iter().zip(&b.components) {
        acc += x * y;
    }
    Ok(acc)
}

/// Derivative of the linear form `f(U) = A·U` with respect to `U`: the
/// operator tensor itself, with its covariant indices standing for the
/// differentiation frames. Validates that `a` actually consumes `u_spec`.
pub fn derivative_of_linear_map(
    a: &DenseTensor,
    u_spec: &IndexSpec,
) -> Result<DenseTensor, TensorError> {
    if !same_registry(&a.registry, u_spec.registry()) {
        return Err(TensorError::RegistryMismatch);
    }
    let consumed: BTreeSet<IndexGroup> = a
        .indices
        .iter()
        .filter(|i| i.variance == Variance::Covariant)
        .map(|i| i.group())
        .collect();
    let supplied: BTreeSet<IndexGroup> = u_spec
        .indices()
        .iter()
        .filter(|i| i.variance == Variance::Contravariant)
        .map(|i| i.group())
        .collect();
    if consumed != supplied {
        return Err(TensorError::SpecMismatch(format!(
            "operator `{}` does not consume argument spec `{}`",
            a.spec(),
            u_spec
        )));
    }
    Ok(a.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::SpaceRegistry;

    fn shared(pairs: &[(&str, usize)]) -> Arc<SpaceRegistry> {
        let mut reg = SpaceRegistry::new();
        for (name, extent) in pairs {
            reg.define_space(name, *extent).unwrap();
        }
        reg.into_shared()
    }

    fn spec(reg: &Arc<SpaceRegistry>, text: &str) -> IndexSpec {
        IndexSpec::parse(reg, text).unwrap()
    }

    #[test]
    fn user_order_components_are_permuted_to_canonical() {
        let reg = shared(&[("X", 2), ("Y", 3)]);
        // Spec written (y_, x^); canonical order is (x^, y_).
        let t = DenseTensor::from_components(
            &spec(&reg, "y_,x^"),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        assert_eq!(t.spec().to_string(), "x^,y_");
        // Oracle: explicit nested-loop transpose of the 3x2 user array.
        let mut expect = vec![0.0; 6];
        for y in 0..3 {
            for x in 0..2 {
                expect[x * 3 + y] = (y * 2 + x) as f64 + 1.0;
            }
        }
        assert_eq!(t.components(), expect.as_slice());
    }

    #[test]
    fn empty_spec_is_scalar() {
        let reg = shared(&[("X", 2)]);
        let t = DenseTensor::from_components(&spec(&reg, ""), vec![7.0]).unwrap();
        assert_eq!(t.scalar_value(), Some(7.0));
        assert_eq!(t.order(), 0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let reg = shared(&[("X", 2)]);
        let err =
            DenseTensor::from_components(&spec(&reg, "x^"), vec![1.0, 2.0, 3.0]).unwrap_err();
        assert_eq!(
            err,
            TensorError::LengthMismatch {
                spec: "x^".to_string(),
                expected: 2,
                found: 3
            }
        );
    }

    #[test]
    fn elementwise_operations() {
        let reg = shared(&[("X", 2)]);
        let a = DenseTensor::from_components(&spec(&reg, "x^"), vec![1.0, 2.0]).unwrap();
        let b = DenseTensor::from_components(&spec(&reg, "x^"), vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().components(), &[4.0, 6.0]);
        assert_eq!(a.scale(0.0).components(), &[0.0, 0.0]);
        assert_eq!(a.subtract(&a).unwrap().components(), &[0.0, 0.0]);
    }

    #[test]
    fn add_rejects_mismatched_index_lists() {
        let reg = shared(&[("X", 2), ("Y", 2)]);
        let a = DenseTensor::zeros(&spec(&reg, "x^"));
        let b = DenseTensor::zeros(&spec(&reg, "y^"));
        let err = a.add(&b).unwrap_err();
        assert_eq!(
            err,
            TensorError::IndexMismatch {
                left: "x^".to_string(),
                right: "y^".to_string()
            }
        );
    }

    #[test]
    fn product_contracts_matched_pair() {
        let reg = shared(&[("X", 2)]);
        // A(x^1, x_) = [[1,2],[3,4]] with row = x1, col = x.
        let a = DenseTensor::from_components(
            &spec(&reg, "x^1,x_"),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let t = DenseTensor::from_components(&spec(&reg, "x^"), vec![5.0, 6.0]).unwrap();
        let r = tensor_product(&[&a, &t]).unwrap();
        assert_eq!(r.spec().to_string(), "x^1");
        assert_eq!(r.components(), &[17.0, 39.0]);
    }

    #[test]
    fn equal_variance_occurrences_merge() {
        let reg = shared(&[("I", 2), ("X", 2), ("Y", 2)]);
        let a = DenseTensor::from_components(&spec(&reg, "i^,x_"), vec![1.0; 4]).unwrap();
        let b = DenseTensor::from_components(&spec(&reg, "i^,y_"), vec![1.0; 4]).unwrap();
        let h = tensor_product(&[&a, &b]).unwrap();
        assert_eq!(h.spec().to_string(), "i^,x_,y_");
        assert_eq!(h.components(), vec![1.0; 8].as_slice());
    }

    #[test]
    fn delta_relabels_without_changing_values() {
        let reg = shared(&[("X", 2), ("Y", 3)]);
        let delta = make_delta(
            &reg,
            &[DeltaPair::new(
                SpaceId(0),
                (1, Variance::Contravariant),
                (0, Variance::Covariant),
            )],
        )
        .unwrap();
        let t = DenseTensor::from_components(
            &spec(&reg, "x^,y^"),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        let r = tensor_product(&[&delta, &t]).unwrap();
        assert_eq!(r.spec().to_string(), "x^1,y^");
        assert_eq!(r.components(), t.components());
    }

    #[test]
    fn five_factor_general_product_matches_quintuple_loop() {
        let reg = shared(&[("I", 2), ("X", 2), ("Y", 2), ("Z", 2)]);
        let vals = |n: usize, seed: f64| -> Vec<f64> {
            (0..n).map(|k| ((k as f64) * 0.7 + seed).sin()).collect()
        };
        let a = DenseTensor::from_components(&spec(&reg, "i^,x_"), vals(4, 0.1)).unwrap();
        let d = DenseTensor::from_components(&spec(&reg, "x^,i_"), vals(4, 0.2)).unwrap();
        let b = DenseTensor::from_components(&spec(&reg, "i^,y_"), vals(4, 0.3)).unwrap();
        let p = DenseTensor::from_components(&spec(&reg, "i_,z_"), vals(4, 0.4)).unwrap();
        let w = DenseTensor::from_components(&spec(&reg, "i_"), vals(2, 0.5)).unwrap();
        let r = tensor_product(&[&a, &d, &b, &p, &w]).unwrap();
        assert_eq!(r.spec().to_string(), "y_,z_");
        let mut expect = vec![0.0; 4];
        for y in 0..2 {
            for z in 0..2 {
                let mut acc = 0.0;
                for i in 0..2 {
                    for x in 0..2 {
                        acc += a.get(&[i, x])
                            * d.get(&[i, x])
                            * b.get(&[i, y])
                            * p.get(&[i, z])
                            * w.get(&[i]);
                    }
                }
                expect[y * 2 + z] = acc;
            }
        }
        for (got, want) in r.components().iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn single_pair_delta_is_identity_pattern() {
        let reg = shared(&[("X", 3)]);
        let delta = make_delta(
            &reg,
            &[DeltaPair::new(
                SpaceId(0),
                (1, Variance::Contravariant),
                (0, Variance::Covariant),
            )],
        )
        .unwrap();
        let mut expect = vec![0.0; 9];
        for i in 0..3 {
            expect[i * 3 + i] = 1.0;
        }
        assert_eq!(delta.components(), expect.as_slice());
    }

    #[test]
    fn variance_flip_down_then_up_restores_exactly() {
        let reg = shared(&[("X", 4)]);
        let t =
            DenseTensor::from_components(&spec(&reg, "x^"), vec![0.25, -1.5, 3.0, 7.5]).unwrap();
        let down = make_delta(
            &reg,
            &[DeltaPair::new(
                SpaceId(0),
                (1, Variance::Covariant),
                (0, Variance::Covariant),
            )],
        )
        .unwrap();
        let lowered = tensor_product(&[&down, &t]).unwrap();
        assert_eq!(lowered.spec().to_string(), "x_1");
        let up = make_delta(
            &reg,
            &[DeltaPair::new(
                SpaceId(0),
                (0, Variance::Contravariant),
                (1, Variance::Contravariant),
            )],
        )
        .unwrap();
        let restored = tensor_product(&[&up, &lowered]).unwrap();
        assert_eq!(restored, t);
    }

    #[test]
    fn multi_pair_delta_factors_into_single_pairs() {
        let reg = shared(&[("X", 2), ("Y", 3), ("Z", 2)]);
        let pair = |s: usize| {
            DeltaPair::new(
                SpaceId(s),
                (1, Variance::Contravariant),
                (0, Variance::Covariant),
            )
        };
        let joint = make_delta(&reg, &[pair(0), pair(1), pair(2)]).unwrap();
        let singles: Vec<DenseTensor> = (0..3)
            .map(|s| make_delta(&reg, &[pair(s)]).unwrap())
            .collect();
        let product =
            tensor_product(&[&singles[0], &singles[1], &singles[2]]).unwrap();
        assert_eq!(joint, product);

        // Applying the three-pair delta relabels a tensor without value change.
        let t = DenseTensor::from_components(
            &spec(&reg, "x^,y^,z^"),
            (0..12).map(|k| k as f64).collect(),
        )
        .unwrap();
        let relabeled = tensor_product(&[&joint, &t]).unwrap();
        assert_eq!(relabeled.spec().to_string(), "x^1,y^1,z^1");
        assert_eq!(relabeled.components(), t.components());
    }

    #[test]
    fn degenerate_delta_pair_rejected() {
        let reg = shared(&[("X", 2)]);
        let err = make_delta(
            &reg,
            &[DeltaPair::new(
                SpaceId(0),
                (1, Variance::Covariant),
                (1, Variance::Covariant),
            )],
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::DegenerateDeltaPair { .. }));
    }

    #[test]
    fn inner_product_basics() {
        let reg = shared(&[("X", 2)]);
        let t = DenseTensor::from_components(&spec(&reg, "x^"), vec![3.0, 4.0]).unwrap();
        assert_eq!(inner_product(&t, &t).unwrap(), 25.0);
        let zero = DenseTensor::zeros(&spec(&reg, "x^"));
        assert_eq!(inner_product(&t, &zero).unwrap(), 0.0);
    }

    #[test]
    fn reframe_moves_between_coordinate_systems() {
        let reg = shared(&[("X", 2), ("Y", 3)]);
        let t = DenseTensor::from_components(
            &spec(&reg, "x^1,y^1"),
            (0..6).map(|k| k as f64).collect(),
        )
        .unwrap();
        let r = t
            .reframe(&spec(&reg, "x^1,y^1"), &spec(&reg, "x^,y^"))
            .unwrap();
        assert_eq!(r.spec().to_string(), "x^,y^");
        assert_eq!(r.components(), t.components());
        // Matches the explicit delta product.
        let pair = |s: usize| {
            DeltaPair::new(
                SpaceId(s),
                (0, Variance::Contravariant),
                (1, Variance::Covariant),
            )
        };
        let bridge = make_delta(&reg, &[pair(0), pair(1)]).unwrap();
        let via_delta = tensor_product(&[&bridge, &t]).unwrap();
        assert_eq!(r, via_delta);
    }

    #[test]
    fn derivative_returns_the_operator() {
        let reg = shared(&[("X", 3)]);
        let a = DenseTensor::from_components(
            &spec(&reg, "x^1,x_"),
            (0..9).map(|k| (k as f64).cos()).collect(),
        )
        .unwrap();
        let u_spec = spec(&reg, "x^");
        let d = derivative_of_linear_map(&a, &u_spec).unwrap();
        assert_eq!(d, a);
        let wrong = spec(&reg, "x^2");
        assert!(derivative_of_linear_map(&a, &wrong).is_err());
    }

    #[test]
    fn derivative_of_delta_is_delta() {
        let reg = shared(&[("X", 3)]);
        let delta = make_delta(
            &reg,
            &[DeltaPair::new(
                SpaceId(0),
                (1, Variance::Contravariant),
                (0, Variance::Covariant),
            )],
        )
        .unwrap();
        let d = derivative_of_linear_map(&delta, &spec(&reg, "x^")).unwrap();
        assert_eq!(d, delta);
    }

    #[test]
    fn empty_factor_list_rejected() {
        assert_eq!(tensor_product(&[]).unwrap_err(), TensorError::EmptyProduct);
    }

    #[test]
    fn registry_mismatch_rejected() {
        let ra = shared(&[("X", 2)]);
        let rb = shared(&[("X", 3)]);
        let a = DenseTensor::zeros(&spec(&ra, "x^"));
        let b = DenseTensor::zeros(&spec(&rb, "x^"));
        assert_eq!(
            tensor_product(&[&a, &b]).unwrap_err(),
            TensorError::RegistryMismatch
        );
    }

    #[test]
    fn deferred_contraction_matches_global_semantics() {
        // x appears contravariant in one factor and covariant in two others:
        // the covariant occurrences must merge before the single contraction.
        let reg = shared(&[("X", 3)]);
        let a = DenseTensor::from_components(&spec(&reg, "x^"), vec![1.0, 2.0, 3.0]).unwrap();
        let b = DenseTensor::from_components(&spec(&reg, "x_"), vec![4.0, 5.0, 6.0]).unwrap();
        let c = DenseTensor::from_components(&spec(&reg, "x_"), vec![7.0, 8.0, 9.0]).unwrap();
        let r = tensor_product(&[&a, &b, &c]).unwrap();
        let expect: f64 = (0..3)
            .map(|i| a.components()[i] * b.components()[i] * c.components()[i])
            .sum();
        assert_eq!(r.scalar_value(), Some(expect));
    }

    #[test]
    fn single_factor_product_contracts_internal_pairs() {
        let reg = shared(&[("X", 3)]);
        // M(x^, x_): the product of the lone factor is its trace.
        let m = DenseTensor::from_components(
            &spec(&reg, "x^,x_"),
            (0..9).map(|k| k as f64).collect(),
        )
        .unwrap();
        let r = tensor_product(&[&m]).unwrap();
        assert_eq!(r.scalar_value(), Some(0.0 + 4.0 + 8.0));
    }
}
