//! Cost-based contraction-order planning.
//!
//! Because tensor multiplication over ordered spaces is commutative, a
//! multi-factor product may be evaluated along any binary tree. The planner
//! searches for the tree with minimal total flops, breaking ties by peak
//! intermediate memory and then by a canonical tree key for determinism.
//! Up to [`PlannerLimits::exhaustive_max`] factors the search is exhaustive
//! (dynamic programming over leaf subsets, which is exact for this cost
//! model); beyond that a greedy pairing fallback is used and the plan is
//! flagged heuristic.
//!
//! The cost model charges one multiply-add per point of the joint iteration
//! space of a pairwise product: the product of extents over the distinct
//! (space, frame) groups of the two child signatures, each group counted
//! once.

use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

use crate::notation::{IndexSpec, TensorIndex, Variance};
use crate::registry::SpaceRegistry;
use crate::tensor::{product_pair_in_context, same_registry, DenseTensor, IndexGroup, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("cannot plan an empty factor list")]
    EmptyFactorList,
    #[error("{count} factors exceed the planner cap of {cap}")]
    TooManyFactors { count: usize, cap: usize },
    #[error("factors live in different space registries")]
    RegistryMismatch,
    #[error("factor {position} does not match the plan leaf: expected `{expected}`, got `{found}`")]
    LeafMismatch {
        position: usize,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Index structure of one factor — everything the planner needs, no data.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSignature {
    registry: Arc<SpaceRegistry>,
    indices: Vec<TensorIndex>,
}

impl FactorSignature {
    pub fn of_tensor(t: &DenseTensor) -> Self {
        Self {
            registry: Arc::clone(t.registry()),
            indices: t.indices().to_vec(),
        }
    }

    pub fn from_spec(spec: &IndexSpec) -> Self {
        let mut indices = spec.indices().to_vec();
        indices.sort_by_key(|i| i.canonical_key());
        Self {
            registry: Arc::clone(spec.registry()),
            indices,
        }
    }

    pub fn indices(&self) -> &[TensorIndex] {
        &self.indices
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannerLimits {
    /// Largest factor count searched exhaustively.
    pub exhaustive_max: usize,
    /// Hard cap on the factor count.
    pub max_factors: usize,
}

impl Default for PlannerLimits {
    fn default() -> Self {
        Self {
            exhaustive_max: 8,
            max_factors: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub enum PlanNode {
    Leaf {
        factor: usize,
        signature: Vec<TensorIndex>,
    },
    Node {
        /// Evaluated before `right`.
        left: Box<PlanNode>,
        right: Box<PlanNode>,
        signature: Vec<TensorIndex>,
        node_flops: u128,
        result_components: u128,
    },
}

impl PlanNode {
    pub fn signature(&self) -> &[TensorIndex] {
        match self {
            PlanNode::Leaf { signature, .. } | PlanNode::Node { signature, .. } => signature,
        }
    }

    fn intermediate_components(&self) -> u128 {
        match self {
            PlanNode::Leaf { .. } => 0, // inputs are not intermediates
            PlanNode::Node {
                result_components, ..
            } => *result_components,
        }
    }

    /// Canonical serialization: total order on unordered trees, used as the
    /// deterministic tie-break after flops and peak memory.
    fn canon_key(&self) -> Vec<i64> {
        match self {
            PlanNode::Leaf { factor, .. } => vec![*factor as i64],
            PlanNode::Node { left, right, .. } => {
                let (a, b) = {
                    let ka = left.canon_key();
                    let kb = right.canon_key();
                    if ka <= kb { (ka, kb) } else { (kb, ka) }
                };
                let mut key = a;
                key.extend(b);
                key.push(-1);
                key
            }
        }
    }

    fn describe(&self, names: &[&str]) -> String {
        match self {
            PlanNode::Leaf { factor, .. } => names[*factor].to_string(),
            PlanNode::Node { left, right, .. } => {
                // Reading convention: a lone leaf operand is written first,
                // two leaves go in factor order, two subtrees in key order.
                let (first, second) = match (left.is_leaf(), right.is_leaf()) {
                    (true, false) => (&**left, &**right),
                    (false, true) => (&**right, &**left),
                    _ => {
                        if left.canon_key() <= right.canon_key() {
                            (&**left, &**right)
                        } else {
                            (&**right, &**left)
                        }
                    }
                };
                let fmt = |n: &PlanNode| {
                    if n.is_leaf() {
                        n.describe(names)
                    } else {
                        format!("({})", n.describe(names))
                    }
                };
                format!("{}·{}", fmt(first), fmt(second))
            }
        }
    }

    fn describe_stored(&self, names: &[&str]) -> String {
        match self {
            PlanNode::Leaf { factor, .. } => names[*factor].to_string(),
            PlanNode::Node { left, right, .. } => {
                let fmt = |n: &PlanNode| {
                    if n.is_leaf() {
                        n.describe_stored(names)
                    } else {
                        format!("({})", n.describe_stored(names))
                    }
                };
                format!("{}·{}", fmt(left), fmt(right))
            }
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, PlanNode::Leaf { .. })
    }
}

/// A pairwise evaluation tree with cost annotations.
#[derive(Debug, Clone)]
pub struct ContractionPlan {
    registry: Arc<SpaceRegistry>,
    root: PlanNode,
    leaf_count: usize,
    total_flops: u128,
    peak_components: u128,
    heuristic: bool,
}

impl ContractionPlan {
    pub fn root(&self) -> &PlanNode {
        &self.root
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn total_flops(&self) -> u128 {
        self.total_flops
    }

    pub fn peak_components(&self) -> u128 {
        self.peak_components
    }

    pub fn is_heuristic(&self) -> bool {
        self.heuristic
    }

    pub fn result_signature(&self) -> &[TensorIndex] {
        self.root.signature()
    }

    /// Nested product expression, e.g. `C·(B·(A·T))`.
    pub fn expression(&self, names: &[&str]) -> String {
        self.root.describe(names)
    }

    /// Expression in stored (execution) child order, e.g. `((A·B)·C)·T` for
    /// the left-to-right chain.
    pub fn expression_stored(&self, names: &[&str]) -> String {
        self.root.describe_stored(names)
    }
}

fn signature_components(registry: &SpaceRegistry, signature: &[TensorIndex]) -> u128 {
    signature
        .iter()
        .map(|i| registry.extent(i.space) as u128)
        .product()
}

/// Joint iteration space of a pairwise product: distinct groups counted once.
fn node_cost(registry: &SpaceRegistry, left: &[TensorIndex], right: &[TensorIndex]) -> u128 {
    let groups: BTreeSet<IndexGroup> = left.iter().chain(right).map(|i| i.group()).collect();
    groups
        .iter()
        .map(|g| registry.extent(g.0) as u128)
        .product()
}

/// Result signature of multiplying two signatures, given the groups used by
/// factors outside this subtree (those may not contract here).
fn combine_signatures(
    left: &[TensorIndex],
    right: &[TensorIndex],
    external: &BTreeSet<IndexGroup>,
) -> Vec<TensorIndex> {
    let mut axes: BTreeSet<(usize, u32, Variance)> = BTreeSet::new();
    for idx in left.iter().chain(right) {
        axes.insert((idx.space.0, idx.frame, idx.variance));
    }
    let mut out = Vec::new();
    let mut iter = axes.iter().peekable();
    while let Some(&(space, frame, variance)) = iter.next() {
        let group = (crate::registry::SpaceId(space), frame);
        let paired = variance == Variance::Contravariant
            && iter
                .peek()
                .is_some_and(|&&(s2, f2, v2)| s2 == space && f2 == frame && v2 == Variance::Covariant);
        if paired && !external.contains(&group) {
            iter.next(); // both variances contract away
            continue;
        }
        out.push(TensorIndex::new(crate::registry::SpaceId(space), frame, variance));
    }
    out
}

struct DpEntry {
    node: PlanNode,
    flops: u128,
    peak: u128,
    key: Vec<i64>,
}

fn leaf_groups(signatures: &[FactorSignature], mask_excluded: usize) -> BTreeSet<IndexGroup> {
    let mut groups = BTreeSet::new();
    for (i, sig) in signatures.iter().enumerate() {
        if mask_excluded & (1 << i) == 0 {
            groups.extend(sig.indices.iter().map(TensorIndex::group));
        }
    }
    groups
}

/// Peak live intermediate components when `first` is evaluated, then
/// `second`, then the combined node of size `result`.
fn schedule_peak(first: &DpEntry, second: &DpEntry, result: u128) -> u128 {
    let sf = first.node.intermediate_components();
    let ss = second.node.intermediate_components();
    first
        .peak
        .max(sf + second.peak)
        .max(sf + ss + result)
}

/// Chooses the flop-optimal plan; ties break by peak memory, then by the
/// canonical tree key.
pub fn plan(factors: &[FactorSignature]) -> Result<ContractionPlan, PlanError> {
    plan_with_limits(factors, PlannerLimits::default())
}

pub fn plan_with_limits(
    factors: &[FactorSignature],
    limits: PlannerLimits,
) -> Result<ContractionPlan, PlanError> {
    let Some(first) = factors.first() else {
        return Err(PlanError::EmptyFactorList);
    };
    if factors.len() > limits.max_factors {
        return Err(PlanError::TooManyFactors {
            count: factors.len(),
            cap: limits.max_factors,
        });
    }
    for f in factors {
        if !same_registry(&f.registry, &first.registry) {
            return Err(PlanError::RegistryMismatch);
        }
    }
    let registry = Arc::clone(&first.registry);
    if factors.len() == 1 {
        return Ok(ContractionPlan {
            registry,
            root: PlanNode::Leaf {
                factor: 0,
                signature: factors[0].indices.clone(),
            },
            leaf_count: 1,
            total_flops: 0,
            peak_components: 0,
            heuristic: false,
        });
    }
    if factors.len() <= limits.exhaustive_max {
        Ok(plan_exhaustive(&registry, factors))
    } else {
        Ok(plan_greedy(&registry, factors))
    }
}

fn make_node(
    registry: &SpaceRegistry,
    left: DpEntry,
    right: DpEntry,
    external: &BTreeSet<IndexGroup>,
) -> DpEntry {
    let signature = combine_signatures(left.node.signature(), right.node.signature(), external);
    let cost = node_cost(registry, left.node.signature(), right.node.signature());
    let result = signature_components(registry, &signature);
    let flops = left.flops + right.flops + cost;
    // Execution order of the children only affects peak memory; prefer the
    // cheaper order, falling back to key order.
    let peak_lr = schedule_peak(&left, &right, result);
    let peak_rl = schedule_peak(&right, &left, result);
    let (first, second, peak) = if peak_rl < peak_lr {
        (right, left, peak_rl)
    } else {
        (left, right, peak_lr)
    };
    let node = PlanNode::Node {
        left: Box::new(first.node),
        right: Box::new(second.node),
        signature,
        node_flops: cost,
        result_components: result,
    };
    let key = node.canon_key();
    DpEntry {
        node,
        flops,
        peak,
        key,
    }
}

fn better(a: &DpEntry, b: &DpEntry) -> bool {
    (a.flops, a.peak, &a.key) < (b.flops, b.peak, &b.key)
}

fn plan_exhaustive(registry: &Arc<SpaceRegistry>, factors: &[FactorSignature]) -> ContractionPlan {
    let k = factors.len();
    let full = (1usize << k) - 1;
    let mut table: Vec<Option<DpEntry>> = (0..=full).map(|_| None).collect();
    for (i, f) in factors.iter().enumerate() {
        let node = PlanNode::Leaf {
            factor: i,
            signature: f.indices.clone(),
        };
        let key = node.canon_key();
        table[1 << i] = Some(DpEntry {
            node,
            flops: 0,
            peak: 0,
            key,
        });
    }
    for mask in 1..=full {
        if mask.count_ones() < 2 {
            continue;
        }
        let external = leaf_groups(factors, mask);
        let low = mask & mask.wrapping_neg();
        // Enumerate partitions with the lowest leaf pinned to one side.
        let rest = mask ^ low;
        let mut sub = rest;
        loop {
            let left_mask = low | (rest ^ sub);
            let right_mask = sub;
            if right_mask != 0 {
                let left = clone_entry(table[left_mask].as_ref().unwrap());
                let right = clone_entry(table[right_mask].as_ref().unwrap());
                let candidate = make_node(registry, left, right, &external);
                let replace = match &table[mask] {
                    None => true,
                    Some(current) => better(&candidate, current),
                };
                if replace {
                    table[mask] = Some(candidate);
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    let best = table[full].take().unwrap();
    ContractionPlan {
        registry: Arc::clone(registry),
        root: best.node,
        leaf_count: k,
        total_flops: best.flops,
        peak_components: best.peak,
        heuristic: false,
    }
}

fn clone_entry(e: &DpEntry) -> DpEntry {
    DpEntry {
        node: e.node.clone(),
        flops: e.flops,
        peak: e.peak,
        key: e.key.clone(),
    }
}

/// Greedy fallback above the exhaustive threshold: repeatedly combines the
/// pair with the cheapest pairwise cost (ties by position).
fn plan_greedy(registry: &Arc<SpaceRegistry>, factors: &[FactorSignature]) -> ContractionPlan {
    let mut live: Vec<(DpEntry, usize)> = factors
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let node = PlanNode::Leaf {
                factor: i,
                signature: f.indices.clone(),
            };
            let key = node.canon_key();
            (
                DpEntry {
                    node,
                    flops: 0,
                    peak: 0,
                    key,
                },
                1usize << i,
            )
        })
        .collect();
    while live.len() > 1 {
        let mut best: Option<(usize, usize, u128)> = None;
        for i in 0..live.len() {
            for j in (i + 1)..live.len() {
                let cost = node_cost(registry, live[i].0.node.signature(), live[j].0.node.signature());
                if best.is_none_or(|(_, _, c)| cost < c) {
                    best = Some((i, j, cost));
                }
            }
        }
        let (i, j, _) = best.unwrap();
        let (right, right_mask) = live.swap_remove(j);
        let (left, left_mask) = live.swap_remove(i);
        let mask = left_mask | right_mask;
        let external = leaf_groups(factors, mask);
        let node = make_node(registry, left, right, &external);
        live.push((node, mask));
        // Keep deterministic pair ordering for the next sweep.
        live.sort_by_key(|(_, m)| m.trailing_zeros());
    }
    let (best, _) = live.pop().unwrap();
    ContractionPlan {
        registry: Arc::clone(registry),
        root: best.node,
        leaf_count: factors.len(),
        total_flops: best.flops,
        peak_components: best.peak,
        heuristic: true,
    }
}

/// The canonical left-to-right chain plan, mostly useful as a baseline.
pub fn left_to_right_plan(factors: &[FactorSignature]) -> Result<ContractionPlan, PlanError> {
    let Some(first) = factors.first() else {
        return Err(PlanError::EmptyFactorList);
    };
    let registry = Arc::clone(&first.registry);
    for f in factors {
        if !same_registry(&f.registry, &registry) {
            return Err(PlanError::RegistryMismatch);
        }
    }
    let mut entry = DpEntry {
        node: PlanNode::Leaf {
            factor: 0,
            signature: factors[0].indices.clone(),
        },
        flops: 0,
        peak: 0,
        key: vec![0],
    };
    for (i, f) in factors.iter().enumerate().skip(1) {
        let mask: usize = (0..=i).map(|b| 1usize << b).sum();
        let external = leaf_groups(factors, mask);
        let leaf = DpEntry {
            node: PlanNode::Leaf {
                factor: i,
                signature: f.indices.clone(),
            },
            flops: 0,
            peak: 0,
            key: vec![i as i64],
        };
        // Chain order is fixed: accumulated result first, next factor second.
        let signature = combine_signatures(entry.node.signature(), leaf.node.signature(), &external);
        let cost = node_cost(&registry, entry.node.signature(), leaf.node.signature());
        let result = signature_components(&registry, &signature);
        let peak = schedule_peak(&entry, &leaf, result);
        let flops = entry.flops + cost;
        let node = PlanNode::Node {
            left: Box::new(entry.node),
            right: Box::new(leaf.node),
            signature,
            node_flops: cost,
            result_components: result,
        };
        let key = node.canon_key();
        entry = DpEntry {
            node,
            flops,
            peak,
            key,
        };
    }
    Ok(ContractionPlan {
        registry,
        root: entry.node,
        leaf_count: factors.len(),
        total_flops: entry.flops,
        peak_components: entry.peak,
        heuristic: false,
    })
}

/// Evaluates a plan bottom-up over the given factors. Intermediates are
/// dropped as soon as their consumer has run; the measured peak of live
/// intermediate components is returned alongside the result and never
/// exceeds the plan's annotation.
pub fn execute_with_stats(
    plan: &ContractionPlan,
    factors: &[&DenseTensor],
) -> Result<(DenseTensor, u128), PlanError> {
    if factors.len() != plan.leaf_count {
        return Err(PlanError::TooManyFactors {
            count: factors.len(),
            cap: plan.leaf_count,
        });
    }
    for f in factors {
        if !same_registry(f.registry(), &plan.registry) {
            return Err(PlanError::RegistryMismatch);
        }
    }
    validate_leaves(&plan.root, factors)?;
    let (result, peak, _) = eval_node(&plan.root, factors)?;
    Ok((result, peak))
}

pub fn execute(plan: &ContractionPlan, factors: &[&DenseTensor]) -> Result<DenseTensor, PlanError> {
    execute_with_stats(plan, factors).map(|(t, _)| t)
}

fn validate_leaves(node: &PlanNode, factors: &[&DenseTensor]) -> Result<(), PlanError> {
    match node {
        PlanNode::Leaf { factor, signature } => {
            let found = factors[*factor];
            if found.indices() != signature.as_slice() {
                let expected = IndexSpec::from_indices(found.registry(), signature.clone())
                    .map(|s| s.to_string())
                    .unwrap_or_default();
                return Err(PlanError::LeafMismatch {
                    position: *factor,
                    expected,
                    found: found.spec().to_string(),
                });
            }
            Ok(())
        }
        PlanNode::Node { left, right, .. } => {
            validate_leaves(left, factors)?;
            validate_leaves(right, factors)
        }
    }
}

fn eval_node(
    node: &PlanNode,
    factors: &[&DenseTensor],
) -> Result<(DenseTensor, u128, u128), PlanError> {
    match node {
        PlanNode::Leaf { factor, .. } => Ok((factors[*factor].clone(), 0, 0)),
        PlanNode::Node {
            left,
            right,
            signature,
            ..
        } => {
            let (lt, peak_l, size_l) = eval_node(left, factors)?;
            let (rt, peak_r, size_r) = eval_node(right, factors)?;
            // Groups surviving in the planned signature must not contract.
            let external: BTreeSet<IndexGroup> =
                signature.iter().map(TensorIndex::group).collect();
            let result = product_pair_in_context(&lt, &rt, &external)?;
            drop(lt);
            drop(rt);
            let size = result.components().len() as u128;
            let peak = peak_l
                .max(size_l + peak_r)
                .max(size_l + size_r + size);
            Ok((result, peak, size))
        }
    }
}

/// Per-node cost dump: one line per internal node in execution order, plus
/// totals. Stable across runs for a fixed plan.
pub struct CostReport {
    pub lines: Vec<String>,
    pub total_flops: u128,
    pub peak_components: u128,
    pub expression: String,
    pub heuristic: bool,
}

pub fn cost_report(plan: &ContractionPlan, names: &[&str]) -> CostReport {
    let mut lines = Vec::new();
    walk_report(&plan.root, names, &mut lines);
    CostReport {
        lines,
        total_flops: plan.total_flops,
        peak_components: plan.peak_components,
        expression: plan.expression(names),
        heuristic: plan.heuristic,
    }
}

fn walk_report(node: &PlanNode, names: &[&str], lines: &mut Vec<String>) {
    if let PlanNode::Node {
        left,
        right,
        node_flops,
        result_components,
        ..
    } = node
    {
        walk_report(left, names, lines);
        walk_report(right, names, lines);
        lines.push(format!(
            "node {} flops={} result_components={}",
            node.describe(names),
            node_flops,
            result_components
        ));
    }
}

impl std::fmt::Display for CostReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        writeln!(
            f,
            "plan {}{} total_flops={} peak_components={}",
            self.expression,
            if self.heuristic { " (heuristic)" } else { "" },
            self.total_flops,
            self.peak_components
        )
    }
}
