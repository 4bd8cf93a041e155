//! Accounting of component-buffer allocations.
//!
//! Structured operators promise to never materialize the dense system
//! tensor. That promise is testable: every component buffer the crate
//! allocates is reported here, and a test can open a scope and assert an
//! upper bound on the largest single allocation it saw.

use std::cell::Cell;

thread_local! {
    static MAX_SINGLE: Cell<usize> = const { Cell::new(0) };
}

/// Records one component-buffer allocation of `n` doubles.
pub fn record(n: usize) {
    MAX_SINGLE.with(|m| {
        if n > m.get() {
            m.set(n);
        }
    });
}

/// Allocates a zeroed component buffer, recording its size.
pub fn alloc_components(n: usize) -> Vec<f64> {
    record(n);
    vec![0.0; n]
}

/// Tracks the largest single component allocation on this thread while alive.
pub struct AllocationScope {
    previous_max: usize,
}

impl AllocationScope {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let previous_max = MAX_SINGLE.with(|m| m.replace(0));
        Self { previous_max }
    }

    /// Largest single allocation (in components) observed since the scope
    /// opened.
    pub fn max_single_components(&self) -> usize {
        MAX_SINGLE.with(Cell::get)
    }
}

impl Drop for AllocationScope {
    fn drop(&mut self) {
        let seen = MAX_SINGLE.with(Cell::get);
        MAX_SINGLE.with(|m| m.set(self.previous_max.max(seen)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_tracks_largest_allocation() {
        let scope = AllocationScope::new();
        let _a = alloc_components(10);
        let _b = alloc_components(500);
        let _c = alloc_components(3);
        assert_eq!(scope.max_single_components(), 500);
    }

    #[test]
    fn nested_scopes_restore_outer_max() {
        let outer = AllocationScope::new();
        let _a = alloc_components(100);
        {
            let inner = AllocationScope::new();
            let _b = alloc_components(7);
            assert_eq!(inner.max_single_components(), 7);
        }
        assert_eq!(outer.max_single_components(), 100);
    }
}
