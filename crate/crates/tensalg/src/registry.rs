//! Ordered vector spaces.
//!
//! A [`SpaceRegistry`] (the "world" a problem lives in) is an ordered list of
//! named vector spaces. The definition order is the canonical sort key for
//! tensor indices, which is what makes the tensor product commutative: every
//! index of a product result has a unique position regardless of factor order.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("duplicate space `{0}`")]
    DuplicateSpace(String),
    #[error("space extent must be at least 1, got 0 for `{0}`")]
    ZeroExtent(String),
    #[error("invalid space name `{0}`: expected [A-Za-z][A-Za-z0-9]*")]
    InvalidName(String),
    #[error("unknown space `{0}`")]
    UnknownSpace(String),
}

/// Canonical rank of a space: its 0-based position in the definition order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpaceId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Space {
    pub name: String,
    pub extent: usize,
}

/// Ordered set of named vector spaces.
///
/// Spaces are appended with [`define_space`](Self::define_space) and the order
/// is then fixed for good: tensors hold the registry behind an [`Arc`], so
/// once the first tensor exists no `&mut` access (and hence no further
/// definition) is possible. Setup is single-threaded by contract; after that
/// the registry is immutable and freely shared.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpaceRegistry {
    spaces: Vec<Space>,
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => chars.all(|c| c.is_ascii_alphanumeric()),
        _ => false,
    }
}

impl SpaceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a space at the end of the order.
    pub fn define_space(&mut self, name: &str, extent: usize) -> Result<SpaceId, RegistryError> {
        if !valid_name(name) {
            return Err(RegistryError::InvalidName(name.to_string()));
        }
        if extent == 0 {
            return Err(RegistryError::ZeroExtent(name.to_string()));
        }
        if self.spaces.iter().any(|s| s.name == name) {
            return Err(RegistryError::DuplicateSpace(name.to_string()));
        }
        self.spaces.push(Space {
            name: name.to_string(),
            extent,
        });
        Ok(SpaceId(self.spaces.len() - 1))
    }

    /// 0-based position of a space in the definition order.
    pub fn canonical_rank(&self, name: &str) -> Result<SpaceId, RegistryError> {
        self.spaces
            .iter()
            .position(|s| s.name == name)
            .map(SpaceId)
            .ok_or_else(|| RegistryError::UnknownSpace(name.to_string()))
    }

    /// Resolves a notation letter to a space: exact match first, then a
    /// unique case-insensitive match (notation `x` names the space `X`).
    pub fn resolve_notation(&self, letters: &str) -> Result<SpaceId, RegistryError> {
        if let Ok(id) = self.canonical_rank(letters) {
            return Ok(id);
        }
        let mut hit = None;
        for (i, s) in self.spaces.iter().enumerate() {
            if s.name.eq_ignore_ascii_case(letters) {
                if hit.is_some() {
                    return Err(RegistryError::UnknownSpace(letters.to_string()));
                }
                hit = Some(SpaceId(i));
            }
        }
        hit.ok_or_else(|| RegistryError::UnknownSpace(letters.to_string()))
    }

    pub fn space(&self, id: SpaceId) -> &Space {
        &self.spaces[id.0]
    }

    pub fn extent(&self, id: SpaceId) -> usize {
        self.spaces[id.0].extent
    }

    pub fn name(&self, id: SpaceId) -> &str {
        &self.spaces[id.0].name
    }

    pub fn len(&self) -> usize {
        self.spaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spaces.is_empty()
    }

    pub fn spaces(&self) -> impl Iterator<Item = (SpaceId, &Space)> {
        self.spaces.iter().enumerate().map(|(i, s)| (SpaceId(i), s))
    }

    pub fn into_shared(self) -> Arc<SpaceRegistry> {
        Arc::new(self)
    }
}

impl fmt::Display for SpaceRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.spaces {
            writeln!(f, "space {} {}", s.name, s.extent)?;
        }
        Ok(())
    }
}
