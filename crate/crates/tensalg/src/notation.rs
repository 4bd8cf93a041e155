//! Index notation: parsing and printing of index-specification strings.
//!
//! An index spec is a comma-separated token list such as `"x^1,x_,y^1,y_"`.
//! Each token names a space (case-insensitively), a variance mark (`^` for
//! contravariant, `_` for covariant) and an optional decimal frame label;
//! a missing label means frame 0. The frame label distinguishes coordinate
//! systems within one space (`x` vs `x1` vs `x2`).

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::registry::{SpaceId, SpaceRegistry};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NotationError {
    #[error("token {position} `{token}`: missing variance mark `^` or `_`")]
    MissingVariance { position: usize, token: String },
    #[error("token {position} `{token}`: frame label is not a decimal number")]
    BadFrame { position: usize, token: String },
    #[error("token {position} `{token}`: unknown space `{space}`")]
    UnknownSpace {
        position: usize,
        token: String,
        space: String,
    },
    #[error("token {position} `{token}`: duplicate index")]
    DuplicateIndex { position: usize, token: String },
    #[error("token {position}: empty token")]
    EmptyToken { position: usize },
}

/// Whether an index transforms with the basis (covariant, subscript) or
/// against it (contravariant, superscript). Contravariant sorts first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variance {
    Contravariant,
    Covariant,
}

impl Variance {
    pub fn flipped(self) -> Self {
        match self {
            Variance::Contravariant => Variance::Covariant,
            Variance::Covariant => Variance::Contravariant,
        }
    }

    pub fn mark(self) -> char {
        match self {
            Variance::Contravariant => '^',
            Variance::Covariant => '_',
        }
    }
}

/// One tensor index: a space, a coordinate-system label and a variance.
///
/// Two indices are *the same index* iff all three fields match; they form a
/// *contraction pair* iff space and frame match and the variances differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorIndex {
    pub space: SpaceId,
    pub frame: u32,
    pub variance: Variance,
}

impl TensorIndex {
    pub fn new(space: SpaceId, frame: u32, variance: Variance) -> Self {
        Self {
            space,
            frame,
            variance,
        }
    }

    /// Canonical sort key: space rank, then frame, then contravariant first.
    pub fn canonical_key(&self) -> (usize, u32, Variance) {
        (self.space.0, self.frame, self.variance)
    }

    /// The (space, frame) pair indices are grouped by in products.
    pub fn group(&self) -> (SpaceId, u32) {
        (self.space, self.frame)
    }

    pub fn flipped(&self) -> Self {
        Self {
            variance: self.variance.flipped(),
            ..*self
        }
    }
}

/// An ordered index list as written by the user, tied to its registry.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSpec {
    registry: Arc<SpaceRegistry>,
    indices: Vec<TensorIndex>,
}

impl IndexSpec {
    /// Builds a spec from explicit indices, rejecting duplicate triples.
    pub fn from_indices(
        registry: &Arc<SpaceRegistry>,
        indices: Vec<TensorIndex>,
    ) -> Result<Self, NotationError> {
        for (i, idx) in indices.iter().enumerate() {
            if indices[..i].contains(idx) {
                return Err(NotationError::DuplicateIndex {
                    position: i + 1,
                    token: format_index(registry, idx),
                });
            }
        }
        Ok(Self {
            registry: Arc::clone(registry),
            indices,
        })
    }

    /// Parses a comma-separated index list. The empty string is the spec of
    /// an order-0 tensor (a scalar).
    pub fn parse(registry: &Arc<SpaceRegistry>, text: &str) -> Result<Self, NotationError> {
        let mut indices = Vec::new();
        if text.trim().is_empty() {
            return Ok(Self {
                registry: Arc::clone(registry),
                indices,
            });
        }
        for (pos, raw) in text.split(',').enumerate() {
            let position = pos + 1;
            let token = raw.trim();
            if token.is_empty() {
                return Err(NotationError::EmptyToken { position });
            }
            let mark_at = token.find(['^', '_']).ok_or_else(|| {
                NotationError::MissingVariance {
                    position,
                    token: token.to_string(),
                }
            })?;
            let (letters, rest) = token.split_at(mark_at);
            let variance = if rest.starts_with('^') {
                Variance::Contravariant
            } else {
                Variance::Covariant
            };
            let label = &rest[1..];
            let frame = if label.is_empty() {
                0
            } else {
                label
                    .parse::<u32>()
                    .map_err(|_| NotationError::BadFrame {
                        position,
                        token: token.to_string(),
                    })?
            };
            let space = registry.resolve_notation(letters).map_err(|_| {
                NotationError::UnknownSpace {
                    position,
                    token: token.to_string(),
                    space: letters.to_string(),
                }
            })?;
            let index = TensorIndex::new(space, frame, variance);
            if indices.contains(&index) {
                return Err(NotationError::DuplicateIndex {
                    position,
                    token: token.to_string(),
                });
            }
            indices.push(index);
        }
        Ok(Self {
            registry: Arc::clone(registry),
            indices,
        })
    }

    pub fn registry(&self) -> &Arc<SpaceRegistry> {
        &self.registry
    }

    pub fn indices(&self) -> &[TensorIndex] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Flips the variance of every index; frames and spaces are unchanged.
    /// Used to build Kronecker-delta bridges between frames.
    pub fn negated(&self) -> Self {
        Self {
            registry: Arc::clone(&self.registry),
            indices: self.indices.iter().map(TensorIndex::flipped).collect(),
        }
    }

    /// Product of the extents of all index spaces (1 for an order-0 spec).
    pub fn component_count(&self) -> usize {
        self.indices
            .iter()
            .map(|i| self.registry.extent(i.space))
            .product()
    }
}

fn format_index(registry: &SpaceRegistry, index: &TensorIndex) -> String {
    let mut s = registry.name(index.space).to_ascii_lowercase();
    s.push(index.variance.mark());
    if index.frame != 0 {
        s.push_str(&index.frame.to_string());
    }
    s
}

impl fmt::Display for IndexSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for idx in &self.indices {
            if !first {
                write!(f, ",")?;
            }
            first = false;
            write!(f, "{}", format_index(&self.registry, idx))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xyz() -> Arc<SpaceRegistry> {
        let mut reg = SpaceRegistry::new();
        reg.define_space("X", 2).unwrap();
        reg.define_space("Y", 3).unwrap();
        reg.define_space("Z", 4).unwrap();
        reg.into_shared()
    }

    #[test]
    fn parses_operator_style_spec() {
        let reg = xyz();
        let spec = IndexSpec::parse(&reg, "x^1,x_").unwrap();
        assert_eq!(
            spec.indices(),
            &[
                TensorIndex::new(SpaceId(0), 1, Variance::Contravariant),
                TensorIndex::new(SpaceId(0), 0, Variance::Covariant),
            ]
        );
    }

    #[test]
    fn parses_rhs_style_spec() {
        let reg = xyz();
        let spec = IndexSpec::parse(&reg, "x^1,y^1,z^1").unwrap();
        assert_eq!(spec.len(), 3);
        for (i, idx) in spec.indices().iter().enumerate() {
            assert_eq!(idx.space, SpaceId(i));
            assert_eq!(idx.frame, 1);
            assert_eq!(idx.variance, Variance::Contravariant);
        }
    }

    #[test]
    fn duplicate_triple_rejected() {
        let reg = xyz();
        let err = IndexSpec::parse(&reg, "x^1,x^1").unwrap_err();
        assert_eq!(
            err,
            NotationError::DuplicateIndex {
                position: 2,
                token: "x^1".to_string()
            }
        );
    }

    #[test]
    fn unknown_space_reports_token_position() {
        let reg = xyz();
        let err = IndexSpec::parse(&reg, "x^, q_2").unwrap_err();
        assert_eq!(
            err,
            NotationError::UnknownSpace {
                position: 2,
                token: "q_2".to_string(),
                space: "q".to_string()
            }
        );
    }

    #[test]
    fn malformed_tokens_rejected() {
        let reg = xyz();
        assert!(matches!(
            IndexSpec::parse(&reg, "x1").unwrap_err(),
            NotationError::MissingVariance { position: 1, .. }
        ));
        assert!(matches!(
            IndexSpec::parse(&reg, "x^a").unwrap_err(),
            NotationError::BadFrame { position: 1, .. }
        ));
        assert!(matches!(
            IndexSpec::parse(&reg, "x^,,y^").unwrap_err(),
            NotationError::EmptyToken { position: 2 }
        ));
    }

    #[test]
    fn negation_flips_every_variance() {
        let reg = xyz();
        let spec = IndexSpec::parse(&reg, "x_,y^2").unwrap();
        let neg = spec.negated();
        assert_eq!(neg.indices()[0].variance, Variance::Contravariant);
        assert_eq!(neg.indices()[1].variance, Variance::Covariant);
        assert_eq!(neg.indices()[1].frame, 2);
        assert_eq!(neg.negated(), spec);
    }

    #[test]
    fn print_round_trips() {
        let reg = xyz();
        for text in ["x^1,x_", "", "z_2", "x^1,y^1,z^1", "x^ , y_10"] {
            let spec = IndexSpec::parse(&reg, text).unwrap();
            let printed = spec.to_string();
            let reparsed = IndexSpec::parse(&reg, &printed).unwrap();
            assert_eq!(reparsed, spec, "round trip failed for `{text}`");
        }
    }

    #[test]
    fn frame_zero_prints_without_label() {
        let reg = xyz();
        let spec = IndexSpec::parse(&reg, "x^1,x_").unwrap();
        assert_eq!(spec.to_string(), "x^1,x_");
        let scalar = IndexSpec::parse(&reg, "").unwrap();
        assert_eq!(scalar.to_string(), "");
        let labeled = IndexSpec::parse(&reg, "z_2").unwrap();
        assert_eq!(labeled.to_string(), "z_2");
    }

    #[test]
    fn multi_character_space_names_parse() {
        let mut reg = SpaceRegistry::new();
        reg.define_space("AB", 3).unwrap();
        reg.define_space("A", 2).unwrap();
        let reg = reg.into_shared();
        let spec = IndexSpec::parse(&reg, "ab^12,a_").unwrap();
        assert_eq!(spec.indices()[0].space, SpaceId(0));
        assert_eq!(spec.indices()[0].frame, 12);
        assert_eq!(spec.indices()[1].space, SpaceId(1));
        assert_eq!(spec.to_string(), "ab^12,a_");
    }

    #[test]
    fn whitespace_is_ignored() {
        let reg = xyz();
        let a = IndexSpec::parse(&reg, " x^1 , y_ ").unwrap();
        let b = IndexSpec::parse(&reg, "x^1,y_").unwrap();
        assert_eq!(a, b);
    }
}
