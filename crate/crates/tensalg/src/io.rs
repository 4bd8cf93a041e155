//! File formats: tensor files, problem configurations, expression files.
//!
//! Everything is line-oriented text. Tensor files round-trip values exactly
//! (17 significant digits); writers go through a temporary file and rename,
//! so failed runs leave no partial output behind.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::notation::{IndexSpec, NotationError};
use crate::registry::{RegistryError, SpaceRegistry};
use crate::separable::{convolution_1d, laplacian, SeparableError, SeparableOperator, Term};
use crate::solvers::{LinearMap, SolveError};
use crate::tensor::{DenseTensor, TensorError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Notation(#[from] NotationError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Separable(#[from] SeparableError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Malformed {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

/// Serializes a value with 17 significant digits, enough for f64 round-trips.
pub fn format_component(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a file through a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), IoError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "out".to_string())
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| file_err(&tmp, e))?;
        f.write_all(contents.as_bytes())
            .map_err(|e| file_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| file_err(path, e))?;
    Ok(())
}

/// Writes a tensor file:
///
/// ```text
/// tensorfile 1
/// space X 2
/// space Y 3
/// indices x^1,y^1
/// data
/// <whitespace-separated components, canonical row-major>
/// ```
pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<(), IoError> {
    let mut out = String::from("tensorfile 1\n");
    for (_, space) in t.registry().spaces() {
        out.push_str(&format!("space {} {}\n", space.name, space.extent));
    }
    out.push_str(&format!("indices {}\n", t.spec()));
    out.push_str("data\n");
    for chunk in t.components().chunks(8) {
        let line: Vec<String> = chunk.iter().map(|&v| format_component(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Reads a tensor file written by [`write_tensor`]. The registry is rebuilt
/// from the header; components are interpreted in canonical row-major order.
pub fn read_tensor(path: &Path) -> Result<DenseTensor, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut lines = text.lines().enumerate();

    let (n, first) = lines
        .next()
        .ok_or_else(|| malformed(path, 1, "empty file"))?;
    if first.trim() != "tensorfile 1" {
        return Err(malformed(path, n + 1, "expected header `tensorfile 1`"));
    }

    let mut registry = SpaceRegistry::new();
    let mut spec_text: Option<(usize, String)> = None;
    let mut data_line = 0usize;
    for (i, raw) in lines.by_ref() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix("space ") {
            let mut parts = rest.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| malformed(path, i + 1, "space line needs a name"))?;
            let extent: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed(path, i + 1, "space line needs a positive extent"))?;
            registry
                .define_space(name, extent)
                .map_err(|e| malformed(path, i + 1, e.to_string()))?;
        } else if let Some(rest) = line.strip_prefix("indices") {
            spec_text = Some((i + 1, rest.trim().to_string()));
        } else if line == "data" {
            data_line = i + 1;
            break;
        } else if !line.is_empty() {
            return Err(malformed(path, i + 1, format!("unexpected line `{line}`")));
        }
    }
    if data_line == 0 {
        return Err(malformed(path, text.lines().count(), "missing `data` line"));
    }
    let (spec_line, spec_text) =
        spec_text.ok_or_else(|| malformed(path, data_line, "missing `indices` line"))?;
    let registry = registry.into_shared();
    let spec = IndexSpec::parse(&registry, &spec_text)
        .map_err(|e| malformed(path, spec_line, e.to_string()))?;
    let mut canonical = spec.indices().to_vec();
    canonical.sort_by_key(|i| i.canonical_key());
    let canonical_spec = IndexSpec::from_indices(&registry, canonical)
        .map_err(|e| malformed(path, spec_line, e.to_string()))?;

    let mut components = Vec::with_capacity(canonical_spec.component_count());
    for (i, raw) in lines {
        for token in raw.split_whitespace() {
            let v: f64 = token.parse().map_err(|_| {
                malformed(path, i + 1, format!("bad component `{token}`"))
            })?;
            components.push(v);
        }
    }
    let expected = canonical_spec.component_count();
    if components.len() != expected {
        return Err(malformed(
            path,
            text.lines().count(),
            format!(
                "expected {expected} components, found {}",
                components.len()
            ),
        ));
    }
    Ok(DenseTensor::from_components(&canonical_spec, components)?)
}

/// A parsed expression file: the registry from its `extent` lines and the
/// named factor specs.
#[derive(Debug)]
pub struct ExpressionFile {
    pub registry: Arc<SpaceRegistry>,
    pub factors: Vec<(String, IndexSpec)>,
}

/// Parses an expression file:
///
/// ```text
/// extent X 2
/// extent Y 3
/// A : x^1,x_
/// T : x^,y^
/// ```
pub fn read_expression_file(path: &Path) -> Result<ExpressionFile, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut registry = SpaceRegistry::new();
    let mut raw_factors: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("extent ") {
            let mut parts = rest.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| malformed(path, i + 1, "extent line needs a name"))?;
            let extent: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed(path, i + 1, "extent line needs a positive size"))?;
            registry
                .define_space(name, extent)
                .map_err(|e| malformed(path, i + 1, e.to_string()))?;
        } else if let Some((name, spec)) = line.split_once(':') {
            let name = name.trim();
            if name.is_empty() {
                return Err(malformed(path, i + 1, "factor line needs a name"));
            }
            raw_factors.push((i + 1, name.to_string(), spec.trim().to_string()));
        } else {
            return Err(malformed(
                path,
                i + 1,
                format!("expected `extent <space> <n>` or `<name> : <index-spec>`, got `{line}`"),
            ));
        }
    }
    let registry = registry.into_shared();
    let mut factors = Vec::with_capacity(raw_factors.len());
    for (line, name, spec_text) in raw_factors {
        let spec = IndexSpec::parse(&registry, &spec_text)
            .map_err(|e| malformed(path, line, e.to_string()))?;
        factors.push((name, spec));
    }
    if factors.is_empty() {
        return Err(malformed(path, 1, "expression file defines no factors"));
    }
    Ok(ExpressionFile { registry, factors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Direct,
    Jacobi,
    Cg,
    Tmg,
}

impl SolverKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(SolverKind::Direct),
            "jacobi" => Some(SolverKind::Jacobi),
            "cg" => Some(SolverKind::Cg),
            "tmg" => Some(SolverKind::Tmg),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Direct => "direct",
            SolverKind::Jacobi => "jacobi",
            SolverKind::Cg => "cg",
            SolverKind::Tmg => "tmg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Absolute,
    Relative,
}

#[derive(Debug, Clone)]
pub enum OperatorSpec {
    Laplacian { spec: Option<String> },
    Convolution { spec: Option<String>, kernel: Vec<f64> },
    Dense { path: PathBuf },
}

/// A parsed problem configuration.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub registry: Arc<SpaceRegistry>,
    pub operator: OperatorSpec,
    pub rhs_path: PathBuf,
    pub solver: SolverKind,
    pub threshold: f64,
    pub threshold_mode: ThresholdMode,
    pub max_iters: usize,
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    pub negate: bool,
    pub output_path: PathBuf,
}

/// Parses a problem config:
///
/// ```text
/// space X 17
/// space Y 17
/// operator laplacian x^1,x_,y^1,y_
/// rhs rhs.tensor
/// solver cg
/// threshold 1e-8
/// mode relative
/// max_iters 500
/// sweeps 2 2
/// negate true
/// output solution.tensor
/// ```
///
/// `threshold` defaults to 1.0e-4 (absolute) when the line is omitted.
/// Relative paths resolve against the config file's directory.
pub fn read_problem_config(path: &Path) -> Result<ProblemConfig, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let resolve = |s: &str| -> PathBuf {
        let p = PathBuf::from(s);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    let mut registry = SpaceRegistry::new();
    let mut operator: Option<OperatorSpec> = None;
    let mut rhs_path: Option<PathBuf> = None;
    let mut solver: Option<SolverKind> = None;
    let mut threshold = 1.0e-4;
    let mut threshold_mode = ThresholdMode::Absolute;
    let mut max_iters = 1000usize;
    let mut pre_sweeps = 2usize;
    let mut post_sweeps = 2usize;
    let mut negate = false;
    let mut output_path: Option<PathBuf> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let want = |cond: bool, msg: &str| -> Result<(), IoError> {
            if cond {
                Ok(())
            } else {
                Err(malformed(path, i + 1, msg))
            }
        };
        match key {
            "space" => {
                let mut parts = rest.split_whitespace();
                let name = parts
                    .next()
                    .ok_or_else(|| malformed(path, i + 1, "space line needs a name"))?;
                let extent: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| malformed(path, i + 1, "space line needs a positive extent"))?;
                registry
                    .define_space(name, extent)
                    .map_err(|e| malformed(path, i + 1, e.to_string()))?;
            }
            "operator" => {
                let mut parts = rest.split_whitespace();
                let kind = parts
                    .next()
                    .ok_or_else(|| malformed(path, i + 1, "operator line needs a kind"))?;
                operator = Some(match kind {
                    "laplacian" => OperatorSpec::Laplacian {
                        spec: parts.next().map(str::to_string),
                    },
                    "convolution" => {
                        let rest_tokens: Vec<&str> = parts.collect();
                        let (spec, kernel_tokens) = match rest_tokens.first() {
                            Some(t) if t.contains('^') || t.contains('_') => {
                                (Some(rest_tokens[0].to_string()), &rest_tokens[1..])
                            }
                            _ => (None, &rest_tokens[..]),
                        };
                        let kernel: Vec<f64> = kernel_tokens
                            .iter()
                            .map(|t| t.parse::<f64>())
                            .collect::<Result<_, _>>()
                            .map_err(|_| {
                                malformed(path, i + 1, "convolution kernel values must be numbers")
                            })?;
                        want(!kernel.is_empty(), "convolution needs kernel values")?;
                        OperatorSpec::Convolution { spec, kernel }
                    }
                    "dense" => {
                        want(!rest.is_empty(), "dense operator needs a path")?;
                        let p = parts.next().ok_or_else(|| {
                            malformed(path, i + 1, "dense operator needs a path")
                        })?;
                        OperatorSpec::Dense { path: resolve(p) }
                    }
                    other => {
                        return Err(malformed(
                            path,
                            i + 1,
                            format!("unknown operator `{other}` (laplacian, convolution, dense)"),
                        ))
                    }
                });
            }
            "rhs" => {
                want(!rest.is_empty(), "rhs line needs a path")?;
                rhs_path = Some(resolve(rest));
            }
            "solver" => {
                solver = Some(SolverKind::parse(rest).ok_or_else(|| {
                    malformed(
                        path,
                        i + 1,
                        format!("unknown solver `{rest}` (direct, jacobi, cg, tmg)"),
                    )
                })?);
            }
            "threshold" => {
                threshold = rest
                    .parse()
                    .map_err(|_| malformed(path, i + 1, "threshold must be a number"))?;
            }
            "mode" => {
                threshold_mode = match rest {
                    "absolute" => ThresholdMode::Absolute,
                    "relative" => ThresholdMode::Relative,
                    _ => return Err(malformed(path, i + 1, "mode is `absolute` or `relative`")),
                };
            }
            "max_iters" => {
                max_iters = rest
                    .parse()
                    .map_err(|_| malformed(path, i + 1, "max_iters must be an integer"))?;
            }
            "sweeps" => {
                let mut parts = rest.split_whitespace();
                pre_sweeps = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| malformed(path, i + 1, "sweeps needs two integers"))?;
                post_sweeps = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(pre_sweeps);
            }
            "negate" => {
                negate = match rest {
                    "true" => true,
                    "false" => false,
                    _ => return Err(malformed(path, i + 1, "negate is `true` or `false`")),
                };
            }
            "output" => {
                want(!rest.is_empty(), "output line needs a path")?;
                output_path = Some(resolve(rest));
            }
            other => {
                return Err(malformed(path, i + 1, format!("unknown key `{other}`")));
            }
        }
    }

    Ok(ProblemConfig {
        registry: registry.into_shared(),
        operator: operator.ok_or_else(|| malformed(path, 1, "missing `operator` line"))?,
        rhs_path: rhs_path.ok_or_else(|| malformed(path, 1, "missing `rhs` line"))?,
        solver: solver.ok_or_else(|| malformed(path, 1, "missing `solver` line"))?,
        threshold,
        threshold_mode,
        max_iters,
        pre_sweeps,
        post_sweeps,
        negate,
        output_path: output_path.ok_or_else(|| malformed(path, 1, "missing `output` line"))?,
    })
}

/// Default operator spec pairing frames 0 -> 1 over every registry space.
fn default_operator_spec(registry: &SpaceRegistry) -> String {
    let mut parts = Vec::new();
    for (_, space) in registry.spaces() {
        let letter = space.name.to_ascii_lowercase();
        parts.push(format!("{letter}^1"));
        parts.push(format!("{letter}_"));
    }
    parts.join(",")
}

/// Builds the configured operator against the config registry.
pub fn build_operator(config: &ProblemConfig) -> Result<LinearMap, IoError> {
    let registry = &config.registry;
    match &config.operator {
        OperatorSpec::Laplacian { spec } => {
            let text = spec
                .clone()
                .unwrap_or_else(|| default_operator_spec(registry));
            let spec = IndexSpec::parse(registry, &text)?;
            Ok(LinearMap::separable(laplacian(registry, &spec, 2)?))
        }
        OperatorSpec::Convolution { spec, kernel } => {
            let text = spec
                .clone()
                .unwrap_or_else(|| default_operator_spec(registry));
            let spec = IndexSpec::parse(registry, &text)?;
            let op = separable_convolution(registry, &spec, kernel)?;
            Ok(LinearMap::separable(op))
        }
        OperatorSpec::Dense { path } => {
            let t = read_tensor(path)?;
            if t.registry().as_ref() != registry.as_ref() {
                return Err(malformed(
                    path,
                    1,
                    "dense operator spaces differ from the config spaces",
                ));
            }
            // Rebuild against the config registry so maps and tensors share it.
            let spec = IndexSpec::from_indices(registry, t.indices().to_vec())
                .map_err(TensorError::from)?;
            let t = DenseTensor::from_components(&spec, t.components().to_vec())?;
            Ok(LinearMap::dense(t)?)
        }
    }
}

/// Separable nD convolution: one term with the same 1D kernel factor on
/// every dimension of the operator spec.
pub fn separable_convolution(
    registry: &Arc<SpaceRegistry>,
    spec: &IndexSpec,
    kernel: &[f64],
) -> Result<SeparableOperator, IoError> {
    let identity = crate::separable::identity_operator(registry, spec)?;
    let mut factors = std::collections::BTreeMap::new();
    for space in identity.spaces() {
        let out_ = identity.output_index(space).unwrap();
        let in_ = identity.input_index(space).unwrap();
        factors.insert(space, convolution_1d(registry, out_, in_, kernel)?);
    }
    Ok(SeparableOperator::new(
        &identity.input_spec(),
        &identity.output_spec(),
        vec![Term {
            weight: 1.0,
            factors,
        }],
    )?)
}

/// Renders a solution report table: one `iteration ⟨R,R⟩` line per entry.
pub fn residual_table(history: &[f64]) -> String {
    let mut out = String::from("iteration  rho\n");
    for (i, rho) in history.iter().enumerate() {
        out.push_str(&format!("{i:9}  {}\n", format_component(*rho)));
    }
    out
}

/// Plot-ready two-column history file.
pub fn write_history(path: &Path, history: &[f64]) -> Result<(), IoError> {
    let mut out = String::new();
    for (i, rho) in history.iter().enumerate() {
        out.push_str(&format!("{i} {}\n", format_component(*rho)));
    }
    write_atomic(path, &out)
}

/// Writes a plain portable graymap (P2), normalizing values to 0..=255.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<(), IoError> {
    assert_eq!(values.len(), width * height);
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in 0..height {
        let line: Vec<String> = (0..width)
            .map(|col| {
                let v = values[row * width + col];
                let g = ((v - lo) * scale).round().clamp(0.0, 255.0) as u8;
                g.to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::SpaceRegistry;

    fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "tensalg-io-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn tensor_file_round_trips_exactly() {
        let dir = tempdir();
        let mut reg = SpaceRegistry::new();
        reg.define_space("X", 3).unwrap();
        reg.define_space("Y", 4).unwrap();
        let reg = reg.into_shared();
        let spec = IndexSpec::parse(&reg, "x^1,y_2").unwrap();
        let values: Vec<f64> = (0..12)
            .map(|k| ((k as f64) * 0.123456789).sin() * 1e3)
            .collect();
        let t = DenseTensor::from_components(&spec, values).unwrap();
        let path = dir.join("t.tensor");
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn scalar_tensor_file_round_trips() {
        let dir = tempdir();
        let mut reg = SpaceRegistry::new();
        reg.define_space("X", 2).unwrap();
        let reg = reg.into_shared();
        let spec = IndexSpec::parse(&reg, "").unwrap();
        let t = DenseTensor::from_components(&spec, vec![42.125]).unwrap();
        let path = dir.join("s.tensor");
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.scalar_value(), Some(42.125));
    }

    #[test]
    fn component_count_mismatch_reported() {
        let dir = tempdir();
        let path = dir.join("bad.tensor");
        fs::write(
            &path,
            "tensorfile 1\nspace X 3\nspace Y 4\nindices x^,y^\ndata\n1 2 3 4 5 6 7 8 9 10 11\n",
        )
        .unwrap();
        let err = read_tensor(&path).unwrap_err();
        assert!(
            err.to_string().contains("expected 12 components, found 11"),
            "{err}"
        );
    }

    #[test]
    fn unknown_space_in_indices_has_line_number() {
        let dir = tempdir();
        let path = dir.join("bad2.tensor");
        fs::write(&path, "tensorfile 1\nspace X 2\nindices q^\ndata\n1 2\n").unwrap();
        let err = read_tensor(&path).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn expression_file_parses() {
        let dir = tempdir();
        let path = dir.join("expr.txt");
        fs::write(
            &path,
            "extent X 2\nextent Y 3\n# factors\nA : x^1,x_\nT : x^,y^\n",
        )
        .unwrap();
        let expr = read_expression_file(&path).unwrap();
        assert_eq!(expr.factors.len(), 2);
        assert_eq!(expr.factors[0].0, "A");
        assert_eq!(expr.registry.len(), 2);
    }

    #[test]
    fn expression_file_parse_error_carries_line() {
        let dir = tempdir();
        let path = dir.join("expr_bad.txt");
        fs::write(&path, "extent X 2\nA x^1\n").unwrap();
        let err = read_expression_file(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn problem_config_parses_with_defaults() {
        let dir = tempdir();
        let path = dir.join("problem.cfg");
        fs::write(
            &path,
            "space X 5\nspace Y 5\noperator laplacian\nrhs rhs.tensor\nsolver jacobi\noutput out.tensor\n",
        )
        .unwrap();
        let cfg = read_problem_config(&path).unwrap();
        assert_eq!(cfg.threshold, 1.0e-4);
        assert_eq!(cfg.threshold_mode, ThresholdMode::Absolute);
        assert_eq!(cfg.solver, SolverKind::Jacobi);
        assert!(cfg.rhs_path.ends_with("rhs.tensor"));
        assert!(!cfg.negate);
        let op = build_operator(&cfg).unwrap();
        assert_eq!(op.input_spec().to_string(), "x^,y^");
    }

    #[test]
    fn pgm_output_is_normalized() {
        let dir = tempdir();
        let path = dir.join("img.pgm");
        write_pgm(&path, 2, 2, &[0.0, 1.0, 0.5, 1.0]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "P2\n2 2\n255\n0 255\n128 255\n");
    }
}
