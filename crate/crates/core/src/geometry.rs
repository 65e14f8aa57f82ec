//! Norm geometries over layered parameter spaces.
//!
//! A parameter vector is an ordered list of named blocks. Each block carries a
//! [`BlockGeometry`]: the norm used for that block (entrywise max for `Sign`,
//! operator norm for `Spectral`, ℓ2 for `Euclidean`), its shape and its ball
//! radius η. The composite primal norm is the max over blocks and the composite
//! dual norm is the sum of per-block dual norms (ℓ1, nuclear and ℓ2
//! respectively).
//!
//! The linear minimization oracle [`lmo`] returns, block by block, the minimizer
//! of ⟨m, d⟩ over the unit ball of the block norm. Over the product of unit
//! balls this gives ⟨m, lmo(m)⟩ = −‖m‖_* for the composite dual norm.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive guard in the Newton–Schulz pre-normalization.
pub const NS_NORM_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Sign,
    Spectral,
    Euclidean,
}

/// Block dimensions: `[n]` for a vector, `[rows, cols]` for a matrix.
/// Matrix data is stored row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = String;

    fn try_from(dims: Vec<usize>) -> std::result::Result<Self, String> {
        match dims.as_slice() {
            [n] if *n > 0 => Ok(Shape::Vector(*n)),
            [r, c] if *r > 0 && *c > 0 => Ok(Shape::Matrix(*r, *c)),
            _ => Err(format!("shape must be [n] or [rows, cols] with positive entries, got {dims:?}")),
        }
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        match s {
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockGeometry {
    pub name: String,
    pub kind: NormKind,
    pub shape: Shape,
    /// Ball radius η for this block.
    #[serde(alias = "radius_eta")]
    pub radius: f64,
}

impl BlockGeometry {
    pub fn new(name: impl Into<String>, kind: NormKind, shape: Shape, radius: f64) -> Result<Self> {
        let g = Self { name: name.into(), kind, shape, radius };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::config(format!("block `{}`: radius must be positive, got {}", self.name, self.radius)));
        }
        if self.kind == NormKind::Spectral && !matches!(self.shape, Shape::Matrix(..)) {
            return Err(Error::config(format!("block `{}`: spectral geometry needs a 2-D shape", self.name)));
        }
        if self.shape.is_empty() {
            return Err(Error::config(format!("block `{}`: empty shape", self.name)));
        }
        Ok(())
    }
}

/// Ordered list of block geometries with unique names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Geometry {
    pub blocks: Vec<BlockGeometry>,
}

impl Geometry {
    pub fn new(blocks: Vec<BlockGeometry>) -> Result<Self> {
        let g = Self { blocks };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::config("geometry has no blocks"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate()?;
            if self.blocks[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::config(format!("duplicate block name `{}`", b.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.radius).collect()
    }

    /// Total number of scalar parameters.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.shape.len()).sum()
    }

    /// Checks names, lengths and finiteness of `x` against this geometry.
    pub fn check(&self, x: &LayeredPoint) -> Result<()> {
        if x.blocks.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "point has {} blocks, geometry has {}",
                x.blocks.len(),
                self.blocks.len()
            )));
        }
        for (b, g) in x.blocks.iter().zip(&self.blocks) {
            if b.name != g.name {
                return Err(Error::ShapeMismatch(format!("block `{}` where `{}` was expected", b.name, g.name)));
            }
            if b.values.len() != g.shape.len() {
                return Err(Error::ShapeMismatch(format!(
                    "block `{}` has {} entries, shape {:?} needs {}",
                    b.name,
                    b.values.len(),
                    g.shape,
                    g.shape.len()
                )));
            }
            if b.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("block `{}`", b.name)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub values: Vec<f64>,
}

/// A point (or direction) in a layered parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayeredPoint {
    pub blocks: Vec<Block>,
}

impl LayeredPoint {
    pub fn zeros(geom: &Geometry) -> Self {
        Self {
            blocks: geom
                .blocks
                .iter()
                .map(|g| Block { name: g.name.clone(), values: vec![0.0; g.shape.len()] })
                .collect(),
        }
    }

    /// Builds a point from `(name, values)` pairs.
    pub fn from_pairs<N: Into<String>>(pairs: impl IntoIterator<Item = (N, Vec<f64>)>) -> Self {
        Self { blocks: pairs.into_iter().map(|(n, v)| Block { name: n.into(), values: v }).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| Block { name: b.name.clone(), values: vec![0.0; b.values.len()] })
                .collect(),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks.iter().flat_map(|b| b.values.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    fn assert_same_layout(&self, other: &Self) {
        debug_assert_eq!(self.blocks.len(), other.blocks.len());
        debug_assert!(self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.values.len() == b.values.len()));
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.assert_same_layout(other);
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn sq_euclidean(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    /// ℓ2 norm of the flattened parameter vector.
    pub fn euclidean_norm(&self) -> f64 {
        self.sq_euclidean().sqrt()
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.assert_same_layout(other);
        for (x, y) in self.blocks.iter_mut().zip(&other.blocks) {
            for (xi, yi) in x.values.iter_mut().zip(&y.values) {
                *xi += a * yi;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for b in &mut self.blocks {
            for v in &mut b.values {
                *v *= a;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

/// Whether the composite primal norm divides each block by its radius.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    Unweighted,
    RadiusWeighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub per_block_primal: Vec<f64>,
    pub per_block_dual: Vec<f64>,
    pub composite_primal: f64,
    pub composite_dual: f64,
}

fn to_matrix(values: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, values)
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<f64> {
    // nalgebra is column-major; blocks are row-major.
    m.transpose().as_slice().to_vec()
}

fn singular_values(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    to_matrix(values, rows, cols).singular_values().as_slice().to_vec()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Block primal norm: ℓ∞ (Sign), operator norm (Spectral) or ℓ2 (Euclidean).
pub fn block_primal(kind: NormKind, shape: Shape, values: &[f64]) -> f64 {
    match (kind, shape) {
        (NormKind::Sign, _) => linf(values),
        (NormKind::Euclidean, _) => l2(values),
        (NormKind::Spectral, Shape::Matrix(r, c)) => singular_values(values, r, c).into_iter().fold(0.0, f64::max),
        (NormKind::Spectral, Shape::Vector(_)) => l2(values),
    }
}

/// Block dual norm: ℓ1 (Sign), nuclear (Spectral) or ℓ2 (Euclidean).
pub fn block_dual(kind: NormKind, shape: Shape, values: &[f64]) -> f64 {
    match (kind, shape) {
        (NormKind::Sign, _) => l1(values),
        (NormKind::Euclidean, _) => l2(values),
        (NormKind::Spectral, Shape::Matrix(r, c)) => singular_values(values, r, c).into_iter().sum(),
        (NormKind::Spectral, Shape::Vector(_)) => l2(values),
    }
}

/// Per-block primal norms, without validation. Used on hot paths where the
/// layout is already known to match.
pub(crate) fn block_primals(x: &LayeredPoint, geom: &Geometry) -> Vec<f64> {
    x.blocks.iter().zip(&geom.blocks).map(|(b, g)| block_primal(g.kind, g.shape, &b.values)).collect()
}

pub(crate) fn composite_dual_unchecked(x: &LayeredPoint, geom: &Geometry) -> f64 {
    x.blocks.iter().zip(&geom.blocks).map(|(b, g)| block_dual(g.kind, g.shape, &b.values)).sum()
}

pub(crate) fn composite_primal_of(per_block: &[f64], geom: &Geometry, mode: NormMode) -> f64 {
    per_block
        .iter()
        .zip(&geom.blocks)
        .map(|(v, g)| match mode {
            NormMode::Unweighted => *v,
            NormMode::RadiusWeighted => v / g.radius,
        })
        .fold(0.0, f64::max)
}

/// Computes every per-block and composite norm of `x`.
pub fn norm_report(x: &LayeredPoint, geom: &Geometry, mode: NormMode) -> Result<NormReport> {
    geom.check(x)?;
    let per_block_primal = block_primals(x, geom);
    let per_block_dual: Vec<f64> =
        x.blocks.iter().zip(&geom.blocks).map(|(b, g)| block_dual(g.kind, g.shape, &b.values)).collect();
    Ok(NormReport {
        composite_primal: composite_primal_of(&per_block_primal, geom, mode),
        composite_dual: per_block_dual.iter().sum(),
        per_block_primal,
        per_block_dual,
    })
}

/// Composite primal norm `max_ℓ ‖x_ℓ‖_ℓ` (optionally radius-weighted).
pub fn primal_norm(x: &LayeredPoint, geom: &Geometry, mode: NormMode) -> Result<NormReport> {
    norm_report(x, geom, mode)
}

/// Composite dual norm `Σ_ℓ ‖x_ℓ‖_{*,ℓ}`.
pub fn dual_norm(x: &LayeredPoint, geom: &Geometry) -> Result<NormReport> {
    norm_report(x, geom, NormMode::Unweighted)
}

/// Polynomial step `X ← aX + b(XXᵀ)X + c(XXᵀ)²X` of a Newton–Schulz iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NsPolynomial {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NsPolynomial {
    /// `X ← 1.5X − 0.5X XᵀX`. Maps singular values in [0, 1] into [0, 1].
    pub const CUBIC: Self = Self { a: 1.5, b: -0.5, c: 0.0 };
    /// Coefficients used by Muon-style implementations. Faster initial growth,
    /// but singular values settle in roughly [0.7, 1.2] rather than at 1, so
    /// LMO outputs may leave the unit ball.
    pub const QUINTIC: Self = Self { a: 3.4445, b: -4.7750, c: 2.0315 };
}

impl Default for NsPolynomial {
    fn default() -> Self {
        Self::CUBIC
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolarMethod {
    /// Full SVD, `UVᵀ`.
    Exact,
    NewtonSchulz {
        #[serde(default = "default_ns_iters")]
        iters: usize,
        #[serde(default)]
        poly: NsPolynomial,
    },
}

fn default_ns_iters() -> usize {
    5
}

impl Default for PolarMethod {
    fn default() -> Self {
        PolarMethod::NewtonSchulz { iters: 5, poly: NsPolynomial::CUBIC }
    }
}

/// Exact polar factor `UVᵀ` of `m` from its thin SVD.
pub fn exact_polar(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("polar input".into()));
    }
    if m.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let svd = m.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(Error::NonConvergence("SVD did not return singular vectors".into())),
    }
}

/// Approximate polar factor by `iters` Newton–Schulz steps with the default
/// cubic polynomial.
pub fn newton_schulz_polar(m: &DMatrix<f64>, iters: usize) -> Result<DMatrix<f64>> {
    newton_schulz_polar_with(m, iters, NsPolynomial::CUBIC)
}

/// Newton–Schulz with an explicit polynomial. The input is divided by its
/// Frobenius norm (plus [`NS_NORM_EPS`]) first; tall inputs are transposed so
/// the Gram matrix is the smaller one.
pub fn newton_schulz_polar_with(m: &DMatrix<f64>, iters: usize, poly: NsPolynomial) -> Result<DMatrix<f64>> {
    if iters == 0 {
        return Err(Error::config("Newton–Schulz needs at least one iteration"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("polar input".into()));
    }
    let fro = m.norm();
    if fro == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let tall = m.nrows() > m.ncols();
    let mut x = if tall { m.transpose() } else { m.clone() };
    x /= fro + NS_NORM_EPS;
    for _ in 0..iters {
        let gram = &x * x.transpose();
        let mut poly_gram = &gram * poly.b;
        if poly.c != 0.0 {
            poly_gram += &gram * &gram * poly.c;
        }
        x = &x * poly.a + poly_gram * &x;
    }
    Ok(if tall { x.transpose() } else { x })
}

fn polar(m: &DMatrix<f64>, method: PolarMethod) -> Result<DMatrix<f64>> {
    match method {
        PolarMethod::Exact => exact_polar(m),
        PolarMethod::NewtonSchulz { iters, poly } => newton_schulz_polar_with(m, iters, poly),
    }
}

/// Unit-ball minimizer of ⟨m, d⟩ for a single block. Zero input gives a zero
/// block.
pub fn block_lmo(kind: NormKind, shape: Shape, m: &[f64], method: PolarMethod) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LMO input".into()));
    }
    match (kind, shape) {
        (NormKind::Sign, _) => Ok(m
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    -1.0
                } else if v < 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()),
        (NormKind::Euclidean, _) | (NormKind::Spectral, Shape::Vector(_)) => {
            let n = l2(m);
            if n == 0.0 {
                Ok(vec![0.0; m.len()])
            } else {
                Ok(m.iter().map(|v| -v / n).collect())
            }
        }
        (NormKind::Spectral, Shape::Matrix(r, c)) => {
            if m.iter().all(|v| *v == 0.0) {
                return Ok(vec![0.0; m.len()]);
            }
            let p = polar(&to_matrix(m, r, c), method)?;
            Ok(from_matrix(&p).into_iter().map(|v| -v).collect())
        }
    }
}

/// Linear minimization oracle over the product of per-block unit balls.
pub fn lmo(m: &LayeredPoint, geom: &Geometry, method: PolarMethod) -> Result<LayeredPoint> {
    geom.check(m)?;
    lmo_unchecked(m, geom, method)
}

pub(crate) fn lmo_unchecked(m: &LayeredPoint, geom: &Geometry, method: PolarMethod) -> Result<LayeredPoint> {
    let blocks = m
        .blocks
        .iter()
        .zip(&geom.blocks)
        .map(|(b, g)| Ok(Block { name: b.name.clone(), values: block_lmo(g.kind, g.shape, &b.values, method)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(LayeredPoint { blocks })
}
