//! Uncertainty block structures, structured perturbations and the
//! nonnegative-witness constructions.
//!
//! A [`BlockStructure`] is the user-facing pattern: full blocks and
//! repeated-scalar blocks, each real or complex. Stored in canonical order
//! (full blocks first); the permutation from the input order is kept so that
//! matrices can be brought into the matching row/column order with
//! [`BlockStructure::to_canonical`].
//!
//! For nonnegative matrices every structure collapses to a
//! [`ReducedStructure`]: real full blocks only, repeated scalars split into
//! independent 1x1 blocks.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Full,
    RepeatedScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Real,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub size: usize,
    pub field: Field,
}

impl BlockSpec {
    pub fn full(size: usize, field: Field) -> Self {
        Self { kind: BlockKind::Full, size, field }
    }

    pub fn scalar(size: usize, field: Field) -> Self {
        Self { kind: BlockKind::RepeatedScalar, size, field }
    }
}

impl BlockKind {
    pub fn tag(self) -> &'static str {
        match self {
            BlockKind::Full => "full",
            BlockKind::RepeatedScalar => "repeated_scalar",
        }
    }
}

impl Field {
    pub fn tag(self) -> &'static str {
        match self {
            Field::Real => "real",
            Field::Complex => "complex",
        }
    }
}

/// Unvalidated block description as it comes from a problem file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBlockSpec {
    pub kind: String,
    pub size: i64,
    pub field: String,
}

impl RawBlockSpec {
    pub fn new(kind: &str, size: i64, field: &str) -> Self {
        Self { kind: kind.to_string(), size, field: field.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    blocks: Vec<BlockSpec>,
    total_dim: usize,
    /// `input_index[i]` is the position in the caller's list of canonical block `i`.
    input_index: Vec<usize>,
}

/// Parses and validates a raw block list, normalizing to full-then-scalar order.
pub fn validate_structure(raw: &[RawBlockSpec]) -> Result<BlockStructure> {
    let mut blocks = Vec::with_capacity(raw.len());
    for (i, b) in raw.iter().enumerate() {
        let kind = match b.kind.as_str() {
            "full" => BlockKind::Full,
            "repeated_scalar" => BlockKind::RepeatedScalar,
            other => {
                return Err(Error::InvalidStructure(format!(
                    "block {i}: unknown kind tag {other:?}"
                )))
            }
        };
        let field = match b.field.as_str() {
            "real" => Field::Real,
            "complex" => Field::Complex,
            other => {
                return Err(Error::InvalidStructure(format!(
                    "block {i}: unknown field tag {other:?}"
                )))
            }
        };
        if b.size == 0 {
            return Err(Error::InvalidStructure(format!("block {i}: zero block size")));
        }
        if b.size < 0 {
            return Err(Error::InvalidStructure(format!(
                "block {i}: negative block size {}",
                b.size
            )));
        }
        blocks.push(BlockSpec { kind, size: b.size as usize, field });
    }
    BlockStructure::new(blocks)
}

impl BlockStructure {
    pub fn new(blocks: Vec<BlockSpec>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidStructure("empty block list".into()));
        }
        if let Some(i) = blocks.iter().position(|b| b.size == 0) {
            return Err(Error::InvalidStructure(format!("block {i}: zero block size")));
        }
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        // stable: relative order inside each kind is preserved
        order.sort_by_key(|&i| match blocks[i].kind {
            BlockKind::Full => 0,
            BlockKind::RepeatedScalar => 1,
        });
        let canonical: Vec<BlockSpec> = order.iter().map(|&i| blocks[i]).collect();
        let total_dim = canonical.iter().map(|b| b.size).sum();
        Ok(Self { blocks: canonical, total_dim, input_index: order })
    }

    /// One real full block covering everything.
    pub fn single_full(m: usize) -> Result<Self> {
        Self::new(vec![BlockSpec::full(m, Field::Real)])
    }

    /// `m` real 1x1 blocks (diagonal uncertainty).
    pub fn scalars(m: usize) -> Result<Self> {
        Self::new(vec![BlockSpec::full(1, Field::Real); m])
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn input_index(&self) -> &[usize] {
        &self.input_index
    }

    pub fn is_input_order(&self) -> bool {
        self.input_index.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn offsets(&self) -> Vec<usize> {
        offsets_of(self.blocks.iter().map(|b| b.size))
    }

    /// `order[i]` is the row of the input-ordered matrix that becomes canonical row `i`.
    pub fn row_order(&self) -> Vec<usize> {
        let mut input_sizes = vec![0; self.blocks.len()];
        for (c, &i) in self.input_index.iter().enumerate() {
            input_sizes[i] = self.blocks[c].size;
        }
        let input_offsets = offsets_of(input_sizes.iter().copied());
        let mut order = Vec::with_capacity(self.total_dim);
        for (c, &i) in self.input_index.iter().enumerate() {
            order.extend(input_offsets[i]..input_offsets[i] + self.blocks[c].size);
        }
        order
    }

    /// Symmetric row/column permutation of an input-ordered matrix into canonical order.
    pub fn to_canonical<T: nalgebra::Scalar + Copy>(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_dim(m.nrows(), m.ncols())?;
        let order = self.row_order();
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(order[i], order[j])]))
    }

    /// Inverse of [`Self::to_canonical`].
    pub fn to_input<T: nalgebra::Scalar + Copy>(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_dim(m.nrows(), m.ncols())?;
        let order = self.row_order();
        let mut out = m.clone();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(order[i], order[j])] = m[(i, j)];
            }
        }
        Ok(out)
    }

    /// Canonical-order vector mapped back to input order.
    pub fn vector_to_input(&self, v: &DVector<f64>) -> DVector<f64> {
        let order = self.row_order();
        let mut out = v.clone();
        for (i, &o) in order.iter().enumerate() {
            out[o] = v[i];
        }
        out
    }

    fn check_dim(&self, r: usize, c: usize) -> Result<()> {
        if r != self.total_dim || c != self.total_dim {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {r}x{c}, structure has total dimension {}",
                self.total_dim
            )));
        }
        Ok(())
    }
}

impl fmt::Display for BlockStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .blocks
            .iter()
            .map(|b| format!("{}({},{})", b.kind.tag(), b.size, b.field.tag()))
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

fn offsets_of(sizes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .map(|s| {
            let o = acc;
            acc += s;
            o
        })
        .collect()
}

/// Real, nonnegative, full-block-only structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedStructure {
    sizes: Vec<usize>,
    total_dim: usize,
    origin: Vec<usize>,
}

/// Drops field flags and splits every repeated-scalar block of size `m` into
/// `m` independent 1x1 blocks.
pub fn reduce_structure(s: &BlockStructure) -> ReducedStructure {
    let mut sizes = Vec::new();
    let mut origin = Vec::new();
    for (k, b) in s.blocks().iter().enumerate() {
        match b.kind {
            BlockKind::Full => {
                sizes.push(b.size);
                origin.push(k);
            }
            BlockKind::RepeatedScalar => {
                sizes.extend(std::iter::repeat_n(1, b.size));
                origin.extend(std::iter::repeat_n(k, b.size));
            }
        }
    }
    ReducedStructure { total_dim: s.total_dim(), sizes, origin }
}

impl ReducedStructure {
    /// Reduced structure with the given full-block sizes (each its own origin).
    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidStructure("empty block list".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidStructure("zero block size".into()));
        }
        let total_dim = sizes.iter().sum();
        let origin = (0..sizes.len()).collect();
        Ok(Self { sizes, total_dim, origin })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Source block index (in the canonical `BlockStructure`) of each reduced block.
    pub fn origin_map(&self) -> &[usize] {
        &self.origin
    }

    pub fn offsets(&self) -> Vec<usize> {
        offsets_of(self.sizes.iter().copied())
    }

    /// Reduced block index of every row.
    pub fn groups(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
            .collect()
    }

    /// The same pattern as a `BlockStructure` of real full blocks.
    pub fn as_block_structure(&self) -> BlockStructure {
        BlockStructure::new(self.sizes.iter().map(|&s| BlockSpec::full(s, Field::Real)).collect())
            .expect("reduced structures are non-empty with positive sizes")
    }

    /// Block-wise expansion of `theta` to the diagonal of `Theta`.
    pub fn expand(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.total_dim,
            self.groups().into_iter().map(|g| theta[g]),
        )
    }

    pub fn check_dim(&self, m: usize) -> Result<()> {
        if m != self.total_dim {
            return Err(Error::DimensionMismatch(format!(
                "matrix dimension {m} differs from structure dimension {}",
                self.total_dim
            )));
        }
        Ok(())
    }
}

/// One positive scalar per reduced block; `Theta = diag(theta_k I_{m_k})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingVector(Vec<f64>);

impl ScalingVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidInput("empty scaling vector".into()));
        }
        if let Some(t) = theta.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidInput(format!("scaling entry {t} is not positive and finite")));
        }
        Ok(Self(theta))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|t| t * c).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PerturbationBlock {
    Full(DMatrix<Complex64>),
    Scalar(Complex64),
}

/// A block-diagonal perturbation matching a structure.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredPerturbation {
    layout: Vec<BlockSpec>,
    blocks: Vec<PerturbationBlock>,
}

impl StructuredPerturbation {
    pub fn new(structure: &BlockStructure, blocks: Vec<PerturbationBlock>) -> Result<Self> {
        let layout = structure.blocks().to_vec();
        if layout.len() != blocks.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} blocks supplied for a structure with {} blocks",
                blocks.len(),
                layout.len()
            )));
        }
        for (k, (spec, block)) in layout.iter().zip(&blocks).enumerate() {
            match (spec.kind, block) {
                (BlockKind::Full, PerturbationBlock::Full(d)) => {
                    if d.nrows() != spec.size || d.ncols() != spec.size {
                        return Err(Error::DimensionMismatch(format!(
                            "block {k}: expected {0}x{0}, got {1}x{2}",
                            spec.size,
                            d.nrows(),
                            d.ncols()
                        )));
                    }
                    if spec.field == Field::Real && d.iter().any(|z| z.im != 0.0) {
                        return Err(Error::InvalidInput(format!("block {k}: complex entry in a real block")));
                    }
                }
                (BlockKind::RepeatedScalar, PerturbationBlock::Scalar(z)) => {
                    if spec.field == Field::Real && z.im != 0.0 {
                        return Err(Error::InvalidInput(format!("block {k}: complex scalar in a real block")));
                    }
                }
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "block {k}: block kind does not match the structure"
                    )))
                }
            }
        }
        Ok(Self { layout, blocks })
    }

    /// Real perturbation on a reduced structure.
    pub fn from_reduced(s: &ReducedStructure, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(
            &s.as_block_structure(),
            blocks.iter().map(|b| PerturbationBlock::Full(linalg::to_complex(b))).collect(),
        )
    }

    pub fn zero(structure: &BlockStructure) -> Self {
        let blocks = structure
            .blocks()
            .iter()
            .map(|b| match b.kind {
                BlockKind::Full => PerturbationBlock::Full(DMatrix::zeros(b.size, b.size)),
                BlockKind::RepeatedScalar => PerturbationBlock::Scalar(Complex64::new(0.0, 0.0)),
            })
            .collect();
        Self { layout: structure.blocks().to_vec(), blocks }
    }

    pub fn layout(&self) -> &[BlockSpec] {
        &self.layout
    }

    pub fn blocks(&self) -> &[PerturbationBlock] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.layout.iter().map(|b| b.size).sum()
    }

    /// Block-diagonal `m x m` matrix.
    pub fn assemble(&self) -> DMatrix<Complex64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(m, m);
        let mut off = 0;
        for (spec, block) in self.layout.iter().zip(&self.blocks) {
            match block {
                PerturbationBlock::Full(d) => {
                    out.view_mut((off, off), (spec.size, spec.size)).copy_from(d);
                }
                PerturbationBlock::Scalar(z) => {
                    for i in 0..spec.size {
                        out[(off + i, off + i)] = *z;
                    }
                }
            }
            off += spec.size;
        }
        out
    }

    /// Real part of [`Self::assemble`]; `None` if any entry has an imaginary part.
    pub fn assemble_real(&self) -> Option<DMatrix<f64>> {
        let a = self.assemble();
        if a.iter().any(|z| z.im != 0.0) {
            return None;
        }
        Some(a.map(|z| z.re))
    }

    /// Extracts blocks from an assembled matrix. Fails if `m` has mass
    /// outside the diagonal blocks or a scalar block is not a multiple of
    /// the identity.
    pub fn disassemble(structure: &BlockStructure, m: &DMatrix<Complex64>) -> Result<Self> {
        let n = structure.total_dim();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{}, structure has total dimension {n}",
                m.nrows(),
                m.ncols()
            )));
        }
        let offsets = structure.offsets();
        let owner: Vec<usize> = structure
            .blocks()
            .iter()
            .enumerate()
            .flat_map(|(k, b)| std::iter::repeat_n(k, b.size))
            .collect();
        for i in 0..n {
            for j in 0..n {
                if owner[i] != owner[j] && m[(i, j)].norm() != 0.0 {
                    return Err(Error::InvalidInput(format!("entry ({i}, {j}) lies outside the block diagonal")));
                }
            }
        }
        let mut blocks = Vec::with_capacity(structure.len());
        for (k, b) in structure.blocks().iter().enumerate() {
            let o = offsets[k];
            let sub = m.view((o, o), (b.size, b.size)).into_owned();
            match b.kind {
                BlockKind::Full => blocks.push(PerturbationBlock::Full(sub)),
                BlockKind::RepeatedScalar => {
                    let z = sub[(0, 0)];
                    let expected = DMatrix::identity(b.size, b.size) * z;
                    if sub != expected {
                        return Err(Error::InvalidInput(format!("block {k} is not a scalar multiple of the identity")));
                    }
                    blocks.push(PerturbationBlock::Scalar(z));
                }
            }
        }
        Self::new(structure, blocks)
    }

    /// Applies `f` to every entry, keeping the layout.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                PerturbationBlock::Full(d) => PerturbationBlock::Full(d.map(&f)),
                PerturbationBlock::Scalar(z) => PerturbationBlock::Scalar(f(*z)),
            })
            .collect();
        Self { layout: self.layout.clone(), blocks }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|z| z * c)
    }

    pub fn is_nonnegative_real(&self) -> bool {
        self.assemble().iter().all(|z| z.im == 0.0 && z.re >= 0.0)
    }
}

/// Largest singular value over the blocks (equals that of the assembled matrix).
pub fn block_norm(d: &StructuredPerturbation) -> f64 {
    d.blocks
        .iter()
        .map(|b| match b {
            PerturbationBlock::Full(m) => linalg::spectral_norm_c(m),
            PerturbationBlock::Scalar(z) => z.norm(),
        })
        .fold(0.0, f64::max)
}

/// Minimal-norm nonnegative interpolant `Delta = q p^T / |p|^2` with `Delta p = q`.
pub fn dyad_interpolant(p: &DVector<f64>, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "p has length {}, q has length {}",
            p.len(),
            q.len()
        )));
    }
    if p.iter().chain(q.iter()).any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput("p and q must be finite and entrywise nonnegative".into()));
    }
    let np = p.norm();
    let nq = q.norm();
    if np == 0.0 {
        if nq == 0.0 {
            return Ok(DMatrix::zeros(p.len(), p.len()));
        }
        return Err(Error::InvalidInput("p = 0 with q != 0 admits no interpolant".into()));
    }
    if nq > np {
        return Err(Error::InvalidInput(format!(
            "|q| = {nq} exceeds |p| = {np}: no interpolant of norm <= 1"
        )));
    }
    Ok(q * p.transpose() / p.norm_squared())
}

/// Slack accepted on the `rho(M d) >= 1` precondition of [`nonnegative_witness`].
pub const WITNESS_RHO_SLACK: f64 = 1e-9;

/// Nonnegative destabilizing perturbation built from any structured `d`
/// with `rho(M d) >= 1`.
///
/// Full blocks are replaced by their entrywise moduli and every repeated
/// scalar by the largest scalar modulus; the result is divided by
/// `lambda = max(rho(M dbar), 1)`. Returns the new perturbation together
/// with a unit nonnegative `q` satisfying `M dtilde q = q`.
pub fn nonnegative_witness(
    m: &DMatrix<f64>,
    d: &StructuredPerturbation,
) -> Result<(StructuredPerturbation, DVector<f64>)> {
    let n = linalg::require_square(m, "M")?;
    if n != d.dim() {
        return Err(Error::DimensionMismatch(format!(
            "M is {n}x{n}, perturbation has dimension {}",
            d.dim()
        )));
    }
    if !linalg::is_nonnegative(m) {
        return Err(Error::InvalidInput("M must be entrywise nonnegative".into()));
    }
    let norm = block_norm(d);
    if norm > 1.0 + 1e-9 {
        return Err(Error::Precondition(format!("perturbation norm {norm} exceeds 1")));
    }
    let rho = linalg::spectral_radius_c(&(linalg::to_complex(m) * d.assemble()));
    if rho < 1.0 - WITNESS_RHO_SLACK {
        return Err(Error::Precondition(format!(
            "rho(M Delta) = {rho} < 1: no destabilizing witness to build"
        )));
    }
    let scalar_max = d
        .blocks
        .iter()
        .filter_map(|b| match b {
            PerturbationBlock::Scalar(z) => Some(z.norm()),
            PerturbationBlock::Full(_) => None,
        })
        .fold(0.0, f64::max);
    let dbar = StructuredPerturbation {
        layout: d.layout.clone(),
        blocks: d
            .blocks
            .iter()
            .map(|b| match b {
                PerturbationBlock::Full(x) => PerturbationBlock::Full(x.map(|z| Complex64::new(z.norm(), 0.0))),
                PerturbationBlock::Scalar(_) => PerturbationBlock::Scalar(Complex64::new(scalar_max, 0.0)),
            })
            .collect(),
    };
    let dbar_real = dbar.assemble_real().expect("moduli are real");
    let lambda = linalg::perron_root(&(m * &dbar_real)).max(1.0);
    let dtilde = dbar.scale(1.0 / lambda);
    let loop_gain = m * (dbar_real / lambda);
    let root = linalg::perron_root(&loop_gain);
    let q = linalg::perron_vector(&loop_gain, root);
    Ok((dtilde, q))
}

/// Carries a perturbation on the reduced structure back to the original
/// structure: full blocks are kept, and every repeated-scalar block becomes
/// `delta_max I`, `delta_max` the largest modulus among the 1x1 blocks that
/// came from repeated scalars. The result dominates the input entrywise in
/// modulus, so `rho(M d)` can only grow for `M >= 0`.
pub fn lift_to_original(
    d: &StructuredPerturbation,
    reduced: &ReducedStructure,
    original: &BlockStructure,
) -> Result<StructuredPerturbation> {
    if d.blocks.len() != reduced.num_blocks() {
        return Err(Error::DimensionMismatch("perturbation does not match the reduced structure".into()));
    }
    let scalar_max = d
        .blocks
        .iter()
        .zip(reduced.origin_map())
        .filter(|(_, &o)| original.blocks()[o].kind == BlockKind::RepeatedScalar)
        .map(|(b, _)| match b {
            PerturbationBlock::Full(x) => x[(0, 0)].norm(),
            PerturbationBlock::Scalar(z) => z.norm(),
        })
        .fold(0.0, f64::max);
    let mut blocks = Vec::with_capacity(original.len());
    for (k, spec) in original.blocks().iter().enumerate() {
        match spec.kind {
            BlockKind::Full => {
                let idx = reduced
                    .origin_map()
                    .iter()
                    .position(|&o| o == k)
                    .ok_or_else(|| Error::InvalidInput(format!("original block {k} missing from reduction")))?;
                blocks.push(d.blocks[idx].clone());
            }
            BlockKind::RepeatedScalar => blocks.push(PerturbationBlock::Scalar(Complex64::new(scalar_max, 0.0))),
        }
    }
    StructuredPerturbation::new(original, blocks)
}
