//! Coupled classical-quantum models.
//!
//! A model is a set of classical sectors, each carrying its own finite
//! dimensional Hilbert space with a Hamiltonian `H_a`, plus coupling operators
//! `g_ba : H_a -> H_b` that drive the classical jumps. From these the model
//! derives the jump-rate operators `Lambda_a = sum_b g_ba^dagger g_ba` and the
//! non-Hermitian generators `K_a = -i H_a - Lambda_a / 2` of the flow between
//! jumps.
//!
//! Two layouts exist. A finite model stores every sector explicitly. A chain
//! model describes an unbounded, translation-invariant ladder of identical
//! sectors `0, 1, 2, ...` where sector `n` couples forward into `n + k` for a
//! fixed set of offsets `k`; its sectors are never materialized, since every
//! sector shares the template operators.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{
    self, hermitian_deviation, min_eigenvalue_hermitian, ComplexMatrix, ComplexVector,
    HERMITIAN_TOL,
};

/// Classical sector label (zero based).
pub type SectorIndex = usize;

/// Tolerance on the unit norm of a pure state vector.
pub const UNIT_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model has no sectors")]
    Empty,
    #[error("sector {sector} has dimension zero")]
    ZeroDimension { sector: SectorIndex },
    #[error("hamiltonian of sector {sector} is not square ({rows}x{cols})")]
    NotSquare {
        sector: SectorIndex,
        rows: usize,
        cols: usize,
    },
    #[error("hamiltonian of sector {sector} is not Hermitian (deviation {deviation:e})")]
    NotHermitian { sector: SectorIndex, deviation: f64 },
    #[error("coupling ({target},{origin}) has shape {found:?}, expected {expected:?}")]
    CouplingShape {
        target: SectorIndex,
        origin: SectorIndex,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("diagonal coupling ({sector},{sector}) must be zero")]
    DiagonalCoupling { sector: SectorIndex },
    #[error("coupling ({target},{origin}) is given more than once")]
    DuplicateCoupling {
        target: SectorIndex,
        origin: SectorIndex,
    },
    #[error("sector {sector} is out of range (model has {count} sectors)")]
    SectorOutOfRange { sector: SectorIndex, count: usize },
    #[error("chain offset must be at least 1")]
    ChainOffset,
    #[error("non-finite entries in {what}")]
    NonFinite { what: String },
    #[error("state vector has dimension {found}, sector {sector} has dimension {expected}")]
    StateDimension {
        sector: SectorIndex,
        expected: usize,
        found: usize,
    },
    #[error("state vector has zero norm")]
    ZeroState,
    #[error("block count {found} does not match model ({expected})")]
    BlockCount { expected: usize, found: usize },
    #[error("block {sector} has shape {found:?}, expected {expected:?}")]
    BlockShape {
        sector: SectorIndex,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// A coupling operator `g_{target,source}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub target: SectorIndex,
    pub source: SectorIndex,
    pub matrix: ComplexMatrix,
}

/// One forward step of a chain: sector `n` couples into `n + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainStep {
    pub offset: usize,
    pub matrix: ComplexMatrix,
}

/// Translation-invariant sector-generating rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainRule {
    pub dim: usize,
    pub hamiltonian: ComplexMatrix,
    pub steps: Vec<ChainStep>,
}

/// The declarative description a model was built from.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Finite {
        hamiltonians: Vec<ComplexMatrix>,
        couplings: Vec<Coupling>,
    },
    Chain(ChainRule),
}

/// Derived per-sector operators.
#[derive(Clone, Debug)]
pub struct SectorOps {
    pub dim: usize,
    pub hamiltonian: ComplexMatrix,
    /// `Lambda = sum_b g_ba^dagger g_ba`.
    pub rate_operator: ComplexMatrix,
    /// `K = -i H - Lambda / 2`.
    pub generator: ComplexMatrix,
    /// Operator norm of `Lambda`, the largest rate in this sector.
    pub rate_norm: f64,
}

impl SectorOps {
    fn new<'a>(hamiltonian: ComplexMatrix, outgoing: impl Iterator<Item = &'a ComplexMatrix>) -> Self {
        let dim = hamiltonian.nrows();
        let mut rate_operator = ComplexMatrix::zeros(dim, dim);
        for g in outgoing {
            rate_operator += g.adjoint() * g;
        }
        let generator = hamiltonian.map(|z| z * Complex64::new(0.0, -1.0)) - rate_operator.scale(0.5);
        let rate_norm = linalg::operator_norm_hermitian(&rate_operator).unwrap_or(f64::INFINITY);
        SectorOps {
            dim,
            hamiltonian,
            rate_operator,
            generator,
            rate_norm,
        }
    }
}

#[derive(Clone, Debug)]
enum Layout {
    Finite {
        sectors: Vec<SectorOps>,
        /// Per source sector, nonzero `(target, g_{target,source})` sorted by target.
        outgoing: Vec<Vec<(SectorIndex, ComplexMatrix)>>,
        /// Per target sector, nonzero `(source, g_{target,source})` sorted by source.
        incoming: Vec<Vec<(SectorIndex, ComplexMatrix)>>,
    },
    Chain {
        template: SectorOps,
        /// Nonzero steps sorted by offset.
        steps: Vec<(usize, ComplexMatrix)>,
    },
}

/// A validated coupled classical-quantum model. Immutable after construction.
#[derive(Clone, Debug)]
pub struct HybridModel {
    spec: ModelSpec,
    layout: Layout,
    rate_bound: f64,
    digest: String,
}

fn check_finite(m: &ComplexMatrix, what: impl FnOnce() -> String) -> Result<(), ModelError> {
    if linalg::is_finite(m) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { what: what() })
    }
}

fn check_hamiltonian(sector: SectorIndex, h: &ComplexMatrix) -> Result<(), ModelError> {
    if !h.is_square() {
        return Err(ModelError::NotSquare {
            sector,
            rows: h.nrows(),
            cols: h.ncols(),
        });
    }
    if h.nrows() == 0 {
        return Err(ModelError::ZeroDimension { sector });
    }
    check_finite(h, || format!("hamiltonian {sector}"))?;
    let deviation = hermitian_deviation(h).expect("square");
    if deviation > HERMITIAN_TOL {
        return Err(ModelError::NotHermitian { sector, deviation });
    }
    Ok(())
}

fn is_zero(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re == 0.0 && z.im == 0.0)
}

fn rate_bound_of<'a>(ops: impl Iterator<Item = &'a SectorOps>) -> f64 {
    ops.map(|s| s.rate_norm).fold(0.0, f64::max)
}

fn hash_matrix(hasher: &mut Sha256, m: &ComplexMatrix) {
    hasher.update((m.nrows() as u64).to_le_bytes());
    hasher.update((m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            hasher.update(m[(i, j)].re.to_bits().to_le_bytes());
            hasher.update(m[(i, j)].im.to_bits().to_le_bytes());
        }
    }
}

fn digest_of(spec: &ModelSpec) -> String {
    let mut hasher = Sha256::new();
    match spec {
        ModelSpec::Finite {
            hamiltonians,
            couplings,
        } => {
            hasher.update(b"finite");
            hasher.update((hamiltonians.len() as u64).to_le_bytes());
            for h in hamiltonians {
                hash_matrix(&mut hasher, h);
            }
            hasher.update((couplings.len() as u64).to_le_bytes());
            for c in couplings {
                hasher.update((c.target as u64).to_le_bytes());
                hasher.update((c.source as u64).to_le_bytes());
                hash_matrix(&mut hasher, &c.matrix);
            }
        }
        ModelSpec::Chain(rule) => {
            hasher.update(b"chain");
            hasher.update((rule.dim as u64).to_le_bytes());
            hash_matrix(&mut hasher, &rule.hamiltonian);
            hasher.update((rule.steps.len() as u64).to_le_bytes());
            for s in &rule.steps {
                hasher.update((s.offset as u64).to_le_bytes());
                hash_matrix(&mut hasher, &s.matrix);
            }
        }
    }
    hex::encode(hasher.finalize())
}

/// Validates a finite model and derives its rate operators and generators.
pub fn build_model(
    hamiltonians: Vec<ComplexMatrix>,
    couplings: Vec<Coupling>,
) -> Result<HybridModel, ModelError> {
    let count = hamiltonians.len();
    if count == 0 {
        return Err(ModelError::Empty);
    }
    for (sector, h) in hamiltonians.iter().enumerate() {
        check_hamiltonian(sector, h)?;
    }

    let mut outgoing: Vec<Vec<(SectorIndex, ComplexMatrix)>> = vec![Vec::new(); count];
    let mut incoming: Vec<Vec<(SectorIndex, ComplexMatrix)>> = vec![Vec::new(); count];
    let mut seen = std::collections::BTreeSet::new();
    for c in &couplings {
        for idx in [c.target, c.source] {
            if idx >= count {
                return Err(ModelError::SectorOutOfRange { sector: idx, count });
            }
        }
        if !seen.insert((c.target, c.source)) {
            return Err(ModelError::DuplicateCoupling {
                target: c.target,
                origin: c.source,
            });
        }
        let expected = (hamiltonians[c.target].nrows(), hamiltonians[c.source].nrows());
        if c.matrix.shape() != expected {
            return Err(ModelError::CouplingShape {
                target: c.target,
                origin: c.source,
                expected,
                found: c.matrix.shape(),
            });
        }
        check_finite(&c.matrix, || format!("coupling ({},{})", c.target, c.source))?;
        if c.target == c.source {
            if is_zero(&c.matrix) {
                continue;
            }
            return Err(ModelError::DiagonalCoupling { sector: c.target });
        }
        if is_zero(&c.matrix) {
            continue;
        }
        outgoing[c.source].push((c.target, c.matrix.clone()));
        incoming[c.target].push((c.source, c.matrix.clone()));
    }
    for list in outgoing.iter_mut().chain(incoming.iter_mut()) {
        list.sort_by_key(|(idx, _)| *idx);
    }

    let sectors: Vec<SectorOps> = hamiltonians
        .iter()
        .enumerate()
        .map(|(a, h)| SectorOps::new(h.clone(), outgoing[a].iter().map(|(_, g)| g)))
        .collect();
    for (a, ops) in sectors.iter().enumerate() {
        check_finite(&ops.rate_operator, || format!("rate operator of sector {a}"))?;
    }
    let rate_bound = rate_bound_of(sectors.iter());
    let spec = ModelSpec::Finite {
        hamiltonians,
        couplings,
    };
    Ok(HybridModel {
        digest: digest_of(&spec),
        spec,
        layout: Layout::Finite {
            sectors,
            outgoing,
            incoming,
        },
        rate_bound,
    })
}

/// Validates a chain rule and builds the corresponding unbounded model.
pub fn build_chain(rule: ChainRule) -> Result<HybridModel, ModelError> {
    check_hamiltonian(0, &rule.hamiltonian)?;
    if rule.hamiltonian.nrows() != rule.dim {
        return Err(ModelError::NotSquare {
            sector: 0,
            rows: rule.hamiltonian.nrows(),
            cols: rule.dim,
        });
    }
    let mut steps: Vec<(usize, ComplexMatrix)> = Vec::new();
    for s in &rule.steps {
        if s.offset == 0 {
            return Err(ModelError::ChainOffset);
        }
        if s.matrix.shape() != (rule.dim, rule.dim) {
            return Err(ModelError::CouplingShape {
                target: s.offset,
                origin: 0,
                expected: (rule.dim, rule.dim),
                found: s.matrix.shape(),
            });
        }
        check_finite(&s.matrix, || format!("chain step {}", s.offset))?;
        if steps.iter().any(|(o, _)| *o == s.offset) {
            return Err(ModelError::DuplicateCoupling {
                target: s.offset,
                origin: 0,
            });
        }
        if !is_zero(&s.matrix) {
            steps.push((s.offset, s.matrix.clone()));
        }
    }
    steps.sort_by_key(|(o, _)| *o);
    let template = SectorOps::new(rule.hamiltonian.clone(), steps.iter().map(|(_, g)| g));
    check_finite(&template.rate_operator, || "chain rate operator".to_string())?;
    let rate_bound = rate_bound_of(std::iter::once(&template));
    let spec = ModelSpec::Chain(rule);
    Ok(HybridModel {
        digest: digest_of(&spec),
        spec,
        layout: Layout::Chain { template, steps },
        rate_bound,
    })
}

impl HybridModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Hex SHA-256 of the canonical model description.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// `C = max_a ||Lambda_a||`.
    pub fn rate_bound(&self) -> f64 {
        self.rate_bound
    }

    /// Number of sectors, or `None` for an unbounded chain.
    pub fn sector_count(&self) -> Option<usize> {
        match &self.layout {
            Layout::Finite { sectors, .. } => Some(sectors.len()),
            Layout::Chain { .. } => None,
        }
    }

    pub fn is_chain(&self) -> bool {
        matches!(self.layout, Layout::Chain { .. })
    }

    pub fn contains(&self, sector: SectorIndex) -> bool {
        self.sector_count().map_or(true, |m| sector < m)
    }

    fn range_error(&self, sector: SectorIndex) -> ModelError {
        ModelError::SectorOutOfRange {
            sector,
            count: self.sector_count().unwrap_or(usize::MAX),
        }
    }

    pub fn sector(&self, sector: SectorIndex) -> Result<&SectorOps, ModelError> {
        match &self.layout {
            Layout::Finite { sectors, .. } => {
                sectors.get(sector).ok_or_else(|| self.range_error(sector))
            }
            Layout::Chain { template, .. } => Ok(template),
        }
    }

    pub fn dim(&self, sector: SectorIndex) -> Result<usize, ModelError> {
        Ok(self.sector(sector)?.dim)
    }

    /// Sectors sharing a class share every operator; used as a cache key.
    pub fn sector_class(&self, sector: SectorIndex) -> usize {
        match &self.layout {
            Layout::Finite { .. } => sector,
            Layout::Chain { .. } => 0,
        }
    }

    /// Nonzero couplings leaving `sector`, as `(target, g_{target,sector})`
    /// in increasing target order.
    pub fn outgoing(&self, sector: SectorIndex) -> Result<Vec<(SectorIndex, &ComplexMatrix)>, ModelError> {
        match &self.layout {
            Layout::Finite { outgoing, .. } => outgoing
                .get(sector)
                .map(|list| list.iter().map(|(b, g)| (*b, g)).collect())
                .ok_or_else(|| self.range_error(sector)),
            Layout::Chain { steps, .. } => {
                Ok(steps.iter().map(|(o, g)| (sector + o, g)).collect())
            }
        }
    }

    /// Nonzero couplings entering `sector`, as `(source, g_{sector,source})`
    /// in increasing source order.
    pub fn incoming(&self, sector: SectorIndex) -> Result<Vec<(SectorIndex, &ComplexMatrix)>, ModelError> {
        match &self.layout {
            Layout::Finite { incoming, .. } => incoming
                .get(sector)
                .map(|list| list.iter().map(|(b, g)| (*b, g)).collect())
                .ok_or_else(|| self.range_error(sector)),
            Layout::Chain { steps, .. } => {
                let mut list: Vec<_> = steps
                    .iter()
                    .filter(|(o, _)| *o <= sector)
                    .map(|(o, g)| (sector - o, g))
                    .collect();
                list.sort_by_key(|(b, _)| *b);
                Ok(list)
            }
        }
    }

    /// `g_{target,source}` if it is present and nonzero.
    pub fn coupling(&self, target: SectorIndex, source: SectorIndex) -> Option<&ComplexMatrix> {
        self.outgoing(source)
            .ok()?
            .into_iter()
            .find(|(b, _)| *b == target)
            .map(|(_, g)| g)
    }

    /// Dimensions of the first `count` sectors.
    pub fn dims(&self, count: usize) -> Result<Vec<usize>, ModelError> {
        (0..count).map(|a| self.dim(a)).collect()
    }

    /// Default number of blocks for block-diagonal states: every sector of a
    /// finite model, or `window` sectors of a chain.
    pub fn block_count(&self, window: usize) -> usize {
        self.sector_count().unwrap_or(window)
    }
}

/// A point of the hybrid pure-state space: a classical sector and a unit
/// vector in that sector's Hilbert space. The global phase is not fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct PureHybridState {
    pub sector: SectorIndex,
    pub psi: ComplexVector,
}

impl PureHybridState {
    /// Normalizes `psi` and checks its dimension against the model.
    pub fn new(model: &HybridModel, sector: SectorIndex, psi: ComplexVector) -> Result<Self, ModelError> {
        let expected = model.dim(sector)?;
        if psi.len() != expected {
            return Err(ModelError::StateDimension {
                sector,
                expected,
                found: psi.len(),
            });
        }
        if !psi.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(ModelError::NonFinite {
                what: "state vector".into(),
            });
        }
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(ModelError::ZeroState);
        }
        Ok(PureHybridState {
            sector,
            psi: psi.unscale(norm),
        })
    }

    /// Basis vector `e_index` in `sector`.
    pub fn basis(model: &HybridModel, sector: SectorIndex, index: usize) -> Result<Self, ModelError> {
        let dim = model.dim(sector)?;
        if index >= dim {
            return Err(ModelError::StateDimension {
                sector,
                expected: dim,
                found: index + 1,
            });
        }
        let mut psi = ComplexVector::zeros(dim);
        psi[index] = Complex64::new(1.0, 0.0);
        Ok(PureHybridState { sector, psi })
    }

    pub fn projector(&self) -> ComplexMatrix {
        linalg::projector(&self.psi)
    }
}

/// `lambda(x) = <psi, Lambda_a psi>`.
pub fn total_rate(model: &HybridModel, x: &PureHybridState) -> Result<f64, ModelError> {
    let ops = model.sector(x.sector)?;
    Ok(linalg::expectation(&ops.rate_operator, &x.psi).max(0.0))
}

/// Block-diagonal operator `diag(A_0, A_1, ...)`: a statistical state or an
/// observable of the hybrid system.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    pub blocks: Vec<ComplexMatrix>,
}

impl BlockMatrix {
    pub fn zeros(dims: &[usize]) -> Self {
        BlockMatrix {
            blocks: dims.iter().map(|&d| ComplexMatrix::zeros(d, d)).collect(),
        }
    }

    pub fn identity(dims: &[usize]) -> Self {
        BlockMatrix {
            blocks: dims.iter().map(|&d| ComplexMatrix::identity(d, d)).collect(),
        }
    }

    /// `|psi><psi|` placed in the state's sector.
    pub fn from_pure(dims: &[usize], x: &PureHybridState) -> Self {
        let mut out = Self::zeros(dims);
        out.blocks[x.sector] = x.projector();
        out
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    /// Real parts of the block traces.
    pub fn traces(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| linalg::trace(b).re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.traces().iter().sum()
    }

    /// `sum_a Tr(A_a B_a)`.
    pub fn pairing(&self, other: &BlockMatrix) -> Complex64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a * b).trace())
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        BlockMatrix {
            blocks: self.blocks.iter().map(|b| b.scale(s)).collect(),
        }
    }

    /// `self += s * other` blockwise.
    pub fn add_scaled(&mut self, s: f64, other: &BlockMatrix) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a += b.scale(s);
        }
    }

    /// Replaces every block with its Hermitian part.
    pub fn symmetrize(&mut self) {
        for b in &mut self.blocks {
            *b = linalg::hermitian_part(b);
        }
    }

    /// Extends with zero blocks (or truncates) to `dims`.
    pub fn resized(&self, dims: &[usize]) -> Self {
        let mut out = BlockMatrix::zeros(dims);
        for (a, b) in self.blocks.iter().enumerate().take(dims.len()) {
            out.blocks[a] = b.clone();
        }
        out
    }

    pub fn max_hermitian_deviation(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| hermitian_deviation(b).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| min_eigenvalue_hermitian(b).unwrap_or(f64::NEG_INFINITY))
            .fold(f64::INFINITY, f64::min)
    }

    fn check_against(&self, model: &HybridModel) -> Result<(), ModelError> {
        if let Some(m) = model.sector_count() {
            if self.blocks.len() != m {
                return Err(ModelError::BlockCount {
                    expected: m,
                    found: self.blocks.len(),
                });
            }
        }
        for (a, b) in self.blocks.iter().enumerate() {
            let d = model.dim(a)?;
            if b.shape() != (d, d) {
                return Err(ModelError::BlockShape {
                    sector: a,
                    expected: (d, d),
                    found: b.shape(),
                });
            }
        }
        Ok(())
    }
}

fn times_i(m: &ComplexMatrix) -> ComplexMatrix {
    m.map(|z| Complex64::new(-z.im, z.re))
}

/// Master-equation generator in the Schrodinger picture:
/// `rho'_a = -i[H_a, rho_a] + sum_b g_ab rho_b g_ab^dagger - {Lambda_a, rho_a}/2`.
///
/// For chain models the blocks form a window `0..len`; sectors beyond the
/// window are treated as empty, so probability flowing out of the window is
/// lost from the returned derivative.
pub fn lindblad_apply(model: &HybridModel, rho: &BlockMatrix) -> Result<BlockMatrix, ModelError> {
    rho.check_against(model)?;
    let mut out = Vec::with_capacity(rho.blocks.len());
    for (a, r) in rho.blocks.iter().enumerate() {
        let ops = model.sector(a)?;
        let commutator = &ops.hamiltonian * r - r * &ops.hamiltonian;
        let anti = &ops.rate_operator * r + r * &ops.rate_operator;
        let mut d = -times_i(&commutator) - anti.scale(0.5);
        for (b, g) in model.incoming(a)? {
            if let Some(rb) = rho.blocks.get(b) {
                d += g * rb * g.adjoint();
            }
        }
        out.push(d);
    }
    Ok(BlockMatrix { blocks: out })
}

/// Dual generator acting on observables:
/// `A'_a = i[H_a, A_a] + sum_b g_ba^dagger A_b g_ba - {Lambda_a, A_a}/2`.
///
/// For chain models, targets beyond the block window contribute nothing.
pub fn heisenberg_apply(model: &HybridModel, obs: &BlockMatrix) -> Result<BlockMatrix, ModelError> {
    obs.check_against(model)?;
    let mut out = Vec::with_capacity(obs.blocks.len());
    for (a, x) in obs.blocks.iter().enumerate() {
        let ops = model.sector(a)?;
        let commutator = &ops.hamiltonian * x - x * &ops.hamiltonian;
        let anti = &ops.rate_operator * x + x * &ops.rate_operator;
        let mut d = times_i(&commutator) - anti.scale(0.5);
        for (b, g) in model.outgoing(a)? {
            if let Some(xb) = obs.blocks.get(b) {
                d += g.adjoint() * xb * g;
            }
        }
        out.push(d);
    }
    Ok(BlockMatrix { blocks: out })
}

fn random_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Random matrix with uniform entries in the unit square.
pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    DMatrix::from_fn(rows, cols, |_, _| random_complex(rng))
}

/// Random Hermitian matrix with entries of order one.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ComplexMatrix {
    linalg::hermitian_part(&random_matrix(rng, dim, dim))
}

/// Random unit vector.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ComplexVector {
    loop {
        let v = ComplexVector::from_fn(dim, |_, _| random_complex(rng));
        let n = v.norm();
        if n > 1e-3 {
            return v.unscale(n);
        }
    }
}

/// Random finite model: `sectors` sectors of dimension `1..=max_dim`, random
/// Hermitian Hamiltonians, and a coupling for every ordered pair of distinct
/// sectors with Frobenius norm drawn uniformly from `(0, max_coupling_norm]`.
pub fn random_model<R: Rng + ?Sized>(
    rng: &mut R,
    sectors: usize,
    max_dim: usize,
    max_coupling_norm: f64,
) -> HybridModel {
    let dims: Vec<usize> = (0..sectors).map(|_| rng.gen_range(1..=max_dim)).collect();
    let hamiltonians = dims.iter().map(|&d| random_hermitian(rng, d)).collect();
    let mut couplings = Vec::new();
    for target in 0..sectors {
        for source in 0..sectors {
            if target == source {
                continue;
            }
            let m = random_matrix(rng, dims[target], dims[source]);
            let norm = rng.gen_range(0.0..max_coupling_norm).max(1e-3 * max_coupling_norm);
            let fro = linalg::frobenius_norm(&m);
            couplings.push(Coupling {
                target,
                source,
                matrix: m.scale(norm / fro),
            });
        }
    }
    build_model(hamiltonians, couplings).expect("random model is valid by construction")
}

/// Random density matrix in block form: a random mixture of a few pure states.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, dims: &[usize]) -> BlockMatrix {
    let mut rho = BlockMatrix::zeros(dims);
    let mut total = 0.0;
    for (a, &d) in dims.iter().enumerate() {
        for _ in 0..2 {
            let w: f64 = rng.gen_range(0.05..1.0);
            let v = random_unit_vector(rng, d);
            rho.blocks[a] += linalg::projector(&v).scale(w);
            total += w;
        }
    }
    rho.scale(1.0 / total)
}

/// Random Hermitian block observable.
pub fn random_observable<R: Rng + ?Sized>(rng: &mut R, dims: &[usize]) -> BlockMatrix {
    BlockMatrix {
        blocks: dims.iter().map(|&d| random_hermitian(rng, d)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn scalar(v: f64) -> ComplexMatrix {
        ComplexMatrix::from_element(1, 1, c(v))
    }

    fn telegraph(rate: f64) -> HybridModel {
        build_model(
            vec![scalar(0.0), scalar(0.0)],
            vec![
                Coupling {
                    target: 0,
                    source: 1,
                    matrix: scalar(rate.sqrt()),
                },
                Coupling {
                    target: 1,
                    source: 0,
                    matrix: scalar(rate.sqrt()),
                },
            ],
        )
        .unwrap()
    }

    fn lowering() -> ComplexMatrix {
        ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(0.0), c(1.0), c(0.0)])
    }

    #[test]
    fn overflowing_rate_is_rejected() {
        let err = build_model(
            vec![scalar(0.0), scalar(0.0)],
            vec![Coupling {
                target: 1,
                source: 0,
                matrix: scalar(1e200),
            }],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::NonFinite { ref what } if what == "rate operator of sector 0"), "{err}");
    }

    #[test]
    fn telegraph_rates() {
        let model = telegraph(2.5);
        for a in 0..2 {
            assert!((model.sector(a).unwrap().rate_operator[(0, 0)].re - 2.5).abs() < 1e-15);
        }
        assert!((model.rate_bound() - 2.5).abs() < 1e-14);
        let x = PureHybridState::basis(&model, 1, 0).unwrap();
        assert!((total_rate(&model, &x).unwrap() - 2.5).abs() < 1e-14);
    }

    #[test]
    fn zero_couplings_give_zero_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = vec![random_hermitian(&mut rng, 2), random_hermitian(&mut rng, 3)];
        let model = build_model(
            h,
            vec![Coupling {
                target: 1,
                source: 0,
                matrix: ComplexMatrix::zeros(3, 2),
            }],
        )
        .unwrap();
        for a in 0..2 {
            assert!(model.sector(a).unwrap().rate_operator.iter().all(|z| z.norm() == 0.0));
        }
        assert_eq!(model.rate_bound(), 0.0);
    }

    #[test]
    fn fluorescence_chain_rates() {
        let gamma: f64 = 0.7;
        let model = build_chain(ChainRule {
            dim: 2,
            hamiltonian: ComplexMatrix::zeros(2, 2),
            steps: vec![ChainStep {
                offset: 1,
                matrix: lowering().scale(gamma.sqrt()),
            }],
        })
        .unwrap();
        for n in [0, 1, 17] {
            let lam = &model.sector(n).unwrap().rate_operator;
            assert!((lam[(0, 0)].re - gamma).abs() < 1e-15);
            assert!(lam[(0, 1)].norm() + lam[(1, 0)].norm() + lam[(1, 1)].norm() < 1e-15);
            assert_eq!(model.outgoing(n).unwrap()[0].0, n + 1);
        }
        let excited = PureHybridState::basis(&model, 4, 0).unwrap();
        let ground = PureHybridState::basis(&model, 4, 1).unwrap();
        assert!((total_rate(&model, &excited).unwrap() - gamma).abs() < 1e-15);
        assert_eq!(total_rate(&model, &ground).unwrap(), 0.0);
        assert_eq!(model.incoming(0).unwrap().len(), 0);
        assert_eq!(model.incoming(3).unwrap()[0].0, 2);
    }

    #[test]
    fn validation_errors_name_the_offender() {
        let err = build_model(
            vec![scalar(0.0), scalar(0.0)],
            vec![Coupling {
                target: 0,
                source: 0,
                matrix: scalar(1.0),
            }],
        )
        .unwrap_err();
        assert_eq!(err, ModelError::DiagonalCoupling { sector: 0 });
        assert!(err.to_string().contains("(0,0)"));

        let err = build_model(
            vec![ComplexMatrix::identity(2, 2), scalar(0.0)],
            vec![Coupling {
                target: 1,
                source: 0,
                matrix: ComplexMatrix::zeros(2, 1),
            }],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ModelError::CouplingShape {
                target: 1,
                origin: 0,
                expected: (1, 2),
                found: (2, 1)
            }
        ));

        let bad_h = ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        let err = build_model(vec![scalar(1.0), bad_h], vec![]).unwrap_err();
        assert!(matches!(err, ModelError::NotHermitian { sector: 1, .. }));

        // an exactly zero diagonal coupling is accepted
        build_model(
            vec![scalar(0.0)],
            vec![Coupling {
                target: 0,
                source: 0,
                matrix: scalar(0.0),
            }],
        )
        .unwrap();
    }

    #[test]
    fn rectangular_couplings() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_matrix(&mut rng, 3, 1);
        let model = build_model(
            vec![scalar(0.5), random_hermitian(&mut rng, 3)],
            vec![Coupling {
                target: 1,
                source: 0,
                matrix: g.clone(),
            }],
        )
        .unwrap();
        let lam = &model.sector(0).unwrap().rate_operator;
        assert!((lam[(0, 0)].re - g.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn telegraph_generators_by_hand() {
        let model = telegraph(1.5);
        let rho = BlockMatrix {
            blocks: vec![scalar(1.0), scalar(0.0)],
        };
        let d = lindblad_apply(&model, &rho).unwrap();
        assert!((d.blocks[0][(0, 0)].re + 1.5).abs() < 1e-15);
        assert!((d.blocks[1][(0, 0)].re - 1.5).abs() < 1e-15);

        let a = BlockMatrix {
            blocks: vec![scalar(1.0), scalar(0.0)],
        };
        let d = heisenberg_apply(&model, &a).unwrap();
        assert!((d.blocks[0][(0, 0)].re + 1.5).abs() < 1e-15);
        assert!((d.blocks[1][(0, 0)].re - 1.5).abs() < 1e-15);
    }

    #[test]
    fn generators_vanish_without_dynamics() {
        let model = build_model(vec![ComplexMatrix::zeros(2, 2), scalar(0.0)], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_density(&mut rng, &[2, 1]);
        let d = lindblad_apply(&model, &rho).unwrap();
        assert!(d.blocks.iter().all(|b| b.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn generator_identities_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..20 {
            let m = rng.gen_range(1..=4);
            let model = random_model(&mut rng, m, 3, 1.0);
            let dims = model.dims(m).unwrap();
            for a in 0..m {
                let lam = &model.sector(a).unwrap().rate_operator;
                assert!(min_eigenvalue_hermitian(lam).unwrap() >= -1e-12);
                assert!(hermitian_deviation(lam).unwrap() <= 1e-12);
            }
            let unit = heisenberg_apply(&model, &BlockMatrix::identity(&dims)).unwrap();
            assert!(unit.blocks.iter().all(|b| b.iter().all(|z| z.norm() <= 1e-12)));
            for _ in 0..5 {
                let rho = random_density(&mut rng, &dims);
                let obs = random_observable(&mut rng, &dims);
                let drho = lindblad_apply(&model, &rho).unwrap();
                assert!(drho.trace().abs() <= 1e-12);
                assert!(drho.max_hermitian_deviation() <= 1e-12);
                let dobs = heisenberg_apply(&model, &obs).unwrap();
                let lhs = dobs.pairing(&rho);
                let rhs = obs.pairing(&drho);
                assert!((lhs - rhs).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn block_count_is_checked() {
        let model = telegraph(1.0);
        let rho = BlockMatrix {
            blocks: vec![scalar(1.0)],
        };
        assert_eq!(
            lindblad_apply(&model, &rho).unwrap_err(),
            ModelError::BlockCount {
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn digest_depends_on_content() {
        assert_eq!(telegraph(1.0).digest(), telegraph(1.0).digest());
        assert_ne!(telegraph(1.0).digest(), telegraph(2.0).digest());
    }

    #[test]
    fn states_are_normalized_and_checked() {
        let model = telegraph(1.0);
        let x = PureHybridState::new(&model, 0, ComplexVector::from_vec(vec![c(-3.0)])).unwrap();
        assert!((x.psi.norm() - 1.0).abs() < UNIT_NORM_TOL);
        assert_eq!(
            PureHybridState::new(&model, 0, ComplexVector::zeros(1)).unwrap_err(),
            ModelError::ZeroState
        );
        assert!(matches!(
            PureHybridState::new(&model, 2, ComplexVector::zeros(1)),
            Err(ModelError::SectorOutOfRange { sector: 2, .. })
        ));
    }
}
