//! Master-equation oracle and trajectory ensembles.
//!
//! [`master_evolve`] integrates `rho' = L(rho)` with an adaptive Dormand-Prince
//! 5(4) scheme. [`run_ensemble`] averages projectors of simulated sample
//! paths on the same grid; [`compare_to_master`] measures the trace distance
//! between the two and [`balance_residual`] checks the occupation balance law
//! `d p_a / dt = -E[lambda_a] + sum_{b != a} E[||g_ab x_t||^2]` on the
//! ensemble itself.

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{self, EngineError, PathPoint, PropagatorCache, TrajectoryConfig};
use crate::linalg::{self, LinalgError};
use crate::model::{lindblad_apply, BlockMatrix, HybridModel, ModelError, PureHybridState, SectorIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("step size collapsed to {h:e} at t = {t} (stiff or divergent system)")]
    Stiffness { t: f64, h: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grids differ: {0}")]
    GridMismatch(String),
    #[error("need at least 3 grid points, got {0}")]
    TooFewPoints(usize),
    #[error("trajectory {index} stopped at t = {t_end} before the grid end {grid_end}")]
    Horizon { index: u64, t_end: f64, grid_end: f64 },
    #[error("ensemble needs at least one trajectory")]
    Empty,
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

/// Uniform output grid `t0, t0 + dt, ..., t0 + steps * dt`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() || t0 < 0.0 {
            return Err(EnsembleError::InvalidGrid(format!("t0 = {t0}, dt = {dt}")));
        }
        Ok(TimeGrid { t0, dt, steps })
    }

    /// Grid from 0 to `t_end` with spacing `dt` (rounded to a whole number of
    /// steps).
    pub fn span(t_end: f64, dt: f64) -> Result<Self> {
        if !(t_end >= 0.0) {
            return Err(EnsembleError::InvalidGrid(format!("t_end = {t_end}")));
        }
        let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
        Self::new(0.0, dt, steps)
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn end(&self) -> f64 {
        self.time(self.steps)
    }
}

/// Dormand-Prince tableau (autonomous system, so the nodes are not needed).
const RK_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const RK_E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Local error tolerances of the master-equation integrator.
pub const MASTER_REL_TOL: f64 = 1e-8;
pub const MASTER_ABS_TOL: f64 = 1e-10;
const MAX_RK_STEPS: usize = 10_000_000;

fn error_norm(err: &BlockMatrix, y0: &BlockMatrix, y1: &BlockMatrix) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for ((e, a), b) in err.blocks.iter().zip(&y0.blocks).zip(&y1.blocks) {
        for ((ez, az), bz) in e.iter().zip(a.iter()).zip(b.iter()) {
            let scale = MASTER_ABS_TOL + MASTER_REL_TOL * az.norm().max(bz.norm());
            acc += (ez.norm() / scale).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (acc / count as f64).sqrt()
    }
}

struct DormandPrince<'a> {
    model: &'a HybridModel,
    t: f64,
    y: BlockMatrix,
    h: f64,
    /// Derivative at `(t, y)` (first-same-as-last).
    k1: BlockMatrix,
}

impl<'a> DormandPrince<'a> {
    fn new(model: &'a HybridModel, t: f64, y: BlockMatrix, dt_hint: f64) -> Result<Self> {
        let k1 = lindblad_apply(model, &y)?;
        let scale = model.rate_bound()
            + y.blocks
                .iter()
                .enumerate()
                .map(|(a, _)| {
                    model
                        .sector(a)
                        .map(|s| linalg::frobenius_norm(&s.hamiltonian))
                        .unwrap_or(0.0)
                })
                .fold(0.0, f64::max);
        let h = (0.05 / scale.max(1e-3)).min(dt_hint);
        Ok(DormandPrince { model, t, y, h, k1 })
    }

    fn advance_to(&mut self, t_target: f64) -> Result<()> {
        let mut steps = 0usize;
        while self.t < t_target {
            steps += 1;
            if steps > MAX_RK_STEPS {
                return Err(EnsembleError::Stiffness { t: self.t, h: self.h });
            }
            let remaining = t_target - self.t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            if h < 1e-13 * self.t.abs().max(1.0) && !last {
                return Err(EnsembleError::Stiffness { t: self.t, h });
            }

            let mut k: Vec<BlockMatrix> = Vec::with_capacity(7);
            k.push(self.k1.clone());
            let mut y_new = self.y.clone();
            for stage in 1..7 {
                let mut ys = self.y.clone();
                for (j, kj) in k.iter().enumerate() {
                    let a = RK_A[stage][j];
                    if a != 0.0 {
                        ys.add_scaled(h * a, kj);
                    }
                }
                if stage == 6 {
                    y_new = ys.clone();
                }
                k.push(lindblad_apply(self.model, &ys)?);
            }
            let mut err = BlockMatrix::zeros(&self.y.dims());
            for (j, kj) in k.iter().enumerate() {
                if RK_E[j] != 0.0 {
                    err.add_scaled(h * RK_E[j], kj);
                }
            }
            let e = error_norm(&err, &self.y, &y_new);
            if !e.is_finite() {
                self.h *= 0.2;
                continue;
            }
            if e <= 1.0 {
                self.t = if last { t_target } else { self.t + h };
                self.y = y_new;
                self.k1 = k.pop().expect("seven stages");
                let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
            } else {
                self.h = h * (0.9 * e.powf(-0.2)).clamp(0.2, 1.0);
            }
        }
        Ok(())
    }
}

/// Integrates the master equation from `rho0` (the state at `grid.t0`) and
/// returns the re-symmetrized state at every grid point.
///
/// For chain models `rho0` fixes the sector window; see
/// [`chain_window`] for choosing it.
pub fn master_evolve(model: &HybridModel, rho0: &BlockMatrix, grid: &TimeGrid) -> Result<Vec<BlockMatrix>> {
    let mut solver = DormandPrince::new(model, grid.t0, rho0.clone(), grid.dt)?;
    let mut out = Vec::with_capacity(grid.len());
    let mut first = rho0.clone();
    first.symmetrize();
    out.push(first);
    for k in 1..grid.len() {
        solver.advance_to(grid.time(k))?;
        let mut rho = solver.y.clone();
        rho.symmetrize();
        out.push(rho);
    }
    Ok(out)
}

/// Number of chain sectors to integrate so that the Poisson bound on the
/// probability of more jumps than the window holds is below `1e-8` at `t`.
pub fn chain_window(model: &HybridModel, t: f64) -> usize {
    const TAIL: f64 = 1e-8;
    let mean = model.rate_bound() * t;
    let mut term = (-mean).exp();
    let mut cdf = term;
    let mut n = 0usize;
    while 1.0 - cdf >= TAIL && n < 100_000 {
        n += 1;
        term *= mean / n as f64;
        cdf += term;
    }
    n + 1
}

/// `|x0><x0|` embedded in the block layout master integration needs up to
/// `t_end`: every sector for finite models, [`chain_window`] sectors for
/// chains.
pub fn initial_blocks(model: &HybridModel, x0: &PureHybridState, t_end: f64) -> Result<BlockMatrix> {
    let count = match model.sector_count() {
        Some(m) => m,
        None => (x0.sector + chain_window(model, t_end)).max(x0.sector + 1),
    };
    Ok(BlockMatrix::from_pure(&model.dims(count)?, x0))
}

/// Kolmogorov-Smirnov distance between `cdf` and the empirical distribution
/// of `n_total` samples, of which `samples` (sorted ascending) were observed
/// and the rest censored beyond `horizon`. The supremum runs over
/// `[0, horizon]`.
pub fn ks_distance<F: FnMut(f64) -> f64>(samples: &[f64], n_total: usize, horizon: f64, mut cdf: F) -> f64 {
    let nf = n_total as f64;
    let mut d: f64 = 0.0;
    for (i, &t) in samples.iter().enumerate() {
        let f = cdf(t);
        d = d.max(((i + 1) as f64 / nf - f).abs()).max((f - i as f64 / nf).abs());
    }
    d.max((samples.len() as f64 / nf - cdf(horizon)).abs())
}

/// Per-grid, per-sector first and second moments of a per-trajectory
/// quantity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SectorMoments {
    pub sum: Vec<Vec<f64>>,
    pub sum_sq: Vec<Vec<f64>>,
}

impl SectorMoments {
    fn new(points: usize) -> Self {
        SectorMoments {
            sum: vec![Vec::new(); points],
            sum_sq: vec![Vec::new(); points],
        }
    }

    fn add(&mut self, j: usize, sector: SectorIndex, value: f64) {
        if self.sum[j].len() <= sector {
            self.sum[j].resize(sector + 1, 0.0);
            self.sum_sq[j].resize(sector + 1, 0.0);
        }
        self.sum[j][sector] += value;
        self.sum_sq[j][sector] += value * value;
    }

    pub fn mean(&self, j: usize, sector: SectorIndex, n: usize) -> f64 {
        self.sum[j].get(sector).copied().unwrap_or(0.0) / n as f64
    }

    /// Standard error of the mean.
    pub fn std_error(&self, j: usize, sector: SectorIndex, n: usize) -> f64 {
        if n < 2 {
            return 0.0;
        }
        let nf = n as f64;
        let s = self.sum[j].get(sector).copied().unwrap_or(0.0);
        let s2 = self.sum_sq[j].get(sector).copied().unwrap_or(0.0);
        let var = ((s2 - s * s / nf) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    }
}

/// Time-gridded averages over `trajectories` sample paths.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub grid: TimeGrid,
    pub trajectories: usize,
    /// `sum_i 1{sector_i = a} |psi_i><psi_i| / N` at each grid point.
    pub empirical_blocks: Vec<BlockMatrix>,
    /// Sector frequencies at each grid point.
    pub occupation: Vec<Vec<f64>>,
    pub jump_mean: Vec<f64>,
    pub jump_var: Vec<f64>,
    /// Frequencies of `N_t = n` at each grid point.
    pub count_histogram: Vec<Vec<f64>>,
    /// Mean and variance of `N_t - int_0^t lambda(x_s) ds`.
    pub martingale_mean: Vec<f64>,
    pub martingale_var: Vec<f64>,
    /// Per-trajectory right-hand side of the occupation balance law.
    pub balance_rhs: SectorMoments,
    /// Per-trajectory finite difference of the sector indicator minus the
    /// right-hand side (only filled when the grid has at least 3 points).
    pub balance_residual: SectorMoments,
}

impl EnsembleStats {
    pub fn sector_count(&self) -> usize {
        self.occupation.first().map_or(0, |o| o.len())
    }

    /// Largest violation of the aggregate consistency relations: total
    /// trace and occupation sums equal one, and `occupation_a = Tr(block_a)`.
    pub fn consistency_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (blocks, occ) in self.empirical_blocks.iter().zip(&self.occupation) {
            worst = worst.max((blocks.trace() - 1.0).abs());
            worst = worst.max((occ.iter().sum::<f64>() - 1.0).abs());
            for (tr, o) in blocks.traces().iter().zip(occ) {
                worst = worst.max((tr - o).abs());
            }
        }
        worst
    }
}

/// Second-order finite-difference stencil for the derivative at grid index
/// `j`: `(index, weight)` pairs to be divided by `dt`.
fn stencil(j: usize, len: usize) -> [(usize, f64); 3] {
    if j == 0 {
        [(0, -1.5), (1, 2.0), (2, -0.5)]
    } else if j == len - 1 {
        [(j - 2, 0.5), (j - 1, -2.0), (j, 1.5)]
    } else {
        [(j - 1, -0.5), (j, 0.0), (j + 1, 0.5)]
    }
}

/// Per-trajectory right-hand side of the balance law at one point:
/// `-lambda(psi)` for the current sector and `||g_bs psi||^2` for each target.
fn balance_terms(model: &HybridModel, x: &PureHybridState) -> Result<Vec<(SectorIndex, f64)>> {
    let mut out = vec![(x.sector, -crate::model::total_rate(model, x)?)];
    for (b, g) in model.outgoing(x.sector)? {
        out.push((b, (g * &x.psi).norm_squared()));
    }
    Ok(out)
}

struct Accumulator {
    grid: TimeGrid,
    n: usize,
    dims: Vec<usize>,
    blocks: Vec<Vec<linalg::ComplexMatrix>>,
    counts: Vec<Vec<u64>>,
    jump_sum: Vec<f64>,
    jump_sq: Vec<f64>,
    hist: Vec<Vec<u64>>,
    mart_sum: Vec<f64>,
    mart_sq: Vec<f64>,
    rhs: SectorMoments,
    residual: SectorMoments,
}

impl Accumulator {
    fn new(grid: TimeGrid) -> Self {
        let p = grid.len();
        Accumulator {
            grid,
            n: 0,
            dims: Vec::new(),
            blocks: vec![Vec::new(); p],
            counts: vec![Vec::new(); p],
            jump_sum: vec![0.0; p],
            jump_sq: vec![0.0; p],
            hist: vec![Vec::new(); p],
            mart_sum: vec![0.0; p],
            mart_sq: vec![0.0; p],
            rhs: SectorMoments::new(p),
            residual: SectorMoments::new(p),
        }
    }

    fn ensure_sector(&mut self, model: &HybridModel, sector: SectorIndex) -> Result<()> {
        while self.dims.len() <= sector {
            let d = model.dim(self.dims.len())?;
            self.dims.push(d);
            for j in 0..self.blocks.len() {
                self.blocks[j].push(linalg::ComplexMatrix::zeros(d, d));
                self.counts[j].push(0);
            }
        }
        Ok(())
    }

    fn add(&mut self, model: &HybridModel, path: &[PathPoint]) -> Result<()> {
        self.n += 1;
        let len = path.len();
        for (j, pt) in path.iter().enumerate() {
            let s = pt.state.sector;
            self.ensure_sector(model, s)?;
            self.blocks[j][s] += pt.state.projector();
            self.counts[j][s] += 1;
            let nj = pt.jumps as f64;
            self.jump_sum[j] += nj;
            self.jump_sq[j] += nj * nj;
            if self.hist[j].len() <= pt.jumps {
                self.hist[j].resize(pt.jumps + 1, 0);
            }
            self.hist[j][pt.jumps] += 1;
            let m = nj - pt.compensator;
            self.mart_sum[j] += m;
            self.mart_sq[j] += m * m;

            let rhs = balance_terms(model, &pt.state)?;
            let mut combined: Vec<(SectorIndex, f64, f64)> = Vec::with_capacity(rhs.len() + 3);
            for &(a, r) in &rhs {
                match combined.iter_mut().find(|(b, _, _)| *b == a) {
                    Some(entry) => entry.1 += r,
                    None => combined.push((a, r, 0.0)),
                }
            }
            if len >= 3 {
                for (idx, w) in stencil(j, len) {
                    if w == 0.0 {
                        continue;
                    }
                    let a = path[idx].state.sector;
                    let fd = w / self.grid.dt;
                    match combined.iter_mut().find(|(b, _, _)| *b == a) {
                        Some(entry) => entry.2 += fd,
                        None => combined.push((a, 0.0, fd)),
                    }
                }
            }
            for (a, r, fd) in combined {
                self.rhs.add(j, a, r);
                if len >= 3 {
                    self.residual.add(j, a, fd - r);
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> EnsembleStats {
        let nf = self.n as f64;
        let m = self.dims.len();
        let var = |sum: f64, sq: f64| {
            if self.n > 1 {
                ((sq - sum * sum / nf) / (nf - 1.0)).max(0.0)
            } else {
                0.0
            }
        };
        let empirical_blocks = self
            .blocks
            .into_iter()
            .map(|bl| BlockMatrix {
                blocks: bl.into_iter().map(|b| b.unscale(nf)).collect(),
            })
            .collect();
        let occupation = self
            .counts
            .iter()
            .map(|c| c.iter().map(|&k| k as f64 / nf).collect())
            .collect();
        let mut balance_rhs = self.rhs;
        let mut balance_residual = self.residual;
        for moments in [&mut balance_rhs, &mut balance_residual] {
            for row in moments.sum.iter_mut().chain(moments.sum_sq.iter_mut()) {
                row.resize(row.len().max(m), 0.0);
            }
        }
        EnsembleStats {
            grid: self.grid,
            trajectories: self.n,
            empirical_blocks,
            occupation,
            jump_mean: self.jump_sum.iter().map(|s| s / nf).collect(),
            jump_var: self.jump_sum.iter().zip(&self.jump_sq).map(|(&s, &q)| var(s, q)).collect(),
            count_histogram: self
                .hist
                .iter()
                .map(|h| h.iter().map(|&k| k as f64 / nf).collect())
                .collect(),
            martingale_mean: self.mart_sum.iter().map(|s| s / nf).collect(),
            martingale_var: self.mart_sum.iter().zip(&self.mart_sq).map(|(&s, &q)| var(s, q)).collect(),
            balance_rhs,
            balance_residual,
        }
    }
}

const CHUNK: usize = 2048;

/// Simulates trajectories `0..n` and aggregates them on `grid`. Trajectories
/// run in parallel on the current rayon pool; aggregation is a fixed-order
/// reduction in trajectory index order, so the result does not depend on the
/// number of workers.
pub fn run_ensemble(
    model: &HybridModel,
    x0: &PureHybridState,
    cfg: &TrajectoryConfig,
    n: usize,
    grid: &TimeGrid,
) -> Result<EnsembleStats> {
    if n == 0 {
        return Err(EnsembleError::Empty);
    }
    let mut times = grid.times();
    let grid_end = *times.last().expect("grid has a point");
    if grid_end > cfg.t_max * (1.0 + 1e-12) {
        return Err(EnsembleError::InvalidGrid(format!(
            "grid end {grid_end} exceeds t_max {}",
            cfg.t_max
        )));
    }
    for t in times.iter_mut() {
        *t = t.min(cfg.t_max);
    }
    let cache = PropagatorCache::new();
    let mut acc = Accumulator::new(*grid);
    let mut start = 0usize;
    while start < n {
        let end = (start + CHUNK).min(n);
        let paths: Vec<Result<Vec<PathPoint>>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let log = engine::simulate_trajectory(model, x0, cfg, i as u64)?;
                if log.t_end < grid_end.min(cfg.t_max) {
                    return Err(EnsembleError::Horizon {
                        index: i as u64,
                        t_end: log.t_end,
                        grid_end,
                    });
                }
                Ok(engine::sample_path(&log, model, &times, grid.dt, &cache)?)
            })
            .collect();
        for path in paths {
            acc.add(model, &path?)?;
        }
        start = end;
    }
    Ok(acc.finish())
}

/// Trace distance between the empirical and master block states at every
/// grid point. Missing blocks on either side count as zero.
pub fn compare_to_master(stats: &EnsembleStats, master: &[BlockMatrix]) -> Result<Vec<f64>> {
    if master.len() != stats.grid.len() {
        return Err(EnsembleError::GridMismatch(format!(
            "{} master points vs {} grid points",
            master.len(),
            stats.grid.len()
        )));
    }
    stats
        .empirical_blocks
        .iter()
        .zip(master)
        .map(|(emp, mas)| {
            let count = emp.blocks.len().max(mas.blocks.len());
            let mut total = 0.0;
            for a in 0..count {
                let d = match (emp.blocks.get(a), mas.blocks.get(a)) {
                    (Some(e), Some(m)) => linalg::trace_distance(e, m)?,
                    (Some(e), None) => linalg::trace_distance(e, &linalg::ComplexMatrix::zeros(e.nrows(), e.ncols()))?,
                    (None, Some(m)) => linalg::trace_distance(&linalg::ComplexMatrix::zeros(m.nrows(), m.ncols()), m)?,
                    (None, None) => 0.0,
                };
                total += d;
            }
            Ok(total)
        })
        .collect()
}

/// Balance-law check at every grid point and sector.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceReport {
    /// Finite-difference derivative of the occupation frequencies.
    pub derivative: Vec<Vec<f64>>,
    /// Ensemble estimate of `-E[lambda_a] + sum_b E[||g_ab x_t||^2]`.
    pub rhs: Vec<Vec<f64>>,
    /// `|derivative - rhs|`.
    pub residual: Vec<Vec<f64>>,
    /// Standard error of the right-hand side estimate.
    pub rhs_std_error: Vec<Vec<f64>>,
    /// Standard error of the per-trajectory residual estimator (finite
    /// difference and right-hand side together).
    pub residual_std_error: Vec<Vec<f64>>,
}

/// Compares the numerical derivative of the occupation frequencies with the
/// ensemble estimate of the balance law's right-hand side.
pub fn balance_residual(stats: &EnsembleStats) -> Result<BalanceReport> {
    let len = stats.grid.len();
    if len < 3 {
        return Err(EnsembleError::TooFewPoints(len));
    }
    let m = stats.sector_count();
    let n = stats.trajectories;
    let mut report = BalanceReport {
        derivative: Vec::with_capacity(len),
        rhs: Vec::with_capacity(len),
        residual: Vec::with_capacity(len),
        rhs_std_error: Vec::with_capacity(len),
        residual_std_error: Vec::with_capacity(len),
    };
    for j in 0..len {
        let deriv: Vec<f64> = (0..m)
            .map(|a| {
                stencil(j, len)
                    .iter()
                    .map(|&(idx, w)| w * stats.occupation[idx].get(a).copied().unwrap_or(0.0))
                    .sum::<f64>()
                    / stats.grid.dt
            })
            .collect();
        let rhs: Vec<f64> = (0..m).map(|a| stats.balance_rhs.mean(j, a, n)).collect();
        report.residual.push(deriv.iter().zip(&rhs).map(|(d, r)| (d - r).abs()).collect());
        report.rhs_std_error.push((0..m).map(|a| stats.balance_rhs.std_error(j, a, n)).collect());
        report
            .residual_std_error
            .push((0..m).map(|a| stats.balance_residual.std_error(j, a, n)).collect());
        report.derivative.push(deriv);
        report.rhs.push(rhs);
    }
    Ok(report)
}
