//! Piecewise deterministic sample paths.
//!
//! Between jumps a pure state `(psi, a)` follows the normalized flow of
//! `psi' = K_a psi`. The survival probability from `x` over a time `t` is the
//! squared norm of the unnormalized solution, `exp(-Lambda(t, x))`, where
//! `Lambda(t, x)` integrates the jump rate along the flow. A jump time is
//! sampled by inverting `F_x(t) = 1 - exp(-Lambda(t, x))` against a uniform
//! draw; the target sector `b` is chosen with probability
//! `||g_ba psi||^2 / <psi, Lambda_a psi>` and the state is reset to
//! `g_ba psi / ||g_ba psi||`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{matrix_exponential, ComplexMatrix, ComplexVector, LinalgError};
use crate::model::{total_rate, HybridModel, ModelError, PureHybridState, SectorIndex, SectorOps};
use crate::quad;

/// Rates below this are treated as zero when a jump is about to happen.
pub const RATE_EPS: f64 = 1e-14;
/// Smallest survival probability a single propagation step may produce.
pub const SURVIVAL_FLOOR: f64 = 1e-150;
/// Upper bound on `C * h` for one propagation chunk, so that a chunk decays
/// by at most `exp(-50)`.
const MAX_CHUNK_DECAY: f64 = 50.0;
/// Most propagation chunks one flow or jump search may take.
pub const MAX_CHUNKS: f64 = 1e7;
/// Residual probability mass below this goes to the last positive channel.
const TARGET_RESIDUAL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("survival probability underflow at t = {t}")]
    SurvivalUnderflow { t: f64 },
    #[error("jump rate {rate:e} is below the zero-rate threshold")]
    ZeroRate { rate: f64 },
    #[error("coupling ({target},{origin}) annihilates the state")]
    InvalidJump {
        origin: SectorIndex,
        target: SectorIndex,
    },
    #[error("time {t} outside [0, {t_end}]")]
    TimeOutOfRange { t: f64, t_end: f64 },
    #[error("invalid trajectory configuration: {0}")]
    InvalidConfig(String),
    #[error("rate scale {rate:e} over time {t} needs more than {MAX_CHUNKS:e} propagation chunks")]
    TooStiff { rate: f64, t: f64 },
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Settings for one sample path.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryConfig {
    pub t_max: f64,
    pub max_events: usize,
    /// Kept for manifests; propagation is exact through matrix exponentials
    /// and does not step an ODE.
    pub ode_rel_tol: f64,
    pub ode_abs_tol: f64,
    /// Relative tolerance on jump times.
    pub root_tol: f64,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            t_max: 10.0,
            max_events: 1_000_000,
            ode_rel_tol: 1e-8,
            ode_abs_tol: 1e-10,
            root_tol: 1e-10,
            seed: 0,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(EngineError::InvalidConfig(format!("t_max must be positive, got {}", self.t_max)));
        }
        for (name, v) in [
            ("ode_rel_tol", self.ode_rel_tol),
            ("ode_abs_tol", self.ode_abs_tol),
            ("root_tol", self.root_tol),
        ] {
            if !(v > 0.0) {
                return Err(EngineError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One entry of an event log: the state right after jump `n` (record 0 is
/// the initial state at `t = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub n: usize,
    pub t: f64,
    pub sector: SectorIndex,
    pub psi: ComplexVector,
}

impl EventRecord {
    pub fn state(&self) -> PureHybridState {
        PureHybridState {
            sector: self.sector,
            psi: self.psi.clone(),
        }
    }
}

/// One sample path.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub model_id: String,
    pub master_seed: u64,
    pub trajectory_index: u64,
    pub records: Vec<EventRecord>,
    pub t_end: f64,
}

impl EventLog {
    pub fn jump_count(&self) -> usize {
        self.records.len() - 1
    }

    /// Jump times `T_1, T_2, ...`.
    pub fn jump_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().skip(1).map(|r| r.t)
    }

    /// Index of the last record with `T_k <= t`.
    fn segment_at(&self, t: f64) -> usize {
        self.records.partition_point(|r| r.t <= t).saturating_sub(1)
    }
}

/// Random stream for trajectory `index` of an ensemble seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw from the open interval `(0, 1)` using one 64-bit output.
pub fn open_uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// `exp(t K_a) psi` without renormalization.
pub fn evolve_unnormalized(
    model: &HybridModel,
    sector: SectorIndex,
    psi: &ComplexVector,
    t: f64,
) -> Result<ComplexVector> {
    if t < 0.0 {
        return Err(EngineError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(psi.clone());
    }
    let ops = model.sector(sector)?;
    Ok(matrix_exponential(&ops.generator, t)? * psi)
}

fn chunk_count(ops: &SectorOps, t: f64) -> Result<usize> {
    let chunks = (ops.rate_norm * t / MAX_CHUNK_DECAY).ceil();
    if !(chunks <= MAX_CHUNKS) {
        return Err(EngineError::TooStiff { rate: ops.rate_norm, t });
    }
    Ok((chunks as usize).max(1))
}

/// Flows `x` for time `t`, renormalizing after every chunk. Returns the
/// normalized state and `Lambda(t, x) = -ln ||exp(t K) psi||^2`.
fn flow_with_rate(model: &HybridModel, x: &PureHybridState, t: f64) -> Result<(PureHybridState, f64)> {
    if t < 0.0 {
        return Err(EngineError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok((x.clone(), 0.0));
    }
    let ops = model.sector(x.sector)?;
    let chunks = chunk_count(ops, t)?;
    let h = t / chunks as f64;
    let step = matrix_exponential(&ops.generator, h)?;
    let mut psi = x.psi.clone();
    let mut log_survival = 0.0;
    for k in 0..chunks {
        let v = &step * &psi;
        let norm_sq = v.norm_squared();
        if !(norm_sq >= SURVIVAL_FLOOR) || !norm_sq.is_finite() {
            return Err(EngineError::SurvivalUnderflow { t: h * (k + 1) as f64 });
        }
        log_survival += norm_sq.ln();
        psi = v.unscale(norm_sq.sqrt());
    }
    // Zero rate operator means unitary flow: survival is exactly one.
    if ops.rate_operator.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
        log_survival = 0.0;
    }
    Ok((
        PureHybridState {
            sector: x.sector,
            psi,
        },
        -log_survival,
    ))
}

/// Normalized deterministic flow `phi(t, x)`.
pub fn flow(model: &HybridModel, x: &PureHybridState, t: f64) -> Result<PureHybridState> {
    Ok(flow_with_rate(model, x, t)?.0)
}

/// `Lambda(t, x)`, the integrated jump rate along the flow, obtained as
/// `-ln` of the survival probability.
pub fn cumulative_rate(model: &HybridModel, x: &PureHybridState, t: f64) -> Result<f64> {
    Ok(flow_with_rate(model, x, t)?.1.max(0.0))
}

/// `P_x[T_1 > t] = exp(-Lambda(t, x))`.
pub fn analytic_no_jump_prob(model: &HybridModel, x: &PureHybridState, t: f64) -> Result<f64> {
    Ok((-cumulative_rate(model, x, t)?).exp())
}

/// `F_x(t) = 1 - exp(-Lambda(t, x))`.
pub fn jump_time_cdf(model: &HybridModel, x: &PureHybridState, t: f64) -> Result<f64> {
    Ok(-(-cumulative_rate(model, x, t)?).exp_m1())
}

/// Locates `tau` in `(0, h]` with `-ln ||exp(tau K) psi||^2 = target`, given
/// that the left side is nondecreasing and reaches `target` by `h`.
fn refine_root(
    generator: &ComplexMatrix,
    psi: &ComplexVector,
    target: f64,
    h: f64,
    at_h: f64,
    root_tol: f64,
) -> Result<f64> {
    let eval = |tau: f64| -> Result<f64> {
        let v = matrix_exponential(generator, tau)? * psi;
        let norm_sq = v.norm_squared();
        Ok(if norm_sq > 0.0 { -norm_sq.ln() - target } else { f64::INFINITY })
    };
    let (mut a, mut fa) = (0.0, -target);
    let (mut b, mut fb) = (h, at_h - target);
    let mut best = (b, fb.abs());
    let mut last_side = 0i8;
    for _ in 0..200 {
        if b - a <= root_tol * b.max(f64::MIN_POSITIVE) {
            break;
        }
        let width = b - a;
        let mut c = if fb.is_finite() && fb > fa {
            b - fb * (b - a) / (fb - fa)
        } else {
            0.5 * (a + b)
        };
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let fc = eval(c)?;
        if fc.abs() < best.1 {
            best = (c, fc.abs());
        }
        if fc == 0.0 || fc.abs() <= 4.0 * f64::EPSILON * target.max(1.0) {
            return Ok(c);
        }
        if fc < 0.0 {
            a = c;
            fa = fc;
            if last_side == -1 && fb.is_finite() {
                fb *= 0.5;
            }
            last_side = -1;
        } else {
            b = c;
            fb = fc;
            if last_side == 1 {
                fa *= 0.5;
            }
            last_side = 1;
        }
        // force progress when regula falsi stalls on one side
        if b - a > 0.5 * width {
            let m = 0.5 * (a + b);
            let fm = eval(m)?;
            if fm.abs() < best.1 {
                best = (m, fm.abs());
            }
            if fm < 0.0 {
                a = m;
                fa = fm;
            } else {
                b = m;
                fb = fm;
            }
            last_side = 0;
        }
    }
    Ok(best.0)
}

/// Next jump from `x` for clock draw `p`: the time offset and the flowed
/// state just before the jump, or `None` if no jump happens within `horizon`.
fn find_jump(
    model: &HybridModel,
    x: &PureHybridState,
    p: f64,
    horizon: f64,
    root_tol: f64,
) -> Result<Option<(f64, PureHybridState)>> {
    if p <= 0.0 {
        return Ok(Some((0.0, x.clone())));
    }
    let ops = model.sector(x.sector)?;
    if p >= 1.0 || ops.rate_norm == 0.0 || horizon <= 0.0 {
        return Ok(None);
    }
    let target = -(-p).ln_1p();
    let cap = MAX_CHUNK_DECAY / ops.rate_norm;
    let mut h = (target / ops.rate_norm).min(cap);
    let mut t_lo = 0.0;
    let mut acc_lo = 0.0;
    let mut psi = x.psi.clone();
    for _ in 0..MAX_CHUNKS as usize {
        let remaining = horizon - t_lo;
        if remaining <= 0.0 {
            return Ok(None);
        }
        let last = h >= remaining;
        let h_step = h.min(remaining);
        let v = matrix_exponential(&ops.generator, h_step)? * &psi;
        let norm_sq = v.norm_squared();
        let acc_hi = if norm_sq > 0.0 { acc_lo - norm_sq.ln() } else { f64::INFINITY };
        if acc_hi >= target {
            let tau = refine_root(&ops.generator, &psi, target - acc_lo, h_step, acc_hi - acc_lo, root_tol)?;
            let u = matrix_exponential(&ops.generator, tau)? * &psi;
            let n = u.norm();
            if !(n > 0.0) {
                return Err(EngineError::SurvivalUnderflow { t: t_lo + tau });
            }
            let state = PureHybridState {
                sector: x.sector,
                psi: u.unscale(n),
            };
            return Ok(Some((t_lo + tau, state)));
        }
        if last {
            return Ok(None);
        }
        if !(norm_sq >= SURVIVAL_FLOOR) {
            return Err(EngineError::SurvivalUnderflow { t: t_lo + h_step });
        }
        psi = v.unscale(norm_sq.sqrt());
        acc_lo = acc_hi;
        t_lo += h_step;
        h = (2.0 * h).min(cap);
    }
    Err(EngineError::TooStiff {
        rate: ops.rate_norm,
        t: horizon,
    })
}

/// Inverse of `F_x` at `p`: the jump time, or `None` if it exceeds `t_max`.
pub fn sample_jump_time(
    model: &HybridModel,
    x: &PureHybridState,
    p: f64,
    t_max: f64,
    root_tol: f64,
) -> Result<Option<f64>> {
    Ok(find_jump(model, x, p, t_max, root_tol)?.map(|(t, _)| t))
}

/// Probabilities of the possible jump targets, in increasing sector order.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpDistribution {
    pub entries: Vec<(SectorIndex, f64)>,
}

impl JumpDistribution {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn probability(&self, sector: SectorIndex) -> f64 {
        self.entries
            .iter()
            .find(|(b, _)| *b == sector)
            .map_or(0.0, |(_, p)| *p)
    }

    /// Dense vector over sectors `0..count`.
    pub fn dense(&self, count: usize) -> Vec<f64> {
        let mut out = vec![0.0; count];
        for &(b, p) in &self.entries {
            if b < count {
                out[b] = p;
            }
        }
        out
    }

    /// Cumulative-sum inversion; leftover mass goes to the last positive
    /// channel.
    pub fn sample(&self, u: f64) -> SectorIndex {
        let mut acc = 0.0;
        let mut last_positive = None;
        for &(b, p) in &self.entries {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last_positive = Some(b);
            if u < acc && (1.0 - acc > TARGET_RESIDUAL || u < acc - TARGET_RESIDUAL || acc >= 1.0) {
                return b;
            }
        }
        last_positive.expect("distribution has a positive entry")
    }
}

/// Branching probabilities `||g_ba psi||^2 / <psi, Lambda_a psi>`.
pub fn jump_distribution(model: &HybridModel, x: &PureHybridState) -> Result<JumpDistribution> {
    let rate = total_rate(model, x)?;
    if rate <= RATE_EPS {
        return Err(EngineError::ZeroRate { rate });
    }
    let weights: Vec<(SectorIndex, f64)> = model
        .outgoing(x.sector)?
        .into_iter()
        .map(|(b, g)| (b, (g * &x.psi).norm_squared()))
        .collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(EngineError::ZeroRate { rate: total });
    }
    Ok(JumpDistribution {
        entries: weights.into_iter().map(|(b, w)| (b, w / total)).collect(),
    })
}

/// Resets the state through `g_{target, a}`.
pub fn apply_jump(model: &HybridModel, x: &PureHybridState, target: SectorIndex) -> Result<PureHybridState> {
    let invalid = EngineError::InvalidJump {
        origin: x.sector,
        target,
    };
    let g = model.coupling(target, x.sector).ok_or(invalid.clone())?;
    let v = g * &x.psi;
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(invalid);
    }
    Ok(PureHybridState {
        sector: target,
        psi: v.unscale(n),
    })
}

/// Generates trajectory `trajectory_index` of the ensemble seeded by
/// `cfg.seed`. Each jump consumes one uniform for the clock and one for the
/// target, in event order, so the log depends only on the model, `x0`, the
/// configuration and the index.
pub fn simulate_trajectory(
    model: &HybridModel,
    x0: &PureHybridState,
    cfg: &TrajectoryConfig,
    trajectory_index: u64,
) -> Result<EventLog> {
    cfg.validate()?;
    let x0 = PureHybridState::new(model, x0.sector, x0.psi.clone())?;
    let mut rng = trajectory_rng(cfg.seed, trajectory_index);
    let mut records = vec![EventRecord {
        n: 0,
        t: 0.0,
        sector: x0.sector,
        psi: x0.psi.clone(),
    }];
    let mut x = x0;
    let mut t = 0.0;
    let t_end = loop {
        if records.len() > cfg.max_events {
            break t;
        }
        let p = open_uniform(&mut rng);
        let Some((tau, before)) = find_jump(model, &x, p, cfg.t_max - t, cfg.root_tol)? else {
            break cfg.t_max;
        };
        let mut t_jump = (t + tau).min(cfg.t_max);
        if t_jump <= t {
            t_jump = t.next_up();
        }
        if total_rate(model, &before)? < RATE_EPS {
            // measure-zero configuration: keep flowing without an event
            x = before;
            t = t_jump;
            continue;
        }
        let u = open_uniform(&mut rng);
        let target = jump_distribution(model, &before)?.sample(u);
        x = apply_jump(model, &before, target)?;
        t = t_jump;
        records.push(EventRecord {
            n: records.len(),
            t,
            sector: x.sector,
            psi: x.psi.clone(),
        });
    };
    Ok(EventLog {
        model_id: model.digest().to_string(),
        master_seed: cfg.seed,
        trajectory_index,
        records,
        t_end,
    })
}

fn check_time(log: &EventLog, t: f64) -> Result<()> {
    if t < 0.0 || t > log.t_end || t.is_nan() {
        return Err(EngineError::TimeOutOfRange { t, t_end: log.t_end });
    }
    Ok(())
}

/// `x_t = phi(t - T_k, X_k)` for `T_k <= t < T_{k+1}`.
pub fn state_at(log: &EventLog, model: &HybridModel, t: f64) -> Result<PureHybridState> {
    check_time(log, t)?;
    let rec = &log.records[log.segment_at(t)];
    flow(model, &rec.state(), t - rec.t)
}

/// Number of jumps with `T_n <= t`.
pub fn counting_process(log: &EventLog, t: f64) -> usize {
    log.jump_times().take_while(|&tn| tn <= t).count()
}

/// `int_0^t lambda(x_s) ds` along the log.
pub fn compensator(log: &EventLog, model: &HybridModel, t: f64) -> Result<f64> {
    check_time(log, t)?;
    let k = log.segment_at(t);
    let mut total = 0.0;
    for pair in log.records[..=k].windows(2) {
        total += cumulative_rate(model, &pair[0].state(), pair[1].t - pair[0].t)?;
    }
    let rec = &log.records[k];
    Ok(total + cumulative_rate(model, &rec.state(), t - rec.t)?)
}

/// Probability of exactly one jump in `[0, t]`:
/// `int_0^t sum_b ||g_ba psi_u||^2 exp(-Lambda(t - u, y_b(u))) du`, with
/// `psi_u` the unnormalized flow and `y_b(u)` the state after jumping to `b`.
pub fn analytic_one_jump_prob(model: &HybridModel, x: &PureHybridState, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(EngineError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let outgoing = model.outgoing(x.sector)?;
    let generator = &model.sector(x.sector)?.generator;
    let mut failure = None;
    let (value, _) = quad::integrate(
        |u| {
            let eval = || -> Result<f64> {
                let psi_u = matrix_exponential(generator, u)? * &x.psi;
                let mut acc = 0.0;
                for (b, g) in &outgoing {
                    let v = *g * &psi_u;
                    let w = v.norm_squared();
                    if w <= 0.0 {
                        continue;
                    }
                    let y = PureHybridState {
                        sector: *b,
                        psi: v.unscale(w.sqrt()),
                    };
                    acc += w * analytic_no_jump_prob(model, &y, t - u)?;
                }
                Ok(acc)
            };
            eval().unwrap_or_else(|e| {
                failure.get_or_insert(e);
                0.0
            })
        },
        0.0,
        t,
        1e-8,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Shared, lazily filled cache of `exp(dt K_a)` keyed by sector class and
/// step. Entries are deterministic functions of their key, so concurrent
/// fills are idempotent.
#[derive(Debug, Default)]
pub struct PropagatorCache {
    entries: RwLock<HashMap<(usize, u64), Arc<ComplexMatrix>>>,
}

impl PropagatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, model: &HybridModel, sector: SectorIndex, dt: f64) -> Result<Arc<ComplexMatrix>> {
        let key = (model.sector_class(sector), dt.to_bits());
        if let Some(m) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(matrix_exponential(&model.sector(sector)?.generator, dt)?);
        let mut guard = self.entries.write().expect("cache lock");
        Ok(Arc::clone(guard.entry(key).or_insert(m)))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Path observables at one sampling time.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPoint {
    pub state: PureHybridState,
    /// `N_t`.
    pub jumps: usize,
    /// `int_0^t lambda(x_s) ds`.
    pub compensator: f64,
}

/// Evaluates the path at ascending `times`, reusing cached propagators for
/// the grid spacing `dt` between consecutive samples inside a segment.
pub fn sample_path(
    log: &EventLog,
    model: &HybridModel,
    times: &[f64],
    dt: f64,
    cache: &PropagatorCache,
) -> Result<Vec<PathPoint>> {
    let mut out = Vec::with_capacity(times.len());
    let mut k = 0usize;
    let mut completed = 0.0;
    let mut seg_time = log.records[0].t;
    let mut seg_rate = 0.0;
    let mut psi = log.records[0].psi.clone();
    let mut fresh = true;
    for &t in times {
        check_time(log, t)?;
        while k + 1 < log.records.len() && log.records[k + 1].t <= t {
            let rec = &log.records[k];
            completed += cumulative_rate(model, &rec.state(), log.records[k + 1].t - rec.t)?;
            k += 1;
            seg_time = log.records[k].t;
            seg_rate = 0.0;
            psi = log.records[k].psi.clone();
            fresh = true;
        }
        let sector = log.records[k].sector;
        let step = t - seg_time;
        if step > 0.0 {
            if !fresh && step == dt {
                let v = &*cache.get(model, sector, dt)? * &psi;
                let norm_sq = v.norm_squared();
                if !(norm_sq >= SURVIVAL_FLOOR) {
                    return Err(EngineError::SurvivalUnderflow { t });
                }
                seg_rate -= norm_sq.ln();
                psi = v.unscale(norm_sq.sqrt());
            } else {
                let current = PureHybridState { sector, psi };
                let (next, rate) = flow_with_rate(model, &current, step)?;
                seg_rate += rate;
                psi = next.psi;
            }
            seg_time = t;
        }
        fresh = false;
        out.push(PathPoint {
            state: PureHybridState {
                sector,
                psi: psi.clone(),
            },
            jumps: k,
            compensator: completed + seg_rate,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::{build_chain, build_model, ChainRule, ChainStep, Coupling};
    use num_complex::Complex64;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn scalar(v: f64) -> ComplexMatrix {
        ComplexMatrix::from_element(1, 1, c(v))
    }

    fn lowering() -> ComplexMatrix {
        ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(0.0), c(1.0), c(0.0)])
    }

    fn telegraph(rate: f64) -> HybridModel {
        build_model(
            vec![scalar(0.0), scalar(0.0)],
            vec![
                Coupling { target: 0, source: 1, matrix: scalar(rate.sqrt()) },
                Coupling { target: 1, source: 0, matrix: scalar(rate.sqrt()) },
            ],
        )
        .unwrap()
    }

    #[test]
    fn steps_follow_the_current_sector_rate() {
        // Sector 1 is absorbing; the huge rate out of sector 0 must not set
        // its step size.
        let model = build_model(
            vec![scalar(0.0), scalar(0.0)],
            vec![Coupling { target: 1, source: 0, matrix: scalar(1e100) }],
        )
        .unwrap();
        let x0 = PureHybridState::basis(&model, 0, 0).unwrap();
        let cfg = TrajectoryConfig { t_max: 1.0, ..TrajectoryConfig::default() };
        let log = simulate_trajectory(&model, &x0, &cfg, 0).unwrap();
        assert_eq!(log.jump_count(), 1);
        assert!(log.records[1].t < 1e-190);
        let absorbed = PureHybridState::basis(&model, 1, 0).unwrap();
        assert_eq!(cumulative_rate(&model, &absorbed, 1e6).unwrap(), 0.0);
    }

    #[test]
    fn excessive_chunk_count_is_reported() {
        // A dark state under a huge rate operator never jumps, but following
        // it would take more chunks than allowed.
        let model = build_model(
            vec![ComplexMatrix::zeros(2, 2), scalar(0.0)],
            vec![Coupling {
                target: 1,
                source: 0,
                matrix: ComplexMatrix::from_row_slice(1, 2, &[c(1e6), c(0.0)]),
            }],
        )
        .unwrap();
        let dark = PureHybridState::basis(&model, 0, 1).unwrap();
        assert!(matches!(cumulative_rate(&model, &dark, 1.0), Err(EngineError::TooStiff { .. })));
        assert!(matches!(sample_jump_time(&model, &dark, 0.5, 1.0, 1e-10), Err(EngineError::TooStiff { .. })));
        assert_eq!(cumulative_rate(&model, &dark, 1e-6).unwrap(), 0.0);
    }

    fn two_channel() -> HybridModel {
        let a = lowering();
        let z2 = ComplexMatrix::zeros(2, 2);
        build_model(
            vec![z2.clone(), z2.clone(), z2],
            vec![
                Coupling { target: 1, source: 0, matrix: a.clone() },
                Coupling { target: 2, source: 0, matrix: a.scale(2f64.sqrt()) },
            ],
        )
        .unwrap()
    }

    #[test]
    fn unnormalized_evolution_basics() {
        let model = telegraph(1.0);
        let psi = ComplexVector::from_element(1, c(1.0));
        assert_eq!(evolve_unnormalized(&model, 0, &psi, 0.0).unwrap(), psi);
        let v = evolve_unnormalized(&model, 0, &psi, 2.0).unwrap();
        assert!((v.norm_squared() - (-2.0f64).exp()).abs() < 1e-14);
        assert_eq!(
            evolve_unnormalized(&model, 0, &psi, -1.0),
            Err(EngineError::NegativeTime(-1.0))
        );
    }

    #[test]
    fn unitary_limit_preserves_norm() {
        let h = ComplexMatrix::from_row_slice(2, 2, &[c(1.0), c(0.3), c(0.3), c(-0.5)]);
        let model = build_model(vec![h], vec![]).unwrap();
        let x = PureHybridState::new(&model, 0, ComplexVector::from_vec(vec![c(0.6), c(0.8)])).unwrap();
        for t in [0.1, 3.0, 100.0] {
            let v = evolve_unnormalized(&model, 0, &x.psi, t).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-10);
            assert_eq!(cumulative_rate(&model, &x, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn flow_is_trivial_without_dynamics() {
        let model = build_model(vec![ComplexMatrix::zeros(2, 2)], vec![]).unwrap();
        let x = PureHybridState::new(&model, 0, ComplexVector::from_vec(vec![c(0.6), c(0.8)])).unwrap();
        assert_eq!(flow(&model, &x, 0.0).unwrap(), x);
        assert_eq!(flow(&model, &x, 12.0).unwrap(), x);
    }

    #[test]
    fn telegraph_cumulative_rate_is_linear() {
        let model = telegraph(1.7);
        let x = PureHybridState::basis(&model, 0, 0).unwrap();
        assert_eq!(cumulative_rate(&model, &x, 0.0).unwrap(), 0.0);
        for t in [0.5, 3.0, 80.0] {
            // long horizons are split into chunks
            assert!((cumulative_rate(&model, &x, t).unwrap() - 1.7 * t).abs() < 1e-12 * t.max(1.0));
        }
    }

    #[test]
    fn telegraph_inverse_cdf() {
        let lambda = 2.0;
        let model = telegraph(lambda);
        let x = PureHybridState::basis(&model, 0, 0).unwrap();
        let p = 1.0 - (-1.0f64).exp();
        let t = sample_jump_time(&model, &x, p, 100.0, 1e-10).unwrap().unwrap();
        assert!((t - 1.0 / lambda).abs() < 1e-10);
        assert_eq!(sample_jump_time(&model, &x, 0.0, 100.0, 1e-10).unwrap(), Some(0.0));
        // beyond the horizon
        assert_eq!(sample_jump_time(&model, &x, 0.999, 1.0, 1e-10).unwrap(), None);
    }

    #[test]
    fn no_jumps_from_the_zero_rate_set() {
        // ground state of an undriven decaying atom never leaves the kernel of Lambda
        let model = build_chain(ChainRule {
            dim: 2,
            hamiltonian: ComplexMatrix::zeros(2, 2),
            steps: vec![ChainStep { offset: 1, matrix: lowering() }],
        })
        .unwrap();
        let ground = PureHybridState::basis(&model, 0, 1).unwrap();
        for p in [1e-9, 0.3, 0.999999] {
            assert_eq!(sample_jump_time(&model, &ground, p, 1e4, 1e-10).unwrap(), None);
        }
    }

    #[test]
    fn jump_distribution_examples() {
        let model = two_channel();
        let excited = PureHybridState::basis(&model, 0, 0).unwrap();
        let dist = jump_distribution(&model, &excited).unwrap();
        let dense = dist.dense(3);
        assert_eq!(dense[0], 0.0);
        assert!((dense[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((dense[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((dist.total() - 1.0).abs() < 1e-12);

        let tel = telegraph(1.0);
        let dist = jump_distribution(&tel, &PureHybridState::basis(&tel, 0, 0).unwrap()).unwrap();
        assert_eq!(dist.entries, vec![(1, 1.0)]);

        let ground = PureHybridState::basis(&model, 0, 1).unwrap();
        assert!(matches!(jump_distribution(&model, &ground), Err(EngineError::ZeroRate { .. })));
    }

    #[test]
    fn target_sampling_inverts_cumulative_sums() {
        let dist = JumpDistribution {
            entries: vec![(1, 1.0 / 3.0), (2, 2.0 / 3.0)],
        };
        assert_eq!(dist.sample(0.1), 1);
        assert_eq!(dist.sample(0.34), 2);
        assert_eq!(dist.sample(0.999999999999999), 2);
        let lossy = JumpDistribution {
            entries: vec![(1, 0.5), (4, 0.5 - 1e-13), (6, 0.0)],
        };
        assert_eq!(lossy.sample(0.99999999999999), 4);
    }

    #[test]
    fn jumps_reset_the_state() {
        let model = two_channel();
        let x = PureHybridState::new(&model, 0, ComplexVector::from_vec(vec![c(0.3), Complex64::new(0.1, 0.9)])).unwrap();
        let y = apply_jump(&model, &x, 1).unwrap();
        assert_eq!(y.sector, 1);
        let expected = ComplexVector::from_vec(vec![c(0.0), c(1.0)]);
        assert!((y.projector() - linalg::projector(&expected)).norm() < 1e-15);
        assert!(matches!(apply_jump(&model, &x, 0), Err(EngineError::InvalidJump { .. })));

        // rank-one projector onto e1
        let proj = ComplexMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)]);
        let z2 = ComplexMatrix::zeros(2, 2);
        let pm = build_model(vec![z2.clone(), z2], vec![Coupling { target: 1, source: 0, matrix: proj }]).unwrap();
        let s = 0.5f64.sqrt();
        let x = PureHybridState::new(&pm, 0, ComplexVector::from_vec(vec![c(s), c(s)])).unwrap();
        let y = apply_jump(&pm, &x, 1).unwrap();
        assert!((y.psi[0] - c(1.0)).norm() < 1e-15 && y.psi[1].norm() < 1e-15);

        // unitary coupling
        let u = ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let um = build_model(
            vec![ComplexMatrix::zeros(2, 2), ComplexMatrix::zeros(2, 2)],
            vec![Coupling { target: 1, source: 0, matrix: u.clone() }],
        )
        .unwrap();
        let x = PureHybridState::new(&um, 0, ComplexVector::from_vec(vec![c(0.6), c(0.8)])).unwrap();
        let y = apply_jump(&um, &x, 1).unwrap();
        assert!((y.psi - &u * &x.psi).norm() < 1e-15);
    }

    #[test]
    fn trajectories_without_couplings_have_no_events() {
        let model = build_model(vec![ComplexMatrix::identity(2, 2)], vec![]).unwrap();
        let x = PureHybridState::basis(&model, 0, 0).unwrap();
        let cfg = TrajectoryConfig { t_max: 7.0, ..Default::default() };
        let log = simulate_trajectory(&model, &x, &cfg, 0).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.t_end, 7.0);
        assert_eq!(counting_process(&log, 7.0), 0);
        let mid = state_at(&log, &model, 3.0).unwrap();
        assert!((mid.projector() - x.projector()).norm() < 1e-14);
    }

    #[test]
    fn telegraph_waiting_times_are_exponential() {
        let model = telegraph(1.0);
        let x = PureHybridState::basis(&model, 0, 0).unwrap();
        let cfg = TrajectoryConfig { t_max: 1e4, seed: 99, ..Default::default() };
        let log = simulate_trajectory(&model, &x, &cfg, 0).unwrap();
        let times: Vec<f64> = log.records.iter().map(|r| r.t).collect();
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let n = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / n;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() <= 3.0 * var.sqrt() / n.sqrt(), "mean {mean}");
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        // sectors alternate
        assert!(log.records.windows(2).all(|w| w[0].sector != w[1].sector));
    }

    #[test]
    fn event_cap_truncates_the_log() {
        let model = telegraph(5.0);
        let x = PureHybridState::basis(&model, 0, 0).unwrap();
        let cfg = TrajectoryConfig { t_max: 1e3, max_events: 4, ..Default::default() };
        let log = simulate_trajectory(&model, &x, &cfg, 3).unwrap();
        assert_eq!(log.jump_count(), 4);
        assert_eq!(log.t_end, log.records[4].t);
    }

    fn fixed_log() -> (HybridModel, EventLog) {
        let model = telegraph(1.0);
        let one = ComplexVector::from_element(1, c(1.0));
        let log = EventLog {
            model_id: model.digest().into(),
            master_seed: 0,
            trajectory_index: 0,
            records: vec![
                EventRecord { n: 0, t: 0.0, sector: 0, psi: one.clone() },
                EventRecord { n: 1, t: 0.5, sector: 1, psi: one.clone() },
                EventRecord { n: 2, t: 1.5, sector: 0, psi: one },
            ],
            t_end: 3.0,
        };
        (model, log)
    }

    #[test]
    fn counting_and_states_on_a_fixed_log() {
        let (model, log) = fixed_log();
        assert_eq!(counting_process(&log, 0.2), 0);
        assert_eq!(counting_process(&log, 1.0), 1);
        assert_eq!(counting_process(&log, 3.0), 2);
        // right continuity at the jump time
        assert_eq!(state_at(&log, &model, 0.5).unwrap().sector, 1);
        assert_eq!(state_at(&log, &model, 0.4999).unwrap().sector, 0);
        assert!(matches!(state_at(&log, &model, 3.5), Err(EngineError::TimeOutOfRange { .. })));
        assert!((compensator(&log, &model, 2.0).unwrap() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn sampled_path_matches_pointwise_evaluation() {
        let mut rng = trajectory_rng(1, 2);
        let model = crate::model::random_model(&mut rng, 3, 3, 1.0);
        let x = PureHybridState::new(&model, 0, crate::model::random_unit_vector(&mut rng, model.dim(0).unwrap())).unwrap();
        let cfg = TrajectoryConfig { t_max: 5.0, seed: 4, ..Default::default() };
        let log = simulate_trajectory(&model, &x, &cfg, 0).unwrap();
        let dt = 0.05;
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * dt).collect();
        let cache = PropagatorCache::new();
        let path = sample_path(&log, &model, &times, dt, &cache).unwrap();
        for (pt, &t) in path.iter().zip(&times) {
            let direct = state_at(&log, &model, t).unwrap();
            assert_eq!(pt.state.sector, direct.sector);
            assert!((pt.state.projector() - direct.projector()).norm() < 1e-11);
            assert_eq!(pt.jumps, counting_process(&log, t));
            assert!((pt.compensator - compensator(&log, &model, t).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn one_jump_probability_for_constant_rate() {
        let lambda = 0.8;
        let model = telegraph(lambda);
        let x = PureHybridState::basis(&model, 0, 0).unwrap();
        assert_eq!(analytic_no_jump_prob(&model, &x, 0.0).unwrap(), 1.0);
        assert_eq!(analytic_one_jump_prob(&model, &x, 0.0).unwrap(), 0.0);
        for t in [0.3, 1.0, 4.0] {
            let none = analytic_no_jump_prob(&model, &x, t).unwrap();
            let one = analytic_one_jump_prob(&model, &x, t).unwrap();
            assert!((none - (-lambda * t).exp()).abs() < 1e-13);
            assert!((one - lambda * t * (-lambda * t).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn propagator_cache_is_idempotent() {
        let model = telegraph(1.0);
        let cache = PropagatorCache::new();
        let a = cache.get(&model, 0, 0.1).unwrap();
        let b = cache.get(&model, 0, 0.1).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn open_uniform_stays_inside() {
        let mut rng = trajectory_rng(0, 0);
        for _ in 0..1000 {
            let u = open_uniform(&mut rng);
            assert!(u > 0.0 && u < 1.0);
        }
        assert_ne!(open_uniform(&mut trajectory_rng(0, 0)), open_uniform(&mut trajectory_rng(0, 1)));
    }
}
