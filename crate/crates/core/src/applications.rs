//! Worked models and inference along an observed classical record.
//!
//! The telegraph model switches between two one-dimensional sectors at a
//! constant rate. The fluorescence model is a driven two-level atom whose
//! sector index counts emitted photons: `H = -(Omega/2) sigma_x` and
//! `g_{n+1,n} = sqrt(gamma) A` with `A = [[0,0],[1,0]]`. Basis index 0 is the
//! excited level, index 1 the ground level `psi_0`.

use num_complex::Complex64;
use thiserror::Error;

use crate::engine::{self, EngineError};
use crate::linalg::{matrix_exponential, ComplexMatrix, ComplexVector, LinalgError};
use crate::model::{
    build_chain, build_model, ChainRule, ChainStep, Coupling, HybridModel, ModelError, PureHybridState, SectorIndex,
};
use crate::quad;

/// Tail mass left unintegrated by [`next_jump_distribution`].
pub const NEXT_JUMP_TAIL: f64 = 1e-10;
/// Self-convergence target for the count convolution mesh.
pub const COUNT_MESH_TOL: f64 = 1e-6;
/// Largest mesh the count convolution will refine to.
const MAX_MESH_STEPS: usize = 1 << 17;
/// Tail bound for truncated Laplace transforms.
const LAPLACE_TAIL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApplicationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("closed form requires omega > gamma/2 (gamma = {gamma}, omega = {omega})")]
    Overdamped { gamma: f64, omega: f64 },
    #[error("invalid history: {0}")]
    InvalidHistory(String),
    #[error("history step {step} ({origin} -> {target}) has zero probability")]
    InconsistentHistory {
        step: usize,
        origin: SectorIndex,
        target: SectorIndex,
    },
    #[error("no candidates")]
    NoCandidates,
    #[error("candidate {index} starts in sector {found}, history starts in {expected}")]
    CandidateSector {
        index: usize,
        expected: SectorIndex,
        found: SectorIndex,
    },
    #[error("every candidate assigns zero likelihood to the history")]
    ZeroLikelihood,
}

pub type Result<T> = std::result::Result<T, ApplicationError>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Builds the two-sector switching model with rate `lambda`.
pub fn build_telegraph(lambda: f64) -> Result<HybridModel> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(ApplicationError::InvalidParams(format!("rate {lambda} must be positive")));
    }
    let g = ComplexMatrix::from_element(1, 1, c(lambda.sqrt()));
    let h = ComplexMatrix::zeros(1, 1);
    Ok(build_model(
        vec![h.clone(), h],
        vec![
            Coupling {
                target: 1,
                source: 0,
                matrix: g.clone(),
            },
            Coupling {
                target: 0,
                source: 1,
                matrix: g,
            },
        ],
    )?)
}

/// Occupation of the starting sector of the telegraph model at time `t`.
pub fn telegraph_occupation(lambda: f64, t: f64) -> f64 {
    0.5 * (1.0 + (-2.0 * lambda * t).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluorescenceParams {
    pub gamma: f64,
    pub omega: f64,
}

impl FluorescenceParams {
    pub fn new(gamma: f64, omega: f64) -> Result<Self> {
        let p = FluorescenceParams { gamma, omega };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(ApplicationError::InvalidParams(format!("gamma {} must be positive", self.gamma)));
        }
        if !self.omega.is_finite() {
            return Err(ApplicationError::InvalidParams(format!("omega {} must be finite", self.omega)));
        }
        Ok(())
    }

    /// `sqrt(omega^2 - (gamma/2)^2)`, or `None` outside the underdamped branch.
    pub fn mu(&self) -> Option<f64> {
        let d = self.omega * self.omega - 0.25 * self.gamma * self.gamma;
        (self.omega > 0.5 * self.gamma && d > 0.0).then(|| d.sqrt())
    }

    /// Angular frequency of the damped oscillation of `exp(tK)`, equal to
    /// `mu / 2`.
    pub fn oscillation_frequency(&self) -> Option<f64> {
        self.mu().map(|m| 0.5 * m)
    }

    pub fn hamiltonian(&self) -> ComplexMatrix {
        let h = -0.5 * self.omega;
        ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(h), c(h), c(0.0)])
    }

    /// `sqrt(gamma) A`.
    pub fn coupling(&self) -> ComplexMatrix {
        ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(0.0), c(self.gamma.sqrt()), c(0.0)])
    }

    /// `K = -i H - (gamma/2) A*A`.
    pub fn generator(&self) -> ComplexMatrix {
        let mut k = self.hamiltonian() * Complex64::new(0.0, -1.0);
        k[(0, 0)] -= c(0.5 * self.gamma);
        k
    }
}

pub fn excited_state() -> ComplexVector {
    ComplexVector::from_vec(vec![c(1.0), c(0.0)])
}

pub fn ground_state() -> ComplexVector {
    ComplexVector::from_vec(vec![c(0.0), c(1.0)])
}

/// Fluorescence model. `None` gives the unbounded photon-count chain;
/// `Some(n)` keeps sectors `0..=n`, with sector `n` absorbing.
pub fn build_fluorescence(params: FluorescenceParams, n_max: Option<usize>) -> Result<HybridModel> {
    params.validate()?;
    let h = params.hamiltonian();
    let g = params.coupling();
    match n_max {
        None => Ok(build_chain(ChainRule {
            dim: 2,
            hamiltonian: h,
            steps: vec![ChainStep { offset: 1, matrix: g }],
        })?),
        Some(n) => {
            let couplings = (0..n)
                .map(|k| Coupling {
                    target: k + 1,
                    source: k,
                    matrix: g.clone(),
                })
                .collect();
            Ok(build_model(vec![h; n + 1], couplings)?)
        }
    }
}

/// Closed-form `exp(tK)` on the underdamped branch, with `nu = mu/2`:
/// `exp(-gamma t/4) [[cos - (gamma/4nu) sin, i(omega/2nu) sin],
/// [i(omega/2nu) sin, cos + (gamma/4nu) sin]]` at argument `nu t`.
pub fn closed_form_propagator(params: FluorescenceParams, t: f64) -> Result<ComplexMatrix> {
    params.validate()?;
    let nu = params.oscillation_frequency().ok_or(ApplicationError::Overdamped {
        gamma: params.gamma,
        omega: params.omega,
    })?;
    let (s, co) = (nu * t).sin_cos();
    let damp = (-0.25 * params.gamma * t).exp();
    let d = params.gamma / (4.0 * nu) * s;
    let off = Complex64::new(0.0, params.omega / (2.0 * nu) * s) * damp;
    Ok(ComplexMatrix::from_row_slice(
        2,
        2,
        &[c((co - d) * damp), off, off, c((co + d) * damp)],
    ))
}

/// `exp(tK)`: closed form when available, matrix exponential otherwise.
pub fn fluorescence_propagator(params: FluorescenceParams, t: f64) -> Result<ComplexMatrix> {
    match closed_form_propagator(params, t) {
        Err(ApplicationError::Overdamped { .. }) => Ok(matrix_exponential(&params.generator(), t)?),
        other => other,
    }
}

/// `p_0(t) = ||exp(tK) psi_0||^2`, the probability of no photon by `t`.
pub fn fluorescence_survival(params: FluorescenceParams, t: f64) -> Result<f64> {
    let u = fluorescence_propagator(params, t)?;
    Ok((u * ground_state()).norm_squared())
}

/// `f(t) = gamma ||A exp(tK) psi_0||^2`, the density of the delay between
/// consecutive photons.
pub fn waiting_time_density(params: FluorescenceParams, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(EngineError::NegativeTime(t).into());
    }
    let u = fluorescence_propagator(params, t)?;
    Ok((params.coupling() * (u * ground_state())).norm_squared())
}

fn count_mesh_step(params: FluorescenceParams) -> f64 {
    let decay = 0.01 / params.gamma;
    match params.mu() {
        Some(mu) => decay.min(std::f64::consts::PI / (20.0 * mu)),
        None if params.omega != 0.0 => decay.min(std::f64::consts::PI / (20.0 * params.omega.abs())),
        None => decay,
    }
}

/// `p_n(t_k)` for `n = 0..=n_max` on the mesh `t_k = k t_end / steps`,
/// `values[n][k]`. Convolutions use the trapezoid rule.
pub fn count_series(params: FluorescenceParams, t_end: f64, n_max: usize, steps: usize) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(ApplicationError::InvalidParams(format!("horizon {t_end} must be nonnegative")));
    }
    let steps = steps.max(1);
    let h = t_end / steps as f64;
    let mut survival = Vec::with_capacity(steps + 1);
    let mut density = Vec::with_capacity(steps + 1);
    let g = params.coupling();
    for k in 0..=steps {
        let v = fluorescence_propagator(params, k as f64 * h)? * ground_state();
        survival.push(v.norm_squared());
        density.push((&g * v).norm_squared());
    }
    let mut values = vec![survival];
    for n in 0..n_max {
        let prev = &values[n];
        let next: Vec<f64> = (0..=steps)
            .map(|k| {
                if k == 0 {
                    return 0.0;
                }
                let mut acc = 0.5 * (density[0] * prev[k] + density[k] * prev[0]);
                for j in 1..k {
                    acc += density[j] * prev[k - j];
                }
                (h * acc).max(0.0)
            })
            .collect();
        values.push(next);
    }
    Ok(values)
}

/// Count series on a mesh refined until halving the step changes no value
/// by more than [`COUNT_MESH_TOL`].
#[derive(Clone, Debug, PartialEq)]
pub struct CountSeries {
    pub step: f64,
    pub values: Vec<Vec<f64>>,
    pub self_convergence: f64,
}

impl CountSeries {
    /// `p_n` at the mesh end.
    pub fn last(&self) -> Vec<f64> {
        self.values.iter().map(|v| *v.last().unwrap_or(&0.0)).collect()
    }
}

pub fn converged_count_series(params: FluorescenceParams, t_end: f64, n_max: usize) -> Result<CountSeries> {
    params.validate()?;
    let mut steps = ((t_end / count_mesh_step(params)).ceil() as usize).max(1);
    let mut coarse = count_series(params, t_end, n_max, steps)?;
    loop {
        let fine = count_series(params, t_end, n_max, 2 * steps)?;
        let mut diff: f64 = 0.0;
        for (cv, fv) in coarse.iter().zip(&fine) {
            for (k, x) in cv.iter().enumerate() {
                diff = diff.max((x - fv[2 * k]).abs());
            }
        }
        steps *= 2;
        if diff < COUNT_MESH_TOL || 2 * steps > MAX_MESH_STEPS {
            return Ok(CountSeries {
                step: t_end / steps as f64,
                values: fine,
                self_convergence: diff,
            });
        }
        coarse = fine;
    }
}

/// `p_n(t)` for `n = 0..=n_max`: the probability of exactly `n` photons by
/// `t` starting from the ground state, as iterated convolutions
/// `p_0 * f * ... * f`.
pub fn photon_count_probs(params: FluorescenceParams, t: f64, n_max: usize) -> Result<Vec<f64>> {
    if t == 0.0 {
        let mut out = vec![0.0; n_max + 1];
        out[0] = 1.0;
        return Ok(out);
    }
    Ok(converged_count_series(params, t, n_max)?.last())
}

fn laplace_horizon(lambdas: &[f64]) -> Result<f64> {
    let mut horizon: f64 = 0.0;
    for &l in lambdas {
        if !(l > 0.0) || !l.is_finite() {
            return Err(ApplicationError::InvalidParams(format!("Laplace variable {l} must be positive")));
        }
        horizon = horizon.max((1.0 / (LAPLACE_TAIL * l)).ln().max(1.0) / l);
    }
    Ok(horizon)
}

fn trapezoid_laplace(values: &[f64], step: f64, lambda: f64) -> f64 {
    let last = values.len() - 1;
    let mut acc = 0.0;
    for (k, v) in values.iter().enumerate() {
        let w = if k == 0 || k == last { 0.5 } else { 1.0 };
        acc += w * v * (-lambda * k as f64 * step).exp();
    }
    acc * step
}

fn laplace_deviation_of(params: FluorescenceParams, lambdas: &[f64], series: &[Vec<f64>], step: f64, horizon: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &l in lambdas {
        let mut err = None;
        let (p0_hat, _) = quad::integrate(
            |s| match fluorescence_survival(params, s) {
                Ok(v) => v * (-l * s).exp(),
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            0.0,
            horizon,
            1e-13,
        );
        let (f_hat, _) = quad::integrate(
            |s| match waiting_time_density(params, s) {
                Ok(v) => v * (-l * s).exp(),
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            0.0,
            horizon,
            1e-13,
        );
        if let Some(e) = err {
            return Err(e);
        }
        for (n, values) in series.iter().enumerate().skip(1) {
            let pn_hat = trapezoid_laplace(values, step, l);
            worst = worst.max((pn_hat - p0_hat * f_hat.powi(n as i32)).abs());
        }
    }
    Ok(worst)
}

/// `max |p_n^(lambda) - p_0^(lambda) f^(lambda)^n|` over `n = 1..=3` and the
/// given Laplace variables, with `p_n` from a convolution mesh of `steps`
/// intervals and `p_0^`, `f^` by adaptive quadrature.
pub fn laplace_identity_deviation(params: FluorescenceParams, lambdas: &[f64], steps: usize) -> Result<f64> {
    let horizon = laplace_horizon(lambdas)?;
    let steps = steps.max(1);
    let series = count_series(params, horizon, 3, steps)?;
    laplace_deviation_of(params, lambdas, &series, horizon / steps as f64, horizon)
}

/// As [`laplace_identity_deviation`], on the self-converged mesh.
pub fn laplace_identity_check(params: FluorescenceParams, lambdas: &[f64]) -> Result<f64> {
    let horizon = laplace_horizon(lambdas)?;
    let series = converged_count_series(params, horizon, 3)?;
    laplace_deviation_of(params, lambdas, &series.values, series.step, horizon)
}

/// Observed classical record `(t_k, a_k)` with `t_0 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalHistory {
    events: Vec<(f64, SectorIndex)>,
}

impl ClassicalHistory {
    pub fn new(events: Vec<(f64, SectorIndex)>) -> Result<Self> {
        match events.first() {
            None => return Err(ApplicationError::InvalidHistory("empty history".into())),
            Some(&(t0, _)) if t0 != 0.0 => {
                return Err(ApplicationError::InvalidHistory(format!("first time {t0} is not 0")))
            }
            _ => {}
        }
        for (k, w) in events.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) || !w[1].0.is_finite() {
                return Err(ApplicationError::InvalidHistory(format!(
                    "time {} at step {} does not exceed {}",
                    w[1].0,
                    k + 1,
                    w[0].0
                )));
            }
        }
        Ok(ClassicalHistory { events })
    }

    /// History with no jumps, starting in `sector`.
    pub fn start(sector: SectorIndex) -> Self {
        ClassicalHistory {
            events: vec![(0.0, sector)],
        }
    }

    pub fn events(&self) -> &[(f64, SectorIndex)] {
        &self.events
    }

    pub fn initial_sector(&self) -> SectorIndex {
        self.events[0].1
    }

    pub fn last(&self) -> (f64, SectorIndex) {
        *self.events.last().expect("history is nonempty")
    }
}

/// Post-jump states along the history, together with the log-likelihood
/// `sum_k ln ||g_{a_k a_{k-1}} exp((t_k - t_{k-1}) K) psi_{k-1}||^2`, i.e.
/// the log of the joint density of the recorded jump times and targets.
fn replay(model: &HybridModel, x0: &PureHybridState, history: &ClassicalHistory) -> Result<(PureHybridState, f64)> {
    if x0.sector != history.initial_sector() {
        return Err(ApplicationError::CandidateSector {
            index: 0,
            expected: history.initial_sector(),
            found: x0.sector,
        });
    }
    let mut x = x0.clone();
    let mut log_lik = 0.0;
    for (step, w) in history.events().windows(2).enumerate() {
        let (t_prev, _) = w[0];
        let (t_k, target) = w[1];
        let inconsistent = ApplicationError::InconsistentHistory {
            step: step + 1,
            origin: x.sector,
            target,
        };
        let v = engine::evolve_unnormalized(model, x.sector, &x.psi, t_k - t_prev)?;
        let g = model.coupling(target, x.sector).ok_or(inconsistent.clone())?;
        let image = g * v;
        let weight = image.norm_squared();
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(inconsistent);
        }
        log_lik += weight.ln();
        x = PureHybridState {
            sector: target,
            psi: image.unscale(weight.sqrt()),
        };
    }
    Ok((x, log_lik))
}

/// Probability of each target sector for the next jump, given the initial
/// state, the observed history, and no further jump in `(t_k, t]`.
/// `t = t_k` conditions on the history alone. Entries sum to the probability
/// that a further jump ever occurs.
pub fn next_jump_distribution(
    model: &HybridModel,
    x0: &PureHybridState,
    history: &ClassicalHistory,
    t: f64,
) -> Result<engine::JumpDistribution> {
    let (t_k, _) = history.last();
    if !(t >= t_k) {
        return Err(ApplicationError::InvalidHistory(format!(
            "time {t} precedes the last event at {t_k}"
        )));
    }
    let (x_k, _) = replay(model, x0, history)?;
    let x = engine::flow(model, &x_k, t - t_k)?;
    let outgoing = model.outgoing(x.sector)?;
    let mut entries: Vec<(SectorIndex, f64)> = outgoing.iter().map(|(b, _)| (*b, 0.0)).collect();
    let rate = model.rate_bound();
    if entries.is_empty() || rate <= 0.0 {
        return Ok(engine::JumpDistribution { entries });
    }
    let generator = &model.sector(x.sector)?.generator;
    let mut psi = x.psi.clone();
    let mut weight = 1.0;
    let mut width = 1.0 / rate;
    for _ in 0..48 {
        for (entry, (_, g)) in entries.iter_mut().zip(&outgoing) {
            let mut err = None;
            let (v, _) = quad::integrate(
                |s| match matrix_exponential(generator, s) {
                    Ok(u) => (*g * (u * &psi)).norm_squared(),
                    Err(e) => {
                        err.get_or_insert(e);
                        0.0
                    }
                },
                0.0,
                width,
                1e-13,
            );
            if let Some(e) = err {
                return Err(e.into());
            }
            entry.1 += weight * v;
        }
        let v = matrix_exponential(generator, width)? * &psi;
        let s = v.norm_squared();
        weight *= s;
        if weight < NEXT_JUMP_TAIL || !(s > 0.0) {
            break;
        }
        psi = v.unscale(s.sqrt());
        width *= 2.0;
    }
    Ok(engine::JumpDistribution { entries })
}

/// Normalized likelihoods of the observed history under each candidate
/// initial state. The likelihood is the product over recorded jumps of the
/// waiting-time density and the branching probability into the recorded
/// sector, both along the candidate's reconstructed path.
pub fn discriminate_initial_state(
    model: &HybridModel,
    candidates: &[PureHybridState],
    history: &ClassicalHistory,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(ApplicationError::NoCandidates);
    }
    let mut logs = Vec::with_capacity(candidates.len());
    for (index, x0) in candidates.iter().enumerate() {
        if x0.sector != history.initial_sector() {
            return Err(ApplicationError::CandidateSector {
                index,
                expected: history.initial_sector(),
                found: x0.sector,
            });
        }
        match replay(model, x0, history) {
            Ok((_, l)) => logs.push(l),
            Err(ApplicationError::InconsistentHistory { .. }) => logs.push(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(ApplicationError::ZeroLikelihood);
    }
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}
