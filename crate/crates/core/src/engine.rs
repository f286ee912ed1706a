//! Trajectory engine: the split Hamiltonian/jump step on circuits, the
//! splitting-parameter optimiser and the ensemble runner.

use std::str::FromStr;

use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{jump_block, lower_to_native, trotter_step, Circuit, SpinBasis};
use crate::error::{Error, Result};
use crate::noise::{noisy_execute, NoiseConfig};
use crate::operators::{sum_ldagl, LindbladDescriptor, Model, Observable, OperatorSum};
use crate::rng::{stream, Purpose};
use crate::statevector::QuantumState;

/// How the splitting parameter is chosen along a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum XMode {
    Constant(f64),
    /// Optimised once on the initial state and held fixed.
    #[default]
    Initial,
    /// Re-optimised on each trajectory's own state before every step.
    Adaptive,
}

impl FromStr for XMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "initial" => Ok(Self::Initial),
            "adaptive" => Ok(Self::Adaptive),
            _ => {
                let v = s
                    .strip_prefix("const:")
                    .ok_or_else(|| Error::InvalidConfig(format!("x mode `{s}`: expected const:<v>, initial or adaptive")))?;
                let x: f64 = v.parse().map_err(|_| Error::InvalidConfig(format!("bad constant x `{v}`")))?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::InvalidConfig(format!("x = {x} outside [0, 1]")));
                }
                Ok(Self::Constant(x))
            }
        }
    }
}

impl std::fmt::Display for XMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(x) => write!(f, "const:{x}"),
            Self::Initial => f.write_str("initial"),
            Self::Adaptive => f.write_str("adaptive"),
        }
    }
}

/// Initial register of every trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    /// Every site up (`|0...0>`).
    #[default]
    AllUp,
    /// Every site down.
    AllDown,
    /// Computational basis state of the system register.
    Basis(usize),
}

impl InitialState {
    pub fn prepare(&self, n_sites: usize) -> Result<QuantumState> {
        let index = match *self {
            Self::AllUp => 0,
            Self::AllDown => (1usize << n_sites) - 1,
            Self::Basis(i) => i,
        };
        if index >= 1usize << n_sites {
            return Err(Error::InvalidConfig(format!("initial basis index {index} out of range")));
        }
        let mut s = QuantumState::basis(n_sites + 1, index)?;
        s.set_ancilla_highest();
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub n_traj: usize,
    pub master_seed: u64,
    pub x_mode: XMode,
    /// Estimate observables from this many computational-basis shots
    /// instead of exact expectation values.
    pub shots: Option<usize>,
    /// Names of model observables to record; empty records all of them.
    pub observables: Vec<String>,
    pub initial: InitialState,
    pub noise: Option<NoiseConfig>,
    /// Number of equal trajectory groups whose means give the outer error bar.
    pub repeats: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            n_steps: 100,
            n_traj: 1000,
            master_seed: 1,
            x_mode: XMode::Initial,
            shots: None,
            observables: Vec::new(),
            initial: InitialState::AllUp,
            noise: None,
            repeats: 1,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self, model: &Model) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidConfig("n_traj must be >= 1".into()));
        }
        if self.repeats == 0 || self.repeats > self.n_traj {
            return Err(Error::InvalidConfig(format!("repeats = {} must be in 1..=n_traj", self.repeats)));
        }
        if self.shots == Some(0) {
            return Err(Error::InvalidConfig("shots must be >= 1".into()));
        }
        let p = model.max_rate() * self.dt;
        if p > 1.0 {
            return Err(Error::RateTooLarge(p));
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }

    /// The observables this run records, in model order unless listed.
    pub fn resolve_observables<'m>(&self, model: &'m Model) -> Result<Vec<&'m Observable>> {
        if self.observables.is_empty() {
            return Ok(model.observables.iter().collect());
        }
        self.observables
            .iter()
            .map(|name| {
                model
                    .observable(name)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown observable `{name}`")))
            })
            .collect()
    }
}

/// Minimiser of the second-order step error over `x in [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XOptimum {
    pub x: f64,
    /// Objective value at `x`.
    pub objective: f64,
    /// The objective does not depend on `x`; `x` is then 0.5.
    pub degenerate: bool,
    /// Coefficients `c0..c4` of the quartic objective.
    pub coefficients: [f64; 5],
}

fn cdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn real_cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let scale = [a, b, c, d].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let (a, b, c, d) = (a / scale, b / scale, c / scale, d / scale);
    let mut roots = Vec::new();
    if a.abs() < 1e-14 {
        if b.abs() < 1e-14 {
            if c.abs() > 1e-14 {
                roots.push(-d / c);
            }
        } else {
            let disc = c * c - 4.0 * b * d;
            if disc >= 0.0 {
                let q = -0.5 * (c + c.signum() * disc.sqrt());
                if q != 0.0 {
                    roots.push(q / b);
                    roots.push(d / q);
                } else {
                    roots.push(0.0);
                }
            }
        }
    } else {
        // depressed cubic t^3 + p t + q with x = t - b / 3a
        let (b, c, d) = (b / a, c / a, d / a);
        let p = c - b * b / 3.0;
        let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
        let shift = -b / 3.0;
        let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
        if disc > 0.0 {
            let s = disc.sqrt();
            roots.push((-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift);
        } else if p.abs() < 1e-300 {
            roots.push(shift);
        } else {
            let r = 2.0 * (-p / 3.0).sqrt();
            let phi = (3.0 * q / (p * r)).clamp(-1.0, 1.0).acos() / 3.0;
            for k in 0..3 {
                roots.push(r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift);
            }
        }
        // Newton polish on the monic form
        for x in roots.iter_mut() {
            for _ in 0..3 {
                let f = ((*x + b) * *x + c) * *x + d;
                let df = (3.0 * *x + 2.0 * b) * *x + c;
                if df.abs() > 1e-300 {
                    *x -= f / df;
                }
            }
        }
    }
    roots
}

/// Minimises `|| (-f/2) H^2 psi + (i/2) H (S - <S>) psi - (i/2) x [H, S] psi ||^2`
/// over `x in [0, 1]`, where `f = 1 - 2x + 2x^2` and `S = sum L^dag L`.
///
/// The objective is a quartic in `x`; its critical points come from the
/// cubic derivative and are compared with the endpoints. Ties go to the
/// candidate nearest 0.5.
pub fn optimise_x(h: &OperatorSum, lindblads: &[LindbladDescriptor], state: &QuantumState) -> Result<XOptimum> {
    let degenerate = |objective: f64, coefficients: [f64; 5]| XOptimum { x: 0.5, objective, degenerate: true, coefficients };
    let norm = state.norm_sqr();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::CorruptedState(format!("optimise_x needs a normalised state, norm^2 = {norm}")));
    }
    if h.is_empty() {
        return Ok(degenerate(0.0, [0.0; 5]));
    }
    let psi = state.amplitudes();
    let s_op = sum_ldagl(lindblads);
    let h_psi = h.apply_vec(psi)?;
    let v1 = h.apply_vec(&h_psi)?;
    let s_psi = s_op.apply_vec(psi)?;
    let s_mean = cdot(psi, &s_psi).re;
    let centred: Vec<C64> = s_psi.iter().zip(psi).map(|(s, p)| s - p * s_mean).collect();
    let v2 = h.apply_vec(&centred)?;
    let hs = h.apply_vec(&s_psi)?;
    let sh = s_op.apply_vec(&h_psi)?;
    let v3: Vec<C64> = hs.iter().zip(&sh).map(|(a, b)| a - b).collect();

    let half_i = C64::new(0.0, 0.5);
    let u1: Vec<C64> = v1.iter().map(|v| v * -0.5).collect();
    let u2: Vec<C64> = v2.iter().map(|v| v * half_i).collect();
    let u3: Vec<C64> = v3.iter().map(|v| v * -half_i).collect();
    let g = |a: &[C64], b: &[C64]| cdot(a, b).re;
    let (g11, g22, g33) = (g(&u1, &u1), g(&u2, &u2), g(&u3, &u3));
    let (a12, a13, a23) = (g(&u1, &u2), g(&u1, &u3), g(&u2, &u3));

    let c4 = 4.0 * g11;
    let c3 = -8.0 * g11 + 4.0 * a13;
    let c2 = 8.0 * g11 - 4.0 * a13 + g33 + 4.0 * a12;
    let c1 = -4.0 * g11 + 2.0 * a13 - 4.0 * a12 + 2.0 * a23;
    let c0 = g11 + 2.0 * a12 + g22;
    let coefficients = [c0, c1, c2, c3, c4];
    let objective = |x: f64| (((c4 * x + c3) * x + c2) * x + c1) * x + c0;

    let scale = coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 || [c1, c2, c3, c4].iter().all(|c| c.abs() <= 1e-14 * scale) {
        return Ok(degenerate(c0, coefficients));
    }
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(
        real_cubic_roots(4.0 * c4, 3.0 * c3, 2.0 * c2, c1)
            .into_iter()
            .filter(|x| x.is_finite() && (0.0..=1.0).contains(x)),
    );
    let tie = 1e-14 * scale;
    let mut best = candidates[0];
    for &x in &candidates[1..] {
        let (fx, fb) = (objective(x), objective(best));
        if fx < fb - tie || ((fx - fb).abs() <= tie && (x - 0.5).abs() < (best - 0.5).abs()) {
            best = x;
        }
    }
    Ok(XOptimum { x: best, objective: objective(best), degenerate: false, coefficients })
}

/// Builds the circuits of one step for a model at fixed `dt`.
#[derive(Clone, Debug)]
pub struct StepBuilder {
    n_sites: usize,
    h: OperatorSum,
    dt: f64,
    jumps: Circuit,
    lower: bool,
}

impl StepBuilder {
    /// `lower` selects native-gate output, which noisy execution needs.
    pub fn new(model: &Model, dt: f64, basis: SpinBasis, lower: bool) -> Result<Self> {
        let n = model.n_sites();
        let mut jumps = Circuit::new(n + 1);
        // append offsets slots, so block d measures into slot d
        for ld in &model.lindblads {
            jumps.append(&jump_block(ld, dt, n, n + 1, 0, basis)?)?;
        }
        debug_assert_eq!(jumps.n_slots(), model.lindblads.len());
        Ok(Self { n_sites: n, h: model.h.clone(), dt, jumps, lower })
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.n_slots()
    }

    /// `U((1-x) dt) J U(x dt)` in time order `U(x dt)`, jumps, `U((1-x) dt)`.
    pub fn circuit(&self, x: f64) -> Result<Circuit> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidConfig(format!("x = {x} outside [0, 1]")));
        }
        let n = self.n_sites;
        let mut c = Circuit::new(n + 1);
        c.append(&trotter_step(&self.h, x * self.dt, n)?.widened(n + 1)?)?;
        c.append(&self.jumps)?;
        c.append(&trotter_step(&self.h, (1.0 - x) * self.dt, n)?.widened(n + 1)?)?;
        Ok(if self.lower { lower_to_native(&c) } else { c })
    }
}

/// One step on `state`; returns the jump record (one dN per descriptor).
///
/// With `noise`, the circuit must be native and gate errors are drawn from
/// `noise_rng`.
pub fn msse_step<R: Rng + ?Sized>(
    state: &mut QuantumState,
    circuit: &Circuit,
    rng: &mut R,
    noise: Option<(&NoiseConfig, &mut dyn rand::RngCore)>,
) -> Result<Vec<u8>> {
    let anc = state
        .ancilla()
        .ok_or_else(|| Error::InvalidConfig("step needs a register with an ancilla".into()))?;
    let p1 = state.prob_one(anc)?;
    if p1 > 1e-10 {
        return Err(Error::CorruptedState(format!("ancilla not in |0> at step entry (p1 = {p1:.3e})")));
    }
    let slots = match noise {
        Some((cfg, noise_rng)) => noisy_execute(circuit, state, cfg, rng, noise_rng)?,
        None => circuit.execute(state, rng)?,
    };
    let norm = state.norm_sqr();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::Numerical(format!("norm drifted to {norm} within a step")));
    }
    state.renormalize()?;
    Ok(slots)
}

/// Every measurement record of one step with its probability and
/// post-measurement state. Records of zero probability are dropped.
pub fn step_branches(state: &QuantumState, circuit: &Circuit) -> Result<Vec<(f64, QuantumState)>> {
    let k = circuit.n_slots();
    if k > 20 {
        return Err(Error::InvalidConfig(format!("{k} measurements is too many to enumerate")));
    }
    let mut out = Vec::new();
    for record in 0..1usize << k {
        let outcomes: Vec<u8> = (0..k).map(|i| (record >> i & 1) as u8).collect();
        let mut s = state.clone();
        let p = circuit.execute_forced(&mut s, &outcomes)?;
        if p > 0.0 {
            out.push((p, s));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryResult {
    /// `values[k][o]`: observable `o` after `k` steps (`k = 0` is the initial state).
    pub values: Vec<Vec<f64>>,
    /// `jumps[k][d]`: dN of descriptor `d` during step `k`.
    pub jumps: Vec<Vec<u8>>,
    /// Splitting parameter used in each step.
    pub x: Vec<f64>,
    pub final_state: QuantumState,
}

fn measure_observables(
    state: &QuantumState,
    observables: &[&Observable],
    shots: Option<usize>,
    seed: u64,
    traj: u64,
    step: u64,
) -> Result<Vec<f64>> {
    match shots {
        None => observables.iter().map(|o| state.expectation_sum(&o.op)).collect(),
        Some(shots) => {
            let mut rng = stream(seed, Purpose::Shots, traj, step);
            let counts = state.sample_indices(shots, &mut rng);
            observables
                .iter()
                .map(|o| {
                    if !o.op.is_diagonal() {
                        return Err(Error::InvalidConfig(format!("shot mode needs a diagonal observable, `{}` is not", o.name)));
                    }
                    let total: f64 = counts.iter().map(|(&idx, &c)| o.op.diagonal_value(idx) * c as f64).sum();
                    Ok(total / shots as f64)
                })
                .collect()
        }
    }
}

/// Shared per-run setup: resolved observables and the step circuits.
struct Runner<'m> {
    model: &'m Model,
    cfg: &'m TrajectoryConfig,
    observables: Vec<&'m Observable>,
    builder: StepBuilder,
    /// Circuit and x for the non-adaptive modes.
    fixed: Option<(f64, Circuit)>,
}

impl<'m> Runner<'m> {
    fn new(cfg: &'m TrajectoryConfig, model: &'m Model) -> Result<Self> {
        cfg.validate(model)?;
        let observables = cfg.resolve_observables(model)?;
        let builder = StepBuilder::new(model, cfg.dt, SpinBasis::UpIsZero, cfg.noise.is_some())?;
        let fixed = match cfg.x_mode {
            XMode::Constant(x) => Some((x, builder.circuit(x)?)),
            XMode::Initial => {
                let s0 = cfg.initial.prepare(model.n_sites())?;
                let x = optimise_x(&model.h, &model.lindblads, &s0)?.x;
                Some((x, builder.circuit(x)?))
            }
            XMode::Adaptive => None,
        };
        Ok(Self { model, cfg, observables, builder, fixed })
    }

    fn run(&self, traj: usize) -> Result<TrajectoryResult> {
        let cfg = self.cfg;
        let traj_key = traj as u64;
        let mut state = cfg.initial.prepare(self.model.n_sites())?;
        let mut values = Vec::with_capacity(cfg.n_steps + 1);
        let mut jumps = Vec::with_capacity(cfg.n_steps);
        let mut xs = Vec::with_capacity(cfg.n_steps);
        values.push(measure_observables(&state, &self.observables, cfg.shots, cfg.master_seed, traj_key, 0)?);
        let mut adaptive: Option<Circuit>;
        for step in 0..cfg.n_steps {
            let (x, circuit) = match &self.fixed {
                Some((x, c)) => (*x, c),
                None => {
                    let x = optimise_x(&self.model.h, &self.model.lindblads, &state)?.x;
                    adaptive = Some(self.builder.circuit(x)?);
                    (x, adaptive.as_ref().unwrap())
                }
            };
            let mut rng = stream(cfg.master_seed, Purpose::Measure, traj_key, step as u64);
            let record = match &cfg.noise {
                Some(noise) => {
                    let mut noise_rng = stream(cfg.master_seed, Purpose::Noise, traj_key, step as u64);
                    msse_step(&mut state, circuit, &mut rng, Some((noise, &mut noise_rng)))?
                }
                None => msse_step(&mut state, circuit, &mut rng, None)?,
            };
            jumps.push(record);
            xs.push(x);
            values.push(measure_observables(&state, &self.observables, cfg.shots, cfg.master_seed, traj_key, step as u64 + 1)?);
        }
        Ok(TrajectoryResult { values, jumps, x: xs, final_state: state })
    }
}

/// Runs trajectory `index` of the ensemble described by `cfg`.
pub fn run_trajectory(cfg: &TrajectoryConfig, model: &Model, index: usize) -> Result<TrajectoryResult> {
    Runner::new(cfg, model)?.run(index)
}

/// Ensemble statistics per recorded time.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `mean[o][k]`
    pub mean: Vec<Vec<f64>>,
    /// Trajectory standard error `s / sqrt(n_traj)`.
    pub stderr: Vec<Vec<f64>>,
    /// Means of the consecutive trajectory groups, `repeat_means[r][o][k]`.
    pub repeat_means: Vec<Vec<Vec<f64>>>,
    /// Per-step x, averaged over trajectories in adaptive mode.
    pub x: Vec<f64>,
    pub n_traj: usize,
}

impl EnsembleResult {
    /// Spread of the group means, `sd / sqrt(repeats)`; `None` for one group.
    pub fn repeat_stderr(&self) -> Option<Vec<Vec<f64>>> {
        let r = self.repeat_means.len();
        if r < 2 {
            return None;
        }
        Some(
            (0..self.names.len())
                .map(|o| {
                    (0..self.times.len())
                        .map(|k| {
                            let vals: Vec<f64> = self.repeat_means.iter().map(|m| m[o][k]).collect();
                            mean_stderr(&vals).1
                        })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn series(&self, name: &str) -> Option<(&[f64], &[f64])> {
        let o = self.names.iter().position(|n| n == name)?;
        Some((&self.mean[o], &self.stderr[o]))
    }
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `cfg.n_traj` trajectories in parallel and reduces them in index
/// order, so the output does not depend on the number of worker threads.
pub fn run_ensemble(cfg: &TrajectoryConfig, model: &Model) -> Result<EnsembleResult> {
    let runner = Runner::new(cfg, model)?;
    let results: Vec<TrajectoryResult> = (0..cfg.n_traj).into_par_iter().map(|i| runner.run(i)).collect::<Result<_>>()?;
    Ok(reduce(cfg, &runner.observables, &results))
}

/// Final register of every trajectory, in index order.
pub fn final_states(cfg: &TrajectoryConfig, model: &Model) -> Result<Vec<QuantumState>> {
    let runner = Runner::new(cfg, model)?;
    (0..cfg.n_traj).into_par_iter().map(|i| runner.run(i).map(|r| r.final_state)).collect()
}

fn reduce(cfg: &TrajectoryConfig, observables: &[&Observable], results: &[TrajectoryResult]) -> EnsembleResult {
    let n_t = cfg.n_steps + 1;
    let n_o = observables.len();
    let mut mean = vec![vec![0.0; n_t]; n_o];
    let mut stderr = vec![vec![0.0; n_t]; n_o];
    let group = cfg.n_traj / cfg.repeats;
    let mut repeat_means = vec![vec![vec![0.0; n_t]; n_o]; if cfg.repeats > 1 { cfg.repeats } else { 0 }];
    let mut column = vec![0.0; results.len()];
    for o in 0..n_o {
        for k in 0..n_t {
            for (slot, r) in column.iter_mut().zip(results) {
                *slot = r.values[k][o];
            }
            let (m, se) = mean_stderr(&column);
            mean[o][k] = m;
            stderr[o][k] = se;
            for (g, rm) in repeat_means.iter_mut().enumerate() {
                let end = if g + 1 == cfg.repeats { column.len() } else { (g + 1) * group };
                rm[o][k] = mean_stderr(&column[g * group..end]).0;
            }
        }
    }
    let x = (0..cfg.n_steps)
        .map(|k| results.iter().map(|r| r.x[k]).sum::<f64>() / results.len() as f64)
        .collect();
    EnsembleResult {
        times: (0..n_t).map(|k| k as f64 * cfg.dt).collect(),
        names: observables.iter().map(|o| o.name.clone()).collect(),
        mean,
        stderr,
        repeat_means,
        x,
        n_traj: results.len(),
    }
}

/// Exact one-step ensemble `sum_r p_r |psi_r><psi_r|` of the system register,
/// obtained by enumerating every measurement record.
pub fn exact_step_density(model: &Model, dt: f64, x: f64, initial: &QuantumState) -> Result<crate::noise::DensityMatrix> {
    let builder = StepBuilder::new(model, dt, SpinBasis::UpIsZero, false)?;
    let circuit = builder.circuit(x)?;
    let branches = step_branches(initial, &circuit)?;
    let systems: Vec<(f64, QuantumState)> =
        branches.into_iter().map(|(p, s)| s.system_state().map(|s| (p, s))).collect::<Result<_>>()?;
    crate::noise::density_from_weighted(&systems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::circuit_unitary;
    use crate::linalg::CMatrix;
    use crate::operators::{ModelSpec, ModelKind};

    fn dti2() -> Model {
        ModelSpec::dti(2, 1.0, 1.0, 0.5).build().unwrap()
    }

    fn direct_objective(model: &Model, psi: &QuantumState, x: f64) -> f64 {
        let n = model.n_sites() + usize::from(psi.ancilla().is_some());
        let h = model.h.dense(n).unwrap();
        let s = sum_ldagl(&model.lindblads).dense(n).unwrap();
        let v = nalgebra::DVector::from_vec(psi.amplitudes().to_vec());
        let s_mean = (v.adjoint() * &s * &v)[(0, 0)];
        let f = 1.0 - 2.0 * x + 2.0 * x * x;
        let id = CMatrix::identity(h.nrows(), h.nrows());
        let op = &h * &h * C64::new(-f / 2.0, 0.0) + &h * (&s - id * s_mean) * C64::new(0.0, 0.5)
            - (&h * &s - &s * &h) * C64::new(0.0, 0.5 * x);
        (op * v).norm_squared()
    }

    #[test]
    fn optimiser_dti_two_sites() {
        let model = dti2();
        let s0 = InitialState::AllUp.prepare(2).unwrap();
        let opt = optimise_x(&model.h, &model.lindblads, &s0).unwrap();
        assert!((opt.x - 0.4906).abs() < 5e-4, "{}", opt.x);
        assert!(!opt.degenerate);
    }

    #[test]
    fn closed_system_optimum_is_half() {
        let model = ModelSpec::dti(3, 1.0, 0.8, 0.0).build().unwrap();
        let s0 = InitialState::AllUp.prepare(3).unwrap();
        let opt = optimise_x(&model.h, &model.lindblads, &s0).unwrap();
        assert!((opt.x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_hamiltonian_is_degenerate() {
        let model = ModelSpec::qcp(3, 0.0, 1.0, 1.0).build().unwrap();
        let s0 = InitialState::AllUp.prepare(3).unwrap();
        let opt = optimise_x(&model.h, &model.lindblads, &s0).unwrap();
        assert!(opt.degenerate);
        assert_eq!(opt.x, 0.5);
    }

    #[test]
    fn optimiser_matches_grid_scan() {
        let mut rng = stream(21, Purpose::Test, 0, 0);
        for trial in 0..8 {
            let spec = if trial % 2 == 0 {
                ModelSpec::dti(2 + trial % 3, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0))
            } else {
                ModelSpec::qcp(2 + trial % 2, rng.random_range(0.0..4.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))
            };
            let model = spec.build().unwrap();
            let n = model.n_sites();
            let amps: Vec<C64> = (0..1usize << (n + 1))
                .map(|i| if i < 1 << n { C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) } else { C64::new(0.0, 0.0) })
                .collect();
            let mut psi = QuantumState::from_amplitudes(amps).unwrap();
            psi.set_ancilla_highest();
            let opt = optimise_x(&model.h, &model.lindblads, &psi).unwrap();
            let (x_grid, f_grid) = (0..=10_000)
                .map(|i| i as f64 / 10_000.0)
                .map(|x| (x, direct_objective(&model, &psi, x)))
                .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            let f_opt = direct_objective(&model, &psi, opt.x);
            assert!(f_opt <= f_grid * (1.0 + 1e-10) + 1e-14, "trial {trial}: {f_opt} > {f_grid}");
            assert!((opt.x - x_grid).abs() <= 1e-4 + 1e-6, "trial {trial}: {} vs {x_grid}", opt.x);
            assert!((opt.objective - f_opt).abs() <= 1e-9 * f_opt.max(1.0));
        }
    }

    #[test]
    fn x_mode_parsing() {
        assert_eq!("const:0.25".parse::<XMode>().unwrap(), XMode::Constant(0.25));
        assert_eq!("initial".parse::<XMode>().unwrap(), XMode::Initial);
        assert_eq!("adaptive".parse::<XMode>().unwrap(), XMode::Adaptive);
        assert!("const:1.5".parse::<XMode>().is_err());
        assert!("sometimes".parse::<XMode>().is_err());
        assert_eq!(XMode::Constant(0.25).to_string(), "const:0.25");
    }

    #[test]
    fn closed_system_step_is_trotter_evolution() {
        let model = ModelSpec::dti(3, 1.0, 0.6, 0.0).build().unwrap();
        let b = StepBuilder::new(&model, 0.1, SpinBasis::UpIsZero, false).unwrap();
        assert_eq!(b.n_jumps(), 0);
        let c = b.circuit(0.3).unwrap();
        assert!(!c.has_nonunitary());
        let mut want = trotter_step(&model.h, 0.03, 3).unwrap();
        want.append(&trotter_step(&model.h, 0.07, 3).unwrap()).unwrap();
        let d = crate::linalg::phase_insensitive_distance(&circuit_unitary(&c).unwrap(), &circuit_unitary(&want.widened(4).unwrap()).unwrap());
        assert!(d < 1e-12);
        let cfg = TrajectoryConfig { dt: 0.1, n_steps: 5, n_traj: 1, x_mode: XMode::Constant(0.3), ..Default::default() };
        let r = run_trajectory(&cfg, &model, 0).unwrap();
        assert!(r.jumps.iter().all(|j| j.is_empty()));
        assert_eq!(r.final_state.prob_one(3).unwrap(), 0.0);
    }

    #[test]
    fn decay_jump_frequency() {
        let model = ModelSpec::dti(1, 0.0, 0.0, 0.4).build().unwrap();
        let cfg = TrajectoryConfig { dt: 0.1, n_steps: 1, n_traj: 10_000, master_seed: 4, ..Default::default() };
        let runner = Runner::new(&cfg, &model).unwrap();
        let jumps: usize = (0..cfg.n_traj).map(|i| runner.run(i).unwrap().jumps[0][0] as usize).sum();
        let freq = jumps as f64 / cfg.n_traj as f64;
        let sigma = (0.04f64 * 0.96 / cfg.n_traj as f64).sqrt();
        assert!((freq - 0.04).abs() < 4.0 * sigma, "{freq}");
    }

    #[test]
    fn zero_steps_record_initial_values() {
        for (spec, name) in [(ModelSpec::dti(3, 1.0, 1.0, 0.5), "sz"), (ModelSpec::qcp(3, 6.0, 0.2, 1.0), "n")] {
            let model = spec.build().unwrap();
            let cfg = TrajectoryConfig { n_steps: 0, n_traj: 3, ..Default::default() };
            let out = run_ensemble(&cfg, &model).unwrap();
            assert_eq!(out.series(name).unwrap().0, &[1.0]);
        }
    }

    #[test]
    fn absorbing_state_is_dark() {
        let model = ModelSpec::qcp(4, 0.0, 0.0, 1.0).build().unwrap();
        let cfg = TrajectoryConfig { n_steps: 20, n_traj: 5, initial: InitialState::AllDown, ..Default::default() };
        let out = run_ensemble(&cfg, &model).unwrap();
        assert!(out.series("n").unwrap().0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let model = ModelSpec::qcp(3, 6.0, 0.2, 1.0).build().unwrap();
        let cfg = TrajectoryConfig { n_steps: 10, n_traj: 24, master_seed: 77, repeats: 3, ..Default::default() };
        let run_with = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_ensemble(&cfg, &model).unwrap())
        };
        let a = run_with(1);
        let b = run_with(3);
        assert_eq!(a, b);
        assert_eq!(a, run_ensemble(&cfg, &model).unwrap());
        let other = run_ensemble(&TrajectoryConfig { master_seed: 78, ..cfg.clone() }, &model).unwrap();
        assert_ne!(a.mean, other.mean);
    }

    #[test]
    fn stderr_scales_with_inverse_sqrt() {
        let model = ModelSpec::dti(2, 1.0, 1.0, 0.5).build().unwrap();
        let base = TrajectoryConfig { dt: 0.4, n_steps: 6, master_seed: 5, ..Default::default() };
        let small = run_ensemble(&TrajectoryConfig { n_traj: 400, ..base.clone() }, &model).unwrap();
        let large = run_ensemble(&TrajectoryConfig { n_traj: 1600, ..base }, &model).unwrap();
        let ratio = small.stderr[0][6] / large.stderr[0][6];
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn branches_sum_to_one() {
        let model = ModelSpec::qcp(2, 3.0, 1.0, 1.0).build().unwrap();
        let b = StepBuilder::new(&model, 0.1, SpinBasis::UpIsZero, false).unwrap();
        let c = b.circuit(0.5).unwrap();
        let s0 = InitialState::AllUp.prepare(2).unwrap();
        let total: f64 = step_branches(&s0, &c).unwrap().iter().map(|(p, _)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jump_block_order_is_second_order() {
        let model = ModelSpec::qcp(2, 2.0, 1.5, 1.0).build().unwrap();
        let mut reversed = model.clone();
        reversed.lindblads.reverse();
        let s0 = InitialState::AllUp.prepare(2).unwrap();
        let gap = |dt: f64| {
            let a = exact_step_density(&model, dt, 0.5, &s0).unwrap();
            let b = exact_step_density(&reversed, dt, 0.5, &s0).unwrap();
            a.trace_distance(&b).unwrap()
        };
        let (g1, g2) = (gap(0.1), gap(0.05));
        assert!(g1 > 0.0);
        assert!(g2 < 0.3 * g1, "{g1} {g2}");
    }

    #[test]
    fn adaptive_and_shot_modes() {
        let model = ModelSpec::qcp(3, 6.0, 0.2, 1.0).build().unwrap();
        let cfg = TrajectoryConfig { n_steps: 4, n_traj: 6, x_mode: XMode::Adaptive, shots: Some(64), ..Default::default() };
        let r = run_trajectory(&cfg, &model, 2).unwrap();
        assert_eq!(r.jumps.len(), 4);
        assert!(r.x.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!((r.final_state.norm_sqr() - 1.0).abs() < 1e-8);
        for v in &r.values {
            // 64 shots of a site average over 3 sites
            assert!(((v[0] * 64.0 * 3.0).round() - v[0] * 64.0 * 3.0).abs() < 1e-9);
        }
        assert_eq!(model.spec.model, ModelKind::Qcp);
    }

    #[test]
    fn noisy_run_at_zero_noise_matches_ideal_observables() {
        let model = ModelSpec::qcp(3, 6.04, 0.0, 1.0).build().unwrap();
        let cfg = TrajectoryConfig { n_steps: 5, n_traj: 20, master_seed: 9, ..Default::default() };
        let ideal = run_ensemble(&cfg, &model).unwrap();
        let zero = run_ensemble(&TrajectoryConfig { noise: Some(NoiseConfig::new(0.0)), ..cfg }, &model).unwrap();
        for (a, b) in ideal.mean[0].iter().zip(&zero.mean[0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let model = dti2();
        assert!(run_ensemble(&TrajectoryConfig { n_traj: 0, ..Default::default() }, &model).is_err());
        assert!(matches!(run_ensemble(&TrajectoryConfig { dt: 3.0, ..Default::default() }, &model), Err(Error::RateTooLarge(_))));
        assert!(run_ensemble(&TrajectoryConfig { observables: vec!["nope".into()], ..Default::default() }, &model).is_err());
    }
}
