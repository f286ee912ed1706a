//! Reference dynamics independent of circuits: fixed-step RK4 on the
//! Lindblad equation and a first-order quantum-jump Monte Carlo.

use log::warn;
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;

use crate::engine::{mean_stderr, EnsembleResult, InitialState, TrajectoryConfig};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, ZERO};
use crate::noise::DensityMatrix;
use crate::operators::{sum_ldagl, LindbladDescriptor, Model, OperatorSum};
use crate::rng::{stream, Purpose};
use crate::statevector::QuantumState;

const MAX_ORACLE_SITES: usize = 10;

fn apply_columns(m: &CMatrix, f: impl Fn(&[C64]) -> Result<Vec<C64>>) -> Result<CMatrix> {
    let dim = m.nrows();
    let src = m.as_slice();
    let mut out = Vec::with_capacity(dim * dim);
    for col in 0..dim {
        out.extend(f(&src[col * dim..(col + 1) * dim])?);
    }
    Ok(CMatrix::from_vec(dim, dim, out))
}

fn apply_term_columns(m: &CMatrix, ld: &LindbladDescriptor) -> Result<CMatrix> {
    apply_columns(m, |col| {
        let mut out = vec![ZERO; col.len()];
        ld.l.apply_into(col, &mut out)?;
        Ok(out)
    })
}

/// `-i[H, rho] + sum_l (L rho L^dag - {L^dag L, rho} / 2)`, applying every
/// operator to the columns of `rho`.
pub fn lindblad_rhs(rho: &CMatrix, h: &OperatorSum, lindblads: &[LindbladDescriptor]) -> Result<CMatrix> {
    let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
    if !h.is_empty() {
        let h_rho = apply_columns(rho, |c| h.apply_vec(c))?;
        // rho H = (H rho)^dag for Hermitian rho
        out += (&h_rho - h_rho.adjoint()) * C64::new(0.0, -1.0);
    }
    if !lindblads.is_empty() {
        let k = sum_ldagl(lindblads);
        let k_rho = apply_columns(rho, |c| k.apply_vec(c))?;
        out -= (&k_rho + k_rho.adjoint()) * C64::new(0.5, 0.0);
        for ld in lindblads {
            let l_rho = apply_term_columns(rho, ld)?;
            out += apply_term_columns(&l_rho.adjoint(), ld)?;
        }
    }
    Ok(out)
}

/// Observable time series from the Lindblad integrator.
#[derive(Clone, Debug, PartialEq)]
pub struct LindbladSeries {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[o][k]`
    pub values: Vec<Vec<f64>>,
    pub final_rho: DensityMatrix,
    /// Largest observable change when the integrator step is halved.
    pub halving_error: Option<f64>,
    /// Largest `|Tr rho - 1|` over the run.
    pub max_trace_error: f64,
}

impl LindbladSeries {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        let o = self.names.iter().position(|n| n == name)?;
        Some(&self.values[o])
    }
}

/// Settings of the RK4 run: `n_out` outputs spaced `dt_out`, each reached by
/// `substeps` RK4 steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSettings {
    pub dt_out: f64,
    pub n_out: usize,
    pub substeps: usize,
    /// Repeat with halved step and report the largest observable change.
    pub estimate_error: bool,
}

fn check_positivity(rho: &CMatrix, t: f64, full: bool) -> Result<()> {
    let worst_diag = (0..rho.nrows()).map(|i| rho[(i, i)].re).fold(f64::INFINITY, f64::min);
    let worst = if full {
        let h = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(worst_diag, f64::min)
    } else {
        worst_diag
    };
    if worst < -1e-6 {
        return Err(Error::Numerical(format!(
            "density matrix lost positivity at t = {t:.4} (eigenvalue/diagonal {worst:.3e}); reduce the integrator step"
        )));
    }
    Ok(())
}

fn rk4_run(model: &Model, rho0: &CMatrix, s: &OracleSettings, substeps: usize) -> Result<(Vec<Vec<f64>>, CMatrix, f64)> {
    let h = s.dt_out / substeps as f64;
    let hc = C64::new(h, 0.0);
    let (ham, ls) = (&model.h, &model.lindblads);
    let full_check = rho0.nrows() <= 64;
    let mut rho = rho0.clone();
    let obs = &model.observables;
    let measure = |rho: &CMatrix| -> Result<Vec<f64>> {
        let d = DensityMatrix::new(rho.clone())?;
        obs.iter().map(|o| d.expectation(&o.op)).collect()
    };
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(s.n_out + 1); obs.len()];
    for (o, v) in measure(&rho)?.into_iter().enumerate() {
        values[o].push(v);
    }
    let mut max_trace_error = 0.0f64;
    for k in 1..=s.n_out {
        for _ in 0..substeps {
            let k1 = lindblad_rhs(&rho, ham, ls)?;
            let k2 = lindblad_rhs(&(&rho + &k1 * (hc * 0.5)), ham, ls)?;
            let k3 = lindblad_rhs(&(&rho + &k2 * (hc * 0.5)), ham, ls)?;
            let k4 = lindblad_rhs(&(&rho + &k3 * hc), ham, ls)?;
            rho += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * (hc / 6.0);
            rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
        }
        let t = k as f64 * s.dt_out;
        max_trace_error = max_trace_error.max((rho.trace().re - 1.0).abs());
        check_positivity(&rho, t, full_check)?;
        for (o, v) in measure(&rho)?.into_iter().enumerate() {
            values[o].push(v);
        }
    }
    Ok((values, rho, max_trace_error))
}

/// Integrates the Lindblad equation from `rho0` with classic RK4.
pub fn integrate_lindblad(model: &Model, rho0: &DensityMatrix, settings: &OracleSettings) -> Result<LindbladSeries> {
    if model.n_sites() > MAX_ORACLE_SITES {
        return Err(Error::InvalidConfig(format!("oracle supports N <= {MAX_ORACLE_SITES}")));
    }
    if rho0.n_qubits() != model.n_sites() {
        return Err(Error::InvalidConfig("initial density matrix does not match the model size".into()));
    }
    if !(settings.dt_out > 0.0) || settings.substeps == 0 {
        return Err(Error::InvalidConfig("oracle needs dt_out > 0 and substeps >= 1".into()));
    }
    let (values, rho, max_trace_error) = rk4_run(model, &rho0.matrix, settings, settings.substeps)?;
    if max_trace_error > 1e-8 {
        return Err(Error::Numerical(format!("trace drifted by {max_trace_error:.3e}")));
    }
    let halving_error = if settings.estimate_error {
        let (fine, _, _) = rk4_run(model, &rho0.matrix, settings, 2 * settings.substeps)?;
        let diff = values
            .iter()
            .zip(&fine)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        Some(diff)
    } else {
        None
    };
    Ok(LindbladSeries {
        times: (0..=settings.n_out).map(|k| k as f64 * settings.dt_out).collect(),
        names: model.observables.iter().map(|o| o.name.clone()).collect(),
        values,
        final_rho: DensityMatrix::new(rho)?,
        halving_error,
        max_trace_error,
    })
}

/// Pure initial state of the system register as a density matrix.
pub fn initial_density(initial: &InitialState, n_sites: usize) -> Result<DensityMatrix> {
    DensityMatrix::from_state(&initial.prepare(n_sites)?.system_state()?)
}

fn jump_trajectory(model: &Model, cfg: &TrajectoryConfig, traj: usize, warned: &std::sync::atomic::AtomicBool) -> Result<Vec<Vec<f64>>> {
    let n = model.n_sites();
    let mut state = cfg.initial.prepare(n)?.system_state()?;
    let k = sum_ldagl(&model.lindblads);
    let dt = cfg.dt;
    let obs = &model.observables;
    let mut values = Vec::with_capacity(cfg.n_steps + 1);
    values.push(obs.iter().map(|o| state.expectation_sum(&o.op)).collect::<Result<Vec<_>>>()?);
    for step in 0..cfg.n_steps {
        let mut rng = stream(cfg.master_seed, Purpose::JumpMc, traj as u64, step as u64);
        let weights: Vec<f64> = model
            .lindblads
            .iter()
            .map(|ld| state.expectation_local(&ld.ldagl).map(|v| v.max(0.0)))
            .collect::<Result<_>>()?;
        let total: f64 = weights.iter().sum();
        let p_jump = total * dt;
        if p_jump > 0.1 && !warned.swap(true, std::sync::atomic::Ordering::Relaxed) {
            warn!("jump probability per step {p_jump:.3} exceeds 0.1; first-order scheme is inaccurate");
        }
        let u: f64 = rng.random();
        let amps = state.amplitudes().to_vec();
        let next = if u < p_jump {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            let mut out = vec![ZERO; amps.len()];
            model.lindblads[chosen].l.apply_into(&amps, &mut out)?;
            out
        } else {
            let h_psi = model.h.apply_vec(&amps)?;
            let k_psi = k.apply_vec(&amps)?;
            amps.iter()
                .zip(h_psi.iter().zip(&k_psi))
                .map(|(a, (hp, kp))| a - hp * C64::new(0.0, dt) - kp * (0.5 * dt))
                .collect()
        };
        state = QuantumState::from_amplitudes(next)?;
        values.push(obs.iter().map(|o| state.expectation_sum(&o.op)).collect::<Result<Vec<_>>>()?);
    }
    Ok(values)
}

/// First-order quantum-jump Monte Carlo of the model's default observables,
/// with the same seeding contract as the circuit engine.
pub fn jump_monte_carlo(model: &Model, cfg: &TrajectoryConfig) -> Result<EnsembleResult> {
    if !(cfg.dt > 0.0) || cfg.n_traj == 0 {
        return Err(Error::InvalidConfig("jump Monte Carlo needs dt > 0 and n_traj >= 1".into()));
    }
    let warned = std::sync::atomic::AtomicBool::new(false);
    let runs: Vec<Vec<Vec<f64>>> =
        (0..cfg.n_traj).into_par_iter().map(|i| jump_trajectory(model, cfg, i, &warned)).collect::<Result<_>>()?;
    let n_t = cfg.n_steps + 1;
    let n_o = model.observables.len();
    let mut mean = vec![vec![0.0; n_t]; n_o];
    let mut stderr = vec![vec![0.0; n_t]; n_o];
    for o in 0..n_o {
        for k in 0..n_t {
            let column: Vec<f64> = runs.iter().map(|r| r[k][o]).collect();
            let (m, se) = mean_stderr(&column);
            mean[o][k] = m;
            stderr[o][k] = se;
        }
    }
    Ok(EnsembleResult {
        times: (0..n_t).map(|k| k as f64 * cfg.dt).collect(),
        names: model.observables.iter().map(|o| o.name.clone()).collect(),
        mean,
        stderr,
        repeat_means: Vec::new(),
        x: Vec::new(),
        n_traj: cfg.n_traj,
    })
}
