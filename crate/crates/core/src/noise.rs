//! Depolarising gate noise unravelled into random Pauli insertions, density
//! matrices rebuilt from trajectory ensembles, and state fidelity.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::circuits::{Circuit, GateKind};
use crate::engine::{final_states, TrajectoryConfig};
use crate::error::{Error, Result};
use crate::linalg::{pauli_x, pauli_y, pauli_z, CMatrix, Matrix2, ZERO};
use crate::operators::{ModelSpec, OperatorSum};
use crate::statevector::QuantumState;

/// Depolarising probabilities per native gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Two-qubit (CNOT) error probability.
    pub p2: f64,
    /// One-qubit error probability.
    pub p1: f64,
}

impl NoiseConfig {
    /// `p1 = p2 / 10`.
    pub fn new(p2: f64) -> Self {
        Self { p2, p1: p2 / 10.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p1", self.p1), ("p2", self.p2)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.p1 == 0.0 && self.p2 == 0.0
    }
}

fn pauli(index: usize) -> Option<Matrix2> {
    match index {
        0 => None,
        1 => Some(pauli_x()),
        2 => Some(pauli_y()),
        _ => Some(pauli_z()),
    }
}

/// Runs a native circuit and, after every unitary gate, inserts a uniformly
/// random non-identity Pauli on its qubits with probability `p1` (one-qubit
/// gates) or `p2` (CNOT). Measurement and reset are noiseless.
///
/// Exactly one uniform is drawn from `noise_rng` per unitary gate, so runs
/// that differ only in the error probabilities stay aligned.
pub fn noisy_execute<R: Rng + ?Sized>(
    circuit: &Circuit,
    state: &mut QuantumState,
    noise: &NoiseConfig,
    rng: &mut R,
    noise_rng: &mut dyn RngCore,
) -> Result<Vec<u8>> {
    noise.validate()?;
    if state.n_qubits() < circuit.n_qubits() {
        return Err(Error::InvalidConfig("state smaller than circuit register".into()));
    }
    let mut slots = vec![0u8; circuit.n_slots()];
    for g in circuit.gates() {
        if !g.kind.is_native() {
            return Err(Error::InvalidConfig(format!("noisy execution needs native gates, found {:?}", g.kind)));
        }
        g.apply(state, rng, &mut slots)?;
        if !g.kind.is_unitary() {
            continue;
        }
        let u: f64 = noise_rng.random();
        match g.kind {
            GateKind::Cnot => {
                if u < noise.p2 {
                    let k = ((u / noise.p2 * 15.0) as usize).min(14) + 1;
                    for (j, &q) in g.qubits.iter().enumerate() {
                        if let Some(p) = pauli(k >> (2 * j) & 3) {
                            state.apply_one_qubit(q, &p)?;
                        }
                    }
                }
            }
            _ => {
                if u < noise.p1 {
                    let k = ((u / noise.p1 * 3.0) as usize).min(2) + 1;
                    state.apply_one_qubit(g.qubits[0], &pauli(k).unwrap())?;
                }
            }
        }
    }
    Ok(slots)
}

/// Hermitian, unit-trace density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub matrix: CMatrix,
    n_qubits: usize,
}

const MAX_DENSITY_QUBITS: usize = 12;

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let dim = matrix.nrows();
        if dim != matrix.ncols() || dim < 2 || !dim.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("{}x{} is not a qubit density matrix", dim, matrix.ncols())));
        }
        Ok(Self { matrix, n_qubits: dim.trailing_zeros() as usize })
    }

    pub fn from_state(state: &QuantumState) -> Result<Self> {
        density_from_weighted(&[(1.0, state.clone())])
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// Largest deviation from Hermiticity.
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Checks trace 1 (1e-8), Hermiticity (1e-10) and eigenvalues >= -1e-8.
    pub fn validate(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-8 {
            return Err(Error::Numerical(format!("trace {tr} differs from 1")));
        }
        let herm = self.hermiticity_defect();
        if herm > 1e-10 {
            return Err(Error::Numerical(format!("Hermiticity defect {herm:.3e}")));
        }
        let min = self.eigenvalues()[0];
        if min < -1e-8 {
            return Err(Error::Numerical(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    /// `Tr(rho O)`, real part.
    pub fn expectation(&self, op: &OperatorSum) -> Result<f64> {
        let dim = self.dim();
        let mut total = C64::new(0.0, 0.0);
        for col in 0..dim {
            let column: Vec<C64> = self.matrix.column(col).iter().copied().collect();
            let o_col = op.apply_vec(&column)?;
            total += o_col[col];
        }
        Ok(total.re)
    }

    /// `(1/2) || rho - sigma ||_1`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidConfig("density matrices of different size".into()));
        }
        let diff = &self.matrix - &other.matrix;
        let h = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
        Ok(0.5 * h.symmetric_eigenvalues().iter().map(|v| v.abs()).sum::<f64>())
    }
}

/// `sum_i w_i |psi_i><psi_i| / sum_i w_i`.
pub fn density_from_weighted(states: &[(f64, QuantumState)]) -> Result<DensityMatrix> {
    let Some((_, first)) = states.first() else {
        return Err(Error::InvalidConfig("empty ensemble".into()));
    };
    let n = first.n_qubits();
    if n > MAX_DENSITY_QUBITS {
        return Err(Error::InvalidConfig(format!("{n} qubits is too large for a density matrix")));
    }
    let dim = 1usize << n;
    let mut m = CMatrix::zeros(dim, dim);
    let mut total = 0.0;
    for (w, s) in states {
        if s.n_qubits() != n {
            return Err(Error::InvalidConfig("ensemble states differ in size".into()));
        }
        let amps = s.amplitudes();
        let norm = s.norm_sqr();
        let scale = w / norm;
        for c in 0..dim {
            let ac = amps[c].conj() * scale;
            if ac == ZERO {
                continue;
            }
            for r in 0..dim {
                m[(r, c)] += amps[r] * ac;
            }
        }
        total += w;
    }
    if !(total > 0.0) {
        return Err(Error::InvalidConfig("ensemble weights sum to zero".into()));
    }
    m /= C64::new(total, 0.0);
    // exact Hermitian symmetrisation of rounding
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    DensityMatrix::new(m)
}

/// Uniform average `(1/M) sum_i |psi_i><psi_i|`.
pub fn density_from_ensemble(states: &[QuantumState]) -> Result<DensityMatrix> {
    let weighted: Vec<(f64, QuantumState)> = states.iter().map(|s| (1.0, s.clone())).collect();
    density_from_weighted(&weighted)
}

fn eigen_clamped(m: &CMatrix, what: &str) -> Result<SymmetricEigen<C64, nalgebra::Dyn>> {
    let mut eig = ((m + m.adjoint()) * C64::new(0.5, 0.0)).symmetric_eigen();
    for v in eig.eigenvalues.iter_mut() {
        if *v < -1e-6 {
            return Err(Error::Numerical(format!("{what} has eigenvalue {v:.3e}; not a density matrix")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// `F = (Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)))^2`, clamped to `[0, 1]`.
pub fn fidelity(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return Err(Error::InvalidConfig("density matrices of different size".into()));
    }
    let eig = eigen_clamped(&rho1.matrix, "rho1")?;
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| C64::new(v.sqrt(), 0.0)));
    let sqrt1 = &eig.eigenvectors * sqrt_vals * eig.eigenvectors.adjoint();
    let inner = &sqrt1 * &rho2.matrix * &sqrt1;
    let inner_eig = eigen_clamped(&inner, "sqrt(rho1) rho2 sqrt(rho1)")?;
    let f = inner_eig.eigenvalues.iter().map(|v| v.sqrt()).sum::<f64>().powi(2);
    Ok(f.clamp(0.0, 1.0))
}

/// Fidelity between noisy and noiseless ensembles at the end of `cfg`'s
/// run, for each system size in `sizes`. Both ensembles execute the same
/// lowered circuits with the same seeds; only the error probabilities
/// differ.
pub fn fidelity_vs_size(
    template: &ModelSpec,
    cfg: &TrajectoryConfig,
    noise: &NoiseConfig,
    sizes: &[usize],
) -> Result<Vec<(usize, f64)>> {
    sizes
        .iter()
        .map(|&n| {
            let model = ModelSpec { n, ..template.clone() }.build()?;
            let ideal_cfg = TrajectoryConfig { noise: Some(NoiseConfig { p1: 0.0, p2: 0.0 }), ..cfg.clone() };
            let noisy_cfg = TrajectoryConfig { noise: Some(*noise), ..cfg.clone() };
            let system = |states: Vec<QuantumState>| -> Result<Vec<QuantumState>> {
                states.iter().map(|s| s.system_state()).collect()
            };
            let ideal = density_from_ensemble(&system(final_states(&ideal_cfg, &model)?)?)?;
            let noisy = density_from_ensemble(&system(final_states(&noisy_cfg, &model)?)?)?;
            Ok((n, fidelity(&noisy, &ideal)?))
        })
        .collect()
}
