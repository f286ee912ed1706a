//! Gate-level circuit IR and its execution on a [`QuantumState`].

mod format;
mod jump;
mod lower;
mod synthesis;

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, Matrix2, ONE};
use crate::statevector::QuantumState;

pub use format::{dump, parse};
pub use jump::{jump_block, jump_angle, SpinBasis};
pub use lower::lower_to_native;
pub use synthesis::{
    pauli_decompose, single_qubit_exponential, synthesize_two_qubit_exponential, trotter_step, Pauli,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    H,
    S,
    Sdg,
    X,
    /// operands: control, target
    Cnot,
    /// operands: control, target
    CRx(u8),
    /// operands: control, target
    CRy(u8),
    /// operands: control, control, target
    CCRy([u8; 2]),
    /// measures into the given classical slot
    Measure(usize),
    Reset,
}

impl GateKind {
    pub fn arity(&self) -> usize {
        match self {
            Self::Cnot | Self::CRx(_) | Self::CRy(_) => 2,
            Self::CCRy(_) => 3,
            _ => 1,
        }
    }

    pub fn has_angle(&self) -> bool {
        matches!(self, Self::Rx | Self::Ry | Self::Rz | Self::CRx(_) | Self::CRy(_) | Self::CCRy(_))
    }

    pub fn is_native(&self) -> bool {
        !matches!(self, Self::CRx(_) | Self::CRy(_) | Self::CCRy(_))
    }

    pub fn is_unitary(&self) -> bool {
        !matches!(self, Self::Measure(_) | Self::Reset)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    /// Radians; zero for gates without an angle.
    pub angle: f64,
}

impl Gate {
    pub fn new(kind: GateKind, qubits: &[usize], angle: f64) -> Self {
        Self { kind, qubits: qubits.to_vec(), angle }
    }

    pub fn one(kind: GateKind, q: usize) -> Self {
        Self::new(kind, &[q], 0.0)
    }

    pub fn rot(kind: GateKind, q: usize, angle: f64) -> Self {
        Self::new(kind, &[q], angle)
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self::new(GateKind::Cnot, &[control, target], 0.0)
    }

    /// The 2x2 matrix applied to the target qubit (the last operand).
    pub fn target_matrix(&self) -> Option<Matrix2> {
        Some(match self.kind {
            GateKind::Rx | GateKind::CRx(_) => linalg::rx(self.angle),
            GateKind::Ry | GateKind::CRy(_) | GateKind::CCRy(_) => linalg::ry(self.angle),
            GateKind::Rz => linalg::rz(self.angle),
            GateKind::H => linalg::hadamard(),
            GateKind::S => linalg::phase_s(),
            GateKind::Sdg => linalg::phase_sdg(),
            GateKind::X | GateKind::Cnot => linalg::pauli_x(),
            GateKind::Measure(_) | GateKind::Reset => return None,
        })
    }

    /// `(qubit, polarity)` controls.
    pub fn controls(&self) -> Vec<(usize, u8)> {
        match self.kind {
            GateKind::Cnot => vec![(self.qubits[0], 1)],
            GateKind::CRx(p) | GateKind::CRy(p) => vec![(self.qubits[0], p)],
            GateKind::CCRy([p0, p1]) => vec![(self.qubits[0], p0), (self.qubits[1], p1)],
            _ => Vec::new(),
        }
    }

    pub fn target(&self) -> usize {
        *self.qubits.last().expect("gate without operands")
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.qubits.len() != self.kind.arity() {
            return Err(Error::InvalidConfig(format!(
                "{:?} expects {} operands, got {}",
                self.kind,
                self.kind.arity(),
                self.qubits.len()
            )));
        }
        for (i, &q) in self.qubits.iter().enumerate() {
            if q >= n_qubits {
                return Err(Error::QubitOutOfRange { index: q, n_qubits });
            }
            if self.qubits[..i].contains(&q) {
                return Err(Error::DuplicateQubit(q));
            }
        }
        if !self.angle.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite angle on {:?}", self.kind)));
        }
        let polarities: &[u8] = match &self.kind {
            GateKind::CRx(p) | GateKind::CRy(p) => std::slice::from_ref(p),
            GateKind::CCRy(p) => p,
            _ => &[],
        };
        if polarities.iter().any(|&p| p > 1) {
            return Err(Error::InvalidConfig(format!("bad control polarity in {:?}", self.kind)));
        }
        Ok(())
    }

    /// Applies this gate; measurement outcomes go to `slots`.
    pub fn apply<R: Rng + ?Sized>(&self, state: &mut QuantumState, rng: &mut R, slots: &mut [u8]) -> Result<()> {
        match self.kind {
            GateKind::Measure(slot) => {
                slots[slot] = state.measure_qubit(self.qubits[0], rng)?;
                Ok(())
            }
            GateKind::Reset => state.reset_qubit(self.qubits[0], rng),
            _ => self.apply_unitary(state),
        }
    }

    pub(crate) fn apply_unitary(&self, state: &mut QuantumState) -> Result<()> {
        let u = self.target_matrix().expect("unitary gate");
        let controls = self.controls();
        if controls.is_empty() {
            state.apply_one_qubit(self.target(), &u)
        } else {
            state.apply_controlled(&controls, self.target(), &u)
        }
    }
}

/// Ordered gate list over a fixed register.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<Gate>,
    counts: BTreeMap<usize, usize>,
    n_slots: usize,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self { n_qubits, gates: Vec::new(), counts: BTreeMap::new(), n_slots: 0 }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Gate counts keyed by arity.
    pub fn counts(&self) -> &BTreeMap<usize, usize> {
        &self.counts
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// Counts recomputed from the gate list.
    pub fn recount(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for g in &self.gates {
            *counts.entry(g.kind.arity()).or_insert(0) += 1;
        }
        counts
    }

    pub fn count_kind(&self, pred: impl Fn(&GateKind) -> bool) -> usize {
        self.gates.iter().filter(|g| pred(&g.kind)).count()
    }

    pub fn push(&mut self, gate: Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        if let GateKind::Measure(slot) = gate.kind {
            self.n_slots = self.n_slots.max(slot + 1);
        }
        *self.counts.entry(gate.kind.arity()).or_insert(0) += 1;
        self.gates.push(gate);
        Ok(())
    }

    /// Appends `other`, shifting its classical slots past the ones in use.
    pub fn append(&mut self, other: &Circuit) -> Result<()> {
        let offset = self.n_slots;
        for g in &other.gates {
            let mut g = g.clone();
            if let GateKind::Measure(slot) = g.kind {
                g.kind = GateKind::Measure(slot + offset);
            }
            self.push(g)?;
        }
        Ok(())
    }

    /// Same gates on a register of `n_qubits >= self.n_qubits`.
    pub fn widened(&self, n_qubits: usize) -> Result<Circuit> {
        if n_qubits < self.n_qubits {
            return Err(Error::InvalidConfig(format!("cannot shrink circuit from {} to {n_qubits} qubits", self.n_qubits)));
        }
        let mut out = self.clone();
        out.n_qubits = n_qubits;
        Ok(out)
    }

    pub fn is_native(&self) -> bool {
        self.gates.iter().all(|g| g.kind.is_native())
    }

    pub fn has_nonunitary(&self) -> bool {
        self.gates.iter().any(|g| !g.kind.is_unitary())
    }

    fn check_register(&self, state: &QuantumState) -> Result<()> {
        if state.n_qubits() < self.n_qubits {
            return Err(Error::InvalidConfig(format!(
                "circuit on {} qubits run on a {}-qubit state",
                self.n_qubits,
                state.n_qubits()
            )));
        }
        Ok(())
    }

    /// Runs the circuit and returns the classical slots.
    pub fn execute<R: Rng + ?Sized>(&self, state: &mut QuantumState, rng: &mut R) -> Result<Vec<u8>> {
        self.check_register(state)?;
        let mut slots = vec![0u8; self.n_slots];
        for g in &self.gates {
            g.apply(state, rng, &mut slots)?;
        }
        Ok(slots)
    }

    /// Runs the circuit with prescribed measurement outcomes (one per
    /// `Measure`, in gate order) and returns the probability of that
    /// outcome record. A zero-probability record leaves an unusable state.
    pub fn execute_forced(&self, state: &mut QuantumState, outcomes: &[u8]) -> Result<f64> {
        self.check_register(state)?;
        let mut prob = 1.0;
        let mut next = 0usize;
        for g in &self.gates {
            match g.kind {
                GateKind::Measure(_) => {
                    let bit = *outcomes
                        .get(next)
                        .ok_or_else(|| Error::InvalidConfig("too few forced outcomes".into()))?;
                    next += 1;
                    prob *= state.project(g.qubits[0], bit)?;
                    if prob == 0.0 {
                        return Ok(0.0);
                    }
                }
                GateKind::Reset => {
                    let q = g.qubits[0];
                    let p1 = state.prob_one(q)?;
                    if p1 > 1.0 - 1e-12 {
                        state.apply_one_qubit(q, &linalg::pauli_x())?;
                    } else if p1 > 1e-12 {
                        return Err(Error::InvalidConfig(format!(
                            "forced execution cannot branch on reset of qubit {q} (p1 = {p1:.3e})"
                        )));
                    }
                }
                _ => g.apply_unitary(state)?,
            }
        }
        Ok(prob)
    }
}

/// Dense matrix of one unitary gate, assembled column by column from its
/// action on basis states.
pub fn gate_unitary(gate: &Gate, n_qubits: usize) -> Result<CMatrix> {
    gate.validate(n_qubits)?;
    let u = gate
        .target_matrix()
        .ok_or_else(|| Error::InvalidConfig(format!("{:?} has no unitary", gate.kind)))?;
    let controls = gate.controls();
    let t = gate.target();
    let dim = 1usize << n_qubits;
    let mut m = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        let active = controls.iter().all(|&(q, p)| (col >> q & 1) as u8 == p);
        if !active {
            m[(col, col)] = ONE;
            continue;
        }
        let b = col >> t & 1;
        let base = col & !(1 << t);
        m[(base, col)] += u[0][b];
        m[(base | 1 << t, col)] += u[1][b];
    }
    Ok(m)
}

/// Dense unitary of a measurement-free circuit with at most ten qubits.
pub fn circuit_unitary(c: &Circuit) -> Result<CMatrix> {
    if c.n_qubits > 10 {
        return Err(Error::InvalidConfig(format!("{} qubits is too large for a dense unitary", c.n_qubits)));
    }
    if c.has_nonunitary() {
        return Err(Error::InvalidConfig("circuit contains measure/reset".into()));
    }
    let dim = 1usize << c.n_qubits;
    let mut acc = CMatrix::identity(dim, dim);
    for g in &c.gates {
        acc = gate_unitary(g, c.n_qubits)? * acc;
    }
    Ok(acc)
}
