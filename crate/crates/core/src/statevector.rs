//! Dense state-vector register.
//!
//! Qubit 0 is the least significant bit of the amplitude index. When a
//! register carries an ancilla it is always the highest qubit.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{unitarity_defect, Matrix2, ONE, ZERO};
use crate::operators::{LocalTerm, OperatorSum};

/// Unitary gates applied between two explicit renormalisations.
const RENORM_INTERVAL: u32 = 100;
/// Largest accepted deviation of a gate matrix from unitarity.
const UNITARY_TOL: f64 = 1e-8;
const PROB_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    amps: Vec<C64>,
    n_qubits: usize,
    ancilla: Option<usize>,
    gates_since_norm: u32,
}

impl QuantumState {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn new(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    /// `|0...0>` on `n_system` qubits plus one ancilla at index `n_system`.
    pub fn with_ancilla(n_system: usize) -> Result<Self> {
        let mut s = Self::new(n_system + 1)?;
        s.ancilla = Some(n_system);
        Ok(s)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 30 {
            return Err(Error::InvalidConfig(format!("unsupported register size {n_qubits}")));
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::InvalidConfig(format!("basis index {index} >= {dim}")));
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(Self { amps, n_qubits, ancilla: None, gates_since_norm: 0 })
    }

    /// Builds a state from raw amplitudes, normalising them.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let dim = amps.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("amplitude length {dim} is not 2^n with n >= 1")));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::CorruptedState("zero or non-finite norm".into()));
        }
        let scale = 1.0 / norm.sqrt();
        Ok(Self {
            amps: amps.into_iter().map(|a| a * scale).collect(),
            n_qubits: dim.trailing_zeros() as usize,
            ancilla: None,
            gates_since_norm: 0,
        })
    }

    /// Marks the highest qubit as the ancilla.
    pub fn set_ancilla_highest(&mut self) {
        self.ancilla = Some(self.n_qubits - 1);
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn ancilla(&self) -> Option<usize> {
        self.ancilla
    }

    /// Number of system (non-ancilla) qubits.
    pub fn n_system(&self) -> usize {
        self.n_qubits - usize::from(self.ancilla.is_some())
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn renormalize(&mut self) -> Result<()> {
        let norm = self.norm_sqr();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::CorruptedState(format!("norm {norm}")));
        }
        let scale = 1.0 / norm.sqrt();
        self.amps.iter_mut().for_each(|a| *a *= scale);
        self.gates_since_norm = 0;
        Ok(())
    }

    pub fn inner(&self, other: &QuantumState) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            Err(Error::QubitOutOfRange { index: q, n_qubits: self.n_qubits })
        } else {
            Ok(())
        }
    }

    fn after_unitary(&mut self) -> Result<()> {
        self.gates_since_norm += 1;
        if self.gates_since_norm >= RENORM_INTERVAL {
            self.renormalize()?;
        }
        Ok(())
    }

    pub fn apply_one_qubit(&mut self, qubit: usize, u: &Matrix2) -> Result<()> {
        self.check_qubit(qubit)?;
        let defect = unitarity_defect(u);
        if defect > UNITARY_TOL {
            return Err(Error::NonUnitary(defect));
        }
        let bit = 1usize << qubit;
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for i in base..base + bit {
                let a0 = self.amps[i];
                let a1 = self.amps[i | bit];
                self.amps[i] = u[0][0] * a0 + u[0][1] * a1;
                self.amps[i | bit] = u[1][0] * a0 + u[1][1] * a1;
            }
            base += bit << 1;
        }
        self.after_unitary()
    }

    /// Applies `u` to `target` on the subspace where each control qubit
    /// holds its polarity bit.
    pub fn apply_controlled(&mut self, controls: &[(usize, u8)], target: usize, u: &Matrix2) -> Result<()> {
        self.check_qubit(target)?;
        if controls.is_empty() || controls.len() > 2 {
            return Err(Error::InvalidConfig(format!("{} controls; 1 or 2 supported", controls.len())));
        }
        let mut seen = 1usize << target;
        let mut mask = 0usize;
        let mut want = 0usize;
        for &(q, pol) in controls {
            self.check_qubit(q)?;
            if seen & (1 << q) != 0 {
                return Err(Error::DuplicateQubit(q));
            }
            if pol > 1 {
                return Err(Error::InvalidConfig(format!("control polarity {pol}")));
            }
            seen |= 1 << q;
            mask |= 1 << q;
            if pol == 1 {
                want |= 1 << q;
            }
        }
        let defect = unitarity_defect(u);
        if defect > UNITARY_TOL {
            return Err(Error::NonUnitary(defect));
        }
        let bit = 1usize << target;
        for i in 0..self.amps.len() {
            if i & bit != 0 || i & mask != want {
                continue;
            }
            let a0 = self.amps[i];
            let a1 = self.amps[i | bit];
            self.amps[i] = u[0][0] * a0 + u[0][1] * a1;
            self.amps[i | bit] = u[1][0] * a0 + u[1][1] * a1;
        }
        self.after_unitary()
    }

    /// Born probability that `qubit` reads 1.
    pub fn prob_one(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let bit = 1usize << qubit;
        let p1: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p1) || !p1.is_finite() {
            return Err(Error::CorruptedState(format!("p1 = {p1} on qubit {qubit}")));
        }
        Ok(p1.clamp(0.0, 1.0))
    }

    /// Projects `qubit` onto `outcome` and returns the probability of that
    /// outcome. The state is renormalised when the probability is nonzero;
    /// a zero-probability projection leaves the zero vector, which callers
    /// must discard.
    pub fn project(&mut self, qubit: usize, outcome: u8) -> Result<f64> {
        let p1 = self.prob_one(qubit)?;
        let p = if outcome == 1 { p1 } else { 1.0 - p1 };
        let bit = 1usize << qubit;
        let keep = if outcome == 1 { bit } else { 0 };
        let scale = if p > 0.0 { 1.0 / p.sqrt() } else { 0.0 };
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & bit == keep {
                *a *= scale;
            } else {
                *a = ZERO;
            }
        }
        self.gates_since_norm = 0;
        Ok(p)
    }

    pub fn measure_qubit<R: Rng + ?Sized>(&mut self, qubit: usize, rng: &mut R) -> Result<u8> {
        let p1 = self.prob_one(qubit)?;
        let u: f64 = rng.random();
        let outcome = u8::from(u < p1);
        self.project(qubit, outcome)?;
        Ok(outcome)
    }

    /// Measures `qubit` and flips it back to `|0>` when the outcome was 1.
    pub fn reset_qubit<R: Rng + ?Sized>(&mut self, qubit: usize, rng: &mut R) -> Result<()> {
        if self.measure_qubit(qubit, rng)? == 1 {
            self.flip(qubit);
        }
        Ok(())
    }

    fn flip(&mut self, qubit: usize) {
        let bit = 1usize << qubit;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                self.amps.swap(i, i | bit);
            }
        }
    }

    /// `<psi| term |psi>` for a Hermitian term.
    pub fn expectation_local(&self, term: &LocalTerm) -> Result<f64> {
        let mut out = vec![ZERO; self.amps.len()];
        term.apply_into(&self.amps, &mut out)?;
        let value: C64 = self.amps.iter().zip(&out).map(|(a, b)| a.conj() * b).sum();
        if value.im.abs() > 1e-8 {
            return Err(Error::Numerical(format!(
                "expectation of `{}` has imaginary part {:.3e}",
                term.label, value.im
            )));
        }
        Ok(value.re)
    }

    pub fn expectation_sum(&self, op: &OperatorSum) -> Result<f64> {
        op.terms.iter().map(|t| self.expectation_local(t)).sum()
    }

    /// Multinomial sample of full-register basis indices.
    pub fn sample_indices<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> BTreeMap<usize, usize> {
        let mut cumulative = Vec::with_capacity(self.amps.len());
        let mut acc = 0.0;
        for a in &self.amps {
            acc += a.norm_sqr();
            cumulative.push(acc);
        }
        let mut counts = BTreeMap::new();
        for _ in 0..shots {
            let u: f64 = rng.random::<f64>() * acc;
            let idx = cumulative.partition_point(|&c| c <= u).min(self.amps.len() - 1);
            *counts.entry(idx).or_insert(0) += 1;
        }
        counts
    }

    /// Multinomial sample keyed by bitstring, most significant qubit first.
    pub fn sample_bitstrings<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> BTreeMap<String, usize> {
        self.sample_indices(shots, rng)
            .into_iter()
            .map(|(idx, c)| (bitstring(idx, self.n_qubits), c))
            .collect()
    }

    /// The system register with the ancilla traced out. The ancilla must be
    /// in `|0>`.
    pub fn system_state(&self) -> Result<QuantumState> {
        let Some(a) = self.ancilla else {
            return Ok(self.clone());
        };
        let p1 = self.prob_one(a)?;
        if p1 > 1e-12 {
            return Err(Error::CorruptedState(format!("ancilla excited with probability {p1:.3e}")));
        }
        let bit = 1usize << a;
        let amps: Vec<C64> = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit == 0)
            .map(|(_, v)| *v)
            .collect();
        QuantumState::from_amplitudes(amps)
    }
}

/// Bitstring of `index` over `n` qubits, highest qubit first.
pub fn bitstring(index: usize, n: usize) -> String {
    (0..n).rev().map(|q| if index >> q & 1 == 1 { '1' } else { '0' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hadamard, pauli_x, ry, CMatrix};
    use crate::operators::LocalTerm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn assert_amps(s: &QuantumState, expected: &[C64], tol: f64) {
        for (a, b) in s.amplitudes().iter().zip(expected) {
            assert!((a - b).norm() < tol, "{a} vs {b}");
        }
    }

    /// Dense 2^n matrix of a gate on `qubit`, assembled by Kronecker products.
    fn kron_embed(n: usize, qubit: usize, u: &Matrix2) -> CMatrix {
        let mut m = CMatrix::identity(1, 1);
        for q in (0..n).rev() {
            let f = if q == qubit { crate::linalg::to_cmatrix(u) } else { CMatrix::identity(2, 2) };
            m = m.kronecker(&f);
        }
        m
    }

    #[test]
    fn hadamard_on_zero() {
        let mut s = QuantumState::new(1).unwrap();
        s.apply_one_qubit(0, &hadamard()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_amps(&s, &[c(h), c(h)], 1e-15);
    }

    #[test]
    fn x_on_qubit_one_is_little_endian() {
        let mut s = QuantumState::new(2).unwrap();
        s.apply_one_qubit(1, &pauli_x()).unwrap();
        // |q1 q0> = |10> is index 2
        assert_amps(&s, &[c(0.0), c(0.0), c(1.0), c(0.0)], 1e-15);
    }

    #[test]
    fn ry_matches_dense_product() {
        let theta = std::f64::consts::PI / 3.0;
        let mut s = QuantumState::basis(1, 1).unwrap();
        s.apply_one_qubit(0, &ry(theta)).unwrap();
        let dense = crate::linalg::to_cmatrix(&ry(theta)) * nalgebra::DVector::from_vec(vec![c(0.0), c(1.0)]);
        assert_amps(&s, dense.as_slice(), 1e-15);
        assert!((s.amplitudes()[0].re + 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_operands() {
        let mut s = QuantumState::new(2).unwrap();
        assert!(matches!(s.apply_one_qubit(2, &pauli_x()), Err(Error::QubitOutOfRange { .. })));
        let bad = [[c(1.0), c(1.0)], [c(0.0), c(1.0)]];
        assert!(matches!(s.apply_one_qubit(0, &bad), Err(Error::NonUnitary(_))));
        assert!(matches!(s.apply_controlled(&[(0, 1)], 0, &pauli_x()), Err(Error::DuplicateQubit(0))));
        assert!(matches!(
            s.apply_controlled(&[(1, 1), (1, 0)], 0, &pauli_x()),
            Err(Error::DuplicateQubit(1))
        ));
    }

    #[test]
    fn cnot_and_open_control() {
        // control q1, target q0: |10> -> |11>
        let mut s = QuantumState::basis(2, 0b10).unwrap();
        s.apply_controlled(&[(1, 1)], 0, &pauli_x()).unwrap();
        assert_amps(&s, &[c(0.0), c(0.0), c(0.0), c(1.0)], 1e-15);
        let mut s = QuantumState::basis(2, 0b10).unwrap();
        s.apply_controlled(&[(1, 0)], 0, &pauli_x()).unwrap();
        assert_amps(&s, &[c(0.0), c(0.0), c(1.0), c(0.0)], 1e-15);
    }

    #[test]
    fn ccry_matches_dense_block() {
        let theta = 0.7;
        let mut s = QuantumState::basis(3, 0b110).unwrap();
        // controls q1, q2 (both 1), target q0
        s.apply_controlled(&[(1, 1), (2, 1)], 0, &ry(theta)).unwrap();
        // dense 8x8: identity except the |11x> block
        let mut dense = CMatrix::identity(8, 8);
        let r = ry(theta);
        for i in 0..2 {
            for j in 0..2 {
                dense[(6 + i, 6 + j)] = r[i][j];
            }
        }
        let mut e = nalgebra::DVector::from_element(8, c(0.0));
        e[6] = c(1.0);
        let expected = dense * e;
        assert_amps(&s, expected.as_slice(), 1e-15);
    }

    #[test]
    fn measurement_of_basis_state_is_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = QuantumState::basis(1, 1).unwrap();
        for _ in 0..50 {
            assert_eq!(s.measure_qubit(0, &mut rng).unwrap(), 1);
        }
        assert_amps(&s, &[c(0.0), c(1.0)], 1e-15);
    }

    fn born_frequency(p1: f64, draws: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let proto = QuantumState::from_amplitudes(vec![c((1.0 - p1).sqrt()), c(p1.sqrt())]).unwrap();
        let mut ones = 0usize;
        for _ in 0..draws {
            let mut s = proto.clone();
            ones += s.measure_qubit(0, &mut rng).unwrap() as usize;
            assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        }
        let f = ones as f64 / draws as f64;
        let sigma = (p1 * (1.0 - p1) / draws as f64).sqrt();
        assert!((f - p1).abs() < 4.0 * sigma, "freq {f} vs {p1}");
    }

    #[test]
    fn measurement_follows_born_rule() {
        born_frequency(0.5, 20_000);
        born_frequency(0.2, 20_000);
    }

    #[test]
    fn reset_always_returns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut s = QuantumState::new(1).unwrap();
            s.apply_one_qubit(0, &hadamard()).unwrap();
            s.reset_qubit(0, &mut rng).unwrap();
            assert_amps(&s, &[c(1.0), c(0.0)], 1e-15);
        }
        let mut s = QuantumState::basis(1, 1).unwrap();
        s.reset_qubit(0, &mut rng).unwrap();
        assert_amps(&s, &[c(1.0), c(0.0)], 1e-15);
    }

    #[test]
    fn reset_of_entangled_pair_matches_projector_branches() {
        // (|00> + |11>)/sqrt2, reset qubit 0. Branch 0: P0 psi / |.| = |00>;
        // branch 1: X_0 P1 psi / |.| = |10>.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = vec![c(h), c(0.0), c(0.0), c(h)];
        let mut seen = [0usize; 2];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let mut s = QuantumState::from_amplitudes(psi.clone()).unwrap();
            s.reset_qubit(0, &mut rng).unwrap();
            let a = s.amplitudes();
            if (a[0] - c(1.0)).norm() < 1e-14 {
                seen[0] += 1;
            } else {
                assert!((a[2] - c(1.0)).norm() < 1e-14, "unexpected branch {a:?}");
                seen[1] += 1;
            }
        }
        let sigma = (0.25f64 / 2000.0).sqrt();
        assert!((seen[0] as f64 / 2000.0 - 0.5).abs() < 4.0 * sigma);
    }

    #[test]
    fn local_expectations() {
        let z = LocalTerm::single(0, crate::linalg::pauli_z(), c(1.0), "z");
        assert!((QuantumState::new(1).unwrap().expectation_local(&z).unwrap() - 1.0).abs() < 1e-15);

        let n = LocalTerm::single(0, crate::operators::number(), c(1.0), "n");
        let mut plus = QuantumState::new(1).unwrap();
        plus.apply_one_qubit(0, &hadamard()).unwrap();
        assert!((plus.expectation_local(&n).unwrap() - 0.5).abs() < 1e-15);

        // <n0 n1> on GHZ: dense oracle gives |<00|psi>|^2 = 0.5
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let ghz = QuantumState::from_amplitudes(vec![c(h), c(0.0), c(0.0), c(h)]).unwrap();
        let nn = LocalTerm::new(vec![0, 1], crate::operators::kron_local(&[crate::operators::number(), crate::operators::number()]), c(1.0), "nn").unwrap();
        let dense = nn.dense(2).unwrap();
        let v = nalgebra::DVector::from_column_slice(ghz.amplitudes());
        let oracle = (v.adjoint() * &dense * &v)[(0, 0)].re;
        assert!((ghz.expectation_local(&nn).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sampling_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = QuantumState::new(2).unwrap();
        let counts = s.sample_bitstrings(8192, &mut rng);
        assert_eq!(counts.get("00"), Some(&8192));

        let mut plus = QuantumState::new(1).unwrap();
        plus.apply_one_qubit(0, &hadamard()).unwrap();
        let counts = plus.sample_bitstrings(8192, &mut rng);
        let zeros = *counts.get("0").unwrap() as f64;
        assert_eq!(counts.values().sum::<usize>(), 8192);
        assert!((zeros - 4096.0).abs() < 4.0 * (8192.0f64 * 0.25).sqrt());

        // W state (|001> + |010> + |100>)/sqrt3
        let t = 1.0 / 3f64.sqrt();
        let mut amps = vec![c(0.0); 8];
        amps[1] = c(t);
        amps[2] = c(t);
        amps[4] = c(t);
        let w = QuantumState::from_amplitudes(amps).unwrap();
        let shots = 30_000;
        let counts = w.sample_bitstrings(shots, &mut rng);
        let sigma = (shots as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for key in ["001", "010", "100"] {
            let k = *counts.get(key).unwrap() as f64;
            assert!((k - shots as f64 / 3.0).abs() < 4.0 * sigma, "{key}: {k}");
        }
        assert_eq!(counts.len(), 3);
    }

    #[test]
    fn gate_by_gate_matches_dense_unitary() {
        let n = 3;
        let mut s = QuantumState::new(n).unwrap();
        let mut dense = CMatrix::identity(8, 8);
        let gates = [(0, ry(0.3)), (2, hadamard()), (1, ry(-1.1)), (0, hadamard())];
        for (q, u) in &gates {
            s.apply_one_qubit(*q, u).unwrap();
            dense = kron_embed(n, *q, u) * dense;
        }
        let col = dense.column(0);
        assert_amps(&s, col.as_slice(), 1e-14);
    }

    #[test]
    fn system_state_drops_ancilla() {
        let mut s = QuantumState::with_ancilla(2).unwrap();
        s.apply_one_qubit(0, &pauli_x()).unwrap();
        let sys = s.system_state().unwrap();
        assert_eq!(sys.n_qubits(), 2);
        assert_amps(&sys, &[c(0.0), c(1.0), c(0.0), c(0.0)], 1e-15);
        s.apply_one_qubit(2, &hadamard()).unwrap();
        assert!(s.system_state().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn norm_is_conserved(gates in proptest::collection::vec((0usize..4, -3.2f64..3.2, 0u8..3), 1..300)) {
                let mut s = QuantumState::new(4).unwrap();
                for (q, theta, kind) in &gates {
                    let u = match kind {
                        0 => ry(*theta),
                        1 => crate::linalg::rz(*theta),
                        _ => crate::linalg::rx(*theta),
                    };
                    s.apply_one_qubit(*q, &u).unwrap();
                    if *q > 0 {
                        s.apply_controlled(&[(q - 1, 1)], *q, &pauli_x()).unwrap();
                    }
                }
                prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9 * (2 * gates.len()) as f64);
            }
        }
    }
}
