//! Exact synthesis of one- and two-qubit exponentials and the symmetric
//! Trotter step built from them.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;

use super::{Circuit, Gate, GateKind};
use crate::error::{Error, Result};
use crate::linalg::{self, dagger2, mul2, Matrix2, ZERO};
use crate::operators::{kron_local, number, vacancy, LocalTerm, OperatorSum};

const COEFF_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> Matrix2 {
        match self {
            Pauli::I => linalg::identity2(),
            Pauli::X => linalg::pauli_x(),
            Pauli::Y => linalg::pauli_y(),
            Pauli::Z => linalg::pauli_z(),
        }
    }
}

/// Real Pauli expansion `coefficient * matrix = sum_P c_P P` of a Hermitian
/// 1- or 2-site term. Entry `j` of each key is the Pauli on `sites[j]`.
pub fn pauli_decompose(term: &LocalTerm) -> Result<Vec<(Vec<Pauli>, f64)>> {
    let k = term.sites.len();
    if k > 2 {
        return Err(Error::UnsupportedTerm {
            label: term.label.clone(),
            reason: format!("{k}-site terms cannot be exponentiated by the two-qubit synthesiser"),
        });
    }
    let dim = term.dim();
    let mut out = Vec::new();
    let mut key = vec![Pauli::I; k];
    for code in 0..4usize.pow(k as u32) {
        for (j, slot) in key.iter_mut().enumerate() {
            *slot = Pauli::ALL[code >> (2 * j) & 3];
        }
        let p = kron_local(&key.iter().map(|p| p.matrix()).collect::<Vec<_>>());
        // Tr(P^dag M) / dim, Paulis are Hermitian
        let c: C64 = (0..dim)
            .flat_map(|r| (0..dim).map(move |cc| (r, cc)))
            .map(|(r, cc)| p[cc * dim + r].conj() * term.entry(cc, r))
            .sum::<C64>()
            / dim as f64;
        if c.im.abs() > 1e-12 {
            return Err(Error::UnsupportedTerm {
                label: term.label.clone(),
                reason: "term is not Hermitian".into(),
            });
        }
        if c.re.abs() > COEFF_TOL {
            out.push((key.clone(), c.re));
        }
    }
    Ok(out)
}

/// ZYZ Euler angles `(a, b, c)` with `u = e^{i phi} Rz(a) Ry(b) Rz(c)`.
fn euler_zyz(u: &Matrix2) -> (f64, f64, f64) {
    let det = u[0][0] * u[1][1] - u[0][1] * u[1][0];
    let phase = det.sqrt();
    let v: Matrix2 = [[u[0][0] / phase, u[0][1] / phase], [u[1][0] / phase, u[1][1] / phase]];
    let b = 2.0 * v[1][0].norm().atan2(v[0][0].norm());
    let (sum, diff) = if v[1][0].norm() < 1e-14 {
        (2.0 * v[1][1].arg(), 0.0)
    } else if v[0][0].norm() < 1e-14 {
        (0.0, 2.0 * v[1][0].arg())
    } else {
        (2.0 * v[1][1].arg(), 2.0 * v[1][0].arg())
    };
    ((sum + diff) / 2.0, b, (sum - diff) / 2.0)
}

/// Gates for `exp(-i tau (a X + b Y + c Z))` on `q`.
pub fn single_qubit_exponential(q: usize, coeffs: [f64; 3], tau: f64) -> Vec<Gate> {
    let nonzero: Vec<usize> = (0..3).filter(|&i| coeffs[i].abs() > COEFF_TOL).collect();
    match nonzero.as_slice() {
        [] => Vec::new(),
        [i] => {
            let kind = [GateKind::Rx, GateKind::Ry, GateKind::Rz][*i];
            vec![Gate::rot(kind, q, 2.0 * coeffs[*i] * tau)]
        }
        _ => {
            let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
            let (s, c) = (norm * tau).sin_cos();
            let [x, y, z] = coeffs.map(|v| v / norm);
            // cos(|v| tau) I - i sin(|v| tau) (n . sigma)
            let u: Matrix2 = [
                [C64::new(c, -s * z), C64::new(-s * y, -s * x)],
                [C64::new(s * y, -s * x), C64::new(c, s * z)],
            ];
            let (a, b, cc) = euler_zyz(&u);
            vec![Gate::rot(GateKind::Rz, q, cc), Gate::rot(GateKind::Ry, q, b), Gate::rot(GateKind::Rz, q, a)]
        }
    }
}

/// Single-qubit Clifford as a time-ordered gate list over {H, S, Sdg}.
#[derive(Clone, Debug)]
struct Clifford {
    gates: Vec<GateKind>,
    matrix: Matrix2,
}

fn clifford_candidates() -> Vec<Clifford> {
    let base = [GateKind::H, GateKind::S, GateKind::Sdg];
    let mut out = vec![Clifford { gates: Vec::new(), matrix: linalg::identity2() }];
    let mut frontier = out.clone();
    for _ in 0..3 {
        let mut next = Vec::new();
        for c in &frontier {
            for g in base {
                let m = Gate::one(g, 0).target_matrix().unwrap();
                let mut gates = c.gates.clone();
                gates.push(g);
                next.push(Clifford { gates, matrix: mul2(&m, &c.matrix) });
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Sign `s` with `m == s * target`, if any.
fn signed_match(m: &Matrix2, target: Pauli) -> Option<f64> {
    let t = target.matrix();
    for s in [1.0, -1.0] {
        let ok = (0..2).all(|i| (0..2).all(|j| (m[i][j] - t[i][j] * s).norm() < 1e-12));
        if ok {
            return Some(s);
        }
    }
    None
}

/// Finds a Clifford `V` with `V a V^dag = s_a Z` and, when given,
/// `V b V^dag = s_b X`.
fn find_basis_change(a: Pauli, b: Option<Pauli>) -> Option<(Clifford, f64, f64)> {
    clifford_candidates().into_iter().find_map(|c| {
        let vd = dagger2(&c.matrix);
        let conj = |p: Pauli| mul2(&mul2(&c.matrix, &p.matrix()), &vd);
        let sa = signed_match(&conj(a), Pauli::Z)?;
        let sb = match b {
            Some(b) => signed_match(&conj(b), Pauli::X)?,
            None => 1.0,
        };
        Some((c, sa, sb))
    })
}

fn emit_clifford(c: &mut Circuit, q: usize, cl: &Clifford, inverse: bool) -> Result<()> {
    let invert = |g: GateKind| match g {
        GateKind::S => GateKind::Sdg,
        GateKind::Sdg => GateKind::S,
        other => other,
    };
    if inverse {
        for &g in cl.gates.iter().rev() {
            c.push(Gate::one(invert(g), q))?;
        }
    } else {
        for &g in &cl.gates {
            c.push(Gate::one(g, q))?;
        }
    }
    Ok(())
}

/// Detects `c * |b><b|_ctrl (x) X_tgt`; returns `(ctrl_local, polarity, c)`.
fn controlled_x_form(term: &LocalTerm) -> Option<(usize, u8, f64)> {
    if term.sites.len() != 2 {
        return None;
    }
    let d = term.dim();
    for ctrl in 0..2 {
        for (pol, proj) in [(0u8, number()), (1u8, vacancy())] {
            let mut factors = [linalg::pauli_x(); 2];
            factors[ctrl] = proj;
            let cand = kron_local(&factors);
            let norm: f64 = cand.iter().map(|v| v.norm_sqr()).sum();
            let overlap: C64 = (0..d * d).map(|i| cand[i].conj() * term.coefficient * term.matrix[i]).sum::<C64>() / norm;
            if overlap.im.abs() > 1e-12 {
                continue;
            }
            let residual = (0..d * d)
                .map(|i| (term.coefficient * term.matrix[i] - cand[i] * overlap.re).norm())
                .fold(0.0, f64::max);
            if residual < 1e-12 {
                return Some((ctrl, pol, overlap.re));
            }
        }
    }
    None
}

fn unsupported(term: &LocalTerm, reason: &str) -> Error {
    Error::UnsupportedTerm { label: term.label.clone(), reason: reason.into() }
}

/// Exact circuit for `exp(-i coefficient * matrix * tau)` of a two-site
/// term, up to global phase.
///
/// Supported: a projector-controlled X (`n (x) x`, emitted as one
/// controlled-Rx), a single two-qubit Pauli string (`CNOT Rz CNOT` after a
/// local Clifford basis change, e.g. `z (x) z`), and a sum of two commuting
/// two-qubit Pauli strings such as `ZX + XZ`, which is rotated to
/// `ZZ + XX` and then to `Z (x) I + I (x) X` by one CNOT.
pub fn synthesize_two_qubit_exponential(term: &LocalTerm, tau: f64) -> Result<Circuit> {
    if term.sites.len() != 2 {
        return Err(unsupported(term, "not a two-site term"));
    }
    let n = term.sites.iter().max().unwrap() + 1;
    let mut c = Circuit::new(n);
    if let Some((ctrl, pol, coeff)) = controlled_x_form(term) {
        c.push(Gate::new(GateKind::CRx(pol), &[term.sites[ctrl], term.sites[1 - ctrl]], 2.0 * coeff * tau))?;
        return Ok(c);
    }
    let parts = pauli_decompose(term)?;
    if parts.iter().any(|(k, _)| k.iter().filter(|p| **p != Pauli::I).count() == 1) {
        return Err(unsupported(term, "mixes single-site and two-site parts"));
    }
    let strings: Vec<(Vec<Pauli>, f64)> = parts.into_iter().filter(|(k, _)| k.iter().all(|p| *p != Pauli::I)).collect();
    let (q0, q1) = (term.sites[0], term.sites[1]);
    match strings.as_slice() {
        [] => Ok(c),
        [(key, coeff)] => {
            let (v0, s0, _) = find_basis_change(key[0], None).expect("every Pauli maps to Z");
            let (v1, s1, _) = find_basis_change(key[1], None).expect("every Pauli maps to Z");
            emit_clifford(&mut c, q0, &v0, false)?;
            emit_clifford(&mut c, q1, &v1, false)?;
            c.push(Gate::cnot(q0, q1))?;
            c.push(Gate::rot(GateKind::Rz, q1, 2.0 * s0 * s1 * coeff * tau))?;
            c.push(Gate::cnot(q0, q1))?;
            emit_clifford(&mut c, q0, &v0, true)?;
            emit_clifford(&mut c, q1, &v1, true)?;
            Ok(c)
        }
        [(ka, ca), (kb, cb)] => {
            if ka[0] == kb[0] || ka[1] == kb[1] {
                return Err(unsupported(term, "Pauli strings do not commute"));
            }
            let (v0, sa0, sb0) = find_basis_change(ka[0], Some(kb[0])).expect("anticommuting pair maps to (Z, X)");
            let (v1, sa1, sb1) = find_basis_change(ka[1], Some(kb[1])).expect("anticommuting pair maps to (Z, X)");
            // now ca' Z0 Z1 + cb' X0 X1; CNOT(q1 -> q0) maps ZZ -> Z0, XX -> X1
            let za = sa0 * sa1 * ca;
            let xb = sb0 * sb1 * cb;
            emit_clifford(&mut c, q0, &v0, false)?;
            emit_clifford(&mut c, q1, &v1, false)?;
            c.push(Gate::cnot(q1, q0))?;
            c.push(Gate::rot(GateKind::Rz, q0, 2.0 * za * tau))?;
            c.push(Gate::rot(GateKind::Rx, q1, 2.0 * xb * tau))?;
            c.push(Gate::cnot(q1, q0))?;
            emit_clifford(&mut c, q0, &v0, true)?;
            emit_clifford(&mut c, q1, &v1, true)?;
            Ok(c)
        }
        _ => Err(unsupported(term, "more than two two-qubit Pauli strings")),
    }
}

/// Symmetric Trotter step approximating `exp(-i H tau)` on an
/// `n_qubits` register:
/// single-site half steps, even bonds half, odd bonds full, even bonds half,
/// single-site half steps.
///
/// Every term is split into its single-site and nearest-neighbour Pauli
/// parts; the single-site parts of all terms on a site form one exponential
/// and the two-site parts on a bond form one exactly synthesised bond
/// exponential. A Hamiltonian with a single term is exponentiated directly.
pub fn trotter_step(h: &OperatorSum, tau: f64, n_qubits: usize) -> Result<Circuit> {
    let mut c = Circuit::new(n_qubits);
    if h.is_empty() || tau == 0.0 {
        return Ok(c);
    }
    for t in &h.terms {
        if t.sites.len() > 2 {
            return Err(unsupported(t, "trotter_step accepts only 1- and 2-site terms"));
        }
        if let Some(&s) = t.sites.iter().find(|&&s| s >= n_qubits) {
            return Err(Error::QubitOutOfRange { index: s, n_qubits });
        }
        if t.sites.len() == 2 && t.sites[0].abs_diff(t.sites[1]) != 1 {
            return Err(unsupported(t, "two-site terms must act on nearest neighbours"));
        }
    }
    if let [single] = h.terms.as_slice() {
        if single.sites.len() == 2 {
            c.append(&synthesize_two_qubit_exponential(single, tau)?)?;
            return Ok(c);
        }
    }

    let mut singles: BTreeMap<usize, [f64; 3]> = BTreeMap::new();
    let mut bonds: BTreeMap<usize, Vec<C64>> = BTreeMap::new();
    for t in &h.terms {
        for (key, coeff) in pauli_decompose(t)? {
            let active: Vec<(usize, Pauli)> =
                key.iter().zip(&t.sites).filter(|(p, _)| **p != Pauli::I).map(|(p, s)| (*s, *p)).collect();
            match active.as_slice() {
                [] => {}
                [(s, p)] => {
                    let e = singles.entry(*s).or_insert([0.0; 3]);
                    e[*p as usize - 1] += coeff;
                }
                _ => {
                    let (lo, hi) = if active[0].0 < active[1].0 { (active[0], active[1]) } else { (active[1], active[0]) };
                    let m = kron_local(&[lo.1.matrix(), hi.1.matrix()]);
                    let acc = bonds.entry(lo.0).or_insert_with(|| vec![ZERO; 16]);
                    for (a, v) in acc.iter_mut().zip(m) {
                        *a += v * coeff;
                    }
                }
            }
        }
    }
    let bond_circuit = |lo: usize, tau: f64| -> Result<Circuit> {
        let term = LocalTerm::new(vec![lo, lo + 1], bonds[&lo].clone(), C64::new(1.0, 0.0), &format!("bond({},{})", lo, lo + 1))?;
        synthesize_two_qubit_exponential(&term, tau)
    };
    let half_singles = |c: &mut Circuit| -> Result<()> {
        for (&q, &coeffs) in &singles {
            for g in single_qubit_exponential(q, coeffs, tau / 2.0) {
                c.push(g)?;
            }
        }
        Ok(())
    };
    let even: Vec<usize> = bonds.keys().copied().filter(|lo| lo % 2 == 0).collect();
    let odd: Vec<usize> = bonds.keys().copied().filter(|lo| lo % 2 == 1).collect();

    half_singles(&mut c)?;
    if odd.is_empty() {
        for &lo in &even {
            c.append(&bond_circuit(lo, tau)?)?;
        }
    } else if even.is_empty() {
        for &lo in &odd {
            c.append(&bond_circuit(lo, tau)?)?;
        }
    } else {
        for &lo in &even {
            c.append(&bond_circuit(lo, tau / 2.0)?)?;
        }
        for &lo in &odd {
            c.append(&bond_circuit(lo, tau)?)?;
        }
        for &lo in &even {
            c.append(&bond_circuit(lo, tau / 2.0)?)?;
        }
    }
    half_singles(&mut c)?;
    Ok(c)
}
