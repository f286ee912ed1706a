//! Lowering of controlled rotations to the native gate set
//! `{Rx, Ry, Rz, H, S, Sdg, X, CNOT, Measure, Reset}`.

use super::{Circuit, Gate, GateKind};

/// Closed-control `CRy(theta)` as `Ry(theta/2) CNOT Ry(-theta/2) CNOT`.
fn cry_closed(out: &mut Vec<Gate>, control: usize, target: usize, theta: f64) {
    out.push(Gate::rot(GateKind::Ry, target, theta / 2.0));
    out.push(Gate::cnot(control, target));
    out.push(Gate::rot(GateKind::Ry, target, -theta / 2.0));
    out.push(Gate::cnot(control, target));
}

fn with_open_controls(out: &mut Vec<Gate>, open: &[usize], body: impl FnOnce(&mut Vec<Gate>)) {
    for &q in open {
        out.push(Gate::one(GateKind::X, q));
    }
    body(out);
    for &q in open {
        out.push(Gate::one(GateKind::X, q));
    }
}

fn lower_gate(g: &Gate, out: &mut Vec<Gate>) {
    match g.kind {
        GateKind::CRy(p) => {
            let (c, t) = (g.qubits[0], g.qubits[1]);
            let open: Vec<usize> = if p == 0 { vec![c] } else { Vec::new() };
            with_open_controls(out, &open, |out| cry_closed(out, c, t, g.angle));
        }
        GateKind::CRx(p) => {
            // Rx(t) = Sdg Ry(t) S
            let (c, t) = (g.qubits[0], g.qubits[1]);
            let open: Vec<usize> = if p == 0 { vec![c] } else { Vec::new() };
            with_open_controls(out, &open, |out| {
                out.push(Gate::one(GateKind::S, t));
                cry_closed(out, c, t, g.angle);
                out.push(Gate::one(GateKind::Sdg, t));
            });
        }
        GateKind::CCRy([p0, p1]) => {
            // controlled-V ladder with V = Ry(theta/2)
            let (c1, c2, t) = (g.qubits[0], g.qubits[1], g.qubits[2]);
            let open: Vec<usize> = [(c1, p0), (c2, p1)].iter().filter(|(_, p)| *p == 0).map(|(q, _)| *q).collect();
            let half = g.angle / 2.0;
            with_open_controls(out, &open, |out| {
                cry_closed(out, c2, t, half);
                out.push(Gate::cnot(c1, c2));
                cry_closed(out, c2, t, -half);
                out.push(Gate::cnot(c1, c2));
                cry_closed(out, c1, t, half);
            });
        }
        _ => out.push(g.clone()),
    }
}

/// Rewrites every controlled rotation into native gates. Native gates,
/// measurements and resets pass through unchanged.
///
/// A `CRy` costs 2 CNOTs, a `CRx` 2 CNOTs plus an `S`/`Sdg` pair and a
/// `CCRy` 8 CNOTs.
pub fn lower_to_native(c: &Circuit) -> Circuit {
    let mut gates = Vec::with_capacity(c.len());
    for g in c.gates() {
        lower_gate(g, &mut gates);
    }
    let mut out = Circuit::new(c.n_qubits());
    for g in gates {
        out.push(g).expect("lowering preserves operand validity");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{circuit_unitary, jump_block, SpinBasis};
    use crate::linalg::phase_insensitive_distance;
    use crate::operators::LindbladDescriptor;
    use proptest::prelude::*;

    fn check(c: &Circuit) {
        let lowered = lower_to_native(c);
        assert!(lowered.is_native());
        assert_eq!(lowered.counts(), &lowered.recount());
        let d = phase_insensitive_distance(&circuit_unitary(&lowered).unwrap(), &circuit_unitary(c).unwrap());
        assert!(d < 1e-10, "distance {d}");
    }

    #[test]
    fn cry_costs_two_cnots() {
        for p in [0u8, 1] {
            let mut c = Circuit::new(2);
            c.push(Gate::new(GateKind::CRy(p), &[1, 0], 0.83)).unwrap();
            check(&c);
            let l = lower_to_native(&c);
            assert_eq!(l.count_kind(|k| *k == GateKind::Cnot), 2);
            assert_eq!(l.count_kind(|k| *k == GateKind::Ry), 2);
        }
    }

    #[test]
    fn ccry_all_polarities() {
        for pols in [[0u8, 0], [0, 1], [1, 0], [1, 1]] {
            for ops in [[0usize, 1, 2], [2, 0, 1], [1, 2, 0]] {
                let mut c = Circuit::new(3);
                c.push(Gate::new(GateKind::CCRy(pols), &ops, -1.234)).unwrap();
                check(&c);
                assert_eq!(lower_to_native(&c).count_kind(|k| *k == GateKind::Cnot), 8);
            }
        }
    }

    #[test]
    fn crx_lowering() {
        for p in [0u8, 1] {
            let mut c = Circuit::new(3);
            c.push(Gate::new(GateKind::CRx(p), &[2, 0], 2.1)).unwrap();
            check(&c);
        }
    }

    #[test]
    fn native_is_unchanged() {
        let mut c = Circuit::new(2);
        c.push(Gate::one(GateKind::H, 0)).unwrap();
        c.push(Gate::cnot(0, 1)).unwrap();
        c.push(Gate::rot(GateKind::Rz, 1, 0.3)).unwrap();
        c.push(Gate::one(GateKind::Measure(0), 1)).unwrap();
        c.push(Gate::one(GateKind::Reset, 1)).unwrap();
        assert_eq!(lower_to_native(&c), c);
    }

    #[test]
    fn jump_blocks_keep_measurements() {
        let ld = LindbladDescriptor::branching(1, 0, 2.0).unwrap();
        let c = jump_block(&ld, 0.1, 2, 3, 4, SpinBasis::UpIsZero).unwrap();
        let l = lower_to_native(&c);
        let tail: Vec<_> = l.gates()[l.len() - 2..].to_vec();
        assert_eq!(tail[0].kind, GateKind::Measure(4));
        assert_eq!(tail[0].qubits, vec![2]);
        assert_eq!(tail[1].kind, GateKind::Reset);
    }

    fn arb_gate(n: usize) -> impl Strategy<Value = Gate> {
        let kinds = prop_oneof![
            Just(GateKind::Rx),
            Just(GateKind::Ry),
            Just(GateKind::Rz),
            Just(GateKind::H),
            Just(GateKind::S),
            Just(GateKind::X),
            Just(GateKind::Cnot),
            (0u8..2).prop_map(GateKind::CRx),
            (0u8..2).prop_map(GateKind::CRy),
            (0u8..2, 0u8..2).prop_map(|(a, b)| GateKind::CCRy([a, b])),
        ];
        (kinds, Just((0..n).collect::<Vec<usize>>()).prop_shuffle(), -6.0f64..6.0)
            .prop_map(|(k, qs, a)| Gate::new(k, &qs[..k.arity()], if k.has_angle() { a } else { 0.0 }))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn lowering_preserves_unitary(gates in proptest::collection::vec(arb_gate(4), 1..12)) {
            let mut c = Circuit::new(4);
            for g in gates {
                c.push(g).unwrap();
            }
            let lowered = lower_to_native(&c);
            prop_assert!(lowered.is_native());
            let d = phase_insensitive_distance(&circuit_unitary(&lowered).unwrap(), &circuit_unitary(&c).unwrap());
            prop_assert!(d < 1e-10);
        }
    }
}
