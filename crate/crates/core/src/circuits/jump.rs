//! Ancilla-assisted Lindblad jump blocks.

use super::{Circuit, Gate, GateKind};
use crate::error::{Error, Result};
use crate::operators::{JumpKind, LindbladDescriptor};

/// Which computational bit encodes the up (active) spin on system qubits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpinBasis {
    /// `|0>` is up; the convention of [`crate::operators`].
    #[default]
    UpIsZero,
    /// `|1>` is up.
    UpIsOne,
}

impl SpinBasis {
    pub fn up_bit(self) -> u8 {
        match self {
            Self::UpIsZero => 0,
            Self::UpIsOne => 1,
        }
    }

    pub fn down_bit(self) -> u8 {
        1 - self.up_bit()
    }
}

/// Ancilla rotation angle `2 asin(sqrt(rate * dt))`.
pub fn jump_angle(rate: f64, dt: f64) -> Result<f64> {
    let p = rate * dt;
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::RateTooLarge(p));
    }
    Ok(2.0 * p.sqrt().asin())
}

/// Conditional rotation onto `ancilla`, a CNOT from the ancilla back onto
/// the flipped site, then `Measure(slot)` and `Reset` of the ancilla.
///
/// On measuring 1 the system carries `L|psi>` (up to normalisation); on 0 it
/// carries `(1 - (1 - sqrt(1 - rate dt)) L^dag L / rate)|psi>`.
pub fn jump_block(
    ld: &LindbladDescriptor,
    dt: f64,
    ancilla: usize,
    n_qubits: usize,
    slot: usize,
    basis: SpinBasis,
) -> Result<Circuit> {
    if ld.sites.contains(&ancilla) {
        return Err(Error::InvalidConfig(format!("ancilla {ancilla} overlaps jump sites {:?}", ld.sites)));
    }
    let theta = jump_angle(ld.rate, dt)?;
    let (up, down) = (basis.up_bit(), basis.down_bit());
    let mut c = Circuit::new(n_qubits);
    let flipped = match ld.kind {
        JumpKind::Decay => {
            let l = ld.sites[0];
            c.push(Gate::new(GateKind::CRy(up), &[l, ancilla], theta))?;
            l
        }
        JumpKind::Branching | JumpKind::Coagulation => {
            let (m, l) = (ld.sites[0], ld.sites[1]);
            let target_pol = if ld.kind == JumpKind::Branching { down } else { up };
            c.push(Gate::new(GateKind::CCRy([up, target_pol]), &[m, l, ancilla], theta))?;
            l
        }
        JumpKind::Custom => {
            return Err(Error::UnsupportedTerm {
                label: ld.l.label.clone(),
                reason: "custom jump operators have no ancilla circuit".into(),
            })
        }
    };
    c.push(Gate::cnot(ancilla, flipped))?;
    c.push(Gate::one(GateKind::Measure(slot), ancilla))?;
    c.push(Gate::one(GateKind::Reset, ancilla))?;
    Ok(c)
}
