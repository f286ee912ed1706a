//! Small dense linear-algebra helpers shared by the simulator and its
//! reference paths.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub type CMatrix = DMatrix<C64>;

/// Row-major 2x2 complex matrix.
pub type Matrix2 = [[C64; 2]; 2];

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity2() -> Matrix2 {
    [[ONE, ZERO], [ZERO, ONE]]
}

pub fn pauli_x() -> Matrix2 {
    [[ZERO, ONE], [ONE, ZERO]]
}

pub fn pauli_y() -> Matrix2 {
    [[ZERO, -I], [I, ZERO]]
}

pub fn pauli_z() -> Matrix2 {
    [[ONE, ZERO], [ZERO, -ONE]]
}

pub fn hadamard() -> Matrix2 {
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [[h, h], [h, -h]]
}

pub fn phase_s() -> Matrix2 {
    [[ONE, ZERO], [ZERO, I]]
}

pub fn phase_sdg() -> Matrix2 {
    [[ONE, ZERO], [ZERO, -I]]
}

/// exp(-i theta X / 2)
pub fn rx(theta: f64) -> Matrix2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [[C64::new(c, 0.0), C64::new(0.0, -s)], [C64::new(0.0, -s), C64::new(c, 0.0)]]
}

/// exp(-i theta Y / 2)
pub fn ry(theta: f64) -> Matrix2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [[C64::new(c, 0.0), C64::new(-s, 0.0)], [C64::new(s, 0.0), C64::new(c, 0.0)]]
}

/// exp(-i theta Z / 2)
pub fn rz(theta: f64) -> Matrix2 {
    [[C64::from_polar(1.0, -theta / 2.0), ZERO], [ZERO, C64::from_polar(1.0, theta / 2.0)]]
}

pub fn mul2(a: &Matrix2, b: &Matrix2) -> Matrix2 {
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn dagger2(a: &Matrix2) -> Matrix2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

/// Max-abs deviation of `u u^dagger` from the identity.
pub fn unitarity_defect(u: &Matrix2) -> f64 {
    let p = mul2(u, &dagger2(u));
    let id = identity2();
    let mut worst = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            worst = worst.max((p[i][j] - id[i][j]).norm());
        }
    }
    worst
}

pub fn to_cmatrix(m: &Matrix2) -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| m[i][j])
}

/// Distance between two unitaries after removing the best global phase,
/// measured as the max-abs entry of `a - e^{i phi} b`.
pub fn phase_insensitive_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let overlap: C64 = a.iter().zip(b.iter()).map(|(x, y)| y.conj() * x).sum();
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { ONE };
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - phase * y).norm())
        .fold(0.0, f64::max)
}

/// Spectral norm of a (square) complex matrix, from the largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotations_are_unitary_and_periodic() {
        for theta in [0.0, 0.3, 1.7, -2.2] {
            assert!(unitarity_defect(&rx(theta)) < 1e-14);
            assert!(unitarity_defect(&ry(theta)) < 1e-14);
            assert!(unitarity_defect(&rz(theta)) < 1e-14);
        }
        let full = to_cmatrix(&rz(4.0 * std::f64::consts::PI));
        assert!(phase_insensitive_distance(&full, &CMatrix::identity(2, 2)) < 1e-14);
    }

    #[test]
    fn s_squared_is_z() {
        let s2 = mul2(&phase_s(), &phase_s());
        assert!(phase_insensitive_distance(&to_cmatrix(&s2), &to_cmatrix(&pauli_z())) < 1e-15);
    }
}
