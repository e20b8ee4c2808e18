//! Symmetric traceless 3×3 matrices (Q-tensors) and general symmetric matrices.
//!
//! A [`QTensor`] is stored by its five coefficients over a fixed orthonormal
//! basis of the traceless symmetric matrices, so tracelessness is structural.
//! The basis (Frobenius-orthonormal) is
//!
//! ```text
//! E0 = diag(1, -1, 0) / √2
//! E1 = diag(1, 1, -2) / √6
//! E2 = (e1⊗e2 + e2⊗e1) / √2
//! E3 = (e1⊗e3 + e3⊗e1) / √2
//! E4 = (e2⊗e3 + e3⊗e2) / √2
//! ```
//!
//! Field dumps record this choice as basis id [`BASIS_ID`].

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Identifier of the coefficient basis written into field dumps.
pub const BASIS_ID: u32 = 1;

const S2: f64 = std::f64::consts::SQRT_2;
const INV_S2: f64 = 1.0 / std::f64::consts::SQRT_2;

#[inline]
fn inv_s6() -> f64 {
    1.0 / 6f64.sqrt()
}

/// Basis element `k` of the traceless symmetric matrices as a full matrix.
pub fn basis_matrix(k: usize) -> Mat3 {
    let mut q = [0.0; 5];
    q[k] = 1.0;
    QTensor(q).to_matrix()
}

/// Order parameter: a symmetric traceless 3×3 matrix stored by five basis coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QTensor(pub [f64; 5]);

impl QTensor {
    pub const ZERO: QTensor = QTensor([0.0; 5]);

    pub fn new(coeffs: [f64; 5]) -> Self {
        QTensor(coeffs)
    }

    #[inline]
    pub fn coeffs(&self) -> &[f64; 5] {
        &self.0
    }

    #[inline]
    pub fn to_matrix(&self) -> Mat3 {
        let [q0, q1, q2, q3, q4] = self.0;
        let r6 = inv_s6();
        let d0 = q0 * INV_S2 + q1 * r6;
        let d1 = -q0 * INV_S2 + q1 * r6;
        let d2 = -2.0 * q1 * r6;
        let xy = q2 * INV_S2;
        let xz = q3 * INV_S2;
        let yz = q4 * INV_S2;
        Mat3::new(d0, xy, xz, xy, d1, yz, xz, yz, d2)
    }

    /// Orthogonal projection of an arbitrary matrix onto the traceless symmetric
    /// subspace (the antisymmetric and trace parts are dropped).
    #[inline]
    pub fn project(m: &Mat3) -> Self {
        let r6 = inv_s6();
        let xy = 0.5 * (m[(0, 1)] + m[(1, 0)]);
        let xz = 0.5 * (m[(0, 2)] + m[(2, 0)]);
        let yz = 0.5 * (m[(1, 2)] + m[(2, 1)]);
        QTensor([
            (m[(0, 0)] - m[(1, 1)]) * INV_S2,
            (m[(0, 0)] + m[(1, 1)] - 2.0 * m[(2, 2)]) * r6,
            S2 * xy,
            S2 * xz,
            S2 * yz,
        ])
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `tr(QP)`.
    #[inline]
    pub fn dot(&self, other: &QTensor) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    /// `tr(Q³)`.
    pub fn trace_cube(&self) -> f64 {
        let m = self.to_matrix();
        (m * m).component_mul(&m.transpose()).sum()
    }

    /// `R Q Rᵀ`.
    pub fn conjugate(&self, r: &Mat3) -> QTensor {
        QTensor::project(&(r * self.to_matrix() * r.transpose()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

impl Add for QTensor {
    type Output = QTensor;
    fn add(mut self, rhs: QTensor) -> QTensor {
        self += rhs;
        self
    }
}

impl AddAssign for QTensor {
    fn add_assign(&mut self, rhs: QTensor) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for QTensor {
    type Output = QTensor;
    fn sub(mut self, rhs: QTensor) -> QTensor {
        self -= rhs;
        self
    }
}

impl SubAssign for QTensor {
    fn sub_assign(&mut self, rhs: QTensor) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
    }
}

impl Mul<QTensor> for f64 {
    type Output = QTensor;
    fn mul(self, rhs: QTensor) -> QTensor {
        QTensor(rhs.0.map(|c| self * c))
    }
}

impl Neg for QTensor {
    type Output = QTensor;
    fn neg(self) -> QTensor {
        QTensor(self.0.map(|c| -c))
    }
}

/// General symmetric 3×3 matrix, not necessarily traceless.
///
/// Coefficients are `[xx, yy, zz, xy, xz, yz]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(pub [f64; 6]);

impl SymMatrix {
    pub const ZERO: SymMatrix = SymMatrix([0.0; 6]);

    pub fn identity() -> Self {
        SymMatrix([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        SymMatrix([a, b, c, 0.0, 0.0, 0.0])
    }

    /// `e_i ⊗ e_j + e_j ⊗ e_i` for `i != j`, `e_i ⊗ e_i` for `i == j`.
    pub fn unit_pair(i: usize, j: usize) -> Self {
        let mut m = Mat3::zeros();
        m[(i, j)] = 1.0;
        m[(j, i)] = 1.0;
        SymMatrix::from_matrix(&m)
    }

    pub fn outer(v: &Vec3) -> Self {
        SymMatrix([
            v.x * v.x,
            v.y * v.y,
            v.z * v.z,
            v.x * v.y,
            v.x * v.z,
            v.y * v.z,
        ])
    }

    pub fn to_matrix(&self) -> Mat3 {
        let [xx, yy, zz, xy, xz, yz] = self.0;
        Mat3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    /// Symmetric part of `m`.
    pub fn from_matrix(m: &Mat3) -> Self {
        SymMatrix([
            m[(0, 0)],
            m[(1, 1)],
            m[(2, 2)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            0.5 * (m[(1, 2)] + m[(2, 1)]),
        ])
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix(self.0.map(|c| s * c))
    }

    /// `R M Rᵀ`.
    pub fn conjugate(&self, r: &Mat3) -> Self {
        SymMatrix::from_matrix(&(r * self.to_matrix() * r.transpose()))
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Add for SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: SymMatrix) -> SymMatrix {
        let mut out = self;
        for (a, b) in out.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
        out
    }
}

impl Sub for SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: SymMatrix) -> SymMatrix {
        self + rhs.scale(-1.0)
    }
}

/// Anything representable as a full symmetric matrix.
pub trait AsMatrix {
    fn as_matrix(&self) -> Mat3;
}

impl AsMatrix for QTensor {
    fn as_matrix(&self) -> Mat3 {
        self.to_matrix()
    }
}

impl AsMatrix for SymMatrix {
    fn as_matrix(&self) -> Mat3 {
        self.to_matrix()
    }
}

impl AsMatrix for Mat3 {
    fn as_matrix(&self) -> Mat3 {
        *self
    }
}

/// Frobenius inner product `tr(AB)` of two symmetric matrices.
pub fn dot<A: AsMatrix + ?Sized, B: AsMatrix + ?Sized>(a: &A, b: &B) -> f64 {
    a.as_matrix().component_mul(&b.as_matrix()).sum()
}

/// `P − (tr P / 3) Id` as a Q-tensor.
pub fn deviatoric(p: &SymMatrix) -> QTensor {
    QTensor::project(&p.to_matrix())
}

/// A vector of Euclidean length one (within 1e-12).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitVector(Vec3);

impl UnitVector {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if (n - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::NotUnit { norm: n });
        }
        Ok(UnitVector(v))
    }

    /// Normalises `v`; `v` must be nonzero.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::NotUnit { norm: n });
        }
        Ok(UnitVector(v / n))
    }

    /// Wraps a vector the caller already knows to be unit (quadrature normals).
    pub(crate) fn new_unchecked(v: Vec3) -> Self {
        UnitVector(v)
    }

    pub fn axis(k: usize) -> Self {
        let mut v = Vec3::zeros();
        v[k] = 1.0;
        UnitVector(v)
    }

    #[inline]
    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }
}

impl Neg for UnitVector {
    type Output = UnitVector;
    fn neg(self) -> UnitVector {
        UnitVector(-self.0)
    }
}

/// `Q_ν = ν ⊗ ν − Id/3`.
#[inline]
pub fn q_nu(nu: &UnitVector) -> QTensor {
    let v = nu.as_vec();
    let r6 = inv_s6();
    // direct coefficients of ν⊗ν (the Id/3 part has no traceless component)
    QTensor([
        (v.x * v.x - v.y * v.y) * INV_S2,
        (v.x * v.x + v.y * v.y - 2.0 * v.z * v.z) * r6,
        S2 * v.x * v.y,
        S2 * v.x * v.z,
        S2 * v.y * v.z,
    ])
}

/// Checked constructor for `q_nu` from a raw vector.
pub fn q_nu_checked(v: Vec3) -> Result<QTensor> {
    Ok(q_nu(&UnitVector::new(v)?))
}

/// A proper rotation matrix (orthogonal, determinant +1, within 1e-10).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub const TOLERANCE: f64 = 1e-10;

    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    pub fn new(m: Mat3) -> Result<Self> {
        let dev = orthogonality_defect(&m);
        let det = m.determinant();
        if dev > Self::TOLERANCE || (det - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::NotOrthogonal { deviation: dev.max((det - 1.0).abs()) });
        }
        Ok(Rotation(m))
    }

    /// Rotation by `angle` about `axis` (Rodrigues).
    pub fn about_axis(axis: &Vec3, angle: f64) -> Result<Self> {
        let u = UnitVector::normalize(*axis)?;
        let u = u.as_vec();
        let (s, c) = angle.sin_cos();
        let k = Mat3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0);
        Ok(Rotation(Mat3::identity() + s * k + (1.0 - c) * k * k))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }
}

/// `max |MᵀM − Id|` entrywise.
pub fn orthogonality_defect(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).abs().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> UnitVector {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                return UnitVector::normalize(v).unwrap();
            }
        }
    }

    #[test]
    fn q_nu_of_e3() {
        let q = q_nu(&UnitVector::axis(2)).to_matrix();
        let expected = Mat3::from_diagonal(&Vec3::new(-1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0));
        assert!((q - expected).abs().max() < 1e-15);
    }

    #[test]
    fn q_nu_rejects_non_unit() {
        assert!(q_nu_checked(Vec3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn q_nu_properties_on_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let nu = random_unit(&mut rng);
            let q = q_nu(&nu);
            let m = q.to_matrix();
            assert!(m.trace().abs() < 1e-12);
            assert!((q.norm_sq() - 2.0 / 3.0).abs() < 1e-12);
            assert!((dot(&m, &m) - 2.0 / 3.0).abs() < 1e-12);
            // sign-even
            assert_eq!(q, q_nu(&-nu));
            // matches the matrix definition
            let v = nu.as_vec();
            let direct = v * v.transpose() - Mat3::identity() / 3.0;
            assert!((m - direct).abs().max() < 1e-14);
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        for i in 0..5 {
            for j in 0..5 {
                let g = dot(&basis_matrix(i), &basis_matrix(j));
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g - e).abs() < 1e-14, "gram[{i}][{j}] = {g}");
            }
            let b = basis_matrix(i);
            assert!(b.trace().abs() < 1e-15);
            assert_eq!(b, b.transpose());
        }
    }

    #[test]
    fn deviatoric_examples() {
        assert!(deviatoric(&SymMatrix::identity()).norm() < 1e-15);
        let d = deviatoric(&SymMatrix::diag(1.0, 0.0, 0.0)).to_matrix();
        let e = Mat3::from_diagonal(&Vec3::new(2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0));
        assert!((d - e).abs().max() < 1e-15);
        let q = QTensor([0.3, -0.2, 0.5, 0.1, -0.7]);
        let p = SymMatrix::from_matrix(&q.to_matrix());
        assert!((deviatoric(&p) - q).norm() < 1e-15);
    }

    #[test]
    fn dot_with_zero() {
        let q = QTensor([0.3, -0.2, 0.5, 0.1, -0.7]);
        assert_eq!(dot(&q, &QTensor::ZERO), 0.0);
    }

    #[test]
    fn trace_cube_matches_matrix() {
        let q = QTensor([0.3, -0.2, 0.5, 0.1, -0.7]);
        let m = q.to_matrix();
        assert!((q.trace_cube() - (m * m * m).trace()).abs() < 1e-14);
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation::new(Mat3::identity() * 1.01).is_err());
        let r = Rotation::about_axis(&Vec3::new(1.0, 2.0, 3.0), 0.7).unwrap();
        assert!(Rotation::new(*r.matrix()).is_ok());
        // reflection
        assert!(Rotation::new(Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0))).is_err());
    }

    proptest::proptest! {
        #[test]
        fn matrix_round_trip_is_symmetric_traceless(c in proptest::array::uniform5(-10.0f64..10.0)) {
            let q = QTensor(c);
            let m = q.to_matrix();
            proptest::prop_assert!(m.trace().abs() <= 1e-14 * (1.0 + q.norm()));
            proptest::prop_assert_eq!(m, m.transpose());
            proptest::prop_assert!((dot(&m, &m) - q.norm_sq()).abs() <= 1e-12 * (1.0 + q.norm_sq()));
            let back = QTensor::project(&m);
            proptest::prop_assert!((back - q).norm() <= 1e-13 * (1.0 + q.norm()));
        }

        #[test]
        fn deviatoric_is_idempotent_and_preserves_traceless_dot(
            p in proptest::array::uniform6(-5.0f64..5.0),
            c in proptest::array::uniform5(-5.0f64..5.0),
        ) {
            let p = SymMatrix(p);
            let q = QTensor(c);
            let d = deviatoric(&p);
            let dd = deviatoric(&SymMatrix::from_matrix(&d.to_matrix()));
            proptest::prop_assert!((d - dd).norm() < 1e-12);
            proptest::prop_assert!((dot(&d, &q) - dot(&p, &q)).abs() < 1e-12 * (1.0 + p.0.iter().map(|x| x.abs()).sum::<f64>() * q.norm()));
        }
    }
}
