//! Quaternion algebra with scalar-first `[w, x, y, z]` storage.
//!
//! [`Quaternion`] is the general algebra element, [`UnitQuaternion`] holds
//! rotations and [`PureQuaternion`] holds translations and rotation axes.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::{Mat, MathError};

/// Norm tolerance a [`UnitQuaternion`] must satisfy.
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// Inputs further than this from unit norm are rejected rather than renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub const fn from_vec4(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Coefficients in `[w, x, y, z]` order.
    pub const fn vec4(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn conj(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm_squared(&self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// Real (scalar) part.
    pub fn re(&self) -> f64 {
        self.w
    }

    /// Imaginary part as a pure quaternion.
    pub fn im(&self) -> PureQuaternion {
        PureQuaternion::new(self.x, self.y, self.z)
    }

    /// Returns `self / ‖self‖`.
    ///
    /// Inputs that are already unit up to rounding are returned bit-for-bit,
    /// which makes the operation exactly idempotent.
    pub fn normalize(&self) -> Result<Self, MathError> {
        let n2 = self.norm_squared();
        if !n2.is_finite() || n2 == 0.0 {
            return Err(MathError::ZeroNorm);
        }
        if (n2 - 1.0).abs() <= 8.0 * f64::EPSILON {
            return Ok(*self);
        }
        Ok(self.scale(1.0 / n2.sqrt()))
    }

    /// Left Hamilton operator: `vec4(a·b) = hamilton_left(a) · vec4(b)`.
    pub fn hamilton_left(&self) -> Mat {
        let Quaternion { w, x, y, z } = *self;
        Mat::from_rows(&[[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]])
    }

    /// Right Hamilton operator: `vec4(a·b) = hamilton_right(b) · vec4(a)`.
    pub fn hamilton_right(&self) -> Mat {
        let Quaternion { w, x, y, z } = *self;
        Mat::from_rows(&[[w, -x, -y, -z], [x, w, z, -y], [y, -z, w, x], [z, y, -x, w]])
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs_diff(&self, other: &Quaternion) -> f64 {
        let a = self.vec4();
        let b = other.vec4();
        a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, b: Quaternion) -> Quaternion {
        let a = self;
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Mul<f64> for Quaternion {
    type Output = Quaternion;

    fn mul(self, s: f64) -> Quaternion {
        self.scale(s)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;

    fn add(self, b: Quaternion) -> Quaternion {
        Quaternion::new(self.w + b.w, self.x + b.x, self.y + b.y, self.z + b.z)
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;

    fn sub(self, b: Quaternion) -> Quaternion {
        Quaternion::new(self.w - b.w, self.x - b.x, self.y - b.y, self.z - b.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}i + {}j + {}k", self.w, self.x, self.y, self.z)
    }
}

/// Quaternion with zero scalar part, used for translations and rotation axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PureQuaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl PureQuaternion {
    pub const ZERO: PureQuaternion = PureQuaternion::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub const fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub const fn as_quaternion(&self) -> Quaternion {
        Quaternion::new(0.0, self.x, self.y, self.z)
    }

    /// `[0, x, y, z]`.
    pub const fn vec4(&self) -> [f64; 4] {
        [0.0, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, o: &PureQuaternion) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &PureQuaternion) -> PureQuaternion {
        PureQuaternion::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn scale(&self, s: f64) -> PureQuaternion {
        PureQuaternion::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Add for PureQuaternion {
    type Output = PureQuaternion;

    fn add(self, b: PureQuaternion) -> PureQuaternion {
        PureQuaternion::new(self.x + b.x, self.y + b.y, self.z + b.z)
    }
}

impl Sub for PureQuaternion {
    type Output = PureQuaternion;

    fn sub(self, b: PureQuaternion) -> PureQuaternion {
        PureQuaternion::new(self.x - b.x, self.y - b.y, self.z - b.z)
    }
}

impl From<PureQuaternion> for Quaternion {
    fn from(p: PureQuaternion) -> Quaternion {
        p.as_quaternion()
    }
}

/// Rotation represented as a quaternion of unit norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Quaternion", into = "Quaternion")]
pub struct UnitQuaternion(Quaternion);

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion(Quaternion::ONE);

    /// Accepts `q` if its norm is within [`RENORMALIZE_TOLERANCE`] of one and
    /// renormalizes it; anything further away is an error. Input already
    /// unit to rounding is kept bit for bit, so `new` is idempotent.
    pub fn new(q: Quaternion) -> Result<Self, MathError> {
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(MathError::NotUnit { norm: n });
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self(q));
        }
        Ok(Self(q.normalize()?))
    }

    /// Normalizes any non-zero quaternion.
    pub fn from_quaternion_normalized(q: Quaternion) -> Result<Self, MathError> {
        Ok(Self(q.normalize()?))
    }

    /// `cos(φ/2) + axis·sin(φ/2)`; `axis` must be unit within [`UNIT_TOLERANCE`].
    pub fn from_axis_angle(axis: PureQuaternion, angle: f64) -> Result<Self, MathError> {
        let n = axis.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(MathError::NonUnitAxis { norm: n });
        }
        if !angle.is_finite() {
            return Err(MathError::NonFinite);
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Ok(Self(Quaternion::new(c, axis.x * s, axis.y * s, axis.z * s)))
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self(Quaternion::new(c, s, 0.0, 0.0))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self(Quaternion::new(c, 0.0, s, 0.0))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self(Quaternion::new(c, 0.0, 0.0, s))
    }

    /// `rot_z(yaw) · rot_y(pitch) · rot_x(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::rot_z(yaw).compose(&Self::rot_y(pitch)).compose(&Self::rot_x(roll))
    }

    pub const fn quaternion(&self) -> Quaternion {
        self.0
    }

    pub fn conj(&self) -> Self {
        Self(self.0.conj())
    }

    /// Product without renormalization; drift is removed by [`Self::renormalize`].
    pub fn compose(&self, other: &UnitQuaternion) -> Self {
        Self(self.0 * other.0)
    }

    pub fn renormalize(&self) -> Self {
        // A product of unit quaternions never has zero norm.
        Self(self.0.normalize().unwrap_or(self.0))
    }

    /// Rotates a vector: `r · p · r*`.
    pub fn rotate(&self, p: &PureQuaternion) -> PureQuaternion {
        (self.0 * p.as_quaternion() * self.0.conj()).im()
    }

    pub const fn vec4(&self) -> [f64; 4] {
        self.0.vec4()
    }
}

impl From<UnitQuaternion> for Quaternion {
    fn from(u: UnitQuaternion) -> Quaternion {
        u.0
    }
}

impl TryFrom<Quaternion> for UnitQuaternion {
    type Error = MathError;

    fn try_from(q: Quaternion) -> Result<Self, MathError> {
        UnitQuaternion::new(q)
    }
}

impl Neg for UnitQuaternion {
    type Output = UnitQuaternion;

    fn neg(self) -> UnitQuaternion {
        UnitQuaternion(-self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_q(rng: &mut impl Rng) -> Quaternion {
        Quaternion::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        )
    }

    // Sixteen-term expansion over the basis products, independent of `Mul`.
    fn expanded_product(a: Quaternion, b: Quaternion) -> Quaternion {
        // table[i][j] = (sign, index) of e_i * e_j with e = [1, i, j, k]
        const TABLE: [[(f64, usize); 4]; 4] = [
            [(1.0, 0), (1.0, 1), (1.0, 2), (1.0, 3)],
            [(1.0, 1), (-1.0, 0), (1.0, 3), (-1.0, 2)],
            [(1.0, 2), (-1.0, 3), (-1.0, 0), (1.0, 1)],
            [(1.0, 3), (1.0, 2), (-1.0, 1), (-1.0, 0)],
        ];
        let av = a.vec4();
        let bv = b.vec4();
        let mut out = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                let (s, k) = TABLE[i][j];
                out[k] += s * av[i] * bv[j];
            }
        }
        Quaternion::from_vec4(out)
    }

    #[test]
    fn basis_products() {
        assert_eq!(Quaternion::I * Quaternion::J, Quaternion::K);
        assert_eq!(Quaternion::I * Quaternion::I, -Quaternion::ONE);
        assert_eq!(Quaternion::J * Quaternion::J, -Quaternion::ONE);
        assert_eq!(Quaternion::K * Quaternion::K, -Quaternion::ONE);
        assert_eq!(Quaternion::I * Quaternion::J * Quaternion::K, -Quaternion::ONE);
    }

    #[test]
    fn product_matches_expansion_and_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (a, b, c) = (random_q(&mut rng), random_q(&mut rng), random_q(&mut rng));
            assert!((a * b).max_abs_diff(&expanded_product(a, b)) < 1e-12);
            assert!(((a * b) * c).max_abs_diff(&(a * (b * c))) < 1e-12);
            assert_eq!(a * Quaternion::ONE, a);
            let nab = (a * b).norm();
            assert!((nab - a.norm() * b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn conjugate_properties() {
        assert_eq!(Quaternion::ONE.conj(), Quaternion::ONE);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (a, b) = (random_q(&mut rng), random_q(&mut rng));
            let lhs = expanded_product(a, b).conj();
            let rhs = expanded_product(b.conj(), a.conj());
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            let n = a.conj() * a;
            assert!(n.max_abs_diff(&Quaternion::ONE.scale(a.norm_squared())) < 1e-12);
        }
        let axis = PureQuaternion::new(0.0, 0.6, 0.8);
        let r = UnitQuaternion::from_axis_angle(axis, 0.7).unwrap();
        let expected = Quaternion::new((0.35f64).cos(), 0.0, -0.6 * 0.35f64.sin(), -0.8 * 0.35f64.sin());
        assert!(r.conj().quaternion().max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn vec4_layout() {
        let t = PureQuaternion::new(0.1, -0.2, 0.3);
        assert_eq!(t.vec4(), [0.0, 0.1, -0.2, 0.3]);
        assert_eq!(t.as_quaternion().vec4(), [0.0, 0.1, -0.2, 0.3]);
        assert_eq!(Quaternion::ONE.vec4(), [1.0, 0.0, 0.0, 0.0]);
        let q = Quaternion::new(0.5, 1.5, -2.5, 3.5);
        assert_eq!(Quaternion::from_vec4(q.vec4()), q);
    }

    #[test]
    fn hamilton_operators_match_product() {
        assert_eq!(Quaternion::ONE.hamilton_left(), Mat::identity(4));
        assert_eq!(Quaternion::ONE.hamilton_right(), Mat::identity(4));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, b) = (random_q(&mut rng), random_q(&mut rng));
            let ab = (a * b).vec4();
            let left = a.hamilton_left().mul_vec(&b.vec4());
            let right = b.hamilton_right().mul_vec(&a.vec4());
            for k in 0..4 {
                assert!((ab[k] - left[k]).abs() < 1e-12);
                assert!((ab[k] - right[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn axis_angle() {
        let v = PureQuaternion::new(0.0, 0.0, 1.0);
        assert_eq!(UnitQuaternion::from_axis_angle(v, 0.0).unwrap(), UnitQuaternion::IDENTITY);
        let half_turn = UnitQuaternion::from_axis_angle(PureQuaternion::new(1.0, 0.0, 0.0), std::f64::consts::PI)
            .unwrap()
            .quaternion();
        assert!(half_turn.max_abs_diff(&Quaternion::I) < 1e-16);
        assert!(matches!(
            UnitQuaternion::from_axis_angle(PureQuaternion::new(1.0, 1.0, 0.0), 0.3),
            Err(MathError::NonUnitAxis { .. })
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let raw = PureQuaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let axis = raw.scale(1.0 / raw.norm());
            let (phi, psi) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let a = UnitQuaternion::from_axis_angle(axis, phi).unwrap();
            let b = UnitQuaternion::from_axis_angle(axis, psi).unwrap();
            let ab = UnitQuaternion::from_axis_angle(axis, phi + psi).unwrap();
            assert!((a.quaternion() * b.quaternion()).max_abs_diff(&ab.quaternion()) < 1e-12);
        }
    }

    #[test]
    fn unit_construction_tolerances() {
        let slightly_off = Quaternion::new(1.0 + 5e-7, 0.0, 0.0, 0.0);
        let u = UnitQuaternion::new(slightly_off).unwrap();
        assert!((u.quaternion().norm() - 1.0).abs() < UNIT_TOLERANCE);
        assert!(UnitQuaternion::new(Quaternion::new(1.0 + 2e-6, 0.0, 0.0, 0.0)).is_err());
        assert!(UnitQuaternion::new(Quaternion::ZERO).is_err());
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let q = random_q(&mut rng);
            let n1 = q.normalize().unwrap();
            let n2 = n1.normalize().unwrap();
            assert_eq!(n1, n2);
        }
    }

    #[test]
    fn rpy_matches_axis_products() {
        let q = UnitQuaternion::from_rpy(0.0, 0.0, 0.4);
        let z = UnitQuaternion::from_axis_angle(PureQuaternion::new(0.0, 0.0, 1.0), 0.4).unwrap();
        assert!(q.quaternion().max_abs_diff(&z.quaternion()) < 1e-16);
    }

    #[test]
    fn new_is_idempotent_on_its_own_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let q = random_q(&mut rng);
            let Ok(u) = UnitQuaternion::from_quaternion_normalized(q) else { continue };
            let again = UnitQuaternion::new(u.quaternion()).unwrap();
            assert_eq!(again, u);
            let json = serde_json::to_string(&u).unwrap();
            assert_eq!(serde_json::from_str::<UnitQuaternion>(&json).unwrap(), u);
        }
    }
}
