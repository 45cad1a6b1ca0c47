//! Row-major 3×3 matrix helpers shared by synthesis and alignment.

use crate::scalar::{real, Real};

pub type Mat3<R> = [R; 9];

pub fn identity<R: Real>() -> Mat3<R> {
    let (o, z) = (R::one(), R::zero());
    [o, z, z, z, o, z, z, z, o]
}

pub fn mul<R: Real>(a: &Mat3<R>, b: &Mat3<R>) -> Mat3<R> {
    let mut out = [R::zero(); 9];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = R::zero();
            for k in 0..3 {
                s = s + a[i * 3 + k] * b[k * 3 + j];
            }
            out[i * 3 + j] = s;
        }
    }
    out
}

pub fn transpose<R: Real>(a: &Mat3<R>) -> Mat3<R> {
    [
        a[0], a[3], a[6], //
        a[1], a[4], a[7], //
        a[2], a[5], a[8],
    ]
}

pub fn apply<R: Real>(a: &Mat3<R>, p: [R; 3]) -> [R; 3] {
    [
        a[0] * p[0] + a[1] * p[1] + a[2] * p[2],
        a[3] * p[0] + a[4] * p[1] + a[5] * p[2],
        a[6] * p[0] + a[7] * p[1] + a[8] * p[2],
    ]
}

pub fn det<R: Real>(a: &Mat3<R>) -> R {
    a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
        + a[2] * (a[3] * a[7] - a[4] * a[6])
}

/// Max-abs deviation of RᵀR from the identity.
pub fn orthonormality_defect<R: Real>(a: &Mat3<R>) -> R {
    let gram = mul(&transpose(a), a);
    let id = identity::<R>();
    gram.iter()
        .zip(&id)
        .map(|(&g, &i)| (g - i).abs())
        .fold(R::zero(), R::max)
}

/// Rotation about a unit axis by `angle` radians (Rodrigues form).
pub fn axis_angle<R: Real>(axis: [R; 3], angle: R) -> Mat3<R> {
    let (x, y, z) = (axis[0], axis[1], axis[2]);
    let (s, c) = (angle.sin(), angle.cos());
    let t = R::one() - c;
    [
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    ]
}

pub fn normalize3<R: Real>(v: [R; 3]) -> Option<[R; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n <= real(1e-12) {
        return None;
    }
    Some([v[0] / n, v[1] / n, v[2] / n])
}

pub fn cross<R: Real>(a: [R; 3], b: [R; 3]) -> [R; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_angle_quarter_turn_about_z() {
        let r: Mat3<f64> = axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let p = apply(&r, [1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
        assert!(orthonormality_defect(&r) < 1e-12);
        assert!((det(&r) - 1.0).abs() < 1e-12);
    }
}
