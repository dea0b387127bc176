//! Fixed-size linear algebra and two-view geometry primitives.
//!
//! Conventions used across the crate:
//! - world-to-camera: `X_cam = R * X_world + t`, camera center `o = -R^T t`;
//! - relative pose of pair (i, j): `R_ij = R_j * R_i^T`, `t_ij = R_j * (o_i - o_j)`,
//!   so `X_j = R_ij * X_i + t_ij`;
//! - essential matrix `E = [t_ij]_x * R_ij` satisfying `x2^T E x1 = 0` on
//!   normalized homogeneous image points (third coordinate 1);
//! - 3x3 matrices flatten row-major, so `flatten(x2 x1^T) . flatten(E)`
//!   equals `x2^T E x1` exactly.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// A correspondence in normalized homogeneous coordinates; the implicit
/// third coordinate of both points is 1.
pub type NormMatch = ([f64; 2], [f64; 2]);

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate 6d rotation parameterization (norm {0:.3e})")]
    DegenerateParameterization(f64),
    #[error("relative translation is zero; essential matrix undefined")]
    DegenerateTranslation,
    #[error("cheirality check failed: no candidate places points in front of both cameras")]
    CheiralityFailure,
    #[error("homography decomposition failed: no candidate passes the visibility test")]
    HomographyDecompositionFailure,
    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),
}

/// World-to-camera rotation, orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(pub Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates orthonormality and determinant to 1e-9.
    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        let err = (m.transpose() * m - Mat3::identity()).norm();
        if err > 1e-9 {
            return Err(GeometryError::NotARotation(format!(
                "|R^T R - I| = {err:.3e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotARotation(format!("det = {det:.12}")));
        }
        Ok(Rotation(m))
    }

    /// Nearest rotation to an arbitrary matrix (SVD projection, det fixed to +1).
    pub fn project(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            // flip the column of U paired with the smallest singular value
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        Rotation(r)
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Rotation about the x axis.
    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    /// Rotation about the z axis.
    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation about an arbitrary unit axis (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let k = skew(&axis.normalize());
        let r = Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos());
        Rotation::project(&r)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Continuous 6D rotation parameterization: two stacked 3-vectors mapped to
/// SO(3) by Gram-Schmidt. Gradient-friendly, no angle wrapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub fn as_slice(&self) -> &[f64; 6] {
        &self.0
    }
}

/// World-to-camera pose: rotation plus camera center in world units.
/// The translation part is `t = -R * center`.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub r: Rotation,
    pub center: Vec3,
}

impl Pose {
    pub fn new(r: Rotation, center: Vec3) -> Self {
        Pose { r, center }
    }

    pub fn translation(&self) -> Vec3 {
        -(self.r.0 * self.center)
    }

    /// Camera-frame coordinates of a world point.
    pub fn transform(&self, x_world: &Vec3) -> Vec3 {
        self.r.0 * (x_world - self.center)
    }
}

/// Essential matrix; exact data has singular values (s, s, 0).
#[derive(Debug, Clone, Copy)]
pub struct EssentialMatrix(pub Mat3);

impl EssentialMatrix {
    /// Row-major flattening, compatible with the pair-quadratic convention.
    pub fn flatten(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }
}

/// Two-view model kind attached to a match pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Fundamental,
    Homography,
}

/// Verified two-view model from the matching frontend (or re-estimated).
/// The matrix is kept Frobenius-normalized.
#[derive(Debug, Clone)]
pub struct TwoViewModel {
    pub kind: ModelKind,
    pub m: Mat3,
    pub inlier_count: u32,
}

impl TwoViewModel {
    pub fn new(kind: ModelKind, m: Mat3, inlier_count: u32) -> Self {
        let n = m.norm();
        TwoViewModel { kind, m: m / n, inlier_count }
    }
}

/// Cross-product matrix: `skew(t) * v = t x v`.
pub fn skew(t: &Vec3) -> Mat3 {
    Mat3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

// ---------------------------------------------------------------------------
// 6D parameterization
// ---------------------------------------------------------------------------

/// Gram-Schmidt map from 6D parameters to a rotation matrix.
///
/// Columns: `b1 = a1/|a1|`, `b2 = normalize(a2 - (b1.a2) b1)`, `b3 = b1 x b2`.
pub fn rot6d_to_matrix(a: &Rotation6D) -> Result<Rotation, GeometryError> {
    let f = Rot6Forward::new(a.as_slice())?;
    Ok(Rotation(f.r))
}

/// Inverse of the 6D map: the first two columns of the rotation.
pub fn matrix_to_rot6d(r: &Rotation) -> Rotation6D {
    let m = &r.0;
    Rotation6D([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
}

/// Forward pass of the 6D map with the intermediates needed for the fused
/// backward pass. Optimization evaluators keep one per image per iteration.
pub(crate) struct Rot6Forward {
    pub r: Mat3,
    b1: Vec3,
    b2: Vec3,
    a2: Vec3,
    n1: f64,
    nw: f64,
    d: f64, // b1 . a2
}

impl Rot6Forward {
    pub fn new(a: &[f64; 6]) -> Result<Self, GeometryError> {
        let a1 = Vec3::new(a[0], a[1], a[2]);
        let a2 = Vec3::new(a[3], a[4], a[5]);
        let n1 = a1.norm();
        if n1 < 1e-12 {
            return Err(GeometryError::DegenerateParameterization(n1));
        }
        let b1 = a1 / n1;
        let d = b1.dot(&a2);
        let w = a2 - b1 * d;
        let nw = w.norm();
        if nw < 1e-12 {
            return Err(GeometryError::DegenerateParameterization(nw));
        }
        let b2 = w / nw;
        let b3 = b1.cross(&b2);
        let r = Mat3::from_columns(&[b1, b2, b3]);
        Ok(Rot6Forward { r, b1, b2, a2, n1, nw, d })
    }

    /// Chain `dL/dR` back to the 6 parameters.
    pub fn backward(&self, grad_r: &Mat3) -> [f64; 6] {
        let g1 = Vec3::new(grad_r[(0, 0)], grad_r[(1, 0)], grad_r[(2, 0)]);
        let g2 = Vec3::new(grad_r[(0, 1)], grad_r[(1, 1)], grad_r[(2, 1)]);
        let g3 = Vec3::new(grad_r[(0, 2)], grad_r[(1, 2)], grad_r[(2, 2)]);

        // b3 = b1 x b2
        let mut gb1 = g1 + self.b2.cross(&g3);
        let gb2 = g2 + g3.cross(&self.b1);

        // b2 = w / |w|, w = a2 - d b1
        let gw = (gb2 - self.b2 * self.b2.dot(&gb2)) / self.nw;
        let ga2 = gw - self.b1 * self.b1.dot(&gw);
        gb1 += -(self.a2 * gw.dot(&self.b1)) - gw * self.d;

        // b1 = a1 / |a1|
        let ga1 = (gb1 - self.b1 * self.b1.dot(&gb1)) / self.n1;
        [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]
    }
}

// ---------------------------------------------------------------------------
// Geodesic distance
// ---------------------------------------------------------------------------

const GEO_CLAMP: f64 = 1e-7;

/// Angle of the relative rotation between two rotations, in [0, pi].
/// The arccos argument is clamped to [-1+1e-7, 1-1e-7] to bound gradients
/// near the identity and antipode.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    geodesic_forward(&a.0, &b.0).0
}

/// Returns (distance, d distance / d u) where u is the unclamped cosine
/// argument; the derivative is zero when the clamp is active.
pub(crate) fn geodesic_forward(a: &Mat3, b: &Mat3) -> (f64, f64) {
    let tr = (a.transpose() * b).trace();
    let u = (tr - 1.0) / 2.0;
    let (lo, hi) = (-1.0 + GEO_CLAMP, 1.0 - GEO_CLAMP);
    if u <= lo {
        (lo.acos(), 0.0)
    } else if u >= hi {
        (hi.acos(), 0.0)
    } else {
        (u.acos(), -1.0 / (1.0 - u * u).sqrt())
    }
}

// ---------------------------------------------------------------------------
// Essential matrix construction / error / decomposition
// ---------------------------------------------------------------------------

/// `E = [t]_x R` for the relative pose `X_j = R X_i + t`. `t` must be unit.
pub fn essential_from_relative(
    r_rel: &Rotation,
    t_rel: &Vec3,
) -> Result<EssentialMatrix, GeometryError> {
    if t_rel.norm() < 1e-12 {
        return Err(GeometryError::DegenerateTranslation);
    }
    Ok(EssentialMatrix(skew(t_rel) * r_rel.0))
}

/// Algebraic epipolar error `|x2^T E x1|` on normalized homogeneous points.
pub fn epipolar_error(e: &EssentialMatrix, x1: &[f64; 2], x2: &[f64; 2]) -> f64 {
    let m = &e.0;
    let l0 = m[(0, 0)] * x1[0] + m[(0, 1)] * x1[1] + m[(0, 2)];
    let l1 = m[(1, 0)] * x1[0] + m[(1, 1)] * x1[1] + m[(1, 2)];
    let l2 = m[(2, 0)] * x1[0] + m[(2, 1)] * x1[1] + m[(2, 2)];
    (x2[0] * l0 + x2[1] * l1 + l2).abs()
}

/// Midpoint of the closest points of two rays; returns None when the rays
/// are nearly parallel (angle below ~1e-4 rad).
pub fn ray_midpoint(o1: &Vec3, d1: &Vec3, o2: &Vec3, d2: &Vec3) -> Option<Vec3> {
    let a = d1.dot(d2);
    let denom = 1.0 - a * a;
    if denom < 1e-8 {
        return None;
    }
    let r = o2 - o1;
    let b = d1.dot(&r);
    let c = d2.dot(&r);
    let s = (b - a * c) / denom;
    let t = (a * b - c) / denom;
    Some(((o1 + d1 * s) + (o2 + d2 * t)) / 2.0)
}

/// Counts correspondences whose triangulation has positive depth in both
/// cameras of the candidate pose (camera 1 at the origin).
fn cheirality_count(r: &Mat3, t: &Vec3, corrs: &[NormMatch]) -> usize {
    let o2 = -(r.transpose() * t);
    let rt = r.transpose();
    let mut count = 0;
    for (x1, x2) in corrs {
        let d1 = Vec3::new(x1[0], x1[1], 1.0).normalize();
        let d2 = (rt * Vec3::new(x2[0], x2[1], 1.0)).normalize();
        if let Some(p) = ray_midpoint(&Vec3::zeros(), &d1, &o2, &d2) {
            let z1 = p.z;
            let z2 = (r * p + t).z;
            if z1 > 0.0 && z2 > 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// Decomposes an essential matrix into the relative pose `(R, t)` with unit
/// translation, resolving the four-fold ambiguity by cheirality voting.
/// Ties pick the lowest candidate index.
pub fn decompose_essential(
    e: &EssentialMatrix,
    corrs: &[NormMatch],
) -> Result<(Rotation, Vec3), GeometryError> {
    let svd = e.0.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut vt = svd.v_t.unwrap();
    if u.determinant() < 0.0 {
        u.neg_mut();
    }
    if vt.determinant() < 0.0 {
        vt.neg_mut();
    }
    let w = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let ra = u * w * vt;
    let rb = u * w.transpose() * vt;
    let t = Vec3::new(u[(0, 2)], u[(1, 2)], u[(2, 2)]);

    let candidates = [(ra, t), (ra, -t), (rb, t), (rb, -t)];
    let mut best: Option<(usize, usize)> = None;
    for (idx, (r, t)) in candidates.iter().enumerate() {
        let count = cheirality_count(r, t, corrs);
        match best {
            Some((_, c)) if count <= c => {}
            _ => best = Some((idx, count)),
        }
    }
    let (idx, count) = best.unwrap();
    if count == 0 {
        return Err(GeometryError::CheiralityFailure);
    }
    let (r, t) = candidates[idx];
    Ok((Rotation(r), t))
}

/// Decomposes a calibrated homography into `(R, t)` with `t` of arbitrary
/// scale (near-zero for pure rotation). Faugeras SVD construction; candidates
/// with the plane normal facing away from camera 1 are discarded and the
/// remainder ranked by cheirality, lowest index on ties.
pub fn decompose_homography(
    h: &Mat3,
    corrs: &[NormMatch],
) -> Result<(Rotation, Vec3), GeometryError> {
    // fix the projective sign so that x2^T H x1 > 0 on the inliers
    let mut hm = *h;
    let mut vote = 0.0;
    for (x1, x2) in corrs {
        let hx = hm * Vec3::new(x1[0], x1[1], 1.0);
        vote += Vec3::new(x2[0], x2[1], 1.0).dot(&hx);
    }
    if vote < 0.0 {
        hm.neg_mut();
    }

    let svd = hm.svd(true, true);
    let d1 = svd.singular_values[0];
    let d2 = svd.singular_values[1];
    let d3 = svd.singular_values[2];
    let u = svd.u.unwrap();
    let v = svd.v_t.unwrap().transpose();
    let s = u.determinant() * v.determinant();

    // pure rotation: all singular values equal
    if (d1 - d3) / d2 < 1e-6 {
        let r = Rotation::project(&(hm / d2 * s));
        return Ok((r, Vec3::zeros()));
    }

    let (n1, n2, n3) = (d1 / d2, 1.0, d3 / d2);
    let x1m = ((n1 * n1 - n2 * n2) / (n1 * n1 - n3 * n3)).max(0.0).sqrt();
    let x3m = ((n2 * n2 - n3 * n3) / (n1 * n1 - n3 * n3)).max(0.0).sqrt();

    let mean_ray = {
        let mut m = Vec3::zeros();
        for (x1c, _) in corrs {
            m += Vec3::new(x1c[0], x1c[1], 1.0);
        }
        if corrs.is_empty() {
            Vec3::z()
        } else {
            m / corrs.len() as f64
        }
    };

    let mut candidates: Vec<(Mat3, Vec3, Vec3)> = Vec::with_capacity(8);
    for &e1 in &[1.0, -1.0] {
        for &e3 in &[1.0, -1.0] {
            let x1 = e1 * x1m;
            let x3 = e3 * x3m;
            // d' = +d2 family
            {
                let sin_t = (n1 - n3) * x1 * x3 / n2;
                let cos_t = (n1 * x3 * x3 + n3 * x1 * x1) / n2;
                let rp = Mat3::new(cos_t, 0.0, -sin_t, 0.0, 1.0, 0.0, sin_t, 0.0, cos_t);
                let tp = Vec3::new(x1, 0.0, -x3) * (n1 - n3);
                let np = Vec3::new(x1, 0.0, x3);
                candidates.push((u * rp * v.transpose() * s, u * tp, v * np));
            }
            // d' = -d2 family
            {
                let sin_p = (n1 + n3) * x1 * x3 / n2;
                let cos_p = (n3 * x1 * x1 - n1 * x3 * x3) / n2;
                let rp = Mat3::new(cos_p, 0.0, sin_p, 0.0, -1.0, 0.0, sin_p, 0.0, -cos_p);
                let tp = Vec3::new(x1, 0.0, x3) * (n1 + n3);
                let np = Vec3::new(x1, 0.0, x3);
                candidates.push((u * rp * v.transpose() * s, u * tp, v * np));
            }
        }
    }

    let mut best: Option<(usize, usize)> = None;
    for (idx, (r, t, n)) in candidates.iter().enumerate() {
        if r.determinant() < 0.0 {
            continue;
        }
        // plane must face camera 1: n . x1 > 0 for visible points
        if n.dot(&mean_ray) <= 0.0 {
            continue;
        }
        let tn = t.norm();
        let count = if tn < 1e-9 {
            0
        } else {
            cheirality_count(r, &(t / tn), corrs)
        };
        match best {
            Some((_, c)) if count <= c => {}
            _ => best = Some((idx, count)),
        }
    }
    match best {
        Some((idx, _)) => {
            let (r, t, _) = candidates[idx];
            Ok((Rotation::project(&r), t))
        }
        None => Err(GeometryError::HomographyDecompositionFailure),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use approx::assert_relative_eq;

    pub fn random_rotation(rng: &mut SplitMix64) -> Rotation {
        let axis = Vec3::new(rng.gauss(), rng.gauss(), rng.gauss());
        let angle = rng.uniform(0.0, std::f64::consts::PI);
        Rotation::from_axis_angle(&axis, angle)
    }

    fn random_unit(rng: &mut SplitMix64) -> Vec3 {
        Vec3::new(rng.gauss(), rng.gauss(), rng.gauss()).normalize()
    }

    #[test]
    fn rot6d_canonical_basis_is_identity() {
        let r = rot6d_to_matrix(&Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_relative_eq!(r.0, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rot6d_scaling_and_shear_removed() {
        let r = rot6d_to_matrix(&Rotation6D([2.0, 0.0, 0.0, 3.0, 1.0, 0.0])).unwrap();
        assert_relative_eq!(r.0, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rot6d_degenerate_inputs_rejected() {
        assert!(rot6d_to_matrix(&Rotation6D([0.0; 6])).is_err());
        // a2 parallel to a1: zero Gram-Schmidt residual
        assert!(rot6d_to_matrix(&Rotation6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn rot6d_round_trip_1000_random_rotations() {
        let mut rng = SplitMix64::new(7);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let back = rot6d_to_matrix(&matrix_to_rot6d(&r)).unwrap();
            max_err = max_err.max((back.0 - r.0).norm());
        }
        assert!(max_err < 1e-12, "max round-trip error {max_err:.3e}");
    }

    #[test]
    fn matrix_to_rot6d_column_readoff() {
        let r90 = Rotation::rot_z(std::f64::consts::FRAC_PI_2);
        let a = matrix_to_rot6d(&r90);
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (got, want) in a.0.iter().zip(expect.iter()) {
            assert_relative_eq!(got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn geodesic_identity_and_antipode() {
        let i = Rotation::identity();
        assert!(geodesic_distance(&i, &i) <= 4.5e-4);
        let pi_x = Rotation::rot_x(std::f64::consts::PI);
        assert!((geodesic_distance(&i, &pi_x) - std::f64::consts::PI).abs() < 1e-3);
    }

    #[test]
    fn geodesic_left_invariance_sweep() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let d = geodesic_distance(&r, &(r * Rotation::rot_z(0.3)));
            assert!((d - 0.3).abs() < 1e-6, "d = {d}");
        }
    }

    #[test]
    fn geodesic_right_invariance() {
        let mut rng = SplitMix64::new(13);
        for _ in 0..50 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let g = random_rotation(&mut rng);
            let d0 = geodesic_distance(&a, &b);
            let d1 = geodesic_distance(&(a * g), &(b * g));
            assert!((d0 - d1).abs() < 1e-9);
        }
    }

    #[test]
    fn essential_from_identity_and_x_translation() {
        let e = essential_from_relative(&Rotation::identity(), &Vec3::x()).unwrap();
        let expect = Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(e.0, expect, epsilon = 1e-15);
    }

    #[test]
    fn essential_zero_translation_rejected() {
        assert!(essential_from_relative(&Rotation::identity(), &Vec3::zeros()).is_err());
    }

    #[test]
    fn epipolar_error_scales_linearly_in_perturbation() {
        let e = essential_from_relative(&Rotation::rot_z(0.2), &Vec3::x()).unwrap();
        let x1 = [0.3, -0.1];
        // a point on the epipolar line of x1
        let m = &e.0;
        let l = [
            m[(0, 0)] * x1[0] + m[(0, 1)] * x1[1] + m[(0, 2)],
            m[(1, 0)] * x1[0] + m[(1, 1)] * x1[1] + m[(1, 2)],
            m[(2, 0)] * x1[0] + m[(2, 1)] * x1[1] + m[(2, 2)],
        ];
        // choose x2 with x2 . l = 0
        let x2 = [-l[2] / l[0], 0.0];
        assert!(epipolar_error(&e, &x1, &x2) < 1e-12);
        let delta = 1e-3;
        let x2p = [x2[0] + delta, x2[1]];
        assert_relative_eq!(
            epipolar_error(&e, &x1, &x2p),
            (delta * l[0]).abs(),
            epsilon = 1e-12
        );
    }

    /// Synthetic correspondences for a known relative pose, points in front
    /// of both cameras.
    fn synth_corrs(r: &Rotation, t: &Vec3, n: usize, rng: &mut SplitMix64) -> Vec<NormMatch> {
        let mut out = Vec::new();
        while out.len() < n {
            let p = Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(2.0, 5.0));
            let q = r.0 * p + t;
            if p.z > 0.1 && q.z > 0.1 {
                out.push(([p.x / p.z, p.y / p.z], [q.x / q.z, q.y / q.z]));
            }
        }
        out
    }

    #[test]
    fn essential_decomposition_recovers_pose() {
        let mut rng = SplitMix64::new(21);
        for _ in 0..50 {
            // keep rotation moderate so points stay in front of both cameras
            let r = Rotation::from_axis_angle(&random_unit(&mut rng), rng.uniform(0.05, 0.5));
            let t = random_unit(&mut rng) * 0.5;
            let corrs = synth_corrs(&r, &t, 20, &mut rng);
            let e = essential_from_relative(&r, &t.normalize()).unwrap();
            let (rd, td) = decompose_essential(&e, &corrs).unwrap();
            assert!(geodesic_distance(&r, &rd) < 1e-8);
            let angle = td.normalize().dot(&t.normalize()).clamp(-1.0, 1.0).acos();
            assert!(angle < 1e-8, "direction angle {angle}");
        }
    }

    #[test]
    fn essential_decomposition_sign_invariant() {
        let mut rng = SplitMix64::new(23);
        let r = Rotation::from_axis_angle(&random_unit(&mut rng), 0.3);
        let t = random_unit(&mut rng) * 0.4;
        let corrs = synth_corrs(&r, &t, 20, &mut rng);
        let e = essential_from_relative(&r, &t.normalize()).unwrap();
        let neg = EssentialMatrix(-e.0);
        let (r1, t1) = decompose_essential(&e, &corrs).unwrap();
        let (r2, t2) = decompose_essential(&neg, &corrs).unwrap();
        assert!(geodesic_distance(&r1, &r2) < 1e-9);
        assert!((t1 - t2).norm() < 1e-9);
    }

    #[test]
    fn noiseless_essential_zero_set() {
        let mut rng = SplitMix64::new(29);
        let r = Rotation::from_axis_angle(&random_unit(&mut rng), 0.25);
        let t = random_unit(&mut rng);
        let corrs = synth_corrs(&r, &t, 200, &mut rng);
        let e = essential_from_relative(&r, &t).unwrap();
        let max = corrs
            .iter()
            .map(|(x1, x2)| epipolar_error(&e, x1, x2))
            .fold(0.0, f64::max);
        assert!(max < 1e-10, "max epipolar error {max:.3e}");
    }

    /// Planar scene homography H = R + t n^T / d in calibrated coordinates.
    fn planar_homography(r: &Rotation, t: &Vec3, n: &Vec3, d: f64) -> Mat3 {
        r.0 + t * n.transpose() / d
    }

    #[test]
    fn homography_identity_is_pure_rotation() {
        let corrs = vec![([0.1, 0.2], [0.1, 0.2]), ([-0.3, 0.1], [-0.3, 0.1])];
        let (r, t) = decompose_homography(&Mat3::identity(), &corrs).unwrap();
        assert!(geodesic_distance(&r, &Rotation::identity()) < 1e-6);
        assert!(t.norm() < 1e-9);
    }

    #[test]
    fn homography_pure_rotation_recovered() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..20 {
            let r = Rotation::from_axis_angle(&random_unit(&mut rng), rng.uniform(0.05, 0.4));
            // correspondences consistent with the pure rotation
            let mut corrs = Vec::new();
            for _ in 0..15 {
                let p = Vec3::new(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 1.0);
                let q = r.0 * p;
                corrs.push(([p.x / p.z, p.y / p.z], [q.x / q.z, q.y / q.z]));
            }
            let h = r.0 / r.0.norm();
            let (rd, td) = decompose_homography(&h, &corrs).unwrap();
            assert!(geodesic_distance(&r, &rd) < 1e-8);
            assert!(td.norm() < 1e-8);
        }
    }

    #[test]
    fn homography_planar_scene_recovered() {
        let mut rng = SplitMix64::new(37);
        for _ in 0..20 {
            let r = Rotation::from_axis_angle(&random_unit(&mut rng), rng.uniform(0.1, 0.4));
            let t = random_unit(&mut rng) * rng.uniform(0.2, 0.6);
            // plane z = 3 in camera-1 frame: n = (0,0,1) tilted a bit, d = distance
            let n = Vec3::new(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 1.0).normalize();
            let d = 3.0;
            let h = planar_homography(&r, &t, &n, d);
            // points on the plane
            let mut corrs = Vec::new();
            for _ in 0..25 {
                let x = rng.uniform(-1.0, 1.0);
                let y = rng.uniform(-1.0, 1.0);
                // solve for depth so that n . p = d
                let dir = Vec3::new(x, y, 1.0);
                let depth = d / n.dot(&dir);
                let p = dir * depth;
                let q = r.0 * p + t;
                corrs.push(([p.x / p.z, p.y / p.z], [q.x / q.z, q.y / q.z]));
            }
            let hn = h / h.norm();
            let (rd, td) = decompose_homography(&hn, &corrs).unwrap();
            assert!(
                geodesic_distance(&r, &rd) < 1e-6,
                "rotation error {}",
                geodesic_distance(&r, &rd)
            );
            let angle = td.normalize().dot(&t.normalize()).clamp(-1.0, 1.0).acos();
            assert!(angle < 1e-6, "translation direction error {angle}");
        }
    }

    #[test]
    fn rot6d_backward_matches_finite_differences() {
        let mut rng = SplitMix64::new(41);
        for _ in 0..50 {
            let a: [f64; 6] = std::array::from_fn(|_| rng.gauss());
            let fwd = match Rot6Forward::new(&a) {
                Ok(f) => f,
                Err(_) => continue,
            };
            // random linear functional L = <G, R>
            let g = Mat3::from_fn(|_, _| rng.gauss());
            let grad = fwd.backward(&g);
            let h = 1e-6;
            for k in 0..6 {
                let mut ap = a;
                let mut am = a;
                ap[k] += h;
                am[k] -= h;
                let lp = (g.transpose() * Rot6Forward::new(&ap).unwrap().r).trace();
                let lm = (g.transpose() * Rot6Forward::new(&am).unwrap().r).trace();
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(1e-6);
                assert!(
                    (grad[k] - fd).abs() / denom < 1e-4,
                    "param {k}: analytic {} vs fd {}",
                    grad[k],
                    fd
                );
            }
        }
    }
}
