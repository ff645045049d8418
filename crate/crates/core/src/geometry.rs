//! Projective primitives shared by the plane filters: normalized DLT
//! homography fitting, symmetric reprojection error, quasi-affinity and
//! minimal-sample degeneracy checks.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};
use thiserror::Error;

/// Pixel coordinates, 0-based with pixel centers on integers.
pub type Point2 = nalgebra::Point2<f64>;

/// Smallest non-trivial singular value a minimal sample must exceed after
/// Hartley normalization.
pub const MIN_SAMPLE_SINGULAR_VALUE: f64 = 0.05;

const INFINITY_EPS: f64 = 1e-12;
const SINGULAR_DET_EPS: f64 = 1e-18;
const NULLSPACE_EPS: f64 = 1e-10;
const COLLINEAR_EPS: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("need at least {need} matches, got {got}")]
    NotEnoughMatches { need: usize, got: usize },
    #[error("degenerate sample: points are collinear or the solution is ill-conditioned")]
    DegenerateSample,
    #[error("homography matrix is singular or not finite")]
    Singular,
}

/// A correspondence between a keypoint in image 1 and one in image 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub p1: Point2,
    pub p2: Point2,
}

impl Match {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            p1: Point2::new(x1, y1),
            p2: Point2::new(x2, y2),
        }
    }

    pub fn from_points(p1: Point2, p2: Point2) -> Self {
        Self { p1, p2 }
    }

    /// The same correspondence seen from image 2.
    pub fn swapped(&self) -> Self {
        Self {
            p1: self.p2,
            p2: self.p1,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p1.x.is_finite() && self.p1.y.is_finite() && self.p2.x.is_finite() && self.p2.y.is_finite()
    }
}

/// Invertible planar projective map.
///
/// Stored with unit Frobenius norm and its largest-magnitude entry positive,
/// so two homographies describing the same map compare equal up to rounding.
/// The inverse is cached under the same convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
    inv: Matrix3<f64>,
}

fn normalize_projective(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let norm = m.norm();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    let mut n = m / norm;
    let mut largest = 0.0f64;
    let mut sign = 1.0;
    for v in n.iter() {
        if v.abs() > largest {
            largest = v.abs();
            sign = v.signum();
        }
    }
    if sign < 0.0 {
        n = -n;
    }
    Some(n)
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let m = normalize_projective(&m).ok_or(GeometryError::Singular)?;
        let det = m.determinant();
        if !det.is_finite() || det.abs() < SINGULAR_DET_EPS {
            return Err(GeometryError::Singular);
        }
        let inv = m.try_inverse().ok_or(GeometryError::Singular)?;
        let inv = normalize_projective(&inv).ok_or(GeometryError::Singular)?;
        Ok(Self { m, inv })
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity()).expect("identity is invertible")
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
            .expect("translation is invertible")
    }

    /// Counter-clockwise rotation by `angle` (in the pixel frame) about `center`.
    pub fn rotation_about(angle: f64, center: Point2) -> Self {
        let (s, c) = exact_sin_cos(angle);
        let tx = center.x - c * center.x + s * center.y;
        let ty = center.y - s * center.x - c * center.y;
        Self::new(Matrix3::new(c, -s, tx, s, c, ty, 0.0, 0.0, 1.0)).expect("rotation is invertible")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse_matrix(&self) -> &Matrix3<f64> {
        &self.inv
    }

    pub fn inverse(&self) -> Self {
        Self {
            m: self.inv,
            inv: self.m,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self, GeometryError> {
        Self::new(self.m * other.m)
    }

    /// Last homogeneous coordinate of `H·p` (unnormalized).
    pub fn last_coordinate(&self, p: &Point2) -> f64 {
        self.m[(2, 0)] * p.x + self.m[(2, 1)] * p.y + self.m[(2, 2)]
    }

    /// Last homogeneous coordinate of `H⁻¹·p`.
    pub fn inverse_last_coordinate(&self, p: &Point2) -> f64 {
        self.inv[(2, 0)] * p.x + self.inv[(2, 1)] * p.y + self.inv[(2, 2)]
    }

    /// `H·p`, or `None` when the image lies at infinity.
    pub fn project(&self, p: &Point2) -> Option<Point2> {
        project_with(&self.m, p)
    }

    /// `H⁻¹·p`, or `None` when the image lies at infinity.
    pub fn project_inverse(&self, p: &Point2) -> Option<Point2> {
        project_with(&self.inv, p)
    }
}

pub(crate) fn project_with(m: &Matrix3<f64>, p: &Point2) -> Option<Point2> {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    let scale = v.x.abs().max(v.y.abs()).max(v.z.abs());
    if !(v.z.abs() > INFINITY_EPS * scale) {
        return None;
    }
    Some(Point2::new(v.x / v.z, v.y / v.z))
}

/// sin/cos that are exact at multiples of 90°.
pub(crate) fn exact_sin_cos(angle: f64) -> (f64, f64) {
    let quarter = angle / std::f64::consts::FRAC_PI_2;
    let k = quarter.round();
    if (quarter - k).abs() < 1e-12 {
        match (k as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        angle.sin_cos()
    }
}

/// Maximum of the forward and backward transfer errors of `m` under `h`.
/// Reprojections at infinity give `+∞`.
pub fn reprojection_error(h: &Homography, m: &Match) -> f64 {
    let forward = match h.project(&m.p1) {
        Some(p) => (m.p2 - p).norm(),
        None => return f64::INFINITY,
    };
    let backward = match h.project_inverse(&m.p2) {
        Some(p) => (m.p1 - p).norm(),
        None => return f64::INFINITY,
    };
    forward.max(backward)
}

fn same_sign(a: f64, b: f64) -> bool {
    (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
}

/// Quasi-affinity of a single match with respect to the anchor match of the
/// generating sample, checked in both directions.
pub fn is_quasi_affine(h: &Homography, anchor: &Match, m: &Match) -> bool {
    same_sign(h.last_coordinate(&m.p1), h.last_coordinate(&anchor.p1))
        && same_sign(
            h.inverse_last_coordinate(&m.p2),
            h.inverse_last_coordinate(&anchor.p2),
        )
}

pub fn quasi_affine_set(h: &Homography, anchor: &Match, matches: &[Match]) -> Vec<usize> {
    matches
        .iter()
        .enumerate()
        .filter(|(_, m)| is_quasi_affine(h, anchor, m))
        .map(|(i, _)| i)
        .collect()
}

/// A homography hypothesis together with the minimal sample that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct HomographyModel {
    pub h: Homography,
    /// First match of the generating sample; its image-1 point is the
    /// forward quasi-affinity reference, its image-2 point the reverse one.
    pub anchor: Match,
    /// Indices of the generating sample in the match set it was drawn from.
    pub sample: [usize; 4],
}

impl HomographyModel {
    pub fn new(h: Homography, anchor: Match, sample: [usize; 4]) -> Self {
        Self { h, anchor, sample }
    }

    /// Reprojection error, or `+∞` when the match violates quasi-affinity.
    pub fn error(&self, m: &Match) -> f64 {
        if is_quasi_affine(&self.h, &self.anchor, m) {
            reprojection_error(&self.h, m)
        } else {
            f64::INFINITY
        }
    }

    pub fn is_inlier(&self, m: &Match, t: f64) -> bool {
        self.error(m) <= t
    }
}

pub fn inlier_set(model: &HomographyModel, matches: &[Match], t: f64) -> Vec<usize> {
    matches
        .iter()
        .enumerate()
        .filter(|(_, m)| model.is_inlier(m, t))
        .map(|(i, _)| i)
        .collect()
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance from it to √2.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Normalizer {
    pub t: Matrix3<f64>,
}

impl Normalizer {
    pub fn fit<'a>(points: impl Iterator<Item = &'a Point2> + Clone) -> Option<Self> {
        let mut n = 0usize;
        let (mut cx, mut cy) = (0.0, 0.0);
        for p in points.clone() {
            cx += p.x;
            cy += p.y;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        cx /= n as f64;
        cy /= n as f64;
        let mean_dist = points
            .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
            .sum::<f64>()
            / n as f64;
        if !(mean_dist > 0.0) || !mean_dist.is_finite() {
            return None;
        }
        let s = std::f64::consts::SQRT_2 / mean_dist;
        Some(Self {
            t: Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0),
        })
    }

    pub fn apply(&self, p: &Point2) -> Point2 {
        Point2::new(
            self.t[(0, 0)] * p.x + self.t[(0, 2)],
            self.t[(1, 1)] * p.y + self.t[(1, 2)],
        )
    }
}

fn is_collinear(points: &[Point2]) -> bool {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p.x / n, y + p.y / n));
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = nalgebra::Vector2::new(p.x - mx, p.y - my);
        cov += d * d.transpose() / n;
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    !(hi > 0.0) || lo <= COLLINEAR_EPS * hi
}

/// Result of a DLT fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DltFit {
    pub homography: Homography,
    /// Smallest non-trivial singular value of the normalized design matrix
    /// (the 8th largest), used by the minimal-sample degeneracy check.
    pub smallest_singular: f64,
}

/// Normalized DLT homography fit from image 1 to image 2.
pub fn fit_homography_dlt(matches: &[Match]) -> Result<DltFit, GeometryError> {
    if matches.len() < 4 {
        return Err(GeometryError::NotEnoughMatches {
            need: 4,
            got: matches.len(),
        });
    }
    let n1 = Normalizer::fit(matches.iter().map(|m| &m.p1)).ok_or(GeometryError::DegenerateSample)?;
    let n2 = Normalizer::fit(matches.iter().map(|m| &m.p2)).ok_or(GeometryError::DegenerateSample)?;
    let q1: Vec<Point2> = matches.iter().map(|m| n1.apply(&m.p1)).collect();
    let q2: Vec<Point2> = matches.iter().map(|m| n2.apply(&m.p2)).collect();
    if is_collinear(&q1) || is_collinear(&q2) {
        return Err(GeometryError::DegenerateSample);
    }

    let rows = (2 * matches.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in q1.iter().zip(&q2).enumerate() {
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r = 2 * i;
        a[(r, 3)] = -x;
        a[(r, 4)] = -y;
        a[(r, 5)] = -1.0;
        a[(r, 6)] = v * x;
        a[(r, 7)] = v * y;
        a[(r, 8)] = v;
        a[(r + 1, 0)] = x;
        a[(r + 1, 1)] = y;
        a[(r + 1, 2)] = 1.0;
        a[(r + 1, 6)] = -u * x;
        a[(r + 1, 7)] = -u * y;
        a[(r + 1, 8)] = -u;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateSample)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let null_idx = order[8];
    let smallest_singular = svd.singular_values[order[7]];
    if !(smallest_singular > NULLSPACE_EPS) {
        return Err(GeometryError::DegenerateSample);
    }

    let h = v_t.row(null_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t2_inv = n2.t.try_inverse().ok_or(GeometryError::DegenerateSample)?;
    let homography =
        Homography::new(t2_inv * hn * n1.t).map_err(|_| GeometryError::DegenerateSample)?;
    Ok(DltFit {
        homography,
        smallest_singular,
    })
}

/// Every pair of sample keypoints at least `min_distance` apart, in both images.
pub fn sample_is_spread(sample: &[Match; 4], min_distance: f64) -> bool {
    for i in 0..4 {
        for j in (i + 1)..4 {
            if (sample[i].p1 - sample[j].p1).norm() < min_distance
                || (sample[i].p2 - sample[j].p2).norm() < min_distance
            {
                return false;
            }
        }
    }
    true
}

/// Accepts a minimal sample iff its keypoints are spread by at least
/// `min_distance` in both images and the normalized system is well
/// conditioned (`smallest_singular > 0.05`).
pub fn sample_degeneracy_check(sample: &[Match; 4], smallest_singular: f64, min_distance: f64) -> bool {
    sample_is_spread(sample, min_distance) && smallest_singular > MIN_SAMPLE_SINGULAR_VALUE
}

/// Quasi-affinity of the generating sample itself: all four keypoints on
/// the same side of the line sent to infinity, in both directions.
pub fn sample_is_quasi_affine(h: &Homography, sample: &[Match; 4]) -> bool {
    sample.iter().all(|m| is_quasi_affine(h, &sample[0], m))
}
