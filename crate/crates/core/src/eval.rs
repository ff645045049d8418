//! Ground-truth scoring of match sets: epipolar and reprojection errors,
//! recall/precision over a threshold ladder, relative pose from the
//! fundamental matrix, pose and homography AUC.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{reprojection_error, Homography, Match, Normalizer};

/// Integer thresholds 1..=16 px used for recall and precision.
pub const THRESHOLD_LADDER: std::ops::RangeInclusive<u32> = 1..=16;
/// Angular AUC thresholds in degrees.
pub const POSE_THRESHOLDS_DEG: [f64; 3] = [5.0, 10.0, 20.0];
/// Homography AUC thresholds in pixels.
pub const HOMOGRAPHY_THRESHOLDS_PX: [f64; 3] = [5.0, 10.0, 15.0];
/// Meters-to-degrees factor of the metric translation error.
pub const METRIC_TRANSLATION_FACTOR: f64 = 10.0;
/// Above this many pixels the common-area grid is evaluated with stride 4.
const COMMON_AREA_FULL_GRID_LIMIT: u64 = 1_000_000;
const LINE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least {need} matches, got {got}")]
    InsufficientMatches { need: usize, got: usize },
    #[error("degenerate configuration")]
    DegenerateConfiguration,
    #[error("metric translation error requires a ground-truth scale")]
    MissingScale,
}

/// Ground-truth relative pose: `x2 ~ K2 (R X + t)` for `X` in camera-1 frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGt {
    pub k1: Matrix3<f64>,
    pub k2: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    /// Meters per translation unit, when known.
    pub scale: Option<f64>,
}

impl PoseGt {
    pub fn fundamental(&self) -> Matrix3<f64> {
        let k1_inv = self.k1.try_inverse().unwrap_or_else(Matrix3::zeros);
        let k2_inv = self.k2.try_inverse().unwrap_or_else(Matrix3::zeros);
        k2_inv.transpose() * skew(&self.t) * self.r * k1_inv
    }

    /// Rotation orthonormal with det +1 and intrinsics upper triangular with
    /// positive diagonal.
    pub fn is_valid(&self) -> bool {
        let orthonormal = (self.r.transpose() * self.r - Matrix3::identity()).norm() < 1e-6
            && (self.r.determinant() - 1.0).abs() < 1e-6;
        let intrinsics_ok = |k: &Matrix3<f64>| {
            k[(1, 0)] == 0.0
                && k[(2, 0)] == 0.0
                && k[(2, 1)] == 0.0
                && (0..3).all(|i| k[(i, i)] > 0.0)
        };
        orthonormal && intrinsics_ok(&self.k1) && intrinsics_ok(&self.k2) && self.t.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Pose(PoseGt),
    Homography(Homography),
}

impl GroundTruth {
    /// Epipolar error for pose ground truth, reprojection error for planar.
    pub fn error(&self, m: &Match) -> f64 {
        match self {
            GroundTruth::Pose(p) => epipolar_error(&p.fundamental(), m),
            GroundTruth::Homography(h) => reprojection_error(h, m),
        }
    }
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Denominator of the epipolar distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpipolarDenominator {
    /// True point-to-line distance.
    #[default]
    Norm,
    /// Divides by the squared norm of the line normal.
    SquaredNorm,
}

/// Maximum of the two point-to-epipolar-line distances.
pub fn epipolar_error(f: &Matrix3<f64>, m: &Match) -> f64 {
    epipolar_error_with(f, m, EpipolarDenominator::Norm)
}

pub fn epipolar_error_with(f: &Matrix3<f64>, m: &Match, denominator: EpipolarDenominator) -> f64 {
    let x1 = Vector3::new(m.p1.x, m.p1.y, 1.0);
    let x2 = Vector3::new(m.p2.x, m.p2.y, 1.0);
    let l2 = f * x1;
    let l1 = f.transpose() * x2;
    let algebraic = x2.dot(&l2).abs();
    let distance = |line: &Vector3<f64>| {
        let n = line.x.hypot(line.y);
        if n < LINE_EPS {
            return f64::INFINITY;
        }
        match denominator {
            EpipolarDenominator::Norm => algebraic / n,
            EpipolarDenominator::SquaredNorm => algebraic / (n * n),
        }
    };
    distance(&l2).max(distance(&l1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScores {
    pub recall: f64,
    pub precision: f64,
    pub filtered: f64,
}

fn ladder_hits(e: f64) -> u64 {
    THRESHOLD_LADDER.filter(|&t| e < t as f64).count() as u64
}

/// Recall, precision and filtered fraction from per-match ground-truth
/// errors of the base set and of the filtered (possibly refined) set.
pub fn match_scores_from_errors(base_errors: &[f64], errors: &[f64]) -> MatchScores {
    let base_hits: u64 = base_errors.iter().map(|&e| ladder_hits(e)).sum();
    let hits: u64 = errors.iter().map(|&e| ladder_hits(e)).sum();
    let recall = if base_hits == 0 { 0.0 } else { hits as f64 / base_hits as f64 };
    let ladder = THRESHOLD_LADDER.count() as f64;
    let precision = if errors.is_empty() {
        0.0
    } else {
        hits as f64 / (errors.len() as f64 * ladder)
    };
    let filtered = if base_errors.is_empty() {
        0.0
    } else {
        1.0 - errors.len() as f64 / base_errors.len() as f64
    };
    MatchScores {
        recall,
        precision,
        filtered,
    }
}

pub fn match_scores(base: &[Match], filtered: &[Match], gt: &GroundTruth) -> MatchScores {
    let base_errors: Vec<f64> = base.iter().map(|m| gt.error(m)).collect();
    let errors: Vec<f64> = filtered.iter().map(|m| gt.error(m)).collect();
    match_scores_from_errors(&base_errors, &errors)
}

/// Intrinsics guess for a `w × h` image: focal length `max(w, h)`,
/// principal point at the image center.
pub fn estimate_intrinsics(w: u32, h: u32) -> Matrix3<f64> {
    let f = w.max(h) as f64;
    Matrix3::new(f, 0.0, w as f64 / 2.0, 0.0, f, h as f64 / 2.0, 0.0, 0.0, 1.0)
}

/// Least-squares normalized 8-point fundamental matrix with rank 2 enforced.
pub fn fundamental_8point(matches: &[Match]) -> Result<Matrix3<f64>, EvalError> {
    if matches.len() < 8 {
        return Err(EvalError::InsufficientMatches {
            need: 8,
            got: matches.len(),
        });
    }
    let n1 = Normalizer::fit(matches.iter().map(|m| &m.p1)).ok_or(EvalError::DegenerateConfiguration)?;
    let n2 = Normalizer::fit(matches.iter().map(|m| &m.p2)).ok_or(EvalError::DegenerateConfiguration)?;
    let rows = matches.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in matches.iter().enumerate() {
        let p = n1.apply(&m.p1);
        let q = n2.apply(&m.p2);
        let row = [q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0];
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(EvalError::DegenerateConfiguration)?;
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * svd.singular_values[0]).count();
    if rank < 8 {
        return Err(EvalError::DegenerateConfiguration);
    }
    let f = v_t.row(8);
    let fn_ = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let svd = fn_.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let rank2 = u * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], 0.0)) * v_t;
    let f = n2.t.transpose() * rank2 * n1.t;
    let norm = f.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(EvalError::DegenerateConfiguration);
    }
    Ok(f / norm)
}

/// A relative pose candidate. Translations are unit vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

/// The four `{R₁, R₂} × {±t}` decompositions of an essential matrix.
pub fn decompose_essential(e: &Matrix3<f64>) -> Result<[Pose; 4], EvalError> {
    let svd = e.svd(true, true);
    let mut u = svd.u.ok_or(EvalError::DegenerateConfiguration)?;
    let mut v = svd.v_t.ok_or(EvalError::DegenerateConfiguration)?.transpose();
    if !(svd.singular_values[1] > 0.0) {
        return Err(EvalError::DegenerateConfiguration);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v.determinant() < 0.0 {
        v = -v;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v.transpose();
    let r2 = u * w.transpose() * v.transpose();
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    Ok([
        Pose { r: r1, t },
        Pose { r: r1, t: -t },
        Pose { r: r2, t },
        Pose { r: r2, t: -t },
    ])
}

/// Fundamental matrix by the 8-point method, upgraded to `E = K₂ᵀ F K₁`
/// and decomposed into the four pose candidates.
pub fn pose_from_fundamental(
    matches: &[Match],
    k1: &Matrix3<f64>,
    k2: &Matrix3<f64>,
) -> Result<[Pose; 4], EvalError> {
    let f = fundamental_8point(matches)?;
    decompose_essential(&(k2.transpose() * f * k1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseErrorMode {
    Angular,
    Metric,
}

fn acos_deg(c: f64) -> f64 {
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_error_deg(r_gt: &Matrix3<f64>, r: &Matrix3<f64>) -> f64 {
    acos_deg(((r_gt.transpose() * r).trace() - 1.0) / 2.0)
}

pub fn translation_angle_deg(t_gt: &Vector3<f64>, t: &Vector3<f64>) -> f64 {
    acos_deg(t_gt.dot(t) / (t_gt.norm() * t.norm()))
}

/// `z · ‖t̃ − ‖t̃‖ t/‖t‖‖` with `t̃` in meters.
pub fn translation_metric_error(t_gt_m: &Vector3<f64>, t: &Vector3<f64>) -> f64 {
    METRIC_TRANSLATION_FACTOR * (t_gt_m - t_gt_m.norm() * t / t.norm()).norm()
}

/// Minimum over candidates of the larger of the rotation and translation
/// errors.
pub fn pose_error(candidates: &[Pose], gt: &PoseGt, mode: PoseErrorMode) -> Result<f64, EvalError> {
    let t_metric = match mode {
        PoseErrorMode::Angular => None,
        PoseErrorMode::Metric => Some(gt.t * gt.scale.ok_or(EvalError::MissingScale)?),
    };
    Ok(candidates
        .iter()
        .map(|c| {
            let rot = rotation_error_deg(&gt.r, &c.r);
            let trans = match &t_metric {
                None => translation_angle_deg(&gt.t, &c.t),
                Some(tm) => translation_metric_error(tm, &c.t),
            };
            rot.max(trans)
        })
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub mean: f64,
}

/// Normalized area under the empirical error CDF up to each threshold:
/// `AUC@t = mean_i max(0, 1 − eᵢ/t)`. Non-finite errors count as misses.
pub fn auc(errors: &[f64], thresholds: &[f64]) -> AucSummary {
    let values: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            if errors.is_empty() {
                return 0.0;
            }
            errors
                .iter()
                .map(|&e| if e.is_nan() { 0.0 } else { (1.0 - e / t).max(0.0) })
                .sum::<f64>()
                / errors.len() as f64
        })
        .collect();
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    AucSummary {
        thresholds: thresholds.to_vec(),
        values,
        mean,
    }
}

fn common_area_mean(est: &Homography, gt: &Homography, w: u32, h: u32, stride: usize) -> f64 {
    let (wf, hf) = (w as f64, h as f64);
    let mut sum = 0.0;
    let mut count = 0u64;
    for y in (1..=h).step_by(stride) {
        for x in (1..=w).step_by(stride) {
            let p = crate::geometry::Point2::new(x as f64, y as f64);
            let Some(q) = gt.project(&p) else { continue };
            if !(q.x >= 1.0 && q.x <= wf && q.y >= 1.0 && q.y <= hf) {
                continue;
            }
            count += 1;
            sum += match est.project(&p) {
                Some(e) => (e - q).norm(),
                None => f64::INFINITY,
            };
        }
    }
    if count == 0 {
        f64::INFINITY
    } else {
        sum / count as f64
    }
}

/// Larger of the mean transfer discrepancies between `h_est` and `h_gt`
/// over the pixels of each `w × h` image that the ground truth maps inside
/// the other. `+∞` when the common area is empty.
pub fn homography_common_area_error(h_est: &Homography, h_gt: &Homography, w: u32, h: u32) -> f64 {
    let stride = if (w as u64) * (h as u64) > COMMON_AREA_FULL_GRID_LIMIT { 4 } else { 1 };
    let forward = common_area_mean(h_est, h_gt, w, h, stride);
    let backward = common_area_mean(&h_est.inverse(), &h_gt.inverse(), w, h, stride);
    forward.max(backward)
}

/// Per-pair evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: f64,
    pub precision: f64,
    pub filtered: f64,
    pub base_matches: usize,
    pub matches: usize,
    /// Pose error in degrees (angular), or degree-equivalent (metric).
    pub pose_error_angular: Option<f64>,
    pub pose_error_metric: Option<f64>,
    pub homography_error: Option<f64>,
    pub auc_f_angular: Option<AucSummary>,
    pub auc_f_metric: Option<AucSummary>,
    pub auc_h: Option<AucSummary>,
}

/// Full evaluation of one image pair. Pose errors fall back to `+∞` when
/// too few matches survive; `size` is needed for homography ground truth.
pub fn evaluate_pair(base: &[Match], filtered: &[Match], gt: &GroundTruth, size: Option<(u32, u32)>) -> EvalReport {
    let scores = match_scores(base, filtered, gt);
    let mut report = EvalReport {
        recall: scores.recall,
        precision: scores.precision,
        filtered: scores.filtered,
        base_matches: base.len(),
        matches: filtered.len(),
        pose_error_angular: None,
        pose_error_metric: None,
        homography_error: None,
        auc_f_angular: None,
        auc_f_metric: None,
        auc_h: None,
    };
    match gt {
        GroundTruth::Pose(p) => {
            let candidates = pose_from_fundamental(filtered, &p.k1, &p.k2).ok();
            let err = |mode| {
                candidates
                    .as_ref()
                    .map_or(Ok(f64::INFINITY), |c| pose_error(c, p, mode))
            };
            let angular = err(PoseErrorMode::Angular).unwrap_or(f64::INFINITY);
            report.pose_error_angular = Some(angular);
            report.auc_f_angular = Some(auc(&[angular], &POSE_THRESHOLDS_DEG));
            if p.scale.is_some() {
                let metric = err(PoseErrorMode::Metric).unwrap_or(f64::INFINITY);
                report.pose_error_metric = Some(metric);
                report.auc_f_metric = Some(auc(&[metric], &POSE_THRESHOLDS_DEG));
            }
        }
        GroundTruth::Homography(h_gt) => {
            if let Some((w, h)) = size {
                let err = crate::geometry::fit_homography_dlt(filtered)
                    .map(|fit| homography_common_area_error(&fit.homography, h_gt, w, h))
                    .unwrap_or(f64::INFINITY);
                report.homography_error = Some(err);
                report.auc_h = Some(auc(&[err], &HOMOGRAPHY_THRESHOLDS_PX));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rot_z(deg: f64) -> Matrix3<f64> {
        let (s, c) = deg.to_radians().sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn epipolar_error_of_pure_translation() {
        let f = skew(&Vector3::new(1.0, 0.0, 0.0));
        let m = Match::new(0.0, 0.0, 5.0, 2.0);
        assert_relative_eq!(epipolar_error(&f, &m), 2.0, epsilon = 1e-12);
        assert_relative_eq!(epipolar_error(&f, &m), epipolar_error(&f.transpose(), &m.swapped()), epsilon = 1e-12);
        let degenerate = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(epipolar_error(&degenerate, &m), f64::INFINITY);
        let scaled = f * 2.0;
        assert_relative_eq!(
            epipolar_error_with(&scaled, &m, EpipolarDenominator::SquaredNorm),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn scores_examples() {
        let s = match_scores_from_errors(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!((s.recall, s.precision, s.filtered), (1.0, 1.0, 0.0));
        let s = match_scores_from_errors(&[0.0, 3.0], &[]);
        assert_eq!((s.recall, s.precision, s.filtered), (0.0, 0.0, 1.0));
        let s = match_scores_from_errors(&[0.5, 8.5, 100.0], &[0.5, 8.5]);
        assert_eq!(s.recall, 1.0);
        assert_eq!(s.precision, 0.75);
        assert_relative_eq!(s.filtered, 1.0 / 3.0, epsilon = 1e-15);
        let s = match_scores_from_errors(&[100.0], &[100.0]);
        assert_eq!(s.recall, 0.0);
    }

    #[test]
    fn intrinsics_examples() {
        let k = estimate_intrinsics(640, 480);
        assert_eq!((k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]), (640.0, 640.0, 320.0, 240.0));
        let k = estimate_intrinsics(1000, 1000);
        assert_eq!((k[(0, 0)], k[(0, 2)], k[(1, 2)]), (1000.0, 500.0, 500.0));
        let k = estimate_intrinsics(1, 1);
        assert_eq!((k[(0, 0)], k[(0, 2)], k[(1, 2)]), (1.0, 0.5, 0.5));
    }

    #[test]
    fn essential_of_pure_translation_contains_identity() {
        let e = skew(&Vector3::new(1.0, 0.0, 0.0));
        let cands = decompose_essential(&e).unwrap();
        assert!(cands.iter().any(|c| rotation_error_deg(&Matrix3::identity(), &c.r) < 1e-9));
        for c in &cands {
            assert_relative_eq!(c.r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn too_few_matches_for_pose() {
        let m = vec![Match::new(0.0, 0.0, 1.0, 1.0); 7];
        assert_eq!(
            pose_from_fundamental(&m, &Matrix3::identity(), &Matrix3::identity()),
            Err(EvalError::InsufficientMatches { need: 8, got: 7 })
        );
    }

    #[test]
    fn pose_error_examples() {
        let gt = PoseGt {
            k1: Matrix3::identity(),
            k2: Matrix3::identity(),
            r: Matrix3::identity(),
            t: Vector3::new(1.0, 0.0, 0.0),
            scale: Some(1.0),
        };
        let exact = [Pose { r: gt.r, t: gt.t }];
        assert_eq!(pose_error(&exact, &gt, PoseErrorMode::Angular).unwrap(), 0.0);
        let flipped = [Pose { r: rot_z(180.0), t: gt.t }];
        assert_relative_eq!(pose_error(&flipped, &gt, PoseErrorMode::Angular).unwrap(), 180.0, epsilon = 1e-9);
        let sideways = [Pose {
            r: gt.r,
            t: Vector3::new(0.0, 1.0, 0.0),
        }];
        assert_relative_eq!(
            pose_error(&sideways, &gt, PoseErrorMode::Metric).unwrap(),
            10.0 * 2f64.sqrt(),
            epsilon = 1e-9
        );
        let unscaled = PoseGt { scale: None, ..gt };
        assert_eq!(pose_error(&sideways, &unscaled, PoseErrorMode::Metric), Err(EvalError::MissingScale));
    }

    #[test]
    fn auc_examples() {
        let a = auc(&[0.0, 0.0], &POSE_THRESHOLDS_DEG);
        assert_eq!(a.values, vec![1.0, 1.0, 1.0]);
        let a = auc(&[25.0, f64::INFINITY], &POSE_THRESHOLDS_DEG);
        assert_eq!(a.values, vec![0.0, 0.0, 0.0]);
        let a = auc(&[5.0], &[10.0]);
        assert_relative_eq!(a.values[0], 0.5, epsilon = 1e-12);
        assert_eq!(auc(&[], &[5.0]).mean, 0.0);
    }

    #[test]
    fn common_area_examples() {
        let gt = Homography::translation(10.0, -4.0);
        assert_eq!(homography_common_area_error(&gt, &gt, 64, 48), 0.0);
        let shifted = Homography::translation(1.0, 0.0).compose(&gt).unwrap();
        assert_relative_eq!(homography_common_area_error(&shifted, &gt, 64, 48), 1.0, epsilon = 1e-9);
        let away = Homography::translation(500.0, 0.0);
        assert_eq!(homography_common_area_error(&away, &away, 64, 48), f64::INFINITY);
        // homogeneous scale of the inputs does not matter
        let scaled = Homography::new(shifted.matrix() * -7.0).unwrap();
        assert_relative_eq!(homography_common_area_error(&scaled, &gt, 64, 48), 1.0, epsilon = 1e-9);
    }
}
