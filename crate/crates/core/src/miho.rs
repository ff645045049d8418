//! Middle homography: each match is split at the midpoint of its keypoints
//! and planes are fitted as tied homography pairs mapping both images into
//! the shared middle plane, which halves the patch distortion on each side.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::{
    exact_sin_cos, fit_homography_dlt, is_quasi_affine, reprojection_error, sample_degeneracy_check,
    GeometryError, Homography, Match, Point2,
};
use crate::mop::{finalize, find_planes, FilterResult, MopConfig, MopError, PlaneModel};

/// Above this many matches, rotation fixing scores a random subset of pairs.
const ROTATION_FULL_PAIRS_LIMIT: usize = 1500;
const ROTATION_SAMPLED_PAIRS: usize = 1_000_000;
const ROTATION_SAMPLING_SEED: u64 = 0x5eed_0f_90;

/// Candidate relative rotations of image 2, in radians.
pub const ROTATION_CANDIDATES: [f64; 4] = [
    0.0,
    std::f64::consts::FRAC_PI_2,
    std::f64::consts::PI,
    3.0 * std::f64::consts::FRAC_PI_2,
];

/// Tied homographies mapping image 1 (`h1`) and image 2 (`h2`) into the
/// middle plane. `h2⁻¹ · h1` maps image 1 onto image 2.
#[derive(Debug, Clone, PartialEq)]
pub struct MihoPair {
    pub h1: Homography,
    pub h2: Homography,
}

impl MihoPair {
    pub fn composite(&self) -> Result<Homography, GeometryError> {
        self.h2.inverse().compose(&self.h1)
    }
}

/// A match split at its midpoint `m`: `m1 = (x1, m)` and `m2 = (m, x2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMatch {
    pub m1: Match,
    pub m2: Match,
    pub midpoint: Point2,
}

impl SplitMatch {
    pub fn new(m: &Match) -> Self {
        let midpoint = midpoint(m);
        Self {
            m1: Match::from_points(m.p1, midpoint),
            m2: Match::from_points(midpoint, m.p2),
            midpoint,
        }
    }

    pub fn rejoin(&self) -> Match {
        Match::from_points(self.m1.p1, self.m2.p2)
    }
}

pub fn midpoint(m: &Match) -> Point2 {
    Point2::new((m.p1.x + m.p2.x) / 2.0, (m.p1.y + m.p2.y) / 2.0)
}

pub fn split_midpoints(matches: &[Match]) -> (Vec<Match>, Vec<Match>) {
    matches
        .iter()
        .map(|m| {
            let s = SplitMatch::new(m);
            (s.m1, s.m2)
        })
        .unzip()
}

/// Joins halves `(x1, m)` and `(m, x2)` back into `(x1, x2)`.
pub fn rejoin(first: &[Match], second: &[Match]) -> Vec<Match> {
    first
        .iter()
        .zip(second)
        .map(|(a, b)| Match::from_points(a.p1, b.p2))
        .collect()
}

/// Fits `h1: x1 → m` and `h2: x2 → m` on a four-match sample. Both halves
/// must pass the spread and conditioning checks at `min_distance`.
pub fn fit_dual_homography(sample: &[Match; 4], min_distance: f64) -> Result<MihoPair, GeometryError> {
    let split = sample.map(|m| SplitMatch::new(&m));
    let side1 = split.map(|s| s.m1);
    let side2 = split.map(|s| s.m2.swapped());
    let fit_side = |side: &[Match; 4]| -> Result<Homography, GeometryError> {
        let fit = fit_homography_dlt(side)?;
        if !sample_degeneracy_check(side, fit.smallest_singular, min_distance) {
            return Err(GeometryError::DegenerateSample);
        }
        Ok(fit.homography)
    };
    Ok(MihoPair {
        h1: fit_side(&side1)?,
        h2: fit_side(&side2)?,
    })
}

/// A midpoint homography pair with its generating sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MihoModel {
    pub pair: MihoPair,
    /// `(s₁₁, m₁)`: quasi-affinity reference of the image-1 side.
    pub anchor1: Match,
    /// `(s₂₁, m₁)`: quasi-affinity reference of the image-2 side.
    pub anchor2: Match,
    pub sample: [usize; 4],
}

impl MihoModel {
    pub fn from_pair(pair: MihoPair, anchor: &Match, sample: [usize; 4]) -> Self {
        let mid = midpoint(anchor);
        Self {
            pair,
            anchor1: Match::from_points(anchor.p1, mid),
            anchor2: Match::from_points(anchor.p2, mid),
            sample,
        }
    }

    fn side1_error(&self, half: &Match) -> f64 {
        if is_quasi_affine(&self.pair.h1, &self.anchor1, half) {
            reprojection_error(&self.pair.h1, half)
        } else {
            f64::INFINITY
        }
    }

    fn side2_error(&self, half: &Match) -> f64 {
        let toward_middle = half.swapped();
        if is_quasi_affine(&self.pair.h2, &self.anchor2, &toward_middle) {
            reprojection_error(&self.pair.h2, &toward_middle)
        } else {
            f64::INFINITY
        }
    }
}

impl PlaneModel for MihoModel {
    fn fit_sample(matches: &[Match], sample: [usize; 4], min_distance: f64) -> Option<Self> {
        let s = sample.map(|i| matches[i]);
        let pair = fit_dual_homography(&s, min_distance).ok()?;
        let model = MihoModel::from_pair(pair, &s[0], sample);
        s.iter().all(|m| model.error(m).is_finite()).then_some(model)
    }

    /// Larger of the two half errors; `+∞` if either half violates
    /// quasi-affinity.
    fn error(&self, m: &Match) -> f64 {
        let s = SplitMatch::new(m);
        self.side1_error(&s.m1).max(self.side2_error(&s.m2))
    }

    fn sample(&self) -> [usize; 4] {
        self.sample
    }
}

/// Joint inlier set over split matches: a match is kept only when both its
/// halves are inliers (error and quasi-affinity) of their side.
pub fn miho_inlier_set(model: &MihoModel, first: &[Match], second: &[Match], t: f64) -> Vec<usize> {
    first
        .iter()
        .zip(second)
        .enumerate()
        .filter(|(_, (a, b))| model.side1_error(a) <= t && model.side2_error(b) <= t)
        .map(|(i, _)| i)
        .collect()
}

fn rotate_vector(v: nalgebra::Vector2<f64>, sin: f64, cos: f64) -> nalgebra::Vector2<f64> {
    nalgebra::Vector2::new(cos * v.x - sin * v.y, sin * v.x + cos * v.y)
}

/// Counts, per candidate angle, the match pairs whose midpoint distance lies
/// between the two keypoint distances once image 2 is rotated by the angle.
pub fn rotation_votes(matches: &[Match]) -> [u64; 4] {
    let trig = ROTATION_CANDIDATES.map(exact_sin_cos);
    let vote = |i: usize, j: usize| -> [u64; 4] {
        let d1 = matches[i].p1 - matches[j].p1;
        let d2 = matches[i].p2 - matches[j].p2;
        let (n1, n2) = (d1.norm(), d2.norm());
        let (lo, hi) = (n1.min(n2), n1.max(n2));
        trig.map(|(s, c)| {
            let dm = (d1 + rotate_vector(d2, s, c)).norm() / 2.0;
            u64::from(dm >= lo && dm <= hi)
        })
    };
    let add = |a: [u64; 4], b: [u64; 4]| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]];

    let n = matches.len();
    if n <= ROTATION_FULL_PAIRS_LIMIT {
        (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| vote(i, j)).fold([0; 4], add))
            .reduce(|| [0; 4], add)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(ROTATION_SAMPLING_SEED);
        let pairs: Vec<(usize, usize)> = (0..ROTATION_SAMPLED_PAIRS)
            .map(|_| loop {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i != j {
                    break (i, j);
                }
            })
            .collect();
        pairs
            .par_iter()
            .map(|&(i, j)| vote(i, j))
            .reduce(|| [0; 4], add)
    }
}

/// Rotation of image 2, among multiples of 90°, that best places midpoints
/// between corresponding keypoints. Ties prefer the smaller angle.
pub fn fix_rotation(matches: &[Match]) -> f64 {
    if matches.len() < 2 {
        return 0.0;
    }
    let votes = rotation_votes(matches);
    let mut best = 0;
    for k in 1..4 {
        if votes[k] > votes[best] {
            best = k;
        }
    }
    ROTATION_CANDIDATES[best]
}

fn keypoint_box_center(matches: &[Match]) -> Point2 {
    let (mut lo, mut hi) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for m in matches {
        lo.x = lo.x.min(m.p2.x);
        lo.y = lo.y.min(m.p2.y);
        hi.x = hi.x.max(m.p2.x);
        hi.y = hi.y.max(m.p2.y);
    }
    Point2::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0)
}

/// Plane filter using midpoint homography pairs.
///
/// Image-2 keypoints are first rotated by the angle from [`fix_rotation`]
/// about `center` (the image-2 center; defaults to the center of the
/// image-2 keypoint bounding box). Returned pairs are composed with that
/// rotation, so they act on the original coordinates.
pub fn mop_miho_filter(
    matches: &[Match],
    cfg: &MopConfig,
    center: Option<Point2>,
) -> Result<FilterResult<MihoModel>, MopError> {
    cfg.validate()?;
    if matches.len() < 4 {
        return Ok(FilterResult::passthrough(matches.len()));
    }
    let alpha = fix_rotation(matches);
    if alpha == 0.0 {
        let models = find_planes::<MihoModel>(matches, cfg);
        return Ok(finalize(matches, models, cfg));
    }

    let rotation = Homography::rotation_about(alpha, center.unwrap_or_else(|| keypoint_box_center(matches)));
    let rotated: Vec<Match> = matches
        .iter()
        .map(|m| Match::from_points(m.p1, rotation.project(&m.p2).unwrap_or(m.p2)))
        .collect();
    let models = find_planes::<MihoModel>(&rotated, cfg);
    let mut result = finalize(&rotated, models, cfg);
    for plane in &mut result.planes {
        let model = &mut plane.model;
        model.pair.h2 = model
            .pair
            .h2
            .compose(&rotation)
            .expect("rotation preserves invertibility");
        let original = rotation.project_inverse(&model.anchor2.p1).unwrap_or(model.anchor2.p1);
        model.anchor2 = Match::from_points(original, model.anchor2.p2);
    }
    result.alpha_star = alpha;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_planar_scene, SceneSpec};
    use approx::assert_relative_eq;

    fn corners() -> [Match; 4] {
        [
            Match::new(0.0, 0.0, 0.0, 0.0),
            Match::new(100.0, 0.0, 100.0, 0.0),
            Match::new(100.0, 100.0, 100.0, 100.0),
            Match::new(0.0, 100.0, 0.0, 100.0),
        ]
    }

    #[test]
    fn split_examples() {
        let s = SplitMatch::new(&Match::new(0.0, 0.0, 2.0, 4.0));
        assert_eq!(s.midpoint, Point2::new(1.0, 2.0));
        assert_eq!(s.m1, Match::new(0.0, 0.0, 1.0, 2.0));
        assert_eq!(s.m2, Match::new(1.0, 2.0, 2.0, 4.0));
        assert_eq!(midpoint(&Match::new(5.0, 5.0, 5.0, 5.0)), Point2::new(5.0, 5.0));
        assert_eq!(midpoint(&Match::new(-3.0, 0.0, 3.0, 0.0)), Point2::new(0.0, 0.0));
    }

    #[test]
    fn identical_keypoints_give_identity_pair() {
        let pair = fit_dual_homography(&corners(), 15.0).unwrap();
        let id = Homography::identity();
        assert_relative_eq!(pair.h1.matrix(), id.matrix(), epsilon = 1e-12);
        assert_relative_eq!(pair.h2.matrix(), id.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn translation_splits_in_half() {
        let shifted = corners().map(|m| Match::from_points(m.p1, m.p2 + nalgebra::Vector2::new(8.0, 0.0)));
        let pair = fit_dual_homography(&shifted, 15.0).unwrap();
        assert_relative_eq!(pair.h1.matrix(), Homography::translation(4.0, 0.0).matrix(), epsilon = 1e-12);
        assert_relative_eq!(pair.h2.matrix(), Homography::translation(-4.0, 0.0).matrix(), epsilon = 1e-12);
    }

    #[test]
    fn composite_reproduces_ground_truth() {
        let spec = SceneSpec {
            planes: 1,
            matches_per_plane: 30,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed: 2,
            ..SceneSpec::default()
        };
        let scene = gen_planar_scene(&spec).unwrap();
        let sample = [0usize, 7, 14, 21].map(|i| scene.matches[i]);
        let pair = fit_dual_homography(&sample, 15.0).unwrap();
        let composite = pair.composite().unwrap();
        for m in &sample {
            assert!(reprojection_error(&composite, m) < 1e-6);
        }
    }

    #[test]
    fn joint_inliers_need_both_halves() {
        let model = MihoModel::from_pair(
            MihoPair {
                h1: Homography::identity(),
                h2: Homography::identity(),
            },
            &Match::new(0.0, 0.0, 0.0, 0.0),
            [0, 1, 2, 3],
        );
        let first = vec![Match::new(0.0, 0.0, 0.5, 0.0), Match::new(0.0, 0.0, 0.5, 0.0)];
        let second = vec![Match::new(0.5, 0.0, 1.0, 0.0), Match::new(0.5, 0.0, 20.5, 0.0)];
        assert_eq!(miho_inlier_set(&model, &first, &second, 15.0), vec![0]);
        assert!(miho_inlier_set(&model, &first, &second, 0.1).is_empty());
    }

    #[test]
    fn rotation_fixing_finds_half_turn() {
        let spec = SceneSpec {
            planes: 1,
            matches_per_plane: 60,
            noise_sigma: 0.5,
            outlier_fraction: 0.0,
            seed: 8,
            ..SceneSpec::default()
        };
        let scene = gen_planar_scene(&spec).unwrap();
        assert_eq!(fix_rotation(&scene.matches), 0.0);
        let center = Point2::new(spec.width as f64 / 2.0, spec.height as f64 / 2.0);
        for (k, alpha) in ROTATION_CANDIDATES.iter().enumerate() {
            // image 2 turned by -alpha needs a correction of +alpha
            let undo = Homography::rotation_about(-alpha, center);
            let turned: Vec<Match> = scene
                .matches
                .iter()
                .map(|m| Match::from_points(m.p1, undo.project(&m.p2).unwrap()))
                .collect();
            assert_eq!(fix_rotation(&turned), ROTATION_CANDIDATES[k]);
        }
        assert_eq!(fix_rotation(&scene.matches[..1]), 0.0);
    }

    #[test]
    fn miho_filter_on_shifted_plane() {
        let base: Vec<Match> = (0..15)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .map(|(i, j)| {
                let p = Point2::new(20.0 + 40.0 * i as f64, 20.0 + 45.0 * j as f64);
                Match::from_points(p, p + nalgebra::Vector2::new(30.0, -12.0))
            })
            .collect();
        let r = mop_miho_filter(&base, &MopConfig::miho(), None).unwrap();
        assert_eq!(r.planes.len(), 1);
        assert_eq!(r.kept.len(), base.len());
        let pair = &r.planes[0].model.pair;
        assert_relative_eq!(pair.h1.matrix(), Homography::translation(15.0, -6.0).matrix(), epsilon = 1e-9);
        assert_relative_eq!(pair.h2.matrix(), Homography::translation(-15.0, 6.0).matrix(), epsilon = 1e-9);
    }
}
