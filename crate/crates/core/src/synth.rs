//! Seeded ground-truth scene generators used as test oracles and fixtures.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{estimate_intrinsics, GroundTruth, PoseGt};
use crate::geometry::{fit_homography_dlt, reprojection_error, Homography, Match, Point2};
use crate::ncc::GrayImage;

/// Label of a match that belongs to no ground-truth plane.
pub const OUTLIER: usize = usize::MAX;

const MAX_DRAWS: usize = 1000;
const MAX_CONDITION: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("could not draw a well-conditioned plane in {0} attempts")]
    RejectionLimit(usize),
    #[error("the homography leaves no overlap between the two frames")]
    EmptyOverlap,
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    #[default]
    WhiteNoise,
    Checkerboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseParams {
    /// Camera-2 center distance from camera 1, in scene units.
    pub baseline: f64,
    pub max_rotation_deg: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Meters per scene unit recorded in the ground truth.
    pub scale: Option<f64>,
}

impl Default for PoseParams {
    fn default() -> Self {
        Self {
            baseline: 0.5,
            max_rotation_deg: 10.0,
            depth_min: 4.0,
            depth_max: 8.0,
            scale: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub planes: usize,
    pub matches_per_plane: usize,
    pub noise_sigma: f64,
    /// Fraction of outliers among all generated matches.
    pub outlier_fraction: f64,
    /// Explicit outlier count, overriding `outlier_fraction`.
    pub outlier_count: Option<usize>,
    pub width: u32,
    pub height: u32,
    /// Maximum image-2 corner displacement of a plane, as a fraction of
    /// the smaller image side.
    pub corner_jitter: f64,
    pub pose: PoseParams,
    pub texture: Texture,
    /// Patch radius the rendered ground-truth matches must accommodate.
    pub patch_radius: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            planes: 2,
            matches_per_plane: 150,
            noise_sigma: 1.0,
            outlier_fraction: 0.3,
            outlier_count: None,
            width: 640,
            height: 480,
            corner_jitter: 0.1,
            pose: PoseParams::default(),
            texture: Texture::WhiteNoise,
            patch_radius: 10,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must lie in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and non-negative");
        }
        if self.width < 2 || self.height < 2 {
            return bad("image must be at least 2x2");
        }
        if !(self.corner_jitter >= 0.0 && self.corner_jitter < 0.5) {
            return bad("corner_jitter must lie in [0, 0.5)");
        }
        let p = &self.pose;
        if !(p.depth_min > 0.0 && p.depth_max > p.depth_min && p.baseline > 0.0) {
            return bad("pose needs 0 < depth_min < depth_max and a positive baseline");
        }
        Ok(())
    }

    fn outliers_for(&self, inliers: usize) -> usize {
        self.outlier_count.unwrap_or_else(|| {
            (self.outlier_fraction * inliers as f64 / (1.0 - self.outlier_fraction)).round() as usize
        })
    }
}

/// Matches with ground-truth labels: a plane index or [`OUTLIER`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub matches: Vec<Match>,
    pub labels: Vec<usize>,
    pub gt_planes: Vec<Homography>,
    pub gt_pose: Option<GroundTruth>,
    pub width: u32,
    pub height: u32,
}

/// Condition number of `h` in coordinates scaled by the image size.
pub fn plane_condition(h: &Homography, width: u32, height: u32) -> f64 {
    let s = 1.0 / width.max(height) as f64;
    let scale = Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0);
    let unscale = Matrix3::new(1.0 / s, 0.0, 0.0, 0.0, 1.0 / s, 0.0, 0.0, 0.0, 1.0);
    let sv = (scale * h.matrix() * unscale).singular_values();
    sv.max() / sv.min()
}

fn uniform_point(rng: &mut ChaCha8Rng, w: f64, h: f64) -> Point2 {
    Point2::new(rng.random_range(0.0..w - 1.0), rng.random_range(0.0..h - 1.0))
}

fn in_frame(p: &Point2, w: f64, h: f64) -> bool {
    p.x >= 0.0 && p.x <= w - 1.0 && p.y >= 0.0 && p.y <= h - 1.0
}

fn draw_plane(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Result<Homography, SynthError> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let margin = 0.05 * w.min(h);
    let jitter = spec.corner_jitter * w.min(h);
    let src = [
        Point2::new(margin, margin),
        Point2::new(w - 1.0 - margin, margin),
        Point2::new(w - 1.0 - margin, h - 1.0 - margin),
        Point2::new(margin, h - 1.0 - margin),
    ];
    for _ in 0..MAX_DRAWS {
        let corners: Vec<Match> = src
            .iter()
            .map(|p| {
                let q = Point2::new(
                    (p.x + rng.random_range(-jitter..=jitter)).clamp(0.0, w - 1.0),
                    (p.y + rng.random_range(-jitter..=jitter)).clamp(0.0, h - 1.0),
                );
                Match::from_points(*p, q)
            })
            .collect();
        let Ok(fit) = fit_homography_dlt(&corners) else { continue };
        if plane_condition(&fit.homography, spec.width, spec.height) < MAX_CONDITION {
            return Ok(fit.homography);
        }
    }
    Err(SynthError::RejectionLimit(MAX_DRAWS))
}

/// Piecewise-planar match set. Each plane maps the (inset) frame onto a
/// randomly perturbed quadrilateral; image-1 keypoints are uniform in frame,
/// image-2 keypoints are their images plus isotropic Gaussian noise, with
/// noise redrawn until the reprojection error is at most `3σ`. Outliers are
/// uniform in both frames. The match order is shuffled.
pub fn gen_planar_scene(spec: &SceneSpec) -> Result<LabeledScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");

    let mut gt_planes = Vec::with_capacity(spec.planes);
    let mut items: Vec<(Match, usize)> = Vec::new();
    for k in 0..spec.planes {
        let plane = draw_plane(&mut rng, spec)?;
        let mut anchor_sign = None;
        let mut generated = 0;
        let mut draws = 0;
        while generated < spec.matches_per_plane {
            draws += 1;
            if draws > MAX_DRAWS * spec.matches_per_plane.max(1) {
                return Err(SynthError::RejectionLimit(draws));
            }
            let p1 = uniform_point(&mut rng, w, h);
            let Some(exact) = plane.project(&p1) else { continue };
            if !in_frame(&exact, w, h) {
                continue;
            }
            let sign = plane.last_coordinate(&p1) > 0.0;
            if *anchor_sign.get_or_insert(sign) != sign {
                continue;
            }
            let mut m = Match::from_points(p1, exact);
            if spec.noise_sigma > 0.0 {
                loop {
                    let p2 = exact + nalgebra::Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                    let candidate = Match::from_points(p1, p2);
                    if reprojection_error(&plane, &candidate) <= 3.0 * spec.noise_sigma {
                        m = candidate;
                        break;
                    }
                }
            }
            items.push((m, k));
            generated += 1;
        }
        gt_planes.push(plane);
    }
    let outliers = spec.outliers_for(items.len());
    for _ in 0..outliers {
        let m = Match::from_points(uniform_point(&mut rng, w, h), uniform_point(&mut rng, w, h));
        items.push((m, OUTLIER));
    }
    items.shuffle(&mut rng);
    let (matches, labels) = items.into_iter().unzip();
    Ok(LabeledScene {
        matches,
        labels,
        gt_planes,
        gt_pose: None,
        width: spec.width,
        height: spec.height,
    })
}

/// Checks the generation-time invariants of a planar scene: conditioning,
/// quasi-affinity over each plane's support and labeled inliers within
/// `3σ` of their plane.
pub fn planar_scene_is_valid(scene: &LabeledScene, noise_sigma: f64) -> bool {
    scene.gt_planes.iter().enumerate().all(|(k, plane)| {
        let support: Vec<&Match> = scene
            .matches
            .iter()
            .zip(&scene.labels)
            .filter(|(_, &l)| l == k)
            .map(|(m, _)| m)
            .collect();
        let conditioned = plane_condition(plane, scene.width, scene.height) < MAX_CONDITION;
        let quasi_affine = support
            .first()
            .is_none_or(|a| support.iter().all(|m| crate::geometry::is_quasi_affine(plane, a, m)));
        let close = support
            .iter()
            .all(|m| reprojection_error(plane, m) <= 3.0 * noise_sigma + 1e-9);
        conditioned && quasi_affine && close
    })
}

/// Two-camera scene of random non-coplanar points. Both cameras use the
/// default intrinsics for the frame size; labels are `0` for true
/// projections and [`OUTLIER`] otherwise.
pub fn gen_pose_scene(spec: &SceneSpec) -> Result<LabeledScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let k = estimate_intrinsics(spec.width, spec.height);
    let k_inv = k.try_inverse().expect("intrinsics are invertible");
    let p = &spec.pose;

    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let angle = rng.random_range(0.0..=p.max_rotation_deg).to_radians();
    let r = Rotation3::from_axis_angle(&axis, angle).into_inner();
    let dir = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
    );
    let t = dir.normalize() * p.baseline;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");

    let n = spec.matches_per_plane.max(spec.planes * spec.matches_per_plane);
    let mut points: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let mut items: Vec<(Match, usize)> = Vec::with_capacity(n);
    let mut draws = 0;
    while items.len() < n {
        draws += 1;
        if draws > MAX_DRAWS * n.max(1) {
            return Err(SynthError::RejectionLimit(draws));
        }
        let p1 = uniform_point(&mut rng, w, h);
        let depth = rng.random_range(p.depth_min..p.depth_max);
        let x = k_inv * Vector3::new(p1.x, p1.y, 1.0) * depth;
        let x2 = r * x + t;
        if x2.z < 0.1 * p.depth_min {
            continue;
        }
        let q = k * x2;
        let mut p2 = Point2::new(q.x / q.z, q.y / q.z);
        if !in_frame(&p2, w, h) {
            continue;
        }
        if spec.noise_sigma > 0.0 {
            p2 += nalgebra::Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        }
        points.push(x);
        items.push((Match::from_points(p1, p2), 0));
    }
    if n >= 4 && coplanar(&points) {
        return Err(SynthError::RejectionLimit(draws));
    }
    let outliers = spec.outliers_for(items.len());
    for _ in 0..outliers {
        let m = Match::from_points(uniform_point(&mut rng, w, h), uniform_point(&mut rng, w, h));
        items.push((m, OUTLIER));
    }
    items.shuffle(&mut rng);
    let (matches, labels) = items.into_iter().unzip();
    Ok(LabeledScene {
        matches,
        labels,
        gt_planes: Vec::new(),
        gt_pose: Some(GroundTruth::Pose(PoseGt {
            k1: k,
            k2: k,
            r,
            t,
            scale: p.scale,
        })),
        width: spec.width,
        height: spec.height,
    })
}

fn coplanar(points: &[Vector3<f64>]) -> bool {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cov = points
        .iter()
        .fold(Matrix3::zeros(), |a, p| a + (p - mean) * (p - mean).transpose())
        / n;
    let eig = cov.symmetric_eigenvalues();
    eig.min() <= 1e-6 * eig.max()
}

/// Smoothed white noise (3-tap box filter in each direction) or an 8 px
/// checkerboard, deterministic in `seed`.
pub fn texture_image(width: u32, height: u32, texture: Texture, seed: u64) -> GrayImage {
    let (w, h) = (width as usize, height as usize);
    match texture {
        Texture::Checkerboard => GrayImage::from_fn(w, h, |x, y| {
            if ((x / 8) + (y / 8)) % 2 == 0 {
                0.2
            } else {
                0.8
            }
        }),
        Texture::WhiteNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f32> = (0..w * h).map(|_| rng.random::<f32>()).collect();
            let at = |v: &[f32], x: isize, y: isize| {
                let x = x.clamp(0, w as isize - 1) as usize;
                let y = y.clamp(0, h as isize - 1) as usize;
                v[y * w + x]
            };
            let mut horiz = vec![0f32; w * h];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    horiz[y as usize * w + x as usize] =
                        (at(&raw, x - 1, y) + at(&raw, x, y) + at(&raw, x + 1, y)) / 3.0;
                }
            }
            GrayImage::from_fn(w, h, |x, y| {
                let (x, y) = (x as isize, y as isize);
                (at(&horiz, x, y - 1) + at(&horiz, x, y) + at(&horiz, x, y + 1)) / 3.0
            })
        }
    }
}

/// An image pair rendered through a known homography.
#[derive(Debug, Clone)]
pub struct RenderedPair {
    pub image1: GrayImage,
    pub image2: GrayImage,
    /// Exact correspondences `(x, H·x)` away from the borders.
    pub matches: Vec<Match>,
}

/// Renders image 2 as `I₂(y) = I₁(H⁻¹y)` by bilinear sampling and draws
/// `spec.matches_per_plane` exact matches whose `3r`-neighborhoods lie
/// inside both frames.
pub fn render_textured_pair(h: &Homography, spec: &SceneSpec) -> Result<RenderedPair, SynthError> {
    spec.validate()?;
    let image1 = texture_image(spec.width, spec.height, spec.texture, spec.seed);
    let (w, hgt) = (spec.width as usize, spec.height as usize);
    let image2 = GrayImage::from_fn(w, hgt, |x, y| {
        match h.project_inverse(&Point2::new(x as f64, y as f64)) {
            Some(p) => image1.bilinear(p.x, p.y).0 as f32,
            None => 0.0,
        }
    });

    let margin = 3.0 * spec.patch_radius as f64;
    let (wf, hf) = (spec.width as f64, spec.height as f64);
    let inside = |p: &Point2| p.x >= margin && p.x <= wf - 1.0 - margin && p.y >= margin && p.y <= hf - 1.0 - margin;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut matches = Vec::new();
    let wanted = spec.matches_per_plane;
    let mut draws = 0;
    while matches.len() < wanted && draws < MAX_DRAWS * wanted.max(1) {
        draws += 1;
        let p1 = uniform_point(&mut rng, wf, hf);
        if !inside(&p1) {
            continue;
        }
        if let Some(p2) = h.project(&p1) {
            if inside(&p2) {
                matches.push(Match::from_points(p1, p2));
            }
        }
    }
    if matches.is_empty() && wanted > 0 {
        return Err(SynthError::EmptyOverlap);
    }
    Ok(RenderedPair {
        image1,
        image2,
        matches,
    })
}

/// Homography of a fronto-parallel plane seen after rotating the camera
/// by `tilt_deg` about the vertical axis through the image center.
pub fn tilt_homography(width: u32, height: u32, tilt_deg: f64) -> Homography {
    let k = estimate_intrinsics(width, height);
    let r = Rotation3::from_axis_angle(&Vector3::y_axis(), tilt_deg.to_radians()).into_inner();
    let k_inv = k.try_inverse().expect("intrinsics are invertible");
    Homography::new(k * r * k_inv).expect("rotation homography is invertible")
}
