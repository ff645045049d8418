//! Keypoint refinement by normalized cross-correlation template matching
//! between homography-warped patches, with parabolic sub-pixel peaks.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Homography, Match, Point2};

/// Default patch and search radius in pixels.
pub const DEFAULT_RADIUS: usize = 10;
/// Rotation perturbations of the extended pair, in radians.
pub const PERTURB_ROTATIONS: [f64; 5] = [
    -std::f64::consts::FRAC_PI_6,
    -std::f64::consts::FRAC_PI_6 / 2.0,
    0.0,
    std::f64::consts::FRAC_PI_6 / 2.0,
    std::f64::consts::FRAC_PI_6,
];
/// Shear factors of the extended pair.
pub const PERTURB_SHEARS: [f64; 5] = [5.0 / 7.0, 5.0 / 6.0, 1.0, 6.0 / 5.0, 7.0 / 5.0];

/// A patch is unusable when more than this fraction of samples fell outside the image.
const MAX_INVALID_FRACTION: f64 = 0.1;
const MIN_VARIANCE: f64 = 1e-12;
const SNAP_EPS: f64 = 1e-9;
const CONCAVITY_EPS: f64 = -1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum NccError {
    #[error("patch falls outside the image")]
    OutOfBounds,
    #[error("patch has zero variance")]
    ZeroVariance,
    #[error("no warp pair produced a valid patch")]
    NoValidPair,
}

/// Row-major single-channel image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    /// `None` for empty dimensions, a length mismatch or non-finite samples.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Option<Self> {
        if width == 0 || height == 0 || data.len() != width * height || !data.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at `(x, y)` with border clamping. The flag tells
    /// whether the point lies inside the pixel grid. Coordinates within
    /// `1e-9` of an integer are snapped to it, so integer lookups are exact.
    pub fn bilinear(&self, x: f64, y: f64) -> (f64, bool) {
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < SNAP_EPS {
                r
            } else {
                v
            }
        };
        let (x, y) = (snap(x), snap(y));
        if !(x.is_finite() && y.is_finite()) {
            return (0.0, false);
        }
        let (wmax, hmax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        let inside = x >= 0.0 && y >= 0.0 && x <= wmax && y <= hmax;
        let (x, y) = (x.clamp(0.0, wmax), y.clamp(0.0, hmax));
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let at = |xx: usize, yy: usize| self.get(xx, yy) as f64;
        let v = if fx == 0.0 && fy == 0.0 {
            at(x0, y0)
        } else {
            let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
            let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
            top * (1.0 - fy) + bottom * fy
        };
        (v, inside)
    }
}

/// ITU-R BT.601 luma of an RGB triple in `[0, 1]`.
pub fn luma_bt601(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Square `(2r+1)²` patch sampled in a warped frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub radius: usize,
    /// Row-major samples, offsets `-r..=r` in `y` then `x`.
    pub values: Vec<f64>,
    pub invalid: usize,
}

impl Patch {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }
}

/// Samples of `image` over the grid `c + w`, `|w|∞ ≤ radius`, pulled back
/// through `H⁻¹`, together with their validity.
fn sample_window(image: &GrayImage, h: &Homography, c: &Point2, radius: usize) -> (Vec<f64>, Vec<bool>) {
    let ri = radius as isize;
    let n = 2 * radius + 1;
    let mut values = Vec::with_capacity(n * n);
    let mut valid = Vec::with_capacity(n * n);
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let q = Point2::new(c.x + dx as f64, c.y + dy as f64);
            match h.project_inverse(&q) {
                Some(p) => {
                    let (v, inside) = image.bilinear(p.x, p.y);
                    values.push(v);
                    valid.push(inside);
                }
                None => {
                    values.push(0.0);
                    valid.push(false);
                }
            }
        }
    }
    (values, valid)
}

fn too_many_invalid(invalid: usize, total: usize) -> bool {
    invalid as f64 > MAX_INVALID_FRACTION * total as f64
}

/// Patch of `image` warped by `h`, centered at `h·center`.
pub fn warp_patch(image: &GrayImage, h: &Homography, center: &Point2, r: usize) -> Result<Patch, NccError> {
    let c = h.project(center).ok_or(NccError::OutOfBounds)?;
    let (values, valid) = sample_window(image, h, &c, r);
    let invalid = valid.iter().filter(|&&v| !v).count();
    if too_many_invalid(invalid, values.len()) {
        return Err(NccError::OutOfBounds);
    }
    Ok(Patch {
        radius: r,
        values,
        invalid,
    })
}

/// Sum of products of mean/std normalized samples; `(2r+1)²` for identical
/// patches, `-∞` when either patch is flat or the radii differ.
pub fn ncc_similarity(a: &Patch, b: &Patch) -> f64 {
    if a.radius != b.radius || a.values.len() != b.values.len() {
        return f64::NEG_INFINITY;
    }
    let n = a.values.len() as f64;
    let ma = a.values.iter().sum::<f64>() / n;
    let mb = b.values.iter().sum::<f64>() / n;
    let va = a.values.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
    let vb = b.values.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
    if va <= MIN_VARIANCE || vb <= MIN_VARIANCE {
        return f64::NEG_INFINITY;
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - ma) * (y - mb)).sum();
    dot / (va.sqrt() * vb.sqrt())
}

/// Which image of the pair a perturbation is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WarpKind {
    Base,
    /// The extended pair itself (zero rotation, unit shear).
    Extended { side: Side },
    Perturbed { rho: f64, f: f64, side: Side },
}

impl WarpKind {
    fn rank(&self) -> u8 {
        match self {
            WarpKind::Base => 0,
            WarpKind::Extended { .. } => 1,
            WarpKind::Perturbed { .. } => 2,
        }
    }
}

/// Homographies taking each image into a shared alignment plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpPair {
    pub h1: Homography,
    pub h2: Homography,
    pub kind: WarpKind,
}

/// `[[f cos ρ, −f sin ρ, 0], [sin ρ, cos ρ, 0], [0, 0, 1]]`.
pub fn perturbation_matrix(rho: f64, f: f64) -> Matrix3<f64> {
    let (s, c) = rho.sin_cos();
    Matrix3::new(f * c, -f * s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// The base pair followed by the 25 perturbations of the extended pair on
/// image 1 and the 25 on image 2 (51 pairs in total).
pub fn build_warp_pairs(base: (Homography, Homography), extended: (Homography, Homography)) -> Vec<WarpPair> {
    let mut pairs = Vec::with_capacity(51);
    pairs.push(WarpPair {
        h1: base.0,
        h2: base.1,
        kind: WarpKind::Base,
    });
    for side in [Side::First, Side::Second] {
        for &rho in &PERTURB_ROTATIONS {
            for &f in &PERTURB_SHEARS {
                let kind = if rho == 0.0 && f == 1.0 {
                    WarpKind::Extended { side }
                } else {
                    WarpKind::Perturbed { rho, f, side }
                };
                let a = perturbation_matrix(rho, f);
                let perturb = |h: &Homography| Homography::new(a * h.matrix()).expect("perturbation keeps rank");
                let (h1, h2) = match side {
                    Side::First => (perturb(&extended.0), extended.1),
                    Side::Second => (extended.0, perturb(&extended.1)),
                };
                pairs.push(WarpPair { h1, h2, kind });
            }
        }
    }
    pairs
}

/// Extended pair for a single plane homography `x₂ ~ H x₁`: image 1 is the
/// alignment plane and image 2 is pulled back by `H⁻¹`.
pub fn extended_from_mop(h: &Homography) -> (Homography, Homography) {
    (Homography::identity(), h.inverse())
}

/// Extended pair for a midpoint homography pair, already mapping both
/// images into the middle plane.
pub fn extended_from_miho(pair: &crate::miho::MihoPair) -> (Homography, Homography) {
    (pair.h1, pair.h2)
}

/// Identity pairs for matches without upstream geometry.
pub fn identity_pairs() -> Vec<WarpPair> {
    let id = (Homography::identity(), Homography::identity());
    build_warp_pairs(id, id)
}

/// Parabolic vertex offsets around the peak of a 3×3 response
/// neighborhood indexed `[row][col]`. Non-concave directions give 0, and
/// each component is clamped to `[-1, 1]`.
pub fn subpixel_peak(s: [[f64; 3]; 3]) -> [f64; 2] {
    let vertex = |minus: f64, center: f64, plus: f64| {
        let denom = plus - 2.0 * center + minus;
        if !(minus.is_finite() && center.is_finite() && plus.is_finite()) || denom >= CONCAVITY_EPS {
            return 0.0;
        }
        ((minus - plus) / (2.0 * denom)).clamp(-1.0, 1.0)
    };
    [vertex(s[1][0], s[1][1], s[1][2]), vertex(s[0][1], s[1][1], s[2][1])]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedMatch {
    /// Final match with sub-pixel correction, original image coordinates.
    pub refined: Match,
    /// Match after the integer offset only.
    pub integer: Match,
    pub t1: [i32; 2],
    pub t2: [i32; 2],
    pub pair_index: usize,
    pub best_pair: WarpPair,
    pub score: f64,
    /// Parabolic peak offset; only added when the integer offset is non-zero.
    pub subpixel: [f64; 2],
}

/// Integral image over a square window, for O(1) box sums.
struct Integral {
    side: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
    bad: Vec<u32>,
}

impl Integral {
    fn new(values: &[f64], valid: &[bool], side: usize) -> Self {
        let s1 = side + 1;
        let mut sum = vec![0.0; s1 * s1];
        let mut sq = vec![0.0; s1 * s1];
        let mut bad = vec![0u32; s1 * s1];
        for y in 0..side {
            for x in 0..side {
                let v = values[y * side + x];
                let b = u32::from(!valid[y * side + x]);
                let i = (y + 1) * s1 + x + 1;
                sum[i] = v + sum[i - 1] + sum[i - s1] - sum[i - s1 - 1];
                sq[i] = v * v + sq[i - 1] + sq[i - s1] - sq[i - s1 - 1];
                bad[i] = b + bad[i - 1] + bad[i - s1] - bad[i - s1 - 1];
            }
        }
        Self { side, sum, sq, bad }
    }

    /// Box `[x0, x0+n) × [y0, y0+n)`.
    fn boxed(&self, x0: usize, y0: usize, n: usize) -> (f64, f64, u32) {
        let s1 = self.side + 1;
        let (a, b, c, d) = (y0 * s1 + x0, y0 * s1 + x0 + n, (y0 + n) * s1 + x0, (y0 + n) * s1 + x0 + n);
        (
            self.sum[d] - self.sum[b] - self.sum[c] + self.sum[a],
            self.sq[d] - self.sq[b] - self.sq[c] + self.sq[a],
            self.bad[d] + self.bad[a] - self.bad[b] - self.bad[c],
        )
    }
}

/// NCC of a fixed template against the other side shifted by every offset
/// in `[-(r+1), r+1]²`. Entries are `-∞` where the shifted patch is invalid.
struct ResponseMap {
    reach: isize,
    values: Vec<f64>,
}

impl ResponseMap {
    fn at(&self, tx: isize, ty: isize) -> f64 {
        let n = (2 * self.reach + 1) as usize;
        self.values[(ty + self.reach) as usize * n + (tx + self.reach) as usize]
    }
}

fn response_map(template: &Patch, window: &[f64], valid: &[bool], r: usize) -> Option<ResponseMap> {
    let n = template.values.len() as f64;
    let mean = template.values.iter().sum::<f64>() / n;
    let centered: Vec<f64> = template.values.iter().map(|v| v - mean).collect();
    let var_t = centered.iter().map(|v| v * v).sum::<f64>() / n;
    if var_t <= MIN_VARIANCE {
        return None;
    }
    let sd_t = var_t.sqrt();
    let p = 2 * r + 1;
    let big = 4 * r + 3;
    let integral = Integral::new(window, valid, big);
    let reach = r as isize + 1;
    let mut values = Vec::with_capacity((2 * reach as usize + 1).pow(2));
    for ty in -reach..=reach {
        for tx in -reach..=reach {
            let x0 = (tx + reach) as usize;
            let y0 = (ty + reach) as usize;
            let (s, sq, bad) = integral.boxed(x0, y0, p);
            if too_many_invalid(bad as usize, p * p) {
                values.push(f64::NEG_INFINITY);
                continue;
            }
            let mu = s / n;
            let var = (sq / n - mu * mu).max(0.0);
            if var <= MIN_VARIANCE {
                values.push(f64::NEG_INFINITY);
                continue;
            }
            let mut dot = 0.0;
            for j in 0..p {
                let row = &window[(y0 + j) * big + x0..(y0 + j) * big + x0 + p];
                let trow = &centered[j * p..(j + 1) * p];
                dot += trow.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
            values.push(dot / (sd_t * var.sqrt()));
        }
    }
    Some(ResponseMap { reach, values })
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    rank: u8,
    norm2: i64,
    pair_index: usize,
    /// Template side: 0 when image 1 is the template.
    direction: u8,
    t: [i32; 2],
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        if self.score != other.score {
            return self.score > other.score;
        }
        (self.rank, self.norm2, self.pair_index, self.direction, self.t[1], self.t[0])
            < (other.rank, other.norm2, other.pair_index, other.direction, other.t[1], other.t[0])
    }
}

struct Winner {
    cand: Candidate,
    neighborhood: [[f64; 3]; 3],
}

/// Refines `m` by maximizing NCC over integer offsets `|t|∞ ≤ r` of either
/// side in the plane of every warp pair, then adds the parabolic sub-pixel
/// offset to the shifted side. With a zero offset the match is unchanged.
pub fn refine_match(
    i1: &GrayImage,
    i2: &GrayImage,
    m: &Match,
    pairs: &[WarpPair],
    r: usize,
) -> Result<RefinedMatch, NccError> {
    let mut best: Option<Winner> = None;
    let search = 2 * r + 1;
    for (pi, pair) in pairs.iter().enumerate() {
        let (Some(c1), Some(c2)) = (pair.h1.project(&m.p1), pair.h2.project(&m.p2)) else {
            continue;
        };
        let sides = [(i1, &pair.h1, c1), (i2, &pair.h2, c2)];
        for direction in 0..2u8 {
            let (ti, th, tc) = sides[direction as usize];
            let (si, sh, sc) = sides[1 - direction as usize];
            let (tv, tvalid) = sample_window(ti, th, &tc, r);
            let invalid = tvalid.iter().filter(|&&v| !v).count();
            if too_many_invalid(invalid, tv.len()) {
                continue;
            }
            let template = Patch {
                radius: r,
                values: tv,
                invalid,
            };
            let (wv, wvalid) = sample_window(si, sh, &sc, search);
            let Some(map) = response_map(&template, &wv, &wvalid, r) else {
                continue;
            };
            let ri = r as isize;
            for ty in -ri..=ri {
                for tx in -ri..=ri {
                    let score = map.at(tx, ty);
                    if !score.is_finite() {
                        continue;
                    }
                    let cand = Candidate {
                        score,
                        rank: pair.kind.rank(),
                        norm2: (tx * tx + ty * ty) as i64,
                        pair_index: pi,
                        direction,
                        t: [tx as i32, ty as i32],
                    };
                    if best.as_ref().is_none_or(|b| cand.beats(&b.cand)) {
                        let mut neighborhood = [[0.0; 3]; 3];
                        for (row, dy) in (-1..=1).enumerate() {
                            for (col, dx) in (-1..=1).enumerate() {
                                neighborhood[row][col] = map.at(tx + dx, ty + dy);
                            }
                        }
                        best = Some(Winner { cand, neighborhood });
                    }
                }
            }
        }
    }
    let winner = best.ok_or(NccError::NoValidPair)?;
    let cand = winner.cand;
    let pair = pairs[cand.pair_index];
    let subpixel = subpixel_peak(winner.neighborhood);
    // The sub-pixel step only moves a side that was shifted.
    let applied = if cand.t == [0, 0] { [0.0; 2] } else { subpixel };
    let zero = [0i32; 2];
    let (t1, t2) = if cand.direction == 0 { (zero, cand.t) } else { (cand.t, zero) };

    // The template side stays put; the shifted side moves by t (+ p).
    let shift = |p: &Point2, h: &Homography, t: [i32; 2], extra: [f64; 2]| -> Point2 {
        if t == [0, 0] && extra == [0.0, 0.0] {
            return *p;
        }
        let c = h.project(p).expect("projected during search");
        let q = Point2::new(c.x + t[0] as f64 + extra[0], c.y + t[1] as f64 + extra[1]);
        h.project_inverse(&q).unwrap_or(*p)
    };
    let none = [0.0; 2];
    let (integer, refined) = if cand.direction == 0 {
        (
            Match::from_points(m.p1, shift(&m.p2, &pair.h2, t2, none)),
            Match::from_points(m.p1, shift(&m.p2, &pair.h2, t2, applied)),
        )
    } else {
        (
            Match::from_points(shift(&m.p1, &pair.h1, t1, none), m.p2),
            Match::from_points(shift(&m.p1, &pair.h1, t1, applied), m.p2),
        )
    };
    Ok(RefinedMatch {
        refined,
        integer,
        t1,
        t2,
        pair_index: cand.pair_index,
        best_pair: pair,
        score: cand.score,
        subpixel,
    })
}

/// Refines every match in parallel; `pairs_for(i)` supplies the warp pairs
/// of match `i`. Failed matches keep their error.
pub fn refine_matches<F>(
    i1: &GrayImage,
    i2: &GrayImage,
    matches: &[Match],
    pairs_for: F,
    r: usize,
) -> Vec<Result<RefinedMatch, NccError>>
where
    F: Fn(usize) -> Vec<WarpPair> + Sync,
{
    matches
        .par_iter()
        .enumerate()
        .map(|(i, m)| refine_match(i1, i2, m, &pairs_for(i), r))
        .collect()
}
