//! Multiple overlapping planes: greedy sequential RANSAC that covers the
//! match flow with planar homographies and drops matches no plane supports.

use rand::seq::index;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    fit_homography_dlt, sample_degeneracy_check, sample_is_quasi_affine, sample_is_spread,
    HomographyModel, Match,
};

/// Hypotheses fitted and scored per parallel batch. Fixed so that the random
/// stream consumed does not depend on the thread count.
const HYPOTHESIS_BATCH: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MopError {
    #[error("no valid minimal sample found within {attempts} attempts")]
    NoModel { attempts: usize },
    #[error("match is not an inlier of any plane")]
    NoCompatiblePlane,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MopConfig {
    /// Relaxed inlier threshold in pixels.
    pub t_l: f64,
    /// Strict inlier threshold in pixels, normally `t_l / 2`.
    pub t_h: f64,
    /// Minimum consensus for a plane to be accepted.
    pub n_min: usize,
    /// Consecutive failures that end the search.
    pub c_f_max: usize,
    pub c_min: usize,
    pub c_max: usize,
    /// Number of sub-optimal hypotheses carried between RANSAC runs.
    pub buffer_size: usize,
    /// Confidence of the adaptive RANSAC stopping rule.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for MopConfig {
    fn default() -> Self {
        Self {
            t_l: 15.0,
            t_h: 7.5,
            n_min: 12,
            c_f_max: 3,
            c_min: 50,
            c_max: 2000,
            buffer_size: 5,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl MopConfig {
    /// Defaults for the midpoint-homography variant (`n_min = 8`).
    pub fn miho() -> Self {
        Self {
            n_min: 8,
            ..Self::default()
        }
    }

    /// Sets the relaxed threshold and the strict one to half of it.
    pub fn with_t_l(mut self, t_l: f64) -> Self {
        self.t_l = t_l;
        self.t_h = t_l / 2.0;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), MopError> {
        let fail = |msg: &str| Err(MopError::InvalidConfig(msg.to_string()));
        if !(self.t_h > 0.0 && self.t_h < self.t_l && self.t_l.is_finite()) {
            return fail("thresholds must satisfy 0 < t_h < t_l");
        }
        if self.n_min < 5 {
            return fail("n_min must be at least 5");
        }
        if self.c_min > self.c_max || self.c_max == 0 {
            return fail("iteration bounds must satisfy 0 < c_min <= c_max");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return fail("confidence must lie in (0, 1)");
        }
        Ok(())
    }
}

/// A plane hypothesis that the sequential search can fit from a minimal
/// sample and score on matches.
pub trait PlaneModel: Clone + Send + Sync + std::fmt::Debug {
    /// Fits the model on `matches[sample]`, returning `None` for samples that
    /// fail the spread, conditioning or sample quasi-affinity checks.
    fn fit_sample(matches: &[Match], sample: [usize; 4], min_distance: f64) -> Option<Self>;

    /// Transfer error of `m`, `+∞` when `m` violates quasi-affinity.
    fn error(&self, m: &Match) -> f64;

    fn sample(&self) -> [usize; 4];

    fn is_inlier(&self, m: &Match, t: f64) -> bool {
        self.error(m) <= t
    }
}

impl PlaneModel for HomographyModel {
    fn fit_sample(matches: &[Match], sample: [usize; 4], min_distance: f64) -> Option<Self> {
        let s = sample.map(|i| matches[i]);
        if !sample_is_spread(&s, min_distance) {
            return None;
        }
        let fit = fit_homography_dlt(&s).ok()?;
        if !sample_degeneracy_check(&s, fit.smallest_singular, min_distance)
            || !sample_is_quasi_affine(&fit.homography, &s)
        {
            return None;
        }
        Some(HomographyModel::new(fit.homography, s[0], sample))
    }

    fn error(&self, m: &Match) -> f64 {
        HomographyModel::error(self, m)
    }

    fn sample(&self) -> [usize; 4] {
        self.sample
    }
}

/// Sub-optimal hypotheses kept across RANSAC runs, ordered by their
/// exclusive inlier counts `v_i` (non-increasing).
#[derive(Debug, Clone)]
pub struct ModelBuffer<M> {
    capacity: usize,
    entries: Vec<(M, usize)>,
}

impl<M: PlaneModel> ModelBuffer<M> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn models(&self) -> impl Iterator<Item = &M> {
        self.entries.iter().map(|(m, _)| m)
    }

    /// Exclusive inlier counts from the last run, aligned with [`Self::models`].
    pub fn scores(&self) -> Vec<usize> {
        self.entries.iter().map(|(_, v)| *v).collect()
    }

    /// Adds a model ahead of the next run, e.g. to bootstrap from a known plane.
    pub fn preload(&mut self, model: M) {
        if self.entries.len() < self.capacity {
            self.entries.push((model, 0));
        }
    }
}

struct Scored<M> {
    model: M,
    mask: Vec<bool>,
    count: usize,
}

fn score<M: PlaneModel>(model: M, matches: &[Match], active: &[usize], t: f64) -> Scored<M> {
    let mask: Vec<bool> = active.iter().map(|&i| model.is_inlier(&matches[i], t)).collect();
    let count = mask.iter().filter(|&&b| b).count();
    Scored { model, mask, count }
}

fn same_sample(a: [usize; 4], b: [usize; 4]) -> bool {
    let (mut a, mut b) = (a, b);
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

/// Best hypothesis plus the exclusive-score buffer of one RANSAC run.
struct RunState<M> {
    capacity: usize,
    best: Option<Scored<M>>,
    pool: Vec<Scored<M>>,
    exclusive: Vec<usize>,
}

impl<M: PlaneModel> RunState<M> {
    fn offer(&mut self, cand: Scored<M>) -> bool {
        match &self.best {
            None => {
                self.best = Some(cand);
                self.reorder();
                true
            }
            Some(best) if cand.count > best.count => {
                let old = self.best.replace(cand).expect("best present");
                self.insert(old);
                self.reorder();
                true
            }
            Some(_) => {
                if self.insert(cand) {
                    self.reorder();
                }
                false
            }
        }
    }

    fn insert(&mut self, cand: Scored<M>) -> bool {
        if self.capacity == 0 {
            return false;
        }
        let s = cand.model.sample();
        if self.best.as_ref().is_some_and(|b| same_sample(b.model.sample(), s))
            || self.pool.iter().any(|p| same_sample(p.model.sample(), s))
        {
            return false;
        }
        let min_score = self.exclusive.iter().copied().min().unwrap_or(0);
        if self.pool.len() < self.capacity || cand.count > min_score {
            self.pool.push(cand);
            true
        } else {
            false
        }
    }

    /// Greedy ordering by inliers not covered by the best model or earlier
    /// entries, which makes the exclusive counts non-increasing.
    fn reorder(&mut self) {
        let Some(best) = &self.best else { return };
        let mut covered = best.mask.clone();
        let mut remaining: Vec<Scored<M>> = std::mem::take(&mut self.pool);
        let mut ordered = Vec::with_capacity(remaining.len());
        let mut scores = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let (pick, v) = remaining
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    let v = e.mask.iter().zip(&covered).filter(|(&a, &c)| a && !c).count();
                    (k, v)
                })
                .fold((0, None::<usize>), |acc, (k, v)| match acc.1 {
                    Some(bv) if bv >= v => acc,
                    _ => (k, Some(v)),
                });
            let entry = remaining.remove(pick);
            for (c, &a) in covered.iter_mut().zip(&entry.mask) {
                *c |= a;
            }
            ordered.push(entry);
            scores.push(v.unwrap_or(0));
        }
        ordered.truncate(self.capacity);
        scores.truncate(self.capacity);
        self.pool = ordered;
        self.exclusive = scores;
    }
}

fn adaptive_iterations(inliers: usize, total: usize, cfg: &MopConfig) -> usize {
    let w = inliers as f64 / total.max(1) as f64;
    let p_good = w.powi(4);
    let needed = if p_good >= 1.0 {
        1.0
    } else if p_good <= 0.0 {
        f64::INFINITY
    } else {
        ((1.0 - cfg.confidence).ln() / (1.0 - p_good).ln()).ceil()
    };
    let needed = if needed.is_finite() { needed as usize } else { cfg.c_max };
    needed.clamp(cfg.c_min, cfg.c_max)
}

/// One RANSAC run on `matches[active]`, scored at `t_l`.
///
/// Buffer models are evaluated first, then random minimal samples until the
/// adaptive iteration count (floored at `c_min`, capped at `c_max`) is
/// reached. Rejected samples do not count as iterations but are bounded by
/// `10 * c_max` attempts. On return the buffer holds the best sub-optimal
/// hypotheses of this run.
pub fn ransac_plane<M: PlaneModel>(
    matches: &[Match],
    active: &[usize],
    buffer: &mut ModelBuffer<M>,
    cfg: &MopConfig,
    rng: &mut ChaCha8Rng,
) -> Result<M, MopError> {
    if active.len() < 4 {
        return Err(MopError::NoModel { attempts: 0 });
    }
    let mut state = RunState {
        capacity: buffer.capacity,
        best: None,
        pool: Vec::new(),
        exclusive: Vec::new(),
    };
    let mut counted = 0usize;
    let mut needed = cfg.c_max;

    let seeds: Vec<M> = buffer.entries.drain(..).map(|(m, _)| m).collect();
    let seeded: Vec<Scored<M>> = seeds
        .into_par_iter()
        .map(|m| score(m, matches, active, cfg.t_l))
        .collect();
    for s in seeded {
        counted += 1;
        if state.offer(s) {
            needed = adaptive_iterations(state.best.as_ref().map_or(0, |b| b.count), active.len(), cfg);
        }
    }

    let cap = 10 * cfg.c_max;
    let mut attempts = 0usize;
    while counted < needed && attempts < cap {
        let samples: Vec<[usize; 4]> = (0..HYPOTHESIS_BATCH)
            .map(|_| {
                let idx = index::sample(rng, active.len(), 4);
                [active[idx.index(0)], active[idx.index(1)], active[idx.index(2)], active[idx.index(3)]]
            })
            .collect();
        let hypotheses: Vec<Option<Scored<M>>> = samples
            .par_iter()
            .map(|&s| M::fit_sample(matches, s, cfg.t_l).map(|m| score(m, matches, active, cfg.t_l)))
            .collect();
        for h in hypotheses {
            if counted >= needed || attempts >= cap {
                break;
            }
            attempts += 1;
            if let Some(h) = h {
                counted += 1;
                if state.offer(h) {
                    needed = adaptive_iterations(state.best.as_ref().map_or(0, |b| b.count), active.len(), cfg);
                }
            }
        }
    }

    buffer.entries = state
        .pool
        .into_iter()
        .zip(state.exclusive)
        .map(|(s, v)| (s.model, v))
        .collect();
    state
        .best
        .map(|b| b.model)
        .ok_or(MopError::NoModel { attempts })
}

/// A plane returned by the filter with its inliers on the full input set.
#[derive(Debug, Clone)]
pub struct Plane<M> {
    pub model: M,
    /// Indices within the relaxed threshold `t_l`.
    pub inliers: Vec<usize>,
    /// Indices within the strict threshold `t_h`; a subset of `inliers`.
    pub strong_inliers: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FilterResult<M> {
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
    /// Plane index for every input match; `None` for discarded matches and
    /// for passthrough results.
    pub assignment: Vec<Option<usize>>,
    pub planes: Vec<Plane<M>>,
    /// Rotation applied to image 2 before fitting, in radians.
    pub alpha_star: f64,
    /// Set when the input was too small to filter and was returned as is.
    pub passthrough: bool,
}

impl<M> FilterResult<M> {
    pub(crate) fn passthrough(n: usize) -> Self {
        Self {
            kept: (0..n).collect(),
            discarded: Vec::new(),
            assignment: vec![None; n],
            planes: Vec::new(),
            alpha_star: 0.0,
            passthrough: true,
        }
    }
}

/// Runs the sequential plane search and returns the accepted models.
pub(crate) fn find_planes<M: PlaneModel>(matches: &[Match], cfg: &MopConfig) -> Vec<M> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut buffer = ModelBuffer::<M>::new(cfg.buffer_size);
    let mut active: Vec<usize> = (0..matches.len()).collect();
    let mut planes = Vec::new();
    let mut failures = 0usize;

    while failures < cfg.c_f_max && active.len() >= 4 {
        let model = match ransac_plane(matches, &active, &mut buffer, cfg, &mut rng) {
            Ok(m) => m,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let weak: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| model.is_inlier(&matches[i], cfg.t_l))
            .collect();
        if weak.len() < cfg.n_min {
            failures += 1;
            // Rejected models stay available as bootstrap hypotheses.
            if buffer.len() < buffer.capacity() {
                buffer.entries.insert(0, (model, weak.len()));
            } else if buffer.capacity() > 0 {
                buffer.entries.pop();
                buffer.entries.insert(0, (model, weak.len()));
            }
            continue;
        }
        let strong: Vec<usize> = weak
            .iter()
            .copied()
            .filter(|&i| model.is_inlier(&matches[i], cfg.t_h))
            .collect();
        let removed = if 2 * strong.len() > cfg.n_min {
            failures = 0;
            strong
        } else {
            failures += 1;
            weak
        };
        let mut drop = vec![false; matches.len()];
        for i in removed {
            drop[i] = true;
        }
        active.retain(|&i| !drop[i]);
        planes.push(model);
    }
    planes
}

/// Builds the kept/discarded partition and the per-match plane assignment
/// for `models` on `matches`.
pub(crate) fn finalize<M: PlaneModel>(
    matches: &[Match],
    models: Vec<M>,
    cfg: &MopConfig,
) -> FilterResult<M> {
    let planes: Vec<Plane<M>> = models
        .into_par_iter()
        .map(|model| {
            let errors: Vec<f64> = matches.iter().map(|m| model.error(m)).collect();
            let inliers = (0..matches.len()).filter(|&i| errors[i] <= cfg.t_l).collect();
            let strong_inliers = (0..matches.len()).filter(|&i| errors[i] <= cfg.t_h).collect();
            Plane {
                model,
                inliers,
                strong_inliers,
            }
        })
        .collect();

    let assignment: Vec<Option<usize>> = matches
        .par_iter()
        .map(|m| assign_homography(m, &planes, cfg.t_l).ok())
        .collect();
    let (kept, discarded): (Vec<usize>, Vec<usize>) =
        (0..matches.len()).partition(|&i| assignment[i].is_some());
    FilterResult {
        kept,
        discarded,
        assignment,
        planes,
        alpha_star: 0.0,
        passthrough: false,
    }
}

/// Median of the inlier counts of the (up to) five compatible planes with
/// the most inliers.
pub(crate) fn top5_median(counts: &[usize]) -> f64 {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.truncate(5);
    let k = sorted.len();
    if k == 0 {
        return 0.0;
    }
    if k % 2 == 1 {
        sorted[k / 2] as f64
    } else {
        (sorted[k / 2 - 1] + sorted[k / 2]) as f64 / 2.0
    }
}

/// Picks the plane used to normalize the patches of `m`: among the planes
/// having `m` as a `t_l`-inlier, those whose inlier count reaches the median
/// of the top five counts compete on reprojection error. Ties go to the
/// larger inlier count, then the lower index.
pub fn assign_homography<M: PlaneModel>(m: &Match, planes: &[Plane<M>], t_l: f64) -> Result<usize, MopError> {
    let compatible: Vec<(usize, f64, usize)> = planes
        .iter()
        .enumerate()
        .filter_map(|(k, p)| {
            let e = p.model.error(m);
            (e <= t_l).then_some((k, e, p.inliers.len()))
        })
        .collect();
    if compatible.is_empty() {
        return Err(MopError::NoCompatiblePlane);
    }
    let counts: Vec<usize> = compatible.iter().map(|c| c.2).collect();
    let q = top5_median(&counts);
    compatible
        .into_iter()
        .filter(|c| c.2 as f64 >= q)
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(b.2.cmp(&a.2))
                .then(a.0.cmp(&b.0))
        })
        .map(|c| c.0)
        .ok_or(MopError::NoCompatiblePlane)
}

/// Filters `matches` with the plain homography model.
pub fn mop_filter(matches: &[Match], cfg: &MopConfig) -> Result<FilterResult<HomographyModel>, MopError> {
    cfg.validate()?;
    if matches.len() < 4 {
        return Ok(FilterResult::passthrough(matches.len()));
    }
    let models = find_planes::<HomographyModel>(matches, cfg);
    Ok(finalize(matches, models, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{inlier_set, Homography};
    use crate::synth::{gen_planar_scene, SceneSpec, OUTLIER};

    /// Test model whose error is looked up by the match's x1 coordinate.
    #[derive(Debug, Clone)]
    struct FixedError(Vec<f64>);

    impl PlaneModel for FixedError {
        fn fit_sample(_: &[Match], _: [usize; 4], _: f64) -> Option<Self> {
            None
        }
        fn error(&self, m: &Match) -> f64 {
            self.0.get(m.p1.x as usize).copied().unwrap_or(f64::INFINITY)
        }
        fn sample(&self) -> [usize; 4] {
            [0; 4]
        }
    }

    fn planes(errors: &[f64], counts: &[usize]) -> Vec<Plane<FixedError>> {
        errors
            .iter()
            .zip(counts)
            .map(|(&e, &c)| Plane {
                model: FixedError(vec![e]),
                inliers: (0..c).collect(),
                strong_inliers: vec![],
            })
            .collect()
    }

    #[test]
    fn assignment_single_plane() {
        let m = Match::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(assign_homography(&m, &planes(&[3.0], &[40]), 15.0), Ok(0));
        assert_eq!(
            assign_homography(&m, &planes(&[30.0], &[40]), 15.0),
            Err(MopError::NoCompatiblePlane)
        );
    }

    #[test]
    fn assignment_two_planes_uses_median() {
        let m = Match::new(0.0, 0.0, 0.0, 0.0);
        // median(20, 300) = 160: the 20-inlier plane is not eligible
        assert_eq!(assign_homography(&m, &planes(&[0.1, 2.0], &[20, 300]), 15.0), Ok(1));
        // median(200, 300) = 250 still excludes it
        assert_eq!(assign_homography(&m, &planes(&[0.1, 2.0], &[200, 300]), 15.0), Ok(1));
        // equal counts: lower error wins
        assert_eq!(assign_homography(&m, &planes(&[0.1, 2.0], &[300, 300]), 15.0), Ok(0));
    }

    #[test]
    fn assignment_median_uses_top_five_only() {
        let m = Match::new(0.0, 0.0, 0.0, 0.0);
        // top five counts 100, 90, 80, 70, 60 -> median 80; the 5-count plane is ignored
        let p = planes(&[9.0, 8.0, 1.0, 7.0, 6.0, 0.5], &[100, 90, 80, 70, 60, 5]);
        assert_eq!(assign_homography(&m, &p, 15.0), Ok(2));
        assert_eq!(top5_median(&[100, 90, 80, 70, 60, 5]), 80.0);
        assert_eq!(top5_median(&[20, 300]), 160.0);
    }

    #[test]
    fn config_validation() {
        assert!(MopConfig::default().validate().is_ok());
        assert!(MopConfig::miho().validate().is_ok());
        let mut bad = MopConfig::default();
        bad.t_h = 20.0;
        assert!(bad.validate().is_err());
        let mut bad = MopConfig::default();
        bad.n_min = 4;
        assert!(bad.validate().is_err());
        let mut bad = MopConfig::default();
        bad.c_min = 3000;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fewer_than_four_matches_pass_through() {
        let matches = vec![Match::new(0.0, 0.0, 1.0, 1.0); 3];
        let r = mop_filter(&matches, &MopConfig::default()).unwrap();
        assert!(r.passthrough);
        assert_eq!(r.kept, vec![0, 1, 2]);
        assert!(r.planes.is_empty());
    }

    #[test]
    fn ransac_recovers_exact_plane() {
        let spec = SceneSpec {
            planes: 1,
            matches_per_plane: 50,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed: 3,
            ..SceneSpec::default()
        };
        let scene = gen_planar_scene(&spec).unwrap();
        let cfg = MopConfig::default();
        let active: Vec<usize> = (0..scene.matches.len()).collect();
        let mut buffer = ModelBuffer::new(cfg.buffer_size);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model: HomographyModel = ransac_plane(&scene.matches, &active, &mut buffer, &cfg, &mut rng).unwrap();
        assert_eq!(inlier_set(&model, &scene.matches, cfg.t_l).len(), 50);
        for m in &scene.matches {
            assert!(model.error(m) < 1e-6);
        }
        let scores = buffer.scores();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        assert!(buffer.len() <= cfg.buffer_size);
    }

    #[test]
    fn ransac_minimal_input() {
        let cfg = MopConfig::default();
        let good = vec![
            Match::new(0.0, 0.0, 10.0, 5.0),
            Match::new(100.0, 0.0, 110.0, 5.0),
            Match::new(100.0, 100.0, 110.0, 105.0),
            Match::new(0.0, 100.0, 10.0, 105.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buffer = ModelBuffer::new(5);
        let model: HomographyModel = ransac_plane(&good, &[0, 1, 2, 3], &mut buffer, &cfg, &mut rng).unwrap();
        let expected = Homography::translation(10.0, 5.0);
        assert!((model.h.matrix() - expected.matrix()).norm() < 1e-9);

        let tight = vec![
            Match::new(0.0, 0.0, 0.0, 0.0),
            Match::new(1.0, 0.0, 1.0, 0.0),
            Match::new(1.0, 1.0, 1.0, 1.0),
            Match::new(0.0, 1.0, 0.0, 1.0),
        ];
        let mut buffer = ModelBuffer::<HomographyModel>::new(5);
        let cfg = MopConfig {
            c_max: 50,
            ..MopConfig::default()
        };
        assert_eq!(
            ransac_plane(&tight, &[0, 1, 2, 3], &mut buffer, &cfg, &mut rng).unwrap_err(),
            MopError::NoModel { attempts: 500 }
        );
    }

    #[test]
    fn buffer_bootstrap_is_never_worse() {
        let spec = SceneSpec {
            planes: 2,
            matches_per_plane: 80,
            noise_sigma: 0.5,
            outlier_fraction: 0.3,
            seed: 11,
            ..SceneSpec::default()
        };
        let scene = gen_planar_scene(&spec).unwrap();
        let cfg = MopConfig {
            c_max: 50,
            ..MopConfig::default()
        };
        let support: Vec<usize> = (0..scene.matches.len()).filter(|&i| scene.labels[i] == 0).collect();
        let sample = [support[0], support[20], support[40], support[60]];
        let seeded = HomographyModel::fit_sample(&scene.matches, sample, cfg.t_l).expect("spread sample");
        let seeded_count = inlier_set(&seeded, &scene.matches, cfg.t_l).len();

        let mut buffer = ModelBuffer::new(cfg.buffer_size);
        buffer.preload(seeded);
        let active: Vec<usize> = (0..scene.matches.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ransac_plane(&scene.matches, &active, &mut buffer, &cfg, &mut rng).unwrap();
        assert!(inlier_set(&model, &scene.matches, cfg.t_l).len() >= seeded_count);
    }

    #[test]
    fn single_plane_scene_keeps_everything() {
        let spec = SceneSpec {
            planes: 1,
            matches_per_plane: 120,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed: 4,
            ..SceneSpec::default()
        };
        let scene = gen_planar_scene(&spec).unwrap();
        let r = mop_filter(&scene.matches, &MopConfig::default()).unwrap();
        assert_eq!(r.planes.len(), 1);
        assert_eq!(r.kept.len(), scene.matches.len());
        assert!(r.discarded.is_empty());
    }

    #[test]
    fn two_plane_scene_with_outliers() {
        let spec = SceneSpec {
            planes: 2,
            matches_per_plane: 100,
            noise_sigma: 0.0,
            outlier_fraction: 0.2,
            seed: 21,
            ..SceneSpec::default()
        };
        let scene = gen_planar_scene(&spec).unwrap();
        let cfg = MopConfig::default();
        let r = mop_filter(&scene.matches, &cfg).unwrap();
        assert!(r.planes.len() >= 2);
        let kept: std::collections::HashSet<usize> = r.kept.iter().copied().collect();
        let inliers = (0..scene.matches.len()).filter(|&i| scene.labels[i] != OUTLIER);
        assert!(inliers.clone().all(|i| kept.contains(&i)));
        let outliers: Vec<usize> = (0..scene.matches.len()).filter(|&i| scene.labels[i] == OUTLIER).collect();
        let dropped = outliers.iter().filter(|i| !kept.contains(i)).count();
        assert!(dropped * 50 >= outliers.len() * 45, "{dropped}/{}", outliers.len());
        for &i in &r.kept {
            let p = r.assignment[i].unwrap();
            assert!(r.planes[p].model.error(&scene.matches[i]) <= cfg.t_l);
        }
    }

    #[test]
    fn pure_outliers_keep_only_supported_matches() {
        let spec = SceneSpec {
            planes: 0,
            matches_per_plane: 0,
            outlier_count: Some(100),
            seed: 9,
            ..SceneSpec::default()
        };
        let scene = gen_planar_scene(&spec).unwrap();
        assert_eq!(scene.matches.len(), 100);
        let cfg = MopConfig::default();
        let r = mop_filter(&scene.matches, &cfg).unwrap();
        assert!(r.planes.len() <= 1);
        assert!(r.kept.len() < 30);
        for &i in &r.kept {
            assert!(r.planes.iter().any(|p| p.model.error(&scene.matches[i]) <= cfg.t_l));
        }
    }

    #[test]
    fn degenerate_inputs_do_not_panic() {
        let same = vec![Match::new(5.0, 5.0, 5.0, 5.0); 40];
        let r = mop_filter(&same, &MopConfig { c_max: 20, c_min: 10, ..MopConfig::default() }).unwrap();
        assert!(r.planes.is_empty());
        assert_eq!(r.discarded.len(), 40);

        let line: Vec<Match> = (0..30).map(|i| Match::new(i as f64 * 20.0, 0.0, i as f64 * 20.0, 0.0)).collect();
        let r = mop_filter(&line, &MopConfig { c_max: 20, c_min: 10, ..MopConfig::default() }).unwrap();
        assert!(r.planes.is_empty());
    }
}
