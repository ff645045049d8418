use std::fs;
use std::path::{Path, PathBuf};

use planefilter::eval::{evaluate_pair, EvalReport, GroundTruth};
use planefilter::geometry::Homography;
use planefilter::ncc::{
    build_warp_pairs, extended_from_miho, extended_from_mop, identity_pairs, luma_bt601, refine_matches, WarpPair,
};
use planefilter::synth::{
    gen_planar_scene, gen_pose_scene, render_textured_pair, tilt_homography, LabeledScene, SceneSpec, OUTLIER,
};
use planefilter::{mop_filter, mop_miho_filter, FilterResult, GrayImage, Match, MihoPair, MopConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::formats::{
    from_rows, read_json, read_matches, to_rows, write_json, write_matches, GtFile, MatchRecord,
    PlaneRecord, ResultFile,
};

#[derive(Debug, Clone)]
pub struct FilterArgs {
    pub matches: PathBuf,
    pub out: PathBuf,
    pub miho: bool,
    pub seed: u64,
    pub max_iters: Option<usize>,
    pub t_l: Option<f64>,
    pub n_min: Option<usize>,
}

/// The filter configuration implied by the command-line overrides.
pub fn filter_config(args: &FilterArgs) -> MopConfig {
    let mut cfg = if args.miho { MopConfig::miho() } else { MopConfig::default() };
    cfg.seed = args.seed;
    if let Some(t) = args.t_l {
        cfg = cfg.with_t_l(t);
    }
    if let Some(n) = args.n_min {
        cfg.n_min = n;
    }
    if let Some(c) = args.max_iters {
        cfg.c_max = c;
        cfg.c_min = cfg.c_min.min(c);
    }
    cfg
}

fn records<M>(matches: &[Match], result: &FilterResult<M>) -> Vec<MatchRecord> {
    matches
        .iter()
        .enumerate()
        .map(|(i, m)| MatchRecord {
            index: i,
            kept: result.passthrough || result.assignment[i].is_some(),
            plane: result.assignment[i],
            x1: m.p1.x,
            y1: m.p1.y,
            x2: m.p2.x,
            y2: m.p2.y,
            ncc_score: None,
            refined: false,
        })
        .collect()
}

/// Runs the plane filter on an in-memory match list.
pub fn filter_matches(matches: &[Match], cfg: &MopConfig, miho: bool) -> Result<ResultFile, CliError> {
    let invalid = |e: planefilter::MopError| CliError::Invalid(e.to_string());
    if miho {
        let result = mop_miho_filter(matches, cfg, None).map_err(invalid)?;
        Ok(ResultFile {
            config: Some(cfg.clone()),
            miho: true,
            alpha_star: result.alpha_star,
            passthrough: result.passthrough,
            planes: result
                .planes
                .iter()
                .map(|p| PlaneRecord::Pair {
                    h1: to_rows(p.model.pair.h1.matrix()),
                    h2: to_rows(p.model.pair.h2.matrix()),
                })
                .collect(),
            matches: records(matches, &result),
        })
    } else {
        let result = mop_filter(matches, cfg).map_err(invalid)?;
        Ok(ResultFile {
            config: Some(cfg.clone()),
            miho: false,
            alpha_star: result.alpha_star,
            passthrough: result.passthrough,
            planes: result
                .planes
                .iter()
                .map(|p| PlaneRecord::Single {
                    h: to_rows(p.model.h.matrix()),
                })
                .collect(),
            matches: records(matches, &result),
        })
    }
}

pub fn cmd_filter(args: &FilterArgs) -> Result<(), CliError> {
    let matches = read_matches(&args.matches)?;
    let result = filter_matches(&matches, &filter_config(args), args.miho)?;
    write_json(&args.out, &result)
}

/// Loads PNG or PGM/PPM images as luminance in `[0, 1]`; color goes
/// through BT.601 luma.
pub fn load_gray(path: &Path) -> Result<GrayImage, CliError> {
    let img = image::open(path).map_err(|e| CliError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = if img.color().has_color() {
        img.to_rgb32f().pixels().map(|p| luma_bt601(p[0], p[1], p[2])).collect()
    } else {
        img.to_luma32f().into_raw()
    };
    GrayImage::new(w, h, data).ok_or_else(|| CliError::Image {
        path: path.to_path_buf(),
        message: "empty or non-finite image".into(),
    })
}

/// Writes a 16-bit grayscale PNG.
pub fn save_gray(path: &Path, img: &GrayImage) -> Result<(), CliError> {
    let buf: Vec<u16> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let out = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(img.width() as u32, img.height() as u32, buf)
        .expect("buffer matches dimensions");
    out.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io(path, io),
        other => CliError::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

#[derive(Debug, Clone)]
pub struct RefineArgs {
    pub matches: Option<PathBuf>,
    pub img1: PathBuf,
    pub img2: PathBuf,
    pub out: PathBuf,
    pub from_result: Option<PathBuf>,
    pub radius: usize,
}

fn plane_pairs(result: &ResultFile) -> Result<Vec<Vec<WarpPair>>, CliError> {
    let base = (Homography::identity(), Homography::identity());
    result
        .planes
        .iter()
        .map(|p| {
            let singular = |_| CliError::Invalid("result file holds a singular plane".into());
            let extended = match p {
                PlaneRecord::Single { h } => extended_from_mop(&Homography::new(from_rows(h)).map_err(singular)?),
                PlaneRecord::Pair { h1, h2 } => extended_from_miho(&MihoPair {
                    h1: Homography::new(from_rows(h1)).map_err(singular)?,
                    h2: Homography::new(from_rows(h2)).map_err(singular)?,
                }),
            };
            Ok(build_warp_pairs(base, extended))
        })
        .collect()
}

/// Refines the kept matches of `result` in place.
pub fn refine_result(i1: &GrayImage, i2: &GrayImage, result: &mut ResultFile, radius: usize) -> Result<(), CliError> {
    let per_plane = plane_pairs(result)?;
    let fallback = identity_pairs();
    for r in &result.matches {
        if r.plane.is_some_and(|p| p >= per_plane.len()) {
            return Err(CliError::Invalid(format!("match {} refers to a missing plane", r.index)));
        }
    }
    let todo: Vec<usize> = (0..result.matches.len()).filter(|&i| result.matches[i].kept).collect();
    let inputs: Vec<Match> = todo.iter().map(|&i| result.matches[i].to_match()).collect();
    let records = &result.matches;
    let refined = refine_matches(
        i1,
        i2,
        &inputs,
        |k| match records[todo[k]].plane {
            Some(p) => per_plane[p].clone(),
            None => fallback.clone(),
        },
        radius,
    );
    for (k, out) in todo.into_iter().zip(refined) {
        let rec = &mut result.matches[k];
        if let Ok(r) = out {
            rec.x1 = r.refined.p1.x;
            rec.y1 = r.refined.p1.y;
            rec.x2 = r.refined.p2.x;
            rec.y2 = r.refined.p2.y;
            rec.ncc_score = Some(r.score);
            rec.refined = true;
        } else {
            rec.ncc_score = None;
            rec.refined = false;
        }
    }
    Ok(())
}

pub fn cmd_refine(args: &RefineArgs) -> Result<(), CliError> {
    let mut result = match &args.from_result {
        Some(path) => {
            let mut result: ResultFile = read_json(path)?;
            if let Some(mp) = &args.matches {
                let ms = read_matches(mp)?;
                if ms.len() != result.matches.len() {
                    return Err(CliError::Invalid(format!(
                        "{} holds {} matches but the result file has {}",
                        mp.display(),
                        ms.len(),
                        result.matches.len()
                    )));
                }
                for (rec, m) in result.matches.iter_mut().zip(&ms) {
                    (rec.x1, rec.y1, rec.x2, rec.y2) = (m.p1.x, m.p1.y, m.p2.x, m.p2.y);
                }
            }
            result
        }
        None => {
            let path = args
                .matches
                .as_ref()
                .ok_or_else(|| CliError::Invalid("refine needs --matches or --from-result".into()))?;
            let ms = read_matches(path)?;
            ResultFile {
                config: None,
                miho: false,
                alpha_star: 0.0,
                passthrough: true,
                planes: Vec::new(),
                matches: ms
                    .iter()
                    .enumerate()
                    .map(|(i, m)| MatchRecord {
                        index: i,
                        kept: true,
                        plane: None,
                        x1: m.p1.x,
                        y1: m.p1.y,
                        x2: m.p2.x,
                        y2: m.p2.y,
                        ncc_score: None,
                        refined: false,
                    })
                    .collect(),
            }
        }
    };
    let i1 = load_gray(&args.img1)?;
    let i2 = load_gray(&args.img2)?;
    refine_result(&i1, &i2, &mut result, args.radius)?;
    write_json(&args.out, &result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Pose,
    Homography,
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub base: PathBuf,
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub mode: EvalMode,
    pub out: PathBuf,
}

/// Matches from a CSV file, or the kept records of a JSON result file.
pub fn read_prediction(path: &Path) -> Result<Vec<Match>, CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        Ok(read_json::<ResultFile>(path)?.kept_matches())
    } else {
        read_matches(path)
    }
}

pub fn eval_files(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let base = read_prediction(&args.base)?;
    let pred = read_prediction(&args.pred)?;
    let file: GtFile = read_json(&args.gt)?;
    let gt = file.to_ground_truth().map_err(|m| CliError::parse(&args.gt, m))?;
    let mode_ok = matches!(
        (&gt, args.mode),
        (GroundTruth::Pose(_), EvalMode::Pose) | (GroundTruth::Homography(_), EvalMode::Homography)
    );
    if !mode_ok {
        return Err(CliError::parse(&args.gt, "ground truth does not match --mode"));
    }
    Ok(evaluate_pair(&base, &pred, &gt, file.size()))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let report = eval_files(args)?;
    write_json(&args.out, &report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    #[default]
    Planar,
    Pose,
    /// A textured image pair related by a tilt homography.
    Rendered,
}

/// Scene description read by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default)]
    pub kind: SceneKind,
    /// Out-of-plane tilt of rendered scenes, in degrees.
    #[serde(default = "default_tilt")]
    pub tilt_deg: f64,
    #[serde(flatten)]
    pub scene: SceneSpec,
}

fn default_tilt() -> f64 {
    15.0
}

#[derive(Debug, Serialize)]
struct SceneSummary<'a> {
    labels: Vec<Option<usize>>,
    planes: Vec<[[f64; 3]; 3]>,
    spec: &'a SynthSpec,
}

fn write_scene(dir: &Path, scene: &LabeledScene, spec: &SynthSpec) -> Result<(), CliError> {
    write_matches(&dir.join("matches.csv"), &scene.matches)?;
    let summary = SceneSummary {
        labels: scene.labels.iter().map(|&l| (l != OUTLIER).then_some(l)).collect(),
        planes: scene.gt_planes.iter().map(|h| to_rows(h.matrix())).collect(),
        spec,
    };
    write_json(&dir.join("scene.json"), &summary)?;
    let size = Some((scene.width, scene.height));
    let gt = match (&scene.gt_pose, scene.gt_planes.as_slice()) {
        (Some(gt), _) => Some(gt.clone()),
        (None, [h]) => Some(GroundTruth::Homography(*h)),
        _ => None,
    };
    if let Some(gt) = gt {
        write_json(&dir.join("gt.json"), &GtFile::from_ground_truth(&gt, size))?;
    }
    Ok(())
}

pub fn run_synth(spec: &SynthSpec, out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let invalid = |e: planefilter::synth::SynthError| CliError::Invalid(e.to_string());
    write_json(&out_dir.join("spec.json"), spec)?;
    match spec.kind {
        SceneKind::Planar => write_scene(out_dir, &gen_planar_scene(&spec.scene).map_err(invalid)?, spec),
        SceneKind::Pose => write_scene(out_dir, &gen_pose_scene(&spec.scene).map_err(invalid)?, spec),
        SceneKind::Rendered => {
            let s = &spec.scene;
            let h = tilt_homography(s.width, s.height, spec.tilt_deg);
            let pair = render_textured_pair(&h, s).map_err(invalid)?;
            save_gray(&out_dir.join("img1.png"), &pair.image1)?;
            save_gray(&out_dir.join("img2.png"), &pair.image2)?;
            write_matches(&out_dir.join("matches.csv"), &pair.matches)?;
            let gt = GtFile::from_ground_truth(&GroundTruth::Homography(h), Some((s.width, s.height)));
            write_json(&out_dir.join("gt.json"), &gt)
        }
    }
}

pub fn cmd_synth(spec_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let spec: SynthSpec = read_json(spec_path)?;
    spec.scene.validate().map_err(|e| CliError::parse(spec_path, e))?;
    run_synth(&spec, out_dir)
}
