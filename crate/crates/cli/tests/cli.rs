use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use planefilter::eval::{evaluate_pair, GroundTruth};
use planefilter::synth::{gen_planar_scene, gen_pose_scene, SceneSpec, OUTLIER};
use planefilter::Match;
use planefilter_cli::commands::{save_gray, SceneKind, SynthSpec};
use planefilter_cli::formats::{read_json, write_matches, GtFile, ResultFile};
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planefilter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn empty_match_file_gives_empty_result() {
    let dir = TempDir::new().unwrap();
    let (m, out) = (path(&dir, "m.csv"), path(&dir, "r.json"));
    std::fs::write(&m, "x1,y1,x2,y2\n").unwrap();
    let o = bin(&["filter", "--matches", s(&m), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: ResultFile = read_json(&out).unwrap();
    assert!(r.matches.is_empty());
    assert!(r.planes.is_empty());
}

#[test]
fn filter_output_is_byte_stable_and_follows_labels() {
    let dir = TempDir::new().unwrap();
    let scene = gen_planar_scene(&SceneSpec {
        seed: 11,
        ..SceneSpec::default()
    })
    .unwrap();
    let m = path(&dir, "m.csv");
    write_matches(&m, &scene.matches).unwrap();
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    for out in [&a, &b] {
        let o = bin(&["filter", "--matches", s(&m), "--out", s(out), "--seed", "4"]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let r: ResultFile = read_json(&a).unwrap();
    assert_eq!(r.matches.len(), scene.matches.len());
    let inliers = scene.labels.iter().filter(|&&l| l != OUTLIER).count();
    let kept_inliers = r
        .matches
        .iter()
        .zip(&scene.labels)
        .filter(|(rec, &l)| rec.kept && l != OUTLIER)
        .count();
    let kept_outliers = r
        .matches
        .iter()
        .zip(&scene.labels)
        .filter(|(rec, &l)| rec.kept && l == OUTLIER)
        .count();
    assert!(kept_inliers as f64 >= 0.95 * inliers as f64);
    assert!(kept_outliers as f64 <= 0.1 * (scene.matches.len() - inliers) as f64);
    // Coordinates survive the round trip bit for bit.
    for (rec, m) in r.matches.iter().zip(&scene.matches) {
        assert_eq!(rec.to_match(), *m);
    }
}

#[test]
fn miho_filter_writes_pairs() {
    let dir = TempDir::new().unwrap();
    let scene = gen_planar_scene(&SceneSpec {
        seed: 12,
        planes: 1,
        ..SceneSpec::default()
    })
    .unwrap();
    let m = path(&dir, "m.csv");
    write_matches(&m, &scene.matches).unwrap();
    let out = path(&dir, "r.json");
    let o = bin(&["filter", "--matches", s(&m), "--out", s(&out), "--miho", "--max-iters", "500"]);
    assert!(o.status.success());
    let r: ResultFile = read_json(&out).unwrap();
    assert!(r.miho);
    assert_eq!(r.config.as_ref().unwrap().n_min, 8);
    assert_eq!(r.config.as_ref().unwrap().c_max, 500);
    assert!(!r.planes.is_empty());
    assert!(r
        .planes
        .iter()
        .all(|p| matches!(p, planefilter_cli::formats::PlaneRecord::Pair { .. })));
}

#[test]
fn parse_and_io_errors_have_distinct_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.csv");
    std::fs::write(&bad, "x1,y1,x2,y2\n1,2,three,4\n").unwrap();
    let out = path(&dir, "r.json");
    assert_eq!(bin(&["filter", "--matches", s(&bad), "--out", s(&out)]).status.code(), Some(2));
    let missing = path(&dir, "missing.csv");
    let o = bin(&["filter", "--matches", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());
    let unwritable = dir.path().join("no-such-dir").join("r.json");
    std::fs::write(&bad, "x1,y1,x2,y2\n").unwrap();
    assert_eq!(bin(&["filter", "--matches", s(&bad), "--out", s(&unwritable)]).status.code(), Some(3));
}

#[test]
fn refine_on_identical_images_keeps_coordinates() {
    let dir = TempDir::new().unwrap();
    let img = planefilter::synth::texture_image(120, 100, planefilter::synth::Texture::WhiteNoise, 3);
    let (i1, i2) = (path(&dir, "a.png"), path(&dir, "b.png"));
    save_gray(&i1, &img).unwrap();
    save_gray(&i2, &img).unwrap();
    let ms = vec![Match::new(40.0, 50.0, 40.0, 50.0), Match::new(70.5, 33.25, 70.5, 33.25)];
    let m = path(&dir, "m.csv");
    write_matches(&m, &ms).unwrap();
    let out = path(&dir, "r.json");
    let o = bin(&["refine", "--matches", s(&m), "--img1", s(&i1), "--img2", s(&i2), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: ResultFile = read_json(&out).unwrap();
    for (rec, m) in r.matches.iter().zip(&ms) {
        assert!(rec.refined);
        assert_eq!(rec.to_match(), *m);
        assert!((rec.ncc_score.unwrap() - 441.0).abs() < 1e-6);
    }
}

#[test]
fn refine_flags_border_matches_and_rejects_missing_images() {
    let dir = TempDir::new().unwrap();
    let img = planefilter::synth::texture_image(60, 60, planefilter::synth::Texture::WhiteNoise, 4);
    let i1 = path(&dir, "a.png");
    save_gray(&i1, &img).unwrap();
    let m = path(&dir, "m.csv");
    write_matches(&m, &[Match::new(0.0, 0.0, 59.0, 59.0)]).unwrap();
    let out = path(&dir, "r.json");
    let o = bin(&["refine", "--matches", s(&m), "--img1", s(&i1), "--img2", s(&i1), "--out", s(&out)]);
    assert!(o.status.success());
    let r: ResultFile = read_json(&out).unwrap();
    assert!(!r.matches[0].refined);
    assert_eq!(r.matches[0].ncc_score, None);

    let missing = path(&dir, "missing.png");
    let o = bin(&["refine", "--matches", s(&m), "--img1", s(&i1), "--img2", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    let garbage = path(&dir, "garbage.png");
    std::fs::write(&garbage, b"not an image").unwrap();
    let o = bin(&["refine", "--matches", s(&m), "--img1", s(&garbage), "--img2", s(&i1), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn eval_matches_the_library_and_rejects_bad_ground_truth() {
    let dir = TempDir::new().unwrap();
    let scene = gen_pose_scene(&SceneSpec {
        seed: 5,
        ..SceneSpec::default()
    })
    .unwrap();
    let gt = scene.gt_pose.clone().unwrap();
    let base = path(&dir, "base.csv");
    write_matches(&base, &scene.matches).unwrap();
    let gt_path = path(&dir, "gt.json");
    planefilter_cli::formats::write_json(&gt_path, &GtFile::from_ground_truth(&gt, Some((640, 480)))).unwrap();

    let filtered = path(&dir, "f.json");
    assert!(bin(&["filter", "--matches", s(&base), "--out", s(&filtered)]).status.success());
    let report_path = path(&dir, "report.json");
    let o = bin(&[
        "eval", "--base", s(&base), "--pred", s(&filtered), "--gt", s(&gt_path), "--mode", "pose", "--out",
        s(&report_path),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();

    let kept = read_json::<ResultFile>(&filtered).unwrap().kept_matches();
    let reloaded = read_json::<GtFile>(&gt_path).unwrap().to_ground_truth().unwrap();
    let want = serde_json::to_value(evaluate_pair(&scene.matches, &kept, &reloaded, Some((640, 480)))).unwrap();
    assert_eq!(got, want);

    // Identity prediction with exact ground truth.
    let exact = gen_pose_scene(&SceneSpec {
        seed: 6,
        noise_sigma: 0.0,
        outlier_fraction: 0.0,
        ..SceneSpec::default()
    })
    .unwrap();
    write_matches(&base, &exact.matches).unwrap();
    let GroundTruth::Pose(_) = exact.gt_pose.as_ref().unwrap() else { unreachable!() };
    planefilter_cli::formats::write_json(&gt_path, &GtFile::from_ground_truth(exact.gt_pose.as_ref().unwrap(), None))
        .unwrap();
    let o = bin(&[
        "eval", "--base", s(&base), "--pred", s(&base), "--gt", s(&gt_path), "--mode", "pose", "--out",
        s(&report_path),
    ]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(r["recall"], 1.0);
    assert_eq!(r["precision"], 1.0);
    assert_eq!(r["filtered"], 0.0);

    std::fs::write(&gt_path, r#"{"H": [[1, 0], [0, 1]]}"#).unwrap();
    let o = bin(&[
        "eval", "--base", s(&base), "--pred", s(&base), "--gt", s(&gt_path), "--mode", "homography", "--out",
        s(&report_path),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_and_round_trips_the_spec() {
    let dir = TempDir::new().unwrap();
    let spec = SynthSpec {
        kind: SceneKind::Planar,
        tilt_deg: 15.0,
        scene: SceneSpec {
            planes: 1,
            seed: 21,
            ..SceneSpec::default()
        },
    };
    let spec_path = path(&dir, "spec.json");
    planefilter_cli::formats::write_json(&spec_path, &spec).unwrap();
    let (a, b) = (path(&dir, "a"), path(&dir, "b"));
    for d in [&a, &b] {
        let o = bin(&["synth", "--spec", s(&spec_path), "--out-dir", s(d)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["matches.csv", "scene.json", "gt.json", "spec.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let echoed: SynthSpec = read_json(&a.join("spec.json")).unwrap();
    assert_eq!(echoed, spec);
    let gt = read_json::<GtFile>(&a.join("gt.json")).unwrap().to_ground_truth().unwrap();
    assert!(matches!(gt, GroundTruth::Homography(_)));

    let rendered = SynthSpec {
        kind: SceneKind::Rendered,
        tilt_deg: 10.0,
        scene: SceneSpec {
            width: 160,
            height: 120,
            matches_per_plane: 10,
            seed: 2,
            ..SceneSpec::default()
        },
    };
    planefilter_cli::formats::write_json(&spec_path, &rendered).unwrap();
    let c = path(&dir, "c");
    assert!(bin(&["synth", "--spec", s(&spec_path), "--out-dir", s(&c)]).status.success());
    let img = planefilter_cli::commands::load_gray(&c.join("img1.png")).unwrap();
    assert_eq!((img.width(), img.height()), (160, 120));

    std::fs::write(&spec_path, r#"{"outlier_fraction": 2.0}"#).unwrap();
    assert_eq!(bin(&["synth", "--spec", s(&spec_path), "--out-dir", s(&c)]).status.code(), Some(2));
}

#[test]
fn refine_consumes_filter_results() {
    let dir = TempDir::new().unwrap();
    let spec = SynthSpec {
        kind: SceneKind::Rendered,
        tilt_deg: 12.0,
        scene: SceneSpec {
            width: 200,
            height: 160,
            matches_per_plane: 30,
            seed: 8,
            ..SceneSpec::default()
        },
    };
    let spec_path = path(&dir, "spec.json");
    planefilter_cli::formats::write_json(&spec_path, &spec).unwrap();
    let d = path(&dir, "scene");
    assert!(bin(&["synth", "--spec", s(&spec_path), "--out-dir", s(&d)]).status.success());
    let filtered = path(&dir, "f.json");
    let m = d.join("matches.csv");
    assert!(bin(&["filter", "--matches", s(&m), "--out", s(&filtered)]).status.success());
    let refined = path(&dir, "r.json");
    let o = bin(&[
        "refine", "--img1", s(&d.join("img1.png")), "--img2", s(&d.join("img2.png")), "--from-result", s(&filtered),
        "--out", s(&refined),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let before: ResultFile = read_json(&filtered).unwrap();
    let after: ResultFile = read_json(&refined).unwrap();
    assert_eq!(before.planes, after.planes);
    assert_eq!(before.matches.len(), after.matches.len());
    assert!(after.matches.iter().filter(|r| r.kept).all(|r| r.refined));
}
