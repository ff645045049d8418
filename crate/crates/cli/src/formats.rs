//! On-disk formats: CSV match lists, JSON result and ground-truth files.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use planefilter::eval::{GroundTruth, PoseGt};
use planefilter::{Homography, Match, MopConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::parse(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct MatchRow {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// Parses a `x1,y1,x2,y2` CSV document.
pub fn parse_matches(text: &str, path: &Path) -> Result<Vec<Match>, CliError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| CliError::parse(path, e))?.clone();
    if !headers.is_empty() && headers.iter().collect::<Vec<_>>() != ["x1", "y1", "x2", "y2"] {
        return Err(CliError::parse(path, "expected header x1,y1,x2,y2"));
    }
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<MatchRow>().enumerate() {
        let row = row.map_err(|e| CliError::parse(path, e))?;
        let m = Match::new(row.x1, row.y1, row.x2, row.y2);
        if !m.is_finite() {
            return Err(CliError::parse(path, format!("record {} is not finite", line + 1)));
        }
        out.push(m);
    }
    Ok(out)
}

pub fn read_matches(path: &Path) -> Result<Vec<Match>, CliError> {
    parse_matches(&read_text(path)?, path)
}

pub fn format_matches(matches: &[Match]) -> String {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.write_record(["x1", "y1", "x2", "y2"]).expect("in-memory write");
    for m in matches {
        writer
            .serialize(MatchRow {
                x1: m.p1.x,
                y1: m.p1.y,
                x2: m.p2.x,
                y2: m.p2.y,
            })
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn write_matches(path: &Path, matches: &[Match]) -> Result<(), CliError> {
    write_text(path, &format_matches(matches))
}

pub type Rows3 = [[f64; 3]; 3];

pub fn to_rows(m: &Matrix3<f64>) -> Rows3 {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub fn from_rows(r: &Rows3) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

/// A plane of a result file: one homography for plain planes, a midpoint
/// pair for the midpoint variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlaneRecord {
    Pair { h1: Rows3, h2: Rows3 },
    Single { h: Rows3 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub index: usize,
    pub kept: bool,
    pub plane: Option<usize>,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub ncc_score: Option<f64>,
    pub refined: bool,
}

impl MatchRecord {
    pub fn to_match(&self) -> Match {
        Match::new(self.x1, self.y1, self.x2, self.y2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub config: Option<MopConfig>,
    pub miho: bool,
    pub alpha_star: f64,
    pub passthrough: bool,
    pub planes: Vec<PlaneRecord>,
    pub matches: Vec<MatchRecord>,
}

impl ResultFile {
    pub fn kept_matches(&self) -> Vec<Match> {
        self.matches.iter().filter(|r| r.kept).map(MatchRecord::to_match).collect()
    }
}

/// Ground truth on disk: a relative pose or a single homography, with an
/// optional image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtFile {
    #[serde(rename = "K1", default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<Vec<Vec<f64>>>,
    #[serde(rename = "K2", default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

fn matrix3(rows: &[Vec<f64>], name: &str) -> Result<Matrix3<f64>, String> {
    if rows.len() != 3 || rows.iter().any(|r| r.len() != 3) {
        return Err(format!("{name} must be a 3x3 matrix"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(format!("{name} has non-finite entries"));
    }
    Ok(Matrix3::from_fn(|i, j| rows[i][j]))
}

fn rows_vec(m: &Matrix3<f64>) -> Vec<Vec<f64>> {
    to_rows(m).iter().map(|r| r.to_vec()).collect()
}

impl GtFile {
    pub fn from_ground_truth(gt: &GroundTruth, size: Option<(u32, u32)>) -> Self {
        let mut out = GtFile {
            k1: None,
            k2: None,
            r: None,
            t: None,
            scale: None,
            h: None,
            width: size.map(|s| s.0),
            height: size.map(|s| s.1),
        };
        match gt {
            GroundTruth::Pose(p) => {
                out.k1 = Some(rows_vec(&p.k1));
                out.k2 = Some(rows_vec(&p.k2));
                out.r = Some(rows_vec(&p.r));
                out.t = Some(p.t.iter().copied().collect());
                out.scale = p.scale;
            }
            GroundTruth::Homography(h) => out.h = Some(rows_vec(h.matrix())),
        }
        out
    }

    /// Shape- and validity-checked ground truth.
    pub fn to_ground_truth(&self) -> Result<GroundTruth, String> {
        let pose_fields = [self.k1.is_some(), self.k2.is_some(), self.r.is_some(), self.t.is_some()];
        match (&self.h, pose_fields.iter().any(|&b| b)) {
            (Some(h), false) => {
                let h = Homography::new(matrix3(h, "H")?).map_err(|_| "H is singular".to_string())?;
                Ok(GroundTruth::Homography(h))
            }
            (None, true) => {
                let need = |v: &Option<Vec<Vec<f64>>>, name: &str| {
                    v.as_deref().ok_or_else(|| format!("missing {name}")).and_then(|r| matrix3(r, name))
                };
                let t = self.t.as_deref().ok_or("missing t")?;
                if t.len() != 3 || t.iter().any(|v| !v.is_finite()) {
                    return Err("t must be a finite 3-vector".into());
                }
                if self.scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
                    return Err("scale must be positive".into());
                }
                let gt = PoseGt {
                    k1: need(&self.k1, "K1")?,
                    k2: need(&self.k2, "K2")?,
                    r: need(&self.r, "R")?,
                    t: Vector3::new(t[0], t[1], t[2]),
                    scale: self.scale,
                };
                if !gt.is_valid() {
                    return Err("pose ground truth fails validity checks".into());
                }
                Ok(GroundTruth::Pose(gt))
            }
            (Some(_), true) => Err("ground truth must hold either a pose or H, not both".into()),
            (None, false) => Err("ground truth holds neither a pose nor H".into()),
        }
    }

    pub fn size(&self) -> Option<(u32, u32)> {
        self.width.zip(self.height)
    }
}
