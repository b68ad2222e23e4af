//! TUM RGB-D sequence loading and trajectory file I/O.
//!
//! Index files (`rgb.txt`, `depth.txt`) hold whitespace-separated
//! `timestamp filename` lines; `groundtruth.txt` holds
//! `timestamp tx ty tz qx qy qz qw` lines (quaternion w last, poses
//! camera-to-world). Lines starting with `#` are comments.

use super::png_io::{read_depth_png, read_intensity_png};
use super::{associate_timestamps, DatasetError, RgbdFrame};
use crate::geometry::{PinholeIntrinsics, RigidTransform};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Association threshold used by the TUM tooling convention.
pub const DEFAULT_MAX_TIME_DIFF: f64 = 0.02;

/// Generic 640x480 TUM calibration, used when the sequence directory does
/// not carry an `intrinsics.txt` override.
pub const DEFAULT_TUM_INTRINSICS: PinholeIntrinsics = PinholeIntrinsics {
    fx: 525.0,
    fy: 525.0,
    cx: 319.5,
    cy: 239.5,
    width: 640,
    height: 480,
};

/// A loaded sequence: frames paired with optional ground-truth poses
/// (camera-to-world), plus the count of index entries skipped because their
/// image files could not be read.
pub struct TumSequence {
    pub frames: Vec<(RgbdFrame, Option<RigidTransform>)>,
    pub skipped: usize,
}

fn parse_index_file(path: &Path) -> Result<Vec<(f64, String)>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|_| DatasetError::MissingIndex {
        path: path.to_path_buf(),
    })?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let ts: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| DatasetError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "expected `timestamp filename`".into(),
            })?;
        let name = it.next().ok_or_else(|| DatasetError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: "missing filename".into(),
        })?;
        entries.push((ts, name.to_string()));
    }
    Ok(entries)
}

fn read_intrinsics_override(dir: &Path) -> Result<Option<PinholeIntrinsics>, DatasetError> {
    let path = dir.join("intrinsics.txt");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io {
        path: path.clone(),
        source,
    })?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .filter_map(|t| t.parse().ok())
            .collect();
        if vals.len() != 6 {
            return Err(DatasetError::Parse {
                path,
                line: lineno + 1,
                msg: "expected `fx fy cx cy width height`".into(),
            });
        }
        let k = PinholeIntrinsics::new(
            vals[0],
            vals[1],
            vals[2],
            vals[3],
            vals[4] as usize,
            vals[5] as usize,
        )
        .map_err(|e| DatasetError::Parse {
            path,
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        return Ok(Some(k));
    }
    Ok(None)
}

/// Load a TUM sequence with the directory's `intrinsics.txt` override or the
/// generic default calibration.
pub fn load_tum_sequence(dir: &Path, max_time_diff: f64) -> Result<TumSequence, DatasetError> {
    let k = read_intrinsics_override(dir)?.unwrap_or(DEFAULT_TUM_INTRINSICS);
    load_tum_sequence_with(dir, max_time_diff, k)
}

pub fn load_tum_sequence_with(
    dir: &Path,
    max_time_diff: f64,
    intrinsics: PinholeIntrinsics,
) -> Result<TumSequence, DatasetError> {
    let rgb = parse_index_file(&dir.join("rgb.txt"))?;
    let depth = parse_index_file(&dir.join("depth.txt"))?;
    let gt_path = dir.join("groundtruth.txt");
    let gt = if gt_path.exists() {
        read_trajectory_file(&gt_path)?
    } else {
        Vec::new()
    };

    let rgb_ts: Vec<f64> = rgb.iter().map(|e| e.0).collect();
    let depth_ts: Vec<f64> = depth.iter().map(|e| e.0).collect();
    let pairs = associate_timestamps(&rgb_ts, &depth_ts, max_time_diff);

    let gt_ts: Vec<f64> = gt.iter().map(|e| e.0).collect();

    let mut frames = Vec::new();
    let mut skipped = 0usize;
    for (ri, di) in pairs {
        let ts = rgb[ri].0;
        let rgb_path = dir.join(&rgb[ri].1);
        let depth_path = dir.join(&depth[di].1);
        let loaded = read_intensity_png(&rgb_path).and_then(|intensity| {
            let depth_img = read_depth_png(&depth_path)?;
            RgbdFrame::new(ts, intensity, depth_img, intrinsics)
        });
        match loaded {
            Ok(frame) => {
                let pose = nearest_pose(&gt_ts, &gt, ts, max_time_diff);
                frames.push((frame, pose));
            }
            Err(_) => skipped += 1,
        }
    }
    frames.sort_by(|a, b| a.0.timestamp.total_cmp(&b.0.timestamp));
    Ok(TumSequence { frames, skipped })
}

fn nearest_pose(
    gt_ts: &[f64],
    gt: &[(f64, RigidTransform)],
    ts: f64,
    max_diff: f64,
) -> Option<RigidTransform> {
    if gt.is_empty() {
        return None;
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, &t) in gt_ts.iter().enumerate() {
        let d = (t - ts).abs();
        if d <= max_diff && best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| gt[i].1)
}

/// Parse a TUM trajectory file: `timestamp tx ty tz qx qy qz qw` per line.
pub fn read_trajectory_file(path: &Path) -> Result<Vec<(f64, RigidTransform)>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DatasetError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        if vals.len() != 8 {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 8 values, got {}", vals.len()),
            });
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(
            vals[7], vals[4], vals[5], vals[6],
        ));
        let pose = RigidTransform::from_parts_unchecked(
            q.to_rotation_matrix().into_inner(),
            Vector3::new(vals[1], vals[2], vals[3]),
        );
        out.push((vals[0], pose));
    }
    Ok(out)
}

/// Write a TUM trajectory file with enough digits to round-trip poses to
/// better than 1e-6.
pub fn write_trajectory_file(
    path: &Path,
    trajectory: &[(f64, RigidTransform)],
) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    writeln!(f, "# timestamp tx ty tz qx qy qz qw").map_err(io_err)?;
    for (ts, pose) in trajectory {
        let q = rotation_to_quaternion(pose);
        let t = pose.translation;
        writeln!(
            f,
            "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            ts, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn rotation_to_quaternion(pose: &RigidTransform) -> Quaternion<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(pose.rotation);
    UnitQuaternion::from_rotation_matrix(&rot).into_inner()
}

/// Write a TUM index file (`timestamp filename` lines).
pub(crate) fn write_index_file(
    path: &Path,
    entries: &[(f64, PathBuf)],
    header: &str,
) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    writeln!(f, "# {header}").map_err(io_err)?;
    for (ts, name) in entries {
        writeln!(f, "{:.6} {}", ts, name.display()).map_err(io_err)?;
    }
    Ok(())
}
