//! Dataset ingestion: TUM-format RGB-D sequences, dense flow files and
//! deterministic synthetic scenes with full ground truth.

mod flo;
mod png_io;
mod synthetic;
mod tum;

pub use flo::{read_flow_file, write_flow_file};
pub use png_io::{read_depth_png, read_intensity_png, write_depth_png, write_gray8_png, write_mask_png};
pub use synthetic::{
    generate_synthetic_sequence, value_noise3, write_tum_layout, GroundTruth, ObjectSpec,
    PlaneSpec, SyntheticSceneSpec,
};
pub use tum::{
    load_tum_sequence, load_tum_sequence_with, read_trajectory_file, write_trajectory_file,
    TumSequence, DEFAULT_MAX_TIME_DIFF, DEFAULT_TUM_INTRINSICS,
};

use crate::geometry::PinholeIntrinsics;
use crate::grid::Grid;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing index file {path}")]
    MissingIndex { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    ImageFormat { path: PathBuf, msg: String },
    #[error("bad flow file magic {got} (expected 202021.25)")]
    FlowMagic { got: f32 },
    #[error("flow file dimensions {got_w}x{got_h} invalid or unexpected")]
    FlowDimensions { got_w: i32, got_h: i32 },
    #[error("frame invariant violated: {0}")]
    FrameInvariant(String),
    #[error("scene spec field `{field}` invalid: {msg}")]
    DegenerateScene { field: String, msg: String },
}

/// One timestamped intensity + depth pair.
///
/// Intensity is normalized to `[0, 1]`; depth is in meters with 0 encoding
/// an invalid measurement. All consumers must skip zero-depth pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub timestamp: f64,
    pub intensity: Grid<f64>,
    pub depth: Grid<f64>,
    pub intrinsics: PinholeIntrinsics,
}

impl RgbdFrame {
    pub fn new(
        timestamp: f64,
        intensity: Grid<f64>,
        depth: Grid<f64>,
        intrinsics: PinholeIntrinsics,
    ) -> Result<Self, DatasetError> {
        if intensity.width() != intrinsics.width || intensity.height() != intrinsics.height {
            return Err(DatasetError::FrameInvariant(format!(
                "intensity is {}x{}, intrinsics say {}x{}",
                intensity.width(),
                intensity.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        if !depth.same_size(&intensity) {
            return Err(DatasetError::FrameInvariant(
                "depth and intensity dimensions differ".into(),
            ));
        }
        if let Some(v) = intensity
            .as_slice()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(DatasetError::FrameInvariant(format!(
                "intensity value {v} outside [0, 1]"
            )));
        }
        if let Some(v) = depth.as_slice().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(DatasetError::FrameInvariant(format!(
                "depth value {v} negative or non-finite"
            )));
        }
        Ok(Self {
            timestamp,
            intensity,
            depth,
            intrinsics,
        })
    }

    pub fn width(&self) -> usize {
        self.intensity.width()
    }

    pub fn height(&self) -> usize {
        self.intensity.height()
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth.as_slice().iter().filter(|d| **d > 0.0).count()
    }
}

/// Dense 2D per-pixel vector field: optical flow, ego flow or their
/// difference. Invalid pixels carry `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Grid<f64>,
    pub v: Grid<f64>,
    pub validity: Grid<bool>,
}

impl FlowField {
    /// Build a field, zeroing the components of invalid pixels.
    pub fn new(mut u: Grid<f64>, mut v: Grid<f64>, validity: Grid<bool>) -> Self {
        assert!(
            u.same_size(&v) && u.same_size(&validity),
            "flow component dimensions differ"
        );
        for (i, ok) in validity.as_slice().iter().enumerate() {
            if !ok {
                u.as_mut_slice()[i] = 0.0;
                v.as_mut_slice()[i] = 0.0;
            }
        }
        Self { u, v, validity }
    }

    /// All-valid field from raw components.
    pub fn dense(u: Grid<f64>, v: Grid<f64>) -> Self {
        let validity = Grid::filled(u.width(), u.height(), true);
        Self::new(u, v, validity)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            u: Grid::filled(width, height, 0.0),
            v: Grid::filled(width, height, 0.0),
            validity: Grid::filled(width, height, true),
        }
    }

    pub fn width(&self) -> usize {
        self.u.width()
    }

    pub fn height(&self) -> usize {
        self.u.height()
    }
}

/// Greedy nearest-timestamp association between two timestamp lists.
///
/// Candidate pairs within `max_diff` are taken in order of increasing
/// distance, each timestamp used at most once; the result is the same set
/// when the two lists are swapped. Returned pairs are sorted by the first
/// list's timestamps.
pub fn associate_timestamps(a: &[f64], b: &[f64], max_diff: f64) -> Vec<(usize, usize)> {
    let mut b_sorted: Vec<usize> = (0..b.len()).collect();
    b_sorted.sort_by(|&i, &j| b[i].total_cmp(&b[j]));

    let mut candidates: Vec<(f64, f64, f64, usize, usize)> = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        // All b entries within the window around ta.
        let lo = b_sorted.partition_point(|&j| b[j] < ta - max_diff);
        for &j in &b_sorted[lo..] {
            if b[j] > ta + max_diff {
                break;
            }
            let d = (ta - b[j]).abs();
            candidates.push((d, ta.min(b[j]), ta.max(b[j]), i, j));
        }
    }
    candidates.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.total_cmp(&y.2))
    });

    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, _, _, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_by(|x, y| a[x.0].total_cmp(&a[y.0]));
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn association_respects_threshold() {
        let rgb = [1.00, 2.00];
        let depth = [1.005, 2.5];
        let pairs = associate_timestamps(&rgb, &depth, 0.02);
        assert_eq!(pairs, vec![(0, 0)]);
    }

    #[test]
    fn association_is_symmetric_in_effect() {
        let a = [0.0, 0.10, 0.21, 0.33];
        let b = [0.02, 0.09, 0.22, 0.50];
        let fwd = associate_timestamps(&a, &b, 0.05);
        let rev = associate_timestamps(&b, &a, 0.05);
        let fwd_set: std::collections::BTreeSet<_> = fwd.into_iter().collect();
        let rev_set: std::collections::BTreeSet<_> = rev.into_iter().map(|(i, j)| (j, i)).collect();
        assert_eq!(fwd_set, rev_set);
    }

    #[test]
    fn association_prefers_nearest() {
        // Both a-entries are within range of b[0]; the closer one must win
        // and the other must fall through to b[1].
        let a = [1.00, 1.01];
        let b = [1.008, 1.02];
        let pairs = associate_timestamps(&a, &b, 0.05);
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn flow_field_zeroes_invalid_pixels() {
        let u = Grid::from_vec(2, 1, vec![1.0, 2.0]);
        let v = Grid::from_vec(2, 1, vec![3.0, 4.0]);
        let validity = Grid::from_vec(2, 1, vec![true, false]);
        let f = FlowField::new(u, v, validity);
        assert_eq!(f.u.get(1, 0), 0.0);
        assert_eq!(f.v.get(1, 0), 0.0);
        assert_eq!(f.u.get(0, 0), 1.0);
    }

    #[test]
    fn frame_invariants_are_validated() {
        let k = PinholeIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let ok = RgbdFrame::new(0.0, Grid::filled(4, 4, 0.5), Grid::filled(4, 4, 1.0), k);
        assert!(ok.is_ok());
        let bad_dim = RgbdFrame::new(0.0, Grid::filled(3, 4, 0.5), Grid::filled(3, 4, 1.0), k);
        assert!(bad_dim.is_err());
        let bad_intensity = RgbdFrame::new(0.0, Grid::filled(4, 4, 1.5), Grid::filled(4, 4, 1.0), k);
        assert!(bad_intensity.is_err());
        let bad_depth = RgbdFrame::new(0.0, Grid::filled(4, 4, 0.5), Grid::filled(4, 4, -1.0), k);
        assert!(bad_depth.is_err());
    }
}
