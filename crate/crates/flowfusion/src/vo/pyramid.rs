//! Coarse-to-fine image pyramids for the dense solver.

use crate::dataset::RgbdFrame;
use crate::geometry::PinholeIntrinsics;
use crate::grid::Grid;

pub struct PyramidLevel {
    pub intensity: Grid<f64>,
    pub depth: Grid<f64>,
    pub intrinsics: PinholeIntrinsics,
}

/// Level 0 is full resolution; intensity is average-pooled, depth is
/// downsampled by the median of valid entries per 2x2 block.
pub struct FramePyramid {
    pub levels: Vec<PyramidLevel>,
}

const MIN_LEVEL_SIZE: usize = 8;

impl FramePyramid {
    pub fn build(frame: &RgbdFrame, max_levels: usize) -> Self {
        let mut levels = vec![PyramidLevel {
            intensity: frame.intensity.clone(),
            depth: frame.depth.clone(),
            intrinsics: frame.intrinsics,
        }];
        while levels.len() < max_levels.max(1) {
            let prev = levels.last().unwrap();
            if prev.intrinsics.width / 2 < MIN_LEVEL_SIZE
                || prev.intrinsics.height / 2 < MIN_LEVEL_SIZE
            {
                break;
            }
            levels.push(PyramidLevel {
                intensity: prev.intensity.downsample_mean(),
                depth: prev.depth.downsample_depth_median(),
                intrinsics: prev.intrinsics.halved(),
            });
        }
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}
