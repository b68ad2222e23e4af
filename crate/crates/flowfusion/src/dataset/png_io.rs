//! PNG helpers for the TUM layout: 16-bit depth (meters = value / 5000),
//! 8-bit grayscale intensity, binary masks.

use super::DatasetError;
use crate::grid::Grid;
use image::{DynamicImage, ImageBuffer, Luma};
use std::path::Path;

/// TUM depth scale: stored 16-bit value per meter.
pub const TUM_DEPTH_SCALE: f64 = 5000.0;

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

pub fn read_depth_png(path: &Path) -> Result<Grid<f64>, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::ImageFormat {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let img16 = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(DatasetError::ImageFormat {
                path: path.to_path_buf(),
                msg: format!("expected 16-bit grayscale depth, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = (img16.width() as usize, img16.height() as usize);
    let data = img16
        .pixels()
        .map(|p| p.0[0] as f64 / TUM_DEPTH_SCALE)
        .collect();
    Ok(Grid::from_vec(w, h, data))
}

/// Load a color or grayscale image and convert it to `[0, 1]` intensity by
/// luma weighting.
pub fn read_intensity_png(path: &Path) -> Result<Grid<f64>, DatasetError> {
    let img = image::open(path)
        .map_err(|e| DatasetError::ImageFormat {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| {
            (LUMA_R * p.0[0] as f64 + LUMA_G * p.0[1] as f64 + LUMA_B * p.0[2] as f64) / 255.0
        })
        .collect();
    Ok(Grid::from_vec(w, h, data))
}

pub fn write_depth_png(depth: &Grid<f64>, path: &Path) -> Result<(), DatasetError> {
    let buf = ImageBuffer::from_fn(depth.width() as u32, depth.height() as u32, |x, y| {
        let raw = (depth.get(x as usize, y as usize) * TUM_DEPTH_SCALE).round();
        Luma([raw.clamp(0.0, 65535.0) as u16])
    });
    buf.save(path).map_err(|e| DatasetError::ImageFormat {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_gray8_png(intensity: &Grid<f64>, path: &Path) -> Result<(), DatasetError> {
    let buf = ImageBuffer::from_fn(intensity.width() as u32, intensity.height() as u32, |x, y| {
        let v = (intensity.get(x as usize, y as usize) * 255.0).round();
        Luma([v.clamp(0.0, 255.0) as u8])
    });
    buf.save(path).map_err(|e| DatasetError::ImageFormat {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// 8-bit mask: 255 where true (dynamic), 0 elsewhere.
pub fn write_mask_png(mask: &Grid<bool>, path: &Path) -> Result<(), DatasetError> {
    let buf = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255u8 } else { 0 }])
    });
    buf.save(path).map_err(|e| DatasetError::ImageFormat {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_png_uses_tum_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let mut depth = Grid::filled(3, 2, 0.0);
        depth.set(1, 0, 1.0); // stored as 5000
        depth.set(2, 1, 2.5001);
        write_depth_png(&depth, &path).unwrap();
        let back = read_depth_png(&path).unwrap();
        assert_eq!(back.get(0, 0), 0.0);
        assert_eq!(back.get(1, 0), 1.0);
        assert_eq!(back.get(2, 1), 12501.0 / 5000.0);
    }

    #[test]
    fn gray_png_round_trips_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let g = Grid::from_vec(2, 1, vec![0.0, 128.0 / 255.0]);
        write_gray8_png(&g, &path).unwrap();
        let back = read_intensity_png(&path).unwrap();
        assert!((back.get(0, 0) - 0.0).abs() < 1e-12);
        // luma weights sum to 1, so gray values map straight through
        assert!((back.get(1, 0) - 128.0 / 255.0).abs() < 1e-12);
    }
}
