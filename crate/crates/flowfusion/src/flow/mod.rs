//! Optical flow providers, camera ego flow and the per-pixel flow residual.
//!
//! The flow residual is the length of the difference between observed
//! optical flow and the flow induced by camera motion on the static scene;
//! it is close to zero for static pixels and grows with object speed.

mod lucas_kanade;

pub use lucas_kanade::{dense_flow, LucasKanadeConfig};

use crate::dataset::{read_flow_file, FlowField, RgbdFrame};
use crate::geometry::{se3_exp, warp_pixel_transform, PinholeIntrinsics, Pixel, Twist};
use crate::grid::Grid;
use rayon::prelude::*;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("frame dimensions differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimensionMismatch {
        a_w: usize,
        a_h: usize,
        b_w: usize,
        b_h: usize,
    },
    #[error("provider holds no flow for pair {pair_index}")]
    MissingPairFlow { pair_index: usize },
    #[error("flow field is {got_w}x{got_h}, frames are {want_w}x{want_h}")]
    FieldMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("flow import from {dir}: {source}")]
    Import {
        dir: PathBuf,
        #[source]
        source: crate::dataset::DatasetError,
    },
}

/// Source of dense optical flow. Exactly one variant is active; all variants
/// are read-only after construction.
#[derive(Debug, Clone)]
pub enum FlowProvider {
    /// Ground-truth motion fields of a synthetic sequence, by pair index.
    ExactSynthetic { flows: Vec<FlowField> },
    /// Built-in coarse-to-fine Lucas-Kanade estimator.
    BuiltinPyramidal { config: LucasKanadeConfig },
    /// Externally computed flow loaded from `<dir>/flow_<a>_<b>.flo`.
    FileImport { dir: PathBuf },
}

impl FlowProvider {
    pub fn builtin() -> Self {
        Self::BuiltinPyramidal {
            config: LucasKanadeConfig::default(),
        }
    }

    /// Short tag for manifests and diagnostics.
    pub fn describe(&self) -> String {
        match self {
            Self::ExactSynthetic { flows } => format!("exact ({} pairs)", flows.len()),
            Self::BuiltinPyramidal { config } => format!(
                "builtin (levels {}, window {}, iters {})",
                config.levels,
                2 * config.window_radius + 1,
                config.iters_per_level
            ),
            Self::FileImport { dir } => format!("dir:{}", dir.display()),
        }
    }
}

/// Dense optical flow from frame `a` to frame `b`; `pair_index` identifies
/// the pair for providers that key flow by sequence position.
pub fn compute_optical_flow(
    provider: &FlowProvider,
    a: &RgbdFrame,
    b: &RgbdFrame,
    pair_index: usize,
) -> Result<FlowField, FlowError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(FlowError::DimensionMismatch {
            a_w: a.width(),
            a_h: a.height(),
            b_w: b.width(),
            b_h: b.height(),
        });
    }
    let field = match provider {
        FlowProvider::ExactSynthetic { flows } => flows
            .get(pair_index)
            .cloned()
            .ok_or(FlowError::MissingPairFlow { pair_index })?,
        FlowProvider::BuiltinPyramidal { config } => dense_flow(&a.intensity, &b.intensity, config),
        FlowProvider::FileImport { dir } => {
            let path = dir.join(format!("flow_{}_{}.flo", pair_index, pair_index + 1));
            read_flow_file(&path).map_err(|source| FlowError::Import {
                dir: dir.clone(),
                source,
            })?
        }
    };
    if field.width() != a.width() || field.height() != a.height() {
        return Err(FlowError::FieldMismatch {
            got_w: field.width(),
            got_h: field.height(),
            want_w: a.width(),
            want_h: a.height(),
        });
    }
    Ok(field)
}

/// Flow induced purely by camera motion on the static scene: per valid-depth
/// pixel, the warp displacement under `xi`. Pixels with invalid depth or a
/// behind-camera warp are marked invalid.
pub fn compute_ego_flow(a: &RgbdFrame, xi: &Twist, k: &PinholeIntrinsics) -> FlowField {
    let t = se3_exp(xi);
    let (w, h) = (a.width(), a.height());
    let rows: Vec<Vec<(f64, f64, bool)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let d = a.depth.get(x, y);
                if d <= 0.0 {
                    row.push((0.0, 0.0, false));
                    continue;
                }
                let px = Pixel::new(x as f64, y as f64);
                match warp_pixel_transform(&px, d, &t, k) {
                    Ok(wp) => row.push((wp.pixel.u - px.u, wp.pixel.v - px.v, true)),
                    Err(_) => row.push((0.0, 0.0, false)),
                }
            }
            row
        })
        .collect();

    let mut u = Grid::filled(w, h, 0.0f64);
    let mut v = Grid::filled(w, h, 0.0f64);
    let mut valid = Grid::filled(w, h, false);
    for (y, row) in rows.iter().enumerate() {
        for (x, &(du, dv, ok)) in row.iter().enumerate() {
            u.set(x, y, du);
            v.set(x, y, dv);
            valid.set(x, y, ok);
        }
    }
    FlowField::new(u, v, valid)
}

/// Per-pixel scalar flow residual, non-negative where valid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResidualField {
    pub r_f: Grid<f64>,
    pub validity: Grid<bool>,
}

/// Length of the per-pixel difference between optical flow and ego flow.
/// Valid only where both inputs are valid.
pub fn compute_flow_residual(
    of: &FlowField,
    ego: &FlowField,
) -> Result<FlowResidualField, FlowError> {
    if of.width() != ego.width() || of.height() != ego.height() {
        return Err(FlowError::DimensionMismatch {
            a_w: of.width(),
            a_h: of.height(),
            b_w: ego.width(),
            b_h: ego.height(),
        });
    }
    let (w, h) = (of.width(), of.height());
    let mut r = Grid::filled(w, h, 0.0f64);
    let mut valid = Grid::filled(w, h, false);
    for i in 0..w * h {
        let ok = of.validity.as_slice()[i] && ego.validity.as_slice()[i];
        if ok {
            let du = of.u.as_slice()[i] - ego.u.as_slice()[i];
            let dv = of.v.as_slice()[i] - ego.v.as_slice()[i];
            r.as_mut_slice()[i] = (du * du + dv * dv).sqrt();
            valid.as_mut_slice()[i] = true;
        }
    }
    Ok(FlowResidualField {
        r_f: r,
        validity: valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PinholeIntrinsics;
    use nalgebra::Vector3;

    fn flat_frame(w: usize, h: usize, depth: f64) -> RgbdFrame {
        let k = PinholeIntrinsics::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        RgbdFrame::new(0.0, Grid::filled(w, h, 0.5), Grid::filled(w, h, depth), k).unwrap()
    }

    #[test]
    fn ego_flow_of_zero_twist_is_identically_zero() {
        let mut frame = flat_frame(32, 24, 2.0);
        frame.depth.set(3, 3, 0.0);
        let flow = compute_ego_flow(&frame, &Twist::zero(), &frame.intrinsics);
        assert!(flow.u.as_slice().iter().all(|&x| x == 0.0));
        assert!(flow.v.as_slice().iter().all(|&x| x == 0.0));
        assert!(!flow.validity.get(3, 3));
        assert!(flow.validity.get(0, 0));
    }

    #[test]
    fn pure_x_translation_gives_uniform_flow() {
        let frame = flat_frame(32, 24, 2.0);
        let xi = Twist::new(Vector3::new(0.1, 0.0, 0.0), Vector3::zeros());
        let flow = compute_ego_flow(&frame, &xi, &frame.intrinsics);
        let expected = 100.0 * 0.1 / 2.0; // fx * |t| / z = 5 px
        for (x, y, &ok) in flow.validity.iter_pixels() {
            assert!(ok);
            assert!((flow.u.get(x, y) - expected).abs() < 1e-9);
            assert!(flow.v.get(x, y).abs() < 1e-9);
        }
    }

    #[test]
    fn z_rotation_circulates_about_principal_point() {
        // principal point (16, 12) lies exactly on a pixel center
        let k = PinholeIntrinsics::new(100.0, 100.0, 16.0, 12.0, 33, 25).unwrap();
        let frame = RgbdFrame::new(
            0.0,
            Grid::filled(33, 25, 0.5),
            Grid::filled(33, 25, 2.0),
            k,
        )
        .unwrap();
        let theta = 0.01;
        let xi = Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, theta));
        let flow = compute_ego_flow(&frame, &xi, &k);

        let (pc_x, pc_y) = (k.cx as usize, k.cy as usize);
        let mag_center = flow.u.get(pc_x, pc_y).hypot(flow.v.get(pc_x, pc_y));
        assert!(mag_center < 1e-9, "flow at principal point: {mag_center}");

        for (x, y) in [(5usize, 4usize), (30, 20), (16, 2)] {
            let radial = nalgebra::Vector2::new(x as f64 - k.cx, y as f64 - k.cy);
            let f = nalgebra::Vector2::new(flow.u.get(x, y), flow.v.get(x, y));
            let cos = radial.dot(&f) / (radial.norm() * f.norm());
            // rotation flow is tangential up to the finite chord of 0.01 rad
            assert!(cos.abs() < 0.01, "flow not tangential at ({x},{y}): cos = {cos}");
            let expected_mag = radial.norm() * theta;
            assert!((f.norm() - expected_mag).abs() / expected_mag < 0.01);
        }
    }

    #[test]
    fn residual_of_identical_fields_is_zero() {
        let f = FlowField::dense(Grid::filled(8, 6, 1.25), Grid::filled(8, 6, -2.5));
        let r = compute_flow_residual(&f, &f).unwrap();
        assert!(r.r_f.as_slice().iter().all(|&x| x == 0.0));
        assert!(r.validity.as_slice().iter().all(|&x| x));
    }

    #[test]
    fn residual_linearity_is_exact() {
        // quarter-integer base values keep the additions exact
        let ego = FlowField::dense(
            Grid::from_fn(8, 6, |x, y| 0.25 * (x as f64) - 0.5 * (y as f64)),
            Grid::from_fn(8, 6, |x, y| 0.75 * (y as f64) + 0.25 * (x as f64)),
        );
        let of = FlowField::dense(ego.u.map(|u| u + 3.0), ego.v.map(|v| v + 4.0));
        let r = compute_flow_residual(&of, &ego).unwrap();
        assert!(r.r_f.as_slice().iter().all(|&x| x == 5.0));
    }

    #[test]
    fn residual_validity_is_the_intersection() {
        let mut va = Grid::filled(4, 4, true);
        va.set(0, 0, false);
        let mut vb = Grid::filled(4, 4, true);
        vb.set(1, 1, false);
        let fa = FlowField::new(Grid::filled(4, 4, 1.0), Grid::filled(4, 4, 0.0), va);
        let fb = FlowField::new(Grid::filled(4, 4, 0.0), Grid::filled(4, 4, 0.0), vb);
        let r = compute_flow_residual(&fa, &fb).unwrap();
        assert!(!r.validity.get(0, 0));
        assert!(!r.validity.get(1, 1));
        assert!(r.validity.get(2, 2));
        assert_eq!(r.r_f.get(0, 0), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let fa = FlowField::zeros(4, 4);
        let fb = FlowField::zeros(5, 4);
        assert!(matches!(
            compute_flow_residual(&fa, &fb),
            Err(FlowError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exact_provider_is_a_passthrough() {
        let frame = flat_frame(8, 6, 1.0);
        let gt = FlowField::dense(Grid::filled(8, 6, 0.5), Grid::filled(8, 6, -0.125));
        let provider = FlowProvider::ExactSynthetic {
            flows: vec![gt.clone()],
        };
        let out = compute_optical_flow(&provider, &frame, &frame, 0).unwrap();
        assert_eq!(out, gt);
        assert!(matches!(
            compute_optical_flow(&provider, &frame, &frame, 1),
            Err(FlowError::MissingPairFlow { pair_index: 1 })
        ));
    }

    #[test]
    fn file_import_reports_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let provider = FlowProvider::FileImport {
            dir: dir.path().to_path_buf(),
        };
        let frame = flat_frame(8, 6, 1.0);
        let err = compute_optical_flow(&provider, &frame, &frame, 0).unwrap_err();
        assert!(err.to_string().contains(&dir.path().display().to_string()));
    }
}
