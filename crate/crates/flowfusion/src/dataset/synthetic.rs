//! Deterministic synthetic RGB-D scenes with full ground truth.
//!
//! Scenes are built from infinite textured planes plus an optional moving
//! box, rendered by nearest-hit ray casting so the depth images agree
//! exactly with the ground-truth geometry. Ground-truth flow is the true
//! motion field: each visible surface point's 3D motion (camera plus
//! object) projected into the next frame.

use super::{DatasetError, FlowField, RgbdFrame};
use crate::geometry::{project, se3_exp, PinholeIntrinsics, RigidTransform, Twist};
use crate::grid::Grid;
use nalgebra::Vector3;
use rayon::prelude::*;
use std::path::Path;

/// Inter-frame spacing of synthetic timestamps (30 Hz camera).
pub const FRAME_DT: f64 = 1.0 / 30.0;

const DEPTH_MIN: f64 = 0.3;
const DEPTH_MAX: f64 = 8.0;

/// Infinite plane `normal · p = offset` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneSpec {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

/// Axis-aligned box at frame 0, moved by a constant world-frame twist each
/// frame step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    pub center: Vector3<f64>,
    pub size: Vector3<f64>,
    pub twist: Twist,
}

/// Full description of a synthetic sequence. The camera twist is the
/// frame-to-frame relative motion in the tracking convention (it maps
/// frame-k camera coordinates into frame-k+1 camera coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub intrinsics: PinholeIntrinsics,
    pub frames: usize,
    pub texture_seed: u64,
    pub planes: Vec<PlaneSpec>,
    pub object: Option<ObjectSpec>,
    pub camera_twist: Twist,
}

/// Ground truth for a generated sequence. Camera poses are world-to-camera;
/// flows are per consecutive pair (A to B); masks flag pixels whose ray hits
/// the object.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub camera_poses: Vec<RigidTransform>,
    pub flows: Vec<FlowField>,
    pub masks: Vec<Grid<bool>>,
}

impl GroundTruth {
    /// Camera-to-world pose of frame `k`.
    pub fn camera_to_world(&self, k: usize) -> RigidTransform {
        self.camera_poses[k].inverse()
    }

    /// True relative twist mapping frame-k camera coordinates into
    /// frame-k+1 camera coordinates.
    pub fn relative_twist(&self, k: usize) -> Twist {
        let rel = self.camera_poses[k + 1].compose(&self.camera_poses[k].inverse());
        crate::geometry::se3_log(&rel)
    }

    /// Trajectory in camera-to-world convention, with synthetic timestamps.
    pub fn trajectory(&self) -> Vec<(f64, RigidTransform)> {
        self.camera_poses
            .iter()
            .enumerate()
            .map(|(k, w)| (k as f64 * FRAME_DT, w.inverse()))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Procedural texture: 3-octave seeded value noise.

fn mix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

fn lattice_value(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = mix64(
        seed ^ mix64(ix as u64 ^ mix64(iy as u64 ^ mix64(iz as u64 ^ 0x9e37_79b9_7f4a_7c15))),
    );
    // 53 high bits to a float in [0, 1)
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise_octave(p: &Vector3<f64>, seed: u64) -> f64 {
    let x0 = p.x.floor();
    let y0 = p.y.floor();
    let z0 = p.z.floor();
    let (ix, iy, iz) = (x0 as i64, y0 as i64, z0 as i64);
    let tx = smoothstep(p.x - x0);
    let ty = smoothstep(p.y - y0);
    let tz = smoothstep(p.z - z0);
    let mut acc = 0.0;
    for (dz, wz) in [(0, 1.0 - tz), (1, tz)] {
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                acc += wx * wy * wz * lattice_value(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

/// 3-octave seeded value noise in `[0, 1]`, evaluated at a 3D point in
/// meters. Deterministic: a fixed seed gives bit-identical values.
pub fn value_noise3(p: &Vector3<f64>, seed: u64) -> f64 {
    // Base lattice pitch 0.25 m; octaves at 4, 8 and 16 cycles per meter.
    let base = 4.0;
    let n = value_noise_octave(&(p * base), seed)
        + 0.5 * value_noise_octave(&(p * base * 2.0), seed.wrapping_add(0x1234_5678))
        + 0.25 * value_noise_octave(&(p * base * 4.0), seed.wrapping_add(0x9abc_def0));
    n / 1.75
}

// ---------------------------------------------------------------------------
// Ray casting.

#[derive(Clone, Copy)]
enum Hit {
    Plane { t: f64 },
    Box { t: f64 },
}

impl Hit {
    fn t(&self) -> f64 {
        match self {
            Hit::Plane { t } | Hit::Box { t } => *t,
        }
    }
}

fn intersect_planes(origin: &Vector3<f64>, dir: &Vector3<f64>, planes: &[PlaneSpec]) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for plane in planes {
        let denom = plane.normal.dot(dir);
        if denom.abs() < 1e-12 {
            continue;
        }
        let t = (plane.offset - plane.normal.dot(origin)) / denom;
        if t > 1e-9 && best.as_ref().map_or(true, |b| t < b.t()) {
            best = Some(Hit::Plane { t });
        }
    }
    best
}

/// Slab test against the axis-aligned box `[-half, half]` in object frame.
fn intersect_box(origin: &Vector3<f64>, dir: &Vector3<f64>, half: &Vector3<f64>) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-12 {
            if origin[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let mut t0 = (-half[a] - origin[a]) * inv;
        let mut t1 = (half[a] - origin[a]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_far < 1e-9 {
        return None;
    }
    Some(if t_near > 1e-9 { t_near } else { t_far })
}

struct FrameGeometry {
    /// camera-to-world
    cam_to_world: RigidTransform,
    /// object-to-world at this frame (identity rotation at frame 0)
    object_to_world: Option<RigidTransform>,
}

fn cast(
    geom: &FrameGeometry,
    spec: &SyntheticSceneSpec,
    px: usize,
    py: usize,
) -> Option<(Hit, Vector3<f64>)> {
    let k = &spec.intrinsics;
    let dir_cam = Vector3::new(
        (px as f64 - k.cx) / k.fx,
        (py as f64 - k.cy) / k.fy,
        1.0,
    );
    let origin = geom.cam_to_world.translation;
    let dir = geom.cam_to_world.rotation * dir_cam;

    let mut best = intersect_planes(&origin, &dir, &spec.planes);
    if let (Some(obj), Some(o2w)) = (&spec.object, &geom.object_to_world) {
        let w2o = o2w.inverse();
        let o_local = w2o.transform_point(&origin);
        let d_local = w2o.rotation * dir;
        if let Some(t) = intersect_box(&o_local, &d_local, &(obj.size * 0.5)) {
            if best.as_ref().map_or(true, |b| t < b.t()) {
                best = Some(Hit::Box { t });
            }
        }
    }
    best.map(|hit| (hit, origin + dir * hit.t()))
}

/// Render a full synthetic sequence with ground-truth poses, flow and
/// dynamic masks. Identical specs produce bit-identical output.
pub fn generate_synthetic_sequence(
    spec: &SyntheticSceneSpec,
) -> Result<(Vec<RgbdFrame>, GroundTruth), DatasetError> {
    if spec.frames == 0 {
        return Err(DatasetError::DegenerateScene {
            field: "frames".into(),
            msg: "frame count must be >= 1".into(),
        });
    }
    if spec.planes.is_empty() {
        return Err(DatasetError::DegenerateScene {
            field: "planes".into(),
            msg: "at least one background plane is required".into(),
        });
    }

    let k = spec.intrinsics;
    let (w, h) = (k.width, k.height);
    let cam_step = se3_exp(&spec.camera_twist);
    let obj_step = spec.object.map(|o| se3_exp(&o.twist));

    // world-to-camera per frame; frame 0 defines the world frame.
    let mut world_to_cam = Vec::with_capacity(spec.frames);
    world_to_cam.push(RigidTransform::identity());
    for kf in 1..spec.frames {
        world_to_cam.push(cam_step.compose(&world_to_cam[kf - 1]));
    }
    let mut object_to_world: Vec<Option<RigidTransform>> = Vec::with_capacity(spec.frames);
    if let Some(obj) = &spec.object {
        let mut o2w = RigidTransform::from_parts_unchecked(nalgebra::Matrix3::identity(), obj.center);
        for _ in 0..spec.frames {
            object_to_world.push(Some(o2w));
            o2w = obj_step.unwrap().compose(&o2w);
        }
    } else {
        object_to_world.resize(spec.frames, None);
    }

    // Camera must stay outside the object.
    if let Some(obj) = &spec.object {
        for kf in 0..spec.frames {
            let cam_center = world_to_cam[kf].inverse().translation;
            let local = object_to_world[kf]
                .unwrap()
                .inverse()
                .transform_point(&cam_center);
            let half = obj.size * 0.5;
            if local.x.abs() <= half.x && local.y.abs() <= half.y && local.z.abs() <= half.z {
                return Err(DatasetError::DegenerateScene {
                    field: "object".into(),
                    msg: format!("camera of frame {kf} is inside the object"),
                });
            }
        }
    }

    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    let mut flows = Vec::with_capacity(spec.frames.saturating_sub(1));

    // Per-frame hit buffers reused for flow generation.
    let mut prev_hits: Option<Vec<Option<(Hit, Vector3<f64>)>>> = None;

    for kf in 0..spec.frames {
        let geom = FrameGeometry {
            cam_to_world: world_to_cam[kf].inverse(),
            object_to_world: object_to_world[kf],
        };

        let mut hits: Vec<Option<(Hit, Vector3<f64>)>> = vec![None; w * h];
        hits.par_chunks_mut(w).enumerate().for_each(|(py, row)| {
            for (px, slot) in row.iter_mut().enumerate() {
                *slot = cast(&geom, spec, px, py);
            }
        });

        let mut depth = Grid::filled(w, h, 0.0f64);
        let mut intensity = Grid::filled(w, h, 0.0f64);
        let mut mask = Grid::filled(w, h, false);
        for py in 0..h {
            for px in 0..w {
                let idx = py * w + px;
                match &hits[idx] {
                    Some((hit, p_world)) => {
                        let t = hit.t();
                        if !(DEPTH_MIN < t && t < DEPTH_MAX) {
                            return Err(DatasetError::DegenerateScene {
                                field: "planes".into(),
                                msg: format!(
                                    "frame {kf} pixel ({px}, {py}) has depth {t:.3} outside ({DEPTH_MIN}, {DEPTH_MAX})"
                                ),
                            });
                        }
                        depth.set(px, py, t);
                        let tex = match hit {
                            Hit::Plane { .. } => value_noise3(p_world, spec.texture_seed),
                            Hit::Box { .. } => {
                                let local = object_to_world[kf]
                                    .unwrap()
                                    .inverse()
                                    .transform_point(p_world);
                                mask.set(px, py, true);
                                value_noise3(&local, spec.texture_seed.wrapping_add(1))
                            }
                        };
                        intensity.set(px, py, tex);
                    }
                    None => {
                        return Err(DatasetError::DegenerateScene {
                            field: "planes".into(),
                            msg: format!(
                                "frame {kf} pixel ({px}, {py}) hits no surface; planes must cover the view"
                            ),
                        });
                    }
                }
            }
        }

        // Flow of the previous pair: project each previous-frame hit point's
        // true motion into this frame. The source pixel is recovered through
        // the same projection route so that an unmoved point yields a flow
        // of exactly zero.
        if let Some(prev) = &prev_hits {
            let w2c_prev = &world_to_cam[kf - 1];
            let w2c_next = &world_to_cam[kf];
            let mut fu = Grid::filled(w, h, 0.0f64);
            let mut fv = Grid::filled(w, h, 0.0f64);
            let mut valid = Grid::filled(w, h, false);
            for py in 0..h {
                for px in 0..w {
                    if let Some((hit, p_world)) = &prev[py * w + px] {
                        let moved = match hit {
                            Hit::Plane { .. } => *p_world,
                            Hit::Box { .. } => obj_step.unwrap().transform_point(p_world),
                        };
                        let q_prev = w2c_prev.transform_point(p_world);
                        let q_next = w2c_next.transform_point(&moved);
                        if q_prev.z > 0.0 && q_next.z > 0.0 {
                            if let (Ok(src), Ok(dst)) = (project(&q_prev, &k), project(&q_next, &k))
                            {
                                fu.set(px, py, dst.u - src.u);
                                fv.set(px, py, dst.v - src.v);
                                valid.set(px, py, true);
                            }
                        }
                    }
                }
            }
            flows.push(FlowField::new(fu, fv, valid));
        }

        let frame = RgbdFrame::new(kf as f64 * FRAME_DT, intensity, depth, k)?;
        frames.push(frame);
        masks.push(mask);
        prev_hits = Some(hits);
    }

    if spec.object.is_some() && !masks[0].as_slice().iter().any(|&m| m) {
        return Err(DatasetError::DegenerateScene {
            field: "object".into(),
            msg: "object is not visible in frame 0".into(),
        });
    }

    Ok((
        frames,
        GroundTruth {
            camera_poses: world_to_cam,
            flows,
            masks,
        },
    ))
}

/// Write a generated sequence as a TUM-layout directory plus ground-truth
/// flow (`gt_flow/flow_<a>_<b>.flo`) and masks (`gt_masks/mask_<k>.png`), so
/// the output can be fed back through the TUM loader unmodified.
pub fn write_tum_layout(
    dir: &Path,
    frames: &[RgbdFrame],
    gt: &GroundTruth,
) -> Result<(), DatasetError> {
    use super::png_io::{write_depth_png, write_gray8_png, write_mask_png};
    use super::tum::{write_index_file, write_trajectory_file};
    use std::fs;

    let io_err = |path: &Path, source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    for sub in ["rgb", "depth", "gt_flow", "gt_masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
    }

    let mut rgb_entries = Vec::new();
    let mut depth_entries = Vec::new();
    for frame in frames {
        let rgb_rel = std::path::PathBuf::from(format!("rgb/{:.6}.png", frame.timestamp));
        let depth_rel = std::path::PathBuf::from(format!("depth/{:.6}.png", frame.timestamp));
        write_gray8_png(&frame.intensity, &dir.join(&rgb_rel))?;
        write_depth_png(&frame.depth, &dir.join(&depth_rel))?;
        rgb_entries.push((frame.timestamp, rgb_rel));
        depth_entries.push((frame.timestamp, depth_rel));
    }
    write_index_file(&dir.join("rgb.txt"), &rgb_entries, "timestamp filename")?;
    write_index_file(&dir.join("depth.txt"), &depth_entries, "timestamp filename")?;

    let trajectory: Vec<(f64, RigidTransform)> = frames
        .iter()
        .enumerate()
        .map(|(kf, f)| (f.timestamp, gt.camera_poses[kf].inverse()))
        .collect();
    write_trajectory_file(&dir.join("groundtruth.txt"), &trajectory)?;

    let k = frames[0].intrinsics;
    let intr_path = dir.join("intrinsics.txt");
    fs::write(
        &intr_path,
        format!(
            "# fx fy cx cy width height\n{} {} {} {} {} {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        ),
    )
    .map_err(|e| io_err(&intr_path, e))?;

    for (i, flow) in gt.flows.iter().enumerate() {
        super::flo::write_flow_file(flow, &dir.join(format!("gt_flow/flow_{}_{}.flo", i, i + 1)))?;
    }
    for (i, mask) in gt.masks.iter().enumerate() {
        write_mask_png(mask, &dir.join(format!("gt_masks/mask_{i:04}.png")))?;
    }
    Ok(())
}
