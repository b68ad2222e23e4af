//! Dense coarse-to-fine Lucas-Kanade optical flow.
//!
//! Forward-additive scheme: per pixel and pyramid level, the template
//! gradient structure matrix is fixed while the target image is resampled
//! under the current displacement. A self-contained stand-in for learned
//! flow estimators on desk-scale data.

use crate::dataset::FlowField;
use crate::grid::Grid;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LucasKanadeConfig {
    pub levels: usize,
    /// Half window size; radius 2 means a 5x5 window.
    pub window_radius: usize,
    pub iters_per_level: usize,
}

impl Default for LucasKanadeConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            window_radius: 2,
            iters_per_level: 10,
        }
    }
}

const MIN_EIGENVALUE: f64 = 1e-7;
const STEP_EPS: f64 = 1e-3;

struct Level {
    a: Grid<f64>,
    b: Grid<f64>,
    gx: Grid<f64>,
    gy: Grid<f64>,
}

/// Estimate dense optical flow from `a` to `b`. Deterministic: identical
/// inputs give identical fields.
pub fn dense_flow(a: &Grid<f64>, b: &Grid<f64>, cfg: &LucasKanadeConfig) -> FlowField {
    assert!(a.same_size(b), "input image dimensions differ");

    let mut levels: Vec<Level> = Vec::with_capacity(cfg.levels.max(1));
    {
        let (gx, gy) = a.gradients();
        levels.push(Level {
            a: a.clone(),
            b: b.clone(),
            gx,
            gy,
        });
    }
    for l in 1..cfg.levels.max(1) {
        let prev = &levels[l - 1];
        if prev.a.width() < 2 * cfg.window_radius + 2 || prev.a.height() < 2 * cfg.window_radius + 2
        {
            break;
        }
        let a_ds = prev.a.downsample_mean();
        let b_ds = prev.b.downsample_mean();
        let (gx, gy) = a_ds.gradients();
        levels.push(Level {
            a: a_ds,
            b: b_ds,
            gx,
            gy,
        });
    }

    let coarsest = levels.len() - 1;
    let mut flow_u = Grid::filled(levels[coarsest].a.width(), levels[coarsest].a.height(), 0.0f64);
    let mut flow_v = flow_u.clone();

    for l in (0..levels.len()).rev() {
        let level = &levels[l];
        let (w, h) = (level.a.width(), level.a.height());
        if l != coarsest {
            let (up_u, up_v) = upsample_flow(&flow_u, &flow_v, w, h);
            flow_u = up_u;
            flow_v = up_v;
        }

        let r = cfg.window_radius as isize;
        let u_out: Vec<(f64, f64)> = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                let level = &level;
                let flow_u = &flow_u;
                let flow_v = &flow_v;
                (0..w).map(move |x| {
                    refine_pixel(level, x, y, r, cfg.iters_per_level, flow_u.get(x, y), flow_v.get(x, y))
                })
            })
            .collect();

        let mut nu = Grid::filled(w, h, 0.0f64);
        let mut nv = Grid::filled(w, h, 0.0f64);
        for (i, (du, dv)) in u_out.iter().enumerate() {
            nu.as_mut_slice()[i] = *du;
            nv.as_mut_slice()[i] = *dv;
        }
        flow_u = nu;
        flow_v = nv;
    }

    FlowField::dense(flow_u, flow_v)
}

fn refine_pixel(
    level: &Level,
    x: usize,
    y: usize,
    r: isize,
    iters: usize,
    init_u: f64,
    init_v: f64,
) -> (f64, f64) {
    let (w, h) = (level.a.width(), level.a.height());
    let (xi, yi) = (x as isize, y as isize);
    // Template window must fit inside A.
    if xi - r < 0 || yi - r < 0 || xi + r >= w as isize || yi + r >= h as isize {
        return (init_u, init_v);
    }

    // Gradient structure matrix of the template window.
    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    for dy in -r..=r {
        for dx in -r..=r {
            let gx = level.gx.get((xi + dx) as usize, (yi + dy) as usize);
            let gy = level.gy.get((xi + dx) as usize, (yi + dy) as usize);
            gxx += gx * gx;
            gxy += gx * gy;
            gyy += gy * gy;
        }
    }
    let trace = gxx + gyy;
    let det = gxx * gyy - gxy * gxy;
    let min_eig = 0.5 * (trace - (trace * trace - 4.0 * det).max(0.0).sqrt());
    if min_eig < MIN_EIGENVALUE {
        return (init_u, init_v);
    }
    let inv_det = 1.0 / det;

    let (mut du, mut dv) = (init_u, init_v);
    for _ in 0..iters {
        // Target window under the current displacement must fit inside B.
        let u_min = xi as f64 - r as f64 + du;
        let u_max = xi as f64 + r as f64 + du;
        let v_min = yi as f64 - r as f64 + dv;
        let v_max = yi as f64 + r as f64 + dv;
        if u_min < 0.0 || v_min < 0.0 || u_max > (w - 1) as f64 - 1e-9 || v_max > (h - 1) as f64 - 1e-9
        {
            break;
        }

        let (mut bx, mut by) = (0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let ax = (xi + dx) as usize;
                let ay = (yi + dy) as usize;
                let sample = level
                    .b
                    .sample_bilinear(ax as f64 + du, ay as f64 + dv)
                    .unwrap_or_else(|| level.a.get(ax, ay));
                let e = sample - level.a.get(ax, ay);
                bx += level.gx.get(ax, ay) * e;
                by += level.gy.get(ax, ay) * e;
            }
        }
        // Solve G * step = -b
        let step_u = -(gyy * bx - gxy * by) * inv_det;
        let step_v = -(gxx * by - gxy * bx) * inv_det;
        du += step_u;
        dv += step_v;
        if step_u * step_u + step_v * step_v < STEP_EPS * STEP_EPS {
            break;
        }
    }
    (du, dv)
}

/// Upsample a flow field to double resolution: coordinates scale by 2 and so
/// do the vectors.
fn upsample_flow(u: &Grid<f64>, v: &Grid<f64>, w: usize, h: usize) -> (Grid<f64>, Grid<f64>) {
    let sample = |g: &Grid<f64>, x: usize, y: usize| -> f64 {
        let cu = (x as f64 - 0.5) * 0.5;
        let cv = (y as f64 - 0.5) * 0.5;
        let cu = cu.clamp(0.0, (g.width() - 1) as f64);
        let cv = cv.clamp(0.0, (g.height() - 1) as f64);
        g.sample_bilinear(cu, cv)
            .unwrap_or_else(|| g.get(cu.floor() as usize, cv.floor() as usize))
    };
    let nu = Grid::from_fn(w, h, |x, y| 2.0 * sample(u, x, y));
    let nv = Grid::from_fn(w, h, |x, y| 2.0 * sample(v, x, y));
    (nu, nv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::value_noise3;
    use nalgebra::Vector3;

    fn noise_image(w: usize, h: usize, shift_x: f64, seed: u64) -> Grid<f64> {
        // ~20 px features at the base octave
        Grid::from_fn(w, h, |x, y| {
            value_noise3(
                &Vector3::new((x as f64 - shift_x) / 80.0, y as f64 / 80.0, 0.37),
                seed,
            )
        })
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let img = noise_image(96, 72, 0.0, 11);
        let flow = dense_flow(&img, &img, &LucasKanadeConfig::default());
        let max_mag = flow
            .u
            .as_slice()
            .iter()
            .zip(flow.v.as_slice())
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0f64, f64::max);
        assert!(max_mag < 0.1, "max magnitude {max_mag}");
    }

    #[test]
    fn known_integer_shift_is_recovered() {
        let a = noise_image(160, 120, 0.0, 5);
        let b = noise_image(160, 120, 3.0, 5);
        let flow = dense_flow(&a, &b, &LucasKanadeConfig::default());
        let mut us: Vec<f64> = flow.u.as_slice().to_vec();
        let mut vs: Vec<f64> = flow.v.as_slice().to_vec();
        us.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        vs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mu = us[us.len() / 2];
        let mv = vs[vs.len() / 2];
        assert!((mu - 3.0).abs() < 0.3, "median u = {mu}");
        assert!(mv.abs() < 0.3, "median v = {mv}");
    }

    #[test]
    fn estimator_is_deterministic() {
        let a = noise_image(80, 60, 0.0, 3);
        let b = noise_image(80, 60, 1.5, 3);
        let f1 = dense_flow(&a, &b, &LucasKanadeConfig::default());
        let f2 = dense_flow(&a, &b, &LucasKanadeConfig::default());
        assert_eq!(f1, f2);
    }
}
