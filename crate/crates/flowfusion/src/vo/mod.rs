//! Robust dense visual odometry.
//!
//! Gauss-Newton with iteratively reweighted least squares over a coarse-to-
//! fine pyramid: Cauchy weights turn the robust penalty into per-residual
//! weights, the scale is re-estimated per level and channel from the median
//! absolute deviation, and an optional per-cluster dynamic score
//! down-weights moving content out of the estimate.

mod pyramid;
mod residuals;
mod robust;

pub use pyramid::{FramePyramid, PyramidLevel};
pub use residuals::{
    compute_pixel_weights, compute_residuals, pixel_jacobians_at, pixel_residuals_at,
    PixelWeights, ResidualImages,
};
pub use robust::{estimate_scale, Cauchy, SCALE_FLOOR};

use crate::clustering::ClusterSet;
use crate::dataset::RgbdFrame;
use crate::geometry::{se3_exp, se3_log, RigidTransform, Twist};
use crate::grid::Grid;
use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;
use residuals::{eval_jacobians, eval_pixel, LevelData};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoError {
    #[error("frames do not share intrinsics")]
    IntrinsicsMismatch,
    #[error("under-constrained: {valid} valid pixels at the coarsest level, need {required}")]
    UnderConstrained { valid: usize, required: usize },
    #[error("scale estimation needs {required} residuals, got {count}")]
    DegenerateScale { count: usize, required: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Scale factor making the intensity term comparable to the depth term.
    pub alpha_i: f64,
    pub pyramid_levels: usize,
    pub iters_per_level: usize,
    /// Tuning constant for the MAD-based Cauchy scale.
    pub cauchy_k: f64,
    /// Early exit threshold on the twist increment norm.
    pub convergence_eps: f64,
    pub min_valid_pixels: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha_i: 0.9,
            pyramid_levels: 4,
            iters_per_level: 2,
            cauchy_k: 1.345,
            convergence_eps: 1e-6,
            min_valid_pixels: 200,
        }
    }
}

/// Levenberg damping added to the normal equations for conditioning.
const DAMPING: f64 = 1e-6;
const MAX_HALVINGS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub level: usize,
    pub iteration: usize,
    /// Robust energy after the accepted step.
    pub energy: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoDiagnostics {
    pub iterations: Vec<IterationRecord>,
    pub valid_pixels_finest: usize,
    pub converged: bool,
    /// Set when the normal equations went non-finite and the prior twist was
    /// returned unchanged.
    pub numeric_failure: bool,
}

impl VoDiagnostics {
    /// CSV export: `level,iteration,energy,step_norm` per accepted iteration.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level,iteration,energy,step_norm")?;
        for r in &self.iterations {
            writeln!(w, "{},{},{:.12e},{:.12e}", r.level, r.iteration, r.energy, r.step_norm)?;
        }
        Ok(())
    }
}

/// Result of a pose solve: the relative twist mapping frame-A camera
/// coordinates into frame-B camera coordinates, plus per-iteration records.
#[derive(Debug, Clone, PartialEq)]
pub struct VoSolution {
    pub twist: Twist,
    pub diagnostics: VoDiagnostics,
}

struct Accumulated {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    energy: f64,
    count: usize,
}

fn accumulate(ld: &LevelData, t: &RigidTransform, ci: &Cauchy, cd: &Cauchy) -> Accumulated {
    let h = ld.height();
    let w = ld.width();
    // Row-parallel with a serial fold in fixed row order keeps the reduction
    // deterministic across thread counts.
    let partials: Vec<Accumulated> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut acc = Accumulated {
                h: Matrix6::zeros(),
                g: Vector6::zeros(),
                energy: 0.0,
                count: 0,
            };
            for x in 0..w {
                if let Some(e) = eval_pixel(ld, t, x, y) {
                    let j = eval_jacobians(ld, &e, x, y);
                    let wi = ci.weight(e.s_i);
                    let wd = cd.weight(e.s_d);
                    let m = e.multiplier;
                    acc.h += (j.j_i * j.j_i.transpose()) * (m * wi)
                        + (j.j_d * j.j_d.transpose()) * (m * wd);
                    acc.g += j.j_i * (m * wi * e.s_i) + j.j_d * (m * wd * e.s_d);
                    acc.energy += m * (ci.penalty(e.s_i) + cd.penalty(e.s_d));
                    acc.count += 1;
                }
            }
            acc
        })
        .collect();
    let mut total = Accumulated {
        h: Matrix6::zeros(),
        g: Vector6::zeros(),
        energy: 0.0,
        count: 0,
    };
    for p in partials {
        total.h += p.h;
        total.g += p.g;
        total.energy += p.energy;
        total.count += p.count;
    }
    total
}

fn evaluate_energy(ld: &LevelData, t: &RigidTransform, ci: &Cauchy, cd: &Cauchy) -> (f64, usize) {
    let h = ld.height();
    let w = ld.width();
    let partials: Vec<(f64, usize)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut energy = 0.0;
            let mut count = 0;
            for x in 0..w {
                if let Some(e) = eval_pixel(ld, t, x, y) {
                    energy += e.multiplier * (ci.penalty(e.s_i) + cd.penalty(e.s_d));
                    count += 1;
                }
            }
            (energy, count)
        })
        .collect();
    partials
        .into_iter()
        .fold((0.0, 0), |(e, c), (pe, pc)| (e + pe, c + pc))
}

/// Scaled residual lists for scale estimation, restricted to pixels whose
/// multiplier is positive so that fully down-weighted content cannot distort
/// the scale.
fn collect_scaled_residuals(ld: &LevelData, t: &RigidTransform) -> (Vec<f64>, Vec<f64>) {
    let mut s_i = Vec::new();
    let mut s_d = Vec::new();
    for y in 0..ld.height() {
        for x in 0..ld.width() {
            if let Some(e) = eval_pixel(ld, t, x, y) {
                if e.multiplier > 0.0 {
                    s_i.push(e.s_i);
                    s_d.push(e.s_d);
                }
            }
        }
    }
    (s_i, s_d)
}

/// Per-pixel residual multiplier at one pyramid level. A coarse pixel takes
/// the minimum `1 - b` over its full-resolution footprint: pooled intensity
/// mixes the footprint's pixels, so a fully excluded child must exclude the
/// whole coarse pixel or its values would leak back into the estimate.
/// Unlabeled pixels are neutral (1).
fn multiplier_grid(
    width: usize,
    height: usize,
    level: usize,
    scores: Option<(&ClusterSet, &[f64])>,
) -> Grid<f64> {
    match scores {
        None => Grid::filled(width, height, 1.0),
        Some((clusters, b)) => {
            let scale = 1usize << level;
            let labels = clusters.labels();
            Grid::from_fn(width, height, |x, y| {
                let mut m = 1.0f64;
                for fy in (y * scale)..((y + 1) * scale).min(labels.height()) {
                    for fx in (x * scale)..((x + 1) * scale).min(labels.width()) {
                        if let Some(l) = clusters.label_at(fx, fy) {
                            m = m.min(1.0 - b[l]);
                        }
                    }
                }
                m
            })
        }
    }
}

/// Estimate the relative camera twist between two frames.
///
/// Without `cluster_scores` every pixel counts fully; with scores each
/// pixel's energy terms are multiplied by `1 - b` of its cluster, removing
/// dynamic content from the estimate. An all-zero score vector reproduces
/// the plain mode bit for bit.
pub fn solve_vo(
    a: &RgbdFrame,
    b: &RgbdFrame,
    config: &SolverConfig,
    cluster_scores: Option<(&ClusterSet, &[f64])>,
    xi0: &Twist,
) -> Result<VoSolution, VoError> {
    if a.intrinsics != b.intrinsics {
        return Err(VoError::IntrinsicsMismatch);
    }
    if let Some((clusters, scores)) = &cluster_scores {
        if clusters.len() != scores.len() {
            return Err(VoError::InvalidParameter(format!(
                "{} clusters but {} scores",
                clusters.len(),
                scores.len()
            )));
        }
    }

    let pyr_a = FramePyramid::build(a, config.pyramid_levels);
    let pyr_b = FramePyramid::build(b, config.pyramid_levels);
    let levels = pyr_a.len().min(pyr_b.len());
    let coarsest = levels - 1;

    let mut t = se3_exp(xi0);
    let mut diag = VoDiagnostics::default();

    for level in (0..levels).rev() {
        let la = &pyr_a.levels[level];
        let lb = &pyr_b.levels[level];
        let multiplier = multiplier_grid(
            la.intrinsics.width,
            la.intrinsics.height,
            level,
            cluster_scores,
        );
        let ld = LevelData::new(
            la.intensity.clone(),
            la.depth.clone(),
            lb.intensity.clone(),
            lb.depth.clone(),
            la.intrinsics,
            multiplier,
            config.alpha_i,
        );

        // Fixed per-level robust scales from the residuals at entry.
        let (s_i, s_d) = collect_scaled_residuals(&ld, &t);
        if level == coarsest {
            if s_i.len() < config.min_valid_pixels {
                return Err(VoError::UnderConstrained {
                    valid: s_i.len(),
                    required: config.min_valid_pixels,
                });
            }
            diag.valid_pixels_finest = s_i.len();
        } else if s_i.len() < config.min_valid_pixels {
            continue;
        }
        if level == 0 {
            diag.valid_pixels_finest = s_i.len();
        }
        let ci = Cauchy::new(estimate_scale(&s_i, config.cauchy_k, 1)?)?;
        let cd = Cauchy::new(estimate_scale(&s_d, config.cauchy_k, 1)?)?;

        for iteration in 0..config.iters_per_level {
            let acc = accumulate(&ld, &t, &ci, &cd);
            if acc.count < 6 {
                break;
            }
            let mut h = acc.h;
            for d in 0..6 {
                h[(d, d)] += DAMPING;
            }
            if !h.iter().all(|v| v.is_finite()) || !acc.g.iter().all(|v| v.is_finite()) {
                diag.numeric_failure = true;
                return Ok(VoSolution {
                    twist: *xi0,
                    diagnostics: diag,
                });
            }
            let Some(chol) = h.cholesky() else {
                diag.numeric_failure = true;
                return Ok(VoSolution {
                    twist: *xi0,
                    diagnostics: diag,
                });
            };
            let mut delta = chol.solve(&(-acc.g));
            if !delta.iter().all(|v| v.is_finite()) {
                diag.numeric_failure = true;
                return Ok(VoSolution {
                    twist: *xi0,
                    diagnostics: diag,
                });
            }

            // Line halving keeps the robust energy non-increasing across
            // accepted iterations at this level and scale.
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let step = Twist::from_array([
                    delta[0], delta[1], delta[2], delta[3], delta[4], delta[5],
                ]);
                let t_try = se3_exp(&step).compose(&t);
                let (e_try, _) = evaluate_energy(&ld, &t_try, &ci, &cd);
                if e_try <= acc.energy {
                    accepted = Some((t_try, e_try, step.norm()));
                    break;
                }
                delta *= 0.5;
            }
            let Some((t_new, e_new, step_norm)) = accepted else {
                break; // no admissible step at this level
            };
            t = t_new;
            diag.iterations.push(IterationRecord {
                level,
                iteration,
                energy: e_new,
                step_norm,
            });
            if step_norm < config.convergence_eps {
                if level == 0 {
                    diag.converged = true;
                }
                break;
            }
            if level == 0 && iteration + 1 == config.iters_per_level {
                diag.converged = step_norm < config.convergence_eps.max(1e-4);
            }
        }
    }

    Ok(VoSolution {
        twist: se3_log(&t),
        diagnostics: diag,
    })
}
