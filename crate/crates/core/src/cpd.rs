//! Coherent point drift over feature geometries: a kernel-biased E-step, a closed-form
//! similarity M-step, and the plain-CPD and ICP baselines.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::Feature;
use crate::error::{Error, Result};
use crate::kernels::KernelParams;
use crate::matching::{hough_init, match_features, HoughResult, HoughThresholds};
use crate::transform::{Geometry, SimilarityTransform};
use crate::{Mat3, Vec3};

pub const DEFAULT_W: f64 = 0.1;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const LAMBDA_SQ_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cpd,
    #[default]
    SiftCpd,
    SiftCpdStar,
    Icp,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Cpd => "cpd",
            Variant::SiftCpd => "sift_cpd",
            Variant::SiftCpdStar => "sift_cpd_star",
            Variant::Icp => "icp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Background (outlier) weight.
    pub w: f64,
    /// EM iterations, or the fixed iteration count for ICP.
    pub max_iterations: usize,
    /// Stop when `|Δλ²| < tolerance · λ²_init`.
    pub tolerance: f64,
    pub lambda_sq_floor: f64,
    pub variant: Variant,
    pub kernel: KernelParams,
    pub hough: HoughThresholds,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            w: DEFAULT_W,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
            lambda_sq_floor: LAMBDA_SQ_FLOOR,
            variant: Variant::SiftCpd,
            kernel: KernelParams::default(),
            hough: HoughThresholds::default(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.w) {
            return Err(Error::invalid(format!("w must lie in [0, 1), got {}", self.w)));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance must be nonnegative"));
        }
        if !(self.lambda_sq_floor > 0.0) {
            return Err(Error::invalid("lambda_sq_floor must be positive"));
        }
        self.kernel.validate()
    }
}

/// `M × N` correspondence probabilities; `p[(m, n)]` pairs moving `m` with fixed `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub values: DMatrix<f64>,
}

impl ProbabilityMap {
    pub fn moving_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn fixed_len(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[(m, n)]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.values.column_iter().map(|c| c.sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// One-hot map pairing moving `m` with fixed `pairs[m]`.
    pub fn from_pairs(pairs: &[usize], fixed_len: usize) -> Self {
        let mut values = DMatrix::zeros(pairs.len(), fixed_len);
        for (m, &n) in pairs.iter().enumerate() {
            values[(m, n)] = 1.0;
        }
        Self { values }
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Moving-to-fixed transform.
    pub transform: SimilarityTransform,
    pub initial: SimilarityTransform,
    pub probability: ProbabilityMap,
    pub iterations: usize,
    pub lambda_sq_history: Vec<f64>,
    pub lambda_sq_init: f64,
    pub converged: bool,
    pub hough: HoughResult,
    pub match_count: usize,
    /// Seconds, including matching and Hough voting.
    pub runtime: f64,
}

/// `(1 / 3NM) Σₙ Σₘ ‖xₙ - xₘ‖²`.
pub fn init_lambda_sq(fixed: &[Vec3], moving: &[Vec3]) -> Result<f64> {
    if fixed.is_empty() || moving.is_empty() {
        return Err(Error::invalid("point sets must be non-empty"));
    }
    let total: f64 = fixed
        .par_iter()
        .map(|f| moving.iter().map(|m| (f - m).norm_squared()).sum::<f64>())
        .sum();
    Ok(total / (3.0 * fixed.len() as f64 * moving.len() as f64))
}

/// Posterior correspondence probabilities. `moving` must already be mapped by the
/// current transform. `kernel = None` is plain CPD.
pub fn e_step(
    fixed: &[Geometry],
    moving: &[Geometry],
    lambda_sq: f64,
    w: f64,
    kernel: Option<&KernelParams>,
) -> Result<ProbabilityMap> {
    e_step_normalized(fixed, moving, lambda_sq, w, kernel, 1.0)
}

/// [`e_step`] evaluated as if all coordinates were divided by `unit` (mm). The Gaussian
/// term and the kernel do not change under that scaling; only the background constant
/// does, by `unit⁻³`.
pub fn e_step_normalized(
    fixed: &[Geometry],
    moving: &[Geometry],
    lambda_sq: f64,
    w: f64,
    kernel: Option<&KernelParams>,
    unit: f64,
) -> Result<ProbabilityMap> {
    if !(unit > 0.0 && unit.is_finite()) {
        return Err(Error::invalid(format!("normalization unit must be positive, got {unit}")));
    }
    if !(lambda_sq > 0.0) {
        return Err(Error::VarianceCollapsed(lambda_sq));
    }
    if fixed.is_empty() || moving.is_empty() {
        return Err(Error::invalid("point sets must be non-empty"));
    }
    if !(0.0..1.0).contains(&w) {
        return Err(Error::invalid(format!("w must lie in [0, 1), got {w}")));
    }
    let (big_m, big_n) = (moving.len(), fixed.len());
    let eta = (2.0 * std::f64::consts::PI * lambda_sq / (unit * unit)).powf(1.5)
        * (w / (1.0 - w))
        * (big_m as f64 / big_n as f64);
    let columns: Vec<Vec<f64>> = fixed
        .par_iter()
        .map(|g_n| {
            // Log domain: the Gaussian term underflows long before the ratio is meaningless.
            let logs: Vec<f64> = moving
                .iter()
                .map(|g_m| {
                    let k = kernel.map_or(1.0, |p| crate::kernels::kernel_geometry(g_n, g_m, p));
                    -(g_n.x - g_m.x).norm_squared() / (2.0 * lambda_sq) + k.ln()
                })
                .collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if top == f64::NEG_INFINITY {
                return vec![0.0; big_m];
            }
            let scaled: Vec<f64> = logs.iter().map(|a| (a - top).exp()).collect();
            let background = if eta > 0.0 { eta * (-top).exp() } else { 0.0 };
            let denom = scaled.iter().sum::<f64>() + background;
            if !denom.is_finite() {
                return vec![0.0; big_m];
            }
            scaled.iter().map(|v| v / denom).collect()
        })
        .collect();
    let values = DMatrix::from_fn(big_m, big_n, |m, n| columns[n][m]);
    Ok(ProbabilityMap { values })
}

/// Closed-form weighted similarity fit of `moving` onto `fixed`, returning the transform
/// and the updated variance.
pub fn solve_rigid(fixed: &[Vec3], moving: &[Vec3], p: &ProbabilityMap) -> Result<(SimilarityTransform, f64)> {
    if p.moving_len() != moving.len() || p.fixed_len() != fixed.len() {
        return Err(Error::invalid(format!(
            "probability map is {}x{}, point sets are {}x{}",
            p.moving_len(),
            p.fixed_len(),
            moving.len(),
            fixed.len()
        )));
    }
    let pt1: Vec<f64> = p.column_sums();
    let p1: Vec<f64> = p.values.row_iter().map(|r| r.sum()).collect();
    let n_p: f64 = pt1.iter().sum();
    if !(n_p > 1e-12) {
        return Err(Error::DegenerateCorrespondence);
    }
    let mu_f = fixed.iter().zip(&pt1).fold(Vec3::zeros(), |acc, (x, w)| acc + *w * x) / n_p;
    let mu_m = moving.iter().zip(&p1).fold(Vec3::zeros(), |acc, (x, w)| acc + *w * x) / n_p;
    let f_hat: Vec<Vec3> = fixed.iter().map(|x| x - mu_f).collect();
    let m_hat: Vec<Vec3> = moving.iter().map(|x| x - mu_m).collect();

    // A = F̂ᵀ Pᵀ M̂
    let mut a = Mat3::zeros();
    for (m, mh) in m_hat.iter().enumerate() {
        for (n, fh) in f_hat.iter().enumerate() {
            let w = p.values[(m, n)];
            if w != 0.0 {
                a += w * fh * mh.transpose();
            }
        }
    }
    let svd = a.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    if !(s[order[0]] > 0.0) || s[order[1]] <= 1e-12 * s[order[0]] {
        return Err(Error::DegenerateGeometry);
    }
    let mut c = Vec3::new(1.0, 1.0, 1.0);
    c[order[2]] = (u * v_t).determinant().signum();
    let rotation = u * Mat3::from_diagonal(&c) * v_t;

    let tr_ar = (a.transpose() * rotation).trace();
    let denom: f64 = m_hat.iter().zip(&p1).map(|(x, w)| w * x.norm_squared()).sum();
    if !(denom > 0.0) {
        return Err(Error::DegenerateGeometry);
    }
    let scale = tr_ar / denom;
    if !(scale > 0.0) {
        return Err(Error::DegenerateGeometry);
    }
    let translation = mu_f - scale * (rotation * mu_m);
    let fixed_spread: f64 = f_hat.iter().zip(&pt1).map(|(x, w)| w * x.norm_squared()).sum();
    let lambda_sq = (fixed_spread - scale * tr_ar) / (3.0 * n_p);
    Ok((
        SimilarityTransform {
            rotation,
            scale,
            translation,
        },
        lambda_sq,
    ))
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub transform: SimilarityTransform,
    pub probability: ProbabilityMap,
    pub iterations: usize,
    pub lambda_sq_history: Vec<f64>,
    pub lambda_sq_init: f64,
    pub converged: bool,
}

fn positions(g: &[Geometry]) -> Vec<Vec3> {
    g.iter().map(|g| g.x).collect()
}

/// RMS distance of the points from their centroid, or 1 when they coincide.
pub fn normalization_unit(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let rms = (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt();
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

/// EM from `init` (moving-to-fixed). The kernel is re-evaluated each iteration on the
/// transformed moving geometries. The background weight is taken relative to
/// coordinates normalized by the fixed set's RMS radius, as in standard CPD.
pub fn run_em(
    fixed: &[Geometry],
    moving: &[Geometry],
    init: &SimilarityTransform,
    kernel: Option<&KernelParams>,
    cfg: &RegistrationConfig,
) -> Result<EmOutcome> {
    let fixed_x = positions(fixed);
    let moving_x = positions(moving);
    let unit = normalization_unit(&fixed_x);
    let mut t = *init;
    let moved: Vec<Vec3> = moving_x.iter().map(|x| t.apply(x)).collect();
    let lambda_sq_init = init_lambda_sq(&fixed_x, &moved)?;
    let mut lambda_sq = lambda_sq_init.max(cfg.lambda_sq_floor);
    let mut history = Vec::new();
    let mut probability = ProbabilityMap {
        values: DMatrix::zeros(moving.len(), fixed.len()),
    };
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        let moved: Vec<Geometry> = moving.iter().map(|g| t.apply_geometry(g)).collect();
        let p = e_step_normalized(fixed, &moved, lambda_sq, cfg.w, kernel, unit)?;
        let (t_new, l_new) = solve_rigid(&fixed_x, &moving_x, &p)?;
        t = t_new;
        probability = p;
        history.push(l_new);
        if l_new <= 0.0 {
            converged = true;
            break;
        }
        let l_new = l_new.max(cfg.lambda_sq_floor);
        let done = (l_new - lambda_sq).abs() < cfg.tolerance * lambda_sq_init;
        lambda_sq = l_new;
        if done {
            converged = true;
            break;
        }
    }
    Ok(EmOutcome {
        transform: t,
        probability,
        iterations: history.len(),
        lambda_sq_history: history,
        lambda_sq_init,
        converged,
    })
}

/// Nearest-neighbour ICP on locations with a closed-form similarity update. Stops early
/// once the pairing no longer changes, since every later iteration would repeat it.
pub fn run_icp(fixed: &[Vec3], moving: &[Vec3], init: &SimilarityTransform, iterations: usize) -> Result<EmOutcome> {
    let lambda_sq_init = init_lambda_sq(fixed, &moving.iter().map(|x| init.apply(x)).collect::<Vec<_>>())?;
    let mut t = *init;
    let mut history = Vec::new();
    let mut pairs: Vec<usize> = Vec::new();
    let mut probability = ProbabilityMap {
        values: DMatrix::zeros(moving.len(), fixed.len()),
    };
    let mut converged = false;
    for _ in 0..iterations {
        let next: Vec<usize> = moving
            .par_iter()
            .map(|x| {
                let y = t.apply(x);
                let mut best = (0usize, f64::INFINITY);
                for (n, f) in fixed.iter().enumerate() {
                    let d = (f - y).norm_squared();
                    if d < best.1 {
                        best = (n, d);
                    }
                }
                best.0
            })
            .collect();
        if next == pairs {
            converged = true;
            break;
        }
        pairs = next;
        probability = ProbabilityMap::from_pairs(&pairs, fixed.len());
        let (t_new, l_new) = solve_rigid(fixed, moving, &probability)?;
        t = t_new;
        history.push(l_new.max(0.0));
    }
    Ok(EmOutcome {
        transform: t,
        probability,
        iterations: history.len(),
        lambda_sq_history: history,
        lambda_sq_init,
        converged,
    })
}

/// Matches features, votes for an initial transform, and refines it with the
/// configured variant. All variants start from the Hough solution.
pub fn register(fixed: &[Feature], moving: &[Feature], cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let start = Instant::now();
    let matches = match_features(fixed, moving)?;
    let hough = hough_init(&matches, &cfg.hough)?;
    // Hough votes map fixed onto moving; registration maps moving onto fixed.
    let initial = hough.t_star.inverse();
    let fixed_g: Vec<Geometry> = fixed.iter().map(Feature::geometry).collect();
    let moving_g: Vec<Geometry> = moving.iter().map(Feature::geometry).collect();
    let outcome = match cfg.variant {
        Variant::Cpd => run_em(&fixed_g, &moving_g, &initial, None, cfg)?,
        Variant::SiftCpd => run_em(&fixed_g, &moving_g, &initial, Some(&cfg.kernel), cfg)?,
        Variant::SiftCpdStar => {
            let f: Vec<Geometry> = hough.inliers.iter().map(|m| m.fixed).collect();
            let m: Vec<Geometry> = hough
                .inliers
                .iter()
                .map(|m| moving[m.moving_index].geometry_state(m.moving_state as usize))
                .collect();
            run_em(&f, &m, &initial, Some(&cfg.kernel), cfg)?
        }
        Variant::Icp => run_icp(&positions(&fixed_g), &positions(&moving_g), &initial, cfg.max_iterations)?,
    };
    Ok(RegistrationResult {
        transform: outcome.transform,
        initial,
        probability: outcome.probability,
        iterations: outcome.iterations,
        lambda_sq_history: outcome.lambda_sq_history,
        lambda_sq_init: outcome.lambda_sq_init,
        converged: outcome.converged,
        match_count: matches.len(),
        hough,
        runtime: start.elapsed().as_secs_f64(),
    })
}
