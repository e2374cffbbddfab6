//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{Matrix4, SymmetricEigen, UnitQuaternion, Quaternion};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use sift3d::{Frame, Geometry, Mat3, SimilarityTransform, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_point(rng: &mut ChaCha8Rng, half: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-half..half))
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    // normalized Gaussian 4-vector, drawn with Box-Muller pairs
    let mut g = || {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let q = Quaternion::new(g(), g(), g(), g());
    *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

pub fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    Frame::from_matrix_unchecked(random_rotation(rng))
}

pub fn random_geometry(rng: &mut ChaCha8Rng, half: f64) -> Geometry {
    Geometry {
        x: random_point(rng, half),
        sigma: rng.gen_range(1.0..6.0),
        frame: random_frame(rng),
    }
}

/// Weighted absolute orientation by Horn's quaternion method: pairs `(fixed[n], moving[m])`
/// with weight `w[m][n]`. Returns `(R, b, t, λ²)` minimising `Σ w ‖fₙ − (bRmₘ + t)‖²`.
pub fn horn_similarity(fixed: &[Vec3], moving: &[Vec3], w: &[Vec<f64>]) -> (Mat3, f64, Vec3, f64) {
    let mut total = 0.0;
    let mut cf = Vec3::zeros();
    let mut cm = Vec3::zeros();
    for (m, row) in w.iter().enumerate() {
        for (n, &p) in row.iter().enumerate() {
            total += p;
            cf += p * fixed[n];
            cm += p * moving[m];
        }
    }
    cf /= total;
    cm /= total;
    let mut s = Mat3::zeros();
    let mut mm = 0.0;
    let mut ff = 0.0;
    for (m, row) in w.iter().enumerate() {
        for (n, &p) in row.iter().enumerate() {
            let a = moving[m] - cm;
            let b = fixed[n] - cf;
            s += p * a * b.transpose();
            mm += p * a.norm_squared();
            ff += p * b.norm_squared();
        }
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let best = (0..4).max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])).unwrap();
    let q = eig.eigenvectors.column(best);
    let r = *UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .matrix();
    let mut corr = 0.0;
    for (m, row) in w.iter().enumerate() {
        for (n, &p) in row.iter().enumerate() {
            corr += p * (fixed[n] - cf).dot(&(r * (moving[m] - cm)));
        }
    }
    let b = corr / mm;
    let t = cf - b * r * cm;
    let lambda_sq = (ff - b * corr) / (3.0 * total);
    (r, b, t, lambda_sq)
}

/// Noisy planted similarity with a permutation-weighted probability map plus a small
/// dense background.
pub fn weighted_instance(r: &mut ChaCha8Rng) -> (Vec<Vec3>, Vec<Vec3>, Vec<Vec<f64>>) {
    let n = r.gen_range(4..10);
    let t = SimilarityTransform::new(random_rotation(r), r.gen_range(0.7..1.4), random_point(r, 10.0)).unwrap();
    let moving: Vec<Vec3> = (0..n).map(|_| random_point(r, 25.0)).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, r.gen_range(0..=i));
    }
    let fixed: Vec<Vec3> = (0..n).map(|i| t.apply(&moving[perm[i]]) + random_point(r, 0.5)).collect();
    let mut w = vec![vec![0.0; n]; n];
    for (i, &m) in perm.iter().enumerate() {
        for (j, v) in w[m].iter_mut().enumerate() {
            *v = if j == i { r.gen_range(0.5..1.0) } else { r.gen_range(0.0..0.02) };
        }
    }
    (fixed, moving, w)
}

/// Kernel between two geometries written out term by term.
pub fn scalar_kernel(gn: &Geometry, gm: &Geometry, k: f64, sigma_t_sq: f64, states: bool) -> f64 {
    let ks = (-(gn.sigma.ln() - gm.sigma.ln()).powi(2)).exp();
    let fnm = gn.frame.matrix();
    let fmm = gm.frame.matrix();
    let cos = |i: usize, a: Vec3| (0..3).map(|r| fnm[(r, i)] * a[r]).sum::<f64>();
    let (a1, a2) = (fmm.column(0).into_owned(), fmm.column(1).into_owned());
    let mut best = f64::NEG_INFINITY;
    let signs: &[(f64, f64)] = if states { &[(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] } else { &[(1.0, 1.0)] };
    for &(s1, s2) in signs {
        let b1 = a1 * s1;
        let b2 = a2 * s2;
        let b3 = b1.cross(&b2);
        best = best.max(cos(0, b1) + cos(1, b2) + cos(2, b3));
    }
    let ko = (best - 3.0).exp();
    let d2 = (gn.x - gm.x).norm_squared();
    let kx = (-d2 / (k * gn.sigma * gm.sigma + sigma_t_sq)).exp();
    ks * ko * kx
}

/// Posterior `p[m][n]` evaluated directly from its closed form with no log-domain tricks.
pub fn scalar_posterior(
    fixed: &[Geometry],
    moving: &[Geometry],
    lambda_sq: f64,
    w: f64,
    kernel: Option<(f64, f64, bool)>,
) -> Vec<Vec<f64>> {
    let (mm, nn) = (moving.len() as f64, fixed.len() as f64);
    let eta = (2.0 * std::f64::consts::PI * lambda_sq).powf(1.5) * w / (1.0 - w) * mm / nn;
    let num = |n: usize, m: usize| {
        let g = (-(fixed[n].x - moving[m].x).norm_squared() / (2.0 * lambda_sq)).exp();
        let k = kernel.map_or(1.0, |(k, s, st)| scalar_kernel(&fixed[n], &moving[m], k, s, st));
        g * k
    };
    let mut p = vec![vec![0.0; fixed.len()]; moving.len()];
    for n in 0..fixed.len() {
        let mut denom = eta;
        for m in 0..moving.len() {
            denom += num(n, m);
        }
        for m in 0..moving.len() {
            p[m][n] = num(n, m) / denom;
        }
    }
    p
}

/// Angle of the relative rotation in degrees.
pub fn rotation_angle_deg(a: &Mat3, b: &Mat3) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos().to_degrees()
}
