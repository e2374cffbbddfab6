//! End-to-end acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero when a result disagrees
//! with `KNOWN_FAILURES`.

mod common;

use std::time::Instant;

use rand::Rng;

use common::*;
use sift3d::cpd::{e_step, solve_rigid, ProbabilityMap, Variant};
use sift3d::descriptor::{build_scale_space, compute_descriptor};
use sift3d::eval::{grid_probes, point_registration_error, rotation_error_deg, state_histogram, translation_error};
use sift3d::kernels::{kernel_location, kernel_orientation, kernel_scale};
use sift3d::matching::{hough_init, transform_between, HoughThresholds, Match};
use sift3d::phantom::{make_phantom, occlude_sphere, random_similarity};
use sift3d::transform::ROTATION_TOLERANCE;
use sift3d::{
    register, Config, ExtractionConfig, Feature, Frame, Geometry, Keypoint, KernelParams, Mat3, RegistrationConfig,
    RegistrationResult, ScalarVolume, SimilarityTransform, Vec3,
};

const PHANTOM_SEED: u64 = 2024;
const NUM_BLOBS: usize = 40;
const DIMS: [usize; 3] = [64; 3];
const NUM_TRANSFORMS: u64 = 20;
const ROTATION_RANGE_DEG: (f64, f64) = (10.0, 30.0);
const TRANSLATION_RANGE_MM: (f64, f64) = (0.0, 10.0);
const SUITE_BUDGET_S: f64 = 300.0;
/// Criteria that currently fail on this phantom. They still print FAIL; the target only
/// errors if one of them starts passing (so the list gets updated) or another one fails.
const KNOWN_FAILURES: &[usize] = &[4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn max3(v: [f64; 3]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Registration truth for `moving = fixed.resample(t_gt)`.
struct Case {
    truth: SimilarityTransform,
    moving: Vec<Feature>,
    negated: Vec<Feature>,
    moving_volume: ScalarVolume,
}

struct Suite {
    fixed_volume: ScalarVolume,
    fixed: Vec<Feature>,
    cases: Vec<Case>,
    probes: Vec<Vec3>,
    build_s: f64,
}

fn build_suite() -> Suite {
    let start = Instant::now();
    let cfg = ExtractionConfig::default();
    let fixed_volume = make_phantom(PHANTOM_SEED, NUM_BLOBS, DIMS, [1.0; 3]).unwrap();
    let fixed = sift3d::extract_features(&fixed_volume, &cfg).unwrap();
    let cases = (0..NUM_TRANSFORMS)
        .map(|seed| {
            let t_gt = random_similarity(seed, ROTATION_RANGE_DEG, TRANSLATION_RANGE_MM).unwrap();
            let moving_volume = fixed_volume.resample(&t_gt).unwrap();
            let moving = sift3d::extract_features(&moving_volume, &cfg).unwrap();
            let negated = sift3d::extract_features(&moving_volume.negated(), &cfg).unwrap();
            Case {
                truth: t_gt.inverse(),
                moving,
                negated,
                moving_volume,
            }
        })
        .collect();
    let probes = grid_probes(&fixed_volume, 5);
    Suite {
        fixed_volume,
        fixed,
        cases,
        probes,
        build_s: start.elapsed().as_secs_f64(),
    }
}

fn config(variant: Variant) -> RegistrationConfig {
    RegistrationConfig {
        variant,
        ..Default::default()
    }
}

struct Runs {
    cpd: Vec<RegistrationResult>,
    sift_cpd: Vec<RegistrationResult>,
    star: Vec<RegistrationResult>,
    negated: Vec<RegistrationResult>,
    negated_star: Vec<RegistrationResult>,
    elapsed_s: f64,
}

fn run_all(suite: &Suite) -> Runs {
    let start = Instant::now();
    let run = |variant: Variant, negated: bool| -> Vec<RegistrationResult> {
        suite
            .cases
            .iter()
            .map(|c| {
                let moving = if negated { &c.negated } else { &c.moving };
                register(&suite.fixed, moving, &config(variant)).unwrap()
            })
            .collect()
    };
    let cpd = run(Variant::Cpd, false);
    let sift_cpd = run(Variant::SiftCpd, false);
    let star = run(Variant::SiftCpdStar, false);
    let negated = run(Variant::SiftCpd, true);
    let negated_star = run(Variant::SiftCpdStar, true);
    Runs {
        cpd,
        sift_cpd,
        star,
        negated,
        negated_star,
        elapsed_s: start.elapsed().as_secs_f64(),
    }
}

/// Worst per-axis rotation (deg) and translation (mm) error over the suite.
fn worst_errors(suite: &Suite, results: &[RegistrationResult]) -> (f64, f64) {
    suite.cases.iter().zip(results).fold((0.0, 0.0), |(r, t), (c, res)| {
        (
            r.max(max3(rotation_error_deg(&res.transform, &c.truth))),
            t.max(max3(translation_error(&res.transform, &c.truth))),
        )
    })
}

fn mean_pre(suite: &Suite, results: &[RegistrationResult]) -> f64 {
    let total: f64 = suite
        .cases
        .iter()
        .zip(results)
        .map(|(c, r)| point_registration_error(&r.transform, &c.truth, &suite.probes).unwrap())
        .sum();
    total / results.len() as f64
}

fn runtime(results: &[RegistrationResult]) -> f64 {
    results.iter().map(|r| r.runtime).sum()
}

fn criterion_1(suite: &Suite, runs: &Runs) -> Outcome {
    let (sr, st) = worst_errors(suite, &runs.sift_cpd);
    let (xr, xt) = worst_errors(suite, &runs.star);
    let (cr, ct) = worst_errors(suite, &runs.cpd);
    let lambda_ok = [&runs.cpd, &runs.sift_cpd, &runs.star]
        .iter()
        .flat_map(|v| v.iter())
        .all(|r| r.lambda_sq_history.last().map_or(true, |&l| l <= r.lambda_sq_init));
    let total_s = suite.build_s + runs.elapsed_s;
    let pass = sr < 0.5 && st < 1.0 && xr < 0.5 && xt < 1.0 && cr < 1.0 && ct < 2.0 && lambda_ok && total_s < SUITE_BUDGET_S;
    outcome(
        pass,
        format!(
            "worst deg/mm: sift-cpd {sr:.3}/{st:.3}, sift-cpd-star {xr:.3}/{xt:.3}, cpd {cr:.3}/{ct:.3}; \
             final lambda^2 <= initial on all runs: {lambda_ok}; suite {total_s:.1}s ({} fixed features)",
            suite.fixed.len()
        ),
    )
}

fn criterion_2(suite: &Suite, runs: &Runs) -> Outcome {
    let (p_star, p_sift, p_cpd) = (mean_pre(suite, &runs.star), mean_pre(suite, &runs.sift_cpd), mean_pre(suite, &runs.cpd));
    let (t_star, t_cpd) = (runtime(&runs.star), runtime(&runs.cpd));
    outcome(
        p_star <= p_sift && p_sift <= p_cpd && t_star < t_cpd,
        format!(
            "mean PRE mm: sift-cpd-star {p_star:.4}, sift-cpd {p_sift:.4}, cpd {p_cpd:.4}; \
             runtime s: sift-cpd-star {t_star:.4}, cpd {t_cpd:.4}"
        ),
    )
}

fn criterion_3(suite: &Suite, runs: &Runs) -> Outcome {
    let (nr, nt) = worst_errors(suite, &runs.negated);
    let (sr, st) = worst_errors(suite, &runs.negated_star);
    let inliers = |v: &[RegistrationResult]| v.iter().map(|r| r.hough.vote_count).sum::<usize>();
    let (plain, inverted) = (inliers(&runs.sift_cpd), inliers(&runs.negated));

    // descriptor identity on random keypoints and frames
    let cfg = ExtractionConfig::default();
    let ss = build_scale_space(&suite.fixed_volume, &cfg).unwrap();
    let ss_neg = build_scale_space(&suite.fixed_volume.negated(), &cfg).unwrap();
    let (lo_sigma, hi_sigma) = ss.sigma_range();
    let mut r = rng(31);
    let mut identical = 0;
    for _ in 0..100 {
        let sign: i8 = if r.gen::<bool>() { 1 } else { -1 };
        let kp = Keypoint {
            x: random_point(&mut r, 20.0),
            sigma: r.gen_range(lo_sigma..hi_sigma),
            sign,
            response: 1.0,
            border: false,
        };
        let frame = random_frame(&mut r);
        let neg_kp = Keypoint { sign: -sign, ..kp };
        let a = compute_descriptor(&ss, &kp, &frame).unwrap();
        let b = compute_descriptor(&ss_neg, &neg_kp, &frame).unwrap();
        if a.bins.iter().zip(&b.bins).all(|(x, y)| x.to_bits() == y.to_bits()) && a.ranked == b.ranked {
            identical += 1;
        }
    }
    let pass = nr < 0.5 && nt < 1.0 && sr < 0.5 && st < 1.0 && inverted as f64 >= 0.8 * plain as f64 && identical == 100;
    outcome(
        pass,
        format!(
            "negated worst deg/mm: sift-cpd {nr:.3}/{nt:.3}, sift-cpd-star {sr:.3}/{st:.3}; \
             inliers {inverted} vs {plain} non-inverted ({:.0}%); bit-identical descriptors {identical}/100",
            100.0 * inverted as f64 / plain.max(1) as f64
        ),
    )
}

fn criterion_4(suite: &Suite) -> Outcome {
    let cfg = ExtractionConfig::default();
    let mut worst = (0.0f64, 0.0f64);
    let mut failures = 0;
    for (i, c) in suite.cases.iter().enumerate() {
        let occluded = occlude_sphere(&c.moving_volume, 500 + i as u64, 0.25).unwrap();
        let moving = sift3d::extract_features(&occluded, &cfg).unwrap();
        match register(&suite.fixed, &moving, &config(Variant::SiftCpd)) {
            Ok(res) => {
                let re = max3(rotation_error_deg(&res.transform, &c.truth));
                let te = max3(translation_error(&res.transform, &c.truth));
                worst = (worst.0.max(re), worst.1.max(te));
                if re >= 1.0 || te >= 2.0 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        failures == 0,
        format!(
            "{}/{} occluded registrations within 1 deg / 2 mm; worst {:.3} deg / {:.3} mm",
            suite.cases.len() - failures,
            suite.cases.len(),
            worst.0,
            worst.1
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut r = rng(51);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (fixed, moving, w) = weighted_instance(&mut r);
        let p = ProbabilityMap {
            values: nalgebra::DMatrix::from_fn(w.len(), w[0].len(), |m, n| w[m][n]),
        };
        let (t, _) = solve_rigid(&fixed, &moving, &p).unwrap();
        let (ro, bo, to, _) = horn_similarity(&fixed, &moving, &w);
        worst = worst
            .max((t.rotation - ro).amax())
            .max((t.scale - bo).abs())
            .max((t.translation - to).amax());
    }
    let mut proper = 0;
    let reflect = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
    for _ in 0..100 {
        let fixed: Vec<Vec3> = (0..8).map(|_| random_point(&mut r, 20.0)).collect();
        let moving: Vec<Vec3> = fixed.iter().map(|x| reflect * x).collect();
        let p = ProbabilityMap::from_pairs(&(0..8).collect::<Vec<_>>(), 8);
        if let Ok((t, _)) = solve_rigid(&fixed, &moving, &p) {
            let m = t.rotation;
            if (m * m.transpose() - Mat3::identity()).amax() < 1e-9 && (m.determinant() - 1.0).abs() < 1e-9 {
                proper += 1;
            }
        }
    }
    outcome(
        worst < 1e-9 && proper == 100,
        format!("max deviation from Horn oracle {worst:.2e} over 1000 instances; proper rotations {proper}/100 reflected"),
    )
}

fn criterion_6() -> Outcome {
    let mut r = rng(61);
    let kp = KernelParams::default();
    let mut worst = 0.0f64;
    let mut max_sum = 0.0f64;
    let mut w0_dev = 0.0f64;
    for case in 0..100 {
        let fixed: Vec<Geometry> = (0..5).map(|_| random_geometry(&mut r, 10.0)).collect();
        let moving: Vec<Geometry> = (0..7).map(|_| random_geometry(&mut r, 10.0)).collect();
        let l2 = r.gen_range(5.0..80.0);
        let w = if case % 4 == 0 { 0.0 } else { r.gen_range(0.01..0.5) };
        let p = e_step(&fixed, &moving, l2, w, Some(&kp)).unwrap();
        let oracle = scalar_posterior(&fixed, &moving, l2, w, Some((kp.k, kp.sigma_t_sq, kp.use_orientation_states)));
        for m in 0..7 {
            for n in 0..5 {
                worst = worst.max((p.get(m, n) - oracle[m][n]).abs());
            }
        }
        for s in p.column_sums() {
            max_sum = max_sum.max(s);
            if w == 0.0 {
                w0_dev = w0_dev.max((s - 1.0).abs());
            }
        }
    }
    outcome(
        worst < 1e-12 && max_sum <= 1.0 + 1e-12 && w0_dev < 1e-12,
        format!("max |p - oracle| {worst:.2e}; max column sum {max_sum:.15}; w=0 column-sum deviation {w0_dev:.2e}"),
    )
}

fn criterion_7() -> Outcome {
    let sigma = 1.7;
    let ks = kernel_scale(2.0 * sigma, sigma).unwrap();
    let ks_ok = (ks - (-(2f64.ln()).powi(2)).exp()).abs() < 1e-15;
    let flip = Frame::from_matrix_unchecked(Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)));
    let anti = Frame::from_matrix_unchecked(Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, -1.0)));
    // a proper rotation cannot anti-align all three axes; the kernel formula itself is checked
    let ko = kernel_orientation(&Frame::identity(), &anti);
    let ko_ok = (ko - (-6.0f64).exp()).abs() < 1e-15 && kernel_orientation(&Frame::identity(), &flip) > 0.0;
    let cfg = Config::from_toml_str("").unwrap();
    let p = cfg.registration_config().kernel;
    let (sn, sm) = (1.5, 2.5);
    let d = (p.k * sn * sm + p.sigma_t_sq).sqrt();
    let kx = kernel_location(&Vec3::zeros(), &Vec3::new(d, 0.0, 0.0), sn, sm, &p);
    let kx_ok = (kx - (-1.0f64).exp()).abs() < 1e-12;
    let explicit = Config::from_toml_str("[kernel]\nk = 12.0\nsigma_t_sq = 200.0\n").unwrap();
    let defaults_ok = p.k == 12.0 && p.sigma_t_sq == 200.0 && explicit.kernel == cfg.kernel;
    outcome(
        ks_ok && ko_ok && kx_ok && defaults_ok,
        format!(
            "K_sigma(2s,s) {ks:.15} ({ks_ok}); K_theta anti-aligned {ko:.6e} ({ko_ok}); K_x at threshold {kx:.15} ({kx_ok}); \
             config defaults k={} sigma_t^2={} ({defaults_ok})",
            p.k, p.sigma_t_sq
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut r = rng(81);
    let planted = SimilarityTransform::new(
        sift3d::transform::rotation_from_euler(0.3, -0.2, 0.4),
        1.0,
        Vec3::new(6.0, -4.0, 3.0),
    )
    .unwrap();
    let mut matches = Vec::new();
    let make = |i: usize, f: Geometry, m: Geometry| Match {
        fixed_index: i,
        moving_index: i,
        moving_state: 0,
        descriptor_distance: 0.0,
        fixed: f,
        t_nm: transform_between(&f, &m),
    };
    for i in 0..30 {
        let f = random_geometry(&mut r, 25.0);
        let mut m = planted.apply_geometry(&f);
        m.x += random_point(&mut r, 0.3);
        let jitter = sift3d::transform::rotation_from_euler(
            r.gen_range(-0.02..0.02),
            r.gen_range(-0.02..0.02),
            r.gen_range(-0.02..0.02),
        );
        m.frame = Frame::from_matrix_unchecked(jitter * m.frame.matrix());
        m.sigma *= r.gen_range(0.97..1.03);
        matches.push(make(i, f, m));
    }
    for i in 30..100 {
        let f = random_geometry(&mut r, 25.0);
        let m = random_geometry(&mut r, 25.0);
        matches.push(make(i, f, m));
    }
    let th = HoughThresholds::default();
    match hough_init(&matches, &th) {
        Ok(h) => {
            let rot = angle_between(&h.t_star.rotation, &planted.rotation);
            let shift = max3(translation_error(&h.t_star, &planted));
            let planted_inliers = h.inliers.iter().filter(|m| m.fixed_index < 30).count();
            outcome(
                rot < 2.0 && shift < 2.0 && planted_inliers >= 25,
                format!(
                    "rotation error {rot:.3} deg, translation error {shift:.3} mm, planted inliers {planted_inliers}/30 \
                     ({} total inliers)",
                    h.vote_count
                ),
            )
        }
        Err(e) => outcome(false, format!("Hough initialization failed: {e}")),
    }
}

fn angle_between(a: &Mat3, b: &Mat3) -> f64 {
    rotation_angle_deg(a, b)
}

fn criterion_9(runs: &Runs) -> Outcome {
    let sum = |results: &[RegistrationResult]| {
        let mut h = [[0u64; 4]; 4];
        for r in results {
            let part = state_histogram(&r.hough.inliers);
            for i in 0..4 {
                for j in 0..4 {
                    h[i][j] += part[i][j];
                }
            }
        }
        h
    };
    let selfh = sum(&runs.sift_cpd);
    let total: u64 = selfh.iter().flatten().sum();
    let identity_share = selfh[0][0] as f64 / total.max(1) as f64;
    let negh = sum(&runs.negated);
    let off = [negh[0][1], negh[0][2], negh[0][3]];
    let parity_plurality = off[2] > off[0] && off[2] > off[1];
    outcome(
        identity_share >= 0.9 && parity_plurality,
        format!(
            "self-registration 0->0 share {:.1}% of {total}; negated off-identity transitions 0->1 {}, 0->2 {}, 0->3 {}",
            100.0 * identity_share,
            off[0],
            off[1],
            off[2]
        ),
    )
}

fn criterion_10(suite: &Suite) -> Outcome {
    let all = suite
        .fixed
        .iter()
        .chain(suite.cases.iter().flat_map(|c| c.moving.iter().chain(c.negated.iter())));
    let (mut total, mut valid, mut states_ok) = (0, 0, 0);
    for f in all {
        total += 1;
        if f.frame.validate(ROTATION_TOLERANCE).is_ok() {
            valid += 1;
        }
        if (0..4).all(|k| (f.frame.state(k).matrix().determinant() - 1.0).abs() < 1e-9) {
            states_ok += 1;
        }
    }
    outcome(
        valid == total && states_ok == total,
        format!("{valid}/{total} frames pass SO(3) checks at 1e-9; {states_ok}/{total} have four det=+1 states"),
    )
}

fn main() {
    let start = Instant::now();
    let suite = build_suite();
    let runs = run_all(&suite);
    let results = [
        ("synthetic same-volume registration", criterion_1(&suite, &runs)),
        ("PRE and runtime ordering", criterion_2(&suite, &runs)),
        ("contrast-inversion invariance", criterion_3(&suite, &runs)),
        ("occlusion robustness", criterion_4(&suite)),
        ("solve_rigid oracle equivalence", criterion_5()),
        ("e_step oracle equivalence", criterion_6()),
        ("kernel unit values", criterion_7()),
        ("Hough robustness", criterion_8()),
        ("orientation-state transitions", criterion_9(&runs)),
        ("frame invariants", criterion_10(&suite)),
    ];
    let mut failed = 0;
    let mut unexpected = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        let known = KNOWN_FAILURES.contains(&(i + 1));
        if !o.pass {
            failed += 1;
        }
        if o.pass == known {
            unexpected += 1;
        }
        let status = match (o.pass, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (listed as known failure)",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {:2} {status}: {name} ({})", i + 1, o.detail);
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if unexpected > 0 {
        std::process::exit(1);
    }
}
