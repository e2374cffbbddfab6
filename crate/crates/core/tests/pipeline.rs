mod common;

use std::path::Path;
use std::process::Command;

use common::rotation_angle_deg;
use sift3d::cpd::run_em;
use sift3d::eval::point_registration_error;
use sift3d::io::{read_transform, read_volume, write_volume, DataType};
use sift3d::phantom::{make_phantom, random_similarity};
use sift3d::{
    extract_features, register, ExtractionConfig, Feature, Geometry, RegistrationConfig, ScalarVolume,
    SimilarityTransform, Variant, Vec3,
};

const DIMS: [usize; 3] = [48, 48, 48];

fn small_phantom(seed: u64) -> ScalarVolume {
    make_phantom(seed, 24, DIMS, [1.0; 3]).unwrap()
}

fn probes() -> Vec<Vec3> {
    let mut out = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out.push(Vec3::new(i as f64 * 8.0 - 12.0, j as f64 * 8.0 - 12.0, k as f64 * 8.0 - 12.0));
            }
        }
    }
    out
}

fn features(vol: &ScalarVolume) -> Vec<Feature> {
    extract_features(vol, &ExtractionConfig::default()).unwrap()
}

#[test]
fn identical_sets_register_to_identity() {
    let f = features(&small_phantom(3));
    for variant in [Variant::Cpd, Variant::SiftCpd, Variant::SiftCpdStar] {
        let cfg = RegistrationConfig { variant, ..Default::default() };
        let res = register(&f, &f, &cfg).unwrap();
        let id = SimilarityTransform::identity();
        let pre = point_registration_error(&res.transform, &id, &probes()).unwrap();
        assert!(pre < 1e-6, "{variant:?}: PRE {pre}");
        assert!(res.converged, "{variant:?}");
        assert!((res.transform.scale - 1.0).abs() < 1e-8);
    }
}

#[test]
fn cpd_variant_is_plain_em_from_the_hough_start() {
    let fixed_vol = small_phantom(11);
    let truth = random_similarity(3, (10.0, 30.0), (0.0, 10.0)).unwrap();
    let fixed = features(&fixed_vol);
    let moving = features(&fixed_vol.resample(&truth).unwrap());
    let cfg = RegistrationConfig { variant: Variant::Cpd, ..Default::default() };
    let res = register(&fixed, &moving, &cfg).unwrap();
    let fg: Vec<Geometry> = fixed.iter().map(Feature::geometry).collect();
    let mg: Vec<Geometry> = moving.iter().map(Feature::geometry).collect();
    let em = run_em(&fg, &mg, &res.initial, None, &cfg).unwrap();
    assert_eq!(em.lambda_sq_history, res.lambda_sq_history);
    assert_eq!(em.transform, res.transform);
}

#[test]
fn result_does_not_depend_on_moving_frame() {
    // Re-expressing the moving features in another frame S must give T' with T' ∘ S = T.
    let fixed_vol = small_phantom(8);
    let truth = random_similarity(2, (10.0, 30.0), (0.0, 10.0)).unwrap();
    let fixed = features(&fixed_vol);
    let moving = features(&fixed_vol.resample(&truth).unwrap());
    let s = random_similarity(99, (15.0, 25.0), (3.0, 6.0)).unwrap();
    let fg: Vec<Geometry> = fixed.iter().map(Feature::geometry).collect();
    let mg: Vec<Geometry> = moving.iter().map(Feature::geometry).collect();
    let mg_s: Vec<Geometry> = mg.iter().map(|g| s.apply_geometry(g)).collect();

    let cfg = RegistrationConfig::default();
    let base = register(&fixed, &moving, &cfg).unwrap();
    let a = run_em(&fg, &mg, &base.initial, Some(&cfg.kernel), &cfg).unwrap();
    let init_s = base.initial.compose(&s.inverse());
    let b = run_em(&fg, &mg_s, &init_s, Some(&cfg.kernel), &cfg).unwrap();
    let composed = b.transform.compose(&s);
    let pre = point_registration_error(&a.transform, &composed, &probes()).unwrap();
    assert!(pre < 0.5, "PRE {pre}");
    assert!(rotation_angle_deg(&a.transform.rotation, &composed.rotation) < 0.5);
}

#[test]
fn negated_moving_volume_recovers_the_same_transform() {
    let fixed_vol = small_phantom(9);
    let truth = random_similarity(4, (10.0, 30.0), (0.0, 10.0)).unwrap();
    let moving_vol = fixed_vol.resample(&truth).unwrap();
    let fixed = features(&fixed_vol);
    let res = register(&fixed, &features(&moving_vol), &RegistrationConfig::default()).unwrap();
    let neg = register(&fixed, &features(&moving_vol.negated()), &RegistrationConfig::default()).unwrap();
    let expected = truth.inverse();
    let p = probes();
    assert!(point_registration_error(&res.transform, &expected, &p).unwrap() < 1.0);
    assert!(point_registration_error(&neg.transform, &expected, &p).unwrap() < 1.0);
}

fn run(bin: &str, args: &[&str]) -> String {
    let out = Command::new(bin).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {report}"))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn cli_end_to_end() {
    let bin = env!("CARGO_BIN_EXE_sift3d");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (fixed, moving) = (p(d, "fixed.meta"), p(d, "moving.meta"));
    let (truth, ff, mf, est) = (p(d, "truth.txt"), p(d, "fixed.spf"), p(d, "moving.spf"), p(d, "est.txt"));

    let out = run(bin, &["phantom", "--output", &fixed, "--seed", "6", "--blobs", "24", "--dims", "48", "48", "48"]);
    assert_eq!(value(&out, "command"), "phantom");
    run(
        bin,
        &["synth-transform", "--output", &p(d, "forward.txt"), "--seed", "3", "--volume", &fixed, "--volume-output", &moving, "--truth-output", &truth],
    );
    let out = run(bin, &["extract", "--input", &fixed, "--output", &ff]);
    assert!(value(&out, "features").parse::<usize>().unwrap() > 5);
    run(bin, &["extract", "--input", &moving, "--output", &mf]);
    let out = run(bin, &["register", "--fixed", &ff, "--moving", &mf, "--variant", "sift-cpd", "--output", &est]);
    assert_eq!(value(&out, "converged"), "true");
    let out = run(bin, &["evaluate", "--estimate", &est, "--truth", &truth, "--probe-features", &ff]);
    let pre: f64 = value(&out, "pre_mm").parse().unwrap();
    assert!(pre < 1.0, "PRE {pre}");

    // the written files agree with the library's view of them
    let t = read_transform(&est).unwrap();
    assert!((t.rotation * t.rotation.transpose() - sift3d::Mat3::identity()).amax() < 1e-9);
    assert_eq!(read_volume(&fixed, None).unwrap().dims(), DIMS);
}

#[test]
fn cli_reports_errors_with_nonzero_status() {
    let bin = env!("CARGO_BIN_EXE_sift3d");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .args(["extract", "--input", &p(dir.path(), "missing.meta"), "--output", &p(dir.path(), "x.spf")])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let vol = ScalarVolume::new([4, 4, 4], [1.0; 3], [0.0; 3], vec![0.0; 64]).unwrap();
    let meta = p(dir.path(), "flat.meta");
    write_volume(&meta, &vol, DataType::F32).unwrap();
    let bad = Command::new(bin)
        .args(["register", "--fixed", &meta, "--moving", &meta, "--output", &p(dir.path(), "t.txt")])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
