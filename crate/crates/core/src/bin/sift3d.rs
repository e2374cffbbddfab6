//! Command-line front end. Every command prints a `key=value` report on stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sift3d::cpd::{register, RegistrationResult, Variant};
use sift3d::descriptor::extract_with_stats;
use sift3d::eval::{evaluate, grid_probes, state_histogram, state_histogram_symmetric, StateHistogram};
use sift3d::io::features::FeatureFile;
use sift3d::io::{read_features, read_transform, read_volume, write_features, write_transform, write_volume, DataType, VolumeFormat};
use sift3d::matching::{hough_init, match_features};
use sift3d::phantom::{make_phantom, random_similarity};
use sift3d::{Config, OrientationEstimator, Result, SimilarityTransform};

#[derive(Parser)]
#[command(name = "sift3d", version, about = "3D scale-invariant features and feature-based volume registration")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect keypoints and write their descriptors to a feature file.
    Extract(ExtractArgs),
    /// Match two feature files and run Hough voting.
    Match(MatchArgs),
    /// Register a moving feature set onto a fixed one.
    Register(RegisterArgs),
    /// Compare an estimated transform to ground truth.
    Evaluate(EvaluateArgs),
    /// Write a seeded Gaussian-blob phantom volume.
    Phantom(PhantomArgs),
    /// Draw a seeded random similarity transform, optionally resampling a volume with it.
    SynthTransform(SynthArgs),
    /// Orientation-state transition histogram of the Hough inliers.
    States(StatesArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML config; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Config::from_file(p),
            None => Ok(Config::default()),
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: Option<VolumeFormat>,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_enum)]
    estimator: Option<OrientationEstimator>,
    #[arg(long)]
    base_sigma: Option<f64>,
    #[arg(long)]
    num_octaves: Option<usize>,
    #[arg(long)]
    min_abs_response: Option<f64>,
    #[arg(long)]
    max_count: Option<usize>,
    #[arg(long)]
    window_factor: Option<f64>,
    /// Drop keypoints whose support leaves the volume.
    #[arg(long)]
    drop_border: bool,
    /// Also report elapsed seconds (makes output run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct HoughFlags {
    #[arg(long)]
    eps_cos_theta: Option<f64>,
    #[arg(long)]
    eps_log_sigma: Option<f64>,
    #[arg(long)]
    eps_x_over_sigma: Option<f64>,
}

impl HoughFlags {
    fn apply(&self, cfg: &mut Config) {
        set(&mut cfg.hough.eps_cos_theta, self.eps_cos_theta);
        set(&mut cfg.hough.eps_log_sigma, self.eps_log_sigma);
        set(&mut cfg.hough.eps_x_over_sigma, self.eps_x_over_sigma);
    }
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    hough: HoughFlags,
    /// CSV with one row per match.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliVariant {
    Icp20,
    Icp100,
    Cpd,
    SiftCpd,
    SiftCpdStar,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[arg(long, value_enum)]
    variant: Option<CliVariant>,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    hough: HoughFlags,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    sigma_t_sq: Option<f64>,
    /// Compare frames directly instead of taking the best of the four states.
    #[arg(long)]
    no_orientation_states: bool,
    /// Write the moving-to-fixed transform here.
    #[arg(long)]
    output: Option<PathBuf>,
    /// CSV of λ² per iteration.
    #[arg(long)]
    history: Option<PathBuf>,
    /// CSV dump of the final correspondence probabilities.
    #[arg(long)]
    probabilities: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated moving-to-fixed transform.
    #[arg(long)]
    estimate: PathBuf,
    /// Ground-truth moving-to-fixed transform.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    fixed_volume: Option<PathBuf>,
    #[arg(long)]
    moving_volume: Option<PathBuf>,
    /// Use these feature locations as probes instead of a grid.
    #[arg(long)]
    probe_features: Option<PathBuf>,
    /// Grid probes per axis.
    #[arg(long, default_value_t = 5)]
    grid: usize,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    blobs: usize,
    #[arg(long, num_args = 3, default_values_t = [64usize, 64, 64])]
    dims: Vec<usize>,
    #[arg(long, num_args = 3, default_values_t = [1.0f64, 1.0, 1.0])]
    spacing: Vec<f64>,
    #[arg(long, value_enum, default_value_t = DataType::F32)]
    dtype: DataType,
    /// Write the intensity-negated phantom.
    #[arg(long)]
    negate: bool,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct SynthArgs {
    /// Volume-to-volume transform (applied to the input volume).
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, num_args = 2, default_values_t = [10.0f64, 30.0])]
    rotation_deg: Vec<f64>,
    #[arg(long, num_args = 2, default_values_t = [0.0f64, 10.0])]
    translation_mm: Vec<f64>,
    /// Resample this volume with the transform.
    #[arg(long, requires = "volume_output")]
    volume: Option<PathBuf>,
    #[arg(long)]
    volume_output: Option<PathBuf>,
    /// Negate intensities of the resampled volume.
    #[arg(long)]
    negate: bool,
    /// Also write the registration ground truth (the inverse, moving-to-fixed).
    #[arg(long)]
    truth_output: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct StatesArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    hough: HoughFlags,
    /// Also run moving→fixed and fill column 0.
    #[arg(long)]
    symmetric: bool,
    /// CSV of the 4×4 histogram.
    #[arg(long)]
    table: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Fixed-order `key=value` lines.
#[derive(Default)]
struct Report(String);

impl Report {
    fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key}={value}");
    }

    fn vec(&mut self, key: &str, values: &[f64]) {
        let s: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.put(key, s.join(" "));
    }

    fn transform(&mut self, prefix: &str, t: &SimilarityTransform) {
        let r: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| t.rotation[(i, j)]).collect();
        self.vec(&format!("{prefix}rotation"), &r);
        self.put(&format!("{prefix}scale"), t.scale);
        self.vec(&format!("{prefix}translation"), t.translation.as_slice());
    }

    fn histogram(&mut self, h: &StateHistogram) {
        for (i, row) in h.iter().enumerate() {
            let s: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            self.put(&format!("states_row{i}"), s.join(" "));
        }
    }
}

fn source_id(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run_extract(a: &ExtractArgs) -> Result<Report> {
    let mut cfg = a.config.load()?;
    let e = &mut cfg.extraction;
    set(&mut e.estimator, a.estimator);
    set(&mut e.base_sigma, a.base_sigma);
    if a.num_octaves.is_some() {
        e.num_octaves = a.num_octaves;
    }
    set(&mut e.min_abs_response, a.min_abs_response);
    set(&mut e.max_count, a.max_count);
    set(&mut e.window_factor, a.window_factor);
    if a.drop_border {
        e.drop_border = true;
    }
    let start = Instant::now();
    let vol = read_volume(&a.input, a.format)?;
    let (features, stats) = extract_with_stats(&vol, &cfg.extraction)?;
    let file = FeatureFile::new(&source_id(&a.input), &cfg.extraction, features);
    write_features(&a.output, &file)?;
    let mut r = Report::default();
    r.put("command", "extract");
    r.put("source", &file.header.source_id);
    r.put("estimator", &file.header.estimator);
    r.put("config_digest", &file.header.config_digest);
    r.put("keypoints", stats.keypoints);
    r.put("features", stats.features);
    r.put("dropped_frames", stats.dropped_frames);
    r.put("dropped_border", stats.dropped_border);
    r.put("border_features", file.features.iter().filter(|f| f.border()).count());
    if a.timing {
        r.put("runtime_s", start.elapsed().as_secs_f64());
    }
    Ok(r)
}

fn run_match(a: &MatchArgs) -> Result<Report> {
    let mut cfg = a.config.load()?;
    a.hough.apply(&mut cfg);
    let fixed = read_features(&a.fixed)?.features;
    let moving = read_features(&a.moving)?.features;
    let matches = match_features(&fixed, &moving)?;
    let hough = hough_init(&matches, &cfg.hough);
    let mut r = Report::default();
    r.put("command", "match");
    r.put("fixed_features", fixed.len());
    r.put("moving_features", moving.len());
    r.put("matches", matches.len());
    match &hough {
        Ok(h) => {
            r.put("hough", "ok");
            r.put("inliers", h.vote_count);
            r.transform("t_star_", &h.t_star);
        }
        Err(e) => {
            r.put("hough", "failed");
            r.put("hough_error", e);
        }
    }
    if let Some(path) = &a.table {
        let mut csv = String::from("fixed_index,moving_index,moving_state,descriptor_distance,inlier\n");
        let inliers: Vec<usize> = hough.as_ref().map(|h| h.inliers.iter().map(|m| m.fixed_index).collect()).unwrap_or_default();
        for m in &matches {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                m.fixed_index,
                m.moving_index,
                m.moving_state,
                m.descriptor_distance,
                inliers.contains(&m.fixed_index) as u8
            );
        }
        std::fs::write(path, csv)?;
    }
    Ok(r)
}

fn run_register(a: &RegisterArgs) -> Result<Report> {
    let mut cfg = a.config.load()?;
    a.hough.apply(&mut cfg);
    set(&mut cfg.registration.w, a.w);
    set(&mut cfg.registration.max_iterations, a.max_iterations);
    set(&mut cfg.registration.tolerance, a.tolerance);
    set(&mut cfg.kernel.k, a.k);
    set(&mut cfg.kernel.sigma_t_sq, a.sigma_t_sq);
    if a.no_orientation_states {
        cfg.kernel.use_orientation_states = false;
    }
    let (variant, icp_iterations) = match a.variant {
        Some(CliVariant::Icp20) => (Variant::Icp, Some(20)),
        Some(CliVariant::Icp100) => (Variant::Icp, Some(100)),
        Some(CliVariant::Cpd) => (Variant::Cpd, None),
        Some(CliVariant::SiftCpd) => (Variant::SiftCpd, None),
        Some(CliVariant::SiftCpdStar) => (Variant::SiftCpdStar, None),
        None => (cfg.registration.variant, None),
    };
    cfg.registration.variant = variant;
    if a.max_iterations.is_none() {
        set(&mut cfg.registration.max_iterations, icp_iterations);
    }
    cfg.validate()?;
    let rc = cfg.registration_config();
    let fixed = read_features(&a.fixed)?.features;
    let moving = read_features(&a.moving)?.features;
    let res = register(&fixed, &moving, &rc)?;
    if let Some(p) = &a.output {
        write_transform(p, &res.transform)?;
    }
    if let Some(p) = &a.history {
        let mut csv = String::from("iteration,lambda_sq\n");
        for (i, l) in res.lambda_sq_history.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", i + 1, l);
        }
        std::fs::write(p, csv)?;
    }
    if let Some(p) = &a.probabilities {
        let mut csv = String::from("moving_index,fixed_index,p\n");
        let v = &res.probability.values;
        for m in 0..v.nrows() {
            for n in 0..v.ncols() {
                if v[(m, n)] > 0.0 {
                    let _ = writeln!(csv, "{m},{n},{}", v[(m, n)]);
                }
            }
        }
        std::fs::write(p, csv)?;
    }
    Ok(register_report(&res, variant, rc.max_iterations, a.timing))
}

fn register_report(res: &RegistrationResult, variant: Variant, max_iterations: usize, timing: bool) -> Report {
    let mut r = Report::default();
    r.put("command", "register");
    r.put("variant", variant.name());
    r.put("max_iterations", max_iterations);
    r.put("matches", res.match_count);
    r.put("inliers", res.hough.vote_count);
    r.put("iterations", res.iterations);
    r.put("converged", res.converged);
    r.put("lambda_sq_init", res.lambda_sq_init);
    r.put("lambda_sq_final", res.lambda_sq_history.last().copied().unwrap_or(res.lambda_sq_init));
    r.transform("", &res.transform);
    r.transform("initial_", &res.initial);
    r.histogram(&state_histogram(&res.hough.inliers));
    if timing {
        r.put("runtime_s", res.runtime);
    }
    r
}

fn run_evaluate(a: &EvaluateArgs) -> Result<Report> {
    let start = Instant::now();
    let est = read_transform(&a.estimate)?;
    let truth = read_transform(&a.truth)?;
    let fixed = a.fixed_volume.as_ref().map(|p| read_volume(p, None)).transpose()?;
    let moving = a.moving_volume.as_ref().map(|p| read_volume(p, None)).transpose()?;
    let (probes, source) = if let Some(p) = &a.probe_features {
        (read_features(p)?.features.iter().map(|f| f.keypoint.x).collect(), "features")
    } else if let Some(f) = &fixed {
        (grid_probes(f, a.grid), "grid")
    } else {
        return Err(sift3d::Error::InvalidInput(
            "evaluate needs --probe-features or --fixed-volume for probe points".into(),
        ));
    };
    let volumes = match (&fixed, &moving) {
        (Some(f), Some(m)) => Some((f, m)),
        _ => None,
    };
    let rep = evaluate(&est, &truth, &probes, volumes)?;
    let mut r = Report::default();
    r.put("command", "evaluate");
    r.put("probes", probes.len());
    r.put("probe_source", source);
    r.put("pre_mm", rep.pre);
    r.vec("rotation_error_deg", &rep.rotation_error_deg);
    r.vec("translation_error_mm", &rep.translation_error);
    if let Some(s) = rep.ssd {
        r.put("ssd", s);
        r.put("overlap_voxels", rep.overlap_voxels);
    }
    if a.timing {
        r.put("runtime_s", start.elapsed().as_secs_f64());
    }
    Ok(r)
}

fn run_phantom(a: &PhantomArgs) -> Result<Report> {
    let dims = [a.dims[0], a.dims[1], a.dims[2]];
    let spacing = [a.spacing[0], a.spacing[1], a.spacing[2]];
    let mut vol = make_phantom(a.seed, a.blobs, dims, spacing)?;
    if a.negate {
        vol = vol.negated();
    }
    write_volume(&a.output, &vol, a.dtype)?;
    let (lo, hi) = vol.min_max();
    let mut r = Report::default();
    r.put("command", "phantom");
    r.put("seed", a.seed);
    r.put("blobs", a.blobs);
    r.put("dims", format!("{} {} {}", dims[0], dims[1], dims[2]));
    r.vec("spacing", &spacing);
    r.put("min", lo);
    r.put("max", hi);
    Ok(r)
}

fn run_synth(a: &SynthArgs) -> Result<Report> {
    let t = random_similarity(
        a.seed,
        (a.rotation_deg[0], a.rotation_deg[1]),
        (a.translation_mm[0], a.translation_mm[1]),
    )?;
    write_transform(&a.output, &t)?;
    if let Some(p) = &a.truth_output {
        write_transform(p, &t.inverse())?;
    }
    let mut r = Report::default();
    r.put("command", "synth-transform");
    r.put("seed", a.seed);
    r.transform("", &t);
    if let (Some(input), Some(output)) = (&a.volume, &a.volume_output) {
        let vol = read_volume(input, None)?;
        let mut out = vol.resample(&t)?;
        if a.negate {
            out = out.negated();
        }
        write_volume(output, &out, DataType::F32)?;
        r.put("volume_written", output.display());
    }
    Ok(r)
}

fn run_states(a: &StatesArgs) -> Result<Report> {
    let mut cfg = a.config.load()?;
    a.hough.apply(&mut cfg);
    let fixed = read_features(&a.fixed)?.features;
    let moving = read_features(&a.moving)?.features;
    let forward = hough_init(&match_features(&fixed, &moving)?, &cfg.hough)?;
    let h = if a.symmetric {
        let reverse = hough_init(&match_features(&moving, &fixed)?, &cfg.hough)?;
        state_histogram_symmetric(&forward.inliers, &reverse.inliers)
    } else {
        state_histogram(&forward.inliers)
    };
    let mut r = Report::default();
    r.put("command", "states");
    r.put("inliers", forward.vote_count);
    r.histogram(&h);
    if let Some(p) = &a.table {
        let mut csv = String::from("from_state,to_0,to_1,to_2,to_3\n");
        for (i, row) in h.iter().enumerate() {
            let _ = writeln!(csv, "{i},{},{},{},{}", row[0], row[1], row[2], row[3]);
        }
        std::fs::write(p, csv)?;
    }
    Ok(r)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let result = match &cli.command {
        Command::Extract(a) => run_extract(a),
        Command::Match(a) => run_match(a),
        Command::Register(a) => run_register(a),
        Command::Evaluate(a) => run_evaluate(a),
        // These accept --config like every command but use none of its tables; loading it
        // still rejects a malformed file.
        Command::Phantom(a) => a.config.load().and_then(|_| run_phantom(a)),
        Command::SynthTransform(a) => a.config.load().and_then(|_| run_synth(a)),
        Command::States(a) => run_states(a),
    };
    match result {
        Ok(r) => {
            print!("{}", r.0);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
