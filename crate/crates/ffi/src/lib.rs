//! C ABI for sift3d.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_read`/`*_extract`
//! style calls and released with the matching `*_free`. Every fallible call returns a
//! [`Sift3dStatus`]; on failure [`sift3d_last_error_message`] describes the error for the
//! calling thread. Panics never unwind into C; they are reported as `SIFT3D_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sift3d::cpd::Variant;
use sift3d::io::features::FeatureFile;
use sift3d::{Error, ExtractionConfig, Feature, OrientationEstimator, RegistrationConfig, ScalarVolume, SimilarityTransform};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sift3dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    UnsupportedVersion = 5,
    OutOfDomain = 6,
    NoOrientation = 7,
    InitializationFailed = 8,
    Degenerate = 9,
    Config = 10,
    Panic = 11,
}

/// Orientation frame estimator for [`sift3d_extract`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sift3dEstimator {
    MaxGradient = 0,
    StructureTensor = 1,
}

/// Registration variant for [`sift3d_register`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sift3dVariant {
    Cpd = 0,
    SiftCpd = 1,
    SiftCpdStar = 2,
    Icp20 = 3,
    Icp100 = 4,
}

/// `x -> scale * R x + t`, with `R` stored row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sift3dTransform {
    pub rotation: [f64; 9],
    pub scale: f64,
    pub translation: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sift3dRegistrationReport {
    /// Moving-to-fixed transform.
    pub transform: Sift3dTransform,
    pub matches: usize,
    pub inliers: usize,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_sq_final: f64,
    pub runtime_s: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sift3dFeatureGeometry {
    pub x: [f64; 3],
    pub sigma: f64,
    /// Frame axes as columns, row-major.
    pub frame: [f64; 9],
    pub sign: i8,
    pub border: bool,
}

/// Opaque scalar volume.
pub struct Sift3dVolume(ScalarVolume);

/// Opaque feature set.
pub struct Sift3dFeatures {
    features: Vec<Feature>,
    config: ExtractionConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> Sift3dStatus {
    match e {
        Error::InvalidInput(_) => Sift3dStatus::InvalidArgument,
        Error::OutOfDomain(_) => Sift3dStatus::OutOfDomain,
        Error::NoOrientation | Error::AmbiguousFrame(_) => Sift3dStatus::NoOrientation,
        Error::InitializationFailed(_) => Sift3dStatus::InitializationFailed,
        Error::VarianceCollapsed(_) | Error::DegenerateCorrespondence | Error::DegenerateGeometry => {
            Sift3dStatus::Degenerate
        }
        Error::Parse { .. } => Sift3dStatus::Parse,
        Error::UnsupportedVersion { .. } => Sift3dStatus::UnsupportedVersion,
        Error::Config(_) => Sift3dStatus::Config,
        Error::Io(_) => Sift3dStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Sift3dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            Sift3dStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            Sift3dStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            Sift3dStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidInput("path is not UTF-8".into())))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_ptr<T>(p: *mut T, what: &'static str) -> Result<&'static mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn read3<T: Copy>(p: *const T, what: &'static str) -> Result<[T; 3], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok([*p, *p.add(1), *p.add(2)])
}

fn to_c_transform(t: &SimilarityTransform) -> Sift3dTransform {
    Sift3dTransform {
        rotation: std::array::from_fn(|i| t.rotation[(i / 3, i % 3)]),
        scale: t.scale,
        translation: [t.translation[0], t.translation[1], t.translation[2]],
    }
}

fn from_c_transform(t: &Sift3dTransform) -> Result<SimilarityTransform, Failure> {
    Ok(SimilarityTransform::new(
        sift3d::Mat3::from_row_slice(&t.rotation),
        t.scale,
        sift3d::Vec3::from_column_slice(&t.translation),
    )?)
}

/// Message for the last failed call on this thread; empty after a success. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sift3d_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sift3d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Reads a `.meta` (raw_meta) or `.nii` (NIfTI-1) volume.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sift3d_volume_read(path: *const c_char, out: *mut *mut Sift3dVolume) -> Sift3dStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let vol = sift3d::io::read_volume(path_arg(path)?, None)?;
        *out = Box::into_raw(Box::new(Sift3dVolume(vol)));
        Ok(())
    })
}

/// Copies `dims[0]*dims[1]*dims[2]` voxels (x fastest) into a new volume.
///
/// # Safety
/// `dims`, `spacing` and `origin` point to 3 elements; `data` to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sift3d_volume_from_data(
    dims: *const usize,
    spacing: *const f64,
    origin: *const f64,
    data: *const f64,
    len: usize,
    out: *mut *mut Sift3dVolume,
) -> Sift3dStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let dims = read3(dims, "dims")?;
        let spacing = read3(spacing, "spacing")?;
        let origin = read3(origin, "origin")?;
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let vol = ScalarVolume::new(dims, spacing, origin, values)?;
        *out = Box::into_raw(Box::new(Sift3dVolume(vol)));
        Ok(())
    })
}

/// Seeded Gaussian-blob phantom centered on the world origin.
///
/// # Safety
/// `dims` and `spacing` point to 3 elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sift3d_volume_phantom(
    seed: u64,
    num_blobs: usize,
    dims: *const usize,
    spacing: *const f64,
    out: *mut *mut Sift3dVolume,
) -> Sift3dStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let vol = sift3d::phantom::make_phantom(seed, num_blobs, read3(dims, "dims")?, read3(spacing, "spacing")?)?;
        *out = Box::into_raw(Box::new(Sift3dVolume(vol)));
        Ok(())
    })
}

/// Resamples `volume` by `transform` onto its own grid (zero fill outside).
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sift3d_volume_resample(
    volume: *const Sift3dVolume,
    transform: *const Sift3dTransform,
    out: *mut *mut Sift3dVolume,
) -> Sift3dStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let vol = non_null(volume, "volume")?;
        let t = from_c_transform(non_null(transform, "transform")?)?;
        *out = Box::into_raw(Box::new(Sift3dVolume(vol.0.resample(&t)?)));
        Ok(())
    })
}

/// # Safety
/// `volume` must be live; `dims` points to 3 writable elements.
#[no_mangle]
pub unsafe extern "C" fn sift3d_volume_dims(volume: *const Sift3dVolume, dims: *mut usize) -> Sift3dStatus {
    guard(|| {
        let vol = non_null(volume, "volume")?;
        if dims.is_null() {
            return Err(Failure::Null("dims"));
        }
        for (i, d) in vol.0.dims().iter().enumerate() {
            *dims.add(i) = *d;
        }
        Ok(())
    })
}

/// Negates every voxel in place.
///
/// # Safety
/// `volume` must be live and not shared with another thread.
#[no_mangle]
pub unsafe extern "C" fn sift3d_volume_negate(volume: *mut Sift3dVolume) -> Sift3dStatus {
    guard(|| {
        let vol = volume.as_mut().ok_or(Failure::Null("volume"))?;
        vol.0 = vol.0.negated();
        Ok(())
    })
}

/// # Safety
/// `volume` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sift3d_volume_free(volume: *mut Sift3dVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Extracts features with default settings and the chosen frame estimator.
///
/// # Safety
/// `volume` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sift3d_extract(
    volume: *const Sift3dVolume,
    estimator: Sift3dEstimator,
    out: *mut *mut Sift3dFeatures,
) -> Sift3dStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let vol = non_null(volume, "volume")?;
        let config = ExtractionConfig {
            estimator: match estimator {
                Sift3dEstimator::MaxGradient => OrientationEstimator::MaxGradient,
                Sift3dEstimator::StructureTensor => OrientationEstimator::StructureTensor,
            },
            ..Default::default()
        };
        let features = sift3d::extract_features(&vol.0, &config)?;
        *out = Box::into_raw(Box::new(Sift3dFeatures { features, config }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sift3d_features_read(path: *const c_char, out: *mut *mut Sift3dFeatures) -> Sift3dStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let file = sift3d::io::read_features(path_arg(path)?)?;
        let config = ExtractionConfig {
            estimator: file.header.estimator.parse().unwrap_or_default(),
            ..Default::default()
        };
        *out = Box::into_raw(Box::new(Sift3dFeatures {
            features: file.features,
            config,
        }));
        Ok(())
    })
}

/// # Safety
/// `features` must be live; `path` and `source_id` NUL-terminated (`source_id` may be null).
#[no_mangle]
pub unsafe extern "C" fn sift3d_features_write(
    features: *const Sift3dFeatures,
    path: *const c_char,
    source_id: *const c_char,
) -> Sift3dStatus {
    guard(|| {
        let f = non_null(features, "features")?;
        let id = if source_id.is_null() {
            String::new()
        } else {
            CStr::from_ptr(source_id).to_string_lossy().into_owned()
        };
        let file = FeatureFile::new(&id, &f.config, f.features.clone());
        sift3d::io::write_features(path_arg(path)?, &file)?;
        Ok(())
    })
}

/// Number of features; 0 for a null handle.
///
/// # Safety
/// `features` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn sift3d_features_len(features: *const Sift3dFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.features.len())
}

/// # Safety
/// `features` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sift3d_feature_geometry(
    features: *const Sift3dFeatures,
    index: usize,
    out: *mut Sift3dFeatureGeometry,
) -> Sift3dStatus {
    guard(|| {
        let f = non_null(features, "features")?;
        let out = out_ptr(out, "out")?;
        let feat = f.features.get(index).ok_or_else(|| {
            Failure::Lib(Error::InvalidInput(format!(
                "feature index {index} out of range ({} features)",
                f.features.len()
            )))
        })?;
        let m = feat.frame.matrix();
        *out = Sift3dFeatureGeometry {
            x: [feat.keypoint.x[0], feat.keypoint.x[1], feat.keypoint.x[2]],
            sigma: feat.keypoint.sigma,
            frame: std::array::from_fn(|i| m[(i / 3, i % 3)]),
            sign: feat.keypoint.sign,
            border: feat.keypoint.border,
        };
        Ok(())
    })
}

/// # Safety
/// `features` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sift3d_features_free(features: *mut Sift3dFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Registers `moving` onto `fixed` with default parameters.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sift3d_register(
    fixed: *const Sift3dFeatures,
    moving: *const Sift3dFeatures,
    variant: Sift3dVariant,
    out: *mut Sift3dRegistrationReport,
) -> Sift3dStatus {
    guard(|| {
        let fixed = non_null(fixed, "fixed")?;
        let moving = non_null(moving, "moving")?;
        let out = out_ptr(out, "out")?;
        let mut cfg = RegistrationConfig::default();
        match variant {
            Sift3dVariant::Cpd => cfg.variant = Variant::Cpd,
            Sift3dVariant::SiftCpd => cfg.variant = Variant::SiftCpd,
            Sift3dVariant::SiftCpdStar => cfg.variant = Variant::SiftCpdStar,
            Sift3dVariant::Icp20 | Sift3dVariant::Icp100 => {
                cfg.variant = Variant::Icp;
                cfg.max_iterations = if variant == Sift3dVariant::Icp20 { 20 } else { 100 };
            }
        }
        let r = sift3d::register(&fixed.features, &moving.features, &cfg)?;
        *out = Sift3dRegistrationReport {
            transform: to_c_transform(&r.transform),
            matches: r.match_count,
            inliers: r.hough.vote_count,
            iterations: r.iterations,
            converged: r.converged,
            lambda_sq_final: r.lambda_sq_history.last().copied().unwrap_or(r.lambda_sq_init),
            runtime_s: r.runtime,
        };
        Ok(())
    })
}

/// Seeded random transform with per-axis rotations of 10–30° and translations of 0–10 mm.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sift3d_transform_random(seed: u64, out: *mut Sift3dTransform) -> Sift3dStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = to_c_transform(&sift3d::phantom::random_similarity(seed, (10.0, 30.0), (0.0, 10.0))?);
        Ok(())
    })
}

/// # Safety
/// `transform` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sift3d_transform_inverse(
    transform: *const Sift3dTransform,
    out: *mut Sift3dTransform,
) -> Sift3dStatus {
    guard(|| {
        let t = from_c_transform(non_null(transform, "transform")?)?;
        *out_ptr(out, "out")? = to_c_transform(&t.inverse());
        Ok(())
    })
}

/// Mean distance between the two transforms' images of `count` probe points
/// (`probes` holds `3 * count` doubles).
///
/// # Safety
/// All pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn sift3d_point_registration_error(
    estimate: *const Sift3dTransform,
    truth: *const Sift3dTransform,
    probes: *const f64,
    count: usize,
    out: *mut f64,
) -> Sift3dStatus {
    guard(|| {
        let est = from_c_transform(non_null(estimate, "estimate")?)?;
        let gt = from_c_transform(non_null(truth, "truth")?)?;
        let out = out_ptr(out, "out")?;
        if probes.is_null() && count > 0 {
            return Err(Failure::Null("probes"));
        }
        let raw = if count == 0 { &[][..] } else { std::slice::from_raw_parts(probes, 3 * count) };
        let pts: Vec<sift3d::Vec3> = raw.chunks_exact(3).map(sift3d::Vec3::from_column_slice).collect();
        *out = sift3d::eval::point_registration_error(&est, &gt, &pts)?;
        Ok(())
    })
}
