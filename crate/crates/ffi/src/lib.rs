// SPDX-License-Identifier: Apache-2.0
//! C ABI over `aimc-core`.
//!
//! Tiles are opaque handles created by `aimc_tile_new` and released with
//! `aimc_tile_free`. Every call returns an `AimcStatus`; on failure the
//! message is kept per thread and read with `aimc_last_error_message`.
//! Matrices are row-major `double` buffers. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aimc_core::calibration::{
    optimize_conductance_ranges, optimize_input_range, CalibrationConfig,
};
use aimc_core::mapping::{map_network, parse_manifest};
use aimc_core::{
    tile_forward_batch, AimcError, AnalogTile, ForwardMode, Matrix, NoiseModel, RngStream,
    TileHardwareConfig,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AimcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    Shape = 3,
    MappingDomain = 4,
    TemporalOrder = 5,
    Numerical = 6,
    DegenerateRange = 7,
    CalibrationData = 8,
    TrainingFailure = 9,
    Parse = 10,
    EmptyInput = 11,
    NotProgrammed = 12,
    Io = 13,
    Utf8 = 14,
    Panic = 15,
}

/// Forward pass mode for `aimc_tile_forward`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AimcMode {
    /// Exact `xᵀW`.
    Ideal = 0,
    /// Programmed devices read at a given time, IR drop and converters on.
    Inference = 1,
}

/// Opaque tile handle.
pub struct AimcTile {
    inner: AnalogTile,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &AimcError) -> AimcStatus {
    match e {
        AimcError::InvalidConfig(_) | AimcError::Json(_) => AimcStatus::InvalidConfig,
        AimcError::Shape(_) => AimcStatus::Shape,
        AimcError::MappingDomain(_) => AimcStatus::MappingDomain,
        AimcError::TemporalOrder { .. } => AimcStatus::TemporalOrder,
        AimcError::Numerical(_) => AimcStatus::Numerical,
        AimcError::DegenerateRange(_) => AimcStatus::DegenerateRange,
        AimcError::CalibrationData(_) => AimcStatus::CalibrationData,
        AimcError::TrainingFailure { .. } => AimcStatus::TrainingFailure,
        AimcError::Parse { .. } => AimcStatus::Parse,
        AimcError::EmptyInput(_) => AimcStatus::EmptyInput,
        AimcError::NotProgrammed(_) => AimcStatus::NotProgrammed,
        AimcError::Io(_) => AimcStatus::Io,
    }
}

enum Failure {
    Core(AimcError),
    Null(&'static str),
    Utf8(&'static str),
}

impl From<AimcError> for Failure {
    fn from(e: AimcError) -> Self {
        Self::Core(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::Core(AimcError::Json(e))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AimcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            AimcStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(format!("{}: {e}", e.category()));
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AimcStatus::NullPointer
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_error(format!("{what} is not valid UTF-8"));
            AimcStatus::Utf8
        }
        Err(_) => {
            set_error("internal panic".into());
            AimcStatus::Panic
        }
    }
}

unsafe fn opt_str<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure::Utf8(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn tile_mut<'a>(tile: *mut AimcTile) -> Result<&'a mut AimcTile, Failure> {
    tile.as_mut().ok_or(Failure::Null("tile"))
}

/// Create a tile holding `weights` (`rows × cols`, row-major).
///
/// `hardware_json` and `noise_json` are optional JSON documents (NULL for
/// defaults). Columns are normalized by their largest magnitude.
///
/// # Safety
/// `weights` must point to `rows · cols` doubles, the strings must be NUL
/// terminated, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aimc_tile_new(
    weights: *const f64,
    rows: usize,
    cols: usize,
    hardware_json: *const c_char,
    noise_json: *const c_char,
    out: *mut *mut AimcTile,
) -> AimcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let w = slice(weights, rows * cols, "weights")?;
        let hardware: TileHardwareConfig = match opt_str(hardware_json, "hardware_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => TileHardwareConfig::default(),
        };
        let noise: NoiseModel = match opt_str(noise_json, "noise_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => NoiseModel::pcm_like(hardware.g_max),
        };
        let w = Matrix::from_vec(rows, cols, w.to_vec())?;
        let inner = AnalogTile::from_weights(&w, &hardware, &noise)?;
        *out = Box::into_raw(Box::new(AimcTile { inner }));
        Ok(())
    })
}

/// Release a tile. NULL is ignored.
///
/// # Safety
/// `tile` must come from `aimc_tile_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aimc_tile_free(tile: *mut AimcTile) {
    if !tile.is_null() {
        drop(Box::from_raw(tile));
    }
}

/// Weight rows and columns of a tile.
///
/// # Safety
/// `tile` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aimc_tile_shape(
    tile: *const AimcTile,
    rows: *mut usize,
    cols: *mut usize,
) -> AimcStatus {
    guard(|| {
        let t = tile.as_ref().ok_or(Failure::Null("tile"))?;
        if rows.is_null() || cols.is_null() {
            return Err(Failure::Null("rows/cols"));
        }
        *rows = t.inner.rows();
        *cols = t.inner.cols();
        Ok(())
    })
}

/// Set the DAC full-scale input.
///
/// # Safety
/// `tile` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn aimc_tile_set_input_range(
    tile: *mut AimcTile,
    input_range: f64,
) -> AimcStatus {
    guard(|| Ok(tile_mut(tile)?.inner.set_input_range(input_range)?))
}

/// Current DAC full-scale input.
///
/// # Safety
/// `tile` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aimc_tile_input_range(tile: *const AimcTile, out: *mut f64) -> AimcStatus {
    guard(|| {
        let t = tile.as_ref().ok_or(Failure::Null("tile"))?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = t.inner.input_range;
        Ok(())
    })
}

/// Program the devices at time `at` (seconds) with the given seed.
///
/// # Safety
/// `tile` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn aimc_tile_program(tile: *mut AimcTile, seed: u64, at: f64) -> AimcStatus {
    guard(|| Ok(tile_mut(tile)?.inner.program(RngStream::new(seed, 0), at)?))
}

/// Run `batch` input rows `x` (`batch × rows`) through the tile into `out`
/// (`batch × cols`). `t` is ignored in Ideal mode.
///
/// # Safety
/// `tile` must be a live handle, `x` and `out` must hold the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn aimc_tile_forward(
    tile: *const AimcTile,
    x: *const f64,
    batch: usize,
    mode: AimcMode,
    t: f64,
    seed: u64,
    out: *mut f64,
) -> AimcStatus {
    guard(|| {
        let tile = &tile.as_ref().ok_or(Failure::Null("tile"))?.inner;
        let x = slice(x, batch * tile.rows(), "x")?;
        let x = Matrix::from_vec(batch, tile.rows(), x.to_vec())?;
        let mode = match mode {
            AimcMode::Ideal => ForwardMode::ideal(),
            AimcMode::Inference => ForwardMode::inference(t),
        };
        let y = tile_forward_batch(tile, &x, &mode, RngStream::new(seed, 1))?;
        if out.is_null() && !y.as_slice().is_empty() {
            return Err(Failure::Null("out"));
        }
        ptr::copy_nonoverlapping(y.as_slice().as_ptr(), out, y.as_slice().len());
        Ok(())
    })
}

/// Calibrate the input range, then the column conductance caps, from
/// `n_samples` input rows (`n_samples × rows`). `calibration_json` may be
/// NULL for defaults. Leaves the tile unprogrammed.
///
/// # Safety
/// `tile` must be a live handle and `samples` must hold the stated size.
#[no_mangle]
pub unsafe extern "C" fn aimc_tile_calibrate(
    tile: *mut AimcTile,
    samples: *const f64,
    n_samples: usize,
    calibration_json: *const c_char,
) -> AimcStatus {
    guard(|| {
        let handle = tile_mut(tile)?;
        let rows = handle.inner.rows();
        let cal: CalibrationConfig = match opt_str(calibration_json, "calibration_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => CalibrationConfig::default(),
        };
        let resolved = cal.resolve(&handle.inner.hardware)?;
        let x = Matrix::from_vec(
            n_samples,
            rows,
            slice(samples, n_samples * rows, "samples")?.to_vec(),
        )?;
        let mut next = handle.inner.clone();
        next.set_input_range(optimize_input_range(x.as_slice(), resolved.percentile_k)?)?;
        let (next, _) = optimize_conductance_ranges(&next, &x, &resolved)?;
        handle.inner = next;
        Ok(())
    })
}

/// Tile count, mapped parameters and mean per-layer utilization of a layer
/// manifest on `tile_rows × tile_cols` tiles.
///
/// # Safety
/// `manifest` must be NUL terminated; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn aimc_map_report(
    manifest: *const c_char,
    tile_rows: usize,
    tile_cols: usize,
    num_tiles: *mut usize,
    mapped_params: *mut u64,
    avg_utilization: *mut f64,
) -> AimcStatus {
    guard(|| {
        let text = opt_str(manifest, "manifest")?.ok_or(Failure::Null("manifest"))?;
        if num_tiles.is_null() || mapped_params.is_null() || avg_utilization.is_null() {
            return Err(Failure::Null("outputs"));
        }
        let hw = TileHardwareConfig::with_size(tile_rows, tile_cols);
        hw.validate()?;
        let (_, report) = map_network(&parse_manifest(text)?, &hw)?;
        *num_tiles = report.num_tiles;
        *mapped_params = report.mapped_params as u64;
        *avg_utilization = report.avg_utilization;
        Ok(())
    })
}

/// Copy the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must hold `len` bytes, or be NULL with `len` 0.
#[no_mangle]
pub unsafe extern "C" fn aimc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn aimc_status_name(status: AimcStatus) -> *const c_char {
    let s: &'static CStr = match status {
        AimcStatus::Ok => c"ok",
        AimcStatus::NullPointer => c"null-pointer",
        AimcStatus::InvalidConfig => c"config",
        AimcStatus::Shape => c"shape",
        AimcStatus::MappingDomain => c"mapping-domain",
        AimcStatus::TemporalOrder => c"temporal-order",
        AimcStatus::Numerical => c"numerical",
        AimcStatus::DegenerateRange => c"degenerate-range",
        AimcStatus::CalibrationData => c"calibration-data",
        AimcStatus::TrainingFailure => c"training-failure",
        AimcStatus::Parse => c"parse",
        AimcStatus::EmptyInput => c"empty-input",
        AimcStatus::NotProgrammed => c"not-programmed",
        AimcStatus::Io => c"io",
        AimcStatus::Utf8 => c"utf8",
        AimcStatus::Panic => c"panic",
    };
    s.as_ptr()
}
