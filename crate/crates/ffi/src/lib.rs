//! C ABI over the pure parts of geoseer: distance, DMS conversion, place-name
//! normalization, guess parsing/rendering and EXIF read/strip.
//!
//! Every fallible call returns a [`GsStatus`]; on failure a message is kept per
//! thread and can be fetched with [`gs_last_error_message`]. Objects cross the
//! boundary as opaque handles and are released with their matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use geoseer::media::{self, ExifSummary, Hemisphere};
use geoseer::model::{normalize_place_name, Coordinates, GeoGranularity, GeoGuess};
use geoseer::parser;
use geoseer::scoring;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseFailed = 4,
    MediaFailed = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsGranularity {
    Unknown = 0,
    Country = 1,
    State = 2,
    CityTown = 3,
    Street = 4,
}

impl From<GeoGranularity> for GsGranularity {
    fn from(g: GeoGranularity) -> Self {
        match g {
            GeoGranularity::Unknown => GsGranularity::Unknown,
            GeoGranularity::Country => GsGranularity::Country,
            GeoGranularity::State => GsGranularity::State,
            GeoGranularity::CityTown => GsGranularity::CityTown,
            GeoGranularity::Street => GsGranularity::Street,
        }
    }
}

impl From<GsGranularity> for GeoGranularity {
    fn from(g: GsGranularity) -> Self {
        match g {
            GsGranularity::Unknown => GeoGranularity::Unknown,
            GsGranularity::Country => GeoGranularity::Country,
            GsGranularity::State => GeoGranularity::State,
            GsGranularity::CityTown => GeoGranularity::CityTown,
            GsGranularity::Street => GeoGranularity::Street,
        }
    }
}

/// Byte buffer owned by the library. Release with [`gs_buffer_free`].
#[repr(C)]
pub struct GsBuffer {
    pub data: *mut u8,
    pub len: usize,
}

impl GsBuffer {
    fn empty() -> Self {
        GsBuffer { data: ptr::null_mut(), len: 0 }
    }

    fn from_vec(v: Vec<u8>) -> Self {
        let boxed = v.into_boxed_slice();
        let len = boxed.len();
        GsBuffer { data: Box::into_raw(boxed) as *mut u8, len }
    }
}

/// Parsed location guess.
pub struct GsGuess {
    guess: GeoGuess,
    // C copies of the admin levels, indexed by depth - 1
    levels: [Option<CString>; 4],
    place: Option<CString>,
}

/// EXIF metadata summary.
pub struct GsExif {
    summary: ExifSummary,
    make: Option<CString>,
    model: Option<CString>,
    timestamp: Option<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GsStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(GsStatus::NullPointer, format!("{what} is null"))
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            GsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(GsStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if p.is_null() {
        return Err(Failure::null("data"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: null checked; the caller guarantees a valid, writable pointer otherwise.
    unsafe { p.as_mut() }.ok_or_else(|| Failure::null(what))
}

fn owned_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(GsStatus::InvalidArgument, "string contains NUL".into()))
}

fn c_opt(s: Option<&str>) -> Option<CString> {
    s.and_then(|s| CString::new(s).ok())
}

fn opt_ptr(s: &Option<CString>) -> *const c_char {
    s.as_ref().map_or(ptr::null(), |c| c.as_ptr())
}

fn coords(lat: f64, lon: f64) -> Result<Coordinates, Failure> {
    Coordinates::new(lat, lon).map_err(|e| Failure(GsStatus::InvalidArgument, e.to_string()))
}

/// Message for the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn gs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Great-circle distance in statute miles.
///
/// # Safety
/// `out` must be a valid pointer to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn gs_haversine_miles(lat1: f64, lon1: f64, lat2: f64, lon2: f64, out: *mut f64) -> GsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = scoring::haversine_miles(coords(lat1, lon1)?, coords(lat2, lon2)?);
        Ok(())
    })
}

/// Degrees/minutes/seconds to signed decimal degrees. `hemisphere` is one of
/// 'N', 'S', 'E', 'W' (either case).
///
/// # Safety
/// `out` must be a valid pointer to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn gs_dms_to_decimal(deg: f64, min: f64, sec: f64, hemisphere: c_char, out: *mut f64) -> GsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let h = char::from(hemisphere as u8).to_string();
        let h = Hemisphere::from_ref(&h)
            .ok_or_else(|| Failure(GsStatus::InvalidArgument, format!("bad hemisphere {h:?}")))?;
        *out = media::dms_to_decimal(deg, min, sec, h).map_err(|e| Failure(GsStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Normalized form of a place name. Free the result with [`gs_string_free`].
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_normalize_place_name(name: *const c_char, out: *mut *mut c_char) -> GsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        *out = owned_c(normalize_place_name(str_arg(name, "name")?))?;
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses model output into a guess handle.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_guess_parse(text: *const c_char, out: *mut *mut GsGuess) -> GsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let guess = parser::parse_guess(str_arg(text, "text")?)
            .map_err(|e| Failure(GsStatus::ParseFailed, e.to_string()))?;
        let levels = GeoGranularity::LEVELS.map(|l| c_opt(guess.admin().level(l)));
        let place = c_opt(guess.place_name());
        *out = Box::into_raw(Box::new(GsGuess { guess, levels, place }));
        Ok(())
    })
}

/// # Safety
/// `guess` must be NULL or a handle from [`gs_guess_parse`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gs_guess_free(guess: *mut GsGuess) {
    if !guess.is_null() {
        drop(Box::from_raw(guess));
    }
}

/// Finest populated admin level; `Unknown` for a NULL handle.
///
/// # Safety
/// `guess` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_guess_granularity(guess: *const GsGuess) -> GsGranularity {
    guess.as_ref().map_or(GsGranularity::Unknown, |g| g.guess.granularity().into())
}

/// Value at an admin level, or NULL when absent. Borrowed from the handle.
///
/// # Safety
/// `guess` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_guess_level(guess: *const GsGuess, level: GsGranularity) -> *const c_char {
    match (guess.as_ref(), level) {
        (None, _) | (_, GsGranularity::Unknown) => ptr::null(),
        (Some(g), l) => opt_ptr(&g.levels[GeoGranularity::from(l).depth() - 1]),
    }
}

/// Place name, or NULL when absent. Borrowed from the handle.
///
/// # Safety
/// `guess` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_guess_place_name(guess: *const GsGuess) -> *const c_char {
    guess.as_ref().map_or(ptr::null(), |g| opt_ptr(&g.place))
}

/// Confidence in [0, 1]; 0 for a NULL handle.
///
/// # Safety
/// `guess` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_guess_confidence(guess: *const GsGuess) -> f64 {
    guess.as_ref().map_or(0.0, |g| g.guess.confidence())
}

/// Writes the guessed coordinates and returns true, or returns false if none.
///
/// # Safety
/// `guess` must be NULL or a live handle; `lat`/`lon` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gs_guess_coordinates(guess: *const GsGuess, lat: *mut f64, lon: *mut f64) -> bool {
    let Some(c) = guess.as_ref().and_then(|g| g.guess.coordinates()) else {
        return false;
    };
    if lat.is_null() || lon.is_null() {
        return false;
    }
    *lat = c.lat();
    *lon = c.lon();
    true
}

/// Canonical machine-readable block for the guess. Free with [`gs_string_free`].
///
/// # Safety
/// `guess` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_guess_render(guess: *const GsGuess, out: *mut *mut c_char) -> GsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let g = guess.as_ref().ok_or_else(|| Failure::null("guess"))?;
        *out = owned_c(parser::render_guess_block(&g.guess))?;
        Ok(())
    })
}

/// Reads EXIF metadata from JPEG or TIFF bytes.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_exif_read(data: *const u8, len: usize, out: *mut *mut GsExif) -> GsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let summary = media::read_exif(bytes_arg(data, len)?)
            .map_err(|e| Failure(GsStatus::MediaFailed, e.to_string()))?;
        let handle = GsExif {
            make: c_opt(summary.camera_make.as_deref()),
            model: c_opt(summary.camera_model.as_deref()),
            timestamp: c_opt(summary.timestamp.map(|t| t.format("%Y-%m-%dT%H:%M:%S").to_string()).as_deref()),
            summary,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `exif` must be NULL or a handle from [`gs_exif_read`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gs_exif_free(exif: *mut GsExif) {
    if !exif.is_null() {
        drop(Box::from_raw(exif));
    }
}

/// Writes usable GPS coordinates and returns true, or returns false if none.
///
/// # Safety
/// `exif` must be NULL or a live handle; `lat`/`lon` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gs_exif_gps(exif: *const GsExif, lat: *mut f64, lon: *mut f64) -> bool {
    let Some(c) = exif.as_ref().and_then(|e| e.summary.gps) else {
        return false;
    };
    if lat.is_null() || lon.is_null() {
        return false;
    }
    *lat = c.lat();
    *lon = c.lon();
    true
}

/// True when a GPS IFD exists, even with unusable coordinates.
///
/// # Safety
/// `exif` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_exif_has_gps_ifd(exif: *const GsExif) -> bool {
    exif.as_ref().is_some_and(|e| e.summary.gps_ifd_present)
}

/// Camera make, or NULL. Borrowed from the handle.
///
/// # Safety
/// `exif` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_exif_camera_make(exif: *const GsExif) -> *const c_char {
    exif.as_ref().map_or(ptr::null(), |e| opt_ptr(&e.make))
}

/// Camera model, or NULL. Borrowed from the handle.
///
/// # Safety
/// `exif` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_exif_camera_model(exif: *const GsExif) -> *const c_char {
    exif.as_ref().map_or(ptr::null(), |e| opt_ptr(&e.model))
}

/// Capture time as `YYYY-MM-DDTHH:MM:SS`, or NULL. Borrowed from the handle.
///
/// # Safety
/// `exif` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_exif_timestamp(exif: *const GsExif) -> *const c_char {
    exif.as_ref().map_or(ptr::null(), |e| opt_ptr(&e.timestamp))
}

/// Copy of the image with GPS metadata removed. Free with [`gs_buffer_free`].
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_strip_gps(data: *const u8, len: usize, out: *mut GsBuffer) -> GsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = GsBuffer::empty();
        let stripped = media::strip_gps(bytes_arg(data, len)?)
            .map_err(|e| Failure(GsStatus::MediaFailed, e.to_string()))?;
        *out = GsBuffer::from_vec(stripped);
        Ok(())
    })
}

/// # Safety
/// `buf` must be NULL or point to a buffer filled by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gs_buffer_free(buf: *mut GsBuffer) {
    let Some(b) = buf.as_mut() else { return };
    if !b.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
    }
    *b = GsBuffer::empty();
}
