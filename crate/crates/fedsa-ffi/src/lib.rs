//! C ABI for the poisoning lab. Handles are opaque pointers owned by Rust;
//! every function returns a status code and reports details through
//! `fedsa_last_error`. Strings handed out must be released with
//! `fedsa_string_free`, handles with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};

use libc::c_char;

use fedsa::attack::simulate_scalar_plant;
use fedsa::manifest::{self, ExperimentManifest};
use fedsa::report;
use fedsa::sim;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedsaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    RunError = 4,
    OutOfRange = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg).unwrap_or_default();
    });
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next fedsa call on the same thread.
#[no_mangle]
pub extern "C" fn fedsa_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Crate version as a static string; never freed.
#[no_mangle]
pub extern "C" fn fedsa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parsed experiment manifest.
pub struct FedsaManifest {
    inner: ExperimentManifest,
}

/// Results of one manifest run.
pub struct FedsaReport {
    entries: Vec<ReportEntry>,
}

struct ReportEntry {
    id: String,
    stats: FedsaExperimentStats,
    error: Option<String>,
}

/// Per-experiment outcome snapshot.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedsaExperimentStats {
    /// False when this experiment failed; see `fedsa_report_entry_error`.
    pub ok: bool,
    /// Final global accuracy, percent.
    pub final_accuracy_pct: f64,
    /// Signed percent deviation from the objective.
    pub final_delta_pct: f64,
    pub rounds: u32,
    /// Fraction of rounds with a surviving malicious model; negative when
    /// the aggregation rule exposes no selection.
    pub detection_rate: f64,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, FedsaStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(FedsaStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        FedsaStatus::InvalidUtf8
    })
}

fn give_string(s: &str, out: *mut *mut c_char) -> FedsaStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            FedsaStatus::Ok
        }
        Err(_) => {
            set_error("string contains interior NUL");
            FedsaStatus::ParseError
        }
    }
}

/// Parse a manifest file into a handle.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// pointer storage; both stay borrowed only for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn fedsa_manifest_parse(
    path: *const c_char,
    out: *mut *mut FedsaManifest,
) -> FedsaStatus {
    if out.is_null() {
        set_error("null output argument");
        return FedsaStatus::NullArgument;
    }
    let path = match cstr_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match manifest::parse_config(Path::new(path)) {
        Ok(m) => {
            *out = Box::into_raw(Box::new(FedsaManifest { inner: m }));
            FedsaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            FedsaStatus::ParseError
        }
    }
}

/// Parse a manifest from TOML text instead of a file.
///
/// # Safety
/// As for `fedsa_manifest_parse`.
#[no_mangle]
pub unsafe extern "C" fn fedsa_manifest_parse_str(
    text: *const c_char,
    out: *mut *mut FedsaManifest,
) -> FedsaStatus {
    if out.is_null() {
        set_error("null output argument");
        return FedsaStatus::NullArgument;
    }
    let text = match cstr_arg(text) {
        Ok(t) => t,
        Err(status) => return status,
    };
    match manifest::parse_config_str(text, Path::new("<memory>")) {
        Ok(m) => {
            *out = Box::into_raw(Box::new(FedsaManifest { inner: m }));
            FedsaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            FedsaStatus::ParseError
        }
    }
}

/// Number of experiments in the manifest; zero for a null handle.
///
/// # Safety
/// `m` must be a live handle from a parse call or null.
#[no_mangle]
pub unsafe extern "C" fn fedsa_manifest_experiment_count(m: *const FedsaManifest) -> usize {
    if m.is_null() {
        return 0;
    }
    (&*m).inner.experiments.len()
}

/// Fetch an experiment id by index as a newly allocated string.
///
/// # Safety
/// `m` must be a live handle; `out` must point to writable pointer storage.
/// Free the result with `fedsa_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fedsa_manifest_experiment_id(
    m: *const FedsaManifest,
    index: usize,
    out: *mut *mut c_char,
) -> FedsaStatus {
    if m.is_null() || out.is_null() {
        set_error("null argument");
        return FedsaStatus::NullArgument;
    }
    match (&*m).inner.experiments.get(index) {
        Some((id, _)) => give_string(id, out),
        None => {
            set_error(format!("experiment index {index} out of range"));
            FedsaStatus::OutOfRange
        }
    }
}

/// Run every experiment in the manifest. Individual experiment failures do
/// not abort the batch; they surface as entries with `ok == false`. When
/// `out_dir` is non-null, per-round CSVs and summary JSONs are written
/// there, overriding the manifest's own output directory.
///
/// # Safety
/// `m` must be a live manifest handle; `out_dir` null or NUL-terminated;
/// `out` must point to writable pointer storage. Free the result with
/// `fedsa_report_free`.
#[no_mangle]
pub unsafe extern "C" fn fedsa_manifest_run(
    m: *const FedsaManifest,
    out_dir: *const c_char,
    out: *mut *mut FedsaReport,
) -> FedsaStatus {
    if m.is_null() || out.is_null() {
        set_error("null argument");
        return FedsaStatus::NullArgument;
    }
    let mut manifest = (&*m).inner.clone();
    if !out_dir.is_null() {
        match cstr_arg(out_dir) {
            Ok(dir) => manifest.out_dir = PathBuf::from(dir),
            Err(status) => return status,
        }
    }
    if let Err(e) = std::fs::create_dir_all(&manifest.out_dir) {
        set_error(format!("{}: {e}", manifest.out_dir.display()));
        return FedsaStatus::RunError;
    }
    let mut entries = Vec::with_capacity(manifest.experiments.len());
    for (id, config) in &manifest.experiments {
        match sim::run_experiment(config) {
            Ok(result) => {
                let csv_name = format!("{id}.rounds.csv");
                let write = report::write_rounds_csv(
                    &manifest.out_dir.join(&csv_name),
                    &result.records,
                )
                .and_then(|()| {
                    let summary = report::experiment_summary(id, &result, &csv_name);
                    report::write_summary_json(
                        &manifest.out_dir.join(format!("{id}.summary.json")),
                        &summary,
                    )
                });
                let detection = sim::detection_rate(&result.records).unwrap_or(-1.0);
                match write {
                    Ok(()) => entries.push(ReportEntry {
                        id: id.clone(),
                        stats: FedsaExperimentStats {
                            ok: true,
                            final_accuracy_pct: result.final_accuracy * 100.0,
                            final_delta_pct: result.final_delta,
                            rounds: result.config.rounds,
                            detection_rate: detection,
                        },
                        error: None,
                    }),
                    Err(e) => entries.push(ReportEntry {
                        id: id.clone(),
                        stats: failed_stats(),
                        error: Some(e.to_string()),
                    }),
                }
            }
            Err(e) => entries.push(ReportEntry {
                id: id.clone(),
                stats: failed_stats(),
                error: Some(e.to_string()),
            }),
        }
    }
    *out = Box::into_raw(Box::new(FedsaReport { entries }));
    FedsaStatus::Ok
}

fn failed_stats() -> FedsaExperimentStats {
    FedsaExperimentStats {
        ok: false,
        final_accuracy_pct: f64::NAN,
        final_delta_pct: f64::NAN,
        rounds: 0,
        detection_rate: -1.0,
    }
}

/// Number of entries in a run report.
///
/// # Safety
/// `r` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn fedsa_report_len(r: *const FedsaReport) -> usize {
    if r.is_null() {
        return 0;
    }
    (&*r).entries.len()
}

/// Copy one entry's stats into caller storage.
///
/// # Safety
/// `r` must be a live report handle; `stats` must point to writable storage
/// for one `FedsaExperimentStats`.
#[no_mangle]
pub unsafe extern "C" fn fedsa_report_entry(
    r: *const FedsaReport,
    index: usize,
    stats: *mut FedsaExperimentStats,
) -> FedsaStatus {
    if r.is_null() || stats.is_null() {
        set_error("null argument");
        return FedsaStatus::NullArgument;
    }
    match (&*r).entries.get(index) {
        Some(entry) => {
            *stats = entry.stats;
            FedsaStatus::Ok
        }
        None => {
            set_error(format!("report index {index} out of range"));
            FedsaStatus::OutOfRange
        }
    }
}

/// Fetch an entry's experiment id as a newly allocated string.
///
/// # Safety
/// As for `fedsa_report_entry`; free the result with `fedsa_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fedsa_report_entry_id(
    r: *const FedsaReport,
    index: usize,
    out: *mut *mut c_char,
) -> FedsaStatus {
    if r.is_null() || out.is_null() {
        set_error("null argument");
        return FedsaStatus::NullArgument;
    }
    match (&*r).entries.get(index) {
        Some(entry) => give_string(&entry.id, out),
        None => {
            set_error(format!("report index {index} out of range"));
            FedsaStatus::OutOfRange
        }
    }
}

/// Fetch an entry's failure message (empty string when it succeeded).
///
/// # Safety
/// As for `fedsa_report_entry_id`.
#[no_mangle]
pub unsafe extern "C" fn fedsa_report_entry_error(
    r: *const FedsaReport,
    index: usize,
    out: *mut *mut c_char,
) -> FedsaStatus {
    if r.is_null() || out.is_null() {
        set_error("null argument");
        return FedsaStatus::NullArgument;
    }
    match (&*r).entries.get(index) {
        Some(entry) => give_string(entry.error.as_deref().unwrap_or(""), out),
        None => {
            set_error(format!("report index {index} out of range"));
            FedsaStatus::OutOfRange
        }
    }
}

/// RMS deviation of the discrete sliding-mode scalar plant from the
/// closed-form error trajectory; a dependency-free smoke test for bindings.
///
/// # Safety
/// `rms_out` must point to writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn fedsa_scalar_plant_rms(
    k: f64,
    c: f64,
    e0: f64,
    control_gain: f64,
    dt: f64,
    steps: usize,
    rms_out: *mut f64,
) -> FedsaStatus {
    if rms_out.is_null() {
        set_error("null output argument");
        return FedsaStatus::NullArgument;
    }
    match simulate_scalar_plant(k, c, e0, control_gain, dt, steps) {
        Ok(traj) => {
            let mut sq = 0.0;
            for (n, &e) in traj.iter().enumerate() {
                let t = n as f64 * dt;
                let exact = (e0 + c / k) * (-k * t).exp() - c / k;
                sq += (e - exact) * (e - exact);
            }
            *rms_out = (sq / traj.len() as f64).sqrt();
            FedsaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            FedsaStatus::RunError
        }
    }
}

/// Release a manifest handle.
///
/// # Safety
/// `m` must be null or a pointer from a parse call, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedsa_manifest_free(m: *mut FedsaManifest) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Release a report handle.
///
/// # Safety
/// `r` must be null or a pointer from `fedsa_manifest_run`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedsa_report_free(r: *mut FedsaReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Release a string handed out by this library.
///
/// # Safety
/// `s` must be null or a pointer from a fedsa function, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedsa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
