//! C interface to the static-analysis half of the pipeline: IR loading and
//! linking, reachability plus rule evaluation, and a few pure helpers.
//!
//! Every fallible call returns a [`PagentStatus`]; on failure a description is
//! available from [`pagent_last_error_message`] on the same thread. Handles
//! and strings returned through out-parameters are owned by the caller and
//! must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pagent_core::dynenv::assign_sanitizer;
use pagent_core::ir::{link_modules, load_ir_module, normalize_signature, IRProgram};
use pagent_core::pipeline::analyze_program;
use pagent_core::rules::{builtin_rules, VulnReport};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PagentStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Analysis = 5,
    Internal = 6,
}

/// Parsed and possibly linked IR program.
pub struct PagentProgram(IRProgram);

/// Vulnerability report produced by [`pagent_analyze`].
pub struct PagentReport(VulnReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: PagentStatus, msg: impl Into<String>) -> PagentStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PagentStatus) -> PagentStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(PagentStatus::Internal, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PagentStatus> {
    if p.is_null() {
        return Err(fail(PagentStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PagentStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> PagentStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            PagentStatus::Ok
        }
        Err(_) => fail(PagentStatus::Internal, "string contains NUL"),
    }
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pagent_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pagent_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses textual IR.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pagent_program_load(text: *const c_char, out: *mut *mut PagentProgram) -> PagentStatus {
    guard(|| {
        if out.is_null() {
            return fail(PagentStatus::NullArgument, "out is NULL");
        }
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match load_ir_module(text) {
            Ok(p) => {
                put(out, PagentProgram(p));
                PagentStatus::Ok
            }
            Err(e) => fail(PagentStatus::Parse, e.to_string()),
        }
    })
}

/// Reads and parses a `.ll` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pagent_program_load_file(path: *const c_char, out: *mut *mut PagentProgram) -> PagentStatus {
    guard(|| {
        if out.is_null() {
            return fail(PagentStatus::NullArgument, "out is NULL");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => Path::new(p),
            Err(s) => return s,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(PagentStatus::Io, format!("{}: {e}", path.display())),
        };
        match load_ir_module(&text) {
            Ok(p) => {
                put(out, PagentProgram(p));
                PagentStatus::Ok
            }
            Err(e) => fail(PagentStatus::Parse, format!("{}: {e}", path.display())),
        }
    })
}

/// Links `count` programs into a new one; the inputs stay owned by the caller.
///
/// # Safety
/// `programs` must point to `count` valid handles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pagent_program_link(
    programs: *const *const PagentProgram,
    count: usize,
    out: *mut *mut PagentProgram,
) -> PagentStatus {
    guard(|| {
        if out.is_null() || (programs.is_null() && count > 0) {
            return fail(PagentStatus::NullArgument, "programs or out is NULL");
        }
        let mut modules = Vec::with_capacity(count);
        for i in 0..count {
            let p = *programs.add(i);
            if p.is_null() {
                return fail(PagentStatus::NullArgument, format!("programs[{i}] is NULL"));
            }
            modules.push((*p).0.clone());
        }
        put(out, PagentProgram(link_modules(modules)));
        PagentStatus::Ok
    })
}

/// Number of functions (definitions and declarations); 0 for NULL.
///
/// # Safety
/// `program` must be NULL or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pagent_program_function_count(program: *const PagentProgram) -> usize {
    program.as_ref().map_or(0, |p| p.0.functions.len())
}

/// # Safety
/// `program` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn pagent_program_free(program: *mut PagentProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Runs reachability and the builtin rules.
///
/// `entrypoints` may be NULL when `entrypoint_count` is 0; harness and `main`
/// functions are always added. `module_qualifier` may be NULL.
///
/// # Safety
/// All non-NULL pointers must be valid; `entrypoints` must hold
/// `entrypoint_count` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pagent_analyze(
    program: *const PagentProgram,
    entrypoints: *const *const c_char,
    entrypoint_count: usize,
    module_qualifier: *const c_char,
    out: *mut *mut PagentReport,
) -> PagentStatus {
    guard(|| {
        let Some(program) = program.as_ref() else {
            return fail(PagentStatus::NullArgument, "program is NULL");
        };
        if out.is_null() || (entrypoints.is_null() && entrypoint_count > 0) {
            return fail(PagentStatus::NullArgument, "entrypoints or out is NULL");
        }
        let mut eps = Vec::with_capacity(entrypoint_count);
        for i in 0..entrypoint_count {
            match str_arg(*entrypoints.add(i), "entrypoint") {
                Ok(s) => eps.push(s.to_string()),
                Err(s) => return s,
            }
        }
        let qualifier = if module_qualifier.is_null() {
            None
        } else {
            match str_arg(module_qualifier, "module_qualifier") {
                Ok(s) => Some(s.to_string()),
                Err(s) => return s,
            }
        };
        match analyze_program(program.0.clone(), &eps, qualifier, &builtin_rules()) {
            Ok(a) => {
                put(out, PagentReport(a.report));
                PagentStatus::Ok
            }
            Err(e) => fail(PagentStatus::Analysis, e.to_string()),
        }
    })
}

/// Number of report entries; 0 for NULL.
///
/// # Safety
/// `report` must be NULL or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pagent_report_len(report: *const PagentReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.len())
}

/// Serializes the report as JSON; free the result with [`pagent_string_free`].
///
/// # Safety
/// `report` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pagent_report_to_json(report: *const PagentReport, out: *mut *mut c_char) -> PagentStatus {
    guard(|| {
        let Some(report) = report.as_ref() else {
            return fail(PagentStatus::NullArgument, "report is NULL");
        };
        if out.is_null() {
            return fail(PagentStatus::NullArgument, "out is NULL");
        }
        put_string(out, report.0.to_json())
    })
}

/// # Safety
/// `report` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn pagent_report_free(report: *mut PagentReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Canonical signature key of an IR function type such as `i1 (%struct.bfd*, i8*)`.
///
/// # Safety
/// `raw` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pagent_normalize_signature(raw: *const c_char, out: *mut *mut c_char) -> PagentStatus {
    guard(|| {
        if out.is_null() {
            return fail(PagentStatus::NullArgument, "out is NULL");
        }
        let raw = match str_arg(raw, "raw") {
            Ok(r) => r,
            Err(s) => return s,
        };
        match normalize_signature(raw) {
            Ok(k) => put_string(out, k.as_str().to_string()),
            Err(e) => fail(PagentStatus::Parse, e.to_string()),
        }
    })
}

/// Sanitizer name (`address`, `memory` or `undefined`) for a vulnerability
/// type as a static string. NULL or non-UTF-8 input yields `address`.
///
/// # Safety
/// `vuln_type` must be NULL or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pagent_assign_sanitizer(vuln_type: *const c_char) -> *const c_char {
    let ty = if vuln_type.is_null() {
        ""
    } else {
        CStr::from_ptr(vuln_type).to_str().unwrap_or("")
    };
    match assign_sanitizer(ty).as_str() {
        "memory" => c"memory".as_ptr(),
        "undefined" => c"undefined".as_ptr(),
        _ => c"address".as_ptr(),
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn pagent_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
