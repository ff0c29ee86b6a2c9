//! C ABI over the `cvxnn` library.
//!
//! Objects are opaque handles created by `*_create`/producer functions and
//! released by the matching `*_free`. Every fallible function returns a
//! [`CvxnnStatus`]; on failure [`cvxnn_last_error`] describes the cause.
//! Matrices are passed row-major. No function panics across the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cvxnn::arrangements::{count_bound, enumerate_exact, sample_gaussian, PatternSet};
use cvxnn::mapping::{convex_to_network, network_forward, NetworkParams};
use cvxnn::program::ConvexProgram;
use cvxnn::solvers::{solve_admm, solve_conic, solve_penalized, SolveStatus, SolverConfig};
use cvxnn::{ActivationSpec, DataMatrix, Error, LabelData};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvxnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NotConverged = 4,
    RankTooLarge = 5,
    Unsupported = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvxnnSolver {
    Conic = 0,
    Admm = 1,
    Penalized = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CvxnnTrainOptions {
    pub beta: f64,
    /// Leaky slope; 0 is ReLU.
    pub kappa: f64,
    pub solver: CvxnnSolver,
    /// 0 keeps the library default.
    pub max_iters: usize,
    /// Relative tolerance; 0 keeps the library default.
    pub tol: f64,
}

/// Features with optional labels.
pub struct CvxnnDataset {
    data: DataMatrix,
    labels: Option<LabelData>,
    bias: bool,
}

pub struct CvxnnPatterns {
    set: PatternSet,
}

/// Trained convex model and its reconstructed network.
pub struct CvxnnModel {
    network: NetworkParams,
    objective: f64,
    bias: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> CvxnnStatus {
    match e {
        Error::InvalidArgument(_) => CvxnnStatus::InvalidArgument,
        Error::RankTooLarge { .. } => CvxnnStatus::RankTooLarge,
        Error::Unsupported(_) => CvxnnStatus::Unsupported,
        Error::Lp(_) | Error::Diverged(_) => CvxnnStatus::NotConverged,
        Error::Shape(_) | Error::Data(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) => CvxnnStatus::DataError,
    }
}

/// Runs `f`, recording errors and converting panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (CvxnnStatus, String)>) -> CvxnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CvxnnStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CvxnnStatus::Panic
        }
    }
}

fn lib(e: Error) -> (CvxnnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (CvxnnStatus, String) {
    (CvxnnStatus::NullPointer, format!("{name} is null"))
}

unsafe fn matrix<'a>(ptr: *const f64, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>, (CvxnnStatus, String)> {
    if ptr.is_null() {
        return Err(null(name));
    }
    let len = rows.checked_mul(cols).ok_or((CvxnnStatus::InvalidArgument, format!("{name} is too large")))?;
    let slice: &'a [f64] = std::slice::from_raw_parts(ptr, len);
    Ok(DMatrix::from_row_slice(rows, cols, slice))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn cvxnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Defaults: ReLU, beta = 1e-3, conic solver, library tolerances.
#[no_mangle]
pub extern "C" fn cvxnn_train_options_default() -> CvxnnTrainOptions {
    CvxnnTrainOptions { beta: 1e-3, kappa: 0.0, solver: CvxnnSolver::Conic, max_iters: 0, tol: 0.0 }
}

/// Copies `n × d` row-major features and, when `y` is non-null, `n × outputs`
/// row-major labels. `bias != 0` appends a ones column.
#[no_mangle]
pub unsafe extern "C" fn cvxnn_dataset_create(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    outputs: usize,
    bias: i32,
    out: *mut *mut CvxnnDataset,
) -> CvxnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if n == 0 || d == 0 {
            return Err((CvxnnStatus::InvalidArgument, "data must have at least one row and column".into()));
        }
        let xm = matrix(x, n, d, "x")?;
        let data = if bias != 0 { DataMatrix::with_bias(xm) } else { DataMatrix::new(xm) }.map_err(lib)?;
        let labels = if y.is_null() { None } else { Some(LabelData::new(matrix(y, n, outputs, "y")?).map_err(lib)?) };
        *out = Box::into_raw(Box::new(CvxnnDataset { data, labels, bias: bias != 0 }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvxnn_dataset_free(ds: *mut CvxnnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Every activation pattern of the dataset's feature rows.
#[no_mangle]
pub unsafe extern "C" fn cvxnn_enumerate(ds: *const CvxnnDataset, out: *mut *mut CvxnnPatterns) -> CvxnnStatus {
    guard(|| {
        let (Some(ds), false) = (ds.as_ref(), out.is_null()) else {
            return Err(null("dataset or out"));
        };
        *out = ptr::null_mut();
        let set = enumerate_exact(&ds.data).map_err(lib)?;
        *out = Box::into_raw(Box::new(CvxnnPatterns { set }));
        Ok(())
    })
}

/// Patterns hit by `count` seeded Gaussian directions.
#[no_mangle]
pub unsafe extern "C" fn cvxnn_sample(
    ds: *const CvxnnDataset,
    count: usize,
    seed: u64,
    out: *mut *mut CvxnnPatterns,
) -> CvxnnStatus {
    guard(|| {
        let (Some(ds), false) = (ds.as_ref(), out.is_null()) else {
            return Err(null("dataset or out"));
        };
        *out = ptr::null_mut();
        let set = sample_gaussian(&ds.data, count, seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(CvxnnPatterns { set }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvxnn_patterns_count(p: *const CvxnnPatterns, out: *mut usize) -> CvxnnStatus {
    guard(|| {
        let (Some(p), false) = (p.as_ref(), out.is_null()) else {
            return Err(null("patterns or out"));
        };
        *out = p.set.len();
        Ok(())
    })
}

/// Writes pattern `index` as `n` bytes of 0/1 into `bits` (length `len`).
#[no_mangle]
pub unsafe extern "C" fn cvxnn_patterns_get(
    p: *const CvxnnPatterns,
    index: usize,
    bits: *mut u8,
    len: usize,
) -> CvxnnStatus {
    guard(|| {
        let (Some(p), false) = (p.as_ref(), bits.is_null()) else {
            return Err(null("patterns or bits"));
        };
        if index >= p.set.len() {
            return Err((CvxnnStatus::InvalidArgument, format!("index {index} out of range")));
        }
        let pat = p.set.get(index).bits();
        if len < pat.len() {
            return Err((CvxnnStatus::BufferTooSmall, format!("need {} bytes", pat.len())));
        }
        let dst = std::slice::from_raw_parts_mut(bits, pat.len());
        for (d, &b) in dst.iter_mut().zip(pat) {
            *d = u8::from(b);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvxnn_patterns_free(p: *mut CvxnnPatterns) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Region-count bound for `n` hyperplanes of rank `r`, as a NUL-terminated
/// decimal string. `needed` (optional) receives the buffer size required.
#[no_mangle]
pub unsafe extern "C" fn cvxnn_count_bound(
    n: usize,
    r: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> CvxnnStatus {
    guard(|| {
        let text = count_bound(n, r).to_string();
        if !needed.is_null() {
            *needed = text.len() + 1;
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < text.len() + 1 {
            return Err((CvxnnStatus::BufferTooSmall, format!("need {} bytes", text.len() + 1)));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf as *mut u8, text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Solves the convex program over `patterns` and reconstructs the network.
/// A model is produced even when the solver stops early; the status is then
/// `NotConverged`.
#[no_mangle]
pub unsafe extern "C" fn cvxnn_train(
    ds: *const CvxnnDataset,
    patterns: *const CvxnnPatterns,
    opts: *const CvxnnTrainOptions,
    out: *mut *mut CvxnnModel,
) -> CvxnnStatus {
    guard(|| {
        let (Some(ds), Some(p), false) = (ds.as_ref(), patterns.as_ref(), out.is_null()) else {
            return Err(null("dataset, patterns or out"));
        };
        *out = ptr::null_mut();
        let o = opts.as_ref().copied().unwrap_or_else(|| cvxnn_train_options_default());
        let labels = ds.labels.clone().ok_or((CvxnnStatus::DataError, "dataset has no labels".into()))?;
        let act = ActivationSpec::new(o.kappa).map_err(lib)?;
        let prog = ConvexProgram::builder(ds.data.clone(), labels, p.set.clone())
            .activation(act)
            .beta(o.beta)
            .build()
            .map_err(lib)?;
        let mut cfg = SolverConfig::exact();
        if o.max_iters > 0 {
            cfg.max_iters = o.max_iters;
        }
        if o.tol > 0.0 {
            cfg.rel_tol = o.tol;
            cfg.obj_tol = o.tol;
        }
        let (w, report) = match o.solver {
            CvxnnSolver::Conic => solve_conic(&prog, &cfg),
            CvxnnSolver::Admm => solve_admm(&prog, &cfg),
            CvxnnSolver::Penalized => solve_penalized(&prog, &cfg),
        }
        .map_err(lib)?;
        let model = CvxnnModel { network: convex_to_network(&w, act), objective: prog.objective(&w), bias: ds.bias };
        *out = Box::into_raw(Box::new(model));
        if report.status != SolveStatus::Converged {
            return Err((CvxnnStatus::NotConverged, format!("solver stopped: {:?}", report.status)));
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvxnn_model_objective(m: *const CvxnnModel, out: *mut f64) -> CvxnnStatus {
    guard(|| {
        let (Some(m), false) = (m.as_ref(), out.is_null()) else {
            return Err(null("model or out"));
        };
        *out = m.objective;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvxnn_model_neurons(m: *const CvxnnModel, out: *mut usize) -> CvxnnStatus {
    guard(|| {
        let (Some(m), false) = (m.as_ref(), out.is_null()) else {
            return Err(null("model or out"));
        };
        *out = m.network.neurons();
        Ok(())
    })
}

/// Network output for `n × d` row-major features (without the ones column
/// even when the dataset had one); writes `n` values to `out`.
#[no_mangle]
pub unsafe extern "C" fn cvxnn_model_predict(
    m: *const CvxnnModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
    out_len: usize,
) -> CvxnnStatus {
    guard(|| {
        let (Some(m), false) = (m.as_ref(), out.is_null()) else {
            return Err(null("model or out"));
        };
        if out_len < n {
            return Err((CvxnnStatus::BufferTooSmall, format!("need {n} outputs")));
        }
        let mut xm = matrix(x, n, d, "x")?;
        if m.bias {
            xm = xm.insert_column(d, 1.0);
        }
        let f = if m.network.neurons() == 0 {
            DMatrix::zeros(n, 1)
        } else {
            network_forward(&m.network, &xm).map_err(lib)?
        };
        let dst = std::slice::from_raw_parts_mut(out, n);
        for (i, v) in dst.iter_mut().enumerate() {
            *v = f[(i, 0)];
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvxnn_model_free(m: *mut CvxnnModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
