//! C ABI over the `fedsel` simulator and its kernels.
//!
//! Every function returns a [`FedselStatus`]; on failure a message is kept
//! per thread and can be read with [`fedsel_last_error`]. Simulations are
//! opaque handles created by [`fedsel_simulation_new`] and released with
//! [`fedsel_simulation_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;
use std::sync::Arc;

use fedsel::experiment::{RoundRecord, Scenario, Simulation};
use fedsel::output::emit_csv;
use fedsel::reputation::{reputation_score, LossSign, ProspectParams};
use fedsel::selection::{solve_selection, SelectionProblem};
use fedsel::shapley::{exact_shapley, TabularGame};
use fedsel::{Error, ExperimentConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedselStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Io = 4,
    TooLarge = 5,
    /// Output buffer too small; the required length was written.
    BufferTooSmall = 6,
    /// The simulation has already run all its rounds.
    Finished = 7,
    Numeric = 8,
    Panic = 9,
}

/// A running simulation.
pub struct FedselSimulation {
    sim: Simulation,
    records: Vec<RoundRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FedselStatus {
    match err {
        Error::InvalidConfig(_) => FedselStatus::InvalidConfig,
        Error::Io { .. } | Error::IdxFormat { .. } => FedselStatus::Io,
        Error::TooLarge(_) => FedselStatus::TooLarge,
        Error::NonFinite(_) => FedselStatus::Numeric,
        _ => FedselStatus::InvalidArgument,
    }
}

fn fail(status: FedselStatus, msg: impl Into<String>) -> FedselStatus {
    set_error(msg);
    status
}

/// Runs `f`, mapping library errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<FedselStatus, FedselStatus>) -> FedselStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) | Ok(Err(s)) => s,
        Err(_) => fail(FedselStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, FedselStatus>;
}

impl<T> OrStatus<T> for fedsel::Result<T> {
    fn or_status(self) -> Result<T, FedselStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), FedselStatus> {
    if p.is_null() {
        Err(fail(FedselStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, FedselStatus> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FedselStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// Copies `src` into a caller buffer, always reporting the full length.
unsafe fn copy_out<T: Copy>(
    src: &[T],
    out: *mut T,
    capacity: usize,
    out_len: *mut usize,
) -> Result<FedselStatus, FedselStatus> {
    non_null(out_len, "out_len")?;
    *out_len = src.len();
    if capacity < src.len() {
        return Err(fail(
            FedselStatus::BufferTooSmall,
            format!("buffer holds {capacity}, need {}", src.len()),
        ));
    }
    if !src.is_empty() {
        non_null(out, "out")?;
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(FedselStatus::Ok)
}

unsafe fn sim_ref<'a>(sim: *const FedselSimulation) -> Result<&'a FedselSimulation, FedselStatus> {
    non_null(sim, "sim")?;
    Ok(&*sim)
}

unsafe fn sim_mut<'a>(sim: *mut FedselSimulation) -> Result<&'a mut FedselSimulation, FedselStatus> {
    non_null(sim, "sim")?;
    Ok(&mut *sim)
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fedsel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a simulation from a TOML configuration (empty string for defaults).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedsel_simulation_new(
    config_toml: *const c_char,
    out: *mut *mut FedselSimulation,
) -> FedselStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = c_str(config_toml, "config_toml")?;
        let cfg = ExperimentConfig::from_toml_str(text).or_status()?;
        let scenario = Arc::new(Scenario::build(&cfg).or_status()?);
        let sim = Simulation::new(cfg, scenario).or_status()?;
        *out = Box::into_raw(Box::new(FedselSimulation {
            sim,
            records: Vec::new(),
        }));
        Ok(FedselStatus::Ok)
    })
}

/// Releases a simulation. Null is accepted.
///
/// # Safety
/// `sim` must come from [`fedsel_simulation_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedsel_simulation_free(sim: *mut FedselSimulation) {
    if !sim.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(sim))));
    }
}

/// Runs one round; `out_accuracy` (optional) receives the global accuracy.
/// Returns `FINISHED` once all configured rounds have run.
///
/// # Safety
/// `sim` must be a live handle; `out_accuracy` may be null.
#[no_mangle]
pub unsafe extern "C" fn fedsel_simulation_step(
    sim: *mut FedselSimulation,
    out_accuracy: *mut f64,
) -> FedselStatus {
    guard(|| {
        let s = sim_mut(sim)?;
        if s.sim.is_finished() {
            return Err(fail(FedselStatus::Finished, "all rounds completed"));
        }
        let outcome = s.sim.step().or_status()?;
        if !out_accuracy.is_null() {
            *out_accuracy = outcome.record.global_accuracy;
        }
        s.records.push(outcome.record);
        Ok(FedselStatus::Ok)
    })
}

/// Runs all remaining rounds.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedsel_simulation_run(sim: *mut FedselSimulation) -> FedselStatus {
    guard(|| {
        let s = sim_mut(sim)?;
        let mut more = s.sim.run_with(|_| {}).or_status()?;
        s.records.append(&mut more);
        Ok(FedselStatus::Ok)
    })
}

/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedsel_simulation_rounds_completed(
    sim: *const FedselSimulation,
    out: *mut usize,
) -> FedselStatus {
    guard(|| {
        let s = sim_ref(sim)?;
        non_null(out, "out")?;
        *out = s.sim.round();
        Ok(FedselStatus::Ok)
    })
}

/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedsel_simulation_num_clients(
    sim: *const FedselSimulation,
    out: *mut usize,
) -> FedselStatus {
    guard(|| {
        let s = sim_ref(sim)?;
        non_null(out, "out")?;
        *out = s.sim.scenario().num_clients();
        Ok(FedselStatus::Ok)
    })
}

/// Ids selected in the most recent round (empty before the first round).
///
/// # Safety
/// `out` must hold `capacity` elements; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fedsel_simulation_last_selected(
    sim: *const FedselSimulation,
    out: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> FedselStatus {
    guard(|| {
        let s = sim_ref(sim)?;
        let ids = s.records.last().map_or(&[][..], |r| &r.selected_ids[..]);
        copy_out(ids, out, capacity, out_len)
    })
}

/// Current reputation of every client.
///
/// # Safety
/// `out` must hold `capacity` elements; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fedsel_simulation_reputation(
    sim: *const FedselSimulation,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> FedselStatus {
    guard(|| {
        let s = sim_ref(sim)?;
        copy_out(s.sim.reputation().reputation(), out, capacity, out_len)
    })
}

/// Writes the records so far as CSV.
///
/// # Safety
/// `sim` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedsel_simulation_write_csv(
    sim: *const FedselSimulation,
    path: *const c_char,
) -> FedselStatus {
    guard(|| {
        let s = sim_ref(sim)?;
        let path = c_str(path, "path")?;
        emit_csv(&s.records, Path::new(path)).or_status()?;
        Ok(FedselStatus::Ok)
    })
}

/// Exact budgeted selection. `out_selected[i]` is set to 1 for chosen items
/// and 0 otherwise; objective and cost pointers may be null.
///
/// # Safety
/// `weights`, `bids` and `out_selected` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn fedsel_solve_selection(
    weights: *const f64,
    bids: *const f64,
    n: usize,
    budget: f64,
    out_selected: *mut u8,
    out_objective: *mut f64,
    out_cost: *mut f64,
) -> FedselStatus {
    guard(|| {
        if n > 0 {
            non_null(weights, "weights")?;
            non_null(bids, "bids")?;
            non_null(out_selected, "out_selected")?;
        }
        let (w, b) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            (slice::from_raw_parts(weights, n).to_vec(), slice::from_raw_parts(bids, n).to_vec())
        };
        let problem = SelectionProblem::new(w, b, budget).or_status()?;
        let result = solve_selection(&problem);
        if n > 0 {
            let out = slice::from_raw_parts_mut(out_selected, n);
            out.fill(0);
            for &i in &result.selected {
                out[i] = 1;
            }
        }
        if !out_objective.is_null() {
            *out_objective = result.objective;
        }
        if !out_cost.is_null() {
            *out_cost = result.cost;
        }
        Ok(FedselStatus::Ok)
    })
}

/// Exact Shapley values of a game given as `2^players` coalition values
/// indexed by bitmask.
///
/// # Safety
/// `table` must hold `2^players` elements and `out_values` `players`.
#[no_mangle]
pub unsafe extern "C" fn fedsel_exact_shapley(
    table: *const f64,
    players: usize,
    out_values: *mut f64,
) -> FedselStatus {
    guard(|| {
        non_null(table, "table")?;
        non_null(out_values, "out_values")?;
        if players == 0 || players > fedsel::shapley::EXACT_MAX_PLAYERS {
            return Err(fail(
                FedselStatus::TooLarge,
                format!("players must lie in 1..={}", fedsel::shapley::EXACT_MAX_PLAYERS),
            ));
        }
        let values = slice::from_raw_parts(table, 1usize << players).to_vec();
        let game = TabularGame::new(values).or_status()?;
        let result = exact_shapley(&game).or_status()?;
        ptr::copy_nonoverlapping(result.values.as_ptr(), out_values, players);
        Ok(FedselStatus::Ok)
    })
}

/// Prospect-style reputation score around `threshold`. A nonzero
/// `as_printed` selects the positive loss-branch sign.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedsel_reputation_score(
    reputation: f64,
    threshold: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    as_printed: u8,
    out: *mut f64,
) -> FedselStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = ProspectParams {
            alpha,
            beta,
            gamma,
            loss_sign: if as_printed != 0 {
                LossSign::AsPrinted
            } else {
                LossSign::Negative
            },
        };
        params.validate().or_status()?;
        if !(reputation.is_finite() && threshold.is_finite()) {
            return Err(fail(FedselStatus::InvalidArgument, "non-finite input"));
        }
        *out = reputation_score(reputation, threshold, &params);
        Ok(FedselStatus::Ok)
    })
}
