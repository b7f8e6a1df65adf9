//! C ABI over the deep-eprop gradient engines.
//!
//! Handles are opaque and owned by the caller once returned; each has a
//! matching `*_free`. Every fallible call returns a [`DeStatus`] and, on
//! failure, leaves a message readable through [`de_last_error_message`] on
//! the same thread. Parameters and gradients cross the boundary as flat
//! `double` buffers in the network's canonical group order, each group
//! row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use deep_eprop::eprop::TraceMode;
use deep_eprop::linalg::{Matrix, OpCounter};
use deep_eprop::network::{init_params, parse_spec, Network, ParamGroup, Params};
use deep_eprop::trainer::{episode_gradient, Algorithm};
use deep_eprop::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Argument = 5,
    Shape = 6,
    ResourceLimit = 7,
    BufferSize = 8,
    Internal = 9,
    Panic = 10,
}

/// A validated network together with the seed its spec names.
pub struct DeNetwork {
    net: Network,
    spec_seed: u64,
}

pub struct DeParams {
    params: Params,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: DeStatus, msg: impl Into<String>) -> DeStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> DeStatus {
    match e {
        Error::Shape { .. } => DeStatus::Shape,
        Error::Parse { .. } => DeStatus::Parse,
        Error::Validation(_) => DeStatus::Validation,
        Error::Argument(_) => DeStatus::Argument,
        Error::ResourceLimit { .. } => DeStatus::ResourceLimit,
        Error::Divergence { .. } | Error::Internal(_) | Error::Io(_) => DeStatus::Internal,
    }
}

/// Runs `f`, mapping core errors and panics onto status codes.
fn guard(f: impl FnOnce() -> Result<(), DeStatus>) -> DeStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DeStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DeStatus::Panic, "panic inside deep-eprop"),
    }
}

fn check(r: deep_eprop::Result<()>) -> Result<(), DeStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn lift<T>(r: deep_eprop::Result<T>) -> Result<T, DeStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DeStatus> {
    if p.is_null() {
        return Err(fail(DeStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DeStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, DeStatus> {
    p.as_ref()
        .ok_or_else(|| fail(DeStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], DeStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DeStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, want: usize, what: &str) -> Result<&'a mut [f64], DeStatus> {
    if len != want {
        return Err(fail(
            DeStatus::BufferSize,
            format!("{what} holds {len} values, expected {want}"),
        ));
    }
    if want == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(DeStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn param_len(net: &Network) -> usize {
    net.groups().iter().map(|g| g.len()).sum()
}

/// Message for the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn de_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses and validates a JSON network spec.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
/// On success `*out` owns a handle to release with [`de_network_free`].
#[no_mangle]
pub unsafe extern "C" fn de_network_from_spec_json(
    json: *const c_char,
    out: *mut *mut DeNetwork,
) -> DeStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(DeStatus::NullPointer, "out is null"));
        }
        let spec = lift(parse_spec(str_arg(json, "json")?))?;
        let net = lift(Network::build(&spec))?;
        let handle = DeNetwork {
            net,
            spec_seed: spec.seed(),
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle from [`de_network_from_spec_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn de_network_free(net: *mut DeNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live network handle.
#[no_mangle]
pub unsafe extern "C" fn de_network_input_dim(net: *const DeNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.input_dim)
}

/// # Safety
/// `net` must be a live network handle.
#[no_mangle]
pub unsafe extern "C" fn de_network_readout_dim(net: *const DeNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.readout_dim)
}

/// Total number of scalar parameters, the length of every parameter and
/// gradient buffer for this network.
///
/// # Safety
/// `net` must be a live network handle.
#[no_mangle]
pub unsafe extern "C" fn de_network_param_count(net: *const DeNetwork) -> usize {
    net.as_ref().map_or(0, |n| param_len(&n.net))
}

/// The seed named in the spec.
///
/// # Safety
/// `net` must be a live network handle.
#[no_mangle]
pub unsafe extern "C" fn de_network_spec_seed(net: *const DeNetwork) -> u64 {
    net.as_ref().map_or(0, |n| n.spec_seed)
}

/// Draws initial parameters for `net` from `seed`.
///
/// # Safety
/// `net` must be a live network handle and `out` writable. On success
/// `*out` owns a handle to release with [`de_params_free`].
#[no_mangle]
pub unsafe extern "C" fn de_params_init(
    net: *const DeNetwork,
    seed: u64,
    out: *mut *mut DeParams,
) -> DeStatus {
    guard(|| {
        let net = ref_arg(net, "net")?;
        if out.is_null() {
            return Err(fail(DeStatus::NullPointer, "out is null"));
        }
        let params = init_params(&net.net, seed);
        *out = Box::into_raw(Box::new(DeParams { params }));
        Ok(())
    })
}

/// # Safety
/// `params` must be null or a handle from [`de_params_init`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn de_params_free(params: *mut DeParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Copies all parameters into `buf`, which must hold exactly
/// [`de_network_param_count`] values.
///
/// # Safety
/// `params` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn de_params_read(params: *const DeParams, buf: *mut f64, len: usize) -> DeStatus {
    guard(|| {
        let params = ref_arg(params, "params")?;
        let dst = out_slice(buf, len, params.params.scalar_count(), "buf")?;
        let mut at = 0;
        for (_, m) in params.params.iter() {
            dst[at..at + m.len()].copy_from_slice(m.as_slice());
            at += m.len();
        }
        Ok(())
    })
}

/// Overwrites all parameters from `buf`, laid out as in [`de_params_read`].
///
/// # Safety
/// `net` and `params` must be live handles, `params` created for `net`, and
/// `buf` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn de_params_write(
    net: *const DeNetwork,
    params: *mut DeParams,
    buf: *const f64,
    len: usize,
) -> DeStatus {
    guard(|| {
        let net = ref_arg(net, "net")?;
        let params = params
            .as_mut()
            .ok_or_else(|| fail(DeStatus::NullPointer, "params is null"))?;
        let want = param_len(&net.net);
        if len != want {
            return Err(fail(
                DeStatus::BufferSize,
                format!("buf holds {len} values, expected {want}"),
            ));
        }
        let src = slice_arg(buf, len, "buf")?;
        let mut at = 0;
        let mut groups = Vec::with_capacity(net.net.group_count());
        for info in net.net.groups() {
            let m = lift(Matrix::from_vec(
                info.rows,
                info.cols,
                src[at..at + info.len()].to_vec(),
            ))?;
            at += info.len();
            groups.push(ParamGroup {
                id: info.id.clone(),
                matrix: m,
            });
        }
        params.params = lift(Params::from_groups(&net.net, groups))?;
        Ok(())
    })
}

/// Gradient of the episode loss under `algorithm`, written to `grad` in the
/// parameter layout. Groups the network does not track are zero.
///
/// `algorithm` is one of `bptt`, `rtrl`, `deep_rtrl`, `eprop`, `deep_eprop`.
/// `trace_mode` is `diag_everywhere`, `diag_home_dense_above`, or null for
/// the spec's mode. `inputs` holds `steps` rows of the input width;
/// `targets` holds `target_rows` rows of the readout width, one per step or
/// a single row when the loss is final-only. `loss` may be null.
///
/// # Safety
/// Handles must be live and `params` created for `net`. Buffers must be
/// valid for the lengths implied above and `grad` for `grad_len` writes.
#[no_mangle]
pub unsafe extern "C" fn de_gradient(
    net: *const DeNetwork,
    params: *const DeParams,
    algorithm: *const c_char,
    trace_mode: *const c_char,
    inputs: *const f64,
    steps: usize,
    targets: *const f64,
    target_rows: usize,
    grad: *mut f64,
    grad_len: usize,
    loss: *mut f64,
) -> DeStatus {
    guard(|| {
        let base = &ref_arg(net, "net")?.net;
        let params = &ref_arg(params, "params")?.params;
        let algorithm: Algorithm = lift(str_arg(algorithm, "algorithm")?.parse())?;
        let moded;
        let net = if trace_mode.is_null() {
            base
        } else {
            let mode: TraceMode = lift(str_arg(trace_mode, "trace_mode")?.parse())?;
            moded = lift(base.clone().with_trace_mode(mode))?;
            &moded
        };
        let mode = net.trace_mode;
        let (dx, dy) = (net.input_dim, net.readout_dim);
        let xs = slice_arg(inputs, steps * dx, "inputs")?;
        let ys = slice_arg(targets, target_rows * dy, "targets")?;
        let xs: Vec<Vec<f64>> = xs.chunks(dx).map(<[f64]>::to_vec).collect();
        let ys: Vec<Vec<f64>> = ys.chunks(dy).map(<[f64]>::to_vec).collect();
        check(net.check_episode(&xs, &ys))?;
        let dst = out_slice(grad, grad_len, param_len(net), "grad")?;

        let mut ops = OpCounter::new();
        let g = lift(episode_gradient(algorithm, mode, net, params, &xs, &ys, &mut ops))?;
        let mut at = 0;
        for info in net.groups() {
            let part = &mut dst[at..at + info.len()];
            match g.get(&info.id) {
                Some(m) => part.copy_from_slice(m.as_slice()),
                None => part.fill(0.0),
            }
            at += info.len();
        }
        if !loss.is_null() {
            *loss = lift(net.loss(params, &xs, &ys))?;
        }
        Ok(())
    })
}
