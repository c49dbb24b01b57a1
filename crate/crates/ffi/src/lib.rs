//! C interface to flavornet: RMSG labels and models, Graph WaveNet
//! forecasters and traffic metrics.
//!
//! Every fallible call returns an [`FnStatus`]. On failure the message is
//! available from [`fn_last_error`] on the same thread until the next call.
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use flavornet::backbone::{wavenet_predict, WaveNet, WaveNetConfig};
use flavornet::graphs::{AdjacencySet, Graph};
use flavornet::rmsg::{rmsg_labels, train_rmsg, RmsgConfig, RmsgModel, RmsgSample};
use flavornet::tensorgrad::Tensor;
use flavornet::traffic::traffic_metrics;
use flavornet::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FnStatus {
    Ok = 0,
    Shape = 1,
    Contract = 2,
    Domain = 3,
    NonFinite = 4,
    Kink = 5,
    Load = 6,
    Config = 7,
    Diverged = 8,
    AllTrialsFailed = 9,
    Io = 10,
    Json = 11,
    NullPointer = 12,
    InvalidUtf8 = 13,
    Panic = 14,
}

impl From<&Error> for FnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) => FnStatus::Shape,
            Error::Contract(_) => FnStatus::Contract,
            Error::Domain(_) => FnStatus::Domain,
            Error::NonFinite { .. } => FnStatus::NonFinite,
            Error::Kink { .. } => FnStatus::Kink,
            Error::Load { .. } => FnStatus::Load,
            Error::Config(_) => FnStatus::Config,
            Error::Diverged { .. } => FnStatus::Diverged,
            Error::AllTrialsFailed { .. } => FnStatus::AllTrialsFailed,
            Error::Io(_) => FnStatus::Io,
            Error::Json(_) => FnStatus::Json,
        }
    }
}

/// A trained RMSG model with its test metrics.
pub struct FnRmsgModel {
    model: RmsgModel,
    test_rmse: f64,
    test_r2: f64,
}

/// A Graph WaveNet forecaster.
pub struct FnWaveNet {
    model: WaveNet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(FnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(FnStatus::from(&e), e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> FnStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FnStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            FnStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(FnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> std::result::Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> std::result::Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> std::result::Result<Option<String>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(|s| Some(s.to_string()))
        .map_err(|_| Failure(FnStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn json<T: serde::de::DeserializeOwned + Default>(text: Option<String>) -> std::result::Result<T, Failure> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(&t).map_err(|e| Error::Config(e.to_string()).into()),
    }
}

unsafe fn undirected(n_nodes: usize, edges: *const u32, n_edges: usize) -> std::result::Result<Graph, Failure> {
    let pairs = slice(edges, 2 * n_edges, "edges")?;
    let list = pairs.chunks_exact(2).map(|p| (p[0] as usize, p[1] as usize, 1.0)).collect();
    Ok(Graph::new(n_nodes, false, list)?)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn fn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// RMSG labels of an unweighted undirected graph. `edges` holds `n_edges`
/// `(i, j)` pairs; `x` and `out` hold `n_nodes` values.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fn_rmsg_labels(n_nodes: usize, edges: *const u32, n_edges: usize, x: *const f64, out: *mut f64) -> FnStatus {
    guard(|| {
        let g = undirected(n_nodes, edges, n_edges)?;
        let y = rmsg_labels(&g, slice(x, n_nodes, "x")?)?;
        slice_mut(out, n_nodes, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Trains an RMSG model. `config_json` is an RMSG config object (fields
/// not given keep their defaults) or null for the defaults.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_rmsg_train(config_json: *const c_char, seed: u64, out: *mut *mut FnRmsgModel) -> FnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config: RmsgConfig = json(string(config_json, "config_json")?)?;
        let trained = train_rmsg(&config, seed)?;
        let handle = FnRmsgModel {
            model: trained.model,
            test_rmse: trained.test.rmse,
            test_r2: trained.test.r2,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Test-stream RMSE and R² of a trained model.
///
/// # Safety
/// `model` must come from [`fn_rmsg_train`]; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_rmsg_test_metrics(model: *const FnRmsgModel, rmse: *mut f64, r2: *mut f64) -> FnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if rmse.is_null() || r2.is_null() {
            return Err(null("output"));
        }
        *rmse = m.test_rmse;
        *r2 = m.test_r2;
        Ok(())
    })
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from [`fn_rmsg_train`].
#[no_mangle]
pub unsafe extern "C" fn fn_rmsg_param_count(model: *const FnRmsgModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.param_count())
}

/// Per-node predictions on one graph, in the layout of [`fn_rmsg_labels`].
///
/// # Safety
/// `model` must come from [`fn_rmsg_train`]; pointers must be valid for the
/// stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fn_rmsg_predict(
    model: *const FnRmsgModel,
    n_nodes: usize,
    edges: *const u32,
    n_edges: usize,
    x: *const f64,
    out: *mut f64,
) -> FnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let sample = RmsgSample {
            graph: undirected(n_nodes, edges, n_edges)?,
            x: slice(x, n_nodes, "x")?.to_vec(),
            y: vec![0.0; n_nodes],
        };
        let h = m.model.predict(&sample)?;
        slice_mut(out, n_nodes, "out")?.copy_from_slice(&h);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from [`fn_rmsg_train`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fn_rmsg_free(model: *mut FnRmsgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fresh forecaster from a WaveNet config object, or the defaults when null.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_wavenet_new(config_json: *const c_char, seed: u64, out: *mut *mut FnWaveNet) -> FnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config: WaveNetConfig = json(string(config_json, "config_json")?)?;
        let model = WaveNet::new(&config, seed)?;
        *out = Box::into_raw(Box::new(FnWaveNet { model }));
        Ok(())
    })
}

/// Loads a forecaster saved by [`fn_wavenet_save`] or `flavornet traffic train`.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_wavenet_load(dir: *const c_char, out: *mut *mut FnWaveNet) -> FnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = string(dir, "dir")?.ok_or_else(|| null("dir"))?;
        let model = WaveNet::load(&PathBuf::from(dir))?;
        *out = Box::into_raw(Box::new(FnWaveNet { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fn_wavenet_save(model: *const FnWaveNet, dir: *const c_char) -> FnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let dir = string(dir, "dir")?.ok_or_else(|| null("dir"))?;
        Ok(m.model.save(&PathBuf::from(dir))?)
    })
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn fn_wavenet_param_count(model: *const FnWaveNet) -> usize {
    model.as_ref().map_or(0, |m| m.model.param_count())
}

/// Shape of the model: sensors, input features, observation and forecast
/// window lengths. Null outputs are skipped.
///
/// # Safety
/// `model` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_wavenet_dims(
    model: *const FnWaveNet,
    n_nodes: *mut usize,
    in_dim: *mut usize,
    obs_window: *mut usize,
    forecast_window: *mut usize,
) -> FnStatus {
    guard(|| {
        let c = &model.as_ref().ok_or_else(|| null("model"))?.model.config;
        for (p, v) in [(n_nodes, c.n_nodes), (in_dim, c.in_dim), (obs_window, c.obs_window), (forecast_window, c.forecast_window)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Forecast from scaled inputs. `adjacency` is the dense `n × n` road graph
/// (row-major); `window` is `[batch, in_dim, n, obs_window]` and `out`
/// receives `[batch, n, forecast_window]`, both row-major.
///
/// # Safety
/// `model` must come from this library; pointers must be valid for the
/// stated shapes.
#[no_mangle]
pub unsafe extern "C" fn fn_wavenet_predict(model: *const FnWaveNet, adjacency: *const f64, window: *const f64, batch: usize, out: *mut f64) -> FnStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let c = &m.config;
        let n = c.n_nodes;
        let a = Tensor::new(vec![n, n], slice(adjacency, n * n, "adjacency")?.to_vec())?;
        let adj = AdjacencySet::from_adjacency(&a)?;
        let shape = vec![batch, c.in_dim, n, c.obs_window];
        let len = shape.iter().product();
        let x = Tensor::new(shape, slice(window, len, "window")?.to_vec())?;
        let y = wavenet_predict(m, &x, &adj)?;
        slice_mut(out, batch * n * c.forecast_window, "out")?.copy_from_slice(y.data());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fn_wavenet_free(model: *mut FnWaveNet) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Masked forecast metrics at 1-based forecast steps `probes`. `pred`,
/// `target` and `missing` are `[batch, n, steps]` row-major; a nonzero
/// `missing` byte excludes that entry. Each of `rmse`, `mae` and `mape`
/// (percent) receives `n_probes` values; `mean_mae` pools every observed
/// entry of every step.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fn_traffic_metrics(
    pred: *const f64,
    target: *const f64,
    missing: *const u8,
    batch: usize,
    n: usize,
    steps: usize,
    probes: *const usize,
    n_probes: usize,
    rmse: *mut f64,
    mae: *mut f64,
    mape: *mut f64,
    mean_mae: *mut f64,
) -> FnStatus {
    guard(|| {
        let len = batch * n * steps;
        let shape = vec![batch, n, steps];
        let p = Tensor::new(shape.clone(), slice(pred, len, "pred")?.to_vec())?;
        let t = Tensor::new(shape, slice(target, len, "target")?.to_vec())?;
        let mask: Vec<bool> = slice(missing, len, "missing")?.iter().map(|&b| b != 0).collect();
        let report = traffic_metrics(&p, &t, &mask, slice(probes, n_probes, "probes")?)?;
        let rmse = slice_mut(rmse, n_probes, "rmse")?;
        let mae = slice_mut(mae, n_probes, "mae")?;
        let mape = slice_mut(mape, n_probes, "mape")?;
        for (i, h) in report.horizons.iter().enumerate() {
            rmse[i] = h.rmse;
            mae[i] = h.mae;
            mape[i] = h.mape;
        }
        if let Some(m) = mean_mae.as_mut() {
            *m = report.mean_mae;
        }
        Ok(())
    })
}
