//! C interface to `bta-core`.
//!
//! Every function returns a [`BtaStatus`]. On failure the message is kept in
//! thread-local storage and can be read with [`bta_last_error_message`].
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released by the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bta_core::attack::{fgsm, AttackMode, AttackSpec};
use bta_core::fixtures::demo_config;
use bta_core::forecast::{ForecastModel, Window};
use bta_core::harness::{sub_seed, Run, ScenarioConfig, Stage};
use bta_core::market::{Market, StockMeta};
use bta_core::Error;

/// Status codes. 2, 3 and 4 agree with the exit codes of the `bta` binary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BtaStatus {
    Ok = 0,
    /// Bad configuration value or unknown stage name.
    Validation = 2,
    /// A required artifact from an earlier stage is missing.
    Dependency = 3,
    /// Any other library failure (shape mismatch, rejected trade, I/O, ...).
    Runtime = 4,
    NullPointer = 5,
    /// A string argument was not UTF-8, or a length did not match.
    InvalidArgument = 6,
    Panic = 7,
}

/// Opaque trained forecaster.
pub struct BtaModel {
    inner: ForecastModel,
}

/// Opaque market state with its own spend ledger.
pub struct BtaMarket {
    inner: Market,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BtaStockMeta {
    /// NUL-terminated ticker; copied on construction.
    pub ticker: *const c_char,
    pub shares_outstanding: f64,
    pub adv: f64,
    pub lambda_impact: f64,
    pub half_spread: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BtaFill {
    pub stock: usize,
    pub shares: f64,
    pub price_before: f64,
    pub price_change: f64,
    pub cost: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BtaStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (BtaStatus::Ok, None),
        Ok(Err(Failure::Core(e))) => {
            let status = match e.exit_code() {
                2 => BtaStatus::Validation,
                3 => BtaStatus::Dependency,
                _ => BtaStatus::Runtime,
            };
            (status, Some(e.to_string()))
        }
        Ok(Err(Failure::Null(name))) => (BtaStatus::NullPointer, Some(format!("`{name}` is null"))),
        Ok(Err(Failure::Arg(msg))) => (BtaStatus::InvalidArgument, Some(msg)),
        Err(_) => (BtaStatus::Panic, Some("panic inside bta".to_string())),
    };
    match msg {
        Some(m) => set_last_error(m),
        None => LAST_ERROR.with(|e| *e.borrow_mut() = None),
    }
    status
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("`{name}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, want: usize, name: &'static str) -> Result<&'a mut [f64], Failure> {
    if len != want {
        return Err(Failure::Arg(format!("`{name}` has length {len}, expected {want}")));
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn model_ref<'a>(p: *const BtaModel) -> Result<&'a ForecastModel, Failure> {
    p.as_ref().map(|m| &m.inner).ok_or(Failure::Null("model"))
}

unsafe fn market_mut<'a>(p: *mut BtaMarket) -> Result<&'a mut Market, Failure> {
    p.as_mut().map(|m| &mut m.inner).ok_or(Failure::Null("market"))
}

fn window_for(model: &ForecastModel, x: &[f64]) -> Result<Window, Failure> {
    let want = model.window_len * model.n_inputs;
    if x.len() != want {
        return Err(Failure::Arg(format!("window has length {}, expected {want}", x.len())));
    }
    Ok(Window::new(x.to_vec(), model.window_len, model.n_inputs, model.window_len)?)
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next `bta_*` call on the same thread.
#[no_mangle]
pub extern "C" fn bta_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bta_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a model from its JSON artifact text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bta_model_from_json(json: *const c_char, out: *mut *mut BtaModel) -> BtaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let inner = ForecastModel::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(BtaModel { inner }));
        Ok(())
    })
}

/// Loads a model JSON file such as `surrogate.json` from a run directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bta_model_load(path: *const c_char, out: *mut *mut BtaModel) -> BtaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let inner = ForecastModel::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(BtaModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from a `bta_model_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bta_model_free(model: *mut BtaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Window length and number of inputs per step.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bta_model_shape(
    model: *const BtaModel,
    window_len: *mut usize,
    n_inputs: *mut usize,
) -> BtaStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out_ref(window_len, "window_len")? = m.window_len;
        *out_ref(n_inputs, "n_inputs")? = m.n_inputs;
        Ok(())
    })
}

/// Predicted next-step index log-return for a row-major `W×N` window.
///
/// # Safety
/// `x` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bta_model_predict(
    model: *const BtaModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> BtaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let w = window_for(m, slice_arg(x, len, "x")?)?;
        *out_ref(out, "out")? = m.predict_return(&w)?;
        Ok(())
    })
}

/// Gradient of the prediction with respect to the window; `grad` holds `len` doubles.
///
/// # Safety
/// `x` and `grad` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bta_model_gradient(
    model: *const BtaModel,
    x: *const f64,
    len: usize,
    grad: *mut f64,
) -> BtaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let w = window_for(m, slice_arg(x, len, "x")?)?;
        let g = m.input_gradient(&w)?;
        out_slice(grad, len, g.len(), "grad")?.copy_from_slice(&g);
        Ok(())
    })
}

/// One-step untargeted FGSM pushing the prediction down. `mask` may be NULL
/// (every coordinate editable) or point to `len` bytes, nonzero meaning
/// editable. Writes δ into `delta` and the attacked prediction into `y_after`.
///
/// # Safety
/// `x` and `delta` must point to `len` doubles; `mask` to `len` bytes if set.
#[no_mangle]
pub unsafe extern "C" fn bta_model_fgsm(
    model: *const BtaModel,
    x: *const f64,
    len: usize,
    eps: f64,
    mask: *const u8,
    delta: *mut f64,
    y_after: *mut f64,
) -> BtaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let w = window_for(m, slice_arg(x, len, "x")?)?;
        let mut spec = AttackSpec::full(m.window_len, m.n_inputs, eps, AttackMode::Untargeted);
        if !mask.is_null() {
            spec = spec.with_mask(slice_arg(mask, len, "mask")?.iter().map(|b| *b != 0).collect());
        }
        let y_after = out_ref(y_after, "y_after")?;
        let p = fgsm(m, &w, &spec)?;
        out_slice(delta, len, p.delta.len(), "delta")?.copy_from_slice(&p.delta);
        *y_after = p.y_after;
        Ok(())
    })
}

/// Builds a market from `n` stocks and their starting prices.
///
/// # Safety
/// `meta` and `prices` must each point to `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bta_market_new(
    meta: *const BtaStockMeta,
    prices: *const f64,
    n: usize,
    out: *mut *mut BtaMarket,
) -> BtaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let stocks = slice_arg(meta, n, "meta")?
            .iter()
            .map(|s| {
                Ok(StockMeta {
                    ticker: str_arg(s.ticker, "ticker")?.to_string(),
                    shares_outstanding: s.shares_outstanding,
                    adv: s.adv,
                    lambda_impact: s.lambda_impact,
                    half_spread: s.half_spread,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let inner = Market::new(stocks, slice_arg(prices, n, "prices")?.to_vec(), 0)?;
        *out = Box::into_raw(Box::new(BtaMarket { inner }));
        Ok(())
    })
}

/// # Safety
/// `market` must come from `bta_market_new` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bta_market_free(market: *mut BtaMarket) {
    if !market.is_null() {
        drop(Box::from_raw(market));
    }
}

/// Buys (`shares > 0`) or sells at the current step and bills the cost. A
/// rejected trade leaves the market untouched.
///
/// # Safety
/// `market` must be a live handle; `fill` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn bta_market_trade(
    market: *mut BtaMarket,
    stock: usize,
    shares: f64,
    fill: *mut BtaFill,
) -> BtaStatus {
    guard(|| {
        let m = market_mut(market)?;
        check_stock(m, stock)?;
        let f = m.execute_trade(stock, shares)?;
        if let Some(out) = fill.as_mut() {
            *out = BtaFill {
                stock: f.stock,
                shares: f.shares,
                price_before: f.price_before,
                price_change: f.price_change,
                cost: f.cost,
            };
        }
        Ok(())
    })
}

/// Signed share count that moves `stock` by `fraction` of its price.
///
/// # Safety
/// `market` must be a live handle; `shares` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bta_market_invert_impact(
    market: *mut BtaMarket,
    stock: usize,
    fraction: f64,
    shares: *mut f64,
) -> BtaStatus {
    guard(|| {
        let m = market_mut(market)?;
        check_stock(m, stock)?;
        *out_ref(shares, "shares")? = m.invert_impact(stock, fraction)?;
        Ok(())
    })
}

/// Estimated cost of moving `stock` by `fraction`, without trading.
///
/// # Safety
/// `market` must be a live handle; `cost` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bta_market_move_cost(
    market: *mut BtaMarket,
    stock: usize,
    fraction: f64,
    cost: *mut f64,
) -> BtaStatus {
    guard(|| {
        let m = market_mut(market)?;
        check_stock(m, stock)?;
        *out_ref(cost, "cost")? = m.move_cost(stock, fraction);
        Ok(())
    })
}

/// Current price of `stock`.
///
/// # Safety
/// `market` must be a live handle; `price` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bta_market_price(market: *mut BtaMarket, stock: usize, price: *mut f64) -> BtaStatus {
    guard(|| {
        let m = market_mut(market)?;
        check_stock(m, stock)?;
        *out_ref(price, "price")? = m.prices()[stock];
        Ok(())
    })
}

/// Total cost billed so far.
///
/// # Safety
/// `market` must be a live handle; `spend` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bta_market_spend(market: *mut BtaMarket, spend: *mut f64) -> BtaStatus {
    guard(|| {
        let m = market_mut(market)?;
        *out_ref(spend, "spend")? = m.spend();
        Ok(())
    })
}

fn check_stock(m: &Market, stock: usize) -> Result<(), Failure> {
    if stock >= m.n_stocks() {
        return Err(Failure::Arg(format!("stock {stock} out of range for {} stocks", m.n_stocks())));
    }
    Ok(())
}

/// Checks a scenario TOML document.
///
/// # Safety
/// `toml` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bta_config_validate(toml: *const c_char) -> BtaStatus {
    guard(|| {
        ScenarioConfig::from_toml(str_arg(toml, "toml")?)?;
        Ok(())
    })
}

/// Runs one pipeline stage (`"generate"`, ..., `"report"`) into `run_dir`.
/// `config_path` may be NULL to use the built-in demo scenario.
///
/// # Safety
/// String arguments must be NUL-terminated; `config_path` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn bta_run_stage(
    config_path: *const c_char,
    run_dir: *const c_char,
    stage: *const c_char,
) -> BtaStatus {
    guard(|| {
        let cfg = if config_path.is_null() {
            demo_config()
        } else {
            ScenarioConfig::load(Path::new(str_arg(config_path, "config_path")?))?
        };
        let stage: Stage = str_arg(stage, "stage")?.parse()?;
        Run::new(str_arg(run_dir, "run_dir")?, cfg).run_stage(stage)?;
        Ok(())
    })
}

/// Per-stage seed derived from the master seed and a stage name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bta_sub_seed(master: u64, name: *const c_char, out: *mut u64) -> BtaStatus {
    guard(|| {
        *out_ref(out, "out")? = sub_seed(master, str_arg(name, "name")?);
        Ok(())
    })
}
