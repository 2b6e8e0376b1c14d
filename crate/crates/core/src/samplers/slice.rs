//! Univariate slice sampling with stepping out and shrinkage.

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_WIDTH: f64 = 1.0;
pub const DEFAULT_MAX_STEPOUT: usize = 50;

/// One slice-sampling update of a scalar. `logpost` may return `−∞` (or
/// NaN, treated as `−∞`) outside its support.
pub fn slice_step_1d<F, R>(
    x0: f64,
    mut logpost: F,
    rng: &mut R,
    width: f64,
    max_stepout: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    let mut f = |x: f64| {
        let v = logpost(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "log density at {x0} is not finite"
        )));
    }
    let y = f0 + (1.0 - rng.random::<f64>()).ln();
    let mut lo = x0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    let mut steps = 0;
    while f(lo) > y {
        lo -= width;
        steps += 1;
        if steps > max_stepout {
            return Err(Error::MaxStepoutExceeded(max_stepout));
        }
    }
    steps = 0;
    while f(hi) > y {
        hi += width;
        steps += 1;
        if steps > max_stepout {
            return Err(Error::MaxStepoutExceeded(max_stepout));
        }
    }
    loop {
        let x = lo + rng.random::<f64>() * (hi - lo);
        if f(x) > y {
            return Ok(x);
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-14 * (1.0 + x0.abs()) {
            return Ok(x0);
        }
    }
}
