use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of `f` at `x` against central
/// differences with step `h`.
///
/// Returns the largest `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`
/// over all coordinates.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let analytic = {
        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let y = f(&tape, xv)?;
        if !y.item().is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        tape.backward(y)?.wrt(xv)
    };
    if !analytic.is_finite() {
        return Err(Error::NonFinite("grad_check analytic gradient".into()));
    }
    let eval = |t: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.constant(t.clone());
        let y = f(&tape, xv)?.item();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFinite("grad_check objective".into()))
        }
    };
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[k] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[k];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
