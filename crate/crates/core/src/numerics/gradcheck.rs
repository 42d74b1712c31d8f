use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central
/// differences and returns the worst per-coordinate relative error
/// `|g_tape - g_fd| / max(1e-8, |g_tape| + |g_fd|)`.
///
/// `f` receives a fresh tape and the parameter leaf and must return a 1x1 node.
pub fn grad_check<F>(f: F, params: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Contract(format!("grad_check eps must be positive, got {eps}")));
    }
    let eval = |p: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.vector(p.to_vec());
        let y = f(&mut tape, x)?;
        let v = tape.scalar_value(y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check objective".into()))
        }
    };

    let mut tape = Tape::new();
    let x = tape.vector(params.to_vec());
    let y = f(&mut tape, x)?;
    if !tape.scalar_value(y).is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let analytic = tape.backward(y).wrt(&tape, x);

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let up = eval(&probe)?;
        probe[i] = params[i] - eps;
        let down = eval(&probe)?;
        probe[i] = params[i];
        let fd = (up - down) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
