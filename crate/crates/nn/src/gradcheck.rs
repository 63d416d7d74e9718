use crate::error::{NnError, Result};
use crate::params::ParameterSet;
use crate::tape::{Tape, Var};

/// Largest relative discrepancy between tape gradients and central
/// differences over every scalar in `sets`.
///
/// Relative error per entry is `|a − n| / max(|a|, |n|, floor)` with
/// `floor = 1e-6`, so entries whose true gradient is essentially zero are
/// judged on absolute error.
pub fn finite_diff_check<F>(sets: &mut [ParameterSet], epsilon: f64, mut loss_fn: F) -> Result<f64>
where
    F: for<'p> FnMut(&mut Tape<'p>, &'p [ParameterSet]) -> Result<Var>,
{
    const FLOOR: f64 = 1e-6;
    let analytic = {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, sets)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(NnError::Numeric(format!("loss is not finite: {value}")));
        }
        tape.backward(loss)?
    };

    let eval = |sets: &[ParameterSet], loss_fn: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, sets)?;
        let v = tape.scalar(loss);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NnError::Numeric(format!("perturbed loss is not finite: {v}")))
        }
    };

    let mut worst: f64 = 0.0;
    for s in 0..sets.len() {
        let id = sets[s].id();
        for t in 0..sets[s].len() {
            let n = sets[s].tensor(t).len();
            let grad = analytic.param(id, t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            for j in 0..n {
                let orig = sets[s].tensor(t).values()[j];
                sets[s].tensor_mut(t).values_mut()[j] = orig + epsilon;
                let plus = eval(sets, &mut loss_fn);
                sets[s].tensor_mut(t).values_mut()[j] = orig - epsilon;
                let minus = eval(sets, &mut loss_fn);
                sets[s].tensor_mut(t).values_mut()[j] = orig;
                let numeric = (plus? - minus?) / (2.0 * epsilon);
                let a = grad[j];
                if !a.is_finite() {
                    return Err(NnError::Numeric("analytic gradient is not finite".into()));
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}
