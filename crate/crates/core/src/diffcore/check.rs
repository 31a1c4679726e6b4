//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Which entries of a parameter to perturb.
#[derive(Clone, Debug)]
pub struct CheckTarget {
    pub param: ParamId,
    /// `None` checks every entry.
    pub entries: Option<Vec<usize>>,
}

impl CheckTarget {
    pub fn all(param: ParamId) -> Self {
        Self {
            param,
            entries: None,
        }
    }

    pub fn entries(param: ParamId, entries: Vec<usize>) -> Self {
        Self {
            param,
            entries: Some(entries),
        }
    }
}

impl From<ParamId> for CheckTarget {
    fn from(id: ParamId) -> Self {
        Self::all(id)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub op: String,
    pub max_rel_err: f64,
    pub errors: Vec<f64>,
    pub pass: bool,
}

impl GradReport {
    pub fn csv_row(&self) -> String {
        format!("{},{:.3e},{}", self.op, self.max_rel_err, self.pass)
    }
}

fn evaluate<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    if tape.numel(out) != 1 {
        return Err(Error::NotScalar(tape.shape(out).to_vec()));
    }
    Ok(tape.item(out))
}

/// Compares the tape gradient of `f` against `(f(p+h) - f(p-h)) / 2h` for
/// each targeted entry. The relative error of an entry is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
///
/// Parameter values are restored before returning; gradients in `store`
/// are reset.
pub fn finite_diff_check<F>(
    op: &str,
    store: &mut ParamStore,
    targets: &[CheckTarget],
    f: F,
    tolerance: f64,
    step: f64,
) -> Result<GradReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    store.zero_grad();

    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let first = tape.item(out);
    tape.backward(out, store)?;
    drop(tape);

    let second = evaluate(&f, store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic(op.to_string()));
    }

    let mut errors = Vec::new();
    for target in targets {
        let n = store.get(target.param).len();
        let entries: Vec<usize> = target.entries.clone().unwrap_or_else(|| (0..n).collect());
        for i in entries {
            let original = store.values(target.param)[i];
            store.values_mut(target.param)[i] = original + step;
            let plus = evaluate(&f, store);
            store.values_mut(target.param)[i] = original - step;
            let minus = evaluate(&f, store);
            store.values_mut(target.param)[i] = original;
            let numeric = (plus? - minus?) / (2.0 * step);
            let analytic = store.grad(target.param)[i];
            let denom = 1.0_f64.max(analytic.abs()).max(numeric.abs());
            errors.push((analytic - numeric).abs() / denom);
        }
    }
    store.zero_grad();

    let max_rel_err = errors.iter().cloned().fold(0.0, f64::max);
    Ok(GradReport {
        op: op.to_string(),
        max_rel_err,
        pass: max_rel_err < tolerance && max_rel_err.is_finite(),
        errors,
    })
}
