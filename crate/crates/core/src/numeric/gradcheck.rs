//! Finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::params::ParamSet;
use crate::numeric::tape::{Tape, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Largest parameter count `grad_check` will accept; the sweep is
/// O(entries × forward cost) and meant for toys.
pub const GRAD_CHECK_MAX_ENTRIES: usize = 10_000;

/// Build the loss graph, run one reverse sweep, and accumulate parameter
/// gradients. Gradients are zeroed first, so afterwards they equal the
/// analytic derivative of this loss alone.
pub fn forward_backward<F>(loss_fn: F, params: &mut ParamSet) -> Result<(f64, Tape)>
where
    F: FnOnce(&mut Tape, &ParamSet) -> Result<Var>,
{
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::Shape {
            op: "forward_backward",
            msg: format!("loss must be scalar, got {:?}", tape.value(loss).shape()),
        });
    }
    let loss_value = tape.value(loss).scalar_value();
    tape.backward(loss, params)?;
    Ok((loss_value, tape))
}

fn forward_only<F>(loss_fn: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    Ok(tape.value(loss).scalar_value())
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// `name[index]` of the entry with the largest relative error.
    pub worst_entry: String,
    pub entries_checked: usize,
    pub tolerance: f64,
    /// Entries whose relative error exceeded the tolerance.
    pub failures: Vec<String>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare analytic gradients against central differences, one parameter
/// entry at a time. `loss_fn` must be deterministic in the parameter values;
/// any stochastic realizations have to be frozen by the caller.
pub fn grad_check<F>(loss_fn: F, params: &mut ParamSet, tolerance: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let entries = params.scalar_count();
    if entries > GRAD_CHECK_MAX_ENTRIES {
        return Err(Error::InvalidArgument(format!(
            "grad_check is for small parameter sets ({entries} entries > {GRAD_CHECK_MAX_ENTRIES})"
        )));
    }

    forward_backward(&loss_fn, params)?;
    let analytic: BTreeMap<String, Vec<f64>> = params
        .iter()
        .map(|(name, entry)| (name.to_string(), entry.grad.data().to_vec()))
        .collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_entry: String::new(),
        entries_checked: 0,
        tolerance,
        failures: Vec::new(),
    };

    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        for (i, &a) in analytic[name].iter().enumerate() {
            let orig = params.value(name)?.data()[i];
            params.get_mut(name)?.value.data_mut()[i] = orig + FD_STEP;
            let loss_plus = forward_only(&loss_fn, params)?;
            params.get_mut(name)?.value.data_mut()[i] = orig - FD_STEP;
            let loss_minus = forward_only(&loss_fn, params)?;
            params.get_mut(name)?.value.data_mut()[i] = orig;

            let fd = (loss_plus - loss_minus) / (2.0 * FD_STEP);
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_entry = format!("{name}[{i}]");
            }
            if rel > tolerance {
                report.failures.push(format!("{name}[{i}]"));
            }
        }
    }
    Ok(report)
}
