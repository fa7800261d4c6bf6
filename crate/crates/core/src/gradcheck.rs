//! Central finite-difference verification of tape gradients.
//!
//! Always runs in f64: the oracle needs the headroom, and training precision
//! is irrelevant to whether a backward rule is wrong.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst relative error observed for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Tape gradients of `build_loss` at the given parameter values, plus the
/// loss value itself.
pub fn tape_gradients<F>(
    params: &[(String, Tensor<f64>)],
    build_loss: &F,
) -> Result<(f64, Vec<Tensor<f64>>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = build_loss(&mut tape, &vars)?;
    let value = tape.scalar_value(loss)?;
    tape.backward(loss)?;
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v).expect("param grad after backward").clone())
        .collect();
    Ok((value, grads))
}

/// Central-difference gradients of `build_loss`, one tensor per parameter.
///
/// Evaluates the loss twice at the base point first and errors if the two
/// values differ: a non-deterministic loss makes the oracle meaningless.
pub fn fd_gradients<F>(
    params: &[(String, Tensor<f64>)],
    build_loss: &F,
    step: f64,
) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build_loss(&mut tape, &vars)?;
        Ok(tape.scalar_value(loss)?)
    };

    let base: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let first = eval(&base)?;
    let second = eval(&base)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Oracle(format!(
            "loss function is not deterministic: {first} vs {second}"
        )));
    }

    let mut work = base;
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(work[pi].shape().to_vec());
        for k in 0..work[pi].numel() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            grad.data_mut()[k] = (up - down) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Worst relative error per parameter between two gradient sets.
pub fn compare_gradients(
    names: &[String],
    analytic: &[Tensor<f64>],
    expected: &[Tensor<f64>],
    tolerance: f64,
) -> GradCheckReport {
    let mut per_param = Vec::with_capacity(names.len());
    let mut worst = 0.0f64;
    for ((name, a), e) in names.iter().zip(analytic).zip(expected) {
        let param_worst = a
            .data()
            .iter()
            .zip(e.data())
            .map(|(&x, &y)| rel_err(x, y))
            .fold(0.0, f64::max);
        worst = worst.max(param_worst);
        per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: param_worst,
        });
    }
    GradCheckReport {
        per_param,
        max_rel_err: worst,
        tolerance,
    }
}

/// Compare tape gradients of `build_loss` against central differences.
///
/// `build_loss` receives a fresh tape and the lifted parameter vars, in the
/// order of `params`, and must return the scalar loss node. It must be a
/// pure function of the parameter values.
///
/// Losses containing a gradient-reversal layer need [`fd_gradients`] and
/// [`compare_gradients`] directly, with the reversal's `-mu` folded into the
/// expected side for upstream parameters; by design the raw tape gradient is
/// not the derivative of the loss there.
pub fn finite_diff_check<F>(
    params: &[(String, Tensor<f64>)],
    build_loss: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = tape_gradients(params, &build_loss)?;
    let fd = fd_gradients(params, &build_loss, step)?;
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    Ok(compare_gradients(&names, &analytic, &fd, tolerance))
}
