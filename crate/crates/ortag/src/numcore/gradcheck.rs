use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::{NumError, Result};

/// Compare analytic gradients against central differences (step `eps`) for
/// a scalar function of one input. Returns the worst relative error
/// `max |a - n| / max(1e-8, |a| + |n|)` over all entries.
pub fn grad_check<F>(input: &Tensor, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_multi(&[input.clone()], eps, |tape, vars| f(tape, vars[0]))
}

/// Multi-input variant of [`grad_check`]; the worst relative error across
/// every entry of every input.
pub fn grad_check_multi<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if inputs.is_empty() {
        return Err(NumError::Contract("grad_check needs at least one input".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(NumError::Config(format!("grad_check step must be positive, got {eps}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).is_scalar() {
        return Err(NumError::Contract(format!(
            "grad_check requires a scalar output, got shape {:?}",
            tape.value(loss).shape()
        )));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(*v).numel()]))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).values()[0])
    };

    let mut worst = 0.0f64;
    for (vi, input) in inputs.iter().enumerate() {
        for ei in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[vi].values_mut()[ei] += eps;
            let mut minus = inputs.to_vec();
            minus[vi].values_mut()[ei] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic[vi][ei];
            let err = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
