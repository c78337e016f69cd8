use super::params::ParamRegistry;
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// `(analytic, numeric)` at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares analytic gradients against central differences on every scalar
/// of every parameter.
///
/// `objective` evaluates the loss on the current parameter values and, when
/// asked, accumulates its analytic gradient into the registry's `grad`
/// buffers (which are zeroed beforehand).
pub fn grad_check<F>(
    params: &mut ParamRegistry,
    eps: f64,
    tol: f64,
    mut objective: F,
) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&mut ParamRegistry, bool) -> Result<f64, NnError>,
{
    params.zero_grad();
    let base = objective(params, true)?;
    if !base.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(|t| t.grad.clone()).collect();
    params.zero_grad();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        checked: 0,
        tol,
    };
    let names: Vec<String> = params.iter().map(|t| t.name.clone()).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].len();
        for k in 0..len {
            let orig = param_value(params, name, k);
            set_param_value(params, name, k, orig + eps);
            let plus = objective(params, false)?;
            set_param_value(params, name, k, orig - eps);
            let minus = objective(params, false)?;
            set_param_value(params, name, k, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NnError::NonFiniteLoss);
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[ti][k], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
                report.worst_values = Some((analytic[ti][k], numeric));
            }
        }
    }
    Ok(report)
}

fn param_value(params: &ParamRegistry, name: &str, k: usize) -> f64 {
    params.by_name(name).expect("known parameter").values[k]
}

fn set_param_value(params: &mut ParamRegistry, name: &str, k: usize, v: f64) {
    params.by_name_mut(name).expect("known parameter").values[k] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(corrupt: bool) -> (ParamRegistry, impl FnMut(&mut ParamRegistry, bool) -> Result<f64, NnError>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut reg = ParamRegistry::new();
        let w = reg.glorot("w", 3, 3, &mut rng).unwrap();
        let b = reg.add("b", vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        let x = [0.5, -1.5, 2.0];
        let f = move |p: &mut ParamRegistry, grad: bool| {
            let mut t = Tape::new();
            let (wv, bv) = (t.param(p, w), t.param(p, b));
            let xv = t.input(&x);
            let z = t.linear(wv, bv, xv)?;
            let l = t.softmax_xent(z, 1)?;
            if grad {
                t.backward(l).accumulate_into(p, 1.0);
                if corrupt {
                    p.get_mut(b).grad[2] += 0.05;
                }
            }
            Ok(t.scalar(l))
        };
        (reg, f)
    }

    #[test]
    fn toy_model_passes() {
        let (mut reg, f) = toy(false);
        let r = grad_check(&mut reg, 1e-5, 1e-5, f).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checked, 12);
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let (mut reg, f) = toy(true);
        let r = grad_check(&mut reg, 1e-5, 1e-5, f).unwrap();
        assert!(!r.passed());
        assert_eq!(r.worst, Some(("b".to_string(), 2)));
    }

    #[test]
    fn empty_registry_passes_vacuously() {
        let mut reg = ParamRegistry::new();
        let r = grad_check(&mut reg, 1e-5, 1e-5, |_, _| Ok(1.0)).unwrap();
        assert!(r.passed());
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut reg = ParamRegistry::new();
        reg.zeros("w", vec![1]).unwrap();
        assert!(matches!(
            grad_check(&mut reg, 1e-5, 1e-5, |_, _| Ok(f64::NAN)),
            Err(NnError::NonFiniteLoss)
        ));
    }
}
