use super::{NumericError, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares accumulated analytic gradients against central differences.
///
/// `objective(store, accumulate)` must return the scalar value at the current
/// parameters and, when `accumulate` is true, add its gradient into the
/// store's accumulators. Every coordinate of every parameter is checked.
pub fn grad_check<F>(
    store: &mut ParamStore,
    epsilon: f64,
    mut objective: F,
) -> Result<GradCheckReport, NumericError>
where
    F: FnMut(&mut ParamStore, bool) -> Result<f64, NumericError>,
{
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(NumericError::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-4]"
        )));
    }
    for p in store.iter_mut() {
        p.grad.fill(0.0);
    }
    let base = objective(store, true)?;
    if !base.is_finite() {
        return Err(NumericError::NonFinite("objective"));
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.as_slice().to_vec()).collect();
    store.zero_grad();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for (id, grads) in ids.into_iter().zip(&analytic) {
        for (k, &grad) in grads.iter().enumerate() {
            let orig = store.value(id).as_slice()[k];
            store.value_mut(id).as_mut_slice()[k] = orig + epsilon;
            let plus = objective(store, false)?;
            store.value_mut(id).as_mut_slice()[k] = orig - epsilon;
            let minus = objective(store, false)?;
            store.value_mut(id).as_mut_slice()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericError::NonFinite("objective"));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(grad, numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Matrix, Parameter, Tape};
    use crate::par::ExecMode;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        let id = store.add(Parameter::new("x", Matrix::filled(1, 1, 3.0), false));
        let report = grad_check(&mut store, 1e-5, |s, acc| {
            let mut t = Tape::new(ExecMode::Sequential);
            let x = t.param(s, id);
            let y = t.row_dot(x, x)?;
            let out = t.sum(y);
            if acc {
                t.backward(out, s)?;
            }
            Ok(t.scalar(out))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.coordinates, 1);
    }

    #[test]
    fn constant_objective() {
        let mut store = ParamStore::new();
        store.add(Parameter::new("x", Matrix::filled(2, 2, 1.0), false));
        let report = grad_check(&mut store, 1e-5, |_, _| Ok(4.0)).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn rejects_bad_epsilon_and_nan() {
        let mut store = ParamStore::new();
        store.add(Parameter::new("x", Matrix::filled(1, 1, 1.0), false));
        assert!(grad_check(&mut store, 1e-2, |_, _| Ok(0.0)).is_err());
        assert!(matches!(
            grad_check(&mut store, 1e-5, |_, _| Ok(f64::NAN)),
            Err(NumericError::NonFinite(_))
        ));
    }
}
