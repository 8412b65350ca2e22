use super::{ParamStore, Tape, TensorError, Var};

/// Denominator floor for the relative error. Coordinates whose analytic and
/// numeric gradients are both below this magnitude are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub coordinates: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(f: &mut F, params: &ParamStore) -> Result<f64, TensorError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    let value = tape
        .value(out)
        .item()
        .ok_or_else(|| TensorError::InvalidArgument("objective must be scalar".into()))?;
    if !value.is_finite() {
        return Err(TensorError::NonFinite("objective".into()));
    }
    Ok(value)
}

/// Central-difference gradient of a scalar function of a flat point.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, point: &[f64], eps: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + eps;
            let plus = f(&x);
            x[i] = point[i] - eps;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Compares reverse-mode gradients of `f` against central differences over
/// every coordinate of every parameter in `params`.
///
/// Parameter values are restored afterwards; gradient accumulators are left
/// holding the analytic gradient.
pub fn check_gradients<F>(
    params: &mut ParamStore,
    eps: f64,
    mut f: F,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, TensorError>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(TensorError::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }

    params.zero_grads();
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    if !tape.value(out).item().is_some_and(f64::is_finite) {
        return Err(TensorError::NonFinite("objective".into()));
    }
    tape.backward(out, params)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for i in 0..params.get(id).value.len() {
            let original = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = original + eps;
            let plus = evaluate(&mut f, params);
            params.get_mut(id).value.data_mut()[i] = original - eps;
            let minus = evaluate(&mut f, params);
            params.get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);

            let param = params.get(id);
            let analytic = param.grad.data()[i];
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((param.name.clone(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
