use super::{Array, NodeId, Tape};
use crate::error::{Error, Result};

/// Max over coordinates of `|analytic - central| / (|central| + 1e-12)`.
///
/// `f` returns the function value together with its analytic gradient;
/// only the value is used at the perturbed points.
pub fn finite_diff_check<F>(f: F, point: &[f64], epsilon: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if epsilon <= 0.0 {
        return Err(Error::contract("finite difference epsilon must be > 0"));
    }
    let (value, analytic) = f(point)?;
    check_finite(value)?;
    if analytic.len() != point.len() {
        return Err(Error::Shape {
            op: "finite_diff_check",
            lhs: vec![point.len()],
            rhs: vec![analytic.len()],
        });
    }
    let numeric = central_differences(|x| f(x).map(|(v, _)| v), point, epsilon)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Central-difference gradient of a scalar function.
pub fn central_differences<F>(f: F, point: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let up = check_finite(f(&x)?)?;
        x[i] = orig - epsilon;
        let down = check_finite(f(&x)?)?;
        x[i] = orig;
        out.push((up - down) / (2.0 * epsilon));
    }
    Ok(out)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (n.abs() + 1e-12))
        .fold(0.0, f64::max)
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::evaluation(format!("non-finite function value {v}")))
    }
}

/// Wraps tape-building code into a `(value, gradient)` closure over a flat
/// input vector, suitable for [`finite_diff_check`].
pub fn tape_function<B>(
    shape: Vec<usize>,
    build: B,
) -> impl Fn(&[f64]) -> Result<(f64, Vec<f64>)>
where
    B: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    move |x: &[f64]| {
        let mut tape = Tape::new();
        let input = tape.leaf(Array::new(shape.clone(), x.to_vec())?);
        let out = build(&mut tape, input)?;
        let value = tape.value(out).item()?;
        let grads = tape.backward(out)?;
        let g = grads.get_or_zeros(input, tape.value(input)).into_data();
        Ok((value, g))
    }
}
