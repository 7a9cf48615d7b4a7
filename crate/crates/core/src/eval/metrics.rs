use crate::error::{Error, Result};

/// Lower nearest-rank quantile: the `ceil(q·n) − 1`-th smallest value,
/// clamped to a valid index.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("quantile of an empty list"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::OutOfRange {
            name: "quantile".into(),
            value: q,
            min: 0.0,
            max: 1.0,
        });
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::evaluation("quantile input contains NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    Ok(sorted[rank.saturating_sub(1).min(n - 1)])
}

/// Trapezoid area under the piecewise-linear curve through `(v_i, r_i)`,
/// divided by the width `v_max − v_min`.
pub fn robust_auc(values: &[f64], returns: &[f64]) -> Result<f64> {
    if values.len() != returns.len() {
        return Err(Error::Shape {
            op: "robust_auc",
            lhs: vec![values.len()],
            rhs: vec![returns.len()],
        });
    }
    if values.len() < 2 {
        return Err(Error::contract("robust_auc needs at least two points"));
    }
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::contract(
            "robust_auc needs strictly increasing parameter values",
        ));
    }
    let area: f64 = values
        .windows(2)
        .zip(returns.windows(2))
        .map(|(v, r)| 0.5 * (r[0] + r[1]) * (v[1] - v[0]))
        .sum();
    Ok(area / (values[values.len() - 1] - values[0]))
}
