//! Central finite differences, the independent oracle behind every
//! gradient check.

/// d f / d x at `x0` by central differences with step 1e-5.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(x0: &[f64], mut f: F) -> Vec<f64> {
    let h = 1e-5;
    let mut grad = vec![0.0; x0.len()];
    let mut x = x0.to_vec();
    for i in 0..x.len() {
        x[i] = x0[i] + h;
        let fp = f(&x);
        x[i] = x0[i] - h;
        let fm = f(&x);
        x[i] = x0[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Max relative error between analytic and numeric gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}
