/// One classical fourth-order Runge-Kutta step of `y' = f(t, y)`.
pub fn rk4_step<F, E>(mut f: F, y: &[f64], t: f64, h: f64) -> Result<Vec<f64>, E>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
{
    debug_assert!(h > 0.0);
    let stage = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, k)| b + s * k).collect()
    };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &stage(y, &k1, 0.5 * h))?;
    let k3 = f(t + 0.5 * h, &stage(y, &k2, 0.5 * h))?;
    let k4 = f(t + h, &stage(y, &k3, h))?;
    Ok(y
        .iter()
        .enumerate()
        .map(|(i, yi)| yi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}
