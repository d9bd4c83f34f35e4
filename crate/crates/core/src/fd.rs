//! Central finite differences with optional Richardson extrapolation.

/// Default step scale `eps^{1/3}` for central second differences.
pub fn default_step(scale: f64) -> f64 {
    f64::EPSILON.cbrt() * scale
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every axis.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h[i];
            let fp = f(&y);
            y[i] = x[i] - h[i];
            let fm = f(&y);
            y[i] = x[i];
            (fp - fm) / (2.0 * h[i])
        })
        .collect()
}

/// Five-point-per-axis Laplacian with uniform step `h`.
pub fn laplacian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> f64 {
    let f0 = f(x);
    let mut y = x.to_vec();
    let mut sum = 0.0;
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        sum += fp - 2.0 * f0 + fm;
    }
    sum / (h * h)
}

/// Central-difference Hessian with per-axis steps.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let mut out = vec![vec![0.0; n]; n];
    let mut y = x.to_vec();
    for i in 0..n {
        y[i] = x[i] + h[i];
        let fp = f(&y);
        y[i] = x[i] - h[i];
        let fm = f(&y);
        y[i] = x[i];
        out[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                y[i] = x[i] + si * h[i];
                y[j] = x[j] + sj * h[j];
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let v =
                (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h[i] * h[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Richardson combination `(4 A(h/2) - A(h)) / 3` for second-order schemes.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

/// Observed convergence order from errors at `h` and `h/2`.
pub fn observed_order(err_h: f64, err_half: f64) -> f64 {
    (err_h / err_half).log2()
}
