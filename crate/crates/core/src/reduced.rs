//! The reduced energy of a bubble tower, its `t`-coordinates, the closed-form
//! critical point and the nondegeneracy certificate.
//!
//! Coordinates of the reduced space are flattened as
//! `x = (t_1, .., t_k, sigma_1, .., sigma_k)` with each `sigma_i` in `R^n`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{positive, same_dim, Error, Result};
use crate::fd;
use crate::geom;
use crate::special::DimConstants;

/// Data entering the reduced energy: `a(xi0)`, `grad a(xi0)` and the
/// expansion constants of dimension `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedConfig {
    pub n: usize,
    pub k: usize,
    pub a0: f64,
    pub grad_a0: Vec<f64>,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

/// A point `(t, sigma)` of the reduced space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedPoint {
    pub t: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl ReducedPoint {
    pub fn flatten(&self) -> Vec<f64> {
        let mut x = self.t.clone();
        for s in &self.sigma {
            x.extend_from_slice(s);
        }
        x
    }

    pub fn unflatten(x: &[f64], n: usize, k: usize) -> Self {
        let t = x[..k].to_vec();
        let sigma = x[k..].chunks(n).map(<[f64]>::to_vec).collect();
        Self { t, sigma }
    }

    /// `d = (t_1, t_1 t_2, ..)`.
    pub fn d(&self) -> Vec<f64> {
        t_to_d(&self.t)
    }
}

impl ReducedConfig {
    pub fn new(n: usize, k: usize, a0: f64, grad_a0: Vec<f64>) -> Result<Self> {
        let c = DimConstants::new(n)?;
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        positive("a0", a0)?;
        same_dim(n, grad_a0.len())?;
        if grad_a0.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidConfig("grad_a0 must be finite".into()));
        }
        Ok(Self { n, k, a0, grad_a0, c2: c.c2, c3: c.c3, c4: c.c4 })
    }

    fn m(&self) -> f64 {
        (self.n as f64 - 2.0) / 2.0
    }

    /// `b_1 = c_2 |grad a(xi0)|`
    pub fn b1(&self) -> f64 {
        self.c2 * geom::norm(&self.grad_a0)
    }

    /// `b_2 = c_3 a(xi0) (n-2)`
    pub fn b2(&self) -> f64 {
        self.c3 * self.a0 * (self.n as f64 - 2.0)
    }

    /// `n + 2k - 3`
    pub fn big_n(&self) -> f64 {
        (self.n + 2 * self.k) as f64 - 3.0
    }

    fn check_sigma(&self, sigma: &[Vec<f64>]) -> Result<()> {
        same_dim(self.k, sigma.len())?;
        for s in sigma {
            same_dim(self.n, s.len())?;
        }
        Ok(())
    }

    /// `<grad a(xi0), sigma_1>`, which must be positive on the admissible set.
    pub fn admissible(&self, sigma: &[Vec<f64>]) -> Result<f64> {
        self.check_sigma(sigma)?;
        let g = geom::dot(&self.grad_a0, &sigma[0]);
        if g > 0.0 && g.is_finite() {
            Ok(g)
        } else {
            Err(Error::OutsideAdmissible(g))
        }
    }

    /// `sigma_0 = (grad a / |grad a|, 0, .., 0)`.
    pub fn sigma0(&self) -> Result<Vec<Vec<f64>>> {
        let g = geom::norm(&self.grad_a0);
        if !(g > 0.0) {
            return Err(Error::OutsideAdmissible(0.0));
        }
        let mut sigma = vec![vec![0.0; self.n]; self.k];
        sigma[0] = geom::scale(&self.grad_a0, 1.0 / g);
        Ok(sigma)
    }
}

fn weight(s: &[f64], p: f64) -> f64 {
    (1.0 + geom::norm_sq(s)).powf(-p)
}

/// Gradient and Hessian of `(1 + |s|^2)^{-p}`.
fn weight_derivs(s: &[f64], p: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let q = 1.0 + geom::norm_sq(s);
    let g1 = -2.0 * p * q.powf(-p - 1.0);
    let g2 = 4.0 * p * (p + 1.0) * q.powf(-p - 2.0);
    let grad = s.iter().map(|v| g1 * v).collect();
    let hess = (0..s.len())
        .map(|i| (0..s.len()).map(|j| g2 * s[i] * s[j] + if i == j { g1 } else { 0.0 }).collect())
        .collect();
    (grad, hess)
}

/// `Psi(d, sigma)`: the reduced energy in rate coordinates.
pub fn psi(cfg: &ReducedConfig, d: &[f64], sigma: &[Vec<f64>]) -> Result<f64> {
    same_dim(cfg.k, d.len())?;
    cfg.check_sigma(sigma)?;
    for &v in d {
        positive("d_i", v)?;
    }
    let n = cfg.n as f64;
    let m = cfg.m();
    let k = cfg.k;
    let mut v = cfg.c2 * geom::dot(&cfg.grad_a0, &sigma[0]) * d[0];
    v += cfg.c3 * cfg.a0 * weight(&sigma[k - 1], n - 2.0) * d[k - 1].powf(2.0 - n);
    for i in 0..k - 1 {
        v += cfg.c4 * cfg.a0 * weight(&sigma[i], m) * (d[i + 1] / d[i]).powf(m);
    }
    Ok(v)
}

/// `t_1 = d_1`, `t_i = d_i / d_{i-1}`.
pub fn t_transform(d: &[f64]) -> Result<Vec<f64>> {
    for &v in d {
        positive("d_i", v)?;
    }
    Ok(d_to_t(d))
}

/// Inverse of [`t_transform`]: `d_i = t_1 .. t_i`.
pub fn t_inverse(t: &[f64]) -> Result<Vec<f64>> {
    for &v in t {
        positive("t_i", v)?;
    }
    Ok(t_to_d(t))
}

fn d_to_t(d: &[f64]) -> Vec<f64> {
    let mut prev = 1.0;
    d.iter()
        .map(|&v| {
            let t = v / prev;
            prev = v;
            t
        })
        .collect()
}

fn t_to_d(t: &[f64]) -> Vec<f64> {
    let mut acc = 1.0;
    t.iter()
        .map(|&v| {
            acc *= v;
            acc
        })
        .collect()
}

/// `Psi~(t, sigma) = Psi(d(t), sigma)`.
pub fn psi_tilde(cfg: &ReducedConfig, p: &ReducedPoint) -> Result<f64> {
    same_dim(cfg.k, p.t.len())?;
    let d = t_inverse(&p.t)?;
    psi(cfg, &d, &p.sigma)
}

/// Value, gradient and Hessian of `Psi~` in the flattened coordinates.
pub fn psi_tilde_derivatives(cfg: &ReducedConfig, p: &ReducedPoint) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    same_dim(cfg.k, p.t.len())?;
    cfg.check_sigma(&p.sigma)?;
    for &v in &p.t {
        positive("t_i", v)?;
    }
    let (n, k) = (cfg.n, cfg.k);
    let nf = n as f64;
    let m = cfg.m();
    let dim = k + n * k;
    let sig = |i: usize| k + n * i;
    let t = &p.t;
    let mut val = 0.0;
    let mut g = vec![0.0; dim];
    let mut h = vec![vec![0.0; dim]; dim];

    // c2 <grad a, sigma_1> t_1
    let lin = geom::dot(&cfg.grad_a0, &p.sigma[0]);
    val += cfg.c2 * lin * t[0];
    g[0] += cfg.c2 * lin;
    for j in 0..n {
        let c = cfg.c2 * cfg.grad_a0[j];
        g[sig(0) + j] += c * t[0];
        h[0][sig(0) + j] += c;
        h[sig(0) + j][0] += c;
    }

    // c4 a0 (1 + |sigma_i|^2)^{-m} t_{i+1}^m
    for i in 0..k.saturating_sub(1) {
        let c = cfg.c4 * cfg.a0;
        let w = weight(&p.sigma[i], m);
        let (wg, wh) = weight_derivs(&p.sigma[i], m);
        let ti = t[i + 1];
        let tm = ti.powf(m);
        let dtm = m * ti.powf(m - 1.0);
        let ddtm = m * (m - 1.0) * ti.powf(m - 2.0);
        val += c * w * tm;
        g[i + 1] += c * w * dtm;
        h[i + 1][i + 1] += c * w * ddtm;
        for a in 0..n {
            g[sig(i) + a] += c * tm * wg[a];
            h[i + 1][sig(i) + a] += c * dtm * wg[a];
            h[sig(i) + a][i + 1] += c * dtm * wg[a];
            for b in 0..n {
                h[sig(i) + a][sig(i) + b] += c * tm * wh[a][b];
            }
        }
    }

    // c3 a0 (1 + |sigma_k|^2)^{-(n-2)} (t_1 .. t_k)^{2-n}
    let c = cfg.c3 * cfg.a0;
    let w = weight(&p.sigma[k - 1], nf - 2.0);
    let (wg, wh) = weight_derivs(&p.sigma[k - 1], nf - 2.0);
    let f = t.iter().map(|v| v.powf(2.0 - nf)).product::<f64>();
    val += c * w * f;
    for i in 0..k {
        let df = (2.0 - nf) * f / t[i];
        g[i] += c * w * df;
        for j in 0..k {
            let ddf = if i == j {
                (2.0 - nf) * (1.0 - nf) * f / (t[i] * t[i])
            } else {
                (2.0 - nf) * (2.0 - nf) * f / (t[i] * t[j])
            };
            h[i][j] += c * w * ddf;
        }
        for a in 0..n {
            h[i][sig(k - 1) + a] += c * df * wg[a];
            h[sig(k - 1) + a][i] += c * df * wg[a];
        }
    }
    for a in 0..n {
        g[sig(k - 1) + a] += c * f * wg[a];
        for b in 0..n {
            h[sig(k - 1) + a][sig(k - 1) + b] += c * f * wh[a][b];
        }
    }
    Ok((val, g, h))
}

/// Unique solution of `d Psi~ / d t = 0` at fixed admissible `sigma`.
///
/// With `b_1' = c_2 <grad a, sigma_1>` and
/// `X^{n+2k-3} = b_2^{2k-1} b_1'^{n-2} prod_i (1 + |sigma_i|^2)^{-(n-2)}`,
/// the solution is `t_1 = X / b_1'` and
/// `t_i = (X / b_2)^{2/(n-2)} (1 + |sigma_{i-1}|^2)` for `i >= 2`.
pub fn closed_form_t(cfg: &ReducedConfig, sigma: &[Vec<f64>]) -> Result<Vec<f64>> {
    let x = stationary_level(cfg, sigma)?;
    let b1p = cfg.c2 * cfg.admissible(sigma)?;
    let nf = cfg.n as f64;
    let base = (x / cfg.b2()).powf(2.0 / (nf - 2.0));
    let mut t = vec![x / b1p];
    for i in 1..cfg.k {
        t.push(base * (1.0 + geom::norm_sq(&sigma[i - 1])));
    }
    Ok(t)
}

/// The common value `X` of the balanced terms at the stationary point.
fn stationary_level(cfg: &ReducedConfig, sigma: &[Vec<f64>]) -> Result<f64> {
    let b1p = cfg.c2 * cfg.admissible(sigma)?;
    let nf = cfg.n as f64;
    let log_prod: f64 = sigma.iter().map(|s| (1.0 + geom::norm_sq(s)).ln()).sum();
    let log_x = ((2 * cfg.k - 1) as f64 * cfg.b2().ln() + (nf - 2.0) * b1p.ln() - (nf - 2.0) * log_prod) / cfg.big_n();
    Ok(log_x.exp())
}

/// `Psi^(sigma) = Psi~(t(sigma), sigma)` from the closed form
/// `((n+2k-3)/(n-2)) [c_2^{n-2} b_2^{2k-1}]^{1/(n+2k-3)}
///  [<grad a, sigma_1> / (1+|sigma_1|^2) prod_{i>=2} (1+|sigma_i|^2)^{-1}]^{(n-2)/(n+2k-3)}`.
pub fn psi_hat(cfg: &ReducedConfig, sigma: &[Vec<f64>]) -> Result<f64> {
    let lin = cfg.admissible(sigma)?;
    let nf = cfg.n as f64;
    let big = cfg.big_n();
    let pref = (big / (nf - 2.0)) * (cfg.c2.powf(nf - 2.0) * cfg.b2().powf((2 * cfg.k - 1) as f64)).powf(1.0 / big);
    let mut inner = lin;
    for s in sigma {
        inner /= 1.0 + geom::norm_sq(s);
    }
    Ok(pref * inner.powf((nf - 2.0) / big))
}

/// `Psi^` by composing [`psi`] with [`closed_form_t`].
pub fn psi_hat_composed(cfg: &ReducedConfig, sigma: &[Vec<f64>]) -> Result<f64> {
    let t = closed_form_t(cfg, sigma)?;
    psi(cfg, &t_to_d(&t), sigma)
}

/// Minimizes `Psi~(., sigma)` over `t` by damped Newton in `log t`.
///
/// `Psi~` is strictly convex in `log t`, so this recovers the stationary
/// point without using [`closed_form_t`].
pub fn minimize_in_t(cfg: &ReducedConfig, sigma: &[Vec<f64>], t_start: &[f64]) -> Result<Vec<f64>> {
    cfg.admissible(sigma)?;
    let k = cfg.k;
    let mut s: Vec<f64> = t_start.iter().map(|v| v.ln()).collect();
    let eval = |s: &[f64]| -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let p = ReducedPoint { t: s.iter().map(|v| v.exp()).collect(), sigma: sigma.to_vec() };
        let (v, g, h) = psi_tilde_derivatives(cfg, &p)?;
        // Chain rule to log coordinates.
        let gs: Vec<f64> = (0..k).map(|i| g[i] * p.t[i]).collect();
        let hs = (0..k)
            .map(|i| (0..k).map(|j| h[i][j] * p.t[i] * p.t[j] + if i == j { g[i] * p.t[i] } else { 0.0 }).collect())
            .collect();
        Ok((v, gs, hs))
    };
    let (mut v, mut g, mut h) = eval(&s)?;
    for _ in 0..500 {
        let gn = geom::norm(&g);
        if gn <= 1e-14 * v.abs() {
            break;
        }
        let hm = DMatrix::from_fn(k, k, |i, j| h[i][j]);
        let step = match hm.cholesky() {
            Some(c) => c.solve(&nalgebra::DVector::from_column_slice(&g)).iter().map(|x| -x).collect::<Vec<_>>(),
            None => g.iter().map(|x| -x).collect(),
        };
        let slope = geom::dot(&step, &g);
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-12 {
            let trial = geom::axpy(&s, alpha, &step);
            if let Ok((tv, tg, th)) = eval(&trial) {
                if tv.is_finite() && tv <= v + 1e-4 * alpha * slope {
                    s = trial;
                    v = tv;
                    g = tg;
                    h = th;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(s.iter().map(|v| v.exp()).collect())
}

/// Gradient norm scaled to be dimensionless: `t_i d/dt_i` and `d/dsigma`
/// components, divided by `|Psi~|`.
pub fn relative_gradient_norm(cfg: &ReducedConfig, p: &ReducedPoint) -> Result<f64> {
    let (v, g, _) = psi_tilde_derivatives(cfg, p)?;
    let scaled: Vec<f64> = g.iter().enumerate().map(|(i, gi)| if i < cfg.k { gi * p.t[i] } else { *gi }).collect();
    Ok(geom::norm(&scaled) / v.abs())
}

/// Outcome of one ascent run of `Psi^` from a random start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentRun {
    pub start: Vec<Vec<f64>>,
    pub end: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Max-norm distance from the closed-form maximizer.
    pub distance: f64,
    pub value: f64,
}

/// Certificate for the critical point `(t(sigma0), sigma0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalReport {
    pub n: usize,
    pub k: usize,
    pub point: ReducedPoint,
    pub d: Vec<f64>,
    pub psi: f64,
    pub psi_hat_closed_form: f64,
    pub gradient_norm: f64,
    /// Analytic Hessian of `Psi~`, `(k + nk)` square.
    pub hessian: Vec<Vec<f64>>,
    pub determinant: f64,
    pub smallest_abs_eigenvalue: f64,
    pub positive_eigenvalues: usize,
    pub negative_eigenvalues: usize,
    /// Max entrywise gap between the Richardson finite-difference Hessian and
    /// the analytic one, relative to the largest entry.
    pub fd_hessian_gap: f64,
    pub fd_determinant: f64,
    pub fd_smallest_abs_eigenvalue: f64,
    pub symmetry_defect: f64,
    pub schur: Option<SchurReport>,
}

/// The block reduction `det(A - B D^{-1} B^t)` at `sigma0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchurReport {
    pub determinant: f64,
    /// Exact determinant of the reduced rational matrix as `num / den`.
    pub reduced_numerator: i128,
    pub reduced_denominator: i128,
    /// `det(A - B D^{-1} B^t) / det(reduced)`.
    pub scale_c: f64,
    /// Max relative gap between the assembled blocks and the analytic Hessian.
    pub block_gap: f64,
}

/// The blocks `A_1, A_2, B, D` of the Hessian at `(t(sigma0), sigma0)`, with
/// `grad a` rotated onto the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianBlocks {
    pub t: Vec<f64>,
    pub a1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

impl HessianBlocks {
    /// `A - B D^{-1} B^t` with `A = A_1 + A_2`.
    pub fn schur(&self) -> Result<Vec<Vec<f64>>> {
        let k = self.a1.len();
        let n = self.d.len();
        let mut out = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                let mut v = self.a1[i][j] + self.a2[i][j];
                for a in 0..n {
                    if self.d[a][a] == 0.0 {
                        return Err(Error::Singular);
                    }
                    v -= self.b[i][a] * self.b[j][a] / self.d[a][a];
                }
                out[i][j] = v;
            }
        }
        Ok(out)
    }
}

/// Assembles the displayed Hessian blocks at `sigma0` for `k >= 2`.
pub fn hessian_blocks(cfg: &ReducedConfig) -> Result<HessianBlocks> {
    if cfg.k < 2 {
        return Err(Error::InvalidConfig("the block structure needs k >= 2".into()));
    }
    let b1 = cfg.b1();
    if !(b1 > 0.0) {
        return Err(Error::OutsideAdmissible(0.0));
    }
    let (n, k) = (cfg.n, cfg.k);
    let nf = n as f64;
    let m = cfg.m();
    let b2 = cfg.b2();
    let big = cfg.big_n();
    let t2 = 2f64.powf((big - 2.0) / big) * (b1 / b2).powf(2.0 / big);
    let mut t = vec![b2 / b1 * (t2 / 2.0).powf(m), t2];
    t.extend(std::iter::repeat(t2 / 2.0).take(k - 2));
    let f = t.iter().map(|v| v.powf(2.0 - nf)).product::<f64>();

    let a1 = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let c = if i == j { nf - 1.0 } else { nf - 2.0 };
                    b2 * f * c / (t[i] * t[j])
                })
                .collect()
        })
        .collect();
    let mut a2 = vec![vec![0.0; k]; k];
    a2[1][1] = b2 * (nf - 4.0) * t2.powf((nf - 6.0) / 2.0) / 2f64.powf(nf / 2.0);
    for i in 2..k {
        a2[i][i] = b2 * (nf - 4.0) * t[i].powf((nf - 6.0) / 2.0) / 2.0;
    }
    let mut b = vec![vec![0.0; n]; k];
    b[0][0] = b1;
    b[1][0] = -(nf - 2.0) * b2 * t2.powf((nf - 4.0) / 2.0) / 2f64.powf(nf / 2.0);
    let mut d = vec![vec![0.0; n]; n];
    d[0][0] = (nf - 2.0) * b2 * t2.powf(m) / 2f64.powf(nf / 2.0);
    for a in 1..n {
        d[a][a] = -b2 * t2.powf(m) / 2f64.powf(m);
    }
    Ok(HessianBlocks { t, a1, a2, b, d })
}

/// The reduced rational matrix whose determinant is `-(n+2k-3)`:
/// rows `[(n-1) - 2/(n-2), n-1, 1, ..]`, `[n-1, n-2, 1, ..]` and
/// `[2(n-2), 2(n-2), 2, .., 3, .., 2]`, scaled by `(n-2)` so every entry is an
/// integer. Returns the scaled matrix and the scale.
pub fn reduced_integer_matrix(n: usize, k: usize) -> Result<(Vec<Vec<i128>>, i128)> {
    if n < 3 {
        return Err(Error::Dimension(n));
    }
    if k < 2 {
        return Err(Error::InvalidConfig("the reduced matrix needs k >= 2".into()));
    }
    let ni = n as i128;
    let s = ni - 2;
    let mut mat = vec![vec![0i128; k]; k];
    mat[0][0] = (ni - 1) * s - 2;
    mat[0][1] = (ni - 1) * s;
    mat[1][0] = (ni - 1) * s;
    mat[1][1] = (ni - 2) * s;
    for j in 2..k {
        mat[0][j] = s;
        mat[1][j] = s;
    }
    for (i, row) in mat.iter_mut().enumerate().skip(2) {
        row[0] = 2 * (ni - 2) * s;
        row[1] = 2 * (ni - 2) * s;
        for (j, v) in row.iter_mut().enumerate().skip(2) {
            *v = if i == j { 3 * s } else { 2 * s };
        }
    }
    Ok((mat, s))
}

/// Fraction-free Gaussian elimination (Bareiss); exact for integer input.
pub fn bareiss_det(mat: &[Vec<i128>]) -> i128 {
    let n = mat.len();
    if n == 0 {
        return 1;
    }
    let mut a = mat.to_vec();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for p in 0..n - 1 {
        if a[p][p] == 0 {
            match (p + 1..n).find(|&r| a[r][p] != 0) {
                Some(r) => {
                    a.swap(p, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in p + 1..n {
            for j in p + 1..n {
                a[i][j] = (a[i][j] * a[p][p] - a[i][p] * a[p][j]) / prev;
            }
        }
        prev = a[p][p];
    }
    sign * a[n - 1][n - 1]
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Exact determinant of the reduced rational matrix as `(num, den)` in lowest terms.
pub fn reduced_matrix_det(n: usize, k: usize) -> Result<(i128, i128)> {
    let (mat, s) = reduced_integer_matrix(n, k)?;
    let num = bareiss_det(&mat);
    let den = s.pow(k as u32);
    let g = gcd(num, den).max(1);
    Ok((num / g, den / g))
}

fn to_matrix(h: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(h.len(), h.len(), |i, j| h[i][j])
}

fn spectrum(h: &[Vec<f64>]) -> (f64, f64, usize, usize) {
    let m = to_matrix(h);
    let det = m.clone().lu().determinant();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let smallest = eig.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let pos = eig.iter().filter(|v| **v > 0.0).count();
    let neg = eig.iter().filter(|v| **v < 0.0).count();
    (det, smallest, pos, neg)
}

/// Richardson-extrapolated central-difference Hessian of `Psi~`, with steps
/// proportional to each coordinate's scale. Columns are evaluated in parallel.
pub fn fd_hessian(cfg: &ReducedConfig, p: &ReducedPoint, rel_step: f64) -> Result<Vec<Vec<f64>>> {
    let x = p.flatten();
    let (n, k) = (cfg.n, cfg.k);
    let h: Vec<f64> = x.iter().enumerate().map(|(i, v)| if i < k { rel_step * v.abs() } else { rel_step }).collect();
    let f = |y: &[f64]| psi_tilde(cfg, &ReducedPoint::unflatten(y, n, k)).unwrap_or(f64::NAN);
    let half: Vec<f64> = h.iter().map(|v| v / 2.0).collect();
    let (coarse, fine) = rayon::join(|| fd::hessian(f, &x, &h), || fd::hessian(f, &x, &half));
    let out: Vec<Vec<f64>> = coarse
        .par_iter()
        .zip(fine.par_iter())
        .map(|(c, fi)| c.iter().zip(fi).map(|(a, b)| fd::richardson(*a, *b)).collect())
        .collect();
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("finite-difference stencil left the admissible set".into()));
    }
    Ok(out)
}

/// The closed-form critical point together with its Hessian certificate.
pub fn nondegeneracy_check(cfg: &ReducedConfig) -> Result<CriticalReport> {
    let sigma = cfg.sigma0()?;
    let t = closed_form_t(cfg, &sigma)?;
    let point = ReducedPoint { t, sigma };
    let (value, _, hessian) = psi_tilde_derivatives(cfg, &point)?;
    let gradient_norm = relative_gradient_norm(cfg, &point)?;
    let (determinant, smallest, pos, neg) = spectrum(&hessian);

    let fd = fd_hessian(cfg, &point, 1e-3)?;
    let scale = hessian.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut gap = 0.0f64;
    let mut sym = 0.0f64;
    for i in 0..fd.len() {
        for j in 0..fd.len() {
            gap = gap.max((fd[i][j] - hessian[i][j]).abs() / scale);
            sym = sym.max((fd[i][j] - fd[j][i]).abs() / scale);
        }
    }
    let (fd_det, fd_smallest, _, _) = spectrum(&fd);
    let schur = if cfg.k >= 2 { Some(schur_report(cfg, &point, &hessian)?) } else { None };
    Ok(CriticalReport {
        n: cfg.n,
        k: cfg.k,
        d: point.d(),
        psi_hat_closed_form: psi_hat(cfg, &point.sigma)?,
        point,
        psi: value,
        gradient_norm,
        hessian,
        determinant,
        smallest_abs_eigenvalue: smallest,
        positive_eigenvalues: pos,
        negative_eigenvalues: neg,
        fd_hessian_gap: gap,
        fd_determinant: fd_det,
        fd_smallest_abs_eigenvalue: fd_smallest,
        symmetry_defect: sym,
        schur,
    })
}

/// Rotation taking `grad a` to `|grad a| e_1`, applied to vectors.
fn align_to_first_axis(g: &[f64], v: &[f64]) -> Vec<f64> {
    let frame = geom::orthonormal_frame(&geom::scale(g, 1.0 / geom::norm(g)));
    frame.iter().map(|e| geom::dot(e, v)).collect()
}

fn schur_report(cfg: &ReducedConfig, point: &ReducedPoint, hessian: &[Vec<f64>]) -> Result<SchurReport> {
    let blocks = hessian_blocks(cfg)?;
    let (n, k) = (cfg.n, cfg.k);
    // Compare the displayed blocks with the analytic Hessian in a frame where
    // grad a points along e_1.
    let rot = |row: &[f64]| align_to_first_axis(&cfg.grad_a0, row);
    let mut gap = 0.0f64;
    let scale = hessian.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..k {
        gap = gap.max((blocks.t[i] - point.t[i]).abs() / point.t[i]);
        for j in 0..k {
            gap = gap.max((blocks.a1[i][j] + blocks.a2[i][j] - hessian[i][j]).abs() / scale);
        }
        let b_row = rot(&hessian[i][k..k + n]);
        for a in 0..n {
            gap = gap.max((blocks.b[i][a] - b_row[a]).abs() / scale);
        }
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|a| rot(&(0..n).map(|b| hessian[k + a][k + b]).collect::<Vec<_>>())).collect();
    // cols[a] = R H e_a; the rotated block is R H R^t.
    for a in 0..n {
        let row: Vec<f64> = (0..n).map(|b| cols[b][a]).collect();
        let rr = rot(&row);
        for b in 0..n {
            gap = gap.max((blocks.d[a][b] - rr[b]).abs() / scale);
        }
    }
    let s = blocks.schur()?;
    let det = to_matrix(&s).lu().determinant();
    let (num, den) = reduced_matrix_det(n, k)?;
    Ok(SchurReport {
        determinant: det,
        reduced_numerator: num,
        reduced_denominator: den,
        scale_c: det / (num as f64 / den as f64),
        block_gap: gap,
    })
}

/// Ascent of `log Psi^` over the admissible set, where `Psi^` is evaluated by
/// numerical minimization over `t` and its gradient by the envelope identity
/// `grad Psi^ = d Psi~ / d sigma` at the minimizing `t`.
pub fn ascend_psi_hat(cfg: &ReducedConfig, start: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, usize)> {
    cfg.admissible(start)?;
    let (n, k) = (cfg.n, cfg.k);
    let dim = n * k;
    let t0 = vec![1.0; k];
    let eval = |s: &[f64], t_guess: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let sigma: Vec<Vec<f64>> = s.chunks(n).map(<[f64]>::to_vec).collect();
        let t = minimize_in_t(cfg, &sigma, t_guess)?;
        let p = ReducedPoint { t: t.clone(), sigma };
        let (v, g, _) = psi_tilde_derivatives(cfg, &p)?;
        let grad = g[k..].iter().map(|x| x / v).collect();
        Ok((v.ln(), grad, t))
    };
    let mut s: Vec<f64> = start.iter().flatten().copied().collect();
    let (mut v, mut g, mut t) = eval(&s, &t0)?;
    // BFGS on -log Psi^.
    let mut hinv = DMatrix::<f64>::identity(dim, dim);
    let mut iters = 0;
    while iters < 2000 {
        iters += 1;
        if geom::norm(&g) < 1e-13 {
            break;
        }
        let gv = nalgebra::DVector::from_column_slice(&g);
        let dir = &hinv * &gv;
        let dir: Vec<f64> = dir.iter().copied().collect();
        let slope = geom::dot(&dir, &g);
        let dir = if slope > 0.0 { dir } else { g.clone() };
        let slope = geom::dot(&dir, &g);
        let mut alpha = 1.0;
        let mut next = None;
        while alpha > 1e-14 {
            let trial = geom::axpy(&s, alpha, &dir);
            let lin = geom::dot(&cfg.grad_a0, &trial[..n]);
            if lin > 0.0 {
                if let Ok(r) = eval(&trial, &t) {
                    if r.0 >= v + 1e-4 * alpha * slope {
                        next = Some((trial, r));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, (nv, ng, nt))) = next else { break };
        let step = nalgebra::DVector::from_iterator(dim, trial.iter().zip(&s).map(|(a, b)| a - b));
        // Ascent on f equals descent on -f, whose gradient change is -(ng - g).
        let y = nalgebra::DVector::from_iterator(dim, ng.iter().zip(&g).map(|(a, b)| b - a));
        let sy = step.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(dim, dim);
            let left = &eye - rho * &step * y.transpose();
            let right = &eye - rho * &y * step.transpose();
            hinv = &left * &hinv * &right + rho * &step * step.transpose();
        }
        let moved = geom::norm(&step.iter().copied().collect::<Vec<_>>());
        s = trial;
        v = nv;
        g = ng;
        t = nt;
        if moved < 1e-15 {
            break;
        }
    }
    Ok((s.chunks(n).map(<[f64]>::to_vec).collect(), iters))
}

/// Random admissible start: Gaussian entries, `sigma_1` flipped into the
/// half-space `<grad a, sigma_1> > 0`.
pub fn random_admissible(cfg: &ReducedConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    loop {
        let mut sigma: Vec<Vec<f64>> = (0..cfg.k).map(|_| (0..cfg.n).map(|_| gaussian(rng)).collect()).collect();
        let lin = geom::dot(&cfg.grad_a0, &sigma[0]);
        if lin.abs() > 1e-3 * geom::norm(&cfg.grad_a0) {
            if lin < 0.0 {
                sigma[0].iter_mut().for_each(|v| *v = -*v);
            }
            return sigma;
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Result of [`maximize_psi_hat`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximizeReport {
    pub sigma0: Vec<Vec<f64>>,
    pub seed: u64,
    pub runs: Vec<AscentRun>,
    pub max_distance: f64,
    /// Largest relative gap between the numerically maximized value and `Psi^(sigma0)`.
    pub max_value_gap: f64,
    pub critical: CriticalReport,
}

/// Closed-form maximizer `sigma0`, its certificate, and `starts` independent
/// ascents from seeded random admissible points.
pub fn maximize_psi_hat(cfg: &ReducedConfig, starts: usize, seed: u64) -> Result<MaximizeReport> {
    let sigma0 = cfg.sigma0()?;
    let critical = nondegeneracy_check(cfg)?;
    let best = psi_hat(cfg, &sigma0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let begins: Vec<Vec<Vec<f64>>> = (0..starts).map(|_| random_admissible(cfg, &mut rng)).collect();
    let runs = begins
        .into_par_iter()
        .map(|start| {
            let (end, iterations) = ascend_psi_hat(cfg, &start)?;
            let distance =
                end.iter().flatten().zip(sigma0.iter().flatten()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            let t = minimize_in_t(cfg, &end, &vec![1.0; cfg.k])?;
            let value = psi_tilde(cfg, &ReducedPoint { t, sigma: end.clone() })?;
            Ok(AscentRun { start, end, iterations, distance, value })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_distance = runs.iter().fold(0.0f64, |a, r| a.max(r.distance));
    let max_value_gap = runs.iter().fold(0.0f64, |a, r| a.max((r.value - best).abs() / best));
    Ok(MaximizeReport { sigma0, seed, runs, max_distance, max_value_gap, critical })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bareiss_matches_small_cases() {
        assert_eq!(bareiss_det(&[vec![2, 3, 1], vec![3, 2, 1], vec![4, 4, 3]]), -7);
        assert_eq!(bareiss_det(&[vec![0, 1], vec![1, 0]]), -1);
        assert_eq!(bareiss_det(&[vec![1, 2], vec![2, 4]]), 0);
    }

    #[test]
    fn weight_derivatives_match_differences() {
        let s = [0.3, -0.2, 0.5];
        let (g, h) = weight_derivs(&s, 1.5);
        let fg = fd::gradient(|x| weight(x, 1.5), &s, &[1e-5; 3]);
        let fh = fd::hessian(|x| weight(x, 1.5), &s, &[1e-4; 3]);
        for i in 0..3 {
            assert!((g[i] - fg[i]).abs() < 1e-8);
            for j in 0..3 {
                assert!((h[i][j] - fh[i][j]).abs() < 1e-6);
            }
        }
    }
}
