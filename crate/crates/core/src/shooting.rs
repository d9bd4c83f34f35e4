//! Radial shooting for sign-changing solutions of
//! `u'' + ((n-1)/r) u' + |u|^{p-1} u = 0` on `(eps, 1)`, `u(eps) = u(1) = 0`,
//! `p = (n+2)/(n-2)`, and regression of the recovered layer scales against the
//! tower rate exponents.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::power_law_fit;
use crate::error::{positive, Error, Result};
use crate::special::gamma;

/// Critical radial problem on the annulus `eps < r < 1`. `n` may be any real
/// number `>= 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialProblem {
    pub n: f64,
    pub epsilon: f64,
}

impl RadialProblem {
    pub fn new(n: f64, epsilon: f64) -> Result<Self> {
        if !(n >= 3.0) || !n.is_finite() {
            return Err(Error::InvalidConfig(format!("n must be a real number >= 3, got {n}")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        Ok(Self { n, epsilon })
    }

    pub fn p(&self) -> f64 {
        (self.n + 2.0) / (self.n - 2.0)
    }

    /// Bubble normalization `(n(n-2))^{(n-2)/4}`.
    pub fn alpha(&self) -> f64 {
        (self.n * (self.n - 2.0)).powf((self.n - 2.0) / 4.0)
    }

    /// `|S^{n-1}| = 2 pi^{n/2} / Gamma(n/2)`.
    pub fn sphere_area(&self) -> f64 {
        2.0 * std::f64::consts::PI.powf(self.n / 2.0) / gamma(self.n / 2.0).expect("n / 2 > 0")
    }

    /// `u''` from the equation.
    fn accel(&self, r: f64, u: f64, v: f64) -> f64 {
        -(self.n - 1.0) / r * v - u.abs().powf(self.p() - 1.0) * u
    }

    /// `u'''`, the derivative of [`Self::accel`] along a solution.
    fn jerk(&self, r: f64, u: f64, v: f64) -> f64 {
        let a = self.accel(r, u, v);
        let p = self.p();
        (self.n - 1.0) / (r * r) * v - (self.n - 1.0) / r * a - p * u.abs().powf(p - 1.0) * v
    }

    fn rhs(&self, r: f64, y: &[f64; 3]) -> [f64; 3] {
        let (u, v) = (y[0], y[1]);
        let q = self.p() + 1.0;
        [v, self.accel(r, u, v), r.powf(self.n - 1.0) * (0.5 * v * v - u.abs().powf(q) / q)]
    }

    /// `E(r) = u'^2/2 + |u|^{p+1}/(p+1)`.
    pub fn radial_energy(&self, u: f64, v: f64) -> f64 {
        let q = self.p() + 1.0;
        0.5 * v * v + u.abs().powf(q) / q
    }
}

/// Integrator and search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// First slope of the scan.
    pub s_min: f64,
    /// Largest slope tried before giving up.
    pub s_max: f64,
    /// Ratio between consecutive scanned slopes.
    pub scan_factor: f64,
    /// Target for `|u(1)| / max |u|`.
    pub residual: f64,
    pub max_bisections: usize,
}

impl Default for ShootingSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            abs_tol: 1e-14,
            max_steps: 5_000_000,
            s_min: 1e-2,
            s_max: 1e12,
            scan_factor: 2.0,
            residual: 1e-10,
            max_bisections: 200,
        }
    }
}

impl ShootingSpec {
    pub fn with_tolerance(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    fn validate(&self) -> Result<()> {
        positive("rel_tol", self.rel_tol)?;
        positive("abs_tol", self.abs_tol)?;
        positive("s_min", self.s_min)?;
        if !(self.scan_factor > 1.0) || !(self.s_max > self.s_min) {
            return Err(Error::InvalidConfig("slope scan needs s_max > s_min and scan_factor > 1".into()));
        }
        Ok(())
    }
}

/// Accepted integration mesh with quintic Hermite dense output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem: RadialProblem,
    pub s: f64,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Zeros of `u` in `(eps, 1]`, increasing.
    pub zeros: Vec<f64>,
    /// `|S^{n-1}| int_eps^1 (u'^2/2 - |u|^{p+1}/(p+1)) r^{n-1} dr`.
    pub energy: f64,
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

/// Quintic Hermite interpolant on `[0, 1]` from values, first and second
/// derivatives (in `r`) at both ends; returns the value and `d/dr`.
fn hermite(t: f64, h: f64, f0: [f64; 3], f1: [f64; 3]) -> (f64, f64) {
    let (t2, t3, t4, t5) = (t * t, t.powi(3), t.powi(4), t.powi(5));
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h5 = 0.5 * (t3 - 2.0 * t4 + t5);
    let d0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
    let d1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
    let d2 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4);
    let d3 = -d0;
    let d4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
    let d5 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4);
    let value = h0 * f0[0] + h * h1 * f0[1] + h * h * h2 * f0[2] + h3 * f1[0] + h * h4 * f1[1] + h * h * h5 * f1[2];
    let slope =
        (d0 * f0[0] + h * d1 * f0[1] + h * h * d2 * f0[2] + d3 * f1[0] + h * d4 * f1[1] + h * h * d5 * f1[2]) / h;
    (value, slope)
}

/// Root of a continuous `f` on `[a, b]` with `f(a) f(b) <= 0`, by bisection.
fn bisect_root<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    if fa == 0.0 {
        return a;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

impl Trajectory {
    fn segment(&self, j: usize) -> ([f64; 3], [f64; 3], [f64; 3], [f64; 3]) {
        let p = &self.problem;
        let (r0, r1) = (self.r[j], self.r[j + 1]);
        let (u0, v0, u1, v1) = (self.u[j], self.v[j], self.u[j + 1], self.v[j + 1]);
        let (a0, a1) = (p.accel(r0, u0, v0), p.accel(r1, u1, v1));
        let (j0, j1) = (p.jerk(r0, u0, v0), p.jerk(r1, u1, v1));
        ([u0, v0, a0], [u1, v1, a1], [v0, a0, j0], [v1, a1, j1])
    }

    fn locate(&self, r: f64) -> usize {
        let idx = self.r.partition_point(|x| *x <= r);
        idx.clamp(1, self.r.len() - 1) - 1
    }

    /// `(u, u', u'')` at `r` from the dense output.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        let j = self.locate(r);
        self.eval_in(j, r)
    }

    fn eval_in(&self, j: usize, r: f64) -> (f64, f64, f64) {
        let h = self.r[j + 1] - self.r[j];
        let t = (r - self.r[j]) / h;
        let (fu0, fu1, fv0, fv1) = self.segment(j);
        let (u, _) = hermite(t, h, fu0, fu1);
        let (v, dv) = hermite(t, h, fv0, fv1);
        (u, v, dv)
    }

    pub fn end_value(&self) -> f64 {
        *self.u.last().expect("nonempty mesh")
    }

    /// Zeros strictly inside `(eps, 1)`, ignoring one that sits at `r = 1`
    /// within `margin`.
    pub fn interior_zeros(&self, margin: f64) -> Vec<f64> {
        self.zeros.iter().copied().filter(|z| *z < 1.0 - margin).collect()
    }

    /// Largest `|u|` on the mesh.
    pub fn max_abs(&self) -> f64 {
        self.u.iter().fold(0.0, |m, u| m.max(u.abs()))
    }

    /// Largest increase of `E(r)` between consecutive dense samples, relative
    /// to `max E`. Zero up to rounding for a faithful solution.
    pub fn energy_increase(&self, samples_per_step: usize) -> f64 {
        let p = &self.problem;
        let mut prev = p.radial_energy(self.u[0], self.v[0]);
        let mut top = prev;
        let mut worst: f64 = 0.0;
        for j in 0..self.r.len() - 1 {
            for s in 1..=samples_per_step {
                let r = self.r[j] + (self.r[j + 1] - self.r[j]) * s as f64 / samples_per_step as f64;
                let (u, v, _) = self.eval_in(j, r);
                let e = p.radial_energy(u, v);
                worst = worst.max(e - prev);
                top = top.max(e);
                prev = e;
            }
        }
        worst / top
    }

    /// Max over dense samples of `|u'' + ((n-1)/r) u' + |u|^{p-1} u|`, divided
    /// by the max of `|(n-1) u'/r| + |u|^p`.
    pub fn relative_residual(&self, samples_per_step: usize) -> f64 {
        let p = &self.problem;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..self.r.len() - 1 {
            for s in 0..samples_per_step {
                let r = self.r[j] + (self.r[j + 1] - self.r[j]) * (s as f64 + 0.5) / samples_per_step as f64;
                let (u, v, dv) = self.eval_in(j, r);
                let drag = (p.n - 1.0) / r * v;
                let force = u.abs().powf(p.p() - 1.0) * u;
                worst = worst.max((dv + drag + force).abs());
                scale = scale.max(drag.abs() + force.abs());
            }
        }
        worst / scale
    }

    /// Interior extremum of `|u|` on `(a, b)`: radius and `|u|`.
    fn peak_between(&self, a: f64, b: f64) -> (f64, f64) {
        let mut best = (a, 0.0);
        let start = self.locate(a);
        let stop = self.locate(b);
        for j in start..=stop {
            let (r0, r1) = (self.r[j].max(a), self.r[j + 1].min(b));
            if r1 <= r0 {
                continue;
            }
            let (_, v0, _) = self.eval_in(j, r0);
            let (_, v1, _) = self.eval_in(j, r1);
            let mut candidates = vec![r0, r1];
            if (v0 < 0.0) != (v1 < 0.0) {
                candidates.push(bisect_root(|r| self.eval_in(j, r).1, r0, r1));
            }
            for r in candidates {
                let h = self.eval_in(j, r).0.abs();
                if h > best.1 {
                    best = (r, h);
                }
            }
        }
        best
    }
}

/// Integrates from `r = eps` with `u(eps) = 0`, `u'(eps) = s` to `r = 1`.
pub fn integrate_radial(prob: &RadialProblem, s: f64, spec: &ShootingSpec) -> Result<Trajectory> {
    spec.validate()?;
    let eps = prob.epsilon;
    let mut out =
        Trajectory { problem: *prob, s, r: vec![eps], u: vec![0.0], v: vec![s], zeros: Vec::new(), energy: 0.0 };
    if s == 0.0 {
        out.r.push(1.0);
        out.u.push(0.0);
        out.v.push(0.0);
        return Ok(out);
    }
    let mut r = eps;
    let mut y = [0.0, s, 0.0];
    let mut k1 = prob.rhs(r, &y);
    // Initial step from the scale of the slope.
    let mut h = (1e-3 * (1.0 - eps)).min(0.01 * eps);
    let mut steps = 0;
    while r < 1.0 {
        steps += 1;
        if steps > spec.max_steps {
            return Err(Error::BlowUp { radius: r });
        }
        let last = r + h >= 1.0;
        if last {
            h = 1.0 - r;
        }
        let mut k = [[0.0; 3]; 7];
        k[0] = k1;
        for stage in 1..7 {
            let mut ys = y;
            for (prev, a) in k.iter().zip(&DP_A[stage]).take(stage) {
                for c in 0..3 {
                    ys[c] += h * a * prev[c];
                }
            }
            k[stage] = prob.rhs(r + DP_C[stage] * h, &ys);
        }
        let mut y_new = y;
        for c in 0..3 {
            y_new[c] += h * (0..6).map(|st| DP_A[6][st] * k[st][c]).sum::<f64>();
        }
        // The energy integral rides along but does not steer the step.
        let mut err: f64 = 0.0;
        for c in 0..2 {
            let e = h * (0..7).map(|st| DP_E[st] * k[st][c]).sum::<f64>();
            let sc = spec.abs_tol + spec.rel_tol * y[c].abs().max(y_new[c].abs());
            err = err.max((e / sc).abs());
        }
        if !y_new.iter().all(|x| x.is_finite()) {
            if h < 1e-14 * r {
                return Err(Error::BlowUp { radius: r });
            }
            h *= 0.1;
            continue;
        }
        if err <= 1.0 {
            let r_new = if last { 1.0 } else { r + h };
            out.r.push(r_new);
            out.u.push(y_new[0]);
            out.v.push(y_new[1]);
            if y[0] * y_new[0] < 0.0 || (y_new[0] == 0.0 && y[0] != 0.0) {
                let j = out.r.len() - 2;
                let z = bisect_root(|x| out.eval_in(j, x).0, r, r_new);
                out.zeros.push(z);
            }
            r = r_new;
            y = y_new;
            k1 = k[6];
            if last {
                break;
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-15 * r.max(1e-300) {
            return Err(Error::BlowUp { radius: r });
        }
    }
    out.energy = prob.sphere_area() * y[2];
    Ok(out)
}

/// One scanned slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub s: f64,
    pub nodes: usize,
    pub end_value: f64,
}

/// A nodal region of a shot solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Radius of the extremum of `|u|`.
    pub radius: f64,
    /// Signed value of `u` there.
    pub height: f64,
    /// `(alpha_n / |height|)^{2/(n-2)}`.
    pub delta: f64,
}

/// A `k`-node solution. `layers[0]` is the outermost nodal region, which
/// carries the largest scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub problem: RadialProblem,
    pub s: f64,
    pub nodes: usize,
    /// Interior zeros, increasing.
    pub node_radii: Vec<f64>,
    pub layers: Vec<Layer>,
    pub energy: f64,
    /// `|u(1)| / max |u|`.
    pub boundary_residual: f64,
    pub scan: Vec<ScanEntry>,
}

impl ShotResult {
    pub fn deltas(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.delta).collect()
    }
}

fn boundary_residual(t: &Trajectory) -> f64 {
    let m = t.max_abs();
    if m == 0.0 {
        0.0
    } else {
        t.end_value().abs() / m
    }
}

fn node_count(t: &Trajectory) -> usize {
    t.interior_zeros(0.0).len()
}

/// Shoots for a solution with exactly `k` interior zeros and positive slope at
/// `r = eps`.
pub fn find_k_node_solution(prob: &RadialProblem, k: usize, spec: &ShootingSpec) -> Result<ShotResult> {
    spec.validate()?;
    let mut scan = Vec::new();
    let mut s = spec.s_min;
    let mut bracket = None;
    while s <= spec.s_max {
        let t = integrate_radial(prob, s, spec)?;
        let nodes = node_count(&t);
        scan.push(ScanEntry { s, nodes, end_value: t.end_value() });
        if nodes > k {
            if scan.len() < 2 || scan[scan.len() - 2].nodes != k {
                return Err(Error::NoBracket { nodes: k, table: scan.iter().map(|e| (e.s, e.nodes)).collect() });
            }
            bracket = Some((scan[scan.len() - 2].s, s));
            break;
        }
        s *= spec.scan_factor;
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Err(Error::NoBracket { nodes: k, table: scan.iter().map(|e| (e.s, e.nodes)).collect() });
    };
    let mut best = integrate_radial(prob, lo, spec)?;
    for _ in 0..spec.max_bisections {
        if boundary_residual(&best) <= spec.residual {
            break;
        }
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let t = integrate_radial(prob, mid, spec)?;
        if node_count(&t) > k {
            hi = mid;
        } else {
            lo = mid;
            best = t;
        }
    }
    // The upper end may be the closer shot when the zero sits just inside r = 1.
    let upper = integrate_radial(prob, hi, spec)?;
    let t = if boundary_residual(&upper) < boundary_residual(&best) && upper.interior_zeros(1e-6).len() == k {
        upper
    } else {
        best
    };
    summarize(t, k, scan)
}

fn summarize(t: Trajectory, k: usize, scan: Vec<ScanEntry>) -> Result<ShotResult> {
    let prob = t.problem;
    let node_radii = t.interior_zeros(1e-6);
    if node_radii.len() != k {
        return Err(Error::NoBracket { nodes: k, table: scan.iter().map(|e| (e.s, e.nodes)).collect() });
    }
    let mut edges = vec![prob.epsilon];
    edges.extend(&node_radii);
    edges.push(1.0);
    let mut layers: Vec<Layer> = edges
        .windows(2)
        .map(|w| {
            let (radius, _) = t.peak_between(w[0], w[1]);
            let height = t.eval(radius).0;
            Layer { radius, height, delta: (prob.alpha() / height.abs()).powf(2.0 / (prob.n - 2.0)) }
        })
        .collect();
    layers.reverse();
    Ok(ShotResult {
        problem: prob,
        s: t.s,
        nodes: k,
        node_radii,
        layers,
        energy: t.energy,
        boundary_residual: boundary_residual(&t),
        scan,
    })
}

/// `theta_i = ((n-2) + 2(i-1)) / ((n-1) + 2(k-1))` for real `n`.
pub fn radial_rate_exponents(n: f64, k: usize) -> Vec<f64> {
    let den = (n - 1.0) + 2.0 * (k as f64 - 1.0);
    (0..k).map(|i| ((n - 2.0) + 2.0 * i as f64) / den).collect()
}

/// Fitted exponent of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFit {
    /// 1-based, outermost first.
    pub layer: usize,
    pub theta: f64,
    pub fitted: Option<f64>,
    pub gap: Option<f64>,
    /// `delta_i eps^{-theta_i}` per retained grid point.
    pub d_hat: Vec<f64>,
    /// `(max - min) / mean` of `d_hat`.
    pub d_spread: Option<f64>,
}

/// Outcome of [`exponent_regression`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub n: f64,
    /// Number of layers; the solutions have `layers - 1` interior zeros.
    pub layers: usize,
    pub eps_grid: Vec<f64>,
    pub solutions: Vec<ShotResult>,
    /// Grid points without a solution, with the reason.
    pub excluded: Vec<(f64, String)>,
    pub fits: Vec<LayerFit>,
    pub caveat: String,
}

pub const RADIAL_CAVEAT: &str =
    "constant-weight radial annulus: the layer exponents are a cross-check of the rate law, \
                                  which is only established for weights with nonvanishing gradient at the hole";

/// Shoots `layers`-layer solutions on each `eps` and fits `log delta_i`
/// against `log eps`.
pub fn exponent_regression(n: f64, layers: usize, eps_grid: &[f64], spec: &ShootingSpec) -> Result<ExponentReport> {
    if layers == 0 {
        return Err(Error::InvalidConfig("at least one layer is needed".into()));
    }
    let grid = crate::energy::decreasing_grid(eps_grid)?;
    let shots: Vec<(f64, Result<ShotResult>)> = grid
        .par_iter()
        .map(|&eps| (eps, RadialProblem::new(n, eps).and_then(|p| find_k_node_solution(&p, layers - 1, spec))))
        .collect();
    let mut solutions = Vec::new();
    let mut excluded = Vec::new();
    for (eps, shot) in shots {
        match shot {
            Ok(s) => solutions.push(s),
            Err(e) => excluded.push((eps, e.to_string())),
        }
    }
    if solutions.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} of {} grid points have a solution, need 4",
            solutions.len(),
            grid.len()
        )));
    }
    let thetas = radial_rate_exponents(n, layers);
    let eps: Vec<f64> = solutions.iter().map(|s| s.problem.epsilon).collect();
    let fits = thetas
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let deltas: Vec<f64> = solutions.iter().map(|s| s.layers[i].delta).collect();
            let fitted = power_law_fit(&eps, &deltas).map(|f| f.0);
            let d_hat: Vec<f64> = deltas.iter().zip(&eps).map(|(d, e)| d * e.powf(-theta)).collect();
            let mean = d_hat.iter().sum::<f64>() / d_hat.len() as f64;
            let (lo, hi) = d_hat.iter().fold((f64::INFINITY, 0.0f64), |(a, b), d| (a.min(*d), b.max(*d)));
            LayerFit {
                layer: i + 1,
                theta,
                fitted,
                gap: fitted.map(|f| f - theta),
                d_hat,
                d_spread: (mean > 0.0).then(|| (hi - lo) / mean),
            }
        })
        .collect();
    Ok(ExponentReport { n, layers, eps_grid: grid, solutions, excluded, fits, caveat: RADIAL_CAVEAT.into() })
}
