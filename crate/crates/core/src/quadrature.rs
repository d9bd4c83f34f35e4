//! Numerical integration over balls, annuli and the perforated ball.
//!
//! Integrands in this crate are concentrated at bubble scales that may sit many
//! decades below the domain size, so every region is written in spherical
//! coordinates about a chosen center:
//!
//! ```text
//! x = c + r (cos(theta) e_0 + sin(theta) omega),   omega in S^{n-2} orthogonal to e_0
//! dx = r^{n-1} sin^{n-2}(theta) dr dtheta domega
//! ```
//!
//! The polar angle `theta` is integrated adaptively, the transverse sphere
//! `S^{n-2}` by a fixed product Gauss rule (or low-discrepancy points in high
//! dimension, or a single point when the integrand is axisymmetric about
//! `e_0`), and the radius adaptively in `u = ln r`, where power-law bubble
//! tails become smooth exponentials.
//!
//! Every adaptive step evaluates its nodes independently and combines them in a
//! fixed order, so results are bit-identical for any worker count.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubbles::AnnulusDecomposition;
use crate::error::{Error, Result};
use crate::geom;
use crate::green::PerforatedBall;
use crate::special::log_gamma;

// Gauss-Kronrod 10/21 abscissae and weights (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_800_534_889,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];
// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

const NODES_PER_PANEL: usize = 21;

/// Largest product rule used as a refinement level on the transverse sphere.
const MAX_TRANSVERSE_POINTS: usize = 16_384;

/// Result of an integration with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl Estimate {
    fn zero() -> Self {
        Self { value: 0.0, error: 0.0, evaluations: 0, converged: true }
    }

    /// Sum of independent estimates; errors add in quadrature.
    pub fn sum(parts: &[Estimate]) -> Estimate {
        let values: Vec<f64> = parts.iter().map(|e| e.value).collect();
        let errs: Vec<f64> = parts.iter().map(|e| e.error * e.error).collect();
        Estimate {
            value: geom::pairwise_sum(&values),
            error: geom::pairwise_sum(&errs).sqrt(),
            evaluations: parts.iter().map(|e| e.evaluations).sum(),
            converged: parts.iter().all(|e| e.converged),
        }
    }
}

/// How the transverse sphere `S^{n-2}` is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Product Gauss-Gegenbauer rule, exact for spherical harmonics up to
    /// `angular_degree`.
    Product,
    /// Kronecker low-discrepancy points with a seeded shift, antithetically
    /// symmetrized.
    QuasiRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_evals: usize,
    pub seed: u64,
    pub angular_degree: usize,
    pub qmc_points: usize,
    /// Number of transverse resolution levels compared at each polar node.
    pub angular_levels: usize,
    /// Polar axis; defaults to the first coordinate axis.
    pub axis: Option<Vec<f64>>,
    /// Integrand is invariant under rotations fixing the polar axis.
    pub axisymmetric: bool,
}

impl QuadratureSpec {
    /// Product rule for `n <= 5`, quasi-random transverse sampling above.
    pub fn for_dimension(n: usize) -> Self {
        Self {
            method: if n <= 5 { Method::Product } else { Method::QuasiRandom },
            rel_tol: 1e-8,
            abs_tol: 1e-14,
            max_evals: 20_000_000,
            seed: 0,
            angular_degree: 7,
            qmc_points: 4,
            angular_levels: 3,
            axis: None,
            axisymmetric: false,
        }
    }

    pub fn with_tolerance(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_axis(mut self, axis: Vec<f64>, axisymmetric: bool) -> Self {
        self.axis = Some(axis);
        self.axisymmetric = axisymmetric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_evals < 1000 {
            return Err(Error::InvalidConfig("max_evals must be at least 1000".into()));
        }
        if let Some(axis) = &self.axis {
            if geom::norm(axis) == 0.0 {
                return Err(Error::InvalidConfig("polar axis must be nonzero".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Sample {
    value: f64,
    error: f64,
    evals: usize,
}

impl Sample {
    fn exact(value: f64) -> Self {
        Self { value, error: 0.0, evals: 1 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    splittable: bool,
}

fn panel_nodes(a: f64, b: f64, out: &mut Vec<f64>) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    out.push(c);
    for x in XGK.iter().take(10) {
        out.push(c - h * x);
        out.push(c + h * x);
    }
}

fn combine(a: f64, b: f64, s: &[Sample]) -> (Panel, usize) {
    let h = 0.5 * (b - a);
    let fc = s[0].value;
    let mut kron = WGK[10] * fc;
    let mut gauss = 0.0;
    let mut res_abs = WGK[10] * fc.abs();
    let mut inner_err = WGK[10] * s[0].error;
    for j in 0..10 {
        let (lo, hi) = (s[1 + 2 * j], s[2 + 2 * j]);
        let pair = lo.value + hi.value;
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
        res_abs += WGK[j] * (lo.value.abs() + hi.value.abs());
        inner_err += WGK[j] * (lo.error + hi.error);
    }
    let mean = 0.5 * kron;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((s[1 + 2 * j].value - mean).abs() + (s[2 + 2 * j].value - mean).abs());
    }
    let abs_h = h.abs();
    let mut err = ((kron - gauss) * h).abs();
    let res_asc = res_asc * abs_h;
    let res_abs = res_abs * abs_h;
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    let evals = s.iter().map(|x| x.evals).sum();
    let splittable = abs_h > 1e-13 * (a.abs() + b.abs()).max(f64::MIN_POSITIVE);
    (Panel { a, b, value: kron * h, error: err + inner_err * abs_h, splittable }, evals)
}

#[derive(Debug, Clone, Copy)]
struct Tolerance {
    rel: f64,
    abs: f64,
}

/// Globally adaptive Gauss-Kronrod driver. `eval` maps a batch of abscissae to
/// samples in the same order.
fn adaptive<E>(eval: E, breaks: &[f64], tol: Tolerance, max_evals: usize) -> Estimate
where
    E: Fn(&[f64]) -> Vec<Sample>,
{
    let mut panels: Vec<Panel> = Vec::new();
    let mut evals = 0usize;
    let mut nodes = Vec::with_capacity(NODES_PER_PANEL * breaks.len());
    for w in breaks.windows(2) {
        panel_nodes(w[0], w[1], &mut nodes);
    }
    let samples = eval(&nodes);
    for (i, w) in breaks.windows(2).enumerate() {
        let (p, e) = combine(w[0], w[1], &samples[i * NODES_PER_PANEL..(i + 1) * NODES_PER_PANEL]);
        panels.push(p);
        evals += e;
    }

    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let total_err: f64 = panels.iter().map(|p| p.error).sum();
        let target = tol.abs.max(tol.rel * total.abs());
        if total_err <= target {
            return finish(panels, evals, true);
        }
        if evals >= max_evals {
            return finish(panels, evals, false);
        }
        let worst = panels
            .iter()
            .enumerate()
            .filter(|(_, p)| p.splittable)
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i);
        let Some(worst) = worst else {
            return finish(panels, evals, false);
        };
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        nodes.clear();
        panel_nodes(p.a, mid, &mut nodes);
        panel_nodes(mid, p.b, &mut nodes);
        let samples = eval(&nodes);
        let (left, e1) = combine(p.a, mid, &samples[..NODES_PER_PANEL]);
        let (right, e2) = combine(mid, p.b, &samples[NODES_PER_PANEL..]);
        evals += e1 + e2;
        panels.push(left);
        panels.push(right);
    }
}

fn finish(mut panels: Vec<Panel>, evaluations: usize, converged: bool) -> Estimate {
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let values: Vec<f64> = panels.iter().map(|p| p.value).collect();
    let errors: Vec<f64> = panels.iter().map(|p| p.error).collect();
    Estimate { value: geom::pairwise_sum(&values), error: geom::pairwise_sum(&errors), evaluations, converged }
}

/// Adaptive Gauss-Kronrod integral of a scalar function over `[a, b]`.
pub fn integrate_interval<F>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64, max_evals: usize) -> Estimate
where
    F: Fn(f64) -> f64,
{
    integrate_breakpoints(f, &[a, b], rel_tol, abs_tol, max_evals)
}

/// As [`integrate_interval`] with initial panel boundaries `breaks` (sorted).
pub fn integrate_breakpoints<F>(f: F, breaks: &[f64], rel_tol: f64, abs_tol: f64, max_evals: usize) -> Estimate
where
    F: Fn(f64) -> f64,
{
    if breaks.len() < 2 || breaks[0] == breaks[breaks.len() - 1] {
        return Estimate::zero();
    }
    adaptive(
        |xs| xs.iter().map(|&x| Sample::exact(f(x))).collect(),
        breaks,
        Tolerance { rel: rel_tol, abs: abs_tol },
        max_evals,
    )
}

/// Gauss-Jacobi rule for the weight `(1 - t^2)^a` on `[-1, 1]` (Golub-Welsch).
pub fn gauss_gegenbauer(points: usize, a: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(points >= 1 && a > -1.0);
    let mut jac = DMatrix::<f64>::zeros(points, points);
    for k in 1..points {
        let kf = k as f64;
        let b = kf * (kf + 2.0 * a) / ((2.0 * kf + 2.0 * a + 1.0) * (2.0 * kf + 2.0 * a - 1.0));
        let off = b.sqrt();
        jac[(k, k - 1)] = off;
        jac[(k - 1, k)] = off;
    }
    let mu0 = (PI.ln() * 0.5 + log_gamma(a + 1.0).unwrap() - log_gamma(a + 1.5).unwrap()).exp();
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    pairs.into_iter().unzip()
}

/// A cubature rule on the unit sphere `S^{d-1}` of R^d.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// Product rule in hyperspherical coordinates, exact for polynomials of
    /// degree `<= degree` restricted to the sphere. Requires `dim >= 1`; for
    /// `dim == 1` the "sphere" is `{-1, 1}`.
    pub fn product(dim: usize, degree: usize) -> Self {
        assert!(dim >= 1);
        if dim == 1 {
            return Self { dim, points: vec![vec![-1.0], vec![1.0]], weights: vec![1.0, 1.0] };
        }
        if dim == 2 {
            let m = degree + 1;
            let points = (0..m)
                .map(|i| {
                    let phi = 2.0 * PI * (i as f64 + 0.5) / m as f64;
                    vec![phi.cos(), phi.sin()]
                })
                .collect();
            return Self { dim, points, weights: vec![2.0 * PI / m as f64; m] };
        }
        // x = (cos(phi), sin(phi) * y), y in S^{dim-2}, measure sin^{dim-2}(phi).
        let sub = SphereRule::product(dim - 1, degree);
        let q = degree / 2 + 1;
        let (ts, ws) = gauss_gegenbauer(q, (dim as f64 - 3.0) / 2.0);
        let mut points = Vec::with_capacity(q * sub.points.len());
        let mut weights = Vec::with_capacity(q * sub.points.len());
        for (t, w) in ts.iter().zip(&ws) {
            let s = (1.0 - t * t).sqrt();
            for (y, wy) in sub.points.iter().zip(&sub.weights) {
                let mut x = Vec::with_capacity(dim);
                x.push(*t);
                x.extend(y.iter().map(|v| s * v));
                points.push(x);
                weights.push(w * wy);
            }
        }
        Self { dim, points, weights }
    }

    /// Low-discrepancy points symmetrized over a finite group: a Kronecker
    /// sequence with a seeded Cranley-Patterson shift, mapped to Gaussians by
    /// Box-Muller and normalized, then replicated over coordinate sign flips
    /// (all of them up to dimension 6, the antipodal map above) and cyclic
    /// coordinate shifts. The orbit average integrates every spherical
    /// harmonic of degree 1 to 3 exactly.
    pub fn quasi_random(dim: usize, base_points: usize, seed: u64) -> Self {
        assert!(dim >= 1 && base_points >= 1);
        let gauss_dims = dim + dim % 2;
        let alphas = kronecker_generators(gauss_dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: Vec<f64> = (0..gauss_dims).map(|_| rng.gen::<f64>()).collect();
        let flips: Vec<Vec<f64>> = if dim <= 6 {
            (0..1usize << dim)
                .map(|mask| (0..dim).map(|b| if mask >> b & 1 == 1 { -1.0 } else { 1.0 }).collect())
                .collect()
        } else {
            vec![vec![1.0; dim], vec![-1.0; dim]]
        };
        let area = sphere_area(dim);
        let mut points = Vec::with_capacity(base_points * flips.len() * dim);
        for i in 0..base_points {
            let u: Vec<f64> = (0..gauss_dims).map(|d| (shift[d] + (i as f64 + 1.0) * alphas[d]).fract()).collect();
            let mut g = Vec::with_capacity(gauss_dims);
            for pair in u.chunks(2) {
                let radius = (-2.0 * (1.0 - pair[0]).ln()).sqrt();
                let angle = 2.0 * PI * pair[1];
                g.push(radius * angle.cos());
                g.push(radius * angle.sin());
            }
            g.truncate(dim);
            let x = geom::scale(&g, 1.0 / geom::norm(&g));
            for rot in 0..dim {
                for flip in &flips {
                    points.push((0..dim).map(|c| flip[c] * x[(c + rot) % dim]).collect());
                }
            }
        }
        let w = area / points.len() as f64;
        Self { dim, weights: vec![w; points.len()], points }
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        let terms: Vec<f64> = self.points.iter().zip(&self.weights).map(|(x, w)| w * f(x)).collect();
        geom::pairwise_sum(&terms)
    }
}

/// Generalized golden-ratio generators for the Kronecker sequence in `d` dims.
fn kronecker_generators(d: usize) -> Vec<f64> {
    // phi_d is the unique positive root of x^{d+1} = x + 1.
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    (1..=d).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect()
}

/// Surface measure of the unit sphere in R^dim (`dim = 1` gives 2).
pub fn sphere_area(dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    2.0 * PI.powf(half) / log_gamma(half).unwrap().exp()
}

/// Spherical coordinate frame about a center.
struct Frame {
    center: Vec<f64>,
    axis: Vec<f64>,
    transverse: Vec<Vec<f64>>,
    /// Transverse rules of increasing resolution.
    levels: Vec<SphereRule>,
}

impl Frame {
    fn new(center: &[f64], spec: &QuadratureSpec) -> Result<Self> {
        let n = center.len();
        if n < 2 {
            return Err(Error::Dimension(n));
        }
        let axis = match &spec.axis {
            Some(a) => {
                crate::error::same_dim(n, a.len())?;
                geom::scale(a, 1.0 / geom::norm(a))
            }
            None => geom::unit(n, 0),
        };
        let frame = geom::orthonormal_frame(&axis);
        let transverse = frame[1..].to_vec();
        let tdim = n - 1;
        let count = spec.angular_levels.max(1);
        let levels = if spec.axisymmetric {
            let mut x = vec![0.0; tdim];
            x[0] = 1.0;
            vec![SphereRule { dim: tdim, points: vec![x], weights: vec![sphere_area(tdim)] }]
        } else if spec.method == Method::QuasiRandom && tdim > 2 {
            let base = spec.qmc_points.max(1);
            (0..count).map(|l| SphereRule::quasi_random(tdim, base << l, spec.seed)).collect()
        } else {
            let mut degree = spec.angular_degree;
            let mut levels = vec![SphereRule::product(tdim, degree)];
            while levels.len() < count {
                degree = 2 * degree + 1;
                let rule = SphereRule::product(tdim, degree);
                if rule.points.len() > MAX_TRANSVERSE_POINTS {
                    break;
                }
                levels.push(rule);
            }
            levels
        };
        Ok(Self { center: center.to_vec(), axis, transverse, levels })
    }

    fn direction(&self, theta: f64, omega: &[f64]) -> Vec<f64> {
        let (s, c) = theta.sin_cos();
        let mut d = geom::scale(&self.axis, c);
        for (e, w) in self.transverse.iter().zip(omega) {
            if *w != 0.0 {
                d = geom::axpy(&d, s * w, e);
            }
        }
        d
    }
}

/// Radial part of a shell integral along one ray, `int g(r) r^{n-1} dr`,
/// adaptive in `u = ln r` above `r_core` and in `r` below it.
fn radial_ray<G: Fn(f64) -> f64>(
    g: G,
    n: usize,
    r_in: f64,
    r_out: f64,
    scales: &[f64],
    tol: Tolerance,
    max_evals: usize,
) -> Sample {
    if r_out <= r_in {
        return Sample::default();
    }
    let power = n as i32;
    let mut core = Sample::default();
    let log_start = if r_in > 0.0 {
        r_in
    } else {
        let smallest = scales.iter().copied().filter(|s| *s > 0.0).fold(r_out, f64::min);
        let r_core = (1e-3 * smallest).min(r_out);
        let e = adaptive(
            |xs| xs.iter().map(|&r| Sample::exact(g(r) * r.powi(power - 1))).collect(),
            &[0.0, r_core],
            tol,
            max_evals,
        );
        core = Sample { value: e.value, error: e.error, evals: e.evaluations };
        r_core
    };
    if log_start >= r_out {
        return core;
    }
    let (u0, u1) = (log_start.ln(), r_out.ln());
    let mut breaks = vec![u0];
    let panels = ((u1 - u0) / 1.5).ceil().max(1.0) as usize;
    for i in 1..panels {
        breaks.push(u0 + (u1 - u0) * i as f64 / panels as f64);
    }
    breaks.extend(scales.iter().filter(|s| **s > 0.0).map(|s| s.ln()).filter(|u| *u > u0 && *u < u1));
    breaks.push(u1);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let e = adaptive(
        |us| {
            us.iter()
                .map(|&u| {
                    let r = u.exp();
                    Sample::exact(g(r) * r.powi(power))
                })
                .collect()
        },
        &breaks,
        tol,
        max_evals,
    );
    Sample { value: core.value + e.value, error: core.error + e.error, evals: core.evals + e.evaluations }
}

/// Integral of `f` over the star-shaped shell
/// `{c + r w : r_in <= r <= r_out(w), |w| = 1}`.
fn integrate_shell<F, R>(
    f: &F,
    center: &[f64],
    r_in: f64,
    r_out: R,
    scales: &[f64],
    spec: &QuadratureSpec,
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    let n = center.len();
    let frame = Frame::new(center, spec)?;
    let transverse_area = sphere_area(n - 1);
    // Inner tolerances leave room for the outer polar integration.
    let inner_tol = Tolerance { rel: 0.1 * spec.rel_tol, abs: 0.1 * spec.abs_tol / (PI * transverse_area) };
    let inner_budget = (spec.max_evals / 1000).clamp(20_000, 2_000_000);
    let sin_power = (n - 2) as i32;

    let transverse_sum = |theta: f64, rule: &SphereRule| -> Sample {
        let mut out = Sample::default();
        for (omega, w) in rule.points.iter().zip(&rule.weights) {
            let dir = frame.direction(theta, omega);
            let outer = r_out(&dir);
            let s =
                radial_ray(|r| f(&geom::axpy(&frame.center, r, &dir)), n, r_in, outer, scales, inner_tol, inner_budget);
            out.value += w * s.value;
            out.error += w * s.error;
            out.evals += s.evals;
        }
        out
    };
    // Successive transverse levels are compared; the finer value is kept and
    // the difference enters the error.
    let polar = |thetas: &[f64]| -> Vec<Sample> {
        thetas
            .par_iter()
            .map(|&theta| {
                let weight = theta.sin().powi(sin_power);
                if weight == 0.0 {
                    return Sample::exact(0.0);
                }
                let mut current = transverse_sum(theta, &frame.levels[0]);
                let mut evals = current.evals;
                let mut gap = 0.0;
                for rule in &frame.levels[1..] {
                    let next = transverse_sum(theta, rule);
                    evals += next.evals;
                    gap = (next.value - current.value).abs();
                    current = next;
                    if gap <= inner_tol.rel * current.value.abs() || gap <= inner_tol.abs * transverse_area {
                        break;
                    }
                }
                Sample { value: weight * current.value, error: weight * (current.error + gap), evals }
            })
            .collect()
    };
    let breaks = [0.0, 0.25 * PI, 0.5 * PI, 0.75 * PI, PI];
    Ok(adaptive(polar, &breaks, Tolerance { rel: spec.rel_tol, abs: spec.abs_tol }, spec.max_evals))
}

/// `int_{r_in < |x - c| < r_out} f(x) dx`.
///
/// `r_in = 0` integrates the full ball. Non-convergence within
/// `spec.max_evals` is reported through [`Estimate::converged`].
pub fn integrate_annulus<F>(f: F, center: &[f64], r_in: f64, r_out: f64, spec: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    integrate_annulus_scaled(f, center, r_in, r_out, &[], spec)
}

/// As [`integrate_annulus`] with radial scale hints (bubble scales) used as
/// initial breakpoints of the logarithmic radial grid.
pub fn integrate_annulus_scaled<F>(
    f: F,
    center: &[f64],
    r_in: f64,
    r_out: f64,
    scales: &[f64],
    spec: &QuadratureSpec,
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(r_in >= 0.0 && r_out > r_in) {
        return Err(Error::UnorderedRadii(format!("r_in = {r_in}, r_out = {r_out}")));
    }
    integrate_shell(&f, center, r_in, |_| r_out, scales, spec)
}

/// `int_{B(c_ball, R) \ B(center, r_in)} f(x) dx` for `B(center, r_in)` inside the ball.
pub fn integrate_ball_minus<F>(
    f: F,
    ball_center: &[f64],
    ball_radius: f64,
    center: &[f64],
    r_in: f64,
    scales: &[f64],
    spec: &QuadratureSpec,
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let offset = geom::sub(center, ball_center);
    let off2 = geom::norm_sq(&offset);
    if off2.sqrt() + r_in >= ball_radius {
        return Err(Error::OutsideDomain("inner ball is not inside the outer ball".into()));
    }
    let c2 = off2 - ball_radius * ball_radius;
    let reach = move |dir: &[f64]| {
        let b = geom::dot(dir, &offset);
        -b + (b * b - c2).sqrt()
    };
    let mut local = spec.clone();
    if local.axis.is_none() && off2 > 0.0 {
        local.axis = Some(geom::scale(&geom::sub(center, ball_center), 1.0 / off2.sqrt()));
    }
    integrate_shell(&f, center, r_in, reach, scales, &local)
}

/// Per-region integrals over the perforated ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEstimates {
    pub total: Estimate,
    /// One entry per annulus `A_1, ..., A_k`.
    pub annuli: Vec<Estimate>,
    /// `Omega_eps \ B(xi0, rho)`.
    pub far: Estimate,
}

/// `int_{Omega_eps} f` split over the annuli of `annuli` and the far region.
pub fn integrate_perforated<F>(
    f: F,
    dom: &PerforatedBall,
    annuli: &AnnulusDecomposition,
    spec: &QuadratureSpec,
) -> Result<RegionEstimates>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    geom_consistent(dom, annuli)?;
    let k = annuli.len();
    let scales = &annuli.deltas;
    let parts: Vec<Estimate> = (0..=k)
        .into_par_iter()
        .map(|l| {
            if l < k {
                let (r_in, r_out) = (annuli.radii[l + 1], annuli.radii[l]);
                integrate_annulus_scaled(&f, &dom.xi0, r_in, r_out, scales, spec)
            } else {
                integrate_ball_minus(&f, &dom.outer.center, dom.outer.radius, &dom.xi0, annuli.rho, scales, spec)
            }
        })
        .collect::<Result<_>>()?;
    Ok(RegionEstimates { total: Estimate::sum(&parts), annuli: parts[..k].to_vec(), far: parts[k] })
}

fn geom_consistent(dom: &PerforatedBall, annuli: &AnnulusDecomposition) -> Result<()> {
    crate::error::same_dim(dom.n(), annuli.center.len())?;
    if geom::dist(&dom.xi0, &annuli.center) > 0.0 {
        return Err(Error::InvalidConfig("annuli are not centered at the hole".into()));
    }
    let inner = annuli.radii[annuli.radii.len() - 1];
    if (inner - dom.epsilon).abs() > 1e-12 * dom.epsilon {
        return Err(Error::InvalidConfig(format!(
            "innermost radius {inner:e} does not match the hole radius {:e}",
            dom.epsilon
        )));
    }
    if annuli.rho >= dom.outer.radius - geom::dist(&dom.xi0, &dom.outer.center) {
        return Err(Error::OutsideDomain(format!("B(xi0, {}) is not inside the ball", annuli.rho)));
    }
    Ok(())
}
