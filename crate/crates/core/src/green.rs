//! Green function of a ball, the perforated ball, weight fields and projections
//! of bubbles onto functions vanishing on the boundary of the perforated ball.

use serde::{Deserialize, Serialize};

use crate::bubbles::{alpha, Bubble};
use crate::error::{positive, same_dim, Error, Result};
use crate::geom;
use crate::special::DimConstants;

/// The ball `B(c, R)` in R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Relative slack allowed when a point is required to lie in a closed set.
const BOUNDARY_SLACK: f64 = 1e-12;

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.len() < 3 {
            return Err(Error::Dimension(center.len()));
        }
        positive("R", radius)?;
        Ok(Self { center, radius })
    }

    pub fn unit(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n], 1.0)
    }

    pub fn n(&self) -> usize {
        self.center.len()
    }

    fn check_closed(&self, x: &[f64]) -> Result<()> {
        same_dim(self.n(), x.len())?;
        if geom::dist(x, &self.center) > self.radius * (1.0 + BOUNDARY_SLACK) {
            return Err(Error::OutsideDomain(format!("{x:?} is outside the ball")));
        }
        Ok(())
    }

    pub(crate) fn check_open(&self, y: &[f64]) -> Result<()> {
        same_dim(self.n(), y.len())?;
        if geom::dist(y, &self.center) >= self.radius {
            return Err(Error::OutsideDomain(format!("{y:?} is not an interior point")));
        }
        Ok(())
    }

    /// `|x'|^2 |y'|^2 - 2 R^2 x'.y' + R^4` divided by `R^2`, with primes denoting
    /// coordinates relative to the center. Equals `(|y'| |x' - R^2 y'/|y'|^2|)^2 / R^2`.
    fn reflected_sq(&self, x: &[f64], y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let xp = geom::sub(x, &self.center);
        let yp = geom::sub(y, &self.center);
        let r2 = self.radius * self.radius;
        let s = (geom::norm_sq(&xp) * geom::norm_sq(&yp) - 2.0 * r2 * geom::dot(&xp, &yp) + r2 * r2) / r2;
        (s, xp, yp)
    }

    /// Regular part `H(x, y)` of the Green function; harmonic in both arguments
    /// and equal to `|x - y|^{2-n}` when either lies on the sphere.
    pub fn regular_part(&self, x: &[f64], y: &[f64]) -> f64 {
        let (s, _, _) = self.reflected_sq(x, y);
        s.powf((2.0 - self.n() as f64) / 2.0)
    }

    /// `grad_y H(x, y)`.
    pub fn regular_part_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let nf = self.n() as f64;
        let (s, xp, yp) = self.reflected_sq(x, y);
        let r2 = self.radius * self.radius;
        let x2 = geom::norm_sq(&xp);
        let c = (2.0 - nf) * s.powf(-nf / 2.0) / r2;
        xp.iter().zip(&yp).map(|(a, b)| c * (x2 * b - r2 * a)).collect()
    }

    /// `grad_x H(x, y)`.
    pub fn regular_part_grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.regular_part_grad_y(y, x)
    }

    /// `(G, H)` with `G = gamma_n (|x - y|^{2-n} - H)`.
    pub fn green(&self, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
        self.check_closed(x)?;
        self.check_open(y)?;
        let r = geom::dist(x, y);
        if r == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        let n = self.n();
        let gamma_n = DimConstants::new(n)?.gamma_n;
        let h = self.regular_part(x, y);
        Ok((gamma_n * (r.powf(2.0 - n as f64) - h), h))
    }

    pub fn volume(&self) -> f64 {
        let c = DimConstants::new(self.n()).expect("dimension checked at construction");
        c.ball_volume * self.radius.powi(self.n() as i32)
    }
}

/// Green function of `dom` at `(x, y)`; see [`Ball::green`].
pub fn green_ball(dom: &Ball, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    dom.green(x, y)
}

/// `Omega_eps = B(c, R) \ closed B(xi0, eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerforatedBall {
    pub outer: Ball,
    pub xi0: Vec<f64>,
    pub epsilon: f64,
}

impl PerforatedBall {
    pub fn new(outer: Ball, xi0: Vec<f64>, epsilon: f64) -> Result<Self> {
        same_dim(outer.n(), xi0.len())?;
        positive("epsilon", epsilon)?;
        let room = outer.radius - geom::dist(&xi0, &outer.center);
        if epsilon >= room {
            return Err(Error::OutsideDomain(format!(
                "hole of radius {epsilon} around {xi0:?} does not fit inside the ball (room {room})"
            )));
        }
        Ok(Self { outer, xi0, epsilon })
    }

    pub fn n(&self) -> usize {
        self.outer.n()
    }

    /// Half the distance from the hole center to the outer sphere.
    pub fn default_rho(&self) -> f64 {
        0.5 * (self.outer.radius - geom::dist(&self.xi0, &self.outer.center))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        geom::dist(x, &self.outer.center) <= self.outer.radius * (1.0 + BOUNDARY_SLACK)
            && geom::dist(x, &self.xi0) >= self.epsilon * (1.0 - BOUNDARY_SLACK)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        same_dim(self.n(), x.len())?;
        if geom::dist(x, &self.xi0) < self.epsilon * (1.0 - BOUNDARY_SLACK) {
            return Err(Error::OutsideDomain(format!("{x:?} lies inside the hole")));
        }
        self.outer.check_closed(x)
    }

    pub fn volume(&self) -> f64 {
        let c = DimConstants::new(self.n()).expect("dimension checked at construction");
        self.outer.volume() - c.ball_volume * self.epsilon.powi(self.n() as i32)
    }
}

/// A positive `C^2` coefficient field on the closure of the domain.
pub trait WeightField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>>;
}

/// `a(x) = a0 + g.(x - x0) + (x - x0)^T Q (x - x0) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticWeight {
    pub x0: Vec<f64>,
    pub a0: f64,
    pub g: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl QuadraticWeight {
    pub fn constant(n: usize, a0: f64) -> Self {
        Self::affine(vec![0.0; n], a0, vec![0.0; n])
    }

    pub fn affine(x0: Vec<f64>, a0: f64, g: Vec<f64>) -> Self {
        let n = x0.len();
        Self { x0, a0, g, q: vec![vec![0.0; n]; n] }
    }
}

impl WeightField for QuadraticWeight {
    fn value(&self, x: &[f64]) -> f64 {
        let h = geom::sub(x, &self.x0);
        let quad: f64 = self.q.iter().zip(&h).map(|(row, hi)| hi * geom::dot(row, &h)).sum();
        self.a0 + geom::dot(&self.g, &h) + 0.5 * quad
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = geom::sub(x, &self.x0);
        self.g.iter().zip(&self.q).map(|(g, row)| g + geom::dot(row, &h)).collect()
    }

    fn hessian(&self, _x: &[f64]) -> Vec<Vec<f64>> {
        self.q.clone()
    }
}

/// `a(x) = x_1^{l_1} ... x_m^{l_m}`, the weight produced by reducing a
/// torus-type domain to a lower-dimensional one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductWeight {
    pub n: usize,
    pub exponents: Vec<u32>,
}

impl ProductWeight {
    pub fn new(n: usize, exponents: Vec<u32>) -> Result<Self> {
        if exponents.is_empty() || exponents.len() > n {
            return Err(Error::InvalidConfig(format!(
                "product weight needs 1..={n} exponents, got {}",
                exponents.len()
            )));
        }
        Ok(Self { n, exponents })
    }

    fn factor_derivs(&self, x: &[f64], i: usize) -> (f64, f64, f64) {
        let l = self.exponents[i] as i32;
        let lf = l as f64;
        let v = x[i].powi(l);
        let d1 = if l >= 1 { lf * x[i].powi(l - 1) } else { 0.0 };
        let d2 = if l >= 2 { lf * (lf - 1.0) * x[i].powi(l - 2) } else { 0.0 };
        (v, d1, d2)
    }
}

impl WeightField for ProductWeight {
    fn value(&self, x: &[f64]) -> f64 {
        self.exponents.iter().zip(x).map(|(l, xi)| xi.powi(*l as i32)).product()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let m = self.exponents.len();
        let f: Vec<(f64, f64, f64)> = (0..m).map(|i| self.factor_derivs(x, i)).collect();
        (0..self.n)
            .map(|j| {
                if j >= m {
                    return 0.0;
                }
                (0..m).map(|i| if i == j { f[i].1 } else { f[i].0 }).product()
            })
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let m = self.exponents.len();
        let f: Vec<(f64, f64, f64)> = (0..m).map(|i| self.factor_derivs(x, i)).collect();
        let mut h = vec![vec![0.0; self.n]; self.n];
        for j in 0..m {
            for l in 0..m {
                h[j][l] = (0..m)
                    .map(|i| match (i == j, i == l) {
                        (true, true) => f[i].2,
                        (true, false) | (false, true) => f[i].1,
                        _ => f[i].0,
                    })
                    .product();
            }
        }
        h
    }
}

/// Smallest weight value over a deterministic sample of the ball; fails if the
/// weight is not bounded below by a positive number there.
pub fn check_weight_positive(weight: &dyn WeightField, ball: &Ball, samples: usize) -> Result<f64> {
    let n = ball.n();
    let mut min = weight.value(&ball.center);
    let rule = crate::quadrature::SphereRule::quasi_random(n, samples.max(1), 0);
    for (i, dir) in rule.points.iter().enumerate() {
        // radii sweep the closed ball, including the boundary
        let frac = ((i % 17) as f64 + 1.0) / 17.0;
        let x = geom::axpy(&ball.center, frac * ball.radius, dir);
        min = min.min(weight.value(&x));
    }
    if min > 0.0 {
        Ok(min)
    } else {
        Err(Error::InvalidConfig(format!("weight is not positive on the domain (min sample {min})")))
    }
}

/// Conditions under which the asymptotic projection is expected to be accurate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "code")]
pub enum RegimeWarning {
    /// `eps / delta >= 0.1`.
    HoleNotSmall { ratio: f64 },
    /// `|xi - xi0| / delta > 10`.
    CenterFarFromHole { ratio: f64 },
}

pub const HOLE_RATIO_LIMIT: f64 = 0.1;
pub const OFFSET_RATIO_LIMIT: f64 = 10.0;

pub fn regime_warnings(dom: &PerforatedBall, b: &Bubble) -> Vec<RegimeWarning> {
    let mut out = Vec::new();
    let ratio = dom.epsilon / b.delta;
    if ratio >= HOLE_RATIO_LIMIT {
        out.push(RegimeWarning::HoleNotSmall { ratio });
    }
    let offset = geom::dist(&b.xi, &dom.xi0) / b.delta;
    if offset > OFFSET_RATIO_LIMIT {
        out.push(RegimeWarning::CenterFarFromHole { ratio: offset });
    }
    out
}

/// A projected value together with any regime warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projected {
    pub value: f64,
    pub warnings: Vec<RegimeWarning>,
}

/// Projection of bubbles and their kernels onto functions vanishing on the
/// boundary of a perforated ball. All values carry the bubble's sign for
/// `project`, while the kernel projections act on the positive profile.
pub trait ProjectionOracle: Send + Sync {
    fn domain(&self) -> &PerforatedBall;
    fn project(&self, b: &Bubble, x: &[f64]) -> Result<f64>;
    fn project_gradient(&self, b: &Bubble, x: &[f64]) -> Result<Vec<f64>>;
    fn project_psi0(&self, b: &Bubble, x: &[f64]) -> Result<f64>;
    /// `j` in `1..=n`.
    fn project_psij(&self, b: &Bubble, x: &[f64], j: usize) -> Result<f64>;
}

fn check_axis(n: usize, j: usize) -> Result<usize> {
    if j == 0 || j > n {
        Err(Error::IndexOutOfRange { index: j, max: n })
    } else {
        Ok(j - 1)
    }
}

/// Main terms of the small-hole expansion of the projection:
/// `PU = U - alpha_n delta^m H(x, xi) - alpha_n delta^m (delta^2 + |xi - xi0|^2)^{-m} eps^{n-2} |x - xi0|^{2-n}`
/// with `m = (n-2)/2`, and the analogous kernel expansions. Remainder terms
/// are not included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticProjection {
    pub dom: PerforatedBall,
}

impl AsymptoticProjection {
    pub fn new(dom: PerforatedBall) -> Self {
        Self { dom }
    }

    fn prep(&self, b: &Bubble, x: &[f64]) -> Result<(f64, f64, f64)> {
        same_dim(self.dom.n(), b.n)?;
        self.dom.check(x)?;
        self.dom.outer.check_open(&b.xi)?;
        let nf = b.n as f64;
        let m = (nf - 2.0) / 2.0;
        let off2 = geom::dist_sq(&b.xi, &self.dom.xi0);
        let hole = self.dom.epsilon.powf(nf - 2.0) * geom::dist(x, &self.dom.xi0).powf(2.0 - nf);
        Ok((m, off2, hole))
    }

    /// Value with regime warnings attached.
    pub fn project_checked(&self, b: &Bubble, x: &[f64]) -> Result<Projected> {
        Ok(Projected { value: self.project(b, x)?, warnings: regime_warnings(&self.dom, b) })
    }
}

impl ProjectionOracle for AsymptoticProjection {
    fn domain(&self) -> &PerforatedBall {
        &self.dom
    }

    fn project(&self, b: &Bubble, x: &[f64]) -> Result<f64> {
        let (m, off2, hole) = self.prep(b, x)?;
        let a = alpha(b.n);
        let dm = b.delta.powf(m);
        let h = self.dom.outer.regular_part(x, &b.xi);
        let correction = a * dm * h + a * dm * (b.delta * b.delta + off2).powf(-m) * hole;
        Ok(b.value(x) - b.sign.factor() * correction)
    }

    fn project_gradient(&self, b: &Bubble, x: &[f64]) -> Result<Vec<f64>> {
        let (m, off2, _) = self.prep(b, x)?;
        let nf = b.n as f64;
        let a = alpha(b.n);
        let dm = b.delta.powf(m);
        let s = b.sign.factor();
        let gh = self.dom.outer.regular_part_grad_x(x, &b.xi);
        let rel = geom::sub(x, &self.dom.xi0);
        let r = geom::norm(&rel);
        let hole_coef =
            a * dm * (b.delta * b.delta + off2).powf(-m) * self.dom.epsilon.powf(nf - 2.0) * (2.0 - nf) * r.powf(-nf);
        let gu = b.gradient(x);
        Ok(gu.iter().zip(&gh).zip(&rel).map(|((g, h), d)| g - s * (a * dm * h + hole_coef * d)).collect())
    }

    fn project_psi0(&self, b: &Bubble, x: &[f64]) -> Result<f64> {
        let (m, off2, hole) = self.prep(b, x)?;
        let nf = b.n as f64;
        let a = alpha(b.n);
        let d2 = b.delta * b.delta;
        let lead = a * m * b.delta.powf((nf - 4.0) / 2.0);
        let h = self.dom.outer.regular_part(x, &b.xi);
        let correction = lead * h + lead * (off2 - d2) / (d2 + off2).powf(nf / 2.0) * hole;
        Ok(b.psi0(x) - correction)
    }

    fn project_psij(&self, b: &Bubble, x: &[f64], j: usize) -> Result<f64> {
        let axis = check_axis(b.n, j)?;
        let (m, off2, hole) = self.prep(b, x)?;
        let nf = b.n as f64;
        let a = alpha(b.n);
        let dm = b.delta.powf(m);
        let dh = self.dom.outer.regular_part_grad_y(x, &b.xi)[axis];
        let off_j = b.xi[axis] - self.dom.xi0[axis];
        let correction = a * dm * dh - a * (nf - 2.0) * dm * off_j / (b.delta * b.delta + off2).powf(nf / 2.0) * hole;
        Ok(b.psij_unchecked(x, axis) - correction)
    }
}

/// Exact projection for bubbles centered at the common center of the ball and
/// the hole. The harmonic correction is `A + B r^{2-n}` for radial functions
/// and `(A r + B r^{1-n}) x_j / r` for the first-order kernels, with `A`, `B`
/// fixed by matching on `r = eps` and `r = R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactConcentricProjection {
    pub dom: PerforatedBall,
}

impl ExactConcentricProjection {
    pub fn new(dom: PerforatedBall) -> Result<Self> {
        if geom::dist(&dom.xi0, &dom.outer.center) > 0.0 {
            return Err(Error::InvalidConfig("exact projection needs the hole at the ball center".into()));
        }
        Ok(Self { dom })
    }

    fn radius(&self, b: &Bubble, x: &[f64]) -> Result<f64> {
        same_dim(self.dom.n(), b.n)?;
        if geom::dist(&b.xi, &self.dom.xi0) > 0.0 {
            return Err(Error::InvalidConfig("exact projection needs the bubble at the ball center".into()));
        }
        self.dom.check(x)?;
        Ok(geom::dist(x, &self.dom.xi0))
    }

    /// Coefficients `(A, B)` of `A f1(r) + B f2(r)` matching `g` at both radii.
    fn solve(&self, f1: impl Fn(f64) -> f64, f2: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> (f64, f64) {
        let (e, r) = (self.dom.epsilon, self.dom.outer.radius);
        let det = f1(e) * f2(r) - f1(r) * f2(e);
        let a = (g(e) * f2(r) - g(r) * f2(e)) / det;
        let bb = (f1(e) * g(r) - f1(r) * g(e)) / det;
        (a, bb)
    }

    fn radial_correction(&self, n: usize, profile: impl Fn(f64) -> f64) -> (f64, f64) {
        let p = 2.0 - n as f64;
        self.solve(|_| 1.0, |r| r.powf(p), profile)
    }
}

impl ProjectionOracle for ExactConcentricProjection {
    fn domain(&self) -> &PerforatedBall {
        &self.dom
    }

    fn project(&self, b: &Bubble, x: &[f64]) -> Result<f64> {
        let r = self.radius(b, x)?;
        let (a, bb) = self.radial_correction(b.n, |s| radial_bubble(b, s));
        let w = a + bb * r.powf(2.0 - b.n as f64);
        Ok(b.value(x) - b.sign.factor() * w)
    }

    fn project_gradient(&self, b: &Bubble, x: &[f64]) -> Result<Vec<f64>> {
        let r = self.radius(b, x)?;
        let nf = b.n as f64;
        let (_, bb) = self.radial_correction(b.n, |s| radial_bubble(b, s));
        let c = b.sign.factor() * bb * (2.0 - nf) * r.powf(-nf);
        let gu = b.gradient(x);
        Ok(gu.iter().zip(x.iter().zip(&self.dom.xi0)).map(|(g, (xi, ci))| g - c * (xi - ci)).collect())
    }

    fn project_psi0(&self, b: &Bubble, x: &[f64]) -> Result<f64> {
        let r = self.radius(b, x)?;
        let (a, bb) = self.radial_correction(b.n, |s| radial_psi0(b, s));
        Ok(b.psi0(x) - a - bb * r.powf(2.0 - b.n as f64))
    }

    fn project_psij(&self, b: &Bubble, x: &[f64], j: usize) -> Result<f64> {
        let axis = check_axis(b.n, j)?;
        let r = self.radius(b, x)?;
        let nf = b.n as f64;
        // psi^j = f(r) x_j / r with f(r) = alpha (n-2) delta^m r / (delta^2 + r^2)^{n/2}
        let f = |s: f64| {
            alpha(b.n) * (nf - 2.0) * b.delta.powf((nf - 2.0) / 2.0) * s / (b.delta * b.delta + s * s).powf(nf / 2.0)
        };
        let (a, bb) = self.solve(|s| s, |s| s.powf(1.0 - nf), f);
        let dir = (x[axis] - self.dom.xi0[axis]) / r;
        Ok(b.psij_unchecked(x, axis) - (a * r + bb * r.powf(1.0 - nf)) * dir)
    }
}

fn radial_bubble(b: &Bubble, r: f64) -> f64 {
    let m = (b.n as f64 - 2.0) / 2.0;
    alpha(b.n) * (b.delta / (b.delta * b.delta + r * r)).powf(m)
}

fn radial_psi0(b: &Bubble, r: f64) -> f64 {
    let nf = b.n as f64;
    let d2 = b.delta * b.delta;
    alpha(b.n) * ((nf - 2.0) / 2.0) * b.delta.powf((nf - 4.0) / 2.0) * (r * r - d2) / (d2 + r * r).powf(nf / 2.0)
}

/// Asymptotic projection of a bubble with regime warnings.
pub fn project_bubble(dom: &PerforatedBall, b: &Bubble, x: &[f64]) -> Result<Projected> {
    AsymptoticProjection::new(dom.clone()).project_checked(b, x)
}

pub fn project_psi0(dom: &PerforatedBall, b: &Bubble, x: &[f64]) -> Result<Projected> {
    Ok(Projected {
        value: AsymptoticProjection::new(dom.clone()).project_psi0(b, x)?,
        warnings: regime_warnings(dom, b),
    })
}

pub fn project_psij(dom: &PerforatedBall, b: &Bubble, x: &[f64], j: usize) -> Result<Projected> {
    Ok(Projected {
        value: AsymptoticProjection::new(dom.clone()).project_psij(b, x, j)?,
        warnings: regime_warnings(dom, b),
    })
}

/// Normalized projection defects over a point grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub points: usize,
    /// `max |U - PU| / (delta^m + eps^{n-2} delta^{-m} |x - xi0|^{2-n})`
    pub u_ratio: f64,
    /// `max |psi0 - P psi0| / (delta^{(n-4)/2} + eps^{n-2} delta^{-n/2} |x - xi0|^{2-n})`
    pub psi0_ratio: f64,
    /// `max_j max |psij - P psij| / (delta^m + eps^{n-2} delta^{-n/2} |x - xi0|^{2-n})`
    pub psij_ratio: f64,
    /// `psij` defect against `delta^m (1 + eps^{n-1} delta^{-n} |x - xi0|^{2-n})`.
    pub psij_ratio_mixed: f64,
    /// `psij` defect against `delta^m (1 + (eps/delta)^{n-1} |x - xi0|^{2-n})`.
    pub psij_ratio_scaled: f64,
    pub warnings: Vec<RegimeWarning>,
}

pub fn projection_defect(oracle: &dyn ProjectionOracle, b: &Bubble, grid: &[Vec<f64>]) -> Result<DefectReport> {
    use rayon::prelude::*;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let dom = oracle.domain();
    let nf = b.n as f64;
    let m = (nf - 2.0) / 2.0;
    let (d, e) = (b.delta, dom.epsilon);
    let rows: Vec<[f64; 5]> = grid
        .par_iter()
        .map(|x| -> Result<[f64; 5]> {
            let hole = e.powf(nf - 2.0) * geom::dist(x, &dom.xi0).powf(2.0 - nf);
            let du = (b.value(x) - oracle.project(b, x)?).abs();
            let dp0 = (b.psi0(x) - oracle.project_psi0(b, x)?).abs();
            let mut dpj: f64 = 0.0;
            for j in 1..=b.n {
                dpj = dpj.max((b.psij(x, j)? - oracle.project_psij(b, x, j)?).abs());
            }
            let r_dist = geom::dist(x, &dom.xi0).powf(2.0 - nf);
            Ok([
                du / (d.powf(m) + hole * d.powf(-m)),
                dp0 / (d.powf((nf - 4.0) / 2.0) + hole * d.powf(-nf / 2.0)),
                dpj / (d.powf(m) + hole * d.powf(-nf / 2.0)),
                dpj / (d.powf(m) * (1.0 + e.powf(nf - 1.0) * d.powf(-nf) * r_dist)),
                dpj / (d.powf(m) * (1.0 + (e / d).powf(nf - 1.0) * r_dist)),
            ])
        })
        .collect::<Result<_>>()?;
    let col = |i: usize| rows.iter().map(|r| r[i]).fold(0.0, f64::max);
    Ok(DefectReport {
        points: grid.len(),
        u_ratio: col(0),
        psi0_ratio: col(1),
        psij_ratio: col(2),
        psij_ratio_mixed: col(3),
        psij_ratio_scaled: col(4),
        warnings: regime_warnings(dom, b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubbles::Sign;

    #[test]
    fn centered_pole_example() {
        let ball = Ball::unit(4).unwrap();
        let (g, h) = ball.green(&[0.5, 0.0, 0.0, 0.0], &[0.0; 4]).unwrap();
        assert!((h - 1.0).abs() < 1e-15);
        let want = 3.0 / (4.0 * std::f64::consts::PI.powi(2));
        assert!((g - want).abs() < 1e-14);
    }

    #[test]
    fn green_errors() {
        let ball = Ball::unit(3).unwrap();
        let y = [0.1, 0.2, 0.0];
        assert_eq!(ball.green(&y, &y), Err(Error::CoincidentPoints));
        assert!(matches!(ball.green(&[2.0, 0.0, 0.0], &y), Err(Error::OutsideDomain(_))));
        assert!(matches!(ball.green(&y, &[1.0, 0.0, 0.0]), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn perforated_ball_rejects_oversized_hole() {
        let ball = Ball::unit(4).unwrap();
        assert!(PerforatedBall::new(ball.clone(), vec![0.5, 0.0, 0.0, 0.0], 0.5).is_err());
        let dom = PerforatedBall::new(ball, vec![0.5, 0.0, 0.0, 0.0], 0.1).unwrap();
        assert!((dom.default_rho() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn product_weight_derivatives() {
        let w = ProductWeight::new(4, vec![2, 1]).unwrap();
        let x = [1.5, 2.0, 0.3, -0.2];
        assert!((w.value(&x) - 4.5).abs() < 1e-14);
        let g = w.gradient(&x);
        assert!((g[0] - 6.0).abs() < 1e-14 && (g[1] - 2.25).abs() < 1e-14 && g[2] == 0.0);
        let h = w.hessian(&x);
        assert!((h[0][0] - 4.0).abs() < 1e-14 && (h[0][1] - 3.0).abs() < 1e-14 && h[1][1] == 0.0);
    }

    #[test]
    fn exact_projection_vanishes_on_both_boundaries() {
        let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], 0.005).unwrap();
        let oracle = ExactConcentricProjection::new(dom).unwrap();
        let b = Bubble::new(4, 0.1, vec![0.0; 4], Sign::Plus).unwrap();
        for x in [[0.005, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]] {
            assert!(oracle.project(&b, &x).unwrap().abs() < 1e-12);
            assert!(oracle.project_psi0(&b, &x).unwrap().abs() < 1e-12);
            assert!(oracle.project_psij(&b, &x, 3).unwrap().abs() < 1e-12);
        }
        let off = Bubble::new(4, 0.1, vec![0.01, 0.0, 0.0, 0.0], Sign::Plus).unwrap();
        assert!(oracle.project(&off, &[0.5, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn regime_warnings_are_reported_not_fatal() {
        let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], 0.05).unwrap();
        let b = Bubble::new(4, 0.1, vec![0.0; 4], Sign::Plus).unwrap();
        let p = project_bubble(&dom, &b, &[0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(p.warnings[..], [RegimeWarning::HoleNotSmall { .. }]));
        assert!(project_bubble(&dom, &b, &[0.01, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], 1e-3).unwrap();
        let b = Bubble::new(4, 0.1, vec![0.0; 4], Sign::Plus).unwrap();
        let oracle = AsymptoticProjection::new(dom);
        assert_eq!(projection_defect(&oracle, &b, &[]), Err(Error::EmptyGrid));
    }
}
