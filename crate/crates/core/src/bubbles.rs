//! Aubin-Talenti bubbles, their kernel derivatives, the tower rate
//! parameterization, the annulus decomposition around the hole and the lift to
//! torus-type domains.

use serde::{Deserialize, Serialize};

use crate::error::{positive, same_dim, Error, Result};
use crate::geom;
use crate::green::ProjectionOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// `alpha_n (n(n-2))^{(n-2)/4}` without building the full constant table.
pub fn alpha(n: usize) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0)
}

/// `sign * alpha_n (delta / (delta^2 + |x - xi|^2))^{(n-2)/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub n: usize,
    pub delta: f64,
    pub xi: Vec<f64>,
    pub sign: Sign,
}

impl Bubble {
    pub fn new(n: usize, delta: f64, xi: Vec<f64>, sign: Sign) -> Result<Self> {
        if n < 3 {
            return Err(Error::Dimension(n));
        }
        positive("delta", delta)?;
        same_dim(n, xi.len())?;
        Ok(Self { n, delta, xi, sign })
    }

    fn m(&self) -> f64 {
        (self.n as f64 - 2.0) / 2.0
    }

    fn denom(&self, x: &[f64]) -> f64 {
        self.delta * self.delta + geom::dist_sq(x, &self.xi)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let m = self.m();
        self.sign.factor() * alpha(self.n) * (self.delta / self.denom(x)).powf(m)
    }

    /// `d U / d delta` of the positive profile.
    pub fn psi0(&self, x: &[f64]) -> f64 {
        let nf = self.n as f64;
        let r2 = geom::dist_sq(x, &self.xi);
        let d2 = self.delta * self.delta;
        alpha(self.n) * self.m() * self.delta.powf((nf - 4.0) / 2.0) * (r2 - d2) / (d2 + r2).powf(nf / 2.0)
    }

    /// `d U / d xi_j` of the positive profile, `j` in `1..=n`.
    pub fn psij(&self, x: &[f64], j: usize) -> Result<f64> {
        if j == 0 || j > self.n {
            return Err(Error::IndexOutOfRange { index: j, max: self.n });
        }
        Ok(self.psij_unchecked(x, j - 1))
    }

    pub(crate) fn psij_unchecked(&self, x: &[f64], axis: usize) -> f64 {
        let nf = self.n as f64;
        alpha(self.n) * (nf - 2.0) * self.delta.powf(self.m()) * (x[axis] - self.xi[axis])
            / self.denom(x).powf(nf / 2.0)
    }

    /// Spatial gradient of the signed bubble.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let nf = self.n as f64;
        let c =
            -self.sign.factor() * alpha(self.n) * (nf - 2.0) * self.delta.powf(self.m()) / self.denom(x).powf(nf / 2.0);
        x.iter().zip(&self.xi).map(|(a, b)| c * (a - b)).collect()
    }

    /// Peak value `alpha_n delta^{-(n-2)/2}` (unsigned).
    pub fn peak(&self) -> f64 {
        alpha(self.n) * self.delta.powf(-self.m())
    }
}

/// Global sign of the tower: the sign carried by the first (largest) bubble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `sum (-1)^{i+1} P U_i`
    #[default]
    FirstPositive,
    /// `sum (-1)^i P U_i`
    FirstNegative,
}

impl SignConvention {
    pub fn first(self) -> Sign {
        match self {
            SignConvention::FirstPositive => Sign::Plus,
            SignConvention::FirstNegative => Sign::Minus,
        }
    }
}

/// Reduction coordinates of a bubble tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub n: usize,
    pub k: usize,
    pub epsilon: f64,
    pub d: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub xi0: Vec<f64>,
    #[serde(default)]
    pub sign_convention: SignConvention,
}

/// `theta_i = ((n-2) + 2(i-1)) / ((n-1) + 2(k-1))` for `i = 1..=k`.
pub fn rate_exponents(n: usize, k: usize) -> Vec<f64> {
    let denom = (n as f64 - 1.0) + 2.0 * (k as f64 - 1.0);
    (1..=k).map(|i| ((n as f64 - 2.0) + 2.0 * (i as f64 - 1.0)) / denom).collect()
}

impl TowerConfig {
    pub fn new(
        n: usize,
        epsilon: f64,
        d: Vec<f64>,
        sigma: Vec<Vec<f64>>,
        xi0: Vec<f64>,
        sign_convention: SignConvention,
    ) -> Result<Self> {
        let cfg = Self { n, k: d.len(), epsilon, d, sigma, xi0, sign_convention };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Tower with all `sigma_i = 0` (concentric bubbles).
    pub fn concentric(n: usize, epsilon: f64, d: Vec<f64>, xi0: Vec<f64>) -> Result<Self> {
        let sigma = vec![vec![0.0; n]; d.len()];
        Self::new(n, epsilon, d, sigma, xi0, SignConvention::default())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Dimension(self.n));
        }
        if self.k == 0 || self.d.len() != self.k {
            return Err(Error::InvalidConfig(format!(
                "need k >= 1 scale parameters, got k = {} and {} values",
                self.k,
                self.d.len()
            )));
        }
        positive("epsilon", self.epsilon)?;
        for &di in &self.d {
            positive("d_i", di)?;
        }
        same_dim(self.k, self.sigma.len())?;
        for s in &self.sigma {
            same_dim(self.n, s.len())?;
        }
        same_dim(self.n, self.xi0.len())?;
        let deltas = self.deltas();
        for (i, w) in deltas.windows(2).enumerate() {
            if w[1] >= w[0] {
                return Err(Error::UnorderedRadii(format!(
                    "delta_{} = {:e} is not above delta_{} = {:e}",
                    i + 1,
                    w[0],
                    i + 2,
                    w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn thetas(&self) -> Vec<f64> {
        rate_exponents(self.n, self.k)
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.thetas().iter().zip(&self.d).map(|(t, d)| self.epsilon.powf(*t) * d).collect()
    }

    /// Sign of bubble `i` (0-based).
    pub fn sign(&self, i: usize) -> Sign {
        let first = self.sign_convention.first();
        if i % 2 == 0 {
            first
        } else {
            first.flip()
        }
    }

    /// Bubbles with `delta_i = eps^{theta_i} d_i`, `xi_i = xi0 + delta_i sigma_i`.
    pub fn rates(&self) -> Vec<Bubble> {
        self.deltas()
            .into_iter()
            .enumerate()
            .map(|(i, delta)| Bubble {
                n: self.n,
                delta,
                xi: geom::axpy(&self.xi0, delta, &self.sigma[i]),
                sign: self.sign(i),
            })
            .collect()
    }

    pub fn annuli(&self, rho: f64) -> Result<AnnulusDecomposition> {
        AnnulusDecomposition::new(self, rho)
    }
}

/// Rate parameterization of `cfg`; see [`TowerConfig::rates`].
pub fn rates(cfg: &TowerConfig) -> Result<Vec<Bubble>> {
    cfg.validate()?;
    Ok(cfg.rates())
}

/// Concentric annuli `A_l = {sqrt(delta_l delta_{l+1}) <= |x - xi0| <= sqrt(delta_{l-1} delta_l)}`
/// with `delta_0 = rho^2/delta_1` and `delta_{k+1} = eps^2/delta_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusDecomposition {
    pub center: Vec<f64>,
    pub rho: f64,
    /// `k + 1` boundary radii from `rho` down to `epsilon`.
    pub radii: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl AnnulusDecomposition {
    pub fn new(cfg: &TowerConfig, rho: f64) -> Result<Self> {
        cfg.validate()?;
        positive("rho", rho)?;
        let deltas = cfg.deltas();
        let k = deltas.len();
        let mut radii = Vec::with_capacity(k + 1);
        radii.push(rho);
        for l in 0..k - 1 {
            radii.push((deltas[l] * deltas[l + 1]).sqrt());
        }
        radii.push(cfg.epsilon);
        for (l, w) in radii.windows(2).enumerate() {
            if w[1] >= w[0] {
                return Err(Error::UnorderedRadii(format!(
                    "annulus {} has inner radius {:e} >= outer radius {:e}",
                    l + 1,
                    w[1],
                    w[0]
                )));
            }
        }
        Ok(Self { center: cfg.xi0.clone(), rho, radii, deltas })
    }

    pub fn len(&self) -> usize {
        self.radii.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(inner, outer)` radii of annulus `l` in `1..=k`.
    pub fn annulus(&self, l: usize) -> Result<(f64, f64)> {
        if l == 0 || l > self.len() {
            return Err(Error::IndexOutOfRange { index: l, max: self.len() });
        }
        Ok((self.radii[l], self.radii[l - 1]))
    }

    /// Index of the annulus containing `x`, or `None` outside `B(xi0, rho)` or inside the hole.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let r = geom::dist(x, &self.center);
        (1..=self.len()).find(|&l| r >= self.radii[l] && r <= self.radii[l - 1])
    }
}

/// `V(x) = sum_i s_i P U_i(x)` with the projection supplied by `oracle`.
pub fn tower_value(cfg: &TowerConfig, oracle: &dyn ProjectionOracle, x: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for b in cfg.rates() {
        total += oracle.project(&b, x)?;
    }
    Ok(total)
}

/// Evaluates `u(|y^1|, ..., |y^m|, z)` for `y = (y^1, ..., y^m, z)` with
/// `y^i` in `R^{l_i + 1}`.
pub fn torus_lift<F: Fn(&[f64]) -> f64>(u: F, y: &[f64], shape: &[usize]) -> Result<f64> {
    let x = torus_project(y, shape)?;
    Ok(u(&x))
}

/// The point `(|y^1|, ..., |y^m|, z)` of `R^n`, `n = N - sum l_i`.
pub fn torus_project(y: &[f64], shape: &[usize]) -> Result<Vec<f64>> {
    let lifted: usize = shape.iter().map(|l| l + 1).sum();
    if shape.contains(&0) || y.len() < lifted {
        return Err(Error::DimensionMismatch { expected: lifted, got: y.len() });
    }
    let mut x = Vec::with_capacity(y.len() - lifted + shape.len());
    let mut offset = 0;
    for &l in shape {
        let r = geom::norm(&y[offset..offset + l + 1]);
        if r <= 0.0 {
            return Err(Error::OutsideDomain("radial coordinate of the lift is zero".into()));
        }
        x.push(r);
        offset += l + 1;
    }
    x.extend_from_slice(&y[offset..]);
    Ok(x)
}
