//! Quadrature evaluation of the energy
//! `I(u) = (1/2) int a |grad u|^2 - (1/(p+1)) int a |u|^{p+1}` on tower ansatze,
//! the fit of its small-hole expansion, and numerical checks of the leading
//! terms of the individual interaction integrals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubbles::{rate_exponents, AnnulusDecomposition, Bubble, Sign, SignConvention, TowerConfig};
use crate::error::{same_dim, Error, Result};
use crate::geom;
use crate::green::{
    regime_warnings, AsymptoticProjection, Ball, ExactConcentricProjection, PerforatedBall, ProductWeight,
    ProjectionOracle, QuadraticWeight, RegimeWarning, WeightField,
};
use crate::quadrature::{integrate_annulus_scaled, integrate_perforated, Estimate, QuadratureSpec};
use crate::reduced::{psi, ReducedConfig};
use crate::special::DimConstants;

/// Coefficient fields shipped with the laboratory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightSpec {
    /// `a(x) = a0`
    Constant { a0: f64 },
    /// `a(x) = a0 + <g, x>`
    Affine {
        #[serde(default = "one")]
        a0: f64,
        g: Vec<f64>,
    },
    /// `a(x) = x_1^{l_1} ... x_m^{l_m}`
    Product { exponents: Vec<u32> },
}

fn one() -> f64 {
    1.0
}

impl WeightSpec {
    pub fn build(&self, n: usize) -> Result<Box<dyn WeightField>> {
        match self {
            WeightSpec::Constant { a0 } => Ok(Box::new(QuadraticWeight::constant(n, *a0))),
            WeightSpec::Affine { a0, g } => {
                same_dim(n, g.len())?;
                Ok(Box::new(QuadraticWeight::affine(vec![0.0; n], *a0, g.clone())))
            }
            WeightSpec::Product { exponents } => Ok(Box::new(ProductWeight::new(n, exponents.clone())?)),
        }
    }

    /// Direction the weight varies along, `Some(0)` if constant, `None` if it
    /// has no rotational symmetry.
    fn symmetry_direction(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            WeightSpec::Constant { .. } => Some(vec![0.0; n]),
            WeightSpec::Affine { g, .. } => Some(g.clone()),
            WeightSpec::Product { exponents } => exponents.iter().all(|e| *e == 0).then(|| vec![0.0; n]),
        }
    }
}

/// Common axis of a set of vectors, if they are all parallel. Zero vectors are
/// ignored; all-zero input yields `e_1`.
pub fn common_axis(vectors: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut axis: Option<Vec<f64>> = None;
    for v in vectors {
        let len = geom::norm(v);
        if len == 0.0 {
            continue;
        }
        let u = geom::scale(v, 1.0 / len);
        match &axis {
            None => axis = Some(u),
            Some(a) => {
                if 1.0 - geom::dot(a, &u).abs() > 1e-12 {
                    return None;
                }
            }
        }
    }
    axis.or_else(|| vectors.first().map(|v| geom::unit(v.len(), 0)))
}

/// Turns on the axisymmetric quadrature mode when the tower, the hole offset and
/// the weight share one axis. An explicit axis in `spec` is left untouched.
pub fn with_detected_symmetry(
    spec: &QuadratureSpec,
    cfg: &TowerConfig,
    dom: &PerforatedBall,
    weight: &WeightSpec,
) -> QuadratureSpec {
    if spec.axis.is_some() {
        return spec.clone();
    }
    let Some(w) = weight.symmetry_direction(cfg.n) else {
        return spec.clone();
    };
    let mut vectors = cfg.sigma.clone();
    vectors.push(geom::sub(&dom.xi0, &dom.outer.center));
    vectors.push(w);
    match common_axis(&vectors) {
        Some(axis) => spec.clone().with_axis(axis, true),
        None => spec.clone(),
    }
}

/// Energy value with its quadrature error and per-region breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
    pub evaluations: usize,
    /// Annuli `A_1..A_k` followed by the far region.
    pub regions: Vec<Estimate>,
    pub warnings: Vec<RegimeWarning>,
}

/// `(1/2) int a |grad u|^2 - (1/(p+1)) int a |u|^{p+1}` over the perforated ball.
///
/// `u` returns the value and gradient at a point.
pub fn energy_functional<F>(
    u: F,
    dom: &PerforatedBall,
    annuli: &AnnulusDecomposition,
    weight: &dyn WeightField,
    spec: &QuadratureSpec,
) -> Result<EnergyEstimate>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    let c = DimConstants::new(dom.n())?;
    let q = c.critical_exponent();
    let failure = std::sync::OnceLock::new();
    // After the first failure the integrand is zero so the quadrature winds down.
    let integrand = |x: &[f64]| {
        if failure.get().is_some() {
            return 0.0;
        }
        match u(x) {
            Ok((v, g)) => weight.value(x) * (0.5 * geom::norm_sq(&g) - v.abs().powf(q) / q),
            Err(e) => {
                let _ = failure.set(e);
                0.0
            }
        }
    };
    let r = integrate_perforated(integrand, dom, annuli, spec)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    if !r.total.value.is_finite() {
        return Err(Error::OutsideDomain("energy integrand is not finite".into()));
    }
    let mut regions = r.annuli.clone();
    regions.push(r.far);
    Ok(EnergyEstimate {
        value: r.total.value,
        error: r.total.error,
        converged: r.total.converged,
        evaluations: r.total.evaluations,
        regions,
        warnings: Vec::new(),
    })
}

fn check_tower(cfg: &TowerConfig, dom: &PerforatedBall) -> Result<()> {
    cfg.validate()?;
    same_dim(dom.n(), cfg.n)?;
    if geom::dist(&cfg.xi0, &dom.xi0) > 0.0 || (cfg.epsilon - dom.epsilon).abs() > 0.0 {
        return Err(Error::InvalidConfig("tower and domain disagree on xi0 or epsilon".into()));
    }
    for b in cfg.rates() {
        dom.outer.check_open(&b.xi)?;
    }
    Ok(())
}

/// `I(V)` for `V = sum_i s_i P U_i` with the asymptotic projection; the
/// gradient of `V` is assembled in closed form.
pub fn tower_energy(
    cfg: &TowerConfig,
    dom: &PerforatedBall,
    weight: &dyn WeightField,
    spec: &QuadratureSpec,
) -> Result<EnergyEstimate> {
    check_tower(cfg, dom)?;
    let oracle = AsymptoticProjection::new(dom.clone());
    tower_energy_with(cfg, &oracle, weight, spec)
}

/// As [`tower_energy`] with a caller-supplied projection.
pub fn tower_energy_with(
    cfg: &TowerConfig,
    oracle: &dyn ProjectionOracle,
    weight: &dyn WeightField,
    spec: &QuadratureSpec,
) -> Result<EnergyEstimate> {
    let dom = oracle.domain();
    check_tower(cfg, dom)?;
    let bubbles = cfg.rates();
    let annuli = cfg.annuli(dom.default_rho())?;
    let u = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut v = 0.0;
        let mut g = vec![0.0; x.len()];
        for b in &bubbles {
            v += oracle.project(b, x)?;
            let gb = oracle.project_gradient(b, x)?;
            g.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
        }
        Ok((v, g))
    };
    let mut e = energy_functional(u, dom, &annuli, weight, spec)?;
    for b in &bubbles {
        for w in regime_warnings(dom, b) {
            if !e.warnings.contains(&w) {
                e.warnings.push(w);
            }
        }
    }
    Ok(e)
}

/// Everything but `epsilon` of a tower on a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerTemplate {
    pub n: usize,
    pub d: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub xi0: Vec<f64>,
    pub outer: Ball,
    #[serde(default)]
    pub sign_convention: SignConvention,
}

impl TowerTemplate {
    pub fn k(&self) -> usize {
        self.d.len()
    }

    pub fn at(&self, epsilon: f64) -> Result<(TowerConfig, PerforatedBall)> {
        let dom = PerforatedBall::new(self.outer.clone(), self.xi0.clone(), epsilon)?;
        let cfg = TowerConfig::new(
            self.n,
            epsilon,
            self.d.clone(),
            self.sigma.clone(),
            self.xi0.clone(),
            self.sign_convention,
        )?;
        Ok((cfg, dom))
    }

    /// `Psi(d, sigma)` with `a(xi0)` and `grad a(xi0)` read off the weight.
    pub fn psi(&self, weight: &dyn WeightField) -> Result<f64> {
        let rc = ReducedConfig::new(self.n, self.k(), weight.value(&self.xi0), weight.gradient(&self.xi0))?;
        psi(&rc, &self.d, &self.sigma)
    }
}

/// One grid point of an expansion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPoint {
    pub epsilon: f64,
    pub energy: f64,
    pub error: f64,
    pub converged: bool,
    /// `J - c1 k a(xi0)`
    pub excess: f64,
    /// `excess / eps^theta`
    pub coefficient: f64,
    /// Excess positive and above three quadrature error bars.
    pub valid: bool,
    pub warnings: Vec<RegimeWarning>,
    /// Why the energy could not be evaluated at this `eps`.
    pub failure: Option<String>,
}

/// Outcome of [`expansion_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub n: usize,
    pub k: usize,
    pub theta: f64,
    pub eps_grid: Vec<f64>,
    pub points: Vec<ExpansionPoint>,
    /// `c1 k a(xi0)`
    pub predicted_constant: f64,
    /// `Psi(d, sigma)`
    pub psi: f64,
    /// Least-squares slope of `log(excess)` against `log(eps)` over valid points.
    pub fitted_theta: Option<f64>,
    /// `exp` of the fitted intercept.
    pub fitted_coefficient: Option<f64>,
    /// `excess / eps^theta` at the finest valid `eps`.
    pub finest_coefficient: Option<f64>,
    /// `finest_coefficient / psi - 1`
    pub coefficient_gap: Option<f64>,
    pub excluded: Vec<f64>,
}

/// Least-squares line through `(x_i, y_i)`; returns `(slope, intercept)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let nf = x.len() as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope and prefactor of `|v| ~ C eps^s` over the points with `|v| > 0`.
pub fn power_law_fit(eps: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let (x, y): (Vec<f64>, Vec<f64>) = eps
        .iter()
        .zip(values)
        .filter(|(e, v)| **e > 0.0 && v.abs() > 0.0 && v.is_finite())
        .map(|(e, v)| (e.ln(), v.abs().ln()))
        .unzip();
    linear_fit(&x, &y).map(|(s, b)| (s, b.exp()))
}

/// Sorts a grid into strictly decreasing order; rejects repeats and
/// nonpositive entries.
pub fn decreasing_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut g = grid.to_vec();
    for &e in &g {
        crate::error::positive("epsilon", e)?;
    }
    g.sort_by(|a, b| b.total_cmp(a));
    if g.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig("repeated epsilon in grid".into()));
    }
    Ok(g)
}

/// Energies along an `eps` grid and the fit of `J - c1 k a(xi0) ~ Psi eps^theta`.
pub fn expansion_fit(
    template: &TowerTemplate,
    weight: &WeightSpec,
    eps_grid: &[f64],
    spec: &QuadratureSpec,
) -> Result<ExpansionReport> {
    let grid = decreasing_grid(eps_grid)?;
    if grid.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 grid points, got {}", grid.len())));
    }
    let n = template.n;
    let k = template.k();
    let w = weight.build(n)?;
    let c = DimConstants::new(n)?;
    let a0 = w.value(&template.xi0);
    let predicted_constant = c.c1 * k as f64 * a0;
    let psi_value = template.psi(w.as_ref())?;
    let theta = rate_exponents(n, k)[0];

    let points = grid
        .par_iter()
        .map(|&eps| {
            let run = template.at(eps).and_then(|(cfg, dom)| {
                let local = with_detected_symmetry(spec, &cfg, &dom, weight);
                tower_energy(&cfg, &dom, w.as_ref(), &local)
            });
            match run {
                Ok(e) => {
                    let excess = e.value - predicted_constant;
                    ExpansionPoint {
                        epsilon: eps,
                        energy: e.value,
                        error: e.error,
                        converged: e.converged,
                        excess,
                        coefficient: excess / eps.powf(theta),
                        valid: excess > 3.0 * e.error && excess > 0.0,
                        warnings: e.warnings,
                        failure: None,
                    }
                }
                Err(err) => ExpansionPoint {
                    epsilon: eps,
                    energy: f64::NAN,
                    error: f64::NAN,
                    converged: false,
                    excess: f64::NAN,
                    coefficient: f64::NAN,
                    valid: false,
                    warnings: Vec::new(),
                    failure: Some(err.to_string()),
                },
            }
        })
        .collect::<Vec<_>>();

    let valid: Vec<&ExpansionPoint> = points.iter().filter(|p| p.valid).collect();
    let excluded = points.iter().filter(|p| !p.valid).map(|p| p.epsilon).collect();
    let fit = power_law_fit(
        &valid.iter().map(|p| p.epsilon).collect::<Vec<_>>(),
        &valid.iter().map(|p| p.excess).collect::<Vec<_>>(),
    );
    let finest_coefficient = valid.last().map(|p| p.coefficient);
    Ok(ExpansionReport {
        n,
        k,
        theta,
        eps_grid: grid,
        points,
        predicted_constant,
        psi: psi_value,
        fitted_theta: fit.map(|f| f.0),
        fitted_coefficient: fit.map(|f| f.1),
        finest_coefficient,
        coefficient_gap: finest_coefficient.map(|cf| cf / psi_value - 1.0),
        excluded,
    })
}

/// Item of the interaction-integral lemma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaItem {
    I,
    Ii,
    Iii,
    Iv,
    V,
    Vi,
}

impl std::str::FromStr for LemmaItem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "i" | "1" => LemmaItem::I,
            "ii" | "2" => LemmaItem::Ii,
            "iii" | "3" => LemmaItem::Iii,
            "iv" | "4" => LemmaItem::Iv,
            "v" | "5" => LemmaItem::V,
            "vi" | "6" => LemmaItem::Vi,
            other => return Err(Error::InvalidConfig(format!("unknown lemma item '{other}'"))),
        })
    }
}

/// Which projection stands in for the exact one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// Exact concentric projection when every bubble sits at the centre of
    /// both balls, asymptotic main terms otherwise.
    #[default]
    Auto,
    Asymptotic,
    ExactConcentric,
}

fn make_oracle(kind: ProjectionKind, cfg: &TowerConfig, dom: &PerforatedBall) -> Result<Box<dyn ProjectionOracle>> {
    let concentric = geom::dist(&dom.xi0, &dom.outer.center) == 0.0 && cfg.sigma.iter().all(|s| geom::norm(s) == 0.0);
    match kind {
        ProjectionKind::Asymptotic => Ok(Box::new(AsymptoticProjection::new(dom.clone()))),
        ProjectionKind::ExactConcentric => Ok(Box::new(ExactConcentricProjection::new(dom.clone())?)),
        ProjectionKind::Auto if concentric => Ok(Box::new(ExactConcentricProjection::new(dom.clone())?)),
        ProjectionKind::Auto => Ok(Box::new(AsymptoticProjection::new(dom.clone()))),
    }
}

/// One measured integral against its predicted leading term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaQuantity {
    pub name: String,
    pub measured: f64,
    pub error: f64,
    pub converged: bool,
    /// Predicted leading term, when the lemma gives one.
    pub predicted: Option<f64>,
    pub ratio: Option<f64>,
    /// `measured / eps^rate` for the reference rate of the item.
    pub scaled: f64,
    pub rate: f64,
}

/// All quantities of one lemma item at one `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub item: String,
    pub epsilon: f64,
    pub l: usize,
    pub i: usize,
    pub quantities: Vec<LemmaQuantity>,
    /// For item (iii): which index form of the second interaction term is closer.
    pub matched_form: Option<String>,
}

fn quantity(name: &str, e: Estimate, predicted: Option<f64>, eps: f64, rate: f64) -> LemmaQuantity {
    LemmaQuantity {
        name: name.to_string(),
        measured: e.value,
        error: e.error,
        converged: e.converged,
        ratio: predicted.map(|p| e.value / p),
        predicted,
        scaled: e.value / eps.powf(rate),
        rate,
    }
}

struct LemmaContext {
    dom: PerforatedBall,
    annuli: AnnulusDecomposition,
    oracle: Box<dyn ProjectionOracle>,
    /// Positive bubbles, one per layer.
    bubbles: Vec<Bubble>,
    spec: QuadratureSpec,
    c: DimConstants,
    theta: f64,
}

impl LemmaContext {
    fn new(
        cfg: &TowerConfig,
        dom: &PerforatedBall,
        weight: &WeightSpec,
        kind: ProjectionKind,
        spec: &QuadratureSpec,
    ) -> Result<Self> {
        check_tower(cfg, dom)?;
        let bubbles = cfg
            .rates()
            .into_iter()
            .map(|mut b| {
                b.sign = Sign::Plus;
                b
            })
            .collect();
        Ok(Self {
            annuli: cfg.annuli(dom.default_rho())?,
            oracle: make_oracle(kind, cfg, dom)?,
            spec: with_detected_symmetry(spec, cfg, dom, weight),
            c: DimConstants::new(cfg.n)?,
            theta: cfg.thetas()[0],
            dom: dom.clone(),
            bubbles,
        })
    }

    fn over_annulus<F: Fn(&[f64]) -> f64 + Sync>(&self, l: usize, f: F) -> Result<Estimate> {
        let (inner, outer) = self.annuli.annulus(l)?;
        integrate_annulus_scaled(f, &self.dom.xi0, inner, outer, &self.annuli.deltas, &self.spec)
    }

    fn over_domain<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> Result<Estimate> {
        Ok(integrate_perforated(f, &self.dom, &self.annuli, &self.spec)?.total)
    }

    fn outside_annulus<F: Fn(&[f64]) -> f64 + Sync>(&self, l: usize, f: F) -> Result<Estimate> {
        let r = integrate_perforated(f, &self.dom, &self.annuli, &self.spec)?;
        let mut parts: Vec<Estimate> =
            r.annuli.iter().enumerate().filter(|(j, _)| j + 1 != l).map(|(_, e)| *e).collect();
        parts.push(r.far);
        Ok(Estimate::sum(&parts))
    }

    fn u(&self, l: usize, x: &[f64]) -> f64 {
        self.bubbles[l - 1].value(x)
    }

    fn pu_minus_u(&self, l: usize, x: &[f64]) -> f64 {
        let b = &self.bubbles[l - 1];
        self.oracle.project(b, x).map_or(f64::NAN, |v| v - b.value(x))
    }
}

fn check_layers(cfg: &TowerConfig, l: usize, i: usize, need_i: bool) -> Result<()> {
    if l == 0 || l > cfg.k {
        return Err(Error::IndexOutOfRange { index: l, max: cfg.k });
    }
    if need_i {
        if i == 0 || i > cfg.k {
            return Err(Error::IndexOutOfRange { index: i, max: cfg.k });
        }
        if i == l {
            return Err(Error::InvalidConfig("the interaction items need i != l".into()));
        }
    }
    Ok(())
}

/// Tower, domain and numerical settings shared by the lemma checks.
#[derive(Debug, Clone, Copy)]
pub struct LemmaSetup<'a> {
    pub cfg: &'a TowerConfig,
    pub dom: &'a PerforatedBall,
    pub weight: &'a WeightSpec,
    pub kind: ProjectionKind,
    pub spec: &'a QuadratureSpec,
}

/// Measures the integrals of lemma item `item` for layers `l` and `i`
/// (1-based; `i` is ignored by items (i) and (ii)).
pub fn interaction_check(item: LemmaItem, setup: &LemmaSetup, l: usize, i: usize) -> Result<LemmaCheck> {
    let LemmaSetup { cfg, dom, weight, kind, spec } = *setup;
    let needs_i = matches!(item, LemmaItem::Iii | LemmaItem::Iv | LemmaItem::V | LemmaItem::Vi);
    check_layers(cfg, l, i, needs_i)?;
    let ctx = LemmaContext::new(cfg, dom, weight, kind, spec)?;
    let w = weight.build(cfg.n)?;
    let a0 = w.value(&cfg.xi0);
    let ga = w.gradient(&cfg.xi0);
    let (n, k) = (cfg.n as f64, cfg.k);
    let m = (n - 2.0) / 2.0;
    let q = ctx.c.critical_exponent();
    let p = ctx.c.p();
    let eps = cfg.epsilon;
    let theta = ctx.theta;
    let scale = ctx.c.energy_scale();
    let bn = ctx.c.ball_volume;
    let d = &cfg.d;
    let sig2 = |j: usize| 1.0 + geom::norm_sq(&cfg.sigma[j - 1]);
    let mut out = LemmaCheck {
        item: format!("{item:?}").to_lowercase(),
        epsilon: eps,
        l,
        i,
        quantities: Vec::new(),
        matched_form: None,
    };
    match item {
        LemmaItem::I => {
            let e = ctx.over_annulus(l, |x| w.value(x) * ctx.u(l, x).powf(q))?;
            let drift = if l == 1 { geom::dot(&ga, &cfg.sigma[0]) * d[0] * eps.powf(theta) } else { 0.0 };
            let pred = scale * (a0 + drift) * ctx.c.bubble_mass;
            out.quantities.push(quantity("a_u_pow_q_on_annulus", e, Some(pred), eps, 0.0));
        }
        LemmaItem::Ii => {
            let e = ctx.over_annulus(l, |x| ctx.u(l, x).powf(p) * ctx.pu_minus_u(l, x))?;
            let lead = if l == k { -scale * bn * sig2(k).powf(2.0 - n) * eps.powf(theta) } else { 0.0 };
            let with_d = lead * d[k - 1].powf(2.0 - n);
            let (pred, literal) = if l == k { (Some(with_d), Some(lead)) } else { (None, None) };
            out.quantities.push(quantity("u_pow_p_times_projection_defect", e, pred, eps, theta));
            out.quantities.push(LemmaQuantity {
                name: "same_against_form_without_d_k".into(),
                ratio: literal.map(|v| e.value / v),
                predicted: literal,
                ..quantity("", e, None, eps, theta)
            });
        }
        LemmaItem::Iii => {
            let e = ctx.over_annulus(l, |x| ctx.u(l, x).powf(p) * ctx.u(i, x))?;
            // Candidate forms of the leading term; they differ only for i = l - 1.
            let upper = |j: usize| scale * bn * sig2(j).powf(-m) * (d[j] / d[j - 1]).powf(m) * eps.powf(theta);
            let (corrected, literal) = if i == l + 1 {
                (Some(upper(l)), Some(upper(l)))
            } else if i + 1 == l {
                let corr = scale * bn * sig2(l - 1).powf(-m) * (d[l - 1] / d[l - 2]).powf(m) * eps.powf(theta);
                let lit =
                    (l < k).then(|| scale * bn * sig2(l - 1).powf(-m) * (d[l] / d[l - 1]).powf(m) * eps.powf(theta));
                (Some(corr), lit)
            } else {
                (None, None)
            };
            out.quantities.push(quantity("interaction_form_d_l_over_d_lm1", e, corrected, eps, theta));
            out.quantities.push(LemmaQuantity {
                name: "interaction_form_d_lp1_over_d_l".into(),
                ratio: literal.map(|v| e.value / v),
                predicted: literal,
                ..quantity("", e, None, eps, theta)
            });
            if i + 1 == l {
                let gap = |v: Option<f64>| v.map_or(f64::INFINITY, |v| (e.value / v - 1.0).abs());
                out.matched_form =
                    Some(if gap(corrected) <= gap(literal) { "d_l/d_(l-1)".into() } else { "d_(l+1)/d_l".into() });
            }
        }
        LemmaItem::Iv => {
            let rate = n / (n + 2.0 * k as f64 - 3.0);
            let a = ctx.over_annulus(l, |x| ctx.pu_minus_u(l, x).abs().powf(q))?;
            let b = ctx.over_annulus(l, |x| ctx.u(i, x).powf(q))?;
            out.quantities.push(quantity("projection_defect_pow_q", a, None, eps, rate));
            out.quantities.push(quantity("other_bubble_pow_q", b, None, eps, rate));
        }
        LemmaItem::V => {
            let a = ctx.outside_annulus(l, |x| w.value(x) * ctx.u(l, x).powf(q))?;
            let b = ctx.over_domain(|x| w.value(x) * ctx.u(l, x).powf(p) * ctx.pu_minus_u(i, x))?;
            let c = ctx.outside_annulus(l, |x| w.value(x) * ctx.u(l, x).powf(p) * ctx.u(i, x))?;
            out.quantities.push(quantity("a_u_pow_q_off_annulus", a, None, eps, theta));
            out.quantities.push(quantity("a_u_pow_p_times_other_defect", b, None, eps, theta));
            out.quantities.push(quantity("a_u_pow_p_times_other_off_annulus", c, None, eps, theta));
        }
        LemmaItem::Vi => {
            let a = ctx.over_domain(|x| (w.value(x) - a0) * ctx.u(l, x).powf(p) * ctx.pu_minus_u(l, x))?;
            let b = ctx.over_domain(|x| (w.value(x) - a0) * ctx.u(l, x).powf(p) * ctx.u(i, x))?;
            out.quantities.push(quantity("weight_drift_times_defect", a, None, eps, theta));
            out.quantities.push(quantity("weight_drift_times_other", b, None, eps, theta));
        }
    }
    Ok(out)
}

/// `int (grad a . grad P U_i) (eps^{theta_l} P psi_l^j)` and
/// `int (grad a . grad P U_i) P U_l`, with `j = 0` selecting the scale kernel.
///
/// The predicted value attached to the first integral is
/// `delta_{i1} delta_{l1} (d a/d x_j)(xi0) c2 eps^theta` for `j >= 1`.
pub fn gradient_kernel_check(setup: &LemmaSetup, i: usize, l: usize, j: usize) -> Result<LemmaCheck> {
    let LemmaSetup { cfg, dom, weight, kind, spec } = *setup;
    check_layers(cfg, l, 1, false)?;
    check_layers(cfg, i, 1, false)?;
    if j > cfg.n {
        return Err(Error::IndexOutOfRange { index: j, max: cfg.n });
    }
    let w = weight.build(cfg.n)?;
    // The o-terms cancel to far below eps^theta; resolving them relative to
    // the leading magnitude is enough.
    let mut spec = spec.clone();
    let leading = DimConstants::new(cfg.n)?.c2 * geom::norm(&w.gradient(&cfg.xi0)) * cfg.epsilon.powf(cfg.thetas()[0]);
    spec.abs_tol = spec.abs_tol.max(1e-8 * leading);
    let spec = &spec;
    let mut kernel_spec = spec.clone();
    // psi^j with j >= 1 breaks the axial symmetry unless it points along the axis.
    let ctx = {
        let probe = LemmaContext::new(cfg, dom, weight, kind, spec)?;
        if let (Some(axis), true) = (&probe.spec.axis, j >= 1) {
            if 1.0 - axis[j - 1].abs() > 1e-12 {
                kernel_spec.axis = None;
                kernel_spec.axisymmetric = false;
                LemmaContext::new(cfg, dom, weight, kind, &kernel_spec)?
            } else {
                probe
            }
        } else {
            probe
        }
    };
    let theta = ctx.theta;
    let eps = cfg.epsilon;
    let scale_l = eps.powf(cfg.thetas()[l - 1]);
    let bi = &ctx.bubbles[i - 1];
    let bl = &ctx.bubbles[l - 1];
    let oracle = ctx.oracle.as_ref();
    let grad_term = |x: &[f64]| -> f64 {
        match oracle.project_gradient(bi, x) {
            Ok(g) => geom::dot(&w.gradient(x), &g),
            Err(_) => f64::NAN,
        }
    };
    let kernel = |x: &[f64]| -> f64 {
        let v = if j == 0 { oracle.project_psi0(bl, x) } else { oracle.project_psij(bl, x, j) };
        v.map_or(f64::NAN, |v| scale_l * v)
    };
    let a = ctx.over_domain(|x| grad_term(x) * kernel(x))?;
    let b = ctx.over_domain(|x| grad_term(x) * oracle.project(bl, x).unwrap_or(f64::NAN))?;
    let predicted =
        (j >= 1).then(|| if i == 1 && l == 1 { w.gradient(&cfg.xi0)[j - 1] * ctx.c.c2 * eps.powf(theta) } else { 0.0 });
    let predicted = predicted.filter(|v| *v != 0.0);
    Ok(LemmaCheck {
        item: "gradient".into(),
        epsilon: eps,
        l,
        i,
        quantities: vec![
            quantity("gradient_against_scaled_kernel", a, predicted, eps, theta),
            quantity("gradient_against_projection", b, None, eps, theta),
        ],
        matched_form: None,
    })
}

/// Slope of `|measured|` against `eps` for each named quantity across checks
/// made at different `eps`.
pub fn lemma_slopes(checks: &[LemmaCheck]) -> Vec<(String, Option<f64>)> {
    let Some(first) = checks.first() else {
        return Vec::new();
    };
    first
        .quantities
        .iter()
        .enumerate()
        .map(|(idx, q)| {
            let eps: Vec<f64> = checks.iter().map(|c| c.epsilon).collect();
            let vals: Vec<f64> = checks.iter().map(|c| c.quantities[idx].measured).collect();
            (q.name.clone(), power_law_fit(&eps, &vals).map(|f| f.0))
        })
        .collect()
}
