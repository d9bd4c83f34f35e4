use std::f64::consts::PI;

use btl_core::bubbles::{SignConvention, TowerConfig};
use btl_core::energy::{
    energy_functional, expansion_fit, gradient_kernel_check, interaction_check, lemma_slopes, tower_energy,
    tower_energy_with, LemmaItem, LemmaSetup, ProjectionKind, TowerTemplate, WeightSpec,
};
use btl_core::green::{Ball, ExactConcentricProjection, PerforatedBall};
use btl_core::quadrature::QuadratureSpec;
use btl_core::reduced::{closed_form_t, t_inverse, ReducedConfig};
use btl_core::special::dim_constants;

fn spec(n: usize) -> QuadratureSpec {
    QuadratureSpec::for_dimension(n).with_tolerance(1e-9, 1e-15)
}

fn critical_template(n: usize, k: usize, g: &[f64]) -> TowerTemplate {
    let rc = ReducedConfig::new(n, k, 1.0, g.to_vec()).unwrap();
    let sigma = rc.sigma0().unwrap();
    let d = t_inverse(&closed_form_t(&rc, &sigma).unwrap()).unwrap();
    TowerTemplate {
        n,
        d,
        sigma,
        xi0: vec![0.0; n],
        outer: Ball::unit(n).unwrap(),
        sign_convention: SignConvention::default(),
    }
}

fn coarse(n: usize) -> QuadratureSpec {
    QuadratureSpec::for_dimension(n).with_tolerance(1e-6, 1e-12)
}

fn geometric(from: f64, to: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| 10f64.powf(from + (to - from) * i as f64 / (count - 1) as f64)).collect()
}

fn affine(g: &[f64]) -> WeightSpec {
    WeightSpec::Affine { a0: 1.0, g: g.to_vec() }
}

#[test]
fn zero_field_has_zero_energy() {
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], 1e-3).unwrap();
    let cfg = TowerConfig::concentric(4, 1e-3, vec![1.0], vec![0.0; 4]).unwrap();
    let w = affine(&[0.3, 0.0, 0.0, 0.0]).build(4).unwrap();
    let e = energy_functional(
        |x| Ok((0.0, vec![0.0; x.len()])),
        &dom,
        &cfg.annuli(dom.default_rho()).unwrap(),
        w.as_ref(),
        &spec(4),
    )
    .unwrap();
    assert_eq!(e.value, 0.0);
}

#[test]
fn exact_projection_energy_tends_to_c1() {
    let c1 = dim_constants(4).unwrap().c1;
    assert!((c1 - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    let w = WeightSpec::Constant { a0: 1.0 }.build(4).unwrap();
    let mut prev = f64::INFINITY;
    for eps in [1e-3, 1e-5, 1e-7] {
        let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], eps).unwrap();
        let cfg = TowerConfig::concentric(4, eps, vec![1.0], vec![0.0; 4]).unwrap();
        let oracle = ExactConcentricProjection::new(dom.clone()).unwrap();
        let s = spec(4).with_axis(vec![1.0, 0.0, 0.0, 0.0], true);
        let e = tower_energy_with(&cfg, &oracle, w.as_ref(), &s).unwrap();
        let gap = (e.value - c1).abs();
        assert!(e.converged && gap < prev, "eps = {eps}: {} vs {c1}", e.value);
        prev = gap;
    }
    assert!(prev < 1e-3 * c1);
}

#[test]
fn energy_is_even_in_the_field() {
    let eps = 1e-3;
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], eps).unwrap();
    let w = affine(&[0.25, 0.0, 0.0, 0.0]).build(4).unwrap();
    let sigma = vec![vec![0.5, 0.0, 0.0, 0.0], vec![0.0; 4]];
    let s = spec(4);
    let mut values = Vec::new();
    for conv in [SignConvention::FirstPositive, SignConvention::FirstNegative] {
        let cfg = TowerConfig::new(4, eps, vec![1.0, 1.0], sigma.clone(), vec![0.0; 4], conv).unwrap();
        values.push(tower_energy(&cfg, &dom, w.as_ref(), &s).unwrap().value);
    }
    assert_eq!(values[0].to_bits(), values[1].to_bits());
}

#[test]
fn single_layer_with_constant_weight_approaches_c1() {
    let c1 = dim_constants(4).unwrap().c1;
    let w = WeightSpec::Constant { a0: 1.0 };
    let tpl = TowerTemplate {
        n: 4,
        d: vec![1.0],
        sigma: vec![vec![0.0; 4]],
        xi0: vec![0.0; 4],
        outer: Ball::unit(4).unwrap(),
        sign_convention: SignConvention::default(),
    };
    let r = expansion_fit(&tpl, &w, &geometric(-2.0, -6.0, 5), &spec(4)).unwrap();
    let gaps: Vec<f64> = r.points.iter().map(|p| (p.energy - c1).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[4] < 1e-3 * c1);
}

#[test]
fn two_layer_excess_is_positive_and_shrinks() {
    // The (d, sigma) critical point puts xi_1 within 0.3 of the sphere at
    // eps = 1e-2, so the sign check runs deeper in the asymptotic regime.
    let tpl = critical_template(4, 2, &[0.25, 0.0, 0.0, 0.0]);
    let r = expansion_fit(&tpl, &affine(&[0.25, 0.0, 0.0, 0.0]), &geometric(-6.0, -7.0, 3), &spec(4)).unwrap();
    assert!(r.points.iter().all(|p| p.valid && p.excess > 0.0), "{:?}", r.points);
    assert!(r.points.windows(2).all(|w| w[1].excess < w[0].excess));
    assert!(r.psi > 0.0);
}

#[test]
fn out_of_ball_centres_are_reported_per_point() {
    let tpl = critical_template(4, 2, &[0.5, 0.0, 0.0, 0.0]);
    let r =
        expansion_fit(&tpl, &affine(&[0.5, 0.0, 0.0, 0.0]), &[10f64.powf(-1.5), 1e-6, 1e-7, 1e-8], &coarse(4)).unwrap();
    assert!(r.points[0].failure.is_some());
    assert!(r.excluded.contains(&r.points[0].epsilon));
}

#[test]
fn expansion_recovers_rate_exponents() {
    for (n, k, grid) in
        [(4usize, 1usize, geometric(-3.0, -6.0, 4)), (4, 2, geometric(-6.0, -9.0, 4)), (5, 1, geometric(-3.0, -6.0, 4))]
    {
        let mut g = vec![0.0; n];
        g[0] = 0.5;
        let tpl = critical_template(n, k, &g);
        let r = expansion_fit(&tpl, &affine(&g), &grid, &spec(n)).unwrap();
        let fitted = r.fitted_theta.unwrap();
        assert!((fitted - r.theta).abs() <= 0.1, "n = {n}, k = {k}: {fitted} vs {}", r.theta);
        assert!(r.coefficient_gap.unwrap().abs() <= 0.15, "n = {n}, k = {k}: {:?}", r.coefficient_gap);
    }
}

#[test]
fn rotations_fixing_the_gradient_leave_the_energy_alone() {
    let eps = 1e-3;
    let n = 4;
    let g = vec![0.25, 0.0, 0.0, 0.0];
    let w = affine(&g).build(n).unwrap();
    let dom = PerforatedBall::new(Ball::unit(n).unwrap(), vec![0.0; n], eps).unwrap();
    let s = coarse(n);
    let base = vec![vec![0.4, 0.3, 0.0, 0.0], vec![0.1, 0.0, 0.2, 0.0]];
    // Rotation in the (x2, x3) plane, then in (x3, x4).
    let rotate = |v: &[f64], a: f64, b: f64| -> Vec<f64> {
        let (x2, x3) = (a.cos() * v[1] - a.sin() * v[2], a.sin() * v[1] + a.cos() * v[2]);
        let (x3, x4) = (b.cos() * x3 - b.sin() * v[3], b.sin() * x3 + b.cos() * v[3]);
        vec![v[0], x2, x3, x4]
    };
    let energy = |sigma: Vec<Vec<f64>>| {
        let cfg = TowerConfig::new(n, eps, vec![1.0, 1.0], sigma, vec![0.0; n], SignConvention::default()).unwrap();
        tower_energy(&cfg, &dom, w.as_ref(), &s).unwrap().value
    };
    let reference = energy(base.clone());
    for (a, b) in [(1.3, 2.1)] {
        let v = energy(base.iter().map(|v| rotate(v, a, b)).collect());
        assert!((v - reference).abs() <= 1e-3 * reference.abs(), "{v} vs {reference}");
    }
}

fn setup_at<'a>(
    cfg: &'a TowerConfig,
    dom: &'a PerforatedBall,
    weight: &'a WeightSpec,
    spec: &'a QuadratureSpec,
) -> LemmaSetup<'a> {
    LemmaSetup { cfg, dom, weight, kind: ProjectionKind::Auto, spec }
}

#[test]
fn interaction_item_one_matches_bubble_mass() {
    let eps = 1e-4;
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], eps).unwrap();
    let cfg = TowerConfig::concentric(4, eps, vec![1.0], vec![0.0; 4]).unwrap();
    let w = WeightSpec::Constant { a0: 1.0 };
    let s = spec(4);
    let c = interaction_check(LemmaItem::I, &setup_at(&cfg, &dom, &w, &s), 1, 1).unwrap();
    let want = 64.0 * PI * PI / 6.0;
    assert!((c.quantities[0].predicted.unwrap() - want).abs() < 1e-9 * want);
    assert!((c.quantities[0].ratio.unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn interaction_item_two_ratio_tends_to_one() {
    let w = WeightSpec::Constant { a0: 1.0 };
    let s = spec(4);
    let mut gaps = Vec::new();
    for eps in geometric(-2.0, -5.0, 4) {
        let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], eps).unwrap();
        let cfg = TowerConfig::concentric(4, eps, vec![1.0], vec![0.0; 4]).unwrap();
        let c = interaction_check(LemmaItem::Ii, &setup_at(&cfg, &dom, &w, &s), 1, 1).unwrap();
        let pred = c.quantities[0].predicted.unwrap();
        assert!((pred + 32.0 * PI * PI * eps.powf(2.0 / 3.0)).abs() < 1e-9 * pred.abs());
        gaps.push((c.quantities[0].ratio.unwrap() - 1.0).abs());
    }
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[1] < 0.1, "{gaps:?}");
}

#[test]
fn interaction_item_two_needs_the_last_rate() {
    // With d_k != 1 only the form carrying d_k^{-(n-2)} matches.
    let eps = 1e-4;
    let w = WeightSpec::Constant { a0: 1.0 };
    let s = spec(4);
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], eps).unwrap();
    let cfg = TowerConfig::concentric(4, eps, vec![1.0, 2.0], vec![0.0; 4]).unwrap();
    let c = interaction_check(LemmaItem::Ii, &setup_at(&cfg, &dom, &w, &s), 2, 1).unwrap();
    let with_d = c.quantities[0].ratio.unwrap();
    let without = c.quantities[1].ratio.unwrap();
    assert!((with_d - 1.0).abs() < 0.1 && (without - 1.0).abs() > 0.5, "{with_d} {without}");
}

#[test]
fn interaction_item_three_picks_the_lower_neighbour_form() {
    let eps = 1e-6;
    let w = WeightSpec::Constant { a0: 1.0 };
    let s = spec(4);
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], eps).unwrap();
    let cfg = TowerConfig::concentric(4, eps, vec![1.0, 2.0, 0.5], vec![0.0; 4]).unwrap();
    let c = interaction_check(LemmaItem::Iii, &setup_at(&cfg, &dom, &w, &s), 2, 1).unwrap();
    assert_eq!(c.matched_form.as_deref(), Some("d_l/d_(l-1)"));
    assert!((c.quantities[0].ratio.unwrap() - 1.0).abs() < 0.15, "{:?}", c.quantities[0]);
}

#[test]
fn interaction_item_four_decays_fast_enough() {
    let w = WeightSpec::Constant { a0: 1.0 };
    let s = spec(4);
    let checks: Vec<_> = geometric(-3.0, -6.0, 4)
        .into_iter()
        .map(|eps| {
            let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], eps).unwrap();
            let cfg = TowerConfig::concentric(4, eps, vec![1.0, 1.0], vec![0.0; 4]).unwrap();
            interaction_check(LemmaItem::Iv, &setup_at(&cfg, &dom, &w, &s), 1, 2).unwrap()
        })
        .collect();
    let rate = checks[0].quantities[0].rate;
    for (name, slope) in lemma_slopes(&checks) {
        assert!(slope.unwrap() >= rate - 0.1, "{name}: {slope:?} vs {rate}");
    }
}

#[test]
fn gradient_kernel_vanishes_for_constant_weight() {
    let eps = 1e-3;
    let w = WeightSpec::Constant { a0: 2.0 };
    let s = spec(4);
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], eps).unwrap();
    let cfg = TowerConfig::concentric(4, eps, vec![1.0, 1.0], vec![0.0; 4]).unwrap();
    for (i, l, j) in [(1, 1, 1), (1, 2, 0), (2, 1, 3)] {
        let c = gradient_kernel_check(&setup_at(&cfg, &dom, &w, &s), i, l, j).unwrap();
        assert!(c.quantities.iter().all(|q| q.measured == 0.0), "{c:?}");
    }
}

#[test]
fn gradient_kernel_leading_term_has_the_magnitude_of_c2_da() {
    let eps = 1e-3;
    let w = affine(&[0.25, 0.0, 0.0, 0.0]);
    let s = spec(4);
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], eps).unwrap();
    let cfg = TowerConfig::concentric(4, eps, vec![1.0], vec![0.0; 4]).unwrap();
    let c = gradient_kernel_check(&setup_at(&cfg, &dom, &w, &s), 1, 1, 1).unwrap();
    let ratio = c.quantities[0].ratio.unwrap();
    assert!((ratio.abs() - 1.0).abs() < 0.15, "{ratio}");
}

#[test]
fn gradient_kernel_scale_kernel_decays_faster_than_theta() {
    // Off-centre bubble; the concentric integrals vanish by parity.
    let g = [0.25, 0.0, 0.0, 0.0];
    let w = affine(&g);
    let s = spec(4);
    let tpl = critical_template(4, 1, &g);
    let checks: Vec<_> = geometric(-3.0, -6.0, 4)
        .into_iter()
        .map(|eps| {
            let (cfg, dom) = tpl.at(eps).unwrap();
            gradient_kernel_check(&setup_at(&cfg, &dom, &w, &s), 1, 1, 0).unwrap()
        })
        .collect();
    let theta = 2.0 / 3.0;
    let slopes = lemma_slopes(&checks);
    assert!(slopes[0].1.unwrap() > theta, "{slopes:?}");
}
