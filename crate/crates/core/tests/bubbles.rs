use btl_core::bubbles::{rate_exponents, rates, torus_lift, tower_value, Bubble, Sign, SignConvention, TowerConfig};
use btl_core::fd;
use btl_core::green::{AsymptoticProjection, Ball, ExactConcentricProjection, PerforatedBall, ProjectionOracle};
use proptest::prelude::*;

fn bubble(n: usize, delta: f64, xi: Vec<f64>) -> Bubble {
    Bubble::new(n, delta, xi, Sign::Plus).unwrap()
}

fn e1(n: usize, r: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[0] = r;
    x
}

#[test]
fn five_dimensional_value_and_far_field_decay() {
    let b = bubble(5, 0.1, vec![0.0; 5]);
    let alpha5 = (0.75 * 15f64.ln()).exp();
    let want = alpha5 * (0.1f64 / 1.01).powf(1.5);
    assert!((b.value(&e1(5, 1.0)) - want).abs() < 1e-14);
    assert!((want - 0.237_45).abs() < 1e-4);
    // log U against log r approaches slope -(n-2) away from the core.
    let slope = (b.value(&e1(5, 1e4)).ln() - b.value(&e1(5, 1e3)).ln()) / 10f64.ln();
    assert!((slope + 3.0).abs() < 1e-6, "{slope}");
}

#[test]
fn peak_formula_holds_off_origin() {
    for n in 3..=8 {
        let xi: Vec<f64> = (0..n).map(|i| 0.1 * i as f64).collect();
        let b = bubble(n, 0.37, xi.clone());
        let m = (n as f64 - 2.0) / 2.0;
        let want = btl_core::bubbles::alpha(n) * 0.37f64.powf(-m);
        assert!((b.value(&xi) - want).abs() < 1e-13 * want);
        assert_eq!(b.peak(), want);
    }
}

#[test]
fn psi0_matches_delta_difference() {
    let x = e1(4, 0.7);
    let h = 1e-5;
    let fd = (bubble(4, 0.5 + h, vec![0.0; 4]).value(&x) - bubble(4, 0.5 - h, vec![0.0; 4]).value(&x)) / (2.0 * h);
    assert!((bubble(4, 0.5, vec![0.0; 4]).psi0(&x) - fd).abs() < 1e-7);
}

#[test]
fn rates_example_and_annuli() {
    let cfg = TowerConfig::concentric(5, 1e-3, vec![1.0; 3], vec![0.0; 5]).unwrap();
    let bs = rates(&cfg).unwrap();
    let want = (0.625 * 1e-3f64.ln()).exp();
    assert!((bs[1].delta - want).abs() < 1e-15);
    assert!((bs[1].delta - 1.3335e-2).abs() < 1e-6);

    let one = TowerConfig::concentric(4, 1e-4, vec![1.0], vec![0.0; 4]).unwrap();
    let ann = one.annuli(0.5).unwrap();
    assert_eq!(ann.len(), 1);
    assert_eq!(ann.annulus(1).unwrap(), (1e-4, 0.5));

    let two = TowerConfig::concentric(4, 1e-6, vec![1.0, 1.0], vec![0.0; 4]).unwrap();
    let ann = two.annuli(0.5).unwrap();
    let d = two.deltas();
    assert_eq!(ann.annulus(2).unwrap().1, ann.annulus(1).unwrap().0);
    assert!((ann.annulus(1).unwrap().0 - (d[0] * d[1]).sqrt()).abs() < 1e-18);
    assert!((ann.annulus(2).unwrap().0 - 1e-6).abs() < 1e-20);

    let three = TowerConfig::concentric(4, 1e-6, vec![1.0; 3], vec![0.0; 4]).unwrap();
    let ann = three.annuli(0.5).unwrap();
    let d = three.deltas();
    let six = [0.5, d[0], (d[0] * d[1]).sqrt(), d[1], (d[1] * d[2]).sqrt(), d[2]];
    assert!(six.windows(2).all(|w| w[0] > w[1]));
    assert!(ann.radii.windows(2).all(|w| w[0] > w[1]));
    assert!(ann.annulus(4).is_err());
    assert_eq!(ann.locate(&e1(4, 0.2)), Some(1));
    assert_eq!(ann.locate(&e1(4, 0.9)), None);
}

#[test]
fn annuli_reject_large_eps() {
    // rho below sqrt(delta_1 delta_2) makes the outer annulus empty.
    let cfg = TowerConfig::concentric(4, 1e-2, vec![1.0, 1.0], vec![0.0; 4]).unwrap();
    assert!(cfg.annuli(0.05).is_err());
}

#[test]
fn tower_value_examples() {
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], 1e-4).unwrap();
    let exact = ExactConcentricProjection::new(dom.clone()).unwrap();
    let one = TowerConfig::concentric(4, 1e-4, vec![1.0], vec![0.0; 4]).unwrap();
    let b = &one.rates()[0];
    let x = e1(4, 0.3);
    assert_eq!(tower_value(&one, &exact, &x).unwrap(), exact.project(b, &x).unwrap());

    let two = TowerConfig::concentric(4, 1e-4, vec![1.0, 1.0], vec![0.0; 4]).unwrap();
    for dir in [e1(4, 1e-4), vec![0.0, 0.0, 1e-4, 0.0]] {
        assert!(tower_value(&two, &exact, &dir).unwrap().abs() < 1e-10);
    }

    let mut sigma = vec![vec![0.0; 4]; 2];
    sigma[0][1] = 0.5;
    let cfg = TowerConfig::new(4, 1e-6, vec![1.0, 1.0], sigma, vec![0.0; 4], SignConvention::FirstPositive).unwrap();
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], 1e-6).unwrap();
    let asym = AsymptoticProjection::new(dom);
    let bs = cfg.rates();
    let at = &bs[0].xi;
    let tower = tower_value(&cfg, &asym, at).unwrap();
    let first = asym.project(&bs[0], at).unwrap();
    let second_unprojected = bs[1].value(at).abs();
    let defect = (asym.project(&bs[1], at).unwrap() - bs[1].value(at)).abs();
    assert!((tower - first).abs() <= second_unprojected + defect + 1e-12);
}

#[test]
fn sign_conventions_differ_by_global_sign() {
    let dom = PerforatedBall::new(Ball::unit(4).unwrap(), vec![0.0; 4], 1e-6).unwrap();
    let asym = AsymptoticProjection::new(dom);
    let mut cfg = TowerConfig::concentric(4, 1e-6, vec![1.0, 2.0, 1.0], vec![0.0; 4]).unwrap();
    let x = [0.01, 0.02, 0.0, 0.0];
    let plus = tower_value(&cfg, &asym, &x).unwrap();
    cfg.sign_convention = SignConvention::FirstNegative;
    assert_eq!(tower_value(&cfg, &asym, &x).unwrap(), -plus);
}

#[test]
fn torus_lift_of_bubble() {
    let b = bubble(4, 0.3, e1(4, 1.0));
    let lifted = torus_lift(|x| b.value(x), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[2]).unwrap();
    assert_eq!(lifted, b.value(&e1(4, 1.0)));
    assert!(torus_lift(|x| b.value(x), &[1.0, 0.0], &[2]).is_err());
}

/// Max over points of the normalized residual `|lap_h U + U^p| delta^{(n+2)/2}`
/// for steps `h` and `h/2`.
fn bubble_residuals(n: usize, delta: f64, xi: &[f64], ys: &[Vec<f64>], h: f64) -> (f64, f64) {
    let b = bubble(n, delta, xi.to_vec());
    let p = (n as f64 + 2.0) / (n as f64 - 2.0);
    let norm = delta.powf((n as f64 + 2.0) / 2.0);
    let res = |step: f64| {
        ys.iter()
            .map(|y| {
                let x: Vec<f64> = xi.iter().zip(y).map(|(a, b)| a + delta * b).collect();
                (fd::laplacian(|z| b.value(z), &x, step * delta) + b.value(&x).powf(p)).abs() * norm
            })
            .fold(0.0, f64::max)
    };
    (res(h), res(h / 2.0))
}

fn point_strategy(n: usize, count: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, n), count)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bubble_solves_critical_equation_at_second_order(
        n in 3usize..=7,
        delta in 0.2f64..3.0,
        seed_pts in point_strategy(7, 20),
        xi in prop::collection::vec(-1.0f64..1.0, 7),
    ) {
        let ys: Vec<Vec<f64>> = seed_pts.iter().map(|y| y[..n].to_vec()).collect();
        let (r1, r2) = bubble_residuals(n, delta, &xi[..n], &ys, 0.04);
        prop_assert!(fd::observed_order(r1, r2) >= 1.8, "order {} ({r1}, {r2})", fd::observed_order(r1, r2));
    }

    #[test]
    fn kernels_solve_linearized_equation_at_second_order(
        n in 3usize..=7,
        delta in 0.2f64..3.0,
        axis in 1usize..=7,
        seed_pts in point_strategy(7, 20),
    ) {
        let axis = axis.min(n);
        let b = bubble(n, delta, vec![0.0; n]);
        let p = (n as f64 + 2.0) / (n as f64 - 2.0);
        let kernels: [Box<dyn Fn(&[f64]) -> f64>; 2] = [
            Box::new(|x: &[f64]| b.psi0(x)),
            Box::new(|x: &[f64]| b.psij(x, axis).unwrap()),
        ];
        for psi in &kernels {
            let res = |step: f64| {
                seed_pts.iter().map(|y| {
                    let x: Vec<f64> = y[..n].iter().map(|v| delta * v).collect();
                    (fd::laplacian(psi, &x, step * delta) + p * b.value(&x).powf(p - 1.0) * psi(&x)).abs()
                }).fold(0.0, f64::max)
            };
            let order = fd::observed_order(res(0.04), res(0.02));
            prop_assert!(order >= 1.8, "order {order}");
        }
    }

    #[test]
    fn psij_matches_center_difference(
        n in 3usize..=6,
        delta in 0.2f64..2.0,
        j in 1usize..=6,
        x in prop::collection::vec(-1.5f64..1.5, 6),
        xi in prop::collection::vec(-0.5f64..0.5, 6),
    ) {
        let j = j.min(n);
        let (x, xi) = (&x[..n], xi[..n].to_vec());
        let h = 1e-5;
        let mut plus = xi.clone();
        plus[j - 1] += h;
        let mut minus = xi.clone();
        minus[j - 1] -= h;
        let fd = (bubble(n, delta, plus).value(x) - bubble(n, delta, minus).value(x)) / (2.0 * h);
        prop_assert!((bubble(n, delta, xi).psij(x, j).unwrap() - fd).abs() < 1e-7);
    }

    #[test]
    fn scaling_covariance(
        n in 3usize..=8,
        delta in 1e-3f64..10.0,
        y in prop::collection::vec(-3.0f64..3.0, 8),
        xi in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let (y, xi) = (&y[..n], &xi[..n]);
        let x: Vec<f64> = xi.iter().zip(y).map(|(a, b)| a + delta * b).collect();
        let lhs = bubble(n, delta, xi.to_vec()).value(&x);
        let rhs = delta.powf(-(n as f64 - 2.0) / 2.0) * bubble(n, 1.0, vec![0.0; n]).value(y);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }

    #[test]
    fn rate_exponent_relations(n in 3usize..=12, k in 1usize..=10) {
        let t = rate_exponents(n, k);
        prop_assert!(t[k - 1] < 1.0);
        let gap = 2.0 / ((n as f64 - 1.0) + 2.0 * (k as f64 - 1.0));
        for w in t.windows(2) {
            prop_assert!((w[1] - w[0] - gap).abs() < 1e-15);
        }
    }

    #[test]
    fn torus_lift_is_rotation_invariant(angle in 0.0f64..6.3, r in 0.1f64..2.0, z in prop::collection::vec(-1.0f64..1.0, 2)) {
        let u = |x: &[f64]| x[0] * x[0] + 3.0 * x[1] - x[2];
        let base = [r, 0.0, z[0], z[1]];
        let rotated = [r * angle.cos(), r * angle.sin(), z[0], z[1]];
        let a = torus_lift(u, &base, &[1]).unwrap();
        let b = torus_lift(u, &rotated, &[1]).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
