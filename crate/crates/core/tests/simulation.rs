use cqr_core::simulation::{
    design_options, failure_time, generate_seeded, multi_d_study, normal_quantile, run_coverage, run_mc,
};
use cqr_core::{Example, ScenarioSpec, SimulationError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rate(example: Example, params: &str) -> f64 {
    let spec = ScenarioSpec::parse(example, &format!("n=100000,{params}")).unwrap();
    generate_seeded(&spec, 77).censoring_rate()
}

#[test]
fn normal_quantile_reference_values() {
    let table = [
        (0.5, 0.0),
        (0.975, 1.959963984540054),
        (0.7, 0.5244005127080407),
        (0.1, -1.2815515655446004),
        (1e-6, -4.753424308822899),
    ];
    for (p, q) in table {
        assert!((normal_quantile(p) - q).abs() < 1e-9, "{p}: {}", normal_quantile(p));
    }
}

#[test]
fn example_one_censoring_rates() {
    assert!((rate(Example::Ex1, "cens=40") - 0.40).abs() <= 0.02);
    assert!((rate(Example::Ex1, "cens=15") - 0.15).abs() <= 0.02);
}

/// `P(C < T)` for the Ex3 mixture, by 2-d Simpson quadrature over
/// `(z, eps)` on [-9, 9]^2.
fn ex3_rate_quadrature() -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let n = 1200;
    let h = 18.0 / n as f64;
    let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
    let mut total = 0.0;
    for i in 0..=n {
        let z = -9.0 + i as f64 * h;
        let upper = if z < 1.0 { 4.0 } else { 8.0 };
        let s = 0.2 + 2.0 * (z - 0.5) * (z - 0.5);
        let mut inner = 0.0;
        for j in 0..=n {
            let e = -9.0 + j as f64 * h;
            let t = 1.0 + z + s * e;
            inner += w(j) * phi(e) * (t / upper).clamp(0.0, 1.0);
        }
        total += w(i) * phi(z) * inner * h / 3.0;
    }
    total * h / 3.0
}

#[test]
fn example_three_censoring_rate_matches_quadrature() {
    let exact = ex3_rate_quadrature();
    assert!((exact - 0.331).abs() < 0.005, "{exact}");
    assert!((rate(Example::Ex3, "") - exact).abs() <= 0.01);
}

#[test]
fn calibrated_example_four_rates() {
    assert!((rate(Example::Ex4, "cens=30") - 0.30).abs() <= 0.02);
    assert!((rate(Example::Ex4, "cens=40") - 0.40).abs() <= 0.02);
    assert!((rate(Example::Ex4, "cens=15") - 0.15).abs() <= 0.02);
}

fn conditional_quantile(spec: &ScenarioSpec, z: f64, level: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let beta = spec.true_beta();
    let q = normal_quantile(spec.tau);
    let mut t: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let eta: f64 = StandardNormal.sample(&mut rng);
            failure_time(spec, &beta, z, eta - q)
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[(level * t.len() as f64) as usize]
}

#[test]
fn generating_quantile_is_linear() {
    for (a, tau) in [(2.0, 0.5), (0.5, 0.3), (0.0, 0.7)] {
        let spec = ScenarioSpec { a, tau, ..ScenarioSpec::new(Example::Ex2) };
        for z in [0.7, -1.0] {
            let q = conditional_quantile(&spec, z, tau);
            assert!((q - (2.0 + z)).abs() < 0.01, "a={a} tau={tau} z={z}: {q}");
        }
    }
    // with a > 0 another level is not linear in z
    let spec = ScenarioSpec { a: 2.0, tau: 0.5, ..ScenarioSpec::new(Example::Ex2) };
    let q7 = conditional_quantile(&spec, 0.7, 0.8);
    let qm = conditional_quantile(&spec, -1.0, 0.8);
    let q0 = conditional_quantile(&spec, 0.5, 0.8);
    // three points on one line would satisfy this to Monte Carlo noise
    let interp = qm + (q7 - qm) * (0.5 + 1.0) / (0.7 + 1.0);
    assert!((q0 - interp).abs() > 0.2);
}

#[test]
fn generator_is_deterministic() {
    for ex in [Example::Ex1, Example::Ex2, Example::Ex3, Example::Ex4, Example::MultiD] {
        let spec = ScenarioSpec::new(ex);
        assert_eq!(generate_seeded(&spec, 12), generate_seeded(&spec, 12));
    }
}

#[test]
fn report_invariants() {
    let spec = ScenarioSpec::new(Example::Ex2);
    let rep = run_mc(&spec, 40, &design_options()).unwrap();
    assert_eq!(rep, run_mc(&spec, 40, &design_options()).unwrap());
    assert!((0.0..=1.0).contains(&rep.censoring_rate));
    for c in &rep.coefficients {
        assert!(c.rmse + 1e-12 >= c.mean_bias.abs());
    }
    assert_eq!(run_mc(&spec, 0, &design_options()), Err(SimulationError::NoReplications));
}

#[test]
fn multi_d_one_is_example_one() {
    let opts = design_options();
    let a = multi_d_study(1, 40, 200, 8, 5, &opts).unwrap();
    let spec = ScenarioSpec { n: 200, seed: 5, ..ScenarioSpec::new(Example::Ex1) };
    let b = run_mc(&spec, 8, &opts).unwrap();
    assert_eq!(a.coefficients, b.coefficients);
}

#[test]
fn coverage_smoke_and_level_nesting() {
    let spec = ScenarioSpec { n: 60, ..ScenarioSpec::new(Example::Ex2) };
    let opts = design_options();
    let r95 = run_coverage(&spec, 50, 0.95, 10, &opts).unwrap();
    let r99 = run_coverage(&spec, 50, 0.99, 10, &opts).unwrap();
    for (c95, c99) in r95.coefficients.iter().zip(&r99.coefficients) {
        let (e95, e99) = (c95.ecp.unwrap(), c99.ecp.unwrap());
        assert!((0.0..=1.0).contains(&e95));
        assert!(e99 >= e95);
        assert!(c99.eml.unwrap() >= c95.eml.unwrap());
    }
}
