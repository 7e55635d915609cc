use cqr_core::{check_loss, solve, QrProblem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum of the weighted check loss over every fit interpolating `p`
/// rows, found by Gaussian elimination on each subset.
fn brute_force(x: &[f64], p: usize, y: &[f64], w: &[f64], tau: f64) -> f64 {
    let m = y.len();
    let objective = |b: &[f64]| -> f64 {
        (0..m)
            .map(|i| w[i] * check_loss(y[i] - (0..p).map(|j| x[i * p + j] * b[j]).sum::<f64>(), tau))
            .sum()
    };
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        let mut a: Vec<Vec<f64>> = idx.iter().map(|&i| {
            let mut r = x[i * p..(i + 1) * p].to_vec();
            r.push(y[i]);
            r
        }).collect();
        if let Some(b) = gauss(&mut a, p) {
            best = best.min(objective(&b));
        }
        // next combination
        let mut k = p;
        while k > 0 && idx[k - 1] == m - p + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return best;
        }
        idx[k - 1] += 1;
        for j in k..p {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn gauss(a: &mut [Vec<f64>], p: usize) -> Option<Vec<f64>> {
    for c in 0..p {
        let piv = (c..p).max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Some((0..p).map(|r| a[r][p] / a[r][r]).collect())
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize, Vec<f64>, Vec<f64>, f64) {
    let p = rng.random_range(1..=3);
    let m = rng.random_range(p..=10);
    let mut x = Vec::with_capacity(m * p);
    for _ in 0..m {
        x.push(1.0);
        for _ in 1..p {
            x.push(rng.random_range(-2.0..2.0));
        }
    }
    let y = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
    let w = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
    let tau = [0.25, 0.5, 0.7][rng.random_range(0..3)];
    (x, p, y, w, tau)
}

#[test]
fn matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    for case in 0..400 {
        let (x, p, y, w, tau) = random_instance(&mut rng);
        let oracle = brute_force(&x, p, &y, &w, tau);
        let prob = QrProblem::new(x, p, y, w, tau).unwrap();
        let sol = solve(&prob, 1e-8).unwrap();
        assert!(
            (sol.objective - oracle).abs() <= 1e-8 * oracle.abs().max(1.0),
            "case {case}: solver {} vs oracle {oracle}",
            sol.objective
        );
        assert!((prob.objective_at(&sol.beta) - sol.objective).abs() <= 1e-9 * sol.objective.max(1.0));
    }
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (3usize..25).prop_flat_map(|m| {
        (
            prop::collection::vec(-3.0f64..3.0, m),
            prop::collection::vec(-5.0f64..5.0, m),
            prop::collection::vec(0.1f64..3.0, m),
            prop::sample::select(vec![0.1, 0.25, 0.5, 0.7, 0.9]),
        )
    })
}

fn design(z: &[f64]) -> Vec<f64> {
    z.iter().flat_map(|&v| [1.0, v]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scale_and_shift_equivariance((z, y, w, tau) in instance(), c in 0.1f64..10.0, s in -5.0f64..5.0) {
        let base = solve(&QrProblem::new(design(&z), 2, y.clone(), w.clone(), tau).unwrap(), 1e-8).unwrap();
        // y -> c y + s z shifts the optimal value by the factor c
        let y2: Vec<f64> = y.iter().zip(&z).map(|(v, zi)| c * v + s * zi).collect();
        let moved = solve(&QrProblem::new(design(&z), 2, y2, w, tau).unwrap(), 1e-8).unwrap();
        prop_assert!((moved.objective - c * base.objective).abs() <= 1e-7 * (1.0 + c * base.objective));
    }

    #[test]
    fn duplicated_rows_merge_into_weights((z, y, w, tau) in instance()) {
        let base = solve(&QrProblem::new(design(&z), 2, y.clone(), w.iter().map(|v| 2.0 * v).collect(), tau).unwrap(), 1e-8).unwrap();
        let mut zz = z.clone();
        zz.extend_from_slice(&z);
        let mut yy = y.clone();
        yy.extend_from_slice(&y);
        let mut ww = w.clone();
        ww.extend_from_slice(&w);
        let dup = solve(&QrProblem::new(design(&zz), 2, yy, ww, tau).unwrap(), 1e-8).unwrap();
        prop_assert!((dup.objective - base.objective).abs() <= 1e-8 * base.objective.max(1.0));
    }

    #[test]
    fn certificate_holds((z, y, w, tau) in instance()) {
        let prob = QrProblem::new(design(&z), 2, y, w, tau).unwrap();
        let sol = solve(&prob, 1e-8).unwrap();
        prop_assert!(sol.certificate <= prob.certificate_bound(1e-8));
    }
}
