//! Shared oracles for the integration suites: an independent projected
//! gradient solver for the SVM dual, and a seeded random-PCFG generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surprisal_core::grammar::Pcfg;
use surprisal_core::parser::PrefixParser;

/// Brute-force maximizer of the SVM dual by projected gradient ascent:
/// maximize `e'a - 1/2 a'Qa` over `0 <= a <= c`, `y'a = 0`. Independent of
/// the SMO implementation.
pub fn dual_oracle(x: &[Vec<f64>], y: &[bool], c: f64, gamma: f64, iters: usize) -> f64 {
    let n = x.len();
    let ys: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d2: f64 = x[i]
                .iter()
                .zip(&x[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            q[i * n + j] = ys[i] * ys[j] * (-gamma * d2).exp();
        }
    }
    // step size from a trace bound on the curvature
    let trace: f64 = (0..n).map(|i| q[i * n + i]).sum();
    let step = 1.0 / trace.max(1.0);

    let mut alpha = vec![0.0; n];
    for _ in 0..iters {
        let mut grad = vec![0.0; n];
        for i in 0..n {
            let mut qa = 0.0;
            for j in 0..n {
                qa += q[i * n + j] * alpha[j];
            }
            grad[i] = 1.0 - qa;
        }
        let proposal: Vec<f64> = alpha
            .iter()
            .zip(&grad)
            .map(|(a, g)| a + step * g)
            .collect();
        alpha = project(&proposal, &ys, c);
    }
    let mut obj = alpha.iter().sum::<f64>();
    for i in 0..n {
        for j in 0..n {
            obj -= 0.5 * alpha[i] * q[i * n + j] * alpha[j];
        }
    }
    obj
}

/// Euclidean projection onto the box-hyperplane intersection
/// `{0 <= a <= c, y'a = 0}` by bisection on the hyperplane multiplier.
fn project(v: &[f64], ys: &[f64], c: f64) -> Vec<f64> {
    let clipped = |lambda: f64| -> Vec<f64> {
        v.iter()
            .zip(ys)
            .map(|(vi, yi)| (vi - lambda * yi).clamp(0.0, c))
            .collect()
    };
    let violation = |lambda: f64| -> f64 {
        clipped(lambda)
            .iter()
            .zip(ys)
            .map(|(a, y)| a * y)
            .sum::<f64>()
    };
    // y'a(lambda) is nonincreasing in lambda
    let mut lo = -1e3;
    let mut hi = 1e3;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if violation(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clipped(0.5 * (lo + hi))
}

/// A small random PCFG that the prefix parser accepts: every nonterminal
/// keeps at least half its mass on a directly terminating rule, so the
/// grammar is productive and subcritical.
pub fn random_pcfg(seed: u64) -> Pcfg<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n_nts = rng.gen_range(3..=5);
        let n_terms = rng.gen_range(4..=7);
        let terminals: Vec<String> = (0..n_terms).map(|i| format!("t{i}")).collect();
        let nts: Vec<String> = (0..n_nts).map(|i| format!("X{i}")).collect();
        let mut rules: Vec<(String, Vec<String>, f64)> = Vec::new();
        for (i, nt) in nts.iter().enumerate() {
            let n_extra = rng.gen_range(1..=2);
            // terminating rule keeps the grammar finite in expectation
            let safe_mass = 0.5 + 0.3 * rng.gen::<f64>();
            let safe_term = terminals[rng.gen_range(0..n_terms)].clone();
            rules.push((nt.clone(), vec![safe_term], safe_mass));
            // the remaining mass is split evenly over random expansions
            let rest = 1.0 - safe_mass;
            for _ in 0..n_extra {
                let len = rng.gen_range(1..=3);
                let mut rhs = Vec::with_capacity(len);
                for _ in 0..len {
                    if rng.gen_bool(0.5) && i + 1 < n_nts {
                        // mostly later nonterminals, occasionally any
                        // (bounded left recursion)
                        let target = if rng.gen_bool(0.3) {
                            rng.gen_range(0..n_nts)
                        } else {
                            rng.gen_range(i..n_nts)
                        };
                        rhs.push(nts[target].clone());
                    } else {
                        rhs.push(terminals[rng.gen_range(0..n_terms)].clone());
                    }
                }
                rules.push((nt.clone(), rhs, rest / n_extra as f64));
            }
        }
        let Ok(pcfg) = Pcfg::from_rules("X0", &rules) else {
            continue;
        };
        if PrefixParser::new(&pcfg).is_ok() {
            return pcfg;
        }
    }
}
