//! Reference computations shared by the integration tests. Nothing here
//! calls into the solver under test: matrix exponentials use Padé
//! approximation with scaling and squaring, and model probabilities go
//! through the PRISM text checker's own state-space exploration.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use quantum_core::expr::Expr;
use quantum_core::prism;

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(A)` by the degree-13 Padé approximant with scaling and squaring.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = norm1(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Padé denominator is singular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// `P(true U<=t target)` from `init`: the target states are made absorbing
/// and the full matrix exponential is taken.
pub fn until_probability(
    n: usize,
    transitions: &[(usize, usize, f64)],
    init: usize,
    target: &[bool],
    t: f64,
) -> f64 {
    if target[init] {
        return 1.0;
    }
    let mut q = DMatrix::<f64>::zeros(n, n);
    for &(s, d, r) in transitions {
        if s == d || target[s] {
            continue;
        }
        q[(s, d)] += r;
        q[(s, s)] -= r;
    }
    let p = expm(&(q * t));
    (0..n).filter(|&j| target[j]).map(|j| p[(init, j)]).sum()
}

/// A random chain on `n` states with log-uniform rates in `[0.01, 10]`,
/// a few target states and state 0 initial.
pub fn random_ctmc(rng: &mut ChaCha8Rng, n: usize) -> (Vec<(usize, usize, f64)>, Vec<bool>) {
    let mut transitions = Vec::new();
    for s in 0..n {
        let degree = rng.gen_range(1..=4.min(n - 1).max(1));
        for _ in 0..degree {
            let d = rng.gen_range(0..n);
            let rate = 10f64.powf(rng.gen_range(-2.0..1.0));
            transitions.push((s, d, rate));
        }
    }
    let mut target = vec![false; n];
    let hits = (n / 20).max(1);
    for _ in 0..hits {
        target[rng.gen_range(1..n.max(2)).min(n - 1)] = true;
    }
    (transitions, target)
}

/// Probability of reaching a labelled set of states of a PRISM model text
/// within `t`, computed from the checker's exploration.
pub fn prism_until(sm: &str, label: &str, t: f64) -> (usize, f64) {
    let checked = prism::check(sm).expect("emitted model parses");
    let x = checked.explore(100_000).expect("model explores");
    let hazard = Expr::Label(label.to_string());
    let target: Vec<bool> = x
        .states
        .iter()
        .map(|v| checked.eval_state(&hazard, v).expect("label evaluates"))
        .collect();
    let triples: Vec<(usize, usize, f64)> =
        x.transitions.iter().map(|(s, d, r, _)| (*s, *d, *r)).collect();
    (
        x.states.len(),
        until_probability(x.states.len(), &triples, 0, &target, t),
    )
}
