mod oracle;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quantum_core::ctmc::{collect_counterexample, transient_until, Ctmc, TransientConfig};
use quantum_core::expr::{parse_expr, Expr};
use quantum_core::fixtures::{AIRBAG_QUM, AIRBAG_XMI};
use quantum_core::{parse_native, parse_xmi, SearchConfig};

fn chain(seed: u64, n: usize) -> (Ctmc, Vec<(usize, usize, f64)>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tr, target) = oracle::random_ctmc(&mut rng, n);
    (Ctmc::from_triples(n, &tr), tr, target)
}

fn arb_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0i64..50).prop_map(|v| v.to_string()),
        "[a-c]_state".prop_map(String::from),
        Just("true".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), prop::sample::select(vec!["+", "-", "*"]))
                .prop_map(|(a, b, op)| format!("({a} {op} {b})")),
            (inner.clone(), inner.clone(), prop::sample::select(vec!["=", "!=", "<", "<=", ">", ">="]))
                .prop_map(|(a, b, op)| format!("({a} {op} {b})")),
            (inner.clone(), inner.clone(), prop::sample::select(vec!["&", "|"]))
                .prop_map(|(a, b, op)| format!("{a} {op} {b}")),
            inner.prop_map(|a| format!("!({a})")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transient_matches_the_oracle(seed in any::<u64>(), n in 2usize..40, t in 0.01f64..20.0) {
        let (c, tr, target) = chain(seed, n);
        let got = transient_until(&c, &target, t, &TransientConfig::default()).unwrap();
        let want = oracle::until_probability(n, &tr, 0, &target, t);
        prop_assert!((got - want).abs() < 1e-7, "{} vs {}", got, want);
    }

    #[test]
    fn transient_is_monotone_in_time(seed in any::<u64>(), n in 2usize..40, t in 0.01f64..10.0) {
        let (c, _, target) = chain(seed, n);
        let cfg = TransientConfig::default();
        let a = transient_until(&c, &target, t, &cfg).unwrap();
        let b = transient_until(&c, &target, 2.0 * t, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(a <= b + 1e-9);
    }

    #[test]
    fn counterexamples_never_exceed_the_probability(seed in any::<u64>(), n in 2usize..25, t in 0.1f64..5.0) {
        let (c, _, target) = chain(seed, n);
        let p = transient_until(&c, &target, t, &TransientConfig::default()).unwrap();
        let cfg = SearchConfig { mass_fraction: 0.95, path_cap: 500, max_expansions: 20_000 };
        if let Ok(ce) = collect_counterexample(&c, &target, t, p, &cfg) {
            let sum: f64 = ce.paths.iter().map(|x| x.probability).sum();
            prop_assert!(sum <= p + 1e-9, "{} > {}", sum, p);
            prop_assert!(ce.paths.windows(2).all(|w| w[0].probability >= w[1].probability));
            for path in &ce.paths {
                prop_assert_eq!(path.states[0], c.initial);
                prop_assert!(target[*path.states.last().unwrap()]);
                prop_assert!(path.probability <= path.jump_probability + 1e-15);
            }
        }
    }

    #[test]
    fn printed_expressions_are_stable(src in arb_expr(), x in -3i64..20) {
        let e = parse_expr(&src).unwrap();
        let printed = e.to_string();
        let again: Expr = parse_expr(&printed).unwrap();
        // Printing may add parentheses once; after that it is a fixpoint.
        prop_assert_eq!(again.to_string(), printed);
        let env = |_: &str| Some(x);
        prop_assert_eq!(again.eval(&env).ok(), e.eval(&env).ok());
    }

    #[test]
    fn native_parser_survives_damage(cut in 0usize..AIRBAG_QUM.len(), len in 0usize..40, junk in "[{}\"*>.a-z ]{0,4}") {
        let mut src: String = AIRBAG_QUM.chars().take(cut).collect();
        src.push_str(&junk);
        src.extend(AIRBAG_QUM.chars().skip(cut + len));
        let _ = parse_native(&src);
    }

    #[test]
    fn xmi_parser_survives_truncation(cut in 0usize..AIRBAG_XMI.len()) {
        let _ = parse_xmi(&AIRBAG_XMI.as_bytes()[..cut]);
    }
}
