use proptest::prelude::*;
use scalefit::allocate::{solve_allocation, AllocationQuery};
use scalefit::{
    chinchilla_n_opt, effective_data, eval_chinchilla, eval_law, huber_log_objective, published, ChinchillaParams,
    LawSpec, RepetitionLaw, RunPoint, RunRecord,
};

fn base() -> impl Strategy<Value = ChinchillaParams> {
    (0.5..3.0f64, 1.0..4.0f64, 0.1..0.8f64, 1.0..5.0f64, 0.1..0.8f64).prop_map(|(e, la, alpha, lb, beta)| {
        ChinchillaParams { e, a: 10f64.powf(la), alpha, b: 10f64.powf(lb), beta }
    })
}

fn add4() -> impl Strategy<Value = RepetitionLaw> {
    (-8.0..-1.0f64, 0.2..3.0f64, 0.2..3.0f64, 0.2..2.0f64).prop_map(|(lp, delta, kappa, gamma)| {
        RepetitionLaw::AddPenalty4 { p: 10f64.powf(lp), delta, kappa, gamma }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn single_epoch_reduces_to_chinchilla(b in base(), rep in add4(), ln in 6.0..11.0f64, lu in 7.0..12.0f64) {
        let (n, u) = (10f64.powf(ln), 10f64.powf(lu));
        let got = eval_law(&LawSpec { base: b, rep }, &RunPoint::new(n, u, 1.0).unwrap()).unwrap();
        let want = eval_chinchilla(&b, n, u).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn effective_data_is_monotone_and_saturates(lu in 6.0..12.0f64, r1 in 0.0..100.0f64, dr in 0.0..100.0f64, rs in 0.5..50.0f64) {
        let u = 10f64.powf(lu);
        let (a, b) = (effective_data(u, r1, rs), effective_data(u, r1 + dr, rs));
        prop_assert!(b >= a);
        prop_assert!(a >= u);
        prop_assert!(a <= u * (1.0 + rs) * (1.0 + 1e-12));
        prop_assert!(a <= u * (1.0 + r1) * (1.0 + 1e-12));
    }

    #[test]
    fn add4_penalty_is_superlinear_in_repetitions(b in base(), rep in add4(), ln in 7.0..10.0f64, lu in 8.0..10.0f64) {
        let RepetitionLaw::AddPenalty4 { delta, .. } = rep else { unreachable!() };
        prop_assume!(delta > 1.0);
        let spec = LawSpec { base: b, rep };
        let (n, u) = (10f64.powf(ln), 10f64.powf(lu));
        let penalty = |epochs: f64| {
            let pt = RunPoint::new(n, u, epochs).unwrap();
            eval_law(&spec, &pt).unwrap() - eval_chinchilla(&b, n, u * epochs).unwrap()
        };
        // R = 2 versus R = 1: more than double the damage.
        let (p1, p2) = (penalty(2.0), penalty(3.0));
        prop_assume!(p1 > 1e-12);
        prop_assert!(p2 > 2.0 * p1 * (1.0 - 1e-9));
    }

    #[test]
    fn chinchilla_decreases_in_size_and_data(b in base(), ln in 6.0..11.0f64, ld in 7.0..12.0f64, k in 1.01..10.0f64) {
        let (n, d) = (10f64.powf(ln), 10f64.powf(ld));
        let l = eval_chinchilla(&b, n, d).unwrap();
        prop_assert!(eval_chinchilla(&b, n * k, d).unwrap() < l);
        prop_assert!(eval_chinchilla(&b, n, d * k).unwrap() < l);
        prop_assert!(l > b.e);
    }

    #[test]
    fn n_opt_satisfies_first_order_condition(b in base(), lu in 7.0..12.0f64) {
        let u = 10f64.powf(lu);
        let n = chinchilla_n_opt(&b, u);
        let lhs = b.alpha * b.a * n.powf(-b.alpha);
        let rhs = b.beta * b.b * u.powf(-b.beta);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn objective_ignores_record_order(seed in 0u64..1000, rotate in 0usize..56) {
        let spec = LawSpec::chinchilla(published::STD_BASE);
        let mut runs: Vec<RunRecord> = scalefit::generate_synthetic(&scalefit::SyntheticSpec {
            generating_law: spec,
            grid: scalefit::GridPreset::StdSingle.points(),
            noise_sigma: 0.02,
            seed,
        }).unwrap().records;
        let a = huber_log_objective(&spec, &runs, 1e-3).unwrap();
        runs.rotate_left(rotate);
        runs.reverse();
        let b = huber_log_objective(&spec, &runs, 1e-3).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a);
    }

    #[test]
    fn allocation_ignores_candidate_order(lc in 17.0..21.0f64, lu in 8.0..9.5f64, swaps in prop::collection::vec((0usize..64, 0usize..64), 0..20)) {
        let spec = published::std_add4();
        let q = AllocationQuery::new(10f64.powf(lc), 10f64.powf(lu));
        let mut shuffled = q.clone();
        for (i, j) in swaps {
            shuffled.epoch_candidates.swap(i, j);
        }
        prop_assert_eq!(solve_allocation(&spec, &q).unwrap(), solve_allocation(&spec, &shuffled).unwrap());
    }
}
