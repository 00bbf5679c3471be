use approx::assert_relative_eq;
use proptest::prelude::*;

use pact::experiment::simulate;
use pact::{
    best_response, qos_score, service_cost, solve_first_best, solve_second_best, sp_expected_profit, total_latency,
    verify_feasibility, ContractMenu, CostCurve, CostParams, Environment, ServiceConfig, SolverOptions, TypeSet,
    Valuation,
};

fn service(d_in: f64, d_out: f64, beta: f64, satisfaction: f64, gamma: f64, liability: f64) -> ServiceConfig {
    ServiceConfig {
        id: 1,
        d_in,
        d_out,
        beta,
        n_layer: 24,
        n_ctx: 2048,
        n_attn: 16,
        satisfaction,
        gamma_gflops: gamma,
        liability,
        model_label: String::new(),
        expected_q: None,
    }
}

fn arb_service() -> impl Strategy<Value = ServiceConfig> {
    (1.0..200.0, 1.0..200.0, 0.1..10.0, 0.0..=1.0, 1_000.0..50_000.0, 0.0..1.0)
        .prop_map(|(di, dout, b, s, g, l)| service(di, dout, b, s, g, l))
}

fn arb_valuation() -> impl Strategy<Value = Valuation> {
    prop_oneof![
        (0.5..2.0).prop_map(|a| Valuation::Log { a }),
        (0.5..2.0).prop_map(|a| Valuation::Sqrt { a }),
        (0.5..2.0, 0.2..0.9).prop_map(|(a, b)| Valuation::Power { a, b }),
    ]
}

fn arb_types() -> impl Strategy<Value = TypeSet> {
    (2_usize..=5)
        .prop_flat_map(|k| {
            (
                0.5..2.0,
                prop::collection::vec(0.05..2.0, k - 1),
                prop::collection::vec(0.05..1.0, k),
            )
        })
        .prop_map(|(first, steps, weights)| {
            let mut thetas = vec![first];
            for s in steps {
                thetas.push(thetas.last().unwrap() + s);
            }
            let total: f64 = weights.iter().sum();
            let mut pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let k = pmf.len();
            pmf[k - 1] = 1.0 - pmf[..k - 1].iter().sum::<f64>();
            TypeSet::new(thetas, pmf).unwrap()
        })
}

fn arb_curve() -> impl Strategy<Value = CostCurve> {
    (0.1..3.0, 0.0..1.0, 0.0..0.2).prop_map(|(a, b, c0)| CostCurve::quadratic(a, b, c0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn latency_is_sum_of_parts(cfg in arb_service()) {
        let env = Environment::default();
        let l = total_latency(&cfg, &env).unwrap();
        prop_assert!((l.t_total - (l.t_tran + l.t_tok + l.t_inf)).abs() <= 1e-15 * l.t_total.max(1.0));
    }

    #[test]
    fn doubling_rate_halves_transmission(cfg in arb_service(), rate in 1e6..1e9) {
        let env = Environment { rate_bps: rate, ..Environment::default() };
        let fast = Environment { rate_bps: 2.0 * rate, ..env.clone() };
        let a = total_latency(&cfg, &env).unwrap();
        let b = total_latency(&cfg, &fast).unwrap();
        assert_relative_eq!(b.t_tran, a.t_tran / 2.0, max_relative = 1e-12);
        prop_assert_eq!(a.t_tok, b.t_tok);
    }

    #[test]
    fn qos_monotone_in_inputs(cfg in arb_service(), extra in 1.0..100.0, lift in 0.0..0.5_f64) {
        let env = Environment::default();
        let base = qos_score(&cfg, &env).unwrap();
        let bigger = service(cfg.d_in + extra, cfg.d_out, cfg.beta, cfg.satisfaction, cfg.gamma_gflops, 0.0);
        prop_assert!(qos_score(&bigger, &env).unwrap().q_raw < base.q_raw);
        let happier = service(cfg.d_in, cfg.d_out, cfg.beta, (cfg.satisfaction + lift).min(1.0), cfg.gamma_gflops, 0.0);
        prop_assert!(qos_score(&happier, &env).unwrap().q_raw >= base.q_raw);
        prop_assert!((0.0..=1.0).contains(&base.q));
    }

    #[test]
    fn liability_is_additive(cfg in arb_service(), extra in 0.0..5.0) {
        let env = Environment::default();
        let params = CostParams { flop_price: 1e-12, hw_fee: 0.01, model_fee: 0.02 };
        let mut more = cfg.clone();
        more.liability += extra;
        let a = service_cost(&cfg, &env, &params).unwrap();
        let b = service_cost(&more, &env, &params).unwrap();
        assert_relative_eq!(b.total - a.total, extra, epsilon = 1e-12);
        prop_assert_eq!(a.token_cost, b.token_cost);
    }

    #[test]
    fn best_response_ignores_common_scale(
        theta in 0.5..5.0,
        lambda in 0.1..10.0,
        v in arb_valuation(),
        qs in prop::collection::vec(0.0..1.0, 1..6),
        ps in prop::collection::vec(0.0..2.0, 6),
    ) {
        let n = qs.len();
        let menu = ContractMenu::from_pairs(&qs, &ps[..n]).unwrap();
        let scaled_ps: Vec<f64> = ps[..n].iter().map(|p| p * lambda).collect();
        let scaled = ContractMenu::from_pairs(&qs, &scaled_ps).unwrap();
        let (i, u) = best_response(theta, &v, &menu).unwrap();
        let (j, w) = best_response(theta * lambda, &v, &scaled).unwrap();
        assert_relative_eq!(w, lambda * u, epsilon = 1e-9, max_relative = 1e-9);
        let ui = theta * v.value(qs[j]) - ps[j];
        prop_assert!(i == j || (ui - u).abs() <= 1e-9 * (1.0 + u.abs()));
    }

    #[test]
    fn second_best_structure(types in arb_types(), v in arb_valuation(), c in arb_curve()) {
        let r = solve_second_best(&types, &v, &c, &SolverOptions::default()).unwrap();
        let rep = verify_feasibility(&r.menu, &types, &v, 1e-9).unwrap();
        prop_assert!(rep.feasible, "{:?}", rep);
        let (q, p) = (r.menu.qs(), r.menu.ps());
        prop_assert!(q.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(p.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!(r.per_type[0].user_utility.abs() <= 1e-9);
        for k in 1..types.len() {
            let theta = types.theta(k);
            let own = theta * v.value(q[k]) - p[k];
            let down = theta * v.value(q[k - 1]) - p[k - 1];
            prop_assert!((own - down).abs() <= 1e-9, "type {} own {} down {}", k, own, down);
        }
        let profit = sp_expected_profit(&r.menu, &types, &c).unwrap();
        assert_relative_eq!(profit, r.expected_profit, epsilon = 1e-12);
        assert_relative_eq!(r.social_welfare, r.expected_profit + r.expected_user_utility(), epsilon = 1e-12);
    }

    #[test]
    fn scaling_value_and_cost_scales_prices(
        types in arb_types(),
        v in arb_valuation(),
        c in arb_curve(),
        lambda in 0.2..5.0,
    ) {
        let opts = SolverOptions::default();
        let a = solve_second_best(&types, &v, &c, &opts).unwrap();
        let b = solve_second_best(&types, &v.scaled(lambda), &c.scaled(lambda), &opts).unwrap();
        for (x, y) in a.menu.items().iter().zip(b.menu.items()) {
            prop_assert!((x.q - y.q).abs() <= 1e-6, "{} vs {}", x.q, y.q);
            prop_assert!((lambda * x.p - y.p).abs() <= 1e-6 * (1.0 + y.p.abs()));
        }
        assert_relative_eq!(b.expected_profit, lambda * a.expected_profit, epsilon = 1e-8, max_relative = 1e-8);
    }

    #[test]
    fn first_best_extracts_surplus(types in arb_types(), v in arb_valuation(), c in arb_curve()) {
        let opts = SolverOptions::default();
        let fb = solve_first_best(&types, &v, &c, &opts).unwrap();
        let sb = solve_second_best(&types, &v, &c, &opts).unwrap();
        prop_assert!(fb.per_type.iter().all(|t| t.user_utility.abs() <= 1e-9));
        prop_assert!(fb.expected_profit >= sb.expected_profit - 1e-9);
        assert_relative_eq!(fb.social_welfare, fb.expected_profit, epsilon = 1e-12);
    }

    #[test]
    fn simulation_repeats_for_a_seed(types in arb_types(), v in arb_valuation(), c in arb_curve(), seed in any::<u64>()) {
        let r = solve_second_best(&types, &v, &c, &SolverOptions::default()).unwrap();
        let a = simulate(&types, &v, &c, &r.menu, 2_000, seed, 1e-9).unwrap();
        let b = simulate(&types, &v, &c, &r.menu, 2_000, seed, 1e-9).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.type_counts.iter().sum::<u64>(), 2_000);
        prop_assert_eq!(&a.type_counts, &a.selection_counts);
    }
}
