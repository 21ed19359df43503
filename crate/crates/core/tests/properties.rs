use adaflow::detflow::{self, InitSpec, TimeGrid};
use adaflow::prelude::*;
use proptest::prelude::*;

fn ls(omega: f64) -> RiskModel {
    RiskModel::least_squares(omega).unwrap()
}

fn spectrum() -> impl Strategy<Value = Spectrum> {
    prop_oneof![
        (0.0..0.9f64, 5..80usize).prop_map(|(b, d)| Spectrum::power_law(b, d).unwrap()),
        (2.1..6.0f64, 5..80usize).prop_map(|(s, d)| Spectrum::cond(s, d).unwrap()),
        (0.3..2.0f64, 0.05..0.3f64).prop_map(|(a, b)| Spectrum::two_point(a, b, 40).unwrap()),
    ]
}

fn init() -> impl Strategy<Value = InitSpec> {
    prop_oneof![
        (0.1..3.0f64).prop_map(InitSpec::zero_start),
        (0.0..2.0f64, 0.1..2.0f64).prop_map(|(a, b)| InitSpec::gaussian_both(a, b)),
        (0.0..1.2f64).prop_map(InitSpec::powerlaw_residual),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mode_flow_stays_psd_and_risk_stays_above_noise(
        s in spectrum(), init in init(), omega in 0.0..1.0f64,
        b in 0.2..2.0f64, eta in 0.2..3.0f64, use_line_search in any::<bool>(),
    ) {
        let rule = if use_line_search { StepsizeRule::line_search() } else { StepsizeRule::adagrad_norm(b, eta).unwrap() };
        let grid = TimeGrid::new(4.0, 1e-2, 0.2).unwrap();
        let traj = detflow::solve(&ls(omega), &s, &rule, &init, &grid).unwrap();
        for r in &traj.records {
            prop_assert!(r.d2 >= 0.0);
            prop_assert!(r.b.is_psd());
            prop_assert!(r.risk >= 0.5 * omega * omega - 1e-12);
            prop_assert!(r.gamma > 0.0);
        }
    }

    #[test]
    fn adagrad_rate_never_increases(s in spectrum(), init in init(), omega in 0.0..1.0f64, b in 0.2..2.0f64, eta in 0.2..3.0f64) {
        let grid = TimeGrid::new(3.0, 1e-2, 0.1).unwrap();
        let traj = detflow::solve(&ls(omega), &s, &StepsizeRule::adagrad_norm(b, eta).unwrap(), &init, &grid).unwrap();
        let g = traj.series(Field::Gamma);
        prop_assert!(g.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!((g[0] - eta / b).abs() < 1e-12);
    }

    #[test]
    fn volterra_agrees_with_mode_flow(s in spectrum(), init in init(), gamma_scale in 0.1..1.0f64) {
        let rule = StepsizeRule::constant(gamma_scale / s.avg_eig()).unwrap();
        let grid = TimeGrid::new(3.0, 2e-3, 0.1).unwrap();
        let ode = detflow::solve(&ls(0.0), &s, &rule, &init, &grid).unwrap();
        let vol = volterra::solve_volterra(&KernelPair::new(&s, &init, 0.0).unwrap(), &rule, &grid).unwrap();
        let scale = ode.first().risk.max(1e-12);
        prop_assert!(ode.sup_gap(&vol, Field::Risk) / scale < 1e-4);
    }

    #[test]
    fn line_search_never_loses_to_nearby_constants(s in spectrum(), init in init()) {
        // The line-search rate minimizes dR/dt, so one short step with it ends
        // no higher than the same step with a perturbed rate.
        let grid = TimeGrid::new(0.05, 1e-3, 0.05).unwrap();
        let line = detflow::solve(&ls(0.0), &s, &StepsizeRule::line_search(), &init, &grid).unwrap();
        let g0 = line.first().gamma;
        for factor in [0.8, 1.25] {
            let other = detflow::solve(&ls(0.0), &s, &StepsizeRule::constant(g0 * factor).unwrap(), &init, &grid).unwrap();
            prop_assert!(line.last().risk <= other.last().risk * (1.0 + 1e-9));
        }
    }
}
