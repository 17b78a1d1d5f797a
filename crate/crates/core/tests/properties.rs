use claimscore::bms::{matrix_power, next_level, transition_matrix, BmsConfig, BmsLevel};
use claimscore::dist::{CountFamily, Dispersion, MeanParam, NbbShape};
use claimscore::estimate::RegressionSpec;
use claimscore::hf::{hf_loglik, hf_premium, HfParams, HfWeight};
use claimscore::panel::{
    mvnb_joint_loglik, mvnb_loglik, mvnb_premium, nbbeta_joint_loglik, nbbeta_loglik, MixingLaw, MvnbParams,
    PolicyHistory,
};
use claimscore::portfolio::{simulate, split, SimulationSpec, TrueModel};
use proptest::prelude::*;

fn history() -> impl Strategy<Value = (Vec<u64>, Vec<f64>)> {
    prop::collection::vec((0u64..4, 0.01f64..1.5), 1..7).prop_map(|v| v.into_iter().unzip())
}

fn bms_config() -> impl Strategy<Value = BmsConfig<f64>> {
    (2u32..12)
        .prop_flat_map(|s| (Just(s), 1..=s, 1..=s, 0.0f64..0.5))
        .prop_map(|(s, psi, entry, delta)| BmsConfig::new(psi, s, entry, delta).unwrap())
}

fn family() -> impl Strategy<Value = CountFamily<f64>> {
    prop_oneof![
        Just(CountFamily::Poisson),
        (0.01f64..3.0).prop_map(|t| CountFamily::nb1(Dispersion::new(t).unwrap())),
        (0.01f64..3.0).prop_map(|t| CountFamily::nb2(Dispersion::new(t).unwrap())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn next_level_stays_on_scale_and_grows_with_claims(cfg in bms_config(), l in 1u32..12, n in 0u64..20) {
        let l = BmsLevel::new(l.min(cfg.s()), &cfg).unwrap();
        let a = next_level(l, n, &cfg).get();
        let b = next_level(l, n + 1, &cfg).get();
        prop_assert!((1..=cfg.s()).contains(&a));
        prop_assert!(a <= b);
    }

    #[test]
    fn transition_rows_are_stochastic_and_compose(cfg in bms_config(), fam in family(), lam in 1e-4f64..10.0,
                                                  a in 0u32..6, b in 0u32..6) {
        let p = transition_matrix(MeanParam::new(lam).unwrap(), &cfg, fam).unwrap();
        for s in p.row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
        }
        let lhs = matrix_power(&p, a + b);
        let rhs = matrix_power(&p, a).matrix().mul(matrix_power(&p, b).matrix());
        prop_assert!(lhs.matrix().max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn sequential_panel_logliks_match_closed_forms((n, lam) in history(), kappa in 0.2f64..20.0,
                                                     a in 2.1f64..40.0, b in 0.1f64..10.0) {
        let h = PolicyHistory::from_raw(&n, &lam).unwrap();
        let k = MvnbParams::new(kappa).unwrap();
        let seq = mvnb_loglik(&h, k);
        let closed = mvnb_joint_loglik(&h, k.initial_state());
        prop_assert!((seq - closed).abs() < 1e-9 * closed.abs().max(1.0));
        let shape = NbbShape::new(a, b).unwrap();
        let seq = nbbeta_loglik(&h, shape);
        let closed = nbbeta_joint_loglik(&h, shape.into());
        prop_assert!((seq - closed).abs() < 1e-9 * closed.abs().max(1.0));
    }

    #[test]
    fn unit_weight_hf_is_the_static_panel((n, lam) in history(), kappa in 0.2f64..20.0) {
        let h = PolicyHistory::from_raw(&n, &lam).unwrap();
        let k = MvnbParams::new(kappa).unwrap();
        let hf = hf_loglik(MixingLaw::Gamma, &h, k.initial_state(), HfWeight::one());
        prop_assert!((hf - mvnb_loglik(&h, k)).abs() < 1e-12);
    }

    #[test]
    fn premiums_rise_with_a_claim((n, lam) in history(), kappa in 0.2f64..20.0, nu in 0.3f64..1.0) {
        let h0 = PolicyHistory::from_raw(&n, &lam).unwrap();
        let mut more = n.clone();
        *more.last_mut().unwrap() += 1;
        let h1 = PolicyHistory::from_raw(&more, &lam).unwrap();
        let k = MvnbParams::new(kappa).unwrap();
        let next = MeanParam::new(0.1).unwrap();
        prop_assert!(mvnb_premium(&h1, k, next) > mvnb_premium(&h0, k, next));
        let p = HfParams::Mvnb(k);
        let w = HfWeight::new(nu).unwrap();
        prop_assert!(hf_premium(&h1, p, w, next).unwrap() > hf_premium(&h0, p, w, next).unwrap());
    }

    #[test]
    fn split_partitions_the_portfolio(m in 0usize..60, fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let beta = RegressionSpec::intercept(-1.0);
        let data = simulate(&SimulationSpec::new(TrueModel::Poisson, beta, m, 3)).unwrap().dataset;
        let (fit, val) = split(&data, fraction, seed).unwrap();
        prop_assert_eq!(fit.len() + val.len(), m);
        prop_assert_eq!(fit.len(), (fraction * m as f64).round() as usize);
        let mut ids: Vec<_> = fit.policyholders.iter().chain(&val.policyholders).map(|h| h.id.clone()).collect();
        ids.sort();
        let mut all: Vec<_> = data.policyholders.iter().map(|h| h.id.clone()).collect();
        all.sort();
        prop_assert_eq!(ids, all);
    }
}
