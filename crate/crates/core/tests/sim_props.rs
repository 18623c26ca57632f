use std::sync::Arc;

use proptest::prelude::*;

use robust_contract::principal::{extract_contract, solve_hjbi, ContractPolicy};
use robust_contract::sim::{incentive_compatibility_check, simulate_system, IcOptions};
use robust_contract::{presets, GridSpec, Interval, Nature, NatureStrategy, SimConfig};

fn grid() -> GridSpec {
    GridSpec::principal(1.0, 8, 11, 11, 3.0, 5.0).with_controls(11, 3, 11, 11)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identical_config_is_bit_identical(
        seed in any::<u64>(), paths in 1usize..700, x0 in -1.0..1.0f64, z in 0.0..1.5f64, girsanov in any::<bool>(),
    ) {
        let m = presets::risk_neutral(1.0, Interval::new(0.5, 1.0).unwrap(), 3.0);
        let pol = ContractPolicy::constant(0.1, z, 0.2, 0.7, 0.0);
        let cfg = SimConfig { paths, dt: 0.125, horizon: 1.0, seed, x0, girsanov_mode: girsanov };
        let a = simulate_system(&m, &grid(), &pol, &Nature::Feedback, &cfg).unwrap();
        let b = simulate_system(&m, &grid(), &pol, &Nature::Feedback, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn discount_factor_stays_in_band(rate in -1.0..1.0f64, horizon in 0.25..2.0f64, n in 0.2..0.6f64) {
        let m = presets::martingale(Interval::new(0.2, 0.6).unwrap(), rate, 3.0);
        let g = GridSpec::principal(horizon, 8, 11, 11, 3.0, 5.0).with_controls(3, 3, 3, 3);
        let pol = ContractPolicy::constant(0.0, 0.5, 0.0, n, 0.0);
        let cfg = SimConfig { paths: 64, dt: horizon / 8.0, horizon, seed: 3, x0: 0.0, girsanov_mode: false };
        let nature = Nature::Elementary(NatureStrategy::constant(n));
        let r = simulate_system(&m, &g, &pol, &nature, &cfg).unwrap();
        let kappa = rate.abs();
        let (lo, hi) = r.discount_range;
        let slack = 1e-12;
        prop_assert!((-kappa * horizon).exp() * (1.0 - slack) <= lo && lo <= hi);
        prop_assert!(hi <= (kappa * horizon).exp() * (1.0 + slack));
    }
}

#[test]
fn zero_perturbation_matches_baseline() {
    let m = presets::risk_neutral(1.0, Interval::new(0.5, 1.0).unwrap(), 3.0);
    let pol = ContractPolicy::constant(0.0, 0.8, 0.0, 0.5, 0.0);
    let cfg = SimConfig { paths: 500, dt: 0.125, horizon: 1.0, seed: 5, x0: 0.0, girsanov_mode: false };
    let opts = IcOptions { amplitude: (0.0, 0.0), vol_candidates: vec![0.5, 1.0], bias_budget: 0.0, baseline_shift: 0.0, seed: 9 };
    let rep = incentive_compatibility_check(&m, &grid(), &pol, &cfg, 4, &opts).unwrap();
    assert!(rep.all_pass);
    assert_eq!(rep.strictly_lower, 0);
    for e in &rep.entries {
        assert_eq!(e.value, rep.unperturbed.0);
    }
}

#[test]
fn simulated_agent_value_closes_on_y0() {
    let m = presets::risk_neutral(1.0, Interval::new(0.5, 1.0).unwrap(), 3.0);
    let sol = solve_hjbi(&m, &grid()).unwrap();
    let y0 = 0.2;
    let pol = extract_contract(Arc::new(sol), y0).unwrap();
    let cfg = SimConfig { paths: 4000, dt: 0.125, horizon: 1.0, seed: 21, x0: 0.0, girsanov_mode: false };
    for nature in [Nature::Feedback, Nature::Elementary(NatureStrategy::constant(1.0))] {
        let r = simulate_system(&m, &grid(), &pol, &nature, &cfg).unwrap();
        let (mean, ci) = r.agent_estimate;
        assert!((mean - y0).abs() <= 3.0 * ci + 1e-9, "{mean} ± {ci}");
        let (lo, hi) = r.discount_range;
        assert_eq!((lo, hi), (1.0, 1.0));
    }
}
