mod common;

use common::{random_scenario, ScenarioShape};
use mobility_core::market::{evaluate_outcome, MONEY_TOL};
use mobility_core::mechanism::{
    run_market, verify_incentive_compatibility, verify_individual_rationality,
    verify_weak_budget_balance, MisreportGrid,
};
use mobility_core::network::{Traveler, TravelerId};
use mobility_core::{solve_all, PaymentRule, Scenario};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SHAPE: ScenarioShape = ScenarioShape {
    max_travelers: 5,
    max_services: 3,
    roomy: false,
    equity: false,
    unit_weights: false,
};

fn relabeled(scenario: &Scenario) -> Scenario {
    let n = scenario.traveler_count() as u32;
    let travelers: Vec<Traveler> = scenario
        .travelers()
        .iter()
        .map(|t| Traveler {
            id: TravelerId(n + 1 - t.id.0),
            ..t.clone()
        })
        .collect();
    Scenario::new(
        scenario.network().clone(),
        scenario.services().to_vec(),
        travelers,
        scenario.planner().clone(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outcome_accounting_balances(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = random_scenario(&mut rng, &SHAPE);
        for run in run_market(&scenario, scenario.planner(), PaymentRule::FLOORED).unwrap() {
            let Some(priced) = run.payments else { continue };
            let o = &priced.outcome;
            let config = scenario.planner();
            let phi: f64 = o.travelers.iter().map(|t| t.inconvenience).sum();
            let r: f64 = o.travelers.iter().map(|t| t.cost_share).sum();
            let service_total: f64 = o.service_costs.iter().map(|c| c.cost).sum();
            prop_assert!((service_total - r).abs() <= MONEY_TOL);
            prop_assert!((o.objective - (config.omega1 * phi + config.omega2 * r)).abs() <= MONEY_TOL);
            let v: f64 = o.travelers.iter().map(|t| t.valuation).sum();
            prop_assert!((o.welfare - (v - service_total)).abs() <= MONEY_TOL);
            for t in &o.travelers {
                let v_bar = scenario.traveler(t.traveler).unwrap().max_willingness_to_pay;
                prop_assert!(t.inconvenience >= 0.0 && t.inconvenience <= v_bar);
                prop_assert!((t.utility - (t.valuation - t.payment)).abs() <= MONEY_TOL);
                prop_assert!(t.payment >= t.cost_share - MONEY_TOL);
            }
            let again = evaluate_outcome(&o.assignment, &priced.payments, &scenario, config).unwrap();
            prop_assert_eq!(&again, o);
        }
    }

    #[test]
    fn relabeling_travelers_keeps_the_optimum(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = random_scenario(&mut rng, &SHAPE);
        let total = |s: &Scenario| -> Option<f64> {
            solve_all(s, s.planner()).unwrap().iter().map(|r| r.objective).sum()
        };
        let a = total(&scenario).unwrap();
        let b = total(&relabeled(&scenario)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
    }
}

#[test]
fn unconstrained_clarke_payments_are_truthful_and_rational() {
    let shape = ScenarioShape {
        max_travelers: 3,
        roomy: true,
        unit_weights: true,
        ..SHAPE
    };
    let grid = MisreportGrid::default();
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = random_scenario(&mut rng, &shape);
        let config = scenario.planner().clone();
        let ic = verify_incentive_compatibility(&scenario, &config, PaymentRule::CLARKE, &grid, seed).unwrap();
        assert!(ic.holds(), "seed {seed}: {:?}", ic.witnesses.first());
        assert!(ic.instances_tested >= grid.len());
        let ir = verify_individual_rationality(&scenario, &config, PaymentRule::CLARKE).unwrap();
        assert!(ir.holds(), "seed {seed}: {:?}", ir.witnesses);
    }
}

#[test]
fn floored_payments_are_weakly_budget_balanced() {
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = random_scenario(&mut rng, &ScenarioShape { equity: true, ..SHAPE });
        let report = verify_weak_budget_balance(&scenario, scenario.planner(), PaymentRule::FLOORED).unwrap();
        assert!(report.holds(), "seed {seed}");
        assert!(report.aggregate_surplus.unwrap() >= -MONEY_TOL);
    }
}

#[test]
fn scenario_json_round_trips() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = random_scenario(&mut rng, &SHAPE);
        let back = Scenario::from_json(&scenario.to_json()).unwrap();
        assert_eq!(back, scenario);
    }
}
