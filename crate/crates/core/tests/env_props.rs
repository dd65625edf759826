use impalloc_core::marlenv::{AllocationEnv, MarkovGame};
use impalloc_core::oracle::solve_dual;
use impalloc_core::scenario::{generate_scenario, GenSpec, Scenario};
use proptest::prelude::*;

fn desk(m: usize, t: u32, seed: u64) -> Scenario {
    let spec = GenSpec {
        contracts: m,
        impressions: 400,
        horizon: t,
        ..GenSpec::default()
    };
    generate_scenario(&spec, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn returns_plus_offset_equal_final_yield(
        m in 1usize..5,
        t in 1u32..8,
        seed in any::<u64>(),
        actions in prop::collection::vec(-0.3f64..0.3, 40),
    ) {
        let s = desk(m, t, seed);
        let mut env = AllocationEnv::new(&s, s.alpha_init(), 1.0);
        env.reset();
        let mut total = 0.0;
        let mut k = 0;
        loop {
            let a: Vec<f64> = (0..m).map(|j| actions[(k + j) % actions.len()]).collect();
            k += 1;
            for (alpha, c) in env.alphas().iter().zip(&s.contracts) {
                prop_assert!((0.0..=c.penalty).contains(alpha));
            }
            let r = env.step(&a).unwrap();
            total += r.reward;
            if r.done {
                break;
            }
        }
        let y = env.report().total;
        prop_assert!((total + env.return_offset() - y).abs() <= 1e-9 * y.abs().max(1.0));
    }
}

#[test]
fn zero_actions_at_oracle_alpha_reach_oracle_yield() {
    let s = desk(3, 6, 9);
    let d = solve_dual(&s, 1e-9, 5000);
    let mut env = AllocationEnv::new(&s, d.alpha.clone(), d.upper_bound);
    env.reset();
    while !env.step(&[0.0; 3]).unwrap().done {}
    assert!((env.report().total - d.primal_yield).abs() < 1e-9 * d.primal_yield.abs());
}
