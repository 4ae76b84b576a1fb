//! temporary calibration probe (not part of the suite)

use skwave::harness::catalog::{build_coefficients, build_space, default_initial_field};
use skwave::harness::config::RunConfig;
use skwave::harness::sweep::{error_metrics, GridPlan};
use skwave::noise::{compose, NoisePath};
use skwave::parabolic::simulate_limit;

#[test]
#[ignore]
fn probe_pure_drift_effect() {
    let cfg = RunConfig::default();
    let space = build_space(&cfg).unwrap();
    let coeffs = build_coefficients(&space, &cfg).unwrap();
    for divisor in [8usize, 32] {
        let mut c = cfg.clone();
        c.apply("limit_dt_divisor", &divisor.to_string()).unwrap();
        let plan = GridPlan::build(&c, space.eigenvalue(space.n_modes() - 1)).unwrap();
        for rep in 0..4u64 {
            let path = NoisePath::new(
                compose(c.seed, rep),
                plan.base_dt,
                c.horizon,
                2,
                space.n_modes(),
            )
            .unwrap();
            let u0 = default_initial_field(&space);
            let with = simulate_limit(&coeffs, &plan.limit_config(&c, true), &path, &u0).unwrap();
            let without =
                simulate_limit(&coeffs, &plan.limit_config(&c, false), &path, &u0).unwrap();
            let (sup, int) = error_metrics(
                &with.snapshots,
                &without.snapshots,
                &with.times,
                c.rho,
                c.vartheta,
                c.p_exp,
            )
            .unwrap();
            println!(
                "divisor {divisor} replica {rep}: D_sup = {sup:.5e}, D_int = {int:.5e}, D_total = {:.5e}",
                sup + int
            );
        }
    }
}
