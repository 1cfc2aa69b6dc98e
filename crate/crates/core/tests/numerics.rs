mod common;

use halolab::bench::{run_once, InitialCondition, RunConfig};
use halolab::exchange::ExchangeStrategy;
use halolab::grid::GridConfig;
use halolab::runtime::{IntranodePath, Scheduling};
use halolab::solver::{PhysicsSystem, Reconstruction, SolverConfig};
use proptest::prelude::*;

#[test]
fn exact_riemann_star_state() {
    // Star region of the Sod problem as tabulated in Riemann solver texts.
    let sod = common::ExactRiemann::new((1.0, 0.0, 1.0), (0.125, 0.0, 0.1), 1.4);
    let (p, u) = sod.star_state();
    assert!((p - 0.30313).abs() < 1e-5, "{p}");
    assert!((u - 0.92745).abs() < 1e-5, "{u}");
    assert_eq!(sod.sample(-10.0), (1.0, 0.0, 1.0));
    assert_eq!(sod.sample(10.0), (0.125, 0.0, 0.1));
    let (rho_l, _, _) = sod.sample(0.5);
    let (rho_r, _, _) = sod.sample(1.2);
    assert!((rho_l - 0.42632).abs() < 1e-4, "{rho_l}");
    assert!((rho_r - 0.26557).abs() < 1e-4, "{rho_r}");
}

#[test]
fn sod_density_close_to_exact() {
    let l1 = common::sod_l1(64, 1, 1);
    assert!(l1 <= 0.02, "L1 {l1}");
    assert_eq!(common::sod_l1(64, 4, 2), l1);
}

fn crossing_error(n: usize, reconstruction: Reconstruction) -> f64 {
    let b = 4;
    let e = b as f64 / n as f64;
    let grid = GridConfig::new([n, b, b], b, [1.0, e, e]).unwrap();
    let mut c = RunConfig::new(grid, PhysicsSystem::Advection { velocity: [1.0, 0.0, 0.0] }).with_layout(2, 1);
    c.solver = SolverConfig { reconstruction, ..SolverConfig::default() };
    c.init = InitialCondition::Sine { wavenumber: [1, 0, 0] };
    c.t_end = Some(1.0);
    c.collect_field = true;
    let f = run_once(&c, 0).unwrap().field.unwrap();
    let dx = 1.0 / n as f64;
    let err: f64 = (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) * dx;
            (f.get(0, i, 1, 2) - (1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin())).abs()
        })
        .sum();
    err / n as f64
}

#[test]
fn plm_error_shrinks_like_dx_squared() {
    let ns = [32, 64, 128, 256];
    let errs: Vec<f64> = ns.iter().map(|&n| crossing_error(n, Reconstruction::PlmMinmod)).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    // Minmod clips smooth extrema, so the observed order climbs towards 2.
    assert!(orders.windows(2).all(|w| w[1] > w[0]), "{orders:?}");
    assert!(orders[2] >= 1.8, "{orders:?}");
    for (&n, &e) in ns.iter().zip(&errs) {
        assert!(e * (n * n) as f64 <= 64.0, "n={n} L1={e}");
    }
}

#[test]
fn first_order_error_shrinks_like_dx() {
    let e1 = crossing_error(128, Reconstruction::FirstOrder);
    let e2 = crossing_error(256, Reconstruction::FirstOrder);
    assert!((e1 / e2).log2() >= 0.8);
    assert!(crossing_error(128, Reconstruction::PlmMinmod) < e1);
}

#[test]
fn zero_length_integration_is_a_no_op() {
    let mut c = RunConfig::new(GridConfig::cube(8, 4).unwrap(), PhysicsSystem::Euler { gamma: 1.4 });
    c.init = InitialCondition::Random { seed: 1 };
    c.t_end = Some(0.0);
    let r = run_once(&c, 0).unwrap();
    assert_eq!(r.metrics.steps, 0);
    assert_eq!(r.metrics.state_hash, r.initial_hash);
}

#[test]
fn uniform_state_is_stationary() {
    for system in [PhysicsSystem::Euler { gamma: 1.4 }, PhysicsSystem::Advection { velocity: [0.3, -0.7, 1.0] }] {
        let mut c = RunConfig::new(GridConfig::cube(8, 4).unwrap(), system).with_layout(2, 2);
        c.init = InitialCondition::Uniform;
        c.steps = 3;
        let r = run_once(&c, 0).unwrap();
        assert_eq!(r.metrics.state_hash, r.initial_hash, "{system:?}");
    }
}

fn layout() -> impl Strategy<Value = (usize, usize, ExchangeStrategy, Scheduling, IntranodePath)> {
    (
        1usize..9,
        1usize..5,
        prop_oneof![Just(ExchangeStrategy::Fused), Just(ExchangeStrategy::SplitOverlap)],
        prop_oneof![Just(Scheduling::StaticBlocked), (1usize..4).prop_map(|chunk| Scheduling::Dynamic { chunk })],
        prop_oneof![Just(IntranodePath::SharedHandoff), Just(IntranodePath::CopyThrough)],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn decomposition_invariance((r, t, s, sch, p) in layout(), seed in 0u64..1000, euler in any::<bool>()) {
        let system = if euler { PhysicsSystem::Euler { gamma: 1.4 } } else { PhysicsSystem::Advection { velocity: [0.6, -0.3, 0.2] } };
        let mut c = RunConfig::new(GridConfig::cube(12, 4).unwrap(), system);
        c.init = InitialCondition::Random { seed };
        c.steps = 2;
        let reference = run_once(&c, 0).unwrap().metrics.state_hash;
        let other = run_once(&c.clone().with_layout(r, t).with_engine(s, sch, p), 0).unwrap().metrics.state_hash;
        prop_assert_eq!(reference, other);
    }

    #[test]
    fn conservation(seed in 0u64..1000, vx in -1.0f64..1.0, vy in -1.0f64..1.0, euler in any::<bool>()) {
        let (system, vars): (_, &[usize]) = if euler {
            (PhysicsSystem::Euler { gamma: 1.4 }, &[0, 4])
        } else {
            (PhysicsSystem::Advection { velocity: [vx, vy, 0.25] }, &[0])
        };
        let mut c = RunConfig::new(GridConfig::cube(8, 4).unwrap(), system).with_layout(2, 2);
        c.init = InitialCondition::Random { seed };
        c.collect_field = true;
        c.steps = 0;
        let before = run_once(&c, 0).unwrap().field.unwrap();
        c.steps = 3;
        let after = run_once(&c, 0).unwrap().field.unwrap();
        for &v in vars {
            let drift = ((after.total(v) - before.total(v)) / before.total(v)).abs() / 3.0;
            prop_assert!(drift <= 1e-12, "var {} drift {}", v, drift);
        }
    }
}
