mod common;

use halolab::bench::{init_block, run_once, InitialCondition, RunConfig};
use halolab::exchange::{build_plan, ExchangeStrategy, Exchanger};
use halolab::grid::{decompose, Block, GridConfig};
use halolab::metrics::PhaseTimes;
use halolab::runtime::{spawn_ranks, IntranodePath, RuntimeConfig, Scheduling};
use halolab::solver::PhysicsSystem;
use parking_lot::Mutex;
use proptest::prelude::*;

fn strategy() -> impl Strategy<Value = ExchangeStrategy> {
    prop_oneof![Just(ExchangeStrategy::Fused), Just(ExchangeStrategy::SplitOverlap)]
}

fn scheduling() -> impl Strategy<Value = Scheduling> {
    prop_oneof![
        Just(Scheduling::StaticBlocked),
        (1usize..4).prop_map(|chunk| Scheduling::Dynamic { chunk })
    ]
}

fn path() -> impl Strategy<Value = IntranodePath> {
    prop_oneof![Just(IntranodePath::SharedHandoff), Just(IntranodePath::CopyThrough)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ghosts_match_periodic_neighbours(
        (b, per_axis) in (2usize..7, 1usize..5),
        ranks in 1usize..6,
        threads in 1usize..4,
        s in strategy(),
        sch in scheduling(),
        p in path(),
        nvar in prop_oneof![Just(1usize), Just(5usize)],
    ) {
        let grid = GridConfig::cube(b * per_axis, b).unwrap();
        let ranks = ranks.min(grid.nblocks());
        prop_assert_eq!(common::ghost_errors(&grid, nvar, ranks, threads, s, sch, p), 0);
    }
}

/// Exchanged blocks (ghosts included) after one exchange of hashed data.
fn exchanged(grid: &GridConfig, ranks: usize, threads: usize, s: ExchangeStrategy, seed: u64, times: usize) -> Vec<Vec<f64>> {
    let decomp = decompose(grid, ranks).unwrap();
    let system = PhysicsSystem::Euler { gamma: 1.4 };
    let init = InitialCondition::Random { seed };
    let per_rank = spawn_ranks(RuntimeConfig::new(ranks, threads), |ctx| {
        let blocks: Vec<Mutex<Block>> = decomp
            .blocks_of(ctx.rank())
            .iter()
            .map(|&id| {
                let mut b = Block::new(id, ctx.rank(), 5, grid.block());
                init_block(&mut b, &init, &system, grid);
                Mutex::new(b)
            })
            .collect();
        let mut ex = Exchanger::new(build_plan(&decomp, ctx.rank())?, s, Scheduling::dynamic());
        for _ in 0..times {
            ex.exchange(ctx, &blocks, &mut PhaseTimes::default())?;
        }
        Ok(blocks.into_iter().map(|b| b.into_inner().data).collect::<Vec<_>>())
    })
    .unwrap();
    per_rank.into_iter().flatten().collect()
}

#[test]
fn fused_and_split_agree_on_random_data() {
    let grid = GridConfig::cube(16, 4).unwrap();
    for seed in 0..10 {
        let a = exchanged(&grid, 2, 4, ExchangeStrategy::Fused, seed, 1);
        let b = exchanged(&grid, 2, 4, ExchangeStrategy::SplitOverlap, seed, 1);
        assert_eq!(a.len(), 64);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()), "seed {seed}");
        }
        let mut c = RunConfig::new(grid.clone(), PhysicsSystem::Euler { gamma: 1.4 }).with_layout(2, 4);
        c.init = InitialCondition::Random { seed };
        c.steps = 3;
        let fused = run_once(&c, 0).unwrap().metrics.state_hash;
        c.strategy = ExchangeStrategy::SplitOverlap;
        assert_eq!(run_once(&c, 0).unwrap().metrics.state_hash, fused, "seed {seed}");
    }
}

#[test]
fn exchange_is_idempotent() {
    let grid = GridConfig::cube(12, 4).unwrap();
    for s in [ExchangeStrategy::Fused, ExchangeStrategy::SplitOverlap] {
        assert_eq!(exchanged(&grid, 3, 2, s, 4, 1), exchanged(&grid, 3, 2, s, 4, 2));
    }
}

#[test]
fn copy_through_counts_two_copies_per_remote_message() {
    let grid = GridConfig::cube(8, 4).unwrap();
    let decomp = decompose(&grid, 2).unwrap();
    let remote: usize = (0..2).map(|r| build_plan(&decomp, r).unwrap().remote_sends.len()).sum();
    let (_, transport) = halolab::runtime::spawn_ranks_with_transport(
        RuntimeConfig::new(2, 1).with_path(IntranodePath::CopyThrough),
        |ctx| {
            let blocks: Vec<Mutex<Block>> = decomp
                .blocks_of(ctx.rank())
                .iter()
                .map(|&id| Mutex::new(Block::new(id, ctx.rank(), 1, 4)))
                .collect();
            let mut ex = Exchanger::new(build_plan(&decomp, ctx.rank())?, ExchangeStrategy::Fused, Scheduling::StaticBlocked);
            ex.exchange(ctx, &blocks, &mut PhaseTimes::default())?;
            Ok(())
        },
    )
    .unwrap();
    assert!(remote > 0);
    assert_eq!(transport.stats().copies(), 2 * remote as u64);
}
