mod common;

use blockprox::blockspace::{
    block_max_norm, euclidean_norm, inner_product, BlockPartition, BlockVector,
};
use blockprox::engine::{run_general, run_jacobi, write_trace_csv, RunConfig};
use blockprox::operators::{check_h3, Claims, FnOperator, UniformPairSampler};
use blockprox::schedule::{validate_schedule, Schedule, ScheduleKind};
use common::fixture;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn partition_and_vectors() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>)> {
    prop::collection::vec(1usize..4, 1..5).prop_flat_map(|sizes| {
        let n: usize = sizes.iter().sum();
        (
            Just(sizes),
            prop::collection::vec(-1e3f64..1e3, n),
            prop::collection::vec(-1e3f64..1e3, n),
        )
    })
}

proptest! {
    #[test]
    fn norms_are_compatible((sizes, x, _) in partition_and_vectors()) {
        let p = BlockPartition::new(&sizes).unwrap();
        let alpha = p.alpha() as f64;
        let x = BlockVector::new(p, x).unwrap();
        let (m, e) = (block_max_norm(&x), euclidean_norm(&x));
        prop_assert!(m <= e * (1.0 + 1e-12));
        prop_assert!(e <= alpha.sqrt() * m * (1.0 + 1e-12) + 1e-300);
        let ip = inner_product(&x, &x).unwrap();
        prop_assert!((ip - e * e).abs() <= 1e-9 * ip.max(1.0));
    }

    #[test]
    fn inner_product_is_symmetric((sizes, x, y) in partition_and_vectors()) {
        let p = BlockPartition::new(&sizes).unwrap();
        let x = BlockVector::new(p.clone(), x).unwrap();
        let y = BlockVector::new(p, y).unwrap();
        prop_assert_eq!(inner_product(&x, &y).unwrap(), inner_product(&y, &x).unwrap());
    }

    #[test]
    fn jacobi_schedule_always_validates(alpha in 1usize..8, horizon in 1usize..60, window in 1usize..10) {
        let s = Schedule::build(&ScheduleKind::Jacobi, alpha, horizon).unwrap();
        prop_assert!(validate_schedule(&s, window).all_passed());
    }

    #[test]
    fn periodic_full_gap_equals_period(alpha in 2usize..6, period in 1usize..8, extra in 0usize..30) {
        let horizon = 2 * period + extra;
        let kind = ScheduleKind::PeriodicFull { period, base: (0..alpha).map(|i| vec![i]).collect() };
        let s = Schedule::build(&kind, alpha, horizon).unwrap();
        let r = validate_schedule(&s, period.max(alpha));
        prop_assert!(r.h0_satisfied);
        prop_assert_eq!(r.h0_gap, Some(period));
    }

    #[test]
    fn passing_h3_means_euclidean_nonexpansive(m in prop::array::uniform4(-1.2f64..1.2), seed in 0u64..1000) {
        let p = BlockPartition::new(&[1, 1]).unwrap();
        let apply = move |x: &[f64]| vec![m[0] * x[0] + m[1] * x[1], m[2] * x[0] + m[3] * x[1]];
        let f = FnOperator::new(p.clone(), Claims { h2: false, h3: false }, move |x: &[f64]| Ok(apply(x)));
        let report = check_h3(&f, &mut UniformPairSampler::new(seed), 200, 1e-10).unwrap();
        if report.passed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            for _ in 0..200 {
                let d: Vec<f64> = (0..2).map(|_| rng.gen_range(-10.0..10.0)).collect();
                let fd = apply(&d);
                let (nd, nfd) = (d[0].hypot(d[1]), fd[0].hypot(fd[1]));
                prop_assert!(nfd <= nd * (1.0 + 1e-6), "{:?} expands {:?}", m, d);
            }
        }
    }
}

fn csv(r: &blockprox::RunResult) -> Vec<u8> {
    let mut out = Vec::new();
    write_trace_csv(r, &mut out).unwrap();
    out
}

#[test]
fn blockwise_operator_is_deterministic_across_workers() {
    let spec = fixture("separable_prox");
    let op = spec.build_operator().unwrap();
    assert!(op.blockwise());
    let runs: Vec<_> = [1, 2, 3, 8]
        .iter()
        .map(|&w| run_jacobi(op.as_ref(), &spec.x0(), &spec.run_config().with_workers(w)).unwrap())
        .collect();
    for r in &runs[1..] {
        assert_eq!(csv(r), csv(&runs[0]));
        assert_eq!(r.final_point, runs[0].final_point);
    }
}

#[test]
fn general_jacobi_matches_run_jacobi_on_every_family() {
    for name in common::FAMILY_FIXTURES {
        let spec = fixture(name);
        let op = spec.build_operator().unwrap();
        let cfg = RunConfig::new(1e-9, 300);
        let sched = Schedule::build(&ScheduleKind::Jacobi, spec.partition().alpha(), 300).unwrap();
        let a = run_jacobi(op.as_ref(), &spec.x0(), &cfg).unwrap();
        let b = run_general(op.as_ref(), &sched, &spec.x0(), &cfg).unwrap();
        assert_eq!(csv(&a), csv(&b), "{name}");
        assert_eq!(a.final_point, b.final_point, "{name}");
    }
}
