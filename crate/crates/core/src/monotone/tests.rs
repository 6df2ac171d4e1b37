use super::*;
use crate::operators::{check_h3, UniformPairSampler};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_row_iterator(n, m, rows.iter().flat_map(|r| r.iter().copied()))
}

fn vecd(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// min x² s.t. 1 - x <= 0
fn tiny_qp() -> MonotoneProblem {
    MonotoneProblem::convex_program_qp(QuadraticData {
        p: mat(&[&[2.0]]),
        q: vecd(&[0.0]),
        a: mat(&[&[-1.0]]),
        b: vecd(&[1.0]),
    })
    .unwrap()
}

/// L(x, y) = x²/2 + xy - y²/2
fn pure_saddle() -> MonotoneProblem {
    MonotoneProblem::saddle_quadratic(
        QuadraticData {
            p: mat(&[&[1.0]]),
            q: vecd(&[0.0]),
            a: mat(&[&[1.0]]),
            b: vecd(&[0.0]),
        },
        mat(&[&[1.0]]),
    )
    .unwrap()
}

/// A(x) = x - 1 on [lo, hi]
fn scalar_vi(lo: f64, hi: f64) -> MonotoneProblem {
    MonotoneProblem::variational_inequality(mat(&[&[1.0]]), vecd(&[-1.0]), vec![lo], vec![hi])
        .unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

// Test-only oracle: refine a grid search for the point w minimizing a
// hand-written residual. Independent of the active-set code path.
fn refine_search(lo: &[f64], hi: &[f64], residual: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let n = lo.len();
    let mut lo = lo.to_vec();
    let mut hi = hi.to_vec();
    let mut best = lo.clone();
    for _ in 0..6 {
        let steps = 200usize;
        let mut idx = vec![0usize; n];
        let mut best_r = f64::INFINITY;
        loop {
            let p: Vec<f64> = (0..n)
                .map(|d| lo[d] + (hi[d] - lo[d]) * idx[d] as f64 / steps as f64)
                .collect();
            let r = residual(&p);
            if r < best_r {
                best_r = r;
                best = p;
            }
            let mut d = 0;
            loop {
                if d == n {
                    break;
                }
                idx[d] += 1;
                if idx[d] <= steps {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
        for d in 0..n {
            let w = (hi[d] - lo[d]) / steps as f64 * 4.0;
            let (l0, h0) = (lo[d], hi[d]);
            lo[d] = (best[d] - w).max(l0);
            hi[d] = (best[d] + w).min(h0);
        }
    }
    best
}

#[test]
fn linear_resolvent_examples() {
    assert!(close(
        &resolvent_linear(&mat(&[&[1.0]]), &[4.0]).unwrap(),
        &[2.0],
        1e-15
    ));
    let zero = DMatrix::zeros(3, 3);
    assert_eq!(
        resolvent_linear(&zero, &[1.0, -2.0, 3.5]).unwrap(),
        vec![1.0, -2.0, 3.5]
    );
    let skew = mat(&[&[0.0, -1.0], &[1.0, 0.0]]);
    assert!(close(
        &resolvent_linear(&skew, &[1.0, 1.0]).unwrap(),
        &[1.0, 0.0],
        1e-15
    ));
    assert_eq!(
        resolvent_linear(&mat(&[&[-1.0]]), &[1.0]),
        Err(MonotoneError::SingularSystem)
    );
}

#[test]
fn linear_resolvent_residual_is_tiny() {
    let m = mat(&[&[2.0, -1.0, 0.3], &[1.0, 1.0, 0.0], &[-0.3, 0.0, 0.5]]);
    let z = [3.0, -7.0, 11.0];
    let x = resolvent_linear(&m, &z).unwrap();
    let k = DMatrix::identity(3, 3) + &m;
    let res = (&k * vecd(&x) - vecd(&z)).norm();
    assert!(res <= 1e-12 * (1.0 + vecd(&z).norm()));
}

#[test]
fn non_monotone_linear_rejected() {
    assert!(matches!(
        MonotoneProblem::linear(mat(&[&[-1.0, 0.0], &[0.0, 1.0]])),
        Err(MonotoneError::NotMonotone { .. })
    ));
    assert!(MonotoneProblem::linear(mat(&[&[0.0, -1.0], &[1.0, 0.0]])).is_ok());
}

#[test]
fn prox_examples() {
    let abs = [Atom::AbsoluteValue];
    assert_eq!(prox_separable(&abs, &[3.0]).unwrap(), vec![2.0]);
    assert_eq!(prox_separable(&abs, &[0.5]).unwrap(), vec![0.0]);
    assert_eq!(prox_separable(&abs, &[-2.0]).unwrap(), vec![-1.0]);
    let bx = [Atom::BoxIndicator { lo: 0.0, hi: 1.0 }];
    assert_eq!(prox_separable(&bx, &[2.0]).unwrap(), vec![1.0]);
    let quad = [Atom::Quadratic { a: 1.0, c: 4.0 }];
    assert_eq!(prox_separable(&quad, &[0.0]).unwrap(), vec![2.0]);
    assert!(matches!(
        prox_separable(&[Atom::Quadratic { a: -1.0, c: 0.0 }], &[0.0]),
        Err(MonotoneError::InvalidAtom(_))
    ));
    assert!(matches!(
        prox_separable(&[Atom::BoxIndicator { lo: 2.0, hi: 1.0 }], &[0.0]),
        Err(MonotoneError::InvalidAtom(_))
    ));
}

#[test]
fn saddle_resolvent_pure_saddle() {
    let z = SaddlePoint {
        x: vec![1.0],
        y: vec![1.0],
    };
    let s = resolvent_saddle(&pure_saddle(), &z).unwrap();
    assert!(close(&s.x, &[0.2], 1e-14) && close(&s.y, &[0.6], 1e-14));
}

#[test]
fn saddle_resolvent_program_examples() {
    let prob = tiny_qp();
    // T_L(x, y) = (2x - y, x - 1 + N_{R+}(y)); residual of z ∈ w + T_L(w).
    let oracle = |z: [f64; 2]| {
        refine_search(&[-2.0, 0.0], &[3.0, 4.0], move |w| {
            let (x, y) = (w[0], w[1]);
            let ex = z[0] - x - (2.0 * x - y);
            let n = z[1] - y - (x - 1.0);
            let ey = if y <= 1e-12 { n.max(0.0) } else { n.abs() };
            ex.hypot(ey)
        })
    };
    let frozen_fixed = [1.0, 2.0];
    let frozen_origin = [0.25, 0.75];
    assert!(close(&oracle([1.0, 2.0]), &frozen_fixed, 1e-6));
    assert!(close(&oracle([0.0, 0.0]), &frozen_origin, 1e-6));

    let s = resolvent_saddle(
        &prob,
        &SaddlePoint {
            x: vec![1.0],
            y: vec![2.0],
        },
    )
    .unwrap();
    assert!(close(&s.concat(), &frozen_fixed, 1e-12));
    let s = resolvent_saddle(
        &prob,
        &SaddlePoint {
            x: vec![0.0],
            y: vec![0.0],
        },
    )
    .unwrap();
    assert!(close(&s.concat(), &frozen_origin, 1e-12));
    // inactive multiplier: z = (0, -5) → y = 0, 3x = 0
    let s = resolvent_saddle(
        &prob,
        &SaddlePoint {
            x: vec![0.0],
            y: vec![-5.0],
        },
    )
    .unwrap();
    assert!(close(&s.concat(), &[0.0, 0.0], 1e-12));
}

#[test]
fn saddle_resolvent_errors() {
    let prob = tiny_qp().with_enumeration_cap(0);
    let z = SaddlePoint {
        x: vec![0.0],
        y: vec![0.0],
    };
    assert_eq!(
        resolvent_saddle(&prob, &z),
        Err(MonotoneError::DimensionTooLarge {
            constrained: 1,
            cap: 0
        })
    );
    // resolvent() falls back to the iterative path past the cap
    assert!(close(
        &prob.resolvent(&[0.0, 0.0]).unwrap(),
        &[0.25, 0.75],
        1e-10
    ));
    assert!(matches!(
        resolvent_saddle(&scalar_vi(0.0, 1.0), &z),
        Err(MonotoneError::WrongFamily { .. })
    ));
    let bad = SaddlePoint {
        x: vec![0.0, 1.0],
        y: vec![0.0],
    };
    assert!(matches!(
        resolvent_saddle(&tiny_qp(), &bad),
        Err(MonotoneError::DimensionMismatch(_))
    ));
}

#[test]
fn vi_resolvent_examples() {
    // z - x - A(x) ∈ N_C(x) in one dimension, checked on a grid over C
    let oracle = |lo: f64, hi: f64, z: f64| {
        refine_search(&[lo.max(-20.0)], &[hi.min(20.0)], move |w| {
            let x = w[0];
            let n = z - x - (x - 1.0);
            if (x - hi).abs() <= 1e-12 {
                (-n).max(0.0)
            } else if (x - lo).abs() <= 1e-12 {
                n.max(0.0)
            } else {
                n.abs()
            }
        })[0]
    };
    let inf = f64::INFINITY;
    assert_eq!(
        resolvent_vi(&scalar_vi(-inf, inf), &[1.0]).unwrap(),
        vec![1.0]
    );

    assert!((oracle(-5.0, 0.0, 0.0) - 0.0).abs() <= 1e-9);
    assert_eq!(
        resolvent_vi(&scalar_vi(-5.0, 0.0), &[0.0]).unwrap(),
        vec![0.0]
    );

    assert!((oracle(0.0, inf, -3.0) - 0.0).abs() <= 1e-9);
    assert_eq!(
        resolvent_vi(&scalar_vi(0.0, inf), &[-3.0]).unwrap(),
        vec![0.0]
    );

    // interior solution for comparison: 2x - 1 = z
    assert!((resolvent_vi(&scalar_vi(-5.0, 5.0), &[2.0]).unwrap()[0] - 1.5).abs() <= 1e-15);
}

#[test]
fn vi_box_validation() {
    assert!(matches!(
        MonotoneProblem::variational_inequality(mat(&[&[1.0]]), vecd(&[0.0]), vec![1.0], vec![0.0]),
        Err(MonotoneError::InvalidBox(_))
    ));
    // degenerate box pins the coordinate
    let p = scalar_vi(0.5, 0.5);
    assert_eq!(resolvent_vi(&p, &[10.0]).unwrap(), vec![0.5]);
    assert_eq!(resolvent_vi(&p, &[-10.0]).unwrap(), vec![0.5]);
}

#[test]
fn iterative_matches_direct_examples() {
    let prob = tiny_qp();
    let w = iterative_resolvent(&prob, &[1.0, 2.0], 1e-10, 10_000).unwrap();
    assert!(close(&w, &[1.0, 2.0], 1e-10));
    let w = iterative_resolvent(&prob, &[0.0, 0.0], 1e-12, 100_000).unwrap();
    assert!(close(&w, &[0.25, 0.75], 1e-10));

    let m = mat(&[&[1.0, -2.0], &[2.0, 0.5]]);
    let lin = MonotoneProblem::linear(m.clone()).unwrap();
    let z = [0.3, -1.7];
    let a = iterative_resolvent(&lin, &z, 1e-12, 100_000).unwrap();
    let b = resolvent_linear(&m, &z).unwrap();
    assert!(close(&a, &b, 1e-10));

    assert!(matches!(
        iterative_resolvent(&lin, &z, 1e-14, 2),
        Err(MonotoneError::InnerSolverDiverged { .. })
    ));
}

#[test]
fn dual_examples() {
    let prob = tiny_qp();
    // oracle: inf over a fine x-grid of x² + y(1 - x)
    let oracle = |y: f64| {
        (0..=200_000)
            .map(|k| -10.0 + k as f64 * 1e-4)
            .map(|x| x * x + y * (1.0 - x))
            .fold(f64::INFINITY, f64::min)
    };
    for (y, frozen) in [(2.0, 1.0), (0.0, 0.0), (4.0, 0.0)] {
        assert!((oracle(y) - frozen).abs() <= 1e-6);
        assert!((evaluate_dual(&prob, &[y]).unwrap() - frozen).abs() <= 1e-12);
    }
    assert!(matches!(
        evaluate_dual(&prob, &[-1.0]),
        Err(MonotoneError::InvalidDual(_))
    ));
}

#[test]
fn dual_unbounded_detected() {
    // min x s.t. -x - 1 <= 0: L(x, y) = x + y(-x - 1) is linear in x unless y = 1
    let prob = MonotoneProblem::convex_program_qp(QuadraticData {
        p: mat(&[&[0.0]]),
        q: vecd(&[1.0]),
        a: mat(&[&[-1.0]]),
        b: vecd(&[-1.0]),
    })
    .unwrap();
    assert_eq!(
        evaluate_dual(&prob, &[0.5]),
        Err(MonotoneError::DualUnbounded)
    );
    assert!((evaluate_dual(&prob, &[1.0]).unwrap() - -1.0).abs() <= 1e-12);
}

#[test]
fn brute_force_examples() {
    let g = brute_force_zero(&tiny_qp(), &Grid::new(vec![0.0, 0.0], vec![3.0, 4.0], 0.01)).unwrap();
    assert!(close(&g.point, &[1.0, 2.0], 1e-12));
    let g = brute_force_zero(
        &scalar_vi(-5.0, 0.0),
        &Grid::new(vec![-5.0], vec![0.0], 0.01),
    )
    .unwrap();
    assert!(close(&g.point, &[0.0], 1e-12));
    let lin = MonotoneProblem::linear(mat(&[&[1.0]])).unwrap();
    let g = brute_force_zero(&lin, &Grid::new(vec![-1.0], vec![1.0], 0.01)).unwrap();
    assert!(close(&g.point, &[0.0], 1e-12));
}

#[test]
fn brute_force_too_coarse() {
    let lin = MonotoneProblem::linear(mat(&[&[1.0]])).unwrap();
    let grid = Grid::new(vec![2.0], vec![4.0], 0.5);
    assert!(matches!(
        brute_force_zero(&lin, &grid),
        Err(MonotoneError::GridTooCoarse { .. })
    ));
}

#[test]
fn fixed_point_wrapping() {
    let prob = MonotoneProblem::separable_prox(vec![
        Atom::AbsoluteValue,
        Atom::Quadratic { a: 1.0, c: 4.0 },
    ])
    .unwrap();
    let f = as_fixed_point_operator(prob, BlockPartition::new(&[1, 1]).unwrap()).unwrap();
    assert!(f.blockwise());
    let x = BlockVector::new(f.partition().clone(), vec![3.0, 0.0]).unwrap();
    assert_eq!(f.evaluate(&x).unwrap().as_slice(), &[2.0, 2.0]);
    assert_eq!(f.evaluate_block(1, &x).unwrap(), vec![2.0]);
    assert_eq!(
        f.claims(),
        Claims {
            h2: false,
            h3: true
        }
    );

    let f = as_fixed_point_operator(tiny_qp(), BlockPartition::new(&[1, 1]).unwrap()).unwrap();
    let x = BlockVector::new(f.partition().clone(), vec![1.0, 2.0]).unwrap();
    assert!(close(
        f.evaluate(&x).unwrap().as_slice(),
        &[1.0, 2.0],
        1e-12
    ));

    let f = as_fixed_point_operator(
        MonotoneProblem::linear(DMatrix::zeros(2, 2)).unwrap(),
        BlockPartition::new(&[2]).unwrap(),
    )
    .unwrap();
    let x = BlockVector::new(f.partition().clone(), vec![-1.5, 9.0]).unwrap();
    assert_eq!(f.evaluate(&x).unwrap(), x);

    assert!(matches!(
        as_fixed_point_operator(tiny_qp(), BlockPartition::new(&[1]).unwrap()),
        Err(MonotoneError::DimensionMismatch(_))
    ));
}

fn coupled_vi() -> MonotoneProblem {
    MonotoneProblem::variational_inequality(
        mat(&[&[2.0, 1.0, 0.0], &[-1.0, 1.0, 0.5], &[0.0, -0.5, 1.0]]),
        vecd(&[-3.0, 1.0, 0.5]),
        vec![0.0, f64::NEG_INFINITY, -1.0],
        vec![1.0, 2.0, f64::INFINITY],
    )
    .unwrap()
}

fn coupled_qp() -> MonotoneProblem {
    MonotoneProblem::convex_program_qp(QuadraticData {
        p: mat(&[&[2.0, 0.5], &[0.5, 1.0]]),
        q: vecd(&[-1.0, 0.0]),
        a: mat(&[&[1.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]),
        b: vecd(&[-1.0, 0.2, 0.2]),
    })
    .unwrap()
}

#[test]
fn iterative_agrees_with_enumeration_on_random_rhs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for prob in [coupled_vi(), coupled_qp(), pure_saddle()] {
        for _ in 0..100 {
            let z: Vec<f64> = (0..prob.dimension())
                .map(|_| rng.gen_range(-10.0..10.0))
                .collect();
            let exact = prob.split.solve_enumerated(&z, 20).unwrap();
            let iter = iterative_resolvent(&prob, &z, 1e-11, 1_000_000).unwrap();
            assert!(close(&exact, &iter, 1e-8), "{exact:?} vs {iter:?}");
        }
    }
}

#[test]
fn resolvent_satisfies_inclusion() {
    // z - w - (M w + c) must lie in N_C(w): check via the zero merit of the
    // shifted problem, which reuses nothing from the enumeration.
    let prob = coupled_qp();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let z: Vec<f64> = (0..prob.dimension())
            .map(|_| rng.gen_range(-5.0..5.0))
            .collect();
        let w = prob.resolvent(&z).unwrap();
        let mut shifted = prob.split.clone();
        shifted.c = &shifted.c + DVector::from_column_slice(&w) - DVector::from_column_slice(&z);
        assert!(shifted.merit(&w, 1e-12) <= 1e-10);
        assert!(w[2..].iter().all(|&y| y >= 0.0));
    }
}

#[test]
fn firm_nonexpansiveness_for_each_family() {
    let problems = [
        MonotoneProblem::linear(mat(&[&[1.0, -1.0], &[1.0, 0.0]])).unwrap(),
        MonotoneProblem::separable_prox(vec![
            Atom::AbsoluteValue,
            Atom::Quadratic { a: 2.0, c: -1.0 },
            Atom::BoxIndicator { lo: 0.0, hi: 1.0 },
        ])
        .unwrap(),
        pure_saddle(),
        coupled_qp(),
        coupled_vi(),
    ];
    for prob in problems {
        let name = prob.family().name();
        let n = prob.dimension();
        let f = as_fixed_point_operator(prob, BlockPartition::singletons(n).unwrap()).unwrap();
        let r = check_h3(&f, &mut UniformPairSampler::new(2024), 1000, 1e-10).unwrap();
        assert!(r.passed, "{name}: {r:?}");
    }
}

#[test]
fn weak_duality_on_samples() {
    let prob = coupled_qp();
    let data = match prob.family() {
        Family::ConvexProgramQp { data } => data.clone(),
        _ => unreachable!(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    while checked < 200 {
        let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        if data.constraints(&x).iter().any(|&v| v > 0.0) {
            continue;
        }
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..5.0)).collect();
        assert!(evaluate_dual(&prob, &y).unwrap() <= data.objective(&x) + 1e-12);
        checked += 1;
    }
}

proptest! {
    #[test]
    fn prox_is_coordinatewise_lipschitz(
        z1 in -50.0f64..50.0,
        z2 in -50.0f64..50.0,
        a in 0.0f64..10.0,
        c in -5.0f64..5.0,
        lo in -5.0f64..0.0,
        width in 0.0f64..5.0,
    ) {
        for atom in [
            Atom::Quadratic { a, c },
            Atom::AbsoluteValue,
            Atom::BoxIndicator { lo, hi: lo + width },
        ] {
            prop_assert!((atom.prox(z1) - atom.prox(z2)).abs() <= (z1 - z2).abs() + 1e-15);
        }
    }
}
