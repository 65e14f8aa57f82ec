//! Analytic constants of the layered quadratic checked against sampled
//! points, and the estimators run on logs and oracles with known answers.

use bst_core::estimation::{estimate_l_from_log, estimate_rho, estimate_variance, VarianceOptions};
use bst_core::geometry::{block_primal, dual_norm, primal_norm, Block, NormMode};
use bst_core::optimizer::{run, BetaSchedule, ScgConfig, Variant};
use bst_core::problems::{known_constants, Batch, NoiseModel, NormFrame, Problem, StochasticObjective};
use bst_core::{BlockGeometry, Geometry, LayeredPoint, NormKind, ProblemSpec, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn mixed_geometry() -> Geometry {
    Geometry::new(vec![
        BlockGeometry::new("emb", NormKind::Sign, Shape::Vector(10), 0.8).unwrap(),
        BlockGeometry::new("mat", NormKind::Spectral, Shape::Matrix(4, 6), 1.5).unwrap(),
        BlockGeometry::new("head", NormKind::Euclidean, Shape::Vector(7), 1.0).unwrap(),
    ])
    .unwrap()
}

fn mixed_problem(sigma: f64) -> Problem {
    ProblemSpec::quadratic(mixed_geometry(), vec![0.7, 2.0, 1.3], NoiseModel::new(sigma)).build().unwrap()
}

/// Random point with per-block primal norm `scale·η` for a scale in [0, 1].
fn point_in_balls(geom: &Geometry, rng: &mut ChaCha8Rng) -> LayeredPoint {
    LayeredPoint {
        blocks: geom
            .blocks
            .iter()
            .map(|g| {
                let mut v: Vec<f64> = (0..g.shape.len()).map(|_| rng.sample(StandardNormal)).collect();
                let s = rng.random_range(0.0..=1.0) * g.radius / block_primal(g.kind, g.shape, &v);
                v.iter_mut().for_each(|e| *e *= s);
                Block { name: g.name.clone(), values: v }
            })
            .collect(),
    }
}

#[test]
fn smoothness_constant_bounds_sampled_pairs() {
    let p = mixed_problem(0.0);
    let geom = p.geometry().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for frame in [NormFrame::Flat, NormFrame::Composite] {
        let c = known_constants(&p, &geom.radii(), frame).unwrap().constants;
        let mut worst: f64 = 0.0;
        for _ in 0..2000 {
            let (x, y) = (point_in_balls(&geom, &mut rng), point_in_balls(&geom, &mut rng));
            let dg = p.gradient(&x).unwrap().sub(&p.gradient(&y).unwrap());
            let num = dual_norm(&dg, &geom).unwrap().composite_dual;
            let den = primal_norm(&x.sub(&y), &geom, NormMode::Unweighted).unwrap().composite_primal;
            worst = worst.max(num / den);
        }
        match frame {
            // the composite constant is a valid bound for the composite norms
            NormFrame::Composite => assert!(worst <= c.l * (1.0 + 1e-12), "ratio {worst} > L {}", c.l),
            // the flat constant is max λ, which only bounds per-block ℓ2 ratios
            NormFrame::Flat => assert_eq!(c.l, 2.0),
        }
    }
}

#[test]
fn kl_constant_holds_in_the_balls() {
    let p = mixed_problem(0.0);
    let geom = p.geometry().clone();
    let ac = known_constants(&p, &geom.radii(), NormFrame::Composite).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tightest = f64::INFINITY;
    for _ in 0..5000 {
        let x = point_in_balls(&geom, &mut rng);
        let f = p.loss(&x).unwrap();
        assert!(f <= ac.f_max * (1.0 + 1e-12), "f {f} above f_max {}", ac.f_max);
        if f > 1e-12 {
            let g = dual_norm(&p.gradient(&x).unwrap(), &geom).unwrap().composite_dual;
            tightest = tightest.min(g / f);
        }
    }
    assert!(tightest >= ac.constants.mu, "min ‖∇f‖_*/f = {tightest} < mu {}", ac.constants.mu);
}

#[test]
fn rho_bounds_dual_to_euclidean_ratio() {
    let p = mixed_problem(0.5);
    let geom = p.geometry().clone();
    let c = known_constants(&p, &geom.radii(), NormFrame::Composite).unwrap().constants;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = point_in_balls(&geom, &mut rng);
    let big = p.gradient(&x).unwrap();
    let pairs: Vec<_> =
        (0..300).map(|_| (p.gradient_sample(&x, Batch::new(1.0, 1.0), &mut rng).unwrap(), big.clone())).collect();
    let est = estimate_rho(&pairs, &geom, 100).unwrap();
    assert!(est.value > 0.0 && est.value.is_finite());
    assert!(est.value <= c.rho, "estimated {} above analytic bound {}", est.value, c.rho);

    let euclid =
        Geometry::new(vec![BlockGeometry::new("w", NormKind::Euclidean, Shape::Vector(5), 1.0).unwrap()]).unwrap();
    let q = ProblemSpec::quadratic(euclid.clone(), vec![1.0], NoiseModel::new(1.0)).build().unwrap();
    let x = q.initial_point();
    let pairs: Vec<_> = (0..20)
        .map(|_| (q.gradient_sample(&x, Batch::new(1.0, 1.0), &mut rng).unwrap(), q.gradient(&x).unwrap()))
        .collect();
    assert!((estimate_rho(&pairs, &euclid, 100).unwrap().value - 1.0).abs() < 1e-12);
}

#[test]
fn estimated_l_on_a_noiseless_euclidean_log_is_exact() {
    let geom =
        Geometry::new(vec![BlockGeometry::new("w", NormKind::Euclidean, Shape::Vector(9), 2.0).unwrap()]).unwrap();
    let p = ProblemSpec::quadratic(geom.clone(), vec![2.5], NoiseModel::noiseless()).build().unwrap();
    let known = known_constants(&p, &geom.radii(), NormFrame::Composite).unwrap().constants;
    let cfg =
        ScgConfig::new(0.7, BetaSchedule::Warmdown { gamma: 0.05, total_steps: 300, warmdown_steps: None }, 300, 0);
    let log = run(&p, &cfg, Variant::Scg).unwrap();
    let l = estimate_l_from_log(&log, 100).unwrap().value;
    assert!((l - known.l).abs() <= 1e-9 * known.l, "estimated {l}, known {}", known.l);
}

#[test]
fn variance_law_recovers_inverse_batch_decay() {
    let geom =
        Geometry::new(vec![BlockGeometry::new("w", NormKind::Euclidean, Shape::Vector(16), 1.0).unwrap()]).unwrap();
    let sigma = 0.8;
    let p = ProblemSpec::quadratic(geom, vec![1.0], NoiseModel::new(sigma)).build().unwrap();
    let x = p.initial_point();
    let opts = VarianceOptions { pool_size: 8192, fit_shift: false, ..Default::default() };
    let curve = estimate_variance(&p, &x, &[1, 2, 4, 8, 16, 32, 64], opts).unwrap();
    for &(b, v) in &curve.points {
        let want = sigma * sigma / b;
        assert!((v / want - 1.0).abs() < 0.15, "B={b}: {v} vs {want}");
    }
    let t = &curve.fitted.terms[0];
    assert!((t.exponent + 1.0).abs() < 0.05, "exponent {}", t.exponent);
    assert_eq!(t.shift, 0.0);
    assert!((curve.fitted.coefficient / (sigma * sigma) - 1.0).abs() < 0.1);
}

#[test]
fn variance_estimates_do_not_depend_on_thread_count() {
    let p = mixed_problem(0.3);
    let x = p.initial_point();
    let opts = VarianceOptions { pool_size: 1024, ..Default::default() };
    let a = bst_core::par::with_jobs(1, || estimate_variance(&p, &x, &[1, 4, 16], opts).unwrap());
    let b = bst_core::par::with_jobs(4, || estimate_variance(&p, &x, &[1, 4, 16], opts).unwrap());
    assert_eq!(a.points, b.points);
}

#[test]
fn scg_and_uscg_reduce_the_noiseless_objective() {
    let p = mixed_problem(0.0);
    for variant in [Variant::Scg, Variant::Uscg] {
        let cfg = ScgConfig::new(1.0, BetaSchedule::TheoremPrescribed { c: 1.0, k: 400 }, 400, 0).quiet();
        let log = run(&p, &cfg, variant).unwrap();
        assert!(log.final_loss < 0.05 * log.initial_loss, "{variant:?}: {} -> {}", log.initial_loss, log.final_loss);
    }
}
