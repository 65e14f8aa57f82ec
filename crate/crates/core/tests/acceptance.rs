//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Run with
//! `cargo test -p bst-core --test acceptance` (add `--release` for speed).

use std::process::ExitCode;
use std::time::Instant;

use bst_core::estimation::{estimate_l_from_log, estimate_mu, fit_power_law, FitOptions, MuOptions, PowerLawShape};
use bst_core::geometry::{block_dual, block_lmo, block_primal, Block, PolarMethod};
use bst_core::harness::{
    plan, run_sweep, AlphaRule, BetaRule, ConstantsSource, Grid, GridPoint, PlanInputs, PlanRule, SweepConfig,
    SCHEMA_VERSION,
};
use bst_core::optimizer::{run, run_staged, BetaSchedule, MomentumInit, ScgConfig, Variant};
use bst_core::problems::{known_constants, Batch, NoiseModel, NormFrame, StochasticObjective};
use bst_core::scaling::{
    critical_bs, fitted, plan_stages, transfer_token_budget, ErrorLawMode, FixedPointOptions, ModelConstants,
    TunedConfig,
};
use bst_core::{BlockGeometry, Geometry, LayeredPoint, NormKind, ProblemSpec, Shape};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<(bool, String), bst_core::Error>;

/// Quadratic used by the sweep criteria: one Euclidean block of dimension 64,
/// curvature 1, radius 1 and a target of norm 1/2. Its analytic constants are
/// L = ρ = 1 and μ = 4/3. The small-batch term of the error law dominates for
/// BS < (μρσ★/L)², so σ★ = 5/4 puts all three predicted regimes on the
/// T = 2²⁰ grid: BS ∈ {1, 2} small-batch, BS★ ≈ 2^13.8, and two grid points
/// beyond 8·BS★.
fn sweep_problem() -> ProblemSpec {
    let geom =
        Geometry::new(vec![BlockGeometry::new("w", NormKind::Euclidean, Shape::Vector(64), 1.0).unwrap()]).unwrap();
    ProblemSpec::quadratic(geom, vec![1.0], NoiseModel::new(1.25))
}

fn sweep_config(t: f64, grid: Grid, seed_base: u64) -> SweepConfig {
    SweepConfig {
        schema_version: SCHEMA_VERSION,
        problem: sweep_problem(),
        t,
        grid,
        beta_rule: BetaRule::Theorem,
        alpha_rule: AlphaRule::Theorem,
        repetitions: 5,
        seed_base,
        mode: ErrorLawMode::Asymptotic,
        constants: ConstantsSource::Known(NormFrame::Composite),
        radii: None,
        polar: PolarMethod::default(),
        momentum_init: MomentumInit::FirstSample,
    }
}

/// Ordinary least-squares slope of y on x.
fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random matrix with orthonormal columns (r ≥ c) via Gram–Schmidt.
fn orthonormal_columns(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    let mut q = gaussian_matrix(rng, r, c);
    for j in 0..c {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).clone_owned();
            q.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        let n = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / n);
    }
    q
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn c1_model_size_transfer() -> Outcome {
    let inputs = PlanInputs {
        base: Some(TunedConfig { b0: 256.0, s0: 1024.0, beta0: 3.6e-4, alpha0: 0.1, t0: 124.0 }),
        t1: Some(1000.0),
        consts0: Some(ModelConstants::new(7.2, 3.1, 62.7)),
        consts1: Some(ModelConstants::new(10.6, 2.9, 111.9)),
        ..Default::default()
    };
    let v = plan(PlanRule::ModelSize, &inputs)?;
    let bs = v["bs_factor"].as_f64().unwrap_or(f64::NAN);
    let beta = v["beta_factor"].as_f64().unwrap_or(f64::NAN);
    let ok = (bs - 4.37).abs() <= 0.01 && (beta - 0.54).abs() <= 0.01;
    Ok((ok, format!("BS factor {bs:.4} (4.37±0.01), beta factor {beta:.4} (0.54±0.01)")))
}

fn c2_fitted_laws() -> Outcome {
    let mu = fitted::mu(12.0)?;
    let l = fitted::L(12.0, 768.0)?;
    let ok = (mu - 3.1).abs() <= 0.05 && (l - 7.2).abs() <= 0.1;
    Ok((ok, format!("mu {mu:.4} (3.1±0.05), L {l:.4} (7.2±0.1)")))
}

struct SweepData {
    bs: Vec<f64>,
    loss: Vec<f64>,
    critical: f64,
}

fn regime_sweep() -> Result<SweepData, bst_core::Error> {
    let t = 2f64.powi(20);
    let cfg = sweep_config(t, Grid::Pow2 { min_exp: 0, max_exp: 18, s: 1.0 }, 20);
    // single worker: the runtime bound is stated for one thread
    let res = run_sweep(&cfg, 1)?;
    if let Some(r) = res.rows.iter().find(|r| !r.error.is_empty()) {
        return Err(bst_core::Error::Degenerate(format!("sweep point B={} failed: {}", r.b, r.error)));
    }
    Ok(SweepData {
        bs: res.rows.iter().map(|r| r.b * r.s).collect(),
        loss: res.rows.iter().map(|r| r.final_loss_mean).collect(),
        critical: res.critical_bs,
    })
}

fn c3_three_regimes(d: &SweepData) -> Outcome {
    let (imin, _) =
        d.loss.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
    let interior = imin > 0 && imin + 1 < d.loss.len();
    let ratio = d.bs[imin] / d.critical;
    let ok = interior && (0.25..=4.0).contains(&ratio);
    let curve: Vec<String> = d.bs.iter().zip(&d.loss).map(|(b, l)| format!("{}:{l:.3e}", b.log2() as i32)).collect();
    Ok((
        ok,
        format!(
            "argmin BS=2^{} (interior: {interior}), critical BS {:.1}, ratio {ratio:.4} (within [1/4, 4]); curve log2(BS):loss {}",
            d.bs[imin].log2() as i32,
            d.critical,
            curve.join(" ")
        ),
    ))
}

fn c4_middle_rate() -> Outcome {
    let spec = sweep_problem();
    let problem = spec.build()?;
    let consts = known_constants(&problem, &[1.0], NormFrame::Composite)?.constants;
    let mut log_t = Vec::new();
    let mut log_loss = Vec::new();
    let mut detail = Vec::new();
    for e in 14..=22 {
        let t = 2f64.powi(e);
        let b = critical_bs(t, &consts)?.round().max(1.0);
        let res = run_sweep(&sweep_config(t, Grid::Points(vec![GridPoint { b, s: 1.0 }]), 40 + e as u64), 0)?;
        let row = &res.rows[0];
        if !row.error.is_empty() {
            return Err(bst_core::Error::Degenerate(row.error.clone()));
        }
        log_t.push(t.ln());
        log_loss.push(row.final_loss_mean.ln());
        detail.push(format!("2^{e}:B={b}:{:.3e}", row.final_loss_mean));
    }
    let slope = ols_slope(&log_t, &log_loss);
    let ok = (slope + 1.0 / 3.0).abs() <= 0.15;
    Ok((ok, format!("slope {slope:.4} (−1/3 ± 0.15); {}", detail.join(" "))))
}

fn c5_large_batch(d: &SweepData) -> Outcome {
    let (x, y): (Vec<f64>, Vec<f64>) =
        d.bs.iter().zip(&d.loss).filter(|(b, _)| **b > 8.0 * d.critical).map(|(b, l)| (b.ln(), l.ln())).unzip();
    if x.len() < 2 {
        return Ok((false, format!("only {} grid points beyond 8× critical BS", x.len())));
    }
    let slope = ols_slope(&x, &y);
    let ok = (slope - 1.0).abs() <= 0.3;
    Ok((ok, format!("slope {slope:.4} over {} points with BS > {:.0} (1.0 ± 0.3)", x.len(), 8.0 * d.critical)))
}

fn random_block(rng: &mut ChaCha8Rng, i: usize) -> BlockGeometry {
    let radius = rng.random_range(0.5..2.0);
    let (kind, shape) = match rng.random_range(0..3) {
        0 => (NormKind::Sign, Shape::Vector(rng.random_range(1..20))),
        1 => (NormKind::Euclidean, Shape::Vector(rng.random_range(1..20))),
        _ => (NormKind::Spectral, Shape::Matrix(rng.random_range(1..7), rng.random_range(1..7))),
    };
    BlockGeometry::new(format!("b{i}"), kind, shape, radius).unwrap()
}

fn c6_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    let mut steps = 0;
    let mut not_applicable = 0;
    for run_idx in 0..100 {
        let nb = rng.random_range(1..4);
        let geom = Geometry::new((0..nb).map(|i| random_block(&mut rng, i)).collect()).unwrap();
        // x₀ with per-block primal norm at most η/2
        let x0 = LayeredPoint {
            blocks: geom
                .blocks
                .iter()
                .map(|g| {
                    let mut v: Vec<f64> = (0..g.shape.len()).map(|_| rng.sample(StandardNormal)).collect();
                    let n = block_primal(g.kind, g.shape, &v);
                    let target = rng.random_range(0.0..=0.5) * g.radius;
                    v.iter_mut().for_each(|e| *e *= target / n);
                    Block { name: g.name.clone(), values: v }
                })
                .collect(),
        };
        let curv = (0..nb).map(|_| rng.random_range(0.2..4.0)).collect();
        let mut spec = ProblemSpec::quadratic(geom, curv, NoiseModel::new(rng.random_range(0.0..1.0)));
        if let ProblemSpec::LayeredQuadratic { initial, target_seed, .. } = &mut spec {
            *initial = Some(x0);
            *target_seed = run_idx;
        }
        let problem = spec.build()?;
        let k = rng.random_range(2..400);
        let c = rng.random_range(0.05..=(k as f64 / 2.0));
        let mut cfg =
            ScgConfig::new(rng.random_range(0.01..=1.0), BetaSchedule::TheoremPrescribed { c, k }, k, run_idx).quiet();
        cfg.check_invariants = true;
        cfg.batch = rng.random_range(1..64) as f64;
        if rng.random_bool(0.5) {
            cfg.polar = PolarMethod::Exact;
        }
        let log = run(&problem, &cfg, Variant::Scg)?;
        if !log.invariants.applicable {
            not_applicable += 1;
        }
        violations += log.invariants.violations;
        steps += log.invariants.steps_checked;
    }
    let ok = violations == 0 && not_applicable == 0;
    Ok((ok, format!("100 runs, {steps} steps checked, {violations} violations, {not_applicable} runs not covered")))
}

fn c7_lmo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Sign: brute force over the 2^n corners of the unit cube.
    let mut sign_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let m: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 0u32..(1 << n) {
            let d: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let v: f64 = m.iter().zip(&d).map(|(a, b)| a * b).sum();
            if v < best.0 {
                best = (v, d);
            }
        }
        if block_lmo(NormKind::Sign, Shape::Vector(n), &m, PolarMethod::Exact)? != best.1 {
            sign_mismatch += 1;
        }
    }
    // Spectral, exact polar: pairing against the nuclear norm read off the
    // eigenvalues ±σᵢ of the symmetric embedding [[0, M], [Mᵀ, 0]] (an
    // SVD-free oracle).
    let mut exact_err: f64 = 0.0;
    for _ in 0..1000 {
        let (r, c) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let m = gaussian_matrix(&mut rng, r, c);
        let mut h = DMatrix::zeros(r + c, r + c);
        h.view_mut((0, r), (r, c)).copy_from(&m);
        h.view_mut((r, 0), (c, r)).copy_from(&m.transpose());
        let nuclear = 0.5 * SymmetricEigen::new(h).eigenvalues.iter().map(|e| e.abs()).sum::<f64>();
        let flat = row_major(&m);
        let d = block_lmo(NormKind::Spectral, Shape::Matrix(r, c), &flat, PolarMethod::Exact)?;
        let pairing: f64 = flat.iter().zip(&d).map(|(a, b)| a * b).sum();
        exact_err = exact_err.max((pairing + nuclear).abs());
    }
    // Newton–Schulz(5) on matrices with planted singular values in [1, 10].
    let mut ns_worst = f64::INFINITY;
    for _ in 0..1000 {
        let (r, c) = if rng.random_bool(0.5) { (8, 4) } else { (rng.random_range(2..=12), rng.random_range(2..=12)) };
        let k = r.min(c);
        let sv: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(0.0..=1.0))).collect();
        let u = orthonormal_columns(&mut rng, r, k);
        let v = orthonormal_columns(&mut rng, c, k);
        let m = &u * DMatrix::from_diagonal(&DVector::from_vec(sv.clone())) * v.transpose();
        let nuclear: f64 = sv.iter().sum();
        let flat = row_major(&m);
        let d = block_lmo(NormKind::Spectral, Shape::Matrix(r, c), &flat, PolarMethod::default())?;
        let pairing: f64 = -flat.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        ns_worst = ns_worst.min(pairing / nuclear);
        debug_assert!((block_dual(NormKind::Spectral, Shape::Matrix(r, c), &flat) - nuclear).abs() < 1e-8 * nuclear);
    }
    let ok = sign_mismatch == 0 && exact_err <= 1e-8 && ns_worst >= 0.9;
    Ok((
        ok,
        format!(
            "sign mismatches {sign_mismatch}/1000; exact max |pairing+nuclear| {exact_err:.2e} (≤1e-8); \
             Newton–Schulz(5) worst pairing/nuclear {ns_worst:.4} (≥0.9)"
        ),
    ))
}

fn c8_estimators() -> Outcome {
    let lam = 4.0;
    let geom =
        Geometry::new(vec![BlockGeometry::new("w", NormKind::Euclidean, Shape::Vector(32), 1.0).unwrap()]).unwrap();
    let l_of = |sigma: f64| -> Result<f64, bst_core::Error> {
        let problem = ProblemSpec::quadratic(geom.clone(), vec![lam], NoiseModel::new(sigma)).build()?;
        let mut cfg = ScgConfig::new(0.5, BetaSchedule::Constant { beta: 0.05 }, 400, 8);
        cfg.log_every = 0;
        Ok(estimate_l_from_log(&run(&problem, &cfg, Variant::Scg)?, 100)?.value)
    };
    let l_clean = l_of(0.0)?;
    let l_noisy = l_of(0.01)?;

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let xs: Vec<f64> = (0..200).map(|_| rng.random_range(0.01..4.9)).collect();
    let clean: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 3.1 * x)).collect();
    let mu_clean = estimate_mu(&clean, MuOptions::default())?.slope;
    let dirty: Vec<(f64, f64)> =
        clean.iter().enumerate().map(|(i, &(x, y))| if i % 10 == 3 { (x, 10.0 * y) } else { (x, y) }).collect();
    let mu_dirty = estimate_mu(&dirty, MuOptions::default())?.slope;

    let law = fitted::mu_model();
    let obs: Vec<(Vec<f64>, f64)> = [2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0]
        .iter()
        .map(|&n| Ok((vec![n], law.eval(&[n])?)))
        .collect::<Result<_, bst_core::Error>>()?;
    let fit = fit_power_law(&obs, &PowerLawShape::free(&["n_layer"]), FitOptions::default())?;
    let exp = fit.model.terms[0].exponent;
    let exp_true = law.terms[0].exponent;

    let ok = (l_clean - lam).abs() <= 1e-9 * lam
        && (l_noisy / lam - 1.0).abs() <= 0.1
        && (mu_clean - 3.1).abs() <= 1e-6
        && (mu_dirty / 3.1 - 1.0).abs() <= 0.1
        && (exp / exp_true - 1.0).abs() <= 0.05;
    Ok((
        ok,
        format!(
            "L clean {l_clean:.12} noisy {l_noisy:.4} (planted 4); mu clean {mu_clean:.9} with outliers {mu_dirty:.4} \
             (planted 3.1); mu-law exponent {exp:.4} (planted {exp_true})"
        ),
    ))
}

fn c9_token_budget() -> Outcome {
    let base = TunedConfig { b0: 256.0, s0: 1024.0, beta0: 3.6e-4, alpha0: 0.1, t0: 1.3e9 };
    let model = fitted::rho_model();
    let mut ok = true;
    let mut detail = Vec::new();
    for (t1, want) in [(2.7e9, 416.0), (5.3e9, 672.0), (8.0e9, 896.0)] {
        let tr = transfer_token_budget(&base, |b| model.eval(&[12.0, 768.0, b]), t1, FixedPointOptions::default())?;
        let rel = tr.b1 / want - 1.0;
        ok &= rel.abs() <= 0.05;
        detail.push(format!("T1={t1:.1e}: B1={:.1} vs {want} ({:+.2}%)", tr.b1, 100.0 * rel));
    }
    Ok((ok, detail.join("; ")))
}

fn c10_noise() -> Outcome {
    let geom = Geometry::new(vec![
        BlockGeometry::new("v", NormKind::Euclidean, Shape::Vector(24), 1.0).unwrap(),
        BlockGeometry::new("m", NormKind::Spectral, Shape::Matrix(5, 8), 2.0).unwrap(),
    ])
    .unwrap();
    let sigma = 0.3;
    let batch = Batch::new(4.0, 2.0);
    let problem = ProblemSpec::quadratic(geom.clone(), vec![1.5, 0.5], NoiseModel::new(sigma)).build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = LayeredPoint {
        blocks: geom
            .blocks
            .iter()
            .map(|g| Block {
                name: g.name.clone(),
                values: (0..g.shape.len()).map(|_| rng.random_range(-0.1..0.1)).collect(),
            })
            .collect(),
    };
    // exact gradient from the targets: λ_ℓ (x_ℓ − θ_ℓ)
    let theta = problem.targets().expect("quadratic");
    let mut grad = x.sub(theta);
    for (b, lam) in grad.blocks.iter_mut().zip([1.5, 0.5]) {
        b.values.iter_mut().for_each(|v| *v *= lam);
    }
    let n = 100_000;
    let mut sum = grad.zeros_like();
    let mut sq = 0.0;
    for _ in 0..n {
        let g = problem.gradient_sample(&x, batch, &mut rng)?;
        let e = g.sub(&grad);
        sq += e.sq_euclidean();
        sum.axpy(1.0, &e);
    }
    let want_var = sigma * sigma / batch.scale();
    let var = sq / n as f64;
    let mean_err = sum.scaled(1.0 / n as f64).euclidean_norm();
    let se = (want_var / n as f64).sqrt();
    let ok = mean_err <= 3.0 * se && (var / want_var - 1.0).abs() <= 0.05;
    Ok((
        ok,
        format!(
            "‖mean − ∇f‖ {mean_err:.3e} (≤ 3·SE = {:.3e}); E‖g − ∇f‖² {var:.5e} vs σ★²/(BS) {want_var:.5e} ({:+.2}%)",
            3.0 * se,
            100.0 * (var / want_var - 1.0)
        ),
    ))
}

fn c11_restart() -> Outcome {
    let spec = sweep_problem();
    let problem = spec.build()?;
    let consts = known_constants(&problem, &[1.0], NormFrame::Composite)?.constants;
    let t0 = 2f64.powi(14);
    let b0 = critical_bs(t0, &consts)?.round();
    let k0 = (t0 / b0).floor();
    let base = TunedConfig { b0, s0: 1.0, beta0: 1.0 / k0, alpha0: 1.0, t0 };
    let mc = ModelConstants::new(consts.l, consts.mu, consts.rho);
    let plan = plan_stages(&base, &mc, &mc, &[t0, 8.0 * t0])?;
    let (s0, s1) = (&plan.stages[0], &plan.stages[1]);
    let bs_ratio = (s1.b * s1.s) / (s0.b * s0.s);
    let beta_ratio = s1.beta / s0.beta;
    let exact = bs_ratio == 4.0 && beta_ratio == 0.5;

    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let mut cfg = ScgConfig::new(base.alpha0, BetaSchedule::Constant { beta: base.beta0 }, 0, 1100 + seed).quiet();
        let staged = run_staged(&problem, &plan, &cfg, Variant::Scg)?.final_loss;
        cfg.iters = (8.0 * t0 / b0).floor() as usize;
        cfg.batch = b0;
        let fixed = run(&problem, &cfg, Variant::Scg)?.final_loss;
        if staged <= fixed {
            wins += 1;
        }
        pairs.push(format!("{staged:.3e}/{fixed:.3e}"));
    }
    let ok = exact && wins >= 4;
    Ok((
        ok,
        format!(
            "stage-2 BS ×{bs_ratio} β ×{beta_ratio} (exactly 4, 0.5: {exact}); staged ≤ fixed in {wins}/5 (staged/fixed {})",
            pairs.join(" ")
        ),
    ))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, bound_s: f64, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let res = f();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match res {
            Ok((ok, d)) => (ok && secs <= bound_s, d),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "criterion {id:>2} {name}: {} — {detail} [{secs:.2}s, bound {bound_s}s]",
            if ok { "PASS" } else { "FAIL" }
        );
    };

    report(1, "model-size transfer", 1.0, &mut c1_model_size_transfer);
    report(2, "fitted-law cross-check", 1.0, &mut c2_fitted_laws);
    let start = Instant::now();
    let sweep = regime_sweep();
    let sweep_secs = start.elapsed().as_secs_f64();
    println!("(regime sweep: T=2^20, BS=2^0..2^18, 5 repetitions, one thread, {sweep_secs:.2}s)");
    let from_sweep = |f: fn(&SweepData) -> Outcome| -> Outcome {
        match &sweep {
            Ok(d) => f(d),
            Err(e) => Err(bst_core::Error::Degenerate(e.to_string())),
        }
    };
    report(3, "three-regime sweep", 600.0 - sweep_secs, &mut || from_sweep(c3_three_regimes));
    report(4, "middle-regime rate", 900.0, &mut c4_middle_rate);
    report(5, "large-batch linearity", 600.0 - sweep_secs, &mut || from_sweep(c5_large_batch));
    report(6, "iterate invariants", 60.0, &mut c6_invariants);
    report(7, "LMO oracle equivalence", 60.0, &mut c7_lmo);
    report(8, "estimator recovery", 60.0, &mut c8_estimators);
    report(9, "token-budget fixed point", 1.0, &mut c9_token_budget);
    report(10, "gradient noise contract", 60.0, &mut c10_noise);
    report(11, "restart protocol", 600.0, &mut c11_restart);

    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
