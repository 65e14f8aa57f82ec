//! Estimators for the problem constants and shifted power-law fitting.
//!
//! - L: trailing mean of ‖g_k − g_{k−1}‖_* / ‖x_k − x_{k−1}‖.
//! - μ: slope of dual gradient norm against loss, by Huber IRLS.
//! - ρ: trailing mean of ‖g − G‖_* / ‖g − G‖₂ against a reference gradient G.
//! - σ²: empirical minibatch variance at several batch sizes, with a
//!   one-term shifted power law fitted through it.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{composite_dual_unchecked, Geometry, LayeredPoint};
use crate::optimizer::{CurvaturePair, RunLog};
use crate::par;
use crate::problems::{Batch, StochasticObjective};

/// Trailing window used by the L and ρ estimators.
pub const DEFAULT_WINDOW: usize = 100;
/// Denominators below this are skipped by the L estimator.
pub const DEGENERATE_STEP: f64 = 1e-12;
pub const DEFAULT_HUBER_DELTA: f64 = 1.345;
pub const DEFAULT_LOSS_CAP: f64 = 5.0;
/// Consistency constant turning a median absolute deviation into a normal σ.
const MAD_TO_SIGMA: f64 = 0.6745;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Records actually averaged.
    pub n_used: usize,
    pub window: usize,
}

fn trailing_mean(ratios: impl Iterator<Item = Option<f64>>, n: usize, window: usize, what: &str) -> Result<Estimate> {
    if window == 0 {
        return Err(Error::input("window must be positive"));
    }
    let skip = n.saturating_sub(window);
    let used: Vec<f64> = ratios.skip(skip).flatten().collect();
    if used.is_empty() {
        return Err(Error::Degenerate(format!("every record in the {what} window is degenerate")));
    }
    Ok(Estimate { value: used.iter().sum::<f64>() / used.len() as f64, n_used: used.len(), window })
}

/// Smoothness estimate from consecutive (‖Δg‖_*, ‖Δx‖) pairs.
pub fn estimate_l(pairs: &[CurvaturePair], window: usize) -> Result<Estimate> {
    if pairs.is_empty() {
        return Err(Error::input("curvature estimate needs a log with at least two steps"));
    }
    let ratios = pairs.iter().map(|p| {
        (p.x_diff_primal >= DEGENERATE_STEP && p.grad_diff_dual.is_finite()).then(|| p.grad_diff_dual / p.x_diff_primal)
    });
    trailing_mean(ratios, pairs.len(), window, "curvature")
}

pub fn estimate_l_from_log(log: &RunLog, window: usize) -> Result<Estimate> {
    estimate_l(&log.curvature, window)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuOptions {
    pub loss_cap: f64,
    pub huber_delta: f64,
    pub max_iters: usize,
}

impl Default for MuOptions {
    fn default() -> Self {
        Self { loss_cap: DEFAULT_LOSS_CAP, huber_delta: DEFAULT_HUBER_DELTA, max_iters: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub n_points: usize,
    pub iterations: usize,
}

fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("no spread in the regressor".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Huber regression of `y` on `x` with intercept, by iteratively reweighted
/// least squares. Residual scale is re-estimated each round as MAD/0.6745;
/// when it vanishes the current fit is already exact on the bulk of the data.
pub fn huber_line(x: &[f64], y: &[f64], delta: f64, max_iters: usize) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::input("regressor and response lengths differ"));
    }
    if x.len() < 2 {
        return Err(Error::input(format!("need at least 2 points, got {}", x.len())));
    }
    if !(delta > 0.0) {
        return Err(Error::config("Huber threshold must be positive"));
    }
    let n = x.len();
    let mut w = vec![1.0; n];
    let (mut slope, mut intercept) = weighted_line(x, y, &w)?;
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    for _ in 0..max_iters {
        let r: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - slope * a - intercept).collect();
        let scale = median(&mut r.iter().map(|v| v.abs()).collect::<Vec<_>>()) / MAD_TO_SIGMA;
        if scale <= 1e-14 * y_scale {
            break;
        }
        for (wi, ri) in w.iter_mut().zip(&r) {
            let u = (ri / scale).abs();
            *wi = if u <= delta { 1.0 } else { delta / u };
        }
        let (s, i) = weighted_line(x, y, &w)?;
        iterations += 1;
        let done = (s - slope).abs() <= 1e-13 * s.abs().max(1e-300) && (i - intercept).abs() <= 1e-13 * y_scale;
        slope = s;
        intercept = i;
        if done {
            break;
        }
    }
    Ok(LineFit { slope, intercept, n_points: n, iterations })
}

/// KL-constant estimate from (loss, dual gradient norm) samples: the slope of
/// a Huber fit of dual norm against loss over samples with loss below the cap.
pub fn estimate_mu(samples: &[(f64, f64)], opts: MuOptions) -> Result<LineFit> {
    let kept: Vec<(f64, f64)> =
        samples.iter().copied().filter(|(l, g)| l.is_finite() && g.is_finite() && *l < opts.loss_cap).collect();
    if kept.len() < 2 {
        return Err(Error::input(format!(
            "need at least 2 samples with loss below {}, got {}",
            opts.loss_cap,
            kept.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = kept.into_iter().unzip();
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Degenerate("all losses are equal".into()));
    }
    huber_line(&x, &y, opts.huber_delta, opts.max_iters)
}

/// Norm-equivalence estimate from precomputed (‖g − G‖_*, ‖g − G‖₂) pairs.
/// Pairs with a zero Euclidean norm are skipped.
pub fn estimate_rho_from_norms(pairs: &[(f64, f64)], window: usize) -> Result<Estimate> {
    if pairs.is_empty() {
        return Err(Error::input("need at least one (dual, euclidean) pair"));
    }
    let ratios = pairs.iter().map(|(d, e)| (*e > 0.0 && d.is_finite()).then(|| d / e));
    trailing_mean(ratios, pairs.len(), window, "norm-ratio")
}

/// Norm-equivalence estimate from minibatch / reference gradient pairs.
pub fn estimate_rho(pairs: &[(LayeredPoint, LayeredPoint)], geom: &Geometry, window: usize) -> Result<Estimate> {
    let norms = pairs
        .iter()
        .map(|(g, big)| {
            geom.check(g)?;
            geom.check(big)?;
            let diff = g.sub(big);
            Ok((composite_dual_unchecked(&diff, geom), diff.euclidean_norm()))
        })
        .collect::<Result<Vec<_>>>()?;
    estimate_rho_from_norms(&norms, window)
}

/// One factor `(covariate + shift)^exponent` of a shifted power law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawTerm {
    pub name: String,
    pub shift: f64,
    pub exponent: f64,
}

impl PowerLawTerm {
    pub fn new(name: impl Into<String>, shift: f64, exponent: f64) -> Self {
        Self { name: name.into(), shift, exponent }
    }
}

/// `C · ∏ (covariate_j + shift_j)^{exponent_j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawModel {
    #[serde(rename = "C")]
    pub coefficient: f64,
    pub terms: Vec<PowerLawTerm>,
}

impl PowerLawModel {
    /// Evaluates at covariates given in term order.
    pub fn eval(&self, covariates: &[f64]) -> Result<f64> {
        if covariates.len() != self.terms.len() {
            return Err(Error::input(format!(
                "{} covariates for a {}-term power law",
                covariates.len(),
                self.terms.len()
            )));
        }
        let mut v = self.coefficient;
        for (t, x) in self.terms.iter().zip(covariates) {
            let base = x + t.shift;
            if !(base > 0.0) {
                return Err(Error::input(format!("{} + shift = {x} + {} is not positive", t.name, t.shift)));
            }
            v *= base.powf(t.exponent);
        }
        Ok(v)
    }

    /// Evaluates with covariates looked up by name.
    pub fn eval_named(&self, covariates: &BTreeMap<String, f64>) -> Result<f64> {
        let xs = self
            .terms
            .iter()
            .map(|t| {
                covariates.get(&t.name).copied().ok_or_else(|| Error::input(format!("missing covariate `{}`", t.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        self.eval(&xs)
    }

    /// One-variable view: evaluates with the covariate `name` set to `x` and
    /// every other covariate taken from `fixed`.
    pub fn eval_along(&self, name: &str, x: f64, fixed: &BTreeMap<String, f64>) -> Result<f64> {
        let mut all = fixed.clone();
        all.insert(name.to_string(), x);
        self.eval_named(&all)
    }
}

/// Whether a shift or exponent is fitted or held at a value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Free,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermShape {
    pub name: String,
    pub shift: Param,
    pub exponent: Param,
}

/// Functional form of a power law to fit; the coefficient is always free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawShape {
    pub terms: Vec<TermShape>,
}

impl PowerLawShape {
    /// All shifts and exponents free.
    pub fn free(names: &[&str]) -> Self {
        Self {
            terms: names
                .iter()
                .map(|n| TermShape { name: n.to_string(), shift: Param::Free, exponent: Param::Free })
                .collect(),
        }
    }

    pub fn n_free(&self) -> usize {
        1 + self
            .terms
            .iter()
            .map(|t| matches!(t.shift, Param::Free) as usize + matches!(t.exponent, Param::Free) as usize)
            .sum::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { starts: 16, seed: 0, max_iters: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub model: PowerLawModel,
    /// Σ φ(r_i²) at the optimum, φ(z) = 2(√(1+z) − 1).
    pub objective: f64,
    /// Root mean square log residual.
    pub rms_log_residual: f64,
    pub n_points: usize,
}

fn soft_l1(z: f64) -> f64 {
    2.0 * ((1.0 + z).sqrt() - 1.0)
}

/// Parameter vector layout: [log C, (shift_j if free), (exponent_j if free)...].
struct Layout<'a> {
    shape: &'a PowerLawShape,
}

impl Layout<'_> {
    fn unpack(&self, p: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let mut it = p[1..].iter();
        let mut shifts = Vec::with_capacity(self.shape.terms.len());
        let mut exps = Vec::with_capacity(self.shape.terms.len());
        for t in &self.shape.terms {
            shifts.push(match t.shift {
                Param::Free => *it.next().expect("layout"),
                Param::Fixed(v) => v,
            });
            exps.push(match t.exponent {
                Param::Free => *it.next().expect("layout"),
                Param::Fixed(v) => v,
            });
        }
        (p[0], shifts, exps)
    }

    fn pack(&self, log_c: f64, shifts: &[f64], exps: &[f64]) -> Vec<f64> {
        let mut p = vec![log_c];
        for (i, t) in self.shape.terms.iter().enumerate() {
            if t.shift == Param::Free {
                p.push(shifts[i]);
            }
            if t.exponent == Param::Free {
                p.push(exps[i]);
            }
        }
        p
    }
}

struct Problem<'a> {
    xs: &'a [Vec<f64>],
    log_y: Vec<f64>,
    layout: Layout<'a>,
}

impl Problem<'_> {
    /// Log residuals, or `None` if a shifted base leaves the positive axis.
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        let (log_c, shifts, exps) = self.layout.unpack(p);
        self.xs
            .iter()
            .zip(&self.log_y)
            .map(|(x, ly)| {
                let mut m = log_c;
                for j in 0..shifts.len() {
                    let b = x[j] + shifts[j];
                    if !(b > 0.0) {
                        return None;
                    }
                    m += exps[j] * b.ln();
                }
                Some(ly - m)
            })
            .collect()
    }

    fn objective(r: &[f64]) -> f64 {
        r.iter().map(|v| soft_l1(v * v)).sum()
    }

    /// Jacobian of the residuals.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let (_, shifts, exps) = self.layout.unpack(p);
        let mut jac = DMatrix::zeros(self.xs.len(), p.len());
        for (i, x) in self.xs.iter().enumerate() {
            jac[(i, 0)] = -1.0;
            let mut col = 1;
            for (j, t) in self.layout.shape.terms.iter().enumerate() {
                let b = x[j] + shifts[j];
                if t.shift == Param::Free {
                    jac[(i, col)] = -exps[j] / b;
                    col += 1;
                }
                if t.exponent == Param::Free {
                    jac[(i, col)] = -b.ln();
                    col += 1;
                }
            }
        }
        jac
    }

    /// Closed-form log C for given shifts/exponents (least squares).
    fn best_log_c(&self, shifts: &[f64], exps: &[f64]) -> Option<f64> {
        let mut acc = 0.0;
        for (x, ly) in self.xs.iter().zip(&self.log_y) {
            let mut m = 0.0;
            for j in 0..shifts.len() {
                let b = x[j] + shifts[j];
                if !(b > 0.0) {
                    return None;
                }
                m += exps[j] * b.ln();
            }
            acc += ly - m;
        }
        Some(acc / self.xs.len() as f64)
    }

    /// Levenberg–Marquardt on the soft-ℓ1 objective, with IRLS weights
    /// φ'(r²) = 1/√(1 + r²) on the Gauss–Newton system.
    fn local_fit(&self, mut p: Vec<f64>, max_iters: usize) -> Option<(Vec<f64>, f64)> {
        let mut r = self.residuals(&p)?;
        let mut f = Self::objective(&r);
        let mut lambda: f64 = 1e-3;
        let n = p.len();
        for _ in 0..max_iters {
            let jac = self.jacobian(&p);
            let w: Vec<f64> = r.iter().map(|v| 1.0 / (1.0 + v * v).sqrt()).collect();
            let mut jtwj = DMatrix::<f64>::zeros(n, n);
            let mut jtwr = DVector::<f64>::zeros(n);
            for i in 0..r.len() {
                let row = jac.row(i);
                for a in 0..n {
                    jtwr[a] += w[i] * row[a] * r[i];
                    for b in 0..n {
                        jtwj[(a, b)] += w[i] * row[a] * row[b];
                    }
                }
            }
            let mut improved = false;
            for _ in 0..40 {
                let mut lhs = jtwj.clone();
                for a in 0..n {
                    lhs[(a, a)] += lambda * jtwj[(a, a)].max(1e-12);
                }
                let Some(step) = lhs.lu().solve(&(-&jtwr)) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                if let Some(rc) = self.residuals(&cand) {
                    let fc = Self::objective(&rc);
                    if fc.is_finite() && fc <= f {
                        let rel = (f - fc) / f.max(1e-300);
                        let step_small = step.norm() <= 1e-14 * (1.0 + p.iter().map(|v| v * v).sum::<f64>().sqrt());
                        p = cand;
                        r = rc;
                        f = fc;
                        lambda = (lambda * 0.3).max(1e-12);
                        improved = true;
                        if rel < 1e-15 || step_small || f < 1e-30 {
                            return Some((p, f));
                        }
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        Some((p, f))
    }
}

/// Fits a shifted power law in log space under the soft-ℓ1 loss
/// φ(z) = 2(√(1+z) − 1) of squared log residuals. Multi-start: one start from
/// zero shifts and log-log least squares, the rest with random exponents of
/// magnitude log-uniform in [0.01, 1] and random sign. Starts run in parallel
/// and each draws from its own stream, so the result does not depend on
/// scheduling.
pub fn fit_power_law(observations: &[(Vec<f64>, f64)], shape: &PowerLawShape, opts: FitOptions) -> Result<PowerLawFit> {
    if shape.terms.is_empty() {
        return Err(Error::config("power-law shape has no terms"));
    }
    for (i, t) in shape.terms.iter().enumerate() {
        if shape.terms[..i].iter().any(|o| o.name == t.name) {
            return Err(Error::config(format!("duplicate covariate `{}`", t.name)));
        }
    }
    let d = shape.terms.len();
    if observations.len() < shape.n_free() {
        return Err(Error::input(format!(
            "{} observations for {} free parameters",
            observations.len(),
            shape.n_free()
        )));
    }
    for (i, (x, y)) in observations.iter().enumerate() {
        if x.len() != d {
            return Err(Error::input(format!("observation {i} has {} covariates, expected {d}", x.len())));
        }
        if !(y.is_finite() && *y > 0.0) {
            return Err(Error::input(format!("observation {i}: value {y} is not positive")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("observation {i}: non-finite covariate")));
        }
    }
    let xs: Vec<Vec<f64>> = observations.iter().map(|(x, _)| x.clone()).collect();
    let prob = Problem { xs: &xs, log_y: observations.iter().map(|(_, y)| y.ln()).collect(), layout: Layout { shape } };

    for (j, t) in shape.terms.iter().enumerate() {
        if let Param::Fixed(s) = t.shift {
            if xs.iter().any(|x| !(x[j] + s > 0.0)) {
                return Err(Error::input(format!(
                    "fixed shift {s} makes `{}` + shift non-positive on the data",
                    t.name
                )));
            }
        }
    }

    // Feasible initial shifts: 0 when every covariate is positive, otherwise
    // just enough to make the smallest base equal to 1.
    let init_shifts: Vec<f64> = shape
        .terms
        .iter()
        .enumerate()
        .map(|(j, t)| match t.shift {
            Param::Fixed(s) => s,
            Param::Free => {
                let lo = xs.iter().map(|x| x[j]).fold(f64::INFINITY, f64::min);
                if lo > 0.0 {
                    0.0
                } else {
                    1.0 - lo
                }
            }
        })
        .collect();

    let starts = opts.starts.max(1);
    let results = par::map_range(starts, |s| {
        let exps: Vec<f64> = if s == 0 {
            loglog_exponents(&prob, &init_shifts)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s as u64);
            shape
                .terms
                .iter()
                .map(|t| match t.exponent {
                    Param::Fixed(e) => e,
                    Param::Free => {
                        let mag = 10f64.powf(rng.random_range(-2.0..=0.0));
                        if rng.random::<bool>() {
                            mag
                        } else {
                            -mag
                        }
                    }
                })
                .collect()
        };
        let log_c = prob.best_log_c(&init_shifts, &exps)?;
        prob.local_fit(prob.layout.pack(log_c, &init_shifts, &exps), opts.max_iters)
    });
    let (p, objective) = results
        .into_iter()
        .flatten()
        .filter(|(_, f)| f.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::NonConvergence("no start produced a finite fit".into()))?;
    let r = prob.residuals(&p).expect("accepted fits are feasible");
    let (log_c, shifts, exps) = prob.layout.unpack(&p);
    Ok(PowerLawFit {
        model: PowerLawModel {
            coefficient: log_c.exp(),
            terms: shape
                .terms
                .iter()
                .zip(shifts.iter().zip(&exps))
                .map(|(t, (s, e))| PowerLawTerm::new(t.name.clone(), *s, *e))
                .collect(),
        },
        objective,
        rms_log_residual: (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt(),
        n_points: observations.len(),
    })
}

/// Ordinary log-log least-squares exponents at fixed shifts (fixed exponents
/// are respected by moving them to the response).
fn loglog_exponents(prob: &Problem<'_>, shifts: &[f64]) -> Vec<f64> {
    let terms = &prob.layout.shape.terms;
    let free: Vec<usize> = (0..terms.len()).filter(|&j| terms[j].exponent == Param::Free).collect();
    let fixed_part = |x: &[f64]| -> f64 {
        terms
            .iter()
            .enumerate()
            .filter_map(|(j, t)| match t.exponent {
                Param::Fixed(e) => Some(e * (x[j] + shifts[j]).ln()),
                Param::Free => None,
            })
            .sum()
    };
    let n = prob.xs.len();
    let a = DMatrix::from_fn(n, free.len() + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            (prob.xs[i][free[c - 1]] + shifts[free[c - 1]]).ln()
        }
    });
    let b = DVector::from_fn(n, |i, _| prob.log_y[i] - fixed_part(&prob.xs[i]));
    let sol = a.svd(true, true).solve(&b, 1e-12).ok();
    terms
        .iter()
        .enumerate()
        .map(|(j, t)| match t.exponent {
            Param::Fixed(e) => e,
            Param::Free => {
                let c = free.iter().position(|&f| f == j).expect("free index") + 1;
                sol.as_ref().map(|s| s[c]).filter(|v| v.is_finite()).unwrap_or(-0.5)
            }
        })
        .collect()
}

/// Empirical gradient variance at several batch sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    /// (B, variance) pairs with B increasing.
    pub points: Vec<(f64, f64)>,
    /// `C·(B + shift)^{exponent}`; the decay rate is `−exponent`.
    pub fitted: PowerLawModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceOptions {
    /// Pool of samples `m·B` held fixed across batch sizes.
    pub pool_size: usize,
    /// Sequence length passed to the oracle.
    pub seq: f64,
    pub seed: u64,
    /// Divide by the parameter dimension (variance per coordinate).
    pub per_coordinate: bool,
    /// Fit the shift of the power law; otherwise fix it at zero.
    pub fit_shift: bool,
}

impl Default for VarianceOptions {
    fn default() -> Self {
        Self { pool_size: 32768, seq: 1.0, seed: 0, per_coordinate: false, fit_shift: true }
    }
}

/// Draws `m = pool_size / B` independent minibatch gradients at `x` for each
/// `B` and records their sample variance in squared Euclidean norm (sum of
/// squared deviations from the sample mean, divided by m − 1). Draw `j` at
/// batch size index `i` uses its own random stream, so results do not depend
/// on evaluation order.
pub fn estimate_variance<P: StochasticObjective + ?Sized>(
    oracle: &P,
    x: &LayeredPoint,
    batch_sizes: &[usize],
    opts: VarianceOptions,
) -> Result<VarianceCurve> {
    if batch_sizes.is_empty() {
        return Err(Error::input("no batch sizes given"));
    }
    if batch_sizes.windows(2).any(|w| w[0] >= w[1]) || batch_sizes[0] == 0 {
        return Err(Error::input("batch sizes must be positive and strictly increasing"));
    }
    oracle.geometry().check(x)?;
    let mut points = Vec::with_capacity(batch_sizes.len());
    for (bi, &b) in batch_sizes.iter().enumerate() {
        if !opts.pool_size.is_multiple_of(b) {
            return Err(Error::input(format!("pool size {} is not divisible by batch size {b}", opts.pool_size)));
        }
        let m = opts.pool_size / b;
        if m < 2 {
            return Err(Error::input(format!("batch size {b} leaves fewer than 2 minibatches")));
        }
        let batch = Batch::new(b as f64, opts.seq);
        let draws = par::map_range(m, |j| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(((bi as u64) << 32) | j as u64);
            oracle.gradient_sample(x, batch, &mut rng).map(|g| g.values().collect::<Vec<f64>>())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let dim = draws[0].len();
        let mut mean = vec![0.0; dim];
        for g in &draws {
            for (a, v) in mean.iter_mut().zip(g) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let ss: f64 = draws.iter().map(|g| g.iter().zip(&mean).map(|(v, a)| (v - a) * (v - a)).sum::<f64>()).sum();
        let mut var = ss / (m - 1) as f64;
        if opts.per_coordinate {
            var /= dim as f64;
        }
        points.push((b as f64, var));
    }
    if points.iter().any(|(_, v)| !(*v > 0.0)) {
        return Err(Error::Degenerate("zero gradient variance; nothing to fit".into()));
    }
    let shape = PowerLawShape {
        terms: vec![TermShape {
            name: "batch".into(),
            shift: if opts.fit_shift { Param::Free } else { Param::Fixed(0.0) },
            exponent: Param::Free,
        }],
    };
    let obs: Vec<(Vec<f64>, f64)> = points.iter().map(|(b, v)| (vec![*b], *v)).collect();
    let fitted = fit_power_law(&obs, &shape, FitOptions { seed: opts.seed, ..Default::default() })?.model;
    Ok(VarianceCurve { points, fitted })
}
