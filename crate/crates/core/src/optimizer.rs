//! Momentum stochastic conditional gradient.
//!
//! SCG keeps a momentum buffer `m ← (1−α)m + αg`, asks the LMO for
//! `d = argmin_{‖d‖≤1} ⟨m, d⟩` and moves by the convex combination
//! `x ← (1−β)x + βη d`, which never leaves the η-ball. The unconstrained
//! variant (uSCG) instead takes `x ← x + η d`.
//!
//! Runs are deterministic functions of (problem, config, seed). Every SCG run
//! whose start satisfies `2‖x₀‖ ≤ η` per block is checked online against the
//! iterate bounds `‖x_k‖ ≤ η(1 − ½∏(1−β_j))` and `‖x_{k+1} − x_k‖ ≤ 2β_kη`;
//! with constant β these are exactly the bounds `η(1 − ½(1−β)^k)` of the
//! convergence analysis.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    block_primal, block_primals, composite_dual_unchecked, composite_primal_of, lmo_unchecked, Geometry, LayeredPoint,
    NormMode, PolarMethod,
};
use crate::problems::{Batch, StochasticObjective};

/// Fraction of the run spent in linear warmdown when not given explicitly.
pub const DEFAULT_WARMDOWN_FRACTION: f64 = 0.28;

/// Absolute rounding slack (times max(1, η)) allowed by the invariant checker.
pub const INVARIANT_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Scg,
    Uscg,
}

/// Frank–Wolfe stepsize schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    Constant {
        beta: f64,
    },
    /// `β_k = γ` for `k < n − m`, then `γ(n − k)/m`.
    Warmdown {
        gamma: f64,
        total_steps: usize,
        #[serde(default)]
        warmdown_steps: Option<usize>,
    },
    /// Constant `β = c/K`; requires `K ≥ 2c`.
    TheoremPrescribed {
        c: f64,
        #[serde(rename = "K")]
        k: usize,
    },
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaSchedule::Constant { beta } => {
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::config(format!("constant beta must lie in (0, 1], got {beta}")));
                }
            }
            BetaSchedule::Warmdown { gamma, total_steps, warmdown_steps } => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(Error::config(format!("warmdown gamma must lie in (0, 1], got {gamma}")));
                }
                if total_steps == 0 {
                    return Err(Error::config("warmdown total_steps must be positive"));
                }
                if let Some(m) = warmdown_steps {
                    if m == 0 || m > total_steps {
                        return Err(Error::config(format!("warmdown_steps must lie in [1, {total_steps}], got {m}")));
                    }
                }
            }
            BetaSchedule::TheoremPrescribed { c, k } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::config(format!("c must be positive, got {c}")));
                }
                if (k as f64) < 2.0 * c {
                    return Err(Error::config(format!("theorem schedule needs K >= 2c, got K={k}, c={c}")));
                }
            }
        }
        Ok(())
    }

    fn warmdown_len(total_steps: usize, warmdown_steps: Option<usize>) -> usize {
        warmdown_steps.unwrap_or_else(|| ((DEFAULT_WARMDOWN_FRACTION * total_steps as f64).round() as usize).max(1))
    }

    /// β used at step `k` (0-based).
    pub fn beta_at(&self, k: usize) -> f64 {
        match *self {
            BetaSchedule::Constant { beta } => beta,
            BetaSchedule::Warmdown { gamma, total_steps: n, warmdown_steps } => {
                let m = Self::warmdown_len(n, warmdown_steps);
                if k + m < n {
                    gamma
                } else {
                    gamma * n.saturating_sub(k) as f64 / m as f64
                }
            }
            BetaSchedule::TheoremPrescribed { c, k: big_k } => c / big_k as f64,
        }
    }

    /// Number of steps over which the schedule is defined, if bounded.
    fn horizon(&self) -> Option<usize> {
        match *self {
            BetaSchedule::Warmdown { total_steps, .. } => Some(total_steps),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumInit {
    /// `m₀ = g(x₀; ξ₀)`.
    #[default]
    FirstSample,
    Zero,
}

fn one_f64() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// Optimizer hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScgConfig {
    /// Momentum mixing α ∈ (0, 1].
    pub alpha: f64,
    pub beta_schedule: BetaSchedule,
    /// Per-block η; defaults to the geometry radii.
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    /// Iteration budget K.
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
    /// Batch size B seen by the noise model.
    #[serde(default = "one_f64")]
    pub batch: f64,
    /// Sequence length S seen by the noise model.
    #[serde(default = "one_f64")]
    pub seq: f64,
    #[serde(default)]
    pub momentum_init: MomentumInit,
    /// Exact loss every `eval_every` steps; 0 evaluates only the final point.
    #[serde(default = "one_usize")]
    pub eval_every: usize,
    #[serde(default)]
    pub polar: PolarMethod,
    /// Per-step record every `log_every` steps; 0 keeps only the summary.
    #[serde(default = "one_usize")]
    pub log_every: usize,
    /// Keep (‖g_k − g_{k−1}‖_*, ‖x_k − x_{k−1}‖) pairs for curvature estimates.
    #[serde(default = "yes")]
    pub record_curvature: bool,
    #[serde(default = "yes")]
    pub check_invariants: bool,
}

impl ScgConfig {
    pub fn new(alpha: f64, beta_schedule: BetaSchedule, iters: usize, seed: u64) -> Self {
        Self {
            alpha,
            beta_schedule,
            radii: None,
            iters,
            seed,
            batch: 1.0,
            seq: 1.0,
            momentum_init: MomentumInit::FirstSample,
            eval_every: 1,
            polar: PolarMethod::default(),
            log_every: 1,
            record_curvature: true,
            check_invariants: true,
        }
    }

    pub fn with_batch(mut self, b: f64, s: f64) -> Self {
        self.batch = b;
        self.seq = s;
        self
    }

    /// Summary-only run: no per-step records, no curvature pairs, no
    /// intermediate loss evaluations.
    pub fn quiet(mut self) -> Self {
        self.log_every = 0;
        self.eval_every = 0;
        self.record_curvature = false;
        self
    }

    pub fn validate(&self, geom: &Geometry) -> Result<()> {
        check_alpha(self.alpha)?;
        self.beta_schedule.validate()?;
        if let Some(n) = self.beta_schedule.horizon() {
            if self.iters > n {
                return Err(Error::config(format!("{} iterations exceed the schedule's {n} steps", self.iters)));
            }
        }
        Batch::new(self.batch, self.seq).validate()?;
        self.resolve_radii(geom).map(|_| ())
    }

    pub fn resolve_radii(&self, geom: &Geometry) -> Result<Vec<f64>> {
        match &self.radii {
            None => Ok(geom.radii()),
            Some(r) => {
                if r.len() != geom.len() {
                    return Err(Error::config(format!("{} radii for {} blocks", r.len(), geom.len())));
                }
                if let Some(bad) = r.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::config(format!("radii must be finite and >= 0, got {bad}")));
                }
                Ok(r.clone())
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::config(format!("beta must lie in [0, 1], got {beta}")))
    }
}

/// One stage of a restart schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    /// Tokens processed in this stage.
    pub tokens: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "S")]
    pub s: f64,
    pub beta: f64,
    pub alpha: f64,
    #[serde(default)]
    pub note: String,
}

impl Stage {
    /// Iterations K_i = ⌊tokens/(B·S)⌋.
    pub fn iters(&self) -> usize {
        (self.tokens / (self.b * self.s)).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
    /// Re-initialize momentum from the first sample of each stage.
    #[serde(default)]
    pub reset_momentum: bool,
}

impl StagePlan {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        let p = Self { stages, reset_momentum: false };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("stage plan is empty"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.tokens.is_finite() && s.tokens > 0.0) {
                return Err(Error::config(format!("stage {i}: token allotment must be positive")));
            }
            Batch::new(s.b, s.s).validate().map_err(|e| Error::config(format!("stage {i}: {e}")))?;
            check_alpha(s.alpha).map_err(|e| Error::config(format!("stage {i}: {e}")))?;
            if !(s.beta > 0.0 && s.beta <= 1.0) {
                return Err(Error::config(format!("stage {i}: beta must lie in (0, 1], got {}", s.beta)));
            }
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> f64 {
        self.stages.iter().map(|s| s.tokens).sum()
    }
}

/// One logged iteration. Norms refer to the iterate `x_k` before the update,
/// the gradient sample drawn at `x_k`, and the updated momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub loss: Option<f64>,
    pub x_primal: f64,
    pub g_dual: f64,
    pub m_dual: f64,
    pub beta: f64,
    pub step_disp: f64,
    pub stage: usize,
}

/// Consecutive-iterate pair used by curvature estimation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvaturePair {
    pub grad_diff_dual: f64,
    pub x_diff_primal: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `‖x_k‖ > η(1 − ½∏(1−β_j))`
    IterateNorm,
    /// `‖x_{k+1} − x_k‖ > 2β_kη`
    StepLength,
    /// `‖x_{k+1}‖ > (1−β_k)‖x_k‖ + β_kη`
    Convexity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub k: usize,
    pub block: String,
    pub kind: ViolationKind,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// False when the checker's preconditions did not hold (uSCG, a start
    /// outside half the ball, or checking disabled).
    pub applicable: bool,
    pub steps_checked: usize,
    pub violations: usize,
    /// The first few violations, for diagnostics.
    pub examples: Vec<Violation>,
}

const MAX_VIOLATION_EXAMPLES: usize = 16;

impl InvariantReport {
    fn record(&mut self, v: Violation) {
        self.violations += 1;
        if self.examples.len() < MAX_VIOLATION_EXAMPLES {
            self.examples.push(v);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    /// Global step index at which each stage starts.
    pub stage_starts: Vec<usize>,
    pub iters: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_x: LayeredPoint,
    pub curvature: Vec<CurvaturePair>,
    pub invariants: InvariantReport,
}

pub const RUNLOG_CSV_HEADER: [&str; 8] = ["k", "loss", "x_primal", "g_dual", "m_dual", "beta", "step_disp", "stage"];

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl RunLog {
    /// Writes the per-step records as CSV. Unevaluated losses are empty fields.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RUNLOG_CSV_HEADER).map_err(csv_err)?;
        for r in &self.records {
            out.write_record([
                r.k.to_string(),
                r.loss.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.x_primal),
                fmt_f64(r.g_dual),
                fmt_f64(r.m_dual),
                fmt_f64(r.beta),
                fmt_f64(r.step_disp),
                r.stage.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ASCII"))
    }

    /// Writes the curvature pairs as `grad_diff_dual,x_diff_primal` CSV.
    pub fn write_curvature_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["grad_diff_dual", "x_diff_primal"]).map_err(csv_err)?;
        for p in &self.curvature {
            out.write_record([fmt_f64(p.grad_diff_dual), fmt_f64(p.x_diff_primal)]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse { line: p.line() as usize, msg: e.to_string() },
        None => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse { line: 0, msg: format!("{other:?}") },
        },
    }
}

fn momentum_update(m: &mut LayeredPoint, g: &LayeredPoint, alpha: f64) {
    if alpha == 1.0 {
        m.clone_from(g);
        return;
    }
    for (mb, gb) in m.blocks.iter_mut().zip(&g.blocks) {
        for (mv, gv) in mb.values.iter_mut().zip(&gb.values) {
            *mv = (1.0 - alpha) * *mv + alpha * gv;
        }
    }
}

fn check_step_inputs(
    geom: &Geometry,
    x: &LayeredPoint,
    m: &LayeredPoint,
    g: &LayeredPoint,
    radii: &[f64],
) -> Result<()> {
    geom.check(x)?;
    geom.check(m)?;
    geom.check(g).map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFinite("gradient sample".into()),
        e => e,
    })?;
    if radii.len() != geom.len() {
        return Err(Error::ShapeMismatch(format!("{} radii for {} blocks", radii.len(), geom.len())));
    }
    Ok(())
}

/// One SCG step: `m' = (1−α)m + αg`, `d = lmo(m')`,
/// `x'_ℓ = (1−β)x_ℓ + βη_ℓ d_ℓ`. Returns `(x', m')`.
#[allow(clippy::too_many_arguments)]
pub fn scg_step(
    geom: &Geometry,
    x: &LayeredPoint,
    m: &LayeredPoint,
    g: &LayeredPoint,
    alpha: f64,
    beta: f64,
    radii: &[f64],
    polar: PolarMethod,
) -> Result<(LayeredPoint, LayeredPoint)> {
    check_alpha(alpha)?;
    check_beta(beta)?;
    check_step_inputs(geom, x, m, g, radii)?;
    let mut m1 = m.clone();
    momentum_update(&mut m1, g, alpha);
    let d = lmo_unchecked(&m1, geom, polar)?;
    let mut x1 = x.clone();
    apply_scg(&mut x1, &d, beta, radii);
    Ok((x1, m1))
}

/// One uSCG step: as [`scg_step`] but `x'_ℓ = x_ℓ + η·s_ℓ·d_ℓ` with per-block
/// scales `s_ℓ` (the block radii).
#[allow(clippy::too_many_arguments)]
pub fn uscg_step(
    geom: &Geometry,
    x: &LayeredPoint,
    m: &LayeredPoint,
    g: &LayeredPoint,
    alpha: f64,
    eta: f64,
    radii: &[f64],
    polar: PolarMethod,
) -> Result<(LayeredPoint, LayeredPoint)> {
    check_alpha(alpha)?;
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::config(format!("eta must be finite and >= 0, got {eta}")));
    }
    check_step_inputs(geom, x, m, g, radii)?;
    let mut m1 = m.clone();
    momentum_update(&mut m1, g, alpha);
    let d = lmo_unchecked(&m1, geom, polar)?;
    let mut x1 = x.clone();
    apply_uscg(&mut x1, &d, eta, radii);
    Ok((x1, m1))
}

fn apply_scg(x: &mut LayeredPoint, d: &LayeredPoint, beta: f64, radii: &[f64]) {
    for ((xb, db), eta) in x.blocks.iter_mut().zip(&d.blocks).zip(radii) {
        let step = beta * eta;
        for (xv, dv) in xb.values.iter_mut().zip(&db.values) {
            *xv = (1.0 - beta) * *xv + step * dv;
        }
    }
}

fn apply_uscg(x: &mut LayeredPoint, d: &LayeredPoint, eta: f64, radii: &[f64]) {
    for ((xb, db), s) in x.blocks.iter_mut().zip(&d.blocks).zip(radii) {
        let step = eta * s;
        for (xv, dv) in xb.values.iter_mut().zip(&db.values) {
            *xv += step * dv;
        }
    }
}

/// A contiguous run of iterations sharing hyperparameters.
struct Segment {
    iters: usize,
    alpha: f64,
    batch: Batch,
    schedule: BetaSchedule,
    /// Offset subtracted from the global step before querying `schedule`.
    schedule_origin: usize,
}

/// Online Lemma-style bound checker.
struct Checker {
    radii: Vec<f64>,
    names: Vec<String>,
    /// ∏(1−β_j) over completed steps.
    contraction: f64,
    report: InvariantReport,
}

impl Checker {
    fn new(geom: &Geometry, radii: &[f64], x0: &LayeredPoint, enabled: bool, variant: Variant) -> Self {
        let x0_norms = block_primals(x0, geom);
        let applicable = enabled
            && variant == Variant::Scg
            && x0_norms.iter().zip(radii).all(|(n, eta)| 2.0 * n <= eta + INVARIANT_SLACK * eta.max(1.0));
        Self {
            radii: radii.to_vec(),
            names: geom.blocks.iter().map(|b| b.name.clone()).collect(),
            contraction: 1.0,
            report: InvariantReport { applicable, ..Default::default() },
        }
    }

    fn step(
        &mut self,
        k: usize,
        geom: &Geometry,
        x_prev_norms: &[f64],
        x_next: &LayeredPoint,
        diff: &LayeredPoint,
        beta: f64,
    ) -> Vec<f64> {
        let next_norms = block_primals(x_next, geom);
        if !self.report.applicable {
            return next_norms;
        }
        self.contraction *= 1.0 - beta;
        for (i, g) in geom.blocks.iter().enumerate() {
            let eta = self.radii[i];
            let slack = INVARIANT_SLACK * eta.max(1.0);
            let norm_bound = eta * (1.0 - 0.5 * self.contraction);
            let step = block_primal(g.kind, g.shape, &diff.blocks[i].values);
            let convex_bound = (1.0 - beta) * x_prev_norms[i] + beta * eta;
            for (kind, value, bound) in [
                (ViolationKind::IterateNorm, next_norms[i], norm_bound),
                (ViolationKind::StepLength, step, 2.0 * beta * eta),
                (ViolationKind::Convexity, next_norms[i], convex_bound),
            ] {
                if value > bound + slack {
                    self.report.record(Violation { k, block: self.names[i].clone(), kind, value, bound });
                }
            }
        }
        self.report.steps_checked += 1;
        next_norms
    }
}

fn drive<P: StochasticObjective + ?Sized>(
    problem: &P,
    config: &ScgConfig,
    variant: Variant,
    segments: &[Segment],
    reset_momentum: bool,
) -> Result<RunLog> {
    let geom = problem.geometry();
    config.validate(geom)?;
    let radii = config.resolve_radii(geom)?;
    let mut x = problem.initial_point();
    geom.check(&x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial_loss = problem.loss(&x)?;

    let total: usize = segments.iter().map(|s| s.iters).sum();
    let mut records = Vec::with_capacity(total.checked_div(config.log_every).map_or(0, |q| q + 1));
    let mut curvature = Vec::new();
    let mut stage_starts = Vec::with_capacity(segments.len());
    let mut checker = Checker::new(geom, &radii, &x, config.check_invariants, variant);
    let mut x_norms = block_primals(&x, geom);
    let mut m: Option<LayeredPoint> = None;
    // Previous gradient sample and the displacement of the step taken from it.
    let mut prev: Option<(LayeredPoint, f64)> = None;
    let mut k = 0usize;

    for (stage, seg) in segments.iter().enumerate() {
        stage_starts.push(k);
        if reset_momentum {
            m = None;
        }
        for _ in 0..seg.iters {
            let g = problem.gradient_sample(&x, seg.batch, &mut rng)?;
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient sample at step {k}")));
            }
            let mom = m.get_or_insert_with(|| match config.momentum_init {
                MomentumInit::FirstSample => g.clone(),
                MomentumInit::Zero => g.zeros_like(),
            });
            momentum_update(mom, &g, seg.alpha);
            let beta = seg.schedule.beta_at(k - seg.schedule_origin);
            check_beta(beta)?;
            let d = lmo_unchecked(mom, geom, config.polar)?;

            let x_prev = x.clone();
            match variant {
                Variant::Scg => apply_scg(&mut x, &d, beta, &radii),
                Variant::Uscg => apply_uscg(&mut x, &d, beta, &radii),
            }
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("iterate at step {}", k + 1)));
            }
            let diff = x.sub(&x_prev);

            if config.record_curvature {
                if let Some((pg, disp)) = &prev {
                    curvature.push(CurvaturePair {
                        grad_diff_dual: composite_dual_unchecked(&g.sub(pg), geom),
                        x_diff_primal: *disp,
                    });
                }
            }

            let logging = config.log_every > 0 && k.is_multiple_of(config.log_every);
            if logging {
                let loss = if config.eval_every > 0 && k.is_multiple_of(config.eval_every) {
                    Some(problem.loss(&x_prev)?)
                } else {
                    None
                };
                records.push(StepRecord {
                    k,
                    loss,
                    x_primal: composite_primal_of(&x_norms, geom, NormMode::Unweighted),
                    g_dual: composite_dual_unchecked(&g, geom),
                    m_dual: composite_dual_unchecked(mom, geom),
                    beta,
                    step_disp: composite_primal_of(&block_primals(&diff, geom), geom, NormMode::Unweighted),
                    stage,
                });
            }

            x_norms = checker.step(k, geom, &x_norms, &x, &diff, beta);
            if config.record_curvature {
                let disp = composite_primal_of(&block_primals(&diff, geom), geom, NormMode::Unweighted);
                prev = Some((g, disp));
            }
            k += 1;
        }
    }

    let final_loss = problem.loss(&x)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFinite("final loss".into()));
    }
    Ok(RunLog {
        records,
        stage_starts,
        iters: k,
        initial_loss,
        final_loss,
        final_x: x,
        curvature,
        invariants: checker.report,
    })
}

/// Runs `config.iters` steps of SCG or uSCG. For uSCG the schedule value β_k
/// plays the role of the stepsize multiplier: `x ← x + β_k η_ℓ d_ℓ`.
pub fn run<P: StochasticObjective + ?Sized>(problem: &P, config: &ScgConfig, variant: Variant) -> Result<RunLog> {
    let seg = Segment {
        iters: config.iters,
        alpha: config.alpha,
        batch: Batch::new(config.batch, config.seq),
        schedule: config.beta_schedule,
        schedule_origin: 0,
    };
    drive(problem, config, variant, &[seg], false)
}

/// Runs the stages of `plan` back to back on one random stream. The iterate
/// and (unless the plan resets it) the momentum buffer carry over; each stage
/// uses its own (B, S, β, α) for ⌊tokens/(B·S)⌋ steps. Radii, polar method,
/// logging and seed come from `base`.
pub fn run_staged<P: StochasticObjective + ?Sized>(
    problem: &P,
    plan: &StagePlan,
    base: &ScgConfig,
    variant: Variant,
) -> Result<RunLog> {
    plan.validate()?;
    let mut origin = 0;
    let segments: Vec<Segment> = plan
        .stages
        .iter()
        .map(|s| {
            let seg = Segment {
                iters: s.iters(),
                alpha: s.alpha,
                batch: Batch::new(s.b, s.s),
                schedule: BetaSchedule::Constant { beta: s.beta },
                schedule_origin: origin,
            };
            origin += seg.iters;
            seg
        })
        .collect();
    let total = origin;
    // The base schedule is irrelevant here; validate against a constant one so
    // a bounded base schedule does not reject longer plans.
    let mut cfg = base.clone();
    cfg.beta_schedule = BetaSchedule::Constant { beta: plan.stages[0].beta };
    cfg.iters = total;
    drive(problem, &cfg, variant, &segments, plan.reset_momentum)
}
