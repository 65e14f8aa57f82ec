//! Configuration files, sweeps and the command implementations behind the
//! `bst` binary.
//!
//! Every config is JSON with a `schema_version` field and rejects unknown
//! keys. Outputs are CSV (floats with 17 significant digits) and JSON
//! summaries that embed the resolved configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::estimation::{
    estimate_l, estimate_mu, estimate_rho_from_norms, fit_power_law, FitOptions, MuOptions, Param, PowerLawModel,
    PowerLawShape, TermShape, DEFAULT_WINDOW,
};
use crate::geometry::PolarMethod;
use crate::optimizer::{
    csv_err, fmt_f64, run, run_staged, BetaSchedule, CurvaturePair, MomentumInit, RunLog, ScgConfig, StagePlan, Variant,
};
use crate::par;
use crate::problems::{known_constants, NormFrame, Problem, ProblemSpec, StochasticObjective};
use crate::scaling::{
    critical_point, error_law, fitted, nonconvex_rule, plan_stages, sqrt_rule, theorem_alpha, transfer_model_size,
    transfer_token_budget, ErrorLawMode, FixedPointOptions, ModelConstants, ProblemConstants, Rounding, TunedConfig,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit status when a run finishes but the invariant checker found violations.
pub const EXIT_INVARIANT: i32 = 3;

fn check_schema(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::config(format!("unsupported schema_version {v}; this build reads {SCHEMA_VERSION}")))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Input of `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub problem: ProblemSpec,
    pub optimizer: ScgConfig,
    #[serde(default)]
    pub variant: Variant,
    /// When present, runs the stages instead of `optimizer.iters` steps.
    #[serde(default)]
    pub plan: Option<StagePlan>,
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        check_schema(c.schema_version)?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub final_loss: f64,
    pub initial_loss: f64,
    pub iters: usize,
    pub invariant_violations: usize,
    pub invariants_applicable: bool,
    pub invariant_examples: Vec<crate::optimizer::Violation>,
    pub stage_starts: Vec<usize>,
    pub config: TrainConfig,
}

/// Runs a training config and returns the log with its summary.
pub fn train(config: &TrainConfig) -> Result<(RunLog, TrainSummary)> {
    check_schema(config.schema_version)?;
    let problem = config.problem.build()?;
    let log = match &config.plan {
        Some(plan) => run_staged(&problem, plan, &config.optimizer, config.variant)?,
        None => run(&problem, &config.optimizer, config.variant)?,
    };
    let summary = TrainSummary {
        final_loss: log.final_loss,
        initial_loss: log.initial_loss,
        iters: log.iters,
        invariant_violations: log.invariants.violations,
        invariants_applicable: log.invariants.applicable,
        invariant_examples: log.invariants.examples.clone(),
        stage_starts: log.stage_starts.clone(),
        config: config.clone(),
    };
    Ok((log, summary))
}

/// `train --config F --out D`: writes `runlog.csv`, `curvature.csv` and
/// `summary.json` into `out`. Returns the summary.
pub fn cmd_train(config_path: &Path, out: &Path) -> Result<TrainSummary> {
    let config = TrainConfig::load(config_path)?;
    let (log, summary) = train(&config)?;
    fs::create_dir_all(out)?;
    log.write_csv(fs::File::create(out.join("runlog.csv"))?)?;
    log.write_curvature_csv(fs::File::create(out.join("curvature.csv"))?)?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Batch-size grid of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Grid {
    Points(Vec<GridPoint>),
    /// B = 2^e for e in [min_exp, max_exp] at fixed S.
    Pow2 {
        min_exp: u32,
        max_exp: u32,
        #[serde(rename = "S", default = "one")]
        s: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "S")]
    pub s: f64,
}

impl Grid {
    pub fn points(&self) -> Vec<GridPoint> {
        match self {
            Grid::Points(p) => p.clone(),
            Grid::Pow2 { min_exp, max_exp, s } => {
                (*min_exp..=*max_exp).map(|e| GridPoint { b: 2f64.powi(e as i32), s: *s }).collect()
            }
        }
    }
}

/// Per-point Frank–Wolfe stepsize.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaRule {
    /// β = c/K at each point.
    Theorem,
    /// β★ = c/K★ from the critical point, at every point.
    Critical,
    Fixed(f64),
}

/// Per-point momentum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaRule {
    /// Theorem α at ε = error_law(T, B, S).
    Theorem,
    /// Theorem α at the critical point (1 in asymptotic mode).
    Critical,
    Fixed(f64),
}

/// Where the sweep's theory constants come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstantsSource {
    /// Analytic constants of the quadratic in the given frame.
    Known(NormFrame),
    Explicit(ProblemConstants),
}

impl Default for ConstantsSource {
    fn default() -> Self {
        ConstantsSource::Known(NormFrame::Composite)
    }
}

fn default_reps() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schema_version: u32,
    pub problem: ProblemSpec,
    /// Token budget T.
    #[serde(rename = "T")]
    pub t: f64,
    pub grid: Grid,
    pub beta_rule: BetaRule,
    pub alpha_rule: AlphaRule,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub mode: ErrorLawMode,
    #[serde(default)]
    pub constants: ConstantsSource,
    /// Per-block η; defaults to the geometry radii.
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    #[serde(default)]
    pub polar: PolarMethod,
    #[serde(default)]
    pub momentum_init: MomentumInit,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        check_schema(c.schema_version)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be >= 1"));
        }
        if !(self.t.is_finite() && self.t >= 1.0) {
            return Err(Error::config("T must be >= 1"));
        }
        let pts = self.grid.points();
        if pts.is_empty() {
            return Err(Error::config("sweep grid is empty"));
        }
        for p in &pts {
            if !(p.b >= 1.0 && p.s >= 1.0 && p.b * p.s <= self.t) {
                return Err(Error::config(format!("grid point B={} S={} violates 1 <= B·S <= T", p.b, p.s)));
            }
        }
        Ok(())
    }

    /// Theory constants for this sweep.
    pub fn resolve_constants(&self, problem: &Problem) -> Result<ProblemConstants> {
        match &self.constants {
            ConstantsSource::Explicit(c) => {
                c.validate()?;
                Ok(*c)
            }
            ConstantsSource::Known(frame) => {
                let radii = self.radii.clone().unwrap_or_else(|| problem.geometry().radii());
                Ok(known_constants(problem, &radii, *frame)?.constants)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: f64,
    pub alpha: f64,
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
    pub predicted_eps: f64,
    pub predicted_regime: u8,
    pub invariant_violations: usize,
    /// Empty on success.
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub constants: ProblemConstants,
    pub critical_bs: f64,
    pub config: SweepConfig,
}

/// SplitMix64 finalizer, used to derive well-separated seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of repetition `rep` at a grid point. It depends on the point's (B, S)
/// values rather than its position, so reordering the grid only reorders rows.
pub fn point_seed(seed_base: u64, p: GridPoint, rep: usize) -> u64 {
    mix(seed_base ^ mix(p.b.to_bits() ^ mix(p.s.to_bits()) ^ mix(rep as u64)))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct PointPlan {
    k: usize,
    beta: f64,
    alpha: f64,
    eps: f64,
    regime: u8,
}

fn plan_point(cfg: &SweepConfig, consts: &ProblemConstants, p: GridPoint) -> Result<PointPlan> {
    let bs = p.b * p.s;
    let k = (cfg.t / bs).floor() as usize;
    let law = error_law(cfg.t, p.b, p.s, consts, cfg.mode)?;
    let crit = critical_point(cfg.t, consts).ok();
    let need_crit = || crit.ok_or_else(|| Error::config("critical rules need sigma_star > 0"));
    let beta = match cfg.beta_rule {
        BetaRule::Theorem => {
            let s = BetaSchedule::TheoremPrescribed { c: consts.c, k };
            s.validate()?;
            s.beta_at(0)
        }
        BetaRule::Critical => need_crit()?.beta,
        BetaRule::Fixed(b) => b,
    };
    let alpha = match cfg.alpha_rule {
        AlphaRule::Theorem => theorem_alpha(consts, law.eps, bs, cfg.mode),
        AlphaRule::Critical => {
            let c = need_crit()?;
            let eps = error_law(cfg.t, c.bs.max(1.0).min(cfg.t), 1.0, consts, cfg.mode)?.eps;
            theorem_alpha(consts, eps, c.bs, cfg.mode)
        }
        AlphaRule::Fixed(a) => a,
    };
    Ok(PointPlan { k, beta, alpha, eps: law.eps, regime: law.regime })
}

/// Runs a sweep. Grid points and repetitions execute in parallel (bounded
/// by `jobs`, 0 = all cores); a failing point yields a row with `error` set.
pub fn run_sweep(cfg: &SweepConfig, jobs: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let consts = cfg.resolve_constants(&problem)?;
    let points = cfg.grid.points();
    let plans: Vec<Result<PointPlan>> = points.iter().map(|p| plan_point(cfg, &consts, *p)).collect();

    let reps = cfg.repetitions;
    let tasks: Vec<(usize, usize)> =
        (0..points.len()).filter(|&i| plans[i].is_ok()).flat_map(|i| (0..reps).map(move |r| (i, r))).collect();
    let outcomes = par::with_jobs(jobs, || {
        par::map_slice(&tasks, |&(i, rep)| {
            let pp = plans[i].as_ref().expect("filtered");
            let p = points[i];
            let mut sc = ScgConfig::new(
                pp.alpha,
                BetaSchedule::Constant { beta: pp.beta },
                pp.k,
                point_seed(cfg.seed_base, p, rep),
            )
            .with_batch(p.b, p.s)
            .quiet();
            sc.radii = cfg.radii.clone();
            sc.polar = cfg.polar;
            sc.momentum_init = cfg.momentum_init;
            run(&problem, &sc, Variant::Scg).map(|log| (log.final_loss, log.invariants.violations))
        })
    });

    let mut by_point: Vec<Vec<&Result<(f64, usize)>>> = vec![Vec::new(); points.len()];
    for ((i, _), o) in tasks.iter().zip(&outcomes) {
        by_point[*i].push(o);
    }
    let rows = points
        .iter()
        .zip(plans)
        .zip(by_point)
        .map(|((p, plan), outs)| {
            let mut row = SweepRow {
                b: p.b,
                s: p.s,
                k: (cfg.t / (p.b * p.s)).floor() as usize,
                beta: f64::NAN,
                alpha: f64::NAN,
                final_loss_mean: f64::NAN,
                final_loss_std: f64::NAN,
                predicted_eps: f64::NAN,
                predicted_regime: 0,
                invariant_violations: 0,
                error: String::new(),
            };
            match plan {
                Err(e) => row.error = e.to_string(),
                Ok(pp) => {
                    row.beta = pp.beta;
                    row.alpha = pp.alpha;
                    row.predicted_eps = pp.eps;
                    row.predicted_regime = pp.regime;
                    let mut losses = Vec::with_capacity(outs.len());
                    for o in outs {
                        match o {
                            Ok((l, v)) => {
                                losses.push(*l);
                                row.invariant_violations += v;
                            }
                            Err(e) if row.error.is_empty() => row.error = e.to_string(),
                            Err(_) => {}
                        }
                    }
                    if row.error.is_empty() {
                        let (m, s) = mean_std(&losses);
                        row.final_loss_mean = m;
                        row.final_loss_std = s;
                    }
                }
            }
            row
        })
        .collect();
    let critical_bs = critical_point(cfg.t, &consts).map(|c| c.bs).unwrap_or(f64::NAN);
    Ok(SweepResult { rows, constants: consts, critical_bs, config: cfg.clone() })
}

pub const SWEEP_CSV_HEADER: [&str; 11] = [
    "B",
    "S",
    "K",
    "beta",
    "alpha",
    "final_loss_mean",
    "final_loss_std",
    "predicted_eps",
    "predicted_regime",
    "invariant_violations",
    "error",
];

impl SweepResult {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SWEEP_CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                fmt_f64(r.b),
                fmt_f64(r.s),
                r.k.to_string(),
                fmt_f64(r.beta),
                fmt_f64(r.alpha),
                fmt_f64(r.final_loss_mean),
                fmt_f64(r.final_loss_std),
                fmt_f64(r.predicted_eps),
                r.predicted_regime.to_string(),
                r.invariant_violations.to_string(),
                r.error.clone(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `sweep --config F --out D --jobs N`: writes `sweep.csv` and `summary.json`.
pub fn cmd_sweep(config_path: &Path, out: &Path, jobs: usize) -> Result<SweepResult> {
    let cfg = SweepConfig::load(config_path)?;
    let res = run_sweep(&cfg, jobs)?;
    fs::create_dir_all(out)?;
    res.write_csv(fs::File::create(out.join("sweep.csv"))?)?;
    let summary = json!({
        "constants": res.constants,
        "critical_bs": res.critical_bs,
        "config": res.config,
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(res)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanRule {
    ModelSize,
    TokenBudget,
    Stages,
    Sqrt,
    Nonconvex,
}

/// Model shape routed through the published fitted laws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub n_layer: f64,
    pub n_embd: f64,
    pub batch: f64,
}

impl ModelShape {
    fn constants(&self) -> Result<ModelConstants> {
        fitted::constants(self.n_layer, self.n_embd, self.batch)
    }
}

/// Inputs of `plan`. Which fields are required depends on the rule.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanInputs {
    pub base: Option<TunedConfig>,
    #[serde(rename = "T1")]
    pub t1: Option<f64>,
    pub consts0: Option<ModelConstants>,
    pub consts1: Option<ModelConstants>,
    pub shape0: Option<ModelShape>,
    pub shape1: Option<ModelShape>,
    /// Batch-independent ρ for the token-budget rule.
    pub rho_const: Option<f64>,
    /// Cumulative token totals for the stages rule.
    pub budgets: Option<Vec<f64>>,
    #[serde(rename = "D0")]
    pub d0: Option<f64>,
    #[serde(rename = "D1")]
    pub d1: Option<f64>,
    /// Enables `regime_at_choice`.
    pub sigma_star: Option<f64>,
    #[serde(default)]
    pub rounding: Rounding,
}

fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::input(format!("missing input `{name}`")))
}

fn resolve_consts(c: Option<ModelConstants>, s: Option<ModelShape>, which: &str) -> Result<ModelConstants> {
    match (c, s) {
        (Some(_), Some(_)) => {
            Err(Error::input(format!("give either constants or a model shape for {which}, not both")))
        }
        (Some(c), None) => Ok(c),
        (None, Some(s)) => s.constants(),
        (None, None) => Err(Error::input(format!("missing constants or model shape for {which}"))),
    }
}

/// `plan`: evaluates one transfer rule. Output keys:
/// `{rule, inputs, BS1, B1, S1, beta1, alpha1, regime_at_choice}` plus
/// rule-specific extras.
pub fn plan(rule: PlanRule, inputs: &PlanInputs) -> Result<Value> {
    let base = need(inputs.base, "base")?;
    base.validate()?;
    let round_b = |b: f64| inputs.rounding.apply(b);
    let regime = |t: f64, b: f64, s: f64, c: &ModelConstants| -> Result<Value> {
        match inputs.sigma_star {
            None => Ok(Value::Null),
            Some(sig) => {
                let pc = ProblemConstants { l: c.l, mu: c.mu, rho: c.rho, sigma_star: sig, delta0: 1.0, c: 1.0 };
                Ok(json!(error_law(t, b.max(1.0), s, &pc, ErrorLawMode::Asymptotic)?.regime))
            }
        }
    };
    let out = match rule {
        PlanRule::ModelSize => {
            let c0 = resolve_consts(inputs.consts0, inputs.shape0, "model 0")?;
            let c1 = resolve_consts(inputs.consts1, inputs.shape1, "model 1")?;
            let t1 = need(inputs.t1, "T1")?;
            let tr = transfer_model_size(&base, &c0, &c1, base.t0, t1)?;
            let b1 = round_b(base.b0 * tr.bs_factor);
            json!({
                "BS1": tr.bs1, "B1": b1, "S1": base.s0, "beta1": tr.beta1, "alpha1": tr.alpha1,
                "bs_factor": tr.bs_factor, "beta_factor": tr.beta_factor,
                "constants0": c0, "constants1": c1,
                "regime_at_choice": regime(t1, b1, base.s0, &c1)?,
            })
        }
        PlanRule::TokenBudget => {
            let t1 = need(inputs.t1, "T1")?;
            let (tr, rho_desc) = match (inputs.rho_const, inputs.shape0) {
                (Some(_), Some(_)) => return Err(Error::input("give either rho_const or shape0, not both")),
                (Some(r), None) => {
                    (transfer_token_budget(&base, |_| Ok(r), t1, FixedPointOptions::default())?, json!(r))
                }
                (None, shape) => {
                    let model = fitted::rho_model();
                    let mut fixed = BTreeMap::new();
                    let s = shape.unwrap_or(ModelShape { n_layer: 12.0, n_embd: 768.0, batch: base.b0 });
                    fixed.insert("n_layer".to_string(), s.n_layer);
                    fixed.insert("n_embd".to_string(), s.n_embd);
                    let tr = transfer_token_budget(
                        &base,
                        |b| model.eval_along("batch", b, &fixed),
                        t1,
                        FixedPointOptions::default(),
                    )?;
                    (tr, json!({"model": model, "fixed": fixed}))
                }
            };
            let b1 = round_b(tr.b1);
            let c = inputs.consts0.map(|c| ModelConstants { rho: tr.rho1, ..c });
            json!({
                "BS1": tr.b1 * tr.s1, "B1": b1, "S1": tr.s1, "beta1": tr.beta1, "alpha1": tr.alpha1,
                "B1_unrounded": tr.b1, "rho0": tr.rho0, "rho1": tr.rho1, "rho": rho_desc,
                "fixed_point_iterations": tr.iterations,
                "regime_at_choice": match c { Some(c) => regime(t1, b1, tr.s1, &c)?, None => Value::Null },
            })
        }
        PlanRule::Stages => {
            let ca = resolve_consts(inputs.consts0, inputs.shape0, "model 0")?;
            let cb = match (inputs.consts1, inputs.shape1) {
                (None, None) => ca,
                (c, s) => resolve_consts(c, s, "model 1")?,
            };
            let budgets = inputs.budgets.clone().ok_or_else(|| Error::input("missing input `budgets`"))?;
            let plan = plan_stages(&base, &ca, &cb, &budgets)?;
            let last = plan.stages.last().expect("non-empty plan");
            let b1 = round_b(last.b);
            json!({
                "BS1": last.b * last.s, "B1": b1, "S1": last.s, "beta1": last.beta, "alpha1": last.alpha,
                "stages": plan.stages,
                "regime_at_choice": regime(*budgets.last().expect("non-empty"), b1, last.s, &cb)?,
            })
        }
        PlanRule::Sqrt => {
            let t1 = need(inputs.t1, "T1")?;
            let tr = sqrt_rule(&base, t1)?;
            let b1 = round_b(base.b0 * tr.bs_factor);
            let c = inputs.consts0.or(inputs.consts1);
            json!({
                "BS1": tr.bs1, "B1": b1, "S1": base.s0, "beta1": tr.beta1, "alpha1": tr.alpha1,
                "bs_factor": tr.bs_factor, "beta_factor": tr.beta_factor,
                "regime_at_choice": match c { Some(c) => regime(t1, b1, base.s0, &c)?, None => Value::Null },
            })
        }
        PlanRule::Nonconvex => {
            let c0 = resolve_consts(inputs.consts0, inputs.shape0, "model 0")?;
            let c1 = resolve_consts(inputs.consts1, inputs.shape1, "model 1")?;
            let bs1 = nonconvex_rule(&base, &c0, &c1, need(inputs.d0, "D0")?, need(inputs.d1, "D1")?)?;
            json!({
                "BS1": bs1, "B1": round_b(bs1 / base.s0), "S1": base.s0, "beta1": Value::Null, "alpha1": base.alpha0,
                "bs_factor": bs1 / base.bs0(),
                "regime_at_choice": Value::Null,
            })
        }
    };
    let mut obj = json!({ "rule": rule, "inputs": inputs });
    obj.as_object_mut().expect("object").extend(out.as_object().expect("object").clone());
    Ok(obj)
}

/// Column names and rows of a numeric CSV; empty cells are `None`.
pub type NumericTable = (Vec<String>, Vec<Vec<Option<f64>>>);

/// Reads a CSV into named numeric columns. Empty cells become `None`.
/// Errors carry the 1-based file line.
pub fn read_numeric_csv(path: &Path) -> Result<NumericTable> {
    let text = fs::read_to_string(path)?;
    parse_numeric_csv(&text)
}

pub fn parse_numeric_csv(text: &str) -> Result<NumericTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Parse { line: 1, msg: "missing header".into() });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row = rec
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                        line,
                        msg: format!("column `{}`: `{cell}` is not a number", headers[i]),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::input("CSV has no data rows"));
    }
    Ok((headers, rows))
}

fn column(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column `{name}` (have: {})", headers.join(",")) })
}

fn required(rows: &[Vec<Option<f64>>], cols: &[usize]) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            cols.iter()
                .map(|&c| r[c].ok_or_else(|| Error::Parse { line: i + 2, msg: "empty required cell".into() }))
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateKind {
    L,
    #[serde(rename = "mu")]
    Mu,
    #[serde(rename = "rho")]
    Rho,
    #[serde(rename = "variance")]
    Variance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub window: usize,
    pub loss_cap: f64,
    pub huber_delta: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        let mu = MuOptions::default();
        Self { window: DEFAULT_WINDOW, loss_cap: mu.loss_cap, huber_delta: mu.huber_delta }
    }
}

/// `estimate --kind K --in F`. Input schemas:
/// - `L`: `grad_diff_dual,x_diff_primal` (the curvature CSV written by `train`);
/// - `mu`: any CSV with `loss` and `g_dual` columns (e.g. `runlog.csv`); rows
///   with an empty loss are skipped;
/// - `rho`: `dual,euclidean` norms of g − G;
/// - `variance`: `scale,variance`.
pub fn estimate_csv(kind: EstimateKind, text: &str, opts: EstimateOptions) -> Result<Value> {
    let (headers, rows) = parse_numeric_csv(text)?;
    Ok(match kind {
        EstimateKind::L => {
            let cols = [column(&headers, "grad_diff_dual")?, column(&headers, "x_diff_primal")?];
            let pairs: Vec<CurvaturePair> = required(&rows, &cols)?
                .into_iter()
                .map(|v| CurvaturePair { grad_diff_dual: v[0], x_diff_primal: v[1] })
                .collect();
            let e = estimate_l(&pairs, opts.window)?;
            json!({"estimator": "L", "window": opts.window, "value": e.value, "n_points": pairs.len(), "n_used": e.n_used})
        }
        EstimateKind::Mu => {
            let (li, gi) = (column(&headers, "loss")?, column(&headers, "g_dual")?);
            let samples: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r[li]?, r[gi]?))).collect();
            let fit = estimate_mu(
                &samples,
                MuOptions { loss_cap: opts.loss_cap, huber_delta: opts.huber_delta, ..MuOptions::default() },
            )?;
            json!({
                "estimator": "mu", "window": Value::Null, "value": fit.slope, "intercept": fit.intercept,
                "n_points": fit.n_points, "loss_cap": opts.loss_cap, "huber_delta": opts.huber_delta,
            })
        }
        EstimateKind::Rho => {
            let cols = [column(&headers, "dual")?, column(&headers, "euclidean")?];
            let pairs: Vec<(f64, f64)> = required(&rows, &cols)?.into_iter().map(|v| (v[0], v[1])).collect();
            let e = estimate_rho_from_norms(&pairs, opts.window)?;
            json!({"estimator": "rho", "window": opts.window, "value": e.value, "n_points": pairs.len(), "n_used": e.n_used})
        }
        EstimateKind::Variance => {
            let cols = [column(&headers, "scale")?, column(&headers, "variance")?];
            let obs: Vec<(Vec<f64>, f64)> = required(&rows, &cols)?.into_iter().map(|v| (vec![v[0]], v[1])).collect();
            if obs.iter().all(|(_, v)| *v == 0.0) {
                return Err(Error::Degenerate("all variances are zero".into()));
            }
            let shape = PowerLawShape {
                terms: vec![TermShape { name: "scale".into(), shift: Param::Free, exponent: Param::Free }],
            };
            let fit = fit_power_law(&obs, &shape, FitOptions::default())?;
            json!({"estimator": "variance", "window": Value::Null, "model": fit.model, "n_points": obs.len()})
        }
    })
}

/// `fit --shape F --in F`: the CSV header must be the shape's covariate
/// names (in any order) followed by or including a `value` column.
pub fn fit_csv(shape: &PowerLawShape, text: &str, opts: FitOptions) -> Result<Value> {
    let (headers, rows) = parse_numeric_csv(text)?;
    let mut cols = shape.terms.iter().map(|t| column(&headers, &t.name)).collect::<Result<Vec<_>>>()?;
    cols.push(column(&headers, "value")?);
    let obs: Vec<(Vec<f64>, f64)> = required(&rows, &cols)?
        .into_iter()
        .map(|mut v| {
            let y = v.pop().expect("value column");
            (v, y)
        })
        .collect();
    let fit = fit_power_law(&obs, shape, opts)?;
    Ok(json!({
        "estimator": "power_law",
        "window": Value::Null,
        "model": fit.model,
        "objective": fit.objective,
        "rms_log_residual": fit.rms_log_residual,
        "n_points": fit.n_points,
    }))
}

/// Evaluates a model (e.g. one returned by `fit`) at named covariates.
pub fn eval_model(model: &PowerLawModel, covariates: &BTreeMap<String, f64>) -> Result<f64> {
    model.eval_named(covariates)
}
