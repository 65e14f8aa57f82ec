//! Closed-form scaling calculators: theorem parameters, the three-term error
//! law, the critical batch scale and the hyperparameter transfer rules.
//!
//! Batch size and sequence length are carried as reals; rounding to hardware
//! friendly values is an explicit, separate step ([`Rounding`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{PowerLawModel, PowerLawTerm};
use crate::optimizer::{Stage, StagePlan};

/// Problem constants consumed by the theory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConstants {
    /// Smoothness.
    #[serde(rename = "L")]
    pub l: f64,
    /// KL constant.
    pub mu: f64,
    /// Dual-to-Euclidean norm equivalence.
    pub rho: f64,
    /// Noise scale; a minibatch of `B·S` tokens has variance σ★²/(BS).
    pub sigma_star: f64,
    /// Initial suboptimality f(x₀) − f★.
    pub delta0: f64,
    /// Free constant in β = c/K.
    #[serde(default = "one")]
    pub c: f64,
}

fn one() -> f64 {
    1.0
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("L", self.l), ("mu", self.mu), ("rho", self.rho), ("delta0", self.delta0), ("c", self.c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma_star.is_finite() && self.sigma_star >= 0.0) {
            return Err(Error::config(format!("sigma_star must be >= 0, got {}", self.sigma_star)));
        }
        Ok(())
    }

    fn model(&self) -> ModelConstants {
        ModelConstants { l: self.l, mu: self.mu, rho: self.rho }
    }
}

/// The model-size dependent subset (L, μ, ρ) used by transfer rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConstants {
    #[serde(rename = "L")]
    pub l: f64,
    pub mu: f64,
    pub rho: f64,
}

impl ModelConstants {
    pub fn new(l: f64, mu: f64, rho: f64) -> Self {
        Self { l, mu, rho }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("L", self.l), ("mu", self.mu), ("rho", self.rho)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// The combination μρ/L that every transfer rule raises to a power.
    fn ratio(&self) -> f64 {
        self.mu * self.rho / self.l
    }
}

/// A token budget together with the batch size and sequence length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "S")]
    pub s: f64,
}

impl BudgetPoint {
    pub fn new(t: f64, b: f64, s: f64) -> Result<Self> {
        let p = Self { t, b, s };
        if !(b >= 1.0 && s >= 1.0 && t.is_finite() && t >= b * s) {
            return Err(Error::input(format!("need T >= B·S >= 1, got T={t} B={b} S={s}")));
        }
        Ok(p)
    }

    /// Iteration count K = ⌊T/(BS)⌋.
    pub fn k(&self) -> u64 {
        (self.t / (self.b * self.s)).floor() as u64
    }
}

/// A tuned small-scale operating point that transfer rules start from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunedConfig {
    #[serde(rename = "B0")]
    pub b0: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    pub beta0: f64,
    pub alpha0: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
}

impl TunedConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("B0", self.b0), ("S0", self.s0), ("T0", self.t0), ("alpha0", self.alpha0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta0 > 0.0 && self.beta0 < 1.0) {
            return Err(Error::config(format!("beta0 must lie in (0, 1), got {}", self.beta0)));
        }
        if self.alpha0 > 1.0 {
            return Err(Error::config(format!("alpha0 must lie in (0, 1], got {}", self.alpha0)));
        }
        Ok(())
    }

    pub fn bs0(&self) -> f64 {
        self.b0 * self.s0
    }
}

/// Whether the numeric prefactors of the theory are kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLawMode {
    /// All numeric prefactors and e-powers set to 1; log factors dropped.
    #[default]
    Asymptotic,
    /// Constants of the full theorem with explicit c.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub beta: f64,
    pub eta: f64,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: u64,
    /// σ = σ★/√(BS) used in the formulas.
    pub sigma: f64,
}

/// Parameter prescription for target accuracy `eps` at effective batch scale
/// `bs`.
///
/// Exact mode evaluates
/// β = c/K, η = 2e^{3c/2}/(μc)·log(2Δ₀/ε), α = min{1, (εμ)²/((32ρσ)²e^{3c})} and
/// K = max[2c, max{½, 128Le^{3c}/(εμ²), 32ρσe^{3c/2}/(εμ),
/// 128Le^{6c}(32ρσ)²/(μ(εμ)³), (32ρσe^{3c/2})³/(εμ)³}·log(2Δ₀/ε)].
/// Asymptotic mode drops every numeric factor and e-power and keeps the log
/// only in η.
pub fn theorem_params(consts: &ProblemConstants, eps: f64, bs: f64, mode: ErrorLawMode) -> Result<TheoremParams> {
    consts.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::input(format!("target error must be positive, got {eps}")));
    }
    if !(bs >= 1.0 && bs.is_finite()) {
        return Err(Error::input(format!("B·S must be >= 1, got {bs}")));
    }
    let log_term = (2.0 * consts.delta0 / eps).ln();
    if !(log_term > 0.0) {
        return Err(Error::input(format!("target error {eps} must be below 2Δ₀ = {}", 2.0 * consts.delta0)));
    }
    let ProblemConstants { l, mu, rho, c, .. } = *consts;
    let sigma = consts.sigma_star / bs.sqrt();
    let em = eps * mu;
    let (e3, e6, e32, k32, k128, log_k) = match mode {
        ErrorLawMode::Exact => ((3.0 * c).exp(), (6.0 * c).exp(), (1.5 * c).exp(), 32.0, 128.0, log_term),
        ErrorLawMode::Asymptotic => (1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
    };
    let rs = k32 * rho * sigma;
    let eta = match mode {
        ErrorLawMode::Exact => 2.0 * e32 / (mu * c) * log_term,
        ErrorLawMode::Asymptotic => log_term / (mu * c),
    };
    let alpha = theorem_alpha(consts, eps, bs, mode);
    let mut inner = [
        k128 * l * e3 / (eps * mu * mu),
        rs * e32 / em,
        k128 * l * e6 * rs * rs / (mu * em.powi(3)),
        (rs * e32).powi(3) / em.powi(3),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    if mode == ErrorLawMode::Exact {
        inner = inner.max(0.5);
    }
    let k_real = (2.0 * c).max(inner * log_k);
    if !k_real.is_finite() || k_real > u64::MAX as f64 {
        return Err(Error::NonFinite("iteration count".into()));
    }
    let k = (k_real.ceil() as u64).max(1);
    Ok(TheoremParams { beta: c / k as f64, eta, alpha, k, sigma })
}

/// Momentum prescription α = min{1, (εμ)²/((32ρσ)²e^{3c})} on its own (all
/// numeric factors 1 in asymptotic mode). Unlike [`theorem_params`] it does not
/// need ε < 2Δ₀.
pub fn theorem_alpha(consts: &ProblemConstants, eps: f64, bs: f64, mode: ErrorLawMode) -> f64 {
    let (k32, e3) = match mode {
        ErrorLawMode::Exact => (32.0, (3.0 * consts.c).exp()),
        ErrorLawMode::Asymptotic => (1.0, 1.0),
    };
    let rs = k32 * consts.rho * consts.sigma_star / bs.sqrt();
    if rs == 0.0 {
        return 1.0;
    }
    let em = eps * consts.mu;
    (em * em / (rs * rs * e3)).min(1.0)
}

/// Result of the three-term error law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorLaw {
    pub eps: f64,
    /// `[iteration-starved term ∝ BS/T, plateau term ∝ T^{-1/3}, noise term ∝ (T²BS)^{-1/6}]`
    pub terms: [f64; 3],
    /// 1-based index into `terms` of the maximal term.
    pub dominant_term: u8,
    /// 1: noise dominated (small BS), 2: T^{-1/3} plateau, 3: iteration starved.
    pub regime: u8,
}

/// Relative tolerance under which two terms count as tied; ties go to the
/// lower regime label.
const TIE_RTOL: f64 = 1e-12;

/// ε(T, BS) = max{ 128e^{3c}·L·BS/(μ²T), (128Le^{6c}(32ρσ★)²/(μ⁴T))^{1/3},
/// 32e^{3c/2}ρσ★/(μ(T²BS)^{1/6}) }, with all numeric factors set to 1 in
/// asymptotic mode.
pub fn error_law(t: f64, b: f64, s: f64, consts: &ProblemConstants, mode: ErrorLawMode) -> Result<ErrorLaw> {
    consts.validate()?;
    let bs = b * s;
    if !(t.is_finite() && b >= 1.0 && s >= 1.0 && t >= bs) {
        return Err(Error::input(format!("need T >= B·S >= 1, got T={t} B={b} S={s}")));
    }
    let ProblemConstants { l, mu, rho, sigma_star, c, .. } = *consts;
    let (e3, e6, e32, k32, k128) = match mode {
        ErrorLawMode::Exact => ((3.0 * c).exp(), (6.0 * c).exp(), (1.5 * c).exp(), 32.0, 128.0),
        ErrorLawMode::Asymptotic => (1.0, 1.0, 1.0, 1.0, 1.0),
    };
    let rs = k32 * rho * sigma_star;
    let terms = [
        k128 * e3 * l * bs / (mu * mu * t),
        (k128 * l * e6 * rs * rs / (mu.powi(4) * t)).cbrt(),
        e32 * rs / (mu * (t * t * bs).powf(1.0 / 6.0)),
    ];
    let eps = terms.iter().cloned().fold(0.0, f64::max);
    let ties = |v: f64| v >= eps * (1.0 - TIE_RTOL);
    // Regime label per dominant term: term 3 → 1, term 2 → 2, term 1 → 3.
    let (dominant_term, regime) = if ties(terms[2]) {
        (3, 1)
    } else if ties(terms[1]) {
        (2, 2)
    } else {
        (1, 3)
    };
    Ok(ErrorLaw { eps, terms, dominant_term, regime })
}

/// x^{2/3} as cbrt(x)², exact for perfect cubes (so factor 8 → 4).
fn two_thirds_power(x: f64) -> f64 {
    let c = x.cbrt();
    c * c
}

/// Critical effective batch scale BS★ = (Tμρσ★/L)^{2/3}.
pub fn critical_bs(t: f64, consts: &ProblemConstants) -> Result<f64> {
    let ModelConstants { l, mu, rho } = consts.model();
    for (name, v) in [("T", t), ("L", l), ("mu", mu), ("rho", rho), ("sigma_star", consts.sigma_star)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::input(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(two_thirds_power(t * mu * rho * consts.sigma_star / l))
}

/// Critical operating point: BS★, the matching K = T/BS★ and β★ = c/K.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub bs: f64,
    pub k: f64,
    pub beta: f64,
}

pub fn critical_point(t: f64, consts: &ProblemConstants) -> Result<CriticalPoint> {
    let bs = critical_bs(t, consts)?;
    let k = t / bs;
    Ok(CriticalPoint { bs, k, beta: (consts.c / k).min(1.0) })
}

/// Rounding applied to a real-valued batch size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    None,
    /// Nearest power of two in log scale.
    PowerOfTwo,
    /// Nearest positive multiple of 32.
    MultipleOf32,
}

impl Rounding {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Rounding::None => x,
            Rounding::PowerOfTwo => 2f64.powf(x.log2().round()),
            Rounding::MultipleOf32 => ((x / 32.0).round() * 32.0).max(32.0),
        }
    }
}

/// Output of a transfer rule. Factors are relative to the tuned base.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub bs_factor: f64,
    pub beta_factor: f64,
    #[serde(rename = "BS1")]
    pub bs1: f64,
    pub beta1: f64,
    pub alpha1: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::input(format!("{name} must be positive, got {v}")))
    }
}

/// Model-size transfer:
/// BS₁ = B₀S₀·((T₁/T₀)(μ₁/μ₀)(ρ₁/ρ₀)/(L₁/L₀))^{2/3},
/// β₁ = β₀·(√(T₀/T₁)(μ₁/μ₀)(ρ₁/ρ₀)/(L₁/L₀))^{2/3}, α₁ = α₀.
pub fn transfer_model_size(
    base: &TunedConfig,
    c0: &ModelConstants,
    c1: &ModelConstants,
    t0: f64,
    t1: f64,
) -> Result<Transfer> {
    base.validate()?;
    c0.validate()?;
    c1.validate()?;
    positive("T0", t0)?;
    positive("T1", t1)?;
    let r = c1.ratio() / c0.ratio();
    let bs_factor = two_thirds_power(t1 / t0 * r);
    // (√(T₀/T₁)·r)^{2/3} = ((T₀/T₁)·r²)^{1/3}
    let beta_factor = (t0 / t1 * r * r).cbrt();
    Ok(Transfer {
        bs_factor,
        beta_factor,
        bs1: base.bs0() * bs_factor,
        beta1: base.beta0 * beta_factor,
        alpha1: base.alpha0,
    })
}

/// Damped fixed-point settings for [`transfer_token_budget`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub rtol: f64,
    pub max_iters: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { damping: 0.5, rtol: 1e-6, max_iters: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenBudgetTransfer {
    #[serde(rename = "B1")]
    pub b1: f64,
    #[serde(rename = "S1")]
    pub s1: f64,
    pub beta1: f64,
    pub alpha1: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub iterations: usize,
}

/// Token-budget transfer with a batch-dependent ρ and fixed S. Solves
/// B₁ = B₀·((T₁/T₀)·ρ(B₁)/ρ(B₀))^{2/3} by damped iteration and sets
/// β₁ = β₀·(√(T₀/T₁)·ρ₁/ρ₀)^{2/3}.
pub fn transfer_token_budget<F>(
    base: &TunedConfig,
    rho_of_b: F,
    t1: f64,
    opts: FixedPointOptions,
) -> Result<TokenBudgetTransfer>
where
    F: Fn(f64) -> Result<f64>,
{
    base.validate()?;
    positive("T1", t1)?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::config("damping must lie in (0, 1]"));
    }
    let rho = |b: f64| -> Result<f64> {
        let r = rho_of_b(b)?;
        if r.is_finite() && r > 0.0 {
            Ok(r)
        } else {
            Err(Error::Degenerate(format!("rho({b}) = {r} is not positive")))
        }
    };
    let rho0 = rho(base.b0)?;
    let ratio_t = t1 / base.t0;
    let mut b = base.b0 * two_thirds_power(ratio_t);
    for it in 1..=opts.max_iters {
        let target = base.b0 * two_thirds_power(ratio_t * rho(b)? / rho0);
        let next = (1.0 - opts.damping) * b + opts.damping * target;
        let done = (next - b).abs() <= opts.rtol * next.abs();
        b = next;
        if done {
            let rho1 = rho(b)?;
            return Ok(TokenBudgetTransfer {
                b1: b,
                s1: base.s0,
                beta1: base.beta0 * (rho1 * rho1 / (rho0 * rho0 * ratio_t)).cbrt(),
                alpha1: base.alpha0,
                rho0,
                rho1,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence(format!("token-budget fixed point did not settle within {} iterations", opts.max_iters)))
}

/// Restart schedule over cumulative token totals `budgets`. Stage `i` applies
/// the model-size transfer from (`consts_a`, T₀) to (`consts_b`, budgets[i]),
/// so the first stage with budgets[0] = T₀ only corrects for the constant
/// ratios and later stages use the full budget available by their end.
/// Sequence length stays at S₀; the factor goes into B.
pub fn plan_stages(
    base: &TunedConfig,
    consts_a: &ModelConstants,
    consts_b: &ModelConstants,
    budgets: &[f64],
) -> Result<StagePlan> {
    if budgets.is_empty() {
        return Err(Error::input("at least one budget is required"));
    }
    let mut prev = 0.0;
    let mut stages = Vec::with_capacity(budgets.len());
    for (i, &cum) in budgets.iter().enumerate() {
        if !(cum.is_finite() && cum > prev) {
            return Err(Error::input("budgets must be positive and strictly increasing"));
        }
        let tr = transfer_model_size(base, consts_a, consts_b, base.t0, cum)?;
        stages.push(Stage {
            tokens: cum - prev,
            b: base.b0 * tr.bs_factor,
            s: base.s0,
            beta: tr.beta1,
            alpha: tr.alpha1,
            note: format!("stage {i}: cumulative budget {cum:e}, BS x{:.6}, beta x{:.6}", tr.bs_factor, tr.beta_factor),
        });
        prev = cum;
    }
    StagePlan::new(stages)
}

/// Square-root baseline: BS₁ = B₀S₀√(T₁/T₀), β₁ = β₀√(T₀/T₁).
pub fn sqrt_rule(base: &TunedConfig, t1: f64) -> Result<Transfer> {
    base.validate()?;
    positive("T1", t1)?;
    let f = (t1 / base.t0).sqrt();
    Ok(Transfer { bs_factor: f, beta_factor: 1.0 / f, bs1: base.bs0() * f, beta1: base.beta0 / f, alpha1: base.alpha0 })
}

/// Non-convex transfer: B₁S₁ = B₀S₀·√((D₁/D₀)(ρ₁²/ρ₀²)(L₀/L₁)).
pub fn nonconvex_rule(base: &TunedConfig, c0: &ModelConstants, c1: &ModelConstants, d0: f64, d1: f64) -> Result<f64> {
    base.validate()?;
    c0.validate()?;
    c1.validate()?;
    positive("D0", d0)?;
    positive("D1", d1)?;
    let rr = c1.rho / c0.rho;
    Ok(base.bs0() * (d1 / d0 * rr * rr * c0.l / c1.l).sqrt())
}

/// Published shifted power laws for the constants in terms of model shape.
pub mod fitted {
    use super::*;

    pub fn mu_model() -> PowerLawModel {
        PowerLawModel { coefficient: 5.2, terms: vec![PowerLawTerm::new("n_layer", 1.7, -0.2)] }
    }

    pub fn l_model() -> PowerLawModel {
        PowerLawModel {
            coefficient: 0.4,
            terms: vec![PowerLawTerm::new("n_layer", 0.7, 0.2), PowerLawTerm::new("n_embd", 126.0, 0.35)],
        }
    }

    pub fn rho_model() -> PowerLawModel {
        PowerLawModel {
            coefficient: 4.1,
            terms: vec![
                PowerLawTerm::new("n_layer", -2.7, 0.25),
                PowerLawTerm::new("n_embd", -250.8, 0.3),
                PowerLawTerm::new("batch", -9.4, 0.1),
            ],
        }
    }

    pub fn mu(n_layer: f64) -> Result<f64> {
        mu_model().eval(&[n_layer])
    }

    #[allow(non_snake_case)]
    pub fn L(n_layer: f64, n_embd: f64) -> Result<f64> {
        l_model().eval(&[n_layer, n_embd])
    }

    pub fn rho(n_layer: f64, n_embd: f64, batch: f64) -> Result<f64> {
        rho_model().eval(&[n_layer, n_embd, batch])
    }

    /// (L, μ, ρ) at a model shape and batch size.
    pub fn constants(n_layer: f64, n_embd: f64, batch: f64) -> Result<ModelConstants> {
        Ok(ModelConstants { l: L(n_layer, n_embd)?, mu: mu(n_layer)?, rho: rho(n_layer, n_embd, batch)? })
    }
}
