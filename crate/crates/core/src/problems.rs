//! Synthetic stochastic objectives.
//!
//! Two problem families are provided. `LayeredQuadratic` has analytic
//! constants and drives the regime and invariant experiments; logistic
//! regression has none and exercises the estimation pipeline the way it would
//! be used on a real model. In both, the stochastic gradient is the exact
//! gradient plus isotropic Gaussian noise whose total squared-norm variance is
//! σ★²/(B·S), so batch size and sequence length enter only through the noise.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{block_dual, block_primal, exact_polar, Geometry, LayeredPoint, NormKind, Shape};
use crate::scaling::ProblemConstants;

/// Additive gradient noise. Variance in squared Euclidean norm is
/// `sigma_star² / ((B + batch_shift)(S + seq_shift))`; both shifts default to
/// zero, which is the pure 1/(BS) law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma_star: f64,
    #[serde(default)]
    pub batch_shift: f64,
    #[serde(default)]
    pub seq_shift: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { sigma_star: 0.0, batch_shift: 0.0, seq_shift: 0.0 }
    }

    pub fn new(sigma_star: f64) -> Self {
        Self { sigma_star, batch_shift: 0.0, seq_shift: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_star.is_finite() && self.sigma_star >= 0.0) {
            return Err(Error::config(format!("sigma_star must be finite and >= 0, got {}", self.sigma_star)));
        }
        if !self.batch_shift.is_finite() || !self.seq_shift.is_finite() {
            return Err(Error::config("noise shifts must be finite"));
        }
        Ok(())
    }

    /// Total variance σ² of one minibatch gradient.
    pub fn variance(&self, batch: Batch) -> Result<f64> {
        let denom = (batch.b + self.batch_shift) * (batch.s + self.seq_shift);
        if !(denom > 0.0) {
            return Err(Error::input(format!(
                "shifted batch scale ({} + {})·({} + {}) is not positive",
                batch.b, self.batch_shift, batch.s, self.seq_shift
            )));
        }
        Ok(self.sigma_star * self.sigma_star / denom)
    }
}

/// Batch size B and sequence length S of one gradient sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub b: f64,
    pub s: f64,
}

impl Batch {
    pub fn new(b: f64, s: f64) -> Self {
        Self { b, s }
    }

    /// The effective scale `B·S`.
    pub fn scale(&self) -> f64 {
        self.b * self.s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 1.0 && self.s >= 1.0 && self.b.is_finite() && self.s.is_finite()) {
            return Err(Error::config(format!(
                "batch size and sequence length must be >= 1, got B={} S={}",
                self.b, self.s
            )));
        }
        Ok(())
    }
}

impl Default for Batch {
    fn default() -> Self {
        Self { b: 1.0, s: 1.0 }
    }
}

/// A stochastic first-order oracle over a layered parameter space.
pub trait StochasticObjective: Sync {
    fn geometry(&self) -> &Geometry;

    fn initial_point(&self) -> LayeredPoint;

    /// Exact objective value.
    fn loss(&self, x: &LayeredPoint) -> Result<f64>;

    /// Exact gradient.
    fn gradient(&self, x: &LayeredPoint) -> Result<LayeredPoint>;

    fn noise(&self) -> &NoiseModel;

    /// One unbiased minibatch gradient at `x`. All randomness comes from `rng`.
    fn gradient_sample(&self, x: &LayeredPoint, batch: Batch, rng: &mut ChaCha8Rng) -> Result<LayeredPoint> {
        let mut g = self.gradient(x)?;
        let var = self.noise().variance(batch)?;
        if var > 0.0 {
            let sd = (var / self.geometry().dim() as f64).sqrt();
            for b in &mut g.blocks {
                for v in &mut b.values {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += sd * z;
                }
            }
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    /// ±1
    pub label: f64,
}

/// Serializable problem description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `f(x) = Σ_ℓ (λ_ℓ/2)‖x_ℓ − θ_ℓ‖₂²`.
    LayeredQuadratic {
        geometry: Geometry,
        curvatures: Vec<f64>,
        /// Explicit per-block targets. When absent, targets are drawn from
        /// `target_seed` with block primal norm `target_fraction · η_ℓ`.
        #[serde(default)]
        targets: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        target_seed: u64,
        #[serde(default = "default_target_fraction")]
        target_fraction: f64,
        #[serde(default)]
        initial: Option<LayeredPoint>,
        noise: NoiseModel,
    },
    /// Mean logistic loss `(1/n) Σ log(1 + exp(−y_i⟨w, a_i⟩))` with `w` the
    /// flattened parameter vector.
    LogisticRegression {
        geometry: Geometry,
        #[serde(default)]
        samples: Option<Vec<LabeledSample>>,
        #[serde(default = "default_n_samples")]
        n_samples: usize,
        #[serde(default)]
        design_seed: u64,
        /// Probability of flipping each generated label.
        #[serde(default)]
        label_noise: f64,
        #[serde(default)]
        initial: Option<LayeredPoint>,
        noise: NoiseModel,
    },
}

fn default_target_fraction() -> f64 {
    0.5
}

fn default_n_samples() -> usize {
    256
}

impl ProblemSpec {
    /// Single-block quadratic with a random target of Euclidean norm
    /// `target_fraction · radius`.
    pub fn quadratic(geometry: Geometry, curvatures: Vec<f64>, noise: NoiseModel) -> Self {
        ProblemSpec::LayeredQuadratic {
            geometry,
            curvatures,
            targets: None,
            target_seed: 0,
            target_fraction: default_target_fraction(),
            initial: None,
            noise,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        match self {
            ProblemSpec::LayeredQuadratic { geometry, .. } | ProblemSpec::LogisticRegression { geometry, .. } => {
                geometry
            }
        }
    }

    pub fn noise(&self) -> &NoiseModel {
        match self {
            ProblemSpec::LayeredQuadratic { noise, .. } | ProblemSpec::LogisticRegression { noise, .. } => noise,
        }
    }

    /// Returns a copy with a different noise scale.
    pub fn with_sigma_star(&self, sigma_star: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ProblemSpec::LayeredQuadratic { noise, .. } | ProblemSpec::LogisticRegression { noise, .. } => {
                noise.sigma_star = sigma_star
            }
        }
        out
    }

    /// Validates the spec and materializes targets / datasets.
    pub fn build(&self) -> Result<Problem> {
        self.geometry().validate()?;
        self.noise().validate()?;
        match self {
            ProblemSpec::LayeredQuadratic {
                geometry,
                curvatures,
                targets,
                target_seed,
                target_fraction,
                initial,
                ..
            } => {
                if curvatures.len() != geometry.len() {
                    return Err(Error::config(format!(
                        "{} curvatures for {} blocks",
                        curvatures.len(),
                        geometry.len()
                    )));
                }
                if let Some(bad) = curvatures.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
                    return Err(Error::config(format!("curvatures must be positive, got {bad}")));
                }
                let targets = match targets {
                    Some(t) => {
                        let p = LayeredPoint::from_pairs(
                            geometry.blocks.iter().map(|g| g.name.clone()).zip(t.iter().cloned()),
                        );
                        if t.len() != geometry.len() {
                            return Err(Error::config("one target per block is required"));
                        }
                        geometry.check(&p)?;
                        p
                    }
                    None => random_targets(geometry, *target_seed, *target_fraction)?,
                };
                let x0 = initial_or_zero(geometry, initial)?;
                Ok(Problem {
                    spec: self.clone(),
                    geometry: geometry.clone(),
                    noise: self.noise().clone(),
                    x0,
                    kind: Kind::Quadratic { curvatures: curvatures.clone(), targets },
                })
            }
            ProblemSpec::LogisticRegression {
                geometry, samples, n_samples, design_seed, label_noise, initial, ..
            } => {
                let d = geometry.dim();
                let data = match samples {
                    Some(s) => {
                        if s.is_empty() {
                            return Err(Error::config("logistic regression needs at least one sample"));
                        }
                        for (i, smp) in s.iter().enumerate() {
                            if smp.features.len() != d {
                                return Err(Error::config(format!(
                                    "sample {i} has {} features, parameter dimension is {d}",
                                    smp.features.len()
                                )));
                            }
                            if smp.label != 1.0 && smp.label != -1.0 {
                                return Err(Error::config(format!("sample {i}: label must be ±1")));
                            }
                        }
                        s.clone()
                    }
                    None => {
                        if *n_samples == 0 {
                            return Err(Error::config("n_samples must be positive"));
                        }
                        if !(0.0..=0.5).contains(label_noise) {
                            return Err(Error::config("label_noise must lie in [0, 0.5]"));
                        }
                        synthetic_dataset(d, *n_samples, *design_seed, *label_noise)
                    }
                };
                let x0 = initial_or_zero(geometry, initial)?;
                let n = data.len();
                let features = DMatrix::from_fn(n, d, |i, j| data[i].features[j]);
                let labels = data.iter().map(|s| s.label).collect();
                Ok(Problem {
                    spec: self.clone(),
                    geometry: geometry.clone(),
                    noise: self.noise().clone(),
                    x0,
                    kind: Kind::Logistic { features, labels },
                })
            }
        }
    }
}

fn initial_or_zero(geometry: &Geometry, initial: &Option<LayeredPoint>) -> Result<LayeredPoint> {
    match initial {
        Some(x) => {
            geometry.check(x)?;
            Ok(x.clone())
        }
        None => Ok(LayeredPoint::zeros(geometry)),
    }
}

fn random_targets(geometry: &Geometry, seed: u64, fraction: f64) -> Result<LayeredPoint> {
    if !(fraction.is_finite() && fraction >= 0.0) {
        return Err(Error::config("target_fraction must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = LayeredPoint::zeros(geometry);
    for (b, g) in t.blocks.iter_mut().zip(&geometry.blocks) {
        for v in &mut b.values {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm = block_primal(g.kind, g.shape, &b.values);
        if norm > 0.0 {
            let s = fraction * g.radius / norm;
            b.values.iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(t)
}

fn synthetic_dataset(d: usize, n: usize, seed: u64, label_noise: f64) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feat = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
    let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    (0..n)
        .map(|_| {
            let a: Vec<f64> = (0..d).map(|_| feat.sample(&mut rng)).collect();
            let margin: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
            let mut label = if margin >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < label_noise {
                label = -label;
            }
            LabeledSample { features: a, label }
        })
        .collect()
}

#[derive(Clone, Debug)]
enum Kind {
    Quadratic { curvatures: Vec<f64>, targets: LayeredPoint },
    Logistic { features: DMatrix<f64>, labels: Vec<f64> },
}

/// A validated, ready-to-evaluate problem.
#[derive(Clone, Debug)]
pub struct Problem {
    spec: ProblemSpec,
    geometry: Geometry,
    noise: NoiseModel,
    x0: LayeredPoint,
    kind: Kind,
}

impl Problem {
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    /// Quadratic targets θ, if this is a quadratic.
    pub fn targets(&self) -> Option<&LayeredPoint> {
        match &self.kind {
            Kind::Quadratic { targets, .. } => Some(targets),
            Kind::Logistic { .. } => None,
        }
    }

    fn flat(x: &LayeredPoint) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(x.values().count(), x.values())
    }
}

impl StochasticObjective for Problem {
    fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn initial_point(&self) -> LayeredPoint {
        self.x0.clone()
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn loss(&self, x: &LayeredPoint) -> Result<f64> {
        self.geometry.check(x)?;
        match &self.kind {
            Kind::Quadratic { curvatures, targets } => Ok(x
                .blocks
                .iter()
                .zip(&targets.blocks)
                .zip(curvatures)
                .map(|((b, t), l)| {
                    0.5 * l * b.values.iter().zip(&t.values).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()
                })
                .sum()),
            Kind::Logistic { features, labels } => {
                let margins = features * Self::flat(x);
                let n = labels.len() as f64;
                Ok(margins.iter().zip(labels).map(|(m, y)| softplus(-y * m)).sum::<f64>() / n)
            }
        }
    }

    fn gradient(&self, x: &LayeredPoint) -> Result<LayeredPoint> {
        self.geometry.check(x)?;
        match &self.kind {
            Kind::Quadratic { curvatures, targets } => {
                let mut g = x.sub(targets);
                for (b, l) in g.blocks.iter_mut().zip(curvatures) {
                    b.values.iter_mut().for_each(|v| *v *= l);
                }
                Ok(g)
            }
            Kind::Logistic { features, labels } => {
                let margins = features * Self::flat(x);
                let n = labels.len() as f64;
                // d/dm log(1+exp(−ym)) = −y·σ(−ym)
                let coef = nalgebra::DVector::from_iterator(
                    labels.len(),
                    margins.iter().zip(labels).map(|(m, y)| -y * sigmoid(-y * m) / n),
                );
                let flat = features.tr_mul(&coef);
                let mut g = x.zeros_like();
                let mut it = flat.iter();
                for b in &mut g.blocks {
                    for v in &mut b.values {
                        *v = *it.next().expect("dimension checked");
                    }
                }
                Ok(g)
            }
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Norm frame in which analytic constants are stated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormFrame {
    /// Every block measured in ℓ2, i.e. the flattened Euclidean geometry.
    Flat,
    /// The composite max-of-blocks primal / sum-of-duals geometry.
    #[default]
    Composite,
}

/// Analytic constants of a quadratic together with the region on which they
/// are certified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticConstants {
    pub constants: ProblemConstants,
    pub frame: NormFrame,
    /// Largest objective value on the product of radius balls; μ is certified
    /// on `{x in the balls : f(x) ≤ f_max}`.
    pub f_max: f64,
    pub validity: String,
}

/// Closed-form (L, μ, ρ, σ★, Δ₀) for a quadratic over the ball with per-block
/// radii `radii`.
///
/// μ comes from ‖∇f‖₂ ≥ √(2 λ_min f), which gives ‖∇f‖ ≥ √(2λ_min/f_max)·f
/// on the ball; the composite dual norm dominates ℓ2, so the same μ holds in
/// both frames. In the composite frame L = Σ λ_ℓ κ_ℓ and ρ = √(Σ ρ_ℓ²), with
/// κ_ℓ and ρ_ℓ the block norm-equivalence factors (1 for ℓ2, n for ℓ∞→ℓ1, min(r,c)
/// for operator→nuclear; √n and √min(r,c) for ρ).
pub fn known_constants(problem: &Problem, radii: &[f64], frame: NormFrame) -> Result<AnalyticConstants> {
    let Kind::Quadratic { curvatures, targets } = &problem.kind else {
        return Err(Error::Unsupported(
            "analytic constants exist only for layered quadratics; estimate them from run logs instead".into(),
        ));
    };
    let geom = &problem.geometry;
    if radii.len() != geom.len() || radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::config("one positive radius per block is required"));
    }
    let mut f_max = 0.0;
    let mut kappa_l = 0.0;
    let mut rho_sq = 0.0;
    for ((g, t), (&lam, &eta)) in geom.blocks.iter().zip(&targets.blocks).zip(curvatures.iter().zip(radii)) {
        let tn = block_primal(g.kind, g.shape, &t.values);
        if tn > eta * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "target of block `{}` lies outside its ball (‖θ‖ = {tn}, η = {eta}); f★ is not analytic",
                g.name
            )));
        }
        let sq = match (g.kind, g.shape) {
            (NormKind::Sign, _) => t.values.iter().map(|v| (eta + v.abs()).powi(2)).sum::<f64>(),
            (NormKind::Spectral, Shape::Matrix(r, c)) => {
                let fro2: f64 = t.values.iter().map(|v| v * v).sum();
                let nuc = block_dual(g.kind, g.shape, &t.values);
                fro2 + 2.0 * eta * nuc + eta * eta * r.min(c) as f64
            }
            _ => (eta + tn).powi(2),
        };
        f_max += 0.5 * lam * sq;
        let k = match (g.kind, g.shape) {
            (NormKind::Sign, s) => s.len() as f64,
            (NormKind::Spectral, Shape::Matrix(r, c)) => r.min(c) as f64,
            _ => 1.0,
        };
        kappa_l += lam * k;
        rho_sq += k;
    }
    let lam_min = curvatures.iter().cloned().fold(f64::INFINITY, f64::min);
    let lam_max = curvatures.iter().cloned().fold(0.0, f64::max);
    let (l, rho) = match frame {
        NormFrame::Flat => (lam_max, 1.0),
        NormFrame::Composite => (kappa_l, rho_sq.sqrt()),
    };
    let mu = (2.0 * lam_min / f_max).sqrt();
    let delta0 = problem.loss(&problem.x0)?;
    Ok(AnalyticConstants {
        constants: ProblemConstants { l, mu, rho, sigma_star: problem.noise.sigma_star, delta0, c: 1.0 },
        frame,
        f_max,
        validity: format!("mu certified on the product of radius balls, where f <= {f_max:.6e}; f* = 0"),
    })
}

/// Polar-factor extremizer used by tests to confirm the spectral `f_max`.
#[doc(hidden)]
pub fn spectral_block_extremizer(target: &[f64], rows: usize, cols: usize, eta: f64) -> Result<Vec<f64>> {
    let t = DMatrix::from_row_slice(rows, cols, target);
    let p = exact_polar(&t)?;
    Ok(p.transpose().iter().map(|v| -eta * v).collect())
}
